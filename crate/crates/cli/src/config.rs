//! Run configuration: one TOML document, then `TOIREC_*` environment
//! variables, then `--section.key value` flags, each layer overriding the
//! previous one.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toirec_core::datastore::{LoadOptions, SplitKind};
use toirec_core::{EvalConfig, ModelConfig, TimeEncoderKind, TrainConfig};

pub const ENV_PREFIX: &str = "TOIREC_";

/// A configuration problem detected by the CLI itself (exit code 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid configuration: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Interaction log consumed by `prepare`.
    pub input: Option<PathBuf>,
    /// Prepared snapshot read by the other subcommands.
    pub snapshot: Option<PathBuf>,
    pub load: LoadOptions,
    pub min_count: usize,
    pub split: SplitKind,
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            input: None,
            snapshot: None,
            load: LoadOptions::amazon(),
            min_count: 5,
            split: SplitKind::Loo,
            split_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            users: 500,
            items: 40,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub gammas: Vec<f64>,
    pub etas: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let grid: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        Self {
            gammas: grid.clone(),
            etas: grid,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    /// Number of seeds per row; seed `i` sets init, training and eval seeds.
    pub seeds: u64,
    /// Encoder used by the time-aware rows.
    pub time_kind: TimeEncoderKind,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            seeds: 3,
            time_kind: TimeEncoderKind::Gaussian,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
    pub sweep: SweepConfig,
    pub ablate: AblateConfig,
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses an override value as a TOML literal, falling back to a string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Resolves a dotted key against the default document, matching segment
/// names case-insensitively. Keys of the model section may be given without
/// the `model.` prefix (`loss.eta`).
fn resolve_path(root: &toml::Table, key: &str) -> Vec<String> {
    let parts: Vec<&str> = key.split('.').collect();
    let canonical = |table: &toml::Table, part: &str| {
        table
            .keys()
            .find(|k| k.eq_ignore_ascii_case(part))
            .cloned()
            .unwrap_or_else(|| part.to_string())
    };
    let mut path = Vec::new();
    let mut table = Some(root);
    if !root.keys().any(|k| k.eq_ignore_ascii_case(parts[0])) {
        if let Some(toml::Value::Table(model)) = root.get("model") {
            if model.keys().any(|k| k.eq_ignore_ascii_case(parts[0])) {
                path.push("model".to_string());
                table = Some(model);
            }
        }
    }
    for part in parts {
        let name = table.map_or_else(|| part.to_string(), |t| canonical(t, part));
        table = table.and_then(|t| t.get(&name)).and_then(toml::Value::as_table);
        path.push(name);
    }
    path
}

fn set_path(root: &mut toml::Table, path: &[String], value: toml::Value) -> Result<(), ConfigError> {
    let (last, parents) = path.split_last().ok_or_else(|| ConfigError("empty override key".into()))?;
    let mut table = root;
    for p in parents {
        let entry = table
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError(format!("`{}` is not a section", path.join("."))))?;
    }
    table.insert(last.clone(), value);
    Ok(())
}

/// Builds the effective configuration.
///
/// `file` is the optional TOML document, `env` the process environment and
/// `flags` the `(dotted.key, value)` pairs from the command line.
pub fn resolve(
    file: Option<&Path>,
    env: impl IntoIterator<Item = (String, String)>,
    flags: &[(String, String)],
) -> Result<RunConfig, ConfigError> {
    let defaults = toml::Table::try_from(RunConfig::default()).expect("defaults serialize");
    let mut doc = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError(format!("cannot read `{}`: {e}", path.display())))?;
            text.parse::<toml::Table>()
                .map_err(|e| ConfigError(format!("`{}`: {e}", path.display())))?
        }
        None => toml::Table::new(),
    };
    let mut env_pairs: Vec<(String, String)> = env
        .into_iter()
        .filter_map(|(k, v)| {
            let rest = k.strip_prefix(ENV_PREFIX)?;
            // TOIREC_LOSS__ETA -> loss.eta
            Some((rest.to_ascii_lowercase().replace("__", "."), v))
        })
        .collect();
    env_pairs.sort();
    for (key, raw) in env_pairs.iter().chain(flags) {
        let path = resolve_path(&defaults, key);
        set_path(&mut doc, &path, parse_value(raw))?;
    }
    let cfg: RunConfig = doc
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError(e.message().to_string()))?;
    cfg.model.validate().map_err(|e| ConfigError(e.to_string()))?;
    cfg.train.validate().map_err(|e| ConfigError(e.to_string()))?;
    for grid in [&cfg.sweep.gammas, &cfg.sweep.etas] {
        if grid.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(ConfigError("sweep grid values must lie in [0, 1]".into()));
        }
    }
    Ok(cfg)
}

/// Splits `--a.b value` and `--a.b=value` pairs out of `args`; everything
/// else is returned for clap.
pub fn extract_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), ConfigError> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(body) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (key, inline) = match body.split_once('=') {
            Some((k, v)) => (k.to_string(), Some(v.to_string())),
            None => (body.to_string(), None),
        };
        if !key.contains('.') {
            rest.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it
                .next()
                .ok_or_else(|| ConfigError(format!("--{key} needs a value")))?,
        };
        overrides.push((key, value));
    }
    Ok((rest, overrides))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_round_trip() {
        let cfg = resolve(None, [], &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
        let again: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn precedence_is_file_env_flag() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[model.loss]\neta = 0.5\nlambda = 0.3\n[train]\nmax_epochs = 7\n").unwrap();
        let env = vec![
            ("TOIREC_LOSS__ETA".to_string(), "0.6".to_string()),
            ("TOIREC_TRAIN__MAX_EPOCHS".to_string(), "9".to_string()),
            ("TOIREC_DIFFUSION__T".to_string(), "40".to_string()),
            ("UNRELATED".to_string(), "x".to_string()),
        ];
        let cfg = resolve(Some(&path), env, &flags(&[("loss.eta", "0.7")])).unwrap();
        assert_eq!(cfg.model.loss.eta, 0.7);
        assert_eq!(cfg.model.loss.lambda, 0.3);
        assert_eq!(cfg.train.max_epochs, 9);
        assert_eq!(cfg.model.diffusion.steps, 40);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(resolve(None, [], &flags(&[("loss.etaa", "0.1")])).is_err());
        assert!(resolve(None, [], &flags(&[("nosuch.key", "1")])).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "[train]\nlearning_rat = 0.1\n").unwrap();
        assert!(resolve(Some(&path), [], &[]).is_err());
    }

    #[test]
    fn values_are_typed() {
        let cfg = resolve(
            None,
            [],
            &flags(&[
                ("time_encoder.kind", "rff"),
                ("diffusion.T", "50"),
                ("sweep.gammas", "[0.1, 0.2]"),
                ("data.split", "temporal811"),
            ]),
        )
        .unwrap();
        assert_eq!(cfg.model.time_encoder.kind, TimeEncoderKind::Rff);
        assert_eq!(cfg.model.diffusion.steps, 50);
        assert_eq!(cfg.sweep.gammas, vec![0.1, 0.2]);
        assert_eq!(cfg.data.split, SplitKind::Temporal811);
        assert!(resolve(None, [], &flags(&[("sweep.etas", "[1.5]")])).is_err());
    }

    #[test]
    fn override_extraction() {
        let args: Vec<String> = ["toirec", "train", "--loss.eta", "1.0", "--toi.gamma=0", "--parallel", "2"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let (rest, ov) = extract_overrides(args).unwrap();
        assert_eq!(rest, vec!["toirec", "train", "--parallel", "2"]);
        assert_eq!(ov, flags(&[("loss.eta", "1.0"), ("toi.gamma", "0")]));
        assert!(extract_overrides(vec!["--a.b".into()]).is_err());
    }
}
