use std::path::{Path, PathBuf};

use npde::bench::BenchConfig;
use npde::datagen::SolverConfig;
use npde::training::TrainConfig;
use npde::ModelSpec;
use serde::de::{self, DeserializeOwned};
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

fn default_n_traj() -> usize {
    32
}
fn default_f_range() -> (f64, f64) {
    (0.2, 0.5)
}

/// Solver settings plus how many trajectories to draw and the forcing range
/// they are drawn from.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DataSection {
    pub n_traj: usize,
    pub f_range: (f64, f64),
    #[serde(flatten)]
    pub solver: SolverConfig,
}

// serde's `flatten` drops the inner unknown-field check, so the two extra
// keys are split off by hand and the rest goes to `SolverConfig` as is.
impl<'de> Deserialize<'de> for DataSection {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let mut map = Map::<String, Value>::deserialize(d)?;
        fn take<T: DeserializeOwned, E: de::Error>(map: &mut Map<String, Value>, key: &str) -> Result<Option<T>, E> {
            map.remove(key).map(|v| serde_json::from_value(v).map_err(|e| E::custom(format!("{key}: {e}")))).transpose()
        }
        let n_traj = take(&mut map, "n_traj")?.unwrap_or_else(default_n_traj);
        let f_range = take(&mut map, "f_range")?.unwrap_or_else(default_f_range);
        let solver = serde_path_to_error::deserialize(Value::Object(map)).map_err(|e| {
            let path = e.path().to_string();
            de::Error::custom(if path == "." { e.into_inner().to_string() } else { format!("{path}: {}", e.into_inner()) })
        })?;
        Ok(DataSection { n_traj, f_range, solver })
    }
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection { n_traj: default_n_traj(), f_range: default_f_range(), solver: SolverConfig::default() }
    }
}

/// Output locations, relative to the config file's directory unless absolute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub analysis: PathBuf,
    pub bench: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            dataset: "dataset.npde".into(),
            checkpoint: "model.npdm".into(),
            metrics: "metrics.csv".into(),
            analysis: "analysis".into(),
            bench: "bench.csv".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub data: DataSection,
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub paths: PathsSection,
    #[serde(default)]
    pub bench: BenchConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("{path}: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let (lo, hi) = self.data.f_range;
        if !(lo.is_finite() && hi.is_finite()) || hi < lo {
            return Err(CliError::Config(format!("data.f_range must satisfy lo <= hi, got [{lo}, {hi}]")));
        }
        if self.data.n_traj == 0 {
            return Err(CliError::Config("data.n_traj must be at least 1".into()));
        }
        self.data.solver.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        Ok(())
    }
}

/// A parsed config and the directory its relative paths hang off.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub cfg: ExperimentConfig,
    pub base: PathBuf,
}

impl Loaded {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let cfg = ExperimentConfig::parse(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Loaded { cfg, base })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }
}

/// Writes `cfg` as pretty JSON to `<output>.config.json`, or to
/// `<output>/config.json` when the output is a directory.
pub fn write_resolved(cfg: &ExperimentConfig, output: &Path) -> Result<PathBuf, CliError> {
    let target = if output.is_dir() {
        output.join("config.json")
    } else {
        let mut name = output.as_os_str().to_owned();
        name.push(".config.json");
        PathBuf::from(name)
    };
    let mut json = serde_json::to_string_pretty(cfg).map_err(|e| CliError::Config(e.to_string()))?;
    json.push('\n');
    std::fs::write(&target, json).map_err(|e| CliError::Io(format!("{}: {e}", target.display())))?;
    Ok(target)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_every_default() {
        let cfg = ExperimentConfig::parse(r#"{"model": {"family": "fno"}}"#).unwrap();
        assert_eq!(cfg.data, DataSection::default());
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.paths, PathsSection::default());
    }

    #[test]
    fn unknown_keys_are_rejected_in_every_section() {
        for text in [
            r#"{"model": {"family": "fno"}, "extra": 1}"#,
            r#"{"model": {"family": "fno", "width": 3}}"#,
            r#"{"model": {"family": "fno"}, "data": {"nxx": 3}}"#,
            r#"{"model": {"family": "fno"}, "train": {"epoch": 3}}"#,
            r#"{"model": {"family": "fno"}, "paths": {"data": "x"}}"#,
        ] {
            assert!(matches!(ExperimentConfig::parse(text), Err(CliError::Config(_))), "{text}");
        }
    }

    #[test]
    fn errors_name_the_field() {
        let Err(CliError::Config(msg)) = ExperimentConfig::parse(r#"{"model": {"family": "fno", "layers": "four"}}"#)
        else {
            panic!("expected a config error")
        };
        assert!(msg.starts_with("model.layers"), "{msg}");
        let Err(CliError::Config(msg)) =
            ExperimentConfig::parse(r#"{"model": {"family": "fno"}, "data": {"f_range": [0.5, 0.2]}}"#)
        else {
            panic!("expected a config error")
        };
        assert!(msg.contains("data.f_range"), "{msg}");
        let Err(CliError::Config(msg)) = ExperimentConfig::parse(r#"{"model": {"family": "fno"}, "data": {"nx": "big"}}"#)
        else {
            panic!("expected a config error")
        };
        assert!(msg.starts_with("data") && msg.contains("nx"), "{msg}");
    }

    #[test]
    fn data_section_round_trips() {
        let cfg = ExperimentConfig::parse(r#"{"model": {"family": "fno"}, "data": {"nx": 32, "n_traj": 2}}"#).unwrap();
        assert_eq!((cfg.data.solver.nx, cfg.data.n_traj), (32, 2));
        let again = ExperimentConfig::parse(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(again, cfg);
    }
}
