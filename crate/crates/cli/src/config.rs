use std::fmt;
use std::fs;
use std::path::Path;

use gsvgd::harness::{Experiment, ExperimentConfig};

#[derive(Debug)]
pub enum ConfigError {
    Read(String, std::io::Error),
    /// Syntax or schema error; the message carries line and column.
    Parse(String, String),
    UnknownExperiment(String),
    Invalid(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Read(path, e) => write!(f, "cannot read {path}: {e}"),
            Self::Parse(path, msg) => write!(f, "{path}: {}", msg.trim_end()),
            Self::UnknownExperiment(name) => write!(f, "unknown experiment '{name}'"),
            Self::Invalid(msg) => write!(f, "invalid config: {msg}"),
        }
    }
}

impl std::error::Error for ConfigError {}

pub fn experiment_names() -> Vec<&'static str> {
    Experiment::ALL.iter().map(Experiment::name).collect()
}

pub fn parse(text: &str, origin: &str) -> Result<ExperimentConfig, ConfigError> {
    let table: toml::Table =
        toml::from_str(text).map_err(|e| ConfigError::Parse(origin.to_string(), e.to_string()))?;
    if let Some(toml::Value::String(name)) = table.get("experiment") {
        if !experiment_names().contains(&name.as_str()) {
            return Err(ConfigError::UnknownExperiment(name.clone()));
        }
    }
    let cfg: ExperimentConfig =
        toml::from_str(text).map_err(|e| ConfigError::Parse(origin.to_string(), e.to_string()))?;
    cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(cfg)
}

pub fn load(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let origin = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| ConfigError::Read(origin.clone(), e))?;
    parse(&text, &origin)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn syntax_errors_name_the_line() {
        let err = parse("experiment = \"sensor\"\ntrials = = 3\n", "x.toml").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, ConfigError::Parse(..)));
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn schema_errors_name_the_line() {
        let text = "experiment = \"sensor\"\nparticle_counts = [50]\nmethods = []\nbogus = 1\n";
        let msg = parse(text, "x.toml").unwrap_err().to_string();
        assert!(msg.contains("line 4"), "{msg}");
    }

    #[test]
    fn unknown_experiment_is_its_own_error() {
        let err = parse("experiment = \"warp-drive\"\n", "x.toml").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownExperiment(ref n) if n == "warp-drive"));
    }

    #[test]
    fn validation_runs_after_parsing() {
        let text = "experiment = \"sensor\"\ntrials = 0\nparticle_counts = [50]\n\n[[methods]]\nalgorithm = \"vanilla\"\n";
        assert!(matches!(parse(text, "x.toml"), Err(ConfigError::Invalid(_))));
    }
}
