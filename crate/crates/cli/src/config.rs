use std::path::Path;

use serde::{Deserialize, Serialize};
use supercd::extractor::ExtractorTrainParams;
use supercd::fsner::{BenchmarkConfig, WorldConfig};

use crate::error::CliError;

/// Everything the subcommands can be tuned with. Every section is optional
/// in the file; missing keys keep their library defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Ontology, corpus, extractor and retriever generation.
    pub world: WorldConfig,
    /// Fitting the learned concept extractor (`train-ce`).
    pub extractor_training: ExtractorTrainParams,
    /// Task construction, session settings and strategies (`run-experiment`).
    pub benchmark: BenchmarkConfig,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config { path: path.to_path_buf(), message: e.to_string() })
    }

    /// `path` when given, otherwise the defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<Config, CliError> {
        path.map_or_else(|| Ok(Config::default()), Config::load)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string_pretty(self).map_err(|e| CliError::Config { path: "<defaults>".into(), message: e.to_string() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let text = Config::default().to_toml().unwrap();
        let back: Config = toml::from_str(&text).unwrap();
        assert_eq!(back, Config::default());
        for section in ["[world.ontology]", "[world.corpus]", "[world.sir_train]", "[benchmark.session.common]"] {
            assert!(text.contains(section), "missing {section} in\n{text}");
        }
    }

    #[test]
    fn partial_files_keep_the_other_defaults() {
        let cfg: Config = toml::from_str("[benchmark.session]\nbudget = 20\n[world.corpus]\nn_sentences = 500\n").unwrap();
        assert_eq!(cfg.benchmark.session.budget, 20);
        assert_eq!(cfg.benchmark.session.shots, Config::default().benchmark.session.shots);
        assert_eq!(cfg.world.corpus.n_sentences, 500);
        assert_eq!(cfg.world.ontology, Config::default().world.ontology);
    }

    #[test]
    fn unknown_top_level_sections_are_rejected() {
        assert!(toml::from_str::<Config>("[sessions]\nbudget = 3\n").is_err());
    }
}
