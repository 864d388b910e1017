//! JSON run configuration. Every section is optional; unknown keys are
//! rejected so typos fail loudly.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::CliError;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub labels: Option<LabelsSection>,
    #[serde(default)]
    pub ensemble: Option<EnsembleSection>,
    #[serde(default)]
    pub mc: Option<McSection>,
    #[serde(default)]
    pub grids: Option<GridsSection>,
    #[serde(default)]
    pub diagnose: Option<DiagnoseSection>,
    #[serde(default)]
    pub io: Option<IoSection>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelsSection {
    pub names: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub k: Option<usize>,
    pub n: Option<usize>,
    /// Same syntax as `--advantage`; a bare number is also accepted.
    pub advantage: Option<AdvantageValue>,
    pub rho: Option<f64>,
    pub tie_policy: Option<String>,
    pub rule: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum AdvantageValue {
    Number(f64),
    Spec(String),
}

impl AdvantageValue {
    pub fn as_spec(&self) -> String {
        match self {
            AdvantageValue::Number(x) => x.to_string(),
            AdvantageValue::Spec(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    pub trials: Option<u64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridsSection {
    pub n_grid: Option<Vec<usize>>,
    pub rho_grid: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseSection {
    pub tolerance: Option<f64>,
    pub alpha: Option<f64>,
    pub bootstrap: Option<usize>,
    pub permutations: Option<usize>,
    pub margin: Option<f64>,
    pub min_records: Option<usize>,
    pub models: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoSection {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::validation(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::validation(format!("{}: {}", path.display(), e.message)))
    }

    pub fn ensemble(&self) -> EnsembleSection {
        self.ensemble.clone().unwrap_or_default()
    }

    pub fn mc(&self) -> McSection {
        self.mc.clone().unwrap_or_default()
    }

    pub fn grids(&self) -> GridsSection {
        self.grids.clone().unwrap_or_default()
    }

    pub fn diagnose(&self) -> DiagnoseSection {
        self.diagnose.clone().unwrap_or_default()
    }

    pub fn io(&self) -> IoSection {
        self.io.clone().unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_document() {
        let cfg = RunConfig::parse(
            r#"{
                "labels": {"names": ["a", "b", "c"]},
                "ensemble": {"k": 3, "n": 11, "advantage": 0.1, "rho": 0.5, "tie_policy": "uniform-random", "rule": "plurality"},
                "mc": {"trials": 1000, "seed": 4},
                "grids": {"n_grid": [1, 3], "rho_grid": [0.0, 1.0]},
                "diagnose": {"tolerance": 0.05, "alpha": 0.01, "bootstrap": 100, "permutations": 200, "margin": 0.01},
                "io": {"input": "in.csv", "output": "out.csv"}
            }"#,
        )
        .unwrap();
        assert_eq!(cfg.ensemble().advantage.unwrap().as_spec(), "0.1");
        assert_eq!(cfg.grids().n_grid, Some(vec![1, 3]));
    }

    #[test]
    fn rejects_unknown_keys() {
        let err = RunConfig::parse(r#"{"mc": {"trails": 10}}"#).unwrap_err();
        assert!(err.message.contains("trails"), "{}", err.message);
        assert!(RunConfig::parse(r#"{"extra": {}}"#).is_err());
    }
}
