//! Structured key-value configuration files (TOML). Unknown keys are errors
//! so a typo cannot silently fall back to a default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data_io::LongSchema;
use crate::error::{Error, Result};
use crate::model::{FitConfig, PriorConfig, SigmaStructure};
use crate::sim::{SimScenario, XDesign};

/// Top-level config file; every section is optional and defaults apply.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub fit: FitSection,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub data: Option<DataSection>,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub select: SelectSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    pub k1: usize,
    pub k2: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: Option<u64>,
}

impl Default for FitSection {
    fn default() -> Self {
        let d = FitConfig::default();
        Self {
            k1: d.k1,
            k2: d.k2,
            iterations: d.iterations,
            burn_in: d.burn_in,
            thin: d.thin,
            seed: None,
        }
    }
}

/// Input-table schema. `mode = "long"` expects explicit column lists;
/// `mode = "riboflavin"` expects subject/response/time columns and treats
/// every other column as a gene.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub mode: String,
    pub subject_col: String,
    pub y_col: Option<String>,
    pub time_col: Option<String>,
    pub x_cols: Vec<String>,
    pub z_cols: Vec<String>,
    /// Spline columns appended by the riboflavin design.
    pub n_spline: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            mode: "long".into(),
            subject_col: "subject".into(),
            y_col: Some("y".into()),
            time_col: None,
            x_cols: Vec::new(),
            z_cols: Vec::new(),
            n_spline: 3,
        }
    }
}

impl DataSection {
    pub fn long_schema(&self) -> Result<LongSchema> {
        if self.x_cols.is_empty() {
            return Err(Error::Config("data.x_cols must list at least one column".into()));
        }
        let z_cols = if self.z_cols.is_empty() { self.x_cols.clone() } else { self.z_cols.clone() };
        Ok(LongSchema {
            subject_col: self.subject_col.clone(),
            y_col: self.y_col.clone(),
            x_cols: self.x_cols.clone(),
            z_cols,
            time_col: self.time_col.clone(),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub p: usize,
    pub q: usize,
    pub n: usize,
    pub m: usize,
    pub sigma: String,
    pub x_design: String,
    pub replications: usize,
    pub test_subjects: usize,
    pub tau0_sq: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            p: 300,
            q: 14,
            n: 36,
            m: 12,
            sigma: "diagonal".into(),
            x_design: "independent".into(),
            replications: 10,
            test_subjects: 12,
            tau0_sq: 1.0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectSection {
    /// Sequential 2-means tolerance; derived from the draws when absent.
    pub tol_b: Option<f64>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("parsing config: {e}")))
    }

    /// Assembles the sampler configuration, with `seed_override` (the CLI
    /// flag) taking precedence over the file.
    pub fn fit_config(&self, seed_override: Option<u64>) -> Result<FitConfig> {
        let cfg = FitConfig {
            k1: self.fit.k1,
            k2: self.fit.k2,
            iterations: self.fit.iterations,
            burn_in: self.fit.burn_in,
            thin: self.fit.thin,
            seed: seed_override.or(self.fit.seed).unwrap_or(0),
            prior: self.prior,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Assembles a simulation scenario from the `[sim]` and `[fit]` sections.
    pub fn sim_scenario(&self, seed_override: Option<u64>) -> Result<SimScenario> {
        let fit = self.fit_config(seed_override)?;
        let scenario = SimScenario {
            p: self.sim.p,
            q: self.sim.q,
            n: self.sim.n,
            m: self.sim.m,
            sigma: SigmaStructure::parse(&self.sim.sigma)?,
            x_design: XDesign::parse(&self.sim.x_design)?,
            replications: self.sim.replications,
            test_subjects: self.sim.test_subjects,
            seed: fit.seed,
            tau0_sq: self.sim.tau0_sq,
            fit,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty_config() {
        let cfg = ConfigFile::parse("").unwrap();
        let fit = cfg.fit_config(None).unwrap();
        assert_eq!(fit.iterations, 15_000);
        assert_eq!(fit.burn_in, 5_000);
        assert_eq!(fit.prior.a0, 0.01);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ConfigFile::parse("[fit]\nk1 = 3\nbogus = 1\n").unwrap_err().to_string();
        assert!(err.contains("bogus") || err.contains("unknown"), "{err}");

        let err = ConfigFile::parse("[nonsense]\nx = 1\n").unwrap_err().to_string();
        assert!(err.contains("nonsense") || err.contains("unknown"), "{err}");
    }

    #[test]
    fn sections_merge_into_typed_configs() {
        let text = "\
[fit]
k1 = 7
k2 = 3
iterations = 200
burn_in = 100
seed = 42

[prior]
a0 = 0.5
b0 = 0.25

[sim]
p = 20
q = 8
n = 6
m = 4
sigma = \"toeplitz\"
replications = 2
";
        let cfg = ConfigFile::parse(text).unwrap();
        let fit = cfg.fit_config(None).unwrap();
        assert_eq!(fit.k1, 7);
        assert_eq!(fit.seed, 42);
        assert_eq!(fit.prior.a0, 0.5);
        let scenario = cfg.sim_scenario(Some(9)).unwrap();
        assert_eq!(scenario.p, 20);
        assert_eq!(scenario.seed, 9);
        assert_eq!(scenario.sigma, SigmaStructure::Toeplitz);
        assert_eq!(scenario.fit.k1, 7);
    }

    #[test]
    fn cli_seed_overrides_file_seed() {
        let cfg = ConfigFile::parse("[fit]\nseed = 5\n").unwrap();
        assert_eq!(cfg.fit_config(None).unwrap().seed, 5);
        assert_eq!(cfg.fit_config(Some(11)).unwrap().seed, 11);
    }
}
