//! Run configuration: a TOML file layered over one of the presets.
//!
//! ```toml
//! version = 1
//! preset = 1            # base experiment, 1 to 3
//! seed = 7
//! threads = 2
//!
//! [data]
//! refine_extra = 1      # extra uniform refinements for synthetic data
//! noise = 0.005
//!
//! [output]
//! checkpoint_every = 10
//! wall_time = false     # write measured wall time into the CSV log
//!
//! [domain]              # any subset of the mesh fields
//! cells_per_axis = [5, 5, 11]
//!
//! [physics]             # omega, mu, epsilon, sigma0
//! omega = 1.0
//!
//! [inversion]           # any subset of the outer-loop fields
//! beta = 2e-3
//! outer_iterations = 50
//! ```
//!
//! `source` and `truth` tables replace the preset's dipole grid and
//! inclusions. Unknown keys are rejected everywhere.

use std::path::Path;

use eddytv::fem::{PhysicalParams, SourceSpec};
use eddytv::harness::{preset_example, ExperimentPreset, Truth};
use eddytv::inversion::OuterConfig;
use eddytv::mesh::DomainSpec;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: Option<u32>,
    pub preset: Option<u32>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub output: OutputConfig,
    pub domain: Option<DomainSpec>,
    pub physics: Option<PhysicalParams>,
    pub source: Option<SourceSpec>,
    pub truth: Option<Truth>,
    pub inversion: Option<OuterConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub refine_extra: usize,
    pub noise: Option<f64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { refine_extra: 1, noise: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub checkpoint_every: usize,
    pub wall_time: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { checkpoint_every: 10, wall_time: false }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub preset: Option<u32>,
    pub refine: Option<usize>,
    pub noise: Option<f64>,
}

/// Fully resolved settings of one run, echoed into every manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub config_version: u32,
    pub experiment: ExperimentPreset,
    pub refine_extra: usize,
    pub threads: usize,
    pub checkpoint_every: usize,
    pub wall_time: bool,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn resolve(&self, ov: &Overrides) -> Result<Resolved> {
        let version = self.version.unwrap_or(CONFIG_VERSION);
        if version != CONFIG_VERSION {
            return Err(CliError::config("version", format!("unsupported version {version}, expected {CONFIG_VERSION}")));
        }
        let n = ov.preset.or(self.preset).unwrap_or(1);
        let mut p = preset_example(n).map_err(|e| rekey(e, ""))?;
        if let Some(d) = &self.domain {
            p.domain = d.clone();
        }
        if let Some(r) = ov.refine {
            p.domain.refine_levels = r;
        }
        if let Some(x) = self.physics {
            p.params = x;
        }
        if let Some(s) = &self.source {
            p.source = s.clone();
        }
        if let Some(t) = &self.truth {
            p.truth = t.clone();
        }
        if let Some(o) = &self.inversion {
            p.outer = o.clone();
        }
        if let Some(v) = ov.noise.or(self.data.noise) {
            p.noise = v;
        }
        if let Some(s) = ov.seed.or(self.seed) {
            p.seed = s;
        }
        p.domain.validate().map_err(|e| rekey(e, "domain."))?;
        p.params.validate().map_err(|e| rekey(e, "physics."))?;
        p.validate().map_err(|e| rekey(e, ""))?;
        p.outer.validate(p.params.sigma0).map_err(|e| rekey(e, "inversion."))?;
        if p.source.positions.is_empty() {
            return Err(CliError::config("source.positions", "at least one dipole is required"));
        }
        if self.data.refine_extra == 0 {
            return Err(CliError::config("data.refine_extra", "synthetic data must come from a refined mesh (>= 1)"));
        }
        let threads = ov.threads.or(self.threads).unwrap_or(1);
        if threads == 0 {
            return Err(CliError::config("threads", "must be at least 1"));
        }
        if self.output.checkpoint_every == 0 {
            return Err(CliError::config("output.checkpoint_every", "must be at least 1"));
        }
        Ok(Resolved {
            config_version: version,
            experiment: p,
            refine_extra: self.data.refine_extra,
            threads,
            checkpoint_every: self.output.checkpoint_every,
            wall_time: self.output.wall_time,
        })
    }
}

fn rekey(e: eddytv::Error, prefix: &str) -> CliError {
    match e {
        eddytv::Error::Config { key, msg } => CliError::config(format!("{prefix}{key}"), msg),
        other => other.into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_preset_one() {
        let r = RunConfig::parse("").unwrap().resolve(&Overrides::default()).unwrap();
        assert_eq!(r.experiment, preset_example(1).unwrap());
        assert_eq!(r.refine_extra, 1);
        assert_eq!(r.threads, 1);
    }

    #[test]
    fn partial_tables_keep_defaults() {
        let cfg = RunConfig::parse("[inversion]\nbeta = 0.5\n[domain]\ncells_per_axis = [5, 5, 11]\n").unwrap();
        let r = cfg.resolve(&Overrides::default()).unwrap();
        assert_eq!(r.experiment.outer.beta, 0.5);
        assert_eq!(r.experiment.outer.alpha, OuterConfig::default().alpha);
        assert_eq!(r.experiment.domain.cells_per_axis, [5, 5, 11]);
        assert_eq!(r.experiment.domain.z_range, DomainSpec::layered_box().z_range);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["colour = 3", "[inversion]\nbta = 1.0", "[domain]\ncells = [1, 1, 1]", "[data]\nnoise_level = 0.1"] {
            let err = RunConfig::parse(text).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}");
        }
    }

    #[test]
    fn invalid_interface_names_the_key() {
        let cfg = RunConfig::parse("[domain]\nz_interface = 5.0\n").unwrap();
        let err = cfg.resolve(&Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("domain.z_interface"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn flags_override_file() {
        let cfg = RunConfig::parse("preset = 2\nseed = 4\n[data]\nnoise = 0.01\n").unwrap();
        let ov = Overrides { seed: Some(9), preset: Some(3), noise: Some(0.0), refine: Some(1), threads: Some(2) };
        let r = cfg.resolve(&ov).unwrap();
        assert_eq!(r.experiment.name, "example3");
        assert_eq!(r.experiment.seed, 9);
        assert_eq!(r.experiment.noise, 0.0);
        assert_eq!(r.experiment.domain.refine_levels, 1);
        assert_eq!(r.threads, 2);
    }

    #[test]
    fn bad_values_are_config_errors() {
        for text in ["version = 2", "preset = 4", "[data]\nrefine_extra = 0", "[inversion]\nbeta = -1.0", "threads = 0"] {
            let err = RunConfig::parse(text).unwrap().resolve(&Overrides::default()).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}: {err}");
        }
    }

    #[test]
    fn inclusion_outside_conductor_is_rejected() {
        let text = "[truth]\ninclusions = [{ bounds = { x = { min = 0.0, max = 1.0 }, y = { min = 0.0, max = 1.0 }, z = { min = -0.5, max = 0.1 } }, value = 2.0 }]\n";
        let err = RunConfig::parse(text).unwrap().resolve(&Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("inclusions[0]"), "{err}");
    }
}
