//! JSON run configuration.

use std::path::{Path, PathBuf};

use otlab::costs::CostSpec;
use otlab::measures::{DiscreteMeasure, SourceSpec};
use otlab::solver::SolverOptions;
use otlab::stability::{FamilySpec, StabilityOptions};
use otlab::verify::{Suite, VerifyOptions};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Solve,
    StabilityPot,
    StabilityMap,
    Verify,
    Bench,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Targets {
    pub base: DiscreteMeasure,
    #[serde(default)]
    pub family: FamilySpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilitySection {
    pub oracle: bool,
    pub oracle_atoms: usize,
    pub map_margin: f64,
}

impl Default for StabilitySection {
    fn default() -> Self {
        let d = StabilityOptions::default();
        StabilitySection {
            oracle: d.oracle,
            oracle_atoms: d.oracle_atoms,
            map_margin: d.map_margin,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub suites: Vec<Suite>,
    pub gamma_scale: f64,
    pub triples: usize,
    pub curvature_samples: usize,
    pub instances: usize,
    pub grid: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        let d = VerifyOptions::default();
        VerifySection {
            suites: Vec::new(),
            gamma_scale: d.gamma_scale,
            triples: d.triples,
            curvature_samples: d.curvature_samples,
            instances: d.instances,
            grid: d.grid,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub repeats: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection { repeats: 3 }
    }
}

/// Everything a run needs. Sections unused by the chosen subcommand may be
/// omitted; `source`, `targets` and `cost` are required by all but `verify`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub experiment: Option<Experiment>,
    #[serde(default)]
    pub source: Option<SourceSpec>,
    #[serde(default)]
    pub targets: Option<Targets>,
    #[serde(default)]
    pub cost: Option<CostSpec>,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub stability: StabilitySection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub bench: BenchSection,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

pub struct LoadedConfig {
    pub config: RunConfig,
    /// Hex SHA-256 of the raw file bytes.
    pub hash: String,
}

pub fn load(path: &Path) -> Result<LoadedConfig, CliError> {
    let bytes =
        std::fs::read(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let config: RunConfig = serde_json::from_slice(&bytes).map_err(|e| {
        CliError::Config(format!(
            "{}:{}:{}: {}",
            path.display(),
            e.line(),
            e.column(),
            strip_position(&e.to_string())
        ))
    })?;
    Ok(LoadedConfig {
        config,
        hash: hex::encode(Sha256::digest(&bytes)),
    })
}

/// serde_json appends " at line L column C"; the position is already in the
/// prefix.
fn strip_position(msg: &str) -> &str {
    match msg.rfind(" at line ") {
        Some(i) => &msg[..i],
        None => msg,
    }
}

impl RunConfig {
    pub fn require_source(&self) -> Result<&SourceSpec, CliError> {
        self.source
            .as_ref()
            .ok_or_else(|| CliError::Config("config is missing \"source\"".into()))
    }

    pub fn require_targets(&self) -> Result<&Targets, CliError> {
        self.targets
            .as_ref()
            .ok_or_else(|| CliError::Config("config is missing \"targets\"".into()))
    }

    pub fn require_cost(&self) -> Result<&CostSpec, CliError> {
        self.cost
            .as_ref()
            .ok_or_else(|| CliError::Config("config is missing \"cost\"".into()))
    }

    pub fn stability_options(&self) -> StabilityOptions {
        StabilityOptions {
            solver: self.solver.clone(),
            oracle: self.stability.oracle,
            oracle_atoms: self.stability.oracle_atoms,
            map_margin: self.stability.map_margin,
        }
    }

    pub fn verify_options(&self, seed: u64) -> VerifyOptions {
        let v = &self.verify;
        VerifyOptions {
            seed,
            gamma_scale: v.gamma_scale,
            triples: v.triples,
            curvature_samples: v.curvature_samples,
            instances: v.instances,
            grid: v.grid,
        }
    }
}
