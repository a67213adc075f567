//! Experiment harness behind the `memwave` binary.

pub mod config;
pub mod data;
pub mod experiments;

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::covering::CoveringError;
use crate::dynamics::DynamicsError;
use crate::functionals::FunctionalError;

pub use config::{Experiment, ExperimentConfig, KernelChoice, ProcessSettings};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// Process exit code: 2 for usage errors, 3 for numerical failures and I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => 2,
            _ => 3,
        }
    }
}

impl From<DynamicsError> for HarnessError {
    fn from(e: DynamicsError) -> Self {
        match e {
            DynamicsError::Config(_) => HarnessError::Usage(e.to_string()),
            other => HarnessError::Numerical(other.to_string()),
        }
    }
}

impl From<FunctionalError> for HarnessError {
    fn from(e: FunctionalError) -> Self {
        HarnessError::Numerical(e.to_string())
    }
}

impl From<CoveringError> for HarnessError {
    fn from(e: CoveringError) -> Self {
        HarnessError::Numerical(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Named checks and measured quantities of one experiment run.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub experiment: Experiment,
    pub checks: Vec<Check>,
    pub quantities: Vec<(String, f64)>,
    pub flags: Vec<String>,
}

impl Outcome {
    pub fn new(experiment: Experiment) -> Self {
        Self {
            experiment,
            checks: Vec::new(),
            quantities: Vec::new(),
            flags: Vec::new(),
        }
    }

    pub fn check(&mut self, name: &str, passed: bool, detail: &str) {
        self.checks.push(Check {
            name: name.to_string(),
            passed,
            detail: detail.to_string(),
        });
    }

    pub fn quantity(&mut self, name: &str, value: f64) {
        self.quantities.push((name.to_string(), value));
    }

    pub fn flag(&mut self, text: &str) {
        self.flags.push(text.to_string());
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// `<experiment> PASS|FAIL name=value ...`
    pub fn summary_line(&self) -> String {
        let mut s = format!(
            "{} {}",
            self.experiment,
            if self.passed() { "PASS" } else { "FAIL" }
        );
        for (k, v) in &self.quantities {
            let _ = write!(s, " {k}={v:.6e}");
        }
        for c in self.failed() {
            let _ = write!(s, " failed:{}", c.name);
        }
        for f in &self.flags {
            let _ = write!(s, " [{f}]");
        }
        s
    }
}

pub fn run(
    experiment: Experiment,
    cfg: &ExperimentConfig,
    out: Option<&Path>,
) -> Result<Outcome, HarnessError> {
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    use experiments as x;
    Ok(match experiment {
        Experiment::KernelAudit => x::kernel_audit(cfg, out)?.1,
        Experiment::FreeOscillation => x::free_oscillation(cfg, out)?.1,
        Experiment::Absorb => x::absorb(cfg, out)?.1,
        Experiment::SplitDecay => x::split_decay(cfg, out)?.1,
        Experiment::RegularityLadder => x::regularity_ladder(cfg, out)?.1,
        Experiment::Quasistability => x::quasistability(cfg, out)?.1,
        Experiment::Gronwall => x::gronwall(cfg, out)?.1,
        Experiment::CoveringDemo => x::covering(cfg, out)?.1,
        Experiment::AttractorRadii => x::attractor_radii(cfg, out)?.1,
    })
}
