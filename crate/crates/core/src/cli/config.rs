//! `key = value` configuration with one section per module.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use ini::Ini;

use crate::dynamics::ProcessConfig;
use crate::history::DEFAULT_TAIL_TOL;
use crate::kernel::{ArctanExponentialKernel, ExponentialKernel, SharedKernel, ZeroKernel};
use crate::spectral::{ModeBasis, Nonlinearity, DEFAULT_MODES};

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Experiment {
    KernelAudit,
    FreeOscillation,
    Absorb,
    SplitDecay,
    RegularityLadder,
    Quasistability,
    Gronwall,
    CoveringDemo,
    AttractorRadii,
}

impl Experiment {
    pub const ALL: [Experiment; 9] = [
        Experiment::KernelAudit,
        Experiment::FreeOscillation,
        Experiment::Absorb,
        Experiment::SplitDecay,
        Experiment::RegularityLadder,
        Experiment::Quasistability,
        Experiment::Gronwall,
        Experiment::CoveringDemo,
        Experiment::AttractorRadii,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::KernelAudit => "kernel-audit",
            Experiment::FreeOscillation => "free-oscillation",
            Experiment::Absorb => "absorb",
            Experiment::SplitDecay => "split-decay",
            Experiment::RegularityLadder => "regularity-ladder",
            Experiment::Quasistability => "quasistability",
            Experiment::Gronwall => "gronwall",
            Experiment::CoveringDemo => "covering-demo",
            Experiment::AttractorRadii => "attractor-radii",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| HarnessError::Usage(format!("unknown experiment '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelChoice {
    Arctan,
    /// Frozen `ε⁻² e^{−s/ε}`.
    Exponential {
        eps: f64,
    },
    Zero,
}

impl KernelChoice {
    pub fn build(self) -> SharedKernel {
        match self {
            KernelChoice::Arctan => Arc::new(ArctanExponentialKernel),
            KernelChoice::Exponential { eps } => Arc::new(ExponentialKernel::frozen(eps)),
            KernelChoice::Zero => Arc::new(ZeroKernel),
        }
    }
}

/// Process parameters as they appear in the `[process]` section.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessSettings {
    pub n_modes: usize,
    pub dt: f64,
    pub tail_tol: f64,
    pub blowup_threshold: f64,
    pub sample_every: usize,
    pub kernel: KernelChoice,
    pub nonlinearity: Nonlinearity,
    /// Multiplier on the default forcing `g_k = 1/(2λ_k)`.
    pub forcing_scale: f64,
}

impl Default for ProcessSettings {
    fn default() -> Self {
        Self {
            n_modes: DEFAULT_MODES,
            dt: 1e-3,
            tail_tol: DEFAULT_TAIL_TOL,
            blowup_threshold: 1e8,
            sample_every: 10,
            kernel: KernelChoice::Arctan,
            nonlinearity: Nonlinearity::Cubic,
            forcing_scale: 1.0,
        }
    }
}

impl ProcessSettings {
    pub fn to_config(&self) -> ProcessConfig {
        let basis = ModeBasis::new(self.n_modes);
        let g = basis.default_forcing().scaled(self.forcing_scale);
        ProcessConfig {
            basis,
            kernel: self.kernel.build(),
            nl: self.nonlinearity,
            g,
            dt: self.dt,
            tail_tol: self.tail_tol,
            blowup_threshold: self.blowup_threshold,
            sample_every: self.sample_every,
        }
    }

    /// Zero kernel, zero nonlinearity and zero forcing.
    pub fn free(&self) -> Self {
        Self {
            kernel: KernelChoice::Zero,
            nonlinearity: Nonlinearity::Zero,
            forcing_scale: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub process: ProcessSettings,
    pub seed: u64,
    pub radius: f64,
    pub tau: f64,
    pub horizon: f64,
    /// Radii of the absorbing-set runs.
    pub absorb_radii: Vec<f64>,
    /// Trajectories checked by the memory-inequality monitor.
    pub monitor_runs: usize,
    pub quasi_train: usize,
    pub quasi_test: usize,
    pub quasi_horizon: f64,
    pub quasi_safety: f64,
    pub gronwall_trials: usize,
    pub gronwall_horizon: f64,
    pub covering_depth: usize,
    pub covering_cloud: usize,
    pub ensemble: usize,
    /// `ε` in `Λ = 𝓛 + 2ε(Φ + 4Ψ)`; `None` means `0.05·δ*·inf κ` from the kernel audit.
    pub lambda_eps: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            process: ProcessSettings::default(),
            seed: 1,
            radius: 5.0,
            tau: 0.0,
            horizon: 20.0,
            absorb_radii: vec![1.0, 5.0, 10.0],
            monitor_runs: 5,
            quasi_train: 20,
            quasi_test: 10,
            quasi_horizon: 5.0,
            quasi_safety: 1.25,
            gronwall_trials: 1000,
            gronwall_horizon: 10.0,
            covering_depth: 6,
            covering_cloud: 10_000,
            ensemble: 8,
            lambda_eps: None,
        }
    }
}

fn parse<T: FromStr>(section: &str, key: &str, value: &str) -> Result<T, HarnessError> {
    value
        .trim()
        .parse()
        .map_err(|_| HarnessError::Usage(format!("[{section}] {key}: cannot parse '{value}'")))
}

fn parse_list(section: &str, key: &str, value: &str) -> Result<Vec<f64>, HarnessError> {
    value.split(',').map(|v| parse(section, key, v)).collect()
}

impl ExperimentConfig {
    pub fn from_ini_str(text: &str) -> Result<Self, HarnessError> {
        let ini = Ini::load_from_str(text).map_err(|e| HarnessError::Usage(format!("config: {e}")))?;
        let mut cfg = Self::default();
        for (section, props) in &ini {
            let sec = section.unwrap_or("");
            for (key, value) in props.iter() {
                cfg.set(sec, key, value)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Usage(format!("cannot read {}: {e}", path.display())))?;
        Self::from_ini_str(&text)
    }

    fn set(&mut self, sec: &str, key: &str, value: &str) -> Result<(), HarnessError> {
        let p = &mut self.process;
        match (sec, key) {
            ("process", "n_modes") => p.n_modes = parse(sec, key, value)?,
            ("process", "dt") => p.dt = parse(sec, key, value)?,
            ("process", "tail_tol") => p.tail_tol = parse(sec, key, value)?,
            ("process", "blowup_threshold") => p.blowup_threshold = parse(sec, key, value)?,
            ("process", "sample_every") => p.sample_every = parse(sec, key, value)?,
            ("process", "forcing_scale") => p.forcing_scale = parse(sec, key, value)?,
            ("process", "nonlinearity") => {
                p.nonlinearity = match value.trim() {
                    "cubic" => Nonlinearity::Cubic,
                    "zero" => Nonlinearity::Zero,
                    other => return Err(HarnessError::Usage(format!("unknown nonlinearity '{other}'"))),
                }
            }
            ("kernel", "kind") => {
                p.kernel = match value.trim() {
                    "arctan" => KernelChoice::Arctan,
                    "zero" => KernelChoice::Zero,
                    "exponential" => KernelChoice::Exponential {
                        eps: match p.kernel {
                            KernelChoice::Exponential { eps } => eps,
                            _ => 0.25,
                        },
                    },
                    other => return Err(HarnessError::Usage(format!("unknown kernel '{other}'"))),
                }
            }
            ("kernel", "eps") => {
                p.kernel = KernelChoice::Exponential {
                    eps: parse(sec, key, value)?,
                }
            }
            ("run", "seed") => self.seed = parse(sec, key, value)?,
            ("run", "radius") => self.radius = parse(sec, key, value)?,
            ("run", "tau") => self.tau = parse(sec, key, value)?,
            ("run", "horizon") => self.horizon = parse(sec, key, value)?,
            ("absorb", "radii") => self.absorb_radii = parse_list(sec, key, value)?,
            ("absorb", "monitor_runs") => self.monitor_runs = parse(sec, key, value)?,
            ("quasistability", "train_pairs") => self.quasi_train = parse(sec, key, value)?,
            ("quasistability", "test_pairs") => self.quasi_test = parse(sec, key, value)?,
            ("quasistability", "horizon") => self.quasi_horizon = parse(sec, key, value)?,
            ("quasistability", "safety") => self.quasi_safety = parse(sec, key, value)?,
            ("gronwall", "trials") => self.gronwall_trials = parse(sec, key, value)?,
            ("gronwall", "horizon") => self.gronwall_horizon = parse(sec, key, value)?,
            ("gronwall", "lambda_eps") => self.lambda_eps = Some(parse(sec, key, value)?),
            ("covering", "depth") => self.covering_depth = parse(sec, key, value)?,
            ("covering", "cloud") => self.covering_cloud = parse(sec, key, value)?,
            ("radii", "ensemble") => self.ensemble = parse(sec, key, value)?,
            _ => {
                return Err(HarnessError::Usage(format!(
                    "unknown key '{key}' in section [{sec}]"
                )))
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Usage(m));
        if !(self.horizon > 0.0) {
            return bad(format!("horizon {} must be positive", self.horizon));
        }
        if !(self.radius >= 0.0) {
            return bad(format!("radius {} must be nonnegative", self.radius));
        }
        if self.process.n_modes == 0 {
            return bad("n_modes must be positive".into());
        }
        if self.absorb_radii.is_empty() {
            return bad("absorb radii list is empty".into());
        }
        self.process
            .to_config()
            .validate()
            .map_err(|e| HarnessError::Usage(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections() {
        let cfg = ExperimentConfig::from_ini_str(
            "[process]\ndt = 5e-4\nnonlinearity = zero\n[kernel]\neps = 0.3\n[run]\nseed = 9\nhorizon = 3\n[absorb]\nradii = 1, 2\n",
        )
        .unwrap();
        assert_eq!(cfg.process.dt, 5e-4);
        assert_eq!(cfg.process.nonlinearity, Nonlinearity::Zero);
        assert_eq!(cfg.process.kernel, KernelChoice::Exponential { eps: 0.3 });
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.absorb_radii, vec![1.0, 2.0]);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ExperimentConfig::from_ini_str("[run]\ncolour = red\n").is_err());
        assert!(ExperimentConfig::from_ini_str("[run]\nhorizon = -1\n").is_err());
        assert!(ExperimentConfig::from_ini_str("[process]\ndt = fast\n").is_err());
        assert!("absorb".parse::<Experiment>().is_ok());
        assert!("nope".parse::<Experiment>().is_err());
    }
}
