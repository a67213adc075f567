//! The process `U(t, τ)` for
//!
//! ```text
//! u_tt + A u + ∫₀^∞ μ_t(s) A η^t(s) ds + f(u) = g
//! ```
//!
//! in spectral form, integrated with a mode-exact exponential scheme: each mode
//! solves `u_k″ + λ_k u_k = F_k` exactly over a step, with the force frozen at
//! the step midpoint from one predictor half-step.

use std::io::Write;
use std::sync::Arc;

use thiserror::Error;

use crate::history::{EtaNodes, HistoryBuffer, HistoryError, InitialHistory, SQuadrature, DEFAULT_TAIL_TOL};
use crate::kernel::{ArctanExponentialKernel, SharedKernel};
use crate::spectral::{eigenvalue, ModeBasis, Nonlinearity, Part, SpectralField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("instability at t = {t}: ‖u‖₁ + ‖v‖ = {size:e} exceeds {threshold:e}")]
    Blowup { t: f64, size: f64, threshold: f64 },
    #[error("non-finite coefficient at t = {t}")]
    NonFinite { t: f64 },
    #[error("invalid process configuration: {0}")]
    Config(String),
    #[error(transparent)]
    History(#[from] HistoryError),
}

#[derive(Debug, Clone)]
pub struct ProcessConfig {
    pub basis: ModeBasis,
    pub kernel: SharedKernel,
    pub nl: Nonlinearity,
    pub g: SpectralField,
    pub dt: f64,
    pub tail_tol: f64,
    pub blowup_threshold: f64,
    /// Steps between recorded samples.
    pub sample_every: usize,
}

impl Default for ProcessConfig {
    fn default() -> Self {
        let basis = ModeBasis::default();
        let g = basis.default_forcing();
        Self {
            basis,
            kernel: Arc::new(ArctanExponentialKernel),
            nl: Nonlinearity::Cubic,
            g,
            dt: 1e-3,
            tail_tol: DEFAULT_TAIL_TOL,
            blowup_threshold: 1e8,
            sample_every: 10,
        }
    }
}

impl ProcessConfig {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let bad = |m: &str| Err(DynamicsError::Config(m.to_string()));
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if !(self.blowup_threshold > 0.0) {
            return bad("blowup_threshold must be positive");
        }
        if self.sample_every == 0 {
            return bad("sample_every must be at least 1");
        }
        if self.g.len() != self.basis.n_modes() {
            return bad("forcing has the wrong number of modes");
        }
        Ok(())
    }
}

/// Initial data `z_τ = (u_τ, v_τ, η_τ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialData {
    pub u: SpectralField,
    pub v: SpectralField,
    pub history: InitialHistory,
}

impl InitialData {
    pub fn zero(n: usize) -> Self {
        Self {
            u: SpectralField::zeros(n),
            v: SpectralField::zeros(n),
            history: InitialHistory::Zero,
        }
    }
}

/// `(t, u, ∂_t u, η^t)`; the history is owned by the trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedState {
    pub t: f64,
    pub u: SpectralField,
    pub v: SpectralField,
    pub history: HistoryBuffer,
}

impl ExtendedState {
    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.u.is_finite() && self.v.is_finite()
    }
}

/// Recorded diagnostics at one sample time.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub u: SpectralField,
    pub v: SpectralField,
    /// `‖η^t‖²_{M_t^σ}` at σ = 0, 1/3, 1.
    pub memory: [f64; 3],
}

pub const SIGMAS: [f64; 3] = [0.0, 1.0 / 3.0, 1.0];

impl Sample {
    fn sigma_index(sigma: f64) -> usize {
        SIGMAS
            .iter()
            .position(|&s| (s - sigma).abs() < 1e-12)
            .unwrap_or_else(|| panic!("energies are recorded at σ ∈ {{0, 1/3, 1}}, got {sigma}"))
    }

    /// `‖z‖²_{H_t^σ} = ‖u‖²_{σ+1} + ‖v‖²_σ + ‖η‖²_{M_t^σ}`.
    pub fn norm_sq(&self, sigma: f64) -> f64 {
        self.u.sigma_norm_sq(sigma + 1.0)
            + self.v.sigma_norm_sq(sigma)
            + self.memory[Self::sigma_index(sigma)]
    }

    /// `E_σ = ½ ‖z‖²_{H_t^σ}`.
    pub fn energy(&self, sigma: f64) -> f64 {
        0.5 * self.norm_sq(sigma)
    }
}

fn sample_of(t: f64, u: &SpectralField, v: &SpectralField, eta: &EtaNodes, mu_w: &[f64]) -> Sample {
    Sample {
        t,
        u: u.clone(),
        v: v.clone(),
        memory: SIGMAS.map(|s| eta.weighted_norm_sq(mu_w, s)),
    }
}

/// Streams samples as CSV `(t, E_0, E_{1/3}, E_1, ‖u‖₁, ‖v‖, ‖η‖_{M_t})`.
pub fn write_samples_csv<W: Write>(samples: &[Sample], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "E_0", "E_1/3", "E_1", "u_H1", "v_L2", "eta_M"])?;
    for s in samples {
        out.write_record([
            format!("{:e}", s.t),
            format!("{:e}", s.energy(0.0)),
            format!("{:e}", s.energy(1.0 / 3.0)),
            format!("{:e}", s.energy(1.0)),
            format!("{:e}", s.u.sigma_norm(1.0)),
            format!("{:e}", s.v.sigma_norm(0.0)),
            format!("{:e}", s.memory[0].sqrt()),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// What an [`Observer`] sees once per step, before the step is taken.
pub struct StepView<'a> {
    pub process: &'a Process,
    pub step: u64,
    pub t: f64,
    pub u: &'a SpectralField,
    pub v: &'a SpectralField,
    pub eta: &'a EtaNodes,
    /// `w_j μ_t(s_j)`.
    pub mu_weights: &'a [f64],
}

pub trait Observer {
    fn observe(&mut self, view: &StepView<'_>);
}

/// Per-mode propagator of `u″ + ω²u = F` over a fixed step.
#[derive(Debug, Clone)]
struct Propagator {
    cos: Vec<f64>,
    sin_over_w: Vec<f64>,
    w_sin: Vec<f64>,
    one_minus_cos_over_w2: Vec<f64>,
}

impl Propagator {
    fn new(n: usize, h: f64) -> Self {
        let mut p = Self {
            cos: Vec::with_capacity(n),
            sin_over_w: Vec::with_capacity(n),
            w_sin: Vec::with_capacity(n),
            one_minus_cos_over_w2: Vec::with_capacity(n),
        };
        for k in 1..=n {
            let w = eigenvalue(k).sqrt();
            let (s, c) = (w * h).sin_cos();
            let half = (0.5 * w * h).sin();
            p.cos.push(c);
            p.sin_over_w.push(s / w);
            p.w_sin.push(w * s);
            // 1 − cos x = 2 sin²(x/2), without cancellation.
            p.one_minus_cos_over_w2.push(2.0 * half * half / (w * w));
        }
        p
    }

    fn apply(
        &self,
        u: &SpectralField,
        v: &SpectralField,
        f: &SpectralField,
    ) -> (SpectralField, SpectralField) {
        let n = u.len();
        let (uc, vc, fc) = (u.coeffs(), v.coeffs(), f.coeffs());
        let mut un = vec![0.0; n];
        let mut vn = vec![0.0; n];
        for k in 0..n {
            un[k] = self.cos[k] * uc[k] + self.sin_over_w[k] * vc[k] + self.one_minus_cos_over_w2[k] * fc[k];
            vn[k] = -self.w_sin[k] * uc[k] + self.cos[k] * vc[k] + self.sin_over_w[k] * fc[k];
        }
        (SpectralField::from_coeffs(un), SpectralField::from_coeffs(vn))
    }
}

/// `U(·, τ)` on `[τ, t_end]` with a memory quadrature valid on that interval.
#[derive(Debug, Clone)]
pub struct Process {
    config: ProcessConfig,
    tau: f64,
    t_end: f64,
    quadrature: Arc<SQuadrature>,
    full: Propagator,
    half: Propagator,
}

impl Process {
    pub fn new(config: ProcessConfig, tau: f64, t_end: f64) -> Result<Self, DynamicsError> {
        config.validate()?;
        if t_end < tau {
            return Err(DynamicsError::Config(format!(
                "t_end = {t_end} precedes tau = {tau}"
            )));
        }
        let quadrature = Arc::new(SQuadrature::for_kernel(
            config.kernel.as_ref(),
            tau,
            t_end.max(tau),
            config.tail_tol,
        )?);
        let n = config.basis.n_modes();
        Ok(Self {
            full: Propagator::new(n, config.dt),
            half: Propagator::new(n, 0.5 * config.dt),
            config,
            tau,
            t_end,
            quadrature,
        })
    }

    pub fn config(&self) -> &ProcessConfig {
        &self.config
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn quadrature(&self) -> &SQuadrature {
        &self.quadrature
    }

    pub fn n_modes(&self) -> usize {
        self.config.basis.n_modes()
    }

    /// Number of steps from `τ` to `t`, rounded to the step grid.
    pub fn steps_to(&self, t: f64) -> u64 {
        ((t - self.tau) / self.config.dt).round().max(0.0) as u64
    }

    pub fn time_of(&self, step: u64) -> f64 {
        self.tau + step as f64 * self.config.dt
    }

    pub fn start(&self, z: &InitialData) -> ExtendedState {
        let history = HistoryBuffer::new(
            self.tau,
            self.config.dt,
            Arc::clone(&self.quadrature),
            z.history.clone(),
            z.u.clone(),
            z.v.clone(),
        );
        ExtendedState {
            t: self.tau,
            u: z.u.clone(),
            v: z.v.clone(),
            history,
        }
    }

    fn mu_weights(&self, t: f64) -> Result<Vec<f64>, DynamicsError> {
        self.quadrature.check_tail(self.config.kernel.as_ref(), t)?;
        Ok(self.quadrature.kernel_weights(self.config.kernel.as_ref(), t))
    }

    /// `g − part(u)`.
    fn drive(&self, part: Option<Part>, with_g: bool, u: &SpectralField) -> SpectralField {
        let mut n = match part {
            Some(p) => -&self.config.basis.apply_nonlinearity(self.config.nl, p, u),
            None => SpectralField::zeros(u.len()),
        };
        if with_g {
            n += &self.config.g;
        }
        n
    }

    /// History and kernel weights at the state's time.
    pub fn eta(&self, state: &ExtendedState) -> Result<(EtaNodes, Vec<f64>), DynamicsError> {
        let eta = state.history.eta_on_nodes(state.t)?;
        let w = self.mu_weights(state.t)?;
        Ok((eta, w))
    }

    pub fn sample(&self, state: &ExtendedState) -> Result<Sample, DynamicsError> {
        let (eta, w) = self.eta(state)?;
        Ok(sample_of(state.t, &state.u, &state.v, &eta, &w))
    }

    /// One step given the non-memory force at the start (`n_start`) and a rule
    /// for it at the predicted midpoint. Returns the midpoint force used.
    fn advance_one(
        &self,
        state: &mut ExtendedState,
        eta: &EtaNodes,
        mu_w: &[f64],
        n_start: &SpectralField,
        mid: impl FnOnce(&SpectralField) -> SpectralField,
    ) -> Result<SpectralField, DynamicsError> {
        let dt = self.config.dt;
        let step = state.history.steps();
        let t_mid = self.time_of(step) + 0.5 * dt;

        let mut f = n_start.clone();
        f -= &eta.force(mu_w);
        let (u_half, v_half) = self.half.apply(&state.u, &state.v, &f);
        let n_mid = mid(&u_half);
        state.history.set_head(t_mid, u_half, v_half);
        let eta_mid = state.history.eta_on_nodes(t_mid)?;
        let mut f_mid = n_mid.clone();
        f_mid -= &eta_mid.force(&self.mu_weights(t_mid)?);

        let (u1, v1) = self.full.apply(&state.u, &state.v, &f_mid);
        let t1 = self.time_of(step + 1);
        if !(u1.is_finite() && v1.is_finite()) {
            return Err(DynamicsError::NonFinite { t: t1 });
        }
        let size = u1.sigma_norm(1.0) + v1.sigma_norm(0.0);
        if size > self.config.blowup_threshold {
            return Err(DynamicsError::Blowup {
                t: t1,
                size,
                threshold: self.config.blowup_threshold,
            });
        }
        state.history.push(u1.clone(), v1.clone());
        state.u = u1;
        state.v = v1;
        state.t = t1;
        Ok(n_mid)
    }

    /// Advances the full equation by one step.
    pub fn step(&self, state: &mut ExtendedState) -> Result<(), DynamicsError> {
        let (eta, w) = self.eta(state)?;
        let n0 = self.drive(Some(Part::Full), true, &state.u);
        self.advance_one(state, &eta, &w, &n0, |u| self.drive(Some(Part::Full), true, u))?;
        Ok(())
    }

    /// Advances `state` to `t_end`, recording a sample every `sample_every`
    /// steps (and at the end) and showing every step to the observers.
    pub fn advance(
        &self,
        state: &mut ExtendedState,
        t_end: f64,
        observers: &mut [&mut dyn Observer],
    ) -> Result<Vec<Sample>, DynamicsError> {
        let last = self.steps_to(t_end);
        let every = self.config.sample_every as u64;
        let mut samples = Vec::new();
        loop {
            let step = state.history.steps();
            let (eta, w) = self.eta(state)?;
            let view = StepView {
                process: self,
                step,
                t: state.t,
                u: &state.u,
                v: &state.v,
                eta: &eta,
                mu_weights: &w,
            };
            for o in observers.iter_mut() {
                o.observe(&view);
            }
            if step.is_multiple_of(every) || step >= last {
                samples.push(sample_of(state.t, &state.u, &state.v, &eta, &w));
            }
            if step >= last {
                break;
            }
            let n0 = self.drive(Some(Part::Full), true, &state.u);
            self.advance_one(state, &eta, &w, &n0, |u| self.drive(Some(Part::Full), true, u))?;
        }
        Ok(samples)
    }

    pub fn evolve(&self, z: &InitialData) -> Result<Trajectory, DynamicsError> {
        self.evolve_observed(z, &mut [])
    }

    pub fn evolve_observed(
        &self,
        z: &InitialData,
        observers: &mut [&mut dyn Observer],
    ) -> Result<Trajectory, DynamicsError> {
        let mut state = self.start(z);
        let samples = self.advance(&mut state, self.t_end, observers)?;
        Ok(Trajectory {
            samples,
            final_state: state,
        })
    }

    /// Runs the full solution together with its splitting `U = U₀ + U₁`.
    pub fn evolve_split(&self, z: &InitialData, mode: SplitMode) -> Result<SplitRun, DynamicsError> {
        let n = self.n_modes();
        let mut full = self.start(z);
        let mut p0 = self.start(z);
        let mut p1 = self.start(&InitialData::zero(n));
        let part0 = match mode {
            SplitMode::Lemma48 => Some(Part::F0),
            SplitMode::Lemma410 => None,
        };
        let last = self.steps_to(self.t_end);
        let every = self.config.sample_every as u64;
        let mut run = SplitRun {
            mode,
            full: Vec::new(),
            u0_part: Vec::new(),
            u1_part: Vec::new(),
            residual: Vec::new(),
        };
        loop {
            let step = full.history.steps();
            let (ef, w) = self.eta(&full)?;
            let e0 = p0.history.eta_on_nodes(p0.t)?;
            let e1 = p1.history.eta_on_nodes(p1.t)?;
            if step.is_multiple_of(every) || step >= last {
                run.full.push(sample_of(full.t, &full.u, &full.v, &ef, &w));
                run.u0_part.push(sample_of(p0.t, &p0.u, &p0.v, &e0, &w));
                run.u1_part.push(sample_of(p1.t, &p1.u, &p1.v, &e1, &w));
                run.residual
                    .push(superposition_residual(&full, &p0, &p1, &ef, &e0, &e1, &w));
            }
            if step >= last {
                break;
            }
            let nf0 = self.drive(Some(Part::Full), true, &full.u);
            let nf_mid = self.advance_one(&mut full, &ef, &w, &nf0, |u| {
                self.drive(Some(Part::Full), true, u)
            })?;
            let n00 = self.drive(part0, false, &p0.u);
            let n0_mid = self.advance_one(&mut p0, &e0, &w, &n00, |u| self.drive(part0, false, u))?;
            let n10 = &nf0 - &n00;
            let n1_mid = &nf_mid - &n0_mid;
            self.advance_one(&mut p1, &e1, &w, &n10, |_| n1_mid)?;
        }
        Ok(run)
    }

    /// Runs two trajectories side by side, recording `‖z₁ − z₂‖²_{H_t}` and the
    /// running trapezoid integral of `‖u₁ − u₂‖²`.
    pub fn difference_run(&self, z1: &InitialData, z2: &InitialData) -> Result<DifferenceRun, DynamicsError> {
        let mut a = self.start(z1);
        let mut b = self.start(z2);
        let last = self.steps_to(self.t_end);
        let every = self.config.sample_every as u64;
        let dt = self.config.dt;
        let mut run = DifferenceRun { samples: Vec::new() };
        let mut accum = 0.0;
        let mut prev = (&a.u - &b.u).sigma_norm_sq(0.0);
        loop {
            let step = a.history.steps();
            let (ea, w) = self.eta(&a)?;
            let eb = b.history.eta_on_nodes(b.t)?;
            if step.is_multiple_of(every) || step >= last {
                let du = &a.u - &b.u;
                let dv = &a.v - &b.v;
                let mem = eta_difference_norm_sq(&ea, &eb, &w, 0.0);
                run.samples.push(DifferenceSample {
                    t: a.t,
                    dist_sq: du.sigma_norm_sq(1.0) + dv.sigma_norm_sq(0.0) + mem,
                    accum,
                    a: sample_of(a.t, &a.u, &a.v, &ea, &w),
                    b: sample_of(b.t, &b.u, &b.v, &eb, &w),
                });
            }
            if step >= last {
                break;
            }
            let na = self.drive(Some(Part::Full), true, &a.u);
            self.advance_one(&mut a, &ea, &w, &na, |u| self.drive(Some(Part::Full), true, u))?;
            let nb = self.drive(Some(Part::Full), true, &b.u);
            self.advance_one(&mut b, &eb, &w, &nb, |u| self.drive(Some(Part::Full), true, u))?;
            let cur = (&a.u - &b.u).sigma_norm_sq(0.0);
            accum += 0.5 * dt * (prev + cur);
            prev = cur;
        }
        Ok(run)
    }
}

fn eta_difference_norm_sq(a: &EtaNodes, b: &EtaNodes, w: &[f64], sigma: f64) -> f64 {
    let mut total = 0.0;
    for (j, &c) in w.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let row: f64 = a
            .row(j)
            .iter()
            .zip(b.row(j))
            .enumerate()
            .map(|(k, (x, y))| eigenvalue(k + 1).powf(sigma + 1.0) * (x - y) * (x - y))
            .sum();
        total += c * row;
    }
    total
}

fn superposition_residual(
    full: &ExtendedState,
    p0: &ExtendedState,
    p1: &ExtendedState,
    ef: &EtaNodes,
    e0: &EtaNodes,
    e1: &EtaNodes,
    w: &[f64],
) -> f64 {
    let du = &(&full.u - &p0.u) - &p1.u;
    let dv = &(&full.v - &p0.v) - &p1.v;
    let mut mem = 0.0;
    for (j, &c) in w.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let row: f64 = ef
            .row(j)
            .iter()
            .zip(e0.row(j))
            .zip(e1.row(j))
            .enumerate()
            .map(|(k, ((f, a), b))| {
                let d = f - a - b;
                eigenvalue(k + 1) * d * d
            })
            .sum();
        mem += c * row;
    }
    (du.sigma_norm_sq(1.0) + dv.sigma_norm_sq(0.0) + mem).sqrt()
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub final_state: ExtendedState,
}

/// `U₀` carries the initial data and decays; `U₁` starts from zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// `U₀` keeps the monotone part `f₀`; `U₁` is driven by `g − f(u) + f₀(U₀)`.
    Lemma48,
    /// `U₀` is linear; `U₁` is driven by `g − f(u)`.
    Lemma410,
}

#[derive(Debug, Clone)]
pub struct SplitRun {
    pub mode: SplitMode,
    pub full: Vec<Sample>,
    pub u0_part: Vec<Sample>,
    pub u1_part: Vec<Sample>,
    /// `‖z − z₀ − z₁‖_{H_t}` at each sample.
    pub residual: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DifferenceSample {
    pub t: f64,
    /// `‖z₁(t) − z₂(t)‖²_{H_t}`.
    pub dist_sq: f64,
    /// `∫_τ^t ‖u₁ − u₂‖² ds`.
    pub accum: f64,
    pub a: Sample,
    pub b: Sample,
}

#[derive(Debug, Clone)]
pub struct DifferenceRun {
    pub samples: Vec<DifferenceSample>,
}

/// `U(t_end, τ) z_τ` with its samples.
pub fn evolve(
    z: &InitialData,
    tau: f64,
    t_end: f64,
    config: &ProcessConfig,
) -> Result<Trajectory, DynamicsError> {
    Process::new(config.clone(), tau, t_end)?.evolve(z)
}

pub fn evolve_split(
    z: &InitialData,
    tau: f64,
    t_end: f64,
    config: &ProcessConfig,
    mode: SplitMode,
) -> Result<SplitRun, DynamicsError> {
    Process::new(config.clone(), tau, t_end)?.evolve_split(z, mode)
}

pub fn difference_run(
    z1: &InitialData,
    z2: &InitialData,
    tau: f64,
    t_end: f64,
    config: &ProcessConfig,
) -> Result<DifferenceRun, DynamicsError> {
    Process::new(config.clone(), tau, t_end)?.difference_run(z1, z2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::Profile;
    use crate::kernel::ZeroKernel;

    fn free_config(n: usize) -> ProcessConfig {
        let basis = ModeBasis::new(n);
        ProcessConfig {
            g: basis.zeros(),
            basis,
            kernel: Arc::new(ZeroKernel),
            nl: Nonlinearity::Zero,
            ..ProcessConfig::default()
        }
    }

    fn data(u: SpectralField, v: SpectralField) -> InitialData {
        InitialData {
            u,
            v,
            history: InitialHistory::Zero,
        }
    }

    fn smooth_data(n: usize, scale: f64) -> InitialData {
        let u = SpectralField::from_coeffs((1..=n).map(|k| scale / (k * k) as f64).collect());
        let v = SpectralField::from_coeffs((1..=n).map(|k| -scale / (k * k) as f64).collect());
        let history = InitialHistory::Separable(vec![
            (Profile::RampExp { ell: 0.4 }, v.clone()),
            (Profile::Saturating { ell: 0.4 }, u.scaled(0.5)),
        ]);
        InitialData { u, v, history }
    }

    #[test]
    fn free_modes_are_exact() {
        let cfg = free_config(8);
        let p = Process::new(cfg, 0.0, 10.0).unwrap();
        let tr = p
            .evolve(&data(SpectralField::mode(8, 1), SpectralField::zeros(8)))
            .unwrap();
        for s in &tr.samples {
            assert!((s.u.coeff(1) - s.t.cos()).abs() <= 1e-8 * s.t.max(1.0));
        }
        let tr = p
            .evolve(&data(SpectralField::zeros(8), SpectralField::mode(8, 2)))
            .unwrap();
        for s in &tr.samples {
            assert!((s.u.coeff(2) - 0.5 * (2.0 * s.t).sin()).abs() <= 1e-8 * s.t.max(1.0));
        }
    }

    #[test]
    fn free_energy_is_conserved() {
        let p = Process::new(free_config(8), 0.0, 5.0).unwrap();
        let z = smooth_data(8, 1.0);
        let z = data(z.u, z.v);
        let tr = p.evolve(&z).unwrap();
        let e0 = tr.samples[0].energy(0.0);
        for s in &tr.samples {
            assert!((s.energy(0.0) - e0).abs() <= 1e-9 * e0 * s.t.max(1.0));
        }
    }

    #[test]
    fn zero_horizon_is_identity() {
        let p = Process::new(ProcessConfig::default(), 0.0, 0.0).unwrap();
        let z = smooth_data(32, 1.0);
        let tr = p.evolve(&z).unwrap();
        assert_eq!(tr.samples.len(), 1);
        assert_eq!(tr.final_state.u, z.u);
        assert_eq!(tr.final_state.v, z.v);
    }

    #[test]
    fn evolution_is_deterministic_and_a_cocycle() {
        let p = Process::new(ProcessConfig::default(), 0.0, 1.0).unwrap();
        let z = smooth_data(32, 2.0);
        let a = p.evolve(&z).unwrap();
        let b = p.evolve(&z).unwrap();
        assert_eq!(a.final_state.u, b.final_state.u);
        assert_eq!(a.final_state.v, b.final_state.v);

        let mut st = p.start(&z);
        p.advance(&mut st, 0.4, &mut []).unwrap();
        p.advance(&mut st, 1.0, &mut []).unwrap();
        let d = (&st.u - &a.final_state.u).sigma_norm(1.0) + (&st.v - &a.final_state.v).sigma_norm(0.0);
        assert!(d <= 1e-9, "cocycle defect {d}");
    }

    #[test]
    fn split_is_exact_superposition() {
        let p = Process::new(ProcessConfig::default(), 0.0, 1.0).unwrap();
        let z = smooth_data(32, 3.0);
        for mode in [SplitMode::Lemma48, SplitMode::Lemma410] {
            let run = p.evolve_split(&z, mode).unwrap();
            assert!(run.u1_part[0].norm_sq(0.0) == 0.0);
            let worst = run.residual.iter().cloned().fold(0.0, f64::max);
            assert!(worst <= 1e-7, "{mode:?}: {worst}");
        }
    }

    #[test]
    fn linear_split_carries_nothing() {
        let mut cfg = ProcessConfig::default();
        cfg.nl = Nonlinearity::Zero;
        cfg.g = cfg.basis.zeros();
        let p = Process::new(cfg, 0.0, 0.5).unwrap();
        let run = p
            .evolve_split(&smooth_data(32, 1.0), SplitMode::Lemma410)
            .unwrap();
        assert!(run.u1_part.iter().all(|s| s.u.is_zero() && s.v.is_zero()));
        for (f, a) in run.full.iter().zip(&run.u0_part) {
            assert_eq!(f.u, a.u);
        }
    }

    #[test]
    fn identical_pairs_have_zero_difference() {
        let p = Process::new(ProcessConfig::default(), 0.0, 0.3).unwrap();
        let z = smooth_data(32, 1.0);
        let run = p.difference_run(&z, &z).unwrap();
        assert!(run.samples.iter().all(|s| s.dist_sq == 0.0 && s.accum == 0.0));
    }

    #[test]
    fn blowup_is_a_fault() {
        let cfg = ProcessConfig {
            blowup_threshold: 1e-3,
            ..ProcessConfig::default()
        };
        let p = Process::new(cfg, 0.0, 1.0).unwrap();
        let err = p.evolve(&smooth_data(32, 1.0)).unwrap_err();
        assert!(matches!(err, DynamicsError::Blowup { .. }));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = ProcessConfig {
            dt: 0.0,
            ..ProcessConfig::default()
        };
        assert!(matches!(
            Process::new(cfg, 0.0, 1.0),
            Err(DynamicsError::Config(_))
        ));
        assert!(Process::new(ProcessConfig::default(), 1.0, 0.0).is_err());
    }
}
