//! Energy and Lyapunov functionals, integral-inequality monitors and
//! exponential decay fitting.

use std::io::Write;

use thiserror::Error;

use crate::dynamics::{ExtendedState, InitialData, Observer, Process, StepView};
use crate::history::{EtaNodes, HistoryError};
use crate::kernel::{total_mass, KernelError, MemoryKernel};
use crate::numeric::{cumulative_trapezoid, fit_line, geomspace};
use crate::spectral::{ModeBasis, Nonlinearity, Part, SpectralField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FunctionalError {
    #[error("samples are not on a uniform time grid (step {first} vs {other})")]
    NonUniformGrid { first: f64, other: f64 },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("sample arrays differ in length")]
    LengthMismatch,
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// `Φ = 2⟨A^{σ/2}u, A^{σ/2}v⟩`.
pub fn phi_of(u: &SpectralField, v: &SpectralField, sigma: f64) -> f64 {
    2.0 * u.inner_sigma(v, sigma)
}

pub fn phi(state: &ExtendedState, sigma: f64) -> f64 {
    phi_of(&state.u, &state.v, sigma)
}

/// `Ψ = −(2/κ) Σ_j w_j μ_t(s_j) ⟨A^{σ/2}η(s_j), A^{σ/2}v⟩`.
pub fn psi_of(v: &SpectralField, eta: &EtaNodes, mu_weights: &[f64], kappa: f64, sigma: f64) -> f64 {
    if kappa == 0.0 {
        return 0.0;
    }
    -2.0 / kappa * eta.weighted_inner(mu_weights, v, sigma - 1.0)
}

pub fn psi(state: &ExtendedState, kernel: &dyn MemoryKernel, sigma: f64) -> Result<f64, FunctionalError> {
    if kernel.is_zero() {
        return Ok(0.0);
    }
    let eta = state.history.eta_on_nodes(state.t)?;
    let w = state.history.quadrature().kernel_weights(kernel, state.t);
    Ok(psi_of(&state.v, &eta, &w, total_mass(kernel, state.t)?, sigma))
}

/// Constant `C` in `|Φ| + |Ψ| ≤ C E_σ`, from Cauchy–Schwarz and `λ₁ = 1`.
pub fn phi_psi_constant(kappa_inf: f64) -> f64 {
    2.0 * (1.0 + 1.0 / kappa_inf.sqrt())
}

/// The pieces of `Λ_σ = 𝓛_σ + 2ε(Φ + 4Ψ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaParts {
    /// `‖u‖²_{σ+1} + ‖v‖²_σ + 2⟨A^{σ/2}(f(u) − g), A^{σ/2}u⟩`.
    pub l: f64,
    pub memory: f64,
    pub phi: f64,
    pub psi: f64,
    pub lambda: f64,
}

/// Everything needed to evaluate `Λ_σ` apart from the state.
#[derive(Debug, Clone, Copy)]
pub struct LambdaSpec<'a> {
    pub sigma: f64,
    pub eps: f64,
    pub basis: &'a ModeBasis,
    pub nl: Nonlinearity,
    pub g: &'a SpectralField,
}

pub fn lambda_parts(
    spec: &LambdaSpec<'_>,
    u: &SpectralField,
    v: &SpectralField,
    eta: &EtaNodes,
    mu_weights: &[f64],
    kappa: f64,
) -> LambdaParts {
    let s = spec.sigma;
    let mut gamma = spec.basis.apply_nonlinearity(spec.nl, Part::Full, u);
    gamma -= spec.g;
    let l = u.sigma_norm_sq(s + 1.0) + v.sigma_norm_sq(s) + 2.0 * gamma.inner_sigma(u, s);
    let memory = eta.weighted_norm_sq(mu_weights, s);
    let phi = phi_of(u, v, s);
    let psi = psi_of(v, eta, mu_weights, kappa, s);
    LambdaParts {
        l,
        memory,
        phi,
        psi,
        lambda: l + memory + 2.0 * spec.eps * (phi + 4.0 * psi),
    }
}

pub fn lambda_functional(
    state: &ExtendedState,
    kernel: &dyn MemoryKernel,
    spec: &LambdaSpec<'_>,
) -> Result<LambdaParts, FunctionalError> {
    if !(spec.eps > 0.0 && spec.eps <= 1.0) {
        return Err(FunctionalError::Domain(format!(
            "eps = {} outside (0, 1]",
            spec.eps
        )));
    }
    let eta = state.history.eta_on_nodes(state.t)?;
    let w = state.history.quadrature().kernel_weights(kernel, state.t);
    let kappa = if kernel.is_zero() {
        0.0
    } else {
        total_mass(kernel, state.t)?
    };
    Ok(lambda_parts(spec, &state.u, &state.v, &eta, &w, kappa))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyRecord {
    pub t: f64,
    /// `E_σ` at σ = 0, 1/3, 1.
    pub energy: [f64; 3],
    pub memory_norms: [f64; 3],
    pub phi: f64,
    pub psi: f64,
    pub l_functional: f64,
    pub lambda_functional: f64,
}

/// Observer recording an [`EnergyRecord`] every `every` steps.
pub struct EnergyRecorder {
    pub sigma: f64,
    pub eps: f64,
    pub every: u64,
    pub records: Vec<EnergyRecord>,
}

impl EnergyRecorder {
    pub fn new(sigma: f64, eps: f64, every: u64) -> Self {
        Self {
            sigma,
            eps,
            every: every.max(1),
            records: Vec::new(),
        }
    }
}

impl Observer for EnergyRecorder {
    fn observe(&mut self, view: &StepView<'_>) {
        if !view.step.is_multiple_of(self.every) {
            return;
        }
        let cfg = view.process.config();
        let kernel = cfg.kernel.as_ref();
        let kappa = if kernel.is_zero() {
            0.0
        } else {
            total_mass(kernel, view.t).unwrap_or(f64::NAN)
        };
        let spec = LambdaSpec {
            sigma: self.sigma,
            eps: self.eps,
            basis: &cfg.basis,
            nl: cfg.nl,
            g: &cfg.g,
        };
        let parts = lambda_parts(&spec, view.u, view.v, view.eta, view.mu_weights, kappa);
        let memory_norms = crate::dynamics::SIGMAS.map(|s| view.eta.weighted_norm_sq(view.mu_weights, s));
        let energy = [0usize, 1, 2].map(|i| {
            let s = crate::dynamics::SIGMAS[i];
            0.5 * (view.u.sigma_norm_sq(s + 1.0) + view.v.sigma_norm_sq(s) + memory_norms[i])
        });
        self.records.push(EnergyRecord {
            t: view.t,
            energy,
            memory_norms,
            phi: parts.phi,
            psi: parts.psi,
            l_functional: parts.l + parts.memory,
            lambda_functional: parts.lambda,
        });
    }
}

/// One row of an inequality report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckRow {
    pub a: f64,
    pub b: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs − lhs`, divided by the scale of the check when relative.
    pub margin: f64,
}

pub fn write_check_csv<W: Write>(name: &str, rows: &[CheckRow], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["check_name", "a", "b", "lhs", "rhs", "margin"])?;
    for r in rows {
        out.write_record([
            name.to_string(),
            format!("{:e}", r.a),
            format!("{:e}", r.b),
            format!("{:e}", r.lhs),
            format!("{:e}", r.rhs),
            format!("{:e}", r.margin),
        ])?;
    }
    out.flush()?;
    Ok(())
}

fn uniform_step(times: &[f64]) -> Result<f64, FunctionalError> {
    if times.len() < 2 {
        return Err(FunctionalError::TooFewSamples {
            needed: 2,
            got: times.len(),
        });
    }
    let h = times[1] - times[0];
    for w in times.windows(2) {
        let d = w[1] - w[0];
        if (d - h).abs() > 1e-9 * h.abs().max(1e-300) {
            return Err(FunctionalError::NonUniformGrid { first: h, other: d });
        }
    }
    Ok(h)
}

/// Outcome of the integral-form Gronwall check. Violations are `lhs − rhs`
/// maxima, so nonpositive values mean the inequality holds.
#[derive(Debug, Clone, PartialEq)]
pub struct GronwallReport {
    pub hypothesis_violation: f64,
    pub q1_side_violation: f64,
    pub q2_side_violation: f64,
    pub conclusion_violation: f64,
    /// Worst conclusion row.
    pub worst_conclusion: CheckRow,
    pub pairs_checked: usize,
}

impl GronwallReport {
    pub fn hypothesis_holds(&self, tol: f64) -> bool {
        self.hypothesis_violation <= tol && self.q1_side_violation <= tol && self.q2_side_violation <= tol
    }

    pub fn conclusion_holds(&self, tol: f64) -> bool {
        self.conclusion_violation <= tol
    }
}

/// Checks, with trapezoid integrals on a uniform grid,
///
/// * the hypothesis `Λ(b) + 2ε∫Λ ≤ Λ(a) + ∫q₁Λ + ∫q₂` for all pairs `b − a ≥ min_gap` steps,
/// * `∫_a^b q₁ ≤ ε(b − a) + c₁` and `sup_t ∫_t^{t+1} q₂ ≤ c₂`,
/// * the conclusion `Λ(t) ≤ e^{c₁}[|Λ(τ)| e^{−ε(t−τ)} + c₂ e^ε / (1 − e^{−ε})]`.
#[allow(clippy::too_many_arguments)]
pub fn gronwall_check(
    times: &[f64],
    lambda: &[f64],
    q1: &[f64],
    q2: &[f64],
    eps: f64,
    c1: f64,
    c2: f64,
    min_gap: usize,
) -> Result<GronwallReport, FunctionalError> {
    let n = times.len();
    if lambda.len() != n || q1.len() != n || q2.len() != n {
        return Err(FunctionalError::LengthMismatch);
    }
    let h = uniform_step(times)?;
    if !(eps > 0.0) {
        return Err(FunctionalError::Domain(format!("eps = {eps} must be positive")));
    }
    let il = cumulative_trapezoid(lambda, h);
    let q1l: Vec<f64> = q1.iter().zip(lambda).map(|(a, b)| a * b).collect();
    let iq1l = cumulative_trapezoid(&q1l, h);
    let iq1 = cumulative_trapezoid(q1, h);
    let iq2 = cumulative_trapezoid(q2, h);

    let gap = min_gap.max(1);
    let mut hyp = f64::NEG_INFINITY;
    let mut side1 = f64::NEG_INFINITY;
    let mut pairs = 0;
    for a in 0..n {
        for b in (a + gap)..n {
            let lhs = lambda[b] + 2.0 * eps * (il[b] - il[a]);
            let rhs = lambda[a] + (iq1l[b] - iq1l[a]) + (iq2[b] - iq2[a]);
            hyp = hyp.max(lhs - rhs);
            side1 = side1.max((iq1[b] - iq1[a]) - eps * (times[b] - times[a]) - c1);
            pairs += 1;
        }
    }

    let unit = ((1.0 / h).round() as usize).clamp(1, n - 1);
    let mut side2 = f64::NEG_INFINITY;
    for a in 0..(n - unit) {
        side2 = side2.max(iq2[a + unit] - iq2[a] - c2);
    }
    if n - 1 < unit {
        side2 = iq2[n - 1] - c2;
    }

    let plateau = c2 * eps.exp() / (1.0 - (-eps).exp());
    let mut concl = f64::NEG_INFINITY;
    let mut worst = CheckRow {
        a: times[0],
        b: times[0],
        lhs: lambda[0],
        rhs: f64::INFINITY,
        margin: f64::INFINITY,
    };
    for i in 0..n {
        let bound = c1.exp() * (lambda[0].abs() * (-eps * (times[i] - times[0])).exp() + plateau);
        let v = lambda[i] - bound;
        if v > concl {
            concl = v;
            worst = CheckRow {
                a: times[0],
                b: times[i],
                lhs: lambda[i],
                rhs: bound,
                margin: bound - lambda[i],
            };
        }
    }
    Ok(GronwallReport {
        hypothesis_violation: hyp,
        q1_side_violation: side1,
        q2_side_violation: side2,
        conclusion_violation: concl,
        worst_conclusion: worst,
        pairs_checked: pairs,
    })
}

/// Smallest `c₁ ≥ 0` with `∫_a^b q₁ ≤ ε(b − a) + c₁` for all grid pairs.
pub fn measure_c1(q1: &[f64], h: f64, eps: f64) -> f64 {
    let iq = cumulative_trapezoid(q1, h);
    // max over a < b of (I_b − εb) − (I_a − εa): running minimum of the prefix.
    let mut best: f64 = 0.0;
    let mut low = f64::INFINITY;
    for (i, &v) in iq.iter().enumerate() {
        let x = v - eps * h * i as f64;
        if low.is_finite() {
            best = best.max(x - low);
        }
        low = low.min(x);
    }
    best
}

/// `sup_t ∫_t^{t+1} q₂` on the grid (the whole integral for shorter records).
pub fn measure_c2(q2: &[f64], h: f64) -> f64 {
    let iq = cumulative_trapezoid(q2, h);
    let n = iq.len();
    let unit = ((1.0 / h).round() as usize).max(1);
    if n <= unit {
        return iq[n - 1];
    }
    (0..n - unit).map(|a| iq[a + unit] - iq[a]).fold(0.0, f64::max)
}

/// Per-step record of the terms in the memory inequality
/// `N(b) − ∫_a^b D ≤ N(a) + 2∫_a^b C` with
/// `N = ‖η‖²_{M^σ}`, `D = ∫(∂_t μ + ∂_s μ)‖η‖²_{σ+1}`, `C = ⟨v, η⟩_{M^σ}`.
pub struct MemoryInequalityMonitor {
    pub sigma: f64,
    pub times: Vec<f64>,
    pub norm: Vec<f64>,
    pub dissipation: Vec<f64>,
    pub coupling: Vec<f64>,
}

impl MemoryInequalityMonitor {
    pub fn new(sigma: f64) -> Self {
        Self {
            sigma,
            times: Vec::new(),
            norm: Vec::new(),
            dissipation: Vec::new(),
            coupling: Vec::new(),
        }
    }

    /// Checks every pair of record indices on a `stride` subgrid with
    /// `b − a ≥ min_gap` steps. Time integrals use the trapezoid rule with
    /// the `h²/12` endpoint derivative correction. The margin is `rhs − lhs`
    /// divided by `N(a) + N(b) + ∫|D| + 2∫|C|`.
    pub fn report(&self, stride: usize, min_gap: usize) -> Result<MemoryInequalityReport, FunctionalError> {
        let h = uniform_step(&self.times)?;
        let n = self.times.len();
        let stride = stride.max(1);
        let mut worst = CheckRow {
            a: 0.0,
            b: 0.0,
            lhs: 0.0,
            rhs: 0.0,
            margin: f64::INFINITY,
        };
        let mut rows = Vec::new();
        let mut pairs = 0;
        let (d, c) = (&self.dissipation, &self.coupling);
        let (dd, dc) = (derivative(d, h), derivative(c, h));
        let corr = h * h / 12.0;
        for a in (0..n).step_by(stride) {
            let mut row_worst: Option<CheckRow> = None;
            // Integrals accumulated from `a` so that small late-time terms keep their precision.
            let (mut id, mut ic, mut iad, mut iac) = (0.0, 0.0, 0.0, 0.0);
            for b in (a + 1)..n {
                id += 0.5 * h * (d[b - 1] + d[b]);
                ic += 0.5 * h * (c[b - 1] + c[b]);
                iad += 0.5 * h * (d[b - 1].abs() + d[b].abs());
                iac += 0.5 * h * (c[b - 1].abs() + c[b].abs());
                if b - a < min_gap.max(1) || ((b - a) % stride != 0 && b != n - 1) {
                    continue;
                }
                let lhs = self.norm[b] - (id - corr * (dd[b] - dd[a]));
                let rhs = self.norm[a] + 2.0 * (ic - corr * (dc[b] - dc[a]));
                let scale = self.norm[a] + self.norm[b] + iad + 2.0 * iac;
                let margin = if scale > 0.0 { (rhs - lhs) / scale } else { 0.0 };
                let row = CheckRow {
                    a: self.times[a],
                    b: self.times[b],
                    lhs,
                    rhs,
                    margin,
                };
                if row_worst.is_none_or(|w| margin < w.margin) {
                    row_worst = Some(row);
                }
                pairs += 1;
            }
            if let Some(r) = row_worst {
                if r.margin < worst.margin {
                    worst = r;
                }
                rows.push(r);
            }
        }
        Ok(MemoryInequalityReport {
            sigma: self.sigma,
            worst,
            pairs_checked: pairs,
            rows,
        })
    }
}

/// Second-order finite-difference derivative on a uniform grid.
fn derivative(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    if n < 3 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|i| match i {
            0 => (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h),
            i if i == n - 1 => (3.0 * f[i] - 4.0 * f[i - 1] + f[i - 2]) / (2.0 * h),
            i => (f[i + 1] - f[i - 1]) / (2.0 * h),
        })
        .collect()
}

impl Observer for MemoryInequalityMonitor {
    fn observe(&mut self, view: &StepView<'_>) {
        let q = view.process.quadrature();
        let kernel = view.process.config().kernel.as_ref();
        self.times.push(view.t);
        if q.is_empty() || kernel.is_zero() {
            self.norm.push(0.0);
            self.dissipation.push(0.0);
            self.coupling.push(0.0);
            return;
        }
        let dw = q.dissipation_weights(kernel, view.t);
        self.norm
            .push(view.eta.weighted_norm_sq(view.mu_weights, self.sigma));
        self.dissipation.push(view.eta.weighted_norm_sq(&dw, self.sigma));
        self.coupling
            .push(view.eta.weighted_inner(view.mu_weights, view.v, self.sigma));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryInequalityReport {
    pub sigma: f64,
    pub worst: CheckRow,
    pub pairs_checked: usize,
    /// The worst pair for each start time.
    pub rows: Vec<CheckRow>,
}

/// Runs `process` from `z` and checks the memory inequality at each σ.
pub fn memory_inequality_check(
    process: &Process,
    z: &InitialData,
    sigmas: &[f64],
    stride: usize,
    min_gap: usize,
) -> Result<Vec<MemoryInequalityReport>, Box<dyn std::error::Error + Send + Sync>> {
    let mut monitors: Vec<MemoryInequalityMonitor> =
        sigmas.iter().map(|&s| MemoryInequalityMonitor::new(s)).collect();
    {
        let mut obs: Vec<&mut dyn Observer> = monitors.iter_mut().map(|m| m as &mut dyn Observer).collect();
        process.evolve_observed(z, &mut obs)?;
    }
    monitors
        .iter()
        .map(|m| m.report(stride, min_gap).map_err(Into::into))
        .collect()
}

/// `E(t) ≈ Q e^{−ω(t − t₀)} + R₀`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub omega: f64,
    pub amplitude: f64,
    pub plateau: f64,
    /// Root-mean-square residual of `ln(E − R₀)` against the fitted line.
    pub rms_residual: f64,
    pub window: (f64, f64),
    /// Set when no decay was detected (constant data or a nonnegative slope).
    pub no_decay: bool,
}

impl DecayFit {
    pub fn write_csv<W: Write>(fits: &[DecayFit], w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["omega", "Q", "R0", "residual"])?;
        for f in fits {
            out.write_record([
                format!("{:e}", f.omega),
                format!("{:e}", f.amplitude),
                format!("{:e}", f.plateau),
                format!("{:e}", f.rms_residual),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

pub const MIN_FIT_SAMPLES: usize = 20;
const RATE_CANDIDATES: usize = 400;

/// The nonincreasing majorant `M_i = max_{j ≥ i} E_j`.
pub fn upper_envelope(values: &[f64]) -> Vec<f64> {
    let mut out = values.to_vec();
    for i in (0..out.len().saturating_sub(1)).rev() {
        out[i] = out[i].max(out[i + 1]);
    }
    out
}

fn windowed(
    times: &[f64],
    values: &[f64],
    window: (f64, f64),
) -> Result<(Vec<f64>, Vec<f64>), FunctionalError> {
    if times.len() != values.len() {
        return Err(FunctionalError::LengthMismatch);
    }
    let (t, e): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= window.0 && **t <= window.1)
        .map(|(a, b)| (*a, *b))
        .unzip();
    if t.len() < MIN_FIT_SAMPLES {
        return Err(FunctionalError::TooFewSamples {
            needed: MIN_FIT_SAMPLES,
            got: t.len(),
        });
    }
    Ok((t, e))
}

fn log_fit(t: &[f64], e: &[f64], r0: f64, t0: f64) -> Option<(f64, f64, f64)> {
    let x: Vec<f64> = t.iter().map(|v| v - t0).collect();
    let y: Vec<f64> = e.iter().map(|v| (v - r0).ln()).collect();
    if y.iter().any(|v| !v.is_finite()) {
        return None;
    }
    fit_line(&x, &y).map(|f| (f.slope, f.intercept, f.rms))
}

fn finish(slope: f64, intercept: f64, rms: f64, plateau: f64, window: (f64, f64)) -> DecayFit {
    let no_decay = !(slope < 0.0);
    DecayFit {
        omega: if no_decay { 0.0 } else { -slope },
        amplitude: intercept.exp(),
        plateau,
        rms_residual: rms,
        window,
        no_decay,
    }
}

fn constant_fit(e: &[f64], window: (f64, f64)) -> DecayFit {
    DecayFit {
        omega: 0.0,
        amplitude: 0.0,
        plateau: e.iter().sum::<f64>() / e.len() as f64,
        rms_residual: 0.0,
        window,
        no_decay: true,
    }
}

/// Fits `Q e^{−ω(t − t₀)} + R₀` to the nonincreasing envelope of the samples
/// inside `window`; `t₀` is the first sample time.
///
/// For each trial `ω` the pair `(Q, R₀ ≥ 0)` is the weighted linear
/// least-squares solution; `ω` is scanned on a log grid spanning `[10⁻³, 10³]/T` for the window
/// length `T` and refined by golden-section search in `ln ω`. Misfits are
/// relative to the envelope value; the reported residual is their root mean square.
pub fn fit_decay(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<DecayFit, FunctionalError> {
    let t0 = *times.first().ok_or(FunctionalError::TooFewSamples {
        needed: MIN_FIT_SAMPLES,
        got: 0,
    })?;
    let (t, e) = windowed(times, values, window)?;
    let m = upper_envelope(&e);
    let hi = m.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = m.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(hi - lo > 1e-12 * hi.abs()) || lo <= 0.0 && hi <= 0.0 {
        return Ok(constant_fit(&e, window));
    }
    let floor = 1e-12 * hi.abs();
    let x: Vec<f64> = t.iter().map(|v| v - t0).collect();
    let span = x.last().copied().unwrap_or(0.0) - x[0];
    let span = if span > 0.0 { span } else { 1.0 };
    let grid = geomspace(1e-3 / span, 1e3 / span, RATE_CANDIDATES);
    let score = |ln_w: f64| projected_fit(&x, &m, ln_w.exp(), floor).3;
    let scores: Vec<f64> = grid.iter().map(|w| score(w.ln())).collect();
    let (best, _) = scores.iter().enumerate().fold(
        (0, f64::INFINITY),
        |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc },
    );
    let left = grid[best.saturating_sub(1)].ln();
    let right = grid[(best + 1).min(grid.len() - 1)].ln();
    let omega = golden_min(&score, left, right, grid[best].ln(), 60).exp();
    let (q, r0, _, sse) = projected_fit(&x, &m, omega, floor);
    let rms = (sse / m.len() as f64).sqrt();
    let no_decay = best == 0 || q <= 0.0;
    Ok(DecayFit {
        omega: if no_decay { 0.0 } else { omega },
        amplitude: q,
        plateau: r0,
        rms_residual: rms,
        window,
        no_decay,
    })
}

/// Relative least-squares `(Q, R₀ ≥ 0)` for fixed `ω`, weighting each sample
/// by `1/y²`, with the weighted squared misfit.
fn projected_fit(x: &[f64], y: &[f64], omega: f64, floor: f64) -> (f64, f64, f64, f64) {
    let (mut sw, mut sp, mut spp, mut sy, mut spy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (xi, yi) in x.iter().zip(y) {
        let w = 1.0 / yi.abs().max(floor).powi(2);
        let p = (-omega * xi).exp();
        sw += w;
        sp += w * p;
        spp += w * p * p;
        sy += w * yi;
        spy += w * p * yi;
    }
    let det = sw * spp - sp * sp;
    let (mut q, mut r0) = if det > 1e-14 * sw * spp {
        ((sw * spy - sp * sy) / det, (spp * sy - sp * spy) / det)
    } else {
        (spy / spp, 0.0)
    };
    if r0 < 0.0 {
        r0 = 0.0;
        q = spy / spp;
    }
    let sse = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| ((q * (-omega * xi).exp() + r0 - yi) / yi.abs().max(floor)).powi(2))
        .sum();
    (q, r0, omega, sse)
}

/// Pure exponential fit `Q e^{−ω(t − t₀)}` (no plateau) of the raw samples.
pub fn fit_exponential(
    times: &[f64],
    values: &[f64],
    window: (f64, f64),
) -> Result<DecayFit, FunctionalError> {
    let t0 = *times.first().ok_or(FunctionalError::TooFewSamples {
        needed: MIN_FIT_SAMPLES,
        got: 0,
    })?;
    let (t, e) = windowed(times, values, window)?;
    if e.iter().any(|&v| v <= 0.0) {
        return Err(FunctionalError::Domain(
            "exponential fit needs positive samples".into(),
        ));
    }
    let (slope, intercept, rms) =
        log_fit(&t, &e, 0.0, t0).ok_or(FunctionalError::Domain("degenerate time window".into()))?;
    Ok(finish(slope, intercept, rms, 0.0, window))
}

/// Fraction of the variance of `ln E` over the fit window left unexplained by
/// a pure exponential fit, `rms² / Var(ln E)`.
pub fn unexplained_fraction(fit: &DecayFit, times: &[f64], values: &[f64]) -> Result<f64, FunctionalError> {
    let (_, e) = windowed(times, values, fit.window)?;
    let y: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64;
    if !(var > 0.0) {
        return Err(FunctionalError::Domain("constant samples in fit window".into()));
    }
    Ok(fit.rms_residual.powi(2) / var)
}

/// Golden-section minimisation on `[a, b]`, keeping `start` if nothing beats it.
fn golden_min(f: &impl Fn(f64) -> f64, a: f64, b: f64, start: f64, iters: usize) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (a, b);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    if f(x) <= f(start) {
        x
    } else {
        start
    }
}

/// Fractal dimension bound `ln m / ln(1/(2η))`.
pub fn dimension_bound(eta: f64, m_z: f64) -> Result<f64, FunctionalError> {
    if !(eta > 0.0 && eta < 0.5) {
        return Err(FunctionalError::Domain(format!("eta = {eta} outside (0, 1/2)")));
    }
    if !(m_z >= 1.0) {
        return Err(FunctionalError::Domain(format!("packing number {m_z} below 1")));
    }
    Ok(m_z.ln() / (1.0 / (2.0 * eta)).ln())
}

/// `θ = Tκ / (2(ln L₁ + Tκ))` and `β′ = min(κ/2, Tκβ / (2(ln L₁ + Tκ)))`.
pub fn rate_compose(t: f64, kappa: f64, beta: f64, l1: f64) -> Result<(f64, f64), FunctionalError> {
    if !(t > 0.0 && kappa > 0.0 && beta > 0.0) {
        return Err(FunctionalError::Domain(
            "T, kappa and beta must be positive".into(),
        ));
    }
    if !(l1 >= 1.0) {
        return Err(FunctionalError::Domain(format!(
            "Lipschitz constant L1 = {l1} below 1"
        )));
    }
    let tk = t * kappa;
    let denom = 2.0 * (l1.ln() + tk);
    let theta = tk / denom;
    let beta_prime = (0.5 * kappa).min(tk * beta / denom);
    Ok((theta, beta_prime))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ProcessConfig;
    use crate::history::{InitialHistory, Profile, SQuadrature};
    use crate::kernel::ArctanExponentialKernel;
    use crate::numeric::linspace;
    use std::sync::Arc;

    #[test]
    fn phi_examples() {
        let z = SpectralField::zeros(4);
        assert_eq!(phi_of(&z, &z, 0.0), 0.0);
        let e1 = SpectralField::mode(4, 1);
        assert_eq!(phi_of(&e1, &e1, 0.0), 2.0);
        let e2 = SpectralField::mode(4, 2);
        assert_eq!(phi_of(&e2, &e2, 1.0), 8.0);
    }

    fn frozen_state(t: f64, v: SpectralField, hist: InitialHistory) -> ExtendedState {
        let k = ArctanExponentialKernel;
        let q = Arc::new(SQuadrature::for_kernel(&k, t, t, 1e-10).unwrap());
        let n = v.len();
        let history =
            crate::history::HistoryBuffer::new(t, 0.01, q, hist, SpectralField::zeros(n), v.clone());
        ExtendedState {
            t,
            u: SpectralField::zeros(n),
            v,
            history,
        }
    }

    #[test]
    fn psi_exponential_history() {
        let k = ArctanExponentialKernel;
        let t = 0.3;
        let eps = ArctanExponentialKernel::eps(t);
        let e1 = SpectralField::mode(4, 1);
        let st = frozen_state(
            t,
            e1.clone(),
            InitialHistory::Separable(vec![(Profile::Exp { ell: 1.0 }, e1)]),
        );
        // −(2/κ) ∫ ε⁻² e^{−s/ε} e^{−s} ds with κ = 1/ε.
        let exact = -2.0 * eps / (eps + eps * eps);
        let got = psi(&st, &k, 0.0).unwrap();
        assert!((got / exact - 1.0).abs() < 1e-5, "{got} vs {exact}");
        let st0 = frozen_state(t, SpectralField::mode(4, 1), InitialHistory::Zero);
        assert_eq!(psi(&st0, &k, 0.0).unwrap(), 0.0);
        // v against the history direction makes Ψ positive.
        let st2 = frozen_state(
            t,
            SpectralField::mode(4, 1).scaled(-1.0),
            InitialHistory::Separable(vec![(Profile::Exp { ell: 1.0 }, SpectralField::mode(4, 1))]),
        );
        assert!(psi(&st2, &k, 0.0).unwrap() > 0.0);
    }

    #[test]
    fn lambda_collapses_without_forcing() {
        let k = ArctanExponentialKernel;
        let e2 = SpectralField::mode(4, 2);
        let st = frozen_state(
            0.0,
            e2.clone(),
            InitialHistory::Separable(vec![(Profile::Exp { ell: 0.5 }, e2)]),
        );
        let basis = ModeBasis::new(4);
        let g = basis.zeros();
        let spec = LambdaSpec {
            sigma: 1.0 / 3.0,
            eps: 1e-12,
            basis: &basis,
            nl: Nonlinearity::Zero,
            g: &g,
        };
        let p = lambda_functional(&st, &k, &spec).unwrap();
        let direct = st.u.sigma_norm_sq(4.0 / 3.0) + st.v.sigma_norm_sq(1.0 / 3.0) + p.memory;
        assert!((p.lambda - direct).abs() < 1e-9 * direct);
        assert!(lambda_functional(&st, &k, &LambdaSpec { eps: 0.0, ..spec }).is_err());
    }

    #[test]
    fn gronwall_pure_decay_and_constant() {
        let t = linspace(0.0, 10.0, 2001);
        let eps = 0.2;
        let lam: Vec<f64> = t.iter().map(|x| 3.0 * (-2.0 * eps * x).exp()).collect();
        let z = vec![0.0; t.len()];
        let r = gronwall_check(&t, &lam, &z, &z, eps, 0.0, 0.0, 1).unwrap();
        // Equality in continuous time; the trapezoid rule overshoots by O(h²).
        assert!(r.hypothesis_holds(1e-5), "{r:?}");
        assert!(r.conclusion_holds(0.0));

        let k = 2.5;
        let lam = vec![k; t.len()];
        let q2 = vec![2.0 * eps * k; t.len()];
        let r = gronwall_check(&t, &lam, &z, &q2, eps, 0.0, 2.0 * eps * k, 1).unwrap();
        assert!(r.hypothesis_violation.abs() < 1e-12);
        assert!(r.conclusion_holds(0.0));
        assert!(r.worst_conclusion.rhs > k);
    }

    #[test]
    fn gronwall_rejects_nonuniform_grid() {
        let t = vec![0.0, 1.0, 3.0];
        let z = vec![0.0; 3];
        assert!(matches!(
            gronwall_check(&t, &z, &z, &z, 0.1, 0.0, 0.0, 1),
            Err(FunctionalError::NonUniformGrid { .. })
        ));
    }

    #[test]
    fn c1_and_c2_measurements() {
        let h = 0.01;
        let q1 = vec![1.0; 101];
        assert!((measure_c1(&q1, h, 1.0)).abs() < 1e-12);
        assert!((measure_c1(&q1, h, 0.5) - 0.5).abs() < 1e-9);
        let q2 = vec![2.0; 301];
        assert!((measure_c2(&q2, h) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn decay_fit_recovers_synthetic_parameters() {
        let t = linspace(0.0, 20.0, 401);
        let e: Vec<f64> = t.iter().map(|x| 5.0 * (-0.3 * x).exp() + 1.0).collect();
        let f = fit_decay(&t, &e, (0.0, 20.0)).unwrap();
        assert!((f.omega / 0.3 - 1.0).abs() < 0.01, "{f:?}");
        assert!((f.amplitude / 5.0 - 1.0).abs() < 0.01, "{f:?}");
        assert!((f.plateau - 1.0).abs() < 0.01, "{f:?}");

        let e: Vec<f64> = t.iter().map(|x| (-x).exp()).collect();
        let f = fit_decay(&t, &e, (0.0, 20.0)).unwrap();
        assert!((f.omega - 1.0).abs() < 0.01 && f.plateau < 0.01, "{f:?}");
    }

    #[test]
    fn decay_fit_flags_constant_data() {
        let t = linspace(0.0, 1.0, 30);
        let f = fit_decay(&t, &vec![2.0; 30], (0.0, 1.0)).unwrap();
        assert!(f.no_decay && f.omega == 0.0);
        assert!(fit_decay(&t[..5], &[1.0; 5], (0.0, 1.0)).is_err());
    }

    #[test]
    fn decay_fit_is_scale_equivariant() {
        let t = linspace(0.0, 10.0, 101);
        let e: Vec<f64> = t
            .iter()
            .map(|x| 2.0 * (-0.7 * x).exp() + 0.3 + 0.01 * (3.0 * x).sin() * (-x).exp())
            .collect();
        let f = fit_decay(&t, &e, (0.0, 10.0)).unwrap();
        let lam = 37.5;
        let es: Vec<f64> = e.iter().map(|v| lam * v).collect();
        let g = fit_decay(&t, &es, (0.0, 10.0)).unwrap();
        assert!((g.omega - f.omega).abs() < 1e-6 * f.omega);
        assert!((g.plateau - lam * f.plateau).abs() < 1e-6 * lam * f.plateau.max(1e-12));
        assert!((g.amplitude - lam * f.amplitude).abs() < 1e-6 * lam * f.amplitude);
    }

    #[test]
    fn dimension_bound_examples() {
        assert_eq!(dimension_bound(0.25, 1.0).unwrap(), 0.0);
        assert!((dimension_bound(0.25, 4.0).unwrap() - 2.0).abs() < 1e-12);
        assert!((dimension_bound(0.1, 25.0).unwrap() - 2.0).abs() < 1e-12);
        assert!(dimension_bound(0.5, 4.0).is_err());
    }

    #[test]
    fn rate_compose_examples() {
        let e = std::f64::consts::E;
        let (th, bp) = rate_compose(1.0, 1.0, 3.0, e).unwrap();
        assert!((th - 0.25).abs() < 1e-15);
        assert!((bp - 0.5f64.min(3.0 / 4.0)).abs() < 1e-15);
        let (th, bp) = rate_compose(1.0, 2.0, 1.0, 1.0).unwrap();
        assert!((th - 0.5).abs() < 1e-15 && (bp - 0.5).abs() < 1e-15);
        let (_, bp) = rate_compose(1.0, 1.0, 1e12, e).unwrap();
        assert_eq!(bp, 0.5);
        assert!(rate_compose(1.0, 1.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn memory_inequality_on_short_run() {
        let p = Process::new(ProcessConfig::default(), 0.0, 2.0).unwrap();
        let n = 32;
        let u = SpectralField::from_coeffs((1..=n).map(|k| 1.0 / (k * k) as f64).collect());
        let v = u.scaled(-0.5);
        let z = InitialData {
            history: InitialHistory::Separable(vec![
                (Profile::RampExp { ell: 0.39 }, v.clone()),
                (Profile::Saturating { ell: 0.39 }, u.scaled(0.2)),
            ]),
            u,
            v,
        };
        let reps = memory_inequality_check(&p, &z, &[0.0, 1.0], 10, 5).unwrap();
        for r in reps {
            assert!(r.worst.margin >= -1e-4, "σ = {}: {:?}", r.sigma, r.worst);
        }
    }
}
