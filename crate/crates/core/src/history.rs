//! History variable `η^t(s)` reconstructed from the stored past trajectory:
//!
//! ```text
//! η^t(s) = u(t) − u(t−s)                 for s ≤ t − τ
//! η^t(s) = η_τ(s − t + τ) + u(t) − u_τ   for s > t − τ
//! ```
//!
//! The past is stored as `(u, ∂_t u)` snapshots on a uniform grid and
//! interpolated with cubic Hermite polynomials. Memory integrals use a fixed
//! [`SQuadrature`] in the memory age `s`.

use std::collections::VecDeque;
use std::io::Write;
use std::sync::Arc;

use thiserror::Error;

use crate::kernel::{length_scale, mu_at_zero, tail_mass, total_mass, KernelError, MemoryKernel};
use crate::numeric::linspace;
use crate::spectral::{eigenvalue, SpectralField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HistoryError {
    #[error("history window underrun: time {requested} precedes oldest retained snapshot {oldest}")]
    WindowUnderrun { requested: f64, oldest: f64 },
    #[error("time {t} outside the recorded range [{lo}, {hi}]")]
    OutOfRange { t: f64, lo: f64, hi: f64 },
    #[error("quadrature tail mass {tail:e} beyond s_max = {s_max} at t = {t} exceeds tolerance")]
    Tail { t: f64, s_max: f64, tail: f64 },
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Default relative tail mass beyond `s_max`.
pub const DEFAULT_TAIL_TOL: f64 = 1e-8;
/// Quadrature nodes per decade of memory age.
pub const NODES_PER_DECADE: f64 = 128.0;

/// Nodes and weights on `[0, s_max]`: the origin plus a geometric grid.
///
/// Weights are the trapezoid rule in `ln s` on the geometric part and the
/// ordinary trapezoid rule on `[0, s_1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SQuadrature {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    s_max: f64,
    t_range: (f64, f64),
    tail_tol: f64,
}

impl SQuadrature {
    /// Geometric grid from `s_min` to `s_max` with `per_decade` nodes per decade.
    pub fn geometric(s_min: f64, s_max: f64, per_decade: f64) -> Self {
        assert!(s_min > 0.0 && s_max > s_min);
        let decades = (s_max / s_min).log10();
        let count = (per_decade * decades).ceil() as usize + 1;
        let h = (s_max / s_min).ln() / (count - 1) as f64;
        let mut nodes = Vec::with_capacity(count + 1);
        let mut weights = Vec::with_capacity(count + 1);
        nodes.push(0.0);
        weights.push(0.5 * s_min);
        for i in 0..count {
            let s = if i + 1 == count {
                s_max
            } else {
                s_min * (h * i as f64).exp()
            };
            let end = i == 0 || i + 1 == count;
            nodes.push(s);
            weights.push(if end { 0.5 * h * s } else { h * s });
        }
        weights[1] += 0.5 * s_min;
        Self {
            nodes,
            weights,
            s_max,
            t_range: (f64::NEG_INFINITY, f64::INFINITY),
            tail_tol: f64::INFINITY,
        }
    }

    /// A grid resolving `kernel` for every `t ∈ [t_lo, t_hi]`: the finest decay
    /// length sets the first node, and `s_max` leaves a relative tail mass below
    /// `tail_tol` at all times in the range.
    pub fn for_kernel(
        kernel: &dyn MemoryKernel,
        t_lo: f64,
        t_hi: f64,
        tail_tol: f64,
    ) -> Result<Self, HistoryError> {
        if kernel.is_zero() {
            return Ok(Self {
                nodes: Vec::new(),
                weights: Vec::new(),
                s_max: 0.0,
                t_range: (t_lo, t_hi),
                tail_tol,
            });
        }
        let times = if t_hi > t_lo {
            linspace(t_lo, t_hi, 65)
        } else {
            vec![t_lo]
        };
        let mut l_min = f64::INFINITY;
        let mut s_max: f64 = 0.0;
        for &t in &times {
            let l = length_scale(kernel, t)?;
            l_min = l_min.min(l);
            let kappa = total_mass(kernel, t)?;
            let mut s = l.max(s_max);
            while tail_mass(kernel, t, s)? > tail_tol * kappa {
                s *= 1.25;
                if s > 1e6 {
                    return Err(HistoryError::Tail {
                        t,
                        s_max: s,
                        tail: tail_mass(kernel, t, s)?,
                    });
                }
            }
            s_max = s_max.max(s);
        }
        let mut q = Self::geometric(1e-3 * l_min, s_max, NODES_PER_DECADE);
        q.t_range = (t_lo, t_hi);
        q.tail_tol = tail_tol;
        Ok(q)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn s_max(&self) -> f64 {
        self.s_max
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `w_j μ_t(s_j)`, using the `s → 0⁺` limit at the origin node.
    pub fn kernel_weights(&self, kernel: &dyn MemoryKernel, t: f64) -> Vec<f64> {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&s, &w)| {
                let m = if s == 0.0 {
                    mu_at_zero(kernel, t)
                } else {
                    kernel.mu(t, s)
                };
                w * m
            })
            .collect()
    }

    /// `w_j (∂_t μ + ∂_s μ)(t, s_j)`; the origin node uses the smallest positive age.
    pub fn dissipation_weights(&self, kernel: &dyn MemoryKernel, t: f64) -> Vec<f64> {
        let first = self.nodes.get(1).copied().unwrap_or(1.0);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&s, &w)| {
                let s = if s == 0.0 { first } else { s };
                w * (kernel.dmu_dt(t, s) + kernel.dmu_ds(t, s))
            })
            .collect()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&s, &w)| w * f(s))
            .sum()
    }

    /// Relative error of the discrete mass at `t` against `κ(t)`.
    pub fn mass_error(&self, kernel: &dyn MemoryKernel, t: f64) -> Result<f64, KernelError> {
        let k = total_mass(kernel, t)?;
        let q: f64 = self.kernel_weights(kernel, t).iter().sum();
        Ok(if k == 0.0 { q.abs() } else { (q - k).abs() / k })
    }

    /// Errors when `t` lies outside the certified range and the kernel tail
    /// beyond `s_max` is too heavy there.
    pub fn check_tail(&self, kernel: &dyn MemoryKernel, t: f64) -> Result<(), HistoryError> {
        if self.is_empty() || (t >= self.t_range.0 && t <= self.t_range.1) {
            return Ok(());
        }
        let tail = tail_mass(kernel, t, self.s_max)?;
        let kappa = total_mass(kernel, t)?;
        if tail > self.tail_tol * kappa {
            return Err(HistoryError::Tail {
                t,
                s_max: self.s_max,
                tail,
            });
        }
        Ok(())
    }
}

/// Scalar age profiles for separable initial histories.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Profile {
    /// `e^{−s/ℓ}`
    Exp { ell: f64 },
    /// `s e^{−s/ℓ}`
    RampExp { ell: f64 },
    /// `(1 − e^{−s/ℓ})²`
    Saturating { ell: f64 },
    /// `1`
    One,
}

impl Profile {
    pub fn eval(self, s: f64) -> f64 {
        match self {
            Profile::Exp { ell } => (-s / ell).exp(),
            Profile::RampExp { ell } => s * (-s / ell).exp(),
            Profile::Saturating { ell } => {
                let a = -(-s / ell).exp_m1();
                a * a
            }
            Profile::One => 1.0,
        }
    }
}

/// The assigned history `η_τ`.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum InitialHistory {
    #[default]
    Zero,
    /// Piecewise linear in `s` through the nodes, constant beyond the last node.
    Sampled {
        s_nodes: Vec<f64>,
        values: Vec<SpectralField>,
    },
    /// `Σ profile_i(s) · field_i`.
    Separable(Vec<(Profile, SpectralField)>),
}

impl InitialHistory {
    pub fn sampled(s_nodes: Vec<f64>, values: Vec<SpectralField>) -> Self {
        assert_eq!(s_nodes.len(), values.len());
        assert!(s_nodes.windows(2).all(|w| w[0] < w[1]), "ages must increase");
        InitialHistory::Sampled { s_nodes, values }
    }

    /// Samples `f` at the given ages.
    pub fn from_fn(s_nodes: &[f64], f: impl Fn(f64) -> SpectralField) -> Self {
        let values = s_nodes.iter().map(|&s| f(s)).collect();
        Self::sampled(s_nodes.to_vec(), values)
    }

    /// Adds `η_τ(s)` into `out`.
    pub fn add_into(&self, s: f64, out: &mut [f64]) {
        match self {
            InitialHistory::Zero => {}
            InitialHistory::Sampled { s_nodes, values } => {
                if s_nodes.is_empty() {
                    return;
                }
                let i = s_nodes.partition_point(|&x| x <= s);
                if i == 0 {
                    // Below the first node: interpolate towards zero at s = 0 when the
                    // first node is positive.
                    let (s0, v0) = (s_nodes[0], &values[0]);
                    let a = if s0 > 0.0 { (s / s0).clamp(0.0, 1.0) } else { 1.0 };
                    add_scaled(out, a, v0.coeffs());
                } else if i == s_nodes.len() {
                    add_scaled(out, 1.0, values[i - 1].coeffs());
                } else {
                    let (s0, s1) = (s_nodes[i - 1], s_nodes[i]);
                    let th = (s - s0) / (s1 - s0);
                    add_scaled(out, 1.0 - th, values[i - 1].coeffs());
                    add_scaled(out, th, values[i].coeffs());
                }
            }
            InitialHistory::Separable(terms) => {
                for (p, f) in terms {
                    add_scaled(out, p.eval(s), f.coeffs());
                }
            }
        }
    }

    pub fn eval(&self, s: f64, n_modes: usize) -> SpectralField {
        let mut out = vec![0.0; n_modes];
        self.add_into(s, &mut out);
        SpectralField::from_coeffs(out)
    }
}

fn add_scaled(out: &mut [f64], a: f64, x: &[f64]) {
    if a == 0.0 {
        return;
    }
    for (o, v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Head {
    t: f64,
    u: SpectralField,
    v: SpectralField,
}

/// Uniformly sampled past trajectory plus the initial data `(u_τ, η_τ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryBuffer {
    dt: f64,
    origin: f64,
    window: f64,
    quadrature: Arc<SQuadrature>,
    initial: InitialHistory,
    u_tau: SpectralField,
    first_index: u64,
    snaps_u: VecDeque<SpectralField>,
    snaps_v: VecDeque<SpectralField>,
    head: Option<Head>,
}

impl HistoryBuffer {
    pub fn new(
        origin: f64,
        dt: f64,
        quadrature: Arc<SQuadrature>,
        initial: InitialHistory,
        u_tau: SpectralField,
        v_tau: SpectralField,
    ) -> Self {
        assert!(dt > 0.0);
        let window = quadrature.s_max();
        let mut snaps_u = VecDeque::new();
        let mut snaps_v = VecDeque::new();
        snaps_u.push_back(u_tau.clone());
        snaps_v.push_back(v_tau);
        Self {
            dt,
            origin,
            window,
            quadrature,
            initial,
            u_tau,
            first_index: 0,
            snaps_u,
            snaps_v,
            head: None,
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    pub fn quadrature(&self) -> &SQuadrature {
        &self.quadrature
    }

    pub fn shared_quadrature(&self) -> Arc<SQuadrature> {
        Arc::clone(&self.quadrature)
    }

    pub fn initial(&self) -> &InitialHistory {
        &self.initial
    }

    pub fn u_tau(&self) -> &SpectralField {
        &self.u_tau
    }

    pub fn n_modes(&self) -> usize {
        self.u_tau.len()
    }

    fn snap_time(&self, i: usize) -> f64 {
        self.origin + (self.first_index + i as u64) as f64 * self.dt
    }

    /// Steps recorded since the origin.
    pub fn steps(&self) -> u64 {
        self.first_index + self.snaps_u.len() as u64 - 1
    }

    pub fn latest_time(&self) -> f64 {
        self.snap_time(self.snaps_u.len() - 1)
    }

    pub fn oldest_time(&self) -> f64 {
        self.snap_time(0)
    }

    /// Time of the most recent state, including a provisional head.
    pub fn head_time(&self) -> f64 {
        self.head.as_ref().map_or_else(|| self.latest_time(), |h| h.t)
    }

    pub fn latest(&self) -> (&SpectralField, &SpectralField) {
        (self.snaps_u.back().unwrap(), self.snaps_v.back().unwrap())
    }

    /// Appends the state one step after the latest snapshot and discards
    /// snapshots older than the window.
    pub fn push(&mut self, u: SpectralField, v: SpectralField) {
        self.head = None;
        self.snaps_u.push_back(u);
        self.snaps_v.push_back(v);
        let keep_from = self.latest_time() - self.window - 2.0 * self.dt;
        while self.snaps_u.len() > 2 && self.snap_time(1) < keep_from {
            self.snaps_u.pop_front();
            self.snaps_v.pop_front();
            self.first_index += 1;
        }
    }

    /// Provisional state between the latest snapshot and the next one.
    pub fn set_head(&mut self, t: f64, u: SpectralField, v: SpectralField) {
        debug_assert!(t >= self.latest_time());
        self.head = Some(Head { t, u, v });
    }

    pub fn clear_head(&mut self) {
        self.head = None;
    }

    /// Adds `a · u(r)` into `out`, interpolating between snapshots.
    fn add_u_at(&self, r: f64, a: f64, out: &mut [f64]) -> Result<(), HistoryError> {
        let latest = self.latest_time();
        if let Some(h) = &self.head {
            if r > latest {
                if r > h.t * (1.0 + 1e-15) + 1e-15 {
                    return Err(self.out_of_range(r));
                }
                let (u0, v0) = self.latest();
                hermite_add(out, a, r - latest, h.t - latest, u0, v0, &h.u, &h.v);
                return Ok(());
            }
        }
        let oldest = self.oldest_time();
        if r < oldest - 1e-12 * self.dt {
            if r < self.origin {
                return Err(self.out_of_range(r));
            }
            return Err(HistoryError::WindowUnderrun { requested: r, oldest });
        }
        let x = ((r - oldest) / self.dt).max(0.0);
        let last = self.snaps_u.len() - 1;
        if x >= last as f64 {
            if x > last as f64 + 1e-9 {
                return Err(self.out_of_range(r));
            }
            add_scaled(out, a, self.snaps_u[last].coeffs());
            return Ok(());
        }
        let i = x.floor() as usize;
        let th = x - i as f64;
        if th == 0.0 {
            add_scaled(out, a, self.snaps_u[i].coeffs());
            return Ok(());
        }
        hermite_add(
            out,
            a,
            th * self.dt,
            self.dt,
            &self.snaps_u[i],
            &self.snaps_v[i],
            &self.snaps_u[i + 1],
            &self.snaps_v[i + 1],
        );
        Ok(())
    }

    fn out_of_range(&self, t: f64) -> HistoryError {
        HistoryError::OutOfRange {
            t,
            lo: self.origin,
            hi: self.head_time(),
        }
    }

    /// `u(r)` for `r` between the origin and the head.
    pub fn u_at(&self, r: f64) -> Result<SpectralField, HistoryError> {
        let mut out = vec![0.0; self.n_modes()];
        self.add_u_at(r, 1.0, &mut out)?;
        Ok(SpectralField::from_coeffs(out))
    }

    fn add_eta(&self, t: f64, ut: &[f64], s: f64, out: &mut [f64]) -> Result<(), HistoryError> {
        let elapsed = t - self.origin;
        if s <= elapsed {
            add_scaled(out, 1.0, ut);
            self.add_u_at(t - s, -1.0, out)
        } else {
            self.initial.add_into(s - elapsed, out);
            add_scaled(out, 1.0, ut);
            add_scaled(out, -1.0, self.u_tau.coeffs());
            Ok(())
        }
    }

    /// `η^t(s)` by the two-branch representation.
    pub fn eta_at(&self, t: f64, s: f64) -> Result<SpectralField, HistoryError> {
        if s <= 0.0 {
            return Err(KernelError::Domain(s).into());
        }
        let ut = self.u_at(t)?;
        let mut out = vec![0.0; self.n_modes()];
        self.add_eta(t, ut.coeffs(), s, &mut out)?;
        Ok(SpectralField::from_coeffs(out))
    }

    /// `η^t` at every quadrature node.
    pub fn eta_on_nodes(&self, t: f64) -> Result<EtaNodes, HistoryError> {
        let n = self.n_modes();
        let ut = self.u_at(t)?;
        let nodes = self.quadrature.nodes();
        let mut values = vec![0.0; nodes.len() * n];
        for (j, &s) in nodes.iter().enumerate() {
            if s == 0.0 {
                if t == self.origin {
                    self.initial.add_into(0.0, &mut values[j * n..(j + 1) * n]);
                }
                continue;
            }
            self.add_eta(t, ut.coeffs(), s, &mut values[j * n..(j + 1) * n])?;
        }
        Ok(EtaNodes { n_modes: n, values })
    }

    /// Snapshots as CSV rows `(t, mode, coefficient)`.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "mode", "coefficient"])?;
        for (i, u) in self.snaps_u.iter().enumerate() {
            let t = self.snap_time(i);
            for (k, c) in u.coeffs().iter().enumerate() {
                out.write_record([format!("{t:e}"), (k + 1).to_string(), format!("{c:e}")])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Cubic Hermite interpolation on `[0, h]` at offset `x`, added as `a · p(x)`.
#[allow(clippy::too_many_arguments)]
fn hermite_add(
    out: &mut [f64],
    a: f64,
    x: f64,
    h: f64,
    u0: &SpectralField,
    v0: &SpectralField,
    u1: &SpectralField,
    v1: &SpectralField,
) {
    let th = x / h;
    let th2 = th * th;
    let th3 = th2 * th;
    let h00 = a * (2.0 * th3 - 3.0 * th2 + 1.0);
    let h10 = a * h * (th3 - 2.0 * th2 + th);
    let h01 = a * (3.0 * th2 - 2.0 * th3);
    let h11 = a * h * (th3 - th2);
    for (k, o) in out.iter_mut().enumerate() {
        *o += h00 * u0.coeffs()[k] + h10 * v0.coeffs()[k] + h01 * u1.coeffs()[k] + h11 * v1.coeffs()[k];
    }
}

/// History values on the quadrature nodes, row-major by node.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaNodes {
    n_modes: usize,
    values: Vec<f64>,
}

impl EtaNodes {
    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.n_modes..(j + 1) * self.n_modes]
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.n_modes.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `A Σ_j c_j η(s_j)`.
    pub fn force(&self, node_weights: &[f64]) -> SpectralField {
        let mut acc = vec![0.0; self.n_modes];
        for (j, &c) in node_weights.iter().enumerate() {
            if c != 0.0 {
                add_scaled(&mut acc, c, self.row(j));
            }
        }
        for (k, a) in acc.iter_mut().enumerate() {
            *a *= eigenvalue(k + 1);
        }
        SpectralField::from_coeffs(acc)
    }

    /// `Σ_j c_j ‖η(s_j)‖²_{σ+1}`.
    pub fn weighted_norm_sq(&self, node_weights: &[f64], sigma: f64) -> f64 {
        let lam: Vec<f64> = (1..=self.n_modes)
            .map(|k| eigenvalue(k).powf(sigma + 1.0))
            .collect();
        node_weights
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0.0)
            .map(|(j, &c)| c * self.row(j).iter().zip(&lam).map(|(e, l)| l * e * e).sum::<f64>())
            .sum()
    }

    /// `Σ_j c_j ⟨w, η(s_j)⟩_{σ+1}`.
    pub fn weighted_inner(&self, node_weights: &[f64], w: &SpectralField, sigma: f64) -> f64 {
        let lw: Vec<f64> = w
            .coeffs()
            .iter()
            .enumerate()
            .map(|(k, c)| eigenvalue(k + 1).powf(sigma + 1.0) * c)
            .collect();
        node_weights
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0.0)
            .map(|(j, &c)| c * self.row(j).iter().zip(&lw).map(|(e, l)| e * l).sum::<f64>())
            .sum()
    }
}

/// `∫ μ_t(s) A η^t(s) ds` by the buffer's quadrature.
pub fn memory_force(
    buffer: &HistoryBuffer,
    kernel: &dyn MemoryKernel,
    t: f64,
) -> Result<SpectralField, HistoryError> {
    if kernel.is_zero() || buffer.quadrature().is_empty() {
        return Ok(SpectralField::zeros(buffer.n_modes()));
    }
    buffer.quadrature().check_tail(kernel, t)?;
    let eta = buffer.eta_on_nodes(t)?;
    Ok(eta.force(&buffer.quadrature().kernel_weights(kernel, t)))
}

/// `‖η^t‖²_{M_t^σ} = ∫ μ_t(s) ‖η^t(s)‖²_{σ+1} ds`.
pub fn memory_norm(
    buffer: &HistoryBuffer,
    kernel: &dyn MemoryKernel,
    t: f64,
    sigma: f64,
) -> Result<f64, HistoryError> {
    if kernel.is_zero() || buffer.quadrature().is_empty() {
        return Ok(0.0);
    }
    buffer.quadrature().check_tail(kernel, t)?;
    let eta = buffer.eta_on_nodes(t)?;
    Ok(eta.weighted_norm_sq(&buffer.quadrature().kernel_weights(kernel, t), sigma))
}

/// Memory norm at time `t` of a history given directly as a function of age.
pub fn history_norm(
    quadrature: &SQuadrature,
    kernel: &dyn MemoryKernel,
    t: f64,
    sigma: f64,
    eta: impl Fn(f64) -> SpectralField,
) -> f64 {
    quadrature
        .nodes()
        .iter()
        .zip(quadrature.kernel_weights(kernel, t))
        .map(|(&s, w)| w * eta(s).sigma_norm_sq(sigma + 1.0))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{embedding_bound, ArctanExponentialKernel, ExponentialKernel};

    const N: usize = 8;

    fn quad(kernel: &dyn MemoryKernel, lo: f64, hi: f64) -> Arc<SQuadrature> {
        Arc::new(SQuadrature::for_kernel(kernel, lo, hi, DEFAULT_TAIL_TOL).unwrap())
    }

    /// Exact ramp `u(t) = t e_1` recorded from `τ = 0` to `t_end`.
    fn ramp_buffer(q: Arc<SQuadrature>, dt: f64, steps: usize) -> HistoryBuffer {
        let e1 = SpectralField::mode(N, 1);
        let mut b = HistoryBuffer::new(
            0.0,
            dt,
            q,
            InitialHistory::Zero,
            SpectralField::zeros(N),
            e1.clone(),
        );
        for i in 1..=steps {
            b.push(e1.scaled(i as f64 * dt), e1.clone());
        }
        b
    }

    #[test]
    fn quadrature_reproduces_mass() {
        let k = ArctanExponentialKernel;
        let q = SQuadrature::for_kernel(&k, 0.0, 20.0, DEFAULT_TAIL_TOL).unwrap();
        for t in linspace(0.0, 20.0, 41) {
            assert!(q.mass_error(&k, t).unwrap() < 1e-6, "t = {t}");
        }
        // ∫ μ_t(s) s ds = 1 for this kernel.
        let first = q.integrate(|s| s * k.mu(0.0, s.max(1e-300)));
        assert!((first - 1.0).abs() < 1e-6);
    }

    #[test]
    fn tail_below_tolerance_at_largest_decay_length() {
        let k = ArctanExponentialKernel;
        let q = SQuadrature::for_kernel(&k, -1.0, 5.0, 1e-8).unwrap();
        let eps = ArctanExponentialKernel::eps(-1.0);
        assert!((-q.s_max() / eps).exp() <= 1e-8);
        assert!(q.check_tail(&k, 3.0).is_ok());
        assert!(matches!(q.check_tail(&k, -10.0), Err(HistoryError::Tail { .. })));
    }

    #[test]
    fn constant_trajectory_has_zero_history() {
        let k = ExponentialKernel::frozen(0.3);
        let u = SpectralField::mode(N, 2);
        let mut b = HistoryBuffer::new(
            0.0,
            0.01,
            quad(&k, 0.0, 1.0),
            InitialHistory::Zero,
            u.clone(),
            SpectralField::zeros(N),
        );
        for _ in 0..100 {
            b.push(u.clone(), SpectralField::zeros(N));
        }
        for s in [0.001, 0.3, 0.999, 1.0, 2.5] {
            assert!(b.eta_at(1.0, s).unwrap().is_zero(), "s = {s}");
        }
        assert!(memory_force(&b, &k, 1.0).unwrap().is_zero());
        assert_eq!(memory_norm(&b, &k, 1.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn ramp_history_branches() {
        let k = ExponentialKernel::frozen(0.3);
        let b = ramp_buffer(quad(&k, 0.0, 2.0), 0.01, 200);
        let t = 2.0;
        for s in [0.005, 0.5, 1.234, 2.0] {
            let e = b.eta_at(t, s).unwrap();
            assert!((e.coeff(1) - s).abs() < 1e-12, "s = {s}");
        }
        for s in [2.1, 3.0] {
            assert!((b.eta_at(t, s).unwrap().coeff(1) - t).abs() < 1e-12);
        }
    }

    #[test]
    fn origin_history_is_initial() {
        let k = ExponentialKernel::frozen(0.5);
        let init = InitialHistory::Separable(vec![(Profile::Exp { ell: 1.0 }, SpectralField::mode(N, 3))]);
        let b = HistoryBuffer::new(
            0.0,
            0.01,
            quad(&k, 0.0, 1.0),
            init.clone(),
            SpectralField::mode(N, 1),
            SpectralField::zeros(N),
        );
        for s in [0.01, 0.5, 4.0] {
            assert_eq!(b.eta_at(0.0, s).unwrap(), init.eval(s, N));
        }
    }

    #[test]
    fn ramp_force_matches_closed_form() {
        let eps = 0.2;
        let k = ExponentialKernel::frozen(eps);
        let b = ramp_buffer(quad(&k, 0.0, 1.0), 0.001, 1000);
        let t = 1.0;
        // ∫_0^t μ s ds + t ∫_t^∞ μ ds for μ = ε⁻² e^{−s/ε}.
        let head = 1.0 - (-t / eps).exp() * (1.0 + t / eps);
        let tail = t * (-t / eps).exp() / eps;
        let exact = head + tail;
        let f = memory_force(&b, &k, t).unwrap();
        // The branch kink at s = t limits the trapezoid rule to about 1e-5.
        assert!(
            (f.coeff(1) - exact).abs() < 1e-5 * exact,
            "{} vs {exact}",
            f.coeff(1)
        );
        assert!((exact - (1.0 - (-t / eps).exp())).abs() < 1e-12);
    }

    #[test]
    fn exponential_history_force_and_norm() {
        let k = ArctanExponentialKernel;
        let t = 0.7;
        let eps = ArctanExponentialKernel::eps(t);
        let init = InitialHistory::Separable(vec![(Profile::Exp { ell: 1.0 }, SpectralField::mode(N, 1))]);
        let b = HistoryBuffer::new(
            t,
            0.01,
            quad(&k, t, t),
            init,
            SpectralField::zeros(N),
            SpectralField::zeros(N),
        );
        let f = memory_force(&b, &k, t).unwrap();
        let m = memory_norm(&b, &k, t, 0.0).unwrap();
        // ∫ ε⁻² e^{-s/ε} e^{-s} ds = 1/(ε + ε²).
        let exact_force = 1.0 / (eps + eps * eps);
        // ‖e^{-s}e_1‖²_1 = e^{-2s}, so the norm is 1/(ε + 2ε²).
        let exact_norm = 1.0 / (eps + 2.0 * eps * eps);
        assert!((f.coeff(1) / exact_force - 1.0).abs() < 1e-5);
        assert!((m / exact_norm - 1.0).abs() < 1e-5);
    }

    #[test]
    fn frozen_history_embedding() {
        let k = ArctanExponentialKernel;
        let (tau, t) = (-0.5, 1.5);
        let q = quad(&k, tau, t);
        let eta = |s: f64| SpectralField::mode(N, 2).scaled((1.0 - (-s).exp()) * (-0.3 * s).exp());
        let at_tau = history_norm(&q, &k, tau, 0.0, eta);
        let at_t = history_norm(&q, &k, t, 0.0, eta);
        let kb = embedding_bound(&k, tau, t).unwrap();
        assert!(at_t <= kb * at_tau);
    }

    #[test]
    fn window_underrun_is_reported() {
        let q = Arc::new(SQuadrature::geometric(1e-3, 0.5, 16.0));
        let b = ramp_buffer(q, 0.01, 300);
        assert!(b.oldest_time() > 1.0);
        assert!(matches!(
            b.eta_at(3.0, 2.5),
            Err(HistoryError::WindowUnderrun { .. })
        ));
        assert!(b.eta_at(3.0, 0.4).is_ok());
    }

    #[test]
    fn head_segment_interpolates() {
        let k = ExponentialKernel::frozen(0.3);
        let mut b = ramp_buffer(quad(&k, 0.0, 2.0), 0.01, 10);
        let e1 = SpectralField::mode(N, 1);
        b.set_head(0.105, e1.scaled(0.105), e1.clone());
        let e = b.eta_at(0.105, 0.003).unwrap();
        assert!((e.coeff(1) - 0.003).abs() < 1e-14);
        b.clear_head();
        assert!(b.eta_at(0.105, 0.003).is_err());
    }

    #[test]
    fn sampled_history_interpolates_linearly() {
        let h = InitialHistory::sampled(
            vec![1.0, 2.0],
            vec![SpectralField::mode(2, 1), SpectralField::mode(2, 1).scaled(3.0)],
        );
        assert_eq!(h.eval(1.5, 2).coeff(1), 2.0);
        assert_eq!(h.eval(0.5, 2).coeff(1), 0.5);
        assert_eq!(h.eval(10.0, 2).coeff(1), 3.0);
    }
}
