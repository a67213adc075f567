//! Time-dependent memory kernels `(t, s) ↦ μ_t(s)`.
//!
//! A kernel gives the weight of the deformation history at age `s > 0` on the
//! stress at time `t`. Built-in kernels provide analytic derivatives and closed
//! forms for the total mass `κ(t) = ∫₀^∞ μ_t(s) ds`; user kernels built from a
//! closure fall back to central finite differences and quadrature.
//!
//! The admissibility audit lives in [`audit`].

pub mod audit;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::numeric::integrate_graded;

pub use audit::{audit, AuditTolerances, Condition, KernelAudit, SGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("memory age must be positive, got s = {0}")]
    Domain(f64),
    #[error("kernel tail mass {tail:e} beyond s = {s_max} at t = {t} exceeds tolerance")]
    Tail { t: f64, s_max: f64, tail: f64 },
    #[error("unbounded ratio mu(t={t},s={s}) / mu(tau={tau},s={s}): denominator vanishes")]
    UnboundedRatio { tau: f64, t: f64, s: f64 },
    #[error("embedding bound needs t >= tau, got tau = {tau}, t = {t}")]
    TimeOrder { tau: f64, t: f64 },
}

/// Relative step of the central finite differences used for user kernels.
pub const FD_STEP: f64 = 1e-5;

/// A time-dependent memory kernel.
///
/// Only [`mu`](MemoryKernel::mu) is required. The remaining methods have
/// numerical defaults which built-in kernels override with closed forms.
pub trait MemoryKernel: Send + Sync + fmt::Debug {
    fn name(&self) -> String;

    /// `μ_t(s)` for `s > 0`, without domain checking.
    fn mu(&self, t: f64, s: f64) -> f64;

    fn dmu_dt(&self, t: f64, s: f64) -> f64 {
        let h = FD_STEP * t.abs().max(1.0);
        (self.mu(t + h, s) - self.mu(t - h, s)) / (2.0 * h)
    }

    fn dmu_ds(&self, t: f64, s: f64) -> f64 {
        let h = FD_STEP * s;
        (self.mu(t, s + h) - self.mu(t, s - h)) / (2.0 * h)
    }

    /// Closed-form limit `μ_t(0⁺)`, when known.
    fn mu_zero(&self, _t: f64) -> Option<f64> {
        None
    }

    /// Closed-form total mass, when known.
    fn total_mass_closed(&self, _t: f64) -> Option<f64> {
        None
    }

    /// Closed-form tail `∫_s^∞ μ_t`, when known.
    fn tail_mass_closed(&self, _t: f64, _s: f64) -> Option<f64> {
        None
    }

    fn is_autonomous(&self) -> bool {
        false
    }

    fn is_zero(&self) -> bool {
        false
    }
}

pub type SharedKernel = Arc<dyn MemoryKernel>;

/// `μ_t(s)` with the `s > 0` domain check.
pub fn eval_mu(kernel: &dyn MemoryKernel, t: f64, s: f64) -> Result<f64, KernelError> {
    if !(s > 0.0) {
        return Err(KernelError::Domain(s));
    }
    Ok(kernel.mu(t, s))
}

/// `μ_t(0⁺)`: the closed form when available, otherwise evaluation at a tiny age.
pub fn mu_at_zero(kernel: &dyn MemoryKernel, t: f64) -> f64 {
    kernel.mu_zero(t).unwrap_or_else(|| kernel.mu(t, 1e-12))
}

/// Upper integration limit for kernel quadratures: doubled until the
/// contribution of `[S, 2S]` is negligible. Returns `None` past `1e6`.
fn quadrature_horizon(kernel: &dyn MemoryKernel, t: f64, rel: f64) -> Option<f64> {
    let mut s = 1e-3;
    let head = integrate_graded(&|x| kernel.mu(t, x.max(1e-300)), 0.0, s, 1e-9, 1e-15);
    let mut total = head;
    while s < 1e6 {
        let piece = integrate_graded(&|x| kernel.mu(t, x), s, 2.0 * s, s * 1e-3, 1e-15);
        total += piece;
        s *= 2.0;
        if piece.abs() <= rel * total.abs() && s >= 1.0 {
            return Some(s);
        }
    }
    None
}

/// Total mass by direct quadrature, independent of any closed form.
pub fn quadrature_mass(kernel: &dyn MemoryKernel, t: f64) -> Result<f64, KernelError> {
    if kernel.is_zero() {
        return Ok(0.0);
    }
    let s_max = quadrature_horizon(kernel, t, 1e-14).ok_or(KernelError::Tail {
        t,
        s_max: 1e6,
        tail: f64::NAN,
    })?;
    let scale = length_scale_hint(kernel, t);
    let f = |x: f64| kernel.mu(t, x.max(1e-300));
    Ok(integrate_graded(&f, 0.0, s_max, scale * 1e-4, 1e-15))
}

/// A rough decay length used only to seed quadrature grading.
fn length_scale_hint(kernel: &dyn MemoryKernel, t: f64) -> f64 {
    let m0 = mu_at_zero(kernel, t);
    match kernel.total_mass_closed(t) {
        Some(k) if m0 > 0.0 => k / m0,
        _ => 1e-3,
    }
}

/// `κ(t)`: closed form when the kernel has one, otherwise quadrature.
pub fn total_mass(kernel: &dyn MemoryKernel, t: f64) -> Result<f64, KernelError> {
    match kernel.total_mass_closed(t) {
        Some(k) => Ok(k),
        None => quadrature_mass(kernel, t),
    }
}

/// `∫_s^∞ μ_t`.
pub fn tail_mass(kernel: &dyn MemoryKernel, t: f64, s: f64) -> Result<f64, KernelError> {
    if let Some(v) = kernel.tail_mass_closed(t, s) {
        return Ok(v);
    }
    let total = total_mass(kernel, t)?;
    let f = |x: f64| kernel.mu(t, x.max(1e-300));
    let head = integrate_graded(&f, 0.0, s, (s * 1e-6).max(1e-12), 1e-15);
    Ok((total - head).max(0.0))
}

/// Characteristic decay length `κ(t) / μ_t(0⁺)`; equals `ε(t)` for the
/// exponential kernels.
pub fn length_scale(kernel: &dyn MemoryKernel, t: f64) -> Result<f64, KernelError> {
    let m0 = mu_at_zero(kernel, t);
    let k = total_mass(kernel, t)?;
    Ok(if m0 > 0.0 { k / m0 } else { 1.0 })
}

/// The aging kernel `μ_t(s) = ε(t)⁻² exp(−s/ε(t))` with
/// `ε(t) = (π/2 − arctan t) / 4`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ArctanExponentialKernel;

impl ArctanExponentialKernel {
    pub fn eps(t: f64) -> f64 {
        // π/2 − arctan t loses all digits for large t; use arctan(1/t) there.
        let gap = if t > 1.0 {
            (1.0 / t).atan()
        } else {
            std::f64::consts::FRAC_PI_2 - t.atan()
        };
        0.25 * gap
    }

    pub fn deps(t: f64) -> f64 {
        -0.25 / (1.0 + t * t)
    }
}

impl MemoryKernel for ArctanExponentialKernel {
    fn name(&self) -> String {
        "arctan-exponential".into()
    }

    fn mu(&self, t: f64, s: f64) -> f64 {
        let e = Self::eps(t);
        (-s / e).exp() / (e * e)
    }

    fn dmu_dt(&self, t: f64, s: f64) -> f64 {
        let e = Self::eps(t);
        let de = Self::deps(t);
        de * (-s / e).exp() * (s / e - 2.0) / (e * e * e)
    }

    fn dmu_ds(&self, t: f64, s: f64) -> f64 {
        let e = Self::eps(t);
        -(-s / e).exp() / (e * e * e)
    }

    fn mu_zero(&self, t: f64) -> Option<f64> {
        let e = Self::eps(t);
        Some(1.0 / (e * e))
    }

    fn total_mass_closed(&self, t: f64) -> Option<f64> {
        Some(1.0 / Self::eps(t))
    }

    fn tail_mass_closed(&self, t: f64, s: f64) -> Option<f64> {
        let e = Self::eps(t);
        Some((-s / e).exp() / e)
    }
}

/// Autonomous exponential kernel `μ(s) = a·exp(−s/ℓ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentialKernel {
    pub amplitude: f64,
    pub decay_length: f64,
}

impl ExponentialKernel {
    pub fn new(amplitude: f64, decay_length: f64) -> Self {
        assert!(amplitude >= 0.0 && decay_length > 0.0);
        Self {
            amplitude,
            decay_length,
        }
    }

    /// The aging kernel with its clock stopped at `ε`: `ε⁻² exp(−s/ε)`.
    pub fn frozen(eps: f64) -> Self {
        Self::new(1.0 / (eps * eps), eps)
    }
}

impl MemoryKernel for ExponentialKernel {
    fn name(&self) -> String {
        format!("exponential(a={}, l={})", self.amplitude, self.decay_length)
    }

    fn mu(&self, _t: f64, s: f64) -> f64 {
        self.amplitude * (-s / self.decay_length).exp()
    }

    fn dmu_dt(&self, _t: f64, _s: f64) -> f64 {
        0.0
    }

    fn dmu_ds(&self, _t: f64, s: f64) -> f64 {
        -self.amplitude / self.decay_length * (-s / self.decay_length).exp()
    }

    fn mu_zero(&self, _t: f64) -> Option<f64> {
        Some(self.amplitude)
    }

    fn total_mass_closed(&self, _t: f64) -> Option<f64> {
        Some(self.amplitude * self.decay_length)
    }

    fn tail_mass_closed(&self, _t: f64, s: f64) -> Option<f64> {
        Some(self.amplitude * self.decay_length * (-s / self.decay_length).exp())
    }

    fn is_autonomous(&self) -> bool {
        true
    }
}

/// `μ ≡ 0`: no memory at all.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ZeroKernel;

impl MemoryKernel for ZeroKernel {
    fn name(&self) -> String {
        "zero".into()
    }
    fn mu(&self, _t: f64, _s: f64) -> f64 {
        0.0
    }
    fn dmu_dt(&self, _t: f64, _s: f64) -> f64 {
        0.0
    }
    fn dmu_ds(&self, _t: f64, _s: f64) -> f64 {
        0.0
    }
    fn mu_zero(&self, _t: f64) -> Option<f64> {
        Some(0.0)
    }
    fn total_mass_closed(&self, _t: f64) -> Option<f64> {
        Some(0.0)
    }
    fn tail_mass_closed(&self, _t: f64, _s: f64) -> Option<f64> {
        Some(0.0)
    }
    fn is_autonomous(&self) -> bool {
        true
    }
    fn is_zero(&self) -> bool {
        true
    }
}

/// `c·μ_t(s)` for a wrapped kernel.
#[derive(Debug, Clone)]
pub struct ScaledKernel {
    pub factor: f64,
    pub inner: SharedKernel,
}

impl MemoryKernel for ScaledKernel {
    fn name(&self) -> String {
        format!("{}*{}", self.factor, self.inner.name())
    }
    fn mu(&self, t: f64, s: f64) -> f64 {
        self.factor * self.inner.mu(t, s)
    }
    fn dmu_dt(&self, t: f64, s: f64) -> f64 {
        self.factor * self.inner.dmu_dt(t, s)
    }
    fn dmu_ds(&self, t: f64, s: f64) -> f64 {
        self.factor * self.inner.dmu_ds(t, s)
    }
    fn mu_zero(&self, t: f64) -> Option<f64> {
        self.inner.mu_zero(t).map(|v| self.factor * v)
    }
    fn total_mass_closed(&self, t: f64) -> Option<f64> {
        self.inner.total_mass_closed(t).map(|v| self.factor * v)
    }
    fn tail_mass_closed(&self, t: f64, s: f64) -> Option<f64> {
        self.inner.tail_mass_closed(t, s).map(|v| self.factor * v)
    }
    fn is_autonomous(&self) -> bool {
        self.inner.is_autonomous()
    }
    fn is_zero(&self) -> bool {
        self.factor == 0.0 || self.inner.is_zero()
    }
}

type KernelFn = dyn Fn(f64, f64) -> f64 + Send + Sync;

/// A kernel given only by a closure; derivatives come from finite differences
/// and the mass from quadrature.
pub struct FnKernel {
    label: String,
    f: Box<KernelFn>,
}

impl FnKernel {
    pub fn new(label: impl Into<String>, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            label: label.into(),
            f: Box::new(f),
        }
    }
}

impl fmt::Debug for FnKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnKernel").field("label", &self.label).finish()
    }
}

impl MemoryKernel for FnKernel {
    fn name(&self) -> String {
        self.label.clone()
    }
    fn mu(&self, t: f64, s: f64) -> f64 {
        (self.f)(t, s)
    }
}

/// `K_τ(t) = sup_s μ_t(s)/μ_τ(s)` over the default audit s-grids of both
/// times, including the `s → 0⁺` limit when both kernels know it in closed form.
pub fn embedding_bound(kernel: &dyn MemoryKernel, tau: f64, t: f64) -> Result<f64, KernelError> {
    if t < tau {
        return Err(KernelError::TimeOrder { tau, t });
    }
    if kernel.is_autonomous() || t == tau {
        return Ok(1.0);
    }
    let grid = SGrid::default();
    let mut nodes = grid.nodes(kernel, tau)?;
    nodes.extend(grid.nodes(kernel, t)?);
    let mut sup = f64::NEG_INFINITY;
    let mut consider = |num: f64, den: f64, s: f64| -> Result<(), KernelError> {
        if den <= 0.0 {
            if num > 0.0 {
                return Err(KernelError::UnboundedRatio { tau, t, s });
            }
            return Ok(());
        }
        sup = sup.max(num / den);
        Ok(())
    };
    if let (Some(a), Some(b)) = (kernel.mu_zero(t), kernel.mu_zero(tau)) {
        consider(a, b, 0.0)?;
    }
    for &s in &nodes {
        consider(kernel.mu(t, s), kernel.mu(tau, s), s)?;
    }
    Ok(sup)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{E, PI};

    #[test]
    fn arctan_mu_limit_at_origin() {
        let k = ArctanExponentialKernel;
        assert!((k.mu_zero(0.0).unwrap() - 64.0 / (PI * PI)).abs() < 1e-12);
        let near = eval_mu(&k, 0.0, 1e-14).unwrap();
        assert!((near - 64.0 / (PI * PI)).abs() < 1e-10);
    }

    #[test]
    fn arctan_mu_at_one_decay_length() {
        let k = ArctanExponentialKernel;
        let e0 = ArctanExponentialKernel::eps(0.0);
        assert!((e0 - PI / 8.0).abs() < 1e-15);
        let v = eval_mu(&k, 0.0, e0).unwrap();
        assert!((v - 64.0 / (PI * PI) / E).abs() < 1e-12);
    }

    #[test]
    fn zero_kernel_is_zero() {
        for &(t, s) in &[(0.0, 0.1), (-3.0, 5.0), (7.0, 1e-6)] {
            assert_eq!(eval_mu(&ZeroKernel, t, s).unwrap(), 0.0);
        }
    }

    #[test]
    fn nonpositive_age_is_domain_error() {
        let k = ArctanExponentialKernel;
        assert_eq!(eval_mu(&k, 0.0, 0.0), Err(KernelError::Domain(0.0)));
        assert!(matches!(eval_mu(&k, 0.0, -1.0), Err(KernelError::Domain(_))));
    }

    #[test]
    fn arctan_total_mass_values() {
        let k = ArctanExponentialKernel;
        assert!((total_mass(&k, 0.0).unwrap() - 8.0 / PI).abs() < 1e-14);
        // ε → π/4 as t → −∞
        assert!((total_mass(&k, -1e12).unwrap() - 4.0 / PI).abs() < 1e-10);
    }

    #[test]
    fn scaled_kernel_doubles_mass() {
        let inner: SharedKernel = Arc::new(ArctanExponentialKernel);
        let k = ScaledKernel { factor: 2.0, inner };
        for &t in &[-3.0, 0.0, 2.5] {
            let single = total_mass(&ArctanExponentialKernel, t).unwrap();
            assert!((total_mass(&k, t).unwrap() - 2.0 * single).abs() < 1e-13 * single);
        }
    }

    #[test]
    fn closed_mass_matches_quadrature() {
        let k = ArctanExponentialKernel;
        for &t in &[-10.0, -1.0, 0.0, 0.7, 5.0, 10.0] {
            let closed = total_mass(&k, t).unwrap();
            let quad = quadrature_mass(&k, t).unwrap();
            assert!(
                ((closed - quad) / closed).abs() < 1e-8,
                "t={t}: closed {closed} vs quadrature {quad}"
            );
        }
    }

    #[test]
    fn fn_kernel_uses_quadrature_and_differences() {
        let k = FnKernel::new("exp", |t: f64, s: f64| (1.0 + 0.1 * t.sin()) * (-s).exp());
        let m = total_mass(&k, 0.3).unwrap();
        assert!((m - (1.0 + 0.1 * 0.3f64.sin())).abs() < 1e-9);
        let ds = k.dmu_ds(0.3, 0.5);
        assert!((ds + k.mu(0.3, 0.5)).abs() < 1e-8);
        let dt = k.dmu_dt(0.3, 0.5);
        assert!((dt - 0.1 * 0.3f64.cos() * (-0.5f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn analytic_derivatives_match_differences() {
        let k = ArctanExponentialKernel;
        for &(t, s) in &[(0.0, 0.1), (2.0, 0.03), (-4.0, 1.0)] {
            let h = 1e-6;
            let dt = (k.mu(t + h, s) - k.mu(t - h, s)) / (2.0 * h);
            let ds = (k.mu(t, s + h * s) - k.mu(t, s - h * s)) / (2.0 * h * s);
            assert!((k.dmu_dt(t, s) - dt).abs() < 1e-6 * dt.abs().max(1.0));
            assert!((k.dmu_ds(t, s) - ds).abs() < 1e-6 * ds.abs().max(1.0));
        }
    }

    #[test]
    fn embedding_bound_closed_form() {
        let k = ArctanExponentialKernel;
        for &(tau, t) in &[(-2.0, 0.0), (0.0, 1.0), (3.0, 9.5)] {
            let expected = (ArctanExponentialKernel::eps(tau) / ArctanExponentialKernel::eps(t)).powi(2);
            let got = embedding_bound(&k, tau, t).unwrap();
            assert!((got - expected).abs() < 1e-12 * expected, "{got} vs {expected}");
        }
        assert_eq!(embedding_bound(&k, 1.0, 1.0).unwrap(), 1.0);
        assert_eq!(
            embedding_bound(&ExponentialKernel::new(1.0, 1.0), 0.0, 5.0).unwrap(),
            1.0
        );
        assert!(matches!(
            embedding_bound(&k, 1.0, 0.0),
            Err(KernelError::TimeOrder { .. })
        ));
    }

    #[test]
    fn embedding_bound_detects_unbounded_ratio() {
        // Support of μ_τ is [0, 1) while μ_t is positive everywhere.
        let k = FnKernel::new(
            "switch",
            |t: f64, s: f64| {
                if t > 0.5 || s < 1.0 {
                    (-s).exp()
                } else {
                    0.0
                }
            },
        );
        assert!(matches!(
            embedding_bound(&k, 0.0, 1.0),
            Err(KernelError::UnboundedRatio { .. })
        ));
    }
}
