//! Grid certification of the kernel admissibility conditions M1–M8.
//!
//! Every condition is checked pointwise on a finite `(t, s)` grid. Failures are
//! reported through [`KernelAudit::pass_flags`], never as errors.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use super::{length_scale, mu_at_zero, tail_mass, total_mass, KernelError, MemoryKernel};
use crate::numeric::{geomspace, integrate_graded};

/// The eight structural conditions on a memory kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Condition {
    /// Nonincreasing, summable, nonnegative in `s`.
    M1,
    /// Pointwise domination `μ_t ≤ K_τ(t) μ_τ`.
    M2,
    /// Bounded `μ` and `∂_t μ` on compacts.
    M3,
    /// `∂_t μ + ∂_s μ + δ κ μ ≤ 0`.
    M4,
    /// `inf κ > 0`.
    M5,
    /// `sup κ⁻² ∫ |∂_t μ| < ∞`.
    M6,
    /// `sup μ_t(0⁺) / κ² < ∞`.
    M7,
    /// `∫_ν^{1/ν} μ_t ≥ κ/2` on bounded time intervals.
    M8,
}

impl Condition {
    pub const ALL: [Condition; 8] = [
        Condition::M1,
        Condition::M2,
        Condition::M3,
        Condition::M4,
        Condition::M5,
        Condition::M6,
        Condition::M7,
        Condition::M8,
    ];
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Memory-age grid used by the audit.
#[derive(Debug, Clone, PartialEq)]
pub enum SGrid {
    /// The same ages at every time.
    Fixed(Vec<f64>),
    /// `count` log-spaced ages in `[lo·ℓ(t), hi·ℓ(t)]`, with `ℓ(t)` the kernel's
    /// decay length at `t`.
    Relative { lo: f64, hi: f64, count: usize },
}

impl Default for SGrid {
    fn default() -> Self {
        SGrid::Relative {
            lo: 1e-4,
            hi: 40.0,
            count: 201,
        }
    }
}

impl SGrid {
    pub fn nodes(&self, kernel: &dyn MemoryKernel, t: f64) -> Result<Vec<f64>, KernelError> {
        match self {
            SGrid::Fixed(v) => Ok(v.clone()),
            SGrid::Relative { lo, hi, count } => {
                let l = length_scale(kernel, t)?;
                Ok(geomspace(lo * l, hi * l, *count))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditTolerances {
    /// Relative slack on the M4 residual, measured against the size of its terms.
    pub residual: f64,
    /// Absolute resolution of the δ bisection.
    pub delta: f64,
    /// Closed-form versus quadrature mass agreement.
    pub mass_rtol: f64,
    /// Relative slack on monotonicity in `s`.
    pub monotone: f64,
}

impl Default for AuditTolerances {
    fn default() -> Self {
        Self {
            residual: 1e-9,
            delta: 1e-4,
            mass_rtol: 1e-8,
            monotone: 1e-12,
        }
    }
}

/// One line of the audit CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditRow {
    pub condition: Condition,
    pub t: f64,
    pub s: Option<f64>,
    pub residual: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct KernelAudit {
    pub kernel: String,
    pub t_grid: Vec<f64>,
    /// Largest δ passing M4 on the grid (0 when none does).
    pub delta_star: f64,
    pub kappa_inf: f64,
    pub m6_sup: f64,
    pub m7_sup: f64,
    /// `((a, b), ν)` for the audited time interval.
    pub nu_found: Vec<((f64, f64), f64)>,
    /// `((τ, t), K_τ(t))` for every ordered pair of grid times.
    pub k_bound: Vec<((f64, f64), f64)>,
    pub pass_flags: BTreeMap<Condition, bool>,
    pub rows: Vec<AuditRow>,
}

impl KernelAudit {
    pub fn passed(&self, c: Condition) -> bool {
        self.pass_flags.get(&c).copied().unwrap_or(false)
    }

    pub fn all_passed(&self) -> bool {
        Condition::ALL.iter().all(|&c| self.passed(c))
    }

    pub fn k_bound_at(&self, tau: f64, t: f64) -> Option<f64> {
        self.k_bound
            .iter()
            .find(|((a, b), _)| *a == tau && *b == t)
            .map(|(_, k)| *k)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["condition", "t", "s", "residual", "pass"])?;
        for r in &self.rows {
            out.write_record([
                r.condition.to_string(),
                format!("{:e}", r.t),
                r.s.map(|s| format!("{s:e}")).unwrap_or_default(),
                format!("{:e}", r.residual),
                r.pass.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Per-time samples shared by all checks.
struct Slice {
    t: f64,
    kappa: f64,
    nodes: Vec<f64>,
    mu: Vec<f64>,
    dmu_dt: Vec<f64>,
    dmu_ds: Vec<f64>,
}

fn m4_residual(sl: &Slice, i: usize, delta: f64) -> (f64, f64) {
    let a = sl.dmu_dt[i];
    let b = sl.dmu_ds[i];
    let c = delta * sl.kappa * sl.mu[i];
    (a + b + c, a.abs() + b.abs() + c.abs())
}

fn m4_passes(slices: &[Slice], delta: f64, tol: f64) -> bool {
    slices.iter().all(|sl| {
        (0..sl.nodes.len()).all(|i| {
            let (r, scale) = m4_residual(sl, i, delta);
            r <= tol * scale
        })
    })
}

/// Audit `kernel` on `t_grid × s_grid`.
///
/// # Panics
///
/// If `t_grid` is empty.
pub fn audit(
    kernel: &dyn MemoryKernel,
    t_grid: &[f64],
    s_grid: &SGrid,
    tol: &AuditTolerances,
) -> KernelAudit {
    assert!(!t_grid.is_empty(), "audit needs at least one time");
    let mut flags = BTreeMap::new();
    let mut rows = Vec::new();

    let mut slices = Vec::with_capacity(t_grid.len());
    let mut mass_ok = true;
    for &t in t_grid {
        let kappa = match total_mass(kernel, t) {
            Ok(k) => k,
            Err(_) => {
                mass_ok = false;
                f64::NAN
            }
        };
        let nodes = s_grid.nodes(kernel, t).unwrap_or_default();
        assert!(nodes.iter().all(|&s| s > 0.0), "audit ages must be positive");
        let mu = nodes.iter().map(|&s| kernel.mu(t, s)).collect();
        let dmu_dt = nodes.iter().map(|&s| kernel.dmu_dt(t, s)).collect();
        let dmu_ds = nodes.iter().map(|&s| kernel.dmu_ds(t, s)).collect();
        slices.push(Slice {
            t,
            kappa,
            nodes,
            mu,
            dmu_dt,
            dmu_ds,
        });
    }

    // M1: nonnegative, nonincreasing, summable with a consistent mass.
    let mut m1 = mass_ok;
    for sl in &slices {
        for (i, &m) in sl.mu.iter().enumerate() {
            let nonneg = m >= 0.0;
            let mono = i == 0 || m <= sl.mu[i - 1] * (1.0 + tol.monotone);
            m1 &= nonneg && mono;
        }
        let quad = super::quadrature_mass(kernel, sl.t).unwrap_or(f64::NAN);
        let rel = if sl.kappa > 0.0 {
            (quad - sl.kappa).abs() / sl.kappa
        } else {
            f64::INFINITY
        };
        let ok = rel <= tol.mass_rtol && sl.kappa.is_finite();
        m1 &= ok;
        rows.push(AuditRow {
            condition: Condition::M1,
            t: sl.t,
            s: None,
            residual: rel,
            pass: ok,
        });
    }
    flags.insert(Condition::M1, m1);

    // M2: pointwise domination; the bound is the grid supremum of the ratio.
    let mut k_bound = Vec::new();
    let mut m2 = true;
    for (i, a) in slices.iter().enumerate() {
        for b in &slices[i..] {
            let k = if kernel.is_autonomous() || a.t == b.t {
                Ok(1.0)
            } else {
                pair_bound(kernel, a, b)
            };
            match k {
                Ok(k) => k_bound.push(((a.t, b.t), k)),
                Err(_) => {
                    m2 = false;
                    k_bound.push(((a.t, b.t), f64::INFINITY));
                }
            }
        }
    }
    flags.insert(Condition::M2, m2);

    // M3: boundedness of μ and ∂_t μ on the (compact) audited grid.
    let m3 = slices
        .iter()
        .all(|sl| sl.mu.iter().chain(&sl.dmu_dt).all(|v| v.is_finite()));
    flags.insert(Condition::M3, m3);

    // M4: bisection for the largest admissible δ.
    let delta_star = if m4_passes(&slices, 2.0, tol.residual) {
        2.0
    } else if !m4_passes(&slices, tol.delta, tol.residual) {
        0.0
    } else {
        let (mut lo, mut hi) = (tol.delta, 2.0);
        while hi - lo > tol.delta {
            let mid = 0.5 * (lo + hi);
            if m4_passes(&slices, mid, tol.residual) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    flags.insert(Condition::M4, delta_star > 0.0);
    for sl in &slices {
        for (i, &s) in sl.nodes.iter().enumerate() {
            let (r, scale) = m4_residual(sl, i, delta_star);
            rows.push(AuditRow {
                condition: Condition::M4,
                t: sl.t,
                s: Some(s),
                residual: r,
                pass: r <= tol.residual * scale,
            });
        }
    }

    // M5: uniform positivity of the mass.
    let kappa_inf = slices.iter().map(|sl| sl.kappa).fold(f64::INFINITY, f64::min);
    for sl in &slices {
        rows.push(AuditRow {
            condition: Condition::M5,
            t: sl.t,
            s: None,
            residual: sl.kappa,
            pass: sl.kappa > 0.0,
        });
    }
    flags.insert(Condition::M5, kappa_inf > 0.0 && kappa_inf.is_finite());

    // M6: κ⁻² ∫ |∂_t μ| ds.
    let mut m6_sup: f64 = 0.0;
    for sl in &slices {
        let l = length_scale(kernel, sl.t).unwrap_or(1.0);
        let f = |s: f64| kernel.dmu_dt(sl.t, s.max(1e-300)).abs();
        let integral = integrate_graded(&f, 0.0, 80.0 * l, 1e-4 * l, 1e-14 * sl.kappa.max(1.0));
        let ratio = integral / (sl.kappa * sl.kappa);
        m6_sup = m6_sup.max(ratio);
        rows.push(AuditRow {
            condition: Condition::M6,
            t: sl.t,
            s: None,
            residual: ratio,
            pass: ratio.is_finite(),
        });
    }
    flags.insert(Condition::M6, m6_sup.is_finite());

    // M7: μ_t(0⁺)/κ², using the closed-form limit when the kernel has one.
    let mut m7_sup: f64 = 0.0;
    for sl in &slices {
        let m0 = kernel
            .mu_zero(sl.t)
            .unwrap_or_else(|| sl.mu.first().copied().unwrap_or(mu_at_zero(kernel, sl.t)));
        let ratio = m0 / (sl.kappa * sl.kappa);
        m7_sup = m7_sup.max(ratio);
        rows.push(AuditRow {
            condition: Condition::M7,
            t: sl.t,
            s: None,
            residual: ratio,
            pass: ratio.is_finite(),
        });
    }
    flags.insert(Condition::M7, m7_sup.is_finite());

    // M8: largest ν on a geometric scan with ∫_ν^{1/ν} μ_t ≥ κ/2 for all grid times.
    let nus = geomspace(1e-8, 1.0, 161);
    let mut nu_star = None;
    for &nu in nus.iter().rev().skip(1) {
        let ok = slices.iter().all(|sl| {
            let inner = tail_mass(kernel, sl.t, nu).unwrap_or(0.0)
                - tail_mass(kernel, sl.t, 1.0 / nu).unwrap_or(f64::INFINITY);
            inner >= 0.5 * sl.kappa
        });
        if ok {
            nu_star = Some(nu);
            break;
        }
    }
    let interval = (t_grid[0], *t_grid.last().unwrap());
    if let Some(nu) = nu_star {
        for sl in &slices {
            let inner =
                tail_mass(kernel, sl.t, nu).unwrap_or(0.0) - tail_mass(kernel, sl.t, 1.0 / nu).unwrap_or(0.0);
            rows.push(AuditRow {
                condition: Condition::M8,
                t: sl.t,
                s: Some(nu),
                residual: inner / sl.kappa - 0.5,
                pass: true,
            });
        }
    }
    let nu_found = nu_star.map(|nu| vec![(interval, nu)]).unwrap_or_default();
    flags.insert(Condition::M8, nu_star.is_some());

    KernelAudit {
        kernel: kernel.name(),
        t_grid: t_grid.to_vec(),
        delta_star,
        kappa_inf,
        m6_sup,
        m7_sup,
        nu_found,
        k_bound,
        pass_flags: flags,
        rows,
    }
}

fn pair_bound(kernel: &dyn MemoryKernel, early: &Slice, late: &Slice) -> Result<f64, KernelError> {
    let mut sup = 1.0f64;
    let mut check = |num: f64, den: f64, s: f64| {
        if den <= 0.0 {
            if num > 0.0 {
                return Err(KernelError::UnboundedRatio {
                    tau: early.t,
                    t: late.t,
                    s,
                });
            }
            return Ok(());
        }
        sup = sup.max(num / den);
        Ok(())
    };
    if let (Some(a), Some(b)) = (kernel.mu_zero(late.t), kernel.mu_zero(early.t)) {
        check(a, b, 0.0)?;
    }
    for &s in early.nodes.iter().chain(&late.nodes) {
        check(kernel.mu(late.t, s), kernel.mu(early.t, s), s)?;
    }
    Ok(sup)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{ArctanExponentialKernel, ExponentialKernel};
    use crate::numeric::linspace;

    fn arctan_audit() -> KernelAudit {
        audit(
            &ArctanExponentialKernel,
            &linspace(-10.0, 10.0, 101),
            &SGrid::default(),
            &AuditTolerances::default(),
        )
    }

    #[test]
    fn arctan_kernel_is_admissible() {
        let a = arctan_audit();
        for c in Condition::ALL {
            assert!(a.passed(c), "{c} failed");
        }
        assert!(a.delta_star >= 0.45, "delta_star = {}", a.delta_star);
        // Analytically δ ≤ 1 − 2|ε'(t)| with the minimum 1/2 at t = 0.
        assert!((a.delta_star - 0.5).abs() < 2e-4);
        assert!((a.m7_sup - 1.0).abs() < 1e-10);
    }

    #[test]
    fn m7_ratio_is_one_at_every_time() {
        let a = arctan_audit();
        for r in a.rows.iter().filter(|r| r.condition == Condition::M7) {
            assert!((r.residual - 1.0).abs() < 1e-12, "t = {}", r.t);
        }
    }

    #[test]
    fn m4_residual_nonpositive_below_delta_star() {
        let a = arctan_audit();
        for r in a.rows.iter().filter(|r| r.condition == Condition::M4) {
            assert!(r.pass, "t={} s={:?} residual={}", r.t, r.s, r.residual);
        }
    }

    #[test]
    fn autonomous_exponential_has_unit_delta() {
        let k = ExponentialKernel::new(1.0, 1.0);
        let a = audit(
            &k,
            &[0.0, 1.0, 2.0],
            &SGrid::default(),
            &AuditTolerances::default(),
        );
        assert!(a.passed(Condition::M4));
        assert!((a.delta_star - 1.0).abs() <= 1e-4, "{}", a.delta_star);
        assert!(a.k_bound.iter().all(|(_, k)| *k == 1.0));
    }

    #[test]
    fn k_bound_dominates_on_grid() {
        let k = ArctanExponentialKernel;
        let t_grid = linspace(-2.0, 2.0, 9);
        let a = audit(&k, &t_grid, &SGrid::default(), &AuditTolerances::default());
        let grid = SGrid::default();
        for ((tau, t), bound) in &a.k_bound {
            for s in grid
                .nodes(&k, *tau)
                .unwrap()
                .into_iter()
                .chain(grid.nodes(&k, *t).unwrap())
            {
                assert!(bound * k.mu(*tau, s) >= k.mu(*t, s) * (1.0 - 1e-14));
            }
        }
    }

    #[test]
    fn growing_kernel_fails_m1_and_m4() {
        let k = crate::kernel::FnKernel::new("bump", |_t: f64, s: f64| s * (-s).exp());
        let a = audit(
            &k,
            &[0.0],
            &SGrid::Fixed(geomspace(1e-3, 20.0, 50)),
            &AuditTolerances::default(),
        );
        assert!(!a.passed(Condition::M1));
        assert!(!a.passed(Condition::M4));
        assert_eq!(a.delta_star, 0.0);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let a = audit(
            &ExponentialKernel::new(1.0, 1.0),
            &[0.0],
            &SGrid::Fixed(vec![0.5, 1.0]),
            &AuditTolerances::default(),
        );
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("condition,t,s,residual,pass\n"));
        assert!(text.lines().any(|l| l.starts_with("M4,")));
    }
}
