//! Dirichlet sine basis on `(0, π)`, σ-weighted norms and pseudo-spectral
//! evaluation of the nonlinearity.

use std::f64::consts::PI;
use std::io::Write;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

pub const DEFAULT_MODES: usize = 32;

/// Coefficients on the normalized eigenbasis `e_k = √(2/π) sin(kx)`, `k = 1..N`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpectralField(Vec<f64>);

impl SpectralField {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn from_coeffs(coeffs: Vec<f64>) -> Self {
        Self(coeffs)
    }

    /// Unit coefficient on mode `k` (1-based).
    pub fn mode(n: usize, k: usize) -> Self {
        assert!(k >= 1 && k <= n, "mode {k} outside 1..={n}");
        let mut c = vec![0.0; n];
        c[k - 1] = 1.0;
        Self(c)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.0
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Coefficient of mode `k` (1-based).
    pub fn coeff(&self, k: usize) -> f64 {
        self.0[k - 1]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0.0)
    }

    /// `‖u‖²_σ = Σ λ_k^σ u_k²`.
    pub fn sigma_norm_sq(&self, sigma: f64) -> f64 {
        self.0
            .iter()
            .enumerate()
            .map(|(i, c)| eigenvalue(i + 1).powf(sigma) * c * c)
            .sum()
    }

    pub fn sigma_norm(&self, sigma: f64) -> f64 {
        self.sigma_norm_sq(sigma).sqrt()
    }

    /// `⟨A^{σ/2}u, A^{σ/2}w⟩`.
    pub fn inner_sigma(&self, other: &Self, sigma: f64) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .enumerate()
            .map(|(i, (a, b))| eigenvalue(i + 1).powf(sigma) * a * b)
            .sum()
    }

    pub fn inner(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn apply_a_power(&self, alpha: f64) -> Self {
        Self(
            self.0
                .iter()
                .enumerate()
                .map(|(i, c)| eigenvalue(i + 1).powf(alpha) * c)
                .collect(),
        )
    }

    /// `self += a·x`.
    pub fn axpy(&mut self, a: f64, x: &Self) {
        for (s, v) in self.0.iter_mut().zip(&x.0) {
            *s += a * v;
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self(self.0.iter().map(|c| a * c).collect())
    }

    /// One CSV row `(mode, coefficient)` per mode.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["mode", "coefficient"])?;
        for (i, c) in self.0.iter().enumerate() {
            out.write_record([(i + 1).to_string(), format!("{c:e}")])?;
        }
        out.flush()?;
        Ok(())
    }
}

impl Add<&SpectralField> for &SpectralField {
    type Output = SpectralField;
    fn add(self, rhs: &SpectralField) -> SpectralField {
        SpectralField(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}

impl Sub<&SpectralField> for &SpectralField {
    type Output = SpectralField;
    fn sub(self, rhs: &SpectralField) -> SpectralField {
        SpectralField(self.0.iter().zip(&rhs.0).map(|(a, b)| a - b).collect())
    }
}

impl Mul<f64> for &SpectralField {
    type Output = SpectralField;
    fn mul(self, rhs: f64) -> SpectralField {
        self.scaled(rhs)
    }
}

impl Neg for &SpectralField {
    type Output = SpectralField;
    fn neg(self) -> SpectralField {
        self.scaled(-1.0)
    }
}

impl AddAssign<&SpectralField> for SpectralField {
    fn add_assign(&mut self, rhs: &SpectralField) {
        self.axpy(1.0, rhs);
    }
}

impl SubAssign<&SpectralField> for SpectralField {
    fn sub_assign(&mut self, rhs: &SpectralField) {
        self.axpy(-1.0, rhs);
    }
}

/// `λ_k = k²`.
pub fn eigenvalue(k: usize) -> f64 {
    (k * k) as f64
}

/// Sine modes with a direct sine transform on `4N` interior collocation points.
#[derive(Debug, Clone)]
pub struct ModeBasis {
    n_modes: usize,
    grid: Vec<f64>,
    /// `√(2/π) sin(k x_j)`, row-major in `j`.
    table: Vec<f64>,
}

impl ModeBasis {
    pub fn new(n_modes: usize) -> Self {
        assert!(n_modes >= 1);
        let m = 4 * n_modes;
        let h = PI / (m + 1) as f64;
        let grid: Vec<f64> = (1..=m).map(|j| j as f64 * h).collect();
        let norm = (2.0 / PI).sqrt();
        let mut table = Vec::with_capacity(m * n_modes);
        for &x in &grid {
            for k in 1..=n_modes {
                table.push(norm * (k as f64 * x).sin());
            }
        }
        Self { n_modes, grid, table }
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn domain_length(&self) -> f64 {
        PI
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        (1..=self.n_modes).map(eigenvalue).collect()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn zeros(&self) -> SpectralField {
        SpectralField::zeros(self.n_modes)
    }

    pub fn mode(&self, k: usize) -> SpectralField {
        SpectralField::mode(self.n_modes, k)
    }

    pub fn to_grid(&self, field: &SpectralField) -> Vec<f64> {
        let n = self.n_modes;
        self.table
            .chunks_exact(n)
            .map(|row| row.iter().zip(field.coeffs()).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn from_grid(&self, values: &[f64]) -> SpectralField {
        assert_eq!(values.len(), self.grid.len());
        let n = self.n_modes;
        // Discrete orthogonality: Σ_j sin(k x_j) sin(l x_j) = (M+1)/2 δ_kl.
        let w = PI / (self.grid.len() + 1) as f64;
        let mut c = vec![0.0; n];
        for (row, &u) in self.table.chunks_exact(n).zip(values) {
            for (ck, b) in c.iter_mut().zip(row) {
                *ck += u * b;
            }
        }
        for ck in &mut c {
            *ck *= w;
        }
        SpectralField(c)
    }

    /// Collocation quadrature of `∫_0^π u² dx`.
    pub fn grid_l2_sq(&self, values: &[f64]) -> f64 {
        PI / (self.grid.len() + 1) as f64 * values.iter().map(|v| v * v).sum::<f64>()
    }

    /// Pseudo-spectral `P_N part(u)`.
    pub fn apply_nonlinearity(&self, nl: Nonlinearity, part: Part, field: &SpectralField) -> SpectralField {
        if nl == Nonlinearity::Zero || field.is_zero() {
            return self.zeros();
        }
        let vals: Vec<f64> = self
            .to_grid(field)
            .into_iter()
            .map(|u| nl.eval(part, u))
            .collect();
        self.from_grid(&vals)
    }

    /// `g_k = 0.5/k²`.
    pub fn default_forcing(&self) -> SpectralField {
        SpectralField((1..=self.n_modes).map(|k| 0.5 / eigenvalue(k)).collect())
    }
}

impl Default for ModeBasis {
    fn default() -> Self {
        Self::new(DEFAULT_MODES)
    }
}

/// Which piece of the splitting `f = f₀ + f₁` to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Full,
    F0,
    F1,
}

/// Scalar nonlinearity with the built-in splitting.
///
/// For the cubic, `f₁′ = min(3u², 3)`, so `f₁ = u³` on `[-1, 1]` and
/// `3u − 2 sign(u)` outside, and `f₀ = f − f₁` vanishes on `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Nonlinearity {
    Zero,
    #[default]
    Cubic,
}

impl Nonlinearity {
    pub fn f(self, u: f64) -> f64 {
        match self {
            Nonlinearity::Zero => 0.0,
            Nonlinearity::Cubic => u * u * u,
        }
    }

    pub fn df(self, u: f64) -> f64 {
        match self {
            Nonlinearity::Zero => 0.0,
            Nonlinearity::Cubic => 3.0 * u * u,
        }
    }

    pub fn d2f(self, u: f64) -> f64 {
        match self {
            Nonlinearity::Zero => 0.0,
            Nonlinearity::Cubic => 6.0 * u,
        }
    }

    /// Constant `c` with `|f″(u)| ≤ c(1 + |u|)`.
    pub fn growth_constant(self) -> f64 {
        match self {
            Nonlinearity::Zero => 0.0,
            Nonlinearity::Cubic => 6.0,
        }
    }

    pub fn f1(self, u: f64) -> f64 {
        match self {
            Nonlinearity::Zero => 0.0,
            Nonlinearity::Cubic => {
                if u.abs() <= 1.0 {
                    u * u * u
                } else {
                    3.0 * u - 2.0 * u.signum()
                }
            }
        }
    }

    pub fn f0(self, u: f64) -> f64 {
        match self {
            Nonlinearity::Zero => 0.0,
            Nonlinearity::Cubic => {
                if u.abs() <= 1.0 {
                    0.0
                } else {
                    u * u * u - 3.0 * u + 2.0 * u.signum()
                }
            }
        }
    }

    pub fn df1(self, u: f64) -> f64 {
        match self {
            Nonlinearity::Zero => 0.0,
            Nonlinearity::Cubic => (3.0 * u * u).min(3.0),
        }
    }

    pub fn df0(self, u: f64) -> f64 {
        match self {
            Nonlinearity::Zero => 0.0,
            Nonlinearity::Cubic => (3.0 * u * u - 3.0).max(0.0),
        }
    }

    pub fn eval(self, part: Part, u: f64) -> f64 {
        match part {
            Part::Full => self.f(u),
            Part::F0 => self.f0(u),
            Part::F1 => self.f1(u),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_norm_examples() {
        let b = ModeBasis::default();
        for s in [0.0, 0.5, 1.0, 3.0] {
            assert_eq!(b.mode(1).sigma_norm(s), 1.0);
        }
        assert!((b.mode(3).sigma_norm(1.0) - 3.0).abs() < 1e-15);
        assert!((b.mode(2).sigma_norm(1.0 / 3.0) - 4f64.powf(1.0 / 6.0)).abs() < 1e-15);
        assert_eq!(b.zeros().sigma_norm(1.0), 0.0);
    }

    #[test]
    fn a_power_examples() {
        let b = ModeBasis::default();
        let e2 = b.mode(2);
        assert_eq!(e2.apply_a_power(0.0), e2);
        assert!((e2.apply_a_power(0.5).coeff(2) - 2.0).abs() < 1e-15);
        let u = SpectralField::from_coeffs((1..=32).map(|k| 1.0 / k as f64).collect());
        let back = u.apply_a_power(0.7).apply_a_power(-0.7);
        for (a, b) in back.coeffs().iter().zip(u.coeffs()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn cubic_of_first_mode() {
        let b = ModeBasis::default();
        let r = b.apply_nonlinearity(Nonlinearity::Cubic, Part::Full, &b.mode(1));
        // sin³x = (3 sin x − sin 3x)/4 with e_k = √(2/π) sin kx.
        assert!((r.coeff(1) - 3.0 / (2.0 * PI)).abs() < 1e-13);
        assert!((r.coeff(3) + 1.0 / (2.0 * PI)).abs() < 1e-13);
        for k in [2, 4, 5, 10, 32] {
            assert!(r.coeff(k).abs() < 1e-13);
        }
    }

    #[test]
    fn nonlinearity_of_zero_is_zero() {
        let b = ModeBasis::default();
        for part in [Part::Full, Part::F0, Part::F1] {
            assert!(b
                .apply_nonlinearity(Nonlinearity::Cubic, part, &b.zeros())
                .is_zero());
        }
    }

    #[test]
    fn f0_vanishes_on_small_fields() {
        let b = ModeBasis::default();
        let u = b.mode(1).scaled(0.9);
        let vals = b.to_grid(&u);
        assert!(vals.iter().all(|v| v.abs() <= 1.0));
        assert!(b.apply_nonlinearity(Nonlinearity::Cubic, Part::F0, &u).is_zero());
    }

    #[test]
    fn grid_round_trip_is_exact() {
        let b = ModeBasis::new(16);
        let u = SpectralField::from_coeffs((1..=16).map(|k| (k as f64).sin()).collect());
        let back = b.from_grid(&b.to_grid(&u));
        for (x, y) in back.coeffs().iter().zip(u.coeffs()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn parseval() {
        let b = ModeBasis::default();
        let u = SpectralField::from_coeffs((1..=32).map(|k| 1.0 / (k * k) as f64).collect());
        let q = b.grid_l2_sq(&b.to_grid(&u));
        assert!((q / u.sigma_norm_sq(0.0) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn split_parts_add_up() {
        let b = ModeBasis::default();
        let u = SpectralField::from_coeffs((1..=32).map(|k| 3.0 / k as f64).collect());
        let full = b.apply_nonlinearity(Nonlinearity::Cubic, Part::Full, &u);
        let f0 = b.apply_nonlinearity(Nonlinearity::Cubic, Part::F0, &u);
        let f1 = b.apply_nonlinearity(Nonlinearity::Cubic, Part::F1, &u);
        assert!(!f0.is_zero());
        for k in 1..=32 {
            assert!((full.coeff(k) - f0.coeff(k) - f1.coeff(k)).abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_split_properties() {
        let nl = Nonlinearity::Cubic;
        assert_eq!(nl.f(0.0), 0.0);
        for i in 0..=10_000 {
            let u = -10.0 + 20.0 * i as f64 / 10_000.0;
            assert!(nl.df0(u) >= 0.0);
            assert!((nl.f0(u) + nl.f1(u) - nl.f(u)).abs() <= 1e-14 * (1.0 + nl.f(u).abs()));
            assert!(nl.d2f(u).abs() <= nl.growth_constant() * (1.0 + u.abs()));
            if u.abs() <= 1.0 {
                assert_eq!(nl.f0(u), 0.0);
            }
        }
        // f₁ and f₀ are continuous at the junction.
        assert!((nl.f1(1.0 + 1e-12) - 1.0).abs() < 1e-10);
        assert!(nl.f0(1.0 + 1e-12).abs() < 1e-10);
    }

    #[test]
    fn forcing_coefficients() {
        let g = ModeBasis::default().default_forcing();
        assert_eq!(g.coeff(1), 0.5);
        assert_eq!(g.coeff(4), 0.5 / 16.0);
    }
}
