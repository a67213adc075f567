use std::sync::Arc;

use proptest::prelude::*;

use memwave::covering::{box_dimension, packing_oracle};
use memwave::dynamics::{InitialData, Process, ProcessConfig};
use memwave::functionals::{
    dimension_bound, fit_decay, phi, phi_psi_constant, psi, rate_compose, upper_envelope,
};
use memwave::history::{history_norm, InitialHistory, Profile, SQuadrature};
use memwave::kernel::{embedding_bound, ArctanExponentialKernel, ExponentialKernel, MemoryKernel};
use memwave::numeric::linspace;
use memwave::spectral::{ModeBasis, SpectralField};

const N: usize = 8;

fn field(coeffs: Vec<f64>) -> SpectralField {
    SpectralField::from_coeffs(coeffs)
}

fn coeffs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, N)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn phi_psi_bounded_by_energy(
        u in coeffs(),
        v in coeffs(),
        h in coeffs(),
        eps in 0.1..1.0f64,
        ell in 0.05..2.0f64,
        sigma in prop::sample::select(vec![0.0, 1.0 / 3.0, 1.0]),
    ) {
        let kernel = Arc::new(ExponentialKernel::frozen(eps));
        let config = ProcessConfig {
            basis: ModeBasis::new(N),
            kernel: kernel.clone(),
            g: SpectralField::zeros(N),
            ..ProcessConfig::default()
        };
        let p = Process::new(config, 0.0, 0.0).unwrap();
        let z = InitialData {
            u: field(u),
            v: field(v),
            history: InitialHistory::Separable(vec![(Profile::Saturating { ell }, field(h))]),
        };
        let state = p.start(&z);
        let e = p.sample(&state).unwrap().energy(sigma);
        let lhs = phi(&state, sigma).abs() + psi(&state, kernel.as_ref(), sigma).unwrap().abs();
        prop_assert!(lhs <= phi_psi_constant(1.0 / eps) * e * (1.0 + 1e-12) + 1e-14);
    }

    #[test]
    fn decay_fit_scale_and_shift_equivariant(
        q in 0.1..10.0f64,
        omega in 0.05..3.0f64,
        r0 in 0.0..5.0f64,
        lam in 0.01..100.0f64,
        shift in -5.0..5.0f64,
    ) {
        let t = linspace(0.0, 10.0, 201);
        let e: Vec<f64> = t.iter().map(|x| q * (-omega * x).exp() + r0).collect();
        let f = fit_decay(&t, &e, (0.0, 10.0)).unwrap();
        let es: Vec<f64> = e.iter().map(|v| lam * v).collect();
        let ts: Vec<f64> = t.iter().map(|x| x + shift).collect();
        let g = fit_decay(&ts, &es, (shift, 10.0 + shift)).unwrap();
        prop_assert!((g.omega - f.omega).abs() <= 1e-6 * f.omega.max(1e-12));
        prop_assert!((g.plateau - lam * f.plateau).abs() <= 1e-6 * lam * (f.plateau + f.amplitude));
        prop_assert!((g.amplitude - lam * f.amplitude).abs() <= 1e-6 * lam * (f.plateau + f.amplitude));
    }

    #[test]
    fn upper_envelope_is_nonincreasing_majorant(values in prop::collection::vec(-10.0..10.0f64, 1..60)) {
        let m = upper_envelope(&values);
        prop_assert!(m.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(m.iter().zip(&values).all(|(a, b)| a >= b));
        prop_assert_eq!(m.last(), values.last());
    }

    #[test]
    fn dimension_bound_monotone(eta in 0.01..0.49f64, m in 1.0..1e4f64, dm in 0.0..100.0f64, de in 0.0..0.2f64) {
        let base = dimension_bound(eta, m).unwrap();
        prop_assert!(base >= 0.0);
        prop_assert!(dimension_bound(eta, m + dm).unwrap() >= base);
        let eta2 = (eta + de).min(0.499);
        prop_assert!(dimension_bound(eta2, m).unwrap() >= base - 1e-12);
    }

    #[test]
    fn rate_compose_theta_in_unit_interval(
        t in 1e-3..1e3f64,
        kappa in 1e-3..1e3f64,
        beta in 1e-3..1e3f64,
        l1 in 1.0..1e6f64,
    ) {
        let (theta, bp) = rate_compose(t, kappa, beta, l1).unwrap();
        prop_assert!(theta > 0.0 && theta < 1.0);
        prop_assert!(bp > 0.0 && bp <= 0.5 * kappa);
    }

    #[test]
    fn frozen_history_embeds_forward(
        tau in -5.0..5.0f64,
        dt in 0.0..5.0f64,
        ell in 0.01..3.0f64,
        amp in coeffs(),
    ) {
        let k = ArctanExponentialKernel;
        let t = tau + dt;
        let q = SQuadrature::for_kernel(&k, tau, t, 1e-10).unwrap();
        let a = field(amp);
        let eta = |s: f64| a.scaled(Profile::Saturating { ell }.eval(s));
        let at_tau = history_norm(&q, &k, tau, 0.0, eta);
        let at_t = history_norm(&q, &k, t, 0.0, eta);
        let kb = embedding_bound(&k, tau, t).unwrap();
        prop_assert!(kb >= 1.0);
        prop_assert!(at_t <= kb * at_tau * (1.0 + 1e-9) + 1e-300);
    }

    #[test]
    fn packing_oracle_grows_with_radius(r in 0.2..4.0f64, dr in 0.0..1.0f64) {
        prop_assert!(packing_oracle(1, r + dr).unwrap() >= packing_oracle(1, r).unwrap());
        prop_assert!(packing_oracle(2, r).unwrap() >= packing_oracle(1, r).unwrap());
    }
}

#[test]
fn box_dimension_of_a_segment_is_one() {
    let pts: Vec<Vec<f64>> = (0..4096).map(|i| vec![i as f64 / 4096.0, 0.0]).collect();
    let d = box_dimension(&pts, &[1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0]).unwrap();
    assert!((d.value - 1.0).abs() < 0.05, "{d:?}");
}

#[test]
fn kernel_eps_matches_closed_form() {
    let k = ArctanExponentialKernel;
    for t in [-3.0, 0.0, 2.0, 10.0] {
        let eps = ArctanExponentialKernel::eps(t);
        assert!((k.mu(t, 0.0) - 1.0 / (eps * eps)).abs() <= 1e-12 / (eps * eps));
    }
}
