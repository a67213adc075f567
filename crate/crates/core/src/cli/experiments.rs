//! The named experiments. Each returns a typed report and an [`Outcome`].

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::covering::{covering_demo as run_covering, CoveringDemo, ToyProcess};
use crate::dynamics::{write_samples_csv, InitialData, Observer, Process, Sample, SplitMode, SplitRun};
use crate::functionals::{
    fit_decay, fit_exponential, gronwall_check, measure_c1, measure_c2, unexplained_fraction, DecayFit,
    EnergyRecorder, GronwallReport, MemoryInequalityMonitor, MemoryInequalityReport,
};
use crate::history::InitialHistory;
use crate::kernel::{audit, AuditTolerances, KernelAudit, SGrid};
use crate::numeric::{fit_line, linspace};
use crate::spectral::SpectralField;

use super::config::{ExperimentConfig, ProcessSettings};
use super::data::random_initial_data;
use super::{Experiment, HarnessError, Outcome};

/// Pairs `(a, b)` of the memory check start every this many records.
pub const MONITOR_STRIDE: usize = 10;
/// Minimum pair length in steps for integral checks.
pub const MIN_GAP: usize = 5;
pub const MEMORY_MARGIN: f64 = -1e-4;
pub const SPLIT_RESIDUAL: f64 = 1e-7;
pub const FIT_RESIDUAL: f64 = 0.05;
/// Largest relative linear trend over the second half still counted as bounded.
pub const GROWTH_TOL: f64 = 0.05;
pub const PLATEAU_SPREAD: f64 = 0.10;
pub const RADII_SPREAD: f64 = 0.15;

/// Seed of the `i`-th member of a run family.
pub fn member_seed(seed: u64, i: u64) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(i)
}

fn create(out: &Path, name: &str) -> Result<BufWriter<File>, HarnessError> {
    Ok(BufWriter::new(File::create(out.join(name))?))
}

/// Two-column `x y` text file for one curve.
pub fn write_curve(out: &Path, name: &str, xs: &[f64], ys: &[f64]) -> Result<(), HarnessError> {
    let mut w = create(out, name)?;
    for (x, y) in xs.iter().zip(ys) {
        writeln!(w, "{x:e} {y:e}")?;
    }
    w.flush()?;
    Ok(())
}

fn process(settings: &ProcessSettings, tau: f64, horizon: f64) -> Result<Process, HarnessError> {
    Ok(Process::new(settings.to_config(), tau, tau + horizon)?)
}

fn series(samples: &[Sample], sigma: f64) -> (Vec<f64>, Vec<f64>) {
    samples.iter().map(|s| (s.t, s.energy(sigma))).unzip()
}

/// Relative linear trend `slope·duration/mean` of the samples in the second half.
pub fn second_half_trend(times: &[f64], values: &[f64]) -> f64 {
    let (Some(&t0), Some(&t1)) = (times.first(), times.last()) else {
        return 0.0;
    };
    let mid = 0.5 * (t0 + t1);
    let (x, y): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= mid)
        .map(|(a, b)| (*a, *b))
        .unzip();
    let mean = y.iter().sum::<f64>() / y.len().max(1) as f64;
    match fit_line(&x, &y) {
        Some(f) if mean > 0.0 => f.slope * (t1 - mid) / mean,
        _ => 0.0,
    }
}

pub fn kernel_audit(
    cfg: &ExperimentConfig,
    out: Option<&Path>,
) -> Result<(KernelAudit, Outcome), HarnessError> {
    let kernel = cfg.process.kernel.build();
    let report = audit(
        kernel.as_ref(),
        &linspace(-10.0, 10.0, 101),
        &SGrid::default(),
        &AuditTolerances::default(),
    );
    if let Some(dir) = out {
        report.write_csv(create(dir, "kernel_audit.csv")?)?;
    }
    let mut o = Outcome::new(Experiment::KernelAudit);
    o.quantity("delta_star", report.delta_star);
    o.quantity("kappa_inf", report.kappa_inf);
    o.quantity("m7_sup", report.m7_sup);
    o.check("conditions_M1_M8", report.all_passed(), "");
    o.check(
        "delta_star_ge_0.45",
        report.delta_star >= 0.45,
        &format!("{}", report.delta_star),
    );
    o.check(
        "m7_ratio_is_one",
        (report.m7_sup - 1.0).abs() <= 1e-10,
        &format!("{}", report.m7_sup),
    );
    Ok((report, o))
}

/// `0.05·δ*·inf κ` from an audit of the configured kernel over `[τ, τ + horizon]`.
pub fn default_lambda_eps(cfg: &ExperimentConfig, horizon: f64) -> f64 {
    let kernel = cfg.process.kernel.build();
    let a = audit(
        kernel.as_ref(),
        &linspace(cfg.tau, cfg.tau + horizon, 21),
        &SGrid::default(),
        &AuditTolerances::default(),
    );
    (0.05 * a.delta_star * a.kappa_inf).clamp(1e-6, 1.0)
}

#[derive(Debug, Clone)]
pub struct FreeOscillationReport {
    /// `max_t ‖u(t) − u_exact(t)‖ / horizon`, in `H¹`.
    pub error_rate: f64,
    pub energy_drift_rate: f64,
    pub samples: Vec<Sample>,
}

fn free_run(
    settings: &ProcessSettings,
    tau: f64,
    horizon: f64,
    u0: SpectralField,
    v0: SpectralField,
) -> Result<FreeOscillationReport, HarnessError> {
    let p = process(settings, tau, horizon)?;
    let z = InitialData {
        u: u0.clone(),
        v: v0.clone(),
        history: InitialHistory::Zero,
    };
    let tr = p.evolve(&z)?;
    let e0 = tr.samples[0].energy(0.0);
    let mut err: f64 = 0.0;
    let mut drift: f64 = 0.0;
    for s in &tr.samples {
        let dt = s.t - tau;
        let exact = SpectralField::from_coeffs(
            (0..u0.len())
                .map(|i| {
                    let w = (i + 1) as f64;
                    u0.coeffs()[i] * (w * dt).cos() + v0.coeffs()[i] / w * (w * dt).sin()
                })
                .collect(),
        );
        err = err.max((&s.u - &exact).sigma_norm(1.0));
        drift = drift.max((s.energy(0.0) - e0).abs());
    }
    Ok(FreeOscillationReport {
        error_rate: err / horizon,
        energy_drift_rate: drift / horizon.max(1e-300) / e0.max(1e-300),
        samples: tr.samples,
    })
}

pub fn free_oscillation(
    cfg: &ExperimentConfig,
    out: Option<&Path>,
) -> Result<(Vec<FreeOscillationReport>, Outcome), HarnessError> {
    let settings = cfg.process.free();
    let n = settings.n_modes;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ru = SpectralField::from_coeffs(
        (1..=n)
            .map(|k| rng.random_range(-1.0..1.0) / (k * k) as f64)
            .collect(),
    );
    let rv = SpectralField::from_coeffs((1..=n).map(|k| rng.random_range(-1.0..1.0) / k as f64).collect());
    let cases = [
        (SpectralField::mode(n, 1), SpectralField::zeros(n)),
        (SpectralField::zeros(n), SpectralField::mode(n, 2.min(n))),
        (ru, rv),
    ];
    let reports = cases
        .into_iter()
        .map(|(u, v)| free_run(&settings, cfg.tau, cfg.horizon, u, v))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(dir) = out {
        write_samples_csv(&reports[2].samples, create(dir, "free_oscillation.csv")?)?;
    }
    let mut o = Outcome::new(Experiment::FreeOscillation);
    let err = reports.iter().map(|r| r.error_rate).fold(0.0, f64::max);
    let drift = reports.iter().map(|r| r.energy_drift_rate).fold(0.0, f64::max);
    o.quantity("max_error_per_unit_time", err);
    o.quantity("energy_drift_per_unit_time", drift);
    o.check("mode_oracle", err <= 1e-8, &format!("{err:e}"));
    o.check("energy_conservation", drift <= 1e-9, &format!("{drift:e}"));
    Ok((reports, o))
}

#[derive(Debug, Clone)]
pub struct AbsorbRun {
    pub radius: f64,
    pub fit: DecayFit,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone)]
pub struct AbsorbReport {
    pub runs: Vec<AbsorbRun>,
    /// `max R₀ / min R₀ − 1`.
    pub plateau_spread: f64,
}

pub fn absorb_runs(cfg: &ExperimentConfig) -> Result<AbsorbReport, HarnessError> {
    let p = process(&cfg.process, cfg.tau, cfg.horizon)?;
    let runs = cfg
        .absorb_radii
        .par_iter()
        .enumerate()
        .map(|(i, &r)| {
            let z = random_initial_data(&p, 0.0, r, member_seed(cfg.seed, i as u64))?;
            let tr = p.evolve(&z)?;
            let (t, e) = series(&tr.samples, 0.0);
            let fit = fit_decay(&t, &e, (cfg.tau, cfg.tau + cfg.horizon))?;
            Ok(AbsorbRun {
                radius: r,
                fit,
                samples: tr.samples,
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let hi = runs
        .iter()
        .map(|r| r.fit.plateau)
        .fold(f64::NEG_INFINITY, f64::max);
    let lo = runs.iter().map(|r| r.fit.plateau).fold(f64::INFINITY, f64::min);
    Ok(AbsorbReport {
        runs,
        plateau_spread: if lo > 0.0 { hi / lo - 1.0 } else { f64::INFINITY },
    })
}

/// Memory-inequality monitors at σ = 0 and 1 along `cfg.monitor_runs` trajectories
/// from H¹-level random data of radius `cfg.radius`.
pub fn memory_inequality_sweep(cfg: &ExperimentConfig) -> Result<Vec<MemoryInequalityReport>, HarnessError> {
    let p = process(&cfg.process, cfg.tau, cfg.horizon)?;
    let per_run = (0..cfg.monitor_runs)
        .into_par_iter()
        .map(|i| {
            let z = random_initial_data(&p, 1.0, cfg.radius, member_seed(cfg.seed, 100 + i as u64))?;
            let mut m0 = MemoryInequalityMonitor::new(0.0);
            let mut m1 = MemoryInequalityMonitor::new(1.0);
            {
                let mut obs: Vec<&mut dyn Observer> = vec![&mut m0, &mut m1];
                p.evolve_observed(&z, &mut obs)?;
            }
            Ok(vec![
                m0.report(MONITOR_STRIDE, MIN_GAP)?,
                m1.report(MONITOR_STRIDE, MIN_GAP)?,
            ])
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(per_run.into_iter().flatten().collect())
}

pub fn absorb(
    cfg: &ExperimentConfig,
    out: Option<&Path>,
) -> Result<((AbsorbReport, Vec<MemoryInequalityReport>), Outcome), HarnessError> {
    let rep = absorb_runs(cfg)?;
    let monitors = memory_inequality_sweep(cfg)?;
    let mut o = Outcome::new(Experiment::Absorb);
    for r in &rep.runs {
        o.quantity(&format!("omega[R={}]", r.radius), r.fit.omega);
        o.quantity(&format!("R0[R={}]", r.radius), r.fit.plateau);
    }
    o.quantity("plateau_spread", rep.plateau_spread);
    o.check(
        "omega_positive",
        rep.runs.iter().all(|r| r.fit.omega > 0.0 && !r.fit.no_decay),
        "",
    );
    o.check(
        "plateaus_agree",
        rep.plateau_spread <= PLATEAU_SPREAD,
        &format!("{}", rep.plateau_spread),
    );
    if !monitors.is_empty() {
        let worst = monitors
            .iter()
            .map(|m| m.worst.margin)
            .fold(f64::INFINITY, f64::min);
        o.quantity("memory_inequality_worst_margin", worst);
        o.check("memory_inequality", worst >= MEMORY_MARGIN, &format!("{worst:e}"));
    }
    if let Some(dir) = out {
        for r in &rep.runs {
            write_samples_csv(&r.samples, create(dir, &format!("absorb_R{}.csv", r.radius))?)?;
            let (t, e) = series(&r.samples, 0.0);
            write_curve(dir, &format!("absorb_R{}_E0.dat", r.radius), &t, &e)?;
        }
        DecayFit::write_csv(
            &rep.runs.iter().map(|r| r.fit).collect::<Vec<_>>(),
            create(dir, "absorb_fits.csv")?,
        )?;
        let mut w = create(dir, "memory_inequality.csv")?;
        for (i, m) in monitors.iter().enumerate() {
            let name = format!("memory_inequality_run{}_sigma{}", i / 2, m.sigma);
            let mut buf = Vec::new();
            crate::functionals::write_check_csv(&name, &m.rows, &mut buf)?;
            let text = String::from_utf8_lossy(&buf);
            let body = if i == 0 {
                &text[..]
            } else {
                text.split_once('\n').map_or("", |x| x.1)
            };
            w.write_all(body.as_bytes())?;
        }
        w.flush()?;
    }
    Ok(((rep, monitors), o))
}

#[derive(Debug, Clone)]
pub struct SplitModeReport {
    pub mode: SplitMode,
    pub max_residual: f64,
    /// Pure exponential fit of `‖U₀‖²_{H_t}` over the second half.
    pub u0_fit: DecayFit,
    /// Share of the variance of `ln ‖U₀‖²` the fit leaves unexplained.
    pub u0_unexplained: f64,
    /// Regularity at which `U₁` is measured.
    pub u1_sigma: f64,
    pub u1_trend: f64,
    pub u1_sup: f64,
    pub run: SplitRun,
}

fn split_mode(
    cfg: &ExperimentConfig,
    p: &Process,
    z: &InitialData,
    mode: SplitMode,
) -> Result<SplitModeReport, HarnessError> {
    let run = p.evolve_split(z, mode)?;
    let max_residual = run.residual.iter().cloned().fold(0.0, f64::max);
    let t: Vec<f64> = run.u0_part.iter().map(|s| s.t).collect();
    let e0: Vec<f64> = run.u0_part.iter().map(|s| s.norm_sq(0.0)).collect();
    let tail = (cfg.tau + 0.5 * cfg.horizon, cfg.tau + cfg.horizon);
    let u0_fit = fit_exponential(&t, &e0, tail)?;
    let u0_unexplained = unexplained_fraction(&u0_fit, &t, &e0)?;
    let u1_sigma = match mode {
        SplitMode::Lemma48 => 1.0 / 3.0,
        SplitMode::Lemma410 => 1.0,
    };
    let e1: Vec<f64> = run.u1_part.iter().map(|s| s.norm_sq(u1_sigma)).collect();
    Ok(SplitModeReport {
        mode,
        max_residual,
        u0_fit,
        u0_unexplained,
        u1_sigma,
        u1_trend: second_half_trend(&t, &e1),
        u1_sup: e1.iter().cloned().fold(0.0, f64::max),
        run,
    })
}

pub fn split_decay(
    cfg: &ExperimentConfig,
    out: Option<&Path>,
) -> Result<(Vec<SplitModeReport>, Outcome), HarnessError> {
    let p = process(&cfg.process, cfg.tau, cfg.horizon)?;
    let z = random_initial_data(&p, 1.0, cfg.radius, member_seed(cfg.seed, 200))?;
    let reports = [SplitMode::Lemma48, SplitMode::Lemma410]
        .par_iter()
        .map(|&m| split_mode(cfg, &p, &z, m))
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let mut o = Outcome::new(Experiment::SplitDecay);
    for r in &reports {
        let tag = match r.mode {
            SplitMode::Lemma48 => "lemma48",
            SplitMode::Lemma410 => "lemma410",
        };
        o.quantity(&format!("{tag}.omega0"), r.u0_fit.omega);
        o.quantity(&format!("{tag}.log_rms"), r.u0_fit.rms_residual);
        o.quantity(&format!("{tag}.unexplained"), r.u0_unexplained);
        o.quantity(&format!("{tag}.max_residual"), r.max_residual);
        o.quantity(&format!("{tag}.u1_trend"), r.u1_trend);
        o.check(
            &format!("{tag}.superposition"),
            r.max_residual <= SPLIT_RESIDUAL,
            &format!("{:e}", r.max_residual),
        );
        o.check(
            &format!("{tag}.u0_decays"),
            r.u0_fit.omega > 0.0 && !r.u0_fit.no_decay,
            "",
        );
        o.check(
            &format!("{tag}.u0_log_linear"),
            r.u0_unexplained < FIT_RESIDUAL,
            &format!("{}", r.u0_unexplained),
        );
        o.check(
            &format!("{tag}.u1_bounded"),
            r.u1_trend <= GROWTH_TOL && r.u1_sup.is_finite(),
            &format!("{}", r.u1_trend),
        );
        if let Some(dir) = out {
            write_samples_csv(&r.run.full, create(dir, &format!("split_{tag}_full.csv"))?)?;
            write_samples_csv(&r.run.u0_part, create(dir, &format!("split_{tag}_u0.csv"))?)?;
            write_samples_csv(&r.run.u1_part, create(dir, &format!("split_{tag}_u1.csv"))?)?;
        }
    }
    Ok((reports, o))
}

#[derive(Debug, Clone)]
pub struct LadderRung {
    pub sigma: f64,
    pub fit: DecayFit,
    pub sup: f64,
    pub samples: Vec<Sample>,
}

pub fn regularity_ladder(
    cfg: &ExperimentConfig,
    out: Option<&Path>,
) -> Result<(Vec<LadderRung>, Outcome), HarnessError> {
    let p = process(&cfg.process, cfg.tau, cfg.horizon)?;
    let rungs = [1.0 / 3.0, 1.0]
        .par_iter()
        .enumerate()
        .map(|(i, &sigma)| {
            let z = random_initial_data(&p, sigma, cfg.radius, member_seed(cfg.seed, 300 + i as u64))?;
            let tr = p.evolve(&z)?;
            let (t, e) = series(&tr.samples, sigma);
            let fit = fit_decay(&t, &e, (cfg.tau, cfg.tau + cfg.horizon))?;
            Ok(LadderRung {
                sigma,
                fit,
                sup: e.iter().cloned().fold(0.0, f64::max),
                samples: tr.samples,
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let mut o = Outcome::new(Experiment::RegularityLadder);
    for r in &rungs {
        let tag = format!("E_{:.3}", r.sigma);
        o.quantity(&format!("{tag}.omega"), r.fit.omega);
        o.quantity(&format!("{tag}.plateau"), r.fit.plateau);
        o.quantity(&format!("{tag}.sup"), r.sup);
        o.check(&format!("{tag}.bounded"), r.sup.is_finite(), "");
        o.check(
            &format!("{tag}.excess_decays"),
            r.fit.omega > 0.0 && !r.fit.no_decay,
            "",
        );
        if let Some(dir) = out {
            write_samples_csv(
                &r.samples,
                create(dir, &format!("ladder_sigma{:.3}.csv", r.sigma))?,
            )?;
        }
    }
    Ok((rungs, o))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuasiFit {
    pub c: f64,
    pub kappa: f64,
    pub q: f64,
}

impl QuasiFit {
    /// `C e^{−κ(t−τ)}‖δz‖² + Q e^{t−τ} ∫‖ū‖²`.
    pub fn bound(&self, elapsed: f64, delta0: f64, accum: f64) -> f64 {
        self.c * (-self.kappa * elapsed).exp() * delta0 + self.q * elapsed.exp() * accum
    }
}

#[derive(Debug, Clone)]
pub struct PairCurve {
    pub t: Vec<f64>,
    pub dist_sq: Vec<f64>,
    pub accum: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct QuasiReport {
    pub fit: QuasiFit,
    pub train_rates: Vec<f64>,
    /// Smallest `(bound − measured)/bound` on each validation pair.
    pub test_margins: Vec<f64>,
    pub train_margins: Vec<f64>,
}

fn pair_curves(
    cfg: &ExperimentConfig,
    p: &Process,
    offset: u64,
    count: usize,
) -> Result<Vec<PairCurve>, HarnessError> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let s = member_seed(cfg.seed, offset + 2 * i as u64);
            let z1 = random_initial_data(p, 0.0, cfg.radius, s)?;
            let z2 = random_initial_data(p, 0.0, cfg.radius, s + 1)?;
            let run = p.difference_run(&z1, &z2)?;
            Ok(PairCurve {
                t: run.samples.iter().map(|d| d.t).collect(),
                dist_sq: run.samples.iter().map(|d| d.dist_sq).collect(),
                accum: run.samples.iter().map(|d| d.accum).collect(),
            })
        })
        .collect()
}

fn min_margin(fit: &QuasiFit, c: &PairCurve) -> f64 {
    let t0 = c.t[0];
    c.t.iter()
        .zip(&c.dist_sq)
        .zip(&c.accum)
        .map(|((t, d), a)| {
            let b = fit.bound(t - t0, c.dist_sq[0], *a);
            (b - d) / b
        })
        .fold(f64::INFINITY, f64::min)
}

/// Fits `(C, κ, Q)` on training pairs: `κ` is half the smallest fitted decay
/// rate of `‖δz‖²`, `C` the largest ratio `‖δz(t)‖²e^{κ(t−τ)}/‖δz(τ)‖²` over the
/// first unit of time, `Q` the largest remaining excess over `e^{t−τ}∫‖ū‖²`,
/// both multiplied by `safety`.
pub fn fit_quasi(curves: &[PairCurve], safety: f64) -> Result<(QuasiFit, Vec<f64>), HarnessError> {
    let mut rates = Vec::with_capacity(curves.len());
    for c in curves {
        let window = (c.t[0], *c.t.last().expect("nonempty"));
        rates.push(fit_decay(&c.t, &c.dist_sq, window)?.omega);
    }
    let kappa = 0.5 * rates.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut cmax: f64 = 1.0;
    for c in curves {
        let t0 = c.t[0];
        for (t, d) in c.t.iter().zip(&c.dist_sq).filter(|(t, _)| **t - t0 <= 1.0) {
            cmax = cmax.max(d * (kappa * (t - t0)).exp() / c.dist_sq[0]);
        }
    }
    let mut qmax: f64 = 0.0;
    for c in curves {
        let t0 = c.t[0];
        for ((t, d), a) in c.t.iter().zip(&c.dist_sq).zip(&c.accum) {
            if *a <= 0.0 {
                continue;
            }
            let excess = d - cmax * (-kappa * (t - t0)).exp() * c.dist_sq[0];
            if excess > 0.0 {
                qmax = qmax.max(excess / ((t - t0).exp() * a));
            }
        }
    }
    Ok((
        QuasiFit {
            c: safety * cmax,
            kappa,
            q: safety * qmax,
        },
        rates,
    ))
}

pub fn quasistability(
    cfg: &ExperimentConfig,
    out: Option<&Path>,
) -> Result<(QuasiReport, Outcome), HarnessError> {
    let p = process(&cfg.process, cfg.tau, cfg.quasi_horizon)?;
    let train = pair_curves(cfg, &p, 400, cfg.quasi_train)?;
    let test = pair_curves(cfg, &p, 400 + 2 * cfg.quasi_train as u64, cfg.quasi_test)?;
    let (fit, rates) = fit_quasi(&train, cfg.quasi_safety)?;
    let report = QuasiReport {
        fit,
        train_rates: rates,
        train_margins: train.iter().map(|c| min_margin(&fit, c)).collect(),
        test_margins: test.iter().map(|c| min_margin(&fit, c)).collect(),
    };
    let mut o = Outcome::new(Experiment::Quasistability);
    o.quantity("C", fit.c);
    o.quantity("kappa", fit.kappa);
    o.quantity("Q", fit.q);
    let train_min = report.train_margins.iter().cloned().fold(f64::INFINITY, f64::min);
    let test_min = report.test_margins.iter().cloned().fold(f64::INFINITY, f64::min);
    o.quantity("train_min_margin", train_min);
    o.quantity("test_min_margin", test_min);
    o.check("kappa_positive", fit.kappa > 0.0, "");
    o.check(
        "bound_dominates_training",
        train_min >= 0.0,
        &format!("{train_min}"),
    );
    o.check(
        "bound_dominates_validation",
        test_min >= 0.0,
        &format!("{test_min}"),
    );
    if let Some(dir) = out {
        let mut w = csv::Writer::from_writer(create(dir, "quasistability.csv")?);
        w.write_record(["set", "pair", "t", "dist_sq", "accum", "bound"])?;
        for (set, curves) in [("train", &train), ("test", &test)] {
            for (i, c) in curves.iter().enumerate() {
                for ((t, d), a) in c.t.iter().zip(&c.dist_sq).zip(&c.accum) {
                    let b = fit.bound(t - c.t[0], c.dist_sq[0], *a);
                    w.write_record([
                        set.to_string(),
                        i.to_string(),
                        format!("{t:e}"),
                        format!("{d:e}"),
                        format!("{a:e}"),
                        format!("{b:e}"),
                    ])?;
                }
            }
        }
        w.flush()?;
    }
    Ok((report, o))
}

/// A synthetic instance satisfying the trapezoid form of the hypothesis.
#[derive(Debug, Clone)]
pub struct SyntheticGronwall {
    pub times: Vec<f64>,
    pub lambda: Vec<f64>,
    pub q1: Vec<f64>,
    pub q2: Vec<f64>,
    pub eps: f64,
    pub c1: f64,
    pub c2: f64,
}

fn piecewise<R: Rng>(rng: &mut R, n: usize, h: f64, mut value: impl FnMut(&mut R) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let len = ((rng.random_range(0.2..2.0) / h) as usize).max(1);
        let v = value(rng);
        out.extend(std::iter::repeat_n(v, len.min(n - out.len())));
    }
    out
}

/// Random `ε`, piecewise-constant `q₁ ≥ 0`, `q₂ ≥ 0`, `Λ(τ)` and nonnegative
/// per-step slack; `Λ` follows the trapezoid recurrence of the hypothesis and
/// `c₁`, `c₂` are the measured side-condition constants.
pub fn synthetic_gronwall<R: Rng>(rng: &mut R, steps: usize, h: f64) -> SyntheticGronwall {
    let eps = rng.random_range(0.05..1.0);
    let q1 = piecewise(rng, steps + 1, h, |r| r.random_range(0.0..3.0 * eps));
    let q2 = piecewise(rng, steps + 1, h, |r| {
        if r.random_bool(0.5) {
            0.0
        } else {
            r.random_range(0.0..2.0)
        }
    });
    let mut lambda = vec![rng.random_range(-5.0..10.0)];
    for i in 0..steps {
        let slack = if rng.random_bool(0.3) {
            rng.random_range(0.0..0.5) * h
        } else {
            0.0
        };
        let prev = lambda[i];
        let num = prev * (1.0 - eps * h + 0.5 * h * q1[i]) + 0.5 * h * (q2[i] + q2[i + 1]) - slack;
        lambda.push(num / (1.0 + eps * h - 0.5 * h * q1[i + 1]));
    }
    SyntheticGronwall {
        times: (0..=steps).map(|i| i as f64 * h).collect(),
        c1: measure_c1(&q1, h, eps),
        c2: measure_c2(&q2, h),
        lambda,
        q1,
        q2,
        eps,
    }
}

#[derive(Debug, Clone)]
pub struct GronwallSweep {
    pub trials: usize,
    pub hypothesis_failures: usize,
    pub conclusion_failures: usize,
    pub worst_conclusion: f64,
    pub pipeline: GronwallReport,
    pub pipeline_eps: f64,
    /// Smallest `Q ≥ 0` with `E − Q ≤ Λ ≤ 3E + Q` along the pipeline trajectory.
    pub sandwich_q: f64,
}

/// Hypothesis tolerance relative to the instance scale.
const SYNTH_TOL: f64 = 1e-9;

pub fn gronwall_synthetic(seed: u64, trials: usize) -> Result<(usize, usize, f64), HarnessError> {
    let results = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(member_seed(seed, i as u64));
            let inst = synthetic_gronwall(&mut rng, 400, 0.0125);
            let r = gronwall_check(
                &inst.times,
                &inst.lambda,
                &inst.q1,
                &inst.q2,
                inst.eps,
                inst.c1,
                inst.c2,
                1,
            )?;
            let scale = inst.lambda.iter().map(|v| v.abs()).fold(1.0, f64::max);
            let hyp = r.hypothesis_holds(SYNTH_TOL * scale);
            Ok((hyp, r.conclusion_holds(0.0), r.conclusion_violation))
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let hyp_fail = results.iter().filter(|r| !r.0).count();
    let concl_fail = results.iter().filter(|r| r.0 && !r.1).count();
    let worst = results.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max);
    Ok((hyp_fail, concl_fail, worst))
}

/// Measured `Λ_{1/3}` with `q₁ = α + ‖v‖₁²` (`v` the first component of `U₀`
/// in the monotone split, `α = ε/2`) and the smallest nonnegative `q₂` on the
/// grid that closes the hypothesis.
pub fn gronwall_pipeline(cfg: &ExperimentConfig) -> Result<(GronwallReport, f64, f64), HarnessError> {
    let horizon = cfg.gronwall_horizon;
    let eps = cfg.lambda_eps.unwrap_or_else(|| default_lambda_eps(cfg, horizon));
    let p = process(&cfg.process, cfg.tau, horizon)?;
    let z = random_initial_data(&p, 1.0 / 3.0, cfg.radius, member_seed(cfg.seed, 500))?;
    let every = cfg.process.sample_every as u64;
    let mut rec = EnergyRecorder::new(1.0 / 3.0, eps, every);
    {
        let mut obs: Vec<&mut dyn Observer> = vec![&mut rec];
        p.evolve_observed(&z, &mut obs)?;
    }
    let split = p.evolve_split(&z, SplitMode::Lemma48)?;
    let times: Vec<f64> = rec.records.iter().map(|r| r.t).collect();
    let lambda: Vec<f64> = rec.records.iter().map(|r| r.lambda_functional).collect();
    if split.u0_part.len() != times.len() {
        return Err(HarnessError::Numerical("split and recorder grids differ".into()));
    }
    let alpha = 0.5 * eps;
    let q1: Vec<f64> = split
        .u0_part
        .iter()
        .map(|s| alpha + s.u.sigma_norm_sq(1.0))
        .collect();
    let h = times[1] - times[0];
    let mut q2 = vec![0.0; times.len()];
    for i in 0..times.len() - 1 {
        let need = lambda[i + 1] * (1.0 + eps * h - 0.5 * h * q1[i + 1])
            - lambda[i] * (1.0 - eps * h + 0.5 * h * q1[i]);
        q2[i + 1] = (2.0 * need / h - q2[i]).max(0.0);
    }
    let c1 = measure_c1(&q1, h, eps);
    let c2 = measure_c2(&q2, h);
    let report = gronwall_check(&times, &lambda, &q1, &q2, eps, c1, c2, MIN_GAP)?;
    let sandwich = rec
        .records
        .iter()
        .map(|r| {
            let e = r.energy[1];
            (e - r.lambda_functional)
                .max(r.lambda_functional - 3.0 * e)
                .max(0.0)
        })
        .fold(0.0, f64::max);
    Ok((report, eps, sandwich))
}

pub fn gronwall(
    cfg: &ExperimentConfig,
    out: Option<&Path>,
) -> Result<(GronwallSweep, Outcome), HarnessError> {
    let (hyp_fail, concl_fail, worst) = gronwall_synthetic(cfg.seed, cfg.gronwall_trials)?;
    let (pipeline, eps, sandwich) = gronwall_pipeline(cfg)?;
    let scale = pipeline.worst_conclusion.rhs.abs().max(1.0);
    let sweep = GronwallSweep {
        trials: cfg.gronwall_trials,
        hypothesis_failures: hyp_fail,
        conclusion_failures: concl_fail,
        worst_conclusion: worst,
        pipeline_eps: eps,
        sandwich_q: sandwich,
        pipeline,
    };
    let mut o = Outcome::new(Experiment::Gronwall);
    o.quantity("trials", sweep.trials as f64);
    o.quantity("hypothesis_failures", hyp_fail as f64);
    o.quantity("conclusion_failures", concl_fail as f64);
    o.quantity("pipeline_eps", eps);
    o.quantity(
        "pipeline_conclusion_violation",
        sweep.pipeline.conclusion_violation,
    );
    o.quantity("sandwich_Q", sandwich);
    o.check(
        "synthetic_hypothesis_holds",
        hyp_fail == 0,
        &format!("{hyp_fail}"),
    );
    o.check(
        "synthetic_conclusion_holds",
        concl_fail == 0,
        &format!("{concl_fail}"),
    );
    o.check(
        "pipeline_hypothesis_holds",
        sweep.pipeline.hypothesis_holds(1e-9 * scale),
        &format!("{:e}", sweep.pipeline.hypothesis_violation),
    );
    o.check(
        "pipeline_conclusion_holds",
        sweep.pipeline.conclusion_holds(0.0),
        &format!("{:e}", sweep.pipeline.conclusion_violation),
    );
    if let Some(dir) = out {
        crate::functionals::write_check_csv(
            "gronwall_pipeline_conclusion",
            &[sweep.pipeline.worst_conclusion],
            create(dir, "gronwall.csv")?,
        )?;
    }
    Ok((sweep, o))
}

pub fn covering(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<(CoveringDemo, Outcome), HarnessError> {
    let toy = ToyProcess::tanh_2d();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let demo = run_covering(&toy, 0, cfg.covering_depth, cfg.covering_cloud, &mut rng)?;
    let mut o = Outcome::new(Experiment::CoveringDemo);
    o.quantity("m_Z", demo.m_z as f64);
    for (k, n) in demo.cardinalities.iter().enumerate() {
        o.quantity(&format!("N({k})"), *n as f64);
    }
    o.quantity("coverage_ratio", demo.coverage_ratio);
    o.quantity("box_dimension", demo.box_dimension.value);
    o.quantity("dimension_bound", demo.dimension_bound);
    o.check("cardinality_law", demo.cardinality_law, "");
    o.check("cell_diameters", demo.diameters, "");
    o.check(
        "coverage",
        demo.coverage_ratio <= 1.0 + crate::covering::SAMPLING_SLACK,
        &format!("{}", demo.coverage_ratio),
    );
    o.check("card_E_bound", demo.card_e_bound, "");
    o.check("semi_invariance", demo.semi_invariance_defect <= 1e-12, "");
    o.check(
        "dimension_bound",
        demo.box_dimension.value <= demo.dimension_bound + CoveringDemo::DIMENSION_SLACK,
        "",
    );
    if let Some(dir) = out {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let cloud = toy.sample_ball(cfg.covering_cloud, &mut rng);
        let tree = crate::covering::build_covering(&toy, 0, cfg.covering_depth, cloud)?;
        tree.write_csv(create(dir, "covering_tree.csv")?)?;
        let mut w = create(dir, "covering_cardinalities.csv")?;
        writeln!(w, "k,N,bound")?;
        for (k, n) in demo.cardinalities.iter().enumerate() {
            writeln!(w, "{k},{n},{:e}", (demo.m_z as f64).powi(k as i32))?;
        }
        w.flush()?;
    }
    Ok((demo, o))
}

#[derive(Debug, Clone)]
pub struct RadiiReport {
    /// Largest post-transient `E_σ` at σ = 0, 1/3, 1 over the ensemble.
    pub radii: [f64; 3],
    pub per_seed: Vec<[f64; 3]>,
    /// `max/min − 1` over seeds at each σ.
    pub spread: [f64; 3],
    /// Set when the energy still moves by more than 10% across the window.
    pub inconclusive: bool,
}

/// Radii below this are reported as zero.
pub const RADIUS_FLOOR: f64 = 1e-10;

pub fn estimate_radii(cfg: &ExperimentConfig) -> Result<RadiiReport, HarnessError> {
    let p = process(&cfg.process, cfg.tau, cfg.horizon)?;
    let sigmas = crate::dynamics::SIGMAS;
    let start = cfg.tau + 0.5 * cfg.horizon;
    let rows = (0..cfg.ensemble)
        .into_par_iter()
        .map(|i| {
            let z = random_initial_data(&p, 1.0, cfg.radius, member_seed(cfg.seed, 600 + i as u64))?;
            let tr = p.evolve(&z)?;
            let post: Vec<&Sample> = tr.samples.iter().filter(|s| s.t >= start).collect();
            let sup = sigmas.map(|s| post.iter().map(|x| x.energy(s)).fold(0.0, f64::max));
            let first = post.first().map_or(0.0, |s| s.energy(0.0));
            let last = post.last().map_or(0.0, |s| s.energy(0.0));
            let moving = (first - last).abs() > 0.1 * last.max(RADIUS_FLOOR) && first > RADIUS_FLOOR;
            Ok((sup, moving))
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let per_seed: Vec<[f64; 3]> = rows.iter().map(|r| r.0).collect();
    let mut radii = [0.0; 3];
    let mut spread = [0.0; 3];
    for j in 0..3 {
        let hi = per_seed.iter().map(|r| r[j]).fold(0.0, f64::max);
        let lo = per_seed.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
        radii[j] = if hi < RADIUS_FLOOR { 0.0 } else { hi };
        spread[j] = if hi < RADIUS_FLOOR { 0.0 } else { hi / lo - 1.0 };
    }
    Ok(RadiiReport {
        radii,
        per_seed,
        spread,
        inconclusive: rows.iter().any(|r| r.1),
    })
}

pub fn attractor_radii(
    cfg: &ExperimentConfig,
    out: Option<&Path>,
) -> Result<(RadiiReport, Outcome), HarnessError> {
    let rep = estimate_radii(cfg)?;
    let mut o = Outcome::new(Experiment::AttractorRadii);
    for (j, s) in ["0", "1/3", "1"].iter().enumerate() {
        o.quantity(&format!("radius[sigma={s}]"), rep.radii[j]);
        o.quantity(&format!("spread[sigma={s}]"), rep.spread[j]);
    }
    if rep.inconclusive {
        o.flag("inconclusive: transient not settled within horizon");
    }
    o.check("radii_finite", rep.radii.iter().all(|r| r.is_finite()), "");
    o.check(
        "seed_independent",
        rep.spread.iter().all(|s| *s <= RADII_SPREAD),
        &format!("{:?}", rep.spread),
    );
    if let Some(dir) = out {
        let mut w = create(dir, "attractor_radii.csv")?;
        writeln!(w, "seed,E0,E1/3,E1")?;
        for (i, r) in rep.per_seed.iter().enumerate() {
            writeln!(w, "{i},{:e},{:e},{:e}", r[0], r[1], r[2])?;
        }
        w.flush()?;
    }
    Ok((rep, o))
}
