//! Exponential-attractor covering construction on finite-dimensional toy
//! quasi-stable processes.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::functionals::dimension_bound;
use crate::numeric::fit_line;

pub type Point = Vec<f64>;

/// Separation used for the strict inequality `n_Z(z_i − z_j) > 1`.
pub const STRICT_GAP: f64 = 1.0 + 1e-9;
/// Relative slack on radii for points not in the construction cloud.
pub const SAMPLING_SLACK: f64 = 0.02;
pub const DEFAULT_CLOUD: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoveringError {
    #[error("decomposition inequality fails at step {n}: {lhs} > {rhs}")]
    ProcessInvalid { n: i64, lhs: f64, rhs: f64 },
    #[error("semi-invariance fails at step {n}: image norm {norm} exceeds radius {radius}")]
    NotSemiInvariant { n: i64, norm: f64, radius: f64 },
    #[error("domain error: {0}")]
    Domain(String),
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// The nonlinear part `φ_n` of `x ↦ η₀x + φ_n(x)`.
#[derive(Debug, Clone, PartialEq)]
pub enum ToyMap {
    /// `φ(x) = scale · tanh(x)` componentwise.
    Tanh { scale: f64 },
    /// `U(x) = c`, with `K = 0`.
    Constant(Point),
    /// `φ = 0`.
    Linear,
    /// `φ_n(x) = scale · (1 + amplitude · sin(2πn / period)) · tanh(x)`.
    Drifting { scale: f64, amplitude: f64, period: f64 },
}

/// Discrete process `U(n, n−1)x = η₀x + φ_n(x)` on `ℝ^d` with smoothing map
/// `K_n = φ_n`, absorbing balls `B(n)` of radius `R₀` and `n_Z` Euclidean.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyProcess {
    pub dim: usize,
    pub eta0: f64,
    pub radius: f64,
    pub lipschitz: f64,
    pub map: ToyMap,
}

impl ToyProcess {
    pub fn new(dim: usize, eta0: f64, radius: f64, map: ToyMap) -> Result<Self, CoveringError> {
        if dim == 0 {
            return Err(CoveringError::Domain("dimension must be positive".into()));
        }
        if !(eta0 > 0.0 && eta0 < 0.5) {
            return Err(CoveringError::Domain(format!("eta0 = {eta0} outside (0, 1/2)")));
        }
        if !(radius > 0.0) {
            return Err(CoveringError::Domain(format!("radius {radius} must be positive")));
        }
        let lipschitz = match &map {
            ToyMap::Tanh { scale } => scale.abs(),
            ToyMap::Constant(c) => {
                if c.len() != dim {
                    return Err(CoveringError::Domain("constant has wrong dimension".into()));
                }
                0.0
            }
            ToyMap::Linear => 0.0,
            ToyMap::Drifting {
                scale,
                amplitude,
                period,
            } => {
                if !(*period > 0.0) {
                    return Err(CoveringError::Domain("period must be positive".into()));
                }
                scale.abs() * (1.0 + amplitude.abs())
            }
        };
        Ok(Self {
            dim,
            eta0,
            radius,
            lipschitz,
            map,
        })
    }

    /// `x ↦ x/4 + tanh(x)/2` on `ℝ²` with `R₀ = 1`.
    pub fn tanh_2d() -> Self {
        Self::new(2, 0.25, 1.0, ToyMap::Tanh { scale: 0.5 }).expect("valid toy process")
    }

    /// Lipschitz constant of one step, `η₀ + L` (1 for the constant map).
    pub fn l1(&self) -> f64 {
        match self.map {
            ToyMap::Constant(_) => 1.0,
            _ => (self.eta0 + self.lipschitz).max(1.0),
        }
    }

    fn amplitude(&self, n: i64) -> f64 {
        match &self.map {
            ToyMap::Tanh { scale } => *scale,
            ToyMap::Drifting {
                scale,
                amplitude,
                period,
            } => scale * (1.0 + amplitude * (2.0 * PI * n as f64 / period).sin()),
            _ => 0.0,
        }
    }

    /// `K_n x = φ_n(x)`.
    pub fn smoothing(&self, n: i64, x: &[f64]) -> Point {
        match &self.map {
            ToyMap::Constant(_) | ToyMap::Linear => vec![0.0; x.len()],
            _ => {
                let a = self.amplitude(n);
                x.iter().map(|v| a * v.tanh()).collect()
            }
        }
    }

    /// `U(n, n−1) x`.
    pub fn step(&self, n: i64, x: &[f64]) -> Point {
        if let ToyMap::Constant(c) = &self.map {
            return c.clone();
        }
        let k = self.smoothing(n, x);
        x.iter().zip(k).map(|(v, k)| self.eta0 * v + k).collect()
    }

    /// `U(to, from) x`.
    pub fn evolve(&self, from: i64, to: i64, x: &[f64]) -> Point {
        let mut y = x.to_vec();
        for n in (from + 1)..=to {
            y = self.step(n, &y);
        }
        y
    }

    /// Uniform samples of the ball `B(n)`.
    pub fn sample_ball<R: Rng>(&self, count: usize, rng: &mut R) -> Vec<Point> {
        (0..count)
            .map(|_| {
                let g: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
                let r = self.radius * rng.random::<f64>().powf(1.0 / self.dim as f64) / norm(&g).max(1e-300);
                g.into_iter().map(|v| v * r).collect()
            })
            .collect()
    }

    /// Samples the semi-invariance `U(n, n−1)B(n−1) ⊆ B(n)`, the decomposition
    /// inequality `‖Ux − Uy‖ ≤ η₀‖x − y‖ + n_Z(Kx − Ky)` and the Lipschitz bound of `K`.
    pub fn verify<R: Rng>(&self, n: i64, samples: usize, rng: &mut R) -> Result<(), CoveringError> {
        let pts = self.sample_ball(samples, rng);
        for x in &pts {
            let ux = self.step(n, x);
            let r = norm(&ux);
            if r > self.radius * (1.0 + 1e-12) {
                return Err(CoveringError::NotSemiInvariant {
                    n,
                    norm: r,
                    radius: self.radius,
                });
            }
        }
        for pair in pts.chunks_exact(2) {
            let (x, y) = (&pair[0], &pair[1]);
            let lhs = dist(&self.step(n, x), &self.step(n, y));
            let kd = dist(&self.smoothing(n, x), &self.smoothing(n, y));
            let rhs = self.eta0 * dist(x, y) + kd;
            if lhs > rhs + 1e-12 {
                return Err(CoveringError::ProcessInvalid { n, lhs, rhs });
            }
            if kd > self.lipschitz * dist(x, y) + 1e-12 {
                return Err(CoveringError::ProcessInvalid {
                    n,
                    lhs: kd,
                    rhs: self.lipschitz * dist(x, y),
                });
            }
        }
        Ok(())
    }
}

/// Greedy maximal subset of `points` with pairwise distance `> gap`, in order.
pub fn greedy_centers(points: &[Point], gap: f64) -> Vec<usize> {
    let mut centers: Vec<usize> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if centers.iter().all(|&c| dist(&points[c], p) > gap) {
            centers.push(i);
        }
    }
    centers
}

fn grid_in_ball(dim: usize, r: f64, h: f64) -> Vec<Point> {
    let m = (r / h).floor() as i64;
    let mut out = Vec::new();
    let mut idx = vec![-m; dim];
    loop {
        let p: Point = idx.iter().map(|&i| i as f64 * h).collect();
        if norm(&p) <= r {
            out.push(p);
        }
        let mut j = 0;
        loop {
            if j == dim {
                return out;
            }
            idx[j] += 1;
            if idx[j] <= m {
                break;
            }
            idx[j] = -m;
            j += 1;
        }
    }
}

/// Greedy maximal packing: lexicographic scan of a grid of spacing 0.05 in the
/// Euclidean ball of radius `r`, keeping points at distance `> 1` from all kept.
pub fn packing_number(dim: usize, r: f64) -> Result<usize, CoveringError> {
    if !(r > 0.0) || dim == 0 {
        return Err(CoveringError::Domain(format!(
            "packing radius {r} must be positive"
        )));
    }
    let h = 0.05f64.min(r / 4.0);
    let grid = grid_in_ball(dim, r, h);
    Ok(greedy_centers(&grid, STRICT_GAP).len().max(1))
}

fn count_in_disk(pts: impl Iterator<Item = (f64, f64)>, r: f64) -> usize {
    pts.filter(|(x, y)| x * x + y * y <= r * r).count()
}

fn lattice_packing(r: f64, hex: bool, offset: (f64, f64), angle: f64) -> usize {
    let s = STRICT_GAP;
    let (c, sn) = (angle.cos(), angle.sin());
    let (a, b) = if hex {
        ((s, 0.0), (0.5 * s, 0.5 * 3f64.sqrt() * s))
    } else {
        ((s, 0.0), (0.0, s))
    };
    let m = (r / (0.5 * s)).ceil() as i64 + 2;
    let pts = (-m..=m).flat_map(move |i| {
        (-m..=m).map(move |j| {
            let x = i as f64 * a.0 + j as f64 * b.0 + offset.0;
            let y = i as f64 * a.1 + j as f64 * b.1 + offset.1;
            (c * x - sn * y, sn * x + c * y)
        })
    });
    count_in_disk(pts, r)
}

/// Concentric rings from the boundary inwards, each as full as its chord allows.
fn ring_packing(r: f64) -> usize {
    let mut total = 0;
    let mut rho = r;
    loop {
        if rho < 0.5 * STRICT_GAP {
            return total + 1;
        }
        let n = (PI / (0.5 * STRICT_GAP / rho).asin()).floor() as usize;
        total += n;
        rho -= STRICT_GAP;
        if rho < 0.0 {
            return total;
        }
    }
}

/// Lower-bound oracle for `m_Z(r)` in dimensions 1 and 2, always a valid packing count.
///
/// In one dimension the value `⌊2r / (1 + 10⁻⁹)⌋ + 1` is exact. In two dimensions it is
/// the best of hexagonal and square lattices over a fine grid of offsets and rotations,
/// concentric ring layouts and the greedy grid scan.
pub fn packing_oracle(dim: usize, r: f64) -> Result<usize, CoveringError> {
    if !(r > 0.0) {
        return Err(CoveringError::Domain(format!(
            "packing radius {r} must be positive"
        )));
    }
    match dim {
        1 => Ok((2.0 * r / STRICT_GAP).floor() as usize + 1),
        2 => {
            let steps = 24;
            let mut best = ring_packing(r).max(packing_number(2, r)?);
            for hex in [true, false] {
                for ia in 0..6 {
                    let angle = ia as f64 * PI / 36.0;
                    for ix in 0..steps {
                        for iy in 0..steps {
                            let off = (
                                ix as f64 / steps as f64 * STRICT_GAP,
                                iy as f64 / steps as f64 * STRICT_GAP,
                            );
                            best = best.max(lattice_packing(r, hex, off, angle));
                        }
                    }
                }
            }
            Ok(best)
        }
        _ => Err(CoveringError::Domain(format!(
            "oracle limited to d ≤ 2, got {dim}"
        ))),
    }
}

/// Upper bound `(2r + 1)^d` from disjoint balls of radius 1/2 inside the ball of radius `r + 1/2`.
pub fn packing_volume_bound(dim: usize, r: f64) -> f64 {
    (2.0 * r + 1.0).powi(dim as i32)
}

/// One cell of a covering level.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub id: usize,
    pub parent: Option<usize>,
    /// A point of the cell, so centers lie in the covered set.
    pub center: Point,
    pub points: Vec<Point>,
    pub diameter: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoveringLevel {
    pub k: usize,
    /// Time index the cells live at.
    pub n: i64,
    /// Diameter bound `2(2η₀)^k R₀`.
    pub radius: f64,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoveringTree {
    pub n: i64,
    pub levels: Vec<CoveringLevel>,
    /// `m_Z(2L/η₀)` from [`packing_oracle`] (or the greedy count in higher dimension).
    pub m_z: usize,
}

impl CoveringTree {
    pub fn cardinality(&self, k: usize) -> usize {
        self.levels[k].cells.len()
    }

    pub fn centers(&self, k: usize) -> Vec<Point> {
        self.levels[k].cells.iter().map(|c| c.center.clone()).collect()
    }

    /// Whether `N_n(k) ≤ m_Z^k` holds at every level.
    pub fn cardinality_law_holds(&self) -> bool {
        self.levels
            .iter()
            .all(|l| (l.cells.len() as f64) <= (self.m_z as f64).powi(l.k as i32))
    }

    /// Whether every cell's sampled diameter respects its level bound.
    pub fn diameters_hold(&self) -> bool {
        self.levels
            .iter()
            .all(|l| l.cells.iter().all(|c| c.diameter <= l.radius * (1.0 + 1e-12)))
    }

    /// Largest ratio of (distance to the nearest level-`k` center) to the level radius.
    pub fn coverage_ratio(&self, k: usize, points: &[Point]) -> f64 {
        let level = &self.levels[k];
        points
            .par_iter()
            .map(|p| {
                level
                    .cells
                    .iter()
                    .map(|c| dist(&c.center, p))
                    .fold(f64::INFINITY, f64::min)
                    / level.radius
            })
            .reduce(|| 0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let dim = self.levels[0].cells.first().map_or(0, |c| c.center.len());
        let mut header = vec!["level".to_string(), "cell_id".to_string()];
        header.extend((0..dim).map(|i| format!("x{i}")));
        header.extend(["radius".to_string(), "parent_id".to_string()]);
        out.write_record(&header)?;
        for l in &self.levels {
            for c in &l.cells {
                let mut rec = vec![l.k.to_string(), c.id.to_string()];
                rec.extend(c.center.iter().map(|v| format!("{v:e}")));
                rec.push(format!("{:e}", l.radius));
                rec.push(c.parent.map_or(String::new(), |p| p.to_string()));
                out.write_record(&rec)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn diameter(points: &[Point]) -> f64 {
    let mut d: f64 = 0.0;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            d = d.max(dist(&points[i], &points[j]));
        }
    }
    d
}

/// `m_Z(2L/η₀)` for the process.
pub fn process_packing(process: &ToyProcess) -> Result<usize, CoveringError> {
    if process.lipschitz == 0.0 {
        return Ok(1);
    }
    let r = 2.0 * process.lipschitz / process.eta0;
    if process.dim <= 2 {
        packing_oracle(process.dim, r)
    } else {
        packing_number(process.dim, r)
    }
}

/// Covering induction for `U(n, n−k)B(n−k)` on the sample cloud `cloud ⊂ B(n−k)`.
///
/// At level `j` each cell of diameter `d ≤ 2(2η₀)^{j−1}R₀` is split by a greedy
/// packing of its `K`-images at scale `η₀(2η₀)^{j−1}R₀`, every point joining its
/// nearest packed center, and the pieces are pushed through `U`.
pub fn build_covering(
    process: &ToyProcess,
    n: i64,
    k: usize,
    cloud: Vec<Point>,
) -> Result<CoveringTree, CoveringError> {
    if k == 0 {
        return Err(CoveringError::Domain("covering depth must be at least 1".into()));
    }
    let eta = process.eta0;
    let r0 = process.radius;
    let start = n - k as i64;
    let root_center = cloud
        .first()
        .cloned()
        .ok_or_else(|| CoveringError::Domain("empty sample cloud".into()))?;
    let mut levels = vec![CoveringLevel {
        k: 0,
        n: start,
        radius: 2.0 * r0,
        cells: vec![Cell {
            id: 0,
            parent: None,
            center: root_center,
            diameter: diameter(&cloud),
            points: cloud,
        }],
    }];
    for j in 1..=k {
        let time = start + j as i64;
        let prev = levels.last().expect("root level");
        let scale = eta * (2.0 * eta).powi(j as i32 - 1) * r0;
        let mut cells = Vec::new();
        for parent in &prev.cells {
            let images: Vec<Point> = parent
                .points
                .par_iter()
                .map(|x| process.smoothing(time, x))
                .collect();
            let centers = greedy_centers(&images, scale);
            let mut groups: Vec<Vec<Point>> = vec![Vec::new(); centers.len()];
            let mut firsts: Vec<Option<usize>> = vec![None; centers.len()];
            let owner: Vec<usize> = images
                .par_iter()
                .map(|y| {
                    let mut best = (0, f64::INFINITY);
                    for (ci, &c) in centers.iter().enumerate() {
                        let d = dist(&images[c], y);
                        if d < best.1 {
                            best = (ci, d);
                        }
                    }
                    best.0
                })
                .collect();
            for (i, &o) in owner.iter().enumerate() {
                firsts[o].get_or_insert(i);
                groups[o].push(parent.points[i].clone());
            }
            let mut step_check = groups.iter().flat_map(|g| g.iter()).take(64);
            if let (Some(x), Some(y)) = (step_check.next(), step_check.last()) {
                let lhs = dist(&process.step(time, x), &process.step(time, y));
                let rhs = eta * dist(x, y) + dist(&process.smoothing(time, x), &process.smoothing(time, y));
                if lhs > rhs + 1e-12 {
                    return Err(CoveringError::ProcessInvalid { n: time, lhs, rhs });
                }
            }
            for (gi, g) in groups.into_iter().enumerate() {
                if g.is_empty() {
                    continue;
                }
                let pts: Vec<Point> = g.par_iter().map(|x| process.step(time, x)).collect();
                let first = firsts[gi].expect("nonempty group");
                let center = process.step(time, &parent.points[first]);
                cells.push(Cell {
                    id: cells.len(),
                    parent: Some(parent.id),
                    center,
                    diameter: diameter(&pts),
                    points: pts,
                });
            }
        }
        levels.push(CoveringLevel {
            k: j,
            n: time,
            radius: 2.0 * (2.0 * eta).powi(j as i32) * r0,
            cells,
        });
    }
    Ok(CoveringTree {
        n,
        levels,
        m_z: process_packing(process)?,
    })
}

/// The discrete family `E_k(n) = V_k(n) ∪ U(n, n−1)E_{k−1}(n−1)`, `E_1(n) = V_1(n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EAFamily {
    pub n: i64,
    /// `nets[k−1] = V_k(n − k_max + k)`.
    pub nets: Vec<Vec<Point>>,
    /// `sets[k−1] = E_k(n − k_max + k)`.
    pub sets: Vec<Vec<Point>>,
    pub m_z: usize,
}

impl EAFamily {
    pub fn k_max(&self) -> usize {
        self.sets.len()
    }

    /// `E(n) = E_{k_max}(n)`.
    pub fn accumulated(&self) -> &[Point] {
        self.sets.last().map_or(&[], |s| s.as_slice())
    }

    /// `Card E_k ≤ m_Z^{k+1}` for every k.
    pub fn cardinality_bound_holds(&self) -> bool {
        self.sets
            .iter()
            .enumerate()
            .all(|(i, s)| (s.len() as f64) <= (self.m_z as f64).powi(i as i32 + 2))
    }

    /// Largest distance from a point of `U E_k(m)` to `E_{k+1}(m+1)`, over k.
    pub fn semi_invariance_defect(&self, process: &ToyProcess) -> f64 {
        let base = self.n - self.k_max() as i64;
        let mut worst: f64 = 0.0;
        for k in 1..self.k_max() {
            let m = base + k as i64;
            for x in &self.sets[k - 1] {
                let ux = process.step(m + 1, x);
                let d = self.sets[k]
                    .iter()
                    .map(|y| dist(&ux, y))
                    .fold(f64::INFINITY, f64::min);
                worst = worst.max(d);
            }
        }
        worst
    }

    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let dim = self.accumulated().first().map_or(0, |p| p.len());
        let mut header = vec!["k".to_string(), "point_id".to_string()];
        header.extend((0..dim).map(|i| format!("x{i}")));
        out.write_record(&header)?;
        for (i, s) in self.sets.iter().enumerate() {
            for (j, p) in s.iter().enumerate() {
                let mut rec = vec![(i + 1).to_string(), j.to_string()];
                rec.extend(p.iter().map(|v| format!("{v:e}")));
                out.write_record(&rec)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn dedup(points: &mut Vec<Point>) {
    let mut out: Vec<Point> = Vec::with_capacity(points.len());
    for p in points.drain(..) {
        if out.iter().all(|q| dist(q, &p) > 1e-12) {
            out.push(p);
        }
    }
    *points = out;
}

/// Builds `E_k` for `k = 1..=k_max` ending at time `n`. `V_k(m)` are the level-`k`
/// centers of a covering of `U(m, m−k)B(m−k)` built from a fresh cloud supplied by `cloud`.
pub fn build_e(
    process: &ToyProcess,
    n: i64,
    k_max: usize,
    mut cloud: impl FnMut() -> Vec<Point>,
) -> Result<EAFamily, CoveringError> {
    if k_max == 0 {
        return Err(CoveringError::Domain("k_max must be at least 1".into()));
    }
    let base = n - k_max as i64;
    let mut nets = Vec::with_capacity(k_max);
    let mut sets: Vec<Vec<Point>> = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let m = base + k as i64;
        let tree = build_covering(process, m, k, cloud())?;
        let v = tree.centers(k);
        let mut e = v.clone();
        if let Some(prev) = sets.last() {
            e.extend(prev.iter().map(|x| process.step(m, x)));
        }
        dedup(&mut e);
        nets.push(v);
        sets.push(e);
    }
    Ok(EAFamily {
        n,
        nets,
        sets,
        m_z: process_packing(process)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxDimension {
    pub value: f64,
    pub counts: Vec<usize>,
    /// Fewer than two distinct box counts; `value` is then 0.
    pub degenerate: bool,
}

/// Least-squares slope of `ln N(ε)` against `ln(1/ε)`, boxes anchored at the origin.
pub fn box_dimension(points: &[Point], scales: &[f64]) -> Result<BoxDimension, CoveringError> {
    if scales.len() < 2 {
        return Err(CoveringError::Domain("need at least two scales".into()));
    }
    for w in scales.windows(2) {
        if ((w[1] / w[0]) - 0.5).abs() > 1e-9 {
            return Err(CoveringError::Domain("each scale must halve the previous".into()));
        }
    }
    let counts: Vec<usize> = scales
        .iter()
        .map(|&e| {
            let mut boxes: Vec<Vec<i64>> = points
                .iter()
                .map(|p| p.iter().map(|v| (v / e).floor() as i64).collect())
                .collect();
            boxes.sort();
            boxes.dedup();
            boxes.len()
        })
        .collect();
    let mut distinct = counts.clone();
    distinct.sort();
    distinct.dedup();
    if distinct.len() < 2 {
        return Ok(BoxDimension {
            value: 0.0,
            counts,
            degenerate: true,
        });
    }
    let x: Vec<f64> = scales.iter().map(|e| (1.0 / e).ln()).collect();
    let y: Vec<f64> = counts.iter().map(|&c| (c as f64).ln()).collect();
    let fit = fit_line(&x, &y).ok_or_else(|| CoveringError::Domain("degenerate scales".into()))?;
    Ok(BoxDimension {
        value: fit.slope,
        counts,
        degenerate: false,
    })
}

/// Dyadic scales `diam/2, diam/4, …` for a point set.
pub fn dyadic_scales(points: &[Point], count: usize) -> Vec<f64> {
    let mut d: f64 = 0.0;
    if let Some(p0) = points.first() {
        for p in points {
            d = d.max(dist(p0, p));
        }
    }
    let d = if d > 0.0 { d } else { 1.0 };
    (1..=count).map(|i| d / 2f64.powi(i as i32)).collect()
}

/// Outcome of the full covering demonstration.
#[derive(Debug, Clone, PartialEq)]
pub struct CoveringDemo {
    pub cardinalities: Vec<usize>,
    pub m_z: usize,
    pub cardinality_law: bool,
    pub diameters: bool,
    pub coverage_ratio: f64,
    pub card_e: Vec<usize>,
    pub card_e_bound: bool,
    pub semi_invariance_defect: f64,
    pub box_dimension: BoxDimension,
    pub dimension_bound: f64,
}

impl CoveringDemo {
    pub const DIMENSION_SLACK: f64 = 0.25;

    pub fn passed(&self) -> bool {
        self.cardinality_law
            && self.diameters
            && self.coverage_ratio <= 1.0 + SAMPLING_SLACK
            && self.card_e_bound
            && self.semi_invariance_defect <= 1e-12
            && self.box_dimension.value <= self.dimension_bound + Self::DIMENSION_SLACK
    }
}

/// Covering tree up to depth `k_max` at time `n`, fresh-sample coverage, the
/// `E_k` family and box dimension of `E(n)` over four dyadic scales.
pub fn covering_demo<R: Rng>(
    process: &ToyProcess,
    n: i64,
    k_max: usize,
    cloud_size: usize,
    rng: &mut R,
) -> Result<CoveringDemo, CoveringError> {
    process.verify(n, 2000, rng)?;
    let cloud = process.sample_ball(cloud_size, rng);
    let tree = build_covering(process, n, k_max, cloud)?;
    let fresh: Vec<Point> = process
        .sample_ball(cloud_size, rng)
        .into_iter()
        .map(|x| process.evolve(n - k_max as i64, n, &x))
        .collect();
    let coverage_ratio = tree.coverage_ratio(k_max, &fresh);
    let family = build_e(process, n, k_max, || process.sample_ball(cloud_size, rng))?;
    let e = family.accumulated();
    let box_dim = box_dimension(e, &dyadic_scales(e, 4))?;
    Ok(CoveringDemo {
        cardinalities: (0..=k_max).map(|k| tree.cardinality(k)).collect(),
        m_z: tree.m_z,
        cardinality_law: tree.cardinality_law_holds(),
        diameters: tree.diameters_hold(),
        coverage_ratio,
        card_e: family.sets.iter().map(Vec::len).collect(),
        card_e_bound: family.cardinality_bound_holds(),
        semi_invariance_defect: family.semi_invariance_defect(process),
        box_dimension: box_dim,
        dimension_bound: dimension_bound(process.eta0, tree.m_z as f64)
            .map_err(|e| CoveringError::Domain(e.to_string()))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_dimensional_packing() {
        assert_eq!(packing_oracle(1, 0.4).unwrap(), 1);
        assert_eq!(packing_oracle(1, 1.4).unwrap(), 3);
        assert_eq!(packing_number(1, 0.4).unwrap(), 1);
        assert_eq!(packing_number(1, 1.4).unwrap(), 3);
    }

    #[test]
    fn two_dimensional_packing_against_oracle() {
        let g = packing_number(2, 1.4).unwrap();
        let o = packing_oracle(2, 1.4).unwrap();
        assert!(o >= 9, "ring of eight plus center fits: {o}");
        assert!(g <= o && 2 * g >= o, "greedy {g}, oracle {o}");
        assert!((o as f64) <= packing_volume_bound(2, 1.4));
    }

    #[test]
    fn constant_map_has_single_cells() {
        let p = ToyProcess::new(2, 0.25, 1.0, ToyMap::Constant(vec![0.3, -0.1])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tree = build_covering(&p, 0, 4, p.sample_ball(500, &mut rng)).unwrap();
        assert!((1..=4).all(|k| tree.cardinality(k) == 1));
        let fam = build_e(&p, 0, 3, || p.sample_ball(200, &mut rng)).unwrap();
        assert_eq!(fam.accumulated().len(), 1);
        let bd = box_dimension(fam.accumulated(), &[0.5, 0.25]).unwrap();
        assert!(bd.degenerate && bd.value == 0.0);
    }

    #[test]
    fn linear_contraction_has_single_cells() {
        let p = ToyProcess::new(2, 0.3, 1.0, ToyMap::Linear).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tree = build_covering(&p, 0, 5, p.sample_ball(500, &mut rng)).unwrap();
        assert!((1..=5).all(|k| tree.cardinality(k) == 1));
        assert!(tree.diameters_hold());
    }

    #[test]
    fn tanh_process_covering() {
        let p = ToyProcess::tanh_2d();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = covering_demo(&p, 0, 4, 2000, &mut rng).unwrap();
        assert!(d.passed(), "{d:?}");
        assert!(d.cardinalities.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn drifting_process_is_valid() {
        let p = ToyProcess::new(
            2,
            0.25,
            1.2,
            ToyMap::Drifting {
                scale: 0.5,
                amplitude: 0.2,
                period: 5.0,
            },
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in 0..5 {
            p.verify(n, 500, &mut rng).unwrap();
        }
        let d = covering_demo(&p, 3, 3, 1000, &mut rng).unwrap();
        assert!(d.passed(), "{d:?}");
    }

    #[test]
    fn e_family_base_case() {
        let p = ToyProcess::tanh_2d();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let fam = build_e(&p, 0, 1, || p.sample_ball(500, &mut rng)).unwrap();
        assert_eq!(fam.sets[0], fam.nets[0]);
    }

    #[test]
    fn box_dimension_of_synthetic_clouds() {
        let seg: Vec<Point> = (0..1024).map(|i| vec![i as f64 / 1024.0, 0.0]).collect();
        let scales = [0.5, 0.25, 0.125, 0.0625, 0.03125];
        let d = box_dimension(&seg, &scales).unwrap();
        assert!((d.value - 1.0).abs() < 0.15, "{d:?}");
        let sq: Vec<Point> = (0..64)
            .flat_map(|i| (0..64).map(move |j| vec![i as f64 / 64.0, j as f64 / 64.0]))
            .collect();
        let d = box_dimension(&sq, &scales).unwrap();
        assert!((d.value - 2.0).abs() < 0.2, "{d:?}");
        assert!(box_dimension(&sq, &[0.5]).is_err());
        assert!(box_dimension(&sq, &[0.5, 0.3]).is_err());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(ToyProcess::new(2, 0.5, 1.0, ToyMap::Linear).is_err());
        assert!(ToyProcess::new(2, 0.25, 0.5, ToyMap::Constant(vec![1.0, 0.0]))
            .unwrap()
            .verify(0, 200, &mut ChaCha8Rng::seed_from_u64(6))
            .is_err());
    }
}
