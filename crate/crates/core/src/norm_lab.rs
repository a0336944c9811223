//! Matrix-free operator norms and the envelope and square-function estimates built on them.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{Grid, SampledFunction};
use crate::kernels::{Kernel, Modulus, RadialMask};
use crate::operators::{
    a_operator, b_operator, build_lp_family, build_mollifier_family, compose, dyadic_piece_operator, kernel_operator,
    LinearOperator, LpFamily, MiddleHalf, MollifierFamily,
};
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSettings {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for PowerSettings {
    fn default() -> Self {
        Self { max_iters: 200, tol: 1e-4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormEstimate {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn random_start(grid: &Grid, seed: u64) -> SampledFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values =
        (0..grid.len()).map(|_| C64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))).collect();
    SampledFunction::new(*grid, values).expect("finite normal samples")
}

fn finite_or_fail(value: f64, iterations: usize, what: &str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NumericFailure { iterations, detail: format!("non-finite {what}") })
    }
}

/// `‖A‖_{L²→L²}` by power iteration on `A*A` from a seeded complex Gaussian start.
pub fn operator_norm(op: &dyn LinearOperator, seed: u64, settings: PowerSettings) -> Result<NormEstimate> {
    if settings.max_iters == 0 || !(settings.tol > 0.0) {
        return Err(invalid("power iteration needs max_iters > 0 and tol > 0"));
    }
    let mut v = random_start(op.grid(), seed);
    let n0 = v.l2_norm();
    v = v.scaled(C64::new(1.0 / n0, 0.0));
    let mut prev = f64::NAN;
    for it in 1..=settings.max_iters {
        let w = op.apply(&v)?;
        let est = w.l2_norm();
        finite_or_fail(est, it, "image norm")?;
        if est == 0.0 {
            return Ok(NormEstimate { value: 0.0, iterations: it, converged: true });
        }
        let u = op.apply_adjoint(&w)?;
        let un = u.l2_norm();
        finite_or_fail(un, it, "adjoint image norm")?;
        if un == 0.0 {
            return Ok(NormEstimate { value: est, iterations: it, converged: true });
        }
        if (est - prev).abs() <= settings.tol * est {
            return Ok(NormEstimate { value: est, iterations: it, converged: true });
        }
        prev = est;
        v = u.scaled(C64::new(1.0 / un, 0.0));
    }
    Ok(NormEstimate { value: prev, iterations: settings.max_iters, converged: false })
}

/// Which composition a surface measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurfaceFamily {
    /// `σ_j Q_s`.
    SigmaQ,
    /// `Q_s σ_j`.
    QSigma,
    /// `A_j Q_s`.
    AQ,
    /// `B_j Q_s`.
    BQ,
}

impl SurfaceFamily {
    pub fn label(&self) -> &'static str {
        match self {
            SurfaceFamily::SigmaQ => "sigma-q",
            SurfaceFamily::QSigma => "q-sigma",
            SurfaceFamily::AQ => "a-q",
            SurfaceFamily::BQ => "b-q",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceCell {
    pub j: i32,
    pub s: f64,
    pub estimate: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormSurface {
    pub family: SurfaceFamily,
    pub kernel: String,
    pub settings: PowerSettings,
    pub seed: u64,
    pub js: Vec<i32>,
    pub ss: Vec<f64>,
    /// Row-major over `(j, s)`.
    pub cells: Vec<SurfaceCell>,
}

impl NormSurface {
    pub fn cell(&self, row: usize, col: usize) -> &SurfaceCell {
        &self.cells[row * self.ss.len() + col]
    }

    pub fn unconverged(&self) -> usize {
        self.cells.iter().filter(|c| !c.converged).count()
    }

    /// One row per cell: `j,s,estimate,iterations,converged`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for c in &self.cells {
            out.serialize(c).map_err(|e| invalid(e.to_string()))?;
        }
        out.flush().map_err(|e| invalid(e.to_string()))
    }
}

/// SplitMix64 finaliser.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the cell `(j, s_index)`, independent of evaluation order.
pub fn cell_seed(seed: u64, j: i32, s_index: usize) -> u64 {
    splitmix64(splitmix64(seed ^ (j as i64 as u64).rotate_left(32)) ^ s_index as u64)
}

fn cell_operator(
    k: &Kernel,
    family: SurfaceFamily,
    lp: &LpFamily,
    mf: &MollifierFamily,
    j: i32,
    s: f64,
) -> Result<Box<dyn LinearOperator>> {
    let grid = lp.grid();
    let q = Box::new(lp.operator(s)?);
    match family {
        SurfaceFamily::SigmaQ => compose(dyadic_piece_operator(k, grid, j)?, q),
        SurfaceFamily::QSigma => compose(q, dyadic_piece_operator(k, grid, j)?),
        SurfaceFamily::AQ => compose(a_operator(k, mf, j)?, q),
        SurfaceFamily::BQ => compose(b_operator(k, mf, j)?, q),
    }
}

/// One [`operator_norm`] of `P F_{j,s} P` per cell, `P` the middle-half restriction.
///
/// Cells run in parallel with order-independent seeds.
pub fn norm_surface(
    k: &Kernel,
    family: SurfaceFamily,
    grid: &Grid,
    js: &[i32],
    ss: &[f64],
    settings: PowerSettings,
    seed: u64,
) -> Result<NormSurface> {
    let lp = build_lp_family(grid);
    let mf = build_mollifier_family(grid);
    let tasks: Vec<(i32, usize)> = js.iter().flat_map(|&j| (0..ss.len()).map(move |c| (j, c))).collect();
    let cells = tasks
        .par_iter()
        .map(|&(j, c)| {
            let op = MiddleHalf::new(cell_operator(k, family, &lp, &mf, j, ss[c])?);
            let est = operator_norm(&op, cell_seed(seed, j, c), settings)?;
            Ok(SurfaceCell { j, s: ss[c], estimate: est.value, iterations: est.iterations, converged: est.converged })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NormSurface { family, kernel: k.id().to_string(), settings, seed, js: js.to_vec(), ss: ss.to_vec(), cells })
}

/// `min{ω₁(2^j/s), ω₁(s/2^j)}` with `ω₁ = ω + t^θ`.
pub fn envelope(m: &Modulus, theta: f64, j: i32, s: f64) -> f64 {
    let r = 2f64.powi(j) / s;
    let w1 = |t: f64| m.eval(t) + t.powf(theta);
    w1(r).min(w1(1.0 / r))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeFit {
    /// `max entry / E(j, s)`; infinite when some cell has `E = 0` and a nonzero entry.
    pub constant: f64,
    pub infinite: bool,
    pub argmax: (i32, f64),
    /// `entry / E` per cell, row-major.
    pub ratios: Vec<f64>,
    /// Per row, `(log₂(s/2^j), entry)` sorted by the first coordinate.
    pub profiles: Vec<(i32, Vec<(f64, f64)>)>,
}

pub fn envelope_fit(surface: &NormSurface, m: &Modulus, theta: f64) -> Result<EnvelopeFit> {
    if surface.cells.iter().any(|c| !c.estimate.is_finite() || c.estimate < 0.0) {
        return Err(invalid("surface entries must be finite and nonnegative"));
    }
    let mut constant: f64 = 0.0;
    let mut infinite = false;
    let mut argmax = (surface.js.first().copied().unwrap_or(0), surface.ss.first().copied().unwrap_or(0.0));
    let mut ratios = Vec::with_capacity(surface.cells.len());
    for c in &surface.cells {
        let e = envelope(m, theta, c.j, c.s);
        let ratio = if e > 0.0 {
            c.estimate / e
        } else if c.estimate > 0.0 {
            infinite = true;
            f64::INFINITY
        } else {
            0.0
        };
        if ratio > constant {
            constant = ratio;
            argmax = (c.j, c.s);
        }
        ratios.push(ratio);
    }
    let profiles = surface
        .js
        .iter()
        .enumerate()
        .map(|(r, &j)| {
            let mut row: Vec<(f64, f64)> = (0..surface.ss.len())
                .map(|c| {
                    let cell = surface.cell(r, c);
                    ((cell.s / 2f64.powi(j)).log2(), cell.estimate)
                })
                .collect();
            row.sort_by(|a, b| a.0.total_cmp(&b.0));
            (j, row)
        })
        .collect();
    Ok(EnvelopeFit { constant, infinite, argmax, ratios, profiles })
}

impl EnvelopeFit {
    /// Cells with `|log₂(s/2^j)| ≥ min_offset` that exceed their inward neighbour by more than `noise`.
    ///
    /// Each row is walked outward from the scale match on both sides.
    pub fn decay_violations(&self, min_offset: f64, noise: f64) -> usize {
        let mut count = 0;
        for (_, row) in &self.profiles {
            let right: Vec<f64> = row.iter().filter(|p| p.0 >= min_offset).map(|p| p.1).collect();
            let left: Vec<f64> = row.iter().rev().filter(|p| p.0 <= -min_offset).map(|p| p.1).collect();
            for side in [right, left] {
                count += side.windows(2).filter(|w| w[1] > w[0] * (1.0 + noise)).count();
            }
        }
        count
    }
}

/// Which square function to measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SquareFamily {
    A,
    B,
}

/// `‖(Σ_j |F_j f|²)^{1/2}‖₂` with `F_j = A_j` or `B_j`, over `j ∈ [j_lo, j_hi]`.
pub fn square_function_norm(
    k: &Kernel,
    family: SquareFamily,
    f: &SampledFunction,
    j_lo: i32,
    j_hi: i32,
) -> Result<f64> {
    let grid = *f.grid();
    let mf = build_mollifier_family(&grid);
    let mut acc = vec![0.0f64; grid.len()];
    for j in j_lo..=j_hi {
        let op = match family {
            SquareFamily::A => a_operator(k, &mf, j)?,
            SquareFamily::B => b_operator(k, &mf, j)?,
        };
        for (a, v) in acc.iter_mut().zip(op.apply(f)?.values()) {
            *a += v.norm_sqr();
        }
    }
    Ok((grid.cell_volume() * acc.iter().sum::<f64>()).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialSum {
    pub j_lo: i32,
    pub j_hi: i32,
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct T1Report {
    /// Nested ranges `[j_lo, j_hi]`, growing toward finer scales.
    pub partial: Vec<PartialSum>,
    /// `‖S_{k+1} - S_k‖₂ / ‖f‖₂` between consecutive ranges.
    pub cauchy: Vec<f64>,
    /// `‖T_{2^{j_lo}} f - T_{2^{j_hi+1}} f‖₂` for the full range, cell-centre masks closed below.
    pub telescoped: f64,
}

/// Partial sums `Σ_{j=lo}^{j_hi} σ_j f` for `lo = j_hi, j_hi - 1, …, j_lo`.
pub fn t1_sum_check(k: &Kernel, f: &SampledFunction, j_lo: i32, j_hi: i32) -> Result<T1Report> {
    let grid = *f.grid();
    if j_lo > j_hi {
        return Ok(T1Report { partial: Vec::new(), cauchy: Vec::new(), telescoped: 0.0 });
    }
    let fnorm = f.l2_norm();
    let mut sum = SampledFunction::zeros(grid);
    let mut partial = Vec::new();
    let mut cauchy = Vec::new();
    for j in (j_lo..=j_hi).rev() {
        let piece = dyadic_piece_operator(k, &grid, j)?.apply(f)?;
        if !partial.is_empty() {
            cauchy.push(if fnorm > 0.0 { piece.l2_norm() / fnorm } else { 0.0 });
        }
        sum = sum.add(&piece);
        partial.push(PartialSum { j_lo: j, j_hi, norm: sum.l2_norm() });
    }
    let lower = kernel_operator(k, &grid, RadialMask::resolved(2f64.powi(j_lo)), "lower")?;
    let upper = kernel_operator(k, &grid, RadialMask::resolved(2f64.powi(j_hi + 1)), "upper")?;
    let telescoped = lower.apply(f)?.sub(&upper.apply(f)?).l2_norm();
    Ok(T1Report { partial, cauchy, telescoped })
}
