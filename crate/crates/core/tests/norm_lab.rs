use czvar_core::grid::{make_test_function, Grid, SampledFunction, TestFamily};
use czvar_core::kernels::{Kernel, Modulus};
use czvar_core::norm_lab::*;
use czvar_core::operators::{a_operator, build_mollifier_family, scaled, LinearOperator};
use czvar_core::{Result, C64};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense matrix acting on the first `n` samples of a 1-d grid.
struct DenseProbe {
    grid: Grid,
    m: DMatrix<C64>,
}

impl DenseProbe {
    fn mul(&self, m: &DMatrix<C64>, f: &SampledFunction) -> Result<SampledFunction> {
        let n = m.nrows();
        let mut out = vec![C64::default(); self.grid.len()];
        for (r, o) in out.iter_mut().enumerate().take(n) {
            *o = (0..n).map(|c| m[(r, c)] * f.values()[c]).sum();
        }
        SampledFunction::new(self.grid, out)
    }
}

impl LinearOperator for DenseProbe {
    fn grid(&self) -> &Grid {
        &self.grid
    }
    fn label(&self) -> String {
        "dense".into()
    }
    fn apply(&self, f: &SampledFunction) -> Result<SampledFunction> {
        self.mul(&self.m, f)
    }
    fn apply_adjoint(&self, g: &SampledFunction) -> Result<SampledFunction> {
        self.mul(&self.m.adjoint(), g)
    }
}

#[test]
fn power_iteration_matches_dense_svd() {
    let grid = Grid::new(1, 1.0, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for trial in 0..5 {
        let m = DMatrix::from_fn(5, 5, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        let sigma = m.clone().svd(false, false).singular_values.max();
        let probe = DenseProbe { grid, m };
        let est = operator_norm(&probe, trial, PowerSettings { max_iters: 5000, tol: 1e-15 }).unwrap();
        assert!((est.value - sigma).abs() <= 1e-8 * sigma, "{} vs {sigma}", est.value);
        let tripled = scaled(Box::new(probe), C64::new(0.0, -3.0));
        let est3 = operator_norm(tripled.as_ref(), trial, PowerSettings { max_iters: 5000, tol: 1e-15 }).unwrap();
        assert!((est3.value - 3.0 * est.value).abs() <= 1e-8 * est3.value);
    }
}

#[test]
fn power_iteration_settings_are_validated() {
    let grid = Grid::new(1, 1.0, 8).unwrap();
    let probe = DenseProbe { grid, m: DMatrix::identity(5, 5) };
    assert!(operator_norm(&probe, 0, PowerSettings { max_iters: 0, tol: 1e-4 }).is_err());
    assert!(operator_norm(&probe, 0, PowerSettings { max_iters: 10, tol: 0.0 }).is_err());
}

#[test]
fn unconverged_runs_are_flagged() {
    let grid = Grid::new(1, 1.0, 8).unwrap();
    let mut m = DMatrix::<C64>::zeros(5, 5);
    m[(0, 0)] = C64::new(1.0, 0.0);
    m[(1, 1)] = C64::new(0.999, 0.0);
    let est = operator_norm(&DenseProbe { grid, m }, 3, PowerSettings { max_iters: 3, tol: 1e-12 }).unwrap();
    assert!(!est.converged);
}

fn s_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| lo * (hi / lo).powf(k as f64 / (count - 1) as f64)).collect()
}

#[test]
fn zero_kernel_surface_vanishes() {
    let g = Grid::new(1, 16.0, 256).unwrap();
    let z = Kernel::zero(1).unwrap();
    for fam in [SurfaceFamily::SigmaQ, SurfaceFamily::AQ, SurfaceFamily::BQ] {
        let surf = norm_surface(&z, fam, &g, &[-1, 0], &[0.5, 1.0], PowerSettings::default(), 1).unwrap();
        assert!(surf.cells.iter().all(|c| c.estimate == 0.0 && c.converged));
    }
}

#[test]
fn hilbert_surfaces_peak_near_scale_match_and_commute() {
    let g = Grid::new(1, 16.0, 1024).unwrap();
    let k = Kernel::hilbert();
    let js = [-2, -1, 0, 1];
    let ss: Vec<f64> = (-3..=3).map(|e| 2f64.powi(e)).collect();
    let settings = PowerSettings::default();
    let sq = norm_surface(&k, SurfaceFamily::SigmaQ, &g, &js, &ss, settings, 5).unwrap();
    let qs = norm_surface(&k, SurfaceFamily::QSigma, &g, &js, &ss, settings, 5).unwrap();
    for (a, b) in sq.cells.iter().zip(&qs.cells) {
        assert!((a.estimate - b.estimate).abs() <= 0.1 * a.estimate.max(b.estimate), "{a:?} {b:?}");
    }
    // the row maximum sits at one fixed ratio s/2^j for every j
    let peaks: Vec<f64> = js
        .iter()
        .enumerate()
        .map(|(r, &j)| {
            let row: Vec<f64> = (0..ss.len()).map(|c| sq.cell(r, c).estimate).collect();
            let c = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            ss[c] / 2f64.powi(j)
        })
        .collect();
    assert!(peaks.iter().all(|&p| p == peaks[0]), "{peaks:?}");
    let fit = envelope_fit(&sq, &Modulus::lipschitz(), 0.5).unwrap();
    assert!(fit.constant.is_finite() && !fit.infinite);
    assert_eq!(fit.decay_violations(2.0, 0.2), 0, "{:?}", fit.profiles);
}

#[test]
fn surfaces_are_reproducible_and_serialize() {
    let g = Grid::new(1, 16.0, 256).unwrap();
    let k = Kernel::hilbert();
    let ss = s_grid(0.5, 4.0, 3);
    let a = norm_surface(&k, SurfaceFamily::BQ, &g, &[-1, 0], &ss, PowerSettings::default(), 9).unwrap();
    let b = norm_surface(&k, SurfaceFamily::BQ, &g, &[-1, 0], &ss, PowerSettings::default(), 9).unwrap();
    assert_eq!(a, b);
    let mut buf = Vec::new();
    a.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("j,s,estimate,iterations,converged\n"));
    assert_eq!(text.lines().count(), 1 + a.cells.len());
}

#[test]
fn complex_power_envelope_fit_succeeds() {
    let g = Grid::new(1, 16.0, 512).unwrap();
    let k = Kernel::complex_power(2.0);
    let surf =
        norm_surface(&k, SurfaceFamily::SigmaQ, &g, &[-2, 0], &s_grid(0.25, 8.0, 6), PowerSettings::default(), 2)
            .unwrap();
    let fit = envelope_fit(&surf, &Modulus::lipschitz(), 0.5).unwrap();
    assert!(fit.constant.is_finite());
}

#[test]
fn b_surface_decays_both_ways() {
    let g = Grid::new(1, 16.0, 1024).unwrap();
    let k = Kernel::hilbert();
    let ss: Vec<f64> = (-3..=3).map(|e| 2f64.powi(e)).collect();
    let surf = norm_surface(&k, SurfaceFamily::BQ, &g, &[-1], &ss, PowerSettings::default(), 4).unwrap();
    let row: Vec<f64> = surf.cells.iter().map(|c| c.estimate).collect();
    let top = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
    assert!(top > 0 && top < row.len() - 1, "{row:?}");
    assert!(row[..=top].windows(2).all(|w| w[0] < w[1]), "{row:?}");
    assert!(row[top..].windows(2).all(|w| w[0] > w[1]), "{row:?}");
}

#[test]
fn a_surface_is_bounded_by_scale_ratio() {
    let g = Grid::new(1, 16.0, 1024).unwrap();
    let k = Kernel::hilbert();
    let js = [-3, -2, -1];
    let ss: Vec<f64> = (-1..=3).map(|e| 2f64.powi(e)).collect();
    let surf = norm_surface(&k, SurfaceFamily::AQ, &g, &js, &ss, PowerSettings::default(), 6).unwrap();
    let ratios: Vec<f64> =
        surf.cells.iter().filter(|c| c.s >= 2f64.powi(c.j)).map(|c| c.estimate / (2f64.powi(c.j) / c.s)).collect();
    let c = ratios.iter().cloned().fold(0.0, f64::max);
    assert!(c.is_finite() && c > 0.0);
}

fn gaussian(g: Grid, width: f64) -> SampledFunction {
    make_test_function(&TestFamily::gaussian(0.0, width, 1), &g, 0).unwrap()
}

#[test]
fn square_function_examples() {
    let g = Grid::new(1, 16.0, 1024).unwrap();
    let k = Kernel::hilbert();
    let zero = SampledFunction::zeros(g);
    assert_eq!(square_function_norm(&k, SquareFamily::A, &zero, -2, 1).unwrap(), 0.0);
    let f = gaussian(g, 1.0);
    let mf = build_mollifier_family(&g);
    let single = square_function_norm(&k, SquareFamily::A, &f, 0, 0).unwrap();
    let direct = a_operator(&k, &mf, 0).unwrap().apply(&f).unwrap().l2_norm();
    assert!((single - direct).abs() <= 1e-12 * direct);
}

#[test]
fn square_function_ratio_is_refinement_stable() {
    let k = Kernel::hilbert();
    for fam in [SquareFamily::A, SquareFamily::B] {
        let ratios: Vec<f64> = [512, 1024, 2048]
            .iter()
            .map(|&n| {
                let g = Grid::new(1, 16.0, n).unwrap();
                let f = gaussian(g, 1.0);
                square_function_norm(&k, fam, &f, -2, 2).unwrap() / f.l2_norm()
            })
            .collect();
        let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().cloned().fold(0.0, f64::max);
        assert!(hi <= 1.15 * lo, "{fam:?} {ratios:?}");
    }
}

#[test]
fn t1_partial_sums() {
    let k = Kernel::hilbert();
    let g = Grid::new(1, 16.0, 1024).unwrap();
    let f = gaussian(g, 1.0);
    let empty = t1_sum_check(&k, &f, 1, 0).unwrap();
    assert!(empty.partial.is_empty() && empty.telescoped == 0.0);
    let (lo, hi) = g.resolved_dyadic_range();
    let rep = t1_sum_check(&k, &f, lo, hi).unwrap();
    let full = rep.partial.last().unwrap().norm;
    assert!((full - rep.telescoped).abs() <= 1e-12 * full);
}

#[test]
fn t1_partial_sums_stabilize_on_fine_grid() {
    let k = Kernel::hilbert();
    let g = Grid::new(1, 16.0, 1 << 15).unwrap();
    let f = gaussian(g, 1.0);
    let (lo, hi) = g.resolved_dyadic_range();
    let rep = t1_sum_check(&k, &f, lo, hi).unwrap();
    let last = *rep.cauchy.last().unwrap();
    assert!(last <= 0.01, "{:?}", rep.cauchy);
    assert!(rep.cauchy.windows(2).skip(2).all(|w| w[1] < w[0]), "{:?}", rep.cauchy);
}
