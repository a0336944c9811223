//! Acceptance suite: one PASS/FAIL line per criterion.

use std::time::Instant;

use czvar_core::grid::{make_test_function, Grid, SampledFunction, TestFamily};
use czvar_core::kernels::Kernel;
use czvar_core::norm_lab::{square_function_norm, SquareFamily};
use czvar_core::operators::{build_lp_family, truncated_apply};
use czvar_core::sequence::{lambda_jump_count, q_variation, SampleSequence};
use czvar_core::C64;
use czvar_harness::config::{GridSpec, NegativeControlSpec, RefinementSpec};
use czvar_harness::report::report_json;
use czvar_harness::{run, run_with_threads, Experiment, ExperimentConfig, ExperimentReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[path = "../../core/tests/support/mod.rs"]
mod support;

type Verdict = (bool, String);

fn failed_criteria(r: &ExperimentReport) -> Vec<String> {
    r.criteria.iter().filter(|c| !c.passed).map(|c| format!("{}: {}", c.name, c.detail)).collect()
}

/// Every subsequence enumerated once: (smallest gap, jumps) per chain, and `V_q` for each of `QS`.
struct Brute {
    chains: Vec<(f64, usize)>,
    variation: [f64; 4],
}

impl Brute {
    fn new(v: &[C64]) -> Self {
        let n = v.len();
        let mut chains = Vec::with_capacity(1 << n);
        let mut variation = [0.0f64; 4];
        for mask in 1u32..(1 << n) {
            let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            let gaps: Vec<f64> = idx.windows(2).map(|w| (v[w[1]] - v[w[0]]).norm()).collect();
            chains.push((gaps.iter().cloned().fold(f64::INFINITY, f64::min), gaps.len()));
            for (slot, q) in variation.iter_mut().zip(QS) {
                let val = if q.is_infinite() {
                    gaps.iter().cloned().fold(0.0, f64::max)
                } else {
                    gaps.iter().map(|x| x.powf(q)).sum::<f64>().powf(1.0 / q)
                };
                *slot = slot.max(val);
            }
        }
        Self { chains, variation }
    }

    fn jumps(&self, lambda: f64) -> usize {
        self.chains.iter().filter(|c| c.0 > lambda).map(|c| c.1).max().unwrap_or(0)
    }
}

const QS: [f64; 4] = [2.0, 2.5, 3.0, f64::INFINITY];

fn random_sequences(seed: u64) -> Vec<Vec<C64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..1000)
        .map(|_| {
            let n = rng.random_range(1..=12);
            (0..n).map(|_| C64::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0))).collect()
        })
        .collect()
}

/// Random thresholds plus every pairwise distance of the sequence.
fn lambdas(v: &[C64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out: Vec<f64> = (0..4).map(|_| rng.random_range(0.01..5.0)).collect();
    for i in 0..v.len() {
        for j in i + 1..v.len() {
            let d = (v[i] - v[j]).norm();
            if d > 0.0 {
                out.push(d);
            }
        }
    }
    out
}

fn criterion_01_oracle_equivalence() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut jump_mismatch = 0;
    let mut worst = 0.0f64;
    let mut checks = 0;
    for v in random_sequences(1) {
        let s = SampleSequence::from_values(v.clone()).unwrap();
        let brute = Brute::new(&v);
        for lambda in lambdas(&v, &mut rng) {
            checks += 1;
            if lambda_jump_count(&s, lambda).unwrap().count != brute.jumps(lambda) {
                jump_mismatch += 1;
            }
        }
        for (&q, &want) in QS.iter().zip(&brute.variation) {
            let got = q_variation(&s, q).unwrap().value;
            if want > 0.0 {
                worst = worst.max((got - want).abs() / want);
            } else {
                worst = worst.max(got);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (
        jump_mismatch == 0 && worst <= 1e-12 && secs < 10.0,
        format!("{checks} jump counts, {jump_mismatch} mismatches; worst variation rel error {worst:e}; {secs:.2} s"),
    )
}

fn criterion_02_jump_variation_inequality() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut violations = 0;
    let mut checks = 0;
    for v in random_sequences(2) {
        let s = SampleSequence::from_values(v.clone()).unwrap();
        let vq: Vec<f64> = QS.iter().map(|&q| q_variation(&s, q).unwrap().value).collect();
        for lambda in lambdas(&v, &mut rng) {
            let n = lambda_jump_count(&s, lambda).unwrap().count as f64;
            for (&q, &var) in QS.iter().zip(&vq) {
                checks += 1;
                let lhs = if q.is_infinite() {
                    if n > 0.0 {
                        lambda
                    } else {
                        0.0
                    }
                } else {
                    lambda * n.powf(1.0 / q)
                };
                if lhs > var {
                    violations += 1;
                }
            }
        }
    }
    (violations == 0, format!("{checks} (sequence, lambda, q) triples, {violations} violations"))
}

fn windowed_sine(g: Grid) -> SampledFunction {
    let w = make_test_function(&TestFamily::smoothed_indicator(0.0, 3.0, 0.5, 1), &g, 0).unwrap();
    SampledFunction::from_fn(g, |p| C64::new(p[0].sin(), 0.0)).zip_with(&w, |a, b| a * b)
}

fn criterion_03_hilbert_multiplier() -> Verdict {
    let start = Instant::now();
    let errs: Vec<f64> = [4096, 8192]
        .iter()
        .map(|&n| {
            let g = Grid::new(1, 16.0, n).unwrap();
            let f = windowed_sine(g);
            let t = truncated_apply(&Kernel::hilbert(), &f, 8.0 * g.spacing()).unwrap();
            let want = support::truncated_hilbert_oracle(&f, 0.0, 16);
            support::restricted_rel(t.values(), &want, |p| g.in_middle_half(&g.point(p)[..1]))
        })
        .collect();
    let secs = start.elapsed().as_secs_f64();
    (
        errs[0] <= 0.02 && errs[1] < errs[0] && secs < 5.0,
        format!("relative L2 error at G=4096 {:.4} (target 0.02), at G=8192 {:.4}; {secs:.2} s", errs[0], errs[1]),
    )
}

fn criterion_04_calderon_identity() -> Verdict {
    let start = Instant::now();
    let g = Grid::new(1, 16.0, 1 << 21).unwrap();
    let lp = build_lp_family(&g);
    let f = make_test_function(&TestFamily::gaussian(0.0, 8.0 * g.spacing(), 1), &g, 0).unwrap();
    let rec = lp.calderon_reconstruct(&f, 64).unwrap();
    let err = rec.sub(&f).l2_norm() / f.l2_norm();
    let secs = start.elapsed().as_secs_f64();
    (err <= 0.01 && secs < 30.0, format!("relative error {err:.5} at G=2^21; {secs:.2} s"))
}

fn surface_config(points: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::hilbert_fixture();
    cfg.grid.points = points;
    cfg.refinement = RefinementSpec { grid_doublings: 1, partition_doublings: 0, tolerance: 0.1 };
    cfg
}

fn criterion_05_envelope_certificate() -> Verdict {
    let start = Instant::now();
    let mut details = Vec::new();
    let mut passed = true;
    for points in [512, 2048] {
        let cfg = surface_config(points);
        let out = run(Experiment::OpnormSurface, &cfg).unwrap();
        let r = &out.report;
        let rows: Vec<usize> = out
            .tables
            .iter()
            .filter(|t| t.name.starts_with("surface_sigma-q"))
            .map(|t| {
                let mut js: Vec<i64> = t.rows.iter().map(|row| row[0] as i64).collect();
                js.dedup();
                js.len()
            })
            .collect();
        let cols = cfg.surface.s_count;
        passed &= r.passed;
        details.push(format!(
            "G={points}->{}: rows {rows:?} x {cols} cols, {}",
            2 * points,
            r.criterion("grid-refinement").map(|c| c.detail.as_str()).unwrap_or("missing")
        ));
        if !r.passed {
            details.extend(failed_criteria(r));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (passed && secs < 600.0, format!("{}; {secs:.1} s", details.join("; ")))
}

fn criterion_06_square_functions() -> Verdict {
    let k = Kernel::hilbert();
    let family = TestFamily::gaussian(0.0, 1.0, 8);
    let (lo, hi) = Grid::new(1, 16.0, 512).unwrap().resolved_dyadic_range();
    let mut passed = true;
    let mut details = Vec::new();
    for fam in [SquareFamily::A, SquareFamily::B] {
        let ratios: Vec<f64> = [512, 1024, 2048]
            .iter()
            .map(|&n| {
                let g = Grid::new(1, 16.0, n).unwrap();
                (0..family.count)
                    .map(|i| {
                        let f = make_test_function(&family, &g, i).unwrap();
                        square_function_norm(&k, fam, &f, lo, hi).unwrap() / f.l2_norm()
                    })
                    .fold(0.0, f64::max)
            })
            .collect();
        let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = ratios.iter().cloned().fold(0.0, f64::max);
        passed &= ratios.iter().all(|r| r.is_finite()) && max <= 1.15 * min;
        details.push(format!("{fam:?} ratios {ratios:.4?} spread {:.4}", max / min - 1.0));
    }
    (passed, details.join("; "))
}

const FAMILY_EXPERIMENTS: [Experiment; 4] =
    [Experiment::JumpDyadic, Experiment::JumpFull, Experiment::Variation, Experiment::ShortVariation];

fn suite(cfg: &ExperimentConfig) -> (bool, Vec<String>) {
    let mut passed = true;
    let mut details = Vec::new();
    for exp in FAMILY_EXPERIMENTS {
        let r = run(exp, cfg).unwrap().report;
        passed &= r.passed;
        let change: Vec<String> = ["grid-refinement", "partition-refinement"]
            .iter()
            .filter_map(|n| r.criterion(n))
            .map(|c| format!("{}: {}", c.name, c.detail.split(';').next().unwrap_or_default()))
            .collect();
        details.push(format!("{} [{}]", exp.name(), change.join(", ")));
        details.extend(failed_criteria(&r));
    }
    (passed, details)
}

fn criterion_07_jump_and_variation_stability() -> Verdict {
    let mut hilbert = ExperimentConfig::hilbert_fixture();
    hilbert.refinement = RefinementSpec { grid_doublings: 1, partition_doublings: 1, tolerance: 0.1 };
    let mut perp = ExperimentConfig::perp_gradient_fixture();
    perp.refinement = RefinementSpec { grid_doublings: 1, partition_doublings: 1, tolerance: 0.2 };
    // symmetric decreasing inputs make T_ε f monotone in ε, so a random band-limited family is run as well
    let mut band = hilbert.clone();
    band.family = TestFamily::bandlimited(4.0, 7, 8);
    let (a, da) = suite(&hilbert);
    let (b, db) = suite(&perp);
    let (c, dc) = suite(&band);
    (
        a && b && c,
        format!(
            "hilbert: {}; perp-gradient: {}; hilbert band-limited: {}",
            da.join("; "),
            db.join("; "),
            dc.join("; ")
        ),
    )
}

fn criterion_08_negative_control() -> Verdict {
    let mut cfg = ExperimentConfig::hilbert_fixture();
    cfg.negative_control = Some(NegativeControlSpec::default());
    let r = run(Experiment::JumpDyadic, &cfg).unwrap().report;
    let lines: Vec<&czvar_harness::report::Criterion> =
        r.criteria.iter().filter(|c| c.name.starts_with("negative-control-")).collect();
    let passed = lines.len() == 2 && lines.iter().all(|c| c.passed);
    let detail: Vec<String> = lines.iter().map(|c| format!("{}: {}", c.name, c.detail)).collect();
    (passed, detail.join("; "))
}

fn criterion_09_cancellation_certificates() -> Verdict {
    let mut perp = ExperimentConfig::perp_gradient_fixture();
    perp.refinement.grid_doublings = 3;
    let rp = run(Experiment::VerifyKernel, &perp).unwrap().report;
    let mut cpow = ExperimentConfig::hilbert_fixture();
    cpow.kernel = czvar_core::kernels::KernelFamily::ComplexPower { gamma: 2.0 };
    let rc = run(Experiment::VerifyKernel, &cpow).unwrap().report;
    let pick = |r: &ExperimentReport, names: &[&str]| -> Vec<String> {
        r.criteria
            .iter()
            .filter(|c| names.iter().any(|n| c.name.starts_with(n)))
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect()
    };
    let perp_ok = ["cancellation", "first-order-decay"].iter().all(|n| rp.criterion(n).is_some_and(|c| c.passed));
    let witnesses: Vec<_> = rc.criteria.iter().filter(|c| c.name.starts_with("witness-")).collect();
    let cpow_ok = !witnesses.is_empty() && witnesses.iter().all(|c| c.passed);
    let mut detail = pick(&rp, &["cancellation", "first-order-decay"]);
    detail.extend(pick(&rc, &["witness-"]));
    (perp_ok && cpow_ok, detail.join("; "))
}

fn determinism_configs() -> Vec<(Experiment, ExperimentConfig)> {
    let mut h = ExperimentConfig::hilbert_fixture();
    h.grid = GridSpec { dim: 1, half_width: 16.0, points: 512 };
    h.family = TestFamily::bandlimited(4.0, 7, 3);
    h.seed = 7;
    h.surface.s_count = 6;
    h.negative_control =
        Some(NegativeControlSpec { points: 1 << 14, depths: vec![4, 8], ..NegativeControlSpec::default() });
    let mut p = ExperimentConfig::perp_gradient_fixture();
    p.grid.points = 64;
    p.family = TestFamily::gaussian(0.0, 1.0, 2);
    p.seed = 3;
    let mut out: Vec<_> = Experiment::ALL.iter().map(|&e| (e, h.clone())).collect();
    out.extend([Experiment::JumpFull, Experiment::Variation, Experiment::VerifyKernel].map(|e| (e, p.clone())));
    out
}

fn criterion_10_determinism() -> Verdict {
    let mut mismatched = Vec::new();
    let cases = determinism_configs();
    for (exp, cfg) in &cases {
        let runs: Vec<String> = [1, 8, 1, 8]
            .iter()
            .map(|&t| report_json(&run_with_threads(*exp, cfg, t).unwrap().report).unwrap())
            .collect();
        if runs.iter().any(|r| r != &runs[0]) {
            mismatched.push(format!("{} ({:?})", exp.name(), cfg.kernel));
        }
    }
    (
        mismatched.is_empty(),
        format!("{} experiment runs at 1 and 8 threads, twice each; mismatches {mismatched:?}", cases.len()),
    )
}

fn main() {
    let criteria: [(usize, fn() -> Verdict); 10] = [
        (1, criterion_01_oracle_equivalence),
        (2, criterion_02_jump_variation_inequality),
        (3, criterion_03_hilbert_multiplier),
        (4, criterion_04_calderon_identity),
        (5, criterion_05_envelope_certificate),
        (6, criterion_06_square_functions),
        (7, criterion_07_jump_and_variation_stability),
        (8, criterion_08_negative_control),
        (9, criterion_09_cancellation_certificates),
        (10, criterion_10_determinism),
    ];
    let mut failed = Vec::new();
    for (id, check) in criteria {
        let (passed, detail) = check();
        println!("{} criterion {id}: {detail}", if passed { "PASS" } else { "FAIL" });
        if !passed {
            failed.push(id);
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed.len(), criteria.len());
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
