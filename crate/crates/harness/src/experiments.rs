//! Experiment runners.
//!
//! Each runner walks a refinement table (grid doublings at the base partition,
//! then partition doublings on the base grid), measures every test function at
//! every level, and checks the declared criteria on the family maxima.

use czvar_core::grid::{make_test_function, Grid, SampledFunction};
use czvar_core::kernels::{
    cancellation_residual, complex_power_annulus, size_bound_ratio, smoothness_constant_probe, Cancellation, Kernel,
    KernelFamily, Orientation, Representation,
};
use czvar_core::norm_lab::{envelope_fit, norm_surface};
use czvar_core::operators::{
    block_operator, build_mollifier_family, check_dyadic_scale, truncated_eval_at, truncated_operator, BoxedOperator,
};
use czvar_core::sequence::{
    count_from_thresholds, lambda_jump_count, q_variation_values, short_variation, sup_from_thresholds, DyadicBlock,
    PairwiseDistances, SampleSequence,
};
use czvar_core::C64;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, LambdaSpec, NegativeControlSpec};
use crate::error::{config_error, Result};
use crate::numbers;
use crate::report::{
    Criterion, ExperimentReport, FunctionResult, Level, Metric, NegativeControl, Outcome, Provenance, RawTable, Scalar,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    VerifyKernel,
    JumpDyadic,
    JumpFull,
    Variation,
    ShortVariation,
    MollifierJump,
    OpnormSurface,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::VerifyKernel,
        Experiment::JumpDyadic,
        Experiment::JumpFull,
        Experiment::Variation,
        Experiment::ShortVariation,
        Experiment::MollifierJump,
        Experiment::OpnormSurface,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::VerifyKernel => "verify-kernel",
            Experiment::JumpDyadic => "jump-dyadic",
            Experiment::JumpFull => "jump-full",
            Experiment::Variation => "variation",
            Experiment::ShortVariation => "short-variation",
            Experiment::MollifierJump => "mollifier-jump",
            Experiment::OpnormSurface => "opnorm-surface",
        }
    }
}

pub fn run(experiment: Experiment, cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    match experiment {
        Experiment::VerifyKernel => verify_kernel(cfg),
        Experiment::JumpDyadic => run_dyadic_jump(cfg),
        Experiment::JumpFull => run_full_jump(cfg),
        Experiment::Variation => run_variation(cfg),
        Experiment::ShortVariation => run_short_variation(cfg),
        Experiment::MollifierJump => run_mollifier_jump(cfg),
        Experiment::OpnormSurface => opnorm_surface(cfg),
    }
}

/// [`run`] on a dedicated pool of `threads` workers.
pub fn run_with_threads(experiment: Experiment, cfg: &ExperimentConfig, threads: usize) -> Result<Outcome> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    pool.install(|| run(experiment, cfg))
}

/// Truncation scales `2^j (1 + l/P)`, `0 ≤ l < P`, then `2^{j_max+1}`.
pub fn truncation_ladder(j_min: i32, j_max: i32, partition: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for j in j_min..=j_max {
        let a = 2f64.powi(j);
        out.extend((0..partition).map(|l| a * (1.0 + l as f64 / partition as f64)));
    }
    out.push(2f64.powi(j_max + 1));
    out
}

/// Positions of the dyadic scales inside [`truncation_ladder`].
pub fn dyadic_positions(j_min: i32, j_max: i32, partition: usize) -> Vec<usize> {
    (0..=(j_max - j_min + 1) as usize).map(|k| k * partition).collect()
}

/// Values of a family of operators applied to one function, stored point-major.
#[derive(Debug, Clone)]
pub struct Stack {
    len: usize,
    data: Vec<C64>,
}

impl Stack {
    pub fn from_rows(rows: &[SampledFunction]) -> Self {
        let len = rows.len();
        let points = rows.first().map_or(0, |r| r.values().len());
        let mut data = vec![C64::default(); len * points];
        for (k, row) in rows.iter().enumerate() {
            for (p, v) in row.values().iter().enumerate() {
                data[p * len + k] = *v;
            }
        }
        Self { len, data }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn points(&self) -> usize {
        self.data.len().checked_div(self.len).unwrap_or(0)
    }

    pub fn at(&self, p: usize) -> &[C64] {
        &self.data[p * self.len..(p + 1) * self.len]
    }

    pub fn select(&self, cols: &[usize]) -> Self {
        let data = (0..self.points()).flat_map(|p| cols.iter().map(move |&c| self.at(p)[c])).collect();
        Self { len: cols.len(), data }
    }
}

fn apply_all(ops: &[BoxedOperator], f: &SampledFunction) -> Result<Stack> {
    let rows = ops.par_iter().map(|op| op.apply(f)).collect::<czvar_core::Result<Vec<_>>>()?;
    Ok(Stack::from_rows(&rows))
}

fn l2(grid: &Grid, values: &[f64]) -> f64 {
    (grid.cell_volume() * values.iter().map(|v| v * v).sum::<f64>()).sqrt()
}

fn ratio(value: f64, norm: f64) -> f64 {
    if norm > 0.0 {
        value / norm
    } else {
        0.0
    }
}

/// Per-point jump thresholds `λ_c` and the pointwise `sup_λ λ√N_λ` with the λ attaining it.
#[derive(Debug, Clone)]
pub struct PointwiseJumps {
    /// Point-major, `stride` thresholds per point.
    pub thresholds: Vec<f64>,
    pub stride: usize,
    pub sup: Vec<f64>,
    pub breakpoints: Vec<f64>,
    pub top: f64,
}

impl PointwiseJumps {
    pub fn at(&self, p: usize) -> &[f64] {
        &self.thresholds[p * self.stride..(p + 1) * self.stride]
    }
}

pub fn pointwise_jumps(stack: &Stack) -> PointwiseJumps {
    let stride = stack.len().saturating_sub(1);
    let per_point: Vec<Vec<f64>> =
        (0..stack.points()).into_par_iter().map(|p| PairwiseDistances::new(stack.at(p)).jump_thresholds()).collect();
    let (breakpoints, sup) = per_point.iter().map(|t| sup_from_thresholds(t)).unzip();
    let top = per_point.iter().filter_map(|t| t.first().copied()).fold(0.0, f64::max);
    PointwiseJumps { thresholds: per_point.concat(), stride, sup, breakpoints, top }
}

/// Log grid below the largest jump, merged with quantiles of the pooled breakpoints.
pub fn lambda_grid(spec: &LambdaSpec, pooled: &[f64], top: f64) -> Vec<f64> {
    if !(top > 0.0) {
        return Vec::new();
    }
    let steps = (spec.decades * spec.per_decade as f64).round() as usize;
    let mut out: Vec<f64> = (1..=steps).map(|k| top * 10f64.powf(-(k as f64) / spec.per_decade as f64)).collect();
    let mut bp: Vec<f64> = pooled.iter().copied().filter(|&b| b > 0.0).collect();
    bp.sort_by(f64::total_cmp);
    if !bp.is_empty() && spec.pooled > 0 {
        let n = bp.len();
        for i in 0..spec.pooled {
            let idx = if spec.pooled == 1 { n - 1 } else { i * (n - 1) / (spec.pooled - 1) };
            // just below the breakpoint, where the strict count still includes it
            out.push(bp[idx] * (1.0 - 1e-9));
        }
    }
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

/// `Σ_x N_λ(x)` for each `λ` in the grid.
pub fn jump_profile(pw: &PointwiseJumps, lambdas: &[f64]) -> Vec<u64> {
    let points = pw.sup.len();
    lambdas.iter().map(|&l| (0..points).map(|p| count_from_thresholds(pw.at(p), l) as u64).sum()).collect()
}

/// `sup_λ λ‖√N_λ‖₂` over the grid, with the `(λ, ‖√N_λ‖₂)` curve.
pub fn jump_norm(grid: &Grid, pw: &PointwiseJumps, lambdas: &[f64]) -> (f64, Vec<(f64, f64)>) {
    let counts = jump_profile(pw, lambdas);
    let curve: Vec<(f64, f64)> =
        lambdas.iter().zip(&counts).map(|(&l, &c)| (l, (grid.cell_volume() * c as f64).sqrt())).collect();
    let best = curve.iter().map(|(l, n)| l * n).fold(0.0, f64::max);
    (best, curve)
}

/// The continuum `sup_λ λ‖√N_λ‖₂`: attained just below one of the pooled thresholds.
pub fn exact_jump_norm(grid: &Grid, pw: &PointwiseJumps) -> f64 {
    let mut all: Vec<f64> = pw.thresholds.iter().copied().filter(|&t| t > 0.0).collect();
    all.sort_by(|a, b| b.total_cmp(a));
    all.iter().enumerate().map(|(k, &t)| t * (grid.cell_volume() * (k + 1) as f64).sqrt()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy)]
struct LevelPlan {
    grid_doublings: u32,
    partition: usize,
}

fn plan_levels(cfg: &ExperimentConfig, partition_axis: bool) -> Vec<LevelPlan> {
    let p0 = cfg.ladder.partition;
    let mut out: Vec<LevelPlan> =
        (0..=cfg.refinement.grid_doublings).map(|d| LevelPlan { grid_doublings: d, partition: p0 }).collect();
    if partition_axis {
        out.extend(
            (1..=cfg.refinement.partition_doublings).map(|k| LevelPlan { grid_doublings: 0, partition: p0 << k }),
        );
    }
    out
}

/// What one test function contributes at one level.
#[derive(Debug, Default)]
struct Measured {
    metrics: Vec<(String, f64)>,
    pointwise: Vec<(String, Vec<f64>)>,
    curves: Vec<(String, Vec<(f64, f64)>)>,
}

impl Measured {
    fn jumps(&mut self, name: &str, grid: &Grid, pw: &PointwiseJumps, lambdas: &[f64]) {
        let (value, curve) = jump_norm(grid, pw, lambdas);
        self.metrics.push((name.to_string(), value));
        self.metrics.push((format!("{name}_exact"), exact_jump_norm(grid, pw)));
        self.metrics.push((format!("{name}_pointwise"), l2(grid, &pw.sup)));
        self.pointwise.push((format!("sup_{name}"), pw.sup.clone()));
        self.curves.push((name.to_string(), curve));
    }
}

fn provenance(cfg: &ExperimentConfig) -> Result<Provenance> {
    Ok(Provenance {
        config_hash: cfg.hash()?,
        harness_version: env!("CARGO_PKG_VERSION").to_string(),
        core_version: czvar_core::VERSION.to_string(),
    })
}

fn family_functions(cfg: &ExperimentConfig, grid: &Grid) -> Result<Vec<SampledFunction>> {
    (0..cfg.family.count).map(|i| Ok(make_test_function(&cfg.family, grid, i)?)).collect()
}

/// Shared driver for the experiments that measure each test function.
fn run_family<T, P, M>(
    cfg: &ExperimentConfig,
    experiment: Experiment,
    partition_axis: bool,
    prepare: P,
    measure: M,
) -> Result<(ExperimentReport, Vec<RawTable>)>
where
    P: Fn(&Grid, (i32, i32), usize) -> Result<T>,
    M: Fn(&T, &Grid, &SampledFunction) -> Result<Measured>,
{
    let k = cfg.kernel()?;
    let range = cfg.ladder.range(&cfg.base_grid()?)?;
    let mut levels = Vec::new();
    let mut tables = Vec::new();
    for (li, plan) in plan_levels(cfg, partition_axis).into_iter().enumerate() {
        let grid = cfg.grid.build(plan.grid_doublings)?;
        let prepared = prepare(&grid, range, plan.partition)?;
        let mut functions = Vec::new();
        let mut raw: Option<RawTable> = None;
        let mut curves: Vec<RawTable> = Vec::new();
        for (fi, f) in family_functions(cfg, &grid)?.iter().enumerate() {
            let m = measure(&prepared, &grid, f)?;
            let f_norm = f.l2_norm();
            functions.push(FunctionResult {
                index: fi,
                f_norm,
                metrics: m
                    .metrics
                    .iter()
                    .map(|(n, v)| Metric { name: n.clone(), value: *v, ratio: ratio(*v, f_norm) })
                    .collect(),
            });
            let raw = raw.get_or_insert_with(|| {
                let mut header = vec!["function", "point", "x"];
                if grid.dim() == 2 {
                    header.push("y");
                }
                header.extend(["f_re", "f_im"]);
                let mut t = RawTable::new(format!("raw_L{li}"), &header);
                t.header.extend(m.pointwise.iter().map(|(n, _)| n.clone()));
                t
            });
            for p in 0..grid.len() {
                let x = grid.point(p);
                let mut row = vec![fi as f64, p as f64];
                row.extend(&x[..grid.dim()]);
                row.extend([f.values()[p].re, f.values()[p].im]);
                row.extend(m.pointwise.iter().map(|(_, v)| v[p]));
                raw.rows.push(row);
            }
            for (name, curve) in &m.curves {
                let t = match curves.iter_mut().position(|t| t.name == format!("plot_{name}_L{li}")) {
                    Some(i) => &mut curves[i],
                    None => {
                        curves.push(RawTable::new(
                            format!("plot_{name}_L{li}"),
                            &["function", "lambda", "sqrt_count_l2", "lambda_times_sqrt_count_l2"],
                        ));
                        curves.last_mut().expect("just pushed")
                    }
                };
                t.rows.extend(curve.iter().map(|&(l, n)| vec![fi as f64, l, n, l * n]));
            }
        }
        let names: Vec<String> =
            functions.first().map_or(Vec::new(), |f| f.metrics.iter().map(|m| m.name.clone()).collect());
        let family_max = names
            .iter()
            .map(|n| {
                let v = functions
                    .iter()
                    .flat_map(|f| f.metrics.iter().filter(|m| &m.name == n).map(|m| m.ratio))
                    .fold(0.0, f64::max);
                Scalar::new(n.clone(), v)
            })
            .collect();
        levels.push(Level {
            index: li,
            grid_doublings: plan.grid_doublings,
            partition: plan.partition,
            points: grid.points(),
            spacing: grid.spacing(),
            functions,
            family_max,
            scalars: Vec::new(),
        });
        tables.extend(raw);
        tables.extend(curves);
    }
    let mut criteria = vec![finite_criterion(&levels)];
    criteria.extend(refinement_criteria(&levels, cfg.ladder.partition, cfg.refinement.tolerance, |l| &l.family_max));
    let report = ExperimentReport {
        experiment: experiment.name().into(),
        kernel: k.id().into(),
        seed: cfg.seed,
        provenance: provenance(cfg)?,
        levels,
        negative_control: Vec::new(),
        criteria,
        passed: false,
    };
    Ok((report, tables))
}

fn finish(mut report: ExperimentReport, tables: Vec<RawTable>) -> Outcome {
    report.passed = report.criteria.iter().all(|c| c.passed);
    Outcome { report, tables }
}

fn finite_criterion(levels: &[Level]) -> Criterion {
    let bad: Vec<String> = levels
        .iter()
        .flat_map(|l| {
            l.functions.iter().flat_map(move |f| {
                f.metrics
                    .iter()
                    .filter(|m| !m.ratio.is_finite())
                    .map(move |m| format!("L{} f{} {}", l.index, f.index, m.name))
            })
        })
        .collect();
    Criterion {
        name: "finite".into(),
        passed: bad.is_empty(),
        detail: if bad.is_empty() { "all ratios finite".into() } else { bad.join(", ") },
    }
}

fn relative_change(coarse: f64, fine: f64) -> f64 {
    if coarse == fine {
        0.0
    } else {
        (fine - coarse).abs() / coarse.abs()
    }
}

/// Neighbouring levels along each refinement axis must agree within `tol` on every named value.
fn refinement_criteria<'a>(
    levels: &'a [Level],
    base_partition: usize,
    tol: f64,
    values: impl Fn(&'a Level) -> &'a Vec<Scalar>,
) -> Vec<Criterion> {
    let grid_axis: Vec<&Level> = levels.iter().filter(|l| l.partition == base_partition).collect();
    let mut part_axis: Vec<&Level> = levels.iter().filter(|l| l.grid_doublings == 0).collect();
    part_axis.sort_by_key(|l| l.partition);
    let mut out = Vec::new();
    for (name, axis) in [("grid-refinement", grid_axis), ("partition-refinement", part_axis)] {
        if axis.len() < 2 {
            continue;
        }
        let mut worst = 0.0f64;
        let mut parts = Vec::new();
        for s in values(axis[0]) {
            let seq: Vec<f64> = axis
                .iter()
                .map(|l| values(l).iter().find(|t| t.name == s.name).map_or(f64::NAN, |t| t.value))
                .collect();
            let change = seq.windows(2).map(|w| relative_change(w[0], w[1])).fold(0.0, f64::max);
            worst = worst.max(if change.is_nan() { f64::INFINITY } else { change });
            parts.push(format!(
                "{}: [{}] change {:.4}",
                s.name,
                seq.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(", "),
                change
            ));
        }
        out.push(Criterion {
            name: name.into(),
            passed: worst <= tol,
            detail: format!("max relative change {worst:.4} (tolerance {tol}); {}", parts.join("; ")),
        });
    }
    out
}

fn truncation_ops(k: &Kernel, grid: &Grid, eps: &[f64]) -> Result<Vec<BoxedOperator>> {
    Ok(eps.par_iter().map(|&e| truncated_operator(k, grid, e)).collect::<czvar_core::Result<Vec<_>>>()?)
}

/// Jumps of `{T_{2^j} f}` over the dyadic ladder.
pub fn run_dyadic_jump(cfg: &ExperimentConfig) -> Result<Outcome> {
    let k = cfg.kernel()?;
    let (mut report, tables) = run_family(
        cfg,
        Experiment::JumpDyadic,
        false,
        |grid, (lo, hi), _| truncation_ops(&k, grid, &truncation_ladder(lo, hi, 1)),
        |ops, grid, f| {
            let stack = apply_all(ops, f)?;
            let pw = pointwise_jumps(&stack);
            let lambdas = lambda_grid(&cfg.lambda, &pw.breakpoints, pw.top);
            let mut m = Measured::default();
            m.jumps("jump", grid, &pw, &lambdas);
            Ok(m)
        },
    )?;
    if let Some(spec) = &cfg.negative_control {
        for nc in negative_control(spec, cfg.grid.dim, cfg.grid.half_width)? {
            report.criteria.push(negative_control_criterion(&nc)?);
            report.negative_control.push(nc);
        }
    }
    Ok(finish(report, tables))
}

/// Jumps over the partitioned ladder, with the dyadic sub-ladder measured on the same λ grid.
pub fn run_full_jump(cfg: &ExperimentConfig) -> Result<Outcome> {
    let k = cfg.kernel()?;
    let (mut report, tables) = run_family(
        cfg,
        Experiment::JumpFull,
        true,
        |grid, (lo, hi), p| Ok((truncation_ops(&k, grid, &truncation_ladder(lo, hi, p))?, dyadic_positions(lo, hi, p))),
        |(ops, dyadic), grid, f| {
            let full = apply_all(ops, f)?;
            let sub = full.select(dyadic);
            let pw_full = pointwise_jumps(&full);
            let pw_sub = pointwise_jumps(&sub);
            let pooled: Vec<f64> = pw_full.breakpoints.iter().chain(&pw_sub.breakpoints).copied().collect();
            let lambdas = lambda_grid(&cfg.lambda, &pooled, pw_full.top);
            let mut m = Measured::default();
            m.jumps("jump", grid, &pw_full, &lambdas);
            m.jumps("jump_dyadic", grid, &pw_sub, &lambdas);
            Ok(m)
        },
    )?;
    let mut worst = Vec::new();
    for l in &report.levels {
        for f in &l.functions {
            for (a, b) in [
                ("jump", "jump_dyadic"),
                ("jump_exact", "jump_dyadic_exact"),
                ("jump_pointwise", "jump_dyadic_pointwise"),
            ] {
                let get = |n: &str| f.metrics.iter().find(|m| m.name == n).map_or(f64::NAN, |m| m.value);
                if !(get(a) >= get(b)) {
                    worst.push(format!("L{} f{}: {a} {} < {b} {}", l.index, f.index, get(a), get(b)));
                }
            }
        }
    }
    report.criteria.push(Criterion {
        name: "full-dominates-dyadic".into(),
        passed: worst.is_empty(),
        detail: if worst.is_empty() {
            "full ladder ≥ dyadic ladder for every function".into()
        } else {
            worst.join("; ")
        },
    });
    Ok(finish(report, tables))
}

/// `‖V_q(T_ε f)‖₂` over the partitioned ladder for each configured `q > 2`.
pub fn run_variation(cfg: &ExperimentConfig) -> Result<Outcome> {
    if let Some(q) = cfg.q.iter().find(|&&q| !(q > 2.0)) {
        return Err(czvar_core::Error::InvalidArgument(format!("variation exponent must exceed 2, got {q}")).into());
    }
    if cfg.q.is_empty() {
        return Err(config_error("no variation exponents"));
    }
    let k = cfg.kernel()?;
    let (mut report, tables) = run_family(
        cfg,
        Experiment::Variation,
        true,
        |grid, (lo, hi), p| truncation_ops(&k, grid, &truncation_ladder(lo, hi, p)),
        |ops, grid, f| {
            let stack = apply_all(ops, f)?;
            let mut m = Measured::default();
            for &q in &cfg.q {
                let pointwise: Vec<f64> = (0..stack.points())
                    .into_par_iter()
                    .map_init(Vec::new, |scratch, p| q_variation_values(stack.at(p), q, scratch))
                    .collect();
                let label = numbers::label(q);
                m.metrics.push((format!("variation_q{label}"), l2(grid, &pointwise)));
                m.pointwise.push((format!("v_q{label}"), pointwise));
            }
            Ok(m)
        },
    )?;
    let mut order: Vec<(f64, String)> =
        cfg.q.iter().map(|&q| (q, format!("variation_q{}", numbers::label(q)))).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut bad = Vec::new();
    for l in &report.levels {
        for f in &l.functions {
            let vals: Vec<f64> = order
                .iter()
                .map(|(_, n)| f.metrics.iter().find(|m| &m.name == n).map_or(f64::NAN, |m| m.value))
                .collect();
            if vals.windows(2).any(|w| !(w[1] <= w[0] * (1.0 + 1e-12))) {
                bad.push(format!("L{} f{}: {vals:?}", l.index, f.index));
            }
        }
    }
    report.criteria.push(Criterion {
        name: "q-monotone".into(),
        passed: bad.is_empty(),
        detail: if bad.is_empty() { "ratios nonincreasing in q".into() } else { bad.join("; ") },
    });
    Ok(finish(report, tables))
}

/// `‖S₂ f‖₂` over blocks `T_{j,t}`, `t = 1 + l/P`, `0 ≤ l ≤ P`.
pub fn run_short_variation(cfg: &ExperimentConfig) -> Result<Outcome> {
    let k = cfg.kernel()?;
    let (report, tables) = run_family(
        cfg,
        Experiment::ShortVariation,
        true,
        |grid, (lo, hi), p| {
            let mut ops = Vec::new();
            let mut blocks = Vec::new();
            for j in lo..=hi {
                check_dyadic_scale(grid, j)?;
                let ts: Vec<f64> = (0..=p).map(|l| 1.0 + l as f64 / p as f64).collect();
                for &t in &ts {
                    ops.push((j, t));
                }
                blocks.push((j, ts));
            }
            let ops =
                ops.par_iter().map(|&(j, t)| block_operator(&k, grid, j, t)).collect::<czvar_core::Result<Vec<_>>>()?;
            Ok((ops, blocks))
        },
        |(ops, blocks), grid, f| {
            let stack = apply_all(ops, f)?;
            let pointwise: Vec<f64> = (0..stack.points())
                .into_par_iter()
                .map(|p| {
                    let v = stack.at(p);
                    let mut start = 0;
                    let mut seqs = Vec::with_capacity(blocks.len());
                    for (j, ts) in blocks {
                        let scale = 2f64.powi(*j);
                        let idx = ts.iter().map(|t| t * scale).collect();
                        let seq = SampleSequence::new(idx, v[start..start + ts.len()].to_vec())?;
                        seqs.push(DyadicBlock { j: *j, seq });
                        start += ts.len();
                    }
                    short_variation(&seqs)
                })
                .collect::<czvar_core::Result<Vec<_>>>()?;
            let mut m = Measured::default();
            m.metrics.push(("short_variation".into(), l2(grid, &pointwise)));
            m.pointwise.push(("s2".into(), pointwise));
            Ok(m)
        },
    )?;
    Ok(finish(report, tables))
}

/// Jumps of `{φ_j ∗ f}` for `j_min ≤ j ≤ j_max`.
pub fn run_mollifier_jump(cfg: &ExperimentConfig) -> Result<Outcome> {
    let (report, tables) = run_family(
        cfg,
        Experiment::MollifierJump,
        false,
        |grid, (lo, hi), _| {
            let mf = build_mollifier_family(grid);
            (lo..=hi).map(|j| Ok(Box::new(mf.operator(j)?) as BoxedOperator)).collect::<Result<Vec<_>>>()
        },
        |ops, grid, f| {
            let stack = apply_all(ops, f)?;
            let pw = pointwise_jumps(&stack);
            let lambdas = lambda_grid(&cfg.lambda, &pw.breakpoints, pw.top);
            let mut m = Measured::default();
            m.jumps("jump", grid, &pw, &lambdas);
            Ok(m)
        },
    )?;
    Ok(finish(report, tables))
}

/// Fixed-λ count of `{T_ε f(centre)}` for `ε = 2^{top-m+1}, …, 2^top`, per depth `m`.
pub fn negative_control(spec: &NegativeControlSpec, dim: usize, half_width: f64) -> Result<Vec<NegativeControl>> {
    let grid = Grid::new(dim, half_width, spec.points)?;
    let f = make_test_function(&spec.family, &grid, 0)?;
    let deepest = spec.depths.iter().copied().max().unwrap_or(0);
    if deepest == 0 || spec.depths.contains(&0) {
        return Err(config_error("negative-control depths must be positive"));
    }
    let eps: Vec<f64> = (0..deepest).map(|i| 2f64.powi(spec.top - (deepest - 1 - i) as i32)).collect();
    let center = grid.center_index();
    spec.kernels
        .iter()
        .map(|&fam| {
            let k = Kernel::from_family(fam)?;
            let values = eps
                .par_iter()
                .map(|&e| truncated_eval_at(&k, &f, e, center))
                .collect::<czvar_core::Result<Vec<_>>>()?;
            let counts = spec
                .depths
                .iter()
                .map(|&m| {
                    let seq = SampleSequence::from_values(values[deepest - m..].to_vec())?;
                    Ok(lambda_jump_count(&seq, spec.lambda)?.count)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(NegativeControl { kernel: k.id().into(), lambda: spec.lambda, depths: spec.depths.clone(), counts })
        })
        .collect()
}

/// Cancelling kernels keep the count fixed; the others must at least double when the depth doubles.
fn negative_control_criterion(nc: &NegativeControl) -> Result<Criterion> {
    let family = match nc.kernel.as_str() {
        "complex-power" => Cancellation::Violated,
        _ => Cancellation::Analytic,
    };
    let mut pairs: Vec<(usize, usize)> = nc.depths.iter().copied().zip(nc.counts.iter().copied()).collect();
    pairs.sort();
    let passed = if family == Cancellation::Violated {
        let monotone = pairs.windows(2).all(|w| w[1].1 >= w[0].1);
        let doubling = pairs
            .iter()
            .all(|&(m, c)| pairs.iter().find(|&&(m2, _)| m2 == 2 * m).is_none_or(|&(_, c2)| c2 >= 2 * c && c2 > c));
        monotone && doubling && pairs.last().map(|p| p.1) > pairs.first().map(|p| p.1)
    } else {
        pairs.windows(2).all(|w| w[1].1 == w[0].1)
    };
    Ok(Criterion {
        name: format!("negative-control-{}", nc.kernel),
        passed,
        detail: format!("lambda {}: (depth, count) {:?}", nc.lambda, pairs),
    })
}

/// Least-squares slope of `y` against `x`; NaN with fewer than two points.
fn fitted_slope(pts: &[(f64, f64)]) -> f64 {
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Size, smoothness and cancellation certificates for the configured kernel.
pub fn verify_kernel(cfg: &ExperimentConfig) -> Result<Outcome> {
    let k = cfg.kernel()?;
    let spec = &cfg.verify;
    let size = size_bound_ratio(&k, spec.samples, cfg.seed, spec.extent);
    let smooth = smoothness_constant_probe(&k, k.modulus(), spec.samples, cfg.seed.wrapping_add(1), spec.extent);
    let mut levels = Vec::new();
    let mut tables = Vec::new();
    for d in 0..=cfg.refinement.grid_doublings {
        let grid = cfg.grid.build(d)?;
        let h = grid.spacing();
        let mut table =
            RawTable::new(format!("residuals_L{d}"), &["center", "eps", "outer", "orientation", "re", "im", "abs"]);
        let mut combos = Vec::new();
        for &c in &spec.centers {
            for &e in &spec.eps {
                for &n in &spec.outer {
                    if e >= 2.0 * h && n > e && n <= grid.half_width() / 2.0 {
                        for (oi, o) in [Orientation::OverY, Orientation::OverX].into_iter().enumerate() {
                            combos.push((c, e, n, oi, o));
                        }
                    }
                }
            }
        }
        let residuals = combos
            .par_iter()
            .map(|&(c, e, n, _, o)| {
                let center = [c, -0.5 * c];
                cancellation_residual(&k, &grid, &center[..grid.dim()], e, n, o)
            })
            .collect::<czvar_core::Result<Vec<_>>>()?;
        let on_lattice = |c: f64| {
            let center = [c, -0.5 * c];
            center[..grid.dim()].iter().all(|&x| {
                let t = (x + grid.half_width()) / h;
                (t - t.round()).abs() < 1e-9
            })
        };
        let mut max_res = 0.0f64;
        let mut max_lattice = 0.0f64;
        for (&(c, e, n, oi, _), r) in combos.iter().zip(&residuals) {
            max_res = max_res.max(r.norm());
            if on_lattice(c) {
                max_lattice = max_lattice.max(r.norm());
            }
            table.rows.push(vec![c, e, n, oi as f64, r.re, r.im, r.norm()]);
        }
        let mut scalars = vec![
            Scalar::new("size_ratio", size),
            Scalar::new("smoothness_constant", smooth),
            Scalar::new("max_residual", max_res),
            Scalar::new("max_residual_over_h", max_res / h),
            Scalar::new("max_lattice_residual", max_lattice),
        ];
        if let KernelFamily::ComplexPower { gamma } = k.family() {
            if grid.half_width() / 2.0 >= 2.0 && 1.0 >= 2.0 * h {
                let origin = [0.0, 0.0];
                let w = cancellation_residual(&k, &grid, &origin[..grid.dim()], 1.0, 2.0, Orientation::OverY)?;
                scalars.push(Scalar::new("witness_abs", w.norm()));
                scalars.push(Scalar::new("closed_form_abs", complex_power_annulus(gamma, 1.0, 2.0).norm()));
            }
        }
        levels.push(Level {
            index: d as usize,
            grid_doublings: d,
            partition: cfg.ladder.partition,
            points: grid.points(),
            spacing: h,
            functions: Vec::new(),
            family_max: Vec::new(),
            scalars,
        });
        tables.push(table);
    }
    let mut criteria = vec![
        Criterion {
            name: "size-bound".into(),
            passed: size <= 1.0 + 1e-12,
            detail: format!("max |K| |x-y|^n / C_K = {size}"),
        },
        Criterion {
            name: "smoothness".into(),
            passed: smooth.is_finite(),
            detail: format!("empirical constant {smooth}"),
        },
    ];
    let per_h: Vec<f64> = levels.iter().map(|l| l.scalar("max_residual_over_h").unwrap_or(f64::NAN)).collect();
    let res: Vec<f64> = levels.iter().map(|l| l.scalar("max_residual").unwrap_or(f64::NAN)).collect();
    match k.cancellation() {
        Cancellation::Analytic | Cancellation::Numeric => {
            criteria.push(Criterion {
                name: "cancellation".into(),
                passed: per_h.iter().all(|&v| v <= spec.residual_per_h),
                detail: format!("max residual / h per level {per_h:?} (bound {})", spec.residual_per_h),
            });
            if k.representation() == Representation::Convolution {
                // odd kernels cancel exactly when the centre is a grid point
                let lattice: Vec<f64> =
                    levels.iter().map(|l| l.scalar("max_lattice_residual").unwrap_or(f64::NAN)).collect();
                criteria.push(Criterion {
                    name: "lattice-symmetry".into(),
                    passed: lattice.iter().all(|&v| v <= 1e-12),
                    detail: format!("max residual at grid-point centres per level {lattice:?}"),
                });
            } else {
                // only residuals above roundoff are expected to decay
                let pts: Vec<(f64, f64)> = levels
                    .iter()
                    .zip(&res)
                    .filter(|(_, &r)| r > 1e-10)
                    .map(|(l, &r)| (l.spacing.ln(), r.ln()))
                    .collect();
                let order = fitted_slope(&pts);
                criteria.push(Criterion {
                    name: "first-order-decay".into(),
                    passed: order >= 0.9,
                    detail: format!("residuals {res:?}, fitted order {order}"),
                });
            }
        }
        Cancellation::Violated => {
            criteria.push(Criterion {
                name: "cancellation-violated".into(),
                passed: per_h.iter().all(|&v| v > spec.residual_per_h),
                detail: format!("max residual / h per level {per_h:?} exceeds {}", spec.residual_per_h),
            });
            for l in &levels {
                if let (Some(w), Some(c)) = (l.scalar("witness_abs"), l.scalar("closed_form_abs")) {
                    criteria.push(Criterion {
                        name: format!("witness-L{}", l.index),
                        passed: (w - c).abs() <= 0.01 * c,
                        detail: format!("|residual(1, 2)| = {w}, closed form {c}"),
                    });
                }
            }
        }
    }
    let report = ExperimentReport {
        experiment: Experiment::VerifyKernel.name().into(),
        kernel: k.id().into(),
        seed: cfg.seed,
        provenance: provenance(cfg)?,
        levels,
        negative_control: Vec::new(),
        criteria,
        passed: false,
    };
    Ok(finish(report, tables))
}

/// Scales for the surface: configured, or the resolved dyadic rows and `s_count` log-spaced admissible `s`.
pub fn surface_axes(cfg: &ExperimentConfig, grid: &Grid) -> Result<(Vec<i32>, Vec<f64>)> {
    let js = match &cfg.surface.js {
        Some(js) => js.clone(),
        None => {
            let lo = (2.0 * grid.spacing()).log2().ceil() as i32;
            (lo..).take_while(|&j| check_dyadic_scale(grid, j).is_ok()).collect()
        }
    };
    let lo = cfg.surface.s_min.unwrap_or(4.0 * grid.spacing());
    let hi = cfg.surface.s_max.unwrap_or(grid.half_width() / 2.0);
    let n = cfg.surface.s_count;
    if n < 2 || !(hi > lo) || js.is_empty() {
        return Err(config_error("surface needs at least one row, two columns and s_max > s_min"));
    }
    let ss = (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect();
    Ok((js, ss))
}

/// Operator-norm surfaces and their envelope constants, per grid level.
pub fn opnorm_surface(cfg: &ExperimentConfig) -> Result<Outcome> {
    let k = cfg.kernel()?;
    let (js, ss) = surface_axes(cfg, &cfg.base_grid()?)?;
    let mut levels = Vec::new();
    let mut tables = Vec::new();
    for d in 0..=cfg.refinement.grid_doublings {
        let grid = cfg.grid.build(d)?;
        let mut scalars = Vec::new();
        for &fam in &cfg.surface.families {
            let surf = norm_surface(&k, fam, &grid, &js, &ss, cfg.surface.settings, cfg.seed)?;
            let fit = envelope_fit(&surf, k.modulus(), cfg.surface.theta)?;
            scalars.push(Scalar::new(format!("{}.constant", fam.label()), fit.constant));
            scalars.push(Scalar::new(format!("{}.unconverged", fam.label()), surf.unconverged() as f64));
            let mut t = RawTable::new(
                format!("surface_{}_L{d}", fam.label()),
                &["j", "s", "estimate", "iterations", "converged", "envelope_ratio"],
            );
            for (c, r) in surf.cells.iter().zip(&fit.ratios) {
                t.rows.push(vec![c.j as f64, c.s, c.estimate, c.iterations as f64, c.converged as u8 as f64, *r]);
            }
            tables.push(t);
        }
        levels.push(Level {
            index: d as usize,
            grid_doublings: d,
            partition: cfg.ladder.partition,
            points: grid.points(),
            spacing: grid.spacing(),
            functions: Vec::new(),
            family_max: Vec::new(),
            scalars,
        });
    }
    let constants: Vec<String> = levels[0]
        .scalars
        .iter()
        .filter(|s| s.name.ends_with(".constant"))
        .map(|s| format!("{} = {}", s.name, s.value))
        .collect();
    let mut criteria = vec![Criterion {
        name: "envelope-finite".into(),
        passed: levels
            .iter()
            .all(|l| l.scalars.iter().filter(|s| s.name.ends_with(".constant")).all(|s| s.value.is_finite())),
        detail: format!("coarsest level: {}", constants.join(", ")),
    }];
    let constant_levels: Vec<Level> = levels
        .iter()
        .map(|l| Level {
            scalars: l.scalars.iter().filter(|s| s.name.ends_with(".constant")).cloned().collect(),
            ..l.clone()
        })
        .collect();
    criteria
        .extend(refinement_criteria(&constant_levels, cfg.ladder.partition, cfg.refinement.tolerance, |l| &l.scalars));
    let report = ExperimentReport {
        experiment: Experiment::OpnormSurface.name().into(),
        kernel: k.id().into(),
        seed: cfg.seed,
        provenance: provenance(cfg)?,
        levels,
        negative_control: Vec::new(),
        criteria,
        passed: false,
    };
    Ok(finish(report, tables))
}
