//! Jump, variation and short-variation functionals of finite sequences.
//!
//! All functionals act on complex values and use the complex modulus. The
//! jump count is the length of the longest chain of indices whose consecutive
//! values differ by more than λ; it is computed exactly by a longest-path
//! dynamic program over the index DAG.

use crate::error::{invalid, Error, Result};
use crate::C64;

/// Largest sequence length accepted by [`lambda_jump_count_bruteforce`].
pub const BRUTE_FORCE_LIMIT: usize = 20;

/// A finite family `{F_t}` sampled at strictly increasing scale labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSequence {
    indices: Vec<f64>,
    values: Vec<C64>,
}

impl SampleSequence {
    pub fn new(indices: Vec<f64>, values: Vec<C64>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("sample sequence must be non-empty"));
        }
        if indices.len() != values.len() {
            return Err(invalid(format!("{} indices for {} values", indices.len(), values.len())));
        }
        if indices.iter().any(|t| !t.is_finite()) {
            return Err(invalid("indices must be finite"));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("indices must be strictly increasing"));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(invalid("values must be finite"));
        }
        Ok(Self { indices, values })
    }

    /// Sequence labelled `0, 1, 2, ...`.
    pub fn from_values(values: Vec<C64>) -> Result<Self> {
        let indices = (0..values.len()).map(|i| i as f64).collect();
        Self::new(indices, values)
    }

    pub fn from_real(values: &[f64]) -> Result<Self> {
        Self::from_values(values.iter().map(|&v| C64::new(v, 0.0)).collect())
    }

    pub fn indices(&self) -> &[f64] {
        &self.indices
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Comparison used at the jump threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Threshold {
    /// `|Δ| > λ`, the definition of `N_λ`.
    Strict,
    /// `|Δ| ≥ λ`, the left limit of `N_λ` at a breakpoint.
    AtLeast,
}

impl Threshold {
    #[inline]
    fn passes(self, d: f64, lambda: f64) -> bool {
        match self {
            Threshold::Strict => d > lambda,
            Threshold::AtLeast => d >= lambda,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpReport {
    pub lambda: f64,
    pub count: usize,
    /// Positions (into the sequence) of a chain realizing `count`.
    pub anchor_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariationReport {
    /// Exponent; `f64::INFINITY` for the oscillation.
    pub q: f64,
    pub value: f64,
    pub subsequence: Vec<usize>,
}

/// Upper-triangular table of `|a_j - a_i|`, reused across thresholds.
#[derive(Debug, Clone)]
pub struct PairwiseDistances {
    len: usize,
    // row-major strict upper triangle, (i, j) with i < j
    dist: Vec<f64>,
}

impl PairwiseDistances {
    pub fn new(values: &[C64]) -> Self {
        let len = values.len();
        let mut dist = Vec::with_capacity(len * len.saturating_sub(1) / 2);
        for i in 0..len {
            for j in i + 1..len {
                dist.push((values[j] - values[i]).norm());
            }
        }
        Self { len, dist }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    fn offset(&self, i: usize) -> usize {
        // start of row i in the packed triangle
        i * (2 * self.len - i - 1) / 2
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < j);
        self.dist[self.offset(i) + (j - i - 1)]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.dist
    }

    pub fn max(&self) -> f64 {
        self.dist.iter().copied().fold(0.0, f64::max)
    }

    /// Longest chain with every consecutive gap passing the threshold.
    pub fn jump_count(&self, lambda: f64, rule: Threshold) -> usize {
        let mut best = vec![0usize; self.len];
        self.jump_count_with(lambda, rule, &mut best)
    }

    /// As [`Self::jump_count`], with caller-provided scratch of length `len`.
    pub fn jump_count_with(&self, lambda: f64, rule: Threshold, best: &mut [usize]) -> usize {
        let n = self.len;
        let mut overall = 0;
        for j in 0..n {
            let mut b = 0;
            for (i, &prev) in best[..j].iter().enumerate() {
                if prev + 1 > b && rule.passes(self.get(i, j), lambda) {
                    b = prev + 1;
                }
            }
            best[j] = b;
            overall = overall.max(b);
        }
        overall
    }

    fn jump_chain(&self, lambda: f64, rule: Threshold) -> Vec<usize> {
        let n = self.len;
        let mut best = vec![0usize; n];
        let mut pred = vec![usize::MAX; n];
        for j in 0..n {
            for i in 0..j {
                if best[i] + 1 > best[j] && rule.passes(self.get(i, j), lambda) {
                    best[j] = best[i] + 1;
                    pred[j] = i;
                }
            }
        }
        // earliest end position attaining the maximum
        let top = best.iter().copied().max().unwrap_or(0);
        let mut end = best.iter().position(|&b| b == top).unwrap_or(0);
        let mut chain = vec![end];
        while pred[end] != usize::MAX {
            end = pred[end];
            chain.push(end);
        }
        chain.reverse();
        chain
    }

    /// `λ_c` for `c = 1, …, len - 1`: the largest smallest gap over chains with `c` jumps.
    ///
    /// Nonincreasing in `c`, and `N_λ = #{c : λ_c > λ}` for every `λ > 0`.
    pub fn jump_thresholds(&self) -> Vec<f64> {
        let n = self.len;
        if n < 2 {
            return Vec::new();
        }
        // b[j*n + c]: best smallest gap over chains ending at j with c jumps
        let mut b = vec![f64::NEG_INFINITY; n * n];
        for j in 0..n {
            b[j * n] = f64::INFINITY;
        }
        for j in 1..n {
            for i in 0..j {
                let d = self.get(i, j);
                let (head, tail) = b.split_at_mut(j * n);
                let from = &head[i * n..i * n + i + 1];
                let to = &mut tail[1..i + 2];
                for (t, &f) in to.iter_mut().zip(from) {
                    let cand = f.min(d);
                    if cand > *t {
                        *t = cand;
                    }
                }
            }
        }
        (1..n).map(|c| (0..n).map(|j| b[j * n + c]).fold(f64::NEG_INFINITY, f64::max)).collect()
    }

    /// `sup_{λ>0} λ √N_λ` and a breakpoint attaining it.
    pub fn sup_lambda_jump(&self) -> (f64, f64) {
        let mut cands: Vec<f64> = self.dist.iter().copied().filter(|&d| d > 0.0).collect();
        if cands.is_empty() {
            return (0.0, 0.0);
        }
        cands.sort_by(|a, b| b.partial_cmp(a).expect("finite distances"));
        cands.dedup();
        let mut scratch = vec![0usize; self.len];
        let mut count_at = |k: usize| self.jump_count_with(cands[k], Threshold::AtLeast, &mut scratch);
        // N_{≥d} is a nonincreasing step function of d; bisect its steps.
        let mut best = (0.0, 0.0);
        let mut stack = vec![(0usize, cands.len() - 1, count_at(0), None::<usize>)];
        while let Some((lo, hi, n_lo, n_hi)) = stack.pop() {
            let n_hi = match n_hi {
                Some(v) => v,
                None => count_at(hi),
            };
            if n_lo == n_hi || hi == lo + 1 {
                for (k, n) in [(lo, n_lo), (hi, n_hi)] {
                    let v = cands[k] * (n as f64).sqrt();
                    if v > best.1 {
                        best = (cands[k], v);
                    }
                }
                continue;
            }
            let mid = (lo + hi) / 2;
            let n_mid = count_at(mid);
            stack.push((lo, mid, n_lo, Some(n_mid)));
            stack.push((mid, hi, n_mid, Some(n_hi)));
        }
        best
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(invalid(format!("lambda must be positive and finite, got {lambda}")));
    }
    Ok(())
}

fn check_q(q: f64) -> Result<()> {
    if q.is_nan() || q <= 1.0 {
        return Err(invalid(format!("q must exceed 1, got {q}")));
    }
    Ok(())
}

/// Exact `N_λ` with a realizing chain.
pub fn lambda_jump_count(seq: &SampleSequence, lambda: f64) -> Result<JumpReport> {
    check_lambda(lambda)?;
    let dist = PairwiseDistances::new(seq.values());
    let chain = dist.jump_chain(lambda, Threshold::Strict);
    let count = chain.len().saturating_sub(1);
    Ok(JumpReport { lambda, count, anchor_indices: if count == 0 { chain[..1].to_vec() } else { chain } })
}

/// Exhaustive enumeration of all index subsets. Exponential; test oracle only.
pub fn lambda_jump_count_bruteforce(seq: &SampleSequence, lambda: f64) -> Result<usize> {
    check_lambda(lambda)?;
    let n = seq.len();
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::OracleSizeExceeded { len: n, limit: BRUTE_FORCE_LIMIT });
    }
    let v = seq.values();
    let mut best = 0usize;
    for mask in 1u32..(1u32 << n) {
        let size = mask.count_ones() as usize;
        if size <= best + 1 {
            continue;
        }
        let mut prev: Option<usize> = None;
        let mut ok = true;
        for i in (0..n).filter(|i| mask & (1 << i) != 0) {
            if let Some(p) = prev {
                if (v[i] - v[p]).norm() <= lambda {
                    ok = false;
                    break;
                }
            }
            prev = Some(i);
        }
        if ok {
            best = size - 1;
        }
    }
    Ok(best)
}

/// `V_q` by the `O(m²)` subsequence dynamic program (`q = ∞` gives the oscillation).
pub fn q_variation(seq: &SampleSequence, q: f64) -> Result<VariationReport> {
    check_q(q)?;
    let v = seq.values();
    let n = v.len();
    if q.is_infinite() {
        let mut arg = (0, 0);
        let mut top = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let d = (v[j] - v[i]).norm();
                if d > top {
                    top = d;
                    arg = (i, j);
                }
            }
        }
        let subsequence = if top > 0.0 { vec![arg.0, arg.1] } else { vec![0] };
        return Ok(VariationReport { q, value: top, subsequence });
    }
    let mut best = vec![0.0f64; n];
    let mut pred = vec![usize::MAX; n];
    for j in 1..n {
        for i in 0..j {
            let cand = best[i] + (v[j] - v[i]).norm().powf(q);
            if cand > best[j] {
                best[j] = cand;
                pred[j] = i;
            }
        }
    }
    let (mut end, &total) =
        best.iter().enumerate().fold((0, &0.0), |acc, (i, b)| if *b > *acc.1 { (i, b) } else { acc });
    let mut subsequence = vec![end];
    while pred[end] != usize::MAX {
        end = pred[end];
        subsequence.push(end);
    }
    subsequence.reverse();
    Ok(VariationReport { q, value: total.powf(1.0 / q), subsequence })
}

/// `V_q` of raw values without building a report. `q` must be valid.
pub fn q_variation_values(values: &[C64], q: f64, scratch: &mut Vec<f64>) -> f64 {
    let n = values.len();
    if q.is_infinite() {
        let mut top = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                top = top.max((values[j] - values[i]).norm());
            }
        }
        return top;
    }
    scratch.clear();
    scratch.resize(n, 0.0);
    let half = 0.5 * q;
    for j in 1..n {
        let mut b = 0.0f64;
        for i in 0..j {
            let d2 = (values[j] - values[i]).norm_sqr();
            b = b.max(scratch[i] + if q == 2.0 { d2 } else { d2.powf(half) });
        }
        scratch[j] = b;
    }
    scratch.iter().copied().fold(0.0, f64::max).powf(1.0 / q)
}

/// Recompute `(Σ |Δ|^q)^{1/q}` along a given subsequence.
pub fn variation_along(values: &[C64], subsequence: &[usize], q: f64) -> f64 {
    let diffs = subsequence.windows(2).map(|w| (values[w[1]] - values[w[0]]).norm());
    if q.is_infinite() {
        diffs.fold(0.0, f64::max)
    } else {
        diffs.map(|d| d.powf(q)).sum::<f64>().powf(1.0 / q)
    }
}

/// Exact `sup_{λ>0} λ √N_λ`, returned as `(λ*, value)`.
///
/// The supremum is a left limit at a breakpoint `λ* = |a_i - a_j|` and is not
/// attained by the strict count; it is evaluated with `|Δ| ≥ λ*`.
pub fn sup_lambda_jump(seq: &SampleSequence) -> Result<(f64, f64)> {
    if seq.len() < 2 {
        return Err(invalid("sup over lambda needs at least two samples"));
    }
    Ok(PairwiseDistances::new(seq.values()).sup_lambda_jump())
}

/// `N_λ` read off [`PairwiseDistances::jump_thresholds`].
pub fn count_from_thresholds(thresholds: &[f64], lambda: f64) -> usize {
    thresholds.partition_point(|&t| t > lambda)
}

/// `sup_{λ>0} λ √N_λ` from the thresholds, as `(λ*, value)`.
pub fn sup_from_thresholds(thresholds: &[f64]) -> (f64, f64) {
    thresholds
        .iter()
        .enumerate()
        .filter(|(_, &t)| t > 0.0)
        .map(|(c, &t)| (t, t * ((c + 1) as f64).sqrt()))
        .fold((0.0, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best })
}

/// Samples of the family restricted to the dyadic block `[2^j, 2^{j+1}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DyadicBlock {
    pub j: i32,
    pub seq: SampleSequence,
}

/// `S_2 = (Σ_j V_{2,j}^2)^{1/2}` with each `V_{2,j}` the exact 2-variation of its block.
pub fn short_variation(blocks: &[DyadicBlock]) -> Result<f64> {
    let mut total = 0.0;
    for block in blocks {
        let lo = 2f64.powi(block.j);
        let hi = 2.0 * lo;
        if let Some(t) = block.seq.indices().iter().find(|&&t| t < lo || t > hi) {
            return Err(invalid(format!("index {t} outside dyadic block [{lo}, {hi}] (j = {})", block.j)));
        }
        let v = q_variation(&block.seq, 2.0)?.value;
        total += v * v;
    }
    Ok(total.sqrt())
}
