//! Calderón–Zygmund kernels, moduli of continuity and their verification probes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::Grid;
use crate::C64;

/// A modulus of continuity `ω : [0, ∞) → [0, ∞)` with `ω(0) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Modulus {
    /// `t^θ`.
    Power {
        theta: f64,
    },
    /// `(1 + ln(1/t))^{-β}` for `t ≤ 1`, and 1 beyond.
    LogPower {
        beta: f64,
    },
    Sum {
        left: Box<Modulus>,
        right: Box<Modulus>,
    },
    /// `ω(t)^e`.
    PowerOf {
        inner: Box<Modulus>,
        exponent: f64,
    },
    /// `outer(inner(t))`.
    Composition {
        outer: Box<Modulus>,
        inner: Box<Modulus>,
    },
    /// `c · ω(t)`.
    Scaled {
        factor: f64,
        inner: Box<Modulus>,
    },
}

impl Modulus {
    pub fn power(theta: f64) -> Self {
        Modulus::Power { theta }
    }

    pub fn lipschitz() -> Self {
        Modulus::Power { theta: 1.0 }
    }

    pub fn log_power(beta: f64) -> Self {
        Modulus::LogPower { beta }
    }

    pub fn sum(self, other: Modulus) -> Self {
        Modulus::Sum { left: Box::new(self), right: Box::new(other) }
    }

    pub fn powf(self, exponent: f64) -> Self {
        Modulus::PowerOf { inner: Box::new(self), exponent }
    }

    /// `ω^{1/2}`.
    pub fn root(self) -> Self {
        self.powf(0.5)
    }

    pub fn compose(self, inner: Modulus) -> Self {
        Modulus::Composition { outer: Box::new(self), inner: Box::new(inner) }
    }

    pub fn scaled(self, factor: f64) -> Self {
        Modulus::Scaled { factor, inner: Box::new(self) }
    }

    /// `ω(t) + t^θ`, the envelope modulus of the dyadic-piece estimates.
    pub fn with_power(self, theta: f64) -> Self {
        self.sum(Modulus::power(theta))
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self {
            Modulus::Power { theta } => t.powf(*theta),
            Modulus::LogPower { beta } => {
                if t >= 1.0 {
                    1.0
                } else {
                    (1.0 + (1.0 / t).ln()).powf(-beta)
                }
            }
            Modulus::Sum { left, right } => left.eval(t) + right.eval(t),
            Modulus::PowerOf { inner, exponent } => inner.eval(t).powf(*exponent),
            Modulus::Composition { outer, inner } => outer.eval(inner.eval(t)),
            Modulus::Scaled { factor, inner } => factor * inner.eval(t),
        }
    }

    /// Largest `ω(u) / (ω(t) + ω(s))` over sampled triples with `u ≤ t + s`, all in `(0, t_max]`.
    ///
    /// A value `≤ 1` means no sub-additivity violation was found.
    pub fn subadditivity_defect(&self, t_max: f64, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            let t = t_max * 10f64.powf(-6.0 * rng.random::<f64>());
            let s = t_max * 10f64.powf(-6.0 * rng.random::<f64>());
            let u = ((t + s) * rng.random::<f64>().sqrt()).min(t_max);
            let denom = self.eval(t) + self.eval(s);
            if denom > 0.0 {
                worst = worst.max(self.eval(u) / denom);
            }
        }
        worst
    }

    /// True when `ω` is nondecreasing on the ladder `t = 2^{-k}`, `k = 0..levels`.
    pub fn monotone_on_ladder(&self, levels: u32) -> bool {
        let vals: Vec<f64> = (0..levels).map(|k| self.eval(2f64.powi(-(k as i32)))).collect();
        vals.windows(2).all(|w| w[0] >= w[1])
    }
}

/// Outcome of a Dini integral `∫_0^1 ω(t)^r dt/t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DiniNorm {
    Finite { value: f64, tail: f64 },
    Divergent,
}

impl DiniNorm {
    pub fn value(&self) -> Option<f64> {
        match self {
            DiniNorm::Finite { value, .. } => Some(*value),
            DiniNorm::Divergent => None,
        }
    }
}

/// Smallest `t` reached by the quadrature before the tail model takes over.
pub const DINI_T_MIN: f64 = 1e-12;

/// `∫_0^1 ω(t)^r dt/t` via `u = ln(1/t)` on `[0, ln 10^{12}]` plus a fitted tail.
///
/// The tail beyond `t = 1e-12` is modelled as `g(u) ∝ (1 + u)^{-p}` with `p`
/// read from the last unit of `u`; `p ≤ 1` is reported as divergent.
pub fn dini_norm(m: &Modulus, root: f64) -> Result<DiniNorm> {
    if !(root > 0.0 && root <= 1.0) {
        return Err(invalid(format!("root must lie in (0, 1], got {root}")));
    }
    let g = |u: f64| m.eval((-u).exp()).powf(root);
    let u_max = (1.0 / DINI_T_MIN).ln();
    // composite Simpson, 1/256 per unit of u
    let panels = (u_max * 256.0).ceil() as usize * 2;
    let step = u_max / panels as f64;
    let mut acc = g(0.0) + g(u_max);
    for k in 1..panels {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * g(k as f64 * step);
    }
    let body = acc * step / 3.0;
    if !body.is_finite() {
        return Ok(DiniNorm::Divergent);
    }
    let end = g(u_max);
    if end == 0.0 {
        return Ok(DiniNorm::Finite { value: body, tail: 0.0 });
    }
    let before = g(u_max - 1.0);
    let p = (before / end).ln() / ((1.0 + u_max) / u_max).ln();
    if !(p > 1.0) {
        return Ok(DiniNorm::Divergent);
    }
    let tail = end * (1.0 + u_max) / (p - 1.0);
    Ok(DiniNorm::Finite { value: body + tail, tail })
}

/// Interval of radii selected by a mask. Bounds carry their own openness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Bound {
    Open(f64),
    Closed(f64),
    Unbounded,
}

/// `{u : lower ⋖ |u| ⋖ upper}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialMask {
    pub lower: Bound,
    pub upper: Bound,
}

impl RadialMask {
    /// `|u| > ε`.
    pub fn truncation(eps: f64) -> Self {
        Self { lower: Bound::Open(eps), upper: Bound::Unbounded }
    }

    /// `2^j ≤ |u| < 2^{j+1}`.
    pub fn dyadic_piece(j: i32) -> Self {
        let a = 2f64.powi(j);
        Self { lower: Bound::Closed(a), upper: Bound::Open(2.0 * a) }
    }

    /// `|u| > 2^{j+1}`.
    pub fn tail(j: i32) -> Self {
        Self { lower: Bound::Open(2f64.powi(j + 1)), upper: Bound::Unbounded }
    }

    /// `cutoff ≤ |u| ≤ 2^{j+1}`.
    pub fn local(j: i32, cutoff: f64) -> Self {
        Self { lower: Bound::Closed(cutoff), upper: Bound::Closed(2f64.powi(j + 1)) }
    }

    /// `|u| ≥ cutoff`.
    pub fn resolved(cutoff: f64) -> Self {
        Self { lower: Bound::Closed(cutoff), upper: Bound::Unbounded }
    }

    /// `2^j t < |u| ≤ 2^{j+1}`.
    pub fn block(j: i32, t: f64) -> Self {
        let a = 2f64.powi(j);
        Self { lower: Bound::Open(a * t), upper: Bound::Closed(2.0 * a) }
    }

    /// `eps ≤ |u| ≤ outer`.
    pub fn closed_annulus(eps: f64, outer: f64) -> Self {
        Self { lower: Bound::Closed(eps), upper: Bound::Closed(outer) }
    }

    #[inline]
    pub fn contains(&self, r: f64) -> bool {
        let lo = match self.lower {
            Bound::Open(a) => r > a,
            Bound::Closed(a) => r >= a,
            Bound::Unbounded => true,
        };
        lo && match self.upper {
            Bound::Open(b) => r < b,
            Bound::Closed(b) => r <= b,
            Bound::Unbounded => true,
        }
    }

    pub fn inner_radius(&self) -> f64 {
        match self.lower {
            Bound::Open(a) | Bound::Closed(a) => a,
            Bound::Unbounded => 0.0,
        }
    }
}

/// Whether the annulus cancellation conditions hold, and how that is known.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Cancellation {
    Analytic,
    Numeric,
    Violated,
}

/// How operators with this kernel are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Representation {
    /// `K(x, y) = k(x - y)`.
    Convolution,
    /// `K(x, y) = Σ_i c_i(x) k_i(x - y)`.
    Separable,
    /// Direct summation only.
    General,
}

/// Kernel fixture ids, selectable by name from configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "kebab-case")]
pub enum KernelFamily {
    Hilbert,
    OddDini { beta: f64 },
    PerpGradient,
    ComplexPower { gamma: f64 },
    Zero { dim: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    family: KernelFamily,
    dim: usize,
    size_constant: f64,
    modulus: Modulus,
    cancellation: Cancellation,
    representation: Representation,
}

/// `ρ(x) = sin x₁ cos x₂` and its gradient, for the perp-gradient fixture.
fn rho_gradient(x: &[f64]) -> [f64; 2] {
    [x[0].cos() * x[1].cos(), -x[0].sin() * x[1].sin()]
}

/// Even profile `1 + ω(dist(log₂ r, ℤ))/2`: rough at every dyadic radius.
fn odd_dini_profile(beta: f64, r: f64) -> f64 {
    let l = r.log2();
    let d = (l - l.round()).abs();
    1.0 + 0.5 * Modulus::log_power(beta).eval(d)
}

impl Kernel {
    pub fn from_family(family: KernelFamily) -> Result<Self> {
        match family {
            KernelFamily::Hilbert => Ok(Self::hilbert()),
            KernelFamily::OddDini { beta } => Self::odd_dini(beta),
            KernelFamily::PerpGradient => Ok(Self::perp_gradient()),
            KernelFamily::ComplexPower { gamma } => Ok(Self::complex_power(gamma)),
            KernelFamily::Zero { dim } => Self::zero(dim),
        }
    }

    /// `1/(x - y)`.
    pub fn hilbert() -> Self {
        Self {
            family: KernelFamily::Hilbert,
            dim: 1,
            size_constant: 1.0,
            modulus: Modulus::lipschitz(),
            cancellation: Cancellation::Analytic,
            representation: Representation::Convolution,
        }
    }

    /// Odd kernel `sgn(u) m(|u|)/|u|` whose smoothness is only Dini of log-power type.
    pub fn odd_dini(beta: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(invalid("beta must be positive"));
        }
        Ok(Self {
            family: KernelFamily::OddDini { beta },
            dim: 1,
            size_constant: 1.5,
            modulus: Modulus::log_power(beta),
            cancellation: Cancellation::Analytic,
            representation: Representation::Convolution,
        })
    }

    /// `∇ρ(x)·(x - y)^⊥ / |x - y|³` in the plane.
    pub fn perp_gradient() -> Self {
        Self {
            family: KernelFamily::PerpGradient,
            dim: 2,
            size_constant: 1.0,
            modulus: Modulus::lipschitz(),
            cancellation: Cancellation::Analytic,
            representation: Representation::Separable,
        }
    }

    /// `|x - y|^{-1-iγ}`: size and smoothness hold, annulus cancellation fails.
    pub fn complex_power(gamma: f64) -> Self {
        Self {
            family: KernelFamily::ComplexPower { gamma },
            dim: 1,
            size_constant: 1.0,
            modulus: Modulus::lipschitz(),
            cancellation: Cancellation::Violated,
            representation: Representation::Convolution,
        }
    }

    pub fn zero(dim: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(invalid("dimension must be 1 or 2"));
        }
        Ok(Self {
            family: KernelFamily::Zero { dim },
            dim,
            size_constant: 0.0,
            modulus: Modulus::lipschitz(),
            cancellation: Cancellation::Analytic,
            representation: Representation::Convolution,
        })
    }

    /// Same kernel, evaluated by direct summation.
    pub fn with_general_path(mut self) -> Self {
        self.representation = Representation::General;
        self
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn id(&self) -> &'static str {
        match self.family {
            KernelFamily::Hilbert => "hilbert",
            KernelFamily::OddDini { .. } => "odd-dini",
            KernelFamily::PerpGradient => "perp-gradient",
            KernelFamily::ComplexPower { .. } => "complex-power",
            KernelFamily::Zero { .. } => "zero",
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn size_constant(&self) -> f64 {
        self.size_constant
    }

    pub fn modulus(&self) -> &Modulus {
        &self.modulus
    }

    pub fn cancellation(&self) -> Cancellation {
        self.cancellation
    }

    pub fn representation(&self) -> Representation {
        self.representation
    }

    /// Number of terms in `K(x, y) = Σ_i c_i(x) k_i(x - y)`.
    pub fn terms(&self) -> usize {
        match self.family {
            KernelFamily::PerpGradient => 2,
            _ => 1,
        }
    }

    /// `c_i(x)`.
    pub fn coefficient(&self, term: usize, x: &[f64]) -> C64 {
        match self.family {
            KernelFamily::PerpGradient => C64::new(rho_gradient(x)[term], 0.0),
            _ => C64::new(1.0, 0.0),
        }
    }

    /// `k_i(u)`.
    pub fn profile(&self, term: usize, u: &[f64]) -> C64 {
        match self.family {
            KernelFamily::Hilbert => C64::new(1.0 / u[0], 0.0),
            KernelFamily::OddDini { beta } => {
                let r = u[0].abs();
                C64::new(u[0].signum() * odd_dini_profile(beta, r) / r, 0.0)
            }
            KernelFamily::ComplexPower { gamma } => {
                let r = u[0].abs();
                C64::from_polar(1.0 / r, -gamma * r.ln())
            }
            KernelFamily::PerpGradient => {
                let r2 = u[0] * u[0] + u[1] * u[1];
                let r3 = r2 * r2.sqrt();
                // u^⊥ = (-u₂, u₁)
                let perp = if term == 0 { -u[1] } else { u[0] };
                C64::new(perp / r3, 0.0)
            }
            KernelFamily::Zero { .. } => C64::default(),
        }
    }

    /// `K(x, y)` for `x ≠ y`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> C64 {
        let mut u = [0.0; 2];
        for a in 0..self.dim {
            u[a] = x[a] - y[a];
        }
        (0..self.terms()).map(|i| self.coefficient(i, x) * self.profile(i, &u[..self.dim])).sum()
    }

    /// `K(x, y) χ_mask(|x - y|)`; covers `K_j` and `K^j` via [`RadialMask`].
    pub fn masked_eval(&self, x: &[f64], y: &[f64], mask: &RadialMask) -> C64 {
        if mask.contains(distance(x, y, self.dim)) {
            self.eval(x, y)
        } else {
            C64::default()
        }
    }

    /// `K_j = K χ_{2^j ≤ |x-y| < 2^{j+1}}`.
    pub fn piece_eval(&self, x: &[f64], y: &[f64], j: i32) -> C64 {
        self.masked_eval(x, y, &RadialMask::dyadic_piece(j))
    }

    /// `K^j = K χ_{|x-y| ≤ 2^{j+1}}`.
    pub fn local_eval(&self, x: &[f64], y: &[f64], j: i32) -> C64 {
        self.masked_eval(x, y, &RadialMask::local(j, 0.0))
    }
}

pub(crate) fn distance(x: &[f64], y: &[f64], dim: usize) -> f64 {
    (0..dim).map(|a| (x[a] - y[a]).powi(2)).sum::<f64>().sqrt()
}

/// Which variable the annulus integral runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    /// `∫ K(center, y) dy`.
    OverY,
    /// `∫ K(x, center) dx`.
    OverX,
}

/// Midpoint quadrature of `∫_{eps ≤ |x-y| ≤ outer} K` over the grid points lying in the annulus.
pub fn cancellation_residual(
    k: &Kernel,
    grid: &Grid,
    center: &[f64],
    eps: f64,
    outer: f64,
    orientation: Orientation,
) -> Result<C64> {
    let h = grid.spacing();
    if k.dim() != grid.dim() {
        return Err(Error::GridMismatch(format!("kernel dimension {} on a {}-d grid", k.dim(), grid.dim())));
    }
    if eps < 2.0 * h {
        return Err(Error::SingularCell { scale: eps, min: 2.0 * h });
    }
    if !(outer > eps) || outer > grid.half_width() / 2.0 {
        return Err(Error::OutOfRange(format!("annulus [{eps}, {outer}] must satisfy eps < outer <= L/2")));
    }
    let dim = k.dim();
    let last = grid.points() as i64 - 1;
    let span = |c: f64| {
        let lo = ((c - outer + grid.half_width()) / h).ceil().max(0.0) as i64;
        let hi = ((c + outer + grid.half_width()) / h).floor().min(last as f64) as i64;
        lo..=hi
    };
    let mut sum = C64::default();
    let mut visit = |idx: [i64; 2]| {
        let mut z = [0.0; 2];
        let mut r2 = 0.0;
        for a in 0..dim {
            z[a] = grid.axis_coord(idx[a] as usize);
            r2 += (z[a] - center[a]) * (z[a] - center[a]);
        }
        let r = r2.sqrt();
        if r < eps || r > outer {
            return;
        }
        sum += match orientation {
            Orientation::OverY => k.eval(center, &z),
            Orientation::OverX => k.eval(&z, center),
        };
    };
    for i0 in span(center[0]) {
        if dim == 1 {
            visit([i0, 0]);
        } else {
            for i1 in span(center[1]) {
                visit([i0, i1]);
            }
        }
    }
    Ok(sum * grid.cell_volume())
}

/// Closed form of the complex-power annulus integral, `2(N^{-iγ} - ε^{-iγ})/(-iγ)`.
pub fn complex_power_annulus(gamma: f64, eps: f64, outer: f64) -> C64 {
    let phase = |r: f64| C64::from_polar(1.0, -gamma * r.ln());
    (phase(outer) - phase(eps)) * 2.0 / C64::new(0.0, -gamma)
}

fn sample_pair(rng: &mut ChaCha8Rng, dim: usize, extent: f64) -> ([f64; 2], [f64; 2], f64) {
    let mut x = [0.0; 2];
    for xa in x.iter_mut().take(dim) {
        *xa = extent * (2.0 * rng.random::<f64>() - 1.0);
    }
    let r = extent * 10f64.powf(-3.0 * rng.random::<f64>());
    let dir = unit_vector(rng, dim);
    let y = [x[0] - r * dir[0], x[1] - r * dir[1]];
    (x, y, r)
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> [f64; 2] {
    if dim == 1 {
        [if rng.random::<bool>() { 1.0 } else { -1.0 }, 0.0]
    } else {
        let a = std::f64::consts::TAU * rng.random::<f64>();
        [a.cos(), a.sin()]
    }
}

/// Largest `|K(x, y)| |x - y|^n / C_K` over sampled pairs; `≤ 1` certifies the size bound.
pub fn size_bound_ratio(k: &Kernel, samples: usize, seed: u64, extent: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = k.dim() as i32;
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let (x, y, r) = sample_pair(&mut rng, k.dim(), extent);
        let v = k.eval(&x, &y).norm() * r.powi(n);
        if k.size_constant() > 0.0 {
            worst = worst.max(v / k.size_constant());
        } else if v > 0.0 {
            return f64::INFINITY;
        }
    }
    worst
}

/// Empirical smoothness constant against `modulus`:
/// `max (|K(x+h,y) - K(x,y)| + |K(x,y+h) - K(x,y)|) |x-y|^n / ω(|h|/|x-y|)` over samples with `2|h| ≤ |x-y|`.
pub fn smoothness_constant_probe(k: &Kernel, modulus: &Modulus, samples: usize, seed: u64, extent: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = k.dim();
    let n = dim as i32;
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let (x, y, r) = sample_pair(&mut rng, dim, extent);
        let step = 0.5 * r * 10f64.powf(-4.0 * rng.random::<f64>());
        let dir = unit_vector(&mut rng, dim);
        let xh = [x[0] + step * dir[0], x[1] + step * dir[1]];
        let yh = [y[0] + step * dir[0], y[1] + step * dir[1]];
        let base = k.eval(&x, &y);
        let delta = (k.eval(&xh, &y) - base).norm() + (k.eval(&x, &yh) - base).norm();
        let w = modulus.eval(step / r);
        if w > 0.0 {
            worst = worst.max(delta * r.powi(n) / w);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dini_closed_forms() {
        let v = dini_norm(&Modulus::power(0.5), 1.0).unwrap().value().unwrap();
        assert!((v - 2.0).abs() < 1e-6, "{v}");
        let v = dini_norm(&Modulus::lipschitz(), 0.5).unwrap().value().unwrap();
        assert!((v - 2.0).abs() < 1e-6, "{v}");
        let v = dini_norm(&Modulus::log_power(3.0), 1.0).unwrap().value().unwrap();
        assert!((v - 0.5).abs() < 1e-6, "{v}");
    }

    #[test]
    fn dini_divergence_and_domain() {
        assert_eq!(dini_norm(&Modulus::log_power(1.0), 1.0).unwrap(), DiniNorm::Divergent);
        assert_eq!(dini_norm(&Modulus::log_power(3.0), 0.25).unwrap(), DiniNorm::Divergent);
        assert!(dini_norm(&Modulus::lipschitz(), 0.0).is_err());
        assert!(dini_norm(&Modulus::lipschitz(), 1.5).is_err());
    }

    #[test]
    fn root_combinator_matches_root_exponent() {
        for m in [Modulus::log_power(3.0), Modulus::power(0.3), Modulus::lipschitz().with_power(0.5)] {
            let a = dini_norm(&m.clone().root(), 1.0).unwrap().value().unwrap();
            let b = dini_norm(&m, 0.5).unwrap().value().unwrap();
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn envelope_modulus_dominates_both_branches() {
        let w = Modulus::log_power(3.0);
        let w1 = w.clone().with_power(0.5);
        for k in 0..60 {
            let t = 2f64.powi(-k);
            assert!(w1.eval(t) >= w.eval(t).max(t.sqrt()));
        }
        assert!(w1.monotone_on_ladder(60));
    }

    #[test]
    fn subadditivity_spot_checks() {
        for m in [
            Modulus::power(0.5),
            Modulus::lipschitz(),
            Modulus::lipschitz().with_power(0.5),
            Modulus::power(0.5).compose(Modulus::power(0.5)),
            Modulus::lipschitz().root(),
        ] {
            assert!(m.subadditivity_defect(4.0, 20_000, 1) <= 1.0 + 1e-12, "{m:?}");
        }
        // log-power is concave, hence sub-additive, only below t = e^{-β}
        let lp = Modulus::log_power(3.0);
        assert!(lp.subadditivity_defect((-3f64).exp() / 2.0, 20_000, 2) <= 1.0 + 1e-12);
        assert!(lp.subadditivity_defect(1.0, 20_000, 2) > 1.0);
        assert!(lp.monotone_on_ladder(60));
    }

    #[test]
    fn fixture_values() {
        assert_eq!(Kernel::hilbert().eval(&[1.0], &[0.0]), C64::new(1.0, 0.0));
        let v = Kernel::complex_power(2.0).eval(&[2.0], &[0.0]);
        let want = C64::from_polar(0.5, -2.0 * 2f64.ln());
        assert!((v - want).norm() < 1e-15);
        assert!((v - C64::new(0.5 * (2.0 * 2f64.ln()).cos(), -0.5 * (2.0 * 2f64.ln()).sin())).norm() < 1e-15);
        assert!((v - C64::new(0.0943, -0.4911)).norm() < 5e-3);
        assert_eq!(Kernel::zero(2).unwrap().eval(&[0.3, 0.1], &[0.0, 0.0]), C64::default());
    }

    #[test]
    fn perp_gradient_flips_under_reflection() {
        // reflecting y through the line {x + sθ} flips the θ^⊥ component of x - y
        let k = Kernel::perp_gradient();
        let x = [0.4, -0.2];
        let theta = [0.6, 0.8];
        let perp = [-theta[1], theta[0]];
        let (a, b) = (0.7, 0.3);
        let y1 = [x[0] - a * theta[0] - b * perp[0], x[1] - a * theta[1] - b * perp[1]];
        let y2 = [x[0] - a * theta[0] + b * perp[0], x[1] - a * theta[1] + b * perp[1]];
        let g = rho_gradient(&x);
        let g_par = g[0] * theta[0] + g[1] * theta[1];
        let g_perp = g[0] * perp[0] + g[1] * perp[1];
        let r3 = (a * a + b * b).powf(1.5);
        // (x-y)^⊥ = a θ^⊥ ∓ b θ, so K = (a g_perp ∓ b g_par)/r³
        assert!((k.eval(&x, &y1).re - (a * g_perp - b * g_par) / r3).abs() < 1e-12);
        assert!((k.eval(&x, &y2).re - (a * g_perp + b * g_par) / r3).abs() < 1e-12);
    }

    #[test]
    fn size_bounds_hold_on_random_pairs() {
        for k in
            [Kernel::hilbert(), Kernel::odd_dini(3.0).unwrap(), Kernel::perp_gradient(), Kernel::complex_power(2.0)]
        {
            let r = size_bound_ratio(&k, 10_000, 3, 8.0);
            assert!(r <= 1.0 + 1e-12, "{} ratio {r}", k.id());
        }
        assert_eq!(size_bound_ratio(&Kernel::zero(1).unwrap(), 100, 3, 8.0), 0.0);
    }

    #[test]
    fn smoothness_probe_examples() {
        let k = Kernel::hilbert();
        let c = smoothness_constant_probe(&k, &Modulus::lipschitz(), 20_000, 9, 8.0);
        assert!(c > 0.0 && c <= 4.0, "{c}");
        let c2 = smoothness_constant_probe(&k, &Modulus::lipschitz().scaled(2.0), 20_000, 9, 8.0);
        assert!((c2 - c / 2.0).abs() <= 1e-12 * c);
        let z = Kernel::zero(1).unwrap();
        assert_eq!(smoothness_constant_probe(&z, &Modulus::lipschitz(), 1000, 9, 8.0), 0.0);
    }

    #[test]
    fn odd_dini_has_finite_log_power_constant() {
        let k = Kernel::odd_dini(3.0).unwrap();
        let a = smoothness_constant_probe(&k, k.modulus(), 20_000, 4, 8.0);
        let b = smoothness_constant_probe(&k, k.modulus(), 80_000, 5, 8.0);
        assert!(a.is_finite() && b.is_finite());
        assert!(b < 2.0 * a.max(1.0));
        // not Hölder: against t^{1/2} the constant keeps growing near dyadic radii
        let x = [1.0 + 1e-9];
        let y = [0.0];
        let base = k.eval(&x, &y);
        let h = 1e-12;
        let inc = (k.eval(&[x[0] + h], &y) - base).norm();
        assert!(inc / (h / x[0]).sqrt() > 10.0 * inc / Modulus::log_power(3.0).eval(h));
    }

    #[test]
    fn hilbert_residual_vanishes() {
        let g = Grid::new(1, 16.0, 4096).unwrap();
        for c in [0.0, 0.37, -2.5] {
            for o in [Orientation::OverX, Orientation::OverY] {
                let r = cancellation_residual(&Kernel::hilbert(), &g, &[c], 0.5, 3.0, o).unwrap();
                assert!(r.norm() <= 10.0 * g.spacing(), "{r}");
            }
        }
    }

    #[test]
    fn complex_power_residual_matches_closed_form() {
        let exact = complex_power_annulus(2.0, 1.0, 2.0);
        assert!((exact.norm() - 2.0 * (2f64.ln()).sin().abs()).abs() < 1e-12);
        assert!((exact.norm() - 1.278).abs() < 1e-3);
        let g = Grid::new(1, 16.0, 1 << 14).unwrap();
        let r = cancellation_residual(&Kernel::complex_power(2.0), &g, &[0.0], 1.0, 2.0, Orientation::OverY).unwrap();
        assert!((r.norm() - exact.norm()).abs() < 0.01 * exact.norm(), "{r} vs {exact}");
    }

    #[test]
    fn residual_preconditions() {
        let g = Grid::new(1, 16.0, 256).unwrap();
        let h = g.spacing();
        let k = Kernel::hilbert();
        assert!(matches!(
            cancellation_residual(&k, &g, &[0.0], h, 1.0, Orientation::OverY),
            Err(Error::SingularCell { .. })
        ));
        assert!(cancellation_residual(&k, &g, &[0.0], 1.0, 9.0, Orientation::OverY).is_err());
        let g2 = Grid::new(2, 8.0, 64).unwrap();
        assert!(cancellation_residual(&k, &g2, &[0.0, 0.0], 1.0, 2.0, Orientation::OverY).is_err());
    }

    #[test]
    fn mask_conventions() {
        let m = RadialMask::dyadic_piece(0);
        assert!(m.contains(1.0) && !m.contains(2.0));
        let t = RadialMask::truncation(1.0);
        assert!(!t.contains(1.0) && t.contains(1.0 + 1e-12));
        let b = RadialMask::block(0, 1.0);
        assert!(!b.contains(1.0) && b.contains(2.0));
        assert!(!RadialMask::block(0, 2.0).contains(2.0));
    }
}
