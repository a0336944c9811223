//! Operator families acting on sampled functions.
//!
//! Every operator is matrix-free: convolution kernels become a single FFT
//! multiplier, separable kernels one multiplier per term, and anything else is
//! summed directly. Masks test cell centres only.

use std::f64::consts::LN_10;

use crate::error::{invalid, Error, Result};
use crate::grid::{Convolver, Grid, SampledFunction, Spectrum};
use crate::kernels::{Kernel, RadialMask, Representation};
use crate::C64;
use rustfft::FftPlanner;

/// A linear map on functions sampled on one grid, together with its adjoint.
pub trait LinearOperator: Send + Sync {
    fn grid(&self) -> &Grid;
    fn label(&self) -> String;
    fn apply(&self, f: &SampledFunction) -> Result<SampledFunction>;
    fn apply_adjoint(&self, g: &SampledFunction) -> Result<SampledFunction>;

    /// Present when the operator is a single convolution, so compositions can be fused.
    fn as_multiplier(&self) -> Option<&Multiplier> {
        None
    }
}

pub type BoxedOperator = Box<dyn LinearOperator>;

fn check_grid(op_grid: &Grid, f: &SampledFunction) -> Result<()> {
    op_grid.ensure_same(f.grid())
}

#[derive(Debug, Clone)]
pub struct Identity {
    grid: Grid,
}

impl Identity {
    pub fn new(grid: Grid) -> Self {
        Self { grid }
    }
}

impl LinearOperator for Identity {
    fn grid(&self) -> &Grid {
        &self.grid
    }

    fn label(&self) -> String {
        "I".into()
    }

    fn apply(&self, f: &SampledFunction) -> Result<SampledFunction> {
        check_grid(&self.grid, f)?;
        Ok(f.clone())
    }

    fn apply_adjoint(&self, g: &SampledFunction) -> Result<SampledFunction> {
        self.apply(g)
    }
}

/// `f ↦ h^n Σ_y k(x - y) f(y)` via a precomputed spectrum.
#[derive(Debug, Clone)]
pub struct Multiplier {
    conv: Convolver,
    spectrum: Spectrum,
    adjoint: Spectrum,
    label: String,
}

impl Multiplier {
    pub fn new(conv: Convolver, spectrum: Spectrum, label: impl Into<String>) -> Self {
        let adjoint = spectrum.conjugate();
        Self { conv, spectrum, adjoint, label: label.into() }
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    pub fn convolver(&self) -> &Convolver {
        &self.conv
    }
}

impl LinearOperator for Multiplier {
    fn grid(&self) -> &Grid {
        self.conv.grid()
    }

    fn label(&self) -> String {
        self.label.clone()
    }

    fn apply(&self, f: &SampledFunction) -> Result<SampledFunction> {
        check_grid(self.conv.grid(), f)?;
        Ok(self.conv.apply(f, &self.spectrum))
    }

    fn apply_adjoint(&self, g: &SampledFunction) -> Result<SampledFunction> {
        check_grid(self.conv.grid(), g)?;
        Ok(self.conv.apply(g, &self.adjoint))
    }

    fn as_multiplier(&self) -> Option<&Multiplier> {
        Some(self)
    }
}

/// `Σ_i c_i(x) (k_i ∗ f)(x)` with each `k_i` masked.
#[derive(Debug, Clone)]
pub struct SeparableOperator {
    conv: Convolver,
    terms: Vec<(Vec<C64>, Spectrum, Spectrum)>,
    label: String,
}

impl LinearOperator for SeparableOperator {
    fn grid(&self) -> &Grid {
        self.conv.grid()
    }

    fn label(&self) -> String {
        self.label.clone()
    }

    fn apply(&self, f: &SampledFunction) -> Result<SampledFunction> {
        check_grid(self.conv.grid(), f)?;
        let f_hat = self.conv.function_spectrum(f);
        let mut out = vec![C64::default(); f.values().len()];
        for (coef, spec, _) in &self.terms {
            let part = self.conv.apply_to_spectrum(&f_hat, spec);
            for ((o, c), p) in out.iter_mut().zip(coef).zip(part) {
                *o += c * p;
            }
        }
        SampledFunction::new(*f.grid(), out)
    }

    fn apply_adjoint(&self, g: &SampledFunction) -> Result<SampledFunction> {
        check_grid(self.conv.grid(), g)?;
        let mut out = vec![C64::default(); g.values().len()];
        for (coef, _, adj) in &self.terms {
            let weighted: Vec<C64> = g.values().iter().zip(coef).map(|(v, c)| v * c.conj()).collect();
            let part = self.conv.apply(&SampledFunction::from_parts(*g.grid(), weighted), adj);
            for (o, p) in out.iter_mut().zip(part.values()) {
                *o += p;
            }
        }
        SampledFunction::new(*g.grid(), out)
    }
}

/// Direct `O(N²)` quadrature `h^n Σ_{y ∈ mask(x)} K(x, y) f(y)`.
#[derive(Debug, Clone)]
pub struct DirectOperator {
    kernel: Kernel,
    grid: Grid,
    mask: RadialMask,
}

impl DirectOperator {
    fn offset(&self, a: usize, b: usize) -> ([f64; 2], f64) {
        let g = &self.grid;
        let (ia, ib) = (g.multi_index(a), g.multi_index(b));
        let h = g.spacing();
        let mut u = [0.0; 2];
        let mut r2 = 0i64;
        for ax in 0..g.dim() {
            let d = ia[ax] as i64 - ib[ax] as i64;
            u[ax] = d as f64 * h;
            r2 += d * d;
        }
        (u, h * (r2 as f64).sqrt())
    }

    /// `K(x, y)` from the integer offset, so masks agree with the FFT path bit for bit.
    fn entry(&self, x: usize, y: usize) -> C64 {
        let (u, r) = self.offset(x, y);
        if !self.mask.contains(r) {
            return C64::default();
        }
        let xp = self.grid.point(x);
        let dim = self.grid.dim();
        (0..self.kernel.terms())
            .map(|i| self.kernel.coefficient(i, &xp[..dim]) * self.kernel.profile(i, &u[..dim]))
            .sum()
    }
}

impl LinearOperator for DirectOperator {
    fn grid(&self) -> &Grid {
        &self.grid
    }

    fn label(&self) -> String {
        format!("direct[{}]", self.kernel.id())
    }

    fn apply(&self, f: &SampledFunction) -> Result<SampledFunction> {
        check_grid(&self.grid, f)?;
        let w = self.grid.cell_volume();
        let fv = f.values();
        let out = (0..fv.len())
            .map(|x| {
                fv.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != C64::default())
                    .map(|(y, v)| self.entry(x, y) * v)
                    .sum::<C64>()
                    * w
            })
            .collect();
        SampledFunction::new(self.grid, out)
    }

    fn apply_adjoint(&self, g: &SampledFunction) -> Result<SampledFunction> {
        check_grid(&self.grid, g)?;
        let w = self.grid.cell_volume();
        let gv = g.values();
        let out = (0..gv.len())
            .map(|y| {
                gv.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != C64::default())
                    .map(|(x, v)| self.entry(x, y).conj() * v)
                    .sum::<C64>()
                    * w
            })
            .collect();
        SampledFunction::new(self.grid, out)
    }
}

/// `outer ∘ inner`.
pub struct Composition {
    outer: BoxedOperator,
    inner: BoxedOperator,
}

impl LinearOperator for Composition {
    fn grid(&self) -> &Grid {
        self.inner.grid()
    }

    fn label(&self) -> String {
        format!("{}·{}", self.outer.label(), self.inner.label())
    }

    fn apply(&self, f: &SampledFunction) -> Result<SampledFunction> {
        self.outer.apply(&self.inner.apply(f)?)
    }

    fn apply_adjoint(&self, g: &SampledFunction) -> Result<SampledFunction> {
        self.inner.apply_adjoint(&self.outer.apply_adjoint(g)?)
    }
}

/// `a - b`.
pub struct Difference {
    a: BoxedOperator,
    b: BoxedOperator,
}

impl LinearOperator for Difference {
    fn grid(&self) -> &Grid {
        self.a.grid()
    }

    fn label(&self) -> String {
        format!("({} - {})", self.a.label(), self.b.label())
    }

    fn apply(&self, f: &SampledFunction) -> Result<SampledFunction> {
        Ok(self.a.apply(f)?.sub(&self.b.apply(f)?))
    }

    fn apply_adjoint(&self, g: &SampledFunction) -> Result<SampledFunction> {
        Ok(self.a.apply_adjoint(g)?.sub(&self.b.apply_adjoint(g)?))
    }
}

pub struct Scaled {
    inner: BoxedOperator,
    factor: C64,
}

impl LinearOperator for Scaled {
    fn grid(&self) -> &Grid {
        self.inner.grid()
    }

    fn label(&self) -> String {
        format!("{}·{}", self.factor, self.inner.label())
    }

    fn apply(&self, f: &SampledFunction) -> Result<SampledFunction> {
        Ok(self.inner.apply(f)?.scaled(self.factor))
    }

    fn apply_adjoint(&self, g: &SampledFunction) -> Result<SampledFunction> {
        Ok(self.inner.apply_adjoint(g)?.scaled(self.factor.conj()))
    }
}

/// `P A P` with `P` the restriction to the middle half of the box.
///
/// For inputs and outputs confined there, every mask and convolution used by
/// the operator families sees the same samples it would on the whole line.
pub struct MiddleHalf {
    inner: BoxedOperator,
    keep: Vec<bool>,
}

impl MiddleHalf {
    pub fn new(inner: BoxedOperator) -> Self {
        let g = *inner.grid();
        let keep = (0..g.len()).map(|p| g.in_middle_half(&g.point(p))).collect();
        Self { inner, keep }
    }

    fn project(&self, f: &SampledFunction) -> SampledFunction {
        let values = f.values().iter().zip(&self.keep).map(|(v, &k)| if k { *v } else { C64::default() }).collect();
        SampledFunction::from_parts(*f.grid(), values)
    }
}

impl LinearOperator for MiddleHalf {
    fn grid(&self) -> &Grid {
        self.inner.grid()
    }

    fn label(&self) -> String {
        format!("P{}P", self.inner.label())
    }

    fn apply(&self, f: &SampledFunction) -> Result<SampledFunction> {
        Ok(self.project(&self.inner.apply(&self.project(f))?))
    }

    fn apply_adjoint(&self, g: &SampledFunction) -> Result<SampledFunction> {
        Ok(self.project(&self.inner.apply_adjoint(&self.project(g))?))
    }
}

/// `outer ∘ inner`. The intermediate is restricted to the grid, so compositions are never fused.
pub fn compose(outer: BoxedOperator, inner: BoxedOperator) -> Result<BoxedOperator> {
    outer.grid().ensure_same(inner.grid())?;
    Ok(Box::new(Composition { outer, inner }))
}

/// `a - b`, fused when both are convolutions.
pub fn difference(a: BoxedOperator, b: BoxedOperator) -> Result<BoxedOperator> {
    a.grid().ensure_same(b.grid())?;
    if let (Some(x), Some(y)) = (a.as_multiplier(), b.as_multiplier()) {
        let label = format!("({} - {})", x.label, y.label);
        return Ok(Box::new(Multiplier::new(x.conv.clone(), x.spectrum.difference(&y.spectrum), label)));
    }
    Ok(Box::new(Difference { a, b }))
}

pub fn scaled(inner: BoxedOperator, factor: C64) -> BoxedOperator {
    if let Some(m) = inner.as_multiplier() {
        let label = format!("{}·{}", factor, m.label);
        return Box::new(Multiplier::new(m.conv.clone(), m.spectrum.scaled(factor), label));
    }
    Box::new(Scaled { inner, factor })
}

fn lattice_radius(grid: &Grid, o: [i64; 2]) -> f64 {
    let r2 = if grid.dim() == 1 { o[0] * o[0] } else { o[0] * o[0] + o[1] * o[1] };
    grid.spacing() * (r2 as f64).sqrt()
}

/// The kernel restricted to `mask`, on the path its representation allows.
pub fn kernel_operator(k: &Kernel, grid: &Grid, mask: RadialMask, label: &str) -> Result<BoxedOperator> {
    if k.dim() != grid.dim() {
        return Err(Error::GridMismatch(format!("{}-d kernel on a {}-d grid", k.dim(), grid.dim())));
    }
    let min = 2.0 * grid.spacing();
    let inner = mask.inner_radius();
    if inner < min {
        return Err(Error::SingularCell { scale: inner, min });
    }
    let h = grid.spacing();
    let dim = grid.dim();
    let label = format!("{label}[{}]", k.id());
    match k.representation() {
        Representation::General => Ok(Box::new(DirectOperator { kernel: k.clone(), grid: *grid, mask })),
        Representation::Convolution => {
            let conv = Convolver::new(*grid);
            let spec = masked_spectrum(&conv, k, 0, &mask, h, dim);
            Ok(Box::new(Multiplier::new(conv, spec, label)))
        }
        Representation::Separable => {
            let conv = Convolver::new(*grid);
            let terms = (0..k.terms())
                .map(|i| {
                    let coef = (0..grid.len()).map(|p| k.coefficient(i, &grid.point(p)[..dim])).collect();
                    let spec = masked_spectrum(&conv, k, i, &mask, h, dim);
                    let adj = spec.conjugate();
                    (coef, spec, adj)
                })
                .collect();
            Ok(Box::new(SeparableOperator { conv, terms, label }))
        }
    }
}

fn masked_spectrum(conv: &Convolver, k: &Kernel, term: usize, mask: &RadialMask, h: f64, dim: usize) -> Spectrum {
    let grid = *conv.grid();
    conv.offset_spectrum(|o| {
        let r = lattice_radius(&grid, o);
        if mask.contains(r) {
            let u = [o[0] as f64 * h, o[1] as f64 * h];
            k.profile(term, &u[..dim])
        } else {
            C64::default()
        }
    })
}

fn ensure_confined(f: &SampledFunction) -> Result<()> {
    if f.supported_in_middle_half() {
        Ok(())
    } else {
        Err(invalid("input must be supported in the middle half of the domain"))
    }
}

fn check_truncation(grid: &Grid, eps: f64) -> Result<()> {
    let min = 2.0 * grid.spacing();
    if !(eps >= min) {
        return Err(Error::SingularCell { scale: eps, min });
    }
    Ok(())
}

/// Requires `2^j ≥ 2h` and `2^{j+1} ≤ L/2`.
pub fn check_dyadic_scale(grid: &Grid, j: i32) -> Result<()> {
    let a = 2f64.powi(j);
    if a < 2.0 * grid.spacing() || 2.0 * a > grid.half_width() / 2.0 {
        return Err(Error::OutOfRange(format!(
            "dyadic scale 2^{j} outside [2h, L/4] for h = {}, L = {}",
            grid.spacing(),
            grid.half_width()
        )));
    }
    Ok(())
}

fn check_outer_scale(grid: &Grid, j: i32) -> Result<()> {
    if 2f64.powi(j + 1) < 2.0 * grid.spacing() {
        return Err(Error::OutOfRange(format!("2^{} is below the resolved cutoff 2h", j + 1)));
    }
    Ok(())
}

/// `T_ε`.
pub fn truncated_operator(k: &Kernel, grid: &Grid, eps: f64) -> Result<BoxedOperator> {
    check_truncation(grid, eps)?;
    kernel_operator(k, grid, RadialMask::truncation(eps), &format!("T_{eps}"))
}

/// `σ_j`.
pub fn dyadic_piece_operator(k: &Kernel, grid: &Grid, j: i32) -> Result<BoxedOperator> {
    check_dyadic_scale(grid, j)?;
    kernel_operator(k, grid, RadialMask::dyadic_piece(j), &format!("sigma_{j}"))
}

/// `T_j`, integrating over `|x - y| > 2^{j+1}`.
pub fn tail_operator(k: &Kernel, grid: &Grid, j: i32) -> Result<BoxedOperator> {
    check_outer_scale(grid, j)?;
    kernel_operator(k, grid, RadialMask::tail(j), &format!("T_{j}"))
}

/// `T^j`, integrating over `2h ≤ |x - y| ≤ 2^{j+1}`.
pub fn local_operator(k: &Kernel, grid: &Grid, j: i32) -> Result<BoxedOperator> {
    check_outer_scale(grid, j)?;
    kernel_operator(k, grid, RadialMask::local(j, 2.0 * grid.spacing()), &format!("T^{j}"))
}

/// The finest resolved operator, `|x - y| ≥ 2h`; equals `T_j + T^j` for every `j`.
pub fn resolved_operator(k: &Kernel, grid: &Grid) -> Result<BoxedOperator> {
    kernel_operator(k, grid, RadialMask::resolved(2.0 * grid.spacing()), "T_2h")
}

/// `T_{j,t}`, integrating over `2^j t < |x - y| ≤ 2^{j+1}`.
pub fn block_operator(k: &Kernel, grid: &Grid, j: i32, t: f64) -> Result<BoxedOperator> {
    if !(1.0..=2.0).contains(&t) {
        return Err(invalid(format!("block parameter t = {t} outside [1, 2]")));
    }
    check_dyadic_scale(grid, j)?;
    kernel_operator(k, grid, RadialMask::block(j, t), &format!("T_{j},{t}"))
}

pub fn truncated_apply(k: &Kernel, f: &SampledFunction, eps: f64) -> Result<SampledFunction> {
    ensure_confined(f)?;
    truncated_operator(k, f.grid(), eps)?.apply(f)
}

pub fn dyadic_piece_apply(k: &Kernel, f: &SampledFunction, j: i32) -> Result<SampledFunction> {
    ensure_confined(f)?;
    dyadic_piece_operator(k, f.grid(), j)?.apply(f)
}

pub fn tail_apply(k: &Kernel, f: &SampledFunction, j: i32) -> Result<SampledFunction> {
    ensure_confined(f)?;
    tail_operator(k, f.grid(), j)?.apply(f)
}

pub fn local_apply(k: &Kernel, f: &SampledFunction, j: i32) -> Result<SampledFunction> {
    ensure_confined(f)?;
    local_operator(k, f.grid(), j)?.apply(f)
}

pub fn block_apply(k: &Kernel, f: &SampledFunction, j: i32, t: f64) -> Result<SampledFunction> {
    ensure_confined(f)?;
    block_operator(k, f.grid(), j, t)?.apply(f)
}

/// `T_ε f(x)` at one grid point by direct summation, for any representation.
pub fn truncated_eval_at(k: &Kernel, f: &SampledFunction, eps: f64, point: usize) -> Result<C64> {
    let grid = *f.grid();
    check_truncation(&grid, eps)?;
    if point >= grid.len() {
        return Err(Error::OutOfRange(format!("point index {point} outside the grid")));
    }
    let op = DirectOperator { kernel: k.clone(), grid, mask: RadialMask::truncation(eps) };
    Ok(f.values()
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != C64::default())
        .map(|(y, v)| op.entry(point, y) * v)
        .sum::<C64>()
        * grid.cell_volume())
}

/// `exp(-1/(1 - r²))` on `r < 1`.
pub fn bump(r: f64) -> f64 {
    if r < 1.0 {
        (-1.0 / (1.0 - r * r)).exp()
    } else {
        0.0
    }
}

/// Radial samples on the lattice `{o h : |o h| < radius}` for offset `o ∈ [-G, G)^n`.
fn fill_offsets(conv: &Convolver, buf: &mut [C64], radius: f64, mut value: impl FnMut([i64; 2], f64) -> C64) {
    let grid = conv.grid();
    let n = conv.padded() as i64;
    let reach = ((radius / grid.spacing()).ceil() as i64).min(grid.points() as i64 - 1);
    let wrap = |o: i64| o.rem_euclid(n) as usize;
    if grid.dim() == 1 {
        for o in -reach..=reach {
            buf[wrap(o)] = value([o, 0], lattice_radius(grid, [o, 0]));
        }
    } else {
        for o0 in -reach..=reach {
            for o1 in -reach..=reach {
                let r = lattice_radius(grid, [o0, o1]);
                buf[wrap(o0) * n as usize + wrap(o1)] = value([o0, o1], r);
            }
        }
    }
}

fn lattice_sum(grid: &Grid, radius: f64, f: impl Fn(f64) -> f64) -> f64 {
    let reach = (radius / grid.spacing()).ceil() as i64;
    let mut acc = 0.0;
    if grid.dim() == 1 {
        for o in -reach..=reach {
            acc += f(lattice_radius(grid, [o, 0]));
        }
    } else {
        for o0 in -reach..=reach {
            for o1 in -reach..=reach {
                acc += f(lattice_radius(grid, [o0, o1]));
            }
        }
    }
    acc
}

/// `∫ ψ₀(x) e^{-i x·ξ} dx` along one axis, `ψ₀` radial, via its projection onto that axis.
#[derive(Debug, Clone)]
struct RadialTransform {
    nodes: usize,
    projection: Vec<f64>,
}

impl RadialTransform {
    fn new(dim: usize, nodes: usize, profile: impl Fn(f64) -> f64) -> Self {
        let dx = 1.0 / nodes as f64;
        let projection = (0..=nodes)
            .map(|k| {
                let x = k as f64 * dx;
                if dim == 1 {
                    profile(x)
                } else {
                    // ∫ ψ₀(√(x² + y²)) dy, trapezoid on the smooth compactly supported integrand
                    let mut acc = profile(x);
                    for m in 1..=nodes {
                        acc += 2.0 * profile((x * x + (m as f64 * dx).powi(2)).sqrt());
                    }
                    acc * dx
                }
            })
            .collect();
        Self { nodes, projection }
    }

    fn eval(&self, xi: f64) -> f64 {
        let dx = 1.0 / self.nodes as f64;
        let mut acc = 0.5 * self.projection[0];
        for (k, p) in self.projection.iter().enumerate().skip(1) {
            acc += p * (xi * k as f64 * dx).cos();
        }
        2.0 * acc * dx
    }
}

/// `ψ₀(r) = b(r) - 2^n b(2r)`.
fn lp_base_profile(dim: usize, r: f64) -> f64 {
    bump(r) - 2f64.powi(dim as i32) * bump(2.0 * r)
}

/// Littlewood–Paley family `Q_s f = ψ_s ∗ f`, `ψ = ψ₀/√c` normalised for the Calderón identity.
#[derive(Debug, Clone)]
pub struct LpFamily {
    conv: Convolver,
    normalization: f64,
    transform: RadialTransform,
}

/// `∫_0^∞ ψ̂₀(u)² du/u`, trapezoid in `ln u` over `[1e-3, 1e3]`.
fn calderon_constant(t: &RadialTransform) -> f64 {
    let per_decade = 100;
    let steps = 6 * per_decade;
    let du = LN_10 / per_decade as f64;
    (0..=steps)
        .map(|k| {
            let u = 1e-3 * (k as f64 * du).exp();
            let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
            w * t.eval(u).powi(2)
        })
        .sum::<f64>()
        * du
}

pub fn build_lp_family(grid: &Grid) -> LpFamily {
    let dim = grid.dim();
    let nodes = if dim == 1 { 4096 } else { 1024 };
    let transform = RadialTransform::new(dim, nodes, |r| lp_base_profile(dim, r));
    let normalization = calderon_constant(&transform);
    LpFamily { conv: Convolver::new(*grid), normalization, transform }
}

impl LpFamily {
    pub fn grid(&self) -> &Grid {
        self.conv.grid()
    }

    /// The constant `c`.
    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    /// `[4h, L/2]`.
    pub fn admissible_range(&self) -> (f64, f64) {
        let g = self.conv.grid();
        (4.0 * g.spacing(), g.half_width() / 2.0)
    }

    fn check_scale(&self, s: f64) -> Result<()> {
        let (lo, hi) = self.admissible_range();
        if !(s >= lo * (1.0 - 1e-12) && s <= hi * (1.0 + 1e-12)) {
            return Err(Error::OutOfRange(format!("scale s = {s} outside [{lo}, {hi}]")));
        }
        Ok(())
    }

    /// Continuous `ψ̂(ξ)` of the normalised profile.
    pub fn fourier_profile(&self, xi: f64) -> f64 {
        self.transform.eval(xi) / self.normalization.sqrt()
    }

    /// Lattice samples of `ψ_s`, by offset, with the second bump rescaled so the discrete mean is zero.
    fn sampler(&self, s: f64) -> impl Fn(f64) -> f64 {
        let grid = *self.conv.grid();
        let dim = grid.dim() as i32;
        let two_n = 2f64.powi(dim);
        let a = lattice_sum(&grid, s, |r| bump(r / s)) / lattice_sum(&grid, s, |r| two_n * bump(2.0 * r / s));
        let scale = s.powi(-dim) / self.normalization.sqrt();
        move |r: f64| scale * (bump(r / s) - a * two_n * bump(2.0 * r / s))
    }

    /// `ψ_s` sampled on the grid, centred at the origin index.
    pub fn kernel_samples(&self, s: f64) -> Result<SampledFunction> {
        self.check_scale(s)?;
        let grid = *self.conv.grid();
        let psi = self.sampler(s);
        let o = grid.origin_index() as i64;
        let values = (0..grid.len())
            .map(|p| {
                let idx = grid.multi_index(p);
                let off = [idx[0] as i64 - o, if grid.dim() == 2 { idx[1] as i64 - o } else { 0 }];
                C64::new(psi(lattice_radius(&grid, off)), 0.0)
            })
            .collect();
        Ok(SampledFunction::from_parts(grid, values))
    }

    pub fn spectrum(&self, s: f64) -> Result<Spectrum> {
        self.check_scale(s)?;
        let psi = self.sampler(s);
        let mut buf = vec![C64::default(); self.padded_len()];
        fill_offsets(&self.conv, &mut buf, s, |_, r| C64::new(psi(r), 0.0));
        self.conv.forward_in_place(&mut buf);
        Ok(Spectrum::from_parts(*self.conv.grid(), buf))
    }

    fn padded_len(&self) -> usize {
        self.conv.padded().pow(self.conv.grid().dim() as u32)
    }

    pub fn operator(&self, s: f64) -> Result<Multiplier> {
        Ok(Multiplier::new(self.conv.clone(), self.spectrum(s)?, format!("Q_{s}")))
    }

    pub fn apply(&self, f: &SampledFunction, s: f64) -> Result<SampledFunction> {
        self.conv.grid().ensure_same(f.grid())?;
        Ok(self.conv.apply(f, &self.spectrum(s)?))
    }

    /// Log-spaced nodes from `4h` upward, `per_decade` per decade, not exceeding `L/2`.
    pub fn scale_nodes(&self, per_decade: usize) -> Vec<f64> {
        let (lo, hi) = self.admissible_range();
        let count = (per_decade as f64 * (hi / lo).log10() + 1e-9).floor() as usize;
        (0..=count).map(|k| lo * 10f64.powf(k as f64 / per_decade as f64)).collect()
    }

    /// `∫ Q_s Q_s f ds/s` over the admissible range, trapezoid in `ln s`.
    ///
    /// Accumulates `Σ_k w_k ψ̂_{s_k}²` in frequency, transforming two real even
    /// profiles per FFT. For `f` in the middle half this equals summing
    /// `w_k Q_{s_k} Q_{s_k} f` exactly.
    pub fn calderon_reconstruct(&self, f: &SampledFunction, per_decade: usize) -> Result<SampledFunction> {
        self.conv.grid().ensure_same(f.grid())?;
        if per_decade == 0 {
            return Err(invalid("need at least one node per decade"));
        }
        let nodes = self.scale_nodes(per_decade);
        let step = LN_10 / per_decade as f64;
        let last = nodes.len() - 1;
        let weight = |k: usize| {
            if k == 0 || k == last {
                0.5 * step
            } else {
                step
            }
        };
        let grid = *self.conv.grid();
        let w2 = grid.cell_volume().powi(2);
        let mut acc = vec![0.0f64; self.padded_len()];
        let mut buf = vec![C64::default(); self.padded_len()];
        let mut short = ShortSpectra::new(self.conv.padded());
        for first in (0..nodes.len()).step_by(2) {
            let pa = self.sampler(nodes[first]);
            let wa = weight(first);
            let (wb, radius) = match nodes.get(first + 1) {
                Some(&sb) => (weight(first + 1), sb),
                None => (0.0, nodes[first]),
            };
            let pb = self.sampler(radius);
            // nodes increase, so ψ_a vanishes wherever only ψ_b is filled
            let pair = |r: f64| C64::new(pa(r), if wb > 0.0 { pb(r) } else { 0.0 });
            let mut add = |k: usize, z: C64| acc[k] += w2 * (wa * z.re * z.re + wb * z.im * z.im);
            let reach = ((radius / grid.spacing()).ceil() as usize).min(grid.points() - 1);
            if grid.dim() == 1 && short.applies(reach) {
                let half: Vec<C64> = (0..=reach).map(|o| pair(o as f64 * grid.spacing())).collect();
                short.even_spectrum(&half, &mut add);
                continue;
            }
            buf.iter_mut().for_each(|v| *v = C64::default());
            fill_offsets(&self.conv, &mut buf, radius, |_, r| pair(r));
            self.conv.forward_in_place(&mut buf);
            for (k, &z) in buf.iter().enumerate() {
                add(k, z);
            }
        }
        let mut spec = self.conv.function_spectrum(f);
        for (v, m) in spec.iter_mut().zip(&acc) {
            *v *= *m;
        }
        SampledFunction::new(*f.grid(), self.conv.synthesize(spec))
    }
}

/// Length-`n` DFTs of short even sequences, assembled from FFTs of the support length.
///
/// With `n = R·M` and the sequence supported in `|o| < M/2`, the bins `mR + r` are the
/// `M`-point FFT of `x_o e^{-2πi r o/n}`. Even input has spectrum symmetric under
/// `k ↦ n - k`, so residues `r > R/2` are mirrored rather than computed.
struct ShortSpectra {
    n: usize,
    planner: FftPlanner<f64>,
    coarse: Vec<C64>,
    fine: Vec<C64>,
}

const TWIDDLE_SPLIT: usize = 2048;

impl ShortSpectra {
    fn new(n: usize) -> Self {
        let coarse_len = n.div_ceil(TWIDDLE_SPLIT);
        let angle = |j: usize| -std::f64::consts::TAU * j as f64 / n as f64;
        Self {
            n,
            planner: FftPlanner::new(),
            coarse: (0..coarse_len).map(|c| C64::from_polar(1.0, angle(c * TWIDDLE_SPLIT))).collect(),
            fine: (0..TWIDDLE_SPLIT).map(|j| C64::from_polar(1.0, angle(j))).collect(),
        }
    }

    fn support(reach: usize) -> usize {
        (2 * reach + 1).next_power_of_two()
    }

    fn applies(&self, reach: usize) -> bool {
        self.n.is_power_of_two() && 4 * Self::support(reach) <= self.n
    }

    /// `e^{-2πi j/n}`.
    fn twiddle(&self, j: usize) -> C64 {
        let j = j % self.n;
        self.coarse[j / TWIDDLE_SPLIT] * self.fine[j % TWIDDLE_SPLIT]
    }

    /// Calls `emit(k, X_k)` once for every bin of the DFT of the even sequence with `x_o = half[|o|]`.
    fn even_spectrum(&mut self, half: &[C64], mut emit: impl FnMut(usize, C64)) {
        let reach = half.len() - 1;
        let m = Self::support(reach);
        let r_count = self.n / m;
        let fft = self.planner.plan_fft_forward(m);
        let mut b = vec![C64::default(); m];
        for r in 0..=r_count / 2 {
            b.iter_mut().for_each(|v| *v = C64::default());
            b[0] = half[0];
            for (o, &x) in half.iter().enumerate().skip(1) {
                let t = self.twiddle(r * o);
                b[o] = x * t;
                b[m - o] = x * t.conj();
            }
            fft.process(&mut b);
            let mirrored = r != 0 && 2 * r != r_count;
            for (mi, &z) in b.iter().enumerate() {
                let k = mi * r_count + r;
                emit(k, z);
                if mirrored {
                    emit(self.n - k, z);
                }
            }
        }
    }
}

/// Dyadic mollifiers `φ_j(x) = 2^{-jn} φ(2^{-j} x)`, `φ ∝ b(2|x|)` supported in `B(0, 1/2)`.
#[derive(Debug, Clone)]
pub struct MollifierFamily {
    conv: Convolver,
}

pub fn build_mollifier_family(grid: &Grid) -> MollifierFamily {
    MollifierFamily { conv: Convolver::new(*grid) }
}

impl MollifierFamily {
    pub fn grid(&self) -> &Grid {
        self.conv.grid()
    }

    /// Requires `2^{j-1} ≥ 2h` and `2^{j-1} ≤ L/2`.
    pub fn check_scale(&self, j: i32) -> Result<()> {
        let g = self.conv.grid();
        let radius = 2f64.powi(j - 1);
        if radius < 2.0 * g.spacing() || radius > g.half_width() / 2.0 {
            return Err(Error::OutOfRange(format!("mollifier scale 2^{j} unresolved")));
        }
        Ok(())
    }

    /// Smallest resolved `j`.
    pub fn finest_scale(&self) -> i32 {
        (4.0 * self.conv.grid().spacing()).log2().ceil() as i32
    }

    pub fn spectrum(&self, j: i32) -> Result<Spectrum> {
        self.check_scale(j)?;
        let grid = *self.conv.grid();
        let scale = 2f64.powi(j);
        let profile = |r: f64| bump(2.0 * r / scale);
        let mass = lattice_sum(&grid, scale / 2.0, profile) * grid.cell_volume();
        let mut buf = vec![C64::default(); self.conv.padded().pow(grid.dim() as u32)];
        fill_offsets(&self.conv, &mut buf, scale / 2.0, |_, r| C64::new(profile(r) / mass, 0.0));
        self.conv.forward_in_place(&mut buf);
        Ok(Spectrum::from_parts(grid, buf))
    }

    pub fn operator(&self, j: i32) -> Result<Multiplier> {
        Ok(Multiplier::new(self.conv.clone(), self.spectrum(j)?, format!("phi_{j}")))
    }

    pub fn apply(&self, f: &SampledFunction, j: i32) -> Result<SampledFunction> {
        self.conv.grid().ensure_same(f.grid())?;
        Ok(self.conv.apply(f, &self.spectrum(j)?))
    }
}

pub fn mollifier_apply(mf: &MollifierFamily, f: &SampledFunction, j: i32) -> Result<SampledFunction> {
    mf.apply(f, j)
}

/// `A_j = φ_j ∗ T^j`.
pub fn a_operator(k: &Kernel, mf: &MollifierFamily, j: i32) -> Result<BoxedOperator> {
    let local = local_operator(k, mf.grid(), j)?;
    compose(Box::new(mf.operator(j)?), local)
}

/// `B_j = T_j - φ_j ∗ T_j`.
pub fn b_operator(k: &Kernel, mf: &MollifierFamily, j: i32) -> Result<BoxedOperator> {
    let tail = tail_operator(k, mf.grid(), j)?;
    let smoothed = compose(Box::new(mf.operator(j)?), tail_operator(k, mf.grid(), j)?)?;
    difference(tail, smoothed)
}

pub fn a_operator_apply(k: &Kernel, mf: &MollifierFamily, f: &SampledFunction, j: i32) -> Result<SampledFunction> {
    mf.apply(&local_apply(k, f, j)?, j)
}

pub fn b_operator_apply(k: &Kernel, mf: &MollifierFamily, f: &SampledFunction, j: i32) -> Result<SampledFunction> {
    let t = tail_apply(k, f, j)?;
    let smoothed = mf.apply(&t, j)?;
    Ok(t.sub(&smoothed))
}
