//! Uniform grids on `[-L, L)^n`, sampled functions and zero-padded FFT convolution.

use std::io::{BufRead, Read, Write};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::C64;

/// Uniform grid with `points` samples per axis on `[-half_width, half_width)^dim`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    half_width: f64,
    points: usize,
}

impl Grid {
    pub fn new(dim: usize, half_width: f64, points: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(invalid(format!("dimension must be 1 or 2, got {dim}")));
        }
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(invalid(format!("half-width must be positive, got {half_width}")));
        }
        if points < 8 || !points.is_power_of_two() {
            return Err(invalid(format!("points per axis must be a power of two >= 8, got {points}")));
        }
        Ok(Self { dim, half_width, points })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.points as f64
    }

    /// `h^n`, the quadrature weight of one cell.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Same box, twice the points per axis.
    pub fn refined(&self) -> Self {
        Self { points: self.points * 2, ..*self }
    }

    pub fn axis_coord(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.spacing()
    }

    /// Index along an axis of the grid point at coordinate 0.
    pub fn origin_index(&self) -> usize {
        self.points / 2
    }

    pub fn multi_index(&self, flat: usize) -> [usize; 2] {
        if self.dim == 1 {
            [flat, 0]
        } else {
            [flat / self.points, flat % self.points]
        }
    }

    pub fn flat_index(&self, idx: [usize; 2]) -> usize {
        if self.dim == 1 {
            idx[0]
        } else {
            idx[0] * self.points + idx[1]
        }
    }

    /// Coordinates of a flat index; unused trailing entries are zero.
    pub fn point(&self, flat: usize) -> [f64; 2] {
        let m = self.multi_index(flat);
        let mut p = [0.0; 2];
        for a in 0..self.dim {
            p[a] = self.axis_coord(m[a]);
        }
        p
    }

    /// Flat index of the grid point at the origin.
    pub fn center_index(&self) -> usize {
        let o = self.origin_index();
        self.flat_index([o, o])
    }

    /// Whether a point lies in the middle half `[-L/2, L/2)^n`.
    pub fn in_middle_half(&self, p: &[f64]) -> bool {
        let half = 0.5 * self.half_width;
        p[..self.dim].iter().all(|&x| x >= -half && x < half)
    }

    /// Dyadic exponents `j` with `4h ≤ 2^j` and `2^j ≤ L/4`.
    pub fn resolved_dyadic_range(&self) -> (i32, i32) {
        let lo = (4.0 * self.spacing()).log2().ceil() as i32;
        let hi = (self.half_width / 4.0).log2().floor() as i32;
        (lo, hi)
    }

    pub fn ensure_same(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!("{self:?} vs {other:?}")));
        }
        Ok(())
    }
}

/// Complex samples on a [`Grid`], row-major for `n = 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledFunction {
    grid: Grid,
    values: Vec<C64>,
}

impl SampledFunction {
    pub fn new(grid: Grid, values: Vec<C64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(invalid(format!("{} values for a grid of {}", values.len(), grid.len())));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(invalid("sampled values must be finite"));
        }
        Ok(Self { grid, values })
    }

    /// Trusted constructor for operator outputs.
    pub(crate) fn from_parts(grid: Grid, values: Vec<C64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![C64::default(); grid.len()] }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut([f64; 2]) -> C64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.point(i))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<C64> {
        self.values
    }

    pub fn l2_norm(&self) -> f64 {
        (self.grid.cell_volume() * self.values.iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt()
    }

    /// `⟨f, g⟩ = h^n Σ f conj(g)`.
    pub fn inner(&self, other: &Self) -> C64 {
        let s: C64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b.conj()).sum();
        s * self.grid.cell_volume()
    }

    pub fn scaled(&self, c: C64) -> Self {
        Self::from_parts(self.grid, self.values.iter().map(|v| v * c).collect())
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(C64, C64) -> C64) -> Self {
        debug_assert_eq!(self.grid, other.grid);
        Self::from_parts(self.grid, self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect())
    }

    /// True when every nonzero sample lies in the middle half of the domain.
    pub fn supported_in_middle_half(&self) -> bool {
        self.values
            .iter()
            .enumerate()
            .all(|(i, v)| *v == C64::default() || self.grid.in_middle_half(&self.grid.point(i)))
    }

    /// `index,re,im` rows with a header line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "index,re,im")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(w, "{i},{:e},{:e}", v.re, v.im)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(grid: Grid, r: R) -> Result<Self> {
        let mut values = vec![C64::default(); grid.len()];
        let mut seen = 0usize;
        for (lineno, line) in r.lines().enumerate() {
            let line = line.map_err(|e| invalid(e.to_string()))?;
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let mut next =
                |what: &str| parts.next().ok_or_else(|| invalid(format!("line {}: missing {what}", lineno + 1)));
            let idx: usize = next("index")?.trim().parse().map_err(|_| invalid("bad index"))?;
            let re: f64 = next("re")?.trim().parse().map_err(|_| invalid("bad re"))?;
            let im: f64 = next("im")?.trim().parse().map_err(|_| invalid("bad im"))?;
            if idx >= values.len() {
                return Err(invalid(format!("index {idx} outside grid")));
            }
            values[idx] = C64::new(re, im);
            seen += 1;
        }
        if seen != grid.len() {
            return Err(invalid(format!("expected {} rows, read {seen}", grid.len())));
        }
        Self::new(grid, values)
    }

    const MAGIC: &'static [u8; 4] = b"CZSF";

    /// Little-endian dump: magic, dim (u32), half-width (f64), points (u64), then re/im pairs.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&(self.grid.dim as u32).to_le_bytes())?;
        w.write_all(&self.grid.half_width.to_le_bytes())?;
        w.write_all(&(self.grid.points as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.re.to_le_bytes())?;
            w.write_all(&v.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let io = |e: std::io::Error| invalid(e.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != Self::MAGIC {
            return Err(invalid("not a sampled-function dump"));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4).map_err(io)?;
        let dim = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b8).map_err(io)?;
        let half_width = f64::from_le_bytes(b8);
        r.read_exact(&mut b8).map_err(io)?;
        let points = u64::from_le_bytes(b8) as usize;
        let grid = Grid::new(dim, half_width, points)?;
        let mut values = Vec::with_capacity(grid.len());
        for _ in 0..grid.len() {
            r.read_exact(&mut b8).map_err(io)?;
            let re = f64::from_le_bytes(b8);
            r.read_exact(&mut b8).map_err(io)?;
            values.push(C64::new(re, f64::from_le_bytes(b8)));
        }
        Self::new(grid, values)
    }
}

/// Transform of a zero-padded kernel, ready for repeated convolutions.
#[derive(Debug, Clone)]
pub struct Spectrum {
    grid: Grid,
    data: Vec<C64>,
}

impl Spectrum {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub(crate) fn from_parts(grid: Grid, data: Vec<C64>) -> Self {
        Self { grid, data }
    }

    /// Spectrum of `k̃(v) = conj(k(-v))`, the adjoint convolution kernel.
    pub fn conjugate(&self) -> Self {
        Self { grid: self.grid, data: self.data.iter().map(|v| v.conj()).collect() }
    }

    pub fn scaled(&self, c: C64) -> Self {
        Self { grid: self.grid, data: self.data.iter().map(|v| v * c).collect() }
    }

    pub fn difference(&self, other: &Spectrum) -> Self {
        Self { grid: self.grid, data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect() }
    }
}

/// Linear (non-wrapping) convolution on a grid via FFTs of size `2G` per axis.
///
/// Plans are immutable and shared; every call allocates its own buffers, so a
/// `Convolver` can be used from many threads at once.
#[derive(Clone)]
pub struct Convolver {
    grid: Grid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Convolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Convolver").field("grid", &self.grid).finish()
    }
}

impl Convolver {
    pub fn new(grid: Grid) -> Self {
        let mut planner = FftPlanner::new();
        let n = 2 * grid.points();
        Self { grid, forward: planner.plan_fft_forward(n), inverse: planner.plan_fft_inverse(n) }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Padded length per axis.
    pub fn padded(&self) -> usize {
        2 * self.grid.points()
    }

    fn padded_len(&self) -> usize {
        self.padded().pow(self.grid.dim() as u32)
    }

    fn transform(&self, data: &mut [C64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.padded();
        plan.process(data);
        if self.grid.dim() == 2 {
            transpose_square(data, n);
            plan.process(data);
            transpose_square(data, n);
        }
    }

    pub fn forward_in_place(&self, data: &mut [C64]) {
        self.transform(data, &self.forward);
    }

    /// Unnormalized inverse transform.
    pub fn inverse_in_place(&self, data: &mut [C64]) {
        self.transform(data, &self.inverse);
    }

    /// Embed grid samples into the padded array (zero elsewhere).
    pub fn pad(&self, values: &[C64]) -> Vec<C64> {
        let g = self.grid.points();
        let n = self.padded();
        let mut out = vec![C64::default(); self.padded_len()];
        if self.grid.dim() == 1 {
            out[..g].copy_from_slice(values);
        } else {
            for r in 0..g {
                out[r * n..r * n + g].copy_from_slice(&values[r * g..(r + 1) * g]);
            }
        }
        out
    }

    /// Restrict a padded array to the grid and scale.
    pub fn restrict(&self, padded: &[C64], scale: f64) -> Vec<C64> {
        let g = self.grid.points();
        let n = self.padded();
        if self.grid.dim() == 1 {
            padded[..g].iter().map(|v| v * scale).collect()
        } else {
            let mut out = Vec::with_capacity(g * g);
            for r in 0..g {
                out.extend(padded[r * n..r * n + g].iter().map(|v| v * scale));
            }
            out
        }
    }

    /// Spectrum of a kernel given on integer lattice offsets `o ∈ [-G, G)^n`.
    pub fn offset_spectrum(&self, mut kernel: impl FnMut([i64; 2]) -> C64) -> Spectrum {
        let n = self.padded();
        let g = self.grid.points() as i64;
        let off = |m: usize| {
            if (m as i64) < g {
                m as i64
            } else {
                m as i64 - n as i64
            }
        };
        let mut data = vec![C64::default(); self.padded_len()];
        if self.grid.dim() == 1 {
            for (m, d) in data.iter_mut().enumerate() {
                *d = kernel([off(m), 0]);
            }
        } else {
            for m0 in 0..n {
                for m1 in 0..n {
                    data[m0 * n + m1] = kernel([off(m0), off(m1)]);
                }
            }
        }
        self.forward_in_place(&mut data);
        Spectrum { grid: self.grid, data }
    }

    /// Forward transform of padded grid samples.
    pub fn function_spectrum(&self, f: &SampledFunction) -> Vec<C64> {
        let mut data = self.pad(f.values());
        self.forward_in_place(&mut data);
        data
    }

    /// `h^n Σ_y k(x - y) f(y)` for a precomputed function spectrum.
    pub fn apply_to_spectrum(&self, f_hat: &[C64], k: &Spectrum) -> Vec<C64> {
        let mut data: Vec<C64> = f_hat.iter().zip(&k.data).map(|(a, b)| a * b).collect();
        self.inverse_in_place(&mut data);
        self.restrict(&data, self.grid.cell_volume() / self.padded_len() as f64)
    }

    pub fn apply(&self, f: &SampledFunction, k: &Spectrum) -> SampledFunction {
        let f_hat = self.function_spectrum(f);
        SampledFunction::from_parts(self.grid, self.apply_to_spectrum(&f_hat, k))
    }

    /// Inverse of a multiplier applied to an already transformed function.
    pub fn synthesize(&self, mut spectrum: Vec<C64>) -> Vec<C64> {
        self.inverse_in_place(&mut spectrum);
        self.restrict(&spectrum, 1.0 / self.padded_len() as f64)
    }
}

fn transpose_square(data: &mut [C64], n: usize) {
    for r in 0..n {
        for c in r + 1..n {
            data.swap(r * n + c, c * n + r);
        }
    }
}

/// `f ∗ k` where `k` is sampled on the same grid, centred at the origin.
pub fn convolve(f: &SampledFunction, kernel_samples: &SampledFunction) -> Result<SampledFunction> {
    f.grid().ensure_same(kernel_samples.grid())?;
    let grid = *f.grid();
    let conv = Convolver::new(grid);
    let g = grid.points();
    let o = grid.origin_index() as i64;
    let k = kernel_samples.values();
    let spec = conv.offset_spectrum(|off| {
        let idx = |v: i64| {
            let i = v + o;
            (0..g as i64).contains(&i).then_some(i as usize)
        };
        match (idx(off[0]), grid.dim()) {
            (Some(i0), 1) => k[i0],
            (Some(i0), _) => match idx(off[1]) {
                Some(i1) => k[i0 * g + i1],
                None => C64::default(),
            },
            (None, _) => C64::default(),
        }
    });
    Ok(conv.apply(f, &spec))
}

/// `‖f‖₂` computed from the unpadded DFT (Parseval).
pub fn fft_side_norm(f: &SampledFunction) -> f64 {
    let grid = *f.grid();
    let g = grid.points();
    let mut planner = FftPlanner::new();
    let plan = planner.plan_fft_forward(g);
    let mut data = f.values().to_vec();
    plan.process(&mut data);
    if grid.dim() == 2 {
        transpose_square(&mut data, g);
        plan.process(&mut data);
    }
    let energy: f64 = data.iter().map(|v| v.norm_sqr()).sum();
    (grid.cell_volume() * energy / grid.len() as f64).sqrt()
}

/// Test-function family id and parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FamilyKind {
    Gaussian { center: f64, width: f64 },
    BandlimitedRandom { band: f64, seed: u64 },
    SmoothedIndicator { center: f64, radius: f64, edge: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFamily {
    #[serde(flatten)]
    pub kind: FamilyKind,
    pub count: usize,
}

impl TestFamily {
    pub fn gaussian(center: f64, width: f64, count: usize) -> Self {
        Self { kind: FamilyKind::Gaussian { center, width }, count }
    }

    pub fn bandlimited(band: f64, seed: u64, count: usize) -> Self {
        Self { kind: FamilyKind::BandlimitedRandom { band, seed }, count }
    }

    pub fn smoothed_indicator(center: f64, radius: f64, edge: f64, count: usize) -> Self {
        Self { kind: FamilyKind::SmoothedIndicator { center, radius, edge }, count }
    }
}

/// C∞ step: 0 for t ≤ 0, 1 for t ≥ 1.
pub fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / t).exp();
    let b = (-1.0 / (1.0 - t)).exp();
    a / (a + b)
}

/// Window equal to 1 on `|x_a| ≤ 3L/8` and vanishing outside the middle half.
fn confinement(grid: &Grid, p: [f64; 2]) -> f64 {
    let half = 0.5 * grid.half_width();
    let flat = 0.75 * half;
    p[..grid.dim()]
        .iter()
        .map(|&x| if x < -half || x >= half { 0.0 } else { smooth_step((half - x.abs()) / (half - flat)) })
        .product()
}

/// Member `index` of a test family. Every member vanishes outside the middle half.
pub fn make_test_function(family: &TestFamily, grid: &Grid, index: usize) -> Result<SampledFunction> {
    if index >= family.count {
        return Err(invalid(format!("member {index} of a family of {}", family.count)));
    }
    let grid = *grid;
    match family.kind {
        FamilyKind::Gaussian { center, width } => {
            if !(width > 0.0) {
                return Err(invalid("gaussian width must be positive"));
            }
            let w = width / (1.0 + 0.25 * (index % 4) as f64);
            let shift = 0.5 * width * (index / 4) as f64;
            Ok(SampledFunction::from_fn(grid, |p| {
                let mut r2 = (p[0] - center - shift).powi(2);
                if grid.dim() == 2 {
                    r2 += (p[1] - center).powi(2);
                }
                C64::new((-r2 / (2.0 * w * w)).exp() * confinement(&grid, p), 0.0)
            }))
        }
        FamilyKind::SmoothedIndicator { center, radius, edge } => {
            if !(radius > 0.0) || !(edge > 0.0) {
                return Err(invalid("indicator radius and edge must be positive"));
            }
            let r = radius / (1.0 + 0.25 * index as f64);
            Ok(SampledFunction::from_fn(grid, |p| {
                let d = p[..grid.dim()].iter().map(|x| (x - center).powi(2)).sum::<f64>().sqrt();
                C64::new(smooth_step((r + edge - d) / (2.0 * edge)) * confinement(&grid, p), 0.0)
            }))
        }
        FamilyKind::BandlimitedRandom { band, seed } => bandlimited_member(&grid, band, seed, index),
    }
}

/// Random trigonometric polynomial on the middle-half sub-grid, zero elsewhere.
fn bandlimited_member(grid: &Grid, band: f64, seed: u64, index: usize) -> Result<SampledFunction> {
    if !(band >= 0.0) {
        return Err(invalid("band must be nonnegative"));
    }
    let g = grid.points();
    let m = g / 2;
    let period = grid.half_width();
    let kmax = (band * period / (2.0 * std::f64::consts::PI)).floor() as i64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let freq = |k: usize| {
        if k < m / 2 {
            k as i64
        } else {
            k as i64 - m as i64
        }
    };
    let dim = grid.dim();
    let sub_len = m.pow(dim as u32);
    let mut coeffs = vec![C64::default(); sub_len];
    let mut modes = 0usize;
    for (flat, c) in coeffs.iter_mut().enumerate() {
        let (k0, k1) = if dim == 1 { (freq(flat), 0) } else { (freq(flat / m), freq(flat % m)) };
        if ((k0 * k0 + k1 * k1) as f64).sqrt() <= kmax as f64 {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *c = C64::new(re, im);
            modes += 1;
        }
    }
    let mut planner = FftPlanner::new();
    let plan = planner.plan_fft_inverse(m);
    plan.process(&mut coeffs);
    if dim == 2 {
        transpose_square(&mut coeffs, m);
        plan.process(&mut coeffs);
        transpose_square(&mut coeffs, m);
    }
    let scale = 1.0 / (modes.max(1) as f64).sqrt();
    let start = g / 4;
    let mut values = vec![C64::default(); grid.len()];
    for (flat, c) in coeffs.iter().enumerate() {
        let target = if dim == 1 { start + flat } else { grid.flat_index([start + flat / m, start + flat % m]) };
        values[target] = c * scale;
    }
    SampledFunction::new(*grid, values)
}
