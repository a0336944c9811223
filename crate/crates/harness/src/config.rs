//! Experiment configuration, read from JSON.

use std::path::{Path, PathBuf};

use czvar_core::grid::{Grid, TestFamily};
use czvar_core::kernels::{Kernel, KernelFamily};
use czvar_core::norm_lab::{PowerSettings, SurfaceFamily};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config_error, Result};
use crate::numbers;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub half_width: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn build(&self, doublings: u32) -> Result<Grid> {
        Ok(Grid::new(self.dim, self.half_width, self.points << doublings)?)
    }
}

/// Dyadic range plus the number of intra-block points.
///
/// The truncation ladder is `ε = 2^j (1 + l/P)` for `j_min ≤ j ≤ j_max`,
/// `0 ≤ l < P`, closed off by `2^{j_max+1}`. With `j_max = j_min - 1` it is the
/// single scale `2^{j_min}`. Mollifier ladders use `j_min..=j_max` directly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderSpec {
    #[serde(default)]
    pub j_min: Option<i32>,
    #[serde(default)]
    pub j_max: Option<i32>,
    #[serde(default = "default_partition")]
    pub partition: usize,
}

fn default_partition() -> usize {
    4
}

impl Default for LadderSpec {
    fn default() -> Self {
        Self { j_min: None, j_max: None, partition: default_partition() }
    }
}

impl LadderSpec {
    /// Explicit range, defaulting to the resolved range `4h ≤ 2^j ≤ L/4` of `grid`.
    pub fn range(&self, grid: &Grid) -> Result<(i32, i32)> {
        let (lo, hi) = grid.resolved_dyadic_range();
        let j_min = self.j_min.unwrap_or(lo);
        let j_max = self.j_max.unwrap_or(hi);
        if j_min < lo || j_max > hi {
            return Err(config_error(format!("ladder 2^{j_min}..2^{j_max} leaves the resolved range 2^{lo}..2^{hi}")));
        }
        if j_max < j_min - 1 {
            return Err(config_error(format!("empty ladder {j_min}..{j_max}")));
        }
        Ok((j_min, j_max))
    }
}

/// Norm-level λ grid: log-spaced over `decades` below the largest jump, plus
/// `pooled` quantiles of the per-point breakpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaSpec {
    pub per_decade: usize,
    pub decades: f64,
    pub pooled: usize,
}

impl Default for LambdaSpec {
    fn default() -> Self {
        Self { per_decade: 8, decades: 4.0, pooled: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSpec {
    #[serde(default)]
    pub js: Option<Vec<i32>>,
    #[serde(default)]
    pub s_min: Option<f64>,
    #[serde(default)]
    pub s_max: Option<f64>,
    pub s_count: usize,
    pub families: Vec<SurfaceFamily>,
    pub theta: f64,
    pub settings: PowerSettings,
}

impl Default for SurfaceSpec {
    fn default() -> Self {
        Self {
            js: None,
            s_min: None,
            s_max: None,
            s_count: 24,
            families: vec![SurfaceFamily::SigmaQ, SurfaceFamily::QSigma],
            theta: 0.5,
            settings: PowerSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifySpec {
    pub samples: usize,
    pub extent: f64,
    pub centers: Vec<f64>,
    pub eps: Vec<f64>,
    pub outer: Vec<f64>,
    /// Largest residual accepted for analytic cancellation, in units of `h`.
    pub residual_per_h: f64,
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self {
            samples: 20_000,
            extent: 2.0,
            centers: vec![0.0, 0.3, -0.7],
            eps: vec![0.5, 1.0],
            outer: vec![2.0, 3.0],
            residual_per_h: 10.0,
        }
    }
}

/// Fixed-λ count at the centre of the support, on a fine grid, as the ladder deepens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeControlSpec {
    pub kernels: Vec<KernelFamily>,
    pub lambda: f64,
    pub points: usize,
    /// Coarsest scale `2^top`; depth `m` adds `2^{top-m+1}, …, 2^top`.
    pub top: i32,
    pub depths: Vec<usize>,
    pub family: TestFamily,
}

impl Default for NegativeControlSpec {
    fn default() -> Self {
        Self {
            kernels: vec![KernelFamily::ComplexPower { gamma: 2.0 }, KernelFamily::Hilbert],
            lambda: 0.5,
            points: 1 << 20,
            top: 1,
            depths: vec![8, 16],
            family: TestFamily::smoothed_indicator(0.0, 1.0, 0.05, 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementSpec {
    pub grid_doublings: u32,
    pub partition_doublings: u32,
    /// Largest accepted relative change of a family maximum between neighbouring levels.
    pub tolerance: f64,
}

impl Default for RefinementSpec {
    fn default() -> Self {
        Self { grid_doublings: 1, partition_doublings: 0, tolerance: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kernel: KernelFamily,
    pub grid: GridSpec,
    #[serde(default)]
    pub ladder: LadderSpec,
    pub family: TestFamily,
    #[serde(default)]
    pub lambda: LambdaSpec,
    #[serde(default = "default_q", with = "numbers::vec")]
    pub q: Vec<f64>,
    #[serde(default)]
    pub surface: SurfaceSpec,
    #[serde(default)]
    pub verify: VerifySpec,
    #[serde(default)]
    pub negative_control: Option<NegativeControlSpec>,
    #[serde(default)]
    pub refinement: RefinementSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub output: PathBuf,
}

fn default_q() -> Vec<f64> {
    vec![2.5, 3.0, f64::INFINITY]
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    /// One-dimensional Hilbert fixture at the default desk scale.
    pub fn hilbert_fixture() -> Self {
        Self {
            kernel: KernelFamily::Hilbert,
            grid: GridSpec { dim: 1, half_width: 16.0, points: 4096 },
            ladder: LadderSpec::default(),
            family: TestFamily::gaussian(0.0, 1.0, 8),
            lambda: LambdaSpec::default(),
            q: default_q(),
            surface: SurfaceSpec::default(),
            verify: VerifySpec::default(),
            negative_control: None,
            refinement: RefinementSpec::default(),
            seed: 0,
            output: default_out(),
        }
    }

    /// Planar perp-gradient fixture at the default desk scale.
    pub fn perp_gradient_fixture() -> Self {
        Self {
            kernel: KernelFamily::PerpGradient,
            grid: GridSpec { dim: 2, half_width: 8.0, points: 128 },
            family: TestFamily::gaussian(0.0, 1.0, 8),
            refinement: RefinementSpec { tolerance: 0.2, ..RefinementSpec::default() },
            ..Self::hilbert_fixture()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn kernel(&self) -> Result<Kernel> {
        Ok(Kernel::from_family(self.kernel)?)
    }

    pub fn base_grid(&self) -> Result<Grid> {
        self.grid.build(0)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.kernel()?;
        let grid = self.base_grid()?;
        if k.dim() != grid.dim() {
            return Err(config_error(format!("{}-d kernel on a {}-d grid", k.dim(), grid.dim())));
        }
        if self.family.count == 0 {
            return Err(config_error("test family is empty"));
        }
        if self.ladder.partition == 0 {
            return Err(config_error("partition count must be at least 1"));
        }
        self.ladder.range(&grid)?;
        if self.lambda.per_decade == 0 || !(self.lambda.decades > 0.0) {
            return Err(config_error("lambda grid needs per_decade > 0 and decades > 0"));
        }
        if !(self.refinement.tolerance > 0.0) {
            return Err(config_error("refinement tolerance must be positive"));
        }
        if self.q.iter().any(|q| q.is_nan()) {
            return Err(config_error("q must be a number or \"inf\""));
        }
        Ok(())
    }

    /// Hex SHA-256 of the compact JSON form.
    pub fn hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }
}
