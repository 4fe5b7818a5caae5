//! Experiment configuration: a TOML document with one table per concern.
//!
//! ```toml
//! seed = 7
//!
//! [fixture]
//! kind = "taylor"        # constant | taylor | young | model
//! holder = 0.5
//! regularity = -0.5
//! level = 0
//! amplitude = 1.0
//!
//! [kernel]
//! beta = 0.75
//! rho = 1.0
//! variant = "fractional" # fractional | log
//! n_max = 8
//!
//! [exponents]            # overrides of the fixture's (ᾱ; α, γ)
//! gamma = 0.5
//!
//! [sampling]
//! grid = "default"       # default | fine; individual fields override the preset
//! x_points = 17
//! probes = 6
//!
//! [output]
//! dir = "runs/taylor"
//! ```
//!
//! Unknown keys are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use schauder_core::distributions::ScaleGrid;
use schauder_core::germs::{FixtureKind, FixtureParams, GermGrid};
use schauder_core::kernels::{dyadic_decompose, fractional_kernel, DyadicDecomposition};

use crate::CliError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub fixture: FixtureSpec,
    pub kernel: KernelSpec,
    pub exponents: ExponentSpec,
    pub sampling: SamplingSpec,
    pub output: OutputSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureSpec {
    pub kind: FixtureKind,
    pub holder: f64,
    pub regularity: f64,
    pub level: usize,
    pub amplitude: f64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        let p = FixtureParams::default();
        FixtureSpec { kind: FixtureKind::Taylor, holder: p.holder, regularity: p.regularity, level: p.level, amplitude: p.amplitude }
    }
}

impl FixtureSpec {
    pub fn params(&self) -> FixtureParams {
        FixtureParams { holder: self.holder, regularity: self.regularity, level: self.level, amplitude: self.amplitude }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelVariant {
    Fractional,
    Log,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSpec {
    pub beta: f64,
    pub rho: f64,
    pub variant: KernelVariant,
    pub n_max: usize,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec { beta: 0.75, rho: 1.0, variant: KernelVariant::Fractional, n_max: 8 }
    }
}

impl KernelSpec {
    pub fn decomposition(&self) -> Result<DyadicDecomposition, CliError> {
        let k = fractional_kernel(self.beta, self.rho, self.variant == KernelVariant::Log)?;
        Ok(dyadic_decompose(&k, self.n_max)?)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExponentSpec {
    pub gamma: Option<f64>,
    pub alpha_bar: Option<f64>,
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridPreset {
    Default,
    Fine,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSpec {
    /// Preset grid; when absent each subcommand picks its own.
    pub grid: Option<GridPreset>,
    pub compact: Option<[f64; 2]>,
    pub lambda_bar: Option<f64>,
    pub x_points: Option<usize>,
    pub j_max: Option<usize>,
    pub fit_range: Option<[usize; 2]>,
    pub offsets: Option<[usize; 2]>,
    pub offset_fit: Option<[usize; 2]>,
    /// Test-function order; defaults to the germ's canonical order.
    pub r: Option<usize>,
    /// Number of randomly placed probes (seeded).
    pub probes: Option<usize>,
    /// Reconstruction depth.
    pub depth: Option<usize>,
}

impl SamplingSpec {
    pub fn probes(&self) -> usize {
        self.probes.unwrap_or(6)
    }

    pub fn germ_grid(&self, fallback: GridPreset) -> Result<GermGrid, CliError> {
        let mut g = match self.grid.unwrap_or(fallback) {
            GridPreset::Default => GermGrid::default(),
            GridPreset::Fine => GermGrid::fine(),
        };
        if let Some([a, b]) = self.compact {
            g.scales.compact = (a, b);
        }
        if let Some(l) = self.lambda_bar {
            g.scales.lambda_bar = l;
        }
        if let Some(n) = self.x_points {
            g.scales.x_points = n;
        }
        if let Some(j) = self.j_max {
            g.scales.j_max = j;
        }
        if let Some([a, b]) = self.fit_range {
            g.scales.fit_range = (a, b);
        }
        if let Some([a, b]) = self.offsets {
            g.offsets = (a, b);
        }
        if let Some([a, b]) = self.offset_fit {
            g.offset_fit = (a, b);
        }
        validate_grid(&g)?;
        Ok(g)
    }

    pub fn scale_grid(&self, fallback: GridPreset) -> Result<ScaleGrid, CliError> {
        Ok(self.germ_grid(fallback)?.scales)
    }
}

fn validate_grid(g: &GermGrid) -> Result<(), CliError> {
    let s = &g.scales;
    let bad = |m: &str| Err(CliError::Config(format!("sampling: {m}")));
    if !(s.compact.1 > s.compact.0) {
        return bad("compact must be an interval [a, b] with a < b");
    }
    if !(s.lambda_bar > 0.0) {
        return bad("lambda_bar must be positive");
    }
    if s.x_points < 1 {
        return bad("x_points must be at least 1");
    }
    if !(s.fit_range.0 < s.fit_range.1 && s.fit_range.1 <= s.j_max) {
        return bad("fit_range must satisfy a < b ≤ j_max");
    }
    if !(g.offsets.0 >= 1 && g.offsets.0 <= g.offsets.1) {
        return bad("offsets must satisfy 1 ≤ a ≤ b");
    }
    if !(g.offset_fit.0 < g.offset_fit.1 && g.offset_fit.0 >= g.offsets.0 && g.offset_fit.1 <= g.offsets.1) {
        return bad("offset_fit must be a proper subrange of offsets");
    }
    Ok(())
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    fn validate(&self) -> Result<(), CliError> {
        let k = &self.kernel;
        if !(k.beta > 0.0 && k.rho > 0.0) {
            return Err(CliError::Config("kernel: beta and rho must be positive".into()));
        }
        if k.n_max == 0 || k.n_max > 30 {
            return Err(CliError::Config("kernel: n_max must lie in 1..=30".into()));
        }
        let f = &self.fixture;
        if !(f.holder.is_finite() && f.regularity.is_finite() && f.amplitude.is_finite()) {
            return Err(CliError::Config("fixture: parameters must be finite".into()));
        }
        self.sampling.germ_grid(GridPreset::Default)?;
        Ok(())
    }
}
