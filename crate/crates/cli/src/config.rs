//! Run configuration, read from TOML.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pfrecon_core::data::{Phantom, Shape, SourceTerm};
use pfrecon_core::mesh::{AdaptParams, MeshPattern};
use pfrecon_core::objective::ObjectiveParams;
use pfrecon_core::pop::{AdaptSettings, PopParams};
use pfrecon_core::shape::{CurvatureWeight, SharpParams, ShapeParams};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub mesh: MeshConfig,
    #[serde(default)]
    pub phantom: Vec<PrimitiveConfig>,
    #[serde(default = "default_sources")]
    pub source: Vec<SourceConfig>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub pop: PopConfig,
    #[serde(default)]
    pub shape: ShapeConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

fn default_seed() -> u64 {
    1
}

fn default_sources() -> Vec<SourceConfig> {
    vec![
        SourceConfig { a: 1.0, b: 0.0, c: 0.0 },
        SourceConfig { a: 0.0, b: 1.0, c: 0.0 },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub k: f64,
    pub alpha: f64,
    pub eps: f64,
    /// `tau = tau_c / eps` unless `tau` is given.
    pub tau_c: f64,
    pub tau: Option<f64>,
    pub newton_tol: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            k: 0.1,
            alpha: 1e-4,
            eps: 1.0 / (8.0 * PI),
            tau_c: 0.01,
            tau: None,
            newton_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternName {
    CrissCross,
    Diagonal,
    Lattice,
}

impl From<PatternName> for MeshPattern {
    fn from(p: PatternName) -> Self {
        match p {
            PatternName::CrissCross => MeshPattern::CrissCross,
            PatternName::Diagonal => MeshPattern::Diagonal,
            PatternName::Lattice => MeshPattern::Lattice,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshConfig {
    pub h: f64,
    pub pattern: PatternName,
    /// Truth mesh is `h / truth_factor` plus a ring of refinement.
    pub truth_factor: f64,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig {
            h: 0.04,
            pattern: PatternName::Lattice,
            truth_factor: 4.0,
        }
    }
}

/// One phantom primitive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PrimitiveConfig {
    Disc { center: [f64; 2], radius: f64 },
    Ellipse { center: [f64; 2], semi_axes: [f64; 2], #[serde(default)] angle: f64 },
    Rectangle { corner: [f64; 2], extents: [f64; 2] },
    Polygon { vertices: Vec<[f64; 2]> },
}

impl From<&PrimitiveConfig> for Shape {
    fn from(s: &PrimitiveConfig) -> Self {
        match s.clone() {
            PrimitiveConfig::Disc { center, radius } => Shape::Disc { center, radius },
            PrimitiveConfig::Ellipse { center, semi_axes, angle } => Shape::Ellipse { center, semi_axes, angle },
            PrimitiveConfig::Rectangle { corner, extents } => Shape::Rectangle { corner, extents },
            PrimitiveConfig::Polygon { vertices } => Shape::Polygon { vertices },
        }
    }
}

/// `f(x, y) = a x + b y + c`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    #[serde(default)]
    pub a: f64,
    #[serde(default)]
    pub b: f64,
    #[serde(default)]
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Relative boundary noise level.
    pub noise: f64,
    /// Measurement directory written by `generate`; overrides in-process data.
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PopConfig {
    pub tol: f64,
    pub max_iters: usize,
    pub max_rejections: usize,
    /// Upper bound for the adaptive step, as a multiple of the initial `tau`.
    pub tau_max_factor: f64,
    /// Snapshot cadence in accepted iterations, 0 disables snapshots.
    pub snapshot_every: usize,
    pub adapt: Option<AdaptConfig>,
}

impl Default for PopConfig {
    fn default() -> Self {
        PopConfig {
            tol: 1e-4,
            max_iters: 5000,
            max_rejections: 20,
            tau_max_factor: 1.0,
            snapshot_every: 0,
            adapt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    pub every: usize,
    pub refine_frac: f64,
    pub h_fine: f64,
    pub max_levels: usize,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        let d = AdaptParams::default();
        AdaptConfig {
            every: 50,
            refine_frac: d.refine_frac,
            h_fine: d.h_fine,
            max_levels: d.max_levels,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurvatureName {
    Alpha,
    GammaLimit,
}

/// Settings of the sharp-interface descent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShapeConfig {
    pub alpha: f64,
    pub curvature: CurvatureName,
    pub max_step: f64,
    pub min_step: f64,
    pub tol: f64,
    pub max_iters: usize,
    /// Boundary point spacing; defaults to the mesh size.
    pub spacing: Option<f64>,
    /// Minimal distance to the outer boundary.
    pub d0: f64,
    pub init_center: [f64; 2],
    pub init_radius: f64,
    /// Closed polyline CSV used instead of the initial disc.
    pub init_polygon: Option<PathBuf>,
}

impl Default for ShapeConfig {
    fn default() -> Self {
        ShapeConfig {
            alpha: 1e-3,
            curvature: CurvatureName::Alpha,
            max_step: 10.0,
            min_step: 1e-6,
            tol: 1e-6,
            max_iters: 500,
            spacing: None,
            d0: 0.1,
            init_center: [0.0, 0.0],
            init_radius: 0.02,
            init_polygon: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub eps: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            eps: vec![1.0 / (4.0 * PI), 1.0 / (8.0 * PI), 1.0 / (16.0 * PI)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub h: f64,
    pub pairs: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { h: 0.1, pairs: 5 }
    }
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: default_seed(),
            model: ModelConfig::default(),
            mesh: MeshConfig::default(),
            phantom: Vec::new(),
            source: default_sources(),
            data: DataConfig::default(),
            pop: PopConfig::default(),
            shape: ShapeConfig::default(),
            sweep: SweepConfig::default(),
            verify: VerifyConfig::default(),
        }
    }
}

fn check(ok: bool, msg: &str) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Validation(msg.to_string()))
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Config = toml::from_str(text).map_err(|e| CliError::Validation(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let m = &self.model;
        check(m.alpha > 0.0 && m.alpha.is_finite(), "model.alpha must be positive")?;
        check(m.eps > 0.0 && m.eps.is_finite(), "model.eps must be positive")?;
        check(m.k > 0.0 && m.k < 1.0, "model.k must lie in (0, 1)")?;
        check(self.tau() > 0.0 && self.tau().is_finite(), "tau must be positive")?;
        check(m.newton_tol > 0.0, "model.newton_tol must be positive")?;
        check(self.mesh.h > 0.0 && self.mesh.h < 2.0, "mesh.h must lie in (0, 2)")?;
        check(self.mesh.truth_factor >= 1.0, "mesh.truth_factor must be at least 1")?;
        check(!self.source.is_empty(), "at least one source is required")?;
        check(self.data.noise >= 0.0 && self.data.noise.is_finite(), "data.noise must be non-negative")?;
        check(self.pop.tol > 0.0, "pop.tol must be positive")?;
        check(self.pop.tau_max_factor >= 1.0, "pop.tau_max_factor must be at least 1")?;
        if let Some(a) = &self.pop.adapt {
            check(a.every > 0, "pop.adapt.every must be positive")?;
            check(a.h_fine > 0.0, "pop.adapt.h_fine must be positive")?;
            check(a.refine_frac > 0.0 && a.refine_frac <= 1.0, "pop.adapt.refine_frac must lie in (0, 1]")?;
        }
        let s = &self.shape;
        check(s.alpha > 0.0, "shape.alpha must be positive")?;
        check(s.tol > 0.0, "shape.tol must be positive")?;
        check(s.min_step > 0.0 && s.min_step <= s.max_step, "shape steps must satisfy 0 < min_step <= max_step")?;
        check(s.spacing.map_or(true, |h| h > 0.0), "shape.spacing must be positive")?;
        check(s.init_radius > 0.0, "shape.init_radius must be positive")?;
        check(self.sweep.eps.iter().all(|e| *e > 0.0), "sweep.eps entries must be positive")?;
        check(self.verify.h > 0.0 && self.verify.pairs > 0, "verify.h and verify.pairs must be positive")?;
        Ok(())
    }

    pub fn tau(&self) -> f64 {
        self.model.tau.unwrap_or(self.model.tau_c / self.model.eps)
    }

    pub fn phantom(&self) -> Result<Phantom, CliError> {
        check(!self.phantom.is_empty(), "no phantom given")?;
        let shapes = self.phantom.iter().map(Shape::from).collect();
        Ok(Phantom::new(shapes, [-1.0, -1.0], [1.0, 1.0], 0.0)?)
    }

    pub fn sources(&self) -> Vec<SourceTerm> {
        self.source.iter().map(|s| SourceTerm::Affine { a: s.a, b: s.b, c: s.c }).collect()
    }

    pub fn objective(&self) -> ObjectiveParams {
        let mut p = ObjectiveParams::new(self.model.alpha, self.model.eps, self.model.k);
        p.newton_tol = self.model.newton_tol;
        p
    }

    pub fn pop_params(&self) -> PopParams {
        let tau = self.tau();
        let mut p = PopParams::new(self.objective(), tau, self.pop.tol);
        p.tau_max = tau * self.pop.tau_max_factor;
        p.max_iters = self.pop.max_iters;
        p.max_rejections = self.pop.max_rejections;
        p.adapt = self.pop.adapt.as_ref().map(|a| AdaptSettings {
            every: a.every,
            params: AdaptParams {
                refine_frac: a.refine_frac,
                h_fine: a.h_fine,
                max_levels: a.max_levels,
            },
        });
        p
    }

    pub fn shape_params(&self) -> ShapeParams {
        let s = &self.shape;
        let mut sharp = SharpParams::new(s.alpha, self.model.k);
        sharp.newton_tol = self.model.newton_tol;
        sharp.curvature = match s.curvature {
            CurvatureName::Alpha => CurvatureWeight::Alpha,
            CurvatureName::GammaLimit => CurvatureWeight::GammaLimit,
        };
        let mut p = ShapeParams::new(sharp, s.spacing.unwrap_or(self.mesh.h));
        p.max_step = s.max_step;
        p.min_step = s.min_step;
        p.tol = s.tol;
        p.max_iters = s.max_iters;
        p.d0 = s.d0;
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gets_defaults() {
        let c = Config::parse("").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.sources(), vec![SourceTerm::X, SourceTerm::Y]);
        assert!((c.tau() - 0.08 * PI).abs() < 1e-12);
    }

    #[test]
    fn echo_round_trips() {
        let text = r#"
seed = 9
[model]
alpha = 1e-3
tau = 0.5
[[phantom]]
kind = "disc"
center = [0.1, 0.2]
radius = 0.4
[[phantom]]
kind = "polygon"
vertices = [[0.0, 0.0], [0.3, 0.0], [0.0, 0.3]]
[pop.adapt]
every = 25
"#;
        let c = Config::parse(text).unwrap();
        assert_eq!(c.pop.adapt.as_ref().unwrap().every, 25);
        assert_eq!(c.tau(), 0.5);
        assert_eq!(Config::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "[model]\nk = 1.5",
            "[model]\nalpha = 0.0",
            "[model]\neps = -1.0",
            "[pop]\ntol = 0.0",
            "[mesh]\nh = 0.0",
            "unknown = 1",
            "[[phantom]]\nkind = \"star\"",
        ] {
            assert!(matches!(Config::parse(text), Err(CliError::Validation(_))), "{text}");
        }
    }

    #[test]
    fn readme_example_parses() {
        let readme = include_str!("../../../README.md");
        let start = readme.find("```toml\n").unwrap() + 8;
        let len = readme[start..].find("```").unwrap();
        let c = Config::parse(&readme[start..start + len]).unwrap();
        assert_eq!(c.phantom.len(), 1);
        assert!(c.pop.adapt.is_some());
    }

    #[test]
    fn missing_phantom_is_a_validation_error() {
        assert!(matches!(Config::default().phantom(), Err(CliError::Validation(_))));
    }
}
