//! Run configuration: a JSON or TOML file plus command-line overrides.

use std::path::Path;

use bandedge::bands::EdgeSide;
use bandedge::discrete::{CheckerboardModel, DoubledModel, NSiteModel};
use bandedge::fibre::PlaneWaveModel;
use bandedge::lattice::{Lattice2D, ShiftSpec};
use bandedge::perturb::PipelineModel;
use bandedge::potential::PotentialSpec;
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    PlaneWave,
    Checkerboard,
    Nsite,
    Doubled,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub edge_tol: Option<f64>,
    pub hess_tol: Option<f64>,
    #[serde(default = "default_min_gap")]
    pub min_gap: f64,
}

fn default_min_gap() -> f64 {
    1e-6
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { edge_tol: None, hess_tol: None, min_gap: default_min_gap() }
    }
}

/// Which edge `edges` reports. Without `gap` it is the bottom of the spectrum.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeTarget {
    pub gap: Option<usize>,
    #[serde(default = "default_side")]
    pub side: EdgeSide,
    #[serde(default = "default_true")]
    pub refine: bool,
}

fn default_side() -> EdgeSide {
    EdgeSide::Upper
}

fn default_true() -> bool {
    true
}

impl Default for EdgeTarget {
    fn default() -> Self {
        Self { gap: None, side: default_side(), refine: true }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZcheckConfig {
    pub k: [f64; 2],
    pub shift: ShiftSpec,
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
    #[serde(default)]
    pub band: usize,
}

fn default_eps() -> Vec<f64> {
    vec![1e-3, 2e-3, 4e-3]
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoveConfig {
    /// Index into the sampled gaps; ignored when `interval` is given.
    #[serde(default)]
    pub gap: usize,
    pub interval: Option<[f64; 2]>,
    pub budget: f64,
    #[serde(default = "default_rounds")]
    pub max_rounds: usize,
    #[serde(default = "default_side")]
    pub side: EdgeSide,
    pub basis_cap: Option<usize>,
    pub delta: Option<f64>,
}

fn default_rounds() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelKind,
    /// Rows are the lattice generators.
    pub lattice: Option<[[f64; 2]; 2]>,
    pub potential: Option<PotentialSpec>,
    pub checkerboard: Option<CheckerboardModel>,
    pub nsite: Option<NSiteModel>,
    pub doubled: Option<DoubledModel>,
    pub grid: Option<[usize; 2]>,
    pub e_cut: Option<f64>,
    pub n_bands: Option<usize>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub edges: EdgeTarget,
    pub zcheck: Option<ZcheckConfig>,
    pub remove: Option<RemoveConfig>,
}

pub const DEFAULT_E_CUT: f64 = 150.0;
pub const DEFAULT_PLANE_WAVE_BANDS: usize = 6;

/// Models a configuration can describe.
pub enum Model {
    Pipeline(PipelineModel),
    NSite(NSiteModel),
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).map_err(|e| format!("invalid TOML in {}: {e}", path.display())),
            _ => serde_json::from_str(&text).map_err(|e| format!("invalid JSON in {}: {e}", path.display())),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = |name: &str, x: Option<f64>| match x {
            Some(v) if !(v > 0.0 && v.is_finite()) => Err(format!("{name} must be positive, got {v}")),
            _ => Ok(()),
        };
        positive("tolerances.edge_tol", self.tolerances.edge_tol)?;
        positive("tolerances.hess_tol", self.tolerances.hess_tol)?;
        positive("tolerances.min_gap", Some(self.tolerances.min_gap))?;
        positive("e_cut", self.e_cut)?;
        if let Some(g) = self.grid {
            if g.iter().any(|&n| n < 2) {
                return Err(format!("grid dimensions must be at least 2, got {g:?}"));
            }
        }
        if self.n_bands == Some(0) {
            return Err("n_bands must be at least 1".into());
        }
        if let Some(z) = &self.zcheck {
            if z.eps.iter().any(|e| !(*e > 0.0)) {
                return Err("zcheck.eps values must be positive".into());
            }
        }
        if let Some(r) = &self.remove {
            positive("remove.budget", Some(r.budget))?;
            positive("remove.delta", r.delta)?;
            if let Some([lo, hi]) = r.interval {
                if !(hi > lo) {
                    return Err(format!("remove.interval must be increasing, got [{lo}, {hi}]"));
                }
            }
        }
        Ok(())
    }

    pub fn lattice(&self) -> Result<Lattice2D, String> {
        match self.lattice {
            Some(rows) => Lattice2D::from_generators(rows).map_err(|e| format!("lattice: {e}")),
            None => Ok(Lattice2D::square(1.0)),
        }
    }

    pub fn e_cut(&self) -> f64 {
        self.e_cut.unwrap_or(DEFAULT_E_CUT)
    }

    pub fn plane_wave(&self) -> Result<PlaneWaveModel, String> {
        let dual = self.lattice()?.dual();
        let pot = match &self.potential {
            Some(spec) => spec.build(&dual).map_err(|e| format!("potential: {e}"))?,
            None => bandedge::potential::FourierPotential::zero(dual),
        };
        PlaneWaveModel::new(pot, self.e_cut()).map_err(|e| format!("plane-wave model: {e}"))
    }

    pub fn model(&self) -> Result<Model, String> {
        let missing = |name: &str| format!("model \"{name}\" needs a [{name}] section");
        Ok(match self.model {
            ModelKind::PlaneWave => Model::Pipeline(PipelineModel::PlaneWave(self.plane_wave()?)),
            ModelKind::Checkerboard => Model::Pipeline(PipelineModel::Checkerboard(self.checkerboard.ok_or_else(|| missing("checkerboard"))?)),
            ModelKind::Doubled => {
                let d = self.doubled.ok_or_else(|| missing("doubled"))?;
                if !(d.v > 0.0) || d.eps < 0.0 || d.eps_lower < 0.0 {
                    return Err(format!("doubled model needs v > 0 and non-negative eps, got {d:?}"));
                }
                Model::Pipeline(PipelineModel::Doubled(d))
            }
            ModelKind::Nsite => {
                let n = self.nsite.clone().ok_or_else(|| missing("nsite"))?;
                Model::NSite(NSiteModel::new(n.v).map_err(|e| e.to_string())?)
            }
        })
    }

    /// Bands to sample: every band for the discrete models.
    pub fn n_bands(&self, model: &Model) -> usize {
        match model {
            Model::Pipeline(PipelineModel::PlaneWave(_)) => self.n_bands.unwrap_or(DEFAULT_PLANE_WAVE_BANDS),
            Model::Pipeline(PipelineModel::Checkerboard(_)) => 2,
            Model::Pipeline(PipelineModel::Doubled(_)) => 4,
            Model::NSite(m) => m.v.len(),
        }
    }

    pub fn grid(&self, model: &Model) -> [usize; 2] {
        self.grid.unwrap_or(match model {
            Model::Pipeline(PipelineModel::PlaneWave(_)) => [32, 32],
            _ => [201, 201],
        })
    }
}
