use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::LrSchedule;
use crate::error::{Error, Result};
use crate::mesh::{partition_by_x, perlin_scalar, synth_patchwork_rgb, TriangleMesh, VertexField};
use crate::model::ModelConfig;
use crate::spectral::SpectralBasis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    RgbSynthetic,
    UvSupervised,
    NormalsGeneralization,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    NLevel,
    OneLevel,
    PlainDiffusionnet,
}

impl Baseline {
    pub fn parse(name: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(name.to_string()))
            .map_err(|_| Error::Config(format!("unknown baseline `{name}` (n_level, one_level, plain_diffusionnet)")))
    }
}

/// Source of one group's scalar field in the patchwork target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GroupSource {
    /// 1-based eigenfunction index; `1` is the constant eigenvector.
    Eigenfunction(usize),
    Perlin { frequency: f64, seed: u64 },
    Constant(f64),
}

/// Vertices are grouped by x coordinate at `thresholds`; group `j` takes its
/// values from `groups[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub thresholds: Vec<f64>,
    pub groups: Vec<GroupSource>,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.groups.len() != self.thresholds.len() + 1 {
            return Err(Error::Config(format!(
                "{} thresholds need {} groups, got {}",
                self.thresholds.len(),
                self.thresholds.len() + 1,
                self.groups.len()
            )));
        }
        for g in &self.groups {
            match g {
                GroupSource::Eigenfunction(0) => {
                    return Err(Error::Config("eigenfunction indices start at 1".into()));
                }
                GroupSource::Perlin { frequency, .. } if !(*frequency > 0.0) => {
                    return Err(Error::Config(format!("noise frequency must be positive, got {frequency}")));
                }
                GroupSource::Constant(c) if !c.is_finite() => {
                    return Err(Error::Config("constant group value must be finite".into()));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Number of eigenpairs the groups read, zero if they need none.
    pub fn eigenpairs_needed(&self) -> usize {
        self.groups
            .iter()
            .filter_map(|g| match g {
                GroupSource::Eigenfunction(i) => Some(*i),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    /// Builds the hue-mapped RGB target. `basis` must hold at least
    /// [`Self::eigenpairs_needed`] eigenpairs.
    pub fn build(&self, mesh: &TriangleMesh, basis: Option<&SpectralBasis>) -> Result<VertexField> {
        self.validate()?;
        let partition = partition_by_x(mesh, &self.thresholds)?;
        let n = mesh.n_vertices();
        let fields = self
            .groups
            .iter()
            .map(|g| match g {
                GroupSource::Eigenfunction(i) => {
                    let b = basis.filter(|b| *i <= b.k()).ok_or_else(|| {
                        Error::Config(format!(
                            "eigenfunction {i} requested but only {} eigenpairs are available",
                            basis.map_or(0, |b| b.k())
                        ))
                    })?;
                    VertexField::scalar(b.phi.column(i - 1).to_vec())
                }
                GroupSource::Perlin { frequency, seed } => perlin_scalar(mesh, *frequency, *seed),
                GroupSource::Constant(c) => VertexField::scalar(vec![*c; n]),
            })
            .collect::<Result<Vec<_>>>()?;
        synth_patchwork_rgb(mesh, &partition, &fields)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneralizationSpec {
    /// Edges longer than this are split at each subdivision step.
    pub edge_threshold: f64,
    /// Subdivision levels used for training; level 0 is the base mesh.
    pub train_levels: Vec<usize>,
    pub test_level: usize,
}

fn default_iterations() -> usize {
    2000
}

fn default_true() -> bool {
    true
}

fn default_clip() -> f64 {
    5e-4
}

/// A full experiment description, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    /// Training mesh, or the base mesh of the generalization task. Relative
    /// paths resolve against the config file's directory.
    pub mesh: PathBuf,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_baseline")]
    pub baseline: Baseline,
    #[serde(default)]
    pub schedule: LrSchedule,
    #[serde(default)]
    pub synth: Option<SynthSpec>,
    #[serde(default)]
    pub generalization: Option<GeneralizationSpec>,
    /// Center the mesh and scale it to unit bounding radius before use.
    #[serde(default = "default_true")]
    pub normalize: bool,
    /// Errors at or above this value saturate the colormap of exported meshes.
    #[serde(default = "default_clip")]
    pub error_clip: f64,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

fn default_baseline() -> Baseline {
    Baseline::NLevel
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.mesh.is_relative() {
            cfg.mesh = base.join(&cfg.mesh);
        }
        if let Some(dir) = cfg.cache_dir.as_mut().filter(|d| d.is_relative()) {
            *dir = base.join(&*dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if !self.mesh.is_file() {
            return Err(Error::Config(format!("mesh file {} does not exist", self.mesh.display())));
        }
        if !(self.error_clip > 0.0) {
            return Err(Error::Config("error_clip must be positive".into()));
        }
        self.schedule.validate()?;
        self.model.validate()?;
        match self.task {
            Task::RgbSynthetic => {
                let s = self
                    .synth
                    .as_ref()
                    .ok_or_else(|| Error::Config("rgb_synthetic needs a `synth` section".into()))?;
                s.validate()?;
                if self.model.out_dim != 3 {
                    return Err(Error::Config("rgb_synthetic predicts 3 channels".into()));
                }
            }
            Task::UvSupervised => {
                if self.model.out_dim != 2 {
                    return Err(Error::Config("uv_supervised predicts 2 channels".into()));
                }
            }
            Task::NormalsGeneralization => {
                let g = self
                    .generalization
                    .as_ref()
                    .ok_or_else(|| Error::Config("normals_generalization needs a `generalization` section".into()))?;
                if !(g.edge_threshold > 0.0) || g.train_levels.is_empty() {
                    return Err(Error::Config("need edge_threshold > 0 and at least one training level".into()));
                }
                if self.model.out_dim != 3 {
                    return Err(Error::Config("normals_generalization predicts 3 channels".into()));
                }
            }
        }
        Ok(())
    }
}
