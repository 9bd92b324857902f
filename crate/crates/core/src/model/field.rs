use std::f64::consts::PI;

use ndarray::Array2;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::{initial_time, Architecture, HeadKind, ModelConfig};
use super::operators::{BandOperators, MeshOperators};
use crate::autodiff::{diffusion_time_inverse, Checkpoint, Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct Block {
    t_hat: ParamId,
    gradient: Option<ParamId>,
    mlp0: Linear,
    mlp1: Linear,
}

#[derive(Debug, Clone)]
struct Component {
    lift: Linear,
    blocks: Vec<Block>,
    out: Linear,
}

#[derive(Debug, Clone)]
struct Level {
    component: Component,
    fourier: ParamId,
    backbone: Linear,
}

#[derive(Debug, Clone)]
enum Head {
    Concat { hidden: Linear, out: Linear },
    PerLevel(Vec<Linear>),
}

/// Graph handles of every intermediate of one forward pass. Vectors are
/// indexed by `level - 1`; they are empty for the plain diffusion model.
#[derive(Debug, Clone)]
pub struct Trace {
    pub d: Vec<Var>,
    pub eta: Vec<Var>,
    pub f: Vec<Var>,
    pub h: Vec<Var>,
    pub output: Var,
}

/// Metadata stored alongside the parameters in a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub config: ModelConfig,
    pub t_base: f64,
}

#[derive(Debug, Clone)]
pub struct FieldModel {
    pub config: ModelConfig,
    /// Diffusion time scale the initial times were derived from.
    pub t_base: f64,
    pub params: ParamStore,
    levels: Vec<Level>,
    plain: Option<Component>,
    head: Option<Head>,
}

struct Init<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl Init<'_> {
    fn uniform(&mut self, name: String, rows: usize, cols: usize, bound: f64) -> Result<ParamId> {
        let rng = &mut self.rng;
        let v = Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..bound));
        self.store.add(name, v, true)
    }

    fn normal(&mut self, name: String, rows: usize, cols: usize, std: f64) -> Result<ParamId> {
        let rng = &mut self.rng;
        let v = Array2::from_shape_simple_fn((rows, cols), || {
            let z: f64 = StandardNormal.sample(rng);
            std * z
        });
        self.store.add(name, v, true)
    }

    /// Weight `out x in` and bias `1 x out` with the usual `1/sqrt(in)` bounds.
    fn linear(&mut self, name: &str, out: usize, inp: usize) -> Result<Linear> {
        let bound = 1.0 / (inp as f64).sqrt();
        Ok(Linear {
            w: self.uniform(format!("{name}.w"), out, inp, bound)?,
            b: self.uniform(format!("{name}.b"), 1, out, bound)?,
        })
    }

    fn component(&mut self, prefix: &str, cfg: &ModelConfig, out_dim: usize, t_init: f64) -> Result<Component> {
        let c = &cfg.component;
        let h = c.width;
        let lift = self.linear(&format!("{prefix}.lift"), h, 3)?;
        let mut blocks = Vec::with_capacity(c.blocks);
        for b in 0..c.blocks {
            let p = format!("{prefix}.block{b}");
            let t_hat = self
                .store
                .add(format!("{p}.time"), Array2::from_elem((1, h), diffusion_time_inverse(t_init)), true)?;
            let gradient = if c.use_gradient_features {
                Some(self.uniform(format!("{p}.gradient"), h, h, 1.0 / (h as f64).sqrt())?)
            } else {
                None
            };
            let mlp_in = if c.use_gradient_features { 3 * h } else { 2 * h };
            blocks.push(Block {
                t_hat,
                gradient,
                mlp0: self.linear(&format!("{p}.mlp0"), h, mlp_in)?,
                mlp1: self.linear(&format!("{p}.mlp1"), h, h)?,
            });
        }
        let out = self.linear(&format!("{prefix}.out"), out_dim, h)?;
        Ok(Component { lift, blocks, out })
    }
}

impl FieldModel {
    /// Builds and initializes a model. `t_base` is usually the squared mean
    /// edge length of the training mesh; `config.component.t_base` overrides it.
    pub fn new(config: &ModelConfig, t_base: f64) -> Result<Self> {
        config.validate()?;
        let t_base = config.component.t_base.unwrap_or(t_base);
        if !(t_base > 0.0) {
            return Err(Error::Config(format!("diffusion time base must be positive, got {t_base}")));
        }
        let mut store = ParamStore::new();
        let mut init = Init {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        };
        let c = &config.component;
        let m = config.fourier_width;
        let mut levels = Vec::new();
        let mut plain = None;
        let mut head = None;
        match config.architecture {
            Architecture::PlainDiffusionNet => {
                let t = initial_time(t_base, c.t_exp, 1);
                plain = Some(init.component("diffusionnet", config, config.out_dim, t)?);
            }
            Architecture::Multilevel => {
                let n = config.levels;
                for i in 1..=n {
                    let t = initial_time(t_base, c.t_exp, i);
                    let component = init.component(&format!("component{i}"), config, c.out_dim, t)?;
                    let fourier = init.normal(format!("fourier{i}.b"), m, c.out_dim, config.sigma(i))?;
                    let (inp, bound) = if i == 1 {
                        (3, 1.0 / 3.0)
                    } else {
                        (m, (6.0 / m as f64).sqrt() / config.alpha(i))
                    };
                    let backbone = Linear {
                        w: init.uniform(format!("backbone{i}.w"), m, inp, bound)?,
                        b: init.uniform(format!("backbone{i}.b"), 1, m, 1.0 / (inp as f64).sqrt())?,
                    };
                    levels.push(Level {
                        component,
                        fourier,
                        backbone,
                    });
                }
                head = Some(match config.head {
                    HeadKind::ConcatMlp => Head::Concat {
                        hidden: init.linear("head.hidden", n * m, n * m)?,
                        out: init.linear("head.out", config.out_dim, n * m)?,
                    },
                    HeadKind::PerLevelLinearSum => Head::PerLevel(
                        (1..=n)
                            .map(|i| init.linear(&format!("head.level{i}"), config.out_dim, m))
                            .collect::<Result<_>>()?,
                    ),
                });
            }
        }
        Ok(FieldModel {
            config: config.clone(),
            t_base,
            params: store,
            levels,
            plain,
            head,
        })
    }

    /// Builds a model for a mesh whose operators are already computed, using
    /// the squared mean edge length as `t_base`.
    pub fn for_mesh(config: &ModelConfig, ops: &MeshOperators) -> Result<Self> {
        let expected = config.effective_levels();
        if ops.levels.len() != expected {
            return Err(Error::Incompatible(format!(
                "operators carry {} bands, model needs {expected}",
                ops.levels.len()
            )));
        }
        Self::new(config, ops.mean_edge_length.powi(2))
    }

    pub fn levels(&self) -> usize {
        self.levels.len()
    }

    pub fn trainable_count(&self) -> usize {
        self.params.trainable_count()
    }

    pub fn metadata(&self) -> ModelMetadata {
        ModelMetadata {
            config: self.config.clone(),
            t_base: self.t_base,
        }
    }

    /// Rebuilds a model from checkpointed metadata and parameters. Names and
    /// shapes must match the architecture exactly.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta: ModelMetadata = serde_json::from_str(&ck.metadata)
            .map_err(|e| Error::Incompatible(format!("checkpoint metadata: {e}")))?;
        let mut config = meta.config.clone();
        config.component.t_base = Some(meta.t_base);
        let mut model = Self::new(&config, meta.t_base)?;
        model.config = meta.config;
        if model.params.len() != ck.params.len() {
            return Err(Error::Incompatible(format!(
                "checkpoint has {} tensors, architecture has {}",
                ck.params.len(),
                model.params.len()
            )));
        }
        for (dst, src) in model.params.iter_mut().zip(ck.params.iter()) {
            if dst.name != src.name || dst.value.dim() != src.value.dim() {
                return Err(Error::Incompatible(format!(
                    "tensor `{}` {:?} does not match `{}` {:?}",
                    src.name,
                    src.value.dim(),
                    dst.name,
                    dst.value.dim()
                )));
            }
            dst.value.assign(&src.value);
            dst.trainable = src.trainable;
        }
        Ok(model)
    }

    fn linear(&self, g: &mut Graph, l: Linear, x: Var) -> Result<Var> {
        let w = g.param(&self.params, l.w);
        let b = g.param(&self.params, l.b);
        let y = g.matmul_nt(x, w)?;
        g.add_row(y, b)
    }

    /// `Phi_b (exp(-lambda t) * Phi_b^T M x)` with `t = softplus(t_hat)`.
    fn diffuse(&self, g: &mut Graph, band: &BandOperators, x: Var, t_hat: ParamId) -> Result<Var> {
        let t = g.param(&self.params, t_hat);
        let coeffs = g.const_matmul(band.project.clone(), x)?;
        let scaled = g.exp_scale(coeffs, band.lambda.clone(), t)?;
        g.const_matmul(band.expand.clone(), scaled)
    }

    fn component_forward(
        &self,
        g: &mut Graph,
        c: &Component,
        band: &BandOperators,
        ops: &MeshOperators,
        x: Var,
    ) -> Result<Var> {
        let mut h = self.linear(g, c.lift, x)?;
        for block in &c.blocks {
            let diffused = self.diffuse(g, band, h, block.t_hat)?;
            let mut parts = vec![h, diffused];
            if let Some(a) = block.gradient {
                let [gx_op, gy_op] = ops
                    .gradients
                    .as_ref()
                    .ok_or_else(|| Error::Incompatible("gradient operators were not precomputed".into()))?;
                let a = g.param(&self.params, a);
                let gx = g.sparse_matmul(gx_op.clone(), diffused)?;
                let gy = g.sparse_matmul(gy_op.clone(), diffused)?;
                let bx = g.matmul_nt(gx, a)?;
                let by = g.matmul_nt(gy, a)?;
                let px = g.mul(gx, bx)?;
                let py = g.mul(gy, by)?;
                let dot = g.add(px, py)?;
                parts.push(g.tanh(dot)?);
            }
            let z = g.concat(&parts)?;
            let z = self.linear(g, block.mlp0, z)?;
            let z = g.relu(z)?;
            let z = self.linear(g, block.mlp1, z)?;
            h = g.add(h, z)?;
        }
        self.linear(g, c.out, h)
    }

    /// Records the full forward pass on `g`. With `disabled = Some(i)` the
    /// level-`i` injection is dropped from the backbone and its slot in the
    /// head input is zeroed.
    pub fn forward(&self, g: &mut Graph, ops: &MeshOperators, disabled: Option<usize>) -> Result<Trace> {
        if let Some(i) = disabled {
            if i < 1 || i > self.levels.len() {
                return Err(Error::LevelOutOfRange {
                    level: i,
                    levels: self.levels.len(),
                });
            }
        }
        if ops.levels.len() != self.config.effective_levels() {
            return Err(Error::Incompatible(format!(
                "operators carry {} bands, model needs {}",
                ops.levels.len(),
                self.config.effective_levels()
            )));
        }
        let x = g.constant(ops.positions.clone())?;
        if let Some(c) = &self.plain {
            let output = self.component_forward(g, c, &ops.levels[0], ops, x)?;
            return Ok(Trace {
                d: vec![],
                eta: vec![],
                f: vec![],
                h: vec![],
                output,
            });
        }
        let mut trace = Trace {
            d: vec![],
            eta: vec![],
            f: vec![],
            h: vec![],
            output: x,
        };
        let mut slots = Vec::with_capacity(self.levels.len());
        let mut prev = x;
        for (idx, level) in self.levels.iter().enumerate() {
            let i = idx + 1;
            let d = self.component_forward(g, &level.component, &ops.levels[idx], ops, x)?;
            let b = g.param(&self.params, level.fourier);
            let proj = g.matmul_nt(d, b)?;
            let eta = g.sin(proj, 2.0 * PI)?;
            let w = g.param(&self.params, level.backbone.w);
            let bias = g.param(&self.params, level.backbone.b);
            let z = g.matmul_nt(prev, w)?;
            let z = g.scale(z, self.config.alpha(i))?;
            let z = g.add_row(z, bias)?;
            let f = g.sin(z, 1.0)?;
            let h = if disabled == Some(i) { f } else { g.add(f, eta)? };
            slots.push(if disabled == Some(i) {
                g.constant(Array2::zeros(g.value(h).raw_dim()))?
            } else {
                h
            });
            trace.d.push(d);
            trace.eta.push(eta);
            trace.f.push(f);
            trace.h.push(h);
            prev = h;
        }
        trace.output = match self.head.as_ref().expect("multilevel models have a head") {
            Head::Concat { hidden, out } => {
                let z = g.concat(&slots)?;
                let z = self.linear(g, *hidden, z)?;
                let z = g.relu(z)?;
                self.linear(g, *out, z)?
            }
            Head::PerLevel(heads) => {
                let mut acc: Option<Var> = None;
                for (l, &slot) in heads.iter().zip(&slots) {
                    let y = self.linear(g, *l, slot)?;
                    acc = Some(match acc {
                        None => y,
                        Some(a) => g.add(a, y)?,
                    });
                }
                acc.expect("at least one level")
            }
        };
        Ok(trace)
    }

    /// Forward pass values only.
    pub fn predict(&self, ops: &MeshOperators, disabled: Option<usize>) -> Result<Array2<f64>> {
        let mut g = Graph::new();
        let t = self.forward(&mut g, ops, disabled)?;
        Ok(g.value(t.output).clone())
    }

    /// Current diffusion times `softplus(t_hat)` of every block, by parameter name.
    pub fn diffusion_times(&self) -> Vec<(String, Vec<f64>)> {
        self.params
            .iter()
            .filter(|p| p.name.ends_with(".time"))
            .map(|p| (p.name.clone(), p.value.iter().map(|&x| crate::autodiff::diffusion_time(x)).collect()))
            .collect()
    }
}
