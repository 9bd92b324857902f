use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// ReLU MLP on the concatenated `h_1..h_N` with one hidden layer of width `N m`.
    ConcatMlp,
    /// Per-level linear maps `O_i`, summed.
    PerLevelLinearSum,
}

/// Which architecture a [`super::FieldModel`] instantiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Spectrum-split components, Fourier layers, sine backbone and head.
    Multilevel,
    /// One full-spectrum diffusion stack whose final linear layer emits the
    /// field directly.
    PlainDiffusionNet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComponentConfig {
    pub blocks: usize,
    pub width: usize,
    /// Output feature dimension `F`.
    pub out_dim: usize,
    pub use_gradient_features: bool,
    /// Initial times are `t_base * t_exp^i` for level `i`.
    pub t_exp: f64,
    /// Overrides the squared mean edge length of the training mesh.
    pub t_base: Option<f64>,
}

impl Default for ComponentConfig {
    fn default() -> Self {
        ComponentConfig {
            blocks: 2,
            width: 32,
            out_dim: 2,
            use_gradient_features: false,
            t_exp: 4.0,
            t_base: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Number of levels `N`.
    pub levels: usize,
    pub k_eig: usize,
    /// Fourier feature and backbone width `m`.
    pub fourier_width: usize,
    pub sigma_base: f64,
    pub sigma_exp: f64,
    /// Sine frequency scale per level; a single entry applies to every level.
    pub alpha: Vec<f64>,
    pub head: HeadKind,
    /// Output channels `C`.
    pub out_dim: usize,
    pub component: ComponentConfig,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            architecture: Architecture::Multilevel,
            levels: 3,
            k_eig: 500,
            fourier_width: 64,
            sigma_base: 1.0,
            sigma_exp: 2.0,
            alpha: vec![30.0],
            head: HeadKind::ConcatMlp,
            out_dim: 3,
            component: ComponentConfig::default(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let c = &self.component;
        let fail = |m: String| Err(Error::Config(m));
        if self.levels < 1 {
            return fail("at least one level is required".into());
        }
        if self.fourier_width < 1 {
            return fail("fourier_width must be at least 1".into());
        }
        if !(self.sigma_exp >= 1.0) || !(self.sigma_base > 0.0) {
            return fail(format!(
                "need sigma_base > 0 and sigma_exp >= 1, got {} and {}",
                self.sigma_base, self.sigma_exp
            ));
        }
        if c.out_dim < 1 || c.width < 1 || self.out_dim < 1 {
            return fail("component width, F and C must be at least 1".into());
        }
        if !(c.t_exp > 0.0) || c.t_base.is_some_and(|t| !(t > 0.0)) {
            return fail("diffusion time initialization must be positive".into());
        }
        if self.k_eig < self.levels {
            return fail(format!("k_eig = {} cannot be split into {} bands", self.k_eig, self.levels));
        }
        if self.alpha.is_empty() || (self.alpha.len() != 1 && self.alpha.len() != self.levels) {
            return fail(format!("alpha needs 1 or {} entries", self.levels));
        }
        if self.alpha.iter().any(|a| !(*a > 0.0)) {
            return fail("alpha entries must be positive".into());
        }
        Ok(())
    }

    /// `alpha_i` for the 1-based level `i`.
    pub fn alpha(&self, level: usize) -> f64 {
        if self.alpha.len() == 1 {
            self.alpha[0]
        } else {
            self.alpha[level - 1]
        }
    }

    /// Standard deviation `sigma_i = sigma_base * sigma_exp^i` of the
    /// Fourier coefficients at the 1-based level `i`.
    pub fn sigma(&self, level: usize) -> f64 {
        self.sigma_base * self.sigma_exp.powi(level as i32)
    }

    /// Number of levels actually instantiated.
    pub fn effective_levels(&self) -> usize {
        match self.architecture {
            Architecture::Multilevel => self.levels,
            Architecture::PlainDiffusionNet => 1,
        }
    }
}

/// `t_init(i) = t_base * t_exp^i` for the 1-based level `i`.
pub fn initial_time(t_base: f64, t_exp: f64, level: usize) -> f64 {
    t_base * t_exp.powi(level as i32)
}
