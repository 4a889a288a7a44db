//! Training configuration, read from TOML.

use serde::{Deserialize, Serialize};

use super::loss::EpsilonSchedule;
use crate::error::{Error, Result};
use crate::manifest::content_hash;
use crate::numerics::OptimizerMode;
use crate::tree::TreeLayout;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// First epoch (1-based) drawing batches from the sampler; defaults to `t0 + 1`.
    #[serde(default)]
    pub activation_epoch: Option<usize>,
}

fn default_lambda() -> f64 {
    1e-3
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { enabled: false, lambda: default_lambda(), activation_epoch: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: 256, layers: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub noise_std: f64,
    /// Pairs generated when the trainer creates its own data.
    pub n_pairs: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self { noise_std: 1.0, n_pairs: 10_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(rename = "K")]
    pub k: usize,
    pub d: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_leaf: f64,
    pub lr_prob: f64,
    pub lr_floor: f64,
    pub patience: usize,
    pub optimizer: OptimizerMode,
    pub epsilon: EpsilonSchedule,
    pub sampler: SamplerConfig,
    pub model: ModelConfig,
    pub task: TaskConfig,
    pub val_fraction: f64,
    pub seed: u64,
}

/// On-disk shape: `[layout]` holds the required `K` and `d`.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    layout: Option<RawLayout>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr_leaf: Option<f64>,
    lr_prob: Option<f64>,
    lr_floor: Option<f64>,
    patience: Option<usize>,
    optimizer: Option<RawOptimizer>,
    epsilon: Option<RawEpsilon>,
    sampler: Option<SamplerConfig>,
    model: Option<ModelConfig>,
    task: Option<TaskConfig>,
    val_fraction: Option<f64>,
    seed: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLayout {
    #[serde(rename = "K")]
    k: Option<usize>,
    d: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOptimizer {
    kind: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEpsilon {
    eps0: Option<f64>,
    t0: Option<usize>,
}

impl TrainConfig {
    /// Defaults for everything except the layout.
    pub fn new(k: usize, d: usize) -> Self {
        Self {
            k,
            d,
            epochs: 70,
            batch_size: 32,
            lr_leaf: 1e-3,
            lr_prob: 2e-4,
            lr_floor: 5e-6,
            patience: 10,
            optimizer: OptimizerMode::adam(),
            epsilon: EpsilonSchedule::default(),
            sampler: SamplerConfig::default(),
            model: ModelConfig::default(),
            task: TaskConfig::default(),
            val_fraction: 0.1,
            seed: 0,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::config("config", e.message().to_string()))?;
        let layout = raw.layout.ok_or_else(|| Error::config("layout.K", "missing required field"))?;
        let k = layout.k.ok_or_else(|| Error::config("layout.K", "missing required field"))?;
        let d = layout.d.ok_or_else(|| Error::config("layout.d", "missing required field"))?;
        let mut c = Self::new(k, d);
        if let Some(v) = raw.epochs {
            c.epochs = v;
        }
        if let Some(v) = raw.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = raw.lr_leaf {
            c.lr_leaf = v;
        }
        if let Some(v) = raw.lr_prob {
            c.lr_prob = v;
        }
        if let Some(v) = raw.lr_floor {
            c.lr_floor = v;
        }
        if let Some(v) = raw.patience {
            c.patience = v;
        }
        if let Some(o) = raw.optimizer {
            c.optimizer = match o.kind.as_str() {
                "adam" => OptimizerMode::adam(),
                "sgd" => OptimizerMode::sgd(),
                other => return Err(Error::config("optimizer.kind", format!("unknown optimizer {other:?}"))),
            };
        }
        if let Some(e) = raw.epsilon {
            c.epsilon = EpsilonSchedule {
                eps0: e.eps0.unwrap_or(c.epsilon.eps0),
                t0: e.t0.unwrap_or(c.epsilon.t0),
            };
        }
        if let Some(v) = raw.sampler {
            c.sampler = v;
        }
        if let Some(v) = raw.model {
            c.model = v;
        }
        if let Some(v) = raw.task {
            c.task = v;
        }
        if let Some(v) = raw.val_fraction {
            c.val_fraction = v;
        }
        if let Some(v) = raw.seed {
            c.seed = v;
        }
        Ok(c)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        let opt = self.optimizer.name();
        let act = self.sampler.activation_epoch.map(|e| format!("activation_epoch = {e}\n")).unwrap_or_default();
        format!(
            "epochs = {}\nbatch_size = {}\nlr_leaf = {:e}\nlr_prob = {:e}\nlr_floor = {:e}\npatience = {}\nval_fraction = {}\nseed = {}\n\n\
             [layout]\nK = {}\nd = {}\n\n[optimizer]\nkind = \"{opt}\"\n\n[epsilon]\neps0 = {:?}\nt0 = {}\n\n\
             [sampler]\nenabled = {}\nlambda = {:e}\n{act}\n[model]\nhidden = {}\nlayers = {}\n\n[task]\nnoise_std = {:?}\nn_pairs = {}\n",
            self.epochs,
            self.batch_size,
            self.lr_leaf,
            self.lr_prob,
            self.lr_floor,
            self.patience,
            self.val_fraction,
            self.seed,
            self.k,
            self.d,
            self.epsilon.eps0,
            self.epsilon.t0,
            self.sampler.enabled,
            self.sampler.lambda,
            self.model.hidden,
            self.model.layers,
            self.task.noise_std,
            self.task.n_pairs,
        )
    }

    /// Short content hash of the resolved configuration.
    pub fn hash(&self) -> String {
        content_hash(serde_json::to_string(self).expect("config serialises").as_bytes())
    }

    pub fn layout(&self) -> Result<TreeLayout> {
        TreeLayout::new(self.k, self.d).map_err(|e| Error::config("layout.K", e.to_string()))
    }

    pub fn sampler_start(&self) -> usize {
        self.sampler.activation_epoch.unwrap_or(self.epsilon.t0 + 1)
    }

    /// Checks every field; returns warnings for legal but suspicious settings.
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.k == 0 {
            return Err(Error::config("layout.K", "must be at least 1"));
        }
        if self.d == 0 {
            return Err(Error::config("layout.d", "must be at least 1"));
        }
        if self.k == 1 && self.d != 1 {
            return Err(Error::config("layout.d", "K = 1 is only allowed with d = 1"));
        }
        self.layout()?;
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(name, format!("must be positive and finite, got {v}")))
            }
        };
        positive("lr_leaf", self.lr_leaf)?;
        positive("lr_prob", self.lr_prob)?;
        positive("lr_floor", self.lr_floor)?;
        positive("epsilon.eps0", self.epsilon.eps0)?;
        positive("sampler.lambda", self.sampler.lambda)?;
        if self.lr_floor > self.lr_leaf.min(self.lr_prob) {
            return Err(Error::config("lr_floor", "exceeds an initial learning rate"));
        }
        if !(self.task.noise_std.is_finite() && self.task.noise_std >= 0.0) {
            return Err(Error::config("task.noise_std", "must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::config("val_fraction", "must lie in [0, 1)"));
        }
        if self.model.hidden == 0 || self.model.layers == 0 {
            return Err(Error::config("model", "hidden width and layer count must be positive"));
        }
        if self.sampler_start() <= self.epsilon.t0 {
            return Err(Error::config("sampler.activation_epoch", "must come after epsilon.t0"));
        }
        if let OptimizerMode::Sgd { momentum } = self.optimizer {
            if !(0.0..1.0).contains(&momentum) {
                return Err(Error::config("optimizer.momentum", "must lie in [0, 1)"));
            }
        }
        let mut warnings = Vec::new();
        if self.epsilon.t0 >= self.epochs {
            warnings.push(format!("epsilon never decays: t0 = {} but only {} epochs", self.epsilon.t0, self.epochs));
        }
        Ok(warnings)
    }
}
