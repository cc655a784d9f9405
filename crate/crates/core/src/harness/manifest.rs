use std::path::Path;

use crate::dataset::{Scope, SplitPlan};
use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::model::{LossMode, ModelConfig};
use crate::preprocess::PreprocessConfig;
use crate::tensor::AdamConfig;

/// Everything that determines a training run. Serialized as `key=value`
/// text; the keys match the CLI flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub model: ModelConfig,
    pub preprocess: PreprocessConfig,
    pub split: SplitPlan,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub loss_mode: LossMode,
}

impl RunManifest {
    /// Defaults: 100 epochs, batch 512, Adam defaults, three-term loss.
    /// The preprocessing window follows the model's.
    pub fn new(model: ModelConfig, split: SplitPlan, seed: u64) -> Self {
        let preprocess = PreprocessConfig {
            window_ms: model.window_ms,
            ..PreprocessConfig::default()
        };
        Self {
            model,
            preprocess,
            split,
            seed,
            epochs: 100,
            batch_size: 512,
            adam: AdamConfig::default(),
            loss_mode: LossMode::ThreeTerm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.preprocess.validate()?;
        self.split.validate()?;
        if self.preprocess.window_ms != self.model.window_ms {
            return Err(Error::Config(format!(
                "preprocessing window {} ms differs from model window {} ms",
                self.preprocess.window_ms, self.model.window_ms
            )));
        }
        if self.model.n_classes != self.split.scope.n_classes() {
            return Err(Error::Config(format!(
                "model has {} classes but scope {} has {}",
                self.model.n_classes,
                self.split.scope,
                self.split.scope.n_classes()
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.loss_mode == LossMode::FusedOnly && !self.model.is_hybrid() {
            return Err(Error::Config("fused-only loss needs a hybrid model".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        self.model.write_kv(&mut kv);
        self.preprocess.write_kv(&mut kv);
        let join = |r: &[u16]| {
            r.iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(",")
        };
        kv.set("train_reps", join(&self.split.train_reps));
        kv.set("test_reps", join(&self.split.test_reps));
        kv.set("scope", self.split.scope);
        kv.set("seed", self.seed);
        kv.set("epochs", self.epochs);
        kv.set("batch_size", self.batch_size);
        kv.set("lr", self.adam.lr);
        kv.set("beta1", self.adam.beta1);
        kv.set("beta2", self.adam.beta2);
        kv.set("adam_eps", self.adam.eps);
        kv.set("weight_decay", self.adam.weight_decay);
        kv.set("loss", self.loss_mode);
        kv
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let model = ModelConfig::from_kv(kv)?;
        let scope: Scope = kv.require("scope")?;
        let mut m = Self::new(model, SplitPlan::with_scope(scope), kv.require("seed")?);
        m.preprocess = PreprocessConfig::from_kv(kv)?;
        let reps = |key: &str| -> Result<Option<Vec<u16>>> {
            kv.get_str(key)
                .map(|raw| {
                    raw.split(',')
                        .map(|r| r.trim().parse())
                        .collect::<Result<Vec<u16>, _>>()
                        .map_err(|_| Error::Config(format!("bad {key} {raw:?}")))
                })
                .transpose()
        };
        if let Some(r) = reps("train_reps")? {
            m.split.train_reps = r;
        }
        if let Some(r) = reps("test_reps")? {
            m.split.test_reps = r;
        }
        if let Some(v) = kv.get("epochs")? {
            m.epochs = v;
        }
        if let Some(v) = kv.get("batch_size")? {
            m.batch_size = v;
        }
        if let Some(v) = kv.get("lr")? {
            m.adam.lr = v;
        }
        if let Some(v) = kv.get("beta1")? {
            m.adam.beta1 = v;
        }
        if let Some(v) = kv.get("beta2")? {
            m.adam.beta2 = v;
        }
        if let Some(v) = kv.get("adam_eps")? {
            m.adam.eps = v;
        }
        if let Some(v) = kv.get("weight_decay")? {
            m.adam.weight_decay = v;
        }
        if let Some(v) = kv.get("loss")? {
            m.loss_mode = v;
        }
        m.validate()?;
        Ok(m)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_kv().write(path)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv(&KeyValues::read(path)?)
    }
}
