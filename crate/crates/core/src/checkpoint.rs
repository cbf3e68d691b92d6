//! Model checkpoints on top of the named-array [`Archive`].
//!
//! Metadata keys: `format = smgarn-checkpoint`, `dtype`, `epoch` (epochs
//! completed), `global_step`, `adam_step`, `adam_beta1`, `adam_beta2`,
//! `adam_eps`, every model setting as `model.<key>` and, when present, every
//! training setting as `train.<key>`. Arrays: `param:<name>` for weights,
//! `adam_m:<name>` and `adam_v:<name>` for the optimizer moments.

use std::path::Path;

use indexmap::IndexMap;
use smgarn_autograd::{Adam, AdamConfig, DType, Element, ParamStore};

use crate::archive::Archive;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Smgarn};
use crate::training::TrainConfig;

pub const FORMAT: &str = "smgarn-checkpoint";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T: Element> {
    pub model: Smgarn<T>,
    pub optimizer: Adam<T>,
    pub epoch: usize,
    pub global_step: u64,
    pub train: Option<TrainConfig>,
}

fn meta_parse<V: std::str::FromStr>(ar: &Archive, key: &str) -> Result<V> {
    let raw = ar.require_meta(key)?;
    raw.parse()
        .map_err(|_| Error::Format(format!("bad value `{raw}` for metadata key `{key}`")))
}

impl<T: Element> Checkpoint<T> {
    pub fn fresh(model: Smgarn<T>) -> Self {
        Self {
            model,
            optimizer: Adam::new(AdamConfig::default()),
            epoch: 0,
            global_step: 0,
            train: None,
        }
    }

    pub fn to_archive(&self) -> Archive {
        let mut ar = Archive::new();
        ar.set_meta("format", FORMAT);
        ar.set_meta("dtype", T::DTYPE.name());
        ar.set_meta("epoch", self.epoch);
        ar.set_meta("global_step", self.global_step);
        ar.set_meta("adam_step", self.optimizer.step);
        ar.set_meta("adam_beta1", self.optimizer.config.beta1);
        ar.set_meta("adam_beta2", self.optimizer.config.beta2);
        ar.set_meta("adam_eps", self.optimizer.config.eps);
        for (k, v) in self.model.config.to_pairs() {
            ar.set_meta(format!("model.{k}"), v);
        }
        if let Some(train) = &self.train {
            for (k, v) in train.to_pairs() {
                ar.set_meta(format!("train.{k}"), v);
            }
        }
        for (name, t) in self.model.params.iter() {
            ar.push(format!("param:{name}"), t);
        }
        for (name, t) in &self.optimizer.first_moment {
            ar.push(format!("adam_m:{name}"), t);
        }
        for (name, t) in &self.optimizer.second_moment {
            ar.push(format!("adam_v:{name}"), t);
        }
        ar
    }

    pub fn from_archive(ar: &Archive) -> Result<Self> {
        if ar.meta("format") != Some(FORMAT) {
            return Err(Error::Checkpoint("not a model checkpoint".into()));
        }
        let model_pairs: Vec<(&str, &str)> = ar
            .meta
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("model.").map(|k| (k, v.as_str())))
            .collect();
        let config = ModelConfig::from_pairs(model_pairs).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let train_pairs: Vec<(String, String)> = ar
            .meta
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("train.").map(|k| (k.to_string(), v.clone())))
            .collect();
        let train = if train_pairs.is_empty() {
            None
        } else {
            let mut t = TrainConfig::default();
            for (k, v) in &train_pairs {
                if !t.set(k, v).map_err(Error::Checkpoint)? {
                    return Err(Error::Checkpoint(format!("unknown training key `{k}`")));
                }
            }
            Some(t)
        };

        let mut params = ParamStore::new();
        let mut first_moment = IndexMap::new();
        let mut second_moment = IndexMap::new();
        for (name, data) in &ar.arrays {
            if let Some(n) = name.strip_prefix("param:") {
                params.insert(n, data.to_array::<T>());
            } else if let Some(n) = name.strip_prefix("adam_m:") {
                first_moment.insert(n.to_string(), data.to_array::<T>());
            } else if let Some(n) = name.strip_prefix("adam_v:") {
                second_moment.insert(n.to_string(), data.to_array::<T>());
            } else {
                return Err(Error::Checkpoint(format!("unexpected array `{name}`")));
            }
        }
        let model = Smgarn::from_params(config, params)?;
        let optimizer = Adam {
            config: AdamConfig {
                beta1: meta_parse(ar, "adam_beta1")?,
                beta2: meta_parse(ar, "adam_beta2")?,
                eps: meta_parse(ar, "adam_eps")?,
            },
            step: meta_parse(ar, "adam_step")?,
            first_moment,
            second_moment,
        };
        Ok(Self {
            model,
            optimizer,
            epoch: meta_parse(ar, "epoch")?,
            global_step: meta_parse(ar, "global_step")?,
            train,
        })
    }

    /// Atomic write (temp file, then rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive().save(path)
    }

    /// Loads a checkpoint of any stored precision into element type `T`.
    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(&Archive::load(path)?)
    }
}

/// Precision a checkpoint file was written in.
pub fn stored_dtype(path: &Path) -> Result<DType> {
    let ar = Archive::load(path)?;
    match ar.require_meta("dtype")? {
        "f32" => Ok(DType::F32),
        "f64" => Ok(DType::F64),
        other => Err(Error::Format(format!("unknown dtype `{other}`"))),
    }
}

/// Canonical file name for the checkpoint written after `epoch` epochs.
pub fn epoch_file_name(epoch: usize) -> String {
    format!("ckpt_epoch{epoch:04}.tensors")
}
