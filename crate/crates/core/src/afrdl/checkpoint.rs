use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{CognitivePredictor, EpochRecord, ModelDims, ModelState, TrainConfig, Trainer};
use crate::error::{Error, Result};
use crate::graph::TemporalBasis;
use crate::mefl::MeflBlock;
use crate::numeric::{Matrix, Rng};
use crate::regnn::{LipschitzBudget, RegnnLayer, RegnnModel};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Little-endian `f64` array, base64 encoded, with its shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: String,
}

impl Tensor {
    fn encode(shape: Vec<usize>, values: &[f64]) -> Self {
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self {
            shape,
            data: STANDARD.encode(bytes),
        }
    }

    fn decode(&self, name: &str) -> Result<Vec<f64>> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Checkpoint(format!("{name}: byte length {} is not a multiple of 8", bytes.len())));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let expected: usize = self.shape.iter().product();
        if values.len() != expected {
            return Err(Error::Checkpoint(format!(
                "{name}: shape {:?} needs {expected} values, found {}",
                self.shape,
                values.len()
            )));
        }
        Ok(values)
    }
}

/// Complete training snapshot: parameters, frozen statistics, budgets,
/// optimizer moments, configuration and RNG state.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub dims: ModelDims,
    pub config: TrainConfig,
    pub epoch: usize,
    pub optimizer_step: u64,
    pub rng: Rng,
    pub history: Vec<EpochRecord>,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Self = serde_json::from_str(text)?;
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {} (expected {CHECKPOINT_FORMAT_VERSION})",
                ckpt.format_version
            )));
        }
        Ok(ckpt)
    }

    fn tensor(&self, name: &str) -> Result<Vec<f64>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?
            .decode(name)
    }

    /// Rebuilds the model, restoring budgets verbatim.
    pub fn model_state(&self) -> Result<ModelState> {
        let dims = self.dims;
        dims.validate()?;
        let basis = TemporalBasis::from_matrix(Matrix::new(dims.node_dim, dims.frames, self.tensor("basis")?)?)?;
        let mefl = MeflBlock::new(dims.node_dim, dims.edge_dim, dims.att_dim, self.tensor("mefl.weights")?)?;
        let latent_mefl = if dims.separate_latent_mefl {
            Some(MeflBlock::new(
                dims.node_dim,
                dims.edge_dim,
                dims.att_dim,
                self.tensor("mefl_latent.weights")?,
            )?)
        } else {
            None
        };
        let layers = (0..dims.layers)
            .map(|n| {
                let mut layer = RegnnLayer::new(n, dims.node_dim, dims.edge_dim, self.tensor(&format!("regnn.{n}.weights"))?)?;
                layer.set_normalization(
                    &self.tensor(&format!("regnn.{n}.norm_mean"))?,
                    &self.tensor(&format!("regnn.{n}.norm_std"))?,
                )?;
                if self.tensors.contains_key(&format!("regnn.{n}.budget")) {
                    let b = self.tensor(&format!("regnn.{n}.budget"))?;
                    if b.len() != 5 {
                        return Err(Error::Checkpoint(format!("regnn.{n}.budget must hold 5 values")));
                    }
                    layer.restore_budget(LipschitzBudget {
                        spectral_norm: b[0],
                        denominator: b[1],
                        sigmoid_slope: b[2],
                        bound: b[3],
                        target: b[4],
                    });
                }
                Ok(layer)
            })
            .collect::<Result<Vec<_>>>()?;
        let predictor = CognitivePredictor::new(
            dims.feature_dim(),
            dims.hidden,
            dims.attributes,
            dims.grid_width(),
            self.tensor("predictor.weights")?,
        )?;
        Ok(ModelState {
            dims,
            basis,
            mefl,
            latent_mefl,
            regnn: RegnnModel::new(layers)?,
            predictor,
        })
    }
}

fn state_tensors(state: &ModelState) -> BTreeMap<String, Tensor> {
    let mut t = BTreeMap::new();
    let basis = state.basis.matrix();
    t.insert("basis".into(), Tensor::encode(vec![basis.rows(), basis.cols()], basis.as_slice()));
    t.insert(
        "mefl.weights".into(),
        Tensor::encode(vec![state.mefl.param_count()], state.mefl.weights()),
    );
    if let Some(m) = &state.latent_mefl {
        t.insert("mefl_latent.weights".into(), Tensor::encode(vec![m.param_count()], m.weights()));
    }
    for (n, layer) in state.regnn.layers().iter().enumerate() {
        t.insert(
            format!("regnn.{n}.weights"),
            Tensor::encode(vec![layer.param_count()], layer.weights()),
        );
        let (mean, std) = layer.normalization();
        t.insert(format!("regnn.{n}.norm_mean"), Tensor::encode(vec![mean.len()], mean));
        t.insert(format!("regnn.{n}.norm_std"), Tensor::encode(vec![std.len()], std));
        if let Some(b) = layer.budget() {
            t.insert(
                format!("regnn.{n}.budget"),
                Tensor::encode(vec![5], &[b.spectral_norm, b.denominator, b.sigmoid_slope, b.bound, b.target]),
            );
        }
    }
    t.insert(
        "predictor.weights".into(),
        Tensor::encode(vec![state.predictor.param_count()], state.predictor.weights()),
    );
    t
}

impl Trainer {
    pub fn checkpoint(&self) -> Checkpoint {
        let mut tensors = state_tensors(&self.state);
        tensors.insert("optimizer.m".into(), Tensor::encode(vec![self.adam_m.len()], &self.adam_m));
        tensors.insert("optimizer.v".into(), Tensor::encode(vec![self.adam_v.len()], &self.adam_v));
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            dims: self.state.dims,
            config: self.config.clone(),
            epoch: self.epoch,
            optimizer_step: self.step,
            rng: self.rng.clone(),
            history: self.history.clone(),
            tensors,
        }
    }

    /// Resumes exactly where [`Trainer::checkpoint`] left off.
    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        ckpt.config.validate()?;
        let state = ckpt.model_state()?;
        if !state.regnn.is_enforced() {
            return Err(Error::Checkpoint("training checkpoint has unenforced layers".into()));
        }
        let n = state.param_count();
        let adam_m = ckpt.tensor("optimizer.m")?;
        let adam_v = ckpt.tensor("optimizer.v")?;
        if adam_m.len() != n || adam_v.len() != n {
            return Err(Error::Checkpoint(format!("optimizer moments must hold {n} values")));
        }
        Ok(Self {
            state,
            config: ckpt.config,
            epoch: ckpt.epoch,
            step: ckpt.optimizer_step,
            adam_m,
            adam_v,
            rng: ckpt.rng,
            history: ckpt.history,
        })
    }

    /// Replaces the configuration, for example to extend `epochs` on resume.
    pub fn set_config(&mut self, config: TrainConfig) -> Result<()> {
        config.validate()?;
        self.config = config;
        Ok(())
    }
}
