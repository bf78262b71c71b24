//! Distribution learning: a cognitive predictor maps speaker features to a
//! grid of latent means, the REGNN maps appropriate listener reactions into
//! the same latent space, and reverse inference decodes sampled latents back
//! into reaction clips.

mod checkpoint;
mod predictor;
mod train;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::gmgd::{ComponentMode, GaussianMixtureGraphDistribution, DEFAULT_SIGMA};
use crate::graph::{clip_nodes, graph_to_clip, AttributeGraph, EdgeSet, ReactionClip, TemporalBasis};
use crate::mefl::MeflBlock;
use crate::numeric::{Matrix, Rng};
use crate::regnn::{RegnnModel, ReverseOptions, DEFAULT_LIPSCHITZ_TARGET};

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use predictor::CognitivePredictor;
pub use train::{EpochRecord, GroupCheck, Trainer, LOSS_CSV_HEADER};

/// How the two losses share optimizer steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// One step on the weighted sum of both losses.
    #[default]
    Joint,
    /// Even steps: alignment loss on MEFL and REGNN. Odd steps: distribution
    /// loss on the predictor.
    Alternating,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// 0-based epoch indices at which the rate is multiplied by `lr_decay_factor`.
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    pub sigma: f64,
    pub seed: u64,
    pub loss_weight_l1: f64,
    pub loss_weight_mse: f64,
    pub batch_size: usize,
    pub schedule: Schedule,
    pub lipschitz_target: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 5e-4,
            epochs: 100,
            lr_decay_epochs: vec![20, 50],
            lr_decay_factor: 0.1,
            sigma: DEFAULT_SIGMA,
            seed: 0,
            loss_weight_l1: 1.0,
            loss_weight_mse: 1.0,
            batch_size: 4,
            schedule: Schedule::Joint,
            lipschitz_target: DEFAULT_LIPSCHITZ_TARGET,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::domain(format!("{name} must be finite and >= 0, got {v}")))
            }
        };
        nonneg("learning_rate", self.learning_rate)?;
        nonneg("weight_decay", self.weight_decay)?;
        nonneg("loss_weight_l1", self.loss_weight_l1)?;
        nonneg("loss_weight_mse", self.loss_weight_mse)?;
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::domain("lr_decay_factor must lie in (0, 1]"));
        }
        if self.epochs == 0 {
            return Err(Error::domain("epochs must be positive"));
        }
        if self.lr_decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain("lr_decay_epochs must be strictly increasing"));
        }
        if let Some(&last) = self.lr_decay_epochs.last() {
            if last >= self.epochs {
                return Err(Error::domain(format!(
                    "lr decay epoch {last} is not below epochs = {}",
                    self.epochs
                )));
            }
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::domain("sigma must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::domain("batch_size must be positive"));
        }
        if !(self.lipschitz_target > 0.0 && self.lipschitz_target < 1.0) {
            return Err(Error::domain("lipschitz_target must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Step size in effect during 0-based `epoch`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let decays = self.lr_decay_epochs.iter().filter(|&&m| epoch >= m).count();
        self.learning_rate * self.lr_decay_factor.powi(decays as i32)
    }
}

/// Shapes shared by every model in a [`ModelState`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Attributes per clip, one graph node each.
    pub attributes: usize,
    pub frames: usize,
    /// Temporal basis size `D`.
    pub node_dim: usize,
    pub edge_dim: usize,
    pub att_dim: usize,
    /// Retained outgoing edges per node.
    pub top_k: usize,
    pub layers: usize,
    /// Listener reactions per behaviour, also the mixture size.
    pub components: usize,
    pub hidden: usize,
    /// Decode with a second, independently initialised MEFL block instead of
    /// the trained one.
    #[serde(default)]
    pub separate_latent_mefl: bool,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            attributes: 8,
            frames: 64,
            node_dim: 8,
            edge_dim: 4,
            att_dim: 8,
            top_k: 3,
            layers: 4,
            components: 4,
            hidden: 32,
            separate_latent_mefl: false,
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.attributes < 2 {
            return Err(Error::domain("at least 2 attributes are required"));
        }
        if self.node_dim == 0 || self.node_dim > self.frames {
            return Err(Error::domain("node_dim must lie in 1..=frames"));
        }
        if self.top_k == 0 || self.top_k >= self.attributes {
            return Err(Error::domain("top_k must lie in 1..attributes"));
        }
        if self.edge_dim == 0 || self.att_dim == 0 || self.layers == 0 || self.hidden == 0 {
            return Err(Error::domain("edge_dim, att_dim, layers, hidden must be positive"));
        }
        if self.components < 2 {
            return Err(Error::domain("components must be at least 2"));
        }
        Ok(())
    }

    /// Length of the speaker feature vector.
    pub fn feature_dim(&self) -> usize {
        self.attributes * self.node_dim
    }

    /// Width `P = M·D` of each predictor head.
    pub fn grid_width(&self) -> usize {
        self.components * self.node_dim
    }
}

/// One speaker clip and its appropriate listener reactions.
#[derive(Clone, Debug, PartialEq)]
pub struct Behavior {
    pub id: String,
    pub speaker: ReactionClip,
    pub listeners: Vec<ReactionClip>,
}

/// A named contiguous slice of the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamGroup {
    pub name: String,
    pub range: Range<usize>,
}

/// Every learned or fixed model component.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub dims: ModelDims,
    pub basis: TemporalBasis,
    pub mefl: MeflBlock,
    /// Builds initial edges of sampled latents when present. Never trained.
    pub latent_mefl: Option<MeflBlock>,
    pub regnn: RegnnModel,
    pub predictor: CognitivePredictor,
}

impl ModelState {
    /// Random initialisation with every REGNN layer enforced to `target`.
    pub fn init(dims: ModelDims, target: f64, rng: &mut Rng) -> Result<Self> {
        dims.validate()?;
        let basis = TemporalBasis::dct(dims.frames, dims.node_dim)?;
        let mefl = MeflBlock::random(dims.node_dim, dims.edge_dim, dims.att_dim, 1.0, rng);
        let regnn = RegnnModel::random(dims.layers, dims.node_dim, dims.edge_dim, 1.0, target, rng)?;
        let predictor = CognitivePredictor::random(
            dims.feature_dim(),
            dims.hidden,
            dims.attributes,
            dims.grid_width(),
            0.01,
            rng,
        );
        let latent_mefl = dims
            .separate_latent_mefl
            .then(|| MeflBlock::random(dims.node_dim, dims.edge_dim, dims.att_dim, 1.0, rng));
        Ok(Self {
            dims,
            basis,
            mefl,
            latent_mefl,
            regnn,
            predictor,
        })
    }

    pub fn param_count(&self) -> usize {
        self.mefl.param_count() + self.regnn.param_count() + self.predictor.param_count()
    }

    /// MEFL, then REGNN layers in order, then the predictor.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        p.extend_from_slice(self.mefl.weights());
        for layer in self.regnn.layers() {
            p.extend_from_slice(layer.weights());
        }
        p.extend_from_slice(self.predictor.weights());
        p
    }

    /// Inverse of [`ModelState::flat_params`]. Leaves every REGNN layer unenforced.
    pub fn set_flat_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.param_count() {
            return Err(Error::domain(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                p.len()
            )));
        }
        let (mefl, mut rest) = p.split_at(self.mefl.param_count());
        self.mefl.set_weights(mefl)?;
        for layer in self.regnn.layers_mut() {
            let (w, tail) = rest.split_at(layer.param_count());
            layer.set_weights(w)?;
            rest = tail;
        }
        self.predictor.set_weights(rest)
    }

    /// Coarse groups: `mefl`, `regnn`, `predictor`.
    pub fn module_groups(&self) -> Vec<ParamGroup> {
        let a = self.mefl.param_count();
        let b = a + self.regnn.param_count();
        let c = b + self.predictor.param_count();
        vec![
            ParamGroup { name: "mefl".into(), range: 0..a },
            ParamGroup { name: "regnn".into(), range: a..b },
            ParamGroup { name: "predictor".into(), range: b..c },
        ]
    }

    /// Fine groups: MEFL, each layer's `W_q`, `W_m`, `W_e`, and the predictor.
    pub fn param_groups(&self) -> Vec<ParamGroup> {
        let mut groups = vec![ParamGroup {
            name: "mefl".into(),
            range: 0..self.mefl.param_count(),
        }];
        let mut off = self.mefl.param_count();
        let sq = self.dims.node_dim * self.dims.node_dim;
        for (n, layer) in self.regnn.layers().iter().enumerate() {
            for (name, len) in [("w_q", sq), ("w_m", sq), ("w_e", layer.edge_dim())] {
                groups.push(ParamGroup {
                    name: format!("regnn.{n}.{name}"),
                    range: off..off + len,
                });
                off += len;
            }
        }
        groups.push(ParamGroup {
            name: "predictor".into(),
            range: off..off + self.predictor.param_count(),
        });
        groups
    }

    /// Speaker feature vector: basis coefficients of each centred attribute
    /// series, concatenated over attributes.
    pub fn featurize(&self, speaker: &ReactionClip) -> Result<Vec<f64>> {
        featurize(speaker, &self.basis)
    }

    /// Listener clip → graph with MEFL edges.
    pub fn encode(&self, clip: &ReactionClip) -> Result<AttributeGraph> {
        crate::graph::clip_to_graph(clip, &self.basis, &self.mefl, self.dims.top_k)
    }

    /// Latent graphs for the appropriate reactions of one behaviour.
    pub fn latents(&self, listeners: &[ReactionClip]) -> Result<Vec<AttributeGraph>> {
        listeners
            .iter()
            .map(|c| self.regnn.forward(&self.encode(c)?))
            .collect()
    }

    /// Predicted mixture for a speaker clip.
    pub fn predict_distribution(&self, speaker: &ReactionClip, sigma: f64) -> Result<GaussianMixtureGraphDistribution> {
        let grid = self.predictor.predict(&self.featurize(speaker)?)?;
        GaussianMixtureGraphDistribution::from_flat(&grid, self.dims.node_dim, sigma)
    }

    /// Decodes one latent node matrix. Initial edges come from MEFL applied to
    /// the latent itself.
    pub fn decode(&self, latent: Matrix, opts: &ReverseOptions) -> Result<ReactionClip> {
        let tensor = self.latent_mefl.as_ref().unwrap_or(&self.mefl).edges(&latent)?;
        let edges = EdgeSet::from_tensor(&tensor, self.dims.top_k)?;
        let graph = AttributeGraph::new(latent, edges, self.dims.top_k)?;
        let nodes = self.regnn.reverse(&graph, opts)?;
        graph_to_clip(&nodes, &self.basis)
    }

    /// `n_samples` reactions to `speaker`. Each reverse pass draws its start
    /// point seed from `rng`.
    pub fn predict_reactions(
        &self,
        speaker: &ReactionClip,
        n_samples: usize,
        sigma: f64,
        mode: ComponentMode,
        opts: &ReverseOptions,
        rng: &mut Rng,
    ) -> Result<Vec<ReactionClip>> {
        let dist = self.predict_distribution(speaker, sigma)?;
        (0..n_samples)
            .map(|index| {
                let latent = dist.sample(rng, mode);
                let sample_opts = ReverseOptions {
                    seed: rng.next_u64(),
                    ..*opts
                };
                self.decode(latent, &sample_opts)
                    .map(|mut c| {
                        c.clip_id = format!("{}#{index}", speaker.clip_id);
                        c
                    })
                    .map_err(|e| Error::Sample {
                        index,
                        source: Box::new(e),
                    })
            })
            .collect()
    }

    /// Loss terms of one behaviour for an external parameter vector.
    pub(crate) fn behavior_losses<S: Real>(&self, params: &[S], item: &Prepared) -> Result<(S, S)> {
        let (i, d) = (self.dims.attributes, self.dims.node_dim);
        let (mefl_w, rest) = params.split_at(self.mefl.param_count());
        let (regnn_w, pred_w) = rest.split_at(self.regnn.param_count());
        let latents = item
            .listener_nodes
            .iter()
            .map(|x| {
                let nodes: Vec<S> = x.iter().map(|&v| S::constant(v)).collect();
                let tensor = self.mefl.edges_with(mefl_w, &nodes, i);
                let edges = EdgeSet::from_tensor(&tensor, self.dims.top_k)?;
                self.regnn.forward_with(regnn_w, nodes, i, &edges).map(|(z, _)| z)
            })
            .collect::<Result<Vec<_>>>()?;
        let l1 = pairwise_l1_with(&latents)?;
        let target = flat_grid(&latents, i, d);
        let predicted = self.predictor.forward_with(pred_w, &item.features);
        Ok((l1, mse_with(&predicted, &target)))
    }

    /// Precomputes features and listener nodes; checks shapes against `dims`.
    pub(crate) fn prepare(&self, b: &Behavior) -> Result<Prepared> {
        if b.listeners.len() != self.dims.components {
            return Err(Error::domain(format!(
                "behaviour {} has {} listener clips, the model expects {}",
                b.id,
                b.listeners.len(),
                self.dims.components
            )));
        }
        let check = |c: &ReactionClip| {
            if c.attributes() != self.dims.attributes || c.frames() != self.dims.frames {
                Err(Error::domain(format!(
                    "clip {} is {}×{}, the model expects {}×{}",
                    c.clip_id,
                    c.attributes(),
                    c.frames(),
                    self.dims.attributes,
                    self.dims.frames
                )))
            } else {
                Ok(())
            }
        };
        check(&b.speaker)?;
        let listener_nodes = b
            .listeners
            .iter()
            .map(|c| {
                check(c)?;
                Ok(clip_nodes(c, &self.basis)?.into_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Prepared {
            features: self.featurize(&b.speaker)?,
            listener_nodes,
        })
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Prepared {
    pub features: Vec<f64>,
    /// Row-major `I × D` basis coefficients per listener clip.
    pub listener_nodes: Vec<Vec<f64>>,
}

pub fn featurize(speaker: &ReactionClip, basis: &TemporalBasis) -> Result<Vec<f64>> {
    if speaker.frames() != basis.frames() {
        return Err(Error::domain(format!(
            "speaker clip {} has {} frames, basis expects {}",
            speaker.clip_id,
            speaker.frames(),
            basis.frames()
        )));
    }
    Ok((0..speaker.attributes())
        .flat_map(|i| {
            let centred: Vec<f64> = speaker.series(i).iter().map(|v| v - 0.5).collect();
            basis.project(&centred)
        })
        .collect())
}

/// Sum over latent pairs `m1 < m2` of the elementwise absolute difference.
pub fn pairwise_l1_loss(latents: &[Matrix]) -> Result<f64> {
    if let Some(first) = latents.first() {
        if latents.iter().any(|l| l.shape() != first.shape()) {
            return Err(Error::domain("latents must share one shape"));
        }
    }
    let flat: Vec<Vec<f64>> = latents.iter().map(|l| l.as_slice().to_vec()).collect();
    pairwise_l1_with(&flat)
}

/// Mean squared elementwise difference between two equal-shape grids.
pub fn distribution_mse_loss(predicted: &Matrix, target: &Matrix) -> Result<f64> {
    if predicted.shape() != target.shape() {
        return Err(Error::domain(format!(
            "grid shapes differ: {:?} vs {:?}",
            predicted.shape(),
            target.shape()
        )));
    }
    Ok(mse_with(predicted.as_slice(), target.as_slice()))
}

/// Target grid for a set of latent node matrices: row `i` holds node `i` of
/// every latent in order.
pub fn target_grid(latents: &[Matrix]) -> Result<Matrix> {
    Ok(GaussianMixtureGraphDistribution::summarize(latents, DEFAULT_SIGMA)?.to_flat())
}

fn pairwise_l1_with<S: Real>(latents: &[Vec<S>]) -> Result<S> {
    if latents.len() < 2 {
        return Err(Error::domain(format!(
            "alignment loss needs at least 2 latents, got {}",
            latents.len()
        )));
    }
    let mut total = S::zero();
    for (m1, a) in latents.iter().enumerate() {
        for b in &latents[m1 + 1..] {
            total += a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).sum::<S>();
        }
    }
    Ok(total)
}

fn mse_with<S: Real>(a: &[S], b: &[S]) -> S {
    let n = a.len().max(1) as f64;
    a.iter().zip(b).map(|(&x, &y)| (x - y).square()).sum::<S>() / n
}

/// Layout of [`GaussianMixtureGraphDistribution::to_flat`] over raw latents.
fn flat_grid<S: Real>(latents: &[Vec<S>], nodes: usize, dim: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(nodes * latents.len() * dim);
    for i in 0..nodes {
        for z in latents {
            out.extend_from_slice(&z[i * dim..(i + 1) * dim]);
        }
    }
    out
}
