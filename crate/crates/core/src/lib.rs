pub mod afrdl;
pub mod autodiff;
pub mod error;
pub mod gmgd;
pub mod graph;
pub mod invariants;
pub mod mefl;
pub mod metrics;
pub mod numeric;
pub mod regnn;

pub use error::{Error, Result};
pub use graph::{AttributeGraph, EdgeSet, EdgeTensor, ReactionClip, TemporalBasis};
pub use mefl::MeflBlock;
pub use numeric::{Matrix, Rng};
pub use regnn::{LipschitzBudget, RegnnLayer, RegnnModel, ReverseOptions};
pub use afrdl::{Behavior, Checkpoint, CognitivePredictor, ModelDims, ModelState, TrainConfig, Trainer};
pub use gmgd::{ComponentMode, GaussianMixtureGraphDistribution};
pub use metrics::MetricReport;
