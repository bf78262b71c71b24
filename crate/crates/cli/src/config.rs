//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys, repeated
//! keys and unparsable values are rejected with the offending line number.
//! Lists are comma separated; an empty value means an empty list or an unset
//! path.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use regnn_core::afrdl::{ModelDims, Schedule, TrainConfig};
use regnn_core::gmgd::ComponentMode;
use regnn_core::regnn::ReverseOptions;

use crate::error::{CliError, Result};
use crate::synth::SynthSpec;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelDims,
    pub train: TrainConfig,
    /// Write an extra checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub behaviors: usize,
    pub modes: usize,
    pub noise: f64,
    pub samples: usize,
    pub component_mode: ComponentMode,
    pub reverse_tol: f64,
    pub reverse_max_iter: usize,
    /// `None` selects the frame-count default.
    pub tlcc_window: Option<usize>,
    pub corpus: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelDims::default(),
            train: TrainConfig::default(),
            checkpoint_every: 0,
            behaviors: 24,
            modes: 2,
            noise: 0.05,
            samples: 10,
            component_mode: ComponentMode::PerNode,
            reverse_tol: 1e-8,
            reverse_max_iter: 500,
            tlcc_window: None,
            corpus: None,
            output: None,
        }
    }
}

fn parse<T: FromStr>(field: &str, value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| format!("{field}: cannot parse {value:?}: {e}"))
}

fn path_value(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn path_text(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    /// Every key in serialisation order.
    pub const KEYS: &'static [&'static str] = &[
        "attributes",
        "frames",
        "node_dim",
        "edge_dim",
        "att_dim",
        "top_k",
        "layers",
        "components",
        "hidden",
        "separate_latent_mefl",
        "learning_rate",
        "weight_decay",
        "epochs",
        "lr_decay_epochs",
        "lr_decay_factor",
        "sigma",
        "seed",
        "loss_weight_l1",
        "loss_weight_mse",
        "batch_size",
        "schedule",
        "lipschitz_target",
        "checkpoint_every",
        "behaviors",
        "modes",
        "noise",
        "samples",
        "component_mode",
        "reverse_tol",
        "reverse_max_iter",
        "tlcc_window",
        "corpus",
        "output",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "attributes" => m.attributes = parse(key, value)?,
            "frames" => m.frames = parse(key, value)?,
            "node_dim" => m.node_dim = parse(key, value)?,
            "edge_dim" => m.edge_dim = parse(key, value)?,
            "att_dim" => m.att_dim = parse(key, value)?,
            "top_k" => m.top_k = parse(key, value)?,
            "layers" => m.layers = parse(key, value)?,
            "components" => m.components = parse(key, value)?,
            "hidden" => m.hidden = parse(key, value)?,
            "separate_latent_mefl" => m.separate_latent_mefl = parse(key, value)?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "weight_decay" => t.weight_decay = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "lr_decay_epochs" => {
                t.lr_decay_epochs = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_, _>>()?
            }
            "lr_decay_factor" => t.lr_decay_factor = parse(key, value)?,
            "sigma" => t.sigma = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "loss_weight_l1" => t.loss_weight_l1 = parse(key, value)?,
            "loss_weight_mse" => t.loss_weight_mse = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "schedule" => {
                t.schedule = match value {
                    "joint" => Schedule::Joint,
                    "alternating" => Schedule::Alternating,
                    _ => return Err(format!("schedule: expected joint or alternating, got {value:?}")),
                }
            }
            "lipschitz_target" => t.lipschitz_target = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "behaviors" => self.behaviors = parse(key, value)?,
            "modes" => self.modes = parse(key, value)?,
            "noise" => self.noise = parse(key, value)?,
            "samples" => self.samples = parse(key, value)?,
            "component_mode" => {
                self.component_mode = match value {
                    "per_node" => ComponentMode::PerNode,
                    "global" => ComponentMode::Global,
                    _ => return Err(format!("component_mode: expected per_node or global, got {value:?}")),
                }
            }
            "reverse_tol" => self.reverse_tol = parse(key, value)?,
            "reverse_max_iter" => self.reverse_max_iter = parse(key, value)?,
            "tlcc_window" => {
                self.tlcc_window = match value {
                    "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "corpus" => self.corpus = path_value(value),
            "output" => self.output = path_value(value),
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let (m, t) = (&self.model, &self.train);
        Some(match key {
            "attributes" => m.attributes.to_string(),
            "frames" => m.frames.to_string(),
            "node_dim" => m.node_dim.to_string(),
            "edge_dim" => m.edge_dim.to_string(),
            "att_dim" => m.att_dim.to_string(),
            "top_k" => m.top_k.to_string(),
            "layers" => m.layers.to_string(),
            "components" => m.components.to_string(),
            "hidden" => m.hidden.to_string(),
            "separate_latent_mefl" => m.separate_latent_mefl.to_string(),
            "learning_rate" => t.learning_rate.to_string(),
            "weight_decay" => t.weight_decay.to_string(),
            "epochs" => t.epochs.to_string(),
            "lr_decay_epochs" => t
                .lr_decay_epochs
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
            "lr_decay_factor" => t.lr_decay_factor.to_string(),
            "sigma" => t.sigma.to_string(),
            "seed" => t.seed.to_string(),
            "loss_weight_l1" => t.loss_weight_l1.to_string(),
            "loss_weight_mse" => t.loss_weight_mse.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "schedule" => match t.schedule {
                Schedule::Joint => "joint".into(),
                Schedule::Alternating => "alternating".into(),
            },
            "lipschitz_target" => t.lipschitz_target.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "behaviors" => self.behaviors.to_string(),
            "modes" => self.modes.to_string(),
            "noise" => self.noise.to_string(),
            "samples" => self.samples.to_string(),
            "component_mode" => match self.component_mode {
                ComponentMode::PerNode => "per_node".into(),
                ComponentMode::Global => "global".into(),
            },
            "reverse_tol" => self.reverse_tol.to_string(),
            "reverse_max_iter" => self.reverse_max_iter.to_string(),
            "tlcc_window" => self
                .tlcc_window
                .map(|w| w.to_string())
                .unwrap_or_else(|| "auto".into()),
            "corpus" => path_text(&self.corpus),
            "output" => path_text(&self.output),
            _ => return None,
        })
    }

    /// Parses `text`, starting from the defaults. `origin` labels diagnostics.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| CliError::Config {
                path: origin.to_string(),
                line: n + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(err(format!("duplicate key {key:?}")));
            }
            cfg.set(key, value.trim()).map_err(err)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("listed key"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let field = |f: &str, message: String| CliError::Field {
            field: f.to_string(),
            message,
        };
        self.model
            .validate()
            .map_err(|e| field("model", e.to_string()))?;
        self.train
            .validate()
            .map_err(|e| field("training", e.to_string()))?;
        if self.behaviors == 0 {
            return Err(field("behaviors", "must be positive".into()));
        }
        if self.modes == 0 {
            return Err(field("modes", "must be positive".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(field("noise", "must be finite and >= 0".into()));
        }
        if self.samples == 0 {
            return Err(field("samples", "must be positive".into()));
        }
        if !(self.reverse_tol > 0.0 && self.reverse_tol.is_finite()) {
            return Err(field("reverse_tol", "must be positive".into()));
        }
        if self.reverse_max_iter == 0 {
            return Err(field("reverse_max_iter", "must be positive".into()));
        }
        if let Some(w) = self.tlcc_window {
            if w + 2 > self.model.frames {
                return Err(field("tlcc_window", format!("{w} is too large for {} frames", self.model.frames)));
            }
        }
        Ok(())
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            attributes: self.model.attributes,
            frames: self.model.frames,
            behaviors: self.behaviors,
            reactions: self.model.components,
            modes: self.modes,
            noise: self.noise,
            seed: self.train.seed,
        }
    }

    pub fn reverse_options(&self) -> ReverseOptions {
        ReverseOptions {
            tol: self.reverse_tol,
            max_iter: self.reverse_max_iter,
            seed: self.train.seed,
        }
    }
}
