//! Command implementations. Each returns the text printed on success.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use regnn_core::afrdl::{ModelDims, TrainConfig, LOSS_CSV_HEADER};
use regnn_core::invariants::{self, CheckResult};
use regnn_core::metrics::{self, EvalPair, MetricReport};
use regnn_core::{AttributeGraph, Behavior, Checkpoint, ModelState, ReactionClip, Rng, Trainer};

use crate::config::RunConfig;
use crate::corpus;
use crate::error::{CliError, Result};
use crate::synth::{self, SynthSpec};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LOSS_FILE: &str = "loss.csv";
pub const CONFIG_FILE: &str = "config.txt";

/// Contraction is probed on at most this many graphs; the cost is
/// graphs × layers × pairs.
pub const CONTRACTION_GRAPHS: usize = 8;
pub const CONTRACTION_PAIRS: usize = 1000;
pub const ROUND_TRIP_TOL: f64 = 1e-5;
pub const GRADIENT_STEP: f64 = 1e-6;
pub const GRADIENT_TOL: f64 = 1e-4;

/// Loads `path` (or the defaults) and applies a `--seed` override.
pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| fallback.clone()).ok_or_else(|| CliError::Field {
        field: name.into(),
        message: format!("no {name} given on the command line or in the config"),
    })
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_json(&corpus::read_text(path)?).map_err(|e| CliError::input(path, e.to_string()))
}

fn write_checkpoint(path: &Path, trainer: &Trainer) -> Result<()> {
    corpus::write_text(path, &(trainer.checkpoint().to_json()? + "\n"))
}

pub fn synth(cfg: &RunConfig, out: Option<PathBuf>) -> Result<String> {
    let dir = required(out, &cfg.output, "output")?;
    let data = synth::generate(&cfg.synth_spec())?;
    let manifest = corpus::write_corpus(&dir, &data)?;
    Ok(format!("wrote {} behaviours to {}", data.len(), manifest.display()))
}

/// Trains from scratch, or continues a checkpoint up to `cfg.train.epochs`.
/// Writes the final checkpoint, the loss log and the effective config to `out`.
pub fn train(cfg: &RunConfig, corpus_path: Option<PathBuf>, out: Option<PathBuf>, resume: Option<&Path>) -> Result<String> {
    let corpus_path = required(corpus_path, &cfg.corpus, "corpus")?;
    let dir = required(out, &cfg.output, "output")?;
    let data = corpus::read_corpus(&corpus_path)?;
    let mut trainer = match resume {
        Some(p) => {
            let ckpt = read_checkpoint(p)?;
            if ckpt.dims != cfg.model {
                return Err(CliError::Field {
                    field: "model".into(),
                    message: format!("checkpoint {} was trained with different model dimensions", p.display()),
                });
            }
            let mut t = Trainer::from_checkpoint(ckpt)?;
            t.set_config(cfg.train.clone())?;
            t
        }
        None => Trainer::new(cfg.model, cfg.train.clone(), &data)?,
    };
    while trainer.epoch() < cfg.train.epochs {
        let r = trainer.run_epoch(&data)?;
        eprintln!(
            "epoch {:>4}  alignment {:.6}  distribution {:.6}  total {:.6}",
            r.epoch, r.alignment, r.distribution, r.total
        );
        let done = trainer.epoch();
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.train.epochs {
            write_checkpoint(&dir.join(format!("checkpoint_epoch{done}.json")), &trainer)?;
        }
    }
    write_checkpoint(&dir.join(CHECKPOINT_FILE), &trainer)?;
    corpus::write_text(&dir.join(LOSS_FILE), &trainer.loss_csv())?;
    corpus::write_text(&dir.join(CONFIG_FILE), &cfg.to_text())?;
    Ok(format!(
        "trained {} epochs; checkpoint and {LOSS_FILE} ({LOSS_CSV_HEADER}) in {}",
        trainer.epoch(),
        dir.display()
    ))
}

/// `n` reactions per behaviour. Each behaviour draws from its own fork of the
/// seeded stream, in behaviour-id order.
pub fn predict_all(
    state: &ModelState,
    cfg: &RunConfig,
    data: &[Behavior],
    n: usize,
) -> Result<BTreeMap<String, Vec<ReactionClip>>> {
    let mut root = Rng::seed_from(cfg.train.seed);
    let opts = cfg.reverse_options();
    data.iter()
        .map(|b| {
            let mut rng = root.fork();
            let clips = state.predict_reactions(&b.speaker, n, cfg.train.sigma, cfg.component_mode, &opts, &mut rng)?;
            Ok((b.id.clone(), clips))
        })
        .collect()
}

pub fn predict(
    cfg: &RunConfig,
    checkpoint: &Path,
    corpus_path: Option<PathBuf>,
    out: Option<PathBuf>,
    samples: Option<usize>,
) -> Result<String> {
    let corpus_path = required(corpus_path, &cfg.corpus, "corpus")?;
    let dir = required(out, &cfg.output, "output")?;
    let state = read_checkpoint(checkpoint)?.model_state()?;
    let data = corpus::read_corpus(&corpus_path)?;
    let n = samples.unwrap_or(cfg.samples);
    let preds = predict_all(&state, cfg, &data, n)?;
    let manifest = corpus::write_predictions(&dir, &preds)?;
    Ok(format!("wrote {n} clips for each of {} behaviours to {}", preds.len(), manifest.display()))
}

pub fn sample(
    cfg: &RunConfig,
    checkpoint: &Path,
    speaker: &Path,
    out: &Path,
    samples: Option<usize>,
    distribution: Option<&Path>,
) -> Result<String> {
    let state = read_checkpoint(checkpoint)?.model_state()?;
    let clip = corpus::read_single_clip(speaker)?;
    let n = samples.unwrap_or(cfg.samples);
    let mut rng = Rng::seed_from(cfg.train.seed);
    let clips = state.predict_reactions(&clip, n, cfg.train.sigma, cfg.component_mode, &cfg.reverse_options(), &mut rng)?;
    corpus::write_clips(out, &clips)?;
    if let Some(p) = distribution {
        corpus::write_text(p, &(state.predict_distribution(&clip, cfg.train.sigma)?.to_json()? + "\n"))?;
    }
    Ok(format!("wrote {n} clips to {}", out.display()))
}

/// Pairs every corpus behaviour with its predictions.
pub fn eval_pairs(data: Vec<Behavior>, mut preds: BTreeMap<String, Vec<ReactionClip>>) -> Result<Vec<EvalPair>> {
    data.into_iter()
        .map(|b| {
            let generated = preds.remove(&b.id).ok_or_else(|| CliError::Field {
                field: "predictions".into(),
                message: format!("no predictions for behaviour {}", b.id),
            })?;
            Ok(EvalPair {
                speaker: b.speaker,
                generated,
                appropriate_real: b.listeners,
            })
        })
        .collect()
}

pub fn evaluate(cfg: &RunConfig, data: Vec<Behavior>, preds: BTreeMap<String, Vec<ReactionClip>>) -> Result<MetricReport> {
    Ok(metrics::evaluate(&eval_pairs(data, preds)?, cfg.tlcc_window)?)
}

pub fn eval(cfg: &RunConfig, predictions: &Path, corpus_path: Option<PathBuf>, out: Option<&Path>) -> Result<String> {
    let corpus_path = required(corpus_path, &cfg.corpus, "corpus")?;
    let report = evaluate(cfg, corpus::read_corpus(&corpus_path)?, corpus::read_predictions(predictions)?)?;
    let json = serde_json::to_string_pretty(&report).expect("report serialisation cannot fail") + "\n";
    match out {
        Some(p) => {
            corpus::write_text(p, &json)?;
            Ok(format!("wrote report to {}", p.display()))
        }
        None => Ok(json.trim_end().to_string()),
    }
}

/// Smallest shape on which every parameter group is exercised.
pub fn toy_dims() -> ModelDims {
    ModelDims {
        attributes: 2,
        frames: 8,
        node_dim: 2,
        edge_dim: 2,
        att_dim: 2,
        top_k: 1,
        layers: 1,
        components: 2,
        hidden: 4,
        separate_latent_mefl: false,
    }
}

/// Gradient check on the toy shape with corpus and weights seeded by `seed`.
pub fn toy_gradient_check(seed: u64) -> Result<CheckResult> {
    let dims = toy_dims();
    let data = synth::generate(&SynthSpec {
        attributes: dims.attributes,
        frames: dims.frames,
        behaviors: 3,
        reactions: dims.components,
        modes: 2,
        noise: 0.05,
        seed,
    })?;
    let config = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let trainer = Trainer::new(dims, config, &data)?;
    Ok(invariants::check_gradients(&trainer, &data, GRADIENT_STEP, GRADIENT_TOL))
}

/// Runs the invariant suite on `state` over the listener graphs of `data`.
pub fn invariant_suite(state: &ModelState, cfg: &RunConfig, data: &[Behavior]) -> Result<Vec<CheckResult>> {
    let graphs: Vec<AttributeGraph> = data
        .iter()
        .flat_map(|b| &b.listeners)
        .map(|c| state.encode(c))
        .collect::<regnn_core::Result<_>>()?;
    let opts = cfg.reverse_options();
    let few = &graphs[..graphs.len().min(CONTRACTION_GRAPHS)];
    Ok(vec![
        invariants::check_round_trip(&state.regnn, &graphs, &opts, ROUND_TRIP_TOL),
        invariants::check_contraction(&state.regnn, few, CONTRACTION_PAIRS, cfg.train.seed),
        invariants::check_normalization(&state.mefl, &state.regnn, &graphs),
        toy_gradient_check(cfg.train.seed)?,
    ])
}

/// Checks a checkpointed model, or a freshly initialised one when none is
/// given. Without a corpus, a small one is synthesised from the config.
pub fn check(cfg: &RunConfig, checkpoint: Option<&Path>, corpus_path: Option<PathBuf>) -> Result<String> {
    let data = match corpus_path.or_else(|| cfg.corpus.clone()) {
        Some(p) => corpus::read_corpus(&p)?,
        None => synth::generate(&SynthSpec {
            behaviors: cfg.behaviors.min(4),
            ..cfg.synth_spec()
        })?,
    };
    let state = match checkpoint {
        Some(p) => read_checkpoint(p)?.model_state()?,
        None => Trainer::new(cfg.model, cfg.train.clone(), &data)?.into_state(),
    };
    let results = invariant_suite(&state, cfg, &data)?;
    let mut report = String::new();
    for r in &results {
        let _ = writeln!(report, "{r}");
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(report.trim_end().to_string())
    } else {
        print!("{report}");
        Err(CliError::Invariant(failed.join(", ")))
    }
}
