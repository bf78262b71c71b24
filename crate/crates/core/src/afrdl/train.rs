use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{Behavior, ModelDims, ModelState, Prepared, Schedule, TrainConfig};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::graph::{nodes_to_graph, AttributeGraph};
use crate::numeric::{finite_diff_grad, relative_error, Matrix, Rng};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Column names of the loss log.
pub const LOSS_CSV_HEADER: &str = "epoch,loss_eq7,loss_eq9,total";

/// Mean per-behaviour losses over one epoch, measured before each update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Pairwise latent alignment loss.
    pub alignment: f64,
    /// Distribution grid loss.
    pub distribution: f64,
    pub total: f64,
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.epoch, self.alignment, self.distribution, self.total)
    }
}

/// Analytic vs finite-difference gradient agreement for one parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupCheck {
    pub name: String,
    pub rel_err: f64,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum StepKind {
    Joint,
    Motor,
    Cognitive,
}

/// Owns the model state, optimizer moments and the shuffling stream.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub(crate) state: ModelState,
    pub(crate) config: TrainConfig,
    pub(crate) epoch: usize,
    pub(crate) step: u64,
    pub(crate) adam_m: Vec<f64>,
    pub(crate) adam_v: Vec<f64>,
    pub(crate) rng: Rng,
    pub(crate) history: Vec<EpochRecord>,
}

impl ModelState {
    /// Sets each layer's frozen normalisation statistics to the per-dimension
    /// mean and standard deviation of its inputs over every listener clip,
    /// then enforces the layer.
    pub fn calibrate(&mut self, data: &[Behavior], target: f64) -> Result<()> {
        let mut graphs: Vec<AttributeGraph> = Vec::new();
        for b in data {
            for nodes in self.prepare(b)?.listener_nodes {
                let x = Matrix::new(self.dims.attributes, self.dims.node_dim, nodes)?;
                graphs.push(nodes_to_graph(x, &self.mefl, self.dims.top_k)?);
            }
        }
        if graphs.is_empty() {
            return Err(Error::domain("calibration needs at least one behaviour"));
        }
        let d = self.dims.node_dim;
        let mut current: Vec<Matrix> = graphs.iter().map(|g| g.node_features().clone()).collect();
        for layer in self.regnn.layers_mut() {
            let count = (current.len() * self.dims.attributes) as f64;
            let mut mean = vec![0.0; d];
            for x in &current {
                for r in 0..x.rows() {
                    mean.iter_mut().zip(x.row(r)).for_each(|(m, v)| *m += v / count);
                }
            }
            let mut var = vec![0.0; d];
            for x in &current {
                for r in 0..x.rows() {
                    for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                        *s += (v - m).powi(2) / count;
                    }
                }
            }
            let std: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
            layer.set_normalization(&mean, &std)?;
            layer.enforce(target)?;
            current = current
                .iter()
                .zip(&graphs)
                .map(|(x, g)| layer.forward(x, g.edges()))
                .collect::<Result<_>>()?;
        }
        Ok(())
    }
}

impl Trainer {
    /// Seeds initialisation and shuffling from `config.seed`, then calibrates
    /// normalisation statistics on `data`.
    pub fn new(dims: ModelDims, config: TrainConfig, data: &[Behavior]) -> Result<Self> {
        config.validate()?;
        let mut root = Rng::seed_from(config.seed);
        let mut init = root.fork();
        let rng = root.fork();
        let mut state = ModelState::init(dims, config.lipschitz_target, &mut init)?;
        state.calibrate(data, config.lipschitz_target)?;
        let n = state.param_count();
        Ok(Self {
            state,
            config,
            epoch: 0,
            step: 0,
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            rng,
            history: Vec::new(),
        })
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn into_state(self) -> ModelState {
        self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Number of completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn optimizer_step(&self) -> u64 {
        self.step
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn loss_csv(&self) -> String {
        let mut out = String::from(LOSS_CSV_HEADER);
        out.push('\n');
        for r in &self.history {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }

    /// Runs epochs until `config.epochs` are complete.
    pub fn fit(&mut self, data: &[Behavior]) -> Result<()> {
        while self.epoch < self.config.epochs {
            self.run_epoch(data)?;
        }
        Ok(())
    }

    pub fn run_epoch(&mut self, data: &[Behavior]) -> Result<EpochRecord> {
        let prepared = self.prepare_all(data)?;
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        self.rng.shuffle(&mut order);
        let lr = self.config.learning_rate_at(self.epoch);
        let (mut l1_sum, mut mse_sum) = (0.0, 0.0);
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &prepared[i]).collect();
            let kind = match self.config.schedule {
                Schedule::Joint => StepKind::Joint,
                Schedule::Alternating if self.step.is_multiple_of(2) => StepKind::Motor,
                Schedule::Alternating => StepKind::Cognitive,
            };
            let (l1, mse, grad) = self.batch_gradient(&batch, kind)?;
            let total = self.total(l1, mse);
            if !total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::numeric(format!(
                    "non-finite loss or gradient at epoch {} step {} (alignment {l1}, distribution {mse})",
                    self.epoch, self.step
                )));
            }
            let range = self.update_range(kind);
            self.apply_adam(&grad, range, lr)?;
            l1_sum += l1 * batch.len() as f64;
            mse_sum += mse * batch.len() as f64;
        }
        let n = prepared.len() as f64;
        let record = EpochRecord {
            epoch: self.epoch,
            alignment: l1_sum / n,
            distribution: mse_sum / n,
            total: self.total(l1_sum / n, mse_sum / n),
        };
        self.history.push(record);
        self.epoch += 1;
        Ok(record)
    }

    /// Mean losses over `data` at the current parameters, without updating.
    pub fn evaluate(&self, data: &[Behavior]) -> Result<EpochRecord> {
        let prepared = self.prepare_all(data)?;
        let params = self.state.flat_params();
        let (mut l1, mut mse) = (0.0, 0.0);
        for item in &prepared {
            let (a, b) = self.state.behavior_losses(&params, item)?;
            l1 += a;
            mse += b;
        }
        let n = prepared.len() as f64;
        Ok(EpochRecord {
            epoch: self.epoch,
            alignment: l1 / n,
            distribution: mse / n,
            total: self.total(l1 / n, mse / n),
        })
    }

    /// Compares tape gradients of the mean weighted total loss over `data`
    /// with central differences of step `h`, per parameter group.
    pub fn gradient_check(&self, data: &[Behavior], h: f64) -> Result<Vec<GroupCheck>> {
        let prepared = self.prepare_all(data)?;
        let refs: Vec<&Prepared> = prepared.iter().collect();
        let (_, _, analytic) = self.batch_gradient(&refs, StepKind::Joint)?;
        let params = self.state.flat_params();
        let loss = |p: &[f64]| -> f64 {
            let mut total = 0.0;
            for item in &prepared {
                match self.state.behavior_losses(p, item) {
                    Ok((l1, mse)) => total += self.total(l1, mse),
                    Err(_) => return f64::NAN,
                }
            }
            total / prepared.len() as f64
        };
        let numeric = finite_diff_grad(loss, &params, h)?;
        Ok(self
            .state
            .param_groups()
            .into_iter()
            .map(|g| {
                let (a, n) = (&analytic[g.range.clone()], &numeric[g.range.clone()]);
                GroupCheck {
                    rel_err: relative_error(a, n),
                    analytic_norm: a.iter().map(|v| v * v).sum::<f64>().sqrt(),
                    numeric_norm: n.iter().map(|v| v * v).sum::<f64>().sqrt(),
                    name: g.name,
                }
            })
            .collect())
    }

    fn prepare_all(&self, data: &[Behavior]) -> Result<Vec<Prepared>> {
        if data.is_empty() {
            return Err(Error::domain("training data is empty"));
        }
        data.iter().map(|b| self.state.prepare(b)).collect()
    }

    fn total(&self, l1: f64, mse: f64) -> f64 {
        self.config.loss_weight_l1 * l1 + self.config.loss_weight_mse * mse
    }

    fn update_range(&self, kind: StepKind) -> Range<usize> {
        let groups = self.state.module_groups();
        match kind {
            StepKind::Joint => 0..self.state.param_count(),
            StepKind::Motor => 0..groups[1].range.end,
            StepKind::Cognitive => groups[2].range.clone(),
        }
    }

    /// Mean raw losses over the batch and the gradient of the mean loss
    /// selected by `kind`.
    fn batch_gradient(&self, batch: &[&Prepared], kind: StepKind) -> Result<(f64, f64, Vec<f64>)> {
        let params = self.state.flat_params();
        let scale = 1.0 / batch.len() as f64;
        let mut grad = vec![0.0; params.len()];
        let (mut l1_sum, mut mse_sum) = (0.0, 0.0);
        for item in batch {
            let tape = Tape::new();
            let vars = tape.vars(&params);
            let (l1, mse) = self.state.behavior_losses(&vars, item)?;
            let objective = match kind {
                StepKind::Joint => l1 * self.config.loss_weight_l1 + mse * self.config.loss_weight_mse,
                StepKind::Motor => l1 * self.config.loss_weight_l1,
                StepKind::Cognitive => mse * self.config.loss_weight_mse,
            };
            let g = tape.gradient(objective).wrt_all(&vars);
            grad.iter_mut().zip(g).for_each(|(a, b)| *a += b * scale);
            l1_sum += crate::autodiff::Real::value(l1);
            mse_sum += crate::autodiff::Real::value(mse);
        }
        Ok((l1_sum * scale, mse_sum * scale, grad))
    }

    /// Adam with L2 weight decay folded into the gradient, restricted to
    /// `range`, followed by Lipschitz re-enforcement of every layer.
    fn apply_adam(&mut self, grad: &[f64], range: Range<usize>, lr: f64) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let (c1, c2) = (1.0 - ADAM_BETA1.powi(t), 1.0 - ADAM_BETA2.powi(t));
        let mut params = self.state.flat_params();
        for k in range {
            let g = grad[k] + self.config.weight_decay * params[k];
            self.adam_m[k] = ADAM_BETA1 * self.adam_m[k] + (1.0 - ADAM_BETA1) * g;
            self.adam_v[k] = ADAM_BETA2 * self.adam_v[k] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = self.adam_m[k] / c1;
            let v_hat = self.adam_v[k] / c2;
            params[k] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
        self.state.set_flat_params(&params)?;
        self.state.regnn.enforce(self.config.lipschitz_target)
    }
}
