//! Reversible multi-dimensional edge graph network.
//!
//! A layer maps node features `v` (`I × D`) to `v + φ(v)`, where the message
//! map `φ` is
//!
//! ```text
//! u      = sigmoid((v − μ) / σ)                      frozen normalisation
//! a_ji   = softmax_{j ∈ N(i)} (u_i W_q)(u_j W_m)ᵀ     relationship coefficients
//! e_ji   = a_ji e0_ji / Σ_{k ∈ N(i)} a_ki e0_ki        edge update, per edge dim
//! φ(v)_i = Σ_d w_d Σ_{j ∈ N(i)} e_ji[d] u_j / (1 + 2‖W_q W_mᵀ‖₂)
//! ```
//!
//! `N(i)` is the set of sources of edges pointing at `i`, and `e0` is the
//! initial edge set shared by every layer. Each `φ_i` is a convex combination
//! of points of the unit cube, which gives the certified bound
//!
//! ```text
//! Lip(φ) ≤ ‖w‖₁ · max_k 1/(4σ_k) · (1 + 2D‖W_q W_mᵀ‖₂) / (1 + 2‖W_q W_mᵀ‖₂)
//! ```
//!
//! in the max-over-nodes Euclidean norm. Enforcement shrinks `w` until this
//! bound is below the layer's target, so `φ` is a contraction and the layer
//! is inverted by iterating `x ← v_next − φ(x)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::graph::{AttributeGraph, EdgeSet};
use crate::numeric::{spectral_norm, Matrix, Rng};

/// Default ceiling for the certified Lipschitz bound of `φ`.
pub const DEFAULT_LIPSCHITZ_TARGET: f64 = 0.5;
/// Floor applied to normalisation standard deviations.
pub const MIN_NORM_STD: f64 = 0.05;

const ENFORCE_SPECTRAL_TOL: f64 = 1e-10;
const ENFORCE_SPECTRAL_MAX_ITER: usize = 10_000;
const DENOMINATOR_FLOOR: f64 = 1e-300;

/// Frozen contraction certificate of one layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzBudget {
    /// `‖W_q W_mᵀ‖₂`.
    pub spectral_norm: f64,
    /// `1 + 2‖W_q W_mᵀ‖₂`, the divisor applied to every message.
    pub denominator: f64,
    /// `max_k 1 / (4σ_k)`.
    pub sigmoid_slope: f64,
    /// Certified Lipschitz constant of `φ` after enforcement.
    pub bound: f64,
    pub target: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegnnLayer {
    index: usize,
    node_dim: usize,
    edge_dim: usize,
    /// `W_q` (`node_dim × node_dim`), `W_m` (same), `W_e` (`edge_dim`).
    weights: Vec<f64>,
    norm_mean: Vec<f64>,
    norm_std: Vec<f64>,
    budget: Option<LipschitzBudget>,
}

impl RegnnLayer {
    pub fn param_count_for(node_dim: usize, edge_dim: usize) -> usize {
        2 * node_dim * node_dim + edge_dim
    }

    pub fn new(index: usize, node_dim: usize, edge_dim: usize, weights: Vec<f64>) -> Result<Self> {
        if node_dim == 0 || edge_dim == 0 {
            return Err(Error::domain("layer dimensions must be positive"));
        }
        let mut layer = Self {
            index,
            node_dim,
            edge_dim,
            weights: Vec::new(),
            norm_mean: vec![0.0; node_dim],
            norm_std: vec![1.0; node_dim],
            budget: None,
        };
        layer.set_weights(&weights)?;
        Ok(layer)
    }

    /// Gaussian weights; `W_q`, `W_m` with std `scale / √D`, `W_e` with std `scale`.
    pub fn random(index: usize, node_dim: usize, edge_dim: usize, scale: f64, rng: &mut Rng) -> Self {
        let std = scale / (node_dim as f64).sqrt();
        let mut weights: Vec<f64> = (0..2 * node_dim * node_dim).map(|_| std * rng.normal()).collect();
        weights.extend((0..edge_dim).map(|_| scale * rng.normal()));
        Self::new(index, node_dim, edge_dim, weights).expect("finite by construction")
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn node_dim(&self) -> usize {
        self.node_dim
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_dim
    }

    pub fn param_count(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Replaces all trainable weights and drops the Lipschitz budget.
    pub fn set_weights(&mut self, weights: &[f64]) -> Result<()> {
        let expected = Self::param_count_for(self.node_dim, self.edge_dim);
        if weights.len() != expected {
            return Err(Error::domain(format!(
                "layer {} expects {expected} weights, got {}",
                self.index,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::numeric(format!("layer {}: non-finite weight", self.index)));
        }
        self.weights = weights.to_vec();
        self.budget = None;
        Ok(())
    }

    fn square(&self, block: usize) -> Matrix {
        let n = self.node_dim * self.node_dim;
        Matrix::new(
            self.node_dim,
            self.node_dim,
            self.weights[block * n..(block + 1) * n].to_vec(),
        )
        .expect("validated weights")
    }

    pub fn w_q(&self) -> Matrix {
        self.square(0)
    }

    pub fn w_m(&self) -> Matrix {
        self.square(1)
    }

    pub fn w_e(&self) -> &[f64] {
        &self.weights[2 * self.node_dim * self.node_dim..]
    }

    pub fn normalization(&self) -> (&[f64], &[f64]) {
        (&self.norm_mean, &self.norm_std)
    }

    /// Replaces the frozen normalisation statistics and drops the budget.
    /// Standard deviations are floored at [`MIN_NORM_STD`].
    pub fn set_normalization(&mut self, mean: &[f64], std: &[f64]) -> Result<()> {
        if mean.len() != self.node_dim || std.len() != self.node_dim {
            return Err(Error::domain("normalisation statistics must have length D"));
        }
        if mean.iter().chain(std).any(|v| !v.is_finite()) || std.iter().any(|&s| s <= 0.0) {
            return Err(Error::numeric("normalisation statistics must be finite, std > 0"));
        }
        self.norm_mean = mean.to_vec();
        self.norm_std = std.iter().map(|s| s.max(MIN_NORM_STD)).collect();
        self.budget = None;
        Ok(())
    }

    pub fn budget(&self) -> Option<&LipschitzBudget> {
        self.budget.as_ref()
    }

    pub fn is_enforced(&self) -> bool {
        self.budget.is_some()
    }

    /// Installs a previously computed budget verbatim (checkpoint restore).
    pub fn restore_budget(&mut self, budget: LipschitzBudget) {
        self.budget = Some(budget);
    }

    /// Budget implied by the current weights, without rescaling anything.
    pub fn measure_budget(&self, target: f64) -> Result<LipschitzBudget> {
        let a = self.w_q().matmul(&self.w_m().transpose())?;
        let spectral = spectral_norm(&a, ENFORCE_SPECTRAL_TOL, ENFORCE_SPECTRAL_MAX_ITER)?;
        if !spectral.is_finite() {
            return Err(Error::numeric(format!("layer {}: non-finite spectral norm", self.index)));
        }
        let denominator = 1.0 + 2.0 * spectral;
        let sigmoid_slope = self
            .norm_std
            .iter()
            .map(|s| 0.25 / s)
            .fold(0.0, f64::max);
        let w_l1: f64 = self.w_e().iter().map(|w| w.abs()).sum();
        let spread = 1.0 + 2.0 * self.node_dim as f64 * spectral;
        Ok(LipschitzBudget {
            spectral_norm: spectral,
            denominator,
            sigmoid_slope,
            bound: w_l1 * sigmoid_slope * spread / denominator,
            target,
        })
    }

    /// Freezes the message divisor `1 + 2‖W_q W_mᵀ‖₂` and shrinks `W_e` until
    /// the certified bound is below `target`.
    pub fn enforce(&mut self, target: f64) -> Result<&LipschitzBudget> {
        if !(target > 0.0 && target < 1.0) {
            return Err(Error::domain("Lipschitz target must lie in (0, 1)"));
        }
        let mut budget = self.measure_budget(target)?;
        if budget.bound >= target {
            let shrink = target * (1.0 - 1e-9) / budget.bound;
            let off = 2 * self.node_dim * self.node_dim;
            self.weights[off..].iter_mut().for_each(|w| *w *= shrink);
            budget = self.measure_budget(target)?;
        }
        Ok(self.budget.insert(budget))
    }

    fn checked_budget(&self) -> Result<&LipschitzBudget> {
        self.budget.as_ref().ok_or_else(|| {
            Error::Contract(format!(
                "layer {} used without Lipschitz enforcement since its last weight change",
                self.index
            ))
        })
    }

    fn check_inputs(&self, nodes: &Matrix, edges: &EdgeSet<f64>) -> Result<()> {
        if nodes.cols() != self.node_dim {
            return Err(Error::domain(format!(
                "layer {} expects node dim {}, got {}",
                self.index,
                self.node_dim,
                nodes.cols()
            )));
        }
        if edges.nodes() != nodes.rows() || edges.dim() != self.edge_dim {
            return Err(Error::domain(format!(
                "layer {}: edge set ({} nodes, dim {}) does not fit {} nodes with edge dim {}",
                self.index,
                edges.nodes(),
                edges.dim(),
                nodes.rows(),
                self.edge_dim
            )));
        }
        Ok(())
    }

    /// Relationship coefficients `a_ji`, keyed by edge `(j, i)`.
    pub fn coefficients(&self, nodes_prev: &Matrix, edges0: &EdgeSet<f64>) -> Result<BTreeMap<(usize, usize), f64>> {
        self.check_inputs(nodes_prev, edges0)?;
        let u = self.preprocess(nodes_prev.as_slice(), nodes_prev.rows());
        let a = self.coefficients_with(&self.weights, &u, edges0);
        Ok(edges0.pairs().iter().copied().zip(a).collect())
    }

    /// Updated edge features `e^n_ji`, keyed by edge `(j, i)`.
    pub fn edge_update(&self, nodes_prev: &Matrix, edges0: &EdgeSet<f64>) -> Result<BTreeMap<(usize, usize), Vec<f64>>> {
        self.check_inputs(nodes_prev, edges0)?;
        let u = self.preprocess(nodes_prev.as_slice(), nodes_prev.rows());
        let a = self.coefficients_with(&self.weights, &u, edges0);
        let updated = edge_update_with(&a, edges0)?;
        Ok(edges0
            .pairs()
            .iter()
            .enumerate()
            .map(|(e, &p)| (p, updated[e * self.edge_dim..(e + 1) * self.edge_dim].to_vec()))
            .collect())
    }

    /// The message map `φ`.
    pub fn message(&self, nodes: &Matrix, edges0: &EdgeSet<f64>) -> Result<Matrix> {
        self.check_inputs(nodes, edges0)?;
        let budget = self.checked_budget()?;
        let phi = self.phi_with(&self.weights, budget.denominator, nodes.as_slice(), nodes.rows(), edges0)?;
        Matrix::new(nodes.rows(), self.node_dim, phi)
    }

    /// `v + φ(v)`.
    pub fn forward(&self, nodes_prev: &Matrix, edges0: &EdgeSet<f64>) -> Result<Matrix> {
        let phi = self.message(nodes_prev, edges0)?;
        let next: Vec<f64> = nodes_prev
            .as_slice()
            .iter()
            .zip(phi.as_slice())
            .map(|(v, p)| v + p)
            .collect();
        Matrix::new(nodes_prev.rows(), self.node_dim, next)
    }

    /// Solves `x + φ(x) = nodes_next` by fixed-point iteration.
    pub fn reverse(&self, nodes_next: &Matrix, edges0: &EdgeSet<f64>, opts: &ReverseOptions) -> Result<FixedPoint> {
        self.check_inputs(nodes_next, edges0)?;
        if !(opts.tol > 0.0) {
            return Err(Error::domain("reverse tolerance must be positive"));
        }
        let budget = self.checked_budget()?;
        let (rows, target) = (nodes_next.rows(), nodes_next.as_slice());
        let mut rng = Rng::seed_from(opts.seed);
        let mut x: Vec<f64> = (0..target.len()).map(|_| rng.uniform(0.1, 1.1)).collect();
        let mut residual = f64::INFINITY;
        for iteration in 1..=opts.max_iter {
            let phi = self.phi_with(&self.weights, budget.denominator, &x, rows, edges0)?;
            let next: Vec<f64> = target.iter().zip(&phi).map(|(v, p)| v - p).collect();
            residual = next
                .iter()
                .zip(&x)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            x = next;
            if residual < opts.tol {
                return Ok(FixedPoint {
                    nodes: Matrix::new(rows, self.node_dim, x)?,
                    iterations: iteration,
                    residual,
                });
            }
            if !residual.is_finite() {
                break;
            }
        }
        Err(Error::FixedPointNotConverged {
            iterations: opts.max_iter,
            residual,
        })
    }

    pub(crate) fn preprocess<S: Real>(&self, nodes: &[S], rows: usize) -> Vec<S> {
        let d = self.node_dim;
        let mut u = Vec::with_capacity(rows * d);
        for r in 0..rows {
            for k in 0..d {
                u.push(((nodes[r * d + k] - self.norm_mean[k]) / self.norm_std[k]).sigmoid());
            }
        }
        u
    }

    /// `a` per edge, in edge-set order.
    pub(crate) fn coefficients_with<S: Real>(&self, weights: &[S], u: &[S], edges: &EdgeSet<S>) -> Vec<S> {
        let d = self.node_dim;
        let (wq, wm) = (&weights[..d * d], &weights[d * d..2 * d * d]);
        let project = |w: &[S]| -> Vec<S> {
            let rows = u.len() / d;
            let mut p = vec![S::zero(); rows * d];
            for r in 0..rows {
                for c in 0..d {
                    p[r * d + c] = (0..d).map(|k| u[r * d + k] * w[k * d + c]).sum();
                }
            }
            p
        };
        let (q, m) = (project(wq), project(wm));
        let mut a = vec![S::zero(); edges.len()];
        for target in 0..edges.nodes() {
            let inc = edges.incoming(target);
            if inc.is_empty() {
                continue;
            }
            let scores: Vec<S> = inc
                .iter()
                .map(|&e| {
                    let src = edges.pairs()[e].0;
                    (0..d).map(|c| q[target * d + c] * m[src * d + c]).sum()
                })
                .collect();
            let max = scores.iter().map(|s| s.value()).fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<S> = scores.iter().map(|&s| (s - max).exp()).collect();
            let total: S = exps.iter().copied().sum();
            for (&e, x) in inc.iter().zip(exps) {
                a[e] = x / total;
            }
        }
        a
    }

    /// Message per node, before the divisor: `Σ_d w_d Σ_j e_ji[d] u_j`.
    pub(crate) fn aggregate_with<S: Real>(&self, w_e: &[S], u: &[S], updated: &[S], edges: &EdgeSet<S>) -> Vec<S> {
        let (d, ed) = (self.node_dim, self.edge_dim);
        let mut out = vec![S::zero(); edges.nodes() * d];
        for target in 0..edges.nodes() {
            for &e in edges.incoming(target) {
                let src = edges.pairs()[e].0;
                // Combine the edge dimensions into one scalar weight per edge.
                let weight: S = (0..ed).map(|k| w_e[k] * updated[e * ed + k]).sum();
                for c in 0..d {
                    out[target * d + c] += weight * u[src * d + c];
                }
            }
        }
        out
    }

    pub(crate) fn phi_with<S: Real>(
        &self,
        weights: &[S],
        denominator: f64,
        nodes: &[S],
        rows: usize,
        edges: &EdgeSet<S>,
    ) -> Result<Vec<S>> {
        let u = self.preprocess(nodes, rows);
        let a = self.coefficients_with(weights, &u, edges);
        let updated = edge_update_with(&a, edges)?;
        let w_e = &weights[2 * self.node_dim * self.node_dim..];
        Ok(self
            .aggregate_with(w_e, &u, &updated, edges)
            .into_iter()
            .map(|m| m / denominator)
            .collect())
    }

    /// Largest observed `‖φ(a) − φ(b)‖_F / ‖a − b‖_F` over `pairs` seeded
    /// input pairs drawn around the normalisation statistics.
    pub fn empirical_lipschitz(&self, edges0: &EdgeSet<f64>, pairs: usize, seed: u64) -> Result<f64> {
        let rows = edges0.nodes();
        let d = self.node_dim;
        let mut rng = Rng::seed_from(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..pairs {
            let a = Matrix::from_fn(rows, d, |_, k| self.norm_mean[k] + 2.0 * self.norm_std[k] * rng.normal());
            let dir = Matrix::random_normal(rows, d, 1.0, &mut rng);
            let radius = 10f64.powf(rng.uniform(-4.0, 0.5)) * self.norm_std.iter().sum::<f64>() / d as f64;
            let step = dir.scale(radius / dir.frobenius_norm());
            let b = Matrix::new(
                rows,
                d,
                a.as_slice().iter().zip(step.as_slice()).map(|(x, s)| x + s).collect(),
            )?;
            let (pa, pb) = (self.message(&a, edges0)?, self.message(&b, edges0)?);
            let num = pa
                .as_slice()
                .iter()
                .zip(pb.as_slice())
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(num / step.frobenius_norm());
        }
        Ok(worst)
    }
}

/// `e^n` per edge (row-major `edges × edge_dim`) from coefficients `a`.
pub(crate) fn edge_update_with<S: Real>(a: &[S], edges: &EdgeSet<S>) -> Result<Vec<S>> {
    let ed = edges.dim();
    let mut out = vec![S::zero(); edges.len() * ed];
    for target in 0..edges.nodes() {
        let inc = edges.incoming(target);
        if inc.is_empty() {
            continue;
        }
        for k in 0..ed {
            let denom: S = inc.iter().map(|&e| a[e] * edges.feature(e)[k]).sum();
            if !(denom.value() > DENOMINATOR_FLOOR) {
                return Err(Error::numeric(format!(
                    "edge-update denominator {:e} at node {target}, dim {k}",
                    denom.value()
                )));
            }
            for &e in inc {
                out[e * ed + k] = a[e] * edges.feature(e)[k] / denom;
            }
        }
    }
    Ok(out)
}

pub fn enforce_lipschitz(mut layer: RegnnLayer, target: f64) -> Result<RegnnLayer> {
    layer.enforce(target)?;
    Ok(layer)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReverseOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Seed for the non-zero random start `x₀ ~ U(0.1, 1.1)`.
    pub seed: u64,
}

impl Default for ReverseOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 500,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixedPoint {
    pub nodes: Matrix,
    pub iterations: usize,
    pub residual: f64,
}

/// Stack of `N ≥ 1` layers sharing the initial edge set.
#[derive(Clone, Debug, PartialEq)]
pub struct RegnnModel {
    layers: Vec<RegnnLayer>,
}

impl RegnnModel {
    pub fn new(layers: Vec<RegnnLayer>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::domain("a model needs at least one layer"))?;
        let (nd, ed) = (first.node_dim, first.edge_dim);
        if layers.iter().any(|l| l.node_dim != nd || l.edge_dim != ed) {
            return Err(Error::domain("all layers must share node and edge dimensions"));
        }
        Ok(Self { layers })
    }

    /// `n` random layers, each enforced to `target`.
    pub fn random(n: usize, node_dim: usize, edge_dim: usize, scale: f64, target: f64, rng: &mut Rng) -> Result<Self> {
        let mut model = Self::new(
            (0..n)
                .map(|i| RegnnLayer::random(i, node_dim, edge_dim, scale, rng))
                .collect(),
        )?;
        model.enforce(target)?;
        Ok(model)
    }

    pub fn layers(&self) -> &[RegnnLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [RegnnLayer] {
        &mut self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn node_dim(&self) -> usize {
        self.layers[0].node_dim
    }

    pub fn edge_dim(&self) -> usize {
        self.layers[0].edge_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(RegnnLayer::param_count).sum()
    }

    pub fn enforce(&mut self, target: f64) -> Result<()> {
        for layer in &mut self.layers {
            layer.enforce(target)?;
        }
        Ok(())
    }

    pub fn is_enforced(&self) -> bool {
        self.layers.iter().all(RegnnLayer::is_enforced)
    }

    /// Node features after every layer; element 0 is the input.
    pub fn forward_trace(&self, g: &AttributeGraph) -> Result<Vec<Matrix>> {
        let mut trace = vec![g.node_features().clone()];
        for layer in &self.layers {
            let next = layer.forward(trace.last().expect("non-empty"), g.edges())?;
            trace.push(next);
        }
        Ok(trace)
    }

    pub fn forward(&self, g: &AttributeGraph) -> Result<AttributeGraph> {
        let mut trace = self.forward_trace(g)?;
        g.with_nodes(trace.pop().expect("non-empty"))
    }

    /// Inverts the stack layer by layer, last layer first. Each layer's start
    /// point is seeded from `opts.seed` and the layer index.
    pub fn reverse_with_stats(&self, latent: &AttributeGraph, opts: &ReverseOptions) -> Result<(AttributeGraph, Vec<FixedPoint>)> {
        let mut nodes = latent.node_features().clone();
        let mut stats = Vec::with_capacity(self.layers.len());
        for layer in self.layers.iter().rev() {
            let layer_opts = ReverseOptions {
                seed: opts.seed.wrapping_add(layer.index as u64),
                ..*opts
            };
            let fp = layer.reverse(&nodes, latent.edges(), &layer_opts)?;
            nodes = fp.nodes.clone();
            stats.push(fp);
        }
        stats.reverse();
        Ok((latent.with_nodes(nodes)?, stats))
    }

    pub fn reverse(&self, latent: &AttributeGraph, opts: &ReverseOptions) -> Result<AttributeGraph> {
        self.reverse_with_stats(latent, opts).map(|(g, _)| g)
    }

    /// Every layer's weights, concatenated in layer order.
    pub fn flat_weights(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights().iter().copied()).collect()
    }

    /// `½‖forward(g)‖²` evaluated with external weights laid out like
    /// [`RegnnModel::flat_weights`] and the frozen message divisors.
    pub fn squared_output_loss(&self, weights: &[f64], g: &AttributeGraph) -> Result<f64> {
        self.check_flat(weights, g)?;
        let nodes = g.node_features().as_slice().to_vec();
        let (out, _) = self.forward_with(weights, nodes, g.nodes(), g.edges())?;
        Ok(0.5 * out.iter().map(|v| v * v).sum::<f64>())
    }

    /// Reverse-mode gradient of [`RegnnModel::squared_output_loss`] at the
    /// current weights.
    pub fn squared_output_gradient(&self, g: &AttributeGraph) -> Result<(f64, Vec<f64>)> {
        let weights = self.flat_weights();
        self.check_flat(&weights, g)?;
        let tape = crate::autodiff::Tape::new();
        let vars = tape.vars(&weights);
        let nodes = g.node_features().as_slice().iter().map(|&v| Real::constant(v)).collect();
        let (out, _) = self.forward_with(&vars, nodes, g.nodes(), &g.edges().lift())?;
        let loss = out.into_iter().map(|v| v.square()).sum::<crate::autodiff::Var<'_>>() * 0.5;
        Ok((loss.value(), tape.gradient(loss).wrt_all(&vars)))
    }

    fn check_flat(&self, weights: &[f64], g: &AttributeGraph) -> Result<()> {
        if weights.len() != self.param_count() {
            return Err(Error::domain(format!(
                "expected {} weights, got {}",
                self.param_count(),
                weights.len()
            )));
        }
        self.layers[0].check_inputs(g.node_features(), g.edges())
    }

    /// Generic forward over a flat weight vector (layers concatenated) using
    /// the frozen budgets. Returns the output and every layer's input values.
    pub(crate) fn forward_with<S: Real>(
        &self,
        weights: &[S],
        nodes: Vec<S>,
        rows: usize,
        edges: &EdgeSet<S>,
    ) -> Result<(Vec<S>, Vec<Vec<f64>>)> {
        let mut x = nodes;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for layer in &self.layers {
            let budget = layer.checked_budget()?;
            let w = &weights[off..off + layer.param_count()];
            off += layer.param_count();
            inputs.push(x.iter().map(|v| v.value()).collect());
            let phi = layer.phi_with(w, budget.denominator, &x, rows, edges)?;
            x = x.into_iter().zip(phi).map(|(v, p)| v + p).collect();
        }
        Ok((x, inputs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::nodes_to_graph;
    use crate::mefl::MeflBlock;

    fn random_graph(rows: usize, d: usize, ed: usize, k: usize, rng: &mut Rng) -> AttributeGraph {
        let mefl = MeflBlock::random(d, ed, 4, 1.0, rng);
        let nodes = Matrix::random_normal(rows, d, 1.0, rng);
        nodes_to_graph(nodes, &mefl, k).unwrap()
    }

    fn enforced_layer(d: usize, ed: usize, rng: &mut Rng) -> RegnnLayer {
        enforce_lipschitz(RegnnLayer::random(0, d, ed, 1.0, rng), DEFAULT_LIPSCHITZ_TARGET).unwrap()
    }

    #[test]
    fn unenforced_layer_is_a_contract_violation() {
        let mut rng = Rng::seed_from(1);
        let g = random_graph(4, 3, 2, 2, &mut rng);
        let layer = RegnnLayer::random(0, 3, 2, 1.0, &mut rng);
        assert!(matches!(layer.forward(g.node_features(), g.edges()), Err(Error::Contract(_))));
        let mut enforced = enforced_layer(3, 2, &mut rng);
        assert!(enforced.forward(g.node_features(), g.edges()).is_ok());
        enforced.set_weights(&enforced.weights().to_vec()).unwrap();
        assert!(matches!(enforced.forward(g.node_features(), g.edges()), Err(Error::Contract(_))));
    }

    #[test]
    fn zero_w_e_is_pure_residual() {
        let mut rng = Rng::seed_from(2);
        let g = random_graph(5, 3, 2, 2, &mut rng);
        let mut layer = RegnnLayer::random(0, 3, 2, 1.0, &mut rng);
        let mut w = layer.weights().to_vec();
        let n = w.len();
        w[n - 2..].iter_mut().for_each(|x| *x = 0.0);
        layer.set_weights(&w).unwrap();
        layer.enforce(0.5).unwrap();
        let out = layer.forward(g.node_features(), g.edges()).unwrap();
        assert_eq!(&out, g.node_features());
        let back = layer.reverse(&out, g.edges(), &ReverseOptions::default()).unwrap();
        assert_eq!(&back.nodes, g.node_features());
        assert!(back.iterations <= 2);
    }

    #[test]
    fn single_incoming_neighbour_normalises_to_ones() {
        let mut rng = Rng::seed_from(3);
        let mut map = BTreeMap::new();
        map.insert((0, 1), vec![0.3, 0.9]);
        map.insert((1, 0), vec![0.2, 0.4]);
        let edges = EdgeSet::from_map(2, 2, &map).unwrap();
        let layer = enforced_layer(3, 2, &mut rng);
        let nodes = Matrix::random_normal(2, 3, 1.0, &mut rng);
        let upd = layer.edge_update(&nodes, &edges).unwrap();
        for v in upd.values() {
            assert!(v.iter().all(|&x| (x - 1.0).abs() < 1e-15));
        }
    }

    #[test]
    fn symmetric_neighbours_split_evenly() {
        let mut rng = Rng::seed_from(4);
        let mut map = BTreeMap::new();
        map.insert((1, 0), vec![0.5, 0.5]);
        map.insert((2, 0), vec![0.5, 0.5]);
        let edges = EdgeSet::from_map(3, 2, &map).unwrap();
        let layer = enforced_layer(2, 2, &mut rng);
        // Nodes 1 and 2 identical, so a_10 = a_20.
        let nodes = Matrix::new(3, 2, vec![0.3, -1.0, 0.7, 0.2, 0.7, 0.2]).unwrap();
        let a = layer.coefficients(&nodes, &edges).unwrap();
        assert!((a[&(1, 0)] - 0.5).abs() < 1e-15);
        let upd = layer.edge_update(&nodes, &edges).unwrap();
        for v in upd.values() {
            assert!(v.iter().all(|&x| (x - 0.5).abs() < 1e-15));
        }
    }

    #[test]
    fn zero_query_gives_uniform_coefficients() {
        let mut rng = Rng::seed_from(5);
        let g = random_graph(6, 3, 2, 3, &mut rng);
        let mut layer = RegnnLayer::random(0, 3, 2, 1.0, &mut rng);
        let mut w = layer.weights().to_vec();
        w[..9].iter_mut().for_each(|x| *x = 0.0);
        layer.set_weights(&w).unwrap();
        let a = layer.coefficients(g.node_features(), g.edges()).unwrap();
        for target in 0..6 {
            let inc = g.edges().incoming(target);
            for &e in inc {
                let p = g.edges().pairs()[e];
                assert!((a[&p] - 1.0 / inc.len() as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn isolated_node_is_unchanged() {
        let mut rng = Rng::seed_from(6);
        let mut map = BTreeMap::new();
        map.insert((0, 1), vec![0.6]);
        map.insert((1, 0), vec![0.4]);
        let edges = EdgeSet::from_map(3, 1, &map).unwrap();
        let layer = enforced_layer(2, 1, &mut rng);
        let nodes = Matrix::random_normal(3, 2, 1.0, &mut rng);
        let out = layer.forward(&nodes, &edges).unwrap();
        assert_eq!(out.row(2), nodes.row(2));
        assert_ne!(out.row(0), nodes.row(0));
    }

    #[test]
    fn enforcement_is_idempotent_and_under_target() {
        let mut rng = Rng::seed_from(7);
        let mut layer = RegnnLayer::random(0, 4, 3, 2.0, &mut rng);
        layer.enforce(0.5).unwrap();
        let first = layer.clone();
        assert!(first.budget().unwrap().bound < 0.5);
        layer.enforce(0.5).unwrap();
        for (a, b) in first.weights().iter().zip(layer.weights()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_query_has_unit_denominator() {
        let mut rng = Rng::seed_from(8);
        let mut layer = RegnnLayer::random(0, 3, 2, 1.0, &mut rng);
        let mut w = layer.weights().to_vec();
        w[..9].iter_mut().for_each(|x| *x = 0.0);
        w[18..].iter_mut().for_each(|x| *x = 0.01);
        layer.set_weights(&w).unwrap();
        layer.enforce(0.5).unwrap();
        assert_eq!(layer.budget().unwrap().denominator, 1.0);
        assert_eq!(layer.weights(), &w[..]);
    }

    #[test]
    fn reverse_reports_non_convergence() {
        let mut rng = Rng::seed_from(9);
        let g = random_graph(4, 3, 2, 2, &mut rng);
        let layer = enforced_layer(3, 2, &mut rng);
        let opts = ReverseOptions {
            tol: 1e-300,
            max_iter: 3,
            seed: 1,
        };
        match layer.reverse(g.node_features(), g.edges(), &opts) {
            Err(Error::FixedPointNotConverged { iterations, residual }) => {
                assert_eq!(iterations, 3);
                assert!(residual.is_finite());
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn model_rejects_empty_stack() {
        assert!(RegnnModel::new(Vec::new()).is_err());
    }

    #[test]
    fn underflowing_denominator_is_numeric_error() {
        let mut map = BTreeMap::new();
        map.insert((1, 0), vec![1e-320]);
        let edges = EdgeSet::from_map(2, 1, &map).unwrap();
        let mut rng = Rng::seed_from(10);
        let layer = enforced_layer(2, 1, &mut rng);
        let nodes = Matrix::random_normal(2, 2, 1.0, &mut rng);
        assert!(matches!(layer.forward(&nodes, &edges), Err(Error::Numeric(_))));
    }
}
