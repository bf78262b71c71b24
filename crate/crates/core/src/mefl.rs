//! Multi-dimensional edge feature learning.
//!
//! `edge_dim` independent scaled dot-product attention maps over the node
//! features. Stacking the maps gives every ordered node pair `(i, j)` an
//! `edge_dim`-vector whose entry `d` is `softmax_j(q_i^d · k_j^d / √att_dim)`.
//! Each map is row-stochastic, so every produced entry lies in `(0, 1)`.

use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::graph::EdgeTensor;
use crate::numeric::{Matrix, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct MeflBlock {
    node_dim: usize,
    edge_dim: usize,
    att_dim: usize,
    /// Per edge dimension: query (`node_dim × att_dim`) then key, row-major.
    weights: Vec<f64>,
}

impl MeflBlock {
    pub fn new(node_dim: usize, edge_dim: usize, att_dim: usize, weights: Vec<f64>) -> Result<Self> {
        if node_dim == 0 || edge_dim == 0 || att_dim == 0 {
            return Err(Error::domain("MEFL dimensions must be positive"));
        }
        let expected = 2 * edge_dim * node_dim * att_dim;
        if weights.len() != expected {
            return Err(Error::domain(format!(
                "MEFL expects {expected} weights, got {}",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::numeric("non-finite MEFL weight"));
        }
        Ok(Self {
            node_dim,
            edge_dim,
            att_dim,
            weights,
        })
    }

    /// Gaussian initialisation with standard deviation `scale / √node_dim`.
    pub fn random(node_dim: usize, edge_dim: usize, att_dim: usize, scale: f64, rng: &mut Rng) -> Self {
        let std = scale / (node_dim as f64).sqrt();
        let weights = (0..2 * edge_dim * node_dim * att_dim)
            .map(|_| std * rng.normal())
            .collect();
        Self {
            node_dim,
            edge_dim,
            att_dim,
            weights,
        }
    }

    pub fn node_dim(&self) -> usize {
        self.node_dim
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_dim
    }

    pub fn att_dim(&self) -> usize {
        self.att_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: &[f64]) -> Result<()> {
        *self = Self::new(self.node_dim, self.edge_dim, self.att_dim, weights.to_vec())?;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.weights.len()
    }

    fn block_len(&self) -> usize {
        self.node_dim * self.att_dim
    }

    pub fn query(&self, d: usize) -> Matrix {
        let off = 2 * d * self.block_len();
        Matrix::new(self.node_dim, self.att_dim, self.weights[off..off + self.block_len()].to_vec())
            .expect("validated at construction")
    }

    pub fn key(&self, d: usize) -> Matrix {
        let off = (2 * d + 1) * self.block_len();
        Matrix::new(self.node_dim, self.att_dim, self.weights[off..off + self.block_len()].to_vec())
            .expect("validated at construction")
    }

    /// Full `I × I × edge_dim` attention tensor for `nodes` (`I × node_dim`).
    pub fn edges(&self, nodes: &Matrix) -> Result<EdgeTensor<f64>> {
        self.check_nodes(nodes.rows(), nodes.cols())?;
        Ok(self.edges_with(&self.weights, nodes.as_slice(), nodes.rows()))
    }

    pub(crate) fn check_nodes(&self, count: usize, dim: usize) -> Result<()> {
        if count < 2 {
            return Err(Error::domain(format!("MEFL needs at least 2 nodes, got {count}")));
        }
        if dim != self.node_dim {
            return Err(Error::domain(format!(
                "MEFL built for node dim {}, got {dim}",
                self.node_dim
            )));
        }
        Ok(())
    }

    /// Generic evaluation against an external weight vector laid out like
    /// [`MeflBlock::weights`]. Shapes are assumed checked by the caller.
    pub(crate) fn edges_with<S: Real>(&self, weights: &[S], nodes: &[S], count: usize) -> EdgeTensor<S> {
        let (nd, ad, ed) = (self.node_dim, self.att_dim, self.edge_dim);
        let inv_scale = 1.0 / (ad as f64).sqrt();
        let mut out = EdgeTensor::filled(count, ed, S::zero());
        let project = |w: &[S]| -> Vec<S> {
            let mut p = vec![S::zero(); count * ad];
            for i in 0..count {
                for a in 0..ad {
                    p[i * ad + a] = (0..nd).map(|k| nodes[i * nd + k] * w[k * ad + a]).sum();
                }
            }
            p
        };
        for d in 0..ed {
            let off = 2 * d * nd * ad;
            let q = project(&weights[off..off + nd * ad]);
            let k = project(&weights[off + nd * ad..off + 2 * nd * ad]);
            for i in 0..count {
                let scores: Vec<S> = (0..count)
                    .map(|j| (0..ad).map(|a| q[i * ad + a] * k[j * ad + a]).sum::<S>() * inv_scale)
                    .collect();
                let max = scores.iter().map(|s| s.value()).fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<S> = scores.iter().map(|&s| (s - max).exp()).collect();
                let total: S = exps.iter().copied().sum();
                for (j, e) in exps.into_iter().enumerate() {
                    out.set(i, j, d, e / total);
                }
            }
        }
        out
    }
}
