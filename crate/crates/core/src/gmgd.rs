//! Gaussian mixture graph distribution: every node carries an `M`-component
//! isotropic Gaussian mixture over `D`-dimensional latent features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::AttributeGraph;
use crate::numeric::{Matrix, Rng};

/// Sigma used whenever a caller does not choose one.
pub const DEFAULT_SIGMA: f64 = 0.6;

/// How mixture components are picked when sampling a graph.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentMode {
    /// Each node draws its own component.
    #[default]
    PerNode,
    /// One component index is drawn for the whole graph.
    Global,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixtureGraphDistribution {
    nodes: usize,
    dim: usize,
    components: usize,
    /// `nodes × components × dim`.
    means: Vec<f64>,
    /// `nodes × components`.
    sigmas: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussianMixtureGraphDistribution {
    /// Uniform-weight mixture with a shared `sigma`.
    pub fn new(nodes: usize, dim: usize, components: usize, means: Vec<f64>, sigma: f64) -> Result<Self> {
        if nodes == 0 || dim == 0 || components == 0 {
            return Err(Error::domain("distribution dimensions must be positive"));
        }
        if means.len() != nodes * components * dim {
            return Err(Error::domain(format!(
                "expected {} means, got {}",
                nodes * components * dim,
                means.len()
            )));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::numeric("non-finite mixture mean"));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::domain(format!("sigma must be positive and finite, got {sigma}")));
        }
        Ok(Self {
            nodes,
            dim,
            components,
            means,
            sigmas: vec![sigma; nodes * components],
            weights: vec![1.0 / components as f64; components],
        })
    }

    /// Component `m` of node `i` is centred on node `i` of latent `m`.
    pub fn summarize(latents: &[Matrix], sigma: f64) -> Result<Self> {
        let first = latents
            .first()
            .ok_or_else(|| Error::domain("summarize needs at least one latent graph"))?;
        let (nodes, dim) = first.shape();
        if let Some(m) = latents.iter().position(|l| l.shape() != (nodes, dim)) {
            return Err(Error::domain(format!(
                "latent {m} has shape {:?}, expected {:?}",
                latents[m].shape(),
                (nodes, dim)
            )));
        }
        let components = latents.len();
        let mut means = Vec::with_capacity(nodes * components * dim);
        for i in 0..nodes {
            for latent in latents {
                means.extend_from_slice(latent.row(i));
            }
        }
        Self::new(nodes, dim, components, means, sigma)
    }

    pub fn summarize_graphs(latents: &[AttributeGraph], sigma: f64) -> Result<Self> {
        let nodes: Vec<Matrix> = latents.iter().map(|g| g.node_features().clone()).collect();
        Self::summarize(&nodes, sigma)
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self, node: usize, component: usize) -> &[f64] {
        let off = (node * self.components + component) * self.dim;
        &self.means[off..off + self.dim]
    }

    pub fn sigma(&self, node: usize, component: usize) -> f64 {
        self.sigmas[node * self.components + component]
    }

    /// Common sigma, if every component shares one.
    pub fn uniform_sigma(&self) -> Option<f64> {
        let s = self.sigmas[0];
        self.sigmas.iter().all(|&x| x == s).then_some(s)
    }

    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        Self::new(self.nodes, self.dim, self.components, self.means.clone(), sigma)
    }

    /// One latent node-feature matrix (`I × D`).
    pub fn sample(&self, rng: &mut Rng, mode: ComponentMode) -> Matrix {
        let global = rng.weighted_index(&self.weights);
        let mut out = Matrix::zeros(self.nodes, self.dim);
        for i in 0..self.nodes {
            let m = match mode {
                ComponentMode::PerNode => rng.weighted_index(&self.weights),
                ComponentMode::Global => global,
            };
            let sigma = self.sigma(i, m);
            for (o, mu) in out.row_mut(i).iter_mut().zip(self.mean(i, m)) {
                *o = mu + sigma * rng.normal();
            }
        }
        out
    }

    /// `log p_i(x)` for the mixture at node `i`.
    pub fn log_density(&self, node: usize, x: &[f64]) -> Result<f64> {
        if node >= self.nodes || x.len() != self.dim {
            return Err(Error::domain("log_density: node out of range or wrong dimension"));
        }
        let d = self.dim as f64;
        let terms: Vec<f64> = (0..self.components)
            .map(|m| {
                let s = self.sigma(node, m);
                let sq: f64 = x.iter().zip(self.mean(node, m)).map(|(a, b)| (a - b).powi(2)).sum();
                self.weights[m].ln() - 0.5 * sq / (s * s) - d * (s.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln())
            })
            .collect();
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln())
    }

    /// Packs the means as an `I × (M·D)` grid, component-major within a row.
    pub fn to_flat(&self) -> Matrix {
        Matrix::new(self.nodes, self.components * self.dim, self.means.clone()).expect("validated means")
    }

    pub fn from_flat(grid: &Matrix, dim: usize, sigma: f64) -> Result<Self> {
        if dim == 0 || !grid.cols().is_multiple_of(dim) || grid.cols() == 0 {
            return Err(Error::domain(format!(
                "grid width {} is not a positive multiple of D = {dim}",
                grid.cols()
            )));
        }
        Self::new(grid.rows(), dim, grid.cols() / dim, grid.as_slice().to_vec(), sigma)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = DistributionDoc {
            nodes: self.nodes,
            dim: self.dim,
            components: self.components,
            sigma: self.uniform_sigma().unwrap_or(self.sigmas[0]),
            means: (0..self.nodes)
                .map(|i| (0..self.components).map(|m| self.mean(i, m).to_vec()).collect())
                .collect(),
            sigmas: self.uniform_sigma().is_none().then(|| {
                (0..self.nodes)
                    .map(|i| (0..self.components).map(|m| self.sigma(i, m)).collect())
                    .collect()
            }),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: DistributionDoc = serde_json::from_str(text)?;
        if doc.means.len() != doc.nodes
            || doc
                .means
                .iter()
                .any(|n| n.len() != doc.components || n.iter().any(|m| m.len() != doc.dim))
        {
            return Err(Error::domain("distribution means do not match I, M, D"));
        }
        let flat: Vec<f64> = doc.means.into_iter().flatten().flatten().collect();
        let mut dist = Self::new(doc.nodes, doc.dim, doc.components, flat, doc.sigma)?;
        if let Some(sigmas) = doc.sigmas {
            let flat: Vec<f64> = sigmas.into_iter().flatten().collect();
            if flat.len() != dist.sigmas.len() || flat.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
                return Err(Error::domain("per-component sigmas must be I × M positive values"));
            }
            dist.sigmas = flat;
        }
        Ok(dist)
    }
}

#[derive(Serialize, Deserialize)]
struct DistributionDoc {
    #[serde(rename = "I")]
    nodes: usize,
    #[serde(rename = "D")]
    dim: usize,
    #[serde(rename = "M")]
    components: usize,
    sigma: f64,
    means: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigmas: Option<Vec<Vec<f64>>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn latents(rng: &mut Rng, m: usize) -> Vec<Matrix> {
        (0..m).map(|_| Matrix::random_normal(3, 2, 1.0, rng)).collect()
    }

    #[test]
    fn summarize_copies_means_bitwise() {
        let mut rng = Rng::seed_from(1);
        let ls = latents(&mut rng, 3);
        let dist = GaussianMixtureGraphDistribution::summarize(&ls, 0.6).unwrap();
        for (m, l) in ls.iter().enumerate() {
            for i in 0..3 {
                assert_eq!(dist.mean(i, m), l.row(i));
            }
        }
        assert_eq!(dist.weights(), &[1.0 / 3.0; 3]);
        assert_eq!(dist.uniform_sigma(), Some(0.6));
    }

    #[test]
    fn summarize_rejects_bad_input() {
        assert!(GaussianMixtureGraphDistribution::summarize(&[], 0.6).is_err());
        let ls = vec![Matrix::zeros(3, 2), Matrix::zeros(2, 2)];
        assert!(GaussianMixtureGraphDistribution::summarize(&ls, 0.6).is_err());
        assert!(GaussianMixtureGraphDistribution::summarize(&ls[..1], 0.0).is_err());
    }

    #[test]
    fn tiny_sigma_samples_a_mean() {
        let mut rng = Rng::seed_from(2);
        let ls = latents(&mut rng, 2);
        let dist = GaussianMixtureGraphDistribution::summarize(&ls, 1e-300).unwrap();
        let s = dist.sample(&mut rng, ComponentMode::PerNode);
        for i in 0..3 {
            assert!(ls.iter().any(|l| l.row(i) == s.row(i)));
        }
        let g = dist.sample(&mut rng, ComponentMode::Global);
        assert!(ls.iter().any(|l| l == &g));
    }

    #[test]
    fn flat_packing_is_exact() {
        let mut rng = Rng::seed_from(3);
        let dist = GaussianMixtureGraphDistribution::summarize(&latents(&mut rng, 4), 0.6).unwrap();
        let flat = dist.to_flat();
        assert_eq!(flat.shape(), (3, 8));
        let back = GaussianMixtureGraphDistribution::from_flat(&flat, 2, 0.6).unwrap();
        assert_eq!(back, dist);
        assert!(GaussianMixtureGraphDistribution::from_flat(&flat, 3, 0.6).is_err());
    }

    #[test]
    fn single_component_flat_is_the_means() {
        let mut rng = Rng::seed_from(4);
        let l = latents(&mut rng, 1);
        let dist = GaussianMixtureGraphDistribution::summarize(&l, 0.6).unwrap();
        assert_eq!(dist.to_flat(), l[0]);
    }

    #[test]
    fn json_roundtrip() {
        let mut rng = Rng::seed_from(5);
        let dist = GaussianMixtureGraphDistribution::summarize(&latents(&mut rng, 2), 0.6).unwrap();
        let text = dist.to_json().unwrap();
        assert!(text.contains("\"I\":3") && text.contains("\"M\":2") && text.contains("\"sigma\":0.6"));
        assert_eq!(GaussianMixtureGraphDistribution::from_json(&text).unwrap(), dist);
    }

    #[test]
    fn density_peaks_at_single_component_mean() {
        let mut rng = Rng::seed_from(6);
        let l = latents(&mut rng, 1);
        let dist = GaussianMixtureGraphDistribution::summarize(&l, 0.6).unwrap();
        let at_mean = dist.log_density(0, l[0].row(0)).unwrap();
        for _ in 0..50 {
            let x: Vec<f64> = l[0].row(0).iter().map(|v| v + 0.3 * rng.normal()).collect();
            assert!(dist.log_density(0, &x).unwrap() < at_mean);
        }
    }
}
