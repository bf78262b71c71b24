//! Facial-attribute clips, their graph form, and top-K edge pruning.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::mefl::MeflBlock;
use crate::numeric::Matrix;

/// `attributes × frames` grid of facial-attribute intensities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawClip", into = "RawClip")]
pub struct ReactionClip {
    pub clip_id: String,
    values: Matrix,
}

#[derive(Serialize, Deserialize)]
struct RawClip {
    clip_id: String,
    attributes: usize,
    frames: usize,
    values: Vec<Vec<f64>>,
}

impl TryFrom<RawClip> for ReactionClip {
    type Error = Error;

    fn try_from(raw: RawClip) -> Result<Self> {
        if raw.values.len() != raw.attributes {
            return Err(Error::domain(format!(
                "clip {}: declared {} attributes, found {} rows",
                raw.clip_id,
                raw.attributes,
                raw.values.len()
            )));
        }
        if let Some(row) = raw.values.iter().position(|r| r.len() != raw.frames) {
            return Err(Error::domain(format!(
                "clip {}: row {row} has {} frames, expected {}",
                raw.clip_id,
                raw.values[row].len(),
                raw.frames
            )));
        }
        ReactionClip::new(raw.clip_id, Matrix::from_rows(&raw.values)?)
    }
}

impl From<ReactionClip> for RawClip {
    fn from(c: ReactionClip) -> Self {
        RawClip {
            attributes: c.attributes(),
            frames: c.frames(),
            values: (0..c.attributes()).map(|i| c.series(i).to_vec()).collect(),
            clip_id: c.clip_id,
        }
    }
}

impl ReactionClip {
    pub fn new(clip_id: impl Into<String>, values: Matrix) -> Result<Self> {
        let clip_id = clip_id.into();
        if values.rows() < 2 || values.cols() < 2 {
            return Err(Error::domain(format!(
                "clip {clip_id}: needs at least 2 attributes and 2 frames, got {}x{}",
                values.rows(),
                values.cols()
            )));
        }
        if !values.is_finite() {
            return Err(Error::numeric(format!("clip {clip_id}: non-finite value")));
        }
        Ok(Self { clip_id, values })
    }

    pub fn attributes(&self) -> usize {
        self.values.rows()
    }

    pub fn frames(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn series(&self, attribute: usize) -> &[f64] {
        self.values.row(attribute)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("clip serialisation cannot fail")
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        Ok(serde_json::from_str(line)?)
    }
}

/// Orthonormal rows mapping a `frames`-long series to `dim` coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalBasis {
    basis: Matrix,
}

impl TemporalBasis {
    /// First `dim` rows of the orthonormal type-II DCT of length `frames`.
    pub fn dct(frames: usize, dim: usize) -> Result<Self> {
        if dim == 0 || dim > frames {
            return Err(Error::domain(format!(
                "basis dimension {dim} must lie in 1..={frames}"
            )));
        }
        let n = frames as f64;
        let basis = Matrix::from_fn(dim, frames, |k, t| {
            let c = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            c * (PI * (t as f64 + 0.5) * k as f64 / n).cos()
        });
        Ok(Self { basis })
    }

    /// Wraps an explicit basis after checking row orthonormality to 1e-10.
    pub fn from_matrix(basis: Matrix) -> Result<Self> {
        if basis.rows() == 0 || basis.rows() > basis.cols() {
            return Err(Error::domain("basis must have 1 ≤ dim ≤ frames"));
        }
        let me = Self { basis };
        if me.orthonormality_error() > 1e-10 {
            return Err(Error::domain("basis rows are not orthonormal"));
        }
        Ok(me)
    }

    pub fn frames(&self) -> usize {
        self.basis.cols()
    }

    pub fn dim(&self) -> usize {
        self.basis.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.basis
    }

    /// `max |B·Bᵀ − I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let bbt = self
            .basis
            .matmul(&self.basis.transpose())
            .expect("square by construction");
        bbt.max_abs_diff(&Matrix::identity(self.dim()))
    }

    pub fn project(&self, series: &[f64]) -> Vec<f64> {
        self.basis.matvec(series)
    }

    pub fn reconstruct(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.frames()];
        for (k, &c) in coeffs.iter().enumerate() {
            for (o, b) in out.iter_mut().zip(self.basis.row(k)) {
                *o += c * b;
            }
        }
        out
    }
}

/// Dense `nodes × nodes × dim` edge tensor; entry `(i, j, ·)` is the
/// directed edge from node `i` to node `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeTensor<S> {
    nodes: usize,
    dim: usize,
    data: Vec<S>,
}

impl<S: Real> EdgeTensor<S> {
    pub fn filled(nodes: usize, dim: usize, value: S) -> Self {
        Self {
            nodes,
            dim,
            data: vec![value; nodes * nodes * dim],
        }
    }

    pub fn from_fn(nodes: usize, dim: usize, mut f: impl FnMut(usize, usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(nodes * nodes * dim);
        for i in 0..nodes {
            for j in 0..nodes {
                for d in 0..dim {
                    data.push(f(i, j, d));
                }
            }
        }
        Self { nodes, dim, data }
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize, d: usize) -> S {
        self.data[(i * self.nodes + j) * self.dim + d]
    }

    pub fn set(&mut self, i: usize, j: usize, d: usize, v: S) {
        self.data[(i * self.nodes + j) * self.dim + d] = v;
    }

    pub fn edge(&self, i: usize, j: usize) -> &[S] {
        let off = (i * self.nodes + j) * self.dim;
        &self.data[off..off + self.dim]
    }

    fn norm(&self, i: usize, j: usize) -> f64 {
        self.edge(i, j)
            .iter()
            .map(|v| v.value() * v.value())
            .sum::<f64>()
            .sqrt()
    }
}

/// Per source node, the `k` non-self targets with the largest edge norm.
/// Ties go to the smaller target index. Result is sorted by `(src, dst)`.
pub fn select_top_k<S: Real>(edges: &EdgeTensor<S>, k: usize) -> Result<Vec<(usize, usize)>> {
    let n = edges.nodes();
    if k < 1 {
        return Err(Error::domain("top-K needs K ≥ 1"));
    }
    if k > n.saturating_sub(1) {
        return Err(Error::domain(format!("K = {k} exceeds I − 1 = {}", n.saturating_sub(1))));
    }
    let mut kept = Vec::with_capacity(n * k);
    for src in 0..n {
        let mut cands: Vec<(f64, usize)> = (0..n)
            .filter(|&dst| dst != src)
            .map(|dst| (edges.norm(src, dst), dst))
            .collect();
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut chosen: Vec<usize> = cands[..k].iter().map(|c| c.1).collect();
        chosen.sort_unstable();
        kept.extend(chosen.into_iter().map(|dst| (src, dst)));
    }
    Ok(kept)
}

/// Pruned adjacency and edge features of a dense edge tensor.
pub fn top_k_prune(edges: &EdgeTensor<f64>, k: usize) -> Result<(Vec<Vec<bool>>, BTreeMap<(usize, usize), Vec<f64>>)> {
    let set = EdgeSet::from_tensor(edges, k)?;
    Ok((set.adjacency(), set.to_map()))
}

/// Retained directed edges with their features, indexed by target for
/// message passing.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeSet<S> {
    nodes: usize,
    dim: usize,
    pairs: Vec<(usize, usize)>,
    feats: Vec<S>,
    incoming: Vec<Vec<usize>>,
}

impl<S: Real> EdgeSet<S> {
    pub fn from_tensor(edges: &EdgeTensor<S>, k: usize) -> Result<Self> {
        let pairs = select_top_k(edges, k)?;
        let feats = pairs
            .iter()
            .flat_map(|&(s, d)| edges.edge(s, d).iter().copied())
            .collect();
        Ok(Self::assemble(edges.nodes(), edges.dim(), pairs, feats))
    }

    fn assemble(nodes: usize, dim: usize, pairs: Vec<(usize, usize)>, feats: Vec<S>) -> Self {
        let mut incoming = vec![Vec::new(); nodes];
        for (e, &(_, dst)) in pairs.iter().enumerate() {
            incoming[dst].push(e);
        }
        Self {
            nodes,
            dim,
            pairs,
            feats,
            incoming,
        }
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn feature(&self, edge: usize) -> &[S] {
        &self.feats[edge * self.dim..(edge + 1) * self.dim]
    }

    /// Indices of edges whose target is `node`.
    pub fn incoming(&self, node: usize) -> &[usize] {
        &self.incoming[node]
    }

    pub fn out_degree(&self, node: usize) -> usize {
        self.pairs.iter().filter(|p| p.0 == node).count()
    }

    pub fn adjacency(&self) -> Vec<Vec<bool>> {
        let mut adj = vec![vec![false; self.nodes]; self.nodes];
        for &(s, d) in &self.pairs {
            adj[s][d] = true;
        }
        adj
    }

    pub fn to_values(&self) -> EdgeSet<f64> {
        EdgeSet {
            nodes: self.nodes,
            dim: self.dim,
            pairs: self.pairs.clone(),
            feats: self.feats.iter().map(|v| v.value()).collect(),
            incoming: self.incoming.clone(),
        }
    }
}

impl EdgeSet<f64> {
    pub fn from_map(nodes: usize, dim: usize, map: &BTreeMap<(usize, usize), Vec<f64>>) -> Result<Self> {
        let mut pairs = Vec::with_capacity(map.len());
        let mut feats = Vec::with_capacity(map.len() * dim);
        for (&(s, d), f) in map {
            if s >= nodes || d >= nodes {
                return Err(Error::domain(format!("edge ({s}, {d}) out of range for {nodes} nodes")));
            }
            if s == d {
                return Err(Error::domain(format!("self edge at node {s}")));
            }
            if f.len() != dim {
                return Err(Error::domain(format!(
                    "edge ({s}, {d}) has {} features, expected {dim}",
                    f.len()
                )));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!("edge ({s}, {d}) has non-finite feature")));
            }
            pairs.push((s, d));
            feats.extend_from_slice(f);
        }
        Ok(Self::assemble(nodes, dim, pairs, feats))
    }

    pub fn to_map(&self) -> BTreeMap<(usize, usize), Vec<f64>> {
        self.pairs
            .iter()
            .enumerate()
            .map(|(e, &p)| (p, self.feature(e).to_vec()))
            .collect()
    }

    /// Same edges with features as constants of another scalar type.
    pub(crate) fn lift<T: Real>(&self) -> EdgeSet<T> {
        EdgeSet {
            nodes: self.nodes,
            dim: self.dim,
            pairs: self.pairs.clone(),
            feats: self.feats.iter().map(|&v| T::constant(v)).collect(),
            incoming: self.incoming.clone(),
        }
    }
}

/// `I`-node graph: `I × D` node features plus pruned directed edges.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeGraph {
    node_features: Matrix,
    edges: EdgeSet<f64>,
    max_out_degree: usize,
}

impl AttributeGraph {
    pub fn new(node_features: Matrix, edges: EdgeSet<f64>, max_out_degree: usize) -> Result<Self> {
        if edges.nodes() != node_features.rows() {
            return Err(Error::domain(format!(
                "edge set covers {} nodes, features have {}",
                edges.nodes(),
                node_features.rows()
            )));
        }
        if let Some(n) = (0..edges.nodes()).find(|&n| edges.out_degree(n) > max_out_degree) {
            return Err(Error::domain(format!(
                "node {n} has out-degree {} > K = {max_out_degree}",
                edges.out_degree(n)
            )));
        }
        if !node_features.is_finite() {
            return Err(Error::numeric("non-finite node feature"));
        }
        Ok(Self {
            node_features,
            edges,
            max_out_degree,
        })
    }

    pub fn nodes(&self) -> usize {
        self.node_features.rows()
    }

    pub fn node_dim(&self) -> usize {
        self.node_features.cols()
    }

    pub fn node_features(&self) -> &Matrix {
        &self.node_features
    }

    pub fn edges(&self) -> &EdgeSet<f64> {
        &self.edges
    }

    pub fn max_out_degree(&self) -> usize {
        self.max_out_degree
    }

    pub fn adjacency(&self) -> Vec<Vec<bool>> {
        self.edges.adjacency()
    }

    pub fn edge_features(&self) -> BTreeMap<(usize, usize), Vec<f64>> {
        self.edges.to_map()
    }

    /// Same edges, new node features (shape must match).
    pub fn with_nodes(&self, node_features: Matrix) -> Result<Self> {
        if node_features.shape() != self.node_features.shape() {
            return Err(Error::domain("replacement node features change the graph shape"));
        }
        Self::new(node_features, self.edges.clone(), self.max_out_degree)
    }
}

/// Projects every attribute series onto `basis`.
pub fn clip_nodes(clip: &ReactionClip, basis: &TemporalBasis) -> Result<Matrix> {
    if clip.frames() != basis.frames() {
        return Err(Error::domain(format!(
            "clip {} has {} frames, basis expects {}",
            clip.clip_id,
            clip.frames(),
            basis.frames()
        )));
    }
    let rows: Vec<Vec<f64>> = (0..clip.attributes())
        .map(|i| basis.project(clip.series(i)))
        .collect();
    Matrix::from_rows(&rows)
}

/// Builds a graph over `nodes` with MEFL edges pruned to the top `k` per source.
pub fn nodes_to_graph(nodes: Matrix, mefl: &MeflBlock, k: usize) -> Result<AttributeGraph> {
    let tensor = mefl.edges(&nodes)?;
    let edges = EdgeSet::from_tensor(&tensor, k)?;
    AttributeGraph::new(nodes, edges, k)
}

pub fn clip_to_graph(clip: &ReactionClip, basis: &TemporalBasis, mefl: &MeflBlock, k: usize) -> Result<AttributeGraph> {
    nodes_to_graph(clip_nodes(clip, basis)?, mefl, k)
}

/// Reconstructs each attribute series from its node and clamps to `[0, 1]`.
pub fn graph_to_clip(g: &AttributeGraph, basis: &TemporalBasis) -> Result<ReactionClip> {
    if g.node_dim() != basis.dim() {
        return Err(Error::domain(format!(
            "graph node dim {} does not match basis dim {}",
            g.node_dim(),
            basis.dim()
        )));
    }
    let rows: Vec<Vec<f64>> = (0..g.nodes())
        .map(|i| {
            basis
                .reconstruct(g.node_features().row(i))
                .into_iter()
                .map(|v| v.clamp(0.0, 1.0))
                .collect()
        })
        .collect();
    ReactionClip::new("generated", Matrix::from_rows(&rows)?)
}
