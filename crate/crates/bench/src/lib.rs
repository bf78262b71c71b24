//! Benchmarks live in `benches/`; run them with `cargo bench -p regnn-bench`.
//! This library only provides the shared fixtures.

use regnn_core::graph::nodes_to_graph;
use regnn_core::{AttributeGraph, Matrix, MeflBlock, RegnnModel, Rng};

/// Desk-scale graph and enforced model: 8 nodes, 8-dim features, 4 layers.
pub fn desk_fixture(seed: u64) -> (MeflBlock, AttributeGraph, RegnnModel) {
    let mut rng = Rng::seed_from(seed);
    let mefl = MeflBlock::random(8, 4, 8, 1.0, &mut rng);
    let g = nodes_to_graph(Matrix::random_normal(8, 8, 1.0, &mut rng), &mefl, 3).expect("valid shape");
    let model = RegnnModel::random(4, 8, 4, 1.0, 0.5, &mut rng).expect("enforceable");
    (mefl, g, model)
}
