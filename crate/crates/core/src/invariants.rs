//! Runtime invariant checks shared by the `check` command and the test suites.

use std::collections::BTreeMap;

use crate::afrdl::{Behavior, Trainer};
use crate::error::Result;
use crate::graph::AttributeGraph;
use crate::mefl::MeflBlock;
use crate::regnn::{RegnnModel, ReverseOptions};

pub const EDGE_SUM_TOL: f64 = 1e-10;
pub const COEFFICIENT_SUM_TOL: f64 = 1e-12;
pub const MEFL_ROW_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }

    fn failed(name: &str, err: impl std::fmt::Display) -> Self {
        Self::new(name, false, err.to_string())
    }
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {}: {}", self.name, self.detail)
    }
}

/// Worst-case `reverse(forward(g))` error and iteration count.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RoundTrip {
    pub max_abs_error: f64,
    pub max_iterations: usize,
}

pub fn round_trip(model: &RegnnModel, graphs: &[AttributeGraph], opts: &ReverseOptions) -> Result<RoundTrip> {
    let mut out = RoundTrip::default();
    for g in graphs {
        let latent = model.forward(g)?;
        let (back, stats) = model.reverse_with_stats(&latent, opts)?;
        out.max_abs_error = out
            .max_abs_error
            .max(back.node_features().max_abs_diff(g.node_features()));
        for s in stats {
            out.max_iterations = out.max_iterations.max(s.iterations);
        }
    }
    Ok(out)
}

pub fn check_round_trip(
    model: &RegnnModel,
    graphs: &[AttributeGraph],
    opts: &ReverseOptions,
    max_error: f64,
) -> CheckResult {
    const NAME: &str = "round-trip";
    match round_trip(model, graphs, opts) {
        Ok(r) => CheckResult::new(
            NAME,
            r.max_abs_error < max_error,
            format!(
                "max |reverse(forward(g)) - g| = {:.3e} (limit {max_error:e}), max iterations {}",
                r.max_abs_error, r.max_iterations
            ),
        ),
        Err(e) => CheckResult::failed(NAME, e),
    }
}

/// Largest empirical Lipschitz estimate over every layer and graph.
pub fn max_empirical_lipschitz(model: &RegnnModel, graphs: &[AttributeGraph], pairs: usize, seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (gi, g) in graphs.iter().enumerate() {
        for layer in model.layers() {
            let s = seed.wrapping_add((gi * model.depth() + layer.index()) as u64);
            worst = worst.max(layer.empirical_lipschitz(g.edges(), pairs, s)?);
        }
    }
    Ok(worst)
}

pub fn check_contraction(model: &RegnnModel, graphs: &[AttributeGraph], pairs: usize, seed: u64) -> CheckResult {
    const NAME: &str = "contraction";
    if let Some(layer) = model.layers().iter().find(|l| !l.is_enforced()) {
        return CheckResult::new(NAME, false, format!("layer {} is not enforced", layer.index()));
    }
    if let Some(layer) = model.layers().iter().find(|l| {
        let b = l.budget().expect("checked above");
        !(b.bound < 1.0)
    }) {
        return CheckResult::new(NAME, false, format!("layer {} certified bound is not below 1", layer.index()));
    }
    match max_empirical_lipschitz(model, graphs, pairs, seed) {
        Ok(l) => CheckResult::new(NAME, l < 1.0, format!("max empirical Lipschitz {l:.4} over {pairs} pairs")),
        Err(e) => CheckResult::failed(NAME, e),
    }
}

/// Largest deviation from 1 of MEFL row sums, coefficient sums and
/// incoming edge sums, in that order.
pub fn normalization_errors(mefl: &MeflBlock, model: &RegnnModel, g: &AttributeGraph) -> Result<(f64, f64, f64)> {
    let tensor = mefl.edges(g.node_features())?;
    let n = tensor.nodes();
    let mut mefl_err: f64 = 0.0;
    for i in 0..n {
        for d in 0..tensor.dim() {
            let s: f64 = (0..n).map(|j| tensor.get(i, j, d)).sum();
            mefl_err = mefl_err.max((s - 1.0).abs());
        }
    }
    let (mut coeff_err, mut edge_err): (f64, f64) = (0.0, 0.0);
    let trace = model.forward_trace(g)?;
    for (layer, x) in model.layers().iter().zip(&trace) {
        let mut sums: BTreeMap<usize, f64> = BTreeMap::new();
        for ((_, i), a) in layer.coefficients(x, g.edges())? {
            *sums.entry(i).or_default() += a;
        }
        coeff_err = sums.values().fold(coeff_err, |m, s| m.max((s - 1.0).abs()));
        let mut esums: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for ((_, i), e) in layer.edge_update(x, g.edges())? {
            let acc = esums.entry(i).or_insert_with(|| vec![0.0; e.len()]);
            acc.iter_mut().zip(&e).for_each(|(a, v)| *a += v);
        }
        edge_err = esums
            .values()
            .flatten()
            .fold(edge_err, |m, s| m.max((s - 1.0).abs()));
    }
    Ok((mefl_err, coeff_err, edge_err))
}

pub fn check_normalization(mefl: &MeflBlock, model: &RegnnModel, graphs: &[AttributeGraph]) -> CheckResult {
    const NAME: &str = "normalization";
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    for g in graphs {
        match normalization_errors(mefl, model, g) {
            Ok((a, b, c)) => worst = (worst.0.max(a), worst.1.max(b), worst.2.max(c)),
            Err(e) => return CheckResult::failed(NAME, e),
        }
    }
    CheckResult::new(
        NAME,
        worst.0 <= MEFL_ROW_TOL && worst.1 <= COEFFICIENT_SUM_TOL && worst.2 <= EDGE_SUM_TOL,
        format!(
            "MEFL rows {:.1e}, coefficients {:.1e}, incoming edges {:.1e}",
            worst.0, worst.1, worst.2
        ),
    )
}

pub fn check_gradients(trainer: &Trainer, data: &[Behavior], h: f64, max_rel_err: f64) -> CheckResult {
    const NAME: &str = "gradient";
    match trainer.gradient_check(data, h) {
        Ok(groups) => {
            let worst = groups
                .iter()
                .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
                .expect("at least one group");
            CheckResult::new(
                NAME,
                groups.iter().all(|g| g.rel_err < max_rel_err),
                format!(
                    "{} groups, worst {} rel err {:.2e} (limit {max_rel_err:e})",
                    groups.len(),
                    worst.name,
                    worst.rel_err
                ),
            )
        }
        Err(e) => CheckResult::failed(NAME, e),
    }
}
