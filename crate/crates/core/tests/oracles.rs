//! Independent reference computations checked against the library.

use std::collections::BTreeMap;

use regnn_core::afrdl::{distribution_mse_loss, pairwise_l1_loss};
use regnn_core::gmgd::{ComponentMode, GaussianMixtureGraphDistribution};
use regnn_core::graph::{clip_nodes, graph_to_clip, nodes_to_graph, select_top_k, EdgeTensor};
use regnn_core::metrics::{self, EvalPair};
use regnn_core::numeric::{finite_diff_grad, relative_error, softmax, spectral_norm};
use regnn_core::regnn::ReverseOptions;
use regnn_core::{AttributeGraph, EdgeSet, Matrix, MeflBlock, ReactionClip, RegnnLayer, RegnnModel, Rng, TemporalBasis};

/// Neumaier-compensated sum.
fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = s + v;
        c += if s.abs() >= v.abs() { (s - t) + v } else { (v - t) + s };
        s = t;
    }
    s + c
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn enforced_layer(index: usize, d: usize, ed: usize, rng: &mut Rng) -> RegnnLayer {
    let mut layer = RegnnLayer::random(index, d, ed, 1.0, rng);
    let mean: Vec<f64> = (0..d).map(|_| rng.uniform(-0.5, 0.5)).collect();
    let std: Vec<f64> = (0..d).map(|_| rng.uniform(0.5, 1.5)).collect();
    layer.set_normalization(&mean, &std).unwrap();
    layer.enforce(0.5).unwrap();
    layer
}

fn random_graph(rows: usize, d: usize, ed: usize, k: usize, rng: &mut Rng) -> AttributeGraph {
    let mefl = MeflBlock::random(d, ed, 4, 1.0, rng);
    nodes_to_graph(Matrix::random_normal(rows, d, 1.0, rng), &mefl, k).unwrap()
}

/// Sigmoid-preprocessed node features of `layer`.
fn preprocess(layer: &RegnnLayer, x: &Matrix) -> Matrix {
    let (mean, std) = layer.normalization();
    Matrix::from_fn(x.rows(), x.cols(), |r, c| sigmoid((x[(r, c)] - mean[c]) / std[c]))
}

fn score(layer: &RegnnLayer, u: &Matrix, i: usize, j: usize) -> f64 {
    let (wq, wm) = (layer.w_q(), layer.w_m());
    let d = u.cols();
    let q: Vec<f64> = (0..d).map(|c| (0..d).map(|k| u[(i, k)] * wq[(k, c)]).sum()).collect();
    let m: Vec<f64> = (0..d).map(|c| (0..d).map(|k| u[(j, k)] * wm[(k, c)]).sum()).collect();
    q.iter().zip(&m).map(|(a, b)| a * b).sum()
}

/// Coefficients from the textbook formula, keyed `(j, i)`.
fn coefficient_oracle(layer: &RegnnLayer, x: &Matrix, edges: &EdgeSet<f64>) -> BTreeMap<(usize, usize), f64> {
    let u = preprocess(layer, x);
    let mut out = BTreeMap::new();
    for i in 0..x.rows() {
        let nbrs: Vec<usize> = edges.pairs().iter().filter(|p| p.1 == i).map(|p| p.0).collect();
        let exps: Vec<f64> = nbrs.iter().map(|&j| score(layer, &u, i, j).exp()).collect();
        let total = exact_sum(exps.iter().copied());
        for (j, e) in nbrs.into_iter().zip(exps) {
            out.insert((j, i), e / total);
        }
    }
    out
}

fn edge_update_oracle(layer: &RegnnLayer, x: &Matrix, edges: &EdgeSet<f64>) -> BTreeMap<(usize, usize), Vec<f64>> {
    let a = coefficient_oracle(layer, x, edges);
    let e0 = edges.to_map();
    let mut out = BTreeMap::new();
    for (&(j, i), feat) in &e0 {
        let v: Vec<f64> = (0..feat.len())
            .map(|d| {
                let denom = exact_sum(e0.iter().filter(|(p, _)| p.1 == i).map(|(p, f)| a[p] * f[d]));
                a[&(j, i)] * feat[d] / denom
            })
            .collect();
        out.insert((j, i), v);
    }
    out
}

fn forward_oracle(layer: &RegnnLayer, x: &Matrix, edges: &EdgeSet<f64>) -> Matrix {
    let u = preprocess(layer, x);
    let e = edge_update_oracle(layer, x, edges);
    let w_e = layer.w_e();
    let denom = 1.0 + 2.0 * layer.budget().unwrap().spectral_norm;
    let u = &u;
    Matrix::from_fn(x.rows(), x.cols(), |i, c| {
        let msg = exact_sum(
            e.iter()
                .filter(|(p, _)| p.1 == i)
                .flat_map(|(&(j, _), f)| f.iter().zip(w_e).map(move |(fd, w)| w * fd * u[(j, c)])),
        );
        x[(i, c)] + msg / denom
    })
}

#[test]
fn spectral_norm_matches_characteristic_polynomial_root() {
    let mut rng = Rng::seed_from(7);
    let m = Matrix::random_normal(4, 4, 1.0, &mut rng);
    let g = m.gram();
    // Faddeev-LeVerrier: det(λI - G) = λ⁴ + c1 λ³ + c2 λ² + c3 λ + c4.
    let n = 4;
    let mut coeffs = vec![1.0];
    let mut mk = Matrix::zeros(n, n);
    for k in 1..=n {
        let prev = coeffs[k - 1];
        let shifted = Matrix::from_fn(n, n, |r, c| mk[(r, c)] + if r == c { prev } else { 0.0 });
        mk = g.matmul(&shifted).unwrap();
        let trace: f64 = (0..n).map(|i| mk[(i, i)]).sum();
        coeffs.push(-trace / k as f64);
    }
    let p = |x: f64| coeffs.iter().fold(0.0, |acc, c| acc * x + c);
    let hi_bound: f64 = (0..n).map(|i| g[(i, i)]).sum::<f64>() + 1.0;
    let steps = 200_000;
    let mut lo = 0.0;
    let mut hi = hi_bound;
    for s in (0..steps).rev() {
        let x = hi_bound * s as f64 / steps as f64;
        if p(x) <= 0.0 {
            lo = x;
            hi = hi_bound * (s + 1) as f64 / steps as f64;
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if p(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let oracle = (0.5 * (lo + hi)).sqrt();
    let est = spectral_norm(&m, 1e-13, 1_000_000).unwrap();
    assert!((est - oracle).abs() < 1e-8, "{est} vs {oracle}");
}

#[test]
fn softmax_matches_compensated_direct_evaluation() {
    let mut rng = Rng::seed_from(3);
    let v: Vec<f64> = (0..5).map(|_| rng.uniform(-10.0, 10.0)).collect();
    let s = softmax(&v).unwrap();
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total = exact_sum(exps.iter().copied());
    for (a, e) in s.iter().zip(&exps) {
        assert!((a - e / total).abs() < 1e-15);
    }
    assert!((exact_sum(s.iter().copied()) - 1.0).abs() < 1e-12);
}

#[test]
fn regnn_weight_gradient_matches_central_differences() {
    let mut rng = Rng::seed_from(21);
    let g = random_graph(3, 3, 2, 2, &mut rng);
    let model = RegnnModel::new(vec![enforced_layer(0, 3, 2, &mut rng), enforced_layer(1, 3, 2, &mut rng)]).unwrap();
    let (loss, grad) = model.squared_output_gradient(&g).unwrap();
    let w = model.flat_weights();
    assert!((model.squared_output_loss(&w, &g).unwrap() - loss).abs() < 1e-12);
    let fd = finite_diff_grad(|p| model.squared_output_loss(p, &g).unwrap(), &w, 1e-6).unwrap();
    let err = relative_error(&grad, &fd);
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn truncated_projection_residual_is_discarded_energy() {
    let mut rng = Rng::seed_from(17);
    let values = Matrix::random_uniform(4, 16, 0.0, 1.0, &mut rng);
    let clip = ReactionClip::new("c", values.clone()).unwrap();
    let half = TemporalBasis::dct(16, 8).unwrap();
    let full = TemporalBasis::dct(16, 16).unwrap();
    for i in 0..4 {
        let series = clip.series(i);
        let recon = half.reconstruct(&half.project(series));
        let residual: f64 = series.iter().zip(&recon).map(|(a, b)| (a - b).powi(2)).sum();
        let discarded: f64 = full.project(series)[8..].iter().map(|c| c * c).sum();
        assert!((residual - discarded).abs() < 1e-12);
    }
}

#[test]
fn decoding_matches_explicit_cosine_series() {
    let (t, d) = (12, 4);
    let basis = TemporalBasis::dct(t, d).unwrap();
    let coeffs = [0.5 * (t as f64).sqrt(), 0.3, -0.2, 0.1];
    let nodes = Matrix::from_rows(&[coeffs.to_vec(), coeffs.iter().map(|c| c * 0.9).collect()]).unwrap();
    let mut rng = Rng::seed_from(1);
    let mefl = MeflBlock::random(d, 1, 2, 1.0, &mut rng);
    let g = nodes_to_graph(nodes.clone(), &mefl, 1).unwrap();
    let clip = graph_to_clip(&g, &basis).unwrap();
    for r in 0..2 {
        for s in 0..t {
            let expect: f64 = (0..d)
                .map(|k| {
                    let norm = if k == 0 { (1.0 / t as f64).sqrt() } else { (2.0 / t as f64).sqrt() };
                    let phase = std::f64::consts::PI * (s as f64 + 0.5) * k as f64 / t as f64;
                    nodes[(r, k)] * norm * phase.cos()
                })
                .sum();
            assert!((clip.values()[(r, s)] - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn top_k_matches_full_sort() {
    let mut rng = Rng::seed_from(23);
    let t = EdgeTensor::from_fn(5, 3, |_, _, _| rng.uniform(0.0, 1.0));
    let kept = select_top_k(&t, 2).unwrap();
    let mut expect = Vec::new();
    for i in 0..5 {
        let mut row: Vec<(f64, usize)> = (0..5)
            .filter(|&j| j != i)
            .map(|j| (t.edge(i, j).iter().map(|v| v * v).sum::<f64>().sqrt(), j))
            .collect();
        row.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        expect.extend(row[..2].iter().map(|&(_, j)| (i, j)));
    }
    expect.sort();
    let mut got = kept.clone();
    got.sort();
    assert_eq!(got, expect);
}

#[test]
fn mefl_matches_stepwise_attention() {
    let mut rng = Rng::seed_from(11);
    let block = MeflBlock::random(4, 3, 2, 1.0, &mut rng);
    let x = Matrix::random_normal(3, 4, 1.0, &mut rng);
    let tensor = block.edges(&x).unwrap();
    for d in 0..3 {
        let q = x.matmul(&block.query(d)).unwrap();
        let k = x.matmul(&block.key(d)).unwrap();
        for i in 0..3 {
            let scores: Vec<f64> = (0..3)
                .map(|j| exact_sum((0..2).map(|a| q[(i, a)] * k[(j, a)])) / 2f64.sqrt())
                .collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total = exact_sum(scores.iter().map(|s| (s - max).exp()));
            for j in 0..3 {
                let expect = (scores[j] - max).exp() / total;
                assert!((tensor.get(i, j, d) - expect).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn edge_update_matches_direct_transcription() {
    let mut rng = Rng::seed_from(5);
    let g = random_graph(4, 3, 2, 2, &mut rng);
    let layer = enforced_layer(0, 3, 2, &mut rng);
    let got = layer.edge_update(g.node_features(), g.edges()).unwrap();
    let expect = edge_update_oracle(&layer, g.node_features(), g.edges());
    assert_eq!(got.keys().collect::<Vec<_>>(), expect.keys().collect::<Vec<_>>());
    for (k, v) in &got {
        for (a, b) in v.iter().zip(&expect[k]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn coefficients_match_softmax_of_assembled_scores() {
    let mut rng = Rng::seed_from(31);
    let g = random_graph(3, 2, 2, 2, &mut rng);
    let layer = enforced_layer(0, 2, 2, &mut rng);
    let got = layer.coefficients(g.node_features(), g.edges()).unwrap();
    let u = preprocess(&layer, g.node_features());
    for i in 0..3 {
        let nbrs: Vec<usize> = g.edges().pairs().iter().filter(|p| p.1 == i).map(|p| p.0).collect();
        if nbrs.is_empty() {
            continue;
        }
        let scores: Vec<f64> = nbrs.iter().map(|&j| score(&layer, &u, i, j)).collect();
        for (j, s) in nbrs.iter().zip(softmax(&scores).unwrap()) {
            assert!((got[&(*j, i)] - s).abs() < 1e-14);
        }
    }
}

#[test]
fn chain_forward_matches_composed_oracles() {
    let mut rng = Rng::seed_from(9);
    let mut map = BTreeMap::new();
    map.insert((0, 1), vec![0.3, 0.7]);
    map.insert((1, 2), vec![0.6, 0.4]);
    let edges = EdgeSet::from_map(3, 2, &map).unwrap();
    let x = Matrix::random_normal(3, 3, 1.0, &mut rng);
    let layer = enforced_layer(0, 3, 2, &mut rng);
    let got = layer.forward(&x, &edges).unwrap();
    let expect = forward_oracle(&layer, &x, &edges);
    assert!(got.max_abs_diff(&expect) < 1e-12);
    assert_eq!(got.row(0), x.row(0));
}

#[test]
fn reverse_recovers_input_and_fixed_point_is_unique() {
    let mut rng = Rng::seed_from(13);
    let g = random_graph(5, 4, 3, 2, &mut rng);
    let layer = enforced_layer(0, 4, 3, &mut rng);
    let next = layer.forward(g.node_features(), g.edges()).unwrap();
    let tol = 1e-8;
    let a = layer.reverse(&next, g.edges(), &ReverseOptions { tol, max_iter: 500, seed: 1 }).unwrap();
    let b = layer.reverse(&next, g.edges(), &ReverseOptions { tol, max_iter: 500, seed: 2 }).unwrap();
    assert!(a.nodes.max_abs_diff(g.node_features()) < 1e-6);
    assert!(a.nodes.max_abs_diff(&b.nodes) < 2.0 * tol);
    let again = layer.forward(&a.nodes, g.edges()).unwrap();
    assert!(again.max_abs_diff(&next) < 10.0 * tol);
}

#[test]
fn enforced_layer_is_empirically_contractive() {
    let mut rng = Rng::seed_from(41);
    let g = random_graph(6, 5, 3, 3, &mut rng);
    let layer = enforced_layer(0, 5, 3, &mut rng);
    let l = layer.empirical_lipschitz(g.edges(), 1000, 99).unwrap();
    assert!(l < 1.0, "empirical Lipschitz {l}");
}

#[test]
fn four_layer_round_trip() {
    let mut rng = Rng::seed_from(43);
    let g = random_graph(8, 6, 3, 3, &mut rng);
    let model = RegnnModel::new((0..4).map(|n| enforced_layer(n, 6, 3, &mut rng)).collect()).unwrap();
    let back = model.reverse(&model.forward(&g).unwrap(), &ReverseOptions::default()).unwrap();
    assert!(back.node_features().max_abs_diff(g.node_features()) < 1e-5);
}

#[test]
fn single_layer_model_equals_layer() {
    let mut rng = Rng::seed_from(47);
    let g = random_graph(4, 3, 2, 2, &mut rng);
    let layer = enforced_layer(0, 3, 2, &mut rng);
    let model = RegnnModel::new(vec![layer.clone()]).unwrap();
    let out = model.forward(&g).unwrap();
    assert_eq!(out.node_features(), &layer.forward(g.node_features(), g.edges()).unwrap());
}

#[test]
fn mixture_sampling_statistics() {
    let mut rng = Rng::seed_from(51);
    let a = Matrix::from_rows(&[vec![-1.0, 2.0]]).unwrap();
    let b = Matrix::from_rows(&[vec![1.0, 4.0]]).unwrap();
    let sigma = 0.6;
    let dist = GaussianMixtureGraphDistribution::summarize(&[a, b], sigma).unwrap();
    let n = 100_000;
    let mut sum = [0.0; 2];
    let mut outside = 0usize;
    for _ in 0..n {
        let s = dist.sample(&mut rng, ComponentMode::PerNode);
        for c in 0..2 {
            sum[c] += s[(0, c)];
        }
        let near = (0..2).any(|m| (0..2).all(|c| (s[(0, c)] - dist.mean(0, m)[c]).abs() <= 5.0 * sigma));
        if !near {
            outside += 1;
        }
    }
    assert_eq!(outside, 0);
    // Component offset is ±1 per coordinate, so variance is σ² + 1.
    let se = ((sigma * sigma + 1.0) / n as f64).sqrt();
    for (c, mid) in [0.0, 3.0].into_iter().enumerate() {
        assert!((sum[c] / n as f64 - mid).abs() < 3.0 * se);
    }
}

#[test]
fn random_distribution_roundtrips() {
    let mut rng = Rng::seed_from(53);
    let latents: Vec<Matrix> = (0..3).map(|_| Matrix::random_normal(4, 3, 1.0, &mut rng)).collect();
    let dist = GaussianMixtureGraphDistribution::summarize(&latents, 0.6).unwrap();
    for (m, l) in latents.iter().enumerate() {
        for i in 0..4 {
            assert_eq!(dist.mean(i, m), l.row(i));
        }
    }
    let back = GaussianMixtureGraphDistribution::from_flat(&dist.to_flat(), 3, 0.6).unwrap();
    assert_eq!(back, dist);
    let json = GaussianMixtureGraphDistribution::from_json(&dist.to_json().unwrap()).unwrap();
    assert_eq!(json, dist);
}

#[test]
fn alignment_loss_matches_triple_loop() {
    let mut rng = Rng::seed_from(57);
    let latents: Vec<Matrix> = (0..3).map(|_| Matrix::random_normal(3, 2, 1.0, &mut rng)).collect();
    let mut expect = 0.0;
    for a in 0..3 {
        for b in a + 1..3 {
            for i in 0..3 {
                for d in 0..2 {
                    expect += (latents[a][(i, d)] - latents[b][(i, d)]).abs();
                }
            }
        }
    }
    assert!((pairwise_l1_loss(&latents).unwrap() - expect).abs() < 1e-12);
}

#[test]
fn distribution_loss_matches_double_loop() {
    let mut rng = Rng::seed_from(59);
    let a = Matrix::random_normal(4, 6, 1.0, &mut rng);
    let b = Matrix::random_normal(4, 6, 1.0, &mut rng);
    let mut expect = 0.0;
    for r in 0..4 {
        for c in 0..6 {
            expect += (a[(r, c)] - b[(r, c)]).powi(2);
        }
    }
    expect /= 24.0;
    assert!((distribution_mse_loss(&a, &b).unwrap() - expect).abs() < 1e-12);
}

fn clip(id: &str, rows: Vec<Vec<f64>>) -> ReactionClip {
    ReactionClip::new(id, Matrix::from_rows(&rows).unwrap()).unwrap()
}

/// Full `(n+1) × (m+1)` DP table.
fn dtw_table(x: &[f64], y: &[f64]) -> f64 {
    let mut t = vec![vec![f64::INFINITY; y.len() + 1]; x.len() + 1];
    t[0][0] = 0.0;
    for i in 1..=x.len() {
        for j in 1..=y.len() {
            t[i][j] = (x[i - 1] - y[j - 1]).abs() + t[i - 1][j - 1].min(t[i - 1][j]).min(t[i][j - 1]);
        }
    }
    t[x.len()][y.len()]
}

#[test]
fn fr_dist_matches_dtw_tables() {
    let g1 = clip("g1", vec![vec![0.1, 0.5, 0.9], vec![0.2, 0.2, 0.4]]);
    let g2 = clip("g2", vec![vec![0.7, 0.3, 0.3], vec![0.0, 1.0, 0.5]]);
    let r1 = clip("r1", vec![vec![0.1, 0.9, 0.9], vec![0.3, 0.2, 0.1]]);
    let r2 = clip("r2", vec![vec![0.6, 0.6, 0.2], vec![0.1, 0.8, 0.6]]);
    let pair = EvalPair {
        speaker: g1.clone(),
        generated: vec![g1.clone(), g2.clone()],
        appropriate_real: vec![r1.clone(), r2.clone()],
    };
    let d = |a: &ReactionClip, b: &ReactionClip| (0..2).map(|i| dtw_table(a.series(i), b.series(i))).sum::<f64>();
    let expect = (d(&g1, &r1).min(d(&g1, &r2)) + d(&g2, &r1).min(d(&g2, &r2))) / 2.0;
    assert!((metrics::fr_dist(&pair).unwrap() - expect).abs() < 1e-12);
}

#[test]
fn pcc_matches_covariance_definition() {
    let mut rng = Rng::seed_from(61);
    let a = ReactionClip::new("a", Matrix::random_uniform(3, 20, 0.0, 1.0, &mut rng)).unwrap();
    let b = ReactionClip::new("b", Matrix::random_uniform(3, 20, 0.0, 1.0, &mut rng)).unwrap();
    let mut expect = 0.0;
    for i in 0..3 {
        let (x, y) = (a.series(i), b.series(i));
        let n = x.len() as f64;
        let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
        let sxy: f64 = x.iter().zip(y).map(|(p, q)| (p - mx) * (q - my)).sum();
        let sxx: f64 = x.iter().map(|p| (p - mx).powi(2)).sum();
        let syy: f64 = y.iter().map(|q| (q - my).powi(2)).sum();
        expect += sxy / (sxx * syy).sqrt() / 3.0;
    }
    assert!((metrics::clip_pcc(&a, &b).unwrap().value - expect).abs() < 1e-12);
}

#[test]
fn fr_div_matches_pairwise_formula() {
    let a = clip("a", vec![vec![0.0, 1.0], vec![0.5, 0.5]]);
    let b = clip("b", vec![vec![1.0, 1.0], vec![0.0, 0.5]]);
    // Squared differences 1, 0, 0.25, 0 over 4 cells.
    assert!((metrics::fr_div(&[a, b]).unwrap().value - 0.3125).abs() < 1e-15);
}

#[test]
fn tlcc_detects_constructed_shift() {
    let t = 80;
    let base: Vec<f64> = (0..t + 5).map(|s| 0.5 + 0.4 * ((s as f64) * 0.37).sin() * ((s as f64) * 0.11).cos()).collect();
    let speaker: Vec<f64> = base[5..].to_vec();
    let listener: Vec<f64> = base[..t].to_vec();
    let s = clip("s", vec![speaker.clone(), speaker]);
    let g = clip("g", vec![listener.clone(), listener]);
    let r = metrics::synchrony_tlcc(&s, &g, 8).unwrap();
    assert_eq!(r.lag, 5);
    assert_eq!(r.score, 5.0);
}

#[test]
fn clip_nodes_of_constant_clip_is_dc_only() {
    let basis = TemporalBasis::dct(16, 6).unwrap();
    let c = ReactionClip::new("c", Matrix::from_fn(3, 16, |_, _| 0.5)).unwrap();
    let nodes = clip_nodes(&c, &basis).unwrap();
    for i in 0..3 {
        assert!((nodes[(i, 0)] - 0.5 * 4.0).abs() < 1e-12);
        assert!(nodes.row(i)[1..].iter().all(|v| v.abs() < 1e-12));
    }
}
