//! Oracles shared by the oracle tests and the acceptance suite.
#![allow(dead_code)]

use probe_core::explain::graphlime::{center_normalize, gaussian_gram, hsic_lasso, hsic_objective};
use probe_core::explanation::Explanation;
use probe_core::gnn::model::Architecture;
use probe_core::gnn::train::loss_and_gradient;
use probe_core::gnn::{input_gradient, GnnModel};
use probe_core::graph::{graph_from_parts, Graph};
use probe_core::linalg::{spectral_norm, Matrix};
use probe_core::metrics::unfaithfulness;
use probe_core::perturb::{perturbation_set, PerturbationConfig};
use probe_core::rng::seeded;
use probe_core::subgraph::{computation_subgraph, whole_graph};
use rand::Rng;

pub const FD_STEP: f64 = 1e-6;

pub fn five_node_fixture() -> Graph<f64> {
    let rows = vec![
        vec![0.5, -1.0, 0.25],
        vec![1.5, 0.3, -0.7],
        vec![-0.2, 0.8, 1.1],
        vec![0.9, -0.4, 0.0],
        vec![-1.3, 0.6, 0.45],
    ];
    let edges = [(0, 1), (1, 2), (2, 0), (2, 3), (3, 4)];
    graph_from_parts(&rows, &edges, &[0, 1, 1, 0, 1], 2, None).unwrap()
}

pub fn fixture_model(seed: u64) -> GnnModel<f64> {
    GnnModel::init(&Architecture::uniform(3, 4, 2, 2), &mut seeded(seed)).unwrap()
}

/// Plain dense evaluation of the model on the full graph, written without the
/// library's propagation code.
pub fn straight_line_probs(model: &GnnModel<f64>, graph: &Graph<f64>, drop_edges: &[(usize, usize)], target_row: Option<(usize, &[f64])>) -> Vec<Vec<f64>> {
    let n = graph.node_count();
    let mut h: Vec<Vec<f64>> = (0..n).map(|i| graph.features().row(i).to_vec()).collect();
    if let Some((u, row)) = target_row {
        h[u] = row.to_vec();
    }
    let dropped = |a: usize, b: usize| drop_edges.iter().any(|&(x, y)| (x, y) == (a, b) || (y, x) == (a, b));
    for layer in &model.layers {
        let mut next = Vec::with_capacity(n);
        for u in 0..n {
            let mut agg = vec![0.0; h[0].len()];
            for &v in graph.neighbors(u) {
                if dropped(u, v) {
                    continue;
                }
                for (a, x) in agg.iter_mut().zip(&h[v]) {
                    *a += x;
                }
            }
            let rows = layer.self_weight.rows();
            let out: Vec<f64> = (0..rows)
                .map(|i| {
                    let mut s = 0.0;
                    for j in 0..h[u].len() {
                        s += layer.self_weight[(i, j)] * h[u][j] + layer.neighbor_weight[(i, j)] * agg[j];
                    }
                    if s > 30.0 {
                        s + (-s).exp().ln_1p()
                    } else {
                        s.exp().ln_1p()
                    }
                })
                .collect();
            next.push(out);
        }
        h = next;
    }
    h.iter()
        .map(|x| {
            let logits: Vec<f64> = (0..model.classifier.rows())
                .map(|c| model.bias[c] + (0..x.len()).map(|j| model.classifier[(c, j)] * x[j]).sum::<f64>())
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = e.iter().sum();
            e.iter().map(|v| v / z).collect()
        })
        .collect()
}

pub fn cross_entropy_at(model: &GnnModel<f64>, graph: &Graph<f64>, u: usize, row: &[f64], label: usize) -> f64 {
    -straight_line_probs(model, graph, &[], Some((u, row)))[u][label].ln()
}

/// `|a − b| / max(|a|, |b|, 1e-3)`
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Worst relative error of the analytic input gradient against central
/// differences over three seeds, every node, label and dimension.
pub fn input_gradient_max_rel_error() -> f64 {
    let g = five_node_fixture();
    let mut worst: f64 = 0.0;
    for seed in [3, 4, 5] {
        let model = fixture_model(seed);
        for u in 0..5 {
            let sub = computation_subgraph(&g, u, 2).unwrap();
            for label in 0..2 {
                let grad = input_gradient(&model, &sub, label).unwrap();
                let x = g.features().row(u).to_vec();
                for j in 0..3 {
                    let mut a = x.clone();
                    let mut b = x.clone();
                    a[j] += FD_STEP;
                    b[j] -= FD_STEP;
                    let fd = (cross_entropy_at(&model, &g, u, &a, label) - cross_entropy_at(&model, &g, u, &b, label)) / (2.0 * FD_STEP);
                    worst = worst.max(rel_error(fd, grad[j]));
                }
            }
        }
    }
    worst
}

/// Worst relative error of the training-loss gradient over every parameter.
pub fn training_gradient_max_rel_error() -> f64 {
    let g = five_node_fixture();
    let model = fixture_model(9);
    let view = whole_graph(&g, 2).unwrap();
    let nodes = [0, 1, 2, 3, 4];
    let (_, grads) = loss_and_gradient(&model, &view, &nodes, g.labels()).unwrap();
    let analytic = grads.flatten();
    let params = model.flatten();
    let loss_at = |p: &[f64]| {
        let mut m = model.clone();
        m.assign(p);
        let probs = straight_line_probs(&m, &g, &[], None);
        nodes.iter().map(|&u| -probs[u][g.labels()[u]].ln()).sum::<f64>() / nodes.len() as f64
    };
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let mut a = params.clone();
        let mut b = params.clone();
        a[i] += FD_STEP;
        b[i] -= FD_STEP;
        let fd = (loss_at(&a) - loss_at(&b)) / (2.0 * FD_STEP);
        worst = worst.max(rel_error(fd, analytic[i]));
    }
    worst
}

/// Singular values by one-sided Jacobi rotations.
pub fn jacobi_singular_values(a: &Matrix<f64>) -> Vec<f64> {
    let (m, n) = a.shape();
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    for _ in 0..100 {
        let mut off: f64 = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha: f64 = cols[p].iter().map(|x| x * x).sum();
                let beta: f64 = cols[q].iter().map(|x| x * x).sum();
                let gamma: f64 = (0..m).map(|i| cols[p][i] * cols[q][i]).sum();
                if gamma.abs() < 1e-300 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt());
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (x, y) = (cols[p][i], cols[q][i]);
                    cols[p][i] = c * x - s * y;
                    cols[q][i] = s * x + c * y;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    let mut sv: Vec<f64> = cols.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv
}

/// Worst `|power iteration − SVD| / max(σ, 1)` over 20 seeded matrices, and
/// whether every run converged.
pub fn spectral_norm_max_error() -> (f64, bool) {
    let mut rng = seeded(2024);
    let mut worst: f64 = 0.0;
    let mut converged = true;
    for _ in 0..20 {
        let rows = rng.gen_range(1..=16);
        let cols = rng.gen_range(1..=16);
        let a = Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0));
        let oracle = jacobi_singular_values(&a)[0];
        let s = spectral_norm(&a);
        converged &= s.converged;
        worst = worst.max((s.value - oracle).abs() / oracle.max(1.0));
    }
    (worst, converged)
}

pub fn adjugate_inverse(a: &Matrix<f64>) -> [[f64; 3]; 3] {
    let m = |i: usize, j: usize| a[(i, j)];
    let cof = |i: usize, j: usize| {
        let r: Vec<usize> = (0..3).filter(|&x| x != i).collect();
        let c: Vec<usize> = (0..3).filter(|&x| x != j).collect();
        let minor = m(r[0], c[0]) * m(r[1], c[1]) - m(r[0], c[1]) * m(r[1], c[0]);
        if (i + j).is_multiple_of(2) {
            minor
        } else {
            -minor
        }
    };
    let det: f64 = (0..3).map(|j| m(0, j) * cof(0, j)).sum();
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x = cof(j, i) / det;
        }
    }
    out
}

/// Coordinate descent against an exhaustive grid (M = 2, n = 5, step 1e-3).
#[derive(Clone, Copy, Debug)]
pub struct GridComparison {
    pub rho: f64,
    pub max_coefficient_gap: f64,
    pub nonnegative: bool,
    pub below_zero_objective: bool,
    pub below_grid_objective: bool,
    pub converged: bool,
}

pub fn hsic_grid_comparisons() -> Vec<GridComparison> {
    let xs = [[0.1, 1.2], [0.9, -0.3], [-0.5, 0.4], [1.4, 0.8], [-1.1, -0.9]];
    let ys = [0.3, 0.7, 0.2, 0.9, 0.05];
    let n = xs.len();
    let grams: Vec<Matrix<f64>> = (0..2)
        .map(|k| center_normalize(&gaussian_gram(|i, j| xs[i][k] - xs[j][k], n, 0.8)))
        .collect();
    let target = center_normalize(&gaussian_gram(|i, j| ys[i] - ys[j], n, 0.3));
    [0.0, 0.01, 0.1]
        .into_iter()
        .map(|rho| {
            let sol = hsic_lasso(&target, &grams, rho).unwrap();
            let obj = hsic_objective(&target, &grams, &sol.beta, rho);
            // quadratic expansion for a fast exhaustive search
            let g = |a: usize, b: usize| grams[a].frobenius_dot(&grams[b]);
            let c = [grams[0].frobenius_dot(&target), grams[1].frobenius_dot(&target)];
            let l2 = target.frobenius_dot(&target);
            let f = |b0: f64, b1: f64| {
                0.5 * (l2 - 2.0 * (b0 * c[0] + b1 * c[1]) + b0 * b0 * g(0, 0) + 2.0 * b0 * b1 * g(0, 1) + b1 * b1 * g(1, 1)) + rho * (b0 + b1)
            };
            let step = 1e-3;
            let mut best = (f64::INFINITY, 0.0, 0.0);
            for i in 0..=2000 {
                for j in 0..=2000 {
                    let (b0, b1) = (i as f64 * step, j as f64 * step);
                    let v = f(b0, b1);
                    if v < best.0 {
                        best = (v, b0, b1);
                    }
                }
            }
            GridComparison {
                rho,
                max_coefficient_gap: (sol.beta[0] - best.1).abs().max((sol.beta[1] - best.2).abs()),
                nonnegative: sol.beta.iter().all(|&b| b >= 0.0),
                below_zero_objective: obj <= hsic_objective(&target, &grams, &[0.0, 0.0], rho) + 1e-15,
                below_grid_objective: obj <= best.0 + 1e-12,
                converged: sol.converged,
            }
        })
        .collect()
}

/// `|library − straight-line|` unfaithfulness on a node-and-edge explanation.
pub fn unfaithfulness_oracle_gap() -> f64 {
    let g = five_node_fixture();
    let model = fixture_model(21);
    let u = 2;
    let sub = computation_subgraph(&g, u, 2).unwrap();
    let cfg = PerturbationConfig {
        require_same_prediction: false,
        ..PerturbationConfig::bound_verification()
    };
    let set = perturbation_set(&g, &sub, &model, 4, &cfg, &mut seeded(8)).unwrap();

    let mut e = Explanation::both(u, "t", 0.5, vec![1.0, 0.0, 1.0], vec![0, 1, 3], vec![1.0, 0.0, 0.0]).unwrap();
    e.node_mask = Some(vec![true, false, true]);
    e.edge_mask = Some(vec![true, false, false]);
    let metric = unfaithfulness(&model, &e, &set).unwrap();

    let mut total = 0.0;
    for member in set.members() {
        let row = member.target_features().to_vec();
        let masked_row: Vec<f64> = row.iter().zip([true, false, true]).map(|(&x, k)| if k { x } else { 0.0 }).collect();
        let plain = straight_line_probs(&model, &g, &[], Some((u, &row)))[u].clone();
        let masked = straight_line_probs(&model, &g, &[(2, 1), (2, 3)], Some((u, &masked_row)))[u].clone();
        total += plain.iter().zip(&masked).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    }
    (metric - total / set.size() as f64).abs()
}
