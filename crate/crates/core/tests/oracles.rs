//! Independent oracles for the numerical core: finite differences, a Jacobi
//! SVD, an adjugate inverse, exhaustive grid search and straight-line model
//! evaluations.

mod support;

use probe_core::bounds::noise_matrix;
use probe_core::explain::graphmask::ErasureLayer;
use probe_core::explain::gradient::integrate_path;
use probe_core::gnn::forward;
use probe_core::linalg::{invert, spectral_norm, Matrix};
use probe_core::metrics::statistical_parity;
use probe_core::rng::seeded;
use probe_core::subgraph::computation_subgraph;
use rand::Rng;
use support::*;

const FD_REL_TOL: f64 = 1e-5;

#[test]
fn forward_matches_straight_line_evaluation() {
    let g = five_node_fixture();
    let model = fixture_model(3);
    let oracle = straight_line_probs(&model, &g, &[], None);
    for u in 0..5 {
        let probs = forward(&model, &computation_subgraph(&g, u, 2).unwrap()).unwrap().probs;
        for (a, b) in probs.iter().zip(&oracle[u]) {
            assert!((a - b).abs() < 1e-12, "node {u}: {a} vs {b}");
        }
    }
}

#[test]
fn input_gradient_matches_finite_differences() {
    let worst = input_gradient_max_rel_error();
    assert!(worst <= FD_REL_TOL, "worst relative error {worst:e}");
}

#[test]
fn training_gradient_matches_finite_differences() {
    let worst = training_gradient_max_rel_error();
    assert!(worst <= FD_REL_TOL, "worst relative error {worst:e}");
}

#[test]
fn spectral_norm_matches_jacobi_svd() {
    let (worst, converged) = spectral_norm_max_error();
    assert!(converged);
    assert!(worst <= 1e-8, "worst error {worst:e}");
}

#[test]
fn spectral_norm_of_diagonal_and_rank_one() {
    let d = Matrix::from_fn(4, 4, |i, j| if i == j { [0.5f64, -3.0, 2.0, 1.0][i] } else { 0.0 });
    assert!((spectral_norm(&d).value - 3.0).abs() < 1e-10);
    let u = [1.0f64, 2.0, 2.0];
    let v = [3.0, 4.0];
    let r = Matrix::from_fn(3, 2, |i, j| u[i] * v[j]);
    assert!((spectral_norm(&r).value - 15.0).abs() < 1e-10);
}

fn adjugate_inverse(a: &Matrix<f64>) -> [[f64; 3]; 3] {
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

#[test]
fn inverse_matches_adjugate_formula() {
    let mut rng = seeded(77);
    for _ in 0..20 {
        let a = Matrix::from_fn(3, 3, |i, j| rng.gen_range(-1.0..1.0) + if i == j { 2.0 } else { 0.0 });
        let inv = invert(&a).unwrap();
        let oracle = adjugate_inverse(&a);
        for i in 0..3 {
            for j in 0..3 {
                assert!((inv.matrix[(i, j)] - oracle[i][j]).abs() < 1e-12);
            }
        }
        assert!(inv.residual <= 1e-12);
    }
    // the noise matrix of the surrogate bound on three samples
    let w = noise_matrix(&[0.2, -0.4, 0.9], 0.7, 1.3);
    let oracle = adjugate_inverse(&w);
    let inv = invert(&w).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert!((inv.matrix[(i, j)] - oracle[i][j]).abs() < 1e-10 * oracle[i][j].abs().max(1.0));
        }
    }
}

#[test]
fn hsic_solver_matches_grid_search() {
    for c in hsic_grid_comparisons() {
        assert!(c.converged && c.nonnegative, "{c:?}");
        assert!(c.max_coefficient_gap <= 2e-3, "{c:?}");
        assert!(c.below_zero_objective && c.below_grid_objective, "{c:?}");
    }
}

#[test]
fn integrated_gradients_exact_on_linear_function() {
    let w = [0.5f64, -2.0, 3.0];
    let x = [1.0f64, 2.0, -1.0];
    let base = [0.0f64; 3];
    for steps in [1, 7, 50] {
        let attr = integrate_path(&x, &base, steps, |_| Ok(w.to_vec())).unwrap();
        for i in 0..3 {
            assert!((attr[i] - w[i] * x[i]).abs() < 1e-14);
        }
    }
}

#[test]
fn integrated_gradients_satisfy_completeness() {
    let g = five_node_fixture();
    let model = fixture_model(11);
    let sub = computation_subgraph(&g, 2, 2).unwrap();
    let class = forward(&model, &sub).unwrap().prediction();
    let logit = |row: &[f64]| {
        let trace = forward(&model, &sub.with_target_features(row)).unwrap();
        trace.logits[class]
    };
    let x = sub.target_features().to_vec();
    let attr = integrate_path(&x, &[0.0; 3], 4000, |p| {
        probe_core::explain::gradient::logit_gradient(&model, &sub.with_target_features(p), class)
    })
    .unwrap();
    let total: f64 = attr.iter().sum();
    assert!((total - (logit(&x) - logit(&[0.0; 3]))).abs() < 1e-6);
}

#[test]
fn erasure_lipschitz_constant_matches_three_factor_oracle() {
    let mut rng = seeded(5);
    let w1 = Matrix::from_fn(4, 6, |_, _| rng.gen_range(-1.0..1.0));
    let layer = ErasureLayer {
        w1: w1.clone(),
        w2: vec![0.4, -0.8, 0.1, 1.2],
        mean: vec![0.1, -0.2, 0.3, 0.0],
        scale: vec![0.5, 2.0, 1.0, 0.25],
        baseline: vec![0.0; 3],
    };
    let inv_scale = (4.0f64 + 0.25 + 1.0 + 16.0).sqrt();
    let w2 = (0.16f64 + 0.64 + 0.01 + 1.44).sqrt();
    let oracle = inv_scale * w2 * jacobi_singular_values(&w1)[0];
    assert!((layer.lipschitz() - oracle).abs() < 1e-8 * oracle);
    for _ in 0..200 {
        let q: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let r: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let d = q.iter().zip(&r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        assert!((layer.z(&q) - layer.z(&r)).abs() <= oracle * d + 1e-12);
    }
}

#[test]
fn unfaithfulness_matches_straight_line_oracle() {
    let gap = unfaithfulness_oracle_gap();
    assert!(gap < 1e-12, "gap {gap:e}");
}

#[test]
fn statistical_parity_straight_line() {
    let pred = [1, 0, 1, 1, 0, 0, 1];
    let s = [0u8, 0, 0, 1, 1, 1, 1];
    let p0: f64 = 2.0 / 3.0;
    let p1: f64 = 2.0 / 4.0;
    assert!((statistical_parity(&pred, &s).unwrap() - (p0 - p1).abs()).abs() < 1e-12);
}
