use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::completion::{flow_penalty, run_centralized, AdmmConfig, Problem, RunOptions};
use crate::datamatrix::{build_matrix, sample_mask, MaskPolicy, ObservationMask};
use crate::gridmodel::{generate_radial_feeder, solve_scenario, AreaPartition, FeederSpec};
use crate::linflow::{build_area_maps, build_linear_model, truncate_model, AreaMaps};

fn uniform(m: usize, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))
}

fn flow_setup(areas: usize, seed: u64) -> (DMatrix<f64>, AreaMaps) {
    let f = generate_radial_feeder(&FeederSpec::new(12, seed).with_time_steps(2)).unwrap();
    let v = solve_scenario(&f.network, &f.loads).unwrap();
    let data = build_matrix(&v, f.loads.matrix()).unwrap().into_data();
    let model = build_linear_model(&f.network, 2).unwrap();
    let part = if areas == 1 {
        AreaPartition::single(f.network.n_phases()).unwrap()
    } else {
        AreaPartition::contiguous(&f.network, areas).unwrap()
    };
    (data, build_area_maps(&truncate_model(&model, &part).unwrap()))
}

#[test]
fn without_flow_terms_b_samples_entries() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data = uniform(6, 5, &mut rng);
    let mask = sample_mask(6, 5, 0.5, MaskPolicy::Uniform, 1).unwrap();
    let op = build_b_d(&mask, &data, None, 3.0, 0.0).unwrap();
    assert_eq!(op.len(), mask.len());
    let expected: Vec<f64> = mask.entries().map(|(r, c)| data[(r, c)]).collect();
    assert_eq!(op.d().as_slice(), expected.as_slice());
    let x = uniform(6, 5, &mut rng);
    let bx = op.apply(&x).unwrap();
    for (k, (r, c)) in mask.entries().enumerate() {
        assert_eq!(bx[k], x[(r, c)]);
    }
    assert_eq!(op.apply(&DMatrix::zeros(6, 5)).unwrap(), DVector::zeros(op.len()));
    assert!(build_b_d(&mask, &data, None, 0.0, 0.0).is_err());
}

#[test]
fn empty_mask_leaves_only_flow_rows() {
    let (data, maps) = flow_setup(3, 2);
    let (m, n) = data.shape();
    let mask = ObservationMask::new(m, n, [], MaskPolicy::Uniform).unwrap();
    let op = build_b_d(&mask, &data, Some(&maps), 2.0, 5.0).unwrap();
    assert_eq!(op.n_entry_rows(), 0);
    assert_eq!(op.len(), maps.total_residual_len());
}

#[test]
fn defining_identity_holds() {
    let (data, maps) = flow_setup(3, 3);
    let (m, n) = data.shape();
    let mask = sample_mask(m, n, 0.4, MaskPolicy::Uniform, 3).unwrap();
    let (mu, nu) = (7.0, 2.5);
    let op = build_b_d(&mask, &data, Some(&maps), mu, nu).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let x = &data + uniform(m, n, &mut rng) * 0.1;
        let lhs = 0.5 * mu * op.residual(&x).unwrap().norm_squared();
        let masked: f64 = mask.entries().map(|(r, c)| (x[(r, c)] - data[(r, c)]).powi(2)).sum();
        let rhs = 0.5 * mu * masked + 0.5 * nu * flow_penalty(&maps, &x).unwrap();
        assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs(), "{lhs} vs {rhs}");
    }
}

#[test]
fn adjoint_identity_on_random_pairs() {
    let (data, maps) = flow_setup(4, 5);
    let (m, n) = data.shape();
    let mask = sample_mask(m, n, 0.5, MaskPolicy::Scada, 5).unwrap();
    let op = build_b_d(&mask, &data, Some(&maps), 10.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let x = uniform(m, n, &mut rng);
        let z = DVector::from_fn(op.len(), |_, _| rng.random_range(-1.0..1.0));
        let lhs = op.apply(&x).unwrap().dot(&z);
        let rhs = x.dot(&op.adjoint(&z).unwrap());
        assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
    }
    let first = mask.entries().next().unwrap();
    let b0 = op.row_matrix(0).unwrap();
    assert_eq!(b0[first], 1.0);
    assert_eq!(b0.iter().filter(|&&e| e != 0.0).count(), 1);
    assert!(op.adjoint(&DVector::zeros(3)).is_err());
}

#[test]
fn power_iteration_matches_singular_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (m, n) in [(5, 5), (12, 7), (3, 20)] {
        let g = uniform(m, n, &mut rng);
        let exact = crate::svd::singular_values(&g)[0];
        let est = spectral_norm(&g).unwrap();
        assert!((est - exact).abs() <= 1e-7 * exact, "{est} vs {exact}");
    }
    assert_eq!(spectral_norm(&DMatrix::zeros(3, 4)).unwrap(), 0.0);
}

#[test]
fn theorem1_trivial_and_scaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data = uniform(6, 4, &mut rng);
    let mask = ObservationMask::full(6, 4);
    let op = build_b_d(&mask, &data, None, 5.0, 0.0).unwrap();
    let t = theorem1_check(&data, &op, 5.0).unwrap();
    assert_eq!(t.spectral_norm, 0.0);
    assert!(t.pass);

    // with ν = 0 the map does not depend on μ, so the norm is linear in μ
    let x = uniform(6, 4, &mut rng);
    let big = theorem1_check(&x, &op, 5.0).unwrap().spectral_norm;
    let small = theorem1_check(&x, &op, 0.5).unwrap().spectral_norm;
    assert!((big / small - 10.0).abs() < 1e-7);

    // with load-flow rows the norm still decreases with μ
    let (data, maps) = flow_setup(3, 9);
    let (m, n) = data.shape();
    let mask = sample_mask(m, n, 0.5, MaskPolicy::Uniform, 9).unwrap();
    let x = &data * 0.97;
    let norms: Vec<f64> = [10.0, 1.0, 0.1]
        .iter()
        .map(|&mu| {
            let op = build_b_d(&mask, &data, Some(&maps), mu, 1.0).unwrap();
            theorem1_check(&x, &op, mu).unwrap().spectral_norm
        })
        .collect();
    assert!(norms[0] > norms[1] && norms[1] > norms[2], "{norms:?}");
}

#[test]
fn stationarity_trivial_and_generic() {
    let data = DMatrix::zeros(4, 3);
    let mask = ObservationMask::full(4, 3);
    let op = build_b_d(&mask, &data, None, 2.0, 0.0).unwrap();
    let st = stationarity_and_traces(&DMatrix::zeros(4, 2), &DMatrix::zeros(2, 3), &op, 2.0).unwrap();
    assert_eq!((st.grad_u_norm, st.grad_v_norm, st.trace_residuals, st.balance), (0.0, 0.0, (0.0, 0.0), 0.0));
    let cs = complementary_slackness(&DMatrix::zeros(4, 2), &DMatrix::zeros(2, 3), &op, 2.0).unwrap();
    assert_eq!((cs.full, cs.reduced), (0.0, 0.0));

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let data = uniform(4, 3, &mut rng);
    let op = build_b_d(&mask, &data, None, 2.0, 0.0).unwrap();
    let st = stationarity_and_traces(&uniform(4, 2, &mut rng), &uniform(2, 3, &mut rng), &op, 2.0).unwrap();
    assert!(st.trace_residuals.0.abs() > 1e-6 && st.trace_residuals.1.abs() > 1e-6);
}

#[test]
fn slackness_when_the_residual_vanishes() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let u = uniform(5, 2, &mut rng) * 2.0;
    let v = uniform(2, 4, &mut rng) * 0.5;
    let data = &u * &v;
    let op = build_b_d(&ObservationMask::full(5, 4), &data, None, 3.0, 0.0).unwrap();
    let cs = complementary_slackness(&u, &v, &op, 3.0).unwrap();
    let (nu2, nv2) = (u.norm_squared(), v.norm_squared());
    assert!((cs.reduced - 0.5 * (nu2 - nv2).abs()).abs() < 1e-12);
    // the assembled inner product keeps both traces since the cross term is 0
    assert!((cs.full - 0.5 * (nu2 + nv2)).abs() < 1e-12);
}

fn converged(mu: f64) -> (DMatrix<f64>, ObservationMask, crate::completion::AdmmOutcome) {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let data = uniform(10, 2, &mut rng) * uniform(2, 8, &mut rng);
    let mask = sample_mask(10, 8, 0.7, MaskPolicy::Uniform, 12).unwrap();
    let part = AreaPartition::single(8).unwrap();
    let cfg = AdmmConfig {
        mu,
        nu: 0.0,
        rank: 4,
        max_iters: 20_000,
        tol: 1e-12,
        ..AdmmConfig::for_rows(10)
    };
    let problem = Problem::new(&data, &mask, &part).unwrap();
    let out = run_centralized(problem, &cfg, &RunOptions::default()).unwrap();
    (data, mask, out)
}

#[test]
fn converged_run_is_certified() {
    let mu = 0.8;
    let (data, mask, out) = converged(mu);
    assert!(out.converged);
    let op = build_b_d(&mask, &data, None, mu, 0.0).unwrap();
    let (u, v) = (&out.factors[0].u, &out.factors[0].v);
    let rep = certify(u, v, &op, mu).unwrap();
    let tol = 1e-5 * (1.0 + u.norm());
    assert!(rep.grad_u_norm <= tol && rep.grad_v_norm <= tol, "{rep:?}");
    assert!(rep.trace_residuals.0.abs() <= 1e-6 && rep.trace_residuals.1.abs() <= 1e-6);
    assert!(rep.comp_slack_residual <= 1e-6 && rep.comp_slack_reduced <= 1e-6);
    assert!(rep.theorem1_pass, "{rep:?}");
    assert!(rep.schur_min_eigenvalue >= -1e-8);
    let g = rep.spectral_norm;
    assert!((rep.schur_min_eigenvalue - 0.5 * (1.0 - g * g)).abs() < 1e-8);

    // a certified point is a global minimum of the convex problem
    let oracle = svt_oracle_operator(&op, mu, 200_000).unwrap();
    let best = convex_objective(&oracle, &op, mu).unwrap();
    let ours = crate::completion::objective_factored(u, v, &data, &mask, None, mu, 0.0).unwrap();
    assert!(best >= ours * (1.0 - 1e-3), "{best} vs {ours}");
    assert!((best - ours).abs() <= 1e-3 * ours);
}

#[test]
fn oracle_with_flow_rows_agrees_with_the_plain_oracle_when_nu_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let data = uniform(8, 2, &mut rng) * uniform(2, 6, &mut rng);
    let mask = sample_mask(8, 6, 0.6, MaskPolicy::Uniform, 13).unwrap();
    let op = build_b_d(&mask, &data, None, 20.0, 0.0).unwrap();
    let a = svt_oracle_operator(&op, 20.0, 100_000).unwrap();
    let b = crate::completion::svt_oracle(&data, &mask, 20.0, 100_000);
    assert!((&a - &b).norm() <= 1e-4 * (1.0 + b.norm()));
}
