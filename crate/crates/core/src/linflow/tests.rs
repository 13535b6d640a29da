use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::datamatrix::build_matrix;
use crate::gridmodel::{generate_radial_feeder, solve_exact_flow, AreaPartition, Feeder, FeederSpec};
use crate::simnet::Schedule;

fn feeder(n: usize, seed: u64, t: usize) -> Feeder {
    generate_radial_feeder(&FeederSpec::new(n, seed).with_time_steps(t)).unwrap()
}

fn random_h(p: usize, t: usize, seed: u64, scale: f64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..t)
        .map(|_| DVector::from_fn(2 * p, |_, _| scale * rng.random_range(-1.0..1.0)))
        .collect()
}

/// Dense Ñ·h and K̃·h built straight from the full model and the partition.
fn dense_truncated(model: &LinearFlowModel, part: &AreaPartition, t: usize, h: &DVector<f64>) -> (CVector, DVector<f64>) {
    let p = model.n_phases();
    let mut v = model.w(t).clone();
    let mut mag = model.w(t).map(|z| z.norm());
    for i in 0..p {
        for c in 0..2 * p {
            if part.coupled(i, c % p) {
                v[i] += model.n(t)[(i, c)] * h[c];
                mag[i] += model.k(t)[(i, c)] * h[c];
            }
        }
    }
    (v, mag)
}

#[test]
fn zero_injection_predicts_no_load_voltage() {
    let f = feeder(10, 2, 3);
    let model = build_linear_model(&f.network, 3).unwrap();
    let (v, mag) = model.predict(1, &DVector::zeros(18));
    assert_eq!(&v, f.network.no_load_voltage());
    assert_eq!(mag, f.network.no_load_voltage().map(|z| z.norm()));
}

#[test]
fn blocks_are_replicated() {
    let f = feeder(6, 3, 1);
    let model = build_linear_model(&f.network, 4).unwrap();
    assert_eq!(model.time_steps(), 4);
    assert_eq!(model.n(0), model.n(3));
    assert_eq!(model.k(1), model.k(2));
    assert!(build_linear_model(&f.network, 0).is_err());
}

#[test]
fn magnitude_sensitivity_matches_finite_differences() {
    let f = feeder(12, 5, 1);
    let model = build_linear_model(&f.network, 1).unwrap();
    let p = model.n_phases();
    let eps = 1e-6;
    let base = DVector::zeros(2 * p);
    let (v0, _) = model.predict(0, &base);
    for k in 0..2 * p {
        let mut h = base.clone();
        h[k] += eps;
        let (v1, _) = model.predict(0, &h);
        for i in 0..p {
            let fd = (v1[i].norm() - v0[i].norm()) / eps;
            assert!((fd - model.k(0)[(i, k)]).abs() < 1e-4, "phase {i} column {k}");
        }
    }
}

#[test]
fn two_bus_linear_model_is_accurate() {
    let f = feeder(2, 7, 1);
    let model = build_linear_model(&f.network, 1).unwrap();
    let s = f.loads.at(0);
    let exact = solve_exact_flow(&f.network, &s).unwrap();
    let (v, _) = model.predict(0, &injection_vector(&s));
    let err = (v - exact).camax();
    assert!(err <= 1e-3, "error {err}");
}

#[test]
fn degenerate_linearization_is_rejected() {
    let f = feeder(3, 1, 1);
    let y = f.network.y_ll().clone();
    let zero_slack = crate::gridmodel::NetworkModel::new(
        y,
        f.network.y_l0().clone(),
        CVector::zeros(1),
        f.network.index().clone(),
    )
    .unwrap();
    assert!(matches!(
        build_linear_model(&zero_slack, 1),
        Err(Error::DegenerateLinearization { .. })
    ));
}

#[test]
fn single_area_truncation_is_lossless() {
    let f = feeder(15, 4, 2);
    let model = build_linear_model(&f.network, 2).unwrap();
    let tr = truncate_model(&model, &AreaPartition::single(14).unwrap()).unwrap();
    assert_eq!(tr.linear(), &model);
    assert_eq!(truncation_error(&model, tr.linear()).unwrap(), 0.0);
}

#[test]
fn fully_connected_adjacency_is_lossless() {
    let f = feeder(9, 4, 1);
    let model = build_linear_model(&f.network, 1).unwrap();
    let assignment: Vec<usize> = (0..8).map(|i| i % 3).collect();
    let part = AreaPartition::new(assignment, 3, [(0, 1), (1, 2), (0, 2)]).unwrap();
    assert_eq!(truncate_model(&model, &part).unwrap().linear(), &model);
}

#[test]
fn non_adjacent_areas_are_decoupled() {
    let f = feeder(9, 4, 1);
    let model = build_linear_model(&f.network, 1).unwrap();
    let assignment: Vec<usize> = (0..8).map(|i| usize::from(i >= 4)).collect();
    let part = AreaPartition::new(assignment.clone(), 2, []).unwrap();
    let tr = truncate_model(&model, &part).unwrap();
    for i in 0..8 {
        for c in 0..16 {
            let same = assignment[i] == assignment[c % 8];
            let n = tr.linear().n(0)[(i, c)];
            let k = tr.linear().k(0)[(i, c)];
            if same {
                assert_eq!(n, model.n(0)[(i, c)]);
                assert_eq!(k, model.k(0)[(i, c)]);
            } else {
                assert_eq!(n, Complex64::new(0.0, 0.0));
                assert_eq!(k, 0.0);
            }
        }
    }
}

#[test]
fn truncation_is_idempotent() {
    let f = feeder(20, 8, 1);
    let model = build_linear_model(&f.network, 1).unwrap();
    let part = AreaPartition::contiguous(&f.network, 4).unwrap();
    let once = truncate_model(&model, &part).unwrap();
    let twice = truncate_model(once.linear(), &part).unwrap();
    assert_eq!(once, twice);
}

#[test]
fn truncation_error_extremes() {
    let f = feeder(5, 1, 1);
    let model = build_linear_model(&f.network, 1).unwrap();
    let p = model.n_phases();
    let zero = LinearFlowModel::from_blocks(
        vec![CMatrix::zeros(p, 2 * p)],
        vec![DMatrix::zeros(p, 2 * p)],
        vec![model.w(0).clone()],
    )
    .unwrap();
    assert_eq!(truncation_error(&model, &zero).unwrap(), 1.0);
    assert!(matches!(truncation_error(&zero, &model), Err(Error::UndefinedMetric(_))));
}

#[test]
fn truncation_error_grows_as_adjacency_shrinks() {
    let f = feeder(30, 6, 1);
    let model = build_linear_model(&f.network, 1).unwrap();
    let assignment: Vec<usize> = (0..29).map(|i| i * 4 / 29).collect();
    let chain = [
        vec![(0, 1), (1, 2), (2, 3), (0, 2), (1, 3), (0, 3)],
        vec![(0, 1), (1, 2), (2, 3), (0, 2)],
        vec![(0, 1), (1, 2), (2, 3)],
        vec![(0, 1)],
        vec![],
    ];
    let mut prev = 0.0;
    for adj in chain {
        let part = AreaPartition::new(assignment.clone(), 4, adj).unwrap();
        let e = truncation_error(&model, truncate_model(&model, &part).unwrap().linear()).unwrap();
        assert!(e >= prev, "{e} < {prev}");
        prev = e;
    }
    assert!(prev > 0.0);
}

#[test]
fn flow_terms_vanish_without_injection() {
    let f = feeder(12, 3, 2);
    let model = build_linear_model(&f.network, 2).unwrap();
    let part = AreaPartition::contiguous(&f.network, 3).unwrap();
    let tr = truncate_model(&model, &part).unwrap();
    let h = vec![DVector::zeros(22); 2];
    for k in 0..3 {
        for term in area_flow_terms(&tr, &h, k).unwrap().values() {
            assert!(term.iter().all(|x| *x == 0.0));
        }
    }
    assert!(matches!(area_flow_terms(&tr, &h, 3), Err(Error::UnknownArea(3))));
}

#[test]
fn flow_terms_sum_to_truncated_prediction() {
    let f = feeder(16, 9, 2);
    let model = build_linear_model(&f.network, 2).unwrap();
    let p = model.n_phases();
    let part = AreaPartition::contiguous(&f.network, 3).unwrap();
    let tr = truncate_model(&model, &part).unwrap();
    let h = random_h(p, 2, 1, 0.05);
    let mut sum = vec![DVector::<f64>::zeros(6); p];
    for k in 0..3 {
        for (i, term) in area_flow_terms(&tr, &h, k).unwrap() {
            sum[i] += term;
        }
    }
    for t in 0..2 {
        let (v, mag) = dense_truncated(&model, &part, t, &h[t]);
        for i in 0..p {
            let w = model.w(t)[i];
            assert!((sum[i][3 * t] + w.re - v[i].re).abs() < 1e-13);
            assert!((sum[i][3 * t + 1] + w.im - v[i].im).abs() < 1e-13);
            assert!((sum[i][3 * t + 2] + w.norm() - mag[i]).abs() < 1e-13);
        }
    }
}

#[test]
fn decentralized_flow_single_area_is_centralized() {
    let f = feeder(14, 2, 3);
    let model = build_linear_model(&f.network, 3).unwrap();
    let p = model.n_phases();
    let tr = truncate_model(&model, &AreaPartition::single(p).unwrap()).unwrap();
    let h = random_h(p, 3, 5, 0.05);
    let out = decentralized_flow(&tr, &h, Schedule::InOrder).unwrap();
    let (v, mag) = out.assemble(p);
    for t in 0..3 {
        let (vc, mc) = model.predict(t, &h[t]);
        assert!((&v[t] - vc).camax() < 1e-12);
        assert!((&mag[t] - mc).amax() < 1e-12);
    }
    assert!(out.ledger.is_empty());
}

#[test]
fn decentralized_flow_without_injection_returns_offset() {
    let f = feeder(14, 2, 2);
    let model = build_linear_model(&f.network, 2).unwrap();
    let part = AreaPartition::contiguous(&f.network, 3).unwrap();
    let tr = truncate_model(&model, &part).unwrap();
    let out = decentralized_flow(&tr, &vec![DVector::zeros(26); 2], Schedule::InOrder).unwrap();
    let (v, mag) = out.assemble(13);
    assert_eq!(&v[1], model.w(1));
    assert_eq!(mag[0], model.w(0).map(|z| z.norm()));
}

#[test]
fn decentralized_flow_matches_dense_truncated_model() {
    let f = feeder(25, 12, 2);
    let model = build_linear_model(&f.network, 2).unwrap();
    let p = model.n_phases();
    let part = AreaPartition::contiguous(&f.network, 3).unwrap();
    let tr = truncate_model(&model, &part).unwrap();
    for seed in 0..10 {
        let h = random_h(p, 2, seed, 0.05);
        let schedule = if seed % 2 == 0 { Schedule::Parallel } else { Schedule::Permuted { seed } };
        let out = decentralized_flow(&tr, &h, schedule).unwrap();
        let (v, mag) = out.assemble(p);
        for t in 0..2 {
            let (vd, md) = dense_truncated(&model, &part, t, &h[t]);
            assert!((&v[t] - vd).camax() <= 1e-12);
            assert!((&mag[t] - md).amax() <= 1e-12);
        }
    }
}

#[test]
fn flow_exchange_volume() {
    let f = feeder(25, 12, 4);
    let model = build_linear_model(&f.network, 4).unwrap();
    let p = model.n_phases();
    let part = AreaPartition::contiguous(&f.network, 3).unwrap();
    let tr = truncate_model(&model, &part).unwrap();
    let out = decentralized_flow(&tr, &random_h(p, 4, 0, 0.05), Schedule::InOrder).unwrap();
    for &(a, b) in part.adjacency() {
        let expected = 3 * 4 * (part.members(a).len() + part.members(b).len());
        assert_eq!(out.ledger.count(a, b, 0), expected);
    }
}

/// Place the (Re v, Im v, |v|, P, Q) rows of a consistent linear-model
/// solution in an m×n matrix.
fn encode(v: &[CVector], mag: &[DVector<f64>], h: &[DVector<f64>]) -> DMatrix<f64> {
    let p = v[0].len();
    let t_steps = v.len();
    DMatrix::from_fn(5 * t_steps, p, |r, j| {
        let t = r / 5;
        match r % 5 {
            0 => v[t][j].re,
            1 => v[t][j].im,
            2 => mag[t][j],
            3 => h[t][j],
            _ => h[t][p + j],
        }
    })
}

#[test]
fn maps_vanish_on_linear_model_solution() {
    let f = feeder(25, 12, 3);
    let model = build_linear_model(&f.network, 3).unwrap();
    let p = model.n_phases();
    let part = AreaPartition::contiguous(&f.network, 4).unwrap();
    let tr = truncate_model(&model, &part).unwrap();
    let maps = build_area_maps(&tr);
    let h = random_h(p, 3, 2, 0.05);
    let (v, mag) = decentralized_flow(&tr, &h, Schedule::InOrder).unwrap().assemble(p);
    let x = encode(&v, &mag, &h);
    for l in 0..4 {
        assert!(maps.residual(l, &x).unwrap().amax() < 1e-10);
    }
}

#[test]
fn maps_at_zero_give_minus_target() {
    let f = feeder(12, 3, 2);
    let tr = truncate_model(
        &build_linear_model(&f.network, 2).unwrap(),
        &AreaPartition::contiguous(&f.network, 3).unwrap(),
    )
    .unwrap();
    let maps = build_area_maps(&tr);
    for l in 0..3 {
        let r = maps.residual(l, &DMatrix::zeros(10, 11)).unwrap();
        assert_eq!(r, -maps.target(l));
        assert_eq!(r.len(), 3 * 2 * maps.area(l).phases.len());
    }
}

#[test]
fn single_area_maps_match_dense_residual() {
    let f = feeder(10, 3, 2);
    let model = build_linear_model(&f.network, 2).unwrap();
    let p = model.n_phases();
    let tr = truncate_model(&model, &AreaPartition::single(p).unwrap()).unwrap();
    let maps = build_area_maps(&tr);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = DMatrix::from_fn(10, p, |_, _| rng.random_range(-1.0..1.0));
    let r = maps.residual(0, &x).unwrap();
    let (f1, f2) = crate::datamatrix::extract_f1_f2(&x).unwrap();
    for t in 0..2 {
        let h = DVector::from_fn(2 * p, |c, _| if c < p { f2[(2 * t, c)] } else { f2[(2 * t + 1, c - p)] });
        let (v, mag) = model.predict(t, &h);
        for i in 0..p {
            let y = f1[(2 * t, i)];
            assert!((r[maps.index(i, t, 0)] - (y.re - v[i].re)).abs() < 1e-12);
            assert!((r[maps.index(i, t, 1)] - (y.im - v[i].im)).abs() < 1e-12);
            assert!((r[maps.index(i, t, 2)] - (f1[(2 * t + 1, i)].re - mag[i])).abs() < 1e-12);
        }
    }
}

#[test]
fn maps_agree_with_exact_data_up_to_linearization() {
    // residual on the true measurement matrix is the linearization error
    let f = feeder(12, 1, 2);
    let model = build_linear_model(&f.network, 2).unwrap();
    let v = crate::gridmodel::solve_scenario(&f.network, &f.loads).unwrap();
    let m = build_matrix(&v, f.loads.matrix()).unwrap();
    let maps = build_area_maps(&truncate_model(&model, &AreaPartition::single(11).unwrap()).unwrap());
    assert!(maps.residual(0, m.data()).unwrap().amax() < 1e-3);
}

#[test]
fn residual_adjoint_matches_linear_part() {
    let f = feeder(18, 5, 2);
    let model = build_linear_model(&f.network, 2).unwrap();
    let part = AreaPartition::contiguous(&f.network, 3).unwrap();
    let maps = build_area_maps(&truncate_model(&model, &part).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = DMatrix::from_fn(10, 17, |_, _| rng.random_range(-1.0..1.0));
    for l in 0..3 {
        let z = DVector::from_fn(maps.residual_len(l), |_, _| rng.random_range(-1.0..1.0));
        let lin = maps.residual(l, &x).unwrap() + maps.target(l);
        let lhs = lin.dot(&z);
        let rhs = x.dot(&maps.residual_adjoint(l, &z));
        assert!((lhs - rhs).abs() < 1e-12 * (1.0 + rhs.abs()));
    }
}

#[test]
fn truncated_model_accuracy_stays_near_centralized() {
    let f = feeder(33, 1, 1);
    let model = build_linear_model(&f.network, 1).unwrap();
    let p = model.n_phases();
    let s = f.loads.at(0);
    let exact = solve_exact_flow(&f.network, &s).unwrap();
    let h = injection_vector(&s);
    let mape = |mag: &DVector<f64>| {
        (0..p)
            .map(|i| 100.0 * (mag[i] - exact[i].norm()).abs() / exact[i].norm())
            .sum::<f64>()
            / p as f64
    };
    let central = mape(&model.predict(0, &h).1);
    // dropping couplings is a first-order error while the linearization
    // error is second order, so only the order of magnitude is preserved
    for k in 2..=5 {
        let part = AreaPartition::contiguous(&f.network, k).unwrap();
        let (_, mag) = dense_truncated(&model, &part, 0, &h);
        let m = mape(&mag);
        assert!(m <= 10.0 * central, "{k} areas: {m} vs {central}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn cross_maps_are_linear(seed in 0u64..10_000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let f = feeder(14, 4, 2);
        let model = build_linear_model(&f.network, 2).unwrap();
        let part = AreaPartition::contiguous(&f.network, 3).unwrap();
        let maps = build_area_maps(&truncate_model(&model, &part).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(10, 13, |_, _| rng.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(10, 13, |_, _| rng.random_range(-1.0..1.0));
        let z = &x * a + &y * b;
        for l in 0..3 {
            let mut sources = vec![l];
            sources.extend_from_slice(part.neighbors(l));
            for k in sources {
                let eval = |m: &DMatrix<f64>| {
                    let blk = maps.local_block(k, m);
                    if k == l { maps.self_map(l, &blk).unwrap() } else { maps.cross_map(l, k, &blk).unwrap() }
                };
                let diff = eval(&z) - (eval(&x) * a + eval(&y) * b);
                prop_assert!(diff.amax() < 1e-12);
            }
        }
    }
}
