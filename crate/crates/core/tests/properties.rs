//! Algebraic and pipeline invariants checked on random instances.

use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::Mat;
use proptest::prelude::*;
use qmrom::greedy::{run_greedy, GreedyConfig, Increment};
use qmrom::harness::bundle::{load_bundle, save_bundle, Bundle};
use qmrom::harness::config::ExperimentConfig;
use qmrom::harness::qmat;
use qmrom::linalg::{orthonormality_defect, CsrMatrix};
use qmrom::models::{build_benchmark, AffineModel, CaseId, Coefficient, Overrides, ParamBox, ParamVector, TimeScheme};
use qmrom::quadmanifold::{build_w, ckron, decode, encode, fit_tikhonov, q_of, QuadMapFitter, QuadraticMap};
use qmrom::rom::{galerkin_reduce, solve_batch, solve_rom, ReducedTrajectory, SolveOptions};
use qmrom::snapshots::{pod, LinearBasis};
use qmrom::estimator::{estimate, residual_norms};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_mat(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Mat<f64> {
    Mat::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))
}

fn mat_strategy(m: std::ops::Range<usize>, n: std::ops::Range<usize>) -> impl Strategy<Value = Mat<f64>> {
    (m, n).prop_flat_map(|(m, n)| {
        proptest::collection::vec(-1.0f64..1.0, m * n).prop_map(move |v| Mat::from_fn(m, n, |i, j| v[i + m * j]))
    })
}

fn rel(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
    (a - b).norm_l2() / b.norm_l2().max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn quadratic_map_is_orthogonal_to_basis(
        data in mat_strategy(8..30, 6..40),
        r in 1usize..5,
        log_lambda in -6.0f64..3.0,
    ) {
        let r = r.min(data.ncols()).min(data.nrows());
        let (basis, s) = pod(data.as_ref(), 1).unwrap();
        prop_assume!(s.len() >= r && s[r - 1] > 1e-8 * s[0]);
        let basis = if r > 1 { pod(data.as_ref(), r).unwrap().0 } else { basis };
        let fitter = QuadMapFitter::new(&basis, data.as_ref()).unwrap();
        let (map, res) = fitter.fit(10f64.powf(log_lambda)).unwrap();
        let vth = basis.as_ref().transpose() * &map.h;
        prop_assert!(vth.norm_l2() <= 1e-8 * map.h.norm_l2().max(1.0));
        prop_assert!(res >= 0.0);
        // more regularization never lowers the residual
        let (_, res_big) = fitter.fit(10f64.powf(log_lambda + 2.0)).unwrap();
        prop_assert!(res_big >= res * (1.0 - 1e-10));
    }

    #[test]
    fn pod_satisfies_eckart_young(data in mat_strategy(4..25, 3..25), r in 1usize..6) {
        let (_, all) = pod(data.as_ref(), 1).unwrap();
        let tol = all[0] * 1e-10;
        let available = all.iter().filter(|s| **s > tol).count();
        let r = r.min(available);
        let (basis, s) = pod(data.as_ref(), r).unwrap();
        prop_assert!(orthonormality_defect(basis.as_ref()) < 1e-12);
        let proj = basis.as_ref() * (basis.as_ref().transpose() * &data);
        let err = (&data - &proj).norm_l2();
        let tail: f64 = s[r..].iter().map(|x| x * x).sum::<f64>().sqrt();
        let total = data.norm_l2();
        prop_assert!((err - tail).abs() <= 1e-10 * total.max(1.0), "err {err} tail {tail}");
    }

    #[test]
    fn linear_decode_inverts_encode(data in mat_strategy(6..20, 4..10), coeffs in proptest::collection::vec(-2.0f64..2.0, 3)) {
        let (_, s) = pod(data.as_ref(), 1).unwrap();
        prop_assume!(s.len() >= 3 && s[2] > 1e-6 * s[0]);
        let basis = pod(data.as_ref(), 3).unwrap().0;
        let u = decode(&basis, None, &coeffs);
        let back = encode(&basis, &u);
        for (a, b) in back.iter().zip(&coeffs) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn qmat_bytes_round_trip(m in mat_strategy(0..9, 0..9)) {
        let back = qmat::from_bytes(&qmat::to_bytes(m.as_ref()), "mem").unwrap();
        prop_assert_eq!(back.shape(), m.shape());
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                prop_assert_eq!(back[(i, j)].to_bits(), m[(i, j)].to_bits());
            }
        }
    }

    #[test]
    fn qmat_detects_any_single_byte_flip(m in mat_strategy(1..5, 1..5), pos in any::<prop::sample::Index>(), bit in 0u8..8) {
        let mut bytes = qmat::to_bytes(m.as_ref());
        let k = pos.index(bytes.len());
        bytes[k] ^= 1 << bit;
        prop_assert!(qmat::from_bytes(&bytes, "mem").is_err());
    }

    #[test]
    fn config_text_round_trip(
        case_idx in 0usize..6,
        m_max in 1usize..50,
        l_sam in 1usize..5,
        n_lambda in 1usize..4,
        n in proptest::option::of(10usize..100),
    ) {
        let mut cfg = ExperimentConfig::paper_defaults(CaseId::ALL[case_idx]);
        cfg.greedy.m_max = m_max;
        cfg.greedy.l_sam = l_sam;
        cfg.greedy.n_lambda = n_lambda.min(cfg.greedy.lambda_set.len());
        cfg.overrides.n = n;
        let back = ExperimentConfig::parse(&cfg.to_text()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

#[test]
fn tikhonov_matches_normal_equations_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let l = rng.random_range(3..16);
        let q = rng.random_range(2..10);
        let k = rng.random_range(1..5);
        let lambda = 10f64.powf(rng.random_range(-2.0..1.0));
        let a = random_mat(&mut rng, l, q);
        let b = random_mat(&mut rng, l, k);
        let (h, res) = fit_tikhonov(a.as_ref(), b.as_ref(), lambda).unwrap();
        let mut normal = a.transpose() * &a;
        for i in 0..q {
            normal[(i, i)] += lambda * lambda;
        }
        let mut x = a.transpose() * &b;
        normal.partial_piv_lu().solve_in_place(x.as_mut());
        let ht = h.transpose().to_owned();
        assert!(rel(&ht, &x) <= 1e-9, "l={l} q={q} lambda={lambda}: {}", rel(&ht, &x));
        let want = (&b - &a * &x).norm_l2();
        assert!((res - want).abs() <= 1e-9 * want.max(1.0));
    }
}

fn brute_force_dedup(s: &[f64]) -> Vec<f64> {
    // full Kronecker product, keeping the first occurrence of each (i, j),
    // i <= j, in row-major order of the upper triangle
    let r = s.len();
    let mut out = Vec::new();
    for i in 0..r {
        for j in 0..r {
            if i <= j {
                out.push(s[i] * s[j]);
            }
        }
    }
    out
}

#[test]
fn compressed_kronecker_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for r in 1..=6 {
        let states = random_mat(&mut rng, r, 7);
        let w = build_w(states.as_ref());
        assert_eq!(w.nrows(), q_of(r));
        for j in 0..7 {
            let s: Vec<f64> = (0..r).map(|i| states[(i, j)]).collect();
            let want = brute_force_dedup(&s);
            assert_eq!(ckron(&s), want);
            for (k, v) in want.iter().enumerate() {
                assert_eq!(w[(k, j)].to_bits(), v.to_bits());
            }
        }
    }
}

fn small_models() -> Vec<AffineModel<f64>> {
    vec![
        build_benchmark(CaseId::TransportC1, Overrides::new(40, 80)).unwrap(),
        build_benchmark(CaseId::AcousticWave, Overrides::new(8, 40)).unwrap(),
        build_benchmark(CaseId::AdvDiff, Overrides::new(8, 32)).unwrap(),
        build_benchmark(CaseId::Burgers, Overrides::new(40, 80)).unwrap(),
    ]
}

fn midpoint(model: &AffineModel<f64>) -> ParamVector<f64> {
    let b = &model.param_box;
    ParamVector::new(b.lower.iter().zip(&b.upper).map(|(l, u)| 0.5 * (l + u)).collect())
}

#[test]
fn zero_map_reproduces_linear_rom_bitwise() {
    for model in small_models() {
        let mu = midpoint(&model);
        let traj = model.solve_fom(&mu).unwrap();
        let (basis, _) = pod(traj.states.as_ref(), 4).unwrap();
        let zero = QuadraticMap::zeros(&basis, 1.0);
        let lin = solve_rom(&model, &basis, None, &mu).unwrap();
        let quad = solve_rom(&model, &basis, Some(&zero), &mu).unwrap();
        assert_eq!(lin.stable, quad.stable);
        for j in 0..lin.states.ncols() {
            for i in 0..lin.states.nrows() {
                assert_eq!(lin.states[(i, j)].to_bits(), quad.states[(i, j)].to_bits(), "{:?}", model.case);
            }
        }
    }
}

#[test]
fn residual_vanishes_on_exact_euler_trajectory() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 6;
    let mut trips = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if rng.random::<f64>() < 0.5 {
                trips.push((i, j, rng.random_range(-1.0..1.0)));
            }
        }
    }
    let forcing: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
    let model = AffineModel::linear(
        vec![
            (CsrMatrix::from_triplets(n, n, &trips), Coefficient::Linear { index: 0, scale: 1.0 }),
            (CsrMatrix::identity(n), Coefficient::Constant(-0.3)),
        ],
        forcing,
        Arc::new(move |mu: &ParamVector<f64>| (0..n).map(|i| (i as f64 + mu.values[0]).sin()).collect()),
        0.02,
        25,
        TimeScheme::ExplicitEuler,
        ParamBox::new(vec![0.0], vec![1.0]),
    )
    .unwrap();
    let v = LinearBasis::from_columns(Mat::identity(n, n)).unwrap();
    for mu in [0.0, 0.4, 1.0] {
        let mu = ParamVector::scalar(mu);
        let traj = model.solve_fom(&mu).unwrap();
        let rt = ReducedTrajectory {
            states: traj.states.clone(),
            param: mu.clone(),
            stable: true,
            first_bad_step: None,
        };
        let res = residual_norms(&model, &v, None, &mu, &rt).unwrap();
        assert!(res.iter().all(|x| *x <= 1e-12), "{res:?}");
        let est = estimate(&model, &v, None, &mu, &rt).unwrap();
        assert!((0.0..=1e-12).contains(&est));
    }
}

#[test]
fn estimator_is_nonnegative_on_benchmarks() {
    for model in small_models() {
        let mu = midpoint(&model);
        let traj = model.solve_fom(&mu).unwrap();
        let (basis, _) = pod(traj.states.as_ref(), 3).unwrap();
        let rt = solve_rom(&model, &basis, None, &mu).unwrap();
        let e = estimate(&model, &basis, None, &mu, &rt).unwrap();
        assert!(e >= 0.0 && e.is_finite());
    }
}

#[test]
fn batch_solve_matches_single_solves() {
    let model = build_benchmark::<f64>(CaseId::AdvDiff, Overrides::new(8, 32)).unwrap();
    let params: Vec<_> = [(0.1, 0.2), (0.9, 0.5), (0.1, 0.2)]
        .iter()
        .map(|&(a, b)| ParamVector::new(vec![a, b]))
        .collect();
    let traj = model.solve_fom(&params[1]).unwrap();
    let (basis, _) = pod(traj.states.as_ref(), 5).unwrap();
    let ops = galerkin_reduce(&model, &basis, None).unwrap();
    let batch = solve_batch(&model, &ops, &basis, None, &params, SolveOptions::default()).unwrap();
    for (mu, rt) in params.iter().zip(&batch) {
        let single = solve_rom(&model, &basis, None, mu).unwrap();
        assert!(rel(&rt.states, &single.states) < 1e-13);
    }
}

#[test]
fn bundle_round_trip_is_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data = random_mat(&mut rng, 30, 12);
    let (basis, _) = pod(data.as_ref(), 4).unwrap();
    let (map, _) = QuadMapFitter::new(&basis, data.as_ref()).unwrap().fit(0.1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let bundle = Bundle {
        case: CaseId::TransportC2,
        overrides: Overrides::default(),
        basis: basis.clone(),
        map: Some(map.clone()),
        log_csv: qmrom::harness::CSV_HEADER.to_string() + "\n",
    };
    save_bundle(dir.path(), &bundle).unwrap();
    let back: Bundle<f64> = load_bundle(dir.path()).unwrap();
    let bits = |m: &Mat<f64>| -> Vec<u64> {
        (0..m.ncols()).flat_map(|j| (0..m.nrows()).map(move |i| m[(i, j)].to_bits())).collect()
    };
    assert_eq!(bits(&back.basis.columns), bits(&basis.columns));
    let back_map = back.map.unwrap();
    assert_eq!(bits(&back_map.h), bits(&map.h));
    assert_eq!(back_map.lambda.to_bits(), map.lambda.to_bits());
    back_map.check_basis(&back.basis).unwrap();
}

#[test]
fn greedy_uses_exactly_one_fom_solve_per_iteration_plus_one() {
    let model = build_benchmark::<f64>(CaseId::TransportC1, Overrides::new(40, 80)).unwrap();
    let train: Vec<_> = (0..7).map(|k| ParamVector::scalar(0.05 + 0.2 * k as f64 / 6.0)).collect();
    for m_max in [0, 1, 3] {
        let cfg = GreedyConfig {
            m_max,
            r0: 1,
            increment: Increment::Fixed(2),
            l_sam: 2,
            lambda_set: vec![1e-2, 1.0, 1e2, 1e4],
            n_lambda: 2,
            ..GreedyConfig::default()
        };
        let log = run_greedy(&model, &train, &cfg).unwrap();
        let m = log.records.len() - 1;
        assert_eq!(m, m_max);
        assert_eq!(log.fom_solves, m + 1);
        assert_eq!(log.records.last().unwrap().fom_solves, m + 1);
        assert_eq!(log.selected.len(), m + 1);
        assert!(orthonormality_defect(log.basis.as_ref()) < 1e-10);
        let map = log.map.as_ref().unwrap();
        map.check_basis(&log.basis).unwrap();
        assert_eq!(map.h.ncols(), q_of(log.basis.r()));
    }
}

#[test]
fn greedy_stops_at_the_basis_cap() {
    let model = build_benchmark::<f64>(CaseId::TransportC1, Overrides::new(40, 80)).unwrap();
    let train: Vec<_> = (0..5).map(|k| ParamVector::scalar(0.05 + 0.05 * k as f64)).collect();
    let cfg = GreedyConfig {
        m_max: 20,
        r_max: Some(6),
        lambda_set: vec![1.0, 1e3],
        n_lambda: 1,
        ..GreedyConfig::default()
    };
    let log = qmrom::greedy::run_greedy_linear(&model, &train, &cfg).unwrap();
    assert_eq!(log.basis.r(), 6);
    assert!(log.map.is_none());
}
