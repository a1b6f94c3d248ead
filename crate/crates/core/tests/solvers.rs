use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spk_core::bounds::Schedule;
use spk_core::oracle::{solve_global, Mode};
use spk_core::psm::{read_trace_csv, write_trace_csv};
use spk_core::spsm::{run_spsm, NoiseModel, StochasticOracle};
use spk_core::{corpus, run_psm, PenaltyObjective, SolverConfig, StepsizeRule, SupportSet};

fn objective(name: &str, tau: f64) -> PenaltyObjective {
    PenaltyObjective::new(corpus::load(name).unwrap().to_instance().unwrap(), tau).unwrap()
}

fn config(max_iters: usize) -> SolverConfig {
    SolverConfig {
        max_iters,
        stop_tol: None,
        keep_iterates: true,
        ..SolverConfig::default()
    }
}

#[test]
fn psm_iterates_stay_sparse_on_every_instance() {
    for name in corpus::NAMES {
        let obj = objective(name, 10.0);
        let s = obj.problem().sparsity();
        let res = run_psm(&obj, StepsizeRule::Diminishing { a: 0.5, b: 1.0 }, &config(500), None).unwrap();
        for r in &res.trace {
            assert!(SupportSet::of(r.x.as_ref().unwrap()).len() <= s, "{name} at k={}", r.k);
        }
        assert!(res.trace.windows(2).all(|w| w[1].best_f <= w[0].best_f));
    }
}

#[test]
fn psm_from_the_oracle_optimum_never_beats_it() {
    let obj = objective("qp10", 10.0);
    let star = solve_global(&obj, Mode::Penalized).unwrap();
    let cfg = SolverConfig {
        initial_point: Some(star.x_star.iter().cloned().collect()),
        ..config(5000)
    };
    let res = run_psm(
        &obj,
        StepsizeRule::Diminishing { a: 0.1, b: 1.0 },
        &cfg,
        Some(&star.x_star),
    )
    .unwrap();
    assert!(res.trace.iter().all(|r| r.f >= star.f_star - 1e-9));
    assert_eq!(res.trace[0].f, star.f_star);
    assert_eq!(res.trace[0].dist_sq, Some(0.0));
}

#[test]
fn trace_csv_round_trips_through_the_public_api() {
    let obj = objective("ex1_far", 10.0);
    let res = run_psm(
        &obj,
        StepsizeRule::Constant { alpha: 0.05 },
        &config(50),
        Some(&DVector::zeros(4)),
    )
    .unwrap();
    let mut bytes = Vec::new();
    write_trace_csv(&mut bytes, &res.trace, None).unwrap();
    let back = read_trace_csv(bytes.as_slice()).unwrap();
    assert_eq!(back.len(), res.trace.len());
    for (a, b) in back.iter().zip(&res.trace) {
        assert_eq!((a.k, a.f, a.alpha, a.dist_sq), (b.k, b.f, b.alpha, b.dist_sq));
    }
}

#[test]
fn spsm_is_reproducible_for_a_fixed_seed() {
    let oracle = StochasticOracle::new(objective("lsq50", 10.0), NoiseModel::Minibatch { batch: 5 }).unwrap();
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        run_spsm(&oracle, Schedule::Fixed { beta: 0.01 }, &config(300), None, &mut rng).unwrap()
    };
    let (a, b, c) = (run(7), run(7), run(8));
    assert_eq!(a.x, b.x);
    assert_eq!(a.uniform_average, b.uniform_average);
    assert_ne!(a.x, c.x);
    for r in &a.trace {
        assert!(SupportSet::of(r.x.as_ref().unwrap()).len() <= 3);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn penalty_is_objective_plus_weighted_residuals(
        xs in proptest::collection::vec(-3.0f64..3.0, 10),
        tau in 1e-3f64..100.0,
    ) {
        let obj = objective("qp10", tau);
        let x = DVector::from_vec(xs);
        let base = obj.problem().objective_value(&x).unwrap();
        let (rg, rh) = obj.residuals(&x).unwrap();
        let value = obj.value(&x).unwrap();
        prop_assert!(value >= base - 1e-12);
        prop_assert!((value - base - tau * (rg + rh)).abs() <= 1e-9 * value.abs().max(1.0));
    }

    #[test]
    fn constant_rule_keeps_iterates_sparse_from_any_sparse_start(
        xs in proptest::collection::vec(-2.0f64..2.0, 6),
        alpha in 1e-3f64..0.5,
    ) {
        let obj = objective("boxqp6", 10.0);
        let start = spk_core::project_sparse(&DVector::from_vec(xs), 2);
        let cfg = SolverConfig {
            initial_point: Some(start.iter().cloned().collect()),
            ..config(100)
        };
        let res = run_psm(&obj, StepsizeRule::Constant { alpha }, &cfg, None).unwrap();
        prop_assert!(res.trace.iter().all(|r| SupportSet::of(r.x.as_ref().unwrap()).len() <= 2));
        prop_assert_eq!(res.trace[0].x.as_ref().unwrap(), &start);
    }
}
