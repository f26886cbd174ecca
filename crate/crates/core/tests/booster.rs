mod common;

use cmgva::booster::*;
use cmgva::estimator::elbo_estimate;
use cmgva::factor_gauss::Component;
use cmgva::mixture::CmgvaState;
use cmgva::targets::{equicorrelation, mixnormal_target, standard_normal, FnTarget, MixtureNormal, TargetModel};
use cmgva::transform::YjVector;
use common::*;

fn quick(iters_first: usize, iters_per: usize, k: usize) -> BoostConfig<f64> {
    BoostConfig {
        iters_first,
        iters_per_component: iters_per,
        max_components: k,
        ..Default::default()
    }
}

fn two_mode(sep: f64) -> MixtureNormal<f64> {
    MixtureNormal::new(vec![1.0, 1.0], vec![vec![-sep, 0.0], vec![sep, 0.0]], &equicorrelation(2, 0.0)).unwrap()
}

fn three_component_state() -> CmgvaState<f64> {
    CmgvaState::new(
        YjVector::new(vec![0.8, 1.2]).unwrap(),
        vec![
            Component::new(vec![0.0, 0.0], vec![0.3, 0.2], 1, vec![1.0, 0.8]).unwrap(),
            Component::new(vec![2.0, -1.0], vec![-0.1, 0.4], 1, vec![0.6, 0.7]).unwrap(),
        ],
        vec![0.7, 0.3],
    )
    .unwrap()
}

fn assert_invariants(before: &CmgvaState<f64>, after: &CmgvaState<f64>) {
    let k = before.num_components();
    assert_eq!(after.num_components(), k + 1);
    for (a, b) in before.components().iter().zip(after.components()) {
        assert_eq!(a.mu(), b.mu());
        assert_eq!(a.beta(), b.beta());
        assert_eq!(a.d(), b.d());
    }
    assert_eq!(before.yj().gamma(), after.yj().gamma());
    let total: f64 = after.weights().iter().sum();
    assert!((total - 1.0).abs() < 1e-12);
    assert!(after.weights().iter().all(|&w| w > 0.0));
    assert!(after.frozen_through() >= k);
}

#[test]
fn added_component_leaves_old_ones_untouched() {
    let state = three_component_state();
    let target = mixnormal_target::<f64, _>(2, 3, 0.5, &mut rng(40)).unwrap();
    let (next, trace) = add_component(&target, &state, &quick(0, 800, 3), &mut rng(41)).unwrap();
    assert_eq!(trace.len(), 800);
    assert!(!trace.diverged);
    assert_invariants(&state, &next);
}

#[test]
fn self_target_stays_near_zero_elbo() {
    let state = three_component_state();
    let q = state.prepare().unwrap();
    let q2 = q.clone();
    let target = FnTarget::new(2, "self", move |t: &[f64]| q.log_density(t), move |t: &[f64]| q2.grad_log_density(t));
    let (next, trace) = add_component(&target, &state, &quick(0, 2000, 3), &mut rng(42)).unwrap();
    assert_invariants(&state, &next);
    let tail = trace.window_average(500);
    assert!(tail <= 1e-12 && tail > -0.05, "{tail}");
    let mut r = rng(43);
    assert!(elbo_estimate(&target, &next, 20_000, &mut r).unwrap() > -0.05);
}

#[test]
fn boosting_is_deterministic_across_thread_counts() {
    let target = two_mode(1.5);
    let cfg = BoostConfig { seed: 7, ..quick(600, 300, 3) };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| boost(&target, &cfg, &mut rng(cfg.seed)).unwrap())
    };
    let a = run(1);
    let b = run(4);
    for (sa, sb) in a.states.iter().zip(&b.states) {
        assert_eq!(sa.to_json().unwrap(), sb.to_json().unwrap());
    }
    for (ta, tb) in a.traces.iter().zip(&b.traces) {
        assert_eq!(ta.values, tb.values);
    }
    assert_eq!(a.best_k, b.best_k);
    for w in a.states.windows(2) {
        assert_invariants(&w[0], &w[1]);
    }
}

#[test]
fn checkpoint_round_trip_preserves_the_elbo() {
    let target = two_mode(1.5);
    let out = boost(&target, &quick(500, 300, 2), &mut rng(44)).unwrap();
    for st in &out.states {
        let back = CmgvaState::from_json(&st.to_json().unwrap()).unwrap();
        assert_eq!(back.to_json().unwrap(), st.to_json().unwrap());
        let a = elbo_estimate(&target, st, 200, &mut rng(45)).unwrap();
        let b = elbo_estimate(&target, &back, 200, &mut rng(45)).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn single_component_budget() {
    let target = standard_normal::<f64>(3);
    let out = boost(&target, &quick(200, 100, 1), &mut rng(46)).unwrap();
    assert_eq!(out.states.len(), 1);
    assert_eq!(out.window_elbos.len(), 1);
    assert_eq!(out.best_k, 1);
    assert_eq!(out.traces[0].len(), 200);
}

#[test]
fn zero_iterations_return_the_initial_state() {
    let target = standard_normal::<f64>(3);
    let (st, trace) = fit_first_component(&target, &quick(0, 0, 1), &mut rng(47)).unwrap();
    assert!(trace.is_empty());
    let c = &st.components()[0];
    assert_eq!(c.mu(), &[0.0; 3]);
    assert_eq!(c.d(), &[0.01; 3]);
    assert!(c.beta().iter().all(|b| b.abs() < 0.06));
    assert_eq!(st.yj().gamma(), &[1.0; 3]);
    assert_eq!(st.weights(), &[1.0]);
}

#[test]
fn recovers_a_standard_normal() {
    let target = standard_normal::<f64>(4);
    let (st, trace) = fit_first_component(&target, &quick(20_000, 0, 1), &mut rng(48)).unwrap();
    assert!(!trace.diverged);
    let c = &st.components()[0];
    let sigma = dense_sigma(c);
    let mut fro = 0.0;
    for i in 0..4 {
        assert!(c.mu()[i].abs() < 0.05, "mu {:?}", c.mu());
        for j in 0..4 {
            let e = sigma[(i, j)] - if i == j { 1.0 } else { 0.0 };
            fro += e * e;
        }
    }
    assert!(fro.sqrt() < 0.1, "Frobenius {}", fro.sqrt());
    // the moving average climbs
    let ma = trace.moving_average(500);
    assert!(ma[ma.len() - 1] > ma[999]);
}

/// Log-density of `ln X` for `X ~ Gamma(1.5, 1)`: a left-skewed posterior of
/// a log-scale parameter.
fn log_gamma_target() -> FnTarget<f64> {
    let a = 1.5;
    let c = -libm::lgamma(a);
    FnTarget::new(1, "log-gamma", move |t: &[f64]| a * t[0] - t[0].exp() + c, move |t: &[f64]| vec![a - t[0].exp()])
}

#[test]
fn skewed_posterior_prefers_the_copula() {
    let target = log_gamma_target();
    let cfg = quick(20_000, 0, 1);
    let (cop, tc) = fit_first_component(&target, &cfg, &mut rng(49)).unwrap();
    let gauss_cfg = BoostConfig { fit_gamma: false, ..cfg };
    let (gau, tg) = fit_first_component(&target, &gauss_cfg, &mut rng(49)).unwrap();
    assert_eq!(gau.yj().gamma(), &[1.0]);
    assert!(cop.yj().gamma()[0] > 1.0, "{:?}", cop.yj().gamma());
    let mut r = rng(50);
    let e_cop = elbo_estimate(&target, &cop, 100_000, &mut r).unwrap();
    let e_gau = elbo_estimate(&target, &gau, 100_000, &mut r).unwrap();
    assert!(e_cop > e_gau + 0.01, "{e_cop} vs {e_gau}");
    assert!(tc.window_average(500) > tg.window_average(500));
}

#[test]
fn new_mean_finds_the_uncovered_mode() {
    let target = two_mode(1.5);
    let on_a = CmgvaState::single(YjVector::identity(2), Component::diagonal(vec![-1.5, 0.0], vec![1.0, 1.0], 1).unwrap()).unwrap();
    let mut hits = 0;
    for seed in 0..100 {
        let mu = init_new_mean(&target, &on_a, 100, InitMode::Grid, GridAnchor::Sweep, Selection::Argmax, &mut rng(seed)).unwrap();
        if mu[0] > 0.0 {
            hits += 1;
        }
    }
    assert!(hits >= 95, "{hits}/100");
}

#[test]
fn new_mean_degenerate_and_flat_cases() {
    let st = three_component_state();
    let q = st.prepare().unwrap();
    let q2 = q.clone();
    let flat = FnTarget::new(2, "self", move |t: &[f64]| q.log_density(t), move |t: &[f64]| q2.grad_log_density(t));
    // a single importance candidate is returned as is
    let mu = init_new_mean(&flat, &st, 1, InitMode::Importance, GridAnchor::Mean, Selection::Argmax, &mut rng(51)).unwrap();
    let d = st.prepare().unwrap().sample_one(&mut rng(51));
    assert_eq!(mu, d.phi);
    // proportional selection under flat weights spreads over the candidates
    let picks: std::collections::BTreeSet<u64> = (0..50)
        .map(|s| {
            let m = init_new_mean(&flat, &st, 20, InitMode::Importance, GridAnchor::Mean, Selection::Proportional, &mut rng(s)).unwrap();
            m[0].to_bits()
        })
        .collect();
    assert!(picks.len() > 40);
    assert!(init_new_mean(&flat, &st, 0, InitMode::Grid, GridAnchor::Mean, Selection::Argmax, &mut rng(0)).is_err());
}

#[test]
fn second_component_helps_a_bimodal_target() {
    let target = two_mode(2.5);
    let out = boost(&target, &quick(20_000, 5_000, 2), &mut rng(52)).unwrap();
    let gain = out.window_elbos[1] - out.window_elbos[0];
    assert!(gain > 0.1, "{:?}", out.window_elbos);
    assert_eq!(out.best_k, 2);
}

#[test]
fn three_modes_select_more_than_one_component() {
    let target = MixtureNormal::new(
        vec![1.0, 1.0, 1.0],
        vec![vec![-2.0, -1.0], vec![2.0, -1.0], vec![0.0, 2.0]],
        &equicorrelation(2, 0.3),
    )
    .unwrap();
    let out = boost(&target, &quick(20_000, 5_000, 4), &mut rng(53)).unwrap();
    assert!(out.best_k >= 2, "{:?}", out.window_elbos);
    for k in 1..out.best_k {
        assert!(out.window_elbos[k] >= out.window_elbos[k - 1], "{:?}", out.window_elbos);
    }
    assert_eq!(out.best_state().num_components(), out.best_k);
    for w in out.states.windows(2) {
        assert_invariants(&w[0], &w[1]);
    }
}

#[test]
fn patience_stops_a_flat_round() {
    let target = standard_normal::<f64>(2);
    let cfg = BoostConfig { patience: 50, ma_window: 20, ..quick(20_000, 0, 1) };
    let (_, trace) = fit_first_component(&target, &cfg, &mut rng(54)).unwrap();
    assert!(trace.stopped_early);
    assert!(trace.len() < 20_000);
}

#[test]
fn invalid_configs_are_rejected() {
    let target = standard_normal::<f64>(2);
    let bad = BoostConfig { samples: 1, ..quick(10, 10, 2) };
    assert!(boost(&target, &bad, &mut rng(0)).is_err());
    let bad = BoostConfig { alpha_mu: -1.0, ..quick(10, 10, 2) };
    assert!(boost(&target, &bad, &mut rng(0)).is_err());
    let st = three_component_state();
    assert!(add_component(&standard_normal::<f64>(3), &st, &quick(0, 10, 3), &mut rng(0)).is_err());
    assert!(target.dim() == 2);
}

#[test]
fn saturated_transform_step_is_reported_as_divergence() {
    let target = cmgva::targets::t_copula_target(3, 0.8, 4.0, 0.5).unwrap();
    let cfg = BoostConfig { alpha_gamma: 1000.0, alpha_mu: 1000.0, alpha_d: 1000.0, alpha_beta: 1000.0, ..quick(300, 0, 1) };
    let (st, trace) = fit_first_component(&target, &cfg, &mut rng(55)).unwrap();
    assert!(trace.diverged);
    assert!(st.yj().gamma().iter().all(|&g| g > 0.0 && g < 2.0));
}
