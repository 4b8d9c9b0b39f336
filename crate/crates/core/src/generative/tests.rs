use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::testutil::make_alternator;

fn gen(k: usize, d: usize, hidden: usize, seed: u64) -> (ParamStore, GenParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let g = GenParams::new(&mut store, k, d, hidden, CellKind::Gru, &mut rng);
    (store, g)
}

fn uniform(k: usize) -> Vec<f64> {
    vec![1.0 / k as f64; k]
}

#[test]
fn zero_weights_give_uniform_transition() {
    let (mut store, g) = gen(4, 2, 3, 1);
    store.fill_zero();
    let (_, p) = transition_step(&g, &store, &g.initial_state(vec![0.0, 1.0, 0.0, 0.0])).unwrap();
    assert_eq!(p, vec![0.25; 4]);
}

#[test]
fn transition_is_deterministic_and_trivial_for_one_cluster() {
    let (store, g) = gen(3, 2, 4, 2);
    let s = g.initial_state(vec![0.2, 0.3, 0.5]);
    assert_eq!(transition_step(&g, &store, &s).unwrap(), transition_step(&g, &store, &s).unwrap());
    let (store, g) = gen(1, 2, 4, 2);
    let (_, p) = transition_step(&g, &store, &g.initial_state(vec![1.0])).unwrap();
    assert_eq!(p, vec![1.0]);
}

#[test]
fn dynamic_mixture_examples() {
    let trans = [0.1, 0.9];
    let basis = [0.5, 0.5];
    assert_eq!(dynamic_mixture(&trans, &basis, 1.0).unwrap(), basis);
    assert_eq!(dynamic_mixture(&trans, &basis, 0.0).unwrap(), trans);
    assert_eq!(dynamic_mixture(&[1.0, 0.0], &basis, 0.5).unwrap(), vec![0.75, 0.25]);
    assert!(dynamic_mixture(&trans, &basis, 1.5).is_err());
}

fn basis_1d(means: Vec<f64>, sigma: f64) -> MixtureBasis {
    let k = means.len();
    MixtureBasis::new(k, 1, means, uniform(k), sigma).unwrap()
}

#[test]
fn emit_loglik_examples() {
    let sigma = 3.0;
    let b = MixtureBasis::new(1, 2, vec![0.5, -1.0], vec![1.0], sigma).unwrap();
    let norm = (sigma / (2.0 * std::f64::consts::PI)).sqrt().ln();
    assert!((emit_loglik(&[0.5, -1.0], &[true, true], 0, &b) - 2.0 * norm).abs() < 1e-15);
    assert_eq!(emit_loglik(&[9.0, 9.0], &[false, false], 0, &b), 0.0);
    let b = basis_1d(vec![0.0], 1.0);
    assert!((emit_loglik(&[2.0], &[true], 0, &b) - (-2.9189385332046727)).abs() < 1e-12);
}

#[test]
fn emit_loglik_on_tape_agrees() {
    let b = MixtureBasis::new(2, 3, vec![0.1, 0.2, 0.3, -1.0, 2.0, 0.5], uniform(2), 7.0).unwrap();
    let x = [0.4, 9.0, -0.2];
    let mask = [true, false, true];
    let mut tape = Tape::new();
    let xv = tape.constant_vec(x.to_vec()).unwrap();
    let mu = tape.constant_vec(b.mean(1).to_vec()).unwrap();
    let l = emit_loglik_on_tape(&mut tape, xv, mu, &mask, b.sigma).unwrap();
    assert!((tape.scalar(l).unwrap() - emit_loglik(&x, &mask, 1, &b)).abs() < 1e-12);
}

#[test]
fn sample_sequence_single_cluster() {
    let (store, g) = gen(1, 2, 3, 4);
    let b = g.basis(&store, vec![1.0], 1e6).unwrap();
    let s = sample_sequence(&g, &store, &b, 0.3, 50, 9).unwrap();
    assert!(s.path.iter().chain(&s.emitted).all(|&z| z == 0));
    for t in 0..50 {
        for i in 0..2 {
            assert!((s.values[i * 50 + t] - b.mean(0)[i]).abs() < 0.01);
        }
    }
}

#[test]
fn sample_sequence_pure_basis_frequencies() {
    let (store, g) = gen(3, 1, 3, 5);
    let probs = vec![0.2, 0.5, 0.3];
    let b = MixtureBasis::new(3, 1, vec![-1.0, 0.0, 1.0], probs.clone(), 1.0).unwrap();
    let mut counts = [0.0; 3];
    let mut n = 0.0;
    for seed in 0..100 {
        let s = sample_sequence(&g, &store, &b, 1.0, 100, seed).unwrap();
        for &z in &s.emitted {
            counts[z] += 1.0;
            n += 1.0;
        }
    }
    assert_eq!(n, 1e4);
    for (c, p) in counts.iter().zip(&probs) {
        assert!((c - n * p).abs() <= 3.0 * (n * p * (1.0 - p)).sqrt(), "{counts:?}");
    }
}

#[test]
fn sample_sequence_vanishing_noise_and_determinism() {
    let (store, g) = gen(3, 2, 4, 6);
    let b = MixtureBasis::new(3, 2, vec![2.0, 0.0, -1.0, 1.7, -1.0, -1.7], uniform(3), 1e6).unwrap();
    let s = sample_sequence(&g, &store, &b, 0.4, 30, 3).unwrap();
    for t in 0..30 {
        for i in 0..2 {
            assert!((s.values[i * 30 + t] - b.mean(s.emitted[t])[i]).abs() < 0.01);
        }
    }
    assert_eq!(s, sample_sequence(&g, &store, &b, 0.4, 30, 3).unwrap());
}

#[test]
fn rollout_single_cluster_repeats_mean() {
    let (store, g) = gen(1, 2, 3, 7);
    let b = g.basis(&store, vec![1.0], 10.0).unwrap();
    let r = forecast_rollout(&g, &store, &g.initial_state(vec![1.0]), &b, 0.2, 4).unwrap();
    for t in 0..4 {
        assert_eq!(r.predictions[t], b.mean(0)[0]);
        assert_eq!(r.predictions[4 + t], b.mean(0)[1]);
    }
}

#[test]
fn rollout_pure_basis_is_constant() {
    let (store, g) = gen(3, 1, 3, 8);
    let b = MixtureBasis::new(3, 1, vec![-1.0, 0.5, 2.0], vec![0.2, 0.5, 0.3], 10.0).unwrap();
    let r = forecast_rollout(&g, &store, &g.initial_state(uniform(3)), &b, 1.0, 5).unwrap();
    let expected = 0.2 * -1.0 + 0.5 * 0.5 + 0.3 * 2.0;
    assert!(r.predictions.iter().all(|&p| (p - expected).abs() < 1e-12));
}

#[test]
fn rollout_alternator_matches_two_state_chain() {
    let (mut store, g) = gen(2, 1, 1, 9);
    make_alternator(&mut store, "gen");
    let b = MixtureBasis::new(2, 1, vec![-3.0, 3.0], vec![0.4, 0.6], 1e4).unwrap();
    for gamma in [0.0, 0.1] {
        let r = forecast_rollout(&g, &store, &g.initial_state(vec![1.0, 0.0]), &b, gamma, 6).unwrap();
        // The chain moves to the other state every step; the basis share is
        // mixed in on top of it.
        let mut state = 0;
        for t in 0..6 {
            state = 1 - state;
            let mut psi = [gamma * 0.4, gamma * 0.6];
            psi[state] += 1.0 - gamma;
            let x = -3.0 * psi[0] + 3.0 * psi[1];
            assert!((r.predictions[t] - x).abs() < 1e-9, "γ={gamma} t={t}");
            assert!((r.psi[t][0] - psi[0]).abs() < 1e-9);
        }
    }
}

#[test]
fn rollout_is_deterministic() {
    let (store, g) = gen(3, 2, 4, 10);
    let b = g.basis(&store, uniform(3), 5.0).unwrap();
    let s = g.initial_state(vec![0.1, 0.6, 0.3]);
    let a = forecast_rollout(&g, &store, &s, &b, 0.05, 7).unwrap();
    assert_eq!(a, forecast_rollout(&g, &store, &s, &b, 0.05, 7).unwrap());
    let h1 = forecast_rollout_with(&g, &store, &s, &b, 0.05, 7, Feedback::Sampled(3)).unwrap();
    let h2 = forecast_rollout_with(&g, &store, &s, &b, 0.05, 7, Feedback::Sampled(3)).unwrap();
    assert_eq!(h1, h2);
    assert!(forecast_rollout(&g, &store, &s, &b, 0.05, 0).is_err());
}

#[test]
fn basis_export_has_nested_means() {
    let b = MixtureBasis::new(2, 2, vec![1.0, 2.0, 3.0, 4.0], vec![0.5, 0.5], 1.0).unwrap();
    let v = serde_json::to_value(BasisExport::from(&b)).unwrap();
    assert_eq!(v["means"], serde_json::json!([[1.0, 2.0], [3.0, 4.0]]));
    assert_eq!(v["basis_probs"], serde_json::json!([0.5, 0.5]));
}

fn arb_simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, k).prop_map(|v| {
        let s: f64 = v.iter().sum();
        if s == 0.0 {
            vec![1.0 / v.len() as f64; v.len()]
        } else {
            v.iter().map(|x| x / s).collect()
        }
    })
}

proptest! {
    #[test]
    fn dynamic_mixture_stays_on_simplex(
        (a, b) in (1usize..8).prop_flat_map(|k| (arb_simplex(k), arb_simplex(k))),
        gamma in 0.0f64..=1.0,
    ) {
        let psi = dynamic_mixture(&a, &b, gamma).unwrap();
        prop_assert!((psi.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(psi.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn emit_loglik_decreases_with_distance(
        dir in prop::collection::vec(-1.0f64..1.0, 3),
        r1 in 0.0f64..5.0,
        dr in 1e-3f64..5.0,
        sigma in 0.1f64..10.0,
    ) {
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assume!(norm > 1e-3);
        let b = MixtureBasis::new(1, 3, vec![0.3, -0.2, 1.0], vec![1.0], sigma).unwrap();
        let at = |r: f64| -> Vec<f64> { (0..3).map(|i| b.means[i] + r * dir[i] / norm).collect() };
        let mask = [true, true, true];
        prop_assert!(emit_loglik(&at(r1), &mask, 0, &b) > emit_loglik(&at(r1 + dr), &mask, 0, &b));
    }
}
