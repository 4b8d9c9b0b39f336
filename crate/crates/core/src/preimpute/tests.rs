use std::f64::consts::LN_2;

use proptest::prelude::*;

use super::*;
use crate::diffnum::fd_check;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-12
}

fn params_with(d: usize, alpha: f64) -> PreImputeParams {
    let mut p = PreImputeParams::identity(d);
    // softplus⁻¹(α)
    p.alpha_raw = vec![alpha.exp_m1().ln(); d];
    p
}

#[test]
fn kernel_examples() {
    assert_eq!(kernel(3.0, 3.0, 0.7), 1.0);
    assert!(close(kernel(2.0, 1.0, LN_2), 0.5));
    assert!(close(kernel(1.0, 3.0, LN_2), 0.0625));
}

#[test]
fn intensity_examples() {
    let times = [1.0, 2.0, 3.0];
    assert_eq!(intensity(2.0, &[false, false, false], &times, 1.0), 0.0);
    assert_eq!(intensity(2.0, &[false, true, false], &times, 1.0), 1.0);
    assert!(close(intensity(2.0, &[true, false, true], &times, LN_2), 1.0));
}

#[test]
fn identity_init_has_ln2_bandwidth() {
    assert!(close(PreImputeParams::identity(1).alpha(0), LN_2));
}

#[test]
fn smooth_single_observation_spreads_everywhere() {
    let s = MtsSample::from_rows("a", &[vec![None, Some(4.5), None, None]]).unwrap();
    let (xbar, lambda) = smooth(&s, &PreImputeParams::identity(1)).unwrap();
    assert!(xbar.iter().all(|&v| close(v, 4.5)));
    assert_eq!(lambda[1], 1.0);
}

#[test]
fn smooth_symmetric_weights() {
    let s = MtsSample::from_rows("a", &[vec![Some(0.0), None, Some(2.0)]]).unwrap();
    for alpha in [0.1, 1.0, 5.0] {
        let (xbar, _) = smooth(&s, &params_with(1, alpha)).unwrap();
        assert!(close(xbar[1], 1.0));
    }
}

#[test]
fn smooth_constant_series() {
    let s = MtsSample::from_rows("a", &[vec![None, Some(-2.0), Some(-2.0), None, Some(-2.0)]]).unwrap();
    let (xbar, _) = smooth(&s, &params_with(1, 0.3)).unwrap();
    assert!(xbar.iter().all(|&v| close(v, -2.0)));
}

#[test]
fn smooth_unobserved_variable_is_zero() {
    let s = MtsSample::from_rows("a", &[vec![Some(1.0), Some(2.0)], vec![None, None]]).unwrap();
    let (xbar, lambda) = smooth(&s, &PreImputeParams::identity(2)).unwrap();
    assert_eq!(&xbar[2..], &[0.0, 0.0]);
    assert_eq!(&lambda[2..], &[0.0, 0.0]);
    let dense = preimpute(&s, &PreImputeParams::identity(2)).unwrap();
    assert_eq!(&dense.values[2..], &[0.0, 0.0]);
}

#[test]
fn merge_single_variable_equals_smoothing() {
    let s = MtsSample::from_rows("a", &[vec![Some(1.0), None, None, Some(3.0), None]]).unwrap();
    let p = params_with(1, 0.8);
    let (xbar, _) = smooth(&s, &p).unwrap();
    let dense = merge(&s, &xbar, &p).unwrap();
    for t in [1, 2, 4] {
        assert!(close(dense.get(0, t), xbar[t]));
    }
}

#[test]
fn merge_observed_value_passes_through() {
    let s = MtsSample::from_rows("a", &[vec![Some(3.7), None], vec![None, Some(1.0)]]).unwrap();
    let mut p = PreImputeParams::identity(2);
    p.rho = vec![1.0, -4.0, 9.0, 1.0];
    p.alpha_raw = vec![3.0, -2.0];
    assert_eq!(preimpute(&s, &p).unwrap().get(0, 0), 3.7);
}

#[test]
fn merge_two_variables_hand_evaluated() {
    // Variable 1 seen at t=1 (2.0) and t=3 (4.0); variable 2 seen everywhere.
    let rows = |v2: f64| {
        vec![
            vec![Some(2.0), None, Some(4.0)],
            vec![Some(v2), Some(v2), Some(v2)],
        ]
    };
    let p = params_with(2, LN_2);

    // At t*=2 both kernels weigh the two neighbours by 1/2, so
    // x̄_1 = 3, λ(2, m¹; α_j) = 1 for both j, and with ρ_12 = 0, x̄_2 = 0:
    // x̂ = (1·1·3 + 0·1·0) / (1 + 1) = 1.5.
    let s = MtsSample::from_rows("a", &rows(0.0)).unwrap();
    assert!(close(preimpute(&s, &p).unwrap().get(0, 1), 1.5));

    // ρ_12 = 0.4 and x̄_2 = 10: x̂ = (3 + 0.4·1·10) / 2 = 3.5.
    let s = MtsSample::from_rows("a", &rows(10.0)).unwrap();
    let mut p = p;
    p.rho[1] = 0.4;
    assert!(close(preimpute(&s, &p).unwrap().get(0, 1), 3.5));
}

fn store_with(d: usize, alpha_raw: Vec<f64>, rho: Vec<f64>) -> (ParamStore, PreImputeLayer) {
    let mut store = ParamStore::new();
    let layer = PreImputeLayer::new(&mut store, d);
    store.value_mut(layer.alpha_raw).data_mut().copy_from_slice(&alpha_raw);
    store.value_mut(layer.rho).data_mut().copy_from_slice(&rho);
    (store, layer)
}

fn sparse_sample() -> MtsSample {
    MtsSample::from_rows(
        "a",
        &[
            vec![Some(0.5), None, None, Some(-1.0), None],
            vec![None, Some(2.0), None, None, Some(0.3)],
            vec![None, None, None, None, None],
        ],
    )
    .unwrap()
}

#[test]
fn tape_forward_matches_plain_evaluation() {
    let s = sparse_sample();
    let (store, layer) = store_with(
        3,
        vec![0.3, -0.4, 1.2],
        vec![1.0, 0.2, -0.5, 0.7, 1.0, 0.1, 0.3, 0.4, 1.0],
    );
    let plain = preimpute(&s, &layer.params(&store)).unwrap();
    let mut tape = Tape::new();
    let cols = layer.forward(&mut tape, &store, &s).unwrap();
    for (t, c) in cols.iter().enumerate() {
        for i in 0..3 {
            assert!((tape.data(*c)[i] - plain.get(i, t)).abs() < 1e-12);
        }
    }
}

#[test]
fn gradients_match_finite_differences() {
    let s = sparse_sample();
    let (store, layer) = store_with(
        3,
        vec![0.3, -0.4, 1.2],
        vec![1.0, 0.2, -0.5, 0.7, 1.0, 0.1, 0.3, 0.4, 1.0],
    );
    let loss = |tape: &mut Tape, st: &ParamStore| {
        let cols = layer.forward(tape, st, &s)?;
        let all = tape.concat(&cols)?;
        let w = tape.constant_vec((0..15).map(|i| 0.1 * i as f64 - 0.6).collect())?;
        let lin = tape.dot(all, w)?;
        let sq = tape.mul(all, all)?;
        let sq = tape.sum(sq)?;
        tape.add(lin, sq)
    };
    let report = fd_check(loss, &store, 1e-4, 1e-4).unwrap();
    assert!(report.passed, "{report:#?}");
}

#[test]
fn placeholder_payload_is_never_read() {
    let s = sparse_sample();
    let p = params_with(3, 0.9);
    let a = preimpute(&s, &p).unwrap();
    let b = preimpute(&s.with_placeholder(1e300), &p).unwrap();
    assert_eq!(a, b);
    let (store, layer) = store_with(3, p.alpha_raw.clone(), p.rho.clone());
    let run = |x: &MtsSample| {
        let mut tape = Tape::new();
        let cols = layer.forward(&mut tape, &store, x).unwrap();
        cols.iter().flat_map(|c| tape.data(*c).to_vec()).map(f64::to_bits).collect::<Vec<_>>()
    };
    assert_eq!(run(&s), run(&s.with_placeholder(-7.0)));
}

#[test]
fn pinning_restores_unit_diagonal() {
    let (mut store, layer) = store_with(2, vec![0.0, 0.0], vec![3.0, 0.5, 0.2, -1.0]);
    layer.pin_rho_diagonal(&mut store);
    assert_eq!(store.value(layer.rho).data(), &[1.0, 0.5, 0.2, 1.0]);
}

fn arb_case() -> impl Strategy<Value = (MtsSample, PreImputeParams)> {
    (1usize..4, 2usize..7).prop_flat_map(|(d, w)| {
        (
            prop::collection::vec(prop::option::weighted(0.5, -5.0f64..5.0), d * w),
            prop::collection::vec(-2.0f64..2.0, d),
            prop::collection::vec(-1.5f64..1.5, d * d),
        )
            .prop_map(move |(cells, alpha_raw, mut rho)| {
                let rows: Vec<Vec<Option<f64>>> = cells.chunks(w).map(<[_]>::to_vec).collect();
                for i in 0..d {
                    rho[i * d + i] = 1.0;
                }
                (MtsSample::from_rows("p", &rows).unwrap(), PreImputeParams { alpha_raw, rho })
            })
    })
}

proptest! {
    #[test]
    fn observed_entries_pass_through_bitwise((s, p) in arb_case()) {
        let dense = preimpute(&s, &p).unwrap();
        for i in 0..s.dims() {
            for t in 0..s.len() {
                if let Some(x) = s.value(i, t) {
                    prop_assert_eq!(dense.get(i, t).to_bits(), x.to_bits());
                }
                prop_assert!(dense.get(i, t).is_finite());
            }
        }
    }

    #[test]
    fn imputed_entries_are_bounded((s, p) in arb_case()) {
        let d = s.dims();
        let (xbar, _) = smooth(&s, &p).unwrap();
        let dense = merge(&s, &xbar, &p).unwrap();
        for i in 0..d {
            let max_rho = (0..d).map(|j| p.rho[i * d + j].abs()).fold(0.0, f64::max);
            for t in 0..s.len() {
                if s.is_observed(i, t) {
                    continue;
                }
                let max_bar = (0..d).map(|j| xbar[j * s.len() + t].abs()).fold(0.0, f64::max);
                prop_assert!(dense.get(i, t).abs() <= max_rho * max_bar * (1.0 + 1e-12) + 1e-300);
            }
        }
    }
}
