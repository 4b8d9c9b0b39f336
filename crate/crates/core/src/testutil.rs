//! Hand-built parameter settings shared by unit tests.

use crate::diffnum::ParamStore;

pub fn set(store: &mut ParamStore, name: &str, values: &[f64]) {
    let id = store.find(name).unwrap_or_else(|| panic!("no parameter `{name}`"));
    let t = store.value_mut(id);
    assert_eq!(t.len(), values.len(), "{name}");
    t.data_mut().copy_from_slice(values);
}

pub fn fill(store: &mut ParamStore, name: &str, v: f64) {
    let id = store.find(name).unwrap_or_else(|| panic!("no parameter `{name}`"));
    store.value_mut(id).fill(v);
}

/// Saturates a `k = 2`, hidden-size-1 GRU transition network registered
/// under `prefix` so that it deterministically moves to the other cluster:
/// the update gate is shut, the candidate reads `z_0 − z_1`, and the head
/// maps the resulting `±1` onto logits `∓30, ±30`.
pub fn make_alternator(store: &mut ParamStore, prefix: &str) {
    for gate in ["reset", "update", "cand"] {
        for part in ["w", "u", "b"] {
            fill(store, &format!("{prefix}.cell.{gate}.{part}"), 0.0);
        }
    }
    fill(store, &format!("{prefix}.cell.cand.c"), 0.0);
    set(store, &format!("{prefix}.cell.update.b"), &[-50.0]);
    set(store, &format!("{prefix}.cell.cand.w"), &[50.0, -50.0]);
    set(store, &format!("{prefix}.head.hidden.w"), &[50.0]);
    set(store, &format!("{prefix}.head.hidden.b"), &[0.0]);
    set(store, &format!("{prefix}.head.out.w"), &[-30.0, 30.0]);
    set(store, &format!("{prefix}.head.out.b"), &[0.0, 0.0]);
}
