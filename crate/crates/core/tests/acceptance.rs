//! Acceptance suite: one PASS/FAIL line per criterion, run in order. The
//! process exits non-zero when any criterion fails.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sparsemix::dataset::{normalize, split, synthesize, MtsSample, NormStats, Split, SplitSpec, SynthConfig};
use sparsemix::diffnum::{fd_check, CellKind, ParamStore, Tape};
use sparsemix::evalcast::{evaluate_forecasts, forecast, imputation_eval, robustness_sweep, Baseline};
use sparsemix::generative::dynamic_mixture;
use sparsemix::inference::{gumbel_softmax, marginals, InputAlignment};
use sparsemix::trainer::{
    batch_objective, checkpoint_to_string, elbo, elbo_on_tape, exact_log_marginal, train, ElboOptions, GammaMode,
    KlMode, ModelConfig, ModelParams, TrainConfig, TrainOutcome,
};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn model_config(k: usize, d: usize, hidden: usize, gamma: GammaMode) -> ModelConfig {
    ModelConfig {
        k,
        d,
        hidden_dim: hidden,
        sigma: 1.0,
        gamma,
        cell: CellKind::Gru,
        alignment: InputAlignment::Current,
    }
}

/// Seeded initialization pushed well outside its usual range, with random
/// basis probabilities.
fn random_model(k: usize, d: usize, gamma: GammaMode, seed: u64) -> ModelParams {
    let mut m = ModelParams::new(model_config(k, d, 4, gamma), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xacce);
    let ids: Vec<_> = m.store.ids().collect();
    for id in ids {
        for v in m.store.value_mut(id).data_mut() {
            *v += rng.random_range(-1.5..1.5);
        }
    }
    m.pre.pin_rho_diagonal(&mut m.store);
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    m.basis_probs = raw.iter().map(|p| p / total).collect();
    m
}

fn random_sample(d: usize, w: usize, rng: &mut ChaCha8Rng) -> MtsSample {
    let rows: Vec<Vec<Option<f64>>> = (0..d)
        .map(|_| (0..w).map(|_| Some(rng.random_range(-2.0..2.0))).collect())
        .collect();
    MtsSample::from_rows("r", &rows).unwrap()
}

fn bound_correctness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let opts = ElboOptions {
        temperature: 1.0,
        kl: KlMode::Exact,
        samples: 1,
    };
    let mut worst = f64::NEG_INFINITY;
    let cases = 120;
    for case in 0..cases {
        let k = rng.random_range(1..=3);
        let w = rng.random_range(1..=4);
        let d = rng.random_range(1..=3);
        let gamma = if case % 5 == 4 {
            GammaMode::Gate
        } else {
            GammaMode::Fixed([0.0, 0.01, 0.5, 1.0][case % 4])
        };
        let m = random_model(k, d, gamma, 1000 + case as u64);
        let s = random_sample(d, w, &mut rng);
        let bound = elbo(&m, &s, &opts, Some(&m.basis_probs), 0).unwrap().elbo;
        let exact = exact_log_marginal(&s, &m, &m.basis_probs).unwrap();
        worst = worst.max(bound - exact);
    }
    verdict(worst <= 1e-9, format!("{cases} instances, max(ELBO - log p) = {worst:.3e}"))
}

/// `[t][s][r]` tables with a single first row.
fn random_table(k: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<Vec<f64>>> {
    let row = |rng: &mut ChaCha8Rng| {
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0f64).powi(3) + 1e-6).collect();
        let total: f64 = raw.iter().sum();
        raw.iter().map(|v| v / total).collect::<Vec<f64>>()
    };
    (0..w)
        .map(|t| {
            let rows = if t == 0 { 1 } else { k };
            (0..rows).map(|_| row(rng)).collect()
        })
        .collect()
}

fn brute_force_marginals(table: &[Vec<Vec<f64>>], k: usize) -> Vec<Vec<f64>> {
    let w = table.len();
    let mut out = vec![vec![0.0; k]; w];
    let total = k.pow(w as u32);
    for code in 0..total {
        let path: Vec<usize> = (0..w).map(|t| code / k.pow(t as u32) % k).collect();
        let mut p = table[0][0][path[0]];
        for t in 1..w {
            p *= table[t][path[t - 1]][path[t]];
        }
        for t in 0..w {
            out[t][path[t]] += p;
        }
    }
    out
}

fn marginalization_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let k = rng.random_range(1..=4);
        let w = rng.random_range(1..=5);
        let table = random_table(k, w, &mut rng);
        let fast = marginals(&table).unwrap();
        let slow = brute_force_marginals(&table, k);
        for (a, b) in fast.iter().flatten().zip(slow.iter().flatten()) {
            worst = worst.max((a - b).abs());
        }
    }
    verdict(worst <= 1e-12, format!("1000 tables, max |diff| = {worst:.3e}"))
}

fn gradient_fidelity() -> Verdict {
    let sample = MtsSample::from_rows(
        "s",
        &[vec![Some(0.5), None, Some(-0.3)], vec![None, Some(1.2), Some(0.1)]],
    )
    .unwrap();
    let mut worst: f64 = 0.0;
    let mut groups: Vec<String> = Vec::new();
    for gamma in [GammaMode::Fixed(0.3), GammaMode::Gate] {
        // A random draw kept in a well-conditioned range.
        let mut m = random_model(2, 2, gamma, 13);
        let ids: Vec<_> = m.store.ids().collect();
        for id in ids {
            for v in m.store.value_mut(id).data_mut() {
                *v *= 0.5;
            }
        }
        m.pre.pin_rho_diagonal(&mut m.store);
        let probs = m.basis_probs.clone();
        let opts = ElboOptions {
            temperature: 0.7,
            kl: KlMode::Sampled,
            samples: 2,
        };
        let loss = |tape: &mut Tape, store: &ParamStore| {
            let view = ModelParams {
                store: store.clone(),
                ..m.clone()
            };
            let (e, _) = elbo_on_tape(&view, tape, &sample, &opts, Some(&probs), 5)?;
            tape.affine_const(e, -1.0, 0.0)
        };
        let report = fd_check(loss, &m.store, 1e-4, 1e-4).unwrap();
        worst = worst.max(report.max_rel_error);
        for p in &report.params {
            let group = p.name.split('.').take(2).collect::<Vec<_>>().join(".");
            if !groups.contains(&group) {
                groups.push(group);
            }
        }
    }
    let covered = ["pre.", "gen.cell", "gen.head", "gen.means", "inf.cell", "inf.head"]
        .iter()
        .all(|prefix| groups.iter().any(|g| g.starts_with(prefix)));
    verdict(
        worst < 1e-4 && covered,
        format!("max relative error {worst:.3e} over groups {}", groups.join(", ")),
    )
}

/// The synthetic process used by the qualitative criteria: three clusters on
/// a circle of radius 2, a near-deterministic cycle, precision 100 and 30% of
/// entries hidden.
fn synthetic(n: usize, seed: u64) -> (Split, Vec<Vec<f64>>) {
    let mut cfg = SynthConfig::new(3, 2, 20, n, 100.0, 0.01, seed);
    cfg.missing = 0.3;
    cfg.advance_prob = 0.95;
    let data = synthesize(&cfg).unwrap();
    let parts = split(&data.samples, &SplitSpec::standard(seed)).unwrap();
    (parts, data.truth.means)
}

fn train_cfg(gamma: GammaMode, epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        k: 3,
        gamma,
        sigma: 100.0,
        epochs,
        lr: 1e-2,
        seed,
        patience: 10,
        ..TrainConfig::default()
    }
}

fn best_permutation_distance(learned: &[Vec<f64>], truth: &[Vec<f64>]) -> f64 {
    fn perms(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in perms(n - 1) {
            for i in 0..n {
                let mut q = p.clone();
                q.insert(i, n - 1);
                out.push(q);
            }
        }
        out
    }
    perms(truth.len())
        .into_iter()
        .map(|p| {
            truth
                .iter()
                .enumerate()
                .map(|(i, t)| t.iter().zip(&learned[p[i]]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
                .sum::<f64>()
                / truth.len() as f64
        })
        .fold(f64::INFINITY, f64::min)
}

struct Shared {
    data: Split,
    recovery: TrainOutcome,
}

fn synthetic_recovery() -> (Verdict, Shared) {
    let (data, truth) = synthetic(500, 0);
    let started = Instant::now();
    let outcome = train(&data.train, &data.valid, &train_cfg(GammaMode::Fixed(0.01), 200, 0)).unwrap();
    let elapsed = started.elapsed();
    let basis = outcome.model.basis().unwrap();
    let learned: Vec<Vec<f64>> = (0..3).map(|i| basis.mean(i).to_vec()).collect();
    let dist = best_permutation_distance(&learned, &truth);
    let ev = evaluate_forecasts(&outcome.model, &data.test, None, 5).unwrap();
    let mean = ev.baseline(Baseline::Mean).rmse;
    let gain = 1.0 - ev.model.rmse / mean;
    let pass = dist < 0.1 && gain >= 0.2 && elapsed < Duration::from_secs(15 * 60);
    let detail = format!(
        "mean L2 {dist:.4}, rmse {:.4} vs mean baseline {mean:.4} ({:.1}% better), {} epochs in {:.0}s",
        ev.model.rmse,
        100.0 * gain,
        outcome.log.len(),
        elapsed.as_secs_f64()
    );
    (verdict(pass, detail), Shared { data, recovery: outcome })
}

fn ablation_direction(shared: &Shared) -> Verdict {
    let rmse_for = |gamma: GammaMode| -> f64 {
        let model = if gamma == GammaMode::Fixed(0.01) {
            shared.recovery.model.clone()
        } else {
            train(&shared.data.train, &shared.data.valid, &train_cfg(gamma, 200, 0)).unwrap().model
        };
        evaluate_forecasts(&model, &shared.data.test, None, 5).unwrap().model.rmse
    };
    let g1 = rmse_for(GammaMode::Fixed(1.0));
    let g0 = rmse_for(GammaMode::Fixed(0.0));
    let g2 = rmse_for(GammaMode::Fixed(0.01));
    let gate = rmse_for(GammaMode::Gate);
    let best_fixed = g1.min(g0).min(g2);
    let pass = g1 > g0 && g0 >= g2 && gate <= 1.05 * best_fixed;
    verdict(
        pass,
        format!("rmse γ=1 {g1:.4}, γ=0 {g0:.4}, γ=0.01 {g2:.4}, gate {gate:.4}"),
    )
}

fn imputation_improvement() -> Verdict {
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in 1..=5u64 {
        let (data, _) = synthetic(200, seed);
        let outcome = train(&data.train, &data.valid, &train_cfg(GammaMode::Fixed(0.01), 100, seed)).unwrap();
        let r = imputation_eval(&outcome.model, &data.test, 0.1, seed).unwrap();
        if r.after.rmse < r.before.rmse {
            wins += 1;
        }
        parts.push(format!("{:.3}->{:.3}", r.before.rmse, r.after.rmse));
    }
    verdict(wins >= 4, format!("{wins}/5 improved: {}", parts.join(", ")))
}

/// Spearman correlation without tie correction beyond average ranks.
fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for &k in &idx[i..=j] {
                r[k] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn robustness_trend() -> Verdict {
    let (data, _) = synthetic(300, 7);
    let deltas = [0.0, 0.2, 0.4, 0.6];
    let seeds = [1, 2];
    let cells = robustness_sweep(&train_cfg(GammaMode::Fixed(0.01), 150, 0), &data, &deltas, &seeds).unwrap();
    let per_delta = |f: &dyn Fn(&sparsemix::evalcast::SweepCell) -> f64| -> Vec<f64> {
        deltas
            .iter()
            .map(|&d| {
                let v: Vec<f64> = cells.iter().filter(|c| c.delta == d).map(f).collect();
                v.iter().sum::<f64>() / v.len() as f64
            })
            .collect()
    };
    let model = per_delta(&|c| c.eval.model.rmse);
    let mean = per_delta(&|c| c.eval.baseline(Baseline::Mean).rmse);
    let rho = spearman(&deltas, &model);
    let below = model.iter().zip(&mean).all(|(m, b)| m < b);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
    verdict(
        rho >= 0.8 && below,
        format!("Spearman {rho:.2}; model rmse [{}] vs mean [{}]", fmt(&model), fmt(&mean)),
    )
}

fn on_simplex(p: &[f64]) -> bool {
    p.iter().all(|&v| v >= 0.0 && v.is_finite()) && (p.iter().sum::<f64>() - 1.0).abs() < 1e-9
}

fn masking_and_determinism() -> Verdict {
    let mut failures = Vec::new();

    // Garbage at masked entries changes neither value nor gradients.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..20u64 {
        let gamma = if case % 2 == 0 { GammaMode::Gate } else { GammaMode::Fixed(0.1) };
        let m = ModelParams::new(model_config(3, 2, 4, gamma), case).unwrap();
        let rows: Vec<Vec<Option<f64>>> = (0..2)
            .map(|_| {
                (0..6)
                    .map(|_| rng.random_bool(0.6).then(|| rng.random_range(-2.0..2.0)))
                    .collect()
            })
            .collect();
        let Ok(s) = MtsSample::from_rows("m", &rows) else { continue };
        let run = |x: &MtsSample| {
            let obj = batch_objective(&m, std::slice::from_ref(x), &[case], &ElboOptions::default(), true).unwrap();
            let g: Vec<u64> = obj.grads.unwrap().iter().flatten().map(|v| v.to_bits()).collect();
            (obj.mean_neg_elbo.to_bits(), g)
        };
        let base = run(&s);
        for payload in [1e9, -3.7, f64::MAX / 4.0] {
            if run(&s.with_placeholder(payload)) != base {
                failures.push(format!("masking case {case}"));
            }
        }
    }

    // Identical seeds give identical checkpoints.
    let mut syn = SynthConfig::new(2, 2, 10, 40, 25.0, 0.01, 3);
    syn.missing = 0.3;
    let data = synthesize(&syn).unwrap().samples;
    let cfg = TrainConfig {
        k: 2,
        sigma: 25.0,
        epochs: 4,
        hidden_dim: 6,
        batch_size: 8,
        lr: 1e-2,
        seed: 5,
        ..TrainConfig::default()
    };
    let a = train(&data[..30], &data[30..], &cfg).unwrap();
    let b = train(&data[..30], &data[30..], &cfg).unwrap();
    if checkpoint_to_string(&a.model, Some(&cfg)).unwrap() != checkpoint_to_string(&b.model, Some(&cfg)).unwrap() {
        failures.push("training reproducibility".into());
    }

    // Simplex and normalization invariants over randomized cases.
    let cases = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..cases {
        let k = rng.random_range(1..=6);
        let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-30.0..30.0)).collect();
        let tau = rng.random_range(0.05..3.0);
        if !on_simplex(&gumbel_softmax(&logits, tau, case).unwrap()) {
            failures.push(format!("gumbel case {case}"));
        }
        let table = random_table(k, rng.random_range(1..=6), &mut rng);
        if !marginals(&table).unwrap().iter().all(|r| on_simplex(r)) {
            failures.push(format!("marginals case {case}"));
        }
        let trans = &table[0][0];
        let basis = &random_table(k, 1, &mut rng)[0][0];
        if !on_simplex(&dynamic_mixture(trans, basis, rng.random_range(0.0..=1.0)).unwrap()) {
            failures.push(format!("mixture case {case}"));
        }
    }
    for case in 0..200u64 {
        let k = 1 + (case % 4) as usize;
        let gamma = if case % 3 == 0 { GammaMode::Gate } else { GammaMode::Fixed(rng.random_range(0.0..=1.0)) };
        let m = ModelParams::new(model_config(k, 2, 3, gamma), case).unwrap();
        let s = random_sample(2, 4, &mut rng);
        let f = forecast(&m, &s, 6).unwrap();
        if !f.psi_path.iter().all(|r| on_simplex(r)) || !f.predictions.iter().all(|v| v.is_finite()) {
            failures.push(format!("forecast case {case}"));
        }
        let inf = m.infer(&s, 0.5, case).unwrap();
        if !inf.seq.marginals.iter().chain(&inf.seq.samples).all(|r| on_simplex(r)) {
            failures.push(format!("inference case {case}"));
        }
    }
    for case in 0..200u64 {
        let mut syn = SynthConfig::new(2, 3, 8, 12, 4.0, 0.1, case);
        syn.missing = 0.4;
        let samples = synthesize(&syn).unwrap().samples;
        let stats = NormStats::from_samples(&samples).unwrap();
        let z = normalize(&samples, &stats);
        let again = NormStats::from_samples(&z).unwrap();
        let ok = again.mean.iter().all(|m| m.abs() < 1e-9)
            && again
                .std
                .iter()
                .zip(&stats.std)
                .all(|(s, orig)| (s - 1.0).abs() < 1e-9 || *orig == 1.0);
        let masks_kept = samples.iter().zip(&z).all(|(a, b)| a.mask() == b.mask());
        if !ok || !masks_kept {
            failures.push(format!("normalization case {case}"));
        }
    }
    let detail = if failures.is_empty() {
        format!("masking, reproducibility and {cases} randomized simplex cases hold")
    } else {
        format!("{} failures, first: {}", failures.len(), failures[0])
    };
    verdict(failures.is_empty(), detail)
}

fn report(n: usize, name: &str, started: Instant, v: &Verdict) -> bool {
    println!(
        "criterion {n} ({name}): {} [{:.1}s] {}",
        if v.pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64(),
        v.detail
    );
    v.pass
}

fn main() {
    let mut all = true;
    let t = Instant::now();
    all &= report(1, "bound correctness", t, &bound_correctness());
    let t = Instant::now();
    all &= report(2, "marginalization oracle", t, &marginalization_oracle());
    let t = Instant::now();
    all &= report(3, "gradient fidelity", t, &gradient_fidelity());
    let t = Instant::now();
    let (v, shared) = synthetic_recovery();
    all &= report(4, "synthetic recovery", t, &v);
    let t = Instant::now();
    all &= report(5, "ablation direction", t, &ablation_direction(&shared));
    let t = Instant::now();
    all &= report(6, "imputation improvement", t, &imputation_improvement());
    let t = Instant::now();
    all &= report(7, "robustness trend", t, &robustness_trend());
    let t = Instant::now();
    all &= report(8, "masking and determinism", t, &masking_and_determinism());
    if !all {
        std::process::exit(1);
    }
}
