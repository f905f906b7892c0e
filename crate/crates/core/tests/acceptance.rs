//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Every oracle here is implemented independently of the library.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use fairfedcs::contribution::{exact_shapley, sampled_shapley, CoalitionValueOracle};
use fairfedcs::fairness::{
    drift_bound_residual, select_fairfedcs, select_greedy, step_queues, unfairness_arrivals, FairnessParams,
    VirtualQueueState,
};
use fairfedcs::fedsim::data::Dataset;
use fairfedcs::fedsim::{build_federation, local_train, loss_and_gradient, run_on_federation, ModelState, TrainParams};
use fairfedcs::harness::commands::{cmd_run, EXIT_OK};
use fairfedcs::harness::{ExperimentConfig, Policy};
use fairfedcs::metrics::{jain_fairness_index, quality_profile, summarize, MetricsReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

/// Shapley value by the subset formula with factorial weights.
fn brute_force_shapley(table: &[f64], n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let mut phi = 0.0;
            for s in 0..(1usize << n) {
                if s & (1 << i) != 0 {
                    continue;
                }
                let k = s.count_ones() as usize;
                let w = factorial(k) * factorial(n - k - 1) / factorial(n);
                phi += w * (table[s | (1 << i)] - table[s]);
            }
            phi
        })
        .collect()
}

fn random_table(n: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    (0..1usize << n).map(|_| r.random::<f64>()).collect()
}

fn c1_shapley_equivalence() -> Outcome {
    let mut r = rng(1);
    let mut worst = 0.0f64;
    let mut worst_eff = 0.0f64;
    for _ in 0..100 {
        let n = r.random_range(2..=6);
        let table = random_table(n, &mut r);
        let oracle = CoalitionValueOracle::from_table((0..n).collect(), table.clone()).unwrap();
        let got = exact_shapley(&oracle).unwrap();
        let want = brute_force_shapley(&table, n);
        for (a, b) in got.values.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
        let eff = got.values.iter().sum::<f64>() - (table[(1 << n) - 1] - table[0]);
        worst_eff = worst_eff.max(eff.abs());
    }
    outcome(
        worst <= 1e-12 && worst_eff <= 1e-12,
        format!("max |exact - brute force| = {worst:.2e}, max efficiency gap = {worst_eff:.2e}"),
    )
}

fn c2_sampled_accuracy() -> Outcome {
    let mut r = rng(2);
    let mut abs_err = Vec::new();
    for k in 0..20 {
        let table = random_table(6, &mut r);
        let oracle = CoalitionValueOracle::from_table((0..6).collect(), table.clone()).unwrap();
        let exact = brute_force_shapley(&table, 6);
        let est = sampled_shapley(&oracle, 200, 0.0, 1000 + k).unwrap();
        abs_err.extend(est.values.iter().zip(&exact).map(|(a, b)| (a - b).abs()));
    }
    let mae = abs_err.iter().sum::<f64>() / abs_err.len() as f64;
    outcome(mae <= 0.02, format!("MAE = {mae:.4} over {} values (limit 0.02)", abs_err.len()))
}

fn c3_queue_invariants() -> Outcome {
    let mut r = rng(3);
    let mut min_q = f64::INFINITY;
    let mut min_res = f64::INFINITY;
    let mut failures = 0usize;
    for _ in 0..100_000 {
        let n = r.random_range(1..=12);
        let m = r.random_range(1..=n);
        let params = FairnessParams::new(r.random_range(0.01..10.0), r.random_range(0.0..=1.0)).unwrap();
        let queues: Vec<f64> = (0..n)
            .map(|_| if r.random_bool(0.3) { 0.0 } else { r.random_range(0.0..5.0) })
            .collect();
        let reps: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let selected = rand::seq::index::sample(&mut r, n, m).into_vec();
        let prev = VirtualQueueState { queues: queues.clone(), round: 0 };
        let next = step_queues(&prev, &reps, &selected, &params).unwrap();
        let c = unfairness_arrivals(&reps, &selected, params.epsilon).unwrap();
        let mut x = vec![0.0; n];
        for &i in &selected {
            x[i] = 1.0;
        }
        match drift_bound_residual(&queues, &next.queues, &c, &x, &params) {
            Ok(res) => min_res = min_res.min(res),
            Err(_) => failures += 1,
        }
        min_q = next.queues.iter().copied().fold(min_q, f64::min);
    }
    outcome(
        min_q >= 0.0 && min_res >= 0.0 && failures == 0,
        format!("min queue = {min_q}, min residual = {min_res:.3e}, rejected transitions = {failures}"),
    )
}

fn desk_config(scenario: u8, policy: Policy, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(scenario, policy, seed);
    cfg.n_clients = 20;
    cfg.m = 2;
    cfg.sigma = 0.6;
    cfg.p_minority = 0.2;
    cfg
}

/// Queue histories and selections of the five long FairFedCS desk runs
/// shared by criteria 4 and 9.
struct LongRuns {
    histories: Vec<Vec<Vec<f64>>>,
    selections: Vec<Vec<Vec<usize>>>,
}

fn long_runs() -> LongRuns {
    let runs: Vec<_> = (0..5u64)
        .into_par_iter()
        .map(|seed| {
            let mut cfg = desk_config(1, Policy::Fairfedcs, seed);
            cfg.max_rounds = 500;
            cfg.patience = 500;
            let fed = build_federation(&cfg).unwrap();
            let trace = run_on_federation(&cfg, &fed).unwrap();
            assert_eq!(trace.rounds_executed(), 500, "long run stopped early");
            let selections = trace.rounds.iter().map(|r| r.selected.clone()).collect();
            (trace.queue_history().unwrap(), selections)
        })
        .collect();
    let (histories, selections) = runs.into_iter().unzip();
    LongRuns { histories, selections }
}

fn c4_mean_rate_stability(runs: &LongRuns) -> Outcome {
    let mut worst = 0.0f64;
    let mut shrinking = 0usize;
    let mut total = 0usize;
    for h in &runs.histories {
        for (q500, q100) in h[500].iter().zip(&h[100]) {
            let late = q500 / 500.0;
            let early = q100 / 100.0;
            worst = worst.max(late);
            total += 1;
            if late <= early {
                shrinking += 1;
            }
        }
    }
    let share = shrinking as f64 / total as f64;
    outcome(
        worst <= 0.05 && share >= 0.9,
        format!("max Q(500)/500 = {worst:.4} (limit 0.05); Q/T non-increasing for {:.1}% of clients", 100.0 * share),
    )
}

fn c5_selection_optimality() -> Outcome {
    let mut r = rng(5);
    let mut misses = 0usize;
    for inst in 0..200u64 {
        let n = r.random_range(1..=8);
        let m = r.random_range(1..=n);
        let params = FairnessParams::new(r.random_range(0.05..5.0), m as f64 / n as f64).unwrap();
        let reps: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let queues: Vec<f64> = (0..n).map(|_| r.random_range(0.0..3.0)).collect();
        let objective = |set: &[usize]| set.iter().map(|&i| params.sigma * reps[i] + queues[i]).sum::<f64>();
        let best = (0u32..1 << n)
            .filter(|s| s.count_ones() as usize == m)
            .map(|s| objective(&(0..n).filter(|&i| s & (1 << i) != 0).collect::<Vec<_>>()))
            .fold(f64::NEG_INFINITY, f64::max);
        let state = VirtualQueueState { queues: queues.clone(), round: 0 };
        let chosen = select_fairfedcs(&reps, &state, &params, m, inst).unwrap();
        if chosen.selected.len() != m || objective(&chosen.selected) < best - 1e-12 {
            misses += 1;
        }
    }
    outcome(misses == 0, format!("{misses} of 200 instances below the brute-force optimum"))
}

fn c6_zero_queue_reduction() -> Outcome {
    let mut r = rng(6);
    let mut mismatches = 0usize;
    let mut cases = 0usize;
    for inst in 0..1000u64 {
        let n = r.random_range(2..=30);
        let m = r.random_range(1..=n);
        let reps: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let greedy = select_greedy(&reps, m, inst).unwrap().selected;
        for sigma in [0.1, 0.6, 10.0] {
            let params = FairnessParams::new(sigma, m as f64 / n as f64).unwrap();
            let ff = select_fairfedcs(&reps, &VirtualQueueState::new(n), &params, m, inst ^ 0xABCD).unwrap();
            cases += 1;
            if ff.selected != greedy {
                mismatches += 1;
            }
        }
    }
    outcome(mismatches == 0, format!("{mismatches} of {cases} selections differ from greedy"))
}

fn sweep(scenario: u8, policies: &[Policy]) -> Vec<(Policy, Vec<MetricsReport>)> {
    let cells: Vec<(Policy, u64)> = policies.iter().flat_map(|&p| (0..20u64).map(move |s| (p, s))).collect();
    let reports: Vec<MetricsReport> = cells
        .par_iter()
        .map(|&(p, s)| {
            let cfg = desk_config(scenario, p, s);
            let fed = build_federation(&cfg).unwrap();
            let trace = run_on_federation(&cfg, &fed).unwrap();
            summarize(&trace, &quality_profile(&fed.profiles)).unwrap()
        })
        .collect();
    policies
        .iter()
        .enumerate()
        .map(|(k, &p)| (p, reports[k * 20..(k + 1) * 20].to_vec()))
        .collect()
}

fn mean_of(runs: &[(Policy, Vec<MetricsReport>)], p: Policy, f: impl Fn(&MetricsReport) -> f64) -> f64 {
    let reps = &runs.iter().find(|r| r.0 == p).unwrap().1;
    reps.iter().map(f).sum::<f64>() / reps.len() as f64
}

fn c7_directional_table() -> Outcome {
    let runs = sweep(1, &[Policy::Fairfedcs, Policy::Ablation, Policy::Random, Policy::Greedy]);
    let jfi = |p| mean_of(&runs, p, |r| r.jfi);
    let acc = |p| mean_of(&runs, p, |r| r.final_accuracy);
    let (ff, ab, ra, gr) = (jfi(Policy::Fairfedcs), jfi(Policy::Ablation), jfi(Policy::Random), jfi(Policy::Greedy));
    let (ff_acc, gr_acc) = (acc(Policy::Fairfedcs), acc(Policy::Greedy));
    outcome(
        ff > ab && ab > gr && ff > ra && ff_acc >= gr_acc - 0.01,
        format!(
            "JFI fairfedcs {ff:.4}, ablation {ab:.4}, random {ra:.4}, greedy {gr:.4}; accuracy fairfedcs {ff_acc:.4} vs greedy {gr_acc:.4}"
        ),
    )
}

fn c8_minority_behaviour() -> Outcome {
    let runs = sweep(2, &[Policy::Fairfedcs, Policy::Greedy]);
    let minority = |p| mean_of(&runs, p, |r| r.minority_class_accuracy.unwrap());
    let share = |p| {
        mean_of(&runs, p, |r| {
            r.participation[..3].iter().sum::<u64>() as f64 / r.participation.iter().sum::<u64>() as f64
        })
    };
    let (ff, gr) = (minority(Policy::Fairfedcs), minority(Policy::Greedy));
    outcome(
        ff > gr,
        format!(
            "minority-class accuracy fairfedcs {ff:.4} vs greedy {gr:.4}; minority-client share of selections {:.3} vs {:.3}",
            share(Policy::Fairfedcs),
            share(Policy::Greedy)
        ),
    )
}

fn c9_starvation_freedom(runs: &LongRuns) -> Outcome {
    let mut worst_first = 0usize;
    let mut starved = 0usize;
    for sel in &runs.selections {
        for i in 0..20 {
            match sel.iter().take(200).position(|s| s.contains(&i)) {
                Some(t) => worst_first = worst_first.max(t),
                None => starved += 1,
            }
        }
    }
    outcome(
        starved == 0,
        format!("{starved} client-seed pairs unselected in 200 rounds; latest first selection at round {worst_first}"),
    )
}

fn c10_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk_config(2, Policy::Fairfedcs, 42);
    let path = dir.path().join("config.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let codes = (cmd_run(&path, &a, false), cmd_run(&path, &b, false));
    let same = |name: &str| std::fs::read(a.join(name)).ok().is_some_and(|x| Some(x) == std::fs::read(b.join(name)).ok());
    let files = ["trace.csv", "rounds.csv", "summary.json"];
    let identical: Vec<&str> = files.iter().copied().filter(|f| same(f)).collect();
    outcome(
        codes == (EXIT_OK, EXIT_OK) && identical.len() == files.len(),
        format!("exit codes {codes:?}; byte-identical: {}", identical.join(", ")),
    )
}

fn c11_jfi_extremes() -> Outcome {
    let equal = jain_fairness_index(&[4, 2, 6], &[1.0, 0.5, 1.5]).unwrap();
    let single = jain_fairness_index(&[0, 9, 0, 0], &[1.0; 4]).unwrap();
    let mixed = jain_fairness_index(&[1, 1, 2], &[1.0; 3]).unwrap();
    outcome(
        equal == 1.0 && single == 0.25 && (mixed - 0.888889).abs() <= 1e-6,
        format!("equal ratios {equal}, single active {single}, (1,1,2) {mixed:.6}"),
    )
}

fn c12_gradient_check() -> Outcome {
    let mut r = rng(12);
    let mut worst = 0.0f64;
    let mut worst_step = 0.0f64;
    for _ in 0..50 {
        let k = r.random_range(2..=5);
        let d = r.random_range(1..=6);
        let len = r.random_range(3..=25);
        let features: Vec<f64> = (0..len * d).map(|_| r.random_range(-2.0..2.0)).collect();
        let labels: Vec<usize> = (0..len).map(|_| r.random_range(0..k)).collect();
        let data = Dataset::new(features, labels, k, d).unwrap();
        let weights = (0..k * d).map(|_| r.random_range(-1.0..1.0)).collect();
        let bias = (0..k).map(|_| r.random_range(-1.0..1.0)).collect();
        let model = ModelState::from_parts(k, d, weights, bias).unwrap();
        let all: Vec<usize> = (0..len).collect();
        let (_, grad) = loss_and_gradient(&model, &data, &all).unwrap();
        let analytic: Vec<f64> = grad.params().copied().collect();

        let h = 1e-5;
        let mut numeric = Vec::with_capacity(analytic.len());
        for p in 0..model.num_params() {
            let mut up = model.clone();
            *up.param_mut(p) += h;
            let mut down = model.clone();
            *down.param_mut(p) -= h;
            let lu = loss_and_gradient(&up, &data, &all).unwrap().0;
            let ld = loss_and_gradient(&down, &data, &all).unwrap().0;
            numeric.push((lu - ld) / (2.0 * h));
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        let rel = norm(&diff) / norm(&analytic).max(norm(&numeric)).max(1e-12);
        worst = worst.max(rel);

        // one full-batch epoch of local_train is exactly one gradient step
        let lr = 0.1;
        let params = TrainParams { lr, epochs: 1, batch_size: len };
        let trained = local_train(&model, &data, &params, 7).unwrap();
        for ((t, m0), g) in trained.params().zip(model.params()).zip(&analytic) {
            worst_step = worst_step.max((t - (m0 - lr * g)).abs());
        }
    }
    outcome(
        worst <= 1e-5 && worst_step <= 1e-12,
        format!("max relative error {worst:.2e} (limit 1e-5); local_train step deviation {worst_step:.1e}"),
    )
}

fn main() {
    // the five long runs are built on first use, so criterion 4 carries their cost
    let long: OnceLock<LongRuns> = OnceLock::new();
    let shared = |f: fn(&LongRuns) -> Outcome| f(long.get_or_init(long_runs));
    type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;
    let criteria: Vec<(&str, Option<Duration>, Check)> = vec![
        ("Shapley oracle equivalence", Some(Duration::from_secs(5)), Box::new(c1_shapley_equivalence)),
        ("Sampled-Shapley accuracy", Some(Duration::from_secs(10)), Box::new(c2_sampled_accuracy)),
        ("Queue invariants", Some(Duration::from_secs(5)), Box::new(c3_queue_invariants)),
        ("Mean-rate stability", Some(Duration::from_secs(60)), Box::new(|| shared(c4_mean_rate_stability))),
        ("Selection optimality", Some(Duration::from_secs(5)), Box::new(c5_selection_optimality)),
        ("Zero-queue reduction", Some(Duration::from_secs(5)), Box::new(c6_zero_queue_reduction)),
        ("Directional ordering, scenario 1", Some(Duration::from_secs(600)), Box::new(c7_directional_table)),
        ("Minority-client behaviour, scenario 2", Some(Duration::from_secs(600)), Box::new(c8_minority_behaviour)),
        ("Starvation-freedom", None, Box::new(|| shared(c9_starvation_freedom))),
        ("Determinism", None, Box::new(c10_determinism)),
        ("JFI unit extremes", None, Box::new(c11_jfi_extremes)),
        ("Gradient check", None, Box::new(c12_gradient_check)),
    ];
    let mut failed = 0;
    for (k, (name, limit, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = check();
        let elapsed = start.elapsed();
        let in_time = limit.is_none_or(|l| elapsed <= l);
        let pass = out.pass && in_time;
        if !pass {
            failed += 1;
        }
        let budget = limit.map(|l| format!(" / {}s", l.as_secs())).unwrap_or_default();
        println!(
            "{} [{:>2}] {name}: {} ({:.2}s{budget}{})",
            if pass { "PASS" } else { "FAIL" },
            k + 1,
            out.detail,
            elapsed.as_secs_f64(),
            if in_time { "" } else { ", over time budget" }
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
