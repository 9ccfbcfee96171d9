//! Acceptance run: every criterion prints one PASS/FAIL line with its
//! measured values and runtime. Exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use liveroom::config::ExperimentConfig;
use liveroom::eval::{conversion_rate, hits_at_k, mrr, RankedQuery};
use liveroom::harness::oracle::{
    chain_profile, run_choice_calibration, run_gradcheck, run_sarsa_oracle, run_slateq_oracle, CHAIN_GAMMA,
};
use liveroom::harness::{
    compare, generate_dataset, mean_policy_entropy, parse_log, read_log, run_eval, run_training, write_log,
    AgentKind, Checkpoint, Dataset,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn criterion_1() -> Outcome {
    let rows = run_gradcheck(&(0..10).collect::<Vec<_>>()).unwrap();
    let worst = rows.iter().map(|r| r.worst()).fold(0.0, f64::max);
    let critic = rows.iter().map(|r| r.critic).fold(0.0, f64::max);
    let policy = rows.iter().map(|r| r.policy).fold(0.0, f64::max);
    let dfm = rows.iter().map(|r| r.dfm).fold(0.0, f64::max);
    outcome(
        rows.len() == 10 && worst < 1e-4,
        format!("10 seeds, max rel err critic {critic:.2e} policy {policy:.2e} dfm {dfm:.2e} (< 1e-4)"),
    )
}

/// Q* of the two-round chain written out by hand: with no departure, round
/// two is the last, so its value is the immediate click probability.
fn chain_q_star() -> Vec<(Vec<u32>, Vec<f64>)> {
    let p = chain_profile();
    let click = |t: usize, counts: [u32; 2]| {
        logistic(p.base_utility[t] - p.satiation_rate * f64::from(counts[t]) - p.null_utility)
    };
    let last = |counts: [u32; 2]| [click(0, counts), click(1, counts)];
    let after = |a: usize| if a == 0 { [1, 0] } else { [0, 1] };
    let first: Vec<f64> = (0..2)
        .map(|a| {
            let next = last(after(a));
            click(a, [0, 0]) + CHAIN_GAMMA * next[0].max(next[1])
        })
        .collect();
    vec![
        (vec![0, 0], first),
        (vec![1, 0], last([1, 0]).to_vec()),
        (vec![0, 1], last([0, 1]).to_vec()),
    ]
}

fn criterion_2() -> Outcome {
    let report = run_sarsa_oracle(0, 2_500_000).unwrap();
    let hand = chain_q_star();
    let mut oracle_gap: f64 = 0.0;
    let mut hand_error: f64 = 0.0;
    let mut hand_greedy = true;
    for (state, q) in &hand {
        let Some((_, learned, exact)) = report.states.iter().find(|s| &s.0 == state) else {
            return outcome(false, format!("state {state:?} missing from the oracle report"));
        };
        for ((l, e), h) in learned.iter().zip(exact).zip(q) {
            oracle_gap = oracle_gap.max((e - h).abs());
            hand_error = hand_error.max((l - h).abs());
        }
        let argmax = |v: &[f64]| if v[1] > v[0] { 1 } else { 0 };
        hand_greedy &= argmax(learned) == argmax(q);
    }
    outcome(
        report.states.len() == 3
            && report.max_error <= 1e-3
            && hand_error <= 1e-3
            && oracle_gap < 1e-12
            && report.greedy_matches
            && hand_greedy,
        format!(
            "{} states, max |Q - Q*| {:.2e} (<= 1e-3), greedy matches {}",
            report.states.len(),
            report.max_error.max(hand_error),
            report.greedy_matches && hand_greedy
        ),
    )
}

fn criterion_3() -> Outcome {
    let r = run_slateq_oracle(0, 100_000, 50).unwrap();
    outcome(
        r.states.len() <= 4 && r.max_value_error <= 1e-2 && r.instances == 50 && r.exhaustive_matches == 50,
        format!(
            "{} states x {} rollouts, max |decomposed - MC| {:.2e} (<= 1e-2); exhaustive = brute force on {}/{}",
            r.states.len(),
            r.rollouts,
            r.max_value_error,
            r.exhaustive_matches,
            r.instances
        ),
    )
}

fn criterion_4() -> Outcome {
    let r = run_choice_calibration(0, 20, 100_000).unwrap();
    outcome(
        r.slates == 20 && r.max_total_variation < 0.01,
        format!("{} slates x {} samples, max TV {:.4} (< 0.01)", r.slates, r.samples, r.max_total_variation),
    )
}

/// Identical customers with identical fixed satiation.
fn fixed_satiation_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.env.store_utility_std = 0.0;
    c.env.user_utility_std = 0.0;
    c.env.satiation_std = 0.0;
    c.agent.hidden = vec![32, 32];
    c
}

fn criterion_5() -> Outcome {
    let mut c = fixed_satiation_config();
    let mut means = Vec::new();
    for alpha in [0.01, 0.1, 1.0] {
        c.agent.alpha = alpha;
        let mut total = 0.0;
        for seed in 0..5 {
            c.seed = seed;
            let trained = run_training(&c, AgentKind::Sac, None, 30_000, 1).unwrap();
            total += mean_policy_entropy(&c, &trained.agent, 500, 1).unwrap();
        }
        means.push(total / 5.0);
    }
    let floor = 0.5 * 8f64.ln();
    outcome(
        means[0] <= means[1] && means[1] <= means[2] && means[2] >= floor,
        format!(
            "mean entropy alpha 0.01/0.1/1.0 = {:.3}/{:.3}/{:.3}, floor at 1.0 {floor:.3}",
            means[0], means[1], means[2]
        ),
    )
}

/// Store-specific preferences and strong satiation.
fn heterogeneous_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.env.satiation_mean = 1.5;
    c.agent.gamma = 0.2;
    c.agent.hidden = vec![32, 32];
    c.agent.updates_per_tick = 2;
    c
}

fn criterion_6() -> Outcome {
    let mut c = heterogeneous_config();
    let (mut sac, mut dfm) = (Vec::new(), Vec::new());
    for seed in 0..5 {
        c.seed = seed;
        let data = generate_dataset(&c, 1).unwrap();
        let a = run_training(&c, AgentKind::Sac, None, 100_000, 1).unwrap();
        let b = run_training(&c, AgentKind::Dfm, Some(&data), 0, 1).unwrap();
        sac.push(run_eval(&c, &Checkpoint::new(&c, a.stats.env_steps, a.agent), &data, 1).unwrap());
        dfm.push(run_eval(&c, &Checkpoint::new(&c, 0, b.agent), &data, 1).unwrap());
    }
    let table = compare(&sac, &dfm).unwrap();
    let m = table.mean();
    outcome(
        table.rows.len() == 6 && m.delta.mrr > 0.0 && m.delta.hits_at_1 >= 0.0,
        format!(
            "5 seeds, MRR sac {:.4} vs dfm {:.4}, Hits@1 sac {:.2}% vs dfm {:.2}%",
            m.a.mrr,
            m.b.mrr,
            100.0 * m.a.hits_at_1,
            100.0 * m.b.hits_at_1
        ),
    )
}

fn ranked(ranks: &[Option<usize>]) -> Vec<RankedQuery> {
    ranks
        .iter()
        .enumerate()
        .map(|(i, &r)| RankedQuery::with_rank(i as u64, 10, r).unwrap())
        .collect()
}

fn criterion_7() -> Outcome {
    let mut fixtures = vec![
        mrr(&ranked(&[Some(1), Some(1), Some(1)])).unwrap() == 1.0,
        mrr(&ranked(&[Some(2)])).unwrap() == 0.5,
        mrr(&ranked(&[Some(1), Some(2), Some(4)])).unwrap() == (1.0 + 0.5 + 0.25) / 3.0,
        hits_at_k(&ranked(&[Some(3)]), 1).unwrap() == 0.0,
        hits_at_k(&ranked(&[Some(3)]), 3).unwrap() == 1.0,
        hits_at_k(&ranked(&[None, None]), 1).unwrap() == 0.0,
        hits_at_k(&ranked(&[Some(1), Some(5), Some(2), Some(9)]), 2).unwrap() == 0.5,
        conversion_rate(&[false; 5]).unwrap() == 0.0,
        conversion_rate(&[true; 5]).unwrap() == 1.0,
    ];
    let three_of_eight = [true, false, false, true, false, false, true, false];
    fixtures.push(conversion_rate(&three_of_eight).unwrap() == 0.375);
    fixtures.push(mrr(&[]).is_err() && hits_at_k(&ranked(&[Some(1)]), 0).is_err() && conversion_rate(&[]).is_err());
    let fixtures_ok = fixtures.iter().filter(|&&f| f).count();

    // Uniform random ranking: the relevant action's rank is uniform on 1..=8.
    let expected = (1..=8).map(|r| 1.0 / r as f64).sum::<f64>() / 8.0;
    let mut c = ExperimentConfig::default();
    c.seed = 11;
    c.harness.sessions = 80_000;
    c.harness.split_timestamp = 20_000;
    let data = generate_dataset(&c, 1).unwrap();
    let random = run_training(&c, AgentKind::Random, None, 0, 1).unwrap();
    let report = run_eval(&c, &Checkpoint::new(&c, 0, random.agent), &data, 1).unwrap();
    let random_ok = report.relevant_queries >= 10_000 && (report.mrr_on_relevant - expected).abs() <= 0.01;
    outcome(
        fixtures_ok == fixtures.len() && random_ok,
        format!(
            "fixtures {fixtures_ok}/{} exact; random MRR {:.4} vs {expected:.4} over {} relevant queries",
            fixtures.len(),
            report.mrr_on_relevant,
            report.relevant_queries
        ),
    )
}

fn determinism_config(seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.seed = seed;
    c.harness.sessions = 1500;
    c.harness.split_timestamp = 1200;
    c.agent.hidden = vec![16, 16];
    c
}

fn train_eval_json(c: &ExperimentConfig, kind: AgentKind, workers: usize) -> String {
    let data = generate_dataset(c, workers).unwrap();
    let trained = run_training(c, kind, Some(&data), 5_000, workers).unwrap();
    let checkpoint = Checkpoint::new(c, trained.stats.env_steps, trained.agent);
    // Through the on-disk form, as the CLI does.
    let checkpoint = Checkpoint::from_json(&checkpoint.to_json().unwrap()).unwrap();
    run_eval(c, &checkpoint, &data, workers).unwrap().to_json().unwrap()
}

fn criterion_8() -> Outcome {
    let mut failures = Vec::new();
    for kind in [AgentKind::Sac, AgentKind::Sarsa, AgentKind::Slateq, AgentKind::Dfm] {
        let c = determinism_config(7);
        let first = train_eval_json(&c, kind, 1);
        if train_eval_json(&c, kind, 1) != first {
            failures.push(format!("{kind} repeat"));
        }
        if train_eval_json(&c, kind, 32) != first {
            failures.push(format!("{kind} 32 workers"));
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "sac/sarsa/slateq/dfm reports byte-identical across repeats and 1 vs 32 workers".into()
        } else {
            format!("reports differ: {}", failures.join(", "))
        },
    )
}

fn criterion_9() -> Outcome {
    let mut c = ExperimentConfig::default();
    c.seed = 21;
    c.harness.sessions = 1;
    let mut data: Dataset = generate_dataset(&c, 1).unwrap();
    while data.records.len() < 10_000 {
        c.harness.sessions *= 2;
        data = generate_dataset(&c, 1).unwrap();
    }
    let records = &data.records[..10_000];
    let bad = records
        .iter()
        .filter(|r| {
            let plus_one = r.state.len() == r.next_state.len()
                && r.action < r.state.len()
                && r.state.iter().zip(&r.next_state).enumerate().all(|(i, (s, n))| {
                    *n == *s + u32::from(i == r.action)
                });
            let binary = r.reward == 0.0 || r.reward == 1.0;
            !(plus_one && binary && r.validate().is_ok())
        })
        .count();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.jsonl");
    write_log(&path, &data.header, records).unwrap();
    let (header, back) = read_log(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lossless = header == data.header && back == records;
    let path2 = dir.path().join("again.jsonl");
    write_log(&path2, &header, &back).unwrap();
    let stable = std::fs::read_to_string(&path2).unwrap() == text && parse_log(&text).unwrap().1 == back;
    outcome(
        bad == 0 && lossless && stable,
        format!("{} records, {bad} violate invariants, round-trip lossless {}", records.len(), lossless && stable),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, Duration, fn() -> Outcome); 9] = [
        ("gradient correctness", Duration::from_secs(30), criterion_1),
        ("SARSA matches dynamic programming", Duration::from_secs(10), criterion_2),
        ("slate decomposition", Duration::from_secs(60), criterion_3),
        ("choice-model calibration", Duration::from_secs(10), criterion_4),
        ("entropy grows with temperature", Duration::from_secs(600), criterion_5),
        ("SAC ranks above DFM", Duration::from_secs(1200), criterion_6),
        ("metric exactness", Duration::from_secs(600), criterion_7),
        ("determinism", Duration::from_secs(600), criterion_8),
        ("log integrity", Duration::from_secs(600), criterion_9),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|f| *f == n.to_string() || name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let pass = result.pass && elapsed <= *budget;
        if !pass {
            failed += 1;
        }
        println!(
            "[{}] criterion {n} {name}: {} ({:.1}s, budget {}s)",
            if pass { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
