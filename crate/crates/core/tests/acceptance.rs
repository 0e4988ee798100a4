//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use dcoach::coach::{CoachConfig, CoachLearner, RbfFeatureMap};
use dcoach::dcoach::{
    batch_update, dcoach_step, Architecture, BatchOutcome, BufferConfig, CorrectionRecord, DCoachConfig,
    FeedbackQueue, JointNetwork, Mode, ReplayBuffer, Variant,
};
use dcoach::env::{ActionBounds, Environment, Observation, PointReach, PointReachConfig};
use dcoach::fidelity::gradient_suite;
use dcoach::session::{
    eval_policy, read_feedback_log, replay_session, run_ablation, run_session, Algorithm, Axis, EnvConfig,
    HumanTeacher, LearningCurve, OracleController, Session, SessionConfig, SessionEnv, Teacher, VariantReport,
    FEEDBACK_LOG_FILE,
};
use dcoach::stats::{mean, median};
use dcoach::teachers::{decide_feedback, feedback_probability, FeedbackSignal, ReachOracle, SimulatedTeacherConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 10;
const BUDGET: u64 = 2000;
const EVAL_EVERY: u64 = 100;

struct Verdict {
    passed: bool,
    detail: String,
}

impl Verdict {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

fn report(name: &str, started: Instant, verdict: Verdict) -> bool {
    println!(
        "{} {name}: {} [{:.1}s]",
        if verdict.passed { "PASS" } else { "FAIL" },
        verdict.detail,
        started.elapsed().as_secs_f64()
    );
    verdict.passed
}

fn gradient_fidelity() -> Verdict {
    let (trials, tolerance) = (100, 1e-4);
    let results = gradient_suite(trials, 0, tolerance);
    let failing: Vec<&str> = results.iter().filter(|r| !r.passed(trials)).map(|r| r.subject).collect();
    let worst = results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    Verdict::new(
        failing.is_empty(),
        format!(
            "{} subjects x {trials} trials, worst relative error {worst:.2e} (tolerance {tolerance:.0e}){}",
            results.len(),
            if failing.is_empty() { String::new() } else { format!(", failing: {}", failing.join(", ")) }
        ),
    )
}

const SIDE: usize = 8;

fn image(rng: &mut ChaCha8Rng) -> Observation {
    Observation::new(SIDE, SIDE, (0..SIDE * SIDE).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

fn network(rng: &mut ChaCha8Rng, with_decoder: bool) -> JointNetwork {
    let arch = Architecture::standard(SIDE, 2).unwrap();
    JointNetwork::new(&arch, (SIDE, SIDE), ActionBounds::symmetric(2, 1.0), with_decoder, rng).unwrap()
}

fn mechanics_config(variant: Variant, epsilon: f64) -> DCoachConfig {
    DCoachConfig {
        e: vec![0.4, 0.25],
        epsilon,
        policy_lr: 0.05,
        ae_lr: 0.05,
        mode: Mode::Enhanced,
        variant,
        buffer: BufferConfig {
            capacity: 12,
            min_size: 4,
            sample_size: 3,
            update_interval: 5,
        },
    }
}

/// Drives the update rule through random scenarios and checks each
/// mechanical rule against a hand-computed expectation.
fn algorithm_mechanics() -> Verdict {
    let scenarios = 40u64;
    let mut violations: BTreeMap<&str, u32> = BTreeMap::new();
    let mut flag = |ok: bool, rule: &'static str| {
        if !ok {
            *violations.entry(rule).or_default() += 1;
        }
    };
    let mut double_updates = 0;
    for seed in 0..scenarios {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let variant = [Variant::A, Variant::B, Variant::C][seed as usize % 3];
        let epsilon = [0.02, 0.0, 1e9][rng.gen_range(0..3)];
        let cfg = mechanics_config(variant, epsilon);
        let mut net = network(&mut rng, variant.uses_decoder());
        let mut buffer = ReplayBuffer::new(cfg.buffer).unwrap();
        let mut sampler = ChaCha8Rng::seed_from_u64(seed + 100);
        let mut appended: Vec<Vec<f64>> = Vec::new();

        for t in 0..60u64 {
            let obs = image(&mut rng);
            let action: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let h: Vec<i8> = (0..2).map(|_| rng.gen_range(-1..=1)).collect();
            let advised = rng.gen_bool(0.4) && h.iter().any(|&v| v != 0);
            let fb = FeedbackSignal::new(h.clone(), t).unwrap();
            let on_interval = t % cfg.buffer.update_interval == 0;
            let len_before = buffer.len();
            let was_frozen = net.is_frozen();
            let encoder_before = net.encoder_fingerprint();

            let report = dcoach_step(&mut net, &mut buffer, &obs, &action, advised.then_some(&fb), t, &cfg, &mut sampler)
                .unwrap();

            if advised {
                let want: Vec<f64> =
                    (0..2).map(|i| (action[i] + h[i] as f64 * cfg.e[i]).clamp(-1.0, 1.0)).collect();
                flag(report.y_label.as_ref() == Some(&want), "label is clip(action + h*e)");
                flag(report.feedback_batch.is_some(), "feedback triggers a batch update");
                appended.push(want);
            } else {
                flag(report.y_label.is_none() && report.feedback_batch.is_none(), "silence learns nothing");
            }
            flag(report.interval_batch.is_some() == on_interval, "interval batch fires on t % b == 0");
            if advised && on_interval {
                double_updates += 1;
            }

            // Capacity and FIFO: the buffer holds exactly the newest labels.
            let kept = appended.len().min(cfg.buffer.capacity);
            let newest: Vec<&Vec<f64>> = appended[appended.len() - kept..].iter().collect();
            let held: Vec<&Vec<f64>> = buffer.records().map(|r| &r.y_label).collect();
            flag(held == newest, "buffer keeps the newest K labels in order");

            // Batches below k do nothing; only batches can touch the encoder.
            // The feedback batch runs before the new record is appended.
            let k = cfg.buffer.min_size;
            if let Some(outcome) = report.feedback_batch {
                flag(outcome.ran() == (len_before >= k), "batch update is a no-op below k");
            }
            if let Some(outcome) = report.interval_batch {
                flag(outcome.ran() == (buffer.len() >= k), "batch update is a no-op below k");
            }
            let any_ae = [report.feedback_batch, report.interval_batch]
                .into_iter()
                .flatten()
                .any(|o| matches!(o, BatchOutcome::Ran { ae_updated: true, .. }));
            if was_frozen && !any_ae {
                flag(net.encoder_fingerprint() == encoder_before, "frozen encoder is never changed");
            }
            if variant == Variant::C {
                flag(!net.is_frozen(), "variant C never freezes");
            }
        }

        // Gating against a hand-built buffer: a zero threshold always
        // unfreezes and trains, an unreachable one always freezes.
        if variant.uses_decoder() {
            let mut full = ReplayBuffer::new(cfg.buffer).unwrap();
            for _ in 0..cfg.buffer.min_size {
                full.append_trim(CorrectionRecord {
                    state: image(&mut rng),
                    y_label: vec![0.1, -0.1],
                });
            }
            for (eps, should_train) in [(0.0, true), (1e9, false)] {
                let mut probe = net.clone();
                probe.set_frozen(!should_train);
                let before = probe.encoder_fingerprint();
                let gated = DCoachConfig {
                    epsilon: eps,
                    variant: Variant::A,
                    ..cfg.clone()
                };
                let out = batch_update(&mut probe, &full, &gated, &mut sampler).unwrap();
                let trained = matches!(out, BatchOutcome::Ran { ae_updated: true, .. });
                flag(trained == should_train, "error above epsilon trains the autoencoder");
                flag(probe.is_frozen() != should_train, "freeze flag follows the threshold test");
                flag((probe.encoder_fingerprint() != before) == should_train, "encoder moves only when unfrozen");
            }
        }
    }
    let detail = if violations.is_empty() {
        format!("{scenarios} scenarios x 60 steps, {double_updates} steps ran both batch updates")
    } else {
        violations.iter().map(|(k, v)| format!("{k} violated {v}x")).collect::<Vec<_>>().join("; ")
    };
    Verdict::new(violations.is_empty() && double_updates > 0, detail)
}

fn teacher_statistics() -> Verdict {
    let cfg = SimulatedTeacherConfig::new(0.6, 0.000015, vec![0.05, 0.05]).unwrap();
    let steps = 10_000u64;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut env_rng = ChaCha8Rng::seed_from_u64(7);
    let (mut advised, mut expected, mut variance) = (0u64, 0.0, 0.0);
    let mut bad_signs = 0;
    for t in 0..steps {
        let teacher: Vec<f64> = (0..2).map(|_| env_rng.gen_range(-1.0..1.0)).collect();
        let agent: Vec<f64> = (0..2).map(|_| env_rng.gen_range(-1.0..1.0)).collect();
        let p = feedback_probability(t, &cfg);
        expected += p;
        variance += p * (1.0 - p);
        if let Some(fb) = decide_feedback(t, &teacher, &agent, &mut rng, &cfg) {
            advised += 1;
            bad_signs += fb.h.iter().filter(|h| !matches!(h, -1..=1)).count();
        }
    }
    let sigma = variance.sqrt();
    let z = (advised as f64 - expected) / sigma;
    Verdict::new(
        z.abs() <= 3.0 && bad_signs == 0,
        format!("{advised} advised steps of {steps}, expected {expected:.1} (z = {z:+.2}), {bad_signs} out-of-range signs"),
    )
}

fn track_base() -> SessionConfig {
    SessionConfig {
        step_budget: BUDGET,
        eval_every: EVAL_EVERY,
        eval_episodes: 3,
        ..SessionConfig::default()
    }
}

fn oracle_return(config: &SessionConfig) -> f64 {
    let mut env = SessionEnv::new(&config.env).unwrap();
    eval_policy(&OracleController::from_config(config), &mut env, 20, 1_000_000).unwrap().mean()
}

/// Median return across runs at every evaluation step (runs share the grid).
fn median_curve(curves: &[&LearningCurve]) -> Vec<(u64, f64)> {
    let steps: Vec<u64> = curves[0].points.iter().map(|p| p.env_steps).collect();
    steps
        .iter()
        .map(|&s| {
            let values: Vec<f64> = curves.iter().filter_map(|c| c.value_at(Axis::EnvSteps, s as f64)).collect();
            (s, median(&values).unwrap())
        })
        .collect()
}

fn median_at(curves: &[&LearningCurve], step: u64) -> f64 {
    let values: Vec<f64> = curves.iter().map(|c| c.value_at(Axis::EnvSteps, step as f64).unwrap()).collect();
    median(&values).unwrap()
}

fn first_step_reaching(curve: &[(u64, f64)], threshold: f64) -> Option<u64> {
    curve.iter().find(|(_, r)| *r >= threshold).map(|(s, _)| *s)
}

fn ablation_ordering(reports: &[VariantReport], oracle: f64) -> Verdict {
    let a = reports[0].curves();
    let c = reports[1].curves();
    if a.len() < SEEDS as usize || c.len() < SEEDS as usize {
        return Verdict::new(false, "runs failed; see the failure list");
    }
    let half = BUDGET / 2;
    let (a_half, c_half) = (median_at(&a, half), median_at(&c, half));
    let a_final = median_at(&a, BUDGET);
    let target = 0.95 * a_final;
    let a_steps = first_step_reaching(&median_curve(&a), target);
    let c_steps = first_step_reaching(&median_curve(&c), target);
    let budget_ok = a_final >= 0.8 * oracle;
    let half_ok = c_half < 0.5 * a_half;
    let steps_ok = match (a_steps, c_steps) {
        (Some(sa), Some(sc)) => sc >= 2 * sa,
        // C never got there within the budget: at least B steps, which is
        // enough only if A needed no more than half of it.
        (Some(sa), None) => BUDGET >= 2 * sa,
        _ => false,
    };
    let show = |s: Option<u64>| s.map_or(format!(">{BUDGET}"), |s| s.to_string());
    Verdict::new(
        budget_ok && half_ok && steps_ok,
        format!(
            "A final {a_final:.0} ({:.0}% of oracle {oracle:.0}); at B/2 C {c_half:.0} vs A {a_half:.0} \
             (ratio {:.2}, need < 0.50); steps to {target:.0}: A {} C {} (need C >= 2x A)",
            100.0 * a_final / oracle,
            c_half / a_half,
            show(a_steps),
            show(c_steps),
        ),
    )
}

fn labels_to_reach(curve: &LearningCurve, threshold: f64) -> f64 {
    curve.first_reaching(threshold).map_or(f64::INFINITY, |p| p.teacher_labels as f64)
}

fn basic_vs_enhanced(enhanced: &VariantReport, oracle: f64) -> Verdict {
    let threshold = 0.8 * oracle;
    let basic_config = SessionConfig {
        algorithm: Algorithm::DcoachBasic,
        ..track_base()
    };
    let mut basic = Vec::new();
    for seed in 0..SEEDS {
        let config = SessionConfig {
            seed,
            ..basic_config.clone()
        };
        match run_session(config, &format!("basic-seed{seed}"), None) {
            Ok((session, _)) => basic.push(labels_to_reach(session.curve(), threshold)),
            Err(e) => return Verdict::new(false, format!("basic run {seed} failed: {e}")),
        }
    }
    let enhanced: Vec<f64> = enhanced.runs.iter().map(|r| labels_to_reach(&r.curve, threshold)).collect();
    let (mb, me) = (median(&basic).unwrap(), median(&enhanced).unwrap());
    let reached = |v: &[f64]| v.iter().filter(|x| x.is_finite()).count();
    let saving = 1.0 - me / mb;
    Verdict::new(
        me.is_finite() && me <= 0.7 * mb,
        format!(
            "median labels to return {threshold:.0}: enhanced {me} ({}/{} runs reached), basic {mb} ({}/{} reached); \
             saving {:.0}% (need >= 30%)",
            reached(&enhanced),
            enhanced.len(),
            reached(&basic),
            basic.len(),
            100.0 * saving
        ),
    )
}

struct ScriptedConsole {
    inner: HumanTeacher,
    rng: ChaCha8Rng,
}

impl Teacher for ScriptedConsole {
    fn feedback(&mut self, t: u64, env: &SessionEnv, action: &[f64]) -> dcoach::Result<Option<FeedbackSignal>> {
        if self.rng.gen_bool(0.15) {
            let h = vec![self.rng.gen_range(-1..=1), self.rng.gen_range(-1..=1)];
            let lag = self.rng.gen_range(0..3);
            self.inner.queue().push(FeedbackSignal::new(h, t.saturating_sub(lag))?);
        }
        self.inner.feedback(t, env, action)
    }
}

fn determinism_and_replay() -> Verdict {
    let config = SessionConfig {
        env: EnvConfig::PointReach(PointReachConfig {
            image_size: 16,
            ..PointReachConfig::default()
        }),
        step_budget: 400,
        eval_every: 100,
        eval_episodes: 2,
        seed: 11,
        ..SessionConfig::default()
    };
    let clockless = |c: &LearningCurve| {
        c.points.iter().map(|p| (p.env_steps, p.episode_return.to_bits(), p.teacher_labels)).collect::<Vec<_>>()
    };
    let (a, _) = run_session(config.clone(), "a", None).unwrap();
    let (b, _) = run_session(config.clone(), "b", None).unwrap();
    let curves_match = clockless(a.curve()) == clockless(b.curve()) && !a.curve().points.is_empty();
    let params_match = a.checkpoint().unwrap() == b.checkpoint().unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut console = ScriptedConsole {
        inner: HumanTeacher::new(Arc::new(FeedbackQueue::new())),
        rng: ChaCha8Rng::seed_from_u64(99),
    };
    let mut human = Session::new(config.clone(), "human", Some(dir.path())).unwrap();
    human.run(&mut console).unwrap();
    let file = std::fs::File::open(dir.path().join(FEEDBACK_LOG_FILE)).unwrap();
    let entries = read_feedback_log(std::io::BufReader::new(file)).unwrap();
    let logged = entries.len();
    let replay_ok = match replay_session(config.clone(), entries, config.step_budget, None) {
        Ok(replayed) => replayed.checkpoint().unwrap() == human.checkpoint().unwrap(),
        Err(_) => false,
    };
    Verdict::new(
        curves_match && params_match && replay_ok && logged > 0,
        format!(
            "simulated curves identical: {curves_match}, parameters identical: {params_match}; \
             human log of {logged} corrections ({} stale dropped) replays bit-exactly: {replay_ok}",
            console.inner.stale()
        ),
    )
}

/// Classic COACH on a one-dimensional reaching task: mean absolute
/// difference to the oracle action over fixed evaluation episodes.
fn coach_convergence() -> Verdict {
    let (e, beta, deadband, grid) = (0.03, 0.02, 0.01, 21);
    let evaluations = 100;
    let cadence = 100u64;
    let oracle = ReachOracle::default();
    let env_config = PointReachConfig {
        dims: 1,
        ..PointReachConfig::default()
    };
    let policy_error = |learner: &CoachLearner| {
        let (mut total, mut count) = (0.0, 0.0);
        for episode in 0..20 {
            let mut env = PointReach::new(env_config.clone()).unwrap();
            env.reset(1_000_000 + episode);
            loop {
                let s = env.state_vector();
                let a = learner.act(&s).unwrap();
                total += (a[0] - oracle.act_on_state(&s)[0]).abs();
                count += 1.0;
                if env.step(&a).unwrap().done {
                    break;
                }
            }
        }
        total / count
    };

    let mut curves: Vec<Vec<f64>> = Vec::new();
    for seed in 0..SEEDS {
        let features = RbfFeatureMap::grid(&[0.0, 0.0], &[1.0, 1.0], &[grid, grid]).unwrap();
        let mut learner =
            CoachLearner::new(features, ActionBounds::symmetric(1, 1.0), CoachConfig { e: vec![e], beta }).unwrap();
        let teacher = SimulatedTeacherConfig::new(0.6, 0.000015, vec![deadband]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut env = PointReach::new(env_config.clone()).unwrap();
        let mut curve = vec![policy_error(&learner)];
        let mut t = 0u64;
        let mut episode = 0;
        while curve.len() <= evaluations {
            env.reset(seed * 1000 + episode);
            episode += 1;
            loop {
                let s = env.state_vector();
                let a = learner.act(&s).unwrap();
                if let Some(fb) = decide_feedback(t, &oracle.act_on_state(&s), &a, &mut rng, &teacher) {
                    if !fb.is_zero() {
                        learner.update(&s, &fb.h).unwrap();
                    }
                }
                t += 1;
                if t.is_multiple_of(cadence) {
                    curve.push(policy_error(&learner));
                    if curve.len() > evaluations {
                        break;
                    }
                }
                if env.step(&a).unwrap().done {
                    break;
                }
            }
        }
        curves.push(curve);
    }

    let smooth = |c: &[f64]| c[1..].chunks(10).map(mean).collect::<Vec<f64>>();
    let monotone = |c: &[f64]| c.windows(2).all(|w| w[1] <= w[0]);
    let averaged: Vec<f64> = (0..=evaluations).map(|i| mean(&curves.iter().map(|c| c[i]).collect::<Vec<_>>())).collect();
    let averaged_smooth = smooth(&averaged);
    let per_seed_monotone = curves.iter().filter(|c| monotone(&smooth(c))).count();
    let ratios: Vec<f64> = curves.iter().map(|c| c[evaluations] / c[0]).collect();
    let worst = ratios.iter().copied().fold(0.0, f64::max);
    Verdict::new(
        monotone(&averaged_smooth) && worst < 0.1,
        format!(
            "{SEEDS} seeds: seed-averaged error smoothed over windows of 10 {} ({:.3} -> {:.3}); \
             worst final/initial ratio {worst:.3} (need < 0.10); {per_seed_monotone}/{SEEDS} seeds individually monotone",
            if monotone(&averaged_smooth) { "decreases monotonically" } else { "is not monotone" },
            averaged_smooth[0],
            averaged_smooth[averaged_smooth.len() - 1],
        ),
    )
}

fn main() {
    let mut all = true;
    let mut run = |name: &str, f: &dyn Fn() -> Verdict| {
        let started = Instant::now();
        all &= report(name, started, f());
    };
    run("gradient fidelity", &gradient_fidelity);
    run("update-rule mechanics", &algorithm_mechanics);
    run("simulated-teacher statistics", &teacher_statistics);
    run("determinism and replay", &determinism_and_replay);
    run("classic COACH convergence", &coach_convergence);

    let base = track_base();
    let started = Instant::now();
    let oracle = oracle_return(&base);
    let seeds: Vec<u64> = (0..SEEDS).collect();
    let reports = run_ablation(&base, &[("A".into(), Variant::A), ("C".into(), Variant::C)], &seeds, None)
        .expect("ablation runs");
    all &= report("ablation ordering (A vs C)", started, ablation_ordering(&reports, oracle));
    let started = Instant::now();
    all &= report("basic vs enhanced teaching effort", started, basic_vs_enhanced(&reports[0], oracle));

    if !all {
        std::process::exit(1);
    }
}
