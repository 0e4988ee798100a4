//! End-to-end behaviour of training sessions.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::sync::Arc;

use dcoach::dcoach::{FeedbackQueue, Variant};
use dcoach::env::{PointReachConfig, TrackDriveConfig};
use dcoach::nn::Checkpoint;
use dcoach::session::{
    eval_policy, read_feedback_log, replay_session, run_ablation, run_session, AggregateBand, Algorithm, Axis,
    CurvePoint, EnvConfig, HumanTeacher, Learner, LearningCurve, Session, SessionConfig, SessionEnv,
    Teacher, FEEDBACK_LOG_FILE, FINAL_CHECKPOINT,
};
use dcoach::teachers::FeedbackSignal;

fn small(seed: u64) -> SessionConfig {
    SessionConfig {
        env: EnvConfig::PointReach(PointReachConfig {
            image_size: 16,
            ..PointReachConfig::default()
        }),
        seed,
        step_budget: 300,
        eval_every: 100,
        eval_episodes: 1,
        ..SessionConfig::default()
    }
}

fn without_clock(curve: &LearningCurve) -> Vec<(u64, u64, u64)> {
    curve
        .points
        .iter()
        .map(|p| (p.env_steps, p.episode_return.to_bits(), p.teacher_labels))
        .collect()
}

#[test]
fn same_config_and_seed_reproduce_the_curve() {
    let (a, _) = run_session(small(4), "a", None).unwrap();
    let (b, _) = run_session(small(4), "b", None).unwrap();
    assert_eq!(a.curve().points.len(), 3);
    assert_eq!(without_clock(a.curve()), without_clock(b.curve()));
    assert_eq!(a.checkpoint().unwrap(), b.checkpoint().unwrap());

    let (c, _) = run_session(small(5), "c", None).unwrap();
    assert_ne!(a.checkpoint().unwrap(), c.checkpoint().unwrap());
}

#[test]
fn track_sessions_are_deterministic_too() {
    let config = SessionConfig {
        step_budget: 120,
        eval_every: 60,
        eval_episodes: 1,
        seed: 9,
        ..SessionConfig::default()
    };
    let (a, sa) = run_session(config.clone(), "a", None).unwrap();
    let (b, sb) = run_session(config, "b", None).unwrap();
    assert_eq!(without_clock(a.curve()), without_clock(b.curve()));
    assert_eq!(sa.corrections, sb.corrections);
}

#[test]
fn zero_budget_yields_an_empty_curve_and_a_final_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let config = SessionConfig {
        step_budget: 0,
        ..small(1)
    };
    let (session, summary) = run_session(config, "empty", Some(dir.path())).unwrap();
    assert!(session.curve().points.is_empty());
    assert_eq!(summary.env_steps, 0);
    assert_eq!(summary.final_return, None);
    let saved = Checkpoint::load(&dir.path().join(FINAL_CHECKPOINT)).unwrap();
    assert_eq!(saved, session.checkpoint().unwrap());
}

/// Stands in for a console: pushes advice into the shared queue right before
/// the session reads it, some of it deliberately late.
struct ScriptedConsole {
    inner: HumanTeacher,
    script: BTreeMap<u64, (Vec<i8>, u64)>,
}

impl Teacher for ScriptedConsole {
    fn feedback(
        &mut self,
        t: u64,
        env: &SessionEnv,
        action: &[f64],
    ) -> dcoach::Result<Option<FeedbackSignal>> {
        if let Some((h, lag)) = self.script.get(&t) {
            self.inner.queue().push(FeedbackSignal::new(h.clone(), t.saturating_sub(*lag))?);
        }
        self.inner.feedback(t, env, action)
    }
}

#[test]
fn human_session_log_replays_to_identical_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let config = small(8);
    let mut script = BTreeMap::new();
    for t in (0..300u64).step_by(7) {
        let h = vec![if t % 2 == 0 { 1 } else { -1 }, if t % 3 == 0 { 0 } else { 1 }];
        // Every fifth press arrives two steps late and must be discarded.
        let lag = if t % 5 == 0 { 2 } else { t % 2 };
        script.insert(t, (h, lag));
    }
    let mut console = ScriptedConsole {
        inner: HumanTeacher::new(Arc::new(FeedbackQueue::new())),
        script,
    };
    let mut session = Session::new(config.clone(), "human", Some(dir.path())).unwrap();
    session.run(&mut console).unwrap();
    assert!(console.inner.stale() > 0);
    let original = session.checkpoint().unwrap();

    let entries = read_feedback_log(BufReader::new(File::open(dir.path().join(FEEDBACK_LOG_FILE)).unwrap())).unwrap();
    assert_eq!(entries.len() as u64, session.corrections());
    assert!(entries.iter().all(|e| e.y_label.is_some()));
    let replayed = replay_session(config, entries, 300, None).unwrap();
    assert_eq!(replayed.checkpoint().unwrap(), original);
}

#[test]
fn replay_rejects_a_tampered_log() {
    let dir = tempfile::tempdir().unwrap();
    let (_, summary) = run_session(small(3), "sim", Some(dir.path())).unwrap();
    assert!(summary.corrections > 0);
    let mut entries =
        read_feedback_log(BufReader::new(File::open(dir.path().join(FEEDBACK_LOG_FILE)).unwrap())).unwrap();
    let label = entries[0].y_label.as_mut().unwrap();
    label[0] = f64::from_bits(label[0].to_bits() ^ 1);
    assert!(replay_session(small(3), entries, 300, None).is_err());
}

#[test]
fn untrained_policies_leave_the_track_quickly() {
    let config = SessionConfig::default();
    let episodes = 20u64;
    let mut off_road_fast = 0;
    for seed in 0..episodes {
        let session = Session::new(SessionConfig { seed, ..config.clone() }, "init", None).unwrap();
        let mut env = SessionEnv::new(&config.env).unwrap();
        let report = eval_policy(session.learner(), &mut env, 1, 10_000 + seed).unwrap();
        if report.off_road == 1 && report.lengths[0] < 1000 {
            off_road_fast += 1;
        }
    }
    assert!(
        off_road_fast * 10 >= episodes * 9,
        "{off_road_fast}/{episodes} random policies left the track within 1000 steps"
    );
}

#[test]
fn evaluation_needs_episodes() {
    let config = small(0);
    let session = Session::new(config.clone(), "x", None).unwrap();
    let mut env = SessionEnv::new(&config.env).unwrap();
    assert!(eval_policy(session.learner(), &mut env, 0, 0).is_err());
    assert!(Session::new(SessionConfig { eval_episodes: 0, ..config }, "x", None).is_err());
}

#[test]
fn a_single_run_gives_a_degenerate_band() {
    let mut curve = LearningCurve::new("r", "A", 0);
    for (i, r) in [1.0, 3.0, 2.0].into_iter().enumerate() {
        curve
            .push(CurvePoint {
                wall_clock_s: i as f64,
                env_steps: i as u64 * 10,
                episode_return: r,
                teacher_labels: 0,
            })
            .unwrap();
    }
    let band = AggregateBand::from_curves(&[&curve], Axis::EnvSteps, 5).unwrap();
    assert_eq!(band.runs, 1);
    for p in &band.points {
        assert_eq!(p.lower, p.median);
        assert_eq!(p.median, p.upper);
    }
}

#[test]
fn labels_do_not_change_results() {
    let config = SessionConfig {
        step_budget: 200,
        ..small(0)
    };
    let reports = run_ablation(
        &config,
        &[("first".into(), Variant::B), ("second".into(), Variant::B)],
        &[0, 1],
        None,
    )
    .unwrap();
    assert_eq!(reports[0].label, "first");
    assert_eq!(reports[0].by_steps, reports[1].by_steps);
    let clockless = |r: &dcoach::session::VariantReport| r.curves().iter().map(|c| without_clock(c)).collect::<Vec<_>>();
    assert_eq!(clockless(&reports[0]), clockless(&reports[1]));
}

#[test]
fn basic_mode_keeps_the_pretrained_encoder() {
    let config = SessionConfig {
        algorithm: Algorithm::DcoachBasic,
        step_budget: 200,
        basic: dcoach::session::BasicParams {
            demo_steps: 60,
            pretrain_epochs: 2,
            ..Default::default()
        },
        ..small(2)
    };
    let mut teacher = dcoach::session::simulated_teacher(&config);
    let mut session = Session::new(config, "basic", None).unwrap();
    let encoder = match session.learner() {
        Learner::DCoach(agent) => {
            assert!(agent.net.is_frozen());
            agent.net.encoder_fingerprint()
        }
        Learner::Coach(_) => unreachable!(),
    };
    let summary = session.run(&mut teacher).unwrap();
    assert!(summary.corrections > 0);
    assert_eq!(summary.demonstration_steps, 60);
    assert!(summary.teacher_labels >= 60 + summary.corrections);
    let pretrain = summary.pretrain.unwrap();
    assert!(pretrain.final_loss < pretrain.initial_loss);
    match session.learner() {
        Learner::DCoach(agent) => assert_eq!(agent.net.encoder_fingerprint(), encoder),
        Learner::Coach(_) => unreachable!(),
    }
}

#[test]
fn coach_classic_runs_on_point_reach_only() {
    let reach = SessionConfig {
        algorithm: Algorithm::CoachClassic,
        ..small(0)
    };
    let (_, summary) = run_session(reach, "coach", None).unwrap();
    assert_eq!(summary.env_steps, 300);
    let track = SessionConfig {
        algorithm: Algorithm::CoachClassic,
        env: EnvConfig::TrackDrive(TrackDriveConfig::default()),
        ..small(0)
    };
    assert!(Session::new(track, "coach", None).is_err());
}
