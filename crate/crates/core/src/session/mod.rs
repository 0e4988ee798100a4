//! Training sessions: configuration, the step loop shared by simulated,
//! live and replayed teachers, evaluation, learning curves and the ablation
//! harness.

mod ablation;
mod clock;
mod config;
mod curve;
mod feedback_log;
mod policy;
mod runner;
mod teacher;

pub use ablation::{run_ablation, RunFailure, RunOutcome, VariantReport, BAND_BINS};
pub use clock::ActiveClock;
pub use config::{Algorithm, BasicParams, CoachParams, DCoachParams, EnvConfig, SessionConfig};
pub use curve::{AggregateBand, Axis, BandPoint, CurvePoint, CurveWriter, LearningCurve, BAND_FRACTION};
pub use feedback_log::{read_feedback_log, FeedbackLogEntry, FeedbackLogWriter};
pub use policy::{eval_policy, Controller, EvalReport, Learner, OracleController, SessionEnv};
pub use runner::{
    eval_seed, replay_session, run_session, simulated_teacher, PretrainSummary, Session, SessionSummary, StepRecord,
    CHECKPOINT_DIR, CONFIG_FILE, CURVE_FILE, FEEDBACK_LOG_FILE, FINAL_CHECKPOINT, SUMMARY_FILE,
};
pub use teacher::{is_fresh, HumanTeacher, ReplayTeacher, SimulatedTeacher, Teacher};
