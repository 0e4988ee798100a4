use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::SessionConfig;
use super::curve::{AggregateBand, Axis, CurveWriter, LearningCurve};
use super::runner::{run_session, SessionSummary};
use crate::dcoach::Variant;
use crate::error::{Error, Result};

/// Grid resolution of aggregated bands.
pub const BAND_BINS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub seed: u64,
    pub curve: LearningCurve,
    pub summary: SessionSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    /// Label the runs were filed under.
    pub label: String,
    pub variant: Variant,
    pub runs: Vec<RunOutcome>,
    pub failures: Vec<RunFailure>,
    /// Bands over surviving runs; absent when every run failed.
    pub by_steps: Option<AggregateBand>,
    pub by_wall_clock: Option<AggregateBand>,
}

impl VariantReport {
    pub fn curves(&self) -> Vec<&LearningCurve> {
        self.runs.iter().map(|r| &r.curve).collect()
    }
}

/// Runs every `(variant, seed)` pair of `base` with the simulated teacher
/// and aggregates each variant into bands. Failed runs are recorded and left
/// out of the bands. Variants are given as `(label, variant)` so the same
/// variant can be filed twice.
pub fn run_ablation(
    base: &SessionConfig,
    variants: &[(String, Variant)],
    seeds: &[u64],
    out_dir: Option<&Path>,
) -> Result<Vec<VariantReport>> {
    if seeds.len() < 2 {
        return Err(Error::InvalidConfig("an ablation needs at least two seeds".into()));
    }
    let mut curves_out = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some(CurveWriter::new(File::create(dir.join("curves.csv"))?)?)
        }
        None => None,
    };
    let mut reports = Vec::with_capacity(variants.len());
    for (label, variant) in variants {
        let mut runs = Vec::new();
        let mut failures = Vec::new();
        for &seed in seeds {
            let config = SessionConfig {
                variant: *variant,
                seed,
                ..base.clone()
            };
            let run_id = format!("{label}-seed{seed}");
            let run_dir = out_dir.map(|d| d.join(&run_id));
            match run_session(config, &run_id, run_dir.as_deref()) {
                Ok((session, summary)) => {
                    let mut curve = session.curve().clone();
                    curve.variant = label.clone();
                    if let Some(w) = &mut curves_out {
                        for p in &curve.points {
                            w.write(&curve, p)?;
                        }
                    }
                    runs.push(RunOutcome { seed, curve, summary });
                }
                Err(e) => {
                    log::warn!("ablation run {run_id} failed: {e}; aggregating over the remaining runs");
                    failures.push(RunFailure {
                        seed,
                        error: e.to_string(),
                    });
                }
            }
        }
        let band = |axis| -> Result<Option<AggregateBand>> {
            let curves: Vec<&LearningCurve> = runs.iter().map(|r| &r.curve).filter(|c| !c.points.is_empty()).collect();
            if curves.is_empty() {
                return Ok(None);
            }
            AggregateBand::from_curves(&curves, axis, BAND_BINS).map(Some)
        };
        let report = VariantReport {
            label: label.clone(),
            variant: *variant,
            by_steps: band(Axis::EnvSteps)?,
            by_wall_clock: band(Axis::WallClock)?,
            runs,
            failures,
        };
        if let Some(dir) = out_dir {
            if let Some(b) = &report.by_steps {
                b.write_csv(File::create(dir.join(format!("bands_{label}_steps.csv")))?)?;
            }
            if let Some(b) = &report.by_wall_clock {
                b.write_csv(File::create(dir.join(format!("bands_{label}_wall_clock.csv")))?)?;
            }
        }
        reports.push(report);
    }
    Ok(reports)
}
