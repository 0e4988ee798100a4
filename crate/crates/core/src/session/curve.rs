use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{percentile_band, Band};

/// Central fraction covered by aggregate bands (20th to 80th percentile).
pub const BAND_FRACTION: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Unpaused training time, evaluation excluded.
    pub wall_clock_s: f64,
    pub env_steps: u64,
    /// Mean return of the evaluation episodes.
    pub episode_return: f64,
    /// Teacher-labelled interactions so far: demonstration frames plus
    /// nonzero corrections.
    pub teacher_labels: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub run_id: String,
    pub variant: String,
    pub seed: u64,
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    pub fn new(run_id: impl Into<String>, variant: impl Into<String>, seed: u64) -> Self {
        Self {
            run_id: run_id.into(),
            variant: variant.into(),
            seed,
            points: Vec::new(),
        }
    }

    /// Appends a point; both time axes must strictly increase.
    pub fn push(&mut self, point: CurvePoint) -> Result<()> {
        if let Some(last) = self.points.last() {
            if !(point.wall_clock_s > last.wall_clock_s) || point.env_steps <= last.env_steps {
                return Err(Error::Contract(format!(
                    "curve points must advance on both axes: {last:?} then {point:?}"
                )));
            }
        }
        self.points.push(point);
        Ok(())
    }

    pub fn last(&self) -> Option<&CurvePoint> {
        self.points.last()
    }

    /// Linear interpolation of the return at `x` on `axis`; `None` outside
    /// the recorded range.
    pub fn value_at(&self, axis: Axis, x: f64) -> Option<f64> {
        let pts = &self.points;
        let first = axis.of(pts.first()?);
        let last = axis.of(pts.last()?);
        if x < first || x > last {
            return None;
        }
        let i = pts.partition_point(|p| axis.of(p) < x);
        if i == 0 {
            return Some(pts[0].episode_return);
        }
        let (a, b) = (&pts[i - 1], &pts[i]);
        let (xa, xb) = (axis.of(a), axis.of(b));
        let w = (x - xa) / (xb - xa);
        Some(a.episode_return + w * (b.episode_return - a.episode_return))
    }

    /// First point whose return reaches `threshold`.
    pub fn first_reaching(&self, threshold: f64) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.episode_return >= threshold)
    }
}

/// Time axis used to align curves from different runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    WallClock,
    EnvSteps,
}

impl Axis {
    pub fn of(self, p: &CurvePoint) -> f64 {
        match self {
            Axis::WallClock => p.wall_clock_s,
            Axis::EnvSteps => p.env_steps as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub bin_time: f64,
    pub lower: f64,
    pub median: f64,
    pub upper: f64,
}

/// Percentile band of several runs on a common grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateBand {
    pub axis: Axis,
    pub runs: usize,
    pub points: Vec<BandPoint>,
}

impl AggregateBand {
    /// Interpolates every curve onto `bins` evenly spaced grid points spanning
    /// the range all curves cover, then takes the central band at each.
    pub fn from_curves(curves: &[&LearningCurve], axis: Axis, bins: usize) -> Result<Self> {
        if curves.is_empty() || curves.iter().any(|c| c.points.is_empty()) {
            return Err(Error::InvalidConfig("aggregation needs non-empty curves".into()));
        }
        if bins == 0 {
            return Err(Error::InvalidConfig("aggregation needs at least one bin".into()));
        }
        let start = curves
            .iter()
            .map(|c| axis.of(&c.points[0]))
            .fold(f64::NEG_INFINITY, f64::max);
        let end = curves
            .iter()
            .map(|c| axis.of(c.last().unwrap()))
            .fold(f64::INFINITY, f64::min);
        if start > end {
            return Err(Error::InvalidConfig("curves share no common time range".into()));
        }
        let grid: Vec<f64> = if bins == 1 || start == end {
            vec![end]
        } else {
            (0..bins)
                .map(|i| match i {
                    i if i + 1 == bins => end,
                    i => (start + (end - start) * i as f64 / (bins - 1) as f64).min(end),
                })
                .collect()
        };
        let points = grid
            .into_iter()
            .map(|x| {
                let values: Vec<f64> = curves.iter().map(|c| c.value_at(axis, x).unwrap()).collect();
                let Band { lower, median, upper } = percentile_band(&values, BAND_FRACTION)?;
                Ok(BandPoint {
                    bin_time: x,
                    lower,
                    median,
                    upper,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            axis,
            runs: curves.len(),
            points,
        })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["bin_time", "lower", "median", "upper"])?;
        for p in &self.points {
            out.serialize((p.bin_time, p.lower, p.median, p.upper))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Incremental writer for the per-run curve CSV.
pub struct CurveWriter<W: Write> {
    out: csv::Writer<W>,
}

impl<W: Write> CurveWriter<W> {
    pub fn new(w: W) -> Result<Self> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["run_id", "variant", "seed", "wall_clock_s", "env_steps", "return"])?;
        out.flush()?;
        Ok(Self { out })
    }

    pub fn write(&mut self, curve: &LearningCurve, point: &CurvePoint) -> Result<()> {
        self.out.serialize((
            &curve.run_id,
            &curve.variant,
            curve.seed,
            point.wall_clock_s,
            point.env_steps,
            point.episode_return,
        ))?;
        self.out.flush()?;
        Ok(())
    }
}
