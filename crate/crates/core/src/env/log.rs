use std::io::Write;

use super::StepInfo;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLogRow {
    pub timestep: usize,
    pub action: Vec<f64>,
    pub v: f64,
    pub alignment: f64,
    pub d: f64,
    pub step_return: f64,
    pub done_reason: String,
}

impl From<&StepInfo> for EpisodeLogRow {
    fn from(info: &StepInfo) -> Self {
        Self {
            timestep: info.timestep,
            action: info.action.clone(),
            v: info.v,
            alignment: info.alignment,
            d: info.d,
            step_return: info.step_return,
            done_reason: info.done_reason.map(|r| r.as_str().to_string()).unwrap_or_default(),
        }
    }
}

/// Per-step episode trace, written as CSV:
/// `timestep,a0..aN,v,alignment,d,step_return,done_reason`.
#[derive(Debug, Clone, Default)]
pub struct EpisodeLog {
    pub rows: Vec<EpisodeLogRow>,
}

impl EpisodeLog {
    pub fn push(&mut self, info: &StepInfo) {
        self.rows.push(info.into());
    }

    pub fn total_return(&self) -> f64 {
        self.rows.iter().map(|r| r.step_return).sum()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let dims = self.rows.first().map_or(0, |r| r.action.len());
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["timestep".to_string()];
        header.extend((0..dims).map(|i| format!("a{i}")));
        header.extend(["v", "alignment", "d", "step_return", "done_reason"].map(String::from));
        out.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.timestep.to_string()];
            rec.extend(r.action.iter().map(|a| a.to_string()));
            rec.extend([r.v, r.alignment, r.d, r.step_return].map(|x| x.to_string()));
            rec.push(r.done_reason.clone());
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::DoneReason;

    #[test]
    fn csv_layout() {
        let mut log = EpisodeLog::default();
        log.push(&StepInfo {
            timestep: 1,
            action: vec![0.5, 0.25],
            v: 0.1,
            alignment: 1.0,
            d: 0.0,
            step_return: 10.0,
            done_reason: Some(DoneReason::OffRoad),
        });
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "timestep,a0,a1,v,alignment,d,step_return,done_reason\n1,0.5,0.25,0.1,1,0,10,off-road\n"
        );
    }
}
