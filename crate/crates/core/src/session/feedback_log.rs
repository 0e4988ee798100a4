use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One applied correction: the step it was applied at, the advice, and the
/// label it produced (absent for learners that build no label).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackLogEntry {
    pub timestep: u64,
    pub h: Vec<i8>,
    pub y_label: Option<Vec<f64>>,
}

/// JSON-lines writer, flushed per entry so a crash loses nothing applied.
pub struct FeedbackLogWriter<W: Write> {
    out: W,
}

impl<W: Write> FeedbackLogWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write(&mut self, entry: &FeedbackLogEntry) -> Result<()> {
        serde_json::to_writer(&mut self.out, entry)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

/// Parses a log, requiring strictly increasing timesteps.
pub fn read_feedback_log<R: BufRead>(input: R) -> Result<Vec<FeedbackLogEntry>> {
    let mut entries: Vec<FeedbackLogEntry> = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: FeedbackLogEntry = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidConfig(format!("feedback log line {}: {e}", n + 1)))?;
        if let Some(prev) = entries.last() {
            if entry.timestep <= prev.timestep {
                return Err(Error::InvalidConfig(format!(
                    "feedback log line {}: timestep {} does not follow {}",
                    n + 1,
                    entry.timestep,
                    prev.timestep
                )));
            }
        }
        entries.push(entry);
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let entries = vec![
            FeedbackLogEntry {
                timestep: 3,
                h: vec![-1, 0],
                y_label: Some(vec![0.25, 0.5]),
            },
            FeedbackLogEntry {
                timestep: 9,
                h: vec![1],
                y_label: None,
            },
        ];
        let mut buf = Vec::new();
        let mut w = FeedbackLogWriter::new(&mut buf);
        for e in &entries {
            w.write(e).unwrap();
        }
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), r#"{"timestep":3,"h":[-1,0],"y_label":[0.25,0.5]}"#);
        assert_eq!(read_feedback_log(buf.as_slice()).unwrap(), entries);
    }

    #[test]
    fn out_of_order_rejected() {
        let text = "{\"timestep\":5,\"h\":[1],\"y_label\":null}\n{\"timestep\":5,\"h\":[1],\"y_label\":null}\n";
        assert!(read_feedback_log(text.as_bytes()).is_err());
    }
}
