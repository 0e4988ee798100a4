use std::time::{Duration, Instant};

/// Stopwatch that only accumulates while running, alongside total elapsed time.
#[derive(Debug, Clone)]
pub struct ActiveClock {
    created: Instant,
    accumulated: Duration,
    running_since: Option<Instant>,
}

impl ActiveClock {
    /// A stopped clock.
    pub fn new() -> Self {
        Self {
            created: Instant::now(),
            accumulated: Duration::ZERO,
            running_since: None,
        }
    }

    pub fn is_running(&self) -> bool {
        self.running_since.is_some()
    }

    pub fn resume(&mut self) {
        if self.running_since.is_none() {
            self.running_since = Some(Instant::now());
        }
    }

    pub fn pause(&mut self) {
        if let Some(since) = self.running_since.take() {
            self.accumulated += since.elapsed();
        }
    }

    /// Seconds spent running.
    pub fn active_s(&self) -> f64 {
        let live = self.running_since.map(|s| s.elapsed()).unwrap_or_default();
        (self.accumulated + live).as_secs_f64()
    }

    /// Seconds since creation, paused or not.
    pub fn total_s(&self) -> f64 {
        self.created.elapsed().as_secs_f64()
    }
}

impl Default for ActiveClock {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paused_time_is_not_counted() {
        let mut c = ActiveClock::new();
        c.resume();
        std::thread::sleep(Duration::from_millis(5));
        c.pause();
        let active = c.active_s();
        std::thread::sleep(Duration::from_millis(10));
        assert_eq!(c.active_s(), active);
        assert!(c.total_s() >= active + 0.009);
    }
}
