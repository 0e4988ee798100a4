use std::sync::Mutex;

use crate::teachers::FeedbackSignal;

#[derive(Debug, Default)]
struct Slot {
    pending: Option<FeedbackSignal>,
    dropped: u64,
}

/// Single-slot hand-off from an asynchronous feedback source to the learning
/// loop. A newer signal replaces an unconsumed older one, which is counted as
/// dropped.
#[derive(Debug, Default)]
pub struct FeedbackQueue {
    slot: Mutex<Slot>,
}

impl FeedbackQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, signal: FeedbackSignal) {
        let mut slot = self.slot.lock().expect("feedback queue poisoned");
        if slot.pending.replace(signal).is_some() {
            slot.dropped += 1;
        }
    }

    /// Latest pending signal, if any.
    pub fn take(&self) -> Option<FeedbackSignal> {
        self.slot.lock().expect("feedback queue poisoned").pending.take()
    }

    pub fn dropped(&self) -> u64 {
        self.slot.lock().expect("feedback queue poisoned").dropped
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(t: u64) -> FeedbackSignal {
        FeedbackSignal { h: vec![1], timestep: t }
    }

    #[test]
    fn latest_wins() {
        let q = FeedbackQueue::new();
        assert!(q.take().is_none());
        q.push(sig(1));
        q.push(sig(2));
        q.push(sig(3));
        assert_eq!(q.take().unwrap().timestep, 3);
        assert_eq!(q.dropped(), 2);
        assert!(q.take().is_none());
    }

    #[test]
    fn shared_across_threads() {
        let q = std::sync::Arc::new(FeedbackQueue::new());
        let producer = {
            let q = q.clone();
            std::thread::spawn(move || {
                for t in 0..100 {
                    q.push(sig(t));
                }
            })
        };
        producer.join().unwrap();
        assert_eq!(q.take().unwrap().timestep, 99);
        assert_eq!(q.dropped(), 99);
    }
}
