use std::sync::{Arc, Condvar, Mutex};

/// Single-slot latest-value channel. Writers overwrite, readers never block
/// unless they ask to wait for something newer than what they have seen.
#[derive(Debug)]
pub struct Mailbox<T> {
    slot: Mutex<(u64, Option<Arc<T>>)>,
    fresh: Condvar,
}

impl<T> Default for Mailbox<T> {
    fn default() -> Self {
        Self {
            slot: Mutex::new((0, None)),
            fresh: Condvar::new(),
        }
    }
}

impl<T> Mailbox<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn publish(&self, value: T) {
        let mut g = self.slot.lock().unwrap_or_else(|e| e.into_inner());
        g.0 += 1;
        g.1 = Some(Arc::new(value));
        self.fresh.notify_all();
    }

    /// Newest value and its sequence number, without blocking on writers
    /// beyond the lock itself.
    pub fn latest(&self) -> Option<(u64, Arc<T>)> {
        let g = self.slot.lock().unwrap_or_else(|e| e.into_inner());
        g.1.as_ref().map(|v| (g.0, Arc::clone(v)))
    }

    /// Blocks until a value newer than `seen` arrives or `timeout` elapses.
    pub fn wait_newer(&self, seen: u64, timeout: std::time::Duration) -> Option<(u64, Arc<T>)> {
        let g = self.slot.lock().unwrap_or_else(|e| e.into_inner());
        let (g, _) = self
            .fresh
            .wait_timeout_while(g, timeout, |s| s.0 <= seen)
            .unwrap_or_else(|e| e.into_inner());
        if g.0 > seen {
            g.1.as_ref().map(|v| (g.0, Arc::clone(v)))
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    #[test]
    fn keeps_only_latest() {
        let m = Mailbox::new();
        assert!(m.latest().is_none());
        m.publish(1);
        m.publish(2);
        let (seq, v) = m.latest().unwrap();
        assert_eq!((seq, *v), (2, 2));
        assert!(m.wait_newer(seq, Duration::from_millis(1)).is_none());
    }

    #[test]
    fn wakes_waiting_reader() {
        let m = Arc::new(Mailbox::new());
        let w = Arc::clone(&m);
        let h =
            std::thread::spawn(move || w.wait_newer(0, Duration::from_secs(5)).map(|(_, v)| *v));
        std::thread::sleep(Duration::from_millis(10));
        m.publish(7);
        assert_eq!(h.join().unwrap(), Some(7));
    }
}
