use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

/// Process clock: wall time, or a virtual clock moved by hand.
#[derive(Debug, Clone)]
pub enum Clock {
    Real,
    Virtual(Arc<AtomicI64>),
}

impl Clock {
    pub fn virtual_at(ms: i64) -> Clock {
        Clock::Virtual(Arc::new(AtomicI64::new(ms)))
    }

    pub fn now_ms(&self) -> i64 {
        match self {
            Clock::Real => SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as i64).unwrap_or(0),
            Clock::Virtual(t) => t.load(Ordering::SeqCst),
        }
    }

    pub fn is_virtual(&self) -> bool {
        matches!(self, Clock::Virtual(_))
    }

    /// Moves a virtual clock forward to `ms`; never backwards.
    pub(crate) fn set(&self, ms: i64) {
        if let Clock::Virtual(t) = self {
            t.fetch_max(ms, Ordering::SeqCst);
        }
    }
}
