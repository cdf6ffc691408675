//! What a machine needs from its surroundings during a slice.

use crate::term::Term;

/// A module member resolved by `Mod.name`.
#[derive(Debug, Clone, PartialEq)]
pub enum Member {
    /// A plain value, e.g. a configured location.
    Constant(Term),
    /// An operation invoked as `{Mod.op Args... ?Result}`.
    Operation { idempotent: bool },
}

pub trait Host {
    /// Current time on the process clock, in milliseconds.
    fn now_ms(&self) -> i64;

    fn is_virtual_clock(&self) -> bool {
        false
    }

    fn member(&self, module: &str, name: &str) -> Option<Member>;

    /// Durably records that correlation `key` (canonical JSON) belongs to the
    /// running process. Errors become in-language exceptions.
    fn register_correlation(&mut self, key: &str) -> Result<(), String>;
}

/// A host with no modules and a fixed clock.
#[derive(Debug, Default, Clone)]
pub struct NullHost {
    pub now: i64,
}

impl Host for NullHost {
    fn now_ms(&self) -> i64 {
        self.now
    }

    fn is_virtual_clock(&self) -> bool {
        true
    }

    fn member(&self, _module: &str, _name: &str) -> Option<Member> {
        None
    }

    fn register_correlation(&mut self, _key: &str) -> Result<(), String> {
        Ok(())
    }
}
