//! Ask replies. A slot is completed at most once; the waiter's timeout
//! competes with the process for that single completion.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use ozy_core::term::Term;

#[derive(Debug, Clone, PartialEq)]
pub enum AskOutcome {
    Value(Term),
    Failure(Term),
    Timeout(u64),
}

impl AskOutcome {
    /// The failure carried by a non-value outcome, as a term.
    pub fn failure(&self) -> Option<Term> {
        match self {
            AskOutcome::Value(_) => None,
            AskOutcome::Failure(t) => Some(t.clone()),
            AskOutcome::Timeout(ms) => Some(Term::tuple("askTimeout", vec![Term::Int(*ms as i64)])),
        }
    }
}

#[derive(Debug, Default)]
pub struct ReplySlot {
    cell: Mutex<Option<AskOutcome>>,
    ready: Condvar,
}

impl ReplySlot {
    pub fn new() -> Arc<ReplySlot> {
        Arc::new(ReplySlot::default())
    }

    /// A slot already holding `outcome`.
    pub fn done(outcome: AskOutcome) -> Arc<ReplySlot> {
        let s = ReplySlot::new();
        s.complete(outcome);
        s
    }

    /// Stores `outcome` unless the slot is already complete.
    pub fn complete(&self, outcome: AskOutcome) -> bool {
        let mut cell = self.cell.lock().unwrap();
        if cell.is_some() {
            return false;
        }
        *cell = Some(outcome);
        self.ready.notify_all();
        true
    }

    pub fn is_closed(&self) -> bool {
        self.cell.lock().unwrap().is_some()
    }

    pub fn peek(&self) -> Option<AskOutcome> {
        self.cell.lock().unwrap().clone()
    }

    /// Blocks for the outcome; after `timeout` the slot closes as timed out.
    pub fn wait(&self, timeout: Duration) -> AskOutcome {
        let cell = self.cell.lock().unwrap();
        let (mut cell, _) = self.ready.wait_timeout_while(cell, timeout, |c| c.is_none()).unwrap();
        cell.get_or_insert_with(|| AskOutcome::Timeout(timeout.as_millis() as u64)).clone()
    }
}
