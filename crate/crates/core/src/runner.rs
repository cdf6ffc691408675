//! Single-process driver with a virtual clock and synchronous modules.

use std::collections::BTreeSet;

use crate::machine::{Effect, Host, Machine, Member, PendingCall, Status};
use crate::term::Term;

/// Externally provided modules, answered synchronously.
pub trait Modules {
    fn member(&self, module: &str, name: &str) -> Option<Member>;

    /// Result of an operation; `Err` carries the exception to raise.
    fn invoke(&mut self, call: &PendingCall, now_ms: i64) -> Result<Term, Term>;
}

/// No modules at all.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoModules;

impl Modules for NoModules {
    fn member(&self, _module: &str, _name: &str) -> Option<Member> {
        None
    }

    fn invoke(&mut self, call: &PendingCall, _now_ms: i64) -> Result<Term, Term> {
        Err(Term::tuple("unknownMember", vec![Term::atom(&call.module), Term::atom(&call.op)]))
    }
}

struct RunHost<'a, M: Modules> {
    modules: &'a M,
    now: i64,
    correlations: &'a mut BTreeSet<String>,
}

impl<M: Modules> Host for RunHost<'_, M> {
    fn now_ms(&self) -> i64 {
        self.now
    }

    fn is_virtual_clock(&self) -> bool {
        true
    }

    fn member(&self, module: &str, name: &str) -> Option<Member> {
        self.modules.member(module, name)
    }

    fn register_correlation(&mut self, key: &str) -> Result<(), String> {
        self.correlations.insert(key.to_string());
        Ok(())
    }
}

pub struct Runner<M: Modules> {
    pub machine: Machine,
    pub modules: M,
    now: i64,
    limit: usize,
    correlations: BTreeSet<String>,
    commits: Vec<Term>,
    calls: Vec<PendingCall>,
}

impl<M: Modules> Runner<M> {
    pub fn new(machine: Machine, modules: M) -> Self {
        Runner { machine, modules, now: 0, limit: 10_000_000, correlations: BTreeSet::new(), commits: Vec::new(), calls: Vec::new() }
    }

    /// Caps reductions per quiescence run.
    pub fn with_limit(mut self, limit: usize) -> Self {
        self.limit = limit;
        self
    }

    /// Starts the clock at `now`, e.g. when resuming a restored machine.
    pub fn with_clock(mut self, now: i64) -> Self {
        self.now = now;
        self
    }

    pub fn now(&self) -> i64 {
        self.now
    }

    pub fn correlations(&self) -> &BTreeSet<String> {
        &self.correlations
    }

    pub fn commits(&self) -> &[Term] {
        &self.commits
    }

    /// Every outbound call issued so far, in order.
    pub fn calls(&self) -> &[PendingCall] {
        &self.calls
    }

    fn run(&mut self) -> Status {
        let mut host = RunHost { modules: &self.modules, now: self.now, correlations: &mut self.correlations };
        self.machine.run_to_quiescence(self.limit, &mut host)
    }

    /// Runs, answers calls and fires due timers until nothing changes or a
    /// single run exhausts the reduction limit.
    pub fn settle(&mut self) -> Status {
        loop {
            let status = self.run();
            // Still active after a full run means the reduction limit was hit.
            if matches!(status, Status::Crashed(_) | Status::PartiallyActive) {
                return status;
            }
            let mut progressed = false;
            for effect in self.machine.take_effects() {
                match effect {
                    Effect::Invoke { var, call } => {
                        let result = self.modules.invoke(&call, self.now);
                        self.calls.push(call);
                        self.machine.complete_call(var, result);
                        progressed = true;
                    }
                    Effect::Commit { location } => self.commits.push(location),
                    Effect::TimerArmed { .. } => {}
                }
            }
            for v in self.machine.due_timers(self.now) {
                progressed |= self.machine.fire_timer(v);
            }
            if !progressed && self.machine.status() != Status::PartiallyActive {
                return self.machine.status();
            }
        }
    }

    /// Moves the clock forward by `ms`, stopping at each timer deadline.
    pub fn advance(&mut self, ms: i64) -> Status {
        let target = self.now.saturating_add(ms.max(0));
        let mut status = self.settle();
        while let Some(d) = self.machine.next_deadline() {
            if matches!(status, Status::Crashed(_) | Status::PartiallyActive) {
                return status;
            }
            if d > target {
                break;
            }
            self.now = self.now.max(d);
            status = self.settle();
        }
        self.now = target;
        self.settle()
    }

    pub fn inject_call(&mut self, procedure: &str, args: &[Term]) -> Result<Status, crate::machine::MachineError> {
        self.machine.inject_call(procedure, args, None)?;
        Ok(self.settle())
    }

    pub fn inject_external(&mut self, name: &str, value: &Term) -> Result<Status, crate::machine::MachineError> {
        self.machine.inject_external(name, value)?;
        Ok(self.settle())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::{load_program, Resolver};

    struct Doubler;

    impl Modules for Doubler {
        fn member(&self, module: &str, name: &str) -> Option<Member> {
            (module == "Calc" && name == "double").then_some(Member::Operation { idempotent: true })
        }

        fn invoke(&mut self, call: &PendingCall, _now: i64) -> Result<Term, Term> {
            match &call.args[..] {
                [Term::Int(i)] => Ok(Term::Int(i * 2)),
                _ => Err(Term::atom("badArgs")),
            }
        }
    }

    fn runner(src: &str) -> Runner<Doubler> {
        let r = Resolver::default().with_modules(["Calc"]);
        let p = load_program("t", src, "t.oz", &r).unwrap();
        Runner::new(Machine::from_program(&p, 1), Doubler)
    }

    #[test]
    fn synchronous_module_call() {
        let mut r = runner("X = {Calc.double 21}");
        assert_eq!(r.settle(), Status::Terminated);
        assert_eq!(r.machine.global_term("X"), Some(Term::Int(42)));
        assert_eq!(r.calls().len(), 1);
    }

    #[test]
    fn timers_fire_in_order_on_advance() {
        let mut r = runner("thread {Sleep 2 seconds} A = 1 end\nthread {Sleep 1 seconds} {Wait B} end\nB = 2");
        assert_eq!(r.settle(), Status::PartiallyTerminated);
        r.advance(1500);
        assert!(r.machine.global_term("A").is_none());
        assert_eq!(r.advance(600), Status::Terminated);
        assert_eq!(r.machine.global_term("A"), Some(Term::Int(1)));
        assert_eq!(r.now(), 2100);
    }
}
