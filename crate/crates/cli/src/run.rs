//! `ozy run`: one process on a local machine with a virtual clock.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use ozy_container::connectors::{Connector, LocalConnector};
use ozy_container::ContainerConfig;
use ozy_core::lang::{load_program, Resolver};
use ozy_core::machine::{Machine, Member, PendingCall, Status};
use ozy_core::runner::{Modules, Runner};
use ozy_core::term::Term;

use crate::exit;

pub struct RunArgs {
    pub file: PathBuf,
    pub seed: u64,
    pub trace: bool,
    pub advance: Option<i64>,
    pub expect_terminate: bool,
    pub call: Option<String>,
    pub args: Option<String>,
    pub config: Option<PathBuf>,
    pub tenant: Option<String>,
    pub max_reductions: usize,
}

/// Local connectors of one configured tenant. HTTP connectors are left out.
#[derive(Default)]
struct LocalModules(BTreeMap<String, LocalConnector>);

impl Modules for LocalModules {
    fn member(&self, module: &str, name: &str) -> Option<Member> {
        self.0.get(module).and_then(|c| Connector::Local(c.clone()).member(name))
    }

    fn invoke(&mut self, call: &PendingCall, now_ms: i64) -> Result<Term, Term> {
        match self.0.get(&call.module) {
            Some(c) => c.invoke(call, now_ms),
            None => Err(Term::tuple("unknownMember", vec![Term::atom(&call.module), Term::atom(&call.op)])),
        }
    }
}

fn local_modules(config: &Path, tenant: Option<&str>) -> Result<LocalModules, String> {
    let cfg = ContainerConfig::load(config).map_err(|e| e.to_string())?;
    let t = match tenant {
        Some(id) => cfg.tenants.iter().find(|t| t.id == id).ok_or_else(|| format!("no tenant `{id}` in {}", config.display()))?,
        None if cfg.tenants.len() == 1 => &cfg.tenants[0],
        None => return Err("the config has several tenants; pick one with --tenant".into()),
    };
    let mut out = LocalModules::default();
    for spec in &t.connectors {
        if let Connector::Local(l) = Connector::from_spec(spec).map_err(|e| e.to_string())? {
            out.0.insert(spec.name.clone(), l);
        }
    }
    Ok(out)
}

pub fn run(a: RunArgs) -> i32 {
    let source = match std::fs::read_to_string(&a.file) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("ozy: cannot read {}: {e}", a.file.display());
            return exit::LOAD;
        }
    };
    let modules = match &a.config {
        Some(c) => match local_modules(c, a.tenant.as_deref()) {
            Ok(m) => m,
            Err(e) => {
                eprintln!("ozy: {e}");
                return exit::LOAD;
            }
        },
        None => LocalModules::default(),
    };
    let name = a.file.file_stem().and_then(|s| s.to_str()).unwrap_or("main");
    let resolver = Resolver::default().with_modules(modules.0.keys().cloned());
    let program = match load_program(name, &source, &a.file.display().to_string(), &resolver) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("{e}");
            return exit::LOAD;
        }
    };
    let call_args = match &a.args {
        None => Vec::new(),
        Some(text) => match Term::from_json_text(text).ok().and_then(|t| t.as_list().map(|l| l.into_iter().cloned().collect::<Vec<_>>())) {
            Some(items) => items,
            None => {
                eprintln!("ozy: --args must be a JSON array");
                return exit::USAGE;
            }
        },
    };

    let mut machine = Machine::from_program(&program, a.seed);
    if a.trace {
        machine.enable_trace();
    }
    let mut r = Runner::new(machine, modules).with_limit(a.max_reductions);
    let mut status = r.settle();
    let mut result = None;
    if let Some(proc_name) = &a.call {
        let v = r.machine.store_mut().new_var();
        if let Err(e) = r.machine.inject_call(proc_name, &call_args, Some(v)) {
            eprintln!("ozy: {e}");
            return exit::CRASH;
        }
        result = Some(v);
        status = r.settle();
    }
    if let Some(ms) = a.advance {
        status = r.advance(ms);
    }

    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for line in r.machine.take_trace() {
        let _ = writeln!(out, "{line}");
    }
    for (k, v) in r.machine.bindings() {
        let _ = writeln!(out, "{k} = {v}");
    }
    if let Some(v) = result {
        let _ = writeln!(out, "result = {}", r.machine.store().show(v));
    }
    let timers = r.machine.timers().len();
    match &status {
        Status::PartiallyTerminated if timers > 0 => {
            let next = r.machine.next_deadline().unwrap_or_default();
            let _ = writeln!(out, "status: {status} timers={timers} next={next}ms clock={}ms", r.now());
        }
        _ => {
            let _ = writeln!(out, "status: {status}");
        }
    }
    let _ = out.flush();

    let mut uncaught = false;
    for line in r.machine.log() {
        uncaught |= line.starts_with("uncaught exception");
        eprintln!("{line}");
    }
    match status {
        Status::Crashed(_) => exit::CRASH,
        Status::PartiallyActive => {
            eprintln!("ozy: gave up after {} reductions", a.max_reductions);
            exit::CRASH
        }
        _ if uncaught => exit::CRASH,
        Status::PartiallyTerminated if a.expect_terminate && timers == 0 => exit::STUCK,
        _ => exit::OK,
    }
}
