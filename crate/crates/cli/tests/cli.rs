use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use ozy_core::lang::{load_program, Resolver};
use ozy_core::machine::Machine;
use ozy_core::runner::{NoModules, Runner};
use ozy_core::snapshot::{snapshot, write_snapshot, SnapshotMeta};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn program(name: &str) -> PathBuf {
    root().join("programs").join(name)
}

fn ozy() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ozy"));
    c.env_remove("OZY_URL").env_remove("OZY_TOKEN").env_remove("OZY_DATA_DIR").env_remove("OZY_LISTEN");
    c
}

fn run(args: &[&str]) -> Output {
    ozy().args(args).output().unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8(b.to_vec()).unwrap()
}

/// Compares with `tests/golden/<name>`; `OZY_BLESS=1` rewrites the file.
fn golden(name: &str, actual: &str) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("OZY_BLESS").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let want = std::fs::read_to_string(&path).unwrap();
    assert_eq!(actual, want, "golden {name}");
}

#[test]
fn run_prints_bindings_and_status() {
    let fig2 = program("fig2.oz");
    let o = run(&["run", fig2.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    golden("fig2.out", &text(&o.stdout));
    assert!(text(&o.stdout).contains("Z = 12\n"));

    let fig3 = program("fig3.oz");
    let o = run(&["run", fig3.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    golden("fig3.out", &text(&o.stdout));
    let o = run(&["run", fig3.to_str().unwrap(), "--advance", "259200000"]);
    assert_eq!(o.status.code(), Some(0));
    golden("fig3-advance.out", &text(&o.stdout));
    assert!(text(&o.stdout).contains("D = 'N'\n"));
    assert!(text(&o.stdout).ends_with("status: terminated\n"));
    // One ms short of three days, D is still open.
    let o = run(&["run", fig3.to_str().unwrap(), "--advance", "259199999"]);
    assert!(text(&o.stdout).contains("D = _\n"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, src: &str| {
        let p = dir.path().join(name);
        std::fs::write(&p, src).unwrap();
        p.to_str().unwrap().to_string()
    };
    let stuck = program("stuck.oz");
    let o = run(&["run", stuck.to_str().unwrap(), "--expect-terminate"]);
    assert_eq!(o.status.code(), Some(3));
    golden("stuck.out", &text(&o.stdout));
    assert_eq!(run(&["run", stuck.to_str().unwrap()]).status.code(), Some(0));
    // A pending timer is not stuck.
    let fig3 = program("fig3.oz");
    assert_eq!(run(&["run", fig3.to_str().unwrap(), "--expect-terminate"]).status.code(), Some(0));

    let o = run(&["run", &write("bad.oz", "proc {\n")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).contains("bad.oz:1:"), "{}", text(&o.stderr));
    assert_eq!(run(&["run", "/no/such/file.oz"]).status.code(), Some(1));

    let o = run(&["run", &write("clash.oz", "X = 1\nX = 2\n")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("uncaught exception"));
    let o = run(&["run", &write("loop.oz", "proc {Loop N} {Loop N+1} end\n{Loop 0}\n"), "--max-reductions", "1000"]);
    assert_eq!(o.status.code(), Some(2));

    assert_eq!(run(&["run"]).status.code(), Some(64));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(64));
    assert_eq!(run(&["send", "--tenant", "t", "--ask", "--tell"]).status.code(), Some(64));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    // Nothing listens on port 9.
    let o = run(&["ps", "--tenant", "t", "--url", "http://127.0.0.1:9"]);
    assert_eq!(o.status.code(), Some(6));
}

#[test]
fn help_texts_are_stable() {
    for (cmd, file) in [
        (None, "help-ozy.out"),
        (Some("run"), "help-run.out"),
        (Some("serve"), "help-serve.out"),
        (Some("ps"), "help-ps.out"),
        (Some("send"), "help-send.out"),
        (Some("deadletters"), "help-deadletters.out"),
        (Some("register"), "help-register.out"),
        (Some("advance"), "help-advance.out"),
        (Some("inspect"), "help-inspect.out"),
    ] {
        let mut args: Vec<&str> = cmd.into_iter().collect();
        args.push("--help");
        golden(file, &text(&run(&args).stdout));
    }
}

#[test]
fn seeded_traces_replay_byte_for_byte() {
    let fig2 = program("fig2.oz");
    let p = fig2.to_str().unwrap();
    let a = run(&["run", p, "--seed", "7", "--trace"]);
    let b = run(&["run", p, "--seed", "7", "--trace"]);
    assert_eq!(a.stdout, b.stdout);
    assert!(text(&a.stdout).starts_with("seq=1 "));
    golden("fig2-seed7-trace.out", &text(&a.stdout));
    let traces: std::collections::BTreeSet<Vec<u8>> = (0..20).map(|s| run(&["run", p, "--seed", &s.to_string(), "--trace"]).stdout).collect();
    assert!(traces.len() > 1, "seeds should change the interleaving");

    let water = program("watertank.oz");
    let a = run(&["run", water.to_str().unwrap(), "--seed", "11", "--trace"]);
    let b = run(&["run", water.to_str().unwrap(), "--seed", "11", "--trace"]);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn run_calls_an_entry_procedure_with_local_connectors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ozy.toml");
    std::fs::write(
        &cfg,
        r#"
[[tenants]]
id = "shop"
token = "t"

[[tenants.connectors]]
name = "Prices"
kind = "local"
constants = { currency = "EUR" }
tables = { quote = { '["apple"]' = 3, "*" = 0 } }
"#,
    )
    .unwrap();
    let src = dir.path().join("shop.oz");
    std::fs::write(&src, "proc {Price Item ?P}\n    P = {Prices.quote Item} * 2\n    Currency = Prices.currency\nend\n").unwrap();
    let o = run(&["run", src.to_str().unwrap(), "--config", cfg.to_str().unwrap(), "--call", "Price", "--args", r#"["apple"]"#]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    let out = text(&o.stdout);
    assert!(out.contains("Currency = 'EUR'\n"), "{out}");
    assert!(out.contains("result = 6\n"), "{out}");
    let o = run(&["run", src.to_str().unwrap(), "--config", cfg.to_str().unwrap(), "--call", "Price", "--args", r#"["pear"]"#]);
    assert!(text(&o.stdout).contains("result = 0\n"));
}

#[test]
fn inspect_prints_snapshot_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let src = std::fs::read_to_string(program("fig3.oz")).unwrap();
    let p = load_program("fig3", &src, "fig3.oz", &Resolver::default()).unwrap();
    let mut r = Runner::new(Machine::from_program(&p, 1), NoModules);
    r.settle();
    let meta = SnapshotMeta { tenant_id: "acme".into(), process_id: "p-1".into(), program_name: "fig3".into(), program_digest: p.digest.clone() };
    let s = snapshot(&r.machine, &meta).unwrap();
    let path = write_snapshot(&s, dir.path()).unwrap();
    let o = run(&["inspect", path.to_str().unwrap(), "--summary"]);
    assert_eq!(o.status.code(), Some(0));
    let out = text(&o.stdout);
    assert!(out.contains("version: 1\n"));
    assert!(out.contains(&format!("stacks: {}\n", s.stacks.len())));
    assert!(out.contains(&format!("vars: {}\n", s.var_count())));
    assert!(out.contains("status: partially-terminated\n"));
    assert!(out.contains("timers: 1\n"));

    let o = run(&["inspect", path.to_str().unwrap()]);
    let out = text(&o.stdout);
    let json = &out[out.find('{').unwrap()..];
    let j: serde_json::Value = serde_json::from_str(json).unwrap();
    assert_eq!(j["format_version"], 1);
    assert_eq!(j["process_id"], "p-1");

    let junk = dir.path().join("junk.ozss");
    std::fs::write(&junk, b"not a snapshot").unwrap();
    let o = run(&["inspect", junk.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).contains("bad magic"));
}

struct Server {
    child: Child,
    url: String,
}

impl Server {
    fn start(cfg: &Path, data: &Path) -> Server {
        let mut child = ozy()
            .args(["serve", cfg.to_str().unwrap()])
            .env("OZY_DATA_DIR", data)
            .env("OZY_LISTEN", "127.0.0.1:0")
            .env("RUST_LOG", "warn")
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let url = line.trim().strip_prefix("listening on ").unwrap_or_else(|| panic!("unexpected banner `{line}`")).to_string();
        Server { child, url }
    }

    fn cmd(&self, args: &[&str]) -> Output {
        ozy().args(args).env("OZY_URL", &self.url).env("OZY_TOKEN", "s3cret").output().unwrap()
    }

    fn signal(&mut self, sig: i32) -> Option<i32> {
        unsafe { libc::kill(self.child.id() as i32, sig) };
        let end = Instant::now() + Duration::from_secs(20);
        loop {
            if let Some(s) = self.child.try_wait().unwrap() {
                return s.code();
            }
            assert!(Instant::now() < end, "server did not stop");
            std::thread::sleep(Duration::from_millis(20));
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn ps(s: &Server) -> String {
    let o = s.cmd(&["ps", "--tenant", "acme"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    text(&o.stdout)
}

fn snapshot_names(data: &Path) -> Vec<String> {
    let dir = std::fs::read_dir(data.join("snapshots/acme")).unwrap();
    dir.flatten().map(|e| e.file_name().to_string_lossy().into_owned()).filter(|f| f.ends_with(".ozss")).collect()
}

#[test]
fn serve_send_ps_and_restart() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let cfg = dir.path().join("ozy.toml");
    std::fs::write(
        &cfg,
        format!(
            "[[tenants]]\nid = \"acme\"\ntoken = \"s3cret\"\nprograms = {{ approval = '{}' }}\n",
            program("approval.oz").display()
        ),
    )
    .unwrap();

    let mut s = Server::start(&cfg, &data);
    let health = reqwest::blocking::get(format!("{}/healthz", s.url)).unwrap();
    assert_eq!(health.status(), 200);

    let o = s.cmd(&["send", "--tenant", "acme", "--tell", "--external", "approvedFlag=true", "--correlation", "order=SO-9"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(text(&o.stdout).contains("deadLetter"));
    let o = s.cmd(&["deadletters", "--tenant", "acme"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(text(&o.stdout).contains("SO-9"), "{}", text(&o.stdout));
    let o = ozy().args(["ps", "--tenant", "acme", "--url", &s.url, "--token", "nope"]).output().unwrap();
    assert_eq!(o.status.code(), Some(4));

    for n in 1..=3 {
        let order = format!("SO-{n}");
        let args = format!(r#"["{order}",{}]"#, n * 100);
        let corr = format!("order={order}");
        let o = s.cmd(&["send", "--tenant", "acme", "--create", "--program", "approval", "--procedure", "CreateSupplyOrder", "--args", &args, "--correlation", &corr]);
        assert_eq!(o.status.code(), Some(0), "{} {}", text(&o.stdout), text(&o.stderr));
        assert!(text(&o.stdout).contains("processId"));
    }
    let listing = ps(&s);
    assert_eq!(listing.matches("partially-terminated frontier=[approvedFlag]").count(), 3, "{listing}");

    let o = s.cmd(&["send", "--tenant", "acme", "--tell", "--external", "approvedFlag=true", "--correlation", "order=SO-1"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stdout));
    let listing = ps(&s);
    assert_eq!(listing.matches("  terminated").count(), 1, "{listing}");

    // Hard kill: waiting processes were checkpointed when they went quiet.
    assert_eq!(s.signal(libc::SIGKILL), None);
    let mut s = Server::start(&cfg, &data);
    let o = s.cmd(&["send", "--tenant", "acme", "--tell", "--external", "approvedFlag=false", "--correlation", "order=SO-2"]);
    let out = text(&o.stdout);
    assert!(!out.contains("deadLetter"), "{out}");
    assert_eq!(o.status.code(), Some(0), "{out}");
    let o = s.cmd(&["send", "--tenant", "acme", "--create", "--program", "approval", "--procedure", "CreateSupplyOrder", "--args", r#"["SO-3",1]"#, "--correlation", "order=SO-3"]);
    assert_eq!(o.status.code(), Some(4), "business key SO-3 survived the crash");

    let o = s.cmd(&["send", "--tenant", "acme", "--create", "--program", "approval", "--procedure", "CreateSupplyOrder", "--args", r#"["SO-4",1]"#, "--correlation", "order=SO-4"]);
    assert_eq!(o.status.code(), Some(0));
    let waiting: Vec<String> =
        ps(&s).lines().filter(|l| l.contains("partially-terminated")).map(|l| l.split_whitespace().next().unwrap().to_string()).collect();
    assert_eq!(waiting.len(), 2);
    assert_eq!(s.signal(libc::SIGTERM), Some(0));
    for pid in &waiting {
        assert!(snapshot_names(&data).iter().any(|f| f.starts_with(&format!("acme.{pid}."))), "{pid}");
    }

    let s = Server::start(&cfg, &data);
    let listing = ps(&s);
    assert!(listing.contains("partially-terminated frontier=[approvedFlag]  passivated"), "{listing}");
    let o = s.cmd(&["send", "--tenant", "acme", "--tell", "--external", "approvedFlag=true", "--correlation", "order=SO-4"]);
    assert_eq!(o.status.code(), Some(0));
    let pid = serde_json::from_str::<serde_json::Value>(&text(&o.stdout)).unwrap()["processId"].as_str().unwrap().to_string();
    assert!(ps(&s).lines().any(|l| l.starts_with(&pid) && l.contains("  terminated")));
}

#[test]
fn serve_rejects_bad_configs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[[tenants]]\nid = \"a\"\ntoken = \"t\"\nprograms = { x = 'missing.oz' }\n").unwrap();
    let o = ozy().args(["serve", cfg.to_str().unwrap()]).env("OZY_DATA_DIR", dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    std::fs::write(&cfg, "listen = 3\n").unwrap();
    let o = ozy().args(["serve", cfg.to_str().unwrap()]).env("OZY_DATA_DIR", dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).contains("listen"), "{}", text(&o.stderr));

    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    std::fs::write(&cfg, "").unwrap();
    let o = ozy()
        .args(["serve", cfg.to_str().unwrap()])
        .env("OZY_DATA_DIR", dir.path())
        .env("OZY_LISTEN", taken.local_addr().unwrap().to_string())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).contains("cannot listen"));
}
