//! `ozy`: run Ozy programs locally, serve the container and talk to it.

mod client;
mod run;

use std::io::{IsTerminal, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ozy_container::{Container, ContainerConfig};
use ozy_core::snapshot::read_snapshot;

mod exit {
    pub const OK: i32 = 0;
    /// Unreadable or invalid program, config or snapshot.
    pub const LOAD: i32 = 1;
    pub const CRASH: i32 = 2;
    pub const STUCK: i32 = 3;
    pub const CLIENT_ERROR: i32 = 4;
    pub const SERVER_ERROR: i32 = 5;
    pub const UNREACHABLE: i32 = 6;
    pub const USAGE: i32 = 64;

    pub fn http(status: u16) -> i32 {
        if status >= 500 {
            SERVER_ERROR
        } else {
            CLIENT_ERROR
        }
    }
}

#[derive(Parser)]
#[command(name = "ozy", version, about = "Dataflow orchestration container")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Remote {
    /// Base URL of the container.
    #[arg(long, env = "OZY_URL", default_value = "http://127.0.0.1:7878", global = true)]
    url: String,
    /// Tenant bearer token.
    #[arg(long, env = "OZY_TOKEN", global = true, hide_env_values = true)]
    token: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a program on a local machine with a virtual clock.
    Run {
        file: PathBuf,
        /// Scheduler seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print one line per reduction.
        #[arg(long)]
        trace: bool,
        /// Move the virtual clock forward by this many ms once quiescent.
        #[arg(long, value_name = "MS")]
        advance: Option<i64>,
        /// Exit 3 if the program waits forever.
        #[arg(long)]
        expect_terminate: bool,
        /// Procedure to call once the top level has settled.
        #[arg(long, value_name = "PROC")]
        call: Option<String>,
        /// Arguments for --call as a JSON array.
        #[arg(long, value_name = "JSON", requires = "call")]
        args: Option<String>,
        /// Container config whose local connectors the program may use.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, requires = "config")]
        tenant: Option<String>,
        #[arg(long, default_value_t = 10_000_000)]
        max_reductions: usize,
    },
    /// Serve the container until SIGINT or SIGTERM.
    Serve { config: PathBuf },
    /// List a tenant's processes.
    Ps {
        #[arg(long)]
        tenant: String,
        #[command(flatten)]
        remote: Remote,
    },
    /// Send a Tell or an Ask.
    Send {
        #[arg(long)]
        tenant: String,
        #[arg(long, conflicts_with = "tell")]
        ask: bool,
        #[arg(long)]
        tell: bool,
        /// Create a process of --program and deliver to it.
        #[arg(long, requires = "program")]
        create: bool,
        #[arg(long)]
        program: Option<String>,
        #[arg(long)]
        process: Option<String>,
        #[arg(long, conflicts_with = "external")]
        procedure: Option<String>,
        /// Procedure arguments: a JSON array, or an object keyed by parameter name.
        #[arg(long, value_name = "JSON", requires = "procedure")]
        args: Option<String>,
        /// Bind an external variable: NAME=VALUE.
        #[arg(long, value_name = "NAME=VALUE")]
        external: Option<String>,
        /// Correlation key: NAME=VALUE, repeatable.
        #[arg(long, value_name = "NAME=VALUE")]
        correlation: Vec<String>,
        /// Ask timeout in ms.
        #[arg(long)]
        timeout: Option<u64>,
        #[command(flatten)]
        remote: Remote,
    },
    /// List a tenant's dead letters.
    Deadletters {
        #[arg(long)]
        tenant: String,
        #[command(flatten)]
        remote: Remote,
    },
    /// Register or replace a program for a tenant.
    Register {
        #[arg(long)]
        tenant: String,
        #[arg(long)]
        name: String,
        file: PathBuf,
        #[command(flatten)]
        remote: Remote,
    },
    /// Move a virtual-clock container forward.
    Advance {
        ms: i64,
        #[command(flatten)]
        remote: Remote,
    },
    /// Print a snapshot file.
    Inspect {
        file: PathBuf,
        /// Only the summary, without the JSON rendering.
        #[arg(long)]
        summary: bool,
    },
}

fn conn(r: Remote) -> client::Conn {
    client::Conn { url: r.url, token: r.token }
}

fn inspect(file: &Path, summary: bool) -> i32 {
    let s = match read_snapshot(file) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("ozy: {e}");
            return exit::LOAD;
        }
    };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "version: {}", s.format_version);
    let _ = writeln!(out, "tenant: {}", s.tenant_id);
    let _ = writeln!(out, "process: {}", s.process_id);
    let _ = writeln!(out, "program: {} ({})", s.program_name, s.program_digest);
    let _ = writeln!(out, "status: {}", s.status);
    let _ = writeln!(out, "reductions: {}", s.reductions);
    let _ = writeln!(out, "stacks: {}", s.stacks.len());
    let _ = writeln!(out, "vars: {}", s.var_count());
    let _ = writeln!(out, "timers: {}", s.timers.len());
    if !summary {
        let _ = writeln!(out, "{}", s.to_json());
    }
    exit::OK
}

async fn stop_signal() {
    use tokio::signal::unix::{signal, SignalKind};
    let mut term = signal(SignalKind::terminate()).expect("SIGTERM handler");
    tokio::select! {
        _ = tokio::signal::ctrl_c() => {}
        _ = term.recv() => {}
    }
    tracing::info!("stopping");
}

fn serve(config: &Path) -> i32 {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
    let cfg = match ContainerConfig::load(config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("ozy: {e}");
            return exit::LOAD;
        }
    };
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().expect("tokio runtime");
    let c = match Container::start(&cfg, rt.handle().clone()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("ozy: {e}");
            return exit::LOAD;
        }
    };
    let listener = match rt.block_on(tokio::net::TcpListener::bind(&cfg.listen)) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("ozy: cannot listen on {}: {e}", cfg.listen);
            return exit::LOAD;
        }
    };
    let addr = listener.local_addr().map(|a| a.to_string()).unwrap_or_else(|_| cfg.listen.clone());
    println!("listening on http://{addr}");
    let _ = std::io::stdout().flush();
    match rt.block_on(ozy_container::server::serve(c, listener, stop_signal())) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("ozy: {e}");
            exit::SERVER_ERROR
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { exit::USAGE } else { exit::OK });
        }
    };
    let code = match cli.cmd {
        Cmd::Run { file, seed, trace, advance, expect_terminate, call, args, config, tenant, max_reductions } => {
            run::run(run::RunArgs { file, seed, trace, advance, expect_terminate, call, args, config, tenant, max_reductions })
        }
        Cmd::Serve { config } => serve(&config),
        Cmd::Ps { tenant, remote } => client::ps(&conn(remote), &tenant),
        Cmd::Send { tenant, ask, tell: _, create, program, process, procedure, args, external, correlation, timeout, remote } => client::send(
            &conn(remote),
            client::SendArgs { tenant, ask, create, program, process, procedure, args, external, correlation, timeout },
        ),
        Cmd::Deadletters { tenant, remote } => client::dead_letters(&conn(remote), &tenant),
        Cmd::Register { tenant, name, file, remote } => client::register(&conn(remote), &tenant, &name, &file),
        Cmd::Advance { ms, remote } => client::advance(&conn(remote), ms),
        Cmd::Inspect { file, summary } => inspect(&file, summary),
    };
    std::process::exit(code);
}
