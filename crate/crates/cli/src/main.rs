use std::io::{self, BufReader, Write};
use std::os::unix::net::UnixListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use fpopt::bridge::{serve, EndpointOptions, Transport, DEFAULT_MAX_LINE};
use fpopt::config::RunConfig;
use fpopt::harness::{gen_seed_pool, oracle_check, report, run_experiment, HarnessError};
use fpopt::synthetic::{make_oracle, Family, OracleSpec};

#[derive(Parser)]
#[command(name = "fpopt", version, about = "Budgeted black-box search over binary fingerprints")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every algorithm and seed of an experiment file.
    Run {
        config: PathBuf,
        /// Output directory; overrides `experiment.output_dir`.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Write a random seed-pool file.
    GenPool {
        #[arg(long, default_value_t = 4096)]
        fp_len: usize,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        /// Expected fraction of set bits.
        #[arg(long, default_value_t = 1.0 / 64.0)]
        density: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Recompute metrics from the traces under an output directory.
    Report { runs_dir: PathBuf },
    /// Handshake with an oracle server and make three evaluations.
    OracleCheck {
        #[arg(long, conflicts_with = "command")]
        socket: Option<PathBuf>,
        /// Reject servers of any other fingerprint length.
        #[arg(long)]
        fp_len: Option<usize>,
        #[arg(long, default_value_t = 60.0)]
        timeout_secs: f64,
        /// Server command line, after `--`.
        #[arg(last = true)]
        command: Vec<String>,
    },
    /// Serve a synthetic oracle over the bridge protocol.
    Serve {
        /// onemax, hidden-target, nk:<K> or ising[:<degree>]
        #[arg(long)]
        family: Family,
        #[arg(long, default_value_t = 4096)]
        fp_len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Listen on a Unix socket instead of stdio.
        #[arg(long)]
        socket: Option<PathBuf>,
    },
}

fn default_output(config: &Path) -> PathBuf {
    let stem = config.file_stem().map_or("experiment".into(), |s| s.to_string_lossy().into_owned());
    PathBuf::from("fpopt-out").join(stem)
}

fn cmd_run(config: &Path, output: Option<PathBuf>) -> Result<(), HarnessError> {
    let cfg = RunConfig::load(config)?;
    let out = output
        .or_else(|| cfg.experiment.output_dir.clone())
        .unwrap_or_else(|| default_output(config));
    let res = run_experiment(&cfg, &out)?;
    for r in &res.runs {
        eprintln!(
            "{}/{}/seed{}: best {:.4}, {} evaluations, {} ({:.2}s)",
            r.meta.oracle, r.meta.algorithm, r.meta.index, r.best_score, r.meta.evaluations, r.meta.stop_reason, r.wall_secs
        );
    }
    if let Some(a) = &res.aggregate {
        print!("{}", a.to_markdown());
    }
    eprintln!("wrote {} runs to {}", res.runs.len(), out.display());
    Ok(())
}

fn cmd_report(dir: &Path) -> Result<bool, HarnessError> {
    let out = report(dir)?;
    let mut ok = true;
    for r in &out.runs {
        if !r.matches_summary() {
            ok = false;
            eprintln!("{}: recomputed metrics differ from summary.csv", r.dir.display());
        }
    }
    match &out.aggregate {
        Some(a) => print!("{}", a.to_markdown()),
        None => {
            for r in &out.runs {
                println!("{}/{}/seed{}", r.meta.oracle, r.meta.algorithm, r.meta.index);
                for (name, v) in r.recomputed.iter() {
                    println!("  {name} {v:.3}");
                }
            }
        }
    }
    Ok(ok)
}

fn cmd_check(socket: Option<PathBuf>, command: Vec<String>, fp_len: Option<usize>, timeout_secs: f64) -> Result<(), HarnessError> {
    let transport = match (socket, command.is_empty()) {
        (Some(s), true) => Transport::Socket(s),
        (None, false) => Transport::Command(command),
        _ => {
            return Err(HarnessError::Config(fpopt::config::ConfigError {
                path: None,
                line: None,
                message: "give either --socket PATH or a server command after `--`".into(),
            }))
        }
    };
    if !(timeout_secs.is_finite() && timeout_secs > 0.0) {
        return Err(HarnessError::Runtime(format!("timeout {timeout_secs} must be positive")));
    }
    let opts = EndpointOptions {
        timeout: Duration::from_secs_f64(timeout_secs),
        max_line: DEFAULT_MAX_LINE,
    };
    let rep = oracle_check(&transport, opts, fp_len)?;
    let d = &rep.descriptor;
    println!("oracle {} fp_len {} aux [{}]", d.oracle, d.fp_len, d.aux.join(", "));
    for (fp, s) in &rep.probes {
        println!("  {} ones -> {s}", fp.count_ones());
    }
    println!("ok");
    Ok(())
}

fn cmd_serve(family: Family, fp_len: usize, seed: u64, socket: Option<PathBuf>) -> Result<(), HarnessError> {
    let oracle = make_oracle(&OracleSpec::new(family, fp_len, seed)).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| HarnessError::Io { path, source }
    };
    match socket {
        None => {
            let stdin = io::stdin();
            serve(&oracle, stdin.lock(), io::stdout().lock()).map_err(io_err(Path::new("<stdio>")))
        }
        Some(path) => {
            let listener = UnixListener::bind(&path).map_err(io_err(&path))?;
            for conn in listener.incoming() {
                let conn = conn.map_err(io_err(&path))?;
                let reader = BufReader::new(conn.try_clone().map_err(io_err(&path))?);
                // a client that drops mid-conversation only ends its own session
                if let Err(e) = serve(&oracle, reader, conn) {
                    eprintln!("connection closed: {e}");
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Cmd::Run { config, output } => cmd_run(&config, output),
        Cmd::GenPool {
            fp_len,
            count,
            density,
            seed,
            output,
        } => gen_seed_pool(fp_len, count, density, seed, &output).map(|p| {
            eprintln!("wrote {} fingerprints of length {} to {}", p.fingerprints.len(), p.fp_len, output.display());
        }),
        Cmd::Report { runs_dir } => match cmd_report(&runs_dir) {
            Ok(true) => Ok(()),
            Ok(false) => {
                let _ = io::stdout().flush();
                return ExitCode::from(4);
            }
            Err(e) => Err(e),
        },
        Cmd::OracleCheck {
            socket,
            fp_len,
            timeout_secs,
            command,
        } => cmd_check(socket, command, fp_len, timeout_secs),
        Cmd::Serve {
            family,
            fp_len,
            seed,
            socket,
        } => cmd_serve(family, fp_len, seed, socket),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
