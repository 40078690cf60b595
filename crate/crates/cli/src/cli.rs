use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use optimas_core::config::{load_config, PipelineConfig};
use optimas_core::corpus::Corpus;
use optimas_core::gateway::{Completer, Gateway};
use optimas_core::harness::{RunManifest, RunStatus};
use optimas_core::pipeline::{
    analyze, evaluate_candidate, find_run, ingest, list_runs, prepare, reprofile, run_pipeline, RunOptions,
};
use optimas_core::prompt::chunk_prompt;
use optimas_core::ExecMode;

use crate::server::{bind, serve, ApiState};

#[derive(Debug, Parser)]
#[command(name = "optimas", version, about = "Profile-guided LLM optimization of GPU kernels")]
pub struct Cli {
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    #[arg(short, long, default_value = "config.yml")]
    pub config: PathBuf,
    /// Run the data-parallel stages on one thread.
    #[arg(long)]
    pub sequential: bool,
}

impl ConfigArg {
    fn load(&self) -> Result<PipelineConfig, Failure> {
        load_config(&self.config).map_err(|e| Failure::usage(e.to_string()))
    }

    fn mode(&self) -> ExecMode {
        if self.sequential {
            ExecMode::Sequential
        } else {
            ExecMode::default()
        }
    }
}

/// Where runs live: `--root`, else the config's `output_root`.
#[derive(Debug, Args)]
pub struct RootArg {
    #[arg(long, conflicts_with = "config")]
    pub root: Option<PathBuf>,
    #[arg(short, long)]
    pub config: Option<PathBuf>,
}

impl RootArg {
    fn resolve(&self) -> Result<PathBuf, Failure> {
        match (&self.root, &self.config) {
            (Some(r), _) => Ok(r.clone()),
            (None, Some(c)) => Ok(load_config(c).map_err(|e| Failure::usage(e.to_string()))?.output_root),
            (None, None) if Path::new("config.yml").is_file() => {
                Ok(load_config(Path::new("config.yml")).map_err(|e| Failure::usage(e.to_string()))?.output_root)
            }
            (None, None) => Ok(PathBuf::from("optimas-out")),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every stage and record the result.
    Run {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Post-optimization profile for directional consistency.
        #[arg(long)]
        post: Option<PathBuf>,
    },
    /// Read the profiler exports and write a normalized bundle.
    Ingest {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(short, long, default_value = "bundle")]
        out: PathBuf,
    },
    /// Print the analysis (hot kernels, roofline, stalls, counters) as JSON.
    Analyze {
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Print the prompt that would be sent.
    Prompt {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Split into parts of at most this many characters.
        #[arg(long)]
        max_chars: Option<usize>,
    },
    /// Send the prompt to the configured backend and print the reply.
    Optimize {
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Compile, validate and time a candidate source against the original.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArg,
        candidate: PathBuf,
    },
    /// Print a run's EAR report; with --post, fill in directional consistency.
    Ear {
        run: String,
        #[command(flatten)]
        root: RootArg,
        #[arg(long)]
        post: Option<PathBuf>,
    },
    /// Re-profile a finished run's optimized code and update its EAR report.
    Reprofile {
        run: String,
        #[command(flatten)]
        root: RootArg,
        /// Use this profile instead of running the re-profiling command.
        #[arg(long)]
        post: Option<PathBuf>,
    },
    /// Summarize recorded runs.
    Report {
        #[command(flatten)]
        root: RootArg,
        /// Check every corpus record against its artifacts.
        #[arg(long)]
        validate: bool,
    },
    /// Serve the HTTP API.
    Serve {
        #[command(flatten)]
        root: RootArg,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn usage(message: String) -> Self {
        Failure { code: 2, message }
    }

    fn other(e: impl std::fmt::Display) -> Self {
        Failure { code: 1, message: e.to_string() }
    }
}

/// Exit code for a finished run.
pub fn status_code(s: RunStatus) -> u8 {
    match s {
        RunStatus::Improved | RunStatus::NoGain => 0,
        RunStatus::InvalidOutput => 3,
        RunStatus::CompileFailed => 4,
        RunStatus::RuntimeError => 5,
    }
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn run_dir(root: &RootArg, id: &str) -> Result<PathBuf, Failure> {
    let root = root.resolve()?;
    find_run(&root, id).ok_or_else(|| Failure::usage(format!("no run {id} under {}", root.display())))
}

pub fn execute(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::Run { cfg, post } => {
            let config = cfg.load()?;
            let opts = RunOptions { uuid: None, mode: cfg.mode(), post_dir: post };
            match run_pipeline(&config, &opts) {
                Ok(out) => {
                    let m = &out.manifest;
                    println!("run {} {}", m.run_uuid, m.status.as_str());
                    if let Some(p) = m.improvement_percent {
                        println!("improvement {p:.2}%");
                    }
                    if let Some(e) = &m.error {
                        println!("error: {e}");
                    }
                    println!("artifacts {}", out.run_dir.display());
                    Ok(status_code(m.status))
                }
                Err(e) => {
                    if let Some(d) = &e.run_dir {
                        eprintln!("artifacts {}", d.display());
                    }
                    Err(Failure::other(e))
                }
            }
        }
        Command::Ingest { cfg, out } => {
            let bundle = ingest(&cfg.load()?).map_err(Failure::other)?;
            bundle.write_dir(&out).map_err(Failure::other)?;
            println!(
                "{} kernels, {} stall rows, {} roofline entries, {} counter runs -> {}",
                bundle.kernels.len(),
                bundle.stalls.len(),
                bundle.roofline.len(),
                bundle.counters.as_ref().map_or(0, |c| c.run_ids.len()),
                out.display()
            );
            Ok(0)
        }
        Command::Analyze { cfg } => {
            let config = cfg.load()?;
            let mut bundle = ingest(&config).map_err(Failure::other)?;
            print_json(&analyze(&config, &mut bundle, cfg.mode()).map_err(Failure::other)?);
            Ok(0)
        }
        Command::Prompt { cfg, max_chars } => {
            let (_, _, pkg, _) = prepare(&cfg.load()?, cfg.mode()).map_err(Failure::other)?;
            let chunks = match max_chars {
                Some(n) => chunk_prompt(&pkg, n).map_err(Failure::other)?,
                None => vec![pkg],
            };
            let mut out = std::io::stdout().lock();
            for (i, c) in chunks.iter().enumerate() {
                if chunks.len() > 1 {
                    let _ = writeln!(out, "=== part {}/{} ===", i + 1, chunks.len());
                }
                let _ = write!(out, "{}", c.prompt_text);
            }
            Ok(0)
        }
        Command::Optimize { cfg } => {
            let config = cfg.load()?;
            let (_, _, pkg, _) = prepare(&config, cfg.mode()).map_err(Failure::other)?;
            let gateway = Gateway::new(config.llm.clone()).map_err(Failure::other)?;
            let reply = gateway.complete(&pkg).map_err(Failure::other)?;
            log::info!("{} in / {} out tokens, {} ms", reply.input_tokens, reply.output_tokens, reply.latency_ms);
            print!("{}", reply.text);
            Ok(0)
        }
        Command::Evaluate { cfg, candidate } => {
            let config = cfg.load()?;
            let src = fs::read_to_string(&candidate).map_err(|e| Failure::usage(format!("{}: {e}", candidate.display())))?;
            let scratch = config.output_root.join("work").join(format!("evaluate-{}", uuid::Uuid::new_v4()));
            let result = evaluate_candidate(&config, &src, &scratch);
            let _ = fs::remove_dir_all(&scratch);
            let ev = result.map_err(Failure::other)?;
            print_json(&ev);
            Ok(status_code(ev.status))
        }
        Command::Ear { run, root, post } => {
            let dir = run_dir(&root, &run)?;
            match post {
                Some(p) => print_json(&reprofile(&dir, Some(&p)).map_err(Failure::other)?),
                None => {
                    RunManifest::load(&dir).map_err(Failure::other)?;
                    let text = fs::read_to_string(dir.join("ear_report.json")).map_err(Failure::other)?;
                    print!("{text}");
                }
            }
            Ok(0)
        }
        Command::Reprofile { run, root, post } => {
            let dir = run_dir(&root, &run)?;
            print_json(&reprofile(&dir, post.as_deref()).map_err(Failure::other)?);
            Ok(0)
        }
        Command::Report { root, validate } => {
            let root = root.resolve()?;
            let runs = list_runs(&root);
            println!("{:<36}  {:<24}  {:<15}  {:>9}", "run", "app", "status", "improv.%");
            for m in &runs {
                let pct = m.improvement_percent.map_or("-".to_string(), |p| format!("{p:.2}"));
                println!("{:<36}  {:<24}  {:<15}  {:>9}", m.run_uuid, m.app, m.status.as_str(), pct);
            }
            let corpus = Corpus::new(&root);
            let n = if corpus.dir().exists() { corpus.len().map_err(Failure::other)? } else { 0 };
            println!("{} runs, {n} corpus records", runs.len());
            if validate && n > 0 {
                let bad = corpus.validate_all().map_err(Failure::other)?;
                for (id, violations) in &bad {
                    for v in violations {
                        println!("{id}: {} {}", v.field, v.message);
                    }
                }
                if !bad.is_empty() {
                    return Ok(1);
                }
            }
            Ok(0)
        }
        Command::Serve { root, addr } => {
            let root_dir = root.resolve()?;
            let base = match &root.config {
                Some(c) => c.parent().filter(|p| !p.as_os_str().is_empty()).map_or(PathBuf::from("."), Path::to_path_buf),
                None => PathBuf::from("."),
            };
            let rt = tokio::runtime::Runtime::new().map_err(Failure::other)?;
            rt.block_on(async {
                let listener = bind(addr).await.map_err(Failure::other)?;
                eprintln!("listening on http://{}", listener.local_addr().map_err(Failure::other)?);
                serve(listener, ApiState::new(root_dir, base)).await.map_err(Failure::other)
            })?;
            Ok(0)
        }
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
