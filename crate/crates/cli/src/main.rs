use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use colearn_core::partner::{KeyReplay, PartnerPolicy};
use colearn_core::ppr::{make_expert_with_retries, ExpertPolicy};
use colearn_core::study::output::{load_report, summary_table, write_report_files, write_study, Manifest};
use colearn_core::study::{run_familiarization, run_study, run_study_with, Condition, FamiliarizationConfig, Profile, StudyConfig};
use colearn_realtime::output::{read_key_log, write_live_run};
use colearn_realtime::server::serve_on;
use colearn_realtime::{Session, SessionConfig};

/// Overrides every output location when set.
const OUT_DIR_ENV: &str = "COLEARN_OUT_DIR";

#[derive(Parser)]
#[command(name = "colearn", version, about = "Co-learning game studies: batch runs, expert training, reports and live sessions")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

/// Overrides of the protocol size, mainly for pilots and smoke tests.
#[derive(Args, Clone, Copy)]
struct Shape {
    /// Training/testing blocks after the baseline batch.
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    games_per_batch: Option<usize>,
    /// Gradient updates per offline training block.
    #[arg(long)]
    updates: Option<usize>,
}

impl Shape {
    fn config(self, condition: Condition, partner: PartnerPolicy, seed: u64, profile: Profile) -> StudyConfig {
        let mut c = StudyConfig::new(condition, partner, seed, profile);
        if let Some(b) = self.blocks {
            c.blocks = b;
        }
        if let Some(g) = self.games_per_batch {
            c.games_per_batch = g;
        }
        if let Some(u) = self.updates {
            c.sac.updates = u;
        }
        c
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a full 150-game study against a scripted partner.
    RunStudy {
        #[arg(long)]
        condition: Condition,
        /// expert, noisy:<eps> or idle
        #[arg(long, default_value = "expert")]
        partner: PartnerPolicy,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Expert snapshot, required for the ppr condition.
        #[arg(long)]
        expert: Option<PathBuf>,
        #[arg(long, default_value = "desk")]
        profile: Profile,
        #[command(flatten)]
        shape: Shape,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a no-transfer agent with the scripted partner and save it once it qualifies.
    MakeExpert {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "desk")]
        profile: Profile,
        #[command(flatten)]
        shape: Shape,
        /// Fresh seeds to try before giving up.
        #[arg(long, default_value_t = 3)]
        attempts: usize,
    },
    /// Print metric tables and write plots for a finished run directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Seven solo games on the partner's axis from a fixed start point.
    Familiarize {
        #[arg(long, default_value = "expert")]
        partner: PartnerPolicy,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Re-run a recorded live session from its key log and compare with what was played.
    Replay {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        expert: Option<PathBuf>,
    },
    /// Host a live session for a browser client.
    Serve {
        #[arg(long)]
        condition: Condition,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        expert: Option<PathBuf>,
        #[arg(long, default_value = "desk")]
        profile: Profile,
        #[command(flatten)]
        shape: Shape,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long, default_value = "session")]
        session_id: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn out_dir(flag: Option<PathBuf>, fallback: &str) -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).or(flag).unwrap_or_else(|| PathBuf::from(fallback))
}

fn load_expert(path: Option<&Path>) -> colearn_core::Result<Option<Arc<ExpertPolicy>>> {
    path.map(|p| ExpertPolicy::load(p).map(Arc::new)).transpose()
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::RunStudy { condition, partner, seed, expert, profile, shape, out } => {
            let config = shape.config(condition, partner, seed, profile);
            let expert = load_expert(expert.as_deref())?;
            let dir = out_dir(out, &format!("runs/{condition}-{seed}"));
            let run = run_study(&config, expert)?;
            write_study(&dir, &config, &run)?;
            print!("{}", summary_table(&run.report));
            println!("wrote {} ({:.1} s)", dir.display(), run.wall_clock_secs);
            if let Some(e) = run.report.error {
                return Err(format!("study incomplete: {e}").into());
            }
        }
        Command::MakeExpert { seed, out, profile, shape, attempts } => {
            let config = shape.config(Condition::NoTl, PartnerPolicy::expert(), seed, profile);
            let expert = make_expert_with_retries(&config, attempts)?;
            let path = match std::env::var_os(OUT_DIR_ENV) {
                Some(dir) => PathBuf::from(dir).join("expert.json"),
                None => out.unwrap_or_else(|| PathBuf::from("expert.json")),
            };
            expert.save(&config.sac, &path)?;
            println!("qualified expert (seed {}) saved to {}", expert.meta().seed, path.display());
        }
        Command::Report { input } => {
            let files = write_report_files(&input)?;
            print!("{}", summary_table(&load_report(&input)?));
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Command::Familiarize { partner, seed } => {
            let mut p = partner.build(seed)?;
            let record = run_familiarization(p.as_mut(), &FamiliarizationConfig::default())?;
            for g in &record.games {
                println!(
                    "game {}: {:?} in {:.2} s, return {}",
                    g.game_id + 1,
                    g.result.outcome,
                    g.result.duration,
                    g.result.total_return
                );
            }
            println!("{} / {} wins", record.wins(), record.games.len());
        }
        Command::Replay { input, expert } => {
            let manifest = Manifest::load(&input)?;
            let log = read_key_log(&input.join("keys.jsonl"))?;
            let expert = load_expert(expert.as_deref())?;
            let replay = run_study_with(&manifest.config, expert, &mut KeyReplay::new(&log))?;
            if replay.report != load_report(&input)? {
                return Err("replay diverged from the recorded session".into());
            }
            println!("replay of {} key events matches the recorded session", log.len());
        }
        Command::Serve { condition, seed, expert, profile, shape, addr, session_id, out } => {
            let study = shape.config(condition, PartnerPolicy::KeyboardStream, seed, profile);
            let expert = load_expert(expert.as_deref())?;
            let session = Session::new(study, expert, SessionConfig { session_id, ..SessionConfig::default() })?;
            let dir = out_dir(out, &format!("sessions/{condition}-{seed}"));
            let runtime = tokio::runtime::Runtime::new()?;
            let served = runtime.block_on(async {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                println!("listening on ws://{}/ws", listener.local_addr()?);
                // Ctrl-C ends the loop early; whatever was played still gets written.
                let stop = Arc::new(AtomicBool::new(false));
                let on_signal = stop.clone();
                tokio::spawn(async move {
                    if tokio::signal::ctrl_c().await.is_ok() {
                        on_signal.store(true, Ordering::Relaxed);
                    }
                });
                serve_on(session, listener, stop).await
            })?;
            let live = served.session.into_run()?;
            write_live_run(&dir, &live, Some(&served.loop_report.jitter))?;
            println!("session written to {}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
