use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use socripple::snapshot::ServingState;
use socripple::{Timestamp, UserId};
use socripple_cli::pipeline;
use socripple_cli::service::{self, AppState};
use socripple_cli::RunConfig;

#[derive(Parser)]
#[command(name = "socripple", version, about = "Cold-start retrieval through the social graph")]
struct Cli {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every stage; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world.
    Gen,
    /// Train the two-tower model and the DropoutNet baseline.
    Train,
    /// Build the user KNN index from the trained model.
    Index,
    /// Recall by item-age bucket for SocRipple and the baselines.
    Eval,
    /// Stage 1 vs Stage 1 + graph expansion vs full pipeline.
    Ablate,
    /// Recall over the K x M grid.
    Sweep,
    /// Print the effective configuration.
    ShowConfig,
    /// Write serving state at a point in time to the state directory.
    Snapshot {
        #[arg(long)]
        until: Timestamp,
    },
    /// Run the HTTP service.
    Serve {
        /// Load the state directory instead of replaying the world.
        #[arg(long)]
        from_state: bool,
    },
    /// Print the ranked candidates for one user.
    Retrieve {
        #[arg(long)]
        user: u32,
        #[arg(long)]
        now: Timestamp,
        #[arg(long)]
        n: Option<usize>,
        /// Emit JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        cfg.apply_override(kv)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn serve(cfg: &RunConfig, from_state: bool) -> Result<()> {
    let (state, num_users) = if from_state {
        let dir = cfg.state_dir();
        let state = ServingState::load(&dir).with_context(|| format!("loading state from {}", dir.display()))?;
        let num_users = pipeline::load_world(cfg)?.config.num_users;
        (state, num_users)
    } else {
        let until = match cfg.serve_replay_until {
            Some(t) => t,
            None => pipeline::load_world(cfg)?.config.split,
        };
        pipeline::serving_state(cfg, until)?
    };
    let app = Arc::new(
        AppState::new(state, num_users, cfg.ripple)
            .with_index_path(cfg.index_file())
            .with_state_dir(cfg.state_dir()),
    );
    let addr = format!("{}:{}", cfg.bind, cfg.port);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        tracing::info!(addr = %listener.local_addr()?, "listening");
        service::serve(listener, app).await?;
        Ok(())
    })
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Gen => {
            let dir = pipeline::gen(&cfg)?;
            println!("{}", dir.display());
        }
        Command::Train => {
            let losses = pipeline::train(&cfg)?;
            if let Some(last) = losses.last() {
                println!("final loss {last:.6}");
            }
        }
        Command::Index => {
            let index = pipeline::index(&cfg)?;
            println!("indexed {} users", index.len());
        }
        Command::Eval => print!("{}", pipeline::eval(&cfg)?.to_csv()),
        Command::Ablate => print!("{}", pipeline::ablate(&cfg)?.to_csv()),
        Command::Sweep => print!("{}", pipeline::sweep(&cfg)?.heatmap()),
        Command::ShowConfig => print!("{}", cfg.to_text()),
        Command::Snapshot { until } => {
            let dir = pipeline::snapshot(&cfg, until)?;
            println!("{}", dir.display());
        }
        Command::Serve { from_state } => serve(&cfg, from_state)?,
        Command::Retrieve { user, now, n, json } => {
            let list = pipeline::retrieve_for(&cfg, UserId(user), now, n)?;
            if json {
                println!("{}", serde_json::to_string(&list)?);
            } else {
                println!("rank\titem\tscore\tsource");
                for (rank, r) in list.iter().enumerate() {
                    let score = r.score.map_or("-".to_string(), |s| format!("{s:.6}"));
                    let source = serde_json::to_value(r.source)?;
                    println!("{}\t{}\t{score}\t{}", rank + 1, r.item.0, source.as_str().unwrap_or(""));
                }
            }
        }
    }
    Ok(())
}

fn main() -> std::process::ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    match run(Cli::parse()) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
