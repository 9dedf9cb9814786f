use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use graspsim::service::{self, SessionConfig, ServiceError};

#[derive(Parser)]
#[command(name = "graspsim", about = "Deterministic tabletop grasping simulator")]
struct Cli {
    /// Overrides the seed in any config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Hosts sessions over WebSocket, one session per connection.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8765")]
        bind: String,
    },
    /// Replays a script and prints the transcript.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Writes <prefix>.ppm and <prefix>.pgm for the configured scene.
    Snapshot {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_prefix: PathBuf,
    },
}

fn load_config(path: &PathBuf, seed: Option<u64>) -> Result<SessionConfig, ServiceError> {
    let mut cfg = SessionConfig::from_json(&std::fs::read_to_string(path)?)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), ServiceError> {
    match cli.command {
        Command::Serve { bind } => {
            let server = service::Server::bind(bind.as_str())?;
            eprintln!("listening on ws://{}", server.local_addr()?);
            server.run()
        }
        Command::Run { config, script, out } => {
            let cfg = load_config(&config, cli.seed)?;
            let transcript = service::run_transcript(&cfg, &std::fs::read_to_string(script)?)?;
            match out {
                Some(p) => std::fs::write(p, transcript)?,
                None => print!("{transcript}"),
            }
            Ok(())
        }
        Command::Snapshot { config, out_prefix } => {
            let cfg = load_config(&config, cli.seed)?;
            let cam = cfg.camera.pose(&cfg.scene);
            let (ppm, pgm) = service::snapshot(&cfg.scene, &cam, &cfg.camera.intrinsics, &out_prefix)?;
            eprintln!("wrote {} and {}", ppm.display(), pgm.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
