use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use offload_lab::experiment::{compare_modes, run_and_emit, ExperimentConfig};
use offload_lab::taskgen::{generate_taskset, write_taskset};
use offload_lab::transport::read_all_frames;
use offload_lab::wire::{decode_frame, describe_frame};

#[derive(Parser)]
#[command(name = "offload-lab", version, about = "Task-offloading RL lab: run, compare, generate, inspect")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its records and summary.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run local and remote training on the same workload and print deltas.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Also write the comparison here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a task set from the config's `[taskgen]` section.
    Taskgen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretty-print frames from a capture file.
    WireDump { capture: PathBuf },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = run_and_emit(&cfg)?;
            print!("{}", out.summary.to_text());
        }
        Command::Compare { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let (_, _, cmp) = compare_modes(&cfg)?;
            let text = cmp.to_text();
            print!("{text}");
            if let Some(path) = out {
                std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::Taskgen { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let tasks = generate_taskset(&cfg.taskgen)?;
            let f = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            let mut w = BufWriter::new(f);
            write_taskset(&mut w, &tasks)?;
            w.flush()?;
            eprintln!("wrote {} tasks to {}", tasks.len(), out.display());
        }
        Command::WireDump { capture } => {
            let f = File::open(&capture).with_context(|| format!("opening {}", capture.display()))?;
            let frames = read_all_frames(&mut BufReader::new(f)).context("reading capture")?;
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            for (i, bytes) in frames.iter().enumerate() {
                match decode_frame(bytes) {
                    Ok(frame) => writeln!(w, "{i:>6} {}", describe_frame(&frame, bytes.len()))?,
                    Err(e) => writeln!(w, "{i:>6} [{} B] undecodable (code {}): {e}", bytes.len(), e.code())?,
                }
            }
        }
    }
    Ok(())
}
