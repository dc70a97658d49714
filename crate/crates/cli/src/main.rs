use clap::{Parser, Subcommand};
use ibrsim_cli::commands::{cmd_compare, cmd_run, cmd_solve, format_compare, format_solve};
use std::path::PathBuf;
use std::process::ExitCode;

/// Deterministic simulator for fault-tolerant power allocation across
/// networked grid-following inverters.
#[derive(Parser)]
#[command(name = "ibrsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write timeseries.csv, allocator_trace.csv,
    /// metrics.json and manifest.json into the output directory.
    Run {
        config: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Record every Nth plant step (overrides the config).
        #[arg(long)]
        decimate: Option<usize>,
        /// Also emit SVG line charts.
        #[arg(long)]
        svg: bool,
    },
    /// Solve the allocator offline and print the converged split with the
    /// centralized KKT comparison.
    Solve { config: PathBuf },
    /// Run the scenario with both splitters and print a side-by-side
    /// metrics table.
    Compare {
        config: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        decimate: Option<usize>,
        #[arg(long)]
        svg: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, decimate, svg } => {
            cmd_run(&config, &out, decimate, svg).map(|outcome| {
                println!(
                    "wrote {} files to {} in {:.3} s",
                    outcome.manifest.files.len() + 1,
                    outcome.manifest.out_dir,
                    outcome.manifest.wall_clock_s
                );
                for ev in &outcome.metrics.events {
                    println!(
                        "event {} at t = {} s: max deviation {:.4e} W ({:.2}%), settling {}",
                        ev.kind,
                        ev.t_s,
                        ev.max_abs_dev_w,
                        100.0 * ev.max_rel_dev,
                        ev.settling_time_s
                            .map(|t| format!("{t:.4} s"))
                            .unwrap_or_else(|| "never".to_string())
                    );
                }
                if outcome.metrics.events.is_empty() {
                    println!(
                        "no events; post-transient max deviation {:.3}%",
                        100.0 * outcome.metrics.pre_event_max_rel_dev
                    );
                }
            })
        }
        Command::Solve { config } => {
            cmd_solve(&config).map(|outcome| print!("{}", format_solve(&outcome)))
        }
        Command::Compare { config, out, decimate, svg } => {
            cmd_compare(&config, &out, decimate, svg)
                .map(|outcome| print!("{}", format_compare(&outcome)))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
