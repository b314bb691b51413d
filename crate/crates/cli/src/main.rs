mod common;
mod run;
mod stats;
mod summary;
mod table;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "pfl", version, about = "Personalized federated learning backdoor simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment for every seed and write metrics,
    /// summary, and the resolved config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the config's output_dir, then ./out.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace existing output files.
        #[arg(long)]
        overwrite: bool,
    },
    /// Report the per-client shard sizes and class histograms a run would use.
    PartitionStats {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        overwrite: bool,
    },
    /// Tabulate one or more summary.json files (globs allowed).
    Table {
        #[arg(required = true)]
        summaries: Vec<String>,
        /// Destination CSV; defaults to ./table.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        overwrite: bool,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage mistakes are validation failures (exit 1), not I/O.
            let code = if e.exit_code() == 0 { 0 } else { 1 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match cli.command {
        Command::Run { config, out, overwrite } => run::cmd_run(&config, out, overwrite),
        Command::PartitionStats { config, out, overwrite } => {
            stats::cmd_partition_stats(&config, out, overwrite)
        }
        Command::Table { summaries, out, overwrite } => {
            table::cmd_table(&summaries, out, overwrite)
        }
    };
    match result {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code().into());
        }
    }
}
