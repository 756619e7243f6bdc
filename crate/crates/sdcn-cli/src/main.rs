//! `sdcn` — generate synthetic chip data, train the decomposition +
//! classification network, run the sparse-coding baseline, evaluate, export.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use config::ConfigFile;

#[derive(Parser, Debug)]
#[command(
    name = "sdcn",
    version,
    about = "Simultaneous decomposition and classification of noisy radar chips"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Values resolve as: explicit flag, then
/// `--config` file entry of the same name, then the built-in default.
#[derive(Args, Debug, Clone)]
struct Common {
    /// Global RNG seed (config key: seed; default 42)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (env SDCN_OUT_DIR; default ".")
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Cap on worker threads (default: available cores). Results do not
    /// depend on this value.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// key = value config file; explicit flags override its entries
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate training and test dataset containers
    GenData(commands::gen_data::GenDataArgs),
    /// Train a network on a dataset; writes a checkpoint and history CSV
    Train(commands::train::TrainArgs),
    /// Evaluate methods over polarization combos and noise levels
    Eval(commands::eval::EvalArgs),
    /// Run the finite-difference gradient suites
    Gradcheck(commands::gradcheck::GradcheckArgs),
    /// Print the header of a dataset, checkpoint or dictionary file
    Describe(commands::describe::DescribeArgs),
}

/// Resolved global context handed to each command.
pub struct Ctx {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub cfg: ConfigFile,
}

fn resolve_ctx(common: &Common) -> anyhow::Result<Ctx> {
    let cfg = match &common.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let seed = config::layered(common.seed, &cfg, "seed", 42)?;
    let out_dir = common
        .out_dir
        .clone()
        .or_else(|| cfg.get_str("out_dir").map(PathBuf::from))
        .or_else(|| std::env::var_os("SDCN_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;
    let threads = config::layered(common.threads, &cfg, "threads", 0)?;
    if threads > 0 {
        // A second build_global is ignored; results never depend on N.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    Ok(Ctx { seed, out_dir, cfg })
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData(args) => {
            let ctx = resolve_ctx(&args.common)?;
            commands::gen_data::run(&ctx, &args)
        }
        Command::Train(args) => {
            let ctx = resolve_ctx(&args.common)?;
            commands::train::run(&ctx, &args)
        }
        Command::Eval(args) => {
            let ctx = resolve_ctx(&args.common)?;
            commands::eval::run(&ctx, &args)
        }
        Command::Gradcheck(args) => {
            let ctx = resolve_ctx(&args.common)?;
            commands::gradcheck::run(&ctx, &args)
        }
        Command::Describe(args) => commands::describe::run(&args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e);
            ExitCode::from(2)
        }
    }
}
