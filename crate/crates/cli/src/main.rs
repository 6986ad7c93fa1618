//! `plenoctree` command-line tool: scene generation, conversion, rendering,
//! fine-tuning, compression and benchmarking, each as a file-to-file stage.
//!
//! Every option can also be set in the table of the same name in a TOML
//! file passed with `--config`; explicit flags win over the file.

mod commands;
mod exit;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use exit::Failure;
use settings::{ConfigFile, GlobalSettings};

#[derive(Parser, Debug)]
#[command(name = "plenoctree", version, about = "Build, render, fine-tune and compress PlenOctrees")]
struct Cli {
    #[command(flatten)]
    global: GlobalFlags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Serialize)]
struct GlobalFlags {
    /// TOML file with a `[global]` table and one table per subcommand.
    #[arg(long, global = true)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Require bitwise-reproducible output.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    deterministic: Option<bool>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true)]
    log_level: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render an analytic scene into a posed image dataset.
    Gen(commands::GenFlags),
    /// Convert an analytic scene into a tree.
    Convert(commands::ConvertFlags),
    /// Render a tree from a camera rig or a dataset's cameras.
    Render(commands::RenderFlags),
    /// Fine-tune a tree's leaf values on a dataset.
    Finetune(commands::FinetuneFlags),
    /// Write the compressed `.plocz` form of a tree.
    Compress(commands::CompressFlags),
    /// Expand a `.plocz` file into a raw `.ploc` tree.
    Decompress(commands::DecompressFlags),
    /// Time octree rendering, optionally against brute-force marching.
    Bench(commands::BenchFlags),
    /// Write a `.plocz` tree plus a manifest for the web viewer.
    ExportWeb(commands::ExportWebFlags),
}

fn init(global: &GlobalSettings) -> Result<(), Failure> {
    let level: log::LevelFilter = global.log_level.parse().map_err(|_| Failure::config(format!("unknown log level {:?}", global.log_level)))?;
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
    if global.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(global.threads)
            .build_global()
            .map_err(|e| Failure::config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let file = ConfigFile::load(cli.global.config.as_deref())?;
    let global: GlobalSettings = file.resolve("global", &cli.global)?;
    init(&global)?;
    match &cli.command {
        Command::Gen(f) => commands::gen(&global, file.resolve("gen", f)?),
        Command::Convert(f) => commands::convert(&global, file.resolve("convert", f)?),
        Command::Render(f) => commands::render(&global, file.resolve("render", f)?),
        Command::Finetune(f) => commands::finetune(&global, file.resolve("finetune", f)?),
        Command::Compress(f) => commands::compress(&global, file.resolve("compress", f)?),
        Command::Decompress(f) => commands::decompress(&global, file.resolve("decompress", f)?),
        Command::Bench(f) => commands::bench(&global, file.resolve("bench", f)?),
        Command::ExportWeb(f) => commands::export_web(&global, file.resolve("export-web", f)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::EXIT_CONFIG as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code as u8)
        }
    }
}
