//! `mvsde`: batch front-end for simulation, skeletons, rate functions and
//! scaling experiments.
//!
//! Exit codes: 0 success or pass, 1 task failure, 2 configuration error.

mod commands;
mod config;
mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use commands::{ExperimentName, Failure, Invocation, Task};
use config::{ConfigError, LoadedConfig};
use output::{sha256_hex, Manifest};

#[derive(Parser)]
#[command(
    name = "mvsde",
    version,
    about = "Path-dependent multivalued McKean-Vlasov SDE toolkit"
)]
struct Cli {
    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: configured value, else all cores).
    #[arg(long, global = true, env = "MVSDE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the system named in `[simulate]`.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Solve the skeleton equation for the `[control]` block.
    Skeleton {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate the rate function of the `[rate]` target.
    Rate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a scaling experiment; exits 1 when it fails its checks.
    Experiment {
        kind: ExperimentName,
        #[arg(long)]
        config: PathBuf,
    },
    /// Rerun a task from its manifest into `--out` and compare file digests.
    Replay { manifest: PathBuf },
    /// List the built-in problems.
    Presets,
}

const EXIT_FAIL: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool, String> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err("thread budget must be at least 1".into());
        }
        b = b.num_threads(n);
    }
    b.build().map_err(|e| e.to_string())
}

fn execute(cli: &Cli, loaded: &LoadedConfig, task: Task, seed: Option<u64>) -> Result<bool, Failure> {
    let out = cli.out.clone().unwrap_or_else(|| loaded.output_dir());
    let pool = thread_pool(cli.threads.or(loaded.config.run.threads)).map_err(|m| loaded.error("threads", m))?;
    pool.install(|| {
        commands::run(&Invocation {
            loaded,
            task,
            seed,
            out,
        })
    })
}

fn config_error(e: &ConfigError) -> ExitCode {
    eprintln!("config error: {e}");
    ExitCode::from(EXIT_CONFIG)
}

fn finish(result: Result<bool, Failure>, what: &str) -> ExitCode {
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("{what}: failed its checks");
            ExitCode::from(EXIT_FAIL)
        }
        Err(Failure::Config(e)) => config_error(&e),
        Err(Failure::Task(e)) => {
            error!("{e:#}");
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_FAIL)
        }
    }
}

fn replay(cli: &Cli, manifest_path: &Path) -> ExitCode {
    let manifest: Manifest = match fs::read_to_string(manifest_path)
        .map_err(|e| e.to_string())
        .and_then(|t| serde_json::from_str(&t).map_err(|e| e.to_string()))
    {
        Ok(m) => m,
        Err(e) => {
            eprintln!("config error: {}: {e}", manifest_path.display());
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let Some(out) = cli.out.clone() else {
        eprintln!("config error: replay needs --out");
        return ExitCode::from(EXIT_CONFIG);
    };
    let loaded = match LoadedConfig::from_text(
        &manifest.config_path,
        manifest.config_dir.clone(),
        manifest.config.clone(),
    ) {
        Ok(l) => l,
        Err(e) => return config_error(&e),
    };
    let cli_out = Cli {
        seed: None,
        out: Some(out.clone()),
        threads: cli.threads,
        command: Command::Presets,
    };
    let result = execute(
        &cli_out,
        &loaded,
        manifest.task,
        Some(cli.seed.unwrap_or(manifest.seed)),
    );
    let code = finish(result, "replay");
    let mut mismatched = Vec::new();
    for f in &manifest.files {
        match fs::read(out.join(&f.name)) {
            Ok(bytes) if sha256_hex(&bytes) == f.sha256 => {}
            _ => mismatched.push(f.name.as_str()),
        }
    }
    if !mismatched.is_empty() {
        eprintln!("replay differs from the manifest in {mismatched:?}");
        return ExitCode::from(EXIT_FAIL);
    }
    code
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (path, task, what) = match &cli.command {
        Command::Presets => {
            for p in mvsde::presets::Preset::ALL {
                println!("{}", p.name());
            }
            return ExitCode::SUCCESS;
        }
        Command::Replay { manifest } => return replay(&cli, manifest),
        Command::Simulate { config } => (config, Task::Simulate, "simulate"),
        Command::Skeleton { config } => (config, Task::Skeleton, "skeleton"),
        Command::Rate { config } => (config, Task::Rate, "rate"),
        Command::Experiment { kind, config } => (config, Task::from(*kind), "experiment"),
    };
    let loaded = match LoadedConfig::from_file(path) {
        Ok(l) => l,
        Err(e) => return config_error(&e),
    };
    let result = execute(&cli, &loaded, task, cli.seed);
    finish(result, what)
}
