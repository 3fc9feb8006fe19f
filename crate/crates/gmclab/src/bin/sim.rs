use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use gmclab::config::{load_config, StudyKind};
use gmclab::exec::Execution;
use gmclab::harness::{resolve_out_dir, run, RunOptions};
use gmclab::validate::CriterionResult;
use gmclab::Error;

#[derive(Parser, Debug)]
#[command(name = "sim", version, about = "Run a gmclab study from a TOML config")]
struct Cli {
    /// sample | gmc-stats | solve | wick | potential | project | converge | validate
    kind: StudyKind,
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "GMCLAB_OUT_DIR")]
    out: Option<PathBuf>,
    /// Worker threads (0 or absent: all cores).
    #[arg(long, env = "GMCLAB_WORKERS")]
    workers: Option<usize>,
    /// Run replicates in order on the calling thread.
    #[arg(long)]
    sequential: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: &Cli) -> Result<ExitCode, Error> {
    let loaded = load_config(&cli.config)?;
    if loaded.config.kind != cli.kind {
        return Err(Error::Validation(vec![format!(
            "config describes a `{}` study but `{}` was requested",
            loaded.config.kind, cli.kind
        )]));
    }
    let opts = RunOptions {
        out_dir: cli.out.clone(),
        seed: cli.seed,
        workers: cli.workers,
        exec: if cli.sequential { Execution::Sequential } else { Execution::Parallel },
    };
    let manifest = run(&loaded, &opts)?;
    for w in &manifest.warnings {
        eprintln!("warning: {w}");
    }
    if cli.kind == StudyKind::Validate {
        let path = resolve_out_dir(&loaded, &opts).join("validation.json");
        let results: Vec<CriterionResult> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        for r in &results {
            println!("{}", r.line());
        }
        if results.iter().any(|r| !r.passed) {
            return Ok(ExitCode::from(1));
        }
    } else {
        println!("{} study finished in {:.2}s; {} files", manifest.kind, manifest.wall_time_s, manifest.files.len());
    }
    Ok(ExitCode::SUCCESS)
}
