use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fadmm::experiments::{self, ExperimentSpec, Overrides};
use fadmm::Error;

#[derive(Parser)]
#[command(name = "fadmm", version, about = "Market making under a mean-reverting price fad")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "n-paths")]
        n_paths: Option<usize>,
        /// Worker threads (defaults to all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Override any config key, e.g. `--set gamma=2 --set fd_n_t=8000`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric(_) | Error::State(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let Command::Run {
        config,
        out,
        seed,
        n_paths,
        threads,
        set,
    } = cli.command;

    if let Some(n) = threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }

    let overrides = Overrides {
        out_dir: out,
        seed,
        n_paths,
        set,
    };
    let result = ExperimentSpec::from_file(&config, &overrides).and_then(|spec| {
        eprintln!(
            "running {} (seed {}, {} paths) into {}",
            spec.experiment.name(),
            spec.seed,
            spec.n_paths,
            spec.out_dir.display()
        );
        experiments::run(&spec)
    });
    match result {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
