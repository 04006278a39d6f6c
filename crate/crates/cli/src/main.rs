use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use loadinv_cli::{CliError, Mode, Pipeline, RunConfig};

#[derive(Parser)]
#[command(name = "loadinv", version, about = "Composite load model parameter inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; flags below take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Recompute even when an up-to-date run manifest exists.
    #[arg(long)]
    force: bool,
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one parameter vector under a fault event.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "ordinary")]
        event: String,
        /// JSON array of 30 values or an object of named overrides.
        #[arg(long)]
        params_file: Option<PathBuf>,
    },
    /// Generate the training dataset.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Sobol sensitivity indices under every configured event.
    Sobol {
        #[command(flatten)]
        common: Common,
    },
    /// Train a denoiser (cdi, jcdi) or the supervised baseline (restfr).
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mode: String,
    },
    /// Draw posterior samples for the held-out truths.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mode: String,
    },
    /// Score CDI, JCDI and the baseline.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Also re-simulate under randomized fault scenarios.
        #[arg(long)]
        ood: bool,
    },
}

fn pipeline(c: &Common) -> Result<Pipeline, CliError> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    if let Some(w) = c.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    let mut p = Pipeline::new(cfg);
    p.force = c.force;
    p.verbose = !c.quiet;
    Ok(p)
}

fn mode(s: &str) -> Result<Mode, CliError> {
    Mode::parse(s).ok_or_else(|| CliError::Usage(format!("unknown mode {s:?}; expected cdi, jcdi or restfr")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { common, event, params_file } => {
            let p = pipeline(&common)?;
            let path = p.simulate(&event, params_file.as_deref())?;
            println!("{}", path.display());
        }
        Command::GenData { common } => {
            pipeline(&common)?.gen_data()?;
        }
        Command::Sobol { common } => {
            pipeline(&common)?.sobol()?;
        }
        Command::Train { common, mode: m } => {
            let m = mode(&m)?;
            pipeline(&common)?.train(m)?;
        }
        Command::Infer { common, mode: m } => {
            let m = mode(&m)?;
            pipeline(&common)?.infer(m)?;
        }
        Command::Eval { common, ood } => {
            pipeline(&common)?.eval(ood)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
