//! `gibbsfit`: batch pipeline from cell tables to fitted, diagnosed and
//! simulated multitype Gibbs models. Outputs are CSV and JSON only.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gibbsfit::{Error, Result};

use config::RunConfig;
use output::Output;

#[derive(Parser)]
#[command(name = "gibbsfit", version, about = "Fit, diagnose and simulate multitype Gibbs point process models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-patient windows and their common intersection.
    Window(Flags),
    /// Inhomogeneous K and L functions per patient and pooled; suggests a max range.
    Summaries(Flags),
    /// Hardcore estimate and profile pseudolikelihood over ranges and slopes.
    Profile(Flags),
    /// Fits the model menu and writes model JSON plus coefficient tables.
    Fit(Flags),
    /// Residual totals and the RMSE comparison of fitted models.
    Residuals(Flags),
    /// Simulates every patient from a fitted model.
    Simulate(Flags),
}

/// Flags override the values of `--config`.
#[derive(Args, Clone, Debug, Default)]
struct Flags {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cohort manifest JSON.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Intensity grid side.
    #[arg(long)]
    grid: Option<usize>,
    /// Dummy grid side.
    #[arg(long)]
    dummy: Option<usize>,
    /// Border erosion distance.
    #[arg(long)]
    border: Option<f64>,
    /// `all` or comma-separated menu labels, e.g. `fiksel1,poisson`.
    #[arg(long)]
    models: Option<String>,
    /// Largest admissible interaction range.
    #[arg(long)]
    max_range: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Irregular-parameter file from `profile`.
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Fitted model file; repeatable.
    #[arg(long = "model")]
    models_files: Vec<PathBuf>,
    /// Sampler steps.
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    burn_in: Option<u64>,
}

impl Flags {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = RunConfig::load(self.config.as_deref())?;
        if let Some(v) = &self.manifest {
            c.manifest = Some(v.clone());
        }
        if let Some(v) = &self.out {
            c.out = v.clone();
        }
        if let Some(v) = self.grid {
            c.grid = v;
        }
        if self.dummy.is_some() {
            c.dummy = self.dummy;
        }
        if self.border.is_some() {
            c.border = self.border;
        }
        if let Some(v) = &self.models {
            c.models = v.clone();
        }
        if self.max_range.is_some() {
            c.max_range = self.max_range;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if self.profile.is_some() {
            c.profile = self.profile.clone();
        }
        if !self.models_files.is_empty() {
            c.model_files = self.models_files.clone();
        }
        if let Some(v) = self.steps {
            c.steps = v;
        }
        if let Some(v) = self.burn_in {
            c.burn_in = v;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Prints the machine-readable error report on stderr.
pub(crate) fn report_error(e: &Error, model: Option<&str>) {
    let mut doc = serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
    if let Some(m) = model {
        doc["error"]["model"] = m.into();
    }
    eprintln!("{doc}");
}

fn run(cli: Cli) -> Result<ExitCode> {
    let (Command::Window(flags)
    | Command::Summaries(flags)
    | Command::Profile(flags)
    | Command::Fit(flags)
    | Command::Residuals(flags)
    | Command::Simulate(flags)) = &cli.command;
    let cfg = flags.resolve()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = flags.threads {
        if n == 0 {
            return Err(Error::InvalidArgument("--threads must be positive".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let out = Output::new(&cfg.out, cfg.hash())?;
    pool.install(|| {
        match &cli.command {
            Command::Window(_) => commands::window(&cfg, &out)?,
            Command::Summaries(_) => commands::summaries(&cfg, &out)?,
            Command::Profile(_) => commands::profile(&cfg, &out)?,
            Command::Fit(_) => {
                if commands::fit(&cfg, &out)? > 0 {
                    return Ok(ExitCode::from(2));
                }
            }
            Command::Residuals(_) => commands::residuals(&cfg, &out)?,
            Command::Simulate(_) => commands::simulate(&cfg, &out)?,
        }
        Ok(ExitCode::SUCCESS)
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            report_error(&e, None);
            ExitCode::FAILURE
        }
    }
}
