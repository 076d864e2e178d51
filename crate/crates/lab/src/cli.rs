//! `icgps` subcommands.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checks::{run_checks, Faults};
use crate::config::{self, relative_to, ExperimentConfig, RunConfig};
use crate::error::{LabError, Result};
use crate::experiments::{run_experiment, train_from_config, Diagnostic};
use crate::output::{self, OutDir};
use crate::{checkpoint, store};

#[derive(Debug, Parser)]
#[command(name = "icgps", version, about = "In-context generative posterior sampling for the censored newsvendor")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the offline corpus and fit the completion model.
    Train(RunArgs),
    /// Run the experiment named in the config.
    Run(RunArgs),
    /// Validate a logged-sales CSV and write it in normalized form.
    Ingest(IngestArgs),
    /// Run the invariant checks and write diagnostics.csv.
    Check(CheckArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Output directory [default: the config's `output`, else ./out].
    #[arg(long, env = "ICGPS_OUT")]
    pub out: Option<PathBuf>,
    /// Worker threads for trial-level parallelism.
    #[arg(long, env = "ICGPS_THREADS")]
    pub threads: Option<usize>,
    /// Replace existing output files.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// CSV with columns episode_id, t, order, sales, censored and optional
    /// group and demand.
    pub csv: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Fault {
    GradSign,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Inject a known bug to confirm the checks catch it.
    #[arg(long, value_enum, hide = true)]
    pub inject_fault: Option<Fault>,
    #[command(flatten)]
    pub common: Common,
}

pub const STORE_OUT: &str = "store.csv";
pub const CORPUS_OUT: &str = "corpus.csv";

fn init_threads(n: Option<usize>) -> Result<()> {
    if let Some(n) = n {
        if n == 0 {
            return Err(LabError::config("--threads", "must be at least 1"));
        }
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn load_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match config::load(&args.config) {
        Err(LabError::MissingArtifact(p)) => {
            return Err(LabError::config("--config", format!("no such file {}", p.display())));
        }
        other => other?,
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig, c: &Common) -> OutDir {
    OutDir::new(cfg.output_dir(c.out.as_deref()), c.force)
}

/// Outcome of a subcommand, for the caller to print.
#[derive(Debug, Default)]
pub struct Report {
    pub lines: Vec<String>,
    pub diagnostics: Vec<Diagnostic>,
}

pub fn train(args: &RunArgs) -> Result<Report> {
    init_threads(args.common.threads)?;
    let cfg = load_config(args)?;
    let dir = out_dir(&cfg, &args.common);
    let ckpt = cfg.checkpoint_path(dir.root());
    let rel = |p: &Path| p.strip_prefix(dir.root()).unwrap_or(p).to_string_lossy().into_owned();
    let mut claims = vec![rel(&ckpt), output::TRAIN_REPORT.into(), output::RESOLVED.into()];
    if cfg.corpus.write_csv {
        claims.push(CORPUS_OUT.into());
    }
    dir.claim(&claims)?;
    let resolved = cfg.resolved_toml()?;
    let (corpus, model, report) = train_from_config(&cfg)?;
    let mut r = Report::default();
    write_file(&ckpt, checkpoint::to_text(&model).as_bytes(), args.common.force)?;
    output::write_train_report(&report, dir.create(output::TRAIN_REPORT)?)?;
    dir.write(output::RESOLVED, resolved.as_bytes())?;
    if cfg.corpus.write_csv {
        store::write_corpus(&corpus, dir.create(CORPUS_OUT)?)?;
        r.lines.push(format!("wrote {}", dir.path(CORPUS_OUT).display()));
    }
    r.lines.push(format!(
        "trained on {} episodes ({} held out); best epoch {} with validation NLL {:.4}",
        report.n_train_episodes,
        report.n_val_episodes,
        report.best_epoch + 1,
        report.best_val_nll()
    ));
    r.lines.push(format!("wrote {}", ckpt.display()));
    r.lines.push(format!("wrote {}", dir.path(output::TRAIN_REPORT).display()));
    r.lines.push(format!("wrote {}", dir.path(output::RESOLVED).display()));
    Ok(r)
}

fn write_file(path: &Path, body: &[u8], force: bool) -> Result<()> {
    if !force && path.exists() {
        return Err(LabError::WouldOverwrite(path.to_path_buf()));
    }
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d).map_err(|e| LabError::io(d, e))?;
    }
    std::fs::write(path, body).map_err(|e| LabError::io(path, e))
}

pub fn run(args: &RunArgs) -> Result<Report> {
    init_threads(args.common.threads)?;
    let cfg = load_config(args)?;
    let exp = cfg
        .experiment
        .as_ref()
        .ok_or_else(|| LabError::config("experiment", "`run` needs an [experiment] section"))?;
    let dir = out_dir(&cfg, &args.common);
    let model = if exp.needs_checkpoint() {
        Some(checkpoint::load(&cfg.checkpoint_path(dir.root()))?)
    } else {
        None
    };
    let st = match exp {
        ExperimentConfig::IngestEval(s) => Some(store::load(&relative_to(Some(&args.config), &s.store))?),
        _ => None,
    };
    let out = run_experiment(&cfg, model.as_ref(), st.as_ref())?;
    let written = output::write_run(&dir, &out)?;
    let mut r = Report {
        lines: written.iter().map(|p| format!("wrote {}", p.display())).collect(),
        diagnostics: out.diagnostics,
    };
    r.lines.insert(0, format!("{}: done", exp.name()));
    Ok(r)
}

pub fn ingest(args: &IngestArgs) -> Result<Report> {
    let st = store::load(&args.csv)?;
    let dir = OutDir::new(args.common.out.clone().unwrap_or_else(|| PathBuf::from("out")), args.common.force);
    store::write_store(&st, dir.create(STORE_OUT)?)?;
    Ok(Report {
        lines: vec![
            format!(
                "{} episodes, {} steps, {:.1}% censored",
                st.len(),
                st.steps(),
                100.0 * st.censored_fraction()
            ),
            format!("wrote {}", dir.path(STORE_OUT).display()),
        ],
        diagnostics: Vec::new(),
    })
}

pub fn check(args: &CheckArgs) -> Result<Report> {
    init_threads(args.common.threads)?;
    let faults = Faults {
        flip_gradient_sign: args.inject_fault == Some(Fault::GradSign),
    };
    let diags = run_checks(args.seed, faults)?;
    let dir = OutDir::new(args.common.out.clone().unwrap_or_else(|| PathBuf::from("out")), args.common.force);
    output::write_diagnostics(&diags, dir.create(output::DIAGNOSTICS)?)?;
    Ok(Report {
        lines: vec![format!("wrote {}", dir.path(output::DIAGNOSTICS).display())],
        diagnostics: diags,
    })
}

/// Dispatch, print, and map the outcome to a process exit code.
pub fn main_with(cli: Cli) -> i32 {
    let is_check = matches!(cli.command, Command::Check(_));
    let result = match &cli.command {
        Command::Train(a) => train(a),
        Command::Run(a) => run(a),
        Command::Ingest(a) => ingest(a),
        Command::Check(a) => check(a),
    };
    match result {
        Ok(r) => {
            for d in &r.diagnostics {
                println!(
                    "{} {} = {} (threshold {})",
                    if d.pass { "PASS" } else { "FAIL" },
                    d.name,
                    d.statistic,
                    d.threshold
                );
            }
            for l in &r.lines {
                println!("{l}");
            }
            let failed = r.diagnostics.iter().filter(|d| !d.pass).count();
            if is_check && failed > 0 {
                let e = LabError::ChecksFailed(failed);
                eprintln!("error: {e}");
                e.exit_code()
            } else {
                0
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
