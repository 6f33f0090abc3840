use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use gcalab::data::{generate_synthetic, load_log, split_leave_one_out, write_log};

use crate::analyze::analyze;
use crate::error::{Result, RunError};
use crate::report::write_report;
use crate::scaling::run_scaling_curve;
use crate::spec::{DataSource, ExperimentConfig, SweepSpec};
use crate::store;
use crate::sweep::{run_sweep, SweepOptions, SweepOutcome};

#[derive(Debug, Parser)]
#[command(name = "gcalab", version, about = "Train, sweep and analyze dual-domain sequential recommenders with gated cross-attention")]
pub struct Cli {
    /// Experiment config (JSON; lines starting with // are ignored).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run only this seed (for gen-data: the data seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "GCALAB_OUT", default_value = "gcalab-out")]
    pub out: PathBuf,
    /// Skip config x seed cells that already completed.
    #[arg(long, global = true)]
    pub resume: bool,
    /// Cells trained in parallel.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the config's interaction log to <out>/data.
    GenData,
    /// Train the base run for each of its seeds into <out>/train.
    Train,
    /// Run the sweep grid into <out>/sweep.
    Sweep,
    /// Run the parameter scaling curve into <out>/scaling.
    ScalingCurve,
    /// Correlations and cosine summaries into <out>/analysis.
    Analyze {
        /// Results directory to read (default: <out>/sweep).
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Collect every result under <out> into report.md and report.json.
    Report,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code: 0 on success, 1 when a run fails and 2
/// for usage or configuration errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| RunError::Config("this command needs --config <path>".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.run.seeds = vec![seed];
    }
    Ok(cfg)
}

fn options(cli: &Cli) -> SweepOptions {
    SweepOptions {
        resume: cli.resume,
        jobs: cli.jobs,
        checkpoints: true,
    }
}

fn print_outcome(dir: &Path, out: &SweepOutcome) -> Result<()> {
    for s in &out.summaries {
        println!(
            "{}  runs={}  params={}  ndcg10_a={:.4}  ndcg10_b={:.4}",
            s.config_id,
            s.runs,
            s.param_count,
            s.mean("ndcg10_a").unwrap_or(f64::NAN),
            s.mean("ndcg10_b").unwrap_or(f64::NAN)
        );
    }
    println!(
        "{} cells trained, {} skipped, {} failed; results in {}",
        out.executed,
        out.skipped,
        out.failed.len(),
        dir.display()
    );
    for f in &out.failed {
        eprintln!("failed: {} seed {}: {}", f.config_id, f.seed, f.error);
    }
    if !out.failed.is_empty() {
        return Err(RunError::RunsFailed(out.failed.len()));
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<()> {
    let out = &cli.out;
    match &cli.command {
        Command::GenData => {
            let cfg = ExperimentConfig::load(
                cli.config
                    .as_ref()
                    .ok_or_else(|| RunError::Config("gen-data needs --config <path>".into()))?,
            )?;
            let dir = out.join("data");
            std::fs::create_dir_all(&dir)?;
            let log = match &cfg.run.data {
                DataSource::Synthetic(spec) => {
                    let mut spec = spec.clone();
                    if let Some(seed) = cli.seed {
                        spec.seed = seed;
                    }
                    store::write_atomic(&dir.join("synth.json"), &serde_json::to_vec_pretty(&spec)?)?;
                    generate_synthetic(&spec)?
                }
                DataSource::Tsv { path, .. } => load_log(path)?.0,
            };
            let path = dir.join("interactions.tsv");
            write_log(&log, &path)?;
            let split = split_leave_one_out(&log, gcalab::data::DEFAULT_MIN_LEN)?;
            let stats = serde_json::json!({
                "interactions": log.rows.len(),
                "vocab_a": log.vocab_a,
                "vocab_b": log.vocab_b,
                "users": split.users.len(),
                "dropped_users": split.dropped,
            });
            store::write_atomic(&dir.join("stats.json"), &serde_json::to_vec_pretty(&stats)?)?;
            println!("{stats}");
            println!("wrote {}", path.display());
        }
        Command::Train => {
            let cfg = load_config(cli)?;
            let dir = out.join("train");
            let spec = SweepSpec {
                base: cfg.run,
                axes: Default::default(),
            };
            let outcome = run_sweep(&spec, &dir, &options(cli))?;
            print_outcome(&dir, &outcome)?;
        }
        Command::Sweep => {
            let cfg = load_config(cli)?;
            let dir = out.join("sweep");
            let outcome = run_sweep(&cfg.sweep_spec()?, &dir, &options(cli))?;
            print_outcome(&dir, &outcome)?;
        }
        Command::ScalingCurve => {
            let cfg = load_config(cli)?;
            let dir = out.join("scaling");
            let report = run_scaling_curve(&cfg.scaling_spec()?, &dir, &options(cli))?;
            for p in &report.points {
                println!(
                    "{:?}  d={}  params={}  ndcg10_a={:.4}  ndcg10_b={:.4}",
                    p.kind, p.d, p.param_count, p.ndcg10_a_mean, p.ndcg10_b_mean
                );
            }
            if let Some(m) = &report.matching {
                println!("parameter match: target {} rel_err {:.4}", m.target, m.rel_err);
            }
            println!("results in {}", dir.display());
            if !report.failed.is_empty() {
                return Err(RunError::RunsFailed(report.failed.len()));
            }
        }
        Command::Analyze { records } => {
            let src = records.clone().unwrap_or_else(|| out.join("sweep"));
            let dir = out.join("analysis");
            let report = analyze(&src, &dir)?;
            for c in &report.correlations {
                match c.r {
                    Some(r) => println!("r({}, {}) = {r:.4} over {}", c.x, c.y, c.n),
                    None => println!("r({}, {}) omitted", c.x, c.y),
                }
            }
            for n in &report.notices {
                println!("note: {n}");
            }
            println!("results in {}", dir.display());
        }
        Command::Report => {
            let report = write_report(out)?;
            println!(
                "report with {} section(s) written to {}",
                report.sections.len(),
                out.join("report.md").display()
            );
        }
    }
    Ok(())
}
