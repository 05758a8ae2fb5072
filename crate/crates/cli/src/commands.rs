use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use wdunet_al::dataset::{generate_dataset, load_dataset};
use wdunet_al::evaluate::{evaluate_case, MeanStd, UnitScore};
use wdunet_al::experiment::ExperimentConfig;
use wdunet_al::{run_experiment, Learner};
use wdunet_nn::{Persist, SegModel};

use crate::config::{absolute, load_config, load_resolved, RESOLVED_CONFIG};
use crate::error::CliError;
use crate::manifest::RunManifest;
use crate::report::{aggregate, load_summaries, report_text, write_report};

#[derive(Debug, Parser)]
#[command(name = "wdunet", version, about = "Pool-based active learning for 3D airway segmentation")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Allow writing into a non-empty directory.
    #[arg(long, global = true)]
    pub force: bool,
    /// Continue the interrupted run in this directory.
    #[arg(long, global = true)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic phantom dataset.
    Generate,
    /// Run an active learning experiment.
    Run,
    /// Score a checkpoint on every case of a dataset.
    Evaluate {
        /// Checkpoint directory (`<run>/checkpoints/round<k>`).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory; defaults to the configured one.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Restrict to these case ids.
        #[arg(long = "case")]
        cases: Vec<String>,
    },
    /// Tabulate completed runs by strategy and label budget.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate => generate(&cli.global),
        Command::Run => run(&cli.global),
        Command::Evaluate { checkpoint, data, cases } => evaluate(&cli.global, &checkpoint, data.as_deref(), &cases),
        Command::Report { runs } => report(&cli.global, &runs),
    }
}

fn config_or_default(g: &Global) -> Result<ExperimentConfig, CliError> {
    match &g.config {
        Some(p) => load_config(p),
        None => {
            let mut cfg = ExperimentConfig::default();
            cfg.data.dir = absolute(&cfg.data.dir);
            Ok(cfg)
        }
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn is_non_empty(dir: &Path) -> bool {
    fs::read_dir(dir).map(|mut d| d.next().is_some()).unwrap_or(false)
}

fn generate(g: &Global) -> Result<(), CliError> {
    let mut cfg = config_or_default(g)?;
    if let Some(seed) = g.seed {
        cfg.generate.seed = seed;
    }
    let out = g.out.clone().map(|p| absolute(&p)).unwrap_or_else(|| cfg.data.dir.clone());
    if is_non_empty(&out) && !g.force {
        return Err(CliError::Config(format!("{} is not empty; pass --force to overwrite", out.display())));
    }
    let mut manifest = RunManifest::start("generate", &out);
    manifest.config_path = g.config.clone();
    manifest.config_hash = Some(cfg.hash());
    manifest.seed = Some(cfg.generate.seed);
    create_dir(&out)?;
    let m = generate_dataset(&cfg.generate, &out)?;
    println!("wrote {} cases to {}", m.cases.len(), out.display());
    manifest.finish()
}

fn run(g: &Global) -> Result<(), CliError> {
    let (out, resume) = match (&g.resume, &g.out) {
        (Some(r), Some(o)) if absolute(r) != absolute(o) => {
            return Err(CliError::Config("--resume and --out name different directories".into()))
        }
        (Some(r), _) => (absolute(r), true),
        (None, Some(o)) => (absolute(o), false),
        (None, None) => return Err(CliError::Config("run needs --out <dir> or --resume <dir>".into())),
    };
    let mut cfg = match (&g.config, resume) {
        (Some(p), _) => load_config(p)?,
        (None, true) => load_resolved(&out)?,
        (None, false) => return Err(CliError::Config("run needs --config <file>".into())),
    };
    if let Some(seed) = g.seed {
        cfg.experiment.seed = seed;
    }
    let cases = load_dataset(&cfg.data.dir).map_err(CliError::data)?;
    let mut manifest = RunManifest::start("run", &out);
    manifest.config_path = g.config.clone();
    manifest.config_hash = Some(cfg.hash());
    manifest.seed = Some(cfg.experiment.seed);
    create_dir(&out)?;
    let path = out.join(RESOLVED_CONFIG);
    let mut text = serde_json::to_string_pretty(&cfg).expect("config serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;

    let outcome = run_experiment(&cfg, &cases, &out, resume)?;
    let last = outcome.reports.last().expect("at least one round");
    println!(
        "{} rounds, stopped by {:?}; final labeled fraction {:.4}, test DSC {:.4}±{:.4}",
        outcome.reports.len(),
        outcome.stop_reason,
        last.labeled_fraction,
        last.metrics.dsc.mean,
        last.metrics.dsc.std
    );
    manifest.finish()
}

/// Architecture fields of `config` that differ from the checkpoint's.
fn model_mismatches(seg: &SegModel, cfg: &ExperimentConfig) -> Vec<String> {
    let have = seg.config();
    let want = cfg.model.segmenter(cfg.experiment.seed);
    let mut diffs = Vec::new();
    if have.arch != want.arch {
        diffs.push(format!("arch: checkpoint {:?}, config {:?}", have.arch, want.arch));
    }
    if have.base_channels != want.base_channels {
        diffs.push(format!("base_channels: checkpoint {}, config {}", have.base_channels, want.base_channels));
    }
    if have.depth_levels != want.depth_levels {
        diffs.push(format!("depth_levels: checkpoint {}, config {}", have.depth_levels, want.depth_levels));
    }
    if have.dac_dilations != want.dac_dilations {
        diffs.push(format!("dac_dilations: checkpoint {:?}, config {:?}", have.dac_dilations, want.dac_dilations));
    }
    if have.rmp_pool_sizes != want.rmp_pool_sizes {
        diffs.push(format!("rmp_pool_sizes: checkpoint {:?}, config {:?}", have.rmp_pool_sizes, want.rmp_pool_sizes));
    }
    diffs
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const EVALUATION_HEADER: &str = "case_id,dsc,precision,iou,td,bd";

/// Per-case rows followed by `mean` and `std` footer rows. Tree metrics
/// average over the cases that have them.
pub fn evaluation_csv(units: &[UnitScore]) -> String {
    let mut out = format!("{EVALUATION_HEADER}\n");
    for u in units {
        let _ = writeln!(out, "{},{},{},{},{},{}", u.id, u.dsc, u.precision, u.iou, opt(u.td), opt(u.bd));
    }
    let col = |f: &dyn Fn(&UnitScore) -> Option<f64>| MeanStd::of(&units.iter().filter_map(f).collect::<Vec<_>>());
    let cols = [
        col(&|u| Some(u.dsc)),
        col(&|u| Some(u.precision)),
        col(&|u| Some(u.iou)),
        col(&|u| u.td),
        col(&|u| u.bd),
    ];
    for (name, pick) in [("mean", 0usize), ("std", 1)] {
        out.push_str(name);
        for c in &cols {
            let _ = write!(out, ",{}", if pick == 0 { c.mean } else { c.std });
        }
        out.push('\n');
    }
    out
}

fn evaluate(g: &Global, checkpoint: &Path, data: Option<&Path>, only: &[String]) -> Result<(), CliError> {
    let checkpoint = absolute(checkpoint);
    let mut cfg = match &g.config {
        Some(p) => load_config(p)?,
        None => {
            let run_dir = checkpoint.parent().and_then(Path::parent).ok_or_else(|| {
                CliError::Config(format!("{} is not inside a run directory; pass --config", checkpoint.display()))
            })?;
            load_resolved(run_dir)?
        }
    };
    if let Some(d) = data {
        cfg.data.dir = absolute(d);
    }
    let out = g.out.clone().map(|p| absolute(&p)).ok_or_else(|| CliError::Config("evaluate needs --out <dir>".into()))?;
    let seg_path = checkpoint.join(Learner::file_names()[0]);
    let seg = SegModel::load(&seg_path).map_err(|e| CliError::Data(format!("{}: {e}", seg_path.display())))?;
    let diffs = model_mismatches(&seg, &cfg);
    if !diffs.is_empty() {
        return Err(CliError::Config(format!("checkpoint does not match the configuration:\n{}", diffs.join("\n"))));
    }
    let mut cases = load_dataset(&cfg.data.dir).map_err(CliError::data)?;
    if !only.is_empty() {
        for id in only {
            if !cases.iter().any(|c| &c.id == id) {
                return Err(CliError::Data(format!("case {id} is not in {}", cfg.data.dir.display())));
            }
        }
        cases.retain(|c| only.contains(&c.id));
    }
    let mut manifest = RunManifest::start("evaluate", &out);
    manifest.config_path = g.config.clone();
    manifest.config_hash = Some(cfg.hash());
    manifest.seed = Some(cfg.experiment.seed);
    create_dir(&out)?;
    let units = cases
        .iter()
        .map(|c| evaluate_case(&seg, c, cfg.data.patch_shape, cfg.experiment.detect_threshold))
        .collect::<Result<Vec<_>, _>>()?;
    let csv = evaluation_csv(&units);
    let path = out.join("evaluation.csv");
    fs::write(&path, &csv).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    print!("{csv}");
    manifest.finish()
}

fn report(g: &Global, runs: &[PathBuf]) -> Result<(), CliError> {
    let summaries = load_summaries(runs)?;
    let rows = aggregate(&summaries);
    print!("{}", report_text(&rows));
    if let Some(out) = &g.out {
        let out = absolute(out);
        let manifest = RunManifest::start("report", &out);
        create_dir(&out)?;
        write_report(&rows, &out)?;
        manifest.finish()?;
    }
    Ok(())
}
