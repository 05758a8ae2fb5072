//! The query cycle: train, evaluate, select, oracle-label, repeat; with
//! per-round checkpoints and crash resume.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use wdunet_core::seed::derive_seed;
use wdunet_core::pool::AccessLog;
use wdunet_core::{Pool, PoolState};
use wdunet_nn::{Arch, CriticConfig, FeatureConfig, LossReport, LossWeights, ModelConfig};

use crate::dataset::{case_patches, read_json, Case, DataConfig, GenerateConfig};
use crate::error::{AlError, Result};
use crate::evaluate::{evaluate_pool, MetricSummary};
use crate::query::{select_batch, write_scores_csv, StrategyConfig};
use crate::train::{train_epochs, Learner, TrainConfig};

/// Widths of the three networks. Initialization seeds derive from the
/// experiment seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub arch: Arch,
    pub base_channels: usize,
    pub depth_levels: usize,
    pub dac_dilations: Vec<usize>,
    pub rmp_pool_sizes: Vec<usize>,
    pub fx_channels: usize,
    pub feature_channels: usize,
    pub critic_channels: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let f = FeatureConfig::default();
        Self {
            arch: m.arch,
            base_channels: m.base_channels,
            depth_levels: m.depth_levels,
            dac_dilations: m.dac_dilations,
            rmp_pool_sizes: m.rmp_pool_sizes,
            fx_channels: f.channels,
            feature_channels: f.feature_channels,
            critic_channels: CriticConfig::default().channels,
        }
    }
}

impl NetworkConfig {
    pub fn segmenter(&self, seed: u64) -> ModelConfig {
        ModelConfig {
            arch: self.arch,
            base_channels: self.base_channels,
            depth_levels: self.depth_levels,
            dac_dilations: self.dac_dilations.clone(),
            rmp_pool_sizes: self.rmp_pool_sizes.clone(),
            seed: derive_seed(seed, "init", 0),
        }
    }

    pub fn extractor(&self, seed: u64) -> FeatureConfig {
        FeatureConfig {
            channels: self.fx_channels,
            feature_channels: self.feature_channels,
            seed: derive_seed(seed, "init", 1),
        }
    }

    pub fn critic(&self, seed: u64) -> CriticConfig {
        CriticConfig {
            in_channels: self.feature_channels,
            channels: self.critic_channels,
            seed: derive_seed(seed, "init", 2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    /// Maximum number of rounds (reports), round 0 included.
    pub rounds_budget: usize,
    /// Stop once |L| / N reaches this.
    pub label_budget_fraction: f64,
    pub per_round_batch: usize,
    pub warm_start: bool,
    pub plateau_patience: Option<usize>,
    pub seed: u64,
    /// Off: `wall_seconds` is written as 0 so outputs are byte-reproducible.
    pub record_wall_time: bool,
    pub detect_threshold: f64,
    pub dump_scores: bool,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            rounds_budget: 3,
            label_budget_fraction: 0.35,
            per_round_batch: 2,
            warm_start: true,
            plateau_patience: None,
            seed: 0,
            record_wall_time: true,
            detect_threshold: 0.8,
            dump_scores: true,
        }
    }
}

/// Every configurable knob; one section per module.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: NetworkConfig,
    pub loss: LossWeights,
    pub strategy: StrategyConfig,
    pub train: TrainConfig,
    pub experiment: LoopConfig,
    pub generate: GenerateConfig,
}

impl ExperimentConfig {
    /// All semantic problems at once.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let d = &self.data;
        if d.patch_shape.contains(&0) || d.stride.contains(&0) {
            errs.push("data.patch_shape and data.stride need positive components".into());
        }
        for (k, v) in [("initial_labeled", d.initial_labeled), ("unlabeled", d.unlabeled), ("test", d.test)] {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("data.{k} = {v} must be positive"));
            }
        }
        let sum = d.initial_labeled + d.unlabeled + d.test;
        if sum > 1.0 + 1e-9 {
            errs.push(format!("data fractions sum to {sum}, above 1"));
        }
        let model = self.model.segmenter(0);
        if let Err(e) = model.validate() {
            errs.push(format!("model: {e}"));
        } else if let Err(e) = model.check_dims(d.patch_shape) {
            errs.push(format!("data.patch_shape: {e}"));
        }
        if d.patch_shape.iter().any(|s| s % 2 != 0) {
            errs.push("data.patch_shape must be even for the feature extractor".into());
        }
        for (k, v) in [
            ("fx_channels", self.model.fx_channels),
            ("feature_channels", self.model.feature_channels),
            ("critic_channels", self.model.critic_channels),
        ] {
            if v == 0 {
                errs.push(format!("model.{k} must be positive"));
            }
        }
        if let Err(e) = self.loss.validate() {
            errs.push(format!("loss: {e}"));
        }
        errs.extend(self.strategy.validate());
        errs.extend(self.train.validate());
        let e = &self.experiment;
        if e.rounds_budget == 0 {
            errs.push("experiment.rounds_budget must be positive".into());
        }
        if e.per_round_batch == 0 {
            errs.push("experiment.per_round_batch must be positive".into());
        }
        if !(e.label_budget_fraction > 0.0 && e.label_budget_fraction <= 1.0) {
            errs.push(format!("experiment.label_budget_fraction = {} must lie in (0, 1]", e.label_budget_fraction));
        } else if e.label_budget_fraction + 1e-9 < d.initial_labeled {
            errs.push(format!(
                "experiment.label_budget_fraction = {} is below data.initial_labeled = {}",
                e.label_budget_fraction, d.initial_labeled
            ));
        }
        if e.plateau_patience == Some(0) {
            errs.push("experiment.plateau_patience must be positive when set".into());
        }
        if !(e.detect_threshold > 0.0 && e.detect_threshold <= 1.0) {
            errs.push(format!("experiment.detect_threshold = {} must lie in (0, 1]", e.detect_threshold));
        }
        errs
    }

    pub fn check(&self) -> Result<()> {
        let errs = self.validate();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(AlError::Config(errs.join("; ")))
        }
    }

    pub fn hash(&self) -> String {
        canonical_hash(self)
    }
}

/// SHA-256 of the compact JSON form with object keys sorted.
pub fn canonical_hash<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("config serializes");
    let text = serde_json::to_string(&v).expect("JSON value serializes");
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u32,
    pub labeled_count: usize,
    pub labeled_fraction: f64,
    pub losses: LossReport,
    pub metrics: MetricSummary,
    pub wall_seconds: f64,
}

pub const ROUNDS_HEADER: &str = "round,labeled_fraction,dice,bce,branch,wasserstein,penalty,total,dsc_mean,dsc_std,\
precision_mean,precision_std,td_mean,td_std,bd_mean,bd_std,iou_mean,iou_std,wall_seconds";

pub fn rounds_csv(reports: &[RoundReport]) -> String {
    let mut out = format!("{ROUNDS_HEADER}\n");
    for r in reports {
        let (l, m) = (&r.losses, &r.metrics);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.round,
            r.labeled_fraction,
            l.dice,
            l.bce,
            l.branch,
            l.wasserstein,
            l.penalty,
            l.total,
            m.dsc.mean,
            m.dsc.std,
            m.precision.mean,
            m.precision.std,
            m.td.mean,
            m.td.std,
            m.bd.mean,
            m.bd.std,
            m.iou.mean,
            m.iou.std,
            r.wall_seconds
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    RoundsBudget,
    LabelBudget,
    PoolExhausted,
    Plateau,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PlateauState {
    pub best_dsc: Option<f64>,
    pub stale_rounds: usize,
}

/// Minimum test-DSC gain that counts as improvement.
pub const PLATEAU_MIN_GAIN: f64 = 1e-4;

impl PlateauState {
    fn update(&mut self, dsc: f64) {
        match self.best_dsc {
            Some(best) if dsc < best + PLATEAU_MIN_GAIN => self.stale_rounds += 1,
            _ => {
                self.best_dsc = Some(dsc);
                self.stale_rounds = 0;
            }
        }
    }
}

/// Per-round random streams are derived from (seed, stream, round), so the
/// seed and the next round index are the whole generator state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub next_round: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config_hash: String,
    pub round: u32,
    pub pool: PoolState,
    pub rng: RngState,
    pub plateau: PlateauState,
    pub history: Vec<RoundReport>,
    /// Blob files of the networks and optimizers, relative to the checkpoint.
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub strategy: String,
    pub seed: u64,
    pub config_hash: String,
    pub stop_reason: StopReason,
    pub rounds: usize,
    #[serde(rename = "final")]
    pub final_round: RoundReport,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub reports: Vec<RoundReport>,
    pub stop_reason: StopReason,
    /// Round of the checkpoint the run resumed from, if any.
    pub resumed_from: Option<u32>,
    pub pool: PoolState,
    /// Guarded reads made by this process (after the resume point, if any).
    pub access: AccessLog,
}

pub const CHECKPOINTS: &str = "checkpoints";
pub const CHECKPOINT_MANIFEST: &str = "manifest.json";

fn checkpoint_dir(out: &Path, round: u32) -> PathBuf {
    out.join(CHECKPOINTS).join(format!("round{round}"))
}

/// The complete checkpoint with the highest round, if any.
pub fn latest_checkpoint(out: &Path) -> Result<Option<(u32, PathBuf)>> {
    let root = out.join(CHECKPOINTS);
    if !root.is_dir() {
        return Ok(None);
    }
    let mut best = None;
    for entry in fs::read_dir(&root).map_err(AlError::io(&root))? {
        let entry = entry.map_err(AlError::io(&root))?;
        let name = entry.file_name();
        let Some(k) = name.to_str().and_then(|n| n.strip_prefix("round")).and_then(|n| n.parse::<u32>().ok()) else {
            continue;
        };
        if entry.path().join(CHECKPOINT_MANIFEST).is_file() && best.as_ref().is_none_or(|(b, _)| k > *b) {
            best = Some((k, entry.path()));
        }
    }
    Ok(best)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(AlError::io(path))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

struct Run<'a> {
    config: &'a ExperimentConfig,
    hash: String,
    out: &'a Path,
    pool: Pool,
    learner: Learner,
    history: Vec<RoundReport>,
    plateau: PlateauState,
    budget_count: usize,
}

impl Run<'_> {
    fn seed(&self) -> u64 {
        self.config.experiment.seed
    }

    fn fresh_learner(config: &ExperimentConfig) -> Result<Learner> {
        let seed = config.experiment.seed;
        Learner::new(
            &config.model.segmenter(seed),
            &config.model.extractor(seed),
            &config.model.critic(seed),
            &config.train,
        )
    }

    /// Trains (after any transfer), evaluates and records round `round`.
    fn train_and_record(&mut self, round: u32, started: Instant) -> Result<()> {
        let seed = derive_seed(self.seed(), "training", u64::from(round));
        let losses = train_epochs(
            &mut self.learner,
            &self.pool,
            &self.config.loss,
            &self.config.train,
            self.config.train.epochs_per_round,
            seed,
        )?
        .unwrap_or_default();
        let units = evaluate_pool(&self.learner.seg, &self.pool, self.config.experiment.detect_threshold)?;
        let metrics = MetricSummary::of(&units);
        self.plateau.update(metrics.dsc.mean);
        let wall_seconds = if self.config.experiment.record_wall_time {
            started.elapsed().as_secs_f64()
        } else {
            0.0
        };
        self.history.push(RoundReport {
            round,
            labeled_count: self.pool.labeled().len(),
            labeled_fraction: self.pool.labeled_fraction(),
            losses,
            metrics,
            wall_seconds,
        });
        self.checkpoint(round)?;
        write_text(&self.out.join("rounds.csv"), &rounds_csv(&self.history))
    }

    /// Written under a temporary name and renamed, so a checkpoint directory
    /// with a manifest is always complete.
    fn checkpoint(&self, round: u32) -> Result<()> {
        let root = self.out.join(CHECKPOINTS);
        let tmp = root.join(format!(".round{round}.tmp"));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(AlError::io(&tmp))?;
        }
        fs::create_dir_all(&tmp).map_err(AlError::io(&tmp))?;
        self.learner.save(&tmp)?;
        let manifest = CheckpointManifest {
            config_hash: self.hash.clone(),
            round,
            pool: self.pool.state().clone(),
            rng: RngState {
                seed: self.seed(),
                next_round: round + 1,
            },
            plateau: self.plateau,
            history: self.history.clone(),
            files: Learner::file_names().iter().map(|s| s.to_string()).collect(),
        };
        write_text(&tmp.join(CHECKPOINT_MANIFEST), &to_json(&manifest))?;
        let dst = checkpoint_dir(self.out, round);
        if dst.exists() {
            fs::remove_dir_all(&dst).map_err(AlError::io(&dst))?;
        }
        fs::rename(&tmp, &dst).map_err(AlError::io(&dst))
    }

    fn stop_reason(&self) -> Option<StopReason> {
        let e = &self.config.experiment;
        if self.history.len() >= e.rounds_budget {
            return Some(StopReason::RoundsBudget);
        }
        if self.pool.labeled().len() >= self.budget_count {
            return Some(StopReason::LabelBudget);
        }
        if self.pool.unlabeled().is_empty() {
            return Some(StopReason::PoolExhausted);
        }
        if e.plateau_patience.is_some_and(|p| self.plateau.stale_rounds >= p) {
            return Some(StopReason::Plateau);
        }
        None
    }

    fn query_round(&mut self, round: u32) -> Result<()> {
        let started = Instant::now();
        let e = &self.config.experiment;
        let k = e
            .per_round_batch
            .min(self.pool.unlabeled().len())
            .min(self.budget_count.saturating_sub(self.pool.labeled().len()));
        let seed = derive_seed(self.seed(), "strategy", u64::from(round));
        let selection = select_batch(&self.config.strategy, k, seed, &self.pool, &self.learner)?;
        if e.dump_scores && !selection.scores.is_empty() {
            write_scores_csv(&self.out.join(format!("scores_round{round}.csv")), &selection.scores)?;
        }
        self.pool.oracle_label(&selection.indices, round)?;
        if !e.warm_start {
            self.learner = Self::fresh_learner(self.config)?;
        }
        self.train_and_record(round, started)
    }
}

/// Runs (or with `resume`, continues) an experiment over `cases`, writing
/// `rounds.csv`, `summary.json`, score dumps and `checkpoints/` into `out`.
pub fn run_experiment(config: &ExperimentConfig, cases: &[Case], out: &Path, resume: bool) -> Result<RunOutcome> {
    config.check()?;
    fs::create_dir_all(out).map_err(AlError::io(out))?;
    let hash = config.hash();
    let patches = case_patches(cases, &config.data)?;
    if patches.is_empty() {
        return Err(AlError::Data("dataset yields no patches".into()));
    }
    let n = patches.len();
    let budget_count = (((config.experiment.label_budget_fraction * n as f64) + 1e-9).floor() as usize).max(1);

    let latest = if resume { latest_checkpoint(out)? } else { None };
    let (mut run, resumed_from) = match latest {
        Some((round, dir)) => {
            let m: CheckpointManifest = read_json(&dir.join(CHECKPOINT_MANIFEST))?;
            if m.config_hash != hash {
                return Err(AlError::Resume(format!(
                    "checkpoint {} was written with config hash {}, current config hashes to {hash}",
                    dir.display(),
                    m.config_hash
                )));
            }
            let pool = Pool::from_state(patches, m.pool)?;
            let run = Run {
                config,
                hash,
                out,
                pool,
                learner: Learner::load(&dir)?,
                history: m.history,
                plateau: m.plateau,
                budget_count,
            };
            (run, Some(round))
        }
        None => {
            let started = Instant::now();
            let pool = wdunet_core::init_splits(
                patches,
                config.data.fractions(),
                derive_seed(config.experiment.seed, "data", 0),
                config.data.case_level,
            )?;
            if pool.labeled().is_empty() {
                return Err(AlError::EmptyLabeled);
            }
            let mut run = Run {
                config,
                hash,
                out,
                pool,
                learner: Run::fresh_learner(config)?,
                history: Vec::new(),
                plateau: PlateauState::default(),
                budget_count,
            };
            run.train_and_record(0, started)?;
            (run, None)
        }
    };
    write_text(&out.join("rounds.csv"), &rounds_csv(&run.history))?;

    let stop_reason = loop {
        if let Some(reason) = run.stop_reason() {
            break reason;
        }
        let round = run.history.last().map_or(0, |r| r.round + 1);
        run.query_round(round)?;
    };

    let summary = Summary {
        strategy: config.strategy.name.as_str().to_string(),
        seed: config.experiment.seed,
        config_hash: run.hash.clone(),
        stop_reason,
        rounds: run.history.len(),
        final_round: run.history.last().expect("round 0 recorded").clone(),
        config: config.clone(),
    };
    write_text(&out.join("summary.json"), &to_json(&summary))?;
    Ok(RunOutcome {
        pool: run.pool.state().clone(),
        access: run.pool.access_log(),
        reports: run.history,
        stop_reason,
        resumed_from,
    })
}
