//! Experiment orchestration: sweep configuration, parallel run execution,
//! an append-only metrics log, the independent-ensemble control, summaries,
//! and plot-data export.
//!
//! A sweep is the cross product of community sizes × entropy weights ×
//! seeds. Cells run in parallel worker threads, but all records funnel
//! through one serializing writer that emits them in cell order, so the
//! metrics log is byte-identical across reruns and across worker counts.
//! Each log line is one complete JSON record; a killed run leaves a valid
//! prefix, and the reader ignores a truncated final line.

use std::collections::BTreeMap;
use std::fs;
use std::io::{LineWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::community::{Community, CommunityError, TrainConfig};
use crate::data::{
    downsample, gen_synthetic, load_feature_norms, load_idx, DataError, Dataset, SyntheticSpec,
};
use crate::nets::{Checkpoint, EncoderParams, NetShape, NetsError};
use crate::probes::{
    concept_probe, encoder_id_accuracy, rsa_score, ProbeConfig, ProbeError, ProbeReport,
};
use crate::tensor::TensorError;

/// Errors raised by experiment orchestration.
#[derive(Debug, Error)]
pub enum ExpError {
    #[error("i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("{path}: {detail}")]
    Toml { path: String, detail: String },
    #[error("{path}: line {line}: {detail}")]
    LogParse {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("unknown metric {name:?}; valid metrics: {}", valid.join(", "))]
    UnknownMetric {
        name: String,
        valid: &'static [&'static str],
    },
    #[error("all {total} runs failed; first error: {first}")]
    AllRunsFailed { total: usize, first: String },
    #[error(transparent)]
    Community(#[from] CommunityError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nets(#[from] NetsError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

fn io_err(path: &Path, source: std::io::Error) -> ExpError {
    ExpError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One evaluation snapshot of one run. Serialized as one JSON line in the
/// metrics log; `wall_clock_secs` is carried in memory but deliberately kept
/// out of the serialized form so identical configs produce byte-identical
/// logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub experiment_id: String,
    pub seed: u64,
    pub community_size: usize,
    pub lambda: f64,
    pub step: usize,
    /// Mean reconstruction loss over all encoder–decoder pairs on the run's
    /// fixed evaluation sample.
    pub recon_loss: f64,
    pub encoder_id_accuracy: f64,
    pub encoder_id_chance: f64,
    /// Concept-probe accuracy averaged over the community's encoders.
    pub concept_accuracy: f64,
    /// RSA Spearman rho averaged over encoders; absent when the dataset
    /// carries no feature norms.
    pub rsa_rho: Option<f64>,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

/// A run that died mid-sweep; recorded in the log, skipped by summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub experiment_id: String,
    pub seed: u64,
    pub community_size: usize,
    pub lambda: f64,
    pub error: String,
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LogLine {
    Metrics(MetricsRecord),
    Failure(RunFailure),
}

/// Where the images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Generated concept/attribute dataset with ground-truth norms.
    Synthetic {
        #[serde(default = "default_concepts")]
        concepts: usize,
        #[serde(default = "default_attributes")]
        attributes: usize,
        #[serde(default = "default_per_concept")]
        per_concept: usize,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default = "default_dataset_seed")]
        seed: u64,
    },
    /// IDX image/label pair on disk, optionally subset, downsampled, and
    /// paired with a feature-norm CSV whose concept names must match the
    /// dataset's.
    Idx {
        images: String,
        labels: String,
        #[serde(default)]
        subset: Option<usize>,
        #[serde(default = "default_downsample")]
        downsample: usize,
        #[serde(default)]
        norms: Option<String>,
    },
}

fn default_concepts() -> usize {
    16
}
fn default_attributes() -> usize {
    8
}
fn default_per_concept() -> usize {
    200
}
fn default_noise() -> f64 {
    0.15
}
fn default_dataset_seed() -> u64 {
    7
}
fn default_downsample() -> usize {
    1
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic {
            concepts: default_concepts(),
            attributes: default_attributes(),
            per_concept: default_per_concept(),
            noise: default_noise(),
            seed: default_dataset_seed(),
        }
    }
}

/// Encoder/decoder architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub latent_dim: usize,
    /// Encoder hidden widths; the decoder mirrors them.
    pub hidden: Vec<usize>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            hidden: vec![64, 64],
        }
    }
}

/// The sweep grid. Runs execute in community-size → λ → seed order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub community_sizes: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            community_sizes: vec![1, 2, 4],
            lambdas: vec![0.0],
            seeds: vec![1, 2, 3],
        }
    }
}

/// Full sweep description, loadable from TOML. All defaults are
/// overridable; the effective config is written next to the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    /// Output root; the run writes into `{output_dir}/{experiment_id}/`.
    pub output_dir: Option<String>,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    /// Per-run training settings. `entropy_weight` and `base_seed` here are
    /// placeholders — each sweep cell overrides them from `sweep`.
    pub train: TrainConfig,
    pub sweep: SweepSpec,
}

impl ExperimentConfig {
    /// Reads and validates a TOML config file.
    pub fn load(path: &Path) -> Result<Self, ExpError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let config: ExperimentConfig = toml::from_str(&text).map_err(|e| ExpError::Toml {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ExpError> {
        if self.experiment_id.is_empty() {
            return Err(ExpError::Config("experiment_id must be non-empty".into()));
        }
        if self.train.steps == 0 {
            return Err(ExpError::Config("train.steps must be > 0".into()));
        }
        for (name, list_len) in [
            ("sweep.community_sizes", self.sweep.community_sizes.len()),
            ("sweep.lambdas", self.sweep.lambdas.len()),
            ("sweep.seeds", self.sweep.seeds.len()),
        ] {
            if list_len == 0 {
                return Err(ExpError::Config(format!("{name} must be non-empty")));
            }
        }
        for (name, distinct) in [
            ("sweep.community_sizes", {
                let mut v = self.sweep.community_sizes.clone();
                v.sort_unstable();
                v.dedup();
                v.len() == self.sweep.community_sizes.len()
            }),
            ("sweep.seeds", {
                let mut v = self.sweep.seeds.clone();
                v.sort_unstable();
                v.dedup();
                v.len() == self.sweep.seeds.len()
            }),
            ("sweep.lambdas", {
                let mut v: Vec<u64> = self.sweep.lambdas.iter().map(|l| l.to_bits()).collect();
                v.sort_unstable();
                v.dedup();
                v.len() == self.sweep.lambdas.len()
            }),
        ] {
            if !distinct {
                return Err(ExpError::Config(format!("{name} must be distinct")));
            }
        }
        if let Some(&k) = self.sweep.community_sizes.iter().find(|&&k| k == 0) {
            return Err(ExpError::Config(format!("community size {k} must be ≥ 1")));
        }
        if let Some(&l) = self
            .sweep
            .lambdas
            .iter()
            .find(|&&l| !(l >= 0.0 && l.is_finite()))
        {
            return Err(ExpError::Config(format!(
                "lambda {l} must be finite and ≥ 0"
            )));
        }
        if self.model.latent_dim == 0 {
            return Err(ExpError::Config("model.latent_dim must be ≥ 1".into()));
        }
        // Per-cell TrainConfigs inherit everything but λ and seed; validate
        // the shared parts once with a legal placeholder λ.
        TrainConfig {
            entropy_weight: 0.0,
            ..self.train
        }
        .validate()?;
        Ok(())
    }

    /// Directory this experiment writes into.
    pub fn run_dir(&self) -> Result<PathBuf, ExpError> {
        let root = self
            .output_dir
            .as_ref()
            .ok_or_else(|| ExpError::Config("no output directory set".into()))?;
        Ok(Path::new(root).join(&self.experiment_id))
    }

    fn cell_config(&self, lambda: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            entropy_weight: lambda,
            base_seed: seed,
            ..self.train
        }
    }
}

/// Materializes the configured dataset.
pub fn load_dataset(spec: &DatasetSpec) -> Result<Dataset, ExpError> {
    match spec {
        DatasetSpec::Synthetic {
            concepts,
            attributes,
            per_concept,
            noise,
            seed,
        } => Ok(gen_synthetic(&SyntheticSpec {
            concepts: *concepts,
            attributes: *attributes,
            per_concept: *per_concept,
            noise: *noise,
            seed: *seed,
        })?),
        DatasetSpec::Idx {
            images,
            labels,
            subset,
            downsample: factor,
            norms,
        } => {
            let mut ds = load_idx(Path::new(images), Path::new(labels))?;
            if let Some(n) = subset {
                ds = ds.subset(*n)?;
            }
            ds = downsample(&ds, *factor)?;
            if let Some(path) = norms {
                let table = load_feature_norms(Path::new(path))?;
                ds = ds.with_attributes(table)?;
            }
            Ok(ds)
        }
    }
}

/// Across-seed statistics of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    pub max: f64,
    /// Sample standard deviation (n−1); 0 for a single seed.
    pub std: f64,
}

impl MetricStats {
    fn from_values(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let std = if values.len() < 2 {
            0.0
        } else {
            let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
            (ss / (n - 1.0)).sqrt()
        };
        Self { mean, max, std }
    }
}

/// Pooled standard deviation of two samples with the given sizes.
pub fn pooled_std(s1: f64, n1: usize, s2: f64, n2: usize) -> f64 {
    let (n1, n2) = (n1 as f64, n2 as f64);
    (((n1 - 1.0) * s1 * s1 + (n2 - 1.0) * s2 * s2) / (n1 + n2 - 2.0)).sqrt()
}

/// Final-record statistics of one (community size, λ) sweep cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub community_size: usize,
    pub lambda: f64,
    /// Seeds whose runs completed (failed runs are excluded).
    pub seeds_completed: usize,
    pub recon_loss: MetricStats,
    pub encoder_id_accuracy: MetricStats,
    pub concept_accuracy: MetricStats,
    pub rsa_rho: Option<MetricStats>,
}

/// Per-metric "does seed variance shrink with community size" flags:
/// `std(K = max) ≤ std(K = min)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedVarianceFlags {
    pub recon_loss: bool,
    pub encoder_id_accuracy: bool,
    pub concept_accuracy: bool,
    pub rsa_rho: Option<bool>,
}

/// Directional findings across community sizes at one λ. All informational:
/// they report the direction the data took, they do not gate anything.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub lambda: f64,
    pub min_size: usize,
    pub max_size: usize,
    /// Mean concept accuracy strictly higher at the largest community size
    /// than at the smallest.
    pub concept_accuracy_strictly_improves: bool,
    /// Same comparison for mean RSA rho, when norms were available.
    pub rsa_strictly_improves: Option<bool>,
    /// Mean reconstruction loss non-decreasing along increasing K, with
    /// violations tolerated within one pooled standard deviation.
    pub recon_loss_non_decreasing: bool,
    pub seed_variance_shrinks: SeedVarianceFlags,
}

/// Sweep-level roll-up over the final record of every completed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    /// Sorted by community size, then λ.
    pub cells: Vec<CellSummary>,
    /// One entry per λ that has at least two community sizes.
    pub trends: Vec<TrendReport>,
}

impl SweepSummary {
    /// Builds the summary from raw records: the last record of each
    /// (size, λ, seed) run is its final state.
    pub fn from_records(records: &[MetricsRecord]) -> Self {
        let mut finals: BTreeMap<(usize, u64, u64), &MetricsRecord> = BTreeMap::new();
        for r in records {
            let key = (r.community_size, r.lambda.to_bits(), r.seed);
            match finals.get(&key) {
                Some(prev) if prev.step >= r.step => {}
                _ => {
                    finals.insert(key, r);
                }
            }
        }

        let mut by_cell: BTreeMap<(usize, u64), Vec<&MetricsRecord>> = BTreeMap::new();
        for ((k, lam, _), r) in &finals {
            by_cell.entry((*k, *lam)).or_default().push(r);
        }

        let cells: Vec<CellSummary> = by_cell
            .iter()
            .map(|(&(k, lam), rs)| {
                let collect = |f: fn(&MetricsRecord) -> f64| -> Vec<f64> {
                    rs.iter().map(|r| f(r)).collect()
                };
                let rsa: Vec<f64> = rs.iter().filter_map(|r| r.rsa_rho).collect();
                CellSummary {
                    community_size: k,
                    lambda: f64::from_bits(lam),
                    seeds_completed: rs.len(),
                    recon_loss: MetricStats::from_values(&collect(|r| r.recon_loss)),
                    encoder_id_accuracy: MetricStats::from_values(&collect(
                        |r| r.encoder_id_accuracy,
                    )),
                    concept_accuracy: MetricStats::from_values(&collect(|r| r.concept_accuracy)),
                    rsa_rho: if rsa.len() == rs.len() {
                        Some(MetricStats::from_values(&rsa))
                    } else {
                        None
                    },
                }
            })
            .collect();

        let mut lambdas: Vec<u64> = cells.iter().map(|c| c.lambda.to_bits()).collect();
        lambdas.sort_unstable();
        lambdas.dedup();
        let trends = lambdas
            .iter()
            .filter_map(|&lam| {
                let group: Vec<&CellSummary> = cells
                    .iter()
                    .filter(|c| c.lambda.to_bits() == lam)
                    .collect();
                if group.len() < 2 {
                    return None;
                }
                // `cells` is sorted by (size, λ), so the group is sorted by size.
                let lo = group[0];
                let hi = group[group.len() - 1];
                let recon_ok = group.windows(2).all(|w| {
                    let sp = pooled_std(
                        w[0].recon_loss.std,
                        w[0].seeds_completed,
                        w[1].recon_loss.std,
                        w[1].seeds_completed,
                    );
                    w[1].recon_loss.mean >= w[0].recon_loss.mean - sp
                });
                Some(TrendReport {
                    lambda: f64::from_bits(lam),
                    min_size: lo.community_size,
                    max_size: hi.community_size,
                    concept_accuracy_strictly_improves: hi.concept_accuracy.mean
                        > lo.concept_accuracy.mean,
                    rsa_strictly_improves: match (&hi.rsa_rho, &lo.rsa_rho) {
                        (Some(h), Some(l)) => Some(h.mean > l.mean),
                        _ => None,
                    },
                    recon_loss_non_decreasing: recon_ok,
                    seed_variance_shrinks: SeedVarianceFlags {
                        recon_loss: hi.recon_loss.std <= lo.recon_loss.std,
                        encoder_id_accuracy: hi.encoder_id_accuracy.std
                            <= lo.encoder_id_accuracy.std,
                        concept_accuracy: hi.concept_accuracy.std <= lo.concept_accuracy.std,
                        rsa_rho: match (&hi.rsa_rho, &lo.rsa_rho) {
                            (Some(h), Some(l)) => Some(h.std <= l.std),
                            _ => None,
                        },
                    },
                })
            })
            .collect();

        SweepSummary { cells, trends }
    }

    /// The summary cell for one (community size, λ), if it completed.
    pub fn cell(&self, community_size: usize, lambda: f64) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.community_size == community_size && c.lambda == lambda)
    }
}

enum WorkerMsg {
    Done(usize, Vec<MetricsRecord>),
    Failed(usize, RunFailure),
}

struct CellSpec {
    community_size: usize,
    lambda: f64,
    seed: u64,
}

fn run_cell(
    config: &ExperimentConfig,
    dataset: &Dataset,
    cell: &CellSpec,
    checkpoint_dir: &Path,
) -> Result<Vec<MetricsRecord>, ExpError> {
    let shape = NetShape::new(
        dataset.dim(),
        config.model.hidden.clone(),
        config.model.latent_dim,
    );
    let train_cfg = config.cell_config(cell.lambda, cell.seed);
    let mut community = Community::new(&shape, cell.community_size, cell.community_size, &train_cfg)?;
    let mut records = community.train(dataset, &train_cfg)?;
    for r in &mut records {
        r.experiment_id = config.experiment_id.clone();
    }

    let mut meta = BTreeMap::new();
    meta.insert("experiment_id".into(), config.experiment_id.clone());
    meta.insert("community_size".into(), cell.community_size.to_string());
    meta.insert("lambda".into(), cell.lambda.to_string());
    meta.insert("base_seed".into(), cell.seed.to_string());
    meta.insert("steps".into(), train_cfg.steps.to_string());
    let ckpt = community.to_checkpoint(meta);
    let ckpt_path = checkpoint_dir.join(format!(
        "k{}_lambda{}_seed{}.json",
        cell.community_size, cell.lambda, cell.seed
    ));
    ckpt.save(&ckpt_path)?;
    Ok(records)
}

/// Runs the whole sweep: every (community size, λ, seed) cell trains a
/// community, probes it at each eval interval, appends its records to
/// `metrics.jsonl` under the run directory, and saves a checkpoint. Workers
/// process cells in parallel; the log writer serializes records in cell
/// order so the log bytes do not depend on `workers`. Numerical failures
/// are logged as failure lines and skipped in the returned summary.
///
/// Writes `config.resolved.toml` before training and `summary.json` after.
pub fn run_experiment(config: &ExperimentConfig, workers: usize) -> Result<SweepSummary, ExpError> {
    config.validate()?;
    let dir = config.run_dir()?;
    let checkpoint_dir = dir.join("checkpoints");
    fs::create_dir_all(&checkpoint_dir).map_err(|e| io_err(&checkpoint_dir, e))?;

    let resolved = toml::to_string_pretty(config)
        .map_err(|e| ExpError::Config(format!("cannot serialize resolved config: {e}")))?;
    let resolved_path = dir.join("config.resolved.toml");
    fs::write(&resolved_path, resolved).map_err(|e| io_err(&resolved_path, e))?;

    let dataset = load_dataset(&config.dataset)?;

    let mut cells = Vec::new();
    for &k in &config.sweep.community_sizes {
        for &lambda in &config.sweep.lambdas {
            for &seed in &config.sweep.seeds {
                cells.push(CellSpec {
                    community_size: k,
                    lambda,
                    seed,
                });
            }
        }
    }

    let log_path = dir.join("metrics.jsonl");
    let log_file = fs::File::create(&log_path).map_err(|e| io_err(&log_path, e))?;
    let mut log = LineWriter::new(log_file);

    let worker_count = workers.max(1).min(cells.len());
    let next_cell = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<WorkerMsg>();

    let mut completed: BTreeMap<usize, Vec<MetricsRecord>> = BTreeMap::new();
    let mut failures: Vec<RunFailure> = Vec::new();

    thread::scope(|scope| -> Result<(), ExpError> {
        for _ in 0..worker_count {
            let tx = tx.clone();
            let next_cell = &next_cell;
            let cells = &cells;
            let dataset = &dataset;
            let checkpoint_dir = &checkpoint_dir;
            scope.spawn(move || loop {
                let i = next_cell.fetch_add(1, Ordering::Relaxed);
                let Some(cell) = cells.get(i) else { break };
                let msg = match run_cell(config, dataset, cell, checkpoint_dir) {
                    Ok(records) => WorkerMsg::Done(i, records),
                    Err(e) => WorkerMsg::Failed(
                        i,
                        RunFailure {
                            experiment_id: config.experiment_id.clone(),
                            seed: cell.seed,
                            community_size: cell.community_size,
                            lambda: cell.lambda,
                            error: e.to_string(),
                        },
                    ),
                };
                if tx.send(msg).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        // Single serializing writer: emit cells strictly in sweep order.
        let mut pending: BTreeMap<usize, Result<Vec<MetricsRecord>, RunFailure>> = BTreeMap::new();
        let mut next_write = 0usize;
        while let Ok(msg) = rx.recv() {
            match msg {
                WorkerMsg::Done(i, records) => {
                    pending.insert(i, Ok(records));
                }
                WorkerMsg::Failed(i, failure) => {
                    pending.insert(i, Err(failure));
                }
            }
            while let Some(outcome) = pending.remove(&next_write) {
                match outcome {
                    Ok(records) => {
                        for r in &records {
                            let line = serde_json::to_string(r)
                                .map_err(|e| ExpError::Config(format!("serialize record: {e}")))?;
                            log.write_all(line.as_bytes()).map_err(|e| io_err(&log_path, e))?;
                            log.write_all(b"\n").map_err(|e| io_err(&log_path, e))?;
                        }
                        completed.insert(next_write, records);
                    }
                    Err(failure) => {
                        let line = serde_json::to_string(&failure)
                            .map_err(|e| ExpError::Config(format!("serialize failure: {e}")))?;
                        log.write_all(line.as_bytes()).map_err(|e| io_err(&log_path, e))?;
                        log.write_all(b"\n").map_err(|e| io_err(&log_path, e))?;
                        failures.push(failure);
                    }
                }
                next_write += 1;
            }
        }
        Ok(())
    })?;
    log.flush().map_err(|e| io_err(&log_path, e))?;

    if completed.is_empty() {
        return Err(ExpError::AllRunsFailed {
            total: cells.len(),
            first: failures
                .first()
                .map(|f| f.error.clone())
                .unwrap_or_else(|| "no outcomes recorded".into()),
        });
    }

    let all_records: Vec<MetricsRecord> = completed.into_values().flatten().collect();
    let summary = SweepSummary::from_records(&all_records);
    let summary_path = dir.join("summary.json");
    let summary_json = serde_json::to_string_pretty(&summary)
        .map_err(|e| ExpError::Config(format!("serialize summary: {e}")))?;
    fs::write(&summary_path, summary_json).map_err(|e| io_err(&summary_path, e))?;
    Ok(summary)
}

/// Seeds for an ensemble of `size`: the configured seeds, extended
/// consecutively past the largest one if more are needed, truncated if
/// fewer.
pub fn ensemble_seeds(configured: &[u64], size: usize) -> Vec<u64> {
    let mut seeds: Vec<u64> = configured.iter().copied().take(size).collect();
    let mut next = configured.iter().copied().max().unwrap_or(0) + 1;
    while seeds.len() < size {
        seeds.push(next);
        next += 1;
    }
    seeds
}

/// The control experiment: `size` *independent* single-member autoencoders
/// (community size 1, no entropy penalty), each with a distinct seed, at the
/// same step budget — identical capacity and init diversity, no community.
/// Runs through the same machinery as [`run_experiment`] under
/// `{experiment_id}_baseline`, so per-seed metrics are directly comparable.
pub fn run_ensemble_baseline(
    config: &ExperimentConfig,
    size: usize,
    workers: usize,
) -> Result<SweepSummary, ExpError> {
    if size == 0 {
        return Err(ExpError::Config("ensemble size must be ≥ 1".into()));
    }
    let baseline = ExperimentConfig {
        experiment_id: format!("{}_baseline", config.experiment_id),
        sweep: SweepSpec {
            community_sizes: vec![1],
            lambdas: vec![0.0],
            seeds: ensemble_seeds(&config.sweep.seeds, size),
        },
        ..config.clone()
    };
    run_experiment(&baseline, workers)
}

/// Reads a metrics log, tolerating an unterminated final line (the signature
/// of a killed writer). Garbage anywhere else is an error.
pub fn read_metrics_log(path: &Path) -> Result<Vec<LogLine>, ExpError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let text = String::from_utf8_lossy(&bytes);
    let ends_complete = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<LogLine>(line) {
            Ok(parsed) => out.push(parsed),
            Err(e) => {
                if i == lines.len() - 1 && !ends_complete {
                    break; // Truncated tail: a valid prefix remains.
                }
                return Err(ExpError::LogParse {
                    path: path.display().to_string(),
                    line: i + 1,
                    detail: e.to_string(),
                });
            }
        }
    }
    Ok(out)
}

/// Only the successful records of a log.
pub fn log_metrics(lines: &[LogLine]) -> Vec<&MetricsRecord> {
    lines
        .iter()
        .filter_map(|l| match l {
            LogLine::Metrics(r) => Some(r),
            LogLine::Failure(_) => None,
        })
        .collect()
}

/// Metric names [`export_plot_data`] understands.
pub const EXPORT_METRICS: &[&str] = &[
    "step",
    "recon_loss",
    "encoder_id_accuracy",
    "encoder_id_chance",
    "concept_accuracy",
    "rsa_rho",
];

fn metric_value(record: &MetricsRecord, name: &str) -> Option<f64> {
    match name {
        "step" => Some(record.step as f64),
        "recon_loss" => Some(record.recon_loss),
        "encoder_id_accuracy" => Some(record.encoder_id_accuracy),
        "encoder_id_chance" => Some(record.encoder_id_chance),
        "concept_accuracy" => Some(record.concept_accuracy),
        "rsa_rho" => record.rsa_rho,
        _ => None,
    }
}

/// Flattens a metrics log into a plot-ready CSV with columns
/// `[x, y, K, seed]`, one series per community size, sorted by x within each
/// series. Records missing either metric (e.g. no RSA) are dropped. Returns
/// the number of data rows written.
pub fn export_plot_data(
    log_path: &Path,
    x_metric: &str,
    y_metric: &str,
    out_path: &Path,
) -> Result<usize, ExpError> {
    for name in [x_metric, y_metric] {
        if !EXPORT_METRICS.contains(&name) {
            return Err(ExpError::UnknownMetric {
                name: name.to_string(),
                valid: EXPORT_METRICS,
            });
        }
    }
    let lines = read_metrics_log(log_path)?;
    let mut rows: Vec<(usize, f64, u64, usize, f64)> = Vec::new();
    for record in log_metrics(&lines) {
        if let (Some(x), Some(y)) = (
            metric_value(record, x_metric),
            metric_value(record, y_metric),
        ) {
            rows.push((record.community_size, x, record.seed, record.step, y));
        }
    }
    rows.sort_by(|a, b| {
        (a.0, a.1, a.2, a.3)
            .partial_cmp(&(b.0, b.1, b.2, b.3))
            .expect("finite metrics")
    });

    let mut writer = csv::Writer::from_path(out_path).map_err(|e| ExpError::Io {
        path: out_path.display().to_string(),
        source: std::io::Error::other(e),
    })?;
    writer
        .write_record([x_metric, y_metric, "K", "seed"])
        .map_err(|e| ExpError::Io {
            path: out_path.display().to_string(),
            source: std::io::Error::other(e),
        })?;
    let count = rows.len();
    for (k, x, seed, _step, y) in rows {
        writer
            .write_record([
                x.to_string(),
                y.to_string(),
                k.to_string(),
                seed.to_string(),
            ])
            .map_err(|e| ExpError::Io {
                path: out_path.display().to_string(),
                source: std::io::Error::other(e),
            })?;
    }
    writer.flush().map_err(|e| io_err(out_path, e))?;
    Ok(count)
}

/// Fresh probe results for one saved checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSnapshot {
    pub checkpoint: String,
    pub community_size: usize,
    pub encoder_id: ProbeReport,
    pub concept_accuracy_mean: f64,
    pub per_encoder_concept_accuracy: Vec<f64>,
    pub rsa_rho_mean: Option<f64>,
}

/// Re-probes a saved checkpoint against the configured dataset: fresh
/// encoder-ID probe, per-encoder concept probes, and RSA when norms are
/// available. The probe seed comes from the checkpoint's recorded base seed
/// so the numbers match the run's own evaluations.
pub fn probe_checkpoint(
    config: &ExperimentConfig,
    checkpoint_path: &Path,
) -> Result<ProbeSnapshot, ExpError> {
    let checkpoint = Checkpoint::load(checkpoint_path)?;
    let mut encoders: Vec<EncoderParams> = Vec::new();
    for (name, net) in &checkpoint.nets {
        if let Some(index) = name.strip_prefix("encoder_") {
            let index: usize = index
                .parse()
                .map_err(|_| ExpError::Config(format!("bad checkpoint net name {name:?}")))?;
            encoders.push(EncoderParams::from_net(index, net.clone()));
        }
    }
    if encoders.is_empty() {
        return Err(ExpError::Config(format!(
            "checkpoint {} holds no encoders",
            checkpoint_path.display()
        )));
    }
    encoders.sort_by_key(|e| e.member_index);

    let dataset = load_dataset(&config.dataset)?;
    let base_seed: u64 = checkpoint
        .meta
        .get("base_seed")
        .and_then(|s| s.parse().ok())
        .unwrap_or(ProbeConfig::default().seed);
    let probe_cfg = ProbeConfig {
        seed: crate::community::seeds::stream(base_seed, crate::community::seeds::PROBE),
        ..ProbeConfig::default()
    };

    let encoder_id = encoder_id_accuracy(&encoders, &dataset, &probe_cfg)?;
    let mut per_encoder = Vec::with_capacity(encoders.len());
    for enc in &encoders {
        per_encoder.push(concept_probe(enc, &dataset, &probe_cfg)?.accuracy);
    }
    let concept_mean = per_encoder.iter().sum::<f64>() / per_encoder.len() as f64;

    let rsa_rho_mean = match dataset.attributes() {
        Some(norms) => {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(probe_cfg.seed);
            let mut idx: Vec<usize> = (0..dataset.len()).collect();
            idx.shuffle(&mut rng);
            idx.truncate(probe_cfg.sample_cap.min(dataset.len()));
            let images = dataset.gather(&idx);
            let labels = dataset.gather_labels(&idx);
            let mut sum = 0.0;
            for enc in &encoders {
                let latents = enc.encode(&images)?;
                sum += rsa_score(&latents, &labels, norms)?.rho;
            }
            Some(sum / encoders.len() as f64)
        }
        None => None,
    };

    Ok(ProbeSnapshot {
        checkpoint: checkpoint_path.display().to_string(),
        community_size: encoders.len(),
        encoder_id,
        concept_accuracy_mean: concept_mean,
        per_encoder_concept_accuracy: per_encoder,
        rsa_rho_mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            experiment_id: "tiny".into(),
            output_dir: Some(dir.display().to_string()),
            dataset: DatasetSpec::Synthetic {
                concepts: 3,
                attributes: 4,
                per_concept: 12,
                noise: 0.05,
                seed: 3,
            },
            model: ModelSpec {
                latent_dim: 3,
                hidden: vec![8],
            },
            train: TrainConfig {
                steps: 4,
                batch_size: 8,
                lr: 1e-3,
                entropy_weight: 0.0,
                classifier_lr: 1e-3,
                eval_interval: 2,
                base_seed: 1,
            },
            sweep: SweepSpec {
                community_sizes: vec![1],
                lambdas: vec![0.0],
                seeds: vec![5],
            },
        }
    }

    fn rec(
        k: usize,
        lambda: f64,
        seed: u64,
        step: usize,
        recon: f64,
        id_acc: f64,
        concept: f64,
        rsa: Option<f64>,
    ) -> MetricsRecord {
        MetricsRecord {
            experiment_id: "t".into(),
            seed,
            community_size: k,
            lambda,
            step,
            recon_loss: recon,
            encoder_id_accuracy: id_acc,
            encoder_id_chance: 1.0 / k as f64,
            concept_accuracy: concept,
            rsa_rho: rsa,
            wall_clock_secs: 0.0,
        }
    }

    #[test]
    fn empty_toml_parses_with_every_default() {
        let cfg: ExperimentConfig = toml::from_str("").unwrap();
        assert_eq!(cfg.sweep.community_sizes, vec![1, 2, 4]);
        assert_eq!(cfg.sweep.lambdas, vec![0.0]);
        assert_eq!(cfg.sweep.seeds, vec![1, 2, 3]);
        assert_eq!(cfg.model.latent_dim, 16);
        assert_eq!(cfg.model.hidden, vec![64, 64]);
        assert_eq!(
            cfg.dataset,
            DatasetSpec::Synthetic {
                concepts: 16,
                attributes: 8,
                per_concept: 200,
                noise: 0.15,
                seed: 7,
            }
        );
        assert_eq!(cfg.train, TrainConfig::default());
        // The one thing a bare file lacks is an id.
        assert!(matches!(cfg.validate(), Err(ExpError::Config(_))));
    }

    #[test]
    fn partial_toml_overrides_only_named_fields() {
        let cfg: ExperimentConfig = toml::from_str(
            r#"
            experiment_id = "demo"
            [dataset]
            kind = "synthetic"
            concepts = 5
            [train]
            steps = 42
            [sweep]
            seeds = [9]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.experiment_id, "demo");
        assert!(
            matches!(cfg.dataset, DatasetSpec::Synthetic { concepts: 5, attributes: 8, .. })
        );
        assert_eq!(cfg.train.steps, 42);
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(cfg.sweep.seeds, vec![9]);
        assert_eq!(cfg.sweep.community_sizes, vec![1, 2, 4]);
        cfg.validate().unwrap();
    }

    #[test]
    fn load_rejects_unknown_keys_and_bad_syntax() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, "experiment_id = \"x\"\n[train]\nstep = 3\n").unwrap();
        match ExperimentConfig::load(&path) {
            Err(ExpError::Toml { detail, .. }) => assert!(detail.contains("step"), "{detail}"),
            other => panic!("expected toml error, got {other:?}"),
        }
        std::fs::write(&path, "experiment_id = \n").unwrap();
        assert!(matches!(
            ExperimentConfig::load(&path),
            Err(ExpError::Toml { .. })
        ));
    }

    #[test]
    fn validate_rejects_each_bad_field() {
        let dir = tempfile::tempdir().unwrap();
        let good = tiny_config(dir.path());
        good.validate().unwrap();

        let cases: Vec<(&str, Box<dyn Fn(&mut ExperimentConfig)>)> = vec![
            ("empty id", Box::new(|c| c.experiment_id.clear())),
            ("zero steps", Box::new(|c| c.train.steps = 0)),
            ("no sizes", Box::new(|c| c.sweep.community_sizes.clear())),
            ("no lambdas", Box::new(|c| c.sweep.lambdas.clear())),
            ("no seeds", Box::new(|c| c.sweep.seeds.clear())),
            (
                "dup sizes",
                Box::new(|c| c.sweep.community_sizes = vec![2, 2]),
            ),
            ("dup seeds", Box::new(|c| c.sweep.seeds = vec![1, 1])),
            (
                "dup lambdas",
                Box::new(|c| c.sweep.lambdas = vec![0.1, 0.1]),
            ),
            (
                "size zero",
                Box::new(|c| c.sweep.community_sizes = vec![0]),
            ),
            (
                "negative lambda",
                Box::new(|c| c.sweep.lambdas = vec![-0.5]),
            ),
            (
                "nan lambda",
                Box::new(|c| c.sweep.lambdas = vec![f64::NAN]),
            ),
            ("zero latent", Box::new(|c| c.model.latent_dim = 0)),
            ("zero batch", Box::new(|c| c.train.batch_size = 0)),
        ];
        for (what, poison) in cases {
            let mut bad = good.clone();
            poison(&mut bad);
            assert!(bad.validate().is_err(), "{what} should be rejected");
        }
    }

    #[test]
    fn metrics_record_serializes_without_wall_clock() {
        let mut r = rec(2, 0.1, 7, 100, 0.5, 0.8, 0.6, Some(0.4));
        r.wall_clock_secs = 12.5;
        let json = serde_json::to_string(&r).unwrap();
        assert!(!json.contains("wall_clock"), "{json}");
        let back: MetricsRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back.wall_clock_secs, 0.0);
        assert_eq!(back, MetricsRecord { wall_clock_secs: 0.0, ..r });

        let none = rec(1, 0.0, 1, 1, 0.1, 1.0, 0.5, None);
        let json = serde_json::to_string(&none).unwrap();
        assert!(json.contains("\"rsa_rho\":null"), "{json}");
    }

    #[test]
    fn log_reader_keeps_valid_prefix_of_truncated_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.jsonl");
        let a = serde_json::to_string(&rec(1, 0.0, 1, 10, 0.5, 1.0, 0.6, None)).unwrap();
        let b = serde_json::to_string(&rec(1, 0.0, 1, 20, 0.4, 1.0, 0.7, None)).unwrap();
        let mut bytes = format!("{a}\n{b}\n").into_bytes();
        let mut cut = b.as_bytes()[..b.len() / 2].to_vec();
        bytes.append(&mut cut); // killed mid-write: no trailing newline
        std::fs::write(&path, &bytes).unwrap();
        let lines = read_metrics_log(&path).unwrap();
        assert_eq!(lines.len(), 2);

        // A truncation that splits a multi-byte character is still a
        // recoverable tail.
        let mut bytes = format!("{a}\n").into_bytes();
        bytes.extend_from_slice("{\"experiment_id\": \"é".as_bytes().split_last().unwrap().1);
        std::fs::write(&path, &bytes).unwrap();
        assert_eq!(read_metrics_log(&path).unwrap().len(), 1);
    }

    #[test]
    fn log_reader_rejects_garbage_before_the_end() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.jsonl");
        let good = serde_json::to_string(&rec(1, 0.0, 1, 10, 0.5, 1.0, 0.6, None)).unwrap();
        std::fs::write(&path, format!("not json\n{good}\n")).unwrap();
        match read_metrics_log(&path) {
            Err(ExpError::LogParse { line: 1, .. }) => {}
            other => panic!("expected parse error at line 1, got {other:?}"),
        }
        // Garbage on a *terminated* final line is corruption, not a crash tail.
        std::fs::write(&path, format!("{good}\n{{\"half\": \n")).unwrap();
        match read_metrics_log(&path) {
            Err(ExpError::LogParse { line: 2, .. }) => {}
            other => panic!("expected parse error at line 2, got {other:?}"),
        }
    }

    #[test]
    fn log_lines_distinguish_metrics_from_failures() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.jsonl");
        let m = serde_json::to_string(&rec(1, 0.0, 1, 10, 0.5, 1.0, 0.6, None)).unwrap();
        let f = serde_json::to_string(&RunFailure {
            experiment_id: "t".into(),
            seed: 2,
            community_size: 4,
            lambda: 0.1,
            error: "loss went non-finite".into(),
        })
        .unwrap();
        std::fs::write(&path, format!("{m}\n{f}\n")).unwrap();
        let lines = read_metrics_log(&path).unwrap();
        assert_eq!(lines.len(), 2);
        assert!(matches!(lines[0], LogLine::Metrics(_)));
        assert!(matches!(lines[1], LogLine::Failure(_)));
        assert_eq!(log_metrics(&lines).len(), 1);
    }

    #[test]
    fn pooled_std_hand_value() {
        // Equal-size pooling of 0.2 and 0.4: sqrt((2·0.04 + 2·0.16)/4) = sqrt(0.1).
        let got = pooled_std(0.2, 3, 0.4, 3);
        assert!((got - 0.1f64.sqrt()).abs() < 1e-12, "{got}");
        // Degenerate singletons pool to the other sample's spread.
        let got = pooled_std(0.0, 1, 0.3, 3);
        assert!((got - (2.0 * 0.09f64 / 2.0).sqrt()).abs() < 1e-12, "{got}");
    }

    #[test]
    fn sweep_summary_hand_oracle() {
        let records = vec![
            rec(1, 0.0, 1, 100, 9.9, 0.1, 0.1, Some(0.9)), // superseded by step 200
            rec(1, 0.0, 1, 200, 0.2, 0.9, 0.5, Some(0.1)),
            rec(1, 0.0, 2, 200, 0.4, 0.7, 0.7, Some(0.5)),
            rec(2, 0.0, 1, 200, 0.5, 0.6, 0.8, Some(0.3)),
            rec(2, 0.0, 2, 200, 0.5, 0.4, 0.6, Some(0.5)),
        ];
        let summary = SweepSummary::from_records(&records);
        assert_eq!(summary.cells.len(), 2);

        let c1 = summary.cell(1, 0.0).unwrap();
        assert_eq!(c1.seeds_completed, 2);
        assert!((c1.recon_loss.mean - 0.3).abs() < 1e-12);
        assert!((c1.recon_loss.max - 0.4).abs() < 1e-12);
        assert!((c1.recon_loss.std - 0.02f64.sqrt()).abs() < 1e-12);
        assert!((c1.concept_accuracy.mean - 0.6).abs() < 1e-12);
        let r1 = c1.rsa_rho.unwrap();
        assert!((r1.mean - 0.3).abs() < 1e-12);
        assert!((r1.std - 0.08f64.sqrt()).abs() < 1e-12);

        let c2 = summary.cell(2, 0.0).unwrap();
        assert!((c2.recon_loss.mean - 0.5).abs() < 1e-12);
        assert_eq!(c2.recon_loss.std, 0.0);
        assert!((c2.concept_accuracy.mean - 0.7).abs() < 1e-12);

        for c in &summary.cells {
            assert!(c.recon_loss.mean <= c.recon_loss.max + 1e-12);
            assert!(c.concept_accuracy.mean <= c.concept_accuracy.max + 1e-12);
        }

        assert_eq!(summary.trends.len(), 1);
        let t = &summary.trends[0];
        assert_eq!((t.min_size, t.max_size), (1, 2));
        assert!(t.concept_accuracy_strictly_improves); // 0.7 > 0.6
        assert_eq!(t.rsa_strictly_improves, Some(true)); // 0.4 > 0.3
        assert!(t.recon_loss_non_decreasing); // 0.5 ≥ 0.3 − pooled
        assert!(t.seed_variance_shrinks.recon_loss); // 0 ≤ 0.141
        assert_eq!(t.seed_variance_shrinks.rsa_rho, Some(true)); // √0.02 < √0.08
    }

    #[test]
    fn sweep_summary_drops_rsa_when_any_seed_lacks_it() {
        let records = vec![
            rec(4, 0.0, 1, 100, 0.5, 0.6, 0.8, Some(0.5)),
            rec(4, 0.0, 2, 100, 0.5, 0.4, 0.6, None),
        ];
        let summary = SweepSummary::from_records(&records);
        assert_eq!(summary.cell(4, 0.0).unwrap().rsa_rho, None);
        assert!(summary.trends.is_empty()); // a single size has no trend
    }

    #[test]
    fn ensemble_seed_lists() {
        assert_eq!(ensemble_seeds(&[1, 2, 3], 5), vec![1, 2, 3, 4, 5]);
        assert_eq!(ensemble_seeds(&[1, 2, 3], 2), vec![1, 2]);
        assert_eq!(ensemble_seeds(&[5, 1], 4), vec![5, 1, 6, 7]);
    }

    #[test]
    fn export_rejects_unknown_metric_naming_the_valid_ones() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("metrics.jsonl");
        std::fs::write(&log, "").unwrap();
        let out = dir.path().join("plot.csv");
        match export_plot_data(&log, "recon_loss", "bogus", &out) {
            Err(e @ ExpError::UnknownMetric { .. }) => {
                let msg = e.to_string();
                assert!(msg.contains("bogus"), "{msg}");
                assert!(msg.contains("concept_accuracy"), "{msg}");
                assert!(msg.contains("rsa_rho"), "{msg}");
            }
            other => panic!("expected unknown-metric error, got {other:?}"),
        }
    }

    #[test]
    fn export_sorts_within_series_and_drops_incomplete_rows() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("metrics.jsonl");
        let records = [
            rec(2, 0.0, 1, 100, 0.5, 0.6, 0.8, Some(0.3)),
            rec(1, 0.0, 1, 100, 0.9, 0.9, 0.5, Some(0.1)),
            rec(1, 0.0, 2, 100, 0.4, 0.7, 0.7, None), // no rho: dropped
            rec(1, 0.0, 1, 200, 0.2, 0.9, 0.5, Some(0.2)),
        ];
        let text: String = records
            .iter()
            .map(|r| serde_json::to_string(r).unwrap() + "\n")
            .collect();
        std::fs::write(&log, text).unwrap();

        let out = dir.path().join("plot.csv");
        let rows = export_plot_data(&log, "recon_loss", "rsa_rho", &out).unwrap();
        assert_eq!(rows, 3);
        let csv = std::fs::read_to_string(&out).unwrap();
        assert_eq!(
            csv,
            "recon_loss,rsa_rho,K,seed\n0.2,0.2,1,1\n0.9,0.1,1,1\n0.5,0.3,2,1\n"
        );

        // Both metrics always present → every record exports.
        let rows = export_plot_data(&log, "step", "concept_accuracy", &out).unwrap();
        assert_eq!(rows, records.len());
    }

    #[test]
    fn export_of_empty_log_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("metrics.jsonl");
        std::fs::write(&log, "").unwrap();
        let out = dir.path().join("plot.csv");
        let rows = export_plot_data(&log, "recon_loss", "concept_accuracy", &out).unwrap();
        assert_eq!(rows, 0);
        assert_eq!(
            std::fs::read_to_string(&out).unwrap(),
            "recon_loss,concept_accuracy,K,seed\n"
        );
    }

    #[test]
    fn run_experiment_validates_before_touching_the_disk() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.train.steps = 0;
        assert!(matches!(
            run_experiment(&cfg, 1),
            Err(ExpError::Config(_))
        ));
        assert!(!dir.path().join("tiny").exists());
    }

    #[test]
    fn run_experiment_fails_fast_on_unwritable_output() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        std::fs::write(dir.path().join("tiny"), "in the way").unwrap();
        assert!(matches!(run_experiment(&cfg, 1), Err(ExpError::Io { .. })));
    }

    #[test]
    fn tiny_experiment_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let summary = run_experiment(&cfg, 1).unwrap();

        // steps/eval_interval records for the single cell.
        let run_dir = dir.path().join("tiny");
        let lines = read_metrics_log(&run_dir.join("metrics.jsonl")).unwrap();
        assert_eq!(lines.len(), 2);
        let metrics = log_metrics(&lines);
        assert!(metrics.iter().all(|r| r.experiment_id == "tiny"));
        assert_eq!(metrics[0].step, 2);
        assert_eq!(metrics[1].step, 4);
        assert_eq!(metrics[0].encoder_id_chance, 1.0);

        // The resolved config round-trips to the one we ran.
        let resolved: ExperimentConfig = toml::from_str(
            &std::fs::read_to_string(run_dir.join("config.resolved.toml")).unwrap(),
        )
        .unwrap();
        assert_eq!(resolved, cfg);

        // Summary on disk equals the returned summary, and an independent
        // recomputation from the raw log agrees.
        let disk: SweepSummary = serde_json::from_str(
            &std::fs::read_to_string(run_dir.join("summary.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(disk, summary);
        let owned: Vec<MetricsRecord> = metrics.iter().map(|r| (*r).clone()).collect();
        assert_eq!(SweepSummary::from_records(&owned), summary);

        // Single seed: mean == max, std == 0.
        let cell = summary.cell(1, 0.0).unwrap();
        assert_eq!(cell.seeds_completed, 1);
        assert_eq!(cell.recon_loss.mean, cell.recon_loss.max);
        assert_eq!(cell.recon_loss.std, 0.0);

        // The checkpoint exists and re-probing it reproduces the run's own
        // final evaluation bit for bit.
        let ckpt = run_dir.join("checkpoints").join("k1_lambda0_seed5.json");
        assert!(ckpt.exists(), "missing {}", ckpt.display());
        let snap = probe_checkpoint(&cfg, &ckpt).unwrap();
        let last = metrics.last().unwrap();
        assert_eq!(snap.community_size, 1);
        assert_eq!(snap.encoder_id.accuracy, last.encoder_id_accuracy);
        assert_eq!(snap.concept_accuracy_mean, last.concept_accuracy);
        assert_eq!(snap.rsa_rho_mean, last.rsa_rho);
    }

    #[test]
    fn grid_runs_every_cell_and_summarizes_per_size() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.experiment_id = "grid".into();
        cfg.train.steps = 2;
        cfg.train.eval_interval = 2;
        cfg.sweep.community_sizes = vec![1, 2, 4];
        cfg.sweep.seeds = vec![1, 2, 3];
        let summary = run_experiment(&cfg, 2).unwrap();

        let lines =
            read_metrics_log(&dir.path().join("grid").join("metrics.jsonl")).unwrap();
        assert_eq!(lines.len(), 9); // 9 runs × 1 record each
        assert_eq!(summary.cells.len(), 3);
        for (k, seeds) in [(1, 3), (2, 3), (4, 3)] {
            assert_eq!(summary.cell(k, 0.0).unwrap().seeds_completed, seeds);
        }
        assert_eq!(summary.trends.len(), 1);

        // Cells appear in sweep order: K ascending, seeds within.
        let ks: Vec<usize> = log_metrics(&lines)
            .iter()
            .map(|r| r.community_size)
            .collect();
        assert_eq!(ks, vec![1, 1, 1, 2, 2, 2, 4, 4, 4]);
    }

    #[test]
    fn reruns_and_worker_counts_leave_identical_log_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.experiment_id = "det".into();
        cfg.train.steps = 2;
        cfg.train.eval_interval = 1;
        cfg.sweep.community_sizes = vec![1, 2];
        cfg.sweep.seeds = vec![1, 2];
        let log = dir.path().join("det").join("metrics.jsonl");

        run_experiment(&cfg, 1).unwrap();
        let first = std::fs::read(&log).unwrap();
        assert!(!first.is_empty());

        run_experiment(&cfg, 1).unwrap();
        assert_eq!(std::fs::read(&log).unwrap(), first, "rerun changed the log");

        run_experiment(&cfg, 4).unwrap();
        assert_eq!(
            std::fs::read(&log).unwrap(),
            first,
            "worker count changed the log"
        );
    }

    #[test]
    fn ensemble_baseline_reuses_the_single_run_path() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.experiment_id = "ens".into();
        cfg.sweep.community_sizes = vec![2];
        cfg.sweep.seeds = vec![1];

        let summary = run_ensemble_baseline(&cfg, 3, 1).unwrap();
        let cell = summary.cell(1, 0.0).unwrap();
        assert_eq!(cell.seeds_completed, 3);
        for stats in [&cell.recon_loss, &cell.encoder_id_accuracy, &cell.concept_accuracy] {
            assert!(stats.max >= stats.mean);
        }

        // Ensemble members are exactly the runs a [1]-sweep would do.
        let mut solo = cfg.clone();
        solo.experiment_id = "solo".into();
        solo.sweep.community_sizes = vec![1];
        solo.sweep.seeds = vec![1, 2, 3];
        run_experiment(&solo, 1).unwrap();

        let base_lines =
            read_metrics_log(&dir.path().join("ens_baseline").join("metrics.jsonl")).unwrap();
        let solo_lines =
            read_metrics_log(&dir.path().join("solo").join("metrics.jsonl")).unwrap();
        let strip = |lines: &[LogLine]| -> Vec<MetricsRecord> {
            log_metrics(lines)
                .into_iter()
                .map(|r| MetricsRecord {
                    experiment_id: String::new(),
                    ..r.clone()
                })
                .collect()
        };
        assert_eq!(strip(&base_lines), strip(&solo_lines));
    }

    #[test]
    fn ensemble_of_one_has_mean_equal_max() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.experiment_id = "one".into();
        let summary = run_ensemble_baseline(&cfg, 1, 1).unwrap();
        let cell = summary.cell(1, 0.0).unwrap();
        assert_eq!(cell.recon_loss.mean, cell.recon_loss.max);
        assert_eq!(cell.concept_accuracy.mean, cell.concept_accuracy.max);
        let rsa = cell.rsa_rho.unwrap();
        assert_eq!(rsa.mean, rsa.max);
        assert!(matches!(
            run_ensemble_baseline(&cfg, 0, 1),
            Err(ExpError::Config(_))
        ));
    }

    #[test]
    fn diverging_run_is_logged_as_a_failure_and_sweep_errors_when_all_fail() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.experiment_id = "boom".into();
        cfg.train.lr = 1e308;
        cfg.train.steps = 50;
        match run_experiment(&cfg, 1) {
            Err(ExpError::AllRunsFailed { total: 1, first }) => {
                assert!(first.contains("non-finite"), "{first}");
            }
            other => panic!("expected AllRunsFailed, got {other:?}"),
        }
        let lines =
            read_metrics_log(&dir.path().join("boom").join("metrics.jsonl")).unwrap();
        assert!(lines.iter().any(|l| matches!(l, LogLine::Failure(_))));
    }
}
