//! End-to-end commands: train the representation, evaluate episodic few-shot
//! performance, dump feature spectra, sweep the averaging hyperparameters,
//! and compare averaging strategies off one shared SGD trajectory.
//!
//! Everything is deterministic in (config, seed): per-task and per-episode
//! RNG streams are derived from the experiment seed and fixed domain tags,
//! worker parallelism writes into indexed slots, and all files are emitted
//! with round-trip-exact number formatting. Rerunning any command overwrites
//! its outputs with identical bytes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mfrl_core::bayes;
use mfrl_core::data::{
    self, gen_blob_classes, gen_sine_split, sample_episode, sample_regression_split,
    LabeledDataset, SineTask,
};
use mfrl_core::eval::{self, AccuracyTable, CalibrationReport, SpectrumReport};
use mfrl_core::logreg::{
    self, episode_accuracy, normalize_features, pooled_query_logits, select_lambda,
    select_temperature, EpisodeFeatures, GridSearchResult, LogRegFit,
};
use mfrl_core::mcmc::{self, McmcConfig};
use mfrl_core::repr::{
    averaging_phase, extract_features, sgd_phase, MergedDataset, TaskSamples, TrainState,
};
use mfrl_core::rng::{domain, Stream};
use mfrl_core::{CoreError, Matrix, MlpSpec, ParamVector};
use sha2::{Digest, Sha256};

use crate::checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, Which};
use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{CliError, Result};
use crate::featfile::{read_feature_file, write_feature_file, FeatureFile, TAG_TEST, TAG_TRAIN, TAG_VAL};
use crate::reports::{self, MetricValue, RegressionRow, SweepRow};

pub const CHECKPOINT_FILE: &str = "model.mfrlckpt";

pub fn checkpoint_path(out: &Path) -> PathBuf {
    out.join(CHECKPOINT_FILE)
}

// ---------------------------------------------------------------------------
// worker pool

/// Worker count for `jobs` independent jobs: `MFRL_THREADS` caps the
/// machine's available parallelism.
pub fn worker_count(jobs: usize) -> Result<usize> {
    let available = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    let cap = match std::env::var("MFRL_THREADS") {
        Ok(v) => parse_thread_cap(&v)?,
        Err(std::env::VarError::NotPresent) => available,
        Err(e) => return Err(CliError::Config(format!("MFRL_THREADS: {e}"))),
    };
    Ok(cap.min(jobs).max(1))
}

fn parse_thread_cap(v: &str) -> Result<usize> {
    match v.trim().parse::<usize>() {
        Ok(n) if n >= 1 => Ok(n),
        _ => Err(CliError::Config(format!(
            "MFRL_THREADS must be a positive integer, got {v:?}"
        ))),
    }
}

/// Maps `f` over `0..n` with up to `workers` threads. Each worker takes a
/// strided slice of indices and results land in indexed slots, so the output
/// (including which error surfaces: the lowest-index one) is identical to
/// the sequential run.
pub fn parallel_map<T, F>(n: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    if workers <= 1 || n <= 1 {
        return (0..n).map(|i| f(i)).collect();
    }
    let mut slots: Vec<Option<Result<T>>> = (0..n).map(|_| None).collect();
    std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(workers);
        for w in 0..workers {
            let f = &f;
            handles.push(scope.spawn(move || {
                let mut out = Vec::new();
                let mut i = w;
                while i < n {
                    out.push((i, f(i)));
                    i += workers;
                }
                out
            }));
        }
        for h in handles {
            for (i, r) in h.join().expect("evaluation worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("every index is assigned to one worker"))
        .collect()
}

// ---------------------------------------------------------------------------
// training

#[derive(Debug, Clone)]
pub struct TrainedBackbone {
    pub spec: MlpSpec,
    pub theta_sgd: ParamVector,
    pub theta_swa: ParamVector,
    pub log: Vec<mfrl_core::repr::EpochRecord>,
}

fn sine_merged(tasks: &[SineTask]) -> Result<MergedDataset> {
    let samples: Vec<TaskSamples> = tasks
        .iter()
        .map(|t| TaskSamples {
            inputs: t.inputs(),
            targets: t.ys.clone(),
        })
        .collect();
    Ok(MergedDataset::merge_tasks(&samples)?)
}

/// Meta-train pool as one supervised problem: for classification the train
/// classes are relabeled 0..C_train by their position in the (shuffled)
/// split list, and the backbone gets one output per train class.
fn classification_merged(dataset: &LabeledDataset, train_classes: &[usize]) -> Result<MergedDataset> {
    let mut class_pos = vec![usize::MAX; dataset.class_count];
    for (pos, &c) in train_classes.iter().enumerate() {
        class_pos[c] = pos;
    }
    let keep: Vec<usize> = (0..dataset.len())
        .filter(|&i| class_pos[dataset.labels[i]] != usize::MAX)
        .collect();
    let mut inputs = Matrix::zeros(keep.len(), dataset.inputs.cols());
    let mut labels = Vec::with_capacity(keep.len());
    for (r, &i) in keep.iter().enumerate() {
        inputs.row_mut(r).copy_from_slice(dataset.inputs.row(i));
        labels.push(class_pos[dataset.labels[i]]);
    }
    Ok(MergedDataset::from_labeled(
        inputs,
        labels,
        train_classes.len(),
    )?)
}

fn merged_for_training(cfg: &ExperimentConfig) -> Result<(MergedDataset, usize)> {
    match cfg.kind {
        ExperimentKind::SineRegression => {
            let (train, _, _) = gen_sine_split(cfg.data.tasks_per_split, cfg.seed);
            let merged = sine_merged(&train)?;
            Ok((merged, 1))
        }
        ExperimentKind::SyntheticClassification => {
            let (dataset, split) = gen_blob_classes(
                cfg.data.classes,
                cfg.data.dim,
                cfg.data.per_class,
                cfg.data.intra_std,
                cfg.seed,
            )?;
            let merged = classification_merged(&dataset, &split.train)?;
            Ok((merged, cfg.data.dim))
        }
        ExperimentKind::FeatureFileClassification => Err(CliError::Config(
            "feature-file experiments carry precomputed features; there is nothing to train".into(),
        )),
    }
}

fn repr_config(cfg: &ExperimentConfig) -> mfrl_core::repr::ReprTrainConfig {
    let mut rc = cfg.repr.clone();
    rc.seed = cfg.seed;
    rc
}

/// Two-phase representation training for the configured experiment.
pub fn train_backbone(cfg: &ExperimentConfig) -> Result<TrainedBackbone> {
    let (merged, input_dim) = merged_for_training(cfg)?;
    let spec = MlpSpec::new(
        input_dim,
        cfg.hidden.clone(),
        merged.group_count(),
        cfg.activation,
    )?;
    let rc = repr_config(cfg);
    let outcome = mfrl_core::repr::train_representation(&spec, &merged, &rc)?;
    Ok(TrainedBackbone {
        spec,
        theta_sgd: outcome.theta_sgd,
        theta_swa: outcome.theta_swa,
        log: outcome.log,
    })
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let trained = train_backbone(cfg)?;
    let log_csv = reports::train_log_csv(&trained.log);
    let mut hasher = Sha256::new();
    hasher.update(log_csv.as_bytes());
    let log_digest: [u8; 32] = hasher.finalize().into();

    let theta_swa = if cfg.repr.swa_duration.is_zero() {
        None
    } else {
        Some(trained.theta_swa)
    };
    let ckpt = Checkpoint {
        spec: trained.spec,
        theta_sgd: trained.theta_sgd,
        theta_swa,
        seed: cfg.seed,
        log_digest,
        config_hash: cfg.config_hash(),
    };
    reports::write_text(&cfg.out.join("train_log.csv"), &log_csv)?;
    let path = checkpoint_path(&cfg.out);
    write_checkpoint(&path, &ckpt)?;
    Ok(path)
}

fn load_backbone(cfg: &ExperimentConfig, path: Option<&Path>) -> Result<Checkpoint> {
    let path = path.ok_or_else(|| {
        CliError::Config(format!(
            "{} evaluation needs --checkpoint",
            cfg.kind.name()
        ))
    })?;
    let ckpt = read_checkpoint(path)?;
    let expected_input = match cfg.kind {
        ExperimentKind::SineRegression => 1,
        ExperimentKind::SyntheticClassification => cfg.data.dim,
        ExperimentKind::FeatureFileClassification => {
            return Err(CliError::Config(
                "feature-file evaluation does not take a checkpoint".into(),
            ))
        }
    };
    if ckpt.spec.input_dim != expected_input
        || ckpt.spec.hidden_dims != cfg.hidden
        || ckpt.spec.activation != cfg.activation
    {
        return Err(CliError::Config(format!(
            "checkpoint backbone {}-{:?}-{} does not match the config ({}, {:?}, {})",
            ckpt.spec.input_dim,
            ckpt.spec.hidden_dims,
            ckpt.spec.activation.name(),
            expected_input,
            cfg.hidden,
            cfg.activation.name(),
        )));
    }
    Ok(ckpt)
}

// ---------------------------------------------------------------------------
// regression evaluation

#[derive(Debug, Clone)]
pub struct SineEvalOutput {
    pub rows: Vec<RegressionRow>,
    pub mse_mean: f64,
    /// Sample standard deviation over test tasks (the ± column).
    pub mse_std: f64,
    pub noise_std_median: f64,
    pub converged_count: usize,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn sample_std(values: &[f64], mean: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / (values.len() - 1) as f64;
    var.sqrt()
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite metric values"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Few-shot evaluation on the sine meta-test split: per task, a seeded
/// k-shot support split, an evidence-approximation head on frozen features,
/// and the mean squared error of the predictive mean on the queries.
/// Evidence fits that hit the iteration cap are scored with their last
/// iterate and flagged in the per-task rows.
pub fn eval_sine_params(
    cfg: &ExperimentConfig,
    spec: &MlpSpec,
    params: &ParamVector,
) -> Result<SineEvalOutput> {
    let (_, _, test) = gen_sine_split(cfg.data.tasks_per_split, cfg.seed);
    if cfg.episodes.count > test.len() {
        return Err(CliError::Config(format!(
            "episodes.count = {} exceeds the {} test tasks",
            cfg.episodes.count,
            test.len()
        )));
    }
    let tasks = &test[..cfg.episodes.count];
    let workers = worker_count(tasks.len())?;
    let rows = parallel_map(tasks.len(), workers, |t| {
        let task = &tasks[t];
        let mut stream = Stream::derived(cfg.seed, &[domain::SUPPORT, t as u64]);
        let (support, query) = sample_regression_split(task.len(), cfg.episodes.shot, &mut stream)?;
        let phi = extract_features(spec, params, &task.inputs(), true)?;
        let mut phi_s = Matrix::zeros(support.len(), phi.cols());
        let mut y_s = Vec::with_capacity(support.len());
        for (r, &i) in support.iter().enumerate() {
            phi_s.row_mut(r).copy_from_slice(phi.row(i));
            y_s.push(task.ys[i]);
        }
        let (post, converged) = match bayes::fit_evidence(
            &phi_s,
            &y_s,
            &cfg.head.hyperprior,
            cfg.head.evidence_tol,
            cfg.head.evidence_max_iter,
        ) {
            Ok(p) => (p, true),
            Err(CoreError::EvidenceNoConvergence { last, .. }) => (*last, false),
            Err(e) => return Err(e.into()),
        };
        let mut se = 0.0;
        for &i in &query {
            let (pred, _) = bayes::predict(&post, phi.row(i));
            let diff = pred - task.ys[i];
            se += diff * diff;
        }
        Ok(RegressionRow {
            task: t,
            mse: se / query.len() as f64,
            noise_std: post.noise_std(),
            converged,
        })
    })?;
    let mses: Vec<f64> = rows.iter().map(|r| r.mse).collect();
    let stds: Vec<f64> = rows.iter().map(|r| r.noise_std).collect();
    let mse_mean = mean(&mses);
    Ok(SineEvalOutput {
        converged_count: rows.iter().filter(|r| r.converged).count(),
        mse_std: sample_std(&mses, mse_mean),
        noise_std_median: median(&stds),
        mse_mean,
        rows,
    })
}

// ---------------------------------------------------------------------------
// classification evaluation

/// Normalized episode feature source: one row of `features` per dataset
/// sample ([h/‖h‖; 1]), plus the validation / test sampling pools (dataset
/// restricted to the split plus its sorted class list).
pub struct FeaturePool {
    pub features: Matrix,
    pub val: (LabeledDataset, Vec<usize>),
    pub test: (LabeledDataset, Vec<usize>),
}

fn normalized_with_bias(raw: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(raw.rows(), raw.cols() + 1);
    for i in 0..raw.rows() {
        out.row_mut(i).copy_from_slice(&normalize_features(raw.row(i)));
    }
    out
}

/// Builds the pool for the configured source. Split class lists are always
/// sorted ascending so the class-level (synthetic) and per-sample (feature
/// file) split encodings drive identical episode streams.
pub fn build_feature_pool(
    cfg: &ExperimentConfig,
    backbone: Option<(&MlpSpec, &ParamVector)>,
) -> Result<FeaturePool> {
    match cfg.kind {
        ExperimentKind::SineRegression => Err(CliError::Config(
            "episode classification needs a classification experiment".into(),
        )),
        ExperimentKind::SyntheticClassification => {
            let (spec, params) = backbone.ok_or_else(|| {
                CliError::Config("synthetic-classification evaluation needs a checkpoint".into())
            })?;
            let (dataset, split) = gen_blob_classes(
                cfg.data.classes,
                cfg.data.dim,
                cfg.data.per_class,
                cfg.data.intra_std,
                cfg.seed,
            )?;
            let raw = extract_features(spec, params, &dataset.inputs, false)?;
            let features = normalized_with_bias(&raw);
            let mut val_classes = split.val.clone();
            let mut test_classes = split.test.clone();
            val_classes.sort_unstable();
            test_classes.sort_unstable();
            Ok(FeaturePool {
                features,
                val: (dataset.clone(), val_classes),
                test: (dataset, test_classes),
            })
        }
        ExperimentKind::FeatureFileClassification => {
            let path = cfg
                .data
                .feature_file
                .as_ref()
                .expect("validated: feature_file is set");
            let file = read_feature_file(path)?;
            let features = normalized_with_bias(&file.features);
            let val = file.split_pool(TAG_VAL)?;
            let test = file.split_pool(TAG_TEST)?;
            Ok(FeaturePool { features, val, test })
        }
    }
}

fn gather_rows(features: &Matrix, indices: &[usize]) -> Matrix {
    let mut m = Matrix::zeros(indices.len(), features.cols());
    for (r, &i) in indices.iter().enumerate() {
        m.row_mut(r).copy_from_slice(features.row(i));
    }
    m
}

fn realize_episode(ep: &data::Episode, features: &Matrix) -> EpisodeFeatures {
    EpisodeFeatures {
        support: gather_rows(features, &ep.support_indices),
        support_labels: ep.support_labels.clone(),
        query: gather_rows(features, &ep.query_indices),
        query_labels: ep.query_labels.clone(),
        way: ep.way,
    }
}

/// Episode `i` of evaluation run `run` (run 0 is the validation stream) in
/// feature space, reproducible from (seed, run, i) alone.
pub fn episode_features(
    cfg: &ExperimentConfig,
    pool: &FeaturePool,
    run: usize,
    i: usize,
) -> Result<EpisodeFeatures> {
    let (dataset, classes) = if run == 0 { &pool.val } else { &pool.test };
    let mut stream = Stream::derived(cfg.seed, &[domain::EPISODE, run as u64, i as u64]);
    let ep = sample_episode(
        dataset,
        classes,
        cfg.episodes.way,
        cfg.episodes.shot,
        cfg.episodes.query,
        &mut stream,
    )?;
    Ok(realize_episode(&ep, &pool.features))
}

/// Row-wise temperature-scaled softmax, stabilized against overflow.
pub fn softmax_rows(logits: &Matrix, temperature: f64) -> Matrix {
    let mut probs = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        let row = logits.row(i);
        let zmax = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        let out = probs.row_mut(i);
        for (c, &z) in row.iter().enumerate() {
            let p = ((z - zmax) / temperature).exp();
            out[c] = p;
            sum += p;
        }
        for p in out.iter_mut() {
            *p /= sum;
        }
    }
    probs
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct McmcComparison {
    pub attempted: usize,
    pub failed: usize,
    /// Mean episode accuracy of each head over the episodes where the
    /// sampler's acceptance check passed; `None` when none passed.
    pub mcmc_accuracy: Option<f64>,
    pub logreg_accuracy: Option<f64>,
    pub mean_acceptance: Option<f64>,
    pub max_r_hat: Option<f64>,
}

#[derive(Debug)]
pub struct ClassificationEvalOutput {
    pub grid: GridSearchResult,
    /// Per-run and pooled accuracy over the test runs.
    pub table: AccuracyTable,
    /// Test run ids as reported in results.csv (1-based; run 0 is the
    /// validation stream).
    pub run_ids: Vec<usize>,
    /// Pooled validation reliability at the chosen temperature.
    pub reliability: CalibrationReport,
    /// The same pool at T = 1.
    pub reliability_raw: CalibrationReport,
    pub mcmc: Option<McmcComparison>,
}

/// Full classification protocol on a frozen feature source: λ grid search on
/// the validation stream, temperature selection on its pooled query logits,
/// then `runs × count` freshly sampled test episodes refit at the chosen λ.
pub fn eval_classification_params(
    cfg: &ExperimentConfig,
    backbone: Option<(&MlpSpec, &ParamVector)>,
) -> Result<ClassificationEvalOutput> {
    let pool = build_feature_pool(cfg, backbone)?;

    let val_episodes: Vec<EpisodeFeatures> = (0..cfg.episodes.val_episodes)
        .map(|i| episode_features(cfg, &pool, 0, i))
        .collect::<Result<_>>()?;
    let partial = select_lambda(&val_episodes, &cfg.head.lambda_grid)?;
    let fits: Vec<LogRegFit> = val_episodes
        .iter()
        .map(|ep| logreg::fit(&ep.support, &ep.support_labels, ep.way, partial.chosen_lambda))
        .collect::<core::result::Result<_, _>>()?;
    let pooled = pooled_query_logits(&fits, &val_episodes)?;
    let grid = select_temperature(&partial, &pooled, &cfg.head.temperature_grid, cfg.head.bins)?;

    let probs_scaled = softmax_rows(&pooled.logits, grid.chosen_temperature);
    let reliability = eval::reliability_bins(&probs_scaled, &pooled.labels, cfg.head.bins)?;
    let probs_raw = softmax_rows(&pooled.logits, 1.0);
    let reliability_raw = eval::reliability_bins(&probs_raw, &pooled.labels, cfg.head.bins)?;

    let runs = cfg.episodes.runs;
    let count = cfg.episodes.count;
    let jobs = runs * count;
    let workers = worker_count(jobs)?;
    let chosen_lambda = grid.chosen_lambda;
    let accs = parallel_map(jobs, workers, |j| {
        let run = j / count + 1;
        let i = j % count;
        let ep = episode_features(cfg, &pool, run, i)?;
        let fit = logreg::fit(&ep.support, &ep.support_labels, ep.way, chosen_lambda)?;
        Ok(episode_accuracy(&fit.w, &ep))
    })?;
    let table = eval::eval_episodes(runs, count, |r, i| Ok(accs[r * count + i]))?;

    let mcmc = if cfg.head.mcmc.enabled {
        Some(mcmc_comparison(cfg, &pool, &accs)?
        )
    } else {
        None
    };

    Ok(ClassificationEvalOutput {
        grid,
        table,
        run_ids: (1..=runs).collect(),
        reliability,
        reliability_raw,
        mcmc,
    })
}

/// Reruns the first test-run episodes under the MCMC head (features
/// truncated to the configured width) and reports the accuracy gap against
/// the logistic head on the same episodes. Episodes whose post-warmup
/// acceptance rate leaves the usable window are counted and skipped.
fn mcmc_comparison(
    cfg: &ExperimentConfig,
    pool: &FeaturePool,
    logreg_accs: &[f64],
) -> Result<McmcComparison> {
    let section = &cfg.head.mcmc;
    let attempted = section.episodes.min(cfg.episodes.count);
    let keep_dim = section.max_dim.min(mcmc::MAX_FEATURE_DIM);
    let mut failed = 0usize;
    let mut mcmc_accs = Vec::new();
    let mut logreg_matched = Vec::new();
    let mut acceptances = Vec::new();
    let mut max_r_hat: Option<f64> = None;
    for i in 0..attempted {
        let ep = episode_features(cfg, pool, 1, i)?;
        let (support, query) = if ep.support.cols() > keep_dim + 1 {
            (
                mcmc::truncate_feature_columns(&ep.support, keep_dim),
                mcmc::truncate_feature_columns(&ep.query, keep_dim),
            )
        } else {
            (ep.support.clone(), ep.query.clone())
        };
        let sampler_cfg = McmcConfig {
            chains: section.chains,
            warmup: section.warmup,
            kept: section.kept,
            target_accept: section.target_accept,
            seed: Stream::derived(cfg.seed, &[domain::MCMC, 1, i as u64]).next_u64(),
            ..McmcConfig::default()
        };
        let samples = match mcmc::fit_mcmc(&support, &ep.support_labels, ep.way, &sampler_cfg) {
            Ok(s) => s,
            Err(CoreError::McmcAcceptance { .. }) => {
                failed += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let mut correct = 0usize;
        for q in 0..query.rows() {
            let probs = mcmc::predict_mc(&samples, query.row(q))?;
            if argmax(&probs) == ep.query_labels[q] {
                correct += 1;
            }
        }
        mcmc_accs.push(correct as f64 / query.rows() as f64);
        logreg_matched.push(logreg_accs[i]);
        acceptances.push(samples.acceptance_rate);
        if let Some(rh) = &samples.r_hat {
            let m = rh.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            max_r_hat = Some(max_r_hat.map_or(m, |cur| cur.max(m)));
        }
    }
    let succeeded = !mcmc_accs.is_empty();
    Ok(McmcComparison {
        attempted,
        failed,
        mcmc_accuracy: succeeded.then(|| mean(&mcmc_accs)),
        logreg_accuracy: succeeded.then(|| mean(&logreg_matched)),
        mean_acceptance: succeeded.then(|| mean(&acceptances)),
        max_r_hat,
    })
}

// ---------------------------------------------------------------------------
// evaluate command

#[derive(Debug)]
pub enum EvalOutput {
    Regression(SineEvalOutput),
    Classification(ClassificationEvalOutput),
}

pub fn cmd_evaluate(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    which: Which,
) -> Result<EvalOutput> {
    cfg.validate()?;
    let mut metrics: BTreeMap<String, MetricValue> = BTreeMap::new();
    metrics.insert("kind".into(), cfg.kind.name().into());
    metrics.insert("seed".into(), cfg.seed.into());
    match cfg.kind {
        ExperimentKind::SineRegression => {
            let ckpt = load_backbone(cfg, checkpoint)?;
            let params = ckpt.params(which)?;
            metrics.insert("which".into(), which.name().into());
            let out = eval_sine_params(cfg, &ckpt.spec, params)?;
            metrics.insert("mse_mean".into(), out.mse_mean.into());
            metrics.insert("mse_std".into(), out.mse_std.into());
            metrics.insert("noise_std_median".into(), out.noise_std_median.into());
            metrics.insert("tasks".into(), (out.rows.len() as u64).into());
            metrics.insert("converged_count".into(), (out.converged_count as u64).into());
            metrics.insert("shot".into(), (cfg.episodes.shot as u64).into());
            reports::write_text(
                &cfg.out.join("results.csv"),
                &reports::regression_results_csv(&out.rows),
            )?;
            reports::write_text(&cfg.out.join("metrics.json"), &reports::metrics_json(&metrics)?)?;
            Ok(EvalOutput::Regression(out))
        }
        ExperimentKind::SyntheticClassification | ExperimentKind::FeatureFileClassification => {
            let backbone_ckpt = match cfg.kind {
                ExperimentKind::SyntheticClassification => Some(load_backbone(cfg, checkpoint)?),
                _ => {
                    if checkpoint.is_some() {
                        return Err(CliError::Config(
                            "feature-file evaluation does not take a checkpoint".into(),
                        ));
                    }
                    None
                }
            };
            let backbone = match &backbone_ckpt {
                Some(ckpt) => {
                    metrics.insert("which".into(), which.name().into());
                    Some((&ckpt.spec, ckpt.params(which)?))
                }
                None => None,
            };
            let out = eval_classification_params(cfg, backbone)?;
            metrics.insert("accuracy".into(), out.table.pooled_mean.into());
            metrics.insert("ci".into(), out.table.pooled_ci95.into());
            metrics.insert("ece".into(), out.reliability.ece.into());
            metrics.insert("mce".into(), out.reliability.mce.into());
            metrics.insert("brier".into(), out.reliability.brier.into());
            metrics.insert("ece_raw".into(), out.reliability_raw.ece.into());
            metrics.insert("mce_raw".into(), out.reliability_raw.mce.into());
            metrics.insert("brier_raw".into(), out.reliability_raw.brier.into());
            metrics.insert("chosen_lambda".into(), out.grid.chosen_lambda.into());
            metrics.insert("chosen_temperature".into(), out.grid.chosen_temperature.into());
            metrics.insert("runs".into(), (cfg.episodes.runs as u64).into());
            metrics.insert(
                "episodes_per_run".into(),
                (cfg.episodes.count as u64).into(),
            );
            if let Some(mc) = &out.mcmc {
                metrics.insert("mcmc_attempted".into(), (mc.attempted as u64).into());
                metrics.insert("mcmc_failed".into(), (mc.failed as u64).into());
                if let Some(v) = mc.mcmc_accuracy {
                    metrics.insert("mcmc_accuracy".into(), v.into());
                }
                if let Some(v) = mc.logreg_accuracy {
                    metrics.insert("mcmc_logreg_accuracy".into(), v.into());
                }
                if let Some(v) = mc.mean_acceptance {
                    metrics.insert("mcmc_mean_acceptance".into(), v.into());
                }
                if let Some(v) = mc.max_r_hat {
                    metrics.insert("mcmc_max_r_hat".into(), v.into());
                }
            }
            reports::write_text(
                &cfg.out.join("results.csv"),
                &reports::classification_results_csv(&out.run_ids, &out.table.accuracies),
            )?;
            reports::write_text(
                &cfg.out.join("reliability.csv"),
                &reports::reliability_csv(&out.reliability),
            )?;
            reports::write_text(&cfg.out.join("metrics.json"), &reports::metrics_json(&metrics)?)?;
            Ok(EvalOutput::Classification(out))
        }
    }
}

// ---------------------------------------------------------------------------
// spectrum command

/// Pooled meta-test representation matrix (raw features, no normalization or
/// bias), row order fixed by the generation order, truncated to
/// `spectrum.max_samples` rows (0 = no cap).
pub fn test_feature_matrix(
    cfg: &ExperimentConfig,
    backbone: Option<(&MlpSpec, &ParamVector)>,
) -> Result<Matrix> {
    let cap = cfg.spectrum.max_samples;
    let take = |n: usize| if cap == 0 { n } else { n.min(cap) };
    match cfg.kind {
        ExperimentKind::SineRegression => {
            let (spec, params) = backbone
                .ok_or_else(|| CliError::Config("spectrum needs a checkpoint".into()))?;
            let (_, _, test) = gen_sine_split(cfg.data.tasks_per_split, cfg.seed);
            let total: usize = test.iter().map(|t| t.len()).sum();
            let mut xs = Vec::with_capacity(take(total));
            'outer: for task in &test {
                for &x in &task.xs {
                    if xs.len() == take(total) {
                        break 'outer;
                    }
                    xs.push(x);
                }
            }
            let n = xs.len();
            Ok(extract_features(spec, params, &Matrix::from_vec(n, 1, xs), false)?)
        }
        ExperimentKind::SyntheticClassification => {
            let (spec, params) = backbone
                .ok_or_else(|| CliError::Config("spectrum needs a checkpoint".into()))?;
            let (dataset, split) = gen_blob_classes(
                cfg.data.classes,
                cfg.data.dim,
                cfg.data.per_class,
                cfg.data.intra_std,
                cfg.seed,
            )?;
            let mut is_test = vec![false; dataset.class_count];
            for &c in &split.test {
                is_test[c] = true;
            }
            let rows: Vec<usize> = (0..dataset.len())
                .filter(|&i| is_test[dataset.labels[i]])
                .collect();
            let rows = &rows[..take(rows.len())];
            let inputs = gather_rows(&dataset.inputs, rows);
            Ok(extract_features(spec, params, &inputs, false)?)
        }
        ExperimentKind::FeatureFileClassification => {
            let path = cfg
                .data
                .feature_file
                .as_ref()
                .expect("validated: feature_file is set");
            let file = read_feature_file(path)?;
            let rows: Vec<usize> = (0..file.features.rows())
                .filter(|&i| file.split_tags[i] == TAG_TEST)
                .collect();
            if rows.is_empty() {
                return Err(CliError::Config(
                    "feature file holds no test-tagged rows".into(),
                ));
            }
            let rows = &rows[..take(rows.len())];
            Ok(gather_rows(&file.features, rows))
        }
    }
}

pub fn cmd_spectrum(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    which: Which,
) -> Result<SpectrumReport> {
    cfg.validate()?;
    let ckpt = match cfg.kind {
        ExperimentKind::FeatureFileClassification => None,
        _ => Some(load_backbone(cfg, checkpoint)?),
    };
    let backbone = match &ckpt {
        Some(c) => Some((&c.spec, c.params(which)?)),
        None => None,
    };
    let phi = test_feature_matrix(cfg, backbone)?;
    let report = eval::spectrum_with_options(&phi, cfg.spectrum.center)?;
    reports::write_text(&cfg.out.join("spectrum.csv"), &reports::spectrum_csv(&report))?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// sweep command

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    /// Metric of θ_sgd (the shared trajectory, no averaging phase).
    pub baseline: f64,
}

fn metric_for_params(cfg: &ExperimentConfig, spec: &MlpSpec, params: &ParamVector) -> Result<f64> {
    match cfg.kind {
        ExperimentKind::SineRegression => Ok(eval_sine_params(cfg, spec, params)?.mse_mean),
        ExperimentKind::SyntheticClassification => {
            Ok(eval_classification_params(cfg, Some((spec, params)))?
                .table
                .pooled_mean)
        }
        ExperimentKind::FeatureFileClassification => Err(CliError::Config(
            "sweep and averaging comparisons need a trainable experiment".into(),
        )),
    }
}

/// Trains the SGD phase once, then runs one averaging phase per grid cell
/// from a clone of the shared trajectory state. The duration unit follows
/// the config's swa duration kind (iterations for sine, epochs for
/// classification defaults).
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepOutcome> {
    cfg.validate()?;
    if cfg.sweep.swa_lrs.is_empty() || cfg.sweep.swa_durations.is_empty() {
        return Err(CliError::Config("sweep grid must be nonempty".into()));
    }
    let (merged, input_dim) = merged_for_training(cfg)?;
    let spec = MlpSpec::new(
        input_dim,
        cfg.hidden.clone(),
        merged.group_count(),
        cfg.activation,
    )?;
    let rc = repr_config(cfg);
    let mut state = TrainState::new(&spec, &rc)?;
    let mut log = sgd_phase(&spec, &merged, &rc, &mut state)?;
    let baseline = metric_for_params(cfg, &spec, &state.params)?;

    let mut rows = Vec::with_capacity(cfg.sweep.swa_lrs.len() * cfg.sweep.swa_durations.len());
    for &swa_lr in &cfg.sweep.swa_lrs {
        for &dur in &cfg.sweep.swa_durations {
            let mut cell_rc = rc.clone();
            cell_rc.swa_lr = swa_lr;
            cell_rc.swa_duration = match rc.swa_duration {
                mfrl_core::repr::TrainDuration::Epochs(_) => {
                    mfrl_core::repr::TrainDuration::Epochs(dur)
                }
                mfrl_core::repr::TrainDuration::Iterations(_) => {
                    mfrl_core::repr::TrainDuration::Iterations(dur)
                }
            };
            let mut cell_state = state.clone();
            let mut swa = mfrl_core::averaging::SwaState::new(&cell_state.params);
            averaging_phase(&spec, &merged, &cell_rc, &mut cell_state, log.len(), |snap| {
                swa.accumulate(snap).expect("snapshot layout is fixed");
            })?;
            let theta = swa.into_mean().unwrap_or_else(|| state.params.clone());
            rows.push(SweepRow {
                swa_lr,
                swa_duration: dur,
                value: metric_for_params(cfg, &spec, &theta)?,
            });
        }
    }
    log.clear();
    Ok(SweepOutcome { rows, baseline })
}

pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<SweepOutcome> {
    let outcome = run_sweep(cfg)?;
    reports::write_text(&cfg.out.join("sweep.csv"), &reports::sweep_csv(&outcome.rows))?;
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// averaging comparison command

/// Runs one SGD phase and one averaging phase, feeding every end-of-epoch
/// snapshot to a running mean (SWA), the requested exponential averages, and
/// a last-snapshot tracker. Rows: the θ_sgd endpoint, the plain
/// tail-training endpoint ("none"), one row per EMA decay, and SWA.
pub fn run_compare_with(cfg: &ExperimentConfig, ema_decays: &[f64]) -> Result<Vec<(String, f64)>> {
    cfg.validate()?;
    let (merged, input_dim) = merged_for_training(cfg)?;
    let spec = MlpSpec::new(
        input_dim,
        cfg.hidden.clone(),
        merged.group_count(),
        cfg.activation,
    )?;
    let rc = repr_config(cfg);
    let mut state = TrainState::new(&spec, &rc)?;
    let log = sgd_phase(&spec, &merged, &rc, &mut state)?;
    let theta_sgd = state.params.clone();

    let mut swa = mfrl_core::averaging::SwaState::new(&theta_sgd);
    let mut emas: Vec<mfrl_core::averaging::EmaState> = ema_decays
        .iter()
        .map(|&a| mfrl_core::averaging::EmaState::new(a))
        .collect::<core::result::Result<_, _>>()?;
    let mut last: Option<ParamVector> = None;
    averaging_phase(&spec, &merged, &rc, &mut state, log.len(), |snap| {
        swa.accumulate(snap).expect("snapshot layout is fixed");
        for ema in &mut emas {
            ema.update(snap).expect("snapshot layout is fixed");
        }
        last = Some(snap.clone());
    })?;

    let mut rows = Vec::with_capacity(ema_decays.len() + 3);
    rows.push((
        "sgd".to_string(),
        metric_for_params(cfg, &spec, &theta_sgd)?,
    ));
    let none = last.clone().unwrap_or_else(|| theta_sgd.clone());
    rows.push(("none".to_string(), metric_for_params(cfg, &spec, &none)?));
    for (ema, &a) in emas.iter().zip(ema_decays) {
        let theta = ema.average().cloned().unwrap_or_else(|| theta_sgd.clone());
        rows.push((
            format!("ema-{}", crate::config::fmt_f64(a)),
            metric_for_params(cfg, &spec, &theta)?,
        ));
    }
    let theta_swa = swa.into_mean().unwrap_or_else(|| theta_sgd.clone());
    rows.push((
        "swa".to_string(),
        metric_for_params(cfg, &spec, &theta_swa)?,
    ));
    Ok(rows)
}

pub fn cmd_compare_averaging(cfg: &ExperimentConfig) -> Result<Vec<(String, f64)>> {
    let rows = run_compare_with(cfg, &[0.9, 0.99, 0.999])?;
    reports::write_text(
        &cfg.out.join("compare_averaging.csv"),
        &reports::compare_csv(&rows),
    )?;
    Ok(rows)
}

// ---------------------------------------------------------------------------
// feature export

/// Writes the synthetic dataset's raw backbone features in the feature-file
/// format, tagging each sample with its class's split. Re-ingesting the file
/// under the feature-file experiment kind (same seed and protocol)
/// reproduces the synthetic evaluation episode for episode.
pub fn export_features(
    cfg: &ExperimentConfig,
    spec: &MlpSpec,
    params: &ParamVector,
    path: &Path,
) -> Result<()> {
    if cfg.kind != ExperimentKind::SyntheticClassification {
        return Err(CliError::Config(
            "feature export is defined for synthetic classification".into(),
        ));
    }
    let (dataset, split) = gen_blob_classes(
        cfg.data.classes,
        cfg.data.dim,
        cfg.data.per_class,
        cfg.data.intra_std,
        cfg.seed,
    )?;
    let raw = extract_features(spec, params, &dataset.inputs, false)?;
    let mut class_tag = vec![TAG_TRAIN; dataset.class_count];
    for &c in &split.val {
        class_tag[c] = TAG_VAL;
    }
    for &c in &split.test {
        class_tag[c] = TAG_TEST;
    }
    let tags: Vec<u8> = dataset.labels.iter().map(|&l| class_tag[l]).collect();
    let file = FeatureFile::new(raw, dataset.labels.clone(), dataset.class_count, tags)?;
    write_feature_file(path, &file)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_matches_sequential_and_orders_errors() {
        let f = |i: usize| -> Result<usize> {
            if i == 5 || i == 2 {
                Err(CliError::Numeric(format!("boom {i}")))
            } else {
                Ok(i * i)
            }
        };
        let seq = parallel_map(10, 1, f);
        let par = parallel_map(10, 3, f);
        assert_eq!(seq.unwrap_err().to_string(), "numeric error: boom 2");
        assert_eq!(par.unwrap_err().to_string(), "numeric error: boom 2");
        let ok = |i: usize| -> Result<usize> { Ok(3 * i + 1) };
        assert_eq!(parallel_map(7, 1, ok).unwrap(), parallel_map(7, 4, ok).unwrap());
        assert_eq!(parallel_map(0, 4, ok).unwrap(), Vec::<usize>::new());
    }

    #[test]
    fn thread_cap_parsing() {
        assert_eq!(parse_thread_cap("4").unwrap(), 4);
        assert_eq!(parse_thread_cap(" 1 ").unwrap(), 1);
        assert!(parse_thread_cap("0").is_err());
        assert!(parse_thread_cap("-2").is_err());
        assert!(parse_thread_cap("many").is_err());
    }

    #[test]
    fn normalized_rows_are_unit_with_bias() {
        let raw = Matrix::from_vec(2, 3, vec![3.0, 0.0, 4.0, 0.0, 0.0, 0.0]);
        let n = normalized_with_bias(&raw);
        assert_eq!(n.cols(), 4);
        assert!((n[(0, 0)] - 0.6).abs() <= 1e-15);
        assert!((n[(0, 2)] - 0.8).abs() <= 1e-15);
        assert_eq!(n[(0, 3)], 1.0);
        // zero row maps to pure bias
        assert_eq!(n.row(1), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn median_and_std_helpers() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(sample_std(&[5.0], 5.0), 0.0);
        let vals = [1.0, 2.0, 3.0, 4.0];
        let m = mean(&vals);
        assert!((sample_std(&vals, m) - (5.0f64 / 3.0).sqrt()).abs() <= 1e-15);
    }

    #[test]
    fn softmax_rows_are_simplex_and_temperature_flattens() {
        let logits = Matrix::from_vec(2, 3, vec![2.0, 0.0, -1.0, 0.0, 0.0, 0.0]);
        let p1 = softmax_rows(&logits, 1.0);
        let p4 = softmax_rows(&logits, 4.0);
        for i in 0..2 {
            assert!((p1.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            assert!((p4.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        assert!(p4[(0, 0)] < p1[(0, 0)]);
        assert_eq!(argmax(p1.row(0)), 0);
        assert!((p1[(1, 0)] - 1.0 / 3.0).abs() <= 1e-12);
    }

    fn tiny_classification_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default_for(ExperimentKind::SyntheticClassification);
        cfg.seed = 11;
        cfg.hidden = vec![8];
        cfg.data.classes = 10;
        cfg.data.dim = 6;
        cfg.data.per_class = 12;
        cfg.data.intra_std = 1.0;
        cfg.repr.duration = mfrl_core::repr::TrainDuration::Epochs(3);
        cfg.repr.swa_duration = mfrl_core::repr::TrainDuration::Epochs(3);
        cfg.repr.batch_size = 16;
        cfg.repr.milestones = vec![];
        cfg.episodes.way = 2;
        cfg.episodes.shot = 3;
        cfg.episodes.query = 5;
        cfg.episodes.runs = 1;
        cfg.episodes.count = 6;
        cfg.episodes.val_episodes = 4;
        cfg.head.lambda_grid = vec![0.01, 1.0];
        cfg.head.temperature_grid = vec![0.5, 1.0, 2.0];
        cfg
    }

    #[test]
    fn classification_eval_is_deterministic() {
        let cfg = tiny_classification_config();
        let trained = train_backbone(&cfg).unwrap();
        let a =
            eval_classification_params(&cfg, Some((&trained.spec, &trained.theta_swa))).unwrap();
        let b =
            eval_classification_params(&cfg, Some((&trained.spec, &trained.theta_swa))).unwrap();
        assert_eq!(a.table.accuracies, b.table.accuracies);
        assert_eq!(a.grid.chosen_lambda, b.grid.chosen_lambda);
        assert_eq!(a.grid.chosen_temperature, b.grid.chosen_temperature);
        assert_eq!(a.reliability.ece, b.reliability.ece);
        assert_eq!(a.table.per_run.len(), 1);
        assert_eq!(a.table.accuracies[0].len(), 6);
    }

    #[test]
    fn exported_features_reproduce_the_synthetic_evaluation() {
        let cfg = tiny_classification_config();
        let trained = train_backbone(&cfg).unwrap();
        let synth =
            eval_classification_params(&cfg, Some((&trained.spec, &trained.theta_swa))).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.mfrlfeat");
        export_features(&cfg, &trained.spec, &trained.theta_swa, &path).unwrap();

        let mut file_cfg = cfg.clone();
        file_cfg.kind = ExperimentKind::FeatureFileClassification;
        file_cfg.data.feature_file = Some(path);
        let reingested = eval_classification_params(&file_cfg, None).unwrap();

        assert_eq!(synth.table.accuracies, reingested.table.accuracies);
        assert_eq!(synth.grid.chosen_lambda, reingested.grid.chosen_lambda);
        assert_eq!(
            synth.grid.chosen_temperature,
            reingested.grid.chosen_temperature
        );
        assert_eq!(synth.reliability.ece, reingested.reliability.ece);
    }

    #[test]
    fn compare_with_zero_decay_degenerates_to_plain_training() {
        let mut cfg = tiny_classification_config();
        cfg.episodes.count = 4;
        cfg.episodes.val_episodes = 3;
        let rows = run_compare_with(&cfg, &[0.0]).unwrap();
        let value = |name: &str| {
            rows.iter()
                .find(|(n, _)| n == name)
                .unwrap_or_else(|| panic!("missing row {name}"))
                .1
        };
        assert_eq!(value("ema-0"), value("none"));
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].0, "sgd");
        assert_eq!(rows.last().unwrap().0, "swa");
    }

    fn tiny_sine_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default_for(ExperimentKind::SineRegression);
        cfg.seed = 5;
        cfg.hidden = vec![8, 8];
        cfg.data.tasks_per_split = 8;
        cfg.repr.duration = mfrl_core::repr::TrainDuration::Iterations(40);
        cfg.repr.swa_duration = mfrl_core::repr::TrainDuration::Iterations(20);
        cfg.repr.batch_size = 32;
        cfg.episodes.shot = 10;
        cfg.episodes.count = 8;
        cfg.sweep.swa_lrs = vec![0.05];
        cfg.sweep.swa_durations = vec![20];
        cfg
    }

    #[test]
    fn one_point_sweep_equals_direct_evaluation() {
        let cfg = tiny_sine_config();
        let outcome = run_sweep(&cfg).unwrap();
        assert_eq!(outcome.rows.len(), 1);
        let trained = train_backbone(&cfg).unwrap();
        let direct = eval_sine_params(&cfg, &trained.spec, &trained.theta_swa).unwrap();
        assert_eq!(outcome.rows[0].value, direct.mse_mean);
        let sgd_eval = eval_sine_params(&cfg, &trained.spec, &trained.theta_sgd).unwrap();
        assert_eq!(outcome.baseline, sgd_eval.mse_mean);
    }

    #[test]
    fn sine_eval_rejects_oversized_task_count() {
        let mut cfg = tiny_sine_config();
        cfg.episodes.count = 9;
        let trained = train_backbone(&cfg).unwrap();
        let err = eval_sine_params(&cfg, &trained.spec, &trained.theta_sgd).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn spectrum_sources_have_expected_shapes() {
        let cfg = tiny_sine_config();
        let trained = train_backbone(&cfg).unwrap();
        let mut capped = cfg.clone();
        capped.spectrum.max_samples = 50;
        let phi = test_feature_matrix(&capped, Some((&trained.spec, &trained.theta_swa))).unwrap();
        assert_eq!(phi.rows(), 50);
        assert_eq!(phi.cols(), 8);
        let mut uncapped = cfg.clone();
        uncapped.spectrum.max_samples = 0;
        let phi =
            test_feature_matrix(&uncapped, Some((&trained.spec, &trained.theta_swa))).unwrap();
        assert_eq!(phi.rows(), 8 * 200);
    }
}
