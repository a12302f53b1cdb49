//! Experiment configuration: a plain-text key=value format with dotted
//! section prefixes (`repr.epochs=100`). Every key is optional on top of
//! per-kind defaults; unknown keys are rejected so typos cannot silently
//! fall back to defaults. The canonical dump of the effective settings is
//! hashed into checkpoints.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mfrl_core::bayes::HyperPrior;
use mfrl_core::repr::{LossKind, ReprTrainConfig, TrainDuration};
use mfrl_core::Activation;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    SineRegression,
    SyntheticClassification,
    FeatureFileClassification,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::SineRegression => "sine-regression",
            ExperimentKind::SyntheticClassification => "synthetic-classification",
            ExperimentKind::FeatureFileClassification => "feature-file-classification",
        }
    }

    fn from_name(name: &str) -> Result<Self> {
        match name {
            "sine-regression" => Ok(ExperimentKind::SineRegression),
            "synthetic-classification" => Ok(ExperimentKind::SyntheticClassification),
            "feature-file-classification" => Ok(ExperimentKind::FeatureFileClassification),
            other => Err(CliError::Config(format!("unknown experiment kind {other:?}"))),
        }
    }

    pub fn is_classification(self) -> bool {
        !matches!(self, ExperimentKind::SineRegression)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    /// Sine: tasks generated per split.
    pub tasks_per_split: usize,
    /// Blobs: total classes, input dimension, samples per class, noise.
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub intra_std: f64,
    /// Feature-file kind: path to the MFRLFEAT input.
    pub feature_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeProtocol {
    pub way: usize,
    pub shot: usize,
    /// Query samples per class (classification); ignored for sine, where the
    /// query set is the rest of the task.
    pub query: usize,
    pub runs: usize,
    /// Episodes per run (classification) or test tasks evaluated (sine).
    pub count: usize,
    /// Meta-validation episodes used to pick λ and T.
    pub val_episodes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McmcSection {
    pub enabled: bool,
    pub chains: usize,
    pub warmup: usize,
    pub kept: usize,
    pub target_accept: f64,
    /// Test episodes the sampler head is compared on (it costs far more per
    /// episode than the optimization head).
    pub episodes: usize,
    /// Feature coordinates kept before the bias column.
    pub max_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadConfig {
    pub bins: usize,
    pub lambda_grid: Vec<f64>,
    pub temperature_grid: Vec<f64>,
    pub hyperprior: HyperPrior,
    pub evidence_tol: f64,
    pub evidence_max_iter: usize,
    pub mcmc: McmcSection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumConfig {
    pub center: bool,
    /// Cap on pooled meta-test rows entering the decomposition.
    pub max_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub swa_lrs: Vec<f64>,
    pub swa_durations: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub out: PathBuf,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub repr: ReprTrainConfig,
    pub data: DataConfig,
    pub episodes: EpisodeProtocol,
    pub head: HeadConfig,
    pub spectrum: SpectrumConfig,
    pub sweep: SweepConfig,
}

impl ExperimentConfig {
    /// Baseline settings per experiment kind; config keys override these.
    pub fn default_for(kind: ExperimentKind) -> Self {
        let (hidden, activation) = match kind {
            ExperimentKind::SineRegression => (vec![40, 40], Activation::Erf),
            _ => (vec![64, 32], Activation::Relu),
        };
        let repr = match kind {
            ExperimentKind::SineRegression => ReprTrainConfig {
                duration: TrainDuration::Iterations(80_000),
                batch_size: 64,
                base_lr: 1e-3,
                milestones: Vec::new(),
                gamma: 0.1,
                momentum: 0.9,
                weight_decay: 1e-4,
                swa_duration: TrainDuration::Iterations(20_000),
                swa_lr: 0.05,
                seed: 0,
                loss: LossKind::Mse,
            },
            _ => ReprTrainConfig {
                duration: TrainDuration::Epochs(100),
                batch_size: 64,
                base_lr: 0.05,
                milestones: vec![60, 80, 90],
                gamma: 0.1,
                momentum: 0.9,
                weight_decay: 1e-4,
                swa_duration: TrainDuration::Epochs(100),
                swa_lr: 0.02,
                seed: 0,
                loss: LossKind::Ce,
            },
        };
        let episodes = match kind {
            ExperimentKind::SineRegression => EpisodeProtocol {
                way: 1,
                shot: 10,
                query: 0,
                runs: 1,
                count: 500,
                val_episodes: 0,
            },
            _ => EpisodeProtocol {
                way: 5,
                shot: 5,
                query: 15,
                runs: 5,
                count: 600,
                val_episodes: 100,
            },
        };
        ExperimentConfig {
            kind,
            seed: 0,
            out: PathBuf::from("out"),
            hidden,
            activation,
            repr,
            data: DataConfig {
                tasks_per_split: 500,
                classes: 50,
                dim: 32,
                per_class: 100,
                intra_std: 2.0,
                feature_file: None,
            },
            episodes,
            head: HeadConfig {
                bins: 15,
                lambda_grid: mfrl_core::logreg::default_lambda_grid(),
                temperature_grid: mfrl_core::logreg::default_temperature_grid(),
                hyperprior: HyperPrior::default(),
                evidence_tol: 1e-6,
                evidence_max_iter: 300,
                mcmc: McmcSection {
                    enabled: false,
                    chains: 2,
                    warmup: 1_000,
                    kept: 500,
                    target_accept: 0.3,
                    episodes: 25,
                    max_dim: 64,
                },
            },
            spectrum: SpectrumConfig {
                center: false,
                max_samples: 2_000,
            },
            sweep: SweepConfig {
                swa_lrs: vec![0.01, 0.05, 0.1],
                swa_durations: match kind {
                    ExperimentKind::SineRegression => vec![5_000, 10_000, 20_000],
                    _ => vec![25, 50, 100],
                },
            },
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_str(&text)
    }

    pub fn from_str(text: &str) -> Result<Self> {
        let mut map = KeyMap::parse(text)?;
        let kind = match map.take("kind")? {
            Some(v) => ExperimentKind::from_name(&v)?,
            None => return Err(CliError::Config("missing required key: kind".into())),
        };
        let mut cfg = ExperimentConfig::default_for(kind);

        if let Some(v) = map.take("seed")? {
            cfg.seed = parse_num(&v, "seed")?;
        }
        if let Some(v) = map.take("out")? {
            cfg.out = PathBuf::from(v);
        }
        if let Some(v) = map.take("backbone.hidden")? {
            cfg.hidden = parse_list(&v, "backbone.hidden")?;
        }
        if let Some(v) = map.take("backbone.activation")? {
            cfg.activation =
                Activation::from_name(&v).map_err(|e| CliError::Config(e.to_string()))?;
        }

        let epochs: Option<usize> = map.take("repr.epochs")?.map(|v| parse_num(&v, "repr.epochs")).transpose()?;
        let iterations: Option<usize> =
            map.take("repr.iterations")?.map(|v| parse_num(&v, "repr.iterations")).transpose()?;
        match (epochs, iterations) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config(
                    "repr.epochs and repr.iterations are mutually exclusive".into(),
                ))
            }
            (Some(e), None) => cfg.repr.duration = TrainDuration::Epochs(e),
            (None, Some(i)) => cfg.repr.duration = TrainDuration::Iterations(i),
            (None, None) => {}
        }
        let swa_epochs: Option<usize> =
            map.take("repr.swa_epochs")?.map(|v| parse_num(&v, "repr.swa_epochs")).transpose()?;
        let swa_iterations: Option<usize> = map
            .take("repr.swa_iterations")?
            .map(|v| parse_num(&v, "repr.swa_iterations"))
            .transpose()?;
        match (swa_epochs, swa_iterations) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config(
                    "repr.swa_epochs and repr.swa_iterations are mutually exclusive".into(),
                ))
            }
            (Some(e), None) => cfg.repr.swa_duration = TrainDuration::Epochs(e),
            (None, Some(i)) => cfg.repr.swa_duration = TrainDuration::Iterations(i),
            (None, None) => {}
        }
        if let Some(v) = map.take("repr.batch")? {
            cfg.repr.batch_size = parse_num(&v, "repr.batch")?;
        }
        if let Some(v) = map.take("repr.lr")? {
            cfg.repr.base_lr = parse_num(&v, "repr.lr")?;
        }
        if let Some(v) = map.take("repr.milestones")? {
            cfg.repr.milestones = parse_list(&v, "repr.milestones")?;
        }
        if let Some(v) = map.take("repr.gamma")? {
            cfg.repr.gamma = parse_num(&v, "repr.gamma")?;
        }
        if let Some(v) = map.take("repr.momentum")? {
            cfg.repr.momentum = parse_num(&v, "repr.momentum")?;
        }
        if let Some(v) = map.take("repr.weight_decay")? {
            cfg.repr.weight_decay = parse_num(&v, "repr.weight_decay")?;
        }
        if let Some(v) = map.take("repr.swa_lr")? {
            cfg.repr.swa_lr = parse_num(&v, "repr.swa_lr")?;
        }

        if let Some(v) = map.take("data.tasks_per_split")? {
            cfg.data.tasks_per_split = parse_num(&v, "data.tasks_per_split")?;
        }
        if let Some(v) = map.take("data.classes")? {
            cfg.data.classes = parse_num(&v, "data.classes")?;
        }
        if let Some(v) = map.take("data.dim")? {
            cfg.data.dim = parse_num(&v, "data.dim")?;
        }
        if let Some(v) = map.take("data.per_class")? {
            cfg.data.per_class = parse_num(&v, "data.per_class")?;
        }
        if let Some(v) = map.take("data.intra_std")? {
            cfg.data.intra_std = parse_num(&v, "data.intra_std")?;
        }
        if let Some(v) = map.take("data.feature_file")? {
            cfg.data.feature_file = if v.is_empty() {
                None
            } else {
                Some(PathBuf::from(v))
            };
        }

        if let Some(v) = map.take("episodes.way")? {
            cfg.episodes.way = parse_num(&v, "episodes.way")?;
        }
        if let Some(v) = map.take("episodes.shot")? {
            cfg.episodes.shot = parse_num(&v, "episodes.shot")?;
        }
        if let Some(v) = map.take("episodes.query")? {
            cfg.episodes.query = parse_num(&v, "episodes.query")?;
        }
        if let Some(v) = map.take("episodes.runs")? {
            cfg.episodes.runs = parse_num(&v, "episodes.runs")?;
        }
        if let Some(v) = map.take("episodes.count")? {
            cfg.episodes.count = parse_num(&v, "episodes.count")?;
        }
        if let Some(v) = map.take("episodes.val_episodes")? {
            cfg.episodes.val_episodes = parse_num(&v, "episodes.val_episodes")?;
        }

        if let Some(v) = map.take("head.bins")? {
            cfg.head.bins = parse_num(&v, "head.bins")?;
        }
        if let Some(v) = map.take("head.lambda_grid")? {
            cfg.head.lambda_grid = parse_list(&v, "head.lambda_grid")?;
        }
        if let Some(v) = map.take("head.temperature_grid")? {
            cfg.head.temperature_grid = parse_list(&v, "head.temperature_grid")?;
        }
        if let Some(v) = map.take("head.hyperprior_a")? {
            cfg.head.hyperprior.a = parse_num(&v, "head.hyperprior_a")?;
        }
        if let Some(v) = map.take("head.hyperprior_b")? {
            cfg.head.hyperprior.b = parse_num(&v, "head.hyperprior_b")?;
        }
        if let Some(v) = map.take("head.hyperprior_c")? {
            cfg.head.hyperprior.c = parse_num(&v, "head.hyperprior_c")?;
        }
        if let Some(v) = map.take("head.hyperprior_d")? {
            cfg.head.hyperprior.d = parse_num(&v, "head.hyperprior_d")?;
        }
        if let Some(v) = map.take("head.evidence_tol")? {
            cfg.head.evidence_tol = parse_num(&v, "head.evidence_tol")?;
        }
        if let Some(v) = map.take("head.evidence_max_iter")? {
            cfg.head.evidence_max_iter = parse_num(&v, "head.evidence_max_iter")?;
        }

        if let Some(v) = map.take("mcmc.enabled")? {
            cfg.head.mcmc.enabled = parse_bool(&v, "mcmc.enabled")?;
        }
        if let Some(v) = map.take("mcmc.chains")? {
            cfg.head.mcmc.chains = parse_num(&v, "mcmc.chains")?;
        }
        if let Some(v) = map.take("mcmc.warmup")? {
            cfg.head.mcmc.warmup = parse_num(&v, "mcmc.warmup")?;
        }
        if let Some(v) = map.take("mcmc.kept")? {
            cfg.head.mcmc.kept = parse_num(&v, "mcmc.kept")?;
        }
        if let Some(v) = map.take("mcmc.target_accept")? {
            cfg.head.mcmc.target_accept = parse_num(&v, "mcmc.target_accept")?;
        }
        if let Some(v) = map.take("mcmc.episodes")? {
            cfg.head.mcmc.episodes = parse_num(&v, "mcmc.episodes")?;
        }
        if let Some(v) = map.take("mcmc.max_dim")? {
            cfg.head.mcmc.max_dim = parse_num(&v, "mcmc.max_dim")?;
        }

        if let Some(v) = map.take("spectrum.center")? {
            cfg.spectrum.center = parse_bool(&v, "spectrum.center")?;
        }
        if let Some(v) = map.take("spectrum.max_samples")? {
            cfg.spectrum.max_samples = parse_num(&v, "spectrum.max_samples")?;
        }

        if let Some(v) = map.take("sweep.swa_lrs")? {
            cfg.sweep.swa_lrs = parse_list(&v, "sweep.swa_lrs")?;
        }
        if let Some(v) = map.take("sweep.swa_durations")? {
            cfg.sweep.swa_durations = parse_list(&v, "sweep.swa_durations")?;
        }

        map.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.repr
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        match self.kind {
            ExperimentKind::SineRegression => {
                if self.data.tasks_per_split == 0 {
                    return Err(CliError::Config("data.tasks_per_split must be ≥ 1".into()));
                }
                if self.episodes.shot == 0
                    || self.episodes.shot >= mfrl_core::data::SINE_SAMPLES_PER_TASK
                {
                    return Err(CliError::Config(format!(
                        "episodes.shot must lie in [1, {})",
                        mfrl_core::data::SINE_SAMPLES_PER_TASK
                    )));
                }
            }
            ExperimentKind::SyntheticClassification => {
                if self.data.classes < 2 * self.episodes.way {
                    return Err(CliError::Config(format!(
                        "data.classes = {} cannot support {}-way episodes across splits",
                        self.data.classes, self.episodes.way
                    )));
                }
                self.validate_classification_protocol()?;
            }
            ExperimentKind::FeatureFileClassification => {
                if self.data.feature_file.is_none() {
                    return Err(CliError::Config(
                        "feature-file-classification requires data.feature_file".into(),
                    ));
                }
                self.validate_classification_protocol()?;
            }
        }
        if self.kind.is_classification() {
            if self.head.lambda_grid.is_empty() {
                return Err(CliError::Config("head.lambda_grid must be nonempty".into()));
            }
            if self.head.temperature_grid.is_empty()
                || self.head.temperature_grid.iter().any(|&t| t <= 0.0)
            {
                return Err(CliError::Config(
                    "head.temperature_grid must be nonempty and positive".into(),
                ));
            }
            if self.head.bins == 0 {
                return Err(CliError::Config("head.bins must be ≥ 1".into()));
            }
        }
        if self.episodes.runs == 0 || self.episodes.count == 0 {
            return Err(CliError::Config(
                "episodes.runs and episodes.count must be ≥ 1".into(),
            ));
        }
        Ok(())
    }

    fn validate_classification_protocol(&self) -> Result<()> {
        if self.episodes.way < 2 {
            return Err(CliError::Config("episodes.way must be ≥ 2".into()));
        }
        if self.episodes.shot == 0 || self.episodes.query == 0 {
            return Err(CliError::Config(
                "episodes.shot and episodes.query must be ≥ 1".into(),
            ));
        }
        if self.episodes.val_episodes == 0 {
            return Err(CliError::Config(
                "episodes.val_episodes must be ≥ 1 to pick λ and T".into(),
            ));
        }
        Ok(())
    }

    /// Effective settings as a canonical sorted key=value dump. The
    /// checkpoint stores a hash of this text, so any setting change is
    /// visible as a hash change regardless of file formatting.
    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("kind", self.kind.name().into());
        kv("seed", self.seed.to_string());
        kv("out", self.out.display().to_string());
        kv("backbone.hidden", join(&self.hidden));
        kv("backbone.activation", self.activation.name().into());
        let (dur_key, dur_val) = duration_kv("repr", self.repr.duration);
        kv(dur_key, dur_val);
        kv("repr.batch", self.repr.batch_size.to_string());
        kv("repr.lr", fmt_f64(self.repr.base_lr));
        kv("repr.milestones", join(&self.repr.milestones));
        kv("repr.gamma", fmt_f64(self.repr.gamma));
        kv("repr.momentum", fmt_f64(self.repr.momentum));
        kv("repr.weight_decay", fmt_f64(self.repr.weight_decay));
        let (swa_key, swa_val) = duration_kv("repr.swa", self.repr.swa_duration);
        kv(swa_key, swa_val);
        kv("repr.swa_lr", fmt_f64(self.repr.swa_lr));
        kv("data.tasks_per_split", self.data.tasks_per_split.to_string());
        kv("data.classes", self.data.classes.to_string());
        kv("data.dim", self.data.dim.to_string());
        kv("data.per_class", self.data.per_class.to_string());
        kv("data.intra_std", fmt_f64(self.data.intra_std));
        kv(
            "data.feature_file",
            self.data
                .feature_file
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        kv("episodes.way", self.episodes.way.to_string());
        kv("episodes.shot", self.episodes.shot.to_string());
        kv("episodes.query", self.episodes.query.to_string());
        kv("episodes.runs", self.episodes.runs.to_string());
        kv("episodes.count", self.episodes.count.to_string());
        kv("episodes.val_episodes", self.episodes.val_episodes.to_string());
        kv("head.bins", self.head.bins.to_string());
        kv("head.lambda_grid", join_f64(&self.head.lambda_grid));
        kv("head.temperature_grid", join_f64(&self.head.temperature_grid));
        kv("head.hyperprior_a", fmt_f64(self.head.hyperprior.a));
        kv("head.hyperprior_b", fmt_f64(self.head.hyperprior.b));
        kv("head.hyperprior_c", fmt_f64(self.head.hyperprior.c));
        kv("head.hyperprior_d", fmt_f64(self.head.hyperprior.d));
        kv("head.evidence_tol", fmt_f64(self.head.evidence_tol));
        kv(
            "head.evidence_max_iter",
            self.head.evidence_max_iter.to_string(),
        );
        kv("mcmc.enabled", self.head.mcmc.enabled.to_string());
        kv("mcmc.chains", self.head.mcmc.chains.to_string());
        kv("mcmc.warmup", self.head.mcmc.warmup.to_string());
        kv("mcmc.kept", self.head.mcmc.kept.to_string());
        kv("mcmc.target_accept", fmt_f64(self.head.mcmc.target_accept));
        kv("mcmc.episodes", self.head.mcmc.episodes.to_string());
        kv("mcmc.max_dim", self.head.mcmc.max_dim.to_string());
        kv("spectrum.center", self.spectrum.center.to_string());
        kv(
            "spectrum.max_samples",
            self.spectrum.max_samples.to_string(),
        );
        kv("sweep.swa_lrs", join_f64(&self.sweep.swa_lrs));
        kv("sweep.swa_durations", join(&self.sweep.swa_durations));
        s
    }

    pub fn config_hash(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.canonical_text().as_bytes());
        h.finalize().into()
    }
}

fn duration_kv(prefix: &str, d: TrainDuration) -> (&'static str, String) {
    // leaks no allocation: the key set is closed
    match (prefix, d) {
        ("repr", TrainDuration::Epochs(n)) => ("repr.epochs", n.to_string()),
        ("repr", TrainDuration::Iterations(n)) => ("repr.iterations", n.to_string()),
        ("repr.swa", TrainDuration::Epochs(n)) => ("repr.swa_epochs", n.to_string()),
        ("repr.swa", TrainDuration::Iterations(n)) => ("repr.swa_iterations", n.to_string()),
        _ => unreachable!(),
    }
}

/// Shortest round-trip decimal form, so hashing and CSV output agree with
/// what a reader parses back.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn join_f64(items: &[f64]) -> String {
    items.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(",")
}

fn parse_num<T: std::str::FromStr>(value: &str, key: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| CliError::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: std::str::FromStr>(value: &str, key: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|part| parse_num(part.trim(), key))
        .collect()
}

fn parse_bool(value: &str, key: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(CliError::Config(format!(
            "{key}: expected true or false, got {value:?}"
        ))),
    }
}

struct KeyMap {
    entries: BTreeMap<String, (String, usize)>,
}

impl KeyMap {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config(format!(
                    "line {}: expected key=value, got {line:?}",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if entries
                .insert(key.clone(), (value, lineno + 1))
                .is_some()
            {
                return Err(CliError::Config(format!(
                    "line {}: duplicate key {key:?}",
                    lineno + 1
                )));
            }
        }
        Ok(KeyMap { entries })
    }

    fn take(&mut self, key: &str) -> Result<Option<String>> {
        Ok(self.entries.remove(key).map(|(v, _)| v))
    }

    fn finish(self) -> Result<()> {
        if let Some((key, (_, lineno))) = self.entries.into_iter().next() {
            return Err(CliError::Config(format!(
                "line {lineno}: unknown key {key:?}"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_kind_defaults() {
        let cfg = ExperimentConfig::from_str("kind = sine-regression\n").unwrap();
        assert_eq!(cfg.kind, ExperimentKind::SineRegression);
        assert_eq!(cfg.hidden, vec![40, 40]);
        assert_eq!(cfg.activation, Activation::Erf);
        assert_eq!(cfg.repr.duration, TrainDuration::Iterations(80_000));
        assert_eq!(cfg.repr.swa_lr, 0.05);
        assert_eq!(cfg.episodes.shot, 10);

        let cfg = ExperimentConfig::from_str("kind = synthetic-classification\n").unwrap();
        assert_eq!(cfg.repr.duration, TrainDuration::Epochs(100));
        assert_eq!(cfg.repr.milestones, vec![60, 80, 90]);
        assert_eq!(cfg.episodes.way, 5);
        assert_eq!(cfg.episodes.query, 15);
        assert_eq!(cfg.head.lambda_grid.len(), 11);
    }

    #[test]
    fn overrides_comments_and_layout_are_parsed() {
        let text = "\
# experiment
kind = sine-regression
seed = 7
backbone.hidden = 20, 20   # smaller net
repr.iterations = 1000
repr.swa_iterations = 200
repr.swa_lr = 0.01
episodes.count=50
";
        let cfg = ExperimentConfig::from_str(text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.hidden, vec![20, 20]);
        assert_eq!(cfg.repr.duration, TrainDuration::Iterations(1000));
        assert_eq!(cfg.repr.swa_duration, TrainDuration::Iterations(200));
        assert_eq!(cfg.repr.swa_lr, 0.01);
        assert_eq!(cfg.episodes.count, 50);
    }

    #[test]
    fn unknown_keys_are_rejected_with_line() {
        let err = ExperimentConfig::from_str("kind = sine-regression\nrepr.epoch = 3\n")
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("unknown key"), "{msg}");
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("repr.epoch"), "{msg}");
    }

    #[test]
    fn malformed_lines_and_duplicates_error() {
        assert!(ExperimentConfig::from_str("kind sine-regression\n").is_err());
        assert!(
            ExperimentConfig::from_str("kind = sine-regression\nseed = 1\nseed = 2\n").is_err()
        );
        assert!(ExperimentConfig::from_str("seed = 1\n").is_err());
        let err =
            ExperimentConfig::from_str("kind = sine-regression\nrepr.epochs = 5\nrepr.iterations = 5\n")
                .unwrap_err();
        assert!(err.to_string().contains("mutually exclusive"));
    }

    #[test]
    fn invalid_settings_fail_validation() {
        assert!(ExperimentConfig::from_str("kind = sine-regression\nrepr.batch = 0\n").is_err());
        assert!(ExperimentConfig::from_str(
            "kind = synthetic-classification\ndata.classes = 8\n"
        )
        .is_err());
        assert!(ExperimentConfig::from_str("kind = feature-file-classification\n").is_err());
        assert!(ExperimentConfig::from_str(
            "kind = synthetic-classification\nhead.temperature_grid = 1.0,0\n"
        )
        .is_err());
    }

    #[test]
    fn hash_tracks_effective_settings_not_formatting() {
        let a = ExperimentConfig::from_str("kind = sine-regression\nseed = 1\n").unwrap();
        let b =
            ExperimentConfig::from_str("# c\n  kind   =   sine-regression  \nseed=1\n").unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
        let c = ExperimentConfig::from_str("kind = sine-regression\nseed = 2\n").unwrap();
        assert_ne!(a.config_hash(), c.config_hash());
        let mut d = a.clone();
        d.repr.swa_lr = 0.06;
        assert_ne!(a.config_hash(), d.config_hash());
    }

    #[test]
    fn canonical_text_round_trips_through_the_parser() {
        let cfg = ExperimentConfig::from_str(
            "kind = synthetic-classification\nseed = 9\nbackbone.hidden = 48,24\nmcmc.enabled = true\n",
        )
        .unwrap();
        let text = cfg.canonical_text();
        let reparsed = ExperimentConfig::from_str(&text).unwrap();
        assert_eq!(reparsed.canonical_text(), text);
        assert_eq!(reparsed.config_hash(), cfg.config_hash());
    }
}
