//! Task generation and episode sampling: the sine-wave regression family,
//! a low-rank Gaussian-blob classification family standing in for image
//! benchmarks at desk scale, split management, and N-way k-shot episodes.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::Matrix;
use crate::math;
use crate::rng::{domain, Stream};
use crate::{CoreError, Result};

/// Observation noise standard deviation of the sine generator.
pub const SINE_NOISE_STD: f64 = 0.1;
/// Samples drawn for every sine task.
pub const SINE_SAMPLES_PER_TASK: usize = 200;
pub const SINE_AMPLITUDE_RANGE: (f64, f64) = (0.1, 5.0);
pub const SINE_PHASE_RANGE: (f64, f64) = (0.0, core::f64::consts::PI);
pub const SINE_X_RANGE: (f64, f64) = (-5.0, 5.0);

/// Noise-free regression target A·sin(x − φ).
#[inline]
pub fn sine_value(amplitude: f64, phase: f64, x: f64) -> f64 {
    amplitude * math::sin(x - phase)
}

/// One sine-wave task: y = A·sin(x − φ) + ε with ε ~ N(0, 0.1²),
/// x uniform on [−5, 5].
#[derive(Debug, Clone, PartialEq)]
pub struct SineTask {
    pub amplitude: f64,
    pub phase: f64,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl SineTask {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// Inputs as an n×1 matrix for the backbone.
    pub fn inputs(&self) -> Matrix {
        Matrix::from_vec(self.xs.len(), 1, self.xs.clone())
    }
}

fn gen_sine_task(amplitude: f64, phase: f64, stream: &mut Stream) -> SineTask {
    let mut xs = Vec::with_capacity(SINE_SAMPLES_PER_TASK);
    let mut ys = Vec::with_capacity(SINE_SAMPLES_PER_TASK);
    for _ in 0..SINE_SAMPLES_PER_TASK {
        let x = stream.uniform(SINE_X_RANGE.0, SINE_X_RANGE.1);
        let y = sine_value(amplitude, phase, x) + SINE_NOISE_STD * stream.normal();
        xs.push(x);
        ys.push(y);
    }
    SineTask {
        amplitude,
        phase,
        xs,
        ys,
    }
}

/// Generates `count_per_split` sine tasks for each of train, validation,
/// and test. Amplitudes and phases are uniform over their ranges; exact
/// duplicate (A, φ) pairs are rejected so every wave differs.
pub fn gen_sine_split(count_per_split: usize, seed: u64) -> (Vec<SineTask>, Vec<SineTask>, Vec<SineTask>) {
    let mut stream = Stream::derived(seed, &[domain::SINE]);
    let mut seen: BTreeSet<(u64, u64)> = BTreeSet::new();
    let mut make_split = |count: usize| -> Vec<SineTask> {
        let mut tasks = Vec::with_capacity(count);
        while tasks.len() < count {
            let a = stream.uniform(SINE_AMPLITUDE_RANGE.0, SINE_AMPLITUDE_RANGE.1);
            let phi = stream.uniform(SINE_PHASE_RANGE.0, SINE_PHASE_RANGE.1);
            if !seen.insert((a.to_bits(), phi.to_bits())) {
                continue;
            }
            tasks.push(gen_sine_task(a, phi, &mut stream));
        }
        tasks
    };
    let train = make_split(count_per_split);
    let val = make_split(count_per_split);
    let test = make_split(count_per_split);
    (train, val, test)
}

/// Labeled classification dataset with per-class sample indices precomputed
/// for episode sampling.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub class_count: usize,
    by_class: Vec<Vec<usize>>,
}

impl LabeledDataset {
    pub fn new(inputs: Matrix, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let keep = vec![true; labels.len()];
        Self::filtered(inputs, labels, class_count, &keep)
    }

    /// Like [`LabeledDataset::new`], but only rows with `keep[i]` enter the
    /// per-class sampling pools. Row indices stay global, so episodes drawn
    /// from a filtered view address the full matrix.
    pub fn filtered(
        inputs: Matrix,
        labels: Vec<usize>,
        class_count: usize,
        keep: &[bool],
    ) -> Result<Self> {
        if inputs.rows() != labels.len() || keep.len() != labels.len() {
            return Err(CoreError::DimensionMismatch(format!(
                "{} inputs, {} labels, {} keep flags",
                inputs.rows(),
                labels.len(),
                keep.len()
            )));
        }
        let mut by_class = vec![Vec::new(); class_count];
        for (i, &label) in labels.iter().enumerate() {
            if label >= class_count {
                return Err(CoreError::Data(format!(
                    "label {label} out of range for {class_count} classes"
                )));
            }
            if keep[i] {
                by_class[label].push(i);
            }
        }
        Ok(LabeledDataset {
            inputs,
            labels,
            class_count,
            by_class,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn class_indices(&self, class: usize) -> &[usize] {
        &self.by_class[class]
    }
}

/// Disjoint class-id sets for meta-train / meta-validation / meta-test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitSpec {
    pub fn validate(&self, class_count: usize) -> Result<()> {
        let mut seen = vec![false; class_count];
        for &c in self.train.iter().chain(&self.val).chain(&self.test) {
            if c >= class_count {
                return Err(CoreError::Data(format!(
                    "split references class {c} outside {class_count} classes"
                )));
            }
            if seen[c] {
                return Err(CoreError::Data(format!(
                    "class {c} appears in more than one split"
                )));
            }
            seen[c] = true;
        }
        if seen.iter().any(|&s| !s) {
            return Err(CoreError::Data(
                "splits do not cover every class".into(),
            ));
        }
        Ok(())
    }
}

/// Latent dimension of the blob generator's class-mean manifold.
pub const BLOB_LATENT_DIM: usize = 4;

/// Synthetic classification family: class means live on a random low-rank
/// linear manifold (μ_c = M·z_c with z_c a latent code of dimension 4), and
/// samples are isotropic Gaussian around their class mean. Classes are
/// split 60/20/20% (in shuffled order) into meta-train / val / test.
pub fn gen_blob_classes(
    classes: usize,
    dim: usize,
    per_class: usize,
    intra_std: f64,
    seed: u64,
) -> Result<(LabeledDataset, SplitSpec)> {
    if classes < 10 {
        return Err(CoreError::InvalidArgument(
            "need at least 10 classes so each split supports 5-way episodes".into(),
        ));
    }
    if dim == 0 || per_class == 0 || intra_std < 0.0 {
        return Err(CoreError::InvalidArgument(
            "dim and per_class must be ≥ 1 and intra_std ≥ 0".into(),
        ));
    }
    let mut stream = Stream::derived(seed, &[domain::BLOBS]);
    let r = BLOB_LATENT_DIM.min(dim);
    let mut map = Matrix::zeros(dim, r);
    for v in map.as_mut_slice() {
        *v = stream.normal();
    }
    let mut means = Matrix::zeros(classes, dim);
    for c in 0..classes {
        let z: Vec<f64> = (0..r).map(|_| stream.normal()).collect();
        means.row_mut(c).copy_from_slice(&map.matvec(&z));
    }
    let n = classes * per_class;
    let mut inputs = Matrix::zeros(n, dim);
    let mut labels = Vec::with_capacity(n);
    for c in 0..classes {
        for i in 0..per_class {
            let row = inputs.row_mut(c * per_class + i);
            for (v, &mu) in row.iter_mut().zip(means.row(c)) {
                *v = mu + intra_std * stream.normal();
            }
            labels.push(c);
        }
    }
    let mut order: Vec<usize> = (0..classes).collect();
    stream.shuffle(&mut order);
    let n_train = classes * 6 / 10;
    let n_val = classes * 2 / 10;
    let split = SplitSpec {
        train: order[..n_train].to_vec(),
        val: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
    };
    let dataset = LabeledDataset::new(inputs, labels, classes)?;
    split.validate(classes)?;
    Ok((dataset, split))
}

/// One N-way k-shot episode. Sample indices point into the source dataset;
/// labels are episode-local. `class_map[local]` is the global class id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    pub way: usize,
    pub shot: usize,
    pub query_per_class: usize,
    pub support_indices: Vec<usize>,
    pub support_labels: Vec<usize>,
    pub query_indices: Vec<usize>,
    pub query_labels: Vec<usize>,
    pub class_map: Vec<usize>,
}

/// Samples an episode: `way` classes without replacement from the split,
/// then `shot + query_per_class` samples without replacement per class,
/// the first `shot` of which form the support set.
pub fn sample_episode(
    dataset: &LabeledDataset,
    split_classes: &[usize],
    way: usize,
    shot: usize,
    query_per_class: usize,
    stream: &mut Stream,
) -> Result<Episode> {
    if way == 0 || shot == 0 || query_per_class == 0 {
        return Err(CoreError::InvalidArgument(
            "way, shot, and query_per_class must be ≥ 1".into(),
        ));
    }
    if split_classes.len() < way {
        return Err(CoreError::Data(format!(
            "split has {} classes, episode needs {way}",
            split_classes.len()
        )));
    }
    let picked = stream.choose_indices(split_classes.len(), way);
    let class_map: Vec<usize> = picked.iter().map(|&i| split_classes[i]).collect();
    let need = shot + query_per_class;
    let mut support_indices = Vec::with_capacity(way * shot);
    let mut support_labels = Vec::with_capacity(way * shot);
    let mut query_indices = Vec::with_capacity(way * query_per_class);
    let mut query_labels = Vec::with_capacity(way * query_per_class);
    for (local, &class) in class_map.iter().enumerate() {
        let pool = dataset.class_indices(class);
        if pool.len() < need {
            return Err(CoreError::Data(format!(
                "class {class} has {} samples, episode needs {need}",
                pool.len()
            )));
        }
        let chosen = stream.choose_indices(pool.len(), need);
        for (j, &pick) in chosen.iter().enumerate() {
            if j < shot {
                support_indices.push(pool[pick]);
                support_labels.push(local);
            } else {
                query_indices.push(pool[pick]);
                query_labels.push(local);
            }
        }
    }
    Ok(Episode {
        way,
        shot,
        query_per_class,
        support_indices,
        support_labels,
        query_indices,
        query_labels,
        class_map,
    })
}

/// Splits the sample indices of one regression task into a k-shot support
/// set and the remaining queries, chosen without replacement.
pub fn sample_regression_split(
    n: usize,
    shot: usize,
    stream: &mut Stream,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if shot == 0 || shot >= n {
        return Err(CoreError::InvalidArgument(format!(
            "shot {shot} must lie in [1, {n})"
        )));
    }
    let support = stream.choose_indices(n, shot);
    let mut is_support = vec![false; n];
    for &i in &support {
        is_support[i] = true;
    }
    let query: Vec<usize> = (0..n).filter(|&i| !is_support[i]).collect();
    Ok((support, query))
}
