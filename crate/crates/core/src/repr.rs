//! Representation learning on merged training data: multi-head regression
//! or C-class classification over a shared feature extractor, followed by a
//! tail weight-averaging phase at constant learning rate.

use alloc::format;
use alloc::vec::Vec;

use crate::averaging::SwaState;
use crate::linalg::Matrix;
use crate::math;
use crate::nn::{
    backward, backward_hidden, hidden_trace, lr_at, output_from_features, sgd_step, MlpSpec,
    ParamVector, SgdState,
};
use crate::rng::{domain, Stream};
use crate::{CoreError, Result};

/// Training objective of the representation phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Per-task squared error; the top layer holds one output per task.
    Mse,
    /// Softmax cross-entropy; the top layer holds one logit per class.
    Ce,
}

/// One task's samples before merging: inputs with scalar targets.
#[derive(Debug, Clone)]
pub struct TaskSamples {
    pub inputs: Matrix,
    pub targets: Vec<f64>,
}

/// All training tasks concatenated, each sample tagged with the dense id of
/// its task (regression) or class (classification).
#[derive(Debug, Clone)]
pub struct MergedDataset {
    inputs: Matrix,
    targets: Vec<f64>,
    groups: Vec<usize>,
    group_count: usize,
}

impl MergedDataset {
    /// Concatenates regression tasks; sample i of task τ keeps target y and
    /// is tagged with τ.
    pub fn merge_tasks(tasks: &[TaskSamples]) -> Result<Self> {
        if tasks.is_empty() {
            return Err(CoreError::Data("cannot merge an empty task list".into()));
        }
        let dim = tasks[0].inputs.cols();
        let total: usize = tasks.iter().map(|t| t.inputs.rows()).sum();
        let mut inputs = Matrix::zeros(total, dim);
        let mut targets = Vec::with_capacity(total);
        let mut groups = Vec::with_capacity(total);
        let mut row = 0;
        for (tau, task) in tasks.iter().enumerate() {
            if task.inputs.cols() != dim {
                return Err(CoreError::DimensionMismatch(format!(
                    "task {tau} has input dim {}, expected {}",
                    task.inputs.cols(),
                    dim
                )));
            }
            if task.inputs.rows() != task.targets.len() {
                return Err(CoreError::DimensionMismatch(format!(
                    "task {tau} has {} inputs but {} targets",
                    task.inputs.rows(),
                    task.targets.len()
                )));
            }
            for i in 0..task.inputs.rows() {
                inputs.row_mut(row).copy_from_slice(task.inputs.row(i));
                targets.push(task.targets[i]);
                groups.push(tau);
                row += 1;
            }
        }
        Ok(MergedDataset {
            inputs,
            targets,
            groups,
            group_count: tasks.len(),
        })
    }

    /// Wraps an already-labeled classification set; labels must be dense in
    /// [0, class_count).
    pub fn from_labeled(inputs: Matrix, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(CoreError::DimensionMismatch(format!(
                "{} inputs but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(CoreError::Data(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        Ok(MergedDataset {
            inputs,
            targets: Vec::new(),
            groups: labels,
            group_count: class_count,
        })
    }

    #[inline]
    pub fn total(&self) -> usize {
        self.inputs.rows()
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    /// Number of tasks 𝒯 or classes 𝒞.
    #[inline]
    pub fn group_count(&self) -> usize {
        self.group_count
    }

    pub fn per_group_counts(&self) -> Vec<usize> {
        let mut counts = alloc::vec![0usize; self.group_count];
        for &g in &self.groups {
            counts[g] += 1;
        }
        counts
    }

    #[inline]
    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    #[inline]
    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    #[inline]
    pub fn groups(&self) -> &[usize] {
        &self.groups
    }
}

/// Length of a phase: whole passes over the data, or raw minibatch steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainDuration {
    Epochs(usize),
    Iterations(usize),
}

impl TrainDuration {
    pub fn is_zero(self) -> bool {
        matches!(self, TrainDuration::Epochs(0) | TrainDuration::Iterations(0))
    }
}

#[derive(Debug, Clone)]
pub struct ReprTrainConfig {
    pub duration: TrainDuration,
    pub batch_size: usize,
    pub base_lr: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub swa_duration: TrainDuration,
    pub swa_lr: f64,
    pub seed: u64,
    pub loss: LossKind,
}

impl ReprTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(CoreError::InvalidArgument("batch size must be ≥ 1".into()));
        }
        if !(self.base_lr > 0.0) || !(self.swa_lr > 0.0) {
            return Err(CoreError::InvalidArgument(
                "learning rates must be positive".into(),
            ));
        }
        if !self.milestones.windows(2).all(|w| w[0] < w[1]) {
            return Err(CoreError::InvalidArgument(
                "milestones must be strictly increasing".into(),
            ));
        }
        Ok(())
    }
}

/// One logged epoch: sample-weighted mean of its batch losses, and the
/// learning rate in force.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub theta_sgd: ParamVector,
    pub theta_swa: ParamVector,
    pub log: Vec<EpochRecord>,
}

/// Squared-error loss over a batch, with one regression head per task.
///
/// The batch estimate is Σ_batch (y − ŷ)² / (2m), whose expectation under
/// uniform batching equals the full 1/(2N′)-normalized objective, so logged
/// losses stay comparable to the generator noise floor. Only the touched
/// task heads receive gradient; the shared extractor always does.
pub fn mse_multitask_loss(
    spec: &MlpSpec,
    params: &ParamVector,
    merged: &MergedDataset,
    batch: &[usize],
) -> Result<(f64, ParamVector)> {
    let mut grad = ParamVector::zeros(spec.param_shapes());
    let loss = mse_multitask_loss_into(spec, params, merged, batch, &mut grad)?;
    Ok((loss, grad))
}

fn gather_batch(merged: &MergedDataset, batch: &[usize]) -> Matrix {
    let mut x = Matrix::zeros(batch.len(), merged.input_dim());
    for (row, &idx) in batch.iter().enumerate() {
        x.row_mut(row).copy_from_slice(merged.inputs.row(idx));
    }
    x
}

/// As `mse_multitask_loss` but accumulating into a caller-owned gradient
/// buffer (zeroed here) so the training loop can avoid reallocation.
pub fn mse_multitask_loss_into(
    spec: &MlpSpec,
    params: &ParamVector,
    merged: &MergedDataset,
    batch: &[usize],
    grad: &mut ParamVector,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(CoreError::InvalidArgument("empty batch".into()));
    }
    if spec.output_dim != merged.group_count {
        return Err(CoreError::DimensionMismatch(format!(
            "network has {} heads but the data has {} tasks",
            spec.output_dim, merged.group_count
        )));
    }
    grad.values_mut().fill(0.0);
    let x = gather_batch(merged, batch);
    let trace = hidden_trace(spec, params, &x)?;
    let features = trace.features();
    let m = batch.len() as f64;
    let top = spec.hidden_dims.len();
    let (p, _) = spec.layer_dims(top);
    let w_top = params.tensor(2 * top);
    let b_top = params.tensor(2 * top + 1);
    let mut loss = 0.0;
    let mut dfeat = Matrix::zeros(batch.len(), p);
    for (row, &idx) in batch.iter().enumerate() {
        let tau = merged.groups[idx];
        if tau >= merged.group_count {
            return Err(CoreError::Data(format!("unknown task id {tau}")));
        }
        let wrow = &w_top[tau * p..(tau + 1) * p];
        let h = features.row(row);
        let pred = crate::linalg::dot(wrow, h) + b_top[tau];
        let r = pred - merged.targets[idx];
        loss += r * r / (2.0 * m);
        let dpred = r / m;
        {
            let dw = grad.tensor_mut(2 * top);
            let drow = &mut dw[tau * p..(tau + 1) * p];
            for (g, &hv) in drow.iter_mut().zip(h) {
                *g += dpred * hv;
            }
        }
        grad.tensor_mut(2 * top + 1)[tau] += dpred;
        for (df, &wv) in dfeat.row_mut(row).iter_mut().zip(wrow) {
            *df += dpred * wv;
        }
    }
    backward_hidden(spec, params, &trace, dfeat, grad)?;
    Ok(loss)
}

/// Softmax cross-entropy over a batch, mean per batch element, stabilized
/// with log-sum-exp.
pub fn ce_loss(
    spec: &MlpSpec,
    params: &ParamVector,
    merged: &MergedDataset,
    batch: &[usize],
) -> Result<(f64, ParamVector)> {
    let mut grad = ParamVector::zeros(spec.param_shapes());
    let loss = ce_loss_into(spec, params, merged, batch, &mut grad)?;
    Ok((loss, grad))
}

pub fn ce_loss_into(
    spec: &MlpSpec,
    params: &ParamVector,
    merged: &MergedDataset,
    batch: &[usize],
    grad: &mut ParamVector,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(CoreError::InvalidArgument("empty batch".into()));
    }
    if spec.output_dim != merged.group_count {
        return Err(CoreError::DimensionMismatch(format!(
            "network has {} logits but the data has {} classes",
            spec.output_dim, merged.group_count
        )));
    }
    grad.values_mut().fill(0.0);
    let x = gather_batch(merged, batch);
    let trace = hidden_trace(spec, params, &x)?;
    let mut logits = output_from_features(spec, params, trace.features());
    let m = batch.len() as f64;
    let mut loss = 0.0;
    // rewrite logits in place into dlogits = (softmax − onehot)/m
    for (row, &idx) in batch.iter().enumerate() {
        let label = merged.groups[idx];
        if label >= merged.group_count {
            return Err(CoreError::Data(format!(
                "label {label} out of range for {} classes",
                merged.group_count
            )));
        }
        let z = logits.row_mut(row);
        let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in z.iter() {
            sum += math::exp(v - zmax);
        }
        let lse = zmax + math::ln(sum);
        loss += (lse - z[label]) / m;
        for v in z.iter_mut() {
            *v = math::exp(*v - lse) / m;
        }
        z[label] -= 1.0 / m;
    }
    let full = backward(spec, params, &trace, &logits)?;
    grad.values_mut().copy_from_slice(full.values());
    Ok(loss)
}

/// Live state of a training run, split out so that callers can run the two
/// phases separately (ablations reuse one SGD phase under several averaging
/// strategies) while identical seeds still give bit-identical trajectories.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ParamVector,
    sgd: SgdState,
    shuffle: Stream,
    grad: ParamVector,
}

impl TrainState {
    /// Fresh state with seeded initialization.
    pub fn new(spec: &MlpSpec, config: &ReprTrainConfig) -> Result<Self> {
        config.validate()?;
        let mut init_stream = Stream::derived(config.seed, &[domain::INIT]);
        let params = spec.init_params(&mut init_stream);
        let sgd = SgdState::new(params.len(), config.momentum, config.weight_decay)?;
        let shuffle = Stream::derived(config.seed, &[domain::SHUFFLE]);
        let grad = params.zeros_like();
        Ok(TrainState {
            params,
            sgd,
            shuffle,
            grad,
        })
    }
}

struct PhasePlan {
    steps_per_epoch: usize,
    total_steps: usize,
}

fn plan_phase(duration: TrainDuration, total: usize, batch: usize) -> PhasePlan {
    let steps_per_epoch = total.div_ceil(batch);
    let total_steps = match duration {
        TrainDuration::Epochs(e) => e * steps_per_epoch,
        TrainDuration::Iterations(i) => i,
    };
    PhasePlan {
        steps_per_epoch,
        total_steps,
    }
}

/// Runs minibatch steps over `merged`, reshuffling at epoch starts. Calls
/// `on_epoch` after every completed epoch and once more for a trailing
/// partial epoch; `completed` is false for that trailing call.
#[allow(clippy::too_many_arguments)]
fn run_phase(
    spec: &MlpSpec,
    merged: &MergedDataset,
    config: &ReprTrainConfig,
    state: &mut TrainState,
    plan: &PhasePlan,
    mut lr_for_epoch: impl FnMut(usize) -> f64,
    epoch_offset: usize,
    log: &mut Vec<EpochRecord>,
    mut on_epoch: impl FnMut(usize, bool, &ParamVector),
) -> Result<()> {
    let total = merged.total();
    let mut order: Vec<usize> = (0..total).collect();
    let mut steps_done = 0;
    let mut epoch = 0;
    while steps_done < plan.total_steps {
        state.shuffle.shuffle(&mut order);
        let lr = lr_for_epoch(epoch_offset + epoch);
        let mut epoch_loss = 0.0;
        let mut epoch_samples = 0usize;
        let mut cursor = 0;
        let mut epoch_steps = 0;
        while cursor < total && steps_done < plan.total_steps {
            let end = (cursor + config.batch_size).min(total);
            let batch = &order[cursor..end];
            let loss = match config.loss {
                LossKind::Mse => {
                    mse_multitask_loss_into(spec, &state.params, merged, batch, &mut state.grad)?
                }
                LossKind::Ce => {
                    ce_loss_into(spec, &state.params, merged, batch, &mut state.grad)?
                }
            };
            if !loss.is_finite() {
                return Err(CoreError::Diverged {
                    epoch: epoch_offset + epoch,
                });
            }
            sgd_step(&mut state.params, &state.grad, lr, &mut state.sgd)?;
            epoch_loss += loss * batch.len() as f64;
            epoch_samples += batch.len();
            cursor = end;
            steps_done += 1;
            epoch_steps += 1;
        }
        let completed = epoch_steps == plan.steps_per_epoch;
        log.push(EpochRecord {
            epoch: epoch_offset + epoch,
            loss: epoch_loss / epoch_samples as f64,
            lr,
        });
        on_epoch(epoch_offset + epoch, completed, &state.params);
        epoch += 1;
    }
    Ok(())
}

/// The first phase: milestone-scheduled SGD to θ_T. Returns the log; the
/// resulting parameters live in `state`.
pub fn sgd_phase(
    spec: &MlpSpec,
    merged: &MergedDataset,
    config: &ReprTrainConfig,
    state: &mut TrainState,
) -> Result<Vec<EpochRecord>> {
    let plan = plan_phase(config.duration, merged.total(), config.batch_size);
    let mut log = Vec::new();
    run_phase(
        spec,
        merged,
        config,
        state,
        &plan,
        |e| lr_at(e, config.base_lr, &config.milestones, config.gamma),
        0,
        &mut log,
        |_, _, _| {},
    )?;
    Ok(log)
}

/// The averaging phase: constant `swa_lr`, snapshotting the parameters at
/// every completed epoch. The caller owns what the snapshots feed (running
/// mean, exponential averages, or both).
pub fn averaging_phase(
    spec: &MlpSpec,
    merged: &MergedDataset,
    config: &ReprTrainConfig,
    state: &mut TrainState,
    epoch_offset: usize,
    mut on_snapshot: impl FnMut(&ParamVector),
) -> Result<Vec<EpochRecord>> {
    let plan = plan_phase(config.swa_duration, merged.total(), config.batch_size);
    let mut log = Vec::new();
    run_phase(
        spec,
        merged,
        config,
        state,
        &plan,
        |_| config.swa_lr,
        epoch_offset,
        &mut log,
        |_, completed, params| {
            if completed {
                on_snapshot(params);
            }
        },
    )?;
    Ok(log)
}

/// Full two-phase run: SGD to θ_T, then the averaging phase. Returns both
/// endpoints so ablations can compare the plain and averaged solutions.
/// With a zero-length averaging phase θ_SWA = θ_T.
pub fn train_representation(
    spec: &MlpSpec,
    merged: &MergedDataset,
    config: &ReprTrainConfig,
) -> Result<TrainOutcome> {
    let mut state = TrainState::new(spec, config)?;
    let mut log = sgd_phase(spec, merged, config, &mut state)?;
    let theta_sgd = state.params.clone();
    let mut swa = SwaState::new(&theta_sgd);
    let epoch_offset = log.len();
    let swa_log = averaging_phase(spec, merged, config, &mut state, epoch_offset, |snap| {
        swa.accumulate(snap).expect("snapshot layout is fixed");
    })?;
    log.extend(swa_log);
    let theta_swa = swa.into_mean().unwrap_or_else(|| theta_sgd.clone());
    Ok(TrainOutcome {
        theta_sgd,
        theta_swa,
        log,
    })
}

/// Feature matrix of a frozen extractor: row i is h(x_i), with a trailing
/// constant 1 when `append_one` is set (the augmented form the linear heads
/// consume).
pub fn extract_features(
    spec: &MlpSpec,
    params: &ParamVector,
    x: &Matrix,
    append_one: bool,
) -> Result<Matrix> {
    let trace = hidden_trace(spec, params, x)?;
    let h = trace.features();
    if !append_one {
        return Ok(h.clone());
    }
    let mut out = Matrix::zeros(h.rows(), h.cols() + 1);
    for i in 0..h.rows() {
        let row = out.row_mut(i);
        row[..h.cols()].copy_from_slice(h.row(i));
        row[h.cols()] = 1.0;
    }
    Ok(out)
}
