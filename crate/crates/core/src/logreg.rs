//! Few-shot classification head: L2-regularized multinomial logistic
//! regression on normalized frozen features, with temperature-scaled
//! probabilities. λ is chosen by validation accuracy at T = 1, then T by
//! pooled validation calibration error.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::eval::ece;
use crate::linalg::{dot, norm2, Matrix};
use crate::math;
use crate::{CoreError, Result};

/// One few-shot episode realized in feature space. Rows of `support` and
/// `query` are already-normalized augmented features; labels are
/// episode-local indices in [0, way).
#[derive(Debug, Clone)]
pub struct EpisodeFeatures {
    pub support: Matrix,
    pub support_labels: Vec<usize>,
    pub query: Matrix,
    pub query_labels: Vec<usize>,
    pub way: usize,
}

impl EpisodeFeatures {
    pub fn validate(&self) -> Result<()> {
        if self.support.rows() != self.support_labels.len()
            || self.query.rows() != self.query_labels.len()
        {
            return Err(CoreError::DimensionMismatch(
                "episode feature rows do not match label counts".into(),
            ));
        }
        if self.support.cols() != self.query.cols() {
            return Err(CoreError::DimensionMismatch(
                "support and query feature widths differ".into(),
            ));
        }
        if self
            .support_labels
            .iter()
            .chain(&self.query_labels)
            .any(|&l| l >= self.way)
        {
            return Err(CoreError::Data(
                "episode label outside [0, way)".into(),
            ));
        }
        Ok(())
    }
}

/// [h/‖h‖₂ ; 1]: unit-normalized features with a bias coordinate appended
/// after normalization. Near-zero vectors map to [0 ; 1].
pub fn normalize_features(h: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(h.len() + 1);
    let norm = norm2(h);
    if norm < 1e-12 {
        out.resize(h.len(), 0.0);
    } else {
        out.extend(h.iter().map(|v| v / norm));
    }
    out.push(1.0);
    out
}

/// Fitted weights plus fit diagnostics. `w` holds one row per episode class
/// (row c is w_c, so logits are W·φ).
#[derive(Debug, Clone)]
pub struct LogRegFit {
    pub w: Matrix,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Set when an unpenalized fit ran into the iteration cap, the regime
    /// where separable data sends ‖W‖ off to infinity.
    pub norm_divergence: bool,
}

/// Head model used at prediction time.
#[derive(Debug, Clone)]
pub struct LogRegModel {
    pub w: Matrix,
    pub lambda: f64,
    pub temperature: f64,
}

impl LogRegModel {
    pub fn new(w: Matrix, lambda: f64, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(CoreError::InvalidArgument(
                "temperature must be positive".into(),
            ));
        }
        Ok(LogRegModel {
            w,
            lambda,
            temperature,
        })
    }
}

pub struct FitOptions {
    /// Include the bias coordinate in the L2 penalty (the objective as
    /// written penalizes whole class vectors); disable for ablations.
    pub penalize_bias: bool,
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            penalize_bias: true,
            grad_tol: 1e-6,
            max_iter: 2000,
        }
    }
}

/// Objective: Σ_i [lse(Wφ_i) − (Wφ_i)_{y_i}] + λ·Σ_c w_cᵀw_c (sum over
/// samples, not mean). Returns the value and the full gradient.
fn objective_and_grad(
    w: &Matrix,
    features: &Matrix,
    labels: &[usize],
    lambda: f64,
    penalize_bias: bool,
) -> (f64, Matrix) {
    let k = w.rows();
    let p1 = w.cols();
    let mut value = 0.0;
    let mut grad = Matrix::zeros(k, p1);
    let mut logits = vec![0.0; k];
    for i in 0..features.rows() {
        let phi = features.row(i);
        for (c, z) in logits.iter_mut().enumerate() {
            *z = dot(w.row(c), phi);
        }
        let zmax = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &z in &logits {
            sum += math::exp(z - zmax);
        }
        let lse = zmax + math::ln(sum);
        value += lse - logits[labels[i]];
        for c in 0..k {
            let mut coeff = math::exp(logits[c] - lse);
            if c == labels[i] {
                coeff -= 1.0;
            }
            if coeff == 0.0 {
                continue;
            }
            for (g, &pv) in grad.row_mut(c).iter_mut().zip(phi) {
                *g += coeff * pv;
            }
        }
    }
    let penalized_cols = if penalize_bias { p1 } else { p1 - 1 };
    for c in 0..k {
        let wr = w.row(c);
        for j in 0..penalized_cols {
            value += lambda * wr[j] * wr[j];
        }
        let gr = grad.row_mut(c);
        for j in 0..penalized_cols {
            gr[j] += 2.0 * lambda * wr[j];
        }
    }
    (value, grad)
}

fn objective_only(
    w: &Matrix,
    features: &Matrix,
    labels: &[usize],
    lambda: f64,
    penalize_bias: bool,
) -> f64 {
    let k = w.rows();
    let p1 = w.cols();
    let mut value = 0.0;
    let mut logits = vec![0.0; k];
    for i in 0..features.rows() {
        let phi = features.row(i);
        for (c, z) in logits.iter_mut().enumerate() {
            *z = dot(w.row(c), phi);
        }
        let zmax = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &z in &logits {
            sum += math::exp(z - zmax);
        }
        value += zmax + math::ln(sum) - logits[labels[i]];
    }
    let penalized_cols = if penalize_bias { p1 } else { p1 - 1 };
    for c in 0..k {
        let wr = w.row(c);
        for j in 0..penalized_cols {
            value += lambda * wr[j] * wr[j];
        }
    }
    value
}

/// Deterministic full-batch gradient descent with Armijo backtracking from
/// W = 0. Stops when the gradient max-norm falls to `grad_tol` or at the
/// iteration cap.
pub fn fit(
    features: &Matrix,
    labels: &[usize],
    class_count: usize,
    lambda: f64,
) -> Result<LogRegFit> {
    fit_with_options(features, labels, class_count, lambda, &FitOptions::default())
}

pub fn fit_with_options(
    features: &Matrix,
    labels: &[usize],
    class_count: usize,
    lambda: f64,
    opts: &FitOptions,
) -> Result<LogRegFit> {
    if lambda < 0.0 {
        return Err(CoreError::InvalidArgument("lambda must be ≥ 0".into()));
    }
    if features.rows() != labels.len() {
        return Err(CoreError::DimensionMismatch(format!(
            "{} feature rows but {} labels",
            features.rows(),
            labels.len()
        )));
    }
    if labels.iter().any(|&l| l >= class_count) {
        return Err(CoreError::Data(format!(
            "label out of range for {class_count} classes"
        )));
    }
    let p1 = features.cols();
    let mut w = Matrix::zeros(class_count, p1);
    let mut iterations = 0;
    let mut converged = false;
    let mut step = 1.0f64;
    let (mut value, mut grad) =
        objective_and_grad(&w, features, labels, lambda, opts.penalize_bias);
    for _ in 0..opts.max_iter {
        let gmax = grad.as_slice().iter().fold(0.0f64, |m, &g| m.max(g.abs()));
        if gmax <= opts.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let gnorm2: f64 = grad.as_slice().iter().map(|g| g * g).sum();
        // Armijo backtracking, step capped at 1
        let mut t = (2.0 * step).min(1.0);
        let mut accepted = false;
        for _ in 0..60 {
            let mut trial = w.clone();
            for (tv, &g) in trial.as_mut_slice().iter_mut().zip(grad.as_slice()) {
                *tv -= t * g;
            }
            let tval = objective_only(&trial, features, labels, lambda, opts.penalize_bias);
            if tval <= value - 1e-4 * t * gnorm2 {
                w = trial;
                step = t;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // no descent step representable; gradient is numerically flat
            break;
        }
        let refreshed = objective_and_grad(&w, features, labels, lambda, opts.penalize_bias);
        value = refreshed.0;
        grad = refreshed.1;
    }
    if !converged {
        let gmax = grad.as_slice().iter().fold(0.0f64, |m, &g| m.max(g.abs()));
        converged = gmax <= opts.grad_tol;
    }
    let norm_divergence = !converged && lambda == 0.0;
    Ok(LogRegFit {
        w,
        lambda,
        iterations,
        converged,
        norm_divergence,
    })
}

/// Temperature-scaled class probabilities p_c ∝ exp(w_cᵀφ / T), computed
/// stably through log-sum-exp.
pub fn predict_proba(model: &LogRegModel, phi: &[f64]) -> Vec<f64> {
    softmax_with_temperature(&model.w, phi, model.temperature)
}

fn softmax_with_temperature(w: &Matrix, phi: &[f64], t: f64) -> Vec<f64> {
    let k = w.rows();
    let mut z: Vec<f64> = (0..k).map(|c| dot(w.row(c), phi) / t).collect();
    let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = math::exp(*v - zmax);
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
    z
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Query accuracy of a fitted episode head; temperature does not matter for
/// the argmax so it is evaluated at T = 1.
pub fn episode_accuracy(w: &Matrix, episode: &EpisodeFeatures) -> f64 {
    let mut correct = 0usize;
    for i in 0..episode.query.rows() {
        let probs = softmax_with_temperature(w, episode.query.row(i), 1.0);
        if argmax(&probs) == episode.query_labels[i] {
            correct += 1;
        }
    }
    correct as f64 / episode.query.rows() as f64
}

/// Outcome of the two-stage validation grid search. `select_lambda` fills
/// the λ half; `select_temperature` completes the rest.
#[derive(Debug, Clone)]
pub struct GridSearchResult {
    pub lambda_grid: Vec<f64>,
    pub lambda_accuracy: Vec<f64>,
    pub chosen_lambda: f64,
    pub temperature_grid: Vec<f64>,
    pub temperature_ece: Vec<f64>,
    pub chosen_temperature: f64,
}

/// Log-spaced 1e-3 … 1e2, 11 points.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..11)
        .map(|i| {
            let exponent = -3.0 + 0.5 * i as f64;
            math::exp(exponent * math::ln(10.0))
        })
        .collect()
}

/// 0.5 … 5.0 in steps of 0.25.
pub fn default_temperature_grid() -> Vec<f64> {
    (0..19).map(|i| 0.5 + 0.25 * i as f64).collect()
}

/// Fits every validation episode at each λ (T = 1) and keeps the λ with the
/// best mean query accuracy; ties go to the smaller λ.
pub fn select_lambda(episodes: &[EpisodeFeatures], grid: &[f64]) -> Result<GridSearchResult> {
    if grid.is_empty() {
        return Err(CoreError::InvalidArgument("empty lambda grid".into()));
    }
    if episodes.is_empty() {
        return Err(CoreError::Data(
            "lambda selection needs at least one validation episode".into(),
        ));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite lambda grid"));
    let mut accuracies = Vec::with_capacity(sorted.len());
    for &lambda in &sorted {
        let mut total = 0.0;
        for ep in episodes {
            ep.validate()?;
            let fitted = fit(&ep.support, &ep.support_labels, ep.way, lambda)?;
            total += episode_accuracy(&fitted.w, ep);
        }
        accuracies.push(total / episodes.len() as f64);
    }
    let mut best = 0;
    for i in 1..sorted.len() {
        if accuracies[i] > accuracies[best] {
            best = i;
        }
    }
    Ok(GridSearchResult {
        chosen_lambda: sorted[best],
        lambda_grid: sorted,
        lambda_accuracy: accuracies,
        temperature_grid: Vec::new(),
        temperature_ece: Vec::new(),
        chosen_temperature: 1.0,
    })
}

/// Validation query logits pooled across episodes, each query scored by its
/// own episode's fitted head.
#[derive(Debug, Clone)]
pub struct PooledLogits {
    pub logits: Matrix,
    pub labels: Vec<usize>,
}

pub fn pooled_query_logits(
    fits: &[LogRegFit],
    episodes: &[EpisodeFeatures],
) -> Result<PooledLogits> {
    if fits.len() != episodes.len() {
        return Err(CoreError::DimensionMismatch(
            "one fitted head per episode is required".into(),
        ));
    }
    let way = episodes.first().map_or(0, |e| e.way);
    let total: usize = episodes.iter().map(|e| e.query.rows()).sum();
    let mut logits = Matrix::zeros(total, way);
    let mut labels = Vec::with_capacity(total);
    let mut row = 0;
    for (fitted, ep) in fits.iter().zip(episodes) {
        if ep.way != way {
            return Err(CoreError::DimensionMismatch(
                "pooled episodes must share one way".into(),
            ));
        }
        for i in 0..ep.query.rows() {
            let phi = ep.query.row(i);
            for c in 0..way {
                logits[(row, c)] = dot(fitted.w.row(c), phi);
            }
            labels.push(ep.query_labels[i]);
            row += 1;
        }
    }
    Ok(PooledLogits { logits, labels })
}

/// Completes the grid search: per T, calibration error of the pooled
/// temperature-scaled predictions; argmin wins, ties resolved toward T
/// closest to 1 and then toward the smaller T. Accuracy is T-invariant.
pub fn select_temperature(
    partial: &GridSearchResult,
    pooled: &PooledLogits,
    grid: &[f64],
    bins: usize,
) -> Result<GridSearchResult> {
    if grid.is_empty() {
        return Err(CoreError::InvalidArgument("empty temperature grid".into()));
    }
    if pooled.labels.is_empty() {
        return Err(CoreError::Data(
            "temperature selection needs pooled validation predictions".into(),
        ));
    }
    if grid.iter().any(|&t| !(t > 0.0)) {
        return Err(CoreError::InvalidArgument(
            "temperatures must be positive".into(),
        ));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite temperature grid"));
    let n = pooled.labels.len();
    let mut eces = Vec::with_capacity(sorted.len());
    for &t in &sorted {
        let mut confidences = Vec::with_capacity(n);
        let mut correct = Vec::with_capacity(n);
        for i in 0..n {
            let z = pooled.logits.row(i);
            let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / t;
            let mut sum = 0.0;
            let mut pmax = 0.0;
            let mut pargmax = 0;
            for (c, &v) in z.iter().enumerate() {
                let p = math::exp(v / t - zmax);
                sum += p;
                if p > pmax {
                    pmax = p;
                    pargmax = c;
                }
            }
            confidences.push(pmax / sum);
            correct.push(pargmax == pooled.labels[i]);
        }
        eces.push(ece(&confidences, &correct, bins)?);
    }
    let mut best = 0;
    for i in 1..sorted.len() {
        let better = eces[i] < eces[best] - 1e-15;
        let tie = (eces[i] - eces[best]).abs() <= 1e-15;
        let closer_to_one = (sorted[i] - 1.0).abs() < (sorted[best] - 1.0).abs() - 1e-15;
        if better || (tie && closer_to_one) {
            best = i;
        }
    }
    Ok(GridSearchResult {
        lambda_grid: partial.lambda_grid.clone(),
        lambda_accuracy: partial.lambda_accuracy.clone(),
        chosen_lambda: partial.chosen_lambda,
        temperature_grid: sorted.clone(),
        temperature_ece: eces,
        chosen_temperature: sorted[best],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_features(&[3.0, 4.0]), vec![0.6, 0.8, 1.0]);
        let unit = [1.0, 0.0];
        assert_eq!(normalize_features(&unit), vec![1.0, 0.0, 1.0]);
        assert_eq!(normalize_features(&[0.0, 1e-13]), vec![0.0, 0.0, 1.0]);
        let mut stream = Stream::new(4);
        for _ in 0..20 {
            let h = [stream.normal(), stream.normal(), stream.normal()];
            let out = normalize_features(&h);
            let n = norm2(&out[..3]);
            assert!((n - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn symmetric_two_class_fit() {
        let phi = normalize_features(&[1.0, 2.0]);
        let neg: Vec<f64> = phi.iter().map(|v| -v).collect();
        let features = Matrix::from_rows(&[phi.clone(), neg]);
        let fitted = fit(&features, &[0, 1], 2, 0.5).unwrap();
        assert!(fitted.converged);
        // symmetric data makes the two class vectors exact opposites
        for j in 0..3 {
            assert!((fitted.w[(0, j)] + fitted.w[(1, j)]).abs() <= 1e-6);
        }
        let model = LogRegModel::new(fitted.w, 0.5, 1.0).unwrap();
        let probs = predict_proba(&model, &[0.0, 0.0, 0.0]);
        assert!((probs[0] - 0.5).abs() <= 1e-12);
        assert!((probs[1] - 0.5).abs() <= 1e-12);
    }

    #[test]
    fn huge_lambda_crushes_weights_to_uniform_predictions() {
        let mut stream = Stream::new(8);
        let rows: Vec<Vec<f64>> = (0..9)
            .map(|_| normalize_features(&[stream.normal(), stream.normal()]))
            .collect();
        let labels = [0, 1, 2, 0, 1, 2, 0, 1, 2];
        let features = Matrix::from_rows(&rows);
        let fitted = fit(&features, &labels, 3, 1e6).unwrap();
        let fro: f64 = fitted.w.as_slice().iter().map(|v| v * v).sum::<f64>();
        assert!(math::sqrt(fro) <= 1e-2);
        let model = LogRegModel::new(fitted.w, 1e6, 1.0).unwrap();
        let probs = predict_proba(&model, rows[0].as_slice());
        for p in probs {
            assert!((p - 1.0 / 3.0).abs() <= 1e-2);
        }
    }

    #[test]
    fn objective_matches_long_run_oracle() {
        let mut stream = Stream::new(12);
        let rows: Vec<Vec<f64>> = (0..15)
            .map(|_| normalize_features(&[stream.normal(), stream.normal(), stream.normal()]))
            .collect();
        let labels: Vec<usize> = (0..15).map(|i| i % 3).collect();
        let features = Matrix::from_rows(&rows);
        let lambda = 0.1;
        let fitted = fit(&features, &labels, 3, lambda).unwrap();
        let value = objective_only(&fitted.w, &features, &labels, lambda, true);
        // oracle: plain gradient descent with a tiny fixed step, run long
        let mut w = Matrix::zeros(3, 4);
        for _ in 0..1_000_000 {
            let (_, g) = objective_and_grad(&w, &features, &labels, lambda, true);
            for (wv, &gv) in w.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *wv -= 1e-3 * gv;
            }
        }
        let oracle = objective_only(&w, &features, &labels, lambda, true);
        assert!(
            (value - oracle).abs() <= 1e-6,
            "fit {value} vs oracle {oracle}"
        );
        assert!(value <= objective_only(&Matrix::zeros(3, 4), &features, &labels, lambda, true));
        assert!(value <= oracle + 1e-6);
    }

    #[test]
    fn unpenalized_separable_fit_flags_norm_divergence() {
        let a = normalize_features(&[2.0, 0.1]);
        let b = normalize_features(&[-2.0, -0.1]);
        let features = Matrix::from_rows(&[a, b]);
        let fitted = fit(&features, &[0, 1], 2, 0.0).unwrap();
        assert!(!fitted.converged);
        assert_eq!(fitted.iterations, 2000);
        assert!(fitted.norm_divergence);
    }

    #[test]
    fn predict_examples() {
        let w = Matrix::zeros(4, 3);
        let model = LogRegModel::new(w, 0.1, 1.0).unwrap();
        for p in predict_proba(&model, &[0.5, -0.5, 1.0]) {
            assert!((p - 0.25).abs() <= 1e-15);
        }
        // logits (2, 0) at T = 2 → softmax of (1, 0)
        let mut w = Matrix::zeros(2, 1);
        w[(0, 0)] = 2.0;
        let model = LogRegModel::new(w, 0.0, 2.0).unwrap();
        let probs = predict_proba(&model, &[1.0]);
        let e = math::exp(1.0);
        assert!((probs[0] - e / (e + 1.0)).abs() <= 1e-12);
        assert!((probs[1] - 1.0 / (e + 1.0)).abs() <= 1e-12);
    }

    #[test]
    fn probabilities_form_a_simplex_and_argmax_ignores_temperature() {
        let mut stream = Stream::new(31);
        for _ in 0..10_000 {
            let mut w = Matrix::zeros(5, 4);
            for v in w.as_mut_slice() {
                *v = 3.0 * stream.normal();
            }
            let phi = [stream.normal(), stream.normal(), stream.normal(), 1.0];
            let t = stream.uniform(0.05, 10.0);
            let cold = LogRegModel::new(w.clone(), 0.0, 1.0).unwrap();
            let hot = LogRegModel::new(w, 0.0, t).unwrap();
            let p1 = predict_proba(&cold, &phi);
            let pt = predict_proba(&hot, &phi);
            let sum: f64 = pt.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
            assert!(pt.iter().all(|&p| p > 0.0));
            assert_eq!(argmax(&p1), argmax(&pt));
        }
    }

    #[test]
    fn weight_norm_shrinks_as_lambda_grows() {
        let mut stream = Stream::new(14);
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|_| normalize_features(&[stream.normal(), stream.normal()]))
            .collect();
        let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let features = Matrix::from_rows(&rows);
        let mut last = f64::INFINITY;
        for lambda in [0.01, 0.1, 1.0, 10.0] {
            let fitted = fit(&features, &labels, 3, lambda).unwrap();
            let fro = math::sqrt(fitted.w.as_slice().iter().map(|v| v * v).sum::<f64>());
            assert!(fro.is_finite());
            assert!(fro < last + 1e-9, "norm did not shrink at lambda {lambda}");
            last = fro;
        }
    }

    fn blob_episode(stream: &mut Stream, separation: f64) -> EpisodeFeatures {
        let way = 3;
        let shot = 5;
        let queries = 6;
        let mut support = Vec::new();
        let mut support_labels = Vec::new();
        let mut query = Vec::new();
        let mut query_labels = Vec::new();
        let centers = [[separation, 0.0], [0.0, separation], [-separation, -separation]];
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..shot {
                support.push(normalize_features(&[
                    center[0] + 0.1 * stream.normal(),
                    center[1] + 0.1 * stream.normal(),
                ]));
                support_labels.push(c);
            }
            for _ in 0..queries {
                query.push(normalize_features(&[
                    center[0] + 0.1 * stream.normal(),
                    center[1] + 0.1 * stream.normal(),
                ]));
                query_labels.push(c);
            }
        }
        EpisodeFeatures {
            support: Matrix::from_rows(&support),
            support_labels,
            query: Matrix::from_rows(&query),
            query_labels,
            way,
        }
    }

    fn arc_features(angles_deg: &[f64]) -> Vec<Vec<f64>> {
        angles_deg
            .iter()
            .map(|a| {
                let r = a.to_radians();
                normalize_features(&[r.cos(), r.sin()])
            })
            .collect()
    }

    #[test]
    fn lambda_selection_prefers_the_working_value() {
        // shrinkage changes only the weight magnitude on separable blobs, so
        // the episode here puts class 1 on a wide arc: a fitted boundary
        // splits the classes, while the heavy-shrinkage limit degenerates to
        // a class-mean rule that mislabels the near edge of the arc
        let support = arc_features(&[-10.0, -5.0, 0.0, 15.0, 60.0, 150.0]);
        let query = arc_features(&[-8.0, -3.0, 15.0, 20.0]);
        let episode = EpisodeFeatures {
            support: Matrix::from_rows(&support),
            support_labels: vec![0, 0, 0, 1, 1, 1],
            query: Matrix::from_rows(&query),
            query_labels: vec![0, 0, 1, 1],
            way: 2,
        };
        let episodes = [episode];
        let single = select_lambda(&episodes, &[0.01]).unwrap();
        assert_eq!(single.chosen_lambda, 0.01);
        let result = select_lambda(&episodes, &[0.01, 1e6]).unwrap();
        assert_eq!(result.chosen_lambda, 0.01);
        assert!(result.lambda_accuracy[0] > result.lambda_accuracy[1]);

        // equal-accuracy grid values resolve to the smaller lambda
        let mut stream = Stream::new(100);
        let blobs: Vec<EpisodeFeatures> =
            (0..4).map(|_| blob_episode(&mut stream, 3.0)).collect();
        let tied = select_lambda(&blobs, &[0.25, 0.3]).unwrap();
        assert_eq!(tied.lambda_accuracy[0], tied.lambda_accuracy[1]);
        assert_eq!(tied.chosen_lambda, 0.25);
        assert!(select_lambda(&blobs, &[]).is_err());
    }

    #[test]
    fn temperature_selection_on_calibrated_and_overconfident_models() {
        // calibrated: every prediction correct with near-certain confidence
        // at each grid temperature → all ECEs equal → tie rule picks T = 1
        let n = 40;
        let mut logits = Matrix::zeros(n, 2);
        let mut labels = Vec::new();
        for i in 0..n {
            logits[(i, 0)] = 4000.0;
            labels.push(0);
        }
        let pooled = PooledLogits { logits, labels };
        let partial = GridSearchResult {
            lambda_grid: vec![0.1],
            lambda_accuracy: vec![1.0],
            chosen_lambda: 0.1,
            temperature_grid: Vec::new(),
            temperature_ece: Vec::new(),
            chosen_temperature: 1.0,
        };
        let grid = default_temperature_grid();
        let done = select_temperature(&partial, &pooled, &grid, 15).unwrap();
        assert_eq!(done.chosen_temperature, 1.0);

        // overconfident: calibrated binary logits scaled by 5 → the search
        // should pick a large T to undo the scaling
        let mut stream = Stream::new(9);
        let n = 4000;
        let mut logits = Matrix::zeros(n, 2);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let margin = stream.uniform(-2.5, 2.5);
            let p1 = 1.0 / (1.0 + math::exp(-margin));
            let label = usize::from(stream.unit() < p1);
            logits[(i, 1)] = 5.0 * margin;
            labels.push(label);
        }
        let pooled = PooledLogits { logits, labels };
        let done = select_temperature(&partial, &pooled, &grid, 15).unwrap();
        assert!(
            (3.0..=5.0).contains(&done.chosen_temperature),
            "chose {}",
            done.chosen_temperature
        );
    }

    #[test]
    fn default_grids_have_documented_shape() {
        let lg = default_lambda_grid();
        assert_eq!(lg.len(), 11);
        assert!((lg[0] - 1e-3).abs() <= 1e-15);
        assert!((lg[10] - 1e2).abs() <= 1e-10);
        let tg = default_temperature_grid();
        assert_eq!(tg.len(), 19);
        assert_eq!(tg[0], 0.5);
        assert_eq!(tg[18], 5.0);
    }
}
