//! Evaluation and analysis: calibration metrics (ECE, MCE, Brier) with
//! reliability bins, singular-value spectra with an entropy-style
//! effective-rank metric, and episode-accuracy aggregation.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{sym_eigenvalues, Matrix};
use crate::math;
use crate::{CoreError, Result};

/// Default number of equal-width confidence bins.
pub const DEFAULT_BINS: usize = 15;

fn check_population(n: usize) -> Result<()> {
    if n == 0 {
        return Err(CoreError::Data(
            "calibration metrics need at least one prediction".into(),
        ));
    }
    Ok(())
}

/// Bin index of a confidence under B equal-width bins over [0,1]; the
/// boundary value 1.0 belongs to the top bin.
#[inline]
fn bin_of(confidence: f64, bins: usize) -> usize {
    let idx = math::floor(confidence * bins as f64) as usize;
    idx.min(bins - 1)
}

struct BinTally {
    count: Vec<usize>,
    conf_sum: Vec<f64>,
    correct_sum: Vec<usize>,
}

fn tally(confidences: &[f64], correct: &[bool], bins: usize) -> Result<BinTally> {
    check_population(confidences.len())?;
    if confidences.len() != correct.len() {
        return Err(CoreError::DimensionMismatch(
            "confidence and correctness lengths differ".into(),
        ));
    }
    if bins == 0 {
        return Err(CoreError::InvalidArgument("bin count must be ≥ 1".into()));
    }
    if confidences.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
        return Err(CoreError::InvalidArgument(
            "confidences must lie in [0, 1]".into(),
        ));
    }
    let mut t = BinTally {
        count: vec![0; bins],
        conf_sum: vec![0.0; bins],
        correct_sum: vec![0; bins],
    };
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = bin_of(c, bins);
        t.count[b] += 1;
        t.conf_sum[b] += c;
        t.correct_sum[b] += usize::from(ok);
    }
    Ok(t)
}

/// Expected calibration error: Σ_b (n_b/N)·|acc_b − conf_b| over non-empty
/// equal-width bins, with confidence = max-class probability.
pub fn ece(confidences: &[f64], correct: &[bool], bins: usize) -> Result<f64> {
    let t = tally(confidences, correct, bins)?;
    let n = confidences.len() as f64;
    let mut total = 0.0;
    for b in 0..bins {
        if t.count[b] == 0 {
            continue;
        }
        let nb = t.count[b] as f64;
        let acc = t.correct_sum[b] as f64 / nb;
        let conf = t.conf_sum[b] / nb;
        total += nb / n * (acc - conf).abs();
    }
    Ok(total)
}

/// Maximum calibration error: the largest |acc_b − conf_b| over non-empty bins.
pub fn mce(confidences: &[f64], correct: &[bool], bins: usize) -> Result<f64> {
    let t = tally(confidences, correct, bins)?;
    let mut worst = 0.0f64;
    for b in 0..bins {
        if t.count[b] == 0 {
            continue;
        }
        let nb = t.count[b] as f64;
        let acc = t.correct_sum[b] as f64 / nb;
        let conf = t.conf_sum[b] / nb;
        worst = worst.max((acc - conf).abs());
    }
    Ok(worst)
}

/// Multi-class Brier score: mean over samples of Σ_c (p_c − y_c)² against
/// one-hot labels.
pub fn brier(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    check_population(probs.rows())?;
    if probs.rows() != labels.len() {
        return Err(CoreError::DimensionMismatch(
            "probability rows and label count differ".into(),
        ));
    }
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        if label >= probs.cols() {
            return Err(CoreError::Data(
                "label out of range for probability vector".into(),
            ));
        }
        for (c, &p) in probs.row(i).iter().enumerate() {
            let y = if c == label { 1.0 } else { 0.0 };
            total += (p - y) * (p - y);
        }
    }
    Ok(total / probs.rows() as f64)
}

/// Per-bin reliability statistics plus the three scalar metrics for one
/// prediction population. Empty bins keep zero confidence/accuracy and a
/// zero count.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub bin_edges: Vec<f64>,
    pub bin_confidence: Vec<f64>,
    pub bin_accuracy: Vec<f64>,
    pub bin_count: Vec<usize>,
    pub ece: f64,
    pub mce: f64,
    pub brier: f64,
    pub sample_count: usize,
}

/// Builds the reliability report from full probability vectors: confidence
/// is the max-class probability, correctness compares argmax to the label.
pub fn reliability_bins(probs: &Matrix, labels: &[usize], bins: usize) -> Result<CalibrationReport> {
    check_population(probs.rows())?;
    let mut confidences = Vec::with_capacity(probs.rows());
    let mut correct = Vec::with_capacity(probs.rows());
    for (i, &label) in labels.iter().enumerate() {
        let row = probs.row(i);
        let mut best = 0;
        for (c, &p) in row.iter().enumerate().skip(1) {
            if p > row[best] {
                best = c;
            }
        }
        confidences.push(row[best]);
        correct.push(best == label);
    }
    let t = tally(&confidences, &correct, bins)?;
    let mut bin_confidence = vec![0.0; bins];
    let mut bin_accuracy = vec![0.0; bins];
    for b in 0..bins {
        if t.count[b] > 0 {
            bin_confidence[b] = t.conf_sum[b] / t.count[b] as f64;
            bin_accuracy[b] = t.correct_sum[b] as f64 / t.count[b] as f64;
        }
    }
    Ok(CalibrationReport {
        bin_edges: (0..=bins).map(|b| b as f64 / bins as f64).collect(),
        bin_confidence,
        bin_accuracy,
        bin_count: t.count,
        ece: ece(&confidences, &correct, bins)?,
        mce: mce(&confidences, &correct, bins)?,
        brier: brier(probs, labels)?,
        sample_count: probs.rows(),
    })
}

/// Singular-value summary of a feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    /// Singular values, descending.
    pub singular_values: Vec<f64>,
    /// σ_i / σ_max (all zero for a degenerate matrix).
    pub normalized: Vec<f64>,
    /// −Σ σ̄_i·ln σ̄_i with 0·ln 0 = 0; larger means a flatter spectrum.
    pub effective_rank_metric: f64,
    /// Share of Σσ² captured by the top i+1 values.
    pub cumulative_energy: Vec<f64>,
    /// Set when every singular value is zero.
    pub degenerate: bool,
}

/// Singular values of Φ through an eigendecomposition of the smaller Gram
/// matrix (eigenvalues clamped at zero before the square root), without
/// mean-centering.
pub fn spectrum(phi: &Matrix) -> Result<SpectrumReport> {
    spectrum_with_options(phi, false)
}

pub fn spectrum_with_options(phi: &Matrix, center_columns: bool) -> Result<SpectrumReport> {
    if phi.rows() == 0 || phi.cols() == 0 {
        return Err(CoreError::InvalidArgument(
            "spectrum needs a non-empty matrix".into(),
        ));
    }
    let owned;
    let phi = if center_columns {
        let mut centered = phi.clone();
        for j in 0..centered.cols() {
            let mean: f64 =
                (0..centered.rows()).map(|i| centered[(i, j)]).sum::<f64>() / centered.rows() as f64;
            for i in 0..centered.rows() {
                centered[(i, j)] -= mean;
            }
        }
        owned = centered;
        &owned
    } else {
        phi
    };
    let gram = if phi.rows() <= phi.cols() {
        phi.gram_rows()
    } else {
        phi.gram_cols()
    };
    let evals = sym_eigenvalues(&gram)?;
    let singular_values: Vec<f64> = evals
        .iter()
        .map(|&e| math::sqrt(e.max(0.0)))
        .collect();
    let sigma_max = singular_values.first().copied().unwrap_or(0.0);
    let degenerate = sigma_max <= 0.0;
    let normalized: Vec<f64> = if degenerate {
        vec![0.0; singular_values.len()]
    } else {
        singular_values.iter().map(|&s| s / sigma_max).collect()
    };
    let metric = normalized
        .iter()
        .map(|&s| if s > 0.0 { -s * math::ln(s) } else { 0.0 })
        .sum();
    let energy_total: f64 = singular_values.iter().map(|&s| s * s).sum();
    let mut cumulative_energy = Vec::with_capacity(singular_values.len());
    let mut acc = 0.0;
    for &s in &singular_values {
        acc += s * s;
        cumulative_energy.push(if energy_total > 0.0 {
            acc / energy_total
        } else {
            0.0
        });
    }
    Ok(SpectrumReport {
        singular_values,
        normalized,
        effective_rank_metric: metric,
        cumulative_energy,
        degenerate,
    })
}

/// Accuracy summary of one evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run: usize,
    pub episodes: usize,
    pub mean: f64,
    /// Normal-approximation half-width 1.96·s/√n (sample standard
    /// deviation); zero when fewer than two episodes.
    pub ci95: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyTable {
    pub per_run: Vec<RunSummary>,
    /// Per-run episode accuracies in evaluation order.
    pub accuracies: Vec<Vec<f64>>,
    pub pooled_mean: f64,
    pub pooled_ci95: f64,
}

fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * math::sqrt(var / n))
}

/// Runs the episode evaluator `runs × episodes_per_run` times and
/// aggregates per-run and pooled accuracy with 95% confidence half-widths.
/// The evaluator receives (run, episode) indices and returns that episode's
/// query accuracy.
pub fn eval_episodes<F>(
    runs: usize,
    episodes_per_run: usize,
    mut episode_accuracy: F,
) -> Result<AccuracyTable>
where
    F: FnMut(usize, usize) -> Result<f64>,
{
    if runs == 0 || episodes_per_run == 0 {
        return Err(CoreError::InvalidArgument(
            "runs and episodes per run must be ≥ 1".into(),
        ));
    }
    let mut accuracies = Vec::with_capacity(runs);
    let mut per_run = Vec::with_capacity(runs);
    let mut pooled = Vec::with_capacity(runs * episodes_per_run);
    for run in 0..runs {
        let mut vals = Vec::with_capacity(episodes_per_run);
        for episode in 0..episodes_per_run {
            let acc = episode_accuracy(run, episode)?;
            vals.push(acc);
            pooled.push(acc);
        }
        let (mean, ci95) = mean_ci(&vals);
        per_run.push(RunSummary {
            run,
            episodes: episodes_per_run,
            mean,
            ci95,
        });
        accuracies.push(vals);
    }
    let (pooled_mean, pooled_ci95) = mean_ci(&pooled);
    Ok(AccuracyTable {
        per_run,
        accuracies,
        pooled_mean,
        pooled_ci95,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    #[test]
    fn ece_trivial_cases() {
        let conf = vec![1.0; 6];
        assert_eq!(ece(&conf, &[true; 6], 15).unwrap(), 0.0);
        assert_eq!(ece(&conf, &[false; 6], 15).unwrap(), 1.0);
        assert!(ece(&[], &[], 15).is_err());
    }

    #[test]
    fn ece_matches_hand_tally() {
        // two bins: (0.3, hit), (0.4, miss) in bin 0; (0.9, hit), (0.8, miss) in bin 1
        let conf = [0.3, 0.4, 0.9, 0.8];
        let ok = [true, false, true, false];
        // bin 0: acc 0.5, conf 0.35 → |0.15|·(2/4); bin 1: acc 0.5, conf 0.85 → |0.35|·(2/4)
        let want = 0.5 * 0.15 + 0.5 * 0.35;
        assert!((ece(&conf, &ok, 2).unwrap() - want).abs() <= 1e-15);
        let want_mce = 0.35;
        assert!((mce(&conf, &ok, 2).unwrap() - want_mce).abs() <= 1e-15);
    }

    #[test]
    fn boundary_confidence_goes_to_top_bin() {
        // a lone 1.0-confidence hit: top bin perfectly calibrated
        let report = reliability_binned_from(&[1.0], &[true], 10);
        assert_eq!(report.bin_count[9], 1);
        assert_eq!(report.bin_count[..9].iter().sum::<usize>(), 0);
    }

    fn reliability_binned_from(conf: &[f64], ok: &[bool], bins: usize) -> CalibrationReport {
        // builds a degenerate two-class probability matrix realizing the
        // requested confidences/correctness
        let mut probs = Matrix::zeros(conf.len(), 2);
        let mut labels = Vec::new();
        for (i, (&c, &hit)) in conf.iter().zip(ok).enumerate() {
            probs[(i, 0)] = c;
            probs[(i, 1)] = 1.0 - c;
            labels.push(usize::from(!hit));
        }
        reliability_bins(&probs, &labels, bins).unwrap()
    }

    #[test]
    fn mce_dominates_ece() {
        let mut stream = Stream::new(77);
        for _ in 0..50 {
            let n = 1 + stream.below(40) as usize;
            let conf: Vec<f64> = (0..n).map(|_| stream.unit()).collect();
            let ok: Vec<bool> = (0..n).map(|_| stream.unit() < 0.5).collect();
            let e = ece(&conf, &ok, 15).unwrap();
            let m = mce(&conf, &ok, 15).unwrap();
            assert!(m >= e - 1e-15);
        }
    }

    #[test]
    fn mce_picks_the_single_bad_bin() {
        // bin 0 exactly calibrated (conf 0.4, acc 2/5), bin 1 off by 0.3
        // (conf 0.8, acc 0.5)
        let conf = [0.4, 0.4, 0.4, 0.4, 0.4, 0.8, 0.8];
        let ok = [true, true, false, false, false, true, false];
        assert!((mce(&conf, &ok, 2).unwrap() - 0.3).abs() <= 1e-15);
        // two-bin perfectly calibrated population → MCE 0
        let conf = [0.4, 0.4, 0.4, 0.4, 0.4, 0.75, 0.75, 0.75, 0.75];
        let ok = [
            true, true, false, false, false, true, true, true, false,
        ];
        assert!(mce(&conf, &ok, 2).unwrap() <= 1e-15);
    }

    #[test]
    fn brier_cases() {
        let mut exact = Matrix::zeros(3, 4);
        exact[(0, 1)] = 1.0;
        exact[(1, 0)] = 1.0;
        exact[(2, 3)] = 1.0;
        assert_eq!(brier(&exact, &[1, 0, 3]).unwrap(), 0.0);
        let uniform = Matrix::from_vec(1, 2, vec![0.5, 0.5]);
        assert_eq!(brier(&uniform, &[0]).unwrap(), 0.5);
        // loop oracle on a random batch
        let mut stream = Stream::new(5);
        let n = 20;
        let k = 3;
        let mut probs = Matrix::zeros(n, k);
        let mut labels = Vec::new();
        for i in 0..n {
            let mut total = 0.0;
            for c in 0..k {
                probs[(i, c)] = stream.unit();
                total += probs[(i, c)];
            }
            for c in 0..k {
                probs[(i, c)] /= total;
            }
            labels.push(stream.below(k as u64) as usize);
        }
        let got = brier(&probs, &labels).unwrap();
        let mut want = 0.0;
        for i in 0..n {
            for c in 0..k {
                let y = if c == labels[i] { 1.0 } else { 0.0 };
                want += (probs[(i, c)] - y) * (probs[(i, c)] - y);
            }
        }
        want /= n as f64;
        assert!((got - want).abs() <= 1e-12);
    }

    #[test]
    fn calibration_metrics_are_permutation_invariant() {
        let mut stream = Stream::new(11);
        let n = 60;
        let conf: Vec<f64> = (0..n).map(|_| stream.unit()).collect();
        let ok: Vec<bool> = (0..n).map(|_| stream.unit() < 0.6).collect();
        let e0 = ece(&conf, &ok, 15).unwrap();
        let m0 = mce(&conf, &ok, 15).unwrap();
        let mut idx: Vec<usize> = (0..n).collect();
        stream.shuffle(&mut idx);
        let conf_p: Vec<f64> = idx.iter().map(|&i| conf[i]).collect();
        let ok_p: Vec<bool> = idx.iter().map(|&i| ok[i]).collect();
        assert_eq!(e0, ece(&conf_p, &ok_p, 15).unwrap());
        assert_eq!(m0, mce(&conf_p, &ok_p, 15).unwrap());
    }

    #[test]
    fn reliability_report_counts_cover_population() {
        let mut stream = Stream::new(3);
        let n = 40;
        let mut probs = Matrix::zeros(n, 3);
        let mut labels = Vec::new();
        for i in 0..n {
            let mut total = 0.0;
            for c in 0..3 {
                probs[(i, c)] = stream.unit();
                total += probs[(i, c)];
            }
            for c in 0..3 {
                probs[(i, c)] /= total;
            }
            labels.push(stream.below(3) as usize);
        }
        let report = reliability_bins(&probs, &labels, 15).unwrap();
        assert_eq!(report.bin_count.iter().sum::<usize>(), n);
        assert_eq!(report.sample_count, n);
        assert_eq!(report.bin_edges.len(), 16);
        assert!(report.ece >= 0.0 && report.ece <= 1.0);
        assert!(report.mce >= report.ece - 1e-15);
    }

    #[test]
    fn spectrum_flat_and_two_value_cases() {
        // orthonormal rows scaled identically: all σ equal → metric 0
        let mut phi = Matrix::zeros(2, 4);
        phi[(0, 0)] = 2.0;
        phi[(1, 2)] = 2.0;
        let report = spectrum(&phi).unwrap();
        assert_eq!(report.singular_values.len(), 2);
        assert!((report.singular_values[0] - 2.0).abs() <= 1e-12);
        assert!((report.singular_values[1] - 2.0).abs() <= 1e-12);
        assert!(report.effective_rank_metric.abs() <= 1e-12);
        assert!(!report.degenerate);

        // spectrum {1, e⁻¹} → metric e⁻¹
        let e_inv = math::exp(-1.0);
        let mut phi = Matrix::zeros(2, 2);
        phi[(0, 0)] = 1.0;
        phi[(1, 1)] = e_inv;
        let report = spectrum(&phi).unwrap();
        assert!((report.effective_rank_metric - e_inv).abs() <= 1e-12);
        assert!((report.normalized[0] - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn zero_matrix_is_degenerate() {
        let report = spectrum(&Matrix::zeros(3, 2)).unwrap();
        assert!(report.degenerate);
        assert!(report.singular_values.iter().all(|&s| s == 0.0));
        assert_eq!(report.effective_rank_metric, 0.0);
        assert!(report.cumulative_energy.iter().all(|&c| c == 0.0));
    }

    // One-sided Jacobi SVD: orthogonalizes columns by plane rotations; the
    // singular values are the resulting column norms.
    fn jacobi_svd_oracle(a: &Matrix) -> Vec<f64> {
        let n = a.rows();
        let p = a.cols();
        let mut u = a.clone();
        for _ in 0..60 {
            let mut off = 0.0f64;
            for i in 0..p {
                for j in i + 1..p {
                    let mut aii = 0.0;
                    let mut ajj = 0.0;
                    let mut aij = 0.0;
                    for r in 0..n {
                        aii += u[(r, i)] * u[(r, i)];
                        ajj += u[(r, j)] * u[(r, j)];
                        aij += u[(r, i)] * u[(r, j)];
                    }
                    off = off.max(aij.abs() / (math::sqrt(aii * ajj) + 1e-300));
                    if aij.abs() <= 1e-14 * math::sqrt(aii * ajj) {
                        continue;
                    }
                    let tau = (ajj - aii) / (2.0 * aij);
                    let t = if tau >= 0.0 {
                        1.0 / (tau + math::sqrt(1.0 + tau * tau))
                    } else {
                        -1.0 / (-tau + math::sqrt(1.0 + tau * tau))
                    };
                    let c = 1.0 / math::sqrt(1.0 + t * t);
                    let s = c * t;
                    for r in 0..n {
                        let ui = u[(r, i)];
                        let uj = u[(r, j)];
                        u[(r, i)] = c * ui - s * uj;
                        u[(r, j)] = s * ui + c * uj;
                    }
                }
            }
            if off <= 1e-15 {
                break;
            }
        }
        let mut svs: Vec<f64> = (0..p)
            .map(|j| math::sqrt((0..n).map(|r| u[(r, j)] * u[(r, j)]).sum::<f64>()))
            .collect();
        svs.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap());
        svs
    }

    #[test]
    fn spectrum_matches_one_sided_jacobi_oracle() {
        let mut stream = Stream::new(41);
        let mut phi = Matrix::zeros(20, 8);
        for v in phi.as_mut_slice() {
            *v = stream.normal();
        }
        let report = spectrum(&phi).unwrap();
        let want = jacobi_svd_oracle(&phi);
        assert_eq!(report.singular_values.len(), 8);
        for (got, want) in report.singular_values.iter().zip(&want) {
            assert!((got - want).abs() <= 1e-9, "{got} vs {want}");
        }
        // descending order
        for w in report.singular_values.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn spectrum_is_scale_invariant_after_normalization() {
        let mut stream = Stream::new(43);
        let mut phi = Matrix::zeros(10, 5);
        for v in phi.as_mut_slice() {
            *v = stream.normal();
        }
        let base = spectrum(&phi).unwrap();
        let mut scaled = phi.clone();
        for v in scaled.as_mut_slice() {
            *v *= 7.5;
        }
        let big = spectrum(&scaled).unwrap();
        for (a, b) in base.normalized.iter().zip(&big.normalized) {
            assert!((a - b).abs() <= 1e-9);
        }
        assert!((base.effective_rank_metric - big.effective_rank_metric).abs() <= 1e-9);
    }

    #[test]
    fn episode_aggregation() {
        // perfectly separable: accuracy 1, zero CI width
        let table = eval_episodes(2, 5, |_, _| Ok(1.0)).unwrap();
        assert_eq!(table.pooled_mean, 1.0);
        assert_eq!(table.pooled_ci95, 0.0);
        for run in &table.per_run {
            assert_eq!(run.mean, 1.0);
            assert_eq!(run.ci95, 0.0);
        }

        // coin-flip 5-way classifier: accuracy near 0.2
        let mut stream = Stream::new(29);
        let table = eval_episodes(5, 600, |_, _| {
            let correct = (0..75).filter(|_| stream.below(5) == 0).count();
            Ok(correct as f64 / 75.0)
        })
        .unwrap();
        assert_eq!(table.accuracies.len(), 5);
        assert_eq!(table.accuracies[0].len(), 600);
        // binomial: se of the pooled mean ≈ sqrt(0.2·0.8/(3000·75)) ≈ 8.4e-4
        assert!((table.pooled_mean - 0.2).abs() <= 3.0 * 8.5e-4);
        assert!(table.pooled_ci95 > 0.0);
    }
}
