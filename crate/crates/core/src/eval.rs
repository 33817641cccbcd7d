//! Calibration, outlier-detection and error-curve analyses of prediction
//! ensembles.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::bayes::UncertaintySplit;
use crate::error::{Error, Result};
use crate::linalg::Sym2;

/// Smallest eigenvalue of Σ_pred accepted by [`standardize`].
pub const MIN_EIGENVALUE: f64 = 1e-12;
/// Minimum sample size of a calibration report.
pub const MIN_CALIBRATION_RECORDS: usize = 100;

/// `Σ^{-1/2}(y − μ̄)` with the symmetric root; `None` for a near-singular Σ.
pub fn standardize(mu_bar: [f64; 2], sigma_pred: &Sym2, target: [f64; 2]) -> Option<[f64; 2]> {
    let w = sigma_pred.inv_sqrt(MIN_EIGENVALUE)?;
    Some(w.apply([target[0] - mu_bar[0], target[1] - mu_bar[1]]))
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Survival function of the Kolmogorov distribution,
/// `Q(λ) = 2 Σ_{j≥1} (−1)^{j−1} exp(−2j²λ²)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Dual series, fast for small λ.
        let c = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let s: f64 = (1..=20)
            .map(|j| (-((2 * j - 1) as f64).powi(2) * c).exp())
            .sum();
        return (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0);
    }
    let mut s = 0.0;
    for j in 1..=100 {
        let t = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        s += if j % 2 == 1 { t } else { -t };
        if t < 1e-18 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov–Smirnov test against N(0, 1); returns the statistic
/// and its asymptotic p-value.
pub fn ks_standard_normal(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.is_empty() || samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract(
            "KS test needs a non-empty finite sample".into(),
        ));
    }
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let d = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = normal_cdf(v);
            ((i + 1) as f64 / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max);
    let sn = n.sqrt();
    Ok((d, kolmogorov_q((sn + 0.12 + 0.11 / sn) * d)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges spanning the observed range.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn histogram(values: &[f64], bins: usize) -> Histogram {
    let bins = bins.max(1);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() && hi > lo {
        (lo, hi)
    } else if lo.is_finite() {
        (lo - 0.5, lo + 0.5)
    } else {
        (0.0, 1.0)
    };
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    let mut counts = vec![0; bins];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Histogram { edges, counts }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentSummary {
    pub mean: f64,
    pub std: f64,
    pub ks_statistic: f64,
    pub ks_p_value: f64,
    pub histogram: Histogram,
}

fn summarize(values: &[f64], bins: usize) -> Result<ComponentSummary> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let (ks_statistic, ks_p_value) = ks_standard_normal(values)?;
    Ok(ComponentSummary {
        mean,
        std: var.sqrt(),
        ks_statistic,
        ks_p_value,
        histogram: histogram(values, bins),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    /// Records standardized.
    pub n: usize,
    /// Records dropped for a near-singular Σ_pred.
    pub excluded: usize,
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    pub components: [ComponentSummary; 2],
    /// Mean of tr Σ_epist / tr Σ_pred: how much of the predictive spread the
    /// calibration owes to the ensemble rather than to the individual MVNs.
    pub epistemic_share: f64,
}

pub fn calibration_report(
    splits: &[UncertaintySplit],
    targets: &[[f64; 2]],
    bins: usize,
) -> Result<CalibrationReport> {
    if splits.len() != targets.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} targets",
            splits.len(),
            targets.len()
        )));
    }
    let (mut z1, mut z2) = (Vec::new(), Vec::new());
    let mut share = 0.0;
    for (s, t) in splits.iter().zip(targets) {
        if let Some(z) = standardize(s.mu_bar, &s.sigma_pred, *t) {
            z1.push(z[0]);
            z2.push(z[1]);
            share += s.sigma_epist.trace() / s.sigma_pred.trace();
        }
    }
    if z1.len() < MIN_CALIBRATION_RECORDS {
        return Err(Error::Contract(format!(
            "calibration needs at least {MIN_CALIBRATION_RECORDS} usable records, got {}",
            z1.len()
        )));
    }
    let n = z1.len();
    let components = [summarize(&z1, bins)?, summarize(&z2, bins)?];
    Ok(CalibrationReport {
        n,
        excluded: splits.len() - n,
        z1,
        z2,
        components,
        epistemic_share: share / n as f64,
    })
}

/// Targets drawn from each record's own predictive MVN, `μ̄ + L n` with
/// `Σ_pred = L Lᵀ`; a perfectly calibrated model's labels look like this.
pub fn resample_targets(splits: &[UncertaintySplit], seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    splits
        .iter()
        .map(|s| {
            let n0: f64 = StandardNormal.sample(&mut rng);
            let n1: f64 = StandardNormal.sample(&mut rng);
            let c = &s.sigma_pred;
            let l11 = c.xx.max(0.0).sqrt();
            let l21 = if l11 > 0.0 { c.xy / l11 } else { 0.0 };
            let l22 = (c.yy - l21 * l21).max(0.0).sqrt();
            [s.mu_bar[0] + l11 * n0, s.mu_bar[1] + l21 * n0 + l22 * n1]
        })
        .collect()
}

/// Scalar uncertainty used to rank records as outliers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Score {
    Aleatoric,
    Epistemic,
    Predictive,
    AleatoricInverse,
}

impl Score {
    pub const ALL: [Score; 4] = [
        Score::Aleatoric,
        Score::Epistemic,
        Score::Predictive,
        Score::AleatoricInverse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Score::Aleatoric => "aleatoric",
            Score::Epistemic => "epistemic",
            Score::Predictive => "predictive",
            Score::AleatoricInverse => "aleatoric-inverse",
        }
    }

    /// Determinant-based score; the entropy is a monotone map of it, so
    /// rankings are the same.
    pub fn of(self, s: &UncertaintySplit) -> f64 {
        match self {
            Score::Aleatoric => s.u_aleat,
            Score::Epistemic => s.u_epist,
            Score::Predictive => s.u_pred,
            Score::AleatoricInverse => -s.u_aleat,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    /// Descending thresholds; the first point (0, 0) has no threshold.
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub auc: f64,
}

/// ROC of `scores` for the positive class `labels[i] == true`, thresholds
/// at every distinct score. The trapezoid area is accumulated as an integer
/// (twice the Mann–Whitney U, ties counted half), so the area of the negated
/// scores is exactly one minus this one.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<RocResult> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Contract("NaN score".into()));
    }
    let p = labels.iter().filter(|&&l| l).count() as u128;
    let n = labels.len() as u128 - p;
    if p == 0 || n == 0 {
        return Err(Error::Contract(
            "AUC is undefined unless both classes are present".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let (mut thresholds, mut fpr, mut tpr) = (vec![f64::INFINITY], vec![0.0], vec![0.0]);
    let (mut tp, mut fp, mut u2) = (0u128, 0u128, 0u128);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (mut tp_g, mut fp_g) = (0u128, 0u128);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp_g += 1;
            } else {
                fp_g += 1;
            }
            i += 1;
        }
        u2 += fp_g * (2 * tp + tp_g);
        tp += tp_g;
        fp += fp_g;
        thresholds.push(s);
        fpr.push(fp as f64 / n as f64);
        tpr.push(tp as f64 / p as f64);
    }
    let total = 2 * p * n;
    // Divide whichever of u2 and its complement is ≥ half, so that the
    // final subtraction from one is exact.
    let auc = if 2 * u2 >= total {
        u2 as f64 / total as f64
    } else {
        1.0 - (total - u2) as f64 / total as f64
    };
    thresholds[0] = f64::MAX;
    Ok(RocResult {
        thresholds,
        fpr,
        tpr,
        auc,
    })
}

/// Proportions `step, 2·step, …, 1`.
pub fn proportion_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::Config(format!(
            "eval.grid_step {step} outside (0, 1]"
        )));
    }
    let n = (1.0 / step).round() as usize;
    Ok((1..=n)
        .map(|i| if i == n { 1.0 } else { i as f64 * step })
        .collect())
}

/// `⌈pN⌉`, robust to the representation error of `p`.
pub fn prefix_len(p: f64, n: usize) -> usize {
    ((p * n as f64 - 1e-9).ceil() as usize).clamp(1, n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurve {
    /// Score name, or "oracle".
    pub sorted_by: String,
    pub grid: Vec<f64>,
    pub mean_error: Vec<f64>,
}

/// Mean error of the `⌈pN⌉` lowest-score records for each `p`; without
/// scores the records are sorted by error (the oracle).
///
/// Each prefix is summed in ascending error order, which makes the oracle a
/// pointwise lower bound in floating point too.
pub fn mean_error_curve(
    errors: &[f64],
    scores: Option<(&str, &[f64])>,
    grid: &[f64],
) -> Result<ErrorCurve> {
    if errors.is_empty() {
        return Err(Error::Contract("error curve of an empty set".into()));
    }
    if grid.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
        return Err(Error::Contract(
            "error-curve grid must lie in (0, 1]".into(),
        ));
    }
    let key = match scores {
        Some((_, s)) if s.len() != errors.len() => {
            return Err(Error::Contract(format!(
                "{} scores for {} errors",
                s.len(),
                errors.len()
            )))
        }
        Some((_, s)) => s,
        None => errors,
    };
    let mut order: Vec<usize> = (0..errors.len()).collect();
    order.sort_by(|&a, &b| key[a].total_cmp(&key[b]).then(a.cmp(&b)));
    let mean_error = grid
        .iter()
        .map(|&p| {
            let m = prefix_len(p, errors.len());
            let mut prefix: Vec<f64> = order[..m].iter().map(|&i| errors[i]).collect();
            prefix.sort_by(f64::total_cmp);
            prefix.iter().sum::<f64>() / m as f64
        })
        .collect();
    Ok(ErrorCurve {
        sorted_by: scores.map_or("oracle", |(name, _)| name).to_string(),
        grid: grid.to_vec(),
        mean_error,
    })
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn split(mu: [f64; 2], pred: Sym2) -> UncertaintySplit {
        UncertaintySplit {
            mu_bar: mu,
            sigma_aleat: pred,
            sigma_epist: Sym2::ZERO,
            sigma_pred: pred,
            u_aleat: pred.det(),
            u_epist: 0.0,
            u_pred: pred.det(),
        }
    }

    #[test]
    fn standardize_examples() {
        assert_eq!(
            standardize([0.1, 0.2], &Sym2::IDENTITY, [0.1, 0.2]),
            Some([0.0, 0.0])
        );
        let z = standardize([0.0, 0.0], &Sym2::diag(4.0, 1.0), [2.0, 1.0]).unwrap();
        assert!((z[0] - 1.0).abs() < 1e-15 && (z[1] - 1.0).abs() < 1e-15);
        let z = standardize([0.0, 0.0], &Sym2::IDENTITY, [0.3, -0.4]).unwrap();
        assert!((z[0] - 0.3).abs() < 1e-15 && (z[1] + 0.4).abs() < 1e-15);
        assert_eq!(
            standardize([0.0, 0.0], &Sym2::diag(1.0, 1e-13), [1.0, 1.0]),
            None
        );
    }

    #[test]
    fn kolmogorov_survival_values() {
        // Reference values of the limiting distribution.
        assert!((kolmogorov_q(1.36) - 0.0494).abs() < 2e-4);
        assert!((kolmogorov_q(1.63) - 0.0098).abs() < 2e-4);
        assert!((kolmogorov_q(0.5) - 0.9639).abs() < 2e-4);
        // The two series agree where they switch.
        let a = 1.0
            - (2.0 * std::f64::consts::PI).sqrt() / 1.18
                * (1..=20)
                    .map(|j| {
                        (-((2 * j - 1) as f64).powi(2) * std::f64::consts::PI.powi(2)
                            / (8.0 * 1.18 * 1.18))
                            .exp()
                    })
                    .sum::<f64>();
        assert!((a - kolmogorov_q(1.18)).abs() < 1e-12);
    }

    #[test]
    fn self_consistent_targets_are_calibrated() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let splits: Vec<UncertaintySplit> = (0..3000)
            .map(|_| {
                let a: f64 = rng.gen_range(0.01..0.2);
                let b: f64 = rng.gen_range(0.01..0.2);
                let r: f64 = rng.gen_range(-0.8..0.8);
                split(
                    [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)],
                    Sym2::new(a * a, r * a * b, b * b),
                )
            })
            .collect();
        let targets = resample_targets(&splits, 11);
        let rep = calibration_report(&splits, &targets, 30).unwrap();
        let tol = 3.0 / (rep.n as f64).sqrt();
        for c in &rep.components {
            assert!(c.mean.abs() < tol, "mean {}", c.mean);
            assert!((c.std - 1.0).abs() < tol, "std {}", c.std);
            assert!(c.ks_p_value > 0.01, "p {}", c.ks_p_value);
        }
        assert_eq!(rep.excluded, 0);
        assert_eq!(
            rep.components[0].histogram.counts.iter().sum::<usize>(),
            rep.n
        );
    }

    #[test]
    fn inflated_covariance_shows_underconfidence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth: Vec<UncertaintySplit> = (0..2000)
            .map(|_| split([0.0, 0.0], Sym2::diag(rng.gen_range(0.01..0.05), 0.02)))
            .collect();
        let targets = resample_targets(&truth, 6);
        let inflated: Vec<UncertaintySplit> = truth
            .iter()
            .map(|s| split(s.mu_bar, s.sigma_pred.scale(4.0)))
            .collect();
        let rep = calibration_report(&inflated, &targets, 20).unwrap();
        for c in &rep.components {
            assert!((c.std - 0.5).abs() < 0.03, "std {}", c.std);
        }
    }

    #[test]
    fn degenerate_residuals_fail_ks() {
        let splits = vec![split([0.1, 0.1], Sym2::IDENTITY); 200];
        let rep = calibration_report(&splits, &vec![[0.1, 0.1]; 200], 10).unwrap();
        assert!(rep
            .components
            .iter()
            .all(|c| c.ks_p_value < 1e-6 && c.std == 0.0));
        assert!(calibration_report(&splits[..50], &vec![[0.1, 0.1]; 50], 10).is_err());
    }

    #[test]
    fn roc_trivial_cases() {
        let labels = [false, false, true, true];
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &labels).unwrap().auc, 1.0);
        assert_eq!(roc_auc(&[0.5; 4], &labels).unwrap().auc, 0.5);
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
        let r = roc_auc(&[0.3, 0.1, 0.3, 0.9], &labels).unwrap();
        assert_eq!(r.fpr.first(), Some(&0.0));
        assert_eq!(r.tpr.last(), Some(&1.0));
        assert!(r.fpr.windows(2).all(|w| w[0] <= w[1]) && r.tpr.windows(2).all(|w| w[0] <= w[1]));
    }

    fn pair_count_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] && !labels[j] {
                    den += 1.0;
                    num += if si > sj {
                        1.0
                    } else if si == sj {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    #[test]
    fn roc_matches_pair_counting_with_flipped_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let labels: Vec<bool> = (0..1000).map(|i| i % 3 == 0).collect();
        let scores: Vec<f64> = labels
            .iter()
            .map(|&l| {
                if rng.gen_bool(0.1) {
                    !l as u8 as f64
                } else {
                    l as u8 as f64
                }
            })
            .collect();
        let auc = roc_auc(&scores, &labels).unwrap().auc;
        assert_eq!(auc, pair_count_auc(&scores, &labels));
    }

    #[test]
    fn error_curve_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let errors: Vec<f64> = (0..1000).map(|_| rng.gen_range(0.0..1.0)).collect();
        let grid = proportion_grid(0.01).unwrap();
        assert_eq!(grid.len(), 100);
        let oracle = mean_error_curve(&errors, None, &grid).unwrap();
        let same = mean_error_curve(&errors, Some(("self", &errors)), &grid).unwrap();
        assert_eq!(oracle.mean_error, same.mean_error);
        assert!(oracle.mean_error.windows(2).all(|w| w[0] <= w[1]));
        let neg: Vec<f64> = errors.iter().map(|e| -e).collect();
        let anti = mean_error_curve(&errors, Some(("anti", &neg)), &grid).unwrap();
        assert!(anti.mean_error[0] > 0.98);
        let random: Vec<f64> = (0..1000).map(|_| rng.gen()).collect();
        let r = mean_error_curve(&errors, Some(("random", &random)), &grid).unwrap();
        assert_eq!(r.mean_error[99], oracle.mean_error[99]);
        assert!(mean_error_curve(&[], None, &grid).is_err());
    }

    #[test]
    fn prefix_length_is_ceiling() {
        assert_eq!(prefix_len(0.07, 100), 7);
        assert_eq!(prefix_len(0.071, 100), 8);
        assert_eq!(prefix_len(0.001, 100), 1);
        assert_eq!(prefix_len(1.0, 37), 37);
    }

    #[test]
    fn histogram_covers_range() {
        let h = histogram(&[0.0, 1.0, 2.0, 2.0], 4);
        assert_eq!(h.edges, vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        assert_eq!(h.counts, vec![1, 0, 1, 2]);
        assert_eq!(histogram(&[3.0; 5], 2).counts.iter().sum::<usize>(), 5);
    }

    proptest! {
        #[test]
        fn auc_complement_is_exact(scores in prop::collection::vec(-3.0f64..3.0, 2..200), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut labels: Vec<bool> = scores.iter().map(|_| rng.gen()).collect();
            labels[0] = true;
            labels[1] = false;
            let rounded: Vec<f64> = scores.iter().map(|s| (s * 4.0).round() / 4.0).collect();
            let neg: Vec<f64> = rounded.iter().map(|s| -s).collect();
            let a = roc_auc(&rounded, &labels).unwrap().auc;
            let b = roc_auc(&neg, &labels).unwrap().auc;
            prop_assert_eq!(b, 1.0 - a);
            prop_assert_eq!(a, 1.0 - b);
        }

        #[test]
        fn trapezoid_matches_pair_count(scores in prop::collection::vec(-3.0f64..3.0, 2..150), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut labels: Vec<bool> = scores.iter().map(|_| rng.gen()).collect();
            labels[0] = true;
            labels[1] = false;
            let a = roc_auc(&scores, &labels).unwrap().auc;
            prop_assert!((a - pair_count_auc(&scores, &labels)).abs() < 1e-12);
        }

        #[test]
        fn oracle_dominates_every_sort(errors in prop::collection::vec(0.0f64..2.0, 1..300), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scores: Vec<f64> = errors.iter().map(|_| rng.gen()).collect();
            let grid = proportion_grid(0.01).unwrap();
            let oracle = mean_error_curve(&errors, None, &grid).unwrap();
            let c = mean_error_curve(&errors, Some(("s", &scores)), &grid).unwrap();
            for (o, v) in oracle.mean_error.iter().zip(&c.mean_error) {
                prop_assert!(v >= o);
            }
        }

        #[test]
        fn standardized_norm_is_rotation_invariant(
            a in 0.01f64..1.0, b in 0.01f64..1.0, r in -0.9f64..0.9,
            dy in prop::array::uniform2(-1.0f64..1.0), angle in -3.2f64..3.2,
        ) {
            let s = Sym2::new(a * a, r * a * b, b * b);
            let z = standardize([0.0, 0.0], &s, dy).unwrap();
            let (sn, cs) = angle.sin_cos();
            let rot = |v: [f64; 2]| [cs * v[0] - sn * v[1], sn * v[0] + cs * v[1]];
            let mu = [0.2, -0.1];
            let y = rot(dy);
            let zr = standardize(rot(mu), &s.rotated(angle), [y[0] + rot(mu)[0], y[1] + rot(mu)[1]]).unwrap();
            let n0 = z[0].hypot(z[1]);
            let n1 = zr[0].hypot(zr[1]);
            prop_assert!((n0 - n1).abs() < 1e-9 * (1.0 + n0));
        }
    }
}
