//! Monte-Carlo dropout posterior sampling and the aleatoric/epistemic split
//! of the posterior-predictive mixture.

use std::f64::consts::{E, PI};

use galbnn_nn::{derive_seed, Mode, Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Sym2;
use crate::model::{head_to_mvn, HeadKind, MvnPrediction, ShapeNet};

/// Clamp applied to slightly negative epistemic determinants.
pub const DET_CLAMP: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct McEnsemble {
    pub samples: Vec<MvnPrediction>,
    pub seeds: Vec<u64>,
}

impl McEnsemble {
    pub fn k(&self) -> usize {
        self.samples.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySplit {
    pub mu_bar: [f64; 2],
    pub sigma_aleat: Sym2,
    pub sigma_epist: Sym2,
    pub sigma_pred: Sym2,
    pub u_aleat: f64,
    pub u_epist: f64,
    pub u_pred: f64,
}

/// Dropout seed of MC sample `k`.
pub fn sample_seed(base_seed: u64, k: usize) -> u64 {
    derive_seed(base_seed, &[k as u64])
}

/// Draws `k` MC-dropout predictions for each stamp.
///
/// The trunk has no dropout, so it runs once per stamp in eval mode; the
/// head then runs on `k` copies of the features, row `j` of stamp `i`
/// using seed `sample_seed(base_seeds[i], j)`.
pub fn sample_ensembles<T: Scalar, P: AsRef<[f32]>>(
    model: &mut ShapeNet<T>,
    stamps: &[P],
    k: usize,
    base_seeds: &[u64],
) -> Result<Vec<McEnsemble>> {
    if model.head() != HeadKind::MvnNll {
        return Err(Error::Contract("MC sampling requires an MVN head".into()));
    }
    if k == 0 {
        return Err(Error::Contract("need at least one MC sample".into()));
    }
    if stamps.len() != base_seeds.len() {
        return Err(Error::Contract("one base seed per stamp required".into()));
    }
    if stamps.is_empty() {
        return Ok(Vec::new());
    }
    let x = model.input_batch(stamps)?;
    let trunk = model.trunk(x, &Mode::Eval)?;
    let per_stamp = trunk.row_len() * crate::model::VIEWS;
    let mut rows = Vec::with_capacity(stamps.len() * k * per_stamp);
    let mut seeds = Vec::with_capacity(stamps.len() * k);
    for (i, feat) in trunk.data().chunks_exact(per_stamp).enumerate() {
        for j in 0..k {
            rows.extend_from_slice(feat);
            seeds.push(sample_seed(base_seeds[i], j));
        }
    }
    let mut shape = trunk.shape().to_vec();
    shape[0] = stamps.len() * k * crate::model::VIEWS;
    let replicated = Tensor::new(shape, rows)?;
    let floor = model.arch().sigma_floor;
    let out = match model.head_forward(replicated, &Mode::McDropout { row_seeds: &seeds }) {
        Ok(o) => o,
        Err(Error::Nn(e)) => {
            return Err(Error::Inference {
                sample: 0,
                reason: format!("non-finite head activations: {e}"),
            })
        }
        Err(e) => return Err(e),
    };
    let raws: Vec<[f64; 5]> = out
        .data()
        .chunks_exact(5)
        .map(|r| std::array::from_fn(|i| r[i].as_f64()))
        .collect();
    let mut ensembles = Vec::with_capacity(stamps.len());
    for (chunk, seed_chunk) in raws.chunks_exact(k).zip(seeds.chunks_exact(k)) {
        let samples = chunk
            .iter()
            .enumerate()
            .map(|(j, raw)| {
                head_to_mvn(*raw, floor).map_err(|e| match e {
                    Error::Inference { reason, .. } => Error::Inference { sample: j, reason },
                    other => other,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ensembles.push(McEnsemble {
            samples,
            seeds: seed_chunk.to_vec(),
        });
    }
    Ok(ensembles)
}

/// MC ensemble of a single stamp.
pub fn sample_ensemble<T: Scalar>(
    model: &mut ShapeNet<T>,
    stamp: &[f32],
    k: usize,
    base_seed: u64,
) -> Result<McEnsemble> {
    Ok(sample_ensembles(model, &[stamp], k, &[base_seed])?.remove(0))
}

/// Determinant with tiny negative values (round-off of a singular PSD
/// matrix) clamped to zero.
pub fn clamped_det(m: &Sym2) -> f64 {
    let d = m.det();
    if d < 0.0 && d > -DET_CLAMP {
        0.0
    } else {
        d
    }
}

/// Mixture moments of an ensemble: the mean of the covariances, the `1/K`
/// covariance of the means, and their sum.
pub fn decompose(ens: &McEnsemble) -> Result<UncertaintySplit> {
    let k = ens.samples.len();
    if k < 2 {
        return Err(Error::Contract(format!(
            "decomposition requires K >= 2 MC samples, got {k}"
        )));
    }
    let kf = k as f64;
    // Means are accumulated relative to the first sample, which keeps the
    // spread exact (zero) for identical samples.
    let origin = ens.samples[0].mu;
    let mut shift = [0.0; 2];
    let mut aleat = Sym2::ZERO;
    for s in &ens.samples {
        shift[0] += s.mu[0] - origin[0];
        shift[1] += s.mu[1] - origin[1];
        aleat = aleat.add(&s.cov);
    }
    let shift = [shift[0] / kf, shift[1] / kf];
    let mu_bar = [origin[0] + shift[0], origin[1] + shift[1]];
    let aleat = aleat.scale(1.0 / kf);
    let mut epist = Sym2::ZERO;
    for s in &ens.samples {
        let d = [
            s.mu[0] - origin[0] - shift[0],
            s.mu[1] - origin[1] - shift[1],
        ];
        epist = epist.add(&Sym2::outer(d));
    }
    let epist = epist.scale(1.0 / kf);
    let pred = aleat.add(&epist);
    Ok(UncertaintySplit {
        mu_bar,
        sigma_aleat: aleat,
        sigma_epist: epist,
        sigma_pred: pred,
        u_aleat: clamped_det(&aleat),
        u_epist: clamped_det(&epist),
        u_pred: clamped_det(&pred),
    })
}

/// Differential entropy of a bivariate normal, `ln sqrt((2πe)² det Σ)`.
pub fn entropy(det: f64) -> f64 {
    (2.0 * PI * E).ln() + 0.5 * det.ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarUncertainties {
    pub u_aleat: f64,
    pub u_epist: f64,
    pub u_pred: f64,
    pub h_aleat: f64,
    pub h_epist: f64,
    pub h_pred: f64,
}

pub fn scalar_uncertainties(split: &UncertaintySplit) -> ScalarUncertainties {
    ScalarUncertainties {
        u_aleat: split.u_aleat,
        u_epist: split.u_epist,
        u_pred: split.u_pred,
        h_aleat: entropy(split.u_aleat),
        h_epist: entropy(split.u_epist),
        h_pred: entropy(split.u_pred),
    }
}

/// Ellipse `{x : (x−c)ᵀΣ⁻¹(x−c) ≤ χ²₂(level)}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceEllipse {
    pub center: [f64; 2],
    pub semi_major: f64,
    pub semi_minor: f64,
    /// Direction of the major axis, radians.
    pub angle: f64,
}

impl ConfidenceEllipse {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (p[0] - self.center[0], p[1] - self.center[1]);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.semi_major).powi(2) + (v / self.semi_minor).powi(2) <= 1.0
    }
}

/// Quantile of the χ² distribution with two degrees of freedom.
pub fn chi2_2dof_quantile(level: f64) -> f64 {
    -2.0 * (-level).ln_1p()
}

pub fn confidence_ellipse(
    matrix: &Sym2,
    center: [f64; 2],
    level: f64,
) -> Result<ConfidenceEllipse> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!(
            "confidence level {level} outside (0, 1)"
        )));
    }
    let e = matrix.eigen();
    if !(e.minor > 0.0) || !matrix.is_finite() {
        return Err(Error::Domain(format!(
            "matrix {matrix:?} is not positive definite"
        )));
    }
    let m = chi2_2dof_quantile(level);
    Ok(ConfidenceEllipse {
        center,
        semi_major: (e.major * m).sqrt(),
        semi_minor: (e.minor * m).sqrt(),
        angle: e.angle,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ArchitectureConfig;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn pred(mu: [f64; 2], cov: Sym2) -> MvnPrediction {
        MvnPrediction {
            mu,
            cov,
            raw: [0.0; 5],
        }
    }

    fn ens(samples: Vec<MvnPrediction>) -> McEnsemble {
        let seeds = (0..samples.len() as u64).collect();
        McEnsemble { samples, seeds }
    }

    #[test]
    fn identical_samples_have_no_epistemic_part() {
        let s = pred([0.1, -0.2], Sym2::new(0.5, 0.1, 0.3));
        let d = decompose(&ens(vec![s; 7])).unwrap();
        assert_eq!(d.sigma_epist, Sym2::ZERO);
        assert_eq!(d.u_epist, 0.0);
        assert!(d.sigma_pred.sub(&s.cov).max_abs_entry() < 1e-15);
    }

    #[test]
    fn two_sample_example() {
        let d = decompose(&ens(vec![
            pred([0.0, 0.0], Sym2::IDENTITY),
            pred([2.0, 0.0], Sym2::IDENTITY),
        ]))
        .unwrap();
        assert_eq!(d.sigma_aleat, Sym2::IDENTITY);
        assert_eq!(d.sigma_epist, Sym2::diag(1.0, 0.0));
        assert_eq!(d.sigma_pred, Sym2::diag(2.0, 1.0));
        assert_eq!(d.mu_bar, [1.0, 0.0]);
    }

    #[test]
    fn single_sample_rejected() {
        let e = decompose(&ens(vec![pred([0.0, 0.0], Sym2::IDENTITY)]));
        assert!(matches!(e, Err(Error::Contract(_))));
    }

    #[test]
    fn entropy_and_determinant_values() {
        assert!((entropy(1.0) - 2.8379).abs() < 1e-4);
        assert!((entropy(1.0) - (1.0 + (2.0 * PI).ln())).abs() < 1e-14);
        let s = Sym2::new(0.7, 0.2, 0.4);
        assert!((s.scale(3.0).det() - 9.0 * s.det()).abs() < 1e-14);
        assert_eq!(clamped_det(&Sym2::new(1.0, 1.0 + 1e-14, 1.0)), 0.0);
    }

    #[test]
    fn ellipse_values() {
        assert!((chi2_2dof_quantile(0.9) - 4.60517).abs() < 1e-5);
        let c = confidence_ellipse(&Sym2::IDENTITY, [0.0, 0.0], 0.9).unwrap();
        assert!((c.semi_major - 2.1460).abs() < 1e-4 && (c.semi_minor - 2.1460).abs() < 1e-4);
        let c = confidence_ellipse(&Sym2::diag(4.0, 1.0), [0.0, 0.0], 0.9).unwrap();
        assert!((c.semi_major / c.semi_minor - 2.0).abs() < 1e-14 && c.angle == 0.0);
        assert!(confidence_ellipse(&Sym2::diag(1.0, 0.0), [0.0, 0.0], 0.9).is_err());
        assert!(confidence_ellipse(&Sym2::IDENTITY, [0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn ellipse_coverage() {
        let sigma = Sym2::new(2.0, 0.8, 0.7);
        let ell = confidence_ellipse(&sigma, [0.5, -1.0], 0.9).unwrap();
        let (l11, l21) = (sigma.xx.sqrt(), sigma.xy / sigma.xx.sqrt());
        let l22 = (sigma.yy - l21 * l21).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let inside = (0..n)
            .filter(|_| {
                let (a, b): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
                ell.contains([0.5 + l11 * a, -1.0 + l21 * a + l22 * b])
            })
            .count();
        let frac = inside as f64 / n as f64;
        assert!((frac - 0.9).abs() < 0.005, "coverage {frac}");
    }

    #[test]
    fn ensemble_is_deterministic_and_keep_one_collapses() {
        let mut arch = ArchitectureConfig::desk();
        arch.fc_mvn = vec![32, 32];
        let mut model = ShapeNet::<f32>::new(&arch, HeadKind::MvnNll, 7).unwrap();
        let stamp: Vec<f32> = (0..1024).map(|i| ((i * 13) % 29) as f32 * 5.0).collect();
        let a = sample_ensemble(&mut model, &stamp, 6, 99).unwrap();
        let b = sample_ensemble(&mut model, &stamp, 6, 99).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.samples[0], a.samples[1]);
        assert_eq!(a.seeds[3], sample_seed(99, 3));
        let batch =
            sample_ensembles(&mut model, &[stamp.clone(), stamp.clone()], 6, &[5, 99]).unwrap();
        assert_eq!(batch[1], a);

        let mut no_drop = ShapeNet::<f32>::new(
            &ArchitectureConfig {
                dropout_rate: 0.0,
                ..arch.clone()
            },
            HeadKind::MvnNll,
            7,
        )
        .unwrap();
        let c = sample_ensemble(&mut no_drop, &stamp, 4, 1).unwrap();
        assert!(c.samples.iter().all(|s| s == &c.samples[0]));
        let one = sample_ensemble(&mut model, &stamp, 1, 1).unwrap();
        assert!(decompose(&one).is_err());

        let mut plain = ShapeNet::<f32>::new(&arch, HeadKind::PlainL2, 7).unwrap();
        assert!(sample_ensemble(&mut plain, &stamp, 4, 1).is_err());
    }

    fn random_ensemble(rng: &mut ChaCha8Rng, k: usize) -> McEnsemble {
        let samples = (0..k)
            .map(|_| {
                let l11 = rng.gen_range(0.01..1.0);
                let l21 = rng.gen_range(-1.0..1.0);
                let l22 = rng.gen_range(0.01..1.0);
                let cov = Sym2::new(l11 * l11, l11 * l21, l21 * l21 + l22 * l22);
                pred([rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)], cov)
            })
            .collect();
        ens(samples)
    }

    /// Covariance of the equal-weight mixture from raw moments
    /// `E[yyᵀ] − E[y]E[y]ᵀ`, each component contributing `Σ_k + μ_k μ_kᵀ`.
    pub(crate) fn mixture_covariance(e: &McEnsemble) -> Sym2 {
        let k = e.samples.len() as f64;
        let (mut m1, mut m2, mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for s in &e.samples {
            m1 += s.mu[0] / k;
            m2 += s.mu[1] / k;
            sxx += (s.cov.xx + s.mu[0] * s.mu[0]) / k;
            sxy += (s.cov.xy + s.mu[0] * s.mu[1]) / k;
            syy += (s.cov.yy + s.mu[1] * s.mu[1]) / k;
        }
        Sym2::new(sxx - m1 * m1, sxy - m1 * m2, syy - m2 * m2)
    }

    proptest! {
        #[test]
        fn split_matches_mixture_oracle(seed in any::<u64>(), k in 2usize..=6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let e = random_ensemble(&mut rng, k);
            let d = decompose(&e).unwrap();
            prop_assert!(d.sigma_aleat.add(&d.sigma_epist).sub(&d.sigma_pred).max_abs_entry() < 1e-10);
            prop_assert!(d.sigma_pred.sub(&mixture_covariance(&e)).max_abs_entry() < 1e-10);
            prop_assert!(d.sigma_epist.eigen().minor >= -1e-12);
            prop_assert!(d.u_aleat > 0.0 && d.u_epist >= 0.0 && d.u_pred > 0.0);
        }

        #[test]
        fn spread_scales_epistemic(seed in any::<u64>(), k in 2usize..=6, c in 1.0f64..4.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let e = random_ensemble(&mut rng, k);
            let d = decompose(&e).unwrap();
            let mut scaled = e.clone();
            for s in &mut scaled.samples {
                s.mu = [d.mu_bar[0] + c * (s.mu[0] - d.mu_bar[0]), d.mu_bar[1] + c * (s.mu[1] - d.mu_bar[1])];
            }
            let ds = decompose(&scaled).unwrap();
            prop_assert_eq!(ds.sigma_aleat, d.sigma_aleat);
            prop_assert!(ds.sigma_epist.sub(&d.sigma_epist.scale(c * c)).max_abs_entry() < 1e-12);
        }
    }
}
