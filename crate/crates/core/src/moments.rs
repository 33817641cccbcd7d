//! Second-moment shape measurement on pixel data.

use serde::{Deserialize, Serialize};

use crate::ellipticity::Ellipticity;
use crate::error::{Error, Result};
use crate::simulator::Stamp;

pub const MAX_CENTROID_ITERATIONS: usize = 10;
pub const CENTROID_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Window {
    Unweighted,
    /// Circular Gaussian weight of width `sigma` pixels, centred on the
    /// iteratively re-measured centroid.
    Gaussian {
        sigma: f64,
    },
}

/// Flux, centroid (relative to the stamp centre) and central second moments.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentSet {
    pub flux_sum: f64,
    pub centroid: (f64, f64),
    pub qxx: f64,
    pub qyy: f64,
    pub qxy: f64,
}

impl MomentSet {
    /// 90° counter-clockwise rotation of the underlying image.
    pub fn rotated90(&self) -> MomentSet {
        MomentSet {
            centroid: (-self.centroid.1, self.centroid.0),
            qxx: self.qyy,
            qyy: self.qxx,
            qxy: -self.qxy,
            ..*self
        }
    }
}

fn coords(stamp: &Stamp) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
    let (x0, y0) = stamp.center();
    stamp.pixels.iter().enumerate().map(move |(i, &v)| {
        let (r, c) = (i / stamp.width, i % stamp.width);
        (c as f64 - x0, r as f64 - y0, v)
    })
}

/// Weighted flux, centroid and central moments for weight `w(x, y)`.
fn weighted(stamp: &Stamp, w: impl Fn(f64, f64) -> f64) -> Result<MomentSet> {
    let (mut f, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for (x, y, v) in coords(stamp) {
        let wv = w(x, y) * v;
        f += wv;
        sx += wv * x;
        sy += wv * y;
    }
    if !(f > 0.0) {
        return Err(Error::Measurement(format!(
            "non-positive weighted flux {f}"
        )));
    }
    let (cx, cy) = (sx / f, sy / f);
    let (mut qxx, mut qyy, mut qxy) = (0.0, 0.0, 0.0);
    for (x, y, v) in coords(stamp) {
        let wv = w(x, y) * v;
        let (dx, dy) = (x - cx, y - cy);
        qxx += wv * dx * dx;
        qyy += wv * dy * dy;
        qxy += wv * dx * dy;
    }
    Ok(MomentSet {
        flux_sum: f,
        centroid: (cx, cy),
        qxx: qxx / f,
        qyy: qyy / f,
        qxy: qxy / f,
    })
}

pub fn measure_moments(stamp: &Stamp, window: Window) -> Result<MomentSet> {
    let total: f64 = stamp.sum();
    if !(total > 0.0) {
        return Err(Error::Measurement(format!("non-positive flux {total}")));
    }
    match window {
        Window::Unweighted => weighted(stamp, |_, _| 1.0),
        Window::Gaussian { sigma } => {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(Error::Measurement(format!("window sigma {sigma}")));
            }
            let k = 0.5 / (sigma * sigma);
            let mut center = weighted(stamp, |_, _| 1.0)?.centroid;
            for _ in 0..MAX_CENTROID_ITERATIONS {
                let (cx, cy) = center;
                let m = weighted(stamp, |x, y| {
                    (-k * ((x - cx).powi(2) + (y - cy).powi(2))).exp()
                })?;
                let shift = (m.centroid.0 - cx).hypot(m.centroid.1 - cy);
                center = m.centroid;
                if shift < CENTROID_TOLERANCE {
                    // Second moments about the converged centroid, window centred there.
                    let (cx, cy) = center;
                    return weighted(stamp, |x, y| {
                        (-k * ((x - cx).powi(2) + (y - cy).powi(2))).exp()
                    });
                }
            }
            Err(Error::Measurement(format!(
                "centroid did not converge within {MAX_CENTROID_ITERATIONS} iterations"
            )))
        }
    }
}

pub fn moments_to_ellipticity(m: &MomentSet) -> Result<Ellipticity> {
    let t = m.qxx + m.qyy;
    if !(t > 0.0) {
        return Err(Error::Measurement(format!(
            "undefined shape: Qxx + Qyy = {t}"
        )));
    }
    Ok(Ellipticity::new((m.qxx - m.qyy) / t, 2.0 * m.qxy / t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{render, GalaxyModel, Noise, Profile, Scene, GAUSSIAN_HLR_PER_SIGMA};
    use proptest::prelude::*;

    fn gaussian_stamp(hlr: f64, q: f64, theta: f64, size: usize) -> Stamp {
        let g = GalaxyModel {
            profile: Profile::EllipticalGaussian,
            flux: 1000.0,
            half_light_radius: hlr,
            q,
            theta,
            center: (0.0, 0.0),
        };
        render(&Scene::isolated(g, Noise::None, 0), size, size).unwrap()
    }

    #[test]
    fn single_pixel_has_zero_moments() {
        let mut p = vec![0.0; 256];
        p[5 * 16 + 9] = 7.0;
        let m = measure_moments(&Stamp::new(16, 16, p).unwrap(), Window::Unweighted).unwrap();
        assert_eq!((m.qxx, m.qyy, m.qxy), (0.0, 0.0, 0.0));
        assert_eq!(m.centroid, (9.0 - 7.5, 5.0 - 7.5));
        assert!(moments_to_ellipticity(&m).is_err());
    }

    #[test]
    fn circular_gaussian_is_round() {
        let m = measure_moments(&gaussian_stamp(3.0, 1.0, 0.0, 64), Window::Unweighted).unwrap();
        assert!((m.qxx - m.qyy).abs() < 1e-3 * m.qxx);
        assert!(m.qxy.abs() < 1e-3 * m.qxx);
    }

    #[test]
    fn elliptical_gaussian_variance_ratio() {
        // σ_major = 6 px at q = 0.5.
        let hlr = 6.0 * 0.5f64.sqrt() * GAUSSIAN_HLR_PER_SIGMA;
        let m = measure_moments(&gaussian_stamp(hlr, 0.5, 0.0, 64), Window::Unweighted).unwrap();
        let ratio = m.qxx / m.qyy;
        assert!((ratio / 4.0 - 1.0).abs() < 0.02, "ratio {ratio}");
    }

    #[test]
    fn ellipticity_from_moment_values() {
        let m = |qxx, qyy, qxy| MomentSet {
            flux_sum: 1.0,
            centroid: (0.0, 0.0),
            qxx,
            qyy,
            qxy,
        };
        assert_eq!(
            moments_to_ellipticity(&m(2.0, 2.0, 0.0)).unwrap(),
            Ellipticity::new(0.0, 0.0)
        );
        assert_eq!(
            moments_to_ellipticity(&m(4.0, 1.0, 0.0)).unwrap(),
            Ellipticity::new(0.6, 0.0)
        );
        // Independent route: the same ellipse through the axis-ratio formula.
        let e = Ellipticity::from_axis_ratio(0.5, 0.0);
        assert!((e.e1 - 0.6).abs() < 1e-15 && e.e2 == 0.0);
        assert_eq!(
            moments_to_ellipticity(&m(1.0, 1.0, 0.5)).unwrap(),
            Ellipticity::new(0.0, 0.5)
        );
        assert!(moments_to_ellipticity(&m(0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn empty_stamp_is_rejected() {
        let s = Stamp::new(16, 16, vec![0.0; 256]).unwrap();
        assert!(measure_moments(&s, Window::Unweighted).is_err());
        assert!(measure_moments(&s, Window::Gaussian { sigma: 3.0 }).is_err());
    }

    #[test]
    fn window_rounds_shapes() {
        for (q, theta) in [(0.3, 0.2), (0.6, 1.3), (0.9, 2.8), (0.45, 0.0)] {
            let s = gaussian_stamp(3.5, q, theta, 64);
            let u =
                moments_to_ellipticity(&measure_moments(&s, Window::Unweighted).unwrap()).unwrap();
            let w = moments_to_ellipticity(
                &measure_moments(&s, Window::Gaussian { sigma: 4.0 }).unwrap(),
            )
            .unwrap();
            assert!(w.magnitude() <= u.magnitude() + 1e-3, "{w:?} vs {u:?}");
        }
    }

    proptest! {
        #[test]
        fn rotation_negates_ellipticity(qxx in 0.1f64..10.0, qyy in 0.1f64..10.0, rho in -0.99f64..0.99) {
            let qxy = rho * (qxx * qyy).sqrt();
            let m = MomentSet { flux_sum: 1.0, centroid: (0.3, -1.2), qxx, qyy, qxy };
            let e = moments_to_ellipticity(&m).unwrap();
            let r = moments_to_ellipticity(&m.rotated90()).unwrap();
            prop_assert_eq!(r.e1, -e.e1);
            prop_assert_eq!(r.e2, -e.e2);
        }

        #[test]
        fn moments_are_positive_semidefinite(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let p: Vec<f64> = (0..256).map(|_| rng.gen_range(0.0..1.0)).collect();
            let m = measure_moments(&Stamp::new(16, 16, p).unwrap(), Window::Unweighted).unwrap();
            prop_assert!(m.qxx >= 0.0 && m.qyy >= 0.0);
            prop_assert!(m.qxx * m.qyy - m.qxy * m.qxy >= -1e-12);
        }
    }
}
