//! Complex ellipticity of an ellipse and the inverse map back to geometry.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maps an angle onto `[0, π)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(PI);
    if t >= PI {
        0.0
    } else {
        t
    }
}

/// Ellipse with major axis `a`, minor axis `b` and position angle `theta`
/// measured counter-clockwise from the x axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EllipseGeometry {
    a: f64,
    b: f64,
    theta: f64,
}

impl EllipseGeometry {
    pub fn new(a: f64, b: f64, theta: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && theta.is_finite()) || a <= 0.0 || b <= 0.0 || b > a {
            return Err(Error::Domain(format!(
                "invalid ellipse a={a}, b={b}, theta={theta}"
            )));
        }
        Ok(Self {
            a,
            b,
            theta: normalize_angle(theta),
        })
    }

    /// Unit-area ellipse with axis ratio `q`.
    pub fn from_axis_ratio(q: f64, theta: f64) -> Result<Self> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::Domain(format!("axis ratio {q} outside (0, 1]")));
        }
        let a = 1.0 / q.sqrt();
        Self::new(a, q * a, theta)
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn axis_ratio(&self) -> f64 {
        self.b / self.a
    }

    pub fn rotated(&self, delta: f64) -> Self {
        Self {
            theta: normalize_angle(self.theta + delta),
            ..*self
        }
    }
}

/// Complex ellipticity `e1 + i·e2`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Ellipticity {
    pub e1: f64,
    pub e2: f64,
}

impl Ellipticity {
    pub fn new(e1: f64, e2: f64) -> Self {
        Self { e1, e2 }
    }

    pub fn magnitude(&self) -> f64 {
        self.e1.hypot(self.e2)
    }

    /// Strictly inside the unit disk.
    pub fn is_valid(&self) -> bool {
        self.e1.is_finite() && self.e2.is_finite() && self.magnitude() < 1.0
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.e1, self.e2]
    }

    /// Ellipticity of an ellipse with axis ratio `q` and angle `theta`.
    pub fn from_axis_ratio(q: f64, theta: f64) -> Self {
        let q2 = q * q;
        let m = (1.0 - q2) / (1.0 + q2);
        let (s, c) = (2.0 * theta).sin_cos();
        Self {
            e1: m * c,
            e2: m * s,
        }
    }
}

pub fn to_ellipticity(g: &EllipseGeometry) -> Ellipticity {
    Ellipticity::from_axis_ratio(g.axis_ratio(), g.theta)
}

/// Inverse of [`to_ellipticity`], normalised to unit area (`a·b = 1`).
pub fn from_ellipticity(e: Ellipticity) -> Result<EllipseGeometry> {
    let m = e.magnitude();
    if !(m < 1.0) {
        return Err(Error::Domain(format!(
            "|e| = {m} is not inside the unit disk"
        )));
    }
    let q = ((1.0 - m) / (1.0 + m)).sqrt();
    let theta = if m == 0.0 {
        0.0
    } else {
        0.5 * e.e2.atan2(e.e1)
    };
    EllipseGeometry::from_axis_ratio(q, theta)
}

/// Euclidean distance in the `(e1, e2)` plane.
pub fn ellipticity_error(pred: Ellipticity, target: Ellipticity) -> f64 {
    (pred.e1 - target.e1).hypot(pred.e2 - target.e2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: Ellipticity, e1: f64, e2: f64, tol: f64) {
        assert!(
            (a.e1 - e1).abs() < tol && (a.e2 - e2).abs() < tol,
            "{a:?} vs ({e1}, {e2})"
        );
    }

    #[test]
    fn reference_values() {
        close(
            to_ellipticity(&EllipseGeometry::new(1.0, 1.0, 0.7).unwrap()),
            0.0,
            0.0,
            1e-15,
        );
        close(
            to_ellipticity(&EllipseGeometry::new(2.0, 1.0, 0.0).unwrap()),
            0.6,
            0.0,
            1e-15,
        );
        close(
            to_ellipticity(&EllipseGeometry::new(2.0, 1.0, PI / 2.0).unwrap()),
            -0.6,
            0.0,
            1e-15,
        );
        let e = to_ellipticity(&EllipseGeometry::new(2.0, 1.0, PI / 6.0).unwrap());
        // Independent route: 0.6·e^{iπ/3}.
        close(e, 0.6 * 0.5, 0.6 * 3f64.sqrt() / 2.0, 1e-15);
        assert!((e.e2 - 0.5196).abs() < 1e-4);
    }

    #[test]
    fn inverse_values() {
        let g = from_ellipticity(Ellipticity::new(0.0, 0.0)).unwrap();
        assert_eq!((g.axis_ratio(), g.theta()), (1.0, 0.0));
        let g = from_ellipticity(Ellipticity::new(0.6, 0.0)).unwrap();
        assert!((g.axis_ratio() - 0.5).abs() < 1e-15);
        assert_eq!(g.theta(), 0.0);
        assert!((g.a() * g.b() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unit_circle_rejected() {
        assert!(from_ellipticity(Ellipticity::new(1.0, 0.0)).is_err());
        assert!(from_ellipticity(Ellipticity::new(0.8, 0.7)).is_err());
        assert!(EllipseGeometry::new(1.0, 2.0, 0.0).is_err());
        assert!(EllipseGeometry::new(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn error_metric_values() {
        let a = Ellipticity::new(0.3, 0.4);
        assert_eq!(ellipticity_error(a, a), 0.0);
        assert_eq!(
            ellipticity_error(Ellipticity::new(0.6, 0.0), Ellipticity::default()),
            0.6
        );
        assert!((ellipticity_error(a, Ellipticity::new(-0.3, -0.4)) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn angle_normalisation() {
        assert_eq!(normalize_angle(PI), 0.0);
        assert!((normalize_angle(-0.25) - (PI - 0.25)).abs() < 1e-15);
        assert!(normalize_angle(-1e-300) < PI);
    }

    fn geometry() -> impl Strategy<Value = EllipseGeometry> {
        (0.01f64..=1.0, 0.0f64..PI, 0.1f64..10.0)
            .prop_map(|(q, t, a)| EllipseGeometry::new(a, q * a, t).unwrap())
    }

    fn point() -> impl Strategy<Value = Ellipticity> {
        (0.0f64..0.99, -PI..PI).prop_map(|(r, phi)| Ellipticity::new(r * phi.cos(), r * phi.sin()))
    }

    fn angle_diff(a: f64, b: f64) -> f64 {
        let d = (a - b).rem_euclid(PI);
        d.min(PI - d)
    }

    proptest! {
        #[test]
        fn round_trip(g in geometry()) {
            let back = from_ellipticity(to_ellipticity(&g)).unwrap();
            prop_assert!((back.axis_ratio() - g.axis_ratio()).abs() < 1e-12);
            if g.axis_ratio() < 1.0 - 1e-6 {
                prop_assert!(angle_diff(back.theta(), g.theta()) < 1e-12 / (1.0 - g.axis_ratio()));
            }
        }

        #[test]
        fn magnitude_decreases_with_axis_ratio(q1 in 0.01f64..1.0, q2 in 0.01f64..1.0) {
            prop_assume!(q1 < q2);
            let m1 = Ellipticity::from_axis_ratio(q1, 0.3).magnitude();
            let m2 = Ellipticity::from_axis_ratio(q2, 0.3).magnitude();
            prop_assert!(m1 > m2 && m1 < 1.0 && m2 >= 0.0);
        }

        #[test]
        fn rotation_multiplies_by_phase(g in geometry(), k in 0usize..3) {
            let delta = [PI / 4.0, PI / 2.0, PI][k];
            let e = to_ellipticity(&g);
            let r = to_ellipticity(&g.rotated(delta));
            let (s, c) = (2.0 * delta).sin_cos();
            prop_assert!((r.e1 - (c * e.e1 - s * e.e2)).abs() < 1e-12);
            prop_assert!((r.e2 - (s * e.e1 + c * e.e2)).abs() < 1e-12);
        }

        #[test]
        fn triangle_inequality(a in point(), b in point(), c in point()) {
            let ab = ellipticity_error(a, b);
            prop_assert!(ellipticity_error(a, c) <= ab + ellipticity_error(b, c) + 1e-15);
            prop_assert_eq!(ab, ellipticity_error(b, a));
        }
    }
}
