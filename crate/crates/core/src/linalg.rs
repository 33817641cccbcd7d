//! Closed-form algebra on symmetric 2×2 matrices.

use serde::{Deserialize, Serialize};

/// Symmetric 2×2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

/// Eigen-decomposition of a [`Sym2`]: `major ≥ minor`, `angle` is the
/// direction of the major eigenvector in `(-π/2, π/2]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Eigen2 {
    pub major: f64,
    pub minor: f64,
    pub angle: f64,
}

impl Sym2 {
    pub const ZERO: Sym2 = Sym2 {
        xx: 0.0,
        xy: 0.0,
        yy: 0.0,
    };
    pub const IDENTITY: Sym2 = Sym2 {
        xx: 1.0,
        xy: 0.0,
        yy: 1.0,
    };

    pub fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Self { xx, xy, yy }
    }

    pub fn diag(xx: f64, yy: f64) -> Self {
        Self { xx, xy: 0.0, yy }
    }

    /// `v vᵀ`.
    pub fn outer(v: [f64; 2]) -> Self {
        Self {
            xx: v[0] * v[0],
            xy: v[0] * v[1],
            yy: v[1] * v[1],
        }
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn add(&self, o: &Sym2) -> Sym2 {
        Sym2 {
            xx: self.xx + o.xx,
            xy: self.xy + o.xy,
            yy: self.yy + o.yy,
        }
    }

    pub fn sub(&self, o: &Sym2) -> Sym2 {
        Sym2 {
            xx: self.xx - o.xx,
            xy: self.xy - o.xy,
            yy: self.yy - o.yy,
        }
    }

    pub fn scale(&self, c: f64) -> Sym2 {
        Sym2 {
            xx: self.xx * c,
            xy: self.xy * c,
            yy: self.yy * c,
        }
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.xx * v[0] + self.xy * v[1],
            self.xy * v[0] + self.yy * v[1],
        ]
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.xx.abs().max(self.xy.abs()).max(self.yy.abs())
    }

    pub fn is_finite(&self) -> bool {
        self.xx.is_finite() && self.xy.is_finite() && self.yy.is_finite()
    }

    /// `R S Rᵀ` for the rotation `R` by `angle`.
    pub fn rotated(&self, angle: f64) -> Sym2 {
        let (s, c) = angle.sin_cos();
        let xx = c * c * self.xx - 2.0 * c * s * self.xy + s * s * self.yy;
        let yy = s * s * self.xx + 2.0 * c * s * self.xy + c * c * self.yy;
        let xy = c * s * (self.xx - self.yy) + (c * c - s * s) * self.xy;
        Sym2 { xx, xy, yy }
    }

    pub fn eigen(&self) -> Eigen2 {
        let mean = 0.5 * (self.xx + self.yy);
        let half_diff = 0.5 * (self.xx - self.yy);
        let r = half_diff.hypot(self.xy);
        let angle = 0.5 * self.xy.atan2(half_diff);
        Eigen2 {
            major: mean + r,
            minor: mean - r,
            angle,
        }
    }

    /// Builds `V diag(f(λ)) Vᵀ` from the eigen-decomposition.
    fn spectral_map(&self, f: impl Fn(f64) -> f64) -> Sym2 {
        let e = self.eigen();
        let (s, c) = e.angle.sin_cos();
        let (a, b) = (f(e.major), f(e.minor));
        Sym2 {
            xx: a * c * c + b * s * s,
            xy: (a - b) * c * s,
            yy: a * s * s + b * c * c,
        }
    }

    /// Symmetric inverse square root, `None` when the smallest eigenvalue is
    /// below `min_eig`.
    pub fn inv_sqrt(&self, min_eig: f64) -> Option<Sym2> {
        if !self.is_finite() || self.eigen().minor < min_eig {
            return None;
        }
        Some(self.spectral_map(|l| 1.0 / l.sqrt()))
    }

    pub fn inverse(&self) -> Option<Sym2> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        Some(Sym2 {
            xx: self.yy / d,
            xy: -self.xy / d,
            yy: self.xx / d,
        })
    }
}
