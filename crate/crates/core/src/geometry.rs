//! Planar pose algebra for the body's centre of mass.
//!
//! Headings live in the half-open interval (-π, π]. A [`DeltaPose`] is the
//! displacement of one motion expressed in the body frame at the *start* of
//! that motion: the body travels `r` metres in direction `alpha` (relative to
//! its heading) and its heading changes by `beta`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TWO_PI: f64 = 2.0 * PI;

/// Below this displacement the direction `alpha` is meaningless and set to 0.
pub const CANONICAL_EPS: f64 = 1e-12;

/// Wraps an angle into (-π, π].
pub fn wrap_angle(a: f64) -> Result<f64> {
    if !a.is_finite() {
        return Err(Error::NonFinite("angle"));
    }
    Ok(wrap(a))
}

/// Unchecked wrap. Values already in range are returned untouched, which keeps
/// the map idempotent bit-for-bit.
pub(crate) fn wrap(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let r = a.rem_euclid(TWO_PI);
    if r > PI {
        r - TWO_PI
    } else {
        r
    }
}

/// Centre-of-mass position (metres) and heading (radians).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite()) {
            return Err(Error::NonFinite("pose position"));
        }
        Ok(Self {
            x,
            y,
            theta: wrap_angle(theta)?,
        })
    }

    pub const fn origin() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn distance_to(&self, point: [f64; 2]) -> f64 {
        (point[0] - self.x).hypot(point[1] - self.y)
    }

    /// Applies `d` in this pose's body frame.
    pub fn compose(&self, d: &DeltaPose) -> Pose2 {
        compose(self, d)
    }

    /// Displacement that takes `self` to `other`, in `self`'s body frame.
    pub fn between(&self, other: &Pose2) -> DeltaPose {
        between(self, other)
    }
}

impl Default for Pose2 {
    fn default() -> Self {
        Self::origin()
    }
}

/// Body-frame displacement `(r, alpha, beta)` over one motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaPose {
    pub r: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl DeltaPose {
    pub const ZERO: DeltaPose = DeltaPose {
        r: 0.0,
        alpha: 0.0,
        beta: 0.0,
    };

    pub fn new(r: f64, alpha: f64, beta: f64) -> Result<Self> {
        if !(r.is_finite() && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::NonFinite("delta pose"));
        }
        if r < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "delta distance must be non-negative, got {r}"
            )));
        }
        let alpha = if r < CANONICAL_EPS { 0.0 } else { wrap(alpha) };
        Ok(Self {
            r,
            alpha,
            beta: wrap(beta),
        })
    }

    /// Builds the canonical delta from a body-frame translation `(dx, dy)`
    /// (x forward, y left) and heading change `dbeta`.
    pub fn from_cartesian(dx: f64, dy: f64, dbeta: f64) -> Self {
        let r = dx.hypot(dy);
        let alpha = if r < CANONICAL_EPS { 0.0 } else { dy.atan2(dx) };
        Self {
            r,
            alpha,
            beta: wrap(dbeta),
        }
    }

    /// Body-frame translation `(dx, dy)`.
    pub fn to_cartesian(&self) -> (f64, f64) {
        (self.r * self.alpha.cos(), self.r * self.alpha.sin())
    }

    pub fn is_finite(&self) -> bool {
        self.r.is_finite() && self.alpha.is_finite() && self.beta.is_finite()
    }
}

impl Default for DeltaPose {
    fn default() -> Self {
        Self::ZERO
    }
}

/// `(sin, cos)` that is exact at multiples of a quarter turn.
fn sin_cos(a: f64) -> (f64, f64) {
    use std::f64::consts::FRAC_PI_2;
    if a == 0.0 {
        (0.0, 1.0)
    } else if a == FRAC_PI_2 {
        (1.0, 0.0)
    } else if a == -FRAC_PI_2 {
        (-1.0, 0.0)
    } else if a == PI || a == -PI {
        (0.0, -1.0)
    } else {
        a.sin_cos()
    }
}

pub fn compose(p: &Pose2, d: &DeltaPose) -> Pose2 {
    let (s, c) = sin_cos(p.theta + d.alpha);
    Pose2 {
        x: p.x + d.r * c,
        y: p.y + d.r * s,
        theta: wrap(p.theta + d.beta),
    }
}

pub fn between(p0: &Pose2, p1: &Pose2) -> DeltaPose {
    let (s, c) = sin_cos(p0.theta);
    let dx = p1.x - p0.x;
    let dy = p1.y - p0.y;
    let bx = c * dx + s * dy;
    let by = -s * dx + c * dy;
    DeltaPose::from_cartesian(bx, by, p1.theta - p0.theta)
}

/// Rotates a body-frame vector into the world frame for heading `theta`.
pub fn rotate(theta: f64, v: (f64, f64)) -> (f64, f64) {
    let (s, c) = sin_cos(theta);
    (c * v.0 - s * v.1, s * v.0 + c * v.1)
}
