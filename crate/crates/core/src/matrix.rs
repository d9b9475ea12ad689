//! 2×2 real matrices, points of the projective line, and the SL(2,R)
//! trace trichotomy.
//!
//! Everything here is plain `f64` arithmetic on `Copy` values. A matrix is
//! "SL-tagged" when it was built through [`Mat2::sl`] (or is otherwise known
//! to have unit determinant); the inverse of such a value is its adjugate.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Width of the band around `|tr| = 2` inside which a matrix is reported
/// as parabolic (or the identity).
pub const DEFAULT_CLASSIFY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatrixError {
    #[error("matrix has a non-finite entry")]
    NonFinite,
    #[error("determinant {0} is not positive")]
    NonPositiveDeterminant(f64),
}

/// Row-major 2×2 real matrix `[[a, b], [c, d]]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2::new(1.0, 0.0, 0.0, 1.0);
    pub const ZERO: Mat2 = Mat2::new(0.0, 0.0, 0.0, 0.0);

    pub const fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self { a, b, c, d }
    }

    pub fn identity() -> Self {
        Self::IDENTITY
    }

    pub fn diag(p: f64, q: f64) -> Self {
        Self::new(p, 0.0, 0.0, q)
    }

    /// Counter-clockwise rotation by `theta` radians.
    pub fn rotation(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self::new(c, -s, s, c)
    }

    /// Upper-triangular unipotent `[[1, s], [0, 1]]`.
    pub fn shear(s: f64) -> Self {
        Self::new(1.0, s, 0.0, 1.0)
    }

    /// SL-tagged constructor: rescales by `1/sqrt(det)` so the result has
    /// unit determinant.
    pub fn sl(a: f64, b: f64, c: f64, d: f64) -> Result<Self, MatrixError> {
        let m = Self::new(a, b, c, d);
        if !m.is_finite() {
            return Err(MatrixError::NonFinite);
        }
        let det = m.det();
        if det <= 0.0 {
            return Err(MatrixError::NonPositiveDeterminant(det));
        }
        Ok(m.scale(1.0 / det.sqrt()))
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.b.is_finite() && self.c.is_finite() && self.d.is_finite()
    }

    pub fn det(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn trace(&self) -> f64 {
        self.a + self.d
    }

    pub fn transpose(&self) -> Self {
        Self::new(self.a, self.c, self.b, self.d)
    }

    pub fn scale(&self, k: f64) -> Self {
        Self::new(self.a * k, self.b * k, self.c * k, self.d * k)
    }

    /// Matrix product `self · other`.
    pub fn compose(&self, other: &Mat2) -> Mat2 {
        Mat2::new(
            self.a * other.a + self.b * other.c,
            self.a * other.b + self.b * other.d,
            self.c * other.a + self.d * other.c,
            self.c * other.b + self.d * other.d,
        )
    }

    /// `[[d, -b], [-c, a]]`; the inverse of an SL-tagged matrix.
    pub fn adjugate(&self) -> Mat2 {
        Mat2::new(self.d, -self.b, -self.c, self.a)
    }

    /// General inverse `adj(A)/det(A)`. Not checked for singularity.
    pub fn inverse(&self) -> Mat2 {
        self.adjugate().scale(1.0 / self.det())
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [self.a * v[0] + self.b * v[1], self.c * v[0] + self.d * v[1]]
    }

    /// The two singular values `(σ_max, σ_min)` in closed form.
    pub fn singular_values(&self) -> (f64, f64) {
        let p = (self.a + self.d).hypot(self.c - self.b);
        let q = (self.a - self.d).hypot(self.b + self.c);
        (0.5 * (p + q), 0.5 * (p - q).abs())
    }

    /// Operator norm induced by the Euclidean norm (largest singular value).
    pub fn operator_norm(&self) -> f64 {
        self.singular_values().0
    }

    /// `‖A‖·‖A⁻¹‖ = σ_max/σ_min`.
    pub fn condition_number(&self) -> f64 {
        let (hi, lo) = self.singular_values();
        hi / lo
    }

    pub fn max_abs(&self) -> f64 {
        self.a.abs().max(self.b.abs()).max(self.c.abs()).max(self.d.abs())
    }

    /// Operator-norm distance `‖self − other‖`.
    pub fn dist(&self, other: &Mat2) -> f64 {
        (*self - *other).operator_norm()
    }

    pub fn is_identity(&self) -> bool {
        *self == Mat2::IDENTITY
    }
}

impl Default for Mat2 {
    fn default() -> Self {
        Mat2::IDENTITY
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, rhs: Mat2) -> Mat2 {
        self.compose(&rhs)
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, o: Mat2) -> Mat2 {
        Mat2::new(self.a + o.a, self.b + o.b, self.c + o.c, self.d + o.d)
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, o: Mat2) -> Mat2 {
        Mat2::new(self.a - o.a, self.b - o.b, self.c - o.c, self.d - o.d)
    }
}

impl Neg for Mat2 {
    type Output = Mat2;
    fn neg(self) -> Mat2 {
        self.scale(-1.0)
    }
}

impl fmt::Display for Mat2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[[{}, {}], [{}, {}]]", self.a, self.b, self.c, self.d)
    }
}

/// A line through the origin of ℝ², stored as the angle `θ ∈ [0, π)` of the
/// spanning vector `(cos θ, sin θ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjPoint {
    theta: f64,
}

impl ProjPoint {
    pub fn new(theta: f64) -> Self {
        let mut t = theta.rem_euclid(PI);
        if t >= PI {
            t = 0.0;
        }
        Self { theta: t }
    }

    /// The line spanned by `(x, y)`. The zero vector maps to `θ = 0`.
    pub fn from_vector(v: [f64; 2]) -> Self {
        Self::new(v[1].atan2(v[0]))
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Unit spanning vector.
    pub fn vector(&self) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [c, s]
    }

    /// `|sin(θ_u − θ_v)|`, the sine of the angle between the two lines.
    pub fn dist(&self, other: &ProjPoint) -> f64 {
        (self.theta - other.theta).sin().abs()
    }
}

/// `[A·v]` for the line `v`.
pub fn projective_action(m: &Mat2, v: &ProjPoint) -> ProjPoint {
    ProjPoint::from_vector(m.apply(v.vector()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatKind {
    Identity,
    Hyperbolic,
    Parabolic,
    Elliptic,
}

impl fmt::Display for MatKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MatKind::Identity => "identity",
            MatKind::Hyperbolic => "hyperbolic",
            MatKind::Parabolic => "parabolic",
            MatKind::Elliptic => "elliptic",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatClass {
    pub kind: MatKind,
    /// Rotation angle `arccos(|tr|/2)` for elliptic matrices.
    pub angle: Option<f64>,
    pub fixed_points: Vec<ProjPoint>,
}

/// Eigendirection for the eigenvalue `(a+d)/2 + sign·r`, where
/// `r = sqrt((a−d)² + 4bc)/2`. Of the kernel vectors `[b, λ−a]` and
/// `[λ−d, c]` the one whose second (resp. first) entry adds terms of equal
/// sign is used, so near-identity matrices keep full relative accuracy.
fn eigendirection(m: &Mat2, sign: f64, r: f64) -> ProjPoint {
    let h = 0.5 * (m.d - m.a);
    if sign * h >= 0.0 {
        ProjPoint::from_vector([m.b, h + sign * r])
    } else {
        ProjPoint::from_vector([sign * r - h, m.c])
    }
}

/// Trace trichotomy of an SL-tagged matrix, by `t = |tr(A)|`:
/// identity if `A = ±Id` within `tol`, hyperbolic for `t > 2 + tol`,
/// elliptic for `t < 2 − tol`, parabolic otherwise.
pub fn classify(m: &Mat2, tol: f64) -> MatClass {
    if m.dist(&Mat2::IDENTITY) <= tol || m.dist(&(-Mat2::IDENTITY)) <= tol {
        return MatClass { kind: MatKind::Identity, angle: None, fixed_points: Vec::new() };
    }
    let tr = m.trace();
    let t = tr.abs();
    if t > 2.0 + tol {
        // (a−d)² + 4bc equals tr² − 4·det without the cancellation at tr ≈ 2
        let r = 0.5 * ((m.a - m.d).powi(2) + 4.0 * m.b * m.c).max(0.0).sqrt();
        // larger-magnitude eigenvalue first
        let s = tr.signum();
        MatClass {
            kind: MatKind::Hyperbolic,
            angle: None,
            fixed_points: vec![eigendirection(m, s, r), eigendirection(m, -s, r)],
        }
    } else if t < 2.0 - tol {
        MatClass {
            kind: MatKind::Elliptic,
            angle: Some((0.5 * t).acos()),
            fixed_points: Vec::new(),
        }
    } else {
        MatClass {
            kind: MatKind::Parabolic,
            angle: None,
            fixed_points: vec![{
                // double eigenvalue: both kernel candidates are exact, take the longer
                let h = 0.5 * (m.d - m.a);
                if m.b.hypot(h) >= h.hypot(m.c) {
                    ProjPoint::from_vector([m.b, h])
                } else {
                    ProjPoint::from_vector([-h, m.c])
                }
            }],
        }
    }
}

/// Splits a positive-determinant matrix as `A = g·B` with `g = sqrt(det A)`
/// and `det B = 1`.
pub fn gl_to_sl(m: &Mat2) -> Result<(f64, Mat2), MatrixError> {
    if !m.is_finite() {
        return Err(MatrixError::NonFinite);
    }
    let det = m.det();
    if det <= 0.0 {
        return Err(MatrixError::NonPositiveDeterminant(det));
    }
    let g = det.sqrt();
    Ok((g, m.scale(1.0 / g)))
}

/// An element of PSL(2,R) held through its canonical representative.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PslClass {
    pub rep: Mat2,
}

impl PslClass {
    pub fn norm(&self) -> f64 {
        self.rep.operator_norm()
    }
}

/// Canonical representative of `{A, −A}`: nonnegative trace, and at trace
/// zero the first nonzero entry in reading order is positive.
pub fn psl_normalize(m: &Mat2) -> PslClass {
    let tr = m.trace();
    let band = 1e-12 * m.max_abs();
    let flip = if tr.abs() <= band {
        let first = [m.a, m.b, m.c, m.d].into_iter().find(|x| *x != 0.0).unwrap_or(0.0);
        first < 0.0
    } else {
        tr < 0.0
    };
    PslClass { rep: if flip { -*m } else { *m } }
}
