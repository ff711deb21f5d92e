//! Unnormalized anisotropic Gaussian primitives and their closed-form
//! pairwise overlap.
//!
//! A blob evaluates to
//!
//! ```text
//! G(x) = exp(-1/2 (x - mu)^T Sigma^-1 (x - mu))
//! ```
//!
//! with peak value 1 at the mean; there is no probability normalization. Each
//! blob carries an HSV color and a nonnegative weight. The spatial overlap of
//! two 2D blobs has the closed form
//!
//! ```text
//! D_pq = sqrt((2 pi)^2 |Sigma_p Sigma_q|) / sqrt(|Sigma_p + Sigma_q|)
//!        * exp(-1/2 (mu_p - mu_q)^T (Sigma_p + Sigma_q)^-1 (mu_p - mu_q))
//! ```
//!
//! which equals the integral of the product of the two blobs over the plane.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use crate::color::{color_similarity, ColorSimilarityConfig};
use crate::error::{Result, SagError};

/// Condition number above which a covariance is treated as degenerate.
pub const MAX_COVARIANCE_CONDITION: f64 = 1e12;

/// Symmetry tolerance for covariance matrices.
pub const COVARIANCE_SYMMETRY_TOL: f64 = 1e-12;

/// Orthonormality tolerance for rotations fed to [`transform_gaussian3d`].
pub const ROTATION_ORTHONORMALITY_TOL: f64 = 1e-9;

/// An unnormalized anisotropic Gaussian in 3D world space.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian3D {
    /// Center in world units (mm).
    pub mean: Vector3<f64>,
    /// Symmetric positive-definite covariance (mm^2).
    pub covariance: Matrix3<f64>,
    /// HSV color, components in `[0, 1]`.
    pub color: Vector3<f64>,
    /// Nonnegative contribution weight (`w_p` in the fitting energy).
    pub weight: f64,
}

/// An unnormalized anisotropic Gaussian in 2D image space (pixels).
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian2D {
    pub mean: Vector2<f64>,
    pub covariance: Matrix2<f64>,
    pub color: Vector3<f64>,
    pub weight: f64,
}

fn check_color(color: &Vector3<f64>) -> Result<()> {
    for (i, c) in color.iter().enumerate() {
        if !(0.0..=1.0).contains(c) || !c.is_finite() {
            return Err(SagError::InvalidInput(format!(
                "color component {i} out of [0,1]: {c}"
            )));
        }
    }
    Ok(())
}

fn check_weight(weight: f64) -> Result<()> {
    if !(weight >= 0.0) || !weight.is_finite() {
        return Err(SagError::InvalidInput(format!(
            "weight must be nonnegative and finite, got {weight}"
        )));
    }
    Ok(())
}

impl Gaussian3D {
    /// Validating constructor; rejects asymmetric, non-positive-definite or
    /// ill-conditioned covariances.
    pub fn new(
        mean: Vector3<f64>,
        covariance: Matrix3<f64>,
        color: Vector3<f64>,
        weight: f64,
    ) -> Result<Self> {
        check_symmetry3(&covariance)?;
        check_spd3(&covariance)?;
        check_color(&color)?;
        check_weight(weight)?;
        Ok(Self {
            mean,
            covariance,
            color,
            weight,
        })
    }
}

impl Gaussian2D {
    pub fn new(
        mean: Vector2<f64>,
        covariance: Matrix2<f64>,
        color: Vector3<f64>,
        weight: f64,
    ) -> Result<Self> {
        if (covariance.m12 - covariance.m21).abs() > COVARIANCE_SYMMETRY_TOL {
            return Err(SagError::DegenerateCovariance(format!(
                "2x2 covariance asymmetric by {}",
                (covariance.m12 - covariance.m21).abs()
            )));
        }
        let (emin, emax) = sym2_eigen_bounds(&covariance);
        if emin <= 0.0 {
            return Err(SagError::DegenerateCovariance(format!(
                "2x2 covariance not positive-definite (min eigenvalue {emin})"
            )));
        }
        if emax / emin > MAX_COVARIANCE_CONDITION {
            return Err(SagError::DegenerateCovariance(format!(
                "2x2 covariance condition number {:.3e} exceeds {MAX_COVARIANCE_CONDITION:.0e}",
                emax / emin
            )));
        }
        check_color(&color)?;
        check_weight(weight)?;
        Ok(Self {
            mean,
            covariance,
            color,
            weight,
        })
    }

    /// An isotropic image Gaussian with standard deviation `sigma`.
    pub fn isotropic(mean: Vector2<f64>, sigma: f64, color: Vector3<f64>) -> Result<Self> {
        Self::new(
            mean,
            Matrix2::from_diagonal_element(sigma * sigma),
            color,
            1.0,
        )
    }
}

/// Eigenvalue bounds of a symmetric 2x2 matrix, closed form.
fn sym2_eigen_bounds(m: &Matrix2<f64>) -> (f64, f64) {
    let tr = m.m11 + m.m22;
    let det = m.m11 * m.m22 - m.m12 * m.m21;
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    (tr / 2.0 - disc, tr / 2.0 + disc)
}

fn check_symmetry3(m: &Matrix3<f64>) -> Result<()> {
    let dev = (m - m.transpose()).norm();
    if dev > COVARIANCE_SYMMETRY_TOL {
        return Err(SagError::DegenerateCovariance(format!(
            "3x3 covariance asymmetric by {dev:.3e}"
        )));
    }
    Ok(())
}

fn check_spd3(m: &Matrix3<f64>) -> Result<()> {
    let eig = m.symmetric_eigenvalues();
    let emin = eig.min();
    let emax = eig.max();
    if emin <= 0.0 {
        return Err(SagError::DegenerateCovariance(format!(
            "3x3 covariance not positive-definite (min eigenvalue {emin:.3e})"
        )));
    }
    if emax / emin > MAX_COVARIANCE_CONDITION {
        return Err(SagError::DegenerateCovariance(format!(
            "3x3 covariance condition number {:.3e} exceeds {MAX_COVARIANCE_CONDITION:.0e}",
            emax / emin
        )));
    }
    Ok(())
}

/// Inverts a 3x3 SPD matrix, failing on ill-conditioned input.
pub(crate) fn invert_spd3(m: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    check_spd3(m)?;
    m.try_inverse().ok_or_else(|| {
        SagError::DegenerateCovariance("3x3 covariance is numerically singular".into())
    })
}

/// Evaluates a 3D Gaussian at a point; the value lies in `(0, 1]` and equals
/// 1 exactly at the mean.
pub fn eval_gaussian3(g: &Gaussian3D, x: &Vector3<f64>) -> Result<f64> {
    let inv = invert_spd3(&g.covariance)?;
    let d = x - g.mean;
    Ok((-0.5 * (inv * d).dot(&d)).exp())
}

/// Evaluates a 2D Gaussian at a point.
pub fn eval_gaussian2(g: &Gaussian2D, x: &Vector2<f64>) -> Result<f64> {
    let (emin, emax) = sym2_eigen_bounds(&g.covariance);
    if emin <= 0.0 || emax / emin > MAX_COVARIANCE_CONDITION {
        return Err(SagError::DegenerateCovariance(format!(
            "2x2 covariance unusable (eigenvalues {emin:.3e}, {emax:.3e})"
        )));
    }
    let inv = g
        .covariance
        .try_inverse()
        .ok_or_else(|| SagError::DegenerateCovariance("2x2 covariance singular".into()))?;
    let d = x - g.mean;
    Ok((-0.5 * (inv * d).dot(&d)).exp())
}

/// Rigidly transforms a 3D Gaussian: `mean' = R mean + t`,
/// `covariance' = R covariance R^T`. Color and weight are unchanged.
pub fn transform_gaussian3d(g: &Gaussian3D, r: &Matrix3<f64>, t: &Vector3<f64>) -> Result<Gaussian3D> {
    let deviation = (r.transpose() * r - Matrix3::identity()).norm();
    if deviation > ROTATION_ORTHONORMALITY_TOL || (r.determinant() - 1.0).abs() > 1e-6 {
        return Err(SagError::InvalidTransform { deviation });
    }
    Ok(Gaussian3D {
        mean: r * g.mean + t,
        covariance: r * g.covariance * r.transpose(),
        color: g.color,
        weight: g.weight,
    })
}

/// Closed-form overlap integral `D_pq` of two 2D Gaussians.
pub fn overlap_integral(p: &Gaussian2D, q: &Gaussian2D) -> Result<f64> {
    let det_p = det2(&p.covariance);
    let det_q = det2(&q.covariance);
    let sum = p.covariance + q.covariance;
    let det_sum = det2(&sum);
    if det_sum <= 0.0 || det_p <= 0.0 || det_q <= 0.0 {
        return Err(SagError::DegenerateCovariance(
            "covariance sum singular in overlap integral".into(),
        ));
    }
    let inv_sum = inv2(&sum, det_sum);
    let d = p.mean - q.mean;
    let quad = (inv_sum * d).dot(&d);
    Ok(2.0 * std::f64::consts::PI * (det_p * det_q / det_sum).sqrt() * (-0.5 * quad).exp())
}

/// Color-weighted overlap `E_pq = d(c_p, c_q) D_pq`.
///
/// Skips the overlap evaluation entirely when the colors are outside the
/// similarity support, returning exactly zero.
pub fn pair_energy(p: &Gaussian2D, q: &Gaussian2D, cfg: &ColorSimilarityConfig) -> Result<f64> {
    let d = color_similarity(&p.color, &q.color, cfg);
    if d == 0.0 {
        return Ok(0.0);
    }
    Ok(d * overlap_integral(p, q)?)
}

#[inline]
pub(crate) fn det2(m: &Matrix2<f64>) -> f64 {
    m.m11 * m.m22 - m.m12 * m.m21
}

#[inline]
pub(crate) fn inv2(m: &Matrix2<f64>, det: f64) -> Matrix2<f64> {
    Matrix2::new(m.m22 / det, -m.m12 / det, -m.m21 / det, m.m11 / det)
}
