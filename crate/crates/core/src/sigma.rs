//! Deterministic sigma-point conditioning of a 3-D Gaussian on a nonlinear
//! measurement.
//!
//! Symmetric 2n+1 points with unit spread parameter; exact for affine
//! measurement maps, which anchors the tests. Angular measurement components
//! are aligned across sigma images and wrapped in the residual so densities
//! behave across the +-pi seam.

use nalgebra::{Cholesky, Matrix3, SMatrix, SVector, Vector3};

use crate::util::wrap_angle;

/// Spread parameter of the symmetric sigma set.
pub const KAPPA: f64 = 1.0;

const N: usize = 3;

#[derive(Debug, Clone)]
pub struct UnscentedUpdate<const M: usize> {
    pub mean: Vector3<f64>,
    pub cov: Matrix3<f64>,
    /// log N(z; predicted measurement, innovation covariance)
    pub log_likelihood: f64,
    /// Set when a covariance needed an epsilon*I bump to factor.
    pub regularized: bool,
}

fn cholesky_with_regularization(cov: &Matrix3<f64>) -> Option<(Cholesky<f64, nalgebra::U3>, bool)> {
    if let Some(c) = Cholesky::new(*cov) {
        return Some((c, false));
    }
    for eps in [1e-9, 1e-6] {
        let bumped = cov + Matrix3::identity() * eps;
        if let Some(c) = Cholesky::new(bumped) {
            return Some((c, true));
        }
    }
    None
}

/// The 7 sigma points of N(mean, cov).
fn sigma_points(mean: &Vector3<f64>, cov: &Matrix3<f64>) -> Option<([Vector3<f64>; 7], bool)> {
    let (chol, regularized) = cholesky_with_regularization(cov)?;
    let scale = ((N as f64) + KAPPA).sqrt();
    let l = chol.l();
    let mut pts = [*mean; 7];
    for c in 0..N {
        let offset = scale * l.column(c);
        pts[1 + 2 * c] = mean + offset;
        pts[2 + 2 * c] = mean - offset;
    }
    Some((pts, regularized))
}

fn weights() -> (f64, f64) {
    let denom = N as f64 + KAPPA;
    (KAPPA / denom, 0.5 / denom)
}

/// Condition N(mean, cov) on measurement z with model z = g(x) + noise.
///
/// `g` may fail on a sigma point (degenerate geometry), in which case the
/// whole update is abandoned. `angular[k]` marks components treated as
/// angles. `noise_diag` holds the measurement noise variances.
pub fn unscented_update<const M: usize>(
    mean: &Vector3<f64>,
    cov: &Matrix3<f64>,
    mut g: impl FnMut(&Vector3<f64>) -> Option<SVector<f64, M>>,
    angular: &[bool; M],
    z: &SVector<f64, M>,
    noise_diag: &SVector<f64, M>,
) -> Option<UnscentedUpdate<M>> {
    let (pts, mut regularized) = sigma_points(mean, cov)?;
    let (w0, wi) = weights();

    let mut images: [SVector<f64, M>; 7] = [SVector::zeros(); 7];
    for (k, pt) in pts.iter().enumerate() {
        images[k] = g(pt)?;
        if k > 0 {
            for (c, is_angle) in angular.iter().enumerate() {
                if *is_angle {
                    images[k][c] = images[0][c] + wrap_angle(images[k][c] - images[0][c]);
                }
            }
        }
    }

    let mut z_pred: SVector<f64, M> = SVector::zeros();
    for (k, img) in images.iter().enumerate() {
        z_pred += if k == 0 { w0 } else { wi } * img;
    }

    let mut innovation_cov: SMatrix<f64, M, M> = SMatrix::from_diagonal(noise_diag);
    let mut cross_cov: SMatrix<f64, 3, M> = SMatrix::zeros();
    for (k, img) in images.iter().enumerate() {
        let w = if k == 0 { w0 } else { wi };
        let dz = img - z_pred;
        innovation_cov += w * dz * dz.transpose();
        cross_cov += w * (pts[k] - mean) * dz.transpose();
    }

    let mut residual = z - z_pred;
    for (c, is_angle) in angular.iter().enumerate() {
        if *is_angle {
            residual[c] = wrap_angle(residual[c]);
        }
    }

    let chol_s = match Cholesky::new(innovation_cov) {
        Some(c) => c,
        None => {
            regularized = true;
            Cholesky::new(innovation_cov + SMatrix::<f64, M, M>::identity() * 1e-9)?
        }
    };

    const LN_2PI: f64 = 1.8378770664093453;
    let log_det: f64 = 2.0 * chol_s.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let whitened = chol_s.solve(&residual);
    let log_likelihood = -0.5 * ((M as f64) * LN_2PI + log_det + residual.dot(&whitened));

    // K = C S^-1, via S K^T = C^T
    let gain = chol_s.solve(&cross_cov.transpose()).transpose();
    let new_mean = mean + gain * residual;
    let mut new_cov = cov - gain * innovation_cov * gain.transpose();
    new_cov = (new_cov + new_cov.transpose()) * 0.5;

    Some(UnscentedUpdate {
        mean: new_mean,
        cov: new_cov,
        log_likelihood,
        regularized,
    })
}
