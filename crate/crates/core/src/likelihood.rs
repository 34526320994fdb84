//! Cluster likelihoods for all landmark types, plus the clutter model.
//!
//! A cluster is scored as the product of three parts: the path-count pmf of
//! the hypothesized type, a Gaussian density of the lowest-delay path around
//! the specular geometry (with a per-type delay bias), and, for rough types,
//! one scalar Gaussian factor per remaining path evaluated on its surface
//! displacement. Everything is evaluated in the log domain.

use nalgebra::Vector3;
use thiserror::Error;

use crate::chanmodel::{ClusterMeasurement, ScanConfig, StatsTable, TypeStatistics};
use crate::geom::{
    incidence_point, measurement_model, surface_displacement, ChannelParam, GeomError,
    LandmarkState, LandmarkType, Meas5, VehicleState,
};
use crate::util::wrap_angle;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LikelihoodError {
    #[error("no diffuse component for type {0:?}")]
    NoDiffuseComponent(LandmarkType),
}

/// Probability of observing `n` paths from a landmark of the given type.
pub fn cardinality_pmf(n: usize, ty: LandmarkType, table: &StatsTable) -> f64 {
    table.for_type(ty).cardinality.pmf(n)
}

/// Log-density of a diagonal Gaussian with azimuth components wrapped.
///
/// Components 1 and 3 of the measurement vector are azimuths; their residuals
/// are reduced modulo 2*pi so that densities behave across the +-pi seam.
pub fn log_gaussian_meas(z: &Meas5, mean: &Meas5, cov_diag: &Meas5) -> f64 {
    const LN_2PI: f64 = 1.8378770664093453;
    let mut log_density = 0.0;
    for i in 0..5 {
        let var = cov_diag[i];
        debug_assert!(var > 0.0, "specular variance must be positive");
        let mut r = z[i] - mean[i];
        if i == 1 || i == 3 {
            r = wrap_angle(r);
        }
        log_density += -0.5 * (LN_2PI + var.ln()) - 0.5 * r * r / var;
    }
    log_density
}

/// Predicted specular measurement for a landmark hypothesis: the geometric
/// path parameters plus the type's bias. For the BS hypothesis this is the
/// line-of-sight path to the candidate position.
pub fn specular_mean(
    landmark: &LandmarkState,
    state: &VehicleState,
    bs: &Vector3<f64>,
    stats: &TypeStatistics,
) -> Result<Meas5, GeomError> {
    let geometric = if landmark.landmark_type == LandmarkType::Bs {
        measurement_model(&landmark.va_position, state, bs, true)?
    } else {
        let x0 = incidence_point(&landmark.va_position, &state.position, bs)?;
        measurement_model(&x0, state, bs, false)?
    };
    Ok(geometric.to_vector() + stats.specular_bias)
}

/// Log-density of the lowest-delay path under a landmark hypothesis;
/// -inf when the geometry is degenerate.
pub fn log_specular_density(
    z0: &ChannelParam,
    landmark: &LandmarkState,
    state: &VehicleState,
    bs: &Vector3<f64>,
    table: &StatsTable,
) -> f64 {
    let stats = table.for_type(landmark.landmark_type);
    match specular_mean(landmark, state, bs, stats) {
        Ok(mean) => log_gaussian_meas(&z0.to_vector(), &mean, &stats.specular_cov_diag),
        Err(_) => f64::NEG_INFINITY,
    }
}

pub fn specular_density(
    z0: &ChannelParam,
    landmark: &LandmarkState,
    state: &VehicleState,
    bs: &Vector3<f64>,
    table: &StatsTable,
) -> f64 {
    log_specular_density(z0, landmark, state, bs, table).exp()
}

/// Density of a diffuse path's surface displacement under the given type.
pub fn diffuse_density(d_hat: f64, ty: LandmarkType, table: &StatsTable) -> Result<f64, LikelihoodError> {
    log_diffuse_density(d_hat, ty, table).map(f64::exp)
}

pub fn log_diffuse_density(d_hat: f64, ty: LandmarkType, table: &StatsTable) -> Result<f64, LikelihoodError> {
    let diffuse = table
        .for_type(ty)
        .diffuse
        .ok_or(LikelihoodError::NoDiffuseComponent(ty))?;
    const LN_2PI: f64 = 1.8378770664093453;
    let r = (d_hat - diffuse.mean) / diffuse.std;
    Ok(-(diffuse.std.ln()) - 0.5 * LN_2PI - 0.5 * r * r)
}

/// Options for cluster scoring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterLikelihoodParams {
    /// Log-density contributed by a diffuse path whose back-projection fails,
    /// instead of vetoing the whole cluster hypothesis.
    pub backproject_floor: f64,
    /// Treat every type's path count as exactly one (single-path baseline).
    pub force_singleton: bool,
}

impl Default for ClusterLikelihoodParams {
    fn default() -> Self {
        Self {
            backproject_floor: -40.0,
            force_singleton: false,
        }
    }
}

/// Index of the lowest-delay path, treated as the specular one.
pub fn specular_index(cluster: &ClusterMeasurement) -> Option<usize> {
    cluster
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.toa.total_cmp(&b.1.toa))
        .map(|(i, _)| i)
}

/// Log-likelihood of a whole cluster under a landmark hypothesis.
///
/// Returns -inf as a value (never errors): impossible cardinalities and
/// degenerate geometry zero out the hypothesis.
pub fn cluster_log_likelihood(
    cluster: &ClusterMeasurement,
    landmark: &LandmarkState,
    state: &VehicleState,
    bs: &Vector3<f64>,
    table: &StatsTable,
    params: &ClusterLikelihoodParams,
) -> f64 {
    let n = cluster.len();
    if n == 0 {
        return f64::NEG_INFINITY;
    }
    let pmf = if params.force_singleton {
        if n == 1 {
            1.0
        } else {
            0.0
        }
    } else {
        cardinality_pmf(n, landmark.landmark_type, table)
    };
    if pmf <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let spec_idx = specular_index(cluster).unwrap();
    let mut log_l = pmf.ln() + log_specular_density(&cluster[spec_idx], landmark, state, bs, table);
    for (i, z) in cluster.iter().enumerate() {
        if i == spec_idx {
            continue;
        }
        match surface_displacement(z, state, landmark, bs) {
            Ok(d_hat) => match log_diffuse_density(d_hat, landmark.landmark_type, table) {
                Ok(ld) => log_l += ld,
                Err(_) => return f64::NEG_INFINITY,
            },
            Err(_) => log_l += params.backproject_floor,
        }
    }
    log_l
}

/// Spatial clutter density: uniform over the configured region.
pub fn clutter_density(z: &ChannelParam, config: &ScanConfig) -> f64 {
    if config.clutter_region.contains(z) {
        1.0 / config.clutter_region.volume()
    } else {
        0.0
    }
}

/// Cluster-level clutter weight: clutter is singleton-only.
pub fn clutter_cluster_weight(cluster: &ClusterMeasurement, config: &ScanConfig) -> f64 {
    if cluster.len() != 1 {
        return 0.0;
    }
    config.clutter_rate * clutter_density(&cluster[0], config)
}
