//! Per-particle map density: a Poisson process over undetected landmarks and
//! a multi-Bernoulli mixture over detected ones.
//!
//! Landmark state densities are Gaussian mixtures over the four type
//! hypotheses; nonlinear conditioning goes through the sigma-point update.
//! The scan update enumerates association hypotheses per predecessor with
//! Murty's algorithm on the standard cost matrix of detection, misdetection
//! and new-target weights.

use nalgebra::{DMatrix, Matrix3, SVector, Vector3};
use serde::Serialize;
use std::collections::BTreeMap;

use crate::chanmodel::{ClusterMeasurement, ScanConfig, StatsTable};
use crate::geom::{
    aoa_direction_global, backproject, displacement_to_surface, ChannelParam, LandmarkState,
    LandmarkType, VehicleState,
};
use crate::likelihood::{clutter_cluster_weight, specular_index, specular_mean};
use crate::sigma::unscented_update;
use crate::util::log_sum_exp;
use crate::{assignment, likelihood};

/// Weights below exp(-690) are treated as zero but kept finite so cost
/// matrices stay feasible.
const MIN_LOG_WEIGHT: f64 = -690.0;

/// One type hypothesis of a landmark: its probability and Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TypeComponent {
    pub weight: f64,
    pub mean: Vector3<f64>,
    pub cov: Matrix3<f64>,
}

/// Gaussian-mixture-over-types landmark density.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LandmarkDensity {
    pub components: [TypeComponent; 4],
}

impl LandmarkDensity {
    /// All probability on one type.
    pub fn point_prior(ty: LandmarkType, mean: Vector3<f64>, cov: Matrix3<f64>) -> Self {
        let mut components = [TypeComponent { weight: 0.0, mean, cov }; 4];
        components[ty.index()].weight = 1.0;
        Self { components }
    }

    pub fn map_type(&self) -> LandmarkType {
        LandmarkType::ALL
            .into_iter()
            .max_by(|a, b| {
                self.components[a.index()]
                    .weight
                    .total_cmp(&self.components[b.index()].weight)
            })
            .unwrap()
    }

    pub fn map_component(&self) -> &TypeComponent {
        &self.components[self.map_type().index()]
    }

    fn normalize(&mut self) {
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if total > 0.0 {
            for c in &mut self.components {
                c.weight /= total;
            }
        }
    }
}

/// A potentially existing landmark.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BernoulliComponent {
    pub id: u64,
    pub existence: f64,
    pub density: LandmarkDensity,
}

/// One association history with its (normalized) log-weight.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlobalHypothesis {
    pub log_weight: f64,
    pub bernoullis: Vec<BernoulliComponent>,
}

/// Undetected-landmark intensity, bookkept as a scalar mass per type; births
/// themselves are seeded from the measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PppIntensity {
    pub masses: [f64; 4],
}

impl PppIntensity {
    pub fn total(&self) -> f64 {
        self.masses.iter().sum()
    }
}

/// The full per-particle map density.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PmbmMap {
    pub ppp: PppIntensity,
    pub hypotheses: Vec<GlobalHypothesis>,
    next_id: u64,
}

impl PmbmMap {
    pub fn empty() -> Self {
        Self {
            ppp: PppIntensity { masses: [0.0; 4] },
            hypotheses: vec![GlobalHypothesis {
                log_weight: 0.0,
                bernoullis: Vec::new(),
            }],
            next_id: 0,
        }
    }

    /// Map primed with the known base station: existence one, near-Dirac position.
    pub fn with_bs_prior(bs: &Vector3<f64>) -> Self {
        let mut map = Self::empty();
        let id = map.fresh_id();
        map.hypotheses[0].bernoullis.push(BernoulliComponent {
            id,
            existence: 1.0,
            density: LandmarkDensity::point_prior(LandmarkType::Bs, *bs, Matrix3::identity() * 1e-6),
        });
        map
    }

    fn fresh_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    pub fn best_hypothesis(&self) -> &GlobalHypothesis {
        self.hypotheses
            .iter()
            .max_by(|a, b| a.log_weight.total_cmp(&b.log_weight))
            .expect("map carries at least one hypothesis")
    }
}

/// Filter configuration shared by all particles.
#[derive(Debug, Clone)]
pub struct FilterParams {
    pub p_detect: f64,
    pub p_survive: f64,
    /// Birth mass added to the undetected intensity per prediction.
    pub birth_weight: f64,
    /// Standard deviation of a birth candidate's position prior, per axis.
    pub birth_std: f64,
    pub r_min: f64,
    /// Relative hypothesis weight threshold.
    pub hypothesis_weight_threshold: f64,
    pub max_hypotheses: usize,
    /// Log-density floor for diffuse paths whose back-projection fails.
    pub backproject_floor: f64,
    /// Single-path baseline: every cluster scored as if exactly one path.
    pub specular_only: bool,
    pub stats: StatsTable,
    pub scan: ScanConfig,
    pub bs: Vector3<f64>,
}

impl FilterParams {
    pub fn new(bs: Vector3<f64>, scan: ScanConfig) -> Self {
        Self {
            p_detect: scan.detection_prob,
            p_survive: 0.99,
            birth_weight: 1e-4,
            birth_std: 5.0,
            r_min: 1e-5,
            hypothesis_weight_threshold: 1e-4,
            max_hypotheses: 10,
            backproject_floor: -40.0,
            specular_only: false,
            stats: StatsTable::default(),
            scan,
            bs,
        }
    }

    fn cardinality_pmf(&self, n: usize, ty: LandmarkType) -> f64 {
        if self.specular_only {
            if n == 1 {
                1.0
            } else {
                0.0
            }
        } else {
            likelihood::cardinality_pmf(n, ty, &self.stats)
        }
    }
}

/// Map prediction: survival scaling plus fresh birth mass (landmarks are static).
pub fn predict_map(map: &mut PmbmMap, params: &FilterParams) {
    let per_type_birth = params.birth_weight / 3.0;
    for ty in [LandmarkType::Sm, LandmarkType::Mr, LandmarkType::Vr] {
        map.ppp.masses[ty.index()] =
            params.p_survive * map.ppp.masses[ty.index()] + per_type_birth;
    }
    map.ppp.masses[LandmarkType::Bs.index()] *= params.p_survive;
    for hyp in &mut map.hypotheses {
        for bern in &mut hyp.bernoullis {
            bern.existence *= params.p_survive;
        }
    }
}

/// A cluster with its specular path singled out and the diffuse paths
/// back-projected once per (particle, scan).
#[derive(Debug, Clone)]
pub struct PreparedCluster {
    pub specular: ChannelParam,
    pub diffuse: Vec<(ChannelParam, Option<Vector3<f64>>)>,
    pub size: usize,
    pub log_clutter_weight: f64,
}

pub fn prepare_cluster(
    cluster: &ClusterMeasurement,
    state: &VehicleState,
    params: &FilterParams,
) -> PreparedCluster {
    let spec_idx = specular_index(cluster).expect("cluster must be nonempty");
    let diffuse = cluster
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != spec_idx)
        .map(|(_, z)| (*z, backproject(z, state, &params.bs).ok()))
        .collect();
    PreparedCluster {
        specular: cluster[spec_idx],
        diffuse,
        size: cluster.len(),
        log_clutter_weight: clutter_cluster_weight(cluster, &params.scan).ln(),
    }
}

/// Result of conditioning a landmark density on one cluster.
#[derive(Debug, Clone)]
pub struct MomentMatchResult {
    pub density: LandmarkDensity,
    /// log of the cluster likelihood marginalized over the landmark density
    /// (without the detection probability factor).
    pub log_marginal: f64,
    pub regularized: bool,
}

/// Condition a landmark density on a cluster: sigma-point update of each type
/// Gaussian through the specular geometry, then one scalar displacement update
/// per diffuse path; type weights are reweighted by their marginals.
pub fn moment_match_update(
    density: &LandmarkDensity,
    cluster: &PreparedCluster,
    state: &VehicleState,
    params: &FilterParams,
) -> MomentMatchResult {
    let z0 = cluster.specular.to_vector();
    let angular = [false, true, false, true, false];
    let mut posterior = density.clone();
    let mut log_type_weights = [f64::NEG_INFINITY; 4];
    let mut regularized = false;

    for ty in LandmarkType::ALL {
        let prior = &density.components[ty.index()];
        if prior.weight <= 0.0 {
            continue;
        }
        let pmf = params.cardinality_pmf(cluster.size, ty);
        if pmf <= 0.0 {
            posterior.components[ty.index()].weight = 0.0;
            continue;
        }
        let stats = params.stats.for_type(ty);
        let spec_update = unscented_update(
            &prior.mean,
            &prior.cov,
            |x| {
                let lm = LandmarkState {
                    va_position: *x,
                    landmark_type: ty,
                };
                specular_mean(&lm, state, &params.bs, stats).ok().map(SVector::from)
            },
            &angular,
            &z0,
            &stats.specular_cov_diag,
        );
        let Some(upd) = spec_update else {
            posterior.components[ty.index()].weight = 0.0;
            continue;
        };
        regularized |= upd.regularized;
        let mut log_marginal = pmf.ln() + upd.log_likelihood;
        let mut mean = upd.mean;
        let mut cov = upd.cov;

        if let Some(diffuse) = stats.diffuse {
            let z_d = SVector::<f64, 1>::new(diffuse.mean);
            let noise = SVector::<f64, 1>::new(diffuse.std * diffuse.std);
            for (_, projected) in &cluster.diffuse {
                let Some(point) = projected else {
                    log_marginal += params.backproject_floor;
                    continue;
                };
                let d_update = unscented_update(
                    &mean,
                    &cov,
                    |x| {
                        displacement_to_surface(point, x, &params.bs)
                            .ok()
                            .map(SVector::<f64, 1>::new)
                    },
                    &[false],
                    &z_d,
                    &noise,
                );
                match d_update {
                    Some(upd) => {
                        regularized |= upd.regularized;
                        log_marginal += upd.log_likelihood;
                        mean = upd.mean;
                        cov = upd.cov;
                    }
                    None => log_marginal += params.backproject_floor,
                }
            }
        } else {
            // types without a diffuse model only ever see singleton clusters
            debug_assert!(cluster.diffuse.is_empty() || pmf == 0.0);
        }

        posterior.components[ty.index()].mean = mean;
        posterior.components[ty.index()].cov = cov;
        log_type_weights[ty.index()] = prior.weight.ln() + log_marginal;
    }

    let total = log_sum_exp(&log_type_weights);
    if total == f64::NEG_INFINITY {
        return MomentMatchResult {
            density: density.clone(),
            log_marginal: f64::NEG_INFINITY,
            regularized,
        };
    }
    for ty in LandmarkType::ALL {
        let lw = log_type_weights[ty.index()];
        posterior.components[ty.index()].weight = if lw == f64::NEG_INFINITY {
            0.0
        } else {
            (lw - total).exp()
        };
    }
    posterior.normalize();
    MomentMatchResult {
        density: posterior,
        log_marginal: total,
        regularized,
    }
}

/// Birth candidate density for a cluster: per type, the anchor sits on the
/// arrival ray at the bias-corrected path length (the mirror image continues
/// straight through the incidence point), with an inflated position prior.
/// Type weights follow the per-type undetected masses.
fn birth_density(
    cluster: &PreparedCluster,
    state: &VehicleState,
    params: &FilterParams,
    ppp: &PppIntensity,
) -> Option<LandmarkDensity> {
    let u = aoa_direction_global(&cluster.specular, state);
    let cov = Matrix3::identity() * (params.birth_std * params.birth_std);
    let mut components = [TypeComponent { weight: 0.0, mean: state.position, cov }; 4];
    let mut total = 0.0;
    for ty in [LandmarkType::Sm, LandmarkType::Mr, LandmarkType::Vr] {
        let stats = params.stats.for_type(ty);
        let range = cluster.specular.toa - state.clock_bias - stats.specular_bias[0];
        if range <= 1e-6 {
            continue;
        }
        let mean = state.position + range * u;
        if (mean - params.bs).norm() <= 1e-6 {
            continue;
        }
        let mass = ppp.masses[ty.index()];
        if mass <= 0.0 {
            continue;
        }
        components[ty.index()] = TypeComponent { weight: mass, mean, cov };
        total += mass;
    }
    if total <= 0.0 {
        return None;
    }
    let mut density = LandmarkDensity { components };
    density.normalize();
    Some(density)
}

struct BirthCandidate {
    bernoulli: BernoulliComponent,
    log_new_weight: f64,
}

fn birth_candidate(
    cluster: &PreparedCluster,
    state: &VehicleState,
    params: &FilterParams,
    ppp: &PppIntensity,
    id: u64,
    regularized: &mut bool,
) -> BirthCandidate {
    let (density, log_rho) = match birth_density(cluster, state, params, ppp) {
        Some(prior) => {
            let mm = moment_match_update(&prior, cluster, state, params);
            *regularized |= mm.regularized;
            let log_rho = if mm.log_marginal > f64::NEG_INFINITY {
                params.p_detect.ln() + ppp.total().max(1e-300).ln() + mm.log_marginal
            } else {
                f64::NEG_INFINITY
            };
            (mm.density, log_rho)
        }
        None => (
            LandmarkDensity::point_prior(
                LandmarkType::Sm,
                state.position,
                Matrix3::identity() * (params.birth_std * params.birth_std),
            ),
            f64::NEG_INFINITY,
        ),
    };
    // floor keeps the new-target column assignable even for hopeless clusters
    let log_rho = log_rho.max(MIN_LOG_WEIGHT + cluster.size as f64 * params.backproject_floor);
    let log_new_weight = log_sum_exp(&[cluster.log_clutter_weight, log_rho]);
    let existence = (log_rho - log_new_weight).exp().clamp(0.0, 1.0);
    BirthCandidate {
        bernoulli: BernoulliComponent {
            id,
            existence,
            density,
        },
        log_new_weight,
    }
}

/// Data the vehicle filter needs from a map update.
#[derive(Debug, Clone)]
pub struct MapUpdateResult {
    /// Unnormalized log-masses of the updated global hypotheses.
    pub log_hypothesis_masses: Vec<f64>,
    pub regularized: bool,
}

/// Scan update: the four association cases, ranked per predecessor hypothesis
/// with Murty's algorithm, then hypothesis weights renormalized.
pub fn update_map(
    map: &mut PmbmMap,
    scan: &[ClusterMeasurement],
    state: &VehicleState,
    params: &FilterParams,
) -> MapUpdateResult {
    let mut regularized = false;
    let prepared: Vec<PreparedCluster> = scan
        .iter()
        .filter(|c| !c.is_empty())
        .map(|c| prepare_cluster(c, state, params))
        .collect();
    let m = prepared.len();

    // case (b): one shared birth candidate per cluster
    let ppp = map.ppp;
    let births: Vec<BirthCandidate> = prepared
        .iter()
        .map(|cluster| {
            let id = map.fresh_id();
            birth_candidate(cluster, state, params, &ppp, id, &mut regularized)
        })
        .collect();

    let mut children: Vec<GlobalHypothesis> = Vec::new();
    let mut child_log_masses: Vec<f64> = Vec::new();

    for hyp in &map.hypotheses {
        let tracks = hyp.bernoullis.len();

        // case (c): misdetection weights and components
        let log_mis: Vec<f64> = hyp
            .bernoullis
            .iter()
            .map(|b| (1.0 - b.existence * params.p_detect).max(0.0).ln())
            .collect();
        let misdetected: Vec<BernoulliComponent> = hyp
            .bernoullis
            .iter()
            .map(|b| {
                let denom = 1.0 - params.p_detect * b.existence;
                BernoulliComponent {
                    id: b.id,
                    existence: if denom > 0.0 {
                        ((1.0 - params.p_detect) * b.existence / denom).clamp(0.0, 1.0)
                    } else {
                        0.0
                    },
                    density: b.density.clone(),
                }
            })
            .collect();

        // case (d): detection weights and posteriors
        let mut log_detect = DMatrix::from_element(m, tracks, f64::NEG_INFINITY);
        let mut detected: Vec<Vec<Option<BernoulliComponent>>> = vec![vec![None; tracks]; m];
        for (i, cluster) in prepared.iter().enumerate() {
            for (j, bern) in hyp.bernoullis.iter().enumerate() {
                if bern.existence <= 0.0 {
                    continue;
                }
                let mm = moment_match_update(&bern.density, cluster, state, params);
                regularized |= mm.regularized;
                if mm.log_marginal == f64::NEG_INFINITY {
                    continue;
                }
                log_detect[(i, j)] =
                    bern.existence.ln() + params.p_detect.ln() + mm.log_marginal;
                detected[i][j] = Some(BernoulliComponent {
                    id: bern.id,
                    existence: 1.0,
                    density: mm.density,
                });
            }
        }

        let log_new: Vec<f64> = births.iter().map(|b| b.log_new_weight).collect();
        let cost = assignment::build_cost_matrix(&log_detect, &log_mis, &log_new);
        let k = ((params.max_hypotheses as f64) * hyp.log_weight.exp()).ceil() as usize;
        let assignments = match assignment::murty_k_best(&cost.costs, k.max(1)) {
            Ok(list) => list,
            Err(_) => continue,
        };

        for assignment in assignments {
            let mut bernoullis = misdetected.clone();
            for (i, &col) in assignment.assignment.iter().enumerate() {
                if col < tracks {
                    bernoullis[col] = detected[i][col]
                        .clone()
                        .expect("finite detection cost implies a posterior");
                } else {
                    debug_assert_eq!(col, tracks + i);
                    bernoullis.push(births[i].bernoulli.clone());
                }
            }
            let log_mass = hyp.log_weight + cost.constant - assignment.cost;
            children.push(GlobalHypothesis {
                log_weight: log_mass,
                bernoullis,
            });
            child_log_masses.push(log_mass);
        }
    }

    // case (a): undetected stay undetected
    for mass in &mut map.ppp.masses {
        *mass *= 1.0 - params.p_detect;
    }

    let total = log_sum_exp(&child_log_masses);
    if total > f64::NEG_INFINITY {
        for child in &mut children {
            child.log_weight -= total;
        }
    }
    if !children.is_empty() {
        map.hypotheses = children;
    }
    MapUpdateResult {
        log_hypothesis_masses: child_log_masses,
        regularized,
    }
}

/// Drop negligible hypotheses and Bernoullis, cap the mixture size, renormalize.
pub fn prune(map: &mut PmbmMap, params: &FilterParams) {
    let max_log_w = map
        .hypotheses
        .iter()
        .map(|h| h.log_weight)
        .fold(f64::NEG_INFINITY, f64::max);
    let cutoff = max_log_w + params.hypothesis_weight_threshold.ln();
    map.hypotheses.retain(|h| h.log_weight >= cutoff);
    map.hypotheses
        .sort_by(|a, b| b.log_weight.total_cmp(&a.log_weight));
    map.hypotheses.truncate(params.max_hypotheses.max(1));
    for hyp in &mut map.hypotheses {
        hyp.bernoullis.retain(|b| b.existence >= params.r_min);
    }
    let total = log_sum_exp(&map.hypotheses.iter().map(|h| h.log_weight).collect::<Vec<_>>());
    for hyp in &mut map.hypotheses {
        hyp.log_weight -= total;
    }
}

/// One reported landmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MapEstimate {
    pub position: Vector3<f64>,
    pub landmark_type: LandmarkType,
    pub existence: f64,
}

/// Landmarks of the highest-weight hypothesis with existence above threshold;
/// position and type are the MAP type component.
pub fn estimate_map(map: &PmbmMap, existence_threshold: f64) -> Vec<MapEstimate> {
    map.best_hypothesis()
        .bernoullis
        .iter()
        .filter(|b| b.existence > existence_threshold)
        .map(|b| MapEstimate {
            position: b.density.map_component().mean,
            landmark_type: b.density.map_type(),
            existence: b.existence,
        })
        .collect()
}

/// JSON-friendly snapshot: Bernoullis of the best hypothesis plus all
/// hypothesis weights.
#[derive(Debug, Clone, Serialize)]
pub struct MapSnapshot {
    pub bernoullis: Vec<BernoulliSnapshot>,
    pub hypothesis_weights: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BernoulliSnapshot {
    pub id: u64,
    pub r: f64,
    pub types: BTreeMap<String, TypeSnapshot>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TypeSnapshot {
    pub w: f64,
    pub mean: [f64; 3],
    pub cov: [f64; 9],
}

pub fn snapshot(map: &PmbmMap) -> MapSnapshot {
    let best = map.best_hypothesis();
    MapSnapshot {
        bernoullis: best
            .bernoullis
            .iter()
            .map(|b| BernoulliSnapshot {
                id: b.id,
                r: b.existence,
                types: LandmarkType::ALL
                    .into_iter()
                    .map(|ty| {
                        let c = &b.density.components[ty.index()];
                        let mut cov = [0.0; 9];
                        for row in 0..3 {
                            for col in 0..3 {
                                cov[row * 3 + col] = c.cov[(row, col)];
                            }
                        }
                        (
                            ty.label().to_string(),
                            TypeSnapshot {
                                w: c.weight,
                                mean: [c.mean.x, c.mean.y, c.mean.z],
                                cov,
                            },
                        )
                    })
                    .collect(),
            })
            .collect(),
        hypothesis_weights: map.hypotheses.iter().map(|h| h.log_weight.exp()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chanmodel::{sample_cluster, ClutterRegion, Environment};
    use crate::geom::SurfaceSpec;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scan_config() -> ScanConfig {
        ScanConfig {
            detection_prob: 0.9,
            clutter_rate: 1.0,
            clutter_region: ClutterRegion {
                toa_min: 301.0,
                toa_max: 550.0,
                el_min: -std::f64::consts::FRAC_PI_4,
                el_max: std::f64::consts::FRAC_PI_4,
            },
        }
    }

    fn params() -> FilterParams {
        FilterParams::new(Vector3::new(0.0, 0.0, 10.0), scan_config())
    }

    fn state() -> VehicleState {
        VehicleState::new(Vector3::new(40.0, 20.0, 0.0), 0.7, 22.22, 0.3, 300.0)
    }

    fn va_density(ty: LandmarkType, mean: Vector3<f64>, std: f64) -> LandmarkDensity {
        LandmarkDensity::point_prior(ty, mean, Matrix3::identity() * (std * std))
    }

    #[test]
    fn predict_with_unit_survival_and_no_birth_is_identity() {
        let mut p = params();
        p.p_survive = 1.0;
        p.birth_weight = 0.0;
        let mut map = PmbmMap::with_bs_prior(&p.bs);
        let before = map.clone();
        predict_map(&mut map, &p);
        assert_eq!(map, before);
    }

    #[test]
    fn predict_scales_existence() {
        let mut p = params();
        p.p_survive = 0.99;
        let mut map = PmbmMap::empty();
        map.hypotheses[0].bernoullis.push(BernoulliComponent {
            id: 7,
            existence: 0.8,
            density: va_density(LandmarkType::Sm, Vector3::new(160.0, 0.0, 10.0), 1.0),
        });
        predict_map(&mut map, &p);
        assert_abs_diff_eq!(map.hypotheses[0].bernoullis[0].existence, 0.792, epsilon = 1e-12);
        predict_map(&mut map, &p);
        assert_abs_diff_eq!(
            map.hypotheses[0].bernoullis[0].existence,
            0.8 * 0.99 * 0.99,
            epsilon = 1e-12
        );
    }

    fn exact_cluster_for(va: Vector3<f64>, ty: LandmarkType, p: &FilterParams, s: &VehicleState) -> ClusterMeasurement {
        let lm = LandmarkState { va_position: va, landmark_type: ty };
        let mean = specular_mean(&lm, s, &p.bs, p.stats.for_type(ty)).unwrap();
        vec![ChannelParam::from_vector(&mean)]
    }

    #[test]
    fn moment_match_at_prior_mean_keeps_mean_and_shrinks_cov() {
        let mut p = params();
        // near-zero measurement noise
        for entry in p.stats.entries.iter_mut() {
            entry.specular_cov_diag = crate::geom::Meas5::repeat(1e-12);
        }
        let s = state();
        let va = Vector3::new(160.0, 0.0, 10.0);
        let prior_std = 0.5;
        let density = va_density(LandmarkType::Sm, va, prior_std);
        let cluster = exact_cluster_for(va, LandmarkType::Sm, &p, &s);
        let prep = prepare_cluster(&cluster, &s, &p);
        let mm = moment_match_update(&density, &prep, &s, &p);
        let post = &mm.density.components[LandmarkType::Sm.index()];
        // the mean may drift by the (small) nonlinearity of the measurement
        // map over the sigma spread, nothing more
        assert!(
            (post.mean - va).norm() < 0.05 * prior_std,
            "mean moved to {:?}",
            post.mean
        );
        assert!(
            post.cov.trace() < 3.0 * prior_std * prior_std - 1e-6,
            "trace {}",
            post.cov.trace()
        );
        assert!(mm.log_marginal.is_finite());
    }

    #[test]
    fn cluster_of_three_zeroes_singleton_types() {
        let p = params();
        let s = state();
        let va = Vector3::new(160.0, 0.0, 10.0);
        let mut density = va_density(LandmarkType::Mr, va, 2.0);
        // spread weight over all four types
        for c in density.components.iter_mut() {
            c.weight = 0.25;
        }
        let lm = LandmarkState { va_position: va, landmark_type: LandmarkType::Mr };
        let mean = specular_mean(&lm, &s, &p.bs, p.stats.for_type(LandmarkType::Mr)).unwrap();
        let z0 = ChannelParam::from_vector(&mean);
        let mut z1 = z0;
        z1.toa += 1.0;
        let mut z2 = z0;
        z2.toa += 1.5;
        let prep = prepare_cluster(&vec![z0, z1, z2], &s, &p);
        let mm = moment_match_update(&density, &prep, &s, &p);
        assert_eq!(mm.density.components[LandmarkType::Sm.index()].weight, 0.0);
        assert_eq!(mm.density.components[LandmarkType::Bs.index()].weight, 0.0);
        let w_mr = mm.density.components[LandmarkType::Mr.index()].weight;
        let w_vr = mm.density.components[LandmarkType::Vr.index()].weight;
        assert_abs_diff_eq!(w_mr + w_vr, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn empty_scan_applies_case_c() {
        let mut p = params();
        p.p_detect = 0.9;
        let mut map = PmbmMap::empty();
        map.hypotheses[0].bernoullis.push(BernoulliComponent {
            id: 0,
            existence: 0.5,
            density: va_density(LandmarkType::Sm, Vector3::new(160.0, 0.0, 10.0), 1.0),
        });
        let s = state();
        let result = update_map(&mut map, &[], &s, &p);
        assert_eq!(result.log_hypothesis_masses.len(), 1);
        // l' = (1 - r p_D) = 0.55
        assert_abs_diff_eq!(result.log_hypothesis_masses[0], 0.55f64.ln(), epsilon = 1e-12);
        let bern = &map.hypotheses[0].bernoullis[0];
        // r' = (1-p_D) r / (1 - p_D r) = 0.05 / 0.55
        assert_abs_diff_eq!(bern.existence, 0.05 / 0.55, epsilon = 1e-12);
        assert_abs_diff_eq!(map.hypotheses[0].log_weight, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_detection_probability_leaves_landmarks_unchanged() {
        let mut p = params();
        p.p_detect = 0.0;
        let mut map = PmbmMap::empty();
        let density = va_density(LandmarkType::Sm, Vector3::new(160.0, 0.0, 10.0), 1.0);
        map.hypotheses[0].bernoullis.push(BernoulliComponent {
            id: 0,
            existence: 0.5,
            density: density.clone(),
        });
        map.ppp.masses = [0.0, 1e-4, 1e-4, 1e-4];
        let s = state();
        // a clutter singleton inside the region
        let z = ChannelParam {
            toa: 400.0,
            aoa_az: 0.3,
            aoa_el: 0.1,
            aod_az: -0.5,
            aod_el: 0.0,
        };
        update_map(&mut map, &[vec![z]], &s, &p);
        prune(&mut map, &p);
        let hyp = &map.hypotheses[0];
        assert_eq!(hyp.bernoullis.len(), 1, "clutter birth should be pruned at r=0");
        assert_abs_diff_eq!(hyp.bernoullis[0].existence, 0.5, epsilon = 1e-12);
        assert_eq!(hyp.bernoullis[0].density, density);
    }

    #[test]
    fn single_cluster_single_bernoulli_matches_two_case_enumeration() {
        let mut p = params();
        p.max_hypotheses = 10;
        let s = state();
        let va = Vector3::new(160.0, 0.0, 10.0);
        let density = va_density(LandmarkType::Sm, va, 1.0);
        let r = 0.6;
        let mut map = PmbmMap::empty();
        map.hypotheses[0].bernoullis.push(BernoulliComponent {
            id: 0,
            existence: r,
            density: density.clone(),
        });
        map.ppp.masses = [0.0, 1e-4 / 3.0, 1e-4 / 3.0, 1e-4 / 3.0];
        let cluster = exact_cluster_for(va, LandmarkType::Sm, &p, &s);
        let scan = vec![cluster.clone()];

        // oracle: the two global hypotheses by hand from the update formulas
        let prep = prepare_cluster(&cluster, &s, &p);
        let mm = moment_match_update(&density, &prep, &s, &p);
        let log_l_detect = r.ln() + p.p_detect.ln() + mm.log_marginal;
        let birth = birth_candidate(&prep, &s, &p, &map.ppp.clone(), 99, &mut false);
        let log_l_miss_and_new =
            (1.0 - r * p.p_detect).ln() + birth.log_new_weight;

        let result = update_map(&mut map, &scan, &s, &p);
        let mut masses = result.log_hypothesis_masses.clone();
        masses.sort_by(|a, b| b.total_cmp(a));
        let mut expected = vec![log_l_detect, log_l_miss_and_new];
        expected.sort_by(|a, b| b.total_cmp(a));
        assert_eq!(masses.len(), 2);
        for (got, want) in masses.iter().zip(&expected) {
            assert_abs_diff_eq!(*got, *want, epsilon = 1e-9);
        }
        // normalized weights sum to one
        let sum: f64 = map.hypotheses.iter().map(|h| h.log_weight.exp()).sum();
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
        // detected branch carries existence one
        let detected = map
            .hypotheses
            .iter()
            .max_by(|a, b| a.log_weight.total_cmp(&b.log_weight))
            .unwrap();
        assert_abs_diff_eq!(detected.bernoullis[0].existence, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn case_c_never_raises_existence() {
        for r in [0.0, 0.2, 0.5, 0.8, 1.0] {
            for p_d in [0.0, 0.3, 0.9, 1.0] {
                let denom = 1.0 - p_d * r;
                if denom <= 0.0 {
                    continue;
                }
                let r_miss = (1.0 - p_d) * r / denom;
                assert!(r_miss <= r + 1e-12, "r'={r_miss} r={r} p_d={p_d}");
            }
        }
    }

    #[test]
    fn prune_caps_and_renormalizes() {
        let mut p = params();
        p.max_hypotheses = 5;
        let mut map = PmbmMap::empty();
        map.hypotheses = (0..8)
            .map(|_| GlobalHypothesis {
                log_weight: (1.0f64 / 8.0).ln(),
                bernoullis: Vec::new(),
            })
            .collect();
        prune(&mut map, &p);
        assert_eq!(map.hypotheses.len(), 5);
        let sum: f64 = map.hypotheses.iter().map(|h| h.log_weight.exp()).sum();
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-9);
        let before = map.clone();
        prune(&mut map, &p);
        assert_eq!(map, before);
    }

    #[test]
    fn prune_drops_tiny_bernoullis() {
        let p = params();
        let mut map = PmbmMap::empty();
        map.hypotheses[0].bernoullis.push(BernoulliComponent {
            id: 0,
            existence: 1e-6,
            density: va_density(LandmarkType::Sm, Vector3::new(160.0, 0.0, 10.0), 1.0),
        });
        prune(&mut map, &p);
        assert!(map.hypotheses[0].bernoullis.is_empty());
    }

    #[test]
    fn estimate_map_threshold() {
        let mut map = PmbmMap::empty();
        assert!(estimate_map(&map, 0.5).is_empty());
        let mut density = va_density(LandmarkType::Vr, Vector3::new(160.0, 0.0, 10.0), 1.0);
        density.components[LandmarkType::Vr.index()].weight = 0.95;
        density.components[LandmarkType::Mr.index()].weight = 0.05;
        map.hypotheses[0].bernoullis.push(BernoulliComponent {
            id: 0,
            existence: 0.9,
            density,
        });
        map.hypotheses[0].bernoullis.push(BernoulliComponent {
            id: 1,
            existence: 0.4,
            density: va_density(LandmarkType::Sm, Vector3::new(0.0, 160.0, 10.0), 1.0),
        });
        let est = estimate_map(&map, 0.5);
        assert_eq!(est.len(), 1);
        assert_eq!(est[0].landmark_type, LandmarkType::Vr);
        assert_abs_diff_eq!(est[0].existence, 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(est[0].position, Vector3::new(160.0, 0.0, 10.0), epsilon = 1e-12);
    }

    #[test]
    fn map_type_converges_to_truth_with_certain_detection() {
        let env = Environment {
            bs: Vector3::new(0.0, 0.0, 10.0),
            surfaces: vec![SurfaceSpec {
                point_on_plane: Vector3::new(80.0, 0.0, 0.0),
                unit_normal: Vector3::new(1.0, 0.0, 0.0),
                surface_type: LandmarkType::Vr,
            }],
        };
        for true_ty in [LandmarkType::Sm, LandmarkType::Mr, LandmarkType::Vr] {
            let mut env = env.clone();
            env.surfaces[0].surface_type = true_ty;
            let landmark = env.landmarks()[1];
            let mut p = params();
            p.p_detect = 1.0;
            p.scan.detection_prob = 1.0;
            p.scan.clutter_rate = 0.0;
            let s = state();
            let mut successes = 0;
            let trials = 100;
            for seed in 0..trials {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut map = PmbmMap::with_bs_prior(&p.bs);
                for _ in 0..5 {
                    predict_map(&mut map, &p);
                    let cluster =
                        sample_cluster(&landmark, &s, p.stats.for_type(true_ty), &p.bs, &mut rng)
                            .unwrap();
                    update_map(&mut map, &[cluster], &s, &p);
                    prune(&mut map, &p);
                }
                let est = estimate_map(&map, 0.5);
                let found = est
                    .iter()
                    .any(|e| e.landmark_type == true_ty && (e.position - landmark.va_position).norm() < 10.0);
                if found {
                    successes += 1;
                }
            }
            assert!(
                successes >= 95,
                "{true_ty:?}: only {successes}/{trials} trials converged"
            );
        }
    }
}
