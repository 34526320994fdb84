//! Statistical forward simulator for multipath clusters.
//!
//! Each landmark produces, per scan, a cluster of channel parameters: one
//! specular path drawn around the geometric prediction, plus (for rough
//! surfaces) diffuse paths generated from random scatter points displaced
//! out of the surface plane. Clutter enters as independent singleton
//! clusters, uniform over a configured region.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geom::{
    incidence_point, measurement_model, reflect_bs, specular_axes, ChannelParam, LandmarkState,
    LandmarkType, Meas5, SurfaceSpec, VehicleState,
};
use crate::util::wrap_angle;

/// One cluster: the set of paths attributed to a single source.
pub type ClusterMeasurement = Vec<ChannelParam>;

/// One scan: the clusters observed in a single time step, in arbitrary order.
pub type Scan = Vec<ClusterMeasurement>;

/// Number-of-paths model per surface type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Cardinality {
    /// Always exactly this many paths.
    Dirac(usize),
    /// `shift + G` with `P(G = n) = (1 - p)^n p`.
    ShiftedGeometric { shift: usize, p: f64 },
}

impl Cardinality {
    pub fn pmf(&self, n: usize) -> f64 {
        match *self {
            Cardinality::Dirac(k) => {
                if n == k {
                    1.0
                } else {
                    0.0
                }
            }
            Cardinality::ShiftedGeometric { shift, p } => {
                if n < shift {
                    0.0
                } else {
                    (1.0 - p).powi((n - shift) as i32) * p
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Cardinality::Dirac(k) => k as f64,
            Cardinality::ShiftedGeometric { shift, p } => shift as f64 + (1.0 - p) / p,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match *self {
            Cardinality::Dirac(k) => k,
            Cardinality::ShiftedGeometric { shift, p } => {
                if p >= 1.0 {
                    return shift;
                }
                // inverse-CDF of the geometric tail
                let u: f64 = rng.gen();
                let g = ((1.0 - u).ln() / (1.0 - p).ln()).floor() as usize;
                shift + g
            }
        }
    }
}

/// Scalar Gaussian parameters for the diffuse surface displacement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffuseStats {
    pub mean: f64,
    pub std: f64,
}

/// Per-type measurement statistics: path count, specular bias and covariance,
/// diffuse displacement law, and the in-plane scatter spread used only when
/// simulating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeStatistics {
    pub cardinality: Cardinality,
    pub specular_bias: Meas5,
    /// Diagonal of the specular covariance (variances, measurement order).
    pub specular_cov_diag: Meas5,
    pub diffuse: Option<DiffuseStats>,
    /// In-plane standard deviation of diffuse scatter points (simulator only).
    pub lateral_spread: f64,
}

impl TypeStatistics {
    /// Specular standard deviations per component.
    pub fn specular_std(&self) -> Meas5 {
        self.specular_cov_diag.map(f64::sqrt)
    }

    /// Copy with all randomness removed; used to exercise exact geometry paths.
    pub fn noiseless(mut self) -> Self {
        self.specular_cov_diag = Meas5::zeros();
        if let Some(d) = self.diffuse.as_mut() {
            d.std = 0.0;
        }
        self.lateral_spread = 0.0;
        self
    }
}

fn diag5(toa: f64, angle: f64) -> Meas5 {
    Meas5::from([toa * toa, angle * angle, angle * angle, angle * angle, angle * angle])
}

/// Measurement statistics for one surface type.
pub fn default_statistics(ty: LandmarkType) -> TypeStatistics {
    match ty {
        LandmarkType::Bs => TypeStatistics {
            cardinality: Cardinality::Dirac(1),
            specular_bias: Meas5::zeros(),
            specular_cov_diag: diag5(0.003, 0.0001),
            diffuse: None,
            lateral_spread: 0.0,
        },
        LandmarkType::Sm => TypeStatistics {
            cardinality: Cardinality::Dirac(1),
            specular_bias: Meas5::zeros(),
            specular_cov_diag: diag5(0.01, 0.002),
            diffuse: None,
            lateral_spread: 0.0,
        },
        LandmarkType::Mr => TypeStatistics {
            cardinality: Cardinality::ShiftedGeometric { shift: 2, p: 0.55 },
            specular_bias: Meas5::from([0.07, 0.0, 0.0, 0.0, 0.0]),
            specular_cov_diag: diag5(0.1, 0.008),
            diffuse: Some(DiffuseStats { mean: 0.435, std: 0.3 }),
            // in-plane scatter consistent with the 8 mrad angular spread at
            // the scenario's ~90 m ranges
            lateral_spread: 0.7,
        },
        LandmarkType::Vr => TypeStatistics {
            cardinality: Cardinality::ShiftedGeometric { shift: 4, p: 0.27 },
            specular_bias: Meas5::from([0.8, 0.0, 0.0, 0.0, 0.0]),
            specular_cov_diag: diag5(0.5, 0.05),
            diffuse: Some(DiffuseStats { mean: 0.435, std: 0.3 }),
            lateral_spread: 2.0,
        },
    }
}

/// Statistics for all four landmark types, indexable by type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsTable {
    pub entries: [TypeStatistics; 4],
}

impl Default for StatsTable {
    fn default() -> Self {
        Self {
            entries: LandmarkType::ALL.map(default_statistics),
        }
    }
}

impl StatsTable {
    pub fn for_type(&self, ty: LandmarkType) -> &TypeStatistics {
        &self.entries[ty.index()]
    }

    pub fn for_type_mut(&mut self, ty: LandmarkType) -> &mut TypeStatistics {
        &mut self.entries[ty.index()]
    }
}

/// Uniform clutter support. Azimuths always span the full circle; the delay
/// and elevation bounds are explicit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClutterRegion {
    pub toa_min: f64,
    pub toa_max: f64,
    pub el_min: f64,
    pub el_max: f64,
}

impl ClutterRegion {
    pub fn volume(&self) -> f64 {
        use std::f64::consts::PI;
        let el = self.el_max - self.el_min;
        (self.toa_max - self.toa_min) * (2.0 * PI) * el * (2.0 * PI) * el
    }

    pub fn contains(&self, z: &ChannelParam) -> bool {
        z.toa >= self.toa_min
            && z.toa <= self.toa_max
            && z.aoa_el >= self.el_min
            && z.aoa_el <= self.el_max
            && z.aod_el >= self.el_min
            && z.aod_el <= self.el_max
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ChannelParam {
        use std::f64::consts::PI;
        ChannelParam {
            toa: rng.gen_range(self.toa_min..self.toa_max),
            aoa_az: rng.gen_range(-PI..PI),
            aoa_el: rng.gen_range(self.el_min..self.el_max),
            aod_az: rng.gen_range(-PI..PI),
            aod_el: rng.gen_range(self.el_min..self.el_max),
        }
    }
}

/// Detection and clutter configuration for scan generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub detection_prob: f64,
    /// Expected clutter clusters per scan.
    pub clutter_rate: f64,
    pub clutter_region: ClutterRegion,
}

/// Known landmark set: the base station plus ground-truth surfaces.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub bs: Vector3<f64>,
    pub surfaces: Vec<SurfaceSpec>,
}

impl Environment {
    /// Landmark states seen by the filter model: BS first, then one virtual
    /// anchor per surface.
    pub fn landmarks(&self) -> Vec<LandmarkState> {
        let mut out = vec![LandmarkState {
            va_position: self.bs,
            landmark_type: LandmarkType::Bs,
        }];
        out.extend(self.surfaces.iter().map(|s| LandmarkState {
            va_position: reflect_bs(&self.bs, s),
            landmark_type: s.surface_type,
        }));
        out
    }

    /// Virtual-anchor positions of the surfaces (the mapping targets).
    pub fn surface_anchors(&self) -> Vec<(Vector3<f64>, LandmarkType)> {
        self.surfaces
            .iter()
            .map(|s| (reflect_bs(&self.bs, s), s.surface_type))
            .collect()
    }
}

/// Number of paths for one cluster of the given type.
pub fn sample_cardinality<R: Rng + ?Sized>(stats: &TypeStatistics, rng: &mut R) -> usize {
    stats.cardinality.sample(rng)
}

/// A sampled cluster along with the displacement actually drawn for each
/// diffuse path (None for the specular one), index-aligned after sorting.
#[derive(Debug, Clone)]
pub struct SampledCluster {
    pub measurements: ClusterMeasurement,
    pub displacements: Vec<Option<f64>>,
}

fn sample_noise5<R: Rng + ?Sized>(std: &Meas5, rng: &mut R) -> Meas5 {
    Meas5::from_fn(|i, _| std[i] * rng.sample::<f64, _>(StandardNormal))
}

fn wrap_measurement(mut z: ChannelParam) -> ChannelParam {
    z.aoa_az = wrap_angle(z.aoa_az);
    z.aod_az = wrap_angle(z.aod_az);
    z
}

/// Draw one cluster for a landmark, keeping the per-path displacement trace.
///
/// Returns None when the specular geometry is degenerate for the current
/// vehicle position, which the caller treats as a misdetection.
pub fn sample_cluster_traced<R: Rng + ?Sized>(
    landmark: &LandmarkState,
    truth: &VehicleState,
    stats: &TypeStatistics,
    bs: &Vector3<f64>,
    rng: &mut R,
) -> Option<SampledCluster> {
    let n = sample_cardinality(stats, rng);
    let mut paths: Vec<(ChannelParam, Option<f64>)> = Vec::with_capacity(n);

    if landmark.landmark_type == LandmarkType::Bs {
        let mean = measurement_model(bs, truth, bs, true).ok()?;
        let z = Meas5::from(mean.to_vector() + stats.specular_bias + sample_noise5(&stats.specular_std(), rng));
        paths.push((wrap_measurement(ChannelParam::from_vector(&z)), None));
    } else {
        let va = landmark.va_position;
        let x0 = incidence_point(&va, &truth.position, bs).ok()?;
        let spec_mean = measurement_model(&x0, truth, bs, false).ok()?;
        let z0 = Meas5::from(spec_mean.to_vector() + stats.specular_bias + sample_noise5(&stats.specular_std(), rng));
        paths.push((wrap_measurement(ChannelParam::from_vector(&z0)), None));

        if n > 1 {
            let diffuse = stats
                .diffuse
                .expect("multi-path cardinality requires a diffuse model");
            let (toward_bs, _) = specular_axes(bs, &va).ok()?;
            // orthonormal in-plane directions
            let seed = if toward_bs.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
            let t1 = toward_bs.cross(&seed).normalize();
            let t2 = toward_bs.cross(&t1);
            for _ in 1..n {
                let a = stats.lateral_spread * rng.sample::<f64, _>(StandardNormal);
                let b = stats.lateral_spread * rng.sample::<f64, _>(StandardNormal);
                let d = diffuse.mean + diffuse.std * rng.sample::<f64, _>(StandardNormal);
                // positive displacement is behind the plane, lengthening the path
                let scatter = x0 + a * t1 + b * t2 - d * toward_bs;
                match measurement_model(&scatter, truth, bs, false) {
                    Ok(z) => paths.push((wrap_measurement(z), Some(d))),
                    Err(_) => continue,
                }
            }
        }
    }

    paths.sort_by(|a, b| a.0.toa.total_cmp(&b.0.toa));
    let (measurements, displacements) = paths.into_iter().unzip();
    Some(SampledCluster {
        measurements,
        displacements,
    })
}

/// Draw one cluster for a landmark (see [`sample_cluster_traced`]).
pub fn sample_cluster<R: Rng + ?Sized>(
    landmark: &LandmarkState,
    truth: &VehicleState,
    stats: &TypeStatistics,
    bs: &Vector3<f64>,
    rng: &mut R,
) -> Option<ClusterMeasurement> {
    sample_cluster_traced(landmark, truth, stats, bs, rng).map(|s| s.measurements)
}

/// Generate one scan: each landmark detected independently with the configured
/// probability, plus Poisson-many singleton clutter clusters, in shuffled order.
pub fn generate_scan<R: Rng + ?Sized>(
    env: &Environment,
    truth: &VehicleState,
    config: &ScanConfig,
    table: &StatsTable,
    rng: &mut R,
) -> Scan {
    let mut scan: Scan = Vec::new();
    for landmark in env.landmarks() {
        if rng.gen::<f64>() >= config.detection_prob {
            continue;
        }
        let stats = table.for_type(landmark.landmark_type);
        if let Some(cluster) = sample_cluster(&landmark, truth, stats, &env.bs, rng) {
            if !cluster.is_empty() {
                scan.push(cluster);
            }
        }
    }
    if config.clutter_rate > 0.0 {
        let count = rng.sample(Poisson::new(config.clutter_rate).expect("clutter rate")) as usize;
        for _ in 0..count {
            scan.push(vec![config.clutter_region.sample(rng)]);
        }
    }
    use rand::seq::SliceRandom;
    scan.shuffle(rng);
    scan
}

/// One scan in the line-oriented dump format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanRecord {
    pub k: usize,
    pub clusters: Vec<Vec<[f64; 5]>>,
}

impl ScanRecord {
    pub fn from_scan(k: usize, scan: &Scan) -> Self {
        Self {
            k,
            clusters: scan
                .iter()
                .map(|c| c.iter().map(|z| z.to_vector().into()).collect())
                .collect(),
        }
    }

    pub fn to_scan(&self) -> Scan {
        self.clusters
            .iter()
            .map(|c| c.iter().map(|v| ChannelParam::from_vector(&Meas5::from(*v))).collect())
            .collect()
    }
}

/// Serialize scans as JSON lines, one scan per line, step index from 1.
pub fn write_scans<W: std::io::Write>(mut w: W, scans: &[Scan]) -> std::io::Result<()> {
    for (i, scan) in scans.iter().enumerate() {
        let record = ScanRecord::from_scan(i + 1, scan);
        serde_json::to_writer(&mut w, &record)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Parse scans from the JSON-lines dump format, in file order.
pub fn read_scans<R: std::io::BufRead>(r: R) -> std::io::Result<Vec<Scan>> {
    let mut scans = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ScanRecord = serde_json::from_str(&line)?;
        scans.push(record.to_scan());
    }
    Ok(scans)
}
