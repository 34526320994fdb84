//! Scenario configuration, the end-to-end simulation loop, and result emission.
//!
//! One run: propagate the noise-free truth along its constant-turn orbit,
//! generate a scan, advance the filter (predict, map update, weight update,
//! prune, resample), then score the state estimate and the map against the
//! ground truth. Everything is a deterministic function of config plus seed;
//! all randomness flows through per-purpose streams derived from the seed, so
//! scan replay and particle-level parallelism cannot change results.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

use crate::chanmodel::{generate_scan, ClutterRegion, Environment, Scan, ScanConfig, StatsTable};
use crate::geom::{LandmarkType, SurfaceSpec, VehicleState};
use crate::gospa::{gospa, per_type_gospa, GospaParams, GospaResult};
use crate::pmbm::{
    estimate_map, predict_map, prune, snapshot, update_map, FilterParams, MapEstimate,
    MapSnapshot, PmbmMap,
};
use crate::rbpf::{
    ctrv_transition, effective_sample_size, estimate_state, normalize_weights, predict_particle,
    resample, update_weights, Particle, RbpfError,
};
use crate::util::wrap_angle;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Divergence(#[from] RbpfError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Which paths of each cluster the filter consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodMode {
    /// Specular path plus all diffuse paths (the full cluster likelihood).
    AllPaths,
    /// Baseline: clusters truncated to their lowest-delay path.
    SpecularOnly,
}

/// Full scenario description. JSON configs use exactly these field names;
/// unknown fields are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub bs_position: [f64; 3],
    pub surfaces: Vec<SurfaceSpec>,
    /// (x, y, z, heading, speed, turn rate, clock bias)
    pub initial_truth: [f64; 7],
    /// Added to the truth to form the prior mean of the particle cloud.
    pub initial_prior_bias: [f64; 7],
    /// Per-component standard deviation of the initial particle cloud.
    pub initial_prior_std: [f64; 7],
    pub steps: usize,
    pub dt: f64,
    pub particle_count: usize,
    /// Process noise standard deviations on (x, y, heading, speed, turn rate, clock bias).
    pub process_noise_std: [f64; 6],
    pub detection_prob: f64,
    pub survival_prob: f64,
    pub clutter_rate: f64,
    pub clutter_region: ClutterRegion,
    pub birth_weight: f64,
    pub birth_std: f64,
    pub r_min: f64,
    pub hypothesis_weight_threshold: f64,
    pub max_hypotheses: usize,
    pub backproject_floor: f64,
    pub existence_report_threshold: f64,
    pub ess_threshold_fraction: f64,
    pub gospa: GospaParams,
    pub likelihood_mode: LikelihoodMode,
    pub seed: u64,
}

/// The four-wall scenario: a square of surfaces enclosing the vehicle's orbit
/// around an elevated base station.
pub fn default_scenario() -> ScenarioConfig {
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
    let clock_bias = 300.0;
    ScenarioConfig {
        bs_position: [0.0, 0.0, 10.0],
        surfaces: vec![
            SurfaceSpec {
                point_on_plane: Vector3::new(80.0, 0.0, 0.0),
                unit_normal: Vector3::new(1.0, 0.0, 0.0),
                surface_type: LandmarkType::Sm,
            },
            SurfaceSpec {
                point_on_plane: Vector3::new(-80.0, 0.0, 0.0),
                unit_normal: Vector3::new(1.0, 0.0, 0.0),
                surface_type: LandmarkType::Mr,
            },
            SurfaceSpec {
                point_on_plane: Vector3::new(0.0, 80.0, 0.0),
                unit_normal: Vector3::new(0.0, 1.0, 0.0),
                surface_type: LandmarkType::Mr,
            },
            SurfaceSpec {
                point_on_plane: Vector3::new(0.0, -80.0, 0.0),
                unit_normal: Vector3::new(0.0, 1.0, 0.0),
                surface_type: LandmarkType::Vr,
            },
        ],
        initial_truth: [70.7285, 0.0, 0.0, FRAC_PI_2, 22.22, PI / 10.0, clock_bias],
        initial_prior_bias: [0.9, 0.9, 0.0, 0.09, 0.0, 0.0, 0.9],
        initial_prior_std: [1.0, 1.0, 0.0, 0.1, 0.5, 0.02, 1.0],
        steps: 40,
        dt: 0.5,
        particle_count: 2000,
        process_noise_std: [0.2, 0.2, 0.01, 0.2, 0.01, 0.2],
        detection_prob: 0.9,
        survival_prob: 0.99,
        clutter_rate: 1.0,
        clutter_region: ClutterRegion {
            toa_min: clock_bias + 1.0,
            toa_max: clock_bias + 250.0,
            el_min: -FRAC_PI_4,
            el_max: FRAC_PI_4,
        },
        birth_weight: 1e-4,
        birth_std: 5.0,
        r_min: 1e-5,
        hypothesis_weight_threshold: 1e-4,
        max_hypotheses: 10,
        backproject_floor: -40.0,
        existence_report_threshold: 0.5,
        ess_threshold_fraction: 0.5,
        gospa: GospaParams::default(),
        likelihood_mode: LikelihoodMode::AllPaths,
        seed: 0,
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        let fail = |path: &str, msg: &str| Err(RunError::Config(format!("{path}: {msg}")));
        if self.steps < 1 {
            return fail("steps", "must be >= 1");
        }
        if self.particle_count < 1 {
            return fail("particle_count", "must be >= 1");
        }
        if !(self.dt > 0.0) {
            return fail("dt", "must be > 0");
        }
        if !(self.detection_prob > 0.0 && self.detection_prob <= 1.0) {
            return fail("detection_prob", "must be in (0, 1]");
        }
        if !(self.survival_prob > 0.0 && self.survival_prob <= 1.0) {
            return fail("survival_prob", "must be in (0, 1]");
        }
        if self.clutter_rate < 0.0 {
            return fail("clutter_rate", "must be >= 0");
        }
        if !(self.clutter_region.toa_max > self.clutter_region.toa_min) {
            return fail("clutter_region.toa_max", "must exceed toa_min");
        }
        if !(self.clutter_region.el_max > self.clutter_region.el_min) {
            return fail("clutter_region.el_max", "must exceed el_min");
        }
        if self.birth_weight < 0.0 {
            return fail("birth_weight", "must be >= 0");
        }
        if !(self.birth_std > 0.0) {
            return fail("birth_std", "must be > 0");
        }
        if !(0.0..=1.0).contains(&self.r_min) {
            return fail("r_min", "must be in [0, 1]");
        }
        if !(self.hypothesis_weight_threshold > 0.0 && self.hypothesis_weight_threshold <= 1.0) {
            return fail("hypothesis_weight_threshold", "must be in (0, 1]");
        }
        if self.max_hypotheses < 1 {
            return fail("max_hypotheses", "must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.existence_report_threshold) {
            return fail("existence_report_threshold", "must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.ess_threshold_fraction) {
            return fail("ess_threshold_fraction", "must be in [0, 1]");
        }
        if self.gospa.p < 1.0 {
            return fail("gospa.p", "must be >= 1");
        }
        if !(self.gospa.c > 0.0) {
            return fail("gospa.c", "must be > 0");
        }
        if self.gospa.alpha != 2.0 {
            return fail("gospa.alpha", "must be 2 (decomposition form)");
        }
        if self.initial_truth[4] < 0.0 {
            return fail("initial_truth[4]", "speed must be >= 0");
        }
        for (i, surface) in self.surfaces.iter().enumerate() {
            if let Err(msg) = surface.validate() {
                return fail(&format!("surfaces[{i}]"), &msg);
            }
        }
        for (i, q) in self.process_noise_std.iter().enumerate() {
            if *q < 0.0 {
                return fail(&format!("process_noise_std[{i}]"), "must be >= 0");
            }
        }
        for (i, s) in self.initial_prior_std.iter().enumerate() {
            if *s < 0.0 {
                return fail(&format!("initial_prior_std[{i}]"), "must be >= 0");
            }
        }
        Ok(())
    }

    pub fn from_json_reader<R: std::io::Read>(reader: R) -> Result<Self, RunError> {
        let config: ScenarioConfig = serde_json::from_reader(reader)?;
        config.validate()?;
        Ok(config)
    }

    fn environment(&self) -> Environment {
        Environment {
            bs: Vector3::from(self.bs_position),
            surfaces: self.surfaces.clone(),
        }
    }

    fn scan_config(&self) -> ScanConfig {
        ScanConfig {
            detection_prob: self.detection_prob,
            clutter_rate: self.clutter_rate,
            clutter_region: self.clutter_region,
        }
    }

    fn filter_params(&self) -> FilterParams {
        let mut params = FilterParams::new(Vector3::from(self.bs_position), self.scan_config());
        params.p_detect = self.detection_prob;
        params.p_survive = self.survival_prob;
        params.birth_weight = self.birth_weight;
        params.birth_std = self.birth_std;
        params.r_min = self.r_min;
        params.hypothesis_weight_threshold = self.hypothesis_weight_threshold;
        params.max_hypotheses = self.max_hypotheses;
        params.backproject_floor = self.backproject_floor;
        params.specular_only = self.likelihood_mode == LikelihoodMode::SpecularOnly;
        params.stats = StatsTable::default();
        params
    }

    pub fn initial_truth_state(&self) -> VehicleState {
        VehicleState::from_array(self.initial_truth)
    }
}

/// Per-step evaluation record. Wall time stays out of the serialized outputs
/// so that identical seeds give byte-identical artifacts.
#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub truth: [f64; 7],
    pub estimate: [f64; 7],
    pub abs_error: [f64; 7],
    pub ess: f64,
    pub gospa: GospaResult,
    pub gospa_sm: GospaResult,
    pub gospa_mr: GospaResult,
    pub gospa_vr: GospaResult,
    #[serde(skip)]
    pub wall_time_ms: f64,
}

// rng stream purposes
const STREAM_INIT: u64 = 1;
const STREAM_SCAN: u64 = 2;
const STREAM_PREDICT: u64 = 3;
const STREAM_RESAMPLE: u64 = 4;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Independent deterministic stream for (seed, purpose, step, index).
fn stream_rng(seed: u64, purpose: u64, step: u64, index: u64) -> ChaCha8Rng {
    let mut h = splitmix(seed);
    h = splitmix(h ^ purpose);
    h = splitmix(h ^ step);
    h = splitmix(h ^ index);
    let mut key = [0u8; 32];
    for (chunk_idx, chunk) in key.chunks_exact_mut(8).enumerate() {
        h = splitmix(h.wrapping_add(chunk_idx as u64));
        chunk.copy_from_slice(&h.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// The running state of one simulation: truth trajectory plus filter.
pub struct Simulation {
    pub config: ScenarioConfig,
    env: Environment,
    params: FilterParams,
    truth: VehicleState,
    particles: Vec<Particle>,
    known_vehicle: bool,
    step_index: usize,
}

impl Simulation {
    pub fn new(config: ScenarioConfig, known_vehicle: bool) -> Result<Self, RunError> {
        config.validate()?;
        let env = config.environment();
        let params = config.filter_params();
        let truth = config.initial_truth_state();

        let particle_count = if known_vehicle { 1 } else { config.particle_count };
        let map = PmbmMap::with_bs_prior(&params.bs);
        let mut particles = Vec::with_capacity(particle_count);
        let log_weight = -(particle_count as f64).ln();
        for i in 0..particle_count {
            let state = if known_vehicle {
                truth
            } else {
                let mut rng = stream_rng(config.seed, STREAM_INIT, 0, i as u64);
                let mut draw = [0.0f64; 7];
                for (c, d) in draw.iter_mut().enumerate() {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    *d = config.initial_truth[c]
                        + config.initial_prior_bias[c]
                        + config.initial_prior_std[c] * noise;
                }
                VehicleState::from_array(draw)
            };
            particles.push(Particle {
                state,
                log_weight,
                map: map.clone(),
            });
        }
        Ok(Self {
            config,
            env,
            params,
            truth,
            particles,
            known_vehicle,
            step_index: 0,
        })
    }

    pub fn truth(&self) -> &VehicleState {
        &self.truth
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    /// Highest-weight particle (ties broken by index).
    pub fn best_particle(&self) -> &Particle {
        self.particles
            .iter()
            .max_by(|a, b| a.log_weight.total_cmp(&b.log_weight))
            .expect("at least one particle")
    }

    /// Reported landmarks of the best particle's map.
    pub fn map_estimates(&self) -> Vec<MapEstimate> {
        estimate_map(
            &self.best_particle().map,
            self.config.existence_report_threshold,
        )
    }

    /// Advance one time step. `scan_override` replays a recorded scan instead
    /// of generating one; the returned scan is the raw (untruncated) one.
    pub fn step(&mut self, scan_override: Option<&Scan>) -> Result<(StepRecord, Scan), RunError> {
        let started = std::time::Instant::now();
        self.step_index += 1;
        let k = self.step_index as u64;
        let seed = self.config.seed;

        self.truth = ctrv_transition(&self.truth, self.config.dt);
        let scan: Scan = match scan_override {
            Some(s) => s.clone(),
            None => {
                let mut rng = stream_rng(seed, STREAM_SCAN, k, 0);
                generate_scan(
                    &self.env,
                    &self.truth,
                    &self.params.scan,
                    &self.params.stats,
                    &mut rng,
                )
            }
        };
        // the single-path baseline only ever sees the lowest-delay path
        let filter_scan: Scan = if self.params.specular_only {
            scan.iter()
                .filter_map(|cluster| {
                    crate::likelihood::specular_index(cluster).map(|i| vec![cluster[i]])
                })
                .collect()
        } else {
            scan.clone()
        };

        // predict + map update + prune, independently per particle
        let truth = self.truth;
        let known_vehicle = self.known_vehicle;
        let config = &self.config;
        let params = &self.params;
        let log_masses: Vec<Vec<f64>> = self
            .particles
            .par_iter_mut()
            .enumerate()
            .map(|(i, particle)| {
                if known_vehicle {
                    particle.state = truth;
                } else {
                    let mut rng = stream_rng(seed, STREAM_PREDICT, k, i as u64);
                    particle.state = predict_particle(
                        &particle.state,
                        config.dt,
                        &config.process_noise_std,
                        &mut rng,
                    );
                }
                predict_map(&mut particle.map, params);
                let result = update_map(&mut particle.map, &filter_scan, &particle.state, params);
                prune(&mut particle.map, params);
                result.log_hypothesis_masses
            })
            .collect();

        update_weights(&mut self.particles, &log_masses)?;
        let ess = effective_sample_size(&self.particles);

        let estimate = estimate_state(&self.particles);
        let truth_anchors = self.env.surface_anchors();
        let estimates = self.map_estimates();
        let est_points: Vec<Vector3<f64>> = estimates
            .iter()
            .filter(|e| e.landmark_type != LandmarkType::Bs)
            .map(|e| e.position)
            .collect();
        let est_typed: Vec<(Vector3<f64>, LandmarkType)> = estimates
            .iter()
            .filter(|e| e.landmark_type != LandmarkType::Bs)
            .map(|e| (e.position, e.landmark_type))
            .collect();
        let truth_points: Vec<Vector3<f64>> = truth_anchors.iter().map(|(p, _)| *p).collect();
        let overall = gospa(&truth_points, &est_points, &self.config.gospa);
        let per_type = per_type_gospa(&truth_anchors, &est_typed, &self.config.gospa);

        if !self.known_vehicle {
            let mut rng = stream_rng(seed, STREAM_RESAMPLE, k, 0);
            resample(
                &mut self.particles,
                self.config.ess_threshold_fraction,
                &mut rng,
            );
        } else {
            normalize_weights(&mut self.particles)?;
        }

        let truth_arr = self.truth.to_array();
        let est_arr = estimate.to_array();
        let mut abs_error = [0.0f64; 7];
        for c in 0..7 {
            abs_error[c] = if c == 3 {
                wrap_angle(est_arr[c] - truth_arr[c]).abs()
            } else {
                (est_arr[c] - truth_arr[c]).abs()
            };
        }
        let record = StepRecord {
            step: self.step_index,
            truth: truth_arr,
            estimate: est_arr,
            abs_error,
            ess,
            gospa: overall,
            gospa_sm: per_type[0].1,
            gospa_mr: per_type[1].1,
            gospa_vr: per_type[2].1,
            wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        Ok((record, scan))
    }
}

/// Everything a completed run produced.
#[derive(Debug)]
pub struct RunOutput {
    pub config: ScenarioConfig,
    pub known_vehicle: bool,
    pub records: Vec<StepRecord>,
    pub scans: Vec<Scan>,
    pub final_state: VehicleState,
    pub final_estimates: Vec<MapEstimate>,
    pub final_map: MapSnapshot,
}

/// Run a scenario to completion, optionally replaying recorded scans.
pub fn run_config(
    config: ScenarioConfig,
    known_vehicle: bool,
    replay: Option<&[Scan]>,
) -> Result<RunOutput, RunError> {
    if let Some(scans) = replay {
        if scans.len() < config.steps {
            return Err(RunError::Config(format!(
                "replay_scans: {} scans provided, {} steps requested",
                scans.len(),
                config.steps
            )));
        }
    }
    let mut sim = Simulation::new(config, known_vehicle)?;
    let mut records = Vec::with_capacity(sim.config.steps);
    let mut scans = Vec::with_capacity(sim.config.steps);
    for step in 0..sim.config.steps {
        let (record, scan) = sim.step(replay.map(|s| &s[step]))?;
        records.push(record);
        scans.push(scan);
    }
    let final_state = estimate_state(&sim.particles);
    let final_estimates = sim.map_estimates();
    let final_map = snapshot(&sim.best_particle().map);
    Ok(RunOutput {
        config: sim.config,
        known_vehicle,
        records,
        scans,
        final_state,
        final_estimates,
        final_map,
    })
}

/// Full SLAM run: the filter estimates the vehicle and the map jointly.
pub fn run(config: ScenarioConfig) -> Result<RunOutput, RunError> {
    run_config(config, false, None)
}

/// Mapping-only run: a single particle pinned to the true vehicle state.
pub fn run_known_vehicle(config: ScenarioConfig) -> Result<RunOutput, RunError> {
    run_config(config, true, None)
}

/// Column order of the step CSV.
pub const CSV_HEADER: &str = "step,truth_x,truth_y,truth_z,truth_heading,truth_speed,truth_turn_rate,truth_clock_bias,est_x,est_y,est_z,est_heading,est_speed,est_turn_rate,est_clock_bias,err_x,err_y,err_z,err_heading,err_speed,err_turn_rate,err_clock_bias,ess,gospa_total,gospa_loc,gospa_missed,gospa_false,gospa_sm_total,gospa_sm_loc,gospa_sm_missed,gospa_sm_false,gospa_mr_total,gospa_mr_loc,gospa_mr_missed,gospa_mr_false,gospa_vr_total,gospa_vr_loc,gospa_vr_missed,gospa_vr_false";

pub fn write_csv<W: Write>(mut w: W, records: &[StepRecord]) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        let mut fields: Vec<String> = Vec::with_capacity(39);
        fields.push(r.step.to_string());
        for v in r.truth.iter().chain(&r.estimate).chain(&r.abs_error) {
            fields.push(v.to_string());
        }
        fields.push(r.ess.to_string());
        for g in [&r.gospa, &r.gospa_sm, &r.gospa_mr, &r.gospa_vr] {
            fields.push(g.total.to_string());
            fields.push(g.localization.to_string());
            fields.push(g.missed.to_string());
            fields.push(g.false_alarm.to_string());
        }
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ResultDocument<'a> {
    config: &'a ScenarioConfig,
    known_vehicle: bool,
    seed: u64,
    final_state: &'a VehicleState,
    final_map_estimates: &'a [MapEstimate],
    final_map: &'a MapSnapshot,
}

pub fn write_result_json<W: Write>(mut w: W, output: &RunOutput) -> Result<(), RunError> {
    let doc = ResultDocument {
        config: &output.config,
        known_vehicle: output.known_vehicle,
        seed: output.config.seed,
        final_state: &output.final_state,
        final_map_estimates: &output.final_estimates,
        final_map: &output.final_map,
    };
    serde_json::to_writer_pretty(&mut w, &doc)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Write the CSV and JSON artifacts into a directory.
pub fn write_outputs(dir: &Path, output: &RunOutput) -> Result<(), RunError> {
    std::fs::create_dir_all(dir)?;
    let csv = std::fs::File::create(dir.join("steps.csv"))?;
    write_csv(std::io::BufWriter::new(csv), &output.records)?;
    let json = std::fs::File::create(dir.join("result.json"))?;
    write_result_json(std::io::BufWriter::new(json), output)?;
    Ok(())
}

pub fn dump_scans_file(path: &Path, scans: &[Scan]) -> Result<(), RunError> {
    let file = std::fs::File::create(path)?;
    crate::chanmodel::write_scans(std::io::BufWriter::new(file), scans)?;
    Ok(())
}

pub fn load_scans_file(path: &Path) -> Result<Vec<Scan>, RunError> {
    let file = std::fs::File::open(path)?;
    Ok(crate::chanmodel::read_scans(std::io::BufReader::new(file))?)
}

/// Parse a config file, or fall back to the default scenario when no path is given.
pub fn load_config(path: Option<&Path>) -> Result<ScenarioConfig, RunError> {
    match path {
        Some(p) => {
            let file = std::fs::File::open(p)?;
            ScenarioConfig::from_json_reader(std::io::BufReader::new(file))
        }
        None => Ok(default_scenario()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small_config() -> ScenarioConfig {
        let mut config = default_scenario();
        config.steps = 5;
        config.particle_count = 20;
        config.seed = 7;
        config
    }

    #[test]
    fn default_scenario_shape() {
        let config = default_scenario();
        assert_eq!(config.surfaces.len(), 4);
        let mut types: Vec<LandmarkType> =
            config.surfaces.iter().map(|s| s.surface_type).collect();
        types.sort();
        assert_eq!(
            types,
            vec![LandmarkType::Sm, LandmarkType::Mr, LandmarkType::Mr, LandmarkType::Vr]
        );
        assert_eq!(
            config.initial_truth,
            [
                70.7285,
                0.0,
                0.0,
                std::f64::consts::FRAC_PI_2,
                22.22,
                std::f64::consts::PI / 10.0,
                300.0
            ]
        );
        assert_eq!(config.initial_prior_bias, [0.9, 0.9, 0.0, 0.09, 0.0, 0.0, 0.9]);
        assert_eq!(config.steps, 40);
        assert_eq!(config.likelihood_mode, LikelihoodMode::AllPaths);
        config.validate().unwrap();
    }

    #[test]
    fn validation_reports_field_paths() {
        let mut config = default_scenario();
        config.steps = 0;
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("steps"), "{err}");

        let mut config = default_scenario();
        config.surfaces[1].unit_normal *= 2.0;
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("surfaces[1]"), "{err}");
    }

    #[test]
    fn unknown_config_fields_rejected() {
        let mut value = serde_json::to_value(default_scenario()).unwrap();
        value
            .as_object_mut()
            .unwrap()
            .insert("not_a_field".into(), serde_json::json!(1));
        let text = serde_json::to_string(&value).unwrap();
        let err = ScenarioConfig::from_json_reader(text.as_bytes()).unwrap_err();
        assert!(matches!(err, RunError::Parse(_)));
    }

    #[test]
    fn config_json_round_trip() {
        let config = default_scenario();
        let text = serde_json::to_string_pretty(&config).unwrap();
        let parsed = ScenarioConfig::from_json_reader(text.as_bytes()).unwrap();
        assert_eq!(config, parsed);
    }

    #[test]
    fn truth_orbit_closes_after_full_revolution() {
        let config = default_scenario();
        let mut truth = config.initial_truth_state();
        for _ in 0..config.steps {
            truth = ctrv_transition(&truth, config.dt);
        }
        let initial = config.initial_truth_state();
        assert!((truth.position - initial.position).norm() < 1e-6);
    }

    #[test]
    fn runs_are_deterministic() {
        let config = small_config();
        let a = run(config.clone()).unwrap();
        let b = run(config).unwrap();
        let mut csv_a = Vec::new();
        let mut csv_b = Vec::new();
        write_csv(&mut csv_a, &a.records).unwrap();
        write_csv(&mut csv_b, &b.records).unwrap();
        assert_eq!(csv_a, csv_b);
        let mut json_a = Vec::new();
        let mut json_b = Vec::new();
        write_result_json(&mut json_a, &a).unwrap();
        write_result_json(&mut json_b, &b).unwrap();
        assert_eq!(json_a, json_b);
    }

    #[test]
    fn replay_reproduces_live_run() {
        let config = small_config();
        let live = run(config.clone()).unwrap();

        // round-trip the scans through the dump format
        let mut dump = Vec::new();
        crate::chanmodel::write_scans(&mut dump, &live.scans).unwrap();
        let scans = crate::chanmodel::read_scans(std::io::BufReader::new(dump.as_slice())).unwrap();

        let replayed = run_config(config, false, Some(&scans)).unwrap();
        let mut csv_live = Vec::new();
        let mut csv_replay = Vec::new();
        write_csv(&mut csv_live, &live.records).unwrap();
        write_csv(&mut csv_replay, &replayed.records).unwrap();
        assert_eq!(csv_live, csv_replay);
    }

    #[test]
    fn known_vehicle_pins_state_to_truth() {
        let mut config = small_config();
        config.steps = 3;
        let output = run_known_vehicle(config).unwrap();
        for r in &output.records {
            for c in 0..7 {
                assert_abs_diff_eq!(r.abs_error[c], 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn known_vehicle_maps_something_by_first_scan() {
        // birth from the first scan should usually produce at least one landmark
        let mut hits = 0;
        for seed in 0..10 {
            let mut config = small_config();
            config.steps = 1;
            config.seed = seed;
            let mut sim = Simulation::new(config, true).unwrap();
            sim.step(None).unwrap();
            let non_bs = sim
                .map_estimates()
                .iter()
                .filter(|e| e.landmark_type != LandmarkType::Bs)
                .count();
            if non_bs >= 1 {
                hits += 1;
            }
        }
        assert!(hits >= 8, "only {hits}/10 seeds mapped a landmark at step 1");
    }

    #[test]
    fn replay_with_too_few_scans_is_a_config_error() {
        let config = small_config();
        let err = run_config(config, false, Some(&[])).unwrap_err();
        assert!(matches!(err, RunError::Config(_)));
    }
}
