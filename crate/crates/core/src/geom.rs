//! Measurement geometry for base-station-to-vehicle multipath.
//!
//! All delays are stored range-equivalent (delay times the speed of light, in
//! meters), and the clock bias is likewise kept in meters. Angles are radians.
//! Arrival angles live in the vehicle frame, which rotates with the heading
//! about the z axis; departure angles live in the global frame of the base
//! station array.

use nalgebra::{SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::wrap_angle;

/// 5-D channel-parameter vector in fixed order: toa, aoa_az, aoa_el, aod_az, aod_el.
pub type Meas5 = SVector<f64, 5>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeomError {
    #[error("coincident points")]
    CoincidentPoints,
    #[error("degenerate geometry")]
    DegenerateGeometry,
    #[error("infeasible geometry")]
    InfeasibleGeometry,
}

/// Vehicle state: 3-D position, heading, speed, turn rate, and clock bias (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub position: Vector3<f64>,
    /// Heading about z, wrapped to (-pi, pi].
    pub heading: f64,
    pub speed: f64,
    pub turn_rate: f64,
    /// Receiver clock offset pre-multiplied by the speed of light.
    pub clock_bias: f64,
}

impl VehicleState {
    pub fn new(position: Vector3<f64>, heading: f64, speed: f64, turn_rate: f64, clock_bias: f64) -> Self {
        Self {
            position,
            heading: wrap_angle(heading),
            speed: speed.max(0.0),
            turn_rate,
            clock_bias,
        }
    }

    /// State as the 7-vector (x, y, z, heading, speed, turn_rate, clock_bias).
    pub fn to_array(&self) -> [f64; 7] {
        [
            self.position.x,
            self.position.y,
            self.position.z,
            self.heading,
            self.speed,
            self.turn_rate,
            self.clock_bias,
        ]
    }

    pub fn from_array(a: [f64; 7]) -> Self {
        Self::new(Vector3::new(a[0], a[1], a[2]), a[3], a[4], a[5], a[6])
    }
}

/// Surface roughness classes, plus the base station as a pseudo-landmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "UPPERCASE")]
pub enum LandmarkType {
    Bs,
    /// Smooth: purely specular, single path.
    Sm,
    /// Medium rough: specular path plus a few diffuse paths.
    Mr,
    /// Very rough: no deterministic reflection left; many diffuse paths.
    Vr,
}

impl LandmarkType {
    pub const ALL: [LandmarkType; 4] = [
        LandmarkType::Bs,
        LandmarkType::Sm,
        LandmarkType::Mr,
        LandmarkType::Vr,
    ];

    pub fn index(self) -> usize {
        match self {
            LandmarkType::Bs => 0,
            LandmarkType::Sm => 1,
            LandmarkType::Mr => 2,
            LandmarkType::Vr => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            LandmarkType::Bs => "BS",
            LandmarkType::Sm => "SM",
            LandmarkType::Mr => "MR",
            LandmarkType::Vr => "VR",
        }
    }
}

/// Ground-truth surface: an infinite plane with a roughness class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSpec {
    pub point_on_plane: Vector3<f64>,
    pub unit_normal: Vector3<f64>,
    pub surface_type: LandmarkType,
}

impl SurfaceSpec {
    pub fn validate(&self) -> Result<(), String> {
        if (self.unit_normal.norm() - 1.0).abs() > 1e-12 {
            return Err("unit_normal must have norm 1".into());
        }
        if self.surface_type == LandmarkType::Bs {
            return Err("surface_type must be SM, MR, or VR".into());
        }
        Ok(())
    }
}

/// Filter-side landmark: a virtual-anchor position and a type label.
///
/// For the base station itself the anchor position is the (known) BS location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkState {
    pub va_position: Vector3<f64>,
    pub landmark_type: LandmarkType,
}

/// One estimated path: range-equivalent delay plus arrival/departure angle pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParam {
    /// Range-equivalent delay in meters (includes the clock bias).
    pub toa: f64,
    pub aoa_az: f64,
    pub aoa_el: f64,
    pub aod_az: f64,
    pub aod_el: f64,
}

impl ChannelParam {
    pub fn to_vector(&self) -> Meas5 {
        Meas5::from([self.toa, self.aoa_az, self.aoa_el, self.aod_az, self.aod_el])
    }

    pub fn from_vector(v: &Meas5) -> Self {
        Self {
            toa: v[0],
            aoa_az: v[1],
            aoa_el: v[2],
            aod_az: v[3],
            aod_el: v[4],
        }
    }
}

/// Rotate a global-frame vector into the vehicle frame (rotation by -heading about z).
fn to_vehicle_frame(v: &Vector3<f64>, heading: f64) -> Vector3<f64> {
    let (s, c) = heading.sin_cos();
    Vector3::new(c * v.x + s * v.y, -s * v.x + c * v.y, v.z)
}

/// Rotate a vehicle-frame vector back into the global frame.
fn to_global_frame(v: &Vector3<f64>, heading: f64) -> Vector3<f64> {
    let (s, c) = heading.sin_cos();
    Vector3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z)
}

/// Mirror the base station across a surface plane, giving the virtual anchor.
pub fn reflect_bs(bs: &Vector3<f64>, surface: &SurfaceSpec) -> Vector3<f64> {
    let n = surface.unit_normal;
    bs - 2.0 * (bs - surface.point_on_plane).dot(&n) * n
}

/// Reflection axis of a virtual anchor: the plane's unit normal pointing from the
/// anchor toward the base station, and the plane point midway between the two.
pub fn specular_axes(bs: &Vector3<f64>, va: &Vector3<f64>) -> Result<(Vector3<f64>, Vector3<f64>), GeomError> {
    let diff = bs - va;
    let norm = diff.norm();
    if norm < 1e-12 {
        return Err(GeomError::DegenerateGeometry);
    }
    Ok((diff / norm, (bs + va) / 2.0))
}

fn angles_of(dir: &Vector3<f64>) -> (f64, f64) {
    (dir.y.atan2(dir.x), dir.z.asin())
}

/// Noise-free channel parameters of a path.
///
/// For a reflected path `point` is the incidence point on the surface and the
/// delay covers both legs; for the line-of-sight path `point` is the base
/// station itself and `bs` is unused.
pub fn measurement_model(
    point: &Vector3<f64>,
    state: &VehicleState,
    bs: &Vector3<f64>,
    is_los: bool,
) -> Result<ChannelParam, GeomError> {
    let ue = state.position;
    if is_los {
        let to_bs = point - ue;
        let dist = to_bs.norm();
        if dist < 1e-12 {
            return Err(GeomError::CoincidentPoints);
        }
        let u = to_vehicle_frame(&(to_bs / dist), state.heading);
        let v = -to_bs / dist;
        let (aoa_az, aoa_el) = angles_of(&u);
        let (aod_az, aod_el) = angles_of(&v);
        Ok(ChannelParam {
            toa: dist + state.clock_bias,
            aoa_az,
            aoa_el,
            aod_az,
            aod_el,
        })
    } else {
        let to_point = point - ue;
        let from_bs = point - bs;
        let d_ue = to_point.norm();
        let d_bs = from_bs.norm();
        if d_ue < 1e-12 || d_bs < 1e-12 {
            return Err(GeomError::CoincidentPoints);
        }
        let u = to_vehicle_frame(&(to_point / d_ue), state.heading);
        let v = from_bs / d_bs;
        let (aoa_az, aoa_el) = angles_of(&u);
        let (aod_az, aod_el) = angles_of(&v);
        Ok(ChannelParam {
            toa: d_bs + d_ue + state.clock_bias,
            aoa_az,
            aoa_el,
            aod_az,
            aod_el,
        })
    }
}

/// Specular incidence point: where the anchor-to-vehicle line pierces the surface.
pub fn incidence_point(
    va: &Vector3<f64>,
    ue: &Vector3<f64>,
    bs: &Vector3<f64>,
) -> Result<Vector3<f64>, GeomError> {
    let (e, x_e) = specular_axes(bs, va)?;
    let denom = (ue - va).dot(&e);
    if denom.abs() < 1e-12 {
        return Err(GeomError::DegenerateGeometry);
    }
    let t = (x_e - va).dot(&e) / denom;
    Ok(va + t * (ue - va))
}

/// Global-frame unit vector of the arrival direction encoded in a measurement.
pub fn aoa_direction_global(z: &ChannelParam, state: &VehicleState) -> Vector3<f64> {
    let (ce, se) = (z.aoa_el.cos(), z.aoa_el.sin());
    let local = Vector3::new(ce * z.aoa_az.cos(), ce * z.aoa_az.sin(), se);
    to_global_frame(&local, state.heading)
}

/// Recover the 3-D point a reflected path bounced off, from its delay and
/// arrival direction alone (departure angles are not used).
///
/// The point sits on the arrival ray at the distance where the two path legs
/// add up to the bias-corrected delay.
pub fn backproject(
    z: &ChannelParam,
    state: &VehicleState,
    bs: &Vector3<f64>,
) -> Result<Vector3<f64>, GeomError> {
    let ue = state.position;
    let r = z.toa - state.clock_bias;
    let q = bs - ue;
    let q_norm = q.norm();
    if !(r.is_finite()) || r <= q_norm + 1e-12 {
        return Err(GeomError::InfeasibleGeometry);
    }
    let u = aoa_direction_global(z, state);
    let denom = 2.0 * (r - u.dot(&q));
    if denom <= 1e-9 {
        return Err(GeomError::InfeasibleGeometry);
    }
    let d2 = (r * r - q_norm * q_norm) / denom;
    if !d2.is_finite() || d2 <= 0.0 {
        return Err(GeomError::InfeasibleGeometry);
    }
    Ok(ue + d2 * u)
}

/// Signed distance of a point from a virtual anchor's surface plane, positive
/// behind the surface (away from the base station). Estimator delay shifts
/// lengthen paths, so back-projected scatter points land behind the plane
/// with positive displacement.
pub fn displacement_to_surface(
    point: &Vector3<f64>,
    va: &Vector3<f64>,
    bs: &Vector3<f64>,
) -> Result<f64, GeomError> {
    let (toward_bs, x_e) = specular_axes(bs, va)?;
    Ok(toward_bs.dot(&(x_e - point)))
}

/// Compressed diffuse measurement: back-project a path and keep only its signed
/// out-of-plane displacement relative to the landmark's surface.
pub fn surface_displacement(
    z: &ChannelParam,
    state: &VehicleState,
    landmark: &LandmarkState,
    bs: &Vector3<f64>,
) -> Result<f64, GeomError> {
    debug_assert!(landmark.landmark_type != LandmarkType::Bs);
    let point = backproject(z, state, bs)?;
    displacement_to_surface(&point, &landmark.va_position, bs)
}
