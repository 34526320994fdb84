//! Joint vehicle localization and surface mapping from mmWave multipath clusters.
//!
//! A base station illuminates an unknown environment of reflecting surfaces; the
//! vehicle's channel estimator reports, per surface and time step, a *cluster* of
//! path parameters (delay, arrival angles, departure angles). Smooth surfaces yield
//! a single specular path; rough surfaces add diffuse paths that most filters throw
//! away. This crate keeps them: each cluster is scored with a joint likelihood over
//! the specular path and the surface displacements of the diffuse paths, and the
//! map is carried by a Poisson multi-Bernoulli mixture conditioned per particle of
//! a Rao-Blackwellized vehicle filter.
//!
//! Crate layout:
//! - [`geom`]: measurement geometry (reflections, incidence points, back-projection)
//! - [`chanmodel`]: statistical cluster simulator and scan generation
//! - [`likelihood`]: per-cluster likelihoods and clutter model
//! - [`assignment`]: Hungarian solver, Murty's k-best ranking, cost matrices
//! - [`sigma`]: deterministic sigma-point Gaussian updates
//! - [`pmbm`]: per-particle map density (PPP + multi-Bernoulli mixture)
//! - [`rbpf`]: particle filter over the vehicle state
//! - [`gospa`]: mapping metric with localization/missed/false decomposition
//! - [`runner`]: scenario configuration, simulation loop, CSV/JSON emission

pub mod assignment;
pub mod chanmodel;
pub mod geom;
pub mod gospa;
pub mod likelihood;
pub mod pmbm;
pub mod rbpf;
pub mod runner;
pub mod sigma;

pub(crate) mod util;

pub use geom::{ChannelParam, LandmarkState, LandmarkType, SurfaceSpec, VehicleState};
