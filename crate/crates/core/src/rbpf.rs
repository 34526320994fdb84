//! Rao-Blackwellized particle filter over the vehicle state.
//!
//! Particles carry the 7-D vehicle state and each conditions its own map
//! density. Prediction follows a constant-turn-rate model; weights come from
//! the total hypothesis mass of each particle's map update; resampling is
//! systematic, triggered on effective sample size.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::geom::VehicleState;
use crate::pmbm::PmbmMap;
use crate::util::{log_sum_exp, wrap_angle};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RbpfError {
    #[error("filter divergence: every particle has zero evidence")]
    Divergence,
}

/// One vehicle hypothesis with its conditional map.
#[derive(Debug, Clone)]
pub struct Particle {
    pub state: VehicleState,
    pub log_weight: f64,
    pub map: PmbmMap,
}

/// Constant-turn-rate transition over `dt` seconds (noise-free part).
/// Height, speed, turn rate and clock bias persist.
pub fn ctrv_transition(state: &VehicleState, dt: f64) -> VehicleState {
    let alpha = state.heading;
    let next_alpha = alpha + state.turn_rate * dt;
    let mut position = state.position;
    if state.turn_rate.abs() > 1e-6 {
        let radius = state.speed / state.turn_rate;
        position.x += radius * (next_alpha.sin() - alpha.sin());
        position.y += radius * (-next_alpha.cos() + alpha.cos());
    } else {
        position.x += state.speed * dt * alpha.cos();
        position.y += state.speed * dt * alpha.sin();
    }
    VehicleState {
        position,
        heading: wrap_angle(next_alpha),
        speed: state.speed,
        turn_rate: state.turn_rate,
        clock_bias: state.clock_bias,
    }
}

/// One prediction draw: the transition plus zero-mean Gaussian noise with the
/// given standard deviations on (x, y, heading, speed, turn rate, clock bias).
/// Height stays noise-free.
pub fn predict_particle<R: Rng + ?Sized>(
    state: &VehicleState,
    dt: f64,
    noise_std: &[f64; 6],
    rng: &mut R,
) -> VehicleState {
    let mut s = ctrv_transition(state, dt);
    let mut draw = |std: f64| std * rng.sample::<f64, _>(StandardNormal);
    s.position.x += draw(noise_std[0]);
    s.position.y += draw(noise_std[1]);
    s.heading = wrap_angle(s.heading + draw(noise_std[2]));
    s.speed = (s.speed + draw(noise_std[3])).max(0.0);
    s.turn_rate += draw(noise_std[4]);
    s.clock_bias += draw(noise_std[5]);
    s
}

/// Fold each particle's updated hypothesis masses into its weight and
/// renormalize across the set.
pub fn update_weights(
    particles: &mut [Particle],
    hypothesis_log_masses: &[Vec<f64>],
) -> Result<(), RbpfError> {
    debug_assert_eq!(particles.len(), hypothesis_log_masses.len());
    for (particle, masses) in particles.iter_mut().zip(hypothesis_log_masses) {
        particle.log_weight += log_sum_exp(masses);
    }
    normalize_weights(particles)
}

pub fn normalize_weights(particles: &mut [Particle]) -> Result<(), RbpfError> {
    let total = log_sum_exp(&particles.iter().map(|p| p.log_weight).collect::<Vec<_>>());
    if total == f64::NEG_INFINITY || total.is_nan() {
        return Err(RbpfError::Divergence);
    }
    for p in particles.iter_mut() {
        p.log_weight -= total;
    }
    Ok(())
}

/// 1 / sum of squared (normalized) weights.
pub fn effective_sample_size(particles: &[Particle]) -> f64 {
    let sum_sq: f64 = particles.iter().map(|p| p.log_weight.exp().powi(2)).sum();
    if sum_sq > 0.0 {
        1.0 / sum_sq
    } else {
        0.0
    }
}

/// Ancestor indices of a systematic resampling pass with offset `u0` in [0, 1).
pub fn systematic_indices(weights: &[f64], u0: f64) -> Vec<usize> {
    let n = weights.len();
    let mut indices = Vec::with_capacity(n);
    let mut cumulative = weights[0];
    let mut j = 0usize;
    for i in 0..n {
        let target = (i as f64 + u0) / n as f64;
        while cumulative < target && j + 1 < n {
            j += 1;
            cumulative += weights[j];
        }
        indices.push(j);
    }
    indices
}

/// Systematic resampling when the effective sample size drops below
/// `threshold_fraction * N`. Returns whether resampling happened; afterwards
/// weights are equal and maps are copied with their particles.
pub fn resample<R: Rng + ?Sized>(
    particles: &mut Vec<Particle>,
    threshold_fraction: f64,
    rng: &mut R,
) -> bool {
    let n = particles.len();
    if n == 0 || effective_sample_size(particles) >= threshold_fraction * n as f64 {
        return false;
    }
    let weights: Vec<f64> = particles.iter().map(|p| p.log_weight.exp()).collect();
    let u0: f64 = rng.gen();
    let indices = systematic_indices(&weights, u0);
    let equal = -(n as f64).ln();
    let mut next = Vec::with_capacity(n);
    for idx in indices {
        let mut p = particles[idx].clone();
        p.log_weight = equal;
        next.push(p);
    }
    *particles = next;
    true
}

/// Weighted mean state; the heading uses the circular mean.
pub fn estimate_state(particles: &[Particle]) -> VehicleState {
    let mut position = nalgebra::Vector3::zeros();
    let mut sin_sum = 0.0;
    let mut cos_sum = 0.0;
    let mut speed = 0.0;
    let mut turn_rate = 0.0;
    let mut clock_bias = 0.0;
    for p in particles {
        let w = p.log_weight.exp();
        position += w * p.state.position;
        sin_sum += w * p.state.heading.sin();
        cos_sum += w * p.state.heading.cos();
        speed += w * p.state.speed;
        turn_rate += w * p.state.turn_rate;
        clock_bias += w * p.state.clock_bias;
    }
    VehicleState {
        position,
        heading: sin_sum.atan2(cos_sum),
        speed,
        turn_rate,
        clock_bias,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::Vector3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn paper_initial() -> VehicleState {
        VehicleState::new(
            Vector3::new(70.7285, 0.0, 0.0),
            FRAC_PI_2,
            22.22,
            PI / 10.0,
            300.0,
        )
    }

    fn particle(state: VehicleState, log_weight: f64) -> Particle {
        Particle {
            state,
            log_weight,
            map: PmbmMap::empty(),
        }
    }

    #[test]
    fn turn_radius_matches_orbit() {
        let s = paper_initial();
        assert!((s.speed / s.turn_rate - 70.7285).abs() < 1e-3);
        // one noise-free revolution returns to the start
        let mut state = s;
        for _ in 0..40 {
            state = ctrv_transition(&state, 0.5);
        }
        assert!((state.position - s.position).norm() < 1e-6);
        assert_abs_diff_eq!(wrap_angle(state.heading - s.heading), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn straight_line_limit() {
        let s = VehicleState::new(Vector3::new(0.0, 0.0, 0.0), 0.0, 10.0, 0.0, 0.0);
        let next = ctrv_transition(&s, 1.0);
        assert_abs_diff_eq!(next.position.x, 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(next.position.y, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn prediction_noise_is_applied_where_configured() {
        let s = paper_initial();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let zero = predict_particle(&s, 0.5, &[0.0; 6], &mut rng);
        assert_eq!(zero, ctrv_transition(&s, 0.5));
        let noisy = predict_particle(&s, 0.5, &[0.5, 0.5, 0.01, 0.2, 0.01, 0.2], &mut rng);
        assert_abs_diff_eq!(noisy.position.z, 0.0, epsilon = 1e-15); // height untouched
        assert_ne!(noisy.position.x, zero.position.x);
    }

    #[test]
    fn uniform_evidence_keeps_weights() {
        let mut particles = vec![
            particle(paper_initial(), (0.25f64).ln()),
            particle(paper_initial(), (0.75f64).ln()),
        ];
        let masses = vec![vec![-2.0, -3.0], vec![-2.0, -3.0]];
        update_weights(&mut particles, &masses).unwrap();
        assert_abs_diff_eq!(particles[0].log_weight.exp(), 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(particles[1].log_weight.exp(), 0.75, epsilon = 1e-12);
    }

    #[test]
    fn softmax_weighting() {
        let mut particles = vec![particle(paper_initial(), 0.0), particle(paper_initial(), 0.0)];
        update_weights(&mut particles, &[vec![-1.0], vec![-3.0]]).unwrap();
        assert_abs_diff_eq!(particles[0].log_weight.exp(), 0.8807970779778824, epsilon = 1e-12);
        assert_abs_diff_eq!(particles[1].log_weight.exp(), 0.11920292202211755, epsilon = 1e-12);
    }

    #[test]
    fn single_particle_gets_unit_weight() {
        let mut particles = vec![particle(paper_initial(), 0.0)];
        update_weights(&mut particles, &[vec![-17.0]]).unwrap();
        assert_abs_diff_eq!(particles[0].log_weight.exp(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn divergence_is_reported() {
        let mut particles = vec![particle(paper_initial(), 0.0), particle(paper_initial(), 0.0)];
        let err = update_weights(&mut particles, &[vec![], vec![f64::NEG_INFINITY]]).unwrap_err();
        assert_eq!(err, RbpfError::Divergence);
    }

    #[test]
    fn uniform_weights_skip_resampling() {
        let n = 10;
        let mut particles: Vec<Particle> = (0..n)
            .map(|_| particle(paper_initial(), -(n as f64).ln()))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(!resample(&mut particles, 0.5, &mut rng));
    }

    #[test]
    fn degenerate_weight_copies_winner() {
        let n = 8;
        let mut particles: Vec<Particle> = (0..n)
            .map(|i| {
                let mut s = paper_initial();
                s.position.x += i as f64;
                particle(s, if i == 3 { 0.0 } else { f64::NEG_INFINITY })
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(resample(&mut particles, 0.5, &mut rng));
        for p in &particles {
            assert_abs_diff_eq!(p.state.position.x, paper_initial().position.x + 3.0, epsilon = 1e-12);
            assert_abs_diff_eq!(p.log_weight.exp(), 1.0 / n as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn systematic_counts_within_one_of_expectation() {
        let weights = [0.4, 0.3, 0.2, 0.1];
        for u in [0.0, 0.25, 0.5, 0.99] {
            let indices = systematic_indices(&weights, u);
            let mut counts = [0usize; 4];
            for i in indices {
                counts[i] += 1;
            }
            for (i, &w) in weights.iter().enumerate() {
                let expected = w * 4.0;
                assert!(
                    (counts[i] as f64 - expected).abs() <= 1.0 + 1e-12,
                    "u={u}: count {} vs expected {expected}",
                    counts[i]
                );
            }
        }
    }

    #[test]
    fn resampling_preserves_mean_in_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 50;
        let particles: Vec<Particle> = (0..n)
            .map(|i| {
                let mut s = paper_initial();
                s.position.x = i as f64;
                particle(s, 0.0)
            })
            .collect();
        let mut weighted = particles;
        for (i, p) in weighted.iter_mut().enumerate() {
            p.log_weight = -((i + 1) as f64).ln();
        }
        normalize_weights(&mut weighted).unwrap();
        let before = estimate_state(&weighted);

        let runs = 200;
        let mut mean_of_means = 0.0;
        let mut sq = 0.0;
        for _ in 0..runs {
            let mut copy = weighted.clone();
            assert!(resample(&mut copy, 1.1, &mut rng)); // force resampling
            let est = estimate_state(&copy);
            mean_of_means += est.position.x / runs as f64;
            sq += est.position.x * est.position.x / runs as f64;
        }
        let var = (sq - mean_of_means * mean_of_means).max(0.0);
        let sigma = (var / runs as f64).sqrt();
        assert!(
            (mean_of_means - before.position.x).abs() <= 3.0 * sigma + 1e-9,
            "mean {mean_of_means} vs {} +- {}",
            before.position.x,
            3.0 * sigma
        );
    }

    #[test]
    fn circular_mean_handles_wraparound() {
        let mut a = paper_initial();
        a.heading = PI - 0.1;
        let mut b = paper_initial();
        b.heading = -(PI - 0.1);
        let particles = vec![particle(a, (0.5f64).ln()), particle(b, (0.5f64).ln())];
        let est = estimate_state(&particles);
        assert_abs_diff_eq!(wrap_angle(est.heading - PI), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn estimate_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        use rand::Rng;
        let n = 20;
        let mut particles: Vec<Particle> = (0..n)
            .map(|_| {
                let s = VehicleState::new(
                    Vector3::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0), 0.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(0.0..30.0),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(290.0..310.0),
                );
                particle(s, rng.gen_range(-3.0..0.0))
            })
            .collect();
        normalize_weights(&mut particles).unwrap();
        let est = estimate_state(&particles);
        let mut x = 0.0;
        let mut bias = 0.0;
        for p in &particles {
            x += p.log_weight.exp() * p.state.position.x;
            bias += p.log_weight.exp() * p.state.clock_bias;
        }
        assert_abs_diff_eq!(est.position.x, x, epsilon = 1e-12);
        assert_abs_diff_eq!(est.clock_bias, bias, epsilon = 1e-12);
    }
}
