//! Analytical loss/delay/distortion formulas.
//!
//! These map a per-path rate assignment onto a predicted end-to-end video
//! distortion: transmission loss over the burst-loss chain, the probability
//! of missing the playout deadline, their combination into an effective loss
//! rate, and the rate/loss -> MSE model with its PSNR form.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{GilbertParams, LinkState};

/// Default data distribution interval, ms. One interval carries one GoP.
pub const DEFAULT_INTERVAL_MS: f64 = 250.0;
/// PSNR cap reported when the MSE reaches zero, dB.
pub const MAX_PSNR_DB: f64 = 60.0;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("chunk enumeration supports at most 16 packets, got {0}")]
    TooManyPackets(u64),
    #[error("packet count must be at least 1")]
    NoPackets,
    #[error("encoding rate {rate} is outside the model domain (must exceed {r0})")]
    RateOutOfDomain { rate: f64, r0: f64 },
    #[error("rate and loss vectors must have equal, nonzero length")]
    MismatchedVectors,
    #[error("total assigned rate must be positive")]
    ZeroTotalRate,
    #[error("invalid distortion parameters: {0}")]
    InvalidParams(String),
}

/// Codec/sequence constants of the rate-distortion model
/// `D = d0 + alpha/(R - r0) + beta * loss`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionParams {
    /// Floor distortion, MSE units.
    pub d0: f64,
    /// Rate-decay constant, MSE * Kbps.
    pub alpha: f64,
    /// Rate offset, Kbps.
    pub r0: f64,
    /// Channel-distortion slope, MSE per unit loss fraction.
    pub beta: f64,
}

impl DistortionParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return Err(ModelError::InvalidParams(
                "alpha and beta must be positive".into(),
            ));
        }
        if !(self.d0.is_finite() && self.r0.is_finite()) {
            return Err(ModelError::InvalidParams("non-finite constant".into()));
        }
        Ok(())
    }
}

/// Inputs of the per-path loss computation for one distribution interval.
#[derive(Debug, Clone, Copy)]
pub struct PathLossInputs {
    pub gilbert: GilbertParams,
    /// Packet interleaving spacing, ms.
    pub omega_ms: f64,
    /// Chunk size assigned to the path for the interval, bytes.
    pub chunk_bytes: u64,
    pub mtu_bytes: u64,
    /// Assigned flow rate, Kbps.
    pub rate_kbps: f64,
    /// Estimated available bandwidth, Kbps.
    pub mu_kbps: f64,
    /// Latest observed residual bandwidth, Kbps.
    pub nu_obs_kbps: f64,
    pub rtt_ms: f64,
    /// Arrival deadline, ms.
    pub deadline_ms: f64,
}

/// Number of packets a chunk of `chunk_bytes` fragments into.
pub fn packets_per_chunk(chunk_bytes: u64, mtu_bytes: u64) -> u64 {
    assert!(mtu_bytes > 0, "mtu must be positive");
    chunk_bytes.div_ceil(mtu_bytes)
}

/// Expected fraction of `n_p` evenly spaced packets lost to the chain, with
/// the first packet drawn from the stationary distribution.
///
/// By linearity of expectation the marginal Bad probability is propagated
/// through the chain and averaged; with a stationary start every marginal
/// equals the stationary Bad probability, so the result is independent of
/// the spacing and the packet count.
pub fn transmission_loss_rate(
    g: &GilbertParams,
    omega_ms: f64,
    n_p: u64,
) -> Result<f64, ModelError> {
    if n_p == 0 {
        return Err(ModelError::NoPackets);
    }
    let (_, pi_b) = g.stationary();
    let m = g
        .transition_matrix(omega_ms)
        .map_err(|e| ModelError::InvalidParams(e.to_string()))?;
    let mut p_bad = pi_b;
    let mut acc = 0.0;
    for i in 0..n_p {
        acc += p_bad;
        if i + 1 < n_p {
            p_bad = p_bad * m.bb + (1.0 - p_bad) * m.gb;
        }
    }
    Ok(acc / n_p as f64)
}

/// Literal enumeration of every failure configuration of `n_p <= 16`
/// packets; the independent oracle for [`transmission_loss_rate`].
pub fn brute_force_transmission_loss_rate(
    g: &GilbertParams,
    omega_ms: f64,
    n_p: u64,
) -> Result<f64, ModelError> {
    if n_p == 0 {
        return Err(ModelError::NoPackets);
    }
    if n_p > 16 {
        return Err(ModelError::TooManyPackets(n_p));
    }
    let (pi_g, pi_b) = g.stationary();
    let m = g
        .transition_matrix(omega_ms)
        .map_err(|e| ModelError::InvalidParams(e.to_string()))?;
    let n = n_p as u32;
    let mut expected_lost = 0.0;
    for config in 0u32..(1 << n) {
        let state_of = |i: u32| {
            if config & (1 << i) != 0 {
                LinkState::Bad
            } else {
                LinkState::Good
            }
        };
        let mut prob = match state_of(0) {
            LinkState::Good => pi_g,
            LinkState::Bad => pi_b,
        };
        for i in 1..n {
            prob *= m.entry(state_of(i - 1), state_of(i));
        }
        expected_lost += config.count_ones() as f64 * prob;
    }
    Ok(expected_lost / n_p as f64)
}

/// Model of the average packet delay on a path carrying `rate_kbps` of an
/// available `mu_kbps`: a utilization term scaled by one distribution
/// interval plus the residual-capacity term, in ms.
///
/// Saturated paths (`rate >= mu`) return infinity so the allocator steers
/// away from the pole.
pub fn expected_delay(
    rate_kbps: f64,
    mu_kbps: f64,
    nu_obs_kbps: f64,
    rtt_ms: f64,
    unit_interval_ms: f64,
) -> f64 {
    if !(rate_kbps < mu_kbps) || mu_kbps <= 0.0 {
        return f64::INFINITY;
    }
    let nu = mu_kbps - rate_kbps;
    let rho = nu_obs_kbps * rtt_ms / 2.0;
    (rate_kbps / mu_kbps) * unit_interval_ms + rho / nu
}

/// Probability that a packet sent under `inputs` arrives after the deadline,
/// from the exponential tail of the delay model.
pub fn overdue_probability(inputs: &PathLossInputs) -> f64 {
    overdue_probability_parts(
        inputs.deadline_ms,
        inputs.rtt_ms,
        inputs.mu_kbps,
        inputs.rate_kbps,
        inputs.nu_obs_kbps,
    )
}

/// Scalar form of [`overdue_probability`] for callers that do not carry a
/// full input record.
pub fn overdue_probability_parts(
    deadline_ms: f64,
    rtt_ms: f64,
    mu_kbps: f64,
    rate_kbps: f64,
    nu_obs_kbps: f64,
) -> f64 {
    if !(rate_kbps < mu_kbps) || mu_kbps <= 0.0 {
        // Zero residual bandwidth: the tail never decays.
        return 1.0;
    }
    let nu = mu_kbps - rate_kbps;
    let denom = nu_obs_kbps * rtt_ms * mu_kbps + 2.0 * nu * rate_kbps;
    if denom <= 0.0 {
        return 1.0;
    }
    let exponent = -(2.0 * deadline_ms * nu * mu_kbps) / denom;
    exponent.exp().clamp(0.0, 1.0)
}

/// Combined probability of transmission loss and overdue arrival.
pub fn effective_loss_rate(pi_star: f64, p_overdue: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&pi_star));
    debug_assert!((0.0..=1.0).contains(&p_overdue));
    (pi_star + (1.0 - pi_star) * p_overdue).clamp(0.0, 1.0)
}

/// End-to-end distortion of an encoding rate split across paths with the
/// given per-path effective loss rates, MSE units.
pub fn total_distortion(
    params: &DistortionParams,
    encoding_rate_kbps: f64,
    rates: &[f64],
    losses: &[f64],
) -> Result<f64, ModelError> {
    params.validate()?;
    if encoding_rate_kbps <= params.r0 {
        return Err(ModelError::RateOutOfDomain {
            rate: encoding_rate_kbps,
            r0: params.r0,
        });
    }
    if rates.len() != losses.len() || rates.is_empty() {
        return Err(ModelError::MismatchedVectors);
    }
    let total_rate: f64 = rates.iter().sum();
    if total_rate <= 0.0 {
        return Err(ModelError::ZeroTotalRate);
    }
    let weighted_loss: f64 = rates.iter().zip(losses).map(|(r, l)| r * l).sum();
    Ok(params.d0 + params.alpha / (encoding_rate_kbps - params.r0)
        + params.beta * weighted_loss / total_rate)
}

/// PSNR of an MSE value under the 8-bit peak convention, capped at
/// [`MAX_PSNR_DB`] for vanishing MSE.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return MAX_PSNR_DB;
    }
    (10.0 * (255.0f64 * 255.0 / mse).log10()).min(MAX_PSNR_DB)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn packets_per_chunk_examples() {
        assert_eq!(packets_per_chunk(4500, 1500), 3);
        assert_eq!(packets_per_chunk(4501, 1500), 4);
        assert_eq!(packets_per_chunk(0, 1500), 0);
    }

    #[test]
    fn single_packet_loss_is_stationary() {
        let g = GilbertParams::new(0.45, 0.05).unwrap();
        let (_, pi_b) = g.stationary();
        assert!(approx(
            transmission_loss_rate(&g, 2.0, 1).unwrap(),
            pi_b,
            1e-15
        ));
        assert!(approx(
            brute_force_transmission_loss_rate(&g, 2.0, 1).unwrap(),
            pi_b,
            1e-15
        ));
    }

    #[test]
    fn near_lossless_limit() {
        let g = GilbertParams::new(1.0, 1e-12).unwrap();
        let rate = transmission_loss_rate(&g, 5.0, 8).unwrap();
        assert!(rate < 1e-11);
    }

    #[test]
    fn brute_force_fully_correlated_and_independent_limits() {
        let g = GilbertParams::new(0.45, 0.05).unwrap();
        let (_, pi_b) = g.stationary();
        // omega = 0: both packets share one state.
        assert!(approx(
            brute_force_transmission_loss_rate(&g, 0.0, 2).unwrap(),
            pi_b,
            1e-12
        ));
        // omega -> infinity: independent packets, expectation unchanged.
        assert!(approx(
            brute_force_transmission_loss_rate(&g, 1e9, 2).unwrap(),
            pi_b,
            1e-12
        ));
    }

    #[test]
    fn closed_form_matches_enumeration() {
        let g = GilbertParams::new(0.45, 0.05).unwrap();
        let a = transmission_loss_rate(&g, 2.0, 4).unwrap();
        let b = brute_force_transmission_loss_rate(&g, 2.0, 4).unwrap();
        assert!(approx(a, b, 1e-12), "closed={a}, brute={b}");
    }

    #[test]
    fn enumeration_equals_stationary_prob_random_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let g = GilbertParams::new(
                rng.gen_range(0.01..4.0),
                rng.gen_range(0.01..4.0),
            )
            .unwrap();
            let omega = rng.gen_range(0.0..25.0);
            let n_p = rng.gen_range(1..=12u64);
            let (_, pi_b) = g.stationary();
            let closed = transmission_loss_rate(&g, omega, n_p).unwrap();
            let brute = brute_force_transmission_loss_rate(&g, omega, n_p).unwrap();
            assert!(approx(closed, brute, 1e-10));
            assert!(approx(closed, pi_b, 1e-10));
        }
    }

    #[test]
    fn brute_force_rejects_large_n() {
        let g = GilbertParams::new(0.45, 0.05).unwrap();
        assert_eq!(
            brute_force_transmission_loss_rate(&g, 1.0, 17),
            Err(ModelError::TooManyPackets(17))
        );
    }

    #[test]
    fn unloaded_delay_is_half_rtt() {
        // rate = 0 and nu_obs = mu: the residual term reduces to rtt/2.
        let d = expected_delay(0.0, 1000.0, 1000.0, 100.0, 250.0);
        assert!(approx(d, 50.0, 1e-12));
    }

    #[test]
    fn delay_diverges_at_capacity() {
        assert!(expected_delay(1000.0, 1000.0, 500.0, 100.0, 250.0).is_infinite());
        let near = expected_delay(999.999, 1000.0, 500.0, 100.0, 250.0);
        assert!(near > 1e6);
    }

    #[test]
    fn half_loaded_delay_value() {
        // Utilization term 0.5 * interval plus (500*100/2)/500 = 50 ms.
        let d = expected_delay(500.0, 1000.0, 500.0, 100.0, 250.0);
        assert!(approx(d, 0.5 * 250.0 + 50.0, 1e-12));
    }

    fn inputs(rate: f64, mu: f64, nu_obs: f64, rtt: f64, deadline: f64) -> PathLossInputs {
        PathLossInputs {
            gilbert: GilbertParams::new(0.45, 0.05).unwrap(),
            omega_ms: 5.0,
            chunk_bytes: 6000,
            mtu_bytes: 1500,
            rate_kbps: rate,
            mu_kbps: mu,
            nu_obs_kbps: nu_obs,
            rtt_ms: rtt,
            deadline_ms: deadline,
        }
    }

    #[test]
    fn overdue_probability_known_value() {
        // nu = nu_obs = 500: exponent simplifies to -500/101.
        let p = overdue_probability(&inputs(500.0, 1000.0, 500.0, 100.0, 250.0));
        assert!(approx(p, (-500.0f64 / 101.0).exp(), 1e-15));
    }

    #[test]
    fn overdue_probability_limits() {
        assert!(approx(
            overdue_probability(&inputs(500.0, 1000.0, 500.0, 100.0, 0.0)),
            1.0,
            1e-15
        ));
        assert!(overdue_probability(&inputs(500.0, 1000.0, 500.0, 100.0, 1e12)) < 1e-300);
        // Saturated path: worst case by continuity.
        assert_eq!(
            overdue_probability(&inputs(1000.0, 1000.0, 500.0, 100.0, 250.0)),
            1.0
        );
    }

    #[test]
    fn overdue_probability_monotone() {
        let base = inputs(500.0, 1000.0, 500.0, 100.0, 250.0);
        let mut prev = overdue_probability(&PathLossInputs {
            deadline_ms: 0.0,
            ..base
        });
        for k in 1..40 {
            let p = overdue_probability(&PathLossInputs {
                deadline_ms: 25.0 * k as f64,
                ..base
            });
            assert!(p <= prev + 1e-15, "not nonincreasing in deadline");
            prev = p;
        }
        let mut prev = overdue_probability(&PathLossInputs {
            rate_kbps: 0.0,
            ..base
        });
        for k in 1..20 {
            let r = 50.0 * k as f64;
            let p = overdue_probability(&PathLossInputs {
                rate_kbps: r,
                ..base
            });
            assert!(p >= prev - 1e-15, "not nondecreasing in rate");
            prev = p;
        }
    }

    #[test]
    fn effective_loss_rate_examples() {
        assert_eq!(effective_loss_rate(0.0, 0.3), 0.3);
        assert_eq!(effective_loss_rate(0.3, 0.0), 0.3);
        assert!(approx(
            effective_loss_rate(0.02, 0.00707),
            0.02 + 0.98 * 0.00707,
            1e-15
        ));
    }

    #[test]
    fn effective_loss_rate_bounds_random_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let a: f64 = rng.gen_range(0.0..1.0);
            let b: f64 = rng.gen_range(0.0..1.0);
            let e = effective_loss_rate(a, b);
            assert!(e >= a.max(b) - 1e-15);
            assert!(e <= (a + b).min(1.0) + 1e-15);
        }
    }

    fn params() -> DistortionParams {
        DistortionParams {
            d0: 1.0,
            alpha: 1000.0,
            r0: 100.0,
            beta: 50.0,
        }
    }

    #[test]
    fn total_distortion_known_value() {
        let d = total_distortion(&params(), 1100.0, &[600.0, 400.0], &[0.01, 0.05]).unwrap();
        assert!(approx(d, 3.3, 1e-12), "d={d}");
    }

    #[test]
    fn total_distortion_limits() {
        // Lossless and very high rate: floor distortion remains.
        let d = total_distortion(&params(), 1e12, &[1.0], &[0.0]).unwrap();
        assert!(approx(d, 1.0, 1e-6));
        // Single path.
        let d = total_distortion(&params(), 1100.0, &[700.0], &[0.04]).unwrap();
        assert!(approx(d, 1.0 + 1.0 + 50.0 * 0.04, 1e-12));
    }

    #[test]
    fn total_distortion_domain_errors() {
        assert!(matches!(
            total_distortion(&params(), 50.0, &[1.0], &[0.0]),
            Err(ModelError::RateOutOfDomain { .. })
        ));
        assert!(matches!(
            total_distortion(&params(), 1100.0, &[0.0, 0.0], &[0.0, 0.0]),
            Err(ModelError::ZeroTotalRate)
        ));
        assert!(matches!(
            total_distortion(&params(), 1100.0, &[1.0], &[0.0, 0.1]),
            Err(ModelError::MismatchedVectors)
        ));
    }

    #[test]
    fn distortion_monotonicity() {
        let p = params();
        let mut prev = f64::INFINITY;
        for k in 2..30 {
            let rate = 100.0 + 100.0 * k as f64;
            let d = total_distortion(&p, rate, &[rate], &[0.02]).unwrap();
            assert!(d <= prev);
            prev = d;
        }
        let mut prev = 0.0;
        for k in 0..20 {
            let loss = 0.05 * k as f64 / 20.0;
            let d = total_distortion(&p, 1000.0, &[500.0, 500.0], &[loss, 0.01]).unwrap();
            assert!(d >= prev);
            prev = d;
        }
    }

    #[test]
    fn psnr_examples() {
        assert!(approx(psnr_from_mse(255.0 * 255.0), 0.0, 1e-12));
        assert!(approx(psnr_from_mse(1.0), 48.130803608679105, 1e-9));
        assert!(approx(psnr_from_mse(65.025), 30.0, 1e-9));
        assert_eq!(psnr_from_mse(0.0), MAX_PSNR_DB);
        assert_eq!(psnr_from_mse(-3.0), MAX_PSNR_DB);
    }
}
