//! Two-state continuous-time Markov burst-loss model and per-path status
//! estimation.
//!
//! Each communication path alternates between a `Good` state (packets get
//! through) and a `Bad` state (packets are lost). The chain is parameterized
//! by the two transition rates and sampled exactly at packet-send instants
//! through the transient transition matrix, never by per-tick approximation.

use std::collections::{HashMap, VecDeque};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Window of recently dispatched packets used for loss-rate estimation.
pub const LOSS_WINDOW: usize = 200;
/// Weight of a new RTT sample in the smoothed estimate.
pub const RTT_ALPHA: f64 = 1.0 / 8.0;
/// Weight of a new deviation sample in the RTT variance estimate.
pub const RTT_BETA: f64 = 1.0 / 4.0;
/// Lower bound on the retransmission timeout, in ms.
pub const RTO_FLOOR_MS: f64 = 200.0;
/// Upper bound on the retransmission timeout, in ms.
pub const RTO_CEIL_MS: f64 = 60_000.0;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("transition rates must be positive and finite, got xi_g={xi_g}, xi_b={xi_b}")]
    InvalidRates { xi_g: f64, xi_b: f64 },
    #[error("loss rate must lie strictly inside (0, 1), got {0}")]
    DegenerateLossRate(f64),
    #[error("mean burst length must be positive, got {0}")]
    InvalidBurstLength(f64),
    #[error("sampling interval must be nonnegative, got {0}")]
    NegativeInterval(f64),
    #[error("invalid path spec: {0}")]
    InvalidPathSpec(String),
}

/// Good/Bad state of the loss chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinkState {
    Good,
    Bad,
}

/// Transition rates of the two-state chain, per millisecond.
///
/// `xi_g` is the Bad->Good rate, `xi_b` the Good->Bad rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GilbertParams {
    xi_g: f64,
    xi_b: f64,
}

impl GilbertParams {
    pub fn new(xi_g: f64, xi_b: f64) -> Result<Self, ChannelError> {
        if !(xi_g > 0.0 && xi_g.is_finite() && xi_b > 0.0 && xi_b.is_finite()) {
            return Err(ChannelError::InvalidRates { xi_g, xi_b });
        }
        Ok(Self { xi_g, xi_b })
    }

    /// Inverts the two operator-facing parameters (stationary loss rate and
    /// mean burst length) into transition rates: `xi_b = 1/mean_burst` and
    /// `xi_g` chosen so the stationary Bad probability equals `loss_rate`.
    ///
    /// Lossless and always-bad paths are outside the model; callers handle
    /// them separately.
    pub fn from_stats(loss_rate: f64, mean_burst_ms: f64) -> Result<Self, ChannelError> {
        if !(loss_rate > 0.0 && loss_rate < 1.0) {
            return Err(ChannelError::DegenerateLossRate(loss_rate));
        }
        if !(mean_burst_ms > 0.0 && mean_burst_ms.is_finite()) {
            return Err(ChannelError::InvalidBurstLength(mean_burst_ms));
        }
        let xi_b = 1.0 / mean_burst_ms;
        let xi_g = xi_b * (1.0 - loss_rate) / loss_rate;
        Self::new(xi_g, xi_b)
    }

    pub fn xi_g(&self) -> f64 {
        self.xi_g
    }

    pub fn xi_b(&self) -> f64 {
        self.xi_b
    }

    /// Stationary probabilities `(pi_g, pi_b)`; they sum to 1 exactly.
    pub fn stationary(&self) -> (f64, f64) {
        let sum = self.xi_g + self.xi_b;
        (self.xi_g / sum, self.xi_b / sum)
    }

    /// Exact transient transition matrix over a gap of `omega_ms`.
    pub fn transition_matrix(&self, omega_ms: f64) -> Result<TransitionMatrix, ChannelError> {
        if omega_ms < 0.0 || omega_ms.is_nan() {
            return Err(ChannelError::NegativeInterval(omega_ms));
        }
        let (pi_g, pi_b) = self.stationary();
        let kappa = (-(self.xi_b + self.xi_g) * omega_ms).exp();
        Ok(TransitionMatrix {
            gg: pi_g + pi_b * kappa,
            gb: pi_b - pi_b * kappa,
            bg: pi_g - pi_g * kappa,
            bb: pi_b + pi_g * kappa,
        })
    }
}

/// Row-stochastic 2x2 matrix of state transition probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionMatrix {
    pub gg: f64,
    pub gb: f64,
    pub bg: f64,
    pub bb: f64,
}

impl TransitionMatrix {
    /// Probability of moving from `from` into the Bad state.
    pub fn to_bad(&self, from: LinkState) -> f64 {
        match from {
            LinkState::Good => self.gb,
            LinkState::Bad => self.bb,
        }
    }

    pub fn entry(&self, from: LinkState, to: LinkState) -> f64 {
        match (from, to) {
            (LinkState::Good, LinkState::Good) => self.gg,
            (LinkState::Good, LinkState::Bad) => self.gb,
            (LinkState::Bad, LinkState::Good) => self.bg,
            (LinkState::Bad, LinkState::Bad) => self.bb,
        }
    }

    /// Matrix product `self * other`.
    pub fn compose(&self, other: &TransitionMatrix) -> TransitionMatrix {
        TransitionMatrix {
            gg: self.gg * other.gg + self.gb * other.bg,
            gb: self.gg * other.gb + self.gb * other.bb,
            bg: self.bg * other.gg + self.bb * other.bg,
            bb: self.bg * other.gb + self.bb * other.bb,
        }
    }
}

/// Samples the chain state at a nondecreasing sequence of instants, using the
/// exact transient matrix for each gap.
#[derive(Debug, Clone)]
pub struct StateSampler {
    params: GilbertParams,
    rng: ChaCha8Rng,
    state: LinkState,
    last_t_ms: f64,
}

impl StateSampler {
    /// Starts the chain in its stationary distribution at time `t0_ms`.
    pub fn new(params: GilbertParams, t0_ms: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, pi_b) = params.stationary();
        let state = if rng.gen_bool(pi_b.clamp(0.0, 1.0)) {
            LinkState::Bad
        } else {
            LinkState::Good
        };
        Self {
            params,
            rng,
            state,
            last_t_ms: t0_ms,
        }
    }

    /// State at `t_ms`; `t_ms` must be >= the previous sampling instant.
    pub fn state_at(&mut self, t_ms: f64) -> LinkState {
        debug_assert!(t_ms >= self.last_t_ms, "sampler time moved backwards");
        let gap = (t_ms - self.last_t_ms).max(0.0);
        if gap > 0.0 {
            let m = self
                .params
                .transition_matrix(gap)
                .expect("nonnegative gap");
            let p_bad = m.to_bad(self.state);
            self.state = if self.rng.gen_bool(p_bad.clamp(0.0, 1.0)) {
                LinkState::Bad
            } else {
                LinkState::Good
            };
        }
        self.last_t_ms = t_ms;
        self.state
    }
}

/// Draws `n` states at spacing `omega_ms`, starting from the stationary
/// distribution. Deterministic for a given seed.
pub fn sample_loss_sequence(
    params: &GilbertParams,
    omega_ms: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<LinkState>, ChannelError> {
    if omega_ms < 0.0 {
        return Err(ChannelError::NegativeInterval(omega_ms));
    }
    let mut sampler = StateSampler::new(*params, 0.0, seed);
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return Ok(out);
    }
    out.push(sampler.state_at(0.0));
    for i in 1..n {
        out.push(sampler.state_at(i as f64 * omega_ms));
    }
    Ok(out)
}

/// Piecewise-constant step function of time (ms) used for capacity and
/// encoding-rate traces. The value at `t` is the value of the last step with
/// `start <= t`; before the first step it is the first step's value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    steps: Vec<(f64, f64)>,
}

impl StepTrace {
    pub fn constant(value: f64) -> Self {
        Self {
            steps: vec![(0.0, value)],
        }
    }

    pub fn new(mut steps: Vec<(f64, f64)>) -> Result<Self, ChannelError> {
        if steps.is_empty() {
            return Err(ChannelError::InvalidPathSpec("empty trace".into()));
        }
        steps.sort_by(|a, b| a.0.total_cmp(&b.0));
        if steps.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(ChannelError::InvalidPathSpec(
                "duplicate trace timestamps".into(),
            ));
        }
        Ok(Self { steps })
    }

    pub fn value_at(&self, t_ms: f64) -> f64 {
        let mut v = self.steps[0].1;
        for &(start, value) in &self.steps {
            if start <= t_ms {
                v = value;
            } else {
                break;
            }
        }
        v
    }

    pub fn steps(&self) -> &[(f64, f64)] {
        &self.steps
    }
}

/// Static description of one communication path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathSpec {
    pub id: usize,
    /// Available bandwidth over time, Kbps.
    pub capacity_trace: StepTrace,
    pub base_rtt_ms: f64,
    pub gilbert: GilbertParams,
    /// Sorted, disjoint `[start, end)` windows (ms) during which the path
    /// exists. Outside them every packet is dropped.
    pub availability: Vec<(f64, f64)>,
}

impl PathSpec {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(self.base_rtt_ms > 0.0) {
            return Err(ChannelError::InvalidPathSpec(format!(
                "path {}: base_rtt must be positive",
                self.id
            )));
        }
        if self.capacity_trace.steps().iter().any(|&(_, v)| v < 0.0) {
            return Err(ChannelError::InvalidPathSpec(format!(
                "path {}: negative capacity",
                self.id
            )));
        }
        let mut prev_end = f64::NEG_INFINITY;
        for &(start, end) in &self.availability {
            if start >= end {
                return Err(ChannelError::InvalidPathSpec(format!(
                    "path {}: empty availability interval [{start}, {end})",
                    self.id
                )));
            }
            if start < prev_end {
                return Err(ChannelError::InvalidPathSpec(format!(
                    "path {}: availability intervals overlap or are unsorted",
                    self.id
                )));
            }
            prev_end = end;
        }
        Ok(())
    }

    pub fn capacity_at(&self, t_ms: f64) -> f64 {
        self.capacity_trace.value_at(t_ms)
    }

    pub fn available_at(&self, t_ms: f64) -> bool {
        self.availability
            .iter()
            .any(|&(s, e)| s <= t_ms && t_ms < e)
    }
}

/// Liveness classification of a path as seen by the sender.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PathStatus {
    Active,
    PotentiallyFailed,
    Inactive,
}

/// Live per-path estimates maintained from acknowledgment feedback.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PathStats {
    /// Estimated available bandwidth, Kbps.
    pub mu_kbps: f64,
    /// Smoothed round-trip time, ms.
    pub rtt_ms: f64,
    /// Estimated stationary loss rate, in [0, 1].
    pub loss_rate: f64,
    /// Congestion window, bytes.
    pub cwnd_bytes: u64,
    /// Retransmission timeout, ms.
    pub rto_ms: f64,
    pub status: PathStatus,
}

/// Per-path acknowledgment outcome digest handed to the estimator.
#[derive(Debug, Clone, Default)]
pub struct AckEvent {
    /// Newly acknowledged TSNs with an optional RTT sample (None for
    /// retransmitted chunks, which must not feed the RTT estimator).
    pub acked: Vec<(u64, Option<f64>)>,
    /// TSNs declared lost on this path.
    pub lost: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DispatchOutcome {
    Pending,
    Delivered,
    Lost,
}

/// Sliding-window estimator behind [`PathStats`].
///
/// Loss rate is the lost/dispatched ratio over the last [`LOSS_WINDOW`]
/// packets dispatched on the path; RTT smoothing and the RTO follow the
/// conventional transport constants; bandwidth is recomputed as cwnd/RTT
/// after every update.
///
/// Every dispatch gets its own window slot (a retransmission of the same
/// TSN counts again); feedback resolves the latest dispatch of that TSN.
#[derive(Debug, Clone)]
pub struct PathStatsTracker {
    window: VecDeque<u64>,
    outcomes: HashMap<u64, DispatchOutcome>,
    latest_dispatch: HashMap<u64, u64>,
    next_key: u64,
    srtt_ms: Option<f64>,
    rttvar_ms: f64,
    stats: PathStats,
    /// Feedback that referenced a TSN never dispatched on this path.
    pub unknown_feedback: u64,
}

impl PathStatsTracker {
    pub fn new(initial_rtt_ms: f64, initial_cwnd_bytes: u64) -> Self {
        let stats = PathStats {
            mu_kbps: initial_cwnd_bytes as f64 * 8.0 / initial_rtt_ms,
            rtt_ms: initial_rtt_ms,
            loss_rate: 0.0,
            cwnd_bytes: initial_cwnd_bytes,
            rto_ms: (initial_rtt_ms * 2.0).max(RTO_FLOOR_MS),
            status: PathStatus::Active,
        };
        Self {
            window: VecDeque::new(),
            outcomes: HashMap::new(),
            latest_dispatch: HashMap::new(),
            next_key: 0,
            srtt_ms: None,
            rttvar_ms: 0.0,
            stats,
            unknown_feedback: 0,
        }
    }

    pub fn stats(&self) -> PathStats {
        self.stats
    }

    pub fn set_status(&mut self, status: PathStatus) {
        self.stats.status = status;
    }

    pub fn set_cwnd(&mut self, cwnd_bytes: u64) {
        self.stats.cwnd_bytes = cwnd_bytes;
        self.recompute_mu();
    }

    pub fn set_rto(&mut self, rto_ms: f64) {
        self.stats.rto_ms = rto_ms.clamp(RTO_FLOOR_MS, RTO_CEIL_MS);
    }

    pub fn record_dispatch(&mut self, tsn: u64) {
        let key = self.next_key;
        self.next_key += 1;
        self.window.push_back(key);
        self.outcomes.insert(key, DispatchOutcome::Pending);
        self.latest_dispatch.insert(tsn, key);
        while self.window.len() > LOSS_WINDOW {
            if let Some(old) = self.window.pop_front() {
                self.outcomes.remove(&old);
            }
        }
        self.recompute_loss();
    }

    fn resolve(&mut self, tsn: u64, outcome: DispatchOutcome) {
        match self.latest_dispatch.get(&tsn) {
            Some(key) => {
                // Dispatches that already slid out of the window are
                // silently ignored.
                if let Some(slot) = self.outcomes.get_mut(key) {
                    *slot = outcome;
                }
            }
            None => self.unknown_feedback += 1,
        }
    }

    /// Folds acknowledgment feedback into the estimates.
    pub fn update(&mut self, feedback: &AckEvent) {
        for &(tsn, rtt_sample) in &feedback.acked {
            self.resolve(tsn, DispatchOutcome::Delivered);
            if let Some(sample) = rtt_sample {
                self.take_rtt_sample(sample);
            }
        }
        for &tsn in &feedback.lost {
            self.resolve(tsn, DispatchOutcome::Lost);
        }
        self.recompute_loss();
        self.recompute_mu();
    }

    fn take_rtt_sample(&mut self, sample_ms: f64) {
        match self.srtt_ms {
            None => {
                self.srtt_ms = Some(sample_ms);
                self.rttvar_ms = sample_ms / 2.0;
            }
            Some(srtt) => {
                self.rttvar_ms =
                    (1.0 - RTT_BETA) * self.rttvar_ms + RTT_BETA * (srtt - sample_ms).abs();
                self.srtt_ms = Some((1.0 - RTT_ALPHA) * srtt + RTT_ALPHA * sample_ms);
            }
        }
        let srtt = self.srtt_ms.unwrap();
        self.stats.rtt_ms = srtt;
        self.stats.rto_ms = (srtt + 4.0 * self.rttvar_ms).clamp(RTO_FLOOR_MS, RTO_CEIL_MS);
    }

    fn recompute_loss(&mut self) {
        let dispatched = self.window.len();
        if dispatched == 0 {
            self.stats.loss_rate = 0.0;
            return;
        }
        let lost = self
            .outcomes
            .values()
            .filter(|o| **o == DispatchOutcome::Lost)
            .count();
        self.stats.loss_rate = lost as f64 / dispatched as f64;
    }

    fn recompute_mu(&mut self) {
        if self.stats.rtt_ms > 0.0 {
            self.stats.mu_kbps = self.stats.cwnd_bytes as f64 * 8.0 / self.stats.rtt_ms;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn from_stats_inverts_table_rows() {
        let g = GilbertParams::from_stats(0.02, 10.0).unwrap();
        assert!(approx(g.xi_b(), 0.1, 1e-15));
        assert!(approx(g.xi_g(), 4.9, 1e-12));
        // Round trip through the stationary distribution.
        let (_, pi_b) = g.stationary();
        assert!(approx(pi_b, 0.02, 1e-15));

        let g = GilbertParams::from_stats(0.06, 20.0).unwrap();
        assert!(approx(g.xi_b(), 0.05, 1e-15));
        assert!(approx(g.xi_g(), 0.05 * 0.94 / 0.06, 1e-12));
        let (_, pi_b) = g.stationary();
        assert!(approx(pi_b, 0.06, 1e-15));
    }

    #[test]
    fn from_stats_symmetric_at_half() {
        let g = GilbertParams::from_stats(0.5, 7.0).unwrap();
        assert!(approx(g.xi_g(), g.xi_b(), 1e-15));
        let (pi_g, pi_b) = g.stationary();
        assert_eq!(pi_g, 0.5);
        assert_eq!(pi_b, 0.5);
    }

    #[test]
    fn from_stats_rejects_degenerate() {
        assert!(matches!(
            GilbertParams::from_stats(0.0, 10.0),
            Err(ChannelError::DegenerateLossRate(_))
        ));
        assert!(matches!(
            GilbertParams::from_stats(1.0, 10.0),
            Err(ChannelError::DegenerateLossRate(_))
        ));
        assert!(matches!(
            GilbertParams::from_stats(0.1, 0.0),
            Err(ChannelError::InvalidBurstLength(_))
        ));
    }

    #[test]
    fn stationary_probs_sum_to_one() {
        let g = GilbertParams::new(4.9, 0.1).unwrap();
        let (pi_g, pi_b) = g.stationary();
        assert!(approx(pi_g, 0.98, 1e-15));
        assert!(approx(pi_b, 0.02, 1e-15));
        assert_eq!(pi_g + pi_b, 1.0);

        let g = GilbertParams::new(0.45, 0.05).unwrap();
        let (pi_g, pi_b) = g.stationary();
        assert!(approx(pi_g, 0.9, 1e-15));
        assert!(approx(pi_b, 0.1, 1e-15));
    }

    #[test]
    fn transition_matrix_at_zero_is_identity() {
        let g = GilbertParams::new(0.45, 0.05).unwrap();
        let m = g.transition_matrix(0.0).unwrap();
        assert!(approx(m.gg, 1.0, 1e-15));
        assert!(approx(m.gb, 0.0, 1e-15));
        assert!(approx(m.bg, 0.0, 1e-15));
        assert!(approx(m.bb, 1.0, 1e-15));
    }

    #[test]
    fn transition_matrix_long_gap_reaches_stationary() {
        let g = GilbertParams::new(0.45, 0.05).unwrap();
        let m = g.transition_matrix(1e9).unwrap();
        let (pi_g, pi_b) = g.stationary();
        for row in [(m.gg, m.gb), (m.bg, m.bb)] {
            assert!(approx(row.0, pi_g, 1e-12));
            assert!(approx(row.1, pi_b, 1e-12));
        }
    }

    #[test]
    fn transition_matrix_known_value() {
        // kappa = exp(-(0.45+0.05)*2) = exp(-1)
        let g = GilbertParams::new(0.45, 0.05).unwrap();
        let m = g.transition_matrix(2.0).unwrap();
        let kappa = (-1.0f64).exp();
        assert!(approx(m.bb, 0.1 + 0.9 * kappa, 1e-15));
        assert!(approx(m.gb, 0.1 - 0.1 * kappa, 1e-15));
        assert!(approx(m.gg + m.gb, 1.0, 1e-15));
        assert!(approx(m.bg + m.bb, 1.0, 1e-15));
    }

    #[test]
    fn transition_matrix_rejects_negative_gap() {
        let g = GilbertParams::new(0.45, 0.05).unwrap();
        assert!(g.transition_matrix(-1.0).is_err());
    }

    #[test]
    fn chapman_kolmogorov_random_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let g = GilbertParams::new(
                rng.gen_range(0.01..5.0),
                rng.gen_range(0.01..5.0),
            )
            .unwrap();
            let a = rng.gen_range(0.0..10.0);
            let b = rng.gen_range(0.0..10.0);
            let lhs = g.transition_matrix(a + b).unwrap();
            let rhs = g
                .transition_matrix(a)
                .unwrap()
                .compose(&g.transition_matrix(b).unwrap());
            assert!(approx(lhs.gg, rhs.gg, 1e-10));
            assert!(approx(lhs.gb, rhs.gb, 1e-10));
            assert!(approx(lhs.bg, rhs.bg, 1e-10));
            assert!(approx(lhs.bb, rhs.bb, 1e-10));
        }
    }

    #[test]
    fn sampled_sequence_is_deterministic() {
        let g = GilbertParams::from_stats(0.1, 5.0).unwrap();
        let a = sample_loss_sequence(&g, 5.0, 1000, 42).unwrap();
        let b = sample_loss_sequence(&g, 5.0, 1000, 42).unwrap();
        assert_eq!(a, b);
        let c = sample_loss_sequence(&g, 5.0, 1000, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sampled_fraction_matches_stationary() {
        let g = GilbertParams::from_stats(0.02, 10.0).unwrap();
        let seq = sample_loss_sequence(&g, 5.0, 200_000, 7).unwrap();
        let bad = seq.iter().filter(|s| **s == LinkState::Bad).count() as f64;
        let frac = bad / seq.len() as f64;
        assert!(approx(frac, 0.02, 0.002), "frac={frac}");
    }

    #[test]
    fn near_lossless_chain_rarely_enters_bad() {
        let g = GilbertParams::new(1.0, 1e-9).unwrap();
        let seq = sample_loss_sequence(&g, 1.0, 10_000, 3).unwrap();
        let bad = seq.iter().filter(|s| **s == LinkState::Bad).count();
        assert_eq!(bad, 0);
    }

    #[test]
    fn sampled_run_lengths_match_chain_dwell_times() {
        // Mean dwell time is 1/exit-rate: 1/xi_g in Bad, 1/xi_b in Good.
        // Sampled at grid spacing w, the expected run of consecutive Bad
        // samples is 1/(1 - f_bb) grid steps.
        let g = GilbertParams::from_stats(0.1, 10.0).unwrap();
        let w = 1.0;
        let seq = sample_loss_sequence(&g, w, 500_000, 17).unwrap();
        let mut runs = Vec::new();
        let mut cur = 0usize;
        for s in &seq {
            if *s == LinkState::Bad {
                cur += 1;
            } else if cur > 0 {
                runs.push(cur);
                cur = 0;
            }
        }
        if cur > 0 {
            runs.push(cur);
        }
        let mean_run = runs.iter().sum::<usize>() as f64 / runs.len() as f64;
        let m = g.transition_matrix(w).unwrap();
        let expected = 1.0 / (1.0 - m.bb);
        assert!(
            (mean_run - expected).abs() / expected < 0.05,
            "mean_run={mean_run}, expected={expected}"
        );
    }

    #[test]
    fn step_trace_lookup() {
        let tr = StepTrace::new(vec![(0.0, 300.0), (1000.0, 150.0), (2000.0, 600.0)]).unwrap();
        assert_eq!(tr.value_at(-5.0), 300.0);
        assert_eq!(tr.value_at(0.0), 300.0);
        assert_eq!(tr.value_at(999.9), 300.0);
        assert_eq!(tr.value_at(1000.0), 150.0);
        assert_eq!(tr.value_at(5000.0), 600.0);
    }

    #[test]
    fn path_spec_validation() {
        let good = PathSpec {
            id: 0,
            capacity_trace: StepTrace::constant(300.0),
            base_rtt_ms: 100.0,
            gilbert: GilbertParams::from_stats(0.02, 10.0).unwrap(),
            availability: vec![(0.0, 1000.0), (2000.0, 3000.0)],
        };
        assert!(good.validate().is_ok());
        assert!(good.available_at(500.0));
        assert!(!good.available_at(1500.0));
        assert!(!good.available_at(3000.0));

        let mut bad = good.clone();
        bad.availability = vec![(0.0, 1000.0), (500.0, 1500.0)];
        assert!(bad.validate().is_err());
    }

    #[test]
    fn tracker_loss_rate_over_window() {
        let mut tr = PathStatsTracker::new(100.0, 50_000);
        for tsn in 0..100u64 {
            tr.record_dispatch(tsn);
        }
        let mut ev = AckEvent::default();
        for tsn in 0..98u64 {
            ev.acked.push((tsn, None));
        }
        ev.lost = vec![98, 99];
        tr.update(&ev);
        assert!(approx(tr.stats().loss_rate, 0.02, 1e-15));
    }

    #[test]
    fn tracker_all_acked_is_lossless() {
        let mut tr = PathStatsTracker::new(50.0, 10_000);
        for tsn in 0..50u64 {
            tr.record_dispatch(tsn);
        }
        let ev = AckEvent {
            acked: (0..50u64).map(|t| (t, None)).collect(),
            lost: vec![],
        };
        tr.update(&ev);
        assert_eq!(tr.stats().loss_rate, 0.0);
    }

    #[test]
    fn tracker_mu_is_cwnd_over_rtt() {
        let mut tr = PathStatsTracker::new(100.0, 50_000);
        // Feed identical samples so the smoothed RTT settles at 100 ms.
        for tsn in 0..10u64 {
            tr.record_dispatch(tsn);
            tr.update(&AckEvent {
                acked: vec![(tsn, Some(100.0))],
                lost: vec![],
            });
        }
        tr.set_cwnd(50_000);
        // 50000 bytes * 8 bits / 100 ms = 4000 Kbps.
        assert!(approx(tr.stats().mu_kbps, 4000.0, 1e-9));
    }

    #[test]
    fn tracker_ignores_unknown_tsn_with_counter() {
        let mut tr = PathStatsTracker::new(100.0, 50_000);
        tr.record_dispatch(1);
        tr.update(&AckEvent {
            acked: vec![(999, None)],
            lost: vec![998],
        });
        assert_eq!(tr.unknown_feedback, 2);
        assert_eq!(tr.stats().loss_rate, 0.0);
    }

    #[test]
    fn tracker_window_slides() {
        let mut tr = PathStatsTracker::new(100.0, 50_000);
        for tsn in 0..(LOSS_WINDOW as u64) {
            tr.record_dispatch(tsn);
        }
        tr.update(&AckEvent {
            acked: vec![],
            lost: (0..10u64).collect(),
        });
        assert!(tr.stats().loss_rate > 0.0);
        // Push the lossy prefix out of the window.
        for tsn in (LOSS_WINDOW as u64)..(2 * LOSS_WINDOW as u64) {
            tr.record_dispatch(tsn);
        }
        assert_eq!(tr.stats().loss_rate, 0.0);
    }

    #[test]
    fn rto_tracks_rtt_with_floor() {
        let mut tr = PathStatsTracker::new(100.0, 50_000);
        tr.record_dispatch(0);
        tr.update(&AckEvent {
            acked: vec![(0, Some(40.0))],
            lost: vec![],
        });
        let s = tr.stats();
        assert!(s.rto_ms >= s.rtt_ms);
        assert!(s.rto_ms >= RTO_FLOOR_MS);
    }

    #[test]
    fn sampler_seed_stability_across_gaps() {
        let g = GilbertParams::from_stats(0.3, 4.0).unwrap();
        let mut s1 = StateSampler::new(g, 0.0, 5);
        let mut s2 = StateSampler::new(g, 0.0, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut t = 0.0;
        for _ in 0..500 {
            t += (rng.next_u32() % 100) as f64 / 10.0;
            assert_eq!(s1.state_at(t), s2.state_at(t));
        }
    }
}
