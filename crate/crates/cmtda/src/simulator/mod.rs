//! Discrete-event simulation of one video association over several lossy
//! paths, under one of four data distribution schemes.
//!
//! The engine models each path as a FIFO queue drained at the path's
//! effective capacity plus a fixed propagation delay of half the base RTT
//! per direction. Burst losses come from the exact transient sampling of
//! the per-path loss chain at transmission instants. The analytical delay
//! model remains the allocator's prediction tool only; simulated delays
//! emerge from queueing and propagation.

mod engine;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{PathSpec, StepTrace};
use crate::distortion::DistortionParams;
use crate::metrics::EventTrace;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario invalid: {0}")]
    InvalidScenario(String),
    #[error("simulation failed: {0}")]
    Engine(String),
}

/// Background cross-traffic abstraction: the bottleneck capacity is reduced
/// by a uniformly random fraction, resampled periodically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSpec {
    pub frac_min: f64,
    pub frac_max: f64,
    pub resample_ms: f64,
}

impl Default for BackgroundSpec {
    fn default() -> Self {
        Self {
            frac_min: 0.0,
            frac_max: 0.10,
            resample_ms: 500.0,
        }
    }
}

/// Video source description: encoding rate over time and the distortion
/// model constants of the sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoConfig {
    /// Encoding rate trace, Kbps. Constant-rate sources use a single step.
    pub rate_trace: StepTrace,
    pub distortion: DistortionParams,
    pub sequence: String,
}

/// Complete description of one simulation run (minus the scheme).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub paths: Vec<PathSpec>,
    pub video: VideoConfig,
    /// Arrival deadline relative to GoP emission, ms.
    pub deadline_ms: f64,
    /// Application loss requirement (fraction) gating retransmissions.
    pub loss_requirement: f64,
    /// Data distribution interval (one GoP), ms.
    pub interval_ms: f64,
    /// Packet interleaving spacing per path, ms.
    pub omega_ms: f64,
    /// Load-imbalance threshold for the allocator.
    pub tlv: f64,
    pub background: BackgroundSpec,
    pub duration_ms: f64,
    pub seed: u64,
    pub receiver_buffer_bytes: u64,
    /// Association send buffer; GoP data beyond it is shed at the source.
    pub send_buffer_bytes: u64,
    pub mtu_bytes: u64,
}

impl Scenario {
    /// Validates hard invariants; returns human-readable warnings for the
    /// soft ones.
    pub fn validate(&self) -> Result<Vec<String>, SimError> {
        let mut warnings = Vec::new();
        if self.paths.is_empty() {
            return Err(SimError::InvalidScenario("no paths".into()));
        }
        for p in &self.paths {
            p.validate()
                .map_err(|e| SimError::InvalidScenario(e.to_string()))?;
        }
        if !(self.interval_ms > 0.0) {
            return Err(SimError::InvalidScenario(
                "interval_ms must be positive".into(),
            ));
        }
        if !(self.duration_ms > 0.0) {
            return Err(SimError::InvalidScenario(
                "duration_ms must be positive".into(),
            ));
        }
        if !(self.deadline_ms > 0.0) {
            return Err(SimError::InvalidScenario(
                "deadline_ms must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.loss_requirement) {
            return Err(SimError::InvalidScenario(
                "loss_requirement must lie in [0, 1]".into(),
            ));
        }
        if !(self.background.frac_min >= 0.0
            && self.background.frac_min <= self.background.frac_max
            && self.background.frac_max <= 1.0)
        {
            return Err(SimError::InvalidScenario(
                "background fraction range must satisfy 0 <= min <= max <= 1".into(),
            ));
        }
        if !(self.background.resample_ms > 0.0) {
            return Err(SimError::InvalidScenario(
                "background resample period must be positive".into(),
            ));
        }
        if self.mtu_bytes == 0 {
            return Err(SimError::InvalidScenario("mtu_bytes must be positive".into()));
        }
        if !(self.omega_ms > 0.0) {
            return Err(SimError::InvalidScenario("omega_ms must be positive".into()));
        }
        if self.video.distortion.validate().is_err() {
            return Err(SimError::InvalidScenario(
                "distortion parameters invalid".into(),
            ));
        }
        if self.deadline_ms < self.interval_ms {
            warnings.push(format!(
                "deadline ({} ms) is shorter than the distribution interval ({} ms)",
                self.deadline_ms, self.interval_ms
            ));
        }
        if self.background.frac_max > 0.10 {
            warnings.push(format!(
                "background fraction range up to {} exceeds the usual 0.10",
                self.background.frac_max
            ));
        }
        Ok(warnings)
    }
}

/// Data distribution scheme under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SchedulerScheme {
    /// Distortion-aware allocation with delay/loss gated retransmission.
    CmtDa,
    /// Quality-ratio weighted distribution (behavioral sketch).
    CmtQa,
    /// Round-robin with potentially-failed path exclusion.
    CmtPf,
    /// Plain round-robin with lowest-loss retransmission.
    Cmt,
}

impl SchedulerScheme {
    pub const ALL: [SchedulerScheme; 4] = [
        SchedulerScheme::CmtDa,
        SchedulerScheme::CmtQa,
        SchedulerScheme::CmtPf,
        SchedulerScheme::Cmt,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SchedulerScheme::CmtDa => "cmt-da",
            SchedulerScheme::CmtQa => "cmt-qa",
            SchedulerScheme::CmtPf => "cmt-pf",
            SchedulerScheme::Cmt => "cmt",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "cmt-da" | "cmtda" | "cmt_da" => Some(SchedulerScheme::CmtDa),
            "cmt-qa" | "cmtqa" | "cmt_qa" => Some(SchedulerScheme::CmtQa),
            "cmt-pf" | "cmtpf" | "cmt_pf" => Some(SchedulerScheme::CmtPf),
            "cmt" => Some(SchedulerScheme::Cmt),
            _ => None,
        }
    }
}

/// Byte ledger of one run. Copy-level counters treat every transmission
/// separately; chunk-level counters treat a chunk once.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Conservation {
    /// Payload offered by the source (all GoPs).
    pub emitted_bytes: u64,
    /// Payload actually mapped onto chunks (zero-capacity intervals may
    /// leave a GoP unchunked).
    pub chunked_bytes: u64,
    pub sent_original_bytes: u64,
    pub sent_retransmit_bytes: u64,
    /// Copies dropped by the channel or an availability gap.
    pub channel_lost_bytes: u64,
    /// Copies that physically reached the receiver.
    pub arrived_bytes: u64,
    /// Copies discarded as duplicates.
    pub duplicate_bytes: u64,
    /// Copies dropped against a full reorder buffer.
    pub buffer_dropped_bytes: u64,
    /// Copies still inside a path pipe or propagating when the run ended.
    pub in_pipe_bytes: u64,
    /// Payload delivered to the application.
    pub delivered_bytes: u64,
    /// Chunks the sender gave up on.
    pub abandoned_bytes: u64,
    /// Chunks still queued or in flight when the run ended.
    pub unresolved_bytes: u64,
}

/// Per-run evaluation report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scheme: String,
    pub seed: u64,
    pub duration_ms: f64,
    /// Model-PSNR per deadline-complete GoP, dB.
    pub psnr_per_gop_db: Vec<f64>,
    pub psnr_mean_db: f64,
    pub psnr_ci95_half_db: f64,
    pub goodput_kbps: f64,
    pub effective_loss: f64,
    /// Effective loss per path, attributed to the original assignment.
    pub per_path_effective_loss: Vec<f64>,
    pub per_path_offered_bytes: Vec<u64>,
    pub mean_inter_packet_delay_ms: f64,
    /// CDF of inter-packet delay on a 1 ms grid.
    pub inter_packet_delay_cdf: Vec<(f64, f64)>,
    pub out_of_order_hist: Vec<(i64, u64)>,
    pub max_out_of_order_offset: i64,
    pub retransmissions_total: u64,
    /// Retransmissions whose chunk still arrived within its deadline.
    pub retransmissions_effective: u64,
    /// Per-interval rate shares: (t_ms, per-path Kbps).
    pub rate_shares: Vec<(f64, Vec<f64>)>,
    /// Per-interval estimated available bandwidth: (t_ms, per-path Kbps).
    pub mu_estimates: Vec<(f64, Vec<f64>)>,
    /// Per-interval smoothed RTT estimates: (t_ms, per-path ms).
    pub rtt_estimates: Vec<(f64, Vec<f64>)>,
    /// Per-interval loss-rate estimates: (t_ms, per-path fraction).
    pub loss_estimates: Vec<(f64, Vec<f64>)>,
    /// Per-GoP effective loss of deadline-complete GoPs: (t_ms, fraction).
    pub gop_effective_loss: Vec<(f64, f64)>,
    /// Per-GoP delivered-in-deadline rate: (t_ms, Kbps).
    pub goodput_series: Vec<(f64, f64)>,
    pub conservation: Conservation,
    pub blocked_buffer_drops: u64,
    pub duplicates: u64,
    pub scenario_warnings: Vec<String>,
}

/// Runs one scenario under one scheme. Deterministic for a fixed
/// (scenario, scheme, seed) triple.
pub fn run(scenario: &Scenario, scheme: SchedulerScheme) -> Result<MetricsReport, SimError> {
    let (report, _) = run_with_trace(scenario, scheme, false)?;
    Ok(report)
}

/// [`run`], optionally keeping the full event trace.
pub fn run_with_trace(
    scenario: &Scenario,
    scheme: SchedulerScheme,
    keep_trace: bool,
) -> Result<(MetricsReport, Option<EventTrace>), SimError> {
    let warnings = scenario.validate()?;
    let mut eng = engine::Engine::new(scenario, scheme, false);
    eng.run();
    let (mut report, trace) = eng.finish();
    report.scenario_warnings = warnings;
    Ok((report, if keep_trace { Some(trace) } else { None }))
}

/// [`run`] with internal invariant auditing enabled; panics on violation.
/// Meant for stress tests.
pub fn run_audited(scenario: &Scenario, scheme: SchedulerScheme) -> Result<MetricsReport, SimError> {
    scenario.validate()?;
    let mut eng = engine::Engine::new(scenario, scheme, true);
    eng.run();
    Ok(eng.finish().0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::GilbertParams;

    pub(crate) fn simple_path(id: usize, capacity: f64, rtt: f64, loss: f64, burst: f64) -> PathSpec {
        PathSpec {
            id,
            capacity_trace: StepTrace::constant(capacity),
            base_rtt_ms: rtt,
            gilbert: GilbertParams::from_stats(loss, burst).unwrap(),
            availability: vec![(0.0, f64::INFINITY)],
        }
    }

    pub(crate) fn base_scenario(paths: Vec<PathSpec>, rate_kbps: f64, duration_ms: f64) -> Scenario {
        Scenario {
            paths,
            video: VideoConfig {
                rate_trace: StepTrace::constant(rate_kbps),
                distortion: DistortionParams {
                    d0: 1.0,
                    alpha: 1500.0,
                    r0: 80.0,
                    beta: 120.0,
                },
                sequence: "foreman".into(),
            },
            deadline_ms: 250.0,
            loss_requirement: 0.01,
            interval_ms: 250.0,
            omega_ms: 5.0,
            tlv: 1.2,
            background: BackgroundSpec {
                frac_min: 0.0,
                frac_max: 0.0,
                resample_ms: 500.0,
            },
            duration_ms,
            seed: 1,
            receiver_buffer_bytes: 64 * 1024,
            send_buffer_bytes: 128 * 1024,
            mtu_bytes: 1500,
        }
    }

    #[test]
    fn scenario_validation_catches_errors() {
        let mut s = base_scenario(vec![simple_path(0, 500.0, 60.0, 0.02, 10.0)], 400.0, 5000.0);
        assert!(s.validate().is_ok());
        s.interval_ms = 0.0;
        assert!(s.validate().is_err());
        let mut s = base_scenario(vec![], 400.0, 5000.0);
        assert!(s.validate().is_err());
        s = base_scenario(vec![simple_path(0, 500.0, 60.0, 0.02, 10.0)], 400.0, 5000.0);
        s.background.frac_max = 1.5;
        assert!(s.validate().is_err());
    }

    #[test]
    fn short_deadline_warns() {
        let mut s = base_scenario(vec![simple_path(0, 500.0, 60.0, 0.02, 10.0)], 400.0, 5000.0);
        s.deadline_ms = 100.0;
        let warnings = s.validate().unwrap();
        assert!(!warnings.is_empty());
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in SchedulerScheme::ALL {
            assert_eq!(SchedulerScheme::from_name(s.name()), Some(s));
        }
        assert_eq!(SchedulerScheme::from_name("nope"), None);
    }
}
