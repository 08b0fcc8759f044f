//! SCTP-like transport state machines used by the simulator: per-path
//! congestion control, SACK processing with missing-report loss detection,
//! an in-order reorder buffer, and the delay/loss gated retransmission
//! policy.

mod receiver;
mod sender;

pub use receiver::{ArrivedPacket, PacketOutcome, ReceiverState, SackInfo};
pub use sender::{Outstanding, SackOutcome, SenderPath, SenderState, SendOutcome};

use serde::{Deserialize, Serialize};

use crate::channel::{PathStatus, RTO_CEIL_MS};

pub type Tsn = u64;

/// Default maximum transmission unit, bytes. Path MTU discovery is out of
/// scope; every path shares this fixed value unless configured otherwise.
pub const DEFAULT_MTU: u64 = 1500;
/// Missing reports before a TSN is declared lost.
pub const MISSING_REPORT_LIMIT: u32 = 4;
/// Duplicate SACKs before the congestion reaction fires.
pub const DUP_SACK_LIMIT: u32 = 3;

/// One TSN-bearing data unit (at most one MTU of payload).
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub tsn: Tsn,
    pub bytes: u64,
    pub gop_id: u64,
    /// Source emission instant, ms.
    pub emitted_at_ms: f64,
    /// Absolute arrival deadline: emission + delay budget, ms.
    pub deadline_ms: f64,
    /// Path currently responsible for the chunk.
    pub path: usize,
    pub sent_at_ms: Option<f64>,
    pub retransmit_count: u32,
}

/// Selective acknowledgment as seen by the sender.
#[derive(Debug, Clone, PartialEq)]
pub struct SackEvent {
    /// Highest in-order TSN received; 0 means nothing yet (TSNs start at 1).
    pub cumulative_tsn: Tsn,
    /// Disjoint, sorted inclusive ranges received above the cumulative.
    pub gap_blocks: Vec<(Tsn, Tsn)>,
    pub ecn_echo: bool,
    /// Path that carried the ECN-marked packet being echoed.
    pub ecn_path: Option<usize>,
    pub uplink_path: usize,
    pub timestamp_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CcMode {
    SlowStart,
    CongestionAvoidance,
}

/// Per-path congestion state.
#[derive(Debug, Clone)]
pub struct PathCongestionController {
    pub cwnd_bytes: u64,
    pub ssthresh_bytes: u64,
    pub rto_ms: f64,
    pub mode: CcMode,
    pub ecn_seen: bool,
    pub dup_sack_count: u32,
    mtu: u64,
    partial_bytes_acked: u64,
}

impl PathCongestionController {
    pub fn new(mtu: u64, initial_rto_ms: f64) -> Self {
        // RFC 4960 initial window.
        let iw = (4 * mtu).min((2 * mtu).max(4404));
        Self {
            cwnd_bytes: iw,
            ssthresh_bytes: u64::MAX / 4,
            rto_ms: initial_rto_ms,
            mode: CcMode::SlowStart,
            ecn_seen: false,
            dup_sack_count: 0,
            mtu,
            partial_bytes_acked: 0,
        }
    }

    pub fn mtu(&self) -> u64 {
        self.mtu
    }

    /// Window growth for `acked_bytes` of new data. `acceptance` scales the
    /// increment by the packet acceptance ratio (pass 1.0 for conventional
    /// growth).
    pub fn on_ack(&mut self, acked_bytes: u64, acceptance: f64) {
        let acceptance = acceptance.clamp(0.0, 1.0);
        match self.mode {
            CcMode::SlowStart => {
                self.cwnd_bytes += (acked_bytes as f64 * acceptance).round() as u64;
                if self.cwnd_bytes >= self.ssthresh_bytes {
                    self.cwnd_bytes = self.ssthresh_bytes;
                    self.mode = CcMode::CongestionAvoidance;
                }
            }
            CcMode::CongestionAvoidance => {
                self.partial_bytes_acked += acked_bytes;
                if self.partial_bytes_acked >= self.cwnd_bytes {
                    self.partial_bytes_acked -= self.cwnd_bytes;
                    self.cwnd_bytes += (self.mtu as f64 * acceptance).round() as u64;
                }
            }
        }
    }

    /// Timeout response: halve the threshold (floored at 3 MTU), collapse
    /// the window to one MTU, restart slow start, and back off the RTO.
    pub fn on_timeout(&mut self) {
        self.ssthresh_bytes = (self.cwnd_bytes / 2).max(3 * self.mtu);
        self.cwnd_bytes = self.mtu;
        self.mode = CcMode::SlowStart;
        self.partial_bytes_acked = 0;
        self.rto_ms = (self.rto_ms * 2.0).min(RTO_CEIL_MS);
    }

    /// Congestion reaction to the third duplicate SACK; fires only when the
    /// path carried an ECN mark, otherwise the loss is treated as a wireless
    /// error and only retransmission (no window change) happens.
    pub fn on_dup_sacks(&mut self) {
        if !self.ecn_seen {
            return;
        }
        self.enter_fast_recovery();
        self.ecn_seen = false;
    }

    /// Unconditional multiplicative decrease, used by schemes that treat
    /// every loss as congestion.
    pub fn enter_fast_recovery(&mut self) {
        self.ssthresh_bytes = (self.cwnd_bytes / 2).max(3 * self.mtu);
        self.cwnd_bytes = self.ssthresh_bytes;
        self.mode = CcMode::CongestionAvoidance;
        self.partial_bytes_acked = 0;
        self.dup_sack_count = 0;
    }

    /// Window adaptation to an ECN mark: same multiplicative decrease, but
    /// driven by explicit congestion signaling rather than loss. The caller
    /// rate-limits invocations to once per round trip.
    pub fn on_ecn_mark(&mut self) {
        self.enter_fast_recovery();
        self.ecn_seen = false;
    }

    /// Window restored after a heartbeat acknowledgment.
    pub fn restart_after_heartbeat(&mut self, restart_mtus: u64) {
        self.cwnd_bytes = restart_mtus * self.mtu;
        self.mode = CcMode::SlowStart;
        self.partial_bytes_acked = 0;
    }
}

/// Picks the most reliable uplink for acknowledgment traffic: lowest loss,
/// then lowest RTT, then lowest id.
pub fn select_ack_path(paths: &[(f64, f64, PathStatus)]) -> Option<usize> {
    let pick = |require_active: bool| {
        paths
            .iter()
            .enumerate()
            .filter(|(_, (_, _, st))| !require_active || *st == PathStatus::Active)
            .min_by(|(ia, (la, ra, _)), (ib, (lb, rb, _))| {
                la.total_cmp(lb).then(ra.total_cmp(rb)).then(ia.cmp(ib))
            })
            .map(|(i, _)| i)
    };
    pick(true).or_else(|| pick(false))
}

/// Candidate path state for the retransmission decision.
#[derive(Debug, Clone, Copy)]
pub struct RetransmitCandidate {
    pub path: usize,
    /// Predicted delivery delay on this path, ms.
    pub expected_delay_ms: f64,
    pub status: PathStatus,
}

/// Outcome of the delay/loss controlled retransmission policy.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RetransmissionPlan {
    /// (tsn, path) orders to reissue.
    pub retransmit: Vec<(Tsn, usize)>,
    /// Chunks given up on (deadline unreachable or loss budget met).
    pub abandon: Vec<Tsn>,
}

/// Retransmissions are issued only while the recorded effective loss
/// exceeds the application loss requirement; each chunk goes to the active
/// path with the smallest predicted delay, and only when that delay still
/// fits the chunk's remaining lifetime.
pub fn retransmission_decision(
    lost: &[(Tsn, f64)], // (tsn, absolute deadline ms)
    candidates: &[RetransmitCandidate],
    loss_requirement: f64,
    recorded_loss: f64,
    now_ms: f64,
) -> RetransmissionPlan {
    let mut plan = RetransmissionPlan::default();
    if recorded_loss <= loss_requirement {
        plan.abandon = lost.iter().map(|&(t, _)| t).collect();
        return plan;
    }
    let best = candidates
        .iter()
        .filter(|c| c.status == PathStatus::Active)
        .min_by(|a, b| {
            a.expected_delay_ms
                .total_cmp(&b.expected_delay_ms)
                .then(a.path.cmp(&b.path))
        });
    for &(tsn, deadline_ms) in lost {
        match best {
            Some(c) if c.expected_delay_ms < deadline_ms - now_ms => {
                plan.retransmit.push((tsn, c.path));
            }
            _ => plan.abandon.push(tsn),
        }
    }
    plan
}

/// Heartbeat probing state for a potentially-failed path: first probe goes
/// out immediately, then at RTO intervals with exponential backoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeartbeatState {
    pub failures: u32,
    pub next_probe_ms: f64,
}

impl HeartbeatState {
    pub fn start(now_ms: f64) -> Self {
        Self {
            failures: 0,
            next_probe_ms: now_ms,
        }
    }

    /// Backoff after a lost probe: the next one waits `rto * 2^failures`.
    pub fn on_probe_lost(&mut self, now_ms: f64, rto_ms: f64) {
        self.failures = (self.failures + 1).min(16);
        let wait = (rto_ms * f64::from(1u32 << self.failures.min(10))).min(RTO_CEIL_MS);
        self.next_probe_ms = now_ms + wait;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timeout_collapses_window_and_backs_off() {
        let mut cc = PathCongestionController::new(1500, 1000.0);
        cc.cwnd_bytes = 12_000;
        cc.on_timeout();
        assert_eq!(cc.ssthresh_bytes, 6000);
        assert_eq!(cc.cwnd_bytes, 1500);
        assert_eq!(cc.mode, CcMode::SlowStart);
        assert_eq!(cc.rto_ms, 2000.0);
    }

    #[test]
    fn timeout_floors_ssthresh_at_three_mtu() {
        let mut cc = PathCongestionController::new(1500, 500.0);
        cc.cwnd_bytes = 3000;
        cc.on_timeout();
        assert_eq!(cc.ssthresh_bytes, 4500);
        assert_eq!(cc.cwnd_bytes, 1500);
    }

    #[test]
    fn rto_backoff_is_capped() {
        let mut cc = PathCongestionController::new(1500, 40_000.0);
        cc.on_timeout();
        assert_eq!(cc.rto_ms, RTO_CEIL_MS);
    }

    #[test]
    fn dup_sacks_halve_only_with_ecn() {
        let mut cc = PathCongestionController::new(1500, 500.0);
        cc.cwnd_bytes = 12_000;
        cc.ecn_seen = false;
        cc.on_dup_sacks();
        assert_eq!(cc.cwnd_bytes, 12_000, "wireless loss must not shrink cwnd");

        cc.ecn_seen = true;
        cc.on_dup_sacks();
        assert_eq!(cc.ssthresh_bytes, 6000);
        assert_eq!(cc.cwnd_bytes, 6000);
        assert_eq!(cc.mode, CcMode::CongestionAvoidance);
        assert!(!cc.ecn_seen);
    }

    #[test]
    fn dup_sacks_floor_branch() {
        let mut cc = PathCongestionController::new(1500, 500.0);
        cc.cwnd_bytes = 2000;
        cc.ecn_seen = true;
        cc.on_dup_sacks();
        assert_eq!(cc.cwnd_bytes, 4500);
    }

    #[test]
    fn slow_start_grows_by_acked_bytes() {
        let mut cc = PathCongestionController::new(1500, 500.0);
        let before = cc.cwnd_bytes;
        cc.on_ack(3000, 1.0);
        assert_eq!(cc.cwnd_bytes, before + 3000);
    }

    #[test]
    fn growth_scaled_by_acceptance_ratio() {
        let mut cc = PathCongestionController::new(1500, 500.0);
        let before = cc.cwnd_bytes;
        cc.on_ack(1000, 0.9);
        assert_eq!(cc.cwnd_bytes, before + 900);
    }

    #[test]
    fn congestion_avoidance_adds_one_mtu_per_window() {
        let mut cc = PathCongestionController::new(1500, 500.0);
        cc.mode = CcMode::CongestionAvoidance;
        cc.cwnd_bytes = 6000;
        cc.on_ack(3000, 1.0);
        assert_eq!(cc.cwnd_bytes, 6000, "below one cwnd of acked data");
        cc.on_ack(3000, 1.0);
        assert_eq!(cc.cwnd_bytes, 7500);
    }

    #[test]
    fn ack_path_prefers_low_loss_then_low_rtt_then_id() {
        let a = PathStatus::Active;
        assert_eq!(select_ack_path(&[(0.02, 50.0, a), (0.06, 20.0, a)]), Some(0));
        assert_eq!(select_ack_path(&[(0.02, 80.0, a), (0.02, 40.0, a)]), Some(1));
        assert_eq!(select_ack_path(&[(0.02, 40.0, a), (0.02, 40.0, a)]), Some(0));
        assert_eq!(select_ack_path(&[(0.5, 500.0, a)]), Some(0));
    }

    #[test]
    fn ack_path_skips_failed_paths_when_possible() {
        let out = select_ack_path(&[
            (0.0, 10.0, PathStatus::PotentiallyFailed),
            (0.1, 90.0, PathStatus::Active),
        ]);
        assert_eq!(out, Some(1));
        // Nothing active: fall back to the best overall.
        let out = select_ack_path(&[
            (0.2, 10.0, PathStatus::Inactive),
            (0.1, 90.0, PathStatus::PotentiallyFailed),
        ]);
        assert_eq!(out, Some(1));
    }

    fn cand(path: usize, delay: f64) -> RetransmitCandidate {
        RetransmitCandidate {
            path,
            expected_delay_ms: delay,
            status: PathStatus::Active,
        }
    }

    #[test]
    fn no_retransmission_below_loss_requirement() {
        let plan = retransmission_decision(&[(7, 500.0)], &[cand(0, 40.0)], 0.01, 0.005, 100.0);
        assert!(plan.retransmit.is_empty());
        assert_eq!(plan.abandon, vec![7]);
    }

    #[test]
    fn retransmits_on_fastest_feasible_path() {
        let plan = retransmission_decision(
            &[(7, 160.0)],
            &[cand(0, 40.0), cand(1, 90.0)],
            0.01,
            0.05,
            100.0,
        );
        assert_eq!(plan.retransmit, vec![(7, 0)]);
        assert!(plan.abandon.is_empty());
    }

    #[test]
    fn abandons_chunks_past_reach() {
        let plan = retransmission_decision(
            &[(7, 110.0)],
            &[cand(0, 40.0), cand(1, 90.0)],
            0.01,
            0.05,
            100.0,
        );
        assert!(plan.retransmit.is_empty());
        assert_eq!(plan.abandon, vec![7]);
    }

    #[test]
    fn abandons_everything_without_active_paths() {
        let mut c = cand(0, 40.0);
        c.status = PathStatus::PotentiallyFailed;
        let plan = retransmission_decision(&[(7, 500.0)], &[c], 0.01, 0.05, 100.0);
        assert_eq!(plan.abandon, vec![7]);
    }

    #[test]
    fn heartbeat_backoff_doubles() {
        let mut hb = HeartbeatState::start(1000.0);
        assert_eq!(hb.next_probe_ms, 1000.0);
        hb.on_probe_lost(1000.0, 200.0);
        assert_eq!(hb.next_probe_ms, 1000.0 + 400.0);
        hb.on_probe_lost(1400.0, 200.0);
        assert_eq!(hb.next_probe_ms, 1400.0 + 800.0);
    }

    #[test]
    fn heartbeat_restart_window() {
        let mut cc = PathCongestionController::new(1500, 500.0);
        cc.on_timeout();
        cc.restart_after_heartbeat(2);
        assert_eq!(cc.cwnd_bytes, 3000);
    }
}
