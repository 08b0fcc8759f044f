//! The event loop: per-path pipes (FIFO queue + propagation), loss-chain
//! sampling at transmission instants, transport state machines, and the
//! per-scheme scheduling/retransmission policies.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap, VecDeque};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Conservation, MetricsReport, Scenario, SchedulerScheme};
use crate::allocator::{self, AllocatorConfig, PathSnapshot};
use crate::channel::{AckEvent, LinkState, PathStatsTracker, PathStatus, StateSampler};
use crate::distortion::expected_delay;
use crate::metrics::{self, EventKind, EventRecord, EventTrace};
use crate::transport::{
    retransmission_decision, select_ack_path, ArrivedPacket, Chunk, HeartbeatState,
    PathCongestionController, ReceiverState, RetransmitCandidate, SackEvent, SendOutcome,
    SenderState, Tsn,
};

/// Retry spacing while a pipe has zero capacity, ms.
const STALL_RETRY_MS: f64 = 20.0;
/// Queue occupancy fraction of the bandwidth-delay product that triggers an
/// ECN mark.
const ECN_QUEUE_FRACTION: f64 = 0.5;
/// Heartbeat failures after which a path is considered inactive.
const INACTIVE_AFTER_FAILURES: u32 = 5;
/// Window restored by a heartbeat acknowledgment, MTUs.
const HEARTBEAT_RESTART_MTUS: u64 = 2;
/// Initial retransmission timeout, ms.
const INITIAL_RTO_MS: f64 = 1000.0;
/// Sliding window (resolved chunks) of the sender-side loss recorder.
const RESOLVED_WINDOW: usize = 500;

#[derive(Debug)]
enum Ev {
    GopEmit {
        gop: u64,
    },
    PaceTick {
        path: usize,
    },
    WireDeparture {
        path: usize,
    },
    DataArrival {
        path: usize,
        tsn: Tsn,
        bytes: u64,
        gop: u64,
        is_rtx: bool,
        ecn: bool,
        fwd: Tsn,
    },
    SackArrival {
        sack: SackEvent,
    },
    RtoFire {
        path: usize,
        epoch: u64,
    },
    HeartbeatProbe {
        path: usize,
    },
    HeartbeatAck {
        path: usize,
    },
    BgResample,
}

struct Entry {
    t: f64,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.t == other.t && self.seq == other.seq
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.t.total_cmp(&other.t).then(self.seq.cmp(&other.seq))
    }
}

#[derive(Debug, Clone, Copy)]
struct PipePacket {
    copy: u64,
    tsn: Tsn,
    bytes: u64,
    gop: u64,
    is_rtx: bool,
    fwd: Tsn,
    ecn: bool,
}

struct PathRuntime {
    sampler: StateSampler,
    pipe: VecDeque<PipePacket>,
    serving_copy: Option<u64>,
    pipe_bytes: u64,
    pipe_busy: bool,
    bg_factor: f64,
    hb: Option<HeartbeatState>,
    next_send_at: f64,
    pace_scheduled: bool,
    last_assigned_kbps: f64,
    last_lost_tsn: Option<Tsn>,
    min_rtt_seen: f64,
    last_ecn_cut_ms: f64,
    /// Interval-smoothed bandwidth estimate fed to the allocator.
    mu_smooth_kbps: f64,
}

#[derive(Debug, Clone, Copy)]
struct ChunkInfo {
    gop: u64,
    bytes: u64,
    assigned_path: usize,
    deadline_ms: f64,
    delivered_at: Option<f64>,
    delivered_by_rtx: bool,
}

#[derive(Debug, Clone, Copy)]
struct GopInfo {
    t_emit: f64,
    enc_kbps: f64,
}

pub(super) struct Engine<'a> {
    sc: &'a Scenario,
    scheme: SchedulerScheme,
    audit: bool,
    now: f64,
    seq: u64,
    heap: BinaryHeap<Reverse<Entry>>,
    rng_bg: ChaCha8Rng,
    paths: Vec<PathRuntime>,
    sender: SenderState,
    trackers: Vec<PathStatsTracker>,
    receiver: ReceiverState,
    trace: EventTrace,
    gops: Vec<GopInfo>,
    ledger: HashMap<Tsn, ChunkInfo>,
    accepted_arrival: HashMap<Tsn, (usize, bool)>,
    cons: Conservation,
    resolved: VecDeque<(u64, bool)>,
    resolved_bytes: u64,
    resolved_bad_bytes: u64,
    rtx_total: u64,
    rate_shares: Vec<(f64, Vec<f64>)>,
    mu_estimates: Vec<(f64, Vec<f64>)>,
    rtt_estimates: Vec<(f64, Vec<f64>)>,
    loss_estimates: Vec<(f64, Vec<f64>)>,
    timer_sched_epoch: Vec<u64>,
    copy_counter: u64,
    propagating_bytes: u64,
}

impl<'a> Engine<'a> {
    pub(super) fn new(sc: &'a Scenario, scheme: SchedulerScheme, audit: bool) -> Self {
        let n = sc.paths.len();
        let paths = sc
            .paths
            .iter()
            .enumerate()
            .map(|(i, spec)| PathRuntime {
                sampler: StateSampler::new(
                    spec.gilbert,
                    0.0,
                    sc.seed
                        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(i as u64 + 1)),
                ),
                pipe: VecDeque::new(),
                serving_copy: None,
                pipe_bytes: 0,
                pipe_busy: false,
                bg_factor: 1.0,
                hb: None,
                next_send_at: 0.0,
                pace_scheduled: false,
                last_assigned_kbps: 0.0,
                last_lost_tsn: None,
                min_rtt_seen: spec.base_rtt_ms,
                last_ecn_cut_ms: f64::NEG_INFINITY,
                mu_smooth_kbps: 0.0,
            })
            .collect();
        let controllers: Vec<PathCongestionController> = (0..n)
            .map(|_| PathCongestionController::new(sc.mtu_bytes, INITIAL_RTO_MS))
            .collect();
        let trackers: Vec<PathStatsTracker> = sc
            .paths
            .iter()
            .zip(&controllers)
            .map(|(spec, cc)| PathStatsTracker::new(spec.base_rtt_ms, cc.cwnd_bytes))
            .collect();
        let mut eng = Self {
            sc,
            scheme,
            audit,
            now: 0.0,
            seq: 0,
            heap: BinaryHeap::new(),
            rng_bg: ChaCha8Rng::seed_from_u64(sc.seed ^ 0xB5AD_4ECE_DA1C_E2A9),
            paths,
            sender: SenderState::new(controllers),
            trackers,
            receiver: ReceiverState::new(sc.receiver_buffer_bytes),
            trace: EventTrace::new(sc.interval_ms, sc.duration_ms),
            gops: Vec::new(),
            ledger: HashMap::new(),
            accepted_arrival: HashMap::new(),
            cons: Conservation::default(),
            resolved: VecDeque::new(),
            resolved_bytes: 0,
            resolved_bad_bytes: 0,
            rtx_total: 0,
            rate_shares: Vec::new(),
            mu_estimates: Vec::new(),
            rtt_estimates: Vec::new(),
            loss_estimates: Vec::new(),
            timer_sched_epoch: vec![0; n],
            copy_counter: 0,
            propagating_bytes: 0,
        };
        eng.schedule(0.0, Ev::BgResample);
        eng.schedule(0.0, Ev::GopEmit { gop: 0 });
        eng
    }

    fn schedule(&mut self, t: f64, ev: Ev) {
        self.seq += 1;
        self.heap.push(Reverse(Entry {
            t: t.max(self.now),
            seq: self.seq,
            ev,
        }));
    }

    fn log(&mut self, kind: EventKind, path: usize, tsn: Tsn, bytes: u64, gop: u64) {
        self.trace.push(EventRecord {
            t_ms: self.now,
            kind,
            path,
            tsn,
            bytes,
            gop_id: gop,
        });
    }

    pub(super) fn run(&mut self) {
        while let Some(Reverse(entry)) = self.heap.pop() {
            if entry.t >= self.sc.duration_ms {
                break;
            }
            self.now = entry.t;
            self.dispatch(entry.ev);
            if self.audit {
                self.audit_invariants();
            }
        }
    }

    fn dispatch(&mut self, ev: Ev) {
        match ev {
            Ev::GopEmit { gop } => self.on_gop_emit(gop),
            Ev::PaceTick { path } => self.on_pace_tick(path),
            Ev::WireDeparture { path } => self.on_wire_departure(path),
            Ev::DataArrival {
                path,
                tsn,
                bytes,
                gop,
                is_rtx,
                ecn,
                fwd,
            } => self.on_data_arrival(path, tsn, bytes, gop, is_rtx, ecn, fwd),
            Ev::SackArrival { sack } => self.on_sack_arrival(sack),
            Ev::RtoFire { path, epoch } => self.on_rto_fire(path, epoch),
            Ev::HeartbeatProbe { path } => self.on_heartbeat_probe(path),
            Ev::HeartbeatAck { path } => self.on_heartbeat_ack(path),
            Ev::BgResample => self.on_bg_resample(),
        }
    }

    // ------------------------------------------------------------------
    // Path pipe model
    // ------------------------------------------------------------------

    fn effective_capacity(&self, path: usize, t: f64) -> f64 {
        self.sc.paths[path].capacity_at(t) * self.paths[path].bg_factor
    }

    fn on_bg_resample(&mut self) {
        let (lo, hi) = (self.sc.background.frac_min, self.sc.background.frac_max);
        for p in &mut self.paths {
            let frac = if hi > lo {
                self.rng_bg.gen_range(lo..=hi)
            } else {
                lo
            };
            p.bg_factor = 1.0 - frac;
        }
        let next = self.now + self.sc.background.resample_ms;
        self.schedule(next, Ev::BgResample);
    }

    fn kick_pace(&mut self, path: usize) {
        if self.paths[path].pace_scheduled || self.sender.paths[path].queue.is_empty() {
            return;
        }
        let t = self.paths[path].next_send_at.max(self.now);
        self.paths[path].pace_scheduled = true;
        self.schedule(t, Ev::PaceTick { path });
    }

    fn on_pace_tick(&mut self, path: usize) {
        self.paths[path].pace_scheduled = false;
        // The deadline-aware scheme sheds queued chunks that already
        // expired instead of spending capacity on overdue data.
        if self.scheme == SchedulerScheme::CmtDa {
            while let Some((tsn, deadline)) = self.sender.peek_queue(path) {
                if deadline < self.now {
                    self.abandon_chunk(tsn);
                } else {
                    break;
                }
            }
        }
        if self.sender.paths[path].queue.is_empty() {
            return;
        }
        match self.sender.on_send(path, self.now) {
            Some((chunk, SendOutcome::Sent)) => {
                let is_rtx = chunk.retransmit_count > 0;
                let kind = if is_rtx {
                    EventKind::Retransmit
                } else {
                    EventKind::Send
                };
                self.log(kind, path, chunk.tsn, chunk.bytes, chunk.gop_id);
                if is_rtx {
                    self.cons.sent_retransmit_bytes += chunk.bytes;
                    self.rtx_total += 1;
                } else {
                    self.cons.sent_original_bytes += chunk.bytes;
                }
                self.trackers[path].record_dispatch(chunk.tsn);
                self.sync_timer(path);

                // ECN mark when the queue already holds a sizable fraction
                // of the bandwidth-delay product.
                let cap = self.effective_capacity(path, self.now);
                let bdp_bytes = cap * self.sc.paths[path].base_rtt_ms / 8.0;
                let ecn = bdp_bytes > 0.0
                    && (self.paths[path].pipe_bytes as f64) > ECN_QUEUE_FRACTION * bdp_bytes;

                self.copy_counter += 1;
                let pkt = PipePacket {
                    copy: self.copy_counter,
                    tsn: chunk.tsn,
                    bytes: chunk.bytes,
                    gop: chunk.gop_id,
                    is_rtx,
                    fwd: self.sender.forward_tsn(),
                    ecn,
                };
                self.paths[path].pipe.push_back(pkt);
                self.paths[path].pipe_bytes += pkt.bytes;
                if !self.paths[path].pipe_busy {
                    self.paths[path].pipe_busy = true;
                    self.schedule(self.now, Ev::WireDeparture { path });
                }
                if self.audit {
                    let p = &self.sender.paths[path];
                    assert!(
                        p.outstanding_bytes <= p.cc.cwnd_bytes,
                        "send pushed outstanding past cwnd on path {path}"
                    );
                }
                self.paths[path].next_send_at = self.now + self.sc.omega_ms;
                self.kick_pace(path);
            }
            Some((_, SendOutcome::WindowLimited)) => {
                self.paths[path].pace_scheduled = true;
                let t = self.now + self.sc.omega_ms;
                self.schedule(t, Ev::PaceTick { path });
            }
            None => {}
        }
    }

    fn on_wire_departure(&mut self, path: usize) {
        let Some(&front) = self.paths[path].pipe.front() else {
            self.paths[path].pipe_busy = false;
            return;
        };
        let cap = self.effective_capacity(path, self.now);
        if self.paths[path].serving_copy != Some(front.copy) {
            // Start of service for the head packet.
            if cap <= 0.0 {
                self.schedule(self.now + STALL_RETRY_MS, Ev::WireDeparture { path });
                return;
            }
            self.paths[path].serving_copy = Some(front.copy);
            let service_ms = front.bytes as f64 * 8.0 / cap;
            self.schedule(self.now + service_ms, Ev::WireDeparture { path });
            return;
        }

        // Service completed: the packet leaves onto the wireless medium.
        let pkt = self.paths[path].pipe.pop_front().expect("head exists");
        self.paths[path].serving_copy = None;
        self.paths[path].pipe_bytes = self.paths[path].pipe_bytes.saturating_sub(pkt.bytes);

        let available = self.sc.paths[path].available_at(self.now);
        let good = available && self.paths[path].sampler.state_at(self.now) == LinkState::Good;
        if good {
            self.propagating_bytes += pkt.bytes;
            let arrival = self.now + self.sc.paths[path].base_rtt_ms / 2.0;
            self.schedule(
                arrival,
                Ev::DataArrival {
                    path,
                    tsn: pkt.tsn,
                    bytes: pkt.bytes,
                    gop: pkt.gop,
                    is_rtx: pkt.is_rtx,
                    ecn: pkt.ecn,
                    fwd: pkt.fwd,
                },
            );
        } else {
            self.cons.channel_lost_bytes += pkt.bytes;
            self.log(EventKind::Lose, path, pkt.tsn, pkt.bytes, pkt.gop);
        }

        if !self.paths[path].pipe.is_empty() {
            self.schedule(self.now, Ev::WireDeparture { path });
        } else {
            self.paths[path].pipe_busy = false;
        }
    }

    // ------------------------------------------------------------------
    // Receiver side
    // ------------------------------------------------------------------

    #[allow(clippy::too_many_arguments)]
    fn on_data_arrival(
        &mut self,
        path: usize,
        tsn: Tsn,
        bytes: u64,
        gop: u64,
        is_rtx: bool,
        ecn: bool,
        fwd: Tsn,
    ) {
        self.log(EventKind::Arrive, path, tsn, bytes, gop);
        self.propagating_bytes = self.propagating_bytes.saturating_sub(bytes);
        self.cons.arrived_bytes += bytes;
        let dup_before = self.receiver.duplicates;
        let outcome = self.receiver.on_packet(
            ArrivedPacket {
                tsn,
                bytes,
                gop_id: gop,
                ecn_marked: ecn,
                forward_tsn: fwd,
            },
            self.now,
        );
        if outcome.dropped {
            if self.receiver.duplicates > dup_before {
                self.cons.duplicate_bytes += bytes;
            } else {
                self.cons.buffer_dropped_bytes += bytes;
                self.log(EventKind::Lose, path, tsn, bytes, gop);
            }
        } else {
            self.accepted_arrival.insert(tsn, (path, is_rtx));
        }
        for &(dtsn, dbytes, dgop, _arrival) in &outcome.delivered {
            let (dpath, drtx) = self
                .accepted_arrival
                .get(&dtsn)
                .copied()
                .unwrap_or((path, is_rtx));
            self.log(EventKind::Deliver, dpath, dtsn, dbytes, dgop);
            self.cons.delivered_bytes += dbytes;
            if let Some(info) = self.ledger.get_mut(&dtsn) {
                info.delivered_at = Some(self.now);
                info.delivered_by_rtx = drtx;
            }
        }

        // Acknowledgment on the most reliable uplink, subject to the same
        // chain loss and availability as data.
        let stats: Vec<(f64, f64, PathStatus)> = self
            .trackers
            .iter()
            .map(|t| {
                let s = t.stats();
                (s.loss_rate, s.rtt_ms, s.status)
            })
            .collect();
        if let Some(uplink) = select_ack_path(&stats) {
            let sack = SackEvent {
                cumulative_tsn: outcome.sack.cumulative_tsn,
                gap_blocks: outcome.sack.gap_blocks.clone(),
                ecn_echo: outcome.sack.ecn_echo,
                ecn_path: if outcome.sack.ecn_echo { Some(path) } else { None },
                uplink_path: uplink,
                timestamp_ms: self.now,
            };
            let alive = self.sc.paths[uplink].available_at(self.now)
                && self.paths[uplink].sampler.state_at(self.now) == LinkState::Good;
            if alive {
                let t = self.now + self.sc.paths[uplink].base_rtt_ms / 2.0;
                self.schedule(t, Ev::SackArrival { sack });
            }
        }
    }

    // ------------------------------------------------------------------
    // Sender side
    // ------------------------------------------------------------------

    fn acceptance_ratio(&self, path: usize) -> f64 {
        if self.scheme == SchedulerScheme::CmtDa {
            1.0 - self.trackers[path].stats().loss_rate
        } else {
            1.0
        }
    }

    fn push_resolved(&mut self, bytes: u64, bad: bool) {
        self.resolved.push_back((bytes, bad));
        self.resolved_bytes += bytes;
        if bad {
            self.resolved_bad_bytes += bytes;
        }
        while self.resolved.len() > RESOLVED_WINDOW {
            let (b, was_bad) = self.resolved.pop_front().unwrap();
            self.resolved_bytes -= b;
            if was_bad {
                self.resolved_bad_bytes -= b;
            }
        }
    }

    fn recorded_loss(&self) -> f64 {
        if self.resolved_bytes == 0 {
            0.0
        } else {
            self.resolved_bad_bytes as f64 / self.resolved_bytes as f64
        }
    }

    fn sync_timer(&mut self, path: usize) {
        let p = &self.sender.paths[path];
        if let Some(deadline) = p.timer_deadline_ms {
            if self.timer_sched_epoch[path] != p.timer_epoch {
                self.timer_sched_epoch[path] = p.timer_epoch;
                let epoch = p.timer_epoch;
                self.schedule(deadline, Ev::RtoFire { path, epoch });
            }
        }
    }

    fn sync_all_timers(&mut self) {
        for path in 0..self.paths.len() {
            self.sync_timer(path);
        }
    }

    fn on_sack_arrival(&mut self, sack: SackEvent) {
        self.log(
            EventKind::Sack,
            sack.uplink_path,
            sack.cumulative_tsn,
            0,
            0,
        );
        let acceptance: Vec<f64> = (0..self.paths.len())
            .map(|p| self.acceptance_ratio(p))
            .collect();
        let outcome = self
            .sender
            .process_sack(&sack, self.now, |p| acceptance[p]);

        // Feed the estimators and the loss recorder.
        let mut per_path_acks: HashMap<usize, AckEvent> = HashMap::new();
        for &(tsn, path, bytes, rtt_sample) in &outcome.newly_acked {
            per_path_acks
                .entry(path)
                .or_default()
                .acked
                .push((tsn, rtt_sample));
            if let Some(sample) = rtt_sample {
                let rt = &mut self.paths[path];
                rt.min_rtt_seen = rt.min_rtt_seen.min(sample);
            }
            let est_delivery = self.now - self.sc.paths[sack.uplink_path].base_rtt_ms / 2.0;
            let bad = self
                .ledger
                .get(&tsn)
                .is_some_and(|info| est_delivery > info.deadline_ms);
            self.push_resolved(bytes, bad);
        }
        let mut lost_entries: Vec<(Tsn, usize, u64)> = Vec::new();
        for &tsn in &outcome.loss_notifications {
            if let Some(out) = self.sender.chunk(tsn) {
                lost_entries.push((tsn, out.chunk.path, out.chunk.bytes));
            }
        }
        for &(tsn, path, bytes) in &lost_entries {
            per_path_acks.entry(path).or_default().lost.push(tsn);
            self.push_resolved(bytes, true);
        }
        let mut touched: Vec<usize> = per_path_acks.keys().copied().collect();
        touched.sort_unstable();
        for path in touched {
            let ev = per_path_acks.remove(&path).unwrap();
            self.trackers[path].update(&ev);
        }

        // Scheme-specific congestion reaction to duplicate SACKs.
        if self.scheme == SchedulerScheme::CmtDa {
            for &path in &outcome.third_dup_sack_paths {
                self.sender.paths[path].cc.on_dup_sacks();
            }
            // Window adaptation on explicit congestion marks, at most once
            // per smoothed round trip per path.
            for path in 0..self.paths.len() {
                let rtt = self.trackers[path].stats().rtt_ms;
                if self.sender.paths[path].cc.ecn_seen
                    && self.now - self.paths[path].last_ecn_cut_ms >= rtt
                {
                    self.sender.paths[path].cc.on_ecn_mark();
                    self.paths[path].last_ecn_cut_ms = self.now;
                }
            }
        }

        self.react_to_losses(&lost_entries);

        for path in 0..self.paths.len() {
            let cc = &self.sender.paths[path].cc;
            self.trackers[path].set_cwnd(cc.cwnd_bytes);
            self.trackers[path].set_rto(cc.rto_ms);
        }
        self.sync_all_timers();
        for path in 0..self.paths.len() {
            self.kick_pace(path);
        }
    }

    fn on_rto_fire(&mut self, path: usize, epoch: u64) {
        if self.sender.paths[path].timer_epoch != epoch {
            return;
        }
        let lost = self.sender.on_timeout(path);
        {
            let cc = &self.sender.paths[path].cc;
            self.trackers[path].set_cwnd(cc.cwnd_bytes);
            self.trackers[path].set_rto(cc.rto_ms);
        }
        if matches!(self.scheme, SchedulerScheme::CmtDa | SchedulerScheme::CmtPf) {
            self.trackers[path].set_status(PathStatus::PotentiallyFailed);
            self.paths[path].hb = Some(HeartbeatState::start(self.now));
            self.schedule(self.now, Ev::HeartbeatProbe { path });
        }
        let mut ack_ev = AckEvent::default();
        let mut lost_entries = Vec::new();
        for &tsn in &lost {
            ack_ev.lost.push(tsn);
            if let Some(out) = self.sender.chunk(tsn) {
                lost_entries.push((tsn, path, out.chunk.bytes));
                self.push_resolved(out.chunk.bytes, true);
            }
        }
        self.trackers[path].update(&ack_ev);
        self.react_to_losses(&lost_entries);
        self.sync_all_timers();
        for p in 0..self.paths.len() {
            self.kick_pace(p);
        }
    }

    /// Scheme retransmission policy plus its congestion reaction for
    /// detected losses.
    fn react_to_losses(&mut self, lost: &[(Tsn, usize, u64)]) {
        if lost.is_empty() {
            return;
        }
        match self.scheme {
            SchedulerScheme::CmtDa => {
                let candidates: Vec<RetransmitCandidate> = (0..self.paths.len())
                    .map(|p| {
                        let s = self.trackers[p].stats();
                        let mu = if self.paths[p].mu_smooth_kbps > 0.0 {
                            self.paths[p].mu_smooth_kbps
                        } else {
                            s.mu_kbps
                        };
                        let nu_obs = (mu - self.paths[p].last_assigned_kbps).max(0.0);
                        RetransmitCandidate {
                            path: p,
                            expected_delay_ms: expected_delay(
                                self.paths[p].last_assigned_kbps,
                                mu,
                                nu_obs,
                                s.rtt_ms,
                                self.sc.interval_ms,
                            ),
                            status: s.status,
                        }
                    })
                    .collect();
                let lost_with_deadlines: Vec<(Tsn, f64)> = lost
                    .iter()
                    .filter_map(|&(tsn, _, _)| {
                        self.ledger.get(&tsn).map(|i| (tsn, i.deadline_ms))
                    })
                    .collect();
                let plan = retransmission_decision(
                    &lost_with_deadlines,
                    &candidates,
                    self.sc.loss_requirement,
                    self.recorded_loss(),
                    self.now,
                );
                for &(tsn, path) in &plan.retransmit {
                    self.sender.requeue_for_retransmit(tsn, path);
                    self.kick_pace(path);
                }
                for &tsn in &plan.abandon {
                    self.abandon_chunk(tsn);
                }
            }
            SchedulerScheme::Cmt | SchedulerScheme::CmtPf => {
                // Unconditional multiplicative decrease on the paths that
                // lost data, then lowest-loss-rate retransmission.
                let mut hit: BTreeSet<usize> = BTreeSet::new();
                for &(_, path, _) in lost {
                    hit.insert(path);
                }
                for path in hit {
                    self.sender.paths[path].cc.enter_fast_recovery();
                }
                for &(tsn, _, _) in lost {
                    if let Some(dest) = self.lowest_loss_path(self.scheme == SchedulerScheme::CmtPf)
                    {
                        self.sender.requeue_for_retransmit(tsn, dest);
                        self.kick_pace(dest);
                    } else {
                        self.abandon_chunk(tsn);
                    }
                }
            }
            SchedulerScheme::CmtQa => {
                // Window reduced only on consecutive losses that look like
                // congestion (elevated RTT); isolated losses are treated as
                // wireless errors.
                for &(tsn, path, _) in lost {
                    let consecutive = self.paths[path].last_lost_tsn == Some(tsn.wrapping_sub(1));
                    let s = self.trackers[path].stats();
                    let congested = s.rtt_ms > 1.3 * self.paths[path].min_rtt_seen;
                    if consecutive && congested {
                        self.sender.paths[path].cc.enter_fast_recovery();
                    }
                    self.paths[path].last_lost_tsn = Some(tsn);
                }
                for &(tsn, _, _) in lost {
                    if let Some(dest) = self.best_quality_path() {
                        self.sender.requeue_for_retransmit(tsn, dest);
                        self.kick_pace(dest);
                    } else {
                        self.abandon_chunk(tsn);
                    }
                }
            }
        }
    }

    fn lowest_loss_path(&self, exclude_pf: bool) -> Option<usize> {
        let candidates: Vec<usize> = (0..self.paths.len())
            .filter(|&p| {
                !exclude_pf || self.trackers[p].stats().status == PathStatus::Active
            })
            .collect();
        let pool = if candidates.is_empty() {
            (0..self.paths.len()).collect()
        } else {
            candidates
        };
        pool.into_iter().min_by(|&a, &b| {
            self.trackers[a]
                .stats()
                .loss_rate
                .total_cmp(&self.trackers[b].stats().loss_rate)
                .then(a.cmp(&b))
        })
    }

    fn best_quality_path(&self) -> Option<usize> {
        (0..self.paths.len())
            .filter(|&p| self.trackers[p].stats().mu_kbps > 0.0)
            .min_by(|&a, &b| {
                self.qa_delivery_time(a)
                    .total_cmp(&self.qa_delivery_time(b))
                    .then(a.cmp(&b))
            })
    }

    /// Estimated chunk delivery time used by the quality-ratio scheme, ms.
    fn qa_delivery_time(&self, path: usize) -> f64 {
        let s = self.trackers[path].stats();
        if s.mu_kbps <= 0.0 {
            return f64::INFINITY;
        }
        let ref_bytes = self.sc.mtu_bytes as f64;
        ref_bytes * 8.0 / s.mu_kbps + s.rtt_ms / 2.0
    }

    fn abandon_chunk(&mut self, tsn: Tsn) {
        if let Some(bytes) = self.sender.abandon(tsn) {
            self.cons.abandoned_bytes += bytes;
            let (path, gop) = self
                .ledger
                .get(&tsn)
                .map(|i| (i.assigned_path, i.gop))
                .unwrap_or((0, 0));
            self.log(EventKind::Abandon, path, tsn, bytes, gop);
        }
        self.sync_all_timers();
    }

    // ------------------------------------------------------------------
    // Heartbeats
    // ------------------------------------------------------------------

    fn on_heartbeat_probe(&mut self, path: usize) {
        if self.trackers[path].stats().status == PathStatus::Active {
            self.paths[path].hb = None;
            return;
        }
        let Some(mut hb) = self.paths[path].hb else {
            return;
        };
        let alive = self.sc.paths[path].available_at(self.now)
            && self.paths[path].sampler.state_at(self.now) == LinkState::Good;
        if alive {
            let t = self.now + self.sc.paths[path].base_rtt_ms;
            self.schedule(t, Ev::HeartbeatAck { path });
        } else {
            let rto = self.sender.paths[path].cc.rto_ms;
            hb.on_probe_lost(self.now, rto);
            if hb.failures >= INACTIVE_AFTER_FAILURES {
                self.trackers[path].set_status(PathStatus::Inactive);
            }
            self.paths[path].hb = Some(hb);
            self.schedule(hb.next_probe_ms, Ev::HeartbeatProbe { path });
        }
    }

    fn on_heartbeat_ack(&mut self, path: usize) {
        self.trackers[path].set_status(PathStatus::Active);
        self.paths[path].hb = None;
        self.sender.paths[path]
            .cc
            .restart_after_heartbeat(HEARTBEAT_RESTART_MTUS);
        let cwnd = self.sender.paths[path].cc.cwnd_bytes;
        self.trackers[path].set_cwnd(cwnd);
        self.kick_pace(path);
    }

    // ------------------------------------------------------------------
    // Source and scheduling
    // ------------------------------------------------------------------

    fn on_gop_emit(&mut self, gop: u64) {
        let enc = self.sc.video.rate_trace.value_at(self.now);
        let gop_bytes = (enc * self.sc.interval_ms / 8.0).round() as u64;
        self.gops.push(GopInfo {
            t_emit: self.now,
            enc_kbps: enc,
        });
        self.trace.offered_bytes_per_gop.push(gop_bytes);
        self.cons.emitted_bytes += gop_bytes;

        for p in 0..self.paths.len() {
            let raw = self.trackers[p].stats().mu_kbps;
            let prev = self.paths[p].mu_smooth_kbps;
            self.paths[p].mu_smooth_kbps = if prev <= 0.0 {
                raw
            } else {
                0.5 * prev + 0.5 * raw
            };
        }
        let budgets = self.assign_bytes(gop_bytes);
        for (p, &b) in budgets.iter().enumerate() {
            self.paths[p].last_assigned_kbps = b as f64 * 8.0 / self.sc.interval_ms;
        }
        self.rate_shares.push((
            self.now,
            budgets
                .iter()
                .map(|&b| b as f64 * 8.0 / self.sc.interval_ms)
                .collect(),
        ));
        let stats_now: Vec<_> = self.trackers.iter().map(|t| t.stats()).collect();
        self.mu_estimates
            .push((self.now, stats_now.iter().map(|s| s.mu_kbps).collect()));
        self.rtt_estimates
            .push((self.now, stats_now.iter().map(|s| s.rtt_ms).collect()));
        self.loss_estimates
            .push((self.now, stats_now.iter().map(|s| s.loss_rate).collect()));

        // Fragment the per-path budgets into TSN chunks and interleave them
        // by weighted round-robin so the TSN order tracks the rate shares.
        let mtu = self.sc.mtu_bytes;
        let mut sizes: Vec<VecDeque<u64>> = budgets
            .iter()
            .map(|&b| {
                let mut v = VecDeque::new();
                let mut left = b;
                while left > 0 {
                    let take = left.min(mtu);
                    v.push_back(take);
                    left -= take;
                }
                v
            })
            .collect();
        let total_chunks: usize = sizes.iter().map(|s| s.len()).sum();
        let shares: Vec<f64> = sizes
            .iter()
            .map(|s| s.len() as f64 / total_chunks.max(1) as f64)
            .collect();
        let mut credits = vec![0.0f64; self.paths.len()];
        let deadline = self.now + self.sc.deadline_ms;
        for _ in 0..total_chunks {
            for (p, c) in credits.iter_mut().enumerate() {
                if !sizes[p].is_empty() {
                    *c += shares[p];
                }
            }
            let pick = (0..self.paths.len())
                .filter(|&p| !sizes[p].is_empty())
                .max_by(|&a, &b| credits[a].total_cmp(&credits[b]).then(b.cmp(&a)))
                .expect("chunks remain");
            credits[pick] -= 1.0;
            let bytes = sizes[pick].pop_front().unwrap();
            // Finite send buffer: data beyond it is shed at the source.
            if self.sender.total_queued_bytes() + bytes > self.sc.send_buffer_bytes {
                continue;
            }
            self.cons.chunked_bytes += bytes;
            let tsn = self.sender.allocate_tsn();
            self.ledger.insert(
                tsn,
                ChunkInfo {
                    gop,
                    bytes,
                    assigned_path: pick,
                    deadline_ms: deadline,
                    delivered_at: None,
                    delivered_by_rtx: false,
                },
            );
            self.sender.enqueue_chunk(Chunk {
                tsn,
                bytes,
                gop_id: gop,
                emitted_at_ms: self.now,
                deadline_ms: deadline,
                path: pick,
                sent_at_ms: None,
                retransmit_count: 0,
            });
        }
        for p in 0..self.paths.len() {
            self.kick_pace(p);
        }

        let next_t = (gop + 1) as f64 * self.sc.interval_ms;
        if next_t < self.sc.duration_ms {
            self.schedule(next_t, Ev::GopEmit { gop: gop + 1 });
        }
    }

    /// Per-scheme split of one GoP onto the paths, bytes.
    fn assign_bytes(&mut self, gop_bytes: u64) -> Vec<u64> {
        let n = self.paths.len();
        if gop_bytes == 0 {
            return vec![0; n];
        }
        let stats: Vec<_> = self.trackers.iter().map(|t| t.stats()).collect();
        let equal_split = |eligible: &[usize]| -> Vec<u64> {
            if eligible.is_empty() {
                return vec![0; n];
            }
            let weights: Vec<f64> = (0..n)
                .map(|p| if eligible.contains(&p) { 1.0 } else { 0.0 })
                .collect();
            allocator::chunk_sizes(&weights, gop_bytes).unwrap_or_else(|_| vec![0; n])
        };
        match self.scheme {
            SchedulerScheme::CmtDa => {
                let mut eligible: Vec<usize> = (0..n)
                    .filter(|&p| stats[p].status == PathStatus::Active && stats[p].mu_kbps > 0.0)
                    .collect();
                if eligible.is_empty() {
                    eligible = (0..n).filter(|&p| stats[p].mu_kbps > 0.0).collect();
                }
                if eligible.is_empty() {
                    return vec![0; n];
                }
                let snapshots: Vec<PathSnapshot> = eligible
                    .iter()
                    .map(|&p| PathSnapshot {
                        id: p,
                        mu_kbps: self.paths[p].mu_smooth_kbps,
                        rtt_ms: stats[p].rtt_ms,
                        loss_rate: stats[p].loss_rate,
                        nu_obs_kbps: (self.paths[p].mu_smooth_kbps
                            - self.paths[p].last_assigned_kbps)
                            .max(0.0),
                    })
                    .collect();
                let enc = self.sc.video.rate_trace.value_at(self.now);
                let cfg = AllocatorConfig {
                    tlv: self.sc.tlv,
                    mtu_bytes: self.sc.mtu_bytes,
                    omega_ms: self.sc.omega_ms,
                    interval_ms: self.sc.interval_ms,
                    ..AllocatorConfig::default()
                };
                match allocator::allocate(
                    &snapshots,
                    enc,
                    self.sc.deadline_ms,
                    self.sc.loss_requirement,
                    &self.sc.video.distortion,
                    &cfg,
                ) {
                    Ok(alloc) if alloc.rates.iter().sum::<f64>() > 0.0 => {
                        // Send only what the allocation deemed deliverable;
                        // the remainder is shed at the source rather than
                        // queued into certain overdue loss.
                        let allocated: f64 = alloc.rates.iter().sum();
                        let bytes = ((allocated * self.sc.interval_ms / 8.0).round() as u64)
                            .min(gop_bytes);
                        let mut weights = vec![0.0; n];
                        for (k, &p) in eligible.iter().enumerate() {
                            weights[p] = alloc.rates[k];
                        }
                        allocator::chunk_sizes(&weights, bytes)
                            .unwrap_or_else(|_| equal_split(&eligible))
                    }
                    _ => equal_split(&eligible),
                }
            }
            SchedulerScheme::CmtQa => {
                let eligible: Vec<usize> = (0..n).filter(|&p| stats[p].mu_kbps > 0.0).collect();
                if eligible.is_empty() {
                    return vec![0; n];
                }
                // Weight by the inverse of (estimated chunk delivery time /
                // sending buffer share); shares are equal, so the weight is
                // the inverse delivery time.
                let weights: Vec<f64> = (0..n)
                    .map(|p| {
                        if eligible.contains(&p) {
                            1.0 / self.qa_delivery_time(p).max(1e-6)
                        } else {
                            0.0
                        }
                    })
                    .collect();
                allocator::chunk_sizes(&weights, gop_bytes)
                    .unwrap_or_else(|_| equal_split(&eligible))
            }
            SchedulerScheme::CmtPf => {
                let mut eligible: Vec<usize> = (0..n)
                    .filter(|&p| stats[p].status == PathStatus::Active)
                    .collect();
                if eligible.is_empty() {
                    eligible = (0..n).collect();
                }
                equal_split(&eligible)
            }
            SchedulerScheme::Cmt => equal_split(&(0..n).collect::<Vec<_>>()),
        }
    }

    // ------------------------------------------------------------------
    // Invariant auditing and finalization
    // ------------------------------------------------------------------

    fn audit_invariants(&self) {
        for (i, p) in self.sender.paths.iter().enumerate() {
            let sum: u64 = p.outstanding.values().sum();
            assert_eq!(
                sum, p.outstanding_bytes,
                "outstanding byte accounting drifted on path {i}"
            );
            assert_eq!(
                p.timer_deadline_ms.is_some(),
                !p.outstanding.is_empty(),
                "timer discipline violated on path {i} at t={}",
                self.now
            );
        }
        let log = &self.receiver.delivered_log;
        if log.len() >= 2 {
            let a = &log[log.len() - 2];
            let b = &log[log.len() - 1];
            assert!(a.tsn < b.tsn, "out-of-order delivery {} then {}", a.tsn, b.tsn);
        }
    }

    pub(super) fn finish(mut self) -> (MetricsReport, EventTrace) {
        for p in &self.paths {
            self.cons.in_pipe_bytes += p.pipe_bytes;
        }
        self.cons.in_pipe_bytes += self.propagating_bytes;
        self.cons.unresolved_bytes = self.sender.unresolved_bytes();

        let n_paths = self.paths.len();
        let n_gops = self.gops.len();
        let mut offered = vec![vec![0u64; n_paths]; n_gops];
        let mut delivered_ok = vec![vec![0u64; n_paths]; n_gops];
        let mut rtx_effective = 0u64;
        for info in self.ledger.values() {
            let g = info.gop as usize;
            offered[g][info.assigned_path] += info.bytes;
            let in_deadline = info
                .delivered_at
                .is_some_and(|d| d <= info.deadline_ms);
            if in_deadline {
                delivered_ok[g][info.assigned_path] += info.bytes;
                if info.delivered_by_rtx {
                    rtx_effective += 1;
                }
            }
        }

        // Per-GoP model quality over deadline-complete GoPs.
        let complete: Vec<usize> = (0..n_gops)
            .filter(|&g| self.gops[g].t_emit + self.sc.deadline_ms <= self.sc.duration_ms)
            .collect();
        let mut gop_rates = Vec::with_capacity(complete.len());
        let mut gop_losses = Vec::with_capacity(complete.len());
        let mut enc_rates = Vec::with_capacity(complete.len());
        let mut gop_eff_loss = Vec::with_capacity(complete.len());
        let mut goodput_series = Vec::with_capacity(complete.len());
        for &g in &complete {
            let rates: Vec<f64> = offered[g]
                .iter()
                .map(|&b| b as f64 * 8.0 / self.sc.interval_ms)
                .collect();
            let losses: Vec<f64> = offered[g]
                .iter()
                .zip(&delivered_ok[g])
                .map(|(&o, &d)| if o > 0 { 1.0 - d as f64 / o as f64 } else { 0.0 })
                .collect();
            let o_total: u64 = offered[g].iter().sum();
            let d_total: u64 = delivered_ok[g].iter().sum();
            gop_eff_loss.push((
                self.gops[g].t_emit,
                if o_total > 0 {
                    1.0 - d_total as f64 / o_total as f64
                } else {
                    1.0
                },
            ));
            goodput_series.push((
                self.gops[g].t_emit,
                d_total as f64 * 8.0 / self.sc.interval_ms,
            ));
            gop_rates.push(rates);
            gop_losses.push(losses);
            enc_rates.push(self.gops[g].enc_kbps);
        }
        let psnr = metrics::psnr_series(
            &gop_rates,
            &gop_losses,
            &enc_rates,
            &self.sc.video.distortion,
        )
        .unwrap_or(metrics::PsnrSeries {
            per_gop_db: vec![],
            mean_db: 0.0,
            ci95_half_db: 0.0,
        });

        // Whole-run per-path effective loss, attributed to assignment.
        let mut path_offered = vec![0u64; n_paths];
        let mut path_ok = vec![0u64; n_paths];
        for g in 0..n_gops {
            for p in 0..n_paths {
                path_offered[p] += offered[g][p];
                path_ok[p] += delivered_ok[g][p];
            }
        }
        let per_path_effective_loss: Vec<f64> = path_offered
            .iter()
            .zip(&path_ok)
            .map(|(&o, &d)| if o > 0 { 1.0 - d as f64 / o as f64 } else { 0.0 })
            .collect();

        let delays = metrics::inter_packet_delays(&self.trace);
        let mean_ipd = if delays.is_empty() {
            0.0
        } else {
            delays.iter().sum::<f64>() / delays.len() as f64
        };
        let (oo_hist, oo_max) = metrics::out_of_order_offsets(&self.trace);

        let report = MetricsReport {
            scheme: self.scheme.name().to_string(),
            seed: self.sc.seed,
            duration_ms: self.sc.duration_ms,
            psnr_per_gop_db: psnr.per_gop_db,
            psnr_mean_db: psnr.mean_db,
            psnr_ci95_half_db: psnr.ci95_half_db,
            goodput_kbps: metrics::goodput_kbps(&self.trace, self.sc.deadline_ms),
            effective_loss: metrics::effective_loss(&self.trace, self.sc.deadline_ms),
            per_path_effective_loss,
            per_path_offered_bytes: path_offered,
            mean_inter_packet_delay_ms: mean_ipd,
            inter_packet_delay_cdf: metrics::sample_cdf(&delays, 1.0),
            out_of_order_hist: oo_hist.into_iter().collect(),
            max_out_of_order_offset: oo_max,
            retransmissions_total: self.rtx_total,
            retransmissions_effective: rtx_effective,
            rate_shares: self.rate_shares,
            mu_estimates: self.mu_estimates,
            rtt_estimates: self.rtt_estimates,
            loss_estimates: self.loss_estimates,
            gop_effective_loss: gop_eff_loss,
            goodput_series,
            conservation: self.cons,
            blocked_buffer_drops: self.receiver.blocked_drops,
            duplicates: self.receiver.duplicates,
            scenario_warnings: Vec::new(),
        };
        (report, self.trace)
    }
}
