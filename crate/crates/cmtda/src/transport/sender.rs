//! Sender-side association state: chunk registry, per-path outstanding
//! tracking, timer discipline, and SACK processing.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use super::{Chunk, PathCongestionController, SackEvent, Tsn, DUP_SACK_LIMIT, MISSING_REPORT_LIMIT};

/// A registered chunk plus its loss-detection bookkeeping.
#[derive(Debug, Clone)]
pub struct Outstanding {
    pub chunk: Chunk,
    pub missing_reports: u32,
    /// Set once the chunk was handed to the retransmission policy, so a
    /// single loss produces a single notification.
    pub loss_notified: bool,
    /// Set while a copy is in flight on `chunk.path`.
    pub in_flight: bool,
}

/// Per-path sender state.
#[derive(Debug)]
pub struct SenderPath {
    pub cc: PathCongestionController,
    /// TSNs currently in flight on this path.
    pub outstanding: BTreeMap<Tsn, u64>,
    pub outstanding_bytes: u64,
    /// Chunks assigned to the path but not yet sent (cwnd or pacing gated).
    pub queue: VecDeque<Tsn>,
    /// Payload bytes sitting in `queue`.
    pub queue_bytes: u64,
    /// Armed retransmission timer (absolute ms); `None` when idle.
    pub timer_deadline_ms: Option<f64>,
    /// Bumped whenever the timer is rearmed or cancelled, so stale timer
    /// events can be recognized and dropped.
    pub timer_epoch: u64,
}

impl SenderPath {
    fn new(cc: PathCongestionController) -> Self {
        Self {
            cc,
            outstanding: BTreeMap::new(),
            outstanding_bytes: 0,
            queue: VecDeque::new(),
            queue_bytes: 0,
            timer_deadline_ms: None,
            timer_epoch: 0,
        }
    }

    fn arm_timer(&mut self, now_ms: f64) {
        self.timer_deadline_ms = Some(now_ms + self.cc.rto_ms);
        self.timer_epoch += 1;
    }

    fn cancel_timer(&mut self) {
        self.timer_deadline_ms = None;
        self.timer_epoch += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SendOutcome {
    Sent,
    /// The congestion window has no headroom; the chunk stays queued.
    WindowLimited,
}

/// Result digest of one SACK.
#[derive(Debug, Default)]
pub struct SackOutcome {
    /// (tsn, path, bytes, rtt_sample): newly acknowledged chunks. The RTT
    /// sample is absent for retransmitted chunks.
    pub newly_acked: Vec<(Tsn, usize, u64, Option<f64>)>,
    /// TSNs that reached the missing-report limit with this SACK.
    pub loss_notifications: Vec<Tsn>,
    /// Paths whose duplicate-SACK counter just reached the limit.
    pub third_dup_sack_paths: Vec<usize>,
    /// SACK referenced TSNs this sender never sent.
    pub unknown_tsns: u64,
}

/// Whole-association sender state.
#[derive(Debug)]
pub struct SenderState {
    pub paths: Vec<SenderPath>,
    chunks: HashMap<Tsn, Outstanding>,
    next_tsn: Tsn,
    /// Every TSN at or below this one is acknowledged or abandoned.
    clean_tsn: Tsn,
    /// Acknowledged TSNs above `clean_tsn`.
    acked_above: BTreeSet<Tsn>,
    /// Abandoned TSNs above `clean_tsn`.
    abandoned_above: BTreeSet<Tsn>,
    highest_acked: Tsn,
    /// Highest acknowledged TSN among chunks carried by each path; the
    /// reference point for per-path missing reports. Cross-path reordering
    /// must not count as evidence of loss.
    max_acked_per_path: Vec<Tsn>,
}

impl SenderState {
    pub fn new(controllers: Vec<PathCongestionController>) -> Self {
        let n = controllers.len();
        Self {
            paths: controllers.into_iter().map(SenderPath::new).collect(),
            chunks: HashMap::new(),
            next_tsn: 1,
            clean_tsn: 0,
            acked_above: BTreeSet::new(),
            abandoned_above: BTreeSet::new(),
            highest_acked: 0,
            max_acked_per_path: vec![0; n],
        }
    }

    pub fn allocate_tsn(&mut self) -> Tsn {
        let t = self.next_tsn;
        self.next_tsn += 1;
        t
    }

    pub fn chunk(&self, tsn: Tsn) -> Option<&Outstanding> {
        self.chunks.get(&tsn)
    }

    pub fn pending_chunks(&self) -> usize {
        self.chunks.len()
    }

    /// Highest TSN such that everything at or below it is acknowledged or
    /// abandoned. Carried on data packets so the receiver can skip holes
    /// left by abandoned chunks.
    pub fn forward_tsn(&self) -> Tsn {
        self.clean_tsn
    }

    /// Registers a fresh chunk and queues it on its assigned path.
    pub fn enqueue_chunk(&mut self, chunk: Chunk) {
        let path = chunk.path;
        let tsn = chunk.tsn;
        let bytes = self.chunks
            .entry(tsn)
            .or_insert(Outstanding {
                chunk,
                missing_reports: 0,
                loss_notified: false,
                in_flight: false,
            })
            .chunk
            .bytes;
        self.paths[path].queue.push_back(tsn);
        self.paths[path].queue_bytes += bytes;
    }

    /// Unsent payload currently queued across all paths.
    pub fn total_queued_bytes(&self) -> u64 {
        self.paths.iter().map(|p| p.queue_bytes).sum()
    }

    /// Requeues a chunk for retransmission at the front of `path`'s queue,
    /// detaching it from wherever it currently sits.
    pub fn requeue_for_retransmit(&mut self, tsn: Tsn, path: usize) {
        if let Some(out) = self.chunks.get_mut(&tsn) {
            let old_path = out.chunk.path;
            let bytes = out.chunk.bytes;
            if out.in_flight {
                let p = &mut self.paths[old_path];
                if p.outstanding.remove(&tsn).is_some() {
                    p.outstanding_bytes = p.outstanding_bytes.saturating_sub(bytes);
                }
                if p.outstanding.is_empty() {
                    p.cancel_timer();
                }
            } else {
                let q = &mut self.paths[old_path];
                let before = q.queue.len();
                q.queue.retain(|&t| t != tsn);
                if q.queue.len() < before {
                    q.queue_bytes = q.queue_bytes.saturating_sub(bytes);
                }
            }
            let out = self.chunks.get_mut(&tsn).expect("still present");
            out.chunk.path = path;
            out.chunk.retransmit_count += 1;
            out.missing_reports = 0;
            out.loss_notified = false;
            out.in_flight = false;
            self.paths[path].queue.push_front(tsn);
            self.paths[path].queue_bytes += bytes;
        }
    }

    /// Drops a chunk from the association (deadline unreachable or loss
    /// budget already met). Returns its size when it was still pending.
    pub fn abandon(&mut self, tsn: Tsn) -> Option<u64> {
        let out = self.chunks.remove(&tsn)?;
        let path = &mut self.paths[out.chunk.path];
        if out.in_flight {
            if path.outstanding.remove(&tsn).is_some() {
                path.outstanding_bytes = path.outstanding_bytes.saturating_sub(out.chunk.bytes);
            }
            if path.outstanding.is_empty() {
                path.cancel_timer();
            }
        } else {
            let before = path.queue.len();
            path.queue.retain(|&t| t != tsn);
            if path.queue.len() < before {
                path.queue_bytes = path.queue_bytes.saturating_sub(out.chunk.bytes);
            }
        }
        self.abandoned_above.insert(tsn);
        self.advance_clean();
        Some(out.chunk.bytes)
    }

    fn advance_clean(&mut self) {
        loop {
            let next = self.clean_tsn + 1;
            if self.acked_above.remove(&next) || self.abandoned_above.remove(&next) {
                self.clean_tsn = next;
            } else {
                break;
            }
        }
    }

    /// Attempts to transmit the head of `path`'s queue at `now_ms`.
    ///
    /// A first transmission on an idle path arms the timer; a running timer
    /// is left alone for fresh data and restarted for retransmissions.
    pub fn on_send(&mut self, path: usize, now_ms: f64) -> Option<(Chunk, SendOutcome)> {
        let tsn = *self.paths[path].queue.front()?;
        let out = self.chunks.get_mut(&tsn)?;
        let bytes = out.chunk.bytes;
        let p = &mut self.paths[path];
        if p.outstanding_bytes + bytes > p.cc.cwnd_bytes {
            return Some((out.chunk.clone(), SendOutcome::WindowLimited));
        }
        p.queue.pop_front();
        p.queue_bytes = p.queue_bytes.saturating_sub(bytes);
        out.chunk.sent_at_ms = Some(now_ms);
        out.in_flight = true;
        p.outstanding.insert(tsn, bytes);
        p.outstanding_bytes += bytes;
        let retransmit = out.chunk.retransmit_count > 0;
        if p.timer_deadline_ms.is_none() || retransmit {
            p.arm_timer(now_ms);
        }
        Some((out.chunk.clone(), SendOutcome::Sent))
    }

    /// Folds a SACK into the association. Window growth is scaled by
    /// `acceptance` (the per-path packet acceptance ratio; pass 1.0 for
    /// conventional growth).
    pub fn process_sack(
        &mut self,
        sack: &SackEvent,
        now_ms: f64,
        acceptance: impl Fn(usize) -> f64,
    ) -> SackOutcome {
        let mut outcome = SackOutcome::default();
        let mut acked: Vec<Tsn> = Vec::new();
        for (&tsn, out) in &self.chunks {
            let covered = tsn <= sack.cumulative_tsn
                || sack
                    .gap_blocks
                    .iter()
                    .any(|&(lo, hi)| lo <= tsn && tsn <= hi);
            // A covered chunk that is queued for retransmission was acked
            // by a late copy; accept the ack and cancel the retransmission.
            if covered && (out.in_flight || out.chunk.sent_at_ms.is_some()) {
                acked.push(tsn);
            }
        }
        acked.sort_unstable();

        // Sanity: gap blocks must reference TSNs this sender has issued.
        for &(lo, hi) in &sack.gap_blocks {
            for t in lo..=hi.min(lo + 64) {
                if t >= self.next_tsn {
                    outcome.unknown_tsns += 1;
                }
            }
        }

        let mut acked_bytes_per_path: HashMap<usize, u64> = HashMap::new();
        for tsn in acked {
            let out = self.chunks.remove(&tsn).expect("ack scan");
            let path = out.chunk.path;
            let p = &mut self.paths[path];
            if out.in_flight {
                if p.outstanding.remove(&tsn).is_some() {
                    p.outstanding_bytes = p.outstanding_bytes.saturating_sub(out.chunk.bytes);
                }
            } else {
                let before = p.queue.len();
                p.queue.retain(|&t| t != tsn);
                if p.queue.len() < before {
                    p.queue_bytes = p.queue_bytes.saturating_sub(out.chunk.bytes);
                }
            }
            *acked_bytes_per_path.entry(path).or_default() += out.chunk.bytes;
            let rtt_sample = if out.chunk.retransmit_count == 0 && out.in_flight {
                out.chunk.sent_at_ms.map(|s| now_ms - s)
            } else {
                None
            };
            self.highest_acked = self.highest_acked.max(tsn);
            self.max_acked_per_path[path] = self.max_acked_per_path[path].max(tsn);
            self.acked_above.insert(tsn);
            outcome
                .newly_acked
                .push((tsn, path, out.chunk.bytes, rtt_sample));
        }
        self.advance_clean();

        // Missing reports, per path: an in-flight TSN counts as missing
        // only once a later TSN sent on the same path has been
        // acknowledged. Plain TSN-order comparison would misread ordinary
        // cross-path reordering as loss.
        for (&tsn, out) in self.chunks.iter_mut() {
            if !out.in_flight || out.loss_notified {
                continue;
            }
            if tsn >= self.max_acked_per_path[out.chunk.path] {
                continue;
            }
            out.missing_reports += 1;
            if out.missing_reports >= MISSING_REPORT_LIMIT {
                out.loss_notified = true;
                outcome.loss_notifications.push(tsn);
            }
        }
        outcome.loss_notifications.sort_unstable();

        // Per-path window growth, timer handling, duplicate counting.
        for (path, p) in self.paths.iter_mut().enumerate() {
            match acked_bytes_per_path.get(&path) {
                Some(&bytes) => {
                    p.cc.on_ack(bytes, acceptance(path));
                    p.cc.dup_sack_count = 0;
                    if p.outstanding.is_empty() {
                        p.cancel_timer();
                    } else {
                        p.arm_timer(now_ms);
                    }
                }
                None => {
                    if !p.outstanding.is_empty() {
                        p.cc.dup_sack_count += 1;
                        if p.cc.dup_sack_count == DUP_SACK_LIMIT {
                            outcome.third_dup_sack_paths.push(path);
                        }
                    }
                }
            }
        }
        if sack.ecn_echo {
            if let Some(marked) = sack.ecn_path {
                self.paths[marked].cc.ecn_seen = true;
            }
        }
        outcome
    }

    /// Head of a path's transmission queue: (tsn, absolute deadline).
    pub fn peek_queue(&self, path: usize) -> Option<(Tsn, f64)> {
        let tsn = *self.paths[path].queue.front()?;
        self.chunks
            .get(&tsn)
            .map(|out| (tsn, out.chunk.deadline_ms))
    }

    /// Timer expiry on `path`: applies the timeout response and hands back
    /// the chunks that were in flight there (presumed lost, pending a
    /// retransmission decision).
    pub fn on_timeout(&mut self, path: usize) -> Vec<Tsn> {
        let p = &mut self.paths[path];
        p.cc.on_timeout();
        p.cancel_timer();
        let lost: Vec<Tsn> = p.outstanding.keys().copied().collect();
        for &tsn in &lost {
            if let Some(bytes) = p.outstanding.remove(&tsn) {
                p.outstanding_bytes = p.outstanding_bytes.saturating_sub(bytes);
            }
            if let Some(out) = self.chunks.get_mut(&tsn) {
                out.in_flight = false;
                out.loss_notified = true;
            }
        }
        lost
    }

    /// Clears loss bookkeeping for a chunk that turned out to be alive (a
    /// late acknowledgment raced the loss detection).
    pub fn is_pending(&self, tsn: Tsn) -> bool {
        self.chunks.contains_key(&tsn)
    }

    /// Bytes of chunks never resolved (still queued or in flight).
    pub fn unresolved_bytes(&self) -> u64 {
        self.chunks.values().map(|o| o.chunk.bytes).sum()
    }
}
