//! Receiver-side association state: reorder buffer, strictly in-order
//! delivery, SACK generation, and out-of-order offset tracking.

use std::collections::BTreeMap;

use super::Tsn;

/// Data packet as it arrives at the receiver.
#[derive(Debug, Clone, Copy)]
pub struct ArrivedPacket {
    pub tsn: Tsn,
    pub bytes: u64,
    pub gop_id: u64,
    pub ecn_marked: bool,
    /// Sender's acked-or-abandoned prefix boundary; holes at or below it
    /// will never be filled and must not block delivery.
    pub forward_tsn: Tsn,
}

/// SACK content generated on every packet arrival; the caller picks the
/// uplink path and stamps the time.
#[derive(Debug, Clone, PartialEq)]
pub struct SackInfo {
    pub cumulative_tsn: Tsn,
    pub gap_blocks: Vec<(Tsn, Tsn)>,
    pub ecn_echo: bool,
}

/// What one arrival did to the receiver.
#[derive(Debug)]
pub struct PacketOutcome {
    /// Chunks released to the application, in TSN order: (tsn, bytes,
    /// gop_id, arrival_ms).
    pub delivered: Vec<(Tsn, u64, u64, f64)>,
    pub sack: SackInfo,
    /// Signed TSN distance to the previously received chunk; `None` on the
    /// first arrival.
    pub oo_offset: Option<i64>,
    /// The arriving chunk was dropped (duplicate or full buffer).
    pub dropped: bool,
}

#[derive(Debug, Clone, Copy)]
struct Buffered {
    bytes: u64,
    gop_id: u64,
    arrival_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeliveredRecord {
    pub tsn: Tsn,
    pub arrival_ms: f64,
    pub delivery_ms: f64,
}

/// Receiver state with a byte-bounded reorder buffer.
#[derive(Debug)]
pub struct ReceiverState {
    cumulative_tsn: Tsn,
    buffer: BTreeMap<Tsn, Buffered>,
    buffer_capacity: u64,
    buffer_used: u64,
    pub delivered_log: Vec<DeliveredRecord>,
    last_arrival_tsn: Option<Tsn>,
    /// Arrivals dropped because the reorder buffer was full.
    pub blocked_drops: u64,
    pub duplicates: u64,
    /// TSNs skipped on sender instruction (abandoned upstream).
    pub skipped: u64,
}

impl ReceiverState {
    pub fn new(buffer_capacity: u64) -> Self {
        Self {
            cumulative_tsn: 0,
            buffer: BTreeMap::new(),
            buffer_capacity,
            buffer_used: 0,
            delivered_log: Vec::new(),
            last_arrival_tsn: None,
            blocked_drops: 0,
            duplicates: 0,
            skipped: 0,
        }
    }

    pub fn cumulative_tsn(&self) -> Tsn {
        self.cumulative_tsn
    }

    pub fn buffer_used(&self) -> u64 {
        self.buffer_used
    }

    fn gap_blocks(&self) -> Vec<(Tsn, Tsn)> {
        let mut blocks: Vec<(Tsn, Tsn)> = Vec::new();
        for &tsn in self.buffer.keys() {
            match blocks.last_mut() {
                Some((_, hi)) if *hi + 1 == tsn => *hi = tsn,
                _ => blocks.push((tsn, tsn)),
            }
        }
        blocks
    }

    fn drain_in_order(&mut self, now_ms: f64, delivered: &mut Vec<(Tsn, u64, u64, f64)>) {
        while let Some(entry) = self.buffer.remove(&(self.cumulative_tsn + 1)) {
            self.cumulative_tsn += 1;
            self.buffer_used = self.buffer_used.saturating_sub(entry.bytes);
            delivered.push((self.cumulative_tsn, entry.bytes, entry.gop_id, entry.arrival_ms));
            self.delivered_log.push(DeliveredRecord {
                tsn: self.cumulative_tsn,
                arrival_ms: entry.arrival_ms,
                delivery_ms: now_ms,
            });
        }
    }

    /// Advances past holes the sender will never fill, then drains whatever
    /// became contiguous.
    fn apply_forward_tsn(
        &mut self,
        forward: Tsn,
        now_ms: f64,
        delivered: &mut Vec<(Tsn, u64, u64, f64)>,
    ) {
        while self.cumulative_tsn < forward {
            let next = self.cumulative_tsn + 1;
            if self.buffer.contains_key(&next) {
                self.drain_in_order(now_ms, delivered);
            } else {
                self.cumulative_tsn = next;
                self.skipped += 1;
            }
        }
        self.drain_in_order(now_ms, delivered);
    }

    /// Handles one arrival: deliver or buffer the chunk, drain anything now
    /// contiguous, and emit a SACK reflecting the buffer state.
    pub fn on_packet(&mut self, pkt: ArrivedPacket, now_ms: f64) -> PacketOutcome {
        let oo_offset = self
            .last_arrival_tsn
            .map(|prev| pkt.tsn as i64 - prev as i64);
        self.last_arrival_tsn = Some(pkt.tsn);

        let mut delivered = Vec::new();
        self.apply_forward_tsn(pkt.forward_tsn, now_ms, &mut delivered);

        let mut dropped = false;
        if pkt.tsn <= self.cumulative_tsn || self.buffer.contains_key(&pkt.tsn) {
            self.duplicates += 1;
            dropped = true;
        } else if pkt.tsn == self.cumulative_tsn + 1 {
            self.cumulative_tsn = pkt.tsn;
            delivered.push((pkt.tsn, pkt.bytes, pkt.gop_id, now_ms));
            self.delivered_log.push(DeliveredRecord {
                tsn: pkt.tsn,
                arrival_ms: now_ms,
                delivery_ms: now_ms,
            });
            self.drain_in_order(now_ms, &mut delivered);
        } else if self.buffer_used + pkt.bytes <= self.buffer_capacity {
            self.buffer.insert(
                pkt.tsn,
                Buffered {
                    bytes: pkt.bytes,
                    gop_id: pkt.gop_id,
                    arrival_ms: now_ms,
                },
            );
            self.buffer_used += pkt.bytes;
        } else {
            self.blocked_drops += 1;
            dropped = true;
        }

        PacketOutcome {
            delivered,
            sack: SackInfo {
                cumulative_tsn: self.cumulative_tsn,
                gap_blocks: self.gap_blocks(),
                ecn_echo: pkt.ecn_marked,
            },
            oo_offset,
            dropped,
        }
    }
}
