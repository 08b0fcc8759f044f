//! Evaluation metrics computed from transport event traces: goodput,
//! inter-packet delay, effective loss rate, out-of-order offsets, and the
//! model-PSNR series.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::distortion::{psnr_from_mse, total_distortion, DistortionParams, ModelError};
use crate::transport::Tsn;

/// Trace record kinds. `Send` is the first transmission of a chunk,
/// `Retransmit` any further copy; `Arrive` is a physical arrival at the
/// receiver (including duplicates and buffer drops); `Deliver` is the
/// in-order release to the application; `Lose` is a physical drop (channel,
/// availability gap, or full receiver buffer); `Abandon` is the sender
/// giving up on a chunk; `Sack` is acknowledgment feedback reaching the
/// sender.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Send,
    Retransmit,
    Arrive,
    Deliver,
    Lose,
    Abandon,
    Sack,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Send => "send",
            EventKind::Retransmit => "retransmit",
            EventKind::Arrive => "arrive",
            EventKind::Deliver => "deliver",
            EventKind::Lose => "lose",
            EventKind::Abandon => "abandon",
            EventKind::Sack => "sack",
        }
    }
}

/// One trace record. Field names are stable; the CSV emitter writes them as
/// `t_ms,kind,path,tsn,bytes,gop_id`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t_ms: f64,
    pub kind: EventKind,
    pub path: usize,
    pub tsn: Tsn,
    pub bytes: u64,
    pub gop_id: u64,
}

/// Ordered event log of one run plus the run geometry needed to interpret
/// it (interval length, duration, and the payload offered per GoP).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EventTrace {
    pub interval_ms: f64,
    pub duration_ms: f64,
    pub offered_bytes_per_gop: Vec<u64>,
    pub records: Vec<EventRecord>,
}

impl EventTrace {
    pub fn new(interval_ms: f64, duration_ms: f64) -> Self {
        Self {
            interval_ms,
            duration_ms,
            offered_bytes_per_gop: Vec::new(),
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, rec: EventRecord) {
        debug_assert!(
            self.records.last().map_or(true, |r| r.t_ms <= rec.t_ms),
            "trace timestamps must be nondecreasing"
        );
        self.records.push(rec);
    }

    /// Source emission instant of a GoP.
    pub fn emission_ms(&self, gop_id: u64) -> f64 {
        gop_id as f64 * self.interval_ms
    }

    pub fn offered_bytes(&self) -> u64 {
        self.offered_bytes_per_gop.iter().sum()
    }

    fn in_deadline_delivered_bytes(&self, deadline_ms: f64) -> u64 {
        self.records
            .iter()
            .filter(|r| {
                r.kind == EventKind::Deliver
                    && r.t_ms - self.emission_ms(r.gop_id) <= deadline_ms
            })
            .map(|r| r.bytes)
            .sum()
    }
}

/// Useful payload delivered within the deadline, Kbps over the run.
pub fn goodput_kbps(trace: &EventTrace, deadline_ms: f64) -> f64 {
    if trace.duration_ms <= 0.0 {
        return 0.0;
    }
    let bits = trace.in_deadline_delivered_bytes(deadline_ms) as f64 * 8.0;
    bits / trace.duration_ms
}

/// Differences between consecutive application deliveries, ms.
pub fn inter_packet_delays(trace: &EventTrace) -> Vec<f64> {
    let mut prev: Option<f64> = None;
    let mut out = Vec::new();
    for r in &trace.records {
        if r.kind != EventKind::Deliver {
            continue;
        }
        if let Some(p) = prev {
            out.push(r.t_ms - p);
        }
        prev = Some(r.t_ms);
    }
    out
}

/// Empirical CDF of `samples` on a uniform grid of `step` width. The grid
/// runs from 0 to the maximum sample, so the last point reaches 1.
pub fn sample_cdf(samples: &[f64], step: f64) -> Vec<(f64, f64)> {
    if samples.is_empty() || step <= 0.0 {
        return Vec::new();
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let max = *sorted.last().unwrap();
    let n = sorted.len() as f64;
    let points = (max / step).ceil() as usize + 1;
    (0..points)
        .map(|k| {
            let x = k as f64 * step;
            let count = sorted.partition_point(|&s| s <= x);
            (x, count as f64 / n)
        })
        .collect()
}

/// Fraction of the offered payload that failed to arrive within the
/// deadline (transmission plus overdue losses).
pub fn effective_loss(trace: &EventTrace, deadline_ms: f64) -> f64 {
    let offered = trace.offered_bytes();
    if offered == 0 {
        return 0.0;
    }
    1.0 - trace.in_deadline_delivered_bytes(deadline_ms) as f64 / offered as f64
}

/// Signed TSN offsets between consecutive physical arrivals: histogram and
/// largest magnitude.
pub fn out_of_order_offsets(trace: &EventTrace) -> (BTreeMap<i64, u64>, i64) {
    let mut prev: Option<Tsn> = None;
    let mut hist = BTreeMap::new();
    let mut max_abs = 0i64;
    for r in &trace.records {
        if r.kind != EventKind::Arrive {
            continue;
        }
        if let Some(p) = prev {
            let off = r.tsn as i64 - p as i64;
            *hist.entry(off).or_insert(0) += 1;
            if off.abs() > max_abs.abs() {
                max_abs = off;
            }
        }
        prev = Some(r.tsn);
    }
    (hist, max_abs)
}

/// Sample mean and 95% confidence half-width under the normal
/// approximation.
pub fn mean_ci95(samples: &[f64]) -> (f64, f64) {
    if samples.is_empty() {
        return (0.0, 0.0);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

/// Per-GoP model-PSNR series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PsnrSeries {
    pub per_gop_db: Vec<f64>,
    pub mean_db: f64,
    pub ci95_half_db: f64,
}

/// Maps measured per-path losses and carried rates of each GoP onto the
/// distortion model and the PSNR scale. GoPs whose rate vector carries no
/// traffic count as fully lost.
pub fn psnr_series(
    gop_rates: &[Vec<f64>],
    gop_losses: &[Vec<f64>],
    encoding_rates: &[f64],
    params: &DistortionParams,
) -> Result<PsnrSeries, ModelError> {
    assert_eq!(gop_rates.len(), gop_losses.len());
    assert_eq!(gop_rates.len(), encoding_rates.len());
    let mut per_gop_db = Vec::with_capacity(gop_rates.len());
    for ((rates, losses), &enc) in gop_rates.iter().zip(gop_losses).zip(encoding_rates) {
        let total: f64 = rates.iter().sum();
        let mse = if total > 0.0 {
            total_distortion(params, enc, rates, losses)?
        } else {
            // Nothing carried: source term plus the full channel penalty.
            total_distortion(params, enc, &[1.0], &[1.0])?
        };
        per_gop_db.push(psnr_from_mse(mse));
    }
    let (mean_db, ci95_half_db) = mean_ci95(&per_gop_db);
    Ok(PsnrSeries {
        per_gop_db,
        mean_db,
        ci95_half_db,
    })
}

/// Trailing moving average over a time series, window in ms.
pub fn moving_average(series: &[(f64, f64)], window_ms: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(series.len());
    let mut start = 0usize;
    let mut sum = 0.0;
    for (i, &(t, v)) in series.iter().enumerate() {
        sum += v;
        while series[start].0 < t - window_ms {
            sum -= series[start].1;
            start += 1;
        }
        out.push((t, sum / (i - start + 1) as f64));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: f64, kind: EventKind, tsn: Tsn, bytes: u64, gop: u64) -> EventRecord {
        EventRecord {
            t_ms: t,
            kind,
            path: 0,
            tsn,
            bytes,
            gop_id: gop,
        }
    }

    fn trace_with(records: Vec<EventRecord>, offered: Vec<u64>) -> EventTrace {
        EventTrace {
            interval_ms: 250.0,
            duration_ms: 1000.0,
            offered_bytes_per_gop: offered,
            records,
        }
    }

    #[test]
    fn goodput_empty_trace_is_zero() {
        let t = trace_with(vec![], vec![]);
        assert_eq!(goodput_kbps(&t, 250.0), 0.0);
    }

    #[test]
    fn goodput_counts_only_in_deadline_payload() {
        // GoP 0 emitted at 0: one delivery inside the 250 ms budget, one
        // outside, half the bytes each.
        let t = trace_with(
            vec![
                rec(100.0, EventKind::Deliver, 1, 500, 0),
                rec(400.0, EventKind::Deliver, 2, 500, 0),
            ],
            vec![1000],
        );
        // 500 bytes * 8 bits over 1000 ms = 4 Kbps.
        assert_eq!(goodput_kbps(&t, 250.0), 4.0);
        // Infinite deadline admits everything and dominates.
        assert_eq!(goodput_kbps(&t, f64::INFINITY), 8.0);
    }

    #[test]
    fn effective_loss_complements_delivery_fraction() {
        let t = trace_with(
            vec![
                rec(100.0, EventKind::Deliver, 1, 500, 0),
                rec(400.0, EventKind::Deliver, 2, 500, 0),
            ],
            vec![1000],
        );
        assert_eq!(effective_loss(&t, 250.0), 0.5);
        assert_eq!(effective_loss(&t, f64::INFINITY), 0.0);
        let empty = trace_with(vec![], vec![1000]);
        assert_eq!(effective_loss(&empty, 250.0), 1.0);
    }

    #[test]
    fn inter_packet_delays_from_consecutive_deliveries() {
        let t = trace_with(
            vec![
                rec(10.0, EventKind::Deliver, 1, 100, 0),
                rec(15.0, EventKind::Deliver, 2, 100, 0),
                rec(25.0, EventKind::Arrive, 9, 100, 0),
                rec(20.0 + 5.0, EventKind::Deliver, 3, 100, 0),
            ],
            vec![300],
        );
        assert_eq!(inter_packet_delays(&t), vec![5.0, 10.0]);
        let single = trace_with(vec![rec(10.0, EventKind::Deliver, 1, 100, 0)], vec![100]);
        assert!(inter_packet_delays(&single).is_empty());
    }

    #[test]
    fn cdf_counts_fractions_directly() {
        let samples = vec![5.0, 5.0, 5.0, 20.0];
        let cdf = sample_cdf(&samples, 1.0);
        let at = |x: f64| {
            cdf.iter()
                .find(|(g, _)| (*g - x).abs() < 1e-9)
                .map(|(_, f)| *f)
                .unwrap()
        };
        assert_eq!(at(4.0), 0.0);
        assert_eq!(at(5.0), 0.75);
        assert_eq!(at(19.0), 0.75);
        assert_eq!(at(20.0), 1.0);
        // Nondecreasing, ends at 1.
        assert!(cdf.windows(2).all(|w| w[0].1 <= w[1].1));
        assert_eq!(cdf.last().unwrap().1, 1.0);
    }

    #[test]
    fn out_of_order_offsets_examples() {
        let t = trace_with(
            vec![
                rec(1.0, EventKind::Arrive, 1, 100, 0),
                rec(2.0, EventKind::Arrive, 2, 100, 0),
                rec(3.0, EventKind::Arrive, 3, 100, 0),
            ],
            vec![300],
        );
        let (hist, max) = out_of_order_offsets(&t);
        assert_eq!(hist.get(&1), Some(&2));
        assert_eq!(max, 1);

        // Two-path interleave: 1, 3, 2, 4 gives offsets 2, -1, 2.
        let t = trace_with(
            vec![
                rec(1.0, EventKind::Arrive, 1, 100, 0),
                rec(2.0, EventKind::Arrive, 3, 100, 0),
                rec(3.0, EventKind::Arrive, 2, 100, 0),
                rec(4.0, EventKind::Arrive, 4, 100, 0),
            ],
            vec![400],
        );
        let (hist, max) = out_of_order_offsets(&t);
        assert_eq!(hist.get(&2), Some(&2));
        assert_eq!(hist.get(&-1), Some(&1));
        assert_eq!(max, 2);

        let single = trace_with(vec![rec(1.0, EventKind::Arrive, 1, 100, 0)], vec![100]);
        let (hist, _) = out_of_order_offsets(&single);
        assert!(hist.is_empty());
    }

    #[test]
    fn mean_ci_matches_direct_recomputation() {
        let samples = vec![30.0, 32.0, 31.0, 29.0, 33.0];
        let (mean, half) = mean_ci95(&samples);
        let m: f64 = samples.iter().sum::<f64>() / 5.0;
        assert!((mean - m).abs() < 1e-12);
        let var: f64 = samples.iter().map(|s| (s - m).powi(2)).sum::<f64>() / 4.0;
        assert!((half - 1.96 * (var / 5.0).sqrt()).abs() < 1e-12);
        // Identical samples collapse the interval.
        let (_, zero) = mean_ci95(&[7.0, 7.0, 7.0]);
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn psnr_series_constant_for_lossless_run() {
        let params = DistortionParams {
            d0: 1.0,
            alpha: 1000.0,
            r0: 100.0,
            beta: 50.0,
        };
        let rates = vec![vec![600.0, 400.0]; 4];
        let losses = vec![vec![0.0, 0.0]; 4];
        let enc = vec![1100.0; 4];
        let s = psnr_series(&rates, &losses, &enc, &params).unwrap();
        assert!(s.per_gop_db.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(s.ci95_half_db, 0.0);
        assert!((s.mean_db - psnr_from_mse(2.0)).abs() < 1e-12);
    }

    #[test]
    fn moving_average_matches_windowed_mean() {
        let series: Vec<(f64, f64)> = (0..10).map(|k| (k as f64 * 100.0, k as f64)).collect();
        let ma = moving_average(&series, 250.0);
        // At t=900 the window covers t in [650, 900]: samples 7, 8, 9.
        assert!((ma[9].1 - 8.0).abs() < 1e-12);
        // At t=0 only itself.
        assert_eq!(ma[0].1, 0.0);
    }
}
