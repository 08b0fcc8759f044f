//! Utility-maximization flow rate allocation.
//!
//! Every distribution interval the sender splits the encoding rate across
//! the live paths to minimize the predicted end-to-end distortion, subject
//! to per-path capacity and the interval delay budget. The per-path
//! objective is approximated piecewise-linearly; the iteration greedily
//! moves rate quanta between paths by transition utility, with a
//! load-imbalance threshold steering between intra-path and inter-path
//! moves.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distortion::{
    self, effective_loss_rate, expected_delay, packets_per_chunk, total_distortion,
    DistortionParams,
};

#[derive(Debug, Error, PartialEq)]
pub enum AllocError {
    #[error("at least one path with positive bandwidth is required")]
    NoUsablePath,
    #[error("target rate must be positive, got {0}")]
    InvalidTarget(f64),
    #[error("system residual capacity is exhausted")]
    Saturated,
    #[error("piecewise approximation needs lo < hi and m >= 2")]
    InvalidPwlDomain,
    #[error("objective is not finite anywhere on the requested interval")]
    UnboundedObjective,
    #[error("query outside the approximation domain")]
    OutOfDomain,
    #[error("total assigned rate must be positive")]
    ZeroTotalRate,
    #[error("model error: {0}")]
    Model(String),
}

impl From<distortion::ModelError> for AllocError {
    fn from(e: distortion::ModelError) -> Self {
        AllocError::Model(e.to_string())
    }
}

/// Tuning knobs of the allocator.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AllocatorConfig {
    /// Rate step per move, Kbps. `0.0` selects target_rate/100.
    pub delta_r: f64,
    /// Load-imbalance threshold above which inter-path transfers kick in.
    pub tlv: f64,
    pub max_iterations: usize,
    /// Minimum objective improvement (MSE) for a move to be accepted.
    pub epsilon: f64,
    /// Breakpoint intervals per path domain.
    pub breakpoint_count: usize,
    pub mtu_bytes: u64,
    /// Packet interleaving spacing, ms.
    pub omega_ms: f64,
    /// Data distribution interval, ms.
    pub interval_ms: f64,
    /// Weight of the inter-path delay spread in the move score. Zero keeps
    /// the delay-equalization goal purely diagnostic.
    pub jitter_penalty: f64,
}

impl Default for AllocatorConfig {
    fn default() -> Self {
        Self {
            delta_r: 0.0,
            tlv: 1.2,
            max_iterations: 10_000,
            epsilon: 1e-9,
            breakpoint_count: 32,
            mtu_bytes: 1500,
            omega_ms: 5.0,
            interval_ms: distortion::DEFAULT_INTERVAL_MS,
            jitter_penalty: 0.0,
        }
    }
}

/// Live estimates for one candidate path, as fed to [`allocate`].
#[derive(Debug, Clone, Copy)]
pub struct PathSnapshot {
    pub id: usize,
    pub mu_kbps: f64,
    pub rtt_ms: f64,
    /// Estimated stationary loss rate.
    pub loss_rate: f64,
    /// Latest observed residual bandwidth, Kbps.
    pub nu_obs_kbps: f64,
}

/// Result of one allocation round.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Allocation {
    /// Assigned rate per path, Kbps, aligned with the input order.
    pub rates: Vec<f64>,
    /// Interval chunk size per path, bytes; sums to the interval payload.
    pub chunk_sizes: Vec<u64>,
    /// Predicted end-to-end distortion at the returned rates, MSE.
    pub objective: f64,
    pub iterations: usize,
    /// Spread (max - min) of the predicted per-path delays, ms.
    pub jitter_spread_ms: f64,
    /// Set when the target exceeds the summed path capacities.
    pub shortfall: bool,
    /// Set when the delay budget prevented assigning the full target.
    pub infeasible: bool,
    /// Objective after each accepted improvement move (nonincreasing).
    pub objective_trace: Vec<f64>,
}

/// Piecewise-linear chord approximation of a univariate objective.
#[derive(Debug, Clone)]
pub struct PwlApprox {
    breakpoints: Vec<f64>,
    slopes: Vec<f64>,
    intercepts: Vec<f64>,
    turning_points: Vec<usize>,
}

impl PwlApprox {
    /// Interpolates `objective` at `m + 1` uniform breakpoints on
    /// `[lo, hi]`. Non-finite objective values truncate the interval below
    /// the pole.
    pub fn build(
        objective: impl Fn(f64) -> f64,
        lo: f64,
        hi: f64,
        m: usize,
    ) -> Result<Self, AllocError> {
        if !(lo < hi) || m < 2 {
            return Err(AllocError::InvalidPwlDomain);
        }
        let mut hi = hi;
        let mut values: Vec<f64>;
        let mut breakpoints: Vec<f64>;
        loop {
            breakpoints = (0..=m)
                .map(|k| lo + (hi - lo) * k as f64 / m as f64)
                .collect();
            values = breakpoints.iter().map(|&x| objective(x)).collect();
            match values.iter().position(|v| !v.is_finite()) {
                None => break,
                Some(0) => return Err(AllocError::UnboundedObjective),
                Some(k) => {
                    hi = breakpoints[k - 1];
                    if !(lo < hi) {
                        return Err(AllocError::UnboundedObjective);
                    }
                }
            }
        }
        let mut slopes = Vec::with_capacity(m);
        let mut intercepts = Vec::with_capacity(m);
        for k in 0..m {
            let (x0, x1) = (breakpoints[k], breakpoints[k + 1]);
            let a = (values[k + 1] - values[k]) / (x1 - x0);
            slopes.push(a);
            intercepts.push(values[k] - a * x0);
        }
        let turning_points = (1..m).filter(|&k| slopes[k - 1] > slopes[k]).collect();
        Ok(Self {
            breakpoints,
            slopes,
            intercepts,
            turning_points,
        })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.breakpoints[0], *self.breakpoints.last().unwrap())
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn intercepts(&self) -> &[f64] {
        &self.intercepts
    }

    /// Indices of interior breakpoints where the slope decreases.
    pub fn turning_points(&self) -> &[usize] {
        &self.turning_points
    }

    fn interval_of(&self, x: f64) -> usize {
        let m = self.slopes.len();
        match self.breakpoints[1..m].partition_point(|&b| b <= x) {
            k if k >= m => m - 1,
            k => k,
        }
    }

    /// Chordwise value at `x` (clamped to the domain).
    pub fn eval(&self, x: f64) -> f64 {
        let (lo, hi) = self.domain();
        let x = x.clamp(lo, hi);
        let k = self.interval_of(x);
        self.slopes[k] * x + self.intercepts[k]
    }

    /// Max-of-lines value over the convex region containing `x`: the
    /// piecewise-convex representation agrees with [`eval`] at breakpoints
    /// and lower-bounds the chords in between.
    pub fn eval_max_of_lines(&self, x: f64) -> f64 {
        let (lo, hi) = self.domain();
        let x = x.clamp(lo, hi);
        let k = self.interval_of(x);
        // Convex region: maximal run of nondecreasing slopes around k.
        let mut first = k;
        while first > 0 && !self.turning_points.contains(&first) {
            first -= 1;
        }
        let mut last = k;
        while last + 1 < self.slopes.len() && !self.turning_points.contains(&(last + 1)) {
            last += 1;
        }
        (first..=last)
            .map(|i| self.slopes[i] * x + self.intercepts[i])
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Rate transition utility: objective change per unit rate over
/// `[r, r + delta_r]`. Lower is better for a distortion objective; the
/// allocator maximizes the negated value.
pub fn transition_utility(pwl: &PwlApprox, r: f64, delta_r: f64) -> Result<f64, AllocError> {
    let (lo, hi) = pwl.domain();
    if !(delta_r > 0.0) || r < lo - 1e-9 || r + delta_r > hi + 1e-9 {
        return Err(AllocError::OutOfDomain);
    }
    Ok((pwl.eval(r + delta_r) - pwl.eval(r)) / delta_r)
}

/// Initial rate split proportional to the available bandwidths, with
/// clipping against per-path capacity when the target exceeds the total.
pub fn initial_allocation(target_rate: f64, mus: &[f64]) -> Result<Vec<f64>, AllocError> {
    if !(target_rate > 0.0) {
        return Err(AllocError::InvalidTarget(target_rate));
    }
    if mus.iter().all(|&m| m <= 0.0) {
        return Err(AllocError::NoUsablePath);
    }
    let mut rates = vec![0.0; mus.len()];
    let mut remaining = target_rate;
    let mut open: Vec<usize> = (0..mus.len()).filter(|&i| mus[i] > 0.0).collect();
    while remaining > 1e-12 && !open.is_empty() {
        let open_mu: f64 = open.iter().map(|&i| mus[i]).sum();
        if remaining >= open_mu {
            for &i in &open {
                rates[i] = mus[i];
            }
            break;
        }
        let mut clipped = Vec::new();
        let mut assigned_now = 0.0;
        for &i in &open {
            let share = remaining * mus[i] / open_mu;
            if rates[i] + share >= mus[i] {
                assigned_now += mus[i] - rates[i];
                rates[i] = mus[i];
                clipped.push(i);
            } else {
                rates[i] += share;
                assigned_now += share;
            }
        }
        remaining -= assigned_now;
        if clipped.is_empty() {
            break;
        }
        open.retain(|i| !clipped.contains(i));
    }
    Ok(rates)
}

/// Per-path load-imbalance indicators; their mean is 1 whenever the system
/// retains positive loss-free residual capacity.
pub fn load_imbalance(
    rates: &[f64],
    mus: &[f64],
    loss_rates: &[f64],
) -> Result<Vec<f64>, AllocError> {
    let n = rates.len();
    assert!(n == mus.len() && n == loss_rates.len());
    let loss_free: Vec<f64> = mus
        .iter()
        .zip(loss_rates)
        .map(|(m, l)| m * (1.0 - l))
        .collect();
    let residual: f64 = loss_free.iter().sum::<f64>() - rates.iter().sum::<f64>();
    let denom = residual / n as f64;
    if denom <= 0.0 {
        return Err(AllocError::Saturated);
    }
    Ok(loss_free
        .iter()
        .zip(rates)
        .map(|(lf, r)| (lf - r) / denom)
        .collect())
}

/// Proportional byte split with largest-remainder rounding; the parts sum
/// to `total_bytes` exactly.
pub fn chunk_sizes(rates: &[f64], total_bytes: u64) -> Result<Vec<u64>, AllocError> {
    let total_rate: f64 = rates.iter().sum();
    if total_rate <= 0.0 {
        return Err(AllocError::ZeroTotalRate);
    }
    let exact: Vec<f64> = rates
        .iter()
        .map(|r| total_bytes as f64 * r / total_rate)
        .collect();
    let mut sizes: Vec<u64> = exact.iter().map(|e| e.floor() as u64).collect();
    let assigned: u64 = sizes.iter().sum();
    let mut order: Vec<usize> = (0..rates.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut leftover = total_bytes - assigned;
    for &i in &order {
        if leftover == 0 {
            break;
        }
        sizes[i] += 1;
        leftover -= 1;
    }
    Ok(sizes)
}

/// Predicted per-path effective loss rates at the given rate split.
pub fn predicted_losses(paths: &[PathSnapshot], rates: &[f64], deadline_ms: f64) -> Vec<f64> {
    paths
        .iter()
        .zip(rates)
        .map(|(p, &r)| {
            if r <= 0.0 {
                return 0.0;
            }
            let overdue = distortion::overdue_probability_parts(
                deadline_ms,
                p.rtt_ms,
                p.mu_kbps,
                r,
                p.nu_obs_kbps,
            );
            effective_loss_rate(p.loss_rate.clamp(0.0, 1.0), overdue)
        })
        .collect()
}

/// Predicted end-to-end distortion of a rate split (MSE).
pub fn predicted_distortion(
    paths: &[PathSnapshot],
    rates: &[f64],
    encoding_rate_kbps: f64,
    deadline_ms: f64,
    params: &DistortionParams,
) -> Result<f64, AllocError> {
    let losses = predicted_losses(paths, rates, deadline_ms);
    Ok(total_distortion(params, encoding_rate_kbps, rates, &losses)?)
}

fn delay_spread_ms(paths: &[PathSnapshot], rates: &[f64], interval_ms: f64) -> f64 {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for (p, &r) in paths.iter().zip(rates) {
        if r <= 0.0 {
            continue;
        }
        let d = expected_delay(r, p.mu_kbps, p.nu_obs_kbps, p.rtt_ms, interval_ms);
        min = min.min(d);
        max = max.max(d);
    }
    if min.is_finite() && max.is_finite() {
        max - min
    } else {
        0.0
    }
}

struct Problem<'a> {
    paths: &'a [PathSnapshot],
    target: f64,
    deadline_ms: f64,
    params: &'a DistortionParams,
    cfg: &'a AllocatorConfig,
    gop_bytes: u64,
}

impl Problem<'_> {
    fn score(&self, rates: &[f64]) -> f64 {
        let d = predicted_distortion(self.paths, rates, self.target, self.deadline_ms, self.params)
            .unwrap_or(f64::INFINITY);
        if self.cfg.jitter_penalty > 0.0 {
            d + self.cfg.jitter_penalty * delay_spread_ms(self.paths, rates, self.cfg.interval_ms)
        } else {
            d
        }
    }

    /// Delay-budget feasibility of carrying rate `r` on path `i` when the
    /// interval payload is split proportionally over `total_rate`.
    fn duration_feasible(&self, i: usize, r: f64, total_rate: f64) -> bool {
        if r <= 0.0 {
            return true;
        }
        let p = &self.paths[i];
        if r > p.mu_kbps + 1e-9 {
            return false;
        }
        let delay = expected_delay(r, p.mu_kbps, p.nu_obs_kbps, p.rtt_ms, self.cfg.interval_ms);
        if !delay.is_finite() {
            return false;
        }
        let share = if total_rate > 0.0 { r / total_rate } else { 0.0 };
        let chunk = (self.gop_bytes as f64 * share).round() as u64;
        let n_p = packets_per_chunk(chunk, self.cfg.mtu_bytes).max(1);
        delay + (n_p - 1) as f64 * self.cfg.omega_ms <= self.deadline_ms
    }

    /// Evaluates moving `q` Kbps from `donor` to `recipient`; returns the
    /// resulting score when the move respects capacity and delay budget.
    fn try_transfer(&self, rates: &[f64], donor: usize, recipient: usize, q: f64) -> Option<f64> {
        if donor == recipient || rates[donor] + 1e-12 < q {
            return None;
        }
        let p = &self.paths[recipient];
        let new_r = rates[recipient] + q;
        if new_r > p.mu_kbps + 1e-9 {
            return None;
        }
        let total: f64 = rates.iter().sum();
        if !self.duration_feasible(recipient, new_r, total) {
            return None;
        }
        let mut next = rates.to_vec();
        next[donor] -= q;
        next[recipient] = new_r;
        Some(self.score(&next))
    }
}

/// One full allocation round; see the module header for the move rules.
pub fn allocate(
    paths: &[PathSnapshot],
    target_rate: f64,
    deadline_ms: f64,
    _loss_requirement: f64,
    params: &DistortionParams,
    cfg: &AllocatorConfig,
) -> Result<Allocation, AllocError> {
    if paths.is_empty() {
        return Err(AllocError::NoUsablePath);
    }
    if !(target_rate > 0.0) {
        return Err(AllocError::InvalidTarget(target_rate));
    }
    params.validate()?;
    if target_rate <= params.r0 {
        return Err(AllocError::Model(format!(
            "encoding rate {target_rate} below model offset {}",
            params.r0
        )));
    }
    let mus: Vec<f64> = paths.iter().map(|p| p.mu_kbps.max(0.0)).collect();
    let losses_in: Vec<f64> = paths.iter().map(|p| p.loss_rate.clamp(0.0, 1.0)).collect();
    let cap: f64 = mus.iter().sum();
    if cap <= 0.0 {
        return Err(AllocError::NoUsablePath);
    }
    let shortfall = target_rate > cap;
    let assigned_target = target_rate.min(cap);
    let step = if cfg.delta_r > 0.0 {
        cfg.delta_r
    } else {
        target_rate / 100.0
    };
    let gop_bytes = (target_rate * cfg.interval_ms / 8.0).round() as u64;
    let problem = Problem {
        paths,
        target: target_rate,
        deadline_ms,
        params,
        cfg,
        gop_bytes,
    };

    let mut rates = initial_allocation(assigned_target, &mus)?;
    let mut iterations = 0usize;
    let mut infeasible = false;

    // Strip rate that cannot meet the delay budget back into a pool. Each
    // strip lowers the total, which raises the remaining paths' payload
    // shares, so iterate to a fixpoint.
    let mut pool = 0.0;
    loop {
        let total: f64 = rates.iter().sum();
        let mut changed = false;
        for i in 0..rates.len() {
            while rates[i] > 0.0 && !problem.duration_feasible(i, rates[i], total) {
                let cut = step.min(rates[i]);
                rates[i] -= cut;
                pool += cut;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    // Drain the pool onto the least-harmful feasible recipients.
    while pool > 1e-9 {
        iterations += 1;
        if iterations >= cfg.max_iterations {
            infeasible = pool > 1e-9;
            break;
        }
        let q = step.min(pool);
        let total: f64 = rates.iter().sum();
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in paths.iter().enumerate() {
            let new_r = rates[i] + q;
            if new_r > p.mu_kbps + 1e-9 {
                continue;
            }
            if !problem.duration_feasible(i, new_r, total + q) {
                continue;
            }
            let mut next = rates.clone();
            next[i] = new_r;
            let s = problem.score(&next);
            if best.map_or(true, |(_, bs)| s < bs) {
                best = Some((i, s));
            }
        }
        match best {
            Some((i, _)) => {
                rates[i] += q;
                pool -= q;
            }
            None => {
                infeasible = true;
                break;
            }
        }
    }

    // Improvement iterations: greedy quantum transfers between paths.
    let mut objective_trace = vec![problem.score(&rates)];
    let mut pwls: Vec<Option<PwlApprox>> = paths
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if p.mu_kbps <= 0.0 {
                return None;
            }
            let snapshot = *p;
            let deadline = deadline_ms;
            PwlApprox::build(
                move |r| {
                    let loss = if r <= 0.0 {
                        0.0
                    } else {
                        effective_loss_rate(
                            snapshot.loss_rate.clamp(0.0, 1.0),
                            distortion::overdue_probability_parts(
                                deadline,
                                snapshot.rtt_ms,
                                snapshot.mu_kbps,
                                r,
                                snapshot.nu_obs_kbps,
                            ),
                        )
                    };
                    r * loss
                },
                0.0,
                mus[i],
                cfg.breakpoint_count,
            )
            .ok()
        })
        .collect();
    // Unused beyond construction on zero-capacity paths.
    let _ = &mut pwls;

    for quantum in [step, step / 10.0] {
        loop {
            if iterations >= cfg.max_iterations {
                break;
            }
            iterations += 1;
            let current = problem.score(&rates);

            // Recipient choice by transition utility on the approximations:
            // the path whose next quantum reduces its contribution most (or
            // grows it least).
            let mut pick: Option<(usize, f64)> = None;
            for (i, p) in paths.iter().enumerate() {
                if rates[i] + quantum > p.mu_kbps + 1e-9 {
                    continue;
                }
                let Some(pwl) = &pwls[i] else { continue };
                let Ok(u) = transition_utility(pwl, rates[i], quantum) else {
                    continue;
                };
                if pick.map_or(true, |(_, bu)| u < bu) {
                    pick = Some((i, u));
                }
            }
            let Some((preferred, _)) = pick else { break };

            let balanced = match load_imbalance(&rates, &mus, &losses_in) {
                Ok(l) => l[preferred] <= cfg.tlv,
                Err(AllocError::Saturated) => break,
                Err(e) => return Err(e),
            };

            // Donor search; when the preferred recipient is anomalously
            // underloaded, rebalance over every ordered pair instead.
            let mut best: Option<(usize, usize, f64)> = None;
            let consider = |d: usize, r: usize, best: &mut Option<(usize, usize, f64)>| {
                if let Some(s) = problem.try_transfer(&rates, d, r, quantum) {
                    if best.map_or(true, |(_, _, bs)| s < bs) {
                        *best = Some((d, r, s));
                    }
                }
            };
            if balanced {
                for d in 0..paths.len() {
                    consider(d, preferred, &mut best);
                }
            }
            if best.map_or(true, |(_, _, s)| s >= current - cfg.epsilon) {
                best = None;
                for r in 0..paths.len() {
                    for d in 0..paths.len() {
                        consider(d, r, &mut best);
                    }
                }
            }
            match best {
                Some((d, r, s)) if s < current - cfg.epsilon => {
                    rates[d] -= quantum;
                    rates[r] += quantum;
                    objective_trace.push(s);
                }
                _ => break,
            }
        }
    }

    let objective =
        predicted_distortion(paths, &rates, target_rate, deadline_ms, params).unwrap_or(f64::NAN);
    let sizes = chunk_sizes(&rates, gop_bytes).unwrap_or_else(|_| vec![0; rates.len()]);
    Ok(Allocation {
        jitter_spread_ms: delay_spread_ms(paths, &rates, cfg.interval_ms),
        rates,
        chunk_sizes: sizes,
        objective,
        iterations,
        shortfall,
        infeasible,
        objective_trace,
    })
}

/// Exhaustive search over the rate grid; the optimality oracle for
/// [`allocate`] at small path counts.
pub mod oracle {
    use super::*;

    /// Enumerates every split of the assignable rate into quantum steps
    /// over 2 or 3 paths, honoring capacity and delay-budget feasibility,
    /// and returns the best (rates, objective).
    pub fn grid_search(
        paths: &[PathSnapshot],
        target_rate: f64,
        deadline_ms: f64,
        params: &DistortionParams,
        cfg: &AllocatorConfig,
    ) -> Option<(Vec<f64>, f64)> {
        assert!(
            (2..=3).contains(&paths.len()),
            "oracle supports 2 or 3 paths"
        );
        let mus: Vec<f64> = paths.iter().map(|p| p.mu_kbps.max(0.0)).collect();
        let cap: f64 = mus.iter().sum();
        let assigned = target_rate.min(cap);
        let step = if cfg.delta_r > 0.0 {
            cfg.delta_r
        } else {
            target_rate / 100.0
        };
        let gop_bytes = (target_rate * cfg.interval_ms / 8.0).round() as u64;
        let problem = Problem {
            paths,
            target: target_rate,
            deadline_ms,
            params,
            cfg,
            gop_bytes,
        };
        let points = |limit: f64| -> Vec<f64> {
            let n = (limit / step).floor() as usize;
            let mut v: Vec<f64> = (0..=n).map(|k| k as f64 * step).collect();
            if v.last().is_none_or(|&x| x < limit - 1e-9) {
                v.push(limit);
            }
            v
        };
        let mut best: Option<(Vec<f64>, f64)> = None;
        let mut visit = |rates: &[f64]| {
            let total: f64 = rates.iter().sum();
            if (total - assigned).abs() > 1e-6 {
                return;
            }
            for (i, &r) in rates.iter().enumerate() {
                if r > mus[i] + 1e-9 || !problem.duration_feasible(i, r, total) {
                    return;
                }
            }
            let score = problem.score(rates);
            if best.as_ref().is_none_or(|(_, b)| score < *b) {
                best = Some((rates.to_vec(), score));
            }
        };
        if paths.len() == 2 {
            for r0 in points(mus[0].min(assigned)) {
                let r1 = assigned - r0;
                if r1 < -1e-9 {
                    continue;
                }
                visit(&[r0, r1.max(0.0)]);
            }
        } else {
            for r0 in points(mus[0].min(assigned)) {
                for r1 in points(mus[1].min(assigned - r0)) {
                    let r2 = assigned - r0 - r1;
                    if r2 < -1e-9 {
                        continue;
                    }
                    visit(&[r0, r1, r2.max(0.0)]);
                }
            }
        }
        best
    }

    /// Largest objective change reachable by a single quantum transfer from
    /// `rates`; the tolerance unit for optimality comparisons.
    pub fn one_step_span(
        paths: &[PathSnapshot],
        rates: &[f64],
        target_rate: f64,
        deadline_ms: f64,
        params: &DistortionParams,
        cfg: &AllocatorConfig,
    ) -> f64 {
        let step = if cfg.delta_r > 0.0 {
            cfg.delta_r
        } else {
            target_rate / 100.0
        };
        let gop_bytes = (target_rate * cfg.interval_ms / 8.0).round() as u64;
        let problem = Problem {
            paths,
            target: target_rate,
            deadline_ms,
            params,
            cfg,
            gop_bytes,
        };
        let current = problem.score(rates);
        let mut span: f64 = 0.0;
        for d in 0..paths.len() {
            for r in 0..paths.len() {
                if let Some(s) = problem.try_transfer(rates, d, r, step) {
                    span = span.max((s - current).abs());
                }
            }
        }
        span
    }
}
