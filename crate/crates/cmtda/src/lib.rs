//! Distortion-aware concurrent multipath transfer (CMT-DA) toolkit.
//!
//! The crate bundles everything needed to study deadline-constrained video
//! delivery over several lossy, heterogeneous paths at once:
//!
//! * [`channel`] — two-state burst-loss channel model and live per-path
//!   statistics (bandwidth, RTT, loss estimation).
//! * [`distortion`] — analytical loss/delay/distortion formulas mapping a
//!   rate split onto an end-to-end video quality prediction.
//! * [`allocator`] — the utility-maximization flow rate allocator with
//!   piecewise-linear objective approximation and load-imbalance control.
//! * [`transport`] — SCTP-like sender/receiver state machines: per-path
//!   congestion control, SACK processing, reorder buffer, retransmission
//!   policies.
//! * [`simulator`] — a discrete-event engine binding the above, with the
//!   CMT-DA scheduler and three reference schemes (CMT-QA, CMT-PF, CMT).
//! * [`metrics`] — goodput, inter-packet delay, effective loss, reordering
//!   and model-PSNR reports computed from transport event traces.
//! * [`scenario`] — the structured-text scenario format consumed by the CLI
//!   and the batch driver.

pub mod allocator;
pub mod channel;
pub mod distortion;
pub mod metrics;
pub mod scenario;
pub mod simulator;
pub mod transport;

pub use channel::{GilbertParams, LinkState, PathSpec, PathStats, PathStatus};
pub use distortion::DistortionParams;
pub use simulator::{MetricsReport, Scenario, SchedulerScheme};
