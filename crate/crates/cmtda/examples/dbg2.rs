use cmtda::channel::{GilbertParams, PathSpec, StepTrace};
use cmtda::distortion::DistortionParams;
use cmtda::simulator::{run, BackgroundSpec, Scenario, SchedulerScheme, VideoConfig};

fn simple_path(id: usize, capacity: f64, rtt: f64, loss: f64, burst: f64) -> PathSpec {
    PathSpec {
        id,
        capacity_trace: StepTrace::constant(capacity),
        base_rtt_ms: rtt,
        gilbert: GilbertParams::from_stats(loss, burst).unwrap(),
        availability: vec![(0.0, f64::INFINITY)],
    }
}

fn main() {
    let sc = Scenario {
        paths: vec![
            simple_path(0, 300.0, 150.0, 0.02, 10.0),
            simple_path(1, 1200.0, 80.0, 0.04, 15.0),
            simple_path(2, 500.0, 50.0, 0.06, 20.0),
        ],
        video: VideoConfig {
            rate_trace: StepTrace::constant(1400.0),
            distortion: DistortionParams { d0: 0.8, alpha: 1200.0, r0: 60.0, beta: 90.0 },
            sequence: "foreman".into(),
        },
        deadline_ms: 250.0,
        loss_requirement: 0.01,
        interval_ms: 250.0,
        omega_ms: 5.0,
        tlv: 1.2,
        background: BackgroundSpec { frac_min: 0.0, frac_max: 0.0, resample_ms: 500.0 },
        duration_ms: 30_000.0,
        seed: 1,
        receiver_buffer_bytes: 64 * 1024,
        send_buffer_bytes: 128 * 1024,
        mtu_bytes: 1500,
    };
    let r = run(&sc, SchedulerScheme::CmtDa).unwrap();
    println!("eff_loss={:.3} goodput={:.0} abandoned={}", r.effective_loss, r.goodput_kbps, r.conservation.abandoned_bytes);
    println!("t     | mu0   mu1   mu2  | rtt0 rtt1 rtt2 | l0    l1    l2    | shares            | goploss");
    for k in (0..r.mu_estimates.len()).step_by(4) {
        let (t, mu) = &r.mu_estimates[k];
        let (_, rtt) = &r.rtt_estimates[k];
        let (_, lo) = &r.loss_estimates[k];
        let (_, sh) = &r.rate_shares[k];
        let gl = r.gop_effective_loss.get(k).map(|x| x.1).unwrap_or(-1.0);
        println!("{:5.0} | {:5.0} {:5.0} {:5.0} | {:4.0} {:4.0} {:4.0} | {:.3} {:.3} {:.3} | {:4.0} {:4.0} {:4.0} | {:.2}",
            t, mu[0], mu[1], mu[2], rtt[0], rtt[1], rtt[2], lo[0], lo[1], lo[2], sh[0], sh[1], sh[2], gl);
    }
}
