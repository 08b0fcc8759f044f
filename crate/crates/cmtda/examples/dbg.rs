use cmtda::channel::{GilbertParams, PathSpec, StepTrace};
use cmtda::distortion::DistortionParams;
use cmtda::metrics;
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

fn table2() -> Scenario {
    Scenario {
        paths: vec![
            simple_path(0, 300.0, 150.0, 0.02, 10.0),
            simple_path(1, 1200.0, 80.0, 0.04, 15.0),
            simple_path(2, 500.0, 50.0, 0.06, 20.0),
        ],
        video: VideoConfig {
            rate_trace: StepTrace::constant(1400.0),
            distortion: DistortionParams {
                d0: 0.8,
                alpha: 1200.0,
                r0: 60.0,
                beta: 90.0,
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
            frac_max: 0.10,
            resample_ms: 500.0,
        },
        duration_ms: 60_000.0,
        seed: 1,
        receiver_buffer_bytes: 64 * 1024,
        send_buffer_bytes: 128 * 1024,
        mtu_bytes: 1500,
    }
}

fn main() {
    detail();
    let seeds: Vec<u64> = (1..=20).collect();
    for scheme in SchedulerScheme::ALL {
        let mut psnr = Vec::new();
        let mut loss = Vec::new();
        let mut ipd = Vec::new();
        let mut goodput = Vec::new();
        let mut rtx = Vec::new();
        let t0 = std::time::Instant::now();
        for &seed in &seeds {
            let mut sc = table2();
            sc.seed = seed;
            let r = run(&sc, scheme).unwrap();
            psnr.push(r.psnr_mean_db);
            loss.push(r.effective_loss);
            ipd.push(r.mean_inter_packet_delay_ms);
            goodput.push(r.goodput_kbps);
            rtx.push(r.retransmissions_total as f64);
        }
        let (pm, pc) = metrics::mean_ci95(&psnr);
        let (lm, lc) = metrics::mean_ci95(&loss);
        let (im, ic) = metrics::mean_ci95(&ipd);
        let (gm, _) = metrics::mean_ci95(&goodput);
        let (rm, _) = metrics::mean_ci95(&rtx);
        println!(
            "{:7}  psnr {:5.2} ± {:4.2} dB   loss {:.4} ± {:.4}   ipd {:6.2} ± {:5.2} ms   goodput {:7.1} Kbps  rtx {:6.1}   ({:.1?} for 20 runs)",
            scheme.name(), pm, pc, lm, lc, im, ic, gm, rm, t0.elapsed()
        );
    }
}

#[allow(dead_code)]
fn detail() {
    let sc = table2();
    let (r, trace) = cmtda::simulator::run_with_trace(&sc, SchedulerScheme::CmtDa, true).unwrap();
    let trace = trace.unwrap();
    println!("cons: {:?}", r.conservation);
    println!("per-gop loss (first 12): {:?}", r.gop_effective_loss.iter().take(12).map(|(_, l)| (l*1000.0).round()/1000.0).collect::<Vec<_>>());
    println!("rate shares (first 6): {:?}", r.rate_shares.iter().take(6).collect::<Vec<_>>());
    println!("blocked={} dup={}", r.blocked_buffer_drops, r.duplicates);
    for rec in trace.records.iter().take(40) {
        println!("{:8.2} {:10} path={} tsn={} bytes={}", rec.t_ms, rec.kind.as_str(), rec.path, rec.tsn, rec.bytes);
    }
    println!("...deliver events among first 600:");
    for rec in trace.records.iter().take(600).filter(|r| r.kind == cmtda::metrics::EventKind::Deliver).take(12) {
        println!("{:8.2} deliver tsn={} gop={}", rec.t_ms, rec.tsn, rec.gop_id);
    }
}
