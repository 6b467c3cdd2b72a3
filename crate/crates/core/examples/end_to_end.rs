//! Runs one seeded experiment with the reference impairment set and prints
//! the training diagnostics and reconstruction metrics.
//!
//! Arguments are `key=value` pairs: `osnr`, `enob`, `order` (4/16/32),
//! `pilot` (ratio), `seed`, `mode` (`aware` or `conventional`), `iters`,
//! `loops` (training refinement loops), `mix` (cross-mixing weight), `reset` (phase-reset threshold).

use prx_core::channel::ChannelModel;
use prx_core::pipeline::{self, ExperimentConfig};
use prx_core::tx::{PilotRatio, QamOrder};

fn main() -> prx_core::Result<()> {
    let mut osnr = 35.0;
    let mut enob = 8.0;
    let mut seed = 1;
    let mut cfg = ExperimentConfig::default();
    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').expect("key=value");
        match k {
            "osnr" => osnr = v.parse().unwrap(),
            "enob" => enob = v.parse().unwrap(),
            "seed" => seed = v.parse().unwrap(),
            "order" => cfg.frame.order = QamOrder::from_order(v.parse().unwrap())?,
            "pilot" => cfg.frame.pilot_ratio = PilotRatio::from_f64(v.parse().unwrap())?,
            "mode" => cfg.pr.distortion_aware = v != "conventional",
            "iters" => cfg.pr.max_iters = v.parse().unwrap(),
            "loops" => cfg.training.refinement_loops = v.parse().unwrap(),
            "mix" => cfg.pr.mixing_weight = v.parse().unwrap(),
            "reset" => {
                cfg.pr.phase_reset_enabled = true;
                cfg.pr.phase_reset_threshold = v.parse().unwrap();
            }
            _ => panic!("unknown key {k}"),
        }
    }
    cfg.channel = ChannelModel::reference_impairments(osnr, enob, cfg.frame.sample_rate());
    let t = std::time::Instant::now();
    let out = pipeline::run_experiment(&cfg, seed)?;
    if let Some(d) = &out.estimate.diagnostics {
        println!("baseline snr {:.2} dB, emulated {:.2} dB", d.baseline_snr_db, d.emulated_snr_db);
        for w in &d.warnings {
            println!("warning: {w}");
        }
    }
    if let Some(b) = &out.result.per_iteration_ber {
        let tail: Vec<String> = b.iter().step_by(5).map(|x| format!("{x:.2e}")).collect();
        println!("ber every 5 iterations: {}", tail.join(" "));
    }
    let m = &out.metrics;
    println!(
        "ber {:.3e} gmi {:.3} evm {:.3} iters {} converged {} net {:.1} Gb/s ({:?})",
        m.pre_fec_ber,
        m.gmi_bits_per_symbol,
        m.evm_rms,
        m.iterations_used,
        m.converged,
        m.net_rate.bps / 1e9,
        m.net_rate.code_rate
    );
    println!("elapsed {:.1} s", t.elapsed().as_secs_f64());
    Ok(())
}
