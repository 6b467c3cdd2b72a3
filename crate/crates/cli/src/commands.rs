//! Subcommand implementations.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use prx_core::eval::{self, SweepRecord, SweepSpec};
use prx_core::field::IntensityTrace;
use prx_core::io;
use prx_core::pipeline::{self, ExperimentConfig};
use prx_core::reconstruct::ReconstructionResult;
use prx_core::trainer::ChannelEstimate;
use prx_core::C64;
use serde::{Deserialize, Serialize};

use crate::config;
use crate::rundir::{self, RunDir};
use crate::table::{self, opt, strings};

pub const TX_WAVEFORM: &str = "tx_waveform.bin";
pub const TRACES: [&str; 2] = ["trace_b1.bin", "trace_b2.bin"];
pub const CHANNEL: &str = "channel.json";
pub const CONFIG: &str = "config.toml";
pub const ESTIMATE: &str = "estimate.json";
pub const RESULTS: &str = "results.json";
pub const SWEEP_PROGRESS: &str = "sweep_progress.jsonl";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_SUMMARY: &str = "sweep_summary.csv";

/// Bins of the Tx response spectrum written for plotting.
const SPECTRUM_POINTS: usize = 512;

fn json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s.into_bytes())
}

pub fn simulate(cfg: &ExperimentConfig, root: &Path, seeds: &[u64]) -> Result<()> {
    let hash = pipeline::config_hash(cfg);
    for &seed in seeds {
        let sim = pipeline::simulate(cfg, seed).with_context(|| format!("simulating seed {seed}"))?;
        let mut dir = RunDir::create(root, seed, &hash)?;
        dir.write(CONFIG, config::to_toml(&cfg.run_config())?.as_bytes())?;
        dir.write(CHANNEL, &json(&cfg.channel)?)?;
        dir.write(TX_WAVEFORM, &io::encode_waveform(&sim.tx_waveform))?;
        for (name, t) in TRACES.iter().zip(&sim.traces) {
            dir.write(name, &io::encode_trace(t))?;
        }
        println!(
            "seed {seed}: wrote {} samples per trace at {:.1} GS/s to {}",
            sim.traces[0].len(),
            sim.traces[0].sample_rate_hz / 1e9,
            dir.path.display()
        );
    }
    Ok(())
}

fn load_traces(dir: &RunDir) -> Result<[IntensityTrace; 2]> {
    let a = io::decode_trace(&dir.read(TRACES[0])?)?;
    let b = io::decode_trace(&dir.read(TRACES[1])?)?;
    Ok([a, b])
}

pub fn train(cfg: &ExperimentConfig, root: &Path, seeds: &[u64]) -> Result<()> {
    let hash = pipeline::config_hash(cfg);
    for &seed in seeds {
        let mut dir = RunDir::open(root, seed, &hash)?;
        let traces = load_traces(&dir)?;
        let est = pipeline::train(cfg, &traces, seed).with_context(|| format!("training seed {seed}"))?;
        dir.write(ESTIMATE, &json(&est)?)?;
        let report = training_report(cfg, &est);
        dir.write("training_report.txt", report.as_bytes())?;
        for (name, bytes) in training_tables(cfg, &est)? {
            dir.write(&name, &bytes)?;
        }
        print!("seed {seed}:\n{report}");
    }
    Ok(())
}

fn training_report(cfg: &ExperimentConfig, est: &ChannelEstimate) -> String {
    let fs = cfg.frame.sample_rate();
    let truth = &cfg.channel;
    let mut s = String::new();
    let _ = writeln!(s, "Training report");
    if let Some(d) = &est.diagnostics {
        for (b, c) in d.cd.iter().enumerate() {
            let _ = writeln!(
                s,
                "  branch {}: dispersion {:.0} ps/nm, lag {}, peak {:.4}, runner-up {}, floor {:.2e}{}",
                b + 1,
                c.dispersion.dispersion_ps_per_nm,
                c.lag,
                c.peak,
                c.runner_up.map_or("-".into(), |v| format!("{v:.4}")),
                c.noise_floor,
                if c.ambiguous { " (ambiguous)" } else { "" }
            );
        }
        for l in &d.loops {
            let _ = writeln!(
                s,
                "  loop {}: objective {:.4e}, intensity SNR {:.2} dB, FFE MAE {:.3e}->{:.3e} / {:.3e}->{:.3e}",
                l.loop_index,
                l.objective,
                l.intensity_snr_db,
                l.ffe[0].mae_before,
                l.ffe[0].mae_after,
                l.ffe[1].mae_before,
                l.ffe[1].mae_after
            );
            if let Some(t) = &l.tx {
                let _ = writeln!(
                    s,
                    "    tx response: {} iterations, MAE {:.3e} -> {:.3e}",
                    t.iterations,
                    t.mae_history[0],
                    t.mae_history.last().copied().unwrap_or(f64::NAN)
                );
            }
        }
        let _ = writeln!(
            s,
            "  training intensity SNR: {:.2} dB without distortion, {:.2} dB with estimated distortion",
            d.baseline_snr_db, d.emulated_snr_db
        );
        for w in &d.warnings {
            let _ = writeln!(s, "  warning: {w}");
        }
    }
    let _ = writeln!(s, "  parameter      estimate    configured");
    let rows = [
        ("phi (rad)", est.iq.phi, truth.iq.phi),
        ("tau (samples)", est.iq.tau_s * fs, truth.iq.tau_s * fs),
        ("rho", est.iq.rho, truth.iq.rho),
        ("c2_i", est.nl.c2_i, truth.nl.c2_i),
        ("c2_q", est.nl.c2_q, truth.nl.c2_q),
        ("c3_i", est.nl.c3_i, truth.nl.c3_i),
        ("c3_q", est.nl.c3_q, truth.nl.c3_q),
    ];
    for (name, e, t) in rows {
        let _ = writeln!(s, "  {name:<14} {e:>9.4}   {t:>9.4}");
    }
    let _ = writeln!(
        s,
        "  dc offsets (normalized trace units): {:.4e}, {:.4e}",
        est.dc_offset[0], est.dc_offset[1]
    );
    let c = est.tx_response_i.taps[est.tx_response_i.center()];
    let _ = writeln!(
        s,
        "  tx response: {} taps, centre tap {:.4}{:+.4}j",
        est.tx_response_i.taps.len(),
        c.re,
        c.im
    );
    s
}

fn training_tables(cfg: &ExperimentConfig, est: &ChannelEstimate) -> Result<Vec<(String, Vec<u8>)>> {
    let Some(d) = &est.diagnostics else {
        return Ok(Vec::new());
    };
    let fs = cfg.frame.sample_rate();
    let mut loops = Vec::new();
    let mut taps = Vec::new();
    let mut spectrum = Vec::new();
    let mut mae = Vec::new();
    let mut grid = Vec::new();
    for l in &d.loops {
        let li = l.loop_index.to_string();
        let (iq, nl) = l
            .iq_nl
            .as_ref()
            .map(|r| (r.iq, r.nl))
            .unwrap_or((est.iq, est.nl));
        loops.push(vec![
            li.clone(),
            l.objective.to_string(),
            l.intensity_snr_db.to_string(),
            l.ffe[0].mae_before.to_string(),
            l.ffe[0].mae_after.to_string(),
            l.ffe[1].mae_before.to_string(),
            l.ffe[1].mae_after.to_string(),
            l.tx.as_ref().map_or(String::new(), |t| t.iterations.to_string()),
            iq.phi.to_string(),
            (iq.tau_s * fs).to_string(),
            iq.rho.to_string(),
            nl.c2_i.to_string(),
            nl.c2_q.to_string(),
            nl.c3_i.to_string(),
            nl.c3_q.to_string(),
        ]);
        if let Some(t) = &l.tx {
            let k = t.response.taps.len() as isize;
            for (i, v) in t.response.taps.iter().enumerate() {
                taps.push(vec![li.clone(), (i as isize - k / 2).to_string(), v.re.to_string(), v.im.to_string()]);
            }
            let h = t.response.spectrum(SPECTRUM_POINTS);
            let freqs = prx_core::spectral::fft_freqs(SPECTRUM_POINTS, fs);
            let mut order: Vec<usize> = (0..SPECTRUM_POINTS).collect();
            order.sort_by(|&a, &b| freqs[a].total_cmp(&freqs[b]));
            for i in order {
                spectrum.push(vec![
                    li.clone(),
                    freqs[i].to_string(),
                    (20.0 * h[i].norm().max(1e-300).log10()).to_string(),
                    h[i].arg().to_string(),
                ]);
            }
            for (i, m) in t.mae_history.iter().enumerate() {
                mae.push(vec![li.clone(), i.to_string(), m.to_string()]);
            }
        }
        if let Some(r) = &l.iq_nl {
            for st in &r.steps {
                grid.push(vec![
                    li.clone(),
                    st.round.to_string(),
                    st.parameter.clone(),
                    st.value.to_string(),
                    st.objective.to_string(),
                ]);
            }
        }
    }
    Ok(vec![
        (
            "training_loops.csv".into(),
            table::render(
                &strings([
                    "loop", "objective", "intensity_snr_db", "ffe1_mae_before", "ffe1_mae_after",
                    "ffe2_mae_before", "ffe2_mae_after", "tx_iterations", "phi", "tau_samples", "rho",
                    "c2_i", "c2_q", "c3_i", "c3_q",
                ]),
                &loops,
            )?,
        ),
        ("tx_response_taps.csv".into(), table::render(&strings(["loop", "tap", "re", "im"]), &taps)?),
        (
            "tx_response_spectrum.csv".into(),
            table::render(&strings(["loop", "freq_hz", "magnitude_db", "phase_rad"]), &spectrum)?,
        ),
        ("tx_estimator_mae.csv".into(), table::render(&strings(["loop", "iteration", "mae"]), &mae)?),
        (
            "grid_search.csv".into(),
            table::render(&strings(["loop", "round", "parameter", "value", "objective"]), &grid)?,
        ),
    ])
}

/// Contents of `results.json`.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunResults {
    pub config_hash: String,
    pub seed: u64,
    pub metrics: pipeline::RunMetrics,
    pub per_iteration_amp_error: Vec<f64>,
    pub per_iteration_ber: Option<Vec<f64>>,
}

pub fn reconstruct(cfg: &ExperimentConfig, root: &Path, seeds: &[u64]) -> Result<()> {
    let hash = pipeline::config_hash(cfg);
    for &seed in seeds {
        let mut dir = RunDir::open(root, seed, &hash)?;
        let traces = load_traces(&dir)?;
        let est: ChannelEstimate = serde_json::from_slice(&dir.read(ESTIMATE).context("run `train` first")?)?;
        let (result, metrics) =
            pipeline::reconstruct(cfg, &traces, &est, seed).with_context(|| format!("reconstructing seed {seed}"))?;
        let layout = pipeline::receiver_layout(cfg, seed)?;
        dir.write("constellation.csv", &constellation_csv(&result, &layout.data_symbols())?)?;
        dir.write("iterations.csv", &iterations_csv(&result)?)?;
        let out = RunResults {
            config_hash: hash.clone(),
            seed,
            metrics: metrics.clone(),
            per_iteration_amp_error: result.per_iteration_amp_error,
            per_iteration_ber: result.per_iteration_ber,
        };
        dir.write(RESULTS, &json(&out)?)?;
        println!(
            "seed {seed}: BER {:.3e} ({} / {} bits), GMI {:.3} b/sym, EVM {:.3}, {} iterations{}, net rate {:.1} Gb/s",
            metrics.pre_fec_ber,
            metrics.bit_errors,
            metrics.bits,
            metrics.gmi_bits_per_symbol,
            metrics.evm_rms,
            metrics.iterations_used,
            if metrics.converged { " (converged)" } else { "" },
            metrics.net_rate.bps / 1e9
        );
    }
    Ok(())
}

fn constellation_csv(result: &ReconstructionResult, truth: &[C64]) -> Result<Vec<u8>> {
    let rows: Vec<Vec<String>> = result
        .recovered_symbols
        .iter()
        .zip(truth)
        .enumerate()
        .map(|(i, (r, t))| vec![i.to_string(), r.re.to_string(), r.im.to_string(), t.re.to_string(), t.im.to_string()])
        .collect();
    table::render(&strings(["index", "re", "im", "sent_re", "sent_im"]), &rows)
}

fn iterations_csv(result: &ReconstructionResult) -> Result<Vec<u8>> {
    let rows: Vec<Vec<String>> = result
        .diagnostics
        .iter()
        .map(|d| {
            vec![
                d.iteration.to_string(),
                d.amp_error_a.to_string(),
                d.amp_error_b.to_string(),
                (0.5 * (d.amp_error_a + d.amp_error_b)).to_string(),
                d.resets_triggered.to_string(),
                opt(d.ber),
            ]
        })
        .collect();
    table::render(
        &strings(["iteration", "amp_error_a", "amp_error_b", "amp_error_mean", "phase_resets", "ber"]),
        &rows,
    )
}

fn load_progress(path: &Path) -> Result<Vec<SweepRecord>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    // A trailing partial line from an interrupted write is dropped.
    Ok(text
        .lines()
        .filter_map(|l| serde_json::from_str::<SweepRecord>(l).ok())
        .collect())
}

pub fn sweep(cfg: &ExperimentConfig, root: &Path, seeds: &[u64], resume: bool) -> Result<()> {
    let Some(spec) = cfg.sweep.clone() else {
        bail!("the configuration has no [sweep] section");
    };
    std::fs::create_dir_all(root)?;
    let progress_path = root.join(SWEEP_PROGRESS);
    let hashes: Vec<String> = spec
        .points
        .iter()
        .map(|&v| eval::point_config(cfg, spec.axis, v).map(|c| pipeline::config_hash(&c)))
        .collect::<prx_core::Result<_>>()?;
    let seed_set: HashSet<u64> = seeds.iter().copied().collect();
    let mut kept: Vec<SweepRecord> = Vec::new();
    if resume {
        for mut r in load_progress(&progress_path)? {
            if let Some(p) = hashes.iter().position(|h| *h == r.config_hash) {
                if !r.failed() && seed_set.contains(&r.seed) {
                    r.point = p;
                    r.value = spec.points[p];
                    kept.push(r);
                }
            }
        }
        // Keep the last record of each (point, seed).
        kept.reverse();
        let mut seen = HashSet::new();
        kept.retain(|r| seen.insert((r.point, r.seed)));
        kept.reverse();
    }
    let done: HashSet<(String, u64)> = kept.iter().map(|r| (r.config_hash.clone(), r.seed)).collect();
    {
        let mut f = std::fs::File::create(&progress_path)?;
        for r in &kept {
            writeln!(f, "{}", serde_json::to_string(r)?)?;
        }
    }
    let file = Mutex::new(std::fs::OpenOptions::new().append(true).open(&progress_path)?);
    println!(
        "sweep over {} ({} points x {} seeds): {} already complete",
        spec.axis.name(),
        spec.points.len(),
        seeds.len(),
        done.len()
    );
    let new = eval::run_sweep_with(
        cfg,
        &spec,
        seeds,
        &|h, s| done.contains(&(h.to_string(), s)),
        &|r| {
            let line = serde_json::to_string(r).expect("record serializes");
            let mut f = file.lock().expect("progress file lock");
            let _ = writeln!(f, "{line}");
            let _ = f.flush();
            println!(
                "  {} = {} seed {}: {}",
                spec.axis.name(),
                r.value,
                r.seed,
                match &r.error {
                    Some(e) => format!("failed: {e}"),
                    None => format!("BER {:.3e}, {} iterations", r.pre_fec_ber, r.iterations_used),
                }
            );
        },
    )?;
    let mut records = kept;
    records.extend(new);
    records.sort_by_key(|r| (r.point, r.seed));
    std::fs::write(root.join(SWEEP_CSV), sweep_csv(cfg, &spec, &records)?)?;
    let points = eval::summarize(cfg, &spec, &records)?;
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            vec![
                p.value.to_string(),
                p.mean_ber.to_string(),
                p.mean_gmi.to_string(),
                p.mean_iterations.to_string(),
                opt(p.code_rate),
                (p.net_rate_bps / 1e9).to_string(),
                p.failures.to_string(),
                p.config_hash.clone(),
            ]
        })
        .collect();
    let header: Vec<String> = [
        spec.axis.name(),
        "mean_pre_fec_ber",
        "mean_gmi",
        "mean_iterations",
        "code_rate",
        "net_rate_gbps",
        "failures",
        "config_hash",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    std::fs::write(root.join(SWEEP_SUMMARY), table::render(&header, &rows)?)?;
    let failures = records.iter().filter(|r| r.failed()).count();
    println!("wrote {} rows to {}", records.len(), root.join(SWEEP_CSV).display());
    if failures > 0 {
        bail!("{failures} sweep runs failed; see the error column of {SWEEP_CSV}");
    }
    Ok(())
}

fn sweep_csv(cfg: &ExperimentConfig, spec: &SweepSpec, records: &[SweepRecord]) -> Result<Vec<u8>> {
    let configs: Vec<Vec<(String, String)>> = spec
        .points
        .iter()
        .map(|&v| {
            let c = eval::point_config(cfg, spec.axis, v)?.run_config();
            let mut flat = Vec::new();
            table::flatten("config", &serde_json::to_value(&c).expect("config serializes"), &mut flat);
            Ok(flat)
        })
        .collect::<prx_core::Result<_>>()?;
    let mut header = strings([
        "point",
        spec.axis.name(),
        "seed",
        "config_hash",
        "pre_fec_ber",
        "gmi_bits_per_symbol",
        "iterations_used",
        "converged",
        "code_rate",
        "net_rate_gbps",
        "error",
    ]);
    header.extend(configs[0].iter().map(|(k, _)| k.clone()));
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            let mut row = vec![
                r.point.to_string(),
                r.value.to_string(),
                r.seed.to_string(),
                r.config_hash.clone(),
                r.pre_fec_ber.to_string(),
                r.gmi_bits_per_symbol.to_string(),
                r.iterations_used.to_string(),
                r.converged.to_string(),
                opt(r.code_rate),
                (r.net_rate_bps / 1e9).to_string(),
                r.error.clone().unwrap_or_default(),
            ];
            row.extend(configs[r.point].iter().map(|(_, v)| v.clone()));
            row
        })
        .collect();
    table::render(&header, &rows)
}

/// Summarizes every run directory and sweep table under `root`.
pub fn report(root: &Path) -> Result<()> {
    let mut entries: Vec<(u64, std::path::PathBuf)> = std::fs::read_dir(root)
        .with_context(|| format!("reading {}", root.display()))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let seed = name.strip_prefix("seed-")?.parse().ok()?;
            Some((seed, e.path()))
        })
        .collect();
    entries.sort();
    let mut rows = Vec::new();
    for (seed, path) in &entries {
        let manifest: io::Manifest = serde_json::from_str(
            &std::fs::read_to_string(path.join(rundir::MANIFEST)).context("reading manifest")?,
        )?;
        let stage = if manifest.entry(RESULTS).is_some() {
            "reconstructed"
        } else if manifest.entry(ESTIMATE).is_some() {
            "trained"
        } else {
            "simulated"
        };
        let mut row = vec![seed.to_string(), stage.to_string(), manifest.config_hash.clone()];
        if manifest.entry(RESULTS).is_some() {
            let r: RunResults = serde_json::from_slice(&manifest.read_verified(path, RESULTS)?)?;
            let m = &r.metrics;
            row.extend([
                m.pre_fec_ber.to_string(),
                m.gmi_bits_per_symbol.to_string(),
                m.evm_rms.to_string(),
                m.iterations_used.to_string(),
                m.converged.to_string(),
                opt(m.net_rate.code_rate),
                (m.net_rate.bps / 1e9).to_string(),
            ]);
        } else {
            row.extend(std::iter::repeat_n(String::new(), 7));
        }
        rows.push(row);
    }
    let header = strings([
        "seed",
        "stage",
        "config_hash",
        "pre_fec_ber",
        "gmi_bits_per_symbol",
        "evm_rms",
        "iterations_used",
        "converged",
        "code_rate",
        "net_rate_gbps",
    ]);
    if !rows.is_empty() {
        std::fs::write(root.join("report.csv"), table::render(&header, &rows)?)?;
        println!("{:>6}  {:<14} {:>12} {:>8} {:>6} {:>10}", "seed", "stage", "BER", "GMI", "iters", "net Gb/s");
        for r in &rows {
            let num = |i: usize, p: usize| r[i].parse::<f64>().map_or("-".to_string(), |v| format!("{v:.p$e}"));
            println!(
                "{:>6}  {:<14} {:>12} {:>8} {:>6} {:>10}",
                r[0],
                r[1],
                num(3, 3),
                r[4].parse::<f64>().map_or("-".into(), |v| format!("{v:.3}")),
                if r[6].is_empty() { "-" } else { &r[6] },
                r[9].parse::<f64>().map_or("-".into(), |v| format!("{v:.1}"))
            );
        }
    }
    let summary = root.join(SWEEP_SUMMARY);
    if summary.exists() {
        println!("\nsweep summary ({}):", summary.display());
        print!("{}", std::fs::read_to_string(&summary)?);
    }
    if rows.is_empty() && !summary.exists() {
        bail!("nothing to report in {}", root.display());
    }
    Ok(())
}
