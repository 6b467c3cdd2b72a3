//! Metrics and experiment harnesses: BER, GMI, EVM, FEC-threshold net rate,
//! the amplitude noise-floor Monte Carlo and parameter sweeps.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field;
use crate::pipeline::{self, ExperimentConfig};
use crate::rng::{self, Stream};
use crate::spectral;
use crate::tx::{PilotRatio, QamConstellation, QamOrder};
use crate::C64;

/// Outer hard-decision code overhead (6.25 %).
pub const OUTER_CODE_OVERHEAD: f64 = 1.0625;

/// Pre-FEC BER admissibility per inner LDPC code rate. Only the rate-1
/// (4.7e-3) and rate-3/4 (4e-2) entries are measured anchors; the rest is a
/// modeling table.
pub const LDPC_TABLE: [(f64, f64); 5] = [
    (1.0, 4.7e-3),
    (0.9, 1.5e-2),
    (5.0 / 6.0, 2.5e-2),
    (0.75, 4.0e-2),
    (2.0 / 3.0, 5.5e-2),
];

fn check_lengths(symbols: &[C64], bits: &[u8], c: &QamConstellation) -> Result<()> {
    let m = c.bits_per_symbol();
    if symbols.len() * m != bits.len() {
        return Err(Error::LengthMismatch {
            expected: symbols.len() * m,
            actual: bits.len(),
        });
    }
    Ok(())
}

/// Hard-decision bit errors and total bits.
pub fn count_bit_errors(
    recovered: &[C64],
    truth_bits: &[u8],
    c: &QamConstellation,
) -> Result<(usize, usize)> {
    check_lengths(recovered, truth_bits, c)?;
    let m = c.bits_per_symbol();
    let errors = recovered
        .par_iter()
        .zip(truth_bits.par_chunks(m))
        .map(|(s, b)| {
            let label = c.nearest(*s);
            (0..m)
                .filter(|&k| (((label >> (m - 1 - k)) & 1) as u8) != b[k])
                .count()
        })
        .sum();
    Ok((errors, truth_bits.len()))
}

pub fn compute_ber(recovered: &[C64], truth_bits: &[u8], c: &QamConstellation) -> Result<f64> {
    let (e, n) = count_bit_errors(recovered, truth_bits, c)?;
    if n == 0 {
        return Err(Error::invalid("no bits to compare"));
    }
    Ok(e as f64 / n as f64)
}

/// RMS error vector magnitude relative to the reference RMS amplitude.
pub fn evm_rms(recovered: &[C64], reference: &[C64]) -> Result<f64> {
    if recovered.len() != reference.len() {
        return Err(Error::LengthMismatch {
            expected: reference.len(),
            actual: recovered.len(),
        });
    }
    let err: f64 = recovered.iter().zip(reference).map(|(a, b)| (a - b).norm_sqr()).sum();
    Ok((err / field::energy(reference)).sqrt())
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Bit-wise GMI (bits/symbol) under a memoryless Gaussian channel whose
/// single pooled variance is estimated from the recovered points around the
/// transmitted ones.
pub fn compute_gmi(recovered: &[C64], truth_bits: &[u8], c: &QamConstellation) -> Result<f64> {
    check_lengths(recovered, truth_bits, c)?;
    let m = c.bits_per_symbol();
    if recovered.is_empty() {
        return Err(Error::invalid("no symbols"));
    }
    let mean: C64 = recovered.iter().sum::<C64>() / recovered.len() as f64;
    let spread = recovered.iter().map(|s| (s - mean).norm_sqr()).sum::<f64>() / recovered.len() as f64;
    if !(spread > 1e-20) {
        return Err(Error::Degenerate("recovered cloud has zero variance".into()));
    }
    let sent: Vec<C64> = truth_bits
        .chunks(m)
        .map(|b| c.points[c.label_of(b)])
        .collect();
    let noise = recovered
        .iter()
        .zip(&sent)
        .map(|(y, x)| (y - x).norm_sqr())
        .sum::<f64>()
        / recovered.len() as f64;
    let var = noise.max(1e-10);
    let per_symbol: Vec<f64> = recovered
        .par_iter()
        .zip(truth_bits.par_chunks(m))
        .map(|(y, bits)| {
            let metric: Vec<f64> = c.points.iter().map(|x| -(y - x).norm_sqr() / var).collect();
            let mut acc = 0.0;
            let mut zero = Vec::with_capacity(c.points.len() / 2);
            let mut one = Vec::with_capacity(c.points.len() / 2);
            for (k, &bit) in bits.iter().enumerate() {
                zero.clear();
                one.clear();
                for (label, &v) in metric.iter().enumerate() {
                    if (label >> (m - 1 - k)) & 1 == 0 {
                        zero.push(v);
                    } else {
                        one.push(v);
                    }
                }
                // llr = ln p(y|b=0) − ln p(y|b=1)
                let llr = log_sum_exp(&zero) - log_sum_exp(&one);
                let s = if bit == 0 { -llr } else { llr };
                // log2(1 + e^s), stable for large |s|
                acc += if s > 30.0 { s } else { s.exp().ln_1p() } / std::f64::consts::LN_2;
            }
            acc
        })
        .collect();
    let total: f64 = per_symbol.iter().sum();
    let gmi = m as f64 - total / recovered.len() as f64;
    Ok(gmi.clamp(0.0, m as f64))
}

/// Net-rate result of the threshold rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetRate {
    pub code_rate: Option<f64>,
    pub bps: f64,
}

/// Highest admissible LDPC rate for `pre_fec_ber` and the resulting net
/// rate `Rs · log2(M) · (1 − p) · r / 1.0625`.
pub fn estimate_net_rate(pre_fec_ber: f64, pilot_ratio: f64, symbol_rate: f64, order: QamOrder) -> NetRate {
    let rate = LDPC_TABLE
        .iter()
        .find(|(_, th)| pre_fec_ber < *th)
        .map(|(r, _)| *r);
    let bps = rate.map_or(0.0, |r| {
        symbol_rate * order.bits_per_symbol() as f64 * (1.0 - pilot_ratio) * r / OUTER_CODE_OVERHEAD
    });
    NetRate {
        code_rate: rate,
        bps,
    }
}

/// Mean squared complex amplitude residual `E|b̃·e^{jψ} − H(ã·e^{jθ})|²` at
/// the true phases, with AWGN of variance `n0_var` on the plane-A amplitude
/// and `w0_var` on the plane-B amplitude.
///
/// `kernel` is the circular impulse response of `H` (index 0 = zero delay)
/// and must have unit energy.
pub fn noise_floor_montecarlo(
    n0_var: f64,
    w0_var: f64,
    n_samples: usize,
    kernel: &[C64],
    seed: u64,
) -> Result<f64> {
    Ok(noise_floor_both(n0_var, w0_var, n_samples, kernel, seed)?.0)
}

/// Magnitude-only residual `E[(b̃ − |H(ã·e^{jθ})|)²]` of the same draw.
pub fn noise_floor_magnitude(
    n0_var: f64,
    w0_var: f64,
    n_samples: usize,
    kernel: &[C64],
    seed: u64,
) -> Result<f64> {
    Ok(noise_floor_both(n0_var, w0_var, n_samples, kernel, seed)?.1)
}

fn noise_floor_both(
    n0_var: f64,
    w0_var: f64,
    n_samples: usize,
    kernel: &[C64],
    seed: u64,
) -> Result<(f64, f64)> {
    if kernel.is_empty() || n_samples == 0 {
        return Err(Error::invalid("empty kernel or sample count"));
    }
    if !(n0_var >= 0.0 && w0_var >= 0.0) {
        return Err(Error::invalid("variances must be nonnegative"));
    }
    let e = field::energy(kernel);
    if (e - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("kernel energy {e} is not 1")));
    }
    let block = kernel.len().max(4096);
    let mut k = vec![C64::new(0.0, 0.0); block];
    k[..kernel.len()].copy_from_slice(kernel);
    let h = spectral::fft(&k);
    let trials = n_samples.div_ceil(block);
    let sums: Vec<(f64, f64, usize)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::stream(seed, Stream::Aux(100 + t as u32));
            let unit = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).unwrap();
            let nn = Normal::new(0.0, n0_var.sqrt()).unwrap();
            let nw = Normal::new(0.0, w0_var.sqrt()).unwrap();
            let x: Vec<C64> = (0..block)
                .map(|_| C64::new(unit.sample(&mut r), unit.sample(&mut r)))
                .collect();
            let y = field::apply_transfer(&x, &h);
            let noisy_a: Vec<C64> = x
                .iter()
                .map(|v| {
                    let a = v.norm();
                    let ph = if a > 0.0 { v / a } else { C64::new(1.0, 0.0) };
                    ph * (a + nn.sample(&mut r))
                })
                .collect();
            let y_hat = field::apply_transfer(&noisy_a, &h);
            let take = block.min(n_samples - t * block);
            let mut c = 0.0;
            let mut m = 0.0;
            for i in 0..take {
                let b = y[i].norm();
                let ph = if b > 0.0 { y[i] / b } else { C64::new(1.0, 0.0) };
                let b_noisy = b + nw.sample(&mut r);
                c += (ph * b_noisy - y_hat[i]).norm_sqr();
                m += (b_noisy - y_hat[i].norm()).powi(2);
            }
            (c, m, take)
        })
        .collect();
    let (c, m, n) = sums
        .iter()
        .fold((0.0, 0.0, 0usize), |acc, s| (acc.0 + s.0, acc.1 + s.1, acc.2 + s.2));
    Ok((c / n as f64, m / n as f64))
}

// ---------------------------------------------------------------------------
// Sweeps

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Osnr,
    PilotRatio,
    Iterations,
    PhaseResetThreshold,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Osnr => "osnr_db",
            SweepAxis::PilotRatio => "pilot_ratio",
            SweepAxis::Iterations => "iterations",
            SweepAxis::PhaseResetThreshold => "phase_reset_threshold",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub points: Vec<f64>,
}

/// Configuration of one sweep point.
pub fn point_config(base: &ExperimentConfig, axis: SweepAxis, value: f64) -> Result<ExperimentConfig> {
    let mut cfg = base.run_config();
    match axis {
        SweepAxis::Osnr => cfg.channel.osnr_db = Some(value),
        SweepAxis::PilotRatio => cfg.frame.pilot_ratio = PilotRatio::from_f64(value)?,
        SweepAxis::Iterations => {
            if !(value >= 1.0) {
                return Err(Error::invalid("iteration count must be >= 1"));
            }
            cfg.pr.max_iters = value.round() as usize;
            cfg.pr.stop_on_convergence = false;
        }
        SweepAxis::PhaseResetThreshold => {
            cfg.pr.phase_reset_enabled = true;
            cfg.pr.phase_reset_threshold = value;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Reads `null` (how JSON stores NaN) back as NaN.
fn nan_or_f64<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

/// One (point, seed) outcome of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub point: usize,
    pub value: f64,
    pub seed: u64,
    pub config_hash: String,
    #[serde(deserialize_with = "nan_or_f64")]
    pub pre_fec_ber: f64,
    #[serde(deserialize_with = "nan_or_f64")]
    pub gmi_bits_per_symbol: f64,
    pub iterations_used: usize,
    pub converged: bool,
    pub net_rate_bps: f64,
    pub code_rate: Option<f64>,
    pub error: Option<String>,
}

impl SweepRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// Seed-averaged metrics of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub config_hash: String,
    #[serde(deserialize_with = "nan_or_f64")]
    pub mean_ber: f64,
    #[serde(deserialize_with = "nan_or_f64")]
    pub mean_gmi: f64,
    pub mean_iterations: f64,
    /// Net rate from the threshold rule applied to the mean BER.
    pub net_rate_bps: f64,
    pub code_rate: Option<f64>,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub records: Vec<SweepRecord>,
    pub points: Vec<SweepPoint>,
}

fn run_point(cfg: &ExperimentConfig, point: usize, value: f64, seed: u64) -> SweepRecord {
    let hash = pipeline::config_hash(cfg);
    match pipeline::run_experiment(cfg, seed) {
        Ok(out) => SweepRecord {
            point,
            value,
            seed,
            config_hash: hash,
            pre_fec_ber: out.metrics.pre_fec_ber,
            gmi_bits_per_symbol: out.metrics.gmi_bits_per_symbol,
            iterations_used: out.metrics.iterations_used,
            converged: out.metrics.converged,
            net_rate_bps: out.metrics.net_rate.bps,
            code_rate: out.metrics.net_rate.code_rate,
            error: None,
        },
        Err(e) => SweepRecord {
            point,
            value,
            seed,
            config_hash: hash,
            pre_fec_ber: f64::NAN,
            gmi_bits_per_symbol: f64::NAN,
            iterations_used: 0,
            converged: false,
            net_rate_bps: 0.0,
            code_rate: None,
            error: Some(e.to_string()),
        },
    }
}

/// Aggregates records into per-point means.
pub fn summarize(base: &ExperimentConfig, spec: &SweepSpec, records: &[SweepRecord]) -> Result<Vec<SweepPoint>> {
    spec.points
        .iter()
        .enumerate()
        .map(|(i, &value)| {
            let cfg = point_config(base, spec.axis, value)?;
            let ok: Vec<&SweepRecord> = records.iter().filter(|r| r.point == i && !r.failed()).collect();
            let failures = records.iter().filter(|r| r.point == i && r.failed()).count();
            let n = ok.len().max(1) as f64;
            let mean_ber = if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter().map(|r| r.pre_fec_ber).sum::<f64>() / n
            };
            let rate = estimate_net_rate(
                mean_ber,
                cfg.frame.pilot_ratio.value(),
                cfg.frame.symbol_rate_baud,
                cfg.frame.order,
            );
            Ok(SweepPoint {
                value,
                config_hash: pipeline::config_hash(&cfg),
                mean_ber,
                mean_gmi: ok.iter().map(|r| r.gmi_bits_per_symbol).sum::<f64>() / n,
                mean_iterations: ok.iter().map(|r| r.iterations_used as f64).sum::<f64>() / n,
                net_rate_bps: rate.bps,
                code_rate: rate.code_rate,
                failures,
            })
        })
        .collect()
}

/// Runs every (point, seed) pair not rejected by `skip`, calling
/// `on_record` as each finishes. Per-point failures are recorded and the
/// sweep continues.
pub fn run_sweep_with(
    base: &ExperimentConfig,
    spec: &SweepSpec,
    seeds: &[u64],
    skip: &(dyn Fn(&str, u64) -> bool + Sync),
    on_record: &(dyn Fn(&SweepRecord) + Sync),
) -> Result<Vec<SweepRecord>> {
    let configs: Vec<ExperimentConfig> = spec
        .points
        .iter()
        .map(|&v| point_config(base, spec.axis, v))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, u64)> = (0..configs.len())
        .flat_map(|p| seeds.iter().map(move |&s| (p, s)))
        .filter(|&(p, s)| !skip(&pipeline::config_hash(&configs[p]), s))
        .collect();
    let mut records: Vec<SweepRecord> = jobs
        .par_iter()
        .map(|&(p, s)| {
            let r = run_point(&configs[p], p, spec.points[p], s);
            on_record(&r);
            r
        })
        .collect();
    records.sort_by_key(|r| (r.point, r.seed));
    Ok(records)
}

/// Runs the full pipeline for every point and seed.
pub fn run_sweep(base: &ExperimentConfig, spec: &SweepSpec, seeds: &[u64]) -> Result<SweepResult> {
    let records = run_sweep_with(base, spec, seeds, &|_, _| false, &|_| {})?;
    let points = summarize(base, spec, &records)?;
    Ok(SweepResult {
        axis: spec.axis,
        values: spec.points.clone(),
        records,
        points,
    })
}
