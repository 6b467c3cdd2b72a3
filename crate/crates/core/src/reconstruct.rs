//! Dual-trace Gerchberg-Saxton reconstruction of the transmitted symbols
//! from the two measured intensity traces.
//!
//! The Tx projection plane holds symbol-rate estimates of one payload block.
//! Each iteration shapes them, applies premix, the emulated transmitter
//! distortion and the branch dispersion, swaps in the measured amplitude,
//! and undoes every stage on the way back before the pilot constraint.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{self, Branch, IntensityTrace, RrcShaper};
use crate::spectral;
use crate::trainer::{ChannelEstimate, DistortionModel};
use crate::tx::{FrameSpec, PilotPlan};
use crate::C64;

/// Order in which the two traces visit the measured branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceSchedule {
    /// Trace A uses branches 1, 2, 1, …; trace B uses 2, 1, 2, ….
    #[default]
    Alternating,
    /// Trace A always uses branch 1 and trace B branch 2.
    Fixed,
}

impl TraceSchedule {
    pub fn branch(&self, trace: usize, iteration: usize) -> Branch {
        let k = match self {
            TraceSchedule::Alternating => (trace + iteration) % 2,
            TraceSchedule::Fixed => trace,
        };
        Branch::BOTH[k]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrConfig {
    pub max_iters: usize,
    pub convergence_rel_change: f64,
    pub convergence_hold_iters: usize,
    /// Stop as soon as the convergence rule fires.
    pub stop_on_convergence: bool,
    pub phase_reset_enabled: bool,
    pub phase_reset_threshold: f64,
    /// Brick-wall cutoff at the Tx plane; `None` uses the signal band edge.
    pub bandwidth_cutoff_hz: Option<f64>,
    pub trace_schedule: TraceSchedule,
    /// Weight of the other trace when the two are mixed at the Tx plane.
    pub mixing_weight: f64,
    /// Emulate and undo the estimated transmitter distortion.
    pub distortion_aware: bool,
    /// Payload repetition to reconstruct; `None` picks the middle one.
    pub block_repeat: Option<usize>,
}

impl Default for PrConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            convergence_rel_change: 1e-3,
            convergence_hold_iters: 10,
            stop_on_convergence: true,
            phase_reset_enabled: false,
            phase_reset_threshold: 0.5,
            bandwidth_cutoff_hz: None,
            trace_schedule: TraceSchedule::Alternating,
            mixing_weight: 0.5,
            distortion_aware: true,
            block_repeat: None,
        }
    }
}

impl PrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be >= 1"));
        }
        if !(self.convergence_rel_change > 0.0) || !(self.phase_reset_threshold > 0.0) {
            return Err(Error::invalid("thresholds must be positive"));
        }
        if !(0.0..=1.0).contains(&self.mixing_weight) {
            return Err(Error::invalid("mixing_weight must lie in [0, 1]"));
        }
        if let Some(c) = self.bandwidth_cutoff_hz {
            if !(c > 0.0) {
                return Err(Error::invalid("bandwidth cutoff must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub amp_error_a: f64,
    pub amp_error_b: f64,
    pub resets_triggered: usize,
    pub ber: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    /// Payload symbols with pilots removed, gain-corrected on the pilots.
    pub recovered_symbols: Vec<C64>,
    pub iterations_used: usize,
    pub per_iteration_amp_error: Vec<f64>,
    pub per_iteration_ber: Option<Vec<f64>>,
    pub diagnostics: Vec<IterationRecord>,
    pub converged: bool,
}

/// True when the last `hold` relative changes of `history` are all below
/// `rel_change`.
pub fn check_convergence(history: &[f64], rel_change: f64, hold: usize) -> bool {
    if history.len() < hold + 1 {
        return false;
    }
    history[history.len() - hold - 1..].windows(2).all(|w| {
        let (prev, cur) = (w[0], w[1]);
        if prev == 0.0 {
            cur == 0.0
        } else {
            ((cur - prev) / prev).abs() < rel_change
        }
    })
}

/// Zeroes the phase of samples where the two traces' amplitudes disagree by
/// more than `threshold` relative to their mean amplitude. Samples with
/// `skip[k]` set are left alone. Returns the number of resets.
pub fn selective_phase_reset(
    a: &mut [C64],
    b: &mut [C64],
    threshold: f64,
    skip: Option<&[bool]>,
) -> usize {
    if !threshold.is_finite() || a.is_empty() {
        return 0;
    }
    let mean_amp = a.iter().zip(b.iter()).map(|(x, y)| 0.5 * (x.norm() + y.norm())).sum::<f64>()
        / a.len() as f64;
    if mean_amp == 0.0 {
        return 0;
    }
    let mut count = 0;
    for k in 0..a.len() {
        if skip.is_some_and(|s| s[k]) {
            continue;
        }
        let (ra, rb) = (a[k].norm(), b[k].norm());
        if (ra - rb).abs() / mean_amp > threshold {
            a[k] = C64::new(ra, 0.0);
            b[k] = C64::new(rb, 0.0);
            count += 1;
        }
    }
    count
}

/// Propagation between the symbol-rate Tx plane and either photodiode for
/// one payload block.
pub struct BlockPropagator {
    shaper: RrcShaper,
    premix: Vec<C64>,
    post: [Vec<C64>; 2],
    total: [Vec<C64>; 2],
    mask: Vec<bool>,
    model: Option<DistortionModel>,
}

impl BlockPropagator {
    pub fn new(
        est: &ChannelEstimate,
        spec: &FrameSpec,
        cutoff_hz: f64,
        distortion_aware: bool,
    ) -> Result<Self> {
        let shaper = RrcShaper::new(
            spec.payload_block_len,
            spec.rolloff,
            spec.samples_per_symbol,
            spec.symbol_rate_baud,
        )?;
        let n = shaper.n_samples();
        let fs = shaper.sample_rate();
        let premix = est.premix.transfer_grid(n, fs);
        let post = [
            est.post_premix_dispersion(Branch::Dispersed).transfer_grid(n, fs),
            est.post_premix_dispersion(Branch::Undispersed).transfer_grid(n, fs),
        ];
        let total = [
            est.dispersion[0].transfer_grid(n, fs),
            est.dispersion[1].transfer_grid(n, fs),
        ];
        let model = if distortion_aware {
            let m = est.distortion_model(n, fs)?;
            (!m.is_identity()).then_some(m)
        } else {
            None
        };
        Ok(Self {
            mask: field::bandwidth_mask(n, fs, cutoff_hz),
            shaper,
            premix,
            post,
            total,
            model,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.shaper.n_samples()
    }

    /// Field at the photodiode of `branch` for Tx-plane `symbols`.
    pub fn forward(&self, symbols: &[C64], branch: Branch) -> Vec<C64> {
        let b = branch.index();
        let shaped = self.shaper.shape_spectrum(&spectral::fft(symbols));
        let mut spec = spectral::fft(&shaped);
        match &self.model {
            None => {
                for (v, h) in spec.iter_mut().zip(&self.total[b]) {
                    *v *= h;
                }
            }
            Some(m) => {
                for (v, h) in spec.iter_mut().zip(&self.premix) {
                    *v *= h;
                }
                spectral::ifft_in_place(&mut spec);
                let mut s = m.forward(&spec);
                spectral::fft_in_place(&mut s);
                spec = s;
                for (v, h) in spec.iter_mut().zip(&self.post[b]) {
                    *v *= h;
                }
            }
        }
        spectral::ifft_in_place(&mut spec);
        spec
    }

    /// Tx-plane symbols for a photodiode field of `branch`.
    pub fn backward(&self, field: &[C64], branch: Branch) -> Vec<C64> {
        let b = branch.index();
        let mut spec = spectral::fft(field);
        match &self.model {
            None => {
                for (v, h) in spec.iter_mut().zip(&self.total[b]) {
                    *v *= h.conj();
                }
            }
            Some(m) => {
                for (v, h) in spec.iter_mut().zip(&self.post[b]) {
                    *v *= h.conj();
                }
                spectral::ifft_in_place(&mut spec);
                let mut s = m.reverse(&spec);
                spectral::fft_in_place(&mut s);
                spec = s;
                for (v, h) in spec.iter_mut().zip(&self.premix) {
                    *v *= h.conj();
                }
            }
        }
        for (v, keep) in spec.iter_mut().zip(&self.mask) {
            if !keep {
                *v = C64::new(0.0, 0.0);
            }
        }
        let mut sym = self.shaper.matched_spectrum(&spec);
        spectral::ifft_in_place(&mut sym);
        sym
    }
}

/// Replaces the amplitude of `field` with `amp`, keeping its phase, and
/// returns the normalized squared amplitude error before replacement.
pub fn amplitude_constraint(field: &mut [C64], amp: &[f64]) -> f64 {
    let mut err = 0.0;
    let mut norm = 0.0;
    for (v, &a) in field.iter_mut().zip(amp) {
        let r = v.norm();
        err += (r - a) * (r - a);
        norm += a * a;
        *v = if r > 0.0 { *v * (a / r) } else { C64::new(a, 0.0) };
    }
    if norm > 0.0 {
        err / norm
    } else {
        err
    }
}

pub fn apply_pilots(symbols: &mut [C64], pilots: &PilotPlan) {
    for ((s, &m), &v) in symbols.iter_mut().zip(&pilots.mask).zip(&pilots.values) {
        if m {
            *s = v;
        }
    }
}

/// Least-squares complex gain mapping the estimates onto the pilots.
pub fn pilot_gain(symbols: &[C64], pilots: &PilotPlan) -> C64 {
    let mut num = C64::new(0.0, 0.0);
    let mut den = 0.0;
    for ((s, &m), &v) in symbols.iter().zip(&pilots.mask).zip(&pilots.values) {
        if m {
            num += v * s.conj();
            den += s.norm_sqr();
        }
    }
    if den > 0.0 {
        num / den
    } else {
        C64::new(1.0, 0.0)
    }
}

/// Gain-corrected data symbols (pilots removed).
pub fn extract_data(symbols: &[C64], pilots: &PilotPlan) -> Vec<C64> {
    let g = pilot_gain(symbols, pilots);
    let mut data: Vec<C64> = symbols
        .iter()
        .zip(&pilots.mask)
        .filter(|(_, &m)| !m)
        .map(|(s, _)| s * g)
        .collect();
    if pilots.count() == 0 {
        let p = field::energy(&data) / data.len().max(1) as f64;
        if p > 0.0 {
            let k = 1.0 / p.sqrt();
            for d in data.iter_mut() {
                *d *= k;
            }
        }
    }
    data
}

/// Per-trace iteration state at the Tx plane.
#[derive(Debug, Clone, PartialEq)]
pub struct GsState {
    pub traces: [Vec<C64>; 2],
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub amp_error: [f64; 2],
    pub resets: usize,
    /// Average of the two traces before the pilot constraint.
    pub estimate: Vec<C64>,
}

impl GsState {
    /// Pilots at their known values and zeros elsewhere.
    pub fn from_pilots(pilots: &PilotPlan) -> Self {
        let mut s = vec![C64::new(0.0, 0.0); pilots.mask.len()];
        apply_pilots(&mut s, pilots);
        Self {
            traces: [s.clone(), s],
            iteration: 0,
        }
    }
}

/// One dual-trace iteration.
pub fn gs_iteration_step(
    state: &mut GsState,
    amplitudes: &[Vec<f64>; 2],
    prop: &BlockPropagator,
    pilots: &PilotPlan,
    cfg: &PrConfig,
) -> StepOutcome {
    let it = state.iteration;
    let run = |t: usize, sym: &[C64]| -> (Vec<C64>, f64) {
        let branch = cfg.trace_schedule.branch(t, it);
        let mut e = prop.forward(sym, branch);
        let err = amplitude_constraint(&mut e, &amplitudes[branch.index()]);
        (prop.backward(&e, branch), err)
    };
    let ((mut a, ea), (mut b, eb)) = rayon::join(|| run(0, &state.traces[0]), || run(1, &state.traces[1]));
    let resets = if cfg.phase_reset_enabled {
        selective_phase_reset(&mut a, &mut b, cfg.phase_reset_threshold, Some(&pilots.mask))
    } else {
        0
    };
    let estimate: Vec<C64> = a.iter().zip(&b).map(|(x, y)| (x + y) * 0.5).collect();
    apply_pilots(&mut a, pilots);
    apply_pilots(&mut b, pilots);
    let w = cfg.mixing_weight;
    let mixed_a: Vec<C64> = a.iter().zip(&b).map(|(x, y)| x * (1.0 - w) + y * w).collect();
    let mixed_b: Vec<C64> = b.iter().zip(&a).map(|(x, y)| x * (1.0 - w) + y * w).collect();
    state.traces = [mixed_a, mixed_b];
    state.iteration += 1;
    StepOutcome {
        amp_error: [ea, eb],
        resets,
        estimate,
    }
}

/// Callback scoring the recovered data symbols of one iteration.
pub type BerObserver<'a> = &'a dyn Fn(&[C64]) -> f64;

/// Runs the iteration on measured amplitudes of one block.
///
/// `observer` receives the gain-corrected data symbols after every
/// iteration and returns a BER; it never influences the state.
pub fn reconstruct_block(
    amplitudes: &[Vec<f64>; 2],
    prop: &BlockPropagator,
    pilots: &PilotPlan,
    cfg: &PrConfig,
    observer: Option<BerObserver<'_>>,
) -> Result<ReconstructionResult> {
    cfg.validate()?;
    let n = prop.n_samples();
    for a in amplitudes {
        if a.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: a.len(),
            });
        }
    }
    let mut state = GsState::from_pilots(pilots);
    let mut history = Vec::new();
    let mut records = Vec::new();
    let mut bers = observer.map(|_| Vec::new());
    let mut estimate = Vec::new();
    let mut converged = false;
    for iteration in 0..cfg.max_iters {
        let out = gs_iteration_step(&mut state, amplitudes, prop, pilots, cfg);
        let err = 0.5 * (out.amp_error[0] + out.amp_error[1]);
        history.push(err);
        estimate = out.estimate;
        let ber = observer.map(|f| f(&extract_data(&estimate, pilots)));
        if let (Some(b), Some(v)) = (bers.as_mut(), ber) {
            b.push(v);
        }
        records.push(IterationRecord {
            iteration: iteration + 1,
            amp_error_a: out.amp_error[0],
            amp_error_b: out.amp_error[1],
            resets_triggered: out.resets,
            ber,
        });
        if !converged
            && check_convergence(&history, cfg.convergence_rel_change, cfg.convergence_hold_iters)
        {
            converged = true;
            if cfg.stop_on_convergence {
                break;
            }
        }
    }
    Ok(ReconstructionResult {
        recovered_symbols: extract_data(&estimate, pilots),
        iterations_used: history.len(),
        per_iteration_amp_error: history,
        per_iteration_ber: bers,
        diagnostics: records,
        converged,
    })
}

/// Equalized amplitudes `√max(y, 0)` of one payload block on both branches.
pub fn block_amplitudes(
    traces: &[IntensityTrace; 2],
    est: &ChannelEstimate,
    spec: &FrameSpec,
    repeat: usize,
) -> Result<[Vec<f64>; 2]> {
    if repeat >= spec.payload_repeats {
        return Err(Error::invalid("payload repeat out of range"));
    }
    let sps = spec.samples_per_symbol;
    let len = spec.payload_block_len * sps;
    let offset = (spec.payload_start(repeat) - spec.training_start()) * sps;
    let mut out: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for t in traces {
        let b = t.branch.index();
        let eq = IntensityTrace::new(est.equalize(t), t.sample_rate_hz, t.branch);
        let start = est.sync_lag[b] as isize + offset as isize;
        out[b] = eq.window(start, len).into_iter().map(|v| v.max(0.0).sqrt()).collect();
    }
    Ok(out)
}

/// Reconstructs one payload block from the two full-frame traces.
pub fn reconstruct(
    traces: &[IntensityTrace; 2],
    est: &ChannelEstimate,
    spec: &FrameSpec,
    pilots: &PilotPlan,
    cfg: &PrConfig,
    observer: Option<BerObserver<'_>>,
) -> Result<ReconstructionResult> {
    let repeat = cfg.block_repeat.unwrap_or(spec.reconstruction_repeat());
    let amps = block_amplitudes(traces, est, spec, repeat)?;
    let cutoff = cfg.bandwidth_cutoff_hz.unwrap_or(spec.band_edge_hz());
    let prop = BlockPropagator::new(est, spec, cutoff, cfg.distortion_aware)?;
    reconstruct_block(&amps, &prop, pilots, cfg, observer)
}

/// Plain two-plane GS on a circulant all-pass operator `H` (given by its
/// spectrum): one iteration maps the plane-A estimate `x` to a new one and
/// returns the normalized plane-B amplitude error.
pub fn two_plane_gs_step(x: &mut [C64], a: &[f64], b: &[f64], h_spec: &[C64]) -> f64 {
    let mut y = field::apply_transfer(x, h_spec);
    let err = amplitude_constraint(&mut y, b);
    let conj: Vec<C64> = h_spec.iter().map(|h| h.conj()).collect();
    let back = field::apply_transfer(&y, &conj);
    x.copy_from_slice(&back);
    amplitude_constraint(x, a);
    err
}
