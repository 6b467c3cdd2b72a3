//! Training-stage estimation from the known training sequence: per-branch
//! dispersion and timing, receiver FFEs with DC baselines, the transmitter
//! response (Algorithm 1), IQ impairments and modulator nonlinearity, plus
//! the forward/reverse distortion operators used by the reconstructor.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{
    self, cubic, cubic_min_slope, IqImpairment, NonlinearCoeffs, DEFAULT_AMPLITUDE_RANGE,
};
use crate::error::{Error, Result};
use crate::field::{
    self, Branch, ComplexWaveform, DispersionSpec, FirResponse, FirRole, IntensityTrace,
    RrcShaper,
};
use crate::spectral::{self, mirror_bin};
use crate::tx::FrameSpec;
use crate::C64;

/// Symmetric search grid `{-span, …, -step, 0, step, …, span}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxis {
    pub span: f64,
    pub step: f64,
}

impl GridAxis {
    pub fn new(span: f64, step: f64) -> Self {
        Self { span, step }
    }

    pub fn points(&self) -> Vec<f64> {
        let n = (self.span / self.step).round() as i64;
        (-n..=n).map(|k| k as f64 * self.step).collect()
    }

    pub fn on_boundary(&self, v: f64) -> bool {
        v.abs() >= self.span - 0.5 * self.step
    }
}

/// Grids of the greedy IQ / nonlinearity search. `tau` is in samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IqNlGrid {
    pub phi: GridAxis,
    pub tau: GridAxis,
    pub rho: GridAxis,
    pub c2: GridAxis,
    pub c3: GridAxis,
}

impl Default for IqNlGrid {
    fn default() -> Self {
        Self {
            phi: GridAxis::new(0.2, 0.01),
            tau: GridAxis::new(1.0, 0.05),
            rho: GridAxis::new(0.3, 0.01),
            c2: GridAxis::new(0.2, 0.01),
            c3: GridAxis::new(0.2, 0.01),
        }
    }
}

/// Dispersion search window; the coarse pass uses `step × coarse_factor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CdSearch {
    pub min_ps_per_nm: f64,
    pub max_ps_per_nm: f64,
    pub step_ps_per_nm: f64,
    pub coarse_factor: usize,
}

impl Default for CdSearch {
    fn default() -> Self {
        Self {
            min_ps_per_nm: -6000.0,
            max_ps_per_nm: 2000.0,
            step_ps_per_nm: 10.0,
            coarse_factor: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub ffe_taps: usize,
    pub tx_est_taps: usize,
    pub tx_est_max_iters: usize,
    /// Branch whose trace drives the Tx response estimator.
    pub tx_est_branch: Branch,
    pub refinement_loops: usize,
    pub cd_search: CdSearch,
    pub grid: IqNlGrid,
    pub grid_rounds: usize,
    pub estimate_rx_ffe: bool,
    pub estimate_tx_response: bool,
    pub estimate_iq_nl: bool,
    /// Relative magnitude below which Tx response bins are clamped before
    /// inversion.
    pub inverse_floor: f64,
    /// Declared drive amplitude range for the nonlinearity.
    pub amplitude_range: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            ffe_taps: 101,
            tx_est_taps: 511,
            tx_est_max_iters: 20,
            tx_est_branch: Branch::Dispersed,
            refinement_loops: 2,
            cd_search: CdSearch::default(),
            grid: IqNlGrid::default(),
            grid_rounds: 3,
            estimate_rx_ffe: true,
            estimate_tx_response: true,
            estimate_iq_nl: true,
            inverse_floor: 1e-2,
            amplitude_range: DEFAULT_AMPLITUDE_RANGE,
        }
    }
}

impl TrainingConfig {
    /// Front end of a receiver without distortion awareness: dispersion and
    /// timing only, with no equalization or DC removal.
    pub fn conventional() -> Self {
        Self {
            ffe_taps: 1,
            refinement_loops: 0,
            estimate_rx_ffe: false,
            estimate_tx_response: false,
            estimate_iq_nl: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ffe_taps.is_multiple_of(2) || self.tx_est_taps.is_multiple_of(2) {
            return Err(Error::invalid("tap counts must be odd"));
        }
        if self.grid_rounds == 0 {
            return Err(Error::invalid("grid_rounds must be >= 1"));
        }
        let g = &self.grid;
        for a in [g.phi, g.tau, g.rho, g.c2, g.c3] {
            if !(a.step > 0.0) || a.span < 0.0 {
                return Err(Error::invalid("grid steps must be positive"));
            }
        }
        let c = &self.cd_search;
        if !(c.step_ps_per_nm > 0.0) || c.max_ps_per_nm < c.min_ps_per_nm || c.coarse_factor == 0 {
            return Err(Error::invalid("invalid dispersion search window"));
        }
        Ok(())
    }
}

/// Mean absolute error between two intensity waveforms after each is divided
/// by its own mean. This is the single training objective.
pub fn intensity_mae(model: &[f64], measured: &[f64]) -> f64 {
    let mm = field::mean(model);
    let ym = field::mean(measured);
    model
        .iter()
        .zip(measured)
        .map(|(m, y)| (m / mm - y / ym).abs())
        .sum::<f64>()
        / model.len() as f64
}

/// Intensity SNR (dB) of `measured` against `model`, both mean-normalized;
/// signal power is the AC power of the model.
pub fn intensity_snr_db(model: &[f64], measured: &[f64]) -> f64 {
    let mm = field::mean(model);
    let ym = field::mean(measured);
    let mut sig = 0.0;
    let mut err = 0.0;
    for (m, y) in model.iter().zip(measured) {
        let a = m / mm;
        sig += (a - 1.0) * (a - 1.0);
        err += (a - y / ym) * (a - y / ym);
    }
    10.0 * (sig / err).log10()
}

// ---------------------------------------------------------------------------
// Dispersion and timing

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdEstimate {
    pub dispersion: DispersionSpec,
    /// Trace sample at which the training period starts.
    pub lag: usize,
    pub peak: f64,
    pub runner_up: Option<f64>,
    pub noise_floor: f64,
    pub ambiguous: bool,
}

struct Correlator {
    n: usize,
    l: usize,
    trace_spec: Vec<C64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
    training_spec: Vec<C64>,
    fs: f64,
}

impl Correlator {
    fn new(trace: &[f64], training: &ComplexWaveform) -> Result<Self> {
        let n = trace.len();
        let l = training.len();
        if l > n {
            return Err(Error::invalid("training longer than trace"));
        }
        // Circular window sums of the trace for the Pearson normalization.
        let mut s1 = vec![0.0; n];
        let mut s2 = vec![0.0; n];
        let (mut a, mut b) = (0.0, 0.0);
        for k in 0..l {
            a += trace[k % n];
            b += trace[k % n] * trace[k % n];
        }
        for start in 0..n {
            s1[start] = a;
            s2[start] = b;
            let out = trace[start];
            let inn = trace[(start + l) % n];
            a += inn - out;
            b += inn * inn - out * out;
        }
        Ok(Self {
            n,
            l,
            trace_spec: spectral::fft_real(trace),
            s1,
            s2,
            training_spec: spectral::fft(training.samples()),
            fs: training.sample_rate_hz(),
        })
    }

    /// Normalized correlation against every lag for dispersion `d`.
    fn correlate(&self, d: &DispersionSpec) -> Vec<f64> {
        let h = d.transfer_grid(self.l, self.fs);
        let mut e: Vec<C64> = self.training_spec.iter().zip(&h).map(|(x, h)| x * h).collect();
        spectral::ifft_in_place(&mut e);
        let inten: Vec<f64> = e.iter().map(|v| v.norm_sqr()).collect();
        let m = field::mean(&inten);
        let mut padded = vec![C64::new(0.0, 0.0); self.n];
        let mut norm = 0.0;
        for (p, v) in padded.iter_mut().zip(&inten) {
            *p = C64::new(v - m, 0.0);
            norm += (v - m) * (v - m);
        }
        let norm = norm.sqrt();
        spectral::fft_in_place(&mut padded);
        for (p, t) in padded.iter_mut().zip(&self.trace_spec) {
            *p = p.conj() * t;
        }
        spectral::ifft_in_place(&mut padded);
        let lf = self.l as f64;
        padded
            .iter()
            .enumerate()
            .map(|(k, r)| {
                let var = (self.s2[k] - self.s1[k] * self.s1[k] / lf).max(0.0);
                if var > 0.0 && norm > 0.0 {
                    r.re / (norm * var.sqrt())
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn peak(&self, d: &DispersionSpec) -> (f64, usize) {
        let c = self.correlate(d);
        let (k, v) = c
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bk, bv), (k, &v)| if v > bv { (k, v) } else { (bk, bv) });
        (v, k)
    }
}

/// Grid search for the dispersion maximizing the normalized correlation
/// between the expected training intensity and the trace; the peak lag gives
/// the training start. `training` is the shaped, un-premixed training
/// period, so the estimate includes any premix.
pub fn estimate_cd(
    trace: &IntensityTrace,
    training: &ComplexWaveform,
    cfg: &CdSearch,
) -> Result<CdEstimate> {
    let corr = Correlator::new(&trace.samples, training)?;
    let wl = field::DEFAULT_WAVELENGTH_NM;
    let spec = |d: f64| DispersionSpec {
        dispersion_ps_per_nm: d,
        center_wavelength_nm: wl,
    };
    let coarse_step = cfg.step_ps_per_nm * cfg.coarse_factor as f64;
    let n_coarse = ((cfg.max_ps_per_nm - cfg.min_ps_per_nm) / coarse_step).floor() as usize + 1;
    let coarse: Vec<f64> = (0..n_coarse)
        .map(|k| cfg.min_ps_per_nm + k as f64 * coarse_step)
        .collect();
    let coarse_peaks: Vec<(f64, usize)> = coarse.par_iter().map(|&d| corr.peak(&spec(d))).collect();
    let best_c = (0..n_coarse)
        .max_by(|&a, &b| coarse_peaks[a].0.total_cmp(&coarse_peaks[b].0))
        .unwrap();

    let lo = (coarse[best_c] - coarse_step).max(cfg.min_ps_per_nm);
    let hi = (coarse[best_c] + coarse_step).min(cfg.max_ps_per_nm);
    let n_fine = ((hi - lo) / cfg.step_ps_per_nm).round() as usize + 1;
    let fine: Vec<f64> = (0..n_fine).map(|k| lo + k as f64 * cfg.step_ps_per_nm).collect();
    let fine_peaks: Vec<(f64, usize)> = fine.par_iter().map(|&d| corr.peak(&spec(d))).collect();
    let best_f = (0..n_fine)
        .max_by(|&a, &b| fine_peaks[a].0.total_cmp(&fine_peaks[b].0))
        .unwrap();
    let (peak, lag) = fine_peaks[best_f];
    let d_best = fine[best_f];

    // Runner-up: strongest local maximum of the coarse peak curve outside
    // one coarse step of the winner.
    let mut runner_up: Option<f64> = None;
    for k in 0..n_coarse {
        if (coarse[k] - d_best).abs() <= coarse_step {
            continue;
        }
        let v = coarse_peaks[k].0;
        let left = if k > 0 { coarse_peaks[k - 1].0 } else { f64::NEG_INFINITY };
        let right = if k + 1 < n_coarse { coarse_peaks[k + 1].0 } else { f64::NEG_INFINITY };
        if v >= left && v >= right {
            runner_up = Some(runner_up.map_or(v, |r: f64| r.max(v)));
        }
    }

    // Correlation noise floor: RMS of the best curve away from its peak.
    let c = corr.correlate(&spec(d_best));
    let n = c.len();
    let guard = training.len() / 64 + 1;
    let mut acc = 0.0;
    let mut cnt = 0usize;
    for (k, v) in c.iter().enumerate() {
        let dist = (k as isize - lag as isize).rem_euclid(n as isize) as usize;
        let dist = dist.min(n - dist);
        if dist > guard {
            acc += v * v;
            cnt += 1;
        }
    }
    let noise_floor = if cnt > 0 { (acc / cnt as f64).sqrt() } else { 0.0 };
    let ambiguous = runner_up.is_some_and(|r| peak - r < 3.0 * noise_floor);

    Ok(CdEstimate {
        dispersion: spec(d_best),
        lag,
        peak,
        runner_up,
        noise_floor,
        ambiguous,
    })
}

// ---------------------------------------------------------------------------
// Least squares helpers

fn toeplitz_real(r: &[f64], k: usize) -> DMatrix<f64> {
    let n = r.len();
    DMatrix::from_fn(k, k, |i, j| {
        let l = (i as isize - j as isize).rem_euclid(n as isize) as usize;
        r[l]
    })
}

fn cholesky_condition<T: nalgebra::ComplexField<RealField = f64>>(
    l: &DMatrix<T>,
) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for i in 0..l.nrows() {
        let d = l[(i, i)].clone().modulus();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    (hi / lo).powi(2)
}

/// Real circular LS: centered taps `h` (length `k`) minimizing
/// `Σ (h ⊛ x − z)²`. Returns taps and a condition estimate.
pub fn ls_fir_real(x: &[f64], z: &[f64], k: usize, ridge: f64) -> Result<(Vec<f64>, f64)> {
    let n = x.len();
    if z.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: z.len(),
        });
    }
    let xc: Vec<C64> = x.iter().map(|&v| C64::new(v, 0.0)).collect();
    let zc: Vec<C64> = z.iter().map(|&v| C64::new(v, 0.0)).collect();
    let r: Vec<f64> = spectral::circular_xcorr(&xc, &xc).iter().map(|c| c.re).collect();
    let p = spectral::circular_xcorr(&xc, &zc);
    let c = k / 2;
    let mut a = toeplitz_real(&r, k);
    for i in 0..k {
        a[(i, i)] += ridge * r[0];
    }
    let b = DVector::from_fn(k, |i, _| {
        let m = (i as isize - c as isize).rem_euclid(n as isize) as usize;
        p[m].re
    });
    let chol = nalgebra::Cholesky::new(a).ok_or(Error::RankDeficient {
        condition: f64::INFINITY,
    })?;
    let cond = cholesky_condition(&chol.l());
    if !cond.is_finite() || cond > 1e12 {
        return Err(Error::RankDeficient { condition: cond });
    }
    Ok((chol.solve(&b).iter().copied().collect(), cond))
}

/// Normal-equation factor for complex circular LS against a fixed input.
struct ComplexLs {
    n: usize,
    k: usize,
    x: Vec<C64>,
    chol: nalgebra::Cholesky<C64, nalgebra::Dyn>,
}

impl ComplexLs {
    fn new(x: &[C64], k: usize, ridge: f64) -> Result<Self> {
        let n = x.len();
        let r = spectral::circular_xcorr(x, x);
        let mut a = DMatrix::from_fn(k, k, |i, j| {
            let l = (i as isize - j as isize).rem_euclid(n as isize) as usize;
            r[l]
        });
        let r0 = r[0].re;
        for i in 0..k {
            a[(i, i)] += C64::new(ridge * r0, 0.0);
        }
        let chol = nalgebra::Cholesky::new(a).ok_or(Error::RankDeficient {
            condition: f64::INFINITY,
        })?;
        Ok(Self {
            n,
            k,
            x: x.to_vec(),
            chol,
        })
    }

    fn solve(&self, z: &[C64]) -> Vec<C64> {
        let p = spectral::circular_xcorr(&self.x, z);
        let c = self.k / 2;
        let b = DVector::from_fn(self.k, |i, _| {
            p[(i as isize - c as isize).rem_euclid(self.n as isize) as usize]
        });
        self.chol.solve(&b).iter().copied().collect()
    }
}

// ---------------------------------------------------------------------------
// Receiver FFE

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FfeEstimate {
    pub response: FirResponse,
    /// Baseline subtracted from the raw trace before equalization.
    pub dc_offset: f64,
    pub condition: f64,
    pub mae_before: f64,
    pub mae_after: f64,
}

/// Applies a trained FFE: `h ⊛ (trace − dc)`.
pub fn apply_rx_ffe(trace: &[f64], response: &FirResponse, dc_offset: f64) -> Vec<f64> {
    let shifted: Vec<f64> = trace.iter().map(|v| v - dc_offset).collect();
    if response.taps.len() == 1 {
        let g = response.taps[0].re;
        return shifted.into_iter().map(|v| g * v).collect();
    }
    spectral::circular_convolve_real(&shifted, &response.real_taps())
}

fn median(mut v: Vec<f64>) -> f64 {
    let n = v.len();
    let mid = n / 2;
    v.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    if n % 2 == 1 {
        v[mid]
    } else {
        let hi = v[mid];
        let lo = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

/// Least-squares FFE from DC-removed measured to DC-removed expected
/// intensity, followed by the DC baseline minimizing the absolute error of
/// the equalized trace against the expected one.
pub fn train_rx_ffe(
    measured: &[f64],
    expected: &[f64],
    n_taps: usize,
    role: FirRole,
) -> Result<FfeEstimate> {
    if measured.len() != expected.len() {
        return Err(Error::LengthMismatch {
            expected: expected.len(),
            actual: measured.len(),
        });
    }
    let ym = field::mean(measured);
    let em = field::mean(expected);
    let y0: Vec<f64> = measured.iter().map(|v| v - ym).collect();
    let e0: Vec<f64> = expected.iter().map(|v| v - em).collect();
    let (taps, condition) = ls_fir_real(&y0, &e0, n_taps, 0.0)?;
    let u = if n_taps == 1 {
        y0.iter().map(|v| taps[0] * v).collect()
    } else {
        spectral::circular_convolve_real(&y0, &taps)
    };
    let sum_h: f64 = taps.iter().sum();
    if sum_h.abs() < 1e-12 {
        return Err(Error::Degenerate("FFE has no DC gain".into()));
    }
    // h ⊛ (y − d) = u + (ȳ − d)·Σh; the L1-optimal constant is a median.
    let c = median(expected.iter().zip(&u).map(|(e, u)| e - u).collect());
    let dc_offset = ym - c / sum_h;
    let response = FirResponse::from_real(&taps, role)?;
    let eq = apply_rx_ffe(measured, &response, dc_offset);
    Ok(FfeEstimate {
        mae_before: intensity_mae(expected, measured),
        mae_after: intensity_mae(expected, &eq),
        response,
        dc_offset,
        condition,
    })
}

// ---------------------------------------------------------------------------
// Reverse operators

/// Tabulated inverse of a monotonic cubic over its declared range, with
/// linear extrapolation beyond it.
#[derive(Debug, Clone)]
pub struct CubicInverse {
    c2: f64,
    c3: f64,
    y0: f64,
    dy: f64,
    table: Vec<f64>,
    slope_lo: f64,
    slope_hi: f64,
    x_lo: f64,
    x_hi: f64,
}

pub const CUBIC_TABLE_POINTS: usize = 4096;

impl CubicInverse {
    pub fn new(c2: f64, c3: f64, range: f64) -> Result<Self> {
        if cubic_min_slope(c2, c3, range) <= 0.0 {
            return Err(Error::NonMonotonic { range });
        }
        let (x_lo, x_hi) = (-range, range);
        let y_lo = cubic(x_lo, c2, c3);
        let y_hi = cubic(x_hi, c2, c3);
        let dy = (y_hi - y_lo) / (CUBIC_TABLE_POINTS - 1) as f64;
        let table = (0..CUBIC_TABLE_POINTS)
            .map(|k| {
                let y = y_lo + k as f64 * dy;
                let (mut a, mut b) = (x_lo, x_hi);
                for _ in 0..200 {
                    let m = 0.5 * (a + b);
                    if cubic(m, c2, c3) < y {
                        a = m;
                    } else {
                        b = m;
                    }
                    if b - a < 1e-15 {
                        break;
                    }
                }
                0.5 * (a + b)
            })
            .collect();
        let slope = |x: f64| 1.0 + 2.0 * c2 * x + 3.0 * c3 * x * x;
        Ok(Self {
            c2,
            c3,
            y0: y_lo,
            dy,
            table,
            slope_lo: slope(x_lo),
            slope_hi: slope(x_hi),
            x_lo,
            x_hi,
        })
    }

    pub fn eval(&self, y: f64) -> f64 {
        if self.c2 == 0.0 && self.c3 == 0.0 {
            return y;
        }
        let t = (y - self.y0) / self.dy;
        let last = (self.table.len() - 1) as f64;
        if t <= 0.0 {
            return self.x_lo + (y - self.y0) / self.slope_lo;
        }
        if t >= last {
            let y_hi = self.y0 + last * self.dy;
            return self.x_hi + (y - y_hi) / self.slope_hi;
        }
        let k = t.floor() as usize;
        let f = t - k as f64;
        let mut x = self.table[k] * (1.0 - f) + self.table[k + 1] * f;
        // One Newton step on the interpolated guess.
        let slope = 1.0 + 2.0 * self.c2 * x + 3.0 * self.c3 * x * x;
        x -= (cubic(x, self.c2, self.c3) - y) / slope;
        x
    }
}

/// Forward (Tx response → nonlinearity → IQ) and reverse distortion on a
/// fixed sample grid.
#[derive(Debug, Clone)]
pub struct DistortionModel {
    n: usize,
    fs: f64,
    tx_identity: bool,
    tx_a: Vec<C64>,
    tx_b: Vec<C64>,
    inv_p: Vec<C64>,
    inv_q: Vec<C64>,
    nl: NonlinearCoeffs,
    inv_i: CubicInverse,
    inv_q_rail: CubicInverse,
    iq: IqImpairment,
}

impl DistortionModel {
    pub fn identity(n: usize, fs: f64) -> Self {
        Self::new(
            &FirResponse::identity(FirRole::TxI),
            &FirResponse::identity(FirRole::TxQ),
            &NonlinearCoeffs::default(),
            &IqImpairment::default(),
            n,
            fs,
            1e-2,
        )
        .expect("identity model is valid")
    }

    pub fn new(
        hi: &FirResponse,
        hq: &FirResponse,
        nl: &NonlinearCoeffs,
        iq: &IqImpairment,
        n: usize,
        fs: f64,
        inverse_floor: f64,
    ) -> Result<Self> {
        iq.validate()?;
        let tx_identity = hi.is_identity() && hq.is_identity();
        let (tx_a, tx_b) = channel::widely_linear_spectra(hi, hq, n);
        // Per bin pair: [Y(k); Y(-k)*] = [[A(k), B(k)]; [B(-k)*, A(-k)*]]·[S(k); S(-k)*].
        let dets: Vec<C64> = (0..n)
            .map(|k| {
                let m = mirror_bin(k, n);
                tx_a[k] * tx_a[m].conj() - tx_b[k] * tx_b[m].conj()
            })
            .collect();
        let peak = dets.iter().fold(0.0f64, |m, d| m.max(d.norm()));
        let floor = peak * inverse_floor * inverse_floor;
        let mut inv_p = vec![C64::new(0.0, 0.0); n];
        let mut inv_q = vec![C64::new(0.0, 0.0); n];
        for k in 0..n {
            let m = mirror_bin(k, n);
            let mut det = dets[k];
            if det.norm() < floor {
                det = if det.norm() > 0.0 {
                    det / det.norm() * floor
                } else {
                    C64::new(floor, 0.0)
                };
            }
            inv_p[k] = tx_a[m].conj() / det;
            inv_q[k] = -tx_b[k] / det;
        }
        let range = nl.amplitude_range;
        Ok(Self {
            n,
            fs,
            tx_identity,
            tx_a,
            tx_b,
            inv_p,
            inv_q,
            nl: *nl,
            inv_i: CubicInverse::new(nl.c2_i, nl.c3_i, range)?,
            inv_q_rail: CubicInverse::new(nl.c2_q, nl.c3_q, range)?,
            iq: *iq,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn is_identity(&self) -> bool {
        self.tx_identity && self.nl.is_zero() && self.iq.is_zero()
    }

    pub fn forward_tx(&self, x: &[C64]) -> Vec<C64> {
        if self.tx_identity {
            return x.to_vec();
        }
        channel::apply_widely_linear(x, &self.tx_a, &self.tx_b)
    }

    /// Nonlinearity then IQ impairment.
    pub fn forward_memoryless(&self, x: &[C64]) -> Vec<C64> {
        let y = self.nl.apply_unchecked(x);
        channel::iq_forward(&y, &self.iq, self.fs)
    }

    pub fn forward(&self, x: &[C64]) -> Vec<C64> {
        self.forward_memoryless(&self.forward_tx(x))
    }

    /// Reverse IQ then reverse nonlinearity.
    pub fn reverse_memoryless(&self, y: &[C64]) -> Vec<C64> {
        let y = channel::iq_inverse(y, &self.iq, self.fs);
        if self.nl.is_zero() {
            return y;
        }
        y.iter()
            .map(|s| C64::new(self.inv_i.eval(s.re), self.inv_q_rail.eval(s.im)))
            .collect()
    }

    pub fn reverse_tx(&self, y: &[C64]) -> Vec<C64> {
        if self.tx_identity {
            return y.to_vec();
        }
        channel::apply_widely_linear(y, &self.inv_p, &self.inv_q)
    }

    pub fn reverse(&self, y: &[C64]) -> Vec<C64> {
        self.reverse_tx(&self.reverse_memoryless(y))
    }
}

// ---------------------------------------------------------------------------
// Transmitter response (Algorithm 1)

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TxEstimate {
    pub response: FirResponse,
    /// MAE of each accepted estimate, starting with the unit impulse.
    pub mae_history: Vec<f64>,
    /// MAE of the rejected update that ended the loop, if any.
    pub rejected_mae: Option<f64>,
    pub iterations: usize,
    /// False when the iteration cap was reached with MAE still decreasing.
    pub converged: bool,
}

/// Known memoryless distortion applied around the estimated response during
/// refinement loops.
#[derive(Debug, Clone, Copy)]
pub struct KnownDistortion<'a> {
    pub nl: &'a NonlinearCoeffs,
    pub iq: &'a IqImpairment,
}

/// Estimates a single complex Tx response from one equalized intensity
/// trace of the training period.
///
/// `tx_training` is the premixed training waveform at the DAC input and
/// `post_cd` the dispersion from the Tx output to the photodiode.
pub fn estimate_tx_response(
    measured: &[f64],
    tx_training: &ComplexWaveform,
    post_cd: &DispersionSpec,
    cutoff_hz: f64,
    cfg: &TrainingConfig,
    known: Option<KnownDistortion<'_>>,
) -> Result<TxEstimate> {
    let n = tx_training.len();
    if measured.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: measured.len(),
        });
    }
    let fs = tx_training.sample_rate_hz();
    let x = tx_training.samples();
    let k = cfg.tx_est_taps.min(if n % 2 == 1 { n } else { n - 1 });
    let ls = ComplexLs::new(x, k, 1e-6)?;
    let h_cd = post_cd.transfer_grid(n, fs);
    let mask = field::bandwidth_mask(n, fs, cutoff_hz);
    let amp: Vec<f64> = measured.iter().map(|v| v.max(0.0).sqrt()).collect();
    let amp_power = amp.iter().map(|a| a * a).sum::<f64>() / n as f64;

    let memoryless = known.map(|kd| {
        DistortionModel::new(
            &FirResponse::identity(FirRole::TxI),
            &FirResponse::identity(FirRole::TxQ),
            kd.nl,
            kd.iq,
            n,
            fs,
            cfg.inverse_floor,
        )
    });
    let memoryless = memoryless.transpose()?;

    // Lines 3–5: distort, propagate, compare.
    let evaluate = |h: &[C64]| -> (f64, Vec<C64>) {
        let mut s = spectral::circular_convolve_centered(x, h);
        if let Some(m) = &memoryless {
            s = m.forward_memoryless(&s);
        }
        let e = field::apply_transfer(&s, &h_cd);
        let inten: Vec<f64> = e.iter().map(|v| v.norm_sqr()).collect();
        (intensity_mae(&inten, measured), e)
    };

    let mut h = vec![C64::new(0.0, 0.0); k];
    h[k / 2] = C64::new(1.0, 0.0);
    let (mut mae, mut e) = evaluate(&h);
    let mut history = vec![mae];
    let mut rejected = None;
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..cfg.tx_est_max_iters {
        // Line 7: measured amplitude with the estimated phase.
        let e_power = e.iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
        let g = (e_power / amp_power).sqrt();
        let combined: Vec<C64> = e
            .iter()
            .zip(&amp)
            .map(|(v, a)| {
                let r = v.norm();
                if r > 0.0 {
                    v * (g * a / r)
                } else {
                    C64::new(g * a, 0.0)
                }
            })
            .collect();
        // Line 8: bandwidth constraint and CD back-propagation.
        let mut spec = spectral::fft(&combined);
        for ((v, keep), hc) in spec.iter_mut().zip(&mask).zip(&h_cd) {
            *v = if *keep { *v * hc.conj() } else { C64::new(0.0, 0.0) };
        }
        spectral::ifft_in_place(&mut spec);
        let z = match &memoryless {
            Some(m) => m.reverse_memoryless(&spec),
            None => spec,
        };
        // Line 9: least-squares response.
        let h_new = ls.solve(&z);
        let (mae_new, e_new) = evaluate(&h_new);
        // Line 6: stop when the error grows.
        if !(mae_new <= mae) {
            rejected = Some(mae_new);
            converged = true;
            break;
        }
        h = h_new;
        mae = mae_new;
        e = e_new;
        history.push(mae);
        iterations += 1;
    }
    Ok(TxEstimate {
        response: FirResponse::new(h, FirRole::TxI)?,
        mae_history: history,
        rejected_mae: rejected,
        iterations,
        converged,
    })
}

// ---------------------------------------------------------------------------
// IQ impairments and nonlinearity (greedy grid search)

/// Search order of the greedy coordinate descent.
pub const IQ_NL_ORDER: [&str; 7] = ["phi", "tau", "rho", "c2_i", "c2_q", "c3_i", "c3_q"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridStep {
    pub round: usize,
    pub parameter: String,
    pub value: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IqNlEstimate {
    pub iq: IqImpairment,
    pub nl: NonlinearCoeffs,
    pub objective_start: f64,
    pub objective_end: f64,
    pub steps: Vec<GridStep>,
    pub boundary_warnings: Vec<String>,
}

/// Objective of the IQ / nonlinearity search: summed intensity MAE of the
/// emulated training intensity on each supplied branch.
pub struct IqNlObjective<'a> {
    tx_out: Vec<C64>,
    measured: Vec<&'a [f64]>,
    transfers: Vec<Vec<C64>>,
    fs: f64,
    amplitude_range: f64,
}

impl<'a> IqNlObjective<'a> {
    /// `tx_out` is the training waveform after the (estimated) Tx response.
    pub fn new(
        tx_out: Vec<C64>,
        measured: Vec<&'a [f64]>,
        post_cd: &[DispersionSpec],
        fs: f64,
        amplitude_range: f64,
    ) -> Self {
        let n = tx_out.len();
        let transfers = post_cd.iter().map(|d| d.transfer_grid(n, fs)).collect();
        Self {
            tx_out,
            measured,
            transfers,
            fs,
            amplitude_range,
        }
    }

    pub fn params(p: &[f64; 7], fs: f64, range: f64) -> (IqImpairment, NonlinearCoeffs) {
        let iq = IqImpairment {
            phi: p[0],
            tau_s: p[1] / fs,
            rho: p[2],
        };
        let nl = NonlinearCoeffs {
            c2_i: p[3],
            c2_q: p[4],
            c3_i: p[5],
            c3_q: p[6],
            amplitude_range: range,
        };
        (iq, nl)
    }

    pub fn eval(&self, p: &[f64; 7]) -> f64 {
        let (iq, nl) = Self::params(p, self.fs, self.amplitude_range);
        if !nl.is_monotonic(self.amplitude_range) || iq.validate().is_err() {
            return f64::INFINITY;
        }
        let s = channel::iq_forward(&nl.apply_unchecked(&self.tx_out), &iq, self.fs);
        let spec = spectral::fft(&s);
        let mut total = 0.0;
        for (h, y) in self.transfers.iter().zip(&self.measured) {
            let mut e: Vec<C64> = spec.iter().zip(h).map(|(a, b)| a * b).collect();
            spectral::ifft_in_place(&mut e);
            let inten: Vec<f64> = e.iter().map(|v| v.norm_sqr()).collect();
            total += intensity_mae(&inten, y);
        }
        total
    }
}

/// Greedy coordinate grid search over (φ, τ, ρ, c2_I, c2_Q, c3_I, c3_Q),
/// each starting from zero, repeated `cfg.grid_rounds` times.
pub fn estimate_iq_nl(objective: &IqNlObjective<'_>, cfg: &TrainingConfig) -> IqNlEstimate {
    let g = &cfg.grid;
    let axes = [g.phi, g.tau, g.rho, g.c2, g.c2, g.c3, g.c3];
    let mut p = [0.0f64; 7];
    let start = objective.eval(&p);
    let mut current = start;
    let mut steps = Vec::new();
    for round in 0..cfg.grid_rounds {
        for (idx, axis) in axes.iter().enumerate() {
            let candidates = axis.points();
            let values: Vec<f64> = candidates
                .par_iter()
                .map(|&v| {
                    let mut q = p;
                    q[idx] = v;
                    objective.eval(&q)
                })
                .collect();
            let mut best = (p[idx], current);
            for (&v, &o) in candidates.iter().zip(&values) {
                if o < best.1 || (o == best.1 && v.abs() < best.0.abs()) {
                    best = (v, o);
                }
            }
            p[idx] = best.0;
            current = best.1;
            steps.push(GridStep {
                round,
                parameter: IQ_NL_ORDER[idx].to_string(),
                value: best.0,
                objective: best.1,
            });
        }
    }
    let boundary_warnings = IQ_NL_ORDER
        .iter()
        .zip(axes.iter())
        .zip(p.iter())
        .filter(|((_, a), v)| a.on_boundary(**v))
        .map(|((name, _), v)| format!("{name} = {v} lies on the grid boundary"))
        .collect();
    let (iq, nl) = IqNlObjective::params(&p, objective.fs, objective.amplitude_range);
    IqNlEstimate {
        iq,
        nl,
        objective_start: start,
        objective_end: current,
        steps,
        boundary_warnings,
    }
}

// ---------------------------------------------------------------------------
// Full training stage

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopSnapshot {
    pub loop_index: usize,
    pub ffe: [FfeEstimate; 2],
    pub tx: Option<TxEstimate>,
    pub iq_nl: Option<IqNlEstimate>,
    /// Summed intensity MAE of both branches with this loop's estimates.
    pub objective: f64,
    pub intensity_snr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingDiagnostics {
    pub cd: [CdEstimate; 2],
    pub loops: Vec<LoopSnapshot>,
    /// Training intensity SNR with distortion ignored (first-pass FFE).
    pub baseline_snr_db: f64,
    /// Training intensity SNR with the final estimated distortion.
    pub emulated_snr_db: f64,
    pub warnings: Vec<String>,
}

/// Everything the reconstructor needs to emulate and undo the link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelEstimate {
    /// Dispersion from the un-premixed Tx field to each photodiode.
    pub dispersion: [DispersionSpec; 2],
    pub premix: DispersionSpec,
    pub sync_lag: [usize; 2],
    pub rx_ffe: [FirResponse; 2],
    pub dc_offset: [f64; 2],
    pub tx_response_i: FirResponse,
    pub tx_response_q: FirResponse,
    pub nl: NonlinearCoeffs,
    pub iq: IqImpairment,
    pub inverse_floor: f64,
    pub diagnostics: Option<TrainingDiagnostics>,
}

impl ChannelEstimate {
    /// Dispersion between the Tx output (after premix) and the photodiode.
    pub fn post_premix_dispersion(&self, branch: Branch) -> DispersionSpec {
        self.dispersion[branch.index()].minus(self.premix)
    }

    pub fn distortion_model(&self, n: usize, fs: f64) -> Result<DistortionModel> {
        DistortionModel::new(
            &self.tx_response_i,
            &self.tx_response_q,
            &self.nl,
            &self.iq,
            n,
            fs,
            self.inverse_floor,
        )
    }

    /// FFE-equalized full trace of one branch.
    pub fn equalize(&self, trace: &IntensityTrace) -> Vec<f64> {
        let b = trace.branch.index();
        apply_rx_ffe(&trace.samples, &self.rx_ffe[b], self.dc_offset[b])
    }

    /// Copy without distortion emulation (Tx response, IQ and nonlinearity
    /// reset to identity).
    pub fn without_distortion(&self) -> Self {
        Self {
            tx_response_i: FirResponse::identity(FirRole::TxI),
            tx_response_q: FirResponse::identity(FirRole::TxQ),
            nl: NonlinearCoeffs {
                amplitude_range: self.nl.amplitude_range,
                ..NonlinearCoeffs::default()
            },
            iq: IqImpairment::default(),
            ..self.clone()
        }
    }
}

/// Shaped, un-premixed training period and its premixed version.
pub fn training_waveforms(
    spec: &FrameSpec,
    training_symbols: &[C64],
) -> Result<(ComplexWaveform, ComplexWaveform)> {
    let shaper = RrcShaper::new(
        training_symbols.len(),
        spec.rolloff,
        spec.samples_per_symbol,
        spec.symbol_rate_baud,
    )?;
    let x0 = ComplexWaveform::new(shaper.shape(training_symbols), shaper.sample_rate())?;
    let x = field::propagate_cd(&x0, &spec.premix_dispersion)?;
    Ok((x0, x))
}

fn emulate(x: &[C64], model: &DistortionModel, post_cd: &DispersionSpec, fs: f64) -> Vec<f64> {
    let s = model.forward(x);
    let h = post_cd.transfer_grid(s.len(), fs);
    field::apply_transfer(&s, &h)
        .iter()
        .map(|v| v.norm_sqr())
        .collect()
}

/// Runs the training stage on both traces of a frame.
pub fn run_training(
    traces: &[IntensityTrace; 2],
    spec: &FrameSpec,
    training_symbols: &[C64],
    cfg: &TrainingConfig,
) -> Result<ChannelEstimate> {
    cfg.validate()?;
    spec.validate()?;
    let (x0, x) = training_waveforms(spec, training_symbols).map_err(|e| e.in_stage("training"))?;
    let fs = x.sample_rate_hz();
    let n = x.len();
    let cutoff = spec.band_edge_hz();
    let mut warnings = Vec::new();

    let cd: Vec<CdEstimate> = traces
        .par_iter()
        .map(|t| estimate_cd(t, &x0, &cfg.cd_search))
        .collect::<Result<_>>()
        .map_err(|e| e.in_stage("dispersion estimation"))?;
    let cd = [cd[0], cd[1]];
    for (b, c) in cd.iter().enumerate() {
        if c.ambiguous {
            warnings.push(format!("branch {} dispersion estimate is ambiguous", b + 1));
        }
    }
    let dispersion = [cd[0].dispersion, cd[1].dispersion];
    let post = [
        dispersion[0].minus(spec.premix_dispersion),
        dispersion[1].minus(spec.premix_dispersion),
    ];
    let windows: Vec<Vec<f64>> = traces
        .iter()
        .zip(&cd)
        .map(|(t, c)| t.window(c.lag as isize, n))
        .collect();

    let mut est = ChannelEstimate {
        dispersion,
        premix: spec.premix_dispersion,
        sync_lag: [cd[0].lag, cd[1].lag],
        rx_ffe: [
            FirResponse::identity(FirRole::RxBranch1),
            FirResponse::identity(FirRole::RxBranch2),
        ],
        dc_offset: [0.0, 0.0],
        tx_response_i: FirResponse::identity(FirRole::TxI),
        tx_response_q: FirResponse::identity(FirRole::TxQ),
        nl: NonlinearCoeffs {
            amplitude_range: cfg.amplitude_range,
            ..NonlinearCoeffs::default()
        },
        iq: IqImpairment::default(),
        inverse_floor: cfg.inverse_floor,
        diagnostics: None,
    };

    let roles = [FirRole::RxBranch1, FirRole::RxBranch2];
    let mut loops = Vec::new();
    let mut baseline_snr = f64::NAN;
    let mut final_snr = f64::NAN;
    for loop_index in 0..=cfg.refinement_loops {
        let model = est.distortion_model(n, fs)?;
        let expected: Vec<Vec<f64>> = (0..2).map(|b| emulate(x.samples(), &model, &post[b], fs)).collect();
        let ffe: Vec<FfeEstimate> = if cfg.estimate_rx_ffe {
            (0..2)
                .map(|b| train_rx_ffe(&windows[b], &expected[b], cfg.ffe_taps, roles[b]))
                .collect::<Result<_>>()
                .map_err(|e| e.in_stage("rx ffe"))?
        } else {
            (0..2)
                .map(|b| {
                    let mae = intensity_mae(&expected[b], &windows[b]);
                    FfeEstimate {
                        response: FirResponse::identity(roles[b]),
                        dc_offset: 0.0,
                        condition: 1.0,
                        mae_before: mae,
                        mae_after: mae,
                    }
                })
                .collect()
        };
        let eq: Vec<Vec<f64>> = (0..2)
            .map(|b| apply_rx_ffe(&windows[b], &ffe[b].response, ffe[b].dc_offset))
            .collect();
        if loop_index == 0 {
            baseline_snr = 0.5
                * (intensity_snr_db(&expected[0], &eq[0]) + intensity_snr_db(&expected[1], &eq[1]));
        }
        for (b, f) in ffe.iter().enumerate() {
            est.rx_ffe[b] = f.response.clone();
            est.dc_offset[b] = f.dc_offset;
        }

        let tx = if cfg.estimate_tx_response {
            let b = cfg.tx_est_branch.index();
            let known = (loop_index > 0).then_some(KnownDistortion {
                nl: &est.nl,
                iq: &est.iq,
            });
            let t = estimate_tx_response(&eq[b], &x, &post[b], cutoff, cfg, known)
                .map_err(|e| e.in_stage("tx response"))?;
            if !t.converged {
                warnings.push(format!(
                    "loop {loop_index}: tx response estimator hit the iteration cap"
                ));
            }
            est.tx_response_i = FirResponse::new(t.response.taps.clone(), FirRole::TxI)?;
            est.tx_response_q = FirResponse::new(t.response.taps.clone(), FirRole::TxQ)?;
            Some(t)
        } else {
            None
        };

        let iq_nl = if cfg.estimate_iq_nl {
            let tx_model = DistortionModel::new(
                &est.tx_response_i,
                &est.tx_response_q,
                &NonlinearCoeffs::default(),
                &IqImpairment::default(),
                n,
                fs,
                cfg.inverse_floor,
            )?;
            let obj = IqNlObjective::new(
                tx_model.forward_tx(x.samples()),
                vec![eq[0].as_slice(), eq[1].as_slice()],
                &post,
                fs,
                cfg.amplitude_range,
            );
            let r = estimate_iq_nl(&obj, cfg);
            for w in &r.boundary_warnings {
                warnings.push(format!("loop {loop_index}: {w}"));
            }
            est.iq = r.iq;
            est.nl = r.nl;
            Some(r)
        } else {
            None
        };

        let model = est.distortion_model(n, fs)?;
        let emulated: Vec<Vec<f64>> = (0..2).map(|b| emulate(x.samples(), &model, &post[b], fs)).collect();
        let objective = intensity_mae(&emulated[0], &eq[0]) + intensity_mae(&emulated[1], &eq[1]);
        final_snr =
            0.5 * (intensity_snr_db(&emulated[0], &eq[0]) + intensity_snr_db(&emulated[1], &eq[1]));
        loops.push(LoopSnapshot {
            loop_index,
            ffe: [ffe[0].clone(), ffe[1].clone()],
            tx,
            iq_nl,
            objective,
            intensity_snr_db: final_snr,
        });
    }

    est.diagnostics = Some(TrainingDiagnostics {
        cd,
        loops,
        baseline_snr_db: baseline_snr,
        emulated_snr_db: final_snr,
        warnings,
    });
    Ok(est)
}
