//! Sampled optical fields and the linear operations acting on them.
//!
//! All propagation is circular: a waveform is treated as one period of a
//! block-periodic signal, which is what the cyclic guard and payload
//! repetition of the frame layout rely on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{self, fft_freqs};
use crate::C64;

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Default operating wavelength (nm).
pub const DEFAULT_WAVELENGTH_NM: f64 = 1541.02;

/// Uniformly sampled complex baseband field.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexWaveform {
    samples: Vec<C64>,
    sample_rate_hz: f64,
}

impl ComplexWaveform {
    pub fn new(samples: Vec<C64>, sample_rate_hz: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("waveform must be nonempty"));
        }
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::invalid("sample rate must be positive"));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[C64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [C64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<C64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        energy(&self.samples)
    }

    pub fn mean_power(&self) -> f64 {
        self.energy() / self.len() as f64
    }

    /// Same sample rate, new samples.
    pub fn with_samples(&self, samples: Vec<C64>) -> Self {
        debug_assert!(!samples.is_empty());
        Self {
            samples,
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    pub fn scaled(&self, gain: f64) -> Self {
        self.with_samples(self.samples.iter().map(|s| s * gain).collect())
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        match self.samples.iter().position(|s| !s.re.is_finite() || !s.im.is_finite()) {
            Some(i) => Err(Error::NonFinite(i)),
            None => Ok(()),
        }
    }
}

/// Receiver branch a photocurrent was measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Branch carrying the dispersive element (photodiode 1).
    Dispersed,
    /// Branch without the dispersive element (photodiode 2).
    Undispersed,
}

impl Branch {
    pub const BOTH: [Branch; 2] = [Branch::Dispersed, Branch::Undispersed];

    pub fn index(self) -> usize {
        match self {
            Branch::Dispersed => 0,
            Branch::Undispersed => 1,
        }
    }

    pub fn id(self) -> u8 {
        self.index() as u8 + 1
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            1 => Some(Branch::Dispersed),
            2 => Some(Branch::Undispersed),
            _ => None,
        }
    }
}

/// Real photocurrent samples from one receiver branch.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityTrace {
    pub samples: Vec<f64>,
    pub sample_rate_hz: f64,
    pub branch: Branch,
}

impl IntensityTrace {
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64, branch: Branch) -> Self {
        Self {
            samples,
            sample_rate_hz,
            branch,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean(&self) -> f64 {
        mean(&self.samples)
    }

    /// Circular window of `len` samples starting at `start`.
    pub fn window(&self, start: isize, len: usize) -> Vec<f64> {
        let n = self.samples.len() as isize;
        (0..len as isize)
            .map(|i| self.samples[(start + i).rem_euclid(n) as usize])
            .collect()
    }

    /// `√max(I, 0)` for each sample.
    pub fn amplitudes(&self) -> Vec<f64> {
        self.samples.iter().map(|&v| v.max(0.0).sqrt()).collect()
    }
}

/// Chromatic dispersion of a fiber span or dispersive element.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionSpec {
    pub dispersion_ps_per_nm: f64,
    #[serde(default = "default_wavelength")]
    pub center_wavelength_nm: f64,
}

fn default_wavelength() -> f64 {
    DEFAULT_WAVELENGTH_NM
}

impl Default for DispersionSpec {
    fn default() -> Self {
        Self::new(0.0)
    }
}

impl DispersionSpec {
    pub fn new(dispersion_ps_per_nm: f64) -> Self {
        Self {
            dispersion_ps_per_nm,
            center_wavelength_nm: DEFAULT_WAVELENGTH_NM,
        }
    }

    pub fn negate(self) -> Self {
        Self {
            dispersion_ps_per_nm: -self.dispersion_ps_per_nm,
            ..self
        }
    }

    /// Cascaded dispersion; values add at a common wavelength.
    pub fn plus(self, other: DispersionSpec) -> Self {
        Self {
            dispersion_ps_per_nm: self.dispersion_ps_per_nm + other.dispersion_ps_per_nm,
            ..self
        }
    }

    pub fn minus(self, other: DispersionSpec) -> Self {
        self.plus(other.negate())
    }

    /// Quadratic phase coefficient `β` such that `H(f) = exp(-j β f²)`.
    pub fn phase_coefficient(&self) -> f64 {
        // ps/nm -> s/m
        let d = self.dispersion_ps_per_nm * 1e-3;
        let lambda = self.center_wavelength_nm * 1e-9;
        std::f64::consts::PI * d * lambda * lambda / SPEED_OF_LIGHT
    }

    pub fn transfer(&self, freq_hz: f64) -> C64 {
        C64::from_polar(1.0, -self.phase_coefficient() * freq_hz * freq_hz)
    }

    /// Frequency response on the length-`n` DFT grid.
    pub fn transfer_grid(&self, n: usize, sample_rate_hz: f64) -> Vec<C64> {
        fft_freqs(n, sample_rate_hz)
            .into_iter()
            .map(|f| self.transfer(f))
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.dispersion_ps_per_nm == 0.0
    }
}

/// Which part of the link an FIR response models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirRole {
    TxI,
    TxQ,
    RxBranch1,
    RxBranch2,
}

/// Odd-length FIR response whose middle tap is the zero-delay reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirResponse {
    pub taps: Vec<C64>,
    pub reference: FirRole,
}

impl FirResponse {
    pub fn new(taps: Vec<C64>, reference: FirRole) -> Result<Self> {
        if taps.is_empty() || taps.len().is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "FIR tap count must be odd and >= 1, got {}",
                taps.len()
            )));
        }
        Ok(Self { taps, reference })
    }

    pub fn identity(reference: FirRole) -> Self {
        Self {
            taps: vec![C64::new(1.0, 0.0)],
            reference,
        }
    }

    pub fn from_real(taps: &[f64], reference: FirRole) -> Result<Self> {
        Self::new(taps.iter().map(|&t| C64::new(t, 0.0)).collect(), reference)
    }

    pub fn center(&self) -> usize {
        self.taps.len() / 2
    }

    pub fn is_identity(&self) -> bool {
        let c = self.center();
        self.taps
            .iter()
            .enumerate()
            .all(|(k, t)| if k == c { *t == C64::new(1.0, 0.0) } else { t.norm_sqr() == 0.0 })
    }

    pub fn is_real(&self) -> bool {
        self.taps.iter().all(|t| t.im == 0.0)
    }

    pub fn real_taps(&self) -> Vec<f64> {
        self.taps.iter().map(|t| t.re).collect()
    }

    /// DFT of the centered taps on a length-`n` grid.
    pub fn spectrum(&self, n: usize) -> Vec<C64> {
        spectral::centered_taps_spectrum(&self.taps, n)
    }
}

/// Applies chromatic dispersion `H(f) = exp(-jπ D λ² f² / c)` circularly.
pub fn propagate_cd(w: &ComplexWaveform, d: &DispersionSpec) -> Result<ComplexWaveform> {
    w.check_finite()?;
    if d.is_zero() {
        return Ok(w.clone());
    }
    let h = d.transfer_grid(w.len(), w.sample_rate_hz());
    Ok(w.with_samples(apply_transfer(w.samples(), &h)))
}

/// Multiplies the spectrum of `x` by `h` (same length) and returns to time.
pub fn apply_transfer(x: &[C64], h: &[C64]) -> Vec<C64> {
    let mut buf = spectral::fft(x);
    for (b, hk) in buf.iter_mut().zip(h) {
        *b *= hk;
    }
    spectral::ifft_in_place(&mut buf);
    buf
}

/// Circular impulse response of the dispersion operator on an `n`-point
/// grid (index 0 is zero delay).
pub fn cd_kernel(n: usize, sample_rate_hz: f64, d: &DispersionSpec) -> Vec<C64> {
    spectral::ifft(&d.transfer_grid(n, sample_rate_hz))
}

/// Explicit matrix-vector propagation `b_i = Σ_k H_{i,k} a_k` with
/// `H_{i,k} = kernel[(i - k) mod N]` (zero beyond the kernel length).
///
/// O(N²); kept as an oracle for the FFT path.
pub fn toeplitz_propagate(w: &ComplexWaveform, kernel: &[C64]) -> Result<ComplexWaveform> {
    if kernel.is_empty() {
        return Err(Error::invalid("kernel must be nonempty"));
    }
    let n = w.len();
    if kernel.len() > n {
        return Err(Error::invalid("kernel longer than waveform"));
    }
    let a = w.samples();
    let out = (0..n)
        .map(|i| {
            let mut acc = C64::new(0.0, 0.0);
            for (k, ak) in a.iter().enumerate() {
                let lag = (i + n - k) % n;
                if lag < kernel.len() {
                    acc += kernel[lag] * ak;
                }
            }
            acc
        })
        .collect();
    Ok(w.with_samples(out))
}

/// Raised-cosine power spectrum (peak 1) at `freq_hz` for symbol rate `rs`.
pub fn raised_cosine_spectrum(freq_hz: f64, symbol_rate: f64, rolloff: f64) -> f64 {
    let af = freq_hz.abs();
    let f1 = (1.0 - rolloff) * symbol_rate / 2.0;
    let f2 = (1.0 + rolloff) * symbol_rate / 2.0;
    if rolloff == 0.0 {
        return if af < f1 {
            1.0
        } else if af == f1 {
            0.5
        } else {
            0.0
        };
    }
    if af <= f1 {
        1.0
    } else if af >= f2 {
        0.0
    } else {
        0.5 * (1.0 + (std::f64::consts::PI / (rolloff * symbol_rate) * (af - f1)).cos())
    }
}

/// Root-raised-cosine pulse shaping and matched filtering on block-periodic
/// symbol streams, done exactly in the frequency domain.
///
/// `shape` produces a waveform whose mean sample power equals the mean symbol
/// power; `matched` is its left inverse.
#[derive(Debug, Clone)]
pub struct RrcShaper {
    pub rolloff: f64,
    pub sps: usize,
    pub symbol_rate: f64,
    n_symbols: usize,
    root: Vec<f64>,
}

impl RrcShaper {
    pub fn new(n_symbols: usize, rolloff: f64, sps: usize, symbol_rate: f64) -> Result<Self> {
        if sps < 1 {
            return Err(Error::invalid("samples per symbol must be >= 1"));
        }
        if !(0.0..=1.0).contains(&rolloff) {
            return Err(Error::invalid("rolloff must lie in [0, 1]"));
        }
        if n_symbols == 0 {
            return Err(Error::invalid("symbol stream must be nonempty"));
        }
        let m = n_symbols * sps;
        let fs = symbol_rate * sps as f64;
        let root = fft_freqs(m, fs)
            .into_iter()
            .map(|f| raised_cosine_spectrum(f, symbol_rate, rolloff).sqrt())
            .collect();
        Ok(Self {
            rolloff,
            sps,
            symbol_rate,
            n_symbols,
            root,
        })
    }

    pub fn n_symbols(&self) -> usize {
        self.n_symbols
    }

    pub fn n_samples(&self) -> usize {
        self.n_symbols * self.sps
    }

    pub fn sample_rate(&self) -> f64 {
        self.symbol_rate * self.sps as f64
    }

    /// One-sided occupied bandwidth `(1 + α) Rs / 2`.
    pub fn band_edge_hz(&self) -> f64 {
        (1.0 + self.rolloff) * self.symbol_rate / 2.0
    }

    pub fn shape(&self, symbols: &[C64]) -> Vec<C64> {
        assert_eq!(symbols.len(), self.n_symbols);
        let spec = spectral::fft(symbols);
        self.shape_spectrum(&spec)
    }

    /// Shapes from the symbol-rate spectrum (length `n_symbols`).
    pub fn shape_spectrum(&self, symbol_spectrum: &[C64]) -> Vec<C64> {
        let n = self.n_symbols;
        let gain = self.sps as f64;
        let mut buf: Vec<C64> = (0..self.n_samples())
            .map(|m| symbol_spectrum[m % n] * (gain * self.root[m]))
            .collect();
        spectral::ifft_in_place(&mut buf);
        buf
    }

    pub fn matched(&self, samples: &[C64]) -> Vec<C64> {
        let spec = spectral::fft(samples);
        let mut sym = self.matched_spectrum(&spec);
        spectral::ifft_in_place(&mut sym);
        sym
    }

    /// Matched filter and decimation from the sample-rate spectrum; returns
    /// the symbol-rate spectrum.
    pub fn matched_spectrum(&self, spectrum: &[C64]) -> Vec<C64> {
        assert_eq!(spectrum.len(), self.n_samples());
        let n = self.n_symbols;
        let mut out = vec![C64::new(0.0, 0.0); n];
        for (m, (x, r)) in spectrum.iter().zip(&self.root).enumerate() {
            out[m % n] += x * *r;
        }
        let inv = 1.0 / self.sps as f64;
        for o in out.iter_mut() {
            *o *= inv;
        }
        out
    }
}

/// Upsamples `symbols` by `sps` and applies root-raised-cosine shaping.
pub fn rrc_shape(
    symbols: &[C64],
    rolloff: f64,
    sps: usize,
    symbol_rate: f64,
) -> Result<ComplexWaveform> {
    let shaper = RrcShaper::new(symbols.len(), rolloff, sps, symbol_rate)?;
    ComplexWaveform::new(shaper.shape(symbols), shaper.sample_rate())
}

/// Matched filter and symbol-center decimation for [`rrc_shape`] output.
pub fn rrc_matched(w: &ComplexWaveform, rolloff: f64, sps: usize) -> Result<Vec<C64>> {
    if !w.len().is_multiple_of(sps) {
        return Err(Error::invalid("waveform length is not a multiple of sps"));
    }
    let rs = w.sample_rate_hz() / sps as f64;
    let shaper = RrcShaper::new(w.len() / sps, rolloff, sps, rs)?;
    Ok(shaper.matched(w.samples()))
}

/// Continuous-time root-raised-cosine pulse (unit peak energy per symbol)
/// evaluated at `t` symbol periods.
pub fn rrc_pulse(t: f64, rolloff: f64) -> f64 {
    use std::f64::consts::PI;
    let a = rolloff;
    if t == 0.0 {
        return 1.0 - a + 4.0 * a / PI;
    }
    if a > 0.0 && (4.0 * a * t).abs() == 1.0 {
        return a / 2f64.sqrt()
            * ((1.0 + 2.0 / PI) * (PI / (4.0 * a)).sin() + (1.0 - 2.0 / PI) * (PI / (4.0 * a)).cos());
    }
    let num = (PI * t * (1.0 - a)).sin() + 4.0 * a * t * (PI * t * (1.0 + a)).cos();
    let den = PI * t * (1.0 - (4.0 * a * t).powi(2));
    num / den
}

/// Time-domain RRC taps spanning `span_symbols` symbols, energy-normalized.
pub fn rrc_taps(rolloff: f64, sps: usize, span_symbols: usize) -> Vec<f64> {
    let half = (span_symbols * sps) / 2;
    let mut taps: Vec<f64> = (0..=2 * half)
        .map(|k| rrc_pulse((k as f64 - half as f64) / sps as f64, rolloff))
        .collect();
    let e = taps.iter().map(|t| t * t).sum::<f64>().sqrt();
    for t in taps.iter_mut() {
        *t /= e;
    }
    taps
}

/// Ideal brick-wall low-pass keeping `|f| <= cutoff_hz`.
pub fn bandwidth_filter(w: &ComplexWaveform, cutoff_hz: f64) -> Result<ComplexWaveform> {
    if !(cutoff_hz > 0.0) {
        return Err(Error::invalid("cutoff must be positive"));
    }
    let mask = bandwidth_mask(w.len(), w.sample_rate_hz(), cutoff_hz);
    let mut buf = spectral::fft(w.samples());
    for (b, keep) in buf.iter_mut().zip(&mask) {
        if !keep {
            *b = C64::new(0.0, 0.0);
        }
    }
    spectral::ifft_in_place(&mut buf);
    Ok(w.with_samples(buf))
}

pub fn bandwidth_mask(n: usize, sample_rate_hz: f64, cutoff_hz: f64) -> Vec<bool> {
    fft_freqs(n, sample_rate_hz)
        .into_iter()
        .map(|f| f.abs() <= cutoff_hz)
        .collect()
}

/// Square-law detection `|w|²`.
pub fn square_law(w: &ComplexWaveform, branch: Branch) -> IntensityTrace {
    IntensityTrace::new(
        w.samples().iter().map(|s| s.norm_sqr()).collect(),
        w.sample_rate_hz(),
        branch,
    )
}

pub fn energy(x: &[C64]) -> f64 {
    x.iter().map(|s| s.norm_sqr()).sum()
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// `‖a - b‖ / ‖b‖`.
pub fn relative_l2(a: &[C64], b: &[C64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    (num / energy(b)).sqrt()
}

/// Peak-to-average power ratio in dB of a real waveform (`max x² / mean x²`).
pub fn papr_db_real(x: &[f64]) -> f64 {
    let peak = x.iter().map(|v| v * v).fold(0.0, f64::max);
    let avg = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    10.0 * (peak / avg).log10()
}

pub fn papr_db(x: &[C64]) -> f64 {
    let peak = x.iter().map(|v| v.norm_sqr()).fold(0.0, f64::max);
    10.0 * (peak / (energy(x) / x.len() as f64)).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(n: usize, seed: u64, fs: f64) -> ComplexWaveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = (0..n)
            .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        ComplexWaveform::new(s, fs).unwrap()
    }

    #[test]
    fn zero_dispersion_is_identity() {
        let w = random_field(64, 1, 100e9);
        let out = propagate_cd(&w, &DispersionSpec::new(0.0)).unwrap();
        assert_eq!(out, w);
    }

    #[test]
    fn cd_rejects_non_finite() {
        let mut w = random_field(8, 2, 1.0);
        w.samples_mut()[3] = C64::new(f64::NAN, 0.0);
        assert!(matches!(
            propagate_cd(&w, &DispersionSpec::new(10.0)),
            Err(Error::NonFinite(3))
        ));
    }

    #[test]
    fn impulse_spreads_about_sixty_symbols() {
        // 1 sample per symbol at 50 GBaud.
        let n = 1024;
        let mut s = vec![C64::new(0.0, 0.0); n];
        s[n / 2] = C64::new(1.0, 0.0);
        let w = ComplexWaveform::new(s, 50e9).unwrap();
        let out = propagate_cd(&w, &DispersionSpec::new(-3000.0)).unwrap();
        let p: Vec<f64> = out.samples().iter().map(|x| x.norm_sqr()).collect();
        let total: f64 = p.iter().sum();
        // Shortest centered interval holding 99% of the energy.
        let mut width = 0;
        for half in 0..n / 2 {
            let e: f64 = p[n / 2 - half..=n / 2 + half].iter().sum();
            if e >= 0.99 * total {
                width = 2 * half + 1;
                break;
            }
        }
        assert!((55..=70).contains(&width), "width {width}");
    }

    #[test]
    fn fir_rejects_even_taps() {
        assert!(FirResponse::new(vec![C64::new(1.0, 0.0); 2], FirRole::TxI).is_err());
        assert!(FirResponse::new(vec![], FirRole::TxI).is_err());
        assert!(FirResponse::identity(FirRole::RxBranch1).is_identity());
    }

    #[test]
    fn toeplitz_identity_kernel() {
        let w = random_field(32, 3, 1.0);
        let out = toeplitz_propagate(&w, &[C64::new(1.0, 0.0)]).unwrap();
        assert!(relative_l2(out.samples(), w.samples()) < 1e-15);
        assert!(toeplitz_propagate(&w, &[]).is_err());
    }

    #[test]
    fn toeplitz_unit_row_energy_preserves_energy() {
        // A random kernel with unit energy and a full-length all-pass spectrum
        // keeps row energy at one; use a random-phase all-pass kernel.
        let n = 64;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec: Vec<C64> = (0..n)
            .map(|_| C64::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU))
            .collect();
        let kernel = crate::spectral::ifft(&spec);
        let row_energy: f64 = kernel.iter().map(|k| k.norm_sqr()).sum();
        assert!((row_energy - 1.0).abs() < 1e-12);
        let w = random_field(n, 4, 1.0);
        let out = toeplitz_propagate(&w, &kernel).unwrap();
        assert!((out.energy() - w.energy()).abs() / w.energy() < 1e-10);
    }

    #[test]
    fn rrc_single_symbol_is_pulse() {
        let n = 512;
        let mut sym = vec![C64::new(0.0, 0.0); n];
        sym[n / 2] = C64::new(1.0, 0.0);
        let w = rrc_shape(&sym, 0.25, 4, 1.0).unwrap();
        for k in -40i64..=40 {
            let idx = (n as i64 / 2 * 4 + k) as usize;
            let expect = rrc_pulse(k as f64 / 4.0, 0.25);
            assert!(
                (w.samples()[idx].re - expect).abs() < 1e-3,
                "k={k}: {} vs {}",
                w.samples()[idx].re,
                expect
            );
        }
    }

    #[test]
    fn rrc_rejects_bad_args() {
        assert!(rrc_shape(&[C64::new(1.0, 0.0)], 0.1, 0, 1.0).is_err());
        assert!(rrc_shape(&[C64::new(1.0, 0.0)], 1.5, 2, 1.0).is_err());
    }

    #[test]
    fn rrc_taps_are_normalized_and_symmetric() {
        let t = rrc_taps(0.01, 2, 64);
        assert_eq!(t.len(), 129);
        let e: f64 = t.iter().map(|x| x * x).sum();
        assert!((e - 1.0).abs() < 1e-12);
        for k in 0..t.len() {
            assert!((t[k] - t[t.len() - 1 - k]).abs() < 1e-12);
        }
    }

    #[test]
    fn brick_wall_nyquist_is_identity() {
        let w = random_field(128, 5, 10.0);
        let out = bandwidth_filter(&w, 5.0).unwrap();
        assert!(relative_l2(out.samples(), w.samples()) < 1e-14);
        assert!(bandwidth_filter(&w, 0.0).is_err());
    }

    #[test]
    fn brick_wall_kills_out_of_band_tone() {
        let n = 256;
        let fs = 256.0;
        let s = (0..n)
            .map(|k| C64::from_polar(1.0, std::f64::consts::TAU * 100.0 * k as f64 / fs))
            .collect();
        let w = ComplexWaveform::new(s, fs).unwrap();
        let out = bandwidth_filter(&w, 50.0).unwrap();
        assert!(out.energy() < 1e-20 * w.energy());
    }

    #[test]
    fn brick_wall_leaves_in_band_signal() {
        let w = random_field(256, 6, 1.0);
        let once = bandwidth_filter(&w, 0.2).unwrap();
        let twice = bandwidth_filter(&once, 0.2).unwrap();
        assert!(relative_l2(twice.samples(), once.samples()) < 1e-12);
    }

    #[test]
    fn square_law_basics() {
        let zero = ComplexWaveform::new(vec![C64::new(0.0, 0.0); 4], 1.0).unwrap();
        assert!(square_law(&zero, Branch::Dispersed).samples.iter().all(|&v| v == 0.0));
        let two = ComplexWaveform::new(vec![C64::new(0.0, 2.0); 4], 1.0).unwrap();
        assert!(square_law(&two, Branch::Undispersed)
            .samples
            .iter()
            .all(|&v| (v - 4.0).abs() < 1e-15));
    }

    #[test]
    fn dispersion_composes_additively() {
        let w = random_field(256, 7, 100e9);
        let a = DispersionSpec::new(-3000.0);
        let b = DispersionSpec::new(680.0);
        let two_step = propagate_cd(&propagate_cd(&w, &a).unwrap(), &b).unwrap();
        let one_step = propagate_cd(&w, &a.plus(b)).unwrap();
        assert!(relative_l2(two_step.samples(), one_step.samples()) < 1e-12);
    }
}
