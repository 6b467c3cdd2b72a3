//! Ground-truth link impairments and the two-photodiode receiver front end.
//!
//! Signal order follows the physical chain: Tx response, modulator
//! nonlinearity, IQ impairments, fiber dispersion, optional launch-power
//! scaling, ASE, splitter, dispersive element (branch 1), photodetection,
//! receiver response and DC offset.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Branch, ComplexWaveform, DispersionSpec, FirResponse, FirRole, IntensityTrace};
use crate::rng::{self, Stream};
use crate::spectral::{self, fft_freqs, mirror_bin};
use crate::tx;
use crate::C64;

/// Noise bandwidth of the OSNR definition (0.1 nm at 1550 nm).
pub const OSNR_REFERENCE_BANDWIDTH_HZ: f64 = 12.5e9;

/// Modulator IQ impairments `s = I + j·√(1+ρ)·Q(t+τ)·e^{jφ}`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IqImpairment {
    pub rho: f64,
    /// Skew of the Q rail in seconds.
    pub tau_s: f64,
    pub phi: f64,
}

impl IqImpairment {
    pub fn new(rho: f64, tau_s: f64, phi: f64) -> Result<Self> {
        let iq = Self { rho, tau_s, phi };
        iq.validate()?;
        Ok(iq)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > -1.0) || !self.tau_s.is_finite() || !self.phi.is_finite() {
            return Err(Error::invalid(format!("invalid IQ impairment {self:?}")));
        }
        if self.phi.cos() <= 0.0 {
            return Err(Error::invalid("IQ phase error must lie in (-π/2, π/2)"));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.rho == 0.0 && self.tau_s == 0.0 && self.phi == 0.0
    }

    /// Same impairment with the skew given in samples at rate `fs`.
    pub fn with_tau_samples(self, tau_samples: f64, fs: f64) -> Self {
        Self {
            tau_s: tau_samples / fs,
            ..self
        }
    }

    pub fn tau_samples(&self, fs: f64) -> f64 {
        self.tau_s * fs
    }
}

/// Per-rail cubic modulator transfer `x + c2·x² + c3·x³`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NonlinearCoeffs {
    pub c2_i: f64,
    pub c3_i: f64,
    pub c2_q: f64,
    pub c3_q: f64,
    /// Declared drive amplitude range `[-A, A]` over which the cubic must be
    /// invertible.
    pub amplitude_range: f64,
}

/// Default declared drive range for unit-power rails.
pub const DEFAULT_AMPLITUDE_RANGE: f64 = 2.5;

impl Default for NonlinearCoeffs {
    fn default() -> Self {
        Self {
            c2_i: 0.0,
            c3_i: 0.0,
            c2_q: 0.0,
            c3_q: 0.0,
            amplitude_range: DEFAULT_AMPLITUDE_RANGE,
        }
    }
}

/// Smallest derivative of `x + c2 x² + c3 x³` over `[-a, a]`.
pub fn cubic_min_slope(c2: f64, c3: f64, a: f64) -> f64 {
    let d = |x: f64| 1.0 + 2.0 * c2 * x + 3.0 * c3 * x * x;
    let mut m = d(-a).min(d(a));
    if c3 > 0.0 {
        let v = -c2 / (3.0 * c3);
        if v.abs() <= a {
            m = m.min(d(v));
        }
    }
    m
}

#[inline]
pub fn cubic(x: f64, c2: f64, c3: f64) -> f64 {
    x + x * x * (c2 + c3 * x)
}

impl NonlinearCoeffs {
    pub fn new(c2_i: f64, c3_i: f64, c2_q: f64, c3_q: f64, amplitude_range: f64) -> Result<Self> {
        let nl = Self {
            c2_i,
            c3_i,
            c2_q,
            c3_q,
            amplitude_range,
        };
        nl.check_monotonic(amplitude_range)?;
        Ok(nl)
    }

    pub fn is_zero(&self) -> bool {
        self.c2_i == 0.0 && self.c3_i == 0.0 && self.c2_q == 0.0 && self.c3_q == 0.0
    }

    pub fn is_monotonic(&self, range: f64) -> bool {
        cubic_min_slope(self.c2_i, self.c3_i, range) > 0.0
            && cubic_min_slope(self.c2_q, self.c3_q, range) > 0.0
    }

    pub fn check_monotonic(&self, range: f64) -> Result<()> {
        if !(range > 0.0) || !self.is_monotonic(range) {
            return Err(Error::NonMonotonic { range });
        }
        Ok(())
    }

    /// Applies the cubic without a range check.
    pub fn apply_unchecked(&self, x: &[C64]) -> Vec<C64> {
        if self.is_zero() {
            return x.to_vec();
        }
        x.iter()
            .map(|s| C64::new(cubic(s.re, self.c2_i, self.c3_i), cubic(s.im, self.c2_q, self.c3_q)))
            .collect()
    }
}

/// Complete impairment description of the link. Every field defaults to the
/// identity (or disabled) setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelModel {
    pub tx_response_i: FirResponse,
    pub tx_response_q: FirResponse,
    pub nl: NonlinearCoeffs,
    pub iq: IqImpairment,
    pub fiber: DispersionSpec,
    /// Fraction of optical power sent to the dispersed branch.
    pub splitter_ratio: f64,
    pub element: DispersionSpec,
    /// Insertion loss of the dispersive element (dB).
    pub element_loss_db: f64,
    pub rx_response: [FirResponse; 2],
    pub dc_offset: [f64; 2],
    /// OSNR in a 0.1 nm reference bandwidth; `None` disables ASE.
    pub osnr_db: Option<f64>,
    pub thermal_noise_a_per_sqrt_hz: f64,
    pub responsivity_a_per_w: f64,
    /// Converter ENOB shared by DAC and ADC; `None` disables both.
    pub enob: Option<f64>,
    /// Total received optical power before the splitter; `None` keeps the
    /// normalized field units.
    pub rx_power_dbm: Option<f64>,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self {
            tx_response_i: FirResponse::identity(FirRole::TxI),
            tx_response_q: FirResponse::identity(FirRole::TxQ),
            nl: NonlinearCoeffs::default(),
            iq: IqImpairment::default(),
            fiber: DispersionSpec::default(),
            splitter_ratio: 0.5,
            element: DispersionSpec::default(),
            element_loss_db: 0.0,
            rx_response: [
                FirResponse::identity(FirRole::RxBranch1),
                FirResponse::identity(FirRole::RxBranch2),
            ],
            dc_offset: [0.0, 0.0],
            osnr_db: None,
            thermal_noise_a_per_sqrt_hz: 0.0,
            responsivity_a_per_w: 1.0,
            enob: None,
            rx_power_dbm: None,
        }
    }
}

fn complex_taps(v: &[(f64, f64)]) -> Vec<C64> {
    v.iter().map(|&(re, im)| C64::new(re, im)).collect()
}

impl ChannelModel {
    /// Link without impairments or noise but with the given fiber and
    /// dispersive element.
    pub fn ideal(fiber: DispersionSpec, element: DispersionSpec) -> Self {
        Self {
            fiber,
            element,
            ..Self::default()
        }
    }

    /// The 40 km link with a 70:30 splitter, a −1275 ps/nm element with
    /// 3 dB loss and no impairments or noise.
    pub fn reference_link() -> Self {
        Self {
            fiber: DispersionSpec::new(40.0 * 17.0),
            splitter_ratio: 0.7,
            element: DispersionSpec::new(-1275.0),
            element_loss_db: 3.0,
            ..Self::default()
        }
    }

    /// Reference link with the full synthetic impairment set: complex Tx
    /// responses, modulator nonlinearity, IQ imbalance/skew/phase error,
    /// receiver low-pass responses, DC offsets and the noise budget (ASE at
    /// `osnr_db`, 10 pA/√Hz thermal noise, ENOB `enob`, 0 dBm received).
    pub fn reference_impairments(osnr_db: f64, enob: f64, sample_rate_hz: f64) -> Self {
        let tx = complex_taps(&[
            (0.01, 0.0),
            (-0.03, 0.01),
            (0.10, -0.02),
            (1.0, 0.0),
            (0.14, 0.05),
            (-0.05, 0.0),
            (0.015, -0.01),
        ]);
        let rx1 = [-0.02, 0.08, 0.88, 0.10, -0.03];
        let rx2 = [-0.01, 0.10, 0.85, 0.09, -0.02];
        Self {
            tx_response_i: FirResponse::new(tx.clone(), FirRole::TxI).unwrap(),
            tx_response_q: FirResponse::new(tx, FirRole::TxQ).unwrap(),
            nl: NonlinearCoeffs {
                c2_i: 0.05,
                c3_i: -0.03,
                c2_q: 0.04,
                c3_q: -0.03,
                ..NonlinearCoeffs::default()
            },
            iq: IqImpairment::default().with_tau_samples(0.1, sample_rate_hz),
            rx_response: [
                FirResponse::from_real(&rx1, FirRole::RxBranch1).unwrap(),
                FirResponse::from_real(&rx2, FirRole::RxBranch2).unwrap(),
            ],
            dc_offset: [2e-5, 1e-5],
            osnr_db: Some(osnr_db),
            thermal_noise_a_per_sqrt_hz: 10e-12,
            responsivity_a_per_w: 1.0,
            enob: Some(enob),
            rx_power_dbm: Some(0.0),
            ..Self::reference_link()
        }
        .with_iq(0.1, 0.05)
    }

    fn with_iq(mut self, rho: f64, phi: f64) -> Self {
        self.iq.rho = rho;
        self.iq.phi = phi;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.iq.validate()?;
        self.nl.check_monotonic(self.nl.amplitude_range)?;
        if !(self.splitter_ratio > 0.0 && self.splitter_ratio < 1.0) {
            return Err(Error::invalid("splitter_ratio must lie in (0, 1)"));
        }
        if self.rx_response.iter().any(|r| !r.is_real()) {
            return Err(Error::invalid("receiver responses must have real taps"));
        }
        if let Some(e) = self.enob {
            if !(e > 0.0) {
                return Err(Error::invalid("enob must be positive"));
            }
        }
        if self.thermal_noise_a_per_sqrt_hz < 0.0 || !(self.responsivity_a_per_w > 0.0) {
            return Err(Error::invalid("invalid photodiode parameters"));
        }
        Ok(())
    }

    /// Total dispersion from the Tx output to each photodiode.
    pub fn link_dispersion(&self, branch: Branch) -> DispersionSpec {
        match branch {
            Branch::Dispersed => self.fiber.plus(self.element),
            Branch::Undispersed => self.fiber,
        }
    }

    /// Optical power split factor (power) toward each branch.
    pub fn branch_power_factor(&self, branch: Branch) -> f64 {
        match branch {
            Branch::Dispersed => self.splitter_ratio * 10f64.powf(-self.element_loss_db / 10.0),
            Branch::Undispersed => 1.0 - self.splitter_ratio,
        }
    }

    pub fn enob_value(&self) -> f64 {
        self.enob.unwrap_or(f64::INFINITY)
    }
}

/// Widely linear per-rail FIR: `out = hi ⊛ Re(w) + j·(hq ⊛ Im(w))`.
pub fn apply_tx_response(
    w: &ComplexWaveform,
    hi: &FirResponse,
    hq: &FirResponse,
) -> ComplexWaveform {
    if hi.is_identity() && hq.is_identity() {
        return w.clone();
    }
    let n = w.len();
    let (a, b) = widely_linear_spectra(hi, hq, n);
    w.with_samples(apply_widely_linear(w.samples(), &a, &b))
}

/// Splits a per-rail response pair into the direct and conjugate transfer
/// functions: `Y(k) = A(k)·S(k) + B(k)·conj(S(-k))`.
pub fn widely_linear_spectra(hi: &FirResponse, hq: &FirResponse, n: usize) -> (Vec<C64>, Vec<C64>) {
    let si = hi.spectrum(n);
    let sq = hq.spectrum(n);
    let a = si.iter().zip(&sq).map(|(x, y)| (x + y) * 0.5).collect();
    let b = si.iter().zip(&sq).map(|(x, y)| (x - y) * 0.5).collect();
    (a, b)
}

pub fn apply_widely_linear(x: &[C64], a: &[C64], b: &[C64]) -> Vec<C64> {
    let n = x.len();
    let s = spectral::fft(x);
    let mut out: Vec<C64> = (0..n)
        .map(|k| a[k] * s[k] + b[k] * s[mirror_bin(k, n)].conj())
        .collect();
    spectral::ifft_in_place(&mut out);
    out
}

/// Per-rail cubic nonlinearity; fails if the coefficients are not monotonic
/// over the larger of the declared range and the signal's peak rail value.
pub fn apply_nonlinearity(w: &ComplexWaveform, nl: &NonlinearCoeffs) -> Result<ComplexWaveform> {
    let peak = w
        .samples()
        .iter()
        .fold(0.0f64, |m, s| m.max(s.re.abs()).max(s.im.abs()));
    nl.check_monotonic(nl.amplitude_range.max(peak))?;
    Ok(w.with_samples(nl.apply_unchecked(w.samples())))
}

/// Linear-phase fractional advance `x(t + shift)` of a real rail held in the
/// real parts of `x`. The Nyquist bin of even-length grids keeps only the
/// real part of its phasor so the output stays real.
pub fn fractional_shift_real(x: &[f64], shift_samples: f64) -> Vec<f64> {
    if shift_samples == 0.0 {
        return x.to_vec();
    }
    let n = x.len();
    let mut s = spectral::fft_real(x);
    let freqs = fft_freqs(n, 1.0);
    for (k, (v, f)) in s.iter_mut().zip(&freqs).enumerate() {
        let arg = 2.0 * std::f64::consts::PI * f * shift_samples;
        if n.is_multiple_of(2) && k == n / 2 {
            *v *= arg.cos();
        } else {
            *v *= C64::from_polar(1.0, arg);
        }
    }
    spectral::ifft_in_place(&mut s);
    s.into_iter().map(|c| c.re).collect()
}

/// Applies the IQ impairment to a sample slice at rate `fs`.
pub fn iq_forward(x: &[C64], iq: &IqImpairment, fs: f64) -> Vec<C64> {
    if iq.is_zero() {
        return x.to_vec();
    }
    let q: Vec<f64> = x.iter().map(|s| s.im).collect();
    let q = fractional_shift_real(&q, iq.tau_samples(fs));
    let g = C64::from_polar((1.0 + iq.rho).sqrt(), iq.phi);
    x.iter()
        .zip(q)
        .map(|(s, qv)| C64::new(s.re, 0.0) + C64::i() * g * qv)
        .collect()
}

/// Exact inverse of [`iq_forward`] for fields whose rails are real signals.
pub fn iq_inverse(x: &[C64], iq: &IqImpairment, fs: f64) -> Vec<C64> {
    if iq.is_zero() {
        return x.to_vec();
    }
    let amp = (1.0 + iq.rho).sqrt();
    let (sin, cos) = iq.phi.sin_cos();
    let mut i_rail = Vec::with_capacity(x.len());
    let mut q_shifted = Vec::with_capacity(x.len());
    for s in x {
        // Re = I − amp·sinφ·Qτ, Im = amp·cosφ·Qτ
        let qt = s.im / (amp * cos);
        q_shifted.push(qt);
        i_rail.push(s.re + amp * sin * qt);
    }
    let q = fractional_shift_real(&q_shifted, -iq.tau_samples(fs));
    i_rail.into_iter().zip(q).map(|(i, q)| C64::new(i, q)).collect()
}

pub fn apply_iq(w: &ComplexWaveform, iq: &IqImpairment) -> Result<ComplexWaveform> {
    iq.validate()?;
    Ok(w.with_samples(iq_forward(w.samples(), iq, w.sample_rate_hz())))
}

/// Adds complex white Gaussian ASE over the full simulation band at the
/// power implied by `osnr_db` (0.1 nm reference) for the field's mean power.
pub fn add_ase(w: &ComplexWaveform, osnr_db: f64, rng: &mut impl Rng) -> ComplexWaveform {
    let p_sig = w.mean_power();
    let p_ref = p_sig / 10f64.powf(osnr_db / 10.0);
    let p_total = p_ref * w.sample_rate_hz() / OSNR_REFERENCE_BANDWIDTH_HZ;
    let normal = Normal::new(0.0, (p_total / 2.0).sqrt()).expect("finite noise power");
    w.with_samples(
        w.samples()
            .iter()
            .map(|s| s + C64::new(normal.sample(rng), normal.sample(rng)))
            .collect(),
    )
}

/// OSNR (dB, 0.1 nm reference) of `noisy` relative to `clean`, the noise
/// being assumed white over the sampled band.
pub fn measure_osnr_db(clean: &ComplexWaveform, noisy: &ComplexWaveform) -> f64 {
    let p_sig = clean.mean_power();
    let p_noise = noisy
        .samples()
        .iter()
        .zip(clean.samples())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        / clean.len() as f64;
    let p_ref = p_noise * OSNR_REFERENCE_BANDWIDTH_HZ / clean.sample_rate_hz();
    10.0 * (p_sig / p_ref).log10()
}

/// Square-law photodiode with thermal and ADC noise.
///
/// Thermal noise is white over the electrical Nyquist band of the trace. The
/// ADC noise is referred to the trace's own full scale (half its
/// peak-to-peak excursion).
pub fn photodetect(
    w: &ComplexWaveform,
    m: &ChannelModel,
    branch: Branch,
    thermal_rng: &mut impl Rng,
    adc_rng: &mut impl Rng,
) -> IntensityTrace {
    let r = m.responsivity_a_per_w;
    let mut samples: Vec<f64> = w.samples().iter().map(|s| r * s.norm_sqr()).collect();
    let fs = w.sample_rate_hz();
    if m.thermal_noise_a_per_sqrt_hz > 0.0 {
        let std = m.thermal_noise_a_per_sqrt_hz * (fs / 2.0).sqrt();
        let normal = Normal::new(0.0, std).expect("finite thermal noise");
        for v in samples.iter_mut() {
            *v += normal.sample(thermal_rng);
        }
    }
    if let Some(enob) = m.enob {
        let (lo, hi) = samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        tx::add_enob_noise(&mut samples, (hi - lo) / 2.0, enob, adc_rng);
    }
    IntensityTrace::new(samples, fs, branch)
}

/// Runs the transmitted waveform (after clipping and DAC) through the whole
/// link and returns the traces of branch 1 (dispersed) and branch 2.
///
/// Every noise source draws from its own stream derived from `seed`.
pub fn run_channel(w: &ComplexWaveform, m: &ChannelModel, seed: u64) -> Result<[IntensityTrace; 2]> {
    m.validate()?;
    let fs = w.sample_rate_hz();
    let s = apply_tx_response(w, &m.tx_response_i, &m.tx_response_q);
    let s = apply_nonlinearity(&s, &m.nl).map_err(|e| e.in_stage("nonlinearity"))?;
    let s = apply_iq(&s, &m.iq)?;
    let mut s = crate::field::propagate_cd(&s, &m.fiber)?;
    if let Some(dbm) = m.rx_power_dbm {
        let target = 1e-3 * 10f64.powf(dbm / 10.0);
        s = s.scaled((target / s.mean_power()).sqrt());
    }
    if let Some(osnr) = m.osnr_db {
        s = add_ase(&s, osnr, &mut rng::stream(seed, Stream::Ase));
    }
    let mut out = Vec::with_capacity(2);
    for branch in Branch::BOTH {
        let mut e = s.scaled(m.branch_power_factor(branch).sqrt());
        if branch == Branch::Dispersed {
            e = crate::field::propagate_cd(&e, &m.element)?;
        }
        let (thermal, adc) = match branch {
            Branch::Dispersed => (Stream::ThermalB1, Stream::EnobAdcB1),
            Branch::Undispersed => (Stream::ThermalB2, Stream::EnobAdcB2),
        };
        let mut trace = photodetect(
            &e,
            m,
            branch,
            &mut rng::stream(seed, thermal),
            &mut rng::stream(seed, adc),
        );
        let rx = &m.rx_response[branch.index()];
        if !rx.is_identity() {
            trace.samples = spectral::circular_convolve_real(&trace.samples, &rx.real_taps());
        }
        let dc = m.dc_offset[branch.index()];
        if dc != 0.0 {
            for v in trace.samples.iter_mut() {
                *v += dc;
            }
        }
        trace.sample_rate_hz = fs;
        out.push(trace);
    }
    let b = out.pop().unwrap();
    let a = out.pop().unwrap();
    Ok([a, b])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{self, square_law};
    use crate::rng::Stream;

    fn random_field(n: usize, seed: u64) -> ComplexWaveform {
        let mut r = rng::stream(seed, Stream::Aux(7));
        let normal = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).unwrap();
        let s = (0..n)
            .map(|_| C64::new(normal.sample(&mut r), normal.sample(&mut r)))
            .collect();
        ComplexWaveform::new(s, 100e9).unwrap()
    }

    fn random_taps(n: usize, seed: u64) -> Vec<C64> {
        let mut r = rng::stream(seed, Stream::Aux(8));
        (0..n)
            .map(|_| C64::new(r.random::<f64>() - 0.5, r.random::<f64>() - 0.5))
            .collect()
    }

    #[test]
    fn tx_response_matches_direct_convolution() {
        let n = 1024;
        let w = random_field(n, 1);
        let hi = FirResponse::new(random_taps(511, 2), FirRole::TxI).unwrap();
        let hq = FirResponse::new(random_taps(511, 3), FirRole::TxQ).unwrap();
        let y = apply_tx_response(&w, &hi, &hq);
        let c = 255isize;
        for i in (0..n).step_by(37) {
            let mut acc = C64::new(0.0, 0.0);
            for k in 0..511 {
                let idx = (i as isize - k as isize + c).rem_euclid(n as isize) as usize;
                let x = w.samples()[idx];
                acc += hi.taps[k] * x.re + C64::i() * hq.taps[k] * x.im;
            }
            assert!((acc - y.samples()[i]).norm() < 1e-10 * (1.0 + acc.norm()));
        }
    }

    #[test]
    fn tx_response_identity_and_delay() {
        let w = random_field(64, 4);
        let id_i = FirResponse::identity(FirRole::TxI);
        let id_q = FirResponse::identity(FirRole::TxQ);
        assert_eq!(apply_tx_response(&w, &id_i, &id_q), w);
        let delay = FirResponse::from_real(&[0.0, 0.0, 0.0, 0.0, 1.0], FirRole::TxI).unwrap();
        let y = apply_tx_response(&w, &delay, &id_q);
        for i in 0..64 {
            let src = w.samples()[(i + 64 - 2) % 64];
            assert!((y.samples()[i].re - src.re).abs() < 1e-12);
            assert!((y.samples()[i].im - w.samples()[i].im).abs() < 1e-12);
        }
    }

    #[test]
    fn nonlinearity_polynomial_value() {
        let nl = NonlinearCoeffs::new(0.1, -0.05, 0.0, 0.0, 1.5).unwrap();
        let w = ComplexWaveform::new(vec![C64::new(0.5, 0.5)], 1.0).unwrap();
        let y = apply_nonlinearity(&w, &nl).unwrap();
        assert!((y.samples()[0].re - 0.51875).abs() < 1e-15);
        assert_eq!(y.samples()[0].im, 0.5);
        assert_eq!(
            apply_nonlinearity(&w, &NonlinearCoeffs::default()).unwrap(),
            w
        );
    }

    #[test]
    fn nonlinearity_rejects_non_monotonic() {
        assert!(NonlinearCoeffs::new(0.0, -0.2, 0.0, 0.0, 2.5).is_err());
        assert!(NonlinearCoeffs::new(0.0, 0.2, 0.0, 0.0, 2.5).is_ok());
        let nl = NonlinearCoeffs::new(0.0, -0.05, 0.0, 0.0, 2.0).unwrap();
        let w = ComplexWaveform::new(vec![C64::new(4.0, 0.0)], 1.0).unwrap();
        assert!(apply_nonlinearity(&w, &nl).is_err());
    }

    #[test]
    fn iq_identity_and_power_imbalance() {
        let w = random_field(4096, 5);
        assert_eq!(apply_iq(&w, &IqImpairment::default()).unwrap(), w);
        let y = apply_iq(&w, &IqImpairment::new(1.0, 0.0, 0.0).unwrap()).unwrap();
        let pi = |x: &ComplexWaveform| x.samples().iter().map(|s| s.re * s.re).sum::<f64>();
        let pq = |x: &ComplexWaveform| x.samples().iter().map(|s| s.im * s.im).sum::<f64>();
        assert!((pq(&y) / pq(&w) - 2.0).abs() < 1e-12);
        assert!((pi(&y) - pi(&w)).abs() < 1e-12);
        assert!(IqImpairment::new(-1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn iq_half_sample_skew_on_tone() {
        let n = 256;
        let fs = 100e9;
        let k0 = 19.0;
        let s: Vec<C64> = (0..n)
            .map(|t| C64::new(0.0, (2.0 * std::f64::consts::PI * k0 * t as f64 / n as f64).cos()))
            .collect();
        let w = ComplexWaveform::new(s, fs).unwrap();
        let iq = IqImpairment::default().with_tau_samples(0.5, fs);
        let y = apply_iq(&w, &iq).unwrap();
        let f0 = k0 / n as f64;
        for t in 0..n {
            let expect = (2.0 * std::f64::consts::PI * f0 * t as f64 + std::f64::consts::PI * f0).cos();
            assert!((y.samples()[t].im - expect).abs() < 1e-9);
            assert!(y.samples()[t].re.abs() < 1e-12);
        }
    }

    #[test]
    fn iq_inverse_is_exact() {
        let w = shaped_signal(1024, 6);
        let iq = IqImpairment::new(0.1, 0.3 / 100e9, 0.07).unwrap();
        let y = iq_forward(w.samples(), &iq, 100e9);
        let back = iq_inverse(&y, &iq, 100e9);
        assert!(field::relative_l2(&back, w.samples()) < 1e-12);
    }

    fn shaped_signal(n_sym: usize, seed: u64) -> ComplexWaveform {
        let c = tx::QamConstellation::new(tx::QamOrder::Qam16);
        let mut r = rng::stream(seed, Stream::Aux(9));
        let syms: Vec<C64> = (0..n_sym).map(|_| c.points[r.random_range(0..16)]).collect();
        field::rrc_shape(&syms, 0.01, 2, 50e9).unwrap()
    }

    #[test]
    fn ase_sets_in_band_snr() {
        let w = shaped_signal(1 << 19, 7);
        let noisy = add_ase(&w, 35.0, &mut rng::stream(1, Stream::Ase));
        let b_sig = 50.5e9;
        let mask = field::bandwidth_mask(w.len(), w.sample_rate_hz(), b_sig / 2.0);
        let noise: Vec<C64> = noisy
            .samples()
            .iter()
            .zip(w.samples())
            .map(|(a, b)| a - b)
            .collect();
        let spec = spectral::fft(&noise);
        let in_band: f64 = spec
            .iter()
            .zip(&mask)
            .filter(|(_, &k)| k)
            .map(|(v, _)| v.norm_sqr())
            .sum::<f64>()
            / (w.len() as f64 * w.len() as f64);
        let snr = 10.0 * (w.mean_power() / in_band).log10();
        let expect = 35.0 - 10.0 * (b_sig / 12.5e9).log10();
        assert!((snr - expect).abs() < 0.2, "{snr} vs {expect}");
        assert!((measure_osnr_db(&w, &noisy) - 35.0).abs() < 0.1);
    }

    #[test]
    fn identity_channel_is_cd_plus_square_law() {
        let w = shaped_signal(1024, 8);
        let m = ChannelModel {
            splitter_ratio: 0.7,
            ..ChannelModel::ideal(DispersionSpec::new(680.0), DispersionSpec::new(-1275.0))
        };
        let [t1, t2] = run_channel(&w, &m, 3).unwrap();
        let e2 = field::propagate_cd(&w, &DispersionSpec::new(680.0)).unwrap();
        let e1 = field::propagate_cd(&e2, &DispersionSpec::new(-1275.0)).unwrap();
        let i1 = square_law(&e1, Branch::Dispersed);
        let i2 = square_law(&e2, Branch::Undispersed);
        for (a, b) in t1.samples.iter().zip(&i1.samples) {
            assert!((a - 0.7 * b).abs() < 1e-12);
        }
        for (a, b) in t2.samples.iter().zip(&i2.samples) {
            assert!((a - 0.3 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn splitter_balances_branches() {
        let w = shaped_signal(4096, 9);
        let m = ChannelModel::reference_link();
        let [t1, t2] = run_channel(&w, &m, 1).unwrap();
        let r = 10.0 * (field::mean(&t1.samples) / field::mean(&t2.samples)).log10();
        assert!(r.abs() < 1.0, "{r} dB");
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let w = shaped_signal(2048, 10);
        let m = ChannelModel::reference_impairments(30.0, 6.0, 100e9);
        let a = run_channel(&w, &m, 11).unwrap();
        let b = run_channel(&w, &m, 11).unwrap();
        assert_eq!(a, b);
        let c = run_channel(&w, &m, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn nl_iq_order_matters() {
        let w = shaped_signal(2048, 13);
        let m = ChannelModel::reference_impairments(30.0, 8.0, 100e9);
        let a = iq_forward(&m.nl.apply_unchecked(w.samples()), &m.iq, 100e9);
        let b = m.nl.apply_unchecked(&iq_forward(w.samples(), &m.iq, 100e9));
        assert!(field::relative_l2(&a, &b) > 1e-4);
    }

    #[test]
    fn noise_disabled_photodetect_is_scaled_square_law() {
        let w = shaped_signal(256, 14);
        let m = ChannelModel {
            responsivity_a_per_w: 0.8,
            ..ChannelModel::default()
        };
        let t = photodetect(
            &w,
            &m,
            Branch::Undispersed,
            &mut rng::stream(0, Stream::ThermalB2),
            &mut rng::stream(0, Stream::EnobAdcB2),
        );
        for (a, s) in t.samples.iter().zip(w.samples()) {
            assert_eq!(*a, 0.8 * s.norm_sqr());
        }
    }
}
