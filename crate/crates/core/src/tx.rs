//! Transmitter DSP: QAM mapping, frame assembly, CD premixing, clipping and
//! the converter noise model.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{self, ComplexWaveform, DispersionSpec, RrcShaper};
use crate::rng::{self, Stream};
use crate::C64;

/// Supported modulation orders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QamOrder {
    Qpsk,
    Qam16,
    Qam32,
}

impl QamOrder {
    pub fn order(self) -> usize {
        match self {
            QamOrder::Qpsk => 4,
            QamOrder::Qam16 => 16,
            QamOrder::Qam32 => 32,
        }
    }

    pub fn bits_per_symbol(self) -> usize {
        self.order().trailing_zeros() as usize
    }

    pub fn from_order(order: usize) -> Result<Self> {
        match order {
            4 => Ok(QamOrder::Qpsk),
            16 => Ok(QamOrder::Qam16),
            32 => Ok(QamOrder::Qam32),
            _ => Err(Error::invalid(format!("unsupported QAM order {order}"))),
        }
    }
}

impl fmt::Display for QamOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QamOrder::Qpsk => write!(f, "QPSK"),
            QamOrder::Qam16 => write!(f, "16QAM"),
            QamOrder::Qam32 => write!(f, "32QAM"),
        }
    }
}

// Cross constellation, rows top (Q = +5) to bottom, columns I = -5..5; the
// four corners are absent. Labels found by exhaustive local search minimizing
// the total bit distance over nearest-neighbour pairs; two of the 52 pairs
// differ in more than one bit.
const QAM32_LABELS: [[Option<u8>; 6]; 6] = [
    [None, Some(0b10010), Some(0b00010), Some(0b01010), Some(0b11010), None],
    [Some(0b11011), Some(0b10011), Some(0b00000), Some(0b01000), Some(0b11000), Some(0b10000)],
    [Some(0b01011), Some(0b00011), Some(0b00001), Some(0b01001), Some(0b11001), Some(0b10001)],
    [Some(0b01111), Some(0b00111), Some(0b00101), Some(0b01101), Some(0b11101), Some(0b10101)],
    [Some(0b01110), Some(0b00110), Some(0b00100), Some(0b01100), Some(0b11111), Some(0b10111)],
    [None, Some(0b10110), Some(0b10100), Some(0b11100), Some(0b11110), None],
];

/// Gray-labelled QAM constellation at unit mean power.
///
/// `points[label]` is the point carrying the bit pattern `label`, most
/// significant bit first.
#[derive(Debug, Clone, PartialEq)]
pub struct QamConstellation {
    pub order: QamOrder,
    pub points: Vec<C64>,
}

fn gray(v: usize) -> usize {
    v ^ (v >> 1)
}

impl QamConstellation {
    pub fn new(order: QamOrder) -> Self {
        let m = order.order();
        let mut points = vec![C64::new(0.0, 0.0); m];
        match order {
            QamOrder::Qpsk | QamOrder::Qam16 => {
                let side = if m == 4 { 2 } else { 4 };
                let half_bits = order.bits_per_symbol() / 2;
                for i in 0..side {
                    for q in 0..side {
                        // Level index 0 is the most positive amplitude.
                        let li = gray(i);
                        let lq = gray(q);
                        let label = (li << half_bits) | lq;
                        let amp = |k: usize| (side as f64 - 1.0) - 2.0 * k as f64;
                        points[label] = C64::new(amp(i), amp(q));
                    }
                }
            }
            QamOrder::Qam32 => {
                for (r, row) in QAM32_LABELS.iter().enumerate() {
                    for (c, label) in row.iter().enumerate() {
                        if let Some(label) = label {
                            points[*label as usize] =
                                C64::new(-5.0 + 2.0 * c as f64, 5.0 - 2.0 * r as f64);
                        }
                    }
                }
            }
        }
        let p = (points.iter().map(|x| x.norm_sqr()).sum::<f64>() / m as f64).sqrt();
        for x in points.iter_mut() {
            *x /= p;
        }
        Self { order, points }
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.order.bits_per_symbol()
    }

    pub fn label_of(&self, bits: &[u8]) -> usize {
        bits.iter().fold(0usize, |acc, &b| (acc << 1) | (b & 1) as usize)
    }

    pub fn bits_of(&self, label: usize, out: &mut Vec<u8>) {
        let m = self.bits_per_symbol();
        for k in (0..m).rev() {
            out.push(((label >> k) & 1) as u8);
        }
    }

    /// Maps a bit stream to points; the length must be a multiple of
    /// `log2(order)`.
    pub fn map(&self, bits: &[u8]) -> Result<Vec<C64>> {
        let m = self.bits_per_symbol();
        if !bits.len().is_multiple_of(m) {
            return Err(Error::invalid(format!(
                "bit count {} not divisible by {m}",
                bits.len()
            )));
        }
        Ok(bits.chunks(m).map(|c| self.points[self.label_of(c)]).collect())
    }

    pub fn nearest(&self, y: C64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, p) in self.points.iter().enumerate() {
            let d = (y - p).norm_sqr();
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }

    /// Hard-decision demapping.
    pub fn demap(&self, symbols: &[C64]) -> Vec<u8> {
        let mut out = Vec::with_capacity(symbols.len() * self.bits_per_symbol());
        for &s in symbols {
            self.bits_of(self.nearest(s), &mut out);
        }
        out
    }

    /// Half of the minimum distance between points.
    pub fn decision_half_distance(&self) -> f64 {
        let mut dmin = f64::INFINITY;
        for (i, a) in self.points.iter().enumerate() {
            for b in &self.points[i + 1..] {
                dmin = dmin.min((a - b).norm());
            }
        }
        dmin / 2.0
    }
}

/// Fraction of payload slots carrying pilots, restricted to `1/k` (or zero).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PilotRatio {
    period: Option<u32>,
}

impl PilotRatio {
    pub const NONE: PilotRatio = PilotRatio { period: None };

    pub fn one_in(k: u32) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid("pilot ratio must not exceed 1/2"));
        }
        Ok(Self { period: Some(k) })
    }

    pub fn from_f64(ratio: f64) -> Result<Self> {
        if ratio == 0.0 {
            return Ok(Self::NONE);
        }
        if !(ratio > 0.0 && ratio <= 0.5 + 1e-12) {
            return Err(Error::invalid(format!("pilot ratio {ratio} outside [0, 1/2]")));
        }
        let k = (1.0 / ratio).round();
        if ((1.0 / k) - ratio).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "pilot ratio {ratio} is not the reciprocal of an integer"
            )));
        }
        Self::one_in(k as u32)
    }

    pub fn period(&self) -> Option<u32> {
        self.period
    }

    pub fn value(&self) -> f64 {
        self.period.map_or(0.0, |k| 1.0 / k as f64)
    }

    pub fn is_pilot(&self, index: usize) -> bool {
        self.period.is_some_and(|k| index.is_multiple_of(k as usize))
    }
}

impl fmt::Display for PilotRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.period {
            Some(k) => write!(f, "1/{k}"),
            None => write!(f, "0"),
        }
    }
}

impl Serialize for PilotRatio {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.value())
    }
}

impl<'de> Deserialize<'de> for PilotRatio {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        PilotRatio::from_f64(v).map_err(serde::de::Error::custom)
    }
}

/// Symbolic frame layout: guard | training | guard | payload × repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameSpec {
    pub training_len: usize,
    pub guard_len: usize,
    pub payload_block_len: usize,
    pub payload_repeats: usize,
    pub pilot_ratio: PilotRatio,
    pub premix_dispersion: DispersionSpec,
    pub symbol_rate_baud: f64,
    pub samples_per_symbol: usize,
    pub rolloff: f64,
    pub order: QamOrder,
}

impl Default for FrameSpec {
    fn default() -> Self {
        Self {
            training_len: 1 << 13,
            guard_len: 64,
            payload_block_len: 1 << 13,
            payload_repeats: 3,
            pilot_ratio: PilotRatio::one_in(2).unwrap(),
            premix_dispersion: DispersionSpec::new(-3000.0),
            symbol_rate_baud: 50e9,
            samples_per_symbol: 2,
            rolloff: 0.01,
            order: QamOrder::Qam16,
        }
    }
}

impl FrameSpec {
    pub fn validate(&self) -> Result<()> {
        if self.training_len == 0 || self.payload_block_len == 0 || self.payload_repeats == 0 {
            return Err(Error::invalid("frame sections must be nonempty"));
        }
        if self.guard_len > self.training_len {
            return Err(Error::invalid("guard longer than training sequence"));
        }
        if self.samples_per_symbol < 1 {
            return Err(Error::invalid("samples_per_symbol must be >= 1"));
        }
        if !(self.symbol_rate_baud > 0.0) {
            return Err(Error::invalid("symbol rate must be positive"));
        }
        if !(0.0..=1.0).contains(&self.rolloff) {
            return Err(Error::invalid("rolloff must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn frame_len(&self) -> usize {
        2 * self.guard_len + self.training_len + self.payload_block_len * self.payload_repeats
    }

    pub fn sample_rate(&self) -> f64 {
        self.symbol_rate_baud * self.samples_per_symbol as f64
    }

    pub fn training_start(&self) -> usize {
        self.guard_len
    }

    pub fn payload_start(&self, repeat: usize) -> usize {
        2 * self.guard_len + self.training_len + repeat * self.payload_block_len
    }

    /// Repetition used for reconstruction: the middle one, whose neighbours
    /// are identical copies so circular processing of one block is exact.
    pub fn reconstruction_repeat(&self) -> usize {
        self.payload_repeats / 2
    }

    pub fn data_symbols_per_block(&self) -> usize {
        (0..self.payload_block_len)
            .filter(|&i| !self.pilot_ratio.is_pilot(i))
            .count()
    }

    /// Occupied one-sided bandwidth of the shaped signal.
    pub fn band_edge_hz(&self) -> f64 {
        (1.0 + self.rolloff) * self.symbol_rate_baud / 2.0
    }
}

/// Concrete symbols of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLayout {
    /// Every symbol of the frame in transmission order.
    pub symbols: Vec<C64>,
    pub training_symbols: Vec<C64>,
    /// One payload block including pilots.
    pub payload_block: Vec<C64>,
    /// Pilot flag per payload-block symbol.
    pub pilot_mask: Vec<bool>,
    /// Bits carried by the non-pilot payload symbols, in order.
    pub payload_bits: Vec<u8>,
}

impl FrameLayout {
    pub fn data_symbols(&self) -> Vec<C64> {
        self.payload_block
            .iter()
            .zip(&self.pilot_mask)
            .filter(|(_, &p)| !p)
            .map(|(s, _)| *s)
            .collect()
    }

    /// The pieces a receiver can regenerate from `(spec, seed)` alone.
    pub fn pilot_plan(&self) -> PilotPlan {
        PilotPlan {
            mask: self.pilot_mask.clone(),
            values: self
                .payload_block
                .iter()
                .zip(&self.pilot_mask)
                .map(|(s, &p)| if p { *s } else { C64::new(0.0, 0.0) })
                .collect(),
        }
    }
}

/// Known pilot positions and values within one payload block.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotPlan {
    pub mask: Vec<bool>,
    pub values: Vec<C64>,
}

impl PilotPlan {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&p| p).count()
    }
}

fn random_bits(rng: &mut impl Rng, n: usize) -> Vec<u8> {
    (0..n).map(|_| rng.random::<bool>() as u8).collect()
}

/// Builds a frame. Training, payload and pilots come from independent
/// streams of `seed`, so a receiver can regenerate training and pilots.
pub fn build_frame(spec: &FrameSpec, c: &QamConstellation, seed: u64) -> Result<FrameLayout> {
    spec.validate()?;
    let qpsk = QamConstellation::new(QamOrder::Qpsk);

    let mut train_rng = rng::stream(seed, Stream::Training);
    let training_symbols = qpsk.map(&random_bits(&mut train_rng, 2 * spec.training_len))?;

    let m = c.bits_per_symbol();
    let mut payload_rng = rng::stream(seed, Stream::Payload);
    let all_bits = random_bits(&mut payload_rng, m * spec.payload_block_len);
    let mut payload_block = c.map(&all_bits)?;

    let mut pilot_rng = rng::stream(seed, Stream::Pilots);
    let pilot_mask: Vec<bool> = (0..spec.payload_block_len)
        .map(|i| spec.pilot_ratio.is_pilot(i))
        .collect();
    let mut payload_bits = Vec::with_capacity(all_bits.len());
    for (i, is_pilot) in pilot_mask.iter().enumerate() {
        if *is_pilot {
            let label = pilot_rng.random_range(0..4);
            payload_block[i] = qpsk.points[label];
        } else {
            payload_bits.extend_from_slice(&all_bits[i * m..(i + 1) * m]);
        }
    }

    let t = spec.training_len;
    let g = spec.guard_len;
    let mut symbols = Vec::with_capacity(spec.frame_len());
    symbols.extend_from_slice(&training_symbols[t - g..]);
    symbols.extend_from_slice(&training_symbols);
    symbols.extend_from_slice(&training_symbols[..g]);
    for _ in 0..spec.payload_repeats {
        symbols.extend_from_slice(&payload_block);
    }

    Ok(FrameLayout {
        symbols,
        training_symbols,
        payload_block,
        pilot_mask,
        payload_bits,
    })
}

/// Pulse-shapes a full frame.
pub fn shape_frame(spec: &FrameSpec, layout: &FrameLayout) -> Result<ComplexWaveform> {
    let shaper = RrcShaper::new(
        layout.symbols.len(),
        spec.rolloff,
        spec.samples_per_symbol,
        spec.symbol_rate_baud,
    )?;
    ComplexWaveform::new(shaper.shape(&layout.symbols), shaper.sample_rate())
}

/// Digital CD premixing with the frame's premix dispersion.
pub fn premix(w: &ComplexWaveform, spec: &FrameSpec) -> Result<ComplexWaveform> {
    field::propagate_cd(w, &spec.premix_dispersion)
}

/// Level that clips exactly `ceil(ratio·N)` samples of `rail` in magnitude.
pub fn clip_level(rail: &[f64], ratio: f64) -> Option<f64> {
    let k = (ratio * rail.len() as f64).ceil() as usize;
    if k == 0 {
        return None;
    }
    let mut mags: Vec<f64> = rail.iter().map(|v| v.abs()).collect();
    let idx = k.min(mags.len()) - 1;
    mags.select_nth_unstable_by(idx, |a, b| b.total_cmp(a));
    Some(mags[idx])
}

/// Hard-limits the I and Q rails independently at their empirical
/// `1 - ratio` magnitude quantile.
pub fn clip(w: &ComplexWaveform, ratio: f64) -> Result<ComplexWaveform> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::invalid("clip ratio must lie in [0, 1)"));
    }
    let re: Vec<f64> = w.samples().iter().map(|s| s.re).collect();
    let im: Vec<f64> = w.samples().iter().map(|s| s.im).collect();
    let (li, lq) = match (clip_level(&re, ratio), clip_level(&im, ratio)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Ok(w.clone()),
    };
    Ok(w.with_samples(
        w.samples()
            .iter()
            .map(|s| C64::new(s.re.clamp(-li, li), s.im.clamp(-lq, lq)))
            .collect(),
    ))
}

/// Quantization SNR (dB) of an ideal converter with the given ENOB,
/// referred to a full-scale sine.
pub fn enob_snr_db(enob: f64) -> f64 {
    6.02 * enob + 1.76
}

/// Standard deviation of the Gaussian noise equivalent to `enob` bits on a
/// converter whose full-scale sine amplitude is `full_scale`.
pub fn enob_noise_std(full_scale: f64, enob: f64) -> f64 {
    let sine_power = full_scale * full_scale / 2.0;
    (sine_power / 10f64.powf(enob_snr_db(enob) / 10.0)).sqrt()
}

pub(crate) fn add_enob_noise(rail: &mut [f64], full_scale: f64, enob: f64, rng: &mut impl Rng) {
    let std = enob_noise_std(full_scale, enob);
    if std == 0.0 || !std.is_finite() {
        return;
    }
    let normal = Normal::new(0.0, std).expect("finite std");
    for v in rail.iter_mut() {
        *v += normal.sample(rng);
    }
}

/// DAC model: independent Gaussian noise per rail at the ENOB-equivalent
/// SNR, each rail's full scale being its peak magnitude. `enob = ∞`
/// disables the model.
pub fn dac_model(w: &ComplexWaveform, enob: f64, rng: &mut impl Rng) -> Result<ComplexWaveform> {
    if !(enob > 0.0) {
        return Err(Error::invalid("ENOB must be positive"));
    }
    if enob.is_infinite() {
        return Ok(w.clone());
    }
    let mut re: Vec<f64> = w.samples().iter().map(|s| s.re).collect();
    let mut im: Vec<f64> = w.samples().iter().map(|s| s.im).collect();
    let fs_i = re.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let fs_q = im.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    add_enob_noise(&mut re, fs_i, enob, rng);
    add_enob_noise(&mut im, fs_q, enob, rng);
    Ok(w.with_samples(re.into_iter().zip(im).map(|(a, b)| C64::new(a, b)).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    #[test]
    fn qpsk_labeling() {
        let c = QamConstellation::new(QamOrder::Qpsk);
        let s = c.map(&[0, 0, 0, 1, 1, 1, 1, 0]).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let expect = [
            C64::new(r, r),
            C64::new(r, -r),
            C64::new(-r, -r),
            C64::new(-r, r),
        ];
        for (a, b) in s.iter().zip(&expect) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn constellations_have_unit_power_and_distinct_points() {
        for order in [QamOrder::Qpsk, QamOrder::Qam16, QamOrder::Qam32] {
            let c = QamConstellation::new(order);
            let p: f64 = c.points.iter().map(|x| x.norm_sqr()).sum::<f64>() / c.points.len() as f64;
            assert!((p - 1.0).abs() < 1e-12);
            for (i, a) in c.points.iter().enumerate() {
                for b in &c.points[i + 1..] {
                    assert!((a - b).norm() > 1e-6);
                }
            }
        }
    }

    fn gray_violations(c: &QamConstellation) -> usize {
        let dmin = 2.0 * c.decision_half_distance();
        let mut bad = 0;
        for i in 0..c.points.len() {
            for j in i + 1..c.points.len() {
                if ((c.points[i] - c.points[j]).norm() - dmin).abs() < 1e-9
                    && (i ^ j).count_ones() != 1
                {
                    bad += 1;
                }
            }
        }
        bad
    }

    #[test]
    fn gray_property() {
        assert_eq!(gray_violations(&QamConstellation::new(QamOrder::Qpsk)), 0);
        assert_eq!(gray_violations(&QamConstellation::new(QamOrder::Qam16)), 0);
        // Cross constellation: fixed, documented exceptions.
        assert_eq!(gray_violations(&QamConstellation::new(QamOrder::Qam32)), 2);
    }

    #[test]
    fn map_rejects_ragged_bits() {
        let c = QamConstellation::new(QamOrder::Qam16);
        assert!(c.map(&[0, 1, 1]).is_err());
    }

    #[test]
    fn mapped_stream_has_unit_power() {
        for order in [QamOrder::Qpsk, QamOrder::Qam16, QamOrder::Qam32] {
            let c = QamConstellation::new(order);
            let m = c.bits_per_symbol();
            let mut r = rng::stream(3, Stream::Aux(0));
            let n = 100_000 / m * m;
            let bits = random_bits(&mut r, n);
            let s = c.map(&bits).unwrap();
            let p = s.iter().map(|x| x.norm_sqr()).sum::<f64>() / s.len() as f64;
            assert!((0.99..=1.01).contains(&p), "{order}: {p}");
            assert_eq!(c.demap(&s), bits);
        }
    }

    #[test]
    fn full_length_frame_symbol_count() {
        let spec = FrameSpec {
            payload_repeats: 30,
            ..FrameSpec::default()
        };
        assert_eq!(spec.frame_len(), 64 + 8192 + 64 + 245_760);
        assert_eq!(spec.frame_len(), 254_080);
    }

    #[test]
    fn frame_structure() {
        let spec = FrameSpec {
            training_len: 256,
            guard_len: 16,
            payload_block_len: 300,
            payload_repeats: 2,
            ..FrameSpec::default()
        };
        let c = QamConstellation::new(QamOrder::Qam16);
        let f = build_frame(&spec, &c, 5).unwrap();
        assert_eq!(f.symbols.len(), spec.frame_len());
        assert_eq!(&f.symbols[..16], &f.training_symbols[240..]);
        assert_eq!(&f.symbols[16 + 256..16 + 256 + 16], &f.training_symbols[..16]);
        assert_eq!(f.pilot_mask.iter().filter(|&&p| p).count(), 150);
        assert_eq!(f.payload_bits.len(), 150 * 4);
        let p0 = spec.payload_start(0);
        let p1 = spec.payload_start(1);
        assert_eq!(&f.symbols[p0..p0 + 300], &f.symbols[p1..p1 + 300]);
        let qpsk = QamConstellation::new(QamOrder::Qpsk);
        for (s, &p) in f.payload_block.iter().zip(&f.pilot_mask) {
            if p {
                assert!(qpsk.points.iter().any(|q| (q - s).norm() < 1e-12));
            }
        }
    }

    #[test]
    fn no_pilots() {
        let spec = FrameSpec {
            training_len: 64,
            guard_len: 8,
            payload_block_len: 64,
            payload_repeats: 1,
            pilot_ratio: PilotRatio::NONE,
            ..FrameSpec::default()
        };
        let f = build_frame(&spec, &QamConstellation::new(QamOrder::Qpsk), 1).unwrap();
        assert!(f.pilot_mask.iter().all(|&p| !p));
    }

    #[test]
    fn pilot_ratio_bounds() {
        assert!(PilotRatio::from_f64(0.6).is_err());
        assert!(PilotRatio::from_f64(0.3).is_err());
        assert_eq!(PilotRatio::from_f64(0.2).unwrap().period(), Some(5));
        assert!(PilotRatio::one_in(1).is_err());
    }

    #[test]
    fn frames_are_seed_deterministic() {
        let spec = FrameSpec {
            training_len: 512,
            guard_len: 16,
            payload_block_len: 4096,
            payload_repeats: 1,
            ..FrameSpec::default()
        };
        let c = QamConstellation::new(QamOrder::Qam16);
        let a = build_frame(&spec, &c, 42).unwrap();
        let b = build_frame(&spec, &c, 42).unwrap();
        assert_eq!(a, b);
        let d = build_frame(&spec, &c, 43).unwrap();
        let num: C64 = a.payload_block.iter().zip(&d.payload_block).map(|(x, y)| x * y.conj()).sum();
        let corr = num.norm() / a.payload_block.len() as f64;
        assert!(corr < 0.05, "corr {corr}");
    }

    #[test]
    fn clip_counts_exact_quantile() {
        let mut r = rng::stream(1, Stream::Aux(1));
        let n = 1 << 18;
        let normal = Normal::new(0.0, 1.0).unwrap();
        let s: Vec<C64> = (0..n)
            .map(|_| C64::new(normal.sample(&mut r), normal.sample(&mut r)))
            .collect();
        let w = ComplexWaveform::new(s, 1.0).unwrap();
        let out = clip(&w, 0.005).unwrap();
        let k = (0.005 * n as f64).ceil() as usize;
        let li = out.samples().iter().fold(0.0f64, |m, x| m.max(x.re.abs()));
        let at_limit = out.samples().iter().filter(|x| x.re.abs() == li).count();
        assert_eq!(at_limit, k);
        assert!(field::papr_db(out.samples()) < field::papr_db(w.samples()));
        assert_eq!(clip(&w, 0.0).unwrap(), w);
        assert!(clip(&w, 1.0).is_err());
    }

    #[test]
    fn dac_snr_matches_enob() {
        let n = 1_000_000;
        let s: Vec<C64> = (0..n)
            .map(|k| C64::new((0.013 * k as f64).sin(), 0.0))
            .collect();
        let w = ComplexWaveform::new(s, 1.0).unwrap();
        for (enob, expect) in [(8.0, 49.92), (5.8, 36.676)] {
            let mut r = rng::stream(2, Stream::EnobDac);
            let out = dac_model(&w, enob, &mut r).unwrap();
            let noise: f64 = out
                .samples()
                .iter()
                .zip(w.samples())
                .map(|(a, b)| (a.re - b.re).powi(2))
                .sum::<f64>()
                / n as f64;
            let sig = w.samples().iter().map(|x| x.re * x.re).sum::<f64>() / n as f64;
            let snr = 10.0 * (sig / noise).log10();
            assert!((snr - expect).abs() < 0.3, "enob {enob}: {snr}");
        }
        let mut r = rng::stream(2, Stream::EnobDac);
        assert_eq!(dac_model(&w, f64::INFINITY, &mut r).unwrap(), w);
        assert!(dac_model(&w, 0.0, &mut r).is_err());
    }
}
