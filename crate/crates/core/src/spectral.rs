//! FFT helpers shared by every frequency-domain operation.
//!
//! All transforms are unnormalized forward / `1/N`-normalized inverse, so a
//! forward-inverse pair is the identity.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::C64;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

pub fn fft_in_place(buf: &mut [C64]) {
    if buf.len() > 1 {
        plan(buf.len(), false).process(buf);
    }
}

pub fn ifft_in_place(buf: &mut [C64]) {
    let n = buf.len();
    if n > 1 {
        plan(n, true).process(buf);
    }
    let scale = 1.0 / n as f64;
    for x in buf.iter_mut() {
        *x *= scale;
    }
}

pub fn fft(x: &[C64]) -> Vec<C64> {
    let mut buf = x.to_vec();
    fft_in_place(&mut buf);
    buf
}

pub fn ifft(x: &[C64]) -> Vec<C64> {
    let mut buf = x.to_vec();
    ifft_in_place(&mut buf);
    buf
}

pub fn fft_real(x: &[f64]) -> Vec<C64> {
    let mut buf: Vec<C64> = x.iter().map(|&v| C64::new(v, 0.0)).collect();
    fft_in_place(&mut buf);
    buf
}

/// Frequency (Hz) of each DFT bin, in FFT order (`0, df, …, -df`).
pub fn fft_freqs(n: usize, sample_rate_hz: f64) -> Vec<f64> {
    let df = sample_rate_hz / n as f64;
    (0..n)
        .map(|k| {
            if k < n.div_ceil(2) {
                k as f64 * df
            } else {
                (k as f64 - n as f64) * df
            }
        })
        .collect()
}

/// Index of the bin holding frequency `-f` for the bin `k`.
#[inline]
pub fn mirror_bin(k: usize, n: usize) -> usize {
    if k == 0 {
        0
    } else {
        n - k
    }
}

/// Circular convolution `y[n] = Σ_k taps[k] x[n - k + center]`, with the
/// tap at `center = taps.len() / 2` acting as zero delay.
pub fn circular_convolve_centered(x: &[C64], taps: &[C64]) -> Vec<C64> {
    let n = x.len();
    let h = centered_taps_spectrum(taps, n);
    let mut buf = fft(x);
    for (b, hk) in buf.iter_mut().zip(&h) {
        *b *= hk;
    }
    ifft_in_place(&mut buf);
    buf
}

/// DFT (length `n`) of a centered tap vector placed circularly around index 0.
pub fn centered_taps_spectrum(taps: &[C64], n: usize) -> Vec<C64> {
    let center = taps.len() / 2;
    let mut buf = vec![C64::new(0.0, 0.0); n];
    for (k, &t) in taps.iter().enumerate() {
        let idx = (k as isize - center as isize).rem_euclid(n as isize) as usize;
        buf[idx] += t;
    }
    fft_in_place(&mut buf);
    buf
}

/// Real circular convolution with centered real taps.
pub fn circular_convolve_real(x: &[f64], taps: &[f64]) -> Vec<f64> {
    let xc: Vec<C64> = x.iter().map(|&v| C64::new(v, 0.0)).collect();
    let tc: Vec<C64> = taps.iter().map(|&v| C64::new(v, 0.0)).collect();
    circular_convolve_centered(&xc, &tc)
        .into_iter()
        .map(|c| c.re)
        .collect()
}

/// Circular cross-correlation `r[l] = Σ_n conj(a[n]) b[n + l]`.
pub fn circular_xcorr(a: &[C64], b: &[C64]) -> Vec<C64> {
    debug_assert_eq!(a.len(), b.len());
    let fa = fft(a);
    let mut fb = fft(b);
    for (y, x) in fb.iter_mut().zip(&fa) {
        *y *= x.conj();
    }
    ifft_in_place(&mut fb);
    fb
}
