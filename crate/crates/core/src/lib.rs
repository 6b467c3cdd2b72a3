//! Carrierless intensity-only optical link simulation and a distortion-aware
//! phase-retrieval receiver.
//!
//! The crate is organized along the signal path:
//!
//! - [`field`]: complex waveforms, chromatic dispersion, pulse shaping,
//!   filtering and square-law detection.
//! - [`tx`]: QAM mapping, frame assembly, CD premixing, clipping and the
//!   converter noise model.
//! - [`channel`]: ground-truth transmitter/receiver impairments and the
//!   two-photodiode front end.
//! - [`trainer`]: training-stage estimation of dispersion, receiver FFEs,
//!   transmitter response, IQ impairments and modulator nonlinearity.
//! - [`reconstruct`]: the dual-trace Gerchberg-Saxton reconstruction.
//! - [`eval`]: BER/GMI metrics, net-rate bookkeeping, the noise-floor Monte
//!   Carlo and experiment sweeps.
//! - [`io`]: binary waveform/trace files and run manifests.
//! - [`pipeline`]: the end-to-end experiment description tying it together.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod error;
pub mod eval;
pub mod field;
pub mod io;
pub mod pipeline;
pub mod reconstruct;
pub mod rng;
pub mod spectral;
pub mod trainer;
pub mod tx;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
