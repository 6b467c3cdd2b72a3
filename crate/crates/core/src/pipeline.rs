//! End-to-end experiment: frame synthesis, link simulation, training,
//! reconstruction and metrics for one seed.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{self, ChannelModel};
use crate::error::{Error, Result};
use crate::eval::{self, NetRate, SweepSpec};
use crate::field::{ComplexWaveform, IntensityTrace};
use crate::reconstruct::{self, PrConfig, ReconstructionResult};
use crate::rng::{self, Stream};
use crate::trainer::{self, ChannelEstimate, TrainingConfig};
use crate::tx::{self, FrameLayout, FrameSpec, QamConstellation};
use crate::C64;

/// Complete description of an experiment. Only `frame` is required when
/// deserializing; every other section falls back to its default (an
/// identity, noiseless channel).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub frame: FrameSpec,
    #[serde(default)]
    pub channel: ChannelModel,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub pr: PrConfig,
    /// Fraction of samples clipped per rail before the DAC.
    #[serde(default = "default_clip_ratio")]
    pub clip_ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

fn default_clip_ratio() -> f64 {
    0.005
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            frame: FrameSpec::default(),
            channel: ChannelModel::default(),
            training: TrainingConfig::default(),
            pr: PrConfig::default(),
            clip_ratio: default_clip_ratio(),
            sweep: None,
            seeds: default_seeds(),
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.frame.validate().map_err(|e| e.in_stage("frame"))?;
        self.channel.validate().map_err(|e| e.in_stage("channel"))?;
        self.training.validate().map_err(|e| e.in_stage("training"))?;
        self.pr.validate().map_err(|e| e.in_stage("pr"))?;
        if !(0.0..1.0).contains(&self.clip_ratio) {
            return Err(Error::invalid("clip_ratio must lie in [0, 1)").in_stage("clip_ratio"));
        }
        Ok(())
    }

    /// Training configuration actually used: the conventional front end
    /// when distortion awareness is off.
    pub fn effective_training(&self) -> TrainingConfig {
        if self.pr.distortion_aware {
            self.training.clone()
        } else {
            TrainingConfig {
                cd_search: self.training.cd_search,
                inverse_floor: self.training.inverse_floor,
                amplitude_range: self.training.amplitude_range,
                ..TrainingConfig::conventional()
            }
        }
    }

    /// The configuration with sweep, seed list and output location removed,
    /// which is what a single run depends on.
    pub fn run_config(&self) -> Self {
        Self {
            sweep: None,
            seeds: Vec::new(),
            output_dir: None,
            ..self.clone()
        }
    }
}

/// Hex SHA-256 of the canonical JSON form of a run configuration.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let json = serde_json::to_vec(&cfg.run_config()).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Transmitter output and the two received traces of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub layout: FrameLayout,
    pub tx_waveform: ComplexWaveform,
    pub traces: [IntensityTrace; 2],
}

/// Builds the frame, runs the Tx DSP (shaping, premix, clipping, DAC) and
/// the link.
pub fn simulate(cfg: &ExperimentConfig, seed: u64) -> Result<Simulation> {
    cfg.validate()?;
    let c = QamConstellation::new(cfg.frame.order);
    let layout = tx::build_frame(&cfg.frame, &c, seed)?;
    let w = tx::shape_frame(&cfg.frame, &layout)?;
    let w = tx::premix(&w, &cfg.frame)?;
    let w = tx::clip(&w, cfg.clip_ratio)?;
    let w = tx::dac_model(&w, cfg.channel.enob_value(), &mut rng::stream(seed, Stream::EnobDac))?;
    let traces = channel::run_channel(&w, &cfg.channel, seed).map_err(|e| e.in_stage("channel"))?;
    Ok(Simulation {
        layout,
        tx_waveform: w,
        traces,
    })
}

/// Receiver power normalization: each trace divided by its mean.
pub fn normalize_power(traces: &[IntensityTrace; 2]) -> [IntensityTrace; 2] {
    traces.clone().map(|mut t| {
        let m = crate::field::mean(&t.samples);
        if m != 0.0 {
            for v in t.samples.iter_mut() {
                *v /= m;
            }
        }
        t
    })
}

/// Layout regenerated at the receiver from `(frame spec, seed)`.
pub fn receiver_layout(cfg: &ExperimentConfig, seed: u64) -> Result<FrameLayout> {
    tx::build_frame(&cfg.frame, &QamConstellation::new(cfg.frame.order), seed)
}

pub fn train(cfg: &ExperimentConfig, traces: &[IntensityTrace; 2], seed: u64) -> Result<ChannelEstimate> {
    let layout = receiver_layout(cfg, seed)?;
    let traces = normalize_power(traces);
    trainer::run_training(&traces, &cfg.frame, &layout.training_symbols, &cfg.effective_training())
        .map_err(|e| e.in_stage("training"))
}

/// Metrics of one reconstructed block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub pre_fec_ber: f64,
    pub bit_errors: usize,
    pub bits: usize,
    pub gmi_bits_per_symbol: f64,
    pub evm_rms: f64,
    pub iterations_used: usize,
    pub converged: bool,
    pub net_rate: NetRate,
}

/// Reconstructs the configured block and scores it against the payload.
/// Per-iteration BER is recorded through an observer.
pub fn reconstruct(
    cfg: &ExperimentConfig,
    traces: &[IntensityTrace; 2],
    est: &ChannelEstimate,
    seed: u64,
) -> Result<(ReconstructionResult, RunMetrics)> {
    let layout = receiver_layout(cfg, seed)?;
    let c = QamConstellation::new(cfg.frame.order);
    let traces = normalize_power(traces);
    let pilots = layout.pilot_plan();
    let bits = layout.payload_bits.clone();
    let observer = |s: &[C64]| eval::compute_ber(s, &bits, &c).unwrap_or(f64::NAN);
    let result = reconstruct::reconstruct(&traces, est, &cfg.frame, &pilots, &cfg.pr, Some(&observer))
        .map_err(|e| e.in_stage("reconstruction"))?;
    let metrics = score(cfg, &layout, &result)?;
    Ok((result, metrics))
}

pub fn score(
    cfg: &ExperimentConfig,
    layout: &FrameLayout,
    result: &ReconstructionResult,
) -> Result<RunMetrics> {
    let c = QamConstellation::new(cfg.frame.order);
    let (errors, bits) = eval::count_bit_errors(&result.recovered_symbols, &layout.payload_bits, &c)?;
    let ber = errors as f64 / bits as f64;
    let gmi = eval::compute_gmi(&result.recovered_symbols, &layout.payload_bits, &c).unwrap_or(0.0);
    let evm = eval::evm_rms(&result.recovered_symbols, &layout.data_symbols())?;
    Ok(RunMetrics {
        pre_fec_ber: ber,
        bit_errors: errors,
        bits,
        gmi_bits_per_symbol: gmi,
        evm_rms: evm,
        iterations_used: result.iterations_used,
        converged: result.converged,
        net_rate: eval::estimate_net_rate(
            ber,
            cfg.frame.pilot_ratio.value(),
            cfg.frame.symbol_rate_baud,
            cfg.frame.order,
        ),
    })
}

/// Everything produced by one seeded run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub estimate: ChannelEstimate,
    pub result: ReconstructionResult,
    pub metrics: RunMetrics,
}

pub fn run_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutcome> {
    let sim = simulate(cfg, seed)?;
    let estimate = train(cfg, &sim.traces, seed)?;
    let (result, metrics) = reconstruct(cfg, &sim.traces, &estimate, seed)?;
    Ok(RunOutcome {
        estimate,
        result,
        metrics,
    })
}
