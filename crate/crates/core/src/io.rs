//! Binary waveform and trace files plus the run manifest.
//!
//! Every file starts with a 64-byte little-endian header:
//!
//! | offset | size | field                                             |
//! |--------|------|---------------------------------------------------|
//! | 0      | 8    | magic `PRXWAVE\0`                                 |
//! | 8      | 4    | format version (u32, currently 1)                 |
//! | 12     | 4    | kind (u32): 0 = complex waveform, 1 = intensity   |
//! | 16     | 8    | sample rate in Hz (f64)                           |
//! | 24     | 8    | sample count (u64)                                |
//! | 32     | 4    | branch id (u32): 0 = none, 1 = dispersed, 2 = undispersed |
//! | 36     | 28   | zero padding                                      |
//!
//! The payload follows as f64 values: `(re, im)` pairs for complex
//! waveforms, one value per sample for intensity traces.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Branch, ComplexWaveform, IntensityTrace};
use crate::C64;

pub const MAGIC: [u8; 8] = *b"PRXWAVE\0";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileKind {
    Waveform,
    Intensity,
}

impl FileKind {
    fn code(self) -> u32 {
        match self {
            FileKind::Waveform => 0,
            FileKind::Intensity => 1,
        }
    }

    fn from_code(c: u32) -> Result<Self> {
        match c {
            0 => Ok(FileKind::Waveform),
            1 => Ok(FileKind::Intensity),
            _ => Err(Error::Format(format!("unknown file kind {c}"))),
        }
    }
}

/// Decoded file header.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Header {
    pub kind: FileKind,
    pub sample_rate_hz: f64,
    pub len: u64,
    pub branch: Option<Branch>,
}

impl Header {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[0..8].copy_from_slice(&MAGIC);
        h[8..12].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
        h[12..16].copy_from_slice(&self.kind.code().to_le_bytes());
        h[16..24].copy_from_slice(&self.sample_rate_hz.to_le_bytes());
        h[24..32].copy_from_slice(&self.len.to_le_bytes());
        let branch = self.branch.map_or(0u32, |b| u32::from(b.id()));
        h[32..36].copy_from_slice(&branch.to_le_bytes());
        h
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format("file shorter than header".into()));
        }
        if bytes[0..8] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(8);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let kind = FileKind::from_code(u32_at(12))?;
        let sample_rate_hz = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let len = u64::from_le_bytes(bytes[24..32].try_into().unwrap());
        let branch = match u32_at(32) {
            0 => None,
            id => Some(
                u8::try_from(id)
                    .ok()
                    .and_then(Branch::from_id)
                    .ok_or_else(|| Error::Format(format!("unknown branch id {id}")))?,
            ),
        };
        Ok(Self {
            kind,
            sample_rate_hz,
            len,
            branch,
        })
    }
}

pub fn encode_waveform(w: &ComplexWaveform) -> Vec<u8> {
    let header = Header {
        kind: FileKind::Waveform,
        sample_rate_hz: w.sample_rate_hz(),
        len: w.len() as u64,
        branch: None,
    };
    let mut out = Vec::with_capacity(HEADER_LEN + 16 * w.len());
    out.extend_from_slice(&header.to_bytes());
    for v in w.samples() {
        out.extend_from_slice(&v.re.to_le_bytes());
        out.extend_from_slice(&v.im.to_le_bytes());
    }
    out
}

pub fn encode_trace(t: &IntensityTrace) -> Vec<u8> {
    let header = Header {
        kind: FileKind::Intensity,
        sample_rate_hz: t.sample_rate_hz,
        len: t.len() as u64,
        branch: Some(t.branch),
    };
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * t.len());
    out.extend_from_slice(&header.to_bytes());
    for v in &t.samples {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn payload(bytes: &[u8], h: &Header, width: usize) -> Result<Vec<f64>> {
    let expected = HEADER_LEN + width * 8 * h.len as usize;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "expected {expected} bytes for {} samples, found {}",
            h.len,
            bytes.len()
        )));
    }
    Ok(bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn decode_waveform(bytes: &[u8]) -> Result<ComplexWaveform> {
    let h = Header::parse(bytes)?;
    if h.kind != FileKind::Waveform {
        return Err(Error::Format("not a waveform file".into()));
    }
    let v = payload(bytes, &h, 2)?;
    let samples = v.chunks_exact(2).map(|p| C64::new(p[0], p[1])).collect();
    ComplexWaveform::new(samples, h.sample_rate_hz)
}

pub fn decode_trace(bytes: &[u8]) -> Result<IntensityTrace> {
    let h = Header::parse(bytes)?;
    if h.kind != FileKind::Intensity {
        return Err(Error::Format("not an intensity file".into()));
    }
    let branch = h
        .branch
        .ok_or_else(|| Error::Format("intensity file without branch id".into()))?;
    Ok(IntensityTrace::new(payload(bytes, &h, 1)?, h.sample_rate_hz, branch))
}

pub fn read_waveform(path: &Path) -> Result<ComplexWaveform> {
    decode_waveform(&std::fs::read(path)?)
}

pub fn read_trace(path: &Path) -> Result<IntensityTrace> {
    decode_trace(&std::fs::read(path)?)
}

/// One output file recorded in a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub sha256: String,
}

/// Provenance of the files in one run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub crate_version: String,
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(config_hash: String, seed: u64) -> Self {
        Self {
            config_hash,
            seed,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            files: Vec::new(),
        }
    }

    /// Records `bytes` under `name`, replacing an earlier entry of that name.
    pub fn record(&mut self, name: &str, bytes: &[u8]) {
        let sha256 = crate::pipeline::sha256_hex(bytes);
        self.files.retain(|e| e.name != name);
        self.files.push(ManifestEntry {
            name: name.to_string(),
            sha256,
        });
        self.files.sort_by(|a, b| a.name.cmp(&b.name));
    }

    pub fn entry(&self, name: &str) -> Option<&ManifestEntry> {
        self.files.iter().find(|e| e.name == name)
    }

    /// Reads `name` from `dir` and checks it against the recorded hash.
    pub fn read_verified(&self, dir: &Path, name: &str) -> Result<Vec<u8>> {
        let entry = self
            .entry(name)
            .ok_or_else(|| Error::Format(format!("{name} is not listed in the manifest")))?;
        let bytes = std::fs::read(dir.join(name))?;
        let actual = crate::pipeline::sha256_hex(&bytes);
        if actual != entry.sha256 {
            return Err(Error::Format(format!(
                "{name} does not match its manifest hash"
            )));
        }
        Ok(bytes)
    }
}
