//! TOML experiment configuration with field-path diagnostics.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use prx_core::eval::SweepSpec;
use prx_core::pipeline::ExperimentConfig;
use prx_core::tx::FrameSpec;
use serde::de::DeserializeOwned;

const KEYS: [&str; 8] = [
    "frame",
    "channel",
    "training",
    "pr",
    "clip_ratio",
    "sweep",
    "seeds",
    "output_dir",
];

fn section<T: DeserializeOwned>(name: &str, value: &toml::Value) -> Result<T> {
    value.clone().try_into().map_err(|e: toml::de::Error| {
        let msg = e.message().trim().to_string();
        match msg.strip_prefix("missing field `").and_then(|r| r.split_once('`')) {
            Some((field, _)) => anyhow!("missing required field `{name}.{field}`"),
            None => anyhow!("invalid `{name}`: {msg}"),
        }
    })
}

fn optional<T: DeserializeOwned>(table: &toml::Table, name: &str) -> Result<Option<T>> {
    table.get(name).map(|v| section(name, v)).transpose()
}

/// Parses and validates a configuration document.
pub fn parse(text: &str) -> Result<ExperimentConfig> {
    let table: toml::Table = text.parse().context("configuration is not valid TOML")?;
    if let Some(k) = table.keys().find(|k| !KEYS.contains(&k.as_str())) {
        bail!("unknown configuration key `{k}`");
    }
    let frame: FrameSpec = match table.get("frame") {
        Some(v) => section("frame", v)?,
        None => bail!("missing required section `frame`"),
    };
    let defaults = ExperimentConfig::default();
    let cfg = ExperimentConfig {
        frame,
        channel: optional(&table, "channel")?.unwrap_or(defaults.channel),
        training: optional(&table, "training")?.unwrap_or(defaults.training),
        pr: optional(&table, "pr")?.unwrap_or(defaults.pr),
        clip_ratio: optional(&table, "clip_ratio")?.unwrap_or(defaults.clip_ratio),
        sweep: optional::<SweepSpec>(&table, "sweep")?,
        seeds: optional(&table, "seeds")?.unwrap_or(defaults.seeds),
        output_dir: optional(&table, "output_dir")?,
    };
    cfg.validate().map_err(|e| anyhow!("invalid configuration: {e}"))?;
    Ok(cfg)
}

pub fn load(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse(&text).with_context(|| format!("in {}", path.display()))
}

pub fn to_toml(cfg: &ExperimentConfig) -> Result<String> {
    toml::to_string(cfg).context("serializing configuration")
}

/// Parses a comma-separated seed list.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let seeds: Vec<u64> = s
        .split(',')
        .map(|t| t.trim().parse::<u64>().with_context(|| format!("bad seed `{t}`")))
        .collect::<Result<_>>()?;
    if seeds.is_empty() {
        bail!("seed list is empty");
    }
    Ok(seeds)
}
