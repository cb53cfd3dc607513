//! Confidence-gated multi-channel fusion and the append-only datastore.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::canonical;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelId {
    Audio,
    Stat,
    Visual,
    Sensor,
}

impl ChannelId {
    pub fn as_str(&self) -> &'static str {
        match self {
            ChannelId::Audio => "audio",
            ChannelId::Stat => "stat",
            ChannelId::Visual => "visual",
            ChannelId::Sensor => "sensor",
        }
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One channel's reading for the current record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationChannel {
    pub id: ChannelId,
    pub value: f64,
    pub confidence_raw: f64,
    pub timestamp: f64,
    /// Time span the reading covers, used for anomaly overlap.
    pub window: (f64, f64),
}

/// An execution anomaly at a point in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionAnomaly {
    pub code: String,
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub threshold: f64,
    pub attenuation: f64,
    /// Relative spread of included channels that raises a divergence flag.
    pub divergence_tolerance: f64,
    /// Lower bound of the divergence scale (one droplet).
    pub divergence_floor: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            threshold: 0.6,
            attenuation: 0.1,
            divergence_tolerance: 0.1,
            divergence_floor: 0.046875,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(format!("fusion.threshold {} not in (0,1)", self.threshold));
        }
        if !(self.attenuation >= 0.0 && self.attenuation <= 1.0) {
            return Err(format!("fusion.attenuation {} not in [0,1]", self.attenuation));
        }
        Ok(())
    }
}

pub const DATA_QUALITY: &str = "data_quality";
pub const DIVERGENCE: &str = "divergence";

/// Gated confidence of a channel.
///
/// Zero when the state performs no physical operation yet the channel
/// reports a nonzero quantity; attenuated when an execution anomaly falls
/// inside the channel's window; the raw confidence otherwise.
pub fn gate_confidence(
    channel: &ObservationChannel,
    physical_operation: bool,
    anomalies: &[ExecutionAnomaly],
    config: &FusionConfig,
) -> f64 {
    let raw = channel.confidence_raw.clamp(0.0, 1.0);
    if !physical_operation && channel.value != 0.0 {
        return 0.0;
    }
    let (lo, hi) = channel.window;
    if anomalies
        .iter()
        .any(|a| a.timestamp >= lo && a.timestamp <= hi)
    {
        return raw * config.attenuation;
    }
    raw
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatedChannel {
    pub id: ChannelId,
    pub value: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fusion {
    pub value: Option<f64>,
    pub confidence: f64,
    pub weights: Vec<(ChannelId, f64)>,
    pub anomalies: Vec<String>,
}

/// Threshold elimination then confidence-weighted averaging. The fused
/// confidence is the plain mean over the included channels.
pub fn fuse(channels: &[GatedChannel], config: &FusionConfig) -> Fusion {
    let included: Vec<&GatedChannel> = channels
        .iter()
        .filter(|c| c.confidence >= config.threshold)
        .collect();
    if included.is_empty() {
        return Fusion {
            value: None,
            confidence: 0.0,
            weights: Vec::new(),
            anomalies: vec![DATA_QUALITY.to_string()],
        };
    }
    let total: f64 = included.iter().map(|c| c.confidence).sum();
    let weights: Vec<(ChannelId, f64)> = included
        .iter()
        .map(|c| (c.id, c.confidence / total))
        .collect();
    let value: f64 = included
        .iter()
        .zip(&weights)
        .map(|(c, (_, w))| w * c.value)
        .sum();
    let lo = included.iter().map(|c| c.value).fold(f64::INFINITY, f64::min);
    let hi = included.iter().map(|c| c.value).fold(f64::NEG_INFINITY, f64::max);
    // Rounding can push the weighted sum a hair outside the hull.
    let value = value.clamp(lo, hi);
    let confidence = total / included.len() as f64;
    let mut anomalies = Vec::new();
    if hi - lo > config.divergence_tolerance * value.abs().max(config.divergence_floor) {
        anomalies.push(DIVERGENCE.to_string());
    }
    Fusion {
        value: Some(value),
        confidence,
        weights,
        anomalies,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawChannel {
    pub value: f64,
    pub confidence_raw: f64,
    pub confidence_gated: f64,
}

/// One datastore row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedRecord {
    pub timestamp: f64,
    pub quantity: String,
    pub value: Option<f64>,
    pub confidence: f64,
    pub raw: BTreeMap<String, RawChannel>,
    pub state: String,
    pub subtask: String,
    pub anomalies: Vec<String>,
}

impl FusedRecord {
    /// A record with no channels, used for anomaly entries.
    pub fn anomaly(timestamp: f64, code: &str, state: &str, subtask: &str) -> Self {
        Self {
            timestamp,
            quantity: "anomaly".into(),
            value: None,
            confidence: 0.0,
            raw: BTreeMap::new(),
            state: state.into(),
            subtask: subtask.into(),
            anomalies: vec![code.to_string()],
        }
    }

    /// A single-source reading that bypasses fusion.
    pub fn single(
        timestamp: f64,
        quantity: &str,
        channel: ChannelId,
        value: f64,
        confidence: f64,
        state: &str,
        subtask: &str,
    ) -> Self {
        let mut raw = BTreeMap::new();
        raw.insert(
            channel.as_str().to_string(),
            RawChannel {
                value,
                confidence_raw: confidence,
                confidence_gated: confidence,
            },
        );
        Self {
            timestamp,
            quantity: quantity.into(),
            value: Some(value),
            confidence,
            raw,
            state: state.into(),
            subtask: subtask.into(),
            anomalies: Vec::new(),
        }
    }
}

/// Gates, fuses and packages one record.
pub fn fuse_record(
    channels: &[ObservationChannel],
    quantity: &str,
    timestamp: f64,
    state: &str,
    subtask: &str,
    physical_operation: bool,
    anomalies: &[ExecutionAnomaly],
    config: &FusionConfig,
) -> FusedRecord {
    let mut raw = BTreeMap::new();
    let gated: Vec<GatedChannel> = channels
        .iter()
        .map(|c| {
            let g = gate_confidence(c, physical_operation, anomalies, config);
            raw.insert(
                c.id.as_str().to_string(),
                RawChannel {
                    value: c.value,
                    confidence_raw: c.confidence_raw,
                    confidence_gated: g,
                },
            );
            GatedChannel {
                id: c.id,
                value: c.value,
                confidence: g,
            }
        })
        .collect();
    let f = fuse(&gated, config);
    let mut flags: Vec<String> = anomalies
        .iter()
        .filter(|a| channels.iter().any(|c| a.timestamp >= c.window.0 && a.timestamp <= c.window.1))
        .map(|a| a.code.clone())
        .collect();
    flags.extend(f.anomalies);
    flags.dedup();
    FusedRecord {
        timestamp,
        quantity: quantity.into(),
        value: f.value,
        confidence: f.confidence,
        raw,
        state: state.into(),
        subtask: subtask.into(),
        anomalies: flags,
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatastoreError {
    #[error("timestamp {at} precedes the last record at {last}")]
    TimestampRegression { at: f64, last: f64 },
}

/// Append-only record log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Datastore {
    records: Vec<FusedRecord>,
}

impl Datastore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, rec: FusedRecord) -> Result<usize, DatastoreError> {
        if let Some(last) = self.records.last() {
            if rec.timestamp < last.timestamp {
                return Err(DatastoreError::TimestampRegression {
                    at: rec.timestamp,
                    last: last.timestamp,
                });
            }
        }
        self.records.push(rec);
        Ok(self.records.len())
    }

    pub fn records(&self) -> &[FusedRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn by_quantity<'a>(&'a self, quantity: &'a str) -> impl Iterator<Item = &'a FusedRecord> + 'a {
        self.records.iter().filter(move |r| r.quantity == quantity)
    }

    /// Every record carrying at least one anomaly flag.
    pub fn anomalies(&self) -> impl Iterator<Item = &FusedRecord> {
        self.records.iter().filter(|r| !r.anomalies.is_empty())
    }

    /// One canonical JSON object per line.
    pub fn to_jsonl(&self) -> Result<String, canonical::CodecError> {
        let mut out = String::new();
        for r in &self.records {
            let bytes = canonical::encode(r)?;
            out.push_str(&String::from_utf8_lossy(&bytes));
            out.push('\n');
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedPoint {
    pub t: f64,
    pub value: f64,
    pub raw: f64,
    pub low_confidence: bool,
}

pub const MAD_WINDOW: usize = 21;
pub const MAD_FACTOR: f64 = 5.0;

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Trailing-window MAD outlier filter. Points further than `m` MADs from
/// the window median are flagged and replaced by that median.
pub fn smooth_single_source(series: &[(f64, f64)], window: usize, m: f64) -> Vec<SmoothedPoint> {
    let window = window.max(1);
    series
        .iter()
        .enumerate()
        .map(|(i, &(t, x))| {
            let start = (i + 1).saturating_sub(window);
            let mut w: Vec<f64> = series[start..=i].iter().map(|p| p.1).collect();
            if w.len() < 3 {
                return SmoothedPoint {
                    t,
                    value: x,
                    raw: x,
                    low_confidence: false,
                };
            }
            let med = median(&mut w);
            let mut dev: Vec<f64> = w.iter().map(|v| (v - med).abs()).collect();
            let mad = median(&mut dev);
            let outlier = (x - med).abs() > m * mad && (x - med).abs() > 1e-12;
            SmoothedPoint {
                t,
                value: if outlier { med } else { x },
                raw: x,
                low_confidence: outlier,
            }
        })
        .collect()
}
