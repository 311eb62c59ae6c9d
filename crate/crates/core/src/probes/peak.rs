//! Data-peak traffic probe.

use serde::{Deserialize, Serialize};

use super::ProbeError;
use crate::model::{attribute_flows, DestinationPattern, DeviceId, Direction, TraceEvent};

pub const DEFAULT_WINDOW_SECONDS: f64 = 20.0;

/// Highest device-to-destination payload rate, in KB/s (1 KB = 1000 bytes),
/// over windows `[s, s + window)` with `s` stepping by one second. Only
/// records attributed to one of `destinations` count.
pub fn data_peak(
    trace: &[TraceEvent],
    device: &DeviceId,
    destinations: &[DestinationPattern],
    window_seconds: f64,
) -> Result<f64, ProbeError> {
    if destinations.is_empty() {
        return Err(ProbeError::NoDestinations);
    }
    if window_seconds <= 0.0 {
        return Err(ProbeError::BadWindow(window_seconds));
    }
    let mut sorted = trace.to_vec();
    sorted.sort_by(|a, b| a.timestamp().total_cmp(&b.timestamp()));
    let samples: Vec<(f64, u64)> = attribute_flows(&sorted, device)
        .into_iter()
        .filter(|f| f.record.direction == Direction::DeviceToDst)
        .filter(|f| destinations.iter().any(|p| p.matches(&f.destination)))
        .map(|f| (f.record.timestamp, f.record.payload_bytes))
        .collect();
    let Some(first) = samples.first() else {
        return Ok(0.0);
    };
    let last = samples.last().expect("nonempty").0;

    let mut best = 0u64;
    let mut lo = 0;
    let mut hi = 0;
    let mut sum = 0u64;
    let mut start = first.0.floor();
    while start <= last {
        let end = start + window_seconds;
        while hi < samples.len() && samples[hi].0 < end {
            sum += samples[hi].1;
            hi += 1;
        }
        while lo < hi && samples[lo].0 < start {
            sum -= samples[lo].1;
            lo += 1;
        }
        best = best.max(sum);
        start += 1.0;
    }
    Ok(best as f64 / 1000.0 / window_seconds)
}

/// Separation between idle and active peaks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub b_max: f64,
    pub a_min: f64,
    pub x: f64,
}

/// `X` is the midpoint between the largest background peak and the
/// smallest activation peak.
pub fn calibrate_threshold(activation_peaks: &[f64], background_peaks: &[f64]) -> Result<Calibration, ProbeError> {
    if activation_peaks.is_empty() || background_peaks.is_empty() {
        return Err(ProbeError::NoPeaks);
    }
    let b_max = background_peaks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let a_min = activation_peaks.iter().copied().fold(f64::INFINITY, f64::min);
    if a_min <= b_max {
        return Err(ProbeError::Overlap { a_min, b_max });
    }
    Ok(Calibration {
        b_max,
        a_min,
        x: (a_min + b_max) / 2.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakProfile {
    pub device_id: DeviceId,
    pub probe_destinations: Vec<DestinationPattern>,
    pub window_seconds: f64,
    #[serde(flatten)]
    pub calibration: Calibration,
}

impl PeakProfile {
    pub fn new(
        device_id: DeviceId,
        probe_destinations: Vec<DestinationPattern>,
        calibration: Calibration,
    ) -> Result<Self, ProbeError> {
        if probe_destinations.is_empty() {
            return Err(ProbeError::NoDestinations);
        }
        Ok(PeakProfile {
            device_id,
            probe_destinations,
            window_seconds: DEFAULT_WINDOW_SECONDS,
            calibration,
        })
    }
}

/// True when the trace's data peak is strictly above the threshold.
pub fn traffic_probe(trace: &[TraceEvent], profile: &PeakProfile) -> bool {
    data_peak(trace, &profile.device_id, &profile.probe_destinations, profile.window_seconds)
        .is_ok_and(|peak| peak > profile.calibration.x)
}
