//! Driving the simulator through probes, and the probe-evaluation gate.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::image::{image_diff_probe, ImageDiffConfig, Raster};
use super::peak::{traffic_probe, Calibration, PeakProfile};
use super::ProbeError;
use crate::consensus::FunctionTest;
use crate::model::{BlockEverything, DestinationPattern, DeviceId, TraceEvent};
use crate::netsim::{reference_screen, DeviceModel, ProbeKind, SimError, Simulator};

/// How the outcome of one iteration is read.
#[derive(Debug, Clone, PartialEq)]
pub enum DeviceProbe {
    Screen {
        reference: Raster,
        config: ImageDiffConfig,
    },
    Traffic(PeakProfile),
    /// An operator checks the device by hand and reads the true outcome.
    Manual,
}

impl DeviceProbe {
    pub fn read(&self, sim: &mut Simulator, device: &DeviceId, function: &str) -> Result<bool, SimError> {
        match self {
            DeviceProbe::Screen { reference, config } => {
                let shot = sim.screenshot(device, function)?;
                Ok(image_diff_probe(&shot, reference, config).unwrap_or(false))
            }
            DeviceProbe::Traffic(profile) => {
                if sim.ground_truth(device).is_none() {
                    return Err(SimError::ProbeOrder(device.to_string()));
                }
                Ok(traffic_probe(sim.segment(device), profile))
            }
            DeviceProbe::Manual => sim
                .ground_truth(device)
                .ok_or_else(|| SimError::ProbeOrder(device.to_string())),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            DeviceProbe::Screen { .. } => "screen",
            DeviceProbe::Traffic(_) => "traffic",
            DeviceProbe::Manual => "manual",
        }
    }
}

/// One row of the traffic-probe calibration table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub device_id: DeviceId,
    pub destinations: Vec<DestinationPattern>,
    pub b_max: f64,
    pub a_min: f64,
    /// Reference threshold, rounded.
    pub x: f64,
}

/// Traffic-probe calibrations keyed by device.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProfileSet {
    profiles: BTreeMap<DeviceId, PeakProfile>,
}

impl ProfileSet {
    pub fn from_records(records: &[CalibrationRecord]) -> Result<Self, ProbeError> {
        let mut profiles = BTreeMap::new();
        for r in records {
            let cal = super::calibrate_threshold(&[r.a_min], &[r.b_max])?;
            profiles.insert(
                r.device_id.clone(),
                PeakProfile::new(r.device_id.clone(), r.destinations.clone(), cal)?,
            );
        }
        Ok(ProfileSet { profiles })
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<CalibrationRecord>), ProbeError> {
        let records: Vec<CalibrationRecord> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Ok((Self::from_records(&records)?, records))
    }

    pub fn insert(&mut self, profile: PeakProfile) {
        self.profiles.insert(profile.device_id.clone(), profile);
    }

    pub fn get(&self, device: &DeviceId) -> Option<&PeakProfile> {
        self.profiles.get(device)
    }

    pub fn calibration(&self, device: &DeviceId) -> Option<Calibration> {
        self.profiles.get(device).map(|p| p.calibration)
    }
}

/// Picks the probe a device is read with.
pub fn probe_for(model: &DeviceModel, profiles: &ProfileSet, manual: bool) -> Result<DeviceProbe, ProbeError> {
    if manual {
        return Ok(DeviceProbe::Manual);
    }
    match model.probe {
        ProbeKind::Screen => Ok(DeviceProbe::Screen {
            reference: reference_screen(&model.device_id),
            config: ImageDiffConfig::default(),
        }),
        ProbeKind::Traffic => profiles
            .get(&model.device_id)
            .cloned()
            .map(DeviceProbe::Traffic)
            .ok_or_else(|| ProbeError::Uncalibrated(model.device_id.to_string())),
    }
}

/// One functionality-experiment iteration against the simulator: power
/// cycle, trigger (or stay idle), then read the probe.
pub struct SimFunctionTest<'a> {
    pub sim: &'a mut Simulator,
    pub probe: &'a DeviceProbe,
    pub device: DeviceId,
    pub function: String,
    pub triggered: bool,
    /// Per-iteration traces, kept when `keep_segments` is set.
    pub segments: Vec<Vec<TraceEvent>>,
    pub keep_segments: bool,
}

impl<'a> SimFunctionTest<'a> {
    pub fn new(sim: &'a mut Simulator, probe: &'a DeviceProbe, device: &DeviceId, function: &str) -> Self {
        SimFunctionTest {
            sim,
            probe,
            device: device.clone(),
            function: function.to_string(),
            triggered: true,
            segments: Vec::new(),
            keep_segments: false,
        }
    }
}

impl FunctionTest for SimFunctionTest<'_> {
    type Error = SimError;

    fn trigger(&mut self) -> Result<(), SimError> {
        self.sim.power_cycle(&self.device)?;
        if self.triggered {
            self.sim.invoke_trigger(&self.device, &self.function)?;
        } else {
            self.sim.idle(&self.device, &self.function)?;
        }
        Ok(())
    }

    fn probe(&mut self) -> Result<bool, SimError> {
        let ok = self.probe.read(self.sim, &self.device, &self.function)?;
        if self.keep_segments {
            self.segments.push(self.sim.segment(&self.device).to_vec());
        }
        Ok(ok)
    }
}

/// Runs per scenario of the probe evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioRuns {
    /// (i) nothing blocked, function triggered.
    pub triggered: u32,
    /// (ii) every destination blocked, function triggered.
    pub blocked: u32,
    /// (iii) nothing blocked, no trigger.
    pub idle: u32,
}

impl Default for ScenarioRuns {
    fn default() -> Self {
        ScenarioRuns {
            triggered: 30,
            blocked: 20,
            idle: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeAccuracyReport {
    pub device_id: DeviceId,
    pub function: String,
    pub probe: String,
    pub success_rate: f64,
    pub failure_rate: f64,
    pub accuracy: f64,
    pub eligible: bool,
    pub triggered_runs: u32,
    pub triggered_successes: u32,
    pub blocked_runs: u32,
    pub blocked_failures: u32,
    pub idle_runs: u32,
    pub idle_failures: u32,
}

pub const ELIGIBILITY_THRESHOLD: f64 = 0.8;

fn count_readings(test: &mut SimFunctionTest<'_>, runs: u32, expect: bool) -> Result<u32, SimError> {
    let mut hits = 0;
    for _ in 0..runs {
        test.trigger()?;
        if test.probe()? == expect {
            hits += 1;
        }
    }
    Ok(hits)
}

/// Measures how well `probe` tells working from failed invocations.
pub fn evaluate_probe(
    sim: &mut Simulator,
    probe: &DeviceProbe,
    device: &DeviceId,
    function: &str,
    runs: ScenarioRuns,
) -> Result<ProbeAccuracyReport, SimError> {
    sim.fixture().device(device)?.function(function)?;
    let saved = sim.policy();
    sim.clear_policy();
    let mut test = SimFunctionTest::new(sim, probe, device, function);
    let triggered_successes = count_readings(&mut test, runs.triggered, true)?;
    test.triggered = false;
    let idle_failures = count_readings(&mut test, runs.idle, false)?;
    test.triggered = true;
    test.sim.set_policy(Arc::new(BlockEverything {
        devices: vec![device.clone()],
    }));
    let blocked_failures = count_readings(&mut test, runs.blocked, false);
    sim.set_policy(saved);
    let blocked_failures = blocked_failures?;

    let rate = |hits: u32, n: u32| if n == 0 { 0.0 } else { f64::from(hits) / f64::from(n) };
    let success_rate = rate(triggered_successes, runs.triggered);
    let failure_rate = rate(blocked_failures + idle_failures, runs.blocked + runs.idle);
    let accuracy = success_rate.min(failure_rate);
    Ok(ProbeAccuracyReport {
        device_id: device.clone(),
        function: function.to_string(),
        probe: probe.kind_name().to_string(),
        success_rate,
        failure_rate,
        accuracy,
        eligible: accuracy >= ELIGIBILITY_THRESHOLD,
        triggered_runs: runs.triggered,
        triggered_successes,
        blocked_runs: runs.blocked,
        blocked_failures,
        idle_runs: runs.idle,
        idle_failures,
    })
}
