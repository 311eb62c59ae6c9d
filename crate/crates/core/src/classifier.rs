//! Block-and-test classification: observe what a function contacts, then
//! block each destination in turn and keep the block if the function still
//! works.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::{run_functionality_experiment, ConsensusConfig, ExperimentVerdict, Verdict};
use crate::grouping::{group_destinations, Group, GroupingError, ObservationMatrix, WhoisOracle, DEFAULT_EPHEMERAL_THRESHOLD};
use crate::model::{
    attribute_flows, is_exempt_flow, Classification, DestinationPattern, DeviceBlocklist, DeviceId,
    Direction, IoTrimEntry, PartyType, TraceEvent,
};
use crate::netsim::{SimError, Simulator};
use crate::probes::{DeviceProbe, SimFunctionTest};

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Grouping(#[from] GroupingError),
    #[error("observation run for {device}/{function} did not succeed ({verdict:?}); check the testbed")]
    TestbedFault {
        device: String,
        function: String,
        verdict: Verdict,
    },
    #[error("no destinations observed for {device}/{function}")]
    NothingObserved { device: String, function: String },
    #[error("runs belong to different devices: {0} and {1}")]
    MixedDevices(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub consensus: ConsensusConfig,
    pub ephemeral_threshold: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            consensus: ConsensusConfig::default(),
            ephemeral_threshold: DEFAULT_EPHEMERAL_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedDestinationSet {
    pub device_id: DeviceId,
    pub function_name: String,
    /// Post-grouping, in test order.
    pub destinations: Vec<DestinationPattern>,
    pub observation_matrix: ObservationMatrix,
    pub groups: Vec<Group>,
    pub ungroupable: Vec<DestinationPattern>,
    pub verdict: ExperimentVerdict,
}

/// Destinations the device sent traffic to in one iteration, named by the
/// DNS answers that explain them. DNS and NTP flows are left out.
pub fn iteration_destinations(segment: &[TraceEvent], device: &DeviceId) -> BTreeSet<DestinationPattern> {
    attribute_flows(segment, device)
        .into_iter()
        .filter(|f| f.record.direction == Direction::DeviceToDst)
        .filter(|f| !is_exempt_flow(f.record.dst_port, f.record.proto))
        .map(|f| DestinationPattern::exact(&f.destination))
        .collect()
}

/// Runs the function with nothing blocked and records what it contacts.
pub fn observe_destinations<W: WhoisOracle + ?Sized>(
    sim: &mut Simulator,
    probe: &DeviceProbe,
    device: &DeviceId,
    function: &str,
    config: &ClassifierConfig,
    whois: &W,
) -> Result<ObservedDestinationSet, ClassifyError> {
    sim.fixture().device(device)?.function(function)?;
    let saved = sim.policy();
    sim.clear_policy();
    let mut test = SimFunctionTest::new(sim, probe, device, function);
    test.keep_segments = true;
    let verdict = run_functionality_experiment(&mut test, &config.consensus);
    let segments = std::mem::take(&mut test.segments);
    sim.set_policy(saved);
    let verdict = verdict?;
    if verdict.verdict != Verdict::Success {
        return Err(ClassifyError::TestbedFault {
            device: device.to_string(),
            function: function.to_string(),
            verdict: verdict.verdict,
        });
    }

    let raw = ObservationMatrix::from_iterations(
        segments.iter().map(|seg| iteration_destinations(seg, device)),
    );
    let grouped = group_destinations(&raw, whois, config.ephemeral_threshold)?;
    Ok(ObservedDestinationSet {
        device_id: device.clone(),
        function_name: function.to_string(),
        destinations: grouped.destinations(),
        observation_matrix: grouped.matrix,
        groups: grouped.groups,
        ungroupable: grouped.ungroupable,
        verdict,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mark {
    pub pattern: DestinationPattern,
    /// `None` when the experiment was inconclusive; the destination is then
    /// left unblocked and reported.
    pub classification: Option<Classification>,
    pub verdict: ExperimentVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationRun {
    pub device_id: DeviceId,
    pub function_name: String,
    pub marks: Vec<Mark>,
    pub residual_block_set: Vec<DestinationPattern>,
}

impl ClassificationRun {
    pub fn with_class(&self, class: Classification) -> Vec<&DestinationPattern> {
        self.marks
            .iter()
            .filter(|m| m.classification == Some(class))
            .map(|m| &m.pattern)
            .collect()
    }

    pub fn unmarked(&self) -> Vec<&DestinationPattern> {
        self.marks
            .iter()
            .filter(|m| m.classification.is_none())
            .map(|m| &m.pattern)
            .collect()
    }

    pub fn is_complete(&self) -> bool {
        self.marks.iter().all(|m| m.classification.is_some())
    }
}

/// Tests observed destinations in lexicographic order.
pub fn classify(
    sim: &mut Simulator,
    probe: &DeviceProbe,
    observed: &ObservedDestinationSet,
    config: &ClassifierConfig,
) -> Result<ClassificationRun, ClassifyError> {
    let mut order = observed.destinations.clone();
    order.sort();
    classify_in_order(sim, probe, observed, &order, config)
}

/// Tests destinations in the given order. Each destination is blocked on
/// top of those already found non-required; if the function still works the
/// block stays, otherwise it is lifted and the destination is required.
pub fn classify_in_order(
    sim: &mut Simulator,
    probe: &DeviceProbe,
    observed: &ObservedDestinationSet,
    order: &[DestinationPattern],
    config: &ClassifierConfig,
) -> Result<ClassificationRun, ClassifyError> {
    let device = &observed.device_id;
    let function = observed.function_name.as_str();
    if order.is_empty() {
        return Err(ClassifyError::NothingObserved {
            device: device.to_string(),
            function: function.to_string(),
        });
    }
    let saved = sim.policy();
    let mut retained: Vec<DestinationPattern> = Vec::new();
    let mut marks = Vec::with_capacity(order.len());
    for pattern in order {
        let mut candidate = retained.clone();
        candidate.push(pattern.clone());
        sim.set_policy(Arc::new(DeviceBlocklist::with_patterns(device, candidate)));
        let mut test = SimFunctionTest::new(sim, probe, device, function);
        let verdict = match run_functionality_experiment(&mut test, &config.consensus) {
            Ok(v) => v,
            Err(e) => {
                sim.set_policy(saved);
                return Err(e.into());
            }
        };
        let classification = match verdict.verdict {
            Verdict::Success => {
                retained.push(pattern.clone());
                Some(Classification::NonRequired)
            }
            Verdict::Failure => Some(Classification::Required),
            Verdict::Inconclusive => {
                tracing::warn!(%device, function, %pattern, "inconclusive experiment; destination left unmarked");
                None
            }
        };
        marks.push(Mark {
            pattern: pattern.clone(),
            classification,
            verdict,
        });
    }
    sim.set_policy(saved);
    Ok(ClassificationRun {
        device_id: device.clone(),
        function_name: function.to_string(),
        marks,
        residual_block_set: retained,
    })
}

/// Combines the runs of several functions of one device: required if some
/// function needs it, otherwise non-required. Party is left `Unknown`.
pub fn merge_functions(runs: &[ClassificationRun]) -> Result<Vec<IoTrimEntry>, ClassifyError> {
    let Some(first) = runs.first() else {
        return Ok(Vec::new());
    };
    let mut required: BTreeMap<DestinationPattern, Vec<String>> = BTreeMap::new();
    let mut optional: BTreeMap<DestinationPattern, Vec<String>> = BTreeMap::new();
    for run in runs {
        if run.device_id != first.device_id {
            return Err(ClassifyError::MixedDevices(
                first.device_id.to_string(),
                run.device_id.to_string(),
            ));
        }
        for m in &run.marks {
            let bucket = match m.classification {
                Some(Classification::Required) => &mut required,
                Some(Classification::NonRequired) => &mut optional,
                None => continue,
            };
            let fns = bucket.entry(m.pattern.clone()).or_default();
            if !fns.contains(&run.function_name) {
                fns.push(run.function_name.clone());
            }
        }
    }
    let mut entries: Vec<IoTrimEntry> = required
        .iter()
        .map(|(p, fns)| entry(&first.device_id, p, Classification::Required, fns))
        .collect();
    entries.extend(
        optional
            .iter()
            .filter(|(p, _)| !required.contains_key(*p))
            .map(|(p, fns)| entry(&first.device_id, p, Classification::NonRequired, fns)),
    );
    entries.sort_by(|a, b| a.pattern.cmp(&b.pattern));
    Ok(entries)
}

fn entry(device: &DeviceId, pattern: &DestinationPattern, class: Classification, fns: &[String]) -> IoTrimEntry {
    IoTrimEntry {
        device_id: device.clone(),
        pattern: pattern.clone(),
        classification: class,
        party: PartyType::Unknown,
        functions: fns.to_vec(),
    }
}

/// Deny-list policy for one device's entries: non-required patterns blocked,
/// required patterns exempt.
pub fn deny_policy<'a, I>(device: &DeviceId, entries: I) -> DeviceBlocklist
where
    I: IntoIterator<Item = &'a IoTrimEntry>,
{
    let mut policy = DeviceBlocklist::new();
    for e in entries.into_iter().filter(|e| &e.device_id == device) {
        match e.classification {
            Classification::NonRequired => policy.block(device, e.pattern.clone()),
            Classification::Required => policy.exempt(device, e.pattern.clone()),
        }
    }
    policy
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointCheck {
    pub device_id: DeviceId,
    pub passed: bool,
    pub verdicts: Vec<(String, ExperimentVerdict)>,
}

/// Blocks every non-required destination at once and checks that each
/// tested function still works.
pub fn verify_joint_blocking(
    sim: &mut Simulator,
    probe: &DeviceProbe,
    device: &DeviceId,
    functions: &[String],
    entries: &[IoTrimEntry],
    config: &ClassifierConfig,
) -> Result<JointCheck, ClassifyError> {
    let saved = sim.policy();
    sim.set_policy(Arc::new(deny_policy(device, entries)));
    let mut verdicts = Vec::new();
    let mut failure = None;
    for f in functions {
        let mut test = SimFunctionTest::new(sim, probe, device, f);
        match run_functionality_experiment(&mut test, &config.consensus) {
            Ok(v) => verdicts.push((f.clone(), v)),
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    sim.set_policy(saved);
    if let Some(e) = failure {
        return Err(e.into());
    }
    let passed = verdicts.iter().all(|(_, v)| v.succeeded());
    if !passed {
        tracing::warn!(%device, "joint blocking breaks a function");
    }
    Ok(JointCheck {
        device_id: device.clone(),
        passed,
        verdicts,
    })
}
