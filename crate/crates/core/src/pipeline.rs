//! End-to-end runs over a fixture: probe gate, observation, classification,
//! merging, joint verification, and the multi-day effectiveness replay.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{assign_parties, AnalyticsError, PartyMap};
use crate::blocker::{compile_rules, BlockerError, BlockingStrategy, DeviceAssociation};
use crate::classifier::{
    classify, merge_functions, observe_destinations, verify_joint_blocking, ClassificationRun, ClassifierConfig,
    ClassifyError, JointCheck, ObservedDestinationSet,
};
use crate::consensus::ConsensusConfig;
use crate::grouping::{GroupingError, StaticWhois, DEFAULT_EPHEMERAL_THRESHOLD};
use crate::model::{Classification, DestinationPattern, DeviceId, IoTrimEntry, IoTrimList, ModelError, TraceEvent};
use crate::netsim::{Fixture, ProbeKind, SimConfig, SimError, Simulator};
use crate::probes::{evaluate_probe, probe_for, ProbeAccuracyReport, ProbeError, ProfileSet, ScenarioRuns};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown device {0}")]
    UnknownDevice(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Grouping(#[from] GroupingError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Blocker(#[from] BlockerError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Documented process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    Ok = 0,
    /// Bad arguments, configuration or input files.
    Usage = 1,
    GateFailure = 2,
    Inconclusive = 3,
    ServiceError = 4,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }
}

/// Everything a run needs. Loaded from JSON; command-line flags override
/// individual fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub fixture: PathBuf,
    /// Traffic-probe calibration records.
    pub calibration: Option<PathBuf>,
    pub whois: Option<PathBuf>,
    pub party_map: Option<PathBuf>,
    pub associations: Option<PathBuf>,
    /// `None` selects every device in the fixture.
    pub devices: Option<Vec<DeviceId>>,
    /// Test every function rather than only each device's primary one.
    pub all_functions: bool,
    /// Mandatory; there is no wall-clock fallback.
    pub seed: Option<u64>,
    pub consensus: ConsensusConfig,
    pub ephemeral_threshold: f64,
    pub strategy: BlockingStrategy,
    /// Devices read by hand instead of through their automated probe.
    pub manual_probes: Vec<DeviceId>,
    pub gate: ScenarioRuns,
    pub days: u32,
    /// Worker threads for per-device work.
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            fixture: PathBuf::from("fixtures/devices.json"),
            calibration: None,
            whois: None,
            party_map: None,
            associations: None,
            devices: None,
            all_functions: false,
            seed: None,
            consensus: ConsensusConfig::default(),
            ephemeral_threshold: DEFAULT_EPHEMERAL_THRESHOLD,
            strategy: BlockingStrategy::DenyListing,
            manual_probes: Vec::new(),
            gate: ScenarioRuns::default(),
            days: 7,
            jobs: 1,
        }
    }
}

impl RunConfig {
    /// Reads a JSON config. Relative paths in it are taken relative to the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let mut cfg: RunConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.fixture);
        for p in [&mut cfg.calibration, &mut cfg.whois, &mut cfg.party_map, &mut cfg.associations]
            .into_iter()
            .flatten()
        {
            rebase(p);
        }
        Ok(cfg)
    }

    /// Config pointing at the fixtures shipped in `dir`.
    pub fn for_fixture_dir(dir: &Path, seed: u64) -> Self {
        let opt = |name: &str| Some(dir.join(name)).filter(|p| p.exists());
        RunConfig {
            fixture: dir.join("devices.json"),
            calibration: opt("calibration.json"),
            whois: opt("whois.json"),
            party_map: opt("party_map.json"),
            associations: opt("associations.json"),
            seed: Some(seed),
            ..Default::default()
        }
    }

    pub fn seed(&self) -> Result<u64, PipelineError> {
        self.seed
            .ok_or_else(|| PipelineError::Config("a seed is required (--seed or \"seed\" in the config)".into()))
    }

    pub fn classifier(&self) -> ClassifierConfig {
        ClassifierConfig {
            consensus: self.consensus,
            ephemeral_threshold: self.ephemeral_threshold,
        }
    }

    /// Loads the fixture and checks the device selection against it.
    pub fn load_fixture(&self) -> Result<Arc<Fixture>, PipelineError> {
        self.seed()?;
        self.consensus
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        let fixture = Fixture::load(&self.fixture)?;
        for d in self.devices.iter().flatten().chain(&self.manual_probes) {
            fixture.device(d).map_err(|_| PipelineError::UnknownDevice(d.to_string()))?;
        }
        Ok(Arc::new(fixture))
    }

    pub fn selected(&self, fixture: &Fixture) -> Vec<DeviceId> {
        match &self.devices {
            None => fixture.device_ids(),
            Some(wanted) => {
                let wanted: BTreeSet<&DeviceId> = wanted.iter().collect();
                fixture.device_ids().into_iter().filter(|d| wanted.contains(d)).collect()
            }
        }
    }

    pub fn profiles(&self) -> Result<ProfileSet, PipelineError> {
        match &self.calibration {
            Some(p) => Ok(ProfileSet::load(p)?.0),
            None => Ok(ProfileSet::default()),
        }
    }

    pub fn whois_oracle(&self) -> Result<StaticWhois, PipelineError> {
        match &self.whois {
            Some(p) => Ok(StaticWhois::load(p)?),
            None => Ok(StaticWhois::default()),
        }
    }

    pub fn association_map(&self) -> Result<DeviceAssociation, PipelineError> {
        match &self.associations {
            Some(p) => Ok(DeviceAssociation::load(p)?),
            None => Ok(DeviceAssociation::new()),
        }
    }
}

/// Seed for one device's simulator, so a device's results do not depend on
/// which other devices were selected.
pub fn device_seed(seed: u64, device: &DeviceId) -> u64 {
    // FNV-1a over the id, mixed with the run seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in device.as_str().bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "detail")]
pub enum DeviceStatus {
    Classified,
    /// Probe accuracy below the gate; the device was not classified.
    SkippedGate,
    /// Some destination could not be marked.
    Inconclusive,
    /// Classification stopped with an error.
    Aborted(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceAudit {
    pub device_id: DeviceId,
    pub probe: String,
    pub gate: Option<ProbeAccuracyReport>,
    pub observed: Vec<ObservedDestinationSet>,
    pub runs: Vec<ClassificationRun>,
    pub joint: Option<JointCheck>,
    pub status: DeviceStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub list: IoTrimList,
    pub audit: Vec<DeviceAudit>,
    pub skipped: Vec<DeviceId>,
    pub inconclusive: Vec<DeviceId>,
    pub status: ExitStatus,
}

struct Context {
    fixture: Arc<Fixture>,
    profiles: ProfileSet,
    whois: StaticWhois,
    manual: BTreeSet<DeviceId>,
    classifier: ClassifierConfig,
    gate: ScenarioRuns,
    all_functions: bool,
    seed: u64,
}

fn run_device(ctx: &Context, device: &DeviceId) -> Result<(DeviceAudit, Vec<IoTrimEntry>), PipelineError> {
    let model = ctx.fixture.device(device)?;
    let manual = ctx.manual.contains(device);
    let probe = probe_for(model, &ctx.profiles, manual)?;
    let mut sim = Simulator::new(
        ctx.fixture.clone(),
        SimConfig {
            record_trace: false,
            ..SimConfig::seeded(device_seed(ctx.seed, device))
        },
    );
    let mut audit = DeviceAudit {
        device_id: device.clone(),
        probe: probe.kind_name().to_string(),
        gate: None,
        observed: Vec::new(),
        runs: Vec::new(),
        joint: None,
        status: DeviceStatus::Classified,
    };
    if !manual {
        let report = evaluate_probe(&mut sim, &probe, device, &model.primary_function, ctx.gate)?;
        let eligible = report.eligible;
        audit.gate = Some(report);
        if !eligible {
            tracing::warn!(%device, "probe below the accuracy gate; skipping");
            audit.status = DeviceStatus::SkippedGate;
            return Ok((audit, Vec::new()));
        }
    }
    let functions = if ctx.all_functions {
        model.function_names()
    } else {
        vec![model.primary_function.clone()]
    };
    for f in &functions {
        let step = observe_destinations(&mut sim, &probe, device, f, &ctx.classifier, &ctx.whois)
            .and_then(|observed| {
                let run = classify(&mut sim, &probe, &observed, &ctx.classifier)?;
                Ok((observed, run))
            });
        match step {
            Ok((observed, run)) => {
                if !run.is_complete() {
                    audit.status = DeviceStatus::Inconclusive;
                }
                audit.observed.push(observed);
                audit.runs.push(run);
            }
            Err(e) => {
                tracing::error!(%device, function = %f, "classification aborted: {e}");
                audit.status = DeviceStatus::Aborted(e.to_string());
                return Ok((audit, Vec::new()));
            }
        }
    }
    let entries = merge_functions(&audit.runs)?;
    let joint = verify_joint_blocking(&mut sim, &probe, device, &functions, &entries, &ctx.classifier)?;
    audit.joint = Some(joint);
    Ok((audit, entries))
}

fn parallel_map<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<R>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

/// Classifies every selected device. Devices failing the probe gate are
/// skipped and listed; the status reflects the worst outcome.
pub fn cmd_pipeline(config: &RunConfig) -> Result<PipelineOutcome, PipelineError> {
    let fixture = config.load_fixture()?;
    let ctx = Context {
        profiles: config.profiles()?,
        whois: config.whois_oracle()?,
        manual: config.manual_probes.iter().cloned().collect(),
        classifier: config.classifier(),
        gate: config.gate,
        all_functions: config.all_functions,
        seed: config.seed()?,
        fixture: fixture.clone(),
    };
    let devices = config.selected(&fixture);
    let results = parallel_map(&devices, config.jobs, |d| run_device(&ctx, d));

    let mut audit = Vec::new();
    let mut entries = Vec::new();
    for r in results {
        let (a, e) = r?;
        audit.push(a);
        entries.extend(e);
    }
    if let Some(path) = &config.party_map {
        let map = PartyMap::load(path)?;
        let manufacturers: BTreeMap<DeviceId, String> = fixture
            .devices
            .iter()
            .map(|d| (d.device_id.clone(), d.manufacturer.clone()))
            .collect();
        assign_parties(&mut entries, &manufacturers, &map);
    }
    let pick = |pred: fn(&DeviceStatus) -> bool| -> Vec<DeviceId> {
        audit.iter().filter(|a| pred(&a.status)).map(|a| a.device_id.clone()).collect()
    };
    let skipped = pick(|s| *s == DeviceStatus::SkippedGate);
    let inconclusive = pick(|s| matches!(s, DeviceStatus::Inconclusive | DeviceStatus::Aborted(_)));
    let status = if !inconclusive.is_empty() {
        ExitStatus::Inconclusive
    } else if !skipped.is_empty() {
        ExitStatus::GateFailure
    } else {
        ExitStatus::Ok
    };
    Ok(PipelineOutcome {
        list: IoTrimList::new(entries)?,
        audit,
        skipped,
        inconclusive,
        status,
    })
}

/// Probe-gate reports for the selected devices' primary functions.
pub fn cmd_evaluate_probes(config: &RunConfig) -> Result<Vec<ProbeAccuracyReport>, PipelineError> {
    let fixture = config.load_fixture()?;
    let profiles = config.profiles()?;
    let seed = config.seed()?;
    let devices = config.selected(&fixture);
    let reports = parallel_map(&devices, config.jobs, |d| -> Result<ProbeAccuracyReport, PipelineError> {
        let model = fixture.device(d)?;
        let probe = probe_for(model, &profiles, false)?;
        let mut sim = Simulator::new(fixture.clone(), SimConfig::seeded(device_seed(seed, d)));
        Ok(evaluate_probe(&mut sim, &probe, d, &model.primary_function, config.gate)?)
    });
    reports.into_iter().collect()
}

fn single_function(config: &RunConfig, fixture: &Fixture, function: Option<&str>) -> Result<(DeviceId, String), PipelineError> {
    let Some([device]) = config.devices.as_deref() else {
        return Err(PipelineError::Config("select exactly one device".into()));
    };
    let model = fixture.device(device)?;
    let function = function.unwrap_or(&model.primary_function).to_string();
    model.function(&function)?;
    Ok((device.clone(), function))
}

/// Observation stage alone, for one device and function.
pub fn cmd_observe(config: &RunConfig, function: Option<&str>) -> Result<ObservedDestinationSet, PipelineError> {
    let fixture = config.load_fixture()?;
    let (device, function) = single_function(config, &fixture, function)?;
    let probe = probe_for(fixture.device(&device)?, &config.profiles()?, config.manual_probes.contains(&device))?;
    let mut sim = Simulator::new(fixture.clone(), SimConfig::seeded(device_seed(config.seed()?, &device)));
    Ok(observe_destinations(
        &mut sim,
        &probe,
        &device,
        &function,
        &config.classifier(),
        &config.whois_oracle()?,
    )?)
}

/// Classification stage alone, starting from a saved observation.
pub fn cmd_classify(config: &RunConfig, observed: &ObservedDestinationSet) -> Result<ClassificationRun, PipelineError> {
    let fixture = config.load_fixture()?;
    let device = &observed.device_id;
    let model = fixture.device(device)?;
    let probe = probe_for(model, &config.profiles()?, config.manual_probes.contains(device))?;
    let mut sim = Simulator::new(fixture.clone(), SimConfig::seeded(device_seed(config.seed()?, device)));
    Ok(classify(&mut sim, &probe, observed, &config.classifier())?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvocationFailure {
    pub day: u32,
    pub device_id: DeviceId,
    pub function: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffectivenessReport {
    pub days: u32,
    pub devices: usize,
    pub invocations: u32,
    pub successes: u32,
    pub failures: Vec<InvocationFailure>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub notice: Option<String>,
}

impl EffectivenessReport {
    pub fn failing_devices(&self) -> BTreeSet<&DeviceId> {
        self.failures.iter().map(|f| &f.device_id).collect()
    }
}

/// Replays one primary invocation per device per day with the list's
/// deny rules installed, counting the true outcomes.
pub fn cmd_effectiveness(config: &RunConfig, list: &IoTrimList) -> Result<EffectivenessReport, PipelineError> {
    let fixture = config.load_fixture()?;
    let devices = config.selected(&fixture);
    let mut report = EffectivenessReport {
        days: config.days,
        devices: devices.len(),
        invocations: 0,
        successes: 0,
        failures: Vec::new(),
        notice: None,
    };
    if devices.is_empty() || config.days == 0 {
        report.notice = Some("no devices or days selected; nothing was replayed".into());
        return Ok(report);
    }
    let rules = compile_rules(
        list.entries(),
        &config.association_map()?,
        BlockingStrategy::DenyListing,
        None,
        0,
    );
    let mut sim = Simulator::new(
        fixture.clone(),
        SimConfig {
            record_trace: false,
            ..SimConfig::seeded(config.seed()?)
        },
    );
    sim.set_policy(Arc::new(rules));
    for day in 0..config.days {
        for d in &devices {
            let function = fixture.device(d)?.primary_function.clone();
            sim.power_cycle(d)?;
            let outcome = sim.invoke_trigger(d, &function)?;
            report.invocations += 1;
            if outcome.succeeded {
                report.successes += 1;
            } else {
                report.failures.push(InvocationFailure {
                    day,
                    device_id: d.clone(),
                    function,
                });
            }
        }
    }
    Ok(report)
}

/// Copy of `list` with one required pattern moved to the block side, for
/// fault-injection runs.
pub fn inject_fault(list: &IoTrimList, device: &DeviceId, pattern: &DestinationPattern) -> Result<IoTrimList, PipelineError> {
    let mut entries = list.entries().to_vec();
    let target = entries
        .iter_mut()
        .find(|e| &e.device_id == device && &e.pattern == pattern && e.classification == Classification::Required)
        .ok_or_else(|| PipelineError::Config(format!("{device} has no required entry {pattern}")))?;
    target.classification = Classification::NonRequired;
    Ok(IoTrimList::new(entries)?)
}

/// One successful primary invocation per selected device with nothing
/// blocked, as the router would capture it.
pub fn capture_traces(config: &RunConfig) -> Result<Vec<TraceEvent>, PipelineError> {
    let fixture = config.load_fixture()?;
    let seed = config.seed()?;
    let mut events = Vec::new();
    for d in config.selected(&fixture) {
        let function = fixture.device(&d)?.primary_function.clone();
        let mut sim = Simulator::new(fixture.clone(), SimConfig::seeded(device_seed(seed, &d)));
        sim.power_cycle(&d)?;
        let outcome = sim.invoke_trigger(&d, &function)?;
        if !outcome.succeeded {
            return Err(PipelineError::Config(format!("{d}: unblocked invocation failed")));
        }
        events.extend(sim.take_trace());
    }
    // one merged capture, as a gateway would record it
    events.sort_by(|a, b| a.timestamp().total_cmp(&b.timestamp()));
    Ok(events)
}

/// Traffic-probe calibrations recomputed from the simulator: activation
/// peaks from triggered runs and background peaks from idle runs.
pub fn measure_calibration(
    config: &RunConfig,
    runs: u32,
) -> Result<Vec<crate::probes::CalibrationRecord>, PipelineError> {
    use crate::probes::{calibrate_threshold, data_peak, CalibrationRecord, DEFAULT_WINDOW_SECONDS};
    let fixture = config.load_fixture()?;
    let profiles = config.profiles()?;
    let seed = config.seed()?;
    let mut out = Vec::new();
    for d in config.selected(&fixture) {
        let model = fixture.device(&d)?;
        if model.probe != ProbeKind::Traffic {
            continue;
        }
        let f = model.function(&model.primary_function)?;
        let destinations: Vec<DestinationPattern> = match profiles.get(&d) {
            Some(p) => p.probe_destinations.clone(),
            None => match &f.activation_traffic {
                Some(t) => vec![t.destination.parse()?],
                None => continue,
            },
        };
        let mut sim = Simulator::new(fixture.clone(), SimConfig::seeded(device_seed(seed, &d)));
        let mut active = Vec::new();
        let mut idle = Vec::new();
        for _ in 0..runs {
            sim.power_cycle(&d)?;
            let outcome = sim.invoke_trigger(&d, &model.primary_function)?;
            let peak = data_peak(&outcome.segment, &d, &destinations, DEFAULT_WINDOW_SECONDS)?;
            // runs where the capture missed the burst are not activations
            if peak > 0.0 && outcome.succeeded {
                active.push(peak);
            }
            sim.power_cycle(&d)?;
            let segment = sim.idle(&d, &model.primary_function)?;
            idle.push(data_peak(&segment, &d, &destinations, DEFAULT_WINDOW_SECONDS)?);
        }
        let cal = calibrate_threshold(&active, &idle)?;
        out.push(CalibrationRecord {
            device_id: d,
            destinations,
            b_max: cal.b_max,
            a_min: cal.a_min,
            x: cal.x,
        });
    }
    Ok(out)
}
