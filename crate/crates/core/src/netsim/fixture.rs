//! Device models as loaded from the JSON fixture.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::model::{DestinationPattern, DeviceId, Protocol, Target};

fn default_port() -> u16 {
    443
}

fn default_proto() -> Protocol {
    Protocol::Tcp
}

fn default_bytes() -> u64 {
    200
}

/// One concrete server a replicated destination may resolve to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replica {
    pub host: String,
    pub weight: f64,
}

/// A destination a function contacts. With a replica pool, one replica is
/// drawn per invocation and `base` only names the pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DestinationSpec {
    pub base: String,
    #[serde(default = "default_port")]
    pub port: u16,
    #[serde(default = "default_proto")]
    pub proto: Protocol,
    /// Device-to-destination payload per invocation.
    #[serde(default = "default_bytes")]
    pub bytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replica_pool: Option<Vec<Replica>>,
}

impl DestinationSpec {
    pub fn new(base: &str) -> Self {
        DestinationSpec {
            base: base.to_string(),
            port: default_port(),
            proto: default_proto(),
            bytes: default_bytes(),
            replica_pool: None,
        }
    }

    pub fn with_pool(base: &str, hosts: &[&str]) -> Self {
        let w = 1.0 / hosts.len() as f64;
        DestinationSpec {
            replica_pool: Some(
                hosts
                    .iter()
                    .map(|h| Replica {
                        host: h.to_string(),
                        weight: w,
                    })
                    .collect(),
            ),
            ..Self::new(base)
        }
    }

    /// Every concrete target this spec can produce.
    pub fn concrete_targets(&self) -> Result<Vec<Target>, SimError> {
        match &self.replica_pool {
            Some(pool) => pool.iter().map(|r| parse_target(&r.host)).collect(),
            None => Ok(vec![parse_target(&self.base)?]),
        }
    }

    /// The pattern the classifier is expected to report for this spec.
    pub fn expected_pattern(&self) -> Result<DestinationPattern, SimError> {
        self.base
            .parse::<DestinationPattern>()
            .map_err(|e| SimError::InvalidFixture(format!("{}: {e}", self.base)))
    }

    fn validate(&self) -> Result<(), SimError> {
        self.expected_pattern()?;
        if let Some(pool) = &self.replica_pool {
            if pool.is_empty() {
                return Err(SimError::InvalidFixture(format!("{}: empty replica pool", self.base)));
            }
            let total: f64 = pool.iter().map(|r| r.weight).sum();
            if (total - 1.0).abs() > 1e-9 || pool.iter().any(|r| r.weight < 0.0) {
                return Err(SimError::InvalidFixture(format!(
                    "{}: replica weights must be non-negative and sum to 1",
                    self.base
                )));
            }
        }
        self.concrete_targets().map(|_| ())
    }
}

fn parse_target(raw: &str) -> Result<Target, SimError> {
    Target::parse(raw).map_err(|e| SimError::InvalidFixture(e.to_string()))
}

/// Peak traffic rate drawn uniformly from `[min_kbps, max_kbps]` and sent
/// to `destination` in one burst.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficProfile {
    pub destination: String,
    pub min_kbps: f64,
    pub max_kbps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionModel {
    /// Every one must be reachable for the function to succeed.
    #[serde(default)]
    pub required_deps: Vec<DestinationSpec>,
    /// Alternatives: at least one member of each group must be reachable.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub required_any_of: Vec<Vec<DestinationSpec>>,
    /// Contacted on every invocation, never needed.
    #[serde(default)]
    pub optional_contacts: Vec<DestinationSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation_traffic: Option<TrafficProfile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background_traffic: Option<TrafficProfile>,
}

impl FunctionModel {
    /// All contacted destinations in contact order.
    pub fn contacts(&self) -> Vec<&DestinationSpec> {
        let mut all: Vec<&DestinationSpec> = self
            .required_deps
            .iter()
            .chain(self.required_any_of.iter().flatten())
            .chain(&self.optional_contacts)
            .collect();
        all.sort_by(|a, b| a.base.cmp(&b.base));
        all
    }

    /// Patterns whose blocking alone breaks the function.
    pub fn required_patterns(&self) -> Result<BTreeSet<DestinationPattern>, SimError> {
        let mut out = BTreeSet::new();
        for d in &self.required_deps {
            out.insert(d.expected_pattern()?);
        }
        for group in &self.required_any_of {
            if group.len() == 1 {
                out.insert(group[0].expected_pattern()?);
            }
        }
        Ok(out)
    }

    pub fn optional_patterns(&self) -> Result<BTreeSet<DestinationPattern>, SimError> {
        self.optional_contacts
            .iter()
            .map(DestinationSpec::expected_pattern)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    /// Companion-app screenshot compared against a reference.
    Screen,
    /// Data peak towards the probe destinations.
    Traffic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceModel {
    pub device_id: DeviceId,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub category: String,
    pub manufacturer: String,
    #[serde(default)]
    pub boot_delay: f64,
    #[serde(default)]
    pub probe_error_rate: f64,
    pub probe: ProbeKind,
    /// Function tested by default; the others are additional functions.
    pub primary_function: String,
    pub functions: BTreeMap<String, FunctionModel>,
}

impl DeviceModel {
    pub fn function(&self, name: &str) -> Result<&FunctionModel, SimError> {
        self.functions.get(name).ok_or_else(|| SimError::UnknownFunction {
            device: self.device_id.to_string(),
            function: name.to_string(),
        })
    }

    pub fn function_names(&self) -> Vec<String> {
        let mut names = vec![self.primary_function.clone()];
        names.extend(
            self.functions
                .keys()
                .filter(|k| **k != self.primary_function)
                .cloned(),
        );
        names
    }

    fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidFixture(format!("{}: {msg}", self.device_id)));
        if self.functions.is_empty() {
            return bad("no functions".into());
        }
        if !self.functions.contains_key(&self.primary_function) {
            return bad(format!("primary function {} not defined", self.primary_function));
        }
        if !(0.0..1.0).contains(&self.probe_error_rate) {
            return bad("probe_error_rate must be in [0, 1)".into());
        }
        for (name, f) in &self.functions {
            for d in f.contacts() {
                d.validate()?;
            }
            let required: BTreeSet<&str> = f
                .required_deps
                .iter()
                .chain(f.required_any_of.iter().flatten())
                .map(|d| d.base.as_str())
                .collect();
            if let Some(d) = f.optional_contacts.iter().find(|d| required.contains(d.base.as_str())) {
                return bad(format!("{name}: {} both required and optional", d.base));
            }
            for p in [&f.activation_traffic, &f.background_traffic].into_iter().flatten() {
                parse_target(&p.destination)?;
                if !(p.min_kbps >= 0.0 && p.max_kbps >= p.min_kbps) {
                    return bad(format!("{name}: bad traffic profile"));
                }
            }
        }
        Ok(())
    }
}

/// The whole simulated testbed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub devices: Vec<DeviceModel>,
}

impl Fixture {
    pub fn new(devices: Vec<DeviceModel>) -> Result<Self, SimError> {
        let fixture = Fixture { devices };
        fixture.validate()?;
        Ok(fixture)
    }

    pub fn from_json_str(text: &str) -> Result<Self, SimError> {
        let fixture: Fixture = serde_json::from_str(text)?;
        fixture.validate()?;
        Ok(fixture)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::InvalidFixture(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    fn validate(&self) -> Result<(), SimError> {
        let mut seen = BTreeSet::new();
        for d in &self.devices {
            if !seen.insert(&d.device_id) {
                return Err(SimError::InvalidFixture(format!("duplicate device {}", d.device_id)));
            }
            d.validate()?;
        }
        Ok(())
    }

    pub fn device(&self, id: &DeviceId) -> Result<&DeviceModel, SimError> {
        self.devices
            .iter()
            .find(|d| &d.device_id == id)
            .ok_or_else(|| SimError::UnknownDevice(id.to_string()))
    }

    pub fn device_ids(&self) -> Vec<DeviceId> {
        self.devices.iter().map(|d| d.device_id.clone()).collect()
    }

    /// Every hostname any device may look up.
    pub fn hostnames(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for d in &self.devices {
            for f in d.functions.values() {
                for spec in f.contacts() {
                    for t in spec.concrete_targets().unwrap_or_default() {
                        if let Target::Host(h) = t {
                            out.insert(h.as_str().to_string());
                        }
                    }
                }
                for p in [&f.activation_traffic, &f.background_traffic].into_iter().flatten() {
                    if let Ok(Target::Host(h)) = Target::parse(&p.destination) {
                        out.insert(h.as_str().to_string());
                    }
                }
            }
        }
        out
    }
}
