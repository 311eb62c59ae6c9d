//! Compiling IoTrim lists into per-device rule sets and deciding flows.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::BlockerError;
use crate::model::{
    is_exempt_flow, BlockPolicy, Classification, DestinationPattern, DeviceId, IoTrimEntry,
    PatternRecord, Protocol, Target,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockingStrategy {
    /// Block known non-required destinations, allow the rest.
    DenyListing,
    /// Allow known required destinations, block the rest.
    AllowListing,
}

impl BlockingStrategy {
    pub fn default_policy(self) -> DefaultPolicy {
        match self {
            BlockingStrategy::DenyListing => DefaultPolicy::Allow,
            BlockingStrategy::AllowListing => DefaultPolicy::Block,
        }
    }
}

impl FromStr for BlockingStrategy {
    type Err = BlockerError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "deny" | "deny_listing" => Ok(BlockingStrategy::DenyListing),
            "allow" | "allow_listing" => Ok(BlockingStrategy::AllowListing),
            _ => Err(BlockerError::Config(format!("unknown strategy {s:?}"))),
        }
    }
}

impl fmt::Display for BlockingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlockingStrategy::DenyListing => "deny_listing",
            BlockingStrategy::AllowListing => "allow_listing",
        })
    }
}

/// What happens to clients not associated with a known device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefaultPolicy {
    Allow,
    Block,
}

impl FromStr for DefaultPolicy {
    type Err = BlockerError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "allow" => Ok(DefaultPolicy::Allow),
            "block" => Ok(DefaultPolicy::Block),
            _ => Err(BlockerError::Config(format!("unknown default policy {s:?}"))),
        }
    }
}

/// Normalizes a client address: IPv4/IPv6 literal or a MAC address.
pub fn normalize_address(raw: &str) -> Result<String, BlockerError> {
    let raw = raw.trim();
    if let Ok(ip) = raw.parse::<std::net::IpAddr>() {
        return Ok(ip.to_string());
    }
    let parts: Vec<&str> = raw.split([':', '-']).collect();
    let is_mac = parts.len() == 6
        && parts
            .iter()
            .all(|p| p.len() == 2 && p.bytes().all(|b| b.is_ascii_hexdigit()));
    if is_mac {
        return Ok(parts.join(":").to_ascii_lowercase());
    }
    Err(BlockerError::Config(format!("{raw:?} is neither an IP nor a MAC address")))
}

/// Client address (source IP or MAC) to device.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, DeviceId>", into = "BTreeMap<String, DeviceId>")]
pub struct DeviceAssociation {
    map: BTreeMap<String, DeviceId>,
}

impl TryFrom<BTreeMap<String, DeviceId>> for DeviceAssociation {
    type Error = BlockerError;
    fn try_from(raw: BTreeMap<String, DeviceId>) -> Result<Self, Self::Error> {
        let mut assoc = DeviceAssociation::default();
        for (addr, dev) in raw {
            assoc.insert(&addr, dev)?;
        }
        Ok(assoc)
    }
}

impl From<DeviceAssociation> for BTreeMap<String, DeviceId> {
    fn from(a: DeviceAssociation) -> Self {
        a.map
    }
}

impl DeviceAssociation {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fails if the address is already bound to another device.
    pub fn insert(&mut self, address: &str, device: DeviceId) -> Result<(), BlockerError> {
        let addr = normalize_address(address)?;
        match self.map.get(&addr) {
            Some(existing) if *existing != device => Err(BlockerError::Config(format!(
                "address {addr} associated with both {existing} and {device}"
            ))),
            _ => {
                self.map.insert(addr, device);
                Ok(())
            }
        }
    }

    pub fn device_for(&self, address: &str) -> Option<&DeviceId> {
        normalize_address(address).ok().and_then(|a| self.map.get(&a))
    }

    pub fn addresses_of(&self, device: &DeviceId) -> Vec<String> {
        self.map
            .iter()
            .filter(|(_, d)| *d == device)
            .map(|(a, _)| a.clone())
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &DeviceId)> {
        self.map.iter()
    }

    pub fn load(path: &Path) -> Result<Self, BlockerError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DeviceRules {
    pub device_id: DeviceId,
    /// Deny-listing: destinations to sinkhole or drop.
    pub block: Vec<DestinationPattern>,
    /// Allow-listing: the only destinations let through.
    pub allow: Vec<DestinationPattern>,
    /// Deny-listing: required destinations that a broader block pattern
    /// would otherwise catch.
    pub exempt: Vec<DestinationPattern>,
}

/// An immutable compiled rule set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleSet {
    pub strategy: BlockingStrategy,
    pub default_policy: DefaultPolicy,
    /// Seconds since the Unix epoch.
    pub generated_at: u64,
    pub associations: DeviceAssociation,
    pub devices: BTreeMap<DeviceId, DeviceRules>,
    /// Problems noticed while compiling (not serialized).
    pub warnings: Vec<String>,
}

/// Turns IoTrim entries into per-device tables for one strategy.
pub fn compile_rules(
    entries: &[IoTrimEntry],
    assoc: &DeviceAssociation,
    strategy: BlockingStrategy,
    default_policy: Option<DefaultPolicy>,
    generated_at: u64,
) -> RuleSet {
    let mut devices: BTreeMap<DeviceId, DeviceRules> = BTreeMap::new();
    for e in entries {
        let rules = devices.entry(e.device_id.clone()).or_insert_with(|| DeviceRules {
            device_id: e.device_id.clone(),
            ..Default::default()
        });
        let table = match (strategy, e.classification) {
            (BlockingStrategy::DenyListing, Classification::NonRequired) => &mut rules.block,
            (BlockingStrategy::DenyListing, Classification::Required) => &mut rules.exempt,
            (BlockingStrategy::AllowListing, Classification::Required) => &mut rules.allow,
            (BlockingStrategy::AllowListing, Classification::NonRequired) => continue,
        };
        if !table.contains(&e.pattern) {
            table.push(e.pattern.clone());
        }
    }
    // exemptions only matter where a block pattern also matches
    for rules in devices.values_mut() {
        let block = rules.block.clone();
        rules.exempt.retain(|r| block.iter().any(|b| overlaps(b, r)));
        rules.block.sort();
        rules.allow.sort();
        rules.exempt.sort();
    }
    let mut warnings = Vec::new();
    for (addr, dev) in assoc.iter() {
        if !devices.contains_key(dev) {
            let msg = format!("{addr} is associated with unknown device {dev}; default policy applies");
            tracing::warn!("{msg}");
            warnings.push(msg);
        }
    }
    RuleSet {
        strategy,
        default_policy: default_policy.unwrap_or_else(|| strategy.default_policy()),
        generated_at,
        associations: assoc.clone(),
        devices,
        warnings,
    }
}

/// Whether some target could match both patterns.
fn overlaps(a: &DestinationPattern, b: &DestinationPattern) -> bool {
    use DestinationPattern as P;
    match (a, b) {
        (P::Wildcard { suffix }, P::Hostname(h)) | (P::Hostname(h), P::Wildcard { suffix }) => {
            h.as_str().ends_with(suffix.as_str())
        }
        (P::Wildcard { suffix: x }, P::Wildcard { suffix: y }) => x.ends_with(y.as_str()) || y.ends_with(x.as_str()),
        (P::CidrBlock(c), P::IpAddress(ip)) | (P::IpAddress(ip), P::CidrBlock(c)) => c.contains(*ip),
        (P::CidrBlock(x), P::CidrBlock(y)) => x.contains(y.network()) || y.contains(x.network()),
        _ => a == b,
    }
}

impl RuleSet {
    pub fn device_for(&self, client: &str) -> Option<&DeviceId> {
        self.associations
            .device_for(client)
            .filter(|d| self.devices.contains_key(*d))
    }

    /// Decision for a known device, ignoring associations.
    pub fn blocks_device(&self, device: &DeviceId, dst: &Target, port: u16, proto: Protocol) -> bool {
        if is_exempt_flow(port, proto) {
            return false;
        }
        let Some(rules) = self.devices.get(device) else {
            return self.default_policy == DefaultPolicy::Block;
        };
        match self.strategy {
            BlockingStrategy::DenyListing => {
                rules.block.iter().any(|p| p.matches(dst)) && !rules.exempt.iter().any(|p| p.matches(dst))
            }
            BlockingStrategy::AllowListing => !rules.allow.iter().any(|p| p.matches(dst)),
        }
    }

    pub fn pattern_count(&self) -> usize {
        self.devices
            .values()
            .map(|d| match self.strategy {
                BlockingStrategy::DenyListing => d.block.len(),
                BlockingStrategy::AllowListing => d.allow.len(),
            })
            .sum()
    }

    pub fn to_json_string(&self) -> Result<String, BlockerError> {
        let mut text = serde_json::to_string_pretty(&RulesDocument::from(self))?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json_str(text: &str) -> Result<Self, BlockerError> {
        let doc: RulesDocument = serde_json::from_str(text)?;
        doc.try_into()
    }

    pub fn load(path: &Path) -> Result<Self, BlockerError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

/// DNS-layer decision: whether `client`'s lookup of `name` is sinkholed.
pub fn blocks_hostname(rules: &RuleSet, client: &str, name: &crate::model::Hostname) -> bool {
    let dst = Target::Host(name.clone());
    match rules.device_for(client) {
        Some(device) => rules.blocks_device(device, &dst, 443, Protocol::Tcp),
        None => rules.default_policy == DefaultPolicy::Block,
    }
}

/// Flow-level decision for a client address.
pub fn should_block(rules: &RuleSet, client: &str, dst: &Target, port: u16, proto: Protocol) -> bool {
    if is_exempt_flow(port, proto) {
        return false;
    }
    match rules.device_for(client) {
        Some(device) => rules.blocks_device(device, dst, port, proto),
        None => rules.default_policy == DefaultPolicy::Block,
    }
}

impl BlockPolicy for RuleSet {
    fn blocks(&self, device: &DeviceId, dst: &Target, port: u16, proto: Protocol) -> bool {
        self.blocks_device(device, dst, port, proto)
    }
}

#[derive(Serialize, Deserialize)]
struct RulesDocument {
    strategy: BlockingStrategy,
    default_policy: DefaultPolicy,
    generated_at: u64,
    #[serde(default)]
    associations: DeviceAssociation,
    devices: Vec<DeviceDocument>,
}

#[derive(Serialize, Deserialize)]
struct DeviceDocument {
    device_id: DeviceId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    block: Option<Vec<PatternRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    allow: Option<Vec<PatternRecord>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    exempt: Vec<PatternRecord>,
}

fn records(ps: &[DestinationPattern]) -> Vec<PatternRecord> {
    ps.iter().map(PatternRecord::from).collect()
}

fn patterns(rs: Vec<PatternRecord>) -> Result<Vec<DestinationPattern>, BlockerError> {
    rs.into_iter()
        .map(|r| DestinationPattern::try_from(r).map_err(BlockerError::from))
        .collect()
}

impl From<&RuleSet> for RulesDocument {
    fn from(r: &RuleSet) -> Self {
        let deny = r.strategy == BlockingStrategy::DenyListing;
        RulesDocument {
            strategy: r.strategy,
            default_policy: r.default_policy,
            generated_at: r.generated_at,
            associations: r.associations.clone(),
            devices: r
                .devices
                .values()
                .map(|d| DeviceDocument {
                    device_id: d.device_id.clone(),
                    block: deny.then(|| records(&d.block)),
                    allow: (!deny).then(|| records(&d.allow)),
                    exempt: records(&d.exempt),
                })
                .collect(),
        }
    }
}

impl TryFrom<RulesDocument> for RuleSet {
    type Error = BlockerError;
    fn try_from(doc: RulesDocument) -> Result<Self, Self::Error> {
        let mut devices = BTreeMap::new();
        for d in doc.devices {
            let rules = DeviceRules {
                device_id: d.device_id.clone(),
                block: patterns(d.block.unwrap_or_default())?,
                allow: patterns(d.allow.unwrap_or_default())?,
                exempt: patterns(d.exempt)?,
            };
            devices.insert(d.device_id, rules);
        }
        Ok(RuleSet {
            strategy: doc.strategy,
            default_policy: doc.default_policy,
            generated_at: doc.generated_at,
            associations: doc.associations,
            devices,
            warnings: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PartyType;

    fn e(dev: &str, pat: &str, class: Classification) -> IoTrimEntry {
        IoTrimEntry {
            device_id: dev.into(),
            pattern: pat.parse().unwrap(),
            classification: class,
            party: PartyType::First,
            functions: vec!["main".into()],
        }
    }

    fn sample() -> Vec<IoTrimEntry> {
        use Classification::*;
        vec![
            e("allure-speaker", "api.amazon.com", NonRequired),
            e("allure-speaker", "bob-dispatch-prod-eu.amazon.com", Required),
            e("echo-dot", "api.amazon.com", Required),
            e("echo-dot", "device-metrics-us.amazon.com", NonRequired),
            e("echo-dot", "*.cloudfront.net", NonRequired),
            e("google-home", "*.googlevideo.com", NonRequired),
            e("google-home", "*knez.googlevideo.com", Required),
            e("google-home", "www.google.com", Required),
        ]
    }

    fn assoc() -> DeviceAssociation {
        let mut a = DeviceAssociation::new();
        a.insert("192.168.1.20", "allure-speaker".into()).unwrap();
        a.insert("192.168.1.21", "echo-dot".into()).unwrap();
        a.insert("AA-BB-CC-DD-EE-FF", "google-home".into()).unwrap();
        a.insert("192.168.1.22", "google-home".into()).unwrap();
        a
    }

    fn t(s: &str) -> Target {
        Target::parse(s).unwrap()
    }

    #[test]
    fn deny_listing_is_device_specific() {
        let rules = compile_rules(&sample(), &assoc(), BlockingStrategy::DenyListing, None, 0);
        assert_eq!(rules.pattern_count(), 4);
        assert!(should_block(&rules, "192.168.1.21", &t("device-metrics-us.amazon.com"), 443, Protocol::Tcp));
        assert!(should_block(&rules, "192.168.1.20", &t("api.amazon.com"), 443, Protocol::Tcp));
        assert!(!should_block(&rules, "192.168.1.21", &t("api.amazon.com"), 443, Protocol::Tcp));
        assert!(should_block(&rules, "192.168.1.21", &t("d3p8zr0ffa9t17.cloudfront.net"), 443, Protocol::Tcp));
        assert!(!should_block(&rules, "192.168.1.99", &t("device-metrics-us.amazon.com"), 443, Protocol::Tcp));
    }

    #[test]
    fn required_wins_over_broader_block() {
        let rules = compile_rules(&sample(), &assoc(), BlockingStrategy::DenyListing, None, 0);
        let gh = "192.168.1.22";
        assert!(should_block(&rules, gh, &t("r1---sn-4g5e6nsz.googlevideo.com"), 443, Protocol::Tcp));
        assert!(!should_block(&rules, gh, &t("r1---sn-5hnaknez.googlevideo.com"), 443, Protocol::Tcp));
        let dev = &rules.devices[&DeviceId::from("google-home")];
        assert_eq!(dev.exempt.len(), 1);
    }

    #[test]
    fn exempt_flows_always_pass() {
        for strategy in [BlockingStrategy::DenyListing, BlockingStrategy::AllowListing] {
            let rules = compile_rules(&sample(), &assoc(), strategy, Some(DefaultPolicy::Block), 0);
            for client in ["192.168.1.21", "10.9.9.9"] {
                for dst in ["device-metrics-us.amazon.com", "1.2.3.4"] {
                    assert!(!should_block(&rules, client, &t(dst), 123, Protocol::Udp));
                    assert!(!should_block(&rules, client, &t(dst), 53, Protocol::Udp));
                    assert!(!should_block(&rules, client, &t(dst), 53, Protocol::Tcp));
                }
            }
        }
    }

    #[test]
    fn allow_listing() {
        let rules = compile_rules(&sample(), &assoc(), BlockingStrategy::AllowListing, None, 0);
        assert_eq!(rules.pattern_count(), 4);
        assert_eq!(rules.default_policy, DefaultPolicy::Block);
        assert!(!should_block(&rules, "192.168.1.21", &t("api.amazon.com"), 443, Protocol::Tcp));
        assert!(should_block(&rules, "192.168.1.21", &t("example.org"), 443, Protocol::Tcp));
        assert!(should_block(&rules, "10.0.0.1", &t("example.org"), 443, Protocol::Tcp));
    }

    #[test]
    fn unknown_device_warns_and_uses_default() {
        let mut a = assoc();
        a.insert("192.168.1.50", "mystery".into()).unwrap();
        let rules = compile_rules(&sample(), &a, BlockingStrategy::DenyListing, Some(DefaultPolicy::Block), 0);
        assert_eq!(rules.warnings.len(), 1);
        assert!(should_block(&rules, "192.168.1.50", &t("example.org"), 443, Protocol::Tcp));
    }

    #[test]
    fn empty_list_blocks_nothing() {
        let rules = compile_rules(&[], &DeviceAssociation::new(), BlockingStrategy::DenyListing, None, 0);
        assert_eq!(rules.pattern_count(), 0);
        assert!(!should_block(&rules, "192.168.1.2", &t("anything.com"), 443, Protocol::Tcp));
    }

    #[test]
    fn association_rules() {
        let mut a = DeviceAssociation::new();
        a.insert("aa:bb:cc:dd:ee:ff", "x".into()).unwrap();
        assert_eq!(a.device_for("AA-BB-CC-DD-EE-FF"), Some(&DeviceId::from("x")));
        assert!(a.insert("aa:bb:cc:dd:ee:ff", "y".into()).is_err());
        assert!(a.insert("not-an-address", "y".into()).is_err());
    }

    #[test]
    fn document_round_trip() {
        for strategy in [BlockingStrategy::DenyListing, BlockingStrategy::AllowListing] {
            let rules = compile_rules(&sample(), &assoc(), strategy, None, 1_700_000_000);
            let text = rules.to_json_string().unwrap();
            let v: serde_json::Value = serde_json::from_str(&text).unwrap();
            let dev0 = &v["devices"][0];
            match strategy {
                BlockingStrategy::DenyListing => assert!(dev0.get("block").is_some() && dev0.get("allow").is_none()),
                BlockingStrategy::AllowListing => assert!(dev0.get("allow").is_some() && dev0.get("block").is_none()),
            }
            assert_eq!(RuleSet::from_json_str(&text).unwrap(), rules);
        }
    }
}
