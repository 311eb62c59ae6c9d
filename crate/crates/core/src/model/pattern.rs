use std::cmp::Ordering;
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::psl::effective_sld;
use super::ModelError;

/// Lowercases and validates a DNS hostname. A single trailing dot is dropped.
pub fn normalize_hostname(raw: &str) -> Result<String, ModelError> {
    let trimmed = raw.trim();
    let trimmed = trimmed.strip_suffix('.').unwrap_or(trimmed);
    let lowered = trimmed.to_ascii_lowercase();
    if lowered.is_empty() || lowered.len() > 253 {
        return Err(ModelError::InvalidHostname(raw.to_string()));
    }
    for label in lowered.split('.') {
        let valid = !label.is_empty()
            && label.len() <= 63
            && label
                .bytes()
                .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-' || b == b'_');
        if !valid {
            return Err(ModelError::InvalidHostname(raw.to_string()));
        }
    }
    Ok(lowered)
}

/// A validated, lowercase hostname.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Hostname(String);

impl Hostname {
    pub fn new(raw: &str) -> Result<Self, ModelError> {
        normalize_hostname(raw).map(Hostname)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn sld(&self) -> Result<String, ModelError> {
        effective_sld(&self.0)
    }
}

impl TryFrom<String> for Hostname {
    type Error = ModelError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Hostname::new(&value)
    }
}

impl From<Hostname> for String {
    fn from(value: Hostname) -> Self {
        value.0
    }
}

impl fmt::Display for Hostname {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for Hostname {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Hostname::new(s)
    }
}

/// Something a device contacts: a hostname, or a bare IPv4 address when no
/// DNS answer explains it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    Host(Hostname),
    Ip(Ipv4Addr),
}

impl Target {
    pub fn parse(raw: &str) -> Result<Self, ModelError> {
        if let Ok(ip) = raw.trim().parse::<Ipv4Addr>() {
            return Ok(Target::Ip(ip));
        }
        Hostname::new(raw)
            .map(Target::Host)
            .map_err(|_| ModelError::InvalidTarget(raw.to_string()))
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Host(h) => h.fmt(f),
            Target::Ip(ip) => ip.fmt(f),
        }
    }
}

/// IPv4 network in `addr/prefix` form with host bits cleared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CidrBlock {
    network: Ipv4Addr,
    prefix: u8,
}

impl CidrBlock {
    pub fn new(addr: Ipv4Addr, prefix: u8) -> Result<Self, ModelError> {
        if prefix > 32 {
            return Err(ModelError::InvalidPattern(format!("{addr}/{prefix}")));
        }
        let network = Ipv4Addr::from(u32::from(addr) & Self::mask(prefix));
        Ok(CidrBlock { network, prefix })
    }

    fn mask(prefix: u8) -> u32 {
        if prefix == 0 {
            0
        } else {
            u32::MAX << (32 - u32::from(prefix))
        }
    }

    pub fn network(&self) -> Ipv4Addr {
        self.network
    }

    pub fn prefix(&self) -> u8 {
        self.prefix
    }

    pub fn contains(&self, ip: Ipv4Addr) -> bool {
        u32::from(ip) & Self::mask(self.prefix) == u32::from(self.network)
    }
}

impl fmt::Display for CidrBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.network, self.prefix)
    }
}

impl FromStr for CidrBlock {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModelError::InvalidPattern(s.to_string());
        let (addr, prefix) = s.trim().split_once('/').ok_or_else(bad)?;
        let addr: Ipv4Addr = addr.parse().map_err(|_| bad())?;
        let prefix: u8 = prefix.parse().map_err(|_| bad())?;
        CidrBlock::new(addr, prefix)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    Hostname,
    WildcardHostname,
    IpAddress,
    CidrBlock,
}

/// The unit of observation, classification, and blocking.
///
/// Patterns order lexicographically by their canonical string, which is the
/// order the classifier tests destinations in.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum DestinationPattern {
    Hostname(Hostname),
    /// `*` followed by a literal suffix; the `*` matches zero or more characters.
    Wildcard { suffix: String },
    IpAddress(Ipv4Addr),
    CidrBlock(CidrBlock),
}

impl DestinationPattern {
    pub fn hostname(raw: &str) -> Result<Self, ModelError> {
        Hostname::new(raw).map(DestinationPattern::Hostname)
    }

    /// Builds `*<suffix>`. The suffix must keep the whole registrable domain,
    /// so `*.zz.com` and `*-b-c.ww.com` are accepted while `*zz.com` and
    /// `*.com` are not.
    pub fn wildcard(suffix: &str) -> Result<Self, ModelError> {
        let suffix = suffix.trim().to_ascii_lowercase();
        let bad = || ModelError::InvalidPattern(format!("*{suffix}"));
        if suffix.contains('*') {
            return Err(bad());
        }
        let core = suffix.trim_start_matches(['.', '-', '_']);
        let sld = effective_sld(core).map_err(|_| bad())?;
        if !suffix.ends_with(&format!(".{sld}")) {
            return Err(bad());
        }
        // everything right of the first dot must itself be a valid hostname
        let (_, rest) = suffix.split_once('.').ok_or_else(bad)?;
        normalize_hostname(rest).map_err(|_| bad())?;
        Ok(DestinationPattern::Wildcard { suffix })
    }

    pub fn kind(&self) -> PatternKind {
        match self {
            DestinationPattern::Hostname(_) => PatternKind::Hostname,
            DestinationPattern::Wildcard { .. } => PatternKind::WildcardHostname,
            DestinationPattern::IpAddress(_) => PatternKind::IpAddress,
            DestinationPattern::CidrBlock(_) => PatternKind::CidrBlock,
        }
    }

    pub fn is_host_pattern(&self) -> bool {
        matches!(
            self,
            DestinationPattern::Hostname(_) | DestinationPattern::Wildcard { .. }
        )
    }

    pub fn matches(&self, target: &Target) -> bool {
        match (self, target) {
            (DestinationPattern::Hostname(h), Target::Host(t)) => h == t,
            (DestinationPattern::Wildcard { suffix }, Target::Host(t)) => {
                t.as_str().ends_with(suffix.as_str())
            }
            (DestinationPattern::IpAddress(ip), Target::Ip(t)) => ip == t,
            (DestinationPattern::CidrBlock(block), Target::Ip(t)) => block.contains(*t),
            _ => false,
        }
    }

    /// Parses and matches a raw target string.
    pub fn matches_str(&self, target: &str) -> Result<bool, ModelError> {
        Target::parse(target).map(|t| self.matches(&t))
    }

    /// Registrable domain for hostname patterns.
    pub fn sld(&self) -> Option<String> {
        match self {
            DestinationPattern::Hostname(h) => h.sld().ok(),
            DestinationPattern::Wildcard { suffix } => {
                effective_sld(suffix.trim_start_matches(['.', '-', '_'])).ok()
            }
            _ => None,
        }
    }

    /// Converts a concrete contacted target into an exact pattern.
    pub fn exact(target: &Target) -> Self {
        match target {
            Target::Host(h) => DestinationPattern::Hostname(h.clone()),
            Target::Ip(ip) => DestinationPattern::IpAddress(*ip),
        }
    }
}

impl fmt::Display for DestinationPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DestinationPattern::Hostname(h) => h.fmt(f),
            DestinationPattern::Wildcard { suffix } => write!(f, "*{suffix}"),
            DestinationPattern::IpAddress(ip) => ip.fmt(f),
            DestinationPattern::CidrBlock(block) => block.fmt(f),
        }
    }
}

impl FromStr for DestinationPattern {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some(suffix) = s.strip_prefix('*') {
            return DestinationPattern::wildcard(suffix);
        }
        if s.contains('/') {
            return s.parse().map(DestinationPattern::CidrBlock);
        }
        if let Ok(ip) = s.parse::<Ipv4Addr>() {
            return Ok(DestinationPattern::IpAddress(ip));
        }
        DestinationPattern::hostname(s).map_err(|_| ModelError::InvalidPattern(s.to_string()))
    }
}

impl Ord for DestinationPattern {
    fn cmp(&self, other: &Self) -> Ordering {
        self.to_string().cmp(&other.to_string())
    }
}

impl PartialOrd for DestinationPattern {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Serialized form: `{"pattern": "...", "kind": "..."}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatternRecord {
    pub pattern: String,
    pub kind: PatternKind,
}

impl From<&DestinationPattern> for PatternRecord {
    fn from(p: &DestinationPattern) -> Self {
        PatternRecord {
            pattern: p.to_string(),
            kind: p.kind(),
        }
    }
}

impl TryFrom<PatternRecord> for DestinationPattern {
    type Error = ModelError;
    fn try_from(rec: PatternRecord) -> Result<Self, Self::Error> {
        let pattern: DestinationPattern = rec.pattern.parse()?;
        if pattern.kind() != rec.kind {
            return Err(ModelError::InvalidPattern(format!(
                "{} is not a {:?}",
                rec.pattern, rec.kind
            )));
        }
        Ok(pattern)
    }
}

impl Serialize for DestinationPattern {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DestinationPattern {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}
