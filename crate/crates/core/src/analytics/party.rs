//! First, support, or third party, relative to the device manufacturer.

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AnalyticsError;
use crate::model::{CidrBlock, DestinationPattern, DeviceId, IoTrimEntry, PartyType};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawPartyMap", into = "RawPartyMap")]
pub struct PartyMap {
    pub manufacturer_domains: BTreeMap<String, BTreeSet<String>>,
    /// Advertising and analytics SLDs; third party even for their owner.
    pub third_party_slds: BTreeSet<String>,
    pub support_slds: BTreeSet<String>,
    pub support_ip_blocks: Vec<CidrBlock>,
}

#[derive(Serialize, Deserialize)]
struct RawPartyMap {
    manufacturer_domains: BTreeMap<String, BTreeSet<String>>,
    #[serde(default)]
    third_party_slds: BTreeSet<String>,
    #[serde(default)]
    support_slds: BTreeSet<String>,
    #[serde(default)]
    support_ip_blocks: Vec<String>,
}

impl TryFrom<RawPartyMap> for PartyMap {
    type Error = AnalyticsError;
    fn try_from(raw: RawPartyMap) -> Result<Self, Self::Error> {
        let support_ip_blocks = raw
            .support_ip_blocks
            .iter()
            .map(|b| b.parse::<CidrBlock>())
            .collect::<Result<_, _>>()?;
        Ok(PartyMap {
            manufacturer_domains: raw.manufacturer_domains,
            third_party_slds: raw.third_party_slds,
            support_slds: raw.support_slds,
            support_ip_blocks,
        })
    }
}

impl From<PartyMap> for RawPartyMap {
    fn from(m: PartyMap) -> Self {
        RawPartyMap {
            manufacturer_domains: m.manufacturer_domains,
            third_party_slds: m.third_party_slds,
            support_slds: m.support_slds,
            support_ip_blocks: m.support_ip_blocks.iter().map(|b| b.to_string()).collect(),
        }
    }
}

impl PartyMap {
    pub fn from_json_str(text: &str) -> Result<Self, AnalyticsError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, AnalyticsError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    fn in_support_blocks(&self, ip: Ipv4Addr) -> bool {
        self.support_ip_blocks.iter().any(|b| b.contains(ip))
    }
}

/// Party of one destination for a device made by `manufacturer`.
pub fn classify_party(pattern: &DestinationPattern, manufacturer: &str, map: &PartyMap) -> PartyType {
    let Some(own) = map.manufacturer_domains.get(manufacturer) else {
        return PartyType::Unknown;
    };
    let ip = match pattern {
        DestinationPattern::IpAddress(ip) => Some(*ip),
        DestinationPattern::CidrBlock(b) => Some(b.network()),
        _ => None,
    };
    if let Some(ip) = ip {
        return if map.in_support_blocks(ip) {
            PartyType::Support
        } else {
            PartyType::Third
        };
    }
    let Some(sld) = pattern.sld() else {
        return PartyType::Unknown;
    };
    if map.third_party_slds.contains(&sld) {
        PartyType::Third
    } else if own.contains(&sld) {
        PartyType::First
    } else if map.support_slds.contains(&sld) {
        PartyType::Support
    } else {
        PartyType::Third
    }
}

/// Fills in `party` on every entry. Devices without a known manufacturer
/// get `Unknown`.
pub fn assign_parties(entries: &mut [IoTrimEntry], manufacturers: &BTreeMap<DeviceId, String>, map: &PartyMap) {
    for e in entries {
        e.party = match manufacturers.get(&e.device_id) {
            Some(m) => classify_party(&e.pattern, m, map),
            None => PartyType::Unknown,
        };
    }
}
