//! The IoTrim list: per-device classified destinations.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::pattern::{DestinationPattern, PatternKind};
use super::{DeviceId, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Required,
    NonRequired,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartyType {
    First,
    Support,
    Third,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IoTrimEntry {
    pub device_id: DeviceId,
    pub pattern: DestinationPattern,
    pub classification: Classification,
    pub party: PartyType,
    /// Functions whose classification runs established this entry.
    pub functions: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct EntryRecord {
    device_id: DeviceId,
    pattern: String,
    kind: PatternKind,
    classification: Classification,
    party: PartyType,
    functions: Vec<String>,
}

impl Serialize for IoTrimEntry {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        EntryRecord {
            device_id: self.device_id.clone(),
            pattern: self.pattern.to_string(),
            kind: self.pattern.kind(),
            classification: self.classification,
            party: self.party,
            functions: self.functions.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for IoTrimEntry {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rec = EntryRecord::deserialize(deserializer)?;
        let pattern = DestinationPattern::try_from(super::pattern::PatternRecord {
            pattern: rec.pattern,
            kind: rec.kind,
        })
        .map_err(serde::de::Error::custom)?;
        Ok(IoTrimEntry {
            device_id: rec.device_id,
            pattern,
            classification: rec.classification,
            party: rec.party,
            functions: rec.functions,
        })
    }
}

/// A validated collection of entries; `(device_id, pattern)` is unique.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IoTrimList {
    entries: Vec<IoTrimEntry>,
}

impl IoTrimList {
    pub fn new(mut entries: Vec<IoTrimEntry>) -> Result<Self, ModelError> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert((e.device_id.clone(), e.pattern.clone())) {
                return Err(ModelError::DuplicateEntry {
                    device: e.device_id.to_string(),
                    pattern: e.pattern.to_string(),
                });
            }
        }
        entries.sort_by(|a, b| {
            a.device_id
                .cmp(&b.device_id)
                .then_with(|| a.pattern.cmp(&b.pattern))
        });
        Ok(IoTrimList { entries })
    }

    pub fn entries(&self) -> &[IoTrimEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, class: Classification) -> usize {
        self.entries
            .iter()
            .filter(|e| e.classification == class)
            .count()
    }

    pub fn for_device<'a>(&'a self, device: &'a DeviceId) -> impl Iterator<Item = &'a IoTrimEntry> + 'a {
        self.entries.iter().filter(move |e| &e.device_id == device)
    }

    pub fn devices(&self) -> Vec<DeviceId> {
        let mut ids: Vec<DeviceId> = self.entries.iter().map(|e| e.device_id.clone()).collect();
        ids.dedup();
        ids
    }

    /// Entries grouped by device, in device order.
    pub fn by_device(&self) -> BTreeMap<DeviceId, Vec<&IoTrimEntry>> {
        let mut map: BTreeMap<DeviceId, Vec<&IoTrimEntry>> = BTreeMap::new();
        for e in &self.entries {
            map.entry(e.device_id.clone()).or_default().push(e);
        }
        map
    }

    pub fn into_entries(self) -> Vec<IoTrimEntry> {
        self.entries
    }

    pub fn to_json<W: Write>(&self, out: W) -> Result<(), ModelError> {
        serde_json::to_writer_pretty(out, &self.entries)?;
        Ok(())
    }

    pub fn to_json_string(&self) -> Result<String, ModelError> {
        let mut buf = Vec::new();
        self.to_json(&mut buf)?;
        buf.push(b'\n');
        Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
    }

    pub fn from_json<R: Read>(input: R) -> Result<Self, ModelError> {
        let entries: Vec<IoTrimEntry> = serde_json::from_reader(input)?;
        IoTrimList::new(entries)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(dev: &str, pat: &str, class: Classification) -> IoTrimEntry {
        IoTrimEntry {
            device_id: DeviceId::from(dev),
            pattern: pat.parse().unwrap(),
            classification: class,
            party: PartyType::First,
            functions: vec!["main".into()],
        }
    }

    #[test]
    fn field_names_are_stable() {
        let list = IoTrimList::new(vec![entry(
            "echo-dot",
            "*.cloudfront.net",
            Classification::NonRequired,
        )])
        .unwrap();
        let json: serde_json::Value =
            serde_json::from_str(&list.to_json_string().unwrap()).unwrap();
        let obj = json[0].as_object().unwrap();
        let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
        keys.sort();
        assert_eq!(
            keys,
            ["classification", "device_id", "functions", "kind", "party", "pattern"]
        );
        assert_eq!(obj["kind"], "wildcard_hostname");
        assert_eq!(obj["classification"], "non_required");
    }

    #[test]
    fn duplicates_rejected() {
        let dup = vec![
            entry("fire-tv", "api.amazon.com", Classification::Required),
            entry("fire-tv", "api.amazon.com", Classification::NonRequired),
        ];
        assert!(matches!(
            IoTrimList::new(dup),
            Err(ModelError::DuplicateEntry { .. })
        ));
    }

    proptest! {
        #[test]
        fn json_round_trip(hosts in proptest::collection::btree_set("[a-z]{1,6}\\.[a-z]{2,6}\\.com", 0..12), req in proptest::collection::vec(any::<bool>(), 12)) {
            let entries: Vec<IoTrimEntry> = hosts.iter().enumerate().map(|(i, h)| {
                entry(if i % 2 == 0 { "a" } else { "b" }, h,
                      if req[i] { Classification::Required } else { Classification::NonRequired })
            }).collect();
            let list = IoTrimList::new(entries).unwrap();
            let text = list.to_json_string().unwrap();
            prop_assert_eq!(IoTrimList::from_json(text.as_bytes()).unwrap(), list);
        }
    }
}
