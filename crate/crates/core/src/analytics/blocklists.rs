//! Frozen snapshots of public blocklists and overlap with IoTrim lists.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AnalyticsError;
use crate::model::{normalize_hostname, Classification, DestinationPattern, DeviceId, IoTrimEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnapshotFormat {
    /// `0.0.0.0 name` / `127.0.0.1 name`; exact matches only.
    Hosts,
    /// One name per line; exact matches only.
    Domains,
    /// One name per line, optionally `*.`-prefixed; covers subdomains.
    Wildcard,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlocklistSnapshot {
    pub name: String,
    pub format: SnapshotFormat,
    pub entries: BTreeSet<String>,
}

#[derive(Debug, Deserialize)]
struct IndexEntry {
    name: String,
    file: String,
    format: SnapshotFormat,
}

impl BlocklistSnapshot {
    pub fn parse(name: &str, format: SnapshotFormat, text: &str) -> Result<Self, AnalyticsError> {
        let mut entries = BTreeSet::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = || AnalyticsError::BadSnapshot(format!("{name}: line {}: {line:?}", idx + 1));
            let names: Vec<&str> = match format {
                SnapshotFormat::Hosts => {
                    let mut tokens = line.split_whitespace();
                    let addr = tokens.next().ok_or_else(bad)?;
                    if addr.parse::<std::net::IpAddr>().is_err() {
                        return Err(bad());
                    }
                    tokens.collect()
                }
                SnapshotFormat::Domains => vec![line],
                SnapshotFormat::Wildcard => vec![line.strip_prefix("*.").unwrap_or(line)],
            };
            for n in names {
                if matches!(n, "localhost" | "localhost.localdomain" | "broadcasthost") {
                    continue;
                }
                entries.insert(normalize_hostname(n).map_err(|_| bad())?);
            }
        }
        Ok(BlocklistSnapshot {
            name: name.to_string(),
            format,
            entries,
        })
    }

    /// Reads every snapshot listed in `dir/index.json`.
    pub fn load_dir(dir: &Path) -> Result<Vec<Self>, AnalyticsError> {
        let index: Vec<IndexEntry> = serde_json::from_str(&std::fs::read_to_string(dir.join("index.json"))?)?;
        index
            .iter()
            .map(|i| {
                let text = std::fs::read_to_string(dir.join(&i.file))
                    .map_err(|e| AnalyticsError::BadSnapshot(format!("{}: {e}", i.file)))?;
                Self::parse(&i.name, i.format, &text)
            })
            .collect()
    }

    fn covers_name(&self, name: &str) -> bool {
        if self.entries.contains(name) {
            return true;
        }
        self.format == SnapshotFormat::Wildcard
            && self.entries.iter().any(|e| name.ends_with(&format!(".{e}")))
    }

    /// Whether the list blocks the destination under its own semantics.
    pub fn covers(&self, pattern: &DestinationPattern) -> bool {
        match pattern {
            DestinationPattern::Hostname(h) => self.covers_name(h.as_str()),
            // a wildcard is covered only by a suffix rule over all its names
            DestinationPattern::Wildcard { suffix } => {
                self.format == SnapshotFormat::Wildcard
                    && self
                        .entries
                        .iter()
                        .any(|e| suffix == &format!(".{e}") || suffix.ends_with(&format!(".{e}")))
            }
            DestinationPattern::IpAddress(ip) => self.entries.contains(&ip.to_string()),
            DestinationPattern::CidrBlock(_) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ComparisonRow {
    pub device_id: DeviceId,
    pub non_required: usize,
    /// One count per snapshot, in snapshot order.
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RequiredHit {
    pub device_id: DeviceId,
    pub destination: DestinationPattern,
    pub list: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlocklistComparison {
    pub lists: Vec<String>,
    /// Devices with at least one non-required destination.
    pub rows: Vec<ComparisonRow>,
    pub total_non_required: usize,
    pub totals: Vec<usize>,
    pub required_hits: Vec<RequiredHit>,
}

pub fn compare_blocklists(entries: &[IoTrimEntry], snapshots: &[BlocklistSnapshot]) -> BlocklistComparison {
    let mut rows: BTreeMap<&DeviceId, ComparisonRow> = BTreeMap::new();
    let mut required_hits = Vec::new();
    for e in entries {
        match e.classification {
            Classification::NonRequired => {
                let row = rows.entry(&e.device_id).or_insert_with(|| ComparisonRow {
                    device_id: e.device_id.clone(),
                    non_required: 0,
                    counts: vec![0; snapshots.len()],
                });
                row.non_required += 1;
                for (i, s) in snapshots.iter().enumerate() {
                    row.counts[i] += usize::from(s.covers(&e.pattern));
                }
            }
            Classification::Required => {
                for s in snapshots.iter().filter(|s| s.covers(&e.pattern)) {
                    required_hits.push(RequiredHit {
                        device_id: e.device_id.clone(),
                        destination: e.pattern.clone(),
                        list: s.name.clone(),
                    });
                }
            }
        }
    }
    let rows: Vec<ComparisonRow> = rows.into_values().collect();
    let totals = (0..snapshots.len())
        .map(|i| rows.iter().map(|r| r.counts[i]).sum())
        .collect();
    BlocklistComparison {
        lists: snapshots.iter().map(|s| s.name.clone()).collect(),
        total_non_required: rows.iter().map(|r| r.non_required).sum(),
        rows,
        totals,
        required_hits,
    }
}
