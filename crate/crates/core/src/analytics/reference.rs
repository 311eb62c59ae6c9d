//! The reference per-device destination table, loaded as a fixture.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AnalyticsError;
use crate::model::{Classification, DestinationPattern, DeviceId, IoTrimEntry, IoTrimList, PartyType};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    pub pattern: String,
    pub party: PartyType,
    /// Only contacted by an additional function.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub additional: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub device_id: DeviceId,
    pub name: String,
    pub category: String,
    pub required: Vec<ReferenceEntry>,
    pub non_required: Vec<ReferenceEntry>,
}

/// Row counts exactly as listed, duplicates included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ListedCounts {
    pub destinations: usize,
    pub required: usize,
    pub non_required: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceTable {
    rows: Vec<ReferenceRow>,
}

impl ReferenceTable {
    pub fn from_json_str(text: &str) -> Result<Self, AnalyticsError> {
        let rows: Vec<ReferenceRow> = serde_json::from_str(text)?;
        for row in &rows {
            for e in row.required.iter().chain(&row.non_required) {
                e.pattern.parse::<DestinationPattern>()?;
            }
        }
        Ok(ReferenceTable { rows })
    }

    pub fn load(path: &Path) -> Result<Self, AnalyticsError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn rows(&self) -> &[ReferenceRow] {
        &self.rows
    }

    pub fn row(&self, device: &DeviceId) -> Option<&ReferenceRow> {
        self.rows.iter().find(|r| &r.device_id == device)
    }

    pub fn categories(&self) -> BTreeMap<DeviceId, String> {
        self.rows.iter().map(|r| (r.device_id.clone(), r.category.clone())).collect()
    }

    pub fn listed_counts(&self, include_additional: bool) -> ListedCounts {
        let count = |v: &[ReferenceEntry]| v.iter().filter(|e| include_additional || !e.additional).count();
        let required = self.rows.iter().map(|r| count(&r.required)).sum();
        let non_required = self.rows.iter().map(|r| count(&r.non_required)).sum();
        ListedCounts {
            destinations: required + non_required,
            required,
            non_required,
        }
    }

    /// Patterns a device lists as both required and non-required.
    pub fn contradictions(&self) -> Vec<(DeviceId, DestinationPattern)> {
        let mut out = Vec::new();
        for row in &self.rows {
            for r in &row.required {
                let rp: DestinationPattern = r.pattern.parse().expect("validated on load");
                let clash = row
                    .non_required
                    .iter()
                    .any(|n| n.pattern.parse::<DestinationPattern>().ok().as_ref() == Some(&rp));
                if clash {
                    out.push((row.device_id.clone(), rp));
                }
            }
        }
        out
    }

    /// The table as an IoTrim list. A pattern a device lists under both
    /// columns keeps only its required entry.
    pub fn iotrim_list(&self, include_additional: bool) -> Result<IoTrimList, AnalyticsError> {
        let mut entries: Vec<IoTrimEntry> = Vec::new();
        for row in &self.rows {
            let mut seen: BTreeMap<DestinationPattern, ()> = BTreeMap::new();
            let columns = [
                (Classification::Required, &row.required),
                (Classification::NonRequired, &row.non_required),
            ];
            for (class, column) in columns {
                for e in column.iter().filter(|e| include_additional || !e.additional) {
                    let pattern: DestinationPattern = e.pattern.parse()?;
                    if seen.insert(pattern.clone(), ()).is_some() {
                        continue;
                    }
                    entries.push(IoTrimEntry {
                        device_id: row.device_id.clone(),
                        pattern,
                        classification: class,
                        party: e.party,
                        functions: vec![if e.additional { "additional" } else { "main" }.to_string()],
                    });
                }
            }
        }
        Ok(IoTrimList::new(entries)?)
    }
}
