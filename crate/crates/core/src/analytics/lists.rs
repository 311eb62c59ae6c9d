//! Analyses over IoTrim entries alone.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::model::{Classification, DestinationPattern, DeviceId, IoTrimEntry, PartyType};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DeviceDependent {
    pub destination: DestinationPattern,
    pub non_required_for: Vec<DeviceId>,
    pub required_for: Vec<DeviceId>,
}

fn by_pattern(entries: &[IoTrimEntry]) -> BTreeMap<&DestinationPattern, (Vec<DeviceId>, Vec<DeviceId>)> {
    let mut map: BTreeMap<&DestinationPattern, (Vec<DeviceId>, Vec<DeviceId>)> = BTreeMap::new();
    for e in entries {
        let (req, non) = map.entry(&e.pattern).or_default();
        let side = match e.classification {
            Classification::Required => req,
            Classification::NonRequired => non,
        };
        if !side.contains(&e.device_id) {
            side.push(e.device_id.clone());
        }
    }
    for (req, non) in map.values_mut() {
        req.sort();
        non.sort();
    }
    map
}

/// Destinations required by some device and non-required by another.
pub fn device_dependent_destinations(entries: &[IoTrimEntry]) -> Vec<DeviceDependent> {
    by_pattern(entries)
        .into_iter()
        .filter(|(_, (req, non))| !req.is_empty() && !non.is_empty())
        .map(|(p, (req, non))| DeviceDependent {
            destination: p.clone(),
            non_required_for: non,
            required_for: req,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CommonDestination {
    pub destination: DestinationPattern,
    pub devices: Vec<DeviceId>,
}

/// Non-required destinations shared by two or more devices.
pub fn common_nonrequired(entries: &[IoTrimEntry]) -> Vec<CommonDestination> {
    by_pattern(entries)
        .into_iter()
        .filter(|(_, (_, non))| non.len() >= 2)
        .map(|(p, (_, non))| CommonDestination {
            destination: p.clone(),
            devices: non,
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SldConflict {
    pub devices: Vec<DeviceId>,
    pub required: Vec<DestinationPattern>,
    pub non_required: Vec<DestinationPattern>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SldReport {
    pub conflicted_slds: BTreeMap<String, SldConflict>,
    pub affected_devices: BTreeSet<DeviceId>,
}

/// SLDs under which one device has both required and non-required
/// destinations; blocking by SLD would mislabel traffic for those devices.
pub fn sld_sufficiency(entries: &[IoTrimEntry]) -> SldReport {
    let mut per_device: BTreeMap<(&DeviceId, String), (Vec<&DestinationPattern>, Vec<&DestinationPattern>)> =
        BTreeMap::new();
    for e in entries {
        let Some(sld) = e.pattern.sld() else { continue };
        let (req, non) = per_device.entry((&e.device_id, sld)).or_default();
        match e.classification {
            Classification::Required => req.push(&e.pattern),
            Classification::NonRequired => non.push(&e.pattern),
        }
    }
    let mut report = SldReport::default();
    for ((device, sld), (req, non)) in per_device {
        if req.is_empty() || non.is_empty() {
            continue;
        }
        let c = report.conflicted_slds.entry(sld).or_default();
        c.devices.push(device.clone());
        c.required.extend(req.into_iter().cloned());
        c.non_required.extend(non.into_iter().cloned());
        report.affected_devices.insert(device.clone());
    }
    for c in report.conflicted_slds.values_mut() {
        c.required.sort();
        c.required.dedup();
        c.non_required.sort();
        c.non_required.dedup();
    }
    report
}

/// Third-party entries marked required. Expected to be empty.
pub fn third_party_violations(entries: &[IoTrimEntry]) -> Vec<&IoTrimEntry> {
    entries
        .iter()
        .filter(|e| e.party == PartyType::Third && e.classification == Classification::Required)
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CategoryRow {
    pub category: String,
    pub devices: usize,
    pub with_non_required: usize,
    pub with_at_least_2: usize,
    pub with_at_least_5: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CategorySummary {
    pub rows: Vec<CategoryRow>,
    pub devices: usize,
    pub with_non_required: usize,
}

impl CategorySummary {
    pub fn fraction_with_non_required(&self) -> f64 {
        if self.devices == 0 {
            0.0
        } else {
            self.with_non_required as f64 / self.devices as f64
        }
    }
}

/// Devices with non-required destinations, per category. `categories`
/// names every device in scope, including those without entries.
pub fn category_summary(entries: &[IoTrimEntry], categories: &BTreeMap<DeviceId, String>) -> CategorySummary {
    let mut counts: BTreeMap<&DeviceId, usize> = BTreeMap::new();
    for e in entries.iter().filter(|e| e.classification == Classification::NonRequired) {
        *counts.entry(&e.device_id).or_default() += 1;
    }
    let mut rows: BTreeMap<&str, CategoryRow> = BTreeMap::new();
    for (device, category) in categories {
        let row = rows.entry(category).or_insert_with(|| CategoryRow {
            category: category.clone(),
            ..Default::default()
        });
        let n = counts.get(device).copied().unwrap_or(0);
        row.devices += 1;
        row.with_non_required += usize::from(n >= 1);
        row.with_at_least_2 += usize::from(n >= 2);
        row.with_at_least_5 += usize::from(n >= 5);
    }
    let rows: Vec<CategoryRow> = rows.into_values().collect();
    CategorySummary {
        devices: rows.iter().map(|r| r.devices).sum(),
        with_non_required: rows.iter().map(|r| r.with_non_required).sum(),
        rows,
    }
}
