//! CSV rendering of the analyses.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::blocklists::BlocklistComparison;
use super::lists::{category_summary, common_nonrequired, device_dependent_destinations};
use super::AnalyticsError;
use crate::model::{Classification, DeviceId, IoTrimEntry, PartyType};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceInfo {
    pub name: String,
    pub category: String,
}

pub struct ReportInput<'a> {
    pub entries: &'a [IoTrimEntry],
    /// Every device in scope, including ones without entries.
    pub devices: &'a BTreeMap<DeviceId, DeviceInfo>,
    pub blocklists: Option<&'a BlocklistComparison>,
}

fn party_tag(p: PartyType) -> &'static str {
    match p {
        PartyType::First => "first",
        PartyType::Support => "support",
        PartyType::Third => "third",
        PartyType::Unknown => "unknown",
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(";")
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), AnalyticsError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// Writes `devices.csv`, `device_dependent.csv`, `common_nonrequired.csv`, `blocklists.csv` and
/// `categories.csv` into `dir` and returns their paths.
pub fn render_report(dir: &Path, input: &ReportInput<'_>) -> Result<Vec<PathBuf>, AnalyticsError> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut emit = |name: &str, header: Vec<String>, rows: Vec<Vec<String>>| -> Result<(), AnalyticsError> {
        let path = dir.join(name);
        write_csv(&path, &header, &rows)?;
        written.push(path);
        Ok(())
    };

    let mut per_device: BTreeMap<&DeviceId, Vec<&IoTrimEntry>> = BTreeMap::new();
    for e in input.entries {
        per_device.entry(&e.device_id).or_default().push(e);
    }
    let mut device_rows = Vec::new();
    for (device, list) in &per_device {
        let non: Vec<&&IoTrimEntry> =
            list.iter().filter(|e| e.classification == Classification::NonRequired).collect();
        if non.is_empty() {
            continue;
        }
        let info = input.devices.get(*device);
        device_rows.push(vec![
            device.to_string(),
            info.map_or_else(String::new, |i| i.name.clone()),
            info.map_or_else(String::new, |i| i.category.clone()),
            list.len().to_string(),
            (list.len() - non.len()).to_string(),
            non.len().to_string(),
            non.iter()
                .map(|e| format!("{} ({})", e.pattern, party_tag(e.party)))
                .collect::<Vec<_>>()
                .join(";"),
        ]);
    }
    emit(
        "devices.csv",
        strings(&["device_id", "name", "category", "destinations", "required", "non_required", "non_required_destinations"]),
        device_rows,
    )?;

    let dependent_rows = device_dependent_destinations(input.entries)
        .into_iter()
        .map(|d| vec![d.destination.to_string(), join(&d.non_required_for), join(&d.required_for)])
        .collect();
    emit("device_dependent.csv", strings(&["destination", "non_required_for", "required_for"]), dependent_rows)?;

    let common_rows = common_nonrequired(input.entries)
        .into_iter()
        .map(|c| vec![c.destination.to_string(), join(&c.devices)])
        .collect();
    emit("common_nonrequired.csv", strings(&["destination", "devices"]), common_rows)?;

    let mut header = strings(&["device_id", "non_required"]);
    let mut blocklist_rows = Vec::new();
    if let Some(cmp) = input.blocklists {
        header.extend(cmp.lists.iter().cloned());
        for r in &cmp.rows {
            let mut row = vec![r.device_id.to_string(), r.non_required.to_string()];
            row.extend(r.counts.iter().map(ToString::to_string));
            blocklist_rows.push(row);
        }
        if !cmp.rows.is_empty() {
            let mut total = vec!["total".to_string(), cmp.total_non_required.to_string()];
            total.extend(cmp.totals.iter().map(ToString::to_string));
            blocklist_rows.push(total);
        }
    }
    emit("blocklists.csv", header, blocklist_rows)?;

    let categories: BTreeMap<DeviceId, String> =
        input.devices.iter().map(|(d, i)| (d.clone(), i.category.clone())).collect();
    let summary = category_summary(input.entries, &categories);
    let cats = summary
        .rows
        .iter()
        .map(|r| {
            vec![
                r.category.clone(),
                r.devices.to_string(),
                r.with_non_required.to_string(),
                r.with_at_least_2.to_string(),
                r.with_at_least_5.to_string(),
            ]
        })
        .collect();
    emit(
        "categories.csv",
        strings(&["category", "devices", "with_non_required", "with_at_least_2", "with_at_least_5"]),
        cats,
    )?;
    Ok(written)
}
