//! Analyses over the shipped reference table and blocklist snapshots.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use iotrim::analytics::{
    assign_parties, category_summary, common_nonrequired, compare_blocklists, device_dependent_destinations,
    render_report, sld_sufficiency, third_party_violations, BlocklistSnapshot, DeviceInfo, PartyMap, ReferenceTable,
    ReportInput, SnapshotFormat,
};
use iotrim::model::{Classification, DeviceId, IoTrimEntry, PartyType, PatternKind};
use iotrim::netsim::Fixture;
use serde_json::Value;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn table() -> ReferenceTable {
    ReferenceTable::load(&fixtures().join("reference.json")).unwrap()
}

fn main_list() -> Vec<IoTrimEntry> {
    table().iotrim_list(false).unwrap().into_entries()
}

/// Counts straight from the raw JSON, without going through the library.
fn raw_counts(include_additional: bool) -> (usize, usize) {
    let raw: Value = serde_json::from_str(&std::fs::read_to_string(fixtures().join("reference.json")).unwrap()).unwrap();
    let count = |key: &str| {
        raw.as_array()
            .unwrap()
            .iter()
            .flat_map(|r| r[key].as_array().unwrap())
            .filter(|e| include_additional || !e["additional"].as_bool().unwrap_or(false))
            .count()
    };
    (count("required"), count("non_required"))
}

#[test]
fn listed_counts_match_raw_table() {
    let c = table().listed_counts(false);
    assert_eq!((c.required, c.non_required), raw_counts(false));
    assert_eq!((c.destinations, c.required, c.non_required), (119, 57, 62));
    let ext = table().listed_counts(true);
    assert_eq!((ext.required, ext.non_required), raw_counts(true));
    assert_eq!((ext.required - c.required, ext.non_required - c.non_required), (7, 6));
}

#[test]
fn fire_tv_duplicate_is_reconciled_as_required() {
    let t = table();
    let clashes = t.contradictions();
    assert_eq!(clashes.len(), 1);
    assert_eq!(clashes[0].0.as_str(), "fire-tv");
    assert_eq!(clashes[0].1.to_string(), "api.amazon.com");
    let list = t.iotrim_list(false).unwrap();
    assert_eq!(list.count(Classification::Required), 57);
    assert_eq!(list.count(Classification::NonRequired), 61);
}

#[test]
fn device_dependent_destinations_match() {
    let dep = device_dependent_destinations(&main_list());
    let got: Vec<(String, Vec<String>, Vec<String>)> = dep
        .iter()
        .map(|d| {
            (
                d.destination.to_string(),
                d.non_required_for.iter().map(ToString::to_string).collect(),
                d.required_for.iter().map(ToString::to_string).collect(),
            )
        })
        .collect();
    assert_eq!(
        got,
        vec![
            ("api.amazon.com".into(), vec!["allure-speaker".into()], vec!["echo-dot".into(), "fire-tv".into()]),
            (
                "bob-dispatch-prod-eu.amazon.com".into(),
                vec!["fire-tv".into()],
                vec!["allure-speaker".into(), "echo-dot".into()]
            ),
        ]
    );
}

#[test]
fn common_nonrequired_has_seven_rows() {
    let common = common_nonrequired(&main_list());
    assert_eq!(common.len(), 7);
    let netflix = common
        .iter()
        .find(|c| c.destination.to_string() == "api-global.eu-west-1.prodaa.netflix.com")
        .unwrap();
    assert_eq!(netflix.devices, vec![DeviceId::from("fire-tv"), DeviceId::from("roku-tv")]);
}

#[test]
fn sld_conflicts() {
    let report = sld_sufficiency(&main_list());
    assert_eq!(report.conflicted_slds.len(), 11);
    assert_eq!(report.affected_devices.len(), 12);
    assert!(report.conflicted_slds.contains_key("tplinkcloud.com"));
}

#[test]
fn category_fraction() {
    let s = category_summary(&main_list(), &table().categories());
    assert_eq!((s.with_non_required, s.devices), (16, 31));
}

#[test]
fn party_map_reproduces_listed_parties() {
    let fixture = Fixture::load(&fixtures().join("devices.json")).unwrap();
    let manufacturers: BTreeMap<DeviceId, String> =
        fixture.devices.iter().map(|d| (d.device_id.clone(), d.manufacturer.clone())).collect();
    let map = PartyMap::load(&fixtures().join("party_map.json")).unwrap();
    let listed = table().iotrim_list(true).unwrap().into_entries();
    let mut assigned = listed.clone();
    assign_parties(&mut assigned, &manufacturers, &map);
    let diffs: Vec<String> = listed
        .iter()
        .zip(&assigned)
        .filter(|(a, b)| a.party != b.party)
        .map(|(a, b)| format!("{} {} {:?}->{:?}", a.device_id, a.pattern, a.party, b.party))
        .collect();
    assert!(diffs.is_empty(), "{diffs:#?}");
    assert!(assigned.iter().all(|e| e.party != PartyType::Unknown));
    assert!(third_party_violations(&assigned).is_empty());
    let roku_ad = assigned
        .iter()
        .find(|e| e.pattern.to_string() == "partnerad.l.doubleclick.net")
        .unwrap();
    assert_eq!(roku_ad.party, PartyType::Third);
}

#[test]
fn blocklist_totals() {
    let snaps = BlocklistSnapshot::load_dir(&fixtures().join("blocklists")).unwrap();
    let names: Vec<&str> = snaps.iter().map(|s| s.name.as_str()).collect();
    let cmp = compare_blocklists(&main_list(), &snaps);
    let totals: BTreeMap<&str, usize> = names.iter().copied().zip(cmp.totals.iter().copied()).collect();
    assert_eq!(totals["Pi-hole"], 4);
    assert_eq!(totals["Firebog"], 6);
    assert_eq!(totals["MoaAB"], 2);
    assert_eq!(totals["StopAd"], 0);
    assert!(cmp.required_hits.is_empty());
    assert_eq!(cmp.rows.len(), 16);
}

#[test]
fn full_snapshot_matches_nonrequired_column() {
    let entries = main_list();
    let is_host = |e: &&IoTrimEntry| e.pattern.kind() == PatternKind::Hostname;
    let hosts: Vec<String> = entries
        .iter()
        .filter(|e| e.classification == Classification::NonRequired)
        .filter(is_host)
        .map(|e| e.pattern.to_string())
        .collect();
    let snap = BlocklistSnapshot::parse("all", SnapshotFormat::Domains, &hosts.join("\n")).unwrap();
    let cmp = compare_blocklists(&entries, &[snap]);
    // only exact hostnames can appear in a domain list
    let mut others: BTreeMap<&DeviceId, usize> = BTreeMap::new();
    for e in entries.iter().filter(|e| e.classification == Classification::NonRequired && !is_host(e)) {
        *others.entry(&e.device_id).or_default() += 1;
    }
    for r in &cmp.rows {
        assert_eq!(r.counts[0] + others.get(&r.device_id).copied().unwrap_or(0), r.non_required);
    }
}

#[test]
fn report_row_sets() {
    let dir = tempfile::tempdir().unwrap();
    let t = table();
    let devices: BTreeMap<DeviceId, DeviceInfo> = t
        .rows()
        .iter()
        .map(|r| (r.device_id.clone(), DeviceInfo { name: r.name.clone(), category: r.category.clone() }))
        .collect();
    let entries = main_list();
    let snaps = BlocklistSnapshot::load_dir(&fixtures().join("blocklists")).unwrap();
    let cmp = compare_blocklists(&entries, &snaps);
    let input = ReportInput { entries: &entries, devices: &devices, blocklists: Some(&cmp) };
    render_report(dir.path(), &input).unwrap();
    let rows = |f: &str| std::fs::read_to_string(dir.path().join(f)).unwrap().lines().count() - 1;
    assert_eq!(rows("devices.csv"), 16);
    assert_eq!(rows("device_dependent.csv"), 2);
    assert_eq!(rows("common_nonrequired.csv"), 7);
    assert_eq!(rows("blocklists.csv"), 17);
    let first = std::fs::read(dir.path().join("devices.csv")).unwrap();
    render_report(dir.path(), &input).unwrap();
    assert_eq!(first, std::fs::read(dir.path().join("devices.csv")).unwrap());
    let cats: BTreeSet<String> = t.categories().into_values().collect();
    assert_eq!(rows("categories.csv"), cats.len());
}
