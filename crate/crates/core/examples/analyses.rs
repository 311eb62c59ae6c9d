// List-level analyses and blocklist overlap on the reference table.

use std::path::Path;

use iotrim::analytics::{
    common_nonrequired, compare_blocklists, device_dependent_destinations, sld_sufficiency, BlocklistSnapshot,
    ReferenceTable,
};

pub fn run() -> anyhow::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let list = ReferenceTable::load(&dir.join("reference.json"))?.iotrim_list(false)?;
    let entries = list.entries();
    for d in device_dependent_destinations(entries) {
        println!("device-dependent: {}", d.destination);
    }
    println!("{} destinations non-required on several devices", common_nonrequired(entries).len());
    let sld = sld_sufficiency(entries);
    println!(
        "{} SLDs mix required and non-required names over {} devices",
        sld.conflicted_slds.len(),
        sld.affected_devices.len()
    );
    let cmp = compare_blocklists(entries, &BlocklistSnapshot::load_dir(&dir.join("blocklists"))?);
    for (name, total) in cmp.lists.iter().zip(&cmp.totals) {
        println!("{name}: {total} of {} non-required destinations", cmp.total_non_required);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run()
}
