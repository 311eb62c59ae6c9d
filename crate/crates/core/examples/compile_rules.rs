// Turn IoTrim entries into per-device deny and allow rules plus firewall rows.

use iotrim::blocker::{compile_rules, export_firewall_rules, BlockingStrategy, DeviceAssociation, ExportFormat};
use iotrim::model::{Classification, IoTrimEntry, PartyType, Protocol, Target};

fn entry(device: &str, pattern: &str, classification: Classification) -> anyhow::Result<IoTrimEntry> {
    Ok(IoTrimEntry {
        device_id: device.into(),
        pattern: pattern.parse()?,
        classification,
        party: PartyType::Third,
        functions: vec!["main".into()],
    })
}

pub fn run() -> anyhow::Result<()> {
    use Classification::*;
    let entries = vec![
        entry("wansview-camera", "wansview.ajcloud.net", Required)?,
        entry("wansview-camera", "*.backblaze.com", NonRequired)?,
        entry("wansview-camera", "159.65.95.225", NonRequired)?,
    ];
    let mut assoc = DeviceAssociation::new();
    assoc.insert("192.168.1.11", "wansview-camera".into())?;
    for strategy in [BlockingStrategy::DenyListing, BlockingStrategy::AllowListing] {
        let rules = compile_rules(&entries, &assoc, strategy, None, 0);
        let target = Target::parse("f001.backblaze.com")?;
        println!(
            "{strategy}: f001.backblaze.com blocked = {}",
            rules.blocks_device(&"wansview-camera".into(), &target, 443, Protocol::Tcp)
        );
        print!("{}", export_firewall_rules(&rules, ExportFormat::Table)?);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run()
}
