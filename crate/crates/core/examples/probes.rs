// Functionality probes: image diff, traffic-peak calibration and the
// accuracy gate for one device.

use std::path::Path;

use iotrim::pipeline::RunConfig;
use iotrim::probes::{calibrate_threshold, image_diff_probe, ImageDiffConfig, Raster};

pub fn run() -> anyhow::Result<()> {
    let reference = Raster::filled(32, 32, [20, 120, 220]);
    let mut shot = reference.clone();
    shot.set(0, 0, [255, 0, 0]);
    let cfg = ImageDiffConfig::default();
    println!("near-identical screenshot matches: {}", image_diff_probe(&shot, &reference, &cfg)?);
    println!("inverted screenshot matches: {}", image_diff_probe(&reference.inverted(), &reference, &cfg)?);

    let cal = calibrate_threshold(&[12.448, 13.1], &[9.1, 11.896])?;
    println!("echo-style threshold X = {:.3}", cal.x);

    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let mut run = RunConfig::load(&dir.join("run.json"))?;
    run.devices = Some(vec!["echo-dot".into(), "xiaomi-ricecooker".into()]);
    run.manual_probes.clear();
    for r in iotrim::pipeline::cmd_evaluate_probes(&run)? {
        println!("{} {} accuracy {:.2} eligible={}", r.device_id, r.probe, r.accuracy, r.eligible);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run()
}
