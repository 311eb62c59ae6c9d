// Classify every fixture device and print the resulting IoTrim list sizes.

use std::path::Path;

use iotrim::model::Classification;
use iotrim::pipeline::{cmd_pipeline, RunConfig};

pub fn run() -> anyhow::Result<()> {
    let cfg = RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/run.json"))?;
    let out = cmd_pipeline(&cfg)?;
    println!(
        "{} destinations: {} required, {} non-required ({:?})",
        out.list.len(),
        out.list.count(Classification::Required),
        out.list.count(Classification::NonRequired),
        out.status
    );
    for a in out.audit.iter().take(5) {
        println!("{} via {} probe: {:?}", a.device_id, a.probe, a.status);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run()
}
