// Observe one device's main function, then block-and-test each destination.

use std::path::Path;

use iotrim::pipeline::{cmd_classify, cmd_observe, RunConfig};

pub fn run() -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/run.json"))?;
    cfg.devices = Some(vec!["wansview-camera".into()]);
    let observed = cmd_observe(&cfg, None)?;
    println!("observed {} destinations", observed.destinations.len());
    let result = cmd_classify(&cfg, &observed)?;
    for m in &result.marks {
        println!("{:<32} {:?}", m.pattern.to_string(), m.classification);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run()
}
