// Replay a week of daily use under the IoTrim deny list, with and without
// a misclassified destination.

use std::path::Path;

use iotrim::pipeline::{cmd_effectiveness, cmd_pipeline, inject_fault, RunConfig};

pub fn run() -> anyhow::Result<()> {
    let cfg = RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/run.json"))?;
    let list = cmd_pipeline(&cfg)?.list;
    let clean = cmd_effectiveness(&cfg, &list)?;
    println!("{}/{} invocations succeeded", clean.successes, clean.invocations);
    let broken = inject_fault(&list, &"philips-hub".into(), &"ws.meethue.com".parse()?)?;
    let report = cmd_effectiveness(&cfg, &broken)?;
    println!(
        "with ws.meethue.com blocked: {}/{}, failing {:?}",
        report.successes,
        report.invocations,
        report.failing_devices()
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run()
}
