// Drive one simulated device and look at the traffic it produces.

use std::path::Path;

use iotrim::model::TraceEvent;
use iotrim::netsim::{Fixture, SimConfig, Simulator};
use std::sync::Arc;

pub fn run() -> anyhow::Result<()> {
    let fixture = Fixture::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/devices.json"))?;
    let mut sim = Simulator::new(Arc::new(fixture), SimConfig::seeded(3));
    let device = "philips-hub".into();
    sim.power_cycle(&device)?;
    let outcome = sim.invoke_trigger(&device, "main")?;
    println!("function worked: {}", outcome.succeeded);
    for e in &outcome.segment {
        if let TraceEvent::Dns(d) = e {
            println!("{:>8.2}s {} -> {:?}", d.timestamp, d.query_name, d.answer_ips);
        }
    }
    println!("{} events in the segment", outcome.segment.len());
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run()
}
