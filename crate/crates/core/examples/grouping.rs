// Wildcard and CIDR grouping of destinations that rotate between iterations.

use iotrim::grouping::{group_hostnames, group_ips, ObservationMatrix, StaticWhois};

fn alternating(a: &str, b: &str) -> anyhow::Result<ObservationMatrix> {
    let mut m = ObservationMatrix::new(10);
    for i in 0..10 {
        m.record(i, if i % 2 == 0 { a } else { b }.parse()?)?;
    }
    Ok(m)
}

pub fn run() -> anyhow::Result<()> {
    for (a, b) in [("1.yy.com", "2.yy.com"), ("a-b-c.ww.com", "b-b-c.ww.com")] {
        let out = group_hostnames(&alternating(a, b)?, 0.8);
        for g in &out.groups {
            println!("{a} + {b} -> {}", g.pattern);
        }
    }
    let whois = StaticWhois::from_json_str(r#"{"1.2.3.4":"1.2.0.0/16","1.2.4.5":"1.2.0.0/16"}"#)?;
    let out = group_ips(&alternating("1.2.3.4", "1.2.4.5")?, &whois, 0.8)?;
    for g in &out.groups {
        println!("1.2.3.4 + 1.2.4.5 -> {}", g.pattern);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run()
}
