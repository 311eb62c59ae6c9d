// Destination patterns: parsing, matching and second-level domains.

use iotrim::model::{effective_sld, DestinationPattern, Target};

pub fn run() -> anyhow::Result<()> {
    for raw in ["api.amazon.com", "*.cloudfront.net", "*-b-c.ww.com", "1.2.0.0/16", "210.72.145.44"] {
        let p: DestinationPattern = raw.parse()?;
        println!("{:<20} kind={:?} sld={:?}", p.to_string(), p.kind(), p.sld());
    }
    let wildcard: DestinationPattern = "*.cloudfront.net".parse()?;
    for t in ["d3p8zr0ffa9t17.cloudfront.net", "cloudfront.net", "example.com"] {
        println!("*.cloudfront.net matches {t}: {}", wildcard.matches(&Target::parse(t)?));
    }
    let block: DestinationPattern = "1.2.0.0/16".parse()?;
    println!("1.2.0.0/16 matches 1.2.4.5: {}", block.matches(&Target::parse("1.2.4.5")?));
    println!("sld of a.b.example.co.uk: {}", effective_sld("a.b.example.co.uk")?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run()
}
