// Run the DNS sinkhole on loopback in front of a toy upstream resolver.

use std::net::Ipv4Addr;
use std::time::Duration;

use iotrim::blocker::{compile_rules, serve_dns, wire, BlockingStrategy, DeviceAssociation, ServerConfig};
use iotrim::model::{Classification, IoTrimEntry, PartyType};
use tokio::net::UdpSocket;

async fn lookup(server: std::net::SocketAddr, name: &str) -> anyhow::Result<Vec<Ipv4Addr>> {
    let sock = UdpSocket::bind("127.0.0.1:0").await?;
    sock.send_to(&wire::build_query(1, name, wire::TYPE_A)?, server).await?;
    let mut buf = [0u8; 512];
    let n = tokio::time::timeout(Duration::from_secs(5), sock.recv(&mut buf)).await??;
    Ok(wire::parse_response(&buf[..n])?.a)
}

async fn demo() -> anyhow::Result<()> {
    let upstream = UdpSocket::bind("127.0.0.1:0").await?;
    let upstream_addr = upstream.local_addr()?;
    tokio::spawn(async move {
        let mut buf = [0u8; 512];
        while let Ok((n, peer)) = upstream.recv_from(&mut buf).await {
            if let Ok(r) = wire::a_response(&buf[..n], &[Ipv4Addr::new(203, 0, 113, 5)], 60) {
                let _ = upstream.send_to(&r, peer).await;
            }
        }
    });

    let mut assoc = DeviceAssociation::new();
    assoc.insert("127.0.0.1", "echo-dot".into())?;
    let entries = [IoTrimEntry {
        device_id: "echo-dot".into(),
        pattern: "*.cloudfront.net".parse()?,
        classification: Classification::NonRequired,
        party: PartyType::Third,
        functions: vec!["main".into()],
    }];
    let rules = compile_rules(&entries, &assoc, BlockingStrategy::DenyListing, None, 0);
    let server = serve_dns(rules, ServerConfig::new("127.0.0.1:0".parse()?, upstream_addr)).await?;
    for name in ["d3p8zr0ffa9t17.cloudfront.net", "api.amazon.com"] {
        println!("{name} -> {:?}", lookup(server.local_addr(), name).await?);
    }
    server.shutdown().await;
    Ok(())
}

pub fn run() -> anyhow::Result<()> {
    tokio::runtime::Builder::new_current_thread().enable_all().build()?.block_on(demo())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run()
}
