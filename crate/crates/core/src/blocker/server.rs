//! The DNS sinkhole proxy.

use std::net::{IpAddr, SocketAddr};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use arc_swap::ArcSwap;
use serde::Serialize;
use tokio::net::UdpSocket;
use tokio::sync::watch;
use tokio::task::JoinHandle;

use super::rules::{blocks_hostname, RuleSet};
use super::wire::{self, TYPE_A, TYPE_AAAA};
use super::BlockerError;
use crate::model::{DeviceId, DnsObservation, Hostname};

/// TTL on sinkholed answers, in seconds.
pub const SINKHOLE_TTL: u32 = 10;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub bind: SocketAddr,
    pub upstream: SocketAddr,
    pub upstream_timeout: Duration,
}

impl ServerConfig {
    pub fn new(bind: SocketAddr, upstream: SocketAddr) -> Self {
        ServerConfig {
            bind,
            upstream,
            upstream_timeout: Duration::from_secs(2),
        }
    }
}

/// One handled query.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryLog {
    /// Seconds since the server started.
    pub timestamp: f64,
    pub client: IpAddr,
    pub device_id: Option<DeviceId>,
    pub name: String,
    pub qtype: u16,
    pub blocked: bool,
    pub rcode: u8,
    pub answer_ips: Vec<std::net::Ipv4Addr>,
}

impl QueryLog {
    /// The DNS observation for associated clients with an A answer.
    pub fn observation(&self) -> Option<DnsObservation> {
        let device_id = self.device_id.clone()?;
        if self.answer_ips.is_empty() {
            return None;
        }
        Some(DnsObservation {
            timestamp: self.timestamp,
            device_id,
            query_name: Hostname::new(&self.name).ok()?,
            answer_ips: self.answer_ips.clone(),
        })
    }
}

struct Shared {
    rules: ArcSwap<RuleSet>,
    log: Mutex<Vec<QueryLog>>,
    config: ServerConfig,
    started: Instant,
}

pub struct ServerHandle {
    local_addr: SocketAddr,
    shared: Arc<Shared>,
    stop: watch::Sender<bool>,
    task: JoinHandle<()>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Swaps in a new rule set; in-flight queries finish on the old one.
    pub fn reload(&self, rules: RuleSet) {
        self.shared.rules.store(Arc::new(rules));
    }

    pub fn rules(&self) -> Arc<RuleSet> {
        self.shared.rules.load_full()
    }

    pub fn query_log(&self) -> Vec<QueryLog> {
        self.shared.log.lock().expect("log poisoned").clone()
    }

    pub fn observations(&self) -> Vec<DnsObservation> {
        self.query_log().iter().filter_map(QueryLog::observation).collect()
    }

    pub async fn shutdown(self) {
        let _ = self.stop.send(true);
        let _ = self.task.await;
    }
}

/// Binds the UDP socket and starts answering queries.
pub async fn serve_dns(rules: RuleSet, config: ServerConfig) -> Result<ServerHandle, BlockerError> {
    let socket = Arc::new(UdpSocket::bind(config.bind).await?);
    let local_addr = socket.local_addr()?;
    let shared = Arc::new(Shared {
        rules: ArcSwap::from_pointee(rules),
        log: Mutex::new(Vec::new()),
        config,
        started: Instant::now(),
    });
    let (stop, mut stopped) = watch::channel(false);
    let task = {
        let shared = shared.clone();
        tokio::spawn(async move {
            let mut buf = vec![0u8; 4096];
            loop {
                tokio::select! {
                    _ = stopped.changed() => break,
                    recv = socket.recv_from(&mut buf) => {
                        let (n, peer) = match recv {
                            Ok(r) => r,
                            Err(e) => {
                                tracing::warn!("recv failed: {e}");
                                continue;
                            }
                        };
                        let packet = buf[..n].to_vec();
                        let (socket, shared) = (socket.clone(), shared.clone());
                        tokio::spawn(async move {
                            let reply = handle_query(&shared, &packet, peer).await;
                            if let Err(e) = socket.send_to(&reply, peer).await {
                                tracing::warn!("send to {peer} failed: {e}");
                            }
                        });
                    }
                }
            }
        })
    };
    tracing::info!(%local_addr, "dns sinkhole listening");
    Ok(ServerHandle {
        local_addr,
        shared,
        stop,
        task,
    })
}

async fn handle_query(shared: &Shared, packet: &[u8], peer: SocketAddr) -> Vec<u8> {
    let q = match wire::parse_query(packet) {
        Ok(q) => q,
        Err(e) => {
            tracing::debug!("malformed query from {peer}: {e}");
            return wire::error_response(packet, wire::RCODE_FORMERR);
        }
    };
    // one snapshot for the whole decision
    let rules = shared.rules.load();
    let client = peer.ip().to_string();
    let device_id = rules.device_for(&client).cloned();
    let name = Hostname::new(&q.name).ok();
    let blocked = matches!(q.qtype, TYPE_A | TYPE_AAAA)
        && name.as_ref().is_some_and(|h| blocks_hostname(&rules, &client, h));
    drop(rules);

    let reply = if blocked {
        wire::sinkhole_response(packet, &q, SINKHOLE_TTL)
    } else {
        match forward(&shared.config, packet, q.id).await {
            Ok(r) => r,
            Err(e) => {
                tracing::warn!(name = %q.name, "upstream failed: {e}");
                wire::error_response(packet, wire::RCODE_SERVFAIL)
            }
        }
    };
    let parsed = wire::parse_response(&reply).ok();
    let entry = QueryLog {
        timestamp: shared.started.elapsed().as_secs_f64(),
        client: peer.ip(),
        device_id,
        name: q.name.clone(),
        qtype: q.qtype,
        blocked,
        rcode: parsed.as_ref().map_or(wire::RCODE_SERVFAIL, |r| r.rcode),
        answer_ips: parsed.map(|r| r.a).unwrap_or_default(),
    };
    tracing::debug!(?entry, "query");
    shared.log.lock().expect("log poisoned").push(entry);
    reply
}

/// Relays the query verbatim and returns the upstream reply unmodified.
async fn forward(config: &ServerConfig, packet: &[u8], id: u16) -> Result<Vec<u8>, BlockerError> {
    let local: SocketAddr = if config.upstream.is_ipv4() {
        ([0, 0, 0, 0], 0).into()
    } else {
        ([0u16; 8], 0).into()
    };
    let sock = UdpSocket::bind(local).await?;
    sock.connect(config.upstream).await?;
    sock.send(packet).await?;
    let mut buf = vec![0u8; 4096];
    let deadline = tokio::time::Instant::now() + config.upstream_timeout;
    loop {
        let n = tokio::time::timeout_at(deadline, sock.recv(&mut buf))
            .await
            .map_err(|_| BlockerError::Io(std::io::ErrorKind::TimedOut.into()))??;
        // ignore stray datagrams with a different id
        if n >= 2 && u16::from_be_bytes([buf[0], buf[1]]) == id {
            buf.truncate(n);
            return Ok(buf);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocker::{compile_rules, BlockingStrategy, DeviceAssociation};
    use crate::model::{Classification, IoTrimEntry, PartyType};
    use std::net::Ipv4Addr;

    /// Answers every A query with 93.184.216.34 except names starting with
    /// `slow`, which it ignores.
    async fn stub_upstream() -> SocketAddr {
        let sock = UdpSocket::bind("127.0.0.1:0").await.unwrap();
        let addr = sock.local_addr().unwrap();
        tokio::spawn(async move {
            let mut buf = [0u8; 512];
            while let Ok((n, peer)) = sock.recv_from(&mut buf).await {
                let q = wire::parse_query(&buf[..n]).unwrap();
                if q.name.starts_with("slow") {
                    continue;
                }
                let r = wire::a_response(&buf[..n], &[Ipv4Addr::new(93, 184, 216, 34)], 300).unwrap();
                sock.send_to(&r, peer).await.unwrap();
            }
        });
        addr
    }

    async fn ask(server: SocketAddr, name: &str, qtype: u16) -> wire::Response {
        let sock = UdpSocket::bind("127.0.0.1:0").await.unwrap();
        let q = wire::build_query(42, name, qtype).unwrap();
        sock.send_to(&q, server).await.unwrap();
        let mut buf = [0u8; 512];
        let n = tokio::time::timeout(Duration::from_secs(5), sock.recv(&mut buf))
            .await
            .unwrap()
            .unwrap();
        wire::parse_response(&buf[..n]).unwrap()
    }

    fn rules(block: &str) -> RuleSet {
        let mut assoc = DeviceAssociation::new();
        assoc.insert("127.0.0.1", "echo-dot".into()).unwrap();
        let entries = vec![IoTrimEntry {
            device_id: "echo-dot".into(),
            pattern: block.parse().unwrap(),
            classification: Classification::NonRequired,
            party: PartyType::First,
            functions: vec!["main".into()],
        }];
        compile_rules(&entries, &assoc, BlockingStrategy::DenyListing, None, 0)
    }

    #[tokio::test]
    async fn sinkholes_forwards_and_reloads() {
        let upstream = stub_upstream().await;
        let mut cfg = ServerConfig::new("127.0.0.1:0".parse().unwrap(), upstream);
        cfg.upstream_timeout = Duration::from_millis(300);
        let server = serve_dns(rules("*.cloudfront.net"), cfg).await.unwrap();
        let addr = server.local_addr();

        let r = ask(addr, "d3p8zr0ffa9t17.cloudfront.net", TYPE_A).await;
        assert_eq!(r.a, vec![Ipv4Addr::LOCALHOST]);
        assert_eq!(r.ttls, vec![SINKHOLE_TTL]);
        let r = ask(addr, "api.amazon.com", TYPE_A).await;
        assert_eq!(r.a, vec![Ipv4Addr::new(93, 184, 216, 34)]);
        let r = ask(addr, "slow.example.com", TYPE_A).await;
        assert_eq!(r.rcode, wire::RCODE_SERVFAIL);

        server.reload(rules("api.amazon.com"));
        let r = ask(addr, "api.amazon.com", TYPE_A).await;
        assert_eq!(r.a, vec![Ipv4Addr::LOCALHOST]);
        let r = ask(addr, "d3p8zr0ffa9t17.cloudfront.net", TYPE_A).await;
        assert_eq!(r.a, vec![Ipv4Addr::new(93, 184, 216, 34)]);

        let log = server.query_log();
        assert_eq!(log.len(), 5);
        assert_eq!(log.iter().filter(|l| l.blocked).count(), 2);
        assert_eq!(server.observations().len(), 4);
        server.shutdown().await;
    }

    #[tokio::test]
    async fn malformed_query_gets_formerr() {
        let upstream = stub_upstream().await;
        let server = serve_dns(rules("api.amazon.com"), ServerConfig::new("127.0.0.1:0".parse().unwrap(), upstream))
            .await
            .unwrap();
        let sock = UdpSocket::bind("127.0.0.1:0").await.unwrap();
        sock.send_to(&[0x12, 0x34, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 9, b'x'], server.local_addr())
            .await
            .unwrap();
        let mut buf = [0u8; 512];
        let n = tokio::time::timeout(Duration::from_secs(5), sock.recv(&mut buf))
            .await
            .unwrap()
            .unwrap();
        let r = wire::parse_response(&buf[..n]).unwrap();
        assert_eq!((r.id, r.rcode), (0x1234, wire::RCODE_FORMERR));
        server.shutdown().await;
    }
}
