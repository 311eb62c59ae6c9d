//! Acceptance criteria 1-8. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::convert::Infallible;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::time::{Duration, Instant};

use iotrim::analytics::{
    common_nonrequired, compare_blocklists, device_dependent_destinations, port_protocol_summary, sld_sufficiency,
    traffic_volume_split, BlocklistSnapshot, ReferenceTable,
};
use iotrim::blocker::{compile_rules, serve_dns, should_block, wire, BlockingStrategy, DeviceAssociation, RuleSet, ServerConfig};
use iotrim::classifier::classify_in_order;
use iotrim::consensus::{run_functionality_experiment, wrong_verdict_bound, ConsensusConfig, ReadingFn, Verdict};
use iotrim::grouping::{group_hostnames, group_ips, ObservationMatrix, StaticWhois};
use iotrim::model::{
    read_jsonl, write_jsonl, Classification, DestinationPattern, DeviceId, IoTrimList, Protocol, Target,
};
use iotrim::netsim::{SimConfig, Simulator};
use iotrim::pipeline::{capture_traces, cmd_effectiveness, cmd_pipeline, device_seed, DeviceAudit, PipelineOutcome};
use iotrim::probes::{calibrate_threshold, probe_for, ProfileSet};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tokio::net::UdpSocket;

const SEED: u64 = 1;

type Check = Result<String, String>;

struct Shared {
    outcome: PipelineOutcome,
    elapsed: Duration,
}

fn row_key(class: Classification, pattern: &DestinationPattern, party: impl std::fmt::Debug) -> String {
    format!("{class:?} {pattern} {party:?}")
}

fn criterion_1(s: &Shared) -> Check {
    let list = &s.outcome.list;
    let got = (
        list.len(),
        list.count(Classification::Required),
        list.count(Classification::NonRequired),
    );
    let table = ReferenceTable::load(&common::fixtures().join("reference.json")).map_err(|e| e.to_string())?;
    let mut differing = Vec::new();
    for row in table.rows() {
        let mut want = BTreeSet::new();
        for (class, column) in [
            (Classification::Required, &row.required),
            (Classification::NonRequired, &row.non_required),
        ] {
            for e in column.iter().filter(|e| !e.additional) {
                let p: DestinationPattern = e.pattern.parse().map_err(|e: iotrim::model::ModelError| e.to_string())?;
                want.insert(row_key(class, &p, e.party));
            }
        }
        let have: BTreeSet<String> = list
            .for_device(&row.device_id)
            .map(|e| row_key(e.classification, &e.pattern, e.party))
            .collect();
        if have != want {
            let missing: Vec<&String> = want.difference(&have).collect();
            let extra: Vec<&String> = have.difference(&want).collect();
            differing.push(format!("{} (missing {missing:?}, extra {extra:?})", row.device_id));
        }
    }
    let detail = format!(
        "{}/{}/{} destinations/required/non-required (want 119/57/62); {}/{} device rows match; {:.1}s",
        got.0,
        got.1,
        got.2,
        table.rows().len() - differing.len(),
        table.rows().len(),
        s.elapsed.as_secs_f64()
    );
    if got == (119, 57, 62) && differing.is_empty() && s.elapsed < Duration::from_secs(120) {
        Ok(detail)
    } else {
        Err(format!("{detail}; differing: {}", differing.join("; ")))
    }
}

/// Exact binomial tail P[X >= 8], X ~ Bin(10, 1/5).
fn exact_bound() -> f64 {
    let p = BigRational::new(BigInt::from(1), BigInt::from(5));
    let q = BigRational::new(BigInt::from(4), BigInt::from(5));
    let choose = |n: u32, k: u32| -> BigInt { (0..k).fold(BigInt::from(1), |acc, i| acc * (n - i) / (i + 1)) };
    let pow = |x: &BigRational, e: u32| (0..e).fold(BigRational::from_integer(BigInt::from(1)), |acc, _| acc * x);
    let total = (8..=10u32).fold(BigRational::from_integer(BigInt::from(0)), |acc, k| {
        acc + BigRational::from_integer(choose(10, k)) * pow(&p, k) * pow(&q, 10 - k)
    });
    total.to_f64().expect("finite")
}

fn criterion_2(_: &Shared) -> Check {
    let start = Instant::now();
    let bound = wrong_verdict_bound(10, 0.2, 0.8).map_err(|e| e.to_string())?;
    let oracle = exact_bound();
    let cfg = ConsensusConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2021);
    let runs = 100_000u32;
    let mut wrong = 0u32;
    for _ in 0..runs {
        // the function works; each reading is misread with probability 0.2
        let mut test = ReadingFn(|| -> Result<bool, Infallible> { Ok(!rng.gen_bool(0.2)) });
        let v = run_functionality_experiment(&mut test, &cfg).expect("infallible");
        wrong += u32::from(v.verdict == Verdict::Failure);
    }
    let rate = f64::from(wrong) / f64::from(runs);
    let elapsed = start.elapsed();
    let detail = format!(
        "bound {bound:.4e} (exact {oracle:.4e}); Monte Carlo {wrong}/{runs} = {rate:.2e}; {:.1}s",
        elapsed.as_secs_f64()
    );
    let ok = (bound - 7.79e-5).abs() <= 1e-7
        && (bound - oracle).abs() < 1e-12
        && bound < 0.000078
        && rate <= 1.5e-4
        && elapsed < Duration::from_secs(60);
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_3(_: &Shared) -> Check {
    let reference_x: BTreeMap<&str, f64> = [
        ("allure-speaker", 10.052),
        ("echo-dot", 12.172),
        ("fire-tv", 54.69),
        ("google-home", 46.086),
        ("roku-tv", 70.182),
    ]
    .into_iter()
    .collect();
    let (_, records) = ProfileSet::load(&common::fixtures().join("calibration.json")).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    let mut ok = records.len() == reference_x.len();
    for r in &records {
        let x = calibrate_threshold(&[r.a_min], &[r.b_max]).map_err(|e| e.to_string())?.x;
        let midpoint = (r.a_min + r.b_max) / 2.0;
        let want = reference_x.get(r.device_id.as_str()).copied().unwrap_or(f64::NAN);
        ok &= (x - want).abs() <= 0.001 && (x - midpoint).abs() < 1e-12;
        parts.push(format!("{}={x:.4}", r.device_id));
    }
    let detail = parts.join(" ");
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn matrix(spec: &[(&str, &[usize])]) -> ObservationMatrix {
    let mut m = ObservationMatrix::new(10);
    for (d, its) in spec {
        for &i in its.iter() {
            m.record(i, d.parse().expect("pattern")).expect("in range");
        }
    }
    m
}

fn names(m: &ObservationMatrix) -> Vec<String> {
    m.destinations().map(ToString::to_string).collect()
}

fn criterion_4(s: &Shared) -> Check {
    let evens: &[usize] = &[0, 2, 4, 6, 8];
    let odds: &[usize] = &[1, 3, 5, 7, 9];
    let yy = group_hostnames(&matrix(&[("1.yy.com", evens), ("2.yy.com", odds)]), 0.8);
    let ww = group_hostnames(&matrix(&[("a-b-c.ww.com", evens), ("b-b-c.ww.com", odds)]), 0.8);
    let whois = StaticWhois::from_json_str(r#"{"1.2.3.4":"1.2.0.0/16","1.2.4.5":"1.2.0.0/16"}"#).map_err(|e| e.to_string())?;
    let ips = group_ips(&matrix(&[("1.2.3.4", evens), ("1.2.4.5", odds)]), &whois, 0.8).map_err(|e| e.to_string())?;
    let examples = [
        (names(&yy.matrix), "*.yy.com"),
        (names(&ww.matrix), "*-b-c.ww.com"),
        (names(&ips.matrix), "1.2.0.0/16"),
    ];
    for (got, want) in &examples {
        if got != &[want.to_string()] {
            return Err(format!("example grouped as {got:?}, want [{want}]"));
        }
    }

    let groups: BTreeSet<String> = s
        .outcome
        .audit
        .iter()
        .flat_map(|a| &a.observed)
        .flat_map(|o| &o.groups)
        .map(|g| g.pattern.to_string())
        .collect();
    for want in ["*.backblaze.com", "*.cloudfront.net", "*.googlevideo.com"] {
        if !groups.contains(want) {
            return Err(format!("{want} not among fixture groups {groups:?}"));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..1000 {
        let m = common::random_matrix(&mut rng);
        let out = group_hostnames(&m, 0.8);
        common::check_minimal(&m, &out).map_err(|e| format!("matrix {i}: {e}"))?;
        common::check_idempotent(&out).map_err(|e| format!("matrix {i}: {e}"))?;
    }
    Ok(format!(
        "worked examples exact; fixture groups {groups:?}; 1000 random matrices minimal and idempotent"
    ))
}

fn criterion_5(s: &Shared) -> Check {
    let entries = s.outcome.list.entries();
    let mut problems = Vec::new();
    let dep = device_dependent_destinations(entries);
    let dep_names: Vec<String> = dep.iter().map(|d| d.destination.to_string()).collect();
    if dep_names != ["api.amazon.com", "bob-dispatch-prod-eu.amazon.com"] {
        problems.push(format!("device-dependent {dep_names:?}"));
    }
    let common_rows = common_nonrequired(entries).len();
    if common_rows != 7 {
        problems.push(format!("{common_rows} common rows"));
    }
    let sld = sld_sufficiency(entries);
    let sld_counts = (sld.conflicted_slds.len(), sld.affected_devices.len());
    if sld_counts != (11, 12) {
        problems.push(format!("SLD {sld_counts:?}"));
    }
    let snaps = BlocklistSnapshot::load_dir(&common::fixtures().join("blocklists")).map_err(|e| e.to_string())?;
    let cmp = compare_blocklists(entries, &snaps);
    if cmp.totals != [4, 6, 2, 0] || !cmp.required_hits.is_empty() {
        problems.push(format!("blocklist totals {:?}", cmp.totals));
    }
    let traces = capture_traces(&common::run_config(SEED)).map_err(|e| e.to_string())?;
    let volume = traffic_volume_split(&traces, entries);
    if volume.total.nonessential_bytes != 1931 {
        problems.push(format!("{} non-essential bytes", volume.total.nonessential_bytes));
    }
    let ports = port_protocol_summary(&traces, entries);
    let exceptions: BTreeSet<String> = ports
        .exceptions
        .iter()
        .map(|e| format!("{} {} {:?}/{}", e.device_id, e.target, e.proto, e.port))
        .collect();
    let want: BTreeSet<String> = [
        "echo-dot fireoscaptiveportal.com Tcp/80",
        "philips-hub diagnostics.meethue.com Tcp/80",
        "bosiwo-camera 54.157.82.107 Icmp/0",
        "bosiwo-camera 210.72.145.44 Icmp/0",
    ]
    .into_iter()
    .map(String::from)
    .collect();
    if exceptions != want {
        problems.push(format!("port exceptions {exceptions:?}"));
    }
    let detail = format!(
        "device-dependent rows {}, common non-required rows {common_rows}, SLD {}/{}, blocklists {:?}, non-essential bytes {}, {} port exceptions",
        dep.len(),
        sld_counts.0,
        sld_counts.1,
        cmp.totals,
        volume.total.nonessential_bytes,
        exceptions.len()
    );
    if problems.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; {}", problems.join("; ")))
    }
}

const STUB_ANSWER: Ipv4Addr = Ipv4Addr::new(93, 184, 216, 34);

async fn stub_upstream() -> std::io::Result<SocketAddr> {
    let sock = UdpSocket::bind("127.0.0.1:0").await?;
    let addr = sock.local_addr()?;
    tokio::spawn(async move {
        let mut buf = [0u8; 1500];
        while let Ok((n, peer)) = sock.recv_from(&mut buf).await {
            if let Ok(r) = wire::a_response(&buf[..n], &[STUB_ANSWER], 300) {
                let _ = sock.send_to(&r, peer).await;
            }
        }
    });
    Ok(addr)
}

async fn ask(client: &UdpSocket, server: SocketAddr, id: u16, name: &str) -> Result<Vec<Ipv4Addr>, String> {
    let q = wire::build_query(id, name, wire::TYPE_A).map_err(|e| e.to_string())?;
    client.send_to(&q, server).await.map_err(|e| e.to_string())?;
    let mut buf = [0u8; 1500];
    let n = tokio::time::timeout(Duration::from_secs(5), client.recv(&mut buf))
        .await
        .map_err(|_| format!("no answer for {name}"))?
        .map_err(|e| e.to_string())?;
    let r = wire::parse_response(&buf[..n]).map_err(|e| e.to_string())?;
    Ok(r.a)
}

async fn enforcement(list: &IoTrimList) -> Check {
    let start = Instant::now();
    let devices: Vec<DeviceId> = list.devices();
    let mut assoc = DeviceAssociation::new();
    let mut client_ip = BTreeMap::new();
    for (i, d) in devices.iter().enumerate() {
        let ip = Ipv4Addr::new(127, 0, 0, 10 + i as u8);
        assoc.insert(&ip.to_string(), d.clone()).map_err(|e| e.to_string())?;
        client_ip.insert(d.clone(), ip);
    }
    let rules = compile_rules(list.entries(), &assoc, BlockingStrategy::DenyListing, None, 0);
    let upstream = stub_upstream().await.map_err(|e| e.to_string())?;
    let server = serve_dns(rules.clone(), ServerConfig::new("127.0.0.1:0".parse().expect("addr"), upstream))
        .await
        .map_err(|e| e.to_string())?;
    let addr = server.local_addr();

    let mut sockets = BTreeMap::new();
    for (d, ip) in &client_ip {
        let s = UdpSocket::bind(SocketAddr::new(IpAddr::V4(*ip), 0)).await.map_err(|e| e.to_string())?;
        sockets.insert(d.clone(), s);
    }
    let (mut sinkholed, mut relayed, mut ip_blocked, mut flows) = (0, 0, 0, 0);
    let mut problems = Vec::new();
    for (id, e) in list.entries().iter().enumerate() {
        let client = client_ip[&e.device_id].to_string();
        match common::concrete_name(&e.pattern) {
            Some(name) => {
                let answer = ask(&sockets[&e.device_id], addr, id as u16, &name).await?;
                let want = match e.classification {
                    Classification::NonRequired => Ipv4Addr::LOCALHOST,
                    Classification::Required => STUB_ANSWER,
                };
                if answer == [want] {
                    match e.classification {
                        Classification::NonRequired => sinkholed += 1,
                        Classification::Required => relayed += 1,
                    }
                } else {
                    problems.push(format!("{} {name}: {answer:?}", e.device_id));
                }
            }
            None => {
                let ip = match &e.pattern {
                    DestinationPattern::IpAddress(ip) => *ip,
                    DestinationPattern::CidrBlock(b) => b.network(),
                    _ => unreachable!("host patterns have names"),
                };
                let blocked = should_block(&rules, &client, &Target::Ip(ip), 443, Protocol::Tcp);
                if blocked != (e.classification == Classification::NonRequired) {
                    problems.push(format!("{} {ip}: should_block={blocked}", e.device_id));
                } else if blocked {
                    ip_blocked += 1;
                }
            }
        }
        // DNS and NTP are never blocked, whatever the destination
        let dst = match common::concrete_name(&e.pattern) {
            Some(n) => Target::parse(&n).map_err(|e| e.to_string())?,
            None => Target::parse(e.pattern.to_string().split('/').next().unwrap_or_default())
                .map_err(|e| e.to_string())?,
        };
        for (port, proto) in [(53, Protocol::Udp), (53, Protocol::Tcp), (123, Protocol::Udp)] {
            flows += 1;
            if should_block(&rules, &client, &dst, port, proto) {
                problems.push(format!("{} {dst:?} blocked on {port}", e.device_id));
            }
        }
    }
    server.shutdown().await;
    let elapsed = start.elapsed();
    let nonreq_hosts = list
        .entries()
        .iter()
        .filter(|e| e.classification == Classification::NonRequired && e.pattern.is_host_pattern())
        .count();
    let detail = format!(
        "{sinkholed}/{nonreq_hosts} non-required names sinkholed, {relayed} required names relayed, {ip_blocked} IP patterns dropped, {flows} DNS/NTP flows allowed; {:.1}s",
        elapsed.as_secs_f64()
    );
    if problems.is_empty() && sinkholed == nonreq_hosts && elapsed < Duration::from_secs(30) {
        Ok(detail)
    } else {
        Err(format!("{detail}; {}", problems.join("; ")))
    }
}

fn criterion_6(s: &Shared) -> Check {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| e.to_string())?;
    rt.block_on(enforcement(&s.outcome.list))
}

fn criterion_7(s: &Shared) -> Check {
    let report = cmd_effectiveness(&common::run_config(SEED), &s.outcome.list).map_err(|e| e.to_string())?;
    let detail = format!(
        "{}/{} invocations over {} days and {} devices",
        report.successes, report.invocations, report.days, report.devices
    );
    if report.successes == 217 && report.invocations == 217 {
        Ok(detail)
    } else {
        Err(format!("{detail}; failing {:?}", report.failing_devices()))
    }
}

fn order_invariance(s: &Shared) -> Result<usize, String> {
    let cfg = common::run_config(SEED);
    let fixture = cfg.load_fixture().map_err(|e| e.to_string())?;
    let profiles = cfg.profiles().map_err(|e| e.to_string())?;
    let mut devices = 0;
    for audit in &s.outcome.audit {
        let model = fixture.device(&audit.device_id).map_err(|e| e.to_string())?;
        let f = model.function(&model.primary_function).map_err(|e| e.to_string())?;
        if !f.required_any_of.is_empty() {
            continue;
        }
        let (Some(observed), Some(run)) = (audit.observed.first(), audit.runs.first()) else {
            return Err(format!("{} has no observation", audit.device_id));
        };
        let reference: BTreeMap<&DestinationPattern, Option<Classification>> =
            run.marks.iter().map(|m| (&m.pattern, m.classification)).collect();
        let probe = probe_for(model, &profiles, cfg.manual_probes.contains(&audit.device_id)).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(device_seed(8, &audit.device_id));
        for k in 0..20u64 {
            let mut order = observed.destinations.clone();
            order.shuffle(&mut rng);
            let mut sim = Simulator::new(fixture.clone(), SimConfig::seeded(device_seed(100 + k, &audit.device_id)));
            let permuted = classify_in_order(&mut sim, &probe, observed, &order, &cfg.classifier()).map_err(|e| e.to_string())?;
            let got: BTreeMap<&DestinationPattern, Option<Classification>> =
                permuted.marks.iter().map(|m| (&m.pattern, m.classification)).collect();
            if got != reference {
                return Err(format!("{} differs under order {order:?}", audit.device_id));
            }
        }
        devices += 1;
    }
    Ok(devices)
}

fn duality(s: &Shared) -> Result<usize, String> {
    let entries = s.outcome.list.entries();
    let assoc = DeviceAssociation::new();
    let deny = compile_rules(entries, &assoc, BlockingStrategy::DenyListing, None, 0);
    let allow = compile_rules(entries, &assoc, BlockingStrategy::AllowListing, None, 0);
    let mut checked = 0;
    for audit in &s.outcome.audit {
        for o in &audit.observed {
            let mut concrete: Vec<DestinationPattern> = o.groups.iter().flat_map(|g| g.members.clone()).collect();
            concrete.extend(o.destinations.iter().filter(|d| o.groups.iter().all(|g| &g.pattern != *d)).cloned());
            for p in concrete {
                let target = match &p {
                    DestinationPattern::Hostname(h) => Target::Host(h.clone()),
                    DestinationPattern::IpAddress(ip) => Target::Ip(*ip),
                    other => return Err(format!("unexpected concrete destination {other}")),
                };
                let d = deny.blocks_device(&audit.device_id, &target, 443, Protocol::Tcp);
                let a = allow.blocks_device(&audit.device_id, &target, 443, Protocol::Tcp);
                if d != a {
                    return Err(format!("{} {p}: deny blocks={d}, allow blocks={a}", audit.device_id));
                }
                checked += 1;
            }
        }
    }
    Ok(checked)
}

fn round_trips(s: &Shared) -> Result<(), String> {
    let list = &s.outcome.list;
    let text = list.to_json_string().map_err(|e| e.to_string())?;
    let back = IoTrimList::from_json(text.as_bytes()).map_err(|e| e.to_string())?;
    if &back != list {
        return Err("IoTrim list changed in a JSON round trip".into());
    }
    let rules = compile_rules(
        list.entries(),
        &DeviceAssociation::load(&common::fixtures().join("associations.json")).map_err(|e| e.to_string())?,
        BlockingStrategy::DenyListing,
        None,
        7,
    );
    let doc = rules.to_json_string().map_err(|e| e.to_string())?;
    let again = RuleSet::from_json_str(&doc).and_then(|r| r.to_json_string()).map_err(|e| e.to_string())?;
    if doc != again {
        return Err("rules document changed in a round trip".into());
    }
    let traces = capture_traces(&common::run_config(SEED)).map_err(|e| e.to_string())?;
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &traces).map_err(|e| e.to_string())?;
    if read_jsonl(buf.as_slice()).map_err(|e| e.to_string())? != traces {
        return Err("trace changed in a JSON-lines round trip".into());
    }
    let audit_text = serde_json::to_string(&s.outcome.audit).map_err(|e| e.to_string())?;
    let audit: Vec<DeviceAudit> = serde_json::from_str(&audit_text).map_err(|e| e.to_string())?;
    if audit != s.outcome.audit {
        return Err("audit report changed in a round trip".into());
    }
    Ok(())
}

fn criterion_8(s: &Shared) -> Check {
    let devices = order_invariance(s)?;
    let checked = duality(s)?;
    round_trips(s)?;
    let first = s.outcome.list.to_json_string().map_err(|e| e.to_string())?;
    let rerun = cmd_pipeline(&common::run_config(SEED)).map_err(|e| e.to_string())?;
    let mut parallel_cfg = common::run_config(SEED);
    parallel_cfg.jobs = 4;
    let parallel = cmd_pipeline(&parallel_cfg).map_err(|e| e.to_string())?;
    if rerun.list.to_json_string().map_err(|e| e.to_string())? != first
        || parallel.list.to_json_string().map_err(|e| e.to_string())? != first
    {
        return Err("reruns with the same seed produced different lists".into());
    }
    Ok(format!(
        "order invariance on {devices} devices x 20 permutations; {checked} observed destinations agree under deny and allow; round trips and reruns byte-identical"
    ))
}

fn main() {
    let start = Instant::now();
    let outcome = match cmd_pipeline(&common::run_config(SEED)) {
        Ok(o) => o,
        Err(e) => {
            println!("pipeline failed: {e}");
            std::process::exit(1);
        }
    };
    let shared = Shared {
        outcome,
        elapsed: start.elapsed(),
    };
    let criteria: [(&str, fn(&Shared) -> Check); 8] = [
        ("ground-truth classification", criterion_1),
        ("consensus error bound", criterion_2),
        ("threshold calibration", criterion_3),
        ("grouping", criterion_4),
        ("analyses", criterion_5),
        ("enforcement", criterion_6),
        ("effectiveness replay", criterion_7),
        ("property suites", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check(&shared) {
            Ok(detail) => println!("criterion {} ({name}): PASS: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} ({name}): FAIL: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
