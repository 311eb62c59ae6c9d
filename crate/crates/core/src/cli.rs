//! Command-line front end. The `iotrim` binary is a thin wrapper over
//! [`main_from_args`].

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime};

use anyhow::{bail, Context as _};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::analytics::{
    category_summary, common_nonrequired, compare_blocklists, device_dependent_destinations, port_protocol_summary,
    render_report, sld_sufficiency, third_party_violations, traffic_volume_split, BlocklistSnapshot, DeviceInfo,
    ReportInput,
};
use crate::blocker::{
    compile_rules, export_firewall_rules, serve_dns, BlockingStrategy, DefaultPolicy, ExportFormat, RuleSet,
    ServerConfig,
};
use crate::classifier::ObservedDestinationSet;
use crate::model::{read_jsonl, write_jsonl, Classification, DeviceId, IoTrimList};
use crate::pipeline::{
    capture_traces, cmd_classify, cmd_effectiveness, cmd_evaluate_probes, cmd_observe, cmd_pipeline, inject_fault,
    measure_calibration, ExitStatus, RunConfig,
};
use crate::probes::{calibrate_threshold, CalibrationRecord};

#[derive(Debug, Parser)]
#[command(name = "iotrim", version, about = "Find and block non-essential IoT destinations")]
pub struct Cli {
    /// More log output on stderr (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct RunArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for all outputs of this run.
    #[arg(long, env = "IOTRIM_RUN_DIR", default_value = "iotrim-run")]
    pub run_dir: PathBuf,
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    #[arg(long)]
    pub whois: Option<PathBuf>,
    #[arg(long)]
    pub party_map: Option<PathBuf>,
    #[arg(long)]
    pub associations: Option<PathBuf>,
    /// Restrict to these devices (repeatable).
    #[arg(long = "device")]
    pub devices: Vec<DeviceId>,
    /// Read these devices by hand instead of through their probe (repeatable).
    #[arg(long = "manual")]
    pub manual: Vec<DeviceId>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub all_functions: bool,
    #[arg(long)]
    pub min_iterations: Option<u32>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<u32>,
    #[arg(long)]
    pub jobs: Option<usize>,
}

impl RunArgs {
    pub fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => RunConfig::default(),
        };
        let set = |dst: &mut Option<PathBuf>, src: &Option<PathBuf>| {
            if src.is_some() {
                dst.clone_from(src);
            }
        };
        if let Some(f) = &self.fixture {
            cfg.fixture.clone_from(f);
        }
        set(&mut cfg.calibration, &self.calibration);
        set(&mut cfg.whois, &self.whois);
        set(&mut cfg.party_map, &self.party_map);
        set(&mut cfg.associations, &self.associations);
        if !self.devices.is_empty() {
            cfg.devices = Some(self.devices.clone());
        }
        if !self.manual.is_empty() {
            cfg.manual_probes.clone_from(&self.manual);
        }
        cfg.seed = self.seed.or(cfg.seed);
        cfg.all_functions |= self.all_functions;
        if let Some(v) = self.min_iterations {
            cfg.consensus.min_iterations = v;
        }
        if let Some(v) = self.threshold {
            cfg.consensus.threshold = v;
        }
        if let Some(v) = self.max_iterations {
            cfg.consensus.max_iterations = v;
        }
        if let Some(v) = self.jobs {
            cfg.jobs = v;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Probe gate, observation, classification and joint check for every
    /// selected device; writes the IoTrim list.
    Pipeline {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Record what one function contacts with nothing blocked.
    Observe {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        function: Option<String>,
    },
    /// Block-and-test the destinations of a saved observation.
    Classify {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        observed: PathBuf,
    },
    /// Measure probe accuracy against the eligibility gate.
    EvaluateProbes {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Compute traffic-probe thresholds from peak records, or measure them.
    Calibrate {
        #[command(flatten)]
        run: RunArgs,
        /// Calibration records with `b_max` and `a_min`.
        #[arg(long)]
        records: Option<PathBuf>,
        /// Measure peaks from this many simulated runs per device instead.
        #[arg(long)]
        measure: Option<u32>,
    },
    /// Turn an IoTrim list and device associations into per-device rules.
    CompileRules {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        list: PathBuf,
        #[arg(long, default_value = "deny")]
        strategy: BlockingStrategy,
        #[arg(long)]
        default_policy: Option<DefaultPolicy>,
        /// Also print IP/CIDR firewall rules: `json` or `table`.
        #[arg(long)]
        firewall: Option<String>,
    },
    /// Run the DNS sinkhole. Reloads the rules file on SIGHUP or when it
    /// changes on disk.
    ServeDns {
        #[arg(long)]
        rules: PathBuf,
        #[arg(long, default_value = "0.0.0.0:53")]
        bind: SocketAddr,
        #[arg(long, default_value = "1.1.1.1:53")]
        upstream: SocketAddr,
        /// Stop after this many seconds.
        #[arg(long)]
        duration: Option<u64>,
    },
    /// Replay daily invocations under deny-list rules.
    Effectiveness {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        list: PathBuf,
        #[arg(long)]
        days: Option<u32>,
        /// Move one required pattern to the block list: `device=pattern`.
        #[arg(long)]
        fault: Option<String>,
    },
    /// List-level and traffic-level analyses.
    Analyze {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        list: PathBuf,
        /// Captured trace (JSON lines); simulated when absent.
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Overlap of non-required destinations with public blocklists.
    CompareBlocklists {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        list: PathBuf,
        /// Directory holding `index.json` and the snapshot files.
        #[arg(long)]
        snapshots: PathBuf,
    },
    /// Write the CSV tables.
    Report {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        list: PathBuf,
        #[arg(long)]
        snapshots: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct ManifestEntry<'a> {
    config: &'a RunConfig,
    seed: Option<u64>,
    version: &'static str,
    outputs: Vec<String>,
}

struct RunDir {
    dir: PathBuf,
    outputs: Vec<String>,
}

impl RunDir {
    fn new(dir: &Path) -> anyhow::Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(RunDir {
            dir: dir.to_path_buf(),
            outputs: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, text: &str) -> anyhow::Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(name.to_string());
        Ok(path)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, &text)
    }

    /// Records this command in `manifest.json`, keeping other commands' entries.
    fn finish(self, command: &str, config: &RunConfig) -> anyhow::Result<()> {
        let path = self.dir.join("manifest.json");
        let mut manifest: BTreeMap<String, serde_json::Value> = match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).unwrap_or_default(),
            Err(_) => BTreeMap::new(),
        };
        let entry = ManifestEntry {
            config,
            seed: config.seed,
            version: env!("CARGO_PKG_VERSION"),
            outputs: self.outputs,
        };
        manifest.insert(command.to_string(), serde_json::to_value(entry)?);
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }
}

fn load_list(path: &Path) -> anyhow::Result<IoTrimList> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(IoTrimList::from_json(std::io::BufReader::new(file))?)
}

fn device_infos(config: &RunConfig) -> anyhow::Result<BTreeMap<DeviceId, DeviceInfo>> {
    let fixture = config.load_fixture()?;
    Ok(fixture
        .devices
        .iter()
        .map(|d| {
            (
                d.device_id.clone(),
                DeviceInfo {
                    name: d.name.clone(),
                    category: d.category.clone(),
                },
            )
        })
        .collect())
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitStatus::Usage.code() } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        2 => tracing::Level::DEBUG,
        _ => tracing::Level::TRACE,
    };
    let _ = tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .try_init();
    let service = matches!(cli.command, Command::ServeDns { .. });
    match run(cli.command) {
        Ok(status) => status.code(),
        Err(e) => {
            eprintln!("error: {e:#}");
            if service {
                ExitStatus::ServiceError.code()
            } else {
                ExitStatus::Usage.code()
            }
        }
    }
}

pub fn run(command: Command) -> anyhow::Result<ExitStatus> {
    match command {
        Command::Pipeline { run } => pipeline(&run),
        Command::Observe { run, function } => {
            let cfg = run.resolve()?;
            let observed = cmd_observe(&cfg, function.as_deref())?;
            let mut out = RunDir::new(&run.run_dir)?;
            let path = out.write_json(
                &format!("observed-{}-{}.json", observed.device_id, observed.function_name),
                &observed,
            )?;
            println!(
                "{} destinations observed for {}/{} -> {}",
                observed.destinations.len(),
                observed.device_id,
                observed.function_name,
                path.display()
            );
            out.finish("observe", &cfg)?;
            Ok(ExitStatus::Ok)
        }
        Command::Classify { run, observed } => {
            let cfg = run.resolve()?;
            let text = std::fs::read_to_string(&observed).with_context(|| format!("reading {}", observed.display()))?;
            let observed: ObservedDestinationSet = serde_json::from_str(&text)?;
            let result = cmd_classify(&cfg, &observed)?;
            let mut out = RunDir::new(&run.run_dir)?;
            out.write_json(
                &format!("classification-{}-{}.json", result.device_id, result.function_name),
                &result,
            )?;
            for m in &result.marks {
                let mark = match m.classification {
                    Some(Classification::Required) => "required",
                    Some(Classification::NonRequired) => "non-required",
                    None => "INCONCLUSIVE",
                };
                println!("{:<50} {mark}", m.pattern.to_string());
            }
            out.finish("classify", &cfg)?;
            Ok(if result.is_complete() {
                ExitStatus::Ok
            } else {
                ExitStatus::Inconclusive
            })
        }
        Command::EvaluateProbes { run } => {
            let cfg = run.resolve()?;
            let reports = cmd_evaluate_probes(&cfg)?;
            let mut out = RunDir::new(&run.run_dir)?;
            out.write_json("probe-evaluation.json", &reports)?;
            println!("{:<22} {:<8} {:>8} {:>8} {:>8}", "DEVICE", "PROBE", "SUCCESS", "FAILURE", "ELIGIBLE");
            for r in &reports {
                println!(
                    "{:<22} {:<8} {:>8.3} {:>8.3} {:>8}",
                    r.device_id.to_string(),
                    r.probe,
                    r.success_rate,
                    r.failure_rate,
                    if r.eligible { "yes" } else { "no" }
                );
            }
            out.finish("evaluate-probes", &cfg)?;
            Ok(if reports.iter().all(|r| r.eligible) {
                ExitStatus::Ok
            } else {
                ExitStatus::GateFailure
            })
        }
        Command::Calibrate { run, records, measure } => {
            let cfg = run.resolve()?;
            let computed: Vec<CalibrationRecord> = match (measure, records.or_else(|| cfg.calibration.clone())) {
                (Some(n), _) => measure_calibration(&cfg, n)?,
                (None, Some(path)) => {
                    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    let records: Vec<CalibrationRecord> = serde_json::from_str(&text)?;
                    records
                        .into_iter()
                        .map(|r| {
                            let cal = calibrate_threshold(&[r.a_min], &[r.b_max])?;
                            Ok(CalibrationRecord { x: cal.x, ..r })
                        })
                        .collect::<anyhow::Result<_>>()?
                }
                (None, None) => bail!("give --records, --measure, or a calibration file in the config"),
            };
            let mut out = RunDir::new(&run.run_dir)?;
            out.write_json("calibration.json", &computed)?;
            for r in &computed {
                println!("{:<22} B_max={:.3} A_min={:.3} X={:.3}", r.device_id.to_string(), r.b_max, r.a_min, r.x);
            }
            out.finish("calibrate", &cfg)?;
            Ok(ExitStatus::Ok)
        }
        Command::CompileRules {
            run,
            list,
            strategy,
            default_policy,
            firewall,
        } => {
            let cfg = run.resolve()?;
            let list = load_list(&list)?;
            let generated_at = SystemTime::now()
                .duration_since(SystemTime::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs());
            let rules = compile_rules(list.entries(), &cfg.association_map()?, strategy, default_policy, generated_at);
            for w in &rules.warnings {
                eprintln!("warning: {w}");
            }
            let mut out = RunDir::new(&run.run_dir)?;
            let path = out.write("rules.json", &rules.to_json_string()?)?;
            println!(
                "{} patterns for {} devices ({}) -> {}",
                rules.pattern_count(),
                rules.devices.len(),
                rules.strategy,
                path.display()
            );
            if let Some(fmt) = firewall {
                let fmt: ExportFormat = fmt.parse()?;
                print!("{}", export_firewall_rules(&rules, fmt)?);
            }
            out.finish("compile-rules", &cfg)?;
            Ok(ExitStatus::Ok)
        }
        Command::ServeDns {
            rules,
            bind,
            upstream,
            duration,
        } => {
            let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            runtime.block_on(serve(rules, bind, upstream, duration.map(Duration::from_secs)))?;
            Ok(ExitStatus::Ok)
        }
        Command::Effectiveness { run, list, days, fault } => {
            let mut cfg = run.resolve()?;
            if let Some(d) = days {
                cfg.days = d;
            }
            let mut list = load_list(&list)?;
            if let Some(spec) = fault {
                let (device, pattern) = spec
                    .split_once('=')
                    .context("--fault expects device=pattern")?;
                list = inject_fault(&list, &device.into(), &pattern.parse()?)?;
            }
            let report = cmd_effectiveness(&cfg, &list)?;
            let mut out = RunDir::new(&run.run_dir)?;
            out.write_json("effectiveness.json", &report)?;
            if let Some(n) = &report.notice {
                println!("{n}");
            }
            println!("{}/{} invocations succeeded", report.successes, report.invocations);
            for d in report.failing_devices() {
                println!("failing: {d}");
            }
            out.finish("effectiveness", &cfg)?;
            Ok(ExitStatus::Ok)
        }
        Command::Analyze { run, list, traces } => {
            let cfg = run.resolve()?;
            let list = load_list(&list)?;
            let events = match &traces {
                Some(p) => {
                    let file = std::fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
                    read_jsonl(std::io::BufReader::new(file))?
                }
                None => capture_traces(&cfg)?,
            };
            let entries = list.entries();
            let categories = device_infos(&cfg)?
                .into_iter()
                .map(|(d, i)| (d, i.category))
                .collect();
            let volume = traffic_volume_split(&events, entries);
            let sld = sld_sufficiency(entries);
            let analysis = serde_json::json!({
                "device_dependent": device_dependent_destinations(entries),
                "common_non_required": common_nonrequired(entries),
                "sld_sufficiency": sld,
                "third_party_violations": third_party_violations(entries),
                "categories": category_summary(entries, &categories),
                "ports": port_protocol_summary(&events, entries),
                "volume": volume,
            });
            let mut out = RunDir::new(&run.run_dir)?;
            out.write_json("analysis.json", &analysis)?;
            if traces.is_none() {
                let mut buf = Vec::new();
                write_jsonl(&mut buf, &events)?;
                out.write("traces.jsonl", &String::from_utf8(buf)?)?;
            }
            println!(
                "{} conflicted SLDs over {} devices; {} non-essential bytes of {}",
                sld.conflicted_slds.len(),
                sld.affected_devices.len(),
                volume.total.nonessential_bytes,
                volume.total.essential_bytes + volume.total.nonessential_bytes + volume.total.unclassified_bytes,
            );
            out.finish("analyze", &cfg)?;
            Ok(ExitStatus::Ok)
        }
        Command::CompareBlocklists { run, list, snapshots } => {
            let cfg = run.resolve()?;
            let list = load_list(&list)?;
            let snaps = BlocklistSnapshot::load_dir(&snapshots)?;
            let cmp = compare_blocklists(list.entries(), &snaps);
            let mut out = RunDir::new(&run.run_dir)?;
            out.write_json("blocklists.json", &cmp)?;
            print!("{:<22} {:>5}", "DEVICE", "NONREQ");
            for l in &cmp.lists {
                print!(" {l:>8}");
            }
            println!();
            for r in &cmp.rows {
                print!("{:<22} {:>5}", r.device_id.to_string(), r.non_required);
                for c in &r.counts {
                    print!(" {c:>8}");
                }
                println!();
            }
            print!("{:<22} {:>5}", "total", cmp.total_non_required);
            for t in &cmp.totals {
                print!(" {t:>8}");
            }
            println!();
            for h in &cmp.required_hits {
                println!("warning: required {} of {} is on {}", h.destination, h.device_id, h.list);
            }
            out.finish("compare-blocklists", &cfg)?;
            Ok(ExitStatus::Ok)
        }
        Command::Report { run, list, snapshots } => {
            let cfg = run.resolve()?;
            let list = load_list(&list)?;
            let devices = device_infos(&cfg)?;
            let cmp = match &snapshots {
                Some(dir) => Some(compare_blocklists(list.entries(), &BlocklistSnapshot::load_dir(dir)?)),
                None => None,
            };
            let input = ReportInput {
                entries: list.entries(),
                devices: &devices,
                blocklists: cmp.as_ref(),
            };
            let mut out = RunDir::new(&run.run_dir)?;
            let files = render_report(&run.run_dir.join("report"), &input)?;
            for f in &files {
                println!("{}", f.display());
                if let Ok(rel) = f.strip_prefix(&run.run_dir) {
                    out.outputs.push(rel.display().to_string());
                }
            }
            out.finish("report", &cfg)?;
            Ok(ExitStatus::Ok)
        }
    }
}

fn pipeline(run: &RunArgs) -> anyhow::Result<ExitStatus> {
    let cfg = run.resolve()?;
    let outcome = cmd_pipeline(&cfg)?;
    let mut out = RunDir::new(&run.run_dir)?;
    let path = out.write("iotrim.json", &outcome.list.to_json_string()?)?;
    out.write_json("audit.json", &outcome.audit)?;
    out.write_json(
        "skipped.json",
        &serde_json::json!({ "gate": outcome.skipped, "inconclusive": outcome.inconclusive }),
    )?;
    println!(
        "{} destinations: {} required, {} non-required -> {}",
        outcome.list.len(),
        outcome.list.count(Classification::Required),
        outcome.list.count(Classification::NonRequired),
        path.display()
    );
    for d in &outcome.skipped {
        println!("skipped (probe gate): {d}");
    }
    for d in &outcome.inconclusive {
        println!("inconclusive: {d}");
    }
    out.finish("pipeline", &cfg)?;
    Ok(outcome.status)
}

fn modified(path: &Path) -> Option<SystemTime> {
    std::fs::metadata(path).and_then(|m| m.modified()).ok()
}

async fn serve(rules_path: PathBuf, bind: SocketAddr, upstream: SocketAddr, duration: Option<Duration>) -> anyhow::Result<()> {
    let rules = RuleSet::load(&rules_path).with_context(|| format!("loading {}", rules_path.display()))?;
    let server = serve_dns(rules, ServerConfig::new(bind, upstream))
        .await
        .with_context(|| format!("binding {bind}"))?;
    println!("serving on {}", server.local_addr());

    #[cfg(unix)]
    let mut hup = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::hangup())?;
    let mut stamp = modified(&rules_path);
    let mut tick = tokio::time::interval(Duration::from_secs(1));
    let deadline = async {
        match duration {
            Some(d) => tokio::time::sleep(d).await,
            None => std::future::pending().await,
        }
    };
    tokio::pin!(deadline);

    loop {
        #[cfg(unix)]
        let hangup = hup.recv();
        #[cfg(not(unix))]
        let hangup = std::future::pending::<Option<()>>();
        let reload = tokio::select! {
            _ = tokio::signal::ctrl_c() => break,
            _ = &mut deadline => break,
            _ = hangup => true,
            _ = tick.tick() => {
                let now = modified(&rules_path);
                let changed = now != stamp;
                stamp = now;
                changed
            }
        };
        if reload {
            // a bad file keeps the old rules in place
            match RuleSet::load(&rules_path) {
                Ok(r) => {
                    server.reload(r);
                    tracing::info!("rules reloaded");
                }
                Err(e) => tracing::error!("reload failed, keeping previous rules: {e}"),
            }
        }
    }
    server.shutdown().await;
    Ok(())
}
