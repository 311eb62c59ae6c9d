//! Helpers shared by the integration tests, including independent oracles.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use iotrim::grouping::{GroupingOutcome, ObservationMatrix};
use iotrim::model::DestinationPattern;
use iotrim::pipeline::RunConfig;
use rand::Rng;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// The shipped run configuration with the given seed.
pub fn run_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::load(&fixtures().join("run.json")).expect("run.json");
    cfg.seed = Some(seed);
    cfg
}

/// A name the pattern matches, for querying the sinkhole.
pub fn concrete_name(p: &DestinationPattern) -> Option<String> {
    match p {
        DestinationPattern::Hostname(h) => Some(h.as_str().to_string()),
        DestinationPattern::Wildcard { suffix } => Some(format!("x{suffix}")),
        _ => None,
    }
}

const TAILS: [&str; 5] = ["-b-c.ww.com", ".yy.com", ".ww.com", ".zz.co.uk", "-x.yy.com"];

/// Ten iterations over a handful of random hostnames under a few domains.
pub fn random_matrix<R: Rng>(rng: &mut R) -> ObservationMatrix {
    let n = 10;
    let mut m = ObservationMatrix::new(n);
    for _ in 0..rng.gen_range(1..9) {
        let len = rng.gen_range(1..4);
        let label: String = (0..len).map(|_| char::from(b'a' + rng.gen_range(0..4u8))).collect();
        let host = format!("{label}{}", TAILS[rng.gen_range(0..TAILS.len())]);
        let dest: DestinationPattern = host.parse().expect("valid host");
        let q = rng.gen_range(1..10) as f64 / 10.0;
        for i in 0..n {
            if rng.gen_bool(q) {
                m.record(i, dest.clone()).expect("in range");
            }
        }
    }
    m
}

fn text(p: &DestinationPattern) -> &str {
    match p {
        DestinationPattern::Hostname(h) => h.as_str(),
        DestinationPattern::Wildcard { suffix } => suffix,
        _ => "",
    }
}

/// At least 80% of `n` iterations, in integers.
fn meets(count: usize, n: usize) -> bool {
    count * 5 >= n * 4
}

fn union(m: &ObservationMatrix, members: &[&DestinationPattern]) -> usize {
    members
        .iter()
        .flat_map(|d| m.appearances(d).into_iter().flatten().copied())
        .collect::<BTreeSet<usize>>()
        .len()
}

/// Replays the grouping decisions and checks each group is the first
/// qualifying widening of its seed, covering exactly the pool names it
/// matches, and that every leftover name really is ungroupable.
pub fn check_minimal(m: &ObservationMatrix, out: &GroupingOutcome) -> Result<(), String> {
    let n = m.iterations();
    let mut pool: Vec<&DestinationPattern> = m
        .destinations()
        .filter(|d| d.is_host_pattern() && !meets(m.appearances(d).map_or(0, |s| s.len()), n))
        .collect();
    pool.sort();
    while let Some(seed) = pool.first().copied() {
        let seed_text = text(seed);
        let group = out.groups.iter().find(|g| g.members.contains(seed));
        let covered = |suffix: &str, pool: &[&DestinationPattern]| -> Vec<DestinationPattern> {
            pool.iter().filter(|d| text(d).ends_with(suffix)).map(|d| (*d).clone()).collect()
        };
        let first_valid_hit = (1..seed_text.len()).find_map(|cut| {
            let suffix = &seed_text[cut..];
            DestinationPattern::wildcard(suffix).ok()?;
            let members = covered(suffix, &pool);
            let refs: Vec<&DestinationPattern> = members.iter().collect();
            meets(union(m, &refs), n).then(|| (suffix.to_string(), members))
        });
        match (group, first_valid_hit) {
            (Some(g), Some((suffix, members))) => {
                let DestinationPattern::Wildcard { suffix: got } = &g.pattern else {
                    return Err(format!("{} is not a wildcard", g.pattern));
                };
                if *got != suffix {
                    return Err(format!("{seed}: grouped as *{got}, first qualifying widening is *{suffix}"));
                }
                let mut want = members.clone();
                want.sort();
                let mut have = g.members.clone();
                have.sort();
                if want != have {
                    return Err(format!("*{got}: members {have:?}, expected {want:?}"));
                }
                pool.retain(|d| !members.contains(d));
            }
            (None, None) => {
                if !out.ungroupable.contains(seed) {
                    return Err(format!("{seed} neither grouped nor reported"));
                }
                pool.remove(0);
            }
            (Some(g), None) => return Err(format!("{seed} grouped into {} but no widening qualifies", g.pattern)),
            (None, Some((s, _))) => return Err(format!("{seed} left alone although *{s} qualifies")),
        }
    }
    Ok(())
}

/// Grouping the grouped matrix again changes nothing.
pub fn check_idempotent(out: &GroupingOutcome) -> Result<(), String> {
    let again = iotrim::grouping::group_hostnames(&out.matrix, 0.8);
    if again.matrix != out.matrix {
        return Err(format!(
            "regrouping changed {:?} into {:?}",
            out.destinations(),
            again.destinations()
        ));
    }
    Ok(())
}
