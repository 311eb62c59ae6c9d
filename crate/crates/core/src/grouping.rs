//! Collapsing ephemeral destinations (seen in fewer than 80% of observation
//! iterations) into prefix-wildcard hostname groups and WHOIS CIDR blocks.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::net::Ipv4Addr;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{effective_sld, CidrBlock, DestinationPattern, ModelError};

pub const DEFAULT_EPHEMERAL_THRESHOLD: f64 = 0.8;

#[derive(Debug, Error)]
pub enum GroupingError {
    #[error("iteration index {index} out of range for {iterations} iterations")]
    IterationOutOfRange { index: usize, iterations: usize },
    #[error("WHOIS oracle has no block for ephemeral IPs: {0:?}")]
    UnresolvedIps(Vec<Ipv4Addr>),
    #[error("WHOIS block {block} does not contain {ip}")]
    BadWhoisBlock { ip: Ipv4Addr, block: CidrBlock },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Which observation iterations each destination appeared in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationMatrix {
    iterations: usize,
    appearances: BTreeMap<DestinationPattern, BTreeSet<usize>>,
}

impl ObservationMatrix {
    pub fn new(iterations: usize) -> Self {
        ObservationMatrix {
            iterations,
            appearances: BTreeMap::new(),
        }
    }

    /// Builds a matrix from per-iteration destination sets.
    pub fn from_iterations<I, J>(iterations: I) -> Self
    where
        I: IntoIterator<Item = J>,
        J: IntoIterator<Item = DestinationPattern>,
    {
        let mut appearances: BTreeMap<DestinationPattern, BTreeSet<usize>> = BTreeMap::new();
        let mut count = 0;
        for (idx, dests) in iterations.into_iter().enumerate() {
            for d in dests {
                appearances.entry(d).or_default().insert(idx);
            }
            count = idx + 1;
        }
        ObservationMatrix {
            iterations: count,
            appearances,
        }
    }

    pub fn record(&mut self, index: usize, dest: DestinationPattern) -> Result<(), GroupingError> {
        if index >= self.iterations {
            return Err(GroupingError::IterationOutOfRange {
                index,
                iterations: self.iterations,
            });
        }
        self.appearances.entry(dest).or_default().insert(index);
        Ok(())
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn destinations(&self) -> impl Iterator<Item = &DestinationPattern> {
        self.appearances.keys()
    }

    pub fn appearances(&self, dest: &DestinationPattern) -> Option<&BTreeSet<usize>> {
        self.appearances.get(dest)
    }

    pub fn frequency(&self, dest: &DestinationPattern) -> f64 {
        if self.iterations == 0 {
            return 0.0;
        }
        self.appearances.get(dest).map_or(0, BTreeSet::len) as f64 / self.iterations as f64
    }

    fn meets(&self, count: usize, threshold: f64) -> bool {
        self.iterations > 0 && count as f64 >= threshold * self.iterations as f64 - 1e-9
    }

    fn is_stable(&self, dest: &DestinationPattern, threshold: f64) -> bool {
        self.meets(self.appearances.get(dest).map_or(0, BTreeSet::len), threshold)
    }
}

/// One emitted group and the destinations it replaced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub pattern: DestinationPattern,
    pub members: Vec<DestinationPattern>,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingOutcome {
    /// Matrix over the grouped destinations; groups carry the union of their
    /// members' iterations.
    pub matrix: ObservationMatrix,
    pub groups: Vec<Group>,
    /// Ephemeral destinations no admissible group could cover.
    pub ungroupable: Vec<DestinationPattern>,
}

impl GroupingOutcome {
    pub fn destinations(&self) -> Vec<DestinationPattern> {
        self.matrix.destinations().cloned().collect()
    }
}

/// Literal text a hostname-kind pattern covers: the name itself, or the
/// suffix of a wildcard.
fn host_text(p: &DestinationPattern) -> Option<&str> {
    match p {
        DestinationPattern::Hostname(h) => Some(h.as_str()),
        DestinationPattern::Wildcard { suffix } => Some(suffix),
        _ => None,
    }
}

fn covered_by_suffix(member: &DestinationPattern, suffix: &str) -> bool {
    host_text(member).is_some_and(|t| t.ends_with(suffix))
}

/// Groups ephemeral hostnames. Starting from the lexicographically first
/// ephemeral name, leading characters are replaced by `*` one at a time until
/// the candidate covers ephemeral names present in at least `threshold` of
/// the iterations, stopping at `*.<registrable domain>`. Covered names leave
/// the pool; names no candidate can cover stay as they are and are reported.
pub fn group_hostnames(matrix: &ObservationMatrix, threshold: f64) -> GroupingOutcome {
    let mut pool: Vec<DestinationPattern> = matrix
        .destinations()
        .filter(|d| d.is_host_pattern() && !matrix.is_stable(d, threshold))
        .cloned()
        .collect();
    pool.sort();

    let mut out = ObservationMatrix::new(matrix.iterations);
    for (dest, seen) in &matrix.appearances {
        if !pool.contains(dest) {
            out.appearances.insert(dest.clone(), seen.clone());
        }
    }

    let mut groups = Vec::new();
    let mut ungroupable = Vec::new();
    while !pool.is_empty() {
        let seed = pool[0].clone();
        let found = host_text(&seed)
            .and_then(|text| widen(matrix, &pool, text, threshold));
        match found {
            Some((pattern, members, union)) => {
                pool.retain(|d| !members.contains(d));
                let frequency = union.len() as f64 / matrix.iterations as f64;
                out.appearances.insert(pattern.clone(), union);
                groups.push(Group {
                    pattern,
                    members,
                    frequency,
                });
            }
            None => {
                pool.remove(0);
                out.appearances
                    .insert(seed.clone(), matrix.appearances[&seed].clone());
                ungroupable.push(seed);
            }
        }
    }

    GroupingOutcome {
        matrix: out,
        groups,
        ungroupable,
    }
}

type Widened = (DestinationPattern, Vec<DestinationPattern>, BTreeSet<usize>);

fn widen(
    matrix: &ObservationMatrix,
    pool: &[DestinationPattern],
    text: &str,
    threshold: f64,
) -> Option<Widened> {
    let sld = effective_sld(text.trim_start_matches(['.', '-', '_'])).ok()?;
    let floor = sld.len() + 1;
    for cut in 1..text.len() {
        let suffix = &text[cut..];
        if suffix.len() < floor {
            break;
        }
        let Ok(candidate) = DestinationPattern::wildcard(suffix) else {
            continue;
        };
        let members: Vec<DestinationPattern> = pool
            .iter()
            .filter(|m| covered_by_suffix(m, suffix))
            .cloned()
            .collect();
        let union: BTreeSet<usize> = members
            .iter()
            .flat_map(|m| matrix.appearances[m].iter().copied())
            .collect();
        if matrix.meets(union.len(), threshold) {
            return Some((candidate, members, union));
        }
    }
    None
}

/// Source of the registered network block containing an IP.
pub trait WhoisOracle {
    fn lookup(&self, ip: Ipv4Addr) -> Option<CidrBlock>;
}

/// WHOIS answers frozen in a fixture: JSON map from IP to CIDR string.
#[derive(Debug, Clone, Default)]
pub struct StaticWhois {
    blocks: HashMap<Ipv4Addr, CidrBlock>,
}

impl StaticWhois {
    pub fn new(blocks: HashMap<Ipv4Addr, CidrBlock>) -> Self {
        StaticWhois { blocks }
    }

    pub fn from_json_str(text: &str) -> Result<Self, GroupingError> {
        let raw: BTreeMap<Ipv4Addr, String> = serde_json::from_str(text)?;
        let mut blocks = HashMap::new();
        for (ip, cidr) in raw {
            blocks.insert(ip, cidr.parse::<CidrBlock>()?);
        }
        Ok(StaticWhois { blocks })
    }

    pub fn load(path: &Path) -> Result<Self, GroupingError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

impl WhoisOracle for StaticWhois {
    fn lookup(&self, ip: Ipv4Addr) -> Option<CidrBlock> {
        self.blocks.get(&ip).copied()
    }
}

/// Groups ephemeral IPs into the WHOIS block containing them when that
/// block covers ephemeral IPs in at least `threshold` of the iterations.
pub fn group_ips<W: WhoisOracle + ?Sized>(
    matrix: &ObservationMatrix,
    whois: &W,
    threshold: f64,
) -> Result<GroupingOutcome, GroupingError> {
    let mut pool: Vec<Ipv4Addr> = matrix
        .destinations()
        .filter(|d| !matrix.is_stable(d, threshold))
        .filter_map(|d| match d {
            DestinationPattern::IpAddress(ip) => Some(*ip),
            _ => None,
        })
        .collect();
    pool.sort_by_key(|ip| ip.to_string());

    let missing: Vec<Ipv4Addr> = pool
        .iter()
        .copied()
        .filter(|ip| whois.lookup(*ip).is_none())
        .collect();
    if !missing.is_empty() {
        return Err(GroupingError::UnresolvedIps(missing));
    }

    let mut out = ObservationMatrix::new(matrix.iterations);
    for (dest, seen) in &matrix.appearances {
        let pooled = matches!(dest, DestinationPattern::IpAddress(ip) if pool.contains(ip));
        if !pooled {
            out.appearances.insert(dest.clone(), seen.clone());
        }
    }

    let mut groups = Vec::new();
    let mut ungroupable = Vec::new();
    while let Some(&seed) = pool.first() {
        let block = whois.lookup(seed).expect("checked above");
        if !block.contains(seed) {
            return Err(GroupingError::BadWhoisBlock { ip: seed, block });
        }
        let members: Vec<Ipv4Addr> = pool.iter().copied().filter(|ip| block.contains(*ip)).collect();
        let union: BTreeSet<usize> = members
            .iter()
            .flat_map(|ip| matrix.appearances[&DestinationPattern::IpAddress(*ip)].iter().copied())
            .collect();
        if matrix.meets(union.len(), threshold) {
            pool.retain(|ip| !members.contains(ip));
            let pattern = DestinationPattern::CidrBlock(block);
            let frequency = union.len() as f64 / matrix.iterations as f64;
            out.appearances.insert(pattern.clone(), union);
            groups.push(Group {
                pattern,
                members: members.into_iter().map(DestinationPattern::IpAddress).collect(),
                frequency,
            });
        } else {
            pool.remove(0);
            let dest = DestinationPattern::IpAddress(seed);
            out.appearances.insert(dest.clone(), matrix.appearances[&dest].clone());
            ungroupable.push(dest);
        }
    }

    Ok(GroupingOutcome {
        matrix: out,
        groups,
        ungroupable,
    })
}

/// Hostname grouping followed by IP grouping.
pub fn group_destinations<W: WhoisOracle + ?Sized>(
    matrix: &ObservationMatrix,
    whois: &W,
    threshold: f64,
) -> Result<GroupingOutcome, GroupingError> {
    let hosts = group_hostnames(matrix, threshold);
    let ips = group_ips(&hosts.matrix, whois, threshold)?;
    let mut groups = hosts.groups;
    groups.extend(ips.groups);
    let mut ungroupable = hosts.ungroupable;
    ungroupable.extend(ips.ungroupable);
    Ok(GroupingOutcome {
        matrix: ips.matrix,
        groups,
        ungroupable,
    })
}
