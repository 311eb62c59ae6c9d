//! Firewall rule listings for IP and CIDR patterns. Hostnames are enforced
//! by the DNS sinkhole and never appear here.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;

use super::rules::{BlockingStrategy, RuleSet};
use super::BlockerError;
use crate::model::{DestinationPattern, DeviceId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Json,
    Table,
}

impl FromStr for ExportFormat {
    type Err = BlockerError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ExportFormat::Json),
            "table" => Ok(ExportFormat::Table),
            other => Err(BlockerError::UnsupportedFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Accept,
    Drop,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FirewallRule {
    pub device_id: DeviceId,
    /// Client addresses the rule is scoped to.
    pub sources: Vec<String>,
    pub destination: String,
    pub action: Action,
}

#[derive(Serialize)]
struct Document<'a> {
    strategy: BlockingStrategy,
    rules: &'a [FirewallRule],
}

fn is_ip_pattern(p: &DestinationPattern) -> bool {
    matches!(p, DestinationPattern::IpAddress(_) | DestinationPattern::CidrBlock(_))
}

/// Device-scoped rules in evaluation order: accepts before drops.
pub fn firewall_rules(rules: &RuleSet) -> Vec<FirewallRule> {
    let mut out = Vec::new();
    for (device, table) in &rules.devices {
        let sources = rules.associations.addresses_of(device);
        let mut push = |patterns: &[DestinationPattern], action| {
            for p in patterns.iter().filter(|p| is_ip_pattern(p)) {
                out.push(FirewallRule {
                    device_id: device.clone(),
                    sources: sources.clone(),
                    destination: p.to_string(),
                    action,
                });
            }
        };
        match rules.strategy {
            BlockingStrategy::DenyListing => {
                push(&table.exempt, Action::Accept);
                push(&table.block, Action::Drop);
            }
            BlockingStrategy::AllowListing => push(&table.allow, Action::Accept),
        }
    }
    out
}

pub fn export_firewall_rules(rules: &RuleSet, format: ExportFormat) -> Result<String, BlockerError> {
    let list = firewall_rules(rules);
    match format {
        ExportFormat::Json => {
            let mut text = serde_json::to_string_pretty(&Document {
                strategy: rules.strategy,
                rules: &list,
            })?;
            text.push('\n');
            Ok(text)
        }
        ExportFormat::Table => {
            let mut text = String::new();
            if list.is_empty() {
                return Ok(text);
            }
            let _ = writeln!(text, "{:<22} {:<20} {:<18} ACTION", "DEVICE", "SOURCE", "DESTINATION");
            for r in &list {
                let src = if r.sources.is_empty() { "-".to_string() } else { r.sources.join(",") };
                let action = match r.action {
                    Action::Accept => "accept",
                    Action::Drop => "drop",
                };
                let _ = writeln!(text, "{:<22} {:<20} {:<18} {}", r.device_id.to_string(), src, r.destination, action);
            }
            if rules.strategy == BlockingStrategy::AllowListing {
                let _ = writeln!(text, "# everything else from associated clients is dropped");
            }
            Ok(text)
        }
    }
}
