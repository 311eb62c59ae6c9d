//! Registrable-domain extraction against a bundled public-suffix snapshot.
//!
//! The snapshot carries ICANN suffixes only. Private-section entries such as
//! `cloudfront.net` are deliberately absent: a CDN hostname like
//! `d1enchupjctwud.cloudfront.net` must collapse to `cloudfront.net`, which is
//! also the widest wildcard the grouping stage may produce.

use super::ModelError;

/// ICANN public suffixes covering the destinations this tool is used with.
/// Unknown TLDs fall back to the implicit `*` rule (the last label is the suffix).
const ICANN_SUFFIXES: &[&str] = &[
    // generic
    "com", "net", "org", "info", "biz", "io", "co", "me", "tv", "app", "dev", "cloud", "ai",
    "xyz", "online", "site", "tech", "edu", "gov", "mil", "int",
    // country codes and their common second levels
    "eu", "de", "fr", "it", "es", "nl", "se", "ch", "at", "be", "dk", "fi", "no", "pl", "ru",
    "ie", "pt", "cz", "us", "ca", "mx", "br", "com.br", "net.br", "org.br", "ar", "com.ar",
    "uk", "co.uk", "org.uk", "ac.uk", "gov.uk", "ltd.uk", "plc.uk", "me.uk", "net.uk",
    "au", "com.au", "net.au", "org.au", "edu.au", "gov.au", "nz", "co.nz", "net.nz", "org.nz",
    "jp", "co.jp", "ne.jp", "or.jp", "ac.jp", "kr", "co.kr", "or.kr", "cn", "com.cn", "net.cn",
    "org.cn", "gov.cn", "hk", "com.hk", "tw", "com.tw", "sg", "com.sg", "in", "co.in",
    "net.in", "za", "co.za", "il", "co.il", "tr", "com.tr",
];

fn is_public_suffix(candidate: &str) -> bool {
    ICANN_SUFFIXES.contains(&candidate)
}

/// Length in labels of the longest public suffix of `labels`.
fn suffix_label_count(labels: &[&str]) -> usize {
    for skip in 0..labels.len() {
        let candidate = labels[skip..].join(".");
        if is_public_suffix(&candidate) {
            return labels.len() - skip;
        }
    }
    1
}

/// Returns the registrable second-level domain of `hostname`
/// (`api.eu.xiaoyi.com` → `xiaoyi.com`).
pub fn effective_sld(hostname: &str) -> Result<String, ModelError> {
    let normalized = super::pattern::normalize_hostname(hostname)?;
    let labels: Vec<&str> = normalized.split('.').collect();
    let suffix_len = suffix_label_count(&labels);
    if labels.len() <= suffix_len {
        return Err(ModelError::NoRegistrableDomain(normalized));
    }
    Ok(labels[labels.len() - suffix_len - 1..].join("."))
}
