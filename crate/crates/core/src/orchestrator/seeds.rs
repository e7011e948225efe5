use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use url::Url;

use super::{SeedSource, SeedSpec};
use crate::env::Blocklist;

/// Which seeds may pass besides the blocklist. An empty domain list allows
/// every domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AllowRules {
    pub schemes: BTreeSet<String>,
    pub domains: BTreeSet<String>,
}

impl Default for AllowRules {
    fn default() -> Self {
        Self { schemes: ["http", "https"].map(String::from).into(), domains: BTreeSet::new() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedFilterReport {
    pub seeds: Vec<SeedSpec>,
    pub malformed: usize,
    pub blocked: usize,
    pub bad_scheme: usize,
    pub not_allowed: usize,
    pub duplicate: usize,
}

impl SeedFilterReport {
    pub fn skipped(&self) -> usize {
        self.malformed + self.blocked + self.bad_scheme + self.not_allowed + self.duplicate
    }
}

/// Registrable domain of the URL's host, or the host itself when it has no
/// public suffix (`fixture://shop/home` gives `shop`).
pub fn domain_key(url: &str) -> String {
    let Ok(u) = Url::parse(url.trim()) else { return url.trim().to_string() };
    let Some(host) = u.host_str() else { return url.trim().to_string() };
    let host = host.trim_end_matches('.').to_ascii_lowercase();
    match psl::domain_str(&host) {
        Some(d) => d.to_string(),
        None => host,
    }
}

fn looks_like_domain(s: &str) -> bool {
    s.contains('.')
        && !s.starts_with('.')
        && !s.ends_with('.')
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '.')
}

/// Accepts a JSON `SeedSpec`, a `rank,domain` row, a bare domain, or a URL.
fn parse_line(line: &str, source: SeedSource) -> Option<SeedSpec> {
    if line.starts_with('{') {
        return serde_json::from_str::<SeedSpec>(line).ok();
    }
    let field = match line.split_once(',') {
        Some((rank, rest)) if rank.trim().parse::<u64>().is_ok() => rest.trim(),
        Some(_) => return None,
        None => line,
    };
    let url = if field.contains("://") {
        field.to_string()
    } else if looks_like_domain(field) {
        format!("https://{field}/")
    } else {
        return None;
    };
    let parsed = Url::parse(&url).ok()?;
    parsed.host_str().filter(|h| !h.is_empty())?;
    Some(SeedSpec { url: parsed.to_string(), source, via_search: false })
}

/// Cleans a raw seed list: skips blank and `#` lines, drops unparseable
/// lines, blocked domains, disallowed schemes and domains, and repeats of
/// the same registrable domain and path.
pub fn filter_seeds<'a, I>(lines: I, source: SeedSource, blocklist: &Blocklist, allow: &AllowRules) -> SeedFilterReport
where
    I: IntoIterator<Item = &'a str>,
{
    let mut out = SeedFilterReport::default();
    let mut seen = HashSet::new();
    for raw in lines {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some(seed) = parse_line(line, source) else {
            out.malformed += 1;
            continue;
        };
        let Ok(u) = Url::parse(&seed.url) else {
            out.malformed += 1;
            continue;
        };
        if !allow.schemes.contains(u.scheme()) {
            out.bad_scheme += 1;
            continue;
        }
        if blocklist.blocks(&seed.url) {
            out.blocked += 1;
            continue;
        }
        let domain = domain_key(&seed.url);
        if !allow.domains.is_empty() && !allow.domains.contains(&domain) {
            out.not_allowed += 1;
            continue;
        }
        let path = match u.path() {
            "" => "/",
            p => p,
        };
        if !seen.insert(format!("{domain}{path}")) {
            out.duplicate += 1;
            continue;
        }
        out.seeds.push(seed);
    }
    out
}
