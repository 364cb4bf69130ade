//! Cross-platform propagation of reviewed advisories.
//!
//! Each advisory becomes a date-ordered sequence of platform publications.
//! Platforms sharing a calendar day are simultaneous: no tuple links them, and
//! every member of one date group links to every member of the next. The
//! first transition of a sequence is drawn as level 1→2, every later one as
//! level 2→3.

use std::collections::BTreeMap;
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::model::{AdvisoryRecord, EcosystemDb, Source, Timestamp, YearMonth};
use crate::par::{self, Execution};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Platform {
    Ghsa,
    Gra,
    Nvd,
    Friendsofphp,
    Rustsec,
    Pypa,
    Rubysec,
    Govulndb,
}

impl Platform {
    pub fn as_str(&self) -> &'static str {
        match self {
            Platform::Ghsa => "ghsa",
            Platform::Gra => "gra",
            Platform::Nvd => "nvd",
            Platform::Friendsofphp => "friendsofphp",
            Platform::Rustsec => "rustsec",
            Platform::Pypa => "pypa",
            Platform::Rubysec => "rubysec",
            Platform::Govulndb => "govulndb",
        }
    }
}

impl From<EcosystemDb> for Platform {
    fn from(db: EcosystemDb) -> Self {
        match db {
            EcosystemDb::Rustsec => Platform::Rustsec,
            EcosystemDb::Friendsofphp => Platform::Friendsofphp,
            EcosystemDb::Pypa => Platform::Pypa,
            EcosystemDb::Rubysec => Platform::Rubysec,
            EcosystemDb::Govulndb => Platform::Govulndb,
        }
    }
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PlatformEvent {
    pub date: NaiveDate,
    pub platform: Platform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowTuple {
    pub level: u8,
    pub from: Platform,
    pub to: Platform,
}

/// Publication events of one advisory, ordered by date then platform.
pub fn event_sequence(record: &AdvisoryRecord) -> Vec<PlatformEvent> {
    let mut events: Vec<PlatformEvent> = [
        (Platform::Ghsa, record.published_at),
        (Platform::Gra, record.gra_published_at),
        (Platform::Nvd, record.nvd_published_at),
    ]
    .into_iter()
    .filter_map(|(platform, t)| {
        t.map(|t| PlatformEvent {
            date: t.date(),
            platform,
        })
    })
    .chain(record.ecosystem_published_at.iter().map(|(db, t)| PlatformEvent {
        date: t.date(),
        platform: (*db).into(),
    }))
    .collect();
    events.sort();
    events
}

/// Splits a date-sorted sequence into groups of simultaneous platforms.
pub fn date_groups(sequence: &[PlatformEvent]) -> Vec<Vec<Platform>> {
    let mut groups: Vec<Vec<Platform>> = Vec::new();
    let mut last: Option<NaiveDate> = None;
    for e in sequence {
        if last == Some(e.date) {
            groups.last_mut().unwrap().push(e.platform);
        } else {
            groups.push(vec![e.platform]);
            last = Some(e.date);
        }
    }
    groups
}

/// Tuples between consecutive date groups, levels capped at 2.
pub fn flow_tuples(sequence: &[PlatformEvent]) -> Vec<FlowTuple> {
    let groups = date_groups(sequence);
    let mut out = Vec::new();
    for (i, pair) in groups.windows(2).enumerate() {
        let level = if i == 0 { 1 } else { 2 };
        for &from in &pair[0] {
            for &to in &pair[1] {
                out.push(FlowTuple { level, from, to });
            }
        }
    }
    out
}

/// Whether a record enters the flow diagram: reviewed, published on GHSA, and
/// published elsewhere on a different day than on GHSA.
pub fn qualifies(record: &AdvisoryRecord, sequence: &[PlatformEvent]) -> bool {
    if !record.reviewed {
        return false;
    }
    let Some(ghsa) = sequence.iter().find(|e| e.platform == Platform::Ghsa) else {
        return false;
    };
    sequence
        .iter()
        .any(|e| e.platform != Platform::Ghsa && e.date != ghsa.date)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SankeyLink {
    pub level: u8,
    pub from: Platform,
    pub to: Platform,
    pub weight: u64,
}

/// A sequence spanning more than three date groups, kept whole because the
/// three-level diagram can only show its first two transitions faithfully.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LongChain {
    pub ghsa_id: String,
    pub groups: Vec<Vec<Platform>>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sankey {
    pub links: Vec<SankeyLink>,
    pub qualifying_advisories: u64,
    pub long_chains: Vec<LongChain>,
}

impl Sankey {
    pub fn level_weight(&self, level: u8) -> u64 {
        self.links.iter().filter(|l| l.level == level).map(|l| l.weight).sum()
    }

    /// (inbound, outbound) weight of a platform's level-2 node.
    pub fn middle_balance(&self, platform: Platform) -> (u64, u64) {
        let inbound = self
            .links
            .iter()
            .filter(|l| l.level == 1 && l.to == platform)
            .map(|l| l.weight)
            .sum();
        let outbound = self
            .links
            .iter()
            .filter(|l| l.level == 2 && l.from == platform)
            .map(|l| l.weight)
            .sum();
        (inbound, outbound)
    }

    /// Share of flows through `platform` that start there: level-1 outflow
    /// from the platform over that outflow plus all inflow into it.
    pub fn origin_share(&self, platform: Platform) -> Option<f64> {
        let origin: u64 = self
            .links
            .iter()
            .filter(|l| l.level == 1 && l.from == platform)
            .map(|l| l.weight)
            .sum();
        let inbound: u64 = self.links.iter().filter(|l| l.to == platform).map(|l| l.weight).sum();
        let total = origin + inbound;
        (total > 0).then(|| origin as f64 / total as f64)
    }

    /// Node-link document in the shape d3-sankey and similar renderers read.
    pub fn to_json(&self) -> serde_json::Value {
        let mut nodes: BTreeMap<(u8, Platform), usize> = BTreeMap::new();
        for l in &self.links {
            nodes.entry((l.level, l.from)).or_insert(0);
            nodes.entry((l.level + 1, l.to)).or_insert(0);
        }
        for (i, v) in nodes.values_mut().enumerate() {
            *v = i;
        }
        let node_list: Vec<_> = nodes
            .keys()
            .map(|(level, p)| serde_json::json!({"name": format!("{p}@{level}"), "platform": p, "level": level}))
            .collect();
        let link_list: Vec<_> = self
            .links
            .iter()
            .map(|l| {
                serde_json::json!({
                    "source": nodes[&(l.level, l.from)],
                    "target": nodes[&(l.level + 1, l.to)],
                    "value": l.weight,
                })
            })
            .collect();
        serde_json::json!({"nodes": node_list, "links": link_list})
    }
}

pub fn build_sankey(records: &[AdvisoryRecord], exec: Execution) -> Sankey {
    let per_record = par::map(exec, records, |r| {
        let seq = event_sequence(r);
        if !qualifies(r, &seq) {
            return None;
        }
        let groups = date_groups(&seq);
        let long = (groups.len() > 3).then(|| LongChain {
            ghsa_id: r.ghsa_id.clone(),
            groups,
        });
        Some((flow_tuples(&seq), long))
    });
    let mut weights: BTreeMap<FlowTuple, u64> = BTreeMap::new();
    let mut out = Sankey::default();
    for (tuples, long) in per_record.into_iter().flatten() {
        out.qualifying_advisories += 1;
        for t in tuples {
            *weights.entry(t).or_default() += 1;
        }
        out.long_chains.extend(long);
    }
    out.links = weights
        .into_iter()
        .map(|(t, weight)| SankeyLink {
            level: t.level,
            from: t.from,
            to: t.to,
            weight,
        })
        .collect();
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceCounts {
    pub gra: u64,
    pub nvd: u64,
    pub other: u64,
}

impl SourceCounts {
    pub fn get(&self, source: Source) -> u64 {
        match source {
            Source::Gra => self.gra,
            Source::Nvd => self.nvd,
            Source::Other => self.other,
        }
    }

    fn bump(&mut self, source: Source) {
        match source {
            Source::Gra => self.gra += 1,
            Source::Nvd => self.nvd += 1,
            Source::Other => self.other += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.gra + self.nvd + self.other
    }
}

/// Reviewed advisories per calendar month of review, split by origin.
pub fn reviews_per_month(records: &[AdvisoryRecord]) -> BTreeMap<YearMonth, SourceCounts> {
    let mut table: BTreeMap<YearMonth, SourceCounts> = BTreeMap::new();
    for r in records {
        if let Some(t) = r.github_reviewed_at {
            table.entry(t.month()).or_default().bump(r.source());
        }
    }
    table
}

/// Totals over a monthly table.
pub fn source_totals(table: &BTreeMap<YearMonth, SourceCounts>) -> SourceCounts {
    table.values().fold(SourceCounts::default(), |acc, c| SourceCounts {
        gra: acc.gra + c.gra,
        nvd: acc.nvd + c.nvd,
        other: acc.other + c.other,
    })
}

/// Day-level helper used by tests and fixtures.
pub fn at_day(date: NaiveDate) -> Timestamp {
    Timestamp::midnight(date)
}
