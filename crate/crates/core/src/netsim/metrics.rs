use std::io::Write;

use serde::Serialize;

use super::analysis::RunStats;
use super::TOOL_VERSION;
use crate::chaindag::ForkRule;
use crate::config::{ConfigError, SimConfig};
use crate::entropy::{overtake_bound_difficulty, overtake_bound_entropy};

pub const CSV_COLUMNS: [&str; 13] = [
    "run_id",
    "seed",
    "rule",
    "m_t",
    "m_d",
    "blocks",
    "orphan_rate",
    "mean_fork_persistence",
    "max_reorg_depth",
    "attack_success",
    "min_overtake_k",
    "tool_version",
    "config_digest",
];

/// One CSV row. Rates and means are kept at the precision they are written with.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub run_id: String,
    /// Empty on aggregate rows.
    pub seed: Option<u64>,
    pub rule: String,
    pub m_t: u32,
    pub m_d: u32,
    pub blocks: u64,
    pub orphan_rate: f64,
    pub mean_fork_persistence: f64,
    pub max_reorg_depth: u64,
    pub attack_success: Option<f64>,
    /// Smallest competing-branch length that overtakes one dominant block.
    pub min_overtake_k: String,
    pub tool_version: String,
    pub config_digest: String,
}

/// Six decimals, the written precision.
fn fixed6(x: f64) -> f64 {
    format!("{x:.6}").parse().expect("formatted float parses")
}

fn rule_label(cfg: &SimConfig) -> String {
    let first = cfg.node_rule(&cfg.nodes[0]);
    if cfg.nodes.iter().all(|n| cfg.node_rule(n) == first) {
        first.as_str().to_string()
    } else {
        "mixed".to_string()
    }
}

impl MetricsRecord {
    pub fn from_run(cfg: &SimConfig, seed: u64, stats: &RunStats) -> Result<MetricsRecord, ConfigError> {
        let t = cfg.thresholds()?;
        let rule = rule_label(cfg);
        let min_overtake_k = match cfg.rule {
            ForkRule::Poem => overtake_bound_entropy(t, 0).min_blocks.to_string(),
            ForkRule::Hcr | ForkRule::HcrIntrinsic => overtake_bound_difficulty(t).min_blocks.to_string(),
        };
        Ok(MetricsRecord {
            run_id: format!("{rule}-{seed}"),
            seed: Some(seed),
            rule,
            m_t: cfg.m_t,
            m_d: cfg.m_d,
            blocks: stats.blocks,
            orphan_rate: fixed6(stats.orphan_rate),
            mean_fork_persistence: fixed6(stats.mean_fork_persistence),
            max_reorg_depth: stats.max_reorg_depth,
            attack_success: stats.attack_success().map(fixed6),
            min_overtake_k,
            tool_version: TOOL_VERSION.to_string(),
            config_digest: cfg.digest(),
        })
    }

    pub fn csv_fields(&self) -> [String; 13] {
        [
            self.run_id.clone(),
            self.seed.map(|s| s.to_string()).unwrap_or_default(),
            self.rule.clone(),
            self.m_t.to_string(),
            self.m_d.to_string(),
            self.blocks.to_string(),
            format!("{:.6}", self.orphan_rate),
            format!("{:.6}", self.mean_fork_persistence),
            self.max_reorg_depth.to_string(),
            self.attack_success.map(|a| format!("{a:.6}")).unwrap_or_default(),
            self.min_overtake_k.clone(),
            self.tool_version.clone(),
            self.config_digest.clone(),
        ]
    }
}

/// Summary row: block totals, means of rates, maximum reorg depth.
///
/// Means are taken over the written per-run values, so the row can be
/// recomputed from the CSV alone.
pub fn aggregate(rows: &[MetricsRecord]) -> Option<MetricsRecord> {
    let first = rows.first()?;
    let n = rows.len() as f64;
    let same = |f: fn(&MetricsRecord) -> &str| {
        let v = f(first);
        if rows.iter().all(|r| f(r) == v) {
            v.to_string()
        } else {
            "mixed".to_string()
        }
    };
    let attacks: Vec<f64> = rows.iter().filter_map(|r| r.attack_success).collect();
    Some(MetricsRecord {
        run_id: "aggregate".to_string(),
        seed: None,
        rule: same(|r| &r.rule),
        m_t: first.m_t,
        m_d: first.m_d,
        blocks: rows.iter().map(|r| r.blocks).sum(),
        orphan_rate: fixed6(rows.iter().map(|r| r.orphan_rate).sum::<f64>() / n),
        mean_fork_persistence: fixed6(rows.iter().map(|r| r.mean_fork_persistence).sum::<f64>() / n),
        max_reorg_depth: rows.iter().map(|r| r.max_reorg_depth).max().unwrap_or(0),
        attack_success: (!attacks.is_empty()).then(|| fixed6(attacks.iter().sum::<f64>() / attacks.len() as f64)),
        min_overtake_k: same(|r| &r.min_overtake_k),
        tool_version: first.tool_version.clone(),
        config_digest: same(|r| &r.config_digest),
    })
}

/// Header, the rows in the given order, then the aggregate row.
pub fn write_csv<W: Write>(rows: &[MetricsRecord], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_COLUMNS)?;
    for r in rows {
        out.write_record(r.csv_fields())?;
    }
    if let Some(agg) = aggregate(rows) {
        out.write_record(agg.csv_fields())?;
    }
    out.flush()?;
    Ok(())
}
