//! Experiment configuration: one JSON document, units spelled out in field names.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chaindag::ForkRule;
use crate::entropy::{FieldSpec, ThresholdSpec};
use crate::minesim::{MinerSpec, MiningMode, Strategy, MAX_GRIND_BITS};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

impl ConfigError {
    fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Invalid { field: field.into(), reason: reason.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    /// Open-ended mining until the horizon.
    #[default]
    Network,
    /// One withheld dominant block against honest subordinate blocks.
    Withholding,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DelayModel {
    Fixed { delay_ms: f64 },
    Exponential { mean_ms: f64 },
    Uniform { lo_ms: f64, hi_ms: f64 },
}

impl DelayModel {
    /// Largest possible delay, `None` when unbounded.
    pub fn max_ms(&self) -> Option<f64> {
        match *self {
            DelayModel::Fixed { delay_ms } => Some(delay_ms),
            DelayModel::Exponential { .. } => None,
            DelayModel::Uniform { hi_ms, .. } => Some(hi_ms),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: String,
    #[serde(default)]
    pub miners: Vec<String>,
    /// Overrides the experiment-wide rule for this node.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<ForkRule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub from: String,
    pub to: String,
    pub delay: DelayModel,
    /// Also add the reverse direction with the same delay model.
    #[serde(default = "yes")]
    pub bidirectional: bool,
}

fn yes() -> bool {
    true
}

/// A single seed or an inclusive range `A..B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedSpec {
    Single(u64),
    Range { start: u64, end: u64 },
}

impl SeedSpec {
    pub fn seeds(&self) -> Vec<u64> {
        match *self {
            SeedSpec::Single(s) => vec![s],
            SeedSpec::Range { start, end } => (start..=end).collect(),
        }
    }
}

impl Default for SeedSpec {
    fn default() -> Self {
        SeedSpec::Single(1)
    }
}

impl fmt::Display for SeedSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SeedSpec::Single(s) => write!(f, "{s}"),
            SeedSpec::Range { start, end } => write!(f, "{start}..{end}"),
        }
    }
}

impl FromStr for SeedSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("bad seed spec {s:?} (expected N or A..B)");
        match s.split_once("..") {
            None => s.trim().parse().map(SeedSpec::Single).map_err(|_| bad()),
            Some((a, b)) => {
                let start: u64 = a.trim().parse().map_err(|_| bad())?;
                let end: u64 = b.trim().parse().map_err(|_| bad())?;
                if end < start {
                    return Err(format!("empty seed range {s:?}"));
                }
                Ok(SeedSpec::Range { start, end })
            }
        }
    }
}

impl Serialize for SeedSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            SeedSpec::Single(v) => s.serialize_u64(*v),
            range => s.collect_str(range),
        }
    }
}

impl<'de> Deserialize<'de> for SeedSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(n) => Ok(SeedSpec::Single(n)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub field_bits: u32,
    pub m_t: u32,
    pub m_d: u32,
    pub rule: ForkRule,
    pub mining_mode: MiningMode,
    #[serde(default)]
    pub experiment: Experiment,
    /// Network-wide mean time between subordinate-valid outputs.
    pub mean_block_interval_ms: f64,
    pub miners: Vec<MinerSpec>,
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
    /// Canonical-chain length at which mining stops.
    pub horizon_blocks: u64,
    #[serde(default)]
    pub seeds: SeedSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: SimConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact serialization, hex.
    pub fn digest(&self) -> String {
        let compact = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(compact.as_bytes()))
    }

    pub fn field(&self) -> Result<FieldSpec, ConfigError> {
        FieldSpec::new(self.field_bits).map_err(|e| ConfigError::invalid("field_bits", e.to_string()))
    }

    pub fn thresholds(&self) -> Result<ThresholdSpec, ConfigError> {
        let field = self.field()?;
        if self.m_t < 1 {
            return Err(ConfigError::invalid("m_t", "must be at least 1"));
        }
        ThresholdSpec::new(self.m_t, self.m_d, field).map_err(|e| ConfigError::invalid("m_d", e.to_string()))
    }

    /// Rule of a node after applying its override.
    pub fn node_rule(&self, node: &NodeSpec) -> ForkRule {
        node.rule.unwrap_or(self.rule)
    }

    /// Forces every node onto one rule.
    pub fn set_rule(&mut self, rule: ForkRule) {
        self.rule = rule;
        for n in &mut self.nodes {
            n.rule = None;
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let field = self.field()?;
        self.thresholds()?;
        if let MiningMode::Grind { .. } = self.mining_mode {
            if field.bits() != 256 {
                return Err(ConfigError::invalid("field_bits", "grind mode hashes into a 256-bit field"));
            }
            if self.m_t > MAX_GRIND_BITS {
                return Err(ConfigError::invalid("m_t", format!("grind mode allows at most {MAX_GRIND_BITS} bits")));
            }
        }
        if !(self.mean_block_interval_ms.is_finite() && self.mean_block_interval_ms > 0.0) {
            return Err(ConfigError::invalid("mean_block_interval_ms", "must be positive"));
        }
        if self.horizon_blocks < 1 && self.experiment == Experiment::Network {
            return Err(ConfigError::invalid("horizon_blocks", "must be at least 1"));
        }
        if self.miners.is_empty() {
            return Err(ConfigError::invalid("miners", "at least one miner is required"));
        }
        let mut miner_ids = HashSet::new();
        let mut sum = 0.0;
        for (i, m) in self.miners.iter().enumerate() {
            if !miner_ids.insert(m.id.as_str()) {
                return Err(ConfigError::invalid(format!("miners[{i}].id"), format!("duplicate miner id {:?}", m.id)));
            }
            if !(m.hashrate_fraction > 0.0 && m.hashrate_fraction <= 1.0) {
                return Err(ConfigError::invalid(format!("miners[{i}].hashrate_fraction"), "must be in (0, 1]"));
            }
            sum += m.hashrate_fraction;
        }
        if (sum - 1.0).abs() > 1e-12 {
            return Err(ConfigError::invalid("miners.hashrate_fraction", format!("fractions sum to {sum}, expected 1")));
        }
        if self.nodes.is_empty() {
            return Err(ConfigError::invalid("nodes", "at least one node is required"));
        }
        let mut node_ids = HashMap::new();
        let mut attached: HashMap<&str, usize> = HashMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if node_ids.insert(n.id.as_str(), i).is_some() {
                return Err(ConfigError::invalid(format!("nodes[{i}].id"), format!("duplicate node id {:?}", n.id)));
            }
            for m in &n.miners {
                if !miner_ids.contains(m.as_str()) {
                    return Err(ConfigError::invalid(format!("nodes[{i}].miners"), format!("unknown miner {m:?}")));
                }
                if attached.insert(m.as_str(), i).is_some() {
                    return Err(ConfigError::invalid(format!("nodes[{i}].miners"), format!("miner {m:?} attached twice")));
                }
            }
        }
        if let Some(m) = self.miners.iter().find(|m| !attached.contains_key(m.id.as_str())) {
            return Err(ConfigError::invalid("nodes.miners", format!("miner {:?} is not attached to a node", m.id)));
        }
        if !self.nodes.iter().any(|n| n.miners.iter().all(|m| self.miner(m).is_some_and(MinerSpec::is_honest))) {
            return Err(ConfigError::invalid("nodes", "at least one node must be honest"));
        }
        for (i, l) in self.links.iter().enumerate() {
            for (end, id) in [("from", &l.from), ("to", &l.to)] {
                if !node_ids.contains_key(id.as_str()) {
                    return Err(ConfigError::invalid(format!("links[{i}].{end}"), format!("unknown node {id:?}")));
                }
            }
            if l.from == l.to {
                return Err(ConfigError::invalid(format!("links[{i}]"), "self links are not allowed"));
            }
            let ok = match l.delay {
                DelayModel::Fixed { delay_ms } => delay_ms.is_finite() && delay_ms >= 0.0,
                DelayModel::Exponential { mean_ms } => mean_ms.is_finite() && mean_ms > 0.0,
                DelayModel::Uniform { lo_ms, hi_ms } => lo_ms.is_finite() && hi_ms.is_finite() && 0.0 <= lo_ms && lo_ms <= hi_ms,
            };
            if !ok {
                return Err(ConfigError::invalid(format!("links[{i}].delay"), "delays must be finite and non-negative"));
            }
        }
        self.check_connected(&node_ids)?;
        if self.experiment == Experiment::Withholding {
            let attackers: Vec<_> = self.miners.iter().filter(|m| matches!(m.strategy, Strategy::WithholdDominant { .. })).collect();
            if attackers.len() != 1 || self.miners.iter().any(|m| matches!(m.strategy, Strategy::PrivateChain { .. })) {
                return Err(ConfigError::invalid("miners", "the withholding experiment needs exactly one withhold_dominant miner and honest others"));
            }
            if self.miners.len() < 2 {
                return Err(ConfigError::invalid("miners", "the withholding experiment needs an honest miner"));
            }
            if self.m_d == 0 {
                return Err(ConfigError::invalid("m_d", "the withholding experiment needs m_d >= 1"));
            }
            if let MiningMode::Grind { .. } = self.mining_mode {
                return Err(ConfigError::invalid("mining_mode", "the withholding experiment supports sampled and clamped_intrinsic"));
            }
        }
        Ok(())
    }

    pub fn miner(&self, id: &str) -> Option<&MinerSpec> {
        self.miners.iter().find(|m| m.id == id)
    }

    /// Directed adjacency after expanding bidirectional links.
    pub fn adjacency(&self) -> Vec<Vec<(usize, DelayModel)>> {
        let index: HashMap<&str, usize> = self.nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for l in &self.links {
            let (a, b) = (index[l.from.as_str()], index[l.to.as_str()]);
            adj[a].push((b, l.delay));
            if l.bidirectional {
                adj[b].push((a, l.delay));
            }
        }
        adj
    }

    fn check_connected(&self, node_ids: &HashMap<&str, usize>) -> Result<(), ConfigError> {
        let _ = node_ids;
        let adj = self.adjacency();
        let n = adj.len();
        let reach = |adj: &Vec<Vec<usize>>| {
            let mut seen = vec![false; n];
            let mut q = VecDeque::from([0usize]);
            seen[0] = true;
            while let Some(x) = q.pop_front() {
                for &y in &adj[x] {
                    if !seen[y] {
                        seen[y] = true;
                        q.push_back(y);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        let fwd: Vec<Vec<usize>> = adj.iter().map(|v| v.iter().map(|(y, _)| *y).collect()).collect();
        let mut rev = vec![Vec::new(); n];
        for (x, ys) in fwd.iter().enumerate() {
            for &y in ys {
                rev[y].push(x);
            }
        }
        if reach(&fwd) && reach(&rev) {
            Ok(())
        } else {
            Err(ConfigError::invalid("links", "the node graph must be strongly connected"))
        }
    }

    /// Upper bound on first-delivery latency between any two nodes, `None` if unbounded.
    pub fn max_path_delay_ms(&self) -> Option<f64> {
        let mut worst: f64 = 0.0;
        for l in &self.links {
            worst = worst.max(l.delay.max_ms()?);
        }
        Some(worst * self.nodes.len().saturating_sub(1) as f64)
    }
}
