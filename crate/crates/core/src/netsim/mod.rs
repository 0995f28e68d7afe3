//! Seeded discrete-event network of nodes, each holding its own block store.
//!
//! Events are ordered by `(time, kind, key, node, insertion)`, where deliveries
//! sort before reveals and reveals before discoveries at equal times. One
//! generator stream drives mining, another the link delays, so a run is a pure
//! function of its configuration and seed.
//!
//! Adversarial miners see honest blocks the instant they are found. Honest
//! nodes relay every first-seen valid block to their neighbours.

mod analysis;
mod metrics;
mod trace;

pub use analysis::{fork_resolution, measure_orphans, ForkResolution, ForkStat, RunStats};
pub use metrics::{aggregate, write_csv, MetricsRecord, CSV_COLUMNS};
pub use trace::{Delivery, Trace, TraceEvent, TraceHeader, TraceNode, TRACE_SCHEMA_VERSION};

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashSet};

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::chaindag::{BlockId, BlockRecord, ChainDag, ChainError, ForkRule, InsertOutcome, Level, WeightPolicy};
use crate::config::{ConfigError, DelayModel, Experiment, SimConfig};
use crate::entropy::{ChainWeight, FieldSpec, ThresholdSpec};
use crate::minesim::{
    grind_output, next_block_time, sample_output, sample_output_at_level, sim_rng, MineError, MinedOutput, MiningMode, Strategy, MINING_STREAM,
    NETWORK_STREAM, RNG_NAME,
};
use crate::time::SimTime;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Mine(#[from] MineError),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// A node's view: its store, rule and what it has already seen.
#[derive(Debug, Clone)]
pub struct Node {
    pub name: String,
    pub rule: ForkRule,
    pub honest: bool,
    pub dag: ChainDag,
    seen: HashSet<BlockId>,
    invalid: u64,
}

/// Result of handing a block to a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Receipt {
    pub delivery: Delivery,
    /// Whether the node forwards the block to its neighbours.
    pub relay: bool,
    pub old_tip: BlockId,
    pub tip: BlockId,
    pub reorg_depth: u64,
}

impl Node {
    pub fn new(name: impl Into<String>, rule: ForkRule, honest: bool, field: FieldSpec, t: ThresholdSpec, policy: WeightPolicy) -> Node {
        Node { name: name.into(), rule, honest, dag: ChainDag::new(field, t, policy, rule), seen: HashSet::from([BlockId::GENESIS]), invalid: 0 }
    }

    pub fn tip(&self) -> BlockId {
        self.dag.best_tip(self.rule).best_tip
    }

    /// Blocks dropped as invalid so far.
    pub fn invalid_count(&self) -> u64 {
        self.invalid
    }

    /// Inserts a block and decides whether to pass it on.
    ///
    /// Only the first copy of a block is processed; honest nodes relay every
    /// first-seen block that is not invalid.
    pub fn on_block_received(&mut self, block: BlockRecord, now: SimTime) -> Receipt {
        let old_tip = self.tip();
        if !self.seen.insert(block.id) {
            return Receipt { delivery: Delivery::Duplicate, relay: false, old_tip, tip: old_tip, reorg_depth: 0 };
        }
        self.dag.set_clock(now);
        let inserted = match self.dag.insert_block(block) {
            Ok(InsertOutcome::Duplicate) => return Receipt { delivery: Delivery::Duplicate, relay: false, old_tip, tip: old_tip, reorg_depth: 0 },
            Ok(_) => None,
            Err(ChainError::MissingParent { .. }) => Some(Delivery::Buffered),
            Err(_) => {
                self.invalid += 1;
                Some(Delivery::Invalid)
            }
        };
        let tip = self.tip();
        let delivery = inserted.unwrap_or(if tip != old_tip { Delivery::NewTip } else { Delivery::SideBranch });
        let reorg_depth = if tip != old_tip { self.dag.reorg_depth(old_tip, tip).unwrap_or(0) } else { 0 };
        Receipt { delivery, relay: self.honest && delivery != Delivery::Invalid, old_tip, tip, reorg_depth }
    }
}

#[derive(Debug, Clone)]
enum Attack {
    None,
    /// Holds back everything from its first dominant block until enough honest blocks appear.
    Withhold {
        reveal_after: u32,
        pending: Vec<BlockId>,
        honest_at_start: u64,
    },
    /// Mines a private branch and publishes it once it leads by the margin.
    Private {
        margin: ChainWeight,
        branch: Vec<BlockId>,
        tip: BlockId,
        public_tip: BlockId,
    },
}

#[derive(Debug, Clone)]
struct Miner {
    fraction: f64,
    node: usize,
    honest: bool,
    attack: Attack,
}

#[derive(Debug, Clone)]
enum Kind {
    Delivered { block: BlockRecord, from: Option<usize> },
    Reveal { miner: usize },
    Found { miner: usize },
}

impl Kind {
    fn priority(&self) -> u8 {
        match self {
            Kind::Delivered { .. } => 0,
            Kind::Reveal { .. } => 1,
            Kind::Found { .. } => 2,
        }
    }

    fn key(&self) -> u64 {
        match self {
            Kind::Delivered { block, .. } => block.id.0,
            Kind::Reveal { miner } | Kind::Found { miner } => *miner as u64,
        }
    }
}

#[derive(Debug, Clone)]
struct Event {
    time: SimTime,
    node: usize,
    order: u64,
    kind: Kind,
}

impl Event {
    fn sort_key(&self) -> (SimTime, u8, u64, usize, u64) {
        (self.time, self.kind.priority(), self.kind.key(), self.node, self.order)
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.sort_key() == other.sort_key()
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sort_key().cmp(&other.sort_key())
    }
}

/// Everything one run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: MetricsRecord,
    pub stats: RunStats,
    pub trace: Trace,
}

pub struct Simulation {
    cfg: SimConfig,
    seed: u64,
    field: FieldSpec,
    t: ThresholdSpec,
    nodes: Vec<Node>,
    adj: Vec<Vec<(usize, DelayModel)>>,
    miners: Vec<Miner>,
    reference: usize,
    queue: BinaryHeap<Reverse<Event>>,
    mining: ChaCha20Rng,
    network: ChaCha20Rng,
    now: SimTime,
    next_id: u64,
    order: u64,
    events: Vec<TraceEvent>,
    mining_open: bool,
    honest_found: u64,
    /// Network hash rate in hashes per millisecond.
    network_rate: f64,
}

impl Simulation {
    pub fn new(cfg: &SimConfig, seed: u64) -> Result<Simulation, SimError> {
        cfg.validate()?;
        let field = cfg.field()?;
        let t = cfg.thresholds()?;
        let policy = match cfg.mining_mode {
            MiningMode::ClampedIntrinsic => WeightPolicy::Clamped,
            _ => WeightPolicy::Derived,
        };
        let mut miners = Vec::with_capacity(cfg.miners.len());
        for spec in &cfg.miners {
            let node = cfg.nodes.iter().position(|n| n.miners.contains(&spec.id)).expect("validated attachment");
            let attack = match spec.strategy {
                Strategy::Honest => Attack::None,
                Strategy::WithholdDominant { reveal_after } => Attack::Withhold { reveal_after, pending: Vec::new(), honest_at_start: 0 },
                Strategy::PrivateChain { reveal_margin } => {
                    Attack::Private { margin: reveal_margin, branch: Vec::new(), tip: BlockId::GENESIS, public_tip: BlockId::GENESIS }
                }
            };
            miners.push(Miner { fraction: spec.hashrate_fraction, node, honest: spec.is_honest(), attack });
        }
        let nodes: Vec<Node> = cfg
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let honest = miners.iter().filter(|m| m.node == i).all(|m| m.honest);
                Node::new(n.id.clone(), cfg.node_rule(n), honest, field, t, policy)
            })
            .collect();
        let reference = nodes.iter().position(|n| n.honest).expect("validated honest node");
        Ok(Simulation {
            seed,
            field,
            t,
            adj: cfg.adjacency(),
            nodes,
            miners,
            reference,
            queue: BinaryHeap::new(),
            mining: sim_rng(seed, MINING_STREAM),
            network: sim_rng(seed, NETWORK_STREAM),
            now: SimTime::ZERO,
            next_id: 1,
            order: 0,
            events: Vec::new(),
            mining_open: true,
            honest_found: 0,
            network_rate: (t.m_t() as f64).exp2() / cfg.mean_block_interval_ms,
            cfg: cfg.clone(),
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    fn push(&mut self, time: SimTime, node: usize, kind: Kind) {
        self.order += 1;
        self.queue.push(Reverse(Event { time, node, order: self.order, kind }));
    }

    fn record(&mut self, f: impl FnOnce(u64) -> TraceEvent) {
        let seq = self.events.len() as u64;
        self.events.push(f(seq));
    }

    fn schedule_find(&mut self, miner: usize) {
        let dt = next_block_time(&mut self.mining, self.miners[miner].fraction, self.network_rate, self.t.m_t());
        let node = self.miners[miner].node;
        self.push(self.now + dt, node, Kind::Found { miner });
    }

    fn sample_delay(&mut self, d: DelayModel) -> SimTime {
        let ms = match d {
            DelayModel::Fixed { delay_ms } => delay_ms,
            DelayModel::Exponential { mean_ms } => {
                let u: f64 = self.network.gen();
                -mean_ms * (1.0 - u).ln()
            }
            DelayModel::Uniform { lo_ms, hi_ms } => {
                let u: f64 = self.network.gen();
                lo_ms + (hi_ms - lo_ms) * u
            }
        };
        SimTime::from_ms(ms)
    }

    fn broadcast(&mut self, from: usize, block: &BlockRecord, except: Option<usize>) {
        for k in 0..self.adj[from].len() {
            let (to, delay) = self.adj[from][k];
            if Some(to) == except {
                continue;
            }
            let at = self.now + self.sample_delay(delay);
            self.push(at, to, Kind::Delivered { block: block.clone(), from: Some(from) });
        }
    }

    fn mine(&mut self, miner: usize, tip: BlockId, level: Option<Level>) -> Result<MinedOutput, SimError> {
        Ok(match (self.cfg.mining_mode, level) {
            (MiningMode::Grind { .. }, _) => {
                let mut pre = Vec::with_capacity(40);
                pre.extend_from_slice(b"poem-lab");
                for v in [self.seed, self.next_id, tip.0, miner as u64] {
                    pre.extend_from_slice(&v.to_le_bytes());
                }
                grind_output(&pre, self.field, self.t)?
            }
            (mode, Some(level)) => sample_output_at_level(&mut self.mining, self.field, self.t, mode, level)?,
            (mode, None) => sample_output(&mut self.mining, self.field, self.t, mode)?,
        })
    }

    /// Mines a block for `miner` on `tip` and stores it at the miner's node.
    fn create_block(&mut self, miner: usize, tip: BlockId, level: Option<Level>) -> Result<(BlockRecord, Receipt), SimError> {
        let node = self.miners[miner].node;
        let out = self.mine(miner, tip, level)?;
        let (parent, sub_tip_ref) = self.nodes[node].dag.links_for(out.level, tip)?;
        let block = BlockRecord {
            id: BlockId(self.next_id),
            hash: out.hash,
            parent,
            level: out.level,
            sub_tip_ref,
            miner: miner as u32,
            height: self.nodes[node].dag.next_height(out.level, parent)?,
            found_at: self.now,
            n: out.n,
        };
        self.next_id += 1;
        let receipt = self.nodes[node].on_block_received(block.clone(), self.now);
        Ok((block, receipt))
    }

    fn on_found(&mut self, miner: usize) -> Result<(), SimError> {
        if !self.mining_open {
            return Ok(());
        }
        let node = self.miners[miner].node;
        let tip = match self.miners[miner].attack {
            Attack::Private { tip, .. } => tip,
            _ => self.nodes[node].tip(),
        };
        let forced = match self.cfg.experiment {
            Experiment::Withholding => Some(Level::Subordinate),
            Experiment::Network => None,
        };
        let (block, receipt) = self.create_block(miner, tip, forced)?;
        let published = match &mut self.miners[miner].attack {
            Attack::None => true,
            Attack::Withhold { pending, honest_at_start, .. } => {
                if pending.is_empty() && block.level != Level::Dominant {
                    true
                } else {
                    if pending.is_empty() {
                        *honest_at_start = self.honest_found;
                    }
                    pending.push(block.id);
                    false
                }
            }
            Attack::Private { branch, tip, .. } => {
                branch.push(block.id);
                *tip = block.id;
                false
            }
        };
        let poem_weight = self.nodes[node].dag.poem_weight(block.id)?;
        self.record(|seq| TraceEvent::Found {
            seq,
            time: block.found_at,
            node: node as u32,
            block: block.clone(),
            poem_weight,
            published,
            tip: receipt.tip,
        });
        if published {
            self.broadcast(node, &block, None);
        }
        if self.miners[miner].honest {
            self.honest_found += 1;
            for other in 0..self.nodes.len() {
                if other != node && !self.nodes[other].honest {
                    self.push(self.now, other, Kind::Delivered { block: block.clone(), from: None });
                }
            }
        }
        self.check_withhold_triggers();
        self.check_private_reveal(miner)?;
        self.schedule_find(miner);
        Ok(())
    }

    fn check_withhold_triggers(&mut self) {
        if self.cfg.experiment == Experiment::Withholding {
            return;
        }
        for m in 0..self.miners.len() {
            if let Attack::Withhold { reveal_after, pending, honest_at_start } = &self.miners[m].attack {
                if !pending.is_empty() && self.honest_found - honest_at_start == *reveal_after as u64 {
                    let node = self.miners[m].node;
                    self.push(self.now, node, Kind::Reveal { miner: m });
                }
            }
        }
    }

    fn check_private_reveal(&mut self, miner: usize) -> Result<(), SimError> {
        let node = self.miners[miner].node;
        let Attack::Private { margin, branch, tip, public_tip } = &self.miners[miner].attack else { return Ok(()) };
        if branch.is_empty() {
            return Ok(());
        }
        let dag = &self.nodes[node].dag;
        let ahead = dag.compare(self.nodes[node].rule, *tip, *public_tip)? == Ordering::Greater;
        let target = dag.poem_weight(*public_tip)?.checked_add_chain(margin).map_err(ChainError::from)?;
        if ahead && dag.poem_weight(*tip)? >= target {
            self.push(self.now, node, Kind::Reveal { miner });
        }
        Ok(())
    }

    fn on_reveal(&mut self, miner: usize) -> Result<(), SimError> {
        let node = self.miners[miner].node;
        let ids = match &mut self.miners[miner].attack {
            Attack::Withhold { pending, .. } => std::mem::take(pending),
            Attack::Private { branch, tip, public_tip, .. } => {
                *public_tip = *tip;
                std::mem::take(branch)
            }
            Attack::None => Vec::new(),
        };
        if ids.is_empty() {
            return Ok(());
        }
        let (now, revealed) = (self.now, ids.clone());
        self.record(|seq| TraceEvent::Reveal { seq, time: now, node: node as u32, miner: miner as u32, ids: revealed });
        for id in ids {
            let block = self.nodes[node].dag.get(id).cloned().ok_or(ChainError::UnknownBlock(id))?;
            self.broadcast(node, &block, None);
        }
        Ok(())
    }

    fn on_delivered(&mut self, node: usize, block: BlockRecord, from: Option<usize>) -> Result<(), SimError> {
        let receipt = self.nodes[node].on_block_received(block.clone(), self.now);
        if receipt.delivery == Delivery::Duplicate {
            return Ok(());
        }
        let now = self.now;
        self.record(|seq| TraceEvent::Delivered {
            seq,
            time: now,
            node: node as u32,
            id: block.id,
            from: from.map(|f| f as u32),
            delivery: receipt.delivery,
            tip: receipt.tip,
            reorg_depth: receipt.reorg_depth,
        });
        if receipt.relay {
            self.broadcast(node, &block, from);
        }
        if !self.nodes[node].honest && self.nodes[node].dag.contains(block.id) {
            let rule = self.nodes[node].rule;
            for m in 0..self.miners.len() {
                if self.miners[m].node != node {
                    continue;
                }
                if let Attack::Private { branch, tip, public_tip, .. } = &mut self.miners[m].attack {
                    let dag = &self.nodes[node].dag;
                    if dag.compare(rule, block.id, *public_tip)? == Ordering::Greater {
                        *public_tip = block.id;
                    }
                    if branch.is_empty() || dag.compare(rule, *public_tip, *tip)? == Ordering::Greater {
                        branch.clear();
                        *tip = *public_tip;
                    }
                }
            }
        }
        Ok(())
    }

    fn horizon_reached(&self) -> Result<bool, SimError> {
        Ok(match self.cfg.experiment {
            Experiment::Network => {
                let r = &self.nodes[self.reference];
                r.dag.chain_len(r.tip())? >= self.cfg.horizon_blocks
            }
            Experiment::Withholding => self.honest_found >= self.reveal_after() as u64,
        })
    }

    fn reveal_after(&self) -> u32 {
        self.miners
            .iter()
            .find_map(|m| match m.attack {
                Attack::Withhold { reveal_after, .. } => Some(reveal_after),
                _ => None,
            })
            .unwrap_or(0)
    }

    fn header(&self) -> TraceHeader {
        TraceHeader {
            schema_version: TRACE_SCHEMA_VERSION,
            tool_version: TOOL_VERSION.to_string(),
            config_digest: self.cfg.digest(),
            seed: self.seed,
            rng: RNG_NAME.to_string(),
            mining_stream: MINING_STREAM,
            network_stream: NETWORK_STREAM,
            experiment: self.cfg.experiment,
            field_bits: self.cfg.field_bits,
            m_t: self.cfg.m_t,
            m_d: self.cfg.m_d,
            mining_mode: self.cfg.mining_mode,
            nodes: self.nodes.iter().map(|n| TraceNode { id: n.name.clone(), rule: n.rule, honest: n.honest }).collect(),
            max_path_delay_ms: self.cfg.max_path_delay_ms(),
        }
    }

    /// Runs to the horizon, then lets every in-flight delivery land.
    pub fn run(mut self) -> Result<RunOutput, SimError> {
        let scripted = self.cfg.experiment == Experiment::Withholding;
        let mut revealed = false;
        if scripted {
            let attacker = self.miners.iter().position(|m| !m.honest).expect("validated attacker");
            let (block, receipt) = self.create_block(attacker, BlockId::GENESIS, Some(Level::Dominant))?;
            if let Attack::Withhold { pending, .. } = &mut self.miners[attacker].attack {
                pending.push(block.id);
            }
            let node = self.miners[attacker].node;
            let poem_weight = self.nodes[node].dag.poem_weight(block.id)?;
            self.record(|seq| TraceEvent::Found {
                seq,
                time: SimTime::ZERO,
                node: node as u32,
                block,
                poem_weight,
                published: false,
                tip: receipt.tip,
            });
        }
        self.mining_open = !self.horizon_reached()?;
        if self.mining_open {
            for m in 0..self.miners.len() {
                if !(scripted && !self.miners[m].honest) {
                    self.schedule_find(m);
                }
            }
        }
        loop {
            let Some(Reverse(ev)) = self.queue.pop() else {
                if scripted && !revealed {
                    revealed = true;
                    let attacker = self.miners.iter().position(|m| !m.honest).expect("validated attacker");
                    let node = self.miners[attacker].node;
                    self.push(self.now, node, Kind::Reveal { miner: attacker });
                    continue;
                }
                break;
            };
            debug_assert!(ev.time >= self.now, "events never run backwards");
            self.now = ev.time;
            match ev.kind {
                Kind::Found { miner } => self.on_found(miner)?,
                Kind::Reveal { miner } => self.on_reveal(miner)?,
                Kind::Delivered { block, from } => self.on_delivered(ev.node, block, from)?,
            }
            if self.mining_open && self.horizon_reached()? {
                self.mining_open = false;
            }
        }
        let trace = Trace { header: self.header(), events: std::mem::take(&mut self.events) };
        let stats = measure_orphans(&trace);
        let metrics = MetricsRecord::from_run(&self.cfg, self.seed, &stats)?;
        Ok(RunOutput { metrics, stats, trace })
    }
}

/// Runs one configuration for one seed.
pub fn run(cfg: &SimConfig, seed: u64) -> Result<RunOutput, SimError> {
    Simulation::new(cfg, seed)?.run()
}

/// Scripted withholding: the attacker's dominant block on genesis is revealed
/// once the configured number of honest subordinate blocks exist.
pub fn withholding_attack(cfg: &SimConfig, seed: u64) -> Result<RunOutput, SimError> {
    let mut cfg = cfg.clone();
    cfg.experiment = Experiment::Withholding;
    run(&cfg, seed)
}
