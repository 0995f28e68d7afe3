//! Block store for a two-level merge-mined chain.
//!
//! Subordinate blocks link to their predecessor in the subordinate sequence,
//! which may itself be a dominant block (a dominant output also satisfies the
//! subordinate threshold). Dominant blocks link to the previous dominant block
//! and reference the subordinate tip they were mined on.
//!
//! A block's weight under every rule is summed over the union of everything it
//! links to, transitively, each block counted once. Weights never change after
//! insertion, so tip selection is a running maximum per rule.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet, VecDeque};
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entropy::{
    intrinsic_difficulty_weight, intrinsic_weight, meets_threshold, ChainWeight, EntropyError, FieldSpec, HashValue, HcrWeight, IntrinsicWeight,
    PoemKey, ThresholdSpec,
};
use crate::time::SimTime;

/// Orphan-pool capacity; the oldest buffered block is evicted beyond it.
pub const ORPHAN_CAPACITY: usize = 10_000;

/// Store key of a block. Distinct from its hash, which may repeat in small fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlockId(pub u64);

impl BlockId {
    pub const GENESIS: BlockId = BlockId(0);
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Dominant,
    Subordinate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ForkRule {
    /// Maximize accumulated intrinsic weight (minimize difference entropy).
    #[serde(rename = "poem")]
    Poem,
    /// Heaviest chain by threshold difficulty `2^bits`.
    #[serde(rename = "hcr")]
    Hcr,
    /// Heaviest chain by realized difficulty `2^floor(n)`.
    #[serde(rename = "hcr-intrinsic")]
    HcrIntrinsic,
}

impl ForkRule {
    pub const ALL: [ForkRule; 3] = [ForkRule::Poem, ForkRule::Hcr, ForkRule::HcrIntrinsic];

    pub fn as_str(&self) -> &'static str {
        match self {
            ForkRule::Poem => "poem",
            ForkRule::Hcr => "hcr",
            ForkRule::HcrIntrinsic => "hcr-intrinsic",
        }
    }

    fn slot(&self) -> usize {
        match self {
            ForkRule::Poem => 0,
            ForkRule::Hcr => 1,
            ForkRule::HcrIntrinsic => 2,
        }
    }
}

impl fmt::Display for ForkRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ForkRule {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "poem" => Ok(ForkRule::Poem),
            "hcr" => Ok(ForkRule::Hcr),
            "hcr-intrinsic" => Ok(ForkRule::HcrIntrinsic),
            other => Err(format!("unknown rule {other:?} (expected poem, hcr or hcr-intrinsic)")),
        }
    }
}

/// How a store checks the intrinsic weight carried by a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightPolicy {
    /// `n` must equal `intrinsic_weight(hash)`.
    Derived,
    /// `n` must equal the threshold bits of the block's level.
    Clamped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub id: BlockId,
    pub hash: HashValue,
    pub parent: BlockId,
    pub level: Level,
    pub sub_tip_ref: Option<BlockId>,
    pub miner: u32,
    /// Position along the block's own level.
    pub height: u64,
    pub found_at: SimTime,
    pub n: IntrinsicWeight,
}

impl BlockRecord {
    /// The block this one extends in the subordinate sequence.
    pub fn predecessor(&self) -> BlockId {
        match self.level {
            Level::Dominant => self.sub_tip_ref.unwrap_or(self.parent),
            Level::Subordinate => self.parent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsertOutcome {
    NewTip,
    SideBranch,
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum RuleWeight {
    Poem(ChainWeight),
    Hcr(HcrWeight),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TipView {
    pub best_tip: BlockId,
    pub rule: ForkRule,
    pub weight: RuleWeight,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChainError {
    #[error("unknown block {0}")]
    UnknownBlock(BlockId),
    #[error("block {block} buffered until {missing} arrives")]
    MissingParent { block: BlockId, missing: BlockId },
    #[error("invalid block {block}: {reason}")]
    InvalidBlock { block: BlockId, reason: String },
    #[error("block {0} conflicts with a stored record of the same id")]
    Conflict(BlockId),
    #[error(transparent)]
    Weight(#[from] EntropyError),
}

/// One line of the insertion trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InsertRecord {
    pub time: SimTime,
    pub id: BlockId,
    pub parent: BlockId,
    pub sub_tip_ref: Option<BlockId>,
    pub level: Level,
    pub n: IntrinsicWeight,
    pub poem_weight: ChainWeight,
    pub hcr_weight: HcrWeight,
    pub hcr_intrinsic_weight: HcrWeight,
    pub outcome: InsertOutcome,
}

#[derive(Debug, Clone)]
struct Stored {
    record: BlockRecord,
    poem: ChainWeight,
    hcr: HcrWeight,
    hcr_intrinsic: HcrWeight,
    /// Number of non-genesis blocks in the ancestry closure, this block included.
    chain_len: u64,
    sub_height: u64,
    dom_height: u64,
    /// Most recent dominant block in the closure (genesis counts as dominant).
    last_dominant: BlockId,
    children: u32,
}

impl Stored {
    fn links(&self) -> impl Iterator<Item = BlockId> + '_ {
        let genesis = self.record.id == BlockId::GENESIS;
        let parent = (!genesis).then_some(self.record.parent);
        let sub = self.record.sub_tip_ref.filter(|r| Some(*r) != parent);
        parent.into_iter().chain(sub)
    }
}

#[derive(Debug, Default, Clone)]
struct OrphanPool {
    records: HashMap<BlockId, BlockRecord>,
    order: VecDeque<BlockId>,
    waiting: HashMap<BlockId, Vec<BlockId>>,
}

impl OrphanPool {
    fn add(&mut self, record: BlockRecord, missing: BlockId) {
        if self.records.contains_key(&record.id) {
            return;
        }
        while self.records.len() >= ORPHAN_CAPACITY {
            let Some(oldest) = self.order.pop_front() else { break };
            self.records.remove(&oldest);
        }
        self.waiting.entry(missing).or_default().push(record.id);
        self.order.push_back(record.id);
        self.records.insert(record.id, record);
    }

    fn take_waiting_on(&mut self, id: BlockId) -> Vec<BlockRecord> {
        let ids = self.waiting.remove(&id).unwrap_or_default();
        let taken: Vec<BlockRecord> = ids.into_iter().filter_map(|i| self.records.remove(&i)).collect();
        if !taken.is_empty() {
            self.order.retain(|i| self.records.contains_key(i));
        }
        taken
    }
}

#[derive(Debug, Clone)]
pub struct ChainDag {
    field: FieldSpec,
    thresholds: ThresholdSpec,
    policy: WeightPolicy,
    active: ForkRule,
    blocks: Vec<Stored>,
    index: HashMap<BlockId, usize>,
    tips: [usize; 3],
    orphans: OrphanPool,
    clock: SimTime,
    log: Vec<InsertRecord>,
}

impl ChainDag {
    pub fn new(field: FieldSpec, thresholds: ThresholdSpec, policy: WeightPolicy, active: ForkRule) -> Self {
        let genesis = BlockRecord {
            id: BlockId::GENESIS,
            hash: HashValue::ZERO,
            parent: BlockId::GENESIS,
            level: Level::Dominant,
            sub_tip_ref: None,
            miner: u32::MAX,
            height: 0,
            found_at: SimTime::ZERO,
            n: IntrinsicWeight::ZERO,
        };
        let stored = Stored {
            record: genesis,
            poem: ChainWeight::ZERO,
            hcr: HcrWeight::zero(),
            hcr_intrinsic: HcrWeight::zero(),
            chain_len: 0,
            sub_height: 0,
            dom_height: 0,
            last_dominant: BlockId::GENESIS,
            children: 0,
        };
        ChainDag {
            field,
            thresholds,
            policy,
            active,
            blocks: vec![stored],
            index: HashMap::from([(BlockId::GENESIS, 0)]),
            tips: [0; 3],
            orphans: OrphanPool::default(),
            clock: SimTime::ZERO,
            log: Vec::new(),
        }
    }

    pub fn field(&self) -> FieldSpec {
        self.field
    }

    pub fn thresholds(&self) -> ThresholdSpec {
        self.thresholds
    }

    pub fn active_rule(&self) -> ForkRule {
        self.active
    }

    /// Time stamped on subsequent insertion records.
    pub fn set_clock(&mut self, now: SimTime) {
        self.clock = now;
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, id: BlockId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn is_buffered(&self, id: BlockId) -> bool {
        self.orphans.records.contains_key(&id)
    }

    pub fn orphan_count(&self) -> usize {
        self.orphans.records.len()
    }

    pub fn get(&self, id: BlockId) -> Option<&BlockRecord> {
        self.index.get(&id).map(|&i| &self.blocks[i].record)
    }

    pub fn records(&self) -> impl Iterator<Item = &BlockRecord> {
        self.blocks.iter().map(|s| &s.record)
    }

    pub fn insert_log(&self) -> &[InsertRecord] {
        &self.log
    }

    fn slot(&self, id: BlockId) -> Result<usize, ChainError> {
        self.index.get(&id).copied().ok_or(ChainError::UnknownBlock(id))
    }

    /// Height a new block of `level` would get on top of `parent`.
    pub fn next_height(&self, level: Level, parent: BlockId) -> Result<u64, ChainError> {
        let p = &self.blocks[self.slot(parent)?];
        Ok(match level {
            Level::Subordinate => p.sub_height + 1,
            Level::Dominant => p.dom_height + 1,
        })
    }

    /// Most recent dominant block in the ancestry of `id`, itself included.
    pub fn last_dominant(&self, id: BlockId) -> Result<BlockId, ChainError> {
        Ok(self.blocks[self.slot(id)?].last_dominant)
    }

    /// Number of non-genesis blocks in the ancestry of `id`, itself included.
    pub fn chain_len(&self, id: BlockId) -> Result<u64, ChainError> {
        Ok(self.blocks[self.slot(id)?].chain_len)
    }

    /// Links for a new block mined on top of `tip`: `(parent, sub_tip_ref)`.
    pub fn links_for(&self, level: Level, tip: BlockId) -> Result<(BlockId, Option<BlockId>), ChainError> {
        match level {
            Level::Subordinate => {
                self.slot(tip)?;
                Ok((tip, None))
            }
            Level::Dominant => Ok((self.last_dominant(tip)?, Some(tip))),
        }
    }

    fn level_bits(&self, level: Level) -> u32 {
        match level {
            Level::Subordinate => self.thresholds.m_t(),
            Level::Dominant => self.thresholds.dominant_bits(),
        }
    }

    fn validate(&self, b: &BlockRecord) -> Result<(), ChainError> {
        let invalid = |reason: String| ChainError::InvalidBlock { block: b.id, reason };
        if b.id == BlockId::GENESIS {
            return Err(invalid("the genesis id is reserved".into()));
        }
        if b.parent == b.id || b.sub_tip_ref == Some(b.id) {
            return Err(invalid("block links to itself".into()));
        }
        let bits = self.level_bits(b.level);
        if !b.hash.below_pow2(self.field.bits()) {
            return Err(invalid(format!("hash exceeds the {}-bit field", self.field.bits())));
        }
        if !meets_threshold(&b.hash, bits, self.field) {
            return Err(invalid(format!("hash does not meet the {bits}-bit {:?} threshold", b.level)));
        }
        match (b.level, b.sub_tip_ref) {
            (Level::Dominant, None) => return Err(invalid("dominant block without a subordinate tip".into())),
            (Level::Subordinate, Some(_)) => return Err(invalid("subordinate block with a subordinate tip".into())),
            _ => {}
        }
        let expected = match self.policy {
            WeightPolicy::Derived => intrinsic_weight(&b.hash, self.field)?,
            WeightPolicy::Clamped => IntrinsicWeight::from_bits(bits),
        };
        if b.n != expected {
            return Err(invalid(format!("intrinsic weight {} differs from expected {expected}", b.n)));
        }
        Ok(())
    }

    /// Inserts a block, buffering it when a linked block is still unknown.
    ///
    /// Buffered blocks are inserted automatically once their links arrive; their
    /// outcomes appear in [`ChainDag::insert_log`].
    pub fn insert_block(&mut self, b: BlockRecord) -> Result<InsertOutcome, ChainError> {
        if let Some(&i) = self.index.get(&b.id) {
            return if self.blocks[i].record == b { Ok(InsertOutcome::Duplicate) } else { Err(ChainError::Conflict(b.id)) };
        }
        self.validate(&b)?;
        if let Some(missing) = [Some(b.parent), b.sub_tip_ref].into_iter().flatten().find(|l| !self.contains(*l)) {
            let block = b.id;
            self.orphans.add(b, missing);
            return Err(ChainError::MissingParent { block, missing });
        }
        let id = b.id;
        let outcome = self.attach(b)?;
        let mut ready: VecDeque<BlockRecord> = self.orphans.take_waiting_on(id).into();
        while let Some(next) = ready.pop_front() {
            if let Some(missing) = [Some(next.parent), next.sub_tip_ref].into_iter().flatten().find(|l| !self.contains(*l)) {
                self.orphans.add(next, missing);
                continue;
            }
            let nid = next.id;
            // Buffered blocks were validated on arrival; a failure here means a conflicting id.
            if self.attach(next).is_ok() {
                ready.extend(self.orphans.take_waiting_on(nid));
            }
        }
        Ok(outcome)
    }

    fn attach(&mut self, b: BlockRecord) -> Result<InsertOutcome, ChainError> {
        let invalid = |reason: String| ChainError::InvalidBlock { block: b.id, reason };
        let p = self.slot(b.parent)?;
        let own_hcr = HcrWeight::block(self.level_bits(b.level));
        let own_int = intrinsic_difficulty_weight(b.n);
        let (poem, hcr, hcr_intrinsic, chain_len, sub_height, dom_height, last_dominant) = match b.level {
            Level::Subordinate => {
                let ps = &self.blocks[p];
                if b.height != ps.sub_height + 1 {
                    return Err(invalid(format!("height {} != parent height {} + 1", b.height, ps.sub_height)));
                }
                let last = if ps.record.level == Level::Dominant { ps.record.id } else { ps.last_dominant };
                (
                    ps.poem.checked_add(b.n)?,
                    &ps.hcr + &own_hcr,
                    &ps.hcr_intrinsic + &own_int,
                    ps.chain_len + 1,
                    ps.sub_height + 1,
                    ps.dom_height,
                    last,
                )
            }
            Level::Dominant => {
                let r = self.slot(b.sub_tip_ref.expect("validated"))?;
                let (ps, rs) = (&self.blocks[p], &self.blocks[r]);
                if ps.record.level != Level::Dominant {
                    return Err(invalid("dominant parent must be a dominant block".into()));
                }
                if b.height != ps.dom_height + 1 {
                    return Err(invalid(format!("height {} != parent height {} + 1", b.height, ps.dom_height)));
                }
                // Whatever the parent brings that the referenced tip does not already cover.
                let extra = self.closure_difference(p, r);
                let mut poem = rs.poem.checked_add(b.n)?;
                let mut hcr = &rs.hcr + &own_hcr;
                let mut hcr_intrinsic = &rs.hcr_intrinsic + &own_int;
                for &x in &extra {
                    let xs = &self.blocks[x];
                    poem = poem.checked_add(xs.record.n)?;
                    hcr = &hcr + &HcrWeight::block(self.level_bits(xs.record.level));
                    hcr_intrinsic = &hcr_intrinsic + &intrinsic_difficulty_weight(xs.record.n);
                }
                (poem, hcr, hcr_intrinsic, rs.chain_len + 1 + extra.len() as u64, rs.sub_height + 1, ps.dom_height + 1, b.id)
            }
        };

        let slot = self.blocks.len();
        let id = b.id;
        let links: Vec<BlockId> = [Some(b.parent), b.sub_tip_ref.filter(|r| *r != b.parent)].into_iter().flatten().collect();
        self.blocks.push(Stored { record: b, poem, hcr, hcr_intrinsic, chain_len, sub_height, dom_height, last_dominant, children: 0 });
        self.index.insert(id, slot);
        for l in links {
            let i = self.index[&l];
            self.blocks[i].children += 1;
        }

        let mut outcome = InsertOutcome::SideBranch;
        for rule in ForkRule::ALL {
            let current = self.tips[rule.slot()];
            if self.prefer(rule, slot, current) == Ordering::Greater {
                self.tips[rule.slot()] = slot;
                if rule == self.active {
                    outcome = InsertOutcome::NewTip;
                }
            }
        }

        let s = &self.blocks[slot];
        self.log.push(InsertRecord {
            time: self.clock,
            id,
            parent: s.record.parent,
            sub_tip_ref: s.record.sub_tip_ref,
            level: s.record.level,
            n: s.record.n,
            poem_weight: s.poem,
            hcr_weight: s.hcr.clone(),
            hcr_intrinsic_weight: s.hcr_intrinsic.clone(),
            outcome,
        });
        Ok(outcome)
    }

    /// Rule preference between two stored blocks; `Equal` keeps the incumbent.
    fn prefer(&self, rule: ForkRule, a: usize, b: usize) -> Ordering {
        let (x, y) = (&self.blocks[a], &self.blocks[b]);
        match rule {
            ForkRule::Poem => PoemKey { weight: x.poem, tip: x.record.hash }.cmp(&PoemKey { weight: y.poem, tip: y.record.hash }),
            ForkRule::Hcr => x.hcr.cmp(&y.hcr),
            ForkRule::HcrIntrinsic => x.hcr_intrinsic.cmp(&y.hcr_intrinsic),
        }
    }

    /// Preference between two stored blocks under `rule` (`Greater` favors `a`).
    pub fn compare(&self, rule: ForkRule, a: BlockId, b: BlockId) -> Result<Ordering, ChainError> {
        Ok(self.prefer(rule, self.slot(a)?, self.slot(b)?))
    }

    pub fn best_tip(&self, rule: ForkRule) -> TipView {
        let s = &self.blocks[self.tips[rule.slot()]];
        TipView { best_tip: s.record.id, rule, weight: self.rule_weight(s, rule) }
    }

    fn rule_weight(&self, s: &Stored, rule: ForkRule) -> RuleWeight {
        match rule {
            ForkRule::Poem => RuleWeight::Poem(s.poem),
            ForkRule::Hcr => RuleWeight::Hcr(s.hcr.clone()),
            ForkRule::HcrIntrinsic => RuleWeight::Hcr(s.hcr_intrinsic.clone()),
        }
    }

    pub fn weight_of(&self, id: BlockId, rule: ForkRule) -> Result<RuleWeight, ChainError> {
        Ok(self.rule_weight(&self.blocks[self.slot(id)?], rule))
    }

    pub fn poem_weight(&self, id: BlockId) -> Result<ChainWeight, ChainError> {
        Ok(self.blocks[self.slot(id)?].poem)
    }

    /// Blocks with no stored successor.
    pub fn leaves(&self) -> impl Iterator<Item = BlockId> + '_ {
        self.blocks.iter().filter(|s| s.children == 0).map(|s| s.record.id)
    }

    /// Blocks on the `old_tip` side of the fork that `new_tip` does not contain.
    ///
    /// Zero when `new_tip` extends `old_tip`.
    pub fn reorg_depth(&self, old_tip: BlockId, new_tip: BlockId) -> Result<u64, ChainError> {
        let (a, b) = (self.slot(old_tip)?, self.slot(new_tip)?);
        Ok(self.closure_difference(a, b).len() as u64)
    }

    /// Whether `ancestor` is in the ancestry closure of `id` (a block is its own ancestor).
    pub fn is_ancestor(&self, ancestor: BlockId, id: BlockId) -> Result<bool, ChainError> {
        let (a, b) = (self.slot(ancestor)?, self.slot(id)?);
        Ok(self.closure_difference(a, b).is_empty())
    }

    /// Ids in the ancestry closure of `id`, genesis included.
    pub fn ancestry(&self, id: BlockId) -> Result<HashSet<BlockId>, ChainError> {
        let start = self.slot(id)?;
        let mut seen = HashSet::from([self.blocks[start].record.id]);
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            for l in self.blocks[i].links() {
                if seen.insert(l) {
                    stack.push(self.index[&l]);
                }
            }
        }
        Ok(seen)
    }

    /// `closure(a) \ closure(b)` by painting both closures downward in
    /// decreasing `chain_len` order. A block is final when popped because all
    /// of its successors have larger `chain_len`.
    fn closure_difference(&self, a: usize, b: usize) -> Vec<usize> {
        const A: u8 = 1;
        const B: u8 = 2;
        if a == b {
            return Vec::new();
        }
        let mut flags: HashMap<usize, u8> = HashMap::from([(a, A), (b, B)]);
        let mut heap: BinaryHeap<(u64, usize)> = BinaryHeap::from([(self.blocks[a].chain_len, a), (self.blocks[b].chain_len, b)]);
        let mut a_only = 1usize;
        let mut out = Vec::new();
        while a_only > 0 {
            let Some((_, x)) = heap.pop() else { break };
            let fx = flags[&x];
            if fx == A {
                a_only -= 1;
                out.push(x);
            }
            for l in self.blocks[x].links() {
                let y = self.index[&l];
                match flags.get_mut(&y) {
                    None => {
                        flags.insert(y, fx);
                        heap.push((self.blocks[y].chain_len, y));
                        if fx == A {
                            a_only += 1;
                        }
                    }
                    Some(fy) => {
                        let merged = *fy | fx;
                        if *fy == A && merged != A {
                            a_only -= 1;
                        }
                        *fy = merged;
                    }
                }
            }
        }
        out
    }

    /// Writes the insertion log as JSON Lines.
    pub fn write_trace<W: Write>(&self, mut w: W) -> io::Result<()> {
        for rec in &self.log {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clamped(m_t: u32, m_d: u32) -> ChainDag {
        let field = FieldSpec::new(256).unwrap();
        ChainDag::new(field, ThresholdSpec::new(m_t, m_d, field).unwrap(), WeightPolicy::Clamped, ForkRule::Poem)
    }

    fn sub(dag: &ChainDag, id: u64, parent: u64, hash: u64) -> BlockRecord {
        let parent = BlockId(parent);
        BlockRecord {
            id: BlockId(id),
            hash: HashValue::from_u64(hash),
            parent,
            level: Level::Subordinate,
            sub_tip_ref: None,
            miner: 0,
            height: dag.next_height(Level::Subordinate, parent).unwrap(),
            found_at: SimTime::ZERO,
            n: IntrinsicWeight::from_bits(dag.thresholds().m_t()),
        }
    }

    fn dom(dag: &ChainDag, id: u64, parent: u64, sub_ref: u64, hash: u64) -> BlockRecord {
        let parent = BlockId(parent);
        BlockRecord {
            id: BlockId(id),
            hash: HashValue::from_u64(hash),
            parent,
            level: Level::Dominant,
            sub_tip_ref: Some(BlockId(sub_ref)),
            miner: 1,
            height: dag.next_height(Level::Dominant, parent).unwrap(),
            found_at: SimTime::ZERO,
            n: IntrinsicWeight::from_bits(dag.thresholds().dominant_bits()),
        }
    }

    #[test]
    fn genesis_only() {
        let dag = clamped(20, 5);
        assert_eq!(dag.best_tip(ForkRule::Poem).best_tip, BlockId::GENESIS);
        assert_eq!(dag.weight_of(BlockId::GENESIS, ForkRule::Poem).unwrap(), RuleWeight::Poem(ChainWeight::ZERO));
    }

    #[test]
    fn first_child_becomes_tip_and_sibling_side_branch() {
        let mut dag = clamped(20, 5);
        let a = sub(&dag, 1, 0, 7);
        assert_eq!(dag.insert_block(a.clone()).unwrap(), InsertOutcome::NewTip);
        assert_eq!(dag.insert_block(a).unwrap(), InsertOutcome::Duplicate);
        // Same clamped weight, larger hash: loses the tie-break.
        assert_eq!(dag.insert_block(sub(&dag, 2, 0, 9)).unwrap(), InsertOutcome::SideBranch);
        // Same weight, smaller hash: wins it.
        assert_eq!(dag.insert_block(sub(&dag, 3, 0, 5)).unwrap(), InsertOutcome::NewTip);
        assert_eq!(dag.best_tip(ForkRule::Hcr).best_tip, BlockId(1));
    }

    #[test]
    fn conflicting_record_rejected() {
        let mut dag = clamped(20, 5);
        dag.insert_block(sub(&dag, 1, 0, 7)).unwrap();
        let other = sub(&dag, 1, 0, 8);
        assert_eq!(dag.insert_block(other), Err(ChainError::Conflict(BlockId(1))));
    }

    #[test]
    fn threshold_violation_rejected() {
        let mut dag = clamped(20, 5);
        let mut b = sub(&dag, 1, 0, 7);
        b.hash = HashValue::pow2(236);
        assert!(matches!(dag.insert_block(b), Err(ChainError::InvalidBlock { .. })));
        let mut d = dom(&dag, 2, 0, 0, 7);
        d.hash = HashValue::pow2(231);
        assert!(matches!(dag.insert_block(d), Err(ChainError::InvalidBlock { .. })));
    }

    #[test]
    fn clamped_weight_enforced() {
        let mut dag = clamped(20, 5);
        let mut b = sub(&dag, 1, 0, 7);
        b.n = IntrinsicWeight::from_bits(21);
        assert!(matches!(dag.insert_block(b), Err(ChainError::InvalidBlock { .. })));
    }

    #[test]
    fn derived_weight_enforced() {
        let field = FieldSpec::new(16).unwrap();
        let mut dag = ChainDag::new(field, ThresholdSpec::new(4, 2, field).unwrap(), WeightPolicy::Derived, ForkRule::Poem);
        let hash = HashValue::from_u64(1000);
        let mut b = BlockRecord {
            id: BlockId(1),
            hash,
            parent: BlockId::GENESIS,
            level: Level::Subordinate,
            sub_tip_ref: None,
            miner: 0,
            height: 1,
            found_at: SimTime::ZERO,
            n: IntrinsicWeight::from_bits(4),
        };
        assert!(dag.insert_block(b.clone()).is_err());
        b.n = intrinsic_weight(&hash, field).unwrap();
        assert_eq!(dag.insert_block(b).unwrap(), InsertOutcome::NewTip);
    }

    #[test]
    fn orphans_are_buffered_then_adopted() {
        let mut dag = clamped(20, 5);
        let b1 = sub(&dag, 1, 0, 7);
        let mut b2 = sub(&dag, 2, 0, 8);
        b2.parent = BlockId(1);
        b2.height = 2;
        let err = dag.insert_block(b2.clone()).unwrap_err();
        assert_eq!(err, ChainError::MissingParent { block: BlockId(2), missing: BlockId(1) });
        assert!(dag.is_buffered(BlockId(2)));
        dag.insert_block(b1).unwrap();
        assert!(dag.contains(BlockId(2)));
        assert_eq!(dag.orphan_count(), 0);
        assert_eq!(dag.best_tip(ForkRule::Poem).best_tip, BlockId(2));
        assert_eq!(dag.insert_log().len(), 2);
    }

    #[test]
    fn orphan_pool_evicts_oldest() {
        let mut dag = clamped(20, 5);
        for i in 0..(ORPHAN_CAPACITY as u64 + 5) {
            let mut b = sub(&dag, 100 + i, 0, 7);
            b.parent = BlockId(50);
            b.height = 2;
            let _ = dag.insert_block(b);
        }
        assert_eq!(dag.orphan_count(), ORPHAN_CAPACITY);
        assert!(!dag.is_buffered(BlockId(100)));
        assert!(dag.is_buffered(BlockId(105)));
    }

    #[test]
    fn reorg_depths() {
        let mut dag = clamped(20, 5);
        dag.insert_block(sub(&dag, 1, 0, 7)).unwrap();
        dag.insert_block(sub(&dag, 2, 1, 7)).unwrap();
        dag.insert_block(sub(&dag, 3, 1, 6)).unwrap();
        assert_eq!(dag.reorg_depth(BlockId(1), BlockId(2)).unwrap(), 0);
        assert_eq!(dag.reorg_depth(BlockId(2), BlockId(3)).unwrap(), 1);
        assert!(dag.reorg_depth(BlockId(2), BlockId(99)).is_err());
        // A dominant block on genesis displacing the two-block honest chain.
        dag.insert_block(dom(&dag, 4, 0, 0, 1)).unwrap();
        assert_eq!(dag.reorg_depth(BlockId(3), BlockId(4)).unwrap(), 2);
    }

    #[test]
    fn dominant_weight_counts_shared_blocks_once() {
        let mut dag = clamped(4, 2);
        // Sub chain 1 <- 2, dominant 3 on 2, sub 4 on dominant 3.
        dag.insert_block(sub(&dag, 1, 0, 7)).unwrap();
        dag.insert_block(sub(&dag, 2, 1, 7)).unwrap();
        dag.insert_block(dom(&dag, 3, 0, 2, 7)).unwrap();
        dag.insert_block(sub(&dag, 4, 3, 7)).unwrap();
        // Sibling sub chain off block 1, then a dominant block whose parent (3)
        // and subordinate reference (5) overlap in blocks 1 and genesis.
        dag.insert_block(sub(&dag, 5, 1, 7)).unwrap();
        dag.insert_block(dom(&dag, 6, 3, 5, 7)).unwrap();
        // closure(6) = {6, 3, 2, 1, 5}: 4 + 4 + 4 + 6 + 6
        assert_eq!(dag.poem_weight(BlockId(6)).unwrap(), ChainWeight::from_parts(24, 0).unwrap());
        assert_eq!(dag.chain_len(BlockId(6)).unwrap(), 5);
        let hcr = (&(&HcrWeight::block(4) + &HcrWeight::block(4)) + &HcrWeight::block(4)).add_block(6).add_block(6);
        assert_eq!(dag.weight_of(BlockId(6), ForkRule::Hcr).unwrap(), RuleWeight::Hcr(hcr));
    }

    trait AddBlock {
        fn add_block(&self, bits: u32) -> HcrWeight;
    }
    impl AddBlock for HcrWeight {
        fn add_block(&self, bits: u32) -> HcrWeight {
            self + &HcrWeight::block(bits)
        }
    }

    #[test]
    fn trace_lines_are_stable() {
        let mut dag = clamped(20, 5);
        dag.set_clock(SimTime(1500));
        dag.insert_block(sub(&dag, 1, 0, 7)).unwrap();
        let mut buf = Vec::new();
        dag.write_trace(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "{\"time\":1500,\"id\":1,\"parent\":0,\"sub_tip_ref\":null,\"level\":\"subordinate\",\"n\":\"20\",\
             \"poem_weight\":\"20\",\"hcr_weight\":\"1048576\",\"hcr_intrinsic_weight\":\"1048576\",\"outcome\":\"new_tip\"}\n"
        );
    }
}
