//! Post-run measurements computed from a trace alone.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::Serialize;

use super::trace::{Delivery, Trace, TraceEvent};
use crate::chaindag::{BlockId, ForkRule, Level};
use crate::entropy::{compare_poem, ChainWeight, HashValue};
use crate::time::SimTime;

/// One same-predecessor fork, opened when the later sibling is found.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ForkStat {
    pub predecessor: BlockId,
    pub block: BlockId,
    pub created_seq: u64,
    /// First event after which every honest node reports the same tip.
    pub agreed_seq: Option<u64>,
    /// Deliveries between creation and agreement (to the end of the trace if none).
    pub persistence: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RunStats {
    pub blocks: u64,
    pub canonical: u64,
    pub orphaned: u64,
    /// Never reached the reference node (withheld blocks, mostly).
    pub in_flight: u64,
    pub orphan_rate: f64,
    pub forks: Vec<ForkStat>,
    pub mean_fork_persistence: f64,
    /// Reorg depth to count, over honest tip changes.
    pub reorg_histogram: BTreeMap<u64, u64>,
    pub max_reorg_depth: u64,
    pub reveals: u64,
    /// Reveals whose blocks all ended up canonical.
    pub successful_reveals: u64,
    /// Final tip of every node, by node index.
    pub final_tips: Vec<BlockId>,
}

impl RunStats {
    pub fn attack_success(&self) -> Option<f64> {
        (self.reveals > 0).then(|| self.successful_reveals as f64 / self.reveals as f64)
    }

    /// Whether every honest node ended on the same tip.
    pub fn honest_agreement(&self, trace: &Trace) -> bool {
        let mut tips = trace.header.nodes.iter().zip(&self.final_tips).filter(|(n, _)| n.honest).map(|(_, t)| *t);
        let first = tips.next();
        tips.all(|t| Some(t) == first)
    }
}

#[derive(Debug, Clone, Copy)]
struct FoundInfo {
    index: usize,
    time: SimTime,
    parent: BlockId,
    sub_tip_ref: Option<BlockId>,
    level: Level,
    hash: HashValue,
    poem_weight: ChainWeight,
    published: bool,
}

impl FoundInfo {
    fn predecessor(&self) -> BlockId {
        match self.level {
            Level::Dominant => self.sub_tip_ref.unwrap_or(self.parent),
            Level::Subordinate => self.parent,
        }
    }
}

struct Replay {
    found: HashMap<BlockId, FoundInfo>,
    /// Found ids in discovery order.
    order: Vec<BlockId>,
    honest: Vec<usize>,
    /// The tip every honest node shares after each event, if they agree.
    agreed: Vec<Option<BlockId>>,
    final_tips: Vec<BlockId>,
}

impl Replay {
    fn new(trace: &Trace) -> Replay {
        let honest: Vec<usize> = trace.header.nodes.iter().enumerate().filter(|(_, n)| n.honest).map(|(i, _)| i).collect();
        let mut tips = vec![BlockId::GENESIS; trace.header.nodes.len()];
        let mut found = HashMap::new();
        let mut order = Vec::new();
        let mut agreed = Vec::with_capacity(trace.events.len());
        for (index, e) in trace.events.iter().enumerate() {
            match e {
                TraceEvent::Found { time, node, block, poem_weight, published, tip, .. } => {
                    found.insert(
                        block.id,
                        FoundInfo {
                            index,
                            time: *time,
                            parent: block.parent,
                            sub_tip_ref: block.sub_tip_ref,
                            level: block.level,
                            hash: block.hash,
                            poem_weight: *poem_weight,
                            published: *published,
                        },
                    );
                    order.push(block.id);
                    tips[*node as usize] = *tip;
                }
                TraceEvent::Delivered { node, tip, .. } => tips[*node as usize] = *tip,
                TraceEvent::Reveal { .. } => {}
            }
            let first = honest.first().map(|&i| tips[i]);
            agreed.push(first.filter(|f| honest.iter().all(|&i| tips[i] == *f)));
        }
        Replay { found, order, honest, agreed, final_tips: tips }
    }

    fn closure(&self, tip: BlockId) -> HashSet<BlockId> {
        let mut seen = HashSet::from([tip]);
        let mut stack = vec![tip];
        while let Some(id) = stack.pop() {
            let Some(f) = self.found.get(&id) else { continue };
            for l in [Some(f.parent), f.sub_tip_ref].into_iter().flatten() {
                if seen.insert(l) {
                    stack.push(l);
                }
            }
        }
        seen
    }
}

/// Orphan accounting at the reference (first honest) node, fork persistence
/// and the reorg histogram.
pub fn measure_orphans(trace: &Trace) -> RunStats {
    let replay = Replay::new(trace);
    let reference = replay.honest.first().copied().unwrap_or(0);
    let blocks = replay.order.len() as u64;

    let mut known: HashSet<BlockId> = HashSet::new();
    let mut reorg_histogram = BTreeMap::new();
    let mut deliveries_before = Vec::with_capacity(trace.events.len() + 1);
    let mut deliveries = 0u64;
    for e in &trace.events {
        deliveries_before.push(deliveries);
        match e {
            TraceEvent::Found { node, block, .. } if *node as usize == reference => {
                known.insert(block.id);
            }
            TraceEvent::Delivered { node, id, delivery, reorg_depth, .. } => {
                deliveries += 1;
                if *node as usize == reference && *delivery != Delivery::Invalid {
                    known.insert(*id);
                }
                if *reorg_depth > 0 && trace.header.nodes[*node as usize].honest {
                    *reorg_histogram.entry(*reorg_depth).or_insert(0) += 1;
                }
            }
            _ => {}
        }
    }
    deliveries_before.push(deliveries);

    let final_tip = replay.final_tips.get(reference).copied().unwrap_or(BlockId::GENESIS);
    let canonical_set = replay.closure(final_tip);
    let canonical = replay.order.iter().filter(|id| canonical_set.contains(id)).count() as u64;
    let in_flight = replay.order.iter().filter(|id| !known.contains(id)).count() as u64;
    let orphaned = blocks - canonical - in_flight;

    // Agreement at or after each event index.
    let mut next_agree = vec![None; trace.events.len() + 1];
    for i in (0..trace.events.len()).rev() {
        next_agree[i] = if replay.agreed[i].is_some() { Some(i) } else { next_agree[i + 1] };
    }
    let mut siblings: HashMap<BlockId, u32> = HashMap::new();
    let mut forks = Vec::new();
    for id in &replay.order {
        let f = replay.found[id];
        let count = siblings.entry(f.predecessor()).or_insert(0);
        *count += 1;
        if *count < 2 {
            continue;
        }
        let agreed = next_agree[f.index];
        let end = agreed.map_or(trace.events.len(), |a| a + 1);
        forks.push(ForkStat {
            predecessor: f.predecessor(),
            block: *id,
            created_seq: f.index as u64,
            agreed_seq: agreed.map(|a| a as u64),
            persistence: deliveries_before[end] - deliveries_before[f.index + 1],
        });
    }
    let mean_fork_persistence = if forks.is_empty() { 0.0 } else { forks.iter().map(|f| f.persistence as f64).sum::<f64>() / forks.len() as f64 };

    let mut reveals = 0;
    let mut successful_reveals = 0;
    for e in &trace.events {
        if let TraceEvent::Reveal { ids, .. } = e {
            reveals += 1;
            if ids.iter().all(|id| canonical_set.contains(id)) {
                successful_reveals += 1;
            }
        }
    }

    RunStats {
        blocks,
        canonical,
        orphaned,
        in_flight,
        orphan_rate: if blocks == 0 { 0.0 } else { orphaned as f64 / blocks as f64 },
        forks,
        mean_fork_persistence,
        max_reorg_depth: reorg_histogram.keys().next_back().copied().unwrap_or(0),
        reorg_histogram,
        reveals,
        successful_reveals,
        final_tips: replay.final_tips,
    }
}

/// Resolution of same-predecessor block pairs under a single network-wide rule.
///
/// A pair is *isolated* when no other block was found from one worst-case
/// propagation delay before the first sibling until the moment every honest
/// node holds both. Isolated pairs get the full check; under POEM every pair
/// is also checked for a node left on the lighter sibling.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ForkResolution {
    /// The rule shared by every honest node, if there is one.
    pub rule: Option<ForkRule>,
    pub pairs: u64,
    pub isolated: u64,
    /// Pairs overlapping other discoveries or involving withheld blocks.
    pub compound: u64,
    /// Pairs some honest node never received in full.
    pub unresolved: u64,
    /// Isolated pairs at different levels, which differ in threshold weight.
    pub unequal_threshold_weight: u64,
    /// Time from the second discovery until both blocks are everywhere, per isolated pair.
    pub agreement_lags: Vec<SimTime>,
    pub violations: Vec<String>,
}

pub fn fork_resolution(trace: &Trace) -> ForkResolution {
    let replay = Replay::new(trace);
    let rules: HashSet<ForkRule> = replay.honest.iter().map(|&i| trace.header.nodes[i].rule).collect();
    let mut report = ForkResolution { rule: (rules.len() == 1).then(|| *rules.iter().next().expect("one rule")), ..Default::default() };
    let window = trace.header.max_path_delay_ms.map(SimTime::from_ms);

    // First event index at which each node holds each block.
    let mut has: Vec<HashMap<BlockId, usize>> = vec![HashMap::new(); trace.header.nodes.len()];
    for (i, e) in trace.events.iter().enumerate() {
        let (node, id) = match e {
            TraceEvent::Found { node, block, .. } => (*node, block.id),
            TraceEvent::Delivered { node, id, delivery, .. } if *delivery != Delivery::Invalid => (*node, *id),
            _ => continue,
        };
        has[node as usize].entry(id).or_insert(i);
    }
    let mut found_times: Vec<SimTime> = replay.order.iter().map(|id| replay.found[id].time).collect();
    found_times.sort();

    let mut groups: HashMap<BlockId, Vec<BlockId>> = HashMap::new();
    for id in &replay.order {
        groups.entry(replay.found[id].predecessor()).or_default().push(*id);
    }
    let mut preds: Vec<BlockId> = groups.keys().copied().collect();
    preds.sort();

    // (check index, a, b, isolated) for every pair all honest nodes received.
    let mut checks: Vec<(usize, BlockId, BlockId, bool)> = Vec::new();
    for p in preds {
        let sibs = &groups[&p];
        for (x, &a) in sibs.iter().enumerate() {
            for &b in &sibs[x + 1..] {
                report.pairs += 1;
                let (fa, fb) = (replay.found[&a], replay.found[&b]);
                let both = replay.honest.iter().map(|&n| Some(has[n].get(&a)?.max(has[n].get(&b)?)).copied()).collect::<Option<Vec<usize>>>();
                let Some(both) = both else {
                    report.unresolved += 1;
                    continue;
                };
                let s = both.into_iter().max().unwrap_or(fb.index);
                let hi = trace.events[s].time();
                let isolated = match (window, fa.published && fb.published) {
                    (Some(w), true) => {
                        let lo = SimTime(fa.time.0.saturating_sub(w.0));
                        found_times.partition_point(|t| *t <= hi) - found_times.partition_point(|t| *t < lo) == 2
                    }
                    _ => false,
                };
                if isolated {
                    report.isolated += 1;
                    report.agreement_lags.push(SimTime(hi.0 - fb.time.0));
                } else {
                    report.compound += 1;
                }
                checks.push((s, a, b, isolated));
            }
        }
    }

    // Tip snapshots at the check points, by a second replay.
    let wanted: HashSet<usize> = checks.iter().map(|c| c.0).collect();
    let mut snapshots: HashMap<usize, Vec<BlockId>> = HashMap::new();
    let mut tips = vec![BlockId::GENESIS; trace.header.nodes.len()];
    for (i, e) in trace.events.iter().enumerate() {
        match e {
            TraceEvent::Found { node, tip, .. } | TraceEvent::Delivered { node, tip, .. } => tips[*node as usize] = *tip,
            TraceEvent::Reveal { .. } => {}
        }
        if wanted.contains(&i) {
            snapshots.insert(i, replay.honest.iter().map(|&n| tips[n]).collect());
        }
    }

    for (s, a, b, isolated) in checks {
        let (fa, fb) = (replay.found[&a], replay.found[&b]);
        let at_s = &snapshots[&s];
        match report.rule {
            Some(ForkRule::Poem) => {
                let (winner, loser) = if compare_poem((fa.poem_weight, fa.hash), (fb.poem_weight, fb.hash)).is_ge() { (a, b) } else { (b, a) };
                // Holding both, no node may sit on the lighter sibling, whatever else is in flight.
                if at_s.contains(&loser) {
                    report.violations.push(format!("poem pair {a}/{b}: a node kept {loser} after receiving both"));
                }
                if isolated && at_s.iter().any(|t| *t != winner) {
                    report.violations.push(format!("poem pair {a}/{b}: tips {at_s:?} when both delivered, expected {winner}"));
                }
            }
            Some(ForkRule::Hcr) if !isolated => {}
            Some(ForkRule::Hcr) if fa.level != fb.level => report.unequal_threshold_weight += 1,
            Some(ForkRule::Hcr) => {
                let first: Vec<BlockId> = replay.honest.iter().map(|&n| if has[n][&a] < has[n][&b] { a } else { b }).collect();
                if *at_s != first {
                    report.violations.push(format!("hcr pair {a}/{b}: tips {at_s:?}, first received {first:?}"));
                }
                if let Some(t) = replay.agreed[s..].iter().flatten().next() {
                    if *t == a || *t == b {
                        report.violations.push(format!("hcr pair {a}/{b}: resolved to {t} without a later block"));
                    }
                }
            }
            _ => {}
        }
    }
    report
}
