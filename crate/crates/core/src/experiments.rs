//! Named experiments: overtake contrast, withholding sweep, latency forks, tie rate.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::Serialize;

use crate::chaindag::{BlockId, BlockRecord, ChainDag, ForkRule, Level, WeightPolicy};
use crate::config::{DelayModel, Experiment, LinkSpec, NodeSpec, OutputSpec, SeedSpec, SimConfig};
use crate::entropy::{
    field_tie_probability, overtake_bound_difficulty, overtake_bound_entropy, overtake_bound_entropy_checked, tie_probability, FieldSpec, HashValue,
    IntrinsicWeight, ThresholdSpec,
};
use crate::minesim::{sample_block_hash, sim_rng, MinerSpec, MiningMode, Strategy, MINING_STREAM};
use crate::netsim::{self, fork_resolution, ForkResolution, MetricsRecord, SimError};
use crate::time::SimTime;

/// Branch lengths at which subordinate blocks tie and first beat one dominant block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OvertakeRow {
    pub rule: ForkRule,
    /// Length at which the subordinate branch weighs exactly as much, if any.
    pub tie_at: Option<u64>,
    pub first_exceeds_at: u64,
    /// The closed-form minimum for the same thresholds.
    pub analytic_min_blocks: u64,
}

/// Clamped weights: one dominant block on genesis against a growing
/// subordinate branch, compared in a block store.
pub fn overtake(field: FieldSpec, t: ThresholdSpec, max_k: u64) -> Vec<OvertakeRow> {
    let mut dag = ChainDag::new(field, t, WeightPolicy::Clamped, ForkRule::Poem);
    let hash_at = |bits: u32| HashValue::pow2(field.bits() - bits - 1);
    let dominant = BlockRecord {
        id: BlockId(1),
        hash: hash_at(t.dominant_bits()),
        parent: BlockId::GENESIS,
        level: Level::Dominant,
        sub_tip_ref: Some(BlockId::GENESIS),
        miner: 0,
        height: 1,
        found_at: SimTime::ZERO,
        n: IntrinsicWeight::from_bits(t.dominant_bits()),
    };
    dag.insert_block(dominant).expect("valid dominant block");
    let mut tie_at = [None; 3];
    let mut exceeds = [None; 3];
    let mut tip = BlockId::GENESIS;
    for k in 1..=max_k {
        let id = BlockId(k + 1);
        let block = BlockRecord {
            id,
            hash: hash_at(t.m_t()),
            parent: tip,
            level: Level::Subordinate,
            sub_tip_ref: None,
            miner: 1,
            height: k,
            found_at: SimTime(k),
            n: IntrinsicWeight::from_bits(t.m_t()),
        };
        dag.insert_block(block).expect("valid subordinate block");
        tip = id;
        for (i, rule) in ForkRule::ALL.into_iter().enumerate() {
            // Weights only: hashes differ by construction, so compare the rule weight itself.
            let ord = weight_order(&dag, rule, tip, BlockId(1));
            if ord == Ordering::Equal && tie_at[i].is_none() {
                tie_at[i] = Some(k);
            }
            if ord == Ordering::Greater && exceeds[i].is_none() {
                exceeds[i] = Some(k);
            }
        }
        if exceeds.iter().all(Option::is_some) {
            break;
        }
    }
    let hcr_min: u64 = overtake_bound_difficulty(t).min_blocks.try_into().unwrap_or(u64::MAX);
    ForkRule::ALL
        .into_iter()
        .enumerate()
        .map(|(i, rule)| OvertakeRow {
            rule,
            tie_at: tie_at[i],
            first_exceeds_at: exceeds[i].unwrap_or(u64::MAX),
            analytic_min_blocks: match rule {
                ForkRule::Poem => overtake_bound_entropy(t, 0).min_blocks,
                _ => hcr_min,
            },
        })
        .collect()
}

fn weight_order(dag: &ChainDag, rule: ForkRule, a: BlockId, b: BlockId) -> Ordering {
    use crate::chaindag::RuleWeight;
    match (dag.weight_of(a, rule).expect("stored"), dag.weight_of(b, rule).expect("stored")) {
        (RuleWeight::Poem(x), RuleWeight::Poem(y)) => x.cmp(&y),
        (RuleWeight::Hcr(x), RuleWeight::Hcr(y)) => x.cmp(&y),
        _ => unreachable!("one rule, one weight kind"),
    }
}

/// Finalization bounds for every valid `(m_t, m_d, extra)` with `m_t + m_d + extra < l`.
/// Returns the smallest and largest minimum branch length seen and the triple count.
pub fn entropy_bound_range(field: FieldSpec) -> (u64, u64, u64) {
    let l = field.bits();
    let mut lo = u64::MAX;
    let mut hi = 0;
    let mut count = 0;
    for m_t in 1..l {
        for m_d in 0..l - m_t {
            let t = ThresholdSpec::new(m_t, m_d, field).expect("valid by construction");
            for extra in 0..l - m_t - m_d {
                let k = overtake_bound_entropy_checked(t, extra, field).expect("below the field width").min_blocks;
                lo = lo.min(k);
                hi = hi.max(k);
                count += 1;
            }
        }
    }
    (lo, hi, count)
}

/// Two nodes, one miner each, a fixed link delay.
pub fn two_miner_config(rule: ForkRule, mode: MiningMode, field_bits: u32, m_t: u32, m_d: u32, delay_ms: f64, horizon: u64) -> SimConfig {
    SimConfig {
        field_bits,
        m_t,
        m_d,
        rule,
        mining_mode: mode,
        experiment: Experiment::Network,
        mean_block_interval_ms: 1000.0,
        miners: vec![
            MinerSpec { id: "a".into(), hashrate_fraction: 0.5, strategy: Strategy::Honest },
            MinerSpec { id: "b".into(), hashrate_fraction: 0.5, strategy: Strategy::Honest },
        ],
        nodes: vec![
            NodeSpec { id: "n0".into(), miners: vec!["a".into()], rule: None },
            NodeSpec { id: "n1".into(), miners: vec!["b".into()], rule: None },
        ],
        links: vec![LinkSpec { from: "n0".into(), to: "n1".into(), delay: DelayModel::Fixed { delay_ms }, bidirectional: true }],
        horizon_blocks: horizon,
        seeds: SeedSpec::Single(1),
        output: OutputSpec::default(),
    }
}

/// One honest miner against one withholding miner on a second node.
pub fn withholding_config(rule: ForkRule, mode: MiningMode, field_bits: u32, m_t: u32, m_d: u32, reveal_after: u32) -> SimConfig {
    let mut cfg = two_miner_config(rule, mode, field_bits, m_t, m_d, 100.0, 1);
    cfg.experiment = Experiment::Withholding;
    cfg.miners[0].hashrate_fraction = 0.7;
    cfg.miners[1].hashrate_fraction = 0.3;
    cfg.miners[1].strategy = Strategy::WithholdDominant { reveal_after };
    cfg
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub rule: ForkRule,
    pub reveal_after: u32,
    pub success: bool,
    pub reorg_depth: u64,
}

/// Scripted withholding for every reveal point in `reveal_after`, per rule.
pub fn withholding_sweep(
    rules: &[ForkRule],
    mode: MiningMode,
    field_bits: u32,
    m_t: u32,
    m_d: u32,
    reveal_after: std::ops::RangeInclusive<u32>,
    seed: u64,
) -> Result<Vec<SweepRow>, SimError> {
    let jobs: Vec<(ForkRule, u32)> = rules.iter().flat_map(|r| reveal_after.clone().map(move |j| (*r, j))).collect();
    jobs.into_par_iter()
        .map(|(rule, j)| {
            let out = netsim::withholding_attack(&withholding_config(rule, mode, field_bits, m_t, m_d, j), seed)?;
            Ok(SweepRow { rule, reveal_after: j, success: out.stats.attack_success() == Some(1.0), reorg_depth: out.stats.max_reorg_depth })
        })
        .collect()
}

/// Fork-resolution summary over many seeded runs of one rule.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LatencyForkSummary {
    pub rule: Option<ForkRule>,
    pub runs: u64,
    pub pairs: u64,
    pub isolated: u64,
    pub compound: u64,
    pub unresolved: u64,
    pub unequal_threshold_weight: u64,
    /// Agreement lags outside `[0, delay]`, plus any mismatch with the link delay.
    pub lag_min_ms: f64,
    pub lag_max_ms: f64,
    pub mean_orphan_rate: f64,
    pub mean_fork_persistence: f64,
    pub violations: Vec<String>,
}

/// Two-miner runs, one per seed; every run's forks checked against the rule's contract.
pub fn latency_forks(rule: ForkRule, seeds: &[u64], delay_ms: f64, horizon: u64) -> Result<LatencyForkSummary, SimError> {
    let cfg = two_miner_config(rule, MiningMode::Sampled, 256, 20, 5, delay_ms, horizon);
    let runs: Vec<(ForkResolution, MetricsRecord)> =
        seeds.par_iter().map(|&s| netsim::run(&cfg, s).map(|o| (fork_resolution(&o.trace), o.metrics))).collect::<Result<_, _>>()?;
    let mut sum = LatencyForkSummary { rule: Some(rule), runs: runs.len() as u64, lag_min_ms: f64::INFINITY, ..Default::default() };
    for ((r, m), seed) in runs.iter().zip(seeds) {
        sum.pairs += r.pairs;
        sum.isolated += r.isolated;
        sum.compound += r.compound;
        sum.unresolved += r.unresolved;
        sum.unequal_threshold_weight += r.unequal_threshold_weight;
        for lag in &r.agreement_lags {
            sum.lag_min_ms = sum.lag_min_ms.min(lag.as_ms());
            sum.lag_max_ms = sum.lag_max_ms.max(lag.as_ms());
            if rule == ForkRule::Poem && *lag != SimTime::from_ms(delay_ms) {
                sum.violations.push(format!("seed {seed}: agreement lag {lag} differs from the link delay"));
            }
        }
        sum.violations.extend(r.violations.iter().map(|v| format!("seed {seed}: {v}")));
        sum.mean_orphan_rate += m.orphan_rate / runs.len() as f64;
        sum.mean_fork_persistence += m.mean_fork_persistence / runs.len() as f64;
    }
    if sum.lag_min_ms.is_infinite() {
        sum.lag_min_ms = 0.0;
    }
    Ok(sum)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TieRate {
    pub field_bits: u32,
    pub m_t: u32,
    pub pairs: u64,
    pub ties: u64,
    pub empirical: f64,
    /// Same-hash probability with hashes uniform below the threshold.
    pub expected: f64,
    pub sigma: f64,
    pub z: f64,
    /// The whole-field figure, for comparison.
    pub field_figure: f64,
}

impl TieRate {
    pub fn within(&self, sigmas: f64) -> bool {
        self.z.abs() <= sigmas
    }
}

/// Monte Carlo over same-parent pairs: a tie that no rule can break is two identical hashes.
pub fn tie_rate(field: FieldSpec, m_t: u32, pairs: u64, seed: u64) -> Result<TieRate, crate::entropy::EntropyError> {
    let expected = tie_probability(field, m_t)?;
    let mut rng = sim_rng(seed, MINING_STREAM);
    let ties = (0..pairs).filter(|_| sample_block_hash(&mut rng, field, m_t) == sample_block_hash(&mut rng, field, m_t)).count() as u64;
    let n = pairs as f64;
    let sigma = (expected * (1.0 - expected) / n).sqrt();
    let empirical = ties as f64 / n;
    Ok(TieRate {
        field_bits: field.bits(),
        m_t,
        pairs,
        ties,
        empirical,
        expected,
        sigma,
        z: (empirical - expected) / sigma,
        field_figure: field_tie_probability(field),
    })
}

/// One line of the suite report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Criterion {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Default seed count for the latency-fork comparison.
pub const SUITE_SEEDS: u64 = 100;

/// The overtake contrast, bound range, latency forks, tie rate and withholding sweep.
pub fn suite(seeds: &[u64]) -> Result<Vec<Criterion>, SimError> {
    let field = FieldSpec::new(256).expect("valid width");
    let t = ThresholdSpec::new(20, 5, field).expect("valid thresholds");
    let mut out = Vec::new();

    let rows = overtake(field, t, 64);
    let hcr = rows.iter().find(|r| r.rule == ForkRule::Hcr).expect("hcr row");
    let poem = rows.iter().find(|r| r.rule == ForkRule::Poem).expect("poem row");
    out.push(Criterion {
        name: "overtake contrast",
        passed: hcr.tie_at == Some(32) && hcr.first_exceeds_at == 33 && poem.first_exceeds_at == 2 && poem.tie_at.is_none(),
        detail: format!(
            "hcr tie {:?} exceeds {} (analytic {}); poem exceeds {} (analytic {})",
            hcr.tie_at, hcr.first_exceeds_at, hcr.analytic_min_blocks, poem.first_exceeds_at, poem.analytic_min_blocks
        ),
    });

    let (lo, hi, count) = entropy_bound_range(field);
    out.push(Criterion {
        name: "finite finalization bound",
        passed: lo > 1 && hi <= 256,
        detail: format!("min_blocks in [{lo}, {hi}] over {count} triples"),
    });

    let p = latency_forks(ForkRule::Poem, seeds, 200.0, 100)?;
    let h = latency_forks(ForkRule::Hcr, seeds, 200.0, 100)?;
    out.push(Criterion {
        name: "latency-fork resolution",
        passed: p.violations.is_empty() && h.violations.is_empty() && p.isolated > 0 && h.isolated > 0,
        detail: format!(
            "{} runs; poem {} isolated pairs, lag {}..{} ms, {} compound; hcr {} isolated, {} compound; orphan rate poem {:.4} hcr {:.4}; {} violations",
            p.runs,
            p.isolated,
            p.lag_min_ms,
            p.lag_max_ms,
            p.compound,
            h.isolated,
            h.compound,
            p.mean_orphan_rate,
            h.mean_orphan_rate,
            p.violations.len() + h.violations.len()
        ),
    });

    let tie = tie_rate(FieldSpec::new(12).expect("valid width"), 4, 1_000_000, 1).map_err(|e| SimError::Chain(e.into()))?;
    out.push(Criterion {
        name: "tie rate",
        passed: tie.within(3.0),
        detail: format!(
            "{} ties in {} pairs: {:.6} vs 2^-8 = {:.6} (z = {:.2}); whole-field figure 2^-12 = {:.6}",
            tie.ties, tie.pairs, tie.empirical, tie.expected, tie.z, tie.field_figure
        ),
    });

    let sweep = withholding_sweep(&[ForkRule::Hcr, ForkRule::Poem], MiningMode::ClampedIntrinsic, 256, 20, 5, 0..=34, 1)?;
    let ok = sweep.iter().all(|r| match r.rule {
        ForkRule::Hcr => r.success == (r.reveal_after <= 31),
        _ => r.success == (r.reveal_after <= 1),
    });
    let first_fail = |rule: ForkRule| sweep.iter().filter(|r| r.rule == rule && !r.success).map(|r| r.reveal_after).min();
    out.push(Criterion {
        name: "withholding sweep",
        passed: ok,
        detail: format!(
            "honest sub-blocks that defeat a withheld dominant block: hcr {:?}, poem {:?}",
            first_fail(ForkRule::Hcr),
            first_fail(ForkRule::Poem)
        ),
    });
    Ok(out)
}
