//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero when any fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use num_bigint::BigUint;
use num_traits::{One, Zero};
use poem_lab::chaindag::{BlockId, BlockRecord, ChainDag, ForkRule, Level, WeightPolicy};
use poem_lab::cli::run_cli;
use poem_lab::config::SeedSpec;
use poem_lab::entropy::{intrinsic_weight, overtake_bound_difficulty, overtake_bound_entropy_checked, FieldSpec, HashValue, ThresholdSpec};
use poem_lab::experiments::{latency_forks, overtake, tie_rate, two_miner_config, withholding_config, withholding_sweep};
use poem_lab::minesim::{sample_output, sim_rng, MiningMode};
use poem_lab::time::SimTime;
use rand::Rng;

// Pinned limits.
const OVERTAKE_LIMIT: Duration = Duration::from_secs(1);
const BOUND_LIMIT: Duration = Duration::from_secs(1);
const MINUTE: Duration = Duration::from_secs(60);
const BOUND_TRIPLES: usize = 10_000;
const FORK_SEEDS: u64 = 100;
const FORK_DELAY_MS: f64 = 200.0;
const FORK_HORIZON: u64 = 100;
const TIE_PAIRS: u64 = 1_000_000;
const TIE_SIGMAS: f64 = 3.0;
const LOG_SAMPLES: usize = 100_000;
const LOG_FIELDS: [u32; 4] = [8, 16, 64, 256];
/// Allowed error of the fixed-point weight, as a power of two.
const LOG_TOLERANCE_EXP: u32 = 60;
const DAG_BLOCKS: usize = 10_000;
const DETERMINISM_SEEDS: SeedSpec = SeedSpec::Range { start: 1, end: 10 };

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome, Duration);

fn check(cond: bool, what: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn c256() -> (FieldSpec, ThresholdSpec) {
    let field = FieldSpec::new(256).unwrap();
    (field, ThresholdSpec::new(20, 5, field).unwrap())
}

fn overtake_contrast() -> Outcome {
    let (field, t) = c256();
    let rows = overtake(field, t, 64);
    let get = |r| rows.iter().find(|x| x.rule == r).copied().unwrap();
    let (hcr, poem) = (get(ForkRule::Hcr), get(ForkRule::Poem));
    check(hcr.tie_at == Some(32), format!("hcr tie at {:?}, expected 32", hcr.tie_at))?;
    check(hcr.first_exceeds_at == 33, format!("hcr exceeds at {}, expected 33", hcr.first_exceeds_at))?;
    check(poem.first_exceeds_at == 2, format!("poem exceeds at {}, expected 2", poem.first_exceeds_at))?;
    check(overtake_bound_difficulty(t).min_blocks == BigUint::from(33u32), "difficulty bound min_blocks")?;
    check(poem.analytic_min_blocks == 2, "entropy bound min_blocks")?;
    Ok(format!("hcr ties at 32 and exceeds at 33; poem exceeds at 2 (tie: {:?})", poem.tie_at))
}

fn finite_finalization_bound() -> Outcome {
    let field = FieldSpec::new(256).unwrap();
    let mut rng = sim_rng(2, 0);
    let mut hist: BTreeMap<u64, u64> = BTreeMap::new();
    for _ in 0..BOUND_TRIPLES {
        let m_t = rng.gen_range(1..256u32);
        let m_d = rng.gen_range(0..256 - m_t);
        let extra = rng.gen_range(0..256 - m_t - m_d);
        let t = ThresholdSpec::new(m_t, m_d, field).map_err(|e| e.to_string())?;
        let k = overtake_bound_entropy_checked(t, extra, field).map_err(|e| e.to_string())?.min_blocks;
        check(1 < k && k <= 256, format!("({m_t}, {m_d}, {extra}) -> {k}"))?;
        *hist.entry(k).or_default() += 1;
    }
    let (lo, hi, count) = poem_lab::experiments::entropy_bound_range(field);
    check(lo == 2 && hi == 256, format!("exhaustive range [{lo}, {hi}]"))?;
    Ok(format!(
        "{BOUND_TRIPLES} random triples in [{}, {}]; all {count} valid triples in [2, 256]",
        hist.keys().next().unwrap(),
        hist.keys().last().unwrap()
    ))
}

fn latency_fork_resolution() -> Outcome {
    let seeds: Vec<u64> = (1..=FORK_SEEDS).collect();
    let p = latency_forks(ForkRule::Poem, &seeds, FORK_DELAY_MS, FORK_HORIZON).map_err(|e| e.to_string())?;
    let h = latency_forks(ForkRule::Hcr, &seeds, FORK_DELAY_MS, FORK_HORIZON).map_err(|e| e.to_string())?;
    for s in [&p, &h] {
        check(s.violations.is_empty(), format!("{} violations, first: {}", s.violations.len(), s.violations.first().cloned().unwrap_or_default()))?;
        check(s.isolated > 0, "no isolated same-parent forks observed")?;
    }
    check(p.lag_min_ms == FORK_DELAY_MS && p.lag_max_ms == FORK_DELAY_MS, "poem agreement lag differs from the delay")?;
    Ok(format!(
        "{FORK_SEEDS} seeds per rule; poem: {} isolated pairs agree exactly one delay after the second find, {} overlapping pairs never left on the lighter sibling; hcr: {} isolated pairs persist until a later block ({} mixed-level); mean fork persistence poem {:.3} hcr {:.3} deliveries",
        p.isolated, p.compound, h.isolated, h.unequal_threshold_weight, p.mean_fork_persistence, h.mean_fork_persistence
    ))
}

fn tie_rate_criterion() -> Outcome {
    let r = tie_rate(FieldSpec::new(12).unwrap(), 4, TIE_PAIRS, 1).map_err(|e| e.to_string())?;
    check(r.expected == 2f64.powi(-8), "expected rate is not 2^-8")?;
    check(r.within(TIE_SIGMAS), format!("z = {:.3}", r.z))?;
    Ok(format!("{} / {} = {:.6}, 2^-8 = {:.6}, z = {:.2}; whole-field 2^-12 = {:.6}", r.ties, r.pairs, r.empirical, r.expected, r.z, r.field_figure))
}

fn withholding_tolerance() -> Outcome {
    let rows = withholding_sweep(&[ForkRule::Hcr, ForkRule::Poem], MiningMode::ClampedIntrinsic, 256, 20, 5, 0..=40, 1).map_err(|e| e.to_string())?;
    for r in &rows {
        let expect = match r.rule {
            ForkRule::Hcr => r.reveal_after <= 31,
            _ => r.reveal_after <= 1,
        };
        check(r.success == expect, format!("{:?} reveal after {}: success {}", r.rule, r.reveal_after, r.success))?;
        let depth = if r.success { r.reveal_after as u64 } else { 0 };
        check(r.reorg_depth == depth, format!("{:?} reveal after {}: reorg depth {}", r.rule, r.reveal_after, r.reorg_depth))?;
    }
    Ok("hcr: succeeds through 31, fails at 32 (tie keeps the honest chain) and 33; poem: succeeds at 1, fails from 2".into())
}

/// `log2(h)` to `prec` fractional bits via `ln x = 2 atanh((x - 1) / (x + 1))`.
fn log2_oracle(h: &BigUint, prec: u32) -> BigUint {
    let k = h.bits() - 1;
    let one = BigUint::one() << prec;
    // Mantissa in [1, 2) as a fixed-point number.
    let x = if k as u32 >= prec { h >> (k as u32 - prec) } else { h << (prec - k as u32) };
    let ln = |num: &BigUint, den: &BigUint| -> BigUint {
        // 2 * atanh(num / den), num / den <= 1/3.
        let z = (num << prec) / den;
        let z2 = (&z * &z) >> prec;
        let mut term = z;
        let mut sum = BigUint::zero();
        let mut i = 1u32;
        while !term.is_zero() {
            sum += &term / i;
            term = (&term * &z2) >> prec;
            i += 2;
        }
        sum << 1
    };
    let ln_m = ln(&(&x - &one), &(&x + &one));
    let ln2 = ln(&BigUint::one(), &BigUint::from(3u32));
    (BigUint::from(k) << prec) + (ln_m << prec) / ln2
}

fn arithmetic_fidelity() -> Outcome {
    const PREC: u32 = 160;
    let mut worst = BigUint::zero();
    let tol = BigUint::one() << (PREC - LOG_TOLERANCE_EXP);
    for l in LOG_FIELDS {
        let field = FieldSpec::new(l).unwrap();
        let mut rng = sim_rng(l as u64, 0);
        for i in 0..LOG_SAMPLES {
            let h = if i % 2 == 0 {
                HashValue::random_below_pow2(&mut rng, l)
            } else {
                let k = rng.gen_range(1..=l);
                HashValue::random_below_pow2(&mut rng, k - 1).checked_add(&HashValue::pow2(k - 1)).unwrap()
            };
            let got = BigUint::from(intrinsic_weight(&h, field).map_err(|e| e.to_string())?.raw()) << (PREC - 64);
            let big = BigUint::from_bytes_be(&h.to_be_bytes());
            let want = if big <= BigUint::one() { BigUint::from(l) << PREC } else { (BigUint::from(l) << PREC) - log2_oracle(&big, PREC) };
            let err = if got > want { &got - &want } else { &want - &got };
            check(err <= tol, format!("l = {l}, h = {}: error above 2^-{LOG_TOLERANCE_EXP}", h.to_hex()))?;
            worst = worst.max(err);
        }
    }
    let worst_log2 = if worst.is_zero() { f64::NEG_INFINITY } else { (worst.bits() as f64) - PREC as f64 };
    let dag = dag_coherence()?;
    Ok(format!("{LOG_SAMPLES} inputs per l in {LOG_FIELDS:?}: worst error < 2^{worst_log2}; {dag}"))
}

/// Incremental weights of a random DAG against a recomputation from scratch.
fn dag_coherence() -> Result<String, String> {
    let field = FieldSpec::new(64).unwrap();
    let t = ThresholdSpec::new(8, 3, field).unwrap();
    let mut rng = sim_rng(6, 0);
    let mut dag = ChainDag::new(field, t, WeightPolicy::Derived, ForkRule::Poem);
    let mut records: Vec<BlockRecord> = Vec::with_capacity(DAG_BLOCKS);
    for i in 1..=DAG_BLOCKS as u64 {
        let tip = BlockId(rng.gen_range(i.saturating_sub(5)..i));
        let out = sample_output(&mut rng, field, t, MiningMode::Sampled).map_err(|e| e.to_string())?;
        let (parent, sub_tip_ref) = dag.links_for(out.level, tip).map_err(|e| e.to_string())?;
        let rec = BlockRecord {
            id: BlockId(i),
            hash: out.hash,
            parent,
            level: out.level,
            sub_tip_ref,
            miner: 0,
            height: dag.next_height(out.level, parent).map_err(|e| e.to_string())?,
            found_at: SimTime(i),
            n: out.n,
        };
        dag.insert_block(rec.clone()).map_err(|e| e.to_string())?;
        records.push(rec);
    }
    // Closures as bitsets, weights as raw Q.64 sums.
    let words = (DAG_BLOCKS + 1).div_ceil(64);
    let mut closure = vec![vec![0u64; words]; DAG_BLOCKS + 1];
    let mut dominant = 0;
    for r in &records {
        let i = r.id.0 as usize;
        let mut set = closure[r.parent.0 as usize].clone();
        if let Some(s) = r.sub_tip_ref {
            for (w, x) in set.iter_mut().zip(&closure[s.0 as usize]) {
                *w |= x;
            }
        }
        set[i / 64] |= 1 << (i % 64);
        let mut sum: u128 = 0;
        for (wi, w) in set.iter().enumerate() {
            let mut bits = *w;
            while bits != 0 {
                let j = wi * 64 + bits.trailing_zeros() as usize;
                bits &= bits - 1;
                if j > 0 {
                    sum += records[j - 1].n.raw();
                }
            }
        }
        let w = dag.poem_weight(r.id).map_err(|e| e.to_string())?;
        check((w.whole() << 64 | w.fraction() as u128) == sum, format!("weight of block {i} differs"))?;
        dominant += (r.level == Level::Dominant) as u32;
        closure[i] = set;
    }
    Ok(format!("{DAG_BLOCKS}-block DAG ({dominant} dominant) weights bit-identical"))
}

fn write_config(dir: &Path, name: &str, cfg: &poem_lab::config::SimConfig) -> String {
    let path = dir.join(name);
    std::fs::write(&path, cfg.to_json()).unwrap();
    path.display().to_string()
}

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let configs = [
        ("latency-poem.json", two_miner_config(ForkRule::Poem, MiningMode::Sampled, 256, 20, 5, FORK_DELAY_MS, FORK_HORIZON)),
        ("latency-hcr.json", two_miner_config(ForkRule::Hcr, MiningMode::Sampled, 256, 20, 5, FORK_DELAY_MS, FORK_HORIZON)),
        ("withholding-poem.json", withholding_config(ForkRule::Poem, MiningMode::Sampled, 256, 20, 5, 1)),
        ("withholding-hcr.json", withholding_config(ForkRule::Hcr, MiningMode::ClampedIntrinsic, 256, 20, 5, 31)),
    ];
    let mut files = 0;
    for (name, cfg) in &configs {
        let path = write_config(tmp.path(), name, cfg);
        let mut outs = Vec::new();
        for (run, workers) in [("a", "1"), ("b", "4")] {
            let out = tmp.path().join(format!("{name}-{run}"));
            let args = [
                "poem-lab",
                "run",
                "--config",
                &path,
                "--seeds",
                &DETERMINISM_SEEDS.to_string(),
                "--workers",
                workers,
                "--out",
                out.to_str().unwrap(),
            ];
            let code = run_cli(args, &mut Vec::new(), &mut Vec::new());
            check(code == 0, format!("{name}: exit code {code}"))?;
            outs.push(read_dir_bytes(&out));
        }
        check(outs[0].len() == 11, format!("{name}: {} files, expected 10 traces and a CSV", outs[0].len()))?;
        check(outs[0] == outs[1], format!("{name}: outputs differ between reruns"))?;
        files += outs[0].len();
    }
    Ok(format!("{} configs x 10 seeds, {files} files byte-identical across reruns with 1 and 4 workers", configs.len()))
}

fn main() {
    let criteria: [Check; 7] = [
        ("1 overtake contrast", overtake_contrast, OVERTAKE_LIMIT),
        ("2 finite finalization bound", finite_finalization_bound, BOUND_LIMIT),
        ("3 latency-fork resolution", latency_fork_resolution, MINUTE),
        ("4 tie rate", tie_rate_criterion, MINUTE),
        ("5 withholding tolerance", withholding_tolerance, MINUTE),
        ("6 arithmetic fidelity", arithmetic_fidelity, MINUTE),
        ("7 determinism", determinism, MINUTE),
    ];
    let mut failed = 0;
    for (name, f, limit) in criteria {
        let start = Instant::now();
        let result = f();
        let took = start.elapsed();
        let result = result.and_then(|d| if took <= limit { Ok(d) } else { Err(format!("took {took:.2?}, limit {limit:?}")) });
        match result {
            Ok(detail) => println!("PASS  criterion {name} [{took:.2?}]: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  criterion {name} [{took:.2?}]: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 7 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
