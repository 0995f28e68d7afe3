//! Sampled-mode POEM withholding against a Monte Carlo model built from
//! closed-form weight draws, not from the simulator's sampler.

use poem_lab::chaindag::ForkRule;
use poem_lab::experiments::withholding_config;
use poem_lab::minesim::MiningMode;
use poem_lab::netsim::withholding_attack;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const L: u32 = 64;
const M_T: u32 = 4;
const M_D: u32 = 1;
const RUNS: u64 = 3000;
const ORACLE_DRAWS: u64 = 1_000_000;
const MAX_Z: f64 = 4.0;

/// Attack success probability when the dominant block races `honest` subordinate blocks.
fn oracle(honest: u32, rng: &mut ChaCha8Rng) -> f64 {
    // h = 2^(l - m) * u with u uniform over the level's share of the threshold.
    let lo = 2f64.powi(-(M_D as i32));
    let mut wins = 0u64;
    for _ in 0..ORACLE_DRAWS {
        let u: f64 = rng.gen();
        let n_d = if u == 0.0 { L as f64 } else { (M_T + M_D) as f64 - u.log2() };
        let n_s: f64 = (0..honest).map(|_| M_T as f64 - rng.gen_range(lo..1.0f64).log2()).sum();
        wins += (n_d > n_s) as u64;
    }
    wins as f64 / ORACLE_DRAWS as f64
}

fn simulated(reveal_after: u32) -> f64 {
    let cfg = withholding_config(ForkRule::Poem, MiningMode::Sampled, L, M_T, M_D, reveal_after);
    let wins: f64 = (1..=RUNS).map(|seed| withholding_attack(&cfg, seed).unwrap().stats.attack_success().unwrap()).sum();
    wins / RUNS as f64
}

fn z(p_sim: f64, p_ref: f64) -> f64 {
    let var = p_ref * (1.0 - p_ref) * (1.0 / RUNS as f64 + 1.0 / ORACLE_DRAWS as f64);
    if var == 0.0 {
        if p_sim == p_ref {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (p_sim - p_ref) / var.sqrt()
    }
}

#[test]
fn reveal_after_one_always_wins() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p_ref = oracle(1, &mut rng);
    assert_eq!(p_ref, 1.0);
    assert_eq!(simulated(1), 1.0);
}

#[test]
fn success_frequency_matches_oracle_when_honest_chain_is_longer() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for j in [2, 3] {
        let p_ref = oracle(j, &mut rng);
        let p_sim = simulated(j);
        let z = z(p_sim, p_ref);
        assert!(z.abs() < MAX_Z, "reveal after {j}: simulated {p_sim}, oracle {p_ref}, z {z:.2}");
    }
}

#[test]
fn oracle_agrees_with_closed_form() {
    // P(n_D > x) = 2^(m_t + m_d - x), and E[2^-n_S] = 2^-m_t (1 + 2^-m_d) / 2.
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let closed = 2f64.powi((M_T + M_D) as i32) * (2f64.powi(-(M_T as i32)) * (1.0 + 2f64.powi(-(M_D as i32))) / 2.0).powi(2);
    let p = oracle(2, &mut rng);
    let sigma = (closed * (1.0 - closed) / ORACLE_DRAWS as f64).sqrt();
    assert!((p - closed).abs() < MAX_Z * sigma, "{p} vs {closed}");
}
