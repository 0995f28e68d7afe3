use poem_lab::chaindag::ForkRule;
use poem_lab::config::{DelayModel, SeedSpec, SimConfig};
use poem_lab::experiments::{two_miner_config, withholding_config};
use poem_lab::minesim::{MiningMode, Strategy as MinerStrategy};
use proptest::prelude::*;

fn rule() -> impl Strategy<Value = ForkRule> {
    prop_oneof![Just(ForkRule::Poem), Just(ForkRule::Hcr), Just(ForkRule::HcrIntrinsic)]
}

fn delay() -> impl Strategy<Value = DelayModel> {
    prop_oneof![
        (0.0..1e4f64).prop_map(|delay_ms| DelayModel::Fixed { delay_ms }),
        (0.1..1e4f64).prop_map(|mean_ms| DelayModel::Exponential { mean_ms }),
        (0.0..1e3f64, 0.0..1e3f64).prop_map(|(a, b)| DelayModel::Uniform { lo_ms: a.min(b), hi_ms: a.max(b) }),
    ]
}

fn config() -> impl Strategy<Value = SimConfig> {
    (8u32..=256, rule(), prop::bool::ANY, delay(), 1u64..500, 0u64..1000, 0u64..50, prop::option::of(rule()), 0u32..40)
        .prop_flat_map(|(l, rule, withhold, delay, horizon, seed, span, override_rule, reveal)| {
            (1..(l - 1).min(24), Just((l, rule, withhold, delay, horizon, seed, span, override_rule, reveal)))
        })
        .prop_flat_map(|(m_t, rest)| (Just(m_t), 1..rest.0 - m_t, Just(rest)))
        .prop_map(|(m_t, m_d, (l, rule, withhold, delay, horizon, seed, span, override_rule, reveal))| {
            let mode = if m_t % 2 == 0 { MiningMode::Sampled } else { MiningMode::ClampedIntrinsic };
            let mut cfg =
                if withhold { withholding_config(rule, mode, l, m_t, m_d, reveal) } else { two_miner_config(rule, mode, l, m_t, m_d, 1.0, horizon) };
            cfg.links[0].delay = delay;
            cfg.nodes[1].rule = override_rule;
            cfg.seeds = if span == 0 { SeedSpec::Single(seed) } else { SeedSpec::Range { start: seed, end: seed + span } };
            cfg
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn json_round_trip_is_identity(cfg in config()) {
        let text = cfg.to_json();
        let back = SimConfig::from_json(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_json(), text);
        prop_assert_eq!(back.digest(), cfg.digest());
    }

    #[test]
    fn seed_spec_text_round_trip(start in 0u64..1_000_000, span in 0u64..1000) {
        for spec in [SeedSpec::Single(start), SeedSpec::Range { start, end: start + span }] {
            prop_assert_eq!(spec.to_string().parse::<SeedSpec>().unwrap(), spec);
        }
    }
}

#[test]
fn unknown_field_is_rejected() {
    let cfg = two_miner_config(ForkRule::Poem, MiningMode::Sampled, 256, 20, 5, 10.0, 10);
    let mut v: serde_json::Value = serde_json::from_str(&cfg.to_json()).unwrap();
    v["difficulty"] = 3.into();
    let err = SimConfig::from_json(&v.to_string()).unwrap_err().to_string();
    assert!(err.contains("difficulty"), "{err}");
}

#[test]
fn strategy_names_are_snake_case() {
    let cfg = withholding_config(ForkRule::Hcr, MiningMode::ClampedIntrinsic, 256, 20, 5, 7);
    let v: serde_json::Value = serde_json::from_str(&cfg.to_json()).unwrap();
    assert_eq!(v["miners"][1]["strategy"]["withhold_dominant"]["reveal_after"], 7);
    assert_eq!(v["mining_mode"], "clamped_intrinsic");
    assert!(matches!(cfg.miners[1].strategy, MinerStrategy::WithholdDominant { reveal_after: 7 }));
}
