use std::collections::BTreeMap;

use lbsac_core::envs::{
    behavior_return, generate_dataset, normalized_score, Behavior, EnvId, OfflineDataset,
    ScoreReference, ToyEnv, REFERENCE_EPISODES, REFERENCE_SEED,
};
use lbsac_core::{Error, Rng};
use proptest::prelude::*;

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
fn registry_matches_recomputation() {
    let fresh: BTreeMap<EnvId, ScoreReference> = EnvId::ALL
        .into_iter()
        .map(|e| (e, ScoreReference::compute(e, REFERENCE_EPISODES, REFERENCE_SEED)))
        .collect();
    assert_eq!(
        ScoreReference::registry(),
        fresh,
        "registry is stale, expected:\n{}",
        serde_json::to_string_pretty(&fresh).unwrap()
    );
    for r in fresh.values() {
        r.validate().unwrap();
    }
}

#[test]
fn expert_dataset_matches_reference() {
    for env in EnvId::ALL {
        let data = generate_dataset(env, Behavior::Expert, 20_000, 11).unwrap();
        let got = mean(&data.episode_returns());
        let want = ScoreReference::for_env(env).expert_return;
        assert!(((got - want) / want).abs() < 0.01, "{env}: {got} vs {want}");
    }
}

#[test]
fn behavior_tiers_are_ordered() {
    for env in EnvId::ALL {
        let r = ScoreReference::for_env(env);
        let ret = |b| mean(&generate_dataset(env, b, 20_000, 5).unwrap().episode_returns());
        let (random, medium, expert) = (ret(Behavior::Random), ret(Behavior::Medium), ret(Behavior::Expert));
        assert!(random < medium && medium < expert, "{env}: {random} {medium} {expert}");
        assert!(r.random_return < medium && medium < r.expert_return);
        let replay = ret(Behavior::MediumReplay);
        assert!(random < replay && replay < medium, "{env}: replay {replay}");
    }
}

#[test]
fn random_dataset_is_uniform_and_reproducible() {
    let a = generate_dataset(EnvId::PointMass1d, Behavior::Random, 1000, 9).unwrap();
    let b = generate_dataset(EnvId::PointMass1d, Behavior::Random, 1000, 9).unwrap();
    assert_eq!(a.encode(), b.encode());
    assert_eq!(a.len(), 1000);
    assert!(a.actions.iter().all(|x| (-1.0..=1.0).contains(x)));
    let m = a.actions.iter().map(|&x| x as f64).sum::<f64>() / 1000.0;
    let v = a.actions.iter().map(|&x| (x as f64 - m).powi(2)).sum::<f64>() / 1000.0;
    assert!(m.abs() < 0.06 && (v - 1.0 / 3.0).abs() < 0.03, "mean {m} var {v}");
    assert!(a.dones.iter().all(|&d| d == 0));
    a.validate().unwrap();
    let c = generate_dataset(EnvId::PointMass1d, Behavior::Random, 1000, 10).unwrap();
    assert_ne!(a.actions, c.actions);
}

#[test]
fn transitions_chain_within_episodes() {
    let d = generate_dataset(EnvId::PointMass2d, Behavior::Medium, 450, 1).unwrap();
    let od = d.obs_dim();
    for i in 0..d.len() - 1 {
        if (i + 1) % 200 != 0 {
            assert_eq!(
                d.next_observations[i * od..(i + 1) * od],
                d.observations[(i + 1) * od..(i + 2) * od]
            );
        }
    }
}

#[test]
fn zero_size_is_rejected() {
    assert!(generate_dataset(EnvId::PointMass1d, Behavior::Expert, 0, 0).is_err());
}

#[test]
fn dataset_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.lbd");
    let d = generate_dataset(EnvId::PointMass2d, Behavior::MediumReplay, 777, 4).unwrap();
    d.save(&path).unwrap();
    let back = OfflineDataset::load(&path).unwrap();
    assert_eq!(back, d);
    assert_eq!(back.encode(), std::fs::read(&path).unwrap());
}

#[test]
fn truncated_and_inconsistent_files_are_rejected() {
    let d = generate_dataset(EnvId::PointMass1d, Behavior::Random, 50, 4).unwrap();
    let bytes = d.encode();
    let p = std::path::Path::new("mem.lbd");
    for cut in [3, 10, 20, bytes.len() - 1] {
        match OfflineDataset::decode(&bytes[..cut], p) {
            Err(Error::Corrupt { offset, .. }) => assert!(offset <= cut as u64),
            other => panic!("cut {cut}: {other:?}"),
        }
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(OfflineDataset::decode(&extra, p), Err(Error::Corrupt { .. })));

    // Header claims one more row than the blobs hold.
    let mut meta = d.meta.clone();
    meta.rows += 1;
    let forged = OfflineDataset { meta, ..d.clone() };
    assert!(matches!(
        OfflineDataset::decode(&forged.encode(), p),
        Err(Error::Corrupt { .. })
    ));
    assert!(forged.validate().is_err());

    let mut bad_magic = bytes;
    bad_magic[0] = b'X';
    assert!(OfflineDataset::decode(&bad_magic, p).is_err());
}

#[test]
fn uniform_sampling_with_replacement() {
    let d = generate_dataset(EnvId::PointMass1d, Behavior::Random, 64, 2).unwrap();
    let mut rng = Rng::new(0);
    let idx = d.sample_indices(64, &mut rng);
    assert_eq!(idx.len(), 64);
    assert!(idx.iter().all(|&i| i < 64));
    let mut uniq = idx.clone();
    uniq.sort();
    uniq.dedup();
    assert!(uniq.len() < 64, "with replacement duplicates are expected");
    let b = d.batch(&idx);
    assert_eq!(b.states.shape(), [64, 2]);
    assert_eq!(b.rewards.shape(), [64, 1]);
    assert_eq!(b.rewards.data()[5], d.rewards[idx[5]]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn env_is_deterministic(seed in any::<u64>(), actions in prop::collection::vec(-2.0f64..2.0, 1..60)) {
        let env = ToyEnv::new(EnvId::PointMass1d);
        let run = || {
            let mut rng = Rng::new(seed);
            let mut s = env.reset(&mut rng);
            let mut out = Vec::new();
            for &a in &actions {
                let (n, r, _) = env.step(&s, &[a]);
                out.push((n.position[0].to_bits(), n.velocity[0].to_bits(), r.to_bits()));
                s = n;
            }
            out
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn normalized_score_is_shift_invariant(raw in -200.0f64..0.0, c in -2.0f64..2.0) {
        let r = ScoreReference::for_env(EnvId::PointMass1d);
        let h = 200.0;
        let shifted = ScoreReference {
            random_return: r.random_return + c * h,
            expert_return: r.expert_return + c * h,
            ..r
        };
        let a = normalized_score(raw, &r).unwrap();
        let b = normalized_score(raw + c * h, &shifted).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }
}

#[test]
fn expert_beats_random_per_episode_on_average() {
    let env = ToyEnv::new(EnvId::PointMass1d);
    let mut rng = Rng::new(77);
    let e: f64 = (0..20).map(|_| behavior_return(&env, Behavior::Expert, &mut rng)).sum();
    let r: f64 = (0..20).map(|_| behavior_return(&env, Behavior::Random, &mut rng)).sum();
    assert!(e > r);
}
