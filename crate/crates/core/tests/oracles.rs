mod common;

use common::{ranking_case, reorganization_gap};
use hale::losses::{advneg_loss, samneg_loss, sample_queries};
use hale::scoring::{
    activate, ActivationKind, ActivationSpec, ModelKind, ModelSpec, ParameterSet, Scorer,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid() -> impl Iterator<Item = f64> {
    (0..=100_000).map(|i| i as f64 * 1e-3)
}

#[test]
fn reorganized_objective_matches_direct_sum() {
    let gap = reorganization_gap(100);
    assert!(gap < 1e-9, "gap {gap:e}");
}

#[test]
fn hanon_stays_below_cap() {
    let spec = ActivationSpec::new(ActivationKind::Hanon);
    for x in grid() {
        assert!(activate(&spec, x).unwrap() < spec.gamma, "x = {x}");
    }
}

#[test]
fn hanon_reference_value() {
    let spec = ActivationSpec::new(ActivationKind::Hanon);
    assert_eq!((spec.beta, spec.gamma), (3.0, 10.0));
    let v = activate(&spec, 0.5).unwrap();
    assert!((v - 10.0 / 11.0).abs() < 1e-6, "{v}");
}

#[test]
fn halin_is_continuous_and_capped() {
    let spec = ActivationSpec::new(ActivationKind::Halin);
    let left = activate(&spec, 1.0 - 1e-15).unwrap();
    let at = activate(&spec, 1.0).unwrap();
    let right = activate(&spec, 1.0 + 1e-15).unwrap();
    assert!(
        (left - at).abs() < 1e-12 && (right - at).abs() < 1e-12,
        "{left} {at} {right}"
    );
    for x in grid() {
        assert!(activate(&spec, x).unwrap() <= spec.gamma, "x = {x}");
    }
}

#[test]
fn every_activation_is_non_decreasing() {
    for kind in ActivationKind::ALL {
        let spec = ActivationSpec::new(kind);
        let mut prev = f64::NEG_INFINITY;
        for x in grid() {
            let v = activate(&spec, x).unwrap();
            assert!(v >= prev, "{} decreases at {x}", kind.name());
            prev = v;
        }
    }
}

#[test]
fn ranking_matches_sort_oracle() {
    for seed in 0..50 {
        if let Err(e) = ranking_case(seed) {
            panic!("seed {seed}: {e}");
        }
    }
}

#[test]
fn advneg_with_equal_negatives_is_samneg() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let pos = rng.random_range(-5.0..0.0);
        let neg = vec![rng.random_range(-5.0..0.0); 8];
        let a = advneg_loss(pos, &neg, 2.0, 1.0);
        let s = samneg_loss(pos, &neg, 2.0);
        assert!((a - s).abs() < 1e-12, "{a} vs {s}");
    }
}

#[test]
fn score_all_matches_per_triple_scoring() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for model in ModelKind::ALL {
        for act in ActivationKind::ALL {
            let mut params = ParameterSet::zeros(30, 4, 8);
            for b in hale::scoring::Block::ALL {
                for v in params.block_mut(b).as_mut_slice() {
                    *v = match b {
                        hale::scoring::Block::Scale | hale::scoring::Block::Flex => {
                            rng.random_range(0.5..1.5)
                        }
                        _ => rng.random_range(-0.3..0.3),
                    };
                }
            }
            let scorer = Scorer::new(
                ModelSpec::new(model, 8).unwrap(),
                ActivationSpec::new(act),
                true,
            );
            for h in 0..30 {
                let r = h % 4;
                let row = scorer.score_all(&params, h, r);
                for (t, &s) in row.iter().enumerate() {
                    let direct = scorer.score_triple(&params, h, r, t as u32);
                    let err = (s - direct).abs() / direct.abs().max(1e-12);
                    assert!(
                        err < 1e-6,
                        "{} {}: {s} vs {direct}",
                        model.name(),
                        act.name()
                    );
                }
            }
        }
    }
}

#[test]
fn full_query_sample_covers_every_triple() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for n in [1, 7, 100, 1234] {
        let mut idx = sample_queries(n, 1.0, &mut rng, 0).indices;
        idx.sort_unstable();
        assert_eq!(idx, (0..n).collect::<Vec<_>>());
    }
}
