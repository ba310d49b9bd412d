//! Shared fixtures and oracles for the integration tests.

#![allow(dead_code)]

use std::collections::HashSet;

use hale::eval::{evaluate_split, EvalReport, TieMode};
use hale::kgdata::{Dataset, KgData, Triple, TripleSet, Vocabulary};
use hale::losses::{combined_loss_reference, sample_queries, LossKind, LossSpec};
use hale::scoring::{
    ActivationKind, ActivationSpec, Block, ModelKind, ModelSpec, ParameterSet, Scorer,
};
use hale::trainer::grad::{batch_loss, compute_gradients, current_adv_weights, Batch, Gradients};
use hale::trainer::{train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;

/// Components whose magnitude is below this are compared on an absolute
/// scale of `FD_REL_TOL * FD_FLOOR`, since central differences cannot
/// resolve them relatively.
pub const FD_FLOOR: f64 = 1e-6;

pub struct Instance {
    pub scorer: Scorer,
    pub spec: LossSpec,
    pub params: ParameterSet,
    pub batch: Batch,
}

/// Random small problem: every table filled, a handful of positives,
/// sampled queries and negatives.
pub fn random_instance(
    model: ModelKind,
    activation: ActivationKind,
    loss: LossKind,
    n_e: usize,
    n_r: usize,
    d: usize,
    seed: u64,
) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParameterSet::zeros(n_e, n_r, d);
    for b in Block::ALL {
        let (lo, hi) = match b {
            Block::Scale | Block::Flex => (0.5, 1.5),
            Block::Angles => (-3.0, 3.0),
            // RotL's denominator stays near 1 and XExpX's input stays small
            _ => (-0.3, 0.3),
        };
        for v in params.block_mut(b).as_mut_slice() {
            *v = rng.random_range(lo..hi);
        }
    }
    let mut spec = LossSpec::new(loss);
    spec.neg_count = 3;
    spec.lambda = 0.7;
    let triple = |rng: &mut ChaCha8Rng| {
        Triple::new(
            rng.random_range(0..n_e as u32),
            rng.random_range(0..n_r as u32),
            rng.random_range(0..n_e as u32),
        )
    };
    let positives: Vec<Triple> = (0..4).map(|_| triple(&mut rng)).collect();
    let queries: Vec<Triple> = (0..3).map(|_| triple(&mut rng)).collect();
    let negatives = (0..positives.len() * spec.neg_count)
        .map(|_| rng.random_range(0..n_e as u32))
        .collect();
    Instance {
        scorer: Scorer::new(
            ModelSpec::new(model, d).unwrap(),
            ActivationSpec::new(activation),
            true,
        ),
        spec,
        params,
        batch: Batch {
            index: 0,
            positives,
            queries,
            negatives,
            neg_count: 3,
        },
    }
}

/// Largest per-component relative disagreement between the analytic
/// gradient and central finite differences of the reference loss.
///
/// Self-adversarial weights are held at their unperturbed values, matching
/// the stop-gradient in the analytic pass.
pub fn fd_max_rel_error(inst: &Instance) -> (f64, String) {
    let mut grads = Gradients::zeros_like(&inst.params);
    compute_gradients(
        &inst.scorer,
        &inst.spec,
        &inst.params,
        &inst.batch,
        &mut grads,
    )
    .unwrap();
    let frozen = (inst.spec.kind == LossKind::AdvNeg)
        .then(|| current_adv_weights(&inst.scorer, &inst.spec, &inst.params, &inst.batch));
    let mut p = inst.params.clone();
    let mut worst = (0.0, String::new());
    for b in Block::ALL {
        if b == Block::Scale && !inst.scorer.use_rel_ratio {
            continue;
        }
        let n = p.block(b).as_slice().len();
        let cols = p.block(b).cols();
        for k in 0..n {
            let orig = p.block(b).as_slice()[k];
            p.block_mut(b).as_mut_slice()[k] = orig + FD_STEP;
            let up =
                batch_loss(&inst.scorer, &inst.spec, &p, &inst.batch, frozen.as_deref()).unwrap();
            p.block_mut(b).as_mut_slice()[k] = orig - FD_STEP;
            let down =
                batch_loss(&inst.scorer, &inst.spec, &p, &inst.batch, frozen.as_deref()).unwrap();
            p.block_mut(b).as_mut_slice()[k] = orig;
            let fd = (up - down) / (2.0 * FD_STEP);
            let an = grads.get(b, k / cols, k % cols);
            let err = (an - fd).abs() / an.abs().max(fd.abs()).max(FD_FLOOR);
            if err > worst.0 {
                worst = (
                    err,
                    format!("{}[{}]: analytic {an:e} vs fd {fd:e}", b.name(), k),
                );
            }
        }
    }
    worst
}

/// Training-ready graph over `n_e` entities and `n_r` relations named by id.
pub fn graph(
    n_e: usize,
    n_r: usize,
    train: &[Triple],
    valid: &[Triple],
    test: &[Triple],
) -> KgData {
    let vocab = Vocabulary::from_names(
        (0..n_e).map(|i| format!("e{i}")).collect(),
        (0..n_r).map(|i| format!("r{i}")).collect(),
    )
    .unwrap();
    Dataset {
        vocab,
        train: TripleSet::from_triples("train", train),
        valid: TripleSet::from_triples("valid", valid),
        test: TripleSet::from_triples("test", test),
    }
    .prepare()
    .unwrap()
}

fn random_triples(rng: &mut ChaCha8Rng, n: usize, n_e: usize, n_r: usize) -> Vec<Triple> {
    (0..n)
        .map(|_| {
            Triple::new(
                rng.random_range(0..n_e as u32),
                rng.random_range(0..n_r as u32),
                rng.random_range(0..n_e as u32),
            )
        })
        .collect()
}

/// Largest `|lhs - rhs|` of the split-objective reorganization over
/// `cases` random instances, with scores and rows taken from a random model.
pub fn reorganization_gap(cases: u64) -> f64 {
    let models = [
        ModelKind::TransE,
        ModelKind::DistMult,
        ModelKind::RotatE,
        ModelKind::RotE,
        ModelKind::RotL,
    ];
    let mut worst: f64 = 0.0;
    for seed in 0..cases {
        let model = models[seed as usize % models.len()];
        let inst = random_instance(
            model,
            ActivationKind::Hanon,
            LossKind::HaLE,
            8,
            3,
            4,
            1000 + seed,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let triples = random_triples(&mut rng, 30, 8, 3);
        let scores: Vec<f64> = triples
            .iter()
            .map(|t| {
                inst.scorer
                    .score_triple(&inst.params, t.head, t.relation, t.tail)
            })
            .collect();
        let alpha = rng.random_range(0.05..1.0);
        let sample = sample_queries(triples.len(), alpha, &mut rng, 0);
        let rows: Vec<Vec<f64>> = sample
            .indices
            .iter()
            .map(|&i| {
                inst.scorer
                    .score_all(&inst.params, triples[i].head, triples[i].relation)
            })
            .collect();
        let (lhs, rhs) = combined_loss_reference(&scores, &sample, &rows).unwrap();
        worst = worst.max((lhs - rhs).abs());
    }
    worst
}

/// Filtered rank by sorting: the target's candidates are every entity not
/// known to answer `(h, r)`, plus the target itself; tied candidates share
/// the mean of their positions.
pub fn sort_rank(
    scores: &[f64],
    h: u32,
    r: u32,
    target: u32,
    known: &HashSet<(u32, u32, u32)>,
) -> f64 {
    let mut kept: Vec<f64> = (0..scores.len() as u32)
        .filter(|&e| e == target || !known.contains(&(h, r, e)))
        .map(|e| scores[e as usize])
        .collect();
    kept.sort_by(|a, b| b.total_cmp(a));
    let ts = scores[target as usize];
    let first = kept.iter().position(|&s| s == ts).unwrap();
    let last = kept.iter().rposition(|&s| s == ts).unwrap();
    (first + last) as f64 / 2.0 + 1.0
}

/// Compares `evaluate_split` on one random 10-entity graph against
/// [`sort_rank`]. Even seeds use TransE with entries in {-1, 0, 1}, which
/// produces exact ties; odd seeds use RotE with continuous entries.
pub fn ranking_case(seed: u64) -> Result<(), String> {
    let (n_e, n_r) = (10, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = random_triples(&mut rng, 15, n_e, n_r);
    let valid = random_triples(&mut rng, 5, n_e, n_r);
    let test = random_triples(&mut rng, 6, n_e, n_r);
    let data = graph(n_e, n_r, &train, &valid, &test);
    let model = if seed.is_multiple_of(2) {
        ModelKind::TransE
    } else {
        ModelKind::RotE
    };
    let mut params = ParameterSet::zeros(n_e, 2 * n_r, 4);
    for b in Block::ALL {
        for v in params.block_mut(b).as_mut_slice() {
            *v = match (model, b) {
                (_, Block::Scale | Block::Flex) => 1.0,
                (ModelKind::TransE, _) => rng.random_range(-1i32..=1) as f64,
                _ => rng.random_range(-1.0..1.0),
            };
        }
    }
    let scorer = Scorer::new(
        ModelSpec::new(model, 4).unwrap(),
        ActivationSpec::new(ActivationKind::Hanon),
        true,
    );

    let mut known = HashSet::new();
    let mut queries = Vec::new();
    for (split, t) in [(0, &train), (1, &valid), (2, &test)]
        .into_iter()
        .flat_map(|(s, v)| v.iter().map(move |t| (s, t)))
    {
        let r_inv = t.relation + n_r as u32;
        known.insert((t.head, t.relation, t.tail));
        known.insert((t.tail, r_inv, t.head));
        if split == 2 {
            queries.push((t.head, t.relation, t.tail));
            queries.push((t.tail, r_inv, t.head));
        }
    }
    let mut split_queries: Vec<_> = data
        .test
        .iter()
        .map(|t| (t.head, t.relation, t.tail))
        .collect();
    let expected: Vec<f64> = split_queries
        .iter()
        .map(|&(h, r, t)| sort_rank(&scorer.score_all(&params, h, r), h, r, t, &known))
        .collect();
    split_queries.sort_unstable();
    queries.sort_unstable();
    if split_queries != queries {
        return Err(format!(
            "augmented test split {split_queries:?} differs from {queries:?}"
        ));
    }
    let got = evaluate_split(&scorer, &params, &data.test, &data.filter, TieMode::Mean)
        .map_err(|e| e.to_string())?;
    let want = EvalReport::from_ranks(expected, 0.0, false).unwrap();
    if got.per_query_ranks != want.per_query_ranks {
        return Err(format!(
            "ranks {:?} vs oracle {:?}",
            got.per_query_ranks, want.per_query_ranks
        ));
    }
    if got.mrr != want.mrr || got.hits_at != want.hits_at {
        return Err(format!(
            "metrics {} {:?} vs oracle {} {:?}",
            got.mrr, got.hits_at, want.mrr, want.hits_at
        ));
    }
    Ok(())
}

/// 20 triples over 10 entities: three relations shifting an entity index
/// by 1, 3 and 5.
pub fn chain_toy() -> KgData {
    let mut triples = Vec::new();
    for (r, shift, count) in [(0, 1, 8), (1, 3, 7), (2, 5, 5)] {
        for h in 0..count {
            triples.push(Triple::new(h, r, h + shift));
        }
    }
    assert_eq!(triples.len(), 20);
    graph(10, 3, &triples, &triples, &triples)
}

pub fn overfit_config(model: ModelKind) -> TrainConfig {
    let mut c = TrainConfig::preset(LossKind::HaLE, ModelSpec::new(model, 16).unwrap());
    c.loss.sample_alpha = 1.0;
    c.learning_rate = 0.05;
    c.batch_size = 10;
    c.max_epochs = Some(500);
    c.eval_interval_epochs = Some(50);
    c.seed = 7;
    c
}

/// Filtered MRR on the training triples after HaLE training on [`chain_toy`].
pub fn overfit_mrr(model: ModelKind) -> f64 {
    let data = chain_toy();
    let config = overfit_config(model);
    let outcome = train(&config, &data).unwrap();
    evaluate_split(
        &config.scorer(),
        &outcome.best.parameters,
        &data.train,
        &data.filter,
        TieMode::Mean,
    )
    .unwrap()
    .mrr
}
