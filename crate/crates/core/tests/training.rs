mod common;

use common::{chain_toy, graph, overfit_mrr};
use hale::kgdata::Triple;
use hale::losses::LossKind;
use hale::scoring::{ModelKind, ModelSpec};
use hale::trainer::checkpoint::{load_checkpoint, save_checkpoint};
use hale::trainer::{train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn hale_memorizes_toy_graph_with_every_model() {
    for model in ModelKind::ALL {
        let mrr = overfit_mrr(model);
        assert_eq!(mrr, 1.0, "{}", model.name());
    }
}

#[test]
fn every_strategy_lowers_its_loss_on_the_toy_graph() {
    let data = chain_toy();
    for loss in LossKind::ALL {
        let mut c = TrainConfig::preset(loss, ModelSpec::new(ModelKind::RotE, 8).unwrap());
        c.batch_size = 10;
        c.max_epochs = Some(60);
        c.learning_rate = 0.02;
        c.loss.sample_alpha = 1.0;
        let out = train(&c, &data).unwrap();
        let (first, last) = (out.epoch_losses[0], *out.epoch_losses.last().unwrap());
        assert!(last < first, "{}: {first} -> {last}", loss.name());
    }
}

#[test]
fn reloaded_checkpoint_scores_identically() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let triples: Vec<Triple> = (0..200)
        .map(|_| {
            Triple::new(
                rng.random_range(0..40),
                rng.random_range(0..4),
                rng.random_range(0..40),
            )
        })
        .collect();
    let data = graph(40, 4, &triples[..150], &triples[150..175], &triples[175..]);
    for model in ModelKind::ALL {
        let mut c = TrainConfig::preset(LossKind::HaLE, ModelSpec::new(model, 8).unwrap());
        c.max_epochs = Some(3);
        c.batch_size = 32;
        let out = train(&c, &data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_checkpoint(&path, &out.best).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, out.best);
        let (a, b) = (out.best.config.scorer(), back.config.scorer());
        for t in &triples[..100] {
            let before = a.score_triple(&out.best.parameters, t.head, t.relation, t.tail);
            let after = b.score_triple(&back.parameters, t.head, t.relation, t.tail);
            assert_eq!(before.to_bits(), after.to_bits());
        }
    }
}
