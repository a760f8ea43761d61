//! Cross-module integration: ingest -> train -> checkpoint -> evaluate.

use fawmf::checkpoint;
use fawmf::evalrank;
use fawmf::fbgd::{self, StopRule};
use fawmf::ingest::{self, LogFormat};
use fawmf::model::{HyperParams, ModelParams};
use fawmf::rng;
use fawmf::sgd;
use fawmf::synth;

use std::io::Write;

fn hyper(k: usize, d: usize, lr: f64) -> HyperParams {
    HyperParams {
        latent_dim: k,
        communities: d,
        learning_rate: lr,
        ..HyperParams::default()
    }
}

#[test]
fn cached_and_naive_trainers_walk_the_same_trajectory() {
    let hy = hyper(4, 3, 0.05);
    let x = synth::random_matrix(50, 50, 0.1, 401);
    let init = ModelParams::init(&hy, 50, 50);
    let stop = StopRule::new(8, 0.0);

    let (fast_params, fast_hist) = fbgd::train(init.clone(), &hy, &x, stop).unwrap();
    let (naive_params, naive_hist) = fbgd::train_naive(init, &hy, &x, stop).unwrap();

    assert_eq!(fast_hist.records.len(), naive_hist.records.len());
    for (a, b) in fast_hist.records.iter().zip(&naive_hist.records) {
        let rel = (a.objective - b.objective).abs() / b.objective.abs().max(1e-12);
        assert!(rel <= 1e-9, "epoch {}: J rel diff {rel}", a.epoch);
    }
    // parameters stay close too (same start, near-identical gradients)
    let max_diff = fast_params
        .u
        .as_slice()
        .iter()
        .zip(naive_params.u.as_slice())
        .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
    assert!(max_diff < 1e-9, "factor drift {max_diff}");
}

#[test]
fn full_pipeline_from_log_to_metrics() {
    // synthetic interaction log with a planted block structure: users and
    // items split into two halves that mostly co-consume
    let mut text = String::new();
    let mut gen = rng::seeded(83);
    for user in 0..60u32 {
        for item in 0..40u32 {
            let same_block = (user < 30) == (item < 20);
            let p = if same_block { 0.35 } else { 0.04 };
            if rng::unit(&mut gen) < p {
                text.push_str(&format!("u{user}\tm{item}\t{}\n", 1 + (user + item) % 5));
            }
        }
    }
    let mut file = tempfile::NamedTempFile::new().unwrap();
    file.write_all(text.as_bytes()).unwrap();

    let log = ingest::load_interactions(file.path(), LogFormat::Tsv).unwrap();
    let (matrix, maps) = ingest::binarize_and_index(&log).unwrap();
    let (matrix, kept) = ingest::filter_min_item_interactions(&matrix, 3).unwrap();
    assert_eq!(maps.users.len(), matrix.n_users());
    assert!(kept.len() <= 40);

    let folds = ingest::kfold_split(&matrix, 5, rng::fork(9, "split")).unwrap();
    let fold = &folds[0];

    let hy = hyper(6, 4, 0.05);
    let params = ModelParams::init(&hy, matrix.n_users(), matrix.n_items());
    let (trained, history) =
        fbgd::train(params, &hy, &fold.train, StopRule::new(60, 1e-9)).unwrap();
    assert!(history.records.len() > 5);
    let first = history.records.first().unwrap().objective;
    let last = history.records.last().unwrap().objective;
    assert!(last < first, "training did not reduce J: {first} -> {last}");

    // checkpoint round trip through a real file
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("model.ckpt");
    checkpoint::save(&trained, &ckpt).unwrap();
    let reloaded = checkpoint::load(&ckpt).unwrap();
    assert_eq!(trained, reloaded);

    // the trained model should beat popularity on this block-structured data
    let report = evalrank::evaluate(&reloaded, &fold.train, &fold.test, 5).unwrap();
    let popularity = ingest::item_popularity(&fold.train);
    let pop_report = evalrank::evaluate_itempop(&popularity, &fold.train, &fold.test, 5).unwrap();
    assert!(
        report.precision > pop_report.precision,
        "model Pre@5 {:.4} vs item-pop {:.4}",
        report.precision,
        pop_report.precision
    );
}

#[test]
fn training_is_deterministic_given_seed() {
    let hy = hyper(3, 3, 0.05);
    let x = synth::random_matrix(20, 20, 0.2, 405);
    let stop = StopRule::new(5, 0.0);
    let (a, _) = fbgd::train(ModelParams::init(&hy, 20, 20), &hy, &x, stop).unwrap();
    let (b, _) = fbgd::train(ModelParams::init(&hy, 20, 20), &hy, &x, stop).unwrap();
    assert_eq!(a, b);

    let cfg = sgd::SamplerConfig {
        kind: sgd::SamplerKind::Itempop,
        ratio: 2,
        seed: 11,
    };
    let (a, _) = sgd::train(ModelParams::init(&hy, 20, 20), &hy, &x, &cfg, stop).unwrap();
    let (b, _) = sgd::train(ModelParams::init(&hy, 20, 20), &hy, &x, &cfg, stop).unwrap();
    assert_eq!(a, b);
}

#[test]
fn sgd_history_shares_the_csv_format() {
    let hy = hyper(3, 2, 0.02);
    let x = synth::random_matrix(15, 15, 0.2, 407);
    let cfg = sgd::SamplerConfig {
        kind: sgd::SamplerKind::Uniform,
        ratio: 1,
        seed: 3,
    };
    let (_, history) =
        sgd::train(ModelParams::init(&hy, 15, 15), &hy, &x, &cfg, StopRule::new(4, 0.0)).unwrap();
    let mut out = Vec::new();
    history.write_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.starts_with("epoch,objective,epoch_seconds,grad_max_norm\n"));
    assert_eq!(text.lines().count(), 5);
}
