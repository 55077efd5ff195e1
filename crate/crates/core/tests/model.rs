mod common;

use common::*;
use hybridsent::dataset::ClassLabel;
use hybridsent::layers::HeadActivation;
use hybridsent::model::{
    evaluate, evaluate_accuracy, fit, predict, EmbeddingLayer, HybridSpec, LayerKind, TrainConfig,
};
use proptest::prelude::*;

fn tiny_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 10,
        ..TrainConfig::default()
    }
}

#[test]
fn every_scenario_has_its_layer_order() {
    use LayerKind::*;
    let expected: [(u8, Vec<LayerKind>); 8] = [
        (1, vec![Encoder, Conv1D { filters: 5 }, MaxPool, Dropout, BiLstm { units: 7 }, Dropout]),
        (2, vec![Encoder, BiLstm { units: 5 }, Dropout, Conv1D { filters: 7 }, MaxPool, Dropout]),
        (3, vec![Encoder, Conv1D { filters: 5 }, MaxPool, Dropout]),
        (4, vec![Encoder, BiLstm { units: 5 }, Dropout]),
        (5, vec![GloveEmbedding, Conv1D { filters: 5 }, MaxPool, Dropout, BiLstm { units: 7 }, Dropout]),
        (6, vec![GloveEmbedding, BiLstm { units: 5 }, Dropout, Conv1D { filters: 7 }, MaxPool, Dropout]),
        (7, vec![GloveEmbedding, Conv1D { filters: 5 }, MaxPool, Dropout]),
        (8, vec![GloveEmbedding, BiLstm { units: 5 }, Dropout]),
    ];
    for (id, mut layers) in expected {
        layers.extend([Flatten, Dense { outputs: 3 }]);
        let two = matches!(id, 1 | 2 | 5 | 6);
        let opts = toy_options(3, HeadActivation::default(), 4);
        let model = toy_model(id, 5, 7, MICRO_VOCAB, MICRO_LEN, &opts, 0);
        assert_eq!(model.layer_kinds(), layers, "scenario {id}");
        assert_eq!(HybridSpec::new(id, 5, two.then_some(7)).unwrap().layer_kinds(), layers);
    }
}

#[test]
fn outputs_are_three_way_and_in_range() {
    let data = micro_benchmark(1);
    for s in 1..=8 {
        for head in [HeadActivation::Sigmoid, HeadActivation::NormalizedSigmoid, HeadActivation::Softmax] {
            let model = toy_model(s, 4, 3, MICRO_VOCAB, MICRO_LEN, &toy_options(3, head, 4), 2);
            for ex in &data[..6] {
                let p = model.predict_proba(&ex.tokens).unwrap();
                assert_eq!(p.len(), 3);
                assert!(p.iter().all(|&v| v > 0.0 && v < 1.0), "{s} {head:?} {p}");
                if head != HeadActivation::Sigmoid {
                    assert!((p.sum() - 1.0).abs() < 1e-9);
                }
            }
        }
    }
}

#[test]
fn stack_order_changes_the_output() {
    let data = micro_benchmark(2);
    let opts = toy_options(3, HeadActivation::Softmax, 4);
    for (a, b) in [(1, 2), (5, 6)] {
        let ma = toy_model(a, 4, 4, MICRO_VOCAB, MICRO_LEN, &opts, 3);
        let mb = toy_model(b, 4, 4, MICRO_VOCAB, MICRO_LEN, &opts, 3);
        let pa = ma.predict_proba(&data[0].tokens).unwrap();
        let pb = mb.predict_proba(&data[0].tokens).unwrap();
        assert!((&pa - &pb).iter().any(|d| d.abs() > 1e-9), "{a} vs {b}");
    }
}

#[test]
fn zero_epochs_leave_the_model_alone() {
    let data = micro_benchmark(0);
    let opts = toy_options(3, HeadActivation::default(), 4);
    let mut m = toy_model(1, 4, 4, MICRO_VOCAB, MICRO_LEN, &opts, 0);
    let before = m.clone();
    fit(&mut m, &data, &tiny_cfg(0)).unwrap();
    assert_eq!(m, before);
    assert!(m.history.is_empty());
}

#[test]
fn training_is_deterministic_and_recorded() {
    let data = micro_benchmark(0);
    let opts = toy_options(3, HeadActivation::default(), 4);
    let run = || {
        let mut m = toy_model(2, 4, 4, MICRO_VOCAB, MICRO_LEN, &opts, 5);
        fit(&mut m, &data, &tiny_cfg(3)).unwrap();
        m
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert_eq!(a.history.len(), 3);
    assert_eq!(a.history.iter().map(|h| h.epoch).collect::<Vec<_>>(), vec![1, 2, 3]);
    let mut csv = Vec::new();
    a.write_history_csv(&mut csv).unwrap();
    let csv = String::from_utf8(csv).unwrap();
    assert!(csv.starts_with("epoch,loss,accuracy\n1,"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn glove_is_frozen_and_encoder_is_tuned() {
    let data = micro_benchmark(0);
    let opts = toy_options(3, HeadActivation::default(), 4);
    for s in [3, 7] {
        let mut m = toy_model(s, 4, 4, MICRO_VOCAB, MICRO_LEN, &opts, 0);
        let before = m.embedding.clone();
        fit(&mut m, &data, &tiny_cfg(1)).unwrap();
        match (&before, &m.embedding) {
            (EmbeddingLayer::Glove(a), EmbeddingLayer::Glove(b)) => assert_eq!(a, b),
            (EmbeddingLayer::Bert(a), EmbeddingLayer::Bert(b)) => {
                assert_ne!(a.weights.token_embedding.value, b.weights.token_embedding.value)
            }
            _ => unreachable!(),
        }
    }
}

#[test]
fn early_losses_do_not_increase_without_dropout() {
    let data = micro_benchmark(0);
    for s in 1..=8 {
        let opts = toy_options(3, HeadActivation::default(), 16);
        let mut m = toy_model(s, 16, 16, MICRO_VOCAB, MICRO_LEN, &opts, 0);
        let cfg = TrainConfig {
            dropout: 0.0,
            ..tiny_cfg(3)
        };
        fit(&mut m, &data, &cfg).unwrap();
        let l: Vec<f64> = m.history.iter().map(|h| h.loss).collect();
        assert!(l[1] <= l[0] && l[2] <= l[1], "scenario {s}: {l:?}");
    }
}

#[test]
fn predictions_are_repeatable_and_scored() {
    let data = micro_benchmark(4);
    let opts = toy_options(3, HeadActivation::default(), 4);
    let m = toy_model(8, 4, 4, MICRO_VOCAB, MICRO_LEN, &opts, 1);
    let seqs: Vec<_> = data.iter().map(|e| e.tokens.clone()).collect();
    let a = predict(&m, &seqs).unwrap();
    assert_eq!(a, predict(&m, &seqs).unwrap());
    let truth: Vec<ClassLabel> = data.iter().map(|e| e.label).collect();
    let (acc, loss) = evaluate(&m, &data).unwrap();
    assert_eq!(acc, evaluate_accuracy(&a, &truth).unwrap());
    assert!(loss.is_finite() && loss > 0.0);
}

#[test]
fn wrong_sequence_length_is_rejected() {
    let opts = toy_options(3, HeadActivation::default(), 4);
    let m = toy_model(7, 4, 4, MICRO_VOCAB, MICRO_LEN, &opts, 1);
    let short = hybridsent::text::TokenSequence { ids: vec![2, 3], true_length: 2 };
    assert!(m.predict_proba(&short).is_err());
}

fn labels(v: &[usize]) -> Vec<ClassLabel> {
    v.iter().map(|&i| ClassLabel::new(i).unwrap()).collect()
}

proptest! {
    #[test]
    fn accuracy_is_bounded_and_relabeling_invariant(
        pairs in prop::collection::vec((0usize..3, 0usize..3), 1..60),
        perm in Just([0usize, 1, 2]).prop_shuffle(),
    ) {
        let (p, t): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let acc = evaluate_accuracy(&labels(&p), &labels(&t)).unwrap();
        prop_assert!((0.0..=100.0).contains(&acc));
        let pp: Vec<usize> = p.iter().map(|&i| perm[i]).collect();
        let tt: Vec<usize> = t.iter().map(|&i| perm[i]).collect();
        prop_assert_eq!(acc, evaluate_accuracy(&labels(&pp), &labels(&tt)).unwrap());
    }
}
