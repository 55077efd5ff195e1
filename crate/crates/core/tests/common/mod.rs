#![allow(dead_code)]

pub mod gradcheck;

use hybridsent::dataset::{ClassLabel, LabeledExample};
use hybridsent::encoder::EncoderConfig;
use hybridsent::glove::EmbeddingMatrix;
use hybridsent::layers::HeadActivation;
use hybridsent::model::{compose_model, EmbeddingKind, EmbeddingSource, HybridModel, HybridSpec, ModelOptions};
use hybridsent::text::TokenSequence;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Ids 2, 3, 4 are class markers; 5.. are filler.
pub const MICRO_VOCAB: usize = 12;
pub const MICRO_LEN: usize = 8;

/// 30 examples, 10 per class; the class is the marker token that appears.
pub fn micro_benchmark(seed: u64) -> Vec<LabeledExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..30)
        .map(|i| {
            let class = i % 3;
            let true_length = rng.random_range(3..=MICRO_LEN);
            let mut ids = vec![0; MICRO_LEN];
            for id in ids.iter_mut().take(true_length) {
                *id = rng.random_range(5..MICRO_VOCAB);
            }
            ids[rng.random_range(0..true_length)] = 2 + class;
            LabeledExample {
                tokens: TokenSequence { ids, true_length },
                label: ClassLabel::new(class).unwrap(),
            }
        })
        .collect()
}

pub fn random_table(vocab: usize, dim: usize, seed: u64) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = Array2::from_shape_fn((vocab, dim), |_| rng.random_range(-1.0..1.0));
    table.row_mut(0).fill(0.0);
    EmbeddingMatrix { table }
}

pub fn toy_encoder(hidden: usize) -> EncoderConfig {
    EncoderConfig {
        num_layers: 2,
        hidden,
        heads: 2,
        max_positions: MICRO_LEN,
        ffn_dim: 2 * hidden,
        dropout: 0.5,
        seed: 0,
    }
}

pub fn toy_options(kernel: usize, head: HeadActivation, hidden: usize) -> ModelOptions {
    ModelOptions {
        kernel,
        head,
        encoder: toy_encoder(hidden),
        ..ModelOptions::default()
    }
}

pub fn toy_model(
    scenario: u8,
    f1: usize,
    f2: usize,
    vocab: usize,
    seq_len: usize,
    opts: &ModelOptions,
    seed: u64,
) -> HybridModel {
    let two = matches!(scenario, 1 | 2 | 5 | 6);
    let spec = HybridSpec::new(scenario, f1, two.then_some(f2)).unwrap();
    let source = match spec.embedding {
        EmbeddingKind::Bert => EmbeddingSource::Bert { vocab_size: vocab },
        EmbeddingKind::Glove => EmbeddingSource::Glove(random_table(vocab, opts.encoder.hidden, seed + 1)),
    };
    compose_model(&spec, source, seq_len, opts, seed).unwrap()
}

pub fn toy_context(scenario: u8, hidden: usize, seed: u64) -> hybridsent::search::ModelContext {
    let opts = toy_options(3, HeadActivation::default(), hidden);
    let source = match hybridsent::model::scenario_layout(scenario).unwrap().0 {
        EmbeddingKind::Bert => EmbeddingSource::Bert { vocab_size: MICRO_VOCAB },
        EmbeddingKind::Glove => EmbeddingSource::Glove(random_table(MICRO_VOCAB, hidden, seed)),
    };
    hybridsent::search::ModelContext { source, seq_len: MICRO_LEN, options: opts }
}

/// Random token sequences of length `MICRO_LEN` over the micro vocabulary.
pub fn random_sequences(n: usize, seed: u64) -> Vec<TokenSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let true_length = rng.random_range(0..=MICRO_LEN);
            let mut ids = vec![0; MICRO_LEN];
            for id in ids.iter_mut().take(true_length) {
                *id = rng.random_range(1..MICRO_VOCAB);
            }
            TokenSequence { ids, true_length }
        })
        .collect()
}

/// A small labelled tweet CSV: each row carries one sentiment cue word plus
/// noise, URLs, mentions and hashtags.
pub fn tweet_csv(rows: usize, seed: u64) -> String {
    let cues = [["love", "great", "happy"], ["report", "today", "update"], ["hate", "awful", "sad"]];
    let names = ["pos", "neu", "neg"];
    let filler = ["vaccine", "covid", "people", "news", "world", "city", "week", "time"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::from("id,text,label\n");
    for i in 0..rows {
        let c = i % 3;
        let mut words: Vec<String> = (0..rng.random_range(2..5))
            .map(|_| filler[rng.random_range(0..filler.len())].to_string())
            .collect();
        let at = rng.random_range(0..=words.len());
        words.insert(at, cues[c][rng.random_range(0..3)].to_string());
        if rng.random_bool(0.3) {
            words.push("https://t.co/x".into());
        }
        if rng.random_bool(0.3) {
            words.insert(0, "@someone".into());
        }
        if rng.random_bool(0.3) {
            words.push("#Covid19!".into());
        }
        out.push_str(&format!("{i},\"{}\",{}\n", words.join(" "), names[c]));
    }
    out
}
