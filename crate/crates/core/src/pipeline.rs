//! Glue from raw CSV records to model-ready examples and embeddings.

use std::io::BufReader;

use crate::config::RunConfig;
use crate::dataset::{map_label, LabeledExample, RawRecord};
use crate::encoder::{init_or_load_weights, Encoder, WeightSource};
use crate::error::{Error, Result};
use crate::glove::{build_cooccurrence_weighted, train_glove_traced, EmbeddingMatrix};
use crate::model::{EmbeddingKind, EmbeddingSource};
use crate::text::{build_vocab, clean_text, encode_pad, CleaningConfig, TokenSequence, Vocabulary};

/// Cleaned texts, their vocabulary and the encoded examples.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub cleaned: Vec<String>,
    pub vocab: Vocabulary,
    pub examples: Vec<LabeledExample>,
}

pub fn clean_records(records: &[RawRecord], cleaning: &CleaningConfig) -> Vec<String> {
    records.iter().map(|r| clean_text(&r.text, cleaning)).collect()
}

/// Clean, build the vocabulary over the cleaned texts, then encode to
/// `seq_len`.
pub fn prepare(
    records: &[RawRecord],
    cleaning: &CleaningConfig,
    min_count: usize,
    seq_len: usize,
) -> Result<Prepared> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("dataset has no rows".into()));
    }
    let cleaned = clean_records(records, cleaning);
    let vocab = build_vocab(&cleaned, min_count)?;
    let examples = encode_cleaned(records, &cleaned, &vocab, seq_len)?;
    Ok(Prepared {
        cleaned,
        vocab,
        examples,
    })
}

fn encode_cleaned(
    records: &[RawRecord],
    cleaned: &[String],
    vocab: &Vocabulary,
    seq_len: usize,
) -> Result<Vec<LabeledExample>> {
    records
        .iter()
        .zip(cleaned)
        .enumerate()
        .map(|(i, (r, text))| {
            let label = map_label(&r.label).map_err(|_| Error::UnknownLabel {
                row: i + 1,
                label: r.label.clone(),
            })?;
            Ok(LabeledExample {
                tokens: encode_pad(text, vocab, seq_len)?,
                label,
            })
        })
        .collect()
}

/// Encode records against an existing vocabulary.
pub fn encode_records(
    records: &[RawRecord],
    cleaning: &CleaningConfig,
    vocab: &Vocabulary,
    seq_len: usize,
) -> Result<Vec<LabeledExample>> {
    encode_cleaned(records, &clean_records(records, cleaning), vocab, seq_len)
}

/// Unpadded id sequences for co-occurrence counting.
pub fn corpus_sequences(cleaned: &[String], vocab: &Vocabulary) -> Result<Vec<TokenSequence>> {
    cleaned
        .iter()
        .map(|t| {
            let n = t.split_whitespace().count().max(1);
            encode_pad(t, vocab, n)
        })
        .collect()
}

/// Train GloVe on the cleaned corpus. Returns the table and the objective
/// before training and after each epoch.
pub fn train_embeddings(
    cfg: &RunConfig,
    cleaned: &[String],
    vocab: &Vocabulary,
) -> Result<(EmbeddingMatrix, Vec<f64>)> {
    let glove = cfg.glove_config();
    let corpus = corpus_sequences(cleaned, vocab)?;
    let x = build_cooccurrence_weighted(&corpus, vocab.size(), glove.window, glove.weighting)?;
    let (model, trace) = train_glove_traced(&x, &glove)?;
    Ok((EmbeddingMatrix::from_glove(&model), trace))
}

/// Embedding input for `kind`: loaded from the configured file when one is
/// given, otherwise a seeded encoder or GloVe trained on `cleaned`.
pub fn embedding_source(
    cfg: &RunConfig,
    kind: EmbeddingKind,
    cleaned: &[String],
    vocab: &Vocabulary,
) -> Result<EmbeddingSource> {
    match kind {
        EmbeddingKind::Bert => match &cfg.encoder_weights {
            Some(path) => {
                let ec = cfg.encoder_config();
                let weights = init_or_load_weights(&ec, vocab.size(), WeightSource::File(path))?;
                Ok(EmbeddingSource::BertWeights(Encoder::new(ec, weights)?))
            }
            None => Ok(EmbeddingSource::Bert {
                vocab_size: vocab.size(),
            }),
        },
        EmbeddingKind::Glove => match &cfg.glove_vectors {
            Some(path) => {
                let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
                Ok(EmbeddingSource::Glove(EmbeddingMatrix::read_text(
                    BufReader::new(f),
                    vocab,
                )?))
            }
            None => Ok(EmbeddingSource::Glove(train_embeddings(cfg, cleaned, vocab)?.0)),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(text: &str, label: &str) -> RawRecord {
        RawRecord {
            text: text.into(),
            label: label.into(),
        }
    }

    #[test]
    fn prepare_encodes_and_labels() {
        let recs = [rec("Vaccines save lives", "pos"), rec("so tired of this", "neg")];
        let p = prepare(&recs, &CleaningConfig::default(), 1, 5).unwrap();
        assert_eq!(p.cleaned[0], "vaccines save lives");
        assert_eq!(p.cleaned[1], "tired");
        assert_eq!(p.examples[0].tokens.true_length, 3);
        assert_eq!(p.examples[1].label.index(), 2);
        assert!(p.examples.iter().all(|e| e.tokens.ids.len() == 5));
    }

    #[test]
    fn bad_label_names_the_row() {
        let recs = [rec("a", "pos"), rec("b", "meh")];
        let err = prepare(&recs, &CleaningConfig::default(), 1, 4).unwrap_err();
        assert!(matches!(err, Error::UnknownLabel { row: 2, .. }), "{err}");
    }
}
