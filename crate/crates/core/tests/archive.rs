mod common;

use common::*;
use hybridsent::archive::{load_model, save_model, ModelArchive, ARCHIVE_VERSION};
use hybridsent::config::RunConfig;
use hybridsent::layers::HeadActivation;
use hybridsent::model::{fit, TrainConfig};
use hybridsent::text::{build_vocab, Vocabulary};
use hybridsent::Error;

fn micro_vocab() -> Vocabulary {
    let words: Vec<String> = (2..MICRO_VOCAB).map(|i| format!("w{i}")).collect();
    build_vocab(&[words.join(" ")], 1).unwrap()
}

fn trained(scenario: u8, head: HeadActivation) -> ModelArchive {
    let opts = toy_options(3, head, 4);
    let mut model = toy_model(scenario, 4, 3, MICRO_VOCAB, MICRO_LEN, &opts, 9);
    let cfg = TrainConfig { epochs: 2, batch_size: 10, ..TrainConfig::default() };
    fit(&mut model, &micro_benchmark(0), &cfg).unwrap();
    let mut config = RunConfig::default();
    config.scenario = Some(scenario);
    ModelArchive { config, vocab: micro_vocab(), model }
}

#[test]
fn every_scenario_round_trips_bit_exactly() {
    let inputs = random_sequences(50, 1);
    for s in 1..=8 {
        let a = trained(s, HeadActivation::default());
        let b = ModelArchive::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(a, b, "scenario {s}");
        for x in &inputs {
            let pa = a.model.predict_proba(x).unwrap();
            let pb = b.model.predict_proba(x).unwrap();
            assert!(pa.iter().zip(&pb).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
    }
}

#[test]
fn file_round_trip_keeps_the_head() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    let a = trained(6, HeadActivation::Softmax);
    save_model(&a, &path).unwrap();
    let b = load_model(&path).unwrap();
    assert_eq!(b.model.head(), HeadActivation::Softmax);
    assert_eq!(b.model.spec.scenario_id, 6);
    assert_eq!(b.model.history, a.model.history);
}

#[test]
fn damaged_archives_are_refused() {
    let bytes = trained(3, HeadActivation::default()).to_bytes();
    for cut in [0, 7, 12, 40, bytes.len() / 2, bytes.len() - 1] {
        let err = ModelArchive::from_bytes(&bytes[..cut]).unwrap_err();
        assert!(matches!(err, Error::CorruptArchive(_)), "cut {cut}: {err}");
    }
    let mut wrong = bytes.clone();
    wrong[8..12].copy_from_slice(&(ARCHIVE_VERSION + 1).to_le_bytes());
    let err = ModelArchive::from_bytes(&wrong).unwrap_err();
    assert!(matches!(err, Error::VersionMismatch { .. }));
    assert!(err.to_string().contains("version"));
    let mut magic = bytes;
    magic[0] = b'X';
    assert!(matches!(ModelArchive::from_bytes(&magic), Err(Error::CorruptArchive(_))));
}
