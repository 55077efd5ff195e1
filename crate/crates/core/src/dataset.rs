//! Labelled tweet records: CSV ingestion, label coding and k-fold partitions.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::text::TokenSequence;

/// Number of sentiment classes.
pub const NUM_CLASSES: usize = 3;

/// One unprocessed row from a dataset file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub text: String,
    pub label: String,
}

/// Sentiment class. `0 = pos`, `1 = neu`, `2 = neg`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassLabel(usize);

impl ClassLabel {
    pub const POS: ClassLabel = ClassLabel(0);
    pub const NEU: ClassLabel = ClassLabel(1);
    pub const NEG: ClassLabel = ClassLabel(2);

    pub fn new(index: usize) -> Result<Self> {
        if index < NUM_CLASSES {
            Ok(ClassLabel(index))
        } else {
            Err(Error::InvalidArgument(format!(
                "class index {index} not in 0..{NUM_CLASSES}"
            )))
        }
    }

    pub fn index(self) -> usize {
        self.0
    }

    /// Inverse of [`map_label`].
    pub fn name(self) -> &'static str {
        match self.0 {
            0 => "pos",
            1 => "neu",
            _ => "neg",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Map a textual label onto its class index.
pub fn map_label(label: &str) -> Result<ClassLabel> {
    match label {
        "pos" => Ok(ClassLabel::POS),
        "neu" => Ok(ClassLabel::NEU),
        "neg" => Ok(ClassLabel::NEG),
        other => Err(Error::InvalidArgument(format!("unknown label `{other}`"))),
    }
}

/// A one-hot class vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHot(Vec<f64>);

impl OneHot {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

pub fn one_hot(label: usize, num_classes: usize) -> Result<OneHot> {
    if label >= num_classes {
        return Err(Error::InvalidArgument(format!(
            "class index {label} out of range for {num_classes} classes"
        )));
    }
    let mut v = vec![0.0; num_classes];
    v[label] = 1.0;
    Ok(OneHot(v))
}

/// Names of the text and label columns in a dataset file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub text_column: String,
    pub label_column: String,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            text_column: "text".into(),
            label_column: "label".into(),
        }
    }
}

/// Read a headered, RFC-4180 CSV file into records, in file order.
///
/// Data rows are numbered from 1 (the header is row 0) in error messages.
pub fn load_dataset(path: &Path, schema: &Schema) -> Result<Vec<RawRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(file, schema)
}

/// [`load_dataset`] over any reader.
pub fn read_records<R: std::io::Read>(reader: R, schema: &Schema) -> Result<Vec<RawRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let text_idx = column(&schema.text_column)?;
    let label_idx = column(&schema.label_column)?;

    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let label = row.get(label_idx).unwrap_or_default().trim().to_string();
        if map_label(&label).is_err() {
            return Err(Error::UnknownLabel { row: i + 1, label });
        }
        out.push(RawRecord {
            text: row.get(text_idx).unwrap_or_default().to_string(),
            label,
        });
    }
    Ok(out)
}

/// A cleaned, encoded example ready for a classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub tokens: TokenSequence,
    pub label: ClassLabel,
}

impl LabeledExample {
    pub fn one_hot(&self) -> OneHot {
        one_hot(self.label.index(), NUM_CLASSES).expect("ClassLabel is always in range")
    }
}

/// Assignment of examples to `k` balanced folds.
///
/// The permutation is a Fisher-Yates shuffle driven by ChaCha8 seeded with
/// `seed`; the example at shuffled position `p` lands in fold `p % k`, so the
/// first `n % k` folds hold one extra example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    k: usize,
    seed: u64,
    assignments: Vec<usize>,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fold index per example.
    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    /// Example indices held out in `fold`, ascending.
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|&(_, &f)| f == fold)
            .map(|(i, _)| i)
            .collect()
    }

    /// Example indices used for training when `fold` is held out, ascending.
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|&(_, &f)| f != fold)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 || k > n {
        return Err(Error::InvalidArgument(format!(
            "k-fold needs 2 <= k <= n, got k = {k}, n = {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut assignments = vec![0; n];
    for (pos, &example) in order.iter().enumerate() {
        assignments[example] = pos % k;
    }
    Ok(FoldPlan {
        k,
        seed,
        assignments,
    })
}
