//! Global co-occurrence word vectors.
//!
//! The objective summed over the non-zero co-occurrence entries is
//!
//! ```text
//! J = sum_ij f(X_ij) * (v_i . u_j + b_i + c_j - ln X_ij)^2
//! f(x) = (x / x_max)^alpha  if x < x_max, else 1
//! ```
//!
//! where `v`/`b` are word vectors and biases and `u`/`c` their context
//! counterparts. Training runs AdaGrad over shuffled entries.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::text::{TokenSequence, Vocabulary, PAD_ID, UNK_ID};

/// How a pair at distance `k` contributes to the count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CountWeighting {
    /// Every pair adds 1.
    #[default]
    Flat,
    /// A pair at distance `k` adds `1/k`.
    Harmonic,
}

/// Sparse symmetric co-occurrence counts. Zero entries are never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceMatrix {
    entries: BTreeMap<(usize, usize), f64>,
    vocab_size: usize,
    window: usize,
}

impl CooccurrenceMatrix {
    pub fn new(vocab_size: usize, window: usize) -> Self {
        CooccurrenceMatrix {
            entries: BTreeMap::new(),
            vocab_size,
            window,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries.get(&(i, j)).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `(i, j, X_ij)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.entries.iter().map(|(&(i, j), &x)| (i, j, x))
    }

    fn add(&mut self, i: usize, j: usize, x: f64) {
        *self.entries.entry((i, j)).or_insert(0.0) += x;
    }

    /// Add another shard's counts into this one.
    pub fn merge(&mut self, other: &CooccurrenceMatrix) -> Result<()> {
        if other.vocab_size != self.vocab_size {
            return Err(Error::ShapeMismatch(format!(
                "merging co-occurrence over {} words into {}",
                other.vocab_size, self.vocab_size
            )));
        }
        for (i, j, x) in other.iter() {
            self.add(i, j, x);
        }
        Ok(())
    }

    /// Write `i j count` lines.
    pub fn write_triples<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (i, j, x) in self.iter() {
            writeln!(w, "{i} {j} {x}")?;
        }
        Ok(())
    }

    pub fn read_triples<R: BufRead>(r: R, vocab_size: usize, window: usize) -> Result<Self> {
        let mut m = CooccurrenceMatrix::new(vocab_size, window);
        for (n, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<cooccurrence>", e))?;
            let bad = || Error::InvalidArgument(format!("co-occurrence line {}: malformed", n + 1));
            let mut parts = line.split_whitespace();
            let i: usize = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let j: usize = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let x: f64 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            if i >= vocab_size || j >= vocab_size || !(x > 0.0) || !x.is_finite() {
                return Err(bad());
            }
            m.add(i, j, x);
        }
        Ok(m)
    }
}

/// Count every ordered pair of real tokens at distance `1..=window` within a
/// sequence. Padding and unknown tokens are skipped.
pub fn build_cooccurrence(
    corpus: &[TokenSequence],
    vocab_size: usize,
    window: usize,
) -> Result<CooccurrenceMatrix> {
    build_cooccurrence_weighted(corpus, vocab_size, window, CountWeighting::Flat)
}

pub fn build_cooccurrence_weighted(
    corpus: &[TokenSequence],
    vocab_size: usize,
    window: usize,
    weighting: CountWeighting,
) -> Result<CooccurrenceMatrix> {
    if window == 0 {
        return Err(Error::InvalidArgument("window must be >= 1".into()));
    }
    let mut m = CooccurrenceMatrix::new(vocab_size, window);
    let skip = |id: usize| id == PAD_ID || id == UNK_ID;
    for seq in corpus {
        let ids = &seq.ids;
        for (p, &a) in ids.iter().enumerate() {
            if skip(a) {
                continue;
            }
            if a >= vocab_size {
                return Err(Error::IdOutOfRange {
                    id: a,
                    size: vocab_size,
                });
            }
            for dist in 1..=window {
                let Some(&b) = ids.get(p + dist) else { break };
                if skip(b) {
                    continue;
                }
                if b >= vocab_size {
                    return Err(Error::IdOutOfRange {
                        id: b,
                        size: vocab_size,
                    });
                }
                let inc = match weighting {
                    CountWeighting::Flat => 1.0,
                    CountWeighting::Harmonic => 1.0 / dist as f64,
                };
                m.add(a, b, inc);
                m.add(b, a, inc);
            }
        }
    }
    Ok(m)
}

/// Saturating weight: `(x/x_max)^alpha` below `x_max`, 1 above.
pub fn weight_fn(x: f64, x_max: f64, alpha: f64) -> f64 {
    if x < x_max {
        (x / x_max).powf(alpha)
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GloveConfig {
    pub dim: usize,
    pub x_max: f64,
    pub alpha: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub window: usize,
    pub weighting: CountWeighting,
}

impl Default for GloveConfig {
    fn default() -> Self {
        GloveConfig {
            dim: 50,
            x_max: 100.0,
            alpha: 0.75,
            learning_rate: 0.05,
            epochs: 25,
            seed: 0,
            window: 5,
            weighting: CountWeighting::Flat,
        }
    }
}

impl GloveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidArgument("glove dim must be >= 1".into()));
        }
        if !(self.x_max > 0.0) {
            return Err(Error::InvalidArgument("x_max must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidArgument("alpha must lie in (0, 1]".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if self.window == 0 {
            return Err(Error::InvalidArgument("window must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GloveModel {
    pub word_vectors: Array2<f64>,
    pub context_vectors: Array2<f64>,
    pub word_bias: Array1<f64>,
    pub context_bias: Array1<f64>,
}

/// Gradient of one objective term with respect to the four parameter blocks
/// it touches.
#[derive(Debug, Clone, PartialEq)]
pub struct TermGradient {
    pub word: Array1<f64>,
    pub context: Array1<f64>,
    pub word_bias: f64,
    pub context_bias: f64,
}

impl GloveModel {
    /// Uniform initialisation in `(-0.5/dim, 0.5/dim)`.
    pub fn init(vocab_size: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with(vocab_size, dim, &mut rng)
    }

    fn init_with<R: Rng>(n: usize, dim: usize, rng: &mut R) -> Self {
        let lim = 0.5 / dim as f64;
        let mut draw = || rng.random_range(-lim..lim);
        let word_vectors = Array2::from_shape_simple_fn((n, dim), &mut draw);
        let context_vectors = Array2::from_shape_simple_fn((n, dim), &mut draw);
        let word_bias = Array1::from_shape_simple_fn(n, &mut draw);
        let context_bias = Array1::from_shape_simple_fn(n, &mut draw);
        GloveModel {
            word_vectors,
            context_vectors,
            word_bias,
            context_bias,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.word_vectors.nrows()
    }

    pub fn dim(&self) -> usize {
        self.word_vectors.ncols()
    }

    fn residual(&self, i: usize, j: usize, x: f64) -> f64 {
        self.word_vectors.row(i).dot(&self.context_vectors.row(j))
            + self.word_bias[i]
            + self.context_bias[j]
            - x.ln()
    }

    /// Value of a single `(i, j)` term of the objective.
    pub fn term(&self, i: usize, j: usize, x: f64, x_max: f64, alpha: f64) -> f64 {
        let r = self.residual(i, j, x);
        weight_fn(x, x_max, alpha) * r * r
    }

    pub fn term_gradient(&self, i: usize, j: usize, x: f64, x_max: f64, alpha: f64) -> TermGradient {
        let g = 2.0 * weight_fn(x, x_max, alpha) * self.residual(i, j, x);
        TermGradient {
            word: &self.context_vectors.row(j) * g,
            context: &self.word_vectors.row(i) * g,
            word_bias: g,
            context_bias: g,
        }
    }

    /// Emitted embeddings: word plus context vector per token.
    pub fn embeddings(&self) -> Array2<f64> {
        &self.word_vectors + &self.context_vectors
    }
}

pub fn glove_objective(model: &GloveModel, x: &CooccurrenceMatrix, cfg: &GloveConfig) -> Result<f64> {
    if model.vocab_size() != x.vocab_size() {
        return Err(Error::ShapeMismatch(format!(
            "model has {} words, matrix {}",
            model.vocab_size(),
            x.vocab_size()
        )));
    }
    Ok(x
        .iter()
        .map(|(i, j, v)| model.term(i, j, v, cfg.x_max, cfg.alpha))
        .sum())
}

/// Train and return the model.
pub fn train_glove(x: &CooccurrenceMatrix, cfg: &GloveConfig) -> Result<GloveModel> {
    train_glove_traced(x, cfg).map(|(m, _)| m)
}

/// Train and also return the objective before training and after each epoch.
pub fn train_glove_traced(x: &CooccurrenceMatrix, cfg: &GloveConfig) -> Result<(GloveModel, Vec<f64>)> {
    cfg.validate()?;
    if x.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot train on an empty co-occurrence matrix".into(),
        ));
    }
    let n = x.vocab_size();
    let dim = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = GloveModel::init_with(n, dim, &mut rng);

    // AdaGrad accumulators start at 1 so the first step is bounded by the rate.
    let mut gsq_w = Array2::<f64>::ones((n, dim));
    let mut gsq_c = Array2::<f64>::ones((n, dim));
    let mut gsq_bw = Array1::<f64>::ones(n);
    let mut gsq_bc = Array1::<f64>::ones(n);

    let mut entries: Vec<(usize, usize, f64)> = x.iter().collect();
    let mut trace = vec![glove_objective(&model, x, cfg)?];
    let lr = cfg.learning_rate;

    for epoch in 1..=cfg.epochs {
        entries.shuffle(&mut rng);
        for &(i, j, v) in &entries {
            let g = model.term_gradient(i, j, v, cfg.x_max, cfg.alpha);
            adagrad_row(
                model.word_vectors.row_mut(i),
                gsq_w.row_mut(i),
                g.word.view(),
                lr,
            );
            adagrad_row(
                model.context_vectors.row_mut(j),
                gsq_c.row_mut(j),
                g.context.view(),
                lr,
            );
            model.word_bias[i] -= lr * g.word_bias / gsq_bw[i].sqrt();
            gsq_bw[i] += g.word_bias * g.word_bias;
            model.context_bias[j] -= lr * g.context_bias / gsq_bc[j].sqrt();
            gsq_bc[j] += g.context_bias * g.context_bias;
        }
        let j = glove_objective(&model, x, cfg)?;
        if !j.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        trace.push(j);
    }
    Ok((model, trace))
}

fn adagrad_row(
    mut w: ndarray::ArrayViewMut1<f64>,
    mut gsq: ndarray::ArrayViewMut1<f64>,
    g: ArrayView1<f64>,
    lr: f64,
) {
    for ((w, gs), &g) in w.iter_mut().zip(gsq.iter_mut()).zip(g.iter()) {
        *w -= lr * g / gs.sqrt();
        *gs += g * g;
    }
}

/// Dense per-token vectors indexed by vocabulary id. Row 0 (padding) is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub table: Array2<f64>,
}

impl EmbeddingMatrix {
    pub fn from_glove(model: &GloveModel) -> Self {
        let mut table = model.embeddings();
        table.row_mut(PAD_ID).fill(0.0);
        EmbeddingMatrix { table }
    }

    pub fn dim(&self) -> usize {
        self.table.ncols()
    }

    pub fn vocab_size(&self) -> usize {
        self.table.nrows()
    }

    /// Write `token v1 v2 ... v_dim` lines, skipping the padding row.
    pub fn write_text<W: Write>(&self, vocab: &Vocabulary, mut w: W) -> std::io::Result<()> {
        for (id, tok) in vocab.tokens().enumerate().skip(1) {
            write!(w, "{tok}")?;
            for v in self.table.row(id) {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Read `token v1 ... v_dim` lines for `vocab`. Tokens absent from the
    /// file get zero vectors; file tokens absent from the vocabulary are
    /// ignored.
    pub fn read_text<R: BufRead>(r: R, vocab: &Vocabulary) -> Result<Self> {
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
        let mut dim = None;
        for (n, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<embeddings>", e))?;
            let mut parts = line.split(' ');
            let Some(tok) = parts.next().filter(|t| !t.is_empty()) else {
                continue;
            };
            let vals = parts
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| {
                    Error::InvalidArgument(format!("embedding line {}: bad number", n + 1))
                })?;
            match dim {
                None => dim = Some(vals.len()),
                Some(d) if d != vals.len() => {
                    return Err(Error::ShapeMismatch(format!(
                        "embedding line {}: {} values, expected {d}",
                        n + 1,
                        vals.len()
                    )))
                }
                _ => {}
            }
            if let Some(id) = vocab.get(tok).filter(|&id| id != PAD_ID) {
                rows.push((id, vals));
            }
        }
        let dim = dim.filter(|&d| d > 0).ok_or_else(|| {
            Error::InvalidArgument("embedding file holds no vectors".into())
        })?;
        let mut table = Array2::zeros((vocab.size(), dim));
        for (id, vals) in rows {
            table.row_mut(id).assign(&Array1::from(vals));
        }
        Ok(EmbeddingMatrix { table })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{build_vocab, encode_pad};

    fn seq(ids: &[usize]) -> TokenSequence {
        TokenSequence {
            ids: ids.to_vec(),
            true_length: ids.iter().take_while(|&&i| i != 0).count(),
        }
    }

    #[test]
    fn counts_adjacent_pairs() {
        let (a, b) = (2, 3);
        let m = build_cooccurrence(&[seq(&[a, b, a])], 4, 1).unwrap();
        assert_eq!(m.get(a, b), 2.0);
        assert_eq!(m.get(b, a), 2.0);
        assert_eq!(m.get(a, a), 0.0);
        assert_eq!(m.len(), 2);

        let m = build_cooccurrence(&[seq(&[a, b, a])], 4, 2).unwrap();
        assert_eq!(m.get(a, a), 2.0);
    }

    #[test]
    fn single_token_and_specials_contribute_nothing() {
        assert!(build_cooccurrence(&[seq(&[5])], 6, 3).unwrap().is_empty());
        let m = build_cooccurrence(&[seq(&[2, UNK_ID, 3, 0, 0])], 4, 5).unwrap();
        assert_eq!(m.get(2, 3), 1.0);
        assert_eq!(m.len(), 2);
        assert!(build_cooccurrence(&[seq(&[2])], 4, 0).is_err());
        assert!(build_cooccurrence(&[seq(&[2, 9])], 4, 1).is_err());
    }

    #[test]
    fn doubling_corpus_doubles_counts() {
        let v = build_vocab(&["the vaccine rollout is slow but the vaccine works"], 1).unwrap();
        let s = encode_pad("the vaccine rollout is slow but the vaccine works", &v, 20).unwrap();
        let once = build_cooccurrence(&[s.clone()], v.size(), 3).unwrap();
        let twice = build_cooccurrence(&[s.clone(), s], v.size(), 3).unwrap();
        assert_eq!(once.len(), twice.len());
        for (i, j, x) in once.iter() {
            assert_eq!(twice.get(i, j), 2.0 * x);
            assert_eq!(once.get(j, i), x);
        }
        let mut merged = once.clone();
        merged.merge(&once).unwrap();
        assert_eq!(merged, twice);
    }

    #[test]
    fn harmonic_weighting() {
        let m = build_cooccurrence_weighted(&[seq(&[2, 3, 4])], 5, 2, CountWeighting::Harmonic)
            .unwrap();
        assert_eq!(m.get(2, 3), 1.0);
        assert_eq!(m.get(2, 4), 0.5);
    }

    #[test]
    fn weight_values() {
        assert_eq!(weight_fn(100.0, 100.0, 0.75), 1.0);
        assert_eq!(weight_fn(0.0, 100.0, 0.75), 0.0);
        assert!((weight_fn(25.0, 100.0, 0.75) - 2f64.powf(-1.5)).abs() < 1e-12);
        assert!((weight_fn(100.0 - 1e-9, 100.0, 0.75) - 1.0).abs() < 1e-10);
        let mut prev = 0.0;
        for k in 0..400 {
            let w = weight_fn(k as f64 * 0.5, 100.0, 0.75);
            assert!(w >= prev);
            prev = w;
        }
    }

    #[test]
    fn objective_examples() {
        let cfg = GloveConfig::default();
        let zero = GloveModel {
            word_vectors: Array2::zeros((3, 2)),
            context_vectors: Array2::zeros((3, 2)),
            word_bias: Array1::zeros(3),
            context_bias: Array1::zeros(3),
        };
        let mut x = CooccurrenceMatrix::new(3, 5);
        assert_eq!(glove_objective(&zero, &x, &cfg).unwrap(), 0.0);
        x.add(1, 2, 1.0);
        assert_eq!(glove_objective(&zero, &x, &cfg).unwrap(), 0.0);
        let mut x = CooccurrenceMatrix::new(3, 5);
        x.add(1, 2, std::f64::consts::E);
        let j = glove_objective(&zero, &x, &cfg).unwrap();
        // (e/100)^0.75 evaluated independently
        assert!((j - 0.066_945_418_591_103_5).abs() < 1e-12, "{j}");
        assert!(glove_objective(&GloveModel::init(4, 2, 0), &x, &cfg).is_err());
    }

    #[test]
    fn zero_epochs_returns_initialisation() {
        let x = build_cooccurrence(&[seq(&[2, 3, 4, 2])], 5, 2).unwrap();
        let cfg = GloveConfig {
            dim: 4,
            epochs: 0,
            seed: 11,
            ..GloveConfig::default()
        };
        let m = train_glove(&x, &cfg).unwrap();
        assert_eq!(m, GloveModel::init(5, 4, 11));
        let lim = 0.5 / 4.0;
        assert!(m.word_vectors.iter().all(|v| v.abs() < lim));
        assert!(train_glove(&CooccurrenceMatrix::new(5, 2), &cfg).is_err());
    }

    #[test]
    fn triples_round_trip() {
        let x = build_cooccurrence(&[seq(&[2, 3, 4, 2, 5])], 6, 2).unwrap();
        let mut buf = Vec::new();
        x.write_triples(&mut buf).unwrap();
        let back = CooccurrenceMatrix::read_triples(buf.as_slice(), 6, 2).unwrap();
        assert_eq!(back, x);
        assert!(CooccurrenceMatrix::read_triples("1 2 0\n".as_bytes(), 6, 2).is_err());
    }

    #[test]
    fn embedding_text_round_trip() {
        let v = build_vocab(&["alpha beta gamma"], 1).unwrap();
        let m = GloveModel::init(v.size(), 3, 1);
        let e = EmbeddingMatrix::from_glove(&m);
        assert!(e.table.row(PAD_ID).iter().all(|&x| x == 0.0));
        let mut buf = Vec::new();
        e.write_text(&v, &mut buf).unwrap();
        let back = EmbeddingMatrix::read_text(buf.as_slice(), &v).unwrap();
        assert_eq!(back, e);
        assert!(EmbeddingMatrix::read_text("alpha 1 2\nbeta 1\n".as_bytes(), &v).is_err());
    }
}
