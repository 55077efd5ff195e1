//! The eight hybrid classifiers, their loss, training loop and evaluation.
//!
//! | scenario | embedding | stack              |
//! |----------|-----------|--------------------|
//! | 1        | encoder   | CNN, Bi-LSTM       |
//! | 2        | encoder   | Bi-LSTM, CNN       |
//! | 3        | encoder   | CNN                |
//! | 4        | encoder   | Bi-LSTM            |
//! | 5        | GloVe     | CNN, Bi-LSTM       |
//! | 6        | GloVe     | Bi-LSTM, CNN       |
//! | 7        | GloVe     | CNN                |
//! | 8        | GloVe     | Bi-LSTM            |
//!
//! Every CNN layer is followed by max pooling and dropout, every Bi-LSTM
//! layer by ReLU and dropout. The stack output is flattened into a
//! three-way dense head.

use std::fmt;
use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{ClassLabel, LabeledExample, NUM_CLASSES};
use crate::encoder::{Encoder, EncoderCache, EncoderConfig};
use crate::error::{Error, Result};
use crate::glove::EmbeddingMatrix;
use crate::layers::{
    BiLstm, BiLstmCache, Conv1D, Conv1DCache, Dense, DenseCache, Dropout, HeadActivation,
    MaxPool1D, MaxPoolCache, DEFAULT_KERNEL,
};
use crate::param::{adam_step, AdamConfig, AdamState, Param, Parameterized};
use crate::text::TokenSequence;

/// Probability clipping bound used by the loss.
pub const LOSS_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingKind {
    /// Fine-tuned transformer encoder.
    Bert,
    /// Frozen co-occurrence vectors.
    Glove,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StackKind {
    Cnn,
    BiLstm,
}

/// Which of the eight compositions to build, and its layer widths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HybridSpec {
    pub scenario_id: u8,
    pub embedding: EmbeddingKind,
    pub stack: Vec<StackKind>,
    /// Filter count (CNN) or units per direction (Bi-LSTM) of the first layer.
    pub filter1: usize,
    /// Width of the second layer, for two-layer stacks only.
    pub filter2: Option<usize>,
}

/// Embedding and stack order of a scenario id in `1..=8`.
pub fn scenario_layout(scenario_id: u8) -> Result<(EmbeddingKind, Vec<StackKind>)> {
    use EmbeddingKind::*;
    use StackKind::*;
    let layout = match scenario_id {
        1 => (Bert, vec![Cnn, BiLstm]),
        2 => (Bert, vec![BiLstm, Cnn]),
        3 => (Bert, vec![Cnn]),
        4 => (Bert, vec![BiLstm]),
        5 => (Glove, vec![Cnn, BiLstm]),
        6 => (Glove, vec![BiLstm, Cnn]),
        7 => (Glove, vec![Cnn]),
        8 => (Glove, vec![BiLstm]),
        other => {
            return Err(Error::InvalidArgument(format!(
                "scenario must be 1..=8, got {other}"
            )))
        }
    };
    Ok(layout)
}

impl HybridSpec {
    pub fn new(scenario_id: u8, filter1: usize, filter2: Option<usize>) -> Result<Self> {
        let (embedding, stack) = scenario_layout(scenario_id)?;
        match (stack.len(), filter2) {
            (1, Some(_)) => {
                return Err(Error::InvalidArgument(format!(
                    "scenario {scenario_id} has one stack layer; filter2 must be absent"
                )))
            }
            (2, None) => {
                return Err(Error::InvalidArgument(format!(
                    "scenario {scenario_id} has two stack layers; filter2 is required"
                )))
            }
            _ => {}
        }
        if filter1 == 0 || filter2 == Some(0) {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        Ok(HybridSpec {
            scenario_id,
            embedding,
            stack,
            filter1,
            filter2,
        })
    }

    fn widths(&self) -> Vec<usize> {
        std::iter::once(self.filter1).chain(self.filter2).collect()
    }

    /// The full layer list, in order.
    pub fn layer_kinds(&self) -> Vec<LayerKind> {
        let mut out = vec![match self.embedding {
            EmbeddingKind::Bert => LayerKind::Encoder,
            EmbeddingKind::Glove => LayerKind::GloveEmbedding,
        }];
        for (kind, width) in self.stack.iter().zip(self.widths()) {
            match kind {
                StackKind::Cnn => out.extend([
                    LayerKind::Conv1D { filters: width },
                    LayerKind::MaxPool,
                    LayerKind::Dropout,
                ]),
                StackKind::BiLstm => {
                    out.extend([LayerKind::BiLstm { units: width }, LayerKind::Dropout])
                }
            }
        }
        out.extend([LayerKind::Flatten, LayerKind::Dense { outputs: NUM_CLASSES }]);
        out
    }
}

impl fmt::Display for HybridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let emb = match self.embedding {
            EmbeddingKind::Bert => "BERT",
            EmbeddingKind::Glove => "GloVe",
        };
        write!(f, "({}) {emb}", self.scenario_id)?;
        for s in &self.stack {
            match s {
                StackKind::Cnn => write!(f, " -> CNN")?,
                StackKind::BiLstm => write!(f, " -> Bi-LSTM")?,
            }
        }
        Ok(())
    }
}

/// Structural description of one layer, for inspecting a composition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Encoder,
    GloveEmbedding,
    Conv1D { filters: usize },
    MaxPool,
    Dropout,
    BiLstm { units: usize },
    Flatten,
    Dense { outputs: usize },
}

/// Architecture knobs that are not part of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOptions {
    /// Convolution window (filter size).
    pub kernel: usize,
    pub pool: MaxPool1D,
    pub head: HeadActivation,
    /// Used for encoder scenarios; `max_positions` is set to the sequence
    /// length.
    pub encoder: EncoderConfig,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            kernel: DEFAULT_KERNEL,
            pool: MaxPool1D::default(),
            head: HeadActivation::default(),
            encoder: EncoderConfig::default(),
        }
    }
}

/// Input to [`compose_model`] for the embedding layer.
#[derive(Debug, Clone)]
pub enum EmbeddingSource {
    /// Randomly initialised encoder over a vocabulary of this size.
    Bert { vocab_size: usize },
    /// Pre-trained encoder.
    BertWeights(Encoder),
    /// Frozen vector table.
    Glove(EmbeddingMatrix),
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingLayer {
    Bert(Encoder),
    Glove(EmbeddingMatrix),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stage {
    Cnn { conv: Conv1D, pool: MaxPool1D },
    BiLstm(BiLstm),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    /// Percentage, measured on training-mode forward passes.
    pub accuracy: f64,
}

/// An assembled classifier with its training history.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridModel {
    pub spec: HybridSpec,
    pub seq_len: usize,
    pub embedding: EmbeddingLayer,
    pub stages: Vec<Stage>,
    pub dense: Dense,
    pub history: Vec<EpochStats>,
}

/// Build an initialised model for `spec`. All randomness derives from `seed`.
pub fn compose_model(
    spec: &HybridSpec,
    source: EmbeddingSource,
    seq_len: usize,
    opts: &ModelOptions,
    seed: u64,
) -> Result<HybridModel> {
    let spec = HybridSpec::new(spec.scenario_id, spec.filter1, spec.filter2)?;
    if seq_len == 0 {
        return Err(Error::InvalidArgument("sequence length must be >= 1".into()));
    }
    if opts.kernel == 0 {
        return Err(Error::InvalidArgument("kernel size must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let encoder_seed = rng.next_u64();
    let embedding = match (spec.embedding, source) {
        (EmbeddingKind::Bert, EmbeddingSource::Bert { vocab_size }) => {
            let cfg = EncoderConfig {
                max_positions: seq_len,
                seed: encoder_seed,
                ..opts.encoder.clone()
            };
            EmbeddingLayer::Bert(Encoder::init(cfg, vocab_size)?)
        }
        (EmbeddingKind::Bert, EmbeddingSource::BertWeights(enc)) => {
            if enc.config.max_positions < seq_len {
                return Err(Error::ShapeMismatch(format!(
                    "encoder supports {} positions, sequences have {seq_len}",
                    enc.config.max_positions
                )));
            }
            EmbeddingLayer::Bert(enc)
        }
        (EmbeddingKind::Glove, EmbeddingSource::Glove(table)) => EmbeddingLayer::Glove(table),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "embedding source does not match scenario {}",
                spec.scenario_id
            )))
        }
    };
    let mut width = match &embedding {
        EmbeddingLayer::Bert(e) => e.hidden(),
        EmbeddingLayer::Glove(t) => t.dim(),
    };
    let mut len = seq_len;
    let mut stages = Vec::new();
    for (kind, w) in spec.stack.iter().zip(spec.widths()) {
        match kind {
            StackKind::Cnn => {
                stages.push(Stage::Cnn {
                    conv: Conv1D::new(width, w, opts.kernel, &mut rng),
                    pool: opts.pool,
                });
                len = opts.pool.output_len(len);
                width = w;
            }
            StackKind::BiLstm => {
                stages.push(Stage::BiLstm(BiLstm::new(width, w, &mut rng)));
                width = 2 * w;
            }
        }
    }
    let dense = Dense::new(len * width, NUM_CLASSES, opts.head, &mut rng);
    Ok(HybridModel {
        spec,
        seq_len,
        embedding,
        stages,
        dense,
        history: Vec::new(),
    })
}

impl Parameterized for HybridModel {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        if let EmbeddingLayer::Bert(enc) = &self.embedding {
            enc.visit_params(f);
        }
        for stage in &self.stages {
            match stage {
                Stage::Cnn { conv, .. } => conv.visit_params(f),
                Stage::BiLstm(b) => b.visit_params(f),
            }
        }
        self.dense.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        if let EmbeddingLayer::Bert(enc) = &mut self.embedding {
            enc.visit_params_mut(f);
        }
        for stage in &mut self.stages {
            match stage {
                Stage::Cnn { conv, .. } => conv.visit_params_mut(f),
                Stage::BiLstm(b) => b.visit_params_mut(f),
            }
        }
        self.dense.visit_params_mut(f);
    }
}

enum EmbeddingCache {
    Bert(EncoderCache),
    Glove,
}

enum StageCache {
    Cnn {
        conv: Conv1DCache,
        pool: MaxPoolCache,
        drop: Option<Array2<f64>>,
    },
    BiLstm {
        lstm: BiLstmCache,
        raw: Array2<f64>,
        drop: Option<Array2<f64>>,
    },
}

/// Everything the backward pass needs from one forward pass.
pub struct ForwardCache {
    embedding: EmbeddingCache,
    stages: Vec<StageCache>,
    stack_shape: (usize, usize),
    dense: DenseCache,
    /// Head output.
    pub probs: Array1<f64>,
}

impl HybridModel {
    /// Structural layer list of this model.
    pub fn layer_kinds(&self) -> Vec<LayerKind> {
        self.spec.layer_kinds()
    }

    pub fn head(&self) -> HeadActivation {
        self.dense.activation
    }

    fn embed<R: Rng + ?Sized>(
        &self,
        tokens: &TokenSequence,
        train: bool,
        rng: &mut R,
    ) -> Result<(Array2<f64>, EmbeddingCache)> {
        if tokens.ids.len() != self.seq_len {
            return Err(Error::ShapeMismatch(format!(
                "model expects sequences of length {}, got {}",
                self.seq_len,
                tokens.ids.len()
            )));
        }
        match &self.embedding {
            EmbeddingLayer::Bert(enc) => {
                // an empty text still needs one visible position to attend to
                let visible = TokenSequence {
                    ids: tokens.ids.clone(),
                    true_length: tokens.true_length.max(1),
                };
                let (out, cache) = enc.forward(&visible, train, rng)?;
                Ok((out.matrix, EmbeddingCache::Bert(cache)))
            }
            EmbeddingLayer::Glove(table) => {
                let mut x = Array2::zeros((tokens.ids.len(), table.dim()));
                for (t, &id) in tokens.ids.iter().enumerate() {
                    if id >= table.vocab_size() {
                        return Err(Error::IdOutOfRange {
                            id,
                            size: table.vocab_size(),
                        });
                    }
                    x.row_mut(t).assign(&table.table.row(id));
                }
                Ok((x, EmbeddingCache::Glove))
            }
        }
    }

    /// Forward one example. `dropout` is the stack dropout rate, used only
    /// when `train` is set.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tokens: &TokenSequence,
        train: bool,
        dropout: f64,
        rng: &mut R,
    ) -> Result<ForwardCache> {
        let drop = Dropout::new(dropout)?;
        let (mut x, embedding) = self.embed(tokens, train, rng)?;
        let mut caches = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            match stage {
                Stage::Cnn { conv, pool } => {
                    let (c, conv_cache) = conv.forward(x.view())?;
                    let (p, pool_cache) = pool.forward(c.view());
                    let (d, mask) = drop.forward(&p, train, rng);
                    caches.push(StageCache::Cnn {
                        conv: conv_cache,
                        pool: pool_cache,
                        drop: mask,
                    });
                    x = d;
                }
                Stage::BiLstm(bi) => {
                    let (raw, lstm) = bi.forward(x.view())?;
                    let act = raw.mapv(|v| v.max(0.0));
                    let (d, mask) = drop.forward(&act, train, rng);
                    caches.push(StageCache::BiLstm {
                        lstm,
                        raw,
                        drop: mask,
                    });
                    x = d;
                }
            }
        }
        let stack_shape = x.dim();
        let flat = Array1::from_iter(x.iter().copied());
        let (probs, dense) = self.dense.forward(flat.view())?;
        Ok(ForwardCache {
            embedding,
            stages: caches,
            stack_shape,
            dense,
            probs,
        })
    }

    /// Accumulate parameter gradients given `dprobs`, the loss gradient with
    /// respect to the head output. The frozen GloVe table receives nothing.
    pub fn backward(&mut self, cache: &ForwardCache, dprobs: ArrayView1<f64>) {
        let dflat = self.dense.backward(&cache.dense, dprobs);
        let mut dx = Array2::from_shape_vec(cache.stack_shape, dflat.to_vec())
            .expect("flattened from this shape");
        for (stage, sc) in self.stages.iter_mut().zip(&cache.stages).rev() {
            dx = match (stage, sc) {
                (Stage::Cnn { conv, pool }, StageCache::Cnn { conv: cc, pool: pc, drop }) => {
                    let d = Dropout::backward(drop.as_ref(), dx);
                    let d = pool.backward(pc, d.view());
                    conv.backward(cc, d.view())
                }
                (Stage::BiLstm(bi), StageCache::BiLstm { lstm, raw, drop }) => {
                    let mut d = Dropout::backward(drop.as_ref(), dx);
                    d.zip_mut_with(raw, |g, &r| {
                        if r <= 0.0 {
                            *g = 0.0
                        }
                    });
                    bi.backward(lstm, d.view())
                }
                _ => unreachable!("cache built by forward on this model"),
            };
        }
        if let (EmbeddingLayer::Bert(enc), EmbeddingCache::Bert(ec)) =
            (&mut self.embedding, &cache.embedding)
        {
            enc.backward(ec, dx.view());
        }
    }

    /// Inference-mode head output for one sequence.
    pub fn predict_proba(&self, tokens: &TokenSequence) -> Result<Array1<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.forward(tokens, false, 0.0, &mut rng)?.probs)
    }

    /// Zero the gradients, then accumulate the gradient of the mean loss over
    /// `batch`. Returns the mean loss and the number of correct predictions.
    pub fn batch_gradient<R: Rng + ?Sized>(
        &mut self,
        batch: &[&LabeledExample],
        train: bool,
        dropout: f64,
        rng: &mut R,
    ) -> Result<(f64, usize)> {
        self.zero_grads();
        let n = batch.len() as f64;
        let mut loss = 0.0;
        let mut correct = 0;
        for ex in batch {
            let cache = self.forward(&ex.tokens, train, dropout, rng)?;
            let y = ex.label.index();
            let p = cache.probs[y];
            loss -= p.clamp(LOSS_EPS, 1.0 - LOSS_EPS).ln() / n;
            if argmax(cache.probs.view()) == y {
                correct += 1;
            }
            let mut dprobs = Array1::zeros(NUM_CLASSES);
            if (LOSS_EPS..=1.0 - LOSS_EPS).contains(&p) {
                dprobs[y] = -1.0 / (p * n);
            }
            self.backward(&cache, dprobs.view());
        }
        Ok((loss, correct))
    }

    /// Mean loss over `data` in inference mode, without touching gradients.
    pub fn loss(&self, data: &[LabeledExample]) -> Result<f64> {
        let (pred, truth) = self.probabilities(data)?;
        cce_loss(pred.view(), truth.view())
    }

    fn probabilities(&self, data: &[LabeledExample]) -> Result<(Array2<f64>, Array2<f64>)> {
        let mut pred = Array2::zeros((data.len(), NUM_CLASSES));
        let mut truth = Array2::zeros((data.len(), NUM_CLASSES));
        for (i, ex) in data.iter().enumerate() {
            pred.row_mut(i).assign(&self.predict_proba(&ex.tokens)?);
            truth[[i, ex.label.index()]] = 1.0;
        }
        Ok((pred, truth))
    }

    /// Training history as `epoch,loss,accuracy` CSV.
    pub fn write_history_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,loss,accuracy")?;
        for h in &self.history {
            writeln!(w, "{},{:.6},{:.6}", h.epoch, h.loss, h.accuracy)?;
        }
        Ok(())
    }
}

/// Index of the largest component; the lowest index wins ties.
pub fn argmax(v: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Mean categorical cross-entropy `-(1/N) sum_i sum_j y_ij ln p_ij`, with
/// predictions clipped to `[1e-7, 1 - 1e-7]`.
pub fn cce_loss(pred: ArrayView2<f64>, truth: ArrayView2<f64>) -> Result<f64> {
    if pred.dim() != truth.dim() || pred.nrows() == 0 {
        return Err(Error::ShapeMismatch(format!(
            "predictions {:?} vs targets {:?}",
            pred.dim(),
            truth.dim()
        )));
    }
    let n = pred.nrows() as f64;
    let total: f64 = pred
        .iter()
        .zip(truth.iter())
        .map(|(&p, &y)| y * p.clamp(LOSS_EPS, 1.0 - LOSS_EPS).ln())
        .sum();
    Ok(-total / n)
}

/// Optimisation settings. Defaults: Adam at 0.001, 4 epochs, dropout 0.5.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub dropout: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 4,
            dropout: 0.5,
            batch_size: 128,
            seed: 0,
        }
    }
}

/// Train in place for `cfg.epochs` epochs.
pub fn fit(model: &mut HybridModel, data: &[LabeledExample], cfg: &TrainConfig) -> Result<()> {
    fit_observed(model, data, cfg, |_, _| true)
}

/// [`fit`] with a callback after every epoch; returning `false` stops
/// training after that epoch.
pub fn fit_observed<F>(
    model: &mut HybridModel,
    data: &[LabeledExample],
    cfg: &TrainConfig,
    mut observe: F,
) -> Result<()>
where
    F: FnMut(&EpochStats, &HybridModel) -> bool,
{
    if cfg.epochs == 0 {
        return Ok(());
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument("no training data".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    Dropout::new(cfg.dropout)?;
    let adam = AdamConfig {
        learning_rate: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let start = model.history.len();
    for epoch in start + 1..=start + cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&LabeledExample> = chunk.iter().map(|&i| &data[i]).collect();
            let (loss, c) = model.batch_gradient(&batch, true, cfg.dropout, &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            loss_sum += loss * batch.len() as f64;
            correct += c;
            adam_step(model, &mut state, &adam)?;
        }
        let stats = EpochStats {
            epoch,
            loss: loss_sum / data.len() as f64,
            accuracy: 100.0 * correct as f64 / data.len() as f64,
        };
        model.history.push(stats.clone());
        if !observe(&stats, model) {
            break;
        }
    }
    model.zero_grads();
    Ok(())
}

/// Class predictions in inference mode.
pub fn predict(model: &HybridModel, examples: &[TokenSequence]) -> Result<Vec<ClassLabel>> {
    examples
        .iter()
        .map(|t| {
            let p = model.predict_proba(t)?;
            ClassLabel::new(argmax(p.view()))
        })
        .collect()
}

/// Percentage of positions where `pred` equals `truth`.
pub fn evaluate_accuracy(pred: &[ClassLabel], truth: &[ClassLabel]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty set".into()));
    }
    let correct = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / pred.len() as f64 * 100.0)
}

/// Accuracy (percent) and mean loss over `data`, in inference mode.
pub fn evaluate(model: &HybridModel, data: &[LabeledExample]) -> Result<(f64, f64)> {
    let (pred, truth) = model.probabilities(data)?;
    let loss = cce_loss(pred.view(), truth.view())?;
    let labels: Vec<ClassLabel> = pred
        .rows()
        .into_iter()
        .map(|r| ClassLabel::new(argmax(r)))
        .collect::<Result<_>>()?;
    let gold: Vec<ClassLabel> = data.iter().map(|e| e.label).collect();
    Ok((evaluate_accuracy(&labels, &gold)?, loss))
}
