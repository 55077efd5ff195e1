//! Flat `key = value` run configuration.
//!
//! Lines starting with `#` and blank lines are ignored. Unknown keys are
//! rejected. An empty value unsets an optional key. List values are comma
//! separated.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `data` | | labelled CSV |
//! | `text_column`, `label_column` | `text`, `label` | CSV columns |
//! | `lowercase`, `strip_urls`, `strip_mentions`, `strip_hashmarks`, `strip_punctuation`, `strip_digits`, `remove_stopwords` | `true` | cleaning steps |
//! | `stopwords` | bundled English list | one word per line |
//! | `seq_len` | 100 | padded sequence length |
//! | `min_count` | 1 | vocabulary frequency threshold |
//! | `glove_dim`, `glove_window`, `glove_epochs` | 50, 5, 25 | GloVe shape and schedule |
//! | `glove_x_max`, `glove_alpha`, `glove_lr` | 100, 0.75, 0.05 | GloVe weighting and AdaGrad rate |
//! | `glove_weighting` | `flat` | `flat` or `harmonic` window counts |
//! | `glove_vectors` | | pre-trained vectors to load instead of training |
//! | `encoder_layers`, `encoder_hidden`, `encoder_heads`, `encoder_ffn` | 2, 128, 2, 512 | encoder shape |
//! | `encoder_dropout` | 0.5 | encoder dropout |
//! | `encoder_weights` | | weights file to start from |
//! | `scenario` | | model 1 to 8 |
//! | `grid_batch`, `grid_filter1`, `grid_filter2` | per scenario | grid overrides |
//! | `batch_size`, `filter1`, `filter2` | first grid point | single-model training |
//! | `learning_rate`, `epochs`, `dropout` | 0.001, 4, 0.5 | Adam and dropout |
//! | `kernel`, `pool`, `stride` | 10, 2, 2 | convolution window and pooling |
//! | `head` | `normalized-sigmoid` | `sigmoid`, `normalized-sigmoid` or `softmax` |
//! | `inner_k`, `final_k` | 3, 10 | folds for search and final evaluation |
//! | `seed` | 0 | root of all randomness |
//! | `out` | `run` | output directory |

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::glove::{CountWeighting, GloveConfig};
use crate::layers::{HeadActivation, MaxPool1D};
use crate::model::{scenario_layout, ModelOptions, TrainConfig};
use crate::search::{GridConfig, GridSpec, SearchConfig};
use crate::text::{load_stopwords, CleaningConfig, DEFAULT_SEQ_LEN};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub text_column: String,
    pub label_column: String,
    pub lowercase: bool,
    pub strip_urls: bool,
    pub strip_mentions: bool,
    pub strip_hashmarks: bool,
    pub strip_punctuation: bool,
    pub strip_digits: bool,
    pub remove_stopwords: bool,
    pub stopwords: Option<PathBuf>,
    pub seq_len: usize,
    pub min_count: usize,
    pub glove_dim: usize,
    pub glove_window: usize,
    pub glove_epochs: usize,
    pub glove_x_max: f64,
    pub glove_alpha: f64,
    pub glove_lr: f64,
    pub glove_weighting: CountWeighting,
    pub glove_vectors: Option<PathBuf>,
    pub encoder_layers: usize,
    pub encoder_hidden: usize,
    pub encoder_heads: usize,
    pub encoder_ffn: usize,
    pub encoder_dropout: f64,
    pub encoder_weights: Option<PathBuf>,
    pub scenario: Option<u8>,
    pub grid_batch: Option<Vec<usize>>,
    pub grid_filter1: Option<Vec<usize>>,
    pub grid_filter2: Option<Vec<usize>>,
    pub batch_size: Option<usize>,
    pub filter1: Option<usize>,
    pub filter2: Option<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub dropout: f64,
    pub kernel: usize,
    pub pool: usize,
    pub stride: usize,
    pub head: HeadActivation,
    pub inner_k: usize,
    pub final_k: usize,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let glove = GloveConfig::default();
        let enc = EncoderConfig::default();
        let train = TrainConfig::default();
        let search = SearchConfig::default();
        let opts = ModelOptions::default();
        RunConfig {
            data: None,
            text_column: "text".into(),
            label_column: "label".into(),
            lowercase: true,
            strip_urls: true,
            strip_mentions: true,
            strip_hashmarks: true,
            strip_punctuation: true,
            strip_digits: true,
            remove_stopwords: true,
            stopwords: None,
            seq_len: DEFAULT_SEQ_LEN,
            min_count: 1,
            glove_dim: glove.dim,
            glove_window: glove.window,
            glove_epochs: glove.epochs,
            glove_x_max: glove.x_max,
            glove_alpha: glove.alpha,
            glove_lr: glove.learning_rate,
            glove_weighting: glove.weighting,
            glove_vectors: None,
            encoder_layers: enc.num_layers,
            encoder_hidden: enc.hidden,
            encoder_heads: enc.heads,
            encoder_ffn: enc.ffn_dim,
            encoder_dropout: enc.dropout,
            encoder_weights: None,
            scenario: None,
            grid_batch: None,
            grid_filter1: None,
            grid_filter2: None,
            batch_size: None,
            filter1: None,
            filter2: None,
            learning_rate: train.learning_rate,
            epochs: train.epochs,
            dropout: train.dropout,
            kernel: opts.kernel,
            pool: opts.pool.pool,
            stride: opts.pool.stride,
            head: opts.head,
            inner_k: search.inner_k,
            final_k: search.final_k,
            seed: 0,
            out: PathBuf::from("run"),
        }
    }
}

/// Every accepted key, in the order [`RunConfig::to_text`] writes them.
pub const KEYS: &[&str] = &[
    "data",
    "text_column",
    "label_column",
    "lowercase",
    "strip_urls",
    "strip_mentions",
    "strip_hashmarks",
    "strip_punctuation",
    "strip_digits",
    "remove_stopwords",
    "stopwords",
    "seq_len",
    "min_count",
    "glove_dim",
    "glove_window",
    "glove_epochs",
    "glove_x_max",
    "glove_alpha",
    "glove_lr",
    "glove_weighting",
    "glove_vectors",
    "encoder_layers",
    "encoder_hidden",
    "encoder_heads",
    "encoder_ffn",
    "encoder_dropout",
    "encoder_weights",
    "scenario",
    "grid_batch",
    "grid_filter1",
    "grid_filter2",
    "batch_size",
    "filter1",
    "filter2",
    "learning_rate",
    "epochs",
    "dropout",
    "kernel",
    "pool",
    "stride",
    "head",
    "inner_k",
    "final_k",
    "seed",
    "out",
];

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}` must be true or false, got `{v}`"))),
    }
}

fn opt<T: FromStr>(key: &str, v: &str) -> Result<Option<T>> {
    if v.is_empty() {
        Ok(None)
    } else {
        parse(key, v).map(Some)
    }
}

fn opt_list(key: &str, v: &str) -> Result<Option<Vec<usize>>> {
    if v.is_empty() {
        return Ok(None);
    }
    v.split(',').map(|s| parse(key, s.trim())).collect::<Result<_>>().map(Some)
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn show<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

fn show_path(v: &Option<PathBuf>) -> String {
    v.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn show_list(v: &Option<Vec<usize>>) -> String {
    v.as_ref()
        .map(|l| l.iter().map(usize::to_string).collect::<Vec<_>>().join(","))
        .unwrap_or_default()
}

impl RunConfig {
    /// Set one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "data" => self.data = opt_path(v),
            "text_column" => self.text_column = v.to_string(),
            "label_column" => self.label_column = v.to_string(),
            "lowercase" => self.lowercase = parse_bool(key, v)?,
            "strip_urls" => self.strip_urls = parse_bool(key, v)?,
            "strip_mentions" => self.strip_mentions = parse_bool(key, v)?,
            "strip_hashmarks" => self.strip_hashmarks = parse_bool(key, v)?,
            "strip_punctuation" => self.strip_punctuation = parse_bool(key, v)?,
            "strip_digits" => self.strip_digits = parse_bool(key, v)?,
            "remove_stopwords" => self.remove_stopwords = parse_bool(key, v)?,
            "stopwords" => self.stopwords = opt_path(v),
            "seq_len" => self.seq_len = parse(key, v)?,
            "min_count" => self.min_count = parse(key, v)?,
            "glove_dim" => self.glove_dim = parse(key, v)?,
            "glove_window" => self.glove_window = parse(key, v)?,
            "glove_epochs" => self.glove_epochs = parse(key, v)?,
            "glove_x_max" => self.glove_x_max = parse(key, v)?,
            "glove_alpha" => self.glove_alpha = parse(key, v)?,
            "glove_lr" => self.glove_lr = parse(key, v)?,
            "glove_weighting" => {
                self.glove_weighting = match v {
                    "flat" => CountWeighting::Flat,
                    "harmonic" => CountWeighting::Harmonic,
                    _ => {
                        return Err(Error::Config(format!(
                            "`glove_weighting` must be flat or harmonic, got `{v}`"
                        )))
                    }
                }
            }
            "glove_vectors" => self.glove_vectors = opt_path(v),
            "encoder_layers" => self.encoder_layers = parse(key, v)?,
            "encoder_hidden" => self.encoder_hidden = parse(key, v)?,
            "encoder_heads" => self.encoder_heads = parse(key, v)?,
            "encoder_ffn" => self.encoder_ffn = parse(key, v)?,
            "encoder_dropout" => self.encoder_dropout = parse(key, v)?,
            "encoder_weights" => self.encoder_weights = opt_path(v),
            "scenario" => self.scenario = opt(key, v)?,
            "grid_batch" => self.grid_batch = opt_list(key, v)?,
            "grid_filter1" => self.grid_filter1 = opt_list(key, v)?,
            "grid_filter2" => self.grid_filter2 = opt_list(key, v)?,
            "batch_size" => self.batch_size = opt(key, v)?,
            "filter1" => self.filter1 = opt(key, v)?,
            "filter2" => self.filter2 = opt(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "dropout" => self.dropout = parse(key, v)?,
            "kernel" => self.kernel = parse(key, v)?,
            "pool" => self.pool = parse(key, v)?,
            "stride" => self.stride = parse(key, v)?,
            "head" => {
                self.head = HeadActivation::parse(v).map_err(|e| Error::Config(e.to_string()))?
            }
            "inner_k" => self.inner_k = parse(key, v)?,
            "final_k" => self.final_k = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Text form of one key.
    pub fn get(&self, key: &str) -> Result<String> {
        let b = |x: bool| x.to_string();
        Ok(match key {
            "data" => show_path(&self.data),
            "text_column" => self.text_column.clone(),
            "label_column" => self.label_column.clone(),
            "lowercase" => b(self.lowercase),
            "strip_urls" => b(self.strip_urls),
            "strip_mentions" => b(self.strip_mentions),
            "strip_hashmarks" => b(self.strip_hashmarks),
            "strip_punctuation" => b(self.strip_punctuation),
            "strip_digits" => b(self.strip_digits),
            "remove_stopwords" => b(self.remove_stopwords),
            "stopwords" => show_path(&self.stopwords),
            "seq_len" => self.seq_len.to_string(),
            "min_count" => self.min_count.to_string(),
            "glove_dim" => self.glove_dim.to_string(),
            "glove_window" => self.glove_window.to_string(),
            "glove_epochs" => self.glove_epochs.to_string(),
            "glove_x_max" => self.glove_x_max.to_string(),
            "glove_alpha" => self.glove_alpha.to_string(),
            "glove_lr" => self.glove_lr.to_string(),
            "glove_weighting" => match self.glove_weighting {
                CountWeighting::Flat => "flat".into(),
                CountWeighting::Harmonic => "harmonic".into(),
            },
            "glove_vectors" => show_path(&self.glove_vectors),
            "encoder_layers" => self.encoder_layers.to_string(),
            "encoder_hidden" => self.encoder_hidden.to_string(),
            "encoder_heads" => self.encoder_heads.to_string(),
            "encoder_ffn" => self.encoder_ffn.to_string(),
            "encoder_dropout" => self.encoder_dropout.to_string(),
            "encoder_weights" => show_path(&self.encoder_weights),
            "scenario" => show(&self.scenario),
            "grid_batch" => show_list(&self.grid_batch),
            "grid_filter1" => show_list(&self.grid_filter1),
            "grid_filter2" => show_list(&self.grid_filter2),
            "batch_size" => show(&self.batch_size),
            "filter1" => show(&self.filter1),
            "filter2" => show(&self.filter2),
            "learning_rate" => self.learning_rate.to_string(),
            "epochs" => self.epochs.to_string(),
            "dropout" => self.dropout.to_string(),
            "kernel" => self.kernel.to_string(),
            "pool" => self.pool.to_string(),
            "stride" => self.stride.to_string(),
            "head" => self.head.name().into(),
            "inner_k" => self.inner_k.to_string(),
            "final_k" => self.final_k.to_string(),
            "seed" => self.seed.to_string(),
            "out" => self.out.display().to_string(),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        })
    }

    /// Apply every `key = value` line of `text` on top of `self`.
    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", n + 1))
            })?;
            self.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.merge_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Every key, one `key = value` line each.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let v = self.get(key).expect("listed key");
            let _ = writeln!(s, "{key} = {v}");
        }
        s
    }

    /// Check every field before any work starts.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.seq_len == 0 {
            return fail("seq_len must be >= 1");
        }
        if self.min_count == 0 {
            return fail("min_count must be >= 1");
        }
        self.glove_config()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.encoder_config()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if let Some(s) = self.scenario {
            scenario_layout(s).map_err(|e| Error::Config(e.to_string()))?;
        }
        for (name, list) in [
            ("grid_batch", &self.grid_batch),
            ("grid_filter1", &self.grid_filter1),
            ("grid_filter2", &self.grid_filter2),
        ] {
            if list.as_ref().is_some_and(|l| l.is_empty() || l.contains(&0)) {
                return Err(Error::Config(format!("{name} values must be positive")));
            }
        }
        if [self.batch_size, self.filter1, self.filter2].contains(&Some(0)) {
            return fail("batch_size, filter1 and filter2 must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must be in [0, 1)");
        }
        if self.kernel == 0 {
            return fail("kernel must be >= 1");
        }
        MaxPool1D::new(self.pool, self.stride).map_err(|e| Error::Config(e.to_string()))?;
        if self.inner_k < 2 || self.final_k < 2 {
            return fail("inner_k and final_k must be >= 2");
        }
        Ok(())
    }

    pub fn require_scenario(&self) -> Result<u8> {
        self.scenario
            .ok_or_else(|| Error::Config("`scenario` is required".into()))
    }

    pub fn require_data(&self) -> Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| Error::Config("`data` is required".into()))
    }

    pub fn cleaning(&self) -> Result<CleaningConfig> {
        let mut c = CleaningConfig {
            lowercase: self.lowercase,
            strip_urls: self.strip_urls,
            strip_mentions: self.strip_mentions,
            strip_hashmarks: self.strip_hashmarks,
            strip_punctuation: self.strip_punctuation,
            strip_digits: self.strip_digits,
            remove_stopwords: self.remove_stopwords,
            ..CleaningConfig::default()
        };
        if let Some(p) = &self.stopwords {
            c.stopwords = load_stopwords(p)?;
        }
        Ok(c)
    }

    pub fn glove_config(&self) -> GloveConfig {
        GloveConfig {
            dim: self.glove_dim,
            x_max: self.glove_x_max,
            alpha: self.glove_alpha,
            learning_rate: self.glove_lr,
            epochs: self.glove_epochs,
            seed: self.seed,
            window: self.glove_window,
            weighting: self.glove_weighting,
        }
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            num_layers: self.encoder_layers,
            hidden: self.encoder_hidden,
            heads: self.encoder_heads,
            max_positions: self.seq_len,
            ffn_dim: self.encoder_ffn,
            dropout: self.encoder_dropout,
            seed: self.seed,
        }
    }

    pub fn model_options(&self) -> ModelOptions {
        ModelOptions {
            kernel: self.kernel,
            pool: MaxPool1D {
                pool: self.pool,
                stride: self.stride,
            },
            head: self.head,
            encoder: self.encoder_config(),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            dropout: self.dropout,
            batch_size: self.batch_size.unwrap_or(TrainConfig::default().batch_size),
            seed: self.seed,
        }
    }

    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            inner_k: self.inner_k,
            final_k: self.final_k,
            train: self.train_config(),
            seed: self.seed,
        }
    }

    /// Scenario grid with any `grid_*` overrides applied.
    pub fn grid_spec(&self, scenario: u8) -> Result<GridSpec> {
        let mut g = GridSpec::for_scenario(scenario)?;
        if let Some(v) = &self.grid_batch {
            g.batch_sizes = v.clone();
        }
        if let Some(v) = &self.grid_filter1 {
            g.filter1_values = v.clone();
        }
        if let (Some(v), Some(_)) = (&self.grid_filter2, &g.filter2_values) {
            g.filter2_values = Some(v.clone());
        }
        Ok(g)
    }

    /// Configuration for single-model training; unset values fall back to the
    /// first grid point.
    pub fn grid_config(&self, scenario: u8) -> Result<GridConfig> {
        let g = self.grid_spec(scenario)?;
        Ok(GridConfig {
            batch_size: self.batch_size.unwrap_or(g.batch_sizes[0]),
            filter1: self.filter1.unwrap_or(g.filter1_values[0]),
            filter2: g
                .filter2_values
                .map(|v| self.filter2.unwrap_or(v[0])),
        })
    }

    /// Record a chosen grid point so that `train` reproduces it.
    pub fn set_grid_config(&mut self, c: &GridConfig) {
        self.batch_size = Some(c.batch_size);
        self.filter1 = Some(c.filter1);
        self.filter2 = c.filter2;
    }
}
