//! Versioned single-file model archive.
//!
//! Layout (little-endian): magic `HSMODEL\0`, `u32` version, `u32` section
//! count, then a table of contents with one `(name, offset, length)` entry
//! per section (`name` is a `u64` length plus UTF-8 bytes, offsets are
//! absolute), then the section payloads.
//!
//! | section | payload |
//! |---------|---------|
//! | `config` | run configuration text |
//! | `vocab` | vocabulary TSV |
//! | `spec` | `key = value` architecture description |
//! | `params` | `u64` count, then every trainable matrix in visiting order |
//! | `glove` | frozen embedding table (GloVe scenarios only) |
//! | `history` | `epoch,loss,accuracy` CSV |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::binio::{corrupt, read_err, read_matrix, read_str, write_atomic, write_matrix, write_str};
use crate::config::RunConfig;
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::glove::EmbeddingMatrix;
use crate::layers::{HeadActivation, MaxPool1D};
use crate::model::{
    compose_model, EmbeddingLayer, EmbeddingSource, EpochStats, HybridModel, HybridSpec,
    ModelOptions,
};
use crate::param::Parameterized;
use crate::text::Vocabulary;

pub const ARCHIVE_MAGIC: &[u8; 8] = b"HSMODEL\0";
pub const ARCHIVE_VERSION: u32 = 1;

/// A trained model with everything needed to reuse it on raw text.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArchive {
    pub config: RunConfig,
    pub vocab: Vocabulary,
    pub model: HybridModel,
}

fn spec_text(model: &HybridModel) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("scenario", model.spec.scenario_id.to_string());
    kv("filter1", model.spec.filter1.to_string());
    kv(
        "filter2",
        model.spec.filter2.map(|v| v.to_string()).unwrap_or_default(),
    );
    kv("seq_len", model.seq_len.to_string());
    kv("head", model.dense.activation.name().to_string());
    let (kernel, pool) = model
        .stages
        .iter()
        .find_map(|s| match s {
            crate::model::Stage::Cnn { conv, pool } => Some((conv.kernel(), *pool)),
            _ => None,
        })
        .unwrap_or((0, MaxPool1D::default()));
    kv("kernel", kernel.to_string());
    kv("pool", pool.pool.to_string());
    kv("stride", pool.stride.to_string());
    if let EmbeddingLayer::Bert(enc) = &model.embedding {
        let c = &enc.config;
        kv("encoder_layers", c.num_layers.to_string());
        kv("encoder_hidden", c.hidden.to_string());
        kv("encoder_heads", c.heads.to_string());
        kv("encoder_max_positions", c.max_positions.to_string());
        kv("encoder_ffn", c.ffn_dim.to_string());
        kv("encoder_dropout", c.dropout.to_string());
        kv("encoder_seed", c.seed.to_string());
        kv("vocab_size", enc.weights.vocab_size().to_string());
    }
    s
}

fn tensor_count(model: &HybridModel) -> usize {
    let mut n = 0;
    model.visit_params(&mut |_| n += 1);
    n
}

fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| corrupt(format!("bad spec line `{l}`")))
        })
        .collect()
}

fn field<T: std::str::FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<T> {
    kv.get(key)
        .ok_or_else(|| corrupt(format!("spec lacks `{key}`")))?
        .parse()
        .map_err(|_| corrupt(format!("spec has a bad `{key}`")))
}

/// Like [`HybridModel::write_history_csv`] but with shortest round-trip
/// float formatting.
fn history_csv(model: &HybridModel) -> String {
    let mut s = String::from("epoch,loss,accuracy\n");
    for h in &model.history {
        let _ = writeln!(s, "{},{},{}", h.epoch, h.loss, h.accuracy);
    }
    s
}

fn parse_history(text: &str) -> Result<Vec<EpochStats>> {
    text.lines()
        .skip(1)
        .map(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            let bad = || corrupt(format!("bad history line `{l}`"));
            if cols.len() != 3 {
                return Err(bad());
            }
            Ok(EpochStats {
                epoch: cols[0].parse().map_err(|_| bad())?,
                loss: cols[1].parse().map_err(|_| bad())?,
                accuracy: cols[2].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

impl ModelArchive {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut sections: Vec<(&str, Vec<u8>)> = vec![
            ("config", self.config.to_text().into_bytes()),
            ("vocab", self.vocab.to_tsv().into_bytes()),
            ("spec", spec_text(&self.model).into_bytes()),
        ];
        let mut params = Vec::new();
        params
            .write_u64::<LittleEndian>(tensor_count(&self.model) as u64)
            .expect("memory");
        self.model
            .visit_params(&mut |p| write_matrix(&mut params, &p.value).expect("memory"));
        sections.push(("params", params));
        if let EmbeddingLayer::Glove(t) = &self.model.embedding {
            let mut buf = Vec::new();
            write_matrix(&mut buf, &t.table).expect("memory");
            sections.push(("glove", buf));
        }
        sections.push(("history", history_csv(&self.model).into_bytes()));

        let toc_len: usize = sections.iter().map(|(n, _)| 8 + n.len() + 16).sum();
        let mut offset = (8 + 4 + 4 + toc_len) as u64;
        let mut out = Vec::new();
        out.extend_from_slice(ARCHIVE_MAGIC);
        out.write_u32::<LittleEndian>(ARCHIVE_VERSION).expect("memory");
        out.write_u32::<LittleEndian>(sections.len() as u32).expect("memory");
        for (name, payload) in &sections {
            write_str(&mut out, name).expect("memory");
            out.write_u64::<LittleEndian>(offset).expect("memory");
            out.write_u64::<LittleEndian>(payload.len() as u64).expect("memory");
            offset += payload.len() as u64;
        }
        for (_, payload) in &sections {
            out.extend_from_slice(payload);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(read_err)?;
        if &magic != ARCHIVE_MAGIC {
            return Err(corrupt("not a model archive"));
        }
        let version = r.read_u32::<LittleEndian>().map_err(read_err)?;
        if version != ARCHIVE_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: ARCHIVE_VERSION,
            });
        }
        let count = r.read_u32::<LittleEndian>().map_err(read_err)?;
        let total = bytes.len() as u64;
        let mut sections: BTreeMap<String, &[u8]> = BTreeMap::new();
        for _ in 0..count {
            let mut remaining = total - r.position();
            let name = read_str(&mut r, &mut remaining)?;
            let offset = r.read_u64::<LittleEndian>().map_err(read_err)?;
            let len = r.read_u64::<LittleEndian>().map_err(read_err)?;
            let end = offset
                .checked_add(len)
                .filter(|&e| e <= total)
                .ok_or_else(|| corrupt(format!("section `{name}` runs past the end")))?;
            sections.insert(name, &bytes[offset as usize..end as usize]);
        }
        let section = |name: &str| {
            sections
                .get(name)
                .copied()
                .ok_or_else(|| corrupt(format!("missing section `{name}`")))
        };
        let text = |name: &str| -> Result<&str> {
            std::str::from_utf8(section(name)?)
                .map_err(|_| corrupt(format!("section `{name}` is not utf-8")))
        };

        let config = RunConfig::from_text(text("config")?)?;
        let vocab = Vocabulary::read_tsv(text("vocab")?.as_bytes())?;
        let kv = parse_kv(text("spec")?)?;
        let scenario: u8 = field(&kv, "scenario")?;
        let filter2 = match kv.get("filter2").map(String::as_str) {
            None | Some("") => None,
            Some(_) => Some(field(&kv, "filter2")?),
        };
        let spec = HybridSpec::new(scenario, field(&kv, "filter1")?, filter2)
            .map_err(|e| corrupt(e.to_string()))?;
        let seq_len: usize = field(&kv, "seq_len")?;
        let head = HeadActivation::parse(&field::<String>(&kv, "head")?)
            .map_err(|e| corrupt(e.to_string()))?;
        let mut options = ModelOptions {
            kernel: field::<usize>(&kv, "kernel")?.max(1),
            pool: MaxPool1D {
                pool: field(&kv, "pool")?,
                stride: field(&kv, "stride")?,
            },
            head,
            ..ModelOptions::default()
        };
        let source = if sections.contains_key("glove") {
            let data = section("glove")?;
            let mut remaining = data.len() as u64;
            let table = read_matrix(&mut &data[..], &mut remaining)?;
            EmbeddingSource::Glove(EmbeddingMatrix { table })
        } else {
            options.encoder = EncoderConfig {
                num_layers: field(&kv, "encoder_layers")?,
                hidden: field(&kv, "encoder_hidden")?,
                heads: field(&kv, "encoder_heads")?,
                max_positions: field(&kv, "encoder_max_positions")?,
                ffn_dim: field(&kv, "encoder_ffn")?,
                dropout: field(&kv, "encoder_dropout")?,
                seed: field(&kv, "encoder_seed")?,
            };
            let enc = Encoder::init(options.encoder.clone(), field(&kv, "vocab_size")?)
                .map_err(|e| corrupt(format!("inconsistent encoder: {e}")))?;
            EmbeddingSource::BertWeights(enc)
        };
        let mut model = compose_model(&spec, source, seq_len, &options, 0)
            .map_err(|e| corrupt(format!("inconsistent architecture: {e}")))?;

        let data = section("params")?;
        let mut remaining = data.len() as u64;
        let mut pr = data;
        let n = pr.read_u64::<LittleEndian>().map_err(read_err)?;
        remaining -= 8;
        if n != tensor_count(&model) as u64 {
            return Err(Error::ShapeMismatch(format!(
                "archive holds {n} parameter tensors, architecture needs {}",
                tensor_count(&model)
            )));
        }
        let mut loaded = Vec::with_capacity(n as usize);
        for _ in 0..n {
            loaded.push(read_matrix(&mut pr, &mut remaining)?);
        }
        if remaining != 0 {
            return Err(corrupt("trailing bytes after parameters"));
        }
        let mut mismatch = None;
        let mut it = loaded.into_iter();
        model.visit_params_mut(&mut |p| {
            let m = it.next().expect("count checked");
            if m.dim() != p.value.dim() && mismatch.is_none() {
                mismatch = Some(format!("{:?} vs {:?}", m.dim(), p.value.dim()));
            }
            p.value = m;
        });
        if let Some(m) = mismatch {
            return Err(Error::ShapeMismatch(format!("parameter shape {m}")));
        }
        model.zero_grads();
        model.history = parse_history(text("history")?)?;
        Ok(ModelArchive {
            config,
            vocab,
            model,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn save_model(archive: &ModelArchive, path: &Path) -> Result<()> {
    archive.save(path)
}

pub fn load_model(path: &Path) -> Result<ModelArchive> {
    ModelArchive::load(path)
}
