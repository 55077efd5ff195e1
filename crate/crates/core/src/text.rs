//! Tweet cleaning, vocabulary construction and fixed-length encoding.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Padding id. Never assigned to a real token.
pub const PAD_ID: usize = 0;
/// Out-of-vocabulary id.
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Default encoded length, in tokens.
pub const DEFAULT_SEQ_LEN: usize = 100;

const BUNDLED_STOPWORDS: &str = include_str!("stopwords_en.txt");

/// Switches for [`clean_text`]. Rules run in this order:
/// lowercase, URLs, mentions, hashmarks, punctuation, digits, stopwords,
/// stemming hook, whitespace collapse.
#[derive(Debug, Clone)]
pub struct CleaningConfig {
    pub lowercase: bool,
    /// Drop tokens containing `http://` / `https://` or starting with `www.`.
    pub strip_urls: bool,
    /// Drop `@user` tokens.
    pub strip_mentions: bool,
    /// Remove `#` but keep the hashtag word.
    pub strip_hashmarks: bool,
    /// Delete every character that is neither alphanumeric nor whitespace.
    pub strip_punctuation: bool,
    /// Drop tokens made only of numeric characters.
    pub strip_digits: bool,
    pub remove_stopwords: bool,
    pub stopwords: HashSet<String>,
    /// Optional per-token normaliser (lemmatiser or stemmer). Off by default.
    pub stemmer: Option<fn(&str) -> String>,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        CleaningConfig {
            lowercase: true,
            strip_urls: true,
            strip_mentions: true,
            strip_hashmarks: true,
            strip_punctuation: true,
            strip_digits: true,
            remove_stopwords: true,
            stopwords: stopword_set(BUNDLED_STOPWORDS.lines()),
            stemmer: None,
        }
    }
}

/// Build a stopword set. Entries with punctuation are also inserted in their
/// punctuation-stripped form so that `don't` catches `dont`.
pub fn stopword_set<'a>(words: impl IntoIterator<Item = &'a str>) -> HashSet<String> {
    let mut set = HashSet::new();
    for w in words {
        let w = w.trim();
        if w.is_empty() {
            continue;
        }
        set.insert(w.to_string());
        let bare = remove_punctuation(w);
        if !bare.is_empty() {
            set.insert(bare);
        }
    }
    set
}

/// Read a one-token-per-line stopword file.
pub fn load_stopwords(path: &Path) -> Result<HashSet<String>> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(stopword_set(content.lines()))
}

fn remove_punctuation(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect()
}

fn is_url(token: &str) -> bool {
    let t = token.trim_start_matches('#');
    token.contains("http://") || token.contains("https://") || t.starts_with("www.")
}

fn is_mention(token: &str) -> bool {
    token.trim_start_matches('#').starts_with('@')
}

/// Clean one raw text. Idempotent; the result is space-separated tokens.
pub fn clean_text(raw: &str, cfg: &CleaningConfig) -> String {
    let lowered;
    let text = if cfg.lowercase {
        lowered = raw.to_lowercase();
        lowered.as_str()
    } else {
        raw
    };

    let mut out: Vec<String> = Vec::new();
    for token in text.split_whitespace() {
        if cfg.strip_urls && is_url(token) {
            continue;
        }
        if cfg.strip_mentions && is_mention(token) {
            continue;
        }
        let mut tok = if cfg.strip_hashmarks {
            token.replace('#', "")
        } else {
            token.to_string()
        };
        if cfg.strip_punctuation {
            tok = remove_punctuation(&tok);
        }
        // punctuation removal never introduces whitespace, but a stemmer might
        for piece in tok.split_whitespace() {
            if cfg.strip_digits && piece.chars().all(char::is_numeric) {
                continue;
            }
            if cfg.remove_stopwords && cfg.stopwords.contains(piece) {
                continue;
            }
            match cfg.stemmer {
                Some(stem) => {
                    let s = stem(piece);
                    out.extend(s.split_whitespace().map(str::to_string));
                }
                None => out.push(piece.to_string()),
            }
        }
    }
    out.join(" ")
}

/// Token-to-id map. Id 0 is padding, id 1 is the unknown token, real tokens
/// start at 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// Vocabulary holding only the reserved entries.
    pub fn empty() -> Self {
        let mut v = Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
        };
        v.push(PAD_TOKEN);
        v.push(UNK_TOKEN);
        v
    }

    fn push(&mut self, token: &str) {
        self.token_to_id
            .insert(token.to_string(), self.id_to_token.len());
        self.id_to_token.push(token.to_string());
    }

    /// Number of ids including the two reserved ones.
    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn unk_id(&self) -> usize {
        UNK_ID
    }

    /// Id of `token`, or the unknown id.
    pub fn id(&self, token: &str) -> usize {
        match self.token_to_id.get(token) {
            Some(&id) if id != PAD_ID => id,
            _ => UNK_ID,
        }
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.id_to_token.iter().map(String::as_str)
    }

    /// Serialise as `token<TAB>id` lines in id order.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (id, tok) in self.id_to_token.iter().enumerate() {
            writeln!(w, "{tok}\t{id}")?;
        }
        Ok(())
    }

    pub fn to_tsv(&self) -> String {
        let mut buf = Vec::new();
        self.write_tsv(&mut buf).expect("writing to a Vec");
        String::from_utf8(buf).expect("tokens are utf-8")
    }

    /// Parse `token<TAB>id` lines. Ids must be contiguous from 0 with the
    /// reserved tokens at 0 and 1.
    pub fn read_tsv<R: BufRead>(r: R) -> Result<Self> {
        let mut v = Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
        };
        for (lineno, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<vocabulary>", e))?;
            if line.is_empty() {
                continue;
            }
            let (tok, id) = line.rsplit_once('\t').ok_or_else(|| {
                Error::InvalidArgument(format!("vocabulary line {}: missing tab", lineno + 1))
            })?;
            let id: usize = id.parse().map_err(|_| {
                Error::InvalidArgument(format!("vocabulary line {}: bad id `{id}`", lineno + 1))
            })?;
            if id != v.id_to_token.len() || v.token_to_id.contains_key(tok) {
                return Err(Error::InvalidArgument(format!(
                    "vocabulary line {}: ids must be contiguous and tokens unique",
                    lineno + 1
                )));
            }
            v.push(tok);
        }
        if v.token(PAD_ID) != Some(PAD_TOKEN) || v.token(UNK_ID) != Some(UNK_TOKEN) {
            return Err(Error::InvalidArgument(
                "vocabulary must start with <pad> and <unk>".into(),
            ));
        }
        Ok(v)
    }
}

/// Build a vocabulary from cleaned texts. Tokens seen at least `min_count`
/// times get ids by descending frequency, ties broken lexicographically.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], min_count: usize) -> Result<Vocabulary> {
    if min_count == 0 {
        return Err(Error::InvalidArgument("min_count must be >= 1".into()));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for text in corpus {
        for tok in text.as_ref().split_whitespace() {
            *counts.entry(tok).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(t, c)| c >= min_count && t != PAD_TOKEN && t != UNK_TOKEN)
        .collect();
    // BTreeMap order is lexicographic; a stable sort keeps it within equal counts
    ranked.sort_by(|a, b| b.1.cmp(&a.1));
    let mut vocab = Vocabulary::empty();
    for (tok, _) in ranked {
        vocab.push(tok);
    }
    Ok(vocab)
}

/// A text encoded to exactly `d` ids, zero-padded at the end.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    /// Number of real (non-padding) positions at the front.
    pub true_length: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Encode a cleaned text to length `d`: pad with zeros at the end, or drop
/// the tail past `d`.
pub fn encode_pad(text: &str, vocab: &Vocabulary, d: usize) -> Result<TokenSequence> {
    if d == 0 {
        return Err(Error::InvalidArgument("sequence length must be >= 1".into()));
    }
    let mut ids: Vec<usize> = text
        .split_whitespace()
        .take(d)
        .map(|t| vocab.id(t))
        .collect();
    let true_length = ids.len();
    ids.resize(d, PAD_ID);
    Ok(TokenSequence { ids, true_length })
}
