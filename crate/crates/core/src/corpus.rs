//! Labeled text ingestion: tokenization, vocabulary, and document-level
//! presence statistics.
//!
//! Datasets are TSV files with one `label<TAB>text` document per line. The
//! vocabulary and label set are frozen from the training split; test-time
//! words outside the vocabulary map to `<UNK>`.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const MASK: u32 = 2;
const SPECIALS: [&str; 3] = ["<PAD>", "<UNK>", "<MASK>"];

/// Tokenizer and loader settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizerConfig {
    pub max_len: usize,
    pub lowercase: bool,
    /// Minimum training document frequency for a word to enter the vocabulary.
    pub min_freq: u32,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            max_len: 512,
            lowercase: true,
            min_freq: 1,
        }
    }
}

impl TokenizerConfig {
    /// Parses a plain `key = value` file. Blank lines and `#` comments are
    /// ignored; unknown keys are an error.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected key = value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "max_len" => {
                    cfg.max_len = value
                        .parse()
                        .map_err(|_| parse_err(format!("bad max_len {value:?}")))?;
                    if cfg.max_len == 0 {
                        return Err(parse_err("max_len must be positive".into()));
                    }
                }
                "lowercase" => {
                    cfg.lowercase = value
                        .parse()
                        .map_err(|_| parse_err(format!("bad lowercase {value:?}")))?;
                }
                "min_freq" => {
                    cfg.min_freq = value
                        .parse()
                        .map_err(|_| parse_err(format!("bad min_freq {value:?}")))?;
                }
                other => return Err(parse_err(format!("unknown key {other:?}"))),
            }
        }
        Ok(cfg)
    }
}

/// Lowercased word-level split: alphanumeric runs become words and every
/// other non-whitespace character is its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_with(text, true)
}

pub fn tokenize_with(text: &str, lowercase: bool) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            if lowercase {
                word.extend(ch.to_lowercase());
            } else {
                word.push(ch);
            }
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Word/id bijection with training document frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, u32>,
    doc_freq: Vec<u32>,
}

impl Vocab {
    fn with_specials() -> Self {
        let mut v = Self {
            words: Vec::new(),
            index: HashMap::new(),
            doc_freq: Vec::new(),
        };
        for s in SPECIALS {
            v.insert(s);
        }
        v
    }

    fn insert(&mut self, word: &str) -> u32 {
        if let Some(&id) = self.index.get(word) {
            return id;
        }
        let id = self.words.len() as u32;
        self.words.push(word.to_string());
        self.index.insert(word.to_string(), id);
        self.doc_freq.push(0);
        id
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    /// Id of `word`, or `<UNK>`.
    pub fn lookup(&self, word: &str) -> u32 {
        self.id(word).unwrap_or(UNK)
    }

    pub fn word(&self, id: u32) -> &str {
        &self.words[id as usize]
    }

    pub fn doc_freq(&self, id: u32) -> u32 {
        self.doc_freq.get(id as usize).copied().unwrap_or(0)
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < SPECIALS.len()
    }

    /// Ids of ordinary (non-special) words.
    pub fn word_ids(&self) -> impl Iterator<Item = u32> + '_ {
        (SPECIALS.len() as u32)..(self.words.len() as u32)
    }

    /// Writes `word<TAB>id<TAB>doc_freq` lines.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (id, w) in self.words.iter().enumerate() {
            out.push_str(&format!("{w}\t{id}\t{}\n", self.doc_freq[id]));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_tsv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut v = Self {
            words: Vec::new(),
            index: HashMap::new(),
            doc_freq: Vec::new(),
        };
        for (i, line) in text.lines().enumerate() {
            let bad = |msg: &str| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: msg.to_string(),
            };
            let mut fields = line.split('\t');
            let (Some(w), Some(id), Some(df), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(bad("expected word<TAB>id<TAB>doc_freq"));
            };
            let id: usize = id.parse().map_err(|_| bad("bad id"))?;
            if id != v.words.len() {
                return Err(bad("ids must be contiguous from 0"));
            }
            let df: u32 = df.parse().map_err(|_| bad("bad doc_freq"))?;
            if v.index.contains_key(w) {
                return Err(bad("duplicate word"));
            }
            v.insert(w);
            v.doc_freq[id] = df;
        }
        if v.words.len() < SPECIALS.len()
            || SPECIALS
                .iter()
                .enumerate()
                .any(|(i, s)| v.words[i] != *s)
        {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: "vocab must start with <PAD>, <UNK>, <MASK>".into(),
            });
        }
        Ok(v)
    }
}

/// Label names in order of first appearance in the training split.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelSet {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelSet {
    fn insert(&mut self, name: &str) -> usize {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), self.names.len() - 1);
        self.names.len() - 1
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub tokens: Vec<u32>,
    pub label: usize,
    pub raw_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// A frozen train/test dataset.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub vocab: Vocab,
    pub labels: LabelSet,
    pub train: Vec<Document>,
    pub test: Vec<Document>,
    pub config: TokenizerConfig,
}

/// One `label<TAB>text` record with its source position.
struct Record {
    line: usize,
    label: String,
    tokens: Vec<String>,
    raw: String,
}

fn parse_records(text: &str, path: &Path, cfg: &TokenizerConfig) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg: msg.to_string(),
        };
        let (label, raw) = line
            .split_once('\t')
            .ok_or_else(|| err("expected label<TAB>text"))?;
        let label = label.trim();
        if label.is_empty() {
            return Err(err("empty label"));
        }
        let mut tokens = tokenize_with(raw, cfg.lowercase);
        if tokens.is_empty() {
            return Err(err("empty text"));
        }
        tokens.truncate(cfg.max_len);
        out.push(Record {
            line: line_no,
            label: label.to_string(),
            tokens,
            raw: raw.to_string(),
        });
    }
    Ok(out)
}

impl Corpus {
    /// Loads a training TSV and an optional test TSV.
    pub fn load_tsv(train: &Path, test: Option<&Path>, cfg: &TokenizerConfig) -> Result<Self> {
        let read = |p: &Path| fs::read_to_string(p).map_err(|e| Error::io(p, e));
        let train_text = read(train)?;
        let test_text = match test {
            Some(p) => read(p)?,
            None => String::new(),
        };
        Self::from_tsv_str(
            &train_text,
            train,
            &test_text,
            test.unwrap_or(Path::new("<none>")),
            cfg,
        )
    }

    /// Loads `train.tsv` and, when present, `test.tsv` from a directory.
    pub fn load_dir(dir: &Path, cfg: &TokenizerConfig) -> Result<Self> {
        let test = dir.join("test.tsv");
        let test = test.exists().then_some(test);
        Self::load_tsv(&dir.join("train.tsv"), test.as_deref(), cfg)
    }

    pub fn from_tsv_str(
        train: &str,
        train_path: &Path,
        test: &str,
        test_path: &Path,
        cfg: &TokenizerConfig,
    ) -> Result<Self> {
        if cfg.max_len == 0 {
            return Err(Error::invalid("max_len must be positive"));
        }
        let train_recs = parse_records(train, train_path, cfg)?;
        let test_recs = parse_records(test, test_path, cfg)?;

        let mut labels = LabelSet::default();
        for r in &train_recs {
            labels.insert(&r.label);
        }

        // Document frequencies over raw words decide vocabulary membership.
        let mut raw_df: HashMap<&str, u32> = HashMap::new();
        let mut order: Vec<&str> = Vec::new();
        for r in &train_recs {
            let mut seen = std::collections::HashSet::new();
            for t in &r.tokens {
                if seen.insert(t.as_str()) {
                    let e = raw_df.entry(t.as_str()).or_insert_with(|| {
                        order.push(t.as_str());
                        0
                    });
                    *e += 1;
                }
            }
        }
        let mut vocab = Vocab::with_specials();
        for w in order {
            if raw_df[w] >= cfg.min_freq && !SPECIALS.contains(&w) {
                vocab.insert(w);
            }
        }

        let encode = |r: &Record, labels: &LabelSet, path: &Path| -> Result<Document> {
            let label = labels.id(&r.label).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: r.line,
                msg: format!("unknown label {:?}", r.label),
            })?;
            Ok(Document {
                tokens: r.tokens.iter().map(|t| vocab.lookup(t)).collect(),
                label,
                raw_text: r.raw.clone(),
            })
        };
        let train_docs = train_recs
            .iter()
            .map(|r| encode(r, &labels, train_path))
            .collect::<Result<Vec<_>>>()?;
        let test_docs = test_recs
            .iter()
            .map(|r| encode(r, &labels, test_path))
            .collect::<Result<Vec<_>>>()?;

        for d in &train_docs {
            let mut ids = d.tokens.clone();
            ids.sort_unstable();
            ids.dedup();
            for id in ids {
                vocab.doc_freq[id as usize] += 1;
            }
        }

        Ok(Self {
            vocab,
            labels,
            train: train_docs,
            test: test_docs,
            config: cfg.clone(),
        })
    }

    /// Builds a corpus from in-memory `(label, text)` pairs.
    pub fn from_pairs(
        train: &[(String, String)],
        test: &[(String, String)],
        cfg: &TokenizerConfig,
    ) -> Result<Self> {
        let join = |rows: &[(String, String)]| {
            rows.iter()
                .map(|(l, t)| format!("{l}\t{t}\n"))
                .collect::<String>()
        };
        Self::from_tsv_str(
            &join(train),
            Path::new("<train>"),
            &join(test),
            Path::new("<test>"),
            cfg,
        )
    }

    /// Tokenizes and maps new text against the frozen vocabulary.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut toks: Vec<u32> = tokenize_with(text, self.config.lowercase)
            .iter()
            .map(|t| self.vocab.lookup(t))
            .collect();
        toks.truncate(self.config.max_len);
        toks
    }

    pub fn split(&self, split: Split) -> &[Document] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    /// Writes one split back out as `label<TAB>text`.
    pub fn write_split_tsv(&self, split: Split, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for d in self.split(split) {
            writeln!(f, "{}\t{}", self.labels.name(d.label), d.raw_text)
                .map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

/// Document-level presence counts over the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    pub n_docs: u32,
    pub n_docs_with_label: Vec<u32>,
    doc_freq: Vec<u32>,
    /// Dense `vocab × labels` joint presence counts.
    joint: Vec<u32>,
    n_labels: usize,
}

impl CorpusStats {
    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn vocab_len(&self) -> usize {
        self.doc_freq.len()
    }

    /// Number of training documents containing `word`; 0 for unknown ids.
    pub fn doc_freq(&self, word: u32) -> u32 {
        self.doc_freq.get(word as usize).copied().unwrap_or(0)
    }

    /// Number of training documents containing `word` and labeled `label`.
    pub fn joint(&self, word: u32, label: usize) -> u32 {
        if (word as usize) >= self.doc_freq.len() {
            return 0;
        }
        self.joint[word as usize * self.n_labels + label]
    }
}

/// Counts presence statistics. Only the training split may be used.
pub fn collect_stats(corpus: &Corpus, split: Split) -> Result<CorpusStats> {
    if split != Split::Train {
        return Err(Error::invalid(
            "presence statistics must come from the training split",
        ));
    }
    if corpus.train.is_empty() {
        return Err(Error::invalid("empty training split"));
    }
    let v = corpus.vocab.len();
    let s = corpus.labels.len();
    let mut stats = CorpusStats {
        n_docs: corpus.train.len() as u32,
        n_docs_with_label: vec![0; s],
        doc_freq: vec![0; v],
        joint: vec![0; v * s],
        n_labels: s,
    };
    let mut seen = vec![false; v];
    for d in &corpus.train {
        stats.n_docs_with_label[d.label] += 1;
        for &t in &d.tokens {
            let t = t as usize;
            if !seen[t] {
                seen[t] = true;
                stats.doc_freq[t] += 1;
                stats.joint[t * s + d.label] += 1;
            }
        }
        for &t in &d.tokens {
            seen[t as usize] = false;
        }
    }
    Ok(stats)
}

/// Resolves the conventional dataset file layout.
pub fn dataset_paths(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join("train.tsv"), dir.join("test.tsv"))
}
