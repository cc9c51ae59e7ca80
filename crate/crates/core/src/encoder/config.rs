use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Transformer encoder shape and regularization.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub max_len: usize,
    pub vocab_size: usize,
    pub n_labels: usize,
}

impl EncoderConfig {
    /// CPU-sized default: 12 layers of width 128.
    pub fn desk(vocab_size: usize, n_labels: usize) -> Self {
        Self {
            n_layers: 12,
            d_model: 128,
            n_heads: 4,
            d_ff: 512,
            dropout: 0.1,
            max_len: 512,
            vocab_size,
            n_labels,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.n_layers == 0 {
            return bad("n_layers must be at least 1".into());
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.d_ff == 0 || self.max_len == 0 || self.vocab_size == 0 {
            return bad("d_ff, max_len and vocab_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} not in [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// `key = value` lines.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n_layers = {}", self.n_layers);
        let _ = writeln!(s, "d_model = {}", self.d_model);
        let _ = writeln!(s, "n_heads = {}", self.n_heads);
        let _ = writeln!(s, "d_ff = {}", self.d_ff);
        let _ = writeln!(s, "dropout = {}", self.dropout);
        let _ = writeln!(s, "max_len = {}", self.max_len);
        let _ = writeln!(s, "vocab_size = {}", self.vocab_size);
        let _ = writeln!(s, "n_labels = {}", self.n_labels);
        s
    }

    /// Parses the keys written by [`EncoderConfig::to_kv`]; other keys are
    /// returned untouched for the caller.
    pub fn from_kv(text: &str, path: &Path) -> Result<(Self, Vec<(String, String)>)> {
        let mut cfg = Self::desk(0, 0);
        let mut rest = Vec::new();
        let mut seen = 0u32;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            let int = |v: &str| v.parse::<usize>().map_err(|_| err(format!("bad {k} {v:?}")));
            match k {
                "n_layers" => cfg.n_layers = int(v)?,
                "d_model" => cfg.d_model = int(v)?,
                "n_heads" => cfg.n_heads = int(v)?,
                "d_ff" => cfg.d_ff = int(v)?,
                "max_len" => cfg.max_len = int(v)?,
                "vocab_size" => cfg.vocab_size = int(v)?,
                "n_labels" => cfg.n_labels = int(v)?,
                "dropout" => {
                    cfg.dropout = v.parse().map_err(|_| err(format!("bad dropout {v:?}")))?
                }
                _ => {
                    rest.push((k.to_string(), v.to_string()));
                    continue;
                }
            }
            seen += 1;
        }
        if seen < 8 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                msg: "incomplete encoder config".into(),
            });
        }
        cfg.validate()?;
        Ok((cfg, rest))
    }
}
