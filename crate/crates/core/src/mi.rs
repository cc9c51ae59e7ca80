//! Mutual-information depth estimation.
//!
//! Each word gets a score summing, over every label, the binary mutual
//! information between "word present in the document" and "document carries
//! the label". Scores are log-scaled (`-ln mi`) and cut into `N` equal-width
//! bins; high-MI words land in shallow bins.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::corpus::{CorpusStats, Vocab};
use crate::depth_map::DepthMap;
use crate::error::{Error, Result};

pub const DEFAULT_SMOOTHING: f64 = 0.1;

/// Summed per-label binary MI of word presence, in nats.
///
/// Each per-label 2x2 table gets `smoothing` added to all four cells before
/// normalizing; marginals are sums of the smoothed cells. A label whose
/// indicator is constant over the training split (present in every document
/// or none) carries no information and contributes exactly zero.
pub fn mi_score(stats: &CorpusStats, word: u32, smoothing: f64) -> Result<f64> {
    if !(smoothing > 0.0 && smoothing.is_finite()) {
        return Err(Error::invalid(format!(
            "smoothing must be positive, got {smoothing}"
        )));
    }
    let n = f64::from(stats.n_docs);
    let df = f64::from(stats.doc_freq(word));
    let total = n + 4.0 * smoothing;
    let mut mi = 0.0;
    for (label, &n_label) in stats.n_docs_with_label.iter().enumerate() {
        if n_label == 0 || n_label == stats.n_docs {
            continue;
        }
        let ny = f64::from(n_label);
        let both = f64::from(stats.joint(word, label));
        // [word present][label present]
        let cells = [
            [n - df - ny + both, ny - both],
            [df - both, both],
        ]
        .map(|row| row.map(|c| (c + smoothing) / total));
        let p_word = [cells[0][0] + cells[0][1], cells[1][0] + cells[1][1]];
        let p_label = [cells[0][0] + cells[1][0], cells[0][1] + cells[1][1]];
        for (iw, row) in cells.iter().enumerate() {
            for (il, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    mi += p * (p / (p_word[iw] * p_label[il])).ln();
                }
            }
        }
    }
    Ok(mi)
}

/// `-ln(mi)`.
pub fn log_scale(mi: f64) -> Result<f64> {
    if mi.is_nan() || mi <= 0.0 || !mi.is_finite() {
        return Err(Error::invalid(format!("log scaling needs mi > 0, got {mi}")));
    }
    Ok(-mi.ln())
}

/// Equal-width binning of `values` into depths `1..=n_bins`, ascending.
///
/// The range is the span of the finite values; `+inf` entries (zero MI) go
/// to the deepest bin. If every value is identical the range is degenerate
/// and all depths are 1.
pub fn bin_depths(values: &[f64], n_bins: usize) -> Result<Vec<usize>> {
    if n_bins == 0 {
        return Err(Error::invalid("n_bins must be at least 1"));
    }
    if values.is_empty() {
        return Err(Error::invalid("cannot bin an empty table"));
    }
    if values.iter().any(|v| v.is_nan() || *v == f64::NEG_INFINITY) {
        return Err(Error::NonFinite("mi_log values".into()));
    }
    if values.iter().all(|&v| v == values[0]) {
        return Ok(vec![1; values.len()]);
    }
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    let width = (hi - lo) / n_bins as f64;
    Ok(values
        .iter()
        .map(|&v| {
            if v.is_infinite() {
                n_bins
            } else if width == 0.0 {
                1
            } else {
                let bin = ((v - lo) / width).floor() as usize;
                (bin + 1).clamp(1, n_bins)
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiRecord {
    pub mi: f64,
    pub mi_log: f64,
    pub depth: usize,
}

/// Per-word MI scores and depths, indexed by vocabulary id.
#[derive(Debug, Clone, PartialEq)]
pub struct MiTable {
    records: Vec<Option<MiRecord>>,
    pub smoothing: f64,
    pub n_bins: usize,
}

impl MiTable {
    /// Scores every ordinary vocabulary word and bins the log-scaled scores.
    pub fn build(stats: &CorpusStats, vocab: &Vocab, smoothing: f64, n_bins: usize) -> Result<Self> {
        let ids: Vec<u32> = vocab.word_ids().collect();
        if ids.is_empty() {
            return Err(Error::invalid("vocabulary has no words"));
        }
        let mis = ids
            .par_iter()
            .map(|&id| mi_score(stats, id, smoothing))
            .collect::<Result<Vec<_>>>()?;
        let logs: Vec<f64> = mis
            .iter()
            .map(|&mi| log_scale(mi).unwrap_or(f64::INFINITY))
            .collect();
        let depths = bin_depths(&logs, n_bins)?;
        let mut records = vec![None; vocab.len()];
        for (i, &id) in ids.iter().enumerate() {
            records[id as usize] = Some(MiRecord {
                mi: mis[i],
                mi_log: logs[i],
                depth: depths[i],
            });
        }
        Ok(Self {
            records,
            smoothing,
            n_bins,
        })
    }

    pub fn get(&self, word: u32) -> Option<&MiRecord> {
        self.records.get(word as usize).and_then(Option::as_ref)
    }

    pub fn depth(&self, word: u32) -> usize {
        self.get(word).map_or(self.n_bins, |r| r.depth)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &MiRecord)> {
        self.records
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.as_ref().map(|r| (i as u32, r)))
    }

    pub fn len(&self) -> usize {
        self.records.iter().flatten().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Looks up each token; words missing from the table get the maximum depth.
    pub fn sentence_depths(&self, tokens: &[u32]) -> DepthMap {
        DepthMap::new(tokens.iter().map(|&t| self.depth(t)).collect(), self.n_bins)
            .expect("table depths are within range")
    }

    /// Writes `word<TAB>mi<TAB>mi_log<TAB>depth` lines in vocabulary order.
    pub fn write_tsv(&self, path: &Path, vocab: &Vocab) -> Result<()> {
        let mut out = String::new();
        for (id, r) in self.iter() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                vocab.word(id),
                r.mi,
                r.mi_log,
                r.depth
            ));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_tsv(path: &Path, vocab: &Vocab, smoothing: f64, n_bins: usize) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut records = vec![None; vocab.len()];
        for (i, line) in text.lines().enumerate() {
            let bad = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(bad("expected word<TAB>mi<TAB>mi_log<TAB>depth".into()));
            }
            let id = vocab
                .id(f[0])
                .ok_or_else(|| bad(format!("word {:?} not in vocabulary", f[0])))?;
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number {s:?}")));
            let depth: usize = f[3].parse().map_err(|_| bad("bad depth".into()))?;
            if depth == 0 || depth > n_bins {
                return Err(bad(format!("depth {depth} outside [1, {n_bins}]")));
            }
            records[id as usize] = Some(MiRecord {
                mi: num(f[1])?,
                mi_log: num(f[2])?,
                depth,
            });
        }
        Ok(Self {
            records,
            smoothing,
            n_bins,
        })
    }
}

/// Equal-width histogram of finite values: `(bin_lo, bin_hi, count)`.
pub fn histogram(values: &[f64], n_bins: usize) -> Vec<(f64, f64, u64)> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() || n_bins == 0 {
        return Vec::new();
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![0u64; n_bins];
    for v in finite {
        let b = if width > 0.0 {
            (((v - lo) / width).floor() as usize).min(n_bins - 1)
        } else {
            0
        };
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (lo + width * i as f64, lo + width * (i + 1) as f64, c))
        .collect()
}

pub fn write_histogram(path: &Path, bins: &[(f64, f64, u64)]) -> Result<()> {
    let out: String = bins
        .iter()
        .map(|(lo, hi, c)| format!("{lo}\t{hi}\t{c}\n"))
        .collect();
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{collect_stats, Corpus, Split};

    fn corpus(rows: &[(&str, &str)]) -> Corpus {
        let rows: Vec<(String, String)> = rows
            .iter()
            .map(|(l, t)| (l.to_string(), t.to_string()))
            .collect();
        Corpus::from_pairs(&rows, &[], &Default::default()).unwrap()
    }

    /// Brute force over documents: builds each 2x2 table by direct counting.
    fn oracle(c: &Corpus, word: u32, s: f64) -> f64 {
        let mut total = 0.0;
        for y in 0..c.labels.len() {
            let mut counts = [[0.0f64; 2]; 2];
            for d in &c.train {
                let ix = d.tokens.contains(&word) as usize;
                let iy = (d.label == y) as usize;
                counts[ix][iy] += 1.0;
            }
            let n: f64 = counts.iter().flatten().sum();
            if counts[0][1] + counts[1][1] == 0.0 || counts[0][1] + counts[1][1] == n {
                continue;
            }
            let p: Vec<Vec<f64>> = counts
                .iter()
                .map(|r| r.iter().map(|c| (c + s) / (n + 4.0 * s)).collect())
                .collect();
            for ix in 0..2 {
                for iy in 0..2 {
                    let px = p[ix][0] + p[ix][1];
                    let py = p[0][iy] + p[1][iy];
                    total += p[ix][iy] * (p[ix][iy].ln() - px.ln() - py.ln());
                }
            }
        }
        total
    }

    #[test]
    fn four_doc_corpus_matches_oracle() {
        let c = corpus(&[
            ("pos", "great a"),
            ("pos", "great b"),
            ("neg", "c"),
            ("neg", "d"),
        ]);
        let s = collect_stats(&c, Split::Train).unwrap();
        let w = c.vocab.id("great").unwrap();
        let got = mi_score(&s, w, 0.1).unwrap();
        let want = oracle(&c, w, 0.1);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        // Label-aligned word approaches one ln 2 per label as smoothing vanishes.
        let limit = mi_score(&s, w, 1e-12).unwrap();
        assert!((limit - 2.0 * std::f64::consts::LN_2).abs() < 1e-9, "{limit}");
    }

    #[test]
    fn balanced_word_is_near_independent() {
        let c = corpus(&[
            ("pos", "the x"),
            ("pos", "y"),
            ("neg", "the z"),
            ("neg", "w"),
        ]);
        let s = collect_stats(&c, Split::Train).unwrap();
        let mi = mi_score(&s, c.vocab.id("the").unwrap(), 0.1).unwrap();
        assert!((0.0..1e-2).contains(&mi), "{mi}");
    }

    #[test]
    fn absent_word_scores_as_zero_frequency() {
        let c = corpus(&[("pos", "a"), ("neg", "b")]);
        let s = collect_stats(&c, Split::Train).unwrap();
        let mi = mi_score(&s, 10_000, 0.1).unwrap();
        assert!(mi.is_finite() && mi >= 0.0);
        assert!(mi_score(&s, 3, 0.0).is_err());
    }

    #[test]
    fn log_scale_values() {
        assert_eq!(log_scale(1.0).unwrap(), 0.0);
        assert!((log_scale((-2.0f64).exp()).unwrap() - 2.0).abs() < 1e-15);
        assert!((log_scale(0.05).unwrap() - 2.995_732_273_553_991).abs() < 1e-12);
        assert!(log_scale(0.0).is_err());
        assert!(log_scale(-1.0).is_err());
    }

    #[test]
    fn binning_examples() {
        assert_eq!(bin_depths(&[0.0, 1.0, 2.0, 3.0], 4).unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(bin_depths(&[0.7; 5], 12).unwrap(), vec![1; 5]);
        let d = bin_depths(&[-1.5, 0.2, 9.0], 12).unwrap();
        assert_eq!(d[2], 12);
        assert_eq!(d[0], 1);
        assert_eq!(bin_depths(&[0.0, f64::INFINITY], 6).unwrap(), vec![1, 6]);
        assert!(bin_depths(&[], 3).is_err());
        assert!(bin_depths(&[1.0], 0).is_err());
    }

    #[test]
    fn oov_gets_max_depth() {
        let c = corpus(&[("pos", "good good"), ("neg", "bad")]);
        let s = collect_stats(&c, Split::Train).unwrap();
        let t = MiTable::build(&s, &c.vocab, 0.1, 12).unwrap();
        let good = c.vocab.id("good").unwrap();
        let dm = t.sentence_depths(&[good, crate::corpus::UNK, 999]);
        assert_eq!(dm[1], 12);
        assert_eq!(dm[2], 12);
        assert_eq!(dm[0], t.depth(good));
        assert!(t.sentence_depths(&[]).is_empty());
    }

    #[test]
    fn single_label_corpus_is_degenerate() {
        let c = corpus(&[("a", "x y"), ("a", "x z"), ("a", "w")]);
        let s = collect_stats(&c, Split::Train).unwrap();
        let t = MiTable::build(&s, &c.vocab, 0.1, 12).unwrap();
        for (_, r) in t.iter() {
            assert_eq!(r.mi, 0.0);
            assert_eq!(r.depth, 1);
        }
    }

    #[test]
    fn table_file_roundtrip() {
        let c = corpus(&[("pos", "good x"), ("neg", "bad x"), ("pos", "good")]);
        let s = collect_stats(&c, Split::Train).unwrap();
        let t = MiTable::build(&s, &c.vocab, 0.1, 4).unwrap();
        let dir = std::env::temp_dir().join(format!("adadepth-mi-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("mi.tsv");
        t.write_tsv(&p, &c.vocab).unwrap();
        assert_eq!(MiTable::read_tsv(&p, &c.vocab, 0.1, 4).unwrap(), t);
        fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn histogram_counts_everything() {
        let h = histogram(&[0.0, 0.5, 1.0, 1.0, f64::INFINITY], 2);
        assert_eq!(h.len(), 2);
        assert_eq!(h[0], (0.0, 0.5, 1));
        assert_eq!(h[1].2, 3);
    }
}
