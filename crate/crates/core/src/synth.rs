//! Seeded generator for a small two-label review-style corpus. Sentences
//! mix frequent function words, topical nouns and a few polarity words of
//! their own class only, so the clean labels are separable while most
//! tokens carry no label information.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FUNCTION: &[&str] = &[
    "the", "a", "and", "of", "to", "it", "is", "was", "this", "that", "with", "in", "for", "but",
    "on", "as", "at", "so", "its", "just",
];
const NOUNS: &[&str] = &[
    "movie", "film", "plot", "story", "cast", "acting", "script", "ending", "scene", "music",
    "camera", "director", "dialogue", "pacing", "sequel", "hero", "villain", "soundtrack",
    "screenplay", "premise", "finale", "character", "effects", "runtime",
];
const ADVERBS: &[&str] = &["really", "quite", "very", "truly", "rather", "somewhat", "totally"];
const POSITIVE: &[&str] = &[
    "great", "wonderful", "perfect", "brilliant", "moving", "superb", "delightful", "charming",
    "gripping", "excellent",
];
const NEGATIVE: &[&str] = &[
    "awful", "boring", "terrible", "dull", "clumsy", "horrible", "tedious", "bland", "messy",
    "dreadful",
];
const FILLER: &[&str] = &[
    "i", "we", "saw", "watched", "thought", "felt", "yesterday", "again", "overall", "honestly",
    "maybe", "though",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Fraction of training labels flipped.
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_train: 400,
            n_test: 200,
            min_words: 8,
            max_words: 24,
            label_noise: 0.03,
            seed: 0,
        }
    }
}

pub const LABELS: [&str; 2] = ["pos", "neg"];

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).expect("non-empty word list")
}

fn sentence(rng: &mut ChaCha8Rng, positive: bool, cfg: &SynthConfig) -> String {
    let target = rng.gen_range(cfg.min_words..=cfg.max_words.max(cfg.min_words));
    let own = if positive { POSITIVE } else { NEGATIVE };
    let mut words: Vec<&str> = Vec::with_capacity(target + 4);
    let mut cues = 0;
    while words.len() < target {
        match rng.gen_range(0..10) {
            0..=2 => {
                words.push(pick(rng, FUNCTION));
                words.push(pick(rng, NOUNS));
                words.push(pick(rng, FUNCTION));
            }
            3 | 4 => {
                words.push(pick(rng, FUNCTION));
                words.push(pick(rng, NOUNS));
                words.push("was");
                if rng.gen_bool(0.5) {
                    words.push(pick(rng, ADVERBS));
                }
                words.push(pick(rng, own));
                cues += 1;
            }
            5 => {
                words.push("but");
                words.push(pick(rng, FUNCTION));
                words.push(pick(rng, NOUNS));
                words.push(pick(rng, FILLER));
            }
            _ => words.push(pick(rng, FILLER)),
        }
    }
    if cues == 0 {
        words.push(pick(rng, ADVERBS));
        words.push(pick(rng, own));
    }
    words.join(" ")
}

fn split(rng: &mut ChaCha8Rng, n: usize, noise: f64, cfg: &SynthConfig) -> Vec<(String, String)> {
    (0..n)
        .map(|i| {
            let positive = i % 2 == 0;
            let text = sentence(rng, positive, cfg);
            let flip = noise > 0.0 && rng.gen_bool(noise);
            let label = LABELS[usize::from(positive == flip)];
            (label.to_string(), text)
        })
        .collect()
}

pub type Rows = Vec<(String, String)>;

/// `(label, text)` rows for the train and test splits. Test labels are
/// never flipped.
pub fn generate(cfg: &SynthConfig) -> (Rows, Rows) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let train = split(&mut rng, cfg.n_train, cfg.label_noise, cfg);
    let test = split(&mut rng, cfg.n_test, 0.0, cfg);
    (train, test)
}

/// One-label variant used to exercise degenerate statistics.
pub fn single_label(cfg: &SynthConfig) -> Vec<(String, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.n_train)
        .map(|i| ("only".to_string(), sentence(&mut rng, i % 2 == 0, cfg)))
        .collect()
}

pub fn to_tsv(rows: &[(String, String)]) -> String {
    rows.iter().map(|(l, t)| format!("{l}\t{t}\n")).collect()
}
