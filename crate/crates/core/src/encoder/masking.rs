use rand::Rng;

use crate::corpus::{MASK, UNK};
use crate::error::{Error, Result};

/// A sentence prepared for masked-token prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedSentence {
    pub input: Vec<u32>,
    pub positions: Vec<usize>,
    pub targets: Vec<usize>,
}

/// Selects each position with probability `rate` (at least one per
/// sentence); a selected token becomes `<MASK>` 80% of the time, a random
/// ordinary word 10%, and stays unchanged 10%.
pub fn mask_tokens<R: Rng>(
    tokens: &[u32],
    rate: f64,
    vocab_size: usize,
    rng: &mut R,
) -> Result<MaskedSentence> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::invalid(format!(
            "masking rate {rate} must be in (0, 1]"
        )));
    }
    if tokens.is_empty() {
        return Err(Error::invalid("cannot mask an empty sentence"));
    }
    let mut positions: Vec<usize> = (0..tokens.len()).filter(|_| rng.gen::<f64>() < rate).collect();
    if positions.is_empty() {
        positions.push(rng.gen_range(0..tokens.len()));
    }
    let first_word = UNK as usize + 2;
    let mut input = tokens.to_vec();
    for &p in &positions {
        let roll: f64 = rng.gen();
        if roll < 0.8 {
            input[p] = MASK;
        } else if roll < 0.9 && vocab_size > first_word {
            input[p] = rng.gen_range(first_word..vocab_size) as u32;
        }
    }
    let targets = positions.iter().map(|&p| tokens[p] as usize).collect();
    Ok(MaskedSentence {
        input,
        positions,
        targets,
    })
}

/// `tokens` with position `pos` replaced by `<MASK>`.
pub fn mask_one(tokens: &[u32], pos: usize) -> Vec<u32> {
    let mut out = tokens.to_vec();
    out[pos] = MASK;
    out
}
