//! Depth estimation from masked-token reconstruction: train an anytime
//! masked language model, then for every token read how well each layer
//! recovers it and pick the cheapest layer that is good enough.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::Document;
use crate::bench::warmup_lr;
use crate::depth_map::{average_depth, DepthMap};
use crate::encoder::{mask_one, mask_tokens, MaskedSentence, Model, ModelKind};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, Graph, Real};

pub const DEFAULT_LAMBDA: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct ReconConfig {
    pub lambda: f64,
    /// Masked variants evaluated per graph.
    pub batch_size: usize,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            batch_size: 16,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda {} must be >= 0", self.lambda)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        Ok(())
    }
}

/// Per-layer cross-entropy (nats) of the true token at one masked position.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerLossProfile(pub Vec<f64>);

impl LayerLossProfile {
    pub fn new(losses: Vec<f64>) -> Result<Self> {
        if losses.is_empty() {
            return Err(Error::invalid("empty loss profile"));
        }
        if let Some(l) = losses.iter().find(|l| !l.is_finite()) {
            return Err(Error::NonFinite(format!("layer loss {l}")));
        }
        Ok(Self(losses))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `argmin_n (loss_n + lambda * n)` with 1-based `n`: the penalty grows
/// with depth so larger `lambda` selects shallower layers. Ties go to the
/// smallest `n`.
pub fn select_depth(losses: &[f64], lambda: f64) -> Result<usize> {
    if losses.is_empty() {
        return Err(Error::invalid("empty loss profile"));
    }
    if !lambda.is_finite() {
        return Err(Error::NonFinite(format!("lambda {lambda}")));
    }
    let mut best = (0, f64::INFINITY);
    for (i, &l) in losses.iter().enumerate() {
        if !l.is_finite() {
            return Err(Error::NonFinite(format!("loss {l} at layer {}", i + 1)));
        }
        let score = l + lambda * (i + 1) as f64;
        if score < best.1 {
            best = (i, score);
        }
    }
    Ok(best.0 + 1)
}

/// Schedule for anytime masked-LM training.
#[derive(Debug, Clone)]
pub struct MlmSchedule {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub mask_rate: f64,
    /// Steps of linear learning-rate warmup.
    pub warmup: usize,
    pub seed: u64,
    /// Steps (1-based, after the update) at which the held-out loss is
    /// recorded.
    pub eval_steps: Vec<usize>,
}

impl Default for MlmSchedule {
    fn default() -> Self {
        Self {
            steps: 500,
            batch_size: 8,
            lr: 1e-3,
            mask_rate: 0.15,
            warmup: 0,
            seed: 0,
            eval_steps: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MlmLog {
    /// Mean summed anytime loss of each training batch, before its update.
    pub train_loss: Vec<f64>,
    /// `(step, loss)` on the held-out slice.
    pub heldout: Vec<(usize, f64)>,
}

/// Held-out sentences with masks fixed once so losses are comparable
/// across steps.
pub fn fixed_masks(docs: &[Document], rate: f64, vocab_size: usize, seed: u64) -> Result<Vec<MaskedSentence>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    docs.iter()
        .map(|d| mask_tokens(&d.tokens, rate, vocab_size, &mut rng))
        .collect()
}

/// Mean over sentences of the summed anytime loss, in eval mode.
pub fn anytime_loss<F: Real>(model: &Model<F>, batch: &[MaskedSentence]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mut total = 0.0;
    for m in batch {
        let mut g = Graph::eval(&model.store);
        let h0 = model.embed(&mut g, &m.input)?;
        let s = model.forward_fixed(&mut g, h0)?;
        let (loss, _) = model.mlm_anytime_loss(&mut g, &s, &m.positions, &m.targets)?;
        total += g.scalar(loss).to_f64().unwrap_or(f64::NAN);
    }
    Ok(total / batch.len() as f64)
}

/// Trains `model` in place on `train` with the summed per-layer masked-LM
/// loss. `heldout` is evaluated at `schedule.eval_steps`.
pub fn train_mlm<F: Real>(
    model: &mut Model<F>,
    train: &[Document],
    heldout: &[MaskedSentence],
    schedule: &MlmSchedule,
) -> Result<MlmLog> {
    if model.kind != ModelKind::MaskedLm {
        return Err(Error::invalid("train_mlm needs a masked-LM model"));
    }
    if !(schedule.mask_rate > 0.0 && schedule.mask_rate <= 1.0) {
        return Err(Error::invalid(format!(
            "masking rate {} must be in (0, 1]",
            schedule.mask_rate
        )));
    }
    if schedule.steps > 0 && train.is_empty() {
        return Err(Error::invalid("no training sentences"));
    }
    if schedule.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut adam = AdamConfig::default();
    let vocab = model.config.vocab_size;
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut log = MlmLog::default();
    let scale = F::one() / F::from_usize(schedule.batch_size).expect("fits");
    for step in 1..=schedule.steps {
        let batch = (0..schedule.batch_size)
            .map(|_| {
                let d = &train[rng.gen_range(0..train.len())];
                mask_tokens(&d.tokens, schedule.mask_rate, vocab, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let drop_rng = ChaCha8Rng::seed_from_u64(rng.gen());
        let grads = {
            let mut g = Graph::train(&model.store, drop_rng);
            let mut total = None;
            for m in &batch {
                let h0 = model.embed(&mut g, &m.input)?;
                let s = model.forward_fixed(&mut g, h0)?;
                let (loss, _) = model.mlm_anytime_loss(&mut g, &s, &m.positions, &m.targets)?;
                let loss = g.scale(loss, scale);
                total = Some(match total {
                    None => loss,
                    Some(t) => g.add(t, loss)?,
                });
            }
            let total = total.expect("batch_size >= 1");
            let value = g.scalar(total).to_f64().unwrap_or(f64::NAN);
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("masked-LM loss at step {step}")));
            }
            log.train_loss.push(value);
            g.backward(total)?
        };
        adam.lr = warmup_lr(schedule.lr, schedule.warmup, step);
        model.store.accumulate(&grads);
        model.store.adam_step(&adam)?;
        if schedule.eval_steps.contains(&step) && !heldout.is_empty() {
            log.heldout.push((step, anytime_loss(model, heldout)?));
        }
    }
    Ok(log)
}

/// Masks `position` and returns the true token's cross-entropy at every
/// layer's shared output head.
pub fn layer_losses<F: Real>(model: &Model<F>, tokens: &[u32], position: usize) -> Result<LayerLossProfile> {
    let mut out = layer_losses_many(model, tokens, &[position])?;
    Ok(out.pop().expect("one position"))
}

fn layer_losses_many<F: Real>(
    model: &Model<F>,
    tokens: &[u32],
    positions: &[usize],
) -> Result<Vec<LayerLossProfile>> {
    let mut g = Graph::eval(&model.store);
    let mut out = Vec::with_capacity(positions.len());
    for &p in positions {
        if p >= tokens.len() {
            return Err(Error::invalid(format!(
                "position {p} outside sentence of {} tokens",
                tokens.len()
            )));
        }
        let input = mask_one(tokens, p);
        let h0 = model.embed(&mut g, &input)?;
        let s = model.forward_fixed(&mut g, h0)?;
        let (_, per_layer) = model.mlm_anytime_loss(&mut g, &s, &[p], &[tokens[p] as usize])?;
        let losses = per_layer
            .into_iter()
            .map(|l| l.to_f64().unwrap_or(f64::NAN))
            .collect();
        out.push(LayerLossProfile::new(losses)?);
    }
    Ok(out)
}

/// One profile per token of one sentence, `batch_size` masked variants per
/// graph.
pub fn sentence_profiles<F: Real>(
    model: &Model<F>,
    tokens: &[u32],
    batch_size: usize,
) -> Result<Vec<LayerLossProfile>> {
    let positions: Vec<usize> = (0..tokens.len()).collect();
    let mut out = Vec::with_capacity(tokens.len());
    for chunk in positions.chunks(batch_size.max(1)) {
        out.extend(layer_losses_many(model, tokens, chunk)?);
    }
    Ok(out)
}

/// Profiles for every token of every document, in document order.
pub fn corpus_profiles<F: Real>(
    model: &Model<F>,
    docs: &[Document],
    batch_size: usize,
) -> Result<Vec<Vec<LayerLossProfile>>> {
    docs.par_iter()
        .map(|d| sentence_profiles(model, &d.tokens, batch_size))
        .collect()
}

pub fn depths_from_profiles(profiles: &[Vec<LayerLossProfile>], lambda: f64, max_depth: usize) -> Result<Vec<DepthMap>> {
    profiles
        .iter()
        .map(|sent| {
            let depths = sent
                .iter()
                .map(|p| select_depth(&p.0, lambda))
                .collect::<Result<Vec<_>>>()?;
            DepthMap::new(depths, max_depth)
        })
        .collect()
}

pub fn estimate_corpus_depths<F: Real>(
    model: &Model<F>,
    docs: &[Document],
    cfg: &ReconConfig,
) -> Result<Vec<DepthMap>> {
    cfg.validate()?;
    let profiles = corpus_profiles(model, docs, cfg.batch_size)?;
    depths_from_profiles(&profiles, cfg.lambda, model.config.n_layers)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub avg_depth: f64,
    pub n_sentences: usize,
    pub maps: Vec<DepthMap>,
}

/// Depth maps for several penalty factors from one set of profiles.
pub fn sweep_lambdas(profiles: &[Vec<LayerLossProfile>], lambdas: &[f64], max_depth: usize) -> Result<Vec<SweepRow>> {
    lambdas
        .iter()
        .map(|&lambda| {
            if lambda.is_nan() || lambda < 0.0 {
                return Err(Error::invalid(format!("lambda {lambda} must be >= 0")));
            }
            let maps = depths_from_profiles(profiles, lambda, max_depth)?;
            Ok(SweepRow {
                lambda,
                avg_depth: average_depth(&maps),
                n_sentences: maps.len(),
                maps,
            })
        })
        .collect()
}

/// `lambda\tavg_depth\tn_sentences` with a header line.
pub fn summary_tsv(rows: &[SweepRow]) -> String {
    let mut s = String::from("lambda\tavg_depth\tn_sentences\n");
    for r in rows {
        s.push_str(&format!("{}\t{:.4}\t{}\n", r.lambda, r.avg_depth, r.n_sentences));
    }
    s
}
