//! Classifier training and evaluation with exact compute accounting, wall
//! clock timing, and seed-level summaries.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::Document;
use crate::depth_map::{check_alignment, DepthMap};
use crate::encoder::{argmax, ComputeCounts, EncoderConfig, Model, ModelKind};
use crate::error::{Error, Result};
use crate::mi::MiTable;
use crate::nn::{AdamConfig, Graph, Real};

#[derive(Debug, Clone)]
pub struct ClassifierSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Steps of linear learning-rate warmup.
    pub warmup: usize,
    pub seed: u64,
}

impl Default for ClassifierSchedule {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 16,
            lr: 1e-3,
            warmup: 0,
            seed: 0,
        }
    }
}

/// `lr` scaled linearly over the first `warmup` steps (1-based `step`).
pub fn warmup_lr(lr: f64, warmup: usize, step: usize) -> f64 {
    if warmup == 0 || step >= warmup {
        lr
    } else {
        lr * step as f64 / warmup as f64
    }
}

fn check_depths(docs: &[Document], depths: Option<&[DepthMap]>, n_layers: usize) -> Result<()> {
    if let Some(maps) = depths {
        check_alignment(maps, docs)?;
        if let Some((i, m)) = maps.iter().enumerate().find(|(_, m)| m.max() > n_layers) {
            return Err(Error::Misaligned {
                index: i,
                msg: format!("depth {} exceeds {n_layers} layers", m.max()),
            });
        }
    }
    Ok(())
}

/// Trains the classifier on `docs`. With `depths` each sentence runs its
/// own depth map; without, every token runs all layers. Returns the mean
/// batch loss of every step.
pub fn train_classifier<F: Real>(
    model: &mut Model<F>,
    docs: &[Document],
    depths: Option<&[DepthMap]>,
    schedule: &ClassifierSchedule,
) -> Result<Vec<f64>> {
    if model.kind != ModelKind::Classifier {
        return Err(Error::invalid("train_classifier needs a classifier model"));
    }
    if schedule.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    check_depths(docs, depths, model.config.n_layers)?;
    let mut adam = AdamConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut order: Vec<usize> = (0..docs.len()).collect();
    let mut losses = Vec::new();
    for _ in 0..schedule.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(schedule.batch_size) {
            let drop_rng = ChaCha8Rng::seed_from_u64(rng.gen());
            let scale = F::one() / F::from_usize(batch.len()).expect("fits");
            let grads = {
                let mut g = Graph::train(&model.store, drop_rng);
                let mut total = None;
                for &i in batch {
                    let d = &docs[i];
                    let h0 = model.embed(&mut g, &d.tokens)?;
                    let states = match depths {
                        Some(maps) => model.adaptive_forward(&mut g, h0, maps[i].as_slice())?,
                        None => model.forward_fixed(&mut g, h0)?,
                    };
                    let c = model.classify(&mut g, &states)?;
                    let loss = g.cross_entropy(c.logits, &[d.label])?;
                    let loss = g.scale(loss, scale);
                    total = Some(match total {
                        None => loss,
                        Some(t) => g.add(t, loss)?,
                    });
                }
                let total = total.expect("non-empty batch");
                let value = g.scalar(total).to_f64().unwrap_or(f64::NAN);
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "classifier loss at step {}",
                        losses.len() + 1
                    )));
                }
                losses.push(value);
                g.backward(total)?
            };
            adam.lr = warmup_lr(schedule.lr, schedule.warmup, losses.len());
            model.store.accumulate(&grads);
            model.store.adam_step(&adam)?;
        }
    }
    Ok(losses)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub correct: usize,
    pub total: usize,
    pub predictions: Vec<usize>,
    pub counts: ComputeCounts,
    /// Sentences per stop layer; index 0 holds `n_max = 1`.
    pub n_max_hist: Vec<u64>,
    pub batch_size: usize,
    pub n_layers: usize,
    pub tokens: u64,
}

impl EvalReport {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

fn eval_batch<F: Real>(
    model: &Model<F>,
    docs: &[Document],
    depths: Option<&[DepthMap]>,
) -> Result<(Vec<usize>, ComputeCounts, Vec<usize>)> {
    let mut g = Graph::eval(&model.store);
    let mut counts = ComputeCounts::default();
    let mut preds = Vec::with_capacity(docs.len());
    let mut stops = Vec::with_capacity(docs.len());
    let h0s = docs
        .iter()
        .map(|d| model.embed(&mut g, &d.tokens))
        .collect::<Result<Vec<_>>>()?;
    let states = match depths {
        Some(maps) => {
            let slices: Vec<&[usize]> = maps.iter().map(DepthMap::as_slice).collect();
            model.adaptive_batch(&mut g, &h0s, &slices)?
        }
        None => h0s
            .iter()
            .map(|&h| model.forward_fixed(&mut g, h))
            .collect::<Result<Vec<_>>>()?,
    };
    for s in &states {
        counts += s.counts;
        stops.push(s.n_max);
        let c = model.classify(&mut g, s)?;
        preds.push(argmax(g.value(c.probs).data()));
    }
    Ok((preds, counts, stops))
}

/// Accuracy and exact compute counts over `docs`, `batch_size` sentences
/// per forward. Batches run in parallel.
pub fn evaluate<F: Real>(
    model: &Model<F>,
    docs: &[Document],
    depths: Option<&[DepthMap]>,
    batch_size: usize,
) -> Result<EvalReport> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    check_depths(docs, depths, model.config.n_layers)?;
    let n_batches = docs.len().div_ceil(batch_size);
    let parts = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let lo = b * batch_size;
            let hi = (lo + batch_size).min(docs.len());
            eval_batch(model, &docs[lo..hi], depths.map(|m| &m[lo..hi]))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = model.config.n_layers;
    let mut report = EvalReport {
        correct: 0,
        total: docs.len(),
        predictions: Vec::with_capacity(docs.len()),
        counts: ComputeCounts::default(),
        n_max_hist: vec![0; n],
        batch_size,
        n_layers: n,
        tokens: docs.iter().map(|d| d.tokens.len() as u64).sum(),
    };
    for (preds, counts, stops) in parts {
        report.predictions.extend(preds);
        report.counts += counts;
        for s in stops {
            report.n_max_hist[s - 1] += 1;
        }
    }
    report.correct = report
        .predictions
        .iter()
        .zip(docs)
        .filter(|(p, d)| **p == d.label)
        .count();
    Ok(report)
}

/// Compute counts implied by sentence lengths and depth maps without
/// running the model. Within a batch every sentence runs to the batch-wide
/// maximum depth, projecting keys and values for all of its positions,
/// while queries and feed-forward run only at still-active positions.
pub fn planned_counts(
    config: &EncoderConfig,
    lengths: &[usize],
    depths: Option<&[DepthMap]>,
    batch_size: usize,
) -> ComputeCounts {
    let (d, ff) = (config.d_model as u64, config.d_ff as u64);
    let big_n = config.n_layers;
    let mut c = ComputeCounts::default();
    let bs = batch_size.max(1);
    for start in (0..lengths.len()).step_by(bs) {
        let end = (start + bs).min(lengths.len());
        let batch_max = match depths {
            Some(m) => m[start..end].iter().map(DepthMap::max).max().unwrap_or(0),
            None => big_n,
        };
        for i in start..end {
            let n = lengths[i] as u64;
            for layer in 1..=batch_max {
                let k = match depths {
                    Some(m) => m[i].as_slice().iter().filter(|&&x| x >= layer).count() as u64,
                    None => n,
                };
                c.ffn_applications += k;
                c.kv_projections += n;
                c.macs += n * 2 * d * d + k * (2 * d * d + 2 * d * ff + 2 * n * d);
                c.layers_executed += 1;
            }
        }
    }
    c
}

/// Fixed-depth cost over adaptive cost, by multiply-accumulates.
pub fn speedup(fixed: &ComputeCounts, adaptive: &ComputeCounts) -> f64 {
    fixed.macs as f64 / adaptive.macs as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub min_ns: u64,
    pub median_ns: u64,
    pub reps: usize,
}

/// Wall clock of one pass over `docs` in batches, divided by the number of
/// batches, after `warmup` untimed passes; min and median over `reps`
/// timed passes. Runs on the calling thread.
pub fn time_forward<F: Real>(
    model: &Model<F>,
    docs: &[Document],
    depths: Option<&[DepthMap]>,
    batch_size: usize,
    warmup: usize,
    reps: usize,
) -> Result<Timing> {
    if reps == 0 || batch_size == 0 || docs.is_empty() {
        return Err(Error::invalid("timing needs reps, a batch size and documents"));
    }
    check_depths(docs, depths, model.config.n_layers)?;
    let n_batches = docs.len().div_ceil(batch_size) as u64;
    let pass = || -> Result<()> {
        for lo in (0..docs.len()).step_by(batch_size) {
            let hi = (lo + batch_size).min(docs.len());
            eval_batch(model, &docs[lo..hi], depths.map(|m| &m[lo..hi]))?;
        }
        Ok(())
    };
    for _ in 0..warmup {
        pass()?;
    }
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        pass()?;
        samples.push(t.elapsed().as_nanos() as u64 / n_batches);
    }
    samples.sort_unstable();
    Ok(Timing {
        min_ns: samples[0],
        median_ns: samples[reps / 2],
        reps,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Population variance over seeds.
    pub variance: f64,
    pub speedup: f64,
    pub avg_depth: f64,
}

impl RunSummary {
    pub fn new(accuracies: Vec<f64>, speedup: f64, avg_depth: f64) -> Result<Self> {
        if accuracies.is_empty() {
            return Err(Error::invalid("no runs to summarize"));
        }
        if let Some(a) = accuracies.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::invalid(format!("accuracy {a} outside [0, 1]")));
        }
        let k = accuracies.len() as f64;
        let mean = accuracies.iter().sum::<f64>() / k;
        let variance = accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / k;
        Ok(Self {
            accuracies,
            mean,
            variance,
            speedup,
            avg_depth,
        })
    }
}

/// MI-table depth map for every document.
pub fn mi_depth_maps(table: &MiTable, docs: &[Document]) -> Vec<DepthMap> {
    docs.iter().map(|d| table.sentence_depths(&d.tokens)).collect()
}

/// Seeded depth maps for sentences of the given lengths whose
/// token-weighted mean is `target_avg` (rounded to the nearest whole
/// total). Depths are skewed toward shallow layers with a deep tail.
pub fn depths_with_average(lengths: &[usize], max_depth: usize, target_avg: f64, seed: u64) -> Result<Vec<DepthMap>> {
    let total: usize = lengths.iter().sum();
    if max_depth == 0 || !(1.0..=max_depth as f64).contains(&target_avg) {
        return Err(Error::invalid(format!(
            "average depth {target_avg} outside [1, {max_depth}]"
        )));
    }
    let target = (target_avg * total as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = 1.0 / target_avg;
    let mut flat: Vec<usize> = (0..total)
        .map(|_| {
            let mut d = 1;
            while d < max_depth && !rng.gen_bool(p) {
                d += 1;
            }
            d
        })
        .collect();
    let mut sum: usize = flat.iter().sum();
    while sum != target {
        let i = rng.gen_range(0..total);
        if sum < target && flat[i] < max_depth {
            flat[i] += 1;
            sum += 1;
        } else if sum > target && flat[i] > 1 {
            flat[i] -= 1;
            sum -= 1;
        }
    }
    let mut out = Vec::with_capacity(lengths.len());
    let mut at = 0;
    for &n in lengths {
        out.push(DepthMap::new(flat[at..at + n].to_vec(), max_depth)?);
        at += n;
    }
    Ok(out)
}
