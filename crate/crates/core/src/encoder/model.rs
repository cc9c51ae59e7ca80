//! Post-norm Transformer encoder with per-token depth-adaptive execution.
//!
//! At layer `n` only positions whose depth is at least `n` run the layer;
//! the rest carry their state upward unchanged. Queries come from active
//! positions only, but keys and values are projected from every position so
//! that attention always sees the complete layer.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::nn::{
    load_checkpoint, save_checkpoint, DType, Graph, ParamId, ParamStore, Real, Tensor, Var,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Pooled softmax classifier over the label set.
    Classifier,
    /// Shared vocabulary projection applied at every layer.
    MaskedLm,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Classifier => "classifier",
            ModelKind::MaskedLm => "mlm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "classifier" | "cls" => Some(ModelKind::Classifier),
            "mlm" => Some(ModelKind::MaskedLm),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
struct LayerParams {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1_g: ParamId,
    ln1_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
}

/// Exact work counters for one forward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ComputeCounts {
    /// Per-position executions of the query/feed-forward path.
    pub ffn_applications: u64,
    /// Per-position key/value projections.
    pub kv_projections: u64,
    /// Multiply-accumulates in all matrix products of the encoder layers.
    pub macs: u64,
    /// Layers run (per sentence).
    pub layers_executed: u64,
}

impl std::ops::AddAssign for ComputeCounts {
    fn add_assign(&mut self, o: Self) {
        self.ffn_applications += o.ffn_applications;
        self.kv_projections += o.kv_projections;
        self.macs += o.macs;
        self.layers_executed += o.layers_executed;
    }
}

/// Per-layer states of one sentence, `layers[n]` being layer `n`'s output
/// (`layers[0]` is the embedding).
#[derive(Debug, Clone)]
pub struct HiddenStates {
    pub layers: Vec<Var>,
    pub n_max: usize,
    pub depths: Vec<usize>,
    pub counts: ComputeCounts,
}

impl HiddenStates {
    pub fn top(&self) -> Var {
        self.layers[self.n_max]
    }
}

/// Classifier outputs for one sentence.
#[derive(Debug, Clone, Copy)]
pub struct Classified {
    pub logits: Var,
    pub probs: Var,
}

/// Encoder parameters plus one task head.
#[derive(Debug, Clone)]
pub struct Model<F: Real> {
    pub config: EncoderConfig,
    pub kind: ModelKind,
    pub store: ParamStore<F>,
    embedding: ParamId,
    layers: Vec<LayerParams>,
    head_w: ParamId,
    head_b: ParamId,
    positions: Vec<F>,
}

fn sinusoid<F: Real>(max_len: usize, d: usize) -> Vec<F> {
    let mut pe = vec![F::zero(); max_len * d];
    for pos in 0..max_len {
        for i in 0..d {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 / rate;
            pe[pos * d + i] = F::from_f64_lossy(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    pe
}

impl<F: Real> Model<F> {
    /// Freshly initialized model; all randomness comes from `seed`.
    pub fn new(config: EncoderConfig, kind: ModelKind, seed: u64) -> Result<Self> {
        config.validate()?;
        if kind == ModelKind::Classifier && config.n_labels == 0 {
            return Err(Error::invalid("classifier needs at least one label"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (d, ff) = (config.d_model, config.d_ff);

        let mut normal = |store: &mut ParamStore<F>, name: &str, shape: &[usize], std: f64| {
            let dist = Normal::new(0.0, std).expect("positive std");
            let t = Tensor::from_fn(shape, |_| F::from_f64_lossy(dist.sample(&mut rng)));
            store.add(name, t)
        };
        let embedding = normal(&mut store, "embedding", &[config.vocab_size, d], (d as f64).powf(-0.5))?;

        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let mut xavier = |store: &mut ParamStore<F>, name: &str, fan_in: usize, fan_out: usize| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-a, a);
            let t = Tensor::from_fn(&[fan_in, fan_out], |_| F::from_f64_lossy(dist.sample(&mut rng)));
            store.add(name, t)
        };
        let zeros = |store: &mut ParamStore<F>, name: &str, n: usize| store.add(name, Tensor::zeros(&[n]));
        let ones = |store: &mut ParamStore<F>, name: &str, n: usize| {
            store.add(name, Tensor::from_fn(&[n], |_| F::one()))
        };

        let mut layers = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let p = |s: &str| format!("layer{l}.{s}");
            layers.push(LayerParams {
                wq: xavier(&mut store, &p("wq"), d, d)?,
                bq: zeros(&mut store, &p("bq"), d)?,
                wk: xavier(&mut store, &p("wk"), d, d)?,
                bk: zeros(&mut store, &p("bk"), d)?,
                wv: xavier(&mut store, &p("wv"), d, d)?,
                bv: zeros(&mut store, &p("bv"), d)?,
                wo: xavier(&mut store, &p("wo"), d, d)?,
                bo: zeros(&mut store, &p("bo"), d)?,
                ln1_g: ones(&mut store, &p("ln1.gain"), d)?,
                ln1_b: zeros(&mut store, &p("ln1.bias"), d)?,
                w1: xavier(&mut store, &p("ff1.w"), d, ff)?,
                b1: zeros(&mut store, &p("ff1.b"), ff)?,
                w2: xavier(&mut store, &p("ff2.w"), ff, d)?,
                b2: zeros(&mut store, &p("ff2.b"), d)?,
                ln2_g: ones(&mut store, &p("ln2.gain"), d)?,
                ln2_b: zeros(&mut store, &p("ln2.bias"), d)?,
            });
        }
        let (head_w, head_b) = match kind {
            ModelKind::Classifier => (
                xavier(&mut store, "cls.w", 2 * d, config.n_labels)?,
                zeros(&mut store, "cls.b", config.n_labels)?,
            ),
            ModelKind::MaskedLm => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
                let dist = Normal::new(0.0, 0.02).expect("positive std");
                let w = Tensor::from_fn(&[d, config.vocab_size], |_| {
                    F::from_f64_lossy(dist.sample(&mut rng))
                });
                (
                    store.add("mlm.w", w)?,
                    zeros(&mut store, "mlm.b", config.vocab_size)?,
                )
            }
        };
        let positions = sinusoid(config.max_len, d);
        Ok(Self {
            config,
            kind,
            store,
            embedding,
            layers,
            head_w,
            head_b,
            positions,
        })
    }

    /// Layer-0 states: scaled token embedding plus sinusoidal position,
    /// followed by dropout.
    pub fn embed(&self, g: &mut Graph<F>, tokens: &[u32]) -> Result<Var> {
        let n = tokens.len();
        if n == 0 {
            return Err(Error::invalid("cannot embed an empty sentence"));
        }
        if n > self.config.max_len {
            return Err(Error::invalid(format!(
                "sentence of {n} tokens exceeds max_len {}",
                self.config.max_len
            )));
        }
        let d = self.config.d_model;
        let table = g.param(self.embedding);
        let e = g.embedding(table, tokens)?;
        let e = g.scale(e, F::from_usize(d).expect("fits").sqrt());
        let pe = Tensor::new(vec![n, d], self.positions[..n * d].to_vec())?;
        let pe = g.constant(pe);
        let h = g.add(e, pe)?;
        g.dropout(h, self.config.dropout)
    }

    /// Runs layer `l` for the query rows `q_rows` (already gathered from
    /// `h`) attending over all rows of `h`.
    fn transform(&self, g: &mut Graph<F>, l: usize, h: Var, q_rows: Var) -> Result<Var> {
        let p = &self.layers[l];
        let cfg = &self.config;
        let linear = |g: &mut Graph<F>, x: Var, w: ParamId, b: ParamId| -> Result<Var> {
            let (w, b) = (g.param(w), g.param(b));
            let y = g.matmul(x, w)?;
            g.add_row(y, b)
        };
        let q = linear(g, q_rows, p.wq, p.bq)?;
        let k = linear(g, h, p.wk, p.bk)?;
        let v = linear(g, h, p.wv, p.bv)?;
        let dh = cfg.head_dim();
        let inv_sqrt = F::one() / F::from_usize(dh).expect("fits").sqrt();
        let mut heads = Vec::with_capacity(cfg.n_heads);
        for head in 0..cfg.n_heads {
            let qh = g.slice_cols(q, head * dh, dh)?;
            let kh = g.slice_cols(k, head * dh, dh)?;
            let vh = g.slice_cols(v, head * dh, dh)?;
            let scores = g.matmul_nt(qh, kh)?;
            let scores = g.scale(scores, inv_sqrt);
            let attn = g.softmax(scores);
            let attn = g.dropout(attn, cfg.dropout)?;
            heads.push(g.matmul(attn, vh)?);
        }
        let ctx = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat_cols(&heads)?
        };
        let out = linear(g, ctx, p.wo, p.bo)?;
        let out = g.dropout(out, cfg.dropout)?;
        let x = g.add(q_rows, out)?;
        let (g1, b1) = (g.param(p.ln1_g), g.param(p.ln1_b));
        let x = g.layer_norm(x, g1, b1)?;
        let f = linear(g, x, p.w1, p.b1)?;
        let f = g.relu(f);
        let f = linear(g, f, p.w2, p.b2)?;
        let f = g.dropout(f, cfg.dropout)?;
        let y = g.add(x, f)?;
        let (g2, b2) = (g.param(p.ln2_g), g.param(p.ln2_b));
        g.layer_norm(y, g2, b2)
    }

    fn layer_counts(&self, n: usize, active: usize) -> ComputeCounts {
        let (d, ff) = (self.config.d_model as u64, self.config.d_ff as u64);
        let (n, k) = (n as u64, active as u64);
        ComputeCounts {
            ffn_applications: k,
            kv_projections: n,
            macs: n * 2 * d * d + k * (2 * d * d + 2 * d * ff + 2 * n * d),
            layers_executed: 1,
        }
    }

    /// Key/value projections only, for a sentence with no active position
    /// inside a batch that is still running.
    fn idle_layer(&self, g: &mut Graph<F>, l: usize, h: Var) -> Result<()> {
        let p = &self.layers[l];
        for (w, b) in [(p.wk, p.bk), (p.wv, p.bv)] {
            let (w, b) = (g.param(w), g.param(b));
            let y = g.matmul(h, w)?;
            g.add_row(y, b)?;
        }
        Ok(())
    }

    fn check_depths(&self, n: usize, depths: &[usize]) -> Result<()> {
        if depths.len() != n {
            return Err(Error::invalid(format!(
                "depth map has {} entries for {n} positions",
                depths.len()
            )));
        }
        if let Some(&d) = depths.iter().find(|&&d| d == 0 || d > self.config.n_layers) {
            return Err(Error::invalid(format!(
                "depth {d} outside [1, {}]",
                self.config.n_layers
            )));
        }
        Ok(())
    }

    /// Depth-adaptive encoding: position `t` runs layers `1..=depths[t]`
    /// and is copied verbatim above that. Stops at the deepest position.
    pub fn adaptive_forward(&self, g: &mut Graph<F>, h0: Var, depths: &[usize]) -> Result<HiddenStates> {
        let mut out = self.adaptive_batch(g, &[h0], &[depths])?;
        Ok(out.pop().expect("one sentence"))
    }

    /// Batched adaptive encoding. Every sentence runs through the
    /// batch-wide maximum depth: keys and values are projected for all of
    /// its positions at each executed layer, while queries and feed-forward
    /// still run only at positions whose own depth has not been reached.
    pub fn adaptive_batch(
        &self,
        g: &mut Graph<F>,
        h0s: &[Var],
        depths: &[&[usize]],
    ) -> Result<Vec<HiddenStates>> {
        if h0s.len() != depths.len() {
            return Err(Error::invalid("one depth map per sentence required"));
        }
        let mut states = Vec::with_capacity(h0s.len());
        for (&h0, &d) in h0s.iter().zip(depths) {
            let n = g.value(h0).rows();
            self.check_depths(n, d)?;
            states.push(HiddenStates {
                layers: vec![h0],
                n_max: d.iter().copied().max().unwrap_or(0).min(self.config.n_layers),
                depths: d.to_vec(),
                counts: ComputeCounts::default(),
            });
        }
        let batch_max = states.iter().map(|s| s.n_max).max().unwrap_or(0);
        for layer in 1..=batch_max {
            for s in &mut states {
                let h = *s.layers.last().expect("layer 0 present");
                let n = s.depths.len();
                let active: Vec<usize> = (0..n).filter(|&t| s.depths[t] >= layer).collect();
                s.counts += self.layer_counts(n, active.len());
                if active.is_empty() {
                    self.idle_layer(g, layer - 1, h)?;
                    continue;
                }
                let q_rows = g.gather_rows(h, &active)?;
                let updated = self.transform(g, layer - 1, h, q_rows)?;
                let merged = g.merge_rows(h, updated, &active)?;
                s.layers.push(merged);
            }
        }
        Ok(states)
    }

    /// The plain fixed-depth encoder: every position runs all layers.
    pub fn forward_fixed(&self, g: &mut Graph<F>, h0: Var) -> Result<HiddenStates> {
        let n = g.value(h0).rows();
        let mut layers = vec![h0];
        let mut counts = ComputeCounts::default();
        for l in 0..self.config.n_layers {
            let h = *layers.last().expect("nonempty");
            layers.push(self.transform(g, l, h, h)?);
            counts += self.layer_counts(n, n);
        }
        Ok(HiddenStates {
            layers,
            n_max: self.config.n_layers,
            depths: vec![self.config.n_layers; n],
            counts,
        })
    }

    /// Pooled classifier over the states at `n_max`:
    /// `softmax(W · relu([max; mean]) + b)`.
    pub fn classify(&self, g: &mut Graph<F>, states: &HiddenStates) -> Result<Classified> {
        if self.kind != ModelKind::Classifier {
            return Err(Error::invalid("model has no classifier head"));
        }
        let top = states.top();
        let mx = g.max_pool(top)?;
        let mean = g.mean_pool(top);
        let v = g.concat_cols(&[mx, mean])?;
        let v = g.relu(v);
        let (w, b) = (g.param(self.head_w), g.param(self.head_b));
        let logits = g.matmul(v, w)?;
        let logits = g.add_row(logits, b)?;
        let probs = g.softmax(logits);
        Ok(Classified { logits, probs })
    }

    /// Shared-head vocabulary logits for rows `positions` of layer `layer`.
    pub fn mlm_logits(
        &self,
        g: &mut Graph<F>,
        states: &HiddenStates,
        layer: usize,
        positions: &[usize],
    ) -> Result<Var> {
        if self.kind != ModelKind::MaskedLm {
            return Err(Error::invalid("model has no masked-LM head"));
        }
        let h = g.gather_rows(states.layers[layer], positions)?;
        let (w, b) = (g.param(self.head_w), g.param(self.head_b));
        let logits = g.matmul(h, w)?;
        g.add_row(logits, b)
    }

    /// Sum over layers `1..=N` of the mean masked-token cross-entropy, and
    /// the per-layer terms.
    pub fn mlm_anytime_loss(
        &self,
        g: &mut Graph<F>,
        states: &HiddenStates,
        positions: &[usize],
        targets: &[usize],
    ) -> Result<(Var, Vec<F>)> {
        if positions.is_empty() {
            return Err(Error::invalid("no masked positions"));
        }
        if states.layers.len() != self.config.n_layers + 1 {
            return Err(Error::invalid(
                "anytime loss needs states for every layer",
            ));
        }
        let mut total: Option<Var> = None;
        let mut per_layer = Vec::with_capacity(self.config.n_layers);
        for layer in 1..=self.config.n_layers {
            let logits = self.mlm_logits(g, states, layer, positions)?;
            let ce = g.cross_entropy(logits, targets)?;
            per_layer.push(g.scalar(ce));
            total = Some(match total {
                None => ce,
                Some(t) => g.add(t, ce)?,
            });
        }
        Ok((total.expect("n_layers >= 1"), per_layer))
    }

    pub fn head_params(&self) -> (ParamId, ParamId) {
        (self.head_w, self.head_b)
    }

    /// Parameters of encoder layer `l` (0-based).
    pub fn layer_params(&self, l: usize) -> Vec<ParamId> {
        let p = &self.layers[l];
        vec![
            p.wq, p.bq, p.wk, p.bk, p.wv, p.bv, p.wo, p.bo, p.ln1_g, p.ln1_b, p.w1, p.b1, p.w2,
            p.b2, p.ln2_g, p.ln2_b,
        ]
    }

    pub fn meta_path(ckpt: &Path) -> PathBuf {
        let mut s = ckpt.as_os_str().to_owned();
        s.push(".meta");
        PathBuf::from(s)
    }

    /// Writes the checkpoint and a `.meta` key-value sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(&self.store, path)?;
        let meta = format!(
            "{}kind = {}\ndtype = {}\n",
            self.config.to_kv(),
            self.kind.name(),
            F::DTYPE.name()
        );
        let mp = Self::meta_path(path);
        fs::write(&mp, meta).map_err(|e| Error::io(mp, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (config, kind, dtype) = read_meta(path)?;
        if dtype != F::DTYPE {
            return Err(Error::Checkpoint(format!(
                "model stored as {} but loaded as {}",
                dtype.name(),
                F::DTYPE.name()
            )));
        }
        let mut model = Self::new(config, kind, 0)?;
        model.store.load_values(load_checkpoint(path)?)?;
        Ok(model)
    }
}

/// Reads the `.meta` sidecar of a checkpoint.
pub fn read_meta(path: &Path) -> Result<(EncoderConfig, ModelKind, DType)> {
    let mp = Model::<f32>::meta_path(path);
    let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let (config, rest) = EncoderConfig::from_kv(&text, &mp)?;
    let mut kind = None;
    let mut dtype = None;
    for (k, v) in rest {
        match k.as_str() {
            "kind" => kind = ModelKind::parse(&v),
            "dtype" => {
                dtype = match v.as_str() {
                    "f32" => Some(DType::F32),
                    "f64" => Some(DType::F64),
                    _ => None,
                }
            }
            _ => {}
        }
    }
    match (kind, dtype) {
        (Some(k), Some(d)) => Ok((config, k, d)),
        _ => Err(Error::Checkpoint(format!("{} lacks kind or dtype", mp.display()))),
    }
}

/// `-ln p[gold]` for a probability vector.
pub fn task_loss<F: Real>(probs: &[F], gold: usize) -> Result<F> {
    let p = probs
        .get(gold)
        .ok_or_else(|| Error::invalid(format!("label {gold} out of range for {}", probs.len())))?;
    Ok(-p.ln())
}

/// Index of the largest probability; ties go to the lowest index.
pub fn argmax<F: Real>(xs: &[F]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(kind: ModelKind, layers: usize) -> Model<f64> {
        let cfg = EncoderConfig {
            n_layers: layers,
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            dropout: 0.1,
            max_len: 32,
            vocab_size: 20,
            n_labels: 3,
        };
        Model::new(cfg, kind, 11).unwrap()
    }

    #[test]
    fn positions_distinguish_identical_tokens() {
        let m = tiny(ModelKind::Classifier, 2);
        let mut g = Graph::eval(&m.store);
        let h = m.embed(&mut g, &[5, 5]).unwrap();
        let t = g.value(h);
        assert_ne!(t.row(0), t.row(1));
        assert!(m.embed(&mut g, &[]).is_err());
        assert!(m.embed(&mut g, &[99]).is_err());
    }

    #[test]
    fn eval_embedding_is_deterministic() {
        let m = tiny(ModelKind::Classifier, 2);
        let mut g1 = Graph::eval(&m.store);
        let mut g2 = Graph::eval(&m.store);
        let a = m.embed(&mut g1, &[3, 4, 7]).unwrap();
        let b = m.embed(&mut g2, &[3, 4, 7]).unwrap();
        assert_eq!(g1.value(a), g2.value(b));
    }

    #[test]
    fn depth_one_runs_single_layer() {
        let m = tiny(ModelKind::Classifier, 4);
        let mut g = Graph::eval(&m.store);
        let h0 = m.embed(&mut g, &[3, 4, 5]).unwrap();
        let s = m.adaptive_forward(&mut g, h0, &[1, 1, 1]).unwrap();
        assert_eq!(s.n_max, 1);
        assert_eq!(s.layers.len(), 2);
        assert_eq!(s.counts.ffn_applications, 3);
        assert_eq!(s.counts.layers_executed, 1);
    }

    #[test]
    fn two_token_copy_and_attention() {
        let m = tiny(ModelKind::Classifier, 4);
        let mut g = Graph::eval(&m.store);
        let h0 = m.embed(&mut g, &[3, 4]).unwrap();
        let s = m.adaptive_forward(&mut g, h0, &[1, 4]).unwrap();
        let frozen = g.value(s.layers[1]).row(0).to_vec();
        for n in 2..=4 {
            assert_eq!(g.value(s.layers[n]).row(0), &frozen[..]);
            assert_ne!(g.value(s.layers[n]).row(1), g.value(s.layers[n - 1]).row(1));
        }
        // position 2 must see position 1's frozen state: perturbing the
        // frozen token changes position 2's top state.
        let h0b = m.embed(&mut g, &[7, 4]).unwrap();
        let sb = m.adaptive_forward(&mut g, h0b, &[1, 4]).unwrap();
        assert_ne!(g.value(s.layers[4]).row(1), g.value(sb.layers[4]).row(1));
    }

    #[test]
    fn misaligned_depths_rejected() {
        let m = tiny(ModelKind::Classifier, 2);
        let mut g = Graph::eval(&m.store);
        let h0 = m.embed(&mut g, &[3, 4]).unwrap();
        assert!(m.adaptive_forward(&mut g, h0, &[1]).is_err());
        assert!(m.adaptive_forward(&mut g, h0, &[1, 3]).is_err());
        assert!(m.adaptive_forward(&mut g, h0, &[0, 1]).is_err());
    }

    #[test]
    fn classifier_outputs() {
        let m = tiny(ModelKind::Classifier, 2);
        let mut g = Graph::eval(&m.store);
        let h0 = m.embed(&mut g, &[3, 4, 9]).unwrap();
        let s = m.adaptive_forward(&mut g, h0, &[2, 1, 2]).unwrap();
        let c = m.classify(&mut g, &s).unwrap();
        let p = g.value(c.probs).data();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&x| x >= 0.0));
        assert!(m.mlm_logits(&mut g, &s, 1, &[0]).is_err());
    }

    #[test]
    fn zero_features_give_uniform_distribution() {
        let mut m = tiny(ModelKind::Classifier, 1);
        let w = m.head_w;
        m.store.get_mut(w).data_mut().fill(0.5);
        let mut g = Graph::eval(&m.store);
        let zeros = g.constant(Tensor::zeros(&[3, 8]));
        let s = HiddenStates {
            layers: vec![zeros],
            n_max: 0,
            depths: vec![],
            counts: ComputeCounts::default(),
        };
        let c = m.classify(&mut g, &s).unwrap();
        for &p in g.value(c.probs).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn pooling_ignores_position_order() {
        let m = tiny(ModelKind::Classifier, 1);
        let mut g = Graph::eval(&m.store);
        let a = g.constant(Tensor::from_fn(&[3, 8], |i| (i as f64 * 0.37).sin()));
        let rows = g.value(a).data().to_vec();
        let mut perm = rows[16..24].to_vec();
        perm.extend_from_slice(&rows[0..16]);
        let b = g.constant(Tensor::new(vec![3, 8], perm).unwrap());
        let mk = |v| HiddenStates {
            layers: vec![v],
            n_max: 0,
            depths: vec![],
            counts: ComputeCounts::default(),
        };
        let ca = m.classify(&mut g, &mk(a)).unwrap();
        let cb = m.classify(&mut g, &mk(b)).unwrap();
        assert_eq!(g.value(ca.logits), g.value(cb.logits));
    }

    #[test]
    fn task_loss_values() {
        assert_eq!(task_loss(&[1.0f64, 0.0], 0).unwrap(), 0.0);
        let u = task_loss(&[0.25f64; 4], 2).unwrap();
        assert!((u - 4f64.ln()).abs() < 1e-15);
        let l = task_loss(&[0.9f64, 0.1], 1).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-12);
        assert!(task_loss(&[0.5f64, 0.5], 2).is_err());
        assert_eq!(argmax(&[0.2f64, 0.5, 0.5]), 1);
    }

    #[test]
    fn symmetric_logits_split_evenly() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::eval(&store);
        let l = g.constant(Tensor::new(vec![1, 2], vec![2.0, 2.0]).unwrap());
        let p = g.softmax(l);
        assert_eq!(g.value(p).data(), &[0.5, 0.5]);
    }

    #[test]
    fn anytime_loss_at_init_is_near_uniform() {
        let m = tiny(ModelKind::MaskedLm, 3);
        let mut g = Graph::eval(&m.store);
        let h0 = m.embed(&mut g, &[3, crate::corpus::MASK, 5, 6]).unwrap();
        let s = m.forward_fixed(&mut g, h0).unwrap();
        let (total, per_layer) = m.mlm_anytime_loss(&mut g, &s, &[1], &[4]).unwrap();
        assert_eq!(per_layer.len(), 3);
        let sum: f64 = per_layer.iter().sum();
        assert!((g.scalar(total) - sum).abs() < 1e-12);
        for l in per_layer {
            assert!(l > 0.0);
            assert!((l - 20f64.ln()).abs() < 0.15, "{l}");
        }
        assert!(m.mlm_anytime_loss(&mut g, &s, &[], &[]).is_err());
        let partial = m.adaptive_forward(&mut g, h0, &[1, 1, 1, 1]).unwrap();
        assert!(m.mlm_anytime_loss(&mut g, &partial, &[1], &[4]).is_err());
    }

    #[test]
    fn save_load_roundtrip() {
        let m = tiny(ModelKind::MaskedLm, 2);
        let dir = std::env::temp_dir().join(format!("adadepth-model-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("m.ckpt");
        m.save(&p).unwrap();
        let back = Model::<f64>::load(&p).unwrap();
        assert_eq!(back.kind, ModelKind::MaskedLm);
        assert_eq!(back.config, m.config);
        for ((_, _, a), (_, _, b)) in back.store.iter().zip(m.store.iter()) {
            assert_eq!(a.data(), b.data());
        }
        assert!(Model::<f32>::load(&p).is_err());
        fs::remove_dir_all(dir).ok();
    }
}
