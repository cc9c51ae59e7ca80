//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.
//!
//! Run with `cargo test -p adadepth --test acceptance -- --nocapture` to
//! see the report.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet};
use std::hash::{Hash, Hasher};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use adadepth::bench::{
    depths_with_average, evaluate, mi_depth_maps, planned_counts, speedup, time_forward,
    train_classifier, ClassifierSchedule, RunSummary,
};
use adadepth::corpus::{collect_stats, Corpus, Document, Split, TokenizerConfig};
use adadepth::depth_map::{average_depth, DepthMap};
use adadepth::encoder::{EncoderConfig, Model, ModelKind};
use adadepth::mi::{mi_score, MiTable, DEFAULT_SMOOTHING};
use adadepth::nn::{Graph, Var};
use adadepth::recon::{self, fixed_masks, MlmSchedule};
use adadepth::synth::{self, SynthConfig};

const SEED: u64 = 20240611;

struct Outcome {
    pass: bool,
    detail: String,
    fingerprint: u64,
}

fn hash_f64s<'a>(h: &mut DefaultHasher, xs: impl IntoIterator<Item = &'a f64>) {
    for x in xs {
        x.to_bits().hash(h);
    }
}

fn hash_f32s<'a>(h: &mut DefaultHasher, xs: impl IntoIterator<Item = &'a f32>) {
    for x in xs {
        x.to_bits().hash(h);
    }
}

fn report(id: u32, name: &str, limit: Option<Duration>, run: impl FnOnce() -> Outcome) -> Outcome {
    let t = Instant::now();
    let mut out = run();
    let took = t.elapsed();
    if let Some(limit) = limit {
        if took > limit {
            out.pass = false;
            out.detail.push_str(&format!("; over time limit {:.0}s", limit.as_secs_f64()));
        }
    }
    println!(
        "criterion {id:>2} [{}] {name}: {} ({:.1}s)",
        if out.pass { "PASS" } else { "FAIL" },
        out.detail,
        took.as_secs_f64()
    );
    out
}

// ---------------------------------------------------------------- 1

/// Contingency-table MI straight from document word sets.
fn oracle_mi(docs: &[(usize, BTreeSet<String>)], word: &str, n_labels: usize, s: f64) -> f64 {
    let n = docs.len() as f64;
    let mut total = 0.0;
    for y in 0..n_labels {
        let mut cell = [[0.0f64; 2]; 2];
        for (label, words) in docs {
            let ix = usize::from(words.contains(word));
            let iy = usize::from(*label == y);
            cell[ix][iy] += 1.0;
        }
        let z = n + 4.0 * s;
        let p = |ix: usize, iy: usize| (cell[ix][iy] + s) / z;
        for ix in 0..2 {
            for iy in 0..2 {
                let px = p(ix, 0) + p(ix, 1);
                let py = p(0, iy) + p(1, iy);
                total += p(ix, iy) * (p(ix, iy) / (px * py)).ln();
            }
        }
    }
    total
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut h = DefaultHasher::new();
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for _ in 0..50 {
        let n_docs = rng.gen_range(2..=500);
        let n_words = rng.gen_range(1..=50);
        let n_labels = rng.gen_range(2..=5.min(n_docs));
        let mut rows = Vec::with_capacity(n_docs);
        for i in 0..n_docs {
            // every label appears at least once
            let label = if i < n_labels { i } else { rng.gen_range(0..n_labels) };
            let len = rng.gen_range(1..=12);
            let text: Vec<String> = (0..len).map(|_| format!("w{}", rng.gen_range(0..n_words))).collect();
            rows.push((format!("L{label}"), text.join(" ")));
        }
        let corpus = Corpus::from_pairs(&rows, &[], &TokenizerConfig::default()).unwrap();
        let stats = collect_stats(&corpus, Split::Train).unwrap();
        let label_index: BTreeMap<String, usize> = (0..corpus.labels.len())
            .map(|i| (corpus.labels.name(i).to_string(), i))
            .collect();
        let docs: Vec<(usize, BTreeSet<String>)> = rows
            .iter()
            .map(|(l, t)| (label_index[l], t.split(' ').map(str::to_string).collect()))
            .collect();
        for id in corpus.vocab.word_ids() {
            let word = corpus.vocab.word(id);
            let got = mi_score(&stats, id, DEFAULT_SMOOTHING).unwrap();
            let want = oracle_mi(&docs, word, corpus.labels.len(), DEFAULT_SMOOTHING);
            worst = worst.max((got - want).abs());
            got.to_bits().hash(&mut h);
            checked += 1;
        }
    }
    Outcome {
        pass: worst <= 1e-12,
        detail: format!("{checked} words over 50 corpora, max |diff| {worst:.2e} (tol 1e-12)"),
        fingerprint: h.finish(),
    }
}

// ---------------------------------------------------------------- 2, 3

fn small_config() -> EncoderConfig {
    EncoderConfig {
        n_layers: 4,
        d_model: 32,
        n_heads: 4,
        d_ff: 64,
        dropout: 0.1,
        max_len: 64,
        vocab_size: 50,
        n_labels: 3,
    }
}

fn criterion_2() -> Outcome {
    let model = Model::<f64>::new(small_config(), ModelKind::Classifier, SEED).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 2);
    let mut h = DefaultHasher::new();
    let mut mismatches = 0;
    for _ in 0..100 {
        let len = rng.gen_range(1..=32);
        let tokens: Vec<u32> = (0..len).map(|_| rng.gen_range(0..50)).collect();
        let mut g = Graph::eval(&model.store);
        let h0 = model.embed(&mut g, &tokens).unwrap();
        let plain = model.forward_fixed(&mut g, h0).unwrap();
        let adaptive = model.adaptive_forward(&mut g, h0, &vec![4; len]).unwrap();
        let same_states = plain.layers.len() == adaptive.layers.len()
            && plain.layers.iter().zip(&adaptive.layers).all(|(&a, &b)| {
                g.value(a).data().iter().map(|x| x.to_bits()).eq(g.value(b).data().iter().map(|x| x.to_bits()))
            });
        let pa = model.classify(&mut g, &plain).unwrap();
        let pb = model.classify(&mut g, &adaptive).unwrap();
        let same_logits = g.value(pa.logits).data().iter().map(|x| x.to_bits())
            .eq(g.value(pb.logits).data().iter().map(|x| x.to_bits()));
        if !(same_states && same_logits) {
            mismatches += 1;
        }
        hash_f64s(&mut h, g.value(adaptive.top()).data());
    }
    Outcome {
        pass: mismatches == 0,
        detail: format!("{mismatches}/100 inputs differ from the plain encoder (N=4, d_model=32)"),
        fingerprint: h.finish(),
    }
}

fn criterion_3() -> Outcome {
    let model = Model::<f64>::new(small_config(), ModelKind::Classifier, SEED).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 3);
    let mut h = DefaultHasher::new();
    let (mut checks, mut violations) = (0usize, 0usize);
    for _ in 0..100 {
        let len = rng.gen_range(1..=32);
        let tokens: Vec<u32> = (0..len).map(|_| rng.gen_range(0..50)).collect();
        let depths: Vec<usize> = (0..len).map(|_| rng.gen_range(1..=4)).collect();
        let mut g = Graph::eval(&model.store);
        let h0 = model.embed(&mut g, &tokens).unwrap();
        let s = model.adaptive_forward(&mut g, h0, &depths).unwrap();
        for (t, &d) in depths.iter().enumerate() {
            let frozen: Vec<u64> = g.value(s.layers[d]).row(t).iter().map(|x| x.to_bits()).collect();
            for n in d + 1..=s.n_max {
                checks += 1;
                let row: Vec<u64> = g.value(s.layers[n]).row(t).iter().map(|x| x.to_bits()).collect();
                if row != frozen {
                    violations += 1;
                }
            }
        }
        hash_f64s(&mut h, g.value(s.top()).data());
    }
    Outcome {
        pass: violations == 0 && checks > 0,
        detail: format!("{violations} of {checks} copied states changed"),
        fingerprint: h.finish(),
    }
}

// ---------------------------------------------------------------- 4

fn max_fd_error(model: &mut Model<f64>, loss: &dyn Fn(&Model<f64>, &mut Graph<f64>) -> Var) -> (f64, usize) {
    let grads = {
        let mut g = Graph::eval(&model.store);
        let l = loss(model, &mut g);
        g.backward(l).unwrap()
    };
    let eval = |m: &Model<f64>| {
        let mut g = Graph::eval(&m.store);
        let l = loss(m, &mut g);
        g.scalar(l)
    };
    let ids: Vec<_> = model.store.iter().map(|(id, _, t)| (id, t.len())).collect();
    let eps = 1e-4;
    let mut worst = 0.0f64;
    let mut n = 0;
    for (id, len) in ids {
        let analytic: Vec<f64> = grads.get(id).map_or(vec![0.0; len], <[f64]>::to_vec);
        for (i, &a) in analytic.iter().enumerate() {
            let orig = model.store.get(id).data()[i];
            model.store.get_mut(id).data_mut()[i] = orig + eps;
            let up = eval(model);
            model.store.get_mut(id).data_mut()[i] = orig - eps;
            let down = eval(model);
            model.store.get_mut(id).data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * eps);
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
            n += 1;
        }
    }
    (worst, n)
}

fn criterion_4() -> Outcome {
    let cfg = EncoderConfig {
        n_layers: 2,
        d_model: 8,
        n_heads: 2,
        d_ff: 16,
        dropout: 0.1,
        max_len: 16,
        vocab_size: 12,
        n_labels: 3,
    };
    let mut cls = Model::<f64>::new(cfg.clone(), ModelKind::Classifier, SEED).unwrap();
    let cls_loss = |m: &Model<f64>, g: &mut Graph<f64>| {
        let mut total = None;
        for (tokens, depths, gold) in [
            (vec![3u32, 7, 4, 9, 5], vec![1usize, 2, 1, 2, 2], 2usize),
            (vec![6, 8, 10], vec![1, 1, 2], 0),
        ] {
            let h0 = m.embed(g, &tokens).unwrap();
            let s = m.adaptive_forward(g, h0, &depths).unwrap();
            let c = m.classify(g, &s).unwrap();
            let l = g.cross_entropy(c.logits, &[gold]).unwrap();
            total = Some(match total {
                None => l,
                Some(t) => g.add(t, l).unwrap(),
            });
        }
        total.unwrap()
    };
    let (e_cls, n_cls) = max_fd_error(&mut cls, &cls_loss);

    let mut mlm = Model::<f64>::new(cfg, ModelKind::MaskedLm, SEED + 1).unwrap();
    let mlm_loss = |m: &Model<f64>, g: &mut Graph<f64>| {
        let input = [3u32, adadepth::corpus::MASK, 4, adadepth::corpus::MASK, 11];
        let h0 = m.embed(g, &input).unwrap();
        let s = m.adaptive_forward(g, h0, &[2, 1, 1, 2, 2]).unwrap();
        m.mlm_anytime_loss(g, &s, &[1, 3], &[5, 9]).unwrap().0
    };
    let (e_mlm, n_mlm) = max_fd_error(&mut mlm, &mlm_loss);
    let worst = e_cls.max(e_mlm);
    let mut h = DefaultHasher::new();
    worst.to_bits().hash(&mut h);
    Outcome {
        pass: worst < 1e-4,
        detail: format!(
            "max relative error {worst:.2e} over {} scalars (classifier {e_cls:.2e}, anytime MLM {e_mlm:.2e}; tol 1e-4)",
            n_cls + n_mlm
        ),
        fingerprint: h.finish(),
    }
}

// ---------------------------------------------------------------- 5

fn synthetic_corpus() -> Corpus {
    let (train, test) = synth::generate(&SynthConfig {
        seed: SEED,
        ..SynthConfig::default()
    });
    Corpus::from_pairs(&train, &test, &TokenizerConfig::default()).unwrap()
}

fn criterion_5(timing: bool) -> Outcome {
    let corpus = synthetic_corpus();
    let cfg = EncoderConfig::desk(corpus.vocab.len(), corpus.labels.len());
    let model = Model::<f32>::new(cfg.clone(), ModelKind::Classifier, SEED).unwrap();
    let docs = &corpus.test;
    let lengths: Vec<usize> = docs.iter().map(|d| d.tokens.len()).collect();
    let maps = depths_with_average(&lengths, 12, 3.0, SEED).unwrap();
    let adaptive = evaluate(&model, docs, Some(&maps), 1).unwrap();
    let fixed = evaluate(&model, docs, None, 1).unwrap();
    let ratio = adaptive.counts.ffn_applications as f64 / fixed.counts.ffn_applications as f64;
    let exact = adaptive.counts.ffn_applications == maps.iter().map(|m| m.sum() as u64).sum::<u64>()
        && fixed.counts.ffn_applications == 12 * fixed.tokens
        && adaptive.counts == planned_counts(&cfg, &lengths, Some(&maps), 1);
    let mut h = DefaultHasher::new();
    adaptive.counts.ffn_applications.hash(&mut h);
    fixed.counts.ffn_applications.hash(&mut h);
    adaptive.predictions.hash(&mut h);
    let mut pass = exact && ratio <= 0.30;
    let mut detail = format!(
        "avg depth {:.3}, ffn ratio {ratio:.4} (<= 0.30), exact counts {}",
        average_depth(&maps),
        if exact { "match" } else { "MISMATCH" }
    );
    if timing {
        let mut rng = ChaCha8Rng::seed_from_u64(SEED + 5);
        let long = vec![Document {
            tokens: (0..256).map(|_| rng.gen_range(3..cfg.vocab_size as u32)).collect(),
            label: 0,
            raw_text: String::new(),
        }];
        let long_maps = depths_with_average(&[256], 12, 3.0, SEED).unwrap();
        let tf = time_forward(&model, &long, None, 1, 2, 7).unwrap();
        let ta = time_forward(&model, &long, Some(&long_maps), 1, 2, 7).unwrap();
        let wall = tf.median_ns as f64 / ta.median_ns as f64;
        pass &= wall >= 2.0;
        detail.push_str(&format!(
            "; wall clock at length 256 batch 1: fixed {:.2} ms, adaptive {:.2} ms, {wall:.2}x (>= 2x)",
            tf.median_ns as f64 / 1e6,
            ta.median_ns as f64 / 1e6
        ));
    }
    Outcome {
        pass,
        detail,
        fingerprint: h.finish(),
    }
}

// ---------------------------------------------------------------- 6, 9

struct MlmRun {
    heldout: Vec<(usize, f64)>,
    rows: Vec<(f64, f64)>,
    function_word_check: String,
    fingerprint: u64,
}

fn toy_mlm_run() -> MlmRun {
    let (train, test) = synth::generate(&SynthConfig {
        n_train: 200,
        n_test: 60,
        seed: SEED + 6,
        ..SynthConfig::default()
    });
    let corpus = Corpus::from_pairs(&train, &test, &TokenizerConfig::default()).unwrap();
    let cfg = EncoderConfig {
        n_layers: 6,
        d_model: 32,
        n_heads: 2,
        d_ff: 64,
        dropout: 0.1,
        max_len: 64,
        vocab_size: corpus.vocab.len(),
        n_labels: 0,
    };
    let mut model = Model::<f32>::new(cfg, ModelKind::MaskedLm, SEED).unwrap();
    let heldout = fixed_masks(&corpus.test[..40], 0.15, corpus.vocab.len(), SEED + 9).unwrap();
    let schedule = MlmSchedule {
        steps: 500,
        batch_size: 8,
        lr: 1e-3,
        mask_rate: 0.15,
        warmup: 0,
        seed: SEED,
        eval_steps: (41..=50).chain(491..=500).collect(),
    };
    let log = recon::train_mlm(&mut model, &corpus.train, &heldout, &schedule).unwrap();
    let profiles = recon::corpus_profiles(&model, &corpus.test, 16).unwrap();
    let lambdas = [0.0, 0.05, 0.1, 0.15, 0.2];
    let sweep = recon::sweep_lambdas(&profiles, &lambdas, 6).unwrap();

    // statistical tendency: frequent function words sit at or below the
    // median depth at the default penalty
    let maps = &sweep[2].maps;
    let mut all: Vec<usize> = maps.iter().flat_map(|m| m.as_slice().to_vec()).collect();
    all.sort_unstable();
    let median = all[all.len() / 2];
    let mut fw = Vec::new();
    for (d, m) in corpus.test.iter().zip(maps) {
        for (t, &tok) in d.tokens.iter().enumerate() {
            if ["the", "and", "a", "of"].contains(&corpus.vocab.word(tok)) {
                fw.push(m[t] as f64);
            }
        }
    }
    let fw_mean = fw.iter().sum::<f64>() / fw.len().max(1) as f64;
    let function_word_check = format!("function-word mean depth {fw_mean:.2} vs median {median}");

    let mut h = DefaultHasher::new();
    for (_, _, t) in model.store.iter() {
        hash_f32s(&mut h, t.data());
    }
    hash_f64s(&mut h, &log.train_loss);
    for r in &sweep {
        r.maps.hash(&mut h);
    }
    MlmRun {
        heldout: log.heldout,
        rows: sweep.iter().map(|r| (r.lambda, r.avg_depth)).collect(),
        function_word_check,
        fingerprint: h.finish(),
    }
}

fn criterion_6(run: &MlmRun) -> Outcome {
    let depths: Vec<f64> = run.rows.iter().map(|r| r.1).collect();
    let non_increasing = depths.windows(2).all(|w| w[1] <= w[0]);
    let strict = depths.windows(2).any(|w| w[1] < w[0]);
    let cells: Vec<String> = run.rows.iter().map(|(l, d)| format!("{l}:{d:.3}")).collect();
    Outcome {
        pass: non_increasing && strict,
        detail: format!("avg depth by lambda [{}]; {}", cells.join(", "), run.function_word_check),
        fingerprint: run.fingerprint,
    }
}

fn criterion_9(run: &MlmRun) -> Outcome {
    let window = |lo: usize, hi: usize| {
        let xs: Vec<f64> = run
            .heldout
            .iter()
            .filter(|(s, _)| (lo..=hi).contains(s))
            .map(|p| p.1)
            .collect();
        (xs.iter().sum::<f64>() / xs.len() as f64, xs.len())
    };
    let (early, n_early) = window(41, 50);
    let (late, n_late) = window(491, 500);
    Outcome {
        pass: n_early == 10 && n_late == 10 && late < early,
        detail: format!("held-out summed anytime loss: steps 41-50 mean {early:.4}, steps 491-500 mean {late:.4}"),
        fingerprint: 0,
    }
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let corpus = synthetic_corpus();
    let cfg = EncoderConfig::desk(corpus.vocab.len(), corpus.labels.len());
    let model = Model::<f32>::new(cfg, ModelKind::Classifier, SEED).unwrap();
    let stats = collect_stats(&corpus, Split::Train).unwrap();
    let table = MiTable::build(&stats, &corpus.vocab, DEFAULT_SMOOTHING, 12).unwrap();
    let maps = mi_depth_maps(&table, &corpus.test);
    let docs = &corpus.test;
    let ratio = |bs: usize| {
        let a = evaluate(&model, docs, Some(&maps), bs).unwrap();
        let f = evaluate(&model, docs, None, bs).unwrap();
        speedup(&f.counts, &a.counts)
    };
    let (s1, s15) = (ratio(1), ratio(15));
    let wall = |bs: usize| {
        let f = time_forward(&model, docs, None, bs, 1, 5).unwrap();
        let a = time_forward(&model, docs, Some(&maps), bs, 1, 5).unwrap();
        f.median_ns as f64 / a.median_ns as f64
    };
    let (w1, w15) = (wall(1), wall(15));
    Outcome {
        pass: s15 <= s1,
        detail: format!(
            "MI depths (avg {:.2}): exact speedup batch 1 {s1:.3}x, batch 15 {s15:.3}x; wall clock {w1:.2}x vs {w15:.2}x",
            average_depth(&maps)
        ),
        fingerprint: 0,
    }
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Outcome {
    let corpus = synthetic_corpus();
    let cfg = EncoderConfig::desk(corpus.vocab.len(), corpus.labels.len());
    let stats = collect_stats(&corpus, Split::Train).unwrap();
    let table = MiTable::build(&stats, &corpus.vocab, DEFAULT_SMOOTHING, 12).unwrap();
    let train_maps = mi_depth_maps(&table, &corpus.train);
    let test_maps = mi_depth_maps(&table, &corpus.test);
    let run = |seed: u64, maps: Option<(&[DepthMap], &[DepthMap])>| {
        let mut m = Model::<f32>::new(cfg.clone(), ModelKind::Classifier, seed).unwrap();
        let sched = ClassifierSchedule {
            epochs: 8,
            batch_size: 16,
            lr: 3e-4,
            warmup: 100,
            seed: seed + 1000,
        };
        train_classifier(&mut m, &corpus.train, maps.map(|p| p.0), &sched).unwrap();
        evaluate(&m, &corpus.test, maps.map(|p| p.1), 16).unwrap()
    };
    let seeds = [1u64, 2, 3];
    let fixed: Vec<_> = seeds.iter().map(|&s| run(s, None)).collect();
    let adaptive: Vec<_> = seeds.iter().map(|&s| run(s, Some((&train_maps, &test_maps)))).collect();
    let lengths: Vec<usize> = corpus.test.iter().map(|d| d.tokens.len()).collect();
    let fc = planned_counts(&cfg, &lengths, None, 1);
    let ac = planned_counts(&cfg, &lengths, Some(&test_maps), 1);
    let ffn_ratio = ac.ffn_applications as f64 / fc.ffn_applications as f64;
    let summary = |rs: &[adadepth::bench::EvalReport], s: f64, d: f64| {
        RunSummary::new(rs.iter().map(|r| r.accuracy()).collect(), s, d).unwrap()
    };
    let fs = summary(&fixed, 1.0, 12.0);
    let ads = summary(&adaptive, speedup(&fc, &ac), average_depth(&test_maps));
    let gap = (fs.mean - ads.mean).abs() * 100.0;
    Outcome {
        pass: gap <= 2.0 && ac.macs < fc.macs,
        detail: format!(
            "fixed acc {:.2}% (var {:.2e}), MI-adaptive acc {:.2}% (var {:.2e}), gap {gap:.2} pts (<= 2.0); adaptive ffn ratio {ffn_ratio:.3} (< 1), speedup {:.2}x",
            fs.mean * 100.0,
            fs.variance,
            ads.mean * 100.0,
            ads.variance,
            ads.speedup
        ),
        fingerprint: 0,
    }
}

// ---------------------------------------------------------------- driver

fn fingerprints_1_to_6() -> Vec<u64> {
    let run = toy_mlm_run();
    vec![
        criterion_1().fingerprint,
        criterion_2().fingerprint,
        criterion_3().fingerprint,
        criterion_4().fingerprint,
        criterion_5(false).fingerprint,
        run.fingerprint,
    ]
}

#[test]
fn acceptance_criteria() {
    let secs = Duration::from_secs;
    let mut results = Vec::new();
    let mut first = Vec::new();
    for (id, name, limit, f) in [
        (1, "MI oracle equivalence", secs(5), criterion_1 as fn() -> Outcome),
        (2, "full-depth equivalence", secs(10), criterion_2),
        (3, "copy invariance", secs(10), criterion_3),
        (4, "gradient check", secs(60), criterion_4),
    ] {
        let o = report(id, name, Some(limit), f);
        first.push(o.fingerprint);
        results.push(o.pass);
    }
    results.push(report(5, "exact compute savings", None, || criterion_5(true)).pass);
    // the fingerprint comes from the untimed variant
    first.push(criterion_5(false).fingerprint);
    let mut mlm_run = None;
    let o = report(6, "lambda monotonicity", Some(secs(600)), || {
        let run = toy_mlm_run();
        let o = criterion_6(&run);
        mlm_run = Some(run);
        o
    });
    first.push(o.fingerprint);
    results.push(o.pass);
    let run = mlm_run.expect("criterion 6 ran");
    results.push(report(7, "batch-size effect", None, criterion_7).pass);
    results.push(report(8, "end-to-end accuracy parity", Some(secs(1800)), criterion_8).pass);
    results.push(report(9, "MLM training sanity", None, || criterion_9(&run)).pass);

    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    results.push(
        report(10, "determinism", None, || {
            let a = pool.install(fingerprints_1_to_6);
            let b = pool.install(fingerprints_1_to_6);
            let same = a == b;
            let same_multi = a == first;
            Outcome {
                pass: same,
                detail: format!(
                    "criteria 1-6 single-threaded reruns {}; match multi-threaded run: {}",
                    if same { "bit-identical" } else { "DIFFER" },
                    same_multi
                ),
                fingerprint: 0,
            }
        })
        .pass,
    );
    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, p)| !**p).map(|(i, _)| i + 1).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
