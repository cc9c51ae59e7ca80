use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use adadepth::bench::{
    self, depths_with_average, evaluate, mi_depth_maps, planned_counts, speedup, time_forward,
    ClassifierSchedule, RunSummary,
};
use adadepth::corpus::{collect_stats, Corpus, Document, Split, TokenizerConfig};
use adadepth::depth_map::{
    average_depth, check_alignment, depth_histogram, read_depth_file, write_depth_file, DepthMap,
};
use adadepth::encoder::{read_meta, EncoderConfig, Model, ModelKind};
use adadepth::mi::{histogram, write_histogram, MiTable};
use adadepth::nn::{DType, Real};
use adadepth::recon::{self, MlmSchedule, ReconConfig};
use adadepth::synth::{self, SynthConfig};

use crate::DataArgs;

const MODEL_KEYS: [&str; 5] = ["n_layers", "d_model", "n_heads", "d_ff", "dropout"];

/// Corpus plus encoder shape overrides from the optional config file.
struct Loaded {
    corpus: Corpus,
    overrides: Vec<(String, String)>,
}

fn load(data: &DataArgs) -> Result<Loaded> {
    let mut overrides = Vec::new();
    let mut tok_lines = String::new();
    if let Some(path) = &data.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        for line in text.lines() {
            let body = line.split('#').next().unwrap_or("").trim();
            match body.split_once('=') {
                Some((k, v)) if MODEL_KEYS.contains(&k.trim()) => {
                    overrides.push((k.trim().to_string(), v.trim().to_string()))
                }
                _ => {
                    tok_lines.push_str(line);
                    tok_lines.push('\n');
                }
            }
        }
    }
    let tok = match &data.config {
        Some(p) => TokenizerConfig::parse(&tok_lines, p)?,
        None => TokenizerConfig::default(),
    };
    let corpus = Corpus::load_dir(&data.data, &tok)
        .with_context(|| format!("loading dataset {}", data.data.display()))?;
    Ok(Loaded { corpus, overrides })
}

fn encoder_config(l: &Loaded) -> Result<EncoderConfig> {
    let mut c = EncoderConfig::desk(l.corpus.vocab.len(), l.corpus.labels.len());
    c.max_len = l.corpus.config.max_len;
    for (k, v) in &l.overrides {
        let int = || v.parse::<usize>().with_context(|| format!("bad {k} {v:?}"));
        match k.as_str() {
            "n_layers" => c.n_layers = int()?,
            "d_model" => c.d_model = int()?,
            "n_heads" => c.n_heads = int()?,
            "d_ff" => c.d_ff = int()?,
            "dropout" => c.dropout = v.parse().with_context(|| format!("bad dropout {v:?}"))?,
            _ => unreachable!("filtered by MODEL_KEYS"),
        }
    }
    c.validate()?;
    Ok(c)
}

fn check_vocab(config: &EncoderConfig, corpus: &Corpus, what: &Path) -> Result<()> {
    if config.vocab_size != corpus.vocab.len() {
        bail!(
            "{} was trained with a vocabulary of {} words but the dataset yields {}",
            what.display(),
            config.vocab_size,
            corpus.vocab.len()
        );
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn depth_hist_tsv(maps: &[DepthMap], max_depth: usize) -> String {
    let mut s = String::from("depth\tcount\n");
    for (i, c) in depth_histogram(maps, max_depth).iter().enumerate() {
        let _ = writeln!(s, "{}\t{c}", i + 1);
    }
    s
}

fn read_aligned(path: &Path, docs: &[Document], max_depth: usize) -> Result<Vec<DepthMap>> {
    let maps = read_depth_file(path, max_depth)?;
    check_alignment(&maps, docs).with_context(|| format!("depth file {}", path.display()))?;
    Ok(maps)
}

pub fn gen_synthetic(out: &Path, n_train: usize, n_test: usize, label_noise: f64, single_label: bool, seed: u64) -> Result<()> {
    create_dir(out)?;
    let cfg = SynthConfig {
        n_train,
        n_test,
        label_noise,
        seed,
        ..SynthConfig::default()
    };
    if single_label {
        write(&out.join("train.tsv"), &synth::to_tsv(&synth::single_label(&cfg)))?;
        return Ok(());
    }
    let (train, test) = synth::generate(&cfg);
    write(&out.join("train.tsv"), &synth::to_tsv(&train))?;
    write(&out.join("test.tsv"), &synth::to_tsv(&test))?;
    eprintln!("wrote {} train and {} test rows to {}", train.len(), test.len(), out.display());
    Ok(())
}

fn split_summary(rows: &[(&str, &[DepthMap])]) -> String {
    let mut s = String::from("split\tavg_depth\tn_sentences\n");
    for (name, maps) in rows {
        let _ = writeln!(s, "{name}\t{:.4}\t{}", average_depth(maps), maps.len());
    }
    s
}

pub fn depths_mi(data: &DataArgs, out: &Path, bins: usize, smoothing: f64) -> Result<()> {
    let l = load(data)?;
    let c = &l.corpus;
    create_dir(out)?;
    let stats = collect_stats(c, Split::Train)?;
    let table = MiTable::build(&stats, &c.vocab, smoothing, bins)?;
    c.vocab.write_tsv(&out.join("vocab.tsv"))?;
    table.write_tsv(&out.join("mi_table.tsv"), &c.vocab)?;
    let logs: Vec<f64> = table.iter().map(|(_, r)| r.mi_log).collect();
    write_histogram(&out.join("mi_hist.tsv"), &histogram(&logs, bins))?;
    let train = mi_depth_maps(&table, &c.train);
    let test = mi_depth_maps(&table, &c.test);
    write_depth_file(&out.join("train.depths"), &train)?;
    write_depth_file(&out.join("test.depths"), &test)?;
    let all: Vec<DepthMap> = train.iter().chain(&test).cloned().collect();
    write(&out.join("depth_hist.tsv"), &depth_hist_tsv(&all, bins))?;
    let summary = split_summary(&[("train", &train), ("test", &test)]);
    write(&out.join("summary.tsv"), &summary)?;
    print!("{summary}");
    Ok(())
}

pub fn depths_recon(data: &DataArgs, out: &Path, mlm: Option<&Path>, lambda: f64, batch_size: usize) -> Result<()> {
    let Some(mlm) = mlm else {
        bail!("recon mode needs --mlm <checkpoint>");
    };
    if !mlm.exists() {
        bail!("masked-LM checkpoint {} not found", mlm.display());
    }
    match read_meta(mlm)?.2 {
        DType::F32 => depths_recon_as::<f32>(data, out, mlm, lambda, batch_size),
        DType::F64 => depths_recon_as::<f64>(data, out, mlm, lambda, batch_size),
    }
}

fn load_mlm<F: Real>(path: &Path, corpus: &Corpus) -> Result<Model<F>> {
    let m = Model::<F>::load(path).with_context(|| format!("loading {}", path.display()))?;
    if m.kind != ModelKind::MaskedLm {
        bail!("{} is not a masked-LM checkpoint", path.display());
    }
    check_vocab(&m.config, corpus, path)?;
    Ok(m)
}

fn depths_recon_as<F: Real>(data: &DataArgs, out: &Path, mlm: &Path, lambda: f64, batch_size: usize) -> Result<()> {
    let l = load(data)?;
    let c = &l.corpus;
    let model = load_mlm::<F>(mlm, c)?;
    let cfg = ReconConfig { lambda, batch_size };
    create_dir(out)?;
    let train = recon::estimate_corpus_depths(&model, &c.train, &cfg)?;
    let test = recon::estimate_corpus_depths(&model, &c.test, &cfg)?;
    write_depth_file(&out.join("train.depths"), &train)?;
    write_depth_file(&out.join("test.depths"), &test)?;
    let n = model.config.n_layers;
    write(&out.join("depth_hist.tsv"), &depth_hist_tsv(&test, n))?;
    let summary = format!(
        "lambda\tavg_depth\tn_sentences\n{lambda}\t{:.4}\t{}\n",
        average_depth(&test),
        test.len()
    );
    write(&out.join("summary.tsv"), &summary)?;
    print!("{summary}");
    Ok(())
}

pub struct TrainOpts {
    pub out: PathBuf,
    pub depths: Option<PathBuf>,
    pub steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub mask_rate: f64,
    pub warmup: usize,
    pub seed: u64,
}

fn log_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".log");
    PathBuf::from(s)
}

fn loss_log(losses: &[f64]) -> String {
    let mut s = String::new();
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(s, "{}\t{l}", i + 1);
    }
    s
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

pub fn train_mlm<F: Real>(data: &DataArgs, o: &TrainOpts) -> Result<()> {
    if o.depths.is_some() {
        bail!("--depths applies to classifier training only");
    }
    let l = load(data)?;
    let config = encoder_config(&l)?;
    let mut model = Model::<F>::new(config, ModelKind::MaskedLm, o.seed)?;
    let sched = MlmSchedule {
        steps: o.steps,
        batch_size: o.batch_size,
        lr: o.lr,
        mask_rate: o.mask_rate,
        warmup: o.warmup,
        seed: o.seed.wrapping_add(100),
        eval_steps: Vec::new(),
    };
    let log = recon::train_mlm(&mut model, &l.corpus.train, &[], &sched)?;
    ensure_parent(&o.out)?;
    model.save(&o.out)?;
    write(&log_path(&o.out), &loss_log(&log.train_loss))?;
    if let Some(last) = log.train_loss.last() {
        eprintln!("trained masked-LM for {} steps, last loss {last:.4}", log.train_loss.len());
    }
    Ok(())
}

pub fn train_cls<F: Real>(data: &DataArgs, o: &TrainOpts) -> Result<()> {
    let l = load(data)?;
    let config = encoder_config(&l)?;
    let depths = match &o.depths {
        Some(p) => Some(read_aligned(p, &l.corpus.train, config.n_layers)?),
        None => None,
    };
    let mut model = Model::<F>::new(config, ModelKind::Classifier, o.seed)?;
    let sched = ClassifierSchedule {
        epochs: o.epochs,
        batch_size: o.batch_size,
        lr: o.lr,
        warmup: o.warmup,
        seed: o.seed.wrapping_add(100),
    };
    let losses = bench::train_classifier(&mut model, &l.corpus.train, depths.as_deref(), &sched)?;
    ensure_parent(&o.out)?;
    model.save(&o.out)?;
    write(&log_path(&o.out), &loss_log(&losses))?;
    if let Some(last) = losses.last() {
        eprintln!("trained classifier for {} steps, last loss {last:.4}", losses.len());
    }
    Ok(())
}

/// Evaluates one or more classifier checkpoints (e.g. one per seed) on the
/// test split; with several, adds the mean and population variance of
/// their accuracies.
pub fn eval(data: &DataArgs, models: &[PathBuf], depths: Option<&Path>, batch_size: usize, reps: usize, out: Option<&Path>) -> Result<()> {
    if models.is_empty() {
        bail!("at least one --model is required");
    }
    let l = load(data)?;
    let mut s = String::new();
    let mut accs = Vec::new();
    let mut last = None;
    for (i, m) in models.iter().enumerate() {
        let r = match read_meta(m)?.2 {
            DType::F32 => eval_as::<f32>(&l, m, depths, batch_size, reps)?,
            DType::F64 => eval_as::<f64>(&l, m, depths, batch_size, reps)?,
        };
        if i == 0 {
            s.push_str("metric\tvalue\n");
            s.push_str(&r.0);
        } else {
            let _ = writeln!(s, "accuracy.{i}\t{:.6}", r.1);
        }
        accs.push(r.1);
        last = Some(r.2);
    }
    if accs.len() > 1 {
        let (speedup, avg) = last.expect("at least one model");
        let summary = RunSummary::new(accs, speedup, avg)?;
        let _ = writeln!(s, "accuracy_mean\t{:.6}", summary.mean);
        let _ = writeln!(s, "accuracy_variance\t{:.8}", summary.variance);
    }
    if let Some(p) = out {
        write(p, &s)?;
    }
    print!("{s}");
    Ok(())
}

fn load_classifier<F: Real>(path: &Path, corpus: &Corpus) -> Result<Model<F>> {
    let m = Model::<F>::load(path).with_context(|| format!("loading {}", path.display()))?;
    if m.kind != ModelKind::Classifier {
        bail!("{} is not a classifier checkpoint", path.display());
    }
    check_vocab(&m.config, corpus, path)?;
    Ok(m)
}

/// Report lines, accuracy, and (speedup, average depth).
fn eval_as<F: Real>(l: &Loaded, path: &Path, depths: Option<&Path>, batch_size: usize, reps: usize) -> Result<(String, f64, (f64, f64))> {
    let docs = &l.corpus.test;
    if docs.is_empty() {
        bail!("dataset has no test split");
    }
    let model = load_classifier::<F>(path, &l.corpus)?;
    let n = model.config.n_layers;
    let maps = match depths {
        Some(p) => Some(read_aligned(p, docs, n)?),
        None => None,
    };
    let report = evaluate(&model, docs, maps.as_deref(), batch_size)?;
    let lengths: Vec<usize> = docs.iter().map(|d| d.tokens.len()).collect();
    let fixed = planned_counts(&model.config, &lengths, None, batch_size);
    let mut s = String::new();
    let _ = writeln!(s, "accuracy\t{:.6}", report.accuracy());
    let _ = writeln!(s, "correct\t{}", report.correct);
    let _ = writeln!(s, "total\t{}", report.total);
    let _ = writeln!(s, "tokens\t{}", report.tokens);
    let _ = writeln!(s, "n_layers\t{n}");
    let _ = writeln!(s, "batch_size\t{batch_size}");
    let _ = writeln!(s, "ffn_applications\t{}", report.counts.ffn_applications);
    let _ = writeln!(s, "kv_projections\t{}", report.counts.kv_projections);
    let _ = writeln!(s, "macs\t{}", report.counts.macs);
    let _ = writeln!(s, "fixed_macs\t{}", fixed.macs);
    let _ = writeln!(s, "speedup\t{:.4}", speedup(&fixed, &report.counts));
    let avg = maps.as_deref().map_or(n as f64, average_depth);
    let _ = writeln!(s, "avg_depth\t{avg:.4}");
    let hist: Vec<String> = report.n_max_hist.iter().map(u64::to_string).collect();
    let _ = writeln!(s, "n_max_hist\t{}", hist.join(","));
    if reps > 0 {
        let t = time_forward(&model, docs, maps.as_deref(), batch_size, 1, reps)?;
        let _ = writeln!(s, "wall_min_ns\t{}", t.min_ns);
        let _ = writeln!(s, "wall_median_ns\t{}", t.median_ns);
    }
    Ok((s, report.accuracy(), (speedup(&fixed, &report.counts), avg)))
}

/// `sched.seed` seeds the classifier weights; training uses `seed + 100`.
pub fn sweep_lambda(data: &DataArgs, mlm: &Path, lambdas: &[f64], out: &Path, sched: &ClassifierSchedule) -> Result<()> {
    if !mlm.exists() {
        bail!("masked-LM checkpoint {} not found", mlm.display());
    }
    match read_meta(mlm)?.2 {
        DType::F32 => sweep_as::<f32>(data, mlm, lambdas, out, sched),
        DType::F64 => sweep_as::<f64>(data, mlm, lambdas, out, sched),
    }
}

fn sweep_as<F: Real>(data: &DataArgs, mlm: &Path, lambdas: &[f64], out: &Path, sched: &ClassifierSchedule) -> Result<()> {
    let epochs = sched.epochs;
    let l = load(data)?;
    let c = &l.corpus;
    let model = load_mlm::<F>(mlm, c)?;
    let n = model.config.n_layers;
    create_dir(out)?;
    let test_profiles = recon::corpus_profiles(&model, &c.test, 16)?;
    let train_profiles = if epochs > 0 {
        recon::corpus_profiles(&model, &c.train, 16)?
    } else {
        Vec::new()
    };
    let rows = recon::sweep_lambdas(&test_profiles, lambdas, n)?;
    let mut s = String::from("lambda\taccuracy\tspeedup\tavg_depth\tn_sentences\n");
    let lengths: Vec<usize> = c.test.iter().map(|d| d.tokens.len()).collect();
    let mut cls_config = encoder_config(&l)?;
    cls_config.n_layers = n;
    for row in &rows {
        write_depth_file(&out.join(format!("test.lambda{}.depths", row.lambda)), &row.maps)?;
        let fixed = planned_counts(&cls_config, &lengths, None, 1);
        let adaptive = planned_counts(&cls_config, &lengths, Some(&row.maps), 1);
        let acc = if epochs > 0 {
            let train_maps = recon::depths_from_profiles(&train_profiles, row.lambda, n)?;
            let mut cls = Model::<F>::new(cls_config.clone(), ModelKind::Classifier, sched.seed)?;
            let sched = ClassifierSchedule {
                seed: sched.seed.wrapping_add(100),
                ..sched.clone()
            };
            bench::train_classifier(&mut cls, &c.train, Some(&train_maps), &sched)?;
            format!("{:.4}", evaluate(&cls, &c.test, Some(&row.maps), 16)?.accuracy())
        } else {
            "-".to_string()
        };
        let _ = writeln!(
            s,
            "{}\t{acc}\t{:.4}\t{:.4}\t{}",
            row.lambda,
            speedup(&fixed, &adaptive),
            row.avg_depth,
            row.n_sentences
        );
    }
    write(&out.join("summary.tsv"), &recon::summary_tsv(&rows))?;
    write(&out.join("sweep.tsv"), &s)?;
    print!("{s}");
    Ok(())
}

pub fn bench(data: &DataArgs, model: &Path, depths: &Path, batch_sizes: &[usize], reps: usize, warmup: usize, out: Option<&Path>) -> Result<()> {
    match read_meta(model)?.2 {
        DType::F32 => bench_as::<f32>(data, model, depths, batch_sizes, reps, warmup, out),
        DType::F64 => bench_as::<f64>(data, model, depths, batch_sizes, reps, warmup, out),
    }
}

fn bench_as<F: Real>(data: &DataArgs, path: &Path, depths: &Path, batch_sizes: &[usize], reps: usize, warmup: usize, out: Option<&Path>) -> Result<()> {
    let l = load(data)?;
    let docs = &l.corpus.test;
    let model = load_classifier::<F>(path, &l.corpus)?;
    let maps = read_aligned(depths, docs, model.config.n_layers)?;
    let lengths: Vec<usize> = docs.iter().map(|d| d.tokens.len()).collect();
    let mut s = String::from(
        "batch_size\tffn_fixed\tffn_adaptive\tmacs_fixed\tmacs_adaptive\tspeedup_exact\twall_fixed_ns\twall_adaptive_ns\tspeedup_wall\n",
    );
    for &bs in batch_sizes {
        let fixed = planned_counts(&model.config, &lengths, None, bs);
        let adaptive = planned_counts(&model.config, &lengths, Some(&maps), bs);
        let tf = time_forward(&model, docs, None, bs, warmup, reps)?;
        let ta = time_forward(&model, docs, Some(&maps), bs, warmup, reps)?;
        let _ = writeln!(
            s,
            "{bs}\t{}\t{}\t{}\t{}\t{:.4}\t{}\t{}\t{:.4}",
            fixed.ffn_applications,
            adaptive.ffn_applications,
            fixed.macs,
            adaptive.macs,
            speedup(&fixed, &adaptive),
            tf.median_ns,
            ta.median_ns,
            tf.median_ns as f64 / ta.median_ns.max(1) as f64
        );
    }
    if let Some(p) = out {
        write(p, &s)?;
    }
    print!("{s}");
    Ok(())
}

pub fn export_hist(depths: Option<&Path>, max_depth: usize, mi_table: Option<&Path>, bins: usize, out: &Path) -> Result<()> {
    if let Some(p) = depths {
        let maps = read_depth_file(p, max_depth)?;
        return write(out, &depth_hist_tsv(&maps, max_depth));
    }
    let Some(p) = mi_table else {
        bail!("either --depths or --mi-table is required");
    };
    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    let values = text
        .lines()
        .enumerate()
        .map(|(i, line)| {
            let col = line
                .split('\t')
                .nth(2)
                .with_context(|| format!("{}:{}: expected word<TAB>mi<TAB>mi_log<TAB>depth", p.display(), i + 1))?;
            col.parse::<f64>()
                .with_context(|| format!("{}:{}: bad mi_log {col:?}", p.display(), i + 1))
        })
        .collect::<Result<Vec<_>>>()?;
    write_histogram(out, &histogram(&values, bins))?;
    Ok(())
}

pub fn make_depths(data: &DataArgs, split: Split, max_depth: usize, avg: f64, seed: u64, out: &Path) -> Result<()> {
    let l = load(data)?;
    let lengths: Vec<usize> = l.corpus.split(split).iter().map(|d| d.tokens.len()).collect();
    let maps = depths_with_average(&lengths, max_depth, avg, seed)?;
    ensure_parent(out)?;
    write_depth_file(out, &maps)?;
    println!("avg_depth\t{:.4}\nn_sentences\t{}", average_depth(&maps), maps.len());
    Ok(())
}
