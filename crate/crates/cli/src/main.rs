use std::path::PathBuf;

use adadepth::bench::ClassifierSchedule;
use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser)]
#[command(name = "adadepth", version, about = "Depth-adaptive Transformer text classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DepthMode {
    Mi,
    Recon,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Task {
    Mlm,
    Cls,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Args, Clone, Debug)]
pub struct DataArgs {
    /// Directory with train.tsv and optionally test.tsv (`label<TAB>text`).
    #[arg(long)]
    pub data: PathBuf,
    /// Optional `key = value` file: encoder shape (n_layers, d_model,
    /// n_heads, d_ff, dropout) and tokenizer keys (max_len, lowercase,
    /// min_freq).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic two-label corpus.
    GenSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 400)]
        n_train: usize,
        #[arg(long, default_value_t = 200)]
        n_test: usize,
        #[arg(long, default_value_t = 0.03)]
        label_noise: f64,
        /// Put every document under one label.
        #[arg(long)]
        single_label: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Estimate per-token depths for the train and test splits.
    Depths {
        #[arg(value_enum)]
        mode: DepthMode,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        /// Number of depth bins (MI mode).
        #[arg(long, default_value_t = 12)]
        bins: usize,
        #[arg(long, default_value_t = 0.1)]
        smoothing: f64,
        /// Masked-LM checkpoint (recon mode).
        #[arg(long)]
        mlm: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        lambda: f64,
        /// Masked variants per graph (recon mode).
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
    },
    /// Train a masked-LM or a classifier.
    Train {
        #[arg(value_enum)]
        task: Task,
        #[command(flatten)]
        data: DataArgs,
        /// Checkpoint path; `.meta` and `.log` files are written beside it.
        #[arg(long)]
        out: PathBuf,
        /// Depth file for the training split (classifier only).
        #[arg(long)]
        depths: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 3)]
        epochs: usize,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 0.15)]
        mask_rate: f64,
        /// Steps of linear learning-rate warmup.
        #[arg(long, default_value_t = 0)]
        warmup: usize,
        #[arg(long, value_enum, default_value_t = Precision::F32)]
        precision: Precision,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Test-split accuracy and compute report for one or more classifiers.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        /// Repeat to summarize several seeds.
        #[arg(long, required = true)]
        model: Vec<PathBuf>,
        /// Depth file for the test split; all layers when absent.
        #[arg(long)]
        depths: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        batch_size: usize,
        /// Timed repetitions; 0 skips wall-clock timing.
        #[arg(long, default_value_t = 0)]
        reps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Average depth (and optionally accuracy/speedup) per penalty factor.
    SweepLambda {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        mlm: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,0.05,0.1,0.15,0.2")]
        lambdas: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Classifier epochs per lambda; 0 reports depth only.
        #[arg(long, default_value_t = 0)]
        epochs: usize,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        /// Steps of linear learning-rate warmup.
        #[arg(long, default_value_t = 0)]
        warmup: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Exact and wall-clock speedup of adaptive over fixed depth across
    /// batch sizes.
    Bench {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        depths: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,15")]
        batch_sizes: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        warmup: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Seeded depth file with a prescribed token-weighted average depth.
    MakeDepths {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long, default_value_t = 12)]
        max_depth: usize,
        #[arg(long)]
        avg: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Histogram of a depth file (`depth<TAB>count`) or of an MI table's
    /// log-scaled values (`lo<TAB>hi<TAB>count`).
    ExportHist {
        #[arg(long, conflicts_with = "mi_table", required_unless_present = "mi_table")]
        depths: Option<PathBuf>,
        #[arg(long, default_value_t = 12)]
        max_depth: usize,
        #[arg(long)]
        mi_table: Option<PathBuf>,
        #[arg(long, default_value_t = 12)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenSynthetic {
            out,
            n_train,
            n_test,
            label_noise,
            single_label,
            seed,
        } => commands::gen_synthetic(&out, n_train, n_test, label_noise, single_label, seed),
        Command::Depths {
            mode,
            data,
            out,
            bins,
            smoothing,
            mlm,
            lambda,
            batch_size,
        } => match mode {
            DepthMode::Mi => commands::depths_mi(&data, &out, bins, smoothing),
            DepthMode::Recon => commands::depths_recon(&data, &out, mlm.as_deref(), lambda, batch_size),
        },
        Command::Train {
            task,
            data,
            out,
            depths,
            steps,
            epochs,
            batch_size,
            lr,
            mask_rate,
            warmup,
            precision,
            seed,
        } => {
            let opts = commands::TrainOpts {
                out,
                depths,
                steps,
                epochs,
                batch_size,
                lr,
                mask_rate,
                warmup,
                seed,
            };
            match (task, precision) {
                (Task::Mlm, Precision::F32) => commands::train_mlm::<f32>(&data, &opts),
                (Task::Mlm, Precision::F64) => commands::train_mlm::<f64>(&data, &opts),
                (Task::Cls, Precision::F32) => commands::train_cls::<f32>(&data, &opts),
                (Task::Cls, Precision::F64) => commands::train_cls::<f64>(&data, &opts),
            }
        }
        Command::Eval {
            data,
            model,
            depths,
            batch_size,
            reps,
            out,
        } => commands::eval(&data, &model, depths.as_deref(), batch_size, reps, out.as_deref()),
        Command::SweepLambda {
            data,
            mlm,
            lambdas,
            out,
            epochs,
            batch_size,
            lr,
            warmup,
            seed,
        } => {
            let sched = ClassifierSchedule {
                epochs,
                batch_size,
                lr,
                warmup,
                seed,
            };
            commands::sweep_lambda(&data, &mlm, &lambdas, &out, &sched)
        }
        Command::Bench {
            data,
            model,
            depths,
            batch_sizes,
            reps,
            warmup,
            out,
        } => commands::bench(&data, &model, &depths, &batch_sizes, reps, warmup, out.as_deref()),
        Command::MakeDepths {
            data,
            split,
            max_depth,
            avg,
            seed,
            out,
        } => {
            let split = match split {
                SplitArg::Train => adadepth::corpus::Split::Train,
                SplitArg::Test => adadepth::corpus::Split::Test,
            };
            commands::make_depths(&data, split, max_depth, avg, seed, &out)
        }
        Command::ExportHist {
            depths,
            max_depth,
            mi_table,
            bins,
            out,
        } => commands::export_hist(depths.as_deref(), max_depth, mi_table.as_deref(), bins, &out),
    }
}
