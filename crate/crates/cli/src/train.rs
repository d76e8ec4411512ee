use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Serialize;

use bitgeo::bnn::{
    evaluate, save_checkpoint, train, ArchSpec, EpochLog, LatentLrScale, LayerKind, TrainConfig, WeightMode,
};
use bitgeo::data_io::Split;
use bitgeo::diagnostics::write_atomic;

use crate::data::{slice, DataSource};
use crate::manifest::Run;
use crate::CliError;

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstLayer {
    Binary,
    Continuous,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentScaleArg {
    Unit,
    Glorot,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub source: DataSource,
    /// Layer widths with kinds, e.g. 784c-1024b-1024b-10s.
    #[arg(long, default_value = "784c-1024b-1024b-10s")]
    pub arch: String,
    /// Overrides the kind of the first dense layer.
    #[arg(long, value_enum)]
    pub first_layer: Option<FirstLayer>,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    pub lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().lr_decay)]
    pub lr_decay: f64,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch_size: usize,
    /// Extra learning-rate factor for binary layers' latent weights.
    #[arg(long, value_enum, default_value = "glorot")]
    pub latent_lr_scale: LatentScaleArg,
    /// Constant multiplier on top of --latent-lr-scale.
    #[arg(long, default_value_t = TrainConfig::default().latent_lr_gain)]
    pub latent_lr_gain: f64,
    /// Train on the first N training samples only.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Checkpoint path; the epoch log and manifest are written beside it.
    #[arg(long)]
    pub out: PathBuf,
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

#[derive(Serialize)]
struct Results {
    final_train_loss: f64,
    test_acc_binary: f64,
    test_acc_continuous: f64,
    epochs: Vec<EpochLog>,
}

pub fn run(args: TrainArgs) -> Result<(), CliError> {
    let arch: ArchSpec = args
        .arch
        .parse()
        .map_err(|e| CliError::Usage(format!("invalid --arch {:?}: {e}", args.arch)))?;
    let cfg = TrainConfig {
        learning_rate: args.lr,
        lr_decay: args.lr_decay,
        batch_size: args.batch_size,
        epochs: args.epochs,
        seed: args.seed,
        first_layer: args.first_layer.map(|k| match k {
            FirstLayer::Binary => LayerKind::Binary,
            FirstLayer::Continuous => LayerKind::Continuous,
        }),
        latent_lr_scale: match args.latent_lr_scale {
            LatentScaleArg::Unit => LatentLrScale::Unit,
            LatentScaleArg::Glorot => LatentLrScale::Glorot,
        },
        latent_lr_gain: args.latent_lr_gain,
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(dir) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        crate::manifest::ensure_dir(dir)?;
    }
    let mut run = Run::start("train", &args, Some(args.seed))?;

    let (mut train_set, test_set) = args.source.train_test()?;
    if let Some(n) = args.limit {
        if n == 0 {
            return Err(CliError::Usage("--limit must be at least 1".into()));
        }
        train_set = slice(&train_set, 0..n.min(train_set.len()), Split::Train)?;
    }
    if train_set.dim() != arch.input_dim() || test_set.num_classes > arch.num_classes() {
        return Err(CliError::Usage(format!(
            "--arch {arch} expects {}-dimensional inputs and up to {} classes; data has {} and {}",
            arch.input_dim(),
            arch.num_classes(),
            train_set.dim(),
            train_set.num_classes.max(test_set.num_classes)
        )));
    }
    let mut net = cfg.init_network(&arch)?;
    eprintln!(
        "training {} on {} samples ({} held out), {} epochs",
        net.arch()?,
        train_set.len(),
        test_set.len(),
        cfg.epochs
    );

    let log_path = sibling(&args.out, ".log.csv");
    let mut log_csv = format!("{}\n", EpochLog::CSV_HEADER);
    let logs = train(&mut net, &train_set, Some(&test_set), &cfg, |l| {
        eprintln!(
            "epoch {:>3}  lr {:.5}  loss {:.4}  train {:.4}  test {:.4}",
            l.epoch,
            l.lr,
            l.train_loss,
            l.train_acc,
            l.test_acc.unwrap_or(f64::NAN)
        );
        log_csv.push_str(&l.csv_row());
        log_csv.push('\n');
        // Keep the log current so long runs can be watched.
        let _ = write_atomic(&log_path, log_csv.as_bytes());
    })?;
    write_atomic(&log_path, log_csv.as_bytes())?;
    save_checkpoint(&net, &args.out)?;

    let test_acc_binary = evaluate(&net, &test_set, WeightMode::Binary)?;
    let test_acc_continuous = evaluate(&net, &test_set, WeightMode::Continuous)?;
    eprintln!("test accuracy: binary weights {test_acc_binary:.4}, continuous weights {test_acc_continuous:.4}");
    run.output(&args.out);
    run.output(&log_path);
    run.results(Results {
        final_train_loss: logs.last().map_or(f64::NAN, |l| l.train_loss),
        test_acc_binary,
        test_acc_continuous,
        epochs: logs,
    })?;
    run.finish(&sibling(&args.out, ".manifest.json"))?;
    Ok(())
}
