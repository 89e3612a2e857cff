use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use radchar::bundle::{self, BundleMeta, BUNDLE_KIND};
use radchar::dataset::{
    self, read_record, read_sidecar, regenerate_record_bytes, split, Dataset, DatasetConfig, LabelNormalizer,
    StandardizationStats, GENERATOR,
};
use radchar::iq_input::{self, InputFormat};
use radchar::model::{BackboneKind, ModelConfig, MtlModel};
use radchar::train::eval::{evaluate, ModelPredictor};
use radchar::train::{fit, Prepared, TaskWeights, TrainConfig};
use radchar::waveform::{SignalClass, SAMPLE_RATE_HZ};
use radchar::Error;

use radchar_cli::config::{self, ConfigError, FileConfig, ModelArg};

const DATA_DIR_ENV: &str = "RADCHAR_DATA_DIR";

#[derive(Parser)]
#[command(name = "radchar", version, about = "Pulsed-radar dataset generation and multi-task signal characterisation")]
struct Cli {
    /// TOML file supplying defaults for any flag (sections per subcommand).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset file and its JSON sidecar.
    Generate(GenerateArgs),
    /// Train a model on a dataset's training split.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split, per SNR.
    Eval(EvalArgs),
    /// Predict class and parameters for one IQ frame.
    Infer(InferArgs),
    /// Print one record and optionally dump its samples.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    count: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, allow_negative_numbers = true)]
    snr_min: Option<i32>,
    #[arg(long, allow_negative_numbers = true)]
    snr_max: Option<i32>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core. Output does not depend on it.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Seed of the train/val/test shuffle.
    #[arg(long)]
    split_seed: Option<u64>,
    /// Five comma-separated weights: class, n_p, t_pw, t_pri, t_d.
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    /// Best-validation checkpoint; the final epoch goes to `<out>.last`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON-lines epoch log (default `<out>.log.jsonl`).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// CSV report path.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// 4096-byte raw f32 frame or a 512-row CSV of i,q or t,i,q.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    index: u64,
    /// Write the frame as `t_us,i,q` rows.
    #[arg(long)]
    dump_csv: Option<PathBuf>,
    /// Write the frame as 4096 raw bytes (the `infer` raw format).
    #[arg(long)]
    dump_raw: Option<PathBuf>,
}

fn backbone(m: ModelArg) -> BackboneKind {
    match m {
        ModelArg::Cnn1d => BackboneKind::Cnn1d,
        ModelArg::Cnn2d => BackboneKind::Cnn2d,
        ModelArg::IqstS => BackboneKind::IqstS,
        ModelArg::IqstL => BackboneKind::IqstL,
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Raw,
    Csv,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Config(ConfigError::Io { .. }) => 3,
            CliError::Config(ConfigError::Parse { .. }) => 2,
            CliError::Io { .. } => 3,
            CliError::Core(e) => match e {
                Error::Config(_) | Error::InvalidParams(_) | Error::InvalidCodeLength { .. } => 2,
                Error::Io(_) => 3,
                Error::Format(_) | Error::Mismatch(_) | Error::FrameOverflow { .. } | Error::LabelOutOfRange { .. } => 4,
                Error::NonFiniteLoss { .. } | Error::DegenerateVariance(_) => 5,
                Error::Nn(n) => match n {
                    radchar_nn::NnError::NonFinite { .. } => 5,
                    radchar_nn::NnError::Io(_) => 3,
                    radchar_nn::NnError::Format(_) => 4,
                    _ => 4,
                },
            },
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Relative paths resolve against `$RADCHAR_DATA_DIR` when it is set.
fn resolve(path: PathBuf) -> PathBuf {
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) if path.is_relative() => Path::new(&dir).join(path),
        _ => path,
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Generate(a) => generate(a, file.generate.unwrap_or_default()),
        Command::Train(a) => train(a, file.train.unwrap_or_default()),
        Command::Eval(a) => eval(a, file.eval.unwrap_or_default()),
        Command::Infer(a) => infer(a, file.infer.unwrap_or_default()),
        Command::Inspect(a) => inspect(a, file.inspect.unwrap_or_default()),
    }
}

fn generate(a: GenerateArgs, f: config::Generate) -> CliResult<()> {
    let d = DatasetConfig::default();
    let cfg = DatasetConfig {
        count: a.count.or(f.count).unwrap_or(d.count),
        seed: a.seed.or(f.seed).unwrap_or(d.seed),
        snr_min: a.snr_min.or(f.snr_min).unwrap_or(d.snr_min),
        snr_max: a.snr_max.or(f.snr_max).unwrap_or(d.snr_max),
        ..d
    };
    cfg.validate()?;
    let out = resolve(a.out.or(f.out).unwrap_or_else(|| "radchar.radc".into()));
    let workers = a.workers.or(f.workers).unwrap_or(0);
    let s = dataset::generate(&cfg, &out, workers).map_err(|e| match e {
        Error::Io(source) => CliError::Io { path: out.clone(), source },
        e => e.into(),
    })?;
    println!("wrote {} records to {} ({} bytes)", s.count, out.display(), s.bytes);
    println!("sha256 {}", s.sha256);
    for (c, n) in SignalClass::ALL.iter().zip(s.class_counts) {
        println!("  {:<18} {n:>9} ({:.2}%)", c.name(), 100.0 * n as f64 / s.count as f64);
    }
    Ok(())
}

fn load_dataset(path: &Path) -> CliResult<Dataset> {
    Dataset::load(path).map_err(|e| match e {
        Error::Io(source) => CliError::Io {
            path: path.to_path_buf(),
            source,
        },
        e => e.into(),
    })
}

fn load_bundle(path: &Path) -> CliResult<bundle::Bundle> {
    bundle::load(path).map_err(|e| match e {
        Error::Nn(radchar_nn::NnError::Io(source)) => CliError::Io {
            path: path.to_path_buf(),
            source,
        },
        e => e.into(),
    })
}

fn train(a: TrainArgs, f: config::Train) -> CliResult<()> {
    let d = TrainConfig::default();
    let weights = match a.weights.or(f.weights) {
        Some(w) => {
            let w: [f64; 5] = w
                .try_into()
                .map_err(|_| CliError::Usage("--weights takes exactly five values".into()))?;
            TaskWeights::from_array(w)?
        }
        None => d.weights,
    };
    let tc = TrainConfig {
        epochs: a.epochs.or(f.epochs).unwrap_or(d.epochs),
        lr: a.lr.or(f.lr).unwrap_or(d.lr),
        batch_size: a.batch_size.or(f.batch_size).unwrap_or(d.batch_size),
        seed: a.seed.or(f.seed).unwrap_or(d.seed),
        split_seed: a.split_seed.or(f.split_seed).unwrap_or(d.split_seed),
        weights,
    };
    tc.validate()?;
    let kind = backbone(a.model.or(f.model).unwrap_or(ModelArg::IqstS));
    let mc = ModelConfig::new(kind);
    let ds_path = resolve(a.dataset.or(f.dataset).unwrap_or_else(|| "radchar.radc".into()));
    let out = resolve(a.out.or(f.out).unwrap_or_else(|| format!("{kind}.rckp").into()));
    let log_path = a.log.or(f.log).map(resolve).unwrap_or_else(|| with_suffix(&out, ".log.jsonl"));

    let ds = load_dataset(&ds_path)?;
    let sp = split(ds.len(), tc.split_seed)?;
    let stats = StandardizationStats::compute(sp.train.iter().map(|&i| ds.planar(i)))?;
    let norm = LabelNormalizer::default();
    let train_set = Prepared::new(&ds, &sp.train, &stats, &norm)?;
    let val_set = Prepared::new(&ds, &sp.val, &stats, &norm)?;
    let mut model = MtlModel::<f32>::new(mc.clone(), tc.seed)?;
    println!(
        "training {kind} ({} parameters) on {} records, validating on {}",
        model.num_trainable(),
        train_set.len(),
        val_set.len()
    );
    let mut log = String::new();
    let outcome = fit(&mut model, &train_set, Some(&val_set), &tc, |e| {
        let line = serde_json::to_string(e).expect("log serialises");
        println!("{line}");
        log.push_str(&line);
        log.push('\n');
        std::fs::write(&log_path, &log)?;
        Ok(())
    })
    .map_err(|e| match e {
        Error::Io(source) => CliError::Io {
            path: log_path.clone(),
            source,
        },
        e => e.into(),
    })?;
    let val_of = |epoch: usize| outcome.history[epoch - 1].val_loss;
    let meta = |epoch: usize, step: u64| BundleMeta {
        kind: BUNDLE_KIND.into(),
        generator: GENERATOR.into(),
        model: mc.clone(),
        train: tc.clone(),
        train_config_hash: tc.hash(),
        stats,
        normalizer: norm,
        dataset_fingerprint: ds.fingerprint().into(),
        split_seed: tc.split_seed,
        epoch,
        val_loss: val_of(epoch),
        adam_step: step,
    };
    let last_path = with_suffix(&out, ".last");
    let (best, last) = (&outcome.best, &outcome.last);
    bundle::save(&out, &meta(best.epoch, best.adam.step), &best.store, Some(&best.adam))
        .map_err(|e| nn_io(e, &out))?;
    bundle::save(&last_path, &meta(last.epoch, last.adam.step), &last.store, Some(&last.adam))
        .map_err(|e| nn_io(e, &last_path))?;
    println!(
        "best epoch {} (val loss {:.6}) -> {}; final epoch -> {}",
        best.epoch,
        val_of(best.epoch).unwrap_or(f64::NAN),
        out.display(),
        last_path.display()
    );
    Ok(())
}

fn nn_io(e: Error, path: &Path) -> CliError {
    match e {
        Error::Nn(radchar_nn::NnError::Io(source)) | Error::Io(source) => CliError::Io {
            path: path.to_path_buf(),
            source,
        },
        e => e.into(),
    }
}

fn eval(a: EvalArgs, f: config::Eval) -> CliResult<()> {
    let ckpt = resolve(a.checkpoint.or(f.checkpoint).ok_or_else(|| CliError::Usage("--checkpoint is required".into()))?);
    let ds_path = resolve(a.dataset.or(f.dataset).unwrap_or_else(|| "radchar.radc".into()));
    let report_path = a.report.or(f.report).map(resolve);
    let mut b = load_bundle(&ckpt)?;
    let ds = load_dataset(&ds_path)?;
    b.meta.check_dataset(ds.fingerprint())?;
    let test = split(ds.len(), b.meta.split_seed)?.test;
    let mut predictor = ModelPredictor {
        model: &mut b.model,
        stats: b.meta.stats,
        batch_size: 256,
    };
    let report = evaluate(&mut predictor, &ds, &test, &b.meta.normalizer, 256)?;
    if let Some(p) = &report_path {
        report.write_csv(p).map_err(|e| match e {
            Error::Io(source) => CliError::Io { path: p.clone(), source },
            e => e.into(),
        })?;
    }
    println!(
        "{} on {} test records (epoch {})",
        b.meta.model.backbone,
        test.len(),
        b.meta.epoch
    );
    let cols = [-10, 0, 10];
    println!("{:<16}{:>10}{:>10}{:>10}", "task", "-10 dB", "0 dB", "10 dB");
    let rows: [(&str, Box<dyn Fn(&radchar::train::eval::BinMetrics) -> f64>); 5] = [
        ("accuracy", Box::new(|b| b.accuracy)),
        ("n_p", Box::new(|b| b.mae[0])),
        ("t_pw (us)", Box::new(|b| b.mae[1])),
        ("t_pri (us)", Box::new(|b| b.mae[2])),
        ("t_d (us)", Box::new(|b| b.mae[3])),
    ];
    for (name, get) in rows.iter() {
        print!("{name:<16}");
        for s in cols {
            let v = report.bin(s).map(get).unwrap_or(f64::NAN);
            print!("{v:>10.3}");
        }
        println!();
    }
    let o = &report.overall;
    println!(
        "all SNRs: accuracy {:.4}, MAE n_p {:.3}, t_pw {:.3} us, t_pri {:.3} us, t_d {:.3} us",
        o.accuracy, o.mae[0], o.mae[1], o.mae[2], o.mae[3]
    );
    if let Some(p) = report_path {
        println!("report -> {}", p.display());
    }
    Ok(())
}

fn infer(a: InferArgs, f: config::Infer) -> CliResult<()> {
    let ckpt = resolve(a.checkpoint.or(f.checkpoint).ok_or_else(|| CliError::Usage("--checkpoint is required".into()))?);
    let input = resolve(a.input);
    let bytes = std::fs::read(&input).map_err(io_err(&input))?;
    let format = a.format.map(|f| match f {
        FormatArg::Raw => InputFormat::Raw,
        FormatArg::Csv => InputFormat::Csv,
    });
    let frame = iq_input::parse(&bytes, format)?;
    let mut b = load_bundle(&ckpt)?;
    let mut predictor = ModelPredictor {
        model: &mut b.model,
        stats: b.meta.stats,
        batch_size: 1,
    };
    let pred = predictor.predict_frames(&frame)?[0];
    let est = b.meta.normalizer.denormalize(&pred.reg_norm);
    let class = SignalClass::from_index(pred.class as u8).expect("five classes");
    println!("class   {} (p = {:.4})", class.name(), pred.probabilities[pred.class]);
    let (lo, hi) = b.meta.normalizer.n_p;
    println!("n_p     {} (raw {:.3})", est[0].round().clamp(lo, hi), est[0]);
    println!("t_pw    {:.3} us", est[1] * 1e6);
    println!("t_pri   {:.3} us", est[2] * 1e6);
    println!("t_d     {:.3} us", est[3] * 1e6);
    Ok(())
}

fn inspect(a: InspectArgs, f: config::Inspect) -> CliResult<()> {
    let path = resolve(a.dataset.or(f.dataset).unwrap_or_else(|| "radchar.radc".into()));
    let (header, rec) = read_record(&path, a.index).map_err(|e| match e {
        Error::Io(source) => CliError::Io {
            path: path.clone(),
            source,
        },
        e => e.into(),
    })?;
    let p = rec.params;
    println!("record  {} of {}", rec.index, header.count);
    println!("class   {} (l_c = {})", p.class.name(), p.l_c);
    println!("t_pw    {:.4} us", p.t_pw * 1e6);
    println!("t_pri   {:.4} us", p.t_pri * 1e6);
    println!("n_p     {}", p.n_p);
    println!("t_d     {:.4} us", p.t_d * 1e6);
    println!("snr     {} dB", p.snr_db);
    if let Ok(side) = read_sidecar(&path) {
        let mut stored = Vec::new();
        radchar::dataset::format::encode_record(
            rec.index,
            &p,
            rec.planar[..512].iter().copied().zip(rec.planar[512..].iter().copied()),
            &mut stored,
        );
        let regenerated = regenerate_record_bytes(&side.config, rec.index)?;
        println!(
            "regenerated from seed {}: {}",
            side.seed,
            if regenerated == stored { "identical" } else { "DIFFERS" }
        );
    }
    if let Some(out) = a.dump_csv.map(resolve) {
        std::fs::write(&out, iq_input::frame_to_csv(&rec.planar, SAMPLE_RATE_HZ)).map_err(io_err(&out))?;
        println!("samples -> {}", out.display());
    }
    if let Some(out) = a.dump_raw.map(resolve) {
        std::fs::write(&out, iq_input::frame_to_raw(&rec.planar)).map_err(io_err(&out))?;
        println!("samples -> {}", out.display());
    }
    Ok(())
}
