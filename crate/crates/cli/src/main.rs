use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hire_core::eval::{eval_tasks, evaluate};
use hire_core::kg::{generate_synthetic, load_kg, save_dataset, DataFormat, Dataset, KgError, Split, SyntheticSpec};
use hire_core::task::TaskSampler;
use hire_core::tensor::TensorFile;
use hire_core::trainer::{
    initial_params, pretrain_transe, train, Ablation, Checkpoint, LogRecord, MamlOrder, TrainConfig, TrainOutcome,
};
use hire_core::{Error, ParamStore, Result, TensorError};

mod output;

#[derive(Parser, Debug)]
#[command(name = "hire", version, about = "Few-shot knowledge graph completion")]
struct Cli {
    /// Run seed; overrides config files.
    #[arg(long, global = true, env = "HIRE_SEED")]
    seed: Option<u64>,
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Tsv,
    Gmatching,
}

impl From<Format> for DataFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Tsv => DataFormat::Tsv,
            Format::Gmatching => DataFormat::GmatchingJson,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SweepParam {
    Lambda,
    FalseContexts,
    InnerLr,
}

#[derive(clap::Args, Debug)]
struct DataArgs {
    /// Dataset directory (or a single background TSV file).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "tsv")]
    format: Format,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        if !self.data.exists() {
            return Err(KgError::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("{} does not exist", self.data.display()),
            ))
            .into());
        }
        Ok(load_kg(&self.data, self.format.into())?)
    }
}

#[derive(clap::Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Training configuration (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Pretrained entity/relation tables from `pretrain`.
    #[arg(long)]
    pretrained: Option<PathBuf>,
    /// Component to disable; repeatable.
    #[arg(long, value_parser = parse_ablation)]
    ablation: Vec<Ablation>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    eval_interval: Option<usize>,
    #[arg(long)]
    tasks_per_step: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    inner_lr: Option<f64>,
    #[arg(long)]
    false_contexts: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_parser = parse_order)]
    order: Option<MamlOrder>,
}

fn parse_ablation(s: &str) -> std::result::Result<Ablation, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_order(s: &str) -> std::result::Result<MamlOrder, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a dataset, print a summary and optionally convert it.
    Ingest {
        #[command(flatten)]
        data: DataArgs,
        /// Write the dataset here.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "tsv")]
        output_format: Format,
    },
    /// Generate a synthetic benchmark with planted composition rules.
    GenSynth {
        /// Generator spec (`key = value` lines); defaults to the desk spec.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value = "tsv")]
        format: Format,
    },
    /// Pretrain TransE tables on the background graph.
    Pretrain {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Meta-train and write checkpoints plus a training log.
    Train {
        #[command(flatten)]
        args: TrainArgs,
        /// Output directory.
        #[arg(long)]
        output: PathBuf,
    },
    /// Evaluate a checkpoint on a split and write a metrics report.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        /// Checkpoint file, or a training output directory (uses best.ckpt).
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        k: Option<usize>,
        /// Keep other known true tails among the candidates.
        #[arg(long)]
        raw: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train once per value of a hyper-parameter and tabulate test metrics.
    Sweep {
        #[command(flatten)]
        args: TrainArgs,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Summarize a checkpoint, tensor file or dataset.
    Inspect {
        path: PathBuf,
        #[arg(long, value_enum, default_value = "tsv")]
        format: Format,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Kg(KgError::Config(_)) => 1,
        Error::Divergence { .. } | Error::Metrics(_) => 3,
        Error::Tensor(TensorError::NonFinite { .. } | TensorError::NonFiniteGradient(_) | TensorError::ZeroNorm) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn train_config(args: &TrainArgs, seed: Option<u64>) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    for (i, a) in args.ablation.iter().enumerate() {
        if args.ablation[..i].contains(a) {
            return Err(Error::Config(format!("ablation {a} given twice")));
        }
        cfg.set(*a);
    }
    if cfg.no_context && args.lambda.is_some_and(|l| l > 0.0) {
        return Err(Error::Config("--lambda conflicts with --ablation no_context".into()));
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(v) = args.steps {
        cfg.max_steps = v;
    }
    if let Some(v) = args.eval_interval {
        cfg.eval_interval = v;
    }
    if let Some(v) = args.tasks_per_step {
        cfg.tasks_per_step = v;
    }
    if let Some(v) = args.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = args.inner_lr {
        cfg.inner_lr = v;
    }
    if let Some(v) = args.false_contexts {
        cfg.false_contexts = v;
    }
    if let Some(v) = args.k {
        cfg.k = v;
    }
    if let Some(v) = args.order {
        cfg.order = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_tables(path: &Path) -> Result<ParamStore> {
    let f = TensorFile::load(path)?;
    Ok(f.tensors.into_iter().collect())
}

fn run_training(data: &Dataset, args: &TrainArgs, cfg: &TrainConfig, log: Option<&Path>) -> Result<TrainOutcome> {
    let pretrained = args.pretrained.as_deref().map(load_tables).transpose()?;
    let params = initial_params(data, cfg, pretrained.as_ref())?;
    let mut lines = vec![LogRecord::HEADER.to_string()];
    let outcome = train(data, Checkpoint::new(params, cfg.clone()), cfg, &mut |r| {
        if let Some(v) = r.validation {
            log::info!("step {} valid mrr {:.4}", r.step, v.mrr);
        }
        lines.push(r.to_tsv());
    })?;
    if let Some(path) = log {
        fs::write(path, lines.join("\n") + "\n")?;
    }
    Ok(outcome)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest {
            data,
            output,
            output_format,
        } => {
            let ds = data.load()?;
            print!("{}", output::dataset_summary(&ds));
            if let Some(out) = output {
                save_dataset(&ds, &out, output_format.into())?;
            }
        }
        Command::GenSynth { spec, output, format } => {
            let mut s = match spec {
                Some(p) => SyntheticSpec::from_toml(&fs::read_to_string(p)?)?,
                None => SyntheticSpec::desk(0),
            };
            if let Some(seed) = cli.seed {
                s.seed = seed;
            }
            let ds = generate_synthetic(&s)?;
            save_dataset(&ds, &output, format.into())?;
            fs::write(output.join("spec.toml"), s.to_toml())?;
            print!("{}", output::dataset_summary(&ds));
        }
        Command::Pretrain {
            data,
            dim,
            epochs,
            lr,
            output,
        } => {
            let ds = data.load()?;
            if dim == 0 || lr.is_nan() || lr <= 0.0 {
                return Err(Error::Config("dim and lr must be positive".into()));
            }
            let tables = pretrain_transe(&ds.graph, dim, epochs, lr, cli.seed.unwrap_or(0))?;
            let mut f = TensorFile::default();
            f.meta.insert("kind".into(), "transe-tables".into());
            f.meta.insert("epochs".into(), epochs.to_string());
            for (name, t) in tables.iter() {
                f.tensors.insert(name.clone(), t.clone());
            }
            f.save(&output)?;
        }
        Command::Train { args, output } => {
            let cfg = train_config(&args, cli.seed)?;
            let ds = args.data.load()?;
            fs::create_dir_all(&output)?;
            fs::write(output.join("config.toml"), cfg.to_toml())?;
            let outcome = run_training(&ds, &args, &cfg, Some(&output.join("train_log.tsv")))?;
            outcome.best.save(&output.join("best.ckpt"))?;
            outcome.last.save(&output.join("last.ckpt"))?;
            let best = outcome.best;
            println!(
                "best step {} valid mrr {}",
                best.step,
                best.best_mrr().map_or("-".to_string(), |m| m.to_string())
            );
            println!("config {}", cfg.fingerprint());
        }
        Command::Eval {
            data,
            checkpoint,
            split,
            k,
            raw,
            output,
        } => {
            let path = if checkpoint.is_dir() {
                checkpoint.join("best.ckpt")
            } else {
                checkpoint
            };
            let ck = Checkpoint::load(&path)?;
            let ds = data.load()?;
            let split: Split = split.parse()?;
            let mut cfg = ck.config.clone();
            if let Some(k) = k {
                cfg.k = k;
            }
            let sampler = TaskSampler::new(&ds);
            let tasks = eval_tasks(&sampler, ds.relations(split), cfg.k, cfg.candidate_size, cfg.seed)?;
            if tasks.is_empty() {
                return Err(Error::NoTasks);
            }
            let report = evaluate(&ck.params, &sampler, &tasks, &cfg, !raw)?;
            let text = report.to_text();
            print!("{text}");
            if let Some(out) = output {
                fs::write(out, text)?;
            }
        }
        Command::Sweep {
            args,
            param,
            values,
            output,
        } => {
            let base = train_config(&args, cli.seed)?;
            if param == SweepParam::Lambda && base.no_context {
                return Err(Error::Config(
                    "cannot sweep lambda with the contrastive term disabled".into(),
                ));
            }
            let ds = args.data.load()?;
            let sampler = TaskSampler::new(&ds);
            let mut rows = vec![format!(
                "{}\tmrr\thits@10\thits@5\thits@1\tbest_step",
                output::param_name(param)
            )];
            for &v in &values {
                let mut cfg = base.clone();
                match param {
                    SweepParam::Lambda => cfg.lambda = v,
                    SweepParam::InnerLr => cfg.inner_lr = v,
                    SweepParam::FalseContexts => {
                        if v < 1.0 || v.fract() != 0.0 {
                            return Err(Error::Config(format!(
                                "false-contexts value {v} is not a positive integer"
                            )));
                        }
                        cfg.false_contexts = v as usize;
                    }
                }
                cfg.validate()?;
                let best = run_training(&ds, &args, &cfg, None)?.best;
                let tasks = eval_tasks(&sampler, &ds.test, cfg.k, cfg.candidate_size, cfg.seed)?;
                let r = evaluate(&best.params, &sampler, &tasks, &cfg, true)?;
                rows.push(format!(
                    "{v}\t{}\t{}\t{}\t{}\t{}",
                    r.mrr, r.hits10, r.hits5, r.hits1, best.step
                ));
                log::info!("{} = {v}: mrr {:.4}", output::param_name(param), r.mrr);
            }
            let text = rows.join("\n") + "\n";
            fs::write(&output, &text)?;
            print!("{text}");
        }
        Command::Inspect { path, format } => {
            if path.is_dir() {
                let ds = load_kg(&path, format.into())?;
                print!("{}", output::dataset_summary(&ds));
            } else {
                match TensorFile::load(&path) {
                    Ok(f) => print!("{}", output::tensor_summary(&f)),
                    Err(TensorError::Format(_)) => {
                        let ds = load_kg(&path, format.into())?;
                        print!("{}", output::dataset_summary(&ds));
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        }
    }
    Ok(())
}
