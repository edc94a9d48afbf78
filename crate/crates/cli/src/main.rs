use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use clflow::dataset::{generate, Dataset, GeneratorSpec};
use clflow::pipeline::{
    evaluate_scores, infer_run, plot_run, run_experiment, synthesize_dir, train, write_metrics,
    write_training, LambdaMode, Objective, RunConfig, RunLayout,
};
use clflow::synth::SynthesisParams;
use clflow::{Error, Image, Result};

#[derive(Parser)]
#[command(name = "clflow", version, about = "Normalizing-flow anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a procedural dataset directory.
    GenData(GenDataArgs),
    /// Synthesize one negative per image in a directory.
    Synth(SynthArgs),
    /// Train on `<data>/train/good` and write a run directory.
    Train(TrainArgs),
    /// Score `<data>/test` with a trained run.
    Infer(InferArgs),
    /// Compute AUROC from a score file.
    Eval(EvalArgs),
    /// Write the latent histogram of a trained run.
    Plot(InferArgs),
    /// Train, score and evaluate in one go.
    Run(TrainArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    train: usize,
    #[arg(long, default_value_t = 100)]
    test: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Defect contrast against the object, in [0, 1].
    #[arg(long, default_value_t = 1.0)]
    contrast: f64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON file with synthesis parameters.
    #[arg(long)]
    params: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Full,
    MlOnly,
}

#[derive(Clone, Copy, ValueEnum)]
enum LambdaArg {
    Auto,
    Fixed,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// JSON run configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_enum)]
    objective: Option<ObjectiveArg>,
    #[arg(long, value_enum)]
    lambda: Option<LambdaArg>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// A `name,label,score` CSV or a run directory.
    #[arg(long)]
    scores: PathBuf,
    /// Dataset directory; enables pixel AUROC.
    #[arg(long)]
    data: Option<PathBuf>,
}

impl TrainArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.objective {
            cfg.objective = match v {
                ObjectiveArg::Full => Objective::Full,
                ObjectiveArg::MlOnly => Objective::MlOnly,
            };
        }
        if let Some(v) = self.lambda {
            cfg.lambda_mode = match v {
                LambdaArg::Auto => LambdaMode::Auto,
                LambdaArg::Fixed => LambdaMode::Fixed,
            };
        }
        if let Some(v) = self.lambda1 {
            cfg.lambda1 = v;
        }
        if let Some(v) = self.lambda2 {
            cfg.lambda2 = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_code(err: &Error) -> u8 {
    match err.category() {
        "config" => 3,
        "missing-path" => 4,
        "format" => 5,
        "numeric" => 6,
        "synthesis" => 7,
        "shape" | "argument" => 8,
        _ => 9,
    }
}

fn score_file(path: &Path) -> PathBuf {
    if path.is_dir() {
        RunLayout::new(path).image_scores()
    } else {
        path.to_path_buf()
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => {
            let spec = GeneratorSpec {
                train: a.train,
                test: a.test,
                size: a.size,
                seed: a.seed,
                contrast: a.contrast,
                ..Default::default()
            };
            generate(&spec)?.save(&a.out)?;
            println!(
                "wrote {} train and {} test images to {}",
                a.train,
                a.test,
                a.out.display()
            );
        }
        Command::Synth(a) => {
            let params = match &a.params {
                Some(p) if !p.exists() => return Err(Error::MissingPath(p.clone())),
                Some(p) => serde_json::from_str::<SynthesisParams>(&std::fs::read_to_string(p)?)
                    .map_err(|e| Error::Config(e.to_string()))?,
                None => SynthesisParams::default(),
            };
            let m = synthesize_dir(&a.input, &a.out, a.seed, &params)?;
            println!(
                "synthesized {} negatives into {}",
                m.entries.len(),
                a.out.display()
            );
        }
        Command::Train(a) => {
            let cfg = a.config()?;
            let data = Dataset::load(&a.data)?;
            let images: Vec<&Image> = data.train.iter().map(|s| &s.image).collect();
            let report = train(&cfg, &images)?;
            write_training(&RunLayout::new(&a.out), &cfg, &report)?;
            let last = report.log.last().map_or(f64::NAN, |r| r.total);
            println!(
                "trained {} steps in {:.1}s, final loss {last:.4}, {} clamped steps",
                cfg.steps, report.seconds, report.clamped_steps
            );
        }
        Command::Infer(a) => {
            let data = Dataset::load(&a.data)?;
            let scored = infer_run(&a.run, &data)?;
            println!(
                "scored {} images into {}",
                scored.len(),
                a.run.join("scores").display()
            );
        }
        Command::Eval(a) => {
            let data = a.data.as_deref().map(Dataset::load).transpose()?;
            let metrics = evaluate_scores(&score_file(&a.scores), data.as_ref())?;
            if a.scores.is_dir() {
                write_metrics(&RunLayout::new(&a.scores), &metrics)?;
            }
            println!("{}", metrics.summary());
        }
        Command::Plot(a) => {
            let data = Dataset::load(&a.data)?;
            let hist = plot_run(&a.run, &data)?;
            let (csv, _) = RunLayout::new(&a.run).histogram();
            println!(
                "histogram of {} latent values written to {}",
                hist.total,
                csv.display()
            );
        }
        Command::Run(a) => {
            let cfg = a.config()?;
            let data = Dataset::load(&a.data)?;
            let rep = run_experiment(&cfg, &data, Some(&a.out))?;
            println!("{}", rep.metrics.summary());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}
