use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use noisemil::data::{generate_cohort, generate_synthetic, load_dataset, save_dataset, LabelSpace};
use noisemil::exec::Execution;
use noisemil::loss::LossSpec;
use noisemil::nn::{grad_check, load_checkpoint, mlp, save_checkpoint, GradCheckOptions};
use noisemil::pipeline::{evaluate_dataset, run_pipeline, ExperimentConfig};
use noisemil::sampling::{inject_noise, stratified_split, NoiseSpec, SplitSpec, StratifyKey};
use noisemil::train::{train_with, TrainConfig};
use noisemil::{Error, ErrorKind, Result};

#[derive(Parser, Debug)]
#[command(name = "noisemil", version, about = "Two-stage cell classification under label noise")]
struct Cli {
    /// JSON experiment config; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Disable data-parallel execution.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset (or a detection/mutation cohort).
    Gen(GenArgs),
    /// Stratified split of a dataset into parts.
    Split(SplitArgs),
    /// Inject symmetric label noise.
    Corrupt(CorruptArgs),
    /// Train a classifier.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Run the full two-stage experiment.
    Pipeline(PipelineArgs),
    /// Compare backpropagated gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    patients_per_class: Option<usize>,
    #[arg(long)]
    cells_min: Option<usize>,
    #[arg(long)]
    cells_max: Option<usize>,
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long)]
    stddev: Option<f64>,
    /// Write detection.txt and mutation.txt with this many healthy controls.
    #[arg(long)]
    cohort: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitBy {
    Cell,
    Bag,
}

#[derive(Args, Debug)]
struct SplitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.8, 0.2])]
    fractions: Vec<f64>,
    #[arg(long, value_enum, default_value = "bag")]
    by: SplitBy,
}

#[derive(Args, Debug)]
struct CorruptArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    rate: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Profile {
    Detection,
    Mutation,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    /// Hyperparameter profile; defaults to the one matching the dataset.
    #[arg(long, value_enum)]
    profile: Option<Profile>,
    /// Network output size; defaults to the dataset's class count.
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[arg(long)]
    noise_rate: Option<f64>,
    /// Extra noise rates for the sweep CSV.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<f64>>,
    /// Epoch cap for both stages.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patients_per_class: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LossArg {
    Ce,
    Smooth,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Layer widths from input to output, e.g. 8,16,4.
    #[arg(long, value_delimiter = ',', default_values_t = vec![8, 16, 4])]
    dims: Vec<usize>,
    #[arg(long, value_enum, default_value = "smooth")]
    loss: LossArg,
    #[arg(long, default_value_t = 0.2)]
    epsilon: f64,
    #[arg(long, default_value_t = 5)]
    samples: usize,
}

struct Context {
    config: ExperimentConfig,
    out: PathBuf,
    exec: Execution,
}

impl Context {
    fn seed(&self) -> u64 {
        self.config.seed
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.path(name);
        fs::write(&path, contents).map_err(|e| Error::file(&path, e))?;
        Ok(path)
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::config("config", e.to_string()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn gen(ctx: &Context, args: &GenArgs) -> Result<()> {
    let mut spec = ctx.config.synthetic.clone();
    spec.seed = ctx.seed();
    if let Some(k) = args.k {
        spec.num_classes = k;
    }
    if let Some(d) = args.d {
        spec.dim = d;
    }
    if let Some(n) = args.patients_per_class {
        spec.patients_per_class = n;
    }
    if let Some(n) = args.cells_min {
        spec.cells_per_patient_min = n;
        spec.cells_per_patient_max = spec.cells_per_patient_max.max(n);
    }
    if let Some(n) = args.cells_max {
        spec.cells_per_patient_max = n;
    }
    if let Some(s) = args.separation {
        spec.class_center_separation = s;
    }
    if let Some(s) = args.stddev {
        spec.within_class_stddev = s;
    }
    match args.cohort {
        Some(controls) => {
            let cohort = generate_cohort(&spec, controls)?;
            save_dataset(&cohort.detection, ctx.path("detection.txt"))?;
            save_dataset(&cohort.mutation, ctx.path("mutation.txt"))?;
            print!("detection: {}mutation: {}", cohort.detection.summary(), cohort.mutation.summary());
        }
        None => {
            let ds = generate_synthetic(&spec)?;
            save_dataset(&ds, ctx.path("dataset.txt"))?;
            print!("{}", ds.summary());
        }
    }
    Ok(())
}

fn split(ctx: &Context, args: &SplitArgs) -> Result<()> {
    let ds = load_dataset(&args.input)?;
    let key = match args.by {
        SplitBy::Cell => StratifyKey::CellLabel,
        SplitBy::Bag => StratifyKey::BagLabel,
    };
    let parts = stratified_split(&ds, &SplitSpec::new(&args.fractions, key, ctx.seed()))?;
    for (i, part) in parts.iter().enumerate() {
        let path = ctx.path(&format!("part{i}.txt"));
        save_dataset(part, &path)?;
        println!("{}: {} cells, {} bags", path.display(), part.len(), part.bags().len());
    }
    Ok(())
}

fn corrupt(ctx: &Context, args: &CorruptArgs) -> Result<()> {
    let ds = load_dataset(&args.input)?;
    let rate = args.rate.unwrap_or(ctx.config.noise_rate);
    let (noisy, mask) = inject_noise(&ds, &NoiseSpec { rate, seed: ctx.seed() })?;
    save_dataset(&noisy, ctx.path("corrupted.txt"))?;
    mask.save(ctx.path("flip_mask.csv"))?;
    println!("flipped {} of {} labels (rate {rate})", mask.flipped_count(), ds.len());
    Ok(())
}

fn train(ctx: &Context, args: &TrainArgs) -> Result<()> {
    let train_set = load_dataset(&args.train)?;
    let val_set = load_dataset(&args.val)?;
    let profile = args.profile.unwrap_or(match train_set.label_space() {
        LabelSpace::Binary => Profile::Detection,
        LabelSpace::Mutation => Profile::Mutation,
    });
    let mut config: TrainConfig = match profile {
        Profile::Detection => ctx.config.detection.clone(),
        Profile::Mutation => ctx.config.mutation.clone(),
    };
    config.seed = ctx.seed();
    if let Some(e) = args.epochs {
        config.max_epochs = e;
    }
    if let Some(eps) = args.epsilon {
        config.loss = LossSpec::smooth(eps);
    }
    let hidden = args.hidden.clone().unwrap_or_else(|| ctx.config.hidden.clone());
    let classes = args.classes.unwrap_or(train_set.num_classes());
    let layers = mlp(train_set.dim(), &hidden, classes);
    let (net, history) = train_with(&train_set, &val_set, &layers, &config, ctx.exec)?;
    save_checkpoint(&net, ctx.path("model.ckpt"))?;
    ctx.write("history.csv", &history.to_csv())?;
    let summary = history.summary_json();
    ctx.write("summary.json", &format!("{summary}\n"))?;
    println!("{summary}");
    Ok(())
}

fn eval(ctx: &Context, args: &EvalArgs) -> Result<()> {
    let net = load_checkpoint(&args.model)?;
    let ds = load_dataset(&args.input)?;
    let report = evaluate_dataset(&net, &ds, &ctx.config.aggregation, ctx.exec)?;
    ctx.write("report.json", &format!("{}\n", serde_json::to_string_pretty(&report)?))?;
    println!(
        "instance accuracy {:.6}, macro F1 {:.6}, bag accuracy {:.6}",
        report.instance.accuracy, report.instance.macro_f1, report.bag_vote.accuracy
    );
    Ok(())
}

fn pipeline(ctx: &Context, args: &PipelineArgs) -> Result<()> {
    let mut config = ctx.config.clone();
    if let Some(r) = args.noise_rate {
        config.noise_rate = r;
    }
    if let Some(s) = &args.sweep {
        config.noise_sweep = s.clone();
    }
    if let Some(e) = args.epochs {
        config.detection.max_epochs = e;
        config.mutation.max_epochs = e;
    }
    if let Some(n) = args.patients_per_class {
        config.synthetic.patients_per_class = n;
    }
    let run = run_pipeline(&config, ctx.exec)?;
    ctx.write("report.json", &format!("{}\n", run.report.to_json()?))?;
    ctx.write("sweep.csv", &run.report.sweep_csv())?;
    ctx.write("config.json", &format!("{}\n", serde_json::to_string_pretty(&config)?))?;
    save_checkpoint(&run.detection_model, ctx.path("detection.ckpt"))?;
    save_checkpoint(&run.mutation_model, ctx.path("mutation.ckpt"))?;
    ctx.write("detection_history.csv", &run.detection_history.to_csv())?;
    ctx.write("mutation_history.csv", &run.mutation_history.to_csv())?;
    run.flip_mask.save(ctx.path("flip_mask.csv"))?;
    let r = &run.report;
    println!(
        "detection val accuracy {:.6}; mutation test accuracy {:.6} (bag {:.6}); end-to-end patient accuracy {:.6}",
        r.detection.instance.accuracy,
        r.mutation.instance.accuracy,
        r.mutation.bag.accuracy,
        r.end_to_end.patient_subtype.accuracy
    );
    Ok(())
}

fn gradcheck(ctx: &Context, args: &GradcheckArgs) -> Result<()> {
    if args.dims.len() < 2 {
        return Err(Error::config("dims", "need at least an input and an output width"));
    }
    let (input, rest) = args.dims.split_first().unwrap();
    let (output, hidden) = rest.split_last().unwrap();
    let loss = match args.loss {
        LossArg::Ce => LossSpec::plain(),
        LossArg::Smooth => LossSpec::smooth(args.epsilon),
    };
    loss.validate()?;
    let opts = GradCheckOptions {
        samples: args.samples,
        loss,
        exec: ctx.exec,
        ..GradCheckOptions::default()
    };
    let report = grad_check(&mlp(*input, hidden, *output), ctx.seed(), &opts)?;
    let json = serde_json::to_string_pretty(&report)?;
    ctx.write("gradcheck.json", &format!("{json}\n"))?;
    println!(
        "max relative error {:e} over {} parameters ({})",
        report.max_rel_error,
        report.params_checked,
        if report.passed { "pass" } else { "FAIL" }
    );
    if !report.passed {
        return Err(Error::NumericInput(format!(
            "relative error {:e} exceeds {:e}",
            report.max_rel_error, report.tolerance
        )));
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let config = load_config(cli)?;
    config.validate()?;
    fs::create_dir_all(&cli.out)?;
    let ctx = Context {
        config,
        out: cli.out.clone(),
        exec: if cli.sequential {
            Execution::Sequential
        } else {
            Execution::default()
        },
    };
    match &cli.command {
        Command::Gen(a) => gen(&ctx, a),
        Command::Split(a) => split(&ctx, a),
        Command::Corrupt(a) => corrupt(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Pipeline(a) => pipeline(&ctx, a),
        Command::Gradcheck(a) => gradcheck(&ctx, a),
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kind() {
        assert_eq!(exit_code(Error::config("x", "y").kind()), 2);
        assert_eq!(exit_code(Error::EmptyValidation.kind()), 3);
        assert_eq!(exit_code(Error::NumericInput("nan".into()).kind()), 4);
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from(["noisemil", "--seed", "3", "split", "--input", "a.txt", "--fractions", "0.72,0.18,0.1"])
            .unwrap();
        assert_eq!(cli.seed, Some(3));
        match cli.command {
            Command::Split(a) => assert_eq!(a.fractions, vec![0.72, 0.18, 0.1]),
            other => panic!("{other:?}"),
        }
        assert!(cli.out.ends_with("out"));
    }
}
