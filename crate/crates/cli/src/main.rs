use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fednl::dataset::{load_dataset, synth_gaussian, write_dataset, CsvSchema, SynthParams};
use fednl::estimator::{estimate_noise, EstimatorOptions};
use fednl::harness::{self, report, store, ExperimentConfig};
use fednl::noise::{asymmetric_matrix, inject_noise, symmetric_matrix, FlipPair, TransitionMatrix};
use fednl::trainer::{LrSchedule, TrainerConfig};
use fednl::Error;

// Stdout output that exits quietly when the reader goes away (`| head`).
macro_rules! print {
    ($($t:tt)*) => { emit(&format!($($t)*)) };
}

macro_rules! println {
    () => { emit("\n") };
    ($($t:tt)*) => { emit(&(format!($($t)*) + "\n")) };
}

fn emit(text: &str) {
    use std::io::Write;
    if let Err(e) = std::io::stdout().write_all(text.as_bytes()) {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        std::process::exit(3);
    }
}

#[derive(Parser)]
#[command(name = "fednl", version, about = "Federated learning with noisy labels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Gaussian-blob dataset
    Synth(SynthArgs),
    /// Corrupt the labels of a dataset file
    Inject(InjectArgs),
    /// Estimate class-wise noise ratios of a dataset file
    Estimate(EstimateArgs),
    /// Run an experiment from a config file
    Run(RunArgs),
    /// Estimate communication rounds over a grid
    Rounds(RoundsArgs),
    /// Render tables for one or more run directories
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    classes: usize,
    #[arg(long)]
    per_class: usize,
    #[arg(long)]
    dim: usize,
    #[arg(long, default_value_t = 8.0)]
    sep: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    /// Overwrite an existing output file
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct InjectArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Symmetric noise ratio
    #[arg(long, conflicts_with_all = ["pair", "matrix"])]
    symmetric: Option<f64>,
    /// Asymmetric flip `SRC:DST:MASS`; repeatable
    #[arg(long, value_parser = parse_pair)]
    pair: Vec<FlipPair>,
    /// Transition matrix file
    #[arg(long, conflicts_with = "pair")]
    matrix: Option<PathBuf>,
    /// Mass moved to the out-of-space label
    #[arg(long, default_value_t = 0.0)]
    out_of_space: f64,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainerArgs {
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 0.01)]
    l2: f64,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    trainer: TrainerArgs,
    /// Re-split the folds for every class
    #[arg(long)]
    resplit: bool,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Replaces the seed in the config
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory; overrides `output_dir`
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct RoundsArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for `rounds.table`; defaults to the config's run directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories; two or more also produce a comparison
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Directory for `report.txt` and the column files
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_pair(s: &str) -> Result<FlipPair, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [src, dst, mass] = parts.as_slice() else {
        return Err(format!("expected SRC:DST:MASS, got {s:?}"));
    };
    Ok(FlipPair {
        src: src.parse().map_err(|e| format!("bad source class: {e}"))?,
        dst: dst.parse().map_err(|e| format!("bad destination class: {e}"))?,
        mass: mass.parse().map_err(|e| format!("bad mass: {e}"))?,
    })
}

fn check_writable(path: &Path, force: bool) -> fednl::Result<()> {
    if path.exists() && !force {
        return Err(Error::Exists(path.to_path_buf()));
    }
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> fednl::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn schema(delimiter: char) -> CsvSchema {
    CsvSchema {
        delimiter: delimiter as u8,
        ..CsvSchema::default()
    }
}

fn synth(args: SynthArgs) -> fednl::Result<()> {
    check_writable(&args.out, args.force)?;
    let d = synth_gaussian(&SynthParams {
        classes: args.classes,
        per_class: args.per_class,
        dim: args.dim,
        separation: args.sep,
        seed: args.seed,
    })?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    write_dataset(&args.out, &d, args.delimiter as u8)?;
    println!("wrote {} rows to {}", d.len(), args.out.display());
    Ok(())
}

fn inject(args: InjectArgs) -> fednl::Result<()> {
    check_writable(&args.out, args.force)?;
    let d = load_dataset(&args.input, &schema(args.delimiter))?;
    let c = d.class_count();
    let matrix = match (&args.symmetric, args.pair.is_empty(), &args.matrix) {
        (Some(beta), _, _) => symmetric_matrix(c, *beta)?,
        (None, false, _) => asymmetric_matrix(c, &args.pair)?,
        (None, true, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            TransitionMatrix::from_text(&text)?
        }
        (None, true, None) => {
            return Err(Error::Validation(vec![
                "one of --symmetric, --pair or --matrix is required".into(),
            ]))
        }
    };
    let matrix = if args.out_of_space > 0.0 {
        matrix.with_out_of_space(args.out_of_space)?
    } else {
        matrix
    };
    let (noisy, rep) = inject_noise(&d, &matrix, args.seed)?;
    write_dataset(&args.out, &noisy, args.delimiter as u8)?;
    println!("{:>6} {:>8} {:>8} {:>8}", "class", "size", "flipped", "ratio");
    for k in 0..rep.class_count.len() {
        println!(
            "{:>6} {:>8} {:>8} {:>8.4}",
            k, rep.class_count[k], rep.injected_count[k], rep.realized_ratio[k]
        );
    }
    println!("overall {:.4}; wrote {}", rep.overall_ratio(), args.out.display());
    Ok(())
}

fn estimate(args: EstimateArgs) -> fednl::Result<()> {
    let d = load_dataset(&args.input, &schema(args.delimiter))?;
    let trainer = TrainerConfig {
        local_epochs: args.trainer.epochs,
        batch_size: args.trainer.batch_size,
        lr: LrSchedule::Constant { eta: args.trainer.lr },
        l2_lambda: args.trainer.l2,
        seed: 0,
    };
    let options = EstimatorOptions {
        resplit_per_class: args.resplit,
    };
    let est = estimate_noise(&d, &trainer, args.seed, options)?;
    println!("{:>6} {:>8} {:>10} {:>8} {:>8}", "class", "size", "noise_free", "removed", "beta");
    for c in &est.classes {
        println!(
            "{:>6} {:>8} {:>10} {:>8} {:>8.4}{}",
            c.class,
            c.size,
            c.noise_free.len(),
            c.removed.len(),
            c.beta,
            if c.empty { "  (empty)" } else { "" }
        );
    }
    println!(
        "mean ratio {:.4}; min ratio {:.4} at class {}",
        est.mean_ratio, est.min_ratio, est.min_class
    );
    if d.has_true_labels() {
        let flipped: HashSet<u64> = d
            .instances()
            .iter()
            .filter(|i| i.observed.class() != i.true_label())
            .map(|i| i.id)
            .collect();
        let removed: HashSet<u64> = est.removed_ids().into_iter().collect();
        let hits = removed.intersection(&flipped).count() as f64;
        let ratio = |a: f64, b: usize| if b == 0 { 1.0 } else { a / b as f64 };
        println!(
            "against true labels: precision {:.4}, recall {:.4}",
            ratio(hits, removed.len()),
            ratio(hits, flipped.len())
        );
    }
    Ok(())
}

fn load_config(path: &Path, seed: Option<u64>) -> fednl::Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(config)
}

fn run(args: RunArgs) -> fednl::Result<()> {
    let config = load_config(&args.config, args.seed)?;
    let dir = harness::resolve_output_dir(&config, args.out.as_deref());
    let occupied = dir.read_dir().map(|mut d| d.next().is_some()).unwrap_or(false);
    if occupied && !args.force {
        return Err(Error::Exists(dir));
    }
    let exp = harness::run_experiment(&config)?;
    store::write_run(&dir, &exp, args.force)?;
    let loaded = store::load_run(&dir)?;
    print!("{}", report::render_run(&loaded));
    println!("\nrun directory: {}", dir.display());
    Ok(())
}

fn rounds(args: RoundsArgs) -> fednl::Result<()> {
    let config = load_config(&args.config, args.seed)?;
    let table = harness::sweep_rounds(&config)?;
    let text = report::render_rounds(&table);
    print!("{text}");
    let dir = args
        .out
        .unwrap_or_else(|| harness::resolve_output_dir(&config, None));
    write_file(&dir.join("rounds.table"), &text)?;
    println!("\nwrote {}", dir.join("rounds.table").display());
    Ok(())
}

fn report_cmd(args: ReportArgs) -> fednl::Result<()> {
    let runs = args
        .runs
        .iter()
        .map(|d| store::load_run(d))
        .collect::<fednl::Result<Vec<_>>>()?;
    let mut text = String::new();
    for run in &runs {
        text.push_str(&report::render_run(run));
        text.push('\n');
    }
    if runs.len() > 1 {
        text.push_str("comparison\n");
        text.push_str(&report::render_comparison(&runs));
    }
    print!("{text}");
    if let Some(out) = args.out {
        write_file(&out.join("report.txt"), &text)?;
        for f in report::series_files(&runs) {
            write_file(&out.join(&f.name), &f.contents)?;
        }
        println!("\nwrote report to {}", out.display());
    }
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Validation(_) | Error::Exists(_) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Inject(a) => inject(a),
        Command::Estimate(a) => estimate(a),
        Command::Run(a) => run(a),
        Command::Rounds(a) => rounds(a),
        Command::Report(a) => report_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
