use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bladecp::config::ExperimentConfig;
use bladecp::models::{ArchKind, BankArch};
use bladecp::pipeline::{self, LayerChoice};
use bladecp::{DatasetBank, Side, Split, Station};
use clap::{Args, Parser, Subcommand};

/// Trains per-station surface pressure classifiers on a generated blade library.
#[derive(Debug, Parser)]
#[command(name = "bladecp", version)]
struct Cli {
    /// Experiment config (JSON); omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for blade solves and station trainings.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the blade library, solve the flows and write the dataset.
    Gen(GenArgs),
    /// Train one classifier bank per architecture.
    Train(TrainArgs),
    /// Score banks on a split: table2.csv, figure9.csv, baseline.csv.
    Eval(EvalArgs),
    /// Per-station predicted vs. solved labels for one test blade.
    Report(ReportArgs),
    /// Dump convolution feature maps and kernels as PGM images.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Number of blades drawn from the sweep ranges.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    library_seed: Option<u64>,
    #[arg(long)]
    split_seed: Option<u64>,
}

#[derive(Debug, Args)]
struct DatasetArg {
    /// Dataset file written by `gen`.
    #[arg(long)]
    dataset: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DatasetArg,
    /// Architectures to train; defaults to every one in the config.
    #[arg(long = "arch")]
    archs: Vec<ArchKind>,
    /// Kernels per convolution layer for the selected architectures.
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DatasetArg,
    /// Bank directories written by `train`.
    #[arg(long = "bank", required = true)]
    banks: Vec<PathBuf>,
    #[arg(long, default_value = "test")]
    split: Split,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[command(flatten)]
    data: DatasetArg,
    #[arg(long)]
    bank: PathBuf,
    /// Blade id; must belong to the test split.
    #[arg(long)]
    blade: u32,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[command(flatten)]
    data: DatasetArg,
    #[arg(long)]
    bank: PathBuf,
    #[arg(long)]
    blade: u32,
    /// Convolution layer: zero-based index, `first` or `last`.
    #[arg(long, default_value = "last")]
    layer: LayerChoice,
    /// Restrict to one station, e.g. `suction_0.40`.
    #[arg(long)]
    station: Option<String>,
    /// Threshold for activated cells, relative to the largest activation.
    #[arg(long)]
    activation_fraction: Option<f64>,
}

enum Failure {
    Usage(String),
    Runtime(bladecp::Error),
}

impl From<bladecp::Error> for Failure {
    fn from(e: bladecp::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn parse_station(s: &str) -> Result<Station, Failure> {
    let bad = || Failure::Usage(format!("station {s:?} is not of the form side_cx"));
    let (side, cx) = s.split_once('_').ok_or_else(bad)?;
    let side = match side {
        "pressure" => Side::Pressure,
        "suction" => Side::Suction,
        _ => return Err(bad()),
    };
    Ok(Station::new(side, cx.parse().map_err(|_| bad())?))
}

fn load_dataset(path: &Path) -> Result<DatasetBank, Failure> {
    if !path.is_file() {
        return Err(Failure::Usage(format!(
            "dataset {} does not exist",
            path.display()
        )));
    }
    Ok(DatasetBank::load(path)?)
}

fn require_dir(path: &Path) -> Result<(), Failure> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Failure::Usage(format!(
            "bank directory {} does not exist",
            path.display()
        )))
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = match &cli.config {
        Some(p) if !p.is_file() => {
            return Err(Failure::Usage(format!(
                "config {} does not exist",
                p.display()
            )))
        }
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Failure::Usage("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let out = cfg.out.clone();
    match cli.command {
        Command::Gen(a) => {
            if let Some(n) = a.count {
                cfg.sweep.count = Some(n);
            }
            if let Some(s) = a.library_seed {
                cfg.library_seed = s;
            }
            if let Some(s) = a.split_seed {
                cfg.split_seed = s;
            }
            cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            let bank = pipeline::run_gen(&cfg, &out)?;
            println!(
                "{} blades ({} skipped), {} stations -> {}",
                bank.records.len(),
                bank.manifest.skipped.len(),
                bank.stations.len(),
                out.join(pipeline::DATASET_FILE).display()
            );
        }
        Command::Train(a) => {
            if let Some(e) = a.epochs {
                cfg.train.max_epochs = e;
            }
            if let Some(s) = a.seed {
                cfg.train_seed = s;
            }
            let mut archs: Vec<BankArch> = if a.archs.is_empty() {
                cfg.architectures.clone()
            } else {
                a.archs
                    .iter()
                    .map(|&k| {
                        cfg.architecture(k).copied().unwrap_or(BankArch {
                            kind: k,
                            conv_depth: 16,
                            fc_hidden: 256,
                            keep_prob: 0.5,
                        })
                    })
                    .collect()
            };
            if let Some(d) = a.depth {
                archs.iter_mut().for_each(|x| x.conv_depth = d);
            }
            cfg.architectures = archs.clone();
            cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            let data = load_dataset(&a.data.dataset)?;
            for dir in pipeline::run_train(&cfg, &data, &archs, &out)? {
                println!("{}", dir.display());
            }
        }
        Command::Eval(a) => {
            for b in &a.banks {
                require_dir(b)?;
            }
            let data = load_dataset(&a.data.dataset)?;
            for (bank, r) in pipeline::run_eval(&cfg, &data, &a.banks, a.split, &out)? {
                println!(
                    "{:<10} within 1%: {:.4}  within 3%: {:.4}",
                    pipeline::bank_name(&BankArch {
                        kind: bank.manifest.arch,
                        conv_depth: bank.manifest.conv_depth,
                        fc_hidden: bank.manifest.fc_hidden,
                        keep_prob: bank.manifest.keep_prob,
                    }),
                    r.within_1pct,
                    r.within_3pct
                );
            }
        }
        Command::Report(a) => {
            require_dir(&a.bank)?;
            let data = load_dataset(&a.data.dataset)?;
            let path = pipeline::run_report(&cfg, &data, &a.bank, a.blade, &out)?;
            println!("{}", path.display());
        }
        Command::Inspect(a) => {
            require_dir(&a.bank)?;
            if let Some(f) = a.activation_fraction {
                cfg.activation_fraction = f;
            }
            cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            let station = a.station.as_deref().map(parse_station).transpose()?;
            let data = load_dataset(&a.data.dataset)?;
            let summaries =
                pipeline::run_inspect(&cfg, &data, &a.bank, a.blade, a.layer, station, &out)?;
            for s in summaries {
                println!(
                    "{} conv{}: {} maps, {} activated cells -> {}",
                    s.station,
                    s.conv_index,
                    s.maps,
                    s.activated,
                    s.dir.display()
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
