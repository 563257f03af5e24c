mod manifest;
mod run;

use clap::{Args, Parser, Subcommand, ValueEnum};
use manifest::{DataSpec, Grid, Task};
use modgp::pipeline::ToyCase;
use modgp::{ModelConfig, ModelKind, TrainConfig};
use serde::de::{DeserializeOwned, IntoDeserializer};
use std::path::PathBuf;
use std::process::ExitCode;

/// Parses a lowercase enum name the same way the manifest does.
fn parse_name<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    let de: serde::de::value::StrDeserializer<'_, serde::de::value::Error> = s.into_deserializer();
    T::deserialize(de).map_err(|e| e.to_string())
}

#[derive(Parser)]
#[command(name = "modgp", version, about = "Train and evaluate modulated Gaussian process models")]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = "MODGP_OUT_DIR", default_value = "modgp-out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic data set.
    GenToy {
        #[arg(long, value_parser = parse_name::<ToyCase>)]
        case: ToyCase,
        /// Number of points (defaults to the case's usual size).
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model on a CSV file and save a checkpoint.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Draw predictive samples from a checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// 1-D input grid as `lo,hi,n`.
        #[arg(long, conflicts_with = "data", allow_hyphen_values = true)]
        grid: Option<Grid>,
        /// Predict at the inputs of this CSV file.
        #[arg(long, required_unless_present = "grid")]
        data: Option<PathBuf>,
        #[arg(long)]
        target: Option<String>,
        #[arg(long, default_value_t = ',')]
        delimiter: char,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score a checkpoint on a CSV file by KDE negative log likelihood.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Repeated 90/10 splits: train, predict and score each one.
    Benchmark {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, default_value_t = 10)]
        splits: usize,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        /// Run once per β in the grid 1.0, 0.5, 0.1, 0.01.
        #[arg(long, conflicts_with = "beta")]
        beta_grid: bool,
    },
    /// Re-execute a saved manifest.
    Run {
        #[arg(long)]
        manifest: PathBuf,
    },
}

#[derive(Args)]
struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Target column name (default: last column).
    #[arg(long)]
    target: Option<String>,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
}

impl DataArgs {
    fn spec(self) -> DataSpec {
        DataSpec { path: self.data, target: self.target, delimiter: self.delimiter }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// 50 inducing points and 10000 iterations.
    Toy,
    /// 100 inducing points and 20000 iterations.
    Uci,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_parser = parse_name::<ModelKind>)]
    model: ModelKind,
    #[arg(long, value_enum, default_value_t = Preset::Uci)]
    preset: Preset,
    /// Number of inducing points.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    noise_variance: Option<f64>,
    /// Number of experts (smgp).
    #[arg(long)]
    experts: Option<usize>,
    /// Concrete temperature (smgp).
    #[arg(long)]
    temperature: Option<f64>,
    /// Monte Carlo samples per point (smgp, slgp).
    #[arg(long)]
    mc_samples: Option<usize>,
    /// Prior/posterior balance in [0, 1] (slgp).
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    d_w: Option<usize>,
    #[arg(long)]
    d_h: Option<usize>,
    /// Hidden layer widths, comma separated (slgp).
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// hybrid, iwvi or vi (slgp).
    #[arg(long, value_parser = parse_name::<modgp::slgp::SlgpBound>)]
    bound: Option<modgp::slgp::SlgpBound>,
    /// encoder or prior (slgp).
    #[arg(long, value_parser = parse_name::<modgp::slgp::PredictPath>)]
    predict_path: Option<modgp::slgp::PredictPath>,
    /// Gauss-Hermite nodes (shgp).
    #[arg(long)]
    gh_points: Option<usize>,
    /// Train inducing distributions in the original rather than whitened
    /// coordinates.
    #[arg(long)]
    no_whiten: bool,
}

impl ModelArgs {
    fn config(self) -> ModelConfig {
        let mut c = match self.preset {
            Preset::Toy => ModelConfig::toy(self.model),
            Preset::Uci => ModelConfig::new(self.model),
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag { c.$field = v; })*
            };
        }
        set!(m => num_inducing, noise_variance => noise_variance, experts => experts, temperature => temperature,
             mc_samples => mc_samples, beta => beta, d_w => d_w, hidden => hidden, bound => bound,
             predict_path => predict_path, gh_points => gh_points);
        c.d_h = self.d_h.or(c.d_h);
        c.whiten = !self.no_whiten;
        c
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    lr: Option<f64>,
    /// Minibatch size.
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl TrainArgs {
    fn config(self, preset: Preset) -> TrainConfig {
        let base = match preset {
            Preset::Toy => TrainConfig::toy(),
            Preset::Uci => TrainConfig::default(),
        };
        TrainConfig {
            lr: self.lr.unwrap_or(base.lr),
            batch_size: self.batch.unwrap_or(base.batch_size),
            iterations: self.iters.unwrap_or(base.iterations),
            seed: self.seed,
        }
    }
}

const BETA_GRID: [f64; 4] = [1.0, 0.5, 0.1, 0.01];

fn task(command: Command) -> modgp::Result<Task> {
    let mut t = match command {
        Command::GenToy { case, n, seed } => Task::GenToy { case, n: n.unwrap_or(case.default_size()), seed },
        Command::Train { data, model, train } => {
            let preset = model.preset;
            Task::Train { data: data.spec(), model: model.config(), train: train.config(preset) }
        }
        Command::Predict { checkpoint, grid, data, target, delimiter, samples, seed } => Task::Predict {
            checkpoint,
            samples,
            seed,
            grid,
            data: data.map(|path| DataSpec { path, target, delimiter }),
        },
        Command::Evaluate { checkpoint, data, samples, seed } => Task::Evaluate { checkpoint, samples, seed, data: data.spec() },
        Command::Benchmark { data, model, train, splits, threads, samples, beta_grid } => {
            let preset = model.preset;
            Task::Benchmark {
                splits,
                threads,
                samples,
                betas: if beta_grid { BETA_GRID.to_vec() } else { Vec::new() },
                data: data.spec(),
                model: model.config(),
                train: train.config(preset),
            }
        }
        Command::Run { manifest } => return Task::load(&manifest),
    };
    t.canonicalize_paths()?;
    Ok(t)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match task(cli.command).and_then(|t| run::execute(&t, &cli.out)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(run::exit_code(&e))
        }
    }
}
