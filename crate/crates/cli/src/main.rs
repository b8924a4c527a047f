use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use krsml::data::{load_csv, load_features_csv, load_series, window_series, window_split, write_csv, SeriesSpec, TargetColumn};
use krsml::engine::{DEFAULT_K_NEIGHBORS, DEFAULT_SIGMA};
use krsml::eval::{
    bench, evaluate, grid_search, load_model, render_bench_json, render_bench_table, save_model,
    BenchConfig, GridSpec,
};
use krsml::learners::{train, PipelineOptions, DEFAULT_VARIANCE_THRESHOLD};
use krsml::{Dataset, Error, KernelConfig, Learner, TrainConfig};

/// Kernel regression with learned sparse Mahalanobis metrics.
#[derive(Parser)]
#[command(name = "krsml", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one learner on a CSV file and save the model.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "y")]
        target: String,
        #[arg(long, default_value = "KR_SML", value_parser = parse_learner)]
        learner: Learner,
        #[command(flatten)]
        hyper: Hyper,
        /// Where to write the model file.
        #[arg(long)]
        model: PathBuf,
        /// Optional JSON dump of the training trace.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict every row of a CSV file with a saved model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Column to drop before predicting, if the file has one.
        #[arg(long)]
        target: Option<String>,
        /// CSV output (`index,y_hat`); stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a saved model on a labelled CSV file.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "y")]
        target: String,
        /// JSON report path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-point CSV dump (`index,y,y_hat`).
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Compare KR, MLKR, KR_PCA and KR_SML on shared train/test splits.
    Bench {
        /// Training file; repeat together with --test for several splits.
        #[arg(long = "train", required = true)]
        train: Vec<PathBuf>,
        #[arg(long = "test", required = true)]
        test: Vec<PathBuf>,
        #[arg(long, default_value = "y")]
        target: String,
        #[command(flatten)]
        hyper: Hyper,
        /// Step size for MLKR (defaults to --alpha).
        #[arg(long)]
        mlkr_alpha: Option<f64>,
        /// Tune KR_SML and MLKR by cross-validation on each training split.
        #[arg(long)]
        tune: bool,
        #[command(flatten)]
        grid: Grid,
        /// Output directory for report.json, report.txt and prediction dumps.
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn a univariate series into sliding-window regression examples.
    Window {
        #[arg(long)]
        series: PathBuf,
        #[arg(long, default_value_t = 45)]
        lag: usize,
        #[arg(long, default_value_t = 1)]
        horizon: usize,
        /// Entries at the start of the series whose examples form the
        /// training file; the rest go to the test file.
        #[arg(long)]
        train_count: Option<usize>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validated grid search over step size and regularization weight.
    Tune {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "y")]
        target: String,
        #[arg(long, default_value = "KR_SML", value_parser = parse_learner)]
        learner: Learner,
        #[command(flatten)]
        hyper: Hyper,
        #[command(flatten)]
        grid: Grid,
        /// CSV of the full score table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Hyper {
    /// Neighbors per prediction.
    #[arg(long, default_value_t = DEFAULT_K_NEIGHBORS)]
    k: usize,
    /// Gaussian kernel bandwidth.
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    sigma: f64,
    #[arg(long, default_value_t = 1e-3)]
    alpha: f64,
    /// Trace regularization weight (KR_SML).
    #[arg(long, default_value_t = 0.0)]
    mu: f64,
    /// Stop once the objective changes by at most this much.
    #[arg(long, default_value_t = 1e-4)]
    theta: f64,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    /// Fraction of variance KR_PCA keeps.
    #[arg(long, default_value_t = DEFAULT_VARIANCE_THRESHOLD)]
    variance_threshold: f64,
    /// Use features as given instead of z-scoring them.
    #[arg(long)]
    no_standardize: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct Grid {
    #[arg(long, value_delimiter = ',', default_values_t = [1e-3, 1e-2])]
    alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.1, 1.0])]
    mus: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    folds: usize,
}

fn parse_learner(s: &str) -> Result<Learner, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type CmdResult = Result<(), Failure>;

impl Hyper {
    fn config(&self) -> Result<(TrainConfig, PipelineOptions), Failure> {
        let cfg = TrainConfig {
            alpha: self.alpha,
            mu: self.mu,
            theta: self.theta,
            max_iters: self.max_iters,
            kernel: KernelConfig {
                k_neighbors: self.k,
                sigma: self.sigma,
            },
            seed: self.seed,
        };
        cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        if !(self.variance_threshold > 0.0 && self.variance_threshold <= 1.0) {
            return Err(Failure::Usage(format!(
                "--variance-threshold must be in (0, 1], got {}",
                self.variance_threshold
            )));
        }
        let opts = PipelineOptions {
            standardize: !self.no_standardize,
            variance_threshold: self.variance_threshold,
        };
        Ok((cfg, opts))
    }
}

impl Grid {
    fn spec(&self, seed: u64) -> GridSpec {
        GridSpec {
            alphas: self.alphas.clone(),
            mus: self.mus.clone(),
            folds: self.folds,
            seed,
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Error> {
    std::fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn run(command: Command) -> CmdResult {
    match command {
        Command::Train {
            data,
            target,
            learner,
            hyper,
            model,
            out,
        } => {
            let (cfg, opts) = hyper.config()?;
            let ds = load_csv(&data, &TargetColumn::parse(&target))?;
            let (trained, trace) = train(&ds, learner, &cfg, &opts)?;
            save_model(&trained, &model)?;
            if let Some(out) = out {
                write_file(&out, &to_json(&trace))?;
            }
            let mut line = format!(
                "trained {learner} on {} examples: dim {}, rank {}",
                ds.len(),
                trained.metric().dim(),
                trained.rank()
            );
            if let Some(t) = &trace {
                let _ = write!(
                    line,
                    ", {} iterations, final objective {}",
                    t.iterations(),
                    t.final_loss().unwrap_or(f64::NAN)
                );
            }
            println!("{line}");
        }
        Command::Predict {
            model,
            data,
            target,
            out,
        } => {
            let m = load_model(&model)?;
            let ds: Dataset = match target {
                Some(t) => load_csv(&data, &TargetColumn::parse(&t))?,
                None => load_features_csv(&data)?,
            };
            let preds = m.predict(&ds)?;
            let mut csv = String::from("index,y_hat\n");
            for (i, p) in preds.iter().enumerate() {
                let _ = writeln!(csv, "{i},{p}");
            }
            match out {
                Some(path) => write_file(&path, &csv)?,
                None => print!("{csv}"),
            }
        }
        Command::Eval {
            model,
            data,
            target,
            out,
            dump,
        } => {
            let m = load_model(&model)?;
            let ds = load_csv(&data, &TargetColumn::parse(&target))?;
            let report = evaluate(&m, &ds)?;
            if let Some(path) = out {
                write_file(&path, &to_json(&report))?;
            }
            if let Some(path) = dump {
                write_file(&path, &report.prediction_dump())?;
            }
            let mare = report.mare.map_or_else(|| "-".into(), |v| format!("{v:.6}"));
            println!(
                "{} n={} RMSE {:.6} MARE {mare} L {:.6} rank {}",
                report.learner, report.n_test, report.rmse, report.accumulated_error, report.metric_rank
            );
        }
        Command::Bench {
            train: train_paths,
            test: test_paths,
            target,
            hyper,
            mlkr_alpha,
            tune,
            grid,
            out,
        } => {
            if train_paths.len() != test_paths.len() {
                return Err(Failure::Usage(format!(
                    "{} --train files but {} --test files",
                    train_paths.len(),
                    test_paths.len()
                )));
            }
            let (sml, pipeline) = hyper.config()?;
            let mlkr = TrainConfig {
                alpha: mlkr_alpha.unwrap_or(sml.alpha),
                mu: 0.0,
                ..sml
            };
            mlkr.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            let target = TargetColumn::parse(&target);
            let splits = train_paths
                .iter()
                .zip(&test_paths)
                .map(|(tr, te)| Ok((load_csv(tr, &target)?, load_csv(te, &target)?)))
                .collect::<Result<Vec<_>, Error>>()?;
            let cfg = BenchConfig {
                sml,
                mlkr,
                pipeline,
                tuning: tune.then(|| grid.spec(hyper.seed)),
            };
            let report = bench(&splits, &cfg)?;
            create_dir(&out)?;
            let table = render_bench_table(&report);
            write_file(&out.join("report.json"), &render_bench_json(&report))?;
            write_file(&out.join("report.txt"), &table)?;
            for (i, split) in report.splits.iter().enumerate() {
                for row in &split.rows {
                    if let Some(r) = &row.report {
                        let name = format!("predictions_{}_{i}.csv", row.learner.tag());
                        write_file(&out.join(name), &r.prediction_dump())?;
                    }
                }
            }
            print!("{table}");
        }
        Command::Window {
            series,
            lag,
            horizon,
            train_count,
            out,
        } => {
            let values = load_series(&series)?;
            let spec = SeriesSpec {
                lag_window: lag,
                horizon,
                train_count,
            };
            create_dir(&out)?;
            let all = window_series(&values, &spec)?;
            write_csv(&all, out.join("windows.csv"), "y")?;
            let mut line = format!("{} examples of dimension {lag}", all.len());
            if train_count.is_some() {
                let (tr, te) = window_split(&values, &spec)?;
                write_csv(&tr, out.join("train.csv"), "y")?;
                write_csv(&te, out.join("test.csv"), "y")?;
                let _ = write!(line, " ({} train, {} test)", tr.len(), te.len());
            }
            println!("{line}");
        }
        Command::Tune {
            data,
            target,
            learner,
            hyper,
            grid,
            out,
        } => {
            let (cfg, opts) = hyper.config()?;
            let ds = load_csv(&data, &TargetColumn::parse(&target))?;
            let result = grid_search(&ds, &grid.spec(hyper.seed), &cfg, learner, &opts)?;
            if let Some(path) = out {
                write_file(&path, &result.to_csv())?;
            }
            let score = result.table[result.best_index].mean_rmse.unwrap_or(f64::NAN);
            println!(
                "best alpha {} mu {} (cross-validated RMSE {score:.6})",
                result.best.alpha, result.best.mu
            );
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
