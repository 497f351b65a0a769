//! `kpboost`: cross-validation grids, training, prediction, disjunct profiling and selection.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kpboost_core::disjuncts::{DisjunctOptions, NeighborScope, Traversal};
use kpboost_core::eval::{Algorithm, Decomposition};

#[derive(Parser)]
#[command(
    name = "kpboost",
    version,
    about = "Kernel-perturbation boosted SVMs for imbalanced data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cross-validate every cell of a hyperparameter grid and write a JSONL report.
    Cv(CvArgs),
    /// Fit one configuration on a whole dataset and save the model.
    Train(TrainArgs),
    /// Predict with a saved model.
    Predict(PredictArgs),
    /// Kappa-delta curve, knee and disjunct partition of a dataset.
    Disjuncts(DisjunctArgs),
    /// Pick the best cell per algorithm from cv reports.
    Select(SelectArgs),
}

#[derive(Args)]
struct DataArgs {
    /// CSV file, one row per point.
    #[arg(long)]
    data: PathBuf,
    /// 0-based label column; defaults to the last column.
    #[arg(long)]
    label_column: Option<usize>,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_enum, value_delimiter = ',', default_value = "kpboost")]
    algo: Vec<AlgoArg>,
    #[arg(long, value_enum, default_value = "auto")]
    decomp: DecompArg,
    /// Kernel widths; defaults to the built-in grid.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    sigma: Vec<f64>,
    /// Misclassification costs; defaults to the built-in grid.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    cost: Vec<f64>,
    /// Perturbation step sizes; defaults to the built-in grid.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    step: Vec<f64>,
    /// ROI radius factors; defaults to the built-in grid.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    theta: Vec<f64>,
    #[arg(long, default_value_t = kpboost_core::boost::DEFAULT_ROUNDS)]
    rounds: usize,
}

#[derive(Args)]
struct GraphArgs {
    #[arg(long, value_enum, default_value = "global")]
    neighbors: NeighborArg,
    #[arg(long, value_enum, default_value = "directed")]
    traversal: TraversalArg,
    /// Fixed neighbourhood size instead of the knee.
    #[arg(long)]
    kappa: Option<usize>,
}

#[derive(Args)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long)]
    seed: u64,
    /// Report path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip GSDI (and the disjunct analysis it needs).
    #[arg(long)]
    no_gsdi: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Where the model is written.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// CSV with the training layout; the label column may be absent.
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    label_column: Option<usize>,
    /// Predicted labels, one per line; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DisjunctArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    graph: GraphArgs,
    /// Output prefix for `<out>.curve.txt` and `<out>.partition.txt`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelectArgs {
    /// One or more cv reports.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    Svm,
    Kpboost,
    Kproi,
}

#[derive(Clone, Copy, ValueEnum)]
enum DecompArg {
    Auto,
    Ovo,
    Ova,
}

#[derive(Clone, Copy, ValueEnum)]
enum NeighborArg {
    Global,
    Within,
}

#[derive(Clone, Copy, ValueEnum)]
enum TraversalArg {
    Directed,
    Symmetric,
}

impl From<AlgoArg> for Algorithm {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::Svm => Algorithm::Svm,
            AlgoArg::Kpboost => Algorithm::KpBoost,
            AlgoArg::Kproi => Algorithm::KpRoi,
        }
    }
}

impl From<DecompArg> for Decomposition {
    fn from(d: DecompArg) -> Self {
        match d {
            DecompArg::Auto => Decomposition::Auto,
            DecompArg::Ovo => Decomposition::Ovo,
            DecompArg::Ova => Decomposition::Ova,
        }
    }
}

impl GraphArgs {
    fn options(&self) -> DisjunctOptions {
        DisjunctOptions {
            scope: match self.neighbors {
                NeighborArg::Global => NeighborScope::GlobalFiltered,
                NeighborArg::Within => NeighborScope::WithinClass,
            },
            traversal: match self.traversal {
                TraversalArg::Directed => Traversal::Directed,
                TraversalArg::Symmetric => Traversal::Symmetric,
            },
        }
    }
}

impl ModelArgs {
    fn grid(&self) -> commands::Grid {
        commands::Grid::with_defaults(
            self.algo.iter().map(|&a| a.into()).collect(),
            self.decomp.into(),
            &self.sigma,
            &self.cost,
            &self.step,
            &self.theta,
            self.rounds,
        )
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Cv(a) => commands::cv(&commands::CvConfig {
            data: a.data.data,
            label_column: a.data.label_column,
            grid: a.model.grid(),
            disjuncts: (!a.no_gsdi).then(|| (a.graph.options(), a.graph.kappa)),
            folds: a.folds,
            seed: a.seed,
            out: a.out,
        }),
        Command::Train(a) => {
            commands::train(&a.data.data, a.data.label_column, &a.model.grid(), &a.out)
        }
        Command::Predict(a) => {
            commands::predict(&a.model, &a.test, a.label_column, a.out.as_deref())
        }
        Command::Disjuncts(a) => commands::disjuncts(
            &a.data.data,
            a.data.label_column,
            a.graph.options(),
            a.graph.kappa,
            a.out.as_deref(),
        ),
        Command::Select(a) => commands::select(&a.reports, a.out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut message = e.to_string();
            for cause in e.chain().skip(1) {
                let text = cause.to_string();
                if !message.contains(&text) {
                    message = format!("{message}: {text}");
                }
            }
            eprintln!("error: {message}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
