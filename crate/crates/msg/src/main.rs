//! Command-line surface: training runs, gradient audits, energy reports,
//! trajectory dumps, and the chart-solver convergence study.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use msg::backprop::{backward, forward_frozen_spikes, BackwardOptions};
use msg::chartsolver::dynamic_chart_solve;
use msg::energy::{snn_energy, EncodingCountMode};
use msg::geometry::{distance, origin, proj_tangent, random_tangent, ManifoldPoint, ManifoldSpec};
use msg::graph::{sample_non_edges, sbm_two_block, GraphDataset, WeightMatrix};
use msg::io;
use msg::model::{forward, init_weights, ModelConfig};
use msg::spiking::{NeuronConfig, ResetMode};
use msg::tasks::{nc_loss_and_grad, ClassifierHead, Task, TrainConfig, TrainOutcome};
use msg::{MsgError, Result};

#[derive(Parser)]
#[command(
    name = "msg",
    about = "Spiking graph networks with manifold-valued states",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ResetArg {
    Fixed,
    Subtract,
}

#[derive(Clone, Copy, ValueEnum)]
enum EncodingModeArg {
    Count,
    Fraction,
}

impl From<EncodingModeArg> for EncodingCountMode {
    fn from(m: EncodingModeArg) -> Self {
        match m {
            EncodingModeArg::Count => EncodingCountMode::Count,
            EncodingModeArg::Fraction => EncodingCountMode::Fraction,
        }
    }
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Manifold spec, e.g. lorentz:8, sphere:32, product:lorentz:16+sphere:16
    #[arg(long, default_value = "lorentz:8")]
    manifold: String,
    /// Number of spiking layers after the encoding layer
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 5)]
    time_steps: usize,
    /// Geodesic step size per layer
    #[arg(long, default_value_t = 0.1)]
    step_size: f64,
    #[arg(long, default_value_t = 1.0)]
    v_th: f64,
    #[arg(long, default_value_t = 0.0)]
    v_rest: f64,
    /// Membrane decay per step; 1.0 is pure integrate-and-fire
    #[arg(long, default_value_t = 1.0)]
    leak: f64,
    #[arg(long, value_enum, default_value_t = ResetArg::Fixed)]
    reset: ResetArg,
}

impl ModelArgs {
    fn to_config(&self) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            spec: ManifoldSpec::parse(&self.manifold)?,
            num_layers: self.layers,
            time_steps: self.time_steps,
            step_size: self.step_size,
            neuron: NeuronConfig {
                v_threshold: self.v_th,
                v_reset: self.v_rest,
                v_rest: self.v_rest,
                leak: self.leak,
                reset_mode: match self.reset {
                    ResetArg::Fixed => ResetMode::FixedReset,
                    ResetArg::Subtract => ResetMode::SubtractionReset,
                },
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Edge-list file: two whitespace-separated 0-based node ids per line
    #[arg(long)]
    edges: Option<PathBuf>,
    /// Headerless CSV of node features, one row per node
    #[arg(long)]
    features: Option<PathBuf>,
    /// Headerless CSV of integer class labels, one per node
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Without --edges, a seeded two-block stochastic block model is used
    #[arg(long, default_value_t = 100)]
    sbm_nodes: usize,
    #[arg(long, default_value_t = 0.3)]
    sbm_p_in: f64,
    #[arg(long, default_value_t = 0.02)]
    sbm_p_out: f64,
    #[arg(long, default_value_t = 8)]
    sbm_feat_dim: usize,
    #[arg(long, default_value_t = 0.75)]
    sbm_mean_shift: f64,
}

impl DataArgs {
    fn load(&self, seed: u64) -> Result<GraphDataset> {
        match (&self.edges, &self.features) {
            (Some(edges), Some(features)) => {
                io::load_dataset(edges, features, self.labels.as_deref())
            }
            (Some(_), None) | (None, Some(_)) => Err(MsgError::Config(
                "--edges and --features must be given together".into(),
            )),
            (None, None) => {
                let mut rng = rng_stream(seed, 3);
                let (edges, features, labels) = sbm_two_block(
                    self.sbm_nodes,
                    self.sbm_p_in,
                    self.sbm_p_out,
                    self.sbm_feat_dim,
                    self.sbm_mean_shift,
                    &mut rng,
                );
                GraphDataset::new(self.sbm_nodes, edges, features, Some(labels))
            }
        }
    }
}

#[derive(Args, Clone)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for history.csv, weights.msg1, energy.json
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also write grads.csv with per-epoch, per-layer gradient norms
    #[arg(long)]
    grad_audit: bool,
    #[arg(long, value_enum, default_value_t = EncodingModeArg::Count)]
    encoding_count_mode: EncodingModeArg,
}

#[derive(Subcommand)]
enum Command {
    /// Train a node classifier
    TrainNc(TrainArgs),
    /// Train a link predictor
    TrainLp(TrainArgs),
    /// Audit the closed-form backward pass against finite differences
    Gradcheck {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 10)]
        nodes: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Maximum tolerated relative error
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
    },
    /// Print the spike-count energy model for one forward pass as JSON
    EnergyReport {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = EncodingModeArg::Count)]
        encoding_count_mode: EncodingModeArg,
        /// Also write the report to this file
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump per-layer manifold coordinates of every node to CSV
    Trajectory {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "trajectory.csv")]
        out: PathBuf,
    },
    /// Run the chart-solver convergence study and print the error slope
    ChartConverge {
        /// Manifold spec for the integration
        #[arg(long, default_value = "lorentz:3")]
        manifold: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Integration horizon
        #[arg(long, default_value_t = 1.0)]
        t_end: f64,
    },
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn write_energy_json(
    path: &Path,
    outcome_counts: &Array2<u64>,
    dataset: &GraphDataset,
    mode: EncodingCountMode,
) -> Result<String> {
    let report = snn_energy(
        outcome_counts.view(),
        dataset.num_nodes,
        dataset.features.ncols(),
        mode,
    )?;
    let json =
        serde_json::to_string_pretty(&report).map_err(|e| MsgError::Parse(e.to_string()))?;
    std::fs::write(path, format!("{json}\n"))?;
    Ok(json)
}

fn run_train(args: &TrainArgs, task: Task) -> Result<()> {
    let dataset = args.data.load(args.seed)?;
    let mut cfg = TrainConfig::new(args.model.to_config()?, task);
    cfg.epochs = args.epochs;
    cfg.lr = args.lr;
    cfg.seed = args.seed;
    let outcome: TrainOutcome = msg::tasks::train(&dataset, &cfg)?;

    std::fs::create_dir_all(&args.out)?;
    io::write_history_csv(&args.out.join("history.csv"), &outcome.history)?;
    if args.grad_audit {
        io::write_grads_csv(&args.out.join("grads.csv"), &outcome.history)?;
    }
    io::save_weights(&args.out.join("weights.msg1"), &outcome.weights)?;
    write_energy_json(
        &args.out.join("energy.json"),
        &outcome.last_spike_counts,
        &dataset,
        args.encoding_count_mode.into(),
    )?;

    if let Some(last) = outcome.history.last() {
        let metric = match task {
            Task::NodeClassification => "accuracy",
            Task::LinkPrediction => "auc",
        };
        println!(
            "epochs={} loss={} val_{metric}={} test_{metric}={}",
            last.epoch, last.loss, last.val_metric, last.test_metric
        );
    }
    println!("outputs written to {}", args.out.display());
    Ok(())
}

/// Finite-difference audit of every weight gradient with spikes frozen to a
/// cached forward pass; returns the worst relative error over both decoders.
fn gradcheck(model: &ModelArgs, nodes: usize, seed: u64) -> Result<f64> {
    let cfg = model.to_config()?;
    let mut rng = rng_stream(seed, 3);
    let feat_dim = 6;
    let (edges, features, labels) = sbm_two_block(nodes, 0.4, 0.1, feat_dim, 0.75, &mut rng);
    let dataset = GraphDataset::new(nodes, edges, features, Some(labels.clone()))?;
    let mut wrng = rng_stream(seed, 0);
    let weights = init_weights(feat_dim, &cfg, &mut wrng);
    let cache = forward(&dataset, &weights, &cfg)?;
    let head = ClassifierHead::init(cfg.ambient_dim(), 2, &mut wrng);
    let mask = vec![true; nodes];
    let neg = sample_non_edges(nodes, &dataset.edges, dataset.edges.len(), &mut rng_stream(seed, 2));
    let fd_params = msg::tasks::FermiDiracParams::default();
    let options = BackwardOptions::default();
    let h = 1e-5;

    let mut worst = 0.0f64;
    for task in [Task::NodeClassification, Task::LinkPrediction] {
        let loss_of = |ws: &[WeightMatrix]| -> Result<f64> {
            let z = forward_frozen_spikes(&dataset, &cache, ws, &cfg)?;
            Ok(match task {
                Task::NodeClassification => {
                    nc_loss_and_grad(&cfg.spec, z.view(), &labels, &mask, &head)?.0
                }
                Task::LinkPrediction => {
                    msg::tasks::lp_loss_and_grad(&cfg.spec, z.view(), &dataset.edges, &neg, &fd_params)?.0
                }
            })
        };
        let d_zl = match task {
            Task::NodeClassification => {
                nc_loss_and_grad(&cfg.spec, cache.final_points().view(), &labels, &mask, &head)?.1
            }
            Task::LinkPrediction => {
                msg::tasks::lp_loss_and_grad(
                    &cfg.spec,
                    cache.final_points().view(),
                    &dataset.edges,
                    &neg,
                    &fd_params,
                )?
                .1
            }
        };
        let grads = backward(&dataset, &cache, &weights, &cfg, d_zl.view(), &options)?;
        for (li, w) in weights.iter().enumerate() {
            let scale = grads.d_w[li].iter().fold(1e-6f64, |a, &b| a.max(b.abs()));
            for i in 0..w.values.nrows() {
                for j in 0..w.values.ncols() {
                    let mut plus = weights.to_vec();
                    let mut minus = weights.to_vec();
                    plus[li].values[[i, j]] += h;
                    minus[li].values[[i, j]] -= h;
                    let fd = (loss_of(&plus)? - loss_of(&minus)?) / (2.0 * h);
                    worst = worst.max((fd - grads.d_w[li][[i, j]]).abs() / scale);
                }
            }
        }
    }
    Ok(worst)
}

fn chart_converge(manifold: &str, seed: u64, t_end: f64) -> Result<()> {
    let spec = ManifoldSpec::parse(manifold)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z0 = origin(&spec);
    // modest field scale: projected constant-direction flows can blow up in
    // finite time on the hyperboloid
    let c = random_tangent(&z0, 0.5, &mut rng).into_coords();
    let field = |z: &ManifoldPoint, _tau: f64| proj_tangent(z, c.view());
    let reference = dynamic_chart_solve(&field, &z0, t_end, 4096)?;
    let ks = [8usize, 16, 32, 64, 128, 256, 512, 1024];
    println!("charts,endpoint_error");
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &k in &ks {
        let end = dynamic_chart_solve(&field, &z0, t_end, k)?;
        let err = distance(&end, &reference)?;
        println!("{k},{err}");
        if err > 0.0 {
            xs.push((k as f64).ln());
            ys.push(err.ln());
        }
    }
    if xs.len() < 2 {
        return Err(MsgError::Numeric("degenerate convergence study: errors vanished".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let slope = xs
        .iter()
        .zip(ys.iter())
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>();
    println!("log-log slope: {slope}");
    if !(-1.3..=-0.7).contains(&slope) {
        return Err(MsgError::Numeric(format!(
            "convergence slope {slope} outside the first-order band [-1.3, -0.7]"
        )));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Ok(raw) = std::env::var("MSG_THREADS") {
        // orchestration is single-threaded; the cap is validated and recorded
        let n: usize = raw
            .parse()
            .map_err(|_| MsgError::Config(format!("MSG_THREADS must be a positive integer, got {raw:?}")))?;
        if n == 0 {
            return Err(MsgError::Config("MSG_THREADS must be at least 1".into()));
        }
    }
    match cli.cmd {
        Command::TrainNc(args) => run_train(&args, Task::NodeClassification),
        Command::TrainLp(args) => run_train(&args, Task::LinkPrediction),
        Command::Gradcheck { model, nodes, seed, tol } => {
            let worst = gradcheck(&model, nodes, seed)?;
            println!("max relative error: {worst}");
            if worst > tol {
                return Err(MsgError::Numeric(format!(
                    "gradient audit failed: relative error {worst} exceeds {tol}"
                )));
            }
            Ok(())
        }
        Command::EnergyReport { model, data, seed, encoding_count_mode, out } => {
            let cfg = model.to_config()?;
            let dataset = data.load(seed)?;
            let mut rng = rng_stream(seed, 0);
            let weights = init_weights(dataset.features.ncols(), &cfg, &mut rng);
            let cache = forward(&dataset, &weights, &cfg)?;
            let report = snn_energy(
                cache.spike_counts.view(),
                dataset.num_nodes,
                dataset.features.ncols(),
                encoding_count_mode.into(),
            )?;
            let json =
                serde_json::to_string_pretty(&report).map_err(|e| MsgError::Parse(e.to_string()))?;
            println!("{json}");
            if let Some(path) = out {
                std::fs::write(&path, format!("{json}\n"))?;
            }
            Ok(())
        }
        Command::Trajectory { model, data, seed, out } => {
            let cfg = model.to_config()?;
            let dataset = data.load(seed)?;
            let mut rng = rng_stream(seed, 0);
            let weights = init_weights(dataset.features.ncols(), &cfg, &mut rng);
            let cache = forward(&dataset, &weights, &cfg)?;
            io::write_trajectory_csv(&out, &cache)?;
            println!("trajectory written to {}", out.display());
            Ok(())
        }
        Command::ChartConverge { manifold, seed, t_end } => chart_converge(&manifold, seed, t_end),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                MsgError::Numeric(_)
                | MsgError::Contract(_)
                | MsgError::Domain(_)
                | MsgError::Layer { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
