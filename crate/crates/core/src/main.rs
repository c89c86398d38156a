//! Command-line harness: dataset and demo generation, model training,
//! evaluation tables, and heatmap export, all rooted in a run
//! directory that carries its own config copy.

use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sgtlab::approx::{inverse_fit, InverseModel, MdnModel};
use sgtlab::baselines::{approx_fw, fitted_q, ApproxFwConfig, FittedQConfig, QModel};
use sgtlab::env2d::{generate_demos, sample_transitions, DemoSet, TransitionDataset, Workspace};
use sgtlab::graph::{dijkstra_apsp, floyd_warshall, stdp_solve, WeightedGraph};
use sgtlab::harness::{
    eval_il_method, eval_rl, export_heatmap, write_il_report, write_rl_report,
    RlMethods, RunConfig,
};
use sgtlab::il::{train_bc, BcConfig, Representation};
use sgtlab::stdp::{approx_stdp, load_stack, save_stack, MidpointGrid, StdpConfig};
use sgtlab::util::mix_seed;

#[derive(Parser)]
#[command(name = "sgtlab", about = "sub-goal tree planning workbench")]
struct Cli {
    /// run configuration (JSON); defaults apply for missing file only
    /// when --config is omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// directory for all artifacts of this run
    #[arg(long, global = true, default_value = "run")]
    run_dir: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// sample the batch transition dataset
    GenData,
    /// generate expert demonstration sets (train/val/test)
    GenDemos,
    /// fit the approximate value recursion stack and the inverse model
    TrainStdp,
    /// fit the goal-conditioned fitted-Q baseline
    TrainFittedq,
    /// fit the approximate relaxation baseline and its dispersion log
    TrainFw,
    /// train the behavioral-cloning model for the configured representation
    TrainIl,
    /// three-row RL comparison on shared evaluation pairs
    EvalRl,
    /// success/time/severity table for the three trained representations
    EvalIl,
    /// export value heatmaps (PGM + raw CSV) toward g = (0.9, 0.9)
    ExportHeatmap,
    /// run the exact-recursion oracle suite on random graphs
    VerifyGraph,
}

#[derive(Debug)]
enum CliError {
    Config(String),
    MissingArtifact(String),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Other(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.into())
    }
}

fn require(path: &Path, produced_by: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingArtifact(format!(
            "{} not found; run `{produced_by}` first",
            path.display()
        )))
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| CliError::Config(e.to_string())),
        None => Ok(RunConfig::default()),
    }
}

fn load_transitions(run_dir: &Path) -> Result<TransitionDataset, CliError> {
    let path = run_dir.join("transitions.csv");
    require(&path, "gen-data")?;
    TransitionDataset::from_csv(File::open(path)?).map_err(CliError::Other)
}

fn load_demos(run_dir: &Path, split: &str, ws: &str) -> Result<DemoSet, CliError> {
    let path = run_dir.join(format!("demos_{split}.csv"));
    require(&path, "gen-demos")?;
    DemoSet::from_csv(File::open(path)?, ws).map_err(CliError::Other)
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path, produced_by: &str) -> Result<T, CliError> {
    require(path, produced_by)?;
    let text = std::fs::read_to_string(path).map_err(anyhow::Error::from)?;
    serde_json::from_str(&text).map_err(|e| CliError::Other(e.into()))
}

fn save_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string(value).map_err(anyhow::Error::from)?;
    std::fs::write(path, text)?;
    Ok(())
}

fn il_model_path(run_dir: &Path, rep: Representation) -> PathBuf {
    let tag = match rep {
        Representation::Sequential => "sequential",
        Representation::Sgt => "sgt",
        Representation::Direct => "direct",
    };
    run_dir.join(format!("il_{tag}.json"))
}

fn bc_config(cfg: &RunConfig, rep: Representation) -> BcConfig {
    BcConfig {
        representation: rep,
        modes: cfg.modes,
        horizon: cfg.horizon,
        hidden: cfg.hidden,
        train_steps: cfg.train_steps,
        stop_on_collision: cfg.stop_on_collision,
        seed: cfg.seed,
        ..BcConfig::default()
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    let run_dir = &cli.run_dir;
    std::fs::create_dir_all(run_dir)?;
    // every run carries its exact configuration
    save_json(&run_dir.join("config.json"), &cfg)?;
    let ws = Workspace::by_name(&cfg.workspace)
        .map_err(|e| CliError::Config(e.to_string()))?;
    match cli.cmd {
        Cmd::GenData => {
            let data = sample_transitions(&ws, cfg.n_transitions, cfg.seed)
                .map_err(|e| CliError::Other(e.into()))?;
            data.to_csv(File::create(run_dir.join("transitions.csv"))?)
                .map_err(|e| CliError::Other(e.into()))?;
            println!("wrote {} transitions", data.len());
        }
        Cmd::GenDemos => {
            for (split, n, salt) in [
                ("train", cfg.n_demos_train, 1u64),
                ("val", cfg.n_demos_val, 2),
                ("test", cfg.n_demos_test, 3),
            ] {
                let demos = generate_demos(&ws, n, cfg.horizon, mix_seed(cfg.seed, 0xde, salt))
                    .map_err(|e| CliError::Other(e.into()))?;
                demos
                    .to_csv(File::create(run_dir.join(format!("demos_{split}.csv")))?)
                    .map_err(|e| CliError::Other(e.into()))?;
                println!("wrote {n} {split} demos");
            }
        }
        Cmd::TrainStdp => {
            let data = load_transitions(run_dir)?;
            let scfg = StdpConfig {
                k_max: cfg.k_max,
                c_max: cfg.c_max,
                n_goal_pairs: cfg.n_goal_pairs,
                k_neighbors: cfg.k_neighbors,
                seed: cfg.seed,
                ..StdpConfig::default()
            };
            let stack = approx_stdp(&data, MidpointGrid::free_space(&ws, cfg.grid_res), &scfg)
                .map_err(|e| CliError::Other(e.into()))?;
            save_stack(&stack, &run_dir.join("stdp")).map_err(|e| CliError::Other(e.into()))?;
            let inverse = inverse_fit(&data).map_err(|e| CliError::Other(e.into()))?;
            save_json(&run_dir.join("inverse.json"), &inverse)?;
            println!("fitted value stack to depth {} and inverse model", stack.depth());
        }
        Cmd::TrainFittedq => {
            let data = load_transitions(run_dir)?;
            let qcfg = FittedQConfig {
                k_iters: cfg.q_iters,
                n_goal_targets: cfg.n_goal_pairs,
                k_neighbors: cfg.k_neighbors,
                seed: cfg.seed,
                ..FittedQConfig::default()
            };
            let q = fitted_q(&data, &qcfg).map_err(|e| CliError::Other(e.into()))?;
            save_json(&run_dir.join("q.json"), &q)?;
            println!("fitted Q over {} iterations", cfg.q_iters);
        }
        Cmd::TrainFw => {
            let data = load_transitions(run_dir)?;
            let fcfg = ApproxFwConfig {
                k_iters: cfg.fw_iters,
                c_max: cfg.c_max,
                n_goal_targets: cfg.n_goal_pairs,
                k_neighbors: cfg.k_neighbors,
                fit_self: cfg.fw_fit_self,
                seed: cfg.seed,
            };
            let (model, log) = approx_fw(&data, &fcfg).map_err(|e| CliError::Other(e.into()))?;
            save_json(&run_dir.join("fw.json"), &model.knn)?;
            let mut f = File::create(run_dir.join("fw_dispersion.csv"))?;
            writeln!(f, "iter,probe_std")?;
            for (iter, std) in &log.rows {
                writeln!(f, "{iter},{std:.9}")?;
            }
            println!("relaxation dispersion: {:?}", log.rows.last().unwrap());
        }
        Cmd::TrainIl => {
            let rep: Representation = cfg
                .representation
                .parse()
                .map_err(CliError::Config)?;
            let train = load_demos(run_dir, "train", &cfg.workspace)?;
            let val = load_demos(run_dir, "val", &cfg.workspace)?;
            let bcfg = bc_config(&cfg, rep);
            let (model, log) = train_bc(&train, &val, &bcfg).map_err(|e| CliError::Other(e.into()))?;
            save_json(&il_model_path(run_dir, rep), &model)?;
            save_json(
                &run_dir.join(format!("il_{}_log.json", cfg.representation)),
                &serde_json::json!({
                    "best_val_nll": log.best_val_nll,
                    "final_val_nll": log.final_val_nll,
                }),
            )?;
            println!(
                "trained {} model, best validation NLL {:.4}",
                cfg.representation, log.best_val_nll
            );
        }
        Cmd::EvalRl => {
            let stack = load_stack(&run_dir.join("stdp")).map_err(|e| {
                CliError::MissingArtifact(format!("value stack: {e}; run `train-stdp` first"))
            })?;
            let inverse: InverseModel = load_json(&run_dir.join("inverse.json"), "train-stdp")?;
            let q: QModel = load_json(&run_dir.join("q.json"), "train-fittedq")?;
            let methods = RlMethods { stack: &stack, tree_depth: cfg.k_max, inverse: &inverse, q: &q };
            let report = eval_rl(&ws, &methods, cfg.n_eval_pairs, mix_seed(cfg.seed, 0xe0, 0));
            write_rl_report(File::create(run_dir.join("rl_report.csv"))?, &report, &cfg.hash())?;
            for r in &report.rows {
                println!(
                    "{}: avg_dist {:.3}, collision_rate {:.3} (n={})",
                    r.method, r.avg_dist, r.avg_collision_rate, r.n
                );
            }
        }
        Cmd::EvalIl => {
            let test = load_demos(run_dir, "test", &cfg.workspace)?;
            let pairs: Vec<_> = test
                .trajectories
                .iter()
                .map(|t| (t.states[0], *t.states.last().unwrap()))
                .collect();
            let mut rows = Vec::new();
            for rep in [Representation::Sequential, Representation::Sgt, Representation::Direct] {
                let model: MdnModel = load_json(&il_model_path(run_dir, rep), "train-il")?;
                rows.push(eval_il_method(&ws, &model, &bc_config(&cfg, rep), &pairs));
            }
            write_il_report(File::create(run_dir.join("il_report.csv"))?, &rows, &cfg.hash())?;
            for r in &rows {
                println!(
                    "{}: success {:.3}, time {:.4}s, severity {:.4}",
                    r.method, r.success_rate, r.pred_time_s, r.severity
                );
            }
        }
        Cmd::ExportHeatmap => {
            let stack = load_stack(&run_dir.join("stdp")).map_err(|e| {
                CliError::MissingArtifact(format!("value stack: {e}; run `train-stdp` first"))
            })?;
            for k in 0..=stack.depth() {
                export_heatmap(
                    &stack,
                    [0.9, 0.9],
                    k,
                    cfg.grid_res,
                    &run_dir.join(format!("heatmap_k{k}.pgm")),
                    &run_dir.join(format!("heatmap_k{k}.csv")),
                )?;
            }
            println!("wrote heatmaps for k = 0..={}", stack.depth());
        }
        Cmd::VerifyGraph => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut worst = 0.0f64;
            for _ in 0..50 {
                let n = rng.gen_range(4..=32usize);
                let g = random_graph(n, &mut rng);
                let k = (n as f64).log2().ceil() as usize;
                let stack = stdp_solve(&g, k);
                let fw = floyd_warshall(&g);
                let dj = dijkstra_apsp(&g).map_err(|e| CliError::Other(e.into()))?;
                for s in 0..n {
                    for t in 0..n {
                        let v = stack.table(k).get(s, t);
                        let mut d = (v - fw.get(s, t)).abs().max((v - dj.get(s, t)).abs());
                        if v.is_infinite() && fw.get(s, t).is_infinite() {
                            d = 0.0;
                        }
                        worst = worst.max(d);
                    }
                }
            }
            if !(worst < 1e-9) {
                return Err(CliError::Other(anyhow::anyhow!("oracle mismatch {worst:e}")));
            }
            println!("50 random graphs: recursion matches both oracles (max abs diff {worst:e})");
        }
    }
    Ok(())
}

/// Random digraph: edge kept with probability 0.7, weight U[0, 10].
fn random_graph(n: usize, rng: &mut ChaCha8Rng) -> WeightedGraph {
    let mut g = WeightedGraph::empty(n);
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.gen::<f64>() < 0.7 {
                g.set_weight(i, j, rng.gen::<f64>() * 10.0).unwrap();
            }
        }
    }
    g
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::MissingArtifact(msg)) => {
            eprintln!("error: missing_artifact: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Config(msg)) => {
            eprintln!("error: config: {msg}");
            ExitCode::from(3)
        }
        Err(CliError::Other(e)) => {
            eprintln!("error: run_failed: {e}");
            ExitCode::FAILURE
        }
    }
}
