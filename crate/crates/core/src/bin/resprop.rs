//! Command-line surface for the robust-propagation pipeline.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use resprop::error::{Error, Result};
use resprop::graph::{generate_sbm, load_graph, save_graph};
use resprop::operator::normalize_adjacency;
use resprop::pipeline::suites::sensitivity_csv;
use resprop::pipeline::{
    run_causal_suite, run_robustness_suite, run_sensitivity_grid, run_training, ExperimentConfig,
};
use resprop::spectral::{spectral_clip, PowerIterConfig};

/// Output root fallback when --out is not given.
const OUT_ROOT_ENV: &str = "RESPROP_OUT_ROOT";

#[derive(Parser)]
#[command(name = "resprop", version, about = "Spectrally safeguarded robust graph propagation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// JSON experiment config; defaults to the 200-node smoke setup.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's seed list with a single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: $RESPROP_OUT_ROOT/<subcommand> or ./out/<subcommand>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Row-parallelism width for kernels (deterministic at any setting).
    #[arg(long)]
    threads: Option<usize>,
    /// Average k Monte-Carlo perturbed inference passes.
    #[arg(long)]
    mc_perturbations: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the full pipeline and write run artifacts.
    Train(RunArgs),
    /// Train, then evaluate the structural-perturbation protocol.
    Robustness(RunArgs),
    /// Train, then run the do-intervention causal suite.
    Causal(RunArgs),
    /// One-factor-at-a-time sensitivity sweep around the defaults.
    Sensitivity(RunArgs),
    /// Generate a stochastic block model graph file.
    GenSbm {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        blocks: usize,
        #[arg(long, default_value_t = 0.1)]
        p_intra: f64,
        #[arg(long, default_value_t = 0.01)]
        p_inter: f64,
        #[arg(long, default_value_t = 16)]
        feature_dim: usize,
        #[arg(long, default_value_t = 0.5)]
        feature_noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference audit battery over every trainable operation.
    Gradcheck {
        /// Random configurations per operation family.
        #[arg(long, default_value_t = 20)]
        configs: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Spectral-norm estimates and clip report for a graph.
    SpectralReport {
        /// Graph text file.
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = 1e-4)]
        epsilon: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn out_dir(arg: &Option<PathBuf>, sub: &str) -> PathBuf {
    if let Some(p) = arg {
        return p.clone();
    }
    let root = std::env::var(OUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|_| PathBuf::from("out"));
    root.join(sub)
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::smoke_default(),
    };
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(t) = args.threads {
        cfg.threads = t;
    }
    if let Some(k) = args.mc_perturbations {
        cfg.mc_perturbations = k;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, content)?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let cfg = load_config(&args)?;
            let dir = out_dir(&args.out.clone().or(cfg.output_dir.clone()), "train");
            let mut ledger = format!("seed,{}\n", resprop::metrics::MetricReport::csv_header());
            for &seed in &cfg.seeds {
                let run = run_training(&cfg, seed)?;
                let sub = dir.join(format!("seed{seed}"));
                write(&sub.join("metrics.json"), &run.metrics.to_json())?;
                let mut diag =
                    String::from("epoch,d_loss,g_loss,grad_norm_d,grad_norm_g,flip_entropy\n");
                for (e, d) in run.diagnostics.iter().enumerate() {
                    diag.push_str(&format!(
                        "{},{},{},{},{},{}\n",
                        e, d.d_loss, d.g_loss, d.grad_norm_d, d.grad_norm_g, d.flip_entropy
                    ));
                }
                write(&sub.join("diagnostics.csv"), &diag)?;
                let mut preds = String::from("node_id");
                for c in 0..run.predictions.cols() {
                    preds.push_str(&format!(",p{c}"));
                }
                preds.push_str(",argmax\n");
                for i in 0..run.predictions.rows() {
                    preds.push_str(&i.to_string());
                    let row = run.predictions.row(i);
                    for v in row {
                        preds.push_str(&format!(",{v}"));
                    }
                    let argmax = row
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                        .unwrap()
                        .0;
                    preds.push_str(&format!(",{argmax}\n"));
                }
                write(&sub.join("predictions.csv"), &preds)?;
                write(
                    &sub.join("clip_report.json"),
                    &serde_json::to_string_pretty(&run.clip_report)?,
                )?;
                let mut trace = String::from("t,step_norm\n");
                for (t, v) in run.residual_trace.iter().enumerate() {
                    trace.push_str(&format!("{},{}\n", t + 1, v));
                }
                write(&sub.join("trace_residual.csv"), &trace)?;
                for w in &run.warnings {
                    eprintln!("warning: {w}");
                }
                ledger.push_str(&format!("{seed},{}\n", run.metrics.csv_row()));
                println!(
                    "seed {seed}: accuracy {:.4} (majority {:.4}), auc {:.4}, min flip entropy {:.4} -> {}",
                    run.accuracy,
                    run.majority_baseline,
                    run.metrics.roc_auc,
                    run.min_flip_entropy,
                    sub.display()
                );
            }
            write(&dir.join("results.csv"), &ledger)?;
            Ok(())
        }
        Command::Robustness(args) => {
            let cfg = load_config(&args)?;
            let dir = out_dir(&args.out, "robustness");
            let report = run_robustness_suite(&cfg)?;
            write(&dir.join("robustness.csv"), &report.csv())?;
            for (name, delta) in &report.mean_delta_by_name {
                println!("{name}: mean delta-AUC {delta:+.3}%");
            }
            // soft monotone-stress check: heavier deletion should not hurt less
            if let (Some(d5), Some(d10)) = (report.mean_delta("del5"), report.mean_delta("del10")) {
                if d10 <= d5 {
                    println!("monotone stress holds: del10 {d10:+.3}% <= del5 {d5:+.3}%");
                } else {
                    println!(
                        "monotone stress violated by {:+.3}pp: del10 {d10:+.3}% > del5 {d5:+.3}%",
                        d10 - d5
                    );
                }
            }
            println!("rows -> {}", dir.join("robustness.csv").display());
            Ok(())
        }
        Command::Causal(args) => {
            let cfg = load_config(&args)?;
            let dir = out_dir(&args.out, "causal");
            let report = run_causal_suite(&cfg)?;
            write(&dir.join("causal.json"), &serde_json::to_string_pretty(&report)?)?;
            println!(
                "PN >= {:.3}, PS >= {:.3}, counterfactual delta-AUC {:+.3} pp",
                report.pn_lower, report.ps_lower, report.counterfactual_delta_auc
            );
            Ok(())
        }
        Command::Sensitivity(args) => {
            let cfg = load_config(&args)?;
            let dir = out_dir(&args.out, "sensitivity");
            let rows = run_sensitivity_grid(&cfg)?;
            write(&dir.join("sensitivity.csv"), &sensitivity_csv(&rows))?;
            for r in &rows {
                println!(
                    "{:>10}: acc {:.4} +- {:.4}, auc {:.4} +- {:.4}",
                    r.label, r.mean_accuracy, r.std_accuracy, r.mean_auc, r.std_auc
                );
            }
            Ok(())
        }
        Command::GenSbm {
            n,
            blocks,
            p_intra,
            p_inter,
            feature_dim,
            feature_noise,
            seed,
            out,
        } => {
            let g = generate_sbm(n, blocks, p_intra, p_inter, feature_dim, feature_noise, seed)?;
            if let Some(parent) = out.parent() {
                std::fs::create_dir_all(parent)?;
            }
            save_graph(&g, &out)?;
            let (h, excluded) = resprop::graph::homophily_ratio(&g)?;
            println!(
                "wrote {} nodes / {} edges (homophily {:.3}, {} isolated excluded) -> {}",
                g.n_nodes(),
                g.n_edges(),
                h,
                excluded,
                out.display()
            );
            Ok(())
        }
        Command::Gradcheck { configs, seed } => {
            let lines = resprop::pipeline::audits::run_all(configs, seed);
            let mut all_ok = true;
            for l in &lines {
                let status = if l.passed() { "PASS" } else { "FAIL" };
                println!(
                    "{status} {:<20} configs {:>3} max rel err {:.3e} (tol {:.0e})",
                    l.family, l.configs, l.max_rel_err, l.tol
                );
                all_ok &= l.passed();
            }
            if all_ok {
                Ok(())
            } else {
                Err(Error::ContractViolation("gradient audit failed".into()))
            }
        }
        Command::SpectralReport { graph, epsilon, out } => {
            let g = load_graph(&graph)?;
            let with_loops = normalize_adjacency(&g, true);
            let without_loops = normalize_adjacency(&g, false);
            let (_, report) = spectral_clip(&with_loops, epsilon, &PowerIterConfig::oracle());
            println!(
                "||A~ (self-loops)||_2 ~ {:.6}, ||A~ (plain)||_2 ~ {:.6}",
                with_loops.norm_estimate, without_loops.norm_estimate
            );
            println!(
                "clip: scale {:.6}, nu {:.6} -> {:.6} ({} power iterations)",
                report.scale, report.nu_before, report.nu_after, report.converged_power_iters
            );
            let json = serde_json::to_string_pretty(&report)?;
            match out {
                Some(dir) => {
                    let path = dir.join("clip_report.json");
                    write(&path, &json)?;
                    println!("report -> {}", path.display());
                }
                None => println!("{json}"),
            }
            Ok(())
        }
    }
}
