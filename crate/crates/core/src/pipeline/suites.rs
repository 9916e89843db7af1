//! Evaluation suites on top of trained models: structural-perturbation
//! robustness, the causal do-intervention on generated edges, and the
//! one-factor-at-a-time sensitivity grid.

use serde::{Deserialize, Serialize};

use crate::adversarial::perturbed_adjacency;
use crate::dense::Mat;
use crate::error::{Error, Result};
use crate::graph::perturb_edges;
use crate::metrics::{delta_auc, embedding_shift, macro_roc_auc, pn_ps_bounds, OutcomeCounts};
use crate::pipeline::config::ExperimentConfig;
use crate::pipeline::train::{infer, run_training, TrainedModel};
use crate::spectral::PowerIterConfig;

/// One perturbation row of the robustness protocol.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub seed: u64,
    pub name: String,
    pub del_rate: f64,
    pub add_rate: f64,
    pub auc: f64,
    pub delta_auc_pct: f64,
    pub r_abs: f64,
    pub r_rel: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub rows: Vec<RobustnessRow>,
    /// Mean delta-AUC per perturbation name over seeds.
    pub mean_delta_by_name: Vec<(String, f64)>,
}

impl RobustnessReport {
    pub fn csv(&self) -> String {
        let mut out =
            String::from("seed,perturbation,del_rate,add_rate,auc,delta_auc_pct,r_abs,r_rel\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.seed, r.name, r.del_rate, r.add_rate, r.auc, r.delta_auc_pct, r.r_abs, r.r_rel
            ));
        }
        out
    }

    pub fn mean_delta(&self, name: &str) -> Option<f64> {
        self.mean_delta_by_name
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, d)| d)
    }
}

/// AUC on the evaluation nodes of a prediction matrix.
fn eval_auc(model: &TrainedModel, predictions: &Mat) -> f64 {
    let labels: Vec<usize> = model
        .eval_nodes
        .iter()
        .map(|&i| model.truth[i].unwrap())
        .collect();
    let mut probs = Mat::zeros(model.eval_nodes.len(), predictions.cols());
    for (r, &i) in model.eval_nodes.iter().enumerate() {
        probs.row_mut(r).copy_from_slice(predictions.row(i));
    }
    if predictions.cols() == 2 {
        let scores: Vec<f64> = (0..probs.rows()).map(|r| probs[(r, 1)]).collect();
        let flags: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        crate::metrics::roc_auc(&scores, &flags).unwrap_or(0.5)
    } else {
        macro_roc_auc(&probs, &labels).unwrap_or(0.5)
    }
}

/// The fixed perturbation protocol: clean, 5%/10% deletions, 5%/10%
/// additions, and the 5%+5% hybrid (deletion then addition with independent
/// sub-seeds, counts taken against the original edge count).
pub fn run_robustness_suite(cfg: &ExperimentConfig) -> Result<RobustnessReport> {
    let protocol: [(&str, f64, f64); 6] = [
        ("clean", 0.0, 0.0),
        ("del5", 0.05, 0.0),
        ("del10", 0.10, 0.0),
        ("add5", 0.0, 0.05),
        ("add10", 0.0, 0.10),
        ("hybrid5", 0.05, 0.05),
    ];
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let run = run_training(cfg, seed)?;
        let model = &run.model;
        let clean_out = infer(model, &model.graph, None)?;
        let auc_clean = eval_auc(model, &clean_out.predictions);
        for (name, del, add) in protocol {
            let g_pert = if del > 0.0 && add > 0.0 {
                let n_add = (add * model.graph.n_edges() as f64).round() as usize;
                let g_del = perturb_edges(&model.graph, del, 0.0, seed ^ 0xd31)?;
                let add_rate = n_add as f64 / g_del.n_edges() as f64;
                perturb_edges(&g_del, 0.0, add_rate, seed ^ 0xadd)?
            } else if del > 0.0 || add > 0.0 {
                perturb_edges(&model.graph, del, add, seed ^ 0x0b5)?
            } else {
                model.graph.clone()
            };
            let out = infer(model, &g_pert, None)?;
            let auc = eval_auc(model, &out.predictions);
            let (r_abs, r_rel, _) = embedding_shift(&clean_out.embeddings, &out.embeddings)?;
            rows.push(RobustnessRow {
                seed,
                name: name.to_string(),
                del_rate: del,
                add_rate: add,
                auc,
                delta_auc_pct: delta_auc(auc, auc_clean),
                r_abs,
                r_rel,
            });
        }
    }
    let mut mean_delta_by_name = Vec::new();
    for (name, _, _) in protocol {
        let deltas: Vec<f64> = rows
            .iter()
            .filter(|r| r.name == name)
            .map(|r| r.delta_auc_pct)
            .collect();
        let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
        mean_delta_by_name.push((name.to_string(), mean));
    }
    Ok(RobustnessReport {
        rows,
        mean_delta_by_name,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CausalReport {
    pub pn_lower: f64,
    pub ps_lower: f64,
    /// Mean counterfactual delta-AUC in percentage points over runs.
    pub counterfactual_delta_auc: f64,
    pub per_seed_treated_auc: Vec<f64>,
    pub per_seed_control_auc: Vec<f64>,
}

/// Treat "retain the generated edge modifications" as a binary treatment:
/// the treated arm runs inference through the perturbed operator, the
/// control arm removes the flipped-edge set `{(i,j): P_ij > 0.9}` by zeroing
/// those probabilities (an explicit do(T=0) with frozen parameters). The
/// adequacy outcome is an AUC within 1% of the mean treated AUC.
pub fn run_causal_suite(cfg: &ExperimentConfig) -> Result<CausalReport> {
    let mut treated = Vec::new();
    let mut control = Vec::new();
    for &seed in &cfg.seeds {
        let run = run_training(cfg, seed)?;
        let model = &run.model;
        let hp = &model.cfg.hyper;
        let pi = PowerIterConfig {
            max_iters: hp.power_iters_preprocess.max(50),
            tol: 1e-10,
            seed,
        };
        let (auc_t, auc_c) = match &model.final_flips {
            None => {
                let out = infer(model, &model.graph, None)?;
                let auc = eval_auc(model, &out.predictions);
                (auc, auc)
            }
            Some(flips) => {
                let (op_treated, _) =
                    perturbed_adjacency(&model.graph, flips, true, hp.with_self_loops, &pi);
                let mut scrubbed = flips.clone();
                for p in &mut scrubbed.p {
                    if *p > 0.9 {
                        *p = 0.0;
                    }
                }
                let (op_control, _) =
                    perturbed_adjacency(&model.graph, &scrubbed, true, hp.with_self_loops, &pi);
                let out_t = infer(model, &model.graph, Some(&op_treated))?;
                let out_c = infer(model, &model.graph, Some(&op_control))?;
                (
                    eval_auc(model, &out_t.predictions),
                    eval_auc(model, &out_c.predictions),
                )
            }
        };
        treated.push(auc_t);
        control.push(auc_c);
    }
    let reference = treated.iter().sum::<f64>() / treated.len() as f64;
    let adequate = |auc: f64| auc >= 0.99 * reference;
    let mut counts: OutcomeCounts = [[0, 0], [0, 0]];
    for (&t, &c) in treated.iter().zip(&control) {
        counts[1][usize::from(adequate(t))] += 1;
        counts[0][usize::from(adequate(c))] += 1;
    }
    let (pn, ps) = pn_ps_bounds(&counts)?;
    let counterfactual = treated
        .iter()
        .zip(&control)
        .map(|(&t, &c)| (c - t) * 100.0)
        .sum::<f64>()
        / treated.len() as f64;
    Ok(CausalReport {
        pn_lower: pn,
        ps_lower: ps,
        counterfactual_delta_auc: counterfactual,
        per_seed_treated_auc: treated,
        per_seed_control_auc: control,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub label: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_auc: f64,
    pub std_auc: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    (mean, var.sqrt())
}

/// One-factor-at-a-time sweep around the defaults:
/// delta {0.05, 0.20}, residual steps {10, 50}, gamma {0.3, 0.8},
/// plus the shared default row — seven configurations.
pub fn run_sensitivity_grid(cfg: &ExperimentConfig) -> Result<Vec<SensitivityRow>> {
    let mut variants: Vec<(String, ExperimentConfig)> = vec![("default".into(), cfg.clone())];
    for &d in &[0.05, 0.20] {
        let mut v = cfg.clone();
        v.hyper.delta = d;
        variants.push((format!("delta={d}"), v));
    }
    for &t in &[10usize, 50] {
        let mut v = cfg.clone();
        v.hyper.residual_steps = t;
        variants.push((format!("T={t}"), v));
    }
    for &gm in &[0.3, 0.8] {
        let mut v = cfg.clone();
        v.hyper.gamma = gm;
        variants.push((format!("gamma={gm}"), v));
    }
    let mut rows = Vec::new();
    for (label, vcfg) in variants {
        let mut accs = Vec::new();
        let mut aucs = Vec::new();
        for &seed in &vcfg.seeds {
            let run = run_training(&vcfg, seed)?;
            accs.push(run.accuracy);
            aucs.push(run.metrics.roc_auc);
        }
        let (ma, sa) = mean_std(&accs);
        let (mu, su) = mean_std(&aucs);
        rows.push(SensitivityRow {
            label,
            config_hash: format!("{:016x}", vcfg.config_hash()),
            seeds: vcfg.seeds.clone(),
            mean_accuracy: ma,
            std_accuracy: sa,
            mean_auc: mu,
            std_auc: su,
        });
    }
    Ok(rows)
}

pub fn sensitivity_csv(rows: &[SensitivityRow]) -> String {
    let mut out = String::from("label,config_hash,seeds,mean_accuracy,std_accuracy,mean_auc,std_auc\n");
    for r in rows {
        let seeds = r
            .seeds
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(";");
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.label, r.config_hash, seeds, r.mean_accuracy, r.std_accuracy, r.mean_auc, r.std_auc
        ));
    }
    out
}

/// Shared guard: suites need at least one seed.
pub fn require_seeds(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.seeds.is_empty() {
        return Err(Error::Config("suite needs at least one seed".into()));
    }
    Ok(())
}
