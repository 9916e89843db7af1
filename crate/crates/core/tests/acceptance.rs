//! Acceptance suite: ten go/no-go criteria for the toolkit, each printing
//! one PASS/FAIL line (visible with `cargo test --test acceptance --
//! --nocapture`). Tolerances and runtime budgets are pinned in code.

mod common;

use std::time::Instant;

use resprop::dense::Mat;
use resprop::diffusion::robust_diffusion;
use resprop::graph::{generate_sbm, SparseGraph};
use resprop::metrics::{
    counterfactual_delta, delta_auc, embedding_shift, gamma_sens, pn_ps_bounds, retention_k,
    roc_auc, s_pair, OutcomeCounts,
};
use resprop::operator::{
    adjacency_operator, normalize_adjacency, CsrMatrix, PropagationOperator, Provenance,
};
use resprop::pipeline::{run_robustness_suite, run_training, ExperimentConfig};
use resprop::residual::{
    dense_fixed_point_oracle, init_residual, propagate_residual, ConfidenceVector,
};
use resprop::rng;
use resprop::spectral::{
    clip_distortion_norm, enforce_contraction, power_iteration_csr, spectral_clip,
    PowerIterConfig,
};

fn report(criterion: &str, pass: bool, detail: &str) {
    println!(
        "criterion {criterion}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
}

/// Scale a normalized operator so its true spectral norm lands at `target`.
fn operator_with_norm(seed: u64, n: usize, target: f64) -> PropagationOperator {
    let g = common::connected_random_graph(seed, n, 0.2, 1);
    let base = normalize_adjacency(&g, true);
    let exact = common::dense_spectral_norm(&base.values.to_dense());
    PropagationOperator {
        values: base.values.scale(target / exact),
        norm_estimate: target,
        provenance: Provenance::Raw,
        self_loops: true,
    }
}

#[test]
fn criterion_01_contraction_certificate() {
    let start = Instant::now();
    let mut max_final_err = 0.0f64;
    let mut max_ratio_excess = f64::NEG_INFINITY;
    for trial in 0..100u64 {
        let mut r = rng::seeded(trial, 0xac01);
        let n = 8 + (trial as usize % 8) * 8; // 8..64
        let target = rng::uniform(&mut r, 0.9, 2.5);
        let op = operator_with_norm(trial, n, target);
        let (clipped, capped, _) = enforce_contraction(
            &op,
            &(0..n)
                .map(|_| rng::uniform(&mut r, 0.05, 0.98))
                .collect::<Vec<_>>(),
            1e-4,
            0.98,
            &PowerIterConfig { max_iters: 600, tol: 1e-13, seed: trial },
        )
        .unwrap();
        // the certified kappa uses the dense oracle norm of the clipped operator
        let cmax = capped.iter().fold(0.0f64, |m, &v| m.max(v));
        let kappa = cmax * common::dense_spectral_norm(&clipped.values.to_dense());
        assert!(kappa < 1.0);
        let conf = ConfidenceVector { c: capped, capped: true };
        let r0 = Mat::from_vec(n, 3, (0..n * 3).map(|_| rng::gaussian(&mut r)).collect());
        let state = init_residual(&r0, &Mat::zeros(n, 3)).unwrap();
        let out = propagate_residual(state, &clipped, &conf, 5000, 1e-9);
        for w in out.trace.windows(2) {
            if w[0] == 0.0 {
                continue;
            }
            max_ratio_excess = max_ratio_excess.max(w[1] / w[0] - kappa);
        }
        let oracle = dense_fixed_point_oracle(&clipped, &conf, &out.r0).unwrap();
        max_final_err = max_final_err.max(out.r.sub(&oracle).max_abs());
    }
    let elapsed = start.elapsed();
    let pass = max_final_err < 1e-6 && max_ratio_excess <= 1e-6 && elapsed.as_secs_f64() < 10.0;
    report(
        "01-contraction",
        pass,
        &format!(
            "100 graphs, max fixed-point err {max_final_err:.2e}, max ratio excess {max_ratio_excess:.2e}, {elapsed:?}"
        ),
    );
}

#[test]
fn criterion_02_clipping_lemma() {
    let start = Instant::now();
    let mut worst_norm = 0.0f64;
    let mut worst_identity_rel = 0.0f64;
    for trial in 0..50u64 {
        let mut r = rng::seeded(trial, 0xac02);
        let n = 16 + (trial as usize % 3) * 8;
        let target = rng::uniform(&mut r, 1.1, 3.0);
        let op = operator_with_norm(trial.wrapping_add(1000), n, target);
        let pi = PowerIterConfig { max_iters: 600, tol: 1e-13, seed: trial };
        let nu = power_iteration_csr(&op.values, &pi);
        assert!((1.05..3.05).contains(&nu), "trial {trial}: nu {nu}");
        let c: Vec<f64> = (0..n).map(|_| rng::uniform(&mut r, 0.05, 0.999)).collect();
        let (clipped, capped, _) = enforce_contraction(&op, &c, 1e-4, 0.98, &pi).unwrap();
        let triplets: Vec<(usize, usize, f64)> = clipped
            .values
            .iter_coords()
            .map(|(i, j, v)| (i, j, capped[i] * v))
            .collect();
        let damped = CsrMatrix::from_triplets(n, n, &triplets);
        worst_norm = worst_norm.max(power_iteration_csr(&damped, &pi));
        // distortion identity, numeric vs closed form
        let (reclipped, _) = spectral_clip(&op, 1e-4, &pi);
        let diff = op.values.sub(&reclipped.values);
        let measured = power_iteration_csr(&diff, &pi);
        let formula = clip_distortion_norm(nu, 1e-4);
        worst_identity_rel = worst_identity_rel.max((measured - formula).abs() / formula);
    }
    let elapsed = start.elapsed();
    let pass =
        worst_norm <= 0.98 + 1e-6 && worst_identity_rel < 1e-6 && elapsed.as_secs_f64() < 5.0;
    report(
        "02-clipping-lemma",
        pass,
        &format!(
            "50 operators, max damped norm {worst_norm:.8}, distortion rel err {worst_identity_rel:.2e}, {elapsed:?}"
        ),
    );
}

#[test]
fn criterion_03_gradient_audits() {
    let start = Instant::now();
    let lines = resprop::pipeline::audits::run_all(20, 0xfeed);
    let elapsed = start.elapsed();
    let mut pass = elapsed.as_secs_f64() < 60.0;
    let mut detail = String::new();
    for l in &lines {
        pass &= l.passed();
        detail.push_str(&format!("{} {:.1e}; ", l.family, l.max_rel_err));
    }
    detail.push_str(&format!("{elapsed:?}"));
    report("03-gradient-audits", pass, &detail);
}

#[test]
fn criterion_04_fixed_point_oracles() {
    // hand-derived two-node values
    let g = SparseGraph::new(2, &[(0, 1)], Mat::zeros(2, 1)).unwrap();
    let op = normalize_adjacency(&g, true);
    let conf = ConfidenceVector::new(vec![0.5, 0.5]).unwrap();
    let r0 = Mat::from_rows(&[vec![1.0], vec![0.0]]);
    let state = init_residual(&r0, &Mat::zeros(2, 1)).unwrap();
    let out = propagate_residual(state, &op, &conf, 500, 1e-14);
    let r_err = (out.r[(0, 0)] - 0.75).abs().max((out.r[(1, 0)] - 0.25).abs());

    let z_res = robust_diffusion(&Mat::identity(2), &op, 0.5, 2000, 1e-14);
    let z_expected = Mat::from_rows(&[vec![0.75, 0.25], vec![0.25, 0.75]]);
    let z_err = z_res.z_inf.sub(&z_expected).max_abs();

    // 20 random diffusion instances vs dense linear solve
    let mut max_diff_err = 0.0f64;
    for trial in 0..20u64 {
        let mut r = rng::seeded(trial, 0xac04);
        let n = 10;
        let gg = common::connected_random_graph(trial, n, 0.3, 1);
        let opn = normalize_adjacency(&gg, true);
        let gamma = 0.5;
        let mut zr = Mat::zeros(n, 2);
        for i in 0..n {
            let p = rng::uniform(&mut r, 0.05, 0.95);
            zr[(i, 0)] = p;
            zr[(i, 1)] = 1.0 - p;
        }
        let res = robust_diffusion(&zr, &opn, gamma, 5000, 1e-12);
        assert!(!res.clip_active, "clip must stay inactive for the oracle check");
        let dense = opn.values.to_dense();
        let mut system = Mat::identity(n);
        for i in 0..n {
            for j in 0..n {
                system[(i, j)] -= gamma * dense[(i, j)];
            }
        }
        let oracle = system.solve(&zr.scale(1.0 - gamma)).unwrap();
        max_diff_err = max_diff_err.max(res.z_inf.sub(&oracle).max_abs());
    }
    let pass = r_err < 1e-9 && z_err < 1e-9 && max_diff_err < 1e-6;
    report(
        "04-fixed-point-oracles",
        pass,
        &format!("two-node R* err {r_err:.2e}, Z-inf err {z_err:.2e}, dense-solve err {max_diff_err:.2e}"),
    );
}

#[test]
fn criterion_05_normalization_invariants() {
    use resprop::attention::{attention_forward, AttentionConfig, AttnContext};
    use resprop::diffusion::{ensemble, fuse_predictions};
    use resprop::nn::softmax_rows;

    let mut worst_row_gap = 0.0f64;
    let mut all_unit = true;
    for seed in 0..10u64 {
        let mut r = rng::seeded(seed, 0xac05);
        let g = common::connected_random_graph(seed, 12, 0.3, 4);
        let cfg = AttentionConfig {
            heads: 2,
            head_dim: 3,
            dropout: 0.0,
            bias_hidden: 3,
            temporal: false,
        };
        let params = cfg.init_params(4, seed);
        let support: Vec<Vec<usize>> = (0..12).map(|i| g.neighbors(i).to_vec()).collect();
        let (out, _) =
            attention_forward(&support, g.features(), &params, &cfg, AttnContext::default())
                .unwrap();
        for head in 0..2 {
            for (i, neigh) in support.iter().enumerate() {
                if neigh.is_empty() {
                    continue;
                }
                let s: f64 = out.omega[head][i].iter().sum();
                worst_row_gap = worst_row_gap.max((s - 1.0).abs());
            }
        }
        // softmax rows
        let logits = Mat::from_vec(6, 4, (0..24).map(|_| 3.0 * rng::gaussian(&mut r)).collect());
        let sm = softmax_rows(&logits);
        for i in 0..6 {
            let s: f64 = sm.row(i).iter().sum();
            worst_row_gap = worst_row_gap.max((s - 1.0).abs());
        }
        // diffusion / fusion / ensemble ranges
        let op = normalize_adjacency(&g, true);
        let mut zr = Mat::zeros(12, 2);
        for i in 0..12 {
            let p = rng::uniform(&mut r, 0.0, 1.0);
            zr[(i, 0)] = p;
            zr[(i, 1)] = 1.0 - p;
        }
        let diff = robust_diffusion(&zr, &op, 0.5, 100, 1e-9);
        let ybar = Mat::from_vec(12, 2, (0..24).map(|_| 2.0 * rng::gaussian(&mut r)).collect());
        let fused = fuse_predictions(&ybar, &diff.z_inf, 0.5).unwrap();
        let ens = ensemble(
            &[fused.clone(), diff.z_inf.clone(), zr.clone()],
            &[0.4, 0.3, 0.3],
        )
        .unwrap();
        for m in [&diff.z_inf, &fused, &ens] {
            all_unit &= m.data().iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v));
        }
    }
    let pass = worst_row_gap < 1e-9 && all_unit;
    report(
        "05-normalization-invariants",
        pass,
        &format!("max row-sum gap {worst_row_gap:.2e}, unit-interval {all_unit}"),
    );
}

#[test]
fn criterion_06_metric_oracles() {
    // exhaustive pair-counting oracle for <= 100 points
    let mut exact = true;
    for trial in 0..20u64 {
        let mut r = rng::seeded(trial, 0xac06);
        let n = 100;
        let scores: Vec<f64> = (0..n)
            .map(|_| (rng::uniform(&mut r, 0.0, 1.0) * 20.0).round() / 20.0)
            .collect();
        let labels: Vec<bool> = (0..n).map(|_| rng::uniform(&mut r, 0.0, 1.0) < 0.45).collect();
        if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
            continue;
        }
        let fast = roc_auc(&scores, &labels).unwrap();
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            if !li {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj {
                    continue;
                }
                pairs += 1.0;
                wins += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
        exact &= fast == wins / pairs;
    }
    // tabulated examples
    let counts: OutcomeCounts = [[9, 1], [2, 8]];
    let (pn, ps) = pn_ps_bounds(&counts).unwrap();
    let pn_ok = (pn - 0.7).abs() < 1e-12 && (ps - 0.7).abs() < 1e-12;
    let delta_ok = (delta_auc(0.95, 1.0) + 5.0).abs() < 1e-12;
    let h = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]);
    let (r_abs0, r_rel2, _) = embedding_shift(&h, &h.scale(2.0)).unwrap();
    let shift_ok = (r_rel2 - 1.0).abs() < 1e-12 && r_abs0 > 0.0;
    let k_ok = (retention_k(&[0.8, 0.9]).unwrap() - 0.1).abs() < 1e-12;
    let sp = s_pair(&Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]])).unwrap();
    let sp_ok = (sp - 0.5).abs() < 1e-12;
    let labels = [true, false, true, false];
    let s_with = [0.9, 0.1, 0.8, 0.2];
    let cf_ok = counterfactual_delta(&s_with, &s_with, &labels).unwrap() == 0.0;
    // gamma_sens for the identity-feature linear encoder
    let g = common::connected_random_graph(3, 8, 0.4, 1);
    let op = normalize_adjacency(&g, true);
    let gp = resprop::graph::perturb_edges(&g, 0.0, 0.2, 5).unwrap();
    let op_p = normalize_adjacency(&gp, true);
    let enc = |o: &PropagationOperator, x: &Mat| o.values.matmat(x, 1);
    let ratio = gamma_sens(enc, &op, &op_p, &Mat::identity(8)).unwrap();
    let gs_ok = (ratio - 1.0).abs() < 1e-5;
    let pass = exact && pn_ok && delta_ok && shift_ok && k_ok && sp_ok && cf_ok && gs_ok;
    report(
        "06-metric-oracles",
        pass,
        &format!(
            "auc exact {exact}, pn/ps {pn_ok}, delta {delta_ok}, shift {shift_ok}, K {k_ok}, s_pair {sp_ok}, counterfactual {cf_ok}, gamma_sens {gs_ok}"
        ),
    );
}

#[test]
fn criterion_07_sbm_spectral_trend() {
    let start = Instant::now();
    let mut means = Vec::new();
    for &p_inter in &[0.05, 0.1, 0.2] {
        let mut total = 0.0;
        for seed in 0..10u64 {
            let g = generate_sbm(200, 2, 0.1, p_inter, 4, 0.5, seed).unwrap();
            total += adjacency_operator(&g).norm_estimate;
        }
        means.push(total / 10.0);
    }
    let elapsed = start.elapsed();
    let pass = means[0] <= means[1] && means[1] <= means[2] && elapsed.as_secs_f64() < 30.0;
    report(
        "07-sbm-spectral-trend",
        pass,
        &format!("means {:?}, {elapsed:?}", means),
    );
}

#[test]
fn criterion_08_smoke_training() {
    let start = Instant::now();
    let mut cfg = ExperimentConfig::smoke_default();
    cfg.epochs = 50;
    let mut all_above = true;
    let mut min_entropy = f64::INFINITY;
    let mut details = String::new();
    for seed in 0..5u64 {
        let run = run_training(&cfg, seed).unwrap();
        all_above &= run.accuracy > run.majority_baseline;
        min_entropy = min_entropy.min(run.min_flip_entropy);
        details.push_str(&format!(
            "seed {seed}: acc {:.3} > base {:.3}; ",
            run.accuracy, run.majority_baseline
        ));
    }
    // bit-identical rerun for one seed
    let a = run_training(&cfg, 0).unwrap();
    let b = run_training(&cfg, 0).unwrap();
    let deterministic = a.metrics.to_json() == b.metrics.to_json() && a.predictions == b.predictions;
    let elapsed = start.elapsed();
    let pass =
        all_above && min_entropy > 0.3 && deterministic && elapsed.as_secs_f64() < 300.0;
    report(
        "08-smoke-training",
        pass,
        &format!(
            "{details}min entropy {min_entropy:.3} > 0.3, deterministic {deterministic}, {elapsed:?}"
        ),
    );
}

#[test]
fn criterion_09_robustness_ordering_soft() {
    let mut cfg = ExperimentConfig::smoke_default();
    cfg.epochs = 30;
    cfg.seeds = (0..5).collect();
    let report_data = run_robustness_suite(&cfg).unwrap();
    let d5 = report_data.mean_delta("del5").unwrap();
    let d10 = report_data.mean_delta("del10").unwrap();
    let ordered = d10 <= d5 + 1e-12;
    // soft criterion: the ordering is logged and quantified, never fatal
    println!(
        "criterion 09-robustness-ordering: {} (mean dAUC del10 {d10:+.4}% vs del5 {d5:+.4}%{})",
        if ordered { "PASS" } else { "SOFT-FAIL" },
        if ordered { String::new() } else { format!(", excess {:+.4}pp", d10 - d5) }
    );
    report(
        "09-robustness-suite-ran",
        report_data.rows.len() == 30,
        &format!("{} rows over 5 seeds", report_data.rows.len()),
    );
}

#[test]
fn criterion_10_causal_sanity() {
    let mut cfg = ExperimentConfig::smoke_default();
    cfg.epochs = 10;
    cfg.seeds = vec![0, 1, 2];
    cfg.hyper.delta = 0.0;
    let zero = resprop::pipeline::run_causal_suite(&cfg).unwrap();
    let exact_zero = zero.counterfactual_delta_auc == 0.0;
    cfg.hyper.delta = 0.10;
    cfg.seeds = vec![0, 1];
    let live = resprop::pipeline::run_causal_suite(&cfg).unwrap();
    let in_range = (0.0..=1.0).contains(&live.pn_lower)
        && (0.0..=1.0).contains(&live.ps_lower)
        && (0.0..=1.0).contains(&zero.pn_lower)
        && (0.0..=1.0).contains(&zero.ps_lower);
    let pass = exact_zero && in_range;
    report(
        "10-causal-sanity",
        pass,
        &format!(
            "delta0 counterfactual {} (exact zero {exact_zero}), PN {:.3} PS {:.3} in range {in_range}",
            zero.counterfactual_delta_auc, live.pn_lower, live.ps_lower
        ),
    );
}
