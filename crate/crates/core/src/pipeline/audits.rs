//! Finite-difference audit battery over every trainable operation.
//!
//! Each family runs `configs` random instances and reports the worst
//! per-coordinate relative error across all of them. The `gradcheck` CLI
//! subcommand prints one line per family; the acceptance suite asserts every
//! family stays below the 1e-4 tolerance.

use crate::adversarial::{
    candidate_pairs, discriminator_backward, discriminator_forward, discriminator_input_gradient,
    discriminator_param_shapes, discriminator_penalty_path, generator_backward,
    generator_flip_probs, generator_spec, DiscriminatorInput,
};
use crate::attention::{attention_backward, attention_forward, AttentionConfig, AttnContext};
use crate::dense::Mat;
use crate::graph::SparseGraph;
use crate::nn::{
    audit_matrix_grad, audit_param_grads, backward_mlp, contrastive_loss, forward_mlp,
    Activation, AuditConfig, MlpSpec, ParamBlock,
};
use crate::residual::{
    confidence_backward, estimate_confidence, init_residual, propagate_residual,
    propagate_residual_cached, reintegrate_backward, reintegrate_residual,
    residual_backward_confidence, ConfidenceVector,
};
use crate::rng;

#[derive(Debug, Clone)]
pub struct AuditLine {
    pub family: &'static str,
    pub configs: usize,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl AuditLine {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

fn random_graph(rng: &mut rand_chacha::ChaCha8Rng, n: usize, p: f64, d: usize) -> SparseGraph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng::uniform(rng, 0.0, 1.0) < p {
                edges.push((i, j));
            }
        }
    }
    if edges.is_empty() {
        edges.push((0, 1));
    }
    let feats = Mat::from_vec(n, d, (0..n * d).map(|_| rng::gaussian(rng)).collect());
    SparseGraph::new(n, &edges, feats).unwrap()
}

/// Run every audit family at `configs` random instances each.
pub fn run_all(configs: usize, seed: u64) -> Vec<AuditLine> {
    vec![
        audit_mlp(configs, seed),
        audit_contrastive(configs, seed),
        audit_attention(configs, seed),
        audit_temporal_attention(configs, seed),
        audit_confidence(configs, seed),
        audit_discriminator(configs, seed),
        audit_gp_penalty(configs, seed),
        audit_generator(configs, seed),
        audit_residual_unroll(configs, seed),
        audit_reintegration(configs, seed),
        audit_diffusion_unroll(configs, seed),
    ]
}

pub fn audit_mlp(configs: usize, seed: u64) -> AuditLine {
    let aud = AuditConfig::default();
    let mut worst = 0.0f64;
    for c in 0..configs as u64 {
        let mut r = rng::seeded(seed ^ c, 0xad01);
        let widths = vec![3 + (c % 3) as usize, 4, 2 + (c % 2) as usize];
        let acts = [Activation::Gelu, Activation::Tanh, Activation::Sigmoid];
        let spec = MlpSpec::new(widths, acts[(c % 3) as usize], Activation::None);
        let mut params = spec.init_params(seed.wrapping_add(c));
        let rows = 3;
        let x = Mat::from_vec(
            rows,
            spec.input_dim(),
            (0..rows * spec.input_dim()).map(|_| rng::gaussian(&mut r)).collect(),
        );
        let w = Mat::from_vec(
            rows,
            spec.output_dim(),
            (0..rows * spec.output_dim()).map(|_| rng::gaussian(&mut r)).collect(),
        );
        let (_, cache) = forward_mlp(&spec, &params, &x).unwrap();
        params.zero_grads();
        backward_mlp(&spec, &mut params, &cache, &w).unwrap();
        let analytic = params.grads.clone();
        let outcome = audit_param_grads(
            &params,
            &analytic,
            |p| {
                let (y, _) = forward_mlp(&spec, p, &x).unwrap();
                y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
            },
            &aud,
        );
        worst = worst.max(outcome.max_rel_err);
    }
    AuditLine { family: "mlp", configs, max_rel_err: worst, tol: aud.tol }
}

pub fn audit_contrastive(configs: usize, seed: u64) -> AuditLine {
    let aud = AuditConfig::default();
    let mut worst = 0.0f64;
    for c in 0..configs as u64 {
        let mut r = rng::seeded(seed ^ c, 0xad02);
        let n = 4;
        let d = 3;
        let a = Mat::from_vec(n, d, (0..n * d).map(|_| rng::gaussian(&mut r) + 0.3).collect());
        let p = Mat::from_vec(n, d, (0..n * d).map(|_| rng::gaussian(&mut r) + 0.3).collect());
        let negs: Vec<Vec<usize>> = (0..n)
            .map(|i| (0..n).filter(|&j| j != i).take(2).collect())
            .collect();
        let tau = 0.3;
        let (_, grads) = contrastive_loss(&a, &p, &negs, tau).unwrap();
        let oa = audit_matrix_grad(
            &a,
            &grads.d_anchors,
            |x| contrastive_loss(x, &p, &negs, tau).unwrap().0,
            &aud,
        );
        let op = audit_matrix_grad(
            &p,
            &grads.d_positives,
            |x| contrastive_loss(&a, x, &negs, tau).unwrap().0,
            &aud,
        );
        worst = worst.max(oa.max_rel_err).max(op.max_rel_err);
    }
    AuditLine { family: "contrastive", configs, max_rel_err: worst, tol: aud.tol }
}

fn attention_audit_inner(configs: usize, seed: u64, temporal: bool, salt: u64) -> f64 {
    let aud = AuditConfig::default();
    let mut worst = 0.0f64;
    for c in 0..configs as u64 {
        let mut r = rng::seeded(seed ^ c, salt);
        let n = 5;
        let d = 3;
        let cfg = AttentionConfig {
            heads: 1 + (c % 2) as usize,
            head_dim: 2,
            dropout: 0.0,
            bias_hidden: 2,
            temporal,
        };
        let g = random_graph(&mut r, n, 0.5, d);
        let support: Vec<Vec<usize>> = (0..n).map(|i| g.neighbors(i).to_vec()).collect();
        let x = Mat::from_vec(n, d, (0..n * d).map(|_| rng::gaussian(&mut r)).collect());
        let ts: Vec<f64> = (0..n).map(|_| rng::uniform(&mut r, 0.0, 4.0)).collect();
        let ctx = AttnContext {
            timestamps: temporal.then_some(ts.as_slice()),
            dropout_seed: None,
        };
        let mut params = cfg.init_params(d, seed.wrapping_add(c));
        let w = Mat::from_vec(
            n,
            cfg.heads * cfg.head_dim,
            (0..n * cfg.heads * cfg.head_dim).map(|_| rng::gaussian(&mut r)).collect(),
        );
        let (_, cache) = attention_forward(&support, &x, &params, &cfg, ctx).unwrap();
        params.zero_grads();
        let dx = attention_backward(&mut params, &cfg, &cache, &w).unwrap();
        let analytic = params.grads.clone();
        let po = audit_param_grads(
            &params,
            &analytic,
            |p| {
                let (o, _) = attention_forward(&support, &x, p, &cfg, ctx).unwrap();
                o.z.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
            },
            &aud,
        );
        let frozen = params.clone();
        let xo = audit_matrix_grad(
            &x,
            &dx,
            |xp| {
                let (o, _) = attention_forward(&support, xp, &frozen, &cfg, ctx).unwrap();
                o.z.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
            },
            &aud,
        );
        worst = worst.max(po.max_rel_err).max(xo.max_rel_err);
    }
    worst
}

pub fn audit_attention(configs: usize, seed: u64) -> AuditLine {
    AuditLine {
        family: "attention",
        configs,
        max_rel_err: attention_audit_inner(configs, seed, false, 0xad03),
        tol: AuditConfig::default().tol,
    }
}

pub fn audit_temporal_attention(configs: usize, seed: u64) -> AuditLine {
    AuditLine {
        family: "temporal-attention",
        configs,
        max_rel_err: attention_audit_inner(configs, seed, true, 0xad04),
        tol: AuditConfig::default().tol,
    }
}

pub fn audit_confidence(configs: usize, seed: u64) -> AuditLine {
    let aud = AuditConfig::default();
    let mut worst = 0.0f64;
    for c in 0..configs as u64 {
        let mut r = rng::seeded(seed ^ c, 0xad05);
        let n = 5;
        let d = 3;
        let g = random_graph(&mut r, n, 0.5, d);
        let mut params = ParamBlock::glorot(&[(1, 2 * d), (1, 1)], seed.wrapping_add(c));
        let weights: Vec<f64> = (0..n).map(|_| rng::gaussian(&mut r)).collect();
        let cv = estimate_confidence(&g, g.features(), &params).unwrap();
        params.zero_grads();
        confidence_backward(&g, g.features(), &mut params, &cv.c, &weights).unwrap();
        let analytic = params.grads.clone();
        let outcome = audit_param_grads(
            &params,
            &analytic,
            |p| {
                let cc = estimate_confidence(&g, g.features(), p).unwrap();
                cc.c.iter().zip(&weights).map(|(a, b)| a * b).sum()
            },
            &aud,
        );
        worst = worst.max(outcome.max_rel_err);
    }
    AuditLine { family: "confidence", configs, max_rel_err: worst, tol: aud.tol }
}

pub fn audit_discriminator(configs: usize, seed: u64) -> AuditLine {
    let aud = AuditConfig::default();
    let mut worst = 0.0f64;
    for c in 0..configs as u64 {
        let mut r = rng::seeded(seed ^ c, 0xad06);
        let n = 5;
        let d = 2;
        let g = random_graph(&mut r, n, 0.5, d);
        let input = DiscriminatorInput::from_graph(&g);
        let layers = 1 + (c % 2) as usize;
        let mut params =
            ParamBlock::glorot(&discriminator_param_shapes(d, 3, layers), seed.wrapping_add(c));
        let h0 = Mat::from_vec(n, d, (0..n * d).map(|_| rng::gaussian(&mut r)).collect());
        let (_, cache) = discriminator_forward(&input, &h0, &params, layers).unwrap();
        params.zero_grads();
        let grads = discriminator_backward(&input, &mut params, &cache, 1.0);
        let analytic = params.grads.clone();
        let po = audit_param_grads(
            &params,
            &analytic,
            |p| discriminator_forward(&input, &h0, p, layers).unwrap().0,
            &aud,
        );
        let io = audit_matrix_grad(
            &h0,
            &grads.d_h0,
            |hp| discriminator_forward(&input, hp, &params, layers).unwrap().0,
            &aud,
        );
        worst = worst.max(po.max_rel_err).max(io.max_rel_err);
    }
    AuditLine { family: "discriminator", configs, max_rel_err: worst, tol: aud.tol }
}

pub fn audit_gp_penalty(configs: usize, seed: u64) -> AuditLine {
    let aud = AuditConfig::default();
    let mut worst = 0.0f64;
    for c in 0..configs as u64 {
        let mut r = rng::seeded(seed ^ c, 0xad07);
        let n = 5;
        let d = 2;
        let layers = 2;
        let gp = 10.0;
        let g = random_graph(&mut r, n, 0.5, d);
        let input = DiscriminatorInput::from_graph(&g);
        let mut params =
            ParamBlock::glorot(&discriminator_param_shapes(d, 3, layers), seed.wrapping_add(c));
        let h0 = Mat::from_vec(n, d, (0..n * d).map(|_| rng::gaussian(&mut r)).collect());
        params.zero_grads();
        discriminator_penalty_path(&input, &h0, &mut params, gp, layers).unwrap();
        let analytic = params.grads.clone();
        let outcome = audit_param_grads(
            &params,
            &analytic,
            |p| {
                let (_, cache) = discriminator_forward(&input, &h0, p, layers).unwrap();
                let gmat = discriminator_input_gradient(&input, p, &cache);
                let gn = gmat.frobenius_norm();
                gp * (gn - 1.0) * (gn - 1.0)
            },
            &aud,
        );
        worst = worst.max(outcome.max_rel_err);
    }
    AuditLine { family: "wgan-gp-penalty", configs, max_rel_err: worst, tol: aud.tol }
}

pub fn audit_generator(configs: usize, seed: u64) -> AuditLine {
    let aud = AuditConfig::default();
    let mut worst = 0.0f64;
    for c in 0..configs as u64 {
        let mut r = rng::seeded(seed ^ c, 0xad08);
        let n = 5;
        let d = 2;
        let g = random_graph(&mut r, n, 0.4, d);
        let spec = generator_spec(d, 0, 3);
        let mut params = spec.init_params(seed.wrapping_add(c));
        let x = Mat::from_vec(n, d, (0..n * d).map(|_| rng::gaussian(&mut r)).collect());
        let cands = candidate_pairs(&g, seed ^ c);
        let dp: Vec<f64> = (0..cands.len()).map(|_| rng::gaussian(&mut r)).collect();
        let (_, cache) = generator_flip_probs(&g, &x, &spec, &params, &cands).unwrap();
        params.zero_grads();
        generator_backward(&spec, &mut params, &cache, &dp).unwrap();
        let analytic = params.grads.clone();
        let outcome = audit_param_grads(
            &params,
            &analytic,
            |p| {
                let (f, _) = generator_flip_probs(&g, &x, &spec, p, &cands).unwrap();
                f.p.iter().zip(&dp).map(|(a, b)| a * b).sum()
            },
            &aud,
        );
        worst = worst.max(outcome.max_rel_err);
    }
    AuditLine { family: "generator", configs, max_rel_err: worst, tol: aud.tol }
}

pub fn audit_residual_unroll(configs: usize, seed: u64) -> AuditLine {
    let tol = 1e-4;
    let mut worst = 0.0f64;
    for cidx in 0..configs as u64 {
        let mut r = rng::seeded(seed ^ cidx, 0xad09);
        let n = 5;
        let g = random_graph(&mut r, n, 0.5, 1);
        let op = crate::operator::normalize_adjacency(&g, true);
        let c: Vec<f64> = (0..n).map(|_| rng::uniform(&mut r, 0.15, 0.85)).collect();
        let conf = ConfidenceVector::new(c.clone()).unwrap();
        let r0 = Mat::from_vec(n, 2, (0..n * 2).map(|_| rng::gaussian(&mut r)).collect());
        let upstream = Mat::from_vec(n, 2, (0..n * 2).map(|_| rng::gaussian(&mut r)).collect());
        let steps = 5;
        let state = init_residual(&r0, &Mat::zeros(n, 2)).unwrap();
        let out = propagate_residual_cached(state, &op, &conf, steps, 0.0);
        let dc = residual_backward_confidence(&out, &op, &conf, &upstream);
        let h = 1e-6;
        for i in 0..n {
            let run = |ci: f64| {
                let mut cp = c.clone();
                cp[i] = ci;
                let s = propagate_residual(
                    init_residual(&r0, &Mat::zeros(n, 2)).unwrap(),
                    &op,
                    &ConfidenceVector::new(cp).unwrap(),
                    steps,
                    0.0,
                );
                s.r.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum::<f64>()
            };
            let fd = (run(c[i] + h) - run(c[i] - h)) / (2.0 * h);
            let rel = (dc[i] - fd).abs() / dc[i].abs().max(fd.abs()).max(1e-5);
            worst = worst.max(rel);
        }
    }
    AuditLine { family: "residual-unroll", configs, max_rel_err: worst, tol }
}

pub fn audit_reintegration(configs: usize, seed: u64) -> AuditLine {
    let tol = 1e-4;
    let mut worst = 0.0f64;
    for cidx in 0..configs as u64 {
        let mut r = rng::seeded(seed ^ cidx, 0xad0a);
        let n = 4;
        let ch = 3;
        let z0 = Mat::zeros(n, ch);
        let mut state = init_residual(&z0, &Mat::zeros(n, ch)).unwrap();
        state.r0 = Mat::from_vec(n, ch, (0..n * ch).map(|_| rng::gaussian(&mut r)).collect());
        state.r = Mat::from_vec(n, ch, (0..n * ch).map(|_| rng::gaussian(&mut r) + 0.3).collect());
        let labeled = [0usize, 1];
        let eps = 1e-8;
        let upstream = Mat::from_vec(n, ch, (0..n * ch).map(|_| rng::gaussian(&mut r)).collect());
        let dr = reintegrate_backward(&state, &labeled, eps, &upstream);
        let h = 1e-6;
        for idx in 0..n * ch {
            let eval = |delta: f64| {
                let mut s = state.clone();
                s.r.data_mut()[idx] += delta;
                let z = reintegrate_residual(&z0, &s, &labeled, eps).unwrap();
                z.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum::<f64>()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let g = dr.data()[idx];
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-5);
            worst = worst.max(rel);
        }
    }
    AuditLine { family: "reintegration", configs, max_rel_err: worst, tol }
}

pub fn audit_diffusion_unroll(configs: usize, seed: u64) -> AuditLine {
    let tol = 1e-4;
    let mut worst = 0.0f64;
    for cidx in 0..configs as u64 {
        let mut r = rng::seeded(seed ^ cidx, 0xad0b);
        let n = 4;
        let ch = 2;
        let g = random_graph(&mut r, n, 0.5, 1);
        let op = crate::operator::normalize_adjacency(&g, true);
        let gamma = 0.5;
        let steps = 6;
        let zr = Mat::from_vec(
            n,
            ch,
            (0..n * ch).map(|_| rng::uniform(&mut r, 0.1, 0.9)).collect(),
        );
        let upstream = Mat::from_vec(n, ch, (0..n * ch).map(|_| rng::gaussian(&mut r)).collect());
        let (_, cache) = crate::diffusion::robust_diffusion_cached(&zr, &op, gamma, steps, 0.0);
        let dzr = crate::diffusion::diffusion_backward(&cache, &op, gamma, &upstream);
        let h = 1e-6;
        for idx in 0..n * ch {
            let eval = |delta: f64| {
                let mut z = zr.clone();
                z.data_mut()[idx] += delta;
                let res = crate::diffusion::robust_diffusion(&z, &op, gamma, steps, 0.0);
                res.z_inf.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum::<f64>()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let gv = dzr.data()[idx];
            let rel = (gv - fd).abs() / gv.abs().max(fd.abs()).max(1e-5);
            worst = worst.max(rel);
        }
    }
    AuditLine { family: "diffusion-unroll", configs, max_rel_err: worst, tol }
}
