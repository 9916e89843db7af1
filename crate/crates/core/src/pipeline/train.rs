//! End-to-end training and inference.
//!
//! One epoch: encoder forward and contrastive loss; per-node confidences and
//! initial residual; spectral rescale by `min(1, 1/(nu+eps))` plus confidence
//! ceiling; T residual updates and reintegration; n_c critic updates then one
//! generator update under WGAN-GP; perturbed adjacency rebuild with
//! renormalization; attention outputs; robust diffusion; fusion and ensemble;
//! then a total-loss update of every module. Deterministic per seed.

use crate::adversarial::{
    apply_flip_budget, bernoulli_entropy_mean, candidate_pairs, discriminator_backward,
    discriminator_forward, discriminator_param_shapes, discriminator_penalty_path,
    generator_backward, generator_flip_probs, generator_spec, perturbed_adjacency,
    wgan_gp_losses, DiscriminatorInput, FlipProbabilities, GanDiagnostics,
};
use crate::attention::{
    attention_backward, attention_forward, AttentionConfig, AttnContext,
};
use crate::dense::Mat;
use crate::diffusion::{
    diffusion_backward, ensemble, fuse_predictions, robust_diffusion, robust_diffusion_cached,
};
use crate::error::{Error, Result};
use crate::graph::SparseGraph;
use crate::metrics::{macro_roc_auc, complexity_estimate, ComplexityInputs, MetricReport};
use crate::nn::{
    backward_mlp, cross_entropy_labeled, contrastive_loss, forward_mlp, sample_negatives,
    softmax_rows, AdamW, Activation, MlpSpec, ParamBlock,
};
use crate::operator::{normalize_adjacency, PropagationOperator};
use crate::pipeline::config::ExperimentConfig;
use crate::residual::{
    confidence_backward, estimate_confidence, init_residual, pad_labels,
    propagate_residual, propagate_residual_cached, reintegrate_backward,
    reintegrate_residual, residual_backward_confidence, ConfidenceVector,
};
use crate::rng::{self, salt};
use crate::spectral::{enforce_contraction, ClipReport, PowerIterConfig};

use rand::RngExt;

/// Frozen parameters plus everything the evaluation suites need to rebuild
/// inference on modified structures.
pub struct TrainedModel {
    pub cfg: ExperimentConfig,
    pub seed: u64,
    /// Graph with only the observed training labels attached.
    pub graph: SparseGraph,
    /// Ground-truth labels where known (evaluation only).
    pub truth: Vec<Option<usize>>,
    pub eval_nodes: Vec<usize>,
    pub observed_nodes: Vec<usize>,
    pub encoder_spec: MlpSpec,
    pub encoder: ParamBlock,
    pub conf: ParamBlock,
    pub attn_cfg: AttentionConfig,
    pub attn: ParamBlock,
    pub head_spec: MlpSpec,
    pub head: ParamBlock,
    pub gen_spec: MlpSpec,
    pub gen: ParamBlock,
    pub disc: ParamBlock,
    pub candidates: Vec<(usize, usize)>,
    /// Budgeted flip probabilities from the final epoch (None when the
    /// generator is disabled or never ran).
    pub final_flips: Option<FlipProbabilities>,
}

/// Everything a single training run emits.
pub struct RunArtifacts {
    pub metrics: MetricReport,
    pub diagnostics: Vec<GanDiagnostics>,
    pub clip_report: ClipReport,
    pub residual_trace: Vec<f64>,
    pub predictions: Mat,
    pub accuracy: f64,
    pub majority_baseline: f64,
    pub loss_history: Vec<f64>,
    pub warnings: Vec<String>,
    pub min_flip_entropy: f64,
    pub model: TrainedModel,
}

/// Structure-dependent state of one inference pass.
pub struct InferenceOutput {
    pub predictions: Mat,
    pub fused: Mat,
    pub z_inf: Mat,
    pub z_r: Mat,
    pub embeddings: Mat,
    pub clip_report: ClipReport,
    pub residual_trace: Vec<f64>,
    pub kappa: f64,
}

fn derive_seed(seed: u64, epoch: usize, lane: u64) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ lane
}

fn check_finite(value: f64, module: &'static str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { module })
    }
}

fn last_weight_grad_norm(params: &ParamBlock, tensor_idx: usize) -> f64 {
    crate::dense::norm2(params.grad(tensor_idx))
}

/// Row softmax backward: given S = softmax(logits) and dL/dS, return
/// dL/dlogits.
fn softmax_backward_rows(softmax_out: &Mat, upstream: &Mat) -> Mat {
    let mut out = Mat::zeros(softmax_out.rows(), softmax_out.cols());
    for i in 0..softmax_out.rows() {
        let s = softmax_out.row(i);
        let u = upstream.row(i);
        let weighted: f64 = s.iter().zip(u).map(|(a, b)| a * b).sum();
        let o = out.row_mut(i);
        for k in 0..s.len() {
            o[k] = s[k] * (u[k] - weighted);
        }
    }
    out
}

/// Node features fed to multi-scale propagation: the edge-to-node
/// aggregation stage when edge features exist, raw features otherwise. The
/// aggregation parameters are seeded once per run.
fn node_features(g: &SparseGraph, seed: u64) -> Result<Mat> {
    match g.edge_features() {
        Some(ef) => {
            let d_h = g.features().cols().max(4);
            let params = ParamBlock::glorot(&[(d_h, ef.cols()), (d_h, 1)], derive_seed(seed, 0, 7));
            crate::synthesis::aggregate_edge_features(g, &params)
        }
        None => Ok(g.features().clone()),
    }
}

/// Unit-norm embedding rows (zero rows pass through). The contrastive
/// objective is cosine-based, so embedding scale is unconstrained; the GAN
/// nets see normalized inputs to keep their sigmoids out of saturation.
fn row_normalized(h: &Mat) -> Mat {
    let mut out = h.clone();
    for i in 0..out.rows() {
        let n = crate::dense::norm2(out.row(i));
        if n > 0.0 {
            for v in out.row_mut(i) {
                *v /= n;
            }
        }
    }
    out
}

/// Residual-only prediction stream: clip to [0,1] and renormalize rows
/// (uniform fallback for all-zero rows) so the ensemble convexity holds.
fn residual_stream(z_r: &Mat) -> Mat {
    let mut out = z_r.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = v.clamp(0.0, 1.0);
            sum += *v;
        }
        if sum > 0.0 {
            for v in row.iter_mut() {
                *v /= sum;
            }
        } else {
            let u = 1.0 / row.len() as f64;
            for v in row.iter_mut() {
                *v = u;
            }
        }
    }
    out
}

/// (train graph with masked labels, ground truth, observed nodes, eval nodes)
type LabelSplit = (SparseGraph, Vec<Option<usize>>, Vec<usize>, Vec<usize>);

/// Split a fully labeled graph into observed and held-out label sets; a
/// partially labeled graph keeps its labeled set as observed and is also
/// evaluated on it (degenerate but reported).
fn split_labels(g: &SparseGraph, labeled_fraction: f64, seed: u64) -> Result<LabelSplit> {
    let truth: Vec<Option<usize>> = (0..g.n_nodes()).map(|i| g.label(i)).collect();
    let labeled: Vec<usize> = g.labeled_nodes();
    if labeled.is_empty() {
        return Err(Error::Config("graph has no labels to train on".into()));
    }
    let fully_labeled = labeled.len() == g.n_nodes();
    let observed: Vec<usize> = if fully_labeled && labeled_fraction < 1.0 {
        let want = ((labeled_fraction * g.n_nodes() as f64).round() as usize).max(1);
        let mut rng = rng::seeded(seed, salt::BATCH ^ 0x0b5e);
        let mut picks = rng::sample_distinct(&mut rng, g.n_nodes(), want);
        picks.sort_unstable();
        picks
    } else {
        labeled.clone()
    };
    let observed_set: std::collections::HashSet<usize> = observed.iter().copied().collect();
    let eval_nodes: Vec<usize> = (0..g.n_nodes())
        .filter(|i| truth[*i].is_some() && !observed_set.contains(i))
        .collect();
    let eval_nodes = if eval_nodes.is_empty() { observed.clone() } else { eval_nodes };
    let masked: Vec<Option<usize>> = (0..g.n_nodes())
        .map(|i| {
            if observed_set.contains(&i) {
                truth[i]
            } else {
                None
            }
        })
        .collect();
    let g_train = g
        .with_edges(g.edges())?
        .with_labels(masked, g.n_classes().max(1))?;
    Ok((g_train, truth, observed, eval_nodes))
}

pub fn run_training(cfg: &ExperimentConfig, seed: u64) -> Result<RunArtifacts> {
    let raw_graph = cfg.build_graph(seed)?;
    run_training_with_graph(cfg, seed, raw_graph)
}

/// Train on a caller-supplied graph (the config's graph source is ignored).
/// This is the entry point for graphs carrying data the text format cannot,
/// such as per-edge feature vectors.
pub fn run_training_with_graph(
    cfg: &ExperimentConfig,
    seed: u64,
    raw_graph: SparseGraph,
) -> Result<RunArtifacts> {
    cfg.validate()?;
    let hp = cfg.hyper.clone();
    let (g, truth, observed, eval_nodes) = split_labels(&raw_graph, hp.labeled_fraction, seed)?;
    let n = g.n_nodes();
    let n_classes = g.n_classes().max(2);
    let pi_pre = PowerIterConfig {
        max_iters: hp.power_iters_preprocess,
        tol: 0.0,
        seed,
    };

    // clean operator and multi-scale features, fixed across epochs; graphs
    // with edge features run the aggregation stage as preprocessing (its
    // parameters are seeded, matching the one-shot setup step)
    let clean_op = normalize_adjacency(&g, hp.with_self_loops);
    let base_features = node_features(&g, seed)?;
    let x_ms = crate::synthesis::multi_scale_threaded(
        &clean_op,
        &base_features,
        hp.multi_scale_k,
        cfg.threads,
    );
    let d_in = x_ms.concatenated.cols();

    // parameter blocks
    let encoder_spec = MlpSpec::new(
        vec![d_in, hp.proj_hidden, hp.embed_dim],
        Activation::Gelu,
        Activation::None,
    );
    let mut encoder = encoder_spec.init_params(derive_seed(seed, 0, 1));
    let mut conf = ParamBlock::glorot(&[(1, 2 * hp.embed_dim), (1, 1)], derive_seed(seed, 0, 2));
    let attn_cfg = AttentionConfig {
        heads: hp.heads,
        head_dim: hp.head_dim,
        dropout: hp.attn_dropout,
        bias_hidden: hp.head_dim,
        temporal: false,
    };
    let mut attn = attn_cfg.init_params(hp.embed_dim, derive_seed(seed, 0, 3));
    let head_spec = MlpSpec::new(
        vec![hp.heads * hp.head_dim, n_classes],
        Activation::None,
        Activation::None,
    );
    let mut head = head_spec.init_params(derive_seed(seed, 0, 4));
    let gen_spec = generator_spec(hp.embed_dim, g.edge_features().map_or(0, Mat::cols), hp.d_g);
    let mut gen = gen_spec.init_params(derive_seed(seed, 0, 5));
    let mut disc = ParamBlock::glorot(
        &discriminator_param_shapes(hp.embed_dim, hp.disc_hidden, hp.disc_layers),
        derive_seed(seed, 0, 6),
    );

    let mut adam_enc = AdamW::new(encoder.len(), hp.lr_main, hp.weight_decay);
    let mut adam_conf = AdamW::new(conf.len(), hp.lr_main, hp.weight_decay);
    let mut adam_attn = AdamW::new(attn.len(), hp.lr_main, hp.weight_decay);
    let mut adam_head = AdamW::new(head.len(), hp.lr_main, hp.weight_decay);
    let mut adam_gen = AdamW::new(gen.len(), hp.lr_gan, hp.weight_decay);
    let mut adam_disc = AdamW::new(disc.len(), hp.lr_gan, hp.weight_decay);

    let candidates = candidate_pairs(&g, seed);
    let observed_labels: Vec<usize> = (0..n).map(|i| g.label(i).unwrap_or(0)).collect();
    let real_in = DiscriminatorInput::from_graph(&g);
    let (z0, y_obs) = pad_labels(&g, hp.pad_mode);

    let mut diagnostics: Vec<GanDiagnostics> = Vec::new();
    let mut loss_history: Vec<f64> = Vec::new();
    let mut warnings: Vec<String> = Vec::new();
    let mut min_flip_entropy = f64::INFINITY;
    let mut final_flips: Option<FlipProbabilities> = None;

    for epoch in 0..cfg.epochs {
        let eseed = derive_seed(seed, epoch, 0x10);

        // --- encoder forward + contrastive objective ------------------------
        let (h, cache_h) = forward_mlp(&encoder_spec, &encoder, &x_ms.concatenated)?;
        let mut dh = Mat::zeros(n, hp.embed_dim);
        let mut l_ssl = 0.0;
        let mut ssl_aug: Option<(crate::nn::MlpCache, Mat)> = None;
        if cfg.modules.ssl && hp.lambda_ssl > 0.0 {
            let mut aug_rng = rng::seeded(eseed, salt::AUGMENT);
            let mut x_aug = x_ms.concatenated.clone();
            for v in x_aug.data_mut() {
                if aug_rng.random::<f64>() < hp.aug_dropout {
                    *v = 0.0;
                }
            }
            let (h_aug, cache_aug) = forward_mlp(&encoder_spec, &encoder, &x_aug)?;
            let batch_size = hp.batch_size.min(n);
            let mut batch_rng = rng::seeded(eseed, salt::BATCH);
            let mut batch = rng::sample_distinct(&mut batch_rng, n, batch_size);
            batch.sort_unstable();
            let index_of: std::collections::HashMap<usize, usize> =
                batch.iter().enumerate().map(|(k, &v)| (v, k)).collect();
            let mut anchors = Mat::zeros(batch.len(), hp.embed_dim);
            let mut positives = Mat::zeros(batch.len(), hp.embed_dim);
            for (k, &node) in batch.iter().enumerate() {
                anchors.row_mut(k).copy_from_slice(h.row(node));
                positives.row_mut(k).copy_from_slice(h_aug.row(node));
            }
            let mut neg_lists: Vec<Vec<usize>> = Vec::with_capacity(batch.len());
            for &node in &batch {
                let picks = sample_with_shrinking_k(&g, &h, node, hp.negatives, eseed, &batch)?;
                neg_lists.push(
                    picks
                        .into_iter()
                        .filter_map(|j| index_of.get(&j).copied())
                        .collect(),
                );
            }
            let (loss, grads) = contrastive_loss(&anchors, &positives, &neg_lists, hp.tau)?;
            check_finite(loss, "contrastive")?;
            l_ssl = loss;
            let mut dh_aug = Mat::zeros(n, hp.embed_dim);
            for (k, &node) in batch.iter().enumerate() {
                for (dv, gv) in dh.row_mut(node).iter_mut().zip(grads.d_anchors.row(k)) {
                    *dv += hp.lambda_ssl * gv;
                }
                for (dv, gv) in dh_aug.row_mut(node).iter_mut().zip(grads.d_positives.row(k)) {
                    *dv += hp.lambda_ssl * gv;
                }
            }
            ssl_aug = Some((cache_aug, dh_aug));
        }

        // --- confidences, safeguards, residual correction -------------------
        let conf_raw = estimate_confidence(&g, &h, &conf)?;
        let (op_clip, c_capped, clip_report) = enforce_contraction(
            &clean_op,
            &conf_raw.c,
            hp.clip_epsilon,
            hp.confidence_ceiling,
            &pi_pre,
        )?;
        if clip_report.kappa_after > hp.confidence_ceiling * (1.0 + 1e-6) {
            return Err(Error::ContractViolation(format!(
                "kappa {} above ceiling after safeguards at epoch {epoch}",
                clip_report.kappa_after
            )));
        }
        let conf_capped = ConfidenceVector {
            c: c_capped.clone(),
            capped: true,
        };
        let state = init_residual(&z0, &y_obs)?;
        let state = propagate_residual_cached(
            state,
            &op_clip,
            &conf_capped,
            hp.residual_steps,
            hp.convergence_tol,
        );
        let z_r = reintegrate_residual(&z0, &state, &observed, 1e-8)?;

        // --- adversarial updates --------------------------------------------
        let mut op_down = op_clip.clone();
        let gan_active = cfg.modules.gan && hp.delta > 0.0 && !candidates.is_empty();
        if gan_active {
            let h_gan = row_normalized(&h);
            let mut d_loss = 0.0;
            let mut grad_norm_d = 0.0;
            for k in 0..hp.critic_steps {
                let (mut flips, _) = generator_flip_probs(&g, &h_gan, &gen_spec, &gen, &candidates)?;
                apply_flip_budget(&mut flips, hp.delta, g.n_edges());
                let (op_soft, soft) =
                    perturbed_adjacency(&g, &flips, false, false, &pi_pre);
                let fake_in = DiscriminatorInput::from_soft(&g, &soft, hp.support_tol);
                let (s_real, cache_real) =
                    discriminator_forward(&real_in, &h_gan, &disc, hp.disc_layers)?;
                let (s_fake, cache_fake) =
                    discriminator_forward(&fake_in, &h_gan, &disc, hp.disc_layers)?;
                let mut mix_rng = rng::seeded(derive_seed(seed, epoch, 0x20 + k as u64), salt::GP_MIX);
                let u: f64 = mix_rng.random();
                let h_tilde = op_soft.values.matmat(&h_gan, 1);
                let mut h_mix = h_gan.scale(u);
                for (m, t) in h_mix.data_mut().iter_mut().zip(h_tilde.data()) {
                    *m += (1.0 - u) * t;
                }
                disc.zero_grads();
                discriminator_backward(&fake_in, &mut disc, &cache_fake, 1.0);
                discriminator_backward(&real_in, &mut disc, &cache_real, -1.0);
                let (gnorm, _) =
                    discriminator_penalty_path(&real_in, &h_mix, &mut disc, hp.gp_coeff, hp.disc_layers)?;
                let (dl, _) = wgan_gp_losses(s_real, s_fake, gnorm, hp.gp_coeff);
                check_finite(dl, "adversarial")?;
                d_loss = dl;
                grad_norm_d = last_weight_grad_norm(&disc, hp.disc_layers - 1);
                adam_disc.step(&mut disc);
            }

            // generator step
            let (mut flips, gen_cache) =
                generator_flip_probs(&g, &h_gan, &gen_spec, &gen, &candidates)?;
            let scale = apply_flip_budget(&mut flips, hp.delta, g.n_edges());
            let (_, soft) = perturbed_adjacency(&g, &flips, false, false, &pi_pre);
            let fake_in = DiscriminatorInput::from_soft(&g, &soft, hp.support_tol);
            let (s_fake, cache_fake) =
                discriminator_forward(&fake_in, &h_gan, &disc, hp.disc_layers)?;
            let g_loss = -s_fake;
            check_finite(g_loss, "adversarial")?;
            let mut disc_tmp = disc.clone();
            disc_tmp.zero_grads();
            let dgrads = discriminator_backward(&fake_in, &mut disc_tmp, &cache_fake, -1.0);
            let cand_index: std::collections::HashMap<(usize, usize), usize> = flips
                .candidates
                .iter()
                .enumerate()
                .map(|(idx, &(a, b))| ((a.min(b), a.max(b)), idx))
                .collect();
            let mut dp = vec![0.0f64; flips.candidates.len()];
            for (i, list) in fake_in.lists.iter().enumerate() {
                for (idx, &(j, _, _)) in list.iter().enumerate() {
                    let key = (i.min(j), i.max(j));
                    if let Some(&ci) = cand_index.get(&key) {
                        let a = if g.has_edge(key.0, key.1) { 1.0 } else { 0.0 };
                        dp[ci] += dgrads.d_weights[i][idx] * (1.0 - 2.0 * a) * scale;
                    }
                }
            }
            gen.zero_grads();
            generator_backward(&gen_spec, &mut gen, &gen_cache, &dp)?;
            let grad_norm_g = last_weight_grad_norm(&gen, 2 * (gen_spec.n_layers() - 1));
            adam_gen.step(&mut gen);

            // rebuild the downstream perturbed operator with updated flips;
            // the collapse diagnostic reads the generator's raw distribution,
            // before the budget rescale
            let (mut flips_final, _) =
                generator_flip_probs(&g, &h_gan, &gen_spec, &gen, &candidates)?;
            let entropy = bernoulli_entropy_mean(&flips_final.p);
            min_flip_entropy = min_flip_entropy.min(entropy);
            if entropy < 0.3 {
                warnings.push(format!(
                    "epoch {epoch}: flip entropy {entropy:.3} nats below the 0.3 collapse threshold"
                ));
            }
            apply_flip_budget(&mut flips_final, hp.delta, g.n_edges());
            let (op_pert, _) =
                perturbed_adjacency(&g, &flips_final, true, hp.with_self_loops, &pi_pre);
            op_down = op_pert;
            if grad_norm_d > 1.0 || grad_norm_g > 1.0 {
                warnings.push(format!(
                    "epoch {epoch}: final-block gradient norm above 1.0 (d {grad_norm_d:.3}, g {grad_norm_g:.3})"
                ));
            }
            diagnostics.push(GanDiagnostics {
                d_loss,
                g_loss,
                grad_norm_d,
                grad_norm_g,
                flip_entropy: entropy,
            });
            final_flips = Some(flips_final);
        }

        // --- attention, diffusion, fusion ------------------------------------
        let rho_eff = if cfg.modules.attention { hp.rho } else { 0.0 };
        let support = op_down.support(hp.support_tol);
        let (attn_out, attn_cache, logits, head_cache) = {
            let ctx = AttnContext {
                timestamps: None,
                dropout_seed: (hp.attn_dropout > 0.0).then_some(eseed),
            };
            let (out, cache) = attention_forward(&support, &h, &attn, &attn_cfg, ctx)?;
            let (logits, head_cache) = forward_mlp(&head_spec, &head, &out.z)?;
            (out, cache, logits, head_cache)
        };
        let (diff, diff_cache) = if cfg.modules.diffusion {
            let (d, c) = robust_diffusion_cached(
                &z_r,
                &op_down,
                hp.gamma,
                hp.diffusion_max_steps,
                1e-6,
            );
            (d, Some(c))
        } else {
            (
                crate::diffusion::DiffusionResult {
                    z_inf: residual_stream(&z_r),
                    steps: 0,
                    final_delta: 0.0,
                    clip_active: false,
                },
                None,
            )
        };
        let fused = fuse_predictions(&logits, &diff.z_inf, rho_eff)?;
        let (l_sup, d_fused) = cross_entropy_labeled(&fused, &observed_labels, &observed)?;
        check_finite(l_sup, "supervised")?;
        let total = l_sup + hp.lambda_ssl * l_ssl;
        check_finite(total, "total-loss")?;
        loss_history.push(total);

        // --- backward ---------------------------------------------------------
        encoder.zero_grads();
        conf.zero_grads();
        attn.zero_grads();
        head.zero_grads();

        // attention branch
        if rho_eff > 0.0 {
            let softmaxed = softmax_rows(&logits);
            let ds = d_fused.scale(rho_eff);
            let dlogits = softmax_backward_rows(&softmaxed, &ds);
            let dz_attn = backward_mlp(&head_spec, &mut head, &head_cache, &dlogits)?;
            let dx_attn = attention_backward(&mut attn, &attn_cfg, &attn_cache, &dz_attn)?;
            for (dv, gv) in dh.data_mut().iter_mut().zip(dx_attn.data()) {
                *dv += gv;
            }
        }
        if epoch == 0 && !attn_out.empty_nodes.is_empty() {
            warnings.push(format!(
                "{} nodes have empty attention neighborhoods (zero output rows)",
                attn_out.empty_nodes.len()
            ));
        }

        // diffusion -> reintegration -> residual -> confidence branch
        if let Some(dc_cache) = &diff_cache {
            let dzinf = d_fused.scale(1.0 - rho_eff);
            let dz_r = diffusion_backward(dc_cache, &op_down, hp.gamma, &dzinf);
            let dr_t = reintegrate_backward(&state, &observed, 1e-8, &dz_r);
            let dc_capped = residual_backward_confidence(&state, &op_clip, &conf_capped, &dr_t);
            // cap derivative: zero where the ceiling binds
            let dc: Vec<f64> = dc_capped
                .iter()
                .zip(&conf_raw.c)
                .map(|(&d, &c)| if c > hp.confidence_ceiling { 0.0 } else { d })
                .collect();
            let dh_conf = confidence_backward(&g, &h, &mut conf, &conf_raw.c, &dc)?;
            for (dv, gv) in dh.data_mut().iter_mut().zip(dh_conf.data()) {
                *dv += gv;
            }
        }

        // encoder update from both views
        backward_mlp(&encoder_spec, &mut encoder, &cache_h, &dh)?;
        if let Some((cache_aug, dh_aug)) = ssl_aug {
            backward_mlp(&encoder_spec, &mut encoder, &cache_aug, &dh_aug)?;
        }

        adam_enc.step(&mut encoder);
        adam_conf.step(&mut conf);
        if rho_eff > 0.0 {
            adam_attn.step(&mut attn);
            adam_head.step(&mut head);
        }
        for (block, name) in [
            (&encoder, "encoder"),
            (&conf, "confidence"),
            (&attn, "attention"),
            (&head, "head"),
            (&gen, "generator"),
            (&disc, "discriminator"),
        ] {
            if !block.all_finite() {
                return Err(Error::NonFinite { module: name });
            }
        }
    }

    let model = TrainedModel {
        cfg: cfg.clone(),
        seed,
        graph: g,
        truth,
        eval_nodes,
        observed_nodes: observed,
        encoder_spec,
        encoder,
        conf,
        attn_cfg,
        attn,
        head_spec,
        head,
        gen_spec,
        gen,
        disc,
        candidates,
        final_flips,
    };

    let inference = infer(&model, &model.graph, None)?;
    let predictions = if cfg.mc_perturbations > 0 {
        mc_inference(&model, cfg.mc_perturbations)?
    } else {
        inference.predictions.clone()
    };

    let (accuracy, roc) = evaluate(&model, &predictions)?;
    let majority_baseline = majority_baseline(&model);
    let s_pair = crate::metrics::s_pair(&inference.embeddings).unwrap_or(0.0);
    let (c_full, _, _) = complexity_estimate(&ComplexityInputs {
        n_nodes: model.graph.n_nodes(),
        n_edges: model.graph.n_edges(),
        d: hp.embed_dim,
        t: hp.residual_steps,
        k_critic: hp.critic_steps,
        k_neg: hp.negatives,
        heads: hp.heads,
        d_h: hp.head_dim,
        d_g: hp.d_g,
    });
    let metrics = MetricReport {
        accuracy,
        roc_auc: roc,
        s_pair,
        c_epoch_estimate: c_full,
        ..MetricReport::default()
    };

    Ok(RunArtifacts {
        metrics,
        diagnostics,
        clip_report: inference.clip_report,
        residual_trace: inference.residual_trace,
        predictions,
        accuracy,
        majority_baseline,
        loss_history,
        warnings,
        min_flip_entropy,
        model,
    })
}

/// Negative sampling with a per-anchor fallback: shrink k to the pool size
/// when the anchor's eligible pool is smaller than requested.
fn sample_with_shrinking_k(
    g: &SparseGraph,
    h: &Mat,
    node: usize,
    k: usize,
    seed: u64,
    batch: &[usize],
) -> Result<Vec<usize>> {
    match sample_negatives(g, h, node, k, seed, Some(batch)) {
        Ok(v) => Ok(v),
        Err(Error::PoolExhausted { available, .. }) => {
            if available == 0 {
                Ok(Vec::new())
            } else {
                sample_negatives(g, h, node, available, seed, Some(batch))
            }
        }
        Err(e) => Err(e),
    }
}

/// Frozen-parameter inference. `structural_op` overrides the propagation
/// operator everywhere (multi-scale, residual, attention support, diffusion);
/// None uses the clean normalized adjacency of `g`.
pub fn infer(
    model: &TrainedModel,
    g: &SparseGraph,
    structural_op: Option<&PropagationOperator>,
) -> Result<InferenceOutput> {
    let hp = &model.cfg.hyper;
    let base_op = match structural_op {
        Some(op) => op.clone(),
        None => normalize_adjacency(g, hp.with_self_loops),
    };
    let pi = PowerIterConfig {
        max_iters: hp.power_iters_preprocess.max(50),
        tol: 1e-10,
        seed: model.seed,
    };
    let base_features = node_features(g, model.seed)?;
    let x_ms = crate::synthesis::multi_scale_threaded(
        &base_op,
        &base_features,
        hp.multi_scale_k,
        model.cfg.threads,
    );
    let (h, _) = forward_mlp(&model.encoder_spec, &model.encoder, &x_ms.concatenated)?;
    let conf_raw = estimate_confidence(g, &h, &model.conf)?;
    let (op_clip, c_capped, clip_report) = enforce_contraction(
        &base_op,
        &conf_raw.c,
        hp.clip_epsilon,
        hp.confidence_ceiling,
        &pi,
    )?;
    let conf_capped = ConfidenceVector { c: c_capped, capped: true };
    let (z0, y_obs) = pad_labels(g, hp.pad_mode);
    let state = init_residual(&z0, &y_obs)?;
    let state = propagate_residual(
        state,
        &op_clip,
        &conf_capped,
        hp.residual_steps,
        hp.convergence_tol,
    );
    let labeled = g.labeled_nodes();
    let z_r = reintegrate_residual(&z0, &state, &labeled, 1e-8)?;

    let rho_eff = if model.cfg.modules.attention { hp.rho } else { 0.0 };
    let support = op_clip.support(hp.support_tol);
    let (attn_out, _) = attention_forward(
        &support,
        &h,
        &model.attn,
        &model.attn_cfg,
        AttnContext::default(),
    )?;
    let (logits, _) = forward_mlp(&model.head_spec, &model.head, &attn_out.z)?;
    let diff = if model.cfg.modules.diffusion {
        robust_diffusion(&z_r, &op_clip, hp.gamma, hp.diffusion_max_steps, 1e-6)
    } else {
        crate::diffusion::DiffusionResult {
            z_inf: residual_stream(&z_r),
            steps: 0,
            final_delta: 0.0,
            clip_active: false,
        }
    };
    let fused = fuse_predictions(&logits, &diff.z_inf, rho_eff)?;
    let predictions = ensemble(
        &[fused.clone(), diff.z_inf.clone(), residual_stream(&z_r)],
        &hp.ensemble_kappas,
    )?;
    Ok(InferenceOutput {
        predictions,
        fused,
        z_inf: diff.z_inf,
        z_r,
        embeddings: h,
        clip_report,
        residual_trace: state.trace.clone(),
        kappa: state.kappa,
    })
}

/// Monte-Carlo inference: sample hard flips from the final generator
/// probabilities, rebuild the operator per draw, and average predictions.
pub fn mc_inference(model: &TrainedModel, k: usize) -> Result<Mat> {
    let flips = match &model.final_flips {
        Some(f) => f,
        None => return Ok(infer(model, &model.graph, None)?.predictions),
    };
    let hp = &model.cfg.hyper;
    let mut acc: Option<Mat> = None;
    // ordered map: draw order must not depend on hash seeds
    let flip_set: std::collections::BTreeMap<(usize, usize), f64> = flips
        .candidates
        .iter()
        .zip(&flips.p)
        .map(|(&(a, b), &p)| ((a.min(b), a.max(b)), p))
        .collect();
    for draw in 0..k {
        let mut rng = rng::seeded(derive_seed(model.seed, draw, 0x40), salt::CANDIDATES);
        let mut edges: Vec<(usize, usize)> = Vec::new();
        for &(i, j) in model.graph.edges() {
            let p = flip_set.get(&(i, j)).copied().unwrap_or(0.0);
            if rng.random::<f64>() >= p {
                edges.push((i, j));
            }
        }
        for (&(i, j), &p) in &flip_set {
            if !model.graph.has_edge(i, j) && rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
        let g_draw = model.graph.with_edges(&edges)?;
        let op = normalize_adjacency(&g_draw, hp.with_self_loops);
        let out = infer(model, &model.graph, Some(&op))?;
        acc = Some(match acc {
            None => out.predictions,
            Some(a) => a.add(&out.predictions),
        });
    }
    Ok(acc.unwrap().scale(1.0 / k as f64))
}

/// Accuracy and AUC of prediction rows against ground truth on the
/// evaluation nodes.
pub fn evaluate(model: &TrainedModel, predictions: &Mat) -> Result<(f64, f64)> {
    let eval = &model.eval_nodes;
    if eval.is_empty() {
        return Err(Error::invalid("no evaluation nodes"));
    }
    let mut correct = 0usize;
    for &i in eval {
        let truth = model.truth[i].expect("eval node has truth");
        let pred = predictions
            .row(i)
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        if pred == truth {
            correct += 1;
        }
    }
    let accuracy = correct as f64 / eval.len() as f64;

    let labels: Vec<usize> = eval.iter().map(|&i| model.truth[i].unwrap()).collect();
    let n_classes = predictions.cols();
    let mut probs = Mat::zeros(eval.len(), n_classes);
    for (r, &i) in eval.iter().enumerate() {
        probs.row_mut(r).copy_from_slice(predictions.row(i));
    }
    let auc = if n_classes == 2 {
        let scores: Vec<f64> = (0..probs.rows()).map(|r| probs[(r, 1)]).collect();
        let flags: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        crate::metrics::roc_auc(&scores, &flags).unwrap_or(0.5)
    } else {
        macro_roc_auc(&probs, &labels).unwrap_or(0.5)
    };
    Ok((accuracy, auc))
}

/// Majority-class frequency over the evaluation nodes.
pub fn majority_baseline(model: &TrainedModel) -> f64 {
    let mut counts = std::collections::HashMap::new();
    for &i in &model.eval_nodes {
        *counts.entry(model.truth[i].unwrap()).or_insert(0usize) += 1;
    }
    let max = counts.values().copied().max().unwrap_or(0);
    max as f64 / model.eval_nodes.len() as f64
}
