//! Experiment configuration: a complete, serializable description of one run.
//! Unknown JSON keys are rejected; every field is validated before a run
//! starts.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{generate_sbm, load_graph, SparseGraph};
use crate::residual::PadMode;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum GraphSource {
    File {
        path: PathBuf,
    },
    Sbm {
        n: usize,
        blocks: usize,
        p_intra: f64,
        p_inter: f64,
        feature_dim: usize,
        feature_noise: f64,
    },
}

/// Which pipeline stages run. Disabled stages degrade gracefully: without
/// the generator the clean operator is used everywhere; without attention
/// the fusion weight shifts fully onto the diffusion stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModuleFlags {
    pub ssl: bool,
    pub gan: bool,
    pub attention: bool,
    pub diffusion: bool,
}

impl Default for ModuleFlags {
    fn default() -> Self {
        ModuleFlags {
            ssl: true,
            gan: true,
            attention: true,
            diffusion: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperParams {
    /// Learning rate for generator and discriminator.
    pub lr_gan: f64,
    /// Learning rate for encoder, confidence, attention, and head updates.
    pub lr_main: f64,
    /// Critic steps per generator step (n_c).
    pub critic_steps: usize,
    /// Gradient penalty coefficient.
    pub gp_coeff: f64,
    /// Max residual iteration steps (T).
    pub residual_steps: usize,
    /// Confidence ceiling (c-bar).
    pub confidence_ceiling: f64,
    /// Spectral clipping tolerance (epsilon).
    pub clip_epsilon: f64,
    /// Contrastive temperature (tau).
    pub tau: f64,
    /// Negative samples per anchor.
    pub negatives: usize,
    /// Augmentation dropout rate for the contrastive view.
    pub aug_dropout: f64,
    /// Projection head hidden dimension.
    pub proj_hidden: usize,
    /// Attention heads (H).
    pub heads: usize,
    /// Per-head dimension (d_h).
    pub head_dim: usize,
    /// Attention dropout rate.
    pub attn_dropout: f64,
    /// Contrastive anchor batch size.
    pub batch_size: usize,
    /// AdamW weight decay.
    pub weight_decay: f64,
    /// Diffusion strength (gamma).
    pub gamma: f64,
    /// Max diffusion steps.
    pub diffusion_max_steps: usize,
    /// Generator perturbation strength (delta): expected flipped-edge budget
    /// as a fraction of |E|.
    pub delta: f64,
    /// Fusion weight (rho).
    pub rho: f64,
    /// Weight of the contrastive loss in the total loss.
    pub lambda_ssl: f64,
    /// Encoder output width.
    pub embed_dim: usize,
    /// Multi-scale propagation depth (K).
    pub multi_scale_k: usize,
    /// Generator hidden width (d_g).
    pub d_g: usize,
    /// Discriminator hidden width and message-passing depth.
    pub disc_hidden: usize,
    pub disc_layers: usize,
    /// Ensemble mixing weights (fusion, diffusion-only, residual-only).
    pub ensemble_kappas: [f64; 3],
    /// Z^(0) fill mode for unlabeled rows.
    pub pad_mode: PadMode,
    /// Use D^{-1/2}(A+I)D^{-1/2} (true) or D^{-1/2} A D^{-1/2} (false).
    pub with_self_loops: bool,
    /// Support threshold for attention neighborhoods on soft operators.
    pub support_tol: f64,
    /// Power iterations for in-loop preprocessing estimates.
    pub power_iters_preprocess: usize,
    /// Fraction of nodes whose labels are observed during training (applies
    /// when the graph arrives fully labeled, e.g. from the block model).
    pub labeled_fraction: f64,
    /// Residual/diffusion convergence tolerance.
    pub convergence_tol: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            lr_gan: 1e-4,
            lr_main: 1e-3,
            critic_steps: 5,
            gp_coeff: 10.0,
            residual_steps: 20,
            confidence_ceiling: 0.98,
            clip_epsilon: 1e-4,
            tau: 0.3,
            negatives: 64,
            aug_dropout: 0.2,
            proj_hidden: 256,
            heads: 8,
            head_dim: 64,
            attn_dropout: 0.1,
            batch_size: 1024,
            weight_decay: 1e-5,
            gamma: 0.5,
            diffusion_max_steps: 50,
            delta: 0.10,
            rho: 0.5,
            lambda_ssl: 0.1,
            embed_dim: 64,
            multi_scale_k: 3,
            d_g: 64,
            disc_hidden: 32,
            disc_layers: 2,
            ensemble_kappas: [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            pad_mode: PadMode::Uniform,
            with_self_loops: true,
            support_tol: 1e-3,
            power_iters_preprocess: 10,
            labeled_fraction: 0.15,
            convergence_tol: 1e-8,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, msg: &str) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(msg.into()))
            }
        }
        check(self.lr_gan > 0.0, "lr_gan must be positive")?;
        check(self.lr_main > 0.0, "lr_main must be positive")?;
        check(self.critic_steps >= 1, "critic_steps must be >= 1")?;
        check(self.gp_coeff >= 0.0, "gp_coeff must be >= 0")?;
        check(self.residual_steps >= 1, "residual_steps must be >= 1")?;
        check(
            self.confidence_ceiling > 0.0 && self.confidence_ceiling < 1.0,
            "confidence_ceiling must lie in (0,1)",
        )?;
        check(self.clip_epsilon > 0.0, "clip_epsilon must be positive")?;
        check(self.tau > 0.0, "tau must be positive")?;
        check(
            (0.0..1.0).contains(&self.aug_dropout),
            "aug_dropout must lie in [0,1)",
        )?;
        check(self.proj_hidden >= 1, "proj_hidden must be >= 1")?;
        check(self.heads >= 1 && self.head_dim >= 1, "attention dims must be >= 1")?;
        check(
            (0.0..1.0).contains(&self.attn_dropout),
            "attn_dropout must lie in [0,1)",
        )?;
        check(self.batch_size >= 1, "batch_size must be >= 1")?;
        check(self.weight_decay >= 0.0, "weight_decay must be >= 0")?;
        check((0.0..=1.0).contains(&self.gamma), "gamma must lie in [0,1]")?;
        check(self.diffusion_max_steps >= 1, "diffusion_max_steps must be >= 1")?;
        check((0.0..=1.0).contains(&self.delta), "delta must lie in [0,1]")?;
        check((0.0..=1.0).contains(&self.rho), "rho must lie in [0,1]")?;
        check(self.lambda_ssl >= 0.0, "lambda_ssl must be >= 0")?;
        check(self.embed_dim >= 1, "embed_dim must be >= 1")?;
        check(self.d_g >= 1, "d_g must be >= 1")?;
        check(
            self.disc_hidden >= 1 && self.disc_layers >= 1,
            "discriminator dims must be >= 1",
        )?;
        let ksum: f64 = self.ensemble_kappas.iter().sum();
        check(
            self.ensemble_kappas.iter().all(|&k| k >= 0.0) && (ksum - 1.0).abs() < 1e-9,
            "ensemble_kappas must be >= 0 and sum to 1",
        )?;
        check(self.support_tol >= 0.0, "support_tol must be >= 0")?;
        check(
            self.power_iters_preprocess >= 1,
            "power_iters_preprocess must be >= 1",
        )?;
        check(
            self.labeled_fraction > 0.0 && self.labeled_fraction <= 1.0,
            "labeled_fraction must lie in (0,1]",
        )?;
        check(self.convergence_tol > 0.0, "convergence_tol must be positive")?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub graph: GraphSource,
    #[serde(default)]
    pub hyper: HyperParams,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub modules: ModuleFlags,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Monte-Carlo perturbed-inference passes (0 = clean inference).
    #[serde(default)]
    pub mc_perturbations: usize,
    /// Row-parallelism width for kernels; 1 = fully sequential.
    #[serde(default = "default_threads")]
    pub threads: usize,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_epochs() -> usize {
    50
}

fn default_threads() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization")
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        match &self.graph {
            GraphSource::File { path } => {
                if path.as_os_str().is_empty() {
                    return Err(Error::Config("graph file path is empty".into()));
                }
            }
            GraphSource::Sbm {
                n,
                blocks,
                p_intra,
                p_inter,
                feature_dim,
                feature_noise,
            } => {
                if *n == 0 || *blocks == 0 || *feature_dim == 0 {
                    return Err(Error::Config("sbm sizes must be positive".into()));
                }
                if !(0.0..=1.0).contains(p_intra) || !(0.0..=1.0).contains(p_inter) {
                    return Err(Error::Config("sbm probabilities must lie in [0,1]".into()));
                }
                if *feature_noise < 0.0 {
                    return Err(Error::Config("feature_noise must be >= 0".into()));
                }
            }
        }
        Ok(())
    }

    /// Materialize the graph for one seed. Block-model sources derive their
    /// generation seed from the run seed so different runs see different
    /// draws of the same ensemble.
    pub fn build_graph(&self, seed: u64) -> Result<SparseGraph> {
        match &self.graph {
            GraphSource::File { path } => load_graph(path),
            GraphSource::Sbm {
                n,
                blocks,
                p_intra,
                p_inter,
                feature_dim,
                feature_noise,
            } => generate_sbm(
                *n,
                *blocks,
                *p_intra,
                *p_inter,
                *feature_dim,
                *feature_noise,
                seed,
            ),
        }
    }

    /// FNV-1a hash of the canonical JSON, for run provenance lines.
    pub fn config_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.to_json().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
        h
    }

    /// The smoke-scale default: 200-node two-block homophilous graph.
    pub fn smoke_default() -> Self {
        ExperimentConfig {
            graph: GraphSource::Sbm {
                n: 200,
                blocks: 2,
                p_intra: 0.1,
                p_inter: 0.01,
                feature_dim: 16,
                feature_noise: 0.5,
            },
            hyper: HyperParams::default(),
            seeds: vec![0],
            epochs: 50,
            modules: ModuleFlags::default(),
            output_dir: None,
            mc_perturbations: 0,
            threads: 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let text = r#"{
            "graph": {"sbm": {"n": 10, "blocks": 2, "p_intra": 0.5, "p_inter": 0.1,
                               "feature_dim": 4, "feature_noise": 0.1}},
            "bogus_key": 3
        }"#;
        assert!(ExperimentConfig::from_json(text).is_err());
    }

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::smoke_default();
        let json = cfg.to_json();
        let back = ExperimentConfig::from_json(&json).unwrap();
        assert_eq!(back.config_hash(), cfg.config_hash());
    }

    #[test]
    fn domain_validation() {
        let mut cfg = ExperimentConfig::smoke_default();
        cfg.hyper.gamma = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::smoke_default();
        cfg.hyper.confidence_ceiling = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::smoke_default();
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
    }
}
