//! Central finite-difference gradient auditor.
//!
//! Every handwritten backward pass in the crate must agree with
//! `(f(x+h) - f(x-h)) / 2h` coordinate-wise. Relative error uses
//! `|g - fd| / max(|g|, |fd|, floor)`; the floor absorbs finite-difference
//! roundoff on coordinates whose true gradient is essentially zero.

use crate::dense::Mat;
use crate::nn::ParamBlock;

#[derive(Debug, Clone, Copy)]
pub struct AuditConfig {
    pub step: f64,
    pub tol: f64,
    pub denom_floor: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            step: 1e-5,
            tol: 1e-4,
            denom_floor: 1e-5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AuditOutcome {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub checked: usize,
}

impl AuditOutcome {
    pub fn passed(&self, cfg: &AuditConfig) -> bool {
        self.max_rel_err < cfg.tol
    }
}

/// Audit analytic parameter gradients against finite differences of the
/// scalar function `f(params)`.
pub fn audit_param_grads<F>(
    params: &ParamBlock,
    analytic: &[f64],
    mut f: F,
    cfg: &AuditConfig,
) -> AuditOutcome
where
    F: FnMut(&ParamBlock) -> f64,
{
    assert_eq!(analytic.len(), params.len());
    let mut probe = params.clone();
    let mut max_rel = 0.0f64;
    let mut worst = 0usize;
    for i in 0..params.len() {
        let orig = probe.values[i];
        probe.values[i] = orig + cfg.step;
        let fp = f(&probe);
        probe.values[i] = orig - cfg.step;
        let fm = f(&probe);
        probe.values[i] = orig;
        let fd = (fp - fm) / (2.0 * cfg.step);
        let g = analytic[i];
        let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(cfg.denom_floor);
        if rel > max_rel {
            max_rel = rel;
            worst = i;
        }
    }
    AuditOutcome {
        max_rel_err: max_rel,
        worst_index: worst,
        checked: params.len(),
    }
}

/// Audit an analytic gradient w.r.t. a dense input matrix.
pub fn audit_matrix_grad<F>(x: &Mat, analytic: &Mat, mut f: F, cfg: &AuditConfig) -> AuditOutcome
where
    F: FnMut(&Mat) -> f64,
{
    assert_eq!((x.rows(), x.cols()), (analytic.rows(), analytic.cols()));
    let mut probe = x.clone();
    let mut max_rel = 0.0f64;
    let mut worst = 0usize;
    for i in 0..x.data().len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + cfg.step;
        let fp = f(&probe);
        probe.data_mut()[i] = orig - cfg.step;
        let fm = f(&probe);
        probe.data_mut()[i] = orig;
        let fd = (fp - fm) / (2.0 * cfg.step);
        let g = analytic.data()[i];
        let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(cfg.denom_floor);
        if rel > max_rel {
            max_rel = rel;
            worst = i;
        }
    }
    AuditOutcome {
        max_rel_err: max_rel,
        worst_index: worst,
        checked: x.data().len(),
    }
}
