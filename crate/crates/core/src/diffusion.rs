//! Robust clipped diffusion, stream fusion, and the three-predictor ensemble.

use crate::dense::Mat;
use crate::error::{Error, Result};
use crate::nn::softmax_rows;
use crate::operator::PropagationOperator;

/// Steady state of the clipped diffusion.
#[derive(Debug, Clone)]
pub struct DiffusionResult {
    pub z_inf: Mat,
    pub steps: usize,
    pub final_delta: f64,
    pub clip_active: bool,
}

/// Trace of a diffusion run for backpropagation through the unrolled
/// iteration: pre-clip iterates per step.
#[derive(Debug, Clone)]
pub struct DiffusionCache {
    preclip: Vec<Mat>,
}

/// Iterate `Z^(t+1) = clip_[0,1]((1-gamma) Zr + gamma op Z^(t))` from
/// `Z^(0) = Zr` until the Frobenius change drops below `tol` or `max_steps`
/// is reached. The clip is applied every step; convergence is measured on
/// clipped iterates.
pub fn robust_diffusion(
    zr: &Mat,
    op: &PropagationOperator,
    gamma: f64,
    max_steps: usize,
    tol: f64,
) -> DiffusionResult {
    let (res, _) = robust_diffusion_cached(zr, op, gamma, max_steps, tol);
    res
}

pub fn robust_diffusion_cached(
    zr: &Mat,
    op: &PropagationOperator,
    gamma: f64,
    max_steps: usize,
    tol: f64,
) -> (DiffusionResult, DiffusionCache) {
    assert!((0.0..=1.0).contains(&gamma), "gamma must lie in [0,1]");
    assert!(max_steps >= 1);
    let mut z = zr.clone();
    let mut clip_active = false;
    let mut steps = 0;
    let mut final_delta = f64::INFINITY;
    let mut preclip = Vec::new();
    for _ in 0..max_steps {
        let propagated = op.values.matmat(&z, 1);
        let mut next = Mat::zeros(z.rows(), z.cols());
        for i in 0..z.rows() {
            let prow = propagated.row(i);
            let zrow = zr.row(i);
            let nrow = next.row_mut(i);
            for k in 0..z.cols() {
                nrow[k] = (1.0 - gamma) * zrow[k] + gamma * prow[k];
            }
        }
        preclip.push(next.clone());
        for v in next.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
                clip_active = true;
            } else if *v > 1.0 {
                *v = 1.0;
                clip_active = true;
            }
        }
        final_delta = next.sub(&z).frobenius_norm();
        z = next;
        steps += 1;
        if final_delta < tol || gamma == 0.0 {
            // gamma = 0 makes the update independent of Z^(t): one step is the
            // fixed point
            break;
        }
    }
    (
        DiffusionResult {
            z_inf: z,
            steps,
            final_delta,
            clip_active,
        },
        DiffusionCache { preclip },
    )
}

/// VJP through the unrolled diffusion: given dL/dZ^(inf), return dL/dZr.
/// Clip derivative is the indicator of the pre-clip value lying in [0,1].
pub fn diffusion_backward(
    cache: &DiffusionCache,
    op: &PropagationOperator,
    gamma: f64,
    upstream: &Mat,
) -> Mat {
    let mut u = upstream.clone();
    let mut dzr = Mat::zeros(upstream.rows(), upstream.cols());
    let n = upstream.rows();
    let ch = upstream.cols();
    for pre in cache.preclip.iter().rev() {
        // mask through the clip
        let mut w = u.clone();
        for (wv, pv) in w.data_mut().iter_mut().zip(pre.data()) {
            if !(0.0..=1.0).contains(pv) {
                *wv = 0.0;
            }
        }
        // Zr contribution of this step
        for (dv, wv) in dzr.data_mut().iter_mut().zip(w.data()) {
            *dv += (1.0 - gamma) * wv;
        }
        // u <- gamma * op^T w
        let mut next = Mat::zeros(n, ch);
        for i in 0..n {
            let src = w.row(i).to_vec();
            for (j, v) in op.values.row(i) {
                let dst = next.row_mut(j);
                for k in 0..ch {
                    dst[k] += gamma * v * src[k];
                }
            }
        }
        u = next;
    }
    // Z^(0) = Zr
    for (dv, uv) in dzr.data_mut().iter_mut().zip(u.data()) {
        *dv += uv;
    }
    dzr
}

/// `Yhat = rho * softmax(Ybar_logits) + (1 - rho) * Z_inf`.
pub fn fuse_predictions(ybar_logits: &Mat, z_inf: &Mat, rho: f64) -> Result<Mat> {
    if (ybar_logits.rows(), ybar_logits.cols()) != (z_inf.rows(), z_inf.cols()) {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", z_inf.rows(), z_inf.cols()),
            got: format!("{}x{}", ybar_logits.rows(), ybar_logits.cols()),
            context: "fuse_predictions",
        });
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::invalid("rho must lie in [0,1]"));
    }
    let sm = softmax_rows(ybar_logits);
    let mut out = Mat::zeros(z_inf.rows(), z_inf.cols());
    for (o, (s, z)) in out
        .data_mut()
        .iter_mut()
        .zip(sm.data().iter().zip(z_inf.data()))
    {
        *o = rho * s + (1.0 - rho) * z;
    }
    Ok(out)
}

/// Weighted sum of three complementary predictors (fusion, diffusion-only,
/// residual-only). Weights must be non-negative and sum to one within 1e-9.
pub fn ensemble(predictions: &[Mat; 3], kappas: &[f64; 3]) -> Result<Mat> {
    let sum: f64 = kappas.iter().sum();
    if kappas.iter().any(|&k| k < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "ensemble weights must be >= 0 and sum to 1 (got sum {sum})"
        )));
    }
    let (r, c) = (predictions[0].rows(), predictions[0].cols());
    for p in predictions.iter().skip(1) {
        if (p.rows(), p.cols()) != (r, c) {
            return Err(Error::ShapeMismatch {
                expected: format!("{r}x{c}"),
                got: format!("{}x{}", p.rows(), p.cols()),
                context: "ensemble",
            });
        }
    }
    let mut out = Mat::zeros(r, c);
    for (k, p) in kappas.iter().zip(predictions.iter()) {
        for (o, v) in out.data_mut().iter_mut().zip(p.data()) {
            *o += k * v;
        }
    }
    Ok(out)
}
