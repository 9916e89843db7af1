//! Confidence-weighted residual correction.
//!
//! The iteration `R^(t+1) = (I - diag(c)) R^(0) + diag(c) op R^(t)` is a
//! contraction whenever `kappa = max_i c_i * ||op||_2 < 1`, converging
//! linearly to the unique solution of `(I - diag(c) op) R* = (I - diag(c)) R^(0)`.
//! [`dense_fixed_point_oracle`] solves that system directly and certifies the
//! iterative path.

use crate::dense::Mat;
use crate::error::{Error, Result};
use crate::graph::SparseGraph;
use crate::nn::{sigmoid, ParamBlock};
use crate::operator::PropagationOperator;
use crate::spectral::contraction_factor;

/// Per-node confidences in (0,1).
#[derive(Debug, Clone)]
pub struct ConfidenceVector {
    pub c: Vec<f64>,
    pub capped: bool,
}

impl ConfidenceVector {
    pub fn new(c: Vec<f64>) -> Result<Self> {
        for (i, &v) in c.iter().enumerate() {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::invalid(format!("confidence c[{i}] = {v} outside (0,1)")));
            }
        }
        Ok(ConfidenceVector { c, capped: false })
    }

    pub fn capped(c: Vec<f64>, ceiling: f64) -> Result<Self> {
        let capped = crate::spectral::cap_confidence(&c, ceiling)?;
        Ok(ConfidenceVector { c: capped, capped: true })
    }

    pub fn max(&self) -> f64 {
        self.c.iter().fold(0.0f64, |m, &v| m.max(v))
    }
}

/// Residual iteration state: the initial residual, the current iterate, the
/// contraction factor, and the per-step Frobenius deltas.
#[derive(Debug, Clone)]
pub struct ResidualState {
    pub r0: Mat,
    pub r: Mat,
    pub t: usize,
    pub kappa: f64,
    pub trace: Vec<f64>,
    pub converged: bool,
    /// Iterates R^(0..t-1) cached for the training-time backward pass.
    history: Vec<Mat>,
}

impl ResidualState {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("t,step_norm\n");
        for (t, v) in self.trace.iter().enumerate() {
            out.push_str(&format!("{},{}\n", t + 1, v));
        }
        out
    }
}

/// `c_i = sigmoid(w_c^T [x_i || mean_{j in N(i)} x_j] + b_c)`; an isolated
/// node uses the zero vector as its neighbor mean.
///
/// `params` holds `[w_c (1 x 2d), b_c (1 x 1)]`.
pub fn estimate_confidence(
    g: &SparseGraph,
    x: &Mat,
    params: &ParamBlock,
) -> Result<ConfidenceVector> {
    let d = x.cols();
    let w = params.tensor(0);
    if w.len() != 2 * d {
        return Err(Error::ShapeMismatch {
            expected: format!("w_c of length {}", 2 * d),
            got: format!("{}", w.len()),
            context: "estimate_confidence",
        });
    }
    let b = params.tensor(1)[0];
    let mut c = Vec::with_capacity(g.n_nodes());
    let mut mean = vec![0.0f64; d];
    for i in 0..g.n_nodes() {
        mean.fill(0.0);
        let neigh = g.neighbors(i);
        if !neigh.is_empty() {
            for &j in neigh {
                for (m, v) in mean.iter_mut().zip(x.row(j)) {
                    *m += v;
                }
            }
            for m in &mut mean {
                *m /= neigh.len() as f64;
            }
        }
        let mut z = b;
        for (k, v) in x.row(i).iter().enumerate() {
            z += w[k] * v;
        }
        for (k, v) in mean.iter().enumerate() {
            z += w[d + k] * v;
        }
        // keep strictly inside (0,1) even when the sigmoid saturates in f64
        c.push(sigmoid(z).clamp(1e-12, 1.0 - 1e-12));
    }
    ConfidenceVector::new(c)
}

/// Gradient of a loss w.r.t. the confidence pre-activations, pushed back to
/// `params.grads` and to the input features. `dc[i]` is dL/dc_i.
pub fn confidence_backward(
    g: &SparseGraph,
    x: &Mat,
    params: &mut ParamBlock,
    c: &[f64],
    dc: &[f64],
) -> Result<Mat> {
    let d = x.cols();
    let mut dx = Mat::zeros(x.rows(), d);
    let mut mean = vec![0.0f64; d];
    // copy w_c so grads can be borrowed mutably afterwards
    let w: Vec<f64> = params.tensor(0).to_vec();
    for i in 0..g.n_nodes() {
        let dz = dc[i] * c[i] * (1.0 - c[i]);
        if dz == 0.0 {
            continue;
        }
        mean.fill(0.0);
        let neigh = g.neighbors(i);
        if !neigh.is_empty() {
            for &j in neigh {
                for (m, v) in mean.iter_mut().zip(x.row(j)) {
                    *m += v;
                }
            }
            for m in &mut mean {
                *m /= neigh.len() as f64;
            }
        }
        {
            let gw = params.grad_mut(0);
            for (k, v) in x.row(i).iter().enumerate() {
                gw[k] += dz * v;
            }
            for (k, v) in mean.iter().enumerate() {
                gw[d + k] += dz * v;
            }
        }
        params.grad_mut(1)[0] += dz;
        // input gradient: own features via w[..d], neighbor means via w[d..]
        for (k, gv) in dx.row_mut(i).iter_mut().enumerate() {
            *gv += dz * w[k];
        }
        if !neigh.is_empty() {
            let inv = 1.0 / neigh.len() as f64;
            for &j in neigh {
                for (k, gv) in dx.row_mut(j).iter_mut().enumerate() {
                    *gv += dz * w[d + k] * inv;
                }
            }
        }
    }
    Ok(dx)
}

/// `R^(0) = Z0 - Y_obs`. `y_obs` must hold one-hot rows for labeled nodes and
/// all-zero rows for unlabeled ones.
pub fn init_residual(z0: &Mat, y_obs: &Mat) -> Result<ResidualState> {
    if (z0.rows(), z0.cols()) != (y_obs.rows(), y_obs.cols()) {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", z0.rows(), z0.cols()),
            got: format!("{}x{}", y_obs.rows(), y_obs.cols()),
            context: "init_residual",
        });
    }
    let r0 = z0.sub(y_obs);
    Ok(ResidualState {
        r: r0.clone(),
        r0,
        t: 0,
        kappa: 0.0,
        trace: Vec::new(),
        converged: false,
        history: Vec::new(),
    })
}

/// Run up to `t_max` confidence-weighted propagation steps, stopping early
/// when the Frobenius step change drops below `tol`. Records
/// `kappa = contraction_factor(op, c)`; when `kappa >= 1` the run proceeds
/// but is flagged non-certified via the returned state.
pub fn propagate_residual(
    state: ResidualState,
    op: &PropagationOperator,
    conf: &ConfidenceVector,
    t_max: usize,
    tol: f64,
) -> ResidualState {
    propagate_residual_impl(state, op, conf, t_max, tol, false)
}

/// As [`propagate_residual`] but caching every iterate for a later backward
/// pass through the unrolled iteration.
pub fn propagate_residual_cached(
    state: ResidualState,
    op: &PropagationOperator,
    conf: &ConfidenceVector,
    t_max: usize,
    tol: f64,
) -> ResidualState {
    propagate_residual_impl(state, op, conf, t_max, tol, true)
}

fn propagate_residual_impl(
    mut state: ResidualState,
    op: &PropagationOperator,
    conf: &ConfidenceVector,
    t_max: usize,
    tol: f64,
    keep_history: bool,
) -> ResidualState {
    assert!(t_max >= 1, "need at least one step");
    state.kappa = contraction_factor(op, &conf.c);
    state.trace.clear();
    state.converged = false;
    let (n, cch) = (state.r.rows(), state.r.cols());
    for _ in 0..t_max {
        if keep_history {
            state.history.push(state.r.clone());
        }
        let propagated = op.values.matmat(&state.r, 1);
        let mut next = Mat::zeros(n, cch);
        for i in 0..n {
            let ci = conf.c[i];
            let r0row = state.r0.row(i);
            let prow = propagated.row(i);
            let nrow = next.row_mut(i);
            for k in 0..cch {
                nrow[k] = (1.0 - ci) * r0row[k] + ci * prow[k];
            }
        }
        let delta = next.sub(&state.r).frobenius_norm();
        state.trace.push(delta);
        state.r = next;
        state.t += 1;
        if delta < tol {
            state.converged = true;
            break;
        }
    }
    state
}

/// VJP through the unrolled residual iteration: given dL/dR^(T), accumulate
/// dL/dc (per node) and return it. Requires a state produced by
/// [`propagate_residual_cached`].
pub fn residual_backward_confidence(
    state: &ResidualState,
    op: &PropagationOperator,
    conf: &ConfidenceVector,
    upstream: &Mat,
) -> Vec<f64> {
    assert_eq!(
        state.history.len(),
        state.trace.len(),
        "state must come from propagate_residual_cached"
    );
    let n = state.r.rows();
    let cch = state.r.cols();
    let mut dc = vec![0.0f64; n];
    let mut u = upstream.clone();
    for r_t in state.history.iter().rev() {
        let propagated = op.values.matmat(r_t, 1);
        // dc_i += sum_k u_ik * (-R0_ik + (op R^t)_ik)
        for i in 0..n {
            let urow = u.row(i);
            let prow = propagated.row(i);
            let r0row = state.r0.row(i);
            let mut acc = 0.0;
            for k in 0..cch {
                acc += urow[k] * (prow[k] - r0row[k]);
            }
            dc[i] += acc;
        }
        // u <- op^T (diag(c) u)
        let mut cu = u.clone();
        for i in 0..n {
            let ci = conf.c[i];
            for v in cu.row_mut(i) {
                *v *= ci;
            }
        }
        let mut next = Mat::zeros(n, cch);
        for i in 0..n {
            let src = cu.row(i).to_vec();
            for (j, w) in op.values.row(i) {
                let dst = next.row_mut(j);
                for k in 0..cch {
                    dst[k] += w * src[k];
                }
            }
        }
        u = next;
    }
    dc
}

/// Scaled reintegration:
/// `s_norm = mean_{j labeled} ||R^(0)_j||_1`,
/// `Z^(r)_i = Z0_i + s_norm * R^(T)_i / max(eps, ||R^(T)_i||_1)`.
pub fn reintegrate_residual(
    z0: &Mat,
    state: &ResidualState,
    labeled: &[usize],
    eps: f64,
) -> Result<Mat> {
    if labeled.is_empty() {
        return Err(Error::invalid("reintegration needs a non-empty labeled set"));
    }
    assert!(eps > 0.0);
    let s_norm = labeled
        .iter()
        .map(|&j| state.r0.row(j).iter().map(|v| v.abs()).sum::<f64>())
        .sum::<f64>()
        / labeled.len() as f64;
    let mut z = z0.clone();
    for i in 0..z.rows() {
        let rrow = state.r.row(i);
        let l1: f64 = rrow.iter().map(|v| v.abs()).sum();
        let denom = l1.max(eps);
        let zrow = z.row_mut(i);
        for (k, rv) in rrow.iter().enumerate() {
            zrow[k] += s_norm * rv / denom;
        }
    }
    Ok(z)
}

/// VJP through [`reintegrate_residual`]: given dL/dZ^(r), return dL/dR^(T).
/// (Z0 and R^(0) are constants in the training loop.)
pub fn reintegrate_backward(
    state: &ResidualState,
    labeled: &[usize],
    eps: f64,
    upstream: &Mat,
) -> Mat {
    let s_norm = labeled
        .iter()
        .map(|&j| state.r0.row(j).iter().map(|v| v.abs()).sum::<f64>())
        .sum::<f64>()
        / labeled.len() as f64;
    let mut dr = Mat::zeros(state.r.rows(), state.r.cols());
    for i in 0..state.r.rows() {
        let rrow = state.r.row(i);
        let urow = upstream.row(i);
        let l1: f64 = rrow.iter().map(|v| v.abs()).sum();
        if l1 > eps {
            let dot: f64 = urow.iter().zip(rrow).map(|(u, r)| u * r).sum();
            let drow = dr.row_mut(i);
            for (k, rv) in rrow.iter().enumerate() {
                drow[k] = s_norm * (urow[k] / l1 - dot * rv.signum() / (l1 * l1));
            }
        } else {
            let drow = dr.row_mut(i);
            for (k, uv) in urow.iter().enumerate() {
                drow[k] = s_norm * uv / eps;
            }
        }
    }
    dr
}

/// Dense certification oracle: solve `(I - diag(c) op) R* = (I - diag(c)) R0`
/// by Gaussian elimination. Rejects systems whose contraction factor is >= 1
/// (outside the certified regime) and graphs above 256 nodes.
pub fn dense_fixed_point_oracle(
    op: &PropagationOperator,
    conf: &ConfidenceVector,
    r0: &Mat,
) -> Result<Mat> {
    let n = op.n();
    if n > 256 {
        return Err(Error::invalid("dense oracle limited to 256 nodes"));
    }
    let kappa = contraction_factor(op, &conf.c);
    if kappa >= 1.0 {
        return Err(Error::NonContractive { kappa });
    }
    let dense = op.values.to_dense();
    let mut system = Mat::identity(n);
    for i in 0..n {
        for j in 0..n {
            system[(i, j)] -= conf.c[i] * dense[(i, j)];
        }
    }
    let mut rhs = r0.clone();
    for i in 0..n {
        for v in rhs.row_mut(i) {
            *v *= 1.0 - conf.c[i];
        }
    }
    system.solve(&rhs)
}

/// Z^(0) fill mode for [`pad_labels`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadMode {
    /// Unlabeled rows get the uniform distribution 1/C.
    Uniform,
    /// Unlabeled rows stay all-zero.
    Zero,
}

/// Build `Z^(0)` and `Y_obs`: labeled rows are one-hot in both; unlabeled
/// rows of `Y_obs` are zero and unlabeled rows of `Z^(0)` follow `mode`.
pub fn pad_labels(g: &SparseGraph, mode: PadMode) -> (Mat, Mat) {
    let n = g.n_nodes();
    let c = g.n_classes().max(1);
    let mut z0 = Mat::zeros(n, c);
    let mut y_obs = Mat::zeros(n, c);
    for i in 0..n {
        match g.label(i) {
            Some(y) => {
                z0[(i, y)] = 1.0;
                y_obs[(i, y)] = 1.0;
            }
            None => {
                if mode == PadMode::Uniform {
                    for v in z0.row_mut(i) {
                        *v = 1.0 / c as f64;
                    }
                }
            }
        }
    }
    (z0, y_obs)
}
