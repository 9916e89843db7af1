//! Heterophily-adaptive multi-head attention with a learned structural bias,
//! plus the temporal modulation of confidences and attention logits.
//!
//! Per head k and neighborhood N(i):
//! `psi_ij = q_i^T k_j / sqrt(d_h) + w^T MLP([x_i || x_j])`, softmax over
//! N(i), output = concat over heads of `sum_j omega_ij W_v x_j`. The bias
//! term is shared across heads. With `temporal` enabled the logit gains
//! `v^T tanh(W [x_i || x_j || g(|dt|)])` with a learned exponential kernel
//! `g(dt) = scale * exp(-rate * dt)`.

use serde::{Deserialize, Serialize};

use crate::dense::Mat;
use crate::error::{Error, Result};
use crate::nn::{sigmoid, MlpSpec, ParamBlock};
use crate::graph::SparseGraph;
use crate::residual::ConfidenceVector;
use crate::rng::{self, salt};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub heads: usize,
    pub head_dim: usize,
    pub dropout: f64,
    /// Hidden width of the structural-bias MLP (one tanh layer).
    pub bias_hidden: usize,
    pub temporal: bool,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            heads: 8,
            head_dim: 64,
            dropout: 0.1,
            bias_hidden: 64,
            temporal: false,
        }
    }
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.head_dim == 0 || self.bias_hidden == 0 {
            return Err(Error::invalid("attention dims must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0,1)"));
        }
        Ok(())
    }

    /// Spec of the structural-bias MLP, for documentation and shape checks.
    pub fn bias_mlp_spec(&self, d_in: usize) -> MlpSpec {
        MlpSpec::new(
            vec![2 * d_in, self.bias_hidden, 1],
            crate::nn::Activation::Tanh,
            crate::nn::Activation::None,
        )
    }

    /// Tensor layout: per head [Wq, Wk, Wv] (each d_h x d_in), then the bias
    /// MLP [W1 (b x 2d), b1 (b x 1), w (1 x b)], then, when temporal, the
    /// kernel head [Wt (b x 2d+1), vt (b x 1), scale (1 x 1), rate (1 x 1)].
    pub fn param_shapes(&self, d_in: usize) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        for _ in 0..self.heads {
            shapes.push((self.head_dim, d_in));
            shapes.push((self.head_dim, d_in));
            shapes.push((self.head_dim, d_in));
        }
        shapes.push((self.bias_hidden, 2 * d_in));
        shapes.push((self.bias_hidden, 1));
        shapes.push((1, self.bias_hidden));
        if self.temporal {
            shapes.push((self.bias_hidden, 2 * d_in + 1));
            shapes.push((self.bias_hidden, 1));
            shapes.push((1, 1));
            shapes.push((1, 1));
        }
        shapes
    }

    pub fn init_params(&self, d_in: usize, seed: u64) -> ParamBlock {
        let mut p = ParamBlock::glorot(&self.param_shapes(d_in), seed);
        if self.temporal {
            // kernel starts at g(dt) = exp(-dt)
            let base = 3 * self.heads + 3;
            p.tensor_mut(base + 2)[0] = 1.0; // scale
            p.tensor_mut(base + 3)[0] = 1.0; // rate
        }
        p
    }

    fn bias_base(&self) -> usize {
        3 * self.heads
    }
}

/// Forward output: concatenated head outputs plus per-head row-stochastic
/// attention weights aligned with the support lists. Nodes with empty
/// neighborhoods produce a zero row and are recorded.
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub z: Mat,
    /// omega[head][node][neighbor index within support[node]]
    pub omega: Vec<Vec<Vec<f64>>>,
    pub empty_nodes: Vec<usize>,
}

/// Cached intermediates for the backward pass.
pub struct AttentionCache {
    support: Vec<Vec<usize>>,
    pair_offset: Vec<usize>,
    /// Per head: projected Q, K, V (N x d_h each).
    q: Vec<Mat>,
    k: Vec<Mat>,
    v: Vec<Mat>,
    /// Post-softmax weights per head per directed pair.
    omega: Vec<Vec<f64>>,
    /// Weights actually used for the value sum (after dropout scaling).
    omega_used: Vec<Vec<f64>>,
    /// Bias MLP hidden activations per pair (bias_hidden each).
    bias_hidden: Vec<f64>,
    /// Temporal: tanh hidden per pair, kernel value per pair, |dt| per pair.
    temporal_hidden: Option<Vec<f64>>,
    temporal_g: Option<Vec<f64>>,
    temporal_dt: Option<Vec<f64>>,
    x: Mat,
}

/// Training-time context: dropout mask seed and node timestamps.
#[derive(Debug, Clone, Copy, Default)]
pub struct AttnContext<'a> {
    pub timestamps: Option<&'a [f64]>,
    /// Some(seed) enables inverted dropout on the attention weights.
    pub dropout_seed: Option<u64>,
}

pub fn attention_forward(
    support: &[Vec<usize>],
    x: &Mat,
    params: &ParamBlock,
    cfg: &AttentionConfig,
    ctx: AttnContext<'_>,
) -> Result<(AttentionOutput, AttentionCache)> {
    cfg.validate()?;
    let n = x.rows();
    let d_in = x.cols();
    if support.len() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("{n} support lists"),
            got: format!("{}", support.len()),
            context: "attention_forward",
        });
    }
    if cfg.temporal && ctx.timestamps.is_none() {
        return Err(Error::invalid("temporal attention needs timestamps"));
    }
    let expected_shapes = cfg.param_shapes(d_in);
    if params.shapes() != expected_shapes.as_slice() {
        return Err(Error::ShapeMismatch {
            expected: format!("{expected_shapes:?}"),
            got: format!("{:?}", params.shapes()),
            context: "attention_forward",
        });
    }

    let h = cfg.heads;
    let dh = cfg.head_dim;
    let db = cfg.bias_hidden;
    let scale = 1.0 / (dh as f64).sqrt();

    let mut pair_offset = Vec::with_capacity(n + 1);
    pair_offset.push(0usize);
    for list in support {
        pair_offset.push(pair_offset.last().unwrap() + list.len());
    }
    let n_pairs = *pair_offset.last().unwrap();

    // head projections
    let mut q = Vec::with_capacity(h);
    let mut k = Vec::with_capacity(h);
    let mut v = Vec::with_capacity(h);
    for head in 0..h {
        q.push(project(x, params.tensor(3 * head), dh, d_in));
        k.push(project(x, params.tensor(3 * head + 1), dh, d_in));
        v.push(project(x, params.tensor(3 * head + 2), dh, d_in));
    }

    // structural bias per directed pair (shared across heads)
    let bias_base = cfg.bias_base();
    let w1 = params.tensor(bias_base);
    let b1 = params.tensor(bias_base + 1);
    let wout = params.tensor(bias_base + 2);
    let mut bias_hidden = vec![0.0f64; n_pairs * db];
    let mut bias_val = vec![0.0f64; n_pairs];
    let mut temporal_hidden = cfg.temporal.then(|| vec![0.0f64; n_pairs * db]);
    let mut temporal_g = cfg.temporal.then(|| vec![0.0f64; n_pairs]);
    let mut temporal_dt = cfg.temporal.then(|| vec![0.0f64; n_pairs]);
    let mut temporal_val = vec![0.0f64; n_pairs];

    for i in 0..n {
        for (idx, &j) in support[i].iter().enumerate() {
            let p = pair_offset[i] + idx;
            let hid = &mut bias_hidden[p * db..(p + 1) * db];
            let mut acc_out = 0.0;
            for (o, hv) in hid.iter_mut().enumerate() {
                let wrow = &w1[o * 2 * d_in..(o + 1) * 2 * d_in];
                let mut z = b1[o];
                for (wv, xv) in wrow[..d_in].iter().zip(x.row(i)) {
                    z += wv * xv;
                }
                for (wv, xv) in wrow[d_in..].iter().zip(x.row(j)) {
                    z += wv * xv;
                }
                *hv = z.tanh();
                acc_out += wout[o] * *hv;
            }
            bias_val[p] = acc_out;

            if cfg.temporal {
                let ts = ctx.timestamps.unwrap();
                let base = bias_base + 3;
                let wt = params.tensor(base);
                let vt = params.tensor(base + 1);
                let g_scale = params.tensor(base + 2)[0];
                let g_rate = params.tensor(base + 3)[0];
                let dt = (ts[i] - ts[j]).abs();
                let g = g_scale * (-g_rate * dt).exp();
                temporal_dt.as_mut().unwrap()[p] = dt;
                temporal_g.as_mut().unwrap()[p] = g;
                let thid = &mut temporal_hidden.as_mut().unwrap()[p * db..(p + 1) * db];
                let width = 2 * d_in + 1;
                let mut acc_t = 0.0;
                for (o, hv) in thid.iter_mut().enumerate() {
                    let wrow = &wt[o * width..(o + 1) * width];
                    let mut z = 0.0;
                    for (wv, xv) in wrow[..d_in].iter().zip(x.row(i)) {
                        z += wv * xv;
                    }
                    for (wv, xv) in wrow[d_in..2 * d_in].iter().zip(x.row(j)) {
                        z += wv * xv;
                    }
                    z += wrow[2 * d_in] * g;
                    *hv = z.tanh();
                    acc_t += vt[o] * *hv;
                }
                temporal_val[p] = acc_t;
            }
        }
    }

    // logits, softmax, optional dropout, value aggregation
    let mut omega: Vec<Vec<f64>> = vec![vec![0.0; n_pairs]; h];
    let mut omega_used: Vec<Vec<f64>> = vec![vec![0.0; n_pairs]; h];
    let mut z_out = Mat::zeros(n, h * dh);
    let mut empty_nodes = Vec::new();
    let mut drop_rng = ctx
        .dropout_seed
        .map(|s| rng::seeded(s, salt::DROPOUT));

    for i in 0..n {
        let list = &support[i];
        if list.is_empty() {
            empty_nodes.push(i);
            continue;
        }
        for head in 0..h {
            let qi = q[head].row(i);
            let mut logits = Vec::with_capacity(list.len());
            for (idx, &j) in list.iter().enumerate() {
                let p = pair_offset[i] + idx;
                let dotqk = crate::dense::dot(qi, k[head].row(j));
                logits.push(dotqk * scale + bias_val[p] + temporal_val[p]);
            }
            let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut denom = 0.0;
            for l in &mut logits {
                *l = (*l - max).exp();
                denom += *l;
            }
            for (idx, l) in logits.iter().enumerate() {
                let p = pair_offset[i] + idx;
                let om = l / denom;
                omega[head][p] = om;
                let used = match drop_rng.as_mut() {
                    Some(rng) if cfg.dropout > 0.0 => {
                        use rand::RngExt;
                        if rng.random::<f64>() < cfg.dropout {
                            0.0
                        } else {
                            om / (1.0 - cfg.dropout)
                        }
                    }
                    _ => om,
                };
                omega_used[head][p] = used;
            }
            let out = &mut z_out.row_mut(i)[head * dh..(head + 1) * dh];
            for (idx, &j) in list.iter().enumerate() {
                let p = pair_offset[i] + idx;
                let wgt = omega_used[head][p];
                if wgt == 0.0 {
                    continue;
                }
                for (o, vv) in out.iter_mut().zip(v[head].row(j)) {
                    *o += wgt * vv;
                }
            }
        }
    }

    let omega_nested: Vec<Vec<Vec<f64>>> = (0..h)
        .map(|head| {
            (0..n)
                .map(|i| {
                    (0..support[i].len())
                        .map(|idx| omega[head][pair_offset[i] + idx])
                        .collect()
                })
                .collect()
        })
        .collect();

    Ok((
        AttentionOutput {
            z: z_out,
            omega: omega_nested,
            empty_nodes,
        },
        AttentionCache {
            support: support.to_vec(),
            pair_offset,
            q,
            k,
            v,
            omega,
            omega_used,
            bias_hidden,
            temporal_hidden,
            temporal_g,
            temporal_dt,
            x: x.clone(),
        },
    ))
}

fn project(x: &Mat, w: &[f64], dh: usize, d_in: usize) -> Mat {
    let mut out = Mat::zeros(x.rows(), dh);
    for r in 0..x.rows() {
        let xrow = x.row(r);
        let orow = out.row_mut(r);
        for (o, ov) in orow.iter_mut().enumerate() {
            *ov = crate::dense::dot(&w[o * d_in..(o + 1) * d_in], xrow);
        }
    }
    out
}

/// Backward through [`attention_forward`]: accumulates parameter gradients
/// and returns the gradient w.r.t. the input features.
pub fn attention_backward(
    params: &mut ParamBlock,
    cfg: &AttentionConfig,
    cache: &AttentionCache,
    upstream: &Mat,
) -> Result<Mat> {
    let n = cache.x.rows();
    let d_in = cache.x.cols();
    let h = cfg.heads;
    let dh = cfg.head_dim;
    let db = cfg.bias_hidden;
    let scale = 1.0 / (dh as f64).sqrt();
    if upstream.rows() != n || upstream.cols() != h * dh {
        return Err(Error::ShapeMismatch {
            expected: format!("{n}x{}", h * dh),
            got: format!("{}x{}", upstream.rows(), upstream.cols()),
            context: "attention_backward",
        });
    }

    let mut dx = Mat::zeros(n, d_in);
    let n_pairs = *cache.pair_offset.last().unwrap();
    // accumulated logit gradients, shared bias consumes the head sum
    let mut dpsi_sum = vec![0.0f64; n_pairs];

    // per-head paths: value, softmax, q/k
    for head in 0..h {
        let mut dq = Mat::zeros(n, dh);
        let mut dk = Mat::zeros(n, dh);
        let mut dv = Mat::zeros(n, dh);
        for i in 0..n {
            let list = &cache.support[i];
            if list.is_empty() {
                continue;
            }
            let dout = &upstream.row(i)[head * dh..(head + 1) * dh];
            // dOmega_used and value grads
            let mut domega = Vec::with_capacity(list.len());
            for (idx, &j) in list.iter().enumerate() {
                let p = cache.pair_offset[i] + idx;
                let used = cache.omega_used[head][p];
                if used != 0.0 {
                    for (g, u) in dv.row_mut(j).iter_mut().zip(dout) {
                        *g += used * u;
                    }
                }
                let dused = crate::dense::dot(dout, cache.v[head].row(j));
                // dropout: omega_used = omega * m/(1-p); the mask multiplier
                // is recoverable as used/omega when omega > 0
                let om = cache.omega[head][p];
                let mult = if om > 0.0 { cache.omega_used[head][p] / om } else { 0.0 };
                domega.push(dused * mult);
            }
            // softmax backward
            let mut weighted = 0.0;
            for (idx, _) in list.iter().enumerate() {
                let p = cache.pair_offset[i] + idx;
                weighted += cache.omega[head][p] * domega[idx];
            }
            for (idx, &j) in list.iter().enumerate() {
                let p = cache.pair_offset[i] + idx;
                let om = cache.omega[head][p];
                let dpsi = om * (domega[idx] - weighted);
                dpsi_sum[p] += dpsi;
                // q/k paths
                let qi = cache.q[head].row(i).to_vec();
                let kj = cache.k[head].row(j).to_vec();
                for (g, kv) in dq.row_mut(i).iter_mut().zip(&kj) {
                    *g += dpsi * scale * kv;
                }
                for (g, qv) in dk.row_mut(j).iter_mut().zip(&qi) {
                    *g += dpsi * scale * qv;
                }
            }
        }
        // fold projection gradients into params and dx
        accumulate_projection(params, 3 * head, &cache.x, &dq, &mut dx, d_in);
        accumulate_projection(params, 3 * head + 1, &cache.x, &dk, &mut dx, d_in);
        accumulate_projection(params, 3 * head + 2, &cache.x, &dv, &mut dx, d_in);
    }

    // shared structural bias path
    let bias_base = cfg.bias_base();
    let w1: Vec<f64> = params.tensor(bias_base).to_vec();
    let wout: Vec<f64> = params.tensor(bias_base + 2).to_vec();
    for i in 0..n {
        for (idx, &j) in cache.support[i].iter().enumerate() {
            let p = cache.pair_offset[i] + idx;
            let dbias = dpsi_sum[p];
            if dbias == 0.0 {
                continue;
            }
            let hid = &cache.bias_hidden[p * db..(p + 1) * db];
            for (o, hv) in hid.iter().enumerate() {
                params.grad_mut(bias_base + 2)[o] += dbias * hv;
            }
            for (o, hv) in hid.iter().enumerate() {
                let dpre = dbias * wout[o] * (1.0 - hv * hv);
                if dpre == 0.0 {
                    continue;
                }
                {
                    let gw1 = params.grad_mut(bias_base);
                    let wrow = &mut gw1[o * 2 * d_in..(o + 1) * 2 * d_in];
                    for (g, xv) in wrow[..d_in].iter_mut().zip(cache.x.row(i)) {
                        *g += dpre * xv;
                    }
                    for (g, xv) in wrow[d_in..].iter_mut().zip(cache.x.row(j)) {
                        *g += dpre * xv;
                    }
                }
                params.grad_mut(bias_base + 1)[o] += dpre;
                let wrow = &w1[o * 2 * d_in..(o + 1) * 2 * d_in];
                for (g, wv) in dx.row_mut(i).iter_mut().zip(&wrow[..d_in]) {
                    *g += dpre * wv;
                }
                for (g, wv) in dx.row_mut(j).iter_mut().zip(&wrow[d_in..]) {
                    *g += dpre * wv;
                }
            }
        }
    }

    // temporal kernel path
    if cfg.temporal {
        let base = bias_base + 3;
        let width = 2 * d_in + 1;
        let wt: Vec<f64> = params.tensor(base).to_vec();
        let vt: Vec<f64> = params.tensor(base + 1).to_vec();
        let g_rate = params.tensor(base + 3)[0];
        let thidden = cache.temporal_hidden.as_ref().unwrap();
        let gvals = cache.temporal_g.as_ref().unwrap();
        let dts = cache.temporal_dt.as_ref().unwrap();
        for i in 0..n {
            for (idx, &j) in cache.support[i].iter().enumerate() {
                let p = cache.pair_offset[i] + idx;
                let dt_term = dpsi_sum[p];
                if dt_term == 0.0 {
                    continue;
                }
                let hid = &thidden[p * db..(p + 1) * db];
                let mut dg = 0.0;
                for (o, hv) in hid.iter().enumerate() {
                    params.grad_mut(base + 1)[o] += dt_term * hv;
                    let dpre = dt_term * vt[o] * (1.0 - hv * hv);
                    if dpre == 0.0 {
                        continue;
                    }
                    {
                        let gwt = params.grad_mut(base);
                        let wrow = &mut gwt[o * width..(o + 1) * width];
                        for (g, xv) in wrow[..d_in].iter_mut().zip(cache.x.row(i)) {
                            *g += dpre * xv;
                        }
                        for (g, xv) in wrow[d_in..2 * d_in].iter_mut().zip(cache.x.row(j)) {
                            *g += dpre * xv;
                        }
                        wrow[2 * d_in] += dpre * gvals[p];
                    }
                    let wrow = &wt[o * width..(o + 1) * width];
                    for (g, wv) in dx.row_mut(i).iter_mut().zip(&wrow[..d_in]) {
                        *g += dpre * wv;
                    }
                    for (g, wv) in dx.row_mut(j).iter_mut().zip(&wrow[d_in..2 * d_in]) {
                        *g += dpre * wv;
                    }
                    dg += dpre * wrow[2 * d_in];
                }
                // g = scale * exp(-rate * dt)
                let dt = dts[p];
                let decay = (-g_rate * dt).exp();
                params.grad_mut(base + 2)[0] += dg * decay;
                let g_scale = params.tensor(base + 2)[0];
                params.grad_mut(base + 3)[0] += dg * g_scale * (-dt) * decay;
            }
        }
    }

    Ok(dx)
}

fn accumulate_projection(
    params: &mut ParamBlock,
    tensor_idx: usize,
    x: &Mat,
    dproj: &Mat,
    dx: &mut Mat,
    d_in: usize,
) {
    let w: Vec<f64> = params.tensor(tensor_idx).to_vec();
    let gw = params.grad_mut(tensor_idx);
    for r in 0..x.rows() {
        let drow = dproj.row(r);
        let xrow = x.row(r);
        for (o, dv) in drow.iter().enumerate() {
            if *dv == 0.0 {
                continue;
            }
            let wrow = &mut gw[o * d_in..(o + 1) * d_in];
            for (g, xv) in wrow.iter_mut().zip(xrow) {
                *g += dv * xv;
            }
        }
        let dxrow = dx.row_mut(r);
        for (o, dv) in drow.iter().enumerate() {
            if *dv == 0.0 {
                continue;
            }
            let wrow = &w[o * d_in..(o + 1) * d_in];
            for (g, wv) in dxrow.iter_mut().zip(wrow) {
                *g += dv * wv;
            }
        }
    }
}

/// Snapshot-aware confidence (timestamps required):
/// `c_i = sigmoid(w_c^T [x_i || mean_j x_j || dtau_i] + b_c)` with
/// `dtau_i = tau_now - tau_i`. `params` holds `[w_c (1 x 2d+1), b_c (1 x 1)]`.
pub fn temporal_confidence(
    g: &SparseGraph,
    x: &Mat,
    params: &ParamBlock,
    tau_now: f64,
) -> Result<ConfidenceVector> {
    let ts = g
        .timestamps()
        .ok_or_else(|| Error::invalid("temporal confidence needs timestamps"))?;
    let d = x.cols();
    let w = params.tensor(0);
    if w.len() != 2 * d + 1 {
        return Err(Error::ShapeMismatch {
            expected: format!("w_c of length {}", 2 * d + 1),
            got: format!("{}", w.len()),
            context: "temporal_confidence",
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
        z += w[2 * d] * (tau_now - ts[i]);
        c.push(sigmoid(z).clamp(1e-12, 1.0 - 1e-12));
    }
    ConfidenceVector::new(c)
}

/// Standalone temporal attention bias
/// `psi + v^T tanh(W [x_i || x_j || g(|tau_i - tau_j|)])` with
/// `g(dt) = scale * exp(-rate * dt)`.
/// `params` holds `[W (b x 2d+1), v (b x 1), scale (1 x 1), rate (1 x 1)]`.
pub fn temporal_attention_bias(
    psi: f64,
    x_i: &[f64],
    x_j: &[f64],
    tau_i: f64,
    tau_j: f64,
    params: &ParamBlock,
) -> f64 {
    let d = x_i.len();
    let width = 2 * d + 1;
    let w = params.tensor(0);
    let v = params.tensor(1);
    let scale = params.tensor(2)[0];
    let rate = params.tensor(3)[0];
    let dt = (tau_i - tau_j).abs();
    let g = scale * (-rate * dt).exp();
    let b = v.len();
    let mut acc = 0.0;
    for o in 0..b {
        let wrow = &w[o * width..(o + 1) * width];
        let mut z = 0.0;
        for (wv, xv) in wrow[..d].iter().zip(x_i) {
            z += wv * xv;
        }
        for (wv, xv) in wrow[d..2 * d].iter().zip(x_j) {
            z += wv * xv;
        }
        z += wrow[2 * d] * g;
        acc += v[o] * z.tanh();
    }
    psi + acc
}
