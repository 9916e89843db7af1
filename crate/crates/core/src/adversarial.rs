//! Adversarial topology perturbation.
//!
//! A generator scores candidate pairs with flip probabilities
//! `P_ij = sigmoid(MLP([x_i || x_j || e_ij]))`; the soft perturbed adjacency
//! blends them as `A'_ij = A_ij (1 - P_ij) + (1 - A_ij) P_ij`. A
//! degree-normalized message-passing discriminator scores structures, trained
//! with a Wasserstein objective plus gradient penalty. The penalty's
//! parameter gradient needs a second backward pass through the
//! input-gradient computation; ReLU masks are treated as locally constant,
//! exactly as reverse-over-reverse autodiff would.
//!
//! The gradient penalty is taken in embedding space: the interpolated input
//! is `u*H + (1-u)*A'H` evaluated on the real structure, since interpolating
//! the message-passing support itself is not differentiable. Discriminator
//! normalization always uses original-graph degrees.

use serde::{Deserialize, Serialize};

use crate::dense::{stable_sum, Mat};
use crate::error::{Error, Result};
use crate::graph::SparseGraph;
use crate::nn::{backward_mlp, forward_mlp, MlpCache, MlpSpec, ParamBlock};
use crate::operator::{CsrMatrix, PropagationOperator, Provenance};
use crate::rng::{self, salt};
use crate::spectral::PowerIterConfig;

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

/// Flip probabilities over a candidate pair set.
#[derive(Debug, Clone)]
pub struct FlipProbabilities {
    pub candidates: Vec<(usize, usize)>,
    pub p: Vec<f64>,
    /// Mean Bernoulli entropy of `p`, in nats.
    pub entropy: f64,
}

/// Per-epoch GAN health signals, appended to a CSV by the training loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GanDiagnostics {
    pub d_loss: f64,
    pub g_loss: f64,
    pub grad_norm_d: f64,
    pub grad_norm_g: f64,
    pub flip_entropy: f64,
}

/// Mean Bernoulli entropy in nats, with 0 log 0 = 0.
pub fn bernoulli_entropy_mean(p: &[f64]) -> f64 {
    if p.is_empty() {
        return 0.0;
    }
    let h: f64 = p
        .iter()
        .map(|&q| {
            let mut h = 0.0;
            if q > 0.0 {
                h -= q * q.ln();
            }
            if q < 1.0 {
                h -= (1.0 - q) * (1.0 - q).ln();
            }
            h
        })
        .sum();
    h / p.len() as f64
}

/// Candidate pair set: every existing edge plus an equal-size seeded sample
/// of non-edges (all of them when fewer exist). Bounds generator cost at
/// O(|E|) per epoch.
pub fn candidate_pairs(g: &SparseGraph, seed: u64) -> Vec<(usize, usize)> {
    let n = g.n_nodes();
    let m = g.n_edges();
    let mut pairs: Vec<(usize, usize)> = g.edges().to_vec();
    let possible = n * (n - 1) / 2;
    let available = possible - m;
    let want = m.min(available);
    if want == 0 {
        return pairs;
    }
    let mut rng = rng::seeded(seed, salt::CANDIDATES);
    if available <= 4 * want || n < 128 {
        let mut non_edges = Vec::with_capacity(available);
        for a in 0..n {
            for b in (a + 1)..n {
                if !g.has_edge(a, b) {
                    non_edges.push((a, b));
                }
            }
        }
        for k in rng::sample_distinct(&mut rng, non_edges.len(), want) {
            pairs.push(non_edges[k]);
        }
    } else {
        use rand::RngExt;
        let mut seen = std::collections::HashSet::new();
        while seen.len() < want {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a == b {
                continue;
            }
            let e = (a.min(b), a.max(b));
            if !g.has_edge(e.0, e.1) && seen.insert(e) {
                pairs.push(e);
            }
        }
    }
    pairs
}

/// Cached generator forward pass.
pub struct GeneratorCache {
    mlp: MlpCache,
    pub input: Mat,
}

/// Generator spec: `[2 d (+ d_e) -> d_g -> 1]`, sigmoid output.
pub fn generator_spec(d_in: usize, d_edge: usize, d_g: usize) -> MlpSpec {
    MlpSpec::new(
        vec![2 * d_in + d_edge, d_g, 1],
        crate::nn::Activation::Gelu,
        crate::nn::Activation::Sigmoid,
    )
}

/// `P_ij = sigmoid(MLP([x_i || x_j || e_ij]))`, `e_ij` present only when the
/// graph carries edge features (zero-filled for non-edge candidates).
pub fn generator_flip_probs(
    g: &SparseGraph,
    x: &Mat,
    spec: &MlpSpec,
    params: &ParamBlock,
    candidates: &[(usize, usize)],
) -> Result<(FlipProbabilities, GeneratorCache)> {
    let d = x.cols();
    let d_edge = g.edge_features().map_or(0, Mat::cols);
    if spec.input_dim() != 2 * d + d_edge {
        return Err(Error::ShapeMismatch {
            expected: format!("MLP input {}", 2 * d + d_edge),
            got: format!("{}", spec.input_dim()),
            context: "generator_flip_probs",
        });
    }
    let edge_index: std::collections::HashMap<(usize, usize), usize> = g
        .edges()
        .iter()
        .enumerate()
        .map(|(idx, &e)| (e, idx))
        .collect();
    let mut input = Mat::zeros(candidates.len(), 2 * d + d_edge);
    for (row, &(i, j)) in candidates.iter().enumerate() {
        let r = input.row_mut(row);
        r[..d].copy_from_slice(x.row(i));
        r[d..2 * d].copy_from_slice(x.row(j));
        if d_edge > 0 {
            if let Some(&e_idx) = edge_index.get(&(i.min(j), i.max(j))) {
                r[2 * d..].copy_from_slice(g.edge_features().unwrap().row(e_idx));
            }
        }
    }
    let (out, mlp) = forward_mlp(spec, params, &input)?;
    let p: Vec<f64> = (0..out.rows()).map(|r| out[(r, 0)]).collect();
    let entropy = bernoulli_entropy_mean(&p);
    Ok((
        FlipProbabilities {
            candidates: candidates.to_vec(),
            p,
            entropy,
        },
        GeneratorCache { mlp, input },
    ))
}

/// Backpropagate dL/dP into the generator parameters.
pub fn generator_backward(
    spec: &MlpSpec,
    params: &mut ParamBlock,
    cache: &GeneratorCache,
    dp: &[f64],
) -> Result<()> {
    let upstream = Mat::from_vec(dp.len(), 1, dp.to_vec());
    backward_mlp(spec, params, &cache.mlp, &upstream)?;
    Ok(())
}

/// Rescale P so the expected flipped-edge mass stays within `delta * |E|`.
/// Returns the applied scale (1.0 when the budget already holds); treated as
/// a constant by the generator's backward pass.
pub fn apply_flip_budget(flips: &mut FlipProbabilities, delta: f64, n_edges: usize) -> f64 {
    let mass: f64 = flips.p.iter().sum();
    let budget = delta * n_edges as f64;
    if mass <= budget || mass == 0.0 {
        return 1.0;
    }
    let scale = budget / mass;
    for q in &mut flips.p {
        *q *= scale;
    }
    flips.entropy = bernoulli_entropy_mean(&flips.p);
    scale
}

// ---------------------------------------------------------------------------
// Soft perturbed adjacency
// ---------------------------------------------------------------------------

/// Symmetric soft adjacency entries (i < j) produced by the flip blend.
#[derive(Debug, Clone)]
pub struct SoftAdjacency {
    pub n: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

/// `A'_ij = A_ij (1 - P_ij) + (1 - A_ij) P_ij` on candidate pairs, original
/// adjacency elsewhere. Candidates are undirected, so both orientations take
/// the same value. Optionally symmetric-degree renormalized (adding a
/// self-loop before normalization when `self_loops`); `norm_estimate` is
/// refreshed either way.
pub fn perturbed_adjacency(
    g: &SparseGraph,
    flips: &FlipProbabilities,
    renormalize: bool,
    self_loops: bool,
    pi: &PowerIterConfig,
) -> (PropagationOperator, SoftAdjacency) {
    let n = g.n_nodes();
    let mut value: std::collections::BTreeMap<(usize, usize), f64> = g
        .edges()
        .iter()
        .map(|&(i, j)| ((i, j), 1.0))
        .collect();
    for (&(i, j), &p) in flips.candidates.iter().zip(flips.p.iter()) {
        let key = (i.min(j), i.max(j));
        let a = if g.has_edge(key.0, key.1) { 1.0 } else { 0.0 };
        value.insert(key, a * (1.0 - p) + (1.0 - a) * p);
    }
    let entries: Vec<(usize, usize, f64)> = value
        .into_iter()
        .filter(|&(_, v)| v != 0.0)
        .map(|((i, j), v)| (i, j, v))
        .collect();
    let soft = SoftAdjacency { n, entries };

    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(2 * soft.entries.len() + n);
    if renormalize {
        let mut soft_degree = vec![0.0f64; n];
        for &(i, j, v) in &soft.entries {
            soft_degree[i] += v;
            soft_degree[j] += v;
        }
        if self_loops {
            for d in &mut soft_degree {
                *d += 1.0;
            }
        }
        let inv_sqrt: Vec<f64> = soft_degree
            .iter()
            .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
            .collect();
        for &(i, j, v) in &soft.entries {
            let w = v * inv_sqrt[i] * inv_sqrt[j];
            triplets.push((i, j, w));
            triplets.push((j, i, w));
        }
        if self_loops {
            for i in 0..n {
                let w = inv_sqrt[i] * inv_sqrt[i];
                if w > 0.0 {
                    triplets.push((i, i, w));
                }
            }
        }
    } else {
        for &(i, j, v) in &soft.entries {
            triplets.push((i, j, v));
            triplets.push((j, i, v));
        }
    }
    let csr = CsrMatrix::from_triplets(n, n, &triplets);
    let provenance = if renormalize {
        Provenance::PerturbedRenormalized
    } else {
        Provenance::Perturbed
    };
    let op = PropagationOperator::from_csr(csr, provenance, renormalize && self_loops, pi);
    (op, soft)
}

// ---------------------------------------------------------------------------
// Discriminator
// ---------------------------------------------------------------------------

/// Message-passing input: per node a list of (neighbor, edge weight,
/// normalization coefficient). Coefficients are
/// `D_ii^{-1/2} D_jj^{-1/2} / sqrt(|N(i)|)` from the ORIGINAL graph; nodes
/// with no original neighbors receive no messages.
#[derive(Debug, Clone)]
pub struct DiscriminatorInput {
    pub lists: Vec<Vec<(usize, f64, f64)>>,
    pub n: usize,
}

impl DiscriminatorInput {
    pub fn from_graph(g: &SparseGraph) -> Self {
        let coef = original_coefficients(g);
        let lists = (0..g.n_nodes())
            .map(|i| {
                g.neighbors(i)
                    .iter()
                    .map(|&j| (j, 1.0, coef(i, j)))
                    .collect()
            })
            .collect();
        DiscriminatorInput {
            lists,
            n: g.n_nodes(),
        }
    }

    /// Soft input: support is every soft entry above `tol`, weighted by the
    /// soft adjacency value; coefficients still come from the original graph.
    pub fn from_soft(g: &SparseGraph, soft: &SoftAdjacency, tol: f64) -> Self {
        let coef = original_coefficients(g);
        let mut lists: Vec<Vec<(usize, f64, f64)>> = vec![Vec::new(); g.n_nodes()];
        for &(i, j, v) in &soft.entries {
            if v.abs() <= tol {
                continue;
            }
            lists[i].push((j, v, coef(i, j)));
            lists[j].push((i, v, coef(j, i)));
        }
        for l in &mut lists {
            l.sort_unstable_by_key(|&(j, _, _)| j);
        }
        DiscriminatorInput {
            lists,
            n: g.n_nodes(),
        }
    }
}

fn original_coefficients(g: &SparseGraph) -> impl Fn(usize, usize) -> f64 + '_ {
    move |i: usize, j: usize| {
        let di = g.degree(i) as f64;
        let dj = g.degree(j) as f64;
        if di == 0.0 || dj == 0.0 {
            0.0
        } else {
            1.0 / (di.sqrt() * dj.sqrt() * di.sqrt())
        }
    }
}

/// Parameter layout: `layers` weight matrices (first `hidden x d_in`, rest
/// `hidden x hidden`), then readout `w (1 x hidden)` and bias `b (1 x 1)`.
pub fn discriminator_param_shapes(d_in: usize, hidden: usize, layers: usize) -> Vec<(usize, usize)> {
    assert!(layers >= 1);
    let mut shapes = Vec::with_capacity(layers + 2);
    shapes.push((hidden, d_in));
    for _ in 1..layers {
        shapes.push((hidden, hidden));
    }
    shapes.push((1, hidden));
    shapes.push((1, 1));
    shapes
}

pub struct DiscriminatorCache {
    /// h^(0..L): post-activation states (h^(0) is the input).
    states: Vec<Mat>,
    /// Aggregated inputs a^(l) = Agg h^(l) per layer.
    aggregated: Vec<Mat>,
    /// Pre-activations z^(l+1) per layer.
    preacts: Vec<Mat>,
    layers: usize,
}

/// `h^(l+1)_i = ReLU(sum_j w_ij coef_ij W^(l) h^(l)_j)`, then a
/// permutation-invariant readout: `score = w^T mean_i h^(L)_i + b`.
/// Neighbor and readout sums run in value-sorted order, so the score is
/// bit-identical under node relabeling.
pub fn discriminator_forward(
    input: &DiscriminatorInput,
    h0: &Mat,
    params: &ParamBlock,
    layers: usize,
) -> Result<(f64, DiscriminatorCache)> {
    if h0.rows() != input.n {
        return Err(Error::ShapeMismatch {
            expected: format!("{} feature rows", input.n),
            got: format!("{}", h0.rows()),
            context: "discriminator_forward",
        });
    }
    let expected = discriminator_param_shapes(h0.cols(), params.shapes()[0].0, layers);
    if params.shapes() != expected.as_slice() {
        return Err(Error::ShapeMismatch {
            expected: format!("{expected:?}"),
            got: format!("{:?}", params.shapes()),
            context: "discriminator_forward",
        });
    }
    let mut states = vec![h0.clone()];
    let mut aggregated = Vec::with_capacity(layers);
    let mut preacts = Vec::with_capacity(layers);
    for l in 0..layers {
        let h = states.last().unwrap();
        let a = aggregate(input, h);
        let w = params.tensor(l);
        let (out_dim, in_dim) = params.shapes()[l];
        let mut z = Mat::zeros(input.n, out_dim);
        for i in 0..input.n {
            let arow = a.row(i);
            let zrow = z.row_mut(i);
            for (o, zv) in zrow.iter_mut().enumerate() {
                *zv = crate::dense::dot(&w[o * in_dim..(o + 1) * in_dim], arow);
            }
        }
        let mut hnext = z.clone();
        for v in hnext.data_mut() {
            *v = v.max(0.0);
        }
        aggregated.push(a);
        preacts.push(z);
        states.push(hnext);
    }
    let w_read = params.tensor(layers);
    let bias = params.tensor(layers + 1)[0];
    let last = states.last().unwrap();
    let hidden = last.cols();
    let mut mean = vec![0.0f64; hidden];
    let mut buf = Vec::with_capacity(input.n);
    for (o, m) in mean.iter_mut().enumerate() {
        buf.clear();
        for i in 0..input.n {
            buf.push(last[(i, o)]);
        }
        *m = stable_sum(&mut buf) / input.n as f64;
    }
    let score = crate::dense::dot(w_read, &mean) + bias;
    Ok((
        score,
        DiscriminatorCache {
            states,
            aggregated,
            preacts,
            layers,
        },
    ))
}

/// Weighted aggregation with value-sorted per-coordinate summation.
fn aggregate(input: &DiscriminatorInput, h: &Mat) -> Mat {
    let d = h.cols();
    let mut out = Mat::zeros(input.n, d);
    let mut buf: Vec<f64> = Vec::new();
    for i in 0..input.n {
        let list = &input.lists[i];
        if list.is_empty() {
            continue;
        }
        for o in 0..d {
            buf.clear();
            for &(j, w, c) in list {
                buf.push(w * c * h[(j, o)]);
            }
            out[(i, o)] = stable_sum(&mut buf);
        }
    }
    out
}

/// Transpose of [`aggregate`]: `out_j = sum_i w_ij coef_ij g_i` over the
/// directed entries (i receives from j).
fn aggregate_transpose(input: &DiscriminatorInput, g: &Mat) -> Mat {
    let d = g.cols();
    let mut out = Mat::zeros(input.n, d);
    for i in 0..input.n {
        for &(j, w, c) in &input.lists[i] {
            let coeff = w * c;
            let src = g.row(i).to_vec();
            let dst = out.row_mut(j);
            for (dv, sv) in dst.iter_mut().zip(&src) {
                *dv += coeff * sv;
            }
        }
    }
    out
}

/// Gradients produced by one discriminator backward pass.
pub struct DiscriminatorGrads {
    /// d score / d edge weight, aligned with `input.lists`.
    pub d_weights: Vec<Vec<f64>>,
    /// d score / d input features.
    pub d_h0: Mat,
}

/// Backward for `upstream * score`: accumulates parameter gradients and
/// returns edge-weight and input gradients.
pub fn discriminator_backward(
    input: &DiscriminatorInput,
    params: &mut ParamBlock,
    cache: &DiscriminatorCache,
    upstream: f64,
) -> DiscriminatorGrads {
    let layers = cache.layers;
    let n = input.n;
    let hidden = cache.states[layers].cols();
    // readout
    let w_read: Vec<f64> = params.tensor(layers).to_vec();
    {
        let last = &cache.states[layers];
        let gw = params.grad_mut(layers);
        for o in 0..hidden {
            let mut mean = 0.0;
            for i in 0..n {
                mean += last[(i, o)];
            }
            gw[o] += upstream * mean / n as f64;
        }
        params.grad_mut(layers + 1)[0] += upstream;
    }
    // delta chain
    let mut delta = Mat::zeros(n, hidden);
    for i in 0..n {
        for (o, dv) in delta.row_mut(i).iter_mut().enumerate() {
            *dv = upstream * w_read[o] / n as f64;
        }
    }
    let mut d_weights: Vec<Vec<f64>> = input
        .lists
        .iter()
        .map(|l| vec![0.0; l.len()])
        .collect();
    for l in (0..layers).rev() {
        let (out_dim, in_dim) = params.shapes()[l];
        // gamma = delta (.) relu'(z)
        let mut gamma = delta.clone();
        for (gv, zv) in gamma.data_mut().iter_mut().zip(cache.preacts[l].data()) {
            if *zv <= 0.0 {
                *gv = 0.0;
            }
        }
        // dW^(l) += gamma^T a^(l)
        {
            let a = &cache.aggregated[l];
            let gw = params.grad_mut(l);
            for i in 0..n {
                let grow = gamma.row(i);
                let arow = a.row(i);
                for (o, gv) in grow.iter().enumerate() {
                    if *gv == 0.0 {
                        continue;
                    }
                    let wrow = &mut gw[o * in_dim..(o + 1) * in_dim];
                    for (wv, av) in wrow.iter_mut().zip(arow) {
                        *wv += gv * av;
                    }
                }
            }
        }
        // beta = gamma W^(l): gradient w.r.t. the aggregated input
        let w: Vec<f64> = params.tensor(l).to_vec();
        let mut beta = Mat::zeros(n, in_dim);
        for i in 0..n {
            let grow = gamma.row(i);
            let brow = beta.row_mut(i);
            for (o, gv) in grow.iter().enumerate() {
                if *gv == 0.0 {
                    continue;
                }
                let wrow = &w[o * in_dim..(o + 1) * in_dim];
                for (bv, wv) in brow.iter_mut().zip(wrow) {
                    *bv += gv * wv;
                }
            }
        }
        let _ = out_dim;
        // edge-weight gradients: d score / d w_ij += coef * beta_i . h^(l)_j
        let h = &cache.states[l];
        for i in 0..n {
            for (idx, &(j, _, c)) in input.lists[i].iter().enumerate() {
                d_weights[i][idx] += c * crate::dense::dot(beta.row(i), h.row(j));
            }
        }
        // delta^(l) = Agg^T beta
        delta = aggregate_transpose(input, &beta);
    }
    DiscriminatorGrads {
        d_weights,
        d_h0: delta,
    }
}

/// Gradient of the score w.r.t. the input features (masks cached), used for
/// the gradient-penalty norm.
pub fn discriminator_input_gradient(
    input: &DiscriminatorInput,
    params: &ParamBlock,
    cache: &DiscriminatorCache,
) -> Mat {
    let layers = cache.layers;
    let n = input.n;
    let hidden = cache.states[layers].cols();
    let w_read = params.tensor(layers);
    let mut delta = Mat::zeros(n, hidden);
    for i in 0..n {
        for (o, dv) in delta.row_mut(i).iter_mut().enumerate() {
            *dv = w_read[o] / n as f64;
        }
    }
    for l in (0..layers).rev() {
        let in_dim = params.shapes()[l].1;
        let mut gamma = delta.clone();
        for (gv, zv) in gamma.data_mut().iter_mut().zip(cache.preacts[l].data()) {
            if *zv <= 0.0 {
                *gv = 0.0;
            }
        }
        let w = params.tensor(l);
        let mut beta = Mat::zeros(n, in_dim);
        for i in 0..n {
            let grow = gamma.row(i);
            let brow = beta.row_mut(i);
            for (o, gv) in grow.iter().enumerate() {
                if *gv == 0.0 {
                    continue;
                }
                let wrow = &w[o * in_dim..(o + 1) * in_dim];
                for (bv, wv) in brow.iter_mut().zip(wrow) {
                    *bv += gv * wv;
                }
            }
        }
        delta = aggregate_transpose(input, &beta);
    }
    delta
}

/// Full gradient-penalty path at one interpolated input: forward, input
/// gradient, penalty `gp * (||grad|| - 1)^2`, and the second backward that
/// accumulates the penalty's parameter gradients. Returns the gradient norm
/// and the penalty value.
pub fn discriminator_penalty_path(
    input: &DiscriminatorInput,
    h_interp: &Mat,
    params: &mut ParamBlock,
    gp_coeff: f64,
    layers: usize,
) -> Result<(f64, f64)> {
    let (_, cache) = discriminator_forward(input, h_interp, params, layers)?;
    let g = discriminator_input_gradient(input, params, &cache);
    let gnorm = g.frobenius_norm();
    let penalty = gp_coeff * (gnorm - 1.0) * (gnorm - 1.0);
    if gnorm < 1e-12 {
        return Ok((gnorm, penalty));
    }
    // v = dP/dg
    let v = g.scale(2.0 * gp_coeff * (gnorm - 1.0) / gnorm);

    // linearized forward of v through the cached masks:
    // u^(l+1) = mask^(l+1) (.) ((Agg u^(l)) W^(l)^T)
    // while the delta chain of the input gradient is recomputed to expose the
    // middle factors gamma^(l+1).
    let n = input.n;
    let hidden = cache.states[layers].cols();

    // recompute the delta/gamma chain (same as discriminator_input_gradient)
    let w_read: Vec<f64> = params.tensor(layers).to_vec();
    let mut deltas: Vec<Mat> = vec![Mat::zeros(0, 0); layers + 1];
    let mut delta = Mat::zeros(n, hidden);
    for i in 0..n {
        for (o, dv) in delta.row_mut(i).iter_mut().enumerate() {
            *dv = w_read[o] / n as f64;
        }
    }
    deltas[layers] = delta.clone();
    for l in (0..layers).rev() {
        let in_dim = params.shapes()[l].1;
        let mut gamma = delta.clone();
        for (gv, zv) in gamma.data_mut().iter_mut().zip(cache.preacts[l].data()) {
            if *zv <= 0.0 {
                *gv = 0.0;
            }
        }
        let w = params.tensor(l);
        let mut beta = Mat::zeros(n, in_dim);
        for i in 0..n {
            let grow = gamma.row(i);
            let brow = beta.row_mut(i);
            for (o, gv) in grow.iter().enumerate() {
                if *gv == 0.0 {
                    continue;
                }
                let wrow = &w[o * in_dim..(o + 1) * in_dim];
                for (bv, wv) in brow.iter_mut().zip(wrow) {
                    *bv += gv * wv;
                }
            }
        }
        delta = aggregate_transpose(input, &beta);
        deltas[l] = delta.clone();
    }

    // u chain upward, accumulating dphi/dW^(l) = gamma^(l+1)^T (Agg u^(l))
    let mut u = v;
    for l in 0..layers {
        let (out_dim, in_dim) = params.shapes()[l];
        let agg_u = aggregate(input, &u);
        // gamma^(l+1) from the stored delta^(l+1)
        let mut gamma = deltas[l + 1].clone();
        for (gv, zv) in gamma.data_mut().iter_mut().zip(cache.preacts[l].data()) {
            if *zv <= 0.0 {
                *gv = 0.0;
            }
        }
        {
            let gw = params.grad_mut(l);
            for i in 0..n {
                let grow = gamma.row(i);
                let arow = agg_u.row(i);
                for (o, gv) in grow.iter().enumerate() {
                    if *gv == 0.0 {
                        continue;
                    }
                    let wrow = &mut gw[o * in_dim..(o + 1) * in_dim];
                    for (wv, av) in wrow.iter_mut().zip(arow) {
                        *wv += gv * av;
                    }
                }
            }
        }
        // u^(l+1) = mask (.) (agg_u W^T)
        let w = params.tensor(l);
        let mut next = Mat::zeros(n, out_dim);
        for i in 0..n {
            let arow = agg_u.row(i);
            let nrow = next.row_mut(i);
            for (o, nv) in nrow.iter_mut().enumerate() {
                *nv = crate::dense::dot(&w[o * in_dim..(o + 1) * in_dim], arow);
            }
        }
        for (nv, zv) in next.data_mut().iter_mut().zip(cache.preacts[l].data()) {
            if *zv <= 0.0 {
                *nv = 0.0;
            }
        }
        u = next;
    }
    // dphi/dw_read = (1/N) sum_i u^(L)_i
    {
        let gw = params.grad_mut(layers);
        for o in 0..hidden {
            let mut acc = 0.0;
            for i in 0..n {
                acc += u[(i, o)];
            }
            gw[o] += acc / n as f64;
        }
    }
    Ok((gnorm, penalty))
}

/// Wasserstein losses with gradient penalty:
/// `d_loss = fake - real + gp (||grad|| - 1)^2`, `g_loss = -fake`.
pub fn wgan_gp_losses(
    real_score: f64,
    fake_score: f64,
    interp_grad_norm: f64,
    gp_coeff: f64,
) -> (f64, f64) {
    assert!(gp_coeff >= 0.0);
    let d_loss = fake_score - real_score
        + gp_coeff * (interp_grad_norm - 1.0) * (interp_grad_norm - 1.0);
    let g_loss = -fake_score;
    (d_loss, g_loss)
}

// ---------------------------------------------------------------------------
// Structural interpretation of the modifications
// ---------------------------------------------------------------------------

/// Topological profile of a modified edge set: fraction touching an
/// above-median-degree node, mean endpoint feature distance, and cross-label
/// fraction.
pub fn perturbation_structure_metrics(
    g: &SparseGraph,
    modified: &[(usize, usize)],
) -> Result<(f64, f64, f64)> {
    if modified.is_empty() {
        return Err(Error::invalid("no modified edges to profile"));
    }
    let mut degrees: Vec<usize> = (0..g.n_nodes()).map(|i| g.degree(i)).collect();
    degrees.sort_unstable();
    let n = degrees.len();
    let deg_med = if n % 2 == 1 {
        degrees[n / 2] as f64
    } else {
        (degrees[n / 2 - 1] + degrees[n / 2]) as f64 / 2.0
    };
    let mut high_degree = 0usize;
    let mut feat_div = 0.0f64;
    let mut cross_label = 0usize;
    for &(i, j) in modified {
        if (g.degree(i).max(g.degree(j)) as f64) > deg_med {
            high_degree += 1;
        }
        let diff: f64 = g
            .features()
            .row(i)
            .iter()
            .zip(g.features().row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        feat_div += diff;
        if let (Some(a), Some(b)) = (g.label(i), g.label(j)) {
            if a != b {
                cross_label += 1;
            }
        }
    }
    let m = modified.len() as f64;
    Ok((high_degree as f64 / m, feat_div / m, cross_label as f64 / m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{audit_param_grads, AuditConfig};

    fn line_graph(n: usize) -> SparseGraph {
        let edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
        SparseGraph::new(n, &edges, Mat::zeros(n, 2)).unwrap()
    }

    #[test]
    fn zero_weight_generator_gives_half_and_max_entropy() {
        let g = line_graph(4);
        let x = Mat::from_rows(&[vec![1.0], vec![2.0], vec![3.0], vec![4.0]]);
        let spec = generator_spec(1, 0, 3);
        let params = ParamBlock::zeros(&spec.param_shapes());
        let cands = candidate_pairs(&g, 3);
        let (flips, _) = generator_flip_probs(&g, &x, &spec, &params, &cands).unwrap();
        for &p in &flips.p {
            assert!((p - 0.5).abs() < 1e-15);
        }
        assert!((flips.entropy - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn saturated_probs_have_tiny_entropy() {
        let p = [crate::nn::sigmoid(20.0), crate::nn::sigmoid(-20.0)];
        assert!(bernoulli_entropy_mean(&p) < 1e-6);
    }

    #[test]
    fn entropy_maximized_only_at_half() {
        assert!((bernoulli_entropy_mean(&[0.5]) - std::f64::consts::LN_2).abs() < 1e-15);
        for &p in &[0.1, 0.3, 0.49, 0.7, 0.95] {
            assert!(bernoulli_entropy_mean(&[p]) < std::f64::consts::LN_2);
        }
    }

    #[test]
    fn perturbed_entries_follow_blend() {
        let g = line_graph(3); // edges (0,1),(1,2)
        let flips = FlipProbabilities {
            candidates: vec![(0, 1), (0, 2)],
            p: vec![1.0, 0.3],
            entropy: 0.0,
        };
        let (_, soft) = perturbed_adjacency(&g, &flips, false, false, &PowerIterConfig::preprocessing());
        let lookup = |a: usize, b: usize| {
            soft.entries
                .iter()
                .find(|&&(i, j, _)| (i, j) == (a, b))
                .map(|&(_, _, v)| v)
        };
        // edge with P = 1 flips off (value 0 is dropped from entries)
        assert_eq!(lookup(0, 1), None);
        // non-edge with P = 0.3 appears with weight 0.3
        assert!((lookup(0, 2).unwrap() - 0.3).abs() < 1e-15);
        // untouched edge stays at 1
        assert!((lookup(1, 2).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn identity_perturbation_preserves_adjacency() {
        let g = line_graph(4);
        let cands = candidate_pairs(&g, 5);
        let flips = FlipProbabilities {
            p: vec![0.0; cands.len()],
            candidates: cands,
            entropy: 0.0,
        };
        let (op, _) = perturbed_adjacency(&g, &flips, false, false, &PowerIterConfig::oracle());
        let dense = op.values.to_dense();
        for i in 0..4 {
            for j in 0..4 {
                let expected = if g.has_edge(i, j) { 1.0 } else { 0.0 };
                assert_eq!(dense[(i, j)], expected);
            }
        }
    }

    #[test]
    fn soft_entries_stay_in_unit_interval() {
        let g = line_graph(5);
        let mut r = crate::rng::seeded(4, 0x77);
        let cands = candidate_pairs(&g, 9);
        let p: Vec<f64> = cands.iter().map(|_| crate::rng::uniform(&mut r, 0.0, 1.0)).collect();
        let flips = FlipProbabilities { candidates: cands, p, entropy: 0.0 };
        let (op, soft) = perturbed_adjacency(&g, &flips, false, false, &PowerIterConfig::preprocessing());
        for &(_, _, v) in &soft.entries {
            assert!((0.0..=1.0).contains(&v));
        }
        for &v in op.values.values() {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn budget_caps_expected_mass() {
        let mut flips = FlipProbabilities {
            candidates: vec![(0, 1), (0, 2), (1, 2)],
            p: vec![0.9, 0.8, 0.7],
            entropy: 0.0,
        };
        let scale = apply_flip_budget(&mut flips, 0.1, 10); // budget = 1.0
        assert!(scale < 1.0);
        let mass: f64 = flips.p.iter().sum();
        assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_node_score_is_readout_bias() {
        let g = SparseGraph::new(1, &[], Mat::zeros(1, 2)).unwrap();
        let input = DiscriminatorInput::from_graph(&g);
        let mut params = ParamBlock::glorot(&discriminator_param_shapes(2, 3, 2), 7);
        params.tensor_mut(3)[0] = 0.37;
        let h0 = Mat::from_rows(&[vec![0.5, -1.0]]);
        let (score, _) = discriminator_forward(&input, &h0, &params, 2).unwrap();
        assert!((score - 0.37).abs() < 1e-15);
    }

    #[test]
    fn two_node_scalar_oracle() {
        // 2 nodes, 1 edge, 1 layer, hidden 1: full scalar arithmetic
        let g = SparseGraph::new(2, &[(0, 1)], Mat::zeros(2, 1)).unwrap();
        let input = DiscriminatorInput::from_graph(&g);
        let mut params = ParamBlock::zeros(&discriminator_param_shapes(1, 1, 1));
        params.tensor_mut(0)[0] = 0.8; // W
        params.tensor_mut(1)[0] = 1.3; // readout w
        params.tensor_mut(2)[0] = -0.2; // bias
        let h0 = Mat::from_rows(&[vec![0.6], vec![-0.4]]);
        let (score, _) = discriminator_forward(&input, &h0, &params, 1).unwrap();
        // degrees are 1; coef = 1/(1*1*1) = 1
        let m0 = (0.8f64 * (-0.4)).max(0.0); // node 0 aggregates node 1
        let m1 = (0.8f64 * 0.6).max(0.0);
        let expected = 1.3 * (m0 + m1) / 2.0 - 0.2;
        assert!((score - expected).abs() < 1e-12, "{score} vs {expected}");
    }

    #[test]
    fn permutation_invariance_is_bit_exact() {
        let mut r = crate::rng::seeded(21, 0x78);
        let n = 8;
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if crate::rng::uniform(&mut r, 0.0, 1.0) < 0.4 {
                    edges.push((i, j));
                }
            }
        }
        edges.push((0, 1));
        let g = SparseGraph::new(n, &edges, Mat::zeros(n, 3)).unwrap();
        let params = ParamBlock::glorot(&discriminator_param_shapes(3, 4, 2), 3);
        let h0 = Mat::from_vec(n, 3, (0..n * 3).map(|_| crate::rng::gaussian(&mut r)).collect());
        let input = DiscriminatorInput::from_graph(&g);
        let (score, _) = discriminator_forward(&input, &h0, &params, 2).unwrap();

        // permute everything
        let perm: Vec<usize> = (0..n).rev().collect();
        let pedges: Vec<(usize, usize)> = edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        let pg = SparseGraph::new(n, &pedges, Mat::zeros(n, 3)).unwrap();
        let mut ph0 = Mat::zeros(n, 3);
        for i in 0..n {
            ph0.row_mut(perm[i]).copy_from_slice(h0.row(i));
        }
        let pinput = DiscriminatorInput::from_graph(&pg);
        let (pscore, _) = discriminator_forward(&pinput, &ph0, &params, 2).unwrap();
        assert_eq!(score.to_bits(), pscore.to_bits());
    }

    #[test]
    fn discriminator_param_grads_pass_audit() {
        let aud = AuditConfig::default();
        let mut r = crate::rng::seeded(5, 0x79);
        let g = line_graph(5);
        let input = DiscriminatorInput::from_graph(&g);
        let mut params = ParamBlock::glorot(&discriminator_param_shapes(2, 3, 2), 11);
        let h0 = Mat::from_vec(5, 2, (0..10).map(|_| crate::rng::gaussian(&mut r)).collect());
        let (_, cache) = discriminator_forward(&input, &h0, &params, 2).unwrap();
        params.zero_grads();
        discriminator_backward(&input, &mut params, &cache, 1.0);
        let analytic = params.grads.clone();
        let outcome = audit_param_grads(
            &params,
            &analytic,
            |p| discriminator_forward(&input, &h0, p, 2).unwrap().0,
            &aud,
        );
        assert!(outcome.passed(&aud), "max rel err {}", outcome.max_rel_err);
    }

    #[test]
    fn discriminator_input_and_weight_grads_pass_audit() {
        let aud = AuditConfig::default();
        let mut r = crate::rng::seeded(6, 0x7a);
        let g = line_graph(4);
        let input = DiscriminatorInput::from_graph(&g);
        let mut params = ParamBlock::glorot(&discriminator_param_shapes(2, 3, 2), 13);
        let h0 = Mat::from_vec(4, 2, (0..8).map(|_| crate::rng::gaussian(&mut r)).collect());
        let (_, cache) = discriminator_forward(&input, &h0, &params, 2).unwrap();
        let grads = discriminator_backward(&input, &mut params, &cache, 1.0);
        // input gradient
        let outcome = crate::nn::audit_matrix_grad(
            &h0,
            &grads.d_h0,
            |hp| discriminator_forward(&input, hp, &params, 2).unwrap().0,
            &aud,
        );
        assert!(outcome.passed(&aud), "input grads: {}", outcome.max_rel_err);
        // edge-weight gradients by finite differences
        let h = 1e-6;
        for i in 0..input.n {
            for idx in 0..input.lists[i].len() {
                let mut plus = input.clone();
                plus.lists[i][idx].1 += h;
                let mut minus = input.clone();
                minus.lists[i][idx].1 -= h;
                let fp = discriminator_forward(&plus, &h0, &params, 2).unwrap().0;
                let fm = discriminator_forward(&minus, &h0, &params, 2).unwrap().0;
                let fd = (fp - fm) / (2.0 * h);
                let an = grads.d_weights[i][idx];
                assert!(
                    (an - fd).abs() / an.abs().max(fd.abs()).max(1e-5) < 1e-4,
                    "weight ({i},{idx}): {an} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn gp_penalty_parameter_grads_pass_audit() {
        let aud = AuditConfig::default();
        for seed in 0..3u64 {
            let mut r = crate::rng::seeded(seed, 0x7b);
            let g = line_graph(5);
            let input = DiscriminatorInput::from_graph(&g);
            let mut params = ParamBlock::glorot(&discriminator_param_shapes(2, 3, 2), seed + 31);
            let h0 = Mat::from_vec(5, 2, (0..10).map(|_| crate::rng::gaussian(&mut r)).collect());
            params.zero_grads();
            let (gnorm, _) = discriminator_penalty_path(&input, &h0, &mut params, 10.0, 2).unwrap();
            assert!(gnorm > 0.0);
            let analytic = params.grads.clone();
            let outcome = audit_param_grads(
                &params,
                &analytic,
                |p| {
                    let (_, cache) = discriminator_forward(&input, &h0, p, 2).unwrap();
                    let gmat = discriminator_input_gradient(&input, p, &cache);
                    let gn = gmat.frobenius_norm();
                    10.0 * (gn - 1.0) * (gn - 1.0)
                },
                &aud,
            );
            assert!(
                outcome.passed(&aud),
                "seed {seed}: max rel err {} at {}",
                outcome.max_rel_err,
                outcome.worst_index
            );
        }
    }

    #[test]
    fn wgan_loss_arithmetic() {
        let (d, g) = wgan_gp_losses(1.5, 1.5, 1.0, 10.0);
        assert_eq!(d, 0.0);
        assert_eq!(g, -1.5);
        let (d, _) = wgan_gp_losses(0.3, 0.8, 1.4, 0.0);
        assert!((d - 0.5).abs() < 1e-15);
    }

    #[test]
    fn structure_metrics_cases() {
        let feats = Mat::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0], vec![3.0, 4.0]]);
        let g = SparseGraph::new(3, &[(0, 1), (1, 2)], feats)
            .unwrap()
            .with_labels(vec![Some(0), Some(1), Some(0)], 2)
            .unwrap();
        // all modified edges cross-label -> xi_h = 1
        let (_, _, xi_h) = perturbation_structure_metrics(&g, &[(0, 1), (1, 2)]).unwrap();
        assert_eq!(xi_h, 1.0);
        // identical endpoint features -> xi_f = 0
        let (_, xi_f, _) = perturbation_structure_metrics(&g, &[(0, 1)]).unwrap();
        assert_eq!(xi_f, 0.0);
        // 3-4-5 triangle distance
        let (_, xi_f, _) = perturbation_structure_metrics(&g, &[(1, 2)]).unwrap();
        assert!((xi_f - 5.0).abs() < 1e-12);
        assert!(perturbation_structure_metrics(&g, &[]).is_err());
    }

    #[test]
    fn candidates_cover_edges_and_non_edges() {
        let g = line_graph(6);
        let cands = candidate_pairs(&g, 17);
        assert_eq!(cands.len(), 2 * g.n_edges());
        for &(i, j) in &cands[..g.n_edges()] {
            assert!(g.has_edge(i, j));
        }
        for &(i, j) in &cands[g.n_edges()..] {
            assert!(!g.has_edge(i, j));
        }
        // deterministic
        assert_eq!(cands, candidate_pairs(&g, 17));
    }

    #[test]
    fn generator_is_permutation_equivariant() {
        // consistent relabeling of nodes and candidate pairs permutes P
        let mut r = crate::rng::seeded(14, 0x7d);
        let n = 6;
        let edges = [(0, 1), (1, 2), (2, 3), (4, 5)];
        let g = SparseGraph::new(n, &edges, Mat::zeros(n, 2)).unwrap();
        let x = Mat::from_vec(n, 2, (0..n * 2).map(|_| crate::rng::gaussian(&mut r)).collect());
        let spec = generator_spec(2, 0, 3);
        let params = spec.init_params(8);
        let cands = vec![(0, 1), (2, 3), (1, 4), (0, 5)];
        let (flips, _) = generator_flip_probs(&g, &x, &spec, &params, &cands).unwrap();

        let perm: Vec<usize> = vec![5, 4, 3, 2, 1, 0];
        let pedges: Vec<(usize, usize)> = edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        let pg = SparseGraph::new(n, &pedges, Mat::zeros(n, 2)).unwrap();
        let mut px = Mat::zeros(n, 2);
        for i in 0..n {
            px.row_mut(perm[i]).copy_from_slice(x.row(i));
        }
        let pcands: Vec<(usize, usize)> = cands.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        let (pflips, _) = generator_flip_probs(&pg, &px, &spec, &params, &pcands).unwrap();
        for (a, b) in flips.p.iter().zip(&pflips.p) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn generator_grads_pass_audit() {
        let aud = AuditConfig::default();
        let g = line_graph(4);
        let mut r = crate::rng::seeded(8, 0x7c);
        let x = Mat::from_vec(4, 2, (0..8).map(|_| crate::rng::gaussian(&mut r)).collect());
        let spec = generator_spec(2, 0, 3);
        let mut params = spec.init_params(19);
        let cands = candidate_pairs(&g, 23);
        let dp: Vec<f64> = (0..cands.len()).map(|_| crate::rng::gaussian(&mut r)).collect();
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
        assert!(outcome.passed(&aud), "max rel err {}", outcome.max_rel_err);
    }
}
