//! Feature synthesis: edge-to-node aggregation and multi-scale embeddings.

use crate::dense::Mat;
use crate::error::Result;
use crate::graph::SparseGraph;
use crate::nn::{self, ParamBlock};
use crate::operator::PropagationOperator;

/// Multi-hop embeddings `X^(k) = op^k X` for k = 0..K, plus their column-wise
/// concatenation.
#[derive(Debug, Clone)]
pub struct MultiScaleEmbedding {
    pub per_scale: Vec<Mat>,
    pub concatenated: Mat,
    pub k: usize,
}

/// Edge-to-node aggregation with masking:
/// `v_i = mean_{j in N(i)} (W_e e_ij + b_e)`, `x_i = GeLU(M(v_i))`.
///
/// `params` holds `[W_e (d_h x d_e), b_e (d_h x 1)]`. Missing (NaN) edge
/// feature entries are zero-imputed before the linear map, and the masking
/// operator `M` zero-fills any remaining non-finite aggregate entries.
/// Nodes without neighbors aggregate to the zero vector. Graphs without edge
/// features bypass this stage: the raw node features pass through.
pub fn aggregate_edge_features(g: &SparseGraph, params: &ParamBlock) -> Result<Mat> {
    let ef = match g.edge_features() {
        Some(ef) => ef,
        None => return Ok(g.features().clone()),
    };
    let (d_h, d_e) = params.shapes()[0];
    let w = params.tensor(0);
    let b = params.tensor(1);
    let n = g.n_nodes();
    let mut sums = Mat::zeros(n, d_h);
    let mut counts = vec![0usize; n];
    let mut mapped = vec![0.0f64; d_h];
    for (e_idx, &(i, j)) in g.edges().iter().enumerate() {
        let erow = ef.row(e_idx);
        for (o, m) in mapped.iter_mut().enumerate() {
            let mut acc = b[o];
            let wrow = &w[o * d_e..(o + 1) * d_e];
            for (wv, ev) in wrow.iter().zip(erow) {
                let e = if ev.is_finite() { *ev } else { 0.0 };
                acc += wv * e;
            }
            *m = acc;
        }
        for (dst, src) in sums.row_mut(i).iter_mut().zip(&mapped) {
            *dst += src;
        }
        for (dst, src) in sums.row_mut(j).iter_mut().zip(&mapped) {
            *dst += src;
        }
        counts[i] += 1;
        counts[j] += 1;
    }
    for i in 0..n {
        let c = counts[i];
        let row = sums.row_mut(i);
        for v in row.iter_mut() {
            if c > 0 {
                *v /= c as f64;
            }
            if !v.is_finite() {
                *v = 0.0; // masking operator M
            }
            *v = nn::gelu(*v);
        }
    }
    Ok(sums)
}

/// Repeated normalized propagation: `X^(k) = op * X^(k-1)`, concatenated in
/// ascending k. `op^k` is never materialized.
pub fn multi_scale(op: &PropagationOperator, x: &Mat, k: usize) -> MultiScaleEmbedding {
    multi_scale_threaded(op, x, k, 1)
}

pub fn multi_scale_threaded(
    op: &PropagationOperator,
    x: &Mat,
    k: usize,
    threads: usize,
) -> MultiScaleEmbedding {
    let mut per_scale = Vec::with_capacity(k + 1);
    per_scale.push(x.clone());
    for _ in 0..k {
        let next = op.values.matmat(per_scale.last().unwrap(), threads);
        per_scale.push(next);
    }
    let d = x.cols();
    let mut concatenated = Mat::zeros(x.rows(), (k + 1) * d);
    for (scale, m) in per_scale.iter().enumerate() {
        for r in 0..x.rows() {
            concatenated.row_mut(r)[scale * d..(scale + 1) * d].copy_from_slice(m.row(r));
        }
    }
    MultiScaleEmbedding {
        per_scale,
        concatenated,
        k,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::normalize_adjacency;
    use crate::rng;

    fn two_node_operator() -> PropagationOperator {
        let g = SparseGraph::new(2, &[(0, 1)], Mat::zeros(2, 1)).unwrap();
        normalize_adjacency(&g, true) // [[.5,.5],[.5,.5]]
    }

    #[test]
    fn identity_edge_map_recovers_constant_edge_feature() {
        let features = Mat::zeros(3, 2);
        let g = SparseGraph::new(3, &[(0, 1), (1, 2)], features).unwrap();
        let ef = Mat::from_rows(&[vec![0.3, -0.4], vec![0.3, -0.4]]);
        let g = g.with_edge_features(ef).unwrap();
        let mut params = ParamBlock::zeros(&[(2, 2), (2, 1)]);
        params.tensor_mut(0).copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let x = aggregate_edge_features(&g, &params).unwrap();
        // every node's mean incident edge vector is (0.3, -0.4); x = GeLU of it
        for i in 0..3 {
            assert!((x[(i, 0)] - nn::gelu(0.3)).abs() < 1e-15);
            assert!((x[(i, 1)] - nn::gelu(-0.4)).abs() < 1e-15);
        }
    }

    #[test]
    fn isolated_node_gets_zero() {
        let g = SparseGraph::new(3, &[(0, 1)], Mat::zeros(3, 2)).unwrap();
        let g = g
            .with_edge_features(Mat::from_rows(&[vec![1.0, 1.0]]))
            .unwrap();
        let params = ParamBlock::glorot(&[(2, 2), (2, 1)], 3);
        let x = aggregate_edge_features(&g, &params).unwrap();
        assert_eq!(x.row(2), &[0.0, 0.0]);
    }

    #[test]
    fn two_neighbor_mean() {
        let g = SparseGraph::new(3, &[(0, 1), (0, 2)], Mat::zeros(3, 2)).unwrap();
        let ef = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let g = g.with_edge_features(ef).unwrap();
        let mut params = ParamBlock::zeros(&[(2, 2), (2, 1)]);
        params.tensor_mut(0).copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let x = aggregate_edge_features(&g, &params).unwrap();
        // node 0 sees both edges: v_0 = (0.5, 0.5)
        assert!((x[(0, 0)] - nn::gelu(0.5)).abs() < 1e-15);
        assert!((x[(0, 1)] - nn::gelu(0.5)).abs() < 1e-15);
    }

    #[test]
    fn k_zero_is_identity() {
        let op = two_node_operator();
        let x = Mat::from_rows(&[vec![1.0], vec![0.0]]);
        let ms = multi_scale(&op, &x, 0);
        assert_eq!(ms.concatenated, x);
        assert_eq!(ms.per_scale.len(), 1);
    }

    #[test]
    fn hand_two_node_case() {
        let op = two_node_operator();
        let x = Mat::from_rows(&[vec![1.0], vec![0.0]]);
        let ms = multi_scale(&op, &x, 1);
        assert!((ms.per_scale[1][(0, 0)] - 0.5).abs() < 1e-15);
        assert!((ms.per_scale[1][(1, 0)] - 0.5).abs() < 1e-15);
        let expected = Mat::from_rows(&[vec![1.0, 0.5], vec![0.0, 0.5]]);
        assert!(ms.concatenated.sub(&expected).max_abs() < 1e-15);
    }

    #[test]
    fn matches_dense_power_oracle() {
        let mut r = rng::seeded(31, 0xab);
        let edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (0, 7), (2, 5)];
        let g = SparseGraph::new(8, &edges, Mat::zeros(8, 3)).unwrap();
        let op = normalize_adjacency(&g, true);
        let x = Mat::from_vec(8, 3, (0..24).map(|_| rng::gaussian(&mut r)).collect());
        let ms = multi_scale(&op, &x, 3);
        let dense = op.values.to_dense();
        let a3 = dense.matmul(&dense).matmul(&dense);
        let expected = a3.matmul(&x);
        assert!(ms.per_scale[3].sub(&expected).max_abs() < 1e-10);
    }

    #[test]
    fn prefix_property() {
        let op = two_node_operator();
        let x = Mat::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5]]);
        let big = multi_scale(&op, &x, 3);
        let small = multi_scale(&op, &x, 2);
        for k in 0..3 {
            assert_eq!(big.per_scale[k], small.per_scale[k]);
        }
    }

    #[test]
    fn non_expansive_when_operator_contractive() {
        let mut r = rng::seeded(77, 0xac);
        let edges = [(0, 1), (1, 2), (2, 0), (2, 3), (3, 4)];
        let g = SparseGraph::new(5, &edges, Mat::zeros(5, 2)).unwrap();
        let op = normalize_adjacency(&g, true); // norm <= 1
        let x = Mat::from_vec(5, 2, (0..10).map(|_| rng::gaussian(&mut r)).collect());
        let ms = multi_scale(&op, &x, 4);
        let base = x.frobenius_norm();
        for m in &ms.per_scale {
            assert!(m.frobenius_norm() <= base + 1e-9);
        }
    }

    #[test]
    fn threaded_matches_single_threaded() {
        let mut r = rng::seeded(5, 0xad);
        let edges: Vec<(usize, usize)> = (0..127).map(|i| (i, i + 1)).collect();
        let g = SparseGraph::new(128, &edges, Mat::zeros(128, 4)).unwrap();
        let op = normalize_adjacency(&g, true);
        let x = Mat::from_vec(128, 4, (0..512).map(|_| rng::gaussian(&mut r)).collect());
        let a = multi_scale_threaded(&op, &x, 3, 1);
        let b = multi_scale_threaded(&op, &x, 3, 4);
        assert_eq!(a.concatenated, b.concatenated);
    }
}
