//! Shared test support: an independent dense spectral-norm oracle (cyclic
//! Jacobi on the Gram matrix) and random graph builders. The oracle never
//! touches the power-iteration path it is used to certify.

// each test binary uses its own subset of these helpers
#![allow(dead_code)]

use resprop::dense::Mat;
use resprop::graph::SparseGraph;
use resprop::rng;

/// Eigenvalues of a symmetric matrix by cyclic Jacobi sweeps.
pub fn jacobi_symmetric_eigenvalues(m: &Mat, max_sweeps: usize) -> Vec<f64> {
    assert_eq!(m.rows(), m.cols());
    let n = m.rows();
    let mut a = m.clone();
    for _ in 0..max_sweeps {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let tau = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    1.0 / (tau - (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[(i, i)]).collect()
}

/// Largest singular value via the Gram matrix and the Jacobi eigensolver.
pub fn dense_spectral_norm(m: &Mat) -> f64 {
    let gram = m.transpose().matmul(m);
    jacobi_symmetric_eigenvalues(&gram, 60)
        .into_iter()
        .fold(0.0f64, |mx, v| mx.max(v.max(0.0)))
        .sqrt()
}

/// Erdos-Renyi-style random graph with Gaussian features; guaranteed at
/// least one edge.
pub fn random_graph(seed: u64, n: usize, p: f64, d: usize) -> SparseGraph {
    let mut r = rng::seeded(seed, 0x7e57);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng::uniform(&mut r, 0.0, 1.0) < p {
                edges.push((i, j));
            }
        }
    }
    if edges.is_empty() {
        edges.push((0, 1));
    }
    let feats = Mat::from_vec(n, d, (0..n * d).map(|_| rng::gaussian(&mut r)).collect());
    SparseGraph::new(n, &edges, feats).unwrap()
}

/// Connected random graph: a random spanning path plus extra random edges.
pub fn connected_random_graph(seed: u64, n: usize, extra_p: f64, d: usize) -> SparseGraph {
    let mut r = rng::seeded(seed, 0x7e58);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng::sample_distinct(&mut r, i + 1, 1)[0];
        order.swap(i, j);
    }
    let mut edges: Vec<(usize, usize)> = order.windows(2).map(|w| (w[0], w[1])).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng::uniform(&mut r, 0.0, 1.0) < extra_p {
                edges.push((i, j));
            }
        }
    }
    let feats = Mat::from_vec(n, d, (0..n * d).map(|_| rng::gaussian(&mut r)).collect());
    SparseGraph::new(n, &edges, feats).unwrap()
}
