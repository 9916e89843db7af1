//! Losses: row softmax, labeled cross-entropy, and the cosine contrastive
//! objective restricted to sampled negatives.

use crate::dense::{cosine, norm2, Mat};
use crate::error::{Error, Result};

/// Row-wise softmax with max-shift stabilization. Rows sum to one.
pub fn softmax_rows(logits: &Mat) -> Mat {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean cross-entropy of `probs` against integer labels on the given rows.
/// Returns the loss and its gradient w.r.t. the probability matrix.
pub fn cross_entropy_labeled(
    probs: &Mat,
    labels: &[usize],
    rows: &[usize],
) -> Result<(f64, Mat)> {
    if rows.is_empty() {
        return Err(Error::invalid("cross entropy needs at least one labeled row"));
    }
    let mut grad = Mat::zeros(probs.rows(), probs.cols());
    let mut loss = 0.0;
    let inv = 1.0 / rows.len() as f64;
    const FLOOR: f64 = 1e-12;
    for &r in rows {
        let y = labels[r];
        let p = probs[(r, y)].max(FLOOR);
        loss -= p.ln();
        grad[(r, y)] = -inv / p;
    }
    Ok((loss * inv, grad))
}

/// Gradients of [`contrastive_loss`] w.r.t. both embedding matrices.
#[derive(Debug, Clone)]
pub struct ContrastiveGrads {
    pub d_anchors: Mat,
    pub d_positives: Mat,
}

/// Normalized contrastive objective with cosine similarity. Per anchor `i`
/// the denominator holds its own positive plus the rows of `positives`
/// listed in `negatives[i]`:
///
/// `loss_i = -log exp(s(a_i, p_i)/tau) / (exp(s(a_i,p_i)/tau) + sum_j exp(s(a_i, p_j)/tau))`
///
/// and the result is the mean over anchors. A zero-norm row makes cosine
/// undefined and is reported as an error naming the row.
pub fn contrastive_loss(
    anchors: &Mat,
    positives: &Mat,
    negatives: &[Vec<usize>],
    tau: f64,
) -> Result<(f64, ContrastiveGrads)> {
    if tau <= 0.0 {
        return Err(Error::invalid("temperature must be positive"));
    }
    if anchors.rows() != positives.rows()
        || anchors.cols() != positives.cols()
        || negatives.len() != anchors.rows()
    {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{} + matching negatives", anchors.rows(), anchors.cols()),
            got: format!(
                "{}x{}, {} negative lists",
                positives.rows(),
                positives.cols(),
                negatives.len()
            ),
            context: "contrastive_loss",
        });
    }
    let n = anchors.rows();
    for i in 0..n {
        if norm2(anchors.row(i)) == 0.0 {
            return Err(Error::invalid(format!("anchor row {i} has zero norm")));
        }
        if norm2(positives.row(i)) == 0.0 {
            return Err(Error::invalid(format!("positive row {i} has zero norm")));
        }
    }

    let mut total = 0.0;
    let mut d_anchors = Mat::zeros(n, anchors.cols());
    let mut d_positives = Mat::zeros(n, positives.cols());
    let inv_n = 1.0 / n as f64;

    for i in 0..n {
        let a = anchors.row(i);
        // candidate rows: own positive first, then the sampled negatives
        let mut rows = Vec::with_capacity(1 + negatives[i].len());
        rows.push(i);
        rows.extend(negatives[i].iter().copied());
        let mut sims = Vec::with_capacity(rows.len());
        for &j in &rows {
            let s = cosine(a, positives.row(j))
                .ok_or_else(|| Error::invalid(format!("positive row {j} has zero norm")))?;
            sims.push(s / tau);
        }
        let max = sims.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let exps: Vec<f64> = sims.iter().map(|&s| (s - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        total += denom.ln() + max - sims[0];

        // d loss_i / d sim_k = softmax_k - [k == positive]
        for (k, &j) in rows.iter().enumerate() {
            let coeff = (exps[k] / denom - if k == 0 { 1.0 } else { 0.0 }) * inv_n / tau;
            if coeff == 0.0 {
                continue;
            }
            let b = positives.row(j);
            let na = norm2(a);
            let nb = norm2(b);
            let s = crate::dense::dot(a, b) / (na * nb);
            // d s / d a = b/(|a||b|) - s a/|a|^2 ; symmetric for b
            let da = d_anchors.row_mut(i);
            for (idx, (av, bv)) in a.iter().zip(b).enumerate() {
                da[idx] += coeff * (bv / (na * nb) - s * av / (na * na));
            }
            let db = d_positives.row_mut(j);
            for (idx, (av, bv)) in a.iter().zip(b).enumerate() {
                db[idx] += coeff * (av / (na * nb) - s * bv / (nb * nb));
            }
        }
    }

    Ok((total * inv_n, ContrastiveGrads { d_anchors, d_positives }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{audit_matrix_grad, AuditConfig};
    use crate::rng;

    #[test]
    fn single_anchor_no_negatives_is_zero() {
        let a = Mat::from_rows(&[vec![1.0, 2.0]]);
        let (loss, _) = contrastive_loss(&a, &a, &[vec![]], 0.3).unwrap();
        assert!(loss.abs() < 1e-15);
    }

    #[test]
    fn orthonormal_pair_hand_value() {
        // two anchors with orthonormal embeddings, each using the other's
        // positive as its single negative, tau = 1:
        // loss per anchor = log(1 + e^{-1})
        let a = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let (loss, _) = contrastive_loss(&a, &a, &[vec![1], vec![0]], 1.0).unwrap();
        let expected = (1.0f64 + (-1.0f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-12, "{loss} vs {expected}");
        assert!((expected - 0.3132616875).abs() < 1e-9);
    }

    #[test]
    fn cosine_scale_invariance() {
        let mut r = rng::seeded(5, 0xc0);
        let a = Mat::from_vec(4, 3, (0..12).map(|_| rng::gaussian(&mut r)).collect());
        let p = Mat::from_vec(4, 3, (0..12).map(|_| rng::gaussian(&mut r)).collect());
        let negs = vec![vec![1, 2], vec![0, 3], vec![0, 1], vec![2]];
        let (l1, _) = contrastive_loss(&a, &p, &negs, 0.3).unwrap();
        let (l2, _) = contrastive_loss(&a.scale(5.0), &p.scale(5.0), &negs, 0.3).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
    }

    #[test]
    fn zero_norm_row_is_named() {
        let a = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
        let err = contrastive_loss(&a, &a, &[vec![], vec![]], 1.0).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
    }

    #[test]
    fn gradients_pass_audit() {
        let cfg = AuditConfig::default();
        let mut r = rng::seeded(77, 0xc1);
        let a = Mat::from_vec(3, 4, (0..12).map(|_| rng::gaussian(&mut r) + 0.5).collect());
        let p = Mat::from_vec(3, 4, (0..12).map(|_| rng::gaussian(&mut r) + 0.5).collect());
        let negs = vec![vec![1, 2], vec![2], vec![0, 1]];
        let (_, grads) = contrastive_loss(&a, &p, &negs, 0.3).unwrap();
        let fa = |x: &Mat| contrastive_loss(x, &p, &negs, 0.3).unwrap().0;
        let oa = audit_matrix_grad(&a, &grads.d_anchors, fa, &cfg);
        assert!(oa.passed(&cfg), "anchor grads: {}", oa.max_rel_err);
        let fp = |x: &Mat| contrastive_loss(&a, x, &negs, 0.3).unwrap().0;
        let op = audit_matrix_grad(&p, &grads.d_positives, fp, &cfg);
        assert!(op.passed(&cfg), "positive grads: {}", op.max_rel_err);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut r = rng::seeded(8, 0xc2);
        let m = Mat::from_vec(5, 7, (0..35).map(|_| 3.0 * rng::gaussian(&mut r)).collect());
        let s = softmax_rows(&m);
        for i in 0..s.rows() {
            let sum: f64 = s.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(s.row(i).iter().all(|&v| v >= 0.0));
        }
    }
}
