//! Hybrid negative sampling for the contrastive objective.
//!
//! Per anchor, k negatives from three sources: half uniform over non-adjacent
//! nodes, a quarter structure-aware (highest cosine similarity to the anchor
//! but label-incompatible), and the remainder drawn from the current batch as
//! distractors. Every pick is strictly non-adjacent to the anchor and, when
//! both labels are known, carries a different label.

use crate::dense::{cosine, Mat};
use crate::error::{Error, Result};
use crate::graph::SparseGraph;
use crate::rng::{self, salt};

/// Sample `k` distinct negative node ids for `anchor`. `batch`, when given,
/// restricts the distractor portion to the current batch; the uniform and
/// structure-aware portions always draw from the whole eligible pool. Falls
/// back to the full pool when the batch cannot fill its quota.
pub fn sample_negatives(
    g: &SparseGraph,
    embeddings: &Mat,
    anchor: usize,
    k: usize,
    seed: u64,
    batch: Option<&[usize]>,
) -> Result<Vec<usize>> {
    let pool = eligible_pool(g, anchor);
    if pool.len() < k {
        return Err(Error::PoolExhausted {
            requested: k,
            available: pool.len(),
        });
    }
    let n_struct = k / 4;
    let n_uniform = k / 2;
    let n_batch = k - n_uniform - n_struct;

    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    let mut taken = vec![false; g.n_nodes()];

    // structure-aware first so the picks rank against the full pool
    if n_struct > 0 {
        let mut ranked: Vec<(usize, f64)> = pool
            .iter()
            .map(|&j| {
                let s = cosine(embeddings.row(anchor), embeddings.row(j)).unwrap_or(0.0);
                (j, s)
            })
            .collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for &(j, _) in ranked.iter().take(n_struct) {
            chosen.push(j);
            taken[j] = true;
        }
    }

    let mut rng = rng::seeded(seed ^ anchor as u64, salt::NEGATIVES);
    let remaining: Vec<usize> = pool.iter().copied().filter(|&j| !taken[j]).collect();
    for idx in rng::sample_distinct(&mut rng, remaining.len(), n_uniform) {
        chosen.push(remaining[idx]);
        taken[remaining[idx]] = true;
    }

    if n_batch > 0 {
        let batch_pool: Vec<usize> = match batch {
            Some(b) => b
                .iter()
                .copied()
                .filter(|&j| !taken[j] && pool.binary_search(&j).is_ok())
                .collect(),
            None => pool.iter().copied().filter(|&j| !taken[j]).collect(),
        };
        let batch_pool = if batch_pool.len() >= n_batch {
            batch_pool
        } else {
            pool.iter().copied().filter(|&j| !taken[j]).collect()
        };
        for idx in rng::sample_distinct(&mut rng, batch_pool.len(), n_batch) {
            chosen.push(batch_pool[idx]);
            taken[batch_pool[idx]] = true;
        }
    }

    Ok(chosen)
}

/// Sorted ids that are non-adjacent to the anchor, not the anchor itself,
/// and label-incompatible whenever both labels are known.
fn eligible_pool(g: &SparseGraph, anchor: usize) -> Vec<usize> {
    let anchor_label = g.label(anchor);
    (0..g.n_nodes())
        .filter(|&j| {
            if j == anchor || g.has_edge(anchor, j) {
                return false;
            }
            match (anchor_label, g.label(j)) {
                (Some(a), Some(b)) => a != b,
                _ => true,
            }
        })
        .collect()
}
