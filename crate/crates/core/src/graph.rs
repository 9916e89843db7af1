//! Sparse undirected graphs with features, labels, and timestamps.
//!
//! Edges are stored once as `(i, j)` with `i < j`; neighbor lists expose the
//! symmetric closure. Graphs are immutable after construction, so shared read
//! access across threads is safe.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::RngExt;

use crate::dense::Mat;
use crate::error::{Error, Result};
use crate::rng::{self, salt};

#[derive(Debug, Clone)]
pub struct SparseGraph {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    features: Mat,
    labels: Option<Vec<usize>>,
    labeled_mask: Vec<bool>,
    n_classes: usize,
    edge_features: Option<Mat>,
    timestamps: Option<Vec<f64>>,
}

impl SparseGraph {
    /// Build a graph from undirected edge pairs. Self-loops are rejected,
    /// duplicates (in either orientation) are collapsed.
    pub fn new(n_nodes: usize, edges: &[(usize, usize)], features: Mat) -> Result<Self> {
        if n_nodes == 0 {
            return Err(Error::invalid("graph must have at least one node"));
        }
        if features.rows() != n_nodes {
            return Err(Error::ShapeMismatch {
                expected: format!("{n_nodes} feature rows"),
                got: format!("{}", features.rows()),
                context: "SparseGraph::new",
            });
        }
        let mut seen = HashSet::new();
        let mut canon = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a == b {
                return Err(Error::invalid(format!("self-loop on node {a}")));
            }
            if a >= n_nodes || b >= n_nodes {
                return Err(Error::invalid(format!("edge ({a},{b}) out of range")));
            }
            let e = (a.min(b), a.max(b));
            if seen.insert(e) {
                canon.push(e);
            }
        }
        canon.sort_unstable();
        let mut neighbors = vec![Vec::new(); n_nodes];
        for &(i, j) in &canon {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok(SparseGraph {
            n_nodes,
            edges: canon,
            neighbors,
            features,
            labels: None,
            labeled_mask: vec![false; n_nodes],
            n_classes: 0,
            edge_features: None,
            timestamps: None,
        })
    }

    /// Attach labels; `labels[i] = None` marks node i unlabeled.
    pub fn with_labels(mut self, labels: Vec<Option<usize>>, n_classes: usize) -> Result<Self> {
        if labels.len() != self.n_nodes {
            return Err(Error::invalid("label vector length mismatch"));
        }
        let mut dense = vec![0usize; self.n_nodes];
        let mut mask = vec![false; self.n_nodes];
        for (i, l) in labels.iter().enumerate() {
            if let Some(c) = l {
                if *c >= n_classes {
                    return Err(Error::invalid(format!(
                        "label {c} out of range for {n_classes} classes"
                    )));
                }
                dense[i] = *c;
                mask[i] = true;
            }
        }
        self.labels = Some(dense);
        self.labeled_mask = mask;
        self.n_classes = n_classes;
        Ok(self)
    }

    /// Attach per-edge feature vectors, one row per stored edge, in storage order.
    pub fn with_edge_features(mut self, ef: Mat) -> Result<Self> {
        if ef.rows() != self.edges.len() {
            return Err(Error::invalid("edge feature row count mismatch"));
        }
        self.edge_features = Some(ef);
        Ok(self)
    }

    pub fn with_timestamps(mut self, ts: Vec<f64>) -> Result<Self> {
        if ts.len() != self.n_nodes {
            return Err(Error::invalid("timestamp vector length mismatch"));
        }
        self.timestamps = Some(ts);
        Ok(self)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn features(&self) -> &Mat {
        &self.features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Dense label of node i; None when unlabeled.
    pub fn label(&self, i: usize) -> Option<usize> {
        if self.labeled_mask[i] {
            self.labels.as_ref().map(|l| l[i])
        } else {
            None
        }
    }

    pub fn labeled_mask(&self) -> &[bool] {
        &self.labeled_mask
    }

    pub fn labeled_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes).filter(|&i| self.labeled_mask[i]).collect()
    }

    pub fn edge_features(&self) -> Option<&Mat> {
        self.edge_features.as_ref()
    }

    pub fn timestamps(&self) -> Option<&[f64]> {
        self.timestamps.as_deref()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.neighbors[a].binary_search(&b).is_ok()
    }

    /// Replace the edge set, keeping node data. Edge features follow their
    /// edge; edges new to the graph get zero feature rows.
    pub fn with_edges(&self, edges: &[(usize, usize)]) -> Result<SparseGraph> {
        let mut g = SparseGraph::new(self.n_nodes, edges, self.features.clone())?;
        g.labels = self.labels.clone();
        g.labeled_mask = self.labeled_mask.clone();
        g.n_classes = self.n_classes;
        g.timestamps = self.timestamps.clone();
        if let Some(ef) = &self.edge_features {
            let index: HashMap<(usize, usize), usize> = self
                .edges
                .iter()
                .enumerate()
                .map(|(k, &e)| (e, k))
                .collect();
            let mut carried = Mat::zeros(g.edges.len(), ef.cols());
            for (row, e) in g.edges.iter().enumerate() {
                if let Some(&old) = index.get(e) {
                    carried.row_mut(row).copy_from_slice(ef.row(old));
                }
            }
            g.edge_features = Some(carried);
        }
        Ok(g)
    }
}

/// Mean same-label neighbor fraction over labeled nodes with at least one
/// neighbor. Returns the ratio and the number of excluded nodes (isolated).
pub fn homophily_ratio(g: &SparseGraph) -> Result<(f64, usize)> {
    let mut total = 0.0;
    let mut counted = 0usize;
    let mut excluded = 0usize;
    for i in 0..g.n_nodes() {
        let yi = g
            .label(i)
            .ok_or_else(|| Error::invalid(format!("node {i} is unlabeled")))?;
        let neigh = g.neighbors(i);
        if neigh.is_empty() {
            excluded += 1;
            continue;
        }
        let same = neigh.iter().filter(|&&j| g.label(j) == Some(yi)).count();
        total += same as f64 / neigh.len() as f64;
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::invalid(
            "homophily undefined: every node is isolated",
        ));
    }
    Ok((total / counted as f64, excluded))
}

/// Delete `round(del_rate * |E|)` edges and add `round(add_rate * |E|)`
/// uniformly sampled non-edges. Deterministic given the seed.
pub fn perturb_edges(
    g: &SparseGraph,
    del_rate: f64,
    add_rate: f64,
    seed: u64,
) -> Result<SparseGraph> {
    if !(0.0..=1.0).contains(&del_rate) || !(0.0..=1.0).contains(&add_rate) {
        return Err(Error::invalid("perturbation rates must lie in [0,1]"));
    }
    let m = g.n_edges();
    let n_del = (del_rate * m as f64).round() as usize;
    let n_add = (add_rate * m as f64).round() as usize;

    let mut edges: Vec<(usize, usize)> = g.edges().to_vec();
    if n_del > 0 {
        let mut rng = rng::seeded(seed, salt::PERTURB_DELETE);
        let keep = rng::sample_distinct(&mut rng, m, m - n_del);
        let mut mask = vec![false; m];
        for k in keep {
            mask[k] = true;
        }
        edges = edges
            .into_iter()
            .zip(mask)
            .filter_map(|(e, keep)| keep.then_some(e))
            .collect();
    }

    if n_add > 0 {
        let n = g.n_nodes();
        let possible = n * (n - 1) / 2;
        let available = possible - m;
        if n_add > available {
            return Err(Error::invalid(format!(
                "cannot add {n_add} edges: only {available} non-edges exist"
            )));
        }
        let mut rng = rng::seeded(seed, salt::PERTURB_ADD);
        let mut present: HashSet<(usize, usize)> = g.edges().iter().copied().collect();
        let mut added = Vec::with_capacity(n_add);
        if n < 10_000 && (n_add as f64) > 0.25 * available as f64 {
            // Dense-ish request: enumerate the non-edges and sample exactly.
            let mut non_edges = Vec::with_capacity(available);
            for a in 0..n {
                for b in (a + 1)..n {
                    if !present.contains(&(a, b)) {
                        non_edges.push((a, b));
                    }
                }
            }
            for k in rng::sample_distinct(&mut rng, non_edges.len(), n_add) {
                added.push(non_edges[k]);
            }
        } else {
            while added.len() < n_add {
                let a = rng.random_range(0..n);
                let b = rng.random_range(0..n);
                if a == b {
                    continue;
                }
                let e = (a.min(b), a.max(b));
                if present.insert(e) {
                    added.push(e);
                }
            }
        }
        edges.extend(added);
    }

    g.with_edges(&edges)
}

/// Stochastic block model with per-block mean features plus Gaussian noise.
/// `n` not divisible by `blocks` puts the remainder in the last block.
#[allow(clippy::too_many_arguments)]
pub fn generate_sbm(
    n: usize,
    blocks: usize,
    p_intra: f64,
    p_inter: f64,
    feature_dim: usize,
    feature_noise: f64,
    seed: u64,
) -> Result<SparseGraph> {
    if n == 0 || blocks == 0 {
        return Err(Error::invalid("sbm needs n >= 1 and blocks >= 1"));
    }
    if !(0.0..=1.0).contains(&p_intra) || !(0.0..=1.0).contains(&p_inter) {
        return Err(Error::invalid("sbm probabilities must lie in [0,1]"));
    }
    let mut rng = rng::seeded(seed, salt::GRAPH_GEN);
    let per_block = n / blocks;
    let block_of = |i: usize| (i / per_block.max(1)).min(blocks - 1);

    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if block_of(i) == block_of(j) {
                p_intra
            } else {
                p_inter
            };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }

    // Block means drawn first so the edge stream stays stable under
    // feature_dim changes is not required; one stream keeps it simple.
    let mut means = Mat::zeros(blocks, feature_dim);
    for b in 0..blocks {
        for d in 0..feature_dim {
            means[(b, d)] = rng::gaussian(&mut rng);
        }
    }
    let mut features = Mat::zeros(n, feature_dim);
    for i in 0..n {
        let b = block_of(i);
        for d in 0..feature_dim {
            features[(i, d)] = means[(b, d)] + feature_noise * rng::gaussian(&mut rng);
        }
    }

    let labels: Vec<Option<usize>> = (0..n).map(|i| Some(block_of(i))).collect();
    SparseGraph::new(n, &edges, features)?.with_labels(labels, blocks)
}

// ---------------------------------------------------------------------------
// Text format
//
//   nodes N features D classes C
//   edge i j
//   feat i v1 ... vD
//   label i c
//   time i t
// ---------------------------------------------------------------------------

pub fn write_graph_text(g: &SparseGraph) -> String {
    let mut out = String::new();
    let d = g.features().cols();
    writeln!(out, "nodes {} features {} classes {}", g.n_nodes(), d, g.n_classes()).unwrap();
    for &(i, j) in g.edges() {
        writeln!(out, "edge {i} {j}").unwrap();
    }
    for i in 0..g.n_nodes() {
        write!(out, "feat {i}").unwrap();
        for v in g.features().row(i) {
            write!(out, " {v}").unwrap();
        }
        out.push('\n');
    }
    for i in 0..g.n_nodes() {
        if let Some(c) = g.label(i) {
            writeln!(out, "label {i} {c}").unwrap();
        }
    }
    if let Some(ts) = g.timestamps() {
        for (i, t) in ts.iter().enumerate() {
            writeln!(out, "time {i} {t}").unwrap();
        }
    }
    out
}

pub fn parse_graph_text(text: &str) -> Result<SparseGraph> {
    let mut lines = text.lines().enumerate();
    let (first_no, header) = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, msg: "empty input".into() })?;
    let h: Vec<&str> = header.split_whitespace().collect();
    let parse_usize = |s: &str, line: usize| -> Result<usize> {
        s.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("expected integer, got `{s}`"),
        })
    };
    if h.len() != 6 || h[0] != "nodes" || h[2] != "features" || h[4] != "classes" {
        return Err(Error::Parse {
            line: first_no + 1,
            msg: "header must be `nodes N features D classes C`".into(),
        });
    }
    let n = parse_usize(h[1], first_no + 1)?;
    let d = parse_usize(h[3], first_no + 1)?;
    let c = parse_usize(h[5], first_no + 1)?;

    let mut edges = Vec::new();
    let mut features = Mat::zeros(n, d);
    let mut feat_seen = vec![false; n];
    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut time_entries: Vec<(usize, f64)> = Vec::new();

    for (no, raw) in lines {
        let line_no = no + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok[0] {
            "edge" if tok.len() == 3 => {
                edges.push((parse_usize(tok[1], line_no)?, parse_usize(tok[2], line_no)?));
            }
            "feat" if tok.len() == 2 + d => {
                let i = parse_usize(tok[1], line_no)?;
                if i >= n {
                    return Err(Error::Parse { line: line_no, msg: format!("node {i} out of range") });
                }
                for (k, s) in tok[2..].iter().enumerate() {
                    features[(i, k)] = s.parse().map_err(|_| Error::Parse {
                        line: line_no,
                        msg: format!("bad feature value `{s}`"),
                    })?;
                }
                feat_seen[i] = true;
            }
            "label" if tok.len() == 3 => {
                let i = parse_usize(tok[1], line_no)?;
                if i >= n {
                    return Err(Error::Parse { line: line_no, msg: format!("node {i} out of range") });
                }
                labels[i] = Some(parse_usize(tok[2], line_no)?);
            }
            "time" if tok.len() == 3 => {
                let i = parse_usize(tok[1], line_no)?;
                let t: f64 = tok[2].parse().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("bad timestamp `{}`", tok[2]),
                })?;
                time_entries.push((i, t));
            }
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("unrecognized or malformed line kind `{other}`"),
                });
            }
        }
    }
    if let Some(i) = feat_seen.iter().position(|&s| !s) {
        if d > 0 {
            return Err(Error::Parse {
                line: 0,
                msg: format!("missing feat line for node {i}"),
            });
        }
    }
    let mut g = SparseGraph::new(n, &edges, features)?;
    if labels.iter().any(Option::is_some) || c > 0 {
        g = g.with_labels(labels, c.max(1))?;
    }
    if !time_entries.is_empty() {
        let mut times = vec![0.0; n];
        for (i, t) in time_entries {
            if i >= n {
                return Err(Error::Parse { line: 0, msg: format!("time node {i} out of range") });
            }
            times[i] = t;
        }
        g = g.with_timestamps(times)?;
    }
    Ok(g)
}

pub fn load_graph(path: &Path) -> Result<SparseGraph> {
    parse_graph_text(&std::fs::read_to_string(path)?)
}

pub fn save_graph(g: &SparseGraph, path: &Path) -> Result<()> {
    std::fs::write(path, write_graph_text(g))?;
    Ok(())
}
