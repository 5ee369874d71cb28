//! Independent reference implementations used as test oracles.

use std::collections::BTreeMap;

use auglm::graph::{GraphBuilder, LabelSpace, NodeRecord, Split, TextAttributedGraph};
use ndarray::Array2;
use rand::Rng;

pub fn graph_from_edges(n: usize, edges: &[(usize, usize)], labels: &[Option<u32>], classes: usize) -> TextAttributedGraph {
    let names = (0..classes).map(|c| format!("c{c}")).collect();
    let space = if classes == 0 { LabelSpace::default() } else { LabelSpace::new(names).unwrap() };
    let mut b = GraphBuilder::new(space);
    for v in 0..n {
        b.add_node(NodeRecord {
            id: format!("v{v}"),
            texts: BTreeMap::from([("title".to_string(), format!("title {v}"))]),
            split: Split::Train,
            label: labels.get(v).copied().flatten(),
        })
        .unwrap();
    }
    for &(u, v) in edges {
        b.add_edge(u, v).unwrap();
    }
    b.build()
}

/// Random spanning tree plus `extra` random edges.
pub fn random_connected_edges<R: Rng>(rng: &mut R, n: usize, extra: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for v in 1..n {
        edges.push((rng.random_range(0..v), v));
    }
    if n > 1 {
        for _ in 0..extra {
            let u = rng.random_range(0..n);
            let v = rng.random_range(0..n);
            if u != v {
                edges.push((u, v));
            }
        }
    }
    edges
}

/// Dense adjacency (symmetric, no self-loops) read back from the edge list.
pub fn dense_adjacency(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; n]; n];
    for &(u, v) in edges {
        if u != v {
            a[u][v] = 1.0;
            a[v][u] = 1.0;
        }
    }
    a
}

/// Solves `m x = b` by Gaussian elimination with partial pivoting.
pub fn solve(mut m: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())
            .unwrap();
        m.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            if f != 0.0 {
                for k in col..n {
                    m[row][k] -= f * m[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| m[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / m[row][row];
    }
    x
}

/// PPR with an arbitrary teleport vector `q`: `x = α (I − (1−α) A D⁻¹)⁻¹ q`,
/// isolated nodes keeping their mass through a self-loop.
pub fn dense_ppr(a: &[Vec<f64>], alpha: f64, q: &[f64]) -> Vec<f64> {
    let n = a.len();
    let mut m = vec![vec![0.0; n]; n];
    for j in 0..n {
        let deg: f64 = a.iter().map(|row| row[j]).sum();
        for i in 0..n {
            let t = if deg == 0.0 {
                if i == j { 1.0 } else { 0.0 }
            } else {
                a[i][j] / deg
            };
            m[i][j] = if i == j { 1.0 } else { 0.0 } - (1.0 - alpha) * t;
        }
    }
    solve(m, q.iter().map(|x| alpha * x).collect())
}

pub fn one_hot(n: usize, s: usize) -> Vec<f64> {
    let mut q = vec![0.0; n];
    q[s] = 1.0;
    q
}

/// First index of the row maximum.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// For each class, scan all nodes predicted into it and repeatedly take the
/// most confident remaining one (lowest index on ties), `n` times.
pub fn brute_prototypes(probs: &Array2<f64>, n: usize) -> Vec<Vec<usize>> {
    let rows: Vec<Vec<f64>> = probs.outer_iter().map(|r| r.to_vec()).collect();
    let pred: Vec<usize> = rows.iter().map(|r| argmax(r)).collect();
    (0..probs.ncols())
        .map(|c| {
            let mut taken = vec![false; rows.len()];
            let mut out = Vec::new();
            for _ in 0..n {
                let mut best: Option<usize> = None;
                for v in 0..rows.len() {
                    if pred[v] != c || taken[v] {
                        continue;
                    }
                    if best.map_or(true, |b| rows[v][c] > rows[b][c]) {
                        best = Some(v);
                    }
                }
                match best {
                    Some(b) => {
                        taken[b] = true;
                        out.push(b);
                    }
                    None => break,
                }
            }
            out
        })
        .collect()
}

/// Selection-sort top-`i` classes per row, lowest class on ties.
pub fn brute_top_i(probs: &Array2<f64>, i: usize) -> Vec<Vec<usize>> {
    probs
        .outer_iter()
        .map(|row| {
            let mut taken = vec![false; row.len()];
            let mut out = Vec::new();
            for _ in 0..i.min(row.len()) {
                let mut best: Option<usize> = None;
                for c in 0..row.len() {
                    if !taken[c] && best.map_or(true, |b| row[c] > row[b]) {
                        best = Some(c);
                    }
                }
                let b = best.unwrap();
                taken[b] = true;
                out.push(b);
            }
            out
        })
        .collect()
}

/// Final-layer logits of a mean-aggregation GraphSAGE computed with plain
/// loops over an adjacency list.
pub fn naive_sage_logits(neighbors: &[Vec<usize>], x: &[Vec<f64>], weights: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut h: Vec<Vec<f64>> = x.to_vec();
    for (l, w) in weights.iter().enumerate() {
        let d_in = w.len();
        let d_out = w[0].len();
        let mut next = vec![vec![0.0; d_out]; n];
        for v in 0..n {
            let mut agg = h[v].clone();
            for &u in &neighbors[v] {
                for k in 0..d_in {
                    agg[k] += h[u][k];
                }
            }
            let cnt = (neighbors[v].len() + 1) as f64;
            for j in 0..d_out {
                let mut z = 0.0;
                for k in 0..d_in {
                    z += agg[k] / cnt * w[k][j];
                }
                next[v][j] = if l + 1 < weights.len() { z.max(0.0) } else { z };
            }
        }
        h = next;
    }
    h
}

/// Mean NLL of [`naive_sage_logits`] over `targets`, plus the L2 term.
pub fn naive_sage_loss(
    neighbors: &[Vec<usize>],
    x: &[Vec<f64>],
    weights: &[Vec<Vec<f64>>],
    targets: &[(usize, usize)],
    wd: f64,
) -> f64 {
    let h = naive_sage_logits(neighbors, x, weights);
    let mut loss = 0.0;
    for &(v, y) in targets {
        let m = h[v].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + h[v].iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        loss += (lse - h[v][y]) / targets.len() as f64;
    }
    let sq: f64 = weights.iter().flatten().flatten().map(|w| w * w).sum();
    loss + 0.5 * wd * sq
}

pub fn naive_softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn mat_vec(p: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    p.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Retriever distribution over `docs` for projection `p`.
pub fn naive_p_phi(p: &[Vec<f64>], docs: &[Vec<f64>], q: &[f64]) -> Vec<f64> {
    let pq = mat_vec(p, q);
    let s: Vec<f64> = docs.iter().map(|d| dot(&mat_vec(p, d), &pq)).collect();
    naive_softmax(&s)
}

/// KL(p_lm ‖ p_phi) by direct summation.
pub fn naive_kl(p_lm: &[f64], p_phi: &[f64]) -> f64 {
    p_lm.iter()
        .zip(p_phi)
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, q)| t * (t / q).ln())
        .sum()
}

/// Relative Frobenius error `‖a − b‖ / max(‖a‖, ‖b‖)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
