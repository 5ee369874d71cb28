//! Personalized PageRank: exact power iteration, local push approximation,
//! top-K neighbor selection and the per-node neighbor cache.
//!
//! Scores are the fixed point of `r = (1 - alpha) * A D^-1 r + alpha * q`
//! with `q` the one-hot vector of the source. `A D^-1` is column-stochastic;
//! degree-0 nodes get a virtual self-loop inside the normalization only.

use std::collections::{HashMap, VecDeque};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{self, len_u32, Reader, Writer};
use crate::error::{Error, Result};
use crate::graph::TextAttributedGraph;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PprParams {
    pub alpha: f64,
    /// L1 tolerance between successive power iterates.
    pub tol: f64,
    pub max_iter: usize,
    /// Per-degree residual threshold of the push variant.
    pub epsilon: f64,
}

impl PprParams {
    pub fn new(alpha: f64) -> Result<Self> {
        let tol = 1e-10;
        let p = PprParams {
            alpha,
            tol,
            max_iter: Self::default_max_iter(alpha, tol),
            epsilon: 1e-6,
        };
        p.validate()?;
        Ok(p)
    }

    /// `10 * ceil(ln(tol) / ln(1 - alpha))`: ten times the number of
    /// contractions needed to shrink a unit L1 error below `tol`.
    pub fn default_max_iter(alpha: f64, tol: f64) -> usize {
        let steps = (tol.ln() / (1.0 - alpha).ln()).ceil();
        if steps.is_finite() && steps > 0.0 {
            10 * steps as usize
        } else {
            10
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Invalid(format!("alpha must be in (0,1), got {}", self.alpha)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Invalid(format!("tol must be > 0, got {}", self.tol)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Invalid(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if self.max_iter == 0 {
            return Err(Error::Invalid("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for PprParams {
    fn default() -> Self {
        PprParams::new(0.1).expect("default alpha is valid")
    }
}

/// Sparse PPR scores for one source, sorted by node index.
#[derive(Clone, Debug, PartialEq)]
pub struct PprVector {
    pub source: usize,
    entries: Vec<(usize, f64)>,
}

impl PprVector {
    /// Builds from arbitrary (node, score) pairs; zero scores are dropped.
    pub fn from_entries(source: usize, mut entries: Vec<(usize, f64)>) -> Self {
        entries.retain(|&(_, s)| s != 0.0);
        entries.sort_by_key(|&(v, _)| v);
        PprVector { source, entries }
    }

    fn from_dense(source: usize, dense: &[f64]) -> Self {
        let entries = dense
            .iter()
            .enumerate()
            .filter(|(_, &s)| s != 0.0)
            .map(|(v, &s)| (v, s))
            .collect();
        PprVector { source, entries }
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn get(&self, v: usize) -> f64 {
        self.entries
            .binary_search_by_key(&v, |&(u, _)| u)
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().map(|&(_, s)| s).sum()
    }

    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut d = vec![0.0; n];
        for &(v, s) in &self.entries {
            d[v] = s;
        }
        d
    }
}

fn check_source(graph: &TextAttributedGraph, source: usize) -> Result<()> {
    if source >= graph.num_nodes() {
        return Err(Error::OutOfRange {
            what: "nodes",
            index: source,
            len: graph.num_nodes(),
        });
    }
    Ok(())
}

/// One application of `(1 - alpha) * A D^-1 x + alpha * q`, written into `out`.
fn propagate(graph: &TextAttributedGraph, alpha: f64, source: usize, x: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    let offsets = graph.csr_offsets();
    let targets = graph.csr_targets();
    for (u, &xu) in x.iter().enumerate() {
        if xu == 0.0 {
            continue;
        }
        let row = &targets[offsets[u]..offsets[u + 1]];
        if row.is_empty() {
            out[u] += (1.0 - alpha) * xu;
        } else {
            let share = (1.0 - alpha) * xu / row.len() as f64;
            for &w in row {
                out[w as usize] += share;
            }
        }
    }
    out[source] += alpha;
}

/// Exact PPR by power iteration from `q`, stopping once the L1 change
/// between iterates is at most `params.tol`.
pub fn ppr_power_iteration(
    graph: &TextAttributedGraph,
    source: usize,
    params: &PprParams,
) -> Result<PprVector> {
    params.validate()?;
    check_source(graph, source)?;
    let n = graph.num_nodes();
    let mut r = vec![0.0; n];
    r[source] = 1.0;
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..params.max_iter {
        propagate(graph, params.alpha, source, &r, &mut next);
        residual = r.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut r, &mut next);
        if residual <= params.tol {
            return Ok(PprVector::from_dense(source, &r));
        }
    }
    Err(Error::NonConvergence {
        iterations: params.max_iter,
        residual,
    })
}

/// Local push approximation. Returns `(approximation, residual)` with
/// `residual(u) < epsilon * max(deg(u), 1)` for every node at termination.
///
/// Each push at `u` moves `alpha * r(u)` into the approximation and spreads
/// the rest of `r(u)` over the out-neighbors of `u` under the same transition
/// matrix as the power iteration, so `p + ppr(residual) = ppr(one-hot)`.
pub fn ppr_push(
    graph: &TextAttributedGraph,
    source: usize,
    alpha: f64,
    epsilon: f64,
) -> Result<(PprVector, PprVector)> {
    check_source(graph, source)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Invalid(format!("alpha must be in (0,1), got {alpha}")));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Invalid(format!("epsilon must be > 0, got {epsilon}")));
    }
    let eff_degree = |u: usize| graph.neighbors(u).len().max(1) as f64;

    let mut p: HashMap<usize, f64> = HashMap::new();
    let mut r: HashMap<usize, f64> = HashMap::new();
    r.insert(source, 1.0);
    let mut queue = VecDeque::new();
    let mut queued: HashMap<usize, bool> = HashMap::new();
    if 1.0 >= epsilon * eff_degree(source) {
        queue.push_back(source);
        queued.insert(source, true);
    }

    while let Some(u) = queue.pop_front() {
        queued.insert(u, false);
        let mass = r.get(&u).copied().unwrap_or(0.0);
        if mass < epsilon * eff_degree(u) {
            continue;
        }
        *p.entry(u).or_insert(0.0) += alpha * mass;
        r.insert(u, 0.0);
        let row = graph.neighbors(u);
        let spread: Vec<(usize, f64)> = if row.is_empty() {
            vec![(u, (1.0 - alpha) * mass)]
        } else {
            let share = (1.0 - alpha) * mass / row.len() as f64;
            row.iter().map(|&w| (w as usize, share)).collect()
        };
        for (w, add) in spread {
            let rw = r.entry(w).or_insert(0.0);
            *rw += add;
            if *rw >= epsilon * eff_degree(w) && !queued.get(&w).copied().unwrap_or(false) {
                queue.push_back(w);
                queued.insert(w, true);
            }
        }
    }

    Ok((
        PprVector::from_entries(source, p.into_iter().collect()),
        PprVector::from_entries(source, r.into_iter().collect()),
    ))
}

/// Up to `k` nodes by descending score, ties by ascending index. Only
/// nonzero entries are eligible; the source is skipped unless `include_self`.
pub fn top_k(ppr: &PprVector, k: usize, include_self: bool) -> Vec<usize> {
    let mut cand: Vec<(usize, f64)> = ppr
        .entries
        .iter()
        .copied()
        .filter(|&(v, s)| s > 0.0 && (include_self || v != ppr.source))
        .collect();
    cand.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    cand.truncate(k);
    cand.into_iter().map(|(v, _)| v).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PprMethod {
    Power,
    Push,
}

const PPR_MAGIC: &[u8; 4] = b"PPR1";
const ABSENT: u32 = u32::MAX;

/// Precomputed top-`width` PPR neighbors of every node (self included),
/// in descending score order.
#[derive(Clone, Debug, PartialEq)]
pub struct PprCache {
    width: usize,
    rows: Vec<Vec<(u32, f32)>>,
}

impl PprCache {
    pub fn build(
        graph: &TextAttributedGraph,
        width: usize,
        params: &PprParams,
        method: PprMethod,
    ) -> Result<Self> {
        if width == 0 {
            return Err(Error::Invalid("PPR cache width must be >= 1".into()));
        }
        params.validate()?;
        let rows = (0..graph.num_nodes())
            .into_par_iter()
            .map(|v| {
                let vec = match method {
                    PprMethod::Power => ppr_power_iteration(graph, v, params)?,
                    PprMethod::Push => ppr_push(graph, v, params.alpha, params.epsilon)?.0,
                };
                Ok(top_k(&vec, width, true)
                    .into_iter()
                    .map(|u| (u as u32, vec.get(u) as f32))
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PprCache { width, rows })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_nodes(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, v: usize) -> &[(u32, f32)] {
        &self.rows[v]
    }

    /// Top-`k` neighbors of `v`, optionally excluding `v` itself.
    pub fn neighbors(&self, v: usize, k: usize, include_self: bool) -> Result<Vec<usize>> {
        if v >= self.rows.len() {
            return Err(Error::OutOfRange {
                what: "PPR cache rows",
                index: v,
                len: self.rows.len(),
            });
        }
        let needed = if include_self { k } else { k + 1 };
        if needed > self.width {
            return Err(Error::Invalid(format!(
                "PPR cache holds {} neighbors per node; {k} requested (include_self={include_self})",
                self.width
            )));
        }
        Ok(self.rows[v]
            .iter()
            .map(|&(u, _)| u as usize)
            .filter(|&u| include_self || u != v)
            .take(k)
            .collect())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new(Vec::new());
        w.bytes(PPR_MAGIC)?;
        w.u32(len_u32(self.rows.len())?)?;
        w.u32(len_u32(self.width)?)?;
        for row in &self.rows {
            for i in 0..self.width {
                let (u, s) = row.get(i).copied().unwrap_or((ABSENT, 0.0));
                w.u32(u)?;
                w.f32(s)?;
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(PPR_MAGIC)?;
        let n = r.u32()? as usize;
        let width = r.u32()? as usize;
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let mut row = Vec::with_capacity(width);
            for _ in 0..width {
                let u = r.u32()?;
                let s = r.f32()?;
                if u != ABSENT {
                    if u as usize >= n {
                        return Err(Error::Format(format!("neighbor {u} out of range")));
                    }
                    row.push((u, s));
                }
            }
            rows.push(row);
        }
        r.expect_end()?;
        Ok(PprCache { width, rows })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&binio::read_file(path)?)
    }
}
