//! Mean-aggregation GraphSAGE classifier with hand-written backpropagation,
//! plus the confidence-based prototype selection and top-I label pruning
//! built on its predictions.
//!
//! Layer `l` computes `act(MEAN({h_v} ∪ {h_u : u ∈ N(v)}) · W_l)` where the
//! mean runs over the multiset of size `deg(v) + 1`. Hidden layers use ReLU,
//! the last layer a row softmax. There are no bias terms.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binio::{self, len_u32, Reader, Writer};
use crate::embed::{EmbeddingMatrix, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::graph::{Split, TextAttributedGraph};
use crate::ppr::PprCache;
use crate::retriever::{Corpus, Document};

#[derive(Clone, Debug, PartialEq)]
pub struct SageModel {
    weights: Vec<Array2<f64>>,
}

impl SageModel {
    /// Glorot-uniform initialization for layer widths `dims[0] -> ... -> dims[L]`.
    pub fn new(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Invalid("a SAGE model needs at least one layer".into()));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Invalid(format!("layer widths must be positive: {dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-bound..bound))
            })
            .collect();
        Ok(SageModel { weights })
    }

    /// Standard layout: `input -> hidden x (layers-1) -> classes`.
    pub fn with_layout(input: usize, hidden: usize, layers: usize, classes: usize, seed: u64) -> Result<Self> {
        if layers == 0 {
            return Err(Error::Invalid("layers must be >= 1".into()));
        }
        let mut dims = vec![input];
        dims.extend(std::iter::repeat(hidden).take(layers - 1));
        dims.push(classes);
        Self::new(&dims, seed)
    }

    pub fn from_weights(weights: Vec<Array2<f64>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Invalid("a SAGE model needs at least one layer".into()));
        }
        for w in weights.windows(2) {
            if w[0].ncols() != w[1].nrows() {
                return Err(Error::DimensionMismatch {
                    expected: w[0].ncols(),
                    got: w[1].nrows(),
                });
            }
        }
        if weights.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("SAGE weights".into()));
        }
        Ok(SageModel { weights })
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.weights[0].nrows()];
        d.extend(self.weights.iter().map(|w| w.ncols()));
        d
    }

    pub fn num_classes(&self) -> usize {
        self.weights.last().map(|w| w.ncols()).unwrap_or(0)
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    fn check_input(&self, graph: &TextAttributedGraph, x: &Array2<f64>) -> Result<()> {
        if x.nrows() != graph.num_nodes() {
            return Err(Error::DimensionMismatch {
                expected: graph.num_nodes(),
                got: x.nrows(),
            });
        }
        let d = self.weights[0].nrows();
        if x.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.ncols(),
            });
        }
        Ok(())
    }

    fn forward_pass(&self, graph: &TextAttributedGraph, x: &Array2<f64>) -> ForwardCache {
        let last = self.weights.len() - 1;
        let mut aggs = Vec::with_capacity(self.weights.len());
        let mut pre = Vec::with_capacity(self.weights.len());
        let mut h = x.clone();
        for (l, w) in self.weights.iter().enumerate() {
            let agg = mean_aggregate(graph, &h);
            let z = agg.dot(w);
            h = if l == last { z.clone() } else { z.mapv(|v| v.max(0.0)) };
            aggs.push(agg);
            pre.push(z);
        }
        ForwardCache { aggs, pre }
    }

    /// Final-layer logits (pre-softmax), one row per node.
    pub fn logits(&self, graph: &TextAttributedGraph, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(graph, x)?;
        Ok(self.forward_pass(graph, x).pre.pop().expect("at least one layer"))
    }

    pub fn forward(&self, graph: &TextAttributedGraph, embeddings: &EmbeddingMatrix) -> Result<Predictions> {
        let x = embeddings_to_array(embeddings);
        Ok(Predictions::from_logits(&self.logits(graph, &x)?))
    }

    /// Mean NLL over `targets` (node, class) plus `weight_decay/2 * Σ‖W‖²`,
    /// and its gradient with respect to every weight matrix.
    pub fn loss_and_gradients(
        &self,
        graph: &TextAttributedGraph,
        x: &Array2<f64>,
        targets: &[(usize, usize)],
        weight_decay: f64,
    ) -> Result<(f64, Vec<Array2<f64>>)> {
        self.check_input(graph, x)?;
        if targets.is_empty() {
            return Err(Error::Invalid("no training targets".into()));
        }
        let c = self.num_classes();
        if let Some(&(v, y)) = targets.iter().find(|&&(v, y)| v >= graph.num_nodes() || y >= c) {
            return Err(Error::Invalid(format!("bad training target (node {v}, class {y})")));
        }
        let cache = self.forward_pass(graph, x);
        let logits = cache.pre.last().expect("at least one layer");
        let probs = softmax_rows(logits);

        let scale = 1.0 / targets.len() as f64;
        let mut loss = 0.0;
        let mut grad_out = Array2::<f64>::zeros(logits.raw_dim());
        for &(v, y) in targets {
            loss -= log_softmax_at(logits.row(v), y) * scale;
            for j in 0..c {
                let indicator = if j == y { 1.0 } else { 0.0 };
                grad_out[[v, j]] += (probs[[v, j]] - indicator) * scale;
            }
        }
        if weight_decay != 0.0 {
            let sq: f64 = self.weights.iter().map(|w| w.iter().map(|x| x * x).sum::<f64>()).sum();
            loss += 0.5 * weight_decay * sq;
        }

        let mut grads = vec![Array2::<f64>::zeros((0, 0)); self.weights.len()];
        let mut g = grad_out;
        for l in (0..self.weights.len()).rev() {
            let mut gw = cache.aggs[l].t().dot(&g);
            if weight_decay != 0.0 {
                gw.scaled_add(weight_decay, &self.weights[l]);
            }
            grads[l] = gw;
            if l > 0 {
                let g_agg = g.dot(&self.weights[l].t());
                let mut g_h = mean_aggregate_transpose(graph, &g_agg);
                g_h.zip_mut_with(&cache.pre[l - 1], |gh, &z| {
                    if z <= 0.0 {
                        *gh = 0.0;
                    }
                });
                g = g_h;
            }
        }
        Ok((loss, grads))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new(Vec::new());
        w.bytes(b"SAGE")?;
        w.u32(len_u32(self.weights.len())?)?;
        for m in &self.weights {
            w.u32(len_u32(m.nrows())?)?;
            w.u32(len_u32(m.ncols())?)?;
            for &x in m.iter() {
                w.f32(x as f32)?;
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(b"SAGE")?;
        let layers = r.u32()? as usize;
        let mut weights = Vec::with_capacity(layers);
        for _ in 0..layers {
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let mut vals = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                vals.push(f64::from(r.f32()?));
            }
            weights.push(
                Array2::from_shape_vec((rows, cols), vals)
                    .map_err(|e| Error::Format(e.to_string()))?,
            );
        }
        r.expect_end()?;
        Self::from_weights(weights)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&binio::read_file(path)?)
    }
}

struct ForwardCache {
    /// Aggregated input of each layer.
    aggs: Vec<Array2<f64>>,
    /// Pre-activation output of each layer.
    pre: Vec<Array2<f64>>,
}

pub fn embeddings_to_array(e: &EmbeddingMatrix) -> Array2<f64> {
    Array2::from_shape_fn((e.rows(), e.dim()), |(i, j)| f64::from(e.row(i)[j]))
}

/// Row `v` of the result is the mean of `h` over `{v} ∪ N(v)`.
pub fn mean_aggregate(graph: &TextAttributedGraph, h: &Array2<f64>) -> Array2<f64> {
    let mut out = h.clone();
    for v in 0..graph.num_nodes() {
        let nbrs = graph.neighbors(v);
        let mut row = out.row_mut(v);
        for &u in nbrs {
            row += &h.row(u as usize);
        }
        row /= (nbrs.len() + 1) as f64;
    }
    out
}

/// Adjoint of [`mean_aggregate`]: `out[u] = Σ_{v ∈ {u} ∪ N(u)} g[v] / (deg(v) + 1)`.
pub fn mean_aggregate_transpose(graph: &TextAttributedGraph, g: &Array2<f64>) -> Array2<f64> {
    let n = graph.num_nodes();
    let inv: Vec<f64> = (0..n).map(|v| 1.0 / (graph.neighbors(v).len() + 1) as f64).collect();
    let mut out = Array2::<f64>::zeros(g.raw_dim());
    for u in 0..n {
        let mut row = out.row_mut(u);
        row.scaled_add(inv[u], &g.row(u));
        for &v in graph.neighbors(u) {
            row.scaled_add(inv[v as usize], &g.row(v as usize));
        }
    }
    out
}

fn log_softmax_at(row: ArrayView1<f64>, j: usize) -> f64 {
    let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = m + row.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
    row[j] - lse
}

/// Numerically stable row softmax.
pub fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|x| (x - m).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

fn argmax_first(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (j, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = j;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub probs: Array2<f64>,
    pub predicted_class: Vec<usize>,
    pub confidence: Vec<f64>,
}

impl Predictions {
    pub fn from_probs(probs: Array2<f64>) -> Self {
        let predicted_class: Vec<usize> = probs.axis_iter(Axis(0)).map(argmax_first).collect();
        let confidence = predicted_class
            .iter()
            .enumerate()
            .map(|(v, &c)| probs[[v, c]])
            .collect();
        Predictions {
            probs,
            predicted_class,
            confidence,
        }
    }

    pub fn from_logits(logits: &Array2<f64>) -> Self {
        Self::from_probs(softmax_rows(logits))
    }

    pub fn num_nodes(&self) -> usize {
        self.probs.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.probs.ncols()
    }

    /// Fraction of `targets` whose predicted class matches.
    pub fn accuracy(&self, targets: &[(usize, usize)]) -> f64 {
        if targets.is_empty() {
            return 0.0;
        }
        let hits = targets.iter().filter(|&&(v, y)| self.predicted_class[v] == y).count();
        hits as f64 / targets.len() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GnnTrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub weight_decay: f64,
}

impl Default for GnnTrainConfig {
    fn default() -> Self {
        GnnTrainConfig {
            lr: 0.5,
            epochs: 200,
            weight_decay: 0.0,
        }
    }
}

/// (node, label) pairs for the labeled training nodes.
pub fn training_targets(graph: &TextAttributedGraph) -> Vec<(usize, usize)> {
    graph
        .labeled_nodes(Split::Train)
        .into_iter()
        .map(|v| (v, graph.label(v).expect("labeled")))
        .collect()
}

/// Full-batch gradient descent on the mean training NLL. Returns the trained
/// model and the loss before each update.
pub fn train(
    mut model: SageModel,
    graph: &TextAttributedGraph,
    embeddings: &EmbeddingMatrix,
    config: &GnnTrainConfig,
) -> Result<(SageModel, Vec<f64>)> {
    let targets = training_targets(graph);
    if targets.is_empty() {
        return Err(Error::Invalid("GNN training needs at least one labeled train node".into()));
    }
    if model.num_classes() != graph.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: graph.num_classes(),
            got: model.num_classes(),
        });
    }
    let x = embeddings_to_array(embeddings);
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let (loss, grads) = model.loss_and_gradients(graph, &x, &targets, config.weight_decay)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch, loss });
        }
        trace.push(loss);
        if config.lr != 0.0 {
            for (w, g) in model.weights.iter_mut().zip(&grads) {
                w.scaled_add(-config.lr, g);
            }
            if model.weights.iter().any(|w| w.iter().any(|x| !x.is_finite())) {
                return Err(Error::Divergence { epoch, loss: f64::NAN });
            }
        }
    }
    log::debug!("gnn training finished, final loss {:?}", trace.last());
    Ok((model, trace))
}

/// Per-class prototype lists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    pub per_class: Vec<Vec<usize>>,
    pub n: usize,
}

impl PrototypeSet {
    pub fn len(&self) -> usize {
        self.per_class.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// (node, class) in class order then rank order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.per_class
            .iter()
            .enumerate()
            .flat_map(|(c, vs)| vs.iter().map(move |&v| (v, c)))
    }
}

/// The `n` most confident nodes of every predicted class, ordered by
/// descending confidence then ascending index. Smaller classes contribute
/// all their members.
pub fn select_prototypes(preds: &Predictions, n: usize) -> Result<PrototypeSet> {
    if n == 0 {
        return Err(Error::Invalid("prototypes per class must be >= 1".into()));
    }
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); preds.num_classes()];
    for (v, &c) in preds.predicted_class.iter().enumerate() {
        per_class[c].push(v);
    }
    for (c, members) in per_class.iter_mut().enumerate() {
        members.sort_by(|&a, &b| preds.confidence[b].total_cmp(&preds.confidence[a]).then(a.cmp(&b)));
        members.truncate(n);
        if members.is_empty() {
            log::warn!("class {c} has no predicted members; it contributes no prototypes");
        }
    }
    Ok(PrototypeSet { per_class, n })
}

/// Top-I classes of each node by predicted probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateLabels {
    pub rows: Vec<Vec<usize>>,
    pub i: usize,
}

impl CandidateLabels {
    pub fn row(&self, v: usize) -> &[usize] {
        &self.rows[v]
    }

    /// Fraction of `targets` whose ground-truth class is among the candidates.
    pub fn hit_rate(&self, targets: &[(usize, usize)]) -> f64 {
        if targets.is_empty() {
            return 0.0;
        }
        let hits = targets.iter().filter(|&&(v, y)| self.rows[v].contains(&y)).count();
        hits as f64 / targets.len() as f64
    }
}

/// Keeps the `i` most probable classes per node, ties by ascending class.
pub fn top_i_candidates(preds: &Predictions, i: usize) -> Result<CandidateLabels> {
    let c = preds.num_classes();
    if i == 0 || i >= c {
        return Err(Error::Invalid(format!("candidate count I must satisfy 1 <= I < C={c}, got {i}")));
    }
    Ok(top_i_unchecked(preds, i))
}

/// Like [`top_i_candidates`] but also accepts `i == C` (no pruning).
pub fn top_i_unchecked(preds: &Predictions, i: usize) -> CandidateLabels {
    let rows = preds
        .probs
        .axis_iter(Axis(0))
        .map(|row| {
            let mut idx: Vec<usize> = (0..row.len()).collect();
            idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            idx.truncate(i);
            idx
        })
        .collect();
    CandidateLabels { rows, i }
}

/// One document per prototype: the titles of its top-`k` PPR neighbors
/// (itself included) by descending score, joined with "; ".
pub fn build_prototype_corpus(
    protos: &PrototypeSet,
    ppr_cache: &PprCache,
    graph: &TextAttributedGraph,
    k: usize,
    title_field: &str,
    provider: &dyn EmbeddingProvider,
) -> Result<Corpus> {
    if k == 0 {
        return Err(Error::Invalid("PPR neighbors per document must be >= 1".into()));
    }
    let mut documents = Vec::with_capacity(protos.len());
    for (v, class) in protos.iter() {
        let mut nbrs = ppr_cache.neighbors(v, k, true)?;
        if nbrs.is_empty() {
            nbrs.push(v);
        }
        let titles: Vec<String> = nbrs.iter().map(|&u| graph.text(u, title_field).to_string()).collect();
        documents.push(Document::new(titles, graph.node_id(v).to_string(), class));
    }
    let texts: Vec<String> = documents.iter().map(|d| d.text.clone()).collect();
    let embeddings = provider.embed(&texts)?;
    Corpus::new(documents, embeddings)
}

#[derive(Serialize, Deserialize)]
struct PredictionLine {
    id: String,
    probs: Vec<f64>,
    candidates: Vec<usize>,
}

/// Writes `{"id", "probs", "candidates"}` lines in node order.
pub fn write_predictions_jsonl(
    path: &Path,
    graph: &TextAttributedGraph,
    preds: &Predictions,
    candidates: &CandidateLabels,
) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for v in 0..preds.num_nodes() {
        let line = PredictionLine {
            id: graph.node_id(v).to_string(),
            probs: preds.probs.row(v).to_vec(),
            candidates: candidates.rows[v].clone(),
        };
        writeln!(w, "{}", serde_json::to_string(&line)?).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions_jsonl(
    path: &Path,
    graph: &TextAttributedGraph,
) -> Result<(Predictions, CandidateLabels)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let c = graph.num_classes();
    let n = graph.num_nodes();
    let mut probs = Array2::<f64>::zeros((n, c));
    let mut rows = vec![Vec::new(); n];
    let mut seen = vec![false; n];
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let perr = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let p: PredictionLine = serde_json::from_str(&line).map_err(|e| perr(e.to_string()))?;
        let v = graph
            .node_index(&p.id)
            .ok_or_else(|| perr(format!("unknown node id {:?}", p.id)))?;
        if p.probs.len() != c {
            return Err(perr(format!("expected {c} probabilities, got {}", p.probs.len())));
        }
        probs.row_mut(v).assign(&ArrayView1::from(&p.probs));
        rows[v] = p.candidates;
        seen[v] = true;
    }
    if let Some(v) = seen.iter().position(|s| !s) {
        return Err(Error::Invalid(format!("predictions missing node {:?}", graph.node_id(v))));
    }
    let i = rows.first().map(Vec::len).unwrap_or(0);
    Ok((Predictions::from_probs(probs), CandidateLabels { rows, i }))
}
