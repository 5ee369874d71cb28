//! Dual-encoder semantic retriever over the prototype corpus.
//!
//! Queries and documents share one trainable linear projection `P` over
//! frozen base embeddings; the relevance score is `<P e_doc, P e_query>`.
//! Training matches the softmax over retriever scores to a distribution
//! derived from LM likelihoods by minimizing `KL(p_lm || p_retriever)`,
//! with `p_lm` held constant.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::binio::{self, len_u32, Reader, Writer};
use crate::embed::{load_embeddings, save_embeddings, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::lm::LmScore;

/// Floor applied to retriever probabilities inside the KL logarithm.
pub const KL_PROB_FLOOR: f64 = 1e-30;

/// Title separator inside a corpus document.
pub const TITLE_JOINER: &str = "; ";

#[derive(Clone, Debug, PartialEq)]
pub struct RetrieverState {
    /// `d_out x d_in`; maps a base embedding to its projected encoding.
    projection: Array2<f64>,
}

impl RetrieverState {
    /// Gaussian init with variance `1/d_out`, which preserves inner
    /// products in expectation.
    pub fn new(d_in: usize, d_out: usize, seed: u64) -> Result<Self> {
        if d_in == 0 || d_out == 0 {
            return Err(Error::Invalid("retriever dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, (1.0 / d_out as f64).sqrt())
            .map_err(|e| Error::Invalid(e.to_string()))?;
        let projection = Array2::from_shape_simple_fn((d_out, d_in), || normal.sample(&mut rng));
        Ok(RetrieverState { projection })
    }

    pub fn identity(d: usize) -> Self {
        RetrieverState {
            projection: Array2::eye(d),
        }
    }

    pub fn from_projection(projection: Array2<f64>) -> Result<Self> {
        if projection.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("retriever projection".into()));
        }
        Ok(RetrieverState { projection })
    }

    pub fn projection(&self) -> &Array2<f64> {
        &self.projection
    }

    pub fn projection_mut(&mut self) -> &mut Array2<f64> {
        &mut self.projection
    }

    pub fn d_in(&self) -> usize {
        self.projection.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.projection.nrows()
    }

    fn check(&self, e: &[f64]) -> Result<()> {
        if e.len() != self.d_in() {
            return Err(Error::DimensionMismatch {
                expected: self.d_in(),
                got: e.len(),
            });
        }
        Ok(())
    }

    pub fn project(&self, e: &[f64]) -> Result<Array1<f64>> {
        self.check(e)?;
        Ok(self.projection.dot(&ArrayView1::from(e)))
    }

    /// SHA-256 over the projection's shape and bit patterns.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.d_out() as u64).to_le_bytes());
        h.update((self.d_in() as u64).to_le_bytes());
        for x in self.projection.iter() {
            h.update(x.to_bits().to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new(Vec::new());
        w.bytes(b"RETR")?;
        w.u32(len_u32(self.d_in())?)?;
        w.u32(len_u32(self.d_out())?)?;
        for &x in self.projection.iter() {
            w.f32(x as f32)?;
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(b"RETR")?;
        let d_in = r.u32()? as usize;
        let d_out = r.u32()? as usize;
        let mut vals = Vec::with_capacity(d_in * d_out);
        for _ in 0..d_in * d_out {
            vals.push(f64::from(r.f32()?));
        }
        r.expect_end()?;
        let projection =
            Array2::from_shape_vec((d_out, d_in), vals).map_err(|e| Error::Format(e.to_string()))?;
        Self::from_projection(projection)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&binio::read_file(path)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub text: String,
    /// Constituent titles; `text` is their "; " join.
    pub titles: Vec<String>,
    /// Node id of the prototype the document was built from.
    pub prototype: String,
    pub class: usize,
}

impl Document {
    pub fn new(titles: Vec<String>, prototype: String, class: usize) -> Self {
        Document {
            text: titles.join(TITLE_JOINER),
            titles,
            prototype,
            class,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CorpusLine {
    text: String,
    prototype: String,
    class: usize,
}

/// Retrieval documents with their frozen base embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    documents: Vec<Document>,
    embeddings: EmbeddingMatrix,
    rows: Array2<f64>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>, embeddings: EmbeddingMatrix) -> Result<Self> {
        if documents.len() != embeddings.rows() {
            return Err(Error::DimensionMismatch {
                expected: documents.len(),
                got: embeddings.rows(),
            });
        }
        let rows = crate::gnn::embeddings_to_array(&embeddings);
        Ok(Corpus {
            documents,
            embeddings,
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn document(&self, i: usize) -> &Document {
        &self.documents[i]
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }

    pub fn embedding(&self, i: usize) -> ArrayView1<'_, f64> {
        self.rows.row(i)
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim()
    }

    /// Writes the JSONL document list and its paired `EMB1` file.
    pub fn save(&self, jsonl: &Path, emb: &Path) -> Result<()> {
        let f = File::create(jsonl).map_err(|e| Error::io(jsonl, e))?;
        let mut w = BufWriter::new(f);
        for d in &self.documents {
            let line = CorpusLine {
                text: d.text.clone(),
                prototype: d.prototype.clone(),
                class: d.class,
            };
            writeln!(w, "{}", serde_json::to_string(&line)?).map_err(|e| Error::io(jsonl, e))?;
        }
        w.flush().map_err(|e| Error::io(jsonl, e))?;
        save_embeddings(&self.embeddings, emb)
    }

    /// Titles are recovered by splitting the text on "; ".
    pub fn load(jsonl: &Path, emb: &Path) -> Result<Self> {
        let f = File::open(jsonl).map_err(|e| Error::io(jsonl, e))?;
        let mut documents = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(jsonl, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let c: CorpusLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: jsonl.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            let titles = c.text.split(TITLE_JOINER).map(str::to_string).collect();
            documents.push(Document {
                text: c.text,
                titles,
                prototype: c.prototype,
                class: c.class,
            });
        }
        Corpus::new(documents, load_embeddings(emb)?)
    }
}

/// Probabilities over a (sub-)corpus, in sub-corpus order.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalDistribution(pub Vec<f64>);

impl RetrievalDistribution {
    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Softmax with max-subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// `<P doc, P query>`.
pub fn score(state: &RetrieverState, query: &[f64], doc: &[f64]) -> Result<f64> {
    let pq = state.project(query)?;
    let pd = state.project(doc)?;
    Ok(pd.dot(&pq))
}

/// Scores of the given corpus documents against `query`.
pub fn scores(state: &RetrieverState, corpus: &Corpus, docs: &[usize], query: &[f64]) -> Result<Vec<f64>> {
    let pq = state.project(query)?;
    if corpus.dim() != state.d_in() {
        return Err(Error::DimensionMismatch {
            expected: state.d_in(),
            got: corpus.dim(),
        });
    }
    docs.iter()
        .map(|&i| {
            if i >= corpus.len() {
                return Err(Error::OutOfRange {
                    what: "corpus",
                    index: i,
                    len: corpus.len(),
                });
            }
            Ok(state.projection.dot(&corpus.embedding(i)).dot(&pq))
        })
        .collect()
}

fn all_docs(corpus: &Corpus) -> Vec<usize> {
    (0..corpus.len()).collect()
}

fn rank(scores: &[f64], docs: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(docs[a].cmp(&docs[b])));
    order.into_iter().map(|i| docs[i]).collect()
}

/// Highest-scoring document; ties go to the lowest corpus index.
pub fn retrieve_argmax(state: &RetrieverState, corpus: &Corpus, query: &[f64]) -> Result<usize> {
    if corpus.is_empty() {
        return Err(Error::Invalid("retrieval from an empty corpus".into()));
    }
    let s = scores(state, corpus, &all_docs(corpus), query)?;
    let mut best = 0;
    for (i, &x) in s.iter().enumerate() {
        if x > s[best] {
            best = i;
        }
    }
    Ok(best)
}

/// The `m` best documents by descending score (index tie-break); the whole
/// corpus when `m` exceeds its size.
pub fn retrieve_top_m(state: &RetrieverState, corpus: &Corpus, query: &[f64], m: usize) -> Result<Vec<usize>> {
    if m == 0 {
        return Err(Error::Invalid("retrieval minibatch size M must be >= 1".into()));
    }
    let docs = all_docs(corpus);
    let s = scores(state, corpus, &docs, query)?;
    let mut ranked = rank(&s, &docs);
    ranked.truncate(m);
    Ok(ranked)
}

/// Softmax of retriever scores over `docs`.
pub fn retrieval_distribution(
    state: &RetrieverState,
    corpus: &Corpus,
    docs: &[usize],
    query: &[f64],
) -> Result<RetrievalDistribution> {
    if docs.is_empty() {
        return Err(Error::Invalid("retrieval distribution over an empty sub-corpus".into()));
    }
    Ok(RetrievalDistribution(softmax(&scores(state, corpus, docs, query)?)))
}

/// Softmax over length-normalized LM log-likelihoods divided by `temperature`.
pub fn lm_supervised_distribution(lm_scores: &[LmScore], temperature: f64) -> Result<RetrievalDistribution> {
    if lm_scores.is_empty() {
        return Err(Error::Invalid("no LM scores".into()));
    }
    if !(temperature > 0.0) || temperature.is_nan() {
        return Err(Error::Invalid(format!("temperature must be > 0, got {temperature}")));
    }
    let logits = lm_scores
        .iter()
        .map(|s| {
            if !s.log_likelihood.is_finite() {
                return Err(Error::NonFinite(format!("LM log-likelihood {}", s.log_likelihood)));
            }
            Ok(s.normalized() / temperature)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(RetrievalDistribution(softmax(&logits)))
}

/// `Σ p_lm · ln(p_lm / p_retriever)`; zero-probability LM entries contribute nothing.
pub fn kl_loss(p_lm: &RetrievalDistribution, p_retriever: &RetrievalDistribution) -> Result<f64> {
    if p_lm.len() != p_retriever.len() {
        return Err(Error::DimensionMismatch {
            expected: p_lm.len(),
            got: p_retriever.len(),
        });
    }
    let mut loss = 0.0;
    for (&t, &q) in p_lm.0.iter().zip(&p_retriever.0) {
        if t > 0.0 {
            let q = if q <= 0.0 {
                log::warn!("retriever probability {q} floored to {KL_PROB_FLOOR} in KL loss");
                KL_PROB_FLOOR
            } else {
                q
            };
            loss += t * (t / q).ln();
        }
    }
    Ok(loss)
}

/// Gradient of the KL loss with respect to the projection:
/// `Σ_z (p_retriever(z) - p_lm(z)) ∇s(z, query)` where
/// `∇_P <P e_z, P e_q> = (P e_z) e_qᵀ + (P e_q) e_zᵀ`.
pub fn kl_gradient(
    state: &RetrieverState,
    corpus: &Corpus,
    docs: &[usize],
    query: &[f64],
    p_lm: &RetrievalDistribution,
) -> Result<Array2<f64>> {
    let p_ret = retrieval_distribution(state, corpus, docs, query)?;
    if p_lm.len() != docs.len() {
        return Err(Error::DimensionMismatch {
            expected: docs.len(),
            got: p_lm.len(),
        });
    }
    // u = Σ_z c_z e_z, so the gradient is (P u) e_qᵀ + (P e_q) uᵀ.
    let mut u = Array1::<f64>::zeros(state.d_in());
    for (k, &i) in docs.iter().enumerate() {
        let c = p_ret.0[k] - p_lm.0[k];
        if c != 0.0 {
            u.scaled_add(c, &corpus.embedding(i));
        }
    }
    let q = ArrayView1::from(query);
    let pu = state.projection.dot(&u);
    let pq = state.projection.dot(&q);
    let d_out = state.d_out();
    let d_in = state.d_in();
    Ok(Array2::from_shape_fn((d_out, d_in), |(a, b)| pu[a] * q[b] + pq[a] * u[b]))
}

/// One gradient step on the KL loss. Returns the loss before the update.
pub fn train_step_retriever(
    state: &mut RetrieverState,
    corpus: &Corpus,
    docs: &[usize],
    query: &[f64],
    p_lm: &RetrievalDistribution,
    lr: f64,
) -> Result<f64> {
    let loss = kl_loss(p_lm, &retrieval_distribution(state, corpus, docs, query)?)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("retriever KL loss {loss}")));
    }
    if lr != 0.0 {
        let grad = kl_gradient(state, corpus, docs, query, p_lm)?;
        state.projection.scaled_add(-lr, &grad);
    }
    Ok(loss)
}
