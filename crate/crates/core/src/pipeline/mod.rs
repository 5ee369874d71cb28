//! End-to-end orchestration: preprocessing (GNN, prototypes, candidates,
//! PPR cache, corpus), dataset emission, the joint LM/retriever training
//! loop and exact-match evaluation.

mod config;
mod dataset;
mod eval;
mod train;

use std::path::Path;

use crate::embed::{load_embeddings, save_embeddings, EmbeddingMatrix, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::gnn::{
    self, build_prototype_corpus, read_predictions_jsonl, select_prototypes, top_i_candidates,
    write_predictions_jsonl, CandidateLabels, GnnTrainConfig, Predictions, PrototypeSet, SageModel,
};
use crate::graph::TextAttributedGraph;
use crate::ppr::PprCache;
use crate::retriever::{retrieve_argmax, Corpus, RetrieverState};
use crate::templater::{assemble_retrieved, render_input, RenderInput, RetrievalMode};

pub use config::{Dataset, GnnConfig, RunConfig};
pub use dataset::{emit_dataset, mix_joint, read_dataset, write_dataset, DatasetLine, JointLine};
pub use eval::{evaluate, ClassAccuracy, EvalReport};
pub use train::{train_loop, TrainReport};

pub const GRAPH_FILE: &str = "graph.bin";
pub const NODE_EMBEDDINGS_FILE: &str = "node_embeddings.emb";
pub const PPR_FILE: &str = "ppr.bin";
pub const MODEL_FILE: &str = "model.sage";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const PROTOTYPES_FILE: &str = "prototypes.json";
pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const CORPUS_EMB_FILE: &str = "corpus.emb";
pub const RETRIEVER_FILE: &str = "retriever.retr";
pub const CONFIG_FILE: &str = "config.json";

/// Everything preprocessing produces, plus the trainable retriever.
#[derive(Clone, Debug)]
pub struct Artifacts {
    pub model: SageModel,
    pub predictions: Predictions,
    pub prototypes: PrototypeSet,
    pub candidates: CandidateLabels,
    pub ppr: PprCache,
    pub corpus: Corpus,
    pub retriever: RetrieverState,
}

/// PPR cache entries per node: `k` neighbors besides the node itself.
pub fn ppr_cache_width(config: &RunConfig) -> usize {
    config.k + 1
}

/// Seed offset separating retriever init from GNN init.
const RETRIEVER_SEED_SALT: u64 = 0x5eed_0f_7e7e;

/// Runs the preprocessing stages in order: PPR cache, GNN training and
/// inference, prototype selection, candidate pruning, prototype corpus.
pub fn preprocess(
    graph: &TextAttributedGraph,
    node_embeddings: &EmbeddingMatrix,
    provider: &dyn EmbeddingProvider,
    config: &RunConfig,
) -> Result<Artifacts> {
    config.validate()?;
    if node_embeddings.rows() != graph.num_nodes() {
        return Err(Error::DimensionMismatch {
            expected: graph.num_nodes(),
            got: node_embeddings.rows(),
        })
        .map_err(|e| e.context("node embeddings"));
    }
    let ppr = PprCache::build(graph, ppr_cache_width(config), &config.ppr_params()?, config.ppr_method)?;

    let model = SageModel::with_layout(
        node_embeddings.dim(),
        config.gnn.hidden,
        config.gnn.layers,
        graph.num_classes(),
        config.seed,
    )?;
    let train_cfg = GnnTrainConfig {
        lr: config.gnn.lr,
        epochs: config.gnn.epochs,
        weight_decay: config.gnn.weight_decay,
    };
    let (model, trace) = gnn::train(model, graph, node_embeddings, &train_cfg)?;
    log::info!("GNN trained: loss {:?} -> {:?}", trace.first(), trace.last());
    let predictions = model.forward(graph, node_embeddings)?;

    let prototypes = select_prototypes(&predictions, config.n_prototypes)?;
    let candidates = top_i_candidates(&predictions, config.i)?;
    let corpus = build_prototype_corpus(&prototypes, &ppr, graph, config.k, &config.title_field, provider)?;
    if corpus.dim() != node_embeddings.dim() {
        return Err(Error::DimensionMismatch {
            expected: node_embeddings.dim(),
            got: corpus.dim(),
        }
        .context("corpus embeddings must share the node embedding width"));
    }
    let retriever = RetrieverState::new(
        node_embeddings.dim(),
        config.retriever_dim,
        config.seed ^ RETRIEVER_SEED_SALT,
    )?;
    Ok(Artifacts {
        model,
        predictions,
        prototypes,
        candidates,
        ppr,
        corpus,
        retriever,
    })
}

impl Artifacts {
    /// Writes every artifact, the node embeddings and the run config into `dir`.
    pub fn save(
        &self,
        dir: &Path,
        graph: &TextAttributedGraph,
        node_embeddings: &EmbeddingMatrix,
        config: &RunConfig,
    ) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.ppr.save(&dir.join(PPR_FILE))?;
        self.model.save(&dir.join(MODEL_FILE))?;
        write_predictions_jsonl(&dir.join(PREDICTIONS_FILE), graph, &self.predictions, &self.candidates)?;
        let protos = serde_json::to_string_pretty(&self.prototypes)?;
        std::fs::write(dir.join(PROTOTYPES_FILE), protos).map_err(|e| Error::io(dir.join(PROTOTYPES_FILE), e))?;
        self.corpus.save(&dir.join(CORPUS_FILE), &dir.join(CORPUS_EMB_FILE))?;
        self.retriever.save(&dir.join(RETRIEVER_FILE))?;
        save_embeddings(node_embeddings, &dir.join(NODE_EMBEDDINGS_FILE))?;
        let cfg = serde_json::to_string_pretty(config)?;
        std::fs::write(dir.join(CONFIG_FILE), cfg).map_err(|e| Error::io(dir.join(CONFIG_FILE), e))
    }

    pub fn load(dir: &Path, graph: &TextAttributedGraph) -> Result<Self> {
        let ctx = |name: &str| format!("loading artifact {}", dir.join(name).display());
        let ppr = PprCache::load(&dir.join(PPR_FILE)).map_err(|e| e.context(ctx(PPR_FILE)))?;
        let model = SageModel::load(&dir.join(MODEL_FILE)).map_err(|e| e.context(ctx(MODEL_FILE)))?;
        let (predictions, candidates) =
            read_predictions_jsonl(&dir.join(PREDICTIONS_FILE), graph).map_err(|e| e.context(ctx(PREDICTIONS_FILE)))?;
        let protos_path = dir.join(PROTOTYPES_FILE);
        let protos_text = std::fs::read_to_string(&protos_path).map_err(|e| Error::io(&protos_path, e))?;
        let prototypes: PrototypeSet = serde_json::from_str(&protos_text)?;
        let corpus =
            Corpus::load(&dir.join(CORPUS_FILE), &dir.join(CORPUS_EMB_FILE)).map_err(|e| e.context(ctx(CORPUS_FILE)))?;
        let retriever =
            RetrieverState::load(&dir.join(RETRIEVER_FILE)).map_err(|e| e.context(ctx(RETRIEVER_FILE)))?;
        if ppr.num_nodes() != graph.num_nodes() {
            return Err(Error::DimensionMismatch {
                expected: graph.num_nodes(),
                got: ppr.num_nodes(),
            }
            .context("PPR cache does not match the graph"));
        }
        Ok(Artifacts {
            model,
            predictions,
            prototypes,
            candidates,
            ppr,
            corpus,
            retriever,
        })
    }
}

pub fn load_node_embeddings(dir: &Path) -> Result<EmbeddingMatrix> {
    load_embeddings(&dir.join(NODE_EMBEDDINGS_FILE))
}

pub fn load_config(dir: &Path) -> Result<RunConfig> {
    let p = dir.join(CONFIG_FILE);
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Text embedded for each node: its fields in name order, newline-joined.
pub fn node_embedding_texts(graph: &TextAttributedGraph) -> Vec<String> {
    (0..graph.num_nodes())
        .map(|v| graph.texts(v).values().cloned().collect::<Vec<_>>().join("\n"))
        .collect()
}

/// Renders model inputs for target nodes against a fixed set of artifacts.
pub(crate) struct ExampleBuilder<'a> {
    pub graph: &'a TextAttributedGraph,
    pub embeddings: &'a EmbeddingMatrix,
    pub artifacts: &'a Artifacts,
    pub config: &'a RunConfig,
}

impl<'a> ExampleBuilder<'a> {
    pub fn new(
        graph: &'a TextAttributedGraph,
        embeddings: &'a EmbeddingMatrix,
        artifacts: &'a Artifacts,
        config: &'a RunConfig,
    ) -> Result<Self> {
        if embeddings.rows() != graph.num_nodes() {
            return Err(Error::DimensionMismatch {
                expected: graph.num_nodes(),
                got: embeddings.rows(),
            }
            .context("node embeddings"));
        }
        if artifacts.candidates.rows.len() != graph.num_nodes() {
            return Err(Error::DimensionMismatch {
                expected: graph.num_nodes(),
                got: artifacts.candidates.rows.len(),
            }
            .context("candidate labels"));
        }
        Ok(ExampleBuilder {
            graph,
            embeddings,
            artifacts,
            config,
        })
    }

    pub fn uses_semantic(&self) -> bool {
        self.config.mode != RetrievalMode::Ppr && !self.artifacts.corpus.is_empty()
    }

    /// Titles of the target's PPR neighbors, self excluded.
    pub fn ppr_titles(&self, v: usize) -> Result<Vec<String>> {
        if self.config.mode == RetrievalMode::Proto {
            return Ok(Vec::new());
        }
        Ok(self
            .artifacts
            .ppr
            .neighbors(v, self.config.k, false)?
            .into_iter()
            .map(|u| self.graph.text(u, &self.config.title_field).to_string())
            .collect())
    }

    pub fn query(&self, v: usize) -> Vec<f64> {
        self.embeddings.row_f64(v)
    }

    pub fn candidate_texts(&self, v: usize) -> Vec<String> {
        let labels = self.graph.label_space();
        self.artifacts
            .candidates
            .row(v)
            .iter()
            .map(|&c| labels.label(c).to_string())
            .collect()
    }

    pub fn target(&self, v: usize) -> String {
        self.graph
            .label(v)
            .map(|c| self.graph.label_space().label(c).to_string())
            .unwrap_or_default()
    }

    pub fn best_document(&self, v: usize, retriever: &RetrieverState) -> Result<Option<usize>> {
        if !self.uses_semantic() {
            return Ok(None);
        }
        retrieve_argmax(retriever, &self.artifacts.corpus, &self.query(v)).map(Some)
    }

    /// Model input for `v` with prototype document `doc` (if any).
    pub fn render(&self, v: usize, ppr_titles: &[String], doc: Option<usize>) -> String {
        let proto_titles: Vec<String> = match doc {
            Some(d) => self
                .artifacts
                .corpus
                .document(d)
                .titles
                .iter()
                .take(self.config.k_sem)
                .cloned()
                .collect(),
            None => Vec::new(),
        };
        let input = RenderInput {
            target_title: self.graph.text(v, &self.config.title_field).to_string(),
            target_body: self.graph.text(v, self.config.body_field()).to_string(),
            retrieved_titles: assemble_retrieved(ppr_titles, &proto_titles, self.config.mode),
            candidate_labels: self.candidate_texts(v),
            truncation_limit: self.config.truncation_limit,
        };
        render_input(self.config.template, &input)
    }

    /// Input rendered with the retriever's current best document.
    pub fn render_best(&self, v: usize, retriever: &RetrieverState) -> Result<String> {
        let ppr = self.ppr_titles(v)?;
        let doc = self.best_document(v, retriever)?;
        Ok(self.render(v, &ppr, doc))
    }
}
