use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Artifacts, ExampleBuilder, RunConfig};
use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::graph::{Split, TextAttributedGraph};
use crate::lm::{LanguageModel, TextPair};
use crate::retriever::{lm_supervised_distribution, retrieve_top_m, train_step_retriever, RetrieverState};

/// Loss traces and call counts of a training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    /// LM NLL per step.
    pub lm_nll: Vec<f64>,
    /// Retriever KL loss per update (before the update).
    pub retriever_kl: Vec<f64>,
    /// Pairs sent to `score` per retriever update.
    pub scored_pairs: Vec<usize>,
    /// Calls to `score` per retriever update.
    pub score_batches: Vec<usize>,
    pub retriever_digest: String,
    pub lm_digest: String,
}

struct Counting<'a> {
    lm: &'a mut dyn LanguageModel,
    calls: usize,
}

impl Counting<'_> {
    fn score(&mut self, pairs: &[TextPair]) -> Result<Vec<crate::lm::LmScore>> {
        self.calls += 1;
        self.lm.score(pairs)
    }
}

fn check_unchanged(what: &str, before: &str, after: &str, step: usize) -> Result<()> {
    if before != after {
        return Err(Error::Invalid(format!(
            "stop-gradient violated at step {step}: {what} state changed ({before} -> {after})"
        )));
    }
    Ok(())
}

/// Joint training over the labeled train nodes. Each step renders the
/// target with its best prototype document, takes one LM step on it, then
/// scores the top-M document variants with the LM and moves the retriever
/// toward the resulting distribution. Epochs are seeded shuffles.
pub fn train_loop(
    graph: &TextAttributedGraph,
    embeddings: &EmbeddingMatrix,
    artifacts: &mut Artifacts,
    config: &RunConfig,
    lm: &mut dyn LanguageModel,
) -> Result<TrainReport> {
    config.validate()?;
    let mut state: RetrieverState = artifacts.retriever.clone();
    let mut report = TrainReport::default();
    {
        let builder = ExampleBuilder::new(graph, embeddings, artifacts, config)?;
        let corpus = &artifacts.corpus;
        let mut nodes = graph.labeled_nodes(Split::Train);
        if nodes.is_empty() {
            return Err(Error::Invalid("no labeled training nodes".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut lm = Counting { lm, calls: 0 };
        let mut step = 0;
        for epoch in 0..config.epochs {
            nodes.shuffle(&mut rng);
            for &v in &nodes {
                step += 1;
                let ctx = |e: Error| e.context(format!("training step {step} (epoch {epoch}, node {:?})", graph.node_id(v)));
                let ppr_titles = builder.ppr_titles(v).map_err(ctx)?;
                let target = builder.target(v);
                let query = builder.query(v);
                let docs = if builder.uses_semantic() {
                    retrieve_top_m(&state, corpus, &query, config.m).map_err(ctx)?
                } else {
                    Vec::new()
                };
                let variants = |lm: &mut Counting| -> Result<Option<Vec<crate::lm::LmScore>>> {
                    if docs.is_empty() {
                        return Ok(None);
                    }
                    let pairs: Vec<TextPair> = docs
                        .iter()
                        .map(|&z| TextPair::new(builder.render(v, &ppr_titles, Some(z)), target.clone()))
                        .collect();
                    lm.score(&pairs).map(Some)
                };

                let calls_before = lm.calls;
                let pre_scores = if config.score_after_lm_update {
                    None
                } else {
                    variants(&mut lm).map_err(ctx)?
                };

                let input = builder.render(v, &ppr_titles, docs.first().copied());
                let retriever_before = config.verify_stop_gradient.then(|| state.digest());
                let nll = lm
                    .lm
                    .train_step(&[TextPair::new(input, target.clone())], config.lm_lr)
                    .map_err(ctx)?;
                if !nll.is_finite() {
                    return Err(Error::Divergence { epoch, loss: nll }.context(format!("LM step {step}")));
                }
                report.lm_nll.push(nll);
                if let Some(before) = retriever_before {
                    check_unchanged("retriever", &before, &state.digest(), step)?;
                }

                let scores = match pre_scores {
                    Some(s) => Some(s),
                    None => variants(&mut lm).map_err(ctx)?,
                };
                if let Some(scores) = scores {
                    report.score_batches.push(lm.calls - calls_before);
                    report.scored_pairs.push(scores.len());
                    let p_lm = lm_supervised_distribution(&scores, config.temperature).map_err(ctx)?;
                    let lm_before = if config.verify_stop_gradient {
                        Some(lm.lm.state_digest().map_err(ctx)?)
                    } else {
                        None
                    };
                    let kl = train_step_retriever(&mut state, corpus, &docs, &query, &p_lm, config.retriever_lr)
                        .map_err(ctx)?;
                    if !kl.is_finite() {
                        return Err(Error::Divergence { epoch, loss: kl }.context(format!("retriever step {step}")));
                    }
                    report.retriever_kl.push(kl);
                    if let Some(before) = lm_before {
                        check_unchanged("LM", &before, &lm.lm.state_digest().map_err(ctx)?, step)?;
                    }
                }
            }
            log::info!("epoch {epoch}: {step} steps");
        }
        report.steps = step;
        report.lm_digest = lm.lm.state_digest()?;
    }
    report.retriever_digest = state.digest();
    artifacts.retriever = state;
    Ok(report)
}
