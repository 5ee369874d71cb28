use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Artifacts, ExampleBuilder, RunConfig};
use crate::embed::EmbeddingMatrix;
use crate::error::Result;
use crate::graph::{Split, TextAttributedGraph};
use crate::lm::LanguageModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub label: String,
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub accuracy: f64,
    pub n_evaluated: usize,
    pub n_correct: usize,
    pub per_class: Vec<ClassAccuracy>,
    /// Fraction of evaluated nodes whose label is among their candidates.
    pub candidate_hit_rate: f64,
    pub constrained: bool,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Exact-match accuracy of `lm` on the labeled nodes of `split`. A
/// prediction is correct when it equals the label string after trailing
/// whitespace is removed.
pub fn evaluate(
    graph: &TextAttributedGraph,
    embeddings: &EmbeddingMatrix,
    artifacts: &Artifacts,
    config: &RunConfig,
    lm: &dyn LanguageModel,
    split: Split,
) -> Result<EvalReport> {
    config.validate()?;
    let builder = ExampleBuilder::new(graph, embeddings, artifacts, config)?;
    let nodes = graph.labeled_nodes(split);
    let outcomes: Vec<(usize, bool, bool)> = nodes
        .par_iter()
        .map(|&v| {
            let ctx = |e: crate::error::Error| e.context(format!("evaluating node {:?}", graph.node_id(v)));
            let input = builder.render_best(v, &artifacts.retriever).map_err(ctx)?;
            let candidates = builder.candidate_texts(v);
            let out = if config.constrained_eval {
                lm.generate(&input, Some(&candidates))
            } else {
                lm.generate(&input, None)
            }
            .map_err(ctx)?;
            let target = builder.target(v);
            let y = graph.label(v).expect("labeled node");
            let hit = artifacts.candidates.row(v).contains(&y);
            Ok((y, out.trim_end() == target.trim_end(), hit))
        })
        .collect::<Result<_>>()?;

    let c = graph.num_classes();
    let mut n = vec![0usize; c];
    let mut correct = vec![0usize; c];
    let mut hits = 0;
    for &(y, ok, hit) in &outcomes {
        n[y] += 1;
        correct[y] += ok as usize;
        hits += hit as usize;
    }
    let n_correct: usize = correct.iter().sum();
    let per_class = (0..c)
        .map(|k| ClassAccuracy {
            label: graph.label_space().label(k).to_string(),
            n: n[k],
            correct: correct[k],
            accuracy: ratio(correct[k], n[k]),
        })
        .collect();
    Ok(EvalReport {
        split,
        accuracy: ratio(n_correct, outcomes.len()),
        n_evaluated: outcomes.len(),
        n_correct,
        per_class,
        candidate_hit_rate: ratio(hits, outcomes.len()),
        constrained: config.constrained_eval,
    })
}
