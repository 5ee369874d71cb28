use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Artifacts, ExampleBuilder, RunConfig};
use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::graph::{Split, TextAttributedGraph};

/// One emitted instruction-tuning example.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetLine {
    pub id: String,
    pub input: String,
    pub target: String,
    pub split: Split,
}

/// A dataset line tagged with the dataset it came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointLine {
    pub source: String,
    #[serde(flatten)]
    pub line: DatasetLine,
}

/// Renders one example per node of `split`, in node order. The prototype
/// document is the current retriever's best match.
pub fn emit_dataset(
    graph: &TextAttributedGraph,
    embeddings: &EmbeddingMatrix,
    artifacts: &Artifacts,
    config: &RunConfig,
    split: Split,
) -> Result<Vec<DatasetLine>> {
    config.validate()?;
    let builder = ExampleBuilder::new(graph, embeddings, artifacts, config)?;
    graph
        .split_nodes(split)
        .into_par_iter()
        .map(|v| {
            let input = builder
                .render_best(v, &artifacts.retriever)
                .map_err(|e| e.context(format!("rendering node {:?}", graph.node_id(v))))?;
            Ok(DatasetLine {
                id: graph.node_id(v).to_string(),
                input,
                target: builder.target(v),
                split,
            })
        })
        .collect()
}

fn write_jsonl<T: Serialize>(path: &Path, lines: &[T]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for line in lines {
        writeln!(w, "{}", serde_json::to_string(line)?).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_dataset<T: Serialize>(path: &Path, lines: &[T]) -> Result<()> {
    write_jsonl(path, lines)
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetLine>> {
    read_jsonl(path)
}

/// Concatenates named datasets, tags each line with its source and
/// shuffles with `seed`.
pub fn mix_joint(datasets: &[(String, Vec<DatasetLine>)], seed: u64) -> Result<Vec<JointLine>> {
    if datasets.len() < 2 {
        return Err(Error::Invalid(format!(
            "joint mixing needs at least 2 datasets, got {}",
            datasets.len()
        )));
    }
    let mut out: Vec<JointLine> = datasets
        .iter()
        .flat_map(|(source, lines)| {
            lines.iter().map(move |l| JointLine {
                source: source.clone(),
                line: l.clone(),
            })
        })
        .collect();
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(out)
}
