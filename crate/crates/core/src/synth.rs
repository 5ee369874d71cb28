//! Seeded synthetic text-attributed graphs for tests, demos and benchmarks.
//!
//! Nodes are assigned to classes round-robin and wired by a stochastic
//! block model. Titles carry the class label word with a configurable
//! probability (otherwise another class's word); abstracts mix class topic
//! words with shared noise words.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::graph::{GraphBuilder, LabelSpace, NodeRecord, Split, TextAttributedGraph};

const LABEL_WORDS: [&str; 8] = [
    "theory", "neural", "genetics", "robotics", "databases", "vision", "security", "networks",
];
const TOPIC_WORDS_PER_CLASS: usize = 10;
const NOISE_VOCAB: usize = 60;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_nodes: usize,
    pub n_classes: usize,
    /// Expected neighbors inside the node's own class.
    pub degree_in: f64,
    /// Expected neighbors in other classes.
    pub degree_out: f64,
    /// Probability that a title contains its own class word.
    pub title_label_rate: f64,
    pub topic_words: usize,
    pub noise_words: usize,
    pub train_frac: f64,
    pub valid_frac: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_nodes: 300,
            n_classes: 3,
            degree_in: 6.0,
            degree_out: 0.6,
            title_label_rate: 0.6,
            topic_words: 4,
            noise_words: 6,
            train_frac: 0.6,
            valid_frac: 0.2,
            seed: 0,
        }
    }
}

pub fn label_word(c: usize) -> String {
    LABEL_WORDS.get(c).map(|s| s.to_string()).unwrap_or_else(|| format!("topic{c}"))
}

fn sbm_edges(rng: &mut ChaCha8Rng, classes: &[usize], n_classes: usize, d_in: f64, d_out: f64) -> Vec<(usize, usize)> {
    let n = classes.len();
    let per_class = (n as f64 / n_classes as f64).max(1.0);
    let p_in = (d_in / (per_class - 1.0).max(1.0)).min(1.0);
    let p_out = (d_out / (n as f64 - per_class).max(1.0)).min(1.0);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if classes[u] == classes[v] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    edges
}

fn draw_split(rng: &mut ChaCha8Rng, train: f64, valid: f64) -> Split {
    let x: f64 = rng.random();
    if x < train {
        Split::Train
    } else if x < train + valid {
        Split::Valid
    } else {
        Split::Test
    }
}

/// A labeled synthetic TAG with `title` and `abstract` fields.
pub fn synthetic_tag(cfg: &SynthConfig) -> Result<TextAttributedGraph> {
    if cfg.n_classes < 2 || cfg.n_nodes < cfg.n_classes {
        return Err(Error::Invalid(format!(
            "synthetic graph needs >= 2 classes and at least one node per class (n={}, C={})",
            cfg.n_nodes, cfg.n_classes
        )));
    }
    if !(0.0..=1.0).contains(&cfg.title_label_rate) || cfg.train_frac + cfg.valid_frac > 1.0 {
        return Err(Error::Invalid("synthetic rates must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let labels: Vec<String> = (0..cfg.n_classes).map(label_word).collect();
    let mut b = GraphBuilder::new(LabelSpace::new(labels.clone())?);
    let noise: Vec<String> = (0..NOISE_VOCAB).map(|k| format!("w{k}")).collect();
    let classes: Vec<usize> = (0..cfg.n_nodes).map(|v| v % cfg.n_classes).collect();
    for (v, &c) in classes.iter().enumerate() {
        let topic: Vec<String> = (0..TOPIC_WORDS_PER_CLASS).map(|k| format!("{}{k}", labels[c])).collect();
        let title_word = if rng.random::<f64>() < cfg.title_label_rate {
            labels[c].clone()
        } else {
            let other = (c + rng.random_range(1..cfg.n_classes)) % cfg.n_classes;
            labels[other].clone()
        };
        let mut title: Vec<String> = noise.choose_multiple(&mut rng, 2).cloned().collect();
        title.push(title_word);
        title.push(topic.choose(&mut rng).expect("topic vocabulary").clone());
        let mut body: Vec<String> = (0..cfg.topic_words)
            .map(|_| topic.choose(&mut rng).expect("topic vocabulary").clone())
            .collect();
        body.extend((0..cfg.noise_words).map(|_| noise.choose(&mut rng).expect("noise vocabulary").clone()));
        let texts = BTreeMap::from([
            ("title".to_string(), title.join(" ")),
            ("abstract".to_string(), body.join(" ")),
        ]);
        b.add_node(NodeRecord {
            id: format!("n{v}"),
            texts,
            split: draw_split(&mut rng, cfg.train_frac, cfg.valid_frac),
            label: Some(c as u32),
        })?;
    }
    for (u, v) in sbm_edges(&mut rng, &classes, cfg.n_classes, cfg.degree_in, cfg.degree_out) {
        b.add_edge(u, v)?;
    }
    Ok(b.build())
}

/// Two-class block graph with Gaussian features whose class means differ
/// along the first two axes. Every node is a labeled train node.
pub fn two_block(n: usize, dim: usize, seed: u64) -> Result<(TextAttributedGraph, EmbeddingMatrix)> {
    if n < 2 || dim < 2 {
        return Err(Error::Invalid("two_block needs n >= 2 and dim >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = GraphBuilder::new(LabelSpace::new(vec![label_word(0), label_word(1)])?);
    let classes: Vec<usize> = (0..n).map(|v| v % 2).collect();
    for (v, &c) in classes.iter().enumerate() {
        b.add_node(NodeRecord {
            id: format!("b{v}"),
            texts: BTreeMap::from([("title".to_string(), format!("node {v}"))]),
            split: Split::Train,
            label: Some(c as u32),
        })?;
    }
    for (u, v) in sbm_edges(&mut rng, &classes, 2, 5.0, 0.5) {
        b.add_edge(u, v)?;
    }
    let noise = Normal::new(0.0, 0.5).expect("valid normal");
    let mut values = Vec::with_capacity(n * dim);
    for &c in &classes {
        for j in 0..dim {
            let mean = if j == c { 1.0 } else { 0.0 };
            values.push((mean + noise.sample(&mut rng)) as f32);
        }
    }
    Ok((b.build(), EmbeddingMatrix::new(n, dim, values)?))
}
