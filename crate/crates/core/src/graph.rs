//! Text-attributed graphs: data model, JSONL ingestion, binary cache, statistics.
//!
//! Adjacency is stored as an undirected CSR structure. Input edges are
//! symmetrized and deduplicated on ingest and self-loops are dropped, so
//! `neighbors(v)` is always a sorted list of distinct nodes other than `v`.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::binio::{self, len_u32, Reader, Writer};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    fn code(self) -> u32 {
        match self {
            Split::Train => 0,
            Split::Valid => 1,
            Split::Test => 2,
        }
    }

    fn from_code(c: u32) -> Result<Split> {
        match c {
            0 => Ok(Split::Train),
            1 => Ok(Split::Valid),
            2 => Ok(Split::Test),
            _ => Err(Error::Format(format!("unknown split code {c}"))),
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            _ => Err(Error::Invalid(format!(
                "unknown split {s:?} (expected train, valid or test)"
            ))),
        }
    }
}

/// Ordered class names; index `c` is the text of class `c`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    index_to_label: Vec<String>,
}

impl LabelSpace {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for l in &labels {
            if l.is_empty() {
                return Err(Error::Invalid("label strings must be non-empty".into()));
            }
            if !seen.insert(l.as_str()) {
                return Err(Error::Invalid(format!("duplicate label string {l:?}")));
            }
        }
        Ok(LabelSpace {
            index_to_label: labels,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.index_to_label.len()
    }

    pub fn label(&self, class: usize) -> &str {
        &self.index_to_label[class]
    }

    pub fn labels(&self) -> &[String] {
        &self.index_to_label
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index_to_label.iter().position(|l| l == label)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub n_nodes: usize,
    /// Undirected edge count; half the number of CSR entries.
    pub n_edges: usize,
    /// CSR entry count (each undirected edge counted in both directions).
    pub n_directed_entries: usize,
    pub n_classes: usize,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextAttributedGraph {
    node_ids: Vec<String>,
    csr_offsets: Vec<usize>,
    csr_targets: Vec<u32>,
    node_texts: Vec<BTreeMap<String, String>>,
    labels: Vec<Option<u32>>,
    split: Vec<Split>,
    label_space: LabelSpace,
}

/// One node as supplied to [`GraphBuilder`].
#[derive(Clone, Debug)]
pub struct NodeRecord {
    pub id: String,
    pub texts: BTreeMap<String, String>,
    pub split: Split,
    pub label: Option<u32>,
}

/// In-memory construction path used by ingestion and by synthetic generators.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    nodes: Vec<NodeRecord>,
    index: HashMap<String, usize>,
    edges: Vec<(u32, u32)>,
    label_space: LabelSpace,
}

impl GraphBuilder {
    pub fn new(label_space: LabelSpace) -> Self {
        GraphBuilder {
            label_space,
            ..Default::default()
        }
    }

    /// Adds a node and returns its dense index.
    pub fn add_node(&mut self, node: NodeRecord) -> Result<usize> {
        if self.index.contains_key(&node.id) {
            return Err(Error::Invalid(format!("duplicate node id {:?}", node.id)));
        }
        if let Some(l) = node.label {
            self.check_label(l as i64)?;
        }
        let idx = self.nodes.len();
        self.index.insert(node.id.clone(), idx);
        self.nodes.push(node);
        Ok(idx)
    }

    fn check_label(&self, label: i64) -> Result<()> {
        let c = self.label_space.num_classes();
        if label < 0 || label as usize >= c {
            return Err(Error::Invalid(format!(
                "label index {label} not in [0, {c})"
            )));
        }
        Ok(())
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn set_label(&mut self, v: usize, label: u32) -> Result<()> {
        self.check_label(label as i64)?;
        let n = self.nodes.len();
        let node = self.nodes.get_mut(v).ok_or(Error::OutOfRange {
            what: "nodes",
            index: v,
            len: n,
        })?;
        node.label = Some(label);
        Ok(())
    }

    /// Adds an edge by dense index. Direction is ignored.
    pub fn add_edge(&mut self, u: usize, v: usize) -> Result<()> {
        let n = self.nodes.len();
        for x in [u, v] {
            if x >= n {
                return Err(Error::OutOfRange {
                    what: "nodes",
                    index: x,
                    len: n,
                });
            }
        }
        self.edges.push((u as u32, v as u32));
        Ok(())
    }

    pub fn build(self) -> TextAttributedGraph {
        let n = self.nodes.len();
        let mut directed: Vec<(u32, u32)> = Vec::with_capacity(self.edges.len() * 2);
        for (u, v) in self.edges {
            if u != v {
                directed.push((u, v));
                directed.push((v, u));
            }
        }
        directed.sort_unstable();
        directed.dedup();

        let mut csr_offsets = vec![0usize; n + 1];
        for &(u, _) in &directed {
            csr_offsets[u as usize + 1] += 1;
        }
        for i in 0..n {
            csr_offsets[i + 1] += csr_offsets[i];
        }
        let csr_targets = directed.into_iter().map(|(_, v)| v).collect();

        let mut node_ids = Vec::with_capacity(n);
        let mut node_texts = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        let mut split = Vec::with_capacity(n);
        for node in self.nodes {
            node_ids.push(node.id);
            node_texts.push(node.texts);
            labels.push(node.label);
            split.push(node.split);
        }
        TextAttributedGraph {
            node_ids,
            csr_offsets,
            csr_targets,
            node_texts,
            labels,
            split,
            label_space: self.label_space,
        }
    }
}

#[derive(Deserialize)]
struct NodeLine {
    id: String,
    #[serde(default)]
    text: BTreeMap<String, String>,
    split: Split,
}

#[derive(Deserialize)]
struct EdgeLine {
    src: String,
    dst: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LabelLine {
    Header { classes: Vec<String> },
    Label { id: String, label: i64 },
}

#[derive(Serialize)]
struct NodeLineOut<'a> {
    id: &'a str,
    text: &'a BTreeMap<String, String>,
    split: Split,
}

#[derive(Serialize)]
struct EdgeLineOut<'a> {
    src: &'a str,
    dst: &'a str,
}

#[derive(Serialize)]
struct HeaderOut<'a> {
    classes: &'a [String],
}

#[derive(Serialize)]
struct LabelLineOut<'a> {
    id: &'a str,
    label: u32,
}

fn jsonl_lines(path: &Path) -> Result<impl Iterator<Item = Result<(usize, String)>>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let owned: PathBuf = path.to_path_buf();
    Ok(BufReader::new(f)
        .lines()
        .enumerate()
        .filter_map(move |(i, line)| match line {
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => Some(Ok((i + 1, l))),
            Err(e) => Some(Err(Error::io(owned.clone(), e))),
        }))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Reads the three JSONL interchange files into a validated graph.
pub fn ingest(nodes_path: &Path, edges_path: &Path, labels_path: &Path) -> Result<TextAttributedGraph> {
    // The label header fixes the class space, so labels are read first.
    let mut classes: Option<Vec<String>> = None;
    let mut label_rows: Vec<(usize, String, i64)> = Vec::new();
    for item in jsonl_lines(labels_path)? {
        let (ln, line) = item?;
        let parsed: LabelLine =
            serde_json::from_str(&line).map_err(|e| parse_err(labels_path, ln, e.to_string()))?;
        match parsed {
            LabelLine::Header { classes: c } => {
                if classes.is_some() {
                    return Err(parse_err(labels_path, ln, "duplicate classes header"));
                }
                classes = Some(c);
            }
            LabelLine::Label { id, label } => label_rows.push((ln, id, label)),
        }
    }
    let classes =
        classes.ok_or_else(|| parse_err(labels_path, 1, "missing {\"classes\": [...]} header"))?;
    let label_space = LabelSpace::new(classes).map_err(|e| parse_err(labels_path, 1, e.to_string()))?;

    let mut builder = GraphBuilder::new(label_space);
    for item in jsonl_lines(nodes_path)? {
        let (ln, line) = item?;
        let parsed: NodeLine =
            serde_json::from_str(&line).map_err(|e| parse_err(nodes_path, ln, e.to_string()))?;
        builder
            .add_node(NodeRecord {
                id: parsed.id,
                texts: parsed.text,
                split: parsed.split,
                label: None,
            })
            .map_err(|e| parse_err(nodes_path, ln, e.to_string()))?;
    }

    let mut labeled = vec![false; builder.nodes.len()];
    for (ln, id, label) in label_rows {
        let v = builder
            .index_of(&id)
            .ok_or_else(|| parse_err(labels_path, ln, format!("unknown node id {id:?}")))?;
        if labeled[v] {
            return Err(parse_err(labels_path, ln, format!("duplicate label for node {id:?}")));
        }
        builder
            .check_label(label)
            .map_err(|e| parse_err(labels_path, ln, e.to_string()))?;
        builder.set_label(v, label as u32)?;
        labeled[v] = true;
    }

    for item in jsonl_lines(edges_path)? {
        let (ln, line) = item?;
        let parsed: EdgeLine =
            serde_json::from_str(&line).map_err(|e| parse_err(edges_path, ln, e.to_string()))?;
        let u = builder.index_of(&parsed.src).ok_or_else(|| {
            parse_err(edges_path, ln, format!("edge endpoint {:?} out of range (unknown node)", parsed.src))
        })?;
        let v = builder.index_of(&parsed.dst).ok_or_else(|| {
            parse_err(edges_path, ln, format!("edge endpoint {:?} out of range (unknown node)", parsed.dst))
        })?;
        builder.add_edge(u, v)?;
    }

    let graph = builder.build();
    graph.validate()?;
    Ok(graph)
}

const GRAPH_MAGIC: &[u8; 4] = b"TAG1";

impl TextAttributedGraph {
    pub fn num_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn num_classes(&self) -> usize {
        self.label_space.num_classes()
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    pub fn csr_offsets(&self) -> &[usize] {
        &self.csr_offsets
    }

    pub fn csr_targets(&self) -> &[u32] {
        &self.csr_targets
    }

    pub fn node_id(&self, v: usize) -> &str {
        &self.node_ids[v]
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.node_ids.iter().position(|x| x == id)
    }

    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.csr_targets[self.csr_offsets[v]..self.csr_offsets[v + 1]]
    }

    /// Number of stored neighbors; errors when `v` is not a node.
    pub fn degree(&self, v: usize) -> Result<usize> {
        if v >= self.num_nodes() {
            return Err(Error::OutOfRange {
                what: "nodes",
                index: v,
                len: self.num_nodes(),
            });
        }
        Ok(self.csr_offsets[v + 1] - self.csr_offsets[v])
    }

    /// Text of a named field; missing fields read as "".
    pub fn text(&self, v: usize, field: &str) -> &str {
        self.node_texts[v].get(field).map(String::as_str).unwrap_or("")
    }

    pub fn texts(&self, v: usize) -> &BTreeMap<String, String> {
        &self.node_texts[v]
    }

    pub fn label(&self, v: usize) -> Option<usize> {
        self.labels[v].map(|l| l as usize)
    }

    pub fn split(&self, v: usize) -> Split {
        self.split[v]
    }

    /// Nodes in the split, ascending.
    pub fn split_nodes(&self, split: Split) -> Vec<usize> {
        (0..self.num_nodes()).filter(|&v| self.split[v] == split).collect()
    }

    /// Labeled nodes in the split, ascending.
    pub fn labeled_nodes(&self, split: Split) -> Vec<usize> {
        (0..self.num_nodes())
            .filter(|&v| self.split[v] == split && self.labels[v].is_some())
            .collect()
    }

    pub fn stats(&self) -> GraphStats {
        let count = |s| self.split.iter().filter(|&&x| x == s).count();
        GraphStats {
            n_nodes: self.num_nodes(),
            n_edges: self.csr_targets.len() / 2,
            n_directed_entries: self.csr_targets.len(),
            n_classes: self.num_classes(),
            n_train: count(Split::Train),
            n_valid: count(Split::Valid),
            n_test: count(Split::Test),
        }
    }

    /// Checks every structural invariant: CSR shape, sorted and deduplicated
    /// rows, no self-loops, symmetry, label range.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        if self.csr_offsets.len() != n + 1 || self.csr_offsets[0] != 0 {
            return Err(Error::Invalid("csr_offsets must have n+1 entries starting at 0".into()));
        }
        if self.csr_offsets[n] != self.csr_targets.len() {
            return Err(Error::Invalid("csr_offsets[n] must equal len(csr_targets)".into()));
        }
        if self.node_texts.len() != n || self.labels.len() != n || self.split.len() != n {
            return Err(Error::Invalid("per-node arrays must have n entries".into()));
        }
        for v in 0..n {
            if self.csr_offsets[v] > self.csr_offsets[v + 1] {
                return Err(Error::Invalid("csr_offsets must be non-decreasing".into()));
            }
            let row = self.neighbors(v);
            for w in row.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::Invalid(format!("row {v} not sorted/deduplicated")));
                }
            }
            for &u in row {
                let u = u as usize;
                if u >= n {
                    return Err(Error::OutOfRange { what: "nodes", index: u, len: n });
                }
                if u == v {
                    return Err(Error::Invalid(format!("self-loop stored at node {v}")));
                }
                if self.neighbors(u).binary_search(&(v as u32)).is_err() {
                    return Err(Error::Invalid(format!("asymmetric edge {v} -> {u}")));
                }
            }
            if let Some(l) = self.labels[v] {
                if l as usize >= self.num_classes() {
                    return Err(Error::Invalid(format!("label {l} out of range at node {v}")));
                }
            }
        }
        Ok(())
    }

    /// Writes the JSONL interchange files (`nodes.jsonl`, `edges.jsonl`,
    /// `labels.jsonl`) into `dir`. Each undirected edge is written once.
    pub fn write_jsonl(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let open = |name: &str| -> Result<(PathBuf, BufWriter<File>)> {
            let p = dir.join(name);
            let f = File::create(&p).map_err(|e| Error::io(&p, e))?;
            Ok((p, BufWriter::new(f)))
        };
        let (np, mut nodes) = open("nodes.jsonl")?;
        for v in 0..self.num_nodes() {
            let line = serde_json::to_string(&NodeLineOut {
                id: &self.node_ids[v],
                text: &self.node_texts[v],
                split: self.split[v],
            })?;
            writeln!(nodes, "{line}").map_err(|e| Error::io(&np, e))?;
        }
        nodes.flush().map_err(|e| Error::io(&np, e))?;

        let (ep, mut edges) = open("edges.jsonl")?;
        for v in 0..self.num_nodes() {
            for &u in self.neighbors(v) {
                if (u as usize) > v {
                    let line = serde_json::to_string(&EdgeLineOut {
                        src: &self.node_ids[v],
                        dst: &self.node_ids[u as usize],
                    })?;
                    writeln!(edges, "{line}").map_err(|e| Error::io(&ep, e))?;
                }
            }
        }
        edges.flush().map_err(|e| Error::io(&ep, e))?;

        let (lp, mut labels) = open("labels.jsonl")?;
        let header = serde_json::to_string(&HeaderOut {
            classes: self.label_space.labels(),
        })?;
        writeln!(labels, "{header}").map_err(|e| Error::io(&lp, e))?;
        for v in 0..self.num_nodes() {
            if let Some(l) = self.labels[v] {
                let line = serde_json::to_string(&LabelLineOut {
                    id: &self.node_ids[v],
                    label: l,
                })?;
                writeln!(labels, "{line}").map_err(|e| Error::io(&lp, e))?;
            }
        }
        labels.flush().map_err(|e| Error::io(&lp, e))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new(Vec::new());
        w.bytes(GRAPH_MAGIC)?;
        w.u32(len_u32(self.num_nodes())?)?;
        w.u32(len_u32(self.num_classes())?)?;
        for l in self.label_space.labels() {
            w.str(l)?;
        }
        for v in 0..self.num_nodes() {
            w.str(&self.node_ids[v])?;
            w.u32(self.split[v].code())?;
            w.u32(self.labels[v].unwrap_or(u32::MAX))?;
            w.u32(len_u32(self.node_texts[v].len())?)?;
            for (k, t) in &self.node_texts[v] {
                w.str(k)?;
                w.str(t)?;
            }
        }
        w.u64(self.csr_targets.len() as u64)?;
        for &o in &self.csr_offsets {
            w.u64(o as u64)?;
        }
        for &t in &self.csr_targets {
            w.u32(t)?;
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(GRAPH_MAGIC)?;
        let n = r.u32()? as usize;
        let c = r.u32()? as usize;
        let mut classes = Vec::with_capacity(c);
        for _ in 0..c {
            classes.push(r.str()?);
        }
        let label_space = LabelSpace::new(classes)?;
        let mut node_ids = Vec::with_capacity(n);
        let mut split = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        let mut node_texts = Vec::with_capacity(n);
        for _ in 0..n {
            node_ids.push(r.str()?);
            split.push(Split::from_code(r.u32()?)?);
            let l = r.u32()?;
            labels.push((l != u32::MAX).then_some(l));
            let nf = r.u32()? as usize;
            let mut texts = BTreeMap::new();
            for _ in 0..nf {
                let k = r.str()?;
                let t = r.str()?;
                texts.insert(k, t);
            }
            node_texts.push(texts);
        }
        let m = r.u64()? as usize;
        let mut csr_offsets = Vec::with_capacity(n + 1);
        for _ in 0..=n {
            csr_offsets.push(r.u64()? as usize);
        }
        let mut csr_targets = Vec::with_capacity(m);
        for _ in 0..m {
            csr_targets.push(r.u32()?);
        }
        r.expect_end()?;
        let g = TextAttributedGraph {
            node_ids,
            csr_offsets,
            csr_targets,
            node_texts,
            labels,
            split,
            label_space,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&binio::read_file(path)?)
    }
}

/// Degree of `v`, free-function form.
pub fn degree(graph: &TextAttributedGraph, v: usize) -> Result<usize> {
    graph.degree(v)
}

pub fn stats(graph: &TextAttributedGraph) -> GraphStats {
    graph.stats()
}
