//! Prompt templates that turn a target node, its retrieved titles and its
//! pruned label candidates into an instruction-tuning input.

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub const CANDIDATE_JOINER: &str = " or ";
pub const RETRIEVED_JOINER: &str = "; ";
pub const DEFAULT_TRUNCATION_LIMIT: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateKind {
    Citation,
    CitationTitleLast,
    Amazon,
    AmazonTitleLast,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 4] = [
        TemplateKind::Citation,
        TemplateKind::CitationTitleLast,
        TemplateKind::Amazon,
        TemplateKind::AmazonTitleLast,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TemplateKind::Citation => "citation",
            TemplateKind::CitationTitleLast => "citation-title-last",
            TemplateKind::Amazon => "amazon",
            TemplateKind::AmazonTitleLast => "amazon-title-last",
        }
    }

    /// Node text field holding the body section.
    pub fn body_field(self) -> &'static str {
        match self {
            TemplateKind::Citation | TemplateKind::CitationTitleLast => "abstract",
            TemplateKind::Amazon | TemplateKind::AmazonTitleLast => "description",
        }
    }

    fn layout(self) -> Layout {
        match self {
            TemplateKind::Citation | TemplateKind::CitationTitleLast => Layout {
                subject: "paper",
                title: "Title: ",
                body: "Content: ",
                related: "Related papers: ",
                title_last: self == TemplateKind::CitationTitleLast,
            },
            TemplateKind::Amazon | TemplateKind::AmazonTitleLast => Layout {
                subject: "Amazon product",
                title: "Product name: ",
                body: "Description: ",
                related: "Related products: ",
                title_last: self == TemplateKind::AmazonTitleLast,
            },
        }
    }
}

impl std::str::FromStr for TemplateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        TemplateKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::Invalid(format!(
                    "unknown template {s:?} (expected citation, citation-title-last, amazon or amazon-title-last)"
                ))
            })
    }
}

struct Layout {
    subject: &'static str,
    title: &'static str,
    body: &'static str,
    related: &'static str,
    title_last: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RenderInput {
    pub target_title: String,
    /// Abstract or description of the target node.
    pub target_body: String,
    pub retrieved_titles: Vec<String>,
    pub candidate_labels: Vec<String>,
    /// Maximum length of the rendered input, in characters.
    pub truncation_limit: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedExample {
    pub input: String,
    pub target: String,
}

fn assemble(kind: TemplateKind, title: &str, body: &str, retrieved: &[String], candidates: &[String]) -> String {
    let l = kind.layout();
    let related = retrieved.join(RETRIEVED_JOINER);
    let mut s = format!(
        "Please classify the following {} into {} based on the provided information",
        l.subject,
        candidates.join(CANDIDATE_JOINER)
    );
    let title_line = format!("\n{}{}", l.title, title);
    if !l.title_last {
        s.push_str(&title_line);
    }
    s.push('\n');
    s.push_str(l.body);
    s.push_str(body);
    s.push('\n');
    s.push_str(l.related);
    s.push_str(&related);
    if l.title_last {
        s.push_str(&title_line);
    }
    s
}

fn char_len(s: &str) -> usize {
    s.chars().count()
}

fn char_prefix(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Renders the model input. When it exceeds the truncation limit, trailing
/// retrieved titles are dropped whole; if that is not enough the body is
/// cut, and as a last resort the string itself.
pub fn render_input(kind: TemplateKind, r: &RenderInput) -> String {
    let limit = r.truncation_limit;
    let full = assemble(kind, &r.target_title, &r.target_body, &r.retrieved_titles, &r.candidate_labels);
    if char_len(&full) <= limit {
        return full;
    }
    for keep in (0..r.retrieved_titles.len()).rev() {
        let s = assemble(
            kind,
            &r.target_title,
            &r.target_body,
            &r.retrieved_titles[..keep],
            &r.candidate_labels,
        );
        if char_len(&s) <= limit {
            return s;
        }
    }
    let overhead = char_len(&assemble(kind, &r.target_title, "", &[], &r.candidate_labels));
    if overhead <= limit {
        let body = char_prefix(&r.target_body, limit - overhead);
        return assemble(kind, &r.target_title, body, &[], &r.candidate_labels);
    }
    let bare = assemble(kind, &r.target_title, "", &[], &r.candidate_labels);
    char_prefix(&bare, limit).to_string()
}

pub fn render(kind: TemplateKind, r: &RenderInput, target: &str) -> RenderedExample {
    RenderedExample {
        input: render_input(kind, r),
        target: target.to_string(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrievalMode {
    Ppr,
    Proto,
    Both,
}

impl std::str::FromStr for RetrievalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "ppr" => Ok(RetrievalMode::Ppr),
            "proto" => Ok(RetrievalMode::Proto),
            "both" => Ok(RetrievalMode::Both),
            _ => Err(Error::Invalid(format!("unknown retrieval mode {s:?} (expected ppr, proto or both)"))),
        }
    }
}

/// Topological titles, prototype-document titles, or both (topological
/// first, later duplicates removed).
pub fn assemble_retrieved(ppr_titles: &[String], proto_titles: &[String], mode: RetrievalMode) -> Vec<String> {
    match mode {
        RetrievalMode::Ppr => ppr_titles.to_vec(),
        RetrievalMode::Proto => proto_titles.to_vec(),
        RetrievalMode::Both => {
            let mut seen = std::collections::HashSet::new();
            ppr_titles
                .iter()
                .chain(proto_titles)
                .filter(|t| seen.insert(t.as_str()))
                .cloned()
                .collect()
        }
    }
}
