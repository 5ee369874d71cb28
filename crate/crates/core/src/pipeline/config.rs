use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ppr::{PprMethod, PprParams};
use crate::templater::{RetrievalMode, TemplateKind, DEFAULT_TRUNCATION_LIMIT};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GnnConfig {
    pub hidden: usize,
    pub layers: usize,
    pub lr: f64,
    pub epochs: usize,
    pub weight_decay: f64,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig {
            hidden: 256,
            layers: 3,
            lr: 0.5,
            epochs: 200,
            weight_decay: 0.0,
        }
    }
}

/// Every knob of a run. Defaults follow the Cora column of the published
/// hyperparameter table; [`RunConfig::for_dataset`] gives the others.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// PPR teleport probability.
    pub alpha: f64,
    pub ppr_method: PprMethod,
    /// Residual threshold when `ppr_method` is push.
    pub push_epsilon: f64,
    /// PPR neighbors rendered for the target and per prototype document.
    pub k: usize,
    /// Titles taken from the retrieved prototype document.
    pub k_sem: usize,
    /// Prototypes per class.
    pub n_prototypes: usize,
    /// Candidate labels kept per node.
    pub i: usize,
    /// Retrieval minibatch size.
    pub m: usize,
    pub template: TemplateKind,
    pub mode: RetrievalMode,
    pub lm_lr: f64,
    pub retriever_lr: f64,
    pub retriever_dim: usize,
    /// Temperature of the LM-supervised distribution.
    pub temperature: f64,
    pub epochs: usize,
    pub seed: u64,
    pub truncation_limit: usize,
    pub title_field: String,
    /// Node field rendered as the body; the template's default when unset.
    pub body_field: Option<String>,
    pub gnn: GnnConfig,
    /// Score retrieval variants with the LM after its update in the same step.
    pub score_after_lm_update: bool,
    /// Compare state digests around every update in the training loop.
    pub verify_stop_gradient: bool,
    /// Constrain generation to the candidate labels during evaluation.
    pub constrained_eval: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            alpha: 0.1,
            ppr_method: PprMethod::Power,
            push_epsilon: 1e-6,
            k: 5,
            k_sem: 5,
            n_prototypes: 10,
            i: 3,
            m: 8,
            template: TemplateKind::Citation,
            mode: RetrievalMode::Both,
            lm_lr: 1e-4,
            retriever_lr: 1e-5,
            retriever_dim: 128,
            temperature: 1.0,
            epochs: 1,
            seed: 0,
            truncation_limit: DEFAULT_TRUNCATION_LIMIT,
            title_field: "title".into(),
            body_field: None,
            gnn: GnnConfig::default(),
            score_after_lm_update: true,
            verify_stop_gradient: false,
            constrained_eval: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dataset {
    Cora,
    Pubmed,
    OgbnArxiv,
    OgbnProducts,
}

impl std::str::FromStr for Dataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cora" => Ok(Dataset::Cora),
            "pubmed" => Ok(Dataset::Pubmed),
            "ogbn-arxiv" | "arxiv" => Ok(Dataset::OgbnArxiv),
            "ogbn-products" | "products" => Ok(Dataset::OgbnProducts),
            _ => Err(Error::Invalid(format!("unknown dataset preset {s:?}"))),
        }
    }
}

impl RunConfig {
    pub fn for_dataset(dataset: Dataset) -> Self {
        let base = RunConfig::default();
        match dataset {
            Dataset::Cora => base,
            Dataset::Pubmed => RunConfig {
                k: 2,
                k_sem: 2,
                i: 2,
                ..base
            },
            Dataset::OgbnArxiv => RunConfig {
                template: TemplateKind::CitationTitleLast,
                ..base
            },
            Dataset::OgbnProducts => RunConfig {
                template: TemplateKind::Amazon,
                ..base
            },
        }
    }

    pub fn body_field(&self) -> &str {
        self.body_field.as_deref().unwrap_or_else(|| self.template.body_field())
    }

    pub fn ppr_params(&self) -> Result<PprParams> {
        let mut p = PprParams::new(self.alpha)?;
        p.epsilon = self.push_epsilon;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.ppr_params()?;
        let positive = [
            ("k", self.k),
            ("k_sem", self.k_sem),
            ("n_prototypes", self.n_prototypes),
            ("i", self.i),
            ("m", self.m),
            ("retriever_dim", self.retriever_dim),
            ("gnn.hidden", self.gnn.hidden),
            ("gnn.layers", self.gnn.layers),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Invalid(format!("{name} must be >= 1")));
            }
        }
        for (name, v) in [
            ("lm_lr", self.lm_lr),
            ("retriever_lr", self.retriever_lr),
            ("gnn.lr", self.gnn.lr),
            ("gnn.weight_decay", self.gnn.weight_decay),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Invalid(format!("temperature must be > 0, got {}", self.temperature)));
        }
        Ok(())
    }
}
