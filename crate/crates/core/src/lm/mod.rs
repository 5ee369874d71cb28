//! Language-model interface: sequence scoring, (constrained) generation and
//! the NLL fine-tuning step, with an offline toy scorer and an HTTP client.

mod remote;
mod toy;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use remote::{RemoteClient, RemoteConfig, ServiceInfo, PROTOCOL_VERSION};
pub use toy::{toy_generate, toy_score, toy_train_step, ToyLm};

/// Natural-log likelihood of a target sequence and its token count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmScore {
    pub log_likelihood: f64,
    pub n_target_tokens: usize,
}

impl LmScore {
    /// Average per-token log-likelihood; 0 for empty targets.
    pub fn normalized(&self) -> f64 {
        if self.n_target_tokens == 0 {
            0.0
        } else {
            self.log_likelihood / self.n_target_tokens as f64
        }
    }

    /// Average token-wise negative log-likelihood.
    pub fn nll(&self) -> f64 {
        -self.normalized()
    }
}

/// An (input, target) text pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextPair {
    pub input: String,
    pub target: String,
}

impl TextPair {
    pub fn new(input: impl Into<String>, target: impl Into<String>) -> Self {
        TextPair {
            input: input.into(),
            target: target.into(),
        }
    }
}

pub trait LanguageModel: Send + Sync {
    /// Scores every pair, results in request order.
    fn score(&self, pairs: &[TextPair]) -> Result<Vec<LmScore>>;

    /// Greedy generation; with candidates the result is one of them.
    fn generate(&self, input: &str, candidates: Option<&[String]>) -> Result<String>;

    /// One fine-tuning step on the average token-wise NLL; returns the loss.
    fn train_step(&mut self, pairs: &[TextPair], lr: f64) -> Result<f64>;

    /// Digest of the model-side parameter state.
    fn state_digest(&self) -> Result<String>;
}
