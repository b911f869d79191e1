//! The DADIN computation graph and its toy-scale sibling.
//!
//! Both models share [`head::AdversarialHead`]: the domain-agnostic layer with
//! its skip connection, the click predictor, and the three domain classifiers
//! that sit behind gradient-reversal nodes.

pub mod dadin;
pub mod head;
pub mod layers;
pub mod toy;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dadin::{Dadin, FeatureLayout, FieldSpec};
pub use head::{AdversarialHead, Forward, ForwardOutputs, HeadConfig, Targets};
pub use toy::{ToyConfig, ToyModel, ToyPoint};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceAggregation {
    Attention,
    Average,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterestConcat {
    Attention,
    Equal,
}

/// Which of the two algebraically equal bi-interaction forms to evaluate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiInteractionForm {
    /// `½[(Σ mᵢcᵢ)² − Σ (mᵢcᵢ)²]`, linear in the number of blocks.
    #[default]
    SquareOfSum,
    /// `Σ_{i<j} (mᵢcᵢ) ⊙ (mⱼcⱼ)`.
    Pairwise,
}

/// Normaliser for the intra-class branch losses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchNormalizer {
    /// Divide by the branch size (ρ or τ).
    #[default]
    PerBranch,
    /// Divide by the batch size n.
    Batch,
}

/// Structural switches for the ablation variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantConfig {
    pub sequence_aggregation: SequenceAggregation,
    pub interest_concat: InterestConcat,
    pub use_bi_interaction: bool,
    pub use_dnn: bool,
    pub use_domain_agnostic_layer: bool,
    pub use_global_confusion: bool,
    pub use_intra_confusion: bool,
}

impl Default for VariantConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl VariantConfig {
    /// Every variant name accepted by [`VariantConfig::named`].
    pub const NAMES: [&'static str; 10] = [
        "DADIN1", "DADIN2", "DADIN3", "DADIN4", "DADIN5", "DADIN6", "DADIN7", "DADIN8", "DADIN9",
        "DADIN++",
    ];

    /// The complete model (DADIN++).
    pub fn full() -> Self {
        Self {
            sequence_aggregation: SequenceAggregation::Attention,
            interest_concat: InterestConcat::Attention,
            use_bi_interaction: true,
            use_dnn: true,
            use_domain_agnostic_layer: true,
            use_global_confusion: true,
            use_intra_confusion: true,
        }
    }

    /// Resolves an ablation name such as `DADIN6` (case-insensitive).
    pub fn named(name: &str) -> Result<Self> {
        let full = Self::full();
        let v = match name.to_ascii_uppercase().as_str() {
            "DADIN++" | "DADINPP" => full,
            "DADIN1" => Self {
                sequence_aggregation: SequenceAggregation::Average,
                ..full
            },
            "DADIN2" => Self {
                interest_concat: InterestConcat::Equal,
                ..full
            },
            "DADIN3" => Self {
                use_bi_interaction: false,
                ..full
            },
            "DADIN4" => Self {
                use_dnn: false,
                ..full
            },
            "DADIN5" => Self {
                use_bi_interaction: false,
                use_dnn: false,
                ..full
            },
            "DADIN6" => Self {
                use_domain_agnostic_layer: false,
                ..full
            },
            "DADIN7" => Self {
                use_global_confusion: false,
                ..full
            },
            "DADIN8" => Self {
                use_intra_confusion: false,
                ..full
            },
            "DADIN9" => Self {
                use_global_confusion: false,
                use_intra_confusion: false,
                ..full
            },
            _ => {
                return Err(Error::Config(format!(
                    "unknown variant `{name}`; valid names: {}",
                    Self::NAMES.join(", ")
                )))
            }
        };
        Ok(v)
    }
}

/// Hyperparameters of the full model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Embedding width `d`.
    pub embed_dim: usize,
    /// Maximum history length kept per domain.
    pub seqlen: usize,
    /// Hidden widths of the feature-crossing DNN; a final layer projects to `d`.
    pub dnn_hidden: Vec<usize>,
    /// Hidden width of the click predictor.
    pub predictor_hidden: usize,
    pub dropout: f64,
    /// Routing threshold `T` for the intra-class classifiers.
    pub threshold: f64,
    /// Stop gradients through the `ŷ` gate of the intra-class classifiers.
    pub detach_gate: bool,
    pub branch_normalizer: BranchNormalizer,
    pub bi_form: BiInteractionForm,
    pub variant: VariantConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            seqlen: 20,
            dnn_hidden: vec![512, 128],
            predictor_hidden: 100,
            dropout: 0.5,
            threshold: 0.5,
            detach_gate: false,
            branch_normalizer: BranchNormalizer::PerBranch,
            bi_form: BiInteractionForm::SquareOfSum,
            variant: VariantConfig::full(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.seqlen == 0 || self.predictor_hidden == 0 {
            return Err(Error::Config(
                "embed_dim, seqlen and predictor_hidden must be positive".into(),
            ));
        }
        if self.dnn_hidden.contains(&0) {
            return Err(Error::Config("DNN hidden widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        head::check_threshold(self.threshold)
    }

    pub(crate) fn head_config(&self) -> HeadConfig {
        HeadConfig {
            dropout: self.dropout,
            threshold: self.threshold,
            detach_gate: self.detach_gate,
            use_domain_agnostic_layer: self.variant.use_domain_agnostic_layer,
            use_global_confusion: self.variant.use_global_confusion,
            use_intra_confusion: self.variant.use_intra_confusion,
            branch_normalizer: self.branch_normalizer,
        }
    }
}
