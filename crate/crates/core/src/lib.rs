//! Domain-adversarial deep interest network for cross-domain click-through
//! rate prediction.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod experiments;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod pca;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

/// The guide's chapters, compiled and run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/objective.md")]
    mod objective {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/toy.md")]
    mod toy {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
