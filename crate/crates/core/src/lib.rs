//! Calibrated confidence for automatic short answer grading.
//!
//! A grading model labels each student response correct or incorrect. This
//! crate estimates how far each label can be trusted by fusing
//!
//! * three confidences read from the model ([`signals`]): verbalized,
//!   softmax-normalized label likelihood, and sampling consistency;
//! * an aleatoric estimate of how ambiguous the response is, from the
//!   gold-label entropy of its Ward cluster ([`aleatoric`]);
//!
//! in a random forest calibrated with cross-validated Platt scaling
//! ([`fusion`]), and evaluates the result for both selective grading and
//! calibration ([`metrics`]). [`pipeline`] ties the stages together with
//! files between them; the `hyconf` binary is a thin front end over it.
//!
//! ```
//! use hybrid_confidence::corpus::Label;
//! use hybrid_confidence::metrics::{evaluate_method, EvalItem};
//!
//! let items = [
//!     EvalItem::new(0.9, Label::Correct),
//!     EvalItem::new(0.3, Label::Incorrect),
//!     EvalItem::new(0.6, Label::Incorrect),
//! ];
//! let report = evaluate_method(&items, 10).unwrap();
//! assert!((report.accuracy - 2.0 / 3.0).abs() < 1e-12);
//! assert_eq!(report.auroc, 1.0);
//! ```
//!
//! A longer guide lives in the `book/` directory of the repository; its code
//! samples are compiled as doc-tests of this crate.

pub mod aleatoric;
pub mod corpus;
pub mod error;
pub mod fusion;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod signals;

pub use error::{Error, Result};

// The guide's chapters are pulled in as documentation so that `cargo test
// --doc` runs every snippet in them.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/signals.md")]
    mod signals {}
    #[doc = include_str!("../../../book/src/aleatoric.md")]
    mod aleatoric {}
    #[doc = include_str!("../../../book/src/fusion.md")]
    mod fusion {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
