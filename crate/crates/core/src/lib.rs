//! Training and evaluation engine for contrastive visual neural decoding
//! with an uncertainty-aware blur prior.
//!
//! Stimulus images are foveally blurred ([`blur`]) before being embedded by
//! a frozen vision encoder. A small brain encoder ([`encoder`]) is trained
//! against those embeddings with a symmetric contrastive loss ([`loss`]),
//! while a running Gaussian model of paired similarity scores
//! ([`uncertainty`]) decides how strongly each training image is blurred on
//! its next visit. [`train`] runs the loop and [`eval`] scores zero-shot
//! brain-to-image retrieval.

mod binio;
pub mod blur;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod loss;
pub mod numkernel;
pub mod provenance;
pub mod train;
pub mod uncertainty;

pub use error::{Result, UbpError};
pub use numkernel::{Matrix, Real, Rng};
