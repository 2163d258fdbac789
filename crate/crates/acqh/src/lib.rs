//! Asymmetric correlation quantization hashing for cross-modal retrieval.
//!
//! Databases of paired image/text feature vectors are compressed into
//! compact per-item codes: every item is represented by one atom index per
//! stage of a shared compositional codebook, and the sum of the selected
//! atoms approximates the item's embedding in a `K`-dimensional latent
//! space. Queries stay real-valued: they are projected into the same latent
//! space by a per-modality linear map and scored against the whole database
//! with a per-query lookup table, so a scan costs `m` table reads per item
//! regardless of `K`.
//!
//! The model (projections, codebook, indicator codes, label regressor) is
//! trained by alternating closed-form block updates driven by label-overlap
//! similarity; see [`trainer::train`]. [`query`] implements the asymmetric
//! lookup-table scan, [`eval`] the standard ranked-retrieval metrics, and
//! [`io`] the on-disk dataset and model formats.

pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod quantizer;
pub mod query;
pub mod synth;
pub mod trainer;

pub use error::Error;
pub use model::{AcqhModel, Dims, FeatureMatrix, Hyperparams, LabelMatrix, Modality};
pub use quantizer::{Codebook, IndicatorCodes};

/// Library-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
