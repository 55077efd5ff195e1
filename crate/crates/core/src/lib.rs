//! Sentiment classification of short texts with hybrid CNN / Bi-LSTM models.
//!
//! The pipeline: clean and encode tweets ([`text`]), embed them with either
//! trained co-occurrence vectors ([`glove`]) or a small transformer encoder
//! ([`encoder`]), run a convolution and/or bidirectional LSTM stack
//! ([`layers`]) into a three-way classifier ([`model`]), and tune batch size
//! and layer widths by exhaustive grid search with cross-validation
//! ([`search`]).

pub mod archive;
pub mod binio;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod glove;
pub mod layers;
pub mod model;
pub mod param;
pub mod pipeline;
pub mod search;
pub mod text;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/preprocessing.md")]
    struct Preprocessing;
    #[doc = include_str!("../../../book/src/glove.md")]
    struct Glove;
    #[doc = include_str!("../../../book/src/encoder.md")]
    struct Encoder;
    #[doc = include_str!("../../../book/src/layers.md")]
    struct Layers;
    #[doc = include_str!("../../../book/src/models.md")]
    struct Models;
    #[doc = include_str!("../../../book/src/grid_search.md")]
    struct GridSearch;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
