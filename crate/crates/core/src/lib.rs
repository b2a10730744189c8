//! Document-context neural machine translation: a bidirectional GRU encoder
//! with additive attention, a GRU decoder, and a hierarchical summarizer of
//! preceding source sentences that can be wired into the model in several
//! ways.

pub mod config;
pub mod context;
pub mod corpus;
pub mod decode;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod synthgen;
pub mod train;
pub mod numerics;

pub use error::{Error, Result};
