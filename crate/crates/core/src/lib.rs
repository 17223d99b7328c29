//! Tools for measuring how speech attributes (content, speaker identity,
//! pitch, loudness) are carried by the discrete token streams of neural
//! audio codecs.
//!
//! The crate covers three analysis routes over a [`corpus::TokenCorpus`]:
//! co-occurrence statistics between codec tokens and content units
//! ([`assoc`]), two-dimensional t-SNE projections of codebooks
//! ([`projection`]) and mutual-information estimates ([`mi`]). A small
//! masked encoder-decoder transformer ([`ancogen`], built on [`nn`]) maps
//! codec tokens to attribute tokens and back. [`synth`] generates corpora with
//! known ground truth for every one of these procedures.

pub mod ancogen;
pub mod assoc;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod mi;
pub mod nn;
pub mod par;
pub mod projection;
pub mod synth;

pub use error::{Error, Result};
