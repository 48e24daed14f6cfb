//! Audit toolkit for jurisdiction-siloed disclosure in privacy policies.
//!
//! Pipeline: collect policy HTML ([`fetcher`]), split it by heading structure
//! ([`segmenter`]), label segments with the 14-category taxonomy
//! ([`classifier`]), find substantive disclosures that only appear inside
//! jurisdiction-specific sections ([`detector`]), and summarize the results
//! ([`reporter`], [`reliability`]).

pub mod classifier;
pub mod corpus;
pub mod detector;
pub mod fixtures;
pub mod fetcher;
pub mod model;
pub mod pipeline;
pub mod reliability;
pub mod reporter;
pub mod segmenter;

#[cfg(test)]
mod testutil;
