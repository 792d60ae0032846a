//! Intent-conditioned text anonymization: the pipeline, the adversarial
//! attribute-inference harness, utility and intent metrics, dataset
//! ingestion and run persistence.

pub mod adversary;
pub mod corpus;
pub mod evalsuite;
pub mod gateway;
pub mod human;
pub mod ledger;
pub mod model;
pub mod pipeline;
pub mod promptkit;
pub mod runs;
pub mod simulate;
pub mod wire;
