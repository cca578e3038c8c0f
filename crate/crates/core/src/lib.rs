//! Mobility-aware, city-adaptive sentiment classification for geo-tagged
//! posts, with the supporting data ingestion, similarity retrieval and
//! evaluation tooling.

pub mod adapt;
pub mod city;
pub mod data;
pub mod error;
pub mod experiment;
pub mod fusion;
pub mod index;
pub mod ingest;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod cli;

pub use error::{Error, Result};
