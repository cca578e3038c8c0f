//! Data preparation: OD filtering and aggregation, tract → city weighting,
//! VIF screening, standardization and synthetic corpora.

mod od;
mod standardize;
mod synth;
mod vif;

pub use od::{
    aggregate_tracts_to_city, attach_mobility, filter_od, od_to_city_mobility, CityAggregate, Crosswalk,
    MOBILITY_DIM, MOBILITY_FEATURE_NAMES,
};
pub use standardize::{standardize, Standardizer};
pub use synth::{band_centers, generate_city_set, generate_holdout, generate_synthetic, SynthConfig, SynthTruth};
pub use vif::{
    variance_inflation, vif_screen, VifAction, VifLogEntry, VifScreen, DEFAULT_VIF_THRESHOLD, VIF_CAP,
};

/// Default minimum trip count for an OD pair to be kept.
pub const DEFAULT_MIN_TRIPS: u64 = 5;
