//! Core of a self-hosted human evaluation server for machine translation and
//! multilingual generation: campaign files, item assignment, tutorials and
//! attention checks, statistics, and the append-only event store.

pub mod analytics;
pub mod assignment;
pub mod campaign;
pub mod quality;
pub mod record;
pub mod store;
