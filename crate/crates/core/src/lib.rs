//! Paired-ad audit workbench.
//!
//! The crate builds race-inferable ad audiences from voter rolls, pairs
//! for-profit and public school ads so that market confounders hit both ads
//! equally, runs the pair against a pluggable delivery platform and measures
//! racial skew in who the ads reached.
//!
//! Module map:
//!
//! - [`voterdata`]: voter-roll ingestion and per-(group, race) availability.
//! - [`audience`]: partitions in which region membership determines race.
//! - [`catalog`]: school shortlisting, de-facto skew and pairing.
//! - [`experiment`]: paired campaigns, platform clients, polling and logs.
//! - [`simulator`]: biased-delivery platform model and Monte Carlo harness.
//! - [`stats`]: race inference, the two-proportion skew test and Holm.
//! - [`report`]: SVG plots and tables over analysis output.
//! - [`cli`]: subcommand orchestration.

pub mod audience;
pub mod catalog;
pub mod cli;
pub mod experiment;
pub mod report;
pub mod seed;
pub mod simulator;
pub mod stats;
pub mod synth;
pub mod voterdata;

pub use audience::{AudiencePartition, PartitionSpec};
pub use catalog::{School, SchoolPair, Sector};
pub use experiment::{DeliverySnapshot, PairedExperiment, PlatformClient};
pub use simulator::SimConfig;
pub use stats::{HolmDecision, RaceBreakdown, SkewResult};
pub use voterdata::{DmaGroup, Individual, Race, RegionKey, VoterDataset};
