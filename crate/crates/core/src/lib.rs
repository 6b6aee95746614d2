pub mod commitment;
pub mod fixed;
pub mod graph;
pub mod hash;
pub mod identity;
pub mod merkle;
pub mod ledger;
pub mod settlement;
pub mod config;
pub mod quorum;
pub mod scenario;
