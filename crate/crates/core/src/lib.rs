//! Counterfeit detection for supply chains of physical items.
//!
//! Items carry a simulated physically unclonable function (PUF). Producers
//! enrol each PUF into challenge-response data sealed per party; buyers
//! re-measure the PUF on delivery and record the verdict through a tracking
//! contract that runs on a byzantine-fault-tolerant replicated ledger. The
//! [`adversary`] module stages the known attacks against that pipeline and
//! [`experiments`] drives the tuning, prototype and attack-matrix runs.
//!
//! Everything is deterministic given a master seed.

pub mod adversary;
pub mod codec;
pub mod contract;
pub mod crypto;
pub mod experiments;
pub mod ledger;
pub mod puf;
pub mod rng;
pub mod scenario;
pub mod supply_chain;
