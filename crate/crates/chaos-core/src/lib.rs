//! Deterministic simulation of an SDN-controlled intranet protected by a
//! layered moving-target defense.
//!
//! The crate is organized around the defense pipeline:
//!
//! * [`tower`] builds the risk hierarchy (the "chaos tower") from host
//!   vulnerability and service data and classifies connections against it.
//! * [`obfuscation`] implements the countermeasures: address mutation,
//!   port-scan reply synthesis, and decoy redirection.
//! * [`netsim`] is the discrete-tick network: hosts, flow-table switches,
//!   a controller event channel, and a rate-based IDS stub.
//! * [`controller`] wires tower + obfuscation into the simulated control
//!   plane, one implementation per protection mode.
//! * [`scanner`] is the attacker harness and the information-disclosure /
//!   overhead metrics.
//! * [`config`] and [`experiment`] load scenarios, build the reference
//!   networks, and run seeded experiments with byte-stable output.

pub mod addr;
pub mod config;
pub mod controller;
pub mod experiment;
pub mod netsim;
pub mod obfuscation;
pub mod scanner;
pub mod tower;

pub use addr::Address;
pub use config::{Mode, Scenario};
pub use experiment::{predicted_obfuscation_load, run_experiment, RunOutput};
