//! Deterministic simulation of a decentralized data market in which
//! personal datastores (pods) trade resources under machine-readable usage
//! policies. A hash-chained ledger hosts the market contract, four oracle
//! flows bridge the on-chain and off-chain worlds, and consumer-side trusted
//! sandboxes keep enforcing retention and purpose obligations after the data
//! has left the owner's pod.
//!
//! The crate is organized around the architecture's components:
//!
//! - [`policy`] — usage-policy model (retention and purpose obligations),
//!   canonical serialization, purpose taxonomy, pure evaluation functions.
//! - [`identity`] — keypairs, signatures, content hashing, addresses.
//! - [`ledger`] — append-only hash-chained block log executing signed
//!   transactions against the market contract.
//! - [`de_app`] — the DistExchange contract: pod registry, resource index,
//!   fee certificates, copy holders, and compliance monitoring.
//! - [`oracle`] — push-in / push-out / pull-in / pull-out message flows
//!   between off-chain components and the contract.
//! - [`pod`] — pod storage plus the pod manager that serves resources and
//!   mirrors policy state to the chain.
//! - [`tee`] — the consumer-side trusted execution sandbox: trusted storage,
//!   local enforcement, usage logging, and signed compliance evidence.
//! - [`harness`] — the simulation driver: scenario scripts, the message
//!   loop, run reports, and the command-line interface.
//!
//! Every run is fully deterministic: given the same scenario and seed, the
//! final chain head hash and the whole run report are byte-identical.
//!
//! See the crate's `examples/` directory for one runnable example per major
//! capability, and `scenarios/` for ready-to-run scenario scripts.

#![forbid(unsafe_code)]

pub mod de_app;
pub mod harness;
pub mod identity;
pub mod ledger;
pub mod oracle;
pub mod pod;
pub mod policy;
pub mod tee;

pub use harness::{run_scenario, Scenario, Simulation};
pub use policy::{Obligation, Purpose, PurposeTaxonomy, UsagePolicy};
