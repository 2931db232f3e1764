//! An out-of-band agentic data plane.
//!
//! Agents reach tools, models and each other only through infrastructure
//! that resolves their credentials, enforces configured policy, and records
//! every interaction in a hash-chained transcript. Identity, trace context
//! and routing decisions travel out-of-band: agents can neither read nor
//! write them.

pub mod canonical;
pub mod clock;
pub mod identity;
pub mod ledger;
pub mod par;
pub mod policy;
pub mod plane;
pub mod broker;
pub mod mcp;
pub mod ai;
pub mod world;
pub mod pipeline;
