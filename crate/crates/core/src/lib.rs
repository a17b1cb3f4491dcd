//! Symbolic analysis of security protocols in the Dolev-Yao model:
//! message algebra with deduction closures, guarded-message secrecy,
//! rule-based protocol semantics with bounded trace exploration,
//! preservation checking, and hash-chained mobile-agent offer lists.

pub mod chain;
pub mod dsl;
pub mod explore;
pub mod guard;
pub mod list;
pub mod model;
pub mod msg;
pub mod pattern;
pub mod preserve;

pub use explore::{explore, Bounds, ExploreOutcome, StepKind, Visitor};
pub use guard::{guard_member, guard_set, secrecy_witness, GuardSpec, Secret, Witness};
pub use model::{Event, Protocol, Rule, Trace};
pub use msg::{AgentId, KeyId, Message, MsgSet};
pub use pattern::{EventPattern, Pattern, Subst};
