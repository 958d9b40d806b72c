//! Multi-agent courtroom simulation: trait-conditioned advocates debate a
//! case before a judge, verdicts drive trait-level Elo ratings, and a
//! REINFORCE-trained orchestrator learns which defense traits to field.

pub mod agent;
pub mod case;
pub mod debate;
pub mod elo;
pub mod orchestrator;
pub mod report;
pub mod seed;
pub mod taxonomy;
pub mod tournament;
