//! Non-learning schedulers and exact oracles.

pub mod caps;
pub mod dp;
pub mod heuristics;
pub mod static_program;

pub use caps::{cap_earliest, cap_scale};
pub use dp::{dp_optimal, DpConfig, DpModel, DpSolution, PolicyMetrics};
pub use heuristics::{edf, uniform, BudgetedAllocation, EdfMode};
pub use static_program::{static_program, static_program_with, ChannelBelief, StaticProblem, StaticSolution};
