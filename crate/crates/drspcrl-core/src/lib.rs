//! Distributionally robust reinforcement learning with a self-paced
//! curriculum over the robustness budget.
//!
//! The crate is organized around an exact KL-dual robust value solver
//! ([`dual`]), a brute-force primal oracle used for verification
//! ([`simplex`]), exact robust dynamic programming on finite MDPs
//! ([`tabular`]), curriculum schedulers for the robustness budget
//! ([`curriculum`]), two desk-scale environments ([`env`]), an actor-critic
//! trainer with a dual network ([`agent`]), and a perturbation evaluation
//! harness ([`eval`]).

pub mod dual;
pub mod simplex;
pub mod tabular;
pub mod curriculum;
pub mod env;
pub mod nn;
pub mod agent;
pub mod eval;
pub mod config;
pub mod verify;
