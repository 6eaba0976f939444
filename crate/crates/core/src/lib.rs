//! Newton-step solvers for linear-quadratic MPC problems.
//!
//! The equality-constrained problem
//!
//! ```text
//! minimize   ½ Σ_t [x_t; u_t]ᵀ Q_t [x_t; u_t] + ½ x_Nᵀ Q_{x,N} x_N
//! subject to x_0 = x̄_0,  x_{t+1} = A_t x_t + B_t u_t
//! ```
//!
//! is solved either by the serial Riccati recursion ([`riccati`]) or by the
//! tree-structured parallel Riccati recursion ([`tree`]): the horizon is split
//! into batches, each batch is condensed independently into a one-stage
//! problem ([`condense`]), the condensed stages form a shorter problem of the
//! same shape, and this is repeated until a short top problem remains. Its
//! solution is then pushed back down the tree level by level, each node
//! solving its batch independently. The result equals the serial solution up
//! to rounding.
//!
//! [`oracle`] provides a dense KKT reference solver and explicit batch
//! matrices used to cross-check everything, [`active_set`] wraps either
//! solver in a primal active-set loop for `0 ≤ u` bounds, and [`bench`] is
//! the serial-vs-parallel timing harness.

pub mod active_set;
pub mod bench;
pub mod condense;
pub mod error;
pub mod linalg;
pub mod oracle;
pub mod problem;
pub mod riccati;
pub mod solution;
pub mod tree;

pub use error::{Error, Result};
pub use linalg::{GainPolicy, Mat, Vector};
pub use problem::{
    generate_random_stable, parse_problem, serialize_problem, validate_problem,
    BoundConstrainedProblem, MpcProblem, StageData, ValidationReport,
};
pub use riccati::{
    dual_recursion, forward_recursion, riccati_factorize, solve_serial, RiccatiFactorization,
    Trajectory,
};
pub use solution::Solution;
pub use tree::{
    build_tree, propagate_solution, solve_parallel, split_horizon, FinalBatch, ParallelConfig,
    ParallelRiccati,
};
