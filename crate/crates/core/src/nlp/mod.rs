//! Local and multistart solvers for bound- and equality-constrained programs,
//! plus root finding and Latin hypercube sampling.

mod auglag;
mod boxmin;
mod lhs;
mod multistart;
mod problem;
mod root;

pub use auglag::{lagrangian_stationarity, solve_local, LocalSolution, SolveStatus, SolverOptions};
pub use boxmin::{minimize_box, BoxOptions, BoxResult, BoxStatus};
pub use lhs::latin_hypercube;
pub use multistart::{
    compare_solutions, multistart_from, multistart_solve, BoxSampler, MultistartError, MultistartResult, StartSampler,
};
pub use problem::{projected_gradient_norm, Evaluation, JacobianBlock, NlpProblem, SparseJacobian};
pub use root::{solve_bracketed, solve_root, FnSystem, Root, RootError, RootOptions, RootSystem};
