//! Tensor arithmetic, reverse-mode differentiation and dense solvers.

mod gradcheck;
mod linalg;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, CoordinateCheck, GradCheckReport, RELATIVE_FLOOR};
pub use linalg::{linear_solve, solve_ridge, Lu, RidgeProblem, RidgeSolution, MAX_CONDITION};
pub use tape::{sigmoid, Gradients, Tape, Var};
pub use tensor::Tensor;
