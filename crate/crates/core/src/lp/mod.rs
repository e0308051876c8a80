//! Sparse LP modelling and a bounded primal simplex with dual values.

mod lpformat;
mod lu;
mod mip;
mod problem;
mod simplex;

pub use lpformat::to_lp_string;
pub use mip::solve_mip;
pub use problem::{
    Basis, Col, LpProblem, LpSolution, Relation, Row, RowId, Status, Tolerances, VarStatus,
};

/// Solves `problem` (maximization) from a slack basis.
pub fn solve(problem: &LpProblem, tol: &Tolerances) -> LpSolution {
    solve_with_basis(problem, tol, None)
}

/// Solves `problem`, starting from `basis` when it has a compatible shape.
pub fn solve_with_basis(
    problem: &LpProblem,
    tol: &Tolerances,
    basis: Option<&Basis>,
) -> LpSolution {
    simplex::Simplex::new(problem, *tol).solve(basis)
}
