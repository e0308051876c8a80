use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::problem::{Basis, Col, LpProblem, LpSolution, Status, Tolerances};
use super::solve_with_basis;

struct Node {
    bound: f64,
    depth: usize,
    seq: usize,
    fixings: Vec<(usize, f64)>,
    basis: Option<Basis>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then(self.depth.cmp(&other.depth))
            .then(other.seq.cmp(&self.seq))
    }
}

/// Best-first branch and bound over `binaries`, branching on the most
/// fractional one. Binary columns must be boxed in `[0, 1]`.
pub fn solve_mip(problem: &LpProblem, binaries: &[Col], tol: &Tolerances) -> LpSolution {
    let mut work = problem.clone();
    let mut incumbent: Option<LpSolution> = None;
    let mut heap = BinaryHeap::new();
    let mut seq = 0usize;
    let mut nodes = 0usize;
    let mut iterations = 0usize;
    let mut saw_unbounded = false;

    heap.push(Node {
        bound: f64::INFINITY,
        depth: 0,
        seq,
        fixings: Vec::new(),
        basis: None,
    });

    while let Some(node) = heap.pop() {
        if let Some(inc) = &incumbent {
            if node.bound <= inc.objective + tol.mip_gap {
                break;
            }
        }
        if nodes >= tol.max_nodes {
            return match incumbent {
                Some(mut inc) => {
                    inc.status = Status::IterLimit;
                    inc.iterations = iterations;
                    inc
                }
                None => LpSolution::failed(
                    Status::IterLimit,
                    iterations,
                    problem.num_cols(),
                    problem.num_rows(),
                ),
            };
        }
        nodes += 1;

        for &(c, v) in &node.fixings {
            work.lower[c] = v;
            work.upper[c] = v;
        }
        let sol = solve_with_basis(&work, tol, node.basis.as_ref());
        for &(c, _) in &node.fixings {
            work.lower[c] = problem.lower[c];
            work.upper[c] = problem.upper[c];
        }
        iterations += sol.iterations;

        match sol.status {
            Status::Optimal => {}
            Status::Unbounded => {
                saw_unbounded = true;
                continue;
            }
            _ => continue,
        }
        if let Some(inc) = &incumbent {
            if sol.objective <= inc.objective + tol.mip_gap {
                continue;
            }
        }

        let branch = binaries
            .iter()
            .map(|c| (c.0, sol.primal[c.0]))
            .filter(|&(_, v)| (v - v.round()).abs() > tol.integrality)
            .max_by(|a, b| {
                let fa = (a.1 - 0.5).abs();
                let fb = (b.1 - 0.5).abs();
                fb.total_cmp(&fa).then(b.0.cmp(&a.0))
            });

        match branch {
            None => {
                let mut sol = sol;
                for c in binaries {
                    sol.primal[c.0] = sol.primal[c.0].round();
                }
                incumbent = Some(sol);
            }
            Some((col, _)) => {
                for v in [0.0, 1.0] {
                    seq += 1;
                    let mut fixings = node.fixings.clone();
                    fixings.push((col, v));
                    heap.push(Node {
                        bound: sol.objective,
                        depth: node.depth + 1,
                        seq,
                        fixings,
                        basis: sol.basis.clone(),
                    });
                }
            }
        }
    }

    match incumbent {
        Some(mut inc) => {
            inc.iterations = iterations;
            inc
        }
        None => LpSolution::failed(
            if saw_unbounded {
                Status::Unbounded
            } else {
                Status::Infeasible
            },
            iterations,
            problem.num_cols(),
            problem.num_rows(),
        ),
    }
}
