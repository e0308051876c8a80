//! Bounded-variable revised primal simplex.
//!
//! Every row `aᵢᵀx (rel) bᵢ` becomes `aᵢᵀx - sᵢ = 0` with a logical `sᵢ`
//! whose box encodes the relation. Phase one minimizes the sum of bound
//! infeasibilities of basic variables (recomputed every iteration), phase two
//! minimizes the negated user objective. The basis is kept as a sparse LU
//! factorization plus a product-form eta file.

use super::lu::Lu;
use super::problem::{Basis, LpProblem, LpSolution, Relation, Status, Tolerances, VarStatus};

const REFACTOR_INTERVAL: usize = 64;
const MAX_SINGULAR_REPAIRS: usize = 8;
const REENTRY_LIMIT: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Nb {
    Lower,
    Upper,
    Free,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum State {
    Basic(usize),
    Nonbasic(Nb),
}

struct Eta {
    slot: usize,
    pivot: f64,
    entries: Vec<(usize, f64)>,
}

enum Step {
    Flip,
    Pivot {
        slot: usize,
        theta: f64,
        to_upper: bool,
    },
    Unbounded,
}

pub(crate) struct Simplex<'p> {
    problem: &'p LpProblem,
    n: usize,
    m: usize,
    col_start: Vec<usize>,
    col_row: Vec<usize>,
    col_val: Vec<f64>,
    /// Internal minimization costs (negated user objective; zero on logicals).
    cost: Vec<f64>,
    lo: Vec<f64>,
    up: Vec<f64>,
    x: Vec<f64>,
    state: Vec<State>,
    basic: Vec<usize>,
    lu: Lu,
    etas: Vec<Eta>,
    tol: Tolerances,
    iterations: usize,
}

impl<'p> Simplex<'p> {
    pub(crate) fn new(problem: &'p LpProblem, tol: Tolerances) -> Self {
        let n = problem.num_cols();
        let m = problem.num_rows();
        let mut counts = vec![0usize; n + 1];
        for row in &problem.rows {
            for &(c, _) in &row.coefs {
                counts[c + 1] += 1;
            }
        }
        for j in 0..n {
            counts[j + 1] += counts[j];
        }
        let col_start = counts.clone();
        let nnz = col_start[n];
        let mut fill = counts;
        let mut col_row = vec![0usize; nnz];
        let mut col_val = vec![0.0f64; nnz];
        for (i, row) in problem.rows.iter().enumerate() {
            for &(c, v) in &row.coefs {
                let at = fill[c];
                col_row[at] = i;
                col_val[at] = v;
                fill[c] += 1;
            }
        }

        let mut cost: Vec<f64> = problem.obj.iter().map(|c| -c).collect();
        cost.resize(n + m, 0.0);
        let mut lo = problem.lower.clone();
        let mut up = problem.upper.clone();
        for row in &problem.rows {
            let (l, u) = match row.relation {
                Relation::Le => (f64::NEG_INFINITY, row.rhs),
                Relation::Ge => (row.rhs, f64::INFINITY),
                Relation::Eq => (row.rhs, row.rhs),
            };
            lo.push(l);
            up.push(u);
        }

        Self {
            problem,
            n,
            m,
            col_start,
            col_row,
            col_val,
            cost,
            lo,
            up,
            x: vec![0.0; n + m],
            state: vec![State::Nonbasic(Nb::Free); n + m],
            basic: Vec::with_capacity(m),
            lu: Lu::default(),
            etas: Vec::new(),
            tol,
            iterations: 0,
        }
    }

    fn nonbasic_at(&self, j: usize, preferred: Nb) -> (Nb, f64) {
        let (l, u) = (self.lo[j], self.up[j]);
        match preferred {
            Nb::Lower if l.is_finite() => (Nb::Lower, l),
            Nb::Upper if u.is_finite() => (Nb::Upper, u),
            _ if l.is_finite() => (Nb::Lower, l),
            _ if u.is_finite() => (Nb::Upper, u),
            _ => (Nb::Free, 0.0),
        }
    }

    fn cold_start(&mut self) {
        self.basic.clear();
        for j in 0..self.n {
            let (nb, v) = self.nonbasic_at(j, Nb::Lower);
            self.state[j] = State::Nonbasic(nb);
            self.x[j] = v;
        }
        for i in 0..self.m {
            self.state[self.n + i] = State::Basic(i);
            self.basic.push(self.n + i);
        }
    }

    fn warm_start(&mut self, basis: &Basis) -> bool {
        if basis.cols.len() != self.n || basis.rows.len() > self.m {
            return false;
        }
        let mut statuses: Vec<VarStatus> = basis.cols.clone();
        statuses.extend(basis.rows.iter().copied());
        statuses.resize(self.n + self.m, VarStatus::Basic);
        if statuses.iter().filter(|s| **s == VarStatus::Basic).count() != self.m {
            return false;
        }
        self.basic.clear();
        for (j, st) in statuses.iter().enumerate() {
            match st {
                VarStatus::Basic => {
                    self.state[j] = State::Basic(self.basic.len());
                    self.basic.push(j);
                }
                other => {
                    let pref = match other {
                        VarStatus::AtUpper => Nb::Upper,
                        VarStatus::Free => Nb::Free,
                        _ => Nb::Lower,
                    };
                    let (nb, v) = self.nonbasic_at(j, pref);
                    self.state[j] = State::Nonbasic(nb);
                    self.x[j] = v;
                }
            }
        }
        true
    }

    fn for_col(&self, j: usize, mut f: impl FnMut(usize, f64)) {
        if j < self.n {
            for k in self.col_start[j]..self.col_start[j + 1] {
                f(self.col_row[k], self.col_val[k]);
            }
        } else {
            f(j - self.n, -1.0);
        }
    }

    fn col_dot(&self, j: usize, y: &[f64]) -> f64 {
        if j < self.n {
            let mut s = 0.0;
            for k in self.col_start[j]..self.col_start[j + 1] {
                s += self.col_val[k] * y[self.col_row[k]];
            }
            s
        } else {
            -y[j - self.n]
        }
    }

    fn refactor(&mut self) {
        for _ in 0..MAX_SINGULAR_REPAIRS {
            let cols: Vec<Vec<(usize, f64)>> = self
                .basic
                .iter()
                .map(|&j| {
                    let mut c = Vec::new();
                    self.for_col(j, |r, v| c.push((r, v)));
                    c
                })
                .collect();
            match Lu::factorize(self.m, &cols, self.tol.pivot * 1e-3) {
                Ok(lu) => {
                    self.lu = lu;
                    self.etas.clear();
                    return;
                }
                Err(singular) => {
                    for (&slot, &row) in singular.slots.iter().zip(&singular.rows) {
                        let out = self.basic[slot];
                        let (nb, v) = self.nonbasic_at(out, Nb::Lower);
                        self.state[out] = State::Nonbasic(nb);
                        self.x[out] = v;
                        let logical = self.n + row;
                        if let State::Basic(old) = self.state[logical] {
                            // Should not happen: a basic logical owns its row.
                            debug_assert!(false, "logical {logical} already basic in slot {old}");
                        }
                        self.state[logical] = State::Basic(slot);
                        self.basic[slot] = logical;
                    }
                }
            }
        }
        panic!("simplex basis could not be repaired");
    }

    fn recompute_basic_values(&mut self) {
        let mut rhs = vec![0.0f64; self.m];
        for j in 0..self.n + self.m {
            if let State::Nonbasic(_) = self.state[j] {
                let v = self.x[j];
                if v != 0.0 {
                    self.for_col(j, |r, a| rhs[r] -= a * v);
                }
            }
        }
        let mut xb = vec![0.0f64; self.m];
        self.lu.ftran(&mut rhs, &mut xb);
        self.apply_etas_ftran(&mut xb);
        for (slot, &j) in self.basic.iter().enumerate() {
            self.x[j] = xb[slot];
        }
    }

    fn apply_etas_ftran(&self, v: &mut [f64]) {
        for eta in &self.etas {
            let xp = v[eta.slot] / eta.pivot;
            v[eta.slot] = xp;
            if xp != 0.0 {
                for &(i, a) in &eta.entries {
                    v[i] -= a * xp;
                }
            }
        }
    }

    fn ftran_col(&self, j: usize) -> Vec<f64> {
        let mut rhs = vec![0.0f64; self.m];
        self.for_col(j, |r, v| rhs[r] += v);
        let mut out = vec![0.0f64; self.m];
        self.lu.ftran(&mut rhs, &mut out);
        self.apply_etas_ftran(&mut out);
        out
    }

    fn btran(&self, c_slot: &[f64]) -> Vec<f64> {
        let mut c = c_slot.to_vec();
        for eta in self.etas.iter().rev() {
            let mut s = c[eta.slot];
            for &(i, a) in &eta.entries {
                s -= a * c[i];
            }
            c[eta.slot] = s / eta.pivot;
        }
        let mut y = vec![0.0f64; self.m];
        self.lu.btran(&c, &mut y);
        y
    }

    fn feas_tol(&self, bound: f64) -> f64 {
        self.tol.primal * bound.abs().max(1.0)
    }

    /// Phase-one costs by slot when any basic variable is out of bounds.
    fn phase_costs(&self) -> (bool, Vec<f64>) {
        let mut infeasible = false;
        let mut c = vec![0.0f64; self.m];
        for (slot, &j) in self.basic.iter().enumerate() {
            let v = self.x[j];
            if v < self.lo[j] - self.feas_tol(self.lo[j]) {
                c[slot] = -1.0;
                infeasible = true;
            } else if v > self.up[j] + self.feas_tol(self.up[j]) {
                c[slot] = 1.0;
                infeasible = true;
            }
        }
        if !infeasible {
            for (slot, &j) in self.basic.iter().enumerate() {
                c[slot] = self.cost[j];
            }
        }
        (infeasible, c)
    }

    fn price(&self, phase1: bool, y: &[f64], bland: bool) -> Option<(usize, f64)> {
        let dtol = self.tol.dual;
        let mut best: Option<(usize, f64)> = None;
        let mut best_score = 0.0f64;
        for j in 0..self.n + self.m {
            let nb = match self.state[j] {
                State::Nonbasic(nb) => nb,
                State::Basic(_) => continue,
            };
            if self.lo[j] == self.up[j] {
                continue;
            }
            let cj = if phase1 { 0.0 } else { self.cost[j] };
            let d = cj - self.col_dot(j, y);
            let eligible = match nb {
                Nb::Lower => d < -dtol,
                Nb::Upper => d > dtol,
                Nb::Free => d.abs() > dtol,
            };
            if !eligible {
                continue;
            }
            if bland {
                return Some((j, d));
            }
            if d.abs() > best_score {
                best_score = d.abs();
                best = Some((j, d));
            }
        }
        best
    }

    fn ratio_test(&self, q: usize, dir: f64, alpha: &[f64], bland: bool, harris: bool) -> Step {
        let range = self.up[q] - self.lo[q];
        let mut candidates: Vec<(usize, f64, f64, bool)> = Vec::new();
        let mut theta_max = f64::INFINITY;
        for (slot, &a) in alpha.iter().enumerate() {
            if a.abs() <= self.tol.pivot {
                continue;
            }
            let rate = -dir * a;
            let j = self.basic[slot];
            let v = self.x[j];
            let (l, u) = (self.lo[j], self.up[j]);
            let (tl, tu) = (self.feas_tol(l), self.feas_tol(u));
            // (distance to the bound, bound side, room before leaving the
            // tolerance band)
            let target = if rate > 0.0 {
                if v < l - tl {
                    Some((l - v, false, l - v + tl))
                } else if v > u + tu || u.is_infinite() {
                    None
                } else {
                    Some(((u - v).max(0.0), true, u + tu - v))
                }
            } else if v > u + tu {
                Some((v - u, true, v - u + tu))
            } else if v < l - tl || l.is_infinite() {
                None
            } else {
                Some(((v - l).max(0.0), false, v - l + tl))
            };
            if let Some((dist, to_upper, room)) = target {
                let r = rate.abs();
                theta_max = theta_max.min(room / r);
                candidates.push((slot, dist / r, r, to_upper));
            }
        }

        let chosen = if bland || !harris {
            let min_ratio = candidates.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
            candidates
                .iter()
                .filter(|c| c.1 <= min_ratio + 1e-12)
                .min_by(|a, b| {
                    if bland {
                        self.basic[a.0].cmp(&self.basic[b.0])
                    } else {
                        b.2.total_cmp(&a.2).then(a.0.cmp(&b.0))
                    }
                })
                .copied()
        } else {
            candidates
                .iter()
                .filter(|c| c.1 <= theta_max)
                .max_by(|a, b| a.2.total_cmp(&b.2).then(b.0.cmp(&a.0)))
                .copied()
        };

        match chosen {
            Some((_, ratio, _, _)) if range.is_finite() && range <= ratio => Step::Flip,
            Some((slot, ratio, _, to_upper)) => Step::Pivot {
                slot,
                theta: ratio.max(0.0),
                to_upper,
            },
            None if range.is_finite() => Step::Flip,
            None => Step::Unbounded,
        }
    }

    fn run(&mut self) -> Status {
        let max_iter = self.tol.max_iter.unwrap_or(50 * (self.n + self.m) + 10_000);
        let mut degenerate_run = 0usize;
        let mut bland = false;
        let mut verified = false;
        let mut was_phase1 = false;
        let mut reentries = 0usize;
        let mut harris = true;
        loop {
            if self.etas.len() >= REFACTOR_INTERVAL {
                self.refactor();
                self.recompute_basic_values();
            }
            let (phase1, cb) = self.phase_costs();
            if phase1 && !was_phase1 && self.iterations > 0 {
                // Feasibility lost again: drop the tolerance-based ratio test.
                reentries += 1;
                if reentries > REENTRY_LIMIT {
                    harris = false;
                }
            }
            was_phase1 = phase1;
            let y = self.btran(&cb);
            let Some((q, dq)) = self.price(phase1, &y, bland) else {
                if !verified && !self.etas.is_empty() {
                    self.refactor();
                    self.recompute_basic_values();
                    verified = true;
                    continue;
                }
                return if phase1 {
                    Status::Infeasible
                } else {
                    Status::Optimal
                };
            };
            verified = false;
            if self.iterations >= max_iter {
                return Status::IterLimit;
            }
            self.iterations += 1;

            let alpha = self.ftran_col(q);
            let dir = if dq < 0.0 { 1.0 } else { -1.0 };
            let step = self.ratio_test(q, dir, &alpha, bland, harris);
            let theta = match step {
                Step::Unbounded => {
                    if phase1 {
                        // A phase-one ray means the factorization has drifted.
                        self.refactor();
                        self.recompute_basic_values();
                        if self.iterations % 2 == 0 {
                            bland = true;
                        }
                        continue;
                    }
                    return Status::Unbounded;
                }
                Step::Flip => {
                    let range = self.up[q] - self.lo[q];
                    for (slot, &a) in alpha.iter().enumerate() {
                        if a != 0.0 {
                            let j = self.basic[slot];
                            self.x[j] -= dir * a * range;
                        }
                    }
                    let (nb, v) = if dir > 0.0 {
                        (Nb::Upper, self.up[q])
                    } else {
                        (Nb::Lower, self.lo[q])
                    };
                    self.state[q] = State::Nonbasic(nb);
                    self.x[q] = v;
                    range
                }
                Step::Pivot {
                    slot,
                    theta,
                    to_upper,
                } => {
                    for (s, &a) in alpha.iter().enumerate() {
                        if a != 0.0 {
                            let j = self.basic[s];
                            self.x[j] -= dir * a * theta;
                        }
                    }
                    self.x[q] += dir * theta;
                    let leaving = self.basic[slot];
                    let (nb, v) = if to_upper {
                        (Nb::Upper, self.up[leaving])
                    } else {
                        (Nb::Lower, self.lo[leaving])
                    };
                    self.state[leaving] = State::Nonbasic(nb);
                    self.x[leaving] = v;
                    self.state[q] = State::Basic(slot);
                    self.basic[slot] = q;
                    let entries = alpha
                        .iter()
                        .enumerate()
                        .filter(|&(s, a)| s != slot && *a != 0.0)
                        .map(|(s, &a)| (s, a))
                        .collect();
                    self.etas.push(Eta {
                        slot,
                        pivot: alpha[slot],
                        entries,
                    });
                    theta
                }
            };
            if theta <= 1e-12 {
                degenerate_run += 1;
                if degenerate_run > self.tol.stall_threshold {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
                bland = false;
            }
        }
    }

    pub(crate) fn solve(mut self, warm: Option<&Basis>) -> LpSolution {
        let ok = warm.map(|b| self.warm_start(b)).unwrap_or(false);
        if !ok {
            self.cold_start();
        }
        self.refactor();
        self.recompute_basic_values();
        let status = self.run();
        if status != Status::Optimal {
            return LpSolution::failed(status, self.iterations, self.n, self.m);
        }

        let cb: Vec<f64> = self.basic.iter().map(|&j| self.cost[j]).collect();
        let y = self.btran(&cb);
        let duals: Vec<f64> = y.iter().map(|v| -v).collect();
        let p = self.problem;
        let primal: Vec<f64> = self.x[..self.n].to_vec();
        let reduced_costs: Vec<f64> = (0..self.n)
            .map(|j| p.obj[j] - self.col_dot(j, &duals))
            .collect();
        let to_status = |s: State| match s {
            State::Basic(_) => VarStatus::Basic,
            State::Nonbasic(Nb::Lower) => VarStatus::AtLower,
            State::Nonbasic(Nb::Upper) => VarStatus::AtUpper,
            State::Nonbasic(Nb::Free) => VarStatus::Free,
        };
        let basis = Basis {
            cols: self.state[..self.n].iter().map(|&s| to_status(s)).collect(),
            rows: self.state[self.n..].iter().map(|&s| to_status(s)).collect(),
        };
        LpSolution {
            status,
            objective: p.evaluate(&primal),
            primal,
            duals,
            reduced_costs,
            iterations: self.iterations,
            basis: Some(basis),
        }
    }
}
