use std::fmt;

use serde::{Deserialize, Serialize};

/// Column handle returned by [`LpProblem::add_col`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Col(pub usize);

/// Row handle returned by [`LpProblem::add_row`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RowId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        })
    }
}

#[derive(Clone, Debug)]
pub struct Row {
    pub coefs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
    pub name: String,
}

/// A sparse linear program in maximization form.
///
/// Columns carry an objective coefficient and a `[lower, upper]` box (either
/// side may be infinite). Rows are sparse `coefs · x (<=|=|>=) rhs`.
#[derive(Clone, Debug, Default)]
pub struct LpProblem {
    pub(crate) obj_offset: f64,
    pub(crate) obj: Vec<f64>,
    pub(crate) lower: Vec<f64>,
    pub(crate) upper: Vec<f64>,
    pub(crate) col_names: Vec<String>,
    pub(crate) rows: Vec<Row>,
}

impl LpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_cols(&self) -> usize {
        self.obj.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn add_col(&mut self, name: impl Into<String>, obj: f64, lower: f64, upper: f64) -> Col {
        debug_assert!(obj.is_finite(), "objective coefficient must be finite");
        debug_assert!(!lower.is_nan() && !upper.is_nan());
        self.obj.push(obj);
        self.lower.push(lower);
        self.upper.push(upper);
        self.col_names.push(name.into());
        Col(self.obj.len() - 1)
    }

    /// Adds a row; duplicate column entries are summed and zeros dropped.
    pub fn add_row(
        &mut self,
        name: impl Into<String>,
        coefs: &[(Col, f64)],
        relation: Relation,
        rhs: f64,
    ) -> RowId {
        let mut entries: Vec<(usize, f64)> = coefs.iter().map(|&(c, v)| (c.0, v)).collect();
        entries.sort_by_key(|e| e.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
        for (c, v) in entries {
            debug_assert!(c < self.obj.len(), "row references unknown column");
            debug_assert!(v.is_finite(), "row coefficient must be finite");
            match merged.last_mut() {
                Some(last) if last.0 == c => last.1 += v,
                _ => merged.push((c, v)),
            }
        }
        merged.retain(|e| e.1 != 0.0);
        self.rows.push(Row {
            coefs: merged,
            relation,
            rhs,
            name: name.into(),
        });
        RowId(self.rows.len() - 1)
    }

    pub fn set_objective_offset(&mut self, offset: f64) {
        self.obj_offset = offset;
    }

    pub fn objective_offset(&self) -> f64 {
        self.obj_offset
    }

    pub fn set_obj(&mut self, col: Col, value: f64) {
        self.obj[col.0] = value;
    }

    pub fn obj(&self, col: Col) -> f64 {
        self.obj[col.0]
    }

    pub fn set_bounds(&mut self, col: Col, lower: f64, upper: f64) {
        self.lower[col.0] = lower;
        self.upper[col.0] = upper;
    }

    pub fn bounds(&self, col: Col) -> (f64, f64) {
        (self.lower[col.0], self.upper[col.0])
    }

    pub fn set_rhs(&mut self, row: RowId, rhs: f64) {
        self.rows[row.0].rhs = rhs;
    }

    /// Adds `value` to the coefficient of `col` in `row`.
    pub fn add_coef(&mut self, row: RowId, col: Col, value: f64) {
        let coefs = &mut self.rows[row.0].coefs;
        match coefs.binary_search_by_key(&col.0, |e| e.0) {
            Ok(k) => coefs[k].1 += value,
            Err(k) => coefs.insert(k, (col.0, value)),
        }
    }

    pub fn row(&self, row: RowId) -> &Row {
        &self.rows[row.0]
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn col_name(&self, col: Col) -> &str {
        &self.col_names[col.0]
    }

    /// Objective value (including offset) of an arbitrary point.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.obj_offset + self.obj.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    /// Largest violation of any row or column bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0_f64;
        for (j, &v) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        for row in &self.rows {
            let act: f64 = row.coefs.iter().map(|&(c, a)| a * x[c]).sum();
            let viol = match row.relation {
                Relation::Le => act - row.rhs,
                Relation::Ge => row.rhs - act,
                Relation::Eq => (act - row.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        worst
    }

    /// Widest finite magnitude among right-hand sides and finite bounds.
    pub fn rhs_scale(&self) -> f64 {
        let rows = self.rows.iter().map(|r| r.rhs.abs());
        let bounds = self
            .lower
            .iter()
            .chain(self.upper.iter())
            .filter(|b| b.is_finite())
            .map(|b| b.abs());
        rows.chain(bounds).fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    IterLimit,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Position of a variable relative to the basis at termination.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarStatus {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free variable held at zero.
    Free,
}

/// Final basis of a solve: one status per column followed by one per row
/// (the row's logical variable). Usable as a warm start for a problem with
/// the same columns and the same or extra trailing rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Basis {
    pub cols: Vec<VarStatus>,
    pub rows: Vec<VarStatus>,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub status: Status,
    pub objective: f64,
    pub primal: Vec<f64>,
    /// Row duals, `∂objective/∂rhs`. For a maximization: `<=` rows are
    /// nonnegative, `>=` rows nonpositive, `=` rows free.
    pub duals: Vec<f64>,
    /// `c_j - a_jᵀ y` for every column.
    pub reduced_costs: Vec<f64>,
    pub iterations: usize,
    pub basis: Option<Basis>,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }

    pub fn value(&self, col: Col) -> f64 {
        self.primal[col.0]
    }

    pub fn dual(&self, row: RowId) -> f64 {
        self.duals[row.0]
    }

    pub(crate) fn failed(status: Status, iterations: usize, n: usize, m: usize) -> Self {
        Self {
            status,
            objective: f64::NAN,
            primal: vec![f64::NAN; n],
            duals: vec![f64::NAN; m],
            reduced_costs: vec![f64::NAN; n],
            iterations,
            basis: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    /// Bound and row feasibility tolerance, applied relative to `max(1, |value|)`.
    pub primal: f64,
    /// Reduced-cost optimality tolerance.
    pub dual: f64,
    /// Smallest pivot magnitude accepted by the ratio test.
    pub pivot: f64,
    pub max_iter: Option<usize>,
    /// Consecutive degenerate pivots before Bland's rule takes over.
    pub stall_threshold: usize,
    /// Branch-and-bound node budget for [`crate::lp::solve_mip`].
    pub max_nodes: usize,
    /// Absolute incumbent gap for branch and bound.
    pub mip_gap: f64,
    /// Integrality tolerance on binary columns.
    pub integrality: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            primal: 1e-9,
            dual: 1e-9,
            pivot: 1e-9,
            max_iter: None,
            stall_threshold: 60,
            max_nodes: 20_000,
            mip_gap: 1e-6,
            integrality: 1e-7,
        }
    }
}
