//! Desk-scale ground truth: the extensive model solved directly, plus the
//! solution-level complementarity and MIP checks behind the binary
//! relaxation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{self, LpSolution, Status, Tolerances};
use crate::scenario::{build_tree, ScenarioSet};
use crate::station::{ExtensiveIndex, Instance, LoadProfile, ModelOptions, StationSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadForm {
    Equality,
    Relaxed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    /// Refuse instances with more than this many leaf × quarter × step cells.
    pub budget: usize,
    /// `None` tries equality coverage and falls back to the relaxed form.
    pub load_form: Option<LoadForm>,
    pub uniform_da_delivery: bool,
    /// Also solve the mode-binary MIP.
    pub with_mip: bool,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            budget: 50_000,
            load_form: None,
            uniform_da_delivery: true,
            with_mip: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub max_row_violation: f64,
    pub max_battery_recursion: f64,
    pub max_tank_recursion: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub lp_objective: f64,
    pub mip_objective: Option<f64>,
    pub load_form: LoadForm,
    pub max_battery_product: f64,
    pub max_tank_product: f64,
    pub residuals: Residuals,
    pub lp_iterations: usize,
    pub rows: usize,
    pub cols: usize,
}

pub struct ExtensiveSolution {
    pub solution: LpSolution,
    pub index: ExtensiveIndex,
    pub report: OracleReport,
}

fn size_cells(inst: &Instance) -> usize {
    inst.tree.leaves.len() * inst.tree.quarters() * inst.grids.id.len().max(inst.grids.da.len())
}

fn products(inst: &Instance, sol: &LpSolution, index: &ExtensiveIndex) -> (f64, f64, Residuals) {
    let x = &sol.primal;
    let spec = &inst.spec;
    let (mut pb, mut ph) = (0.0f64, 0.0f64);
    let mut res = Residuals::default();
    for vars in &index.leaves {
        let (mut prev_b, mut prev_h) = (spec.b_l_init, spec.h_l_init);
        for q in vars {
            let v = |c: lp::Col| x[c.0];
            pb = pb.max(v(q.b_c) * v(q.b_d));
            ph = ph.max(v(q.h_c) * v(q.h_d));
            let rb = v(q.b_l) - prev_b - spec.eta_b * v(q.b_c) + v(q.b_d) / spec.eta_b;
            let rh = v(q.h_l) - prev_h - spec.eta_h * v(q.h_c) + v(q.h_d) / spec.eta_h;
            res.max_battery_recursion = res.max_battery_recursion.max(rb.abs());
            res.max_tank_recursion = res.max_tank_recursion.max(rh.abs());
            prev_b = v(q.b_l);
            prev_h = v(q.h_l);
        }
    }
    (pb, ph, res)
}

/// Solves the extensive model of `inst` with the LP solver.
pub fn solve_extensive(
    inst: &Instance,
    opts: &OracleOptions,
    tol: &Tolerances,
) -> Result<ExtensiveSolution> {
    let cells = size_cells(inst);
    if cells > opts.budget {
        return Err(Error::BudgetExceeded(format!(
            "{} leaves × {} quarters × {} steps = {cells} cells > budget {}",
            inst.tree.leaves.len(),
            inst.tree.quarters(),
            inst.grids.id.len(),
            opts.budget
        )));
    }
    let forms: &[LoadForm] = match opts.load_form {
        Some(LoadForm::Equality) => &[LoadForm::Equality],
        Some(LoadForm::Relaxed) => &[LoadForm::Relaxed],
        None => &[LoadForm::Equality, LoadForm::Relaxed],
    };
    let mut last_status = Status::Infeasible;
    for &form in forms {
        let mopts = ModelOptions {
            relaxed_load: form == LoadForm::Relaxed,
            uniform_da_delivery: opts.uniform_da_delivery,
            mode_binaries: false,
        };
        let (problem, index) = inst.extensive(&mopts)?;
        let solution = lp::solve(&problem, tol);
        if !solution.is_optimal() {
            last_status = solution.status;
            continue;
        }
        let (pb, ph, mut residuals) = products(inst, &solution, &index);
        residuals.max_row_violation = problem.max_violation(&solution.primal);
        let mip_objective = if opts.with_mip {
            Some(solve_mode_mip(inst, &mopts, tol)?)
        } else {
            None
        };
        let report = OracleReport {
            lp_objective: solution.objective,
            mip_objective,
            load_form: form,
            max_battery_product: pb,
            max_tank_product: ph,
            residuals,
            lp_iterations: solution.iterations,
            rows: problem.num_rows(),
            cols: problem.num_cols(),
        };
        return Ok(ExtensiveSolution {
            solution,
            index,
            report,
        });
    }
    Err(Error::not_optimal("extensive model", last_status))
}

fn solve_mode_mip(inst: &Instance, base: &ModelOptions, tol: &Tolerances) -> Result<f64> {
    let opts = ModelOptions {
        mode_binaries: true,
        ..*base
    };
    let (problem, index) = inst.extensive(&opts)?;
    let sol = lp::solve_mip(&problem, &index.binaries, tol);
    if !sol.is_optimal() {
        return Err(Error::not_optimal("mode-binary MIP", sol.status));
    }
    Ok(sol.objective)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub leaf: usize,
    pub quarter: usize,
    pub store: String,
    pub product: f64,
    /// Marginal value of grid energy in that quarter, EUR/kWh. Zero or
    /// negative means surplus had to be absorbed and cycling was free.
    pub energy_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheck {
    /// Both efficiencies strictly below one.
    pub precondition_met: bool,
    pub lp_objective: f64,
    pub mip_objective: f64,
    pub max_battery_product: f64,
    pub max_tank_product: f64,
    /// Worst first.
    pub violators: Vec<Violation>,
    pub holds: bool,
}

pub const COMPLEMENTARITY_TOL: f64 = 1e-6;

/// Checks charge/discharge complementarity at an optimal LP solution and
/// compares its objective with the mode-binary MIP.
pub fn verify_lemma(
    inst: &Instance,
    opts: &ModelOptions,
    solution: &LpSolution,
    index: &ExtensiveIndex,
    tol: &Tolerances,
) -> Result<LemmaCheck> {
    if !solution.is_optimal() {
        return Err(Error::not_optimal("lemma check", solution.status));
    }
    let x = &solution.primal;
    let mut violators = Vec::new();
    let (mut pb, mut ph) = (0.0f64, 0.0f64);
    for (l, vars) in index.leaves.iter().enumerate() {
        for (t, q) in vars.iter().enumerate() {
            let b = x[q.b_c.0] * x[q.b_d.0];
            let h = x[q.h_c.0] * x[q.h_d.0];
            pb = pb.max(b);
            ph = ph.max(h);
            for (store, prod) in [("battery", b), ("tank", h)] {
                if prod > COMPLEMENTARITY_TOL {
                    violators.push(Violation {
                        leaf: l,
                        quarter: t,
                        store: store.into(),
                        product: prod,
                        energy_value: -solution.dual(q.balance),
                    });
                }
            }
        }
    }
    violators.sort_by(|a, b| b.product.total_cmp(&a.product));
    let mip_objective = solve_mode_mip(inst, opts, tol)?;
    let lp_objective = solution.objective;
    let objective_match =
        (lp_objective - mip_objective).abs() <= 1e-6 * lp_objective.abs().max(1.0);
    Ok(LemmaCheck {
        precondition_met: inst.spec.eta_b < 1.0 && inst.spec.eta_h < 1.0,
        lp_objective,
        mip_objective,
        max_battery_product: pb,
        max_tank_product: ph,
        holds: violators.is_empty() && objective_match,
        violators,
    })
}

/// Seeded single-leaf instance with efficiencies in `[0.8, 0.95]`, prices
/// uniform in `[20, 200]` EUR/MWh and loads the electrolyzer can always
/// cover.
pub fn random_lemma_instance(seed: u64, hours: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = StationSpec {
        eta_b: rng.random_range(0.8..=0.95),
        eta_h: rng.random_range(0.8..=0.95),
        ..StationSpec::default()
    };
    let quarters = 4 * hours;
    let da: Vec<f64> = (0..hours).map(|_| rng.random_range(20.0..200.0)).collect();
    let id: Vec<f64> = (0..quarters)
        .map(|_| rng.random_range(20.0..200.0))
        .collect();
    let h_cap = 0.9 * spec.electrolyzer_kg_per_step();
    let l_e: Vec<f64> = (0..quarters).map(|_| rng.random_range(0.0..30.0)).collect();
    let l_h: Vec<f64> = (0..quarters)
        .map(|_| rng.random_range(0.0..h_cap))
        .collect();
    let tree = build_tree(
        &ScenarioSet::deterministic(da),
        &ScenarioSet::deterministic(id),
    )
    .expect("consistent lengths");
    Instance::new(spec, LoadProfile { l_e, l_h }, tree, 3).expect("valid instance")
}
