//! Outer loop: DA bids in the master, fixed-DA recourse through SDDP.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{self, Basis, Col, LpProblem, Relation, Tolerances};
use crate::sddp::{self, SddpConfig, SddpResult, SddpState, TraceRow};
use crate::station::{
    add_da_block, import_limit, BidCurve, BidCurves, DaIndex, Instance, ModelOptions,
    QuarterValues, QUARTERS_PER_HOUR,
};

/// `Z_g ≥ intercept + Σ_t slope_t (m̄_t − m_d(t))`: the expected ID cost of
/// DA scenario `group` is at least its value at `m̄` minus the linearized
/// saving from buying more day-ahead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BendersCut {
    pub group: usize,
    pub iteration: usize,
    pub intercept: f64,
    pub slope: Vec<f64>,
    pub m_bar: Vec<f64>,
}

impl BendersCut {
    pub fn eval(&self, m_d: &[f64]) -> f64 {
        self.intercept
            + self
                .slope
                .iter()
                .zip(self.m_bar.iter().zip(m_d))
                .map(|(s, (mb, m))| s * (mb - m))
                .sum::<f64>()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BendersConfig {
    /// Iteration limit `N`.
    pub max_iter: usize,
    /// Relative gap `ε`.
    pub eps: f64,
    /// In-out weight on the master solution; the sub-problem is queried at
    /// `α·x_master + (1 − α)·x_best`. `1.0` is the plain cutting-plane loop.
    pub stabilization: f64,
    pub uniform_da_delivery: bool,
    pub sddp: SddpConfig,
}

impl Default for BendersConfig {
    fn default() -> Self {
        Self {
            max_iter: 50,
            eps: 1e-4,
            stabilization: 0.3,
            uniform_da_delivery: true,
            sddp: SddpConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BendersState {
    pub cuts: Vec<BendersCut>,
    pub ub_history: Vec<f64>,
    pub lb_history: Vec<f64>,
    pub iteration: usize,
    pub eps: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub iter: usize,
    pub ub_eur: f64,
    pub lb_eur: f64,
    pub gap: f64,
}

pub struct MasterIndex {
    pub da: DaIndex,
    /// Expected ID cost per DA scenario.
    pub z: Vec<Col>,
}

/// Most the ID stage can earn per group (nonzero only with negative prices).
fn value_caps(inst: &Instance) -> Vec<f64> {
    let tree = &inst.tree;
    (0..tree.da.len())
        .map(|g| {
            tree.group(g)
                .map(|l| {
                    let leaf = &tree.leaves[l];
                    tree.leaf_id_prices(leaf)
                        .iter()
                        .enumerate()
                        .map(|(t, &p)| {
                            leaf.probability * (-p).max(0.0) / 1000.0
                                * import_limit(&inst.spec, &inst.loads, t)
                        })
                        .sum::<f64>()
                })
                .sum()
        })
        .collect()
}

/// DA bidding LP plus one cost variable per DA scenario bounded by `cuts`.
pub fn build_master(
    inst: &Instance,
    cuts: &[BendersCut],
    uniform_da_delivery: bool,
) -> Result<(LpProblem, MasterIndex)> {
    if inst.tree.da.is_empty() {
        return Err(Error::InvalidArgument("empty DA scenario set".into()));
    }
    let opts = ModelOptions {
        relaxed_load: true,
        uniform_da_delivery,
        mode_binaries: false,
    };
    let mut p = LpProblem::new();
    p.set_objective_offset(inst.revenue());
    let da = add_da_block(
        &mut p,
        &inst.spec,
        &inst.loads,
        &inst.tree,
        &inst.grids.da,
        &opts,
    )?;
    let z: Vec<Col> = value_caps(inst)
        .iter()
        .enumerate()
        .map(|(g, cap)| p.add_col(format!("z_{g}"), -1.0, -cap, f64::INFINITY))
        .collect();
    for (k, cut) in cuts.iter().enumerate() {
        let m_d = &da.m_d[cut.group];
        let mut terms = vec![(z[cut.group], 1.0)];
        terms.extend(m_d.iter().zip(&cut.slope).map(|(&c, &s)| (c, s)));
        let rhs = cut.intercept
            + cut
                .slope
                .iter()
                .zip(&cut.m_bar)
                .map(|(s, m)| s * m)
                .sum::<f64>();
        p.add_row(format!("bcut{k}_g{}", cut.group), &terms, Relation::Ge, rhs);
    }
    Ok((p, MasterIndex { da, z }))
}

#[derive(Clone, Debug)]
pub struct SubproblemValue {
    /// Expected ID cost per DA scenario (upper-bound approximation).
    pub cost: Vec<f64>,
    /// Pinning-row duals `μ(t, ξ1)` = `∂cost/∂m̄_d`, negated to profit units
    /// in the cuts.
    pub mu: Vec<Vec<f64>>,
    pub sddp: SddpResult,
}

/// Fixed-DA second stage evaluated by SDDP.
pub fn evaluate_subproblem(
    inst: &Instance,
    m_d_fixed: &[Vec<f64>],
    state: &mut SddpState,
    cfg: &SddpConfig,
    tol: &Tolerances,
    benders_iter: usize,
    trace: &mut Vec<TraceRow>,
) -> Result<SubproblemValue> {
    let res = sddp::run(inst, m_d_fixed, state, cfg, tol, benders_iter, trace)?;
    Ok(SubproblemValue {
        cost: res.groups.iter().map(|g| -g.value_hat).collect(),
        mu: res
            .groups
            .iter()
            .map(|g| g.md_slopes.iter().map(|s| -s).collect())
            .collect(),
        sddp: res,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScheduleRow {
    pub leaf: usize,
    pub da_scenario: usize,
    pub id_scenario: usize,
    pub quarter: usize,
    #[serde(flatten)]
    pub values: QuarterValues,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BendersSolution {
    pub curves: BidCurves,
    /// `[da scenario][quarter]`
    pub m_d: Vec<Vec<f64>>,
    pub schedule: Vec<ScheduleRow>,
    /// Best feasible objective.
    pub objective: f64,
    pub upper_bound: f64,
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
    pub sddp_converged_last: bool,
    pub trace: Vec<BoundRow>,
    pub sddp_trace: Vec<TraceRow>,
    /// Benders cuts in the master at termination.
    pub cut_pool: Vec<BendersCut>,
    /// Benders plus SDDP cuts.
    pub cuts: usize,
}

fn relative_gap(ub: f64, lb: f64) -> f64 {
    (ub - lb) / ub.abs().max(1.0)
}

fn da_cost(inst: &Instance, m_d: &[Vec<f64>]) -> f64 {
    let tree = &inst.tree;
    m_d.iter()
        .zip(tree.da.scenarios.iter().zip(&tree.da.probabilities))
        .map(|(m, (prices, &p))| {
            m.iter()
                .enumerate()
                .map(|(t, v)| p * v * prices[t / QUARTERS_PER_HOUR] / 1000.0)
                .sum::<f64>()
        })
        .sum()
}

fn assemble(
    inst: &Instance,
    rho_d: Vec<Vec<f64>>,
    sub: &SddpResult,
) -> Result<(BidCurves, Vec<ScheduleRow>)> {
    let da = rho_d
        .iter()
        .map(|v| BidCurve::from_solution(inst.grids.da.clone(), v))
        .collect::<Result<Vec<_>>>()?;
    let mut id = Vec::with_capacity(sub.groups.len());
    let mut schedule = Vec::new();
    for (g, res) in sub.groups.iter().enumerate() {
        let curves = res
            .trajectory
            .stages
            .iter()
            .flat_map(|s| s.rho.iter())
            .map(|v| BidCurve::from_solution(inst.grids.id.clone(), v))
            .collect::<Result<Vec<_>>>()?;
        id.push(curves);
        let leaves: Vec<usize> = inst.tree.group(g).collect();
        for (k, &l) in leaves.iter().enumerate() {
            let leaf = &inst.tree.leaves[l];
            let mut t = 0;
            for stage in &res.trajectory.stages {
                for values in &stage.schedule[k] {
                    schedule.push(ScheduleRow {
                        leaf: l,
                        da_scenario: leaf.da,
                        id_scenario: leaf.id,
                        quarter: t,
                        values: *values,
                    });
                    t += 1;
                }
            }
        }
    }
    schedule.sort_by_key(|r| (r.leaf, r.quarter));
    Ok((BidCurves { da, id }, schedule))
}

fn blend(alpha: f64, a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            x.iter()
                .zip(y)
                .map(|(u, v)| alpha * u + (1.0 - alpha) * v)
                .collect()
        })
        .collect()
}

fn cuts_at(sub: &SubproblemValue, m_bar: &[Vec<f64>], iteration: usize) -> Vec<BendersCut> {
    sub.cost
        .iter()
        .zip(&sub.mu)
        .enumerate()
        .map(|(g, (cost, mu))| BendersCut {
            group: g,
            iteration,
            intercept: *cost,
            // cost(m) ≥ cost(m̄) + μ·(m − m̄)  ⇔  intercept + slope·(m̄ − m) with slope = −μ
            slope: mu.iter().map(|v| -v).collect(),
            m_bar: m_bar[g].clone(),
        })
        .collect()
}

type Incumbent = (f64, Vec<Vec<f64>>, Vec<Vec<f64>>, SddpResult);

/// Hybrid Benders/SDDP. Stops when `UB − LB ≤ ε·max(1, |UB|)` or after
/// `N` iterations; returns the best feasible policy found.
pub fn run(inst: &Instance, cfg: &BendersConfig, tol: &Tolerances) -> Result<BendersSolution> {
    inst.validate()?;
    crate::station::check_coverable(&inst.spec, &inst.loads)?;
    if !(cfg.stabilization > 0.0 && cfg.stabilization <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "stabilization weight must lie in (0, 1], got {}",
            cfg.stabilization
        )));
    }
    let n_groups = inst.tree.da.len();
    let partition = sddp::IntervalPartition::new(inst.tree.quarters(), cfg.sddp.intervals)?;
    let mut sddp_state = SddpState::new(n_groups, partition.intervals());
    let mut state = BendersState {
        eps: cfg.eps,
        ..BendersState::default()
    };
    let mut trace = Vec::new();
    let mut sddp_trace = Vec::new();
    let mut basis: Option<Basis> = None;
    let mut best: Option<Incumbent> = None;
    let revenue = inst.revenue();
    let mut converged = false;
    let mut sddp_ok = false;

    while state.iteration < cfg.max_iter.max(1) {
        state.iteration += 1;
        let n = state.iteration;
        let (master, idx) = build_master(inst, &state.cuts, cfg.uniform_da_delivery)?;
        let sol = lp::solve_with_basis(&master, tol, basis.as_ref());
        if !sol.is_optimal() {
            return Err(Error::not_optimal("Benders master", sol.status));
        }
        basis = sol.basis.clone();
        let m_master: Vec<Vec<f64>> = idx
            .da
            .m_d
            .iter()
            .map(|cols| cols.iter().map(|&c| sol.value(c).max(0.0)).collect())
            .collect();
        let rho_master: Vec<Vec<f64>> = idx
            .da
            .rho_d
            .iter()
            .map(|cols| cols.iter().map(|&c| sol.value(c)).collect())
            .collect();
        let z_master: Vec<f64> = idx.z.iter().map(|&c| sol.value(c)).collect();
        let ub = state
            .ub_history
            .last()
            .map_or(sol.objective, |&u: &f64| u.min(sol.objective));

        let mut queries = Vec::with_capacity(2);
        match &best {
            Some((_, m_best, rho_best, _)) if cfg.stabilization < 1.0 => {
                let a = cfg.stabilization;
                queries.push((blend(a, &m_master, m_best), blend(a, &rho_master, rho_best)));
            }
            _ => {}
        }
        queries.push((m_master.clone(), rho_master));

        let mut new_cuts = Vec::new();
        for (k, (m_bar, rho_d)) in queries.into_iter().enumerate() {
            let last = k == 1 || best.is_none() || cfg.stabilization >= 1.0;
            let sub = evaluate_subproblem(
                inst,
                &m_bar,
                &mut sddp_state,
                &cfg.sddp,
                tol,
                n,
                &mut sddp_trace,
            )?;
            sddp_ok = sub.sddp.converged;
            let feasible = revenue - da_cost(inst, &m_bar) + sub.sddp.z;
            let cuts = cuts_at(&sub, &m_bar, n);
            if best.as_ref().is_none_or(|b| feasible > b.0) {
                best = Some((feasible, m_bar, rho_d, sub.sddp));
            }
            // A query that leaves the master point uncut is retried there.
            let separates = cuts.iter().any(|c| {
                let at = c.eval(&m_master[c.group]);
                at > z_master[c.group] + tol.primal * at.abs().max(1.0)
            });
            new_cuts.extend(cuts);
            if last || separates {
                break;
            }
        }

        let lb = best.as_ref().map(|b| b.0).unwrap();
        state.ub_history.push(ub);
        state.lb_history.push(lb);
        let gap = relative_gap(ub, lb);
        trace.push(BoundRow {
            iter: n,
            ub_eur: ub,
            lb_eur: lb,
            gap,
        });
        if gap <= cfg.eps {
            converged = true;
            break;
        }
        state.cuts.extend(new_cuts);
    }

    let (objective, m_d, rho_d, sub) = best.expect("at least one iteration");
    let (curves, schedule) = assemble(inst, rho_d, &sub)?;
    let last = *trace.last().expect("at least one iteration");
    Ok(BendersSolution {
        curves,
        m_d,
        schedule,
        objective,
        upper_bound: last.ub_eur,
        gap: last.gap,
        iterations: state.iteration,
        converged,
        sddp_converged_last: sddp_ok,
        trace,
        sddp_trace,
        cuts: state.cuts.len() + sddp_state.cut_count(),
        cut_pool: state.cuts,
    })
}
