//! Stagewise decomposition of the fixed-DA second stage.
//!
//! Every DA scenario ("group") has its own sub-problem: its leaves share
//! the ID curves and nothing else. The horizon is split into `Q` intervals;
//! the state passed between intervals is the battery and tank level of every
//! leaf in the group. Stage problems maximize immediate profit plus a
//! future-value variable `Θ` bounded by cuts
//!
//! ```text
//! Θ ≤ a + Σ β_b·b_l(t_f) + Σ β_h·h_l(t_f) + Σ γ_t·m̄_d(t)      (t after the interval)
//! ```
//!
//! The `γ` terms keep cuts valid when the DA schedule changes between
//! Benders iterations.

use std::ops::Range;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{self, Basis, Col, LpProblem, Relation, RowId, Tolerances};
use crate::station::{
    add_id_curve, add_leaf_quarters, import_limit, Instance, MdSource, ModelOptions, QuarterValues,
    QuarterVars, StateSource,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SddpConfig {
    /// Number of intervals `Q`.
    pub intervals: usize,
    /// Forward samples `M` per iteration (capped at the number of groups).
    pub samples: usize,
    /// Iteration limit `K`.
    pub max_iter: usize,
    /// Absolute tolerance of the deterministic stopping test.
    pub tol: f64,
    pub seed: u64,
}

impl Default for SddpConfig {
    fn default() -> Self {
        Self {
            intervals: 8,
            samples: 5,
            max_iter: 30,
            tol: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IntervalPartition {
    quarters: usize,
    intervals: usize,
}

impl IntervalPartition {
    pub fn new(quarters: usize, intervals: usize) -> Result<Self> {
        if intervals == 0 || quarters % intervals != 0 {
            return Err(Error::InvalidArgument(format!(
                "Q = {intervals} does not divide {quarters} quarters"
            )));
        }
        Ok(Self {
            quarters,
            intervals,
        })
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn quarters_per_interval(&self) -> usize {
        self.quarters / self.intervals
    }

    pub fn range(&self, q: usize) -> Range<usize> {
        let n = self.quarters_per_interval();
        q * n..(q + 1) * n
    }

    pub fn t_in(&self, q: usize) -> usize {
        self.range(q).start
    }

    pub fn t_f(&self, q: usize) -> usize {
        self.range(q).end - 1
    }
}

/// Upper bound on the value after interval `interval`, in max form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SddpCut {
    pub interval: usize,
    pub intercept: f64,
    /// Per leaf of the group, EUR/kWh.
    pub slope_b: Vec<f64>,
    /// Per leaf of the group, EUR/kg.
    pub slope_h: Vec<f64>,
    /// Per quarter after the interval, EUR/kWh of fixed DA purchase.
    pub slope_md: Vec<f64>,
    pub iteration: usize,
}

impl SddpCut {
    pub fn eval(&self, b: &[f64], h: &[f64], m_d_later: &[f64]) -> f64 {
        let dot = |s: &[f64], x: &[f64]| s.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        self.intercept
            + dot(&self.slope_b, b)
            + dot(&self.slope_h, h)
            + dot(&self.slope_md, m_d_later)
    }
}

/// Cut pools and warm-start bases, `[group][interval]`. Persists across
/// Benders iterations.
#[derive(Clone, Debug, Default)]
pub struct SddpState {
    pub pools: Vec<Vec<Vec<SddpCut>>>,
    bases: Vec<Vec<Option<Basis>>>,
    pub iterations: usize,
}

impl SddpState {
    pub fn new(groups: usize, intervals: usize) -> Self {
        Self {
            pools: vec![vec![Vec::new(); intervals]; groups],
            bases: vec![vec![None; intervals]; groups],
            iterations: 0,
        }
    }

    pub fn cut_count(&self) -> usize {
        self.pools.iter().flatten().map(Vec::len).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopStats {
    pub zbar: f64,
    pub z: f64,
    pub sigma: f64,
    pub samples: usize,
}

/// Statistical stop: `z − 1.96σ ≤ z̄ ≤ z + 1.96σ`. Falls back to
/// `|z̄ − z| ≤ tol` with a single sample or zero spread.
pub fn check_convergence(stats: &StopStats, tol: f64) -> bool {
    if stats.samples >= 2 && stats.sigma > 0.0 {
        let half = 1.96 * stats.sigma;
        stats.z - half <= stats.zbar && stats.zbar <= stats.z + half
    } else {
        (stats.zbar - stats.z).abs() <= tol
    }
}

pub struct StageIndex {
    /// `[leaf of group][quarter of interval]`
    pub vars: Vec<Vec<QuarterVars>>,
    /// `[quarter of interval][step]`
    pub rho: Vec<Vec<Col>>,
    pub theta: Option<Col>,
    pub cut_rows: Vec<RowId>,
    range: Range<usize>,
}

/// One interval of one group's sub-problem.
pub struct StageSpec<'a> {
    pub inst: &'a Instance,
    pub group: usize,
    pub partition: IntervalPartition,
    pub interval: usize,
    /// Fixed DA purchases of the group, whole horizon.
    pub m_d: &'a [f64],
}

impl StageSpec<'_> {
    fn leaves(&self) -> Vec<usize> {
        self.inst.tree.group(self.group).collect()
    }

    fn is_last(&self) -> bool {
        self.interval + 1 == self.partition.intervals()
    }

    /// Largest possible value of everything after this interval.
    fn theta_cap(&self) -> f64 {
        let tree = &self.inst.tree;
        let start = self.partition.t_f(self.interval) + 1;
        let mut cap = 0.0;
        for l in self.leaves() {
            let leaf = &tree.leaves[l];
            let prices = tree.leaf_id_prices(leaf);
            for (t, &price) in prices.iter().enumerate().skip(start) {
                let u = import_limit(&self.inst.spec, &self.inst.loads, t);
                cap += leaf.probability * (-price).max(0.0) / 1000.0 * u;
            }
        }
        cap
    }
}

pub fn build_stage_problem(
    stage: &StageSpec,
    incoming: &[(f64, f64)],
    cuts: &[SddpCut],
) -> Result<(LpProblem, StageIndex)> {
    let inst = stage.inst;
    let tree = &inst.tree;
    let leaves = stage.leaves();
    if incoming.len() != leaves.len() {
        return Err(Error::Shape(format!(
            "{} incoming states for {} leaves",
            incoming.len(),
            leaves.len()
        )));
    }
    let range = stage.partition.range(stage.interval);
    let opts = ModelOptions {
        relaxed_load: true,
        ..ModelOptions::default()
    };
    let mut p = LpProblem::new();
    let vars: Vec<Vec<QuarterVars>> = leaves
        .iter()
        .zip(incoming)
        .map(|(&l, &(b, h))| {
            let leaf = &tree.leaves[l];
            add_leaf_quarters(
                &mut p,
                &inst.spec,
                &inst.loads,
                l,
                leaf.probability,
                tree.leaf_id_prices(leaf),
                range.clone(),
                &|t| MdSource::Fixed(stage.m_d[t]),
                StateSource::Fixed(b, h),
                &opts,
            )
        })
        .collect();
    let mut rho = Vec::with_capacity(range.len());
    for (k, t) in range.clone().enumerate() {
        let purchases: Vec<(Col, f64)> = leaves
            .iter()
            .zip(&vars)
            .map(|(&l, v)| (v[k].m_i, tree.leaf_id_prices(&tree.leaves[l])[t]))
            .collect();
        rho.push(add_id_curve(
            &mut p,
            &inst.spec,
            &inst.loads,
            stage.group,
            t,
            &inst.grids.id,
            &purchases,
        )?);
    }

    let mut theta = None;
    let mut cut_rows = Vec::new();
    if !stage.is_last() {
        let th = p.add_col("theta", 1.0, f64::NEG_INFINITY, stage.theta_cap());
        let later = &stage.m_d[range.end..];
        for (j, cut) in cuts.iter().enumerate() {
            let mut terms = vec![(th, 1.0)];
            for (v, (&sb, &sh)) in vars.iter().zip(cut.slope_b.iter().zip(&cut.slope_h)) {
                let last = v.last().expect("non-empty interval");
                terms.push((last.b_l, -sb));
                terms.push((last.h_l, -sh));
            }
            let rhs = cut.intercept
                + cut
                    .slope_md
                    .iter()
                    .zip(later)
                    .map(|(g, m)| g * m)
                    .sum::<f64>();
            cut_rows.push(p.add_row(format!("cut{j}"), &terms, Relation::Le, rhs));
        }
        theta = Some(th);
    }
    Ok((
        p,
        StageIndex {
            vars,
            rho,
            theta,
            cut_rows,
            range,
        },
    ))
}

#[derive(Clone, Debug)]
pub struct StageOutcome {
    /// Immediate value plus `Θ`.
    pub value: f64,
    pub immediate: f64,
    /// Levels at the end of the interval, per leaf.
    pub outgoing: Vec<(f64, f64)>,
    /// Duals of the pinning rows, per leaf.
    pub tau: Vec<(f64, f64)>,
    /// `∂value/∂m̄_d(t)` for `t` from the start of the interval to the horizon.
    pub md_slopes: Vec<f64>,
    pub schedule: Vec<Vec<QuarterValues>>,
    /// `[quarter of interval][step]`
    pub rho: Vec<Vec<f64>>,
    pub basis: Option<Basis>,
}

fn clip_state(v: f64, lo: f64, hi: f64, what: &str) -> Result<f64> {
    let slack = 1e-9 * lo.abs().max(hi.abs()).max(1.0);
    if v < lo - slack || v > hi + slack {
        return Err(Error::ModelBuild(format!(
            "{what} level {v} outside [{lo}, {hi}]"
        )));
    }
    Ok(v.clamp(lo, hi))
}

pub fn solve_stage(
    stage: &StageSpec,
    incoming: &[(f64, f64)],
    cuts: &[SddpCut],
    warm: Option<&Basis>,
    tol: &Tolerances,
) -> Result<StageOutcome> {
    let (p, idx) = build_stage_problem(stage, incoming, cuts)?;
    let sol = lp::solve_with_basis(&p, tol, warm);
    if !sol.is_optimal() {
        return Err(Error::not_optimal(
            format!(
                "stage problem (group {}, interval {})",
                stage.group, stage.interval
            ),
            sol.status,
        ));
    }
    let spec = &stage.inst.spec;
    let x = &sol.primal;
    let theta_val = idx.theta.map(|c| x[c.0]).unwrap_or(0.0);
    let mut outgoing = Vec::with_capacity(idx.vars.len());
    let mut tau = Vec::with_capacity(idx.vars.len());
    for v in &idx.vars {
        let last = v.last().expect("non-empty interval");
        outgoing.push((
            clip_state(x[last.b_l.0], spec.b_l_min, spec.b_l_max, "battery")?,
            clip_state(x[last.h_l.0], spec.h_l_min, spec.h_l_max, "tank")?,
        ));
        tau.push((sol.dual(v[0].battery), sol.dual(v[0].tank)));
    }
    let horizon = stage.m_d.len();
    let mut md_slopes = vec![0.0; horizon - idx.range.start];
    for v in &idx.vars {
        for (k, q) in v.iter().enumerate() {
            md_slopes[k] -= sol.dual(q.balance);
        }
    }
    let n_in = idx.range.len();
    for (row, cut) in idx.cut_rows.iter().zip(cuts) {
        let y = sol.dual(*row);
        if y != 0.0 {
            for (k, g) in cut.slope_md.iter().enumerate() {
                md_slopes[n_in + k] += y * g;
            }
        }
    }
    let schedule = idx
        .vars
        .iter()
        .map(|v| {
            v.iter()
                .zip(idx.range.clone())
                .map(|(q, t)| q.read(x, stage.m_d[t]))
                .collect()
        })
        .collect();
    let rho = idx
        .rho
        .iter()
        .map(|cols| cols.iter().map(|c| x[c.0]).collect())
        .collect();
    Ok(StageOutcome {
        value: sol.objective,
        immediate: sol.objective - theta_val,
        outgoing,
        tau,
        md_slopes,
        schedule,
        rho,
        basis: sol.basis,
    })
}

/// Result of one forward pass through a group.
#[derive(Clone, Debug)]
pub struct Trajectory {
    /// Incoming state of every interval.
    pub incoming: Vec<Vec<(f64, f64)>>,
    pub stages: Vec<StageOutcome>,
}

impl Trajectory {
    pub fn realized(&self) -> f64 {
        self.stages.iter().map(|s| s.immediate).sum()
    }
}

struct Group<'a> {
    inst: &'a Instance,
    group: usize,
    partition: IntervalPartition,
    m_d: &'a [f64],
    tol: Tolerances,
}

impl Group<'_> {
    fn stage(&self, q: usize) -> StageSpec<'_> {
        StageSpec {
            inst: self.inst,
            group: self.group,
            partition: self.partition,
            interval: q,
            m_d: self.m_d,
        }
    }

    fn initial(&self) -> Vec<(f64, f64)> {
        let s = &self.inst.spec;
        vec![(s.b_l_init, s.h_l_init); self.inst.tree.group(self.group).count()]
    }

    fn forward(&self, pools: &[Vec<SddpCut>], bases: &mut [Option<Basis>]) -> Result<Trajectory> {
        let mut state = self.initial();
        let mut incoming = Vec::new();
        let mut stages = Vec::new();
        for q in 0..self.partition.intervals() {
            let out = solve_stage(
                &self.stage(q),
                &state,
                &pools[q],
                bases[q].as_ref(),
                &self.tol,
            )?;
            incoming.push(state);
            state = out.outgoing.clone();
            bases[q] = out.basis.clone();
            stages.push(out);
        }
        Ok(Trajectory { incoming, stages })
    }

    fn backward(
        &self,
        traj: &Trajectory,
        pools: &mut [Vec<SddpCut>],
        bases: &mut [Option<Basis>],
        iteration: usize,
    ) -> Result<()> {
        for q in (1..self.partition.intervals()).rev() {
            let s = &traj.incoming[q];
            let out = solve_stage(&self.stage(q), s, &pools[q], bases[q].as_ref(), &self.tol)?;
            let t_in = self.partition.t_in(q);
            let mut intercept = out.value;
            for (&(b, h), &(tb, th)) in s.iter().zip(&out.tau) {
                intercept -= tb * b + th * h;
            }
            for (g, m) in out.md_slopes.iter().zip(&self.m_d[t_in..]) {
                intercept -= g * m;
            }
            pools[q - 1].push(SddpCut {
                interval: q - 1,
                intercept,
                slope_b: out.tau.iter().map(|t| t.0).collect(),
                slope_h: out.tau.iter().map(|t| t.1).collect(),
                slope_md: out.md_slopes.clone(),
                iteration,
            });
            bases[q] = out.basis;
        }
        Ok(())
    }

    fn first_stage(
        &self,
        pools: &[Vec<SddpCut>],
        bases: &mut [Option<Basis>],
    ) -> Result<StageOutcome> {
        let out = solve_stage(
            &self.stage(0),
            &self.initial(),
            &pools[0],
            bases[0].as_ref(),
            &self.tol,
        )?;
        bases[0] = out.basis.clone();
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub benders_iter: usize,
    pub sddp_iter: usize,
    pub sample: usize,
    pub zbar: f64,
    pub zlower: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug)]
pub struct GroupResult {
    /// Upper bound `V̂` of the group's value at the fixed DA schedule.
    pub value_hat: f64,
    /// `∂V̂/∂m̄_d(t)` for every quarter.
    pub md_slopes: Vec<f64>,
    /// Value of the final forward-pass policy.
    pub realized: f64,
    pub trajectory: Trajectory,
}

#[derive(Clone, Debug)]
pub struct SddpResult {
    pub groups: Vec<GroupResult>,
    pub zbar: f64,
    pub z: f64,
    pub stats: Vec<StopStats>,
    pub iterations: usize,
    pub converged: bool,
}

/// Runs SDDP for every group at fixed DA purchases `m_d[group][quarter]`.
pub fn run(
    inst: &Instance,
    m_d: &[Vec<f64>],
    state: &mut SddpState,
    cfg: &SddpConfig,
    tol: &Tolerances,
    benders_iter: usize,
    trace: &mut Vec<TraceRow>,
) -> Result<SddpResult> {
    let partition = IntervalPartition::new(inst.tree.quarters(), cfg.intervals)?;
    let n_groups = inst.tree.da.len();
    if m_d.len() != n_groups || state.pools.len() != n_groups {
        return Err(Error::Shape(format!(
            "DA schedule for {} groups, tree has {n_groups}",
            m_d.len()
        )));
    }
    let groups: Vec<Group> = (0..n_groups)
        .map(|g| Group {
            inst,
            group: g,
            partition,
            m_d: &m_d[g],
            tol: *tol,
        })
        .collect();
    let samples = cfg.samples.clamp(1, n_groups);
    let mut rng = ChaCha8Rng::seed_from_u64(
        cfg.seed ^ (benders_iter as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );
    let mut stats = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iter.max(1) {
        iterations += 1;
        state.iterations += 1;
        let iteration = state.iterations;
        let mut picked: Vec<usize> = sample(&mut rng, n_groups, samples).into_vec();
        picked.sort_unstable();

        let mut work: Vec<(usize, Vec<Vec<SddpCut>>, Vec<Option<Basis>>)> = picked
            .iter()
            .map(|&g| {
                (
                    g,
                    std::mem::take(&mut state.pools[g]),
                    std::mem::take(&mut state.bases[g]),
                )
            })
            .collect();
        let realized: Vec<Result<f64>> = work
            .par_iter_mut()
            .map(|(g, pools, bases)| {
                let grp = &groups[*g];
                let traj = grp.forward(pools, bases)?;
                grp.backward(&traj, pools, bases, iteration)?;
                Ok(traj.realized())
            })
            .collect();
        for (g, pools, bases) in work {
            state.pools[g] = pools;
            state.bases[g] = bases;
        }
        let realized = realized.into_iter().collect::<Result<Vec<f64>>>()?;

        let zbar = first_stage_values(&groups, state)?
            .iter()
            .map(|o| o.value)
            .sum::<f64>();
        let estimates: Vec<f64> = realized.iter().map(|r| r * n_groups as f64).collect();
        let m = estimates.len() as f64;
        let z = estimates.iter().sum::<f64>() / m;
        let sigma = if estimates.len() >= 2 {
            let var = estimates.iter().map(|e| (e - z).powi(2)).sum::<f64>() / (m - 1.0);
            let fpc = (1.0 - m / n_groups as f64).max(0.0);
            (var / m * fpc).sqrt()
        } else {
            0.0
        };
        let st = StopStats {
            zbar,
            z,
            sigma,
            samples: estimates.len(),
        };
        for (&g, &e) in picked.iter().zip(&estimates) {
            trace.push(TraceRow {
                benders_iter,
                sddp_iter: iterations,
                sample: g,
                zbar,
                zlower: e,
                sigma,
            });
        }
        stats.push(st);
        if check_convergence(&st, cfg.tol) {
            converged = true;
            break;
        }
    }

    let firsts = first_stage_values(&groups, state)?;
    let mut results = Vec::with_capacity(n_groups);
    for (grp, first) in groups.iter().zip(firsts) {
        let (pools, bases) = (&state.pools[grp.group], &mut state.bases[grp.group]);
        let trajectory = grp.forward(pools, bases)?;
        results.push(GroupResult {
            value_hat: first.value,
            md_slopes: first.md_slopes,
            realized: trajectory.realized(),
            trajectory,
        });
    }
    let zbar = results.iter().map(|r| r.value_hat).sum();
    let z = results.iter().map(|r| r.realized).sum();
    Ok(SddpResult {
        groups: results,
        zbar,
        z,
        stats,
        iterations,
        converged,
    })
}

fn first_stage_values(groups: &[Group], state: &mut SddpState) -> Result<Vec<StageOutcome>> {
    groups
        .iter()
        .map(|grp| {
            let (pools, bases) = (&state.pools[grp.group], &mut state.bases[grp.group]);
            grp.first_stage(pools, bases)
        })
        .collect()
}
