use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::curve::{BidCurve, Grids, PriceGrid};
use super::{import_limit, LoadProfile, StationSpec};
use crate::error::{Error, Result};
use crate::lp::{Col, LpProblem, LpSolution, Relation, RowId};
use crate::scenario::ScenarioTree;

pub const QUARTERS_PER_HOUR: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelOptions {
    /// `v_e + b_d >= l_e` instead of equality.
    pub relaxed_load: bool,
    /// Equal DA delivery in the four quarters of an hour.
    pub uniform_da_delivery: bool,
    /// Re-introduce the charge/discharge mode binaries (validation MIP only).
    pub mode_binaries: bool,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            relaxed_load: false,
            uniform_da_delivery: true,
            mode_binaries: false,
        }
    }
}

/// Where the DA purchase of a quarter enters the power balance.
#[derive(Clone, Copy, Debug)]
pub(crate) enum MdSource {
    Var(Col),
    Fixed(f64),
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum StateSource {
    Fixed(f64, f64),
}

#[derive(Clone, Debug)]
pub struct QuarterVars {
    pub m_i: Col,
    pub v_e: Col,
    pub v_h: Col,
    pub b_l: Col,
    pub b_c: Col,
    pub b_d: Col,
    pub e_p: Col,
    pub h_l: Col,
    pub h_c: Col,
    pub h_d: Col,
    pub u_b: Option<Col>,
    pub u_h: Option<Col>,
    pub balance: RowId,
    pub battery: RowId,
    pub tank: RowId,
}

#[derive(Clone, Debug)]
pub struct DaIndex {
    /// `[da scenario][quarter]`
    pub m_d: Vec<Vec<Col>>,
    /// `[hour][step]`
    pub rho_d: Vec<Vec<Col>>,
}

#[derive(Clone, Debug)]
pub struct ExtensiveIndex {
    pub da: DaIndex,
    /// `[leaf][quarter]`
    pub leaves: Vec<Vec<QuarterVars>>,
    /// `[da scenario][quarter][step]`
    pub rho_i: Vec<Vec<Vec<Col>>>,
    pub binaries: Vec<Col>,
    pub grids: Grids,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BidCurves {
    /// One per hour.
    pub da: Vec<BidCurve>,
    /// `[da scenario][quarter]`
    pub id: Vec<Vec<BidCurve>>,
}

impl BidCurves {
    pub fn all_non_increasing(&self) -> bool {
        self.da
            .iter()
            .chain(self.id.iter().flatten())
            .all(BidCurve::is_non_increasing)
    }
}

fn weights_for(grid: &PriceGrid, price: f64, what: &str) -> Result<(usize, f64)> {
    grid.weights(price).map_err(|_| {
        Error::ModelBuild(format!(
            "{what} price {price} EUR/MWh not covered by grid [{}, {}]",
            grid.lo(),
            grid.hi()
        ))
    })
}

fn add_link(
    p: &mut LpProblem,
    name: String,
    lhs: &[(Col, f64)],
    rho: &[Col],
    seg: (usize, f64),
) -> RowId {
    let (i, w) = seg;
    let mut terms = lhs.to_vec();
    terms.push((rho[i], -(1.0 - w)));
    terms.push((rho[i + 1], -w));
    p.add_row(name, &terms, Relation::Eq, 0.0)
}

fn add_monotone(p: &mut LpProblem, prefix: &str, rho: &[Col]) {
    for (i, w) in rho.windows(2).enumerate() {
        p.add_row(
            format!("{prefix}_mono{i}"),
            &[(w[1], 1.0), (w[0], -1.0)],
            Relation::Le,
            0.0,
        );
    }
}

/// DA purchases per (scenario, quarter), hourly DA curves, links and
/// monotonicity. Objective carries the expected DA cost.
pub(crate) fn add_da_block(
    p: &mut LpProblem,
    spec: &StationSpec,
    loads: &LoadProfile,
    tree: &ScenarioTree,
    grid: &PriceGrid,
    opts: &ModelOptions,
) -> Result<DaIndex> {
    let hours = tree.hours();
    let limits: Vec<f64> = (0..loads.quarters())
        .map(|t| import_limit(spec, loads, t))
        .collect();
    let rho_d: Vec<Vec<Col>> = (0..hours)
        .map(|h| {
            let cap: f64 = limits[h * QUARTERS_PER_HOUR..(h + 1) * QUARTERS_PER_HOUR]
                .iter()
                .sum();
            (0..grid.len())
                .map(|i| p.add_col(format!("rho_d_{h}_{i}"), 0.0, 0.0, cap))
                .collect()
        })
        .collect();
    for (h, rho) in rho_d.iter().enumerate() {
        add_monotone(p, &format!("da{h}"), rho);
    }
    let mut m_d = Vec::with_capacity(tree.da.len());
    for (g, (prices, &prob)) in tree
        .da
        .scenarios
        .iter()
        .zip(&tree.da.probabilities)
        .enumerate()
    {
        let cols: Vec<Col> = (0..loads.quarters())
            .map(|t| {
                let cost = prob * prices[t / QUARTERS_PER_HOUR] / 1000.0;
                p.add_col(format!("m_d_{g}_{t}"), -cost, 0.0, limits[t])
            })
            .collect();
        for h in 0..hours {
            let seg = weights_for(grid, prices[h], "day-ahead")?;
            let quarter_cols = &cols[h * QUARTERS_PER_HOUR..(h + 1) * QUARTERS_PER_HOUR];
            let lhs: Vec<(Col, f64)> = quarter_cols.iter().map(|&c| (c, 1.0)).collect();
            add_link(p, format!("da_link_{g}_{h}"), &lhs, &rho_d[h], seg);
            if opts.uniform_da_delivery {
                for (k, &c) in quarter_cols.iter().enumerate().skip(1) {
                    p.add_row(
                        format!("da_flat_{g}_{h}_{k}"),
                        &[(c, 1.0), (quarter_cols[0], -1.0)],
                        Relation::Eq,
                        0.0,
                    );
                }
            }
        }
        m_d.push(cols);
    }
    Ok(DaIndex { m_d, rho_d })
}

/// Operational block of one leaf over `quarters`. The first row of each
/// storage recursion has the incoming level as its right-hand side.
#[allow(clippy::too_many_arguments)]
pub(crate) fn add_leaf_quarters(
    p: &mut LpProblem,
    spec: &StationSpec,
    loads: &LoadProfile,
    leaf: usize,
    probability: f64,
    id_prices: &[f64],
    quarters: Range<usize>,
    md: &dyn Fn(usize) -> MdSource,
    incoming: StateSource,
    opts: &ModelOptions,
) -> Vec<QuarterVars> {
    let dt = spec.dt_hours;
    let StateSource::Fixed(b0, h0) = incoming;
    let mut out: Vec<QuarterVars> = Vec::with_capacity(quarters.len());
    for t in quarters {
        let n = |s: &str| format!("{s}_{leaf}_{t}");
        let limit = import_limit(spec, loads, t);
        let m_i = p.add_col(n("m_i"), -probability * id_prices[t] / 1000.0, 0.0, limit);
        let v_e = p.add_col(n("v_e"), 0.0, 0.0, limit);
        let v_h = p.add_col(n("v_h"), 0.0, 0.0, f64::INFINITY);
        let b_l = p.add_col(n("b_l"), 0.0, spec.b_l_min, spec.b_l_max);
        let b_c = p.add_col(n("b_c"), 0.0, 0.0, spec.b_c_max * dt);
        let b_d = p.add_col(n("b_d"), 0.0, 0.0, spec.b_d_max * dt);
        let e_p = p.add_col(n("e_p"), 0.0, spec.e_p_min * dt, spec.e_p_max * dt);
        let h_l = p.add_col(n("h_l"), 0.0, spec.h_l_min, spec.h_l_max);
        let h_c = p.add_col(n("h_c"), 0.0, 0.0, spec.h_c_max * dt);
        let h_d = p.add_col(n("h_d"), 0.0, 0.0, spec.h_d_max * dt);

        let mut bal = vec![(m_i, 1.0), (v_e, -1.0), (b_c, -1.0), (e_p, -1.0)];
        let rhs = match md(t) {
            MdSource::Var(c) => {
                bal.push((c, 1.0));
                0.0
            }
            MdSource::Fixed(v) => -v,
        };
        let balance = p.add_row(n("balance"), &bal, Relation::Eq, rhs);

        let mut batt = vec![(b_l, 1.0), (b_c, -spec.eta_b), (b_d, 1.0 / spec.eta_b)];
        let mut tank_terms = vec![(h_l, 1.0), (h_c, -spec.eta_h), (h_d, 1.0 / spec.eta_h)];
        let (b_rhs, h_rhs) = match out.last() {
            Some(prev) => {
                batt.push((prev.b_l, -1.0));
                tank_terms.push((prev.h_l, -1.0));
                (0.0, 0.0)
            }
            None => (b0, h0),
        };
        let battery = p.add_row(n("battery"), &batt, Relation::Eq, b_rhs);
        let tank = p.add_row(n("tank"), &tank_terms, Relation::Eq, h_rhs);
        p.add_row(
            n("electrolyzer"),
            &[(e_p, spec.eta_e / spec.hhv), (h_c, -1.0), (v_h, -1.0)],
            Relation::Eq,
            0.0,
        );
        let load_rel = if opts.relaxed_load {
            Relation::Ge
        } else {
            Relation::Eq
        };
        p.add_row(n("load"), &[(v_e, 1.0), (b_d, 1.0)], load_rel, loads.l_e[t]);
        p.add_row(
            n("hydrogen"),
            &[(v_h, 1.0), (h_d, 1.0)],
            Relation::Eq,
            loads.l_h[t],
        );

        let (mut u_b, mut u_h) = (None, None);
        if opts.mode_binaries {
            let ub = p.add_col(n("u_b"), 0.0, 0.0, 1.0);
            let uh = p.add_col(n("u_h"), 0.0, 0.0, 1.0);
            add_mode_rows(
                p,
                &n("bmode"),
                b_c,
                b_d,
                ub,
                spec.b_c_min * dt,
                spec.b_c_max * dt,
                spec.b_d_min * dt,
                spec.b_d_max * dt,
            );
            add_mode_rows(
                p,
                &n("hmode"),
                h_c,
                h_d,
                uh,
                spec.h_c_min * dt,
                spec.h_c_max * dt,
                spec.h_d_min * dt,
                spec.h_d_max * dt,
            );
            u_b = Some(ub);
            u_h = Some(uh);
        }

        out.push(QuarterVars {
            m_i,
            v_e,
            v_h,
            b_l,
            b_c,
            b_d,
            e_p,
            h_l,
            h_c,
            h_d,
            u_b,
            u_h,
            balance,
            battery,
            tank,
        });
    }
    out
}

/// `c_min u <= c <= c_max u` and `d_min (1-u) <= d <= d_max (1-u)`.
#[allow(clippy::too_many_arguments)]
fn add_mode_rows(
    p: &mut LpProblem,
    name: &str,
    c: Col,
    d: Col,
    u: Col,
    c_min: f64,
    c_max: f64,
    d_min: f64,
    d_max: f64,
) {
    p.add_row(
        format!("{name}_cmax"),
        &[(c, 1.0), (u, -c_max)],
        Relation::Le,
        0.0,
    );
    p.add_row(
        format!("{name}_cmin"),
        &[(c, 1.0), (u, -c_min)],
        Relation::Ge,
        0.0,
    );
    p.add_row(
        format!("{name}_dmax"),
        &[(d, 1.0), (u, d_max)],
        Relation::Le,
        d_max,
    );
    p.add_row(
        format!("{name}_dmin"),
        &[(d, 1.0), (u, d_min)],
        Relation::Ge,
        d_min,
    );
}

/// Quarter-hourly ID curve of one DA scenario, linked to the ID purchases of
/// every leaf in it.
pub(crate) fn add_id_curve(
    p: &mut LpProblem,
    spec: &StationSpec,
    loads: &LoadProfile,
    group: usize,
    t: usize,
    grid: &PriceGrid,
    purchases: &[(Col, f64)],
) -> Result<Vec<Col>> {
    let cap = import_limit(spec, loads, t);
    let rho: Vec<Col> = (0..grid.len())
        .map(|i| p.add_col(format!("rho_i_{group}_{t}_{i}"), 0.0, 0.0, cap))
        .collect();
    add_monotone(p, &format!("id{group}_{t}"), &rho);
    for (k, &(m_i, price)) in purchases.iter().enumerate() {
        let seg = weights_for(grid, price, "intraday")?;
        add_link(
            p,
            format!("id_link_{group}_{t}_{k}"),
            &[(m_i, 1.0)],
            &rho,
            seg,
        );
    }
    Ok(rho)
}

/// The monolithic two-stage model over every leaf and quarter.
pub fn build_extensive_model(
    spec: &StationSpec,
    loads: &LoadProfile,
    tree: &ScenarioTree,
    grids: &Grids,
    opts: &ModelOptions,
) -> Result<(LpProblem, ExtensiveIndex)> {
    spec.validate()?;
    let quarters = tree.quarters();
    if loads.quarters() != quarters {
        return Err(Error::Shape(format!(
            "load profile has {} quarters, tree has {quarters}",
            loads.quarters()
        )));
    }
    let mut p = LpProblem::new();
    p.set_objective_offset(loads.revenue(spec));
    let da = add_da_block(&mut p, spec, loads, tree, &grids.da, opts)?;

    let mut leaves = Vec::with_capacity(tree.leaves.len());
    for (l, leaf) in tree.leaves.iter().enumerate() {
        let m_d = &da.m_d[leaf.da];
        let vars = add_leaf_quarters(
            &mut p,
            spec,
            loads,
            l,
            leaf.probability,
            tree.leaf_id_prices(leaf),
            0..quarters,
            &|t| MdSource::Var(m_d[t]),
            StateSource::Fixed(spec.b_l_init, spec.h_l_init),
            opts,
        );
        leaves.push(vars);
    }

    let mut rho_i = Vec::with_capacity(tree.da.len());
    for g in 0..tree.da.len() {
        let members: Vec<usize> = tree.group(g).collect();
        let mut per_t = Vec::with_capacity(quarters);
        for t in 0..quarters {
            let purchases: Vec<(Col, f64)> = members
                .iter()
                .map(|&l| (leaves[l][t].m_i, tree.leaf_id_prices(&tree.leaves[l])[t]))
                .collect();
            per_t.push(add_id_curve(
                &mut p, spec, loads, g, t, &grids.id, &purchases,
            )?);
        }
        rho_i.push(per_t);
    }

    let binaries = leaves
        .iter()
        .flatten()
        .flat_map(|q: &QuarterVars| q.u_b.into_iter().chain(q.u_h))
        .collect();
    Ok((
        p,
        ExtensiveIndex {
            da,
            leaves,
            rho_i,
            binaries,
            grids: grids.clone(),
        },
    ))
}

/// Bid curves read off an optimal extensive solution.
pub fn extract_bid_curves(solution: &LpSolution, index: &ExtensiveIndex) -> Result<BidCurves> {
    if !solution.is_optimal() {
        return Err(Error::not_optimal("bid-curve extraction", solution.status));
    }
    let read = |cols: &[Col]| {
        cols.iter()
            .map(|&c| solution.value(c))
            .collect::<Vec<f64>>()
    };
    let da = index
        .da
        .rho_d
        .iter()
        .map(|cols| BidCurve::from_solution(index.grids.da.clone(), &read(cols)))
        .collect::<Result<_>>()?;
    let id = index
        .rho_i
        .iter()
        .map(|per_t| {
            per_t
                .iter()
                .map(|cols| BidCurve::from_solution(index.grids.id.clone(), &read(cols)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(BidCurves { da, id })
}

/// Values of one leaf-quarter.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QuarterValues {
    pub m_d: f64,
    pub m_i: f64,
    pub v_e: f64,
    pub v_h: f64,
    pub b_l: f64,
    pub b_c: f64,
    pub b_d: f64,
    pub e_p: f64,
    pub h_l: f64,
    pub h_c: f64,
    pub h_d: f64,
}

impl QuarterVars {
    pub fn read(&self, x: &[f64], m_d: f64) -> QuarterValues {
        QuarterValues {
            m_d,
            m_i: x[self.m_i.0],
            v_e: x[self.v_e.0],
            v_h: x[self.v_h.0],
            b_l: x[self.b_l.0],
            b_c: x[self.b_c.0],
            b_d: x[self.b_d.0],
            e_p: x[self.e_p.0],
            h_l: x[self.h_l.0],
            h_c: x[self.h_c.0],
            h_d: x[self.h_d.0],
        }
    }
}

impl ExtensiveIndex {
    /// `[leaf][quarter]` schedule at `x`.
    pub fn schedule(&self, tree: &ScenarioTree, x: &[f64]) -> Vec<Vec<QuarterValues>> {
        self.leaves
            .iter()
            .zip(&tree.leaves)
            .map(|(vars, leaf)| {
                vars.iter()
                    .enumerate()
                    .map(|(t, q)| q.read(x, x[self.da.m_d[leaf.da][t].0]))
                    .collect()
            })
            .collect()
    }
}
