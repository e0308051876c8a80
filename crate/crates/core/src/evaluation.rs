//! Out-of-sample evaluation of a solved bidding policy.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::benders::{self, BendersConfig, BendersSolution};
use crate::error::{Error, Result};
use crate::lp::{self, Tolerances};
use crate::market_data::{quantile_sorted, PriceMatrix};
use crate::scenario::{ScenarioSet, ScenarioTree};
use crate::station::{
    add_leaf_quarters, interpolate_volume, BidCurves, Grids, Instance, LoadProfile, MdSource,
    ModelOptions, QuarterValues, StateSource, StationSpec, QUARTERS_PER_HOUR,
};

/// Everything needed to act on fresh prices.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolicyBundle {
    pub spec: StationSpec,
    pub loads: LoadProfile,
    pub tree: ScenarioTree,
    pub curves: BidCurves,
    /// `[leaf][quarter]`
    pub schedule: Vec<Vec<QuarterValues>>,
    pub uniform_da_delivery: bool,
    /// In-sample expected profit, EUR.
    pub objective: f64,
}

impl PolicyBundle {
    pub fn from_solution(
        inst: &Instance,
        sol: &BendersSolution,
        uniform_da_delivery: bool,
    ) -> Self {
        let quarters = inst.tree.quarters();
        let mut schedule = vec![vec![QuarterValues::default(); quarters]; inst.tree.leaves.len()];
        for row in &sol.schedule {
            schedule[row.leaf][row.quarter] = row.values;
        }
        Self {
            spec: inst.spec.clone(),
            loads: inst.loads.clone(),
            tree: inst.tree.clone(),
            curves: sol.curves.clone(),
            schedule,
            uniform_da_delivery,
            objective: sol.objective,
        }
    }

    pub fn grids(&self) -> Grids {
        Grids {
            da: self.curves.da[0].grid.clone(),
            id: self.curves.id[0][0].grid.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, q) = (self.tree.hours(), self.tree.quarters());
        if self.curves.da.len() != h
            || self.curves.id.len() != self.tree.da.len()
            || self.curves.id.iter().any(|c| c.len() != q)
            || self.schedule.len() != self.tree.leaves.len()
            || self.loads.quarters() != q
        {
            return Err(Error::Shape(
                "policy bundle dimensions disagree with its scenario tree".into(),
            ));
        }
        if !self.curves.all_non_increasing() {
            return Err(Error::InvalidArgument(
                "policy contains an increasing bid curve".into(),
            ));
        }
        Ok(())
    }

    /// Profit of leaf `l` under its own prices and stored schedule.
    pub fn leaf_objective(&self, l: usize) -> f64 {
        let leaf = &self.tree.leaves[l];
        let da = self.tree.leaf_da_prices(leaf);
        let id = self.tree.leaf_id_prices(leaf);
        let cost: f64 = self.schedule[l]
            .iter()
            .enumerate()
            .map(|(t, v)| (v.m_d * da[t / QUARTERS_PER_HOUR] + v.m_i * id[t]) / 1000.0)
            .sum();
        self.loads.revenue(&self.spec) - cost
    }
}

/// Index of the scenario closest in Euclidean distance; ties go to the
/// lowest index.
pub fn nearest_scenario(drawn: &[f64], set: &ScenarioSet) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, s) in set.scenarios.iter().enumerate() {
        let d: f64 = s.iter().zip(drawn).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriceDraw {
    pub da: Vec<f64>,
    pub id: Vec<f64>,
}

/// Source of price draws. `draw` is the draw index and `rng` is seeded per
/// draw, so results do not depend on scheduling.
pub trait PriceSampler: Sync {
    fn sample(&self, draw: usize, rng: &mut ChaCha8Rng) -> PriceDraw;
}

/// Independent per-interval normals, truncated to `[lo, hi]` by rejection.
#[derive(Clone, Debug)]
pub struct NormalSampler {
    pub da: Vec<(f64, f64)>,
    pub id: Vec<(f64, f64)>,
    pub da_bounds: (f64, f64),
    pub id_bounds: (f64, f64),
}

fn column_stats(m: &PriceMatrix) -> Vec<(f64, f64)> {
    let n = m.num_rows() as f64;
    (0..m.num_cols())
        .map(|j| {
            let col = m.column(j);
            let mean = col.iter().sum::<f64>() / n;
            let var = if m.num_rows() > 1 {
                col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            (mean, var.sqrt())
        })
        .collect()
}

fn truncated(mean: f64, sd: f64, (lo, hi): (f64, f64), rng: &mut ChaCha8Rng) -> f64 {
    if sd > 0.0 {
        let normal = Normal::new(mean, sd).expect("finite parameters");
        for _ in 0..64 {
            let v = normal.sample(rng);
            if (lo..=hi).contains(&v) {
                return v;
            }
        }
    }
    mean.clamp(lo, hi)
}

impl NormalSampler {
    pub fn fit(da: &PriceMatrix, id: &PriceMatrix, grids: &Grids) -> Result<Self> {
        if da.num_rows() == 0 || id.num_rows() == 0 {
            return Err(Error::InsufficientData(
                "price sampler needs at least one day per market".into(),
            ));
        }
        Ok(Self {
            da: column_stats(da),
            id: column_stats(id),
            da_bounds: (grids.da.lo(), grids.da.hi()),
            id_bounds: (grids.id.lo(), grids.id.hi()),
        })
    }
}

impl PriceSampler for NormalSampler {
    fn sample(&self, _draw: usize, rng: &mut ChaCha8Rng) -> PriceDraw {
        PriceDraw {
            da: self
                .da
                .iter()
                .map(|&(m, s)| truncated(m, s, self.da_bounds, rng))
                .collect(),
            id: self
                .id
                .iter()
                .map(|&(m, s)| truncated(m, s, self.id_bounds, rng))
                .collect(),
        }
    }
}

/// Returns the prices of leaf `draw mod L` verbatim.
#[derive(Clone, Debug)]
pub struct ScenarioSampler {
    pub tree: ScenarioTree,
}

impl PriceSampler for ScenarioSampler {
    fn sample(&self, draw: usize, _rng: &mut ChaCha8Rng) -> PriceDraw {
        let leaf = &self.tree.leaves[draw % self.tree.leaves.len()];
        PriceDraw {
            da: self.tree.leaf_da_prices(leaf).to_vec(),
            id: self.tree.leaf_id_prices(leaf).to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Storage and electrolyzer re-optimized against the cleared volumes.
    #[default]
    Reoptimize,
    /// Nearest leaf's stored schedule replayed as is.
    Replay,
}

impl FromStr for EvalMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reoptimize" => Ok(Self::Reoptimize),
            "replay" => Ok(Self::Replay),
            _ => Err(Error::InvalidArgument(format!(
                "unknown evaluation mode `{s}`"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub n_draws: usize,
    pub seed: u64,
    pub mode: EvalMode,
    /// Price for energy missing after clearing, EUR/MWh. `None`: twice the
    /// highest grid price.
    pub shortfall_price: Option<f64>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            n_draws: 1000,
            seed: 0,
            mode: EvalMode::Reoptimize,
            shortfall_price: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrawRecord {
    pub draw: usize,
    pub profit: f64,
    pub da_scenario: usize,
    /// Nearest leaf (used by replay).
    pub leaf: usize,
    pub shortfall_kwh: f64,
    pub clipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Percentile {
    pub p: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub draws: Vec<DrawRecord>,
    pub empty: bool,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    pub std_error: f64,
    pub min: f64,
    pub max: f64,
    pub histogram: Vec<HistogramBin>,
    pub percentiles: Vec<Percentile>,
    /// Drawn prices moved onto the grid ends.
    pub clipped_prices: usize,
}

pub const HISTOGRAM_BINS: usize = 20;
pub const PERCENTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

impl EvalReport {
    pub fn from_draws(draws: Vec<DrawRecord>) -> Self {
        let clipped_prices = draws.iter().map(|d| d.clipped).sum();
        let n = draws.len();
        if n == 0 {
            return Self {
                draws,
                empty: true,
                mean: 0.0,
                variance: 0.0,
                std_error: 0.0,
                min: 0.0,
                max: 0.0,
                histogram: Vec::new(),
                percentiles: Vec::new(),
                clipped_prices,
            };
        }
        let profits: Vec<f64> = draws.iter().map(|d| d.profit).collect();
        let mean = profits.iter().sum::<f64>() / n as f64;
        let variance = if n > 1 {
            profits.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let mut sorted = profits.clone();
        sorted.sort_by(f64::total_cmp);
        let (min, max) = (sorted[0], sorted[n - 1]);
        let bins = if max > min { HISTOGRAM_BINS } else { 1 };
        let width = (max - min) / bins as f64;
        let mut histogram: Vec<HistogramBin> = (0..bins)
            .map(|b| HistogramBin {
                lo: min + width * b as f64,
                hi: if b + 1 == bins {
                    max
                } else {
                    min + width * (b + 1) as f64
                },
                count: 0,
            })
            .collect();
        for &p in &profits {
            let b = if width > 0.0 {
                (((p - min) / width) as usize).min(bins - 1)
            } else {
                0
            };
            histogram[b].count += 1;
        }
        let percentiles = PERCENTILES
            .iter()
            .map(|&p| Percentile {
                p,
                value: quantile_sorted(&sorted, p),
            })
            .collect();
        Self {
            draws,
            empty: false,
            mean,
            variance,
            std_error: (variance / n as f64).sqrt(),
            min,
            max,
            histogram,
            percentiles,
            clipped_prices,
        }
    }
}

fn clip_all(prices: &mut [f64], lo: f64, hi: f64) -> usize {
    let mut n = 0;
    for p in prices {
        if *p < lo || *p > hi {
            *p = p.clamp(lo, hi);
            n += 1;
        }
    }
    n
}

struct Settled {
    /// Storage cost of covering the cleared volumes, EUR (≤ 0).
    penalty: f64,
    shortfall_kwh: f64,
}

/// Best storage and electrolyzer use given fixed market volumes. Missing
/// energy is bought at `shortfall_price`; excess is curtailed.
fn reoptimize(
    spec: &StationSpec,
    loads: &LoadProfile,
    m_d: &[f64],
    m_i: &[f64],
    shortfall_price: f64,
    tol: &Tolerances,
) -> Result<Settled> {
    let quarters = loads.quarters();
    let zeros = vec![0.0; quarters];
    let mut p = lp::LpProblem::new();
    let vars = add_leaf_quarters(
        &mut p,
        spec,
        loads,
        0,
        0.0,
        &zeros,
        0..quarters,
        &|t| MdSource::Fixed(m_d[t]),
        StateSource::Fixed(spec.b_l_init, spec.h_l_init),
        &ModelOptions::default(),
    );
    let mut short = Vec::with_capacity(quarters);
    for (t, q) in vars.iter().enumerate() {
        p.set_bounds(q.m_i, m_i[t], m_i[t]);
        let s = p.add_col(
            format!("short_{t}"),
            -shortfall_price / 1000.0,
            0.0,
            f64::INFINITY,
        );
        let c = p.add_col(format!("curtail_{t}"), 0.0, 0.0, f64::INFINITY);
        p.add_coef(q.balance, s, 1.0);
        p.add_coef(q.balance, c, -1.0);
        short.push(s);
    }
    let sol = lp::solve(&p, tol);
    if !sol.is_optimal() {
        return Err(Error::not_optimal("evaluation re-optimization", sol.status));
    }
    Ok(Settled {
        penalty: sol.objective,
        shortfall_kwh: short.iter().map(|&c| sol.value(c)).sum(),
    })
}

/// Stored actions of `schedule` with the energy balance settled against the
/// cleared volumes: deficits bought at `shortfall_price`, surpluses spilled.
fn replay(schedule: &[QuarterValues], m_d: &[f64], m_i: &[f64], shortfall_price: f64) -> Settled {
    let mut shortfall = 0.0;
    let mut penalty = 0.0;
    for (t, v) in schedule.iter().enumerate() {
        let need = v.v_e + v.b_c + v.e_p - m_d[t] - m_i[t];
        if need > 0.0 {
            shortfall += need;
            penalty -= need * shortfall_price / 1000.0;
        }
    }
    Settled {
        penalty,
        shortfall_kwh: shortfall,
    }
}

fn evaluate_draw(
    policy: &PolicyBundle,
    grids: &Grids,
    draw: PriceDraw,
    index: usize,
    opts: &EvalOptions,
    shortfall_price: f64,
    tol: &Tolerances,
) -> Result<DrawRecord> {
    let tree = &policy.tree;
    let (hours, quarters) = (tree.hours(), tree.quarters());
    if draw.da.len() != hours || draw.id.len() != quarters {
        return Err(Error::Shape(format!(
            "sampler produced {}/{} prices, policy needs {hours}/{quarters}",
            draw.da.len(),
            draw.id.len()
        )));
    }
    // Curves are flat beyond their grids, so lookups use clipped prices;
    // settlement uses the drawn ones.
    let (mut da, mut id) = (draw.da.clone(), draw.id.clone());
    let clipped = clip_all(&mut da, grids.da.lo(), grids.da.hi())
        + clip_all(&mut id, grids.id.lo(), grids.id.hi());

    let g = nearest_scenario(&da, &tree.da);
    let members: Vec<usize> = tree.group(g).collect();
    let leaf = members[nearest_scenario(&id, &tree.id_sets[g])];

    let mut m_d = vec![0.0; quarters];
    for h in 0..hours {
        let volume = interpolate_volume(&policy.curves.da[h], da[h])?;
        let range = h * QUARTERS_PER_HOUR..(h + 1) * QUARTERS_PER_HOUR;
        let reference: Vec<f64> = policy.schedule[members[0]][range.clone()]
            .iter()
            .map(|v| v.m_d)
            .collect();
        let total: f64 = reference.iter().sum();
        for (k, t) in range.enumerate() {
            m_d[t] = if policy.uniform_da_delivery || total <= 0.0 {
                volume / QUARTERS_PER_HOUR as f64
            } else {
                volume * reference[k] / total
            };
        }
    }
    let m_i = (0..quarters)
        .map(|t| interpolate_volume(&policy.curves.id[g][t], id[t]))
        .collect::<Result<Vec<f64>>>()?;

    let market: f64 = (0..quarters)
        .map(|t| (m_d[t] * draw.da[t / QUARTERS_PER_HOUR] + m_i[t] * draw.id[t]) / 1000.0)
        .sum();
    let settled = match opts.mode {
        EvalMode::Reoptimize => reoptimize(
            &policy.spec,
            &policy.loads,
            &m_d,
            &m_i,
            shortfall_price,
            tol,
        )?,
        EvalMode::Replay => replay(&policy.schedule[leaf], &m_d, &m_i, shortfall_price),
    };
    Ok(DrawRecord {
        draw: index,
        profit: policy.loads.revenue(&policy.spec) - market + settled.penalty,
        da_scenario: g,
        leaf,
        shortfall_kwh: settled.shortfall_kwh,
        clipped,
    })
}

/// Clears the policy's curves at `n_draws` sampled price vectors and
/// settles each day.
pub fn monte_carlo(
    policy: &PolicyBundle,
    sampler: &dyn PriceSampler,
    opts: &EvalOptions,
    tol: &Tolerances,
) -> Result<EvalReport> {
    policy.validate()?;
    let grids = policy.grids();
    let shortfall_price = opts
        .shortfall_price
        .unwrap_or(2.0 * grids.id.hi().max(grids.da.hi()).max(0.0));
    let draws = (0..opts.n_draws)
        .into_par_iter()
        .map(|d| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(d as u64);
            let prices = sampler.sample(d, &mut rng);
            evaluate_draw(policy, &grids, prices, d, opts, shortfall_price, tol)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_draws(draws))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityParam {
    #[serde(rename = "l_e")]
    LE,
    #[serde(rename = "l_h")]
    LH,
    LambdaE,
    LambdaH,
    /// Every DA and ID scenario price.
    Prices,
}

impl SensitivityParam {
    pub const ALL: [SensitivityParam; 5] = [
        Self::LE,
        Self::LH,
        Self::LambdaE,
        Self::LambdaH,
        Self::Prices,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::LE => "l_e",
            Self::LH => "l_h",
            Self::LambdaE => "lambda_e",
            Self::LambdaH => "lambda_h",
            Self::Prices => "prices",
        }
    }

    /// Copy of `base` with the parameter multiplied by `k`.
    pub fn apply(self, base: &Instance, k: f64) -> Result<Instance> {
        let mut inst = base.clone();
        match self {
            Self::LE => inst.loads = inst.loads.scaled(k, 1.0),
            Self::LH => inst.loads = inst.loads.scaled(1.0, k),
            Self::LambdaE => inst.spec.lambda_e *= k,
            Self::LambdaH => inst.spec.lambda_h *= k,
            Self::Prices => {
                let scale =
                    |s: &mut ScenarioSet| s.scenarios.iter_mut().flatten().for_each(|p| *p *= k);
                scale(&mut inst.tree.da);
                inst.tree.id_sets.iter_mut().for_each(scale);
                inst.grids = Grids::from_tree(&inst.tree, base.grids.da.len())?;
            }
        }
        Ok(inst)
    }
}

impl fmt::Display for SensitivityParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SensitivityParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown sensitivity parameter `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityPoint {
    pub param: SensitivityParam,
    pub multiplier: f64,
    pub profit: Option<f64>,
    pub error: Option<String>,
}

/// Re-solves the bidding problem with one parameter scaled by each
/// multiplier. Failed points are recorded and the sweep continues.
pub fn sensitivity_sweep(
    base: &Instance,
    param: SensitivityParam,
    multipliers: &[f64],
    cfg: &BendersConfig,
    tol: &Tolerances,
) -> Result<Vec<SensitivityPoint>> {
    if let Some(m) = multipliers.iter().find(|m| !(**m > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "sensitivity multipliers must be positive, got {m}"
        )));
    }
    Ok(multipliers
        .iter()
        .map(|&k| {
            let res = param
                .apply(base, k)
                .and_then(|inst| benders::run(&inst, cfg, tol));
            let (profit, error) = match res {
                Ok(sol) => (Some(sol.objective), None),
                Err(e) => (None, Some(e.to_string())),
            };
            SensitivityPoint {
                param,
                multiplier: k,
                profit,
                error,
            }
        })
        .collect())
}

/// `n` evenly spaced multipliers from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRow {
    pub level: f64,
    pub mean: f64,
    pub variance: f64,
    pub in_sample: f64,
}

#[derive(Clone, Debug)]
pub struct ConfidenceStudy {
    pub rows: Vec<ConfidenceRow>,
    pub reports: Vec<EvalReport>,
}

pub const CONFIDENCE_LEVELS: [f64; 4] = [0.5, 0.6, 0.7, 0.8];

/// Trim, cluster, solve and evaluate at every confidence level. The
/// sampler is fitted to the untrimmed data at every level.
pub fn confidence_study(
    data: &crate::pipeline::Inputs,
    levels: &[f64],
    settings: &crate::pipeline::Settings,
    tol: &Tolerances,
) -> Result<ConfidenceStudy> {
    let mut rows = Vec::with_capacity(levels.len());
    let mut reports = Vec::with_capacity(levels.len());
    for &level in levels {
        let mut s = settings.clone();
        s.scenarios.confidence = level;
        let run = crate::pipeline::solve_and_evaluate(data, &s, tol)?;
        rows.push(ConfidenceRow {
            level,
            mean: run.report.mean,
            variance: run.report.variance,
            in_sample: run.policy.objective,
        });
        reports.push(run.report);
    }
    Ok(ConfidenceStudy { rows, reports })
}
