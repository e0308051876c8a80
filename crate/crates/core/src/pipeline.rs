//! Config-driven orchestration: ingest, scenarios, solve, evaluate and the
//! artifacts each step writes.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::benders::{self, BendersConfig, BendersSolution};
use crate::error::{Error, Result};
use crate::evaluation::{
    self, EvalMode, EvalOptions, EvalReport, NormalSampler, PolicyBundle, SensitivityParam,
    SensitivityPoint, CONFIDENCE_LEVELS,
};
use crate::lp::Tolerances;
use crate::market_data::{self, Market, PriceMatrix, ZScope};
use crate::oracle::{self, OracleOptions, OracleReport};
use crate::scenario::{self, ScenarioSet, ScenarioTree};
use crate::sddp::SddpConfig;
use crate::station::{Instance, LoadProfile, StationSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioParams {
    pub k_da: usize,
    /// ID clusters per DA cluster.
    pub k_id: usize,
    pub seed: u64,
    pub z_threshold: f64,
    pub z_scope: ZScope,
    /// Central quantile band kept before clustering; 1 disables trimming.
    pub confidence: f64,
    pub max_iter: usize,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            k_da: 5,
            k_id: 3,
            seed: 0,
            z_threshold: 3.0,
            z_scope: ZScope::Global,
            confidence: 0.8,
            max_iter: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverParams {
    /// Price steps `I` per bid curve.
    pub grid_steps: usize,
    pub intervals: usize,
    pub samples: usize,
    pub sddp_max_iter: usize,
    pub sddp_tol: f64,
    pub benders_max_iter: usize,
    pub eps: f64,
    pub stabilization: f64,
    pub uniform_da_delivery: bool,
}

impl Default for SolverParams {
    fn default() -> Self {
        let b = BendersConfig::default();
        Self {
            grid_steps: 3,
            intervals: b.sddp.intervals,
            samples: b.sddp.samples,
            sddp_max_iter: b.sddp.max_iter,
            sddp_tol: b.sddp.tol,
            benders_max_iter: b.max_iter,
            eps: b.eps,
            stabilization: b.stabilization,
            uniform_da_delivery: b.uniform_da_delivery,
        }
    }
}

impl SolverParams {
    pub fn benders(&self, seed: u64) -> BendersConfig {
        BendersConfig {
            max_iter: self.benders_max_iter,
            eps: self.eps,
            stabilization: self.stabilization,
            uniform_da_delivery: self.uniform_da_delivery,
            sddp: SddpConfig {
                intervals: self.intervals,
                samples: self.samples,
                max_iter: self.sddp_max_iter,
                tol: self.sddp_tol,
                seed,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalParams {
    pub n_draws: usize,
    pub seed: u64,
    pub mode: EvalMode,
    pub shortfall_price: Option<f64>,
}

impl Default for EvalParams {
    fn default() -> Self {
        let o = EvalOptions::default();
        Self {
            n_draws: o.n_draws,
            seed: o.seed,
            mode: o.mode,
            shortfall_price: o.shortfall_price,
        }
    }
}

impl EvalParams {
    pub fn options(&self) -> EvalOptions {
        EvalOptions {
            n_draws: self.n_draws,
            seed: self.seed,
            mode: self.mode,
            shortfall_price: self.shortfall_price,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityParams {
    pub params: Vec<SensitivityParam>,
    pub multipliers: Vec<f64>,
}

impl Default for SensitivityParams {
    fn default() -> Self {
        Self {
            params: Vec::new(),
            multipliers: evaluation::linspace(0.5, 1.5, 5),
        }
    }
}

/// Parameters that shape results, independent of file locations.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub scenarios: ScenarioParams,
    pub solver: SolverParams,
    pub evaluation: EvalParams,
    pub sensitivity: SensitivityParams,
    /// Levels of the confidence study; empty skips it.
    pub confidence_levels: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub da_prices: PathBuf,
    pub id_prices: PathBuf,
    pub loads: PathBuf,
    /// Station TOML; the default station when absent.
    #[serde(default)]
    pub station: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub paths: Paths,
    pub output_dir: PathBuf,
    pub settings: Settings,
}

/// On-disk layout of [`RunConfig`]: paths and settings side by side.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    output_dir: PathBuf,
    #[serde(default)]
    confidence_levels: Vec<f64>,
    paths: Paths,
    #[serde(default)]
    scenarios: ScenarioParams,
    #[serde(default)]
    solver: SolverParams,
    #[serde(default)]
    evaluation: EvalParams,
    #[serde(default)]
    sensitivity: SensitivityParams,
}

impl From<RawConfig> for RunConfig {
    fn from(r: RawConfig) -> Self {
        Self {
            paths: r.paths,
            output_dir: r.output_dir,
            settings: Settings {
                scenarios: r.scenarios,
                solver: r.solver,
                evaluation: r.evaluation,
                sensitivity: r.sensitivity,
                confidence_levels: r.confidence_levels,
            },
        }
    }
}

impl From<&RunConfig> for RawConfig {
    fn from(c: &RunConfig) -> Self {
        let s = c.settings.clone();
        Self {
            paths: c.paths.clone(),
            output_dir: c.output_dir.clone(),
            scenarios: s.scenarios,
            solver: s.solver,
            evaluation: s.evaluation,
            sensitivity: s.sensitivity,
            confidence_levels: s.confidence_levels,
        }
    }
}

fn config_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        msg: msg.into(),
    }
}

impl RunConfig {
    /// Parses a TOML config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: RawConfig = toml::from_str(&text).map_err(|e| config_err(path, e.to_string()))?;
        let mut cfg = RunConfig::from(raw);
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.paths.da_prices);
        resolve(&mut cfg.paths.id_prices);
        resolve(&mut cfg.paths.loads);
        if let Some(s) = cfg.paths.station.as_mut() {
            resolve(s);
        }
        resolve(&mut cfg.output_dir);
        cfg.validate(path)?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(&RawConfig::from(self))
            .map_err(|e| config_err(Path::new("config"), e.to_string()))
    }

    pub fn validate(&self, origin: &Path) -> Result<()> {
        let p = &self.paths;
        for f in [
            Some(&p.da_prices),
            Some(&p.id_prices),
            Some(&p.loads),
            p.station.as_ref(),
        ]
        .into_iter()
        .flatten()
        {
            if !f.is_file() {
                return Err(config_err(
                    origin,
                    format!("referenced file {} does not exist", f.display()),
                ));
            }
        }
        self.settings
            .validate()
            .map_err(|msg| config_err(origin, msg))
    }

    pub fn station(&self) -> Result<StationSpec> {
        match &self.paths.station {
            Some(p) => StationSpec::from_toml_file(p),
            None => Ok(StationSpec::default()),
        }
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}

impl Settings {
    pub fn validate(&self) -> std::result::Result<(), String> {
        let s = &self.scenarios;
        let v = &self.solver;
        let checks = [
            (s.k_da >= 1, "scenarios.k_da must be at least 1"),
            (s.k_id >= 1, "scenarios.k_id must be at least 1"),
            (
                s.z_threshold > 0.0,
                "scenarios.z_threshold must be positive",
            ),
            (
                s.confidence > 0.0 && s.confidence <= 1.0,
                "scenarios.confidence must lie in (0, 1]",
            ),
            (s.max_iter >= 1, "scenarios.max_iter must be at least 1"),
            (v.grid_steps >= 2, "solver.grid_steps must be at least 2"),
            (v.intervals >= 1, "solver.intervals must be at least 1"),
            (v.samples >= 1, "solver.samples must be at least 1"),
            (
                v.sddp_max_iter >= 1,
                "solver.sddp_max_iter must be at least 1",
            ),
            (
                v.benders_max_iter >= 1,
                "solver.benders_max_iter must be at least 1",
            ),
            (v.eps > 0.0, "solver.eps must be positive"),
            (
                v.stabilization > 0.0 && v.stabilization <= 1.0,
                "solver.stabilization must lie in (0, 1]",
            ),
            (v.sddp_tol > 0.0, "solver.sddp_tol must be positive"),
            (
                self.evaluation.shortfall_price.is_none_or(|p| p >= 0.0),
                "evaluation.shortfall_price must be nonnegative",
            ),
            (
                self.sensitivity.multipliers.iter().all(|m| *m > 0.0),
                "sensitivity.multipliers must be positive",
            ),
            (
                self.confidence_levels.iter().all(|c| *c > 0.0 && *c <= 1.0),
                "confidence_levels must lie in (0, 1]",
            ),
        ];
        match checks.iter().find(|c| !c.0) {
            Some((_, msg)) => Err((*msg).to_string()),
            None => Ok(()),
        }
    }
}

/// Cleaned, date-aligned price history plus station data.
#[derive(Clone, Debug)]
pub struct Inputs {
    pub da: PriceMatrix,
    pub id: PriceMatrix,
    pub spec: StationSpec,
    pub loads: LoadProfile,
    pub report: IngestReport,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub da_days_read: usize,
    pub id_days_read: usize,
    pub incomplete_days: usize,
    pub outlier_days: usize,
    pub unmatched_days: usize,
    pub days: usize,
}

fn keep_dates(m: &PriceMatrix, dates: &BTreeSet<chrono::NaiveDate>) -> Result<PriceMatrix> {
    let (d, r) = m
        .dates
        .iter()
        .zip(&m.rows)
        .filter(|(d, _)| dates.contains(d))
        .map(|(d, r)| (*d, r.clone()))
        .unzip();
    PriceMatrix::new(m.market, d, r)
}

/// Ingests both markets, drops outlier days and keeps the days present in
/// both.
pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let spec = cfg.station()?;
    let loads = LoadProfile::read_csv(&cfg.paths.loads)?;
    let clean = |path: &Path, market| -> Result<(PriceMatrix, usize, usize)> {
        let ing = market_data::ingest_csv(path, market)?;
        let read = ing.matrix.num_rows();
        let filtered = market_data::zscore_filter(
            &ing.matrix,
            cfg.settings.scenarios.z_threshold,
            cfg.settings.scenarios.z_scope,
        )?;
        Ok((filtered, read, ing.dropped_days))
    };
    let (da, da_read, da_drop) = clean(&cfg.paths.da_prices, Market::DayAhead)?;
    let (id, id_read, id_drop) = clean(&cfg.paths.id_prices, Market::Intraday)?;
    let outliers = (da_read - da.num_rows()) + (id_read - id.num_rows());
    let common: BTreeSet<_> = da
        .dates
        .iter()
        .filter(|d| id.dates.contains(d))
        .copied()
        .collect();
    let unmatched = da.num_rows() + id.num_rows() - 2 * common.len();
    let (da, id) = (keep_dates(&da, &common)?, keep_dates(&id, &common)?);
    if da.num_rows() == 0 {
        return Err(Error::InsufficientData(
            "no day has clean prices in both markets".into(),
        ));
    }
    Ok(Inputs {
        report: IngestReport {
            da_days_read: da_read,
            id_days_read: id_read,
            incomplete_days: da_drop + id_drop,
            outlier_days: outliers,
            unmatched_days: unmatched,
            days: common.len(),
        },
        da,
        id,
        spec,
        loads,
    })
}

/// Trims both markets to the confidence band, clusters DA days and then the
/// ID days of every DA cluster.
pub fn build_scenarios(inputs: &Inputs, params: &ScenarioParams) -> Result<ScenarioTree> {
    let (da, id) = if params.confidence < 1.0 {
        let eps = 1.0 - params.confidence;
        (
            market_data::trim_confidence(&inputs.da, eps)?,
            market_data::trim_confidence(&inputs.id, eps)?,
        )
    } else {
        (inputs.da.clone(), inputs.id.clone())
    };
    let k_da = params.k_da.min(da.num_rows());
    let km = scenario::kmeans(&da.rows, k_da, params.seed, params.max_iter)?;
    let probs = scenario::cluster_probabilities(&km.assignment, k_da);
    let da_set = ScenarioSet::from_clusters(&km.clusters, &probs)?;
    let id_sets = scenario::conditional_id_sets(
        &km.assignment,
        k_da,
        &id.rows,
        params.k_id,
        params.seed,
        params.max_iter,
    )?;
    scenario::build_tree_conditional(&da_set, id_sets)
}

pub fn build_instance(
    inputs: &Inputs,
    tree: ScenarioTree,
    solver: &SolverParams,
) -> Result<Instance> {
    Instance::new(
        inputs.spec.clone(),
        inputs.loads.clone(),
        tree,
        solver.grid_steps,
    )
}

pub struct RunOutput {
    pub instance: Instance,
    pub solution: BendersSolution,
    pub policy: PolicyBundle,
    pub report: EvalReport,
}

pub fn solve(inst: &Instance, settings: &Settings, tol: &Tolerances) -> Result<BendersSolution> {
    benders::run(inst, &settings.solver.benders(settings.scenarios.seed), tol)
}

pub fn evaluate(
    inputs: &Inputs,
    policy: &PolicyBundle,
    settings: &Settings,
    tol: &Tolerances,
) -> Result<EvalReport> {
    let sampler = NormalSampler::fit(&inputs.da, &inputs.id, &policy.grids())?;
    evaluation::monte_carlo(policy, &sampler, &settings.evaluation.options(), tol)
}

/// Scenarios, solve and Monte Carlo in one go.
pub fn solve_and_evaluate(
    inputs: &Inputs,
    settings: &Settings,
    tol: &Tolerances,
) -> Result<RunOutput> {
    let tree = build_scenarios(inputs, &settings.scenarios)?;
    let instance = build_instance(inputs, tree, &settings.solver)?;
    let solution = solve(&instance, settings, tol)?;
    let policy =
        PolicyBundle::from_solution(&instance, &solution, settings.solver.uniform_da_delivery);
    let report = evaluate(inputs, &policy, settings, tol)?;
    Ok(RunOutput {
        instance,
        solution,
        policy,
        report,
    })
}

// ---- artifacts ----

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_rows<S: Serialize>(
    path: &Path,
    rows: impl IntoIterator<Item = S>,
    header: &[&str],
) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_curves(dir: &Path, sol: &BendersSolution) -> Result<()> {
    let da = sol.curves.da.iter().enumerate().flat_map(|(h, c)| {
        c.grid
            .steps()
            .iter()
            .zip(&c.volumes)
            .map(move |(&p, &v)| (h, p, v))
            .collect::<Vec<_>>()
    });
    write_rows(
        &dir.join("bidding_curves_da.csv"),
        da,
        &["hour", "step_price_eur_mwh", "volume_kwh"],
    )?;
    let id = sol.curves.id.iter().enumerate().flat_map(|(g, per_t)| {
        per_t
            .iter()
            .enumerate()
            .flat_map(move |(t, c)| {
                c.grid
                    .steps()
                    .iter()
                    .zip(&c.volumes)
                    .map(move |(&p, &v)| (t, g, p, v))
            })
            .collect::<Vec<_>>()
    });
    let mut rows: Vec<_> = id.collect();
    rows.sort_by_key(|r| (r.0, r.1));
    write_rows(
        &dir.join("bidding_curves_id.csv"),
        rows,
        &["quarter", "da_scenario", "step_price_eur_mwh", "volume_kwh"],
    )
}

pub const SCHEDULE_HEADER: [&str; 15] = [
    "leaf",
    "da_scenario",
    "id_scenario",
    "quarter",
    "m_d",
    "m_i",
    "v_e",
    "v_h",
    "b_l",
    "b_c",
    "b_d",
    "e_p",
    "h_l",
    "h_c",
    "h_d",
];

pub fn write_schedule(path: &Path, sol: &BendersSolution) -> Result<()> {
    let rows = sol.schedule.iter().map(|r| {
        let v = &r.values;
        (
            r.leaf,
            r.da_scenario,
            r.id_scenario,
            r.quarter,
            v.m_d,
            v.m_i,
            v.v_e,
            v.v_h,
            v.b_l,
            v.b_c,
            v.b_d,
            v.e_p,
            v.h_l,
            v.h_c,
            v.h_d,
        )
    });
    write_rows(path, rows, &SCHEDULE_HEADER)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleComparison {
    pub objective: f64,
    pub delta: f64,
    pub relative_delta: f64,
    pub load_form: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub objective: f64,
    pub upper_bound: f64,
    /// `(UB − LB)/max(1, |UB|)` of the last iteration.
    pub gap: f64,
    pub converged: bool,
    pub gap_flag: bool,
    pub iterations: usize,
    pub sddp_converged_last: bool,
    pub sddp_iterations: usize,
    pub cuts: usize,
    pub leaves: usize,
    pub quarters: usize,
    pub oracle: Option<OracleComparison>,
}

impl SolveReport {
    pub fn new(inst: &Instance, sol: &BendersSolution, oracle: Option<&OracleReport>) -> Self {
        Self {
            objective: sol.objective,
            upper_bound: sol.upper_bound,
            gap: sol.gap,
            converged: sol.converged,
            gap_flag: !sol.converged,
            iterations: sol.iterations,
            sddp_converged_last: sol.sddp_converged_last,
            sddp_iterations: sol
                .sddp_trace
                .iter()
                .map(|r| (r.benders_iter, r.sddp_iter))
                .collect::<BTreeSet<_>>()
                .len(),
            cuts: sol.cuts,
            leaves: inst.tree.leaves.len(),
            quarters: inst.tree.quarters(),
            oracle: oracle.map(|o| OracleComparison {
                objective: o.lp_objective,
                delta: sol.objective - o.lp_objective,
                relative_delta: (sol.objective - o.lp_objective).abs()
                    / o.lp_objective.abs().max(1.0),
                load_form: format!("{:?}", o.load_form).to_lowercase(),
            }),
        }
    }
}

/// Wall-clock seconds per stage; kept apart from deterministic outputs.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Timings(pub Vec<(String, f64)>);

impl Timings {
    pub fn time<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.0
            .push((name.to_string(), start.elapsed().as_secs_f64()));
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let map: serde_json::Map<String, serde_json::Value> = self
            .0
            .iter()
            .map(|(k, v)| (k.clone(), serde_json::json!(v)))
            .collect();
        write_json(path, &map)
    }
}

pub fn write_solve_artifacts(
    dir: &Path,
    inst: &Instance,
    sol: &BendersSolution,
    oracle: Option<&OracleReport>,
    uniform: bool,
) -> Result<SolveReport> {
    create_dir(dir)?;
    write_curves(dir, sol)?;
    write_schedule(&dir.join("schedule.csv"), sol)?;
    write_rows(
        &dir.join("convergence.csv"),
        sol.trace
            .iter()
            .map(|r| (r.iter, r.ub_eur, r.lb_eur, r.gap)),
        &["iter", "ub_eur", "lb_eur", "gap"],
    )?;
    write_rows(
        &dir.join("sddp_trace.csv"),
        sol.sddp_trace.iter().map(|r| {
            (
                r.benders_iter,
                r.sddp_iter,
                r.sample,
                r.zbar,
                r.zlower,
                r.sigma,
            )
        }),
        &[
            "benders_iter",
            "sddp_iter",
            "sample",
            "zbar",
            "zlower",
            "sigma",
        ],
    )?;
    let report = SolveReport::new(inst, sol, oracle);
    write_json(&dir.join("report.json"), &report)?;
    write_json(
        &dir.join("policy.json"),
        &PolicyBundle::from_solution(inst, sol, uniform),
    )?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalSummary<'a> {
    pub n_draws: usize,
    pub empty: bool,
    pub mode: EvalMode,
    pub in_sample: f64,
    pub mean: f64,
    pub variance: f64,
    pub std_error: f64,
    pub min: f64,
    pub max: f64,
    pub percentiles: &'a [evaluation::Percentile],
    pub clipped_prices: usize,
    pub shortfall_kwh: f64,
}

pub fn write_eval_artifacts(
    dir: &Path,
    policy: &PolicyBundle,
    report: &EvalReport,
    mode: EvalMode,
) -> Result<()> {
    create_dir(dir)?;
    write_rows(
        &dir.join("mc_draws.csv"),
        report.draws.iter().map(|d| (d.draw, d.profit)),
        &["draw", "profit"],
    )?;
    write_rows(
        &dir.join("histogram.csv"),
        report
            .histogram
            .iter()
            .enumerate()
            .map(|(b, h)| (b, h.lo, h.hi, h.count)),
        &["bin", "lo_eur", "hi_eur", "count"],
    )?;
    let summary = EvalSummary {
        n_draws: report.draws.len(),
        empty: report.empty,
        mode,
        in_sample: policy.objective,
        mean: report.mean,
        variance: report.variance,
        std_error: report.std_error,
        min: report.min,
        max: report.max,
        percentiles: &report.percentiles,
        clipped_prices: report.clipped_prices,
        shortfall_kwh: report.draws.iter().map(|d| d.shortfall_kwh).sum(),
    };
    write_json(&dir.join("evaluation.json"), &summary)
}

pub fn write_sensitivity(path: &Path, points: &[SensitivityPoint]) -> Result<()> {
    write_rows(
        path,
        points
            .iter()
            .map(|p| (p.param.name(), p.multiplier, p.profit, p.error.as_deref())),
        &["param", "multiplier", "profit", "error"],
    )
}

pub fn write_confidence(dir: &Path, study: &evaluation::ConfidenceStudy) -> Result<()> {
    write_rows(
        &dir.join("confidence.csv"),
        study.rows.iter().map(|r| (r.level, r.mean, r.variance)),
        &["level", "mean", "variance"],
    )?;
    // Box-plot data: every draw of every level.
    let rows = study
        .rows
        .iter()
        .zip(&study.reports)
        .flat_map(|(r, rep)| rep.draws.iter().map(move |d| (r.level, d.draw, d.profit)));
    write_rows(
        &dir.join("confidence_draws.csv"),
        rows,
        &["level", "draw", "profit"],
    )
}

// ---- commands ----

pub fn cmd_ingest(cfg: &RunConfig) -> Result<IngestReport> {
    let inputs = load_inputs(cfg)?;
    create_dir(&cfg.output_dir)?;
    market_data::write_matrix_csv(&cfg.out("clean_da.csv"), &inputs.da)?;
    market_data::write_matrix_csv(&cfg.out("clean_id.csv"), &inputs.id)?;
    write_json(&cfg.out("ingest.json"), &inputs.report)?;
    Ok(inputs.report)
}

/// Cleans one market on its own, without aligning dates with the other.
pub fn cmd_ingest_market(cfg: &RunConfig, market: Market) -> Result<IngestReport> {
    let path = match market {
        Market::DayAhead => &cfg.paths.da_prices,
        Market::Intraday => &cfg.paths.id_prices,
    };
    let ing = market_data::ingest_csv(path, market)?;
    let s = &cfg.settings.scenarios;
    let clean = market_data::zscore_filter(&ing.matrix, s.z_threshold, s.z_scope)?;
    let read = ing.matrix.num_rows();
    let report = IngestReport {
        da_days_read: if market == Market::DayAhead { read } else { 0 },
        id_days_read: if market == Market::Intraday { read } else { 0 },
        incomplete_days: ing.dropped_days,
        outlier_days: read - clean.num_rows(),
        unmatched_days: 0,
        days: clean.num_rows(),
    };
    create_dir(&cfg.output_dir)?;
    market_data::write_matrix_csv(&cfg.out(&format!("clean_{market}.csv")), &clean)?;
    write_json(&cfg.out(&format!("ingest_{market}.json")), &report)?;
    Ok(report)
}

pub fn cmd_scenarios(cfg: &RunConfig) -> Result<ScenarioTree> {
    let inputs = load_inputs(cfg)?;
    let tree = build_scenarios(&inputs, &cfg.settings.scenarios)?;
    create_dir(&cfg.output_dir)?;
    scenario::write_scenarios_csv(&cfg.out("scenarios_da.csv"), &tree.da)?;
    scenario::write_conditional_csv(&cfg.out("scenarios_id.csv"), &tree.id_sets)?;
    Ok(tree)
}

pub struct SolveOutcome {
    pub instance: Instance,
    pub solution: BendersSolution,
    pub report: SolveReport,
}

/// Scenarios and solve; `with_oracle` adds the extensive-form comparison.
pub fn cmd_solve(cfg: &RunConfig, with_oracle: bool, tol: &Tolerances) -> Result<SolveOutcome> {
    let mut timings = Timings::default();
    let inputs = timings.time("ingest", || load_inputs(cfg))?;
    let tree = timings.time("scenarios", || {
        build_scenarios(&inputs, &cfg.settings.scenarios)
    })?;
    let instance = build_instance(&inputs, tree, &cfg.settings.solver)?;
    let solution = timings.time("solve", || solve(&instance, &cfg.settings, tol))?;
    let oracle = if with_oracle {
        let opts = OracleOptions {
            uniform_da_delivery: cfg.settings.solver.uniform_da_delivery,
            ..OracleOptions::default()
        };
        Some(
            timings
                .time("oracle", || oracle::solve_extensive(&instance, &opts, tol))?
                .report,
        )
    } else {
        None
    };
    create_dir(&cfg.output_dir)?;
    scenario::write_scenarios_csv(&cfg.out("scenarios_da.csv"), &instance.tree.da)?;
    scenario::write_conditional_csv(&cfg.out("scenarios_id.csv"), &instance.tree.id_sets)?;
    let report = write_solve_artifacts(
        &cfg.output_dir,
        &instance,
        &solution,
        oracle.as_ref(),
        cfg.settings.solver.uniform_da_delivery,
    )?;
    timings.write(&cfg.out("timings_solve.json"))?;
    Ok(SolveOutcome {
        instance,
        solution,
        report,
    })
}

/// Extensive-form solve of the configured instance. `lp_path` also dumps
/// the model in LP text format, with the load form the solve settled on.
pub fn cmd_oracle(
    cfg: &RunConfig,
    lp_path: Option<&Path>,
    tol: &Tolerances,
) -> Result<OracleReport> {
    let inputs = load_inputs(cfg)?;
    let tree = build_scenarios(&inputs, &cfg.settings.scenarios)?;
    let instance = build_instance(&inputs, tree, &cfg.settings.solver)?;
    let opts = OracleOptions {
        uniform_da_delivery: cfg.settings.solver.uniform_da_delivery,
        ..OracleOptions::default()
    };
    let ext = oracle::solve_extensive(&instance, &opts, tol)?;
    create_dir(&cfg.output_dir)?;
    write_json(&cfg.out("oracle-report.json"), &ext.report)?;
    if let Some(path) = lp_path {
        let mopts = crate::station::ModelOptions {
            relaxed_load: ext.report.load_form == oracle::LoadForm::Relaxed,
            uniform_da_delivery: opts.uniform_da_delivery,
            mode_binaries: false,
        };
        let (problem, _) = instance.extensive(&mopts)?;
        fs::write(path, crate::lp::to_lp_string(&problem)).map_err(|e| Error::io(path, e))?;
    }
    Ok(ext.report)
}

pub struct Sweep {
    pub param: SensitivityParam,
    pub multipliers: Vec<f64>,
}

#[derive(Default)]
pub struct EvaluateOutcome {
    pub report: Option<EvalReport>,
    pub sensitivity: Vec<SensitivityPoint>,
    pub confidence: Option<evaluation::ConfidenceStudy>,
}

/// Monte Carlo of the stored policy, then any configured sweeps and the
/// confidence study. Needs `policy.json` from a previous solve.
pub fn cmd_evaluate(
    cfg: &RunConfig,
    sweep: Option<&Sweep>,
    tol: &Tolerances,
) -> Result<EvaluateOutcome> {
    let policy_path = cfg.out("policy.json");
    if !policy_path.is_file() {
        return Err(Error::Io {
            path: policy_path,
            source: std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "policy bundle missing; run `solve` first",
            ),
        });
    }
    let policy: PolicyBundle = read_json(&policy_path)?;
    policy.validate()?;
    let mut timings = Timings::default();
    let inputs = load_inputs(cfg)?;
    let report = timings.time("monte_carlo", || {
        evaluate(&inputs, &policy, &cfg.settings, tol)
    })?;
    write_eval_artifacts(
        &cfg.output_dir,
        &policy,
        &report,
        cfg.settings.evaluation.mode,
    )?;

    let mut sweeps: Vec<Sweep> = cfg
        .settings
        .sensitivity
        .params
        .iter()
        .map(|&param| Sweep {
            param,
            multipliers: cfg.settings.sensitivity.multipliers.clone(),
        })
        .collect();
    if let Some(s) = sweep {
        sweeps.retain(|x| x.param != s.param);
        sweeps.push(Sweep {
            param: s.param,
            multipliers: s.multipliers.clone(),
        });
    }
    let mut sensitivity = Vec::new();
    if !sweeps.is_empty() {
        let base = Instance::new(
            policy.spec.clone(),
            policy.loads.clone(),
            policy.tree.clone(),
            policy.grids().da.len(),
        )?;
        let bcfg = cfg.settings.solver.benders(cfg.settings.scenarios.seed);
        for s in &sweeps {
            let pts = timings.time(&format!("sensitivity_{}", s.param), || {
                evaluation::sensitivity_sweep(&base, s.param, &s.multipliers, &bcfg, tol)
            })?;
            sensitivity.extend(pts);
        }
        write_sensitivity(&cfg.out("sensitivity.csv"), &sensitivity)?;
    }

    let confidence = if cfg.settings.confidence_levels.is_empty() {
        None
    } else {
        let study = timings.time("confidence", || {
            evaluation::confidence_study(
                &inputs,
                &cfg.settings.confidence_levels,
                &cfg.settings,
                tol,
            )
        })?;
        write_confidence(&cfg.output_dir, &study)?;
        Some(study)
    };
    timings.write(&cfg.out("timings_evaluate.json"))?;
    Ok(EvaluateOutcome {
        report: Some(report),
        sensitivity,
        confidence,
    })
}

/// Human-readable digest of the artifacts in the output directory.
pub fn cmd_report(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let io = |e| Error::io(&cfg.output_dir, e);
    let solve: SolveReport = read_json(&cfg.out("report.json"))?;
    writeln!(out, "objective      {:.4} EUR", solve.objective).map_err(io)?;
    writeln!(out, "upper bound    {:.4} EUR", solve.upper_bound).map_err(io)?;
    writeln!(
        out,
        "gap            {:.3e}{}",
        solve.gap,
        if solve.gap_flag {
            "  (not converged)"
        } else {
            ""
        }
    )
    .map_err(io)?;
    writeln!(
        out,
        "iterations     {} Benders, {} SDDP",
        solve.iterations, solve.sddp_iterations
    )
    .map_err(io)?;
    writeln!(
        out,
        "scenarios      {} leaves x {} quarters",
        solve.leaves, solve.quarters
    )
    .map_err(io)?;
    if let Some(o) = &solve.oracle {
        writeln!(
            out,
            "oracle         {:.4} EUR (delta {:+.3e})",
            o.objective, o.delta
        )
        .map_err(io)?;
    }
    let eval_path = cfg.out("evaluation.json");
    if eval_path.is_file() {
        let v: serde_json::Value = read_json(&eval_path)?;
        if v["empty"].as_bool() == Some(true) {
            writeln!(out, "monte carlo    no draws").map_err(io)?;
        } else {
            writeln!(
                out,
                "monte carlo    mean {:.4} EUR, variance {:.4}, {} draws",
                v["mean"].as_f64().unwrap_or(f64::NAN),
                v["variance"].as_f64().unwrap_or(f64::NAN),
                v["n_draws"]
            )
            .map_err(io)?;
        }
    }
    Ok(())
}

/// Writes a seeded synthetic dataset and a config pointing at it.
pub fn write_synthetic_dataset(dir: &Path, days: usize, seed: u64) -> Result<PathBuf> {
    create_dir(dir)?;
    let prices = crate::synthetic::price_history(days, seed);
    crate::synthetic::write_price_csv(&dir.join("da_prices.csv"), &prices.da, 60)?;
    crate::synthetic::write_price_csv(&dir.join("id_prices.csv"), &prices.id, 15)?;
    let spec = StationSpec::default();
    crate::synthetic::load_profile(&spec, seed).write_csv(&dir.join("loads.csv"))?;
    let station =
        toml::to_string(&spec).map_err(|e| config_err(&dir.join("station.toml"), e.to_string()))?;
    fs::write(dir.join("station.toml"), station)
        .map_err(|e| Error::io(dir.join("station.toml"), e))?;
    let cfg = RunConfig {
        paths: Paths {
            da_prices: "da_prices.csv".into(),
            id_prices: "id_prices.csv".into(),
            loads: "loads.csv".into(),
            station: Some("station.toml".into()),
        },
        output_dir: "out".into(),
        settings: Settings {
            scenarios: ScenarioParams {
                seed,
                ..ScenarioParams::default()
            },
            confidence_levels: CONFIDENCE_LEVELS.to_vec(),
            ..Settings::default()
        },
    };
    let path = dir.join("config.toml");
    let text = cfg.to_toml()?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
