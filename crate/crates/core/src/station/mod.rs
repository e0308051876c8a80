//! Station parameters, load profiles, bid curves and the LP blocks of the
//! bidding problem.

mod curve;
mod model;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use curve::{interpolate_volume, BidCurve, Grids, PriceGrid};
pub(crate) use model::{add_da_block, add_id_curve, add_leaf_quarters, MdSource, StateSource};
pub use model::{
    build_extensive_model, extract_bid_curves, BidCurves, DaIndex, ExtensiveIndex, ModelOptions,
    QuarterValues, QuarterVars, QUARTERS_PER_HOUR,
};

/// Physical and economic station parameters. Power-like limits are given in
/// kW or kg/h and scaled by `dt_hours` inside the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StationSpec {
    pub eta_b: f64,
    pub eta_h: f64,
    pub eta_e: f64,
    /// kWh
    pub b_l_min: f64,
    pub b_l_max: f64,
    /// kW
    pub b_c_min: f64,
    pub b_c_max: f64,
    pub b_d_min: f64,
    pub b_d_max: f64,
    /// kg
    pub h_l_min: f64,
    pub h_l_max: f64,
    /// kg/h
    pub h_c_min: f64,
    pub h_c_max: f64,
    pub h_d_min: f64,
    pub h_d_max: f64,
    /// kW
    pub e_p_min: f64,
    pub e_p_max: f64,
    /// Hydrogen higher heating value, kWh/kg.
    pub hhv: f64,
    /// EUR/kWh
    pub lambda_e: f64,
    /// EUR/kg
    pub lambda_h: f64,
    pub b_l_init: f64,
    pub h_l_init: f64,
    pub dt_hours: f64,
}

impl Default for StationSpec {
    fn default() -> Self {
        Self {
            eta_b: 0.85,
            eta_h: 0.9,
            eta_e: 0.8,
            b_l_min: 0.0,
            b_l_max: 60.0,
            b_c_min: 0.0,
            b_c_max: 15.0,
            b_d_min: 0.0,
            b_d_max: 15.0,
            h_l_min: 0.0,
            h_l_max: 20.0,
            h_c_min: 0.0,
            h_c_max: 5.0,
            h_d_min: 0.0,
            h_d_max: 5.0,
            e_p_min: 0.0,
            e_p_max: 1000.0,
            hhv: 39.4,
            lambda_e: 0.3,
            lambda_h: 12.0,
            b_l_init: 0.0,
            h_l_init: 0.0,
            dt_hours: 0.25,
        }
    }
}

impl StationSpec {
    pub fn validate(&self) -> Result<()> {
        let pairs = [
            ("b_l", self.b_l_min, self.b_l_max),
            ("b_c", self.b_c_min, self.b_c_max),
            ("b_d", self.b_d_min, self.b_d_max),
            ("h_l", self.h_l_min, self.h_l_max),
            ("h_c", self.h_c_min, self.h_c_max),
            ("h_d", self.h_d_min, self.h_d_max),
            ("e_p", self.e_p_min, self.e_p_max),
        ];
        for (name, lo, hi) in pairs {
            if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
                return Err(Error::InvalidArgument(format!(
                    "{name}: need 0 <= min <= max, got [{lo}, {hi}]"
                )));
            }
        }
        for (name, eta) in [
            ("eta_b", self.eta_b),
            ("eta_h", self.eta_h),
            ("eta_e", self.eta_e),
        ] {
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} = {eta} outside (0, 1]"
                )));
            }
        }
        if !(self.hhv > 0.0 && self.dt_hours > 0.0) {
            return Err(Error::InvalidArgument(
                "hhv and dt_hours must be positive".into(),
            ));
        }
        if !(self.b_l_min..=self.b_l_max).contains(&self.b_l_init)
            || !(self.h_l_min..=self.h_l_max).contains(&self.h_l_init)
        {
            return Err(Error::InvalidArgument(
                "initial storage level outside its box".into(),
            ));
        }
        if !(self.lambda_e.is_finite() && self.lambda_h.is_finite()) {
            return Err(Error::InvalidArgument(
                "selling prices must be finite".into(),
            ));
        }
        Ok(())
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: StationSpec = toml::from_str(&text).map_err(|e| Error::Config {
            path: path.into(),
            msg: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    /// No storage at all: battery and tank boxes collapse to zero.
    pub fn without_storage(mut self) -> Self {
        self.b_l_max = 0.0;
        self.b_c_max = 0.0;
        self.b_d_max = 0.0;
        self.h_l_max = 0.0;
        self.h_c_max = 0.0;
        self.h_d_max = 0.0;
        self.b_l_min = 0.0;
        self.b_c_min = 0.0;
        self.b_d_min = 0.0;
        self.h_l_min = 0.0;
        self.h_c_min = 0.0;
        self.h_d_min = 0.0;
        self.b_l_init = 0.0;
        self.h_l_init = 0.0;
        self
    }

    /// Most hydrogen the electrolyzer can deliver in one quarter, kg.
    pub fn electrolyzer_kg_per_step(&self) -> f64 {
        self.eta_e * self.e_p_max * self.dt_hours / self.hhv
    }
}

/// Per-quarter loads: electricity in kWh, hydrogen in kg.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    pub l_e: Vec<f64>,
    pub l_h: Vec<f64>,
}

impl LoadProfile {
    pub fn new(l_e: Vec<f64>, l_h: Vec<f64>) -> Result<Self> {
        if l_e.len() != l_h.len() || l_e.is_empty() {
            return Err(Error::Shape(format!(
                "load profile lengths {} and {}",
                l_e.len(),
                l_h.len()
            )));
        }
        if l_e
            .iter()
            .chain(&l_h)
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::InvalidArgument(
                "loads must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { l_e, l_h })
    }

    pub fn zeros(quarters: usize) -> Self {
        Self {
            l_e: vec![0.0; quarters],
            l_h: vec![0.0; quarters],
        }
    }

    pub fn quarters(&self) -> usize {
        self.l_e.len()
    }

    /// Fixed revenue Σ_t (l_e λ_e + l_h λ_h), EUR.
    pub fn revenue(&self, spec: &StationSpec) -> f64 {
        self.l_e.iter().sum::<f64>() * spec.lambda_e + self.l_h.iter().sum::<f64>() * spec.lambda_h
    }

    pub fn scaled(&self, e: f64, h: f64) -> Self {
        Self {
            l_e: self.l_e.iter().map(|v| v * e).collect(),
            l_h: self.l_h.iter().map(|v| v * h).collect(),
        }
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Rec {
            quarter: usize,
            l_e_kwh: f64,
            l_h_kg: f64,
        }
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(file);
        let (mut l_e, mut l_h) = (Vec::new(), Vec::new());
        for (k, rec) in reader.deserialize::<Rec>().enumerate() {
            let rec = rec.map_err(|e| Error::Parse {
                path: path.into(),
                line: k + 2,
                msg: e.to_string(),
            })?;
            if rec.quarter != k {
                return Err(Error::Parse {
                    path: path.into(),
                    line: k + 2,
                    msg: format!("expected quarter {k}, got {}", rec.quarter),
                });
            }
            l_e.push(rec.l_e_kwh);
            l_h.push(rec.l_h_kg);
        }
        if l_e.is_empty() {
            return Err(Error::EmptyInput(path.into()));
        }
        Self::new(l_e, l_h)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["quarter", "l_e_kwh", "l_h_kg"])?;
        for (t, (e, h)) in self.l_e.iter().zip(&self.l_h).enumerate() {
            w.write_record([t.to_string(), e.to_string(), h.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Upper bound on grid energy in quarter `t`: the load plus everything the
/// battery and electrolyzer can absorb.
pub fn import_limit(spec: &StationSpec, loads: &LoadProfile, t: usize) -> f64 {
    loads.l_e[t] + (spec.b_c_max + spec.e_p_max) * spec.dt_hours
}

/// Fails when some hydrogen load exceeds electrolyzer output in its quarter,
/// which would make fixed-DA sub-problems infeasible.
pub fn check_coverable(spec: &StationSpec, loads: &LoadProfile) -> Result<()> {
    let cap = spec.electrolyzer_kg_per_step();
    if let Some((t, l)) = loads.l_h.iter().enumerate().find(|(_, &l)| l > cap + 1e-12) {
        return Err(Error::ModelBuild(format!(
            "hydrogen load {l} kg in quarter {t} exceeds electrolyzer output {cap:.4} kg per quarter"
        )));
    }
    Ok(())
}

/// Everything that defines one bidding problem.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub spec: StationSpec,
    pub loads: LoadProfile,
    pub tree: crate::scenario::ScenarioTree,
    pub grids: Grids,
}

impl Instance {
    /// Grids with `steps` prices spanning the tree.
    pub fn new(
        spec: StationSpec,
        loads: LoadProfile,
        tree: crate::scenario::ScenarioTree,
        steps: usize,
    ) -> Result<Self> {
        let grids = Grids::from_tree(&tree, steps)?;
        let inst = Self {
            spec,
            loads,
            tree,
            grids,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.loads.quarters() != self.tree.quarters() {
            return Err(Error::Shape(format!(
                "load profile has {} quarters, tree has {}",
                self.loads.quarters(),
                self.tree.quarters()
            )));
        }
        Ok(())
    }

    pub fn revenue(&self) -> f64 {
        self.loads.revenue(&self.spec)
    }

    pub fn extensive(&self, opts: &ModelOptions) -> Result<(crate::lp::LpProblem, ExtensiveIndex)> {
        build_extensive_model(&self.spec, &self.loads, &self.tree, &self.grids, opts)
    }
}
