//! Fixtures shared by the benchmarks.

use stationbid::lp::LpProblem;
use stationbid::station::{Instance, ModelOptions};
use stationbid::synthetic;

/// Extensive-form LP of the seeded desk instance.
pub fn desk_lp(seed: u64) -> LpProblem {
    desk_lp_of(&synthetic::desk_instance(seed))
}

pub fn desk_lp_of(inst: &Instance) -> LpProblem {
    inst.extensive(&ModelOptions::default())
        .expect("desk instance builds")
        .0
}

/// `days` synthetic day-ahead rows.
pub fn da_rows(days: usize, seed: u64) -> Vec<Vec<f64>> {
    synthetic::price_history(days, seed)
        .da
        .into_iter()
        .map(|d| d.1)
        .collect()
}
