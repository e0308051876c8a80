//! Seeded stand-ins for market data: daily price histories, load profiles
//! and the two-hour desk instance.

use std::io::Write;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scenario::{build_tree_conditional, ScenarioSet};
use crate::station::{Instance, LoadProfile, StationSpec};

pub const DESK_DA: [f64; 2] = [129.0, 189.0];
pub const DESK_ID: [f64; 8] = [42.0, 91.0, 127.0, 162.0, 82.0, 114.0, 137.0, 147.0];
pub const DESK_LOAD_E: [f64; 8] = [30.0, 22.0, 20.0, 28.0, 25.0, 18.0, 32.0, 35.0];
pub const DESK_LOAD_H: [f64; 8] = [5.0, 10.0, 12.0, 8.0, 15.0, 6.0, 14.0, 9.0];

/// Two hours, 2 DA × 2 ID scenarios, 3 grid steps. The first scenario of
/// each market is the reference trajectory; the others are seeded ±20 %
/// perturbations. Hydrogen loads are the reference loads divided by 4.
pub fn desk_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perturb = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|p| (p * rng.random_range(0.8..1.2)).round())
            .collect()
    };
    let da = ScenarioSet::new(vec![DESK_DA.to_vec(), perturb(&DESK_DA)], vec![0.6, 0.4]).unwrap();
    let id_sets = (0..2)
        .map(|_| {
            ScenarioSet::new(vec![DESK_ID.to_vec(), perturb(&DESK_ID)], vec![0.5, 0.5]).unwrap()
        })
        .collect();
    let tree = build_tree_conditional(&da, id_sets).unwrap();
    let loads = LoadProfile {
        l_e: DESK_LOAD_E.to_vec(),
        l_h: DESK_LOAD_H.iter().map(|h| h / 4.0).collect(),
    };
    Instance::new(StationSpec::default(), loads, tree, 3).unwrap()
}

/// Evening-peaked daily shape in EUR/MWh for hour `h` (fractional).
fn daily_shape(h: f64) -> f64 {
    use std::f64::consts::PI;
    let morning = (-(h - 8.0).powi(2) / 6.0).exp();
    let evening = (-(h - 19.0).powi(2) / 8.0).exp();
    let solar = (-(h - 13.0).powi(2) / 10.0).exp();
    95.0 + 45.0 * morning + 70.0 * evening - 35.0 * solar + 8.0 * (2.0 * PI * h / 24.0).sin()
}

pub struct SyntheticPrices {
    pub da: Vec<(NaiveDate, Vec<f64>)>,
    pub id: Vec<(NaiveDate, Vec<f64>)>,
}

/// `days` of hourly DA and quarter-hourly ID prices: daily shape times a
/// day-level factor plus interval noise; ID is DA plus its own noise.
pub fn price_history(days: usize, seed: u64) -> SyntheticPrices {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let level = Normal::new(1.0f64, 0.18).unwrap();
    let noise = Normal::new(0.0f64, 9.0).unwrap();
    let id_noise = Normal::new(0.0f64, 14.0).unwrap();
    let start = NaiveDate::from_ymd_opt(2023, 1, 1).unwrap();
    let mut da = Vec::with_capacity(days);
    let mut id = Vec::with_capacity(days);
    for d in 0..days {
        let date = start + Duration::days(d as i64);
        let f = level.sample(&mut rng).max(0.3);
        let spike = if rng.random_bool(0.03) {
            rng.random_range(150.0..400.0)
        } else {
            0.0
        };
        let hourly: Vec<f64> = (0..24)
            .map(|h| {
                let p = f * daily_shape(h as f64)
                    + noise.sample(&mut rng)
                    + if h == 19 { spike } else { 0.0 };
                (p.max(1.0) * 100.0).round() / 100.0
            })
            .collect();
        let quarterly: Vec<f64> = (0..96)
            .map(|t| {
                let p = hourly[t / 4] + id_noise.sample(&mut rng);
                (p.max(1.0) * 100.0).round() / 100.0
            })
            .collect();
        da.push((date, hourly));
        id.push((date, quarterly));
    }
    SyntheticPrices { da, id }
}

/// Writes `timestamp,price_eur_per_mwh` rows.
pub fn write_price_csv(path: &Path, days: &[(NaiveDate, Vec<f64>)], minutes: u32) -> Result<()> {
    let mut out =
        std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let write = |out: &mut std::io::BufWriter<std::fs::File>| -> std::io::Result<()> {
        writeln!(out, "timestamp,price_eur_per_mwh")?;
        for (date, prices) in days {
            for (k, p) in prices.iter().enumerate() {
                let m = k as u32 * minutes;
                writeln!(out, "{}T{:02}:{:02}:00,{}", date, m / 60, m % 60, p)?;
            }
        }
        out.flush()
    };
    write(&mut out).map_err(|e| Error::io(path, e))
}

/// 96-quarter station loads: EV charging peaking at midday and evening,
/// hydrogen refuelling in three daytime waves, capped to what the
/// electrolyzer can deliver.
pub fn load_profile(spec: &StationSpec, seed: u64) -> LoadProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cap = 0.8 * spec.electrolyzer_kg_per_step();
    let mut l_e = Vec::with_capacity(96);
    let mut l_h = Vec::with_capacity(96);
    for t in 0..96 {
        let h = t as f64 / 4.0;
        let e = 6.0
            + 18.0 * (-(h - 12.5).powi(2) / 9.0).exp()
            + 22.0 * (-(h - 18.5).powi(2) / 5.0).exp();
        let w = (-(h - 8.0).powi(2) / 2.0).exp()
            + (-(h - 13.0).powi(2) / 3.0).exp()
            + 0.8 * (-(h - 17.5).powi(2) / 2.0).exp();
        l_e.push(((e * rng.random_range(0.85..1.15)) * 100.0).round() / 100.0);
        l_h.push(((w * 2.4 * rng.random_range(0.8..1.2)).min(cap) * 1000.0).round() / 1000.0);
    }
    LoadProfile { l_e, l_h }
}
