use proptest::prelude::*;
use stationbid::lp::{self, Tolerances};
use stationbid::oracle::{self, LoadForm, OracleOptions};
use stationbid::scenario::{build_tree, ScenarioSet};
use stationbid::station::{
    extract_bid_curves, interpolate_volume, BidCurve, Instance, LoadProfile, ModelOptions,
    PriceGrid, StationSpec,
};
use stationbid::synthetic;

fn grid3() -> PriceGrid {
    PriceGrid::new(vec![0.0, 100.0, 200.0]).unwrap()
}

#[test]
fn interpolation_examples() {
    let c = BidCurve::new(grid3(), vec![20.0, 10.0, 6.0]).unwrap();
    assert_eq!(interpolate_volume(&c, 100.0).unwrap(), 10.0);
    assert_eq!(interpolate_volume(&c, 150.0).unwrap(), 8.0);
    assert_eq!(interpolate_volume(&c, 0.0).unwrap(), 20.0);
    assert!(interpolate_volume(&c, 200.5).is_err());
    assert!(BidCurve::new(grid3(), vec![1.0, 2.0, 0.0]).is_err());
}

fn single_leaf(da: Vec<f64>, id: Vec<f64>, loads: LoadProfile, spec: StationSpec) -> Instance {
    let tree = build_tree(
        &ScenarioSet::deterministic(da),
        &ScenarioSet::deterministic(id),
    )
    .unwrap();
    Instance::new(spec, loads, tree, 3).unwrap()
}

#[test]
fn zero_loads_give_zero_profit() {
    let inst = synthetic::desk_instance(7);
    let inst = Instance {
        loads: LoadProfile::zeros(8),
        ..inst
    };
    let ext =
        oracle::solve_extensive(&inst, &OracleOptions::default(), &Tolerances::default()).unwrap();
    assert!(ext.report.lp_objective.abs() < 1e-9);
    assert!(ext.solution.primal.iter().all(|v| v.abs() < 1e-9));
}

#[test]
fn single_quarter_load_profit() {
    // 10 kWh in the first quarter, bought day-ahead at 100 EUR/MWh.
    let mut l_e = vec![0.0; 4];
    l_e[0] = 10.0;
    let loads = LoadProfile::new(l_e, vec![0.0; 4]).unwrap();
    let inst = single_leaf(
        vec![100.0],
        vec![200.0; 4],
        loads,
        StationSpec::default().without_storage(),
    );
    let opts = ModelOptions {
        uniform_da_delivery: false,
        ..ModelOptions::default()
    };
    let (p, _) = inst.extensive(&opts).unwrap();
    let s = lp::solve(&p, &Tolerances::default());
    assert!((s.objective - 2.0).abs() < 1e-9, "profit {}", s.objective);
}

#[test]
fn battery_step_matches_recursion() {
    // Charging at the unscaled 15 kWh per step.
    let spec = StationSpec {
        dt_hours: 1.0,
        ..StationSpec::default()
    };
    let level = spec.b_l_init + spec.eta_b * 15.0 - 0.0 / spec.eta_b;
    assert!((level - 12.75).abs() < 1e-12);
    assert_eq!((level * 10.0).round() / 10.0, 12.8);
}

#[test]
fn unit_scaling_of_power_limits() {
    let inst = synthetic::desk_instance(1);
    let (p, idx) = inst.extensive(&ModelOptions::default()).unwrap();
    let q = &idx.leaves[0][0];
    assert_eq!(p.bounds(q.b_c), (0.0, 3.75));
    assert_eq!(p.bounds(q.h_d), (0.0, 1.25));
    assert_eq!(p.bounds(q.e_p), (0.0, 250.0));
}

#[test]
fn uncovered_price_is_a_build_error() {
    let mut inst = synthetic::desk_instance(2);
    inst.grids.id = PriceGrid::new(vec![50.0, 100.0, 150.0]).unwrap();
    let err = inst.extensive(&ModelOptions::default()).unwrap_err();
    assert!(err.to_string().contains("intraday price"), "{err}");
}

#[test]
fn desk_curves_are_legal_and_keyed_by_da_scenario() {
    let inst = synthetic::desk_instance(3);
    let opts = OracleOptions {
        load_form: Some(LoadForm::Relaxed),
        ..OracleOptions::default()
    };
    let ext = oracle::solve_extensive(&inst, &opts, &Tolerances::default()).unwrap();
    let curves = extract_bid_curves(&ext.solution, &ext.index).unwrap();
    assert_eq!(curves.da.len(), 2);
    assert_eq!(curves.id.len(), 2);
    assert!(curves.id.iter().all(|per_t| per_t.len() == 8));
    assert!(curves.all_non_increasing());
    assert!(ext.report.residuals.max_battery_recursion < 1e-9);
    assert!(ext.report.residuals.max_tank_recursion < 1e-9);
    assert!(ext.report.residuals.max_row_violation < 1e-7);
}

#[test]
fn single_scenario_has_one_id_family() {
    let loads = LoadProfile::new(synthetic::DESK_LOAD_E.to_vec(), vec![1.0; 8]).unwrap();
    let inst = single_leaf(
        synthetic::DESK_DA.to_vec(),
        synthetic::DESK_ID.to_vec(),
        loads,
        StationSpec::default(),
    );
    let ext =
        oracle::solve_extensive(&inst, &OracleOptions::default(), &Tolerances::default()).unwrap();
    let curves = extract_bid_curves(&ext.solution, &ext.index).unwrap();
    assert_eq!(curves.id.len(), 1);
}

proptest! {
    #[test]
    fn breakpoints_return_their_volume(raw in prop::collection::vec(0.0f64..50.0, 2..8), lo in -100.0f64..100.0, width in 1.0f64..300.0) {
        let n = raw.len();
        let grid = PriceGrid::spanning(lo, lo + width, n).unwrap();
        let curve = BidCurve::from_solution(grid.clone(), &raw).unwrap();
        for (i, &y) in grid.steps().iter().enumerate() {
            prop_assert_eq!(interpolate_volume(&curve, y).unwrap(), curve.volumes[i]);
        }
    }

    #[test]
    fn interpolation_is_non_increasing(raw in prop::collection::vec(0.0f64..50.0, 2..8), prices in prop::collection::vec(0.0f64..1.0, 2..40)) {
        let grid = PriceGrid::spanning(10.0, 250.0, raw.len()).unwrap();
        let curve = BidCurve::from_solution(grid, &raw).unwrap();
        let mut ps: Vec<f64> = prices.iter().map(|u| 10.0 + 240.0 * u).collect();
        ps.sort_by(f64::total_cmp);
        let vols: Vec<f64> = ps.iter().map(|&p| interpolate_volume(&curve, p).unwrap()).collect();
        prop_assert!(vols.windows(2).all(|w| w[1] <= w[0]));
    }
}
