use stationbid::benders::{self, BendersConfig};
use stationbid::lp::Tolerances;
use stationbid::oracle::{self, LoadForm, OracleOptions};
use stationbid::sddp::SddpConfig;
use stationbid::station::{Grids, Instance};
use stationbid::synthetic;

fn relaxed() -> OracleOptions {
    OracleOptions {
        load_form: Some(LoadForm::Relaxed),
        ..OracleOptions::default()
    }
}

fn with_da_scale(mut inst: Instance, k: f64) -> Instance {
    for s in &mut inst.tree.da.scenarios {
        s.iter_mut().for_each(|p| *p *= k);
    }
    inst.grids = Grids::from_tree(&inst.tree, 3).unwrap();
    inst
}

#[test]
fn decomposition_matches_oracle_across_variants() {
    let tol = Tolerances::default();
    for seed in 0..6 {
        for scale in [1.0, 0.7, 0.5] {
            for q in [1, 2, 4, 8] {
                let inst = with_da_scale(synthetic::desk_instance(seed), scale);
                let ext = oracle::solve_extensive(&inst, &relaxed(), &tol).unwrap();
                let cfg = BendersConfig {
                    sddp: SddpConfig {
                        intervals: q,
                        ..SddpConfig::default()
                    },
                    ..BendersConfig::default()
                };
                let sol = benders::run(&inst, &cfg, &tol).unwrap();
                let o = ext.report.lp_objective;
                eprintln!(
                    "seed {seed} scale {scale} q {q}: oracle {o:.6} benders {:.6} iters {} conv {}",
                    sol.objective, sol.iterations, sol.converged
                );
                assert!(sol.converged);
                assert!((sol.objective - o).abs() <= 1e-3 * o.abs().max(1.0));
                assert!(sol.upper_bound >= o - 1e-6 && sol.objective <= o + 1e-6);
            }
        }
    }
}
