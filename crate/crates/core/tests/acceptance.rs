//! End-to-end acceptance checks. Runs without the libtest harness so that
//! every criterion prints exactly one PASS/FAIL line.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stationbid::benders::{self, BendersConfig};
use stationbid::evaluation::{
    self, monte_carlo, EvalMode, EvalOptions, PolicyBundle, ScenarioSampler, CONFIDENCE_LEVELS,
};
use stationbid::lp::{Col, Tolerances};
use stationbid::oracle::{self, random_lemma_instance, verify_lemma, LoadForm, OracleOptions};
use stationbid::pipeline::{self, RunConfig, Sweep};
use stationbid::scenario::{self, build_tree, ScenarioSet};
use stationbid::sddp::{
    self, check_convergence, solve_stage, IntervalPartition, SddpConfig, SddpState, StageSpec,
    StopStats,
};
use stationbid::station::{interpolate_volume, Instance, LoadProfile, ModelOptions, StationSpec};
use stationbid::synthetic;
use tempfile::TempDir;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn relaxed() -> OracleOptions {
    OracleOptions {
        load_form: Some(LoadForm::Relaxed),
        ..OracleOptions::default()
    }
}

fn single_leaf(spec: StationSpec) -> Instance {
    let tree = build_tree(
        &ScenarioSet::deterministic(synthetic::DESK_DA.to_vec()),
        &ScenarioSet::deterministic(synthetic::DESK_ID.to_vec()),
    )
    .unwrap();
    let loads = LoadProfile::new(
        synthetic::DESK_LOAD_E.to_vec(),
        synthetic::DESK_LOAD_H.iter().map(|h| h / 4.0).collect(),
    )
    .unwrap();
    Instance::new(spec, loads, tree, 3).unwrap()
}

/// Small config on a 40-day synthetic history: 2 DA × 2 ID scenarios over
/// 96 quarters.
fn small_config(dir: &Path) -> RunConfig {
    let path = pipeline::write_synthetic_dataset(dir, 40, 3).unwrap();
    let mut cfg = RunConfig::load(&path).unwrap();
    let s = &mut cfg.settings;
    s.scenarios.k_da = 2;
    s.scenarios.k_id = 2;
    s.solver.intervals = 2;
    s.evaluation.n_draws = 100;
    s.confidence_levels.clear();
    cfg
}

fn oracle_equivalence() -> Outcome {
    let tol = Tolerances::default();
    let inst = synthetic::desk_instance(0);
    let start = Instant::now();
    let o = oracle::solve_extensive(&inst, &relaxed(), &tol)
        .map_err(|e| e.to_string())?
        .report
        .lp_objective;
    let sol = benders::run(&inst, &BendersConfig::default(), &tol).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let rel = (sol.objective - o).abs() / o.abs().max(1.0);
    ensure!(
        sol.converged,
        "Benders did not converge in {} iterations",
        sol.iterations
    );
    ensure!(
        rel <= 1e-3,
        "objective {} vs oracle {o} (rel {rel:.2e})",
        sol.objective
    );
    ensure!(secs < 60.0, "took {secs:.1} s");
    Ok(format!(
        "benders {:.6} oracle {o:.6} rel {rel:.1e} in {secs:.2} s",
        sol.objective
    ))
}

fn lemma_suite() -> Outcome {
    let tol = Tolerances::default();
    // Free intra-hour DA allocation, the formulation the complementarity
    // argument covers; equal quarter deliveries can force zero-value surplus.
    let oopts = OracleOptions {
        uniform_da_delivery: false,
        ..OracleOptions::default()
    };
    let mopts = ModelOptions {
        uniform_da_delivery: false,
        ..ModelOptions::default()
    };
    let (mut worst_b, mut worst_h, mut worst_obj) = (0.0f64, 0.0f64, 0.0f64);
    let mut degenerate = 0;
    for seed in 0..100 {
        let inst = random_lemma_instance(seed, 1 + (seed as usize % 3));
        let ext = oracle::solve_extensive(&inst, &oopts, &tol).map_err(|e| e.to_string())?;
        let c = verify_lemma(&inst, &mopts, &ext.solution, &ext.index, &tol)
            .map_err(|e| e.to_string())?;
        ensure!(c.precondition_met, "seed {seed}: efficiencies not below 1");
        let rel = (c.lp_objective - c.mip_objective).abs() / c.lp_objective.abs().max(1.0);
        worst_b = worst_b.max(c.max_battery_product);
        worst_h = worst_h.max(c.max_tank_product);
        worst_obj = worst_obj.max(rel);
        ensure!(
            c.max_battery_product <= 1e-6 && c.max_tank_product <= 1e-6,
            "seed {seed}: products {:?}",
            c.violators
        );
        ensure!(
            rel <= 1e-6,
            "seed {seed}: LP {} vs MIP {}",
            c.lp_objective,
            c.mip_objective
        );

        let ext = oracle::solve_extensive(&inst, &OracleOptions::default(), &tol)
            .map_err(|e| e.to_string())?;
        let u = verify_lemma(
            &inst,
            &ModelOptions::default(),
            &ext.solution,
            &ext.index,
            &tol,
        )
        .map_err(|e| e.to_string())?;
        if !u.violators.is_empty() {
            ensure!(
                u.violators.iter().all(|v| v.energy_value <= 1e-9),
                "seed {seed}: cycling where energy has value"
            );
            ensure!(
                (u.lp_objective - u.mip_objective).abs() <= 1e-6 * u.lp_objective.abs().max(1.0),
                "seed {seed}: uniform LP/MIP differ"
            );
            degenerate += 1;
        }
    }
    Ok(format!(
        "100 instances, max b_c·b_d {worst_b:.1e}, max h_c·h_d {worst_h:.1e}, max LP/MIP rel {worst_obj:.1e}; \
         equal-quarter delivery: {degenerate} zero-value cycling vertices, objectives equal"
    ))
}

fn curve_legality() -> Outcome {
    let tol = Tolerances::default();
    let mut curves = 0;
    for seed in 0..10 {
        let sol = benders::run(
            &synthetic::desk_instance(seed),
            &BendersConfig::default(),
            &tol,
        )
        .map_err(|e| e.to_string())?;
        for c in sol.curves.da.iter().chain(sol.curves.id.iter().flatten()) {
            ensure!(
                c.volumes.windows(2).all(|w| w[1] <= w[0]),
                "seed {seed}: increasing curve {:?}",
                c.volumes
            );
            for (p, v) in c.grid.steps().iter().zip(&c.volumes) {
                let got = interpolate_volume(c, *p).map_err(|e| e.to_string())?;
                ensure!(got == *v, "seed {seed}: volume at {p} is {got}, stored {v}");
            }
            curves += 1;
        }
    }
    Ok(format!("{curves} curves non-increasing, breakpoints exact"))
}

fn benders_bounds() -> Outcome {
    let tol = Tolerances::default();
    let mut rows = 0;
    for seed in 0..5 {
        let sol = benders::run(
            &synthetic::desk_instance(seed),
            &BendersConfig::default(),
            &tol,
        )
        .map_err(|e| e.to_string())?;
        let scale = sol.objective.abs().max(1.0);
        for w in sol.trace.windows(2) {
            ensure!(
                w[1].ub_eur <= w[0].ub_eur,
                "seed {seed}: UB rose {} -> {}",
                w[0].ub_eur,
                w[1].ub_eur
            );
        }
        for r in &sol.trace {
            ensure!(
                r.ub_eur >= r.lb_eur - 1e-7 * scale,
                "seed {seed}: UB {} below LB {}",
                r.ub_eur,
                r.lb_eur
            );
        }
        rows += sol.trace.len();
    }
    let mut worst = 0;
    for spec in [
        StationSpec::default(),
        StationSpec::default().without_storage(),
    ] {
        let sol = benders::run(&single_leaf(spec), &BendersConfig::default(), &tol)
            .map_err(|e| e.to_string())?;
        ensure!(
            sol.gap <= 1e-6 && sol.iterations <= 5,
            "single leaf: gap {} after {} iterations",
            sol.gap,
            sol.iterations
        );
        worst = worst.max(sol.iterations);
    }
    Ok(format!(
        "{rows} iterations checked, single leaf closes in ≤ {worst}"
    ))
}

fn optimal_m_d(inst: &Instance) -> Vec<Vec<f64>> {
    let ext = oracle::solve_extensive(inst, &relaxed(), &Tolerances::default()).unwrap();
    let v = |c: Col| ext.solution.value(c).max(0.0);
    ext.index
        .da
        .m_d
        .iter()
        .map(|cols| cols.iter().map(|&c| v(c)).collect())
        .collect()
}

fn sddp_correctness() -> Outcome {
    let tol = Tolerances::default();
    // (a) deterministic fixpoint
    let inst = single_leaf(StationSpec::default());
    for q in [1, 2, 8] {
        let cfg = SddpConfig {
            intervals: q,
            ..SddpConfig::default()
        };
        let mut state = SddpState::new(1, q);
        let res = sddp::run(
            &inst,
            &[vec![0.0; 8]],
            &mut state,
            &cfg,
            &tol,
            1,
            &mut Vec::new(),
        )
        .map_err(|e| e.to_string())?;
        ensure!(
            res.converged && (res.zbar - res.z).abs() <= 1e-6,
            "Q={q}: zbar {} z {}",
            res.zbar,
            res.z
        );
    }

    // (b) pinning duals against central differences
    let inst = synthetic::desk_instance(5);
    let m_d = optimal_m_d(&inst);
    let cfg = SddpConfig {
        intervals: 4,
        ..SddpConfig::default()
    };
    let mut state = SddpState::new(2, 4);
    sddp::run(&inst, &m_d, &mut state, &cfg, &tol, 1, &mut Vec::new())
        .map_err(|e| e.to_string())?;
    let partition = IntervalPartition::new(8, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut checked, mut attempts, mut worst) = (0, 0, 0.0f64);
    let s = &inst.spec;
    while checked < 20 && attempts < 400 {
        attempts += 1;
        let (g, q) = (attempts % 2, attempts % 4);
        let stage = StageSpec {
            inst: &inst,
            group: g,
            partition,
            interval: q,
            m_d: &m_d[g],
        };
        let cuts = &state.pools[g][q];
        let x: Vec<(f64, f64)> = (0..2)
            .map(|_| {
                (
                    rng.random_range(s.b_l_min + 0.02..s.b_l_max - 0.02),
                    rng.random_range(s.h_l_min + 0.02..s.h_l_max - 0.02),
                )
            })
            .collect();
        let value = |which: usize, d: f64| {
            let mut y = x.clone();
            if which == 0 {
                y[0].0 += d
            } else {
                y[0].1 += d
            }
            solve_stage(&stage, &y, cuts, None, &tol).map(|o| o.value)
        };
        let out = solve_stage(&stage, &x, cuts, None, &tol).map_err(|e| e.to_string())?;
        for which in 0..2 {
            let delta = 0.01;
            let (lo, hi) = (
                value(which, -delta).map_err(|e| e.to_string())?,
                value(which, delta).map_err(|e| e.to_string())?,
            );
            let (fwd, bwd) = ((hi - out.value) / delta, (out.value - lo) / delta);
            if (fwd - bwd).abs() > 1e-7 * fwd.abs().max(1.0) {
                continue;
            }
            let fd = (hi - lo) / (2.0 * delta);
            let dual = if which == 0 {
                out.tau[0].0
            } else {
                out.tau[0].1
            };
            let rel = (dual - fd).abs() / dual.abs().max(1.0);
            ensure!(
                rel <= 1e-4,
                "interval {q} store {which}: dual {dual} fd {fd}"
            );
            worst = worst.max(rel);
            checked += 1;
        }
    }
    ensure!(checked >= 20, "only {checked} non-degenerate states");

    // (c) stop band
    let at = |zbar: f64, sigma: f64, samples: usize| StopStats {
        zbar,
        z: 10.0,
        sigma,
        samples,
    };
    ensure!(
        check_convergence(&at(11.96, 1.0, 5), 1e-6) && check_convergence(&at(8.04, 1.0, 5), 1e-6),
        "band edge rejected"
    );
    ensure!(
        !check_convergence(&at(11.960001, 1.0, 5), 1e-6)
            && !check_convergence(&at(8.039999, 1.0, 5), 1e-6),
        "outside band accepted"
    );
    ensure!(
        !check_convergence(&at(10.0 + 2e-6, 3.0, 1), 1e-6),
        "single sample ignores tolerance"
    );
    Ok(format!(
        "fixpoint at Q=1,2,8; {checked} slopes max rel {worst:.1e}; 1.96σ band exact"
    ))
}

fn scenario_generation() -> Outcome {
    let hist = synthetic::price_history(120, 7);
    let rows: Vec<Vec<f64>> = hist.da.iter().map(|d| d.1.clone()).collect();
    for seed in 0..50 {
        let r = scenario::kmeans(&rows, 5, seed, 100).map_err(|e| e.to_string())?;
        for w in r.objective_history.windows(2) {
            ensure!(w[1] <= w[0], "seed {seed}: J rose {} -> {}", w[0], w[1]);
        }
    }
    let pts: Vec<Vec<f64>> = [0.0, 1.0, 9.0, 10.0].iter().map(|&x| vec![x]).collect();
    let r = scenario::kmeans(&pts, 2, 0, 100).map_err(|e| e.to_string())?;
    let mut c: Vec<f64> = r.clusters.iter().map(|c| c.centroid[0]).collect();
    c.sort_by(f64::total_cmp);
    ensure!(
        c == [0.5, 9.5] && r.objective() == 1.0,
        "centroids {c:?} J {}",
        r.objective()
    );

    let id_rows: Vec<Vec<f64>> = hist.id.iter().map(|d| d.1.clone()).collect();
    let km = scenario::kmeans(&rows, 4, 1, 100).map_err(|e| e.to_string())?;
    let da = ScenarioSet::from_clusters(
        &km.clusters,
        &scenario::cluster_probabilities(&km.assignment, 4),
    )
    .map_err(|e| e.to_string())?;
    let sets = scenario::conditional_id_sets(&km.assignment, 4, &id_rows, 3, 1, 100)
        .map_err(|e| e.to_string())?;
    let tree = scenario::build_tree_conditional(&da, sets).map_err(|e| e.to_string())?;
    let total: f64 = tree.leaves.iter().map(|l| l.probability).sum();
    ensure!(
        (total - 1.0).abs() <= 1e-12,
        "leaf probabilities sum to {total}"
    );
    Ok(format!(
        "Lloyd monotone over 50 seeds; {{0,1,9,10}} → {c:?}, J=1; {} leaves sum to 1",
        tree.leaves.len()
    ))
}

fn arbitrage() -> Outcome {
    let tol = Tolerances::default();
    let spec = StationSpec::default();
    let mut found = Vec::new();
    for (cheap, dear) in [(42.0, 162.0), (100.0, 130.0), (100.0, 110.0)] {
        let id: Vec<f64> = (0..8).map(|t| if t < 4 { cheap } else { dear }).collect();
        let tree = build_tree(
            &ScenarioSet::deterministic(vec![cheap, dear]),
            &ScenarioSet::deterministic(id),
        )
        .unwrap();
        let l_e = (0..8).map(|t| if t < 4 { 0.0 } else { 10.0 }).collect();
        let l_h = (0..8).map(|t| if t < 4 { 0.0 } else { 1.0 }).collect();
        let inst =
            Instance::new(spec.clone(), LoadProfile::new(l_e, l_h).unwrap(), tree, 3).unwrap();
        let ext = oracle::solve_extensive(&inst, &OracleOptions::default(), &tol)
            .map_err(|e| e.to_string())?;
        let q = &ext.index.leaves[0];
        let x = |c: Col| ext.solution.value(c);
        let sum = |r: std::ops::Range<usize>, f: &dyn Fn(usize) -> f64| r.map(f).sum::<f64>();
        let ratio = dear / cheap;
        for (store, eta, c, d) in [
            (
                "battery",
                spec.eta_b,
                sum(0..4, &|t| x(q[t].b_c)),
                sum(4..8, &|t| x(q[t].b_d)),
            ),
            (
                "tank",
                spec.eta_h,
                sum(0..4, &|t| x(q[t].h_c)),
                sum(4..8, &|t| x(q[t].h_d)),
            ),
        ] {
            let wrong_way = match store {
                "battery" => sum(4..8, &|t| x(q[t].b_c)) + sum(0..4, &|t| x(q[t].b_d)),
                _ => sum(4..8, &|t| x(q[t].h_c)) + sum(0..4, &|t| x(q[t].h_d)),
            };
            ensure!(
                wrong_way < 1e-9,
                "{cheap}/{dear} {store}: charges dear or discharges cheap"
            );
            let pays = ratio > 1.0 / (eta * eta);
            if pays {
                ensure!(
                    c > 1e-6 && d > 1e-6,
                    "{cheap}/{dear} {store}: no arbitrage (charge {c}, discharge {d})"
                );
                found.push(format!("{store}@{cheap}/{dear}"));
            } else {
                ensure!(
                    c < 1e-9 && d < 1e-9,
                    "{cheap}/{dear} {store}: loss-making cycle (charge {c}, discharge {d})"
                );
            }
        }
    }
    Ok(format!(
        "cycles exactly where the ratio beats 1/η²: {}",
        found.join(", ")
    ))
}

fn identity_holds(policy: &PolicyBundle, tol: &Tolerances) -> Result<f64, String> {
    let n = policy.tree.leaves.len();
    let sampler = ScenarioSampler {
        tree: policy.tree.clone(),
    };
    let mut worst = 0.0f64;
    for mode in [EvalMode::Reoptimize, EvalMode::Replay] {
        let opts = EvalOptions {
            n_draws: n,
            mode,
            ..EvalOptions::default()
        };
        let rep = monte_carlo(policy, &sampler, &opts, tol).map_err(|e| e.to_string())?;
        for d in &rep.draws {
            let want = policy.leaf_objective(d.draw % n);
            let err = (d.profit - want).abs() / want.abs().max(1.0);
            ensure!(
                err <= 1e-9,
                "{mode:?} draw {}: {} vs {want}",
                d.draw,
                d.profit
            );
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

fn confidence_substitute() -> Outcome {
    let tol = Tolerances::default();
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path());
    let inputs = pipeline::load_inputs(&cfg).map_err(|e| e.to_string())?;
    let study = evaluation::confidence_study(&inputs, &CONFIDENCE_LEVELS, &cfg.settings, &tol)
        .map_err(|e| e.to_string())?;
    ensure!(study.rows.len() == 4, "{} rows", study.rows.len());
    println!("  level    mean(EUR)    variance");
    for r in &study.rows {
        ensure!(
            r.mean.is_finite() && r.variance.is_finite() && r.variance >= 0.0,
            "level {}: {r:?}",
            r.level
        );
        println!("  {:.1}  {:>11.4}  {:>10.4}", r.level, r.mean, r.variance);
    }

    let desk = {
        let inst = synthetic::desk_instance(0);
        let sol =
            benders::run(&inst, &BendersConfig::default(), &tol).map_err(|e| e.to_string())?;
        PolicyBundle::from_solution(&inst, &sol, false)
    };
    let run =
        pipeline::solve_and_evaluate(&inputs, &cfg.settings, &tol).map_err(|e| e.to_string())?;
    let worst = identity_holds(&desk, &tol)?.max(identity_holds(&run.policy, &tol)?);
    Ok(format!(
        "4 levels evaluated; degenerate sampler identity max rel {worst:.1e}"
    ))
}

fn collect_files(dir: &Path, prefix: &str, out: &mut Vec<String>) {
    for e in fs::read_dir(dir).unwrap() {
        let e = e.unwrap();
        let name = format!("{prefix}{}", e.file_name().to_string_lossy());
        if e.file_type().unwrap().is_dir() {
            collect_files(&e.path(), &format!("{name}/"), out);
        } else if !e.file_name().to_string_lossy().starts_with("timings") {
            out.push(name);
        }
    }
}

fn determinism() -> Outcome {
    let tol = Tolerances::default();
    let tmp = TempDir::new().unwrap();
    let base = small_config(tmp.path());
    let run = |dir: &str| -> Result<(), String> {
        let mut cfg = base.clone();
        cfg.output_dir = tmp.path().join(dir);
        cfg.settings.confidence_levels = vec![0.7];
        pipeline::cmd_ingest(&cfg).map_err(|e| e.to_string())?;
        pipeline::cmd_solve(&cfg, false, &tol).map_err(|e| e.to_string())?;
        let sweep = Sweep {
            param: evaluation::SensitivityParam::LambdaH,
            multipliers: vec![0.5, 1.5],
        };
        pipeline::cmd_evaluate(&cfg, Some(&sweep), &tol).map_err(|e| e.to_string())?;
        Ok(())
    };
    run("a")?;
    run("b")?;
    let mut files = Vec::new();
    collect_files(&tmp.path().join("a"), "", &mut files);
    files.sort();
    ensure!(files.len() >= 10, "only {} files", files.len());
    for f in &files {
        let (a, b) = (
            fs::read(tmp.path().join("a").join(f)),
            fs::read(tmp.path().join("b").join(f)),
        );
        ensure!(a.is_ok() && a.ok() == b.ok(), "{f} differs between runs");
    }
    Ok(format!("{} files byte-identical", files.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("oracle equivalence", oracle_equivalence),
        ("LP/MIP complementarity", lemma_suite),
        ("bid-curve legality", curve_legality),
        ("Benders bounds", benders_bounds),
        ("SDDP correctness", sddp_correctness),
        ("scenario generation", scenario_generation),
        ("storage arbitrage", arbitrage),
        ("confidence study", confidence_substitute),
        ("determinism", determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let res = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match res {
            Ok(detail) => println!("PASS criterion {}: {name}: {detail} [{secs:.1} s]", k + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {}: {name}: {why} [{secs:.1} s]", k + 1);
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
