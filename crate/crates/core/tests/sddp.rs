use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stationbid::lp::{self, Tolerances};
use stationbid::oracle::{self, LoadForm, OracleOptions};
use stationbid::scenario::{build_tree, ScenarioSet};
use stationbid::sddp::{
    self, check_convergence, solve_stage, IntervalPartition, SddpConfig, SddpState, StageSpec,
    StopStats,
};
use stationbid::station::{Instance, LoadProfile, ModelOptions, StationSpec, QUARTERS_PER_HOUR};
use stationbid::synthetic;

fn relaxed() -> OracleOptions {
    OracleOptions {
        load_form: Some(LoadForm::Relaxed),
        ..OracleOptions::default()
    }
}

/// DA purchases of the extensive optimum, `[group][quarter]`.
fn optimal_m_d(inst: &Instance) -> Vec<Vec<f64>> {
    let ext = oracle::solve_extensive(inst, &relaxed(), &Tolerances::default()).unwrap();
    ext.index
        .da
        .m_d
        .iter()
        .map(|cols| {
            cols.iter()
                .map(|&c| ext.solution.value(c).max(0.0))
                .collect()
        })
        .collect()
}

/// Expected ID profit at fixed DA purchases, from the extensive LP with the
/// DA columns pinned.
fn fixed_da_value(inst: &Instance, m_d: &[Vec<f64>]) -> f64 {
    let opts = ModelOptions {
        relaxed_load: true,
        ..ModelOptions::default()
    };
    let (mut p, idx) = inst.extensive(&opts).unwrap();
    for (cols, vals) in idx.da.m_d.iter().zip(m_d) {
        for (&c, &v) in cols.iter().zip(vals) {
            p.set_bounds(c, v, v);
        }
    }
    let s = lp::solve(&p, &Tolerances::default());
    assert!(s.is_optimal(), "{:?}", s.status);
    let da_cost: f64 = m_d
        .iter()
        .zip(
            inst.tree
                .da
                .scenarios
                .iter()
                .zip(&inst.tree.da.probabilities),
        )
        .map(|(m, (prices, pr))| {
            m.iter()
                .enumerate()
                .map(|(t, v)| pr * v * prices[t / QUARTERS_PER_HOUR] / 1000.0)
                .sum::<f64>()
        })
        .sum();
    s.objective - inst.revenue() + da_cost
}

fn run(inst: &Instance, m_d: &[Vec<f64>], q: usize) -> (sddp::SddpResult, SddpState) {
    let cfg = SddpConfig {
        intervals: q,
        ..SddpConfig::default()
    };
    let mut state = SddpState::new(inst.tree.da.len(), q);
    let mut trace = Vec::new();
    let res = sddp::run(
        inst,
        m_d,
        &mut state,
        &cfg,
        &Tolerances::default(),
        1,
        &mut trace,
    )
    .unwrap();
    (res, state)
}

fn single_leaf() -> Instance {
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
    Instance::new(StationSpec::default(), loads, tree, 3).unwrap()
}

#[test]
fn stop_rule_band() {
    let at = |zbar: f64, z: f64, sigma: f64, samples: usize| StopStats {
        zbar,
        z,
        sigma,
        samples,
    };
    assert!(check_convergence(&at(10.0, 10.0, 0.0, 5), 1e-6));
    assert!(!check_convergence(&at(13.0, 10.0, 1.0, 5), 1e-6));
    assert!(check_convergence(&at(11.96, 10.0, 1.0, 5), 1e-6));
    assert!(check_convergence(&at(8.04, 10.0, 1.0, 5), 1e-6));
    assert!(!check_convergence(&at(11.960001, 10.0, 1.0, 5), 1e-6));
    assert!(!check_convergence(&at(8.039999, 10.0, 1.0, 5), 1e-6));
    // One sample: deterministic comparison.
    assert!(check_convergence(&at(10.0 + 5e-7, 10.0, 3.0, 1), 1e-6));
    assert!(!check_convergence(&at(10.0 + 2e-6, 10.0, 3.0, 1), 1e-6));
}

#[test]
fn partition_boundaries() {
    assert!(IntervalPartition::new(96, 7).is_err());
    assert!(IntervalPartition::new(96, 0).is_err());
    let p = IntervalPartition::new(96, 8).unwrap();
    assert_eq!(p.quarters_per_interval(), 12);
    for q in 0..8 {
        assert_eq!(p.t_in(q), 12 * q);
        assert_eq!(p.t_f(q), 12 * q + 11);
    }
}

#[test]
fn sddp_value_matches_pinned_extensive_lp() {
    for seed in 0..3 {
        let inst = synthetic::desk_instance(seed);
        let opt = optimal_m_d(&inst);
        let half: Vec<Vec<f64>> = opt
            .iter()
            .map(|m| m.iter().map(|v| 0.5 * v).collect())
            .collect();
        let zero = vec![vec![0.0; 8]; 2];
        for m_d in [&opt, &half, &zero] {
            let expected = fixed_da_value(&inst, m_d);
            for q in [1, 2, 4, 8] {
                let (res, _) = run(&inst, m_d, q);
                assert!(res.converged, "seed {seed} q {q}");
                let scale = expected.abs().max(1.0);
                assert!(
                    (res.zbar - expected).abs() <= 1e-6 * scale,
                    "seed {seed} q {q}: {} vs {expected}",
                    res.zbar
                );
                assert!(
                    (res.z - expected).abs() <= 1e-6 * scale,
                    "seed {seed} q {q}: {} vs {expected}",
                    res.z
                );
            }
        }
    }
}

#[test]
fn deterministic_instance_reaches_fixpoint() {
    let inst = single_leaf();
    let m_d = vec![vec![0.0; 8]];
    for q in [1, 2, 8] {
        let (res, _) = run(&inst, &m_d, q);
        assert!(res.converged);
        assert!((res.zbar - res.z).abs() <= 1e-6);
        let last = res.stats.last().unwrap();
        assert_eq!(last.samples, 1);
    }
}

fn random_state(
    rng: &mut ChaCha8Rng,
    spec: &StationSpec,
    leaves: usize,
    margin: f64,
) -> Vec<(f64, f64)> {
    (0..leaves)
        .map(|_| {
            (
                rng.random_range(spec.b_l_min + margin..spec.b_l_max - margin),
                rng.random_range(spec.h_l_min + margin..spec.h_l_max - margin),
            )
        })
        .collect()
}

#[test]
fn cuts_bound_exact_last_stage_and_touch_it_on_the_trajectory() {
    let inst = synthetic::desk_instance(4);
    let m_d = optimal_m_d(&inst);
    let (res, state) = run(&inst, &m_d, 2);
    let partition = IntervalPartition::new(8, 2).unwrap();
    let tol = Tolerances::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for g in 0..2 {
        let stage = StageSpec {
            inst: &inst,
            group: g,
            partition,
            interval: 1,
            m_d: &m_d[g],
        };
        let later = &m_d[g][partition.t_f(0) + 1..];
        let cuts = &state.pools[g][0];
        assert!(!cuts.is_empty());
        let bound = |s: &[(f64, f64)]| {
            let b: Vec<f64> = s.iter().map(|x| x.0).collect();
            let h: Vec<f64> = s.iter().map(|x| x.1).collect();
            cuts.iter()
                .map(|c| c.eval(&b, &h, later))
                .fold(f64::INFINITY, f64::min)
        };
        for _ in 0..20 {
            let s = random_state(&mut rng, &inst.spec, 2, 0.0);
            let exact = solve_stage(&stage, &s, &[], None, &tol).unwrap().value;
            assert!(bound(&s) >= exact - 1e-7 * exact.abs().max(1.0));
        }
        let s = &res.groups[g].trajectory.incoming[1];
        let exact = solve_stage(&stage, s, &[], None, &tol).unwrap().value;
        assert!((bound(s) - exact).abs() <= 1e-6 * exact.abs().max(1.0));
    }
}

/// Central difference of the stage value in leaf 0's battery (`which = 0`)
/// or tank level; `None` when the one-sided differences disagree (a kink
/// within the step).
fn fd_slope(
    stage: &StageSpec,
    s: &[(f64, f64)],
    cuts: &[sddp::SddpCut],
    which: usize,
    delta: f64,
) -> Option<f64> {
    let tol = Tolerances::default();
    let value = |d: f64| {
        let mut x = s.to_vec();
        if which == 0 {
            x[0].0 += d;
        } else {
            x[0].1 += d;
        }
        solve_stage(stage, &x, cuts, None, &tol).unwrap().value
    };
    let (lo, mid, hi) = (value(-delta), value(0.0), value(delta));
    let fwd = (hi - mid) / delta;
    let bwd = (mid - lo) / delta;
    ((fwd - bwd).abs() <= 1e-7 * fwd.abs().max(1.0)).then_some((hi - lo) / (2.0 * delta))
}

#[test]
fn pinning_duals_match_finite_differences() {
    let inst = synthetic::desk_instance(5);
    let m_d = optimal_m_d(&inst);
    let (_, state) = run(&inst, &m_d, 4);
    let partition = IntervalPartition::new(8, 4).unwrap();
    let tol = Tolerances::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    let mut attempts = 0;
    while checked < 20 && attempts < 400 {
        attempts += 1;
        let g = attempts % 2;
        let q = attempts % 4;
        let stage = StageSpec {
            inst: &inst,
            group: g,
            partition,
            interval: q,
            m_d: &m_d[g],
        };
        let cuts = &state.pools[g][q];
        let mut s = random_state(&mut rng, &inst.spec, 2, 0.02);
        if attempts == 1 {
            s[0].0 = 3.75;
        }
        let out = solve_stage(&stage, &s, cuts, None, &tol).unwrap();
        for which in 0..2 {
            if let Some(fd) = fd_slope(&stage, &s, cuts, which, 0.01) {
                let dual = if which == 0 {
                    out.tau[0].0
                } else {
                    out.tau[0].1
                };
                assert!(
                    (dual - fd).abs() <= 1e-4 * dual.abs().max(1.0),
                    "q {q} which {which}: dual {dual} fd {fd}"
                );
                checked += 1;
            }
        }
    }
    assert!(
        checked >= 20,
        "only {checked} non-degenerate states in {attempts} draws"
    );
}

#[test]
fn md_slopes_match_finite_differences_on_the_full_horizon() {
    let inst = synthetic::desk_instance(6);
    let opt = optimal_m_d(&inst);
    let partition = IntervalPartition::new(8, 1).unwrap();
    let tol = Tolerances::default();
    let init = vec![(inst.spec.b_l_init, inst.spec.h_l_init); 2];
    let mut checked = 0;
    for g in 0..2 {
        let base: Vec<f64> = opt[g].iter().map(|v| v * 0.7 + 0.3).collect();
        let stage = |m: &[f64]| {
            solve_stage(
                &StageSpec {
                    inst: &inst,
                    group: g,
                    partition,
                    interval: 0,
                    m_d: m,
                },
                &init,
                &[],
                None,
                &tol,
            )
            .unwrap()
        };
        let out = stage(&base);
        for t in 0..8 {
            let at = |d: f64| {
                let mut m = base.clone();
                m[t] += d;
                stage(&m).value
            };
            let delta = 0.01;
            let (lo, mid, hi) = (at(-delta), out.value, at(delta));
            let (fwd, bwd) = ((hi - mid) / delta, (mid - lo) / delta);
            if (fwd - bwd).abs() > 1e-7 * fwd.abs().max(1.0) {
                continue;
            }
            let fd = (hi - lo) / (2.0 * delta);
            assert!(
                (out.md_slopes[t] - fd).abs() <= 1e-4 * fd.abs().max(1.0),
                "g {g} t {t}: {} vs {fd}",
                out.md_slopes[t]
            );
            checked += 1;
        }
    }
    assert!(checked >= 8, "{checked}");
}

#[test]
fn stored_states_stay_in_their_boxes() {
    let inst = synthetic::desk_instance(2);
    let m_d = optimal_m_d(&inst);
    let (res, _) = run(&inst, &m_d, 8);
    let s = &inst.spec;
    for g in &res.groups {
        for states in &g.trajectory.incoming {
            for &(b, h) in states {
                assert!((s.b_l_min..=s.b_l_max).contains(&b));
                assert!((s.h_l_min..=s.h_l_max).contains(&h));
            }
        }
    }
}

#[test]
fn last_interval_has_no_future_value() {
    let inst = synthetic::desk_instance(0);
    let m_d = vec![vec![0.0; 8]; 2];
    let partition = IntervalPartition::new(8, 2).unwrap();
    let stage = StageSpec {
        inst: &inst,
        group: 0,
        partition,
        interval: 1,
        m_d: &m_d[0],
    };
    let (_, idx) = sddp::build_stage_problem(&stage, &[(0.0, 0.0); 2], &[]).unwrap();
    assert!(idx.theta.is_none());
    let first = StageSpec {
        interval: 0,
        ..stage
    };
    let (_, idx) = sddp::build_stage_problem(&first, &[(0.0, 0.0); 2], &[]).unwrap();
    assert!(idx.theta.is_some() && idx.cut_rows.is_empty());
}
