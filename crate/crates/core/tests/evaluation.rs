use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stationbid::benders::{self, BendersConfig};
use stationbid::evaluation::{
    linspace, monte_carlo, nearest_scenario, sensitivity_sweep, EvalMode, EvalOptions,
    NormalSampler, PolicyBundle, PriceSampler, ScenarioSampler, SensitivityParam, HISTOGRAM_BINS,
};
use stationbid::lp::Tolerances;
use stationbid::market_data::{Market, PriceMatrix};
use stationbid::pipeline::{self, RunConfig};
use stationbid::scenario::ScenarioSet;
use stationbid::synthetic;
use tempfile::TempDir;

fn desk_policy(seed: u64) -> PolicyBundle {
    let inst = synthetic::desk_instance(seed);
    let sol = benders::run(&inst, &BendersConfig::default(), &Tolerances::default()).unwrap();
    PolicyBundle::from_solution(&inst, &sol, false)
}

fn opts(n_draws: usize, mode: EvalMode) -> EvalOptions {
    EvalOptions {
        n_draws,
        mode,
        ..EvalOptions::default()
    }
}

#[test]
fn scenario_sampler_reproduces_leaf_objectives() {
    let tol = Tolerances::default();
    for seed in 0..3 {
        let policy = desk_policy(seed);
        let leaves = policy.tree.leaves.len();
        let sampler = ScenarioSampler {
            tree: policy.tree.clone(),
        };
        for mode in [EvalMode::Reoptimize, EvalMode::Replay] {
            let rep = monte_carlo(&policy, &sampler, &opts(2 * leaves, mode), &tol).unwrap();
            for d in &rep.draws {
                let l = d.draw % leaves;
                assert_eq!(d.leaf, l);
                assert_eq!(d.clipped, 0);
                let want = policy.leaf_objective(l);
                assert!(
                    (d.profit - want).abs() <= 1e-9 * want.abs().max(1.0),
                    "seed {seed} {mode:?} leaf {l}: {} vs {want}",
                    d.profit
                );
            }
            let mean = (0..leaves).map(|l| policy.leaf_objective(l)).sum::<f64>() / leaves as f64;
            assert!((rep.mean - mean).abs() <= 1e-9 * mean.abs().max(1.0));
        }
    }
}

#[test]
fn nearest_scenario_examples() {
    let set = ScenarioSet::new(
        vec![vec![0.0, 0.0], vec![10.0, 10.0], vec![0.0, 20.0]],
        vec![0.2, 0.3, 0.5],
    )
    .unwrap();
    assert_eq!(nearest_scenario(&[10.0, 10.0], &set), 1);
    assert_eq!(nearest_scenario(&[5.0, 5.0], &set), 0);
    assert_eq!(nearest_scenario(&[1.0, 19.0], &set), 2);
    assert_eq!(
        nearest_scenario(&[1e6, -1e6], &ScenarioSet::deterministic(vec![0.0, 0.0])),
        0
    );
}

#[test]
fn empty_run_is_flagged() {
    let policy = desk_policy(0);
    let sampler = ScenarioSampler {
        tree: policy.tree.clone(),
    };
    let rep = monte_carlo(
        &policy,
        &sampler,
        &opts(0, EvalMode::Reoptimize),
        &Tolerances::default(),
    )
    .unwrap();
    assert!(rep.empty && rep.draws.is_empty() && rep.histogram.is_empty());
}

#[test]
fn summary_statistics_follow_the_draws() {
    let policy = desk_policy(1);
    let sampler = desk_sampler(&policy, 30, 4);
    let tol = Tolerances::default();
    let rep = monte_carlo(&policy, &sampler, &opts(300, EvalMode::Reoptimize), &tol).unwrap();
    let p: Vec<f64> = rep.draws.iter().map(|d| d.profit).collect();
    let n = p.len() as f64;
    let mean = p.iter().sum::<f64>() / n;
    let var = p.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((rep.mean - mean).abs() <= 1e-9 * mean.abs().max(1.0));
    assert!((rep.variance - var).abs() <= 1e-9 * var.max(1.0));
    assert!((rep.std_error - (var / n).sqrt()).abs() <= 1e-12 * var.max(1.0));
    assert_eq!(rep.histogram.len(), HISTOGRAM_BINS);
    assert_eq!(
        rep.histogram.iter().map(|b| b.count).sum::<usize>(),
        p.len()
    );
    assert_eq!(rep.histogram[0].lo, rep.min);
    assert_eq!(rep.histogram.last().unwrap().hi, rep.max);
    for w in rep.percentiles.windows(2) {
        assert!(w[0].value <= w[1].value);
    }
    assert!(rep
        .percentiles
        .iter()
        .all(|q| (rep.min..=rep.max).contains(&q.value)));

    let again = monte_carlo(&policy, &sampler, &opts(300, EvalMode::Reoptimize), &tol).unwrap();
    assert_eq!(again.draws, rep.draws);
}

/// Sampler fitted to a synthetic history and cut to the desk's two hours.
fn desk_sampler(policy: &PolicyBundle, days: usize, seed: u64) -> NormalSampler {
    let prices = synthetic::price_history(days, seed);
    let full = |d: &[(chrono::NaiveDate, Vec<f64>)], market| {
        PriceMatrix::new(
            market,
            d.iter().map(|x| x.0).collect(),
            d.iter().map(|x| x.1.clone()).collect(),
        )
        .unwrap()
    };
    let mut s = NormalSampler::fit(
        &full(&prices.da, Market::DayAhead),
        &full(&prices.id, Market::Intraday),
        &policy.grids(),
    )
    .unwrap();
    s.da.truncate(policy.tree.hours());
    s.id.truncate(policy.tree.quarters());
    s
}

#[test]
fn normal_draws_stay_inside_the_grid() {
    let policy = desk_policy(2);
    let g = policy.grids();
    let sampler = desk_sampler(&policy, 20, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for d in 0..500 {
        let draw = sampler.sample(d, &mut rng);
        assert!(draw.da.iter().all(|p| (g.da.lo()..=g.da.hi()).contains(p)));
        assert!(draw.id.iter().all(|p| (g.id.lo()..=g.id.hi()).contains(p)));
    }
}

#[test]
fn unit_multiplier_reproduces_base_profit() {
    let inst = synthetic::desk_instance(0);
    let cfg = BendersConfig::default();
    let tol = Tolerances::default();
    let base = benders::run(&inst, &cfg, &tol).unwrap().objective;
    for param in SensitivityParam::ALL {
        let pts = sensitivity_sweep(&inst, param, &[1.0], &cfg, &tol).unwrap();
        assert_eq!(pts[0].profit, Some(base), "{param}");
    }
    assert!(sensitivity_sweep(&inst, SensitivityParam::LE, &[1.0, -0.5], &cfg, &tol).is_err());
}

#[test]
fn hydrogen_price_dominates_electric_load() {
    let inst = synthetic::desk_instance(1);
    let cfg = BendersConfig::default();
    let tol = Tolerances::default();
    let ks = linspace(0.5, 1.5, 5);
    let range = |param| {
        let pts = sensitivity_sweep(&inst, param, &ks, &cfg, &tol).unwrap();
        let p: Vec<f64> = pts.iter().map(|x| x.profit.unwrap()).collect();
        (
            p.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                - p.iter().copied().fold(f64::INFINITY, f64::min),
            p,
        )
    };
    let (r_lh, p_lh) = range(SensitivityParam::LambdaH);
    let (r_le, _) = range(SensitivityParam::LE);
    assert!(r_lh > r_le, "lambda_h range {r_lh}, l_e range {r_le}");
    // Loads are fixed, so profit is affine in the hydrogen price.
    let rev_h: f64 = inst.loads.l_h.iter().sum::<f64>() * inst.spec.lambda_h;
    for (k, p) in ks.iter().zip(&p_lh) {
        assert!((p - p_lh[2] - (k - 1.0) * rev_h).abs() <= 1e-6 * rev_h);
    }
    assert!(p_lh[0] < p_lh[4]);
}

#[test]
fn out_of_sample_mean_does_not_beat_in_sample() {
    let tmp = TempDir::new().unwrap();
    let path = pipeline::write_synthetic_dataset(tmp.path(), 40, 3).unwrap();
    let mut cfg = RunConfig::load(&path).unwrap();
    let s = &mut cfg.settings;
    s.scenarios.k_da = 2;
    s.scenarios.k_id = 2;
    s.solver.intervals = 2;
    s.evaluation.n_draws = 200;
    let inputs = pipeline::load_inputs(&cfg).unwrap();
    let run = pipeline::solve_and_evaluate(&inputs, &cfg.settings, &Tolerances::default()).unwrap();
    assert!(!run.report.empty);
    assert!(
        run.report.mean <= run.policy.objective + 2.0 * run.report.std_error,
        "mc {} ± {} vs in-sample {}",
        run.report.mean,
        run.report.std_error,
        run.policy.objective
    );
}
