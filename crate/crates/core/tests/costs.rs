//! Realized costs, Monte Carlo aggregation and paired comparisons.

use mfsg_core::costs::{
    cost_report, cost_samples, delta_sweep, monte_carlo, paired_differences,
    realized_follower_cost, realized_leader_cost, realized_social_cost, report_from_samples,
    samples_to_csv, Solution,
};
use mfsg_core::openloop::MtMethod;
use mfsg_core::simulate::{draw, Mode};
use mfsg_core::stats::estimate;
use mfsg_core::{Mat, ModelParams, TimeGrid};

fn s(x: f64) -> Mat {
    Mat::from_element(1, 1, x)
}

fn coarse() -> TimeGrid {
    TimeGrid::new(1.0, 1e-2).unwrap()
}

#[test]
fn social_cost_is_the_sum_of_follower_costs() {
    let p = ModelParams::scalar_scenario();
    for mode in [Mode::OpenLoop, Mode::Feedback] {
        let b = Solution::solve(&p, &coarse(), mode)
            .unwrap()
            .simulate(6, 3)
            .unwrap();
        let (total, per_n) = realized_social_cost(&b, &p);
        let sum: f64 = (0..6).map(|i| realized_follower_cost(&b, &p, i)).sum();
        assert!((total - sum).abs() < 1e-10 * sum.abs());
        assert_eq!(per_n, total / 6.0);
    }
}

#[test]
fn costs_are_non_negative_with_separable_control_weights() {
    let mut p = ModelParams::scalar_scenario();
    p.l = s(0.0);
    for mode in [Mode::OpenLoop, Mode::Feedback] {
        let sol = Solution::solve(&p, &coarse(), mode).unwrap();
        for seed in 0..5 {
            let b = sol.simulate(4, seed).unwrap();
            assert!(realized_leader_cost(&b, &p) >= 0.0);
            assert!((0..4).all(|i| realized_follower_cost(&b, &p, i) >= 0.0));
        }
    }
}

#[test]
fn identical_arms_have_zero_difference() {
    let p = ModelParams::scalar_scenario();
    let g = coarse();
    let sol = Solution::solve(&p, &g, Mode::Feedback).unwrap();
    let arm = |n, i| {
        let b = sol.simulate_with(n, i)?;
        Ok((realized_leader_cost(&b, &p), realized_social_cost(&b, &p).1))
    };
    let (d0, d1) = paired_differences(&p, &g, 5, 20, 1, arm, arm).unwrap();
    assert_eq!((d0.mean, d0.se(), d1.mean, d1.se()), (0.0, 0.0, 0.0, 0.0));
}

#[test]
fn pairing_reduces_the_standard_error() {
    let p = ModelParams::scalar_scenario();
    let g = coarse();
    let ol = Solution::solve(&p, &g, Mode::OpenLoop).unwrap();
    let fb = Solution::solve(&p, &g, Mode::Feedback).unwrap();
    let leader = |sol: &Solution, seed: u64| {
        let (noise, init) = draw(&p, &g, 10, seed).unwrap();
        realized_leader_cost(&sol.simulate_with(noise, init).unwrap(), &p)
    };
    let runs = 100u64;
    let paired = paired_differences(
        &p,
        &g,
        10,
        runs as usize,
        0,
        |n, i| Ok((realized_leader_cost(&ol.simulate_with(n, i)?, &p), 0.0)),
        |n, i| Ok((realized_leader_cost(&fb.simulate_with(n, i)?, &p), 0.0)),
    )
    .unwrap()
    .0;
    let unpaired: Vec<f64> = (0..runs)
        .map(|k| leader(&ol, k) - leader(&fb, k + runs))
        .collect();
    assert!(paired.se() < estimate(&unpaired).se());
}

#[test]
fn monte_carlo_is_order_fixed_and_seeded() {
    let runner = |seed: u64| Ok(vec![seed as f64, (seed as f64).sin()]);
    let a = monte_carlo(runner, 50, 10).unwrap();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let b = pool.install(|| monte_carlo(runner, 50, 10).unwrap());
    assert_eq!(a, b);
    assert_eq!(a[0].mean, (10..60).sum::<u64>() as f64 / 50.0);
    assert!(monte_carlo(runner, 0, 1).is_err());
}

#[test]
fn sweep_keeps_grid_order() {
    let p = ModelParams::scalar_scenario();
    let r = delta_sweep(&p, &coarse(), &[0.0, 2.5, 5.0], 4, 5, 9).unwrap();
    let gammas: Vec<f64> = r.points.iter().map(|q| q.gamma0).collect();
    assert_eq!(gammas, [0.0, 2.5, 5.0]);
    assert!(r.points.iter().all(|q| q.outcome.is_ok()));
    let csv = r.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(
        lines[0],
        "gamma0,delta0_mean,delta0_stderr,delta1_mean,delta1_stderr"
    );
    assert!(lines[2].starts_with("2.5,"));
    assert!(delta_sweep(&p, &coarse(), &[], 4, 5, 9).is_err());
}

#[test]
fn realized_costs_track_the_limits() {
    let p = ModelParams::scalar_scenario();
    let g = TimeGrid::new(1.0, 2e-3).unwrap();
    for mode in [Mode::OpenLoop, Mode::Feedback] {
        let sol = Solution::solve(&p, &g, mode).unwrap();
        let r = cost_report(&sol, 50, 100, 5, MtMethod::Moments).unwrap();
        assert!(r.leader_realized.se() / r.leader_realized.mean < 0.1);
        assert!(r.leader_rel_gap() < 0.1, "{mode}: {}", r.to_text());
        assert!(r.social_rel_gap() < 0.1, "{mode}: {}", r.to_text());
        assert!(r.to_text().contains(mode.as_str()));
    }
}

#[test]
fn report_is_assembled_from_per_seed_samples() {
    let p = ModelParams::scalar_scenario();
    let sol = Solution::solve(&p, &coarse(), Mode::Feedback).unwrap();
    let samples = cost_samples(&sol, 3, 5, 11).unwrap();
    let seeds: Vec<u64> = samples.iter().map(|x| x.seed).collect();
    assert_eq!(seeds, [11, 12, 13, 14, 15]);
    let direct = cost_report(&sol, 3, 5, 11, MtMethod::Moments).unwrap();
    let rebuilt = report_from_samples(&sol, 3, 11, &samples, MtMethod::Moments).unwrap();
    assert_eq!(direct, rebuilt);
    let leader: Vec<f64> = samples.iter().map(|x| x.leader).collect();
    assert_eq!(direct.leader_realized, estimate(&leader));
    let csv = samples_to_csv(&samples);
    assert_eq!(
        csv.lines().next(),
        Some("seed,leader,social_per_n,epsilon1")
    );
    assert_eq!(csv.lines().count(), 6);
    assert!(cost_samples(&sol, 0, 5, 11).is_err());
    assert!(cost_samples(&sol, 3, 0, 11).is_err());
}
