//! Simulation invariants, pairing and scaling properties.

use mfsg_core::costs::{monte_carlo, Solution};
use mfsg_core::feedback::solve_feedback;
use mfsg_core::matgrid::euler_maruyama_path;
use mfsg_core::openloop::solve;
use mfsg_core::simulate::{
    decoupling_residual, draw, meanfield_gap, simulate_feedback, simulate_openloop,
    simulate_openloop_with, Mode,
};
use mfsg_core::stats::estimate;
use mfsg_core::{Mat, ModelParams, TimeGrid};

fn s(x: f64) -> Mat {
    Mat::from_element(1, 1, x)
}

fn noiseless() -> ModelParams {
    let mut p = ModelParams::scalar_scenario();
    for w in [&mut p.d, &mut p.d0, &mut p.xi_cov, &mut p.xi0_cov] {
        *w = s(0.0);
    }
    p
}

#[test]
fn zero_gain_leader_follows_the_plain_em_path() {
    let mut p = ModelParams::scalar_scenario();
    p.q0 = s(0.0);
    p.h0 = s(0.0);
    p.g0 = s(0.0);
    let g = TimeGrid::new(1.0, 1e-2).unwrap();
    let fb = solve_feedback(&p, &g).unwrap();
    assert_eq!(fb.gains.p0.max_abs(), 0.0);
    assert_eq!(fb.gains.pbar.max_abs(), 0.0);
    let b = simulate_feedback(&fb, 3, 9).unwrap();
    let path = euler_maruyama_path(
        |_, x| &p.a0 * x,
        &[p.d0.clone()],
        &b.init.xi0,
        &[b.noise.source(0)],
        &g,
    )
    .unwrap();
    for k in 0..g.num_nodes() {
        assert_eq!(b.x0[(0, k)], path.at(k)[(0, 0)], "node {k}");
    }
}

#[test]
fn zero_system_stays_at_rest() {
    let p = ModelParams::zeros(1, 1, 1);
    let g = TimeGrid::new(1.0, 1e-2).unwrap();
    for mode in [Mode::OpenLoop, Mode::Feedback] {
        let b = Solution::solve(&p, &g, mode)
            .unwrap()
            .simulate(4, 1)
            .unwrap();
        assert_eq!(b.x0.amax(), 0.0);
        assert_eq!(b.x_avg.amax(), 0.0);
        assert_eq!(b.u0.amax(), 0.0);
        assert!(b.xi.iter().chain(&b.ui).all(|m| m.amax() == 0.0));
    }
}

#[test]
fn equal_seeds_give_equal_bundles() {
    let p = ModelParams::scalar_scenario();
    let g = TimeGrid::new(1.0, 1e-2).unwrap();
    let ol = solve(&p, &g).unwrap();
    let a = simulate_openloop(&ol, 6, 17).unwrap();
    let b = simulate_openloop(&ol, 6, 17).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_csv(), b.to_csv());
    let c = simulate_openloop(&ol, 6, 18).unwrap();
    assert_ne!(a.x0, c.x0);
}

#[test]
fn both_modes_share_noise_and_initial_states() {
    let p = ModelParams::scalar_scenario();
    let g = TimeGrid::new(1.0, 1e-2).unwrap();
    let a = simulate_openloop(&solve(&p, &g).unwrap(), 5, 4).unwrap();
    let b = simulate_feedback(&solve_feedback(&p, &g).unwrap(), 5, 4).unwrap();
    assert_eq!(a.noise, b.noise);
    assert_eq!(a.init, b.init);
    assert_eq!(a.x0.column(0), b.x0.column(0));
}

#[test]
fn state_average_is_the_mean_of_followers() {
    let p = ModelParams::scalar_scenario();
    let g = TimeGrid::new(1.0, 1e-2).unwrap();
    for mode in [Mode::OpenLoop, Mode::Feedback] {
        let b = Solution::solve(&p, &g, mode)
            .unwrap()
            .simulate(7, 2)
            .unwrap();
        let mean =
            b.xi.iter()
                .fold(Mat::zeros(1, g.num_nodes()), |acc, x| acc + x)
                / 7.0;
        assert!((mean - &b.x_avg).amax() < 1e-12);
        let gap = meanfield_gap(&b);
        assert!(gap.profile.iter().all(|&v| v >= 0.0));
        assert_eq!(gap.profile.len(), g.num_nodes());
    }
}

#[test]
fn noiseless_gap_vanishes() {
    let p = noiseless();
    let g = TimeGrid::new(1.0, 1e-3).unwrap();
    for mode in [Mode::OpenLoop, Mode::Feedback] {
        let b = Solution::solve(&p, &g, mode)
            .unwrap()
            .simulate(5, 8)
            .unwrap();
        assert!(meanfield_gap(&b).sup_gap2 < 1e-24, "{mode}");
        for x in &b.xi {
            assert!((x - &b.x_avg).amax() < 1e-12);
        }
    }
}

#[test]
fn zero_followers_is_rejected() {
    let p = ModelParams::scalar_scenario();
    let g = TimeGrid::new(1.0, 1e-2).unwrap();
    assert!(draw(&p, &g, 0, 1).is_err());
    assert!(simulate_openloop(&solve(&p, &g).unwrap(), 0, 1).is_err());
}

#[test]
fn gap_shrinks_with_population_size() {
    let p = ModelParams::scalar_scenario();
    let g = TimeGrid::new(1.0, 2e-3).unwrap();
    let ol = solve(&p, &g).unwrap();
    let gap = |n: usize| {
        monte_carlo(
            |seed| {
                Ok(vec![
                    meanfield_gap(&simulate_openloop(&ol, n, seed)?).sup_gap2,
                ])
            },
            200,
            100,
        )
        .unwrap()[0]
    };
    let (one, hundred) = (gap(1), gap(100));
    // Ratio bound at 2σ on the numerator and denominator.
    let lower = one.mean - 2.0 * one.se();
    let upper = hundred.mean + 2.0 * hundred.se();
    assert!(lower / upper >= 10.0, "{one:?} {hundred:?}");
}

#[test]
fn gap_trend_from_twenty_to_one_hundred_sixty() {
    let p = ModelParams::scalar_scenario();
    let g = TimeGrid::new(1.0, 2e-3).unwrap();
    let ol = solve(&p, &g).unwrap();
    let diffs = monte_carlo(
        |seed| {
            let small = meanfield_gap(&simulate_openloop(&ol, 20, seed)?).sup_gap2;
            let large = meanfield_gap(&simulate_openloop(&ol, 160, seed)?).sup_gap2;
            Ok(vec![small.sqrt() - large.sqrt()])
        },
        50,
        300,
    )
    .unwrap()[0];
    assert!(diffs.mean > 2.0 * diffs.se(), "{diffs:?}");
}

#[test]
fn decoupling_residual_is_first_order() {
    let p = ModelParams::scalar_scenario();
    let fine = TimeGrid::new(1.0, 1e-3).unwrap();
    let coarse = TimeGrid::new(1.0, 2e-3).unwrap();
    let sol_f = solve(&p, &fine).unwrap();
    let sol_c = solve(&p, &coarse).unwrap();
    for seed in [1, 2, 3] {
        let (noise, init) = draw(&p, &fine, 4, seed).unwrap();
        let coarse_noise = noise.coarsened().unwrap();
        let bf = simulate_openloop_with(&sol_f, noise, init.clone()).unwrap();
        let bc = simulate_openloop_with(&sol_c, coarse_noise, init).unwrap();
        for i in 0..4 {
            let ratio = decoupling_residual(&sol_c, &bc, i).unwrap()
                / decoupling_residual(&sol_f, &bf, i).unwrap();
            assert!(
                (1.5..=3.0).contains(&ratio),
                "seed {seed} follower {i}: {ratio}"
            );
        }
    }
}

#[test]
fn decoupling_residual_needs_open_loop_bundle() {
    let p = ModelParams::scalar_scenario();
    let g = TimeGrid::new(1.0, 1e-2).unwrap();
    let ol = solve(&p, &g).unwrap();
    let fb = simulate_feedback(&solve_feedback(&p, &g).unwrap(), 2, 1).unwrap();
    assert!(decoupling_residual(&ol, &fb, 0).is_err());
    let b = simulate_openloop(&ol, 2, 1).unwrap();
    assert!(decoupling_residual(&ol, &b, 2).is_err());
}

#[test]
fn open_loop_state_average_exceeds_feedback_on_average() {
    let p = ModelParams::scalar_scenario();
    let g = TimeGrid::new(1.0, 1e-3).unwrap();
    let ol = solve(&p, &g).unwrap();
    let fb = solve_feedback(&p, &g).unwrap();
    let diffs: Vec<f64> = (0..50u64)
        .map(|seed| {
            let a = simulate_openloop(&ol, 20, seed).unwrap();
            let b = simulate_feedback(&fb, 20, seed).unwrap();
            (&a.x_avg - &b.x_avg).mean()
        })
        .collect();
    let e = estimate(&diffs);
    assert!(e.mean > 2.0 * e.se(), "{e:?}");
}
