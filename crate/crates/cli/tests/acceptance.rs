//! Acceptance checks for the scalar scenario, one line per criterion.
//!
//! Runs without the libtest harness so that every line is printed. The
//! process fails when a criterion outside [`KNOWN_DEVIATIONS`] fails, or
//! when a listed deviation starts passing (the list must then be updated).

use std::fs;
use std::process::{Command, ExitCode};
use std::time::Instant;

use mfsg_core::costs::{cost_report, delta_at, monte_carlo, Solution};
use mfsg_core::feedback::{feedback_rhs, solve_feedback};
use mfsg_core::matgrid::centered_residual;
use mfsg_core::openloop::{solve, solve_pi, MtMethod, OpenLoopCoefficients};
use mfsg_core::simulate::{
    decoupling_residual, draw, meanfield_gap, simulate_openloop, simulate_openloop_with, Mode,
};
use mfsg_core::stats::fit_slope;
use mfsg_core::{Mat, MatrixPath, ModelParams, TimeGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria expected to fail, with the reason. See the README.
const KNOWN_DEVIATIONS: &[(u32, &str)] = &[(
    7,
    "the Gamma0 sign pattern holds on part of [0, 5] only; the point check at Gamma0 = 1 passes",
)];

const SEED: u64 = 42;

type Criterion = (u32, &'static str, fn() -> Verdict);

struct Verdict {
    passed: bool,
    detail: String,
    /// Failed parts that no known deviation may excuse.
    required_failed: bool,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict {
        passed,
        detail,
        required_failed: false,
    }
}

fn grid(t: f64, dt: f64) -> TimeGrid {
    TimeGrid::new(t, dt).unwrap()
}

fn pi_initial(p: &ModelParams, dt: f64) -> f64 {
    solve_pi(p, &grid(p.t_end, dt)).unwrap().initial()[(0, 0)]
}

/// Stationary root and RK4 order.
fn riccati_correctness() -> Verdict {
    let mut p = ModelParams::scalar_scenario();
    p.t_end = 10.0;
    let err = (pi_initial(&p, 1e-3) - (6f64.sqrt() - 2.0)).abs();
    // Fine reference at T = 1 for the order study; at dt = 1e-3 the RK4
    // error is already at rounding level, so coarse steps are used.
    let q = ModelParams::scalar_scenario();
    let reference = pi_initial(&q, 1e-4);
    let e: Vec<f64> = [0.1, 0.05, 0.025]
        .iter()
        .map(|&dt| (pi_initial(&q, dt) - reference).abs())
        .collect();
    let factors = [e[0] / e[1], e[1] / e[2]];
    let ok = err < 1e-4 && factors.iter().all(|f| (12.0..=20.0).contains(f));
    verdict(
        ok,
        format!(
            "|Pi(0) - (sqrt6 - 2)| = {err:.2e}; order factors {:.2}, {:.2}",
            factors[0], factors[1]
        ),
    )
}

fn structural_identities() -> Verdict {
    let p = ModelParams::scalar_scenario();
    let g = grid(1.0, 1e-3);
    let ol = solve(&p, &g).unwrap();
    let fb = solve_feedback(&p, &g).unwrap();
    let mf = &ol.meanfield;
    let mut worst: f64 = mf.pi0.max_abs_diff(&mf.m.transpose());
    worst = worst.max(fb.lambdabar.max_abs_diff(&fb.k0.transpose()));
    for path in [
        &ol.pi,
        &mf.pibar,
        &mf.m0,
        &fb.lambda0,
        &fb.psi1,
        &fb.psi2,
        &ol.p,
    ] {
        worst = worst.max(path.max_asymmetry());
    }
    let k_gap = fb.k.max_abs_diff(&ol.pi);
    verdict(
        worst < 1e-8 && k_gap < 1e-12,
        format!("max identity gap {worst:.2e}; |K - Pi| = {k_gap:.2e}"),
    )
}

fn ode_residuals() -> Verdict {
    // Locked at the first verified run: measured 0.50, 0.70, 2.00, 2.00.
    const C: [f64; 4] = [0.6, 0.85, 2.4, 2.4];
    let p = ModelParams::scalar_scenario();
    let c = OpenLoopCoefficients::new(&p).unwrap();
    let mut ratios = [0.0f64; 4];
    for dt in [1e-3, 2e-3] {
        let g = grid(1.0, dt);
        let ol = solve(&p, &g).unwrap();
        let fb = solve_feedback(&p, &g).unwrap();
        let mf = &ol.meanfield;
        let r = [
            centered_residual(&[&ol.pi], |y| vec![c.pi_rhs(&y[0])]),
            centered_residual(&[&mf.pibar, &mf.m, &mf.m0, &mf.pi0], |y| c.meanfield_rhs(y)),
            centered_residual(&[&mf.pibar, &mf.m, &mf.m0, &mf.pi0, &ol.p], |y| {
                c.leader_rhs(y)
            }),
            centered_residual(
                &[
                    &fb.k,
                    &fb.kbar,
                    &fb.k0,
                    &fb.lambda0,
                    &fb.lambdabar,
                    &fb.psi1,
                    &fb.psi2,
                    &fb.psi3,
                ],
                |y| feedback_rhs(&c, y),
            ),
        ];
        for (k, v) in r.iter().enumerate() {
            ratios[k] = ratios[k].max(v / (dt * dt));
        }
    }
    let ok = ratios.iter().zip(C).all(|(r, c)| *r <= c);
    verdict(
        ok,
        format!(
            "residual/dt^2 = {:.2}, {:.2}, {:.2}, {:.2} (limits {:?})",
            ratios[0], ratios[1], ratios[2], ratios[3], C
        ),
    )
}

fn stationarity() -> Verdict {
    let p = ModelParams::scalar_scenario();
    let g = grid(1.0, 1e-3);
    let fb = solve_feedback(&p, &g).unwrap();
    let base = fb.leader_cost_via_moments().unwrap();
    let closed = fb.leader_cost();
    let rel = (closed - base).abs() / base.abs();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst_drop = f64::NEG_INFINITY;
    for _ in 0..10 {
        let (a, b, w): (f64, f64, f64) = (
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(0.0..6.0),
        );
        let bump = |path: &MatrixPath, amp: f64| {
            MatrixPath::new(
                g,
                (0..g.num_nodes())
                    .map(|k| {
                        path.at(k) + Mat::from_element(1, 1, 1e-3 * amp * (w * g.time(k)).cos())
                    })
                    .collect(),
            )
            .unwrap()
        };
        let cost = fb
            .leader_cost_for_gains(&bump(&fb.gains.p0, a), &bump(&fb.gains.pbar, b))
            .unwrap();
        worst_drop = worst_drop.max(base - cost);
    }
    verdict(
        worst_drop <= 1e-8 && rel < 1e-6,
        format!("largest decrease {worst_drop:.2e}; closed form vs moments {rel:.2e} relative"),
    )
}

fn gap_scaling() -> Verdict {
    let p = ModelParams::scalar_scenario();
    let ol = solve(&p, &grid(1.0, 1e-3)).unwrap();
    let sizes = [10usize, 40, 160];
    let means: Vec<f64> = sizes
        .iter()
        .map(|&n| {
            monte_carlo(
                |s| Ok(vec![meanfield_gap(&simulate_openloop(&ol, n, s)?).sup_gap2]),
                200,
                SEED,
            )
            .unwrap()[0]
                .mean
        })
        .collect();
    let x: Vec<f64> = sizes.iter().map(|&n| (n as f64).ln()).collect();
    let y: Vec<f64> = means.iter().map(|m| m.ln()).collect();
    let slope = fit_slope(&x, &y).unwrap();
    verdict(
        (-1.4..=-0.6).contains(&slope),
        format!("log-log slope {slope:.3}"),
    )
}

fn cost_consistency() -> Verdict {
    let p = ModelParams::scalar_scenario();
    let g = grid(1.0, 1e-3);
    let mut ok = true;
    let mut parts = Vec::new();
    for mode in [Mode::OpenLoop, Mode::Feedback] {
        let sol = Solution::solve(&p, &g, mode).unwrap();
        let r = cost_report(&sol, 100, 200, SEED, MtMethod::Moments).unwrap();
        ok &= r.leader_rel_gap() < 0.1 && r.social_rel_gap() < 0.1;
        parts.push(format!(
            "{mode}: leader {:.3}, social {:.3}",
            r.leader_rel_gap(),
            r.social_rel_gap()
        ));
    }
    verdict(ok, format!("relative gaps {}", parts.join("; ")))
}

fn qualitative_reproduction() -> Verdict {
    let p = ModelParams::scalar_scenario();
    let g = grid(1.0, 1e-3);
    let (d0, d1) = delta_at(&p, &g, 1.0, 20, 200, SEED).unwrap();
    let point = d0.mean + 2.0 * d0.se() < 0.0 && d1.mean - 2.0 * d1.se() > 0.0;
    let mut holding = Vec::new();
    for k in 0..11 {
        let gamma = 0.5 * k as f64;
        let (a, b) = delta_at(&p, &g, gamma, 20, 200, SEED).unwrap();
        if a.mean + 2.0 * a.se() < 0.0 && b.mean - 2.0 * b.se() > 0.0 {
            holding.push(gamma.to_string());
        }
    }
    let holds = holding.len();
    let mut v = verdict(
        point && holds >= 9,
        format!(
            "(a) Gamma0 = 1: Delta0 = {:.4} +/- {:.4}, Delta1 = {:.4} +/- {:.4} -> {}; \
             (b) sign pattern at {holds} of 11 points (need 9): Gamma0 in {{{}}}",
            d0.mean,
            d0.se(),
            d1.mean,
            d1.se(),
            if point { "PASS" } else { "FAIL" },
            holding.join(", ")
        ),
    );
    v.required_failed = !point;
    v
}

fn decoupling() -> Verdict {
    let p = ModelParams::scalar_scenario();
    let (fine, coarse) = (grid(1.0, 1e-3), grid(1.0, 2e-3));
    let (sf, sc) = (solve(&p, &fine).unwrap(), solve(&p, &coarse).unwrap());
    let (noise, init) = draw(&p, &fine, 20, SEED).unwrap();
    let bc = simulate_openloop_with(&sc, noise.coarsened().unwrap(), init.clone()).unwrap();
    let bf = simulate_openloop_with(&sf, noise, init).unwrap();
    let ratios: Vec<f64> = (0..20)
        .map(|i| {
            decoupling_residual(&sc, &bc, i).unwrap() / decoupling_residual(&sf, &bf, i).unwrap()
        })
        .collect();
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(0.0, f64::max);
    verdict(
        lo >= 1.5 && hi <= 3.0,
        format!("coarse/fine residual ratios in [{lo:.3}, {hi:.3}] over 20 followers"),
    )
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let outs = [dir.path().join("first"), dir.path().join("second")];
    let scenario = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/scalar.cfg");
    for out in &outs {
        let status = Command::new(env!("CARGO_BIN_EXE_mfsg"))
            .args([
                "simulate", "--config", scenario, "--mode", "feedback", "--out",
            ])
            .arg(out)
            .output()
            .unwrap()
            .status;
        if !status.success() {
            return verdict(false, format!("simulate exited with {status}"));
        }
    }
    let mut compared = 0;
    for entry in fs::read_dir(&outs[0]).unwrap() {
        let name = entry.unwrap().file_name();
        if !name.to_string_lossy().ends_with(".csv") {
            continue;
        }
        let a = fs::read(outs[0].join(&name)).unwrap();
        let b = fs::read(outs[1].join(&name)).unwrap();
        if a != b {
            return verdict(false, format!("{} differs", name.to_string_lossy()));
        }
        compared += 1;
    }
    verdict(
        compared >= 2,
        format!("{compared} CSV files byte-identical across two runs"),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        (1, "Riccati correctness", riccati_correctness),
        (2, "structural identities", structural_identities),
        (3, "ODE residuals", ode_residuals),
        (4, "feedback gain stationarity", stationarity),
        (5, "mean-field gap scaling", gap_scaling),
        (6, "cost-formula consistency", cost_consistency),
        (7, "qualitative comparison", qualitative_reproduction),
        (8, "decoupling self-consistency", decoupling),
        (9, "determinism", determinism),
    ];
    let mut problems = Vec::new();
    for (id, name, check) in criteria {
        let start = Instant::now();
        let v = check();
        let secs = start.elapsed().as_secs_f64();
        let known = KNOWN_DEVIATIONS.iter().find(|(k, _)| *k == id);
        println!(
            "criterion {id} ({name}): {} [{secs:.1} s] {}",
            if v.passed { "PASS" } else { "FAIL" },
            v.detail
        );
        match (v.passed, known) {
            (false, Some((_, reason))) => {
                println!("    known deviation: {reason}");
                if v.required_failed {
                    problems.push(format!("criterion {id} failed outside its known deviation"));
                }
            }
            (false, None) => problems.push(format!("criterion {id} failed")),
            (true, Some(_)) => problems.push(format!(
                "criterion {id} passes but is listed as a known deviation"
            )),
            (true, None) => {}
        }
    }
    if problems.is_empty() {
        println!("acceptance: all criteria at their expected status");
        ExitCode::SUCCESS
    } else {
        for p in &problems {
            eprintln!("acceptance problem: {p}");
        }
        ExitCode::FAILURE
    }
}
