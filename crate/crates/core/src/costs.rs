//! Realized finite-population costs, Monte-Carlo ensembles, comparison
//! against the limiting cost formulas and the leader-weight sweep.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feedback::{solve_feedback, FeedbackSolution};
use crate::format::fmt_f64;
use crate::matgrid::{trapezoid, BrownianBundle, Mat, TimeGrid};
use crate::model::ModelParams;
use crate::openloop::{self, theoretical_costs, MtMethod, OpenLoopSolution, DEFAULT_MT_PATHS};
use crate::simulate::{
    draw, simulate_feedback_with, simulate_openloop_with, InitialDraws, Mode, TrajectoryBundle,
};
use crate::stats::{estimate, Estimate};

fn quad(v: &Mat, w: &Mat) -> f64 {
    (v.transpose() * w * v)[(0, 0)]
}

fn col(m: &Mat, k: usize) -> Mat {
    m.columns(k, 1).into_owned()
}

/// Leader cost of one realization:
/// `∫‖x₀ − Γ₀x^(N)‖²_{Q₀} + ‖u₀‖²_{R₀} dt + ‖x₀(T) − Γ̄₀x^(N)(T)‖²_{H₀}` (trapezoid).
pub fn realized_leader_cost(bundle: &TrajectoryBundle, params: &ModelParams) -> f64 {
    let grid = bundle.grid;
    let vals: Vec<f64> = (0..grid.num_nodes())
        .map(|k| {
            let x0 = col(&bundle.x0, k);
            let e = &x0 - &params.gamma0 * col(&bundle.x_avg, k);
            quad(&e, &params.q0) + quad(&col(&bundle.u0, k), &params.r0)
        })
        .collect();
    let last = grid.num_steps();
    let e_t = col(&bundle.x0, last) - &params.gamma0_bar * col(&bundle.x_avg, last);
    trapezoid(&vals, grid.dt()) + quad(&e_t, &params.h0)
}

/// Cost of follower `i` for one realization: running
/// `‖xᵢ − Γx^(N) − Γ₁x₀‖²_Q + ‖uᵢ‖²_R + 2uᵢᵀLu₀ + ‖u₀‖²_{R₁}` plus the
/// terminal `‖xᵢ(T) − Γ̄x^(N)(T) − Γ̄₁x₀(T)‖²_H`.
pub fn realized_follower_cost(bundle: &TrajectoryBundle, params: &ModelParams, i: usize) -> f64 {
    let grid = bundle.grid;
    let vals: Vec<f64> = (0..grid.num_nodes())
        .map(|k| {
            let x0 = col(&bundle.x0, k);
            let e = col(&bundle.xi[i], k)
                - &params.gamma * col(&bundle.x_avg, k)
                - &params.gamma1 * &x0;
            let u = col(&bundle.ui[i], k);
            let u0 = col(&bundle.u0, k);
            quad(&e, &params.q)
                + quad(&u, &params.r)
                + 2.0 * (u.transpose() * &params.l * &u0)[(0, 0)]
                + quad(&u0, &params.r1)
        })
        .collect();
    let last = grid.num_steps();
    let e_t = col(&bundle.xi[i], last)
        - &params.gamma_bar * col(&bundle.x_avg, last)
        - &params.gamma1_bar * col(&bundle.x0, last);
    trapezoid(&vals, grid.dt()) + quad(&e_t, &params.h)
}

/// Social cost `Σᵢ Jᵢ` and its per-follower average.
pub fn realized_social_cost(bundle: &TrajectoryBundle, params: &ModelParams) -> (f64, f64) {
    let costs: Vec<f64> = (0..bundle.n_followers())
        .map(|i| realized_follower_cost(bundle, params, i))
        .collect();
    let total = crate::stats::compensated_sum(&costs);
    (total, total / bundle.n_followers() as f64)
}

/// Runs `runner(master_seed + k)` for `k < num_mc` in parallel and returns
/// the per-channel mean and standard error. Aggregation follows run order,
/// so results do not depend on the thread count.
pub fn monte_carlo<F>(runner: F, num_mc: usize, master_seed: u64) -> Result<Vec<Estimate>>
where
    F: Fn(u64) -> Result<Vec<f64>> + Sync,
{
    if num_mc == 0 {
        return Err(Error::InvalidArgument("num_mc must be at least 1".into()));
    }
    let runs: Vec<Vec<f64>> = (0..num_mc)
        .into_par_iter()
        .map(|k| runner(master_seed.wrapping_add(k as u64)))
        .collect::<Result<_>>()?;
    let channels = runs[0].len();
    if runs.iter().any(|r| r.len() != channels) {
        return Err(Error::Dimension(
            "runner returned a varying number of channels".into(),
        ));
    }
    Ok((0..channels)
        .map(|c| estimate(&runs.iter().map(|r| r[c]).collect::<Vec<_>>()))
        .collect())
}

/// Either solved strategy profile.
#[derive(Clone, Debug)]
pub enum Solution {
    OpenLoop(Box<OpenLoopSolution>),
    Feedback(Box<FeedbackSolution>),
}

impl Solution {
    pub fn solve(params: &ModelParams, grid: &TimeGrid, mode: Mode) -> Result<Self> {
        Ok(match mode {
            Mode::OpenLoop => Solution::OpenLoop(Box::new(openloop::solve(params, grid)?)),
            Mode::Feedback => Solution::Feedback(Box::new(solve_feedback(params, grid)?)),
        })
    }

    pub fn mode(&self) -> Mode {
        match self {
            Solution::OpenLoop(_) => Mode::OpenLoop,
            Solution::Feedback(_) => Mode::Feedback,
        }
    }

    pub fn params(&self) -> &ModelParams {
        match self {
            Solution::OpenLoop(s) => &s.coefficients.params,
            Solution::Feedback(s) => &s.coefficients.params,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        match self {
            Solution::OpenLoop(s) => &s.grid,
            Solution::Feedback(s) => &s.grid,
        }
    }

    /// Simulates one realization with the given randomness.
    pub fn simulate_with(
        &self,
        noise: BrownianBundle,
        init: InitialDraws,
    ) -> Result<TrajectoryBundle> {
        match self {
            Solution::OpenLoop(s) => simulate_openloop_with(s, noise, init),
            Solution::Feedback(s) => simulate_feedback_with(s, noise, init),
        }
    }

    /// Simulates one realization from `seed`.
    pub fn simulate(&self, n_followers: usize, seed: u64) -> Result<TrajectoryBundle> {
        let (noise, init) = draw(self.params(), self.grid(), n_followers, seed)?;
        self.simulate_with(noise, init)
    }
}

/// `ε₁` integral for one feedback realization.
pub fn epsilon1_sample(sol: &FeedbackSolution, bundle: &TrajectoryBundle) -> f64 {
    let u_avg = bundle.u_avg();
    let vals: Vec<f64> = (0..bundle.grid.num_nodes())
        .map(|k| {
            sol.epsilon1_integrand(
                k,
                &col(&bundle.x0, k),
                &col(&bundle.x_avg, k),
                &col(&bundle.xbar, k),
                &col(&u_avg, k),
            )
        })
        .collect();
    trapezoid(&vals, bundle.grid.dt())
}

/// Realized Monte-Carlo costs next to the limiting formulas.
#[derive(Clone, Debug, PartialEq)]
pub struct CostReport {
    pub mode: Mode,
    pub n_followers: usize,
    pub num_mc: usize,
    pub seed: u64,
    pub leader_realized: Estimate,
    pub social_per_n_realized: Estimate,
    pub leader_limit: f64,
    pub social_per_n_limit: f64,
    /// Open-loop: `m_T`; feedback: `ε₁` (both with standard errors).
    pub correction: Estimate,
}

impl CostReport {
    /// `|realized − limit| / |limit|` for the leader cost.
    pub fn leader_rel_gap(&self) -> f64 {
        rel_gap(self.leader_realized.mean, self.leader_limit)
    }

    /// `|realized − limit| / |limit|` for the average social cost.
    pub fn social_rel_gap(&self) -> f64 {
        rel_gap(self.social_per_n_realized.mean, self.social_per_n_limit)
    }

    /// Human-readable summary listing every field.
    pub fn to_text(&self) -> String {
        let se = |e: &Estimate| e.stderr.map(fmt_f64).unwrap_or_else(|| "n/a".into());
        let corr = match self.mode {
            Mode::OpenLoop => "m_T",
            Mode::Feedback => "epsilon1",
        };
        format!(
            "mode: {}\nN: {}\nnum_mc: {}\nseed: {}\n\
             leader_realized: {} +/- {}\nleader_limit: {}\nleader_rel_gap: {}\n\
             social_per_N_realized: {} +/- {}\nsocial_per_N_limit: {}\nsocial_rel_gap: {}\n\
             {corr}: {} +/- {}\n",
            self.mode,
            self.n_followers,
            self.num_mc,
            self.seed,
            fmt_f64(self.leader_realized.mean),
            se(&self.leader_realized),
            fmt_f64(self.leader_limit),
            fmt_f64(self.leader_rel_gap()),
            fmt_f64(self.social_per_n_realized.mean),
            se(&self.social_per_n_realized),
            fmt_f64(self.social_per_n_limit),
            fmt_f64(self.social_rel_gap()),
            fmt_f64(self.correction.mean),
            se(&self.correction),
        )
    }
}

fn rel_gap(value: f64, reference: f64) -> f64 {
    (value - reference).abs() / reference.abs()
}

/// Realized costs of one Monte-Carlo run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostSample {
    pub seed: u64,
    pub leader: f64,
    pub social_per_n: f64,
    /// `ε₁` integral in feedback mode, 0 in open-loop mode.
    pub epsilon1: f64,
}

/// Simulates `num_mc` realizations with seeds `seed + k` (in parallel) and
/// returns their realized costs in run order.
pub fn cost_samples(
    sol: &Solution,
    n_followers: usize,
    num_mc: usize,
    seed: u64,
) -> Result<Vec<CostSample>> {
    if n_followers == 0 {
        return Err(Error::InvalidArgument(
            "the number of followers N must be at least 1".into(),
        ));
    }
    if num_mc == 0 {
        return Err(Error::InvalidArgument("num_mc must be at least 1".into()));
    }
    let params = sol.params();
    (0..num_mc)
        .into_par_iter()
        .map(|k| {
            let s = seed.wrapping_add(k as u64);
            let b = sol.simulate(n_followers, s)?;
            Ok(CostSample {
                seed: s,
                leader: realized_leader_cost(&b, params),
                social_per_n: realized_social_cost(&b, params).1,
                epsilon1: match sol {
                    Solution::Feedback(f) => epsilon1_sample(f, &b),
                    Solution::OpenLoop(_) => 0.0,
                },
            })
        })
        .collect()
}

/// CSV `seed,leader,social_per_n,epsilon1`, one row per run.
pub fn samples_to_csv(samples: &[CostSample]) -> String {
    let mut out = String::from("seed,leader,social_per_n,epsilon1\n");
    for s in samples {
        out.push_str(&format!(
            "{},{},{},{}\n",
            s.seed,
            fmt_f64(s.leader),
            fmt_f64(s.social_per_n),
            fmt_f64(s.epsilon1)
        ));
    }
    out
}

/// Compares realized costs with the limiting formulas. For the open-loop
/// mode, `m_T` is evaluated with `mt`; the feedback social limit includes
/// the `ε₁` estimate from the same realizations.
pub fn report_from_samples(
    sol: &Solution,
    n_followers: usize,
    seed: u64,
    samples: &[CostSample],
    mt: MtMethod,
) -> Result<CostReport> {
    let channel = |f: fn(&CostSample) -> f64| estimate(&samples.iter().map(f).collect::<Vec<_>>());
    let eps = channel(|s| s.epsilon1);
    let (leader_limit, social_per_n_limit, correction) = match sol {
        Solution::OpenLoop(s) => {
            let t = theoretical_costs(s, mt)?;
            (t.leader, t.social_per_n, t.m_t)
        }
        Solution::Feedback(s) => (
            s.leader_cost(),
            s.follower_cost_base(n_followers) + eps.mean,
            eps,
        ),
    };
    Ok(CostReport {
        mode: sol.mode(),
        n_followers,
        num_mc: samples.len(),
        seed,
        leader_realized: channel(|s| s.leader),
        social_per_n_realized: channel(|s| s.social_per_n),
        leader_limit,
        social_per_n_limit,
        correction,
    })
}

/// Simulates `num_mc` realizations with seeds `seed + k` and compares the
/// realized costs with the limiting formulas.
pub fn cost_report(
    sol: &Solution,
    n_followers: usize,
    num_mc: usize,
    seed: u64,
    mt: MtMethod,
) -> Result<CostReport> {
    let samples = cost_samples(sol, n_followers, num_mc, seed)?;
    report_from_samples(sol, n_followers, seed, &samples, mt)
}

/// Default `m_T` evaluation for reports: Monte Carlo over common-noise paths.
pub fn default_mt(seed: u64) -> MtMethod {
    MtMethod::MonteCarlo {
        paths: DEFAULT_MT_PATHS,
        seed,
    }
}

/// Paired comparison of two arms on identical randomness: for each run
/// `k`, both arms see the noise and initial draws of seed `master_seed + k`.
/// Each arm returns `(J₀, Jsoc/N)`; the result holds the estimates of
/// `Δ₀ = J₀ᵃ − J₀ᵇ` and `Δ₁ = Jsocᵃ/N − Jsocᵇ/N`.
pub fn paired_differences<A, B>(
    params: &ModelParams,
    grid: &TimeGrid,
    n_followers: usize,
    num_mc: usize,
    master_seed: u64,
    arm_a: A,
    arm_b: B,
) -> Result<(Estimate, Estimate)>
where
    A: Fn(BrownianBundle, InitialDraws) -> Result<(f64, f64)> + Sync,
    B: Fn(BrownianBundle, InitialDraws) -> Result<(f64, f64)> + Sync,
{
    let est = monte_carlo(
        |s| {
            let (noise, init) = draw(params, grid, n_followers, s)?;
            let (la, sa) = arm_a(noise.clone(), init.clone())?;
            let (lb, sb) = arm_b(noise, init)?;
            Ok(vec![la - lb, sa - sb])
        },
        num_mc,
        master_seed,
    )?;
    Ok((est[0], est[1]))
}

/// One point of a leader-weight sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub gamma0: f64,
    /// `(Δ₀, Δ₁)`, or the failure message for this point.
    pub outcome: std::result::Result<(Estimate, Estimate), String>,
}

/// Results of [`delta_sweep`], one entry per requested `Γ₀` in input order.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub n_followers: usize,
    pub num_mc: usize,
    pub seed: u64,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    /// CSV `gamma0,delta0_mean,delta0_stderr,delta1_mean,delta1_stderr`;
    /// failed points carry `NaN` values.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("gamma0,delta0_mean,delta0_stderr,delta1_mean,delta1_stderr\n");
        for p in &self.points {
            let vals = match &p.outcome {
                Ok((d0, d1)) => [d0.mean, d0.se(), d1.mean, d1.se()],
                Err(_) => [f64::NAN; 4],
            };
            out.push_str(&fmt_f64(p.gamma0));
            for v in vals {
                out.push(',');
                out.push_str(&fmt_f64(v));
            }
            out.push('\n');
        }
        out
    }
}

/// Leader and average social cost of one realization.
fn arm_costs(sol: &Solution, noise: BrownianBundle, init: InitialDraws) -> Result<(f64, f64)> {
    let b = sol.simulate_with(noise, init)?;
    let p = sol.params();
    Ok((realized_leader_cost(&b, p), realized_social_cost(&b, p).1))
}

/// `Δ₀ = J₀^{open-loop} − J₀^{feedback}` and
/// `Δ₁ = (Jsoc^{open-loop} − Jsoc^{feedback})/N` for two solved profiles of
/// the same model.
pub fn delta_between(
    open_loop: &Solution,
    feedback: &Solution,
    n_followers: usize,
    num_mc: usize,
    master_seed: u64,
) -> Result<(Estimate, Estimate)> {
    if open_loop.mode() != Mode::OpenLoop || feedback.mode() != Mode::Feedback {
        return Err(Error::InvalidArgument(
            "expected an open-loop and a feedback solution".into(),
        ));
    }
    paired_differences(
        open_loop.params(),
        open_loop.grid(),
        n_followers,
        num_mc,
        master_seed,
        |n, i| arm_costs(open_loop, n, i),
        |n, i| arm_costs(feedback, n, i),
    )
}

/// [`delta_between`] for the leader weight `Γ₀ = γ I`.
pub fn delta_at(
    params: &ModelParams,
    grid: &TimeGrid,
    gamma0: f64,
    n_followers: usize,
    num_mc: usize,
    master_seed: u64,
) -> Result<(Estimate, Estimate)> {
    let p = with_gamma0(params, gamma0);
    let ol = Solution::solve(&p, grid, Mode::OpenLoop)?;
    let fb = Solution::solve(&p, grid, Mode::Feedback)?;
    delta_between(&ol, &fb, n_followers, num_mc, master_seed)
}

/// Copy of `params` with `Γ₀ = γ I`.
pub fn with_gamma0(params: &ModelParams, gamma0: f64) -> ModelParams {
    let mut p = params.clone();
    p.gamma0 = Mat::identity(p.n(), p.n()) * gamma0;
    p
}

/// Runs [`delta_at`] for every `Γ₀` value. A failing point is recorded
/// with its error and does not stop the sweep.
pub fn delta_sweep(
    params: &ModelParams,
    grid: &TimeGrid,
    gamma0_values: &[f64],
    n_followers: usize,
    num_mc: usize,
    master_seed: u64,
) -> Result<SweepResult> {
    if gamma0_values.is_empty() {
        return Err(Error::InvalidArgument("the Gamma0 grid is empty".into()));
    }
    let points = gamma0_values
        .iter()
        .map(|&g| SweepPoint {
            gamma0: g,
            outcome: delta_at(params, grid, g, n_followers, num_mc, master_seed)
                .map_err(|e| format!("Gamma0 = {}: {e}", fmt_f64(g))),
        })
        .collect();
    Ok(SweepResult {
        n_followers,
        num_mc,
        seed: master_seed,
        points,
    })
}

/// `points` evenly spaced values on `[lo, hi]` (both ends included).
pub fn linspace(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if !(lo.is_finite() && hi.is_finite()) || lo > hi {
        return Err(Error::InvalidArgument(format!("invalid range {lo}:{hi}")));
    }
    match points {
        0 => Err(Error::InvalidArgument(
            "at least one grid point is required".into(),
        )),
        1 => Ok(vec![lo]),
        _ => Ok((0..points)
            .map(|k| {
                if k + 1 == points {
                    hi
                } else {
                    lo + (hi - lo) * k as f64 / (points - 1) as f64
                }
            })
            .collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_bundle(
        grid: TimeGrid,
        n_followers: usize,
        x0: f64,
        xi: f64,
        u0: f64,
        ui: f64,
    ) -> TrajectoryBundle {
        let nodes = grid.num_nodes();
        let c = |v: f64| Mat::from_element(1, nodes, v);
        let noise = BrownianBundle::from_increments(
            0,
            grid.dt(),
            vec![Mat::zeros(1, grid.num_steps()); n_followers + 1],
        )
        .unwrap();
        TrajectoryBundle {
            mode: Mode::Feedback,
            grid,
            x0: c(x0),
            xi: vec![c(xi); n_followers],
            x_avg: c(xi),
            xbar: c(xi),
            u0: c(u0),
            ui: vec![c(ui); n_followers],
            aux: None,
            noise,
            init: InitialDraws {
                xi0: Mat::zeros(1, 1),
                xi: vec![Mat::zeros(1, 1); n_followers],
            },
        }
    }

    #[test]
    fn leader_cost_hand_values() {
        let g = TimeGrid::new(1.0, 0.01).unwrap();
        let mut p = ModelParams::scalar_scenario();
        p.gamma0 = Mat::identity(1, 1);
        assert_eq!(
            realized_leader_cost(&constant_bundle(g, 1, 1.0, 1.0, 0.0, 0.0), &p),
            0.0
        );
        let c = realized_leader_cost(&constant_bundle(g, 1, 1.0, 0.0, 0.0, 0.0), &p);
        assert!((c - 1.0).abs() < 1e-12);
        assert_eq!(
            realized_leader_cost(&constant_bundle(g, 1, 0.0, 0.0, 0.0, 0.0), &p),
            0.0
        );
    }

    #[test]
    fn social_cost_hand_values() {
        let g = TimeGrid::new(1.0, 0.01).unwrap();
        let p = ModelParams::scalar_scenario();
        let (total, per) = realized_social_cost(&constant_bundle(g, 2, 0.0, 0.0, 1.0, 1.0), &p);
        assert!((total - 14.0).abs() < 1e-12);
        assert!((per - 7.0).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_constant_and_alternating() {
        let e = monte_carlo(|_| Ok(vec![2.5]), 7, 3).unwrap();
        assert_eq!(e[0].mean, 2.5);
        assert_eq!(e[0].stderr, Some(0.0));
        let e = monte_carlo(|s| Ok(vec![if s % 2 == 0 { 1.0 } else { -1.0 }]), 10, 0).unwrap();
        assert_eq!(e[0].mean, 0.0);
        assert!(monte_carlo(|_| Ok(vec![1.0]), 0, 0).is_err());
    }

    #[test]
    fn linspace_endpoints() {
        assert_eq!(linspace(0.0, 5.0, 3).unwrap(), vec![0.0, 2.5, 5.0]);
        assert!(linspace(1.0, 0.0, 3).is_err());
        assert!(linspace(0.0, 1.0, 0).is_err());
    }
}
