//! Euler–Maruyama simulation of one leader and `N` followers under the
//! open-loop or feedback strategies.
//!
//! Noise source 0 of the [`BrownianBundle`] is the common noise `W₀`,
//! source `i` the idiosyncratic noise of follower `i`. Initial states come
//! from stream 0 of the same seed, so two simulations with equal seeds see
//! identical randomness whatever the strategy.

use crate::error::{Error, Result};
use crate::feedback::FeedbackSolution;
use crate::format::fmt_f64;
use crate::matgrid::{
    covariance_factor, em_step, gaussian_vector, noise_rng, sub, BrownianBundle, Mat, TimeGrid,
};
use crate::model::ModelParams;
use crate::openloop::OpenLoopSolution;

/// Which strategy profile generated a bundle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    OpenLoop,
    Feedback,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::OpenLoop => "openloop",
            Mode::Feedback => "feedback",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "openloop" | "open-loop" => Ok(Mode::OpenLoop),
            "feedback" => Ok(Mode::Feedback),
            other => Err(Error::InvalidArgument(format!(
                "unknown mode `{other}` (expected openloop or feedback)"
            ))),
        }
    }
}

/// Initial states of the leader and the followers for one realization.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialDraws {
    pub xi0: Mat,
    pub xi: Vec<Mat>,
}

impl InitialDraws {
    /// Gaussian draws `ξ₀ ~ N(ξ̄₀, Σ₀)` then `ξ₁, …, ξ_N ~ N(ξ̄, Σ)` from
    /// stream 0 of `seed`. The first `k` follower draws do not depend on `N ≥ k`.
    pub fn sample(params: &ModelParams, n_followers: usize, seed: u64) -> Result<Self> {
        let f0 = covariance_factor(&params.xi0_cov, "xi0_cov")?;
        let f = covariance_factor(&params.xi_cov, "xi_cov")?;
        let mut rng = noise_rng(seed, 0);
        let xi0 = gaussian_vector(&mut rng, &params.xi0_mean, &f0);
        let xi = (0..n_followers)
            .map(|_| gaussian_vector(&mut rng, &params.xi_mean, &f))
            .collect();
        Ok(Self { xi0, xi })
    }
}

/// Auxiliary open-loop processes.
#[derive(Clone, Debug, PartialEq)]
pub struct OpenLoopAux {
    /// Augmented state `X = [x̄₀; x̄; ψ₀; ψ]`, `4n × nodes`.
    pub x_aug: Mat,
    /// Adjoint `Y = 𝒫X = [y₀; ȳ; φ̄₀; φ̄]`, `4n × nodes`.
    pub y_aug: Mat,
    /// Per-follower auxiliary states `x̄ᵢ`, each `n × nodes`.
    pub xbar_i: Vec<Mat>,
}

/// One simulated realization. State paths are stored column-per-node.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryBundle {
    pub mode: Mode,
    pub grid: TimeGrid,
    /// Leader state, `n × nodes`.
    pub x0: Mat,
    /// Follower states, each `n × nodes`.
    pub xi: Vec<Mat>,
    /// State average `x^(N)`, `n × nodes`.
    pub x_avg: Mat,
    /// Mean-field state `x̄`, `n × nodes`.
    pub xbar: Mat,
    /// Leader control, `m × nodes`.
    pub u0: Mat,
    /// Follower controls, each `m × nodes`.
    pub ui: Vec<Mat>,
    pub aux: Option<OpenLoopAux>,
    pub noise: BrownianBundle,
    pub init: InitialDraws,
}

impl TrajectoryBundle {
    pub fn n_followers(&self) -> usize {
        self.xi.len()
    }

    /// Average of the follower controls, `m × nodes`.
    pub fn u_avg(&self) -> Mat {
        average(&self.ui)
    }

    /// CSV with columns `t, x0, xbar, xN_avg, u0, x_1 … x_N`; vector
    /// entries are expanded as `name_1, name_2, …` when the dimension exceeds 1.
    pub fn to_csv(&self) -> String {
        let mut header = vec!["t".to_string()];
        let mut blocks: Vec<&Mat> = Vec::new();
        let named: [(&str, &Mat); 4] = [
            ("x0", &self.x0),
            ("xbar", &self.xbar),
            ("xN_avg", &self.x_avg),
            ("u0", &self.u0),
        ];
        for (name, m) in named {
            push_names(&mut header, name, m.nrows());
            blocks.push(m);
        }
        for (i, x) in self.xi.iter().enumerate() {
            push_names(&mut header, &format!("x_{}", i + 1), x.nrows());
            blocks.push(x);
        }
        let mut out = header.join(",");
        out.push('\n');
        for k in 0..self.grid.num_nodes() {
            out.push_str(&fmt_f64(self.grid.time(k)));
            for b in &blocks {
                for r in 0..b.nrows() {
                    out.push(',');
                    out.push_str(&fmt_f64(b[(r, k)]));
                }
            }
            out.push('\n');
        }
        out
    }
}

fn push_names(header: &mut Vec<String>, name: &str, dim: usize) {
    if dim == 1 {
        header.push(name.to_string());
    } else {
        header.extend((1..=dim).map(|j| format!("{name}_{j}")));
    }
}

fn average(paths: &[Mat]) -> Mat {
    let mut sum = Mat::zeros(paths[0].nrows(), paths[0].ncols());
    for p in paths {
        sum += p;
    }
    sum / paths.len() as f64
}

fn check_inputs(
    grid: &TimeGrid,
    noise: &BrownianBundle,
    init: &InitialDraws,
    params: &ModelParams,
) -> Result<usize> {
    let n_followers = init.xi.len();
    if n_followers == 0 {
        return Err(Error::InvalidArgument(
            "the number of followers N must be at least 1".into(),
        ));
    }
    if noise.num_sources() != n_followers + 1
        || noise.dim() != params.d()
        || noise.num_steps() != grid.num_steps()
    {
        return Err(Error::Dimension(format!(
            "noise bundle has {} sources of dimension {} over {} steps; expected {} sources of dimension {} over {} steps",
            noise.num_sources(),
            noise.dim(),
            noise.num_steps(),
            n_followers + 1,
            params.d(),
            grid.num_steps()
        )));
    }
    Ok(n_followers)
}

fn check_finite(x: &Mat, k: usize, grid: &TimeGrid) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            node: k,
            time: grid.time(k),
        });
    }
    Ok(())
}

/// Writes column `k` of `dst`.
fn set_col(dst: &mut Mat, k: usize, v: &Mat) {
    dst.column_mut(k).copy_from(&v.column(0));
}

/// Draws fresh noise and initial states from `seed` and simulates the
/// open-loop strategies.
pub fn simulate_openloop(
    sol: &OpenLoopSolution,
    n_followers: usize,
    seed: u64,
) -> Result<TrajectoryBundle> {
    let (noise, init) = draw(&sol.coefficients.params, &sol.grid, n_followers, seed)?;
    simulate_openloop_with(sol, noise, init)
}

/// Draws fresh noise and initial states from `seed` and simulates the
/// feedback strategies.
pub fn simulate_feedback(
    sol: &FeedbackSolution,
    n_followers: usize,
    seed: u64,
) -> Result<TrajectoryBundle> {
    let (noise, init) = draw(&sol.coefficients.params, &sol.grid, n_followers, seed)?;
    simulate_feedback_with(sol, noise, init)
}

/// Noise bundle and initial draws shared by both strategy classes.
pub fn draw(
    params: &ModelParams,
    grid: &TimeGrid,
    n_followers: usize,
    seed: u64,
) -> Result<(BrownianBundle, InitialDraws)> {
    if n_followers == 0 {
        return Err(Error::InvalidArgument(
            "the number of followers N must be at least 1".into(),
        ));
    }
    let noise = BrownianBundle::generate(seed, n_followers + 1, params.d(), grid);
    let init = InitialDraws::sample(params, n_followers, seed)?;
    Ok((noise, init))
}

/// Open-loop simulation with explicit noise and initial states.
///
/// The augmented state `X` is marched with drift `(𝒜 − ℬ𝒫)X` and loading
/// `𝒟₀`, giving `u₀ = Φ₀X` and `φ̄ = (𝒫X)₄`. Each auxiliary `x̄ᵢ` follows
/// `Ax̄ᵢ + Buᵢ + Gx̄ + Fx̄₀ + B₁u₀` with noise `DdWᵢ`, where `uᵢ` is the
/// decentralized law on `x̄ᵢ`. The realized states are then driven by the
/// same controls and increments.
pub fn simulate_openloop_with(
    sol: &OpenLoopSolution,
    noise: BrownianBundle,
    init: InitialDraws,
) -> Result<TrajectoryBundle> {
    let p = &sol.coefficients.params;
    let grid = sol.grid;
    let nf = check_inputs(&grid, &noise, &init, p)?;
    let (n, m) = (p.n(), p.m());
    let nodes = grid.num_nodes();
    let dt = grid.dt();
    let g = &sol.gains;

    let mut x_aug = Mat::zeros(4 * n, nodes);
    let mut y_aug = Mat::zeros(4 * n, nodes);
    let mut u0 = Mat::zeros(m, nodes);
    let mut x0 = Mat::zeros(n, nodes);
    let mut xi: Vec<Mat> = vec![Mat::zeros(n, nodes); nf];
    let mut xbar_i: Vec<Mat> = vec![Mat::zeros(n, nodes); nf];
    let mut ui: Vec<Mat> = vec![Mat::zeros(m, nodes); nf];
    let mut x_avg = Mat::zeros(n, nodes);

    let mut x = Mat::zeros(4 * n, 1);
    x.view_mut((0, 0), (n, 1)).copy_from(&init.xi0);
    x.view_mut((n, 0), (n, 1)).copy_from(&p.xi_mean);
    let mut leader = init.xi0.clone();
    let mut followers: Vec<Mat> = init.xi.clone();
    let mut aux: Vec<Mat> = init.xi.clone();
    let w0 = noise.source(0);

    for k in 0..nodes {
        check_finite(&x, k, &grid)?;
        let y = sol.p.at(k) * &x;
        let u_lead = g.phi0.at(k) * &x;
        let xbar0 = sub(&x, 0, 0, n, 1);
        let xbar = sub(&x, n, 0, n, 1);
        let phibar = sub(&y, 3 * n, 0, n, 1);
        let common = g.mean.at(k) * &xbar
            + g.leader.at(k) * &xbar0
            + &g.adjoint * &phibar
            + &g.control * &u_lead;
        let controls: Vec<Mat> = aux.iter().map(|a| g.own.at(k) * a + &common).collect();
        let avg = average(&followers);

        set_col(&mut x_aug, k, &x);
        set_col(&mut y_aug, k, &y);
        set_col(&mut u0, k, &u_lead);
        set_col(&mut x0, k, &leader);
        set_col(&mut x_avg, k, &avg);
        for i in 0..nf {
            set_col(&mut xi[i], k, &followers[i]);
            set_col(&mut xbar_i[i], k, &aux[i]);
            set_col(&mut ui[i], k, &controls[i]);
        }
        if k == grid.num_steps() {
            break;
        }

        let dw0 = w0.columns(k, 1);
        let shock0 = &p.d0 * dw0;
        let b1u0 = &p.b1 * &u_lead;
        let drift_x = sol.closed_loop.at(k) * &x;
        x = em_step(&x, &drift_x, dt, &[&sol.aug.d0 * dw0]);
        let aux_common = &p.g * &xbar + &p.f * &xbar0 + &b1u0;
        let real_common = &p.g * &avg + &p.f * &leader + &b1u0;
        let drift0 = &p.a0 * &leader + &p.b0 * &u_lead + &p.g0 * &avg;
        leader = em_step(&leader, &drift0, dt, &[shock0]);
        for i in 0..nf {
            let shock = &p.d * noise.source(i + 1).columns(k, 1);
            let bu = &p.b * &controls[i];
            let drift_aux = &p.a * &aux[i] + &bu + &aux_common;
            aux[i] = em_step(&aux[i], &drift_aux, dt, std::slice::from_ref(&shock));
            let drift_real = &p.a * &followers[i] + &bu + &real_common;
            followers[i] = em_step(&followers[i], &drift_real, dt, &[shock]);
        }
    }

    let xbar = x_aug.rows(n, n).into_owned();
    Ok(TrajectoryBundle {
        mode: Mode::OpenLoop,
        grid,
        x0,
        xi,
        x_avg,
        xbar,
        u0,
        ui,
        aux: Some(OpenLoopAux {
            x_aug,
            y_aug,
            xbar_i,
        }),
        noise,
        init,
    })
}

/// Feedback simulation with explicit noise and initial states.
///
/// The mean-field state follows `x̄' = Āx̄ + F̄x₀` along the realized leader
/// state, `u₀ = P₀x₀ + P̄x̄`, and every follower applies its feedback law
/// to its own realized state.
pub fn simulate_feedback_with(
    sol: &FeedbackSolution,
    noise: BrownianBundle,
    init: InitialDraws,
) -> Result<TrajectoryBundle> {
    let p = &sol.coefficients.params;
    let grid = sol.grid;
    let nf = check_inputs(&grid, &noise, &init, p)?;
    let (n, m) = (p.n(), p.m());
    let nodes = grid.num_nodes();
    let dt = grid.dt();
    let g = &sol.gains;

    let mut u0 = Mat::zeros(m, nodes);
    let mut x0 = Mat::zeros(n, nodes);
    let mut xbar_path = Mat::zeros(n, nodes);
    let mut x_avg = Mat::zeros(n, nodes);
    let mut xi: Vec<Mat> = vec![Mat::zeros(n, nodes); nf];
    let mut ui: Vec<Mat> = vec![Mat::zeros(m, nodes); nf];

    let mut leader = init.xi0.clone();
    let mut xbar = p.xi_mean.clone();
    let mut followers: Vec<Mat> = init.xi.clone();
    let w0 = noise.source(0);

    for k in 0..nodes {
        check_finite(&leader, k, &grid)?;
        let u_lead = g.p0.at(k) * &leader + g.pbar.at(k) * &xbar;
        let common = g.leader.at(k) * &leader + g.mean.at(k) * &xbar;
        let controls: Vec<Mat> = followers
            .iter()
            .map(|x| g.own.at(k) * x + &common)
            .collect();
        let avg = average(&followers);

        set_col(&mut u0, k, &u_lead);
        set_col(&mut x0, k, &leader);
        set_col(&mut xbar_path, k, &xbar);
        set_col(&mut x_avg, k, &avg);
        for i in 0..nf {
            set_col(&mut xi[i], k, &followers[i]);
            set_col(&mut ui[i], k, &controls[i]);
        }
        if k == grid.num_steps() {
            break;
        }

        let drift_bar = g.abar.at(k) * &xbar + g.fbar.at(k) * &leader;
        let real_common = &p.g * &avg + &p.f * &leader + &p.b1 * &u_lead;
        for i in 0..nf {
            let shock = &p.d * noise.source(i + 1).columns(k, 1);
            let drift = &p.a * &followers[i] + &p.b * &controls[i] + &real_common;
            followers[i] = em_step(&followers[i], &drift, dt, &[shock]);
        }
        let drift0 = &p.a0 * &leader + &p.b0 * &u_lead + &p.g0 * &avg;
        leader = em_step(&leader, &drift0, dt, &[&p.d0 * w0.columns(k, 1)]);
        xbar = em_step(&xbar, &drift_bar, dt, &[]);
    }

    Ok(TrajectoryBundle {
        mode: Mode::Feedback,
        grid,
        x0,
        xi,
        x_avg,
        xbar: xbar_path,
        u0,
        ui,
        aux: None,
        noise,
        init,
    })
}

/// Squared distance between the state average and the mean-field state.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanFieldGap {
    /// `sup_t ‖x^(N)(t) − x̄(t)‖²`.
    pub sup_gap2: f64,
    /// `‖x^(N)(t_k) − x̄(t_k)‖²` per node.
    pub profile: Vec<f64>,
}

pub fn meanfield_gap(bundle: &TrajectoryBundle) -> MeanFieldGap {
    let profile: Vec<f64> = (0..bundle.grid.num_nodes())
        .map(|k| (bundle.x_avg.column(k) - bundle.xbar.column(k)).norm_squared())
        .collect();
    let sup_gap2 = profile.iter().copied().fold(0.0, f64::max);
    MeanFieldGap { sup_gap2, profile }
}

/// Discrete residual of the backward equation satisfied by the follower
/// adjoint along an open-loop realization.
///
/// With `p̄ᵢ = Πx̄ᵢ + (Π̄ − Π)x̄ + Mx̄₀ + φ̄`, `p̄ = Π̄x̄ + Mx̄₀ + φ̄` and
/// `p̄₀ = Π₀x̄ + M₀x̄₀ + φ̄₀`, the process should satisfy
/// `dp̄ᵢ = −(Aᵀp̄ᵢ + Gᵀp̄ + G₀ᵀp̄₀ + Qx̄ᵢ − Q_Γx̄ − Q_Γ₁x̄₀)dt + ΠD dWᵢ + (M + 𝒫₄₁)D₀ dW₀`.
/// Returns `max_k ‖Σ_{j<k} residual_j‖` for follower `follower`.
pub fn decoupling_residual(
    sol: &OpenLoopSolution,
    bundle: &TrajectoryBundle,
    follower: usize,
) -> Result<f64> {
    let aux = bundle.aux.as_ref().ok_or_else(|| {
        Error::InvalidArgument("decoupling residual needs an open-loop bundle".into())
    })?;
    if follower >= aux.xbar_i.len() {
        return Err(Error::InvalidArgument(format!(
            "follower index {follower} out of range"
        )));
    }
    let c = &sol.coefficients;
    let p = &c.params;
    let w = &c.weights;
    let n = p.n();
    let grid = bundle.grid;
    let mf = &sol.meanfield;
    let adjoint = |k: usize| {
        let x = aux.x_aug.columns(k, 1).into_owned();
        let y = aux.y_aug.columns(k, 1).into_owned();
        let xbar0 = sub(&x, 0, 0, n, 1);
        let xbar = sub(&x, n, 0, n, 1);
        let xi = aux.xbar_i[follower].columns(k, 1).into_owned();
        let phibar0 = sub(&y, 2 * n, 0, n, 1);
        let phibar = sub(&y, 3 * n, 0, n, 1);
        let pbar = mf.pibar.at(k) * &xbar + mf.m.at(k) * &xbar0 + &phibar;
        let pi_i = sol.pi.at(k) * &xi
            + (mf.pibar.at(k) - sol.pi.at(k)) * &xbar
            + mf.m.at(k) * &xbar0
            + &phibar;
        let p0 = mf.pi0.at(k) * &xbar + mf.m0.at(k) * &xbar0 + &phibar0;
        let drift = -(p.a.transpose() * &pi_i
            + p.g.transpose() * &pbar
            + p.g0.transpose() * &p0
            + &p.q * &xi
            - &w.q_gamma * &xbar
            - &w.q_gamma1 * &xbar0);
        (pi_i, drift)
    };
    let mut cumulative = Mat::zeros(n, 1);
    let mut worst: f64 = 0.0;
    let (mut prev, mut prev_drift) = adjoint(0);
    for k in 0..grid.num_steps() {
        let (next, next_drift) = adjoint(k + 1);
        let dw0 = bundle.noise.source(0).columns(k, 1);
        let dwi = bundle.noise.source(follower + 1).columns(k, 1);
        let p41 = sub(sol.p.at(k), 3 * n, 0, n, n);
        let diffusion = sol.pi.at(k) * &p.d * dwi + (mf.m.at(k) + p41) * &p.d0 * dw0;
        cumulative += &next - &prev - &prev_drift * grid.dt() - diffusion;
        worst = worst.max(cumulative.norm());
        prev = next;
        prev_drift = next_drift;
    }
    Ok(worst)
}
