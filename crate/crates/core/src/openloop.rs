//! Open-loop asymptotic Stackelberg solution.
//!
//! The followers' decoupling field is given by `Π` (individual part) and the
//! mean-field cascade `(Π̄, M, M₀, Π₀)`. The leader then solves an LQ problem
//! for the augmented state `X = [x̄₀; x̄; ψ₀; ψ]` whose adjoint `Y = 𝒫X`
//! follows from the `4n × 4n` Riccati equation
//! `𝒫' + 𝒫𝒜 + 𝒜ᵀ𝒫 − 𝒫ℬ𝒫 − 𝒬 = 0`, `𝒫(T) = ℋ₀`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matgrid::{
    block_matrix, covariance_factor, gaussian_vector, integrate_backward, integrate_forward_ode,
    invert, noise_rng, sub, trapezoid_end_corrected, BrownianBundle, Mat, MatrixPath, TimeGrid,
};
use crate::model::{derive_weights, DerivedWeights, ModelParams};
use crate::stats::{estimate, Estimate};

/// Default number of common-noise paths used to estimate `m_T`.
pub const DEFAULT_MT_PATHS: usize = 2000;

/// Constant matrices entering every open-loop equation, computed once.
#[derive(Clone, Debug)]
pub struct OpenLoopCoefficients {
    pub params: ModelParams,
    pub weights: DerivedWeights,
    /// `S = BR⁻¹Bᵀ`.
    pub s: Mat,
    pub r_inv: Mat,
    pub r0_inv: Mat,
    /// `A + G`.
    pub ag: Mat,
    /// `Γ₁ᵀQΓ₁`.
    pub g1qg1: Mat,
}

impl OpenLoopCoefficients {
    pub fn new(params: &ModelParams) -> Result<Self> {
        params.validate()?;
        let weights = derive_weights(params)?;
        let r_inv = invert(&params.r, "R")?;
        let r0_inv = invert(&params.r0, "R0")?;
        Ok(Self {
            s: &params.b * &r_inv * params.b.transpose(),
            ag: &params.a + &params.g,
            g1qg1: params.gamma1.transpose() * &params.q * &params.gamma1,
            params: params.clone(),
            weights,
            r_inv,
            r0_inv,
        })
    }

    fn n(&self) -> usize {
        self.params.n()
    }

    /// Time derivative of `Π`: `−(AᵀΠ + ΠA − ΠSΠ + Q)`.
    pub fn pi_rhs(&self, pi: &Mat) -> Mat {
        riccati_rhs(&self.params.a, &self.s, &self.params.q, pi)
    }

    /// Time derivatives of `[Π̄, M, M₀, Π₀]`.
    pub fn meanfield_rhs(&self, y: &[Mat]) -> Vec<Mat> {
        let p = &self.params;
        let w = &self.weights;
        let (pibar, m, m0, pi0) = (&y[0], &y[1], &y[2], &y[3]);
        let agt = self.ag.transpose();
        let g0t = p.g0.transpose();
        let a0t = p.a0.transpose();
        let d_pibar = -(&agt * pibar + pibar * &self.ag - pibar * &self.s * pibar
            + m * &p.g0
            + &g0t * pi0
            + &p.q
            - &w.q_gamma);
        let d_m =
            -(&agt * m + m * &p.a0 - pibar * &self.s * m + &g0t * m0 + pibar * &p.f - &w.q_gamma1);
        let d_m0 = -(m0 * &p.a0
            + &a0t * m0
            + (p.f.transpose() - pi0 * &self.s) * m
            + pi0 * &p.f
            + &self.g1qg1);
        let d_pi0 = -(pi0 * &self.ag + &a0t * pi0 - pi0 * &self.s * pibar
            + m0 * &p.g0
            + p.f.transpose() * pibar
            - w.q_gamma1.transpose());
        vec![d_pibar, d_m, d_m0, d_pi0]
    }

    /// Terminal values `[H − H_Γ̄, −H_Γ̄₁, Γ̄₁ᵀHΓ̄₁, −H_Γ̄₁ᵀ]`.
    pub fn meanfield_terminal(&self) -> Vec<Mat> {
        let p = &self.params;
        let w = &self.weights;
        vec![
            &p.h - &w.h_gamma_bar,
            -&w.h_gamma1_bar,
            p.gamma1_bar.transpose() * &p.h * &p.gamma1_bar,
            -w.h_gamma1_bar.transpose(),
        ]
    }

    /// `Ξ₀ = Π₀B̄₁ + M₀B₀` and `Ξ̄ = Π̄B̄₁ + MB₀`.
    pub fn xis(&self, pibar: &Mat, m: &Mat, m0: &Mat, pi0: &Mat) -> (Mat, Mat) {
        let b1 = &self.weights.b1_bar;
        let b0 = &self.params.b0;
        (pi0 * b1 + m0 * b0, pibar * b1 + m * b0)
    }

    /// Augmented blocks `(𝒜, ℬ, 𝒬)` for given mean-field values.
    pub fn augmented_blocks(&self, pibar: &Mat, m: &Mat, m0: &Mat, pi0: &Mat) -> (Mat, Mat, Mat) {
        let p = &self.params;
        let n = self.n();
        let z = Mat::zeros(n, n);
        let b1 = &self.weights.b1_bar;
        let (xi0, xibar) = self.xis(pibar, m, m0, pi0);
        let ahat = &self.ag - &self.s * pibar;
        let ri = &self.r0_inv;

        let a13 = -(&p.b0 * ri * xi0.transpose());
        let a14 = -(&p.b0 * ri * xibar.transpose());
        let a21 = &p.f - &self.s * m;
        let a23 = -(b1 * ri * xi0.transpose());
        let a24 = -(b1 * ri * xibar.transpose());
        let a43 = &p.f - &self.s * pi0.transpose();
        let big_a = block_matrix(&[
            &[&p.a0, &p.g0, &a13, &a14],
            &[&a21, &ahat, &a23, &a24],
            &[&z, &z, &p.a0, &p.g0],
            &[&z, &z, &a43, &ahat],
        ]);

        let b11 = &p.b0 * ri * p.b0.transpose();
        let b12 = &p.b0 * ri * b1.transpose();
        let b21 = b1 * ri * p.b0.transpose();
        let b22 = b1 * ri * b1.transpose();
        let big_b = block_matrix(&[
            &[&b11, &b12, &z, &z],
            &[&b21, &b22, &z, &self.s],
            &[&z, &z, &z, &z],
            &[&z, &self.s, &z, &z],
        ]);

        let q12 = &p.q0 * &p.gamma0;
        let q21 = p.gamma0.transpose() * &p.q0;
        let q22 = -(p.gamma0.transpose() * &p.q0 * &p.gamma0);
        let q33 = &xi0 * ri * xi0.transpose();
        let q34 = &xi0 * ri * xibar.transpose();
        let q43 = &xibar * ri * xi0.transpose();
        let q44 = &xibar * ri * xibar.transpose();
        let big_q = block_matrix(&[
            &[&(-&p.q0), &q12, &z, &z],
            &[&q21, &q22, &z, &z],
            &[&z, &z, &q33, &q34],
            &[&z, &z, &q43, &q44],
        ]);
        (big_a, big_b, big_q)
    }

    /// Terminal weight `ℋ₀`.
    pub fn h0_aug(&self) -> Mat {
        let p = &self.params;
        let n = self.n();
        let z = Mat::zeros(n, n);
        let h12 = -(&p.h0 * &p.gamma0_bar);
        let h21 = -(p.gamma0_bar.transpose() * &p.h0);
        let h22 = p.gamma0_bar.transpose() * &p.h0 * &p.gamma0_bar;
        block_matrix(&[
            &[&p.h0, &h12, &z, &z],
            &[&h21, &h22, &z, &z],
            &[&z, &z, &z, &z],
            &[&z, &z, &z, &z],
        ])
    }

    /// Common-noise loading `𝒟₀ = [D₀; 0; 0; 0]`.
    pub fn d0_aug(&self) -> Mat {
        let p = &self.params;
        let z = Mat::zeros(self.n(), p.d());
        block_matrix(&[&[&p.d0], &[&z], &[&z], &[&z]])
    }

    /// `𝒟̄₀ = [0; 0; M₀D₀; MD₀]`.
    pub fn d0bar_aug(&self, m: &Mat, m0: &Mat) -> Mat {
        let p = &self.params;
        let z = Mat::zeros(self.n(), p.d());
        block_matrix(&[&[&z], &[&z], &[&(m0 * &p.d0)], &[&(m * &p.d0)]])
    }

    /// Time derivatives of the stacked `[Π̄, M, M₀, Π₀, 𝒫]`.
    pub fn leader_rhs(&self, y: &[Mat]) -> Vec<Mat> {
        let mut out = self.meanfield_rhs(&y[..4]);
        let (a, b, q) = self.augmented_blocks(&y[0], &y[1], &y[2], &y[3]);
        let pp = &y[4];
        out.push(-(pp * &a) - a.transpose() * pp + pp * b * pp + q);
        out
    }
}

/// `−(AᵀP + PA − PSP + Q)`, the right-hand side of a standard Riccati ODE.
pub(crate) fn riccati_rhs(a: &Mat, s: &Mat, q: &Mat, p: &Mat) -> Mat {
    -(a.transpose() * p + p * a - p * s * p + q)
}

/// The follower mean-field cascade.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanFieldPaths {
    pub pibar: MatrixPath,
    pub m: MatrixPath,
    pub m0: MatrixPath,
    pub pi0: MatrixPath,
}

/// Augmented leader-problem coefficients sampled on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Augmented {
    pub a: MatrixPath,
    pub b: MatrixPath,
    pub q: MatrixPath,
    pub h0: Mat,
    pub d0: Mat,
    pub d0bar: MatrixPath,
}

/// Gain paths of the decentralized open-loop laws.
///
/// Leader: `u₀* = Φ₀X`. Follower `i`:
/// `uᵢ* = own·x̄ᵢ + mean·x̄ + leader·x̄₀ + adjoint·φ̄ + control·u₀*`.
#[derive(Clone, Debug, PartialEq)]
pub struct OpenLoopGains {
    pub phi0: MatrixPath,
    /// `−R⁻¹BᵀΠ`.
    pub own: MatrixPath,
    /// `−R⁻¹Bᵀ(Π̄ − Π)`.
    pub mean: MatrixPath,
    /// `−R⁻¹BᵀM`.
    pub leader: MatrixPath,
    /// `−R⁻¹Bᵀ`.
    pub adjoint: Mat,
    /// `−R⁻¹L`.
    pub control: Mat,
}

/// Everything the open-loop strategies and cost formulas need.
#[derive(Clone, Debug)]
pub struct OpenLoopSolution {
    pub coefficients: OpenLoopCoefficients,
    pub grid: TimeGrid,
    pub pi: MatrixPath,
    pub meanfield: MeanFieldPaths,
    pub aug: Augmented,
    /// `𝒫`.
    pub p: MatrixPath,
    /// `Z = 𝒫𝒟₀ + 𝒟̄₀`, blocks `[β₀; β̄; q̄₀⁰; q̄⁰]`.
    pub z: MatrixPath,
    /// Drift matrix `𝒜 − ℬ𝒫` of the augmented forward equation.
    pub closed_loop: MatrixPath,
    pub gains: OpenLoopGains,
}

/// Solves `Π' = −(AᵀΠ + ΠA − ΠSΠ + Q)`, `Π(T) = H`.
pub fn solve_pi(params: &ModelParams, grid: &TimeGrid) -> Result<MatrixPath> {
    let c = OpenLoopCoefficients::new(params)?;
    solve_pi_with(&c, grid)
}

fn solve_pi_with(c: &OpenLoopCoefficients, grid: &TimeGrid) -> Result<MatrixPath> {
    let out = integrate_backward(
        |_, y| vec![c.pi_rhs(&y[0])],
        std::slice::from_ref(&c.params.h),
        grid,
    )
    .map_err(|e| {
        rename_blowup(
            e,
            "follower Riccati equation for Pi has no solution on [0,T]",
        )
    })?;
    Ok(out.into_iter().next().expect("one path"))
}

fn rename_blowup(e: Error, system: &str) -> Error {
    match e {
        Error::BlowUp { time, .. } => Error::BlowUp {
            system: system.to_string(),
            time,
        },
        other => other,
    }
}

/// Solves the coupled `(Π̄, M, M₀, Π₀)` system jointly.
pub fn solve_meanfield_riccati(params: &ModelParams, grid: &TimeGrid) -> Result<MeanFieldPaths> {
    let c = OpenLoopCoefficients::new(params)?;
    let out = integrate_backward(|_, y| c.meanfield_rhs(y), &c.meanfield_terminal(), grid)
        .map_err(|e| rename_blowup(e, "mean-field Riccati system has no solution on [0,T]"))?;
    let mut it = out.into_iter();
    Ok(MeanFieldPaths {
        pibar: it.next().expect("4 paths"),
        m: it.next().expect("4 paths"),
        m0: it.next().expect("4 paths"),
        pi0: it.next().expect("4 paths"),
    })
}

/// Samples the augmented coefficients at every node of the mean-field paths.
pub fn build_augmented(params: &ModelParams, mf: &MeanFieldPaths) -> Result<Augmented> {
    let c = OpenLoopCoefficients::new(params)?;
    build_augmented_with(&c, mf)
}

fn build_augmented_with(c: &OpenLoopCoefficients, mf: &MeanFieldPaths) -> Result<Augmented> {
    let grid = *mf.pibar.grid();
    let nodes = grid.num_nodes();
    let (mut a, mut b, mut q, mut d0bar) = (
        Vec::with_capacity(nodes),
        Vec::with_capacity(nodes),
        Vec::with_capacity(nodes),
        Vec::with_capacity(nodes),
    );
    for k in 0..nodes {
        let (ak, bk, qk) =
            c.augmented_blocks(mf.pibar.at(k), mf.m.at(k), mf.m0.at(k), mf.pi0.at(k));
        a.push(ak);
        b.push(bk);
        q.push(qk);
        d0bar.push(c.d0bar_aug(mf.m.at(k), mf.m0.at(k)));
    }
    Ok(Augmented {
        a: MatrixPath::new(grid, a)?,
        b: MatrixPath::new(grid, b)?,
        q: MatrixPath::new(grid, q)?,
        h0: c.h0_aug(),
        d0: c.d0_aug(),
        d0bar: MatrixPath::new(grid, d0bar)?,
    })
}

/// Solves the leader Riccati equation for `𝒫`.
///
/// The augmented coefficients depend on the mean-field cascade, so the
/// cascade is integrated alongside `𝒫` (the cascade does not depend on `𝒫`,
/// hence its values coincide with [`solve_meanfield_riccati`]); this keeps
/// RK4 mid-stage coefficients exact instead of interpolated. Returns the
/// cascade, `𝒫` and `Z = 𝒫𝒟₀ + 𝒟̄₀`.
pub fn solve_leader_riccati(
    params: &ModelParams,
    grid: &TimeGrid,
) -> Result<(MeanFieldPaths, MatrixPath, MatrixPath)> {
    let c = OpenLoopCoefficients::new(params)?;
    solve_leader_riccati_with(&c, grid)
}

fn solve_leader_riccati_with(
    c: &OpenLoopCoefficients,
    grid: &TimeGrid,
) -> Result<(MeanFieldPaths, MatrixPath, MatrixPath)> {
    let mut terminal = c.meanfield_terminal();
    terminal.push(c.h0_aug());
    let out = integrate_backward(|_, y| c.leader_rhs(y), &terminal, grid).map_err(|e| {
        rename_blowup(
            e,
            "(A3) fails numerically on [0,T]: leader Riccati equation blew up",
        )
    })?;
    let mut it = out.into_iter();
    let mf = MeanFieldPaths {
        pibar: it.next().expect("5 paths"),
        m: it.next().expect("5 paths"),
        m0: it.next().expect("5 paths"),
        pi0: it.next().expect("5 paths"),
    };
    let p = it.next().expect("5 paths");
    let d0 = c.d0_aug();
    let z = MatrixPath::new(
        *grid,
        (0..grid.num_nodes())
            .map(|k| p.at(k) * &d0 + c.d0bar_aug(mf.m.at(k), mf.m0.at(k)))
            .collect(),
    )?;
    Ok((mf, p, z))
}

/// Gain paths of the open-loop laws.
pub fn open_loop_gains(
    c: &OpenLoopCoefficients,
    pi: &MatrixPath,
    mf: &MeanFieldPaths,
    p: &MatrixPath,
) -> Result<OpenLoopGains> {
    let params = &c.params;
    let n = params.n();
    let m = params.m();
    let grid = *pi.grid();
    let zm = Mat::zeros(m, n);
    let sel = block_matrix(&[&[
        &params.b0.transpose(),
        &c.weights.b1_bar.transpose(),
        &zm,
        &zm,
    ]]);
    let rbt = &c.r_inv * params.b.transpose();
    let mut phi0 = Vec::with_capacity(grid.num_nodes());
    for k in 0..grid.num_nodes() {
        let (xi0, xibar) = c.xis(mf.pibar.at(k), mf.m.at(k), mf.m0.at(k), mf.pi0.at(k));
        let xi_row = block_matrix(&[&[&zm, &zm, &xi0.transpose(), &xibar.transpose()]]);
        phi0.push(-(&c.r0_inv * (&sel * p.at(k) + xi_row)));
    }
    Ok(OpenLoopGains {
        phi0: MatrixPath::new(grid, phi0)?,
        own: pi.map(|v| -(&rbt * v))?,
        mean: mf.pibar.zip_map(pi, |pb, pv| -(&rbt * (pb - pv)))?,
        leader: mf.m.map(|v| -(&rbt * v))?,
        adjoint: -rbt.clone(),
        control: -(&c.r_inv * &params.l),
    })
}

/// Full open-loop solve: `Π`, the cascade, the augmented coefficients,
/// `𝒫`, `Z` and the gain paths.
pub fn solve(params: &ModelParams, grid: &TimeGrid) -> Result<OpenLoopSolution> {
    let c = OpenLoopCoefficients::new(params)?;
    let pi = solve_pi_with(&c, grid)?;
    let (meanfield, p, z) = solve_leader_riccati_with(&c, grid)?;
    let aug = build_augmented_with(&c, &meanfield)?;
    let closed_loop = MatrixPath::new(
        *grid,
        (0..grid.num_nodes())
            .map(|k| aug.a.at(k) - aug.b.at(k) * p.at(k))
            .collect(),
    )?;
    let gains = open_loop_gains(&c, &pi, &meanfield, &p)?;
    Ok(OpenLoopSolution {
        coefficients: c,
        grid: *grid,
        pi,
        meanfield,
        aug,
        p,
        z,
        closed_loop,
        gains,
    })
}

impl OpenLoopSolution {
    /// `E[X(0)X(0)ᵀ]` for `X(0) = [ξ₀; ξ̄; 0; 0]`.
    pub fn initial_second_moment(&self) -> Mat {
        let p = &self.coefficients.params;
        let n = p.n();
        let mut s = Mat::zeros(4 * n, 4 * n);
        let mu0 = &p.xi0_mean;
        let xb = &p.xi_mean;
        s.view_mut((0, 0), (n, n))
            .copy_from(&(&p.xi0_cov + mu0 * mu0.transpose()));
        s.view_mut((0, n), (n, n))
            .copy_from(&(mu0 * xb.transpose()));
        s.view_mut((n, 0), (n, n))
            .copy_from(&(xb * mu0.transpose()));
        s.view_mut((n, n), (n, n)).copy_from(&(xb * xb.transpose()));
        s
    }

    /// Second moment `E[X(t)X(t)ᵀ]` of the augmented forward state along
    /// the grid, from `Σ' = 𝒜_cΣ + Σ𝒜_cᵀ + 𝒟₀𝒟₀ᵀ` (RK4, closed-loop drift
    /// interpolated at mid-stages).
    pub fn augmented_second_moment(&self) -> Result<MatrixPath> {
        let dd = &self.aug.d0 * self.aug.d0.transpose();
        let cl = &self.closed_loop;
        let out = integrate_forward_ode(
            |t, y| {
                let a = cl.interpolate_cubic(t);
                vec![&a * &y[0] + &y[0] * a.transpose() + &dd]
            },
            &[self.initial_second_moment()],
            &self.grid,
        )?;
        Ok(out.into_iter().next().expect("one path"))
    }

    /// Symmetric weight `W(t)` with `m_T`'s stochastic integrand equal to
    /// `XᵀWX`: `2φ̄₀ᵀB₀u₀ + 2φ̄ᵀB̄₁u₀ − ‖Bᵀφ̄‖²_{R⁻¹} + ‖u₀‖²_{R₁} − ‖Lu₀‖²_{R⁻¹}`.
    pub fn mt_integrand_weight(&self, k: usize) -> Mat {
        let c = &self.coefficients;
        let p = &c.params;
        let n = p.n();
        let pk = self.p.at(k);
        let phi0 = self.gains.phi0.at(k);
        let phibar0 = sub(pk, 2 * n, 0, n, 4 * n);
        let phibar = sub(pk, 3 * n, 0, n, 4 * n);
        let lrl = p.l.transpose() * &c.r_inv * &p.l;
        let w = phibar0.transpose() * &p.b0 * phi0 * 2.0
            + phibar.transpose() * &c.weights.b1_bar * phi0 * 2.0
            - phibar.transpose() * &c.s * &phibar
            + phi0.transpose() * (&p.r1 - lrl) * phi0;
        (&w + w.transpose()) * 0.5
    }

    /// Weight `W₀` with `E[2ξ̄ᵀφ̄(0) + 2ξ₀ᵀφ̄₀(0)] = tr(W₀ E[X(0)X(0)ᵀ])`.
    fn mt_initial_weight(&self) -> Mat {
        let n = self.coefficients.params.n();
        let p0 = self.p.initial();
        let mut w = Mat::zeros(4 * n, 4 * n);
        // 2 x̄ᵀ (row block 4 of 𝒫) X + 2 x̄₀ᵀ (row block 3 of 𝒫) X
        w.view_mut((n, 0), (n, 4 * n))
            .copy_from(&(sub(p0, 3 * n, 0, n, 4 * n) * 2.0));
        w.view_mut((0, 0), (n, 4 * n))
            .copy_from(&(sub(p0, 2 * n, 0, n, 4 * n) * 2.0));
        (&w + w.transpose()) * 0.5
    }

    /// Deterministic noise contribution to `m_T`:
    /// `∫ tr(DᵀΠD) + tr(D₀ᵀM₀D₀) + 2 tr(D₀ᵀ(q̄₀⁰ − M₀D₀)) dt`, where
    /// `q̄₀⁰ − M₀D₀` is the third block of `𝒫𝒟₀`.
    pub fn mt_noise_term(&self) -> f64 {
        let p = &self.coefficients.params;
        let n = p.n();
        let vals: Vec<f64> = (0..self.grid.num_nodes())
            .map(|k| {
                let pd = self.p.at(k) * &self.aug.d0;
                let q0 = sub(&pd, 2 * n, 0, n, p.d());
                (p.d.transpose() * self.pi.at(k) * &p.d).trace()
                    + (p.d0.transpose() * self.meanfield.m0.at(k) * &p.d0).trace()
                    + 2.0 * (p.d0.transpose() * q0).trace()
            })
            .collect();
        trapezoid_end_corrected(&vals, self.grid.dt())
    }
}

/// How the common-noise expectation inside `m_T` is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MtMethod {
    /// Exact second moments of the augmented state (no sampling error).
    Moments,
    /// Euler–Maruyama paths of the augmented state; per-path seeds `seed + j`.
    MonteCarlo { paths: usize, seed: u64 },
}

/// Limiting open-loop costs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OpenLoopTheory {
    /// Leader cost `E[ξ₀ᵀy₀(0) + ξ̄ᵀȳ(0)] + ∫tr(D₀ᵀβ₀)dt`.
    pub leader: f64,
    /// Average social cost of the followers.
    pub social_per_n: f64,
    /// The constant `m_T` (with its Monte-Carlo standard error when sampled).
    pub m_t: Estimate,
}

/// Evaluates the limiting leader cost and the average social cost.
///
/// The average social cost is
/// `E‖ξᵢ‖²_{Π(0)} + ‖ξ̄‖²_{Π̄(0)−Π(0)} + E‖ξ₀‖²_{M₀(0)} + 2ξ̄ᵀΠ₀(0)Eξ₀ + m_T`, with
/// `m_T = E[2ξ̄ᵀφ̄(0) + 2ξ₀ᵀφ̄₀(0)]
///      + E∫[2φ̄₀ᵀB₀u₀ + 2φ̄ᵀB̄₁u₀ − ‖Bᵀφ̄‖²_{R⁻¹} + ‖u₀‖²_{R₁} − ‖Lu₀‖²_{R⁻¹}]dt
///      + ∫[tr(DᵀΠD) + tr(D₀ᵀM₀D₀) + 2tr(D₀ᵀ(q̄₀⁰ − M₀D₀))]dt`.
pub fn theoretical_costs(sol: &OpenLoopSolution, method: MtMethod) -> Result<OpenLoopTheory> {
    let c = &sol.coefficients;
    let p = &c.params;
    let n = p.n();
    let grid = sol.grid;
    let sigma0 = sol.initial_second_moment();

    let beta0: Vec<f64> = (0..grid.num_nodes())
        .map(|k| (p.d0.transpose() * sub(sol.z.at(k), 0, 0, n, p.d())).trace())
        .collect();
    let leader = (sol.p.initial() * &sigma0).trace() + trapezoid_end_corrected(&beta0, grid.dt());

    let stochastic = match method {
        MtMethod::Moments => {
            let sigma = sol.augmented_second_moment()?;
            let vals: Vec<f64> = (0..grid.num_nodes())
                .map(|k| (sol.mt_integrand_weight(k) * sigma.at(k)).trace())
                .collect();
            Estimate::exact(trapezoid_end_corrected(&vals, grid.dt()))
        }
        MtMethod::MonteCarlo { paths, seed } => {
            if paths == 0 {
                return Err(Error::InvalidArgument("m_T needs at least one path".into()));
            }
            let weights: Vec<Mat> = (0..grid.num_nodes())
                .map(|k| sol.mt_integrand_weight(k))
                .collect();
            let factor = covariance_factor(&p.xi0_cov, "xi0_cov")?;
            let samples: Vec<f64> = (0..paths)
                .into_par_iter()
                .map(|j| {
                    let path_seed = seed.wrapping_add(j as u64);
                    let w0 = BrownianBundle::generate(path_seed, 1, p.d(), &grid);
                    let mut rng = noise_rng(path_seed, 0);
                    let xi0 = gaussian_vector(&mut rng, &p.xi0_mean, &factor);
                    let mut x = Mat::zeros(4 * n, 1);
                    x.view_mut((0, 0), (n, 1)).copy_from(&xi0);
                    x.view_mut((n, 0), (n, 1)).copy_from(&p.xi_mean);
                    let mut vals = Vec::with_capacity(grid.num_nodes());
                    for (k, w) in weights.iter().enumerate() {
                        vals.push((x.transpose() * w * &x)[(0, 0)]);
                        if k < grid.num_steps() {
                            let drift = sol.closed_loop.at(k) * &x;
                            x = crate::matgrid::em_step(
                                &x,
                                &drift,
                                grid.dt(),
                                &[&sol.aug.d0 * w0.source(0).columns(k, 1)],
                            );
                        }
                    }
                    trapezoid_end_corrected(&vals, grid.dt())
                })
                .collect();
            estimate(&samples)
        }
    };

    let m_t_value =
        (sol.mt_initial_weight() * &sigma0).trace() + stochastic.mean + sol.mt_noise_term();
    let m_t = Estimate {
        mean: m_t_value,
        stderr: stochastic.stderr,
    };

    let xb = &p.xi_mean;
    let mu0 = &p.xi0_mean;
    let ex0 = &p.xi0_cov + mu0 * mu0.transpose();
    let social_per_n = (sol.pi.initial() * (&p.xi_cov + xb * xb.transpose())).trace()
        + (xb.transpose() * (sol.meanfield.pibar.initial() - sol.pi.initial()) * xb)[(0, 0)]
        + (sol.meanfield.m0.initial() * ex0).trace()
        + 2.0 * (xb.transpose() * sol.meanfield.pi0.initial() * mu0)[(0, 0)]
        + m_t_value;
    Ok(OpenLoopTheory {
        leader,
        social_per_n,
        m_t,
    })
}
