//! Feedback (closed-loop) asymptotic Stackelberg solution.
//!
//! The leader uses `u₀ = P₀x₀ + P̄x̄` and each follower
//! `uᵢ = −R⁻¹BᵀKxᵢ − R⁻¹(BᵀK₀ + LP₀)x₀ − R⁻¹(BᵀK̄ + LP̄)x̄`.
//! The follower coefficients `(K, K̄, K₀, Λ₀, Λ̄)` and the leader value
//! `Ψ = [[Ψ₁, Ψ₃ᵀ], [Ψ₃, Ψ₂]]` on `z = [x₀; x̄]` are coupled through the
//! leader gains and are integrated as one system.

use crate::error::{Error, Result};
use crate::matgrid::{
    block_matrix, integrate_backward, integrate_forward_ode, trapezoid_end_corrected, Mat,
    MatrixPath, TimeGrid,
};
use crate::model::ModelParams;
use crate::openloop::{riccati_rhs, OpenLoopCoefficients};

/// Gains and closed-loop matrices derived from one state of the system.
#[derive(Clone, Debug)]
struct StageGains {
    p0: Mat,
    pbar: Mat,
    /// `A₀ + B₀P₀`.
    a0c: Mat,
    /// `G₀ + B₀P̄`.
    g0c: Mat,
    /// `A + G + B̄₁P̄ − S(K + K̄)`.
    abar: Mat,
    /// `F + B̄₁P₀ − SK₀`.
    fbar: Mat,
}

fn stage_gains(c: &OpenLoopCoefficients, y: &[Mat]) -> StageGains {
    let p = &c.params;
    let b1 = &c.weights.b1_bar;
    let (k, kbar, k0, psi1, psi2, psi3) = (&y[0], &y[1], &y[2], &y[5], &y[6], &y[7]);
    let p0 = -(&c.r0_inv * (p.b0.transpose() * psi1 + b1.transpose() * psi3));
    let pbar = -(&c.r0_inv * (p.b0.transpose() * psi3.transpose() + b1.transpose() * psi2));
    StageGains {
        a0c: &p.a0 + &p.b0 * &p0,
        g0c: &p.g0 + &p.b0 * &pbar,
        abar: &c.ag + b1 * &pbar - &c.s * (k + kbar),
        fbar: &p.f + b1 * &p0 - &c.s * k0,
        p0,
        pbar,
    }
}

/// Time derivatives of `[K, K̄, K₀, Λ₀, Λ̄, Ψ₁, Ψ₂, Ψ₃]`.
pub fn feedback_rhs(c: &OpenLoopCoefficients, y: &[Mat]) -> Vec<Mat> {
    let p = &c.params;
    let w = &c.weights;
    let b1 = &w.b1_bar;
    let (k, kbar, k0, lam0, lambar, psi1, psi2, psi3) =
        (&y[0], &y[1], &y[2], &y[3], &y[4], &y[5], &y[6], &y[7]);
    let g = stage_gains(c, y);
    let (p0, pbar) = (&g.p0, &g.pbar);
    let s = &c.s;
    let ag_t = &c.ag + b1 * pbar;
    let gp = &p.g + b1 * pbar;
    let ft = &p.f + b1 * p0;
    let kk = k + kbar;
    let lr = p.l.transpose() * &c.r_inv * &p.l;
    let r1_lr = &p.r1 - &lr;

    let d_k = riccati_rhs(&p.a, s, &p.q, k);
    let d_kbar =
        -(ag_t.transpose() * kbar + kbar * &ag_t - k * s * kbar - kbar * s * k - kbar * s * kbar
            + gp.transpose() * k
            + k * &gp
            + k0 * &g.g0c
            + g.g0c.transpose() * lambar
            + pbar.transpose() * &r1_lr * pbar
            - &w.q_gamma);
    let d_k0 = -(ag_t.transpose() * k0 + k0 * &g.a0c - &kk * s * k0
        + g.g0c.transpose() * lam0
        + &kk * &ft
        - &w.q_gamma1
        + pbar.transpose() * &r1_lr * p0);
    let d_lam0 = -(lam0 * &g.a0c + g.a0c.transpose() * lam0 - lambar * s * k0
        + lambar * &ft
        + ft.transpose() * k0
        + p0.transpose() * &r1_lr * p0
        + &c.g1qg1);
    let d_lambar = -(lambar * (&ag_t - s * &kk)
        + g.a0c.transpose() * lambar
        + lam0 * &g.g0c
        + ft.transpose() * &kk
        - w.q_gamma1.transpose()
        + p0.transpose() * &r1_lr * pbar);
    let d_psi1 = -(&p.q0
        + p0.transpose() * &p.r0 * p0
        + g.a0c.transpose() * psi1
        + psi1 * &g.a0c
        + g.fbar.transpose() * psi3
        + psi3.transpose() * &g.fbar);
    let d_psi2 = -(p.gamma0.transpose() * &p.q0 * &p.gamma0
        + pbar.transpose() * &p.r0 * pbar
        + g.abar.transpose() * psi2
        + psi2 * &g.abar
        + psi3 * &g.g0c
        + g.g0c.transpose() * psi3.transpose());
    let d_psi3 = -(pbar.transpose() * &p.r0 * p0 - p.gamma0.transpose() * &p.q0
        + g.g0c.transpose() * psi1
        + psi2 * &g.fbar
        + g.abar.transpose() * psi3
        + psi3 * &g.a0c);
    vec![d_k, d_kbar, d_k0, d_lam0, d_lambar, d_psi1, d_psi2, d_psi3]
}

/// Terminal values of `[K, K̄, K₀, Λ₀, Λ̄, Ψ₁, Ψ₂, Ψ₃]`.
pub fn feedback_terminal(c: &OpenLoopCoefficients) -> Vec<Mat> {
    let p = &c.params;
    let w = &c.weights;
    vec![
        p.h.clone(),
        -&w.h_gamma_bar,
        -&w.h_gamma1_bar,
        p.gamma1_bar.transpose() * &p.h * &p.gamma1_bar,
        -w.h_gamma1_bar.transpose(),
        p.h0.clone(),
        p.gamma0_bar.transpose() * &p.h0 * &p.gamma0_bar,
        -(p.gamma0_bar.transpose() * &p.h0),
    ]
}

/// Feedback gain paths.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedbackGains {
    pub p0: MatrixPath,
    pub pbar: MatrixPath,
    /// `−R⁻¹BᵀK`.
    pub own: MatrixPath,
    /// `−R⁻¹(BᵀK₀ + LP₀)`.
    pub leader: MatrixPath,
    /// `−R⁻¹(BᵀK̄ + LP̄)`.
    pub mean: MatrixPath,
    /// `Ā`, drift of `x̄` on itself.
    pub abar: MatrixPath,
    /// `F̄`, drift of `x̄` on `x₀`.
    pub fbar: MatrixPath,
    /// Closed-loop matrix `[[A₀ + B₀P₀, G₀ + B₀P̄], [F̄, Ā]]` of `z = [x₀; x̄]`.
    pub closed_loop: MatrixPath,
}

/// Solution of the coupled feedback system.
#[derive(Clone, Debug)]
pub struct FeedbackSolution {
    pub coefficients: OpenLoopCoefficients,
    pub grid: TimeGrid,
    pub k: MatrixPath,
    pub kbar: MatrixPath,
    pub k0: MatrixPath,
    pub lambda0: MatrixPath,
    pub lambdabar: MatrixPath,
    pub psi1: MatrixPath,
    pub psi2: MatrixPath,
    pub psi3: MatrixPath,
    pub gains: FeedbackGains,
}

/// Integrates the coupled feedback system backward from its terminal values.
pub fn solve_feedback(params: &ModelParams, grid: &TimeGrid) -> Result<FeedbackSolution> {
    let c = OpenLoopCoefficients::new(params)?;
    let out = integrate_backward(|_, y| feedback_rhs(&c, y), &feedback_terminal(&c), grid)
        .map_err(|e| match e {
            Error::BlowUp { time, .. } => Error::BlowUp {
                system: "feedback Riccati system has no solution on [0,T]".into(),
                time,
            },
            other => other,
        })?;
    let mut it = out.into_iter();
    let mut next = || it.next().expect("8 paths");
    let (k, kbar, k0, lambda0, lambdabar, psi1, psi2, psi3) = (
        next(),
        next(),
        next(),
        next(),
        next(),
        next(),
        next(),
        next(),
    );

    let nodes = grid.num_nodes();
    let p = &c.params;
    let rbt = &c.r_inv * p.b.transpose();
    let rl = &c.r_inv * &p.l;
    let mut cols: [Vec<Mat>; 8] = Default::default();
    for idx in 0..nodes {
        let y = [
            k.at(idx).clone(),
            kbar.at(idx).clone(),
            k0.at(idx).clone(),
            lambda0.at(idx).clone(),
            lambdabar.at(idx).clone(),
            psi1.at(idx).clone(),
            psi2.at(idx).clone(),
            psi3.at(idx).clone(),
        ];
        let g = stage_gains(&c, &y);
        cols[2].push(-(&rbt * &y[0]));
        cols[3].push(-(&rbt * &y[2] + &rl * &g.p0));
        cols[4].push(-(&rbt * &y[1] + &rl * &g.pbar));
        cols[7].push(block_matrix(&[&[&g.a0c, &g.g0c], &[&g.fbar, &g.abar]]));
        cols[0].push(g.p0);
        cols[1].push(g.pbar);
        cols[5].push(g.abar);
        cols[6].push(g.fbar);
    }
    let [p0, pbar, own, leader, mean, abar, fbar, closed_loop] =
        cols.map(|v| MatrixPath::new(*grid, v));
    let gains = FeedbackGains {
        p0: p0?,
        pbar: pbar?,
        own: own?,
        leader: leader?,
        mean: mean?,
        abar: abar?,
        fbar: fbar?,
        closed_loop: closed_loop?,
    };
    Ok(FeedbackSolution {
        coefficients: c,
        grid: *grid,
        k,
        kbar,
        k0,
        lambda0,
        lambdabar,
        psi1,
        psi2,
        psi3,
        gains,
    })
}

/// Limiting feedback costs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeedbackTheory {
    /// Leader cost from the value function `Ψ`.
    pub leader: f64,
    /// Leader cost recomputed from the second moments of `z = [x₀; x̄]`.
    pub leader_via_moments: f64,
}

impl FeedbackSolution {
    /// `E[z(0)z(0)ᵀ]` for `z(0) = [ξ₀; ξ̄]`.
    pub fn initial_second_moment(&self) -> Mat {
        let p = &self.coefficients.params;
        let mu0 = &p.xi0_mean;
        let xb = &p.xi_mean;
        block_matrix(&[
            &[
                &(&p.xi0_cov + mu0 * mu0.transpose()),
                &(mu0 * xb.transpose()),
            ],
            &[&(xb * mu0.transpose()), &(xb * xb.transpose())],
        ])
    }

    /// Closed-loop matrix of `z = [x₀; x̄]` for arbitrary leader gain
    /// paths, with the follower coefficients `K, K̄, K₀` held fixed.
    pub fn closed_loop_for_gains(&self, p0: &MatrixPath, pbar: &MatrixPath) -> Result<MatrixPath> {
        let c = &self.coefficients;
        let p = &c.params;
        let b1 = &c.weights.b1_bar;
        let values = (0..self.grid.num_nodes())
            .map(|k| {
                let (p0, pbar) = (p0.at(k), pbar.at(k));
                let a0c = &p.a0 + &p.b0 * p0;
                let g0c = &p.g0 + &p.b0 * pbar;
                let abar = &c.ag + b1 * pbar - &c.s * (self.k.at(k) + self.kbar.at(k));
                let fbar = &p.f + b1 * p0 - &c.s * self.k0.at(k);
                block_matrix(&[&[&a0c, &g0c], &[&fbar, &abar]])
            })
            .collect();
        MatrixPath::new(self.grid, values)
    }

    /// `E[z(t)z(t)ᵀ] = [[X̄₀, Yᵀ], [Y, X̄]]` along the grid under the
    /// closed-loop matrix `cl`.
    pub fn second_moments_for(&self, cl: &MatrixPath) -> Result<MatrixPath> {
        let p = &self.coefficients.params;
        let n = p.n();
        let z = Mat::zeros(n, n);
        let dd = &p.d0 * p.d0.transpose();
        let noise = block_matrix(&[&[&dd, &z], &[&z, &z]]);
        let out = integrate_forward_ode(
            |t, y| {
                let a = cl.interpolate_cubic(t);
                vec![&a * &y[0] + &y[0] * a.transpose() + &noise]
            },
            &[self.initial_second_moment()],
            &self.grid,
        )?;
        Ok(out.into_iter().next().expect("one path"))
    }

    /// Second moments under the solved gains.
    pub fn second_moments(&self) -> Result<MatrixPath> {
        self.second_moments_for(&self.gains.closed_loop)
    }

    /// Running-cost weight of the leader on `z = [x₀; x̄]` for gains `(P₀, P̄)`.
    pub fn leader_running_weight(&self, p0: &Mat, pbar: &Mat) -> Mat {
        let p = &self.coefficients.params;
        let w11 = &p.q0 + p0.transpose() * &p.r0 * p0;
        let w21 = pbar.transpose() * &p.r0 * p0 - p.gamma0.transpose() * &p.q0;
        let w22 = p.gamma0.transpose() * &p.q0 * &p.gamma0 + pbar.transpose() * &p.r0 * pbar;
        block_matrix(&[&[&w11, &w21.transpose()], &[&w21, &w22]])
    }

    /// Terminal weight of the leader on `z`.
    pub fn leader_terminal_weight(&self) -> Mat {
        let p = &self.coefficients.params;
        let h21 = -(p.gamma0_bar.transpose() * &p.h0);
        block_matrix(&[
            &[&p.h0, &h21.transpose()],
            &[&h21, &(p.gamma0_bar.transpose() * &p.h0 * &p.gamma0_bar)],
        ])
    }

    /// Leader cost `tr(Ψ₁(0)E[ξ₀ξ₀ᵀ]) + ξ̄ᵀΨ₂(0)ξ̄ + 2ξ̄ᵀΨ₃(0)Eξ₀ + ∫tr(D₀ᵀΨ₁D₀)dt`.
    pub fn leader_cost(&self) -> f64 {
        let p = &self.coefficients.params;
        let mu0 = &p.xi0_mean;
        let xb = &p.xi_mean;
        let noise: Vec<f64> = self
            .psi1
            .values()
            .iter()
            .map(|v| (p.d0.transpose() * v * &p.d0).trace())
            .collect();
        (self.psi1.initial() * (&p.xi0_cov + mu0 * mu0.transpose())).trace()
            + (xb.transpose() * self.psi2.initial() * xb)[(0, 0)]
            + 2.0 * (xb.transpose() * self.psi3.initial() * mu0)[(0, 0)]
            + trapezoid_end_corrected(&noise, self.grid.dt())
    }

    /// Limiting leader cost `∫tr(W Σ_z)dt + tr(H Σ_z(T))` when the leader
    /// uses the gain paths `(P₀, P̄)` and the followers keep `K, K̄, K₀`.
    pub fn leader_cost_for_gains(&self, p0: &MatrixPath, pbar: &MatrixPath) -> Result<f64> {
        let sigma = self.second_moments_for(&self.closed_loop_for_gains(p0, pbar)?)?;
        let vals: Vec<f64> = (0..self.grid.num_nodes())
            .map(|k| (self.leader_running_weight(p0.at(k), pbar.at(k)) * sigma.at(k)).trace())
            .collect();
        Ok(trapezoid_end_corrected(&vals, self.grid.dt())
            + (self.leader_terminal_weight() * sigma.terminal()).trace())
    }

    /// Leader cost from the second moments under the solved gains.
    pub fn leader_cost_via_moments(&self) -> Result<f64> {
        self.leader_cost_for_gains(&self.gains.p0, &self.gains.pbar)
    }

    pub fn theory(&self) -> Result<FeedbackTheory> {
        Ok(FeedbackTheory {
            leader: self.leader_cost(),
            leader_via_moments: self.leader_cost_via_moments()?,
        })
    }

    /// Average follower cost with `N` followers, up to the correction `ε₁`:
    /// `tr(K(0)E[ξᵢξᵢᵀ]) + tr(K̄(0)(ξ̄ξ̄ᵀ + Σ/N)) + tr(Λ₀(0)E[ξ₀ξ₀ᵀ]) + 2Eξ₀ᵀΛ̄(0)ξ̄
    ///  + ∫[tr(DᵀKD) + tr(D₀ᵀΛ₀D₀) + tr(DᵀK̄D)/N]dt`.
    pub fn follower_cost_base(&self, n_followers: usize) -> f64 {
        let p = &self.coefficients.params;
        let inv_n = 1.0 / n_followers as f64;
        let mu0 = &p.xi0_mean;
        let xb = &p.xi_mean;
        let xbxb = xb * xb.transpose();
        let noise: Vec<f64> = (0..self.grid.num_nodes())
            .map(|k| {
                (p.d.transpose() * self.k.at(k) * &p.d).trace()
                    + (p.d0.transpose() * self.lambda0.at(k) * &p.d0).trace()
                    + inv_n * (p.d.transpose() * self.kbar.at(k) * &p.d).trace()
            })
            .collect();
        (self.k.initial() * (&p.xi_cov + &xbxb)).trace()
            + (self.kbar.initial() * (&xbxb + &p.xi_cov * inv_n)).trace()
            + (self.lambda0.initial() * (&p.xi0_cov + mu0 * mu0.transpose())).trace()
            + 2.0 * (mu0.transpose() * self.lambdabar.initial() * xb)[(0, 0)]
            + trapezoid_end_corrected(&noise, self.grid.dt())
    }

    /// Integrand of `ε₁` at node `k` for one realization, with
    /// `e = x^(N) − x̄` and `û^(N)` the followers' average control:
    /// `‖(BᵀK̄ + LP̄)e‖²_{R⁻¹} − 2eᵀP̄ᵀ[Lᵀû^(N) + R₁(P₀x₀ + ½P̄(x̄ + x^(N)))
    ///  + B₀ᵀ(Λ₀x₀ + Λ̄x^(N)) + B₁ᵀ((K + K̄)x^(N) + K₀x₀)]`.
    pub fn epsilon1_integrand(
        &self,
        k: usize,
        x0: &Mat,
        x_avg: &Mat,
        xbar: &Mat,
        u_avg: &Mat,
    ) -> f64 {
        let c = &self.coefficients;
        let p = &c.params;
        let p0 = self.gains.p0.at(k);
        let pbar = self.gains.pbar.at(k);
        let e = x_avg - xbar;
        let v = (p.b.transpose() * self.kbar.at(k) + &p.l * pbar) * &e;
        let quad = (v.transpose() * &c.r_inv * &v)[(0, 0)];
        let bracket = p.l.transpose() * u_avg
            + &p.r1 * (p0 * x0 + pbar * (xbar + x_avg) * 0.5)
            + p.b0.transpose() * (self.lambda0.at(k) * x0 + self.lambdabar.at(k) * x_avg)
            + p.b1.transpose() * ((self.k.at(k) + self.kbar.at(k)) * x_avg + self.k0.at(k) * x0);
        quad - 2.0 * (e.transpose() * pbar.transpose() * bracket)[(0, 0)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn terminal_values_for_scalar_scenario() {
        let p = ModelParams::scalar_scenario();
        let g = TimeGrid::new(1.0, 0.01).unwrap();
        let sol = solve_feedback(&p, &g).unwrap();
        for path in [
            &sol.k,
            &sol.kbar,
            &sol.k0,
            &sol.lambda0,
            &sol.lambdabar,
            &sol.psi1,
            &sol.psi2,
            &sol.psi3,
        ] {
            assert_eq!(path.terminal(), &Mat::zeros(1, 1));
        }
        assert_eq!(sol.gains.p0.terminal(), &Mat::zeros(1, 1));
    }

    #[test]
    fn leader_value_matches_moments() {
        let p = ModelParams::scalar_scenario();
        let g = TimeGrid::new(1.0, 0.001).unwrap();
        let sol = solve_feedback(&p, &g).unwrap();
        let t = sol.theory().unwrap();
        assert!(
            (t.leader - t.leader_via_moments).abs() < 1e-6 * t.leader.abs(),
            "{t:?}"
        );
    }
}
