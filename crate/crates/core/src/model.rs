//! Model data of the game: leader and follower dynamics, cost weights,
//! initial-state moments, the derived tracking weights, and checks of the
//! standing assumptions.

use crate::error::{Error, Result};
use crate::matgrid::{invert, max_abs, min_sym_eigenvalue, Mat};

/// Tolerance for (semi-)definiteness checks.
pub const EIG_TOL: f64 = 1e-10;

/// Every matrix of the leader/follower model together with the horizon,
/// the follower count and the initial-state moments.
///
/// Shapes: states are `n`-dimensional, controls `m`-dimensional and each
/// Brownian motion `d`-dimensional.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// Horizon `T`.
    pub t_end: f64,
    /// Number of followers `N`.
    pub n_followers: usize,

    pub a0: Mat,
    pub b0: Mat,
    pub g0: Mat,
    pub d0: Mat,
    pub q0: Mat,
    pub r0: Mat,
    pub h0: Mat,
    pub gamma0: Mat,
    pub gamma0_bar: Mat,

    pub a: Mat,
    pub b: Mat,
    pub g: Mat,
    pub f: Mat,
    pub b1: Mat,
    pub d: Mat,
    pub q: Mat,
    pub r: Mat,
    pub h: Mat,
    pub gamma: Mat,
    pub gamma1: Mat,
    pub gamma_bar: Mat,
    pub gamma1_bar: Mat,
    pub l: Mat,
    pub r1: Mat,

    /// Mean of the leader's initial state (`n × 1`).
    pub xi0_mean: Mat,
    /// Covariance of the leader's initial state.
    pub xi0_cov: Mat,
    /// Common mean of the followers' initial states (`n × 1`).
    pub xi_mean: Mat,
    /// Common covariance of the followers' initial states.
    pub xi_cov: Mat,
}

impl ModelParams {
    /// Scalar scenario used for the numerical experiments: leader
    /// `A₀=-1, B₀=1, G₀=0.1, D₀=1, Γ₀=1, Q₀=1, R₀=1`, followers
    /// `A=-1, B=1, G=0.1, F=1, B₁=1, D=1, Γ=Γ₁=1, Q=1, R=2, L=2, R₁=1`,
    /// initial laws `N(10, 2)` (leader) and `N(5, 1)` (followers), zero
    /// terminal weights, `T = 1`, `N = 20`.
    pub fn scalar_scenario() -> Self {
        let s = |x: f64| Mat::from_element(1, 1, x);
        Self {
            t_end: 1.0,
            n_followers: 20,
            a0: s(-1.0),
            b0: s(1.0),
            g0: s(0.1),
            d0: s(1.0),
            q0: s(1.0),
            r0: s(1.0),
            h0: s(0.0),
            gamma0: s(1.0),
            gamma0_bar: s(0.0),
            a: s(-1.0),
            b: s(1.0),
            g: s(0.1),
            f: s(1.0),
            b1: s(1.0),
            d: s(1.0),
            q: s(1.0),
            r: s(2.0),
            h: s(0.0),
            gamma: s(1.0),
            gamma1: s(1.0),
            gamma_bar: s(0.0),
            gamma1_bar: s(0.0),
            l: s(2.0),
            r1: s(1.0),
            xi0_mean: s(10.0),
            xi0_cov: s(2.0),
            xi_mean: s(5.0),
            xi_cov: s(1.0),
        }
    }

    /// Model with every matrix zero for the given dimensions except the
    /// control weights `R₀ = R = I` (so inverses exist).
    pub fn zeros(n: usize, m: usize, d: usize) -> Self {
        let z = |r: usize, c: usize| Mat::zeros(r, c);
        Self {
            t_end: 1.0,
            n_followers: 1,
            a0: z(n, n),
            b0: z(n, m),
            g0: z(n, n),
            d0: z(n, d),
            q0: z(n, n),
            r0: Mat::identity(m, m),
            h0: z(n, n),
            gamma0: z(n, n),
            gamma0_bar: z(n, n),
            a: z(n, n),
            b: z(n, m),
            g: z(n, n),
            f: z(n, n),
            b1: z(n, m),
            d: z(n, d),
            q: z(n, n),
            r: Mat::identity(m, m),
            h: z(n, n),
            gamma: z(n, n),
            gamma1: z(n, n),
            gamma_bar: z(n, n),
            gamma1_bar: z(n, n),
            l: z(m, m),
            r1: z(m, m),
            xi0_mean: z(n, 1),
            xi0_cov: z(n, n),
            xi_mean: z(n, 1),
            xi_cov: z(n, n),
        }
    }

    /// State dimension `n`.
    pub fn n(&self) -> usize {
        self.a0.nrows()
    }

    /// Control dimension `m`.
    pub fn m(&self) -> usize {
        self.b0.ncols()
    }

    /// Noise dimension `d`.
    pub fn d(&self) -> usize {
        self.d0.ncols()
    }

    /// Named references to every matrix, in canonical order.
    pub fn named_matrices(&self) -> Vec<(&'static str, &Mat)> {
        vec![
            ("A0", &self.a0),
            ("B0", &self.b0),
            ("G0", &self.g0),
            ("D0", &self.d0),
            ("Q0", &self.q0),
            ("R0", &self.r0),
            ("H0", &self.h0),
            ("Gamma0", &self.gamma0),
            ("Gamma0bar", &self.gamma0_bar),
            ("A", &self.a),
            ("B", &self.b),
            ("G", &self.g),
            ("F", &self.f),
            ("B1", &self.b1),
            ("D", &self.d),
            ("Q", &self.q),
            ("R", &self.r),
            ("H", &self.h),
            ("Gamma", &self.gamma),
            ("Gamma1", &self.gamma1),
            ("Gammabar", &self.gamma_bar),
            ("Gamma1bar", &self.gamma1_bar),
            ("L", &self.l),
            ("R1", &self.r1),
            ("xi0_mean", &self.xi0_mean),
            ("xi0_cov", &self.xi0_cov),
            ("xi_mean", &self.xi_mean),
            ("xi_cov", &self.xi_cov),
        ]
    }

    /// Expected shape of each named matrix for dimensions `(n, m, d)`.
    pub fn expected_shape(name: &str, n: usize, m: usize, d: usize) -> Option<(usize, usize)> {
        Some(match name {
            "B0" | "B" | "B1" => (n, m),
            "D0" | "D" => (n, d),
            "R0" | "R" | "L" | "R1" => (m, m),
            "xi0_mean" | "xi_mean" => (n, 1),
            "A0" | "G0" | "Q0" | "H0" | "Gamma0" | "Gamma0bar" | "A" | "G" | "F" | "Q" | "H"
            | "Gamma" | "Gamma1" | "Gammabar" | "Gamma1bar" | "xi0_cov" | "xi_cov" => (n, n),
            _ => return None,
        })
    }

    /// Checks that all shapes agree with `(n, m, d)` read off `A₀`, `B₀`,
    /// `D₀`, that the horizon is positive and that every entry is finite.
    pub fn validate(&self) -> Result<()> {
        let (n, m, d) = (self.n(), self.m(), self.d());
        if n == 0 || m == 0 || d == 0 {
            return Err(Error::Dimension(format!(
                "dimensions must be positive, got n={n}, m={m}, d={d}"
            )));
        }
        for (name, mat) in self.named_matrices() {
            let want =
                Self::expected_shape(name, n, m, d).expect("every listed matrix has a shape");
            if mat.shape() != want {
                return Err(Error::Dimension(format!(
                    "`{name}` is {}x{}, expected {}x{}",
                    mat.nrows(),
                    mat.ncols(),
                    want.0,
                    want.1
                )));
            }
            if mat.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "`{name}` has a non-finite entry"
                )));
            }
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "horizon T must be positive, got {}",
                self.t_end
            )));
        }
        Ok(())
    }

    /// `S = B R⁻¹ Bᵀ`.
    pub fn s_matrix(&self) -> Result<Mat> {
        Ok(&self.b * invert(&self.r, "R")? * self.b.transpose())
    }
}

/// Tracking weights and the effective leader-control input seen by the
/// followers' mean field.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivedWeights {
    /// `Q_Γ = QΓ + ΓᵀQ − ΓᵀQΓ`.
    pub q_gamma: Mat,
    /// `Q_Γ₁ = QΓ₁ − ΓᵀQΓ₁`.
    pub q_gamma1: Mat,
    /// `H_Γ̄ = HΓ̄ + Γ̄ᵀH − Γ̄ᵀHΓ̄`.
    pub h_gamma_bar: Mat,
    /// `H_Γ̄₁ = HΓ̄₁ − Γ̄ᵀHΓ̄₁`.
    pub h_gamma1_bar: Mat,
    /// `B̄₁ = B₁ − BR⁻¹L`.
    pub b1_bar: Mat,
}

/// Computes the derived weights; fails if `R` is singular.
pub fn derive_weights(p: &ModelParams) -> Result<DerivedWeights> {
    let r_inv = invert(&p.r, "R")?;
    let gt = p.gamma.transpose();
    let gbt = p.gamma_bar.transpose();
    Ok(DerivedWeights {
        q_gamma: &p.q * &p.gamma + &gt * &p.q - &gt * &p.q * &p.gamma,
        q_gamma1: &p.q * &p.gamma1 - &gt * &p.q * &p.gamma1,
        h_gamma_bar: &p.h * &p.gamma_bar + &gbt * &p.h - &gbt * &p.h * &p.gamma_bar,
        h_gamma1_bar: &p.h * &p.gamma1_bar - &gbt * &p.h * &p.gamma1_bar,
        b1_bar: &p.b1 - &p.b * r_inv * &p.l,
    })
}

/// Verdict and numeric witness for one standing assumption.
#[derive(Clone, Debug, PartialEq)]
pub struct AssumptionCheck {
    /// `Some(true/false)` when decidable from the data, `None` otherwise.
    pub holds: Option<bool>,
    /// Smallest relevant eigenvalue (NaN when not applicable).
    pub witness: f64,
    pub detail: String,
}

/// Verdicts for (A1) initial laws, (A2) weight definiteness,
/// (A3) Riccati solvability and (A4) follower convexity.
#[derive(Clone, Debug, PartialEq)]
pub struct AssumptionReport {
    pub a1: AssumptionCheck,
    pub a2: AssumptionCheck,
    pub a3: AssumptionCheck,
    pub a4: AssumptionCheck,
}

impl AssumptionReport {
    /// `(label, check)` pairs in order.
    pub fn entries(&self) -> [(&'static str, &AssumptionCheck); 4] {
        [
            ("A1", &self.a1),
            ("A2", &self.a2),
            ("A3", &self.a3),
            ("A4", &self.a4),
        ]
    }
}

/// Evaluates the assumptions. Violations are reported, never raised; only
/// malformed dimensions are errors.
pub fn validate_assumptions(p: &ModelParams) -> Result<AssumptionReport> {
    p.validate()?;

    let cov_eigs = [
        ("xi0_cov", min_sym_eigenvalue(&p.xi0_cov)),
        ("xi_cov", min_sym_eigenvalue(&p.xi_cov)),
    ];
    let (cov_name, cov_min) =
        cov_eigs.iter().cloned().fold(
            ("", f64::INFINITY),
            |acc, x| if x.1 < acc.1 { x } else { acc },
        );
    let a1 = AssumptionCheck {
        holds: Some(cov_min >= -EIG_TOL),
        witness: cov_min,
        detail: format!("smallest covariance eigenvalue {cov_min} ({cov_name})"),
    };

    // (name, smallest eigenvalue, required lower bound)
    let weights = [
        ("Q0", min_sym_eigenvalue(&p.q0), -EIG_TOL),
        ("H0", min_sym_eigenvalue(&p.h0), -EIG_TOL),
        ("Q", min_sym_eigenvalue(&p.q), -EIG_TOL),
        ("H", min_sym_eigenvalue(&p.h), -EIG_TOL),
        ("R0", min_sym_eigenvalue(&p.r0), EIG_TOL),
        ("R", min_sym_eigenvalue(&p.r), EIG_TOL),
    ];
    let worst = weights
        .iter()
        .cloned()
        .min_by(|x, y| (x.1 - x.2).total_cmp(&(y.1 - y.2)))
        .expect("non-empty");
    let a2_ok = weights.iter().all(|(_, e, lb)| e >= lb);
    let a2 = AssumptionCheck {
        holds: Some(a2_ok),
        witness: worst.1,
        detail: format!("tightest weight {}: min eigenvalue {}", worst.0, worst.1),
    };

    let a3 = AssumptionCheck {
        holds: None,
        witness: f64::NAN,
        detail: "decided numerically by the Riccati solves".into(),
    };

    let a4 = if max_abs(&p.l) == 0.0 {
        let e = min_sym_eigenvalue(&p.r);
        AssumptionCheck {
            holds: Some(e >= -EIG_TOL),
            witness: e,
            detail: format!("L = 0; min eigenvalue of R is {e}"),
        }
    } else {
        match invert(&p.r1, "R1") {
            Ok(r1_inv) => {
                let e = min_sym_eigenvalue(&(&p.r - &p.l * r1_inv * p.l.transpose()));
                AssumptionCheck {
                    holds: Some(e >= -EIG_TOL),
                    witness: e,
                    detail: format!("min eigenvalue of R - L R1^-1 L^T is {e}"),
                }
            }
            Err(_) => AssumptionCheck {
                holds: None,
                witness: f64::NAN,
                detail: "R1 is singular with L nonzero".into(),
            },
        }
    };

    Ok(AssumptionReport { a1, a2, a3, a4 })
}
