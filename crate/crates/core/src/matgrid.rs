//! Dense matrices on a uniform time grid, plus the deterministic steppers
//! (classical RK4 for ODEs, Euler–Maruyama for SDEs) used by every solver.
//!
//! A "tuple" of matrices is passed around as a slice `&[Mat]`; coupled ODE
//! systems are integrated as one stacked state so that every RK4 stage sees
//! same-stage values of all unknowns.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::format::fmt_f64;

/// Dynamically sized real matrix used for every model quantity.
pub type Mat = DMatrix<f64>;

/// Any ODE entry whose magnitude exceeds this value is treated as finite-time escape.
pub const BLOWUP_THRESHOLD: f64 = 1e12;

/// Default step size of the uniform grid.
pub const DEFAULT_DT: f64 = 1e-3;

/// Uniform grid `t_k = k * dt`, `k = 0..num_nodes`, on `[0, t_end]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    t_end: f64,
    dt: f64,
    num_nodes: usize,
}

impl TimeGrid {
    /// Builds the grid, requiring `t_end` to be an integer multiple of `dt`
    /// up to a relative tolerance of `1e-12`.
    pub fn new(t_end: f64, dt: f64) -> Result<Self> {
        if !(t_end.is_finite() && t_end > 0.0) {
            return Err(Error::Grid(format!(
                "horizon must be positive, got {t_end}"
            )));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Grid(format!("step must be positive, got {dt}")));
        }
        let steps = (t_end / dt).round();
        if !(1.0..=1e9).contains(&steps) {
            return Err(Error::Grid(format!(
                "horizon {t_end} and step {dt} give {steps} steps"
            )));
        }
        let steps = steps as usize;
        if ((steps as f64) * dt - t_end).abs() > 1e-12 * t_end {
            return Err(Error::Grid(format!(
                "horizon {t_end} is not a multiple of step {dt}"
            )));
        }
        Ok(Self {
            t_end,
            dt,
            num_nodes: steps + 1,
        })
    }

    /// Grid with the same horizon and half the step.
    pub fn refined(&self) -> Result<Self> {
        Self::new(self.t_end, self.dt / 2.0)
    }

    pub fn t_start(&self) -> f64 {
        0.0
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_steps(&self) -> usize {
        self.num_nodes - 1
    }

    /// Time of node `k`.
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// Iterator over all node times.
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.num_nodes).map(move |k| self.time(k))
    }
}

/// A matrix-valued function sampled at every node of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixPath {
    grid: TimeGrid,
    values: Vec<Mat>,
}

impl MatrixPath {
    /// Wraps node values, checking count, shape uniformity and finiteness.
    pub fn new(grid: TimeGrid, values: Vec<Mat>) -> Result<Self> {
        if values.len() != grid.num_nodes() {
            return Err(Error::Dimension(format!(
                "path has {} values for {} nodes",
                values.len(),
                grid.num_nodes()
            )));
        }
        let shape = values[0].shape();
        for (k, v) in values.iter().enumerate() {
            if v.shape() != shape {
                return Err(Error::Dimension(format!(
                    "node {k} has shape {:?}, expected {shape:?}",
                    v.shape()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    node: k,
                    time: grid.time(k),
                });
            }
        }
        Ok(Self { grid, values })
    }

    /// Path that equals `value` at every node.
    pub fn constant(grid: TimeGrid, value: Mat) -> Result<Self> {
        Self::new(grid, vec![value; grid.num_nodes()])
    }

    /// Applies `f` node by node.
    pub fn map(&self, f: impl FnMut(&Mat) -> Mat) -> Result<Self> {
        Self::new(self.grid, self.values.iter().map(f).collect())
    }

    /// Combines two paths on the same grid node by node.
    pub fn zip_map(
        &self,
        other: &MatrixPath,
        mut f: impl FnMut(&Mat, &Mat) -> Mat,
    ) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::Dimension("paths live on different grids".into()));
        }
        Self::new(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| f(a, b))
                .collect(),
        )
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[Mat] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Mat> {
        self.values
    }

    /// Value at node `k`.
    pub fn at(&self, k: usize) -> &Mat {
        &self.values[k]
    }

    /// Value at `t = 0`.
    pub fn initial(&self) -> &Mat {
        &self.values[0]
    }

    /// Value at `t = T`.
    pub fn terminal(&self) -> &Mat {
        &self.values[self.values.len() - 1]
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values[0].shape()
    }

    /// Node-wise transpose.
    pub fn transpose(&self) -> MatrixPath {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v.transpose()).collect(),
        }
    }

    /// `max_k max_ij |self_k - other_k|`.
    pub fn max_abs_diff(&self, other: &MatrixPath) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| max_abs(&(a - b)))
            .fold(0.0, f64::max)
    }

    /// `max_k max_ij |P_k - P_kᵀ|`.
    pub fn max_asymmetry(&self) -> f64 {
        self.values.iter().map(asymmetry).fold(0.0, f64::max)
    }

    /// Largest entry magnitude over the whole path.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(max_abs).fold(0.0, f64::max)
    }

    /// Piecewise-linear value at an arbitrary time in `[0, T]`.
    pub fn interpolate_linear(&self, t: f64) -> Mat {
        let (k, s) = self.locate(t);
        if k + 1 >= self.values.len() {
            return self.values[k].clone();
        }
        &self.values[k] * (1.0 - s) + &self.values[k + 1] * s
    }

    /// Four-point Lagrange interpolation (fourth-order accurate for smooth
    /// paths); falls back to linear interpolation on grids with fewer than
    /// four nodes.
    pub fn interpolate_cubic(&self, t: f64) -> Mat {
        let nodes = self.values.len();
        if nodes < 4 {
            return self.interpolate_linear(t);
        }
        let (k, _) = self.locate(t);
        let j0 = k.saturating_sub(1).min(nodes - 4);
        let x = t / self.grid.dt() - j0 as f64;
        let mut out = Mat::zeros(self.values[0].nrows(), self.values[0].ncols());
        for a in 0..4 {
            let mut w = 1.0;
            for b in 0..4 {
                if a != b {
                    w *= (x - b as f64) / (a as f64 - b as f64);
                }
            }
            out += &self.values[j0 + a] * w;
        }
        out
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let last = self.values.len() - 1;
        let pos = (t / self.grid.dt()).clamp(0.0, last as f64);
        let k = (pos.floor() as usize).min(last);
        (k, pos - k as f64)
    }

    /// CSV text: header `t,entry_1_1,entry_1_2,...` (row-major), one row per node.
    pub fn to_csv(&self) -> String {
        let (r, c) = self.shape();
        let mut out = String::from("t");
        for i in 1..=r {
            for j in 1..=c {
                out.push_str(&format!(",entry_{i}_{j}"));
            }
        }
        out.push('\n');
        for (k, v) in self.values.iter().enumerate() {
            out.push_str(&fmt_f64(self.grid.time(k)));
            for i in 0..r {
                for j in 0..c {
                    out.push(',');
                    out.push_str(&fmt_f64(v[(i, j)]));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Assembles a block matrix from a grid of blocks; every block in a block
/// row must have the same number of rows, every block in a block column the
/// same number of columns.
pub fn block_matrix(rows: &[&[&Mat]]) -> Mat {
    let heights: Vec<usize> = rows.iter().map(|r| r[0].nrows()).collect();
    let widths: Vec<usize> = rows[0].iter().map(|b| b.ncols()).collect();
    let mut out = Mat::zeros(heights.iter().sum(), widths.iter().sum());
    let mut r0 = 0;
    for (bi, row) in rows.iter().enumerate() {
        let mut c0 = 0;
        for (bj, block) in row.iter().enumerate() {
            debug_assert_eq!(block.shape(), (heights[bi], widths[bj]));
            out.view_mut((r0, c0), block.shape()).copy_from(*block);
            c0 += widths[bj];
        }
        r0 += heights[bi];
    }
    out
}

/// Copy of the `rows × cols` sub-matrix starting at `(r0, c0)`.
pub fn sub(m: &Mat, r0: usize, c0: usize, rows: usize, cols: usize) -> Mat {
    m.view((r0, c0), (rows, cols)).into_owned()
}

/// Largest entry magnitude.
pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Largest entry of `|M - Mᵀ|` (zero for non-square input is not meaningful; callers pass squares).
pub fn asymmetry(m: &Mat) -> f64 {
    max_abs(&(m - m.transpose()))
}

/// Smallest eigenvalue of the symmetric part of a square matrix.
pub fn min_sym_eigenvalue(m: &Mat) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Inverse of a square matrix, naming the matrix on failure.
pub fn invert(m: &Mat, name: &str) -> Result<Mat> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "`{name}` must be square, got {:?}",
            m.shape()
        )));
    }
    m.clone()
        .try_inverse()
        .filter(|inv| inv.iter().all(|x| x.is_finite()))
        .ok_or_else(|| Error::Singular(name.into()))
}

/// Symmetric square root factor `S` with `S Sᵀ = cov` for a positive
/// semi-definite covariance; tiny negative eigenvalues are clipped to 0.
pub fn covariance_factor(cov: &Mat, name: &str) -> Result<Mat> {
    if !cov.is_square() || asymmetry(cov) > 1e-12 * (1.0 + max_abs(cov)) {
        return Err(Error::Dimension(format!(
            "covariance `{name}` must be square and symmetric"
        )));
    }
    let eig = SymmetricEigen::new(cov.clone());
    let scale = 1.0 + max_abs(cov);
    if eig.eigenvalues.iter().any(|&l| l < -1e-10 * scale) {
        return Err(Error::InvalidArgument(format!(
            "covariance `{name}` is not positive semi-definite"
        )));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * Mat::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

fn check_state(state: &[Mat], system: &str, time: f64) -> Result<()> {
    for m in state {
        if m.iter()
            .any(|x| !x.is_finite() || x.abs() > BLOWUP_THRESHOLD)
        {
            return Err(Error::BlowUp {
                system: system.to_string(),
                time,
            });
        }
    }
    Ok(())
}

fn offset(y: &[Mat], h: f64, k: &[Mat]) -> Vec<Mat> {
    y.iter().zip(k).map(|(a, b)| a + b * h).collect()
}

fn rk4_step<F>(rhs: &mut F, t: f64, y: &[Mat], h: f64, system: &str) -> Result<Vec<Mat>>
where
    F: FnMut(f64, &[Mat]) -> Vec<Mat>,
{
    let k1 = rhs(t, y);
    if k1.len() != y.len() || k1.iter().zip(y).any(|(a, b)| a.shape() != b.shape()) {
        return Err(Error::Dimension(
            "ODE right-hand side does not match the state shape".into(),
        ));
    }
    let y2 = offset(y, 0.5 * h, &k1);
    check_state(&y2, system, t)?;
    let k2 = rhs(t + 0.5 * h, &y2);
    let y3 = offset(y, 0.5 * h, &k2);
    check_state(&y3, system, t)?;
    let k3 = rhs(t + 0.5 * h, &y3);
    let y4 = offset(y, h, &k3);
    check_state(&y4, system, t + h)?;
    let k4 = rhs(t + h, &y4);
    let next: Vec<Mat> = (0..y.len())
        .map(|i| &y[i] + (&k1[i] + &k2[i] * 2.0 + &k3[i] * 2.0 + &k4[i]) * (h / 6.0))
        .collect();
    check_state(&next, system, t + h)?;
    Ok(next)
}

fn collect_paths(grid: &TimeGrid, nodes: Vec<Vec<Mat>>) -> Result<Vec<MatrixPath>> {
    let width = nodes[0].len();
    let mut columns: Vec<Vec<Mat>> = (0..width)
        .map(|_| Vec::with_capacity(nodes.len()))
        .collect();
    for state in nodes {
        for (i, m) in state.into_iter().enumerate() {
            columns[i].push(m);
        }
    }
    columns
        .into_iter()
        .map(|c| MatrixPath::new(*grid, c))
        .collect()
}

/// Integrates `dY/dt = rhs(t, Y)` backward from `Y(T) = terminal` with
/// classical RK4, storing the state at every node. The terminal value is
/// stored exactly.
pub fn integrate_backward<F>(
    mut rhs: F,
    terminal: &[Mat],
    grid: &TimeGrid,
) -> Result<Vec<MatrixPath>>
where
    F: FnMut(f64, &[Mat]) -> Vec<Mat>,
{
    const SYSTEM: &str = "backward ODE blew up";
    if terminal.is_empty() {
        return Err(Error::Dimension("empty ODE state".into()));
    }
    check_state(terminal, SYSTEM, grid.t_end())?;
    let steps = grid.num_steps();
    let mut nodes: Vec<Vec<Mat>> = vec![Vec::new(); grid.num_nodes()];
    nodes[steps] = terminal.to_vec();
    for k in (0..steps).rev() {
        nodes[k] = rk4_step(
            &mut rhs,
            grid.time(k + 1),
            &nodes[k + 1],
            -grid.dt(),
            SYSTEM,
        )?;
    }
    collect_paths(grid, nodes)
}

/// Integrates `dY/dt = rhs(t, Y)` forward from `Y(0) = initial` with classical RK4.
pub fn integrate_forward_ode<F>(
    mut rhs: F,
    initial: &[Mat],
    grid: &TimeGrid,
) -> Result<Vec<MatrixPath>>
where
    F: FnMut(f64, &[Mat]) -> Vec<Mat>,
{
    const SYSTEM: &str = "forward ODE blew up";
    if initial.is_empty() {
        return Err(Error::Dimension("empty ODE state".into()));
    }
    check_state(initial, SYSTEM, 0.0)?;
    let mut nodes: Vec<Vec<Mat>> = Vec::with_capacity(grid.num_nodes());
    nodes.push(initial.to_vec());
    for k in 0..grid.num_steps() {
        let next = rk4_step(&mut rhs, grid.time(k), &nodes[k], grid.dt(), SYSTEM)?;
        nodes.push(next);
    }
    collect_paths(grid, nodes)
}

/// Largest residual `‖(y_{k+1} − y_{k−1})/(2dt) − rhs(y_k)‖_max` of a
/// solved tuple of paths over the interior nodes, for an autonomous `rhs`.
pub fn centered_residual<F>(paths: &[&MatrixPath], rhs: F) -> f64
where
    F: Fn(&[Mat]) -> Vec<Mat>,
{
    let grid = *paths[0].grid();
    let mut worst: f64 = 0.0;
    for k in 1..grid.num_steps() {
        let y: Vec<Mat> = paths.iter().map(|p| p.at(k).clone()).collect();
        let d = rhs(&y);
        for (p, dk) in paths.iter().zip(&d) {
            let fd = (p.at(k + 1) - p.at(k - 1)) / (2.0 * grid.dt());
            worst = worst.max(max_abs(&(fd - dk)));
        }
    }
    worst
}

/// One explicit Euler–Maruyama update `x + drift*dt + Σ shocks`, where each
/// shock is a precomputed `diffusion * ΔW` product. Shared by every
/// simulator so that equal inputs give bit-equal states.
pub fn em_step(x: &Mat, drift: &Mat, dt: f64, shocks: &[Mat]) -> Mat {
    let mut next = x + drift * dt;
    for s in shocks {
        next += s;
    }
    next
}

/// Euler–Maruyama march of `dx = drift(t,x) dt + Σ_s D_s dW_s` for a column
/// state. `noise[s]` is the `d × num_steps` increment matrix of source `s`.
pub fn euler_maruyama_path<F>(
    mut drift: F,
    diffusions: &[Mat],
    initial: &Mat,
    noise: &[&Mat],
    grid: &TimeGrid,
) -> Result<MatrixPath>
where
    F: FnMut(f64, &Mat) -> Mat,
{
    if diffusions.len() != noise.len() {
        return Err(Error::Dimension(format!(
            "{} diffusion matrices for {} noise sources",
            diffusions.len(),
            noise.len()
        )));
    }
    for (dm, w) in diffusions.iter().zip(noise) {
        if dm.nrows() != initial.nrows() || dm.ncols() != w.nrows() || w.ncols() < grid.num_steps()
        {
            return Err(Error::Dimension(
                "diffusion, state and increments do not fit".into(),
            ));
        }
    }
    let mut values = Vec::with_capacity(grid.num_nodes());
    values.push(initial.clone());
    for k in 0..grid.num_steps() {
        let x = &values[k];
        let rate = drift(grid.time(k), x);
        let shocks: Vec<Mat> = diffusions
            .iter()
            .zip(noise)
            .map(|(dm, w)| dm * w.columns(k, 1))
            .collect();
        let next = em_step(x, &rate, grid.dt(), &shocks);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                node: k + 1,
                time: grid.time(k + 1),
            });
        }
        values.push(next);
    }
    MatrixPath::new(*grid, values)
}

/// Composite trapezoid rule for node samples with spacing `dt`.
pub fn trapezoid(values: &[f64], dt: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        len => {
            let inner: f64 = values[1..len - 1].iter().sum();
            dt * (0.5 * (values[0] + values[len - 1]) + inner)
        }
    }
}

/// Trapezoid rule with the Euler–Maclaurin end correction
/// `−dt²/12 (f'(T) − f'(0))`, the end slopes taken from one-sided
/// three-point differences. Fourth-order for smooth integrands; falls back
/// to the plain rule with fewer than four samples.
pub fn trapezoid_end_corrected(values: &[f64], dt: f64) -> f64 {
    let len = values.len();
    let plain = trapezoid(values, dt);
    if len < 4 {
        return plain;
    }
    let d_start = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * dt);
    let d_end = (3.0 * values[len - 1] - 4.0 * values[len - 2] + values[len - 3]) / (2.0 * dt);
    plain - dt * dt / 12.0 * (d_end - d_start)
}

/// Trapezoid integral of a scalar-valued path over `[0, T]`.
pub fn trapezoid_integral(path: &MatrixPath) -> Result<f64> {
    if path.shape() != (1, 1) {
        return Err(Error::Dimension(format!(
            "expected a scalar path, got {:?}",
            path.shape()
        )));
    }
    let samples: Vec<f64> = path.values().iter().map(|m| m[(0, 0)]).collect();
    Ok(trapezoid(&samples, path.grid().dt()))
}

/// Brownian increments for several independent `d`-dimensional sources
/// (source 0 is the common noise `W₀`, sources `1..` the followers' `Wᵢ`).
#[derive(Clone, Debug, PartialEq)]
pub struct BrownianBundle {
    seed: u64,
    dt: f64,
    dim: usize,
    increments: Vec<Mat>,
}

impl BrownianBundle {
    /// Draws `N(0, dt I_d)` increments. Each source has its own ChaCha
    /// stream, so source `s` is unchanged when more sources are requested.
    pub fn generate(seed: u64, num_sources: usize, dim: usize, grid: &TimeGrid) -> Self {
        let steps = grid.num_steps();
        let scale = grid.dt().sqrt();
        let increments = (0..num_sources)
            .map(|s| {
                let mut rng = noise_rng(seed, s as u64 + 1);
                Mat::from_fn(dim, steps, |_, _| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    scale * z
                })
            })
            .collect();
        Self {
            seed,
            dt: grid.dt(),
            dim,
            increments,
        }
    }

    /// Builds a bundle from explicit increments (each `d × steps`).
    pub fn from_increments(seed: u64, dt: f64, increments: Vec<Mat>) -> Result<Self> {
        let dim = increments.first().map(|m| m.nrows()).unwrap_or(0);
        if increments
            .iter()
            .any(|m| m.nrows() != dim || m.ncols() != increments[0].ncols())
        {
            return Err(Error::Dimension("increment sources differ in shape".into()));
        }
        Ok(Self {
            seed,
            dt,
            dim,
            increments,
        })
    }

    /// Sums consecutive pairs of increments: the same Brownian paths seen on
    /// a grid with twice the step.
    pub fn coarsened(&self) -> Result<Self> {
        let steps = self.num_steps();
        if steps % 2 != 0 {
            return Err(Error::Grid(format!("cannot halve {steps} steps")));
        }
        let increments = self
            .increments
            .iter()
            .map(|w| {
                Mat::from_fn(self.dim, steps / 2, |i, k| {
                    w[(i, 2 * k)] + w[(i, 2 * k + 1)]
                })
            })
            .collect();
        Ok(Self {
            seed: self.seed,
            dt: 2.0 * self.dt,
            dim: self.dim,
            increments,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_sources(&self) -> usize {
        self.increments.len()
    }

    pub fn num_steps(&self) -> usize {
        self.increments.first().map(|m| m.ncols()).unwrap_or(0)
    }

    /// `d × num_steps` increments of source `s`.
    pub fn source(&self, s: usize) -> &Mat {
        &self.increments[s]
    }
}

/// Deterministic generator for stream `stream` of `seed`.
pub fn noise_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws a Gaussian vector `mean + factor * z` with `z ~ N(0, I)`.
pub fn gaussian_vector(rng: &mut ChaCha8Rng, mean: &Mat, factor: &Mat) -> Mat {
    let z = Mat::from_fn(factor.ncols(), 1, |_, _| StandardNormal.sample(rng));
    mean + factor * z
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn s(x: f64) -> Mat {
        Mat::from_element(1, 1, x)
    }

    #[test]
    fn end_corrected_trapezoid_is_exact_for_cubics() {
        let dt = 0.1;
        let v: Vec<f64> = (0..=10).map(|k| (k as f64 * dt).powi(3)).collect();
        assert_abs_diff_eq!(trapezoid_end_corrected(&v, dt), 0.25, epsilon = 1e-13);
        assert!((trapezoid(&v, dt) - 0.25).abs() > 1e-3);
    }

    #[test]
    fn grid_counts_nodes() {
        let g = TimeGrid::new(1.0, 1e-3).unwrap();
        assert_eq!(g.num_nodes(), 1001);
        assert_eq!(g.time(1000), 1.0);
        assert!(TimeGrid::new(1.0, 0.3).is_err());
        assert!(TimeGrid::new(0.0, 0.1).is_err());
        assert!(TimeGrid::new(1.0, -0.1).is_err());
    }

    #[test]
    fn zero_rhs_keeps_terminal_value() {
        let g = TimeGrid::new(1.0, 0.01).unwrap();
        let h = Mat::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let out = integrate_backward(
            |_, y| y.iter().map(|m| m * 0.0).collect(),
            std::slice::from_ref(&h),
            &g,
        )
        .unwrap();
        assert!(out[0].values().iter().all(|v| *v == h));
    }

    #[test]
    fn backward_linear_decay() {
        let g = TimeGrid::new(1.0, 1e-3).unwrap();
        // dx/dt = x with x(1) = 1 gives x(0) = e^{-1}.
        let out = integrate_backward(|_, y| vec![y[0].clone()], &[s(1.0)], &g).unwrap();
        assert_abs_diff_eq!(out[0].initial()[(0, 0)], (-1.0f64).exp(), epsilon = 1e-9);
        assert_eq!(out[0].terminal()[(0, 0)], 1.0);
        // dx/dt = -x with x(1) = 1 gives x(0) = e.
        let out = integrate_backward(|_, y| vec![-&y[0]], &[s(1.0)], &g).unwrap();
        assert_abs_diff_eq!(out[0].initial()[(0, 0)], 1f64.exp(), epsilon = 1e-9);
    }

    #[test]
    fn forward_growth_and_nilpotent_flow() {
        let g = TimeGrid::new(1.0, 1e-3).unwrap();
        let out = integrate_forward_ode(|_, y| vec![y[0].clone()], &[s(1.0)], &g).unwrap();
        assert_abs_diff_eq!(out[0].terminal()[(0, 0)], 1f64.exp(), epsilon = 1e-9);

        let a = Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let g = TimeGrid::new(2.5, 1e-2).unwrap();
        let x0 = Mat::from_column_slice(2, 1, &[0.0, 1.0]);
        let out = integrate_forward_ode(|_, y| vec![&a * &y[0]], &[x0], &g).unwrap();
        assert_abs_diff_eq!(out[0].terminal()[(0, 0)], 2.5, epsilon = 1e-10);
        assert_abs_diff_eq!(out[0].terminal()[(1, 0)], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn blow_up_is_reported_with_time() {
        let g = TimeGrid::new(2.0, 1e-3).unwrap();
        // dx/dt = x^2 forward from 1 escapes at t = 1.
        let err = integrate_forward_ode(|_, y| vec![y[0].component_mul(&y[0])], &[s(1.0)], &g)
            .unwrap_err();
        match err {
            Error::BlowUp { time, .. } => assert!((time - 1.0).abs() < 0.01, "time {time}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn trapezoid_oracles() {
        let g = TimeGrid::new(1.0, 1e-3).unwrap();
        let c: Vec<f64> = vec![2.5; g.num_nodes()];
        assert_abs_diff_eq!(trapezoid(&c, g.dt()), 2.5, epsilon = 1e-12);
        let lin: Vec<f64> = g.times().collect();
        assert_abs_diff_eq!(trapezoid(&lin, g.dt()), 0.5, epsilon = 1e-14);
        let sq: Vec<f64> = g.times().map(|t| t * t).collect();
        assert_abs_diff_eq!(trapezoid(&sq, g.dt()), 1.0 / 3.0, epsilon = 1e-6);
        let path = MatrixPath::new(g, sq.iter().map(|&v| s(v)).collect()).unwrap();
        assert_abs_diff_eq!(
            trapezoid_integral(&path).unwrap(),
            1.0 / 3.0,
            epsilon = 1e-6
        );
    }

    #[test]
    fn em_without_noise_tracks_the_ode() {
        let g = TimeGrid::new(1.0, 1e-3).unwrap();
        let w = Mat::zeros(1, g.num_steps());
        let em = euler_maruyama_path(|_, x| -x, &[s(0.0)], &s(1.0), &[&w], &g).unwrap();
        let ode = integrate_forward_ode(|_, y| vec![-&y[0]], &[s(1.0)], &g).unwrap();
        assert!(em.max_abs_diff(&ode[0]) < 5.0 * g.dt());
        let flat = euler_maruyama_path(|_, x| x * 0.0, &[s(0.0)], &s(3.0), &[&w], &g).unwrap();
        assert!(flat.values().iter().all(|v| v[(0, 0)] == 3.0));
    }

    #[test]
    fn brownian_moments_and_reproducibility() {
        let g = TimeGrid::new(1.0, 1e-3).unwrap();
        let b = BrownianBundle::generate(7, 10, 2, &g);
        assert_eq!(b, BrownianBundle::generate(7, 10, 2, &g));
        let samples: Vec<f64> = (0..10)
            .flat_map(|s| b.source(s).iter().cloned().collect::<Vec<_>>())
            .collect();
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 3.0 * (g.dt() / n).sqrt());
        // Sample variance of a Gaussian has relative sd sqrt(2/n).
        assert!((var / g.dt() - 1.0).abs() < 3.0 * (2.0 / n).sqrt());
        // Extra sources do not disturb existing ones.
        let more = BrownianBundle::generate(7, 12, 2, &g);
        assert_eq!(more.source(3), b.source(3));
    }

    #[test]
    fn coarsening_sums_pairs() {
        let g = TimeGrid::new(1.0, 0.25).unwrap();
        let b = BrownianBundle::generate(1, 1, 1, &g);
        let c = b.coarsened().unwrap();
        assert_eq!(c.num_steps(), 2);
        assert_eq!(
            c.source(0)[(0, 1)],
            b.source(0)[(0, 2)] + b.source(0)[(0, 3)]
        );
    }

    #[test]
    fn interpolation_is_exact_for_cubics() {
        let g = TimeGrid::new(1.0, 0.1).unwrap();
        let f = |t: f64| 1.0 - 2.0 * t + 0.5 * t * t * t;
        let path = MatrixPath::new(g, g.times().map(|t| s(f(t))).collect()).unwrap();
        for &t in &[0.0, 0.03, 0.55, 0.97, 1.0] {
            assert_abs_diff_eq!(path.interpolate_cubic(t)[(0, 0)], f(t), epsilon = 1e-12);
        }
        let lin = MatrixPath::new(g, g.times().map(|t| s(3.0 * t)).collect()).unwrap();
        assert_abs_diff_eq!(lin.interpolate_linear(0.55)[(0, 0)], 1.65, epsilon = 1e-12);
    }

    #[test]
    fn covariance_factor_reproduces_covariance() {
        let cov = Mat::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let f = covariance_factor(&cov, "c").unwrap();
        assert!(max_abs(&(&f * f.transpose() - &cov)) < 1e-12);
        assert!(covariance_factor(&Mat::from_row_slice(1, 1, &[-1.0]), "c").is_err());
    }

    #[test]
    fn csv_header_and_rows() {
        let g = TimeGrid::new(1.0, 0.5).unwrap();
        let p = MatrixPath::constant(g, Mat::from_row_slice(1, 2, &[1.0, 0.1])).unwrap();
        assert_eq!(
            p.to_csv(),
            "t,entry_1_1,entry_1_2\n0,1,0.1\n0.5,1,0.1\n1,1,0.1\n"
        );
    }
}
