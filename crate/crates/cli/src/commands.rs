//! Subcommand implementations.

use std::fs;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use mfsg_core::costs::{
    cost_samples, delta_between, linspace, monte_carlo, report_from_samples, samples_to_csv,
    with_gamma0, Solution, SweepPoint, SweepResult,
};
use mfsg_core::feedback::{feedback_terminal, FeedbackSolution};
use mfsg_core::format::fmt_f64;
use mfsg_core::matgrid::max_abs;
use mfsg_core::openloop::{solve_pi, MtMethod, OpenLoopSolution};
use mfsg_core::simulate::{meanfield_gap, Mode, TrajectoryBundle};
use mfsg_core::stats::{fit_slope, Estimate};
use mfsg_core::{parse_config, validate_assumptions, MatrixPath, RunConfig, TimeGrid};
use serde_json::json;

use crate::args::{CommonArgs, ConvergenceArgs, SimulateArgs, SolveArgs, SweepArgs};
use crate::cache::SolveCache;
use crate::manifest::{assumption_entries, Check, Manifest, OutputDir};

/// Tolerance for symmetry and transpose identities of solved paths.
pub const IDENTITY_TOL: f64 = 1e-8;
/// Tolerance for the feedback `K` against the standalone `Π` solve.
pub const K_PI_TOL: f64 = 1e-12;
/// Tolerance for the trajectory construction identities.
pub const AVERAGE_TOL: f64 = 1e-12;
pub const ADJOINT_TOL: f64 = 1e-10;

/// Result of one subcommand: the manifest path and the failed checks.
#[derive(Debug)]
pub struct Outcome {
    pub manifest: std::path::PathBuf,
    pub failures: Vec<String>,
    /// Lines printed to standard output.
    pub report: String,
}

/// Loads the scenario (or the built-in one) and applies the seed override.
pub fn load_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))?;
            parse_config(&text).with_context(|| format!("in config {}", path.display()))?
        }
        None => RunConfig::scalar_scenario(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

struct Context_ {
    cfg: RunConfig,
    grid: TimeGrid,
    manifest: Manifest,
    out: OutputDir,
    cache: SolveCache,
    started: Instant,
    report: String,
}

impl Context_ {
    fn new(name: &str, common: &CommonArgs) -> Result<Self> {
        let started = Instant::now();
        let cfg = load_config(common)?;
        let grid = cfg.grid()?;
        let assumptions = validate_assumptions(&cfg.params)?;
        let mut manifest = Manifest::new(name, &cfg, &grid);
        manifest.assumptions = assumption_entries(&assumptions);
        let out = OutputDir::create(&common.out)?;
        Ok(Self {
            cfg,
            grid,
            manifest,
            out,
            cache: SolveCache::new(),
            started,
            report: String::new(),
        })
    }

    fn line(&mut self, text: impl AsRef<str>) {
        self.report.push_str(text.as_ref());
        self.report.push('\n');
    }

    fn check(&mut self, c: Check) {
        self.line(c.line());
        self.manifest.check(c);
    }

    fn time(&mut self, phase: &str, since: Instant) {
        self.manifest
            .timings
            .insert(phase.into(), since.elapsed().as_secs_f64());
    }

    fn solve(&mut self, mode: Mode) -> Result<std::sync::Arc<Solution>> {
        let t = Instant::now();
        let sol = self.cache.get(&self.cfg.params, &self.grid, mode)?;
        self.time("solve", t);
        self.solvability(true, format!("{mode} Riccati equations solved on [0, T]"));
        Ok(sol)
    }

    /// Records the numerical verdict on Riccati solvability.
    fn solvability(&mut self, holds: bool, detail: String) {
        if let Some(a) = self
            .manifest
            .assumptions
            .iter_mut()
            .find(|a| a.name == "A3")
        {
            a.holds = Some(holds);
            a.detail = detail;
        }
    }

    fn finish(mut self) -> Result<Outcome> {
        self.manifest.cache.solves = self.cache.solves();
        self.manifest.cache.hits = self.cache.hits();
        self.time("total", self.started);
        let mut report = String::new();
        for a in &self.manifest.assumptions {
            let verdict = match a.holds {
                Some(true) => "holds",
                Some(false) => "FAILS",
                None => "undecided",
            };
            report.push_str(&format!("assumption {} {verdict}: {}\n", a.name, a.detail));
        }
        report.push_str(&self.report);
        let failures = self.manifest.failures.clone();
        let manifest = self.out.finish(self.manifest)?;
        Ok(Outcome {
            manifest,
            failures,
            report,
        })
    }
}

fn population(requested: Option<usize>, configured: usize) -> Result<usize> {
    let n = requested.unwrap_or(configured);
    if n == 0 {
        bail!("the number of followers N must be at least 1");
    }
    Ok(n)
}

fn runs(requested: Option<usize>, configured: usize) -> Result<usize> {
    let mc = requested.unwrap_or(configured);
    if mc == 0 {
        bail!("the number of Monte-Carlo runs must be at least 1");
    }
    Ok(mc)
}

fn terminal_gap(path: &MatrixPath, expected: &mfsg_core::Mat) -> f64 {
    max_abs(&(path.terminal() - expected))
}

fn open_loop_checks(sol: &OpenLoopSolution) -> Vec<Check> {
    let mf = &sol.meanfield;
    let c = &sol.coefficients;
    let mut checks = vec![
        Check::at_most("Pi symmetric", sol.pi.max_asymmetry(), IDENTITY_TOL),
        Check::at_most("Pibar symmetric", mf.pibar.max_asymmetry(), IDENTITY_TOL),
        Check::at_most("M0 symmetric", mf.m0.max_asymmetry(), IDENTITY_TOL),
        Check::at_most("P symmetric", sol.p.max_asymmetry(), IDENTITY_TOL),
        Check::at_most(
            "Pi0 equals M transposed",
            mf.pi0.max_abs_diff(&mf.m.transpose()),
            IDENTITY_TOL,
        ),
        Check::at_most("Pi terminal", terminal_gap(&sol.pi, &c.params.h), 0.0),
        Check::at_most("P terminal", terminal_gap(&sol.p, &c.h0_aug()), 0.0),
    ];
    let names = ["Pibar", "M", "M0", "Pi0"];
    for ((name, path), end) in names
        .iter()
        .zip([&mf.pibar, &mf.m, &mf.m0, &mf.pi0])
        .zip(c.meanfield_terminal())
    {
        checks.push(Check::at_most(
            &format!("{name} terminal"),
            terminal_gap(path, &end),
            0.0,
        ));
    }
    checks
}

const FEEDBACK_NAMES: [&str; 8] = [
    "K",
    "Kbar",
    "K0",
    "Lambda0",
    "Lambdabar",
    "Psi1",
    "Psi2",
    "Psi3",
];

fn feedback_paths(sol: &FeedbackSolution) -> [&MatrixPath; 8] {
    [
        &sol.k,
        &sol.kbar,
        &sol.k0,
        &sol.lambda0,
        &sol.lambdabar,
        &sol.psi1,
        &sol.psi2,
        &sol.psi3,
    ]
}

fn feedback_checks(sol: &FeedbackSolution) -> Result<Vec<Check>> {
    let c = &sol.coefficients;
    let pi = solve_pi(&c.params, &sol.grid)?;
    let mut checks = vec![Check::at_most(
        "Lambdabar equals K0 transposed",
        sol.lambdabar.max_abs_diff(&sol.k0.transpose()),
        IDENTITY_TOL,
    )];
    for (name, path) in [
        ("Lambda0", &sol.lambda0),
        ("Psi1", &sol.psi1),
        ("Psi2", &sol.psi2),
    ] {
        checks.push(Check::at_most(
            &format!("{name} symmetric"),
            path.max_asymmetry(),
            IDENTITY_TOL,
        ));
    }
    checks.push(Check::at_most(
        "K equals Pi",
        sol.k.max_abs_diff(&pi),
        K_PI_TOL,
    ));
    for ((name, path), end) in FEEDBACK_NAMES
        .iter()
        .zip(feedback_paths(sol))
        .zip(feedback_terminal(c))
    {
        checks.push(Check::at_most(
            &format!("{name} terminal"),
            terminal_gap(path, &end),
            0.0,
        ));
    }
    Ok(checks)
}

pub fn solve(args: &SolveArgs) -> Result<Outcome> {
    let mut cx = Context_::new("solve", &args.common)?;
    cx.manifest.mode = Some(args.mode.to_string());
    let sol = cx.solve(args.mode)?;
    let t = Instant::now();
    let checks = match sol.as_ref() {
        Solution::OpenLoop(s) => {
            let mf = &s.meanfield;
            for (name, path) in [
                ("pi", &s.pi),
                ("pibar", &mf.pibar),
                ("m", &mf.m),
                ("m0", &mf.m0),
                ("pi0", &mf.pi0),
                ("p_aug", &s.p),
            ] {
                cx.out.write(&format!("{name}.csv"), &path.to_csv())?;
            }
            open_loop_checks(s)
        }
        Solution::Feedback(s) => {
            for (name, path) in FEEDBACK_NAMES.iter().zip(feedback_paths(s)) {
                cx.out
                    .write(&format!("{}.csv", name.to_lowercase()), &path.to_csv())?;
            }
            cx.out.write("p0.csv", &s.gains.p0.to_csv())?;
            cx.out.write("pbar.csv", &s.gains.pbar.to_csv())?;
            feedback_checks(s)?
        }
    };
    cx.time("export", t);
    for c in checks {
        cx.check(c);
    }
    cx.finish()
}

/// Construction identities of one trajectory bundle.
pub fn trajectory_checks(sol: &Solution, b: &TrajectoryBundle) -> Vec<Check> {
    let n = b.n_followers() as f64;
    let mean = b.xi.iter().fold(b.x_avg.map(|_| 0.0), |acc, x| acc + x) / n;
    let mut checks = vec![Check::at_most(
        "state average equals follower mean",
        (mean - &b.x_avg).amax(),
        AVERAGE_TOL,
    )];
    if let (Solution::OpenLoop(s), Some(aux)) = (sol, &b.aux) {
        let worst = (0..b.grid.num_nodes())
            .map(|k| (s.p.at(k) * aux.x_aug.column(k) - aux.y_aug.column(k)).amax())
            .fold(0.0, f64::max);
        checks.push(Check::at_most(
            "adjoint equals P times X",
            worst,
            ADJOINT_TOL,
        ));
    }
    checks
}

fn estimate_json(e: &Estimate) -> serde_json::Value {
    json!({ "mean": e.mean, "stderr": e.stderr })
}

pub fn simulate(args: &SimulateArgs) -> Result<Outcome> {
    let mut cx = Context_::new("simulate", &args.common)?;
    let n = population(args.n, cx.cfg.params.n_followers)?;
    let mc = runs(args.mc, cx.cfg.num_mc)?;
    let seed = cx.cfg.seed;
    cx.manifest.mode = Some(args.mode.to_string());
    let sol = cx.solve(args.mode)?;

    let t = Instant::now();
    let bundle = sol.simulate(n, seed)?;
    let samples = cost_samples(&sol, n, mc, seed)?;
    cx.time("simulate", t);
    let t = Instant::now();
    let report = report_from_samples(&sol, n, seed, &samples, MtMethod::Moments)?;
    cx.time("limits", t);

    cx.out.write("trajectory.csv", &bundle.to_csv())?;
    cx.out.write("costs.csv", &samples_to_csv(&samples))?;
    let text = report.to_text();
    cx.out.write("report.txt", &text)?;
    cx.report.push_str(&text);
    for c in trajectory_checks(&sol, &bundle) {
        cx.check(c);
    }
    let s = &mut cx.manifest.summary;
    s.insert("N".into(), json!(n));
    s.insert("num_mc".into(), json!(mc));
    s.insert(
        "leader_realized".into(),
        estimate_json(&report.leader_realized),
    );
    s.insert("leader_limit".into(), json!(report.leader_limit));
    s.insert("leader_rel_gap".into(), json!(report.leader_rel_gap()));
    s.insert(
        "social_per_n_realized".into(),
        estimate_json(&report.social_per_n_realized),
    );
    s.insert(
        "social_per_n_limit".into(),
        json!(report.social_per_n_limit),
    );
    s.insert("social_rel_gap".into(), json!(report.social_rel_gap()));
    s.insert("correction".into(), estimate_json(&report.correction));
    cx.finish()
}

/// Sign verdicts at 2σ for one sweep point: whether the leader prefers
/// open-loop play (`Δ₀ < 0`) and the followers prefer feedback play (`Δ₁ > 0`).
pub fn sign_pattern(d0: &Estimate, d1: &Estimate) -> (bool, bool) {
    (d0.mean + 2.0 * d0.se() < 0.0, d1.mean - 2.0 * d1.se() > 0.0)
}

pub fn sweep(args: &SweepArgs) -> Result<Outcome> {
    let mut cx = Context_::new("sweep", &args.common)?;
    let n = population(args.n, cx.cfg.params.n_followers)?;
    let mc = runs(args.mc, cx.cfg.num_mc)?;
    let seed = cx.cfg.seed;
    let (lo, hi) = args.gamma0_range;
    let gammas = linspace(lo, hi, args.points)?;

    let t = Instant::now();
    let mut points = Vec::with_capacity(gammas.len());
    for &g in &gammas {
        let p = with_gamma0(&cx.cfg.params, g);
        let outcome = cx
            .cache
            .get(&p, &cx.grid, Mode::OpenLoop)
            .and_then(|ol| {
                let fb = cx.cache.get(&p, &cx.grid, Mode::Feedback)?;
                delta_between(&ol, &fb, n, mc, seed)
            })
            .map_err(|e| format!("Gamma0 = {}: {e}", fmt_f64(g)));
        points.push(SweepPoint { gamma0: g, outcome });
    }
    cx.time("sweep", t);
    let result = SweepResult {
        n_followers: n,
        num_mc: mc,
        seed,
        points,
    };
    cx.out.write("sweep.csv", &result.to_csv())?;

    let mut summary = String::from(
        "gamma0,delta0_mean,delta1_mean,leader_prefers_openloop,followers_prefer_feedback\n",
    );
    let mut matches = 0;
    let mut failed = Vec::new();
    for p in &result.points {
        match &p.outcome {
            Ok((d0, d1)) => {
                let (lead, follow) = sign_pattern(d0, d1);
                matches += usize::from(lead && follow);
                summary.push_str(&format!(
                    "{},{},{},{lead},{follow}\n",
                    fmt_f64(p.gamma0),
                    fmt_f64(d0.mean),
                    fmt_f64(d1.mean)
                ));
            }
            Err(msg) => {
                summary.push_str(&format!("{},NaN,NaN,failed,failed\n", fmt_f64(p.gamma0)));
                failed.push(msg.clone());
            }
        }
    }
    cx.out.write("sweep_summary.csv", &summary)?;
    cx.report.push_str(&summary);
    cx.line(format!(
        "sign pattern (leader prefers open-loop and followers prefer feedback, 2 sigma) at {matches} of {} points",
        result.points.len()
    ));
    for msg in &failed {
        cx.line(format!("FAIL {msg}"));
    }
    let detail = if failed.is_empty() {
        "Riccati equations solved at every sweep point".to_string()
    } else {
        format!("{} sweep points failed; see the failure list", failed.len())
    };
    cx.solvability(failed.is_empty(), detail);
    cx.manifest.failures.extend(failed);
    let s = &mut cx.manifest.summary;
    s.insert("N".into(), json!(n));
    s.insert("num_mc".into(), json!(mc));
    s.insert("sign_pattern_points".into(), json!(matches));
    s.insert("points".into(), json!(result.points.len()));
    cx.finish()
}

/// Mean squared gaps at or below this level are rounding noise: the state
/// average and the mean-field state are marched by different arithmetic, so
/// noiseless runs agree only to the last bits.
pub const GAP_FLOOR: f64 = 1e-20;

/// Fitted log-log slope of `(N, mean sup-gap²)` rows, or `None` when fewer
/// than two sizes are given or a mean gap is at the rounding floor.
pub fn gap_slope(rows: &[(usize, Estimate)]) -> Option<f64> {
    if rows.len() < 2
        || rows
            .iter()
            .any(|(_, e)| e.mean.is_nan() || e.mean <= GAP_FLOOR)
    {
        return None;
    }
    let x: Vec<f64> = rows.iter().map(|(n, _)| (*n as f64).ln()).collect();
    let y: Vec<f64> = rows.iter().map(|(_, e)| e.mean.ln()).collect();
    fit_slope(&x, &y)
}

pub fn convergence(args: &ConvergenceArgs) -> Result<Outcome> {
    let mut cx = Context_::new("convergence", &args.common)?;
    if args.n.is_empty() {
        bail!("at least one population size is required");
    }
    for &n in &args.n {
        population(Some(n), 0)?;
    }
    let mc = runs(args.mc, cx.cfg.num_mc)?;
    let seed = cx.cfg.seed;
    cx.manifest.mode = Some(args.mode.to_string());
    let sol = cx.solve(args.mode)?;

    let t = Instant::now();
    let mut rows = Vec::new();
    for &n in &args.n {
        let est = monte_carlo(
            |s| Ok(vec![meanfield_gap(&sol.simulate(n, s)?).sup_gap2]),
            mc,
            seed,
        )?[0];
        rows.push((n, est));
    }
    cx.time("simulate", t);

    let mut csv = String::from("N,mean_sup_gap2,stderr\n");
    for (n, e) in &rows {
        csv.push_str(&format!("{n},{},{}\n", fmt_f64(e.mean), fmt_f64(e.se())));
    }
    cx.out.write("convergence.csv", &csv)?;
    cx.report.push_str(&csv);
    let slope = gap_slope(&rows);
    match slope {
        Some(v) => cx.line(format!("log-log slope: {}", fmt_f64(v))),
        None => {
            cx.line("log-log slope: undefined (needs two sizes with gaps above rounding level)")
        }
    }
    cx.manifest.summary.insert("slope".into(), json!(slope));
    cx.manifest.summary.insert("num_mc".into(), json!(mc));
    cx.finish()
}
