//! Plain-text scenario files.
//!
//! One `key = value` pair per line; `#` starts a comment. Matrices are
//! row-major nested lists (`[[1, 0], [0, 1]]`), a bare number is a `1×1`
//! matrix, and the two mean vectors also accept a flat list (`[10, 0]`).
//! Keys are the model symbols (`A0`, `B0`, …, `Gamma0bar`, `xi0_mean`,
//! `xi_cov`) plus the run settings `T`, `dt`, `N`, `num_mc` and `seed`.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::format::fmt_f64;
use crate::matgrid::{Mat, TimeGrid, DEFAULT_DT};
use crate::model::ModelParams;

/// A model plus the settings of a numerical run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub params: ModelParams,
    /// Grid step.
    pub dt: f64,
    /// Monte-Carlo replications.
    pub num_mc: usize,
    /// Master seed.
    pub seed: u64,
}

impl RunConfig {
    /// The built-in scalar scenario with `dt = 0.001`, `num_mc = 200`, `seed = 42`.
    pub fn scalar_scenario() -> Self {
        Self {
            params: ModelParams::scalar_scenario(),
            dt: DEFAULT_DT,
            num_mc: 200,
            seed: 42,
        }
    }

    /// Grid on `[0, T]` with step `dt`.
    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.params.t_end, self.dt)
    }
}

const REQUIRED: [&str; 13] = [
    "A0", "B0", "D0", "Q0", "R0", "A", "B", "D", "Q", "R", "xi0_mean", "xi_mean", "T",
];
const SETTINGS: [&str; 5] = ["T", "dt", "N", "num_mc", "seed"];

#[derive(Clone, Debug, PartialEq)]
enum Literal {
    /// A number with its source token, kept so integers parse exactly.
    Number(f64, String),
    List(Vec<Literal>),
}

struct LiteralParser<'a> {
    chars: std::iter::Peekable<std::str::CharIndices<'a>>,
    text: &'a str,
}

impl<'a> LiteralParser<'a> {
    fn skip_ws(&mut self) {
        while matches!(self.chars.peek(), Some((_, c)) if c.is_whitespace()) {
            self.chars.next();
        }
    }

    fn parse(text: &'a str) -> std::result::Result<Literal, String> {
        let mut p = LiteralParser {
            chars: text.char_indices().peekable(),
            text,
        };
        let lit = p.value()?;
        p.skip_ws();
        match p.chars.peek() {
            None => Ok(lit),
            Some((i, _)) => Err(format!("unexpected trailing text `{}`", &text[*i..])),
        }
    }

    fn value(&mut self) -> std::result::Result<Literal, String> {
        self.skip_ws();
        match self.chars.peek() {
            None => Err("missing value".into()),
            Some((_, '[')) => {
                self.chars.next();
                let mut items = Vec::new();
                self.skip_ws();
                if matches!(self.chars.peek(), Some((_, ']'))) {
                    return Err("empty list".into());
                }
                loop {
                    items.push(self.value()?);
                    self.skip_ws();
                    match self.chars.next() {
                        Some((_, ',')) => continue,
                        Some((_, ']')) => return Ok(Literal::List(items)),
                        Some((_, c)) => return Err(format!("expected `,` or `]`, found `{c}`")),
                        None => return Err("unclosed `[`".into()),
                    }
                }
            }
            Some(&(start, _)) => {
                let mut end = self.text.len();
                while let Some(&(i, c)) = self.chars.peek() {
                    if c == ',' || c == ']' || c == '[' || c.is_whitespace() {
                        end = i;
                        break;
                    }
                    self.chars.next();
                }
                let token = &self.text[start..end];
                let x: f64 = token
                    .parse()
                    .map_err(|_| format!("`{token}` is not a number"))?;
                if !x.is_finite() {
                    return Err(format!("`{token}` is not finite"));
                }
                Ok(Literal::Number(x, token.to_string()))
            }
        }
    }
}

fn literal_to_matrix(lit: &Literal, vector_key: bool) -> std::result::Result<Mat, String> {
    match lit {
        Literal::Number(x, _) => Ok(Mat::from_element(1, 1, *x)),
        Literal::List(items) => {
            if items.iter().all(|i| matches!(i, Literal::Number(..))) {
                if !vector_key {
                    return Err(
                        "matrices are written as a list of rows, e.g. [[1, 0], [0, 1]]".into(),
                    );
                }
                let v: Vec<f64> = items
                    .iter()
                    .map(|i| {
                        if let Literal::Number(x, _) = i {
                            *x
                        } else {
                            0.0
                        }
                    })
                    .collect();
                return Ok(Mat::from_column_slice(v.len(), 1, &v));
            }
            let mut rows: Vec<Vec<f64>> = Vec::new();
            for item in items {
                match item {
                    Literal::List(row) => {
                        let mut vals = Vec::new();
                        for x in row {
                            match x {
                                Literal::Number(v, _) => vals.push(*v),
                                Literal::List(_) => {
                                    return Err("lists nest at most two levels deep".into())
                                }
                            }
                        }
                        rows.push(vals);
                    }
                    Literal::Number(..) => return Err("mixed numbers and rows in one list".into()),
                }
            }
            let cols = rows[0].len();
            if rows.iter().any(|r| r.len() != cols) {
                return Err("rows have different lengths".into());
            }
            Ok(Mat::from_fn(rows.len(), cols, |i, j| rows[i][j]))
        }
    }
}

fn config_err(line: usize, key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        key: key.to_string(),
        message: message.into(),
    }
}

fn integer_setting(lit: &Literal, line: usize, key: &str) -> Result<u64> {
    match lit {
        Literal::Number(_, token) => token
            .parse::<u64>()
            .map_err(|_| config_err(line, key, "expected a non-negative integer")),
        _ => Err(config_err(line, key, "expected a non-negative integer")),
    }
}

/// Parses a scenario file.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let known: Vec<&str> = ModelParams::zeros(1, 1, 1)
        .named_matrices()
        .iter()
        .map(|(k, _)| *k)
        .chain(SETTINGS)
        .collect();
    let mut entries: HashMap<String, (usize, Literal)> = HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(config_err(line, content, "expected `key = value`"));
        };
        let key = key.trim();
        if !known.contains(&key) {
            return Err(config_err(line, key, "unknown key"));
        }
        if entries.contains_key(key) {
            return Err(config_err(line, key, "duplicate key"));
        }
        let lit = LiteralParser::parse(value.trim()).map_err(|m| config_err(line, key, m))?;
        entries.insert(key.to_string(), (line, lit));
    }

    for key in REQUIRED {
        if !entries.contains_key(key) {
            return Err(config_err(0, key, "required key is missing"));
        }
    }

    let mut matrices: HashMap<&str, (usize, Mat)> = HashMap::new();
    for (key, (line, lit)) in &entries {
        if SETTINGS.contains(&key.as_str()) {
            continue;
        }
        let vector_key = key == "xi0_mean" || key == "xi_mean";
        let m = literal_to_matrix(lit, vector_key).map_err(|msg| config_err(*line, key, msg))?;
        let name = known
            .iter()
            .find(|k| **k == key.as_str())
            .expect("key was checked");
        matrices.insert(name, (*line, m));
    }

    let n = matrices["A0"].1.nrows();
    let m = matrices["B0"].1.ncols();
    let d = matrices["D0"].1.ncols();
    let mut params = ModelParams::zeros(n, m, d);
    params.r0 = Mat::zeros(m, m);
    params.r = Mat::zeros(m, m);

    let scalar = |key: &str| -> Result<Option<f64>> {
        match entries.get(key) {
            None => Ok(None),
            Some((_, Literal::Number(x, _))) => Ok(Some(*x)),
            Some((line, _)) => Err(config_err(*line, key, "expected a number")),
        }
    };
    params.t_end = scalar("T")?.expect("T is required");
    if params.t_end.is_nan() || params.t_end <= 0.0 {
        return Err(config_err(entries["T"].0, "T", "horizon must be positive"));
    }
    let dt = scalar("dt")?.unwrap_or(DEFAULT_DT);
    if let Some((line, _)) = entries.get("dt") {
        if dt.is_nan() || dt <= 0.0 {
            return Err(config_err(*line, "dt", "step must be positive"));
        }
    }
    let setting = |key: &str, default: u64| -> Result<u64> {
        match entries.get(key) {
            None => Ok(default),
            Some((line, lit)) => integer_setting(lit, *line, key),
        }
    };
    params.n_followers = setting("N", 20)? as usize;
    let num_mc = setting("num_mc", 200)? as usize;
    let seed = setting("seed", 42)?;

    for (name, (line, mat)) in &matrices {
        let want = ModelParams::expected_shape(name, n, m, d).expect("matrix key");
        if mat.shape() != want {
            return Err(config_err(
                *line,
                name,
                format!(
                    "is {}x{}, expected {}x{} (n={n}, m={m}, d={d})",
                    mat.nrows(),
                    mat.ncols(),
                    want.0,
                    want.1
                ),
            ));
        }
        let slot = match *name {
            "A0" => &mut params.a0,
            "B0" => &mut params.b0,
            "G0" => &mut params.g0,
            "D0" => &mut params.d0,
            "Q0" => &mut params.q0,
            "R0" => &mut params.r0,
            "H0" => &mut params.h0,
            "Gamma0" => &mut params.gamma0,
            "Gamma0bar" => &mut params.gamma0_bar,
            "A" => &mut params.a,
            "B" => &mut params.b,
            "G" => &mut params.g,
            "F" => &mut params.f,
            "B1" => &mut params.b1,
            "D" => &mut params.d,
            "Q" => &mut params.q,
            "R" => &mut params.r,
            "H" => &mut params.h,
            "Gamma" => &mut params.gamma,
            "Gamma1" => &mut params.gamma1,
            "Gammabar" => &mut params.gamma_bar,
            "Gamma1bar" => &mut params.gamma1_bar,
            "L" => &mut params.l,
            "R1" => &mut params.r1,
            "xi0_mean" => &mut params.xi0_mean,
            "xi0_cov" => &mut params.xi0_cov,
            "xi_mean" => &mut params.xi_mean,
            "xi_cov" => &mut params.xi_cov,
            other => unreachable!("unhandled key {other}"),
        };
        *slot = mat.clone();
    }
    params.validate()?;
    Ok(RunConfig {
        params,
        dt,
        num_mc,
        seed,
    })
}

fn matrix_literal(m: &Mat) -> String {
    let rows: Vec<String> = (0..m.nrows())
        .map(|i| {
            let cells: Vec<String> = (0..m.ncols()).map(|j| fmt_f64(m[(i, j)])).collect();
            format!("[{}]", cells.join(", "))
        })
        .collect();
    format!("[{}]", rows.join(", "))
}

/// Writes a scenario file that [`parse_config`] reads back bit-exactly.
pub fn to_config_string(cfg: &RunConfig) -> String {
    let p = &cfg.params;
    let mut out = String::new();
    out.push_str(&format!("T = {}\n", fmt_f64(p.t_end)));
    out.push_str(&format!("dt = {}\n", fmt_f64(cfg.dt)));
    out.push_str(&format!("N = {}\n", p.n_followers));
    out.push_str(&format!("num_mc = {}\n", cfg.num_mc));
    out.push_str(&format!("seed = {}\n", cfg.seed));
    for (name, m) in p.named_matrices() {
        out.push_str(&format!("{name} = {}\n", matrix_literal(m)));
    }
    out
}
