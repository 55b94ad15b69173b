//! Small statistics helpers with deterministic, order-fixed summation.

/// Sample mean with an optional standard error (`sd / √n`, needs `n ≥ 2`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: Option<f64>,
}

impl Estimate {
    /// An exact value with zero uncertainty.
    pub fn exact(value: f64) -> Self {
        Self {
            mean: value,
            stderr: Some(0.0),
        }
    }

    /// Standard error, treating a missing one as zero.
    pub fn se(&self) -> f64 {
        self.stderr.unwrap_or(0.0)
    }
}

/// Neumaier-compensated sum, evaluated in slice order.
pub fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Mean and standard error of a sample.
pub fn estimate(samples: &[f64]) -> Estimate {
    let n = samples.len();
    if n == 0 {
        return Estimate {
            mean: f64::NAN,
            stderr: None,
        };
    }
    let mean = compensated_sum(samples) / n as f64;
    let stderr = (n >= 2).then(|| {
        let dev: Vec<f64> = samples.iter().map(|x| (x - mean) * (x - mean)).collect();
        (compensated_sum(&dev) / (n as f64 - 1.0)).sqrt() / (n as f64).sqrt()
    });
    Estimate { mean, stderr }
}

/// Least-squares slope of `y` against `x`; `None` for fewer than two
/// points or degenerate abscissae.
pub fn fit_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 || x.len() != y.len() || y.iter().chain(x).any(|v| !v.is_finite()) {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
