//! In-process solve cache keyed by a content hash of the model and grid.

use std::collections::HashMap;
use std::sync::Arc;

use mfsg_core::costs::Solution;
use mfsg_core::format::fmt_f64;
use mfsg_core::simulate::Mode;
use mfsg_core::{ModelParams, Result, TimeGrid};
use sha2::{Digest, Sha256};

/// SHA-256 over every model matrix, the grid and the strategy class. Run
/// settings (`N`, `num_mc`, `seed`) do not enter the key.
pub fn cache_key(params: &ModelParams, grid: &TimeGrid, mode: Mode) -> String {
    let mut h = Sha256::new();
    for (name, m) in params.named_matrices() {
        h.update(format!("{name}:{}x{}:", m.nrows(), m.ncols()));
        for v in m.iter() {
            h.update(fmt_f64(*v));
            h.update(",");
        }
        h.update(";");
    }
    h.update(format!(
        "T={};dt={};mode={mode}",
        fmt_f64(grid.t_end()),
        fmt_f64(grid.dt())
    ));
    hex::encode(h.finalize())
}

#[derive(Default)]
pub struct SolveCache {
    entries: HashMap<String, Arc<Solution>>,
    solves: usize,
    hits: usize,
}

impl SolveCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the cached solution for this model, grid and mode, solving
    /// on a miss. Failed solves are not cached.
    pub fn get(
        &mut self,
        params: &ModelParams,
        grid: &TimeGrid,
        mode: Mode,
    ) -> Result<Arc<Solution>> {
        let key = cache_key(params, grid, mode);
        if let Some(sol) = self.entries.get(&key) {
            self.hits += 1;
            return Ok(Arc::clone(sol));
        }
        let sol = Arc::new(Solution::solve(params, grid, mode)?);
        self.solves += 1;
        self.entries.insert(key, Arc::clone(&sol));
        Ok(sol)
    }

    pub fn solves(&self) -> usize {
        self.solves
    }

    pub fn hits(&self) -> usize {
        self.hits
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_ignores_run_settings_only() {
        let p = ModelParams::scalar_scenario();
        let g = TimeGrid::new(1.0, 0.01).unwrap();
        let k = cache_key(&p, &g, Mode::OpenLoop);
        let mut q = p.clone();
        q.n_followers = 99;
        assert_eq!(cache_key(&q, &g, Mode::OpenLoop), k);
        q.gamma0[(0, 0)] = 1.5;
        assert_ne!(cache_key(&q, &g, Mode::OpenLoop), k);
        assert_ne!(cache_key(&p, &g, Mode::Feedback), k);
        let g2 = TimeGrid::new(1.0, 0.005).unwrap();
        assert_ne!(cache_key(&p, &g2, Mode::OpenLoop), k);
    }

    #[test]
    fn repeated_solves_hit() {
        let p = ModelParams::scalar_scenario();
        let g = TimeGrid::new(1.0, 0.01).unwrap();
        let mut c = SolveCache::new();
        let a = c.get(&p, &g, Mode::Feedback).unwrap();
        let b = c.get(&p, &g, Mode::Feedback).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!((c.solves(), c.hits()), (1, 1));
    }
}
