use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::curve::Curves;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub n_boot: usize,
    pub conf_level: f64,
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions {
            n_boot: 199,
            conf_level: 0.95,
            seed: 1,
        }
    }
}

/// Subject indices of replicate `r`, drawn with replacement from its own
/// substream so results do not depend on scheduling.
pub fn resample_indices(n: usize, seed: u64, replicate: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Percentile interval from sorted replicate values: order statistics
/// `floor((B+1)a/2)` and `ceil((B+1)(1-a/2))` (1-based), clamped to the sample.
pub fn percentile_interval(sorted: &[f64], conf_level: f64) -> (f64, f64) {
    let b = sorted.len();
    let alpha = 1.0 - conf_level;
    let lo = (((b + 1) as f64 * alpha / 2.0).floor() as isize - 1).max(0) as usize;
    let hi = (((b + 1) as f64 * (1.0 - alpha / 2.0)).ceil() as usize)
        .saturating_sub(1)
        .min(b - 1);
    (sorted[lo], sorted[hi.max(lo)])
}

/// Fills pointwise percentile intervals on `point` by re-running `estimate`
/// on subject resamples. Replicates that fail, or leave a value missing that
/// the point estimate has, are dropped; more than 20% dropped is an error.
pub fn bootstrap_ci<C, F>(
    mut point: C,
    n_subjects: usize,
    opts: &BootstrapOptions,
    estimate: F,
) -> Result<C>
where
    C: Curves + Send,
    F: Fn(&[usize]) -> Result<C> + Sync,
{
    if opts.n_boot < 2 {
        return Err(Error::InvalidParameter("n_boot must be at least 2".into()));
    }
    if !(opts.conf_level > 0.0 && opts.conf_level < 1.0) {
        return Err(Error::InvalidParameter(
            "conf_level must be in (0, 1)".into(),
        ));
    }
    let shape: Vec<Vec<bool>> = point
        .grids()
        .iter()
        .map(|g| g.iter().map(|p| p.est.is_finite()).collect())
        .collect();
    let replicates: Vec<Option<Vec<Vec<f64>>>> = (0..opts.n_boot)
        .into_par_iter()
        .map(|r| {
            let idx = resample_indices(n_subjects, opts.seed, r);
            let rep = estimate(&idx).ok()?;
            let grids = rep.grids();
            if grids.len() != shape.len() {
                return None;
            }
            let mut vals = Vec::with_capacity(shape.len());
            for (g, want) in grids.iter().zip(&shape) {
                if g.len() != want.len() {
                    return None;
                }
                let v: Vec<f64> = g.iter().map(|p| p.est).collect();
                if v.iter().zip(want).any(|(x, &w)| w && !x.is_finite()) {
                    return None;
                }
                vals.push(v);
            }
            Some(vals)
        })
        .collect();
    let ok: Vec<&Vec<Vec<f64>>> = replicates.iter().flatten().collect();
    let failed = opts.n_boot - ok.len();
    if failed * 5 > opts.n_boot || ok.len() < 2 {
        return Err(Error::BootstrapFailed {
            failed,
            total: opts.n_boot,
        });
    }
    for (c, grid) in point.grids_mut().into_iter().enumerate() {
        for (k, p) in grid.iter_mut().enumerate() {
            if !shape[c][k] {
                continue;
            }
            let mut v: Vec<f64> = ok.iter().map(|rep| rep[c][k]).collect();
            v.sort_by(f64::total_cmp);
            let (lo, hi) = percentile_interval(&v, opts.conf_level);
            p.lower = Some(lo);
            p.upper = Some(hi);
        }
    }
    point.set_n_boot(ok.len());
    if failed > 0 {
        point.add_flag(&format!("bootstrap_failed_{failed}"));
    }
    Ok(point)
}
