//! Univariate slice sampling with the doubling procedure.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceSampler {
    pub width: f64,
    pub max_doublings: u32,
}

impl Default for SliceSampler {
    fn default() -> Self {
        Self {
            width: 1.0,
            max_doublings: 20,
        }
    }
}

impl SliceSampler {
    /// One update from `x0`. `log_density` must return `-inf` outside the
    /// support. Returns the new point and the number of density calls.
    pub fn step<F, R>(&self, x0: f64, log_density: F, rng: &mut R) -> (f64, usize)
    where
        F: Fn(f64) -> f64,
        R: Rng + ?Sized,
    {
        let mut evals = 1;
        let f0 = log_density(x0);
        debug_assert!(f0.is_finite(), "slice sampler started outside the support");
        let e: f64 = Exp1.sample(rng);
        let level = f0 - e;
        let w = self.width;

        let mut l = x0 - w * rng.gen::<f64>();
        let mut r = l + w;
        let (mut fl, mut fr) = (log_density(l), log_density(r));
        evals += 2;
        let mut k = self.max_doublings;
        while k > 0 && (level < fl || level < fr) {
            if rng.gen::<bool>() {
                l -= r - l;
                fl = log_density(l);
            } else {
                r += r - l;
                fr = log_density(r);
            }
            evals += 1;
            k -= 1;
        }

        let (mut lo, mut hi) = (l, r);
        loop {
            let x1 = lo + rng.gen::<f64>() * (hi - lo);
            let f1 = log_density(x1);
            evals += 1;
            if level < f1 && self.acceptable(x0, x1, l, r, level, &log_density, &mut evals) {
                return (x1, evals);
            }
            if x1 < x0 {
                lo = x1;
            } else {
                hi = x1;
            }
        }
    }

    /// Rejects points whose doubling sequence would not have produced the
    /// same interval from `x1`.
    #[allow(clippy::too_many_arguments)]
    fn acceptable<F: Fn(f64) -> f64>(&self, x0: f64, x1: f64, mut l: f64, mut r: f64, level: f64, f: &F, evals: &mut usize) -> bool {
        let mut differ = false;
        while r - l > 1.1 * self.width {
            let m = 0.5 * (l + r);
            if (x0 < m && x1 >= m) || (x0 >= m && x1 < m) {
                differ = true;
            }
            if x1 < m {
                r = m;
            } else {
                l = m;
            }
            if differ {
                *evals += 2;
                if level >= f(l) && level >= f(r) {
                    return false;
                }
            }
        }
        true
    }
}
