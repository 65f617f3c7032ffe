//! Ergodic averages along skeletons and batch-means error bars.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ExcessRate, Potential, Skeleton, State, Velocity};
use crate::simulate::{simulate_skeleton, SimConfig, SimError};

pub const DEFAULT_BATCHES: usize = 30;
pub const MIN_BATCHES: usize = 10;
/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("skeleton was truncated at {events} events; its horizon is not the requested one")]
    Truncated { events: usize },
    #[error("need at least {MIN_BATCHES} batches, got {0}")]
    TooFewBatches(usize),
    #[error("non-finite integral over [{a}, {b}]")]
    NonFinite { a: f64, b: f64 },
    #[error(transparent)]
    Sim(#[from] SimError),
}

fn check_complete(skel: &Skeleton) -> Result<(), EstimateError> {
    if skel.is_truncated() {
        return Err(EstimateError::Truncated {
            events: skel.events().len(),
        });
    }
    Ok(())
}

/// `(1/T) ∫₀ᵀ g(X_s, Θ_s) ds` over the whole skeleton.
pub fn ergodic_average<G>(skel: &Skeleton, g: G) -> Result<f64, EstimateError>
where
    G: Fn(&[f64], &Velocity) -> f64,
{
    check_complete(skel)?;
    let avg = skel.integrate_along(g, skel.horizon())?;
    if !avg.is_finite() {
        return Err(EstimateError::NonFinite {
            a: 0.0,
            b: skel.horizon(),
        });
    }
    Ok(avg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchMeansResult {
    pub mean: f64,
    /// Estimate of the asymptotic standard deviation `σ_g`.
    pub sigma_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_batches: usize,
    /// Length of each window in time units.
    pub batch_len: f64,
    pub window_means: Vec<f64>,
    /// Window means are strictly monotone, which suggests drift rather than
    /// fluctuation around a limit.
    pub nonstationary: bool,
}

impl BatchMeansResult {
    pub fn covers(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}

/// Splits `[0, T]` into `n_batches` equal windows.
///
/// `σ̂² = batch_len · s²` with `s²` the sample variance of the window means,
/// and the interval is `mean ± 1.96 σ̂/√T`.
pub fn batch_means<G>(skel: &Skeleton, g: G, n_batches: usize) -> Result<BatchMeansResult, EstimateError>
where
    G: Fn(&[f64], &Velocity) -> f64,
{
    check_complete(skel)?;
    if n_batches < MIN_BATCHES {
        return Err(EstimateError::TooFewBatches(n_batches));
    }
    let horizon = skel.horizon();
    let batch_len = horizon / n_batches as f64;
    let edge = |k: usize| if k == n_batches { horizon } else { batch_len * k as f64 };

    let mut integrals = Vec::with_capacity(n_batches);
    for k in 0..n_batches {
        let (a, b) = (edge(k), edge(k + 1));
        let v = skel.integrate_window(&g, a, b)?;
        if !v.is_finite() {
            return Err(EstimateError::NonFinite { a, b });
        }
        integrals.push(v);
    }
    let window_means: Vec<f64> = integrals.iter().map(|v| v / batch_len).collect();
    let mean = integrals.iter().sum::<f64>() / horizon;
    let n = n_batches as f64;
    let centre = window_means.iter().sum::<f64>() / n;
    let var = window_means.iter().map(|m| (m - centre).powi(2)).sum::<f64>() / (n - 1.0);
    let sigma_hat = (batch_len * var).sqrt();
    let half = Z_95 * sigma_hat / horizon.sqrt();
    let increasing = window_means.windows(2).all(|w| w[1] > w[0]);
    let decreasing = window_means.windows(2).all(|w| w[1] < w[0]);

    Ok(BatchMeansResult {
        mean,
        sigma_hat,
        ci_low: mean - half,
        ci_high: mean + half,
        n_batches,
        batch_len,
        window_means,
        nonstationary: increasing || decreasing,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Replicate {
    pub replicate: usize,
    pub seed: u64,
    pub events: usize,
    pub result: BatchMeansResult,
}

/// Runs `replicates` independent chains with seeds `cfg.seed + r` and
/// batch-means each. Replicates run concurrently; results are in replicate
/// order.
pub fn replicate_batch_means<P, E, G>(
    pot: &P,
    ex: &E,
    init: &State,
    cfg: &SimConfig,
    g: G,
    n_batches: usize,
    replicates: usize,
) -> Result<Vec<Replicate>, EstimateError>
where
    P: Potential + ?Sized,
    E: ExcessRate + ?Sized,
    G: Fn(&[f64], &Velocity) -> f64 + Sync,
{
    if n_batches < MIN_BATCHES {
        return Err(EstimateError::TooFewBatches(n_batches));
    }
    (0..replicates)
        .into_par_iter()
        .map(|r| {
            let seed = cfg.seed.wrapping_add(r as u64);
            let run_cfg = SimConfig { seed, ..cfg.clone() };
            let skel = simulate_skeleton(pot, ex, init, &run_cfg)?;
            let result = batch_means(&skel, &g, n_batches)?;
            Ok(Replicate {
                replicate: r,
                seed,
                events: skel.events().len(),
                result,
            })
        })
        .collect()
}

/// Fraction of replicates whose interval contains `truth`.
pub fn coverage(replicates: &[Replicate], truth: f64) -> f64 {
    if replicates.is_empty() {
        return f64::NAN;
    }
    replicates.iter().filter(|r| r.result.covers(truth)).count() as f64 / replicates.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConstantExcess, SkeletonEvent};
    use crate::targets::{GaussianTarget, RidgeTarget};

    fn v(s: &[i8]) -> Velocity {
        Velocity::from_signs(s).unwrap()
    }

    fn gaussian_run(horizon: f64, seed: u64) -> Skeleton {
        let g = GaussianTarget::standard(1);
        let init = State::new(vec![0.0], v(&[1])).unwrap();
        simulate_skeleton(
            &g,
            &ConstantExcess::CANONICAL,
            &init,
            &SimConfig::new(horizon, seed).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn constant_function() {
        let skel = gaussian_run(100.0, 4);
        assert!((ergodic_average(&skel, |_, _| 2.5).unwrap() - 2.5).abs() < 1e-12);
        let bm = batch_means(&skel, |_, _| 2.5, 30).unwrap();
        assert!((bm.mean - 2.5).abs() < 1e-12);
        assert!(bm.sigma_hat < 1e-12);
        assert!(bm.ci_low <= bm.mean && bm.mean <= bm.ci_high);
    }

    #[test]
    fn too_few_batches() {
        let skel = gaussian_run(10.0, 1);
        assert_eq!(batch_means(&skel, |x, _| x[0], 9), Err(EstimateError::TooFewBatches(9)));
    }

    #[test]
    fn truncated_skeleton_rejected() {
        let g = GaussianTarget::standard(1);
        let init = State::new(vec![0.0], v(&[1])).unwrap();
        let cfg = SimConfig::new(1e6, 1).unwrap().with_max_events(5).unwrap();
        let skel = simulate_skeleton(&g, &ConstantExcess::CANONICAL, &init, &cfg).unwrap();
        assert_eq!(
            ergodic_average(&skel, |x, _| x[0]),
            Err(EstimateError::Truncated { events: 5 })
        );
    }

    #[test]
    fn hand_built_skeleton() {
        // Out to 1 and back to 0 over [0, 2]: ∫x = 1, ∫x² = 2/3.
        let init = State::new(vec![0.0], v(&[1])).unwrap();
        let ev = SkeletonEvent {
            time: 1.0,
            index: 0,
            position: vec![1.0],
            velocity: v(&[-1]),
        };
        let skel = Skeleton::new(init, vec![ev], 2.0, false).unwrap();
        assert!((ergodic_average(&skel, |x, _| x[0]).unwrap() - 0.5).abs() < 1e-15);
        assert!((ergodic_average(&skel, |x, _| x[0] * x[0]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn splitting_and_affine_structure() {
        let skel = gaussian_run(500.0, 9);
        let g = |x: &[f64], _: &Velocity| x[0] * x[0] - x[0];
        let bm = batch_means(&skel, g, 25).unwrap();
        let avg = ergodic_average(&skel, g).unwrap();
        let of_batches = bm.window_means.iter().sum::<f64>() / 25.0;
        assert!((avg - of_batches).abs() < 1e-10);
        let (a, b) = (-3.0, 7.0);
        let t = batch_means(&skel, |x, th| a * g(x, th) + b, 25).unwrap();
        assert!((t.mean - (a * bm.mean + b)).abs() < 1e-10);
        assert!((t.sigma_hat - a.abs() * bm.sigma_hat).abs() < 1e-10 * bm.sigma_hat.max(1.0));
    }

    #[test]
    fn ridge_drift_is_flagged() {
        let r = RidgeTarget::new(0.75).unwrap();
        let init = State::new(vec![0.0, 0.0], v(&[1, 1])).unwrap();
        let skel = simulate_skeleton(
            &r,
            &ConstantExcess::CANONICAL,
            &init,
            &SimConfig::new(1000.0, 1).unwrap(),
        )
        .unwrap();
        let bm = batch_means(&skel, |x, _| x[0], 30).unwrap();
        assert!(bm.nonstationary);
        let ok = batch_means(&gaussian_run(1000.0, 2), |x, _| x[0], 30).unwrap();
        assert!(!ok.nonstationary);
    }

    #[test]
    fn replicates_are_ordered_and_seeded() {
        let g = GaussianTarget::standard(1);
        let init = State::new(vec![0.0], v(&[1])).unwrap();
        let cfg = SimConfig::new(200.0, 40).unwrap();
        let reps = replicate_batch_means(&g, &ConstantExcess::CANONICAL, &init, &cfg, |x, _| x[0], 10, 6).unwrap();
        for (r, rep) in reps.iter().enumerate() {
            assert_eq!(rep.replicate, r);
            assert_eq!(rep.seed, 40 + r as u64);
            let solo = batch_means(&gaussian_run(200.0, rep.seed), |x, _| x[0], 10).unwrap();
            assert_eq!(solo, rep.result);
        }
    }
}
