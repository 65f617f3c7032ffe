//! Generator evaluation, Lyapunov drift scans, growth probes and stationarity
//! residuals.
//!
//! These are numerical consistency checks. A negative drift ratio outside a
//! ball or a vanishing residual is evidence, not proof.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{rate_component, ExcessRate, ModelError, Potential, Velocity};

/// Velocity enumeration makes every scan cost `2^d` per position.
pub const MAX_SCAN_DIM: usize = 12;
/// Step for central differences along the velocity.
pub const FD_STEP: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("invalid Lyapunov parameters: {0}")]
    InvalidParams(String),
    #[error("invalid probe grid: {0}")]
    InvalidGrid(String),
    #[error("dimension {dim} exceeds the scan limit of {max}")]
    DimensionTooLarge { dim: usize, max: usize },
    #[error("Hessian unavailable at {x:?}")]
    MissingHessian { x: Vec<f64> },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("V overflows f64 (log V = {log_value})")]
    Overflow { log_value: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A function `f(x, θ)` on the extended state space.
pub trait TestFunction: Sync {
    fn value(&self, x: &[f64], theta: &Velocity) -> f64;

    /// `⟨θ, ∇ₓf(x, θ)⟩` if known in closed form; otherwise the generator
    /// falls back to a central difference along `θ`.
    fn transport(&self, _x: &[f64], _theta: &Velocity) -> Option<f64> {
        None
    }
}

/// Wraps a closure; the transport term is always differenced.
pub struct FnTest<F>(pub F);

impl<F> TestFunction for FnTest<F>
where
    F: Fn(&[f64], &Velocity) -> f64 + Sync,
{
    fn value(&self, x: &[f64], theta: &Velocity) -> f64 {
        (self.0)(x, theta)
    }
}

/// `f ≡ c`.
pub struct Constant(pub f64);

impl TestFunction for Constant {
    fn value(&self, _: &[f64], _: &Velocity) -> f64 {
        self.0
    }

    fn transport(&self, _: &[f64], _: &Velocity) -> Option<f64> {
        Some(0.0)
    }
}

/// `f(x, θ) = Σ θ_i x_i`.
pub struct VelocityDot;

impl TestFunction for VelocityDot {
    fn value(&self, x: &[f64], theta: &Velocity) -> f64 {
        x.iter().enumerate().map(|(i, xi)| theta.sign(i) * xi).sum()
    }

    fn transport(&self, x: &[f64], _: &Velocity) -> Option<f64> {
        Some(x.len() as f64)
    }
}

/// `f(x) = Σ x_i²`.
pub struct SquaredNorm;

impl TestFunction for SquaredNorm {
    fn value(&self, x: &[f64], _: &Velocity) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    fn transport(&self, x: &[f64], theta: &Velocity) -> Option<f64> {
        Some(x.iter().enumerate().map(|(i, xi)| 2.0 * theta.sign(i) * xi).sum())
    }
}

/// `f(x) = Σ cos x_i`.
pub struct CosSum;

impl TestFunction for CosSum {
    fn value(&self, x: &[f64], _: &Velocity) -> f64 {
        x.iter().map(|v| v.cos()).sum()
    }

    fn transport(&self, x: &[f64], theta: &Velocity) -> Option<f64> {
        Some(x.iter().enumerate().map(|(i, xi)| -theta.sign(i) * xi.sin()).sum())
    }
}

fn directional_fd<F: TestFunction + ?Sized>(f: &F, x: &[f64], theta: &Velocity) -> f64 {
    let shifted = |h: f64| -> Vec<f64> { x.iter().enumerate().map(|(i, xi)| xi + h * theta.sign(i)).collect() };
    (f.value(&shifted(FD_STEP), theta) - f.value(&shifted(-FD_STEP), theta)) / (2.0 * FD_STEP)
}

fn transport_of<F: TestFunction + ?Sized>(f: &F, x: &[f64], theta: &Velocity) -> f64 {
    f.transport(x, theta).unwrap_or_else(|| directional_fd(f, x, theta))
}

fn check_pot_dim<P: Potential + ?Sized>(pot: &P, x: &[f64], theta: &Velocity) -> Result<(), DiagnosticsError> {
    for found in [x.len(), theta.dim()] {
        if found != pot.dim() {
            return Err(ModelError::DimensionMismatch {
                expected: pot.dim(),
                found,
            }
            .into());
        }
    }
    Ok(())
}

fn finite(v: f64, what: &str) -> Result<f64, DiagnosticsError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(DiagnosticsError::NonFinite(format!("{what} = {v}")))
    }
}

/// `Lf(x, θ) = ⟨θ, ∇ₓf⟩ + Σ_i λ_i(x, θ) (f(x, F_iθ) − f(x, θ))`.
pub fn generator_apply<P, E, F>(pot: &P, ex: &E, f: &F, x: &[f64], theta: &Velocity) -> Result<f64, DiagnosticsError>
where
    P: Potential + ?Sized,
    E: ExcessRate + ?Sized,
    F: TestFunction + ?Sized,
{
    check_pot_dim(pot, x, theta)?;
    let here = finite(f.value(x, theta), "f(x, θ)")?;
    let mut out = finite(transport_of(f, x, theta), "transport term")?;
    for i in 0..x.len() {
        let rate = rate_component(pot, ex, x, theta, i);
        let flipped = finite(f.value(x, &theta.flip(i)?), "f(x, F_iθ)")?;
        out += rate * (flipped - here);
    }
    finite(out, "Lf")
}

/// `Lf / f` for `f = exp(g)`, computed from `g` alone:
/// `⟨θ, ∇g⟩ + Σ_i λ_i (exp(g(F_iθ) − g(θ)) − 1)`.
pub fn generator_ratio_log<P, E, G>(
    pot: &P,
    ex: &E,
    g: &G,
    x: &[f64],
    theta: &Velocity,
) -> Result<f64, DiagnosticsError>
where
    P: Potential + ?Sized,
    E: ExcessRate + ?Sized,
    G: TestFunction + ?Sized,
{
    check_pot_dim(pot, x, theta)?;
    let here = finite(g.value(x, theta), "log f(x, θ)")?;
    let mut out = finite(transport_of(g, x, theta), "transport term")?;
    for i in 0..x.len() {
        let rate = rate_component(pot, ex, x, theta, i);
        let flipped = finite(g.value(x, &theta.flip(i)?), "log f(x, F_iθ)")?;
        out += rate * (flipped - here).exp_m1();
    }
    finite(out, "Lf/f")
}

/// `V(x, θ) = exp(αU(x) + Σ_i φ(θ_i ∂_iU(x)))` with
/// `φ(s) = ½ sign(s) ln(1 + δ|s|)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LyapunovRaw")]
pub struct LyapunovParams {
    alpha: f64,
    delta: f64,
    gamma_bar: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LyapunovRaw {
    alpha: f64,
    delta: f64,
    #[serde(default)]
    gamma_bar: f64,
}

impl TryFrom<LyapunovRaw> for LyapunovParams {
    type Error = DiagnosticsError;

    fn try_from(r: LyapunovRaw) -> Result<Self, Self::Error> {
        LyapunovParams::new(r.alpha, r.delta, r.gamma_bar)
    }
}

impl LyapunovParams {
    /// Requires `δ > 0` and `0 ≤ γ̄δ < α < 1`.
    pub fn new(alpha: f64, delta: f64, gamma_bar: f64) -> Result<Self, DiagnosticsError> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(DiagnosticsError::InvalidParams(format!(
                "delta must be positive, got {delta}"
            )));
        }
        if !(gamma_bar >= 0.0 && gamma_bar.is_finite()) {
            return Err(DiagnosticsError::InvalidParams(format!(
                "gamma_bar must be nonnegative, got {gamma_bar}"
            )));
        }
        if !(gamma_bar * delta < alpha && alpha < 1.0) {
            return Err(DiagnosticsError::InvalidParams(format!(
                "need gamma_bar*delta < alpha < 1, got gamma_bar*delta = {}, alpha = {alpha}",
                gamma_bar * delta
            )));
        }
        Ok(LyapunovParams {
            alpha,
            delta,
            gamma_bar,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn gamma_bar(&self) -> f64 {
        self.gamma_bar
    }

    pub fn phi(&self, s: f64) -> f64 {
        0.5 * s.signum() * (self.delta * s.abs()).ln_1p()
    }

    pub fn phi_prime(&self, s: f64) -> f64 {
        0.5 * self.delta / (1.0 + self.delta * s.abs())
    }
}

/// `log V(x, θ)`.
pub fn lyapunov_log_value<P: Potential + ?Sized>(
    pot: &P,
    p: &LyapunovParams,
    x: &[f64],
    theta: &Velocity,
) -> Result<f64, DiagnosticsError> {
    check_pot_dim(pot, x, theta)?;
    let grad = pot.gradient(x);
    let tilt: f64 = grad.iter().enumerate().map(|(i, g)| p.phi(theta.sign(i) * g)).sum();
    finite(p.alpha * pot.value(x) + tilt, "log V")
}

pub fn lyapunov_value<P: Potential + ?Sized>(
    pot: &P,
    p: &LyapunovParams,
    x: &[f64],
    theta: &Velocity,
) -> Result<f64, DiagnosticsError> {
    let log_value = lyapunov_log_value(pot, p, x, theta)?;
    let v = log_value.exp();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(DiagnosticsError::Overflow { log_value })
    }
}

/// `log V` as a test function, for cross-checking [`drift_ratio`] with
/// [`generator_ratio_log`].
pub struct LogLyapunov<'a, P: ?Sized> {
    pub pot: &'a P,
    pub params: LyapunovParams,
}

impl<P: Potential + ?Sized> TestFunction for LogLyapunov<'_, P> {
    fn value(&self, x: &[f64], theta: &Velocity) -> f64 {
        lyapunov_log_value(self.pot, &self.params, x, theta).unwrap_or(f64::NAN)
    }
}

/// Closed-form `LV/V`:
/// `α⟨θ,∇U⟩ + Σ_ij θ_i ∂_ijU θ_j φ'(s_j) + Σ_i (γ_i + (s_i)₊)(exp(φ(−s_i) − φ(s_i)) − 1)`
/// with `s_i = θ_i ∂_iU`.
pub fn drift_ratio<P, E>(
    pot: &P,
    ex: &E,
    p: &LyapunovParams,
    x: &[f64],
    theta: &Velocity,
) -> Result<f64, DiagnosticsError>
where
    P: Potential + ?Sized,
    E: ExcessRate + ?Sized,
{
    check_pot_dim(pot, x, theta)?;
    let hess = pot
        .hessian(x)
        .ok_or_else(|| DiagnosticsError::MissingHessian { x: x.to_vec() })?;
    let grad = pot.gradient(x);
    Ok(drift_ratio_parts(ex, p, x, theta, &grad, &hess))
}

fn drift_ratio_parts<E: ExcessRate + ?Sized>(
    ex: &E,
    p: &LyapunovParams,
    x: &[f64],
    theta: &Velocity,
    grad: &[f64],
    hess: &DMatrix<f64>,
) -> f64 {
    let d = grad.len();
    let s: Vec<f64> = (0..d).map(|i| theta.sign(i) * grad[i]).collect();
    let transport: f64 = p.alpha * s.iter().sum::<f64>();
    let mut curvature = 0.0;
    for i in 0..d {
        for j in 0..d {
            curvature += theta.sign(i) * hess[(i, j)] * theta.sign(j) * p.phi_prime(s[j]);
        }
    }
    let jumps: f64 = (0..d)
        .map(|i| {
            let rate = ex.gamma(x, theta, i) + s[i].max(0.0);
            rate * (p.phi(-s[i]) - p.phi(s[i])).exp_m1()
        })
        .sum();
    transport + curvature + jumps
}

/// `−min(1−α, α−γ̄δ) Σ|∂_iU| + d/δ + (δ/2) Σ|∂_ijU|`, which dominates the
/// drift ratio at every point.
pub fn drift_upper_bound(p: &LyapunovParams, grad: &[f64], hess: &DMatrix<f64>) -> f64 {
    let kappa = (1.0 - p.alpha).min(p.alpha - p.gamma_bar * p.delta);
    let grad_l1: f64 = grad.iter().map(|g| g.abs()).sum();
    let hess_l1: f64 = hess.iter().map(|h| h.abs()).sum();
    -kappa * grad_l1 + grad.len() as f64 / p.delta + 0.5 * p.delta * hess_l1
}

/// Unit directions for probe grids: `±1` in one dimension, equally spaced
/// angles in two, and seeded Gaussian directions beyond.
pub fn probe_directions(dim: usize, n_angular: usize) -> Vec<Vec<f64>> {
    match dim {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..n_angular)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / n_angular as f64;
                snap_direction(a.cos(), a.sin())
            })
            .collect(),
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            (0..n_angular)
                .map(|_| loop {
                    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
                    if norm > 1e-8 {
                        break v.into_iter().map(|c| c / norm).collect();
                    }
                })
                .collect()
        }
    }
}

/// Rounds `(cos a, sin a)` so that axis and diagonal angles land exactly on
/// the axes and diagonals.
fn snap_direction(c: f64, s: f64) -> Vec<f64> {
    const TOL: f64 = 1e-12;
    let snap = |v: f64| if v.abs() < TOL { 0.0 } else { v };
    let (c, s) = (snap(c), snap(s));
    if (c.abs() - s.abs()).abs() < TOL {
        vec![FRAC_1_SQRT_2.copysign(c), FRAC_1_SQRT_2.copysign(s)]
    } else {
        vec![c, s]
    }
}

/// `n` radii from `r_min` to `r_max`: geometric when `r_min > 0`, linear otherwise.
pub fn radial_grid(r_min: f64, r_max: f64, n: usize) -> Result<Vec<f64>, DiagnosticsError> {
    if !(r_min >= 0.0 && r_min < r_max && r_max.is_finite()) {
        return Err(DiagnosticsError::InvalidGrid(format!(
            "need 0 <= r_min < r_max, got [{r_min}, {r_max}]"
        )));
    }
    if n < 2 {
        return Err(DiagnosticsError::InvalidGrid("need at least two radii".into()));
    }
    let step = |k: usize| k as f64 / (n - 1) as f64;
    Ok((0..n)
        .map(|k| {
            if k == n - 1 {
                r_max
            } else if r_min > 0.0 {
                r_min * (r_max / r_min).powf(step(k))
            } else {
                r_max * step(k)
            }
        })
        .collect())
}

fn check_scan_dim(dim: usize) -> Result<(), DiagnosticsError> {
    if dim == 0 || dim > MAX_SCAN_DIM {
        return Err(DiagnosticsError::DimensionTooLarge { dim, max: MAX_SCAN_DIM });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftProbe {
    pub radius: f64,
    pub x: Vec<f64>,
    pub theta: Velocity,
    /// `LV/V`; `+∞` where the Hessian is unavailable (serialised as `null`).
    pub ratio: f64,
    /// Pointwise upper bound on the ratio, when the Hessian is available.
    pub bound: Option<f64>,
    pub log_v: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub params: LyapunovParams,
    pub radii: Vec<f64>,
    pub grid: Vec<DriftProbe>,
    /// Largest `ε > 0` with ratio `≤ −ε` at every probe beyond `k_radius`.
    pub epsilon: Option<f64>,
    pub k_radius: Option<f64>,
    /// `log max (LV + εV)` over probes with `|x| ≤ k_radius`; `None` when that
    /// maximum is not positive or the region is empty.
    pub log_c: Option<f64>,
    /// Probes where the Hessian was unavailable.
    pub missing_hessian: usize,
    /// Probes where the closed-form ratio exceeded the pointwise bound.
    pub bound_violations: usize,
}

impl DriftReport {
    pub fn bound_holds(&self) -> bool {
        self.bound_violations == 0
    }

    pub fn c(&self) -> Option<f64> {
        self.log_c.map(f64::exp)
    }
}

/// Evaluates the drift ratio on `radius × direction × velocity` and extracts
/// `(ε, K, C)`.
///
/// Shells beyond `K` are chosen from each shell's 99th-percentile ratio; `ε`
/// is then the negated raw maximum beyond `K`, so a stray spike moves `K`
/// outwards rather than being ignored.
pub fn drift_scan<P, E>(
    pot: &P,
    ex: &E,
    p: &LyapunovParams,
    r_min: f64,
    r_max: f64,
    n_radial: usize,
    n_angular: usize,
) -> Result<DriftReport, DiagnosticsError>
where
    P: Potential + ?Sized,
    E: ExcessRate + ?Sized,
{
    let d = pot.dim();
    check_scan_dim(d)?;
    if d >= 2 && n_angular == 0 {
        return Err(DiagnosticsError::InvalidGrid("need at least one direction".into()));
    }
    let radii = radial_grid(r_min, r_max, n_radial)?;
    let dirs = probe_directions(d, n_angular);
    let velocities: Vec<Velocity> = Velocity::enumerate(d).collect();

    let cells: Vec<(f64, &Vec<f64>)> = radii.iter().flat_map(|&r| dirs.iter().map(move |u| (r, u))).collect();
    let shells: Vec<Vec<DriftProbe>> = cells
        .par_iter()
        .map(|&(r, u)| -> Result<Vec<DriftProbe>, DiagnosticsError> {
            let x: Vec<f64> = u.iter().map(|c| r * c).collect();
            let grad = pot.gradient(&x);
            let hess = pot.hessian(&x);
            velocities
                .iter()
                .map(|theta| {
                    let log_v = lyapunov_log_value(pot, p, &x, theta)?;
                    let (ratio, bound) = match &hess {
                        Some(h) => (
                            drift_ratio_parts(ex, p, &x, theta, &grad, h),
                            Some(drift_upper_bound(p, &grad, h)),
                        ),
                        None => (f64::INFINITY, None),
                    };
                    Ok(DriftProbe {
                        radius: r,
                        x: x.clone(),
                        theta: theta.clone(),
                        ratio,
                        bound,
                        log_v,
                    })
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let grid: Vec<DriftProbe> = shells.into_iter().flatten().collect();

    let missing_hessian = grid.iter().filter(|q| q.bound.is_none()).count();
    let bound_violations = grid
        .iter()
        .filter(|q| matches!(q.bound, Some(b) if !(q.ratio <= b)))
        .count();

    let per_shell = grid.len() / radii.len();
    let shell = |k: usize| &grid[k * per_shell..(k + 1) * per_shell];
    let robust_max: Vec<f64> = (0..radii.len()).map(|k| percentile(shell(k), 0.99)).collect();
    let raw_max: Vec<f64> = (0..radii.len())
        .map(|k| shell(k).iter().map(|q| q.ratio).fold(f64::NEG_INFINITY, f64::max))
        .collect();

    // First shell from which every robust shell maximum is negative.
    let mut start = radii.len();
    while start > 0 && robust_max[start - 1] < 0.0 {
        start -= 1;
    }
    // Then move past any shell whose raw maximum is not negative.
    while start < radii.len() && !(raw_max[start..].iter().all(|&m| m < 0.0)) {
        start += 1;
    }

    let (epsilon, k_radius, log_c) = if start < radii.len() {
        let eps = -raw_max[start..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let k_radius = if start == 0 { 0.0 } else { radii[start - 1] };
        let log_c = grid[..start * per_shell]
            .iter()
            .filter(|q| q.ratio + eps > 0.0)
            .map(|q| (q.ratio + eps).ln() + q.log_v)
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
        (Some(eps), Some(k_radius), log_c)
    } else {
        (None, None, None)
    };

    Ok(DriftReport {
        params: *p,
        radii,
        grid,
        epsilon,
        k_radius,
        log_c,
        missing_hessian,
        bound_violations,
    })
}

fn percentile(probes: &[DriftProbe], q: f64) -> f64 {
    let mut v: Vec<f64> = probes.iter().map(|p| p.ratio).collect();
    v.sort_by(f64::total_cmp);
    let idx = ((v.len() as f64 - 1.0) * q).ceil() as usize;
    v[idx.min(v.len() - 1)]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub radii: Vec<f64>,
    /// `max(1, ‖Hess U‖) / |∇U|`, maximised over directions.
    pub ratio1: Vec<f64>,
    /// `|∇U| / U`, maximised over directions.
    pub ratio2: Vec<f64>,
    /// Slope `c` of the least-squares fit `min_dir U ≈ c ln r + c'`.
    pub gc2_slope: f64,
    /// Log-log slopes of the two ratios over the upper half of the radii.
    pub ratio1_slope: f64,
    pub ratio2_slope: f64,
    pub gc3_consistent: bool,
}

/// Slope below which a log-log trend counts as decay.
pub const DECAY_SLOPE: f64 = -0.1;

/// Probes the growth conditions along `radii × directions`.
///
/// GC3 is reported consistent when both ratios strictly decrease over the
/// upper half of the radii and decay at least like `r^{-0.1}` there; a ratio
/// that merely decreases towards a positive constant is not enough.
pub fn growth_probe<P: Potential + ?Sized>(
    pot: &P,
    radii: &[f64],
    n_angular: usize,
) -> Result<GrowthReport, DiagnosticsError> {
    let d = pot.dim();
    check_scan_dim(d)?;
    if radii.len() < 2 || radii[0] <= 0.0 || radii.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(DiagnosticsError::InvalidGrid(
            "radii must be positive, strictly increasing and at least two".into(),
        ));
    }
    if d >= 2 && n_angular == 0 {
        return Err(DiagnosticsError::InvalidGrid("need at least one direction".into()));
    }
    let dirs = probe_directions(d, n_angular);
    let rows: Vec<(f64, f64, f64)> = radii
        .par_iter()
        .map(|&r| {
            let mut r1 = f64::NEG_INFINITY;
            let mut r2 = f64::NEG_INFINITY;
            let mut u_min = f64::INFINITY;
            for u in &dirs {
                let x: Vec<f64> = u.iter().map(|c| r * c).collect();
                let grad = pot.gradient(&x);
                let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                let hess = pot.hessian(&x).unwrap_or_else(|| fd_hessian(pot, &x));
                let hnorm = spectral_norm(&hess);
                let value = pot.value(&x);
                r1 = r1.max(safe_div(hnorm.max(1.0), gnorm));
                r2 = r2.max(safe_div(gnorm, value));
                u_min = u_min.min(value);
            }
            (r1, r2, u_min)
        })
        .collect();
    let ratio1: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let ratio2: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let log_r: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let u_min: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let gc2_slope = ls_slope(&log_r, &u_min);

    let half = radii.len() / 2;
    let top = |v: &[f64]| v[half.min(radii.len() - 2)..].to_vec();
    let log_top = top(&log_r);
    let loglog = |v: &[f64]| {
        let tv = top(v);
        if tv.iter().all(|y| *y > 0.0 && y.is_finite()) {
            ls_slope(&log_top, &tv.iter().map(|y| y.ln()).collect::<Vec<_>>())
        } else {
            f64::NAN
        }
    };
    let ratio1_slope = loglog(&ratio1);
    let ratio2_slope = loglog(&ratio2);
    let decreasing = |v: &[f64]| top(v).windows(2).all(|w| w[1] < w[0]);
    let gc3_consistent =
        decreasing(&ratio1) && decreasing(&ratio2) && ratio1_slope < DECAY_SLOPE && ratio2_slope < DECAY_SLOPE;

    Ok(GrowthReport {
        radii: radii.to_vec(),
        ratio1,
        ratio2,
        gc2_slope,
        ratio1_slope,
        ratio2_slope,
        gc3_consistent,
    })
}

fn safe_div(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else {
        f64::INFINITY
    }
}

fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn spectral_norm(h: &DMatrix<f64>) -> f64 {
    let sym = 0.5 * (h + h.transpose());
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .fold(0.0f64, |m, e| m.max(e.abs()))
}

fn fd_hessian<P: Potential + ?Sized>(pot: &P, x: &[f64]) -> DMatrix<f64> {
    let d = x.len();
    let h = 1e-5 * x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut out = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        let (gp, gm) = (pot.gradient(&xp), pot.gradient(&xm));
        for i in 0..d {
            out[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    out
}

/// Tensor trapezoid grid on `[lower, upper]^d` with `points` nodes per axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadSpec {
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
}

/// Largest tensor grid [`stationarity_residual`] will evaluate.
pub const MAX_QUAD_NODES: usize = 50_000_000;

/// `π(Lf) = ∫ 2^{-d} Σ_θ Lf(x, θ) e^{−U(x)} dx / ∫ e^{−U}`, which vanishes
/// for rates that leave `π` invariant.
pub fn stationarity_residual<P, E, F>(pot: &P, ex: &E, f: &F, quad: &QuadSpec) -> Result<f64, DiagnosticsError>
where
    P: Potential + ?Sized,
    E: ExcessRate + ?Sized,
    F: TestFunction + ?Sized,
{
    let d = pot.dim();
    check_scan_dim(d)?;
    if !(quad.lower < quad.upper && quad.lower.is_finite() && quad.upper.is_finite()) || quad.points < 2 {
        return Err(DiagnosticsError::InvalidGrid(format!(
            "need a finite box with lower < upper and at least two points, got {quad:?}"
        )));
    }
    let total = (quad.points as u128).pow(d as u32);
    if total > MAX_QUAD_NODES as u128 {
        return Err(DiagnosticsError::InvalidGrid(format!(
            "{total} quadrature nodes exceed the limit of {MAX_QUAD_NODES}"
        )));
    }
    let n = quad.points;
    let h = (quad.upper - quad.lower) / (n - 1) as f64;
    let node = |k: usize| quad.lower + h * k as f64;
    let weight = |k: usize| if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
    let velocities: Vec<Velocity> = Velocity::enumerate(d).collect();

    // Rows over the first coordinate run in parallel; the merge is ordered.
    let rows: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|k0| -> Result<(f64, f64), DiagnosticsError> {
            let mut num = 0.0;
            let mut den = 0.0;
            let mut idx = vec![0usize; d];
            idx[0] = k0;
            let mut x = vec![0.0; d];
            loop {
                let mut w = 1.0;
                for j in 0..d {
                    x[j] = node(idx[j]);
                    w *= weight(idx[j]);
                }
                let density = (-pot.value(&x)).exp();
                if density > 0.0 {
                    let mut avg = 0.0;
                    for theta in &velocities {
                        avg += generator_apply(pot, ex, f, &x, theta)?;
                    }
                    num += w * density * avg / velocities.len() as f64;
                }
                den += w * density;
                // Advance the remaining coordinates odometer-style.
                let mut j = 1;
                while j < d {
                    idx[j] += 1;
                    if idx[j] < n {
                        break;
                    }
                    idx[j] = 0;
                    j += 1;
                }
                if j == d {
                    break;
                }
            }
            Ok((num, den))
        })
        .collect::<Result<_, _>>()?;
    let (num, den) = rows.iter().fold((0.0, 0.0), |(a, b), (n, d)| (a + n, b + d));
    if !(den > 0.0) {
        return Err(DiagnosticsError::NonFinite("∫ e^{-U} vanished on the grid".into()));
    }
    Ok(num / den)
}
