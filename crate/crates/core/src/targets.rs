//! Concrete potentials: Gaussian, ridge, max and power-law families.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, Potential, State, Velocity};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TargetError {
    #[error("precision matrix must be square with at least one row, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("precision matrix is not symmetric: |A[{i},{j}] - A[{j},{i}]| = {gap}")]
    NotSymmetric { i: usize, j: usize, gap: f64 },
    #[error("precision matrix is not positive definite (Cholesky factorisation failed)")]
    NotPositiveDefinite,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

const SYMMETRY_TOL: f64 = 1e-12;

/// `U(x) = ½ xᵀAx + bᵀx`, i.e. a Gaussian with precision `A` and mean `-A⁻¹b`.
///
/// The factor ½ is the usual sampling convention; a potential written as
/// `⟨x, Ax⟩` corresponds to precision `2A`. Flippability is invariant under
/// that scaling.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianTarget {
    precision: DMatrix<f64>,
    offset: DVector<f64>,
}

impl GaussianTarget {
    pub fn new(precision: DMatrix<f64>, offset: Option<DVector<f64>>) -> Result<Self, TargetError> {
        let (rows, cols) = precision.shape();
        if rows != cols || rows == 0 {
            return Err(TargetError::NotSquare { rows, cols });
        }
        let scale = precision.amax().max(1.0);
        for i in 0..rows {
            for j in (i + 1)..rows {
                let gap = (precision[(i, j)] - precision[(j, i)]).abs();
                if !(gap <= SYMMETRY_TOL * scale) {
                    return Err(TargetError::NotSymmetric { i, j, gap });
                }
            }
        }
        if precision.iter().any(|v| !v.is_finite()) || precision.clone().cholesky().is_none() {
            return Err(TargetError::NotPositiveDefinite);
        }
        let offset = offset.unwrap_or_else(|| DVector::zeros(rows));
        if offset.len() != rows {
            return Err(ModelError::DimensionMismatch {
                expected: rows,
                found: offset.len(),
            }
            .into());
        }
        Ok(GaussianTarget { precision, offset })
    }

    pub fn from_row_major(dim: usize, precision: &[f64], offset: Option<&[f64]>) -> Result<Self, TargetError> {
        if precision.len() != dim * dim {
            return Err(TargetError::InvalidParameter(format!(
                "precision has {} entries, expected {dim}x{dim} = {}",
                precision.len(),
                dim * dim
            )));
        }
        Self::new(
            DMatrix::from_row_slice(dim, dim, precision),
            offset.map(DVector::from_column_slice),
        )
    }

    pub fn standard(dim: usize) -> Self {
        Self::new(DMatrix::identity(dim, dim), None).expect("identity is SPD")
    }

    /// Potential centred at `mean`: `b = -A·mean`.
    pub fn with_mean(precision: DMatrix<f64>, mean: &[f64]) -> Result<Self, TargetError> {
        let mu = DVector::from_column_slice(mean);
        if mu.len() != precision.nrows() {
            return Err(ModelError::DimensionMismatch {
                expected: precision.nrows(),
                found: mu.len(),
            }
            .into());
        }
        let b = -(&precision * mu);
        Self::new(precision, Some(b))
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    /// `(Aθ)_i` for all `i`.
    pub fn drift(&self, theta: &Velocity) -> Vec<f64> {
        let d = self.precision.nrows();
        (0..d)
            .map(|i| (0..d).map(|j| self.precision[(i, j)] * theta.sign(j)).sum())
            .collect()
    }

    /// `θᵀAθ`.
    pub fn quad_form(&self, theta: &Velocity) -> f64 {
        theta.dot(&self.drift(theta))
    }

    /// Coefficients `(c, m)` with `λ_i(x + tθ, θ) = (c + m t)_+` for the
    /// canonical rate: `c = θ_i (Ax + b)_i`, `m = θ_i (Aθ)_i`.
    pub fn rate_along(&self, s: &State, i: usize) -> Result<(f64, f64), ModelError> {
        let d = self.dim();
        if s.dim() != d {
            return Err(ModelError::DimensionMismatch {
                expected: d,
                found: s.dim(),
            });
        }
        if i >= d {
            return Err(ModelError::IndexOutOfRange { index: i, dim: d });
        }
        let th = s.theta.sign(i);
        let row = self.precision.row(i);
        let grad_i: f64 = row.iter().zip(&s.x).map(|(a, x)| a * x).sum::<f64>() + self.offset[i];
        let slope: f64 = row.iter().zip(s.theta.signs()).map(|(a, t)| a * t).sum();
        Ok((th * grad_i, th * slope))
    }
}

/// Alias kept for readers looking for the operation by name.
pub fn gaussian_rate_along(tgt: &GaussianTarget, s: &State, i: usize) -> Result<(f64, f64), ModelError> {
    tgt.rate_along(s, i)
}

impl Potential for GaussianTarget {
    fn dim(&self) -> usize {
        self.precision.nrows()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let mut acc = 0.0;
        for i in 0..d {
            let ax: f64 = (0..d).map(|j| self.precision[(i, j)] * x[j]).sum();
            acc += x[i] * (0.5 * ax + self.offset[i]);
        }
        acc
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.partial(x, i);
        }
    }

    fn partial(&self, x: &[f64], i: usize) -> f64 {
        self.precision.row(i).iter().zip(x).map(|(a, x)| a * x).sum::<f64>() + self.offset[i]
    }

    fn hessian(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        Some(self.precision.clone())
    }

    fn affine_gradient(&self) -> bool {
        true
    }

    /// Exact: the pre-positive-part rate is affine in time, so its maximum on
    /// the segment is attained at an endpoint.
    fn rate_bound(&self, x: &[f64], theta: &Velocity, horizon: f64) -> Vec<f64> {
        let drift = self.drift(theta);
        (0..self.dim())
            .map(|i| {
                let c = theta.sign(i) * self.partial(x, i);
                let m = theta.sign(i) * drift[i];
                c.max(c + m * horizon).max(0.0)
            })
            .collect()
    }
}

/// `U(x₁, x₂) = |x₁ − x₂|^{2α} (1 + |x₁ + x₂|²)` with `½ < α < 1`.
///
/// Integrable, but the gradient vanishes on the whole diagonal `x₁ = x₂`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RidgeTarget {
    alpha: f64,
}

impl RidgeTarget {
    pub fn new(alpha: f64) -> Result<Self, TargetError> {
        if !(alpha > 0.5 && alpha < 1.0) {
            return Err(TargetError::InvalidParameter(format!(
                "ridge alpha must lie in (0.5, 1), got {alpha}"
            )));
        }
        Ok(RidgeTarget { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Closed-form gradient; exactly `(0, 0)` on the diagonal.
    pub fn gradient2(&self, x: &[f64]) -> [f64; 2] {
        let (ua, ub) = self.partials_ab(x);
        [ua + ub, -ua + ub]
    }

    // Derivatives in the rotated coordinates a = x₁ − x₂, b = x₁ + x₂.
    fn partials_ab(&self, x: &[f64]) -> (f64, f64) {
        let a = x[0] - x[1];
        let b = x[0] + x[1];
        if a == 0.0 {
            return (0.0, 0.0);
        }
        let p = 2.0 * self.alpha;
        let abs_a = a.abs();
        let ua = p * a.signum() * abs_a.powf(p - 1.0) * (1.0 + b * b);
        let ub = 2.0 * b * abs_a.powf(p);
        (ua, ub)
    }
}

pub fn ridge_gradient(tgt: &RidgeTarget, x: &[f64; 2]) -> [f64; 2] {
    tgt.gradient2(x)
}

impl Potential for RidgeTarget {
    fn dim(&self) -> usize {
        2
    }

    fn value(&self, x: &[f64]) -> f64 {
        let a = x[0] - x[1];
        let b = x[0] + x[1];
        a.abs().powf(2.0 * self.alpha) * (1.0 + b * b)
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.gradient2(x));
    }

    /// `None` on the diagonal, where `U` is only once differentiable.
    fn hessian(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        let a = x[0] - x[1];
        let b = x[0] + x[1];
        if a == 0.0 {
            return None;
        }
        let p = 2.0 * self.alpha;
        let abs_a = a.abs();
        let uaa = p * (p - 1.0) * abs_a.powf(p - 2.0) * (1.0 + b * b);
        let uab = 2.0 * p * b * a.signum() * abs_a.powf(p - 1.0);
        let ubb = 2.0 * abs_a.powf(p);
        Some(DMatrix::from_row_slice(
            2,
            2,
            &[uaa + 2.0 * uab + ubb, -uaa + ubb, -uaa + ubb, uaa - 2.0 * uab + ubb],
        ))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaxRegion {
    /// `x₁ > |x₂|`
    R1,
    /// `x₂ > |x₁|`
    R2,
    /// `x₁ < −|x₂|`
    R3,
    /// `x₂ < −|x₁|`
    R4,
    /// `|x₁| = |x₂|`
    Diagonal,
}

pub fn max_region(x: &[f64; 2]) -> MaxRegion {
    let (a, b) = (x[0], x[1]);
    if a > b.abs() {
        MaxRegion::R1
    } else if b > a.abs() {
        MaxRegion::R2
    } else if a < -b.abs() {
        MaxRegion::R3
    } else if b < -a.abs() {
        MaxRegion::R4
    } else {
        MaxRegion::Diagonal
    }
}

/// `U(x) = max(|x₁|, |x₂|)`, differentiable off the diagonals.
///
/// On a diagonal the gradient is the limit from the adjacent first-coordinate
/// region: `(1, 0)` where `x₁ > 0` (the limit from R₁), `(−1, 0)` where
/// `x₁ < 0`, and zero at the origin.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MaxTarget;

impl Potential for MaxTarget {
    fn dim(&self) -> usize {
        2
    }

    fn value(&self, x: &[f64]) -> f64 {
        x[0].abs().max(x[1].abs())
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let g = match max_region(&[x[0], x[1]]) {
            MaxRegion::R1 => [1.0, 0.0],
            MaxRegion::R2 => [0.0, 1.0],
            MaxRegion::R3 => [-1.0, 0.0],
            MaxRegion::R4 => [0.0, -1.0],
            MaxRegion::Diagonal if x[0] > 0.0 => [1.0, 0.0],
            MaxRegion::Diagonal if x[0] < 0.0 => [-1.0, 0.0],
            MaxRegion::Diagonal => [0.0, 0.0],
        };
        out.copy_from_slice(&g);
    }

    fn hessian(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(2, 2))
    }

    /// Every partial derivative has modulus at most one.
    fn rate_bound(&self, _x: &[f64], _theta: &Velocity, _horizon: f64) -> Vec<f64> {
        vec![1.0, 1.0]
    }
}

/// `U(x) = (1 + ‖x‖²)^{α/2}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerLawTarget {
    alpha: f64,
    dim: usize,
}

impl PowerLawTarget {
    pub fn new(alpha: f64, dim: usize) -> Result<Self, TargetError> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(TargetError::InvalidParameter(format!(
                "power-law alpha must be positive, got {alpha}"
            )));
        }
        if dim == 0 {
            return Err(ModelError::ZeroDimension.into());
        }
        Ok(PowerLawTarget { alpha, dim })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    fn base(x: &[f64]) -> f64 {
        1.0 + x.iter().map(|v| v * v).sum::<f64>()
    }
}

impl Potential for PowerLawTarget {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        Self::base(x).powf(0.5 * self.alpha)
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let k = self.alpha * Self::base(x).powf(0.5 * self.alpha - 1.0);
        for (o, v) in out.iter_mut().zip(x) {
            *o = k * v;
        }
    }

    fn partial(&self, x: &[f64], i: usize) -> f64 {
        self.alpha * Self::base(x).powf(0.5 * self.alpha - 1.0) * x[i]
    }

    fn hessian(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        let q = Self::base(x);
        let a = self.alpha;
        let k1 = a * q.powf(0.5 * a - 1.0);
        let k2 = a * (a - 2.0) * q.powf(0.5 * a - 2.0);
        let d = self.dim;
        Some(DMatrix::from_fn(d, d, |i, j| {
            k2 * x[i] * x[j] + if i == j { k1 } else { 0.0 }
        }))
    }

    fn affine_gradient(&self) -> bool {
        self.alpha == 2.0
    }
}

/// Any of the built-in target families.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Gaussian(GaussianTarget),
    Ridge(RidgeTarget),
    Max(MaxTarget),
    PowerLaw(PowerLawTarget),
}

impl Target {
    pub fn family(&self) -> &'static str {
        match self {
            Target::Gaussian(_) => "gaussian",
            Target::Ridge(_) => "ridge",
            Target::Max(_) => "max",
            Target::PowerLaw(_) => "powerlaw",
        }
    }

    pub fn as_gaussian(&self) -> Option<&GaussianTarget> {
        match self {
            Target::Gaussian(g) => Some(g),
            _ => None,
        }
    }

    fn inner(&self) -> &dyn Potential {
        match self {
            Target::Gaussian(t) => t,
            Target::Ridge(t) => t,
            Target::Max(t) => t,
            Target::PowerLaw(t) => t,
        }
    }
}

impl Potential for Target {
    fn dim(&self) -> usize {
        self.inner().dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.inner().value(x)
    }
    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        self.inner().gradient_into(x, out)
    }
    fn partial(&self, x: &[f64], i: usize) -> f64 {
        self.inner().partial(x, i)
    }
    fn hessian(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        self.inner().hessian(x)
    }
    fn affine_gradient(&self) -> bool {
        self.inner().affine_gradient()
    }
    fn rate_bound(&self, x: &[f64], theta: &Velocity, horizon: f64) -> Vec<f64> {
        self.inner().rate_bound(x, theta, horizon)
    }
}

/// JSON target description, e.g.
/// `{"family": "gaussian", "precision": [6, 3, 3, 2]}` (row-major) or
/// `{"family": "ridge", "alpha": 0.75}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum TargetConfig {
    Gaussian {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dim: Option<usize>,
        precision: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        offset: Option<Vec<f64>>,
    },
    Ridge {
        alpha: f64,
    },
    Max,
    #[serde(rename = "powerlaw")]
    PowerLaw {
        alpha: f64,
        dim: usize,
    },
}

impl TargetConfig {
    pub fn build(&self) -> Result<Target, TargetError> {
        Ok(match self {
            TargetConfig::Gaussian { dim, precision, offset } => {
                let d = match dim {
                    Some(d) => *d,
                    None => {
                        let d = (precision.len() as f64).sqrt().round() as usize;
                        if d * d != precision.len() {
                            return Err(TargetError::InvalidParameter(format!(
                                "precision has {} entries, which is not a square number",
                                precision.len()
                            )));
                        }
                        d
                    }
                };
                Target::Gaussian(GaussianTarget::from_row_major(d, precision, offset.as_deref())?)
            }
            TargetConfig::Ridge { alpha } => Target::Ridge(RidgeTarget::new(*alpha)?),
            TargetConfig::Max => Target::Max(MaxTarget),
            TargetConfig::PowerLaw { alpha, dim } => Target::PowerLaw(PowerLawTarget::new(*alpha, *dim)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coupled() -> GaussianTarget {
        GaussianTarget::from_row_major(2, &[6.0, 3.0, 3.0, 2.0], None).unwrap()
    }

    fn state(x: &[f64], th: &[i8]) -> State {
        State::new(x.to_vec(), Velocity::from_signs(th).unwrap()).unwrap()
    }

    fn central_gradient<P: Potential>(p: &P, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += h;
                xm[i] -= h;
                (p.value(&xp) - p.value(&xm)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn rate_along_examples() {
        let std1 = GaussianTarget::standard(1);
        assert_eq!(std1.rate_along(&state(&[0.0], &[1]), 0).unwrap(), (0.0, 1.0));
        let (c, m) = coupled().rate_along(&state(&[-2.0, 1.0], &[1, -1]), 1).unwrap();
        assert_eq!((c, m), (4.0, -1.0));
        assert!(std1.rate_along(&state(&[0.0, 0.0], &[1, 1]), 0).is_err());
    }

    #[test]
    fn gaussian_rejects_bad_matrices() {
        assert!(matches!(
            GaussianTarget::from_row_major(2, &[1.0, 2.0, 2.0, 1.0], None),
            Err(TargetError::NotPositiveDefinite)
        ));
        assert!(matches!(
            GaussianTarget::from_row_major(2, &[1.0, 0.1, 0.0, 1.0], None),
            Err(TargetError::NotSymmetric { .. })
        ));
        assert!(matches!(
            GaussianTarget::new(DMatrix::zeros(2, 3), None),
            Err(TargetError::NotSquare { .. })
        ));
        assert!(GaussianTarget::from_row_major(2, &[1.0, 0.0, 0.0, 0.0], None).is_err());
    }

    #[test]
    fn gaussian_with_mean_has_gradient_zero_at_mean() {
        let t = GaussianTarget::with_mean(coupled().precision().clone(), &[1.0, -2.0]).unwrap();
        let g = t.gradient(&[1.0, -2.0]);
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn ridge_gradient_vanishes_on_diagonal() {
        let r = RidgeTarget::new(0.75).unwrap();
        assert_eq!(ridge_gradient(&r, &[1.0, 1.0]), [0.0, 0.0]);
        for t in [-1e6, -3.5, 0.0, 2.25, 1e9] {
            assert_eq!(ridge_gradient(&r, &[t, t]), [0.0, 0.0]);
        }
        let g = ridge_gradient(&r, &[1.0, 0.0]);
        let fd = central_gradient(&r, &[1.0, 0.0], 1e-6);
        for k in 0..2 {
            assert!((g[k] - fd[k]).abs() < 1e-5, "{g:?} vs {fd:?}");
        }
        assert!(RidgeTarget::new(0.5).is_err());
        assert!(RidgeTarget::new(1.0).is_err());
    }

    #[test]
    fn ridge_hessian_matches_finite_differences() {
        let r = RidgeTarget::new(0.8).unwrap();
        let x = [1.3, -0.4];
        let h = r.hessian(&x).unwrap();
        let eps = 1e-6;
        for j in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += eps;
            xm[j] -= eps;
            let gp = r.gradient(&xp);
            let gm = r.gradient(&xm);
            for i in 0..2 {
                let fd = (gp[i] - gm[i]) / (2.0 * eps);
                assert!((fd - h[(i, j)]).abs() < 1e-5 * h[(i, j)].abs().max(1.0));
            }
        }
        assert!(r.hessian(&[2.0, 2.0]).is_none());
    }

    #[test]
    fn max_region_examples() {
        assert_eq!(max_region(&[2.0, 0.5]), MaxRegion::R1);
        assert_eq!(max_region(&[0.0, 3.0]), MaxRegion::R2);
        assert_eq!(max_region(&[-3.0, 1.0]), MaxRegion::R3);
        assert_eq!(max_region(&[0.5, -3.0]), MaxRegion::R4);
        assert_eq!(max_region(&[1.0, 1.0]), MaxRegion::Diagonal);
        assert_eq!(max_region(&[-2.0, 2.0]), MaxRegion::Diagonal);
    }

    #[test]
    fn max_gradient_has_unit_sup_norm_off_origin() {
        for x in [[2.0, 0.5], [0.1, -3.0], [-5.0, 4.0], [1.0, 1.0], [-1.0, 1.0]] {
            let g = MaxTarget.gradient(&x);
            assert_eq!(g[0].abs().max(g[1].abs()), 1.0);
        }
        assert_eq!(MaxTarget.gradient(&[1.0, 1.0]), vec![1.0, 0.0]);
    }

    #[test]
    fn powerlaw_derivatives_match_finite_differences() {
        let p = PowerLawTarget::new(1.5, 3).unwrap();
        let x = [0.7, -1.2, 2.0];
        let g = p.gradient(&x);
        let fd = central_gradient(&p, &x, 1e-6);
        for i in 0..3 {
            assert!((g[i] - fd[i]).abs() < 1e-6);
        }
        assert!(p.hessian(&x).is_some());
        assert!(PowerLawTarget::new(2.0, 2).unwrap().affine_gradient());
        assert!(!p.affine_gradient());
        assert!(PowerLawTarget::new(0.0, 2).is_err());
    }

    #[test]
    fn gaussian_rate_bound_dominates_dense_samples() {
        let t = coupled();
        let s = state(&[-2.0, 1.0], &[1, -1]);
        let bound = t.rate_bound(&s.x, &s.theta, 6.0);
        for k in 0..=20 {
            let p = s.advanced(6.0 * k as f64 / 20.0);
            for i in 0..2 {
                let r = (p.theta.sign(i) * t.partial(&p.x, i)).max(0.0);
                assert!(r <= bound[i]);
            }
        }
        // rate of component 2 is (4 - t)_+, maximal at the start
        assert_eq!(bound[1], 4.0);
    }

    #[test]
    fn config_round_trip_and_build() {
        let cfg: TargetConfig = serde_json::from_str(r#"{"family":"gaussian","precision":[6,3,3,2]}"#).unwrap();
        assert_eq!(cfg.build().unwrap().as_gaussian().unwrap(), &coupled());
        let cfg: TargetConfig = serde_json::from_str(r#"{"family":"powerlaw","alpha":2,"dim":3}"#).unwrap();
        assert_eq!(cfg.build().unwrap().dim(), 3);
        let cfg: TargetConfig = serde_json::from_str(r#"{"family":"max"}"#).unwrap();
        assert_eq!(cfg.build().unwrap().family(), "max");
        assert!(serde_json::from_str::<TargetConfig>(r#"{"family":"ridge","alpha":0.7,"beta":1}"#).is_err());
        let bad: TargetConfig = serde_json::from_str(r#"{"family":"gaussian","precision":[1,2,3]}"#).unwrap();
        assert!(bad.build().is_err());
    }
}
