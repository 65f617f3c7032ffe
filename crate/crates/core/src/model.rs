//! State space, potentials and the switching-rate algebra.
//!
//! Component indices are zero-based throughout the library. File formats
//! (skeleton CSV, control JSON) use one-based indices; see [`crate::format`].

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("velocity component {index} is {value}, expected -1 or +1")]
    InvalidSign { index: usize, value: f64 },
    #[error("component index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("position coordinate {index} is not finite")]
    NonFinitePosition { index: usize },
    #[error("gradient component {index} is not finite (value {value})")]
    NonFiniteGradient { index: usize, value: f64 },
    #[error("invalid excess rate: {0}")]
    InvalidExcess(String),
    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),
}

/// A velocity in `{-1, +1}^d`, stored as `f64` signs so it can be used
/// directly in dot products with positions.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<i8>", into = "Vec<i8>")]
pub struct Velocity(Vec<SignBits>);

// f64 is not Eq/Hash; the sign is kept as a tiny wrapper with a known bit pattern.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
struct SignBits(i8);

impl SignBits {
    #[inline]
    fn get(self) -> f64 {
        self.0 as f64
    }
}

impl Velocity {
    pub fn new(signs: &[f64]) -> Result<Self, ModelError> {
        if signs.is_empty() {
            return Err(ModelError::ZeroDimension);
        }
        signs
            .iter()
            .enumerate()
            .map(|(index, &value)| {
                if value == 1.0 {
                    Ok(SignBits(1))
                } else if value == -1.0 {
                    Ok(SignBits(-1))
                } else {
                    Err(ModelError::InvalidSign { index, value })
                }
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Velocity)
    }

    pub fn from_signs(signs: &[i8]) -> Result<Self, ModelError> {
        let as_f64: Vec<f64> = signs.iter().map(|&s| s as f64).collect();
        Self::new(&as_f64)
    }

    /// The velocity with every component equal to `sign` (which must be ±1).
    pub fn uniform(dim: usize, sign: f64) -> Result<Self, ModelError> {
        Self::new(&vec![sign; dim])
    }

    /// All `2^d` velocities in lexicographic order of the sign bits
    /// (bit `i` set means component `i` is `-1`).
    pub fn enumerate(dim: usize) -> impl Iterator<Item = Velocity> {
        assert!((1..63).contains(&dim), "velocity enumeration supports 1 <= d < 63");
        (0u64..(1u64 << dim)).map(move |bits| {
            Velocity(
                (0..dim)
                    .map(|i| SignBits(if bits >> i & 1 == 1 { -1 } else { 1 }))
                    .collect(),
            )
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn sign(&self, i: usize) -> f64 {
        self.0[i].get()
    }

    pub fn signs(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        self.0.iter().map(|s| s.get())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.signs().collect()
    }

    pub fn to_i8(&self) -> Vec<i8> {
        self.0.iter().map(|s| s.0).collect()
    }

    pub fn negated(&self) -> Velocity {
        Velocity(self.0.iter().map(|s| SignBits(-s.0)).collect())
    }

    /// `⟨θ, v⟩`.
    pub fn dot(&self, v: &[f64]) -> f64 {
        debug_assert_eq!(v.len(), self.dim());
        self.signs().zip(v).map(|(s, x)| s * x).sum()
    }

    pub fn flip(&self, i: usize) -> Result<Velocity, ModelError> {
        let mut out = self.clone();
        out.flip_in_place(i)?;
        Ok(out)
    }

    pub fn flip_in_place(&mut self, i: usize) -> Result<(), ModelError> {
        let dim = self.dim();
        let s = self.0.get_mut(i).ok_or(ModelError::IndexOutOfRange { index: i, dim })?;
        s.0 = -s.0;
        Ok(())
    }

    /// Indices where `self` and `other` differ.
    pub fn differing(&self, other: &Velocity) -> Vec<usize> {
        self.0
            .iter()
            .zip(&other.0)
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(i, _)| i)
            .collect()
    }
}

impl TryFrom<Vec<i8>> for Velocity {
    type Error = ModelError;

    fn try_from(value: Vec<i8>) -> Result<Self, Self::Error> {
        Velocity::from_signs(&value)
    }
}

impl From<Velocity> for Vec<i8> {
    fn from(v: Velocity) -> Self {
        v.to_i8()
    }
}

impl fmt::Debug for Velocity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Velocity(")?;
        for (k, s) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", if s.0 > 0 { "+1" } else { "-1" })?;
        }
        write!(f, ")")
    }
}

/// `F_i θ`: negate component `i`.
pub fn flip(theta: &Velocity, i: usize) -> Result<Velocity, ModelError> {
    theta.flip(i)
}

/// `F_I θ`: apply [`flip`] left to right for every index in `indices`.
pub fn flip_seq(theta: &Velocity, indices: &[usize]) -> Result<Velocity, ModelError> {
    let mut out = theta.clone();
    for &i in indices {
        out.flip_in_place(i)?;
    }
    Ok(out)
}

/// A point `(x, θ)` of the state space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub x: Vec<f64>,
    pub theta: Velocity,
}

impl State {
    pub fn new(x: Vec<f64>, theta: Velocity) -> Result<Self, ModelError> {
        if x.len() != theta.dim() {
            return Err(ModelError::DimensionMismatch {
                expected: theta.dim(),
                found: x.len(),
            });
        }
        if let Some(index) = x.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFinitePosition { index });
        }
        Ok(State { x, theta })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// Position after moving for `t` along the current velocity.
    pub fn advanced(&self, t: f64) -> State {
        State {
            x: self.x.iter().zip(self.theta.signs()).map(|(x, s)| x + s * t).collect(),
            theta: self.theta.clone(),
        }
    }
}

/// A potential `U` with target density proportional to `exp(-U)`.
pub trait Potential: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    fn gradient_into(&self, x: &[f64], out: &mut [f64]);

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.gradient_into(x, &mut g);
        g
    }

    /// `∂_i U(x)`. Override when a single partial is cheaper than the full gradient.
    fn partial(&self, x: &[f64], i: usize) -> f64 {
        self.gradient(x)[i]
    }

    fn hessian(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    /// True when `∇U(x) = Ax + b` exactly, so rates along rays are affine
    /// before the positive part.
    fn affine_gradient(&self) -> bool {
        false
    }

    /// Per-component upper bounds on the canonical rates along the segment
    /// `{x + sθ : s ∈ [0, horizon]}`.
    fn rate_bound(&self, x: &[f64], theta: &Velocity, horizon: f64) -> Vec<f64> {
        sampled_rate_bound(self, x, theta, horizon)
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        -self.value(x)
    }
}

pub const RATE_BOUND_SAMPLES: usize = 32;
pub const RATE_BOUND_SAFETY: f64 = 1.2;

/// Generic rate bound: evaluate the canonical rates at
/// [`RATE_BOUND_SAMPLES`] evenly spaced points, inflate the maximum by
/// [`RATE_BOUND_SAFETY`] and, where a Hessian is available, add a Lipschitz
/// margin of `|(Hθ)_i|` times the sample spacing.
pub fn sampled_rate_bound<P: Potential + ?Sized>(pot: &P, x: &[f64], theta: &Velocity, horizon: f64) -> Vec<f64> {
    let d = pot.dim();
    let spacing = horizon / (RATE_BOUND_SAMPLES - 1) as f64;
    let mut peak = vec![0.0f64; d];
    let mut slope = vec![0.0f64; d];
    let mut point = vec![0.0; d];
    let mut grad = vec![0.0; d];
    for k in 0..RATE_BOUND_SAMPLES {
        let s = spacing * k as f64;
        for (j, p) in point.iter_mut().enumerate() {
            *p = x[j] + theta.sign(j) * s;
        }
        pot.gradient_into(&point, &mut grad);
        for i in 0..d {
            peak[i] = peak[i].max((theta.sign(i) * grad[i]).max(0.0));
        }
        if let Some(h) = pot.hessian(&point) {
            for i in 0..d {
                let hv: f64 = (0..d).map(|j| h[(i, j)] * theta.sign(j)).sum();
                if hv.is_finite() {
                    slope[i] = slope[i].max(hv.abs());
                }
            }
        }
    }
    peak.iter()
        .zip(&slope)
        .map(|(p, l)| p * RATE_BOUND_SAFETY + l * spacing)
        .collect()
}

/// Excess switching intensity `γ`, required to satisfy `γ_i(x, F_iθ) = γ_i(x, θ)`.
pub trait ExcessRate: Send + Sync {
    fn gamma(&self, x: &[f64], theta: &Velocity, i: usize) -> f64;

    /// Uniform upper bound `γ̄ ≥ γ_i`.
    fn gamma_bar(&self) -> f64;

    /// `Some(γ)` when the excess is the same constant for every state and component.
    fn constant(&self) -> Option<f64> {
        None
    }
}

/// Constant excess rate; `ConstantExcess::CANONICAL` is `γ ≡ 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantExcess(f64);

impl ConstantExcess {
    pub const CANONICAL: ConstantExcess = ConstantExcess(0.0);

    pub fn new(gamma: f64) -> Result<Self, ModelError> {
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(ModelError::InvalidExcess(format!(
                "constant excess must be finite and nonnegative, got {gamma}"
            )));
        }
        Ok(ConstantExcess(gamma))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

impl Default for ConstantExcess {
    fn default() -> Self {
        Self::CANONICAL
    }
}

impl ExcessRate for ConstantExcess {
    #[inline]
    fn gamma(&self, _x: &[f64], _theta: &Velocity, _i: usize) -> f64 {
        self.0
    }

    fn gamma_bar(&self) -> f64 {
        self.0
    }

    fn constant(&self) -> Option<f64> {
        Some(self.0)
    }
}

fn check_state<P: Potential + ?Sized>(pot: &P, s: &State) -> Result<(), ModelError> {
    if s.dim() != pot.dim() {
        return Err(ModelError::DimensionMismatch {
            expected: pot.dim(),
            found: s.dim(),
        });
    }
    Ok(())
}

/// `(θ_i ∂_i U(x))_+`.
pub fn canonical_rate<P: Potential + ?Sized>(pot: &P, s: &State, i: usize) -> Result<f64, ModelError> {
    check_state(pot, s)?;
    if i >= s.dim() {
        return Err(ModelError::IndexOutOfRange { index: i, dim: s.dim() });
    }
    let g = pot.partial(&s.x, i);
    if !g.is_finite() {
        return Err(ModelError::NonFiniteGradient { index: i, value: g });
    }
    Ok((s.theta.sign(i) * g).max(0.0))
}

/// `λ_i(x, θ) = (θ_i ∂_i U(x))_+ + γ_i(x, θ)` for every component.
pub fn rate_vector<P, E>(pot: &P, ex: &E, s: &State) -> Result<Vec<f64>, ModelError>
where
    P: Potential + ?Sized,
    E: ExcessRate + ?Sized,
{
    check_state(pot, s)?;
    let g = pot.gradient(&s.x);
    g.iter()
        .enumerate()
        .map(|(i, &gi)| {
            if !gi.is_finite() {
                return Err(ModelError::NonFiniteGradient { index: i, value: gi });
            }
            Ok((s.theta.sign(i) * gi).max(0.0) + ex.gamma(&s.x, &s.theta, i))
        })
        .collect()
}

/// Single-component rate without validation, for the simulation hot loops.
#[inline]
pub(crate) fn rate_component<P, E>(pot: &P, ex: &E, x: &[f64], theta: &Velocity, i: usize) -> f64
where
    P: Potential + ?Sized,
    E: ExcessRate + ?Sized,
{
    (theta.sign(i) * pot.partial(x, i)).max(0.0) + ex.gamma(x, theta, i)
}

/// `exp(-U(x))`, unnormalised. Overflows to infinity for very negative `U`;
/// use [`log_density`] in that regime.
pub fn unnormalized_density<P: Potential + ?Sized>(pot: &P, x: &[f64]) -> f64 {
    pot.log_density(x).exp()
}

pub fn log_density<P: Potential + ?Sized>(pot: &P, x: &[f64]) -> f64 {
    pot.log_density(x)
}

/// One velocity switch of a simulated trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonEvent {
    pub time: f64,
    pub index: usize,
    pub position: Vec<f64>,
    pub velocity: Velocity,
}

/// Skeleton points of a zigzag trajectory on `[0, horizon]`. Between events
/// the position moves linearly with the velocity set at the previous event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    init: State,
    events: Vec<SkeletonEvent>,
    horizon: f64,
    truncated: bool,
}

/// Per-event replay tolerance (scaled by event count and position magnitude).
pub const SKELETON_REPLAY_TOL: f64 = 1e-9;

impl Skeleton {
    /// Builds a skeleton and checks all invariants.
    pub fn new(init: State, events: Vec<SkeletonEvent>, horizon: f64, truncated: bool) -> Result<Self, ModelError> {
        let skel = Skeleton {
            init,
            events,
            horizon,
            truncated,
        };
        skel.validate()?;
        Ok(skel)
    }

    pub(crate) fn from_parts_unchecked(init: State, events: Vec<SkeletonEvent>, horizon: f64, truncated: bool) -> Self {
        Skeleton {
            init,
            events,
            horizon,
            truncated,
        }
    }

    pub fn init(&self) -> &State {
        &self.init
    }

    pub fn events(&self) -> &[SkeletonEvent] {
        &self.events
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Set when the event cap was hit before the requested horizon; `horizon`
    /// is then the time of the last event.
    pub fn is_truncated(&self) -> bool {
        self.truncated
    }

    pub fn dim(&self) -> usize {
        self.init.dim()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidSkeleton(msg));
        if !(self.horizon.is_finite() && self.horizon >= 0.0) {
            return bad(format!("horizon {} is not a finite nonnegative time", self.horizon));
        }
        let d = self.dim();
        let mut t_prev = 0.0;
        let mut theta = self.init.theta.clone();
        let mut replay = self.init.x.clone();
        for (k, ev) in self.events.iter().enumerate() {
            let n = k + 1;
            if ev.position.len() != d || ev.velocity.dim() != d {
                return bad(format!("event {n} has wrong dimension"));
            }
            if !(ev.time > t_prev) {
                return bad(format!("event {n} time {} does not exceed {}", ev.time, t_prev));
            }
            if ev.time > self.horizon {
                return bad(format!("event {n} time {} beyond horizon {}", ev.time, self.horizon));
            }
            if theta.differing(&ev.velocity) != [ev.index] {
                return bad(format!(
                    "event {n} velocity does not differ from the previous one in exactly index {}",
                    ev.index
                ));
            }
            let dt = ev.time - t_prev;
            let scale = ev.position.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for j in 0..d {
                replay[j] += theta.sign(j) * dt;
                if (replay[j] - ev.position[j]).abs() > SKELETON_REPLAY_TOL * n as f64 * scale {
                    return bad(format!(
                        "event {n} position component {j} is {} but replay gives {}",
                        ev.position[j], replay[j]
                    ));
                }
            }
            theta = ev.velocity.clone();
            t_prev = ev.time;
        }
        Ok(())
    }

    /// Position and velocity at the end of the simulated interval.
    pub fn final_state(&self) -> State {
        let (t0, x0, th) = match self.events.last() {
            Some(ev) => (ev.time, &ev.position, &ev.velocity),
            None => (0.0, &self.init.x, &self.init.theta),
        };
        State {
            x: x0.clone(),
            theta: th.clone(),
        }
        .advanced(self.horizon - t0)
    }
}
