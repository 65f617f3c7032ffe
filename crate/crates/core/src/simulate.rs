//! Event-driven generation of zigzag skeletons.
//!
//! Two engines draw the time to the next velocity switch:
//!
//! * **exact**: for potentials with an affine gradient every rate along the
//!   current ray is `(c + m t)_+ + γ`, whose integrated hazard can be inverted
//!   in closed form ([`first_arrival_affine`]);
//! * **thinning**: for general potentials, a homogeneous Poisson clock of
//!   intensity `λ̄·d` proposes switches that are accepted with probability
//!   `λ_i / λ̄`, where `λ̄` comes from [`Potential::rate_bound`] on windows
//!   of fixed length.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{rate_component, ExcessRate, ModelError, Potential, Skeleton, SkeletonEvent, State, Velocity};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("target gradient not affine; the exact engine needs an affine gradient")]
    NotAffine,
    #[error("the exact engine needs a constant excess rate")]
    NonConstantExcess,
    #[error("non-finite rate coefficients: c = {c}, m = {m}, E = {e}")]
    NonFinite { c: f64, m: f64, e: f64 },
    #[error(
        "rate bound violated in thinning window starting at t = {window_start} (length {window_len}): \
         component {index} has rate {rate} above bound {bound}"
    )]
    BoundViolation {
        window_start: f64,
        window_len: f64,
        index: usize,
        rate: f64,
        bound: f64,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exact,
    Thinning,
    /// Exact when the potential reports an affine gradient and the excess
    /// rate is constant, thinning otherwise.
    #[default]
    Auto,
}

impl std::str::FromStr for Method {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(Method::Exact),
            "thinning" => Ok(Method::Thinning),
            "auto" => Ok(Method::Auto),
            other => Err(SimError::InvalidConfig(format!(
                "unknown method {other:?}, expected exact|thinning|auto"
            ))),
        }
    }
}

pub const DEFAULT_THINNING_WINDOW: f64 = 1.0;
pub const DEFAULT_MAX_EVENTS: usize = 10_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SimConfigRaw")]
pub struct SimConfig {
    pub horizon: f64,
    pub max_events: usize,
    pub method: Method,
    pub thinning_window: f64,
    pub seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SimConfigRaw {
    horizon: f64,
    #[serde(default = "default_max_events")]
    max_events: usize,
    #[serde(default)]
    method: Method,
    #[serde(default = "default_window")]
    thinning_window: f64,
    seed: u64,
}

fn default_max_events() -> usize {
    DEFAULT_MAX_EVENTS
}

fn default_window() -> f64 {
    DEFAULT_THINNING_WINDOW
}

impl TryFrom<SimConfigRaw> for SimConfig {
    type Error = SimError;

    fn try_from(r: SimConfigRaw) -> Result<Self, Self::Error> {
        let cfg = SimConfig {
            horizon: r.horizon,
            max_events: r.max_events,
            method: r.method,
            thinning_window: r.thinning_window,
            seed: r.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl SimConfig {
    pub fn new(horizon: f64, seed: u64) -> Result<Self, SimError> {
        let cfg = SimConfig {
            horizon,
            max_events: DEFAULT_MAX_EVENTS,
            method: Method::Auto,
            thinning_window: DEFAULT_THINNING_WINDOW,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn with_window(mut self, window: f64) -> Result<Self, SimError> {
        self.thinning_window = window;
        self.validate()?;
        Ok(self)
    }

    pub fn with_max_events(mut self, max_events: usize) -> Result<Self, SimError> {
        self.max_events = max_events;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(SimError::InvalidConfig(format!(
                "horizon must be positive and finite, got {}",
                self.horizon
            )));
        }
        if !(self.thinning_window > 0.0 && self.thinning_window.is_finite()) {
            return Err(SimError::InvalidConfig(format!(
                "thinning window must be positive and finite, got {}",
                self.thinning_window
            )));
        }
        if self.max_events == 0 {
            return Err(SimError::InvalidConfig("max_events must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of one next-switch draw from a skeleton point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EventDraw {
    Switch {
        dt: f64,
        index: usize,
    },
    /// No switch occurs (ever, or within the requested time limit).
    NoEvent,
}

/// Smallest `t` with `∫₀ᵗ (c + m s)_+ ds = e`, or `+∞` when the integrated
/// rate never reaches `e`.
pub fn first_arrival_affine(c: f64, m: f64, e: f64) -> Result<f64, SimError> {
    if !(c.is_finite() && m.is_finite() && e.is_finite()) || e < 0.0 {
        return Err(SimError::NonFinite { c, m, e });
    }
    if m == 0.0 {
        return Ok(if c > 0.0 { e / c } else { f64::INFINITY });
    }
    if m > 0.0 {
        if c >= 0.0 {
            // c t + m t²/2 = e, written to avoid cancellation.
            Ok(2.0 * e / (c + (c * c + 2.0 * m * e).sqrt()))
        } else {
            Ok(-c / m + (2.0 * e / m).sqrt())
        }
    } else {
        if c <= 0.0 {
            return Ok(f64::INFINITY);
        }
        // Rate hits zero at c/|m| after accumulating c²/(2|m|).
        let disc = c * c + 2.0 * m * e;
        if disc < 0.0 {
            Ok(f64::INFINITY)
        } else {
            Ok(2.0 * e / (c + disc.sqrt()))
        }
    }
}

fn argmin_draw(times: impl Iterator<Item = f64>) -> EventDraw {
    let mut best = EventDraw::NoEvent;
    let mut best_t = f64::INFINITY;
    for (i, t) in times.enumerate() {
        // strict comparison: ties go to the lowest index
        if t < best_t {
            best_t = t;
            best = EventDraw::Switch { dt: t, index: i };
        }
    }
    best
}

/// Exact engine state for one trajectory; the Hessian of an affine-gradient
/// potential is constant so it is taken once.
struct ExactEngine<'a, P: ?Sized> {
    pot: &'a P,
    hessian: DMatrix<f64>,
    gamma: f64,
    grad: Vec<f64>,
}

impl<'a, P: Potential + ?Sized> ExactEngine<'a, P> {
    fn new<E: ExcessRate + ?Sized>(pot: &'a P, ex: &E, x: &[f64]) -> Result<Self, SimError> {
        if !pot.affine_gradient() {
            return Err(SimError::NotAffine);
        }
        let gamma = ex.constant().ok_or(SimError::NonConstantExcess)?;
        let hessian = pot.hessian(x).ok_or(SimError::NotAffine)?;
        Ok(ExactEngine {
            pot,
            hessian,
            gamma,
            grad: vec![0.0; pot.dim()],
        })
    }

    fn draw<R: Rng + ?Sized>(&mut self, x: &[f64], theta: &Velocity, rng: &mut R) -> Result<EventDraw, SimError> {
        let d = x.len();
        self.pot.gradient_into(x, &mut self.grad);
        let th = DVector::from_iterator(d, theta.signs());
        let slope = &self.hessian * th;
        let mut times = Vec::with_capacity(d);
        for i in 0..d {
            let s = theta.sign(i);
            let e: f64 = rng.sample(Exp1);
            let mut t = first_arrival_affine(s * self.grad[i], s * slope[i], e)?;
            if self.gamma > 0.0 {
                // superposition: the excess clock runs independently
                let e2: f64 = rng.sample(Exp1);
                t = t.min(e2 / self.gamma);
            }
            times.push(t);
        }
        Ok(argmin_draw(times.into_iter()))
    }
}

/// One exact draw of the next switch from `s`.
///
/// Draws one unit exponential per component (two when `γ > 0`), inverts the
/// affine integrated rate and returns the argmin.
pub fn next_event_exact<P, E, R>(pot: &P, ex: &E, s: &State, rng: &mut R) -> Result<EventDraw, SimError>
where
    P: Potential + ?Sized,
    E: ExcessRate + ?Sized,
    R: Rng + ?Sized,
{
    check_dim(pot, s)?;
    ExactEngine::new(pot, ex, &s.x)?.draw(&s.x, &s.theta, rng)
}

/// Bound violations are reported only above this relative slack, so that an
/// exact bound evaluated at a window endpoint is not flagged by rounding.
const BOUND_SLACK: f64 = 1e-9;

/// Thinning draw of the next switch from `s`, giving up after `t_max`.
///
/// Windows of length `window` are processed in turn. On each, `λ̄` is the
/// maximum of the potential's rate bound over components plus `γ̄`, and
/// proposals arrive at rate `λ̄·d` with a uniformly chosen component.
pub fn next_event_thinning<P, E, R>(
    pot: &P,
    ex: &E,
    s: &State,
    window: f64,
    t_max: f64,
    rng: &mut R,
) -> Result<EventDraw, SimError>
where
    P: Potential + ?Sized,
    E: ExcessRate + ?Sized,
    R: Rng + ?Sized,
{
    check_dim(pot, s)?;
    if !(window > 0.0 && window.is_finite()) {
        return Err(SimError::InvalidConfig(format!(
            "thinning window must be positive, got {window}"
        )));
    }
    thinning_draw(pot, ex, &s.x, &s.theta, window, t_max, rng, &mut vec![0.0; s.dim()])
}

#[allow(clippy::too_many_arguments)]
fn thinning_draw<P, E, R>(
    pot: &P,
    ex: &E,
    x: &[f64],
    theta: &Velocity,
    window: f64,
    t_max: f64,
    rng: &mut R,
    scratch: &mut [f64],
) -> Result<EventDraw, SimError>
where
    P: Potential + ?Sized,
    E: ExcessRate + ?Sized,
    R: Rng + ?Sized,
{
    let d = x.len();
    let gamma_bar = ex.gamma_bar();
    let mut window_start = 0.0;
    while window_start < t_max {
        for (j, p) in scratch.iter_mut().enumerate() {
            *p = x[j] + theta.sign(j) * window_start;
        }
        let bound = pot.rate_bound(scratch, theta, window);
        let lambda_bar = bound.iter().fold(0.0f64, |a, &b| a.max(b)) + gamma_bar;
        if !lambda_bar.is_finite() {
            return Err(SimError::BoundViolation {
                window_start,
                window_len: window,
                index: 0,
                rate: f64::NAN,
                bound: lambda_bar,
            });
        }
        if lambda_bar > 0.0 {
            let total = lambda_bar * d as f64;
            let mut s = 0.0;
            loop {
                let e: f64 = rng.sample(Exp1);
                s += e / total;
                if s > window {
                    break;
                }
                let t = window_start + s;
                if t > t_max {
                    return Ok(EventDraw::NoEvent);
                }
                let i = rng.random_range(0..d);
                for (j, p) in scratch.iter_mut().enumerate() {
                    *p = x[j] + theta.sign(j) * t;
                }
                let rate = rate_component(pot, ex, scratch, theta, i);
                if !(rate <= lambda_bar * (1.0 + BOUND_SLACK)) {
                    return Err(SimError::BoundViolation {
                        window_start,
                        window_len: window,
                        index: i,
                        rate,
                        bound: lambda_bar,
                    });
                }
                let u: f64 = rng.random();
                if u * lambda_bar < rate {
                    return Ok(EventDraw::Switch { dt: t, index: i });
                }
            }
        }
        window_start += window;
    }
    Ok(EventDraw::NoEvent)
}

fn check_dim<P: Potential + ?Sized>(pot: &P, s: &State) -> Result<(), SimError> {
    if pot.dim() != s.dim() {
        return Err(ModelError::DimensionMismatch {
            expected: pot.dim(),
            found: s.dim(),
        }
        .into());
    }
    Ok(())
}

/// Resolves [`Method::Auto`] for a potential/excess pair.
pub fn resolve_method<P, E>(method: Method, pot: &P, ex: &E) -> Method
where
    P: Potential + ?Sized,
    E: ExcessRate + ?Sized,
{
    match method {
        Method::Auto if pot.affine_gradient() && ex.constant().is_some() => Method::Exact,
        Method::Auto => Method::Thinning,
        m => m,
    }
}

/// Simulates a skeleton from `init` with a ChaCha8 generator seeded from
/// `cfg.seed`. Identical inputs give identical skeletons.
pub fn simulate_skeleton<P, E>(pot: &P, ex: &E, init: &State, cfg: &SimConfig) -> Result<Skeleton, SimError>
where
    P: Potential + ?Sized,
    E: ExcessRate + ?Sized,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    simulate_skeleton_with_rng(pot, ex, init, cfg, &mut rng)
}

pub fn simulate_skeleton_with_rng<P, E, R>(
    pot: &P,
    ex: &E,
    init: &State,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<Skeleton, SimError>
where
    P: Potential + ?Sized,
    E: ExcessRate + ?Sized,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    check_dim(pot, init)?;
    let method = resolve_method(cfg.method, pot, ex);
    let mut exact = match method {
        Method::Exact => Some(ExactEngine::new(pot, ex, &init.x)?),
        _ => None,
    };
    let mut scratch = vec![0.0; init.dim()];

    let mut t = 0.0;
    let mut x = init.x.clone();
    let mut theta = init.theta.clone();
    let mut events = Vec::new();
    while events.len() < cfg.max_events {
        let remaining = cfg.horizon - t;
        let draw = match exact.as_mut() {
            Some(engine) => engine.draw(&x, &theta, rng)?,
            None => thinning_draw(pot, ex, &x, &theta, cfg.thinning_window, remaining, rng, &mut scratch)?,
        };
        let (dt, index) = match draw {
            EventDraw::Switch { dt, index } if dt <= remaining => (dt, index),
            _ => break,
        };
        t += dt;
        for (j, xj) in x.iter_mut().enumerate() {
            *xj += theta.sign(j) * dt;
        }
        theta.flip_in_place(index)?;
        events.push(SkeletonEvent {
            time: t,
            index,
            position: x.clone(),
            velocity: theta.clone(),
        });
    }
    let truncated = events.len() >= cfg.max_events;
    let horizon = if truncated { t } else { cfg.horizon };
    Ok(Skeleton::from_parts_unchecked(init.clone(), events, horizon, truncated))
}

// Gauss–Legendre nodes and weights of order 8 on [-1, 1].
#[allow(clippy::excessive_precision)]
const GL8_NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
#[allow(clippy::excessive_precision)]
const GL8_WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

impl Skeleton {
    /// Index of the segment containing `t`: `None` for the initial segment,
    /// otherwise the last event with time `≤ t` (right-continuous).
    fn segment_at(&self, t: f64) -> Option<usize> {
        let k = self.events().partition_point(|ev| ev.time <= t);
        k.checked_sub(1)
    }

    fn segment_start(&self, seg: Option<usize>) -> (f64, &[f64], &Velocity) {
        match seg {
            None => (0.0, &self.init().x, &self.init().theta),
            Some(k) => {
                let ev = &self.events()[k];
                (ev.time, &ev.position, &ev.velocity)
            }
        }
    }

    /// `(X_t, Θ_t)`; at an event time the post-switch velocity is returned.
    pub fn position_at(&self, t: f64) -> Result<State, SimError> {
        if !(t >= 0.0 && t <= self.horizon()) {
            return Err(SimError::InvalidConfig(format!(
                "time {t} outside [0, {}]",
                self.horizon()
            )));
        }
        let (t0, x0, th) = self.segment_start(self.segment_at(t));
        Ok(State {
            x: x0.iter().zip(th.signs()).map(|(x, s)| x + s * (t - t0)).collect(),
            theta: th.clone(),
        })
    }

    /// `∫_a^b g(X_s, Θ_s) ds`, using order-8 Gauss–Legendre on each linear
    /// piece (exact for integrands polynomial of degree ≤ 15 in position).
    pub fn integrate_window<G>(&self, g: G, a: f64, b: f64) -> Result<f64, SimError>
    where
        G: Fn(&[f64], &Velocity) -> f64,
    {
        if !(0.0 <= a && a <= b && b <= self.horizon()) {
            return Err(SimError::InvalidConfig(format!(
                "integration window [{a}, {b}] outside [0, {}]",
                self.horizon()
            )));
        }
        let mut point = vec![0.0; self.dim()];
        let mut total = 0.0;
        let mut seg = self.segment_at(a);
        loop {
            let (t0, x0, th) = self.segment_start(seg);
            let next_idx = seg.map_or(0, |k| k + 1);
            let seg_end = self.events().get(next_idx).map_or(f64::INFINITY, |ev| ev.time);
            let lo = a.max(t0);
            let hi = b.min(seg_end);
            if hi > lo {
                let half = 0.5 * (hi - lo);
                let mid = 0.5 * (hi + lo);
                let mut acc = 0.0;
                for (node, w) in GL8_NODES.iter().zip(GL8_WEIGHTS) {
                    for sgn in [-1.0, 1.0] {
                        let s = mid + sgn * node * half - t0;
                        for (j, p) in point.iter_mut().enumerate() {
                            *p = x0[j] + th.sign(j) * s;
                        }
                        acc += w * g(&point, th);
                    }
                }
                total += acc * half;
            }
            if seg_end >= b {
                break;
            }
            seg = Some(next_idx);
        }
        Ok(total)
    }

    /// `(1/t_end) ∫₀^{t_end} g(X_s, Θ_s) ds`.
    pub fn integrate_along<G>(&self, g: G, t_end: f64) -> Result<f64, SimError>
    where
        G: Fn(&[f64], &Velocity) -> f64,
    {
        if !(t_end > 0.0) {
            return Err(SimError::InvalidConfig(format!("t_end must be positive, got {t_end}")));
        }
        Ok(self.integrate_window(g, 0.0, t_end)? / t_end)
    }
}

pub fn position_at(skel: &Skeleton, t: f64) -> Result<State, SimError> {
    skel.position_at(t)
}

pub fn integrate_along<G>(skel: &Skeleton, g: G, t_end: f64) -> Result<f64, SimError>
where
    G: Fn(&[f64], &Velocity) -> f64,
{
    skel.integrate_along(g, t_end)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ConstantExcess;
    use crate::targets::{GaussianTarget, MaxTarget, RidgeTarget};

    fn vel(s: &[i8]) -> Velocity {
        Velocity::from_signs(s).unwrap()
    }

    fn state(x: &[f64], th: &[i8]) -> State {
        State::new(x.to_vec(), vel(th)).unwrap()
    }

    /// Root of the trapezoid-integrated hazard by bisection; independent of
    /// the closed form.
    fn quadrature_arrival(c: f64, m: f64, e: f64) -> f64 {
        let hazard = |t: f64| {
            let n = 20_000;
            let h = t / n as f64;
            (0..=n)
                .map(|k| {
                    let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                    w * (c + m * h * k as f64).max(0.0)
                })
                .sum::<f64>()
                * h
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        while hazard(hi) < e {
            hi *= 2.0;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if hazard(mid) < e {
                lo = mid
            } else {
                hi = mid
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn first_arrival_examples() {
        assert!((quadrature_arrival(0.0, 1.0, 2.0) - 2.0).abs() < 1e-6);
        assert!((quadrature_arrival(-3.0, 1.0, 2.0) - 5.0).abs() < 1e-6);
        assert_eq!(first_arrival_affine(0.0, 1.0, 2.0).unwrap(), 2.0);
        assert_eq!(first_arrival_affine(-3.0, 1.0, 2.0).unwrap(), 5.0);
        assert_eq!(first_arrival_affine(-1.0, 0.0, 0.7).unwrap(), f64::INFINITY);
        assert_eq!(first_arrival_affine(-1.0, 0.0, 1e-9).unwrap(), f64::INFINITY);
        assert!(first_arrival_affine(f64::NAN, 1.0, 1.0).is_err());
    }

    #[test]
    fn first_arrival_matches_quadrature_on_all_branches() {
        // c>0,m>0 / c<0,m>0 / c>0,m=0 / c>0,m<0 reachable
        for &(c, m, e) in &[
            (1.5, 0.7, 0.9),
            (-2.0, 3.0, 1.3),
            (2.0, 0.0, 0.5),
            (4.0, -1.0, 2.0),
            (4.0, -1.0, 7.9),
        ] {
            let exact = first_arrival_affine(c, m, e).unwrap();
            let oracle = quadrature_arrival(c, m, e);
            assert!((exact - oracle).abs() < 1e-6, "({c},{m},{e}): {exact} vs {oracle}");
        }
        // mass c²/(2|m|) = 8 is below e
        assert_eq!(first_arrival_affine(4.0, -1.0, 8.5).unwrap(), f64::INFINITY);
        assert_eq!(first_arrival_affine(-1.0, -1.0, 0.1).unwrap(), f64::INFINITY);
    }

    /// RNG whose exponential draws are forced: Exp1 via ziggurat is hard to
    /// pin, so instead check the engine by matching inverse-CDF on a seeded
    /// stream of the same draws.
    #[test]
    fn exact_draw_is_first_arrival_of_first_exponential() {
        let tgt = GaussianTarget::standard(1);
        let s = state(&[0.0], &[1]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut shadow = ChaCha8Rng::seed_from_u64(5);
        let draw = next_event_exact(&tgt, &ConstantExcess::CANONICAL, &s, &mut rng).unwrap();
        let e: f64 = shadow.sample(Exp1);
        // rate t_+ : dt = sqrt(2E); E = 2 would give dt = 2
        assert_eq!(
            draw,
            EventDraw::Switch {
                dt: (2.0 * e).sqrt(),
                index: 0
            }
        );
        assert_eq!(first_arrival_affine(0.0, 1.0, 2.0).unwrap(), 2.0);
    }

    #[test]
    fn exact_draw_far_in_negative_orthant_waits_ten() {
        let tgt = GaussianTarget::standard(2);
        let s = state(&[-10.0, -10.0], &[1, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            match next_event_exact(&tgt, &ConstantExcess::CANONICAL, &s, &mut rng).unwrap() {
                EventDraw::Switch { dt, .. } => assert!(dt >= 10.0),
                EventDraw::NoEvent => panic!("Gaussian rates eventually become positive"),
            }
        }
    }

    #[test]
    fn exact_engine_rejects_ridge() {
        let r = RidgeTarget::new(0.75).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = next_event_exact(&r, &ConstantExcess::CANONICAL, &state(&[0.0, 0.0], &[1, 1]), &mut rng);
        assert_eq!(err, Err(SimError::NotAffine));
    }

    #[test]
    fn thinning_accepts_tight_bound_proposals() {
        // Constant rate 1 for the max potential in R1 moving right: λ_1 = 1 = λ̄,
        // so every proposal on component 1 is accepted.
        let s = state(&[5.0, 0.0], &[1, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            match next_event_thinning(&MaxTarget, &ConstantExcess::CANONICAL, &s, 0.1, 1.0e3, &mut rng).unwrap() {
                EventDraw::Switch { index, .. } => assert_eq!(index, 0),
                EventDraw::NoEvent => panic!("expected a switch"),
            }
        }
    }

    #[test]
    fn thinning_proposes_nothing_on_zero_rate_windows() {
        let r = RidgeTarget::new(0.75).unwrap();
        let s = state(&[0.0, 0.0], &[1, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draw = next_event_thinning(&r, &ConstantExcess::CANONICAL, &s, 1.0, 50.0, &mut rng).unwrap();
        assert_eq!(draw, EventDraw::NoEvent);
    }

    #[test]
    fn broken_rate_bound_aborts() {
        struct Liar(GaussianTarget);
        impl Potential for Liar {
            fn dim(&self) -> usize {
                1
            }
            fn value(&self, x: &[f64]) -> f64 {
                self.0.value(x)
            }
            fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
                self.0.gradient_into(x, out)
            }
            fn rate_bound(&self, _: &[f64], _: &Velocity, _: f64) -> Vec<f64> {
                vec![0.2]
            }
        }
        let liar = Liar(GaussianTarget::standard(1));
        let s = state(&[3.0], &[1]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = next_event_thinning(&liar, &ConstantExcess::CANONICAL, &s, 1.0, 1000.0, &mut rng);
        match err {
            Err(SimError::BoundViolation { rate, bound, .. }) => assert!(rate > bound),
            other => panic!("expected a bound violation, got {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::new(0.0, 1).is_err());
        assert!(SimConfig::new(-1.0, 1).is_err());
        assert!(SimConfig::new(1.0, 1).unwrap().with_window(0.0).is_err());
        assert!(SimConfig::new(1.0, 1).unwrap().with_max_events(0).is_err());
        let cfg: SimConfig = serde_json::from_str(r#"{"horizon":5,"seed":3,"method":"thinning"}"#).unwrap();
        assert_eq!(cfg.method, Method::Thinning);
        assert_eq!(cfg.thinning_window, 1.0);
        assert!(serde_json::from_str::<SimConfig>(r#"{"horizon":0,"seed":3}"#).is_err());
        assert_eq!("auto".parse::<Method>().unwrap(), Method::Auto);
    }

    #[test]
    fn ridge_diagonal_never_switches() {
        let r = RidgeTarget::new(0.75).unwrap();
        let init = state(&[0.0, 0.0], &[1, 1]);
        let skel = simulate_skeleton(
            &r,
            &ConstantExcess::CANONICAL,
            &init,
            &SimConfig::new(1000.0, 9).unwrap(),
        )
        .unwrap();
        assert!(skel.events().is_empty());
        assert_eq!(skel.final_state().x, vec![1000.0, 1000.0]);
        assert_eq!(skel.position_at(7.0).unwrap(), state(&[7.0, 7.0], &[1, 1]));
        let mean_x1 = skel.integrate_along(|x, _| x[0], 1000.0).unwrap();
        assert!((mean_x1 - 500.0).abs() < 1e-9);
    }

    #[test]
    fn max_potential_cycles_through_four_directions() {
        let init = state(&[2.0, 0.5], &[1, 1]);
        let cfg = SimConfig::new(1e6, 4).unwrap().with_max_events(20).unwrap();
        let skel = simulate_skeleton(&MaxTarget, &ConstantExcess::CANONICAL, &init, &cfg).unwrap();
        assert_eq!(skel.events().len(), 20);
        assert!(skel.is_truncated());
        let cycle = [vel(&[-1, 1]), vel(&[-1, -1]), vel(&[1, -1]), vel(&[1, 1])];
        for (k, ev) in skel.events().iter().enumerate() {
            assert_eq!(ev.velocity, cycle[k % 4], "event {k}");
            assert_eq!(ev.index, k % 2);
        }
        skel.validate().unwrap();
    }

    #[test]
    fn skeleton_is_deterministic_and_valid() {
        let tgt = GaussianTarget::from_row_major(2, &[6.0, 3.0, 3.0, 2.0], None).unwrap();
        let init = state(&[0.3, -0.2], &[1, -1]);
        for method in [Method::Exact, Method::Thinning] {
            let cfg = SimConfig::new(200.0, 77).unwrap().with_method(method);
            let a = simulate_skeleton(&tgt, &ConstantExcess::CANONICAL, &init, &cfg).unwrap();
            let b = simulate_skeleton(&tgt, &ConstantExcess::CANONICAL, &init, &cfg).unwrap();
            assert_eq!(a, b);
            assert!(!a.events().is_empty());
            a.validate().unwrap();
        }
    }

    #[test]
    fn position_at_is_right_continuous() {
        let tgt = GaussianTarget::standard(2);
        let init = state(&[0.0, 0.0], &[1, 1]);
        let skel = simulate_skeleton(
            &tgt,
            &ConstantExcess::CANONICAL,
            &init,
            &SimConfig::new(50.0, 2).unwrap(),
        )
        .unwrap();
        assert_eq!(skel.position_at(0.0).unwrap(), init);
        let ev = &skel.events()[0];
        let at = skel.position_at(ev.time).unwrap();
        assert_eq!(at.x, ev.position);
        assert_eq!(at.theta, ev.velocity);
        assert!(skel.position_at(50.1).is_err());
        assert!(skel.position_at(-0.1).is_err());
    }

    #[test]
    fn integrate_along_examples() {
        let init = state(&[0.0, 0.0], &[1, 1]);
        let ev = SkeletonEvent {
            time: 5.0,
            index: 0,
            position: vec![5.0, 5.0],
            velocity: vel(&[-1, 1]),
        };
        let skel = Skeleton::new(init, vec![ev], 10.0, false).unwrap();
        assert!((skel.integrate_along(|_, _| 1.0, 10.0).unwrap() - 1.0).abs() < 1e-14);
        assert!(skel.integrate_along(|_, th| th.sign(0), 10.0).unwrap().abs() < 1e-14);
        // x1 rises to 5 then returns to 0: average 2.5
        assert!((skel.integrate_along(|x, _| x[0], 10.0).unwrap() - 2.5).abs() < 1e-12);
        // degree-15 polynomial along a segment is integrated exactly
        let p15 = skel.integrate_window(|x, _| x[1].powi(15), 0.0, 10.0).unwrap();
        assert!((p15 - 10f64.powi(16) / 16.0).abs() / p15 < 1e-13);
        assert!(skel.integrate_along(|_, _| 1.0, 11.0).is_err());
    }
}
