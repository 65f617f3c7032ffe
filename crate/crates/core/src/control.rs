//! Deterministic zigzag paths: control sequences, admissibility and the
//! constructive reachability argument for Gaussian targets.
//!
//! A control `(t₀, …, t_m; i₁, …, i_m)` travels `t₀`, flips `i₁`, travels
//! `t₁`, and so on. It is admissible from a state when each flip happens where
//! the flipped component has a strictly positive switching rate (evaluated
//! with the velocity just before the flip).
//!
//! All constructions here use canonical rates; positive excess rates only
//! make more controls admissible.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{rate_component, ConstantExcess, ExcessRate, ModelError, Potential, State, Velocity};
use crate::targets::GaussianTarget;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("invalid control sequence: {0}")]
    InvalidControl(String),
    #[error("velocity is not asymptotically flippable; components {missing:?} fail")]
    NotFlippable { missing: Vec<usize> },
    #[error("no admissible control found up to travel time {max_time}")]
    AdmissibilityNotReached { max_time: f64 },
    #[error("escalation did not increase θᵀAθ ({before} -> {after})")]
    EscalationStalled { before: f64, after: f64 },
    #[error("constructed control misses its endpoint by {error}")]
    EndpointMismatch { error: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Durations `t₀..t_m` (all strictly positive) and flip indices `i₁..i_m`.
///
/// Serialised as `{"times": [...], "indices": [...]}` with one-based indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ControlWire", into = "ControlWire")]
pub struct ControlSequence {
    times: Vec<f64>,
    indices: Vec<usize>,
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ControlWire {
    times: Vec<f64>,
    indices: Vec<usize>,
}

impl TryFrom<ControlWire> for ControlSequence {
    type Error = ControlError;

    fn try_from(w: ControlWire) -> Result<Self, Self::Error> {
        let indices = w
            .indices
            .iter()
            .map(|&i| {
                i.checked_sub(1)
                    .ok_or_else(|| ControlError::InvalidControl("indices are one-based; found 0".into()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        ControlSequence::new(w.times, indices)
    }
}

impl From<ControlSequence> for ControlWire {
    fn from(u: ControlSequence) -> Self {
        ControlWire {
            times: u.times,
            indices: u.indices.iter().map(|i| i + 1).collect(),
        }
    }
}

impl ControlSequence {
    pub fn new(times: Vec<f64>, indices: Vec<usize>) -> Result<Self, ControlError> {
        if times.len() != indices.len() + 1 {
            return Err(ControlError::InvalidControl(format!(
                "{} times for {} switches; expected one more time than switches",
                times.len(),
                indices.len()
            )));
        }
        if let Some((k, t)) = times.iter().enumerate().find(|(_, t)| !(**t > 0.0 && t.is_finite())) {
            return Err(ControlError::InvalidControl(format!(
                "time t{k} = {t} is not strictly positive"
            )));
        }
        Ok(ControlSequence { times, indices })
    }

    /// Straight-line motion for time `t`.
    pub fn straight(t: f64) -> Result<Self, ControlError> {
        Self::new(vec![t], Vec::new())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn num_switches(&self) -> usize {
        self.indices.len()
    }

    pub fn total_time(&self) -> f64 {
        self.times.iter().sum()
    }

    /// `w = (s₀, …, s_{p−1}, s_p + t₀, t₁, …; i…, j…)`: run `self`, then `next`.
    pub fn concat(&self, next: &ControlSequence) -> ControlSequence {
        let mut times = self.times.clone();
        *times.last_mut().expect("times are never empty") += next.times[0];
        times.extend_from_slice(&next.times[1..]);
        let mut indices = self.indices.clone();
        indices.extend_from_slice(&next.indices);
        ControlSequence { times, indices }
    }

    fn check_dim(&self, d: usize) -> Result<(), ControlError> {
        match self.indices.iter().find(|&&i| i >= d) {
            Some(&index) => Err(ModelError::IndexOutOfRange { index, dim: d }.into()),
            None => Ok(()),
        }
    }

    /// Calls `visit(position, pre_switch_velocity, index)` at every switch and
    /// returns the final state.
    fn walk(&self, s: &State, mut visit: impl FnMut(&[f64], &Velocity, usize)) -> State {
        let mut x = s.x.clone();
        let mut theta = s.theta.clone();
        for (k, &i) in self.indices.iter().enumerate() {
            advance(&mut x, &theta, self.times[k]);
            visit(&x, &theta, i);
            theta.flip_in_place(i).expect("indices checked");
        }
        advance(&mut x, &theta, *self.times.last().expect("times are never empty"));
        State { x, theta }
    }
}

fn advance(x: &mut [f64], theta: &Velocity, t: f64) {
    for (j, xj) in x.iter_mut().enumerate() {
        *xj += theta.sign(j) * t;
    }
}

/// `Φ_u(x, θ)`.
pub fn apply_control(s: &State, u: &ControlSequence) -> Result<State, ControlError> {
    u.check_dim(s.dim())?;
    Ok(u.walk(s, |_, _, _| {}))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub admissible: bool,
    /// `λ_{i_k}` at each switch, with the pre-switch velocity.
    pub switch_rates: Vec<f64>,
    /// Minimum over switches; `+∞` for a control without switches
    /// (serialised as `null`).
    pub min_rate: f64,
}

pub fn check_admissible<P, E>(
    pot: &P,
    ex: &E,
    s: &State,
    u: &ControlSequence,
) -> Result<AdmissibilityReport, ControlError>
where
    P: Potential + ?Sized,
    E: ExcessRate + ?Sized,
{
    if pot.dim() != s.dim() {
        return Err(ModelError::DimensionMismatch {
            expected: pot.dim(),
            found: s.dim(),
        }
        .into());
    }
    u.check_dim(s.dim())?;
    let mut switch_rates = Vec::with_capacity(u.num_switches());
    u.walk(s, |x, theta, i| switch_rates.push(rate_component(pot, ex, x, theta, i)));
    let min_rate = switch_rates.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(AdmissibilityReport {
        admissible: min_rate > 0.0,
        switch_rates,
        min_rate,
    })
}

/// `(t_m, …, t₀; i_m, …, i₁)`. For canonical rates, if `u` is admissible from
/// `(x, θ)` and reaches `(y, η)`, the reversal is admissible from `(y, −η)`
/// and reaches `(x, −θ)`.
pub fn reverse_control(u: &ControlSequence) -> ControlSequence {
    ControlSequence {
        times: u.times.iter().rev().copied().collect(),
        indices: u.indices.iter().rev().copied().collect(),
    }
}

/// Components `i` with `θ_i (Aθ)_i > 0`, i.e. whose canonical rate becomes
/// positive far enough along the ray `x + tθ`. Never empty, since the terms
/// sum to `θᵀAθ > 0`.
pub fn flippable_set(tgt: &GaussianTarget, theta: &Velocity) -> Result<Vec<usize>, ControlError> {
    check_velocity(tgt, theta)?;
    let drift = tgt.drift(theta);
    Ok((0..theta.dim()).filter(|&i| theta.sign(i) * drift[i] > 0.0).collect())
}

pub fn is_asymptotically_flippable(tgt: &GaussianTarget, theta: &Velocity) -> Result<bool, ControlError> {
    Ok(flippable_set(tgt, theta)?.len() == theta.dim())
}

fn check_velocity(tgt: &GaussianTarget, theta: &Velocity) -> Result<(), ControlError> {
    if theta.dim() != tgt.dim() {
        return Err(ModelError::DimensionMismatch {
            expected: tgt.dim(),
            found: theta.dim(),
        }
        .into());
    }
    Ok(())
}

/// Rounds of the escalation towards an asymptotically flippable velocity.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlipHistory {
    /// Indices flipped in each round.
    pub steps: Vec<Vec<usize>>,
    /// `θᵀAθ` before the first round and after each round.
    pub quad_forms: Vec<f64>,
}

impl FlipHistory {
    pub fn rounds(&self) -> usize {
        self.steps.len()
    }

    pub fn strictly_increasing(&self) -> bool {
        self.quad_forms.windows(2).all(|w| w[1] > w[0])
    }
}

/// Flips the whole flippable set until every component is asymptotically
/// flippable. `θᵀAθ = |Σ θ_i v_i|²` (with `A` the Gram matrix of the `v_i`)
/// strictly increases each round, so at most `2^d` rounds are needed.
pub fn escalate_to_flippable(tgt: &GaussianTarget, theta: &Velocity) -> Result<(Velocity, FlipHistory), ControlError> {
    check_velocity(tgt, theta)?;
    let d = theta.dim();
    let cap = if d < 31 { 1usize << d } else { usize::MAX };
    let mut current = theta.clone();
    let mut history = FlipHistory {
        steps: Vec::new(),
        quad_forms: vec![tgt.quad_form(&current)],
    };
    for _ in 0..cap {
        let set = flippable_set(tgt, &current)?;
        if set.len() == d {
            return Ok((current, history));
        }
        for &i in &set {
            current.flip_in_place(i)?;
        }
        let before = *history.quad_forms.last().expect("seeded above");
        let after = tgt.quad_form(&current);
        if !(after > before) {
            return Err(ControlError::EscalationStalled { before, after });
        }
        history.steps.push(set);
        history.quad_forms.push(after);
    }
    Err(ControlError::EscalationStalled {
        before: history.quad_forms[0],
        after: *history.quad_forms.last().expect("seeded above"),
    })
}

/// Doublings of the travel time before giving up (`2^40 · t_init`).
pub const MAX_DOUBLINGS: u32 = 40;
/// Halvings of the inter-flip gap tried for each travel time.
pub const MAX_HALVINGS: u32 = 30;
/// Endpoint tolerance for constructed controls.
pub const ENDPOINT_TOL: f64 = 1e-8;

fn canonical_admissible(tgt: &GaussianTarget, s: &State, u: &ControlSequence) -> Result<bool, ControlError> {
    Ok(check_admissible(tgt, &ConstantExcess::CANONICAL, s, u)?.admissible)
}

/// Realises the pseudo-control `(t, 0, …, 0; I)`: travel `t`, then flip the
/// listed indices back to back. The zero gaps become `ε > 0`, halving from 1
/// until admissible, with `t` doubling from `t_init`.
pub fn realize_flips(
    tgt: &GaussianTarget,
    s: &State,
    indices: &[usize],
    t_init: f64,
) -> Result<ControlSequence, ControlError> {
    let mut t = t_init;
    for _ in 0..=MAX_DOUBLINGS {
        let mut eps = 1.0;
        for _ in 0..=MAX_HALVINGS {
            let mut times = vec![t];
            times.extend(std::iter::repeat_n(eps, indices.len()));
            let u = ControlSequence::new(times, indices.to_vec())?;
            if canonical_admissible(tgt, s, &u)? {
                return Ok(u);
            }
            eps *= 0.5;
        }
        t *= 2.0;
    }
    Err(ControlError::AdmissibilityNotReached { max_time: t })
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

fn verify_endpoint(
    s: &State,
    u: &ControlSequence,
    x_target: &[f64],
    theta_target: &Velocity,
) -> Result<(), ControlError> {
    let end = apply_control(s, u)?;
    let error = max_abs_diff(&end.x, x_target);
    if end.theta != *theta_target || !(error < ENDPOINT_TOL) {
        return Err(ControlError::EndpointMismatch {
            error: if end.theta != *theta_target {
                f64::INFINITY
            } else {
                error
            },
        });
    }
    Ok(())
}

/// `d_i = (x'_i − x_i)/η_i`, one per component.
fn displacements(x: &[f64], eta: &Velocity, x_target: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(x_target)
        .zip(eta.signs())
        .map(|((a, b), s)| (b - a) * s)
        .collect()
}

fn sorted_order(d: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
    order
}

fn pairwise_distinct(d: &[f64]) -> bool {
    let order = sorted_order(d);
    let scale = 1.0 + d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    order.windows(2).all(|w| d[w[1]] - d[w[0]] > 1e-9 * scale)
}

/// Single reversal leg for pairwise distinct displacements: travel out along
/// `η`, flip every component in increasing order of `d_i`, and travel back
/// along `−η` so each coordinate lands on `x'_i`.
fn single_reversal(
    tgt: &GaussianTarget,
    x: &[f64],
    eta: &Velocity,
    x_target: &[f64],
    t_init: f64,
) -> Result<ControlSequence, ControlError> {
    let d = displacements(x, eta, x_target);
    let order = sorted_order(&d);
    let n = d.len();
    let gaps: Vec<f64> = order.windows(2).map(|w| 0.5 * (d[w[1]] - d[w[0]])).collect();
    let shift = 0.5 * (d[order[0]] + d[order[n - 1]]);
    let (head, tail) = (shift.max(0.0), (-shift).max(0.0));
    let start = State {
        x: x.to_vec(),
        theta: eta.clone(),
    };
    let mut t = t_init;
    for _ in 0..=MAX_DOUBLINGS {
        let mut times = Vec::with_capacity(n + 1);
        times.push(t + head);
        times.extend_from_slice(&gaps);
        times.push(tail + t);
        let u = ControlSequence::new(times, order.clone())?;
        if canonical_admissible(tgt, &start, &u)? {
            verify_endpoint(&start, &u, x_target, &eta.negated())?;
            return Ok(u);
        }
        t *= 2.0;
    }
    Err(ControlError::AdmissibilityNotReached { max_time: t })
}

/// Admissible control from `(x, η)` to `(x', −η)` for an asymptotically
/// flippable `η`.
///
/// When some displacements `d_i` coincide the path goes through two
/// waypoints, `(x, η) → (y, −η) → (y', η) → (x', −η)`, with
/// `y = x + δ·η∘(1, …, d)` and `y' = x' − δ·η∘(1, …, d)`; `δ` starts at 1
/// and grows until the middle leg's displacements are distinct too.
pub fn build_reversal_control(
    tgt: &GaussianTarget,
    x: &[f64],
    eta: &Velocity,
    x_target: &[f64],
    t_init: f64,
) -> Result<ControlSequence, ControlError> {
    let n = tgt.dim();
    for len in [x.len(), eta.dim(), x_target.len()] {
        if len != n {
            return Err(ModelError::DimensionMismatch {
                expected: n,
                found: len,
            }
            .into());
        }
    }
    if !(t_init > 0.0 && t_init.is_finite()) {
        return Err(ControlError::InvalidControl(format!(
            "initial travel time must be positive, got {t_init}"
        )));
    }
    let flippable = flippable_set(tgt, eta)?;
    if flippable.len() != n {
        let missing = (0..n).filter(|i| !flippable.contains(i)).collect();
        return Err(ControlError::NotFlippable { missing });
    }

    if pairwise_distinct(&displacements(x, eta, x_target)) {
        return single_reversal(tgt, x, eta, x_target, t_init);
    }

    let mut delta = 1.0;
    for _ in 0..64 {
        let ramp = |base: &[f64], sign: f64| -> Vec<f64> {
            base.iter()
                .enumerate()
                .map(|(i, b)| b + sign * delta * (i + 1) as f64 * eta.sign(i))
                .collect()
        };
        let y = ramp(x, 1.0);
        let y2 = ramp(x_target, -1.0);
        let back = eta.negated();
        if pairwise_distinct(&displacements(&y, &back, &y2)) {
            let u1 = single_reversal(tgt, x, eta, &y, t_init)?;
            let u2 = single_reversal(tgt, &y, &back, &y2, t_init)?;
            let u3 = single_reversal(tgt, &y2, eta, x_target, t_init)?;
            return Ok(u1.concat(&u2).concat(&u3));
        }
        delta *= 1.5;
    }
    Err(ControlError::InvalidControl(
        "could not separate coincident displacements with waypoints".into(),
    ))
}

/// Output of [`build_reach_control`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReachPlan {
    pub control: ControlSequence,
    /// Escalation from the start velocity.
    pub forward: FlipHistory,
    /// Escalation from the negated target velocity (run backwards in the plan).
    pub backward: FlipHistory,
    pub admissibility: AdmissibilityReport,
    pub endpoint_error: f64,
}

/// Runs the escalation rounds from `s`, returning the control (if any flips
/// were needed), the reached state and the history.
fn escalate_path(
    tgt: &GaussianTarget,
    s: &State,
    t_init: f64,
) -> Result<(Option<ControlSequence>, State, FlipHistory), ControlError> {
    let (_, history) = escalate_to_flippable(tgt, &s.theta)?;
    let mut state = s.clone();
    let mut path: Option<ControlSequence> = None;
    for step in &history.steps {
        let leg = realize_flips(tgt, &state, step, t_init)?;
        state = apply_control(&state, &leg)?;
        path = Some(match path {
            Some(p) => p.concat(&leg),
            None => leg,
        });
    }
    Ok((path, state, history))
}

/// Admissible control from `s` to `target` for a Gaussian potential.
///
/// 1. escalate `s` to a flippable velocity `η` at some `y`;
/// 2. escalate `(x', −θ')` to a flippable `η'` at `y'` and reverse that leg,
///    giving a path from `(y', −η')` to `(x', θ')`;
/// 3. from `(y, η)` flip the components where `η` and `η'` differ, reaching
///    `(z, η')`;
/// 4. join `(z, η')` to `(y', −η')` with [`build_reversal_control`].
pub fn build_reach_control(
    tgt: &GaussianTarget,
    s: &State,
    target: &State,
    t_init: f64,
) -> Result<ReachPlan, ControlError> {
    for st in [s, target] {
        if st.dim() != tgt.dim() {
            return Err(ModelError::DimensionMismatch {
                expected: tgt.dim(),
                found: st.dim(),
            }
            .into());
        }
    }
    let (head, at_y, forward) = escalate_path(tgt, s, t_init)?;

    let reversed_target = State {
        x: target.x.clone(),
        theta: target.theta.negated(),
    };
    let (tail_fwd, at_y2, backward) = escalate_path(tgt, &reversed_target, t_init)?;
    let eta2 = at_y2.theta.clone();

    let to_flip = at_y.theta.differing(&eta2);
    let bridge = if to_flip.is_empty() {
        None
    } else {
        Some(realize_flips(tgt, &at_y, &to_flip, t_init)?)
    };
    let at_z = match &bridge {
        Some(u) => apply_control(&at_y, u)?,
        None => at_y.clone(),
    };
    let reversal = build_reversal_control(tgt, &at_z.x, &eta2, &at_y2.x, t_init)?;

    let legs = [head, bridge, Some(reversal), tail_fwd.as_ref().map(reverse_control)];
    let control = legs
        .into_iter()
        .flatten()
        .reduce(|a, b| a.concat(&b))
        .expect("the reversal leg is always present");

    let admissibility = check_admissible(tgt, &ConstantExcess::CANONICAL, s, &control)?;
    let end = apply_control(s, &control)?;
    let endpoint_error = if end.theta == target.theta {
        max_abs_diff(&end.x, &target.x)
    } else {
        f64::INFINITY
    };
    if !admissibility.admissible {
        return Err(ControlError::AdmissibilityNotReached {
            max_time: control.total_time(),
        });
    }
    if !(endpoint_error < ENDPOINT_TOL) {
        return Err(ControlError::EndpointMismatch { error: endpoint_error });
    }
    Ok(ReachPlan {
        control,
        forward,
        backward,
        admissibility,
        endpoint_error,
    })
}
