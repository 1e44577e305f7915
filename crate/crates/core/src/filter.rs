//! Recursive a-posteriori probabilities of the disorder moments.
//!
//! With `Fₙ` the observations up to `n`:
//!
//! * `pi1  = P(θ₁ ≤ n | Fₙ)`
//! * `pi2  = P(θ₂ ≤ n | Fₙ)`
//! * `pi12 = P(θ₁ = θ₂ > n | Fₙ)`
//! * `Π_{mn} = P(θ₁ = m, θ₂ > n | Fₙ)` for `m ≤ n`

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{DisorderError, Result};
use crate::model::{ModelSpec, PriorParams, Regime};
use crate::segment::mixture_h_unchecked;

/// Excursions outside `[0, 1]` up to this size are treated as rounding.
pub const CLAMP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorState {
    pub x_prev: usize,
    pub x_curr: usize,
    pub pi1: f64,
    pub pi2: f64,
    pub pi12: f64,
    pub n: usize,
}

impl PosteriorState {
    /// State at `n = 0`; both observation slots hold `x₀`.
    pub fn initial(model: &ModelSpec) -> Self {
        let (pi1, pi2, pi12) = initial_posteriors(&model.prior);
        Self {
            x_prev: model.x0,
            x_curr: model.x0,
            pi1,
            pi2,
            pi12,
            n: 0,
        }
    }

    /// `P(θ₁ ≤ n < θ₂ | Fₙ)`.
    pub fn between(&self) -> f64 {
        self.pi1 - self.pi2
    }

    /// Predictive density of the next observation `y`.
    pub fn predictive(&self, model: &ModelSpec, y: usize) -> f64 {
        mixture_h_unchecked(model, self.x_curr, y, self.pi1, self.pi2, self.pi12)
    }
}

/// `(Π¹₀, Π²₀, Π¹²₀)`.
pub fn initial_posteriors(prior: &PriorParams) -> (f64, f64, f64) {
    (prior.pi, prior.pi * prior.rho, (1.0 - prior.pi) * prior.rho)
}

fn clamp_unit(name: &'static str, value: f64, step: usize) -> Result<f64> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else if value >= -CLAMP_TOL && value <= 1.0 + CLAMP_TOL {
        Ok(value.clamp(0.0, 1.0))
    } else {
        Err(DisorderError::PosteriorOutOfRange { name, value, step })
    }
}

/// One filter update together with the predictive density `H` it used.
pub fn filter_step_with_h(model: &ModelSpec, s: &PosteriorState, y: usize) -> Result<(PosteriorState, f64)> {
    model.check_state(y)?;
    let step = s.n + 1;
    let h = s.predictive(model, y);
    if !(h > 0.0) {
        return Err(DisorderError::ZeroLikelihood {
            step,
            from: s.x_curr,
            to: y,
        });
    }
    let p = &model.prior;
    let f0 = model.density(Regime::Pre, s.x_curr, y);
    let f2 = model.density(Regime::Post, s.x_curr, y);
    let pi1 = 1.0 - p.p1 * (1.0 - s.pi1) * f0 / h;
    let pi2 = (p.q2() * s.pi1 + p.p2 * s.pi2 + p.q1() * s.pi12) * f2 / h;
    let pi12 = p.p1 * s.pi12 * f0 / h;
    let pi1 = clamp_unit("pi1", pi1, step)?;
    let pi2 = clamp_unit("pi2", pi2, step)?;
    let pi12 = clamp_unit("pi12", pi12, step)?;
    if pi2 > pi1 + CLAMP_TOL {
        return Err(DisorderError::PosteriorOutOfRange {
            name: "pi1 - pi2",
            value: pi1 - pi2,
            step,
        });
    }
    let next = PosteriorState {
        x_prev: s.x_curr,
        x_curr: y,
        pi1,
        pi2: pi2.min(pi1),
        pi12,
        n: step,
    };
    Ok((next, h))
}

/// Posterior after observing `y`.
pub fn filter_step(model: &ModelSpec, s: &PosteriorState, y: usize) -> Result<PosteriorState> {
    filter_step_with_h(model, s, y).map(|(next, _)| next)
}

/// Posterior trace `n = 0..=observations.len()`.
pub fn run_filter(model: &ModelSpec, observations: &[usize]) -> Result<Vec<PosteriorState>> {
    let mut trace = Vec::with_capacity(observations.len() + 1);
    let mut s = PosteriorState::initial(model);
    trace.push(s);
    for &y in observations {
        s = filter_step(model, &s, y)?;
        trace.push(s);
    }
    Ok(trace)
}

/// `Π_{mn}` for a fixed hypothesised first disorder `m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinmState {
    pub m: usize,
    pub value: f64,
}

/// `Π_{mm}` from the state at `n = m ≥ 1`, in likelihood-ratio form.
pub fn pinm_start(model: &ModelSpec, s: &PosteriorState) -> Result<PinmState> {
    if s.n == 0 {
        return Err(DisorderError::InvalidArgument(
            "pinm_start needs m >= 1; use pinm_origin for m = 0".into(),
        ));
    }
    let f0 = model.density(Regime::Pre, s.x_prev, s.x_curr);
    if !(f0 > 0.0) {
        return Err(DisorderError::ZeroLikelihood {
            step: s.n,
            from: s.x_prev,
            to: s.x_curr,
        });
    }
    let p = &model.prior;
    let f1 = model.density(Regime::Middle, s.x_prev, s.x_curr);
    let value = (1.0 - p.rho) * (p.q1() / p.p1) * (f1 / f0) * (1.0 - s.pi1);
    Ok(PinmState {
        m: s.n,
        value: clamp_unit("pi_mm", value, s.n)?,
    })
}

/// `Π_{00} = π(1 − ρ)`.
pub fn pinm_origin(prior: &PriorParams) -> PinmState {
    PinmState {
        m: 0,
        value: prior.pi * (1.0 - prior.rho),
    }
}

/// `Π_{m+1,m+1}` from the state at `m` and the next observation `y`.
///
/// Equal to [`pinm_start`] applied to the updated state, but without
/// dividing by `f⁰` or `p₁`.
pub fn pinm_enter(model: &ModelSpec, s: &PosteriorState, y: usize) -> Result<PinmState> {
    model.check_state(y)?;
    let h = s.predictive(model, y);
    if !(h > 0.0) {
        return Err(DisorderError::ZeroLikelihood {
            step: s.n + 1,
            from: s.x_curr,
            to: y,
        });
    }
    let p = &model.prior;
    let f1 = model.density(Regime::Middle, s.x_curr, y);
    let value = (1.0 - p.rho) * p.q1() * (1.0 - s.pi1) * f1 / h;
    Ok(PinmState {
        m: s.n + 1,
        value: clamp_unit("pi_mm", value, s.n + 1)?,
    })
}

/// `Π_{m,n+1}` from `Π_{mn}`, the state at `n` and the next observation `y`.
pub fn pinm_step(model: &ModelSpec, s: &PosteriorState, p: &PinmState, y: usize) -> Result<PinmState> {
    model.check_state(y)?;
    let h = s.predictive(model, y);
    if !(h > 0.0) {
        return Err(DisorderError::ZeroLikelihood {
            step: s.n + 1,
            from: s.x_curr,
            to: y,
        });
    }
    let f1 = model.density(Regime::Middle, s.x_curr, y);
    let value = model.prior.p2 * p.value * f1 / h;
    Ok(PinmState {
        m: p.m,
        value: clamp_unit("pi_mn", value, s.n + 1)?,
    })
}

/// Filter state plus `Π_{mn}` for every `m ≤ n`.
#[derive(Debug, Clone)]
pub struct PinmTracker {
    state: PosteriorState,
    values: Vec<f64>,
}

impl PinmTracker {
    pub fn new(model: &ModelSpec) -> Self {
        Self {
            state: PosteriorState::initial(model),
            values: vec![pinm_origin(&model.prior).value],
        }
    }

    pub fn state(&self) -> &PosteriorState {
        &self.state
    }

    /// `Π_{mn}` indexed by `m = 0..=n`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn observe(&mut self, model: &ModelSpec, y: usize) -> Result<()> {
        let (next, h) = filter_step_with_h(model, &self.state, y)?;
        let decay = model.prior.p2 * model.density(Regime::Middle, self.state.x_curr, y) / h;
        let entered = pinm_enter(model, &self.state, y)?.value;
        for v in &mut self.values {
            *v = clamp_unit("pi_mn", *v * decay, next.n)?;
        }
        self.values.push(entered);
        self.state = next;
        Ok(())
    }
}

/// Writes a trace as CSV with columns `n, x_prev, x_curr, pi1, pi2, pi12`
/// followed by one `pi_m<m>` column per tracked `m` (empty before `n = m`).
pub fn write_trace_csv<W: Write>(
    out: W,
    model: &ModelSpec,
    trace: &[PosteriorState],
    tracked: &[usize],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["n", "x_prev", "x_curr", "pi1", "pi2", "pi12"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(tracked.iter().map(|m| format!("pi_m{m}")));
    w.write_record(&header).map_err(csv_err)?;

    let mut pinm: Vec<Option<PinmState>> = vec![None; tracked.len()];
    for (i, s) in trace.iter().enumerate() {
        if i > 0 {
            let prev = &trace[i - 1];
            for (slot, &m) in pinm.iter_mut().zip(tracked) {
                *slot = match slot {
                    Some(p) => Some(pinm_step(model, prev, p, s.x_curr)?),
                    None if m == s.n => Some(pinm_enter(model, prev, s.x_curr)?),
                    None => None,
                };
            }
        } else {
            for (slot, &m) in pinm.iter_mut().zip(tracked) {
                if m == 0 {
                    *slot = Some(pinm_origin(&model.prior));
                }
            }
        }
        let mut row = vec![
            s.n.to_string(),
            model.space.label(s.x_prev).to_string(),
            model.space.label(s.x_curr).to_string(),
            s.pi1.to_string(),
            s.pi2.to_string(),
            s.pi12.to_string(),
        ];
        row.extend(pinm.iter().map(|p| p.map(|p| p.value.to_string()).unwrap_or_default()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> DisorderError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => DisorderError::Io(io),
        other => DisorderError::InvalidArgument(format!("csv: {other:?}")),
    }
}
