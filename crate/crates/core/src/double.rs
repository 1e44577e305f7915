//! Exact detection of both disorders: maximise `P(τ = θ₁, σ = θ₂)`.
//!
//! The second stop after `τ = m` reduces to a fixed point `r*` on pairs
//! of consecutive observations; the first stop then reduces to a second
//! fixed point `v*` whose payoff uses `r*`. Both stopping sets depend on
//! the last two observations only.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detect::{FormulaVariant, STOP_TOL};
use crate::error::{DisorderError, Result};
use crate::model::{ModelSpec, Regime};

/// Square table indexed by `(t, u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTable {
    pub n: usize,
    pub values: Vec<f64>,
}

impl PairTable {
    fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64 + Sync) -> Self {
        let values = (0..n * n).into_par_iter().map(|i| f(i / n, i % n)).collect();
        Self { n, values }
    }

    #[inline]
    pub fn get(&self, t: usize, u: usize) -> f64 {
        self.values[t * self.n + u]
    }

    fn distance(&self, other: &PairTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `f^i_t(u) / f^j_t(u)` with `0/0 = 0`.
fn ratio(model: &ModelSpec, num: Regime, den: Regime, t: usize, u: usize) -> Result<f64> {
    let (a, b) = (model.density(num, t, u), model.density(den, t, u));
    if b > 0.0 {
        Ok(a / b)
    } else if a == 0.0 {
        Ok(0.0)
    } else {
        Err(DisorderError::DivergentRatio { from: t, to: u })
    }
}

fn ratio_table(model: &ModelSpec, num: Regime, den: Regime) -> Result<PairTable> {
    let n = model.n_states();
    let mut values = Vec::with_capacity(n * n);
    for t in 0..n {
        for u in 0..n {
            values.push(ratio(model, num, den, t, u)?);
        }
    }
    Ok(PairTable { n, values })
}

/// `Σ_s w(u, s) f^r_u(s) μ(s)` for every `u`.
fn integrate(model: &ModelSpec, w: &PairTable, regime: Regime) -> Vec<f64> {
    let n = model.n_states();
    (0..n)
        .map(|u| (0..n).map(|s| w.get(u, s) * model.transition_mass(regime, u, s)).sum())
        .collect()
}

/// Where the second-stop iteration starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SecondStart {
    /// The payoff ratio `f²/f¹`.
    #[default]
    Payoff,
    /// The constant 1.
    Ones,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondStopTable {
    /// `f²_t(u) / f¹_t(u)`.
    pub ratio21: PairTable,
    pub r_star: PairTable,
    /// `R*(t) = p₂ Σ_s r*(t, s) f¹_t(s) μ(s)`.
    pub big_r: Vec<f64>,
    /// `R*_ρ(t, u) = max{ρ f²/f¹, (q₂/p₂)(1 − ρ) R*(u)}`.
    pub r_rho: PairTable,
    /// `q₂ Σ_s r*(u, s) f¹_u(s) μ(s)`, i.e. `(q₂/p₂) R*(u)` without the division.
    pub scaled_big_r: Vec<f64>,
    pub iterations: usize,
    pub delta: f64,
    pub converged: bool,
}

impl SecondStopTable {
    /// Whether `σ = n` after `τ = m < n`, seeing `(x_{n−1}, xₙ)`.
    pub fn stops_after(&self, t: usize, u: usize) -> bool {
        self.ratio21.get(t, u) >= self.big_r[u] - STOP_TOL
    }

    /// Whether `σ = τ = m ≥ 1`, seeing `(x_{m−1}, x_m)`.
    pub fn stops_at_first(&self, rho: f64, t: usize, u: usize) -> bool {
        rho * self.ratio21.get(t, u) >= (1.0 - rho) * self.scaled_big_r[u] - STOP_TOL
    }

    /// Whether `σ = τ = 0`.
    pub fn stops_at_origin(&self, model: &ModelSpec) -> bool {
        let rho = model.prior.rho;
        rho >= (1.0 - rho) * self.scaled_big_r[model.x0] - STOP_TOL
    }
}

fn second_from(model: &ModelSpec, ratio21: PairTable, r: PairTable, iterations: usize, delta: f64, converged: bool) -> SecondStopTable {
    let p = &model.prior;
    let int = integrate(model, &r, Regime::Middle);
    let big_r: Vec<f64> = int.iter().map(|v| p.p2 * v).collect();
    let scaled_big_r: Vec<f64> = int.iter().map(|v| p.q2() * v).collect();
    let r_rho = PairTable::from_fn(model.n_states(), |t, u| {
        (p.rho * ratio21.get(t, u)).max((1.0 - p.rho) * scaled_big_r[u])
    });
    SecondStopTable {
        ratio21,
        r_star: r,
        big_r,
        r_rho,
        scaled_big_r,
        iterations,
        delta,
        converged,
    }
}

/// Fixed point `r = max{f²/f¹, p₂ ∫ r(u, ·) f¹_u dμ}`.
pub fn iterate_r(model: &ModelSpec, tol: f64, max_iter: usize, start: SecondStart) -> Result<SecondStopTable> {
    let ratio21 = ratio_table(model, Regime::Post, Regime::Middle)?;
    let n = model.n_states();
    let p2 = model.prior.p2;
    let mut r = match start {
        SecondStart::Payoff => ratio21.clone(),
        SecondStart::Ones => PairTable {
            n,
            values: vec![1.0; n * n],
        },
    };
    let (mut k, mut delta) = (0, f64::INFINITY);
    while k < max_iter {
        let cont: Vec<f64> = integrate(model, &r, Regime::Middle).iter().map(|v| p2 * v).collect();
        let next = PairTable::from_fn(n, |t, u| ratio21.get(t, u).max(cont[u]));
        delta = next.distance(&r);
        r = next;
        k += 1;
        if delta <= tol {
            return Ok(second_from(model, ratio21, r, k, delta, true));
        }
    }
    Ok(second_from(model, ratio21, r, k, delta, false))
}

/// First stop of the second stage after `τ = m`, scanning `states[m..]`.
///
/// `states` holds `x₀, x₁, …`; returns `None` when no trigger fires in the
/// observed range.
pub fn second_stop_rule(model: &ModelSpec, table: &SecondStopTable, states: &[usize], m: usize) -> Option<usize> {
    let rho = model.prior.rho;
    let immediate = if m == 0 {
        table.stops_at_origin(model)
    } else {
        table.stops_at_first(rho, states[m - 1], states[m])
    };
    if immediate {
        return Some(m);
    }
    (m + 1..states.len()).find(|&n| table.stops_after(states[n - 1], states[n]))
}

/// Recursion used for the first stop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FirstStopRecursion {
    /// Payoff `(f¹/f⁰) R*_ρ` with `f⁰`-weighted continuation.
    #[default]
    Proof,
    /// Payoff `(f²/f¹) R*_ρ` with `f¹`-weighted continuation.
    Statement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstStopTable {
    pub recursion: FirstStopRecursion,
    pub payoff: PairTable,
    pub v_star: PairTable,
    /// `p₁ ∫ v*(u, ·) f_u dμ`, indexed by `u`.
    pub continuation: Vec<f64>,
    pub stop_set: Vec<bool>,
    pub iterations: usize,
    pub delta: f64,
    pub converged: bool,
}

impl FirstStopTable {
    pub fn in_stop_set(&self, t: usize, u: usize) -> bool {
        self.stop_set[t * self.payoff.n + u]
    }
}

fn first_parts(model: &ModelSpec, second: &SecondStopTable, rec: FirstStopRecursion) -> Result<(PairTable, Regime)> {
    let (lead, regime) = match rec {
        FirstStopRecursion::Proof => (ratio_table(model, Regime::Middle, Regime::Pre)?, Regime::Pre),
        FirstStopRecursion::Statement => (second.ratio21.clone(), Regime::Middle),
    };
    let n = model.n_states();
    let payoff = PairTable::from_fn(n, |t, u| lead.get(t, u) * second.r_rho.get(t, u));
    Ok((payoff, regime))
}

/// Fixed point `v = max{payoff, p₁ ∫ v(u, ·) f_u dμ}`, started at the payoff.
pub fn iterate_v(
    model: &ModelSpec,
    second: &SecondStopTable,
    tol: f64,
    max_iter: usize,
    rec: FirstStopRecursion,
) -> Result<FirstStopTable> {
    let (payoff, regime) = first_parts(model, second, rec)?;
    let n = model.n_states();
    let p1 = model.prior.p1;
    let mut v = payoff.clone();
    let (mut k, mut delta, mut converged) = (0, f64::INFINITY, false);
    while k < max_iter {
        let cont: Vec<f64> = integrate(model, &v, regime).iter().map(|x| p1 * x).collect();
        let next = PairTable::from_fn(n, |t, u| payoff.get(t, u).max(cont[u]));
        delta = next.distance(&v);
        v = next;
        k += 1;
        if delta <= tol {
            converged = true;
            break;
        }
    }
    let continuation: Vec<f64> = integrate(model, &v, regime).iter().map(|x| p1 * x).collect();
    let stop_set = (0..n * n)
        .map(|i| payoff.values[i] >= continuation[i % n] - STOP_TOL)
        .collect();
    Ok(FirstStopTable {
        recursion: rec,
        payoff,
        v_star: v,
        continuation,
        stop_set,
        iterations: k,
        delta,
        converged,
    })
}

/// `(stop value, continuation value)` at the origin.
///
/// The default stop value is `π·max{ρ, (q₂/p₂)(1 − ρ)R*(x₀)}`;
/// the `Printed` variant uses `π`.
pub fn origin_terms(model: &ModelSpec, second: &SecondStopTable, first: &FirstStopTable, origin: FormulaVariant) -> (f64, f64) {
    let p = &model.prior;
    let x = model.x0;
    let stop = match origin {
        FormulaVariant::Proof => p.pi * p.rho.max((1.0 - p.rho) * second.scaled_big_r[x]),
        FormulaVariant::Printed => p.pi,
    };
    let cont = p.q1()
        * (1.0 - p.pi)
        * (0..model.n_states())
            .map(|s| first.v_star.get(x, s) * model.transition_mass(Regime::Pre, x, s))
            .sum::<f64>();
    (stop, cont)
}

/// Second stop at the origin as printed: `πρ ≥ q₁(1 − π) ∫ f¹_x R*_ρ(x, ·) dμ`.
pub fn printed_second_at_origin(model: &ModelSpec, second: &SecondStopTable) -> bool {
    let p = &model.prior;
    let x = model.x0;
    let rhs = p.q1()
        * (1.0 - p.pi)
        * (0..model.n_states())
            .map(|u| model.transition_mass(Regime::Middle, x, u) * second.r_rho.get(x, u))
            .sum::<f64>();
    p.pi * p.rho >= rhs - STOP_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct D00Options {
    pub tol: f64,
    pub max_iter: usize,
    pub recursion: FirstStopRecursion,
    pub origin: FormulaVariant,
    pub allow_nonconverged: bool,
}

impl Default for D00Options {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 10_000,
            recursion: FirstStopRecursion::Proof,
            origin: FormulaVariant::Proof,
            allow_nonconverged: false,
        }
    }
}

/// Both stages plus the decisions at the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct D00Policy {
    pub second: SecondStopTable,
    pub first: FirstStopTable,
    pub value_at_x0: f64,
    pub immediate_first: bool,
    pub immediate_second: bool,
    pub origin: FormulaVariant,
}

impl D00Policy {
    /// Whether the first stop fires at `n`, seeing `states[..=n]`.
    pub fn first_stops(&self, states: &[usize], n: usize) -> bool {
        if n == 0 {
            self.immediate_first
        } else {
            self.first.in_stop_set(states[n - 1], states[n])
        }
    }

    /// Whether the second stop fires at `n ≥ m` given `τ = m`.
    pub fn second_stops(&self, model: &ModelSpec, states: &[usize], m: usize, n: usize) -> bool {
        if n == m {
            if m == 0 {
                self.immediate_second
            } else {
                self.second.stops_at_first(model.prior.rho, states[m - 1], states[m])
            }
        } else {
            self.second.stops_after(states[n - 1], states[n])
        }
    }
}

impl D00Policy {
    /// Exact `P(τ = θ₁, σ = θ₂ ≤ horizon)` by forward propagation of the
    /// joint law of the last two states and the disorder phase.
    pub fn success_within(&self, model: &ModelSpec, horizon: usize) -> f64 {
        let k = model.n_states();
        let pr = &model.prior;
        let (q1, q2) = (pr.q1(), pr.q2());
        let rho = pr.rho;
        let mass = |r, x, y| model.transition_mass(r, x, y);
        // waiting[y]: θ₁ > n, no stop yet, xₙ = y.
        // armed[y]: τ = θ₁ ≤ n < θ₂, σ not yet, xₙ = y.
        let mut waiting = vec![0.0; k];
        let mut armed = vec![0.0; k];
        let x0 = model.x0;
        let mut success = 0.0;
        if self.immediate_first {
            if self.immediate_second {
                success += pr.pi * rho;
            } else {
                armed[x0] = pr.pi * (1.0 - rho);
            }
        } else {
            waiting[x0] = 1.0 - pr.pi;
        }
        for _ in 1..=horizon {
            let mut next_waiting = vec![0.0; k];
            let mut next_armed = vec![0.0; k];
            for x in 0..k {
                let (w, a) = (waiting[x], armed[x]);
                if w == 0.0 && a == 0.0 {
                    continue;
                }
                for y in 0..k {
                    if w > 0.0 {
                        // A stop before the disorder loses the pre-disorder mass.
                        if !self.first.in_stop_set(x, y) {
                            next_waiting[y] += w * pr.p1 * mass(Regime::Pre, x, y);
                        } else {
                            let fires = self.second.stops_at_first(rho, x, y);
                            let both = w * q1 * rho * mass(Regime::Post, x, y);
                            let one = w * q1 * (1.0 - rho) * mass(Regime::Middle, x, y);
                            if fires {
                                success += both;
                            } else {
                                next_armed[y] += one;
                            }
                        }
                    }
                    if a > 0.0 {
                        if self.second.stops_after(x, y) {
                            success += a * q2 * mass(Regime::Post, x, y);
                        } else {
                            next_armed[y] += a * pr.p2 * mass(Regime::Middle, x, y);
                        }
                    }
                }
            }
            waiting = next_waiting;
            armed = next_armed;
        }
        success
    }
}

pub fn solve_d00(model: &ModelSpec, opts: &D00Options) -> Result<D00Policy> {
    let second = iterate_r(model, opts.tol, opts.max_iter, SecondStart::Payoff)?;
    let first = iterate_v(model, &second, opts.tol, opts.max_iter, opts.recursion)?;
    if !opts.allow_nonconverged {
        for (it, d, ok) in [
            (second.iterations, second.delta, second.converged),
            (first.iterations, first.delta, first.converged),
        ] {
            if !ok {
                return Err(DisorderError::NonConvergence {
                    iterations: it,
                    delta: d,
                    tol: opts.tol,
                });
            }
        }
    }
    let (stop, cont) = origin_terms(model, &second, &first, opts.origin);
    let immediate_second = match opts.origin {
        FormulaVariant::Proof => second.stops_at_origin(model),
        FormulaVariant::Printed => printed_second_at_origin(model, &second),
    };
    Ok(D00Policy {
        value_at_x0: stop.max(cont),
        immediate_first: stop >= cont - STOP_TOL,
        immediate_second,
        second,
        first,
        origin: opts.origin,
    })
}

/// Tables of the problem truncated at a fixed horizon, indexed by the
/// number of steps remaining.
#[derive(Debug, Clone)]
pub struct FiniteD00 {
    pub horizon: usize,
    pub ratio21: PairTable,
    /// `q₂ Σ_s r^{(j−1)}(u, s) f¹_u(s) μ(s)`; zero for `j = 0`.
    pub scaled_big_r: Vec<Vec<f64>>,
    /// `p₂ Σ_s r^{(j−1)}(u, s) f¹_u(s) μ(s)`; zero for `j = 0`.
    pub big_r: Vec<Vec<f64>>,
    pub payoff: Vec<PairTable>,
    /// `p₁ ∫ v^{(j−1)}(u, ·) f_u dμ`; zero for `j = 0`.
    pub continuation: Vec<Vec<f64>>,
    pub v: Vec<PairTable>,
    pub recursion: FirstStopRecursion,
}

impl FiniteD00 {
    pub fn new(model: &ModelSpec, horizon: usize, rec: FirstStopRecursion) -> Result<Self> {
        let p = &model.prior;
        let n = model.n_states();
        let ratio21 = ratio_table(model, Regime::Post, Regime::Middle)?;
        let ratio10 = ratio_table(model, Regime::Middle, Regime::Pre)?;
        let (lead, regime) = match rec {
            FirstStopRecursion::Proof => (&ratio10, Regime::Pre),
            FirstStopRecursion::Statement => (&ratio21, Regime::Middle),
        };
        let mut r = ratio21.clone();
        let mut big_r = vec![vec![0.0; n]];
        let mut scaled = vec![vec![0.0; n]];
        for _ in 1..=horizon {
            let int = integrate(model, &r, Regime::Middle);
            big_r.push(int.iter().map(|v| p.p2 * v).collect());
            scaled.push(int.iter().map(|v| p.q2() * v).collect());
            let cont = big_r.last().unwrap().clone();
            r = PairTable::from_fn(n, |t, u| ratio21.get(t, u).max(cont[u]));
        }
        let payoff: Vec<PairTable> = (0..=horizon)
            .map(|j| {
                PairTable::from_fn(n, |t, u| {
                    lead.get(t, u) * (p.rho * ratio21.get(t, u)).max((1.0 - p.rho) * scaled[j][u])
                })
            })
            .collect();
        let mut v = vec![payoff[0].clone()];
        let mut continuation = vec![vec![0.0; n]];
        for j in 1..=horizon {
            let cont: Vec<f64> = integrate(model, &v[j - 1], regime).iter().map(|x| p.p1 * x).collect();
            v.push(PairTable::from_fn(n, |t, u| payoff[j].get(t, u).max(cont[u])));
            continuation.push(cont);
        }
        Ok(Self {
            horizon,
            ratio21,
            scaled_big_r: scaled,
            big_r,
            payoff,
            continuation,
            v,
            recursion: rec,
        })
    }

    /// Optimal value with the proof form of the origin term.
    pub fn value(&self, model: &ModelSpec, origin: FormulaVariant) -> f64 {
        let (stop, cont) = self.origin_terms(model, origin);
        stop.max(cont)
    }

    pub fn origin_terms(&self, model: &ModelSpec, origin: FormulaVariant) -> (f64, f64) {
        let p = &model.prior;
        let x = model.x0;
        let nn = self.horizon;
        let stop = match origin {
            FormulaVariant::Proof => p.pi * p.rho.max((1.0 - p.rho) * self.scaled_big_r[nn][x]),
            FormulaVariant::Printed => p.pi,
        };
        if nn == 0 {
            return (p.pi * p.rho, 0.0);
        }
        let cont = p.q1()
            * (1.0 - p.pi)
            * (0..model.n_states())
                .map(|s| self.v[nn - 1].get(x, s) * model.transition_mass(Regime::Pre, x, s))
                .sum::<f64>();
        (stop, cont)
    }

    /// First-stop decision at `n` on the observed `states[..=n]`.
    pub fn first_stops(&self, model: &ModelSpec, states: &[usize], n: usize) -> bool {
        let j = self.horizon - n;
        if n == 0 {
            let (stop, cont) = self.origin_terms(model, FormulaVariant::Proof);
            return stop >= cont - STOP_TOL;
        }
        if j == 0 {
            return true;
        }
        let (t, u) = (states[n - 1], states[n]);
        self.payoff[j].get(t, u) >= self.continuation[j][u] - STOP_TOL
    }

    /// Second-stop decision at `n ≥ m` given `τ = m`.
    pub fn second_stops(&self, model: &ModelSpec, states: &[usize], m: usize, n: usize) -> bool {
        let j = self.horizon - n;
        let rho = model.prior.rho;
        if n == m {
            let lhs = if m == 0 { rho } else { rho * self.ratio21.get(states[m - 1], states[m]) };
            lhs >= (1.0 - rho) * self.scaled_big_r[j][states[m]] - STOP_TOL
        } else {
            self.ratio21.get(states[n - 1], states[n]) >= self.big_r[j][states[n]] - STOP_TOL
        }
    }
}

/// Serialisable solution of the double problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct D00Artifact {
    pub schema: u32,
    pub problem: String,
    pub states: Vec<String>,
    pub r_star: Vec<f64>,
    pub big_r_star: Vec<f64>,
    pub r_rho_star: Vec<f64>,
    pub v_star: Vec<f64>,
    pub first_stop_set: Vec<bool>,
    pub value_at_x0: f64,
    pub immediate_first: bool,
    pub immediate_second: bool,
    pub recursion: FirstStopRecursion,
    pub origin: FormulaVariant,
    pub second_iterations: usize,
    pub second_delta: f64,
    pub first_iterations: usize,
    pub first_delta: f64,
    pub converged: bool,
}

impl D00Artifact {
    pub fn new(model: &ModelSpec, pol: &D00Policy) -> Self {
        Self {
            schema: 1,
            problem: "d00".into(),
            states: model.space.labels().to_vec(),
            r_star: pol.second.r_star.values.clone(),
            big_r_star: pol.second.big_r.clone(),
            r_rho_star: pol.second.r_rho.values.clone(),
            v_star: pol.first.v_star.values.clone(),
            first_stop_set: pol.first.stop_set.clone(),
            value_at_x0: pol.value_at_x0,
            immediate_first: pol.immediate_first,
            immediate_second: pol.immediate_second,
            recursion: pol.first.recursion,
            origin: pol.origin,
            second_iterations: pol.second.iterations,
            second_delta: pol.second.delta,
            first_iterations: pol.first.iterations,
            first_delta: pol.first.delta,
            converged: pol.second.converged && pol.first.converged,
        }
    }
}
