//! Optimal stopping for `P(θ₁ ≤ τ < θ₂)`.
//!
//! Stopping pays `h = Π¹ − Π²`. With `a = 1 − Π¹ − Π¹²` and `c = Π¹ − Π²`
//! the value of any continuation plan from the latest observation `z` is
//! `a·R + c·S`, where `R` and `S` are the plan's success probabilities
//! from the undisturbed and the in-between regime. The optimal value is
//! the upper envelope of such lines, one envelope per `z`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envelope::{Envelope, ValueLine};
use crate::error::{DisorderError, Result};
use crate::filter::PosteriorState;
use crate::model::{ModelSpec, Regime};

/// Stopping is preferred when the continuation exceeds the reward by less.
pub const STOP_TOL: f64 = 1e-12;

/// Reward for stopping at posteriors `(α, β)`.
pub fn reward_h(alpha: f64, beta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) || !(0.0..=alpha).contains(&beta) {
        return Err(DisorderError::InvalidArgument(format!(
            "need 0 <= beta <= alpha <= 1, got ({alpha}, {beta})"
        )));
    }
    Ok(alpha - beta)
}

/// Weights `(a, c)` of the posterior pair `(α, β)`.
#[inline]
pub fn weights(model: &ModelSpec, alpha: f64, beta: f64) -> (f64, f64) {
    ((1.0 - model.prior.rho) * (1.0 - alpha), alpha - beta)
}

/// Line of continuing one step from `z` and then following `next`.
///
/// `next(u)` is the line used after observing `u`.
fn continue_line(model: &ModelSpec, z: usize, next: impl Fn(usize, f64, f64) -> ValueLine, a: f64, c: f64) -> ValueLine {
    let p = &model.prior;
    let mut out = ValueLine { r: 0.0, s: 0.0 };
    for u in 0..model.n_states() {
        let m0 = model.transition_mass(Regime::Pre, z, u);
        let m1 = model.transition_mass(Regime::Middle, z, u);
        // Unnormalised weights of the next belief.
        let (na, nc) = (p.p1 * m0 * a, m1 * (p.q1() * a + p.p2 * c));
        let l = next(u, na, nc);
        out.r += p.p1 * m0 * l.r + p.q1() * m1 * l.s;
        out.s += p.p2 * m1 * l.s;
    }
    out
}

/// Value tables: one envelope of lines per latest observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsTable {
    pub envelopes: Vec<Envelope>,
    /// Number of sweeps applied to the stop-only table.
    pub iterations: usize,
    /// Sup-norm change of the value in the last sweep.
    pub delta: f64,
    pub tol: f64,
    pub converged: bool,
}

impl RsTable {
    /// `Q⁰h = h`: every state stops.
    pub fn initial(model: &ModelSpec) -> Self {
        Self {
            envelopes: vec![Envelope::single(ValueLine::STOP); model.n_states()],
            iterations: 0,
            delta: f64::INFINITY,
            tol: 0.0,
            converged: false,
        }
    }

    /// Best line at `(z, α, β)`.
    pub fn line(&self, model: &ModelSpec, z: usize, alpha: f64, beta: f64) -> ValueLine {
        let (a, c) = weights(model, alpha, beta);
        self.envelopes[z].best(a, c)
    }

    /// `Qᵏh(z, α, β)`.
    pub fn value(&self, model: &ModelSpec, z: usize, alpha: f64, beta: f64) -> f64 {
        let (a, c) = weights(model, alpha, beta);
        self.envelopes[z].eval(a, c)
    }

    /// One-step continuation line at `(z, a, c)` using these tables.
    pub fn continuation_line(&self, model: &ModelSpec, z: usize, a: f64, c: f64) -> ValueLine {
        continue_line(model, z, |u, na, nc| self.envelopes[u].best(na, nc), a, c)
    }

    /// One application of the max-of-stop-or-continue operator.
    pub fn sweep(&self, model: &ModelSpec) -> RsTable {
        let p = &model.prior;
        let n = model.n_states();
        let envelopes: Vec<Envelope> = (0..n)
            .into_par_iter()
            .map(|z| {
                let parts: Vec<Envelope> = (0..n)
                    .map(|u| {
                        let m0 = model.transition_mass(Regime::Pre, z, u);
                        let m1 = model.transition_mass(Regime::Middle, z, u);
                        self.envelopes[u].map(|l| ValueLine {
                            r: p.p1 * m0 * l.r + p.q1() * m1 * l.s,
                            s: p.p2 * m1 * l.s,
                        })
                    })
                    .collect();
                let cont = Envelope::sum(&parts);
                let mut lines = cont.lines().to_vec();
                lines.push(ValueLine::STOP);
                Envelope::from_lines(lines)
            })
            .collect();
        let delta = envelopes
            .iter()
            .zip(&self.envelopes)
            .map(|(x, y)| x.distance(y))
            .fold(0.0, f64::max);
        RsTable {
            envelopes,
            iterations: self.iterations + 1,
            delta,
            tol: self.tol,
            converged: false,
        }
    }

    /// Total number of lines over all envelopes.
    pub fn size(&self) -> usize {
        self.envelopes.iter().map(Envelope::len).sum()
    }
}

/// Tables after exactly `k` sweeps.
pub fn rs_after(model: &ModelSpec, k: usize) -> RsTable {
    let mut t = RsTable::initial(model);
    for _ in 0..k {
        t = t.sweep(model);
    }
    t
}

/// Iterates until the sweep changes the value by at most `tol`.
/// A table that runs out of sweeps is returned with `converged = false`.
pub fn iterate_rs(model: &ModelSpec, tol: f64, max_iter: usize) -> Result<RsTable> {
    if !(tol > 0.0) {
        return Err(DisorderError::InvalidArgument(format!("tol must be positive, got {tol}")));
    }
    let mut t = RsTable::initial(model);
    t.tol = tol;
    while t.iterations < max_iter {
        t = t.sweep(model);
        if t.delta <= tol {
            t.converged = true;
            break;
        }
    }
    Ok(t)
}

/// Expected value after one more step at `(z, α, β)` under `table`.
pub fn bellman_t(model: &ModelSpec, table: &RsTable, z: usize, alpha: f64, beta: f64) -> Result<f64> {
    model.check_state(z)?;
    let (a, c) = weights(model, alpha, beta);
    reward_h(alpha, beta)?;
    Ok(table.continuation_line(model, z, a, c).eval(a, c))
}

/// `(R, S)` with `k` steps remaining, by direct recursion over observation
/// sequences. Costs `|E|^k`; meant for checking the tables.
pub fn truncated_line(model: &ModelSpec, k: usize, z: usize, a: f64, c: f64) -> ValueLine {
    if k == 0 {
        return ValueLine::STOP;
    }
    let cont = continue_line(model, z, |u, na, nc| truncated_line(model, k - 1, u, na, nc), a, c);
    if c >= cont.eval(a, c) - STOP_TOL {
        ValueLine::STOP
    } else {
        cont
    }
}

/// Which of two closed forms of the origin value to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FormulaVariant {
    /// Consistent with the recursion.
    #[default]
    Proof,
    /// Alternative closed form, kept for comparison.
    Printed,
}

/// Choices for the two terms of the origin value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OriginFormula {
    /// Constant compared against the continuation at `n = 0`.
    pub constant: FormulaVariant,
    /// Weight on the in-between integral in the continuation.
    pub weight: FormulaVariant,
}

impl OriginFormula {
    pub fn uniform(v: FormulaVariant) -> Self {
        Self {
            constant: v,
            weight: v,
        }
    }
}

/// `(stop value, continuation value)` at the origin.
pub fn origin_terms(model: &ModelSpec, table: &RsTable, formula: OriginFormula) -> (f64, f64) {
    let p = &model.prior;
    let (pi, rho) = (p.pi, p.rho);
    let (a, c) = ((1.0 - pi) * (1.0 - rho), pi * (1.0 - rho));
    let stop = match formula.constant {
        FormulaVariant::Proof => c,
        FormulaVariant::Printed => p.p2 * (1.0 - pi) * rho,
    };
    // Integrals ∫R f⁰ and ∫S f¹ at the optimal next lines.
    let (mut int_r0, mut int_s1) = (0.0, 0.0);
    let x = model.x0;
    for u in 0..model.n_states() {
        let m0 = model.transition_mass(Regime::Pre, x, u);
        let m1 = model.transition_mass(Regime::Middle, x, u);
        let l = table.envelopes[u].best(p.p1 * m0 * a, m1 * (p.q1() * a + p.p2 * c));
        int_r0 += l.r * m0;
        int_s1 += l.s * m1;
    }
    let s_weight = match formula.weight {
        FormulaVariant::Proof => a * p.q1() + c * p.p2,
        FormulaVariant::Printed => a * p.q1() + (1.0 - pi) * rho * p.p2,
    };
    (stop, a * p.p1 * int_r0 + s_weight * int_s1)
}

/// Optimal value at `x₀` and whether to stop immediately.
pub fn origin_value(model: &ModelSpec, table: &RsTable, formula: OriginFormula) -> (f64, bool) {
    let (stop, cont) = origin_terms(model, table, formula);
    (stop.max(cont), stop >= cont - STOP_TOL)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub formula: OriginFormula,
    pub allow_nonconverged: bool,
}

impl Default for DetectOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 10_000,
            formula: OriginFormula::uniform(FormulaVariant::Proof),
            allow_nonconverged: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectPolicy {
    pub table: RsTable,
    pub value_at_x0: f64,
    pub immediate_stop_at_zero: bool,
    pub formula: OriginFormula,
}

impl DetectPolicy {
    /// Whether `(z, α, β)` lies in the stopping set.
    pub fn in_stop_set(&self, model: &ModelSpec, z: usize, alpha: f64, beta: f64) -> bool {
        let (a, c) = weights(model, alpha, beta);
        c >= self.table.continuation_line(model, z, a, c).eval(a, c) - STOP_TOL
    }

    /// Stop decision at a filter state; `n = 0` uses the immediate flag.
    pub fn stops(&self, model: &ModelSpec, s: &PosteriorState) -> bool {
        if s.n == 0 {
            self.immediate_stop_at_zero
        } else {
            self.in_stop_set(model, s.x_curr, s.pi1, s.pi2)
        }
    }
}

/// Solves the detection problem.
pub fn solve_detect(model: &ModelSpec, opts: &DetectOptions) -> Result<DetectPolicy> {
    let table = iterate_rs(model, opts.tol, opts.max_iter)?;
    if !table.converged && !opts.allow_nonconverged {
        return Err(DisorderError::NonConvergence {
            iterations: table.iterations,
            delta: table.delta,
            tol: opts.tol,
        });
    }
    let (value_at_x0, immediate_stop_at_zero) = origin_value(model, &table, opts.formula);
    Ok(DetectPolicy {
        table,
        value_at_x0,
        immediate_stop_at_zero,
        formula: opts.formula,
    })
}

/// Optimal value when at most `horizon` observations may be taken.
pub fn horizon_value(model: &ModelSpec, horizon: usize, formula: OriginFormula) -> f64 {
    if horizon == 0 {
        return origin_terms(model, &RsTable::initial(model), formula).0;
    }
    origin_value(model, &rs_after(model, horizon - 1), formula).0
}

/// Uniform nodes `0, 1/(n−1), …, 1`.
pub fn uniform_nodes(n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

/// Reporting grid over `α` and `β = t·α`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorGrid {
    pub alpha_nodes: Vec<f64>,
    /// Fractions `t = β / α`.
    pub beta_ratio_nodes: Vec<f64>,
}

impl PosteriorGrid {
    pub fn uniform(n_alpha: usize, n_beta: usize) -> Result<Self> {
        if n_alpha < 2 || n_beta < 2 {
            return Err(DisorderError::InvalidArgument(format!(
                "grid needs at least 2 nodes per axis, got {n_alpha} x {n_beta}"
            )));
        }
        Ok(Self {
            alpha_nodes: uniform_nodes(n_alpha),
            beta_ratio_nodes: uniform_nodes(n_beta),
        })
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.alpha_nodes
            .iter()
            .flat_map(move |&a| self.beta_ratio_nodes.iter().map(move |&t| (a, t * a)))
    }
}

/// Serialisable policy with values sampled on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectArtifact {
    pub schema: u32,
    pub problem: String,
    pub states: Vec<String>,
    pub grid: PosteriorGrid,
    /// `R[z][i][j]` at `(α_i, t_j·α_i)`, flattened row-major.
    pub r: Vec<f64>,
    pub s: Vec<f64>,
    pub stop: Vec<bool>,
    pub value_at_x0: f64,
    pub immediate_stop_at_zero: bool,
    pub formula: OriginFormula,
    pub iterations: usize,
    pub delta: f64,
    pub tol: f64,
    pub converged: bool,
    pub envelopes: Vec<Envelope>,
}

impl DetectArtifact {
    pub fn new(model: &ModelSpec, policy: &DetectPolicy, grid: &PosteriorGrid) -> Self {
        let (mut r, mut s, mut stop) = (Vec::new(), Vec::new(), Vec::new());
        for z in 0..model.n_states() {
            for (alpha, beta) in grid.points() {
                let l = policy.table.line(model, z, alpha, beta);
                r.push(l.r);
                s.push(l.s);
                stop.push(policy.in_stop_set(model, z, alpha, beta));
            }
        }
        let t = &policy.table;
        Self {
            schema: 1,
            problem: "detect".into(),
            states: model.space.labels().to_vec(),
            grid: grid.clone(),
            r,
            s,
            stop,
            value_at_x0: policy.value_at_x0,
            immediate_stop_at_zero: policy.immediate_stop_at_zero,
            formula: policy.formula,
            iterations: t.iterations,
            delta: t.delta,
            tol: t.tol,
            converged: t.converged,
            envelopes: t.envelopes.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::m2;
    use crate::model::PriorParams;

    #[test]
    fn reward_examples() {
        assert_eq!(reward_h(0.5, 0.5).unwrap(), 0.0);
        assert_eq!(reward_h(1.0, 0.0).unwrap(), 1.0);
        let p = m2().prior;
        assert!((reward_h(p.pi, p.pi * p.rho).unwrap() - p.pi * (1.0 - p.rho)).abs() < 1e-16);
        assert!(reward_h(0.2, 0.3).is_err());
    }

    #[test]
    fn first_operator_closed_form() {
        let m = m2();
        let t0 = RsTable::initial(&m);
        // (α, β, γ) = (0.5, 0.5, 0.125) with ρ = 0.25.
        let v = bellman_t(&m, &t0, 0, 0.5, 0.5).unwrap();
        assert!((v - 0.0375).abs() < 1e-15);
        assert_eq!(bellman_t(&m, &t0, 1, 1.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn values_grow_with_sweeps() {
        let m = m2();
        let mut t = RsTable::initial(&m);
        for _ in 0..30 {
            let next = t.sweep(&m);
            for z in 0..2 {
                for i in 0..=50 {
                    let u = i as f64 / 50.0;
                    assert!(next.envelopes[z].at(u) >= t.envelopes[z].at(u) - 1e-12);
                    assert!(next.envelopes[z].at(u) <= 1.0 + 1e-12);
                }
            }
            t = next;
        }
    }

    #[test]
    fn tables_match_direct_recursion() {
        let m = m2();
        for k in 0..6 {
            let t = rs_after(&m, k);
            for z in 0..2 {
                for i in 0..=20 {
                    let c = i as f64 / 20.0;
                    let a = (1.0 - c) * 0.75;
                    let exact = truncated_line(&m, k, z, a, c).eval(a, c);
                    assert!((t.envelopes[z].eval(a, c) - exact).abs() < 1e-12, "k={k} z={z} c={c}");
                }
            }
        }
    }

    #[test]
    fn no_middle_regime_means_zero_value() {
        let m = m2().with_prior(PriorParams::new(0.0, 1.0, 0.9, 0.8));
        let pol = solve_detect(&m, &DetectOptions::default()).unwrap();
        assert!(pol.value_at_x0.abs() < 1e-15);
    }

    #[test]
    fn converges_on_m2() {
        let m = m2();
        let pol = solve_detect(&m, &DetectOptions::default()).unwrap();
        assert!(pol.table.converged);
        assert!(pol.value_at_x0 > 0.075 && pol.value_at_x0 < 1.0);
    }

    #[test]
    fn forced_nonconvergence() {
        let m = m2();
        let opts = DetectOptions {
            tol: 1e-15,
            max_iter: 5,
            ..Default::default()
        };
        assert!(matches!(solve_detect(&m, &opts), Err(DisorderError::NonConvergence { iterations: 5, .. })));
        let opts = DetectOptions {
            allow_nonconverged: true,
            ..opts
        };
        assert!(!solve_detect(&m, &opts).unwrap().table.converged);
    }
}
