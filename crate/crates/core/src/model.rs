//! Observation model: state space with reference measure, the three regime
//! kernels and the geometric prior of the two disorder moments.
//!
//! Kernels are stored as densities against the reference measure `μ`, so a
//! finite chain (counting measure) and a quadrature-discretised continuous
//! model share one representation: `P(X₁ = y | X₀ = x) = f_x(y) μ(y)`.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DisorderError, Result};

/// Row sums of `f_x(·) μ(·)` must be within this distance of one.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Segment of the observation sequence a transition is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    /// Before the first disorder (`n < θ₁`).
    Pre = 0,
    /// Between the disorders (`θ₁ ≤ n < θ₂`).
    Middle = 1,
    /// After the second disorder (`n ≥ θ₂`).
    Post = 2,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Pre, Regime::Middle, Regime::Post];

    /// Regime in force at step `n` given the disorder moments.
    pub fn at(n: u64, theta1: u64, theta2: u64) -> Regime {
        if n < theta1 {
            Regime::Pre
        } else if n < theta2 {
            Regime::Middle
        } else {
            Regime::Post
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f{}", self.index())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    labels: Vec<String>,
    weights: Vec<f64>,
}

impl StateSpace {
    pub fn new(labels: Vec<String>, weights: Vec<f64>) -> Self {
        Self { labels, weights }
    }

    /// `n` states labelled `0..n` with counting measure.
    pub fn counting(n: usize) -> Self {
        Self {
            labels: (0..n).map(|i| i.to_string()).collect(),
            weights: vec![1.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn weight(&self, y: usize) -> f64 {
        self.weights[y]
    }

    pub fn label(&self, x: usize) -> &str {
        &self.labels[x]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// One-step transition density `f_x(y)` against the reference measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    n: usize,
    density: Vec<f64>,
}

impl Kernel {
    /// Build from rows; ragged input is kept as-is and reported by validation.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            // NaN marks the shape error for validation.
            return Self {
                n,
                density: vec![f64::NAN; n * n],
            };
        }
        Self {
            n,
            density: rows.concat(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.density[x * self.n + y]
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.density[x * self.n..(x + 1) * self.n]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|x| self.row(x).to_vec()).collect()
    }
}

/// Prior of the disorder moments.
///
/// `P(θ₁ = 0) = π`, `P(θ₁ = j) = (1-π) p₁^{j-1} q₁` for `j ≥ 1`;
/// `P(θ₂ = θ₁ | θ₁) = ρ`, `P(θ₂ = k | θ₁ = j) = (1-ρ) p₂^{k-j-1} q₂` for `k > j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorParams {
    pub pi: f64,
    pub rho: f64,
    pub p1: f64,
    pub p2: f64,
}

impl PriorParams {
    pub fn new(pi: f64, rho: f64, p1: f64, p2: f64) -> Self {
        Self { pi, rho, p1, p2 }
    }

    #[inline]
    pub fn q1(&self) -> f64 {
        1.0 - self.p1
    }

    #[inline]
    pub fn q2(&self) -> f64 {
        1.0 - self.p2
    }

    /// `P(θ₁ = j)`.
    pub fn theta1_pmf(&self, j: u64) -> f64 {
        if j == 0 {
            self.pi
        } else {
            (1.0 - self.pi) * powu(self.p1, j - 1) * self.q1()
        }
    }

    /// `P(θ₁ > j)`.
    pub fn theta1_tail(&self, j: u64) -> f64 {
        (1.0 - self.pi) * powu(self.p1, j)
    }

    /// `P(θ₂ = k | θ₁ = j)` for `k ≥ j`.
    pub fn theta2_given_theta1(&self, j: u64, k: u64) -> f64 {
        if k == j {
            self.rho
        } else {
            (1.0 - self.rho) * powu(self.p2, k - j - 1) * self.q2()
        }
    }

    /// `P(θ₁ = j, θ₂ = k)`; errors when `k < j`.
    pub fn joint_pmf(&self, j: u64, k: u64) -> Result<f64> {
        if k < j {
            return Err(DisorderError::InvalidArgument(format!(
                "joint pmf needs theta1 <= theta2, got ({j}, {k})"
            )));
        }
        Ok(self.theta1_pmf(j) * self.theta2_given_theta1(j, k))
    }

    /// `P(θ₂ > n)`, summed in closed form.
    pub fn theta2_tail(&self, n: u64) -> f64 {
        // θ₁ > n, or θ₁ = j ≤ n and θ₂ - j - 1 ≥ n - j geometric.
        let mut tail = self.theta1_tail(n);
        for j in 0..=n {
            tail += self.theta1_pmf(j) * (1.0 - self.rho) * powu(self.p2, n - j);
        }
        tail
    }
}

/// `P(θ₁ = j)`.
pub fn prior_theta1_pmf(prior: &PriorParams, j: u64) -> f64 {
    prior.theta1_pmf(j)
}

/// `P(θ₁ = j, θ₂ = k)`.
pub fn prior_joint_pmf(prior: &PriorParams, j: u64, k: u64) -> Result<f64> {
    prior.joint_pmf(j, k)
}

#[inline]
pub(crate) fn powu(base: f64, exp: u64) -> f64 {
    base.powi(exp.min(i32::MAX as u64) as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub space: StateSpace,
    pub f0: Kernel,
    pub f1: Kernel,
    pub f2: Kernel,
    pub prior: PriorParams,
    pub x0: usize,
}

impl ModelSpec {
    pub fn new(
        space: StateSpace,
        kernels: [Kernel; 3],
        prior: PriorParams,
        x0: usize,
    ) -> Self {
        let [f0, f1, f2] = kernels;
        Self {
            space,
            f0,
            f1,
            f2,
            prior,
            x0,
        }
    }

    /// Validates and returns the model, or the full list of violations.
    pub fn validated(self) -> Result<Self> {
        let report = validate(&self);
        if report.is_valid() {
            Ok(self)
        } else {
            Err(DisorderError::InvalidModel(report))
        }
    }

    pub fn n_states(&self) -> usize {
        self.space.len()
    }

    pub fn kernel(&self, regime: Regime) -> &Kernel {
        match regime {
            Regime::Pre => &self.f0,
            Regime::Middle => &self.f1,
            Regime::Post => &self.f2,
        }
    }

    #[inline]
    pub fn density(&self, regime: Regime, x: usize, y: usize) -> f64 {
        self.kernel(regime).get(x, y)
    }

    #[inline]
    pub fn weight(&self, y: usize) -> f64 {
        self.space.weight(y)
    }

    /// Probability mass `f^r_x(y) μ(y)` of the transition.
    #[inline]
    pub fn transition_mass(&self, regime: Regime, x: usize, y: usize) -> f64 {
        self.density(regime, x, y) * self.space.weight(y)
    }

    pub fn check_state(&self, x: usize) -> Result<()> {
        if x < self.n_states() {
            Ok(())
        } else {
            Err(DisorderError::StateOutOfRange {
                index: x,
                len: self.n_states(),
            })
        }
    }

    pub fn from_config(config: &ModelConfig) -> Result<Self> {
        let labels: Vec<String> = config.states.iter().map(label_of).collect();
        let space = StateSpace::new(labels, config.weights.clone());
        let x0_label = label_of(&config.x0);
        let x0 = space
            .index_of(&x0_label)
            .ok_or(DisorderError::UnknownState(x0_label))?;
        Ok(Self {
            f0: Kernel::from_rows(&config.f0),
            f1: Kernel::from_rows(&config.f1),
            f2: Kernel::from_rows(&config.f2),
            space,
            prior: config.prior,
            x0,
        })
    }

    pub fn to_config(&self) -> ModelConfig {
        ModelConfig {
            states: self
                .space
                .labels()
                .iter()
                .map(|l| match l.parse::<i64>() {
                    Ok(v) => serde_json::Value::from(v),
                    Err(_) => serde_json::Value::from(l.clone()),
                })
                .collect(),
            weights: self.space.weights().to_vec(),
            f0: self.f0.rows(),
            f1: self.f1.rows(),
            f2: self.f2.rows(),
            prior: self.prior,
            x0: match self.space.label(self.x0).parse::<i64>() {
                Ok(v) => serde_json::Value::from(v),
                Err(_) => serde_json::Value::from(self.space.label(self.x0).to_string()),
            },
        }
    }

    /// Reads a JSON model file; the result is not yet validated.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: ModelConfig = serde_json::from_str(text)?;
        Self::from_config(&config)?.validated()
    }

    /// Copy of the model with the prior replaced.
    pub fn with_prior(&self, prior: PriorParams) -> Self {
        Self {
            prior,
            ..self.clone()
        }
    }
}

fn label_of(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// On-disk model description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub states: Vec<serde_json::Value>,
    pub weights: Vec<f64>,
    pub f0: Vec<Vec<f64>>,
    pub f1: Vec<Vec<f64>>,
    pub f2: Vec<Vec<f64>>,
    pub prior: PriorParams,
    pub x0: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptySpace,
    WeightCount { states: usize, weights: usize },
    NonPositiveWeight { state: usize, weight: f64 },
    DuplicateState(String),
    KernelShape { regime: Regime, rows: usize, expected: usize },
    InvalidDensity { regime: Regime, from: usize, to: usize, value: f64 },
    RowNotNormalized { regime: Regime, row: usize, sum: f64, deficit: f64 },
    ZeroPattern { from: usize, to: usize, densities: [f64; 3] },
    ProbabilityOutOfRange { name: &'static str, value: f64 },
    NonTerminating { name: &'static str },
    InitialState { index: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptySpace => write!(f, "state space is empty"),
            Violation::WeightCount { states, weights } => {
                write!(f, "{states} states but {weights} weights")
            }
            Violation::NonPositiveWeight { state, weight } => {
                write!(f, "state {state} has non-positive weight {weight}")
            }
            Violation::DuplicateState(label) => write!(f, "duplicate state {label:?}"),
            Violation::KernelShape {
                regime,
                rows,
                expected,
            } => write!(f, "kernel {regime} is not {expected}x{expected} (has {rows} rows or ragged rows)"),
            Violation::InvalidDensity {
                regime,
                from,
                to,
                value,
            } => write!(f, "kernel {regime} entry ({from}, {to}) = {value} is not a finite nonnegative number"),
            Violation::RowNotNormalized {
                regime,
                row,
                sum,
                deficit,
            } => write!(f, "kernel {regime} row {row} integrates to {sum} (deficit {deficit:e})"),
            Violation::ZeroPattern {
                from,
                to,
                densities,
            } => write!(
                f,
                "transition ({from}, {to}) has densities {densities:?}; zeros must be shared by all three kernels"
            ),
            Violation::ProbabilityOutOfRange { name, value } => {
                write!(f, "prior parameter {name} = {value} is outside [0, 1]")
            }
            Violation::NonTerminating { name } => write!(
                f,
                "prior parameter {name} = 1 makes the disorder moment infinite with positive probability"
            ),
            Violation::InitialState { index } => write!(f, "initial state {index} is outside the space"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "model is valid");
        }
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

/// Lists every violated model invariant; an empty report means the model is usable.
pub fn validate(model: &ModelSpec) -> ValidationReport {
    let mut out = Vec::new();
    let n = model.space.len();
    if n == 0 {
        out.push(Violation::EmptySpace);
    }
    if model.space.weights().len() != n {
        out.push(Violation::WeightCount {
            states: n,
            weights: model.space.weights().len(),
        });
    }
    for (state, &weight) in model.space.weights().iter().enumerate() {
        if !(weight > 0.0 && weight.is_finite()) {
            out.push(Violation::NonPositiveWeight { state, weight });
        }
    }
    let mut seen = HashSet::new();
    for label in model.space.labels() {
        if !seen.insert(label) {
            out.push(Violation::DuplicateState(label.clone()));
        }
    }
    if model.x0 >= n && n > 0 {
        out.push(Violation::InitialState { index: model.x0 });
    }

    let shapes_ok = Regime::ALL.iter().all(|&r| {
        let k = model.kernel(r);
        let ok = k.dim() == n && k.density.iter().all(|v| !v.is_nan());
        if !ok {
            out.push(Violation::KernelShape {
                regime: r,
                rows: k.dim(),
                expected: n,
            });
        }
        ok
    });
    let weights_ok = model.space.weights().len() == n;

    if shapes_ok && weights_ok {
        for &r in &Regime::ALL {
            let k = model.kernel(r);
            for x in 0..n {
                let mut sum = 0.0;
                for y in 0..n {
                    let v = k.get(x, y);
                    if !(v >= 0.0 && v.is_finite()) {
                        out.push(Violation::InvalidDensity {
                            regime: r,
                            from: x,
                            to: y,
                            value: v,
                        });
                    }
                    sum += v * model.space.weight(y);
                }
                if (sum - 1.0).abs() > NORMALIZATION_TOL {
                    out.push(Violation::RowNotNormalized {
                        regime: r,
                        row: x,
                        sum,
                        deficit: 1.0 - sum,
                    });
                }
            }
        }
        for x in 0..n {
            for y in 0..n {
                let d = [model.f0.get(x, y), model.f1.get(x, y), model.f2.get(x, y)];
                let zeros = d.iter().filter(|&&v| v == 0.0).count();
                if zeros != 0 && zeros != 3 {
                    out.push(Violation::ZeroPattern {
                        from: x,
                        to: y,
                        densities: d,
                    });
                }
            }
        }
    }

    let p = &model.prior;
    for (name, value) in [("pi", p.pi), ("rho", p.rho), ("p1", p.p1), ("p2", p.p2)] {
        if !(0.0..=1.0).contains(&value) {
            out.push(Violation::ProbabilityOutOfRange { name, value });
        }
    }
    if p.p1 == 1.0 {
        out.push(Violation::NonTerminating { name: "p1" });
    }
    if p.p2 == 1.0 {
        out.push(Violation::NonTerminating { name: "p2" });
    }
    ValidationReport { violations: out }
}
