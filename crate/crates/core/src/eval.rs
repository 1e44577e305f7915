//! Monte Carlo success probabilities of stopping rules, and baselines.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detect::DetectPolicy;
use crate::double::D00Policy;
use crate::error::{DisorderError, Result};
use crate::filter::{csv_err, filter_step, PosteriorState};
use crate::model::{ModelSpec, PriorParams};
use crate::simulate::{draw_disorders, run_rng, PathStream, TransitionSampler};

/// Two-sided 99% normal quantile.
pub const Z99: f64 = 2.576;
/// One-sided 0.001 normal quantile.
pub const Z_ONE_SIDED_001: f64 = 3.09;
/// Tail probability of `θ₂` beyond the horizon that triggers a warning.
pub const HORIZON_TAIL_WARN: f64 = 1e-3;

/// Rule for a single stop, deciding from the filter state.
pub trait DetectRule: Sync {
    fn name(&self) -> String;
    fn stops(&self, model: &ModelSpec, s: &PosteriorState) -> bool;
}

/// Rule for a pair of stops `τ ≤ σ`.
pub trait D00Rule: Sync {
    fn name(&self) -> String;
    fn first_stops(&self, model: &ModelSpec, s: &PosteriorState) -> bool;
    /// Second stop at `s.n ≥ m` given `τ = m`.
    fn second_stops(&self, model: &ModelSpec, m: usize, s: &PosteriorState) -> bool;
}

impl DetectRule for DetectPolicy {
    fn name(&self) -> String {
        "optimal".into()
    }

    fn stops(&self, model: &ModelSpec, s: &PosteriorState) -> bool {
        DetectPolicy::stops(self, model, s)
    }
}

impl D00Rule for D00Policy {
    fn name(&self) -> String {
        "optimal".into()
    }

    fn first_stops(&self, _: &ModelSpec, s: &PosteriorState) -> bool {
        D00Policy::first_stops(self, &[s.x_prev, s.x_curr], s.n.min(1))
    }

    fn second_stops(&self, model: &ModelSpec, m: usize, s: &PosteriorState) -> bool {
        // Only the last two observations matter; reindex to a 2-element window.
        let states = [s.x_prev, s.x_curr];
        match (m == s.n, m) {
            (true, 0) => D00Policy::second_stops(self, model, &states[1..], 0, 0),
            (true, _) => D00Policy::second_stops(self, model, &states, 1, 1),
            (false, _) => D00Policy::second_stops(self, model, &states, 0, 1),
        }
    }
}

/// Stops at a fixed time.
pub struct FixedTime(pub usize);

impl DetectRule for FixedTime {
    fn name(&self) -> String {
        format!("fixed_n={}", self.0)
    }

    fn stops(&self, _: &ModelSpec, s: &PosteriorState) -> bool {
        s.n >= self.0
    }
}

/// Stops once `Π¹ − Π²` reaches a level.
pub struct BetweenThreshold(pub f64);

impl DetectRule for BetweenThreshold {
    fn name(&self) -> String {
        format!("threshold={}", self.0)
    }

    fn stops(&self, _: &ModelSpec, s: &PosteriorState) -> bool {
        s.between() >= self.0
    }
}

/// Stops once the in-between phase is the most probable of the three.
pub struct ArgmaxPhase;

impl DetectRule for ArgmaxPhase {
    fn name(&self) -> String {
        "argmax".into()
    }

    fn stops(&self, _: &ModelSpec, s: &PosteriorState) -> bool {
        let z = s.between();
        z >= 1.0 - s.pi1 && z >= s.pi2
    }
}

pub struct NeverStop;

impl DetectRule for NeverStop {
    fn name(&self) -> String {
        "never".into()
    }

    fn stops(&self, _: &ModelSpec, _: &PosteriorState) -> bool {
        false
    }
}

/// `τ = first n with Π¹ₙ ≥ c`, `σ = first n ≥ τ with Π²ₙ ≥ c`.
pub struct PosteriorThresholds(pub f64);

impl D00Rule for PosteriorThresholds {
    fn name(&self) -> String {
        format!("threshold={}", self.0)
    }

    fn first_stops(&self, _: &ModelSpec, s: &PosteriorState) -> bool {
        s.pi1 >= self.0
    }

    fn second_stops(&self, _: &ModelSpec, _: usize, s: &PosteriorState) -> bool {
        s.pi2 >= self.0
    }
}

/// `τ = i`, `σ = j`.
pub struct FixedPair(pub usize, pub usize);

impl D00Rule for FixedPair {
    fn name(&self) -> String {
        format!("fixed_pair=({},{})", self.0, self.1)
    }

    fn first_stops(&self, _: &ModelSpec, s: &PosteriorState) -> bool {
        s.n >= self.0
    }

    fn second_stops(&self, _: &ModelSpec, _: usize, s: &PosteriorState) -> bool {
        s.n >= self.1
    }
}

/// Exact success probability of stopping at time `n`:
/// `P(θ₁ ≤ n < θ₂) = P(θ₂ > n) − P(θ₁ > n)`.
pub fn fixed_time_success(prior: &PriorParams, n: usize) -> f64 {
    prior.theta2_tail(n as u64) - prior.theta1_tail(n as u64)
}

/// Detection baselines: fixed times, thresholds on `Π¹ − Π²`, argmax, and
/// the two trivial rules.
pub fn detect_baselines() -> Vec<Box<dyn DetectRule>> {
    let mut out: Vec<Box<dyn DetectRule>> = Vec::new();
    for n in [0, 1, 2, 3, 5, 8, 12] {
        out.push(Box::new(FixedTime(n)));
    }
    for c in [0.3, 0.5, 0.7] {
        out.push(Box::new(BetweenThreshold(c)));
    }
    out.push(Box::new(ArgmaxPhase));
    out.push(Box::new(NeverStop));
    out
}

/// Double-stop baselines: posterior thresholds and fixed pairs.
pub fn d00_baselines() -> Vec<Box<dyn D00Rule>> {
    let mut out: Vec<Box<dyn D00Rule>> = Vec::new();
    for c in [0.3, 0.5, 0.7] {
        out.push(Box::new(PosteriorThresholds(c)));
    }
    for (i, j) in [(0, 0), (1, 2), (2, 4), (3, 6), (5, 8)] {
        out.push(Box::new(FixedPair(i, j)));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: u32,
    pub problem: String,
    pub policy: String,
    pub model: String,
    pub runs: u64,
    pub successes: u64,
    pub estimate: f64,
    pub std_error: f64,
    pub ci99: [f64; 2],
    pub seed: u64,
    pub horizon: usize,
    pub warning: Option<String>,
}

impl EvalReport {
    fn new(problem: &str, policy: String, model: &ModelSpec, model_id: &str, runs: u64, successes: u64, seed: u64, horizon: usize) -> Self {
        let estimate = successes as f64 / runs as f64;
        let std_error = (estimate * (1.0 - estimate) / runs as f64).sqrt();
        let tail = model.prior.theta2_tail(horizon as u64);
        let warning = (tail >= HORIZON_TAIL_WARN)
            .then(|| format!("horizon too short: P(theta2 > {horizon}) = {tail:.3e}"));
        Self {
            schema: 1,
            problem: problem.into(),
            policy,
            model: model_id.into(),
            runs,
            successes,
            estimate,
            std_error,
            ci99: [
                (estimate - Z99 * std_error).max(0.0),
                (estimate + Z99 * std_error).min(1.0),
            ],
            seed,
            horizon,
            warning,
        }
    }

    /// Whether `value` lies within `z` standard errors of the estimate.
    pub fn agrees_with(&self, value: f64, z: f64) -> bool {
        (self.estimate - value).abs() <= z * self.std_error + 1e-12
    }
}

/// One-sided z statistic for "`other` beats `this`".
pub fn excess_z(this: &EvalReport, other: &EvalReport) -> f64 {
    let diff = other.estimate - this.estimate;
    let se = (this.std_error.powi(2) + other.std_error.powi(2)).sqrt();
    if se > 0.0 {
        diff / se
    } else if diff > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// `this` is not significantly worse than `other` at level 0.001.
pub fn not_worse(this: &EvalReport, other: &EvalReport) -> bool {
    excess_z(this, other) <= Z_ONE_SIDED_001
}

fn check_args(runs: u64, horizon: usize) -> Result<()> {
    if runs == 0 || horizon == 0 {
        return Err(DisorderError::InvalidArgument("runs and horizon must be positive".into()));
    }
    Ok(())
}

struct Run<'a, R: Rng> {
    model: &'a ModelSpec,
    path: PathStream<'a, R>,
    state: PosteriorState,
}

impl<'a, R: Rng> Run<'a, R> {
    fn advance(&mut self) -> Result<()> {
        let y = self.path.next().expect("endless stream");
        self.state = filter_step(self.model, &self.state, y)?;
        Ok(())
    }
}

fn start_run<'a>(model: &'a ModelSpec, sampler: &'a TransitionSampler, seed: u64, i: u64) -> Run<'a, rand_chacha::ChaCha8Rng> {
    let mut rng = run_rng(seed, i);
    let (t1, t2) = draw_disorders(&model.prior, &mut rng);
    Run {
        model,
        path: PathStream::new(sampler, model.x0, t1, t2, rng),
        state: PosteriorState::initial(model),
    }
}

/// Estimates `P(θ₁ ≤ τ < θ₂, τ ≤ horizon)`.
pub fn evaluate_detect(
    model: &ModelSpec,
    model_id: &str,
    rule: &dyn DetectRule,
    runs: u64,
    horizon: usize,
    seed: u64,
) -> Result<EvalReport> {
    check_args(runs, horizon)?;
    let sampler = TransitionSampler::new(model);
    let successes: u64 = (0..runs)
        .into_par_iter()
        .map(|i| -> Result<u64> {
            let mut run = start_run(model, &sampler, seed, i);
            loop {
                if rule.stops(model, &run.state) {
                    let (t1, t2) = run.path.theta();
                    let n = run.state.n as u64;
                    return Ok((t1 <= n && n < t2) as u64);
                }
                if run.state.n == horizon {
                    return Ok(0);
                }
                run.advance()?;
            }
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(EvalReport::new("detect", rule.name(), model, model_id, runs, successes, seed, horizon))
}

/// Estimates `P(τ = θ₁, σ = θ₂, σ ≤ horizon)`.
pub fn evaluate_d00(
    model: &ModelSpec,
    model_id: &str,
    rule: &dyn D00Rule,
    runs: u64,
    horizon: usize,
    seed: u64,
) -> Result<EvalReport> {
    check_args(runs, horizon)?;
    let sampler = TransitionSampler::new(model);
    let successes: u64 = (0..runs)
        .into_par_iter()
        .map(|i| -> Result<u64> {
            let mut run = start_run(model, &sampler, seed, i);
            let (t1, t2) = run.path.theta();
            while !rule.first_stops(model, &run.state) {
                if run.state.n == horizon {
                    return Ok(0);
                }
                run.advance()?;
            }
            let m = run.state.n;
            if m as u64 != t1 {
                return Ok(0);
            }
            while !rule.second_stops(model, m, &run.state) {
                if run.state.n == horizon {
                    return Ok(0);
                }
                run.advance()?;
            }
            Ok((run.state.n as u64 == t2) as u64)
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(EvalReport::new("d00", rule.name(), model, model_id, runs, successes, seed, horizon))
}

/// Writes reports as CSV rows.
pub fn write_reports_csv<W: Write>(out: W, reports: &[EvalReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "problem", "policy", "model", "runs", "successes", "estimate", "std_error", "ci99_low", "ci99_high",
        "seed", "horizon", "warning",
    ])
    .map_err(csv_err)?;
    for r in reports {
        w.write_record([
            r.problem.clone(),
            r.policy.clone(),
            r.model.clone(),
            r.runs.to_string(),
            r.successes.to_string(),
            r.estimate.to_string(),
            r.std_error.to_string(),
            r.ci99[0].to_string(),
            r.ci99[1].to_string(),
            r.seed.to_string(),
            r.horizon.to_string(),
            r.warning.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::m2;

    #[test]
    fn stop_at_zero_recovers_prior_mass() {
        let m = m2().with_prior(PriorParams::new(0.4, 0.0, 0.9, 0.8));
        let r = evaluate_detect(&m, "m2", &FixedTime(0), 100_000, 100, 5).unwrap();
        assert!(r.agrees_with(0.4, 3.29), "{r:?}");
    }

    #[test]
    fn never_stopping_never_succeeds() {
        let m = m2();
        let r = evaluate_detect(&m, "m2", &NeverStop, 1000, 50, 5).unwrap();
        assert_eq!(r.successes, 0);
        assert!(r.warning.is_some());
    }

    #[test]
    fn report_arithmetic() {
        let m = m2();
        let r = EvalReport::new("detect", "x".into(), &m, "m2", 100, 30, 0, 400);
        assert_eq!(r.estimate, 0.3);
        assert!((r.std_error - (0.21f64 / 100.0).sqrt()).abs() < 1e-15);
        assert!((r.ci99[0] - (0.3 - 2.576 * r.std_error)).abs() < 1e-15);
        assert!(r.warning.is_none());
    }

    #[test]
    fn reproducible() {
        let m = m2();
        let a = evaluate_detect(&m, "m2", &BetweenThreshold(0.5), 2000, 200, 9).unwrap();
        let b = evaluate_detect(&m, "m2", &BetweenThreshold(0.5), 2000, 200, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fixed_time_success_matches_joint_pmf() {
        let p = m2().prior;
        for n in 0..6u64 {
            let mut direct = 0.0;
            for j in 0..=n {
                for k in n + 1..200 {
                    direct += p.joint_pmf(j, k).unwrap();
                }
            }
            assert!((fixed_time_success(&p, n as usize) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn ci_coverage_of_fixed_time() {
        let m = m2();
        let exact = fixed_time_success(&m.prior, 4);
        let covered = (0..100u64)
            .filter(|&rep| {
                let r = evaluate_detect(&m, "m2", &FixedTime(4), 2000, 10, 1000 + rep).unwrap();
                r.ci99[0] <= exact && exact <= r.ci99[1]
            })
            .count();
        assert!(covered >= 95, "{covered} of 100");
    }
}
