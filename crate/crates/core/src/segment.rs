//! Joint densities of an observed prefix split by where the disorders fall,
//! the normaliser `Sₙ` and the one-step predictive mixture `H`.
//!
//! Every configuration of `(θ₁, θ₂)` relative to the horizon `n` lands in
//! exactly one of four buckets:
//!
//! | bucket            | event              |
//! |-------------------|--------------------|
//! | `d_both_before_n` | `θ₁ ≤ θ₂ ≤ n`      |
//! | `d_first_only`    | `θ₁ ≤ n < θ₂`      |
//! | `d_equal_after_n` | `n < θ₁ = θ₂`      |
//! | `d_both_after_n`  | `n < θ₁ < θ₂`      |
//!
//! Placements with `θ₁ = 0 < θ₂` go to the first two buckets according to
//! `θ₂`. Disorders beyond the horizon are summed in closed form.

use serde::Serialize;

use crate::error::{DisorderError, Result};
use crate::model::{powu, ModelSpec, Regime};

/// Observed states `x₀, …, xₙ`; `x₀` is the model's initial state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrajectoryPrefix {
    states: Vec<usize>,
}

impl TrajectoryPrefix {
    pub fn new(model: &ModelSpec, states: Vec<usize>) -> Result<Self> {
        if states.is_empty() {
            return Err(DisorderError::InvalidArgument(
                "trajectory prefix must contain x0".into(),
            ));
        }
        for &s in &states {
            model.check_state(s)?;
        }
        if states[0] != model.x0 {
            return Err(DisorderError::InvalidArgument(format!(
                "prefix starts at state {} but the model starts at {}",
                states[0], model.x0
            )));
        }
        Ok(Self { states })
    }

    /// Prefix `x₀` followed by `observations`.
    pub fn from_observations(model: &ModelSpec, observations: &[usize]) -> Result<Self> {
        let mut states = Vec::with_capacity(observations.len() + 1);
        states.push(model.x0);
        states.extend_from_slice(observations);
        Self::new(model, states)
    }

    /// Number of transitions `n`.
    pub fn len(&self) -> usize {
        self.states.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SegmentDensityBundle {
    pub d_both_before_n: f64,
    pub d_first_only: f64,
    pub d_equal_after_n: f64,
    pub d_both_after_n: f64,
}

impl SegmentDensityBundle {
    pub fn total(&self) -> f64 {
        self.d_both_before_n + self.d_first_only + self.d_equal_after_n + self.d_both_after_n
    }
}

/// Prefix products of the pre-disorder kernel and suffix products of the
/// post-disorder kernel; middle segments are accumulated in the loops.
struct Factors {
    f: [Vec<f64>; 3],
    /// `pre[s] = Π_{i=1}^{s} f⁰_{x_{i-1}}(x_i)`.
    pre: Vec<f64>,
    /// `post[s] = Π_{i=s}^{n} f²_{x_{i-1}}(x_i)`, with `post[n+1] = 1`.
    post: Vec<f64>,
}

impl Factors {
    fn new(model: &ModelSpec, states: &[usize], one: f64, mul: impl Fn(f64, f64) -> f64, map: impl Fn(f64) -> f64) -> Self {
        let n = states.len() - 1;
        // f[r][s] for s in 1..=n, index 0 unused.
        let f = Regime::ALL.map(|r| {
            let mut v = vec![one; n + 1];
            for s in 1..=n {
                v[s] = map(model.density(r, states[s - 1], states[s]));
            }
            v
        });
        let mut pre = vec![one; n + 1];
        for s in 1..=n {
            pre[s] = mul(pre[s - 1], f[0][s]);
        }
        let mut post = vec![one; n + 2];
        for s in (1..=n).rev() {
            post[s] = mul(post[s + 1], f[2][s]);
        }
        Self { f, pre, post }
    }
}

/// The four segment densities of the prefix (`n ≥ 1`).
pub fn segment_densities(model: &ModelSpec, prefix: &TrajectoryPrefix) -> Result<SegmentDensityBundle> {
    let n = prefix.len();
    if n == 0 {
        return Err(DisorderError::InvalidArgument(
            "segment densities need at least one transition".into(),
        ));
    }
    let p = &model.prior;
    let (pi, rho, p1, q1, p2, q2) = (p.pi, p.rho, p.p1, p.q1(), p.p2, p.q2());
    let fx = Factors::new(model, prefix.states(), 1.0, |a, b| a * b, |v| v);
    let mid = &fx.f[Regime::Middle.index()];

    let mut both_before = 0.0;
    let mut first_only = 0.0;

    // θ₁ = j ≤ n with prior weight and pre-disorder likelihood folded into w.
    for j in 0..=n {
        let (w, start) = if j == 0 {
            (pi, 1)
        } else {
            ((1.0 - pi) * powu(p1, j as u64 - 1) * q1 * fx.pre[j - 1], j)
        };
        both_before += w * rho * fx.post[start];
        // Middle segment start..k-1 grows with k.
        let mut middle = 1.0;
        for k in start..=n {
            if k > start {
                middle *= mid[k - 1];
            }
            if k > j {
                both_before += w * (1.0 - rho) * powu(p2, (k - j - 1) as u64) * q2 * middle * fx.post[k];
            }
        }
        middle *= mid[n];
        first_only += w * (1.0 - rho) * powu(p2, (n - j) as u64) * middle;
    }

    // θ₁ > n.
    let pre = (1.0 - pi) * powu(p1, n as u64) * fx.pre[n];
    Ok(SegmentDensityBundle {
        d_both_before_n: both_before,
        d_first_only: first_only,
        d_equal_after_n: rho * pre,
        d_both_after_n: (1.0 - rho) * pre,
    })
}

/// Joint density `Sₙ` of `x₁..xₙ` given `x₀` (with `S₀ = 1`).
pub fn normalizer_s(model: &ModelSpec, prefix: &TrajectoryPrefix) -> Result<f64> {
    if prefix.is_empty() {
        return Ok(1.0);
    }
    Ok(segment_densities(model, prefix)?.total())
}

/// Natural logarithms of the four segment densities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogSegmentDensityBundle {
    pub ln_both_before_n: f64,
    pub ln_first_only: f64,
    pub ln_equal_after_n: f64,
    pub ln_both_after_n: f64,
}

impl LogSegmentDensityBundle {
    pub fn ln_total(&self) -> f64 {
        log_sum_exp(&[
            self.ln_both_before_n,
            self.ln_first_only,
            self.ln_equal_after_n,
            self.ln_both_after_n,
        ])
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Log-space variant of [`segment_densities`] for prefixes long enough to
/// underflow the linear products.
pub fn segment_densities_log(model: &ModelSpec, prefix: &TrajectoryPrefix) -> Result<LogSegmentDensityBundle> {
    let n = prefix.len();
    if n == 0 {
        return Err(DisorderError::InvalidArgument(
            "segment densities need at least one transition".into(),
        ));
    }
    let p = &model.prior;
    let fx = Factors::new(model, prefix.states(), 0.0, |a, b| a + b, f64::ln);
    let mid = &fx.f[Regime::Middle.index()];
    let (lrho, lrhob) = (p.rho.ln(), (1.0 - p.rho).ln());
    let (lp1, lq1, lp2, lq2) = (p.p1.ln(), p.q1().ln(), p.p2.ln(), p.q2().ln());
    // k·ln(p) with 0·ln(0) = 0.
    let times = |k: usize, l: f64| if k == 0 { 0.0 } else { k as f64 * l };

    let mut before = Vec::with_capacity((n + 1) * (n + 2) / 2);
    let mut first = Vec::with_capacity(n + 1);
    for j in 0..=n {
        let (w, start) = if j == 0 {
            (p.pi.ln(), 1)
        } else {
            ((1.0 - p.pi).ln() + times(j - 1, lp1) + lq1 + fx.pre[j - 1], j)
        };
        before.push(w + lrho + fx.post[start]);
        let mut middle = 0.0;
        for k in start..=n {
            if k > start {
                middle += mid[k - 1];
            }
            if k > j {
                before.push(w + lrhob + times(k - j - 1, lp2) + lq2 + middle + fx.post[k]);
            }
        }
        middle += mid[n];
        first.push(w + lrhob + times(n - j, lp2) + middle);
    }
    let pre = (1.0 - p.pi).ln() + times(n, lp1) + fx.pre[n];
    Ok(LogSegmentDensityBundle {
        ln_both_before_n: log_sum_exp(&before),
        ln_first_only: log_sum_exp(&first),
        ln_equal_after_n: lrho + pre,
        ln_both_after_n: lrhob + pre,
    })
}

/// Predictive density weights `H(x, y, α, β, γ)` without argument checks.
#[inline]
pub fn mixture_h_unchecked(model: &ModelSpec, x: usize, y: usize, alpha: f64, beta: f64, gamma: f64) -> f64 {
    let p = &model.prior;
    (1.0 - alpha) * p.p1 * model.f0.get(x, y)
        + (p.p2 * (alpha - beta) + p.q1() * (1.0 - alpha - gamma)) * model.f1.get(x, y)
        + (p.q2() * alpha + p.p2 * beta + p.q1() * gamma) * model.f2.get(x, y)
}

const ARG_TOL: f64 = 1e-12;

/// Predictive density of `X_{n+1} = y` given `Xₙ = x` and posteriors
/// `(Π¹ₙ, Π²ₙ, Π¹²ₙ) = (α, β, γ)`.
pub fn mixture_h(model: &ModelSpec, x: usize, y: usize, alpha: f64, beta: f64, gamma: f64) -> Result<f64> {
    model.check_state(x)?;
    model.check_state(y)?;
    let ok = (-ARG_TOL..=1.0 + ARG_TOL).contains(&alpha)
        && beta >= -ARG_TOL
        && beta <= alpha + ARG_TOL
        && gamma >= -ARG_TOL
        && gamma <= 1.0 - alpha + ARG_TOL;
    if !ok {
        return Err(DisorderError::InvalidArgument(format!(
            "posterior triple ({alpha}, {beta}, {gamma}) violates 0 <= beta <= alpha <= 1, 0 <= gamma <= 1 - alpha"
        )));
    }
    Ok(mixture_h_unchecked(model, x, y, alpha, beta, gamma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{identical_kernels, m2};
    use crate::model::PriorParams;

    #[test]
    fn s0_is_one() {
        let m = m2();
        let prefix = TrajectoryPrefix::from_observations(&m, &[]).unwrap();
        assert_eq!(normalizer_s(&m, &prefix).unwrap(), 1.0);
    }

    #[test]
    fn all_mass_at_origin() {
        let m = m2().with_prior(PriorParams::new(1.0, 1.0, 0.9, 0.8));
        let obs = [1, 1, 0, 1];
        let prefix = TrajectoryPrefix::from_observations(&m, &obs).unwrap();
        let b = segment_densities(&m, &prefix).unwrap();
        let expected = 0.9 * 0.2 * 0.8 * 0.9;
        assert!((b.d_both_before_n - expected).abs() < 1e-15);
        assert_eq!(b.d_first_only, 0.0);
        assert_eq!(b.d_equal_after_n, 0.0);
        assert_eq!(b.d_both_after_n, 0.0);
    }

    #[test]
    fn identical_kernels_factor_out() {
        let prior = PriorParams::new(0.2, 0.3, 0.7, 0.6);
        let m = identical_kernels(prior);
        let obs = [1, 0, 0, 1, 1];
        let n = obs.len() as u64;
        let prefix = TrajectoryPrefix::from_observations(&m, &obs).unwrap();
        let lik: f64 = prefix
            .states()
            .windows(2)
            .map(|w| m.f0.get(w[0], w[1]))
            .product();
        let b = segment_densities(&m, &prefix).unwrap();
        let p_after = prior.theta1_tail(n);
        let p_first_only = prior.theta2_tail(n) - p_after;
        assert!((b.d_both_after_n - (1.0 - prior.rho) * p_after * lik).abs() < 1e-15);
        assert!((b.d_equal_after_n - prior.rho * p_after * lik).abs() < 1e-15);
        assert!((b.d_first_only - p_first_only * lik).abs() < 1e-15);
        assert!((b.d_both_before_n - (1.0 - prior.theta2_tail(n)) * lik).abs() < 1e-14);
    }

    #[test]
    fn log_space_matches_linear() {
        let m = m2();
        let obs = [1, 1, 0, 1, 0, 0, 1];
        let prefix = TrajectoryPrefix::from_observations(&m, &obs).unwrap();
        let b = segment_densities(&m, &prefix).unwrap();
        let l = segment_densities_log(&m, &prefix).unwrap();
        for (lin, lg) in [
            (b.d_both_before_n, l.ln_both_before_n),
            (b.d_first_only, l.ln_first_only),
            (b.d_equal_after_n, l.ln_equal_after_n),
            (b.d_both_after_n, l.ln_both_after_n),
        ] {
            assert!((lin.ln() - lg).abs() < 1e-12);
        }
        assert!((b.total().ln() - l.ln_total()).abs() < 1e-12);
    }

    #[test]
    fn log_space_survives_long_prefixes() {
        let m = m2();
        let obs: Vec<usize> = (0..2000).map(|i| (i / 3) % 2).collect();
        let prefix = TrajectoryPrefix::from_observations(&m, &obs).unwrap();
        let l = segment_densities_log(&m, &prefix).unwrap();
        assert!(l.ln_total().is_finite());
        assert!(segment_densities(&m, &prefix).unwrap().total() == 0.0);
    }

    #[test]
    fn h_special_points() {
        let m = m2();
        for x in 0..2 {
            for y in 0..2 {
                let h = mixture_h(&m, x, y, 1.0, 1.0, 0.0).unwrap();
                assert!((h - m.f2.get(x, y)).abs() < 1e-15);
                let h = mixture_h(&m, x, y, 0.0, 0.0, 0.0).unwrap();
                let expected = 0.9 * m.f0.get(x, y) + 0.1 * m.f1.get(x, y);
                assert!((h - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn h_rejects_invalid_triple() {
        let m = m2();
        assert!(mixture_h(&m, 0, 0, 0.3, 0.5, 0.1).is_err());
        assert!(mixture_h(&m, 0, 0, 0.8, 0.1, 0.5).is_err());
        assert!(mixture_h(&m, 0, 5, 0.5, 0.1, 0.1).is_err());
    }

    #[test]
    fn prefix_must_start_at_x0() {
        let m = m2();
        assert!(TrajectoryPrefix::new(&m, vec![1, 0]).is_err());
        assert!(TrajectoryPrefix::new(&m, vec![0, 2]).is_err());
        assert!(TrajectoryPrefix::new(&m, vec![]).is_err());
    }
}
