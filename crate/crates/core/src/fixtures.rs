//! Reference models used by tests, examples and the acceptance suite.

use rand::Rng;

use crate::model::{Kernel, ModelSpec, PriorParams, StateSpace};

fn kernel2(rows: [[f64; 2]; 2]) -> Kernel {
    Kernel::from_rows(&rows.map(|r| r.to_vec()))
}

/// Two-state desk model with distinct kernels in all three regimes.
pub fn m2() -> ModelSpec {
    ModelSpec::new(
        StateSpace::counting(2),
        [
            kernel2([[0.9, 0.1], [0.2, 0.8]]),
            kernel2([[0.5, 0.5], [0.5, 0.5]]),
            kernel2([[0.1, 0.9], [0.8, 0.2]]),
        ],
        PriorParams::new(0.1, 0.25, 0.9, 0.8),
        0,
    )
}

/// M2 with all three kernels replaced by the same matrix.
pub fn identical_kernels(prior: PriorParams) -> ModelSpec {
    let k = kernel2([[0.7, 0.3], [0.4, 0.6]]);
    ModelSpec::new(StateSpace::counting(2), [k.clone(), k.clone(), k], prior, 0)
}

/// Two-state model whose regimes are nearly deterministic and easy to tell apart.
pub fn separated(prior: PriorParams) -> ModelSpec {
    ModelSpec::new(
        StateSpace::counting(2),
        [
            kernel2([[0.97, 0.03], [0.97, 0.03]]),
            kernel2([[0.03, 0.97], [0.03, 0.97]]),
            kernel2([[0.5, 0.5], [0.5, 0.5]]),
        ],
        prior,
        0,
    )
}

/// Random strictly positive model on `n` states.
///
/// Weights are random when `weighted`, otherwise counting measure. The prior
/// keeps `p1, p2` away from 1 so horizons stay short.
pub fn random_model<R: Rng + ?Sized>(rng: &mut R, n: usize, weighted: bool) -> ModelSpec {
    let weights: Vec<f64> = if weighted {
        (0..n).map(|_| rng.gen_range(0.5..2.0)).collect()
    } else {
        vec![1.0; n]
    };
    let mut kernel = || {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
                let mass: f64 = raw.iter().zip(&weights).map(|(r, w)| r * w).sum();
                raw.iter().map(|r| r / mass).collect()
            })
            .collect();
        Kernel::from_rows(&rows)
    };
    let kernels = [kernel(), kernel(), kernel()];
    let space = StateSpace::new((0..n).map(|i| i.to_string()).collect(), weights);
    let prior = PriorParams::new(
        rng.gen_range(0.0..0.5),
        rng.gen_range(0.0..0.6),
        rng.gen_range(0.5..0.9),
        rng.gen_range(0.4..0.85),
    );
    let x0 = rng.gen_range(0..n);
    ModelSpec::new(space, kernels, prior, x0)
}
