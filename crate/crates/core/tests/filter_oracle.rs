use disorder_core::filter::{run_filter, PinmTracker};
use disorder_core::fixtures::{m2, random_model};
use disorder_core::model::ModelSpec;
use disorder_core::oracle::{bayes_filter_exact, event_probability, Atom, AtomWeights};
use disorder_core::segment::{mixture_h, normalizer_s, segment_densities, TrajectoryPrefix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn all_prefixes(k: usize, n: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..k).map(move |y| {
                    let mut q = p.clone();
                    q.push(y);
                    q
                })
            })
            .collect();
    }
    out
}

fn check_prefix(m: &ModelSpec, obs: &[usize]) {
    let mut tracker = PinmTracker::new(m);
    for (i, &y) in obs.iter().enumerate() {
        tracker.observe(m, y).unwrap();
        let prefix = TrajectoryPrefix::from_observations(m, &obs[..=i]).unwrap();
        let e = bayes_filter_exact(m, &prefix).unwrap();
        let s = tracker.state();
        assert!((s.pi1 - e.pi1).abs() < 1e-10, "pi1 {obs:?}");
        assert!((s.pi2 - e.pi2).abs() < 1e-10, "pi2 {obs:?}");
        assert!((s.pi12 - e.pi12).abs() < 1e-10, "pi12 {obs:?}");
        for (a, b) in tracker.values().iter().zip(&e.pinm) {
            assert!((a - b).abs() < 1e-10, "pinm {obs:?}: {a} vs {b}");
        }
    }
}

#[test]
fn filter_matches_enumeration_on_m2() {
    let m = m2();
    for obs in all_prefixes(2, 6) {
        check_prefix(&m, &obs);
    }
}

#[test]
fn filter_matches_enumeration_on_random_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..40 {
        let k = 2 + i % 2;
        let m = random_model(&mut rng, k, i % 3 == 0);
        for _ in 0..5 {
            let obs: Vec<usize> = (0..6).map(|_| rng.gen_range(0..k)).collect();
            check_prefix(&m, &obs);
        }
    }
}

#[test]
fn segment_bundle_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let models: Vec<ModelSpec> = std::iter::once(m2())
        .chain((0..10).map(|_| random_model(&mut rng, 3, true)))
        .collect();
    for m in &models {
        let k = m.n_states();
        for n in 1..=6 {
            let obs: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            let prefix = TrajectoryPrefix::from_observations(m, &obs).unwrap();
            let b = segment_densities(m, &prefix).unwrap();
            let w = AtomWeights::new(m, &prefix, n as u64 + 1).unwrap();
            let nn = n as u64;
            let both = w.mass(|a| a.second_by(nn));
            let first = w.mass(|a| a.first_by(nn) && !a.second_by(nn));
            let equal = w.mass(|a| a.equal() && !a.first_by(nn));
            let after = w.mass(|a| !a.equal() && !a.first_by(nn));
            for (x, y) in [
                (b.d_both_before_n, both),
                (b.d_first_only, first),
                (b.d_equal_after_n, equal),
                (b.d_both_after_n, after),
            ] {
                assert!((x - y).abs() <= 1e-12 * y.max(1e-300).max(x), "{x} vs {y}");
            }
        }
    }
}

#[test]
fn normalizer_recursion() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let models: Vec<ModelSpec> = std::iter::once(m2())
        .chain((0..50).map(|_| random_model(&mut rng, 3, false)))
        .collect();
    for m in &models {
        let k = m.n_states();
        let obs: Vec<usize> = (0..9).map(|_| rng.gen_range(0..k)).collect();
        let trace = run_filter(m, &obs).unwrap();
        for n in 0..8 {
            let s = |len: usize| normalizer_s(m, &TrajectoryPrefix::from_observations(m, &obs[..len]).unwrap()).unwrap();
            let st = &trace[n];
            let h = mixture_h(m, st.x_curr, obs[n], st.pi1, st.pi2, st.pi12).unwrap();
            let (next, now) = (s(n + 1), s(n));
            assert!((next - h * now).abs() / next < 1e-10);
        }
    }
}

#[test]
fn one_step_ahead_probabilities() {
    let m = m2();
    let p = m.prior;
    for obs in all_prefixes(2, 5) {
        let prefix = TrajectoryPrefix::from_observations(&m, &obs).unwrap();
        let n = obs.len() as u64;
        let s = run_filter(&m, &obs).unwrap()[obs.len()];
        let ev = |f: &dyn Fn(Atom) -> bool| event_probability(&m, &prefix, f).unwrap();
        let checks = [
            (ev(&|a| a.equal() && !a.first_by(n + 1)), p.p1 * s.pi12),
            (ev(&|a| !a.equal() && !a.first_by(n + 1)), p.p1 * (1.0 - s.pi1 - s.pi12)),
            (
                ev(&|a| a.first_by(n + 1) && !a.second_by(n + 1)),
                p.q1() * (1.0 - s.pi1 - s.pi12) + p.p2 * (s.pi1 - s.pi2),
            ),
            (ev(&|a| a.second_by(n + 1)), p.q2() * s.pi1 + p.p2 * s.pi2 + p.q1() * s.pi12),
        ];
        for (i, (a, b)) in checks.iter().enumerate() {
            assert!((a - b).abs() < 1e-10, "identity {i} on {obs:?}: {a} vs {b}");
        }
    }
}
