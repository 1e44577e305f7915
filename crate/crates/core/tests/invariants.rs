use disorder_core::filter::PinmTracker;
use disorder_core::fixtures::random_model;
use disorder_core::segment::mixture_h;
use disorder_core::simulate::simulate;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn posterior_structure_along_paths(seed in any::<u64>(), k in 2usize..=4, weighted in any::<bool>(), len in 1usize..80) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_model(&mut rng, k, weighted);
        let rec = simulate(&m, len, rng).unwrap();
        let mut t = PinmTracker::new(&m);
        for &y in &rec.observations[1..] {
            let s = *t.state();
            let total: f64 = (0..k).map(|u| mixture_h(&m, s.x_curr, u, s.pi1, s.pi2, s.pi12).unwrap() * m.weight(u)).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            t.observe(&m, y).unwrap();
            let s = *t.state();
            prop_assert!(0.0 <= s.pi2 && s.pi2 <= s.pi1 && s.pi1 <= 1.0);
            prop_assert!((s.pi12 - m.prior.rho * (1.0 - s.pi1)).abs() < 1e-10);
            // P(θ₁ ≤ n < θ₂) splits over the value of θ₁.
            let split: f64 = t.values().iter().sum();
            prop_assert!((split - (s.pi1 - s.pi2)).abs() < 1e-10);
        }
    }
}
