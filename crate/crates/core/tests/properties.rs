use lcg_core::classifiers::LatentClassifier;
use lcg_core::diffusion::{make_schedule, NoiseSchedule, ScheduleParams};
use lcg_core::eval::{frechet_distance, identity_distance};
use lcg_core::numkernel::Rng;
use proptest::prelude::*;

proptest! {
    #[test]
    fn rng_streams_are_reproducible(seed in any::<u64>()) {
        let mut a = Rng::substream(seed, "sample");
        let mut b = Rng::substream(seed, "sample");
        let mut c = Rng::substream(seed, "eval");
        let xa: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        let xc: Vec<u64> = (0..8).map(|_| c.next_u64()).collect();
        prop_assert_eq!(&xa, &xb);
        prop_assert_ne!(xa, xc);
    }

    #[test]
    fn schedules_decrease_and_stay_in_range(
        steps in 1usize..400,
        start in 1e-5f64..0.3,
        width in 0.0f64..0.6,
    ) {
        let s = make_schedule(steps, start, (start + width).min(0.99)).unwrap();
        for t in 1..=steps {
            prop_assert!(s.alpha_bar(t) > 0.0 && s.alpha_bar(t) < s.alpha_bar(t - 1));
            prop_assert!(s.posterior_variance(t) >= 0.0 && s.posterior_variance(t) <= s.beta(t) + 1e-15);
        }
    }

    #[test]
    fn classifier_probabilities_normalise(
        w in prop::collection::vec(-5.0f64..5.0, 1..6),
        b in -3.0f64..3.0,
        scale in -50.0f64..50.0,
    ) {
        let z: Vec<f64> = w.iter().map(|x| scale * x.signum()).collect();
        let c = LatentClassifier::linear("a", w, b);
        let total = c.log_prob(&z, true).unwrap().exp() + c.log_prob(&z, false).unwrap().exp();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fid_is_nonnegative_and_zero_on_identity(
        m in prop::collection::vec(-3.0f64..3.0, 3),
        diag in prop::collection::vec(0.01f64..5.0, 3),
        shift in prop::collection::vec(-3.0f64..3.0, 3),
    ) {
        let c: Vec<Vec<f64>> = (0..3).map(|i| (0..3).map(|j| if i == j { diag[i] } else { 0.0 }).collect()).collect();
        prop_assert!(frechet_distance(&m, &c, &m, &c).unwrap().abs() < 1e-9);
        let m2: Vec<f64> = m.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let f = frechet_distance(&m, &c, &m2, &c).unwrap();
        let sq: f64 = shift.iter().map(|x| x * x).sum();
        prop_assert!((f - sq).abs() < 1e-9);
    }

    #[test]
    fn identity_scales_linearly(c in 0.0f64..10.0, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let a: Vec<Vec<f64>> = (0..5).map(|_| rng.gaussian_vec(3)).collect();
        let b: Vec<Vec<f64>> = (0..5).map(|_| rng.gaussian_vec(3)).collect();
        let s = |v: &[Vec<f64>]| v.iter().map(|z| z.iter().map(|x| c * x).collect()).collect::<Vec<Vec<f64>>>();
        let base = identity_distance(&a, &b).unwrap().mean;
        let scaled = identity_distance(&s(&a), &s(&b)).unwrap().mean;
        prop_assert!((scaled - c * base).abs() < 1e-9 * (1.0 + base));
    }
}

#[test]
fn default_schedule_is_near_gaussian() {
    assert!(NoiseSchedule::new(ScheduleParams::default())
        .unwrap()
        .terminal_is_near_gaussian());
}
