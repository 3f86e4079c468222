mod common;

use common::{energy_test, MixtureOracle};
use lcg_core::classifiers::{ClassifierSet, LatentClassifier};
use lcg_core::diffusion::{
    ddim_update, ddpm_update, run_chain, sample, NoisePredictor, NoiseSchedule, Sampler, ScheduleParams,
};
use lcg_core::eval::latent_fid;
use lcg_core::guidance::{guided_sample, GuidanceSpec, GuidanceTerm};
use lcg_core::numkernel::Rng;
use lcg_core::world::{oracle_conditional_moments, standard_world, Preset};

fn setup() -> (NoiseSchedule, MixtureOracle) {
    let s = NoiseSchedule::new(ScheduleParams::default()).unwrap();
    let w = standard_world(Preset::Quadrants2d);
    let o = MixtureOracle::new(s.clone(), &w);
    (s, o)
}

#[test]
fn exact_predictor_reproduces_the_world() {
    let (s, o) = setup();
    let w = standard_world(Preset::Quadrants2d);
    let m = oracle_conditional_moments(&w, &[]).unwrap();
    for sampler in [Sampler::Ddpm, Sampler::Ddim { eta: 0.0 }] {
        let xs = sample(&s, &o, 2000, sampler, None, &mut Rng::new(1)).unwrap();
        let fid = latent_fid(&xs, &m.mean, &m.covariance).unwrap();
        assert!(fid < 0.1, "{sampler}: fid {fid}");
    }
}

#[test]
fn ddim_with_unit_eta_is_ddpm() {
    let (s, o) = setup();
    let mut rng = Rng::new(2);
    for t in 2..=s.steps() {
        let z = rng.gaussian_vec(2);
        let xi = rng.gaussian_vec(2);
        let extra = [0.0, 0.0];
        let eps = o.predict_noise(&z, t).unwrap();
        let a = ddpm_update(&s, &eps, &z, t, &extra, None, &xi);
        let b = ddim_update(&s, &eps, &z, t, &extra, 1.0, None, &xi);
        for i in 0..2 {
            assert!((a[i] - b[i]).abs() < 1e-10, "t = {t}: {a:?} vs {b:?}");
        }
    }
    let x = sample(&s, &o, 300, Sampler::Ddpm, None, &mut Rng::new(3)).unwrap();
    let y = sample(&s, &o, 300, Sampler::Ddim { eta: 1.0 }, None, &mut Rng::new(4)).unwrap();
    assert!(energy_test(&x, &y, 200, 5) > 0.01);
}

#[test]
fn ddim_zero_eta_ignores_the_generator() {
    let (s, o) = setup();
    let z = vec![0.4, -1.2];
    let a = run_chain(
        &s,
        &o,
        z.clone(),
        s.steps(),
        Sampler::Ddim { eta: 0.0 },
        None,
        &mut Rng::new(1),
    )
    .unwrap();
    let b = run_chain(&s, &o, z, s.steps(), Sampler::Ddim { eta: 0.0 }, None, &mut Rng::new(2)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn zero_scale_guidance_is_unconditional_sampling() {
    let (s, o) = setup();
    let cs: ClassifierSet = [LatentClassifier::linear("A", vec![4.0, 0.0], 0.0)]
        .into_iter()
        .collect();
    let spec = GuidanceSpec::new(vec![GuidanceTerm::assert("A", 0.0)]);
    let g = guided_sample(&spec, &o, &cs, &s, 300, Sampler::Ddpm, &mut Rng::new(7)).unwrap();
    let u = sample(&s, &o, 300, Sampler::Ddpm, None, &mut Rng::new(7)).unwrap();
    assert_eq!(g, u);
    let other = sample(&s, &o, 300, Sampler::Ddpm, None, &mut Rng::new(8)).unwrap();
    assert!(energy_test(&g, &other, 200, 9) > 0.01);
}

#[test]
fn sampling_is_reproducible_across_thread_counts() {
    let (s, o) = setup();
    let a = sample(&s, &o, 64, Sampler::Ddpm, None, &mut Rng::new(10)).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = pool.install(|| sample(&s, &o, 64, Sampler::Ddpm, None, &mut Rng::new(10)).unwrap());
    assert_eq!(a, b);
}
