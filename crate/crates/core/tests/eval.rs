use lcg_core::classifiers::ClassifierSet;
use lcg_core::eval::{acc, disentanglement_report, frechet_distance, gaussian_fit, identity_distance, latent_fid};
use lcg_core::guidance::{LinearEditor, ScaleSchedule};
use lcg_core::numkernel::Rng;
use lcg_core::world::{sample_dataset, standard_world, Preset, WorldSpec};

fn random_cov(rng: &mut Rng, d: usize) -> Vec<Vec<f64>> {
    let a: Vec<Vec<f64>> = (0..d).map(|_| rng.gaussian_vec(d)).collect();
    (0..d)
        .map(|i| {
            (0..d)
                .map(|j| (0..d).map(|k| a[i][k] * a[j][k]).sum::<f64>() + if i == j { 0.1 } else { 0.0 })
                .collect()
        })
        .collect()
}

#[test]
fn fid_is_symmetric() {
    let mut rng = Rng::new(1);
    for d in 1..=8 {
        let (m1, m2) = (rng.gaussian_vec(d), rng.gaussian_vec(d));
        let (c1, c2) = (random_cov(&mut rng, d), random_cov(&mut rng, d));
        let ab = frechet_distance(&m1, &c1, &m2, &c2).unwrap();
        let ba = frechet_distance(&m2, &c2, &m1, &c1).unwrap();
        assert!((ab - ba).abs() < 1e-9, "d = {d}: {ab} vs {ba}");
    }
}

#[test]
fn fid_of_a_sample_set_with_itself_is_zero() {
    let w = standard_world(Preset::Axes8d);
    let ds = sample_dataset(&w, 500, 1, &mut Rng::new(1));
    let (m, c) = gaussian_fit(&ds.latents).unwrap();
    assert!(latent_fid(&ds.latents, &m, &c).unwrap() < 1e-8);
}

#[test]
fn fid_diagonal_closed_form() {
    // commuting covariances: Σ (√a − √b)² over the diagonal
    let c1 = vec![vec![1.0, 0.0], vec![0.0, 9.0]];
    let c2 = vec![vec![4.0, 0.0], vec![0.0, 1.0]];
    let f = frechet_distance(&[0.0, 0.0], &c1, &[1.0, 1.0], &c2).unwrap();
    assert!((f - (2.0 + 1.0 + 4.0)).abs() < 1e-9);
}

#[test]
fn unconditional_accuracy_is_one_half() {
    let w = standard_world(Preset::Quadrants2d);
    let ds = sample_dataset(&w, 10_000, 2, &mut Rng::new(2));
    let a = acc(&w, &ds.latents, &[("A".into(), true)]).unwrap()[0].1;
    assert!((a - 0.5).abs() < 0.02, "{a}");
}

#[test]
fn acc_is_permutation_invariant() {
    let w = standard_world(Preset::Quadrants2d);
    let mut xs = sample_dataset(&w, 1000, 3, &mut Rng::new(3)).latents;
    let t = vec![("A".to_string(), true), ("B".to_string(), false)];
    let before = acc(&w, &xs, &t).unwrap();
    Rng::new(4).shuffle(&mut xs);
    assert_eq!(acc(&w, &xs, &t).unwrap(), before);
}

#[test]
fn identity_is_homogeneous_and_nonnegative() {
    let mut rng = Rng::new(5);
    let src: Vec<Vec<f64>> = (0..50).map(|_| rng.gaussian_vec(4)).collect();
    let out: Vec<Vec<f64>> = (0..50).map(|_| rng.gaussian_vec(4)).collect();
    let base = identity_distance(&src, &out).unwrap();
    assert!(base.distances.iter().all(|&d| d >= 0.0));
    let c = 2.5;
    let scale = |v: &[Vec<f64>]| {
        v.iter()
            .map(|z| z.iter().map(|x| c * x).collect())
            .collect::<Vec<Vec<f64>>>()
    };
    let scaled = identity_distance(&scale(&src), &scale(&out)).unwrap();
    assert!((scaled.mean - c * base.mean).abs() < 1e-12);
}

fn trained_linear(world: &WorldSpec, seed: u64) -> ClassifierSet {
    use lcg_core::classifiers::{train_classifier, ClassifierKind, ClassifierTraining};
    let ds = sample_dataset(world, 4000, seed, &mut Rng::new(seed));
    world
        .attribute_names()
        .iter()
        .map(|a| {
            train_classifier(
                &ClassifierKind::Linear,
                &ds,
                a,
                &ClassifierTraining::default(),
                &mut Rng::new(seed + 1),
            )
            .unwrap()
            .0
        })
        .collect()
}

#[test]
fn correlated_world_leaks_more_across_edits() {
    let report = |preset| {
        let w = standard_world(preset);
        let cs = trained_linear(&w, 6);
        let editor = LinearEditor {
            classifiers: &cs,
            gamma: 1.0,
        };
        let sources = sample_dataset(&w, 1000, 7, &mut Rng::new(7)).latents;
        let edits: Vec<_> = w
            .attribute_names()
            .into_iter()
            .map(|a| (a, ScaleSchedule::Constant(1.5)))
            .collect();
        disentanglement_report(&w, &editor, &edits, &sources, &mut Rng::new(8)).unwrap()
    };
    let ortho = report(Preset::Axes8d);
    let tilted = report(Preset::Axes8dCorrelated);
    assert!(ortho.max_off_target() <= 0.05, "{:?}", ortho.delta);
    assert!(
        ortho.targeted_acc.iter().all(|&a| a >= 0.85),
        "{:?}",
        ortho.targeted_acc
    );
    assert!(tilted.max_off_target() > ortho.max_off_target());
    assert!(ortho.delta.iter().enumerate().all(|(k, row)| row[k].is_none()));
}
