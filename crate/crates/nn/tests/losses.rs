use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wdunet_nn::losses::{
    bce_loss, branch_loss, dice_loss, gradient_penalty, gradient_penalty_images, total_loss, wasserstein_estimate,
    BCE_EPS,
};
use wdunet_nn::{CriticConfig, Discriminator, FeatureConfig, FeatureExtractor, LinearCritic, LossReport, LossWeights, Tensor};

fn random_tensor(shape: [usize; 5], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

/// Linear critic with a random direction scaled to norm `r`.
fn linear_critic(len: usize, r: f64, rng: &mut impl Rng) -> LinearCritic {
    let mut w: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    w.iter_mut().for_each(|v| *v *= r / n);
    LinearCritic { weights: w }
}

#[test]
fn dice_examples() {
    let gt = [1u8, 0, 1, 1, 0];
    let exact: Vec<f64> = gt.iter().map(|&g| f64::from(g)).collect();
    assert!(dice_loss(&exact, &gt, 1e-5).unwrap().abs() < 1e-9);
    let k = 3.0;
    let empty = dice_loss(&[0.0; 5], &gt, 1e-5).unwrap();
    assert!((empty - (1.0 - 1e-5 / (k + 1e-5))).abs() < 1e-12);
    assert_eq!(dice_loss(&[0.5, 0.5], &[1, 0], 0.0).unwrap(), 0.5);
    assert!(dice_loss(&[0.5], &[1, 0], 0.0).is_err());
}

#[test]
fn bce_examples() {
    let gt = [1u8, 0, 0, 1];
    let exact: Vec<f64> = gt.iter().map(|&g| f64::from(g)).collect();
    let v = bce_loss(&exact, &gt).unwrap();
    assert!(v >= 0.0 && v <= -(1.0 - BCE_EPS).ln() + 1e-15);
    for gt in [[0u8; 4], [1; 4], [1, 0, 1, 0]] {
        assert!((bce_loss(&[0.5; 4], &gt).unwrap() - 2f64.ln()).abs() < 1e-9);
    }
    let clamped = bce_loss(&[1.0], &[0]).unwrap();
    assert!(clamped.is_finite());
    assert!((clamped - (1.0 / BCE_EPS).ln()).abs() < 1e-6);
}

#[test]
fn branch_examples() {
    let labels: Vec<u32> = (0..30).map(|i| if i < 10 { 1 } else if i < 20 { 2 } else { 0 }).collect();
    let exact: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from(l > 0))).collect();
    assert!(branch_loss(&exact, &labels, 1e-5, false).unwrap().value.abs() < 1e-9);

    let hundred = vec![3u32; 100];
    let empty = branch_loss(&[0.0; 100], &hundred, 1e-5, false).unwrap().value;
    assert!((empty - (1.0 - 1e-5 / (100.0 + 1e-5))).abs() < 1e-12);
    assert!(empty > 0.999_999);

    let first: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from(l == 1))).collect();
    assert_eq!(branch_loss(&first, &labels, 0.0, false).unwrap().value, 0.5);

    let none = branch_loss(&[0.3; 4], &[0; 4], 1e-5, false).unwrap();
    assert!(none.degenerate);
    assert_eq!(none.value, 0.0);
}

#[test]
fn per_branch_mean_weights_short_branches_equally() {
    // Branch 1 has 30 voxels fully hit, branch 2 has 10 voxels missed.
    let labels: Vec<u32> = (0..40).map(|i| if i < 30 { 1 } else { 2 }).collect();
    let pred: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from(l == 1))).collect();
    let pooled = branch_loss(&pred, &labels, 0.0, false).unwrap().value;
    let mean = branch_loss(&pred, &labels, 0.0, true).unwrap().value;
    assert!((pooled - 0.25).abs() < 1e-12);
    assert!((mean - 0.5).abs() < 1e-12);
}

#[test]
fn wasserstein_examples() {
    assert_eq!(wasserstein_estimate(&[1.0, 3.0], &[0.0, 2.0]).unwrap(), -1.0);
    assert_eq!(wasserstein_estimate(&[0.4, 0.9], &[0.4, 0.9]).unwrap(), 0.0);
    assert_eq!(wasserstein_estimate(&[0.0], &[5.0]).unwrap(), 5.0);
    assert!(wasserstein_estimate(&[], &[1.0]).is_err());
}

#[test]
fn total_loss_examples() {
    let w = LossWeights::default();
    assert_eq!(total_loss(&LossReport::default(), &w).unwrap(), 0.0);
    let r = LossReport {
        dice: 0.5,
        bce: 0.7,
        branch: 0.5,
        wasserstein: 0.1,
        penalty: 1.0,
        total: 0.0,
    };
    assert!((total_loss(&r, &w).unwrap() - 2.8).abs() < 1e-9);
    let bad = LossReport { bce: f64::NAN, ..r };
    assert!(total_loss(&bad, &w).is_err());
}

#[test]
fn total_loss_composes_independent_components() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 512;
    let pred: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let gt: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.4))).collect();
    let labels: Vec<u32> = gt.iter().map(|&g| if g == 1 { rng.random_range(1..5) } else { 0 }).collect();
    let w = LossWeights {
        w_dice: 0.3,
        w_bce: 1.7,
        w_branch: 0.9,
        w_wd: 0.4,
        gp_lambda: 2.5,
        ..LossWeights::default()
    };
    let r = LossReport {
        dice: dice_loss(&pred, &gt, w.smooth).unwrap(),
        bce: bce_loss(&pred, &gt).unwrap(),
        branch: branch_loss(&pred, &labels, w.smooth, false).unwrap().value,
        wasserstein: wasserstein_estimate(&[0.2, -0.1], &[0.5]).unwrap(),
        penalty: 0.37,
        total: 0.0,
    };
    let expected = 0.3 * r.dice + 1.7 * r.bce + 0.9 * r.branch + 0.4 * (r.wasserstein + 2.5 * 0.37);
    assert!((total_loss(&r, &w).unwrap() - expected).abs() < 1e-9);
}

#[test]
fn weights_are_validated() {
    assert!(LossWeights::default().validate().is_ok());
    assert!(LossWeights { smooth: 0.0, ..LossWeights::default() }.validate().is_err());
    assert!(LossWeights { gp_max_norm: 0.0, ..LossWeights::default() }.validate().is_err());
    assert!(LossWeights { w_bce: -1.0, ..LossWeights::default() }.validate().is_err());
}

#[test]
fn penalty_of_a_constant_critic_is_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut d = Discriminator::new(&CriticConfig::default()).unwrap();
    d.params_mut().fill(0.0);
    let u = random_tensor([3, 8, 8, 8, 8], &mut rng);
    let l = random_tensor([3, 8, 8, 8, 8], &mut rng);
    let p = gradient_penalty(&d, &u, &l, 10.0, &mut rng).unwrap();
    assert!((p.penalty - 1.0).abs() < 1e-6);
}

#[test]
fn penalty_of_linear_critics_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let shape = [4, 2, 3, 3, 3];
    let len = 2 * 27;
    for (r, max_norm, expected) in [(0.5, 10.0, 0.25), (1.0, 10.0, 0.0), (3.0, 10.0, 4.0), (3.0, 2.0, 1.0)] {
        let c = linear_critic(len, r, &mut rng);
        let u = random_tensor(shape, &mut rng);
        let l = random_tensor(shape, &mut rng);
        let p = gradient_penalty(&c, &u, &l, max_norm, &mut rng).unwrap();
        assert!((p.penalty - expected).abs() < 1e-5, "r {r} max_norm {max_norm}: {}", p.penalty);
        assert!(p.norms.iter().all(|n| (n - r).abs() < 1e-9));
    }
}

#[test]
fn interpolates_lie_between_the_batches() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let c = linear_critic(8, 1.0, &mut rng);
    let u = random_tensor([3, 1, 2, 2, 2], &mut rng);
    let l = random_tensor([3, 1, 2, 2, 2], &mut rng);
    let p = gradient_penalty(&c, &u, &l, 10.0, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    for (b, &a) in p.alphas.iter().enumerate() {
        assert!((0.0..1.0).contains(&a));
        for ((x, uu), ll) in p.interpolates.sample(b).iter().zip(u.sample(b)).zip(l.sample(b)) {
            assert!((x - (a * uu + (1.0 - a) * ll)).abs() < 1e-12);
        }
    }
    let again = gradient_penalty(&c, &u, &l, 10.0, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    assert_eq!(again.alphas, p.alphas);
}

#[test]
fn image_penalty_subsamples_and_is_seeded() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let fx = FeatureExtractor::new(&FeatureConfig {
        channels: 2,
        feature_channels: 3,
        seed: 0,
    })
    .unwrap();
    let d = Discriminator::new(&CriticConfig {
        in_channels: 3,
        channels: 2,
        seed: 0,
    })
    .unwrap();
    let u = random_tensor([3, 1, 8, 8, 8], &mut rng);
    let l = random_tensor([2, 1, 8, 8, 8], &mut rng);
    let a = gradient_penalty_images(&d, &fx, &u, &l, 10.0, 7).unwrap();
    let b = gradient_penalty_images(&d, &fx, &u, &l, 10.0, 7).unwrap();
    assert_eq!(a.norms.len(), 2);
    assert_eq!(a.penalty, b.penalty);
    assert!(a.penalty.is_finite() && a.penalty >= 0.0);
    assert!(gradient_penalty_images(&d, &fx, &Tensor::zeros([0, 1, 8, 8, 8]), &l, 10.0, 7).is_err());
}

fn probs_and_mask() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (1usize..64).prop_flat_map(|n| (prop::collection::vec(0.0f64..=1.0, n), prop::collection::vec(0u8..=1, n)))
}

proptest! {
    #[test]
    fn linear_penalty_is_analytic_for_any_batch(r in 0.05f64..10.0, seed in 0u64..1000, batch in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = linear_critic(16, r, &mut rng);
        let u = random_tensor([batch, 2, 2, 2, 2], &mut rng);
        let l = random_tensor([batch, 2, 2, 2, 2], &mut rng);
        let p = gradient_penalty(&c, &u, &l, 10.0, &mut rng).unwrap();
        prop_assert!((p.penalty - (r - 1.0).powi(2)).abs() < 1e-5);
    }

    #[test]
    fn dice_and_bce_are_permutation_invariant((pred, gt) in probs_and_mask(), seed in 0u64..100) {
        let mut idx: Vec<usize> = (0..pred.len()).collect();
        rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(seed));
        let p2: Vec<f64> = idx.iter().map(|&i| pred[i]).collect();
        let g2: Vec<u8> = idx.iter().map(|&i| gt[i]).collect();
        prop_assert!((dice_loss(&pred, &gt, 1e-5).unwrap() - dice_loss(&p2, &g2, 1e-5).unwrap()).abs() < 1e-12);
        prop_assert!((bce_loss(&pred, &gt).unwrap() - bce_loss(&p2, &g2).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn wasserstein_and_penalty_are_sample_permutation_invariant(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
        let u: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (mut l2, mut u2) = (l.clone(), u.clone());
        l2.reverse();
        u2.rotate_left(1);
        prop_assert!((wasserstein_estimate(&l, &u).unwrap() - wasserstein_estimate(&l2, &u2).unwrap()).abs() < 1e-12);

        // Permuting samples together with their alphas leaves the mean unchanged.
        let c = linear_critic(8, rng.random_range(0.1..4.0), &mut rng);
        let ut = random_tensor([3, 1, 2, 2, 2], &mut rng);
        let lt = random_tensor([3, 1, 2, 2, 2], &mut rng);
        let a = gradient_penalty(&c, &ut, &lt, 2.0, &mut rng).unwrap();
        let perm = [2usize, 0, 1];
        let b = gradient_penalty(&c, &ut.select(&perm), &lt.select(&perm), 2.0, &mut rng).unwrap();
        prop_assert!((a.penalty - b.penalty).abs() < 1e-9);
    }

    #[test]
    fn dice_and_branch_do_not_increase_toward_gt(
        (pred, gt) in probs_and_mask(),
        pick in any::<prop::sample::Index>(),
        step in 0.0f64..=1.0,
    ) {
        let i = pick.index(pred.len());
        let labels: Vec<u32> = gt.iter().map(|&g| u32::from(g) * 2).collect();
        let mut raised = pred.clone();
        let target = f64::from(gt[i]);
        raised[i] += step * (target - raised[i]);
        prop_assert!(dice_loss(&raised, &gt, 1e-5).unwrap() <= dice_loss(&pred, &gt, 1e-5).unwrap() + 1e-12);
        let before = branch_loss(&pred, &labels, 1e-5, false).unwrap().value;
        let after = branch_loss(&raised, &labels, 1e-5, false).unwrap().value;
        prop_assert!(after <= before + 1e-12);
    }
}
