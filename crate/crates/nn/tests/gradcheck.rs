//! Analytic gradients against central finite differences, in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wdunet_nn::losses::LossWeights;
use wdunet_nn::objective::{critic_step, generator_step, StepBatch};
use wdunet_nn::{
    build_segmenter, Arch, CriticConfig, Discriminator, FeatureConfig, FeatureExtractor, Grads, ModelConfig,
    ParamSet, Tape, Tensor,
};

const H: f64 = 1e-5;
const TOL: f64 = 1e-3;

fn random_tensor(shape: [usize; 5], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Picks parameter entries with a non-negligible analytic gradient, spread
/// over every tensor of the set.
fn sample_entries(grads: &Grads, per_tensor: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (t, g) in grads.values.iter().enumerate() {
        let mut candidates: Vec<usize> = (0..g.len()).filter(|&j| g[j].abs() > 1e-7).collect();
        for _ in 0..per_tensor.min(candidates.len()) {
            let k = rng.random_range(0..candidates.len());
            out.push((t, candidates.swap_remove(k)));
        }
    }
    out
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Central difference of `f` at entry (t, j) of the parameter set held by `owner`.
fn central<T>(owner: &mut T, ps: fn(&mut T) -> &mut ParamSet, t: usize, j: usize, f: &dyn Fn(&T) -> f64) -> f64 {
    let orig = ps(owner).params()[t].data[j];
    ps(owner).params_mut()[t].data[j] = orig + H;
    let up = f(owner);
    ps(owner).params_mut()[t].data[j] = orig - H;
    let down = f(owner);
    ps(owner).params_mut()[t].data[j] = orig;
    (up - down) / (2.0 * H)
}

fn assert_close(what: &str, checks: &[(f64, f64)]) {
    for (i, &(a, n)) in checks.iter().enumerate() {
        assert!(rel_err(a, n) < TOL, "{what} entry {i}: analytic {a}, numeric {n}");
    }
}

/// Weighted sum of the output, the scalar summary used for block checks.
fn summary(out: &Tensor, w: &Tensor) -> f64 {
    out.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

#[test]
fn segmenter_blocks_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for arch in [Arch::Unet3d, Arch::Ceunet] {
        let cfg = ModelConfig {
            arch,
            base_channels: 2,
            depth_levels: 3,
            seed: 3,
            ..ModelConfig::default()
        };
        let mut model = build_segmenter(&cfg).unwrap();
        let x = random_tensor([2, 1, 8, 8, 8], &mut rng);
        let w = random_tensor([2, 1, 8, 8, 8], &mut rng);
        let mut tape = Tape::new(model.params());
        let xv = tape.input(x.clone());
        let z = model.logits(&mut tape, xv).unwrap();
        let grads = tape.backward(vec![(z, w.clone())]).unwrap().params;
        drop(tape);
        let f = |m: &wdunet_nn::SegModel| {
            let mut t = Tape::new(m.params());
            let xv = t.input(x.clone());
            let z = m.logits(&mut t, xv).unwrap();
            summary(t.value(z), &w)
        };
        let entries = sample_entries(&grads, 2, &mut rng);
        assert!(entries.len() >= 20, "{arch:?}: only {} entries", entries.len());
        let checks: Vec<(f64, f64)> = entries
            .iter()
            .map(|&(t, j)| (grads.values[t][j], central(&mut model, |m| m.params_mut(), t, j, &f)))
            .collect();
        assert_close(&format!("{arch:?}"), &checks);
    }
}

#[test]
fn feature_extractor_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut fx = FeatureExtractor::new(&FeatureConfig {
        channels: 3,
        feature_channels: 4,
        seed: 1,
    })
    .unwrap();
    let x = random_tensor([2, 1, 6, 6, 6], &mut rng);
    let w = random_tensor([2, 4, 6, 6, 6], &mut rng);
    let mut tape = Tape::new(fx.params());
    let xv = tape.input(x.clone());
    let y = fx.forward(&mut tape, xv).unwrap();
    let grads = tape.backward(vec![(y, w.clone())]).unwrap().params;
    drop(tape);
    let f = |m: &FeatureExtractor| summary(&m.extract_features(&x).unwrap(), &w);
    let entries = sample_entries(&grads, 4, &mut rng);
    let checks: Vec<(f64, f64)> = entries
        .iter()
        .map(|&(t, j)| (grads.values[t][j], central(&mut fx, |m| m.params_mut(), t, j, &f)))
        .collect();
    assert!(checks.len() >= 20);
    assert_close("extractor", &checks);
}

fn critic(seed: u64) -> Discriminator {
    Discriminator::new(&CriticConfig {
        in_channels: 3,
        channels: 2,
        seed,
    })
    .unwrap()
}

#[test]
fn critic_parameter_and_input_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut d = critic(5);
    let x = random_tensor([3, 3, 8, 8, 8], &mut rng);
    let dscore = [0.7, -1.3, 0.4];
    let cache = d.forward(&x).unwrap();
    let (grads, gx) = d.backward(&cache, &dscore, true).unwrap();
    let f = |m: &Discriminator| {
        let s = m.forward(&x).unwrap().scores;
        s.iter().zip(&dscore).map(|(a, b)| a * b).sum::<f64>()
    };
    let entries = sample_entries(&grads, 3, &mut rng);
    let checks: Vec<(f64, f64)> = entries
        .iter()
        .map(|&(t, j)| (grads.values[t][j], central(&mut d, |m| m.params_mut(), t, j, &f)))
        .collect();
    assert!(checks.len() >= 20);
    assert_close("critic params", &checks);

    let gx = gx.unwrap();
    let mut input_checks = Vec::new();
    for _ in 0..20 {
        let i = rng.random_range(0..x.len());
        let mut xp = x.clone();
        xp.data_mut()[i] += H;
        let mut xm = x.clone();
        xm.data_mut()[i] -= H;
        let s = |t: &Tensor| d.forward(t).unwrap().scores.iter().zip(&dscore).map(|(a, b)| a * b).sum::<f64>();
        let n = (s(&xp) - s(&xm)) / (2.0 * H);
        if gx.data()[i].abs() > 1e-7 {
            input_checks.push((gx.data()[i], n));
        }
    }
    assert_close("critic input", &input_checks);
}

/// Generator objective (total loss) against finite differences on a
/// 2 x 8^3 batch, over segmenter and extractor parameters.
#[test]
fn total_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut seg = build_segmenter(&ModelConfig {
        base_channels: 2,
        depth_levels: 3,
        seed: 7,
        ..ModelConfig::default()
    })
    .unwrap();
    let mut fx = FeatureExtractor::new(&FeatureConfig {
        channels: 2,
        feature_channels: 3,
        seed: 8,
    })
    .unwrap();
    let d = critic(9);
    let labeled = random_tensor([2, 1, 8, 8, 8], &mut rng);
    let unlabeled = random_tensor([2, 1, 8, 8, 8], &mut rng);
    let masks: Vec<u8> = (0..labeled.len()).map(|_| u8::from(rng.random_bool(0.3))).collect();
    let labels: Vec<u32> = masks.iter().map(|&m| if m == 1 { rng.random_range(1..4) } else { 0 }).collect();
    let weights = LossWeights {
        w_dice: 1.0,
        w_bce: 0.7,
        w_branch: 0.5,
        w_wd: 1.3,
        ..LossWeights::default()
    };
    let batch = StepBatch {
        labeled: &labeled,
        masks: &masks,
        labels: &labels,
        unlabeled: &unlabeled,
    };
    let step = generator_step(&seg, &fx, &d, &batch, &weights, 21).unwrap();
    let r = step.report;
    let recomposed = r.dice + 0.7 * r.bce + 0.5 * r.branch + 1.3 * (r.wasserstein + r.penalty);
    assert!((r.total - recomposed).abs() < 1e-9);

    let seg_entries = sample_entries(&step.seg_grads, 1, &mut rng);
    let fx_entries = sample_entries(&step.fx_grads, 2, &mut rng);
    assert!(seg_entries.len() + fx_entries.len() >= 20);
    let mut checks = Vec::new();
    for &(t, j) in &seg_entries {
        let f = |s: &wdunet_nn::SegModel| generator_step(s, &fx, &d, &batch, &weights, 21).unwrap().report.total;
        checks.push((step.seg_grads.values[t][j], central(&mut seg, |m| m.params_mut(), t, j, &f)));
    }
    for &(t, j) in &fx_entries {
        let f = |e: &FeatureExtractor| generator_step(&seg, e, &d, &batch, &weights, 21).unwrap().report.total;
        checks.push((step.fx_grads.values[t][j], central(&mut fx, |m| m.params_mut(), t, j, &f)));
    }
    assert_close("total loss", &checks);
}

/// Critic objective `-W + lambda * penalty`, including the second-order
/// penalty term, against finite differences.
#[test]
fn critic_objective_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut d = critic(4);
    let fl = random_tensor([3, 3, 8, 8, 8], &mut rng);
    let fu = random_tensor([2, 3, 8, 8, 8], &mut rng);
    for (lambda, max_norm) in [(1.0, 10.0), (2.5, 10.0), (1.0, 0.05)] {
        let weights = LossWeights {
            gp_lambda: lambda,
            gp_max_norm: max_norm,
            ..LossWeights::default()
        };
        let step = critic_step(&d, &fl, &fu, &weights, 5).unwrap();
        assert!((step.objective - (-step.wasserstein + lambda * step.penalty)).abs() < 1e-12);
        let f = |m: &Discriminator| critic_step(m, &fl, &fu, &weights, 5).unwrap().objective;
        let entries = sample_entries(&step.grads, 3, &mut rng);
        let checks: Vec<(f64, f64)> = entries
            .iter()
            .map(|&(t, j)| (step.grads.values[t][j], central(&mut d, |m| m.params_mut(), t, j, &f)))
            .collect();
        assert!(checks.len() >= 20);
        assert_close(&format!("critic objective lambda {lambda} max_norm {max_norm}"), &checks);
    }
}
