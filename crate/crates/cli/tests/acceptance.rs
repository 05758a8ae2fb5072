//! The ten acceptance criteria. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test -p wdunet-cli --test acceptance -- 8 9`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode, Stdio};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wdunet_al::dataset::{build_pool, generate_dataset, load_dataset, Case, DataConfig, GenerateConfig};
use wdunet_al::experiment::{ExperimentConfig, LoopConfig, NetworkConfig};
use wdunet_al::query::{rank, score_entropy, score_least_confidence};
use wdunet_al::{run_experiment, select_batch, Learner, QueryScore, RoundReport, StrategyConfig, StrategyName, TrainConfig};
use wdunet_core::grid::{Grid3, Voxel};
use wdunet_core::metrics::{overlap_metrics, parse_tree, skeletonize, tree_metrics};
use wdunet_core::{generate_phantom, load_volume, normalize, save_volume, Branch, PhantomSpec, TreeGraph};
use wdunet_nn::losses::{
    bce_loss, bce_loss_grad, branch_loss, dice_loss, dice_loss_grad, gradient_penalty, total_loss, LossWeights,
};
use wdunet_nn::objective::{generator_step, StepBatch};
use wdunet_nn::{
    build_segmenter, Adam, AdamConfig, CriticConfig, Discriminator, FeatureConfig, FeatureExtractor, LinearCritic,
    LossReport, ModelConfig, Tape, Tensor,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ok<T, E: std::fmt::Debug>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| format!("{e:?}"))
}

fn random_tensor(shape: [usize; 5], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn linear_critic(len: usize, r: f64, rng: &mut impl Rng) -> LinearCritic {
    let mut w: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    w.iter_mut().for_each(|v| *v *= r / n);
    LinearCritic { weights: w }
}

fn c1_gradient_penalty() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut d = ok(Discriminator::new(&CriticConfig::default()))?;
    d.params_mut().fill(0.0);
    let u = random_tensor([3, 8, 8, 8, 8], -2.0, 2.0, &mut rng);
    let l = random_tensor([3, 8, 8, 8, 8], -2.0, 2.0, &mut rng);
    let p = ok(gradient_penalty(&d, &u, &l, 10.0, &mut rng))?.penalty;
    ensure((p - 1.0).abs() <= 1e-6, || format!("constant critic penalty {p}"))?;
    let mut notes = vec![format!("const {p:.3e}")];
    let shape = [4, 2, 4, 4, 4];
    for (r, max_norm, expected) in [(0.5, 10.0, 0.25), (1.0, 10.0, 0.0), (3.0, 10.0, 4.0), (3.0, 2.0, 1.0)] {
        let c = linear_critic(2 * 64, r, &mut rng);
        let u = random_tensor(shape, -2.0, 2.0, &mut rng);
        let l = random_tensor(shape, -2.0, 2.0, &mut rng);
        let p = ok(gradient_penalty(&c, &u, &l, max_norm, &mut rng))?.penalty;
        ensure((p - expected).abs() <= 1e-5, || format!("r {r}, max_norm {max_norm}: penalty {p}, expected {expected}"))?;
        notes.push(format!("r={r}/max={max_norm}: {p:.6}"));
    }
    Ok(notes.join(", "))
}

fn c2_losses() -> Outcome {
    let gt = [1u8, 0, 1, 1, 0];
    let exact: Vec<f64> = gt.iter().map(|&g| f64::from(g)).collect();
    ensure(ok(dice_loss(&exact, &gt, 1e-5))?.abs() < 1e-9, || "dice(pred = gt) != 0".into())?;
    let empty = ok(dice_loss(&[0.0; 5], &gt, 1e-5))?;
    ensure((empty - (1.0 - 1e-5 / (3.0 + 1e-5))).abs() < 1e-12, || format!("dice(empty) = {empty}"))?;
    ensure(ok(dice_loss(&[0.5, 0.5], &[1, 0], 0.0))? == 0.5, || "dice half example".into())?;

    for g in [[0u8; 4], [1; 4], [1, 0, 1, 0]] {
        let v = ok(bce_loss(&[0.5; 4], &g))?;
        ensure((v - 2f64.ln()).abs() < 1e-9, || format!("bce(0.5) = {v}"))?;
    }
    let clamped = ok(bce_loss(&[1.0], &[0]))?;
    ensure(clamped.is_finite(), || "bce on p = 1, gt = 0 is not finite".into())?;

    let labels: Vec<u32> = (0..30).map(|i| if i < 10 { 1 } else if i < 20 { 2 } else { 0 }).collect();
    let hit: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from(l > 0))).collect();
    let b0 = ok(branch_loss(&hit, &labels, 1e-5, false))?.value;
    ensure(b0.abs() < 1e-9, || format!("branch(pred = gt) = {b0}"))?;
    let b1 = ok(branch_loss(&[0.0; 100], &[3u32; 100], 1e-5, false))?.value;
    ensure((b1 - 1.0).abs() < 1e-6, || format!("branch(empty) = {b1}"))?;
    let first: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from(l == 1))).collect();
    ensure(ok(branch_loss(&first, &labels, 0.0, false))?.value == 0.5, || "branch half example".into())?;

    let w = LossWeights::default();
    let r = LossReport {
        dice: 0.5,
        bce: 0.7,
        branch: 0.5,
        wasserstein: 0.1,
        penalty: 1.0,
        total: 0.0,
    };
    let t = ok(total_loss(&r, &w))?;
    ensure((t - 2.8).abs() < 1e-9, || format!("total example {t}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for _ in 0..20 {
        let w = LossWeights {
            w_dice: rng.random_range(0.0..3.0),
            w_bce: rng.random_range(0.0..3.0),
            w_branch: rng.random_range(0.0..3.0),
            w_wd: rng.random_range(0.0..3.0),
            gp_lambda: rng.random_range(0.0..20.0),
            ..LossWeights::default()
        };
        let r = LossReport {
            dice: rng.random(),
            bce: rng.random_range(0.0..5.0),
            branch: rng.random(),
            wasserstein: rng.random_range(-2.0..2.0),
            penalty: rng.random_range(0.0..4.0),
            total: 0.0,
        };
        let expected = w.w_dice * r.dice
            + w.w_bce * r.bce
            + w.w_branch * r.branch
            + w.w_wd * (r.wasserstein + w.gp_lambda * r.penalty);
        let got = ok(total_loss(&r, &w))?;
        ensure((got - expected).abs() < 1e-9, || format!("total {got} vs component sum {expected}"))?;
    }
    Ok(format!("branch(gt) {b0:.1e}, branch(empty) {b1:.9}, total example {t}"))
}

fn c3_gradient_check() -> Outcome {
    const H: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut seg = ok(build_segmenter(&ModelConfig {
        base_channels: 2,
        seed: 31,
        ..ModelConfig::default()
    }))?;
    let fx = ok(FeatureExtractor::new(&FeatureConfig {
        channels: 2,
        feature_channels: 3,
        seed: 32,
    }))?;
    let critic = ok(Discriminator::new(&CriticConfig {
        in_channels: 3,
        channels: 2,
        seed: 33,
    }))?;
    let labeled = random_tensor([2, 1, 8, 8, 8], -1.0, 1.0, &mut rng);
    let unlabeled = random_tensor([2, 1, 8, 8, 8], -1.0, 1.0, &mut rng);
    let masks: Vec<u8> = (0..labeled.len()).map(|_| u8::from(rng.random_bool(0.3))).collect();
    let labels: Vec<u32> = masks.iter().map(|&m| if m == 1 { rng.random_range(1..4) } else { 0 }).collect();
    let weights = LossWeights::default();
    let batch = StepBatch {
        labeled: &labeled,
        masks: &masks,
        labels: &labels,
        unlabeled: &unlabeled,
    };
    let total = |s: &wdunet_nn::SegModel| generator_step(s, &fx, &critic, &batch, &weights, 7).unwrap().report.total;
    let step = ok(generator_step(&seg, &fx, &critic, &batch, &weights, 7))?;
    let mut entries = Vec::new();
    for (t, g) in step.seg_grads.values.iter().enumerate() {
        let mut cand: Vec<usize> = (0..g.len()).filter(|&j| g[j].abs() > 1e-7).collect();
        for _ in 0..2.min(cand.len()) {
            entries.push((t, cand.swap_remove(rng.random_range(0..cand.len()))));
        }
    }
    ensure(entries.len() >= 20, || format!("only {} usable parameters", entries.len()))?;
    let mut worst: f64 = 0.0;
    for &(t, j) in &entries {
        let set = |s: &mut wdunet_nn::SegModel, v: f64| s.params_mut().params_mut()[t].data[j] = v;
        let orig = seg.params().params()[t].data[j];
        set(&mut seg, orig + H);
        let up = total(&seg);
        set(&mut seg, orig - H);
        let down = total(&seg);
        set(&mut seg, orig);
        let num = (up - down) / (2.0 * H);
        let ana = step.seg_grads.values[t][j];
        let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-8);
        worst = worst.max(rel);
        ensure(rel < 1e-3, || format!("param ({t},{j}): analytic {ana}, numeric {num}, rel {rel}"))?;
    }
    Ok(format!("{} parameters, worst relative error {worst:.2e}", entries.len()))
}

fn y_tree() -> TreeGraph {
    let trunk: Vec<Voxel> = (0..10).map(|z| [19 - z, 10, 10]).collect();
    let left: Vec<Voxel> = (1..=5).map(|k| [10 - k, 10, 10 - k]).collect();
    let right: Vec<Voxel> = (1..=5).map(|k| [10 - k, 10, 10 + k]).collect();
    TreeGraph {
        branches: vec![
            Branch { label: 1, parent_label: 0, centerline: trunk },
            Branch { label: 2, parent_label: 1, centerline: left },
            Branch { label: 3, parent_label: 1, centerline: right },
        ],
    }
}

fn c4_metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let n = 512;
    for trial in 0..100 {
        let density = [0.0, 0.05, 0.3, 0.7][trial % 4];
        let a = Grid3::from_vec([8; 3], (0..n).map(|_| u8::from(rng.random_bool(density))).collect()).unwrap();
        let b = Grid3::from_vec([8; 3], (0..n).map(|_| u8::from(rng.random_bool(0.3))).collect()).unwrap();
        let r = ok(overlap_metrics(&a, &b))?;
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for (&p, &g) in a.as_slice().iter().zip(b.as_slice()) {
            tp += u64::from(p == 1 && g == 1);
            fp += u64::from(p == 1 && g == 0);
            fn_ += u64::from(p == 0 && g == 1);
        }
        let union = tp + fp + fn_;
        let dsc = if union == 0 { 1.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 };
        let iou = if union == 0 { 1.0 } else { tp as f64 / union as f64 };
        let precision = match (union, tp + fp) {
            (0, _) => 1.0,
            (_, 0) => 0.0,
            (_, d) => tp as f64 / d as f64,
        };
        ensure((r.tp, r.fp, r.fn_) == (tp, fp, fn_), || format!("trial {trial}: counts differ"))?;
        ensure((r.dsc, r.iou, r.precision) == (dsc, iou, precision), || format!("trial {trial}: ratios differ"))?;
    }
    let tree = y_tree();
    let mut pred = Grid3::filled([22; 3], 0u8);
    for b in &tree.branches[..2] {
        for &v in &b.centerline {
            pred.set(v, 1);
        }
    }
    let r = ok(tree_metrics(&pred, &tree, 0.8))?;
    ensure(r.td == 0.75 && r.bd == 2.0 / 3.0, || format!("Y-tree td {} bd {}", r.td, r.bd))?;
    Ok(format!("100 random pairs exact; Y-tree td {} bd {:.4}", r.td, r.bd))
}

fn c5_tree_parsing() -> Outcome {
    let mut notes = Vec::new();
    for depth in 1..=3u32 {
        for seed in [0u64, 5, 9] {
            let p = ok(generate_phantom(&PhantomSpec {
                dims: [48; 3],
                depth,
                seed,
                ..PhantomSpec::default()
            }))?;
            let mask = p.mask.to_mask_grid().unwrap();
            let labels = p.branch_labels.to_label_grid().unwrap();
            let parsed = ok(parse_tree(&skeletonize(&mask), None))?;
            let want = (1usize << depth) - 1;
            ensure(parsed.len() == want, || format!("depth {depth} seed {seed}: {} branches", parsed.len()))?;
            // Map each parsed branch to the generator label under most of its centerline.
            let mut map = std::collections::BTreeMap::new();
            for b in &parsed.branches {
                let mut votes = std::collections::BTreeMap::<u32, usize>::new();
                for &v in &b.centerline {
                    *votes.entry(*labels.get(v)).or_default() += 1;
                }
                let best = votes.into_iter().max_by_key(|&(l, n)| (n, std::cmp::Reverse(l))).unwrap().0;
                map.insert(b.label, best);
            }
            let distinct: std::collections::BTreeSet<u32> = map.values().copied().collect();
            ensure(distinct.len() == want && !distinct.contains(&0), || {
                format!("depth {depth} seed {seed}: branch matching {map:?}")
            })?;
            for b in &parsed.branches {
                let gt_parent = p.tree.parent_of(map[&b.label]).unwrap();
                let got = if b.parent_label == 0 { 0 } else { map[&b.parent_label] };
                ensure(got == gt_parent, || format!("depth {depth} seed {seed}: parent mismatch on {}", b.label))?;
            }
        }
        notes.push(format!("d{depth}: {} branches", (1 << depth) - 1));
    }
    Ok(notes.join(", "))
}

fn small_cases(count: usize) -> Vec<Case> {
    (0..count)
        .map(|i| {
            let ph = generate_phantom(&PhantomSpec {
                dims: [16; 3],
                depth: 1,
                trunk_radius_vox: 2.0,
                segment_length_vox: 7.0,
                seed: i as u64,
                ..PhantomSpec::default()
            })
            .unwrap();
            Case {
                id: format!("case_{i:03}"),
                image: ph.image,
                mask: ph.mask,
                labels: ph.branch_labels,
                tree: ph.tree,
            }
        })
        .collect()
}

fn tiny_network() -> NetworkConfig {
    NetworkConfig {
        base_channels: 2,
        fx_channels: 2,
        feature_channels: 2,
        critic_channels: 2,
        ..NetworkConfig::default()
    }
}

fn c6_query_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let order = |scores: Vec<f64>| -> Vec<usize> {
        let s: Vec<QueryScore> = scores
            .into_iter()
            .enumerate()
            .map(|(index, v)| QueryScore { index, uncertainty: v, diversity: 0.0, total: v })
            .collect();
        rank(&s).iter().map(|q| q.index).collect()
    };
    for pool in 0..50 {
        let n = rng.random_range(2..60);
        let probs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let h = order(probs.iter().map(|&p| score_entropy(&[p]).unwrap()).collect());
        let lc = order(probs.iter().map(|&p| score_least_confidence(&[p]).unwrap()).collect());
        ensure(h == lc, || format!("pool {pool}: entropy and least-confidence orders differ"))?;
    }

    let tie: Vec<QueryScore> = [0.2, 0.9, 0.9, 0.1]
        .iter()
        .enumerate()
        .map(|(index, &t)| QueryScore { index, uncertainty: t, diversity: 0.0, total: t })
        .collect();
    let top: Vec<usize> = rank(&tie).iter().take(2).map(|q| q.index).collect();
    ensure(top == [1, 2], || format!("tie-break picked {top:?}"))?;

    for trial in 0..200 {
        let n = 16;
        let u: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let d: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c_sel = rng.random_range(0.1..10.0);
        let lambda = rng.random_range(0.01..100.0);
        let k = rng.random_range(1..n);
        let pick = |scale: f64, c: f64| -> std::collections::BTreeSet<usize> {
            let s: Vec<QueryScore> = (0..n)
                .map(|i| QueryScore {
                    index: i,
                    uncertainty: scale * u[i],
                    diversity: d[i],
                    total: c * scale * u[i] - d[i],
                })
                .collect();
            rank(&s).iter().take(k).map(|q| q.index).collect()
        };
        ensure(pick(1.0, c_sel) == pick(lambda, c_sel / lambda), || format!("rescaling trial {trial} changed the batch"))?;
    }

    let cases = small_cases(12);
    let data = DataConfig {
        patch_shape: [16; 3],
        stride: [16; 3],
        ..DataConfig::default()
    };
    let pool = ok(build_pool(&cases, &data, 3))?;
    let net = tiny_network();
    let learner = ok(Learner::new(&net.segmenter(0), &net.extractor(0), &net.critic(0), &TrainConfig::default()))?;
    let random = StrategyConfig {
        name: StrategyName::Random,
        ..StrategyConfig::default()
    };
    let a = ok(select_batch(&random, 3, 42, &pool, &learner))?;
    let b = ok(select_batch(&random, 3, 42, &pool, &learner))?;
    let c = ok(select_batch(&random, 3, 43, &pool, &learner))?;
    ensure(a == b, || "seeded random selection is not reproducible".into())?;
    ensure(a.indices.iter().all(|i| pool.unlabeled().contains(i)), || "random picked outside U".into())?;
    Ok(format!("50 pools equivalent; random seed 42 -> {:?}, seed 43 -> {:?}", a.indices, c.indices))
}

fn c7_overfit() -> Outcome {
    let ph = ok(generate_phantom(&PhantomSpec {
        seed: 3,
        ..PhantomSpec::default()
    }))?;
    let dims = ph.image.dims();
    ensure(dims == [32; 3], || format!("phantom dims {dims:?}"))?;
    let image = normalize(&ph.image.to_image_grid().unwrap());
    let mask = ph.mask.to_mask_grid().unwrap();
    let x = ok(Tensor::from_volumes(dims, [image.as_slice()]))?;
    let mut model = ok(build_segmenter(&ModelConfig {
        base_channels: 8,
        seed: 0,
        ..ModelConfig::default()
    }))?;
    let mut opt = Adam::new(AdamConfig::with_lr(1e-2), model.params());
    let mut best = f64::INFINITY;
    let mut first = None;
    for step in 0..200 {
        let mut tape = Tape::new(model.params());
        let xv = tape.input(x.clone());
        let p = ok(model.forward(&mut tape, xv))?;
        let probs = tape.value(p).data();
        let (dice, gd) = ok(dice_loss_grad(probs, mask.as_slice(), 1e-5))?;
        let (_, gb) = ok(bce_loss_grad(probs, mask.as_slice()))?;
        first.get_or_insert(dice);
        best = best.min(dice);
        if dice < 0.05 {
            return Ok(format!("soft-Dice {:.4} -> {dice:.4} at step {step}", first.unwrap()));
        }
        let seed: Vec<f64> = gd.iter().zip(&gb).map(|(a, b)| a + b).collect();
        let seed = ok(Tensor::from_vec(tape.value(p).shape(), seed))?;
        let grads = ok(tape.backward(vec![(p, seed)]))?.params;
        ok(opt.step(model.params_mut(), &grads))?;
    }
    Err(format!("best soft-Dice after 200 steps {best}"))
}

/// The desk-scale trend experiment: 20 phantoms of 32^3, one patch each.
fn trend_config(strategy: StrategyName, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        data: DataConfig {
            patch_shape: [32; 3],
            stride: [32; 3],
            initial_labeled: 0.15,
            unlabeled: 0.55,
            test: 0.30,
            ..DataConfig::default()
        },
        model: NetworkConfig {
            base_channels: 4,
            fx_channels: 4,
            feature_channels: 4,
            critic_channels: 4,
            ..NetworkConfig::default()
        },
        strategy: StrategyConfig {
            name: strategy,
            ..StrategyConfig::default()
        },
        train: TrainConfig {
            epochs_per_round: TREND_EPOCHS,
            batch_size: 2,
            lr: 1e-2,
            ..TrainConfig::default()
        },
        experiment: LoopConfig {
            rounds_budget: 10,
            label_budget_fraction: 0.35,
            per_round_batch: 2,
            seed,
            record_wall_time: false,
            ..LoopConfig::default()
        },
        ..ExperimentConfig::default()
    }
}

const TREND_EPOCHS: usize = 8;

fn trend_dataset(dir: &Path) -> Result<Vec<Case>, String> {
    let g = GenerateConfig {
        count: 20,
        seed: 2024,
        ..GenerateConfig::default()
    };
    ok(fs::create_dir_all(dir))?;
    ok(generate_dataset(&g, dir))?;
    ok(load_dataset(dir))
}

fn c8_trend() -> Outcome {
    let tmp = ok(tempfile::tempdir())?;
    let cases = trend_dataset(&tmp.path().join("data"))?;
    let mut lines = Vec::new();
    let mut finals = std::collections::BTreeMap::<&str, Vec<f64>>::new();
    for strategy in [StrategyName::Random, StrategyName::Wd] {
        for seed in 0..3u64 {
            let cfg = trend_config(strategy, seed);
            let run = |name: &str| -> Result<(Vec<RoundReport>, Vec<u8>), String> {
                let out = tmp.path().join(format!("{}_{seed}_{name}", strategy.as_str()));
                let o = ok(run_experiment(&cfg, &cases, &out, false))?;
                Ok((o.reports, ok(fs::read(out.join("rounds.csv")))?))
            };
            let (reports, csv) = run("a")?;
            let (again, csv_again) = run("b")?;
            let tag = format!("{} seed {seed}", strategy.as_str());
            ensure(reports == again && csv == csv_again, || format!("{tag}: rerun differs"))?;
            let fr: Vec<f64> = reports.iter().map(|r| r.labeled_fraction).collect();
            ensure(fr.windows(2).all(|w| w[0] < w[1]), || format!("{tag}: labeled fractions {fr:?}"))?;
            ensure((fr[fr.len() - 1] - 0.35).abs() < 1e-9, || format!("{tag}: stopped at {fr:?}"))?;
            let d0 = reports[0].metrics.dsc.mean;
            let dn = reports[reports.len() - 1].metrics.dsc.mean;
            lines.push(format!("{tag}: DSC {d0:.4} -> {dn:.4} over fractions {fr:?}"));
            ensure(dn >= d0, || format!("{tag}: final DSC {dn} below round-0 DSC {d0}"))?;
            finals.entry(strategy.as_str()).or_default().push(dn);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (r, w) = (mean(&finals["random"]), mean(&finals["wd"]));
    for l in &lines {
        println!("    {l}");
    }
    Ok(format!("12 runs; mean final DSC random {r:.4}, wd {w:.4} (ordering not asserted)"))
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_wdunet")
}

fn wdunet(args: &[&str], cwd: &Path) -> Result<(), String> {
    let out = ok(Command::new(bin()).args(args).current_dir(cwd).output())?;
    ensure(out.status.success(), || {
        format!("wdunet {args:?} failed: {}", String::from_utf8_lossy(&out.stderr))
    })
}

const RESUME_CONFIG: &str = r#"
[data]
dir = "data"
patch_shape = [16, 16, 16]
stride = [16, 16, 16]

[model]
base_channels = 4
fx_channels = 4
feature_channels = 4
critic_channels = 4

[train]
epochs_per_round = 2
lr = 0.01

[experiment]
rounds_budget = 4
per_round_batch = 4
seed = 5
record_wall_time = false

[generate]
count = 10
seed = 9
"#;

fn c9_crash_resume() -> Outcome {
    let tmp = ok(tempfile::tempdir())?;
    let root = tmp.path();
    ok(fs::write(root.join("run.toml"), RESUME_CONFIG))?;
    wdunet(&["generate", "--config", "run.toml"], root)?;
    wdunet(&["run", "--config", "run.toml", "--out", "full"], root)?;

    let crashed = root.join("crashed");
    let mut child = ok(Command::new(bin())
        .args(["run", "--config", "run.toml", "--out", "crashed"])
        .current_dir(root)
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn())?;
    let marker = crashed.join("checkpoints/round1/manifest.json");
    let deadline = Instant::now() + Duration::from_secs(300);
    while !marker.exists() {
        if Instant::now() > deadline || ok(child.try_wait())?.is_some() {
            let _ = child.kill();
            return Err("run ended or stalled before the round 1 checkpoint".into());
        }
        std::thread::sleep(Duration::from_millis(5));
    }
    ok(child.kill())?;
    ok(child.wait())?;
    ensure(!crashed.join("summary.json").exists(), || "run finished before it could be killed".into())?;
    let rounds_at_kill = fs::read_to_string(crashed.join("rounds.csv")).unwrap_or_default().lines().count();

    wdunet(&["run", "--resume", "crashed"], root)?;
    let full = ok(fs::read(root.join("full/rounds.csv")))?;
    let resumed = ok(fs::read(crashed.join("rounds.csv")))?;
    ensure(full == resumed, || "resumed rounds.csv differs from the uninterrupted run".into())?;
    let rows = full.iter().filter(|&&b| b == b'\n').count() - 1;
    Ok(format!(
        "killed with {} rounds recorded; resumed to {rows} rounds, rounds.csv byte-identical",
        rounds_at_kill.saturating_sub(1)
    ))
}

fn c10_round_trips() -> Outcome {
    let tmp = ok(tempfile::tempdir())?;
    let data = tmp.path().join("data");
    ok(fs::create_dir_all(&data))?;
    let g = GenerateConfig {
        count: 20,
        seed: 2024,
        ..GenerateConfig::default()
    };
    let manifest = ok(generate_dataset(&g, &data))?;
    let loaded = ok(load_dataset(&data))?;
    for (case, rec) in loaded.iter().zip(&manifest.cases) {
        let ph = ok(generate_phantom(&rec.spec))?;
        ensure(case.image == ph.image && case.mask == ph.mask && case.labels == ph.branch_labels, || {
            format!("{} differs after save/load", case.id)
        })?;
        for (name, v) in [("image", &ph.image), ("mask", &ph.mask), ("labels", &ph.branch_labels)] {
            let path = tmp.path().join(format!("{}_{name}", case.id));
            ok(save_volume(v, &path))?;
            ensure(&ok(load_volume(&path))? == v, || format!("{} {name} second round trip differs", case.id))?;
        }
    }

    let cases = small_cases(10);
    let mut runs: Vec<PathBuf> = Vec::new();
    for (i, strategy) in [StrategyName::Random, StrategyName::Entropy, StrategyName::Wd].into_iter().enumerate() {
        let cfg = ExperimentConfig {
            data: DataConfig {
                patch_shape: [16; 3],
                stride: [16; 3],
                ..DataConfig::default()
            },
            model: tiny_network(),
            strategy: StrategyConfig {
                name: strategy,
                ..StrategyConfig::default()
            },
            train: TrainConfig {
                epochs_per_round: 1,
                ..TrainConfig::default()
            },
            experiment: LoopConfig {
                record_wall_time: false,
                seed: i as u64,
                ..LoopConfig::default()
            },
            ..ExperimentConfig::default()
        };
        let out = tmp.path().join(format!("run_{}", strategy.as_str()));
        ok(run_experiment(&cfg, &cases, &out, false))?;
        runs.push(out);
    }
    let mut args = vec!["report".to_string()];
    args.extend(runs.iter().map(|p| p.display().to_string()));
    let mut reports = Vec::new();
    for name in ["rep_a", "rep_b"] {
        let mut a = args.clone();
        a.extend(["--out".to_string(), name.to_string()]);
        let refs: Vec<&str> = a.iter().map(String::as_str).collect();
        wdunet(&refs, tmp.path())?;
        let dir = tmp.path().join(name);
        reports.push((ok(fs::read(dir.join("report.csv")))?, ok(fs::read(dir.join("report.txt")))?));
    }
    ensure(reports[0] == reports[1], || "report regeneration is not byte-identical".into())?;
    let rows = reports[0].0.iter().filter(|&&b| b == b'\n').count() - 1;
    ensure(rows == 3, || format!("report has {rows} rows"))?;
    Ok(format!("{} phantoms x 3 volumes round-trip; 3-row report regenerated identically", loaded.len()))
}

type Criterion = (u32, &'static str, Duration, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        (1, "gradient-penalty analytic suite", Duration::from_secs(10), c1_gradient_penalty),
        (2, "loss correctness", Duration::from_secs(10), c2_losses),
        (3, "total-loss gradient check", Duration::from_secs(120), c3_gradient_check),
        (4, "metric oracle equivalence", Duration::from_secs(30), c4_metric_oracles),
        (5, "tree parsing", Duration::from_secs(60), c5_tree_parsing),
        (6, "query-strategy properties", Duration::from_secs(30), c6_query_properties),
        (7, "overfit check", Duration::from_secs(300), c7_overfit),
        (8, "end-to-end active learning trend", Duration::from_secs(1800), c8_trend),
        (9, "crash-resume determinism", Duration::from_secs(600), c9_crash_resume),
        (10, "format round-trips", Duration::from_secs(60), c10_round_trips),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, limit, f) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if took > limit => Err(format!("{detail}; took {took:.1?}, limit {limit:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS criterion {id} ({name}) [{took:.1?}]: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {id} ({name}) [{took:.1?}]: {why}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
