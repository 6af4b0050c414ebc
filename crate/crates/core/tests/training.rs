use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trajlet::encoder::{embed_trajectory, EncoderConfig, EncoderParams};
use trajlet::geometry::{normalize, NormalizedTrajectory};
use trajlet::rng::substream;
use trajlet::similarity::{similarity_matrix, Metric};
use trajlet::synth::{generate, Family, ManeuverSpec};
use trajlet::training::{
    mine_dynamic, mine_random, one_cycle_lr, train, train_to_dir, triplet_loss, verify_triplets, AdamHyper,
    MiningPhase, OptimizerState, TrainConfig, FINAL_CHECKPOINT, MANIFEST_FILE, TRAIN_LOG_FILE,
};

fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        d_model: 16,
        d_emb: 8,
        max_seq_len: 20,
        ..EncoderConfig::default()
    }
    .with_arch(2, 1)
}

fn two_class_bank(a: Family, b: Family, per_class: usize) -> Vec<NormalizedTrajectory> {
    class_bank(a, b, per_class, [4.0, 6.0])
}

fn class_bank(a: Family, b: Family, per_class: usize, speed: [f64; 2]) -> Vec<NormalizedTrajectory> {
    let specs: Vec<ManeuverSpec> = [a, b]
        .into_iter()
        .map(|f| ManeuverSpec {
            t: 20,
            noise_sigma: 0.05,
            speed,
            ..ManeuverSpec::new(f, per_class, 3)
        })
        .collect();
    generate(&specs)
        .unwrap()
        .iter()
        .map(|t| normalize(t).unwrap())
        .collect()
}

fn config(steps: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        steps,
        lr_max: 3e-3,
        seed: 5,
        ..TrainConfig::default()
    }
}

fn random_unit(r: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| r.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

#[test]
fn hinge_fixtures() {
    let a = [0.0, 0.0];
    let out = triplet_loss(&a, &[0.2, 0.0], &[0.0, 0.9], 0.5);
    assert_eq!(out.loss, 0.0);
    assert!(out
        .grad_anchor
        .iter()
        .chain(&out.grad_positive)
        .chain(&out.grad_negative)
        .all(|&g| g == 0.0));
    let out = triplet_loss(&a, &[0.8, 0.0], &[0.0, 0.3], 0.5);
    assert!((out.loss - 1.0).abs() < 1e-15);
}

#[test]
fn loss_gradients_match_finite_differences() {
    let mut r = ChaCha8Rng::seed_from_u64(9);
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let v = [random_unit(&mut r, 8), random_unit(&mut r, 8), random_unit(&mut r, 8)];
        let out = triplet_loss(&v[0], &v[1], &v[2], 1.0);
        if out.loss == 0.0 || (out.d_ap - out.d_an + 1.0).abs() < 1e-3 {
            continue;
        }
        let grads = [&out.grad_anchor, &out.grad_positive, &out.grad_negative];
        for which in 0..3 {
            for i in 0..8 {
                let mut plus = v.clone();
                let mut minus = v.clone();
                plus[which][i] += eps;
                minus[which][i] -= eps;
                let fp = triplet_loss(&plus[0], &plus[1], &plus[2], 1.0).loss;
                let fm = triplet_loss(&minus[0], &minus[1], &minus[2], 1.0).loss;
                let numeric = (fp - fm) / (2.0 * eps);
                let analytic = grads[which][i];
                worst = worst.max((numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-3));
            }
        }
    }
    assert!(worst < 1e-6, "max rel err {worst:e}");
}

#[test]
fn loss_is_rotation_invariant() {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let (a, p, n) = (random_unit(&mut r, 2), random_unit(&mut r, 2), random_unit(&mut r, 2));
    let rot = |v: &[f64]| {
        let (s, c) = 0.77f64.sin_cos();
        vec![c * v[0] - s * v[1], s * v[0] + c * v[1]]
    };
    let l0 = triplet_loss(&a, &p, &n, 0.5).loss;
    let l1 = triplet_loss(&rot(&a), &rot(&p), &rot(&n), 0.5).loss;
    assert!((l0 - l1).abs() < 1e-12);
}

#[test]
fn schedule_anchors_and_shape() {
    let total = 1000;
    assert!((one_cycle_lr(0, total, 1.0) - 1.0 / 25.0).abs() < 1e-15);
    assert!((one_cycle_lr(300, total, 1.0) - 1.0).abs() < 1e-12);
    let lrs: Vec<f64> = (0..=total).map(|s| one_cycle_lr(s, total, 1.0)).collect();
    assert!(lrs[..=300].windows(2).all(|w| w[1] >= w[0]));
    assert!(lrs[300..].windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn zero_gradient_step_is_a_no_op() {
    let mut params = vec![0.5, -1.0, 2.0];
    let mut opt = OptimizerState::new(3, AdamHyper::default());
    opt.step(&mut params, &[0.0; 3], 1e-2);
    assert_eq!(params, vec![0.5, -1.0, 2.0]);
}

#[test]
fn mined_triplets_respect_the_threshold() {
    let bank = two_class_bank(Family::LeftTurn, Family::Straight, 20);
    let sim = similarity_matrix(&bank, Metric::CosineCombined, 0.5).unwrap();
    let mut rng = substream(1, "mining");
    let random = mine_random(&sim, 0.7, &mut rng);
    assert!(!random.is_empty());
    assert!(verify_triplets(&sim, 0.7, &random));
    let params = EncoderParams::init(tiny_encoder(), 0).unwrap();
    let embs: Vec<_> = bank.iter().map(|t| embed_trajectory(&params, t).unwrap()).collect();
    for phase in [MiningPhase::Hard, MiningPhase::SemiHard] {
        let dynamic = mine_dynamic(&sim, &embs, 0.7, phase, 0.5, &mut rng);
        assert!(verify_triplets(&sim, 0.7, &dynamic.triplets));
    }
}

#[test]
fn smoke_training_reduces_loss() {
    let bank = two_class_bank(Family::LeftTurn, Family::RightTurn, 40);
    let out = train(&bank, &config(200), &tiny_encoder()).unwrap();
    let losses = out.losses();
    assert!(losses.len() > 150);
    let n = losses.len() / 10;
    let first = losses[..n].iter().sum::<f64>() / n as f64;
    let last = losses[losses.len() - n..].iter().sum::<f64>() / n as f64;
    assert!(last < first, "first {first} last {last}");
}

#[test]
fn zero_margin_reaches_exactly_zero() {
    // one speed per class, so every below-threshold pair crosses classes
    let bank = class_bank(Family::Straight, Family::UTurn, 30, [5.0, 5.0]);
    let cfg = TrainConfig {
        margin: 0.0,
        ..config(60)
    };
    let out = train(&bank, &cfg, &tiny_encoder()).unwrap();
    let losses = out.losses();
    assert!(losses.contains(&0.0), "{:?}", &losses[losses.len() - 5..]);
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let bank = two_class_bank(Family::LeftTurn, Family::RightTurn, 20);
    let cfg = TrainConfig {
        checkpoint_every: 5,
        ..config(10)
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        train_to_dir(&bank, &cfg, &tiny_encoder(), d.path()).unwrap();
    }
    for name in [FINAL_CHECKPOINT, MANIFEST_FILE, TRAIN_LOG_FILE, "step-000005.trjl"] {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let bank = two_class_bank(Family::LeftTurn, Family::RightTurn, 5);
    for cfg in [
        TrainConfig {
            sim_threshold: 1.0,
            ..config(5)
        },
        TrainConfig {
            batch_size: 2,
            ..config(5)
        },
        TrainConfig {
            margin: -0.1,
            ..config(5)
        },
    ] {
        assert!(train(&bank, &cfg, &tiny_encoder()).is_err());
    }
}
