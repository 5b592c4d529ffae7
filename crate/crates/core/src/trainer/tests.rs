use super::*;
use crate::model::ModelConfig;

fn tiny_set(speakers: usize, utts: usize, len: usize) -> TrainSet {
    let items = (0..speakers)
        .flat_map(|s| {
            (0..utts).map(move |u| {
                let f = 0.05 + 0.07 * s as f64;
                let samples = (0..len)
                    .map(|i| (i as f64 * f + u as f64).sin() * 0.5 + 0.1 * ((i * (u + 2)) as f64 * 0.9).cos())
                    .collect();
                (format!("s{s}_u{u}"), format!("s{s}"), samples)
            })
        })
        .collect();
    TrainSet::new(items)
}

fn tiny_cfg() -> TrainConfig {
    TrainConfig {
        triplets_per_batch: 3,
        crop_seconds: None,
        deterministic: true,
        ..TrainConfig::default()
    }
}

fn key(step: u64) -> StepKey {
    StepKey { seed: 5, epoch: 0, step }
}

#[test]
fn triplet_loss_examples() {
    let a = [1.0, 0.0];
    // positive equals anchor, negative orthogonal: 0 − 1 + 0.5 < 0
    assert_eq!(triplet_loss(&a, &a, &[0.0, 1.0], 0.5), 0.0);
    // positive orthogonal, negative equal to anchor: 1 − 0 + 0.5
    assert_eq!(triplet_loss(&a, &[0.0, 1.0], &a, 0.5), 1.5);
    // equidistant: margin
    assert_eq!(triplet_loss(&a, &[0.0, 1.0], &[0.0, -1.0], 0.5), 0.5);
}

#[test]
fn random_triplets_respect_speakers_and_are_deterministic() {
    let set = tiny_set(4, 3, 200);
    let cfg = TrainConfig {
        triplets_per_batch: 50,
        ..tiny_cfg()
    };
    let none = |_: &[usize]| -> Result<Vec<Vec<f64>>> { unreachable!() };
    let t = sample_triplets(&set, &cfg, Mining::Random, key(0), none).unwrap();
    assert_eq!(t.len(), 50);
    for x in &t {
        let sp = |u: usize| set.utterances[u].speaker;
        assert_eq!(sp(x.anchor), sp(x.positive));
        assert_ne!(x.anchor, x.positive);
        assert_ne!(sp(x.anchor), sp(x.negative));
    }
    assert_eq!(t, sample_triplets(&set, &cfg, Mining::Random, key(0), none).unwrap());
    assert_ne!(t, sample_triplets(&set, &cfg, Mining::Random, key(1), none).unwrap());
}

#[test]
fn infeasible_sets_are_rejected() {
    let one = tiny_set(1, 5, 200);
    let none = |_: &[usize]| -> Result<Vec<Vec<f64>>> { unreachable!() };
    assert!(matches!(
        sample_triplets(&one, &tiny_cfg(), Mining::Random, key(0), none),
        Err(Error::InfeasibleTriplets(_))
    ));
    let singletons = tiny_set(5, 1, 200);
    assert!(matches!(
        sample_triplets(&singletons, &tiny_cfg(), Mining::Random, key(0), none),
        Err(Error::InfeasibleTriplets(_))
    ));
}

#[test]
fn semi_hard_prefers_band_then_hardest() {
    let mut rng = crate::seed::rng(0, &[]);
    // only candidate 7 lies in (0.2, 0.7)
    let c = [(3, 0.1), (7, 0.4), (9, 0.9)];
    for _ in 0..20 {
        assert_eq!(select_negative(0.2, &c, 0.5, &mut rng), 7);
    }
    // nothing in the band: closest wins
    assert_eq!(select_negative(0.2, &[(3, 0.15), (9, 0.9)], 0.5, &mut rng), 3);
}

#[test]
fn semi_hard_uses_configured_pool() {
    let set = tiny_set(6, 5, 200);
    let cfg = TrainConfig {
        pool_speakers: 3,
        pool_utterances: 2,
        triplets_per_batch: 10,
        ..tiny_cfg()
    };
    let mut pool = Vec::new();
    let t = sample_triplets(&set, &cfg, Mining::SemiHard, key(0), |u| {
        pool = u.to_vec();
        Ok(u.iter().map(|&i| vec![(i as f64).cos(), (i as f64).sin()]).collect())
    })
    .unwrap();
    assert_eq!(pool.len(), 6);
    for x in &t {
        assert!(pool.contains(&x.anchor) && pool.contains(&x.positive) && pool.contains(&x.negative));
    }
}

#[test]
fn schedule_switches_after_warmup() {
    let s = MiningSchedule::SemiHardAfter(2);
    assert_eq!(s.at(0), Mining::Random);
    assert_eq!(s.at(1), Mining::Random);
    assert_eq!(s.at(2), Mining::SemiHard);
}

#[test]
fn zero_loss_batch_leaves_parameters_unchanged() {
    let set = tiny_set(2, 2, 200);
    let mut model = Model::init(ModelConfig::tiny(), 1).unwrap();
    let before = model.clone();
    let mut opt = Adam::new(&model, 1e-2);
    // a tiny margin with an anchor identical to its positive gives zero loss
    // unless the negative coincides with the anchor too
    let mut set2 = set.clone();
    set2.utterances[1].samples = set2.utterances[0].samples.clone();
    let cfg = TrainConfig {
        margin: 1e-9,
        ..tiny_cfg()
    };
    let t = [Triplet {
        anchor: 0,
        positive: 1,
        negative: 2,
    }];
    let s = train_step(&mut model, &mut opt, &set2, &t, key(0), &cfg).unwrap();
    assert_eq!(s.loss, 0.0);
    assert_eq!(s.active_triplets, 0);
    assert_eq!(model, before);
    assert_eq!(opt.t, 1);
}

#[test]
fn one_step_reduces_single_triplet_loss() {
    let set = tiny_set(2, 2, 300);
    let mut model = Model::init(ModelConfig::tiny(), 2).unwrap();
    let cfg = TrainConfig {
        margin: 2.5,
        ..tiny_cfg()
    };
    let t = [Triplet {
        anchor: 0,
        positive: 1,
        negative: 2,
    }];
    let before = batch_loss(&model, &set, &t, key(0), &cfg).unwrap();
    let mut opt = Adam::new(&model, 1e-3);
    let s = train_step(&mut model, &mut opt, &set, &t, key(0), &cfg).unwrap();
    assert!((s.loss - before).abs() < 1e-12);
    let after = batch_loss(&model, &set, &t, key(0), &cfg).unwrap();
    assert!(after < before, "{after} >= {before}");
    assert!(s.grad_norm_frontend > 0.0 && s.grad_norm_encoder > 0.0 && s.grad_norm_tokens > 0.0);
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let set = tiny_set(3, 2, 400);
    let model = Model::init(ModelConfig::tiny(), 3).unwrap();
    // margin above the largest possible distance gap keeps every hinge active
    let cfg = TrainConfig {
        margin: 2.5,
        ..tiny_cfg()
    };
    let t = [
        Triplet { anchor: 0, positive: 1, negative: 2 },
        Triplet { anchor: 3, positive: 2, negative: 5 },
    ];
    let (_, _, grads, _) = batch_gradient(&model, &set, &t, key(0), &cfg).unwrap();
    let eps = 1e-6;
    let mut groups: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    let names: Vec<String> = model.tensors().into_iter().map(|(n, _)| n).collect();
    let analytic: Vec<Vec<f64>> = grads.tensors().into_iter().map(|(_, t)| t.data.clone()).collect();
    for (k, name) in names.iter().enumerate() {
        let group = ["frontend", "encoder.conv", "encoder.gru", "tokens"]
            .into_iter()
            .find(|g| name.starts_with(g))
            .unwrap();
        for j in 0..analytic[k].len() {
            let eval = |d: f64| {
                let mut m = model.clone();
                m.tensors_mut()[k].1.data[j] += d;
                batch_loss(&m, &set, &t, key(0), &cfg).unwrap()
            };
            let fd = (eval(eps) - eval(-eps)) / (2.0 * eps);
            let e = groups.entry(group).or_default();
            e.0 += (analytic[k][j] - fd).powi(2);
            e.1 += fd.powi(2);
        }
    }
    assert_eq!(groups.len(), 4);
    for (g, (diff, norm)) in groups {
        let rel = (diff / norm).sqrt();
        assert!(norm > 0.0, "{g} has zero gradient");
        assert!(rel < 1e-4, "{g}: relative error {rel}");
    }
}

#[test]
fn zero_epochs_returns_initial_model() {
    let set = tiny_set(3, 3, 300);
    let start = initial_checkpoint(ModelConfig::tiny(), 4).unwrap();
    let cfg = TrainConfig { epochs: 0, ..tiny_cfg() };
    let out = train_loop(start.clone(), &cfg, &set, None).unwrap();
    assert_eq!(out.checkpoint.model, start.model);
    assert!(out.log.is_empty());
}

fn short_run(dir: Option<&Path>) -> TrainOutcome {
    let set = tiny_set(3, 3, 300);
    let cfg = TrainConfig {
        epochs: 3,
        steps_per_epoch: Some(2),
        mining: MiningSchedule::SemiHardAfter(1),
        crop_seconds: Some(0.03),
        learning_rate: 1e-2,
        seed: 9,
        ..tiny_cfg()
    };
    train_loop(initial_checkpoint(ModelConfig::tiny(), 9).unwrap(), &cfg, &set, dir).unwrap()
}

#[test]
fn training_is_deterministic_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let a = short_run(Some(dir.path()));
    let b = short_run(None);
    assert_eq!(a.checkpoint, b.checkpoint);
    assert_eq!(a.log, b.log);
    assert_eq!(a.log.len(), 6);
    let loaded = load_checkpoint(dir.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(loaded, a.checkpoint);
    let log = std::fs::read_to_string(dir.path().join(LOSS_LOG_FILE)).unwrap();
    assert!(log.starts_with("epoch\tstep\tloss\n"));
    assert_eq!(log.lines().count(), 7);
    assert_eq!(crate::io::read_sidecar_seed(&dir.path().join(LOSS_LOG_FILE)), Some(9));
}

#[test]
fn resuming_matches_uninterrupted_run() {
    let set = tiny_set(3, 3, 300);
    let base = TrainConfig {
        steps_per_epoch: Some(2),
        crop_seconds: Some(0.03),
        learning_rate: 1e-2,
        seed: 2,
        ..tiny_cfg()
    };
    let start = initial_checkpoint(ModelConfig::tiny(), 2).unwrap();
    let full = train_loop(start.clone(), &TrainConfig { epochs: 3, ..base.clone() }, &set, None).unwrap();
    let half = train_loop(start, &TrainConfig { epochs: 1, ..base.clone() }, &set, None).unwrap();
    let rest = train_loop(half.checkpoint, &TrainConfig { epochs: 3, ..base }, &set, None).unwrap();
    assert_eq!(rest.checkpoint, full.checkpoint);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ModelConfig::tiny();
    cfg.feature_norm = true;
    let mut ck = initial_checkpoint(cfg, 6).unwrap();
    let p = dir.path().join("a.ckpt");
    save_checkpoint(&p, &ck).unwrap();
    assert_eq!(load_checkpoint(&p).unwrap(), ck);
    ck.state.optimizer = Some(Adam::new(&ck.model, 1e-3));
    save_checkpoint(&p, &ck).unwrap();
    assert_eq!(load_checkpoint(&p).unwrap(), ck);
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ck = initial_checkpoint(ModelConfig::tiny(), 6).unwrap();
    let p = dir.path().join("a.ckpt");
    save_checkpoint(&p, &ck).unwrap();
    let bytes = std::fs::read(&p).unwrap();

    let truncated = dir.path().join("t.ckpt");
    std::fs::write(&truncated, &bytes[..bytes.len() - 4]).unwrap();
    assert!(matches!(load_checkpoint(&truncated), Err(Error::PayloadLength { .. })));

    let split = bytes.windows(2).position(|w| w == b"\n\n").unwrap();
    let head = std::str::from_utf8(&bytes[..split]).unwrap();
    let reshaped = head.replacen("tokens\tf32\t4x8", "tokens\tf32\t4x9", 1);
    assert_ne!(reshaped, head);
    let mut corrupted = reshaped.into_bytes();
    corrupted.extend_from_slice(&bytes[split..]);
    let bad = dir.path().join("s.ckpt");
    std::fs::write(&bad, corrupted).unwrap();
    match load_checkpoint(&bad) {
        Err(Error::CheckpointParam { name, .. }) => assert_eq!(name, "tokens"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn invalid_train_config() {
    for cfg in [
        TrainConfig { margin: 0.0, ..TrainConfig::default() },
        TrainConfig { learning_rate: -1.0, ..TrainConfig::default() },
        TrainConfig { triplets_per_batch: 0, ..TrainConfig::default() },
        TrainConfig { pool_speakers: 1, ..TrainConfig::default() },
    ] {
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
