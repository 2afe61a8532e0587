use std::collections::HashMap;

use cofuse::data::{generate_synthetic_scene, one_hot, SynthSpec, SyntheticScene};
use cofuse::fusion::FusionStrategy;
use cofuse::model::{Model, ModelConfig, Variant};
use cofuse::network::{count_params, NetworkConfig};
use cofuse::tensor::{Graph, Mode};
use cofuse::train::{evaluate, fit, predict_map, total_loss, TrainConfig};

fn scene() -> SyntheticScene {
    generate_synthetic_scene(&SynthSpec {
        train_per_class: 30,
        test_per_class: 60,
        ..SynthSpec::default()
    })
    .unwrap()
}

fn model_config(variant: Variant, coupled: bool) -> ModelConfig {
    ModelConfig {
        network: NetworkConfig {
            k: 10,
            classes: 4,
            coupled,
            ..NetworkConfig::default()
        },
        variant,
    }
}

fn train_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn overfits_synthetic_scene_and_renders_regions() {
    let s = scene();
    let v = Variant::Decision(FusionStrategy::Sum);
    let (mut model, prepared, log) = fit(
        &s.scene,
        &s.train,
        &model_config(v, true),
        &train_config(30),
    )
    .unwrap();
    assert!(log.epochs.last().unwrap().train_oa >= 0.99);

    for e in &log.epochs {
        assert!((e.l - (0.01 * e.l1 + 0.01 * e.l2 + e.l3)).abs() < 1e-6);
    }
    // smoothed epoch loss does not rise after warm-up
    let smooth: Vec<f64> = log
        .epochs
        .windows(3)
        .map(|w| w.iter().map(|e| e.l).sum::<f64>() / 3.0)
        .collect();
    for w in smooth[5..].windows(2) {
        assert!(w[1] <= w[0] * 1.05 + 1e-4, "{:?}", w);
    }

    let map = predict_map(&mut model, &prepared).unwrap();
    assert_eq!(map.len(), 64 * 64);
    assert_eq!(map, predict_map(&mut model, &prepared).unwrap());
    // each Voronoi region's majority prediction equals its class
    let mut votes: HashMap<usize, HashMap<usize, usize>> = HashMap::new();
    for (t, p) in s.truth.iter().zip(&map) {
        *votes.entry(*t).or_default().entry(*p).or_default() += 1;
    }
    for (truth, v) in votes {
        let majority = v
            .into_iter()
            .max_by_key(|&(c, n)| (n, std::cmp::Reverse(c)))
            .unwrap()
            .0;
        assert_eq!(majority, truth);
    }

    let report = evaluate(&mut model, &prepared, &s.test, true).unwrap();
    let mut reversed = s.test.clone();
    reversed.reverse();
    let again = evaluate(&mut model, &prepared, &reversed, true).unwrap();
    assert_eq!(report, again);
    assert!(report.oa >= 0.9);
}

#[test]
fn coupled_and_uncoupled_both_converge() {
    let s = scene();
    let v = Variant::Feature(FusionStrategy::Max);
    let mut trainable = Vec::new();
    for coupled in [true, false] {
        let cfg = model_config(v, coupled);
        let (model, _, log) = fit(&s.scene, &s.train, &cfg, &train_config(20)).unwrap();
        assert!(
            log.epochs.last().unwrap().train_oa >= 0.95,
            "coupled={coupled}"
        );
        assert_eq!(model.extractor.is_shared(), coupled);
        trainable.push(model.store.trainable_count());
    }
    let counts = count_params(&model_config(v, true).network, FusionStrategy::Max);
    assert_eq!(counts.uncoupled - counts.coupled, 92160);
    // the duplicated blocks also bring their own bias, gamma and beta
    assert_eq!(trainable[1] - trainable[0], 92160 + 3 * (64 + 128));
}

#[test]
fn same_seed_same_final_loss() {
    let s = scene();
    let cfg = model_config(Variant::Decision(FusionStrategy::Concat), true);
    let a = fit(&s.scene, &s.train, &cfg, &train_config(3)).unwrap();
    let b = fit(&s.scene, &s.train, &cfg, &train_config(3)).unwrap();
    assert_eq!(a.2.final_loss.to_bits(), b.2.final_loss.to_bits());
    assert_eq!(a.0.to_bytes().unwrap(), b.0.to_bytes().unwrap());
    let c = fit(
        &s.scene,
        &s.train,
        &cfg,
        &TrainConfig {
            seed: 4,
            ..train_config(3)
        },
    )
    .unwrap();
    assert_ne!(a.2.final_loss, c.2.final_loss);
}

#[test]
fn zero_lambdas_leave_side_heads_without_gradient() {
    let s = scene();
    let cfg = model_config(Variant::Decision(FusionStrategy::Sum), true);
    let (_, prepared, _) = fit(&s.scene, &s.train, &cfg, &train_config(1)).unwrap();
    let batch = prepared.gather::<f32>(&s.train[..8], 11).unwrap();
    let target = one_hot::<f32>(&batch.labels, 4).unwrap();
    for (l1, l2, expect_side) in [(0.0, 0.0, false), (0.01, 0.01, true)] {
        let mut model = Model::<f32>::init(&cfg, 0).unwrap();
        let mut g = Graph::new();
        let (hs, li) = model.inputs(&mut g, &batch);
        let out = model.forward(&mut g, hs, li, Mode::Train).unwrap();
        let loss = total_loss(&mut g, &out, &target, l1, l2).unwrap();
        if !expect_side {
            assert_eq!(g.value(loss.l).item(), g.value(loss.l3).item());
        }
        g.backward(loss.l, &mut model.store).unwrap();
        let nonzero = |id| {
            model
                .store
                .grad(id)
                .unwrap()
                .data()
                .iter()
                .any(|&v| v != 0.0)
        };
        assert_eq!(nonzero(model.heads.w1.unwrap()), expect_side);
        assert_eq!(nonzero(model.heads.w2.unwrap()), expect_side);
        assert!(nonzero(model.heads.w3));
    }
}

#[test]
fn single_branch_and_feature_variants_train() {
    let s = scene();
    for v in [
        Variant::Hs,
        Variant::Lidar,
        Variant::Feature(FusionStrategy::Concat),
    ] {
        let (mut model, prepared, log) =
            fit(&s.scene, &s.train, &model_config(v, true), &train_config(2)).unwrap();
        assert!(model.decision.is_none());
        assert!(log.epochs.iter().all(|e| e.l1 == 0.0 && e.l2 == 0.0));
        assert!(evaluate(&mut model, &prepared, &s.test, true).is_err());
        evaluate(&mut model, &prepared, &s.test, false).unwrap();
    }
}

#[test]
fn missing_class_and_unknown_test_label_rejected() {
    let s = scene();
    let cfg = model_config(Variant::Hs, true);
    let only_three: Vec<_> = s
        .train
        .iter()
        .copied()
        .filter(|l| l.class_id != 3)
        .collect();
    assert!(fit(&s.scene, &only_three, &cfg, &train_config(1)).is_err());
    let (mut model, prepared, _) = fit(&s.scene, &s.train, &cfg, &train_config(1)).unwrap();
    let mut bad = s.test[..3].to_vec();
    bad[0].class_id = 5;
    assert!(evaluate(&mut model, &prepared, &bad, false).is_err());
}
