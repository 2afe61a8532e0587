use cofuse::data::{extract_patch, fit_pca, make_batches, mirror_index, Raster, RasterScene};
use cofuse::fusion::{
    decision_fuse, fuse_vectors, predict_class, DecisionWeights, FusionStrategy, DECISION_EPS,
};
use cofuse::metrics::{kappa, MetricsReport};
use cofuse::network::{count_params, NetworkConfig};
use cofuse::tensor::{Graph, Tensor};
use proptest::prelude::*;

fn vec_pair(len: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (
        prop::collection::vec(-10.0..10.0f64, len),
        prop::collection::vec(-10.0..10.0f64, len),
    )
}

proptest! {
    #[test]
    fn sum_and_max_commute((a, b) in vec_pair(16)) {
        for s in [FusionStrategy::Sum, FusionStrategy::Max] {
            prop_assert_eq!(fuse_vectors(&a, &b, s).unwrap(), fuse_vectors(&b, &a, s).unwrap());
        }
        prop_assert_eq!(fuse_vectors(&a, &a, FusionStrategy::Max).unwrap(), a.clone());
        let c = fuse_vectors(&a, &b, FusionStrategy::Concat).unwrap();
        prop_assert_eq!(&c[..16], &a[..]);
        prop_assert_eq!(&c[16..], &b[..]);
    }

    #[test]
    fn decision_weights_bounded_with_row_sum_identity(
        acc in prop::collection::vec(prop::array::uniform3(0.0..=1.0f64), 1..8)
    ) {
        let w = DecisionWeights::from_accuracy(acc.clone());
        for (u, a) in w.u.iter().zip(&acc) {
            prop_assert!(u.iter().all(|&x| (0.0..=1.0).contains(&x)));
            let s = a[0] + a[1] + a[2];
            let expect = (s + 3.0 * DECISION_EPS) / (s + DECISION_EPS);
            prop_assert!((u.iter().sum::<f64>() - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn decision_fusion_is_linear(
        y in prop::array::uniform3(prop::collection::vec(0.0..1.0f64, 4)),
        z in prop::collection::vec(0.0..1.0f64, 4),
        alpha in -3.0..3.0f64,
        acc in prop::collection::vec(prop::array::uniform3(0.0..=1.0f64), 4),
    ) {
        let w = DecisionWeights::from_accuracy(acc);
        let base = decision_fuse([&y[0], &y[1], &y[2]], &w).unwrap();
        let mixed: Vec<f64> = y[1].iter().zip(&z).map(|(a, b)| a + alpha * b).collect();
        let lhs = decision_fuse([&y[0], &mixed, &y[2]], &w).unwrap();
        let zero = vec![0.0; 4];
        let only_z = decision_fuse([&zero, &z, &zero], &w).unwrap();
        for i in 0..4 {
            prop_assert!((lhs[i] - (base[i] + alpha * only_z[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn predicted_class_scale_invariant(o in prop::collection::vec(0.0..5.0f64, 2..10), k in 0.01..100.0f64) {
        let scaled: Vec<f64> = o.iter().map(|v| v * k).collect();
        let c = predict_class(&o);
        prop_assert!(c >= 1 && c <= o.len());
        prop_assert_eq!(c, predict_class(&scaled));
    }

    #[test]
    fn softmax_rows_are_distributions(x in prop::collection::vec(-30.0..30.0f64, 12)) {
        let mut g = Graph::<f64>::new();
        let v = g.input(Tensor::new(&[3, 4], x).unwrap());
        let y = g.softmax(v).unwrap();
        for row in g.value(y).data().chunks(4) {
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn metrics_match_brute_force(
        classes in 2usize..6,
        pairs in prop::collection::vec((0usize..100, 0usize..100), 1..200),
    ) {
        let truth: Vec<usize> = pairs.iter().map(|p| p.0 % classes + 1).collect();
        let pred: Vec<usize> = pairs.iter().map(|p| p.1 % classes + 1).collect();
        let r = MetricsReport::from_pairs(&truth, &pred, classes).unwrap();
        let n = truth.len() as f64;
        let correct = truth.iter().zip(&pred).filter(|(a, b)| a == b).count() as f64;
        prop_assert_eq!(r.oa, correct / n);
        let mut accs = Vec::new();
        let mut pe = 0.0;
        for c in 1..=classes {
            let support = truth.iter().filter(|&&t| t == c).count();
            let predicted = pred.iter().filter(|&&p| p == c).count();
            pe += support as f64 * predicted as f64;
            if support > 0 {
                let hit = truth.iter().zip(&pred).filter(|(t, p)| **t == c && **p == c).count();
                accs.push(hit as f64 / support as f64);
            }
        }
        pe /= n * n;
        prop_assert!((r.aa - accs.iter().sum::<f64>() / accs.len() as f64).abs() < 1e-12);
        if pe < 1.0 {
            prop_assert!((r.kappa - (correct / n - pe) / (1.0 - pe)).abs() < 1e-12);
        }
        prop_assert_eq!(r.total() as usize, truth.len());
        prop_assert!(r.kappa <= 1.0);
        prop_assert_eq!(kappa(&r.confusion).unwrap(), r.kappa);
    }

    #[test]
    fn coupling_saves_fixed_weight_count(k in 1usize..200, classes in 2usize..40) {
        let cfg = NetworkConfig { k, classes, ..NetworkConfig::default() };
        for s in FusionStrategy::ALL {
            let c = count_params(&cfg, s);
            prop_assert_eq!(c.uncoupled - c.coupled, 92160);
        }
        let c = count_params(&cfg, FusionStrategy::Sum);
        prop_assert_eq!(c.coupled, 9 * (k * 32 + 32 + 32 * 64 + 64 * 128) + 3 * classes * 128);
    }

    #[test]
    fn mirror_stays_in_bounds(i in -500isize..500, len in 1usize..40) {
        let j = mirror_index(i, len);
        prop_assert!(j < len);
        if (0..len as isize).contains(&i) {
            prop_assert_eq!(j, i as usize);
        }
    }

    #[test]
    fn interior_patches_are_exact_copies(
        h in 3usize..12, w in 3usize..12, half in 0usize..3, seed in 0u64..1000,
    ) {
        let p = 2 * half + 1;
        let data: Vec<f32> = (0..h * w * 2).map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f32).collect();
        let cube = Raster::new(h, w, 2, data).unwrap();
        for r in 0..h {
            for c in 0..w {
                let patch = extract_patch(&cube, r, c, p).unwrap();
                prop_assert_eq!(patch.len(), 2 * p * p);
                if r >= half && c >= half && r + half < h && c + half < w {
                    for b in 0..2 {
                        for dr in 0..p {
                            for dc in 0..p {
                                prop_assert_eq!(
                                    patch[(b * p + dr) * p + dc],
                                    cube.get(b, r + dr - half, c + dc - half)
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn batches_cover_each_sample_once(n in 1usize..300, bs in 1usize..70, seed in any::<u64>()) {
        let batches = make_batches(n, bs, seed).unwrap();
        prop_assert_eq!(batches.len(), n.div_ceil(bs));
        prop_assert!(batches[..batches.len() - 1].iter().all(|b| b.len() == bs));
        let mut all = batches.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn pca_components_orthonormal(seed in any::<u64>(), bands in 2usize..8) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (6, 5);
        let data: Vec<f32> = (0..h * w * bands).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cube = Raster::new(h, w, bands, data).unwrap();
        let m = fit_pca(&cube, bands).unwrap();
        for i in 0..bands {
            for j in 0..bands {
                let d: f64 = m.component(i).iter().zip(m.component(j)).map(|(a, b)| a * b).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                prop_assert!((d - expect).abs() < 1e-5);
            }
        }
        prop_assert!(m.explained_variance.windows(2).all(|v| v[0] >= v[1]));
        prop_assert!(m.project_pixel(&m.mean).iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn raster_round_trip_bit_identical(values in prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 12)) {
        let dir = tempfile::tempdir().unwrap();
        let hsi = Raster::new(2, 2, 3, values).unwrap();
        let path = dir.path().join("hsi.json");
        hsi.save_pair(&path).unwrap();
        let back = Raster::load_pair(&path).unwrap();
        prop_assert_eq!(
            back.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            hsi.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        let lidar = Raster::new(2, 2, 1, vec![0.0; 4]).unwrap();
        prop_assert!(RasterScene::new(back, lidar).is_ok());
    }
}
