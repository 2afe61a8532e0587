use cofuse::data::{one_hot, PatchBatch};
use cofuse::fusion::FusionStrategy;
use cofuse::gradcheck::{check_model, check_op, GradCheckReport, Tolerance};
use cofuse::model::{Model, ModelConfig, Variant};
use cofuse::network::NetworkConfig;
use cofuse::tensor::{Graph, Mode, RunningStats, Tensor, Var};
use cofuse::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 20;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn probabilities(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape,
        (0..n).map(|_| rng.random_range(0.05..0.95)).collect(),
    )
    .unwrap()
}

fn assert_pass(name: &str, r: &GradCheckReport) {
    assert!(
        r.passed(),
        "{name}: {:?}",
        &r.failures[..r.failures.len().min(5)]
    );
    assert!(
        r.skipped * 5 <= r.checked,
        "{name}: {} kinks skipped for {} checks",
        r.skipped,
        r.checked
    );
}

fn sweep<F>(name: &str, shapes: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>, build: F)
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + Copy,
{
    let mut total = GradCheckReport::default();
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = shapes(&mut rng);
        total.merge(check_op(&inputs, seed, Tolerance::default(), build).unwrap());
    }
    assert_pass(name, &total);
}

#[test]
fn conv2d_same() {
    sweep(
        "conv2d",
        |r| {
            vec![
                random(&[2, 2, 4, 3], r),
                random(&[3, 2, 3, 3], r),
                random(&[3], r),
            ]
        },
        |g, v| g.conv2d_same(v[0], v[1], Some(v[2])),
    );
}

#[test]
fn batch_norm_train_mode() {
    sweep(
        "batch_norm",
        |r| vec![random(&[3, 2, 2, 2], r), random(&[2], r), random(&[2], r)],
        |g, v| {
            let mut stats = RunningStats::new(2);
            g.batch_norm2d(v[0], v[1], v[2], &mut stats, Mode::Train)
        },
    );
}

#[test]
fn batch_norm_infer_mode() {
    sweep(
        "batch_norm_infer",
        |r| vec![random(&[2, 2, 2, 2], r), random(&[2], r), random(&[2], r)],
        |g, v| {
            let mut stats = RunningStats::new(2);
            stats.mean = vec![0.3, -0.2];
            stats.var = vec![0.5, 2.0];
            g.batch_norm2d(v[0], v[1], v[2], &mut stats, Mode::Infer)
        },
    );
}

#[test]
fn relu() {
    sweep(
        "relu",
        |r| vec![random(&[4, 5], r)],
        |g, v| Ok(g.relu(v[0])),
    );
}

#[test]
fn max_pool() {
    sweep(
        "max_pool2",
        |r| vec![random(&[2, 2, 5, 4], r)],
        |g, v| g.max_pool2(v[0]),
    );
}

#[test]
fn linear_and_softmax() {
    sweep(
        "linear",
        |r| vec![random(&[3, 4], r), random(&[2, 4], r)],
        |g, v| g.linear(v[0], v[1]),
    );
    sweep(
        "softmax",
        |r| vec![random(&[3, 4], r)],
        |g, v| g.softmax(v[0]),
    );
}

#[test]
fn binary_cross_entropy() {
    sweep(
        "bce",
        |r| vec![probabilities(&[2, 3], r)],
        |g, v| {
            let target = (0..6).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect();
            g.bce_loss(v[0], &Tensor::new(&[2, 3], target)?)
        },
    );
}

#[test]
fn elementwise_and_structural() {
    let pair = |r: &mut ChaCha8Rng| vec![random(&[3, 4], r), random(&[3, 4], r)];
    sweep("add", pair, |g, v| g.add(v[0], v[1]));
    sweep("mul", pair, |g, v| g.mul(v[0], v[1]));
    sweep("elem_max", pair, |g, v| g.elem_max(v[0], v[1]));
    sweep(
        "concat",
        |r| vec![random(&[3, 2], r), random(&[3, 5], r)],
        |g, v| g.concat(v[0], v[1]),
    );
    sweep(
        "flatten",
        |r| vec![random(&[2, 3, 2, 2], r)],
        |g, v| g.flatten(v[0]),
    );
    sweep("sum", |r| vec![random(&[2, 3], r)], |g, v| Ok(g.sum(v[0])));
    sweep("lin_comb", pair, |g, v| {
        g.lin_comb(&[(v[0], 0.3), (v[1], -1.7)])
    });
}

fn tiny_config(variant: Variant, coupled: bool) -> ModelConfig {
    ModelConfig {
        network: NetworkConfig {
            k: 3,
            p: 9,
            widths: [2, 3, 4],
            classes: 2,
            coupled,
        },
        variant,
    }
}

fn composite(variant: Variant, coupled: bool) -> GradCheckReport {
    let mut total = GradCheckReport::default();
    for seed in 0..SEEDS {
        let cfg = tiny_config(variant, coupled);
        let mut model = Model::<f64>::init(&cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let n = 3;
        let labels: Vec<usize> = (0..n).map(|i| 1 + (i + seed as usize) % 2).collect();
        let batch = PatchBatch {
            hsi: random(&[n, 3, 9, 9], &mut rng),
            lidar: random(&[n, 1, 9, 9], &mut rng),
            labels: labels.clone(),
        };
        let target = one_hot::<f64>(&labels, 2).unwrap();
        total.merge(
            check_model(
                &mut model,
                &batch,
                &target,
                (0.5, 0.5),
                Tolerance::default(),
            )
            .unwrap(),
        );
    }
    total
}

#[test]
fn composite_network_all_fusions() {
    for s in FusionStrategy::ALL {
        let v = Variant::Decision(s);
        assert_pass(&format!("{v}"), &composite(v, true));
    }
}

#[test]
fn composite_network_other_variants() {
    for (v, coupled) in [
        (Variant::Feature(FusionStrategy::Sum), true),
        (Variant::Decision(FusionStrategy::Max), false),
        (Variant::Hs, true),
        (Variant::Lidar, true),
    ] {
        assert_pass(&format!("{v} coupled={coupled}"), &composite(v, coupled));
    }
}
