use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use cofuse::data::{
    generate_synthetic_scene, max_class, read_labels, validate_labels, write_labels, LabeledPixel,
    PreparedScene, Raster, RasterScene, SynthSpec,
};
use cofuse::fusion::FusionStrategy;
use cofuse::metrics::MetricsReport;
use cofuse::model::{Model, Variant};
use cofuse::network::count_params;
use cofuse::train::{evaluate, fit, predict_map};
use serde::Serialize;

use crate::config::{require, ExperimentConfig, RunFlags};
use crate::render::{side_by_side, write_ppm};

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    /// Scene size as HEIGHTxWIDTH.
    #[arg(long, default_value = "64x64", value_parser = parse_size)]
    pub size: (usize, usize),
    #[arg(long, default_value_t = 30)]
    pub bands: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 40)]
    pub train_per_class: usize,
    #[arg(long, default_value_t = 200)]
    pub test_per_class: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HEIGHTxWIDTH, got '{s}'"))?;
    let n = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|e| format!("bad size '{s}': {e}"))
    };
    Ok((n(h)?, n(w)?))
}

#[derive(Serialize)]
struct SynthManifest<'a> {
    spec: &'a SynthSpec,
    hsi: &'static str,
    lidar: &'static str,
    train_labels: &'static str,
    test_labels: &'static str,
    truth_labels: &'static str,
    train_samples: usize,
    test_samples: usize,
    spectral_twins: (usize, usize),
    height_twins: Option<(usize, usize)>,
    class_heights: &'a [f32],
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        classes: args.classes,
        height: args.size.0,
        width: args.size.1,
        bands: args.bands,
        seed: args.seed,
        train_per_class: args.train_per_class,
        test_per_class: args.test_per_class,
        ..SynthSpec::default()
    };
    let s = generate_synthetic_scene(&spec)?;
    let out = &args.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    s.scene.hsi.save_pair(&out.join("hsi.json"))?;
    s.scene.lidar.save_pair(&out.join("lidar.json"))?;
    write_labels(&out.join("train.csv"), &s.train)?;
    write_labels(&out.join("test.csv"), &s.test)?;
    let truth: Vec<LabeledPixel> = s
        .truth
        .iter()
        .enumerate()
        .map(|(i, &c)| LabeledPixel {
            row: i / spec.width,
            col: i % spec.width,
            class_id: c,
        })
        .collect();
    write_labels(&out.join("truth.csv"), &truth)?;
    let manifest = SynthManifest {
        spec: &spec,
        hsi: "hsi.json",
        lidar: "lidar.json",
        train_labels: "train.csv",
        test_labels: "test.csv",
        truth_labels: "truth.csv",
        train_samples: s.train.len(),
        test_samples: s.test.len(),
        spectral_twins: s.spectral_twins,
        height_twins: s.height_twins,
        class_heights: &s.heights,
    };
    fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    println!(
        "wrote {}x{}x{} scene, {} train / {} test samples to {}",
        spec.height,
        spec.width,
        spec.bands,
        s.train.len(),
        s.test.len(),
        out.display()
    );
    Ok(())
}

/// Reads the rasters a variant needs. The unused modality of a single-branch
/// variant is replaced by zeros on the same grid.
fn load_scene(cfg: &ExperimentConfig, variant: Variant, k: usize) -> Result<RasterScene> {
    let load =
        |p: &Path| Raster::load_pair(p).with_context(|| format!("loading raster {}", p.display()));
    let scene = match variant {
        Variant::Hs => {
            if cfg.lidar.is_some() {
                eprintln!("warning: {variant} ignores the LiDAR raster");
            }
            let hsi = load(require(&cfg.hsi, "hsi")?)?;
            let lidar = Raster::new(hsi.height, hsi.width, 1, vec![0.0; hsi.pixels()])?;
            RasterScene::new(hsi, lidar)?
        }
        Variant::Lidar => {
            if cfg.hsi.is_some() {
                eprintln!("warning: {variant} ignores the hyperspectral raster");
            }
            let lidar = load(require(&cfg.lidar, "lidar")?)?;
            let hsi = Raster::new(lidar.height, lidar.width, k, vec![0.0; k * lidar.pixels()])?;
            RasterScene::new(hsi, lidar)?
        }
        _ => RasterScene::new(
            load(require(&cfg.hsi, "hsi")?)?,
            load(require(&cfg.lidar, "lidar")?)?,
        )?,
    };
    Ok(scene)
}

fn load_labels(path: &Path, scene: &RasterScene, classes: usize) -> Result<Vec<LabeledPixel>> {
    let labels = read_labels(path).with_context(|| format!("reading labels {}", path.display()))?;
    validate_labels(&labels, scene.height(), scene.width(), classes)
        .with_context(|| format!("validating {}", path.display()))?;
    Ok(labels)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

/// Trains one configuration; returns the model, its prepared scene and the
/// test metrics when test labels are configured.
pub fn train_run(
    cfg: &ExperimentConfig,
    out: &Path,
    quiet: bool,
) -> Result<(
    Model<f32>,
    PreparedScene,
    RasterScene,
    Option<MetricsReport>,
)> {
    let started = Instant::now();
    let scene = load_scene(cfg, cfg.variant, cfg.k)?;
    let train_path = require(&cfg.train_labels, "train-labels")?;
    let probe = read_labels(train_path)
        .with_context(|| format!("reading labels {}", train_path.display()))?;
    let classes = max_class(&probe);
    if classes < 2 {
        bail!("training labels name {classes} class(es); need at least 2");
    }
    let train = load_labels(train_path, &scene, classes)?;
    let model_cfg = cfg.model_config(classes);
    let (mut model, prepared, log) = fit(&scene, &train, &model_cfg, &cfg.train_config())?;

    fs::create_dir_all(out)?;
    cfg.echo(out)?;
    log.write_csv(&out.join("train_log.csv"))?;
    let ckpt = if out == cfg.out {
        cfg.checkpoint_path()
    } else {
        out.join("model.ckpt")
    };
    model
        .save(&ckpt)
        .with_context(|| format!("writing {}", ckpt.display()))?;

    let metrics = match &cfg.test_labels {
        Some(path) => {
            let test = load_labels(path, &scene, classes)?;
            let m = evaluate(&mut model, &prepared, &test, cfg.variant.decision_fusion())?;
            write_json(&out.join("metrics.json"), &m)?;
            Some(m)
        }
        None => None,
    };
    if !quiet {
        let last = log.epochs.last().expect("at least one epoch");
        if let Some(f) = cfg.variant.fusion() {
            let counts = count_params(&model_cfg.network, f);
            println!(
                "weights: {} coupled / {} uncoupled",
                counts.coupled, counts.uncoupled
            );
        }
        println!(
            "{} trained {} epochs: L={:.6} L1={:.6} L2={:.6} L3={:.6} train_OA={:.4}",
            cfg.variant, last.epoch, last.l, last.l1, last.l2, last.l3, last.train_oa
        );
        if let Some(m) = &metrics {
            println!(
                "test OA={:.2}% AA={:.2}% Kappa={:.4}",
                100.0 * m.oa,
                100.0 * m.aa,
                m.kappa
            );
        }
        println!("checkpoint: {}", ckpt.display());
        println!("wall time: {:.2}s", started.elapsed().as_secs_f64());
    }
    Ok((model, prepared, scene, metrics))
}

pub fn train(flags: &RunFlags) -> Result<()> {
    let cfg = flags.resolve()?;
    train_run(&cfg, &cfg.out.clone(), false)?;
    Ok(())
}

fn load_model(cfg: &ExperimentConfig) -> Result<(Model<f32>, PreparedScene, RasterScene)> {
    let path = cfg.checkpoint_path();
    let model = Model::<f32>::load(&path)
        .with_context(|| format!("loading checkpoint {}", path.display()))?;
    let variant = model.config.variant;
    let scene = load_scene(cfg, variant, model.config.network.k)?;
    let pre = model
        .preprocessor
        .as_ref()
        .context("checkpoint carries no preprocessing model")?;
    let prepared = pre.apply(&scene)?;
    Ok((model, prepared, scene))
}

/// Per-class accuracy, OA, AA and Kappa in percent, one column per model.
pub fn format_table(variant: Variant, m: &MetricsReport) -> String {
    let mut s = format!("{:<8} {:>10}\n", "Class", variant.to_string());
    for (i, a) in m.per_class_accuracy.iter().enumerate() {
        let v = a.map_or_else(|| "-".to_string(), |a| format!("{:.2}", 100.0 * a));
        s += &format!("{:<8} {:>10}\n", i + 1, v);
    }
    s += &format!("{:<8} {:>10.2}\n", "OA", 100.0 * m.oa);
    s += &format!("{:<8} {:>10.2}\n", "AA", 100.0 * m.aa);
    s += &format!("{:<8} {:>10.4}\n", "Kappa", m.kappa);
    s
}

pub fn eval(flags: &RunFlags) -> Result<()> {
    let cfg = flags.resolve()?;
    let (mut model, prepared, scene) = load_model(&cfg)?;
    let path = require(&cfg.test_labels, "test-labels")?;
    let labels = read_labels(path).with_context(|| format!("reading labels {}", path.display()))?;
    let c = model.classes();
    if max_class(&labels) > c {
        bail!(
            "test labels use class {} but the checkpoint has {c} classes",
            max_class(&labels)
        );
    }
    validate_labels(&labels, scene.height(), scene.width(), c)?;
    let variant = model.config.variant;
    let m = evaluate(&mut model, &prepared, &labels, variant.decision_fusion())?;
    fs::create_dir_all(&cfg.out)?;
    cfg.echo(&cfg.out)?;
    write_json(&cfg.out.join("metrics.json"), &m)?;
    print!("{}", format_table(variant, &m));
    Ok(())
}

pub fn map(flags: &RunFlags) -> Result<()> {
    let cfg = flags.resolve()?;
    let (mut model, prepared, scene) = load_model(&cfg)?;
    let (h, w) = (scene.height(), scene.width());
    let pred = predict_map(&mut model, &prepared)?;
    fs::create_dir_all(&cfg.out)?;
    cfg.echo(&cfg.out)?;
    write_ppm(&cfg.out.join("map.ppm"), &pred, h, w)?;
    let mut truth = vec![0usize; h * w];
    let mut any = false;
    for path in [&cfg.train_labels, &cfg.test_labels].into_iter().flatten() {
        for l in load_labels(path, &scene, model.classes())? {
            truth[l.row * w + l.col] = l.class_id;
            any = true;
        }
    }
    if any {
        write_ppm(
            &cfg.out.join("map_truth.ppm"),
            &side_by_side(&pred, &truth, h, w),
            h,
            2 * w,
        )?;
    }
    println!("map: {}", cfg.out.join("map.ppm").display());
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    K,
    P,
    Lambda,
    Coupling,
    Fusion,
}

pub const K_GRID: [usize; 7] = [1, 5, 10, 15, 20, 25, 30];
pub const P_GRID: [usize; 6] = [9, 11, 13, 15, 17, 19];
pub const LAMBDA_GRID: [f64; 4] = [0.001, 0.01, 0.1, 1.0];

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub axis: Axis,
    #[command(flatten)]
    pub run: RunFlags,
}

#[derive(Serialize)]
struct AblationRow {
    axis: &'static str,
    setting: String,
    variant: String,
    #[serde(rename = "OA")]
    oa: f64,
    #[serde(rename = "AA")]
    aa: f64,
    #[serde(rename = "Kappa")]
    kappa: f64,
}

fn settings(base: &ExperimentConfig, axis: Axis) -> Result<Vec<(String, ExperimentConfig)>> {
    let with = |f: &dyn Fn(&mut ExperimentConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    Ok(match axis {
        Axis::K => K_GRID
            .iter()
            .map(|&k| (format!("k={k}"), with(&|c| c.k = k)))
            .collect(),
        Axis::P => P_GRID
            .iter()
            .map(|&p| (format!("p={p}"), with(&|c| c.patch = p)))
            .collect(),
        Axis::Coupling => vec![
            ("coupled=on".into(), with(&|c| c.coupled = true)),
            ("coupled=off".into(), with(&|c| c.coupled = false)),
        ],
        Axis::Fusion => {
            if base.variant.fusion().is_none() {
                bail!("fusion axis needs a fused variant, got {}", base.variant);
            }
            FusionStrategy::ALL
                .iter()
                .map(|&f| {
                    let c = with(&|c| {
                        c.variant = c.variant.with_fusion(f);
                        c.fusion = Some(f);
                    });
                    (format!("fusion={f}"), c)
                })
                .collect()
        }
        Axis::Lambda => unreachable!("lambda sweep is sequential"),
    })
}

fn axis_name(axis: Axis) -> &'static str {
    match axis {
        Axis::K => "k",
        Axis::P => "p",
        Axis::Lambda => "lambda",
        Axis::Coupling => "coupling",
        Axis::Fusion => "fusion",
    }
}

pub fn ablate(args: &AblateArgs) -> Result<()> {
    let base = args.run.resolve()?;
    require(&base.test_labels, "test-labels")?;
    let name = axis_name(args.axis);
    let root = base.out.join(format!("ablate_{name}"));
    let mut rows = Vec::new();
    let mut run = |label: String, cfg: &ExperimentConfig| -> Result<f64> {
        let dir = root.join(label.replace(['=', '.'], "_"));
        let (_, _, _, m) =
            train_run(cfg, &dir, true).with_context(|| format!("ablation setting {label}"))?;
        let m = m.expect("test labels present");
        println!("{name} {label}: OA={:.2}%", 100.0 * m.oa);
        rows.push(AblationRow {
            axis: name,
            setting: label,
            variant: cfg.variant.to_string(),
            oa: m.oa,
            aa: m.aa,
            kappa: m.kappa,
        });
        Ok(m.oa)
    };
    if args.axis == Axis::Lambda {
        // sweep lambda2 first, then lambda1 at the best lambda2
        let mut best = (f64::NEG_INFINITY, base.lambda2);
        for &l2 in &LAMBDA_GRID {
            let mut c = base.clone();
            c.lambda2 = l2;
            let oa = run(format!("lambda1={},lambda2={l2}", c.lambda1), &c)?;
            if oa > best.0 {
                best = (oa, l2);
            }
        }
        for &l1 in &LAMBDA_GRID {
            let mut c = base.clone();
            c.lambda1 = l1;
            c.lambda2 = best.1;
            run(format!("lambda1={l1},lambda2={}", best.1), &c)?;
        }
    } else {
        for (label, cfg) in settings(&base, args.axis)? {
            run(label, &cfg)?;
        }
    }
    fs::create_dir_all(&base.out)?;
    base.echo(&base.out)?;
    let path = base.out.join(format!("ablate_{name}.csv"));
    let mut w = csv::Writer::from_path(&path)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    println!("report: {}", path.display());
    Ok(())
}
