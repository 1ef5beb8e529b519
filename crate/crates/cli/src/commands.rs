use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use objsplat::classifier::Classifier;
use objsplat::featnet::FeatureExtractor;
use objsplat::raster::{RasterConfig, Rasterizer};
use objsplat::rgb::{psnr, RgbImage};
use objsplat::sceneio::{
    load_checkpoint, load_image, load_scene, load_views, save_checkpoint, save_image, Checkpoint,
    CheckpointMeta,
};
use objsplat::segsel::{classify_gaussians, select_object_with, ObjectSelection, SelectParams};
use objsplat::splat::linalg::{cross3, dot3, norm3 as norm, normalize3, scale3, sub3, Vec3};
use objsplat::splat::{Camera, GaussianSet};
use objsplat::styler::{stylize, RenderScope, StyleJob, StyleParams};
use objsplat::synth::{self, init_from_point_cloud};
use objsplat::trainer::{num_classes_from_views, train, TrainConfig};
use objsplat::Error;
use serde::Serialize;

use crate::config::{self, set, FileConfig, Resolved};
use crate::{Cli, Command, RenderArgs, ScopeArg, SelectArgs, SelectionArgs, StylizeArgs, SynthArgs, TrainArgs};

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Divergence(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Divergence(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Divergence(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) => Failure::Usage(e.to_string()),
            Error::Divergence { .. } | Error::NonFiniteGradient { .. } => Failure::Divergence(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

struct Context {
    cfg: FileConfig,
    seed: u64,
    threads: usize,
}

impl Context {
    fn announce<T: Serialize>(&self, command: &str, settings: &T) {
        let text = config::render(&Resolved {
            command,
            seed: self.seed,
            threads: self.threads,
            settings,
        });
        eprint!("# resolved configuration\n{text}");
    }
}

pub fn run(cli: Cli) -> Outcome {
    let cfg = match &cli.config {
        Some(p) => config::load(p).map_err(Failure::Usage)?,
        None => FileConfig::default(),
    };
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);
    let threads = match cli.threads.or(cfg.threads) {
        Some(0) => return Err(Failure::Usage("--threads must be at least 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::Data(format!("thread pool: {e}")))?;
    let ctx = Context { cfg, seed, threads };
    match cli.command {
        Command::Synth(a) => cmd_synth(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Select(a) => cmd_select(&ctx, a),
        Command::Stylize(a) => cmd_stylize(&ctx, a),
        Command::Render(a) => cmd_render(&ctx, a),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn log_file(path: &Path) -> Result<BufWriter<File>, Failure> {
    Ok(BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?))
}

fn cmd_synth(ctx: &Context, a: SynthArgs) -> Outcome {
    let mut spec = ctx.cfg.synth.clone();
    set(&mut spec.objects, a.objects);
    set(&mut spec.gaussians_per_object, a.gaussians_per_object);
    set(&mut spec.background_gaussians, a.background_gaussians);
    set(&mut spec.cameras, a.cameras);
    set(&mut spec.width, a.width);
    set(&mut spec.height, a.height);
    set(&mut spec.sh_degree, a.sh_degree);
    set(&mut spec.perturbation, a.perturbation);
    set(&mut spec.mask_noise, a.mask_noise);
    spec.seed = ctx.seed;
    spec.validate()?;
    ctx.announce("synth", &spec);
    let scene = synth::generate(&spec, &a.out)?;
    log::info!(
        "wrote {} frames, {} Gaussians in {} objects to {}",
        scene.cameras.len(),
        scene.gaussians.len(),
        spec.objects,
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainSettings<'a> {
    scene: &'a Path,
    out: &'a Path,
    init: Option<&'a Path>,
    sh_degree: usize,
    log: &'a Path,
    train: &'a TrainConfig,
}

fn cmd_train(ctx: &Context, a: TrainArgs) -> Outcome {
    let mut tc = ctx.cfg.train.clone();
    set(&mut tc.iterations, a.iters);
    set(&mut tc.lambda_ce, a.lambda_ce);
    set(&mut tc.lambda_3d, a.lambda_3d);
    set(&mut tc.knn_k, a.knn_k);
    set(&mut tc.sample_size, a.sample_size);
    set(&mut tc.snapshot_every, a.snapshot_every);
    if a.prune {
        tc.prune_opacity = true;
    }
    tc.seed = ctx.seed;
    tc.validate()?;
    if a.sh_degree > 3 {
        return Err(Failure::Usage(format!("--sh-degree {} exceeds 3", a.sh_degree)));
    }
    let log_path = a.log.clone().unwrap_or_else(|| a.out.with_extension("train.jsonl"));
    ctx.announce(
        "train",
        &TrainSettings {
            scene: &a.scene,
            out: &a.out,
            init: a.init.as_deref(),
            sh_degree: a.sh_degree,
            log: &log_path,
            train: &tc,
        },
    );

    let scene = load_scene(&a.scene)?;
    let views = load_views(&scene)?;
    let classes = num_classes_from_views(&views);
    let (gaussians, classifier) = match &a.init {
        Some(p) => {
            let c = load_checkpoint(p)?;
            let cls = if c.classifier.num_classes == classes {
                c.classifier
            } else {
                log::warn!(
                    "{}: classifier has {} classes, masks need {classes}; reinitializing it",
                    p.display(),
                    c.classifier.num_classes
                );
                Classifier::seeded(classes, ctx.seed)
            };
            (c.gaussians, cls)
        }
        None => {
            let cloud = scene.points.as_ref().ok_or_else(|| {
                Failure::Data(format!("{}: no points.ply to initialize from (use --init)", a.scene.display()))
            })?;
            (init_from_point_cloud(cloud, a.sh_degree, ctx.seed)?, Classifier::seeded(classes, ctx.seed))
        }
    };
    if !scene.has_masks() {
        log::warn!("{}: no masks; identity features stay at their initial values", a.scene.display());
    }
    log::info!("training {} Gaussians on {} views, {} classes", gaussians.len(), views.len(), classes);

    let meta = CheckpointMeta {
        iterations: tc.iterations as u64,
        seed: ctx.seed,
        config_hash: tc.hash(),
    };
    let mut sink = log_file(&log_path)?;
    let out_path = a.out.clone();
    let snapshot = |it: usize, g: &GaussianSet, c: &Classifier| {
        save_checkpoint(
            out_path.with_extension(format!("iter{it}.sspl")),
            &Checkpoint {
                gaussians: g.clone(),
                classifier: c.clone(),
                meta: CheckpointMeta {
                    iterations: it as u64,
                    ..meta
                },
            },
        )
    };
    let out = train(&views, gaussians, classifier, &tc, Some(&mut sink), snapshot)?;
    sink.flush().map_err(|e| io_err(&log_path, e))?;

    let raster = Rasterizer::new(RasterConfig::default());
    let mean_psnr = views
        .iter()
        .map(|v| psnr(&raster.render_color(&out.gaussians, &v.camera, tc.background).color, &v.image.data) as f64)
        .sum::<f64>()
        / views.len() as f64;
    save_checkpoint(
        &a.out,
        &Checkpoint {
            gaussians: out.gaussians,
            classifier: out.classifier,
            meta,
        },
    )?;
    log::info!("mean training-view PSNR {mean_psnr:.2} dB; wrote {}", a.out.display());
    Ok(())
}

fn select_params(ctx: &Context, a: &SelectionArgs) -> SelectParams {
    let mut p = ctx.cfg.select;
    set(&mut p.threshold, a.threshold);
    set(&mut p.outlier_k, a.outlier_k);
    set(&mut p.std_factor, a.std_factor);
    p
}

/// Selected Gaussians counted by which requested ID they score highest on.
fn per_id_counts(ckpt: &Checkpoint, sel: &ObjectSelection) -> Vec<(u16, usize)> {
    let probs = classify_gaussians(&ckpt.gaussians, &ckpt.classifier);
    let mut counts: Vec<(u16, usize)> = sel.object_ids.iter().map(|&id| (id, 0)).collect();
    for &i in &sel.indices {
        let mut best = 0;
        for (k, &(id, _)) in counts.iter().enumerate() {
            if probs[i][id as usize] > probs[i][counts[best].0 as usize] {
                best = k;
            }
        }
        counts[best].1 += 1;
    }
    counts
}

fn report(ckpt: &Checkpoint, sel: &ObjectSelection, params: &SelectParams) -> String {
    let ids: Vec<String> = sel.object_ids.iter().map(|v| v.to_string()).collect();
    let r = &sel.report;
    let mut s = format!(
        "object ids: {}\nthreshold: {}\nGaussians: {}\nbelow threshold: {}\nremoved as outliers: {} (k = {}, {} std)\nselected: {}\n",
        ids.join(","),
        params.threshold,
        ckpt.gaussians.len(),
        r.filtered_by_threshold,
        r.removed_as_outliers,
        params.outlier_k,
        params.std_factor,
        sel.len()
    );
    for (id, n) in per_id_counts(ckpt, sel) {
        s.push_str(&format!("  id {id}: {n}\n"));
    }
    if let Some(note) = &r.note {
        s.push_str(&format!("note: {note}\n"));
    }
    if sel.empty {
        s.push_str("warning: selection is empty\n");
    }
    s
}

#[derive(Serialize)]
struct SelectSettings<'a> {
    ckpt: &'a Path,
    object_ids: &'a [u16],
    select: &'a SelectParams,
}

#[derive(Serialize)]
struct SelectionFile<'a> {
    object_ids: &'a [u16],
    threshold: f32,
    indices: &'a [usize],
    report: &'a objsplat::segsel::RemovalReport,
}

fn cmd_select(ctx: &Context, a: SelectArgs) -> Outcome {
    let params = select_params(ctx, &a.selection);
    ctx.announce(
        "select",
        &SelectSettings {
            ckpt: &a.ckpt,
            object_ids: &a.selection.object_ids,
            select: &params,
        },
    );
    let ckpt = load_checkpoint(&a.ckpt)?;
    let sel = select_object_with(&ckpt.gaussians, &ckpt.classifier, &a.selection.object_ids, &params)?;
    print!("{}", report(&ckpt, &sel, &params));
    if let Some(out) = &a.out {
        let file = SelectionFile {
            object_ids: &sel.object_ids,
            threshold: params.threshold,
            indices: &sel.indices,
            report: &sel.report,
        };
        let mut text = serde_json::to_string_pretty(&file).expect("selection serializes");
        text.push('\n');
        std::fs::write(out, text).map_err(|e| io_err(out, e))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct StylizeSettings<'a> {
    ckpt: &'a Path,
    scene: &'a Path,
    out: &'a Path,
    style_image: &'a Path,
    object_ids: &'a [u16],
    weights: Option<&'a Path>,
    extractor_seed: Option<u64>,
    log: &'a Path,
    select: &'a SelectParams,
    style: &'a StyleParams,
}

fn cmd_stylize(ctx: &Context, a: StylizeArgs) -> Outcome {
    let mut params = ctx.cfg.style.clone();
    set(&mut params.layers, a.layers.clone());
    set(&mut params.style_scale, a.style_scale);
    set(&mut params.lr, a.lr);
    set(&mut params.iterations, a.iters);
    set(&mut params.view_fraction, a.views_frac);
    if let Some(s) = a.render_scope {
        params.scope = match s {
            ScopeArg::Scene => RenderScope::Scene,
            ScopeArg::Selection => RenderScope::Selection,
        };
    }
    params.validate()?;
    let select = select_params(ctx, &a.selection);
    let log_path = a.log.clone().unwrap_or_else(|| a.out.with_extension("style.jsonl"));
    ctx.announce(
        "stylize",
        &StylizeSettings {
            ckpt: &a.ckpt,
            scene: &a.scene,
            out: &a.out,
            style_image: &a.style,
            object_ids: &a.selection.object_ids,
            weights: a.weights.as_deref(),
            extractor_seed: a.weights.is_none().then_some(a.extractor_seed),
            log: &log_path,
            select: &select,
            style: &params,
        },
    );

    let ckpt = load_checkpoint(&a.ckpt)?;
    let scene = load_scene(&a.scene)?;
    let style = load_image(&a.style)?;
    let sel = select_object_with(&ckpt.gaussians, &ckpt.classifier, &a.selection.object_ids, &select)?;
    eprint!("{}", report(&ckpt, &sel, &select));
    if sel.empty {
        return Err(Failure::Data("nothing selected; lower --threshold or check --object-ids".into()));
    }
    let extractor = match &a.weights {
        Some(p) => FeatureExtractor::load_weights(p)?,
        None => {
            log::warn!("no --weights given; using seeded random VGG-16 weights (seed {})", a.extractor_seed);
            let deepest = params.layers.iter().copied().max().unwrap_or(0);
            FeatureExtractor::seeded_vgg16(a.extractor_seed, Some(deepest))?
        }
    };
    let job = StyleJob {
        selection: sel.indices.clone(),
        style,
        params,
    };
    let mut sink = log_file(&log_path)?;
    let out = stylize(&ckpt.gaussians, &scene.cameras(), &job, &extractor, Some(&mut sink))?;
    sink.flush().map_err(|e| io_err(&log_path, e))?;
    if let (Some(first), Some(last)) = (out.log.first(), out.log.last()) {
        log::info!("nnfm {:.4} at iteration 1, {:.4} at iteration {}", first.nnfm, last.nnfm, last.iteration);
    }
    save_checkpoint(
        &a.out,
        &Checkpoint {
            gaussians: out.gaussians,
            classifier: ckpt.classifier,
            meta: ckpt.meta,
        },
    )?;
    log::info!("wrote {}", a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct RenderSettings<'a> {
    ckpt: &'a Path,
    scene: &'a Path,
    out: &'a Path,
    camera_index: Option<usize>,
    orbit: Option<usize>,
    background: Vec3,
}

fn cmd_render(ctx: &Context, a: RenderArgs) -> Outcome {
    let background: Vec3 = match &a.background {
        Some(v) => [v[0], v[1], v[2]],
        None => [0.0; 3],
    };
    if a.orbit == Some(0) {
        return Err(Failure::Usage("--orbit needs at least one frame".into()));
    }
    ctx.announce(
        "render",
        &RenderSettings {
            ckpt: &a.ckpt,
            scene: &a.scene,
            out: &a.out,
            camera_index: a.camera_index,
            orbit: a.orbit,
            background,
        },
    );
    let ckpt = load_checkpoint(&a.ckpt)?;
    let scene = load_scene(&a.scene)?;
    let shots: Vec<(String, Camera)> = if let Some(i) = a.camera_index {
        let f = scene.frames.get(i).ok_or_else(|| {
            Failure::Usage(format!("--camera-index {i} out of range: scene has {} frames", scene.frames.len()))
        })?;
        vec![(f.name.clone(), f.camera.clone())]
    } else if let Some(n) = a.orbit {
        orbit(&scene.cameras(), &ckpt.gaussians, n)
            .into_iter()
            .enumerate()
            .map(|(i, c)| (format!("orbit_{i:04}"), c))
            .collect()
    } else {
        scene.frames.iter().map(|f| (f.name.clone(), f.camera.clone())).collect()
    };
    std::fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    let raster = Rasterizer::new(RasterConfig::default());
    for (name, cam) in &shots {
        let out = raster.render_color(&ckpt.gaussians, cam, background);
        let path: PathBuf = a.out.join(format!("{name}.png"));
        save_image(&path, &RgbImage::from_data(cam.width, cam.height, out.color)?)?;
    }
    log::info!("wrote {} frames to {}", shots.len(), a.out.display());
    Ok(())
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&a);
    let scale: f64 = a.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
    if d.abs() <= 1e-9 * scale.powi(3) {
        return None;
    }
    Some(std::array::from_fn(|c| {
        let mut m = a;
        for r in 0..3 {
            m[r][c] = b[r];
        }
        det(&m) / d
    }))
}

/// `n` cameras on a circle around the point the training cameras look at,
/// at their mean height and distance, with the first camera's intrinsics.
pub fn orbit(cameras: &[Camera], gaussians: &GaussianSet, n: usize) -> Vec<Camera> {
    let Some(first) = cameras.first() else {
        return Vec::new();
    };
    let mut up = [0.0f32; 3];
    let mut a = [[0.0f64; 3]; 3];
    let mut b = [0.0f64; 3];
    for c in cameras {
        let r = c.rotation();
        up = sub3(up, r[1]);
        let f = r[2].map(f64::from);
        let o = c.center().map(f64::from);
        for i in 0..3 {
            for j in 0..3 {
                let p = if i == j { 1.0 } else { 0.0 } - f[i] * f[j];
                a[i][j] += p;
                b[i] += p * o[j];
            }
        }
    }
    let up = normalize3(up);
    let target: Vec3 = match solve3(a, b) {
        Some(t) => t.map(|v| v as f32),
        None => {
            let n = gaussians.len().max(1) as f32;
            let mut s = [0.0f32; 3];
            for p in &gaussians.positions {
                s = [s[0] + p[0], s[1] + p[1], s[2] + p[2]];
            }
            scale3(s, 1.0 / n)
        }
    };
    let mut height = 0.0;
    let mut radius = 0.0;
    for c in cameras {
        let v = sub3(c.center(), target);
        let h = dot3(v, up);
        height += h;
        radius += norm(sub3(v, scale3(up, h)));
    }
    height /= cameras.len() as f32;
    radius /= cameras.len() as f32;
    let radial = |c: &Camera| {
        let v = sub3(c.center(), target);
        sub3(v, scale3(up, dot3(v, up)))
    };
    let mut e1 = normalize3(radial(first));
    if !e1.iter().all(|v| v.is_finite()) || norm(e1) < 0.5 {
        e1 = normalize3(cross3(up, if up[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] }));
    }
    let mut e2 = cross3(up, e1);
    if let Some(second) = cameras.get(1) {
        if dot3(radial(second), e2) < 0.0 {
            e2 = scale3(e2, -1.0);
        }
    }
    (0..n)
        .map(|i| {
            let t = std::f32::consts::TAU * i as f32 / n as f32;
            let eye: Vec3 = std::array::from_fn(|k| {
                target[k] + height * up[k] + radius * (t.cos() * e1[k] + t.sin() * e2[k])
            });
            let mut cam = Camera::look_at(first.width, first.height, first.fx, first.fy, eye, target, up);
            cam.cx = first.cx;
            cam.cy = first.cy;
            cam
        })
        .collect()
}
