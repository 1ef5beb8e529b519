//! Synthetic labeled scenes with exact ground truth, rendered by the engine's
//! own rasterizer.

use std::f32::consts::{PI, TAU};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::classifier::Classifier;
use crate::error::{Error, Result};
use crate::knn;
use crate::raster::{Rasterizer, RasterConfig};
use crate::rgb::RgbImage;
use crate::sceneio::{
    frame_name, save_cameras, save_checkpoint, save_image, save_mask, save_ply, CamerasFile, Checkpoint,
    CheckpointMeta, PlyFormat, PointCloud,
};
use crate::splat::linalg::{inverse_sigmoid, Vec3};
use crate::splat::sh::{coeff_count, dc_to_rgb, rgb_to_dc};
use crate::splat::{Camera, GaussianSet, ID_FEATURE_DIM};

/// Distinct base colors for objects 1, 2, 3, ...
const PALETTE: [Vec3; 8] = [
    [0.85, 0.2, 0.15],
    [0.15, 0.65, 0.25],
    [0.2, 0.3, 0.9],
    [0.9, 0.8, 0.15],
    [0.75, 0.25, 0.8],
    [0.1, 0.75, 0.8],
    [0.95, 0.55, 0.1],
    [0.55, 0.55, 0.55],
];
const BACKGROUND_COLOR: Vec3 = [0.45, 0.4, 0.35];
/// Largest object count whose labels fit a one-hot identity feature.
pub const MAX_OBJECTS: usize = ID_FEATURE_DIM - 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub objects: usize,
    pub gaussians_per_object: usize,
    pub background_gaussians: usize,
    /// Cluster radius; centers sit on a circle around the origin.
    pub cluster_radius: f32,
    pub layout_radius: f32,
    /// Radius of the background floor disk.
    pub floor_radius: f32,
    pub floor_height: f32,
    pub cameras: usize,
    pub camera_radius: f32,
    /// Degrees above the object plane.
    pub camera_elevation: f32,
    /// Focal length as a multiple of the image width.
    pub focal_factor: f32,
    pub width: u32,
    pub height: u32,
    pub sh_degree: usize,
    pub seed: u64,
    /// Noise magnitude used for `points.ply` and recovery experiments.
    pub perturbation: f32,
    /// Probability that a written mask pixel is replaced by another ID.
    pub mask_noise: f32,
    pub style_size: u32,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            objects: 3,
            gaussians_per_object: 40,
            background_gaussians: 60,
            cluster_radius: 0.35,
            layout_radius: 0.9,
            floor_radius: 1.6,
            floor_height: 1.0,
            cameras: 20,
            camera_radius: 3.2,
            camera_elevation: 30.0,
            focal_factor: 1.4,
            width: 64,
            height: 64,
            sh_degree: 1,
            seed: 0,
            perturbation: 0.05,
            mask_noise: 0.0,
            style_size: 128,
        }
    }
}

impl SynthSpec {
    pub fn centers(&self) -> Vec<Vec3> {
        (0..self.objects)
            .map(|k| {
                if self.objects == 1 {
                    return [0.0; 3];
                }
                let a = TAU * k as f32 / self.objects as f32;
                [self.layout_radius * a.sin(), 0.0, self.layout_radius * a.cos()]
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.objects == 0 || self.objects > MAX_OBJECTS {
            return Err(Error::invalid(format!("object count {} outside 1..={MAX_OBJECTS}", self.objects)));
        }
        if self.gaussians_per_object == 0 {
            return Err(Error::invalid("objects need at least one Gaussian"));
        }
        if self.cameras == 0 || self.width == 0 || self.height == 0 {
            return Err(Error::invalid("need at least one camera and a non-empty image"));
        }
        if self.sh_degree > crate::splat::sh::MAX_DEGREE {
            return Err(Error::invalid(format!("SH degree {} exceeds 3", self.sh_degree)));
        }
        if !(self.cluster_radius > 0.0 && self.camera_radius > 0.0 && self.focal_factor > 0.0) {
            return Err(Error::invalid("radii and focal factor must be positive"));
        }
        if !(0.0..=1.0).contains(&self.mask_noise) || !(self.perturbation >= 0.0) {
            return Err(Error::invalid("mask_noise must lie in [0, 1] and perturbation be ≥ 0"));
        }
        let c = self.centers();
        for i in 0..c.len() {
            for j in i + 1..c.len() {
                let d = (0..3).map(|k| (c[i][k] - c[j][k]).powi(2)).sum::<f32>().sqrt();
                if d < 3.0 * self.cluster_radius {
                    return Err(Error::invalid(format!(
                        "clusters {} and {} are {d:.3} apart, less than 3× the radius {}",
                        i + 1,
                        j + 1,
                        self.cluster_radius
                    )));
                }
            }
        }
        Ok(())
    }

    /// Camera on the ring at angle `angle` (radians), looking at the origin.
    pub fn ring_camera(&self, angle: f32) -> Camera {
        let e = self.camera_elevation.to_radians();
        let r = self.camera_radius;
        let eye = [r * e.cos() * angle.sin(), -r * e.sin(), -r * e.cos() * angle.cos()];
        let f = self.focal_factor * self.width as f32;
        Camera::look_at(self.width, self.height, f, f, eye, [0.0; 3], [0.0, -1.0, 0.0])
    }

    pub fn ring(&self) -> Vec<Camera> {
        (0..self.cameras)
            .map(|i| self.ring_camera(TAU * i as f32 / self.cameras as f32))
            .collect()
    }
}

/// Ground truth: Gaussians with per-Gaussian object labels (0 = background).
#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub spec: SynthSpec,
    pub gaussians: GaussianSet,
    pub labels: Vec<u16>,
    pub cameras: Vec<Camera>,
}

impl SynthScene {
    pub fn num_classes(&self) -> usize {
        self.spec.objects + 1
    }

    /// Classifier that reads the one-hot ground-truth identity features.
    pub fn classifier(&self) -> Classifier {
        let mut c = Classifier::zeros(self.num_classes());
        for k in 0..self.num_classes() {
            c.weights[k * ID_FEATURE_DIM + k] = 10.0;
        }
        c
    }

    pub fn object_indices(&self, id: u16) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == id).collect()
    }
}

fn random_rotation(rng: &mut ChaCha8Rng) -> [f32; 4] {
    let q: [f32; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    let n = q.iter().map(|v| v * v).sum::<f32>().sqrt().max(1e-6);
    q.map(|v| v / n)
}

fn one_hot(label: u16) -> [f32; ID_FEATURE_DIM] {
    let mut f = [0.0; ID_FEATURE_DIM];
    f[label as usize] = 1.0;
    f
}

fn sh_for(color: Vec3, sh_degree: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut sh = vec![0.0; coeff_count(sh_degree)];
    for c in 0..3 {
        sh[c] = rgb_to_dc(color[c]);
    }
    for v in &mut sh[3..] {
        *v = rng.random_range(-0.12..0.12);
    }
    sh
}

/// Builds the labeled ground-truth scene (no files).
pub fn build(spec: &SynthSpec) -> Result<SynthScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let total = spec.objects * spec.gaussians_per_object + spec.background_gaussians;
    let mut g = GaussianSet::with_capacity(spec.sh_degree, total);
    let mut labels = Vec::with_capacity(total);
    for (k, center) in spec.centers().iter().enumerate() {
        let base = PALETTE[k % PALETTE.len()];
        for _ in 0..spec.gaussians_per_object {
            // uniform in the ball
            let dir: Vec3 = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
            let n = dir.iter().map(|v| v * v).sum::<f32>().sqrt().max(1e-6);
            let r = spec.cluster_radius * rng.random_range(0.0f32..1.0).cbrt() * 0.8;
            let pos = std::array::from_fn(|i| center[i] + dir[i] / n * r);
            let s = spec.cluster_radius * 0.22;
            let log_scale = std::array::from_fn(|_| (s * rng.random_range(0.6..1.2)).ln());
            let color = base.map(|c| (c + rng.random_range(-0.3..0.3)).clamp(0.02, 0.98));
            let sh = sh_for(color, spec.sh_degree, &mut rng);
            let label = (k + 1) as u16;
            g.push(
                pos,
                random_rotation(&mut rng),
                log_scale,
                inverse_sigmoid(rng.random_range(0.8..0.97)),
                &sh,
                one_hot(label),
            );
            labels.push(label);
        }
    }
    // background floor: flat discs tiling a disk below the objects
    let golden = PI * (3.0 - 5f32.sqrt());
    let nb = spec.background_gaussians;
    let disc = spec.floor_radius * 0.9 / (nb.max(1) as f32).sqrt();
    for i in 0..nb {
        let r = spec.floor_radius * ((i as f32 + 0.5) / nb as f32).sqrt();
        let a = i as f32 * golden;
        let pos = [
            r * a.cos() + rng.random_range(-0.02..0.02),
            spec.floor_height,
            r * a.sin() + rng.random_range(-0.02..0.02),
        ];
        let log_scale = [disc.ln(), (disc * 0.15).ln(), disc.ln()];
        // alternate light and dark tiles so the floor has texture
        let shade = if i % 2 == 0 { 0.4 } else { -0.4 } + rng.random_range(-0.05f32..0.05);
        let color = BACKGROUND_COLOR.map(|c| (c + shade).clamp(0.02, 0.98));
        let sh = sh_for(color, spec.sh_degree, &mut rng);
        g.push(pos, [1.0, 0.0, 0.0, 0.0], log_scale, inverse_sigmoid(0.9), &sh, one_hot(0));
        labels.push(0);
    }
    Ok(SynthScene {
        spec: spec.clone(),
        gaussians: g,
        labels,
        cameras: spec.ring(),
    })
}

/// Seeded Gaussian noise on positions (scaled by the scene extent), SH DC and
/// log-scales. Everything else is copied.
pub fn perturb(gaussians: &GaussianSet, magnitude: f32, seed: u64) -> GaussianSet {
    let mut out = gaussians.clone();
    if magnitude == 0.0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extent = gaussians.extent();
    let k = out.coeffs_per_gaussian();
    let mut noise = || -> f32 { StandardNormal.sample(&mut rng) };
    for i in 0..out.len() {
        for c in 0..3 {
            out.positions[i][c] += magnitude * extent * noise();
        }
        for c in 0..3 {
            out.sh_coeffs[i * k + c] += magnitude * noise();
        }
        for c in 0..3 {
            out.log_scales[i][c] += magnitude * noise();
        }
    }
    out
}

/// 3DGS-style initialization from a point cloud: isotropic scales from the
/// mean distance to the 3 nearest points, identity rotations, opacity 0.1,
/// SH DC from point colors (0 when absent) and small seeded identity features.
pub fn init_from_point_cloud(cloud: &PointCloud, sh_degree: usize, seed: u64) -> Result<GaussianSet> {
    if cloud.is_empty() {
        return Err(Error::Data("point cloud is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = knn::mean_neighbor_distances(&cloud.positions, 3.min(cloud.len() - 1));
    let mut g = GaussianSet::with_capacity(sh_degree, cloud.len());
    let k = coeff_count(sh_degree);
    for (i, &p) in cloud.positions.iter().enumerate() {
        let mut sh = vec![0.0; k];
        if let Some(colors) = &cloud.colors {
            for c in 0..3 {
                sh[c] = rgb_to_dc(colors[i][c]);
            }
        }
        let s = if dist[i] > 0.0 { dist[i] } else { 0.01 };
        let feat = std::array::from_fn(|_| rng.random_range(-0.01..0.01));
        g.push(p, [1.0, 0.0, 0.0, 0.0], [s.ln(); 3], inverse_sigmoid(0.1), &sh, feat);
    }
    Ok(g)
}

/// Per-pixel object ID by largest summed blend weight, background (0) where
/// the transmittance exceeds one half.
pub fn render_masks(scene: &SynthScene, camera: &Camera) -> Vec<u16> {
    let mut g = scene.gaussians.clone();
    for (f, &l) in g.id_features.iter_mut().zip(&scene.labels) {
        *f = one_hot(l);
    }
    let out = Rasterizer::new(RasterConfig::default()).render_features(&g, camera);
    let classes = scene.num_classes();
    (0..out.final_transmittance.len())
        .map(|p| {
            if out.final_transmittance[p] > 0.5 {
                return 0;
            }
            let w = &out.pixel(p)[..classes];
            let mut best = 0;
            for k in 1..classes {
                if w[k] > w[best] {
                    best = k;
                }
            }
            best as u16
        })
        .collect()
}

fn noisy(mask: &mut [u16], classes: usize, rate: f32, rng: &mut ChaCha8Rng) {
    if rate <= 0.0 || classes < 2 {
        return;
    }
    for m in mask.iter_mut() {
        if rng.random::<f32>() < rate {
            let shift = rng.random_range(1..classes) as u16;
            *m = (*m + shift) % classes as u16;
        }
    }
}

/// Procedural style images: diagonal stripes, dots and smooth noise.
pub fn style_images(size: u32, seed: u64) -> Vec<(String, RgbImage)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0057_171e);
    let n = size as usize;
    let mut stripes = RgbImage::new(size, size);
    let mut dots = RgbImage::new(size, size);
    let mut waves = RgbImage::new(size, size);
    let phase: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.0..TAU));
    let period = size as f32 / 8.0;
    for y in 0..n {
        for x in 0..n {
            let i = (y * n + x) * 3;
            let band = (((x + y) as f32 / period) as usize) % 2;
            let s = if band == 0 { [0.95, 0.85, 0.2] } else { [0.1, 0.1, 0.35] };
            stripes.data[i..i + 3].copy_from_slice(&s);

            let cell = period;
            let (cx, cy) = ((x as f32 % cell) - cell / 2.0, (y as f32 % cell) - cell / 2.0);
            let inside = cx * cx + cy * cy < (cell * 0.3).powi(2);
            let d = if inside { [0.9, 0.15, 0.4] } else { [0.95, 0.95, 0.85] };
            dots.data[i..i + 3].copy_from_slice(&d);

            let (u, v) = (x as f32 / n as f32 * TAU, y as f32 / n as f32 * TAU);
            for c in 0..3 {
                waves.data[i + c] = 0.5 + 0.45 * (3.0 * u + phase[c]).sin() * (2.0 * v - phase[c]).cos();
            }
        }
    }
    vec![("stripes".into(), stripes), ("dots".into(), dots), ("waves".into(), waves)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelsFile {
    pub spec: SynthSpec,
    pub labels: Vec<u16>,
}

pub const GROUND_TRUTH_FILE: &str = "ground_truth.sspl";
pub const LABELS_FILE: &str = "labels.json";

/// Builds the scene and writes a complete scene directory to `dir`:
/// cameras, images, masks, `points.ply` at perturbed positions, style
/// images, the ground-truth checkpoint and `labels.json`.
pub fn generate(spec: &SynthSpec, dir: impl AsRef<Path>) -> Result<SynthScene> {
    let dir = dir.as_ref();
    let scene = build(spec)?;
    for sub in ["images", "masks", "style"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(p, e))?;
    }
    let names: Vec<String> = (0..scene.cameras.len()).map(frame_name).collect();
    save_cameras(dir.join("cameras.json"), &CamerasFile::from_cameras(&names, &scene.cameras)?)?;
    let raster = Rasterizer::new(RasterConfig::default());
    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(0x6d61_736b));
    for (name, cam) in names.iter().zip(&scene.cameras) {
        let color = raster.render_color(&scene.gaussians, cam, [0.0; 3]).color;
        save_image(dir.join("images").join(format!("{name}.png")), &RgbImage::from_data(cam.width, cam.height, color)?)?;
        let mut mask = render_masks(&scene, cam);
        noisy(&mut mask, scene.num_classes(), spec.mask_noise, &mut noise_rng);
        save_mask(dir.join("masks").join(format!("{name}.png")), cam.width, cam.height, &mask)?;
    }
    let moved = perturb(&scene.gaussians, spec.perturbation, spec.seed.wrapping_add(1));
    let cloud = PointCloud {
        positions: moved.positions.clone(),
        colors: Some(
            (0..moved.len())
                .map(|i| {
                    let sh = moved.sh(i);
                    std::array::from_fn(|c| dc_to_rgb(sh[c]).clamp(0.0, 1.0))
                })
                .collect(),
        ),
    };
    save_ply(dir.join("points.ply"), &cloud, PlyFormat::BinaryLittleEndian)?;
    for (name, img) in style_images(spec.style_size, spec.seed) {
        save_image(dir.join("style").join(format!("{name}.png")), &img)?;
    }
    save_checkpoint(
        dir.join(GROUND_TRUTH_FILE),
        &Checkpoint {
            gaussians: scene.gaussians.clone(),
            classifier: scene.classifier(),
            meta: CheckpointMeta {
                iterations: 0,
                seed: spec.seed,
                config_hash: 0,
            },
        },
    )?;
    let labels = LabelsFile {
        spec: spec.clone(),
        labels: scene.labels.clone(),
    };
    let path = dir.join(LABELS_FILE);
    let mut text = serde_json::to_string_pretty(&labels).expect("labels serialize");
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(path, e))?;
    Ok(scene)
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelsFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}
