//! Scene directories, images, masks, point clouds and checkpoints on disk.
//!
//! A scene directory holds `cameras.json`, `images/<frame>.png`, and
//! optionally `masks/<frame>.png`, `points.ply` and `style/*.png`.

mod checkpoint;
mod images;
mod ply;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use checkpoint::{
    checkpoint_len, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use images::{image_size, load_image, load_mask, quantize, save_image, save_mask};
pub use ply::{encode_ply, load_ply, parse_ply, save_ply, PlyFormat, PointCloud};

use crate::error::{Error, Result};
use crate::splat::Camera;
use crate::trainer::{TrainingView, IGNORE_LABEL};

pub const ROTATION_TOLERANCE: f32 = 1e-3;
pub const MAX_CLASSES: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraEntry {
    pub name: String,
    pub fx: f32,
    pub fy: f32,
    pub cx: f32,
    pub cy: f32,
    /// Row-major 4×4.
    pub world_to_camera: [f32; 16],
}

/// Contents of `cameras.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CamerasFile {
    pub width: u32,
    pub height: u32,
    pub frames: Vec<CameraEntry>,
}

impl CamerasFile {
    pub fn from_cameras(names: &[String], cameras: &[Camera]) -> Result<Self> {
        let first = cameras.first().ok_or_else(|| Error::invalid("no cameras"))?;
        if names.len() != cameras.len() {
            return Err(Error::invalid("one name per camera required"));
        }
        Ok(CamerasFile {
            width: first.width,
            height: first.height,
            frames: names
                .iter()
                .zip(cameras)
                .map(|(name, c)| CameraEntry {
                    name: name.clone(),
                    fx: c.fx,
                    fy: c.fy,
                    cx: c.cx,
                    cy: c.cy,
                    world_to_camera: c.world_to_camera,
                })
                .collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub name: String,
    pub camera: Camera,
    pub image_path: PathBuf,
    pub mask_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneData {
    pub name: String,
    pub root: PathBuf,
    pub width: u32,
    pub height: u32,
    /// Sorted by frame name.
    pub frames: Vec<Frame>,
    pub points: Option<PointCloud>,
    pub style_images: Vec<PathBuf>,
    /// Non-fatal oddities, such as images not listed in `cameras.json`.
    pub warnings: Vec<String>,
}

impl SceneData {
    pub fn has_masks(&self) -> bool {
        self.frames.iter().any(|f| f.mask_path.is_some())
    }

    pub fn cameras(&self) -> Vec<Camera> {
        self.frames.iter().map(|f| f.camera.clone()).collect()
    }
}

fn check_pose(name: &str, m: &[f32; 16]) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(format!("{name}: world_to_camera has non-finite entries")));
    }
    let mut worst = 0.0f32;
    for i in 0..3 {
        for j in 0..3 {
            let dot: f32 = (0..3).map(|k| m[i * 4 + k] * m[j * 4 + k]).sum();
            worst = worst.max((dot - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    if worst > ROTATION_TOLERANCE {
        return Err(Error::Data(format!(
            "{name}: world_to_camera rotation is not orthonormal (deviation {worst:.2e} > {ROTATION_TOLERANCE:.0e})"
        )));
    }
    let r = |i: usize, j: usize| m[i * 4 + j];
    let det = r(0, 0) * (r(1, 1) * r(2, 2) - r(1, 2) * r(2, 1)) - r(0, 1) * (r(1, 0) * r(2, 2) - r(1, 2) * r(2, 0))
        + r(0, 2) * (r(1, 0) * r(2, 1) - r(1, 1) * r(2, 0));
    if det < 0.0 {
        return Err(Error::Data(format!("{name}: world_to_camera rotation is a reflection")));
    }
    if m[12..] != [0.0, 0.0, 0.0, 1.0] {
        return Err(Error::Data(format!("{name}: world_to_camera last row must be 0 0 0 1")));
    }
    Ok(())
}

fn png_stems(dir: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push(stem.to_string());
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn load_cameras(path: impl AsRef<Path>) -> Result<CamerasFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn save_cameras(path: impl AsRef<Path>, cameras: &CamerasFile) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(cameras).expect("camera file serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses and validates a scene directory. Images and masks are checked for
/// size but not decoded; see [`load_views`].
pub fn load_scene(dir: impl AsRef<Path>) -> Result<SceneData> {
    let root = dir.as_ref().to_path_buf();
    if !root.is_dir() {
        return Err(Error::Data(format!("{}: scene directory not found", root.display())));
    }
    let cams_path = root.join("cameras.json");
    if !cams_path.is_file() {
        return Err(Error::Data(format!("{}: missing cameras.json", root.display())));
    }
    let cams = load_cameras(&cams_path)?;
    if cams.width == 0 || cams.height == 0 {
        return Err(Error::Data(format!("{}: zero image size", cams_path.display())));
    }
    let images_dir = root.join("images");
    if !images_dir.is_dir() {
        return Err(Error::Data(format!("{}: missing images/", root.display())));
    }
    let masks_dir = root.join("masks");
    let has_masks = masks_dir.is_dir();
    let mut warnings = Vec::new();

    let mut entries = cams.frames.clone();
    entries.sort_by(|a, b| a.name.cmp(&b.name));
    if let Some(w) = entries.windows(2).find(|w| w[0].name == w[1].name) {
        return Err(Error::Data(format!("{}: frame listed twice", w[0].name)));
    }
    let mut frames = Vec::with_capacity(entries.len());
    for e in entries {
        if !(e.fx > 0.0 && e.fy > 0.0 && e.cx.is_finite() && e.cy.is_finite()) {
            return Err(Error::Data(format!("{}: invalid intrinsics", e.name)));
        }
        check_pose(&e.name, &e.world_to_camera)?;
        let image_path = images_dir.join(format!("{}.png", e.name));
        if !image_path.is_file() {
            return Err(Error::Data(format!("{}: missing image {}", e.name, image_path.display())));
        }
        let (iw, ih) = image_size(&image_path)?;
        if (iw, ih) != (cams.width, cams.height) {
            return Err(Error::Data(format!(
                "{}: image {iw}×{ih} vs dataset {}×{}",
                e.name, cams.width, cams.height
            )));
        }
        let mask_path = if has_masks {
            let p = masks_dir.join(format!("{}.png", e.name));
            if p.is_file() {
                let (mw, mh) = image_size(&p)?;
                if (mw, mh) != (iw, ih) {
                    return Err(Error::Data(format!("{}: mask {mw}×{mh} vs image {iw}×{ih}", e.name)));
                }
                Some(p)
            } else {
                warnings.push(format!("{}: no mask", e.name));
                None
            }
        } else {
            None
        };
        let mut camera = Camera::new(cams.width, cams.height, e.fx, e.fy, e.cx, e.cy);
        camera.world_to_camera = e.world_to_camera;
        frames.push(Frame {
            name: e.name,
            camera,
            image_path,
            mask_path,
        });
    }
    if frames.is_empty() {
        return Err(Error::Data(format!("{}: no frames", cams_path.display())));
    }
    let known = |stem: &String| frames.binary_search_by(|f| f.name.as_str().cmp(stem)).is_ok();
    for stem in png_stems(&images_dir)? {
        if !known(&stem) {
            warnings.push(format!("images/{stem}.png is not listed in cameras.json"));
        }
    }
    if has_masks {
        for stem in png_stems(&masks_dir)? {
            if !known(&stem) {
                warnings.push(format!("masks/{stem}.png is not listed in cameras.json"));
            }
        }
    }
    let ply_path = root.join("points.ply");
    let points = if ply_path.is_file() { Some(load_ply(&ply_path)?) } else { None };
    let style_dir = root.join("style");
    let style_images = if style_dir.is_dir() {
        png_stems(&style_dir)?
            .into_iter()
            .map(|s| style_dir.join(format!("{s}.png")))
            .collect()
    } else {
        Vec::new()
    };
    for w in &warnings {
        log::warn!("{w}");
    }
    let name = root
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".into());
    Ok(SceneData {
        name,
        root,
        width: cams.width,
        height: cams.height,
        frames,
        points,
        style_images,
        warnings,
    })
}

/// Decodes every frame's image and mask.
pub fn load_views(scene: &SceneData) -> Result<Vec<TrainingView>> {
    let mut views = Vec::with_capacity(scene.frames.len());
    for f in &scene.frames {
        let image = load_image(&f.image_path)?;
        let mask = match &f.mask_path {
            Some(p) => {
                let (w, h, ids) = load_mask(p)?;
                if (w, h) != (image.width, image.height) {
                    return Err(Error::Data(format!(
                        "{}: mask {w}×{h} vs image {}×{}",
                        f.name, image.width, image.height
                    )));
                }
                if let Some(&id) = ids.iter().find(|&&v| v != IGNORE_LABEL && v as usize >= MAX_CLASSES) {
                    return Err(Error::Data(format!(
                        "{}: mask ID {id} exceeds the {MAX_CLASSES}-class limit",
                        f.name
                    )));
                }
                Some(ids)
            }
            None => None,
        };
        views.push(TrainingView {
            name: f.name.clone(),
            camera: f.camera.clone(),
            image,
            mask,
        });
    }
    Ok(views)
}

/// `frame_0000`, `frame_0001`, ...
pub fn frame_name(index: usize) -> String {
    format!("frame_{index:04}")
}
