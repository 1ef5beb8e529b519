#![allow(dead_code)]

use objsplat::raster::GaussianGrads;
use objsplat::splat::{Camera, GaussianSet, ID_FEATURE_DIM};
use objsplat_oracle::render::{self, Decision, RefImage};
use objsplat_oracle::{RefCamera, RefGaussian, RefRenderSettings};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn camera(width: u32, height: u32) -> Camera {
    let f = 1.25 * width as f32;
    Camera::look_at(
        width,
        height,
        f,
        f,
        [0.3, -0.2, -3.0],
        [0.0, 0.0, 0.0],
        [0.0, -1.0, 0.0],
    )
}

/// `n` Gaussians roughly filling the view of [`camera`].
pub fn random_scene(seed: u64, n: usize, sh_degree: usize) -> GaussianSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = GaussianSet::new(sh_degree);
    let k = g.coeffs_per_gaussian();
    for _ in 0..n {
        let pos = [
            rng.random_range(-0.9..0.9),
            rng.random_range(-0.9..0.9),
            rng.random_range(-0.8..0.8),
        ];
        let rot = [
            rng.random_range(0.3..1.0),
            rng.random_range(-0.6..0.6),
            rng.random_range(-0.6..0.6),
            rng.random_range(-0.6..0.6),
        ];
        let ls = [
            rng.random_range(-2.6..-1.2),
            rng.random_range(-2.6..-1.2),
            rng.random_range(-2.6..-1.2),
        ];
        let op = rng.random_range(-1.5..3.0);
        let sh: Vec<f32> = (0..k).map(|_| rng.random_range(-0.8..0.8)).collect();
        let mut feat = [0.0; ID_FEATURE_DIM];
        feat.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        g.push(pos, rot, ls, op, &sh, feat);
    }
    g
}

pub fn random_upstream(seed: u64, len: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn to_ref(g: &GaussianSet) -> Vec<RefGaussian> {
    (0..g.len())
        .map(|i| RefGaussian {
            position: g.positions[i].map(f64::from),
            rotation: g.rotations[i].map(f64::from),
            log_scale: g.log_scales[i].map(f64::from),
            opacity_logit: g.opacity_logits[i] as f64,
            sh: g.sh(i).iter().map(|&v| v as f64).collect(),
            features: g.id_features[i].iter().map(|&v| v as f64).collect(),
        })
        .collect()
}

pub fn to_ref_camera(c: &Camera) -> RefCamera {
    RefCamera {
        width: c.width as usize,
        height: c.height as usize,
        fx: c.fx as f64,
        fy: c.fy as f64,
        cx: c.cx as f64,
        cy: c.cy as f64,
        world_to_camera: c.world_to_camera.map(f64::from),
    }
}

/// Flattens gradients in the oracle's `pack` order.
pub fn pack_grads(g: &GaussianGrads, sh_per: usize) -> Vec<f64> {
    let mut v = Vec::new();
    for i in 0..g.len() {
        v.extend(g.positions[i].map(f64::from));
        v.extend(g.rotations[i].map(f64::from));
        v.extend(g.log_scales[i].map(f64::from));
        v.push(g.opacity_logits[i] as f64);
        v.extend(g.sh_coeffs[i * sh_per..(i + 1) * sh_per].iter().map(|&x| x as f64));
        v.extend(g.id_features[i].iter().map(|&x| x as f64));
    }
    v
}

pub fn ref_render(g: &GaussianSet, cam: &Camera, background: [f32; 3], settings: &RefRenderSettings) -> RefImage {
    render::render(
        &to_ref(g),
        g.sh_degree,
        &to_ref_camera(cam),
        background.map(f64::from),
        settings,
    )
}

pub struct GradCheck {
    pub checked: usize,
    pub skipped: usize,
    pub failures: Vec<(usize, f64, f64)>,
    pub max_error: f64,
}

pub const REL_TOL: f64 = 1e-2;
pub const REL_FLOOR: f64 = 1e-3;

/// Compares `analytic` against central differences of the oracle loss
/// `⟨up_color, color⟩ + ⟨up_feat, features⟩`. Coordinates whose ± steps change
/// any discrete compositing decision are skipped.
pub fn check_against_oracle(
    g: &GaussianSet,
    cam: &Camera,
    background: [f32; 3],
    up_color: &[f32],
    up_feat: &[f32],
    analytic: &[f64],
    include: impl Fn(usize) -> bool,
) -> GradCheck {
    let settings = RefRenderSettings::default();
    let template = to_ref(g);
    let rc = to_ref_camera(cam);
    let bg = background.map(f64::from);
    let x = render::pack(&template);
    assert_eq!(x.len(), analytic.len());
    let eval = |p: &[f64]| {
        let gs = render::unpack(p, &template);
        let img = render::render(&gs, g.sh_degree, &rc, bg, &settings);
        let mut l = 0.0;
        for (a, b) in img.color.iter().zip(up_color) {
            l += a * *b as f64;
        }
        if !up_feat.is_empty() {
            for (a, b) in img.features.iter().zip(up_feat) {
                l += a * *b as f64;
            }
        }
        (l, img)
    };
    let (_, base) = eval(&x);
    let mut out = GradCheck {
        checked: 0,
        skipped: 0,
        failures: Vec::new(),
        max_error: 0.0,
    };
    let rel_step = 1e-4;
    for i in 0..x.len() {
        if !include(i) {
            continue;
        }
        let h = rel_step * x[i].abs().max(1.0);
        let mut xp = x.clone();
        xp[i] += h;
        let mut xm = x.clone();
        xm[i] -= h;
        let (lp, ip) = eval(&xp);
        let (lm, im) = eval(&xm);
        if !base.same_decisions(&ip) || !base.same_decisions(&im) {
            out.skipped += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * h);
        let err = objsplat_oracle::fd::relative_error(analytic[i], numeric, REL_FLOOR);
        out.checked += 1;
        out.max_error = out.max_error.max(err);
        if err >= REL_TOL {
            out.failures.push((i, analytic[i], numeric));
        }
    }
    out
}

pub fn has_stop(img: &RefImage) -> bool {
    img.signature.iter().any(|(_, d)| *d == Decision::Stopped)
}

/// Every file under `root` as (relative path, bytes), sorted.
pub fn files(root: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    if root.is_file() {
        out.push((String::new(), std::fs::read(root).unwrap()));
        return out;
    }
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
