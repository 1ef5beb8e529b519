//! Naive per-pixel Gaussian compositor.

use std::f64::consts::PI;

#[derive(Debug, Clone)]
pub struct RefGaussian {
    pub position: [f64; 3],
    pub rotation: [f64; 4],
    pub log_scale: [f64; 3],
    pub opacity_logit: f64,
    /// Basis-major, three channels per basis function.
    pub sh: Vec<f64>,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RefCamera {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub world_to_camera: [f64; 16],
}

#[derive(Debug, Clone, Copy)]
pub struct RefRenderSettings {
    pub alpha_max: f64,
    pub alpha_skip: f64,
    pub t_stop: f64,
    pub low_pass: f64,
    pub near_plane: f64,
    pub sigma_cutoff: f64,
}

impl Default for RefRenderSettings {
    fn default() -> Self {
        RefRenderSettings {
            alpha_max: 0.99,
            alpha_skip: 1.0 / 255.0,
            t_stop: 1e-4,
            low_pass: 0.3,
            near_plane: 0.01,
            sigma_cutoff: 3.0,
        }
    }
}

/// What happened to one (pixel, Gaussian) pair; used to detect threshold
/// crossings between finite-difference evaluations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    OutsideEllipse,
    BelowSkip,
    Blended,
    BlendedClamped,
    Stopped,
}

#[derive(Debug, Clone)]
pub struct RefImage {
    pub width: usize,
    pub height: usize,
    pub color: Vec<f64>,
    pub features: Vec<f64>,
    pub feature_dim: usize,
    pub transmittance: Vec<f64>,
    /// Sum of blend weights per pixel.
    pub weight_sum: Vec<f64>,
    /// Per-pixel decisions in compositing order, plus SH clamp state.
    pub signature: Vec<(usize, Decision)>,
    pub clamp_signature: Vec<bool>,
}

pub fn quat_to_matrix(q: [f64; 4]) -> [[f64; 3]; 3] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

pub fn covariance(rotation: [f64; 4], log_scale: [f64; 3]) -> [[f64; 3]; 3] {
    let r = quat_to_matrix(rotation);
    let s2: Vec<f64> = log_scale.iter().map(|v| (2.0 * v).exp()).collect();
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| r[i][k] * s2[k] * r[j][k]).sum();
        }
    }
    c
}

/// Screen mean, screen covariance (with low-pass) and depth; `None` behind the near plane.
pub fn project(
    position: [f64; 3],
    cov: &[[f64; 3]; 3],
    cam: &RefCamera,
    settings: &RefRenderSettings,
) -> Option<([f64; 2], [[f64; 2]; 2], f64)> {
    let m = &cam.world_to_camera;
    let w = [[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]];
    let t: Vec<f64> = (0..3)
        .map(|i| (0..3).map(|j| w[i][j] * position[j]).sum::<f64>() + m[i * 4 + 3])
        .collect();
    if t[2] <= settings.near_plane {
        return None;
    }
    let j = [
        [cam.fx / t[2], 0.0, -cam.fx * t[0] / (t[2] * t[2])],
        [0.0, cam.fy / t[2], -cam.fy * t[1] / (t[2] * t[2])],
    ];
    // T = J W
    let mut tm = [[0.0; 3]; 2];
    for a in 0..2 {
        for b in 0..3 {
            tm[a][b] = (0..3).map(|k| j[a][k] * w[k][b]).sum();
        }
    }
    let mut c2 = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            let mut s = 0.0;
            for k in 0..3 {
                for l in 0..3 {
                    s += tm[a][k] * cov[k][l] * tm[b][l];
                }
            }
            c2[a][b] = s;
        }
    }
    c2[0][0] += settings.low_pass;
    c2[1][1] += settings.low_pass;
    let mean = [cam.fx * t[0] / t[2] + cam.cx, cam.fy * t[1] / t[2] + cam.cy];
    Some((mean, c2, t[2]))
}

/// Real SH basis written in the unit-sphere form, degree ≤ 3.
pub fn sh_basis(degree: usize, d: [f64; 3]) -> Vec<f64> {
    let [x, y, z] = d;
    let k00 = 0.5 / PI.sqrt();
    let k1 = (3.0 / (4.0 * PI)).sqrt();
    let mut b = vec![k00];
    if degree >= 1 {
        b.extend([-k1 * y, k1 * z, -k1 * x]);
    }
    if degree >= 2 {
        let k2a = 0.5 * (15.0 / PI).sqrt();
        let k2b = 0.25 * (5.0 / PI).sqrt();
        let k2c = 0.25 * (15.0 / PI).sqrt();
        b.extend([
            k2a * x * y,
            -k2a * y * z,
            k2b * (3.0 * z * z - 1.0),
            -k2a * x * z,
            k2c * (x * x - y * y),
        ]);
    }
    if degree >= 3 {
        let a = 0.25 * (35.0 / (2.0 * PI)).sqrt();
        let bb = 0.5 * (105.0 / PI).sqrt();
        let c = 0.25 * (21.0 / (2.0 * PI)).sqrt();
        let dd = 0.25 * (7.0 / PI).sqrt();
        let e = 0.25 * (105.0 / PI).sqrt();
        b.extend([
            -a * y * (3.0 * x * x - y * y),
            bb * x * y * z,
            -c * y * (5.0 * z * z - 1.0),
            dd * z * (5.0 * z * z - 3.0),
            -c * x * (5.0 * z * z - 1.0),
            e * z * (x * x - y * y),
            -a * x * (x * x - 3.0 * y * y),
        ]);
    }
    b
}

/// Color `max(0.5 + Σ c Y, 0)` and per-channel clamp flags.
pub fn sh_color(sh: &[f64], degree: usize, dir: [f64; 3]) -> ([f64; 3], [bool; 3]) {
    let b = sh_basis(degree, dir);
    let mut rgb = [0.5; 3];
    for (k, bk) in b.iter().enumerate() {
        for c in 0..3 {
            rgb[c] += bk * sh[k * 3 + c];
        }
    }
    let clamped = rgb.map(|v| v < 0.0);
    (rgb.map(|v| v.max(0.0)), clamped)
}

pub fn camera_center(cam: &RefCamera) -> [f64; 3] {
    let m = &cam.world_to_camera;
    let t = [m[3], m[7], m[11]];
    [
        -(m[0] * t[0] + m[4] * t[1] + m[8] * t[2]),
        -(m[1] * t[0] + m[5] * t[1] + m[9] * t[2]),
        -(m[2] * t[0] + m[6] * t[1] + m[10] * t[2]),
    ]
}

/// Renders color (with `background`) and features (zero background).
pub fn render(
    gaussians: &[RefGaussian],
    sh_degree: usize,
    cam: &RefCamera,
    background: [f64; 3],
    settings: &RefRenderSettings,
) -> RefImage {
    let feature_dim = gaussians.first().map_or(0, |g| g.features.len());
    let center = camera_center(cam);
    struct P {
        index: usize,
        mean: [f64; 2],
        inv: [[f64; 2]; 2],
        depth: f64,
        opacity: f64,
        rgb: [f64; 3],
    }
    let mut clamp_signature = Vec::new();
    let mut splats: Vec<P> = Vec::new();
    for (index, g) in gaussians.iter().enumerate() {
        let cov = covariance(g.rotation, g.log_scale);
        let Some((mean, c2, depth)) = project(g.position, &cov, cam, settings) else {
            continue;
        };
        let det = c2[0][0] * c2[1][1] - c2[0][1] * c2[1][0];
        if det < 1e-12 {
            continue;
        }
        let inv = [
            [c2[1][1] / det, -c2[0][1] / det],
            [-c2[1][0] / det, c2[0][0] / det],
        ];
        let v = [
            g.position[0] - center[0],
            g.position[1] - center[1],
            g.position[2] - center[2],
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let (rgb, cl) = sh_color(&g.sh, sh_degree, [v[0] / n, v[1] / n, v[2] / n]);
        clamp_signature.extend(cl);
        splats.push(P {
            index,
            mean,
            inv,
            depth,
            opacity: 1.0 / (1.0 + (-g.opacity_logit).exp()),
            rgb,
        });
    }
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));

    let (w, h) = (cam.width, cam.height);
    let mut out = RefImage {
        width: w,
        height: h,
        color: vec![0.0; w * h * 3],
        features: vec![0.0; w * h * feature_dim],
        feature_dim,
        transmittance: vec![1.0; w * h],
        weight_sum: vec![0.0; w * h],
        signature: Vec::new(),
        clamp_signature,
    };
    let cutoff = settings.sigma_cutoff * settings.sigma_cutoff;
    for py in 0..h {
        for px in 0..w {
            let pix = py * w + px;
            let mut t = 1.0;
            for s in &splats {
                let dx = px as f64 - s.mean[0];
                let dy = py as f64 - s.mean[1];
                let maha = s.inv[0][0] * dx * dx + 2.0 * s.inv[0][1] * dx * dy + s.inv[1][1] * dy * dy;
                if maha > cutoff {
                    out.signature.push((s.index, Decision::OutsideEllipse));
                    continue;
                }
                let raw = s.opacity * (-0.5 * maha).exp();
                let alpha = raw.min(settings.alpha_max);
                if alpha < settings.alpha_skip {
                    out.signature.push((s.index, Decision::BelowSkip));
                    continue;
                }
                let next = t * (1.0 - alpha);
                if next < settings.t_stop {
                    out.signature.push((s.index, Decision::Stopped));
                    break;
                }
                out.signature.push((
                    s.index,
                    if raw > settings.alpha_max {
                        Decision::BlendedClamped
                    } else {
                        Decision::Blended
                    },
                ));
                let wgt = alpha * t;
                for c in 0..3 {
                    out.color[pix * 3 + c] += wgt * s.rgb[c];
                }
                let g = &gaussians[s.index];
                for c in 0..feature_dim {
                    out.features[pix * feature_dim + c] += wgt * g.features[c];
                }
                out.weight_sum[pix] += wgt;
                t = next;
            }
            for c in 0..3 {
                out.color[pix * 3 + c] += t * background[c];
            }
            out.transmittance[pix] = t;
        }
    }
    out
}

impl RefImage {
    /// True when two renders made the same discrete compositing choices.
    pub fn same_decisions(&self, other: &RefImage) -> bool {
        self.signature == other.signature && self.clamp_signature == other.clamp_signature
    }
}

/// Packs Gaussians into a flat parameter vector: per Gaussian
/// `position(3), rotation(4), log_scale(3), opacity(1), sh(k), features(f)`.
pub fn pack(gaussians: &[RefGaussian]) -> Vec<f64> {
    let mut v = Vec::new();
    for g in gaussians {
        v.extend(g.position);
        v.extend(g.rotation);
        v.extend(g.log_scale);
        v.push(g.opacity_logit);
        v.extend(&g.sh);
        v.extend(&g.features);
    }
    v
}

pub fn unpack(params: &[f64], template: &[RefGaussian]) -> Vec<RefGaussian> {
    let mut out = Vec::with_capacity(template.len());
    let mut o = 0;
    for t in template {
        let k = t.sh.len();
        let f = t.features.len();
        let take = |o: &mut usize, n: usize| {
            let s = params[*o..*o + n].to_vec();
            *o += n;
            s
        };
        let p = take(&mut o, 3);
        let r = take(&mut o, 4);
        let s = take(&mut o, 3);
        let a = take(&mut o, 1);
        let sh = take(&mut o, k);
        let features = take(&mut o, f);
        out.push(RefGaussian {
            position: [p[0], p[1], p[2]],
            rotation: [r[0], r[1], r[2], r[3]],
            log_scale: [s[0], s[1], s[2]],
            opacity_logit: a[0],
            sh,
            features,
        });
    }
    out
}
