use rayon::prelude::*;

use super::composite::{sample, Composite, Sample};
use super::prepare::PreparedView;
use super::view_direction;
use crate::splat::linalg::{dot3, Vec3};
use crate::splat::{
    build_covariance, build_covariance_backward, project_gaussian_backward, sh, Camera, GaussianSet,
    IdFeature, ID_FEATURE_DIM,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackwardOptions {
    /// Propagate into positions, rotations, scales and opacities.
    pub geometry: bool,
    /// Propagate into SH coefficients.
    pub sh: bool,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        BackwardOptions {
            geometry: true,
            sh: true,
        }
    }
}

/// Gradients with respect to the per-splat compositor inputs, indexed by
/// sorted splat position.
#[derive(Debug, Clone)]
pub struct CompositeGrads {
    pub dim: usize,
    pub payload: Vec<f32>,
    pub mean: Vec<[f32; 2]>,
    pub conic: Vec<[f32; 3]>,
    /// With respect to the activated opacity.
    pub opacity: Vec<f32>,
}

/// Gradients laid out like [`GaussianSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianGrads {
    pub positions: Vec<Vec3>,
    pub rotations: Vec<[f32; 4]>,
    pub log_scales: Vec<Vec3>,
    pub opacity_logits: Vec<f32>,
    pub sh_coeffs: Vec<f32>,
    pub id_features: Vec<IdFeature>,
}

impl GaussianGrads {
    pub fn zeros_like(g: &GaussianSet) -> Self {
        let n = g.len();
        GaussianGrads {
            positions: vec![[0.0; 3]; n],
            rotations: vec![[0.0; 4]; n],
            log_scales: vec![[0.0; 3]; n],
            opacity_logits: vec![0.0; n],
            sh_coeffs: vec![0.0; g.sh_coeffs.len()],
            id_features: vec![[0.0; ID_FEATURE_DIM]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn add_assign(&mut self, other: &GaussianGrads) {
        assert_eq!(self.len(), other.len());
        fn add<const N: usize>(a: &mut [[f32; N]], b: &[[f32; N]]) {
            for (x, y) in a.iter_mut().zip(b) {
                for (p, q) in x.iter_mut().zip(y) {
                    *p += q;
                }
            }
        }
        add(&mut self.positions, &other.positions);
        add(&mut self.rotations, &other.rotations);
        add(&mut self.log_scales, &other.log_scales);
        add(&mut self.id_features, &other.id_features);
        for (p, q) in self.opacity_logits.iter_mut().zip(&other.opacity_logits) {
            *p += q;
        }
        for (p, q) in self.sh_coeffs.iter_mut().zip(&other.sh_coeffs) {
            *p += q;
        }
    }

    pub fn scale(&mut self, s: f32) {
        self.positions.iter_mut().flatten().for_each(|v| *v *= s);
        self.rotations.iter_mut().flatten().for_each(|v| *v *= s);
        self.log_scales.iter_mut().flatten().for_each(|v| *v *= s);
        self.id_features.iter_mut().flatten().for_each(|v| *v *= s);
        self.opacity_logits.iter_mut().for_each(|v| *v *= s);
        self.sh_coeffs.iter_mut().for_each(|v| *v *= s);
    }
}

struct TileGrads {
    payload: Vec<f32>,
    mean: Vec<[f32; 2]>,
    conic: Vec<[f32; 3]>,
    opacity: Vec<f32>,
}

impl PreparedView {
    /// Gradients of `⟨upstream, composite.values⟩` with respect to the payload
    /// and, when `geometry` is set, the screen-space splat parameters.
    pub fn composite_backward(
        &self,
        payload: &[f32],
        dim: usize,
        composite: &Composite,
        upstream: &[f32],
        geometry: bool,
    ) -> CompositeGrads {
        assert_eq!(composite.dim, dim);
        assert_eq!(upstream.len(), composite.values.len());
        let w = self.width as usize;

        let tiles: Vec<TileGrads> = (0..self.tile_count())
            .into_par_iter()
            .map(|tile| {
                let (x0, y0, x1, y1) = self.tiles.bounds(tile, self.width, self.height);
                let list = &self.tiles.lists[tile];
                let m = list.len();
                let mut out = TileGrads {
                    payload: vec![0.0; m * dim],
                    mean: vec![[0.0; 2]; if geometry { m } else { 0 }],
                    conic: vec![[0.0; 3]; if geometry { m } else { 0 }],
                    opacity: vec![0.0; if geometry { m } else { 0 }],
                };
                let mut suffix = vec![0.0f32; dim];
                for py in y0..y1 {
                    for px in x0..x1 {
                        let p = py as usize * w + px as usize;
                        let up = &upstream[p * dim..(p + 1) * dim];
                        if up.iter().all(|&u| u == 0.0) {
                            continue;
                        }
                        suffix.copy_from_slice(&composite.values[p * dim..(p + 1) * dim]);
                        let mut t = 1.0f32;
                        for (k, &pos) in list[..composite.walk_len[p] as usize].iter().enumerate() {
                            let pos = pos as usize;
                            let Sample::Blend { alpha, gaussian, clamped, dx, dy } =
                                sample(self, pos, px as f32, py as f32)
                            else {
                                continue;
                            };
                            let wgt = alpha * t;
                            let src = &payload[pos * dim..(pos + 1) * dim];
                            let gpay = &mut out.payload[k * dim..(k + 1) * dim];
                            let mut dalpha = 0.0f32;
                            let inv = 1.0 / (1.0 - alpha);
                            for d in 0..dim {
                                gpay[d] += wgt * up[d];
                                suffix[d] -= wgt * src[d];
                                dalpha += up[d] * (t * src[d] - suffix[d] * inv);
                            }
                            if geometry && !clamped {
                                let s = &self.splats[pos];
                                out.opacity[k] += dalpha * gaussian;
                                let gp = dalpha * alpha;
                                let [a, b, c] = s.conic;
                                out.mean[k][0] += gp * (a * dx + b * dy);
                                out.mean[k][1] += gp * (b * dx + c * dy);
                                out.conic[k][0] += -0.5 * gp * dx * dx;
                                out.conic[k][1] += -gp * dx * dy;
                                out.conic[k][2] += -0.5 * gp * dy * dy;
                            }
                            t *= 1.0 - alpha;
                        }
                    }
                }
                out
            })
            .collect();

        let n = self.splats.len();
        let mut grads = CompositeGrads {
            dim,
            payload: vec![0.0; n * dim],
            mean: vec![[0.0; 2]; n],
            conic: vec![[0.0; 3]; n],
            opacity: vec![0.0; n],
        };
        for (tile, tg) in tiles.into_iter().enumerate() {
            for (k, &pos) in self.tiles.lists[tile].iter().enumerate() {
                let pos = pos as usize;
                for d in 0..dim {
                    grads.payload[pos * dim + d] += tg.payload[k * dim + d];
                }
                if geometry {
                    for j in 0..2 {
                        grads.mean[pos][j] += tg.mean[k][j];
                    }
                    for j in 0..3 {
                        grads.conic[pos][j] += tg.conic[k][j];
                    }
                    grads.opacity[pos] += tg.opacity[k];
                }
            }
        }
        grads
    }
}

/// Chains payload gradients on clamped SH colors into SH coefficients and,
/// with `geometry`, into positions through the view direction.
pub(crate) fn chain_sh(
    view: &PreparedView,
    gaussians: &GaussianSet,
    camera: &Camera,
    cg: &CompositeGrads,
    grads: &mut GaussianGrads,
    geometry: bool,
) {
    let center = camera.center();
    let degree = gaussians.sh_degree;
    let k = gaussians.coeffs_per_gaussian();
    for (pos, s) in view.splats.iter().enumerate() {
        let i = s.index as usize;
        let up = [cg.payload[pos * 3], cg.payload[pos * 3 + 1], cg.payload[pos * 3 + 2]];
        if up == [0.0; 3] {
            continue;
        }
        let (dir, dist) = view_direction(center, gaussians.positions[i]);
        let g = sh::eval_sh_backward(up, gaussians.sh(i), dir, degree)
            .expect("coefficient count validated by GaussianSet");
        for (d, v) in grads.sh_coeffs[i * k..(i + 1) * k].iter_mut().zip(&g.coeffs) {
            *d += v;
        }
        if geometry && degree > 0 && dist > 0.0 {
            let along = dot3(g.view_dir, dir);
            for a in 0..3 {
                grads.positions[i][a] += (g.view_dir[a] - along * dir[a]) / dist;
            }
        }
    }
}

/// Chains screen-space mean, conic and opacity gradients into positions,
/// rotations, log-scales and opacity logits.
pub(crate) fn chain_geometry(
    view: &PreparedView,
    gaussians: &GaussianSet,
    camera: &Camera,
    cg: &CompositeGrads,
    grads: &mut GaussianGrads,
) {
    for (pos, s) in view.splats.iter().enumerate() {
        let i = s.index as usize;
        let o = s.opacity;
        grads.opacity_logits[i] += cg.opacity[pos] * o * (1.0 - o);

        let [ga, gb, gc] = cg.conic[pos];
        let gm = cg.mean[pos];
        if ga == 0.0 && gb == 0.0 && gc == 0.0 && gm == [0.0; 2] {
            continue;
        }
        // dL/dΣ' = -M G M with M the conic matrix
        let [a, b, c] = s.conic;
        let m = [[a, b], [b, c]];
        let g = [[ga, 0.5 * gb], [0.5 * gb, gc]];
        let mut mg = [[0.0f32; 2]; 2];
        for r in 0..2 {
            for q in 0..2 {
                mg[r][q] = m[r][0] * g[0][q] + m[r][1] * g[1][q];
            }
        }
        let mut gcov = [[0.0f32; 2]; 2];
        for r in 0..2 {
            for q in 0..2 {
                gcov[r][q] = -(mg[r][0] * m[0][q] + mg[r][1] * m[1][q]);
            }
        }
        let q = gaussians.rotations[i];
        let ls = gaussians.log_scales[i];
        let cov3d = build_covariance(q, ls);
        let (gpos, gcov3d) = project_gaussian_backward(gaussians.positions[i], &cov3d, camera, gm, &gcov);
        let (gq, gls) = build_covariance_backward(&gcov3d, q, ls);
        for a in 0..3 {
            grads.positions[i][a] += gpos[a];
            grads.log_scales[i][a] += gls[a];
        }
        for a in 0..4 {
            grads.rotations[i][a] += gq[a];
        }
    }
}
