use super::{RasterConfig, Tiling};
use crate::splat::{
    build_covariance, project_gaussian, Camera, CullReason, GaussianSet, ProjectedGaussian,
    DEFAULT_NEAR_PLANE,
};

/// A visible Gaussian in screen space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat {
    /// Index into the source `GaussianSet`.
    pub index: u32,
    pub mean: [f32; 2],
    /// Inverse screen covariance `(a, b, c)`.
    pub conic: [f32; 3],
    pub opacity: f32,
    pub depth: f32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RasterDiagnostics {
    pub culled_near: usize,
    pub culled_offscreen: usize,
    /// Gaussians skipped because their screen covariance was singular.
    pub singular: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct TileGrid {
    pub tile_w: u32,
    pub tile_h: u32,
    pub tiles_x: u32,
    /// Per tile, positions into `splats` in front-to-back order.
    pub lists: Vec<Vec<u32>>,
}

impl TileGrid {
    pub fn bounds(&self, tile: usize, width: u32, height: u32) -> (u32, u32, u32, u32) {
        let tx = tile as u32 % self.tiles_x;
        let ty = tile as u32 / self.tiles_x;
        let x0 = tx * self.tile_w;
        let y0 = ty * self.tile_h;
        (x0, y0, (x0 + self.tile_w).min(width), (y0 + self.tile_h).min(height))
    }
}

/// Projected, culled, depth-sorted and tile-binned Gaussians for one camera.
#[derive(Debug, Clone)]
pub struct PreparedView {
    pub width: u32,
    pub height: u32,
    pub splats: Vec<Splat>,
    /// Projection of each entry of `splats`.
    pub projected: Vec<ProjectedGaussian>,
    pub diagnostics: RasterDiagnostics,
    pub config: RasterConfig,
    pub(crate) tiles: TileGrid,
}

impl PreparedView {
    pub fn new(gaussians: &GaussianSet, camera: &Camera, config: &RasterConfig) -> Self {
        let mut diagnostics = RasterDiagnostics::default();
        let mut visible: Vec<(Splat, ProjectedGaussian)> = Vec::new();
        for i in 0..gaussians.len() {
            let cov = build_covariance(gaussians.rotations[i], gaussians.log_scales[i]);
            match project_gaussian(gaussians.positions[i], &cov, camera, config.near_plane) {
                Ok(p) => {
                    let splat = Splat {
                        index: i as u32,
                        mean: p.mean2d,
                        conic: p.conic(),
                        opacity: gaussians.opacity(i),
                        depth: p.depth,
                    };
                    visible.push((splat, p));
                }
                Err(CullReason::NearPlane) => diagnostics.culled_near += 1,
                Err(CullReason::OffScreen) => diagnostics.culled_offscreen += 1,
                Err(CullReason::Degenerate) => diagnostics.singular += 1,
            }
        }
        visible.sort_by(|a, b| a.0.depth.total_cmp(&b.0.depth).then(a.0.index.cmp(&b.0.index)));
        let (splats, projected): (Vec<Splat>, Vec<ProjectedGaussian>) = visible.into_iter().unzip();
        let tiles = bin_tiles(&projected, camera.width, camera.height, config.tiling);
        PreparedView {
            width: camera.width,
            height: camera.height,
            splats,
            projected,
            diagnostics,
            config: *config,
            tiles,
        }
    }

    pub fn tile_count(&self) -> usize {
        self.tiles.lists.len()
    }
}

fn bin_tiles(projected: &[ProjectedGaussian], width: u32, height: u32, tiling: Tiling) -> TileGrid {
    match tiling {
        Tiling::Whole => TileGrid {
            tile_w: width,
            tile_h: height,
            tiles_x: 1,
            lists: vec![(0..projected.len() as u32).collect()],
        },
        Tiling::Tiles(size) => {
            let size = size.max(1);
            let tiles_x = width.div_ceil(size);
            let tiles_y = height.div_ceil(size);
            let mut lists = vec![Vec::new(); (tiles_x * tiles_y) as usize];
            for (pos, p) in projected.iter().enumerate() {
                let [rx, ry] = p.footprint();
                let x0 = (p.mean2d[0] - rx).ceil().max(0.0);
                let x1 = (p.mean2d[0] + rx).floor().min(width as f32 - 1.0);
                let y0 = (p.mean2d[1] - ry).ceil().max(0.0);
                let y1 = (p.mean2d[1] + ry).floor().min(height as f32 - 1.0);
                if x0 > x1 || y0 > y1 {
                    continue;
                }
                let (tx0, tx1) = (x0 as u32 / size, x1 as u32 / size);
                let (ty0, ty1) = (y0 as u32 / size, y1 as u32 / size);
                for ty in ty0..=ty1 {
                    for tx in tx0..=tx1 {
                        lists[(ty * tiles_x + tx) as usize].push(pos as u32);
                    }
                }
            }
            TileGrid {
                tile_w: size,
                tile_h: size,
                tiles_x,
                lists,
            }
        }
    }
}

/// Visible Gaussian indices sorted front to back (ties by index), with their projections.
pub fn sort_and_cull(gaussians: &GaussianSet, camera: &Camera) -> (Vec<usize>, Vec<ProjectedGaussian>) {
    let config = RasterConfig {
        near_plane: DEFAULT_NEAR_PLANE,
        ..RasterConfig::default()
    };
    let view = PreparedView::new(gaussians, camera, &config);
    (
        view.splats.iter().map(|s| s.index as usize).collect(),
        view.projected,
    )
}
