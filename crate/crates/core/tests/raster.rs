mod common;

use common::*;
use objsplat::classifier::Classifier;
use objsplat::raster::{
    render_color, render_color_backward, render_features, render_features_backward, render_id_map,
    sort_and_cull, BackwardOptions, RasterConfig, Rasterizer, Tiling,
};
use objsplat::splat::{sh, Camera, GaussianSet, ID_FEATURE_DIM};
use objsplat_oracle::RefRenderSettings;

fn one_splat(position: [f32; 3], opacity_logit: f32, rgb: [f32; 3], feature: [f32; 16]) -> GaussianSet {
    let mut g = GaussianSet::new(0);
    let dc = rgb.map(sh::rgb_to_dc);
    g.push(position, [1.0, 0.0, 0.0, 0.0], [-2.0; 3], opacity_logit, &dc, feature);
    g
}

fn axis_camera(size: u32) -> Camera {
    let c = size as f32 / 2.0;
    Camera::new(size, size, 20.0, 20.0, c, c)
}

#[test]
fn empty_scene_is_background() {
    let g = GaussianSet::new(1);
    let cam = axis_camera(8);
    let out = render_color(&g, &cam, [0.2, 0.4, 0.6]);
    for px in out.color.chunks(3) {
        assert_eq!(px, [0.2, 0.4, 0.6]);
    }
    assert!(out.final_transmittance.iter().all(|&t| t == 1.0));
    let cls = Classifier::zeros(3);
    assert!(render_id_map(&g, &cam, &cls).iter().all(|&v| v == 0));
}

#[test]
fn saturated_splat_center_is_alpha_max() {
    let c = [0.8, 0.3, 0.1];
    let g = one_splat([0.0, 0.0, 2.0], 40.0, c, [0.0; 16]);
    let cam = axis_camera(8);
    let bg = [0.5, 0.5, 0.5];
    let out = render_color(&g, &cam, bg);
    let p = 4 * 8 + 4;
    for ch in 0..3 {
        let expect = 0.99 * c[ch] + 0.01 * bg[ch];
        assert!((out.color[p * 3 + ch] - expect).abs() < 1e-5);
    }
}

#[test]
fn one_hot_feature_at_center() {
    let mut e = [0.0; 16];
    e[3] = 1.0;
    let g = one_splat([0.0, 0.0, 2.0], 40.0, [0.5; 3], e);
    let out = render_features(&g, &axis_camera(8));
    let f = out.pixel(4 * 8 + 4);
    for (k, v) in f.iter().enumerate() {
        let expect = if k == 3 { 0.99 } else { 0.0 };
        assert!((v - expect).abs() < 1e-5);
    }
}

#[test]
fn shared_feature_scales_with_coverage() {
    let mut g = random_scene(3, 12, 1);
    let v: [f32; 16] = std::array::from_fn(|i| i as f32 * 0.1 - 0.7);
    g.id_features.iter_mut().for_each(|e| *e = v);
    let out = render_features(&g, &camera(16, 16));
    for p in 0..256 {
        let cover = 1.0 - out.final_transmittance[p];
        for k in 0..16 {
            assert!((out.pixel(p)[k] - cover * v[k]).abs() < 1e-5);
        }
    }
}

#[test]
fn sort_orders_by_depth_then_index() {
    let mut g = GaussianSet::new(0);
    for z in [2.0, 1.0, -1.0, 2.0] {
        g.push([0.0, 0.0, z], [1.0, 0.0, 0.0, 0.0], [-2.0; 3], 0.0, &[0.0; 3], [0.0; 16]);
    }
    let (order, proj) = sort_and_cull(&g, &axis_camera(8));
    assert_eq!(order, vec![1, 0, 3]);
    assert_eq!(proj.len(), 3);
    assert!(proj[0].depth < proj[1].depth);
}

#[test]
fn matches_naive_compositor() {
    for seed in 0..20 {
        let g = random_scene(seed, 5 + seed as usize % 10, 1);
        let cam = camera(16, 16);
        let bg = [0.1, 0.2, 0.3];
        for t_stop in [1e-4f32, 0.0] {
            let r = Rasterizer::new(RasterConfig {
                t_stop,
                ..RasterConfig::default()
            });
            let out = r.render_color(&g, &cam, bg);
            let feats = r.render_features(&g, &cam);
            let settings = RefRenderSettings {
                t_stop: t_stop as f64,
                ..RefRenderSettings::default()
            };
            let reference = ref_render(&g, &cam, bg, &settings);
            for (a, b) in out.color.iter().zip(&reference.color) {
                assert!((*a as f64 - b).abs() < 1e-5, "seed {seed}: {a} vs {b}");
            }
            for (a, b) in feats.features.iter().zip(&reference.features) {
                assert!((*a as f64 - b).abs() < 1e-5, "seed {seed}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn weights_and_transmittance_sum_to_one() {
    for seed in 0..30 {
        let g = random_scene(100 + seed, 20, 1);
        let out = render_color(&g, &camera(24, 16), [0.0; 3]);
        for (w, t) in out.weight_sum().iter().zip(&out.final_transmittance) {
            assert!((w + t - 1.0).abs() < 1e-5);
        }
    }
}

#[test]
fn tiling_is_transparent() {
    for seed in 0..10 {
        let g = random_scene(200 + seed, 30, 1);
        let cam = camera(37, 29);
        let tiled = Rasterizer::default().render_color(&g, &cam, [0.3; 3]);
        let whole = Rasterizer::new(RasterConfig {
            tiling: Tiling::Whole,
            ..RasterConfig::default()
        })
        .render_color(&g, &cam, [0.3; 3]);
        assert_eq!(tiled.color, whole.color);
        assert_eq!(tiled.final_transmittance, whole.final_transmittance);
        assert_eq!(tiled.per_pixel_contributor_count, whole.per_pixel_contributor_count);
    }
}

#[test]
fn color_and_feature_weights_agree() {
    let mut g = random_scene(7, 15, 0);
    for i in 0..g.len() {
        let rgb = [0.2 + 0.03 * i as f32, 0.5, 0.9 - 0.04 * i as f32];
        let dc = rgb.map(sh::rgb_to_dc);
        g.sh_mut(i).copy_from_slice(&dc);
        let mut e = [0.0; 16];
        e[..3].copy_from_slice(&rgb);
        g.id_features[i] = e;
    }
    let cam = camera(16, 16);
    let bg = [0.25, 0.5, 0.75];
    let color = render_color(&g, &cam, bg);
    let feats = render_features(&g, &cam);
    for p in 0..256 {
        for c in 0..3 {
            let expect = feats.pixel(p)[c] + feats.final_transmittance[p] * bg[c];
            assert!((color.color[p * 3 + c] - expect).abs() < 1e-6);
        }
    }
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let g = random_scene(9, 10, 1);
    let cam = camera(16, 16);
    let out = render_color(&g, &cam, [0.0; 3]);
    let grads = render_color_backward(&g, &cam, &out, &vec![0.0; out.color.len()]);
    assert!(pack_grads(&grads, g.coeffs_per_gaussian()).iter().all(|&v| v == 0.0));
    let f = render_features(&g, &cam);
    let fg = render_features_backward(&g, &cam, &f, &vec![0.0; f.features.len()]);
    assert!(fg.id_features.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn occluded_splat_gets_no_gradient() {
    // wide saturated layers drive transmittance below the stop threshold
    let mut g = GaussianSet::new(0);
    for z in [2.0, 2.2, 2.4] {
        g.push([0.0, 0.0, z], [1.0, 0.0, 0.0, 0.0], [0.0; 3], 40.0, &[0.2; 3], [0.0; 16]);
    }
    g.push([0.0, 0.0, 3.0], [1.0, 0.0, 0.0, 0.0], [-3.0; 3], 1.0, &[0.3; 3], [1.0; 16]);
    let cam = axis_camera(8);
    let out = render_color(&g, &cam, [0.0; 3]);
    let up = vec![1.0; out.color.len()];
    let grads = render_color_backward(&g, &cam, &out, &up);
    let sh = &grads.sh_coeffs[9..12];
    assert!(sh.iter().all(|v| v.abs() < 1e-6), "{sh:?}");
    assert!(grads.positions[3].iter().all(|v| v.abs() < 1e-6));
}

#[test]
fn invisible_splat_has_no_feature_gradient() {
    let mut g = random_scene(11, 6, 0);
    g.push([0.0, 0.0, -10.0], [1.0, 0.0, 0.0, 0.0], [-1.0; 3], 2.0, &[0.1; 3], [1.0; 16]);
    let cam = camera(16, 16);
    let f = render_features(&g, &cam);
    let up = random_upstream(1, f.features.len());
    let grads = render_features_backward(&g, &cam, &f, &up);
    assert!(grads.id_features[6].iter().all(|&v| v == 0.0));
}

#[test]
fn color_gradients_match_finite_differences() {
    let mut checked = 0;
    for seed in 0..6 {
        let g = random_scene(300 + seed, 8 + 2 * seed as usize, 1);
        let cam = camera(16, 16);
        let bg = [0.2, 0.1, 0.3];
        let out = render_color(&g, &cam, bg);
        let up = random_upstream(seed, out.color.len());
        let grads = render_color_backward(&g, &cam, &out, &up);
        let analytic = pack_grads(&grads, g.coeffs_per_gaussian());
        let per = 11 + g.coeffs_per_gaussian() + ID_FEATURE_DIM;
        let res = check_against_oracle(&g, &cam, bg, &up, &[], &analytic, |i| i % per < per - ID_FEATURE_DIM);
        assert!(res.failures.is_empty(), "seed {seed}: {:?}", res.failures);
        checked += res.checked;
    }
    assert!(checked > 300);
}

#[test]
fn feature_gradients_match_finite_differences() {
    for seed in 0..4 {
        let g = random_scene(400 + seed, 10, 0);
        let cam = camera(16, 16);
        let r = Rasterizer::default();
        let f = r.render_features(&g, &cam);
        let up = random_upstream(50 + seed, f.features.len());
        let grads = r.render_features_backward(&g, &cam, &f, &up, true);
        let analytic = pack_grads(&grads, g.coeffs_per_gaussian());
        let per = 11 + g.coeffs_per_gaussian() + ID_FEATURE_DIM;
        let zero = vec![0.0; 16 * 16 * 3];
        // sh entries excluded: the color term is zeroed
        let res = check_against_oracle(&g, &cam, [0.0; 3], &zero, &up, &analytic, |i| {
            let k = i % per;
            k < 11 || k >= 11 + g.coeffs_per_gaussian()
        });
        assert!(res.failures.is_empty(), "seed {seed}: {:?}", res.failures);
    }
}

#[test]
fn backward_without_geometry_leaves_geometry_zero() {
    let g = random_scene(5, 10, 1);
    let cam = camera(16, 16);
    let r = Rasterizer::default();
    let out = r.render_color(&g, &cam, [0.0; 3]);
    let up = random_upstream(2, out.color.len());
    let grads = r.render_color_backward(
        &g,
        &cam,
        &out,
        &up,
        &BackwardOptions {
            geometry: false,
            sh: true,
        },
    );
    assert!(grads.positions.iter().flatten().all(|&v| v == 0.0));
    assert!(grads.opacity_logits.iter().all(|&v| v == 0.0));
    assert!(grads.sh_coeffs.iter().any(|&v| v != 0.0));
}

#[test]
fn id_map_follows_one_hot_features() {
    let mut g = random_scene(21, 12, 0);
    for i in 0..g.len() {
        let mut e = [0.0; 16];
        e[i % 3 + 1] = 1.0;
        g.id_features[i] = e;
    }
    let mut cls = Classifier::zeros(4);
    for c in 0..4 {
        cls.weights[c * 16 + c] = 1.0;
    }
    let cam = camera(16, 16);
    let ids = render_id_map(&g, &cam, &cls);
    let f = render_features(&g, &cam);
    for p in 0..256 {
        if f.final_transmittance[p] > 0.5 {
            assert_eq!(ids[p], 0);
        } else {
            let px = f.pixel(p);
            let best = (0..4).max_by(|&a, &b| px[a].total_cmp(&px[b]).then(b.cmp(&a))).unwrap();
            assert_eq!(ids[p] as usize, best);
        }
    }
}

#[test]
fn deterministic_across_runs() {
    let g = random_scene(8, 40, 1);
    let cam = camera(40, 32);
    let a = render_color(&g, &cam, [0.0; 3]);
    let b = render_color(&g, &cam, [0.0; 3]);
    assert_eq!(a.color, b.color);
    let up = random_upstream(3, a.color.len());
    let ga = render_color_backward(&g, &cam, &a, &up);
    let gb = render_color_backward(&g, &cam, &b, &up);
    assert_eq!(ga, gb);
}
