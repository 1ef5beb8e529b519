use objsplat::splat::linalg::{Mat3, Vec3};
use objsplat::splat::projection::{project_gaussian, project_gaussian_backward, LOW_PASS};
use objsplat::splat::{build_covariance, build_covariance_backward, eval_sh, eval_sh_backward, sh, Camera};
use objsplat_oracle::fd;
use objsplat_oracle::render::{self as oracle, RefCamera, RefRenderSettings};
use proptest::prelude::*;

const TOL: f64 = 1e-3;
const FLOOR: f64 = 1e-2;
const STEP: f64 = 1e-3;

fn quat() -> impl Strategy<Value = [f32; 4]> {
    prop::array::uniform4(-1.0f32..1.0).prop_filter("non-degenerate", |q| q.iter().map(|v| v * v).sum::<f32>() > 0.1)
}

fn vec3(lo: f32, hi: f32) -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(lo..hi)
}

fn mat3(lo: f32, hi: f32) -> impl Strategy<Value = Mat3> {
    prop::array::uniform3(vec3(lo, hi))
}

fn unit(v: Vec3) -> Vec3 {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    v.map(|x| x / n)
}

fn f64s<const N: usize>(a: [f32; N]) -> [f64; N] {
    a.map(f64::from)
}

fn cam() -> Camera {
    Camera::look_at(32, 24, 30.0, 28.0, [0.4, 0.3, -3.0], [0.0, 0.0, 0.0], [0.0, -1.0, 0.0])
}

fn ref_cam(c: &Camera) -> RefCamera {
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

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn covariance_backward_matches_fd(q in quat(), ls in vec3(-1.5, 0.7), up in mat3(-1.0, 1.0)) {
        let (gq, gls) = build_covariance_backward(&up, q, ls);
        let mut x: Vec<f64> = f64s(q).to_vec();
        x.extend(f64s(ls));
        let loss = |p: &[f64]| {
            let c = oracle::covariance([p[0], p[1], p[2], p[3]], [p[4], p[5], p[6]]);
            (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| c[i][j] * up[i][j] as f64).sum::<f64>()
        };
        let analytic: Vec<f32> = gq.iter().chain(&gls).copied().collect();
        for i in 0..7 {
            let n = fd::central_difference(&x, i, STEP, loss);
            let e = fd::relative_error(analytic[i] as f64, n, FLOOR);
            prop_assert!(e < TOL, "coord {i}: {} vs {n}", analytic[i]);
        }
    }

    #[test]
    fn covariance_is_symmetric_with_bounded_spectrum(q in quat(), ls in vec3(-2.0, 1.0)) {
        let c = build_covariance(q, ls);
        for i in 0..3 {
            for j in 0..3 {
                prop_assert!((c[i][j] - c[j][i]).abs() <= 1e-6 * c[i][i].abs().max(1.0));
            }
        }
        // smallest eigenvalue is the minimum of vᵀΣv over unit v
        let min_var = ls.iter().map(|v| (2.0 * v).exp()).fold(f32::INFINITY, f32::min);
        for v in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], unit([1.0, 1.0, 1.0]), unit([1.0, -2.0, 0.5])] {
            let cv: Vec<f32> = (0..3).map(|i| (0..3).map(|j| c[i][j] * v[j]).sum()).collect();
            let q: f32 = (0..3).map(|i| v[i] * cv[i]).sum();
            prop_assert!(q >= min_var - 1e-5);
        }
    }

    #[test]
    fn projection_backward_matches_fd(
        pos in vec3(-0.6, 0.6),
        q in quat(),
        ls in vec3(-2.0, -0.8),
        gm in prop::array::uniform2(-1.0f32..1.0),
        g in prop::array::uniform2(prop::array::uniform2(-1.0f32..1.0)),
    ) {
        // screen-covariance gradients are symmetric in practice
        let g = [[g[0][0], g[0][1]], [g[0][1], g[1][1]]];
        let camera = cam();
        let cov = build_covariance(q, ls);
        prop_assume!(project_gaussian(pos, &cov, &camera, 0.01).is_ok());
        let (gpos, gcov) = project_gaussian_backward(pos, &cov, &camera, gm, &g);
        let rc = ref_cam(&camera);
        let settings = RefRenderSettings::default();
        let mut x: Vec<f64> = f64s(pos).to_vec();
        x.extend(cov.iter().flat_map(|r| f64s(*r)));
        let loss = |p: &[f64]| {
            let c = [[p[3], p[4], p[5]], [p[6], p[7], p[8]], [p[9], p[10], p[11]]];
            let (m, c2, _) = oracle::project([p[0], p[1], p[2]], &c, &rc, &settings).unwrap();
            let mut l = m[0] * gm[0] as f64 + m[1] * gm[1] as f64;
            for a in 0..2 {
                for b in 0..2 {
                    l += c2[a][b] * g[a][b] as f64;
                }
            }
            l
        };
        let analytic: Vec<f32> = gpos.iter().chain(gcov.iter().flatten()).copied().collect();
        for i in 0..12 {
            let n = fd::central_difference(&x, i, STEP, loss);
            let e = fd::relative_error(analytic[i] as f64, n, FLOOR);
            prop_assert!(e < TOL, "coord {i}: {} vs {n}", analytic[i]);
        }
    }

    #[test]
    fn sh_backward_matches_fd(degree in 0usize..=3, seed in any::<u64>(), d in vec3(-1.0, 1.0), up in vec3(-1.0, 1.0)) {
        prop_assume!(d.iter().map(|v| v * v).sum::<f32>() > 0.05);
        let dir = unit(d);
        let k = sh::coeff_count(degree);
        let coeffs: Vec<f32> = (0..k).map(|i| {
            let h = seed.wrapping_mul(6364136223846793005).wrapping_add((i as u64).wrapping_mul(1442695040888963407));
            ((h >> 40) as f32 / (1u64 << 24) as f32) - 0.5
        }).collect();
        let raw = objsplat_oracle::render::sh_color(&coeffs.iter().map(|&v| v as f64).collect::<Vec<_>>(), degree, f64s(dir)).0;
        prop_assume!(raw.iter().all(|v| *v > 1e-2));
        let g = eval_sh_backward(up, &coeffs, dir, degree).unwrap();
        let dir64 = f64s(dir);
        let x: Vec<f64> = coeffs.iter().map(|&v| v as f64).collect();
        let loss_c = |p: &[f64]| {
            let (rgb, _) = oracle::sh_color(p, degree, dir64);
            (0..3).map(|c| rgb[c] * up[c] as f64).sum::<f64>()
        };
        for i in 0..k {
            let n = fd::central_difference(&x, i, STEP, loss_c);
            prop_assert!(fd::relative_error(g.coeffs[i] as f64, n, FLOOR) < TOL);
        }
        // direction gradient on the sphere: compare tangential components
        let loss_d = |p: &[f64]| {
            let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            let (rgb, _) = oracle::sh_color(&x, degree, [p[0] / n, p[1] / n, p[2] / n]);
            (0..3).map(|c| rgb[c] * up[c] as f64).sum::<f64>()
        };
        let along: f32 = (0..3).map(|a| g.view_dir[a] * dir[a]).sum();
        for a in 0..3 {
            let tangential = g.view_dir[a] - along * dir[a];
            let n = fd::central_difference(&dir64, a, STEP, loss_d);
            prop_assert!(fd::relative_error(tangential as f64, n, FLOOR) < TOL, "axis {a}: {tangential} vs {n}");
        }
    }

    #[test]
    fn degree_one_terms_are_odd(seed in any::<u32>(), d in vec3(-1.0, 1.0)) {
        prop_assume!(d.iter().map(|v| v * v).sum::<f32>() > 0.05);
        let dir = unit(d);
        let c: Vec<f32> = (0..12).map(|i| ((seed.wrapping_mul(2654435761).wrapping_add(i * 40503) >> 16) as f32 / 65536.0) * 0.2 - 0.1).collect();
        let mut dc_only = c.clone();
        dc_only[3..].fill(0.0);
        let base = eval_sh(&dc_only, dir, 1).unwrap();
        let a = eval_sh(&c, dir, 1).unwrap();
        let b = eval_sh(&c, dir.map(|v| -v), 1).unwrap();
        for ch in 0..3 {
            prop_assert!(((a[ch] - base[ch]) + (b[ch] - base[ch])).abs() < 1e-6);
        }
    }

    #[test]
    fn dc_restriction_matches_degree_zero(degree in 1usize..=3, dc in vec3(-1.0, 1.0), d in vec3(-1.0, 1.0)) {
        prop_assume!(d.iter().map(|v| v * v).sum::<f32>() > 0.05);
        let mut c = vec![0.0; sh::coeff_count(degree)];
        c[..3].copy_from_slice(&dc);
        prop_assert_eq!(eval_sh(&c, unit(d), degree).unwrap(), eval_sh(&dc, unit(d), 0).unwrap());
    }

    #[test]
    fn doubling_focal_scales_projection(pos in vec3(-0.5, 0.5), q in quat(), ls in vec3(-2.0, -1.0)) {
        let a = cam();
        let mut b = a.clone();
        b.fx *= 2.0;
        b.fy *= 2.0;
        b.width *= 4;
        b.height *= 4;
        let cov = build_covariance(q, ls);
        let (Ok(pa), Ok(pb)) = (project_gaussian(pos, &cov, &a, 0.01), project_gaussian(pos, &cov, &b, 0.01)) else {
            return Ok(());
        };
        for i in 0..2 {
            let (ca, cb) = if i == 0 { (a.cx, b.cx) } else { (a.cy, b.cy) };
            prop_assert!(((pb.mean2d[i] - cb) - 2.0 * (pa.mean2d[i] - ca)).abs() < 1e-3);
            for j in 0..2 {
                let da = pa.cov2d[i][j] - if i == j { LOW_PASS } else { 0.0 };
                let db = pb.cov2d[i][j] - if i == j { LOW_PASS } else { 0.0 };
                prop_assert!((db - 4.0 * da).abs() <= 1e-4 * db.abs().max(1.0));
            }
        }
    }
}
