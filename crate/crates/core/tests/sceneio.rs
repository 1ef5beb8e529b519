mod common;

use std::path::Path;

use common::{files, random_scene};
use objsplat::classifier::Classifier;
use objsplat::rgb::RgbImage;
use objsplat::sceneio::*;
use objsplat::synth::{self, SynthSpec};
use objsplat::Error;

fn ckpt(seed: u64, n: usize, deg: usize, classes: usize) -> Checkpoint {
    Checkpoint {
        gaussians: random_scene(seed, n, deg),
        classifier: Classifier::seeded(classes, seed),
        meta: CheckpointMeta {
            iterations: 1234,
            seed,
            config_hash: 0xdead_beef,
        },
    }
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    for (seed, deg) in [(0, 0), (1, 1), (2, 2), (3, 3)] {
        let c = ckpt(seed, 17, deg, 4);
        let path = dir.path().join(format!("c{seed}.sspl"));
        save_checkpoint(&path, &c).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, c);
        let again = dir.path().join("again.sspl");
        save_checkpoint(&again, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }
}

#[test]
fn checkpoint_size_matches_layout() {
    let c = ckpt(5, 10, 3, 4);
    let bytes = encode_checkpoint(&c).unwrap();
    assert_eq!(bytes.len(), checkpoint_len(10, 3, 4));
    // payload floats: position, rotation, scale, opacity, 48 SH, 16 features
    let per_gaussian = (3 + 4 + 3 + 1 + 48 + 16) * 4;
    let classifier = (4 * 16 + 4) * 4;
    let framing = 4 + 4 + 8 + 4 + 4 + 8 * 8 + 3 * 8;
    assert_eq!(bytes.len(), 10 * per_gaussian + classifier + framing);
}

#[test]
fn checkpoint_rejects_corruption() {
    let bytes = encode_checkpoint(&ckpt(6, 5, 1, 3)).unwrap();

    let mut bad = bytes.clone();
    bad[..4].copy_from_slice(b"PLY\n");
    let e = decode_checkpoint(&bad).unwrap_err().to_string();
    assert!(e.contains("not a checkpoint"), "{e}");

    let mut newer = bytes.clone();
    newer[4..8].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    let e = decode_checkpoint(&newer).unwrap_err().to_string();
    assert!(e.contains("version"), "{e}");

    let short = &bytes[..bytes.len() - 7];
    let e = decode_checkpoint(short).unwrap_err().to_string();
    assert!(
        e.contains(&format!("truncated: expected {} bytes, found {}", bytes.len(), short.len())),
        "{e}"
    );

    let mut long = bytes.clone();
    long.push(0);
    assert!(decode_checkpoint(&long).unwrap_err().to_string().contains("trailing"));
}

#[test]
fn load_checkpoint_error_names_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("junk.sspl");
    std::fs::write(&p, b"hello").unwrap();
    let e = load_checkpoint(&p).unwrap_err().to_string();
    assert!(e.contains("junk.sspl"), "{e}");
}

#[test]
fn mask_round_trip_and_widening() {
    let dir = tempfile::tempdir().unwrap();
    let ids: Vec<u16> = (0..16 * 8).map(|i| (i % 4) as u16).collect();
    let p = dir.path().join("m.png");
    save_mask(&p, 16, 8, &ids).unwrap();
    assert_eq!(load_mask(&p).unwrap(), (16, 8, ids.clone()));

    let big: Vec<u16> = vec![0, 300, 65535, 7];
    save_mask(&p, 2, 2, &big).unwrap();
    assert_eq!(load_mask(&p).unwrap().2, big);

    let p8 = dir.path().join("m8.png");
    let raw: Vec<u8> = vec![0, 1, 2, 3, 250, 5];
    image::save_buffer(&p8, &raw, 3, 2, image::ColorType::L8).unwrap();
    assert_eq!(load_mask(&p8).unwrap(), (3, 2, raw.iter().map(|&v| v as u16).collect()));

    let rgb = dir.path().join("rgb.png");
    image::save_buffer(&rgb, &[0u8; 12], 2, 2, image::ColorType::Rgb8).unwrap();
    let e = load_mask(&rgb).unwrap_err().to_string();
    assert!(e.contains("single-channel, found 3 channels"), "{e}");
}

#[test]
fn image_quantization() {
    assert_eq!(quantize(-0.5), 0);
    assert_eq!(quantize(0.0), 0);
    assert_eq!(quantize(1.0), 255);
    assert_eq!(quantize(7.0), 255);
    assert_eq!(quantize(0.5), 128);
    assert_eq!(quantize(100.0 / 255.0), 100);

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("i.png");
    let mut img = RgbImage::new(4, 3);
    for (i, v) in img.data.iter_mut().enumerate() {
        *v = i as f32 / 35.0;
    }
    save_image(&p, &img).unwrap();
    let back = load_image(&p).unwrap();
    assert_eq!((back.width, back.height), (4, 3));
    for (a, b) in img.data.iter().zip(&back.data) {
        assert_eq!(*b, quantize(*a) as f32 / 255.0);
    }
    // a quantized image survives another round trip exactly
    save_image(&p, &back).unwrap();
    assert_eq!(load_image(&p).unwrap(), back);
}

const ASCII_PLY: &str = "ply\nformat ascii 1.0\ncomment three points\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n0 0 0 255 0 0\n1.5 -2 3 0 255 0\n0.25 0.5 0.75 0 0 51\n";

#[test]
fn ply_ascii_three_points() {
    let cloud = parse_ply(Path::new("t.ply"), ASCII_PLY.as_bytes()).unwrap();
    assert_eq!(cloud.positions, vec![[0.0, 0.0, 0.0], [1.5, -2.0, 3.0], [0.25, 0.5, 0.75]]);
    assert_eq!(
        cloud.colors.unwrap(),
        vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.2]]
    );
}

#[test]
fn ply_binary_matches_ascii() {
    let cloud = parse_ply(Path::new("t.ply"), ASCII_PLY.as_bytes()).unwrap();
    let bin = encode_ply(&cloud, PlyFormat::BinaryLittleEndian).unwrap();
    let asc = encode_ply(&cloud, PlyFormat::Ascii).unwrap();
    let a = parse_ply(Path::new("a.ply"), &asc).unwrap();
    let b = parse_ply(Path::new("b.ply"), &bin).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, cloud);
}

#[test]
fn ply_with_extra_properties_and_faces() {
    let text = "ply\nformat ascii 1.0\nelement vertex 2\nproperty double x\nproperty double y\nproperty double z\nproperty float nx\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n1 2 3 9\n4 5 6 9\n3 0 1 1\n";
    let cloud = parse_ply(Path::new("f.ply"), text.as_bytes()).unwrap();
    assert_eq!(cloud.positions, vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
    assert!(cloud.colors.is_none());

    let g = synth::init_from_point_cloud(&cloud, 1, 0).unwrap();
    assert!(g.sh_coeffs.iter().all(|&v| v == 0.0));
}

#[test]
fn ply_errors_carry_line_numbers() {
    let text = "ply\nformat ascii 1.0\nelement vertex three\nend_header\n";
    match parse_ply(Path::new("bad.ply"), text.as_bytes()) {
        Err(Error::Ply { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
    let body = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n4 five 6\n";
    let e = parse_ply(Path::new("bad.ply"), body.as_bytes()).unwrap_err();
    match &e {
        Error::Ply { line, .. } => assert_eq!(*line, 9),
        other => panic!("{other:?}"),
    }
    assert!(e.to_string().starts_with("bad.ply:9:"), "{e}");
}

fn small_spec() -> SynthSpec {
    SynthSpec {
        cameras: 6,
        width: 32,
        height: 32,
        ..SynthSpec::default()
    }
}

#[test]
fn synth_directory_loads_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec();
    let scene = synth::generate(&spec, dir.path()).unwrap();
    let data = load_scene(dir.path()).unwrap();
    assert!(data.warnings.is_empty(), "{:?}", data.warnings);
    assert_eq!(data.frames.len(), 6);
    assert!(data.has_masks());
    assert_eq!(data.points.as_ref().unwrap().len(), scene.gaussians.len());
    assert_eq!(data.style_images.len(), 3);
    assert_eq!(data.cameras(), scene.cameras);
    let views = load_views(&data).unwrap();
    assert_eq!(views.len(), 6);
    assert!(views.iter().all(|v| v.mask.is_some()));
}

#[test]
fn scene_directory_round_trip_is_bitwise() {
    let src = tempfile::tempdir().unwrap();
    synth::generate(&small_spec(), src.path()).unwrap();
    let data = load_scene(src.path()).unwrap();
    let views = load_views(&data).unwrap();

    let dst = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dst.path().join("images")).unwrap();
    std::fs::create_dir_all(dst.path().join("masks")).unwrap();
    let names: Vec<String> = data.frames.iter().map(|f| f.name.clone()).collect();
    save_cameras(
        dst.path().join("cameras.json"),
        &CamerasFile::from_cameras(&names, &data.cameras()).unwrap(),
    )
    .unwrap();
    for v in &views {
        save_image(dst.path().join("images").join(format!("{}.png", v.name)), &v.image).unwrap();
        let m = v.mask.as_ref().unwrap();
        save_mask(
            dst.path().join("masks").join(format!("{}.png", v.name)),
            v.image.width,
            v.image.height,
            m,
        )
        .unwrap();
    }
    for sub in ["cameras.json", "images", "masks"] {
        for (a, b) in files(&src.path().join(sub)).iter().zip(files(&dst.path().join(sub))) {
            assert_eq!(a.0, b.0);
            assert!(a.1 == b.1, "{} differs", a.0);
        }
    }
}

#[test]
fn wrong_mask_size_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    synth::generate(&SynthSpec { cameras: 6, ..SynthSpec::default() }, dir.path()).unwrap();
    save_mask(dir.path().join("masks/frame_0004.png"), 32, 32, &vec![0; 32 * 32]).unwrap();
    let e = load_scene(dir.path()).unwrap_err().to_string();
    assert_eq!(e, "frame_0004: mask 32×32 vs image 64×64");
}

#[test]
fn missing_pieces_and_warnings() {
    let dir = tempfile::tempdir().unwrap();
    let e = load_scene(dir.path().join("nope")).unwrap_err().to_string();
    assert!(e.contains("not found"), "{e}");

    synth::generate(&small_spec(), dir.path()).unwrap();
    std::fs::remove_file(dir.path().join("masks/frame_0002.png")).unwrap();
    std::fs::write(dir.path().join("images/extra.png"), std::fs::read(dir.path().join("images/frame_0000.png")).unwrap()).unwrap();
    let data = load_scene(dir.path()).unwrap();
    assert_eq!(data.warnings.len(), 2, "{:?}", data.warnings);
    assert!(data.frames[2].mask_path.is_none());

    std::fs::remove_file(dir.path().join("cameras.json")).unwrap();
    let e = load_scene(dir.path()).unwrap_err().to_string();
    assert!(e.contains("missing cameras.json"), "{e}");
}

#[test]
fn non_orthonormal_pose_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    synth::generate(&small_spec(), dir.path()).unwrap();
    let path = dir.path().join("cameras.json");
    let mut cams = load_cameras(&path).unwrap();
    cams.frames[1].world_to_camera[0] *= 1.1;
    save_cameras(&path, &cams).unwrap();
    let e = load_scene(dir.path()).unwrap_err().to_string();
    assert!(e.starts_with("frame_0001: world_to_camera rotation is not orthonormal"), "{e}");
}

#[test]
fn out_of_range_mask_ids_rejected() {
    let dir = tempfile::tempdir().unwrap();
    synth::generate(&small_spec(), dir.path()).unwrap();
    let mut ids = vec![0u16; 32 * 32];
    ids[5] = 300;
    ids[6] = u16::MAX;
    save_mask(dir.path().join("masks/frame_0003.png"), 32, 32, &ids).unwrap();
    let data = load_scene(dir.path()).unwrap();
    let e = load_views(&data).unwrap_err().to_string();
    assert!(e.contains("frame_0003") && e.contains("300"), "{e}");
}
