use std::path::Path;
use std::process::{Command, Output};

use objsplat::sceneio::{load_checkpoint, load_image};
use objsplat::synth::{self, GROUND_TRUTH_FILE};

fn objsplat(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_objsplat"))
        .args(args)
        .current_dir(cwd)
        .env("OBJSPLAT_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    o
}

fn synth_scene(dir: &Path) {
    ok(objsplat(&["synth", "--out", "scene", "--seed", "3", "--threads", "1"], dir));
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
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

#[test]
fn synth_is_loadable_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let o = ok(objsplat(&["synth", "--out", "a", "--seed", "5"], dir.path()));
    assert!(stderr(&o).contains("# resolved configuration"));
    ok(objsplat(&["synth", "--out", "b", "--seed", "5"], dir.path()));
    let scene = objsplat::sceneio::load_scene(dir.path().join("a")).unwrap();
    assert!(scene.warnings.is_empty());
    assert_eq!(tree(&dir.path().join("a")), tree(&dir.path().join("b")));

    let o = objsplat(&["synth", "--out", "c", "--objects", "0"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(!dir.path().join("c").exists());
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&objsplat(&["bogus"], dir.path())), 1);
    assert_eq!(code(&objsplat(&["train", "--scene", "s"], dir.path())), 1);
    assert_eq!(code(&objsplat(&["synth", "--out", "s", "--colour", "red"], dir.path())), 1);
    assert_eq!(code(&objsplat(&["train", "--scene", "s", "--out", "m", "--iters", "0"], dir.path())), 1);
    assert_eq!(code(&objsplat(&["synth", "--out", "s", "--threads", "0"], dir.path())), 1);
    assert_eq!(code(&objsplat(&["--help"], dir.path())), 0);
}

#[test]
fn help_documents_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let help = |cmd: &str| String::from_utf8_lossy(&ok(objsplat(&[cmd, "--help"], dir.path())).stdout).into_owned();
    let train = help("train");
    for d in ["[default: 30000]", "[default: 1.0]", "[default: 16]", "[default: 1000]"] {
        assert!(train.contains(d), "train help lacks {d}");
    }
    let stylize = help("stylize");
    for d in ["[default: 11,13,15]", "[default: 0.05]", "[default: 800]", "[default: 0.25]", "[default: 0.6]"] {
        assert!(stylize.contains(d), "stylize help lacks {d}");
    }
    assert!(help("select").contains("[default: 20]"));
    assert!(help("render").contains("--orbit"));
    assert!(help("synth").contains("[default: 3]"));
}

#[test]
fn missing_scene_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = objsplat(&["train", "--scene", "nope", "--out", "m.sspl", "--iters", "5"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("nope: scene directory not found"));
}

#[test]
fn train_writes_checkpoint_and_log() {
    let dir = tempfile::tempdir().unwrap();
    synth_scene(dir.path());
    let gt = format!("scene/{GROUND_TRUTH_FILE}");
    ok(objsplat(
        &["train", "--scene", "scene", "--out", "m.sspl", "--iters", "20", "--init", &gt, "--snapshot-every", "10", "--threads", "1"],
        dir.path(),
    ));
    let ck = load_checkpoint(dir.path().join("m.sspl")).unwrap();
    assert_eq!(ck.meta.iterations, 20);
    assert_eq!(ck.meta.seed, 0);
    let log = std::fs::read_to_string(dir.path().join("m.train.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 20);
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in ["iteration", "photometric", "cross_entropy", "spatial", "total", "wall_seconds"] {
        assert!(first.get(key).is_some(), "{key}");
    }
    assert!(dir.path().join("m.iter10.sspl").is_file());
    assert!(dir.path().join("m.iter20.sspl").is_file());

    // a second run with the same flags reproduces the checkpoint
    ok(objsplat(
        &["train", "--scene", "scene", "--out", "n.sspl", "--iters", "20", "--init", &gt, "--snapshot-every", "10", "--threads", "1"],
        dir.path(),
    ));
    assert_eq!(std::fs::read(dir.path().join("m.sspl")).unwrap(), std::fs::read(dir.path().join("n.sspl")).unwrap());
}

#[test]
fn train_from_point_cloud() {
    let dir = tempfile::tempdir().unwrap();
    synth_scene(dir.path());
    ok(objsplat(
        &["train", "--scene", "scene", "--out", "m.sspl", "--iters", "5", "--sh-degree", "1"],
        dir.path(),
    ));
    let ck = load_checkpoint(dir.path().join("m.sspl")).unwrap();
    assert_eq!(ck.gaussians.sh_degree, 1);
    assert_eq!(ck.classifier.num_classes, 4);
}

#[test]
fn config_file_sits_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    synth_scene(dir.path());
    std::fs::write(dir.path().join("run.toml"), "seed = 9\n[train]\niterations = 4\nlambda_3d = 0.0\n").unwrap();
    let gt = format!("scene/{GROUND_TRUTH_FILE}");
    let o = ok(objsplat(
        &["train", "--config", "run.toml", "--scene", "scene", "--out", "m.sspl", "--init", &gt],
        dir.path(),
    ));
    let resolved = stderr(&o);
    assert!(resolved.contains("seed = 9"), "{resolved}");
    assert!(resolved.contains("iterations = 4"), "{resolved}");
    assert_eq!(std::fs::read_to_string(dir.path().join("m.train.jsonl")).unwrap().lines().count(), 4);

    ok(objsplat(
        &["train", "--config", "run.toml", "--scene", "scene", "--out", "m.sspl", "--init", &gt, "--iters", "2", "--seed", "1"],
        dir.path(),
    ));
    assert_eq!(std::fs::read_to_string(dir.path().join("m.train.jsonl")).unwrap().lines().count(), 2);
    assert_eq!(load_checkpoint(dir.path().join("m.sspl")).unwrap().meta.seed, 1);

    std::fs::write(dir.path().join("bad.toml"), "[train]\niters = 4\n").unwrap();
    let o = objsplat(&["train", "--config", "bad.toml", "--scene", "scene", "--out", "m.sspl"], dir.path());
    assert_eq!(code(&o), 1);
}

#[test]
fn select_report_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    synth_scene(dir.path());
    let gt = format!("scene/{GROUND_TRUTH_FILE}");
    let o = ok(objsplat(
        &["select", "--ckpt", &gt, "--object-ids", "1,3", "--out", "sel.json"],
        dir.path(),
    ));
    let text = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(text.contains("object ids: 1,3"), "{text}");
    assert!(text.contains("removed as outliers:"), "{text}");
    assert!(text.contains("  id 1: ") && text.contains("  id 3: "), "{text}");
    let sel: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("sel.json")).unwrap()).unwrap();
    let n = sel["indices"].as_array().unwrap().len();
    assert!(text.contains(&format!("selected: {n}")));

    let o = objsplat(&["select", "--ckpt", &gt, "--object-ids", "7"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("unknown object ID 7"));
}

#[test]
fn strict_threshold_is_precise_and_default_keeps_members() {
    let dir = tempfile::tempdir().unwrap();
    synth_scene(dir.path());
    let gt = format!("scene/{GROUND_TRUTH_FILE}");
    ok(objsplat(&["train", "--scene", "scene", "--out", "m.sspl", "--iters", "300", "--init", &gt], dir.path()));
    let labels = synth::load_labels(dir.path().join("scene").join(synth::LABELS_FILE)).unwrap();
    for id in 1..=3u16 {
        let members = labels.labels.iter().filter(|&&l| l == id).count();
        let mut picked = Vec::new();
        for threshold in ["0.99", "0.6"] {
            ok(objsplat(
                &["select", "--ckpt", "m.sspl", "--object-ids", &id.to_string(), "--threshold", threshold, "--out", "sel.json"],
                dir.path(),
            ));
            let sel: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("sel.json")).unwrap()).unwrap();
            let got: Vec<usize> = sel["indices"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap() as usize).collect();
            picked.push(got);
        }
        let (strict, loose) = (&picked[0], &picked[1]);
        assert!(!strict.is_empty(), "object {id}: nothing above 0.99");
        assert!(strict.iter().all(|&i| labels.labels[i] == id), "object {id}: strict selection leaks");
        let hits = loose.iter().filter(|&&i| labels.labels[i] == id).count();
        assert!(hits * 10 >= members * 9, "object {id}: {hits}/{members} at 0.6");
    }
}

fn stylize_args<'a>(out: &'a str, ckpt: &'a str, ids: &'a str) -> Vec<&'a str> {
    vec![
        "stylize", "--ckpt", ckpt, "--scene", "scene", "--out", out, "--object-ids", ids, "--style", "scene/style/stripes.png",
        "--layers", "1,3", "--iters", "3", "--views-frac", "0.1", "--render-scope", "selection", "--threads", "1",
    ]
}

#[test]
fn stylize_touches_only_selected_sh_and_commutes() {
    let dir = tempfile::tempdir().unwrap();
    synth_scene(dir.path());
    let gt = format!("scene/{GROUND_TRUTH_FILE}");
    ok(objsplat(&stylize_args("a.sspl", &gt, "1"), dir.path()));
    ok(objsplat(&stylize_args("ab.sspl", "a.sspl", "3"), dir.path()));
    ok(objsplat(&stylize_args("b.sspl", &gt, "3"), dir.path()));
    ok(objsplat(&stylize_args("ba.sspl", "b.sspl", "1"), dir.path()));
    let ab = std::fs::read(dir.path().join("ab.sspl")).unwrap();
    assert_eq!(ab, std::fs::read(dir.path().join("ba.sspl")).unwrap());

    let before = load_checkpoint(dir.path().join(&gt)).unwrap();
    let after = load_checkpoint(dir.path().join("a.sspl")).unwrap();
    assert_eq!(before.classifier, after.classifier);
    assert_eq!(before.meta, after.meta);
    let (g0, g1) = (&before.gaussians, &after.gaussians);
    assert_eq!(g0.positions, g1.positions);
    assert_eq!(g0.rotations, g1.rotations);
    assert_eq!(g0.log_scales, g1.log_scales);
    assert_eq!(g0.opacity_logits, g1.opacity_logits);
    assert_eq!(g0.id_features, g1.id_features);
    let k = g0.coeffs_per_gaussian();
    let labels = synth::load_labels(dir.path().join("scene").join(synth::LABELS_FILE)).unwrap();
    let mut changed = 0;
    for i in 0..g0.len() {
        let same = g0.sh_coeffs[i * k..(i + 1) * k] == g1.sh_coeffs[i * k..(i + 1) * k];
        if labels.labels[i] != 1 {
            assert!(same, "Gaussian {i} outside the selection changed");
        } else if !same {
            changed += 1;
        }
    }
    assert!(changed > 0);
    let log = std::fs::read_to_string(dir.path().join("a.style.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
}

#[test]
fn stylize_missing_style_image() {
    let dir = tempfile::tempdir().unwrap();
    synth_scene(dir.path());
    let gt = format!("scene/{GROUND_TRUTH_FILE}");
    let mut args = stylize_args("a.sspl", &gt, "1");
    let i = args.iter().position(|a| *a == "scene/style/stripes.png").unwrap();
    args[i] = "nope.png";
    let o = objsplat(&args, dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("nope.png"));
    assert!(!dir.path().join("a.sspl").exists());
}

#[test]
fn render_modes() {
    let dir = tempfile::tempdir().unwrap();
    synth_scene(dir.path());
    let gt = format!("scene/{GROUND_TRUTH_FILE}");
    ok(objsplat(&["render", "--ckpt", &gt, "--scene", "scene", "--out", "orbit", "--orbit", "12"], dir.path()));
    let frames = tree(&dir.path().join("orbit"));
    assert_eq!(frames.len(), 12);
    assert_eq!(frames[0].0, "orbit_0000.png");

    ok(objsplat(&["render", "--ckpt", &gt, "--scene", "scene", "--out", "one", "--camera-index", "4"], dir.path()));
    let got = load_image(dir.path().join("one/frame_0004.png")).unwrap();
    let want = load_image(dir.path().join("scene/images/frame_0004.png")).unwrap();
    assert_eq!(got, want);

    let o = objsplat(&["render", "--ckpt", &gt, "--scene", "scene", "--out", "x", "--camera-index", "99"], dir.path());
    assert_eq!(code(&o), 1);
    let o = objsplat(&["render", "--ckpt", &gt, "--scene", "scene", "--out", "x", "--camera-index", "1", "--orbit", "3"], dir.path());
    assert_eq!(code(&o), 1);

    let o = objsplat(&["render", "--ckpt", "scene/labels.json", "--scene", "scene", "--out", "x"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("expected magic \"SSPL\" (version 1)"), "{}", stderr(&o));
}
