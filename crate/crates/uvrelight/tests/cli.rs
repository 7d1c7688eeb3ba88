use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use uvrelight::codec::pfm;
use uvrelight::manifest::{Manifest, FILE};

const TINY: &str = r#"
seed = 3
[scene]
body = "sphere"
material_res = 16
env_height = 4
env_width = 8
[rig]
ring = 6
elevated = 2
train = 4
held_out = 2
width = 16
height = 16
[bake]
normal_res = 16
visibility_res = 8
[geometry]
rays_per_batch = 64
[decompose]
patch = 4
patches_per_step = 2
hidden = [8]
feature_res = 8
"#;

fn uvrelight(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uvrelight")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn error_line(out: &Output) -> serde_json::Value {
    let err = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "one error line, got {err:?}");
    serde_json::from_str(lines[0]).unwrap()
}

fn tiny_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.toml");
    std::fs::write(&p, TINY).unwrap();
    p
}

/// Every file below `dir` with its bytes, relative paths sorted.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut v: Vec<_> = uvrelight::manifest::files_under(dir)
        .unwrap()
        .into_iter()
        .chain([dir.join(FILE)])
        .map(|p| (p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn relight_without_checkpoint_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("nowhere");
    let out = uvrelight(&["relight", "--checkpoint", s(&ck), "--run", s(&dir.path().join("run"))]);
    assert_eq!(out.status.code(), Some(2));
    let e = error_line(&out);
    assert_eq!(e["code"], 2);
    let missing = ck.join("materials.ckpt");
    assert_eq!(e["path"], s(&missing));
    assert!(e["message"].as_str().unwrap().contains(s(&missing)));
}

#[test]
fn exit_codes_separate_input_and_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = uvrelight(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["code"], 2);

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[decompose]\nlr_materials = -1.0\n").unwrap();
    let out = uvrelight(&["gen-scene", "--config", s(&bad), "--out", s(&dir.path().join("d"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(error_line(&out)["message"].as_str().unwrap().contains("lr_materials"));

    std::fs::write(&bad, "[scene]\nbogus = 1\n").unwrap();
    let out = uvrelight(&["gen-scene", "--config", s(&bad), "--out", s(&dir.path().join("d"))]);
    assert_eq!(out.status.code(), Some(3));

    let out = uvrelight(&["metrics", "--pred", "/no/such.pfm", "--target", "/no/such.pfm", "--run", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["path"], "/no/such.pfm");
}

#[test]
fn gen_scene_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for d in [&a, &b] {
        ok(&uvrelight(&["gen-scene", "--config", s(&cfg), "--seed", "7", "--out", s(d)]));
    }
    ok(&uvrelight(&["gen-scene", "--config", s(&cfg), "--seed", "8", "--out", s(&c)]));
    let (sa, sb, sc) = (snapshot(&a), snapshot(&b), snapshot(&c));
    assert_eq!(sa, sb);
    assert_ne!(sa, sc);
    // cameras, animation, truth rasters, env maps and images are all there
    let names: Vec<String> = sa.iter().map(|(p, _)| p.to_string_lossy().replace('\\', "/")).collect();
    for want in [
        "animation.txt",
        "cameras/rig_00.txt",
        "cameras/heldout_00.txt",
        "env/train.pfm",
        "env/heldout.pfm",
        "truth/albedo.pfm",
        "truth/roughness.pfm",
        "truth/pose_00/normals.pfm",
        "truth/pose_00/visibility.vism",
        "images/train_00.pfm",
        "images/train_00.png",
        "views.json",
        "config.toml",
        "manifest.json",
    ] {
        assert!(names.iter().any(|n| n == want), "missing {want} in {names:?}");
    }
    let m = Manifest::read(&a.join(FILE)).unwrap();
    assert_eq!(m.seed, 7);
    assert_eq!(m.outputs.len(), names.len() - 1);
    assert!(m.verify(&a).is_empty());
}

#[test]
fn smoke_pipeline_writes_a_valid_render() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (data, run) = (dir.path().join("data"), dir.path().join("run"));
    let common = ["--config", s(&cfg), "--run", s(&run)];
    let with = |cmd: &str, extra: &[&str]| {
        let mut a = vec![cmd, "--dataset", s(&data)];
        a.extend(common);
        a.extend(extra);
        let out = uvrelight(&a);
        ok(&out);
    };
    ok(&uvrelight(&["gen-scene", "--config", s(&cfg), "--out", s(&data)]));
    with("train-geometry", &["--epochs", "5"]);
    with("bake-maps", &["--views", "8"]);
    with("decompose", &["--epochs", "5"]);
    with("relight", &[]);

    for step in ["train-geometry", "bake-maps", "decompose", "relight"] {
        let d = run.join(step);
        let m = Manifest::read(&d.join(FILE)).unwrap();
        assert_eq!(m.command, step);
        assert_eq!(m.seed, 3);
        assert_eq!(m.config_hash.len(), 64);
        assert!(!m.inputs.is_empty(), "{step} lists its inputs");
        assert!(m.verify(&d).is_empty(), "{step} outputs match the manifest");
        // every file in the folder is accounted for
        let listed = uvrelight::manifest::files_under(&d).unwrap().len();
        assert_eq!(m.outputs.len(), listed, "{step}");
    }
    let img = pfm::read(&run.join("relight/heldout_00.pfm")).unwrap();
    assert_eq!((img.height, img.width, img.channels), (16, 16, 3));
    assert!(img.data.iter().all(|v| v.is_finite() && *v >= 0.0));
    assert!(img.data.iter().any(|v| *v > 0.0));

    let metrics = |pred: &Path, target: &Path| {
        let out = uvrelight(&["metrics", "--pred", s(pred), "--target", s(target), "--run", s(&run)]);
        ok(&out);
        let stdout = String::from_utf8(out.stdout).unwrap();
        serde_json::from_str::<serde_json::Value>(stdout.lines().next().unwrap()).unwrap()
    };
    let render = run.join("relight/heldout_00.pfm");
    let v = metrics(&render, &render);
    assert_eq!(v["psnr"], 99.0);
    assert!((v["ssim"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    // five epochs give a rough but finite match to the held-out reference
    let v = metrics(&render, &data.join("images/heldout_00.pfm"));
    let p = v["psnr"].as_f64().unwrap();
    assert!(p.is_finite() && p > 5.0 && p < 99.0, "psnr {p}");
    assert!(run.join("metrics/manifest.json").exists());
}
