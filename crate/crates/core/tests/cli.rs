use codeinr::cli::{run, ConfigArgs, EXIT_DATA, EXIT_DIVERGED, EXIT_OK, EXIT_USAGE};
use codeinr::eval::render_code;
use codeinr::io::{encode_png, load_checkpoint, write_image, write_manifest, Manifest, ManifestEntry};
use codeinr::Image;
use std::path::{Path, PathBuf};

fn codeinr(args: &[&str]) -> i32 {
    run(std::iter::once("codeinr").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Eight small distinct images and their manifest.
fn tiny_dataset(dir: &Path) -> PathBuf {
    let mut images = Vec::new();
    for k in 0..8 {
        let name = format!("img_{k}.png");
        let img = Image::from_fn(12, 12, |r, c| [k as f32 / 8.0, r as f32 / 12.0, c as f32 / 12.0]);
        write_image(dir.join(&name), &img).unwrap();
        images.push(ManifestEntry { path: name, view_tag: format!("view:{k}") });
    }
    let path = dir.join("manifest.json");
    write_manifest(&path, &Manifest { version: 1, width: 12, height: 12, images }).unwrap();
    path
}

const TINY: &[&str] = &["--set", "hidden_dim=8", "--set", "depth=2", "--code-len", "4", "--set", "batch_pixels=16"];

fn fit(data: &Path, out: &Path, extra: &[&str]) -> i32 {
    let mut args = vec!["fit", "--data", p(data), "--out", p(out), "--iterations", "6"];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    codeinr(&args)
}

#[test]
fn config_precedence_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.conf");
    std::fs::write(&file, "# comment\niterations = 7\n").unwrap();
    let empty = dir.path().join("empty.conf");
    std::fs::write(&empty, "").unwrap();
    // (config file, flag) -> expected iterations
    let cases = [
        (None, None, 3000),
        (Some(&empty), None, 3000),
        (Some(&file), None, 7),
        (None, Some(9), 9),
        (Some(&empty), Some(9), 9),
        (Some(&file), Some(9), 9),
    ];
    for (config, flag, expected) in cases {
        let args = ConfigArgs { config: config.cloned(), iterations: flag, ..Default::default() };
        assert_eq!(args.resolve().unwrap().iterations, expected, "{config:?} {flag:?}");
    }
    // --set is a flag too and beats the file.
    let args = ConfigArgs { config: Some(file), overrides: vec!["iterations=11".into()], ..Default::default() };
    assert_eq!(args.resolve().unwrap().iterations, 11);
}

#[test]
fn fit_is_deterministic_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path());
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert_eq!(fit(&data, &a, &["--checkpoint-every", "3"]), EXIT_OK);
    assert_eq!(fit(&data, &b, &["--checkpoint-every", "3"]), EXIT_OK);
    let metrics = |d: &Path| std::fs::read(d.join("metrics.csv")).unwrap();
    let ckpt = |d: &Path| std::fs::read(d.join("checkpoint.bin")).unwrap();
    assert!(metrics(&a) == metrics(&b));
    assert!(ckpt(&a) == ckpt(&b));

    std::fs::create_dir(&c).unwrap();
    std::fs::copy(a.join("metrics.csv"), c.join("metrics.csv")).unwrap();
    let half = a.join("checkpoint_000003.bin");
    assert_eq!(fit(&data, &c, &["--resume", p(&half), "--checkpoint-every", "3"]), EXIT_OK);
    assert!(metrics(&c) == metrics(&a));
    assert!(ckpt(&c) == ckpt(&a));

    // A different config cannot resume that checkpoint.
    assert_eq!(fit(&data, &c, &["--resume", p(&half), "--seed", "4"]), EXIT_DATA);
}

#[test]
fn render_at_zero_is_the_first_code() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path());
    let run_dir = dir.path().join("run");
    assert_eq!(fit(&data, &run_dir, &[]), EXIT_OK);
    let ckpt_path = run_dir.join("checkpoint.bin");
    let out = dir.path().join("t0.png");
    let args = ["render", "--ckpt", p(&ckpt_path), "--t", "0", "--i", "3", "--j", "7", "--height", "12", "--width", "12", "--out", p(&out)];
    assert_eq!(codeinr(&args), EXIT_OK);
    let ckpt = load_checkpoint(&ckpt_path).unwrap();
    let direct = render_code(&ckpt, ckpt.codes.code(3), 12, 12).unwrap();
    assert!(std::fs::read(&out).unwrap() == encode_png(&direct));

    let sweep = dir.path().join("s.png");
    let args = ["render", "--ckpt", p(&ckpt_path), "--i", "0", "--j", "1", "--sweep", "4", "--height", "12", "--width", "12", "--out", p(&sweep)];
    assert_eq!(codeinr(&args), EXIT_OK);
    for n in 0..4 {
        assert!(dir.path().join(format!("s_{n:03}.png")).exists());
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path());
    assert_eq!(codeinr(&["fit", "--no-such-flag"]), EXIT_USAGE);
    assert_eq!(codeinr(&["--help"]), EXIT_OK);
    assert_eq!(fit(&data, &dir.path().join("x"), &["--set", "bogus=1"]), EXIT_USAGE);
    let missing = dir.path().join("missing.json");
    assert_eq!(codeinr(&["fit", "--data", p(&missing), "--out", p(&dir.path().join("y"))]), EXIT_DATA);
    let out = dir.path().join("z");
    assert_eq!(fit(&data, &out, &["--lr-start", "1e38", "--lr-end", "1e38"]), EXIT_DIVERGED);
    // Metrics up to the failure are kept.
    assert!(std::fs::read_to_string(out.join("metrics.csv")).unwrap().starts_with("iter,"));
}

#[test]
fn gen_eval_and_finetune() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    assert_eq!(codeinr(&["gen", "--scene", "two_layer_parallax", "--out", p(&scene)]), EXIT_OK);
    assert_eq!(codeinr(&["gen", "--scene", "no_such_scene", "--out", p(&scene)]), EXIT_USAGE);
    let run_dir = dir.path().join("run");
    assert_eq!(fit(&scene.join("manifest.json"), &run_dir, &[]), EXIT_OK);
    let ckpt = run_dir.join("checkpoint.bin");
    let report = dir.path().join("report.csv");
    let heldout = scene.join("heldout.json");
    let args = ["eval", "--ckpt", p(&ckpt), "--heldout", p(&heldout), "--out", p(&report)];
    assert_eq!(codeinr(&args), EXIT_OK);
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.starts_with("view_id,t,psnr_db,ssim\n"));
    assert_eq!(text.lines().count(), 1 + 12);

    let gt = scene.join("interp_001_002_050.png");
    let ft = dir.path().join("ft.csv");
    let args = ["finetune", "--ckpt", p(&ckpt), "--gt", p(&gt), "--i", "1", "--j", "2", "--steps", "3", "--out", p(&ft)];
    assert_eq!(codeinr(&args), EXIT_OK);
    assert_eq!(std::fs::read_to_string(&ft).unwrap().lines().count(), 3);
}

#[test]
fn ablations_write_one_row_per_setting() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    assert_eq!(codeinr(&["gen", "--out", p(&scene)]), EXIT_OK);
    let (data, heldout) = (scene.join("manifest.json"), scene.join("heldout.json"));
    let out = dir.path().join("norm.csv");
    let mut args = vec!["ablate-norm", "--data", p(&data), "--heldout", p(&heldout), "--out", p(&out), "--iterations", "2"];
    args.extend_from_slice(TINY);
    assert_eq!(codeinr(&args), EXIT_OK);
    let text = std::fs::read_to_string(&out).unwrap();
    let labels: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(labels, ["none", "inf", "2", "1.5", "1"]);

    let out = dir.path().join("m.csv");
    let mut args = vec!["ablate-codelen", "--data", p(&data), "--heldout", p(&heldout), "--out", p(&out), "--iterations", "2", "--lengths", "2,3"];
    args.extend_from_slice(&TINY[..4]);
    args.extend_from_slice(&TINY[6..]);
    assert_eq!(codeinr(&args), EXIT_OK);
    assert!(std::fs::read_to_string(&out).unwrap().starts_with("code_len,"));
}
