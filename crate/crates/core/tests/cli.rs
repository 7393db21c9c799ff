mod common;

use std::path::Path;
use std::process::{Command, Output};

use epicolor::format;
use epicolor::imagekit::{load_image, save_image, ColorSpace, RasterImage};

use common::two_region_image;

fn epicolor(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_epicolor")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn train_defaults_give_half_size_epitome() {
    let dir = tempfile::tempdir().unwrap();
    let reference = dir.path().join("ref.png");
    let model = dir.path().join("m.eptm");
    save_image(&two_region_image(24), &reference).unwrap();
    let out = epicolor(&["train", "--ref", s(&reference), "--out", s(&model), "--iters", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines: Vec<String> = stdout(&out).lines().map(String::from).collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("iter 1 loglik "));
    assert!(lines[1].starts_with("iter 2 loglik "));

    let m = format::load(&model).unwrap();
    assert_eq!((m.yiq.rows(), m.yiq.cols()), (12, 12));
    assert_eq!(m.patch_size, 12);
    assert_eq!(m.grid, 3);
    assert_eq!(m.lambda, 0.5);
    assert_eq!(m.dsift.dim(), 72);
}

#[test]
fn zero_iterations_and_colorize_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let reference = dir.path().join("ref.png");
    let model = dir.path().join("m.eptm");
    let gray = dir.path().join("gray.png");
    let result = dir.path().join("out.png");
    save_image(&two_region_image(20), &reference).unwrap();
    let out = epicolor(&[
        "train", "--ref", s(&reference), "--out", s(&model), "--iters", "0", "--patch-size", "8",
    ]);
    assert!(out.status.success());
    assert!(stdout(&out).is_empty());
    assert!(format::load(&model).is_ok());

    let g = RasterImage::from_fn(15, 11, ColorSpace::Y, 1, |r, c| vec![(r * 15 + c) as f64 / 165.0]).unwrap();
    save_image(&g, &gray).unwrap();
    let out = epicolor(&["colorize", "--model", s(&model), "--target", s(&gray), "--out", s(&result)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let img = load_image(&result).unwrap();
    assert_eq!((img.width(), img.height(), img.space()), (15, 11, ColorSpace::Rgb));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let reference = dir.path().join("ref.png");
    let model = dir.path().join("m.eptm");
    save_image(&two_region_image(16), &reference).unwrap();
    assert!(epicolor(&[
        "train", "--ref", s(&reference), "--out", s(&model), "--iters", "1", "--patch-size", "8",
    ])
    .status
    .success());

    // target smaller than the patch size
    let small = dir.path().join("small.png");
    save_image(&RasterImage::filled(5, 5, ColorSpace::Y, &[0.5]).unwrap(), &small).unwrap();
    let o = epicolor(&["colorize", "--model", s(&model), "--target", s(&small), "--out", s(&dir.path().join("x.png"))]);
    assert_eq!(o.status.code(), Some(1));

    // bad magic
    let mut bytes = std::fs::read(&model).unwrap();
    bytes[0] = b'X';
    let corrupt = dir.path().join("bad.eptm");
    std::fs::write(&corrupt, &bytes).unwrap();
    let o = epicolor(&["colorize", "--model", s(&corrupt), "--target", s(&reference), "--out", s(&dir.path().join("y.png"))]);
    assert_eq!(o.status.code(), Some(3));

    // truncated
    std::fs::write(&corrupt, &std::fs::read(&model).unwrap()[..100]).unwrap();
    let o = epicolor(&["colorize", "--model", s(&corrupt), "--target", s(&reference), "--out", s(&dir.path().join("y.png"))]);
    assert_eq!(o.status.code(), Some(3));

    // missing files
    let missing = dir.path().join("nope.png");
    let o = epicolor(&["train", "--ref", s(&missing), "--out", s(&model)]);
    assert_eq!(o.status.code(), Some(2));
    let o = epicolor(&["colorize", "--model", s(&dir.path().join("nope.eptm")), "--target", s(&reference), "--out", s(&missing)]);
    assert_eq!(o.status.code(), Some(2));

    // grayscale reference and bad parameters
    let o = epicolor(&["train", "--ref", s(&small), "--out", s(&model)]);
    assert_eq!(o.status.code(), Some(1));
    let o = epicolor(&["train", "--ref", s(&reference), "--out", s(&model), "--lambda", "1.5"]);
    assert_eq!(o.status.code(), Some(1));
    let o = epicolor(&["train", "--ref", s(&reference), "--out", s(&model), "--patch-size", "4"]);
    assert_eq!(o.status.code(), Some(1));
    let o = epicolor(&["train", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn selftest_passes_and_catches_fault() {
    let o = epicolor(&["selftest"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for name in ["m_step_oracle", "patch_likelihood_oracle", "fast_path_equivalence", "posterior_normalization"] {
        assert!(text.contains(&format!("PASS {name}")), "{text}");
    }

    let o = epicolor(&["selftest", "--inject-fault"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL m_step_oracle"));
    assert!(String::from_utf8_lossy(&o.stderr).contains("m_step_oracle"));
}
