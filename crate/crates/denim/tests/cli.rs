//! End-to-end checks of the command-line surface and its exit codes.

use std::path::Path;
use std::process::Command;

fn denim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_denim"))
}

fn write_ppm(path: &Path, w: usize, h: usize, seed: u64) {
    let mut rng = denim::rng::SplitMix64::new(seed);
    let img = denim::CanonicalImage::new(
        h,
        w,
        (0..h * w * 3).map(|_| (rng.next_index(256)) as f64 / 255.0).collect(),
    )
    .unwrap();
    denim::ppm::save_image(path, &img).unwrap();
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = denim().arg("--no-such-flag").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_params_file_is_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = denim()
        .args(["inspect", "--params"])
        .arg(dir.path().join("nope.dnim"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn train_apply_eval_inspect_flow() {
    let dir = tempfile::tempdir().unwrap();
    let params = dir.path().join("model.dnim");

    // Tiny synthetic training run.
    let out = denim()
        .args(["train", "--synthetic", "3", "--size", "8", "--settings", "td"])
        .args(["--steps", "5", "--k", "4", "--low-res-side", "4", "--batch-size", "2"])
        .arg("--out")
        .arg(&params)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(params.exists());

    // Inspect reports the projection shapes.
    let out = denim().arg("inspect").arg("--params").arg(&params).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("Pc 6x4"), "{}", text);
    assert!(text.contains("settings N = 2"), "{}", text);

    // Apply to a pair of per-setting images.
    let in_t = dir.path().join("in_t.ppm");
    let in_d = dir.path().join("in_d.ppm");
    write_ppm(&in_t, 8, 8, 1);
    write_ppm(&in_d, 8, 8, 2);
    let pred_dir = dir.path().join("pred");
    std::fs::create_dir(&pred_dir).unwrap();
    let awb = pred_dir.join("scene.ppm");
    let out = denim()
        .arg("apply")
        .arg("--params")
        .arg(&params)
        .arg("--inputs")
        .arg(&in_t)
        .arg(&in_d)
        .args(["--settings", "td", "--low-res-side", "4", "--threads", "1"])
        .arg("--awb")
        .arg(&awb)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(awb.exists());

    // Evaluating predictions against themselves gives all-zero metrics.
    let out = denim()
        .arg("eval")
        .arg("--pred-dir")
        .arg(&pred_dir)
        .arg("--gt-dir")
        .arg(&pred_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = String::from_utf8_lossy(&out.stdout);
    let row = csv.lines().find(|l| l.starts_with("scene.ppm")).unwrap();
    assert_eq!(row, "scene.ppm,0.000000,0.000000,0.000000", "{}", csv);
}

#[test]
fn apply_with_precompose_matches_naive_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let params = dir.path().join("model.dnim");
    let out = denim()
        .args(["train", "--synthetic", "2", "--size", "8", "--settings", "d"])
        .args(["--steps", "2", "--k", "4", "--low-res-side", "4", "--freeze-encoder"])
        .arg("--out")
        .arg(&params)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let input = dir.path().join("in.ppm");
    write_ppm(&input, 9, 7, 3);
    let run = |precompose: bool, name: &str| {
        let path = dir.path().join(name);
        let mut cmd = denim();
        cmd.arg("apply")
            .arg("--params")
            .arg(&params)
            .arg("--inputs")
            .arg(&input)
            .args(["--settings", "d", "--low-res-side", "4", "--threads", "2"])
            .arg("--awb")
            .arg(&path);
        if precompose {
            cmd.arg("--precompose");
        }
        let out = cmd.output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(path).unwrap()
    };
    // After 8-bit quantization the two paths agree byte-for-byte.
    assert_eq!(run(false, "naive.ppm"), run(true, "fast.ppm"));
}

#[test]
fn bench_reports_closed_form_mul_counts() {
    let out = denim()
        .args(["bench", "--k", "32", "--n-settings", "5"])
        .args(["--resolutions", "64x64", "--warmups", "0", "--runs", "1", "--threads", "1"])
        .args(["--low-res-side", "16"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    // 2624 and 45 multiplies per pixel over 64*64 pixels.
    assert!(text.contains(&format!(",{},", 2624u64 * 64 * 64)), "{}", text);
    assert!(text.contains(&format!(",{},", 45u64 * 64 * 64)), "{}", text);
}
