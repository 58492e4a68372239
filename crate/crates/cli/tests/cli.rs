use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fitv::data::{load_image, load_sequence, object_position, SynthConfig};
use tempfile::TempDir;

fn fitv(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fitv"))
        .args(args)
        .current_dir(cwd)
        .env("FITV_LOG", "error")
        .output()
        .expect("spawn fitv")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = fitv(args, cwd);
    assert!(
        out.status.success(),
        "fitv {args:?} failed\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn pngs(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    v.sort();
    v
}

fn bytes_of(dir: &Path) -> Vec<Vec<u8>> {
    pngs(dir).iter().map(|p| fs::read(p).unwrap()).collect()
}

#[test]
fn synth_defaults_and_manifest() {
    let t = TempDir::new().unwrap();
    let stdout = ok(&["synth", "--out", "seq"], t.path());
    assert!(stdout.starts_with("config {"), "configuration is printed first");
    assert!(stdout.contains("\"seed\":0"));
    let seq = load_sequence(&t.path().join("seq")).unwrap();
    assert_eq!(seq.len(), 7);
    assert_eq!((seq.height(), seq.width()), (64, 64));
    let manifest = fs::read_to_string(t.path().join("seq/manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 1);
    assert!(manifest.contains("\"id\":\"seq\""));

    // re-running replaces the entry instead of duplicating it
    ok(&["synth", "--out", "seq"], t.path());
    let manifest = fs::read_to_string(t.path().join("seq/manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 1);
}

#[test]
fn synth_is_deterministic_per_seed() {
    let t = TempDir::new().unwrap();
    ok(&["synth", "--out", "a", "--seed", "5"], t.path());
    ok(&["synth", "--out", "b", "--seed", "5"], t.path());
    ok(&["synth", "--out", "c", "--seed", "6"], t.path());
    assert_eq!(bytes_of(&t.path().join("a")), bytes_of(&t.path().join("b")));
    assert_ne!(bytes_of(&t.path().join("a")), bytes_of(&t.path().join("c")));
}

#[test]
fn fast_velocity_shifts_the_object() {
    let t = TempDir::new().unwrap();
    ok(
        &["synth", "--out", "fast", "--velocity", "8,0", "--frames", "5"],
        t.path(),
    );
    let config = SynthConfig {
        frames: 5,
        velocity: (8.0, 0.0),
        ..SynthConfig::default()
    };
    let p0 = object_position(&config, 0).unwrap();
    let p1 = object_position(&config, 1).unwrap();
    assert_eq!((p1.0, p1.1), (p0.0, p0.1 + 8));

    // the object is opaque: its pixels move with it
    let seq = load_sequence(&t.path().join("fast")).unwrap();
    let (r, c) = p0;
    for y in r..r + 16 {
        for x in c..c + 16 {
            for ch in 0..3 {
                assert_eq!(seq.frames[0].at(0, ch, y, x), seq.frames[1].at(0, ch, y, x + 8));
            }
        }
    }
}

#[test]
fn invalid_geometry_fails() {
    let t = TempDir::new().unwrap();
    let out = fitv(&["synth", "--out", "bad", "--object", "80x80"], t.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn zero_sigma_noise_copies_bytes() {
    let t = TempDir::new().unwrap();
    ok(&["synth", "--out", "clean"], t.path());
    ok(
        &["add-noise", "--in", "clean", "--out", "copy", "--sigma", "0"],
        t.path(),
    );
    assert_eq!(bytes_of(&t.path().join("clean")), bytes_of(&t.path().join("copy")));
}

#[test]
fn mixed_noise_defaults_are_recorded() {
    let t = TempDir::new().unwrap();
    ok(&["synth", "--out", "clean"], t.path());
    let stdout = ok(
        &[
            "add-noise",
            "--in",
            "clean",
            "--out",
            "noisy",
            "--kind",
            "mixed",
            "--seed",
            "9",
        ],
        t.path(),
    );
    assert!(stdout.contains("resolved noise"));
    let spec: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(t.path().join("noisy/noise_spec.json")).unwrap()).unwrap();
    assert_eq!(spec["kind"], "mixed");
    assert!((spec["sigma"].as_f64().unwrap() - 25.5 / 255.0).abs() < 1e-15);
    assert_eq!(spec["sp_ratio"].as_f64().unwrap(), 0.10);
    assert_eq!(spec["seed"].as_u64().unwrap(), 9);
    assert_eq!(pngs(&t.path().join("noisy")).len(), 7);
    // the clean input is untouched
    ok(&["synth", "--out", "again"], t.path());
    assert_eq!(bytes_of(&t.path().join("clean")), bytes_of(&t.path().join("again")));
}

#[test]
fn bad_noise_spec_fails() {
    let t = TempDir::new().unwrap();
    ok(&["synth", "--out", "clean"], t.path());
    for args in [&["--sigma", "-3"][..], &["--sp-ratio", "1.5"][..]] {
        let mut full = vec!["add-noise", "--in", "clean", "--out", "noisy"];
        full.extend_from_slice(args);
        assert!(!fitv(&full, t.path()).status.success(), "{args:?} should be rejected");
    }
}

/// Two 64x64 sequences and one that is too short to train on.
fn corpus(dir: &Path) {
    ok(&["synth", "--out", "data/a", "--manifest", "data/m.jsonl"], dir);
    ok(
        &[
            "synth",
            "--out",
            "data/b",
            "--seed",
            "1",
            "--velocity",
            "-1,2",
            "--manifest",
            "data/m.jsonl",
        ],
        dir,
    );
}

#[test]
fn one_epoch_writes_one_checkpoint_and_a_line_per_iteration() {
    let t = TempDir::new().unwrap();
    corpus(t.path());
    ok(
        &[
            "synth",
            "--out",
            "data/short",
            "--frames",
            "3",
            "--manifest",
            "data/m.jsonl",
        ],
        t.path(),
    );
    ok(
        &[
            "train",
            "--manifest",
            "data/m.jsonl",
            "--epochs",
            "1",
            "--batch",
            "1",
            "--patch",
            "32",
            "--out",
            "run/ck.bin",
        ],
        t.path(),
    );
    let run: Vec<_> = fs::read_dir(t.path().join("run"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    let checkpoints = run.iter().filter(|n| n.to_string_lossy().ends_with(".bin")).count();
    assert_eq!(checkpoints, 1);
    // two usable sequences, batch 1 → two iterations
    let log = fs::read_to_string(t.path().join("run/ck.bin.loss.txt")).unwrap();
    assert_eq!(log.lines().count(), 2);
    let steps: Vec<u64> = log
        .lines()
        .map(|l| l.split_whitespace().next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(steps, [1, 2]);
}

#[test]
fn unsupervised_training_reads_no_clean_frames() {
    let t = TempDir::new().unwrap();
    corpus(t.path());
    let out = Command::new(env!("CARGO_BIN_EXE_fitv"))
        .args([
            "train",
            "--manifest",
            "data/m.jsonl",
            "--variant",
            "unsupervised",
            "--epochs",
            "1",
        ])
        .args(["--batch", "2", "--patch", "32", "--out", "u.bin"])
        .current_dir(t.path())
        .env("FITV_LOG", "info")
        .output()
        .unwrap();
    assert!(out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("clean frames read by losses: 0"), "{stderr}");
}

#[test]
fn training_without_usable_sequences_fails() {
    let t = TempDir::new().unwrap();
    ok(
        &[
            "synth",
            "--out",
            "data/short",
            "--frames",
            "4",
            "--manifest",
            "data/m.jsonl",
        ],
        t.path(),
    );
    let out = fitv(
        &["train", "--manifest", "data/m.jsonl", "--epochs", "1", "--out", "x.bin"],
        t.path(),
    );
    assert!(!out.status.success());
}

#[test]
fn resume_rejects_a_different_variant() {
    let t = TempDir::new().unwrap();
    corpus(t.path());
    let common = ["--manifest", "data/m.jsonl", "--batch", "2", "--patch", "32"];
    let mut first = vec!["train", "--epochs", "1", "--out", "ck.bin"];
    first.extend_from_slice(&common);
    ok(&first, t.path());
    let mut second = vec![
        "train",
        "--variant",
        "jsc",
        "--epochs",
        "2",
        "--out",
        "ck2.bin",
        "--resume",
        "ck.bin",
    ];
    second.extend_from_slice(&common);
    assert!(!fitv(&second, t.path()).status.success());
}

#[test]
fn denoise_keeps_length_and_is_deterministic() {
    let t = TempDir::new().unwrap();
    corpus(t.path());
    ok(
        &[
            "train",
            "--manifest",
            "data/m.jsonl",
            "--epochs",
            "1",
            "--batch",
            "2",
            "--patch",
            "32",
            "--out",
            "ck.bin",
        ],
        t.path(),
    );
    ok(
        &[
            "add-noise",
            "--in",
            "data/a",
            "--out",
            "noisy",
            "--sigma",
            "25",
            "--seed",
            "4",
        ],
        t.path(),
    );
    ok(
        &[
            "denoise",
            "--ckpt",
            "ck.bin",
            "--in",
            "noisy",
            "--out",
            "d1",
            "--sigma",
            "25",
            "--dump-stage1",
        ],
        t.path(),
    );
    ok(
        &[
            "denoise", "--ckpt", "ck.bin", "--in", "noisy", "--out", "d2", "--sigma", "25",
        ],
        t.path(),
    );
    let d1 = t.path().join("d1");
    assert_eq!(pngs(&d1).len(), 7);
    assert_eq!(bytes_of(&d1), bytes_of(&t.path().join("d2")));
    for frame in pngs(&d1) {
        let stem = frame.file_stem().unwrap();
        assert_eq!(pngs(&d1.join("stage1").join(stem)).len(), 5);
    }
    // the dumped center of a window is that frame's own stage-1 output
    let center = load_image(&d1.join("stage1/frame_0003/offset+0.png")).unwrap();
    let same = load_image(&d1.join("stage1/frame_0004/offset-1.png")).unwrap();
    assert_eq!(center.data(), same.data());
}

#[test]
fn denoise_rejects_a_corrupt_checkpoint() {
    let t = TempDir::new().unwrap();
    ok(&["synth", "--out", "clean"], t.path());
    fs::write(t.path().join("bad.bin"), b"FITV not really").unwrap();
    let out = fitv(
        &[
            "denoise", "--ckpt", "bad.bin", "--in", "clean", "--out", "d", "--sigma", "25",
        ],
        t.path(),
    );
    assert!(!out.status.success());
}

#[test]
fn evaluate_identical_frames_hits_the_cap() {
    let t = TempDir::new().unwrap();
    ok(&["synth", "--out", "clean"], t.path());
    let table = ok(
        &[
            "evaluate",
            "--pred",
            "clean",
            "--clean",
            "clean",
            "--report",
            "r/report.json",
        ],
        t.path(),
    );
    assert!(table.contains("AD"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(t.path().join("r/report.json")).unwrap()).unwrap();
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 7);
    for row in rows {
        assert_eq!(row["psnr"].as_f64().unwrap(), 120.0);
        assert!((row["ssim"].as_f64().unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(row["ad"].as_f64().unwrap(), 0.0);
    }
}

#[test]
fn evaluate_report_matches_recomputation() {
    let t = TempDir::new().unwrap();
    ok(&["synth", "--out", "clean"], t.path());
    ok(
        &["add-noise", "--in", "clean", "--out", "noisy", "--seed", "2"],
        t.path(),
    );
    ok(
        &["evaluate", "--pred", "noisy", "--clean", "clean", "--report", "r.json"],
        t.path(),
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(t.path().join("r.json")).unwrap()).unwrap();
    let pred = load_sequence(&t.path().join("noisy")).unwrap();
    let clean = load_sequence(&t.path().join("clean")).unwrap();
    let mut sum = 0.0;
    for (i, row) in report["rows"].as_array().unwrap().iter().enumerate() {
        let psnr = fitv::metrics::psnr(&pred.frames[i], &clean.frames[i]).unwrap();
        assert_eq!(row["psnr"].as_f64().unwrap(), psnr);
        assert_eq!(row["id"], format!("frame_{i:04}"));
        sum += psnr;
    }
    assert!((report["corpus"]["psnr_mean"].as_f64().unwrap() - sum / 7.0).abs() < 1e-12);
}

#[test]
fn evaluate_rejects_count_mismatch() {
    let t = TempDir::new().unwrap();
    ok(&["synth", "--out", "seven"], t.path());
    ok(&["synth", "--out", "five", "--frames", "5"], t.path());
    let out = fitv(
        &["evaluate", "--pred", "five", "--clean", "seven", "--report", "r.json"],
        t.path(),
    );
    assert!(!out.status.success());
    assert!(!t.path().join("r.json").exists());
    let out = fitv(
        &["ad-report", "--pred", "five", "--clean", "seven", "--boxes-out", "ad"],
        t.path(),
    );
    assert!(!out.status.success());
}

#[test]
fn ad_report_clean_vs_clean_is_all_zero() {
    let t = TempDir::new().unwrap();
    ok(&["synth", "--out", "clean"], t.path());
    ok(
        &["ad-report", "--pred", "clean", "--clean", "clean", "--boxes-out", "ad"],
        t.path(),
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(t.path().join("ad/ad_report.json")).unwrap()).unwrap();
    let corpus = &report["corpus"];
    assert_eq!(corpus["ad_avg"].as_f64().unwrap(), 0.0);
    assert_eq!(corpus["ad_max"].as_f64().unwrap(), 0.0);
    assert_eq!(corpus["ad_count"].as_u64().unwrap(), 0);
    for frame in report["frames"].as_array().unwrap() {
        assert!(frame["boxes"].as_array().unwrap().is_empty());
    }
    // one overlay and two Sobel maps per frame
    assert_eq!(pngs(&t.path().join("ad")).len(), 21);
}

#[test]
fn ad_report_boxes_sit_on_the_patch_grid() {
    let t = TempDir::new().unwrap();
    ok(&["synth", "--out", "clean", "--size", "64x96"], t.path());
    ok(
        &["add-noise", "--in", "clean", "--out", "noisy", "--kind", "mixed"],
        t.path(),
    );
    ok(
        &["ad-report", "--pred", "noisy", "--clean", "clean", "--boxes-out", "ad"],
        t.path(),
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(t.path().join("ad/ad_report.json")).unwrap()).unwrap();
    let frames = report["frames"].as_array().unwrap();
    let ads: Vec<f64> = frames.iter().map(|f| f["ad"].as_f64().unwrap()).collect();
    let stats = fitv::metrics::ad_stats(&ads).unwrap();
    assert_eq!(report["corpus"]["ad_max"].as_f64().unwrap(), stats.max);
    assert_eq!(report["corpus"]["ad_count"].as_u64().unwrap(), stats.count as u64);
    let mut any = false;
    for f in frames {
        for b in f["boxes"].as_array().unwrap() {
            let b: Vec<u64> = b.as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
            assert!(
                b[0].is_multiple_of(32) && b[1].is_multiple_of(32) && b[2] == 32 && b[3] == 32,
                "{b:?}"
            );
            any = true;
        }
    }
    assert!(any);
}

#[test]
fn grad_check_passes_and_catches_a_fault() {
    let t = TempDir::new().unwrap();
    let stdout = ok(&["grad-check", "--seed", "1"], t.path());
    assert!(stdout.contains("max relative error"));
    let out = fitv(&["grad-check", "--seed", "1", "--inject-fault", "conv2d"], t.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn unknown_fault_name_is_a_usage_error() {
    let t = TempDir::new().unwrap();
    let out = fitv(&["grad-check", "--inject-fault", "nope"], t.path());
    assert_eq!(out.status.code(), Some(2));
}
