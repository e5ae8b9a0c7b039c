use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lhsi_core::dataio::{load_image, save_image};
use lhsi_core::train::{synth_corrupt, synthetic_scene, Checkpoint, TrainConfig};
use lhsi_core::PlanarImage;

fn lhsi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lhsi")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_scene(path: &Path, size: usize, seed: u64) -> PlanarImage {
    let img = synthetic_scene(size, seed);
    save_image(&img, path).unwrap();
    load_image(path).unwrap()
}

const TINY: &str = r#"{"arch": {"widths": [4, 8], "state_size": 2, "intervals": 8},
  "epochs": 1, "milestones": [], "crop": 8, "batch": 2, "net_size": 16, "val_count": 1, "lr": 0.001}"#;

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&lhsi(&[])), 1);
    assert_eq!(code(&lhsi(&["frobnicate"])), 1);
    assert_eq!(code(&lhsi(&["convert", "--space", "rgb", "--input", "a.png", "--output", "b.png"])), 1);
    assert_eq!(code(&lhsi(&["--help"])), 0);
}

#[test]
fn convert_round_trips_every_space() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.png");
    let img = write_scene(&input, 24, 3);
    for space in ["lhsi", "hsv", "hsi", "lab", "hvi"] {
        let output = dir.path().join(format!("{space}.png"));
        let out = lhsi(&["convert", "--space", space, "--input", p(&input), "--output", p(&output)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let back = load_image(&output).unwrap();
        assert_eq!(back.data(), img.data(), "{space}");
    }
}

#[test]
fn convert_forward_only_writes_pfm() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.ppm");
    write_scene(&input, 8, 4);
    let output = dir.path().join("rep.pfm");
    let out = lhsi(&["convert", "--input", p(&input), "--output", p(&output), "--forward-only"]);
    assert_eq!(code(&out), 0);
    let bytes = fs::read(&output).unwrap();
    let header = b"PF\n8 8\n-1.0\n";
    assert_eq!(&bytes[..header.len()], header);
    assert_eq!(bytes.len(), header.len() + 8 * 8 * 3 * 4);
}

#[test]
fn io_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.png");
    let out = dir.path().join("o.png");
    assert_eq!(code(&lhsi(&["convert", "--input", p(&missing), "--output", p(&out)])), 2);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"version\": 1, \"axis").unwrap();
    assert_eq!(code(&lhsi(&["dump-curves", "--ckpt", p(&bad), "--out", p(&out)])), 2);
    fs::write(&bad, "{\"version\": 9}").unwrap();
    let res = lhsi(&["dump-curves", "--ckpt", p(&bad), "--out", p(&out)]);
    assert_eq!(code(&res), 2);
    assert!(String::from_utf8_lossy(&res.stderr).contains("version"));
}

#[test]
fn dump_curves_of_initial_checkpoint_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("init.json");
    Checkpoint::initial(&TrainConfig::default()).unwrap().save(&ckpt).unwrap();
    let csv = dir.path().join("curves.csv");
    let out = lhsi(&["dump-curves", "--ckpt", p(&ckpt), "--samples", "33", "--out", p(&csv)]);
    assert_eq!(code(&out), 0);
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    let axis: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(axis[0], "axis");
    let s = 1.0 / 3f64.sqrt();
    assert!(axis[1..].iter().all(|v| (v.parse::<f64>().unwrap() - s).abs() < 1e-15));
    assert_eq!(lines.next().unwrap(), "v,map_t,map_r,map_theta");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 33);
    for r in &rows {
        assert!(r[1..].iter().all(|y| (y - r[0]).abs() < 1e-12), "{r:?}");
    }
    assert_eq!(code(&lhsi(&["dump-curves", "--ckpt", p(&ckpt), "--samples", "1", "--out", p(&csv)])), 1);
}

#[test]
fn train_correct_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let config = d.join("cfg.json");
    fs::write(&config, TINY).unwrap();
    let ckpt = d.join("model.json");
    let args = ["train", "--config", p(&config), "--synthetic", "4", "--synthetic-size", "16", "--out", p(&ckpt)];
    let out = lhsi(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = d.join("model.report.json");
    assert!(report.exists());
    let first = fs::read(&ckpt).unwrap();
    assert_eq!(code(&lhsi(&args)), 0);
    assert_eq!(fs::read(&ckpt).unwrap(), first, "training is deterministic");

    let (inp, gt, fixed) = (d.join("in"), d.join("gt"), d.join("fixed"));
    fs::create_dir_all(&inp).unwrap();
    fs::create_dir_all(&gt).unwrap();
    for k in 0..3u64 {
        let clean = synthetic_scene(20, 100 + k);
        save_image(&clean, gt.join(format!("img{k}.png"))).unwrap();
        save_image(&synth_corrupt(&clean, k), inp.join(format!("img{k}.png"))).unwrap();
    }
    let out = lhsi(&["correct", "--ckpt", p(&ckpt), "--input", p(&inp), "--output", p(&fixed)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for k in 0..3 {
        let img = load_image(fixed.join(format!("img{k}.png"))).unwrap();
        assert_eq!((img.height(), img.width()), (20, 20));
    }

    let csv = d.join("report.csv");
    let out = lhsi(&["eval", "--pred", p(&fixed), "--gt", p(&gt), "--report", p(&csv)]);
    assert_eq!(code(&out), 0);
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "path,mse,mae_deg,de2000");
    assert!(lines[1].starts_with("img0.png,") && lines[3].starts_with("img2.png,"));
    assert_eq!(lines[5], "metric,mean,q1,q2,q3");
    assert_eq!(lines.len(), 9);

    let out = lhsi(&["eval", "--pred", p(&gt), "--gt", p(&gt), "--report", p(&csv)]);
    assert_eq!(code(&out), 0);
    let text = fs::read_to_string(&csv).unwrap();
    for line in text.lines().skip(6) {
        let mean: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(mean, 0.0, "{line}");
    }

    fs::remove_file(fixed.join("img1.png")).unwrap();
    let out = lhsi(&["eval", "--pred", p(&fixed), "--gt", p(&gt), "--report", p(&csv)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("img1.png"));
}

#[test]
fn gradcheck_passes() {
    let out = lhsi(&["gradcheck", "--seed", "1"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8_lossy(&out.stdout);
    for name in ["map_forward", "rgb_to_lhsi", "selective_scan", "mvm_forward", "cam_forward", "dclan_forward"] {
        assert!(text.contains(name), "{text}");
    }
}
