use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use top_core::io;
use top_core::overlap::{OverlapPoint, OverlapSet};
use top_core::{OccupancyState, Scan, SensorConfig, Vec3};

fn scenes() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenes")
}

fn run(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let mut full = vec!["top"];
    full.extend_from_slice(args);
    let code = top_cli::run(full, &mut out);
    (code, String::from_utf8(out).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, scene: &str, count: usize) -> PathBuf {
    let traj = dir.join("traj.toml");
    fs::write(
        &traj,
        format!("start = [0.0, 0.0, 0.0]\nvelocity = [2.0, 0.0, 0.0]\nscan_period_s = 0.5\ncount = {count}\n"),
    )
    .unwrap();
    let ds = dir.join("ds");
    let (code, _) = run(&[
        "simulate",
        "--scene",
        s(&scenes().join(scene)),
        "--trajectory",
        s(&traj),
        "--azimuths",
        "64",
        "--out",
        s(&ds),
    ]);
    assert_eq!(code, 0);
    ds
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(run(&[]).0, 1);
    assert_eq!(run(&["frobnicate"]).0, 1);
    assert_eq!(run(&["extract"]).0, 1);
    assert_eq!(run(&["--help"]).0, 0);
    assert_eq!(run(&["stats"]).0, 1);
}

#[test]
fn only_scans_with_full_windows_are_processed() {
    let tmp = tempfile::tempdir().unwrap();
    for (count, expected) in [(13usize, 1usize), (20, 8)] {
        let dir = tmp.path().join(count.to_string());
        fs::create_dir_all(&dir).unwrap();
        let ds = simulate(&dir, "wall.toml", count);
        let out = dir.join("out");
        let (code, text) = run(&["extract", "--n", "6", "--dataset", s(&ds), "--out", s(&out)]);
        assert_eq!(code, 0);
        assert_eq!(text.lines().filter(|l| l.contains("overlap points")).count(), expected);
        assert_eq!(fs::read_dir(out.join("overlaps")).unwrap().count(), expected);
        assert_eq!(fs::read_dir(out.join("recon")).unwrap().count(), expected);
        assert!(out.join("overlaps/000006.tovp").exists());
    }
}

#[test]
fn missing_poses_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = simulate(tmp.path(), "room.toml", 3);
    fs::remove_file(ds.join("poses.txt")).unwrap();
    let out = tmp.path().join("out");
    let o = Command::new(env!("CARGO_BIN_EXE_top"))
        .args(["extract", "--n", "1", "--dataset", s(&ds), "--out", s(&out)])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("MissingPose"));
    assert!(!out.exists());
}

#[test]
fn failed_extraction_leaves_no_partial_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = simulate(tmp.path(), "room.toml", 5);
    // Scan 4 is only read as an adjacent scan of scan 3, after scans 1 and 2
    // have been written.
    fs::write(ds.join("scans/000004.bin"), [0u8; 7]).unwrap();
    let out = tmp.path().join("out");
    let (code, _) = run(&["extract", "--n", "1", "--dataset", s(&ds), "--out", s(&out)]);
    assert_eq!(code, 2);
    assert!(!out.exists());
}

#[test]
fn empty_trajectory_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let traj = tmp.path().join("t.toml");
    fs::write(&traj, "start = [0.0, 0.0, 0.0]\nscan_period_s = 0.5\ncount = 0\n").unwrap();
    let out = tmp.path().join("ds");
    let (code, _) = run(&[
        "simulate",
        "--scene",
        s(&scenes().join("room.toml")),
        "--trajectory",
        s(&traj),
        "--out",
        s(&out),
    ]);
    assert_eq!(code, 2);
    assert!(!out.exists());
}

#[test]
fn loss_check_prints_the_hand_case() {
    let tmp = tempfile::tempdir().unwrap();
    let set = OverlapSet::new(vec![OverlapPoint {
        position: Vec3::new(5.0, 0.0, 0.0),
        time: 0.5,
        state: OccupancyState::Occupied,
        confidence: 1.0,
        current_point_index: 0,
        adjacent_scan_offset: 1,
        adjacent_point_index: 0,
        sample_rank: 0,
    }]);
    let ov = tmp.path().join("x.tovp");
    io::write_overlap_set(&ov, &set, &SensorConfig::default(), 0).unwrap();
    let pred = tmp.path().join("p.txt");
    fs::write(&pred, "0.2 0.5 0.3\n").unwrap();
    let (code, text) = run(&["loss-check", "--overlap", s(&ov), "--overlap-pred", s(&pred)]);
    assert_eq!(code, 0);
    assert_eq!(text.trim(), "overlap_loss: 3.465735903");

    fs::write(&pred, "0.2 0.5\n").unwrap();
    assert_eq!(run(&["loss-check", "--overlap", s(&ov), "--overlap-pred", s(&pred)]).0, 2);
    assert_eq!(run(&["loss-check", "--overlap", s(&ov)]).0, 1);
}

#[test]
fn stats_reports_the_small_object_share() {
    let tmp = tempfile::tempdir().unwrap();
    let counts = tmp.path().join("c.txt");
    fs::write(&counts, "1 1 1 97\n").unwrap();
    let csv = tmp.path().join("cdf.csv");
    let (code, text) = run(&["stats", "--counts", s(&counts), "--quantiles", "75", "--csv", s(&csv)]);
    assert_eq!(code, 0);
    assert!(text.contains("75% objects → 3% points"), "{text}");
    assert!(fs::read_to_string(&csv).unwrap().starts_with("size,object_fraction,point_fraction"));
}

fn write_eval_dataset(root: &Path) {
    fs::create_dir_all(root.join("scans")).unwrap();
    fs::create_dir_all(root.join("predictions")).unwrap();
    let scan0 = Scan {
        points: vec![
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
            Vec3::new(10.0, 0.0, 0.0),
            Vec3::new(11.0, 0.0, 0.0),
            Vec3::new(12.0, 0.0, 0.0),
            Vec3::new(13.0, 0.0, 0.0),
            Vec3::new(50.0, 0.0, 0.0),
        ],
        ..Default::default()
    };
    let scan1 = Scan {
        points: vec![Vec3::new(50.0, 0.0, 0.0)],
        ..Default::default()
    };
    io::write_scan_bin(&root.join("scans/000000.bin"), &scan0).unwrap();
    io::write_scan_bin(&root.join("scans/000001.bin"), &scan1).unwrap();
    io::write_flags(
        &root.join("predictions/000000.pred"),
        &[true, true, true, false, false, false, false],
    )
    .unwrap();
    io::write_flags(&root.join("predictions/000001.pred"), &[false]).unwrap();
    fs::write(
        root.join("poses.txt"),
        "1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 0 0 0 1 0\n",
    )
    .unwrap();
    let mut boxes = String::new();
    for (id, cx, len) in [("a", 1.5, 1.5), ("b", 11.5, 3.5)] {
        for (frame, t) in [(0, 0.0), (1, 0.5)] {
            boxes.push_str(&format!(
                "{{\"instance_id\":\"{id}\",\"category\":\"vehicle\",\"timestamp\":{t},\"frame\":{frame},\"center\":[{},0,0],\"size\":[{len},1,1],\"yaw\":0}}\n",
                cx + 2.0 * t
            ));
        }
    }
    fs::write(root.join("boxes.jsonl"), boxes).unwrap();
}

#[test]
fn label_then_evaluate_hand_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    write_eval_dataset(&ds);
    let (code, text) = run(&["label", "--dataset", s(&ds)]);
    assert_eq!(code, 0, "{text}");
    assert!(text.contains("2 scans labeled: 2 static, 6 moving, 0 unknown"), "{text}");

    let report = tmp.path().join("r.json");
    let (code, text) = run(&["eval", "--dataset", s(&ds), "--out", s(&report)]);
    assert_eq!(code, 0);
    assert!(text.contains("recall_obj: 62.5000"), "{text}");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["recall_obj"]["percent"], 62.5);
    assert!(json["config"].is_object());
    assert_eq!(json["per_object"].as_array().unwrap().len(), 2);
}

#[test]
fn config_file_and_flags_are_echoed() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = simulate(tmp.path(), "wall.toml", 3);
    let cfg = tmp.path().join("run.toml");
    fs::write(
        &cfg,
        "seed = 9\n[extraction]\nn_adjacent = 1\n[thresholds.vehicle]\nstatic_max = 0.2\nmoving_min = 2.0\n[loss.weights]\noccupied = 4.0\n",
    )
    .unwrap();
    let out = tmp.path().join("out");
    let (code, _) = run(&["--config", s(&cfg), "--lambda-occ", "0.8", "extract", "--dataset", s(&ds), "--out", s(&out)]);
    assert_eq!(code, 0);
    let echo: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(echo["seed"], 9);
    assert_eq!(echo["sensor"]["occupied_confidence_threshold"], 0.8);
    assert!(echo.get("threads").is_none());
    assert_eq!(echo["thresholds"]["vehicle"]["moving_min"], 2.0);
    assert_eq!(echo["thresholds"]["human"]["moving_min"], 0.6);
    assert_eq!(echo["loss"]["weights"]["occupied"], 4.0);
    assert_eq!(echo["loss"]["weights"]["free"], 1.0);

    fs::write(&cfg, "bogus = 1\n").unwrap();
    assert_eq!(run(&["--config", s(&cfg), "extract", "--dataset", s(&ds), "--out", s(&out)]).0, 2);
    assert_eq!(run(&["--bounds", "1,2,3", "extract", "--dataset", s(&ds), "--out", s(&out)]).0, 1);
}
