use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use iqjepa::synthdata::read_dataset;

fn iqjepa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iqjepa"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let o = iqjepa(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn code(args: &[&str]) -> (i32, String) {
    let o = iqjepa(args);
    (o.status.code().unwrap(), String::from_utf8_lossy(&o.stderr).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// 2 antennas x 64 samples, tiny enough for the stride-4 encoder.
fn small_dataset(dir: &Path) {
    ok(&[
        "synth", "--waveforms", "3", "--aoa-classes", "3", "--replicas", "4", "--antennas", "2", "--window", "64",
        "--seed", "5", "--out", s(dir),
    ]);
}

#[test]
fn synth_default_grid_has_1330_samples_and_is_reproducible() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    let args = |o: &Path| {
        vec![
            "synth".to_string(),
            "--waveforms=7".into(),
            "--aoa-classes=19".into(),
            "--replicas=10".into(),
            "--seed=1".into(),
            format!("--out={}", o.display()),
        ]
    };
    let out = ok(&args(&a).iter().map(String::as_str).collect::<Vec<_>>());
    assert!(out.contains("1330 samples"), "{out}");
    ok(&args(&b).iter().map(String::as_str).collect::<Vec<_>>());
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["total"], 1330);
    for split in ["train", "test"] {
        assert_eq!(
            fs::read(a.join(split).join("data.bin")).unwrap(),
            fs::read(b.join(split).join("data.bin")).unwrap()
        );
    }
    let cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["schema_version"], 1);
    assert_eq!(cfg["run"]["command"], "synth");
    assert!(!a.join(".lock").exists());
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&["synth", "--replicas", "2"]).0, 2);
    assert_eq!(code(&["synth", "--out", "x", "--frobnicate"]).0, 2);
    assert_eq!(code(&["pretrain", "--mask", "diagonal", "--dataset", "d", "--out", "o"]).0, 2);
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("c.json");
    fs::write(&cfg, r#"{"schema_version": 1, "run": {"command": "synth", "params": {"out": "x", "spec": {}}}}"#).unwrap();
    let (c, err) = code(&["synth", "--config", s(&cfg)]);
    assert_eq!(c, 2, "{err}");
}

#[test]
fn config_file_is_replayable() {
    let t = tempfile::tempdir().unwrap();
    let a = t.path().join("a");
    ok(&["synth", "--waveforms", "2", "--aoa-classes", "2", "--replicas", "2", "--out", s(&a)]);
    // replay the echoed config into a new directory
    let b = t.path().join("b");
    ok(&["synth", "--config", s(&a.join("config.json")), "--out", s(&b)]);
    assert_eq!(
        fs::read(a.join("train/data.bin")).unwrap(),
        fs::read(b.join("train/data.bin")).unwrap()
    );
}

#[test]
fn pretrain_writes_checkpoint_metrics_and_is_deterministic() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("d");
    small_dataset(&d);
    let run = |out: &Path, mask: &str| {
        ok(&[
            "pretrain", "--arch", "tiny", "--mask", mask, "--epochs", "1", "--batch-size", "8", "--seed", "3",
            "--deterministic-timing", "--dataset", s(&d), "--out", s(out),
        ])
    };
    let (c1, c2) = (t.path().join("c1"), t.path().join("c2"));
    run(&c1, "time");
    run(&c2, "time");
    for f in ["manifest.json", "params.bin", "metrics.csv"] {
        assert_eq!(fs::read(c1.join(f)).unwrap(), fs::read(c2.join(f)).unwrap(), "{f}");
    }
    assert!(c1.join("config.json").exists());
    let metrics = fs::read_to_string(c1.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next().unwrap(), "step,epoch,loss,masked_cells,tau,lr,wall_ms");
    // 27 training samples in batches of 8
    assert_eq!(metrics.lines().count(), 1 + 4);

    // 2 antennas on a 16-row latent grid: one band is 8 rows x 16 columns
    let ca = t.path().join("ca");
    run(&ca, "antenna");
    let cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(ca.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["run"]["params"]["train"]["mask"]["patch_latent"], serde_json::json!([8, 16]));
    let first = fs::read_to_string(ca.join("metrics.csv")).unwrap();
    let row: Vec<&str> = first.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[3], (8 * 8 * 16).to_string());
}

#[test]
fn pretrain_rejects_incompatible_dataset() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("d");
    ok(&["synth", "--waveforms", "2", "--aoa-classes", "2", "--replicas", "2", "--antennas", "2", "--window", "66",
        "--out", s(&d)]);
    let (c, err) = code(&["pretrain", "--arch", "tiny", "--epochs", "1", "--dataset", s(&d), "--out", s(&t.path().join("c"))]);
    assert_eq!(c, 3, "{err}");
    assert!(err.contains("stride"), "{err}");
    let (c, _) = code(&["pretrain", "--dataset", s(&t.path().join("missing")), "--out", s(&t.path().join("c"))]);
    assert_eq!(c, 3);
}

#[test]
fn eval_row_counts_and_method_filter() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("d");
    ok(&["synth", "--waveforms", "3", "--aoa-classes", "3", "--replicas", "4", "--out", s(&d)]);
    let e1 = t.path().join("e1");
    ok(&["eval", "--init", "random", "--dataset", s(&d), "--shots", "1,2", "--seeds", "2", "--out", s(&e1)]);
    let csv = fs::read_to_string(e1.join("results.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(csv.lines().next().unwrap(), "task,method,shots,seed,accuracy");
    assert_eq!(rows.len(), 2 * 2 * 2 * 2);
    for r in &rows {
        let acc: f64 = r.rsplit(',').next().unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }

    let e2 = t.path().join("e2");
    ok(&["eval", "--init", "random", "--dataset", s(&d), "--shots", "1,2", "--seeds", "2", "--method", "knn", "--k",
        "5", "--out", s(&e2)]);
    let csv = fs::read_to_string(e2.join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * 2);
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(1) == Some("knn")));

    // more shots than any class holds
    let (c, err) = code(&["eval", "--init", "random", "--dataset", s(&d), "--shots", "500", "--out", s(&t.path().join("e3"))]);
    assert_eq!(c, 3, "{err}");
}

#[test]
fn eval_rejects_checkpoint_dataset_mismatch() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("d");
    small_dataset(&d);
    let ck = t.path().join("ck");
    ok(&["pretrain", "--arch", "tiny", "--epochs", "1", "--dataset", s(&d), "--out", s(&ck)]);
    let odd = t.path().join("odd");
    ok(&["synth", "--waveforms", "2", "--aoa-classes", "2", "--replicas", "2", "--antennas", "2", "--window", "66",
        "--out", s(&odd)]);
    let (c, err) = code(&["eval", "--checkpoint", s(&ck), "--dataset", s(&odd), "--shots", "1", "--out", s(&t.path().join("e"))]);
    assert_eq!(c, 3, "{err}");
    ok(&["eval", "--checkpoint", s(&ck), "--dataset", s(&d), "--shots", "1", "--seeds", "1", "--out", s(&t.path().join("e2"))]);
}

fn read_pgm(p: &Path) -> (usize, usize, Vec<u8>) {
    let text = fs::read_to_string(p).unwrap();
    let mut tok = text.split_whitespace();
    assert_eq!(tok.next(), Some("P2"));
    let w: usize = tok.next().unwrap().parse().unwrap();
    let h: usize = tok.next().unwrap().parse().unwrap();
    assert_eq!(tok.next(), Some("255"));
    let px: Vec<u8> = tok.map(|v| v.parse::<u16>().unwrap() as u8).collect();
    assert_eq!(px.len(), w * h);
    (w, h, px)
}

#[test]
fn mask_viz_images() {
    let t = tempfile::tempdir().unwrap();
    let o = t.path().join("viz");
    ok(&["mask-viz", "--seed", "4", "--out", s(&o)]);
    let (w, h, px) = read_pgm(&o.join("antenna.pgm"));
    assert_eq!((w, h), (256, 256));
    let black_rows: Vec<usize> = (0..h).filter(|&r| px[r * w..(r + 1) * w].iter().all(|&v| v == 0)).collect();
    assert_eq!(black_rows.len(), 64);
    assert_eq!(black_rows.last().unwrap() - black_rows[0], 63);
    assert_eq!(px.iter().filter(|&&v| v == 0).count(), 64 * 256);

    let (w, h, px) = read_pgm(&o.join("time.pgm"));
    let black_cols: Vec<usize> = (0..w).filter(|&c| (0..h).all(|r| px[r * w + c] == 0)).collect();
    assert!(!black_cols.is_empty());
    assert_eq!(black_cols.last().unwrap() - black_cols[0] + 1, black_cols.len());
    assert_eq!(px.iter().filter(|&&v| v == 0).count(), black_cols.len() * h);

    for seed in 0..5 {
        let o = t.path().join(format!("r{seed}"));
        ok(&["mask-viz", "--geometry", "random", "--fraction", "0.25", "--seed", &seed.to_string(), "--out", s(&o)]);
        let (_, _, px) = read_pgm(&o.join("random.pgm"));
        let f = px.iter().filter(|&&v| v == 0).count() as f64 / 65536.0;
        assert!((0.25..=0.25 + 2048.0 / 65536.0).contains(&f), "{f}");
    }
}

fn write_raw(path: &Path, antennas: usize, n: usize) {
    let mut bytes = Vec::new();
    for a in 0..antennas {
        for t in 0..n {
            let ph = 0.05 * t as f32 + a as f32;
            bytes.extend_from_slice(&ph.cos().to_le_bytes());
            bytes.extend_from_slice(&ph.sin().to_le_bytes());
        }
    }
    fs::write(path, bytes).unwrap();
}

#[test]
fn ingest_raw_captures() {
    let t = tempfile::tempdir().unwrap();
    let raw = t.path().join("cap.bin");
    write_raw(&raw, 4, 1024);
    fs::write(t.path().join("cap.bin.json"), r#"{"antennas": 4, "sample_rate": 1e6, "labels": {"modulation": 1}}"#)
        .unwrap();
    let o = t.path().join("ds");
    ok(&["ingest", "--input", s(&raw), "--window", "256", "--out", s(&o)]);
    let ds = read_dataset(&o).unwrap();
    assert_eq!(ds.len(), 4);
    assert!(o.join("config.json").exists());

    let mono = t.path().join("mono.bin");
    write_raw(&mono, 1, 600);
    fs::write(t.path().join("mono.json"), r#"{"antennas": 1, "sample_rate": 1e6}"#).unwrap();
    let o = t.path().join("tiled");
    ok(&["ingest", "--input", s(&mono), "--meta", s(&t.path().join("mono.json")), "--tile-antennas", "4", "--out", s(&o)]);
    let ds = read_dataset(&o).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.header.provenance.as_deref(), Some("tiled:1->4"));
    let x = &ds.samples[0];
    assert!((1..4).all(|a| (0..256).all(|k| x.at(0, a, k) == x.at(0, 0, k) && x.at(1, a, k) == x.at(1, 0, k))));

    fs::write(t.path().join("bad.json"), "{\"antennas\": 4,\n  \"sample_rate\": 1e6,,}").unwrap();
    let (c, err) = code(&["ingest", "--input", s(&raw), "--meta", s(&t.path().join("bad.json")), "--out", s(&t.path().join("x"))]);
    assert_eq!(c, 3);
    assert!(err.contains("line 2 column"), "{err}");

    let cut = t.path().join("cut.bin");
    fs::write(&cut, &fs::read(&raw).unwrap()[..1001]).unwrap();
    let (c, err) = code(&["ingest", "--input", s(&cut), "--meta", s(&t.path().join("cap.bin.json")), "--out", s(&t.path().join("y"))]);
    assert_eq!(c, 3);
    assert!(err.contains("truncated"), "{err}");
}

#[test]
fn locked_output_directory_is_refused() {
    let t = tempfile::tempdir().unwrap();
    let o = t.path().join("viz");
    fs::create_dir_all(&o).unwrap();
    fs::write(o.join(".lock"), "1").unwrap();
    let (c, err) = code(&["mask-viz", "--out", s(&o)]);
    assert_eq!(c, 3);
    assert!(err.contains("locked"), "{err}");
}
