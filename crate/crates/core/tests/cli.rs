//! Command line behaviour: exit codes, file round trips and the end-to-end
//! pipeline on the composite scene.

mod common;

use std::path::{Path, PathBuf};
use std::process::Command;

use contactseg::synth::presets;
use serde_json::Value;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn contactseg(args: &[&str], env: &[(&str, &str)]) -> Run {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_contactseg"));
    cmd.args(args).env_remove("CONTACTSEG_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("binary runs");
    Run {
        code: out.status.code().expect("exit code"),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn ok(args: &[&str]) -> Run {
    let r = contactseg(args, &[]);
    assert_eq!(r.code, 0, "{args:?}: {}", r.stderr);
    r
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_json(dir: &Path, name: &str, v: &impl serde::Serialize) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string(v).unwrap()).unwrap();
    p
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Synthesizes the small plane scene and its demonstration into `dir`.
fn plane_inputs(dir: &Path) -> (PathBuf, PathBuf) {
    let spec = write_json(dir, "spec.json", &common::plane_spec(2));
    let demo = write_json(dir, "demo.json", &common::plane_demo(2));
    let (cloud, cp) = (dir.join("cloud.ply"), dir.join("cp.json"));
    ok(&[
        "synth", "--spec", path_str(&spec), "--demo", path_str(&demo), "--out", path_str(&cloud), "--cp-out",
        path_str(&cp),
    ]);
    (cloud, cp)
}

#[test]
fn help_and_usage_errors() {
    let r = contactseg(&["--help"], &[]);
    assert_eq!(r.code, 0);
    for sub in ["segment", "surface", "plan", "synth", "baseline", "serve", "replay"] {
        assert!(r.stdout.contains(sub), "help lacks {sub}");
    }
    assert_eq!(contactseg(&["segment", "--help"], &[]).code, 0);
    assert_eq!(contactseg(&[], &[]).code, 1);
    assert_eq!(contactseg(&["polish"], &[]).code, 1);
    let r = contactseg(&["segment", "--cp", "cp.json", "--steps", "3", "--out", "x.json"], &[]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("--cloud"));
    assert_eq!(contactseg(&["segment", "--cloud", "a", "--cp", "b", "--steps", "many", "--out", "x"], &[]).code, 1);
}

#[test]
fn bad_inputs_exit_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (cloud, cp) = plane_inputs(d);
    let out = d.join("snap.json");
    let segment = |cloud: &Path, cp: &Path| {
        contactseg(
            &["segment", "--cloud", path_str(cloud), "--cp", path_str(cp), "--steps", "5", "--out", path_str(&out)],
            &[],
        )
    };

    assert_eq!(segment(&d.join("missing.ply"), &cp).code, 1);

    let binary = d.join("binary.ply");
    std::fs::write(&binary, b"ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\nend_header\n\x00\x00\x80\x3f").unwrap();
    let r = segment(&binary, &cp);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("binary"), "{}", r.stderr);

    let truncated = d.join("truncated.ply");
    std::fs::write(&truncated, "ply\nformat ascii 1.0\nelement vertex 3\nproperty double x\nproperty double y\nproperty double z\nend_header\n0 0 0\n").unwrap();
    assert_eq!(segment(&truncated, &cp).code, 1);

    let garbage = d.join("garbage.json");
    std::fs::write(&garbage, "{\"colour\": 3}").unwrap();
    assert_eq!(segment(&cloud, &garbage).code, 1);
    std::fs::write(&garbage, "[[0, 0]]").unwrap();
    assert_eq!(segment(&cloud, &garbage).code, 1);

    let r = contactseg(
        &["segment", "--cloud", path_str(&cloud), "--cp", path_str(&cp), "--steps", "5", "--out", path_str(&out)],
        &[("CONTACTSEG_SEED", "minus one")],
    );
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("CONTACTSEG_SEED"));

    let bad_config = write_json(d, "config.json", &serde_json::json!({"tau": -1.0}));
    let r = contactseg(
        &["segment", "--cloud", path_str(&cloud), "--cp", path_str(&cp), "--steps", "5", "--out", path_str(&out),
          "--config", path_str(&bad_config)],
        &[],
    );
    assert_eq!(r.code, 1);
    assert!(!out.exists());

    assert_eq!(contactseg(&["plan", "--patch", path_str(&garbage), "--out", path_str(&out)], &[]).code, 1);
    assert_eq!(contactseg(&["replay", "--log", path_str(&d.join("none.jsonl"))], &[]).code, 1);
}

#[test]
fn plane_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (cloud, cp) = plane_inputs(d);
    let snap = d.join("snap.json");
    let r = ok(&["segment", "--cloud", path_str(&cloud), "--cp", path_str(&cp), "--steps", "60", "--out",
                 path_str(&snap)]);
    assert!(r.stdout.starts_with("plane "), "{}", r.stdout);
    let s = read_json(&snap);
    assert_eq!(s["kind"], "plane");
    assert_eq!(s["t"], 60);
    let normal = s["model"]["params"]["normal"].as_array().unwrap();
    assert!(normal[2].as_f64().unwrap().abs() > 0.999);

    let (patch, mesh) = (d.join("patch.json"), d.join("mesh.ply"));
    ok(&["surface", "--cloud", path_str(&cloud), "--snapshot", path_str(&snap), "--out", path_str(&patch),
         "--mesh", path_str(&mesh)]);
    let mesh_text = std::fs::read_to_string(&mesh).unwrap();
    assert!(mesh_text.starts_with("ply\nformat ascii 1.0\n"));
    assert!(mesh_text.contains("element face"));

    let (traj, csv) = (d.join("t.json"), d.join("t.csv"));
    ok(&["plan", "--patch", path_str(&patch), "--out", path_str(&traj), "--csv", path_str(&csv)]);
    let t = read_json(&traj);
    let poses = t["poses"].as_array().unwrap();
    let csv_text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = csv_text.lines();
    assert_eq!(lines.next(), Some("px,py,pz,ax,ay,az,tx,ty,tz,contact"));
    assert_eq!(lines.count(), poses.len());
    assert_eq!(t["header"]["patch_hash"].as_str().unwrap().len(), 64);

    // A line-only configuration cannot be turned into a surface.
    let line_cfg = write_json(d, "line.json", &serde_json::json!({"kinds_enabled": ["line"]}));
    let line_snap = d.join("line_snap.json");
    ok(&["segment", "--cloud", path_str(&cloud), "--cp", path_str(&cp), "--steps", "20", "--out",
         path_str(&line_snap), "--config", path_str(&line_cfg)]);
    let r = contactseg(
        &["surface", "--cloud", path_str(&cloud), "--snapshot", path_str(&line_snap), "--out",
          path_str(&d.join("line_patch.json"))],
        &[],
    );
    assert_eq!(r.code, 1, "{}", r.stderr);
}

#[test]
fn composite_scene_segments_as_cubic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let spec = write_json(d, "spec.json", &presets::composite(7));
    let demo = write_json(d, "demo.json", &presets::composite_demo(7));
    let (cloud, cp, snap) = (d.join("c.ply"), d.join("cp.json"), d.join("snap.json"));
    ok(&["synth", "--spec", path_str(&spec), "--demo", path_str(&demo), "--out", path_str(&cloud), "--cp-out",
         path_str(&cp)]);
    let r = ok(&["segment", "--cloud", path_str(&cloud), "--cp", path_str(&cp), "--steps", "200", "--out",
                 path_str(&snap)]);
    assert!(r.stdout.starts_with("poly3 "), "{}", r.stdout);
    assert_eq!(read_json(&snap)["kind"], "poly3");
}

#[test]
fn baseline_finds_the_single_plane() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (cloud, _) = plane_inputs(d);
    let config = write_json(
        d,
        "baseline.json",
        &serde_json::json!({"segmentation": {"kinds_enabled": ["plane"], "sample_size": 3},
                            "max_iterations": 200, "min_inliers": 1000}),
    );
    let out = d.join("baseline.json.out");
    ok(&["baseline", "--cloud", path_str(&cloud), "--config", path_str(&config), "--seed", "4", "--out",
         path_str(&out)]);
    let v = read_json(&out);
    assert_eq!(v["model"]["kind"], "plane");
}

#[test]
fn replay_detects_tampering_and_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (cloud, cp) = plane_inputs(d);
    let (snap, log) = (d.join("snap.json"), d.join("s.jsonl"));
    ok(&["segment", "--cloud", path_str(&cloud), "--cp", path_str(&cp), "--steps", "30", "--out", path_str(&snap),
         "--log", path_str(&log)]);
    ok(&["replay", "--log", path_str(&log)]);

    let text = std::fs::read_to_string(&log).unwrap();
    let lines: Vec<&str> = text.lines().collect();

    let truncated = d.join("truncated.jsonl");
    std::fs::write(&truncated, lines[..lines.len() - 1].join("\n")).unwrap();
    let r = contactseg(&["replay", "--log", path_str(&truncated)], &[]);
    assert_eq!(r.code, 1, "{}", r.stderr);
    assert!(r.stderr.contains("truncated"), "{}", r.stderr);

    // Change the recorded score of one snapshot.
    let k = lines.iter().position(|l| l.contains("\"record\":\"snapshot\"")).unwrap();
    let mut rec: Value = serde_json::from_str(lines[k]).unwrap();
    rec["score"] = Value::from(rec["score"].as_f64().unwrap() * 0.5);
    let mut tampered: Vec<String> = lines.iter().map(|l| l.to_string()).collect();
    tampered[k] = rec.to_string();
    let tampered_path = d.join("tampered.jsonl");
    std::fs::write(&tampered_path, tampered.join("\n") + "\n").unwrap();
    let r = contactseg(&["replay", "--log", path_str(&tampered_path)], &[]);
    assert_ne!(r.code, 0);
    assert!(r.stderr.contains("diverged"), "{}", r.stderr);
}
