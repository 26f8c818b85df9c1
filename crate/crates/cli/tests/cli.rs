use std::path::Path;
use std::process::{Command, Output};

fn respnav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_respnav"))
        .args(args)
        .output()
        .expect("spawn respnav")
}

fn ok(args: &[&str]) -> Output {
    let out = respnav(args);
    assert!(
        out.status.success(),
        "respnav {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

const SMALL: &str = r#"
phases = 4

[pattern]
total_dur_s = 12.0

[phantom]
coils = 2

[recon]
mode = "ZeroFilled"
"#;

fn write_config(dir: &Path) -> String {
    let p = dir.join("small.toml");
    std::fs::write(&p, SMALL).unwrap();
    p.to_str().unwrap().to_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn staged_pipeline_produces_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = write_config(d);

    ok(&["pattern", "--config", &cfg, "--out", s(&d.join("sched.json"))]);
    let sched: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.join("sched.json")).unwrap()).unwrap();
    assert_eq!(sched["nav_events"].as_array().unwrap().len(), 12);

    let raw = d.join("raw");
    ok(&["simulate", "--config", &cfg, "--out", s(&raw)]);
    assert!(d.join("raw.json").is_file() && d.join("raw.bin").is_file());

    ok(&["navimages", "--raw", s(&raw), "--out", s(&d.join("navs"))]);
    assert_eq!(std::fs::read_dir(d.join("navs")).unwrap().count(), 12);

    ok(&["motion", "--raw", s(&raw), "--mode", "2d", "--out", s(&d.join("t2.json"))]);
    ok(&["motion", "--raw", s(&raw), "--mode", "1d", "--out", s(&d.join("t1.json"))]);

    for (trace, bins) in [("t2.json", "b2.json"), ("t1.json", "b1.json")] {
        ok(&[
            "bin",
            "--trace",
            s(&d.join(trace)),
            "--raw",
            s(&raw),
            "--phases",
            "4",
            "--out",
            s(&d.join(bins)),
        ]);
    }
    let b2: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.join("b2.json")).unwrap()).unwrap();
    assert!(b2["selected_state"]["Shift"].is_array());

    for (bins, vols) in [("b2.json", "nav2d.rnavvol"), ("b1.json", "nav1d.rnavvol")] {
        ok(&[
            "recon",
            "--raw",
            s(&raw),
            "--bins",
            s(&d.join(bins)),
            "--mode",
            "zf",
            "--out",
            s(&d.join(vols)),
        ]);
    }

    let v2 = d.join("nav2d.rnavvol");
    let v1 = d.join("nav1d.rnavvol");
    ok(&["metrics", "--vols", s(&v1), s(&v2), "--out", s(&d.join("metrics.json"))]);
    let m: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.join("metrics.json")).unwrap()).unwrap();
    let names: Vec<&str> = m["methods"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["name"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["nav1d", "nav2d"]);
    assert_eq!(m["methods"][0]["samples"].as_array().unwrap().len(), 18 * 4);

    let out = ok(&["compare", "--vols", s(&v1), s(&v2), "--out", s(&d.join("cmp"))]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("nav2d"));
    assert!(d.join("cmp/table.txt").is_file());
    assert!(d.join("cmp/diff_nav1d_vs_nav2d_p00_s00.pgm").is_file());
}

#[test]
fn run_writes_manifest_and_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out_dir = tmp.path().join("out");
    let out = ok(&["--threads", "1", "run", "--config", &cfg, "--out", s(&out_dir)]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("2-D Nav") && stdout.contains("exact hits"));
    for f in ["manifest.json", "report.json", "metrics.json", "table.txt", "vols_nav2d.rnavvol"] {
        assert!(out_dir.join(f).is_file(), "missing {f}");
    }
}

#[test]
fn seed_flag_changes_noise_only() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = write_config(d);
    ok(&["--seed", "1", "simulate", "--config", &cfg, "--out", s(&d.join("a"))]);
    ok(&["--seed", "1", "simulate", "--config", &cfg, "--out", s(&d.join("b"))]);
    ok(&["--seed", "2", "simulate", "--config", &cfg, "--out", s(&d.join("c"))]);
    let read = |n: &str| std::fs::read(d.join(n)).unwrap();
    assert_eq!(read("a.bin"), read("b.bin"));
    assert_ne!(read("a.bin"), read("c.bin"));
}

#[test]
fn exit_codes_follow_the_failing_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();

    let bad = d.join("bad.toml");
    std::fs::write(&bad, "phases = 0\n").unwrap();
    let out = respnav(&["simulate", "--config", s(&bad), "--out", s(&d.join("x"))]);
    assert_eq!(out.status.code(), Some(2));

    let garbled = d.join("garbled.toml");
    std::fs::write(&garbled, "phases = [\n").unwrap();
    let out = respnav(&["pattern", "--config", s(&garbled), "--out", s(&d.join("p.json"))]);
    assert_eq!(out.status.code(), Some(2));

    let out = respnav(&["navimages", "--raw", s(&d.join("missing")), "--out", s(d)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let out = respnav(&["recon", "--raw", "x", "--bins", "y", "--mode", "bogus", "--out", "z"]);
    assert_eq!(out.status.code(), Some(2), "clap usage errors exit with 2");
}
