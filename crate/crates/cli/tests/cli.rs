use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};
use tilt_core::{classify_regime, derive_params};

fn tilt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tilt")).args(args).output().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn malformed_config_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "scenario = \"coupled\"\ncs2 = 0.4\n[integrator]\ndt = \"fast\"\n").unwrap();
    let o = tilt(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 4"), "{err}");
    assert!(!out.exists());

    std::fs::write(&cfg, "scenario = \"coupled\"\ncs2 = 1.2\n").unwrap();
    let o = tilt(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cs2"));
    assert!(!out.exists());
}

#[test]
fn subcommand_must_match_scenario() {
    let o = tilt(&["coupled", "--preset", "vacuum"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn rates_manifest_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let o = tilt(&["rates", "--cs2", "0.6", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let m = json(&dir.path().join("manifest.json"));
    assert_eq!(m["config"]["cs2"], 0.6);
    let arts = m["artifacts"].as_array().unwrap();
    assert!(arts.len() >= 2);
    for a in arts {
        let bytes = std::fs::read(dir.path().join(a["path"].as_str().unwrap())).unwrap();
        let h: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(a["sha256"].as_str().unwrap(), h);
    }
    let csv = std::fs::read_to_string(dir.path().join("rate_table.csv")).unwrap();
    assert!(csv.starts_with("coefficient,exponent,"));
}

#[test]
fn vacuum_preset_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = tilt(&["background", "--preset", "vacuum", "--threads", "1", "--out", d.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    }
    let r = json(&a.join("report.json"));
    let c = &r["checks"][0];
    assert_eq!(c["name"], "de_sitter_max_rel_err");
    assert!(c["value"].as_f64().unwrap() <= 1e-9);
    for f in ["background.csv", "constraints.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }
}

#[test]
fn euler_report_carries_density_target() {
    let dir = tempfile::tempdir().unwrap();
    let o = tilt(&["euler-flrw", "--preset", "euler-inhomogeneous", "--cs2", "0.8", "--out", dir.path().to_str().unwrap()]);
    // the extreme-tilt indicator drift check fails for this preset
    assert_eq!(o.status.code(), Some(1));
    let r = json(&dir.path().join("report.json"));
    let p = derive_params(0.8, 3.0).unwrap();
    let rate = r["rates"].as_array().unwrap().iter().find(|x| x["quantity"] == "rho2rs_hat").unwrap();
    let target = -4.0 * p.rs / (1.0 - 2.0 * p.rs);
    assert!((rate["target"].as_f64().unwrap() - target).abs() < 1e-12);
    assert!(rate["relative_deviation"].as_f64().unwrap() < 0.05);
    assert!(dir.path().join("final_state.csv").exists());
}

#[test]
fn sweep_regimes_and_tilt_rates() {
    let dir = tempfile::tempdir().unwrap();
    let o = tilt(&["sweep", "--preset", "euler-homogeneous", "--grid", "0.2, 1/3, 0.4, 0.6", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = json(&dir.path().join("sweep.json"));
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 4);
    for r in rows {
        let cs2 = r["cs2"].as_f64().unwrap();
        assert_eq!(r["regime"].as_str().unwrap(), classify_regime(cs2).unwrap().as_str());
        let fitted = r["tilt_rate_fitted"].as_f64().unwrap();
        let target = r["tilt_rate_target"].as_f64().unwrap();
        if cs2 > 0.34 {
            assert!((fitted / target - 1.0).abs() < 0.02, "cs2 {cs2}: {fitted} vs {target}");
        } else if cs2 < 0.3 {
            // u_1 of the orthogonal flow decays at (3 cs2 - 1) H
            assert!((fitted - (3.0 * cs2 - 1.0)).abs() < 0.02, "cs2 {cs2}: {fitted}");
        }
    }

    let empty = dir.path().join("empty");
    let o = tilt(&["sweep", "--preset", "euler-homogeneous", "--grid", "", "--out", empty.to_str().unwrap()]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(empty.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
}

#[test]
fn abort_keeps_last_good_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    let out = dir.path().join("out");
    std::fs::write(
        &cfg,
        "scenario = \"coupled\"\nband_limit = 4\nt0 = 2.0\nt_end = 30.0\n[perturbation]\namplitude = 1e-4\n[integrator]\ndt = 2.75\noutput_interval = 2.75\nenforce_step_limits = false\n",
    )
    .unwrap();
    let o = tilt(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("last_good_snapshot.csv"));
    let snap = std::fs::read_to_string(out.join("last_good_snapshot.csv")).unwrap();
    assert!(snap.starts_with("t,field,index,coeff"));
    let m = json(&out.join("manifest.json"));
    assert!(m["failure"].is_string());
    assert_eq!(m["last_good_snapshot"], "last_good_snapshot.csv");
}
