//! End-to-end exercises of the `sd6lo` binary: every flag appears in the
//! --help output and is driven at least once against the bundled
//! scenarios.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sd6lo"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn help_covers_every_flag() {
    let top = bin().arg("--help").output().unwrap();
    assert!(top.status.success());
    let text = stdout(&top);
    for sub in ["run", "compare", "validate"] {
        assert!(text.contains(sub), "--help missing subcommand {sub}");
    }
    let run_help = bin().args(["run", "--help"]).output().unwrap();
    let text = stdout(&run_help);
    for flag in [
        "--scenario",
        "--mode",
        "--replicas",
        "--duration",
        "--warmup",
        "--seed",
        "--update-period",
        "--capacity",
        "--jobs",
        "--out",
        "--dump-topology",
    ] {
        assert!(text.contains(flag), "run --help missing {flag}");
    }
    let cmp_help = bin().args(["compare", "--help"]).output().unwrap();
    assert!(stdout(&cmp_help).contains("--out"));
    let val_help = bin().args(["validate", "--help"]).output().unwrap();
    assert!(stdout(&val_help).contains("--scenario"));
}

#[test]
fn validate_accepts_bundled_scenarios() {
    for name in ["reference.scn", "m2m.scn", "lossy.scn"] {
        let out = bin()
            .args(["validate", "--scenario"])
            .arg(scenario(name))
            .output()
            .unwrap();
        assert!(out.status.success(), "{name} failed validation");
        assert!(stdout(&out).contains("26 nodes"), "{name}: {}", stdout(&out));
    }
}

#[test]
fn validate_rejects_broken_scenario() {
    let dir = std::env::temp_dir().join("sd6lo_cli_bad");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("bad.scn");
    std::fs::write(
        &path,
        "[run]\nduration_s = 60\nwarmup_s = 10\n[nodes]\n1 0 0 border_router -\n1 5 5 sender server\n",
    )
    .unwrap();
    let out = bin()
        .args(["validate", "--scenario"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("duplicate node id 1"), "stderr: {err}");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn run_and_compare_smoke() {
    let base = std::env::temp_dir().join("sd6lo_cli_smoke");
    let _ = std::fs::remove_dir_all(&base);
    let out_sdn = base.join("sdn");
    let out_rpl = base.join("rpl");
    let out_cmp = base.join("cmp");

    // Fast smoke run: 1 replica, 60 simulated seconds.
    let run = bin()
        .args(["run", "--mode", "sdn", "--replicas", "1", "--duration", "60"])
        .args(["--warmup", "10", "--seed", "9", "--jobs", "1", "--dump-topology"])
        .arg("--scenario")
        .arg(scenario("reference.scn"))
        .arg("--out")
        .arg(&out_sdn)
        .output()
        .unwrap();
    assert!(run.status.success(), "stderr: {}", String::from_utf8_lossy(&run.stderr));
    assert!(out_sdn.join("metrics_sdn_r000.csv").exists());
    assert!(out_sdn.join("summary_sdn.csv").exists());
    assert!(out_sdn.join("ecdf_sdn.csv").exists());
    assert!(out_sdn.join("topology_sdn.txt").exists());

    // Baseline with the testbed-style overrides applied.
    let run = bin()
        .args(["run", "--mode", "rpl", "--replicas", "1", "--duration", "60"])
        .args(["--warmup", "10", "--seed", "9", "--jobs", "2"])
        .args(["--update-period", "600", "--capacity", "20"])
        .arg("--scenario")
        .arg(scenario("reference.scn"))
        .arg("--out")
        .arg(&out_rpl)
        .output()
        .unwrap();
    assert!(run.status.success());
    assert!(out_rpl.join("summary_rpl.csv").exists());

    let cmp = bin()
        .arg("compare")
        .arg(&out_sdn)
        .arg(&out_rpl)
        .arg("--out")
        .arg(&out_cmp)
        .output()
        .unwrap();
    assert!(cmp.status.success());
    assert!(out_cmp.join("compare.csv").exists());
    assert!(out_cmp.join("ecdf_sdn_a.csv").exists());
    assert!(out_cmp.join("ecdf_rpl_b.csv").exists());
    assert!(stdout(&cmp).contains("mean RTT"));
    let _ = std::fs::remove_dir_all(&base);
}

#[test]
fn run_rejects_missing_scenario() {
    let out = bin()
        .args(["run", "--mode", "sdn", "--scenario", "/no/such/file.scn"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
