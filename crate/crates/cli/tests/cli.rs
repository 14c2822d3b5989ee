use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use outage_cli::commands::{read_sweep_csv, SWEEP_HEADER};

/// Small enough that a full pipeline takes a few seconds.
const TINY: &str = r#"{
  "seed": 11,
  "sim": { "n_taps": 64, "k": 20, "l": 5, "resource_count": 4 },
  "data": { "n_windows": 300 },
  "train": { "epochs": 1, "batch_size": 64, "replicate_count": 2, "hidden": 8, "dense": 4 },
  "eval": { "n_episodes": 2000, "q_th_grid": [0.0, 0.5, 1.0], "l_grid": [10, 20, 30, 40] }
}"#;

fn outage(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_outage")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn generate_writes_a_reproducible_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = outage(&["generate", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(String::from_utf8_lossy(&o.stdout).contains("300 records"));
    }
    let da = fs::read(a.join("dataset.outageds")).unwrap();
    assert_eq!(da, fs::read(b.join("dataset.outageds")).unwrap());

    let c = dir.path().join("c");
    let o = outage(&["generate", "--config", &cfg, "--out", c.to_str().unwrap(), "--seed", "12"]);
    assert!(o.status.success());
    assert_ne!(da, fs::read(c.join("dataset.outageds")).unwrap());
}

#[test]
fn nondividing_resource_count_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"sim": {"resource_count": 6}}"#);
    let o = outage(&["generate", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sim.resource_count"), "{}", stderr(&o));
    assert!(!dir.path().join("dataset.outageds").exists());
}

#[test]
fn unknown_key_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "{\n  \"sim\": {\n    \"gama_th\": 0.5\n  }\n}");
    let o = outage(&["generate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("gama_th") && msg.contains("line 3"), "{msg}");
}

#[test]
fn missing_inputs_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    let o = outage(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("outage generate"), "{}", stderr(&o));

    let o = outage(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("outage train"), "{}", stderr(&o));

    let o = outage(&["generate", "--config", dir.path().join("nope.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn dataset_must_match_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().to_str().unwrap();
    assert!(outage(&["generate", "--config", &cfg, "--out", out]).status.success());
    let other = write_config(dir.path(), &TINY.replace("\"l\": 5", "\"l\": 6"));
    let o = outage(&["train", "--config", &other, "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sim.l"), "{}", stderr(&o));
}

#[test]
fn bad_axis_is_a_usage_error() {
    let o = outage(&["sweep", "--axis", "k"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn full_pipeline_emits_parseable_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    for cmd in ["generate", "train"] {
        let o = outage(&[cmd, "--config", &cfg, "--out", out_s]);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
    }
    // loss_kind defaults to all four kinds
    for kind in ["custom", "bce", "mse", "mae"] {
        for r in 0..2 {
            assert!(out.join(format!("params/{kind}_r{r}.outageqp")).exists());
            let h = fs::read_to_string(out.join(format!("history/{kind}_r{r}.csv"))).unwrap();
            assert!(h.starts_with("step,epoch,loss_kind,loss_value"));
        }
    }
    assert_eq!(fs::read_dir(out.join("params")).unwrap().count(), 8);

    let o = outage(&["sweep", "--config", &cfg, "--out", out_s]);
    assert!(o.status.success(), "{}", stderr(&o));
    let path = out.join("sweep_q_th.csv");
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), SWEEP_HEADER.join(","));
    let rows = read_sweep_csv(&path).unwrap();
    assert_eq!(rows.len(), 3 * 4);
    for w in rows.windows(2) {
        assert!(w[0].axis_value <= w[1].axis_value);
    }
    for r in rows.iter().filter(|r| r.axis_value == 0.0 || r.axis_value == 1.0) {
        let se = (r.stderr * r.stderr + r.empirical_p1 * (1.0 - r.empirical_p1) / r.n_episodes as f64).sqrt();
        assert!((r.mean_outage - r.empirical_p1).abs() < 3.0 * se, "{r:?}");
        assert_eq!(r.n_episodes, 2000);
    }

    let o = outage(&["sweep", "--config", &cfg, "--out", out_s, "--axis", "l"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = read_sweep_csv(&out.join("sweep_l.csv")).unwrap();
    assert_eq!(rows.len(), 4 * 4);
    let ls: Vec<f64> = rows.iter().step_by(4).map(|r| r.axis_value).collect();
    assert_eq!(ls, [10.0, 20.0, 30.0, 40.0]);
}

#[test]
fn quick_verify_passes() {
    let o = outage(&["verify", "--quick"]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{text}\n{}", stderr(&o));
    assert!(text.lines().count() >= 8 && text.lines().all(|l| l.starts_with("PASS ")), "{text}");
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        outage_cli::config::ExperimentConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        n += 1;
    }
    assert!(n >= 2);
}
