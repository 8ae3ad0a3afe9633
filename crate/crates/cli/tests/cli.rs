use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use levy_mlmc::config::PresetName;
use levy_mlmc::presets;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_levy-mlmc"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

#[test]
fn dry_run_matches_golden_files() {
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    for p in presets::ALL {
        let name = p.to_string();
        let out = run(&["dry-run", "--preset", &name]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let path = golden_dir().join(format!("{name}.json"));
        if update {
            fs::write(&path, &out.stdout).unwrap();
        }
        let golden = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(String::from_utf8(out.stdout).unwrap(), golden, "preset {name} drifted from its golden file");
    }
}

#[test]
fn run_dry_run_flag_prints_the_plan_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("o");
    let out = run(&["run", "--preset", "poisson1", "--dry-run", "--out", o.to_str().unwrap()]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let l1 = &v["plans"][1]["levels"];
    assert_eq!(l1[0]["samples"], 33);
    assert_eq!(l1[1]["samples"], 14);
    assert!((l1[1]["eps_l"].as_f64().unwrap() - (0.3f64 / 1.7).powi(3)).abs() < 1e-15);
    assert!(!o.exists());
}

#[test]
fn custom_config_with_missing_field_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = presets::preset(PresetName::Poisson1).unwrap();
    let mut t = toml::Table::try_from(&cfg).unwrap();
    t.insert("preset".into(), "custom".into());
    t["problem"].as_table_mut().unwrap()["subordinator"].as_table_mut().unwrap().remove("family");
    let path = dir.path().join("missing-field.toml");
    fs::write(&path, toml::to_string(&t).unwrap()).unwrap();
    let out = run(&["run", "--preset", "custom", "--config", path.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("problem.subordinator") && err.contains("family"), "{err}");
}

#[test]
fn missing_source_is_an_error() {
    let out = run(&["dry-run"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--preset"));
}

fn strip_timing(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(m) => {
            m.remove("wallclock_s");
            m.values_mut().for_each(strip_timing);
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

fn rmse_without_timing(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect()
}

#[test]
fn same_seed_reproduces_outputs_for_any_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut outs = Vec::new();
    for threads in ["1", "2"] {
        let o = dir.path().join(threads);
        let out = run(&[
            "run", "--preset", "poisson1", "--scale", "0.05", "--levels", "2", "--reference-level", "2", "--runs", "2",
            "--seed", "17", "--threads", threads, "--out", o.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        outs.push(o);
    }
    let json = |o: &Path| {
        let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(o.join("result.json")).unwrap()).unwrap();
        strip_timing(&mut v);
        v
    };
    assert_eq!(json(&outs[0]), json(&outs[1]));
    for variant in ["mlmc-adapted", "mlmc-uniform"] {
        let (a, b) = (outs[0].join(variant), outs[1].join(variant));
        assert_eq!(rmse_without_timing(&a.join("rmse.csv")), rmse_without_timing(&b.join("rmse.csv")));
        for f in ["levels.csv", "mean_field.csv"] {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{variant}/{f}");
        }
    }
    assert_eq!(fs::read(outs[0].join("reference_field.csv")).unwrap(), fs::read(outs[1].join("reference_field.csv")).unwrap());

    let rmse = fs::read_to_string(outs[0].join("mlmc-adapted/rmse.csv")).unwrap();
    let mut lines = rmse.lines();
    assert_eq!(lines.next(), Some("level,h_L,rmse,fitted_rate,wallclock_s"));
    assert_eq!(lines.count(), 2);
    let levels = fs::read_to_string(outs[0].join("mlmc-adapted/levels.csv")).unwrap();
    assert_eq!(levels.lines().next(), Some("level,M,VAR,cost"));
    assert_eq!(levels.lines().count(), 3);
    let field = fs::read_to_string(outs[0].join("mlmc-adapted/mean_field.csv")).unwrap();
    assert_eq!(field.lines().next(), Some("x,y,u"));
    assert_eq!(field.lines().count(), 1 + 401 * 401);
}

#[test]
fn emit_plot_writes_both_tables() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("rmse.csv");
    let mut text = String::from("level,h_L,rmse,fitted_rate,wallclock_s\n");
    for l in 0..3 {
        let h = 0.3 / 1.7f64.powi(l);
        text += &format!("{},{h},{},,{}\n", l + 1, 2.0 * h, 0.5 * (l + 1) as f64);
    }
    fs::write(&input, text).unwrap();
    let out = dir.path().join("plot");
    let o = run(&["emit-plot", "--input", input.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ll = fs::read_to_string(out.join("rmse_loglog.csv")).unwrap();
    let slope: f64 = ll.lines().next().unwrap().strip_prefix("# slope ").unwrap().parse().unwrap();
    assert!((slope - 1.0).abs() < 1e-12);
    let tte = fs::read_to_string(out.join("time_to_error.csv")).unwrap();
    let last = tte.lines().last().unwrap();
    assert!(last.starts_with("3,"), "{last}");

    let single = dir.path().join("one.csv");
    fs::write(&single, "level,h_L,rmse,fitted_rate,wallclock_s\n1,0.3,0.1,,1\n").unwrap();
    let o = run(&["emit-plot", "--input", single.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
}
