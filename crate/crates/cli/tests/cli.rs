use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn mfe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfe"))
        .args(args)
        .output()
        .expect("failed to launch mfe")
}

fn ok(args: &[&str]) {
    let out = mfe(args);
    assert!(
        out.status.success(),
        "mfe {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file but the manifest, which records wall time.
fn assert_same_outputs(a: &Path, b: &Path) {
    let mut names: Vec<_> = fs::read_dir(a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .filter(|n| n != "manifest.txt")
        .collect();
    names.sort();
    assert!(!names.is_empty());
    for n in names {
        let x = fs::read(a.join(&n)).unwrap();
        let y = fs::read(b.join(&n)).unwrap_or_else(|_| panic!("{n:?} missing in second run"));
        assert!(x == y, "{n:?} differs between runs");
    }
}

fn write_params(dir: &Path, edit: impl Fn(String) -> String) -> PathBuf {
    let text = fs::read_to_string(configs().join("baseline.toml")).unwrap();
    let p = dir.join("params.toml");
    fs::write(&p, edit(text)).unwrap();
    p
}

#[test]
fn solve_is_deterministic_and_writes_all_tables() {
    let tmp = TempDir::new().unwrap();
    let params = configs().join("baseline.toml");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for (out, threads) in [(&a, "1"), (&b, "3")] {
        ok(&[
            "--threads",
            threads,
            "solve",
            "--params",
            path(&params),
            "--out",
            path(out),
            "--grid",
            "7",
        ]);
    }
    for f in [
        "moments.csv",
        "deciles.csv",
        "single_dist.csv",
        "married_dist.csv",
        "manifest.txt",
    ] {
        assert!(a.join(f).exists(), "{f} not written");
    }
    assert_same_outputs(&a, &b);
    let manifest = fs::read_to_string(a.join("manifest.txt")).unwrap();
    assert!(manifest.contains("alpha_l = 2.335"));
    assert!(manifest.contains("outer iterations"));
}

#[test]
fn simulate_and_event_study_are_deterministic() {
    let tmp = TempDir::new().unwrap();
    let params = configs().join("baseline.toml");
    let runs: Vec<PathBuf> = ["a", "b"].iter().map(|n| tmp.path().join(n)).collect();
    for out in &runs {
        ok(&[
            "simulate",
            "--params",
            path(&params),
            "--out",
            path(out),
            "--seed",
            "11",
            "--agents",
            "400",
            "--periods",
            "25",
            "--grid",
            "7",
        ]);
        ok(&[
            "event-study",
            "--panel",
            path(&out.join("panel.csv")),
            "--out",
            path(
                &tmp.path()
                    .join(format!("es-{}", out.file_name().unwrap().to_str().unwrap())),
            ),
            "--window",
            "-4:6",
        ]);
    }
    assert_same_outputs(&runs[0], &runs[1]);
    assert_same_outputs(&tmp.path().join("es-a"), &tmp.path().join("es-b"));

    let other = tmp.path().join("c");
    ok(&[
        "simulate",
        "--params",
        path(&params),
        "--out",
        path(&other),
        "--seed",
        "12",
        "--agents",
        "400",
        "--periods",
        "25",
        "--grid",
        "7",
    ]);
    assert_ne!(
        fs::read(runs[0].join("panel.csv")).unwrap(),
        fs::read(other.join("panel.csv")).unwrap()
    );
}

#[test]
fn decompose_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let base = configs().join("baseline.toml");
    let cf = configs().join("regime_2005.toml");
    let runs: Vec<PathBuf> = ["a", "b"].iter().map(|n| tmp.path().join(n)).collect();
    for out in &runs {
        ok(&[
            "decompose",
            "--params",
            path(&base),
            "--counterfactual",
            path(&cf),
            "--out",
            path(out),
            "--grid",
            "7",
        ]);
    }
    assert_same_outputs(&runs[0], &runs[1]);
    let csv = fs::read_to_string(runs[0].join("decomposition.csv")).unwrap();
    let labels: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(
        labels,
        [
            "Baseline",
            "Leisure Technology",
            "Female Wage",
            "Social Norms",
            "All",
            "Explained share"
        ]
    );
}

#[test]
fn calibrate_is_deterministic_and_reloadable() {
    let tmp = TempDir::new().unwrap();
    let params = configs().join("baseline.toml");
    let targets = tmp.path().join("targets.toml");
    fs::write(
        &targets,
        "[optimizer]\nmax_evals = 24\nlhs_points = 4\nrestarts = 2\n\n\
         [[free]]\nname = \"alpha_l\"\nlower = 1.5\nupper = 3.0\n\n\
         [[target]]\nname = \"single_l_m\"\ndata = 0.55\n",
    )
    .unwrap();
    let runs: Vec<PathBuf> = ["a", "b"].iter().map(|n| tmp.path().join(n)).collect();
    for out in &runs {
        ok(&[
            "calibrate",
            "--params",
            path(&params),
            "--targets",
            path(&targets),
            "--out",
            path(out),
            "--seed",
            "3",
            "--grid",
            "5",
        ]);
    }
    assert_same_outputs(&runs[0], &runs[1]);
    let fitted = runs[0].join("fitted_params.toml");
    ok(&[
        "solve",
        "--params",
        path(&fitted),
        "--out",
        path(&tmp.path().join("refit")),
    ]);
    let header = fs::read_to_string(runs[0].join("trace.csv")).unwrap();
    assert!(header.starts_with("evaluation,loss,alpha_l"), "{header}");
}

#[test]
fn missing_key_is_a_config_error_naming_the_key() {
    let tmp = TempDir::new().unwrap();
    let p = write_params(tmp.path(), |t| t.replace("theta = 0.831\n", ""));
    let out = mfe(&[
        "solve",
        "--params",
        path(&p),
        "--out",
        path(&tmp.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("theta"));
}

#[test]
fn invalid_value_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let p = write_params(tmp.path(), |t| {
        t.replace("gamma_l = 1.341", "gamma_l = 1.0")
    });
    let out = mfe(&[
        "solve",
        "--params",
        path(&p),
        "--out",
        path(&tmp.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma_l"));
}

#[test]
fn unknown_moment_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let targets = tmp.path().join("t.toml");
    fs::write(&targets, "[[free]]\nname = \"theta\"\nlower = 0.5\nupper = 0.9\n\n[[target]]\nname = \"nope\"\ndata = 1.0\n").unwrap();
    let params = configs().join("baseline.toml");
    let out = mfe(&[
        "calibrate",
        "--params",
        path(&params),
        "--targets",
        path(&targets),
        "--out",
        path(&tmp.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
}

#[test]
fn usage_and_io_exit_codes() {
    assert_eq!(mfe(&["solve"]).status.code(), Some(2));
    assert_eq!(mfe(&["frobnicate"]).status.code(), Some(2));
    let tmp = TempDir::new().unwrap();
    let out = mfe(&[
        "event-study",
        "--panel",
        path(&tmp.path().join("none.csv")),
        "--out",
        path(tmp.path()),
        "--window",
        "3:1",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = mfe(&[
        "event-study",
        "--panel",
        path(&tmp.path().join("none.csv")),
        "--out",
        path(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn window_without_reference_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let params = configs().join("baseline.toml");
    let sim = tmp.path().join("sim");
    ok(&[
        "simulate",
        "--params",
        path(&params),
        "--out",
        path(&sim),
        "--seed",
        "1",
        "--agents",
        "50",
        "--periods",
        "5",
        "--grid",
        "5",
    ]);
    let out = mfe(&[
        "event-study",
        "--panel",
        path(&sim.join("panel.csv")),
        "--out",
        path(tmp.path()),
        "--window",
        "0:4",
    ]);
    assert_eq!(out.status.code(), Some(3));
}
