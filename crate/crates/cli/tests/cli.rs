use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const CFG_A: &str = "\
# CFG-A, small desk run
dim = 1
domain.length = 1.0
grid.n = 32
time.t_final = 0.1
time.dt = 0.005
scheme = imex
bc = neumann
coeff.a11 = 1
coeff.a12 = 1
coeff.a21 = 1
coeff.a22 = 1
coeff.b1 = 1
coeff.b2 = 1
coeff.c1 = 1
coeff.c2 = 1
coeff.a1 = 1
coeff.a2 = 1
coeff.d1 = 1
coeff.d2 = 1
initial.u = bump(0.5, 0.1, 2)
initial.v = cosine(1, 0.5, 1)
terminal.u = cosine(1, 0.5, 1)
terminal.v = cosine(1, 0.5, 1)
output.stride = 5
";

fn skt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skt"))
        .args(args)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn check_reports_conditions_for_cfg_a() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "a.cfg", CFG_A);
    let o = skt(&["check", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("holds_coef_cond = true"));
    assert!(text.contains("holds_1_5c = true"));
    assert!(text.contains("max_alpha = 0.79289"));
}

#[test]
fn config_errors_exit_2_with_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("unknown.cfg", format!("{CFG_A}grid.m = 3\n"), "grid.m"),
        (
            "negative.cfg",
            CFG_A.replace("coeff.a12 = 1", "coeff.a12 = -1"),
            "coeff.a12",
        ),
        ("duplicate.cfg", format!("{CFG_A}grid.n = 16\n"), "line 4"),
        (
            "missing.cfg",
            CFG_A.replace("coeff.d2 = 1\n", ""),
            "coeff.d2",
        ),
    ];
    for (name, text, needle) in cases {
        let cfg = write_config(dir.path(), name, &text);
        let o = skt(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 2, "{name}");
        let err = stderr(&o);
        assert!(err.starts_with("SKT-ERR:2:"), "{err}");
        assert!(err.contains(needle), "{name}: {err}");
    }
    assert_eq!(code(&skt(&["check"])), 2);
    assert_eq!(code(&skt(&["frobnicate"])), 2);
    assert_eq!(
        code(&skt(&["check", "--config", "/nonexistent/skt.cfg"])),
        2
    );
}

#[test]
fn unstable_explicit_run_exits_3_with_bound() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "x.cfg",
        &CFG_A.replace("scheme = imex", "scheme = explicit"),
    );
    let o = skt(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3);
    let err = stderr(&o);
    assert!(
        err.starts_with("SKT-ERR:3:") && err.contains("bound"),
        "{err}"
    );
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "a.cfg", CFG_A);
    let o = Command::new(env!("CARGO_BIN_EXE_skt"))
        .args(["check", "--config", cfg.to_str().unwrap()])
        .env("SKT_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn verify_algebra_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "a.cfg", CFG_A);
    let out = dir.path().join("v");
    let o = skt(&[
        "verify",
        "--config",
        cfg.to_str().unwrap(),
        "--campaign",
        "algebra",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    let text = stdout(&o);
    assert_eq!(
        text.lines().filter(|l| l.starts_with("PASS")).count(),
        4,
        "{text}"
    );
    assert!(out.join("algebra.csv").exists());
    assert!(out.join("algebra_summary.txt").exists());
}

#[test]
fn verify_failure_exits_4() {
    // A bump far narrower than the grid spacing: the explicit and IMEX runs
    // are not yet in their asymptotic regime and the pairing does not halve.
    let dir = tempfile::tempdir().unwrap();
    let text = CFG_A
        .replace("bump(0.5, 0.1, 2)", "bump(0.5, 0.01, 5)")
        .replace("time.t_final = 0.1", "time.t_final = 0.01")
        .replace("time.dt = 0.005", "time.dt = 1e-5")
        .replace("grid.n = 32", "grid.n = 4");
    let cfg = write_config(dir.path(), "z.cfg", &text);
    let o = skt(&[
        "verify",
        "--config",
        cfg.to_str().unwrap(),
        "--campaign",
        "uniqueness",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 4, "{}{}", stdout(&o), stderr(&o));
    assert!(stderr(&o).starts_with("SKT-ERR:4:"));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn simulate_adjoint_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "a.cfg", CFG_A);
    let out = dir.path().join("run");
    let (c, o) = (cfg.to_str().unwrap(), out.to_str().unwrap());

    let r = skt(&["simulate", "--config", c, "--out", o]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    for f in [
        "config.txt",
        "diagnostics.csv",
        "snapshots/index.csv",
        "snapshots/u_00000000.txt",
        "snapshots/u_00000020.txt",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let header = fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    assert!(header.starts_with(
        "step,t,mass_u,mass_v,min_u,min_v,l2_u,l2_v,h1_u,h1_v,l4_pair,gradp_l2,lapp_l2,wtd_dtu_l2\n"
    ));

    let r = skt(&["adjoint", "--config", c, "--out", o]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    assert!(stdout(&r).contains("gronwall_holds = true"));
    let adj = fs::read_to_string(out.join("adjoint.csv")).unwrap();
    assert!(adj.starts_with("step,t,h1_phi,weighted_lap_partial,dt_l43_partial\n"));
    assert!(adj.contains("sup_h1 = "));

    let r = skt(&["report", "--config", c, "--out", o]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    assert!(stdout(&r).contains("== diagnostics.csv"));
    assert!(out.join("report/summary.txt").exists());
    assert!(out.join("report/plot.gp").exists());
    assert!(out.join("report/diagnostics_mass_u.dat").exists());
}

#[test]
fn adjoint_rejects_a_stored_run_on_another_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "a.cfg", CFG_A);
    let other = write_config(
        dir.path(),
        "b.cfg",
        &CFG_A.replace("grid.n = 32", "grid.n = 16"),
    );
    let out = dir.path().join("run");
    let o = out.to_str().unwrap();
    assert_eq!(
        code(&skt(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            o
        ])),
        0
    );
    let r = skt(&["adjoint", "--config", other.to_str().unwrap(), "--out", o]);
    assert_eq!(code(&r), 2, "{}", stderr(&r));
    assert!(stderr(&r).contains("mismatch"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "a.cfg", CFG_A);
    let c = cfg.to_str().unwrap();
    let mut outputs = Vec::new();
    for (k, threads) in ["1", "4"].iter().enumerate() {
        let out = dir.path().join(format!("run{k}"));
        for cmd in ["simulate", "adjoint"] {
            let r = Command::new(env!("CARGO_BIN_EXE_skt"))
                .args([cmd, "--config", c, "--out", out.to_str().unwrap()])
                .env("SKT_THREADS", threads)
                .output()
                .unwrap();
            assert_eq!(code(&r), 0, "{}", stderr(&r));
        }
        outputs.push(out);
    }
    let mut files = Vec::new();
    collect(&outputs[0], &mut files);
    assert!(files.len() > 5);
    for f in files {
        let rel = f.strip_prefix(&outputs[0]).unwrap();
        if rel.starts_with("config.txt") {
            continue;
        }
        let a = fs::read(&f).unwrap();
        let b = fs::read(outputs[1].join(rel)).unwrap();
        assert!(a == b, "{} differs", rel.display());
    }
}

fn collect(dir: &Path, files: &mut Vec<PathBuf>) {
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            collect(&p, files);
        } else {
            files.push(p);
        }
    }
}
