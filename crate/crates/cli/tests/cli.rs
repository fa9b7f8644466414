use std::path::Path;
use std::process::{Command, Output};

use slowfast_core::config::CONFIG_KEYS;

const BASE: &str = r#"
seed = 9
[basis]
modes = 4
[coefficients]
preset = "linear-ou"
alpha = 2.0
[simulation]
epsilons = [0.5, 0.1]
t_end = 0.2
dt_slow = 0.01
[harness]
replicas = 8
"#;

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, format!("{BASE}{extra}")).unwrap();
    path
}

fn slowfast(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_slowfast"));
    cmd.args(args).env_remove("SLOWFAST_SEED");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn run_with(extra: &str, sub: &str, flags: &[&str]) -> (Output, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), extra);
    let out = dir.path().join("out");
    let mut args = vec![
        sub,
        "--config",
        cfg.to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(flags);
    (slowfast(&args, &[]), dir)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_lists_every_config_key() {
    let o = slowfast(&["--help"], &[]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for (key, _) in CONFIG_KEYS {
        assert!(text.contains(key), "help is missing {key}");
    }
    assert!(text.contains("SLOWFAST_SEED"));
}

#[test]
fn verify_a2_on_admissible_spectrum_exits_zero() {
    let (o, dir) = run_with("", "verify", &["--select", "a2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = std::fs::read_to_string(dir.path().join("out/verify.csv")).unwrap();
    assert!(table.starts_with("name,statistic,threshold,comparison,pass\n"));
    assert_eq!(table.lines().filter(|l| l.ends_with(",true")).count(), 2);
}

#[test]
fn failing_check_exits_three() {
    let (o, _dir) = run_with("samples = 2\n", "verify", &["--select", "wiener-cov"]);
    // The [harness] table is last in BASE, so `samples` lands there.
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn degenerate_converge_reports_zero_differences() {
    let extra = "[coefficients.params]\nfeedback = 0.0\nself_drift = -0.5\n";
    let (o, dir) = run_with(extra, "converge", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("out/convergence.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("epsilon,e_sup_diff,stderr,p_exceed,p_stderr,wall_time_s")
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        let f: Vec<f64> = row.split(',').take(4).map(|x| x.parse().unwrap()).collect();
        assert_eq!(f[1], 0.0, "{row}");
        assert_eq!(f[3], 0.0, "{row}");
    }
    let svg = std::fs::read_to_string(dir.path().join("out/convergence.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 1);
}

#[test]
fn converge_is_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(format!("out{threads}"));
        let o = slowfast(
            &[
                "converge",
                "--config",
                cfg.to_str().unwrap(),
                "--threads",
                threads,
                "--output",
                out.to_str().unwrap(),
            ],
            &[],
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        outputs.push(std::fs::read(out.join("convergence.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn overflowing_simulation_exits_two_with_time() {
    let (o, _dir) = run_with("[coefficients.params]\nself_drift = 1e10\n", "simulate", &[]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("numerical failure at t = "), "{}", stderr(&o));
}

#[test]
fn dissipativity_violation_exits_one_with_key() {
    let text = BASE.replace("alpha = 2.0", "alpha = 0.5");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, text).unwrap();
    let o = slowfast(&["simulate", "--config", path.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("coefficients.alpha"), "{}", stderr(&o));
}

#[test]
fn dt_fast_above_dt_slow_exits_one() {
    let text = BASE.replace("dt_slow = 0.01", "dt_slow = 0.01\ndt_fast = 0.02");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, text).unwrap();
    let o = slowfast(&["simulate", "--config", path.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("simulation.dt_fast"), "{}", stderr(&o));
}

#[test]
fn unknown_key_and_missing_file_exit_one() {
    let (o, _dir) = run_with("[output]\ndirectory = \"x\"\n", "simulate", &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("output.directory"), "{}", stderr(&o));
    let o = slowfast(&["simulate", "--config", "/nonexistent/run.toml"], &[]);
    assert_eq!(o.status.code(), Some(1));
    let o = slowfast(&["simulate"], &[]);
    assert_eq!(o.status.code(), Some(1));
    let o = slowfast(&["frobnicate"], &[]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn seed_precedence_flag_then_env_then_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let cfg = cfg.to_str().unwrap();
    let read = |name: &str, args: &[&str], envs: &[(&str, &str)]| {
        let out = dir.path().join(name);
        let mut a = vec!["simulate", "--config", cfg, "--output", out.to_str().unwrap()];
        a.extend_from_slice(args);
        let o = slowfast(&a, envs);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        std::fs::read(out.join("trajectory_eps0.1.csv")).unwrap()
    };
    let file = read("file", &[], &[]);
    let env5 = read("env5", &[], &[("SLOWFAST_SEED", "5")]);
    let flag5 = read("flag5", &["--seed", "5"], &[("SLOWFAST_SEED", "6")]);
    let flag9 = read("flag9", &["--seed", "9"], &[]);
    assert_eq!(env5, flag5);
    assert_eq!(file, flag9);
    assert_ne!(file, env5);
    let o = slowfast(&["simulate", "--config", cfg], &[("SLOWFAST_SEED", "abc")]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn average_writes_the_estimate() {
    let (o, dir) = run_with("[averaging]\ndrift = \"estimated\"\nt_avg = 40.0\n", "average", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("out/averaged_drift.csv")).unwrap();
    assert!(csv.starts_with("x_1,x_2,x_3,x_4,bbar_1"));
    assert_eq!(csv.lines().count(), 2);
}
