use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spatial_r0::cli::{load_model_str, CliError};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spatial-r0"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn example_model(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("examples/models")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn write_model(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn field(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(key))
        .unwrap_or_else(|| panic!("no `{key}` in\n{text}"))
        .trim()
        .parse()
        .unwrap()
}

#[test]
fn check_builtin_defaults_pass() {
    let o = bin(&["check", "--model", "builtin:sis", "--grid-n", "33"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("result    pass"));
}

#[test]
fn check_reports_offending_node() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(example_model("logistic.toml"))
        .unwrap()
        .replace("gamma = \"1 + 0.25*x\"", "gamma = \"x - 0.5\"");
    let p = write_model(dir.path(), "neg.toml", &text);
    let o = bin(&["check", "--model", p.to_str().unwrap(), "--grid-n", "17"]);
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    assert!(out.contains("result    FAIL"));
    assert!(out.contains("node 0 (x = 0.000000000000e0)"), "{out}");
}

#[test]
fn check_staged_with_full_power_incidence() {
    let o = bin(&["check", "--model", "builtin:staged", "--param", "alpha=1", "--grid-n", "17"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("positive totals"));
}

#[test]
fn check_every_example_model_file() {
    for f in ["sis.toml", "zika.toml", "logistic.toml"] {
        let o = bin(&["check", "--model", &example_model(f), "--grid-n", "33"]);
        assert_eq!(o.status.code(), Some(0), "{f}: {}{}", stdout(&o), stderr(&o));
    }
}

#[test]
fn r0_of_constant_sis() {
    for d in ["1e-3", "1", "1e3"] {
        let o = bin(&["r0", "--model", "builtin:sis", "--param", "beta=2", "--d", d, "--grid-n", "65"]);
        assert_eq!(o.status.code(), Some(0));
        let r0 = field(&stdout(&o), "R0 ");
        assert!((r0 - 2.0).abs() < 1e-10, "d = {d}: {r0}");
    }
}

#[test]
fn r0_of_zika_at_small_diffusion() {
    let o = bin(&[
        "r0", "--model", "builtin:zika", "--param", "Hu=2", "--d", "1e-6,1e-6,1e-6", "--grid-n", "4096",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r0 = field(&stdout(&o), "R0 ");
    assert!((r0 - 2.0).abs() < 0.02 * 2.0);
}

#[test]
fn r0_json_is_structured() {
    let o = bin(&["r0", "--model", "builtin:vector-host", "--grid-n", "33", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let r0 = v["r0"].as_f64().unwrap();
    assert!((r0 - 0.5f64.sqrt()).abs() < 1e-9);
    assert!(v["sign"]["agree"].as_bool().unwrap());
}

#[test]
fn validation_errors_exit_one() {
    let cases: [&[&str]; 6] = [
        &["r0", "--model", "builtin:sis", "--grid-n", "2"],
        &["r0", "--model", "builtin:sis", "--d", "-1"],
        &["r0", "--model", "builtin:seir"],
        &["r0", "--model", "builtin:sis", "--param", "delta=1"],
        &["r0", "--model", "builtin:sis", "--bogus"],
        &["sweep", "--model", "builtin:sis", "--log-range", "0:1:0"],
    ];
    for args in cases {
        let o = bin(args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", stderr(&o));
        assert!(!stderr(&o).is_empty());
    }
}

#[test]
fn parse_errors_carry_line_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_model(
        dir.path(),
        "bad.toml",
        "domain = [0.0, 1.0]\n\
         compartments = [{ name = \"I\", infected = true }, { name = \"S\", infected = false }]\n\
         [diffusion]\nI = 1\nS = 1\n[F]\nI = \"S*I +* 2\"\n",
    );
    let o = bin(&["r0", "--model", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.toml:7:11:"), "{}", stderr(&o));
}

#[test]
fn unknown_keys_are_rejected() {
    let text = "domain = [0.0, 1.0]\ncolour = 3\n";
    match load_model_str(text, "m.toml") {
        Err(CliError::Parse { line, column, message, .. }) => {
            assert_eq!((line, column), (2, 1));
            assert!(message.contains("colour"));
        }
        other => panic!("unexpected {other:?}"),
    }
    let nested = "domain = [0.0, 1.0]\ncompartments = [{ name = \"I\", infected = true, size = 2 }]\n[diffusion]\nI = 1\n";
    assert!(matches!(load_model_str(nested, "m.toml"), Err(CliError::Parse { line: 2, .. })));
    let section = std::fs::read_to_string(example_model("sis.toml")).unwrap() + "\n[Vother]\nI = \"I\"\n";
    assert!(matches!(load_model_str(&section, "m.toml"), Err(CliError::Parse { .. })));
}

#[test]
fn unknown_identifier_in_model_file() {
    let text = std::fs::read_to_string(example_model("sis.toml"))
        .unwrap()
        .replace("gamma*I\"\nS", "delta*I\"\nS");
    let err = load_model_str(&text, "sis.toml").unwrap_err();
    assert!(err.to_string().contains("delta"), "{err}");
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn model_file_matches_builtin() {
    let file = bin(&["r0", "--model", &example_model("sis.toml"), "--d", "0.1", "--grid-n", "65"]);
    let built = bin(&["r0", "--model", "builtin:sis", "--d", "0.1", "--grid-n", "65"]);
    let (a, b) = (field(&stdout(&file), "R0 "), field(&stdout(&built), "R0 "));
    assert!((a - b).abs() < 1e-10, "{a} vs {b}");
}

#[test]
fn sweep_of_one_tuple() {
    let o = bin(&["sweep", "--model", "builtin:sis", "--d", "1", "--grid-n", "33"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let data: Vec<&str> = out.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(data.len(), 2);
    assert_eq!(
        data[0],
        "d_I,d_S,r0,s_bf,abs_r0_minus_small,abs_r0_minus_large,env_low,env_high,error"
    );
    assert!(out.contains("# small_oracle=3.000000000000e0"));
    assert!(out.contains("# failed_points=0"));
}

#[test]
fn heterogeneous_sweep_approaches_both_limits() {
    let o = bin(&["sweep", "--model", "builtin:sis", "--log-range", "-6:4:7", "--grid-n", "2049"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let r0: Vec<f64> = out
        .lines()
        .skip(1)
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(r0.len(), 7);
    assert!(r0.windows(2).all(|w| w[1] <= w[0]));
    assert!((r0[0] - 3.0).abs() < 0.06 && (r0[6] - 2.0).abs() < 0.02, "{r0:?}");
}

#[test]
fn sweep_reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, jobs: &str| {
        let p = dir.path().join(name);
        let o = bin(&[
            "sweep", "--model", "builtin:zika", "--seed", "4", "--log-range", "-3:2:6", "--grid-n", "65",
            "--jobs", jobs, "--out", p.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0));
        assert!(o.stdout.is_empty());
        std::fs::read(p).unwrap()
    };
    let a = run("a.csv", "1");
    assert_eq!(a, run("b.csv", "1"));
    assert_eq!(a, run("c.csv", "3"));
}

#[test]
fn limits_report() {
    let o = bin(&["limits", "--model", "builtin:staged", "--param", "m=2", "--grid-n", "33", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let text = v.to_string();
    assert!(text.contains("0.75"), "{text}");
    let table = bin(&["limits", "--model", "builtin:sis", "--grid-n", "65"]);
    let out = stdout(&table);
    assert!((field(&out, "small limit") - 3.0).abs() < 1e-12);
    assert!((field(&out, "large limit") - 2.0).abs() < 1e-12);
}

#[test]
fn simulate_decay_and_growth() {
    let o = bin(&["simulate", "--model", "builtin:sis", "--param", "beta=0.5", "--grid-n", "33", "--d", "0.1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let out = stdout(&o);
    assert!(out.starts_with("t,distance,infected\n"));
    assert!(out.contains("# mode=Decay"));
    assert!(out.contains("# passed=true"));
    let o = bin(&[
        "simulate", "--model", "builtin:sis", "--param", "beta=2", "--grid-n", "33", "--t-end", "5",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("# mode=Growth"));
}

#[test]
fn help_exits_zero() {
    let o = bin(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    for sub in ["check", "r0", "sweep", "limits", "simulate"] {
        assert!(stdout(&o).contains(sub));
    }
}
