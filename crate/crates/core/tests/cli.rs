use std::path::Path;
use std::process::{Command, Output};

use farey_skew::cli::plot::{emit_plot, Plot, PlotError, Series};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_farey-skew"));
    cmd.env_remove("FAREY_SKEW_CONFIG");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn data_rows(o: &Output) -> usize {
    stdout(o).lines().count() - 1
}

#[test]
fn farey_level_two_has_five_rows() {
    let o = run(&["farey", "--level", "2"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "num,den\n0,1\n1,3\n1,2\n2,3\n1,1\n");
    let lifted = run(&["farey", "--level", "2", "--lift", "2"]);
    assert!(stdout(&lifted).starts_with("num,den,logq_mod\n"));
    assert_eq!(data_rows(&lifted), 5);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["farey", "--level", "2", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["farey"]).status.code(), Some(2));
    assert_eq!(run(&["nonsense"]).status.code(), Some(2));
    assert_eq!(run(&["minkowski"]).status.code(), Some(2));
    assert_eq!(run(&["minkowski", "--eval", "x/y"]).status.code(), Some(2));
    assert_eq!(run(&["spectrum", "--z", "1"]).status.code(), Some(2));
    assert_eq!(run(&["mixing", "--psi", "nope"]).status.code(), Some(2));
    let o = run(&["lambda-curve", "--tmax", "1", "--steps", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
}

#[test]
fn failing_checks_exit_one() {
    // scales too coarse for the cover construction
    assert_eq!(run(&["check", "federer", "--eta-from", "7", "--eta-to", "9"]).status.code(), Some(1));
    // fit window where the geometric fit is poor
    assert_eq!(run(&["mixing", "--n", "14"]).status.code(), Some(1));
}

#[test]
fn cohomology_json() {
    let o = run(&["check", "cohomology", "--json", "-"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let value = v["value"].as_f64().unwrap();
    assert!((value + 0.013).abs() < 1e-3, "{value}");
    assert_eq!(v["pass"], serde_json::Value::Bool(true));
    for key in ["schema_version", "version", "seed", "config_digest", "estimate", "stderr", "prediction"] {
        assert!(v.get(key).is_some(), "{key}");
    }
    // the printed value parses back to the library's double
    let w = farey_skew::checks::cohomology_witness().unwrap();
    assert_eq!(value, w.value);
}

#[test]
fn help_on_every_subcommand() {
    let subs = ["farey", "minkowski", "orbit", "spectrum", "lambda-curve", "renewal", "mixing", "clt", "llt", "charfn", "check"];
    for s in subs {
        let o = run(&[s, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{s}");
        assert!(stdout(&o).contains("Usage"), "{s}");
    }
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
}

fn outputs(dir: &Path, tag: &str, args: &[&str]) -> Vec<Vec<u8>> {
    let names = ["json", "csv", "svg"].map(|ext| dir.join(format!("{tag}.{ext}")));
    let mut full: Vec<String> = args.iter().map(|s| s.to_string()).collect();
    for (flag, path) in ["--json", "--csv", "--svg"].iter().zip(&names) {
        full.push(flag.to_string());
        full.push(path.display().to_string());
    }
    let o = bin().args(&full).output().unwrap();
    assert!(o.status.code().is_some_and(|c| c <= 1), "{}", String::from_utf8_lossy(&o.stderr));
    names.iter().map(|p| std::fs::read(p).unwrap()).collect()
}

#[test]
fn identical_invocations_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let clt = ["clt", "--n", "100", "--trials", "2000", "--seed", "11"];
    let a = outputs(dir.path(), "a", &clt);
    let b = outputs(dir.path(), "b", &clt);
    assert_eq!(a, b);
    // the worker count does not change results or the digest
    let mut with_workers = clt.to_vec();
    with_workers.extend(["--workers", "3"]);
    assert_eq!(outputs(dir.path(), "c", &with_workers), a);
    let mut reseeded = clt.to_vec();
    reseeded[6] = "12";
    assert_ne!(outputs(dir.path(), "d", &reseeded)[0], a[0]);

    let mixing = ["mixing", "--n", "12", "--from", "4"];
    assert_eq!(outputs(dir.path(), "m1", &mixing), outputs(dir.path(), "m2", &mixing));
}

#[test]
fn csv_floats_round_trip() {
    let o = run(&["orbit", "--x", "0.3141592653589793", "--steps", "3"]);
    let text = stdout(&o);
    let second = text.lines().nth(1).unwrap();
    let x: f64 = second.split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(x, 0.3141592653589793);
    let next: f64 = text.lines().nth(2).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(next, farey_skew::dynamics::farey_map(x));
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# defaults\nseed = 3\n[farey]\nlevel = 3\n").unwrap();
    let cfg_arg = cfg.display().to_string();

    let from_file = run(&["farey", "--config", &cfg_arg]);
    assert_eq!(data_rows(&from_file), 9);
    let overridden = run(&["--config", &cfg_arg, "farey", "--level", "2"]);
    assert_eq!(data_rows(&overridden), 5);
    let from_env = bin().env("FAREY_SKEW_CONFIG", &cfg).args(["farey"]).output().unwrap();
    assert_eq!(data_rows(&from_env), 9);

    // the global seed reaches sampling commands and is recorded
    let o = run(&["clt", "--config", &cfg_arg, "--n", "50", "--trials", "500", "--json", "-"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["seed"], 3);

    std::fs::write(&cfg, "[farey]\nlevle = 3\n").unwrap();
    assert_eq!(run(&["farey", "--config", &cfg_arg]).status.code(), Some(2));
    std::fs::write(&cfg, "just words\n").unwrap();
    assert_eq!(run(&["farey", "--config", &cfg_arg, "--level", "1"]).status.code(), Some(2));
    assert_eq!(run(&["farey", "--config", "/nonexistent.cfg", "--level", "1"]).status.code(), Some(2));
}

#[test]
fn mixing_plot_overlays_estimate_and_fit() {
    let dir = tempfile::tempdir().unwrap();
    let svg = dir.path().join("m.svg");
    run(&["mixing", "--n", "12", "--from", "4", "--svg", &svg.display().to_string()]);
    let text = std::fs::read_to_string(&svg).unwrap();
    assert!(text.contains(">exact error</text>") && text.contains(">geometric fit</text>"));
    assert!(text.contains("(log scale)"));
    // the embedded table holds every level
    let data = &text[text.find("<!-- data").unwrap()..text.find("-->").unwrap()];
    assert_eq!(data.lines().filter(|l| l.contains(',') && !l.starts_with("x,")).count(), 12 + 9);
}

#[test]
fn empty_series_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let plot = Plot::new("t", "x", "y").with(Series::line("nothing", vec![]));
    assert!(matches!(emit_plot(&plot, &dir.path().join("e.svg")), Err(PlotError::Empty)));
    assert!(!dir.path().join("e.svg").exists());
}

#[test]
fn unwritable_output_exits_one() {
    let o = run(&["farey", "--level", "1", "--svg", "/nonexistent-dir/f.svg"]);
    assert_eq!(o.status.code(), Some(1));
}
