use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_trace-lab"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn trace-lab")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

const LEMMA: &str = "seed = 7\n[window]\nn = 1\nperiod = 4\ndepth = 6\n";

#[test]
fn lemma41_example_passes_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", LEMMA);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        let o = run(&["lemma4.1", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    }
    for f in ["report.csv", "report.txt", "covers.csv", "report.svg"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let csv = fs::read_to_string(a.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert_eq!(csv.matches(",pass,").count(), 4);
    assert!(a.join("timings.csv").exists());
}

#[test]
fn seed_flag_changes_random_cases() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", LEMMA);
    let mut tables = Vec::new();
    for seed in ["1", "2"] {
        let out = tmp.path().join(seed);
        let o = run(&["lemma4.1", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", seed, "--format", "csv"]);
        assert_eq!(code(&o), 0);
        tables.push(fs::read_to_string(out.join("covers.csv")).unwrap());
    }
    assert_ne!(tables[0], tables[1]);
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let out = out.to_str().unwrap();
    let missing = tmp.path().join("nope.toml");
    assert_eq!(code(&run(&["a1-checks", "--config", missing.to_str().unwrap(), "--out", out])), 2);
    let bad_fn = write(tmp.path(), "f.toml", "[window]\nn = 1\ndepth = 3\n[functions]\nboundary = [\"nosuch\"]\n");
    let o = run(&["gagliardo", "--config", &bad_fn, "--out", out]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nosuch"));
    let bad_key = write(tmp.path(), "k.toml", "[window]\nn = 1\ndepth = 3\ncolour = 1\n");
    assert_eq!(code(&run(&["a1-checks", "--config", &bad_key, "--out", out])), 2);
    let ok = write(tmp.path(), "ok.toml", "[window]\nn = 1\ndepth = 3\n");
    assert_eq!(code(&run(&["a1-checks", "--config", &ok, "--out", out, "--r", "3"])), 2);
    assert_eq!(code(&run(&["a1-checks", "--config", &ok, "--out", out, "--depth", "40"])), 2);
    // nothing computed, nothing written
    assert!(!Path::new(out).exists());
}

#[test]
fn a1_checks_constant_weight_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", "[window]\nn = 2\nperiod = 1\ndepth = 3\n[[weights]]\nkind = \"constant\"\n");
    let out = tmp.path().join("o");
    let o = run(&["a1-checks", "--config", &cfg, "--out", out.to_str().unwrap(), "--set", "params.boxes=100"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("100 random boxes"));
}

#[test]
fn failing_property_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", "[window]\nn = 1\ndepth = 4\n[functions]\nboundary = [\"const\", \"cos:1\"]\n");
    let out = tmp.path().join("o");
    let out = out.to_str().unwrap();
    // A constant and a smooth cosine both have Besov excess; a zero bound on C fails.
    let o = run(&["gagliardo", "--config", &cfg, "--out", out, "--set", "bounds.constant=1e-9"]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stdout));
    let report = fs::read_to_string(Path::new(out).join("report.csv")).unwrap();
    assert!(report.contains(",fail,"));
}

#[test]
fn tile_extend_and_norm_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "c.toml",
        "[window]\nn = 1\nperiod = 1\ndepth = 4\n[functions]\nhalf_space = [\"bump:0.1\"]\n",
    );
    let out = tmp.path().join("t");
    let o = run(&["tile", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let svg = fs::read_to_string(out.join("system.svg")).unwrap();
    let stages = fs::read_to_string(out.join("system.txt")).unwrap().matches("\nstage ").count();
    assert_eq!(svg.matches("<g id=\"stage-").count(), stages);
    assert!(out.join("scales.csv").exists());

    let phi: String = std::iter::once("1 1 3".to_string())
        .chain((0..8).map(|i| format!("{}", (i as f64 / 8.0).sin())))
        .collect::<Vec<_>>()
        .join("\n");
    let phi = write(tmp.path(), "phi.txt", &phi);
    let ext = tmp.path().join("e");
    let o = run(&[
        "extend",
        "--phi",
        &phi,
        "--system",
        out.join("system.txt").to_str().unwrap(),
        "--out",
        ext.to_str().unwrap(),
        "--t-depth",
        "3",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let body = fs::read_to_string(ext.join("extension.csv")).unwrap();
    assert!(body.starts_with("1 1 3 3\n"));
    let smooth = tmp.path().join("s");
    let o = run(&["extend", "--phi", &phi, "--out", smooth.to_str().unwrap(), "--t-depth", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let bad = write(tmp.path(), "bad.txt", "1 1 3\n0.5\n");
    assert_eq!(code(&run(&["extend", "--phi", &bad, "--out", ext.to_str().unwrap()])), 2);

    for kind in ["sobolev", "besov", "z", "mean-deviation"] {
        let dir = tmp.path().join(kind);
        let o = run(&["norm", "--config", &cfg, "--out", dir.to_str().unwrap(), "--kind", kind, "--function", "bump:0.1"]);
        assert_eq!(code(&o), 0, "{kind}: {}", String::from_utf8_lossy(&o.stderr));
        let csv = fs::read_to_string(dir.join("norm.csv")).unwrap();
        assert!(csv.lines().count() > 1, "{kind}");
    }
    let o = run(&["norm", "--config", &cfg, "--out", tmp.path().to_str().unwrap(), "--function", "noise"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn catalog_lists_entries() {
    let o = run(&["catalog"]);
    assert_eq!(code(&o), 0);
    let s = String::from_utf8_lossy(&o.stdout);
    assert!(s.contains("cos[:k=1]") && s.contains("noise"));
}
