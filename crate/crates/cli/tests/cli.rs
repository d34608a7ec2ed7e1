use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

use cif_fusion::io::{read_dataset_path, write_cohort, write_estimates, RunConfig, ESTIMATES_HEADER};
use cif_fusion::simulation::{generate_cohort, replicate_rng, DgpConfig, SimulationSummary};
use cif_fusion::{estimate_many, fit_nuisances, FitOptions};

const CONFIG: &str = r#"{"tau": 2, "times": [1, 2], "reps": 3, "dgp": {"n": 500},
    "targets": [{"family": "theta", "cause": 1, "arm": 0},
                {"family": "theta", "cause": 1, "arm": 1},
                {"family": "gamma", "cause": 2, "arm": "effect"}]}"#;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cif-fusion"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
    config: PathBuf,
    data: PathBuf,
}

fn fixture(config: &str) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("config.json");
    fs::write(&cfg_path, config).unwrap();
    let data = dir.path().join("data.csv");
    let dgp = DgpConfig {
        n: 800,
        ..DgpConfig::default()
    };
    let cohort = generate_cohort(&mut replicate_rng(8, 0), &dgp).unwrap();
    write_cohort(&cohort, fs::File::create(&data).unwrap()).unwrap();
    Fixture {
        dir,
        config: cfg_path,
        data,
    }
}

fn estimate(f: &Fixture) -> (Output, String) {
    let out = f.dir.path().join("out");
    let o = cli(&["estimate", "--data", s(&f.data), "--config", s(&f.config), "--out", s(&out)]);
    let text = fs::read_to_string(out.join("estimates.csv")).unwrap_or_default();
    (o, text)
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&cli(&[])), 1);
    assert_eq!(code(&cli(&["estimate", "--bogus"])), 1);
    let f = fixture(r#"{"tau": 2, "times": [], "targets": []}"#);
    assert_eq!(code(&estimate(&f).0), 1);
    assert_eq!(code(&cli(&["--help"])), 0);
}

#[test]
fn data_errors_exit_two() {
    let f = fixture(CONFIG);
    let text = fs::read_to_string(&f.data).unwrap();
    let (header, body) = text.split_once('\n').unwrap();
    let ext = body.lines().find(|l| l.split(',').nth(4) == Some("0")).unwrap();
    let mut fields: Vec<&str> = ext.split(',').collect();
    fields[3] = "1";
    fs::write(&f.data, format!("{header}\n{}\n{body}", fields.join(","))).unwrap();
    let (o, _) = estimate(&f);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));

    let missing = f.dir.path().join("absent.csv");
    let o = cli(&["estimate", "--data", s(&missing), "--config", s(&f.config)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn separated_selection_exits_three() {
    let f = fixture(CONFIG);
    let text = fs::read_to_string(&f.data).unwrap();
    let mut lines = text.lines();
    let mut out = format!("{}\n", lines.next().unwrap());
    // trial membership is a deterministic function of the first covariate
    for line in lines {
        let mut fields: Vec<String> = line.split(',').map(str::to_string).collect();
        let trial = fields[4] == "1";
        let x1: f64 = fields[5].parse().unwrap();
        fields[5] = if trial { x1.abs() + 0.01 } else { -x1.abs() - 0.01 }.to_string();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    fs::write(&f.data, out).unwrap();
    let (o, _) = estimate(&f);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn file_pipeline_matches_library() {
    let f = fixture(CONFIG);
    let (o, text) = estimate(&f);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let cfg = RunConfig::from_path(&f.config).unwrap();
    let cohort = read_dataset_path(&f.data, 2.0, cfg.jitter_scale, cfg.seed).unwrap().cohort;
    let ns = fit_nuisances(&cohort, &FitOptions::default()).unwrap();
    let reports = estimate_many(&cohort, &ns, &cfg.expanded_targets()).unwrap();
    let mut expected = Vec::new();
    write_estimates(&reports, &mut expected).unwrap();
    assert_eq!(text, String::from_utf8(expected).unwrap());
}

#[test]
fn treated_arm_rows_agree_across_modes() {
    let f = fixture(CONFIG);
    let (_, text) = estimate(&f);
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let treated: Vec<_> = rows.iter().filter(|r| r[0].starts_with("theta_1(1)")).collect();
    assert_eq!(treated.len(), 4);
    for pair in treated.chunks(2) {
        assert_eq!((pair[0][2], pair[1][2]), ("+", "-"));
        assert_eq!(pair[0][3..6], pair[1][3..6]);
        assert_eq!(pair[0][6].parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn rct_only_mode_has_no_reductions() {
    let f = fixture(&CONFIG.replace(r#""reps": 3"#, r#""mode": "rct-only""#));
    let (o, text) = estimate(&f);
    assert!(o.status.success());
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(ESTIMATES_HEADER));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.split(',').nth(2) == Some("-") && r.ends_with(',')));
}

#[test]
fn influence_file_is_optional() {
    let f = fixture(CONFIG);
    let out = f.dir.path().join("out");
    let base = ["estimate", "--data", s(&f.data), "--config", s(&f.config), "--out", s(&out)];
    assert!(cli(&base).status.success());
    assert!(!out.join("influence.csv").exists());
    let mut with = base.to_vec();
    with.push("--emit-influence");
    assert!(cli(&with).status.success());
    let text = fs::read_to_string(out.join("influence.csv")).unwrap();
    // header plus one row per record and estimand
    assert_eq!(text.lines().count(), 1 + 800 * 12);
}

#[test]
fn simulate_writes_parseable_summary() {
    let f = fixture(CONFIG);
    let path = f.dir.path().join("summary.csv");
    let o = cli(&["simulate", "--config", s(&f.config), "--out", s(&path)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = SimulationSummary::from_csv(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r.mean.is_finite()));
    assert!(rows.iter().all(|r| r.reduction_pct.is_some() == (r.kind == "+")));
}

#[test]
fn quick_check_passes() {
    let o = cli(&["check", "quick"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{stdout}");
    assert!(stdout.lines().all(|l| l.starts_with("PASS")));
}
