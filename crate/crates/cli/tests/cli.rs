use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gatedq_cli::output::Envelope;
use gatedq_cli::reports::*;
use gatedq_cli::{exit, SCHEMA_VERSION, SEED_ENV};
use serde_json::{json, Value};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn gatedq(args: &[&str], env_seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gatedq"));
    cmd.args(args).env_remove(SEED_ENV).env_remove("RUST_LOG");
    if let Some(s) = env_seed {
        cmd.env(SEED_ENV, s);
    }
    cmd.output().expect("binary runs")
}

fn run_config(sub: &str, config: &Value, extra: &[&str]) -> Output {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.json");
    std::fs::write(&path, config.to_string()).unwrap();
    let mut args = vec![sub, "--config", path.to_str().unwrap()];
    args.extend_from_slice(extra);
    gatedq(&args, None)
}

fn shipped(name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(configs().join(name)).unwrap()).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn envelope<T: serde::de::DeserializeOwned>(out: &Output, command: &str) -> T {
    let env: Envelope<T> = serde_json::from_slice(&out.stdout).expect("report matches its schema");
    assert_eq!(env.schema_version, SCHEMA_VERSION);
    assert_eq!(env.command, command);
    env.report
}

fn small_sim(kind: &str, seed: u64) -> Value {
    json!({ "kind": kind, "horizon": 100000, "replications": 10, "seed": seed })
}

#[test]
fn every_shipped_config_runs_and_round_trips() {
    for sub in ["solve", "busycycle", "batch", "mapcheck", "simulate", "compare"] {
        let path = configs().join(format!("{sub}.json"));
        let out = gatedq(&[sub, "--config", path.to_str().unwrap()], None);
        assert_eq!(code(&out), exit::OK as i32, "{sub}: {}", stderr(&out));
        let value: Value = serde_json::from_slice(&out.stdout).unwrap();
        let back = match sub {
            "solve" => serde_json::to_value(envelope::<SolveReport>(&out, sub)).unwrap(),
            "busycycle" => serde_json::to_value(envelope::<BusyCycleReport>(&out, sub)).unwrap(),
            "batch" => serde_json::to_value(envelope::<BatchCommandReport>(&out, sub)).unwrap(),
            "mapcheck" => serde_json::to_value(envelope::<MapCheckReport>(&out, sub)).unwrap(),
            "simulate" => serde_json::to_value(envelope::<SimulateReport>(&out, sub)).unwrap(),
            _ => serde_json::to_value(envelope::<CompareReport>(&out, sub)).unwrap(),
        };
        assert_eq!(back, value["report"], "{sub} report does not round-trip");
    }
}

#[test]
fn solve_reports_consistent_measures() {
    let out = run_config("solve", &shipped("solve.json"), &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r: SolveReport = envelope(&out, "solve");
    assert!((r.rho - 0.5).abs() < 1e-15);
    let mass: f64 = r.stationary.pmf.iter().sum();
    assert!((mass - 1.0).abs() < 1e-6);
    assert!((r.stationary.pmf[0] - r.stationary.prob_empty).abs() < 1e-8);
    let t = r.transient.expect("transient section");
    assert_eq!(t.points.len(), 3);
    assert!(t.points.iter().all(|p| p.gap < 1e-2));
}

#[test]
fn unstable_model_is_a_validation_error() {
    let mut cfg = shipped("solve.json");
    cfg["model"]["lambda"] = json!(1.5);
    let out = run_config("solve", &cfg, &[]);
    assert_eq!(code(&out), exit::VALIDATION as i32);
    assert!(stderr(&out).contains("rho"), "{}", stderr(&out));
    assert!(out.stdout.is_empty());
}

#[test]
fn unknown_keys_are_rejected() {
    let mut cfg = shipped("solve.json");
    cfg["colour"] = json!("blue");
    let out = run_config("solve", &cfg, &[]);
    assert_eq!(code(&out), exit::VALIDATION as i32);
    assert!(stderr(&out).contains("colour"));

    let mut cfg = shipped("batch.json");
    cfg["model"]["service"]["mean"] = json!(1.0);
    assert_eq!(code(&run_config("batch", &cfg, &[])), exit::VALIDATION as i32);
}

#[test]
fn missing_config_and_bad_truncation_are_validation_errors() {
    assert_eq!(code(&gatedq(&["solve"], None)), exit::VALIDATION as i32);
    let out = run_config("solve", &shipped("solve.json"), &["--eps", "0.5"]);
    assert_eq!(code(&out), exit::VALIDATION as i32);
    let out = run_config("solve", &shipped("solve.json"), &["--max-n", "2"]);
    assert_eq!(code(&out), exit::VALIDATION as i32);
}

#[test]
fn truncation_cap_gives_non_convergence() {
    let mut cfg = shipped("solve.json");
    cfg["model"]["lambda"] = json!(0.95);
    cfg["model"]["service"] = json!({ "family": "deterministic", "value": 1.0 });
    cfg["truncation"] = json!({ "eps": 1e-15, "max_n": 16 });
    let out = run_config("solve", &cfg, &[]);
    assert_eq!(code(&out), exit::NON_CONVERGENCE as i32, "{}", stderr(&out));
}

#[test]
fn csv_is_rfc4180() {
    let out = run_config("batch", &shipped("batch.json"), &["--format", "csv"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("k,queue_pmf,batch_size_pmf\r\n"));
    let lines: Vec<&str> = text.split_terminator("\r\n").collect();
    assert_eq!(lines.len(), 1 + 16);
    assert!(!text.replace("\r\n", "").contains('\n'));
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    for record in reader.records() {
        let record = record.unwrap();
        assert_eq!(record.len(), 3);
        for cell in record.iter() {
            cell.parse::<f64>().unwrap();
        }
    }
}

#[test]
fn out_flag_writes_the_report_to_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("report.json");
    let out = run_config("busycycle", &shipped("busycycle.json"), &["--out", target.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(out.stdout.is_empty());
    let env: Envelope<BusyCycleReport> = serde_json::from_str(&std::fs::read_to_string(target).unwrap()).unwrap();
    assert!(env.report.means.vacations >= 1.0);
    assert!((env.report.transforms[0].value - 1.0).abs() < 1e-9);
}

#[test]
fn simulate_is_deterministic_and_honours_seed_precedence() {
    let cfg = json!({ "model": shipped("simulate.json")["model"], "simulation": small_sim("single_vacation_gated", 3) });
    let a = run_config("simulate", &cfg, &[]);
    let b = run_config("simulate", &cfg, &[]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let r: SimulateReport = envelope(&a, "simulate");
    assert_eq!(r.stats.seed, 3);

    let flagged = run_config("simulate", &cfg, &["--seed", "99"]);
    assert_eq!(envelope::<SimulateReport>(&flagged, "simulate").stats.seed, 99);
    assert_ne!(flagged.stdout, a.stdout);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let p = path.to_str().unwrap();
    let env = gatedq(&["simulate", "--config", p], Some("41"));
    assert_eq!(envelope::<SimulateReport>(&env, "simulate").stats.seed, 41);
    let both = gatedq(&["simulate", "--config", p, "--seed", "5"], Some("41"));
    assert_eq!(envelope::<SimulateReport>(&both, "simulate").stats.seed, 5);
    let bad = gatedq(&["simulate", "--config", p], Some("not-a-number"));
    assert_eq!(code(&bad), exit::VALIDATION as i32);
}

#[test]
fn short_simulation_is_rejected() {
    let mut sim = small_sim("single_vacation_gated", 1);
    sim["horizon"] = json!(1000);
    let cfg = json!({ "model": shipped("simulate.json")["model"], "simulation": sim });
    assert_eq!(code(&run_config("simulate", &cfg, &[])), exit::VALIDATION as i32);
}

#[test]
fn compare_passes_for_matching_kinds() {
    let out = run_config("compare", &shipped("compare.json"), &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r: CompareReport = envelope(&out, "compare");
    assert!(r.all_pass);
    assert!(r.rows.len() > 10);
}

#[test]
fn compare_mismatch_exits_four_with_the_multiple_vacation_gap() {
    let model = json!({
        "lambda": 0.3,
        "service": { "family": "exponential", "rate": 1.0 },
        "vacation": { "family": "deterministic", "value": 2.0 }
    });
    let cfg = json!({
        "model": model,
        "simulation": small_sim("multiple_vacation_gated", 13),
        "analytic": "single_vacation_gated",
    });
    let out = run_config("compare", &cfg, &["--format", "csv"]);
    assert_eq!(code(&out), exit::COMPARE_FAILED as i32);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("FAIL"));

    let json_out = run_config("compare", &cfg, &[]);
    let r: CompareReport = envelope(&json_out, "compare");
    assert!(!r.all_pass);
    let row = r.rows.iter().find(|r| r.observable == "mean_queue").unwrap();
    assert!(!row.pass);

    let solved = run_config("solve", &json!({ "model": model }), &[]);
    let s: SolveReport = envelope(&solved, "solve");
    let gap = row.simulated - row.analytic;
    assert!(
        (gap - s.stationary.mv_mean_gap).abs() <= 3.0 * row.half_width,
        "gap {gap} vs {}",
        s.stationary.mv_mean_gap
    );
}

#[test]
fn compare_batch_service() {
    let cfg = json!({
        "model": shipped("batch.json")["model"],
        "simulation": small_sim("batch_service", 17),
    });
    let out = run_config("compare", &cfg, &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r: CompareReport = envelope(&out, "compare");
    assert!(r.rows.iter().any(|r| r.observable.starts_with("age_residual")));
}

#[test]
fn mapcheck_poisson_is_clean_and_mmpp_is_flagged() {
    let out = run_config("mapcheck", &shipped("mapcheck.json"), &[]);
    assert_eq!(code(&out), 0);
    let r: MapCheckReport = envelope(&out, "mapcheck");
    assert!(!r.commutative);
    assert!(r.flagged);
    assert!(stderr(&out).contains("interchange residual"));

    let mut cfg = shipped("mapcheck.json");
    cfg["map"] = json!({ "c": [[-0.7]], "d": [[0.7]] });
    let out = run_config("mapcheck", &cfg, &[]);
    let r: MapCheckReport = envelope(&out, "mapcheck");
    assert!(r.commutative);
    assert!((r.poisson_rate.unwrap() - 0.7).abs() < 1e-12);
    assert!(!r.flagged, "residual {}", r.interchange.max_residual);
}

#[test]
fn quiet_suppresses_warnings() {
    let out = run_config("mapcheck", &shipped("mapcheck.json"), &["--quiet"]);
    assert_eq!(code(&out), 0);
    assert!(stderr(&out).is_empty());
}
