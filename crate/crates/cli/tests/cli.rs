use std::path::Path;
use std::process::{Command, Output};

use crosslmm::asymptotics::{infer, InferenceOptions};
use crosslmm::design_power::{power_at, sample_size, DesignSpec};
use crosslmm::mle::{fit_mle, FitOptions};
use crosslmm::model_data::{load_csv, write_csv, ColumnSchema};
use crosslmm::simlab::{
    eq8_config, generate, power_study_with, Eq8Truth, PowerStudyOptions, PredictorDesign, SimConfig,
};
use crosslmm::{CellSizes, ModelParams, SymMatrix};
use nalgebra::DVector;
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crosslmm"))
        .args(args)
        .env_remove("CROSSLMM_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stderr)))
}

fn close(a: &Value, b: f64) -> bool {
    let a = a.as_f64().unwrap();
    a == b || (a - b).abs() <= 1e-15 * b.abs()
}

fn table_spec(sigma0: f64) -> DesignSpec {
    DesignSpec {
        delta: 0.25,
        sigma0,
        p_bernoulli: 0.5,
        var_x: 1.0 / 12.0,
        m_prime: 20,
        n: 1,
        alpha: 0.05,
        power: 0.9,
    }
}

#[test]
fn ssize_matches_library() {
    for sigma in ["0.2", "0.4", "0.8", "1.6"] {
        let out = run(&[
            "ssize",
            "--delta",
            "0.25",
            "--sigma",
            sigma,
            "--p",
            "0.5",
            "--var-x",
            "1/12",
            "--m-prime",
            "20",
        ]);
        assert_eq!(out.status.code(), Some(0));
        let doc = stdout_json(&out);
        let spec = table_spec(sigma.parse().unwrap());
        let m = sample_size(&spec).unwrap();
        assert_eq!(doc["m"].as_u64(), Some(m));
        assert!(close(&doc["power_at_m"], power_at(&spec, m).unwrap()));
    }
}

#[test]
fn ssize_huge_effect_and_missing_flag() {
    let out = run(&[
        "ssize",
        "--delta",
        "100",
        "--sigma",
        "0.1",
        "--p",
        "0.5",
        "--var-x",
        "1",
        "--m-prime",
        "20",
    ]);
    assert_eq!(stdout_json(&out)["m"].as_u64(), Some(1));
    let out = run(&["ssize", "--delta", "0.25"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"]["kind"], "usage");
    let out = run(&[
        "ssize",
        "--delta",
        "0.25",
        "--sigma",
        "0.4",
        "--p",
        "1.5",
        "--var-x",
        "1",
        "--m-prime",
        "20",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_and_bad_flags() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    let out = run(&["fit", "--nonsense"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_json(&out)["error"]["message"]
        .as_str()
        .unwrap()
        .contains("nonsense"));
}

fn intercept_only_config() -> SimConfig {
    SimConfig {
        m: 6,
        m_prime: 5,
        cell_size: CellSizes::Constant(3),
        params: ModelParams::new(
            DVector::from_element(1, 2.0),
            DVector::zeros(0),
            SymMatrix::scalar(0.4),
            SymMatrix::scalar(0.6),
            1.0,
        )
        .unwrap(),
        design: PredictorDesign {
            bases: vec![],
            a_columns: vec![vec![]],
            b_columns: vec![],
        },
        replications: 1,
        base_seed: 12,
    }
}

#[test]
fn fit_equals_library_and_recovers_grand_mean() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(&intercept_only_config(), 0).unwrap();
    let path = dir.path().join("balanced.csv");
    write_csv(&data, &path).unwrap();
    let out = run(&["fit", "--data", path.to_str().unwrap(), "--xa", "xa1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let doc = stdout_json(&out);

    let fit = fit_mle(&data, &FitOptions::default()).unwrap();
    let report = infer(&data, &fit, &InferenceOptions::default()).unwrap();
    let est = doc["inference"]["estimates"].as_array().unwrap();
    let se = doc["inference"]["se"].as_array().unwrap();
    for k in 0..report.names.len() {
        assert_eq!(doc["inference"]["names"][k], report.names[k].as_str());
        assert!(close(&est[k], report.estimates[k]));
        assert!(close(&se[k], report.se[k]));
    }
    assert!((est[0].as_f64().unwrap() - data.y().mean()).abs() < 1e-8);
    assert_eq!(doc["fit"]["converged"], true);
}

#[test]
fn fit_reports_one_sided_p_for_interaction() {
    let dir = tempfile::tempdir().unwrap();
    let config = eq8_config(&table_spec(0.4), 53, 0.25, &Eq8Truth::default(), 1, 5).unwrap();
    let data = generate(&config, 0).unwrap();
    let path = dir.path().join("interaction.csv");
    let schema = write_csv(&data, &path).unwrap();
    let schema_path = dir.path().join("schema.json");
    std::fs::write(&schema_path, serde_json::to_string(&schema).unwrap()).unwrap();
    let out = run(&[
        "fit",
        "--data",
        path.to_str().unwrap(),
        "--schema",
        schema_path.to_str().unwrap(),
        "--se",
        "fisher",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let doc = stdout_json(&out);
    let inf = &doc["inference"];
    let k = inf["names"]
        .as_array()
        .unwrap()
        .iter()
        .position(|n| n == "beta_B[2]")
        .unwrap();

    let loaded = load_csv(&path, &schema).unwrap();
    let fit = fit_mle(&loaded, &FitOptions::default()).unwrap();
    let opts = InferenceOptions {
        se_method: crosslmm::SeMethod::FisherExact,
        ..InferenceOptions::default()
    };
    let report = infer(&loaded, &fit, &opts).unwrap();
    assert!(close(&inf["p_upper"][k], report.p_upper[k]));
    assert!(close(&inf["z"][k], report.z[k]));
}

#[test]
fn fit_errors_use_exit_one_and_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "row,col,y\n1,1,0.5\n1,2,oops\n").unwrap();
    let out = run(&["fit", "--data", bad.to_str().unwrap(), "--intercept"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["error"]["kind"], "parse");
    assert_eq!(err["error"]["details"]["row"], 2);

    let holey = dir.path().join("holey.csv");
    std::fs::write(&holey, "row,col,y\n1,1,0.5\n1,2,0.1\n2,2,0.3\n").unwrap();
    let out = run(&["fit", "--data", holey.to_str().unwrap(), "--intercept"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(
        stderr_json(&out)["error"]["details"]["missing"][0],
        serde_json::json!(["2", "1"])
    );

    let out = run(&[
        "fit",
        "--data",
        dir.path().join("absent.csv").to_str().unwrap(),
        "--intercept",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn verify_exit_codes() {
    let out = run(&["verify", "--suite", "eigen"]);
    assert_eq!(out.status.code(), Some(0));
    let doc = stdout_json(&out);
    assert_eq!(doc["passed"], true);
    assert_eq!(doc["suite"], "eigen");
    let out = run(&["verify", "--suite", "bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"]["kind"], "unknown_suite");
}

#[test]
fn simulate_writes_library_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let config = intercept_only_config();
    let config_path = dir.path().join("sim.json");
    std::fs::write(&config_path, serde_json::to_string(&config).unwrap()).unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&[
        "simulate",
        "--config",
        config_path.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--replicates",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let doc = stdout_json(&out);
    let schema: ColumnSchema = serde_json::from_value(doc["schema"].clone()).unwrap();
    for k in 0..3u64 {
        let path = out_dir.join(format!("replicate_{k}.csv"));
        let loaded = load_csv(&path, &schema).unwrap();
        assert_eq!(loaded.cells(), generate(&config, k).unwrap().cells());
    }
}

fn power_args(extra: &[&str]) -> Vec<String> {
    let mut args: Vec<String> = [
        "power",
        "--delta",
        "0.25",
        "--sigma",
        "0.4",
        "--p",
        "0.5",
        "--var-x",
        "1/12",
        "--m-prime",
        "20",
        "--m",
        "20",
        "--replications",
        "12",
        "--seed",
        "4",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    args.extend(extra.iter().map(|s| s.to_string()));
    args
}

#[test]
fn power_equals_library_and_ignores_thread_count() {
    let one = run(&power_args(&["--threads", "1"])
        .iter()
        .map(String::as_str)
        .collect::<Vec<_>>());
    assert_eq!(one.status.code(), Some(0));
    let via_env = Command::new(env!("CARGO_BIN_EXE_crosslmm"))
        .args(power_args(&[]))
        .env("CROSSLMM_THREADS", "3")
        .output()
        .unwrap();
    let a = stdout_json(&one);
    let b = stdout_json(&via_env);
    assert_eq!(a["result"], b["result"]);

    let config = eq8_config(&table_spec(0.4), 20, 0.25, &Eq8Truth::default(), 12, 4).unwrap();
    let lib = power_study_with(&config, 0.05, &PowerStudyOptions::default()).unwrap();
    assert_eq!(a["result"]["rejections"].as_u64(), Some(lib.rejections as u64));
    assert!(close(&a["result"]["empirical_power"], lib.empirical_power));
}

#[test]
fn power_study_file_and_output_flag() {
    let dir = tempfile::tempdir().unwrap();
    let study = dir.path().join("study.json");
    let spec = serde_json::to_value(table_spec(0.2)).unwrap();
    let doc = serde_json::json!({ "design": spec, "slope": 0.0, "replications": 10, "base_seed": 2 });
    std::fs::write(&study, doc.to_string()).unwrap();
    let target = dir.path().join("result.json");
    let out = run(&[
        "power",
        "--study",
        study.to_str().unwrap(),
        "--output",
        target.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let written: Value = serde_json::from_str(&std::fs::read_to_string(Path::new(&target)).unwrap()).unwrap();
    assert_eq!(written["m"].as_u64(), Some(14));
    assert_eq!(written["slope"].as_f64(), Some(0.0));
    assert_eq!(written["result"]["replications"].as_u64(), Some(10));
}

#[test]
fn pretty_output_is_a_table() {
    let out = run(&["verify", "--suite", "eigen", "--pretty"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("suite eigen"));
    assert!(text.lines().skip(2).all(|l| l.ends_with("PASS")));
}
