use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chargeprice::grid::GridFile;
use chargeprice::synthetic::single_bus_grid;
use serde_json::Value;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
}

fn chargeprice(stem: &str, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chargeprice"))
        .arg("--traffic")
        .arg(data(&format!("{stem}.traffic.json")))
        .arg("--grid")
        .arg(data(&format!("{stem}.grid.json")))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("CHARGEPRICE_SEED")
        .env_remove("CHARGEPRICE_LAMBDA_BOX")
        .output()
        .unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn first_line(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_owned()
}

fn error_of(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).expect("stderr holds one JSON error object")
}

#[test]
fn solve_writes_a_versioned_result() {
    let dir = tempfile::tempdir().unwrap();
    let out = chargeprice("two_corridor", dir.path(), &["solve"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v = read_json(&dir.path().join("result.json"));
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["kind"], "bilevel_result");
    assert_eq!(v["stations"].as_array().unwrap().len(), 2);
    assert!(v["kkt"]["max"].as_f64().unwrap() <= 1e-6);
}

#[test]
fn regions_of_the_toy() {
    let dir = tempfile::tempdir().unwrap();
    let out = chargeprice(
        "single_station",
        dir.path(),
        &["--lambda-box", "-20,5", "regions"],
    );
    assert!(out.status.success());
    let v = read_json(&dir.path().join("partition.json"));
    assert_eq!(v["regions"].as_array().unwrap().len(), 3);
}

#[test]
fn csv_outputs_carry_schema_headers() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let runs: [(&str, &[&str]); 4] = [
        (
            "saturated_corridor",
            &["sweep-demand", "--levels", "250,300"],
        ),
        (
            "random_seed7",
            &["sweep-cost", "--generator", "G2", "--costs", "0.3,0.1"],
        ),
        (
            "saturated_corridor",
            &["forecast-mc", "--truth", "300", "--samples", "4"],
        ),
        ("two_corridor", &["baseline"]),
    ];
    for (stem, args) in runs {
        let out = chargeprice(stem, p, args);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    for name in [
        "sweep_demand",
        "sweep_demand_stations",
        "sweep_cost_prices",
        "sweep_cost_demands",
        "forecast_mc",
        "baseline",
    ] {
        assert_eq!(
            first_line(&p.join(format!("{name}.csv"))),
            format!("# schema: chargeprice/{name} v1")
        );
    }
    let summary = read_json(&p.join("forecast_summary.json"));
    assert_eq!(summary["schema_version"], 1);
    assert_eq!(summary["realization"], "fixed-price");
    let header = std::fs::read_to_string(p.join("sweep_cost_prices.csv")).unwrap();
    assert!(header
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("cost,status,price_"));
}

#[test]
fn unreadable_input_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_chargeprice"))
        .args([
            "--traffic",
            "/nonexistent/t.json",
            "--grid",
            "/nonexistent/g.json",
            "solve",
        ])
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let e = error_of(&out);
    assert_eq!(e["error"], "io");
    assert_eq!(e["exit_code"], 2);
}

#[test]
fn reversed_price_box_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = chargeprice(
        "two_corridor",
        dir.path(),
        &["--lambda-box", "5,1", "solve"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_of(&out)["error"], "invalid_input");
}

#[test]
fn undersized_generation_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("small.grid.json");
    let case = single_bus_grid(5000.0, 0.5, 100.0).unwrap();
    std::fs::write(
        &grid,
        serde_json::to_string(&GridFile::from_case(&case)).unwrap(),
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_chargeprice"))
        .arg("--traffic")
        .arg(data("single_station.traffic.json"))
        .arg("--grid")
        .arg(&grid)
        .arg("--out")
        .arg(dir.path())
        .args(["--lambda-box", "-20,5", "solve"])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(error_of(&out)["error"], "infeasible");
}

#[test]
fn settings_can_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_chargeprice"))
        .env("CHARGEPRICE_TRAFFIC", data("single_station.traffic.json"))
        .env("CHARGEPRICE_GRID", data("single_station.grid.json"))
        .env("CHARGEPRICE_LAMBDA_BOX", "-20,5")
        .env("CHARGEPRICE_OUT", dir.path())
        .arg("regions")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "regions 3");
}

#[test]
fn verify_is_reproducible_across_worker_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["--seed", "11", "verify", "--samples", "50"];
    let first = chargeprice(
        "random_seed7",
        a.path(),
        &[&["--workers", "1"][..], &args[..]].concat(),
    );
    let second = chargeprice(
        "random_seed7",
        b.path(),
        &[&["--workers", "3"][..], &args[..]].concat(),
    );
    assert!(
        first.status.success(),
        "{}",
        String::from_utf8_lossy(&first.stdout)
    );
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(
        std::fs::read(a.path().join("verify.json")).unwrap(),
        std::fs::read(b.path().join("verify.json")).unwrap()
    );
}
