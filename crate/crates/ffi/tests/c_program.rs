use std::path::{Path, PathBuf};
use std::process::Command;

fn manifest() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

/// `target/<profile>` of the running test binary.
fn profile_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

fn static_lib() -> PathBuf {
    let lib = profile_dir().join("libchargeprice_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    lib
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(manifest().join("include/chargeprice.h")).unwrap();
    for name in [
        "cp_problem_load",
        "cp_problem_from_json",
        "cp_problem_free",
        "cp_explore",
        "cp_demand_function_evaluate",
        "cp_solve_bilevel",
        "cp_result_costs",
        "cp_result_to_json",
        "cp_last_error_message",
        "cp_string_free",
        "CP_STATUS_INFEASIBLE = 3",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

#[test]
fn c_program_links_and_solves() {
    let out_dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
    let exe = out_dir.join("cp_smoke");
    let status = Command::new("cc")
        .arg(manifest().join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest().join("include"))
        .arg(static_lib())
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler not found");
    assert!(status.success());

    let data = manifest().join("../../data");
    let run = |stem: &str| {
        Command::new(&exe)
            .arg(data.join(format!("{stem}.traffic.json")))
            .arg(data.join(format!("{stem}.grid.json")))
            .output()
            .unwrap()
    };
    let out = run("two_corridor");
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("station 1 price"));
    assert!(text.contains("combined 21700.0000"), "{text}");

    let missing = Command::new(&exe)
        .arg(Path::new("/nonexistent"))
        .arg("x")
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("cannot read"));
}
