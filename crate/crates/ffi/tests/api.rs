use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::ptr;

use chargeprice_ffi::*;

fn data(name: &str) -> CString {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name);
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = cp_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn load(stem: &str) -> *mut CpProblem {
    let mut p = ptr::null_mut();
    let st = unsafe {
        cp_problem_load(
            data(&format!("{stem}.traffic.json")).as_ptr(),
            data(&format!("{stem}.grid.json")).as_ptr(),
            &mut p,
        )
    };
    assert_eq!(st, CpStatus::Ok);
    p
}

#[test]
fn toy_round_trip() {
    unsafe {
        let p = load("single_station");
        assert_eq!(cp_problem_station_count(p), 1);
        let mut opts = cp_run_options_default();
        opts.has_price_box = true;
        opts.price_lo = -20.0;
        opts.price_hi = 5.0;
        let mut pi = ptr::null_mut();
        assert_eq!(cp_explore(p, &opts, &mut pi), CpStatus::Ok);
        assert_eq!(cp_demand_function_region_count(pi), 3);

        let mut d = [0.0];
        assert_eq!(
            cp_demand_function_evaluate(pi, [-20.0].as_ptr(), 1, d.as_mut_ptr(), 1),
            CpStatus::Ok
        );
        assert!((d[0] - 1440.0).abs() < 1e-6, "{}", d[0]);

        let mut res = ptr::null_mut();
        assert_eq!(cp_solve_bilevel(p, pi, &opts, &mut res), CpStatus::Ok);
        assert_eq!(cp_result_station_count(res), 1);
        let mut costs = CpCosts::default();
        assert_eq!(cp_result_costs(res, &mut costs), CpStatus::Ok);
        assert!((costs.combined - (costs.idso + costs.itso - costs.charging_expense)).abs() < 1e-6);

        let mut js = ptr::null_mut();
        assert_eq!(cp_result_to_json(res, &mut js), CpStatus::Ok);
        let text = CStr::from_ptr(js).to_str().unwrap().to_owned();
        cp_string_free(js);
        assert!(text.contains("\"kind\": \"bilevel_result\""));

        let mut js = ptr::null_mut();
        assert_eq!(cp_demand_function_to_json(pi, &mut js), CpStatus::Ok);
        assert!(CStr::from_ptr(js).to_str().unwrap().contains("regions"));
        cp_string_free(js);

        cp_result_free(res);
        cp_demand_function_free(pi);
        cp_problem_free(p);
    }
}

#[test]
fn errors_carry_status_and_message() {
    unsafe {
        let mut p = ptr::null_mut();
        let missing = CString::new("/nonexistent/t.json").unwrap();
        let st = cp_problem_load(
            missing.as_ptr(),
            data("two_corridor.grid.json").as_ptr(),
            &mut p,
        );
        assert_eq!(st, CpStatus::InvalidInput);
        assert!(p.is_null());
        assert!(last_error().contains("cannot read"));

        let st = cp_problem_load(ptr::null(), ptr::null(), &mut p);
        assert_eq!(st, CpStatus::NullPointer);

        let bad = CString::new("{").unwrap();
        let st = cp_problem_from_json(bad.as_ptr(), bad.as_ptr(), &mut p);
        assert_eq!(st, CpStatus::InvalidInput);
        assert!(last_error().starts_with("json"));

        let p = load("two_corridor");
        let mut opts = cp_run_options_default();
        opts.has_price_box = true;
        opts.price_lo = 5.0;
        opts.price_hi = 1.0;
        let mut pi = ptr::null_mut();
        assert_eq!(cp_explore(p, &opts, &mut pi), CpStatus::InvalidInput);

        let mut pi = ptr::null_mut();
        assert_eq!(cp_explore(p, ptr::null(), &mut pi), CpStatus::Ok);
        let mut d = [0.0; 1];
        let st = cp_demand_function_evaluate(pi, [0.1, 0.1].as_ptr(), 2, d.as_mut_ptr(), 1);
        assert_eq!(st, CpStatus::BufferTooSmall);
        let mut d = [0.0; 2];
        let st = cp_demand_function_evaluate(pi, [1e9, 0.1].as_ptr(), 2, d.as_mut_ptr(), 2);
        assert_eq!(st, CpStatus::InvalidInput);
        assert!(last_error().starts_with("outside_domain"));
        assert_eq!(
            cp_demand_function_evaluate(pi, [0.1, 0.1].as_ptr(), 2, d.as_mut_ptr(), 2),
            CpStatus::Ok
        );
        assert!(cp_last_error_message().is_null());

        assert_eq!(
            cp_solve_bilevel(p, ptr::null(), ptr::null(), &mut ptr::null_mut()),
            CpStatus::NullPointer
        );
        assert_eq!(cp_result_station_count(ptr::null()), 0);
        cp_demand_function_free(pi);
        cp_problem_free(p);
        cp_problem_free(ptr::null_mut());
    }
}

#[test]
fn results_match_the_library() {
    use chargeprice::scenario::{run_solve, RunConfig};
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let traffic =
        chargeprice::traffic::load_traffic(&root.join("two_corridor.traffic.json")).unwrap();
    let grid = chargeprice::grid::load_grid(&root.join("two_corridor.grid.json")).unwrap();
    let problem = chargeprice::bilevel::CoupledProblem::new(traffic, grid).unwrap();
    let report = run_solve(&problem, &RunConfig::default()).unwrap();

    unsafe {
        let p = load("two_corridor");
        let mut pi = ptr::null_mut();
        assert_eq!(cp_explore(p, ptr::null(), &mut pi), CpStatus::Ok);
        let mut res = ptr::null_mut();
        assert_eq!(cp_solve_bilevel(p, pi, ptr::null(), &mut res), CpStatus::Ok);
        let mut prices = [0.0; 2];
        let mut demands = [0.0; 2];
        assert_eq!(
            cp_result_station_prices(res, prices.as_mut_ptr(), 2),
            CpStatus::Ok
        );
        assert_eq!(
            cp_result_station_demands(res, demands.as_mut_ptr(), 2),
            CpStatus::Ok
        );
        for (k, s) in report.stations.iter().enumerate() {
            assert_eq!(prices[k], s.price);
            assert_eq!(demands[k], s.demand);
        }
        let mut region = usize::MAX;
        assert_eq!(cp_result_region_id(res, &mut region), CpStatus::Ok);
        assert_eq!(region, report.region_id);
        cp_result_free(res);
        cp_demand_function_free(pi);
        cp_problem_free(p);
    }
}
