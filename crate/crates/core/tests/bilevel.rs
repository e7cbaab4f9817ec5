use chargeprice::bilevel::{
    region_qp, solve_bilevel, solve_joint, verify_kkt_equilibrium, CoupledProblem, EquilibriumPoint,
};
use chargeprice::grid::{Bus, DistributionCase, Generator, Line};
use chargeprice::mpqp::{explore, ExploreOptions, PriceBox};
use chargeprice::qp::SolverOptions;
use chargeprice::synthetic::{
    random_instance, single_bus_grid, single_station_toy, two_corridor_toy, RandomSpec, ToyParams,
};
use chargeprice::traffic::solve_itso;
use nalgebra::dvector;

/// Cheap generator at the root, expensive one behind a limited branch.
fn congested_feeder(limit: f64) -> DistributionCase {
    let bus = |id| Bus {
        id,
        load: 0.0,
        v_min: 0.9,
        v_max: 1.1,
    };
    let line = |to, flow_limit| Line {
        from: 0,
        to,
        resistance: 0.1,
        reactance: 0.2,
        flow_limit,
    };
    DistributionCase::new(
        vec![bus(1), bus(2), bus(3)],
        vec![line(1, f64::INFINITY), line(2, limit)],
        vec![
            Generator {
                id: "G1".into(),
                bus: 0,
                capacity: 1e5,
                cost: 0.3,
            },
            Generator {
                id: "G2".into(),
                bus: 2,
                capacity: 1e5,
                cost: 0.6,
            },
        ],
    )
    .unwrap()
}

fn congested_problem(limit: f64) -> CoupledProblem {
    let traffic = two_corridor_toy(&ToyParams::default(), [1e4, 1e4]).unwrap();
    CoupledProblem::new(traffic, congested_feeder(limit)).unwrap()
}

fn priced(problem: &CoupledProblem) -> chargeprice::bilevel::BilevelResult {
    let domain = problem.default_price_box().unwrap();
    let pi = explore(
        &problem.traffic_qp,
        &domain,
        &domain.center(),
        &ExploreOptions::default(),
    )
    .unwrap();
    solve_bilevel(problem, &pi, &SolverOptions::default()).unwrap()
}

#[test]
fn toy_region_qp_has_the_closed_form_curvature() {
    let p = ToyParams::default();
    let traffic = single_station_toy(&p).unwrap();
    let problem = CoupledProblem::new(traffic, single_bus_grid(5000.0, 0.5, 1e5).unwrap()).unwrap();
    let domain = PriceBox::uniform(1, -20.0, 5.0).unwrap();
    let pi = explore(
        &problem.traffic_qp,
        &domain,
        &domain.center(),
        &ExploreOptions::default(),
    )
    .unwrap();
    assert_eq!(pi.len(), 3);

    let slope = -p.avg_demand.powi(2) * p.capacity_slope / (2.0 * p.time_value);
    let sloped: Vec<_> = pi
        .regions
        .iter()
        .filter(|r| r.policy.demand_jacobian[(0, 0)] != 0.0)
        .collect();
    assert_eq!(sloped.len(), 1);
    let region = sloped[0];
    assert!((region.policy.demand_jacobian[(0, 0)] - slope).abs() <= 1e-8);

    let (qp, convexified) = region_qp(&problem.dual, region);
    assert!(!convexified);
    let col = problem.dual.layout.lambda(0);
    assert!((qp.hessian[(col, col)] + 2.0 * slope).abs() <= 1e-8);
    let other: f64 = qp.hessian.iter().map(|v| v.abs()).sum::<f64>() - qp.hessian[(col, col)].abs();
    assert_eq!(other, 0.0);
}

#[test]
fn candidate_counts_cover_every_region() {
    let problem = congested_problem(1100.0);
    let domain = problem.default_price_box().unwrap();
    let pi = explore(
        &problem.traffic_qp,
        &domain,
        &domain.center(),
        &ExploreOptions::default(),
    )
    .unwrap();
    let res = solve_bilevel(&problem, &pi, &SolverOptions::default()).unwrap();
    let c = res.candidates;
    assert_eq!(c.optimal + c.infeasible + c.unbounded + c.failed, pi.len());
    assert!(res.region_id < pi.len());
    let identity = res.idso_cost + res.itso_cost - res.charging_expense;
    assert!((res.combined_cost - identity).abs() <= 1e-9 * (1.0 + identity.abs()));
}

#[test]
fn large_import_need_gives_the_market_equilibrium() {
    // The congested bus imports 64 kW more than the branch carries, so the
    // expensive local generator runs and sets the price there.
    let problem = congested_problem(1100.0);
    let res = priced(&problem);
    let joint = solve_joint(&problem, &SolverOptions::default()).unwrap();
    assert!((&res.station_prices - dvector![0.3, 0.6]).amax() <= 1e-8);
    assert!((&res.station_prices - &joint.station_prices).amax() <= 1e-6);
    let kkt = verify_kkt_equilibrium(&problem, &EquilibriumPoint::from_bilevel(&res)).unwrap();
    assert!(kkt.max() <= 1e-6, "{kkt:?}");
}

#[test]
fn small_import_need_moves_the_leader_off_the_equilibrium() {
    let limit = 1150.0;
    let problem = congested_problem(limit);

    // Station demands respond linearly to the price gap on this range:
    // d2 = d_half - k (λ2 - λ1). Measure both from plain lower-level solves.
    let opts = SolverOptions::default();
    let d2 = |gap: f64| {
        solve_itso(&problem.traffic_qp, &dvector![0.3, 0.3 + gap], &opts)
            .unwrap()
            .station_demand[1]
    };
    let d_half = d2(0.0);
    let k = (d2(0.0) - d2(0.1)) / 0.1;
    assert!((d2(0.2) - (d_half - 0.2 * k)).abs() <= 1e-6);

    // With the branch at its limit the revenue from the gap Δ is
    // Δ (d2(Δ) - limit), maximized at Δ* = (d_half - limit) / (2k), which is
    // below the 0.3 cost difference of the two generators.
    let gap = (d_half - limit) / (2.0 * k);
    assert!(gap > 0.0 && gap < 0.3);

    let res = priced(&problem);
    assert!((res.station_prices[0] - 0.3).abs() <= 1e-8);
    assert!(
        (res.station_prices[1] - (0.3 + gap)).abs() <= 1e-6,
        "{}",
        res.station_prices
    );

    let joint = solve_joint(&problem, &opts).unwrap();
    assert!((joint.station_prices[1] - 0.6).abs() <= 1e-6);
    assert!(res.idso_cost > joint.idso_cost + 0.5);

    // The local generator still runs below its marginal cost, so the
    // bilevel point is not a market equilibrium.
    let kkt = verify_kkt_equilibrium(&problem, &EquilibriumPoint::from_bilevel(&res)).unwrap();
    assert!(kkt.max() >= 1e-3, "{kkt:?}");
    assert!(res.dispatch.g[2] > 0.0);
}

#[test]
fn scaled_prices_break_the_equilibrium() {
    let problem = congested_problem(1100.0);
    let res = priced(&problem);
    let point = EquilibriumPoint::from_bilevel(&res);
    for factor in [0.99, 1.01] {
        let kkt =
            verify_kkt_equilibrium(&problem, &point.with_scaled_prices(&problem, factor)).unwrap();
        assert!(kkt.max() >= 1e-3, "{factor}: {kkt:?}");
    }
}

#[test]
fn joint_solve_rejects_degenerate_polish_points() {
    // The joint KKT matrix of this instance is singular; a polish on the
    // interior-point active set finds a consistent but non-optimal point.
    let inst = random_instance(20, &RandomSpec::default()).unwrap();
    let problem = CoupledProblem::new(inst.traffic, inst.grid).unwrap();
    let joint = solve_joint(&problem, &SolverOptions::default()).unwrap();
    assert!(joint.point.residuals.max() <= 1e-6);
    let res = priced(&problem);
    assert!((res.idso_cost - joint.idso_cost).abs() <= 1e-5 * (1.0 + joint.idso_cost.abs()));
}
