use chargeprice::bilevel::CoupledProblem;
use chargeprice::grid::solve_opf;
use chargeprice::mpqp::{explore, ExploreOptions};
use chargeprice::qp::{solve_qp, QpProblem, SolverOptions};
use chargeprice::synthetic::{random_instance, RandomSpec};
use chargeprice::traffic::solve_itso;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Minimizer of a strictly convex QP with inequality rows only, found by
/// trying every candidate active set of at most `n` rows.
fn enumerate_active_sets(
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> DVector<f64> {
    let (m, n) = a.shape();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << m) {
        let rows: Vec<usize> = (0..m).filter(|k| mask & (1 << k) != 0).collect();
        if rows.len() > n {
            continue;
        }
        let dim = n + rows.len();
        let mut kkt = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(h);
        rhs.rows_mut(0, n).copy_from(&(-c));
        for (i, &k) in rows.iter().enumerate() {
            for j in 0..n {
                kkt[(n + i, j)] = a[(k, j)];
                kkt[(j, n + i)] = a[(k, j)];
            }
            rhs[n + i] = b[k];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else {
            continue;
        };
        let x = sol.rows(0, n).into_owned();
        let feasible = (a * &x - b).iter().all(|v| *v <= 1e-9);
        let dual_ok = sol.rows(n, rows.len()).iter().all(|z| *z >= -1e-9);
        if feasible && dual_ok {
            let obj = 0.5 * x.dot(&(h * &x)) + c.dot(&x);
            if best.as_ref().is_none_or(|(o, _)| obj < *o) {
                best = Some((obj, x));
            }
        }
    }
    best.expect("a strictly convex QP with x = 0 feasible has a minimizer")
        .1
}

fn small_qp() -> impl Strategy<Value = (DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>)> {
    (
        prop::collection::vec(-1.0..1.0f64, 9),
        prop::collection::vec(-5.0..5.0f64, 3),
        prop::collection::vec(-1.0..1.0f64, 15),
        prop::collection::vec(0.1..2.0f64, 5),
    )
        .prop_map(|(l, c, a, b)| {
            let l = DMatrix::from_row_slice(3, 3, &l);
            let h = &l * l.transpose() + DMatrix::identity(3, 3) * 0.1;
            (
                h,
                DVector::from_vec(c),
                DMatrix::from_row_slice(5, 3, &a),
                DVector::from_vec(b),
            )
        })
}

fn instance(seed: u64) -> CoupledProblem {
    let inst = random_instance(seed, &RandomSpec::default()).unwrap();
    CoupledProblem::new(inst.traffic, inst.grid).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn qp_solver_matches_enumeration((h, c, a, b) in small_qp()) {
        let expected = enumerate_active_sets(&h, &c, &a, &b);
        let qp = QpProblem::new(h.clone(), c.clone()).with_inequalities(a, b);
        let got = solve_qp(&qp, &SolverOptions::default()).unwrap();
        prop_assert!((&got.x - &expected).amax() <= 1e-6 * (1.0 + expected.amax()));
        prop_assert!(got.residuals.max() <= 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    #[test]
    fn dispatch_lp_has_no_duality_gap(seed in 0u64..200, share in 0.0..1.0f64) {
        let problem = instance(seed);
        let d = DVector::from_iterator(
            problem.num_stations(),
            problem.traffic.stations.iter().map(|s| share * s.demand_cap()),
        );
        let opts = SolverOptions::default();
        let primal = solve_opf(&problem.grid, &d, &opts).unwrap();
        let dual_lp = problem.dual.with_fixed_demand(&d).unwrap();
        let dual = solve_qp(&dual_lp, &opts).unwrap();
        let scale = 1.0 + primal.cost.abs();
        prop_assert!((primal.cost + dual.objective).abs() <= 1e-7 * scale);

        let y = problem.dual.from_opf(&primal);
        prop_assert!(problem.dual.max_violation(&y) <= 1e-7);
        prop_assert!((problem.dual.objective_value(&y, &d) - primal.cost).abs() <= 1e-7 * scale);

        let t = problem.dual.tighten(&y);
        prop_assert_eq!(problem.dual.bus_prices(&t), problem.dual.bus_prices(&y));
        prop_assert!(problem.dual.max_violation(&t) <= 1e-7);
        prop_assert!(problem.dual.objective_value(&t, &d) >= problem.dual.objective_value(&y, &d) - 1e-9 * scale);
    }

    #[test]
    fn assignment_beats_random_route_splits(seed in 0u64..200, weights in prop::collection::vec(0.01..1.0f64, 64)) {
        let problem = instance(seed);
        let tqp = &problem.traffic_qp;
        let prices = DVector::from_element(tqp.num_stations, 0.5);
        let sol = solve_itso(tqp, &prices, &SolverOptions::default()).unwrap();
        let qp = tqp.to_qp(&prices).unwrap();

        // Conservation and bounds of the returned assignment.
        prop_assert!((&tqp.e_matrix * &sol.f - &tqp.demand).amax() <= 1e-7 * (1.0 + tqp.demand.amax()));
        prop_assert!((&tqp.link * &sol.f - &sol.xi).amax() <= 1e-7 * (1.0 + tqp.demand.amax()));
        prop_assert!((&tqp.g_matrix * &sol.xi - &tqp.h).iter().all(|v| *v <= 1e-7 * (1.0 + tqp.demand.amax())));
        let off = tqp.charge_offset();
        for s in 0..tqp.num_stations {
            let e = tqp.price_injection[s] * sol.xi[off + s];
            prop_assert!((sol.station_demand[s] - e).abs() <= 1e-9 * (1.0 + e.abs()));
        }

        // Split every pair's demand over its routes in random proportions.
        let nr = tqp.num_routes();
        let mut f = DVector::zeros(nr);
        for w in 0..tqp.num_pairs() {
            let routes: Vec<usize> = (0..nr).filter(|&r| tqp.e_matrix[(w, r)] != 0.0).collect();
            let total: f64 = routes.iter().map(|&r| weights[r % weights.len()]).sum();
            for &r in &routes {
                f[r] = tqp.demand[w] * weights[r % weights.len()] / total;
            }
        }
        let xi = &tqp.link * &f;
        prop_assume!((&tqp.g_matrix * &xi - &tqp.h).iter().all(|v| *v <= 0.0));
        let mut x = DVector::zeros(xi.len() + nr);
        x.rows_mut(0, xi.len()).copy_from(&xi);
        x.rows_mut(xi.len(), nr).copy_from(&f);
        prop_assert!(sol.point.objective <= qp.objective(&x) + 1e-8 * (1.0 + qp.objective(&x).abs()));
    }

    #[test]
    fn explicit_policy_agrees_with_direct_solves(seed in 0u64..200, u in prop::collection::vec(0.0..1.0f64, 3)) {
        let problem = instance(seed);
        let domain = problem.default_price_box().unwrap();
        let pi = explore(&problem.traffic_qp, &domain, &domain.center(), &ExploreOptions::default()).unwrap();
        let lam = DVector::from_iterator(
            domain.dim(),
            (0..domain.dim()).map(|k| domain.lo[k] + u[k % u.len()] * (domain.hi[k] - domain.lo[k])),
        );
        let direct = solve_itso(&problem.traffic_qp, &lam, &SolverOptions::default()).unwrap();
        let d = pi.evaluate(&lam).unwrap();
        prop_assert!((&d - &direct.station_demand).amax() <= 1e-6);
    }
}
