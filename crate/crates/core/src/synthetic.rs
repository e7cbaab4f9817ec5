//! Reproducible test instances: small hand-checkable networks and a seeded
//! generator of random coupled instances.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::grid::{Bus, DistributionCase, Generator, Line};
use crate::qp::SolverOptions;
use crate::traffic::{
    assemble_traffic_qp, build_extended_network, solve_itso, Arc, ArcKind, ChargingMode,
    ChargingStation, ExtendedTrafficNetwork, OdPairSpec, TrafficNetwork,
};

/// Parameters of the one-station network `o → s → t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyParams {
    pub time_value: f64,
    pub capacity_slope: f64,
    pub avg_demand: f64,
    pub charge_rate: f64,
    pub station_cap: f64,
    pub demand: f64,
    pub route_reg: f64,
}

impl Default for ToyParams {
    fn default() -> Self {
        ToyParams {
            time_value: 1e3,
            capacity_slope: 1e4,
            avg_demand: 12.0,
            charge_rate: 200.0,
            station_cap: 120.0,
            demand: 200.0,
            route_reg: 0.0,
        }
    }
}

fn physical(id: &str, tail: u32, head: u32, slope: f64, cap: f64, gamma: f64) -> Arc {
    Arc {
        id: id.into(),
        tail,
        head,
        free_flow_time: 0.0,
        capacity_slope: slope,
        flow_cap: cap,
        time_value: gamma,
        kind: ArcKind::Physical,
        station: None,
    }
}

fn station(id: &str, node: u32, bus: u32, p: &ToyParams, cap: f64) -> ChargingStation {
    ChargingStation {
        id: id.into(),
        node,
        grid_bus: bus,
        avg_demand: p.avg_demand,
        charge_rate: p.charge_rate,
        flow_cap: cap,
        free_flow_time: 0.0,
        capacity_slope: p.capacity_slope,
        bypass_cap: f64::INFINITY,
        time_value: None,
    }
}

/// One O-D pair with two routes that differ only in charging or bypassing.
pub fn single_station_toy(p: &ToyParams) -> Result<ExtendedTrafficNetwork> {
    let base = TrafficNetwork {
        nodes: vec![1, 2, 3],
        arcs: vec![
            physical("a1", 1, 2, p.capacity_slope, f64::INFINITY, p.time_value),
            physical("a2", 2, 3, p.capacity_slope, f64::INFINITY, p.time_value),
        ],
        time_value: p.time_value,
        route_reg: p.route_reg,
    };
    let pair = OdPairSpec {
        id: "w1".into(),
        origin: 1,
        destination: 3,
        demand: p.demand,
        charging: ChargingMode::Optional,
        routes: vec![vec!["a1".into(), "a2".into()]],
    };
    build_extended_network(
        &base,
        &[station("cs1", 2, 1, p, p.station_cap)],
        &[pair],
        true,
    )
}

/// One parallel corridor `o → s_k → t` of [`corridor_toy`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corridor {
    /// BPR-style slope of both physical arcs and of the charge arc.
    pub slope: f64,
    pub station_cap: f64,
}

/// One O-D pair `1 → k+2` over `k` parallel corridors, each with a station
/// (`cs1`, `cs2`, ... on nodes 2, 3, ... and buses 2, 3, ...). Every route
/// charges exactly once.
pub fn corridor_toy(p: &ToyParams, corridors: &[Corridor]) -> Result<ExtendedTrafficNetwork> {
    let k = corridors.len() as u32;
    let dest = k + 2;
    let mut arcs = Vec::new();
    let mut routes = Vec::new();
    let mut stations = Vec::new();
    for (i, c) in corridors.iter().enumerate() {
        let node = i as u32 + 2;
        let (a, b) = (format!("c{}a", i + 1), format!("c{}b", i + 1));
        arcs.push(physical(&a, 1, node, c.slope, f64::INFINITY, p.time_value));
        arcs.push(physical(
            &b,
            node,
            dest,
            c.slope,
            f64::INFINITY,
            p.time_value,
        ));
        routes.push(vec![a, b]);
        let mut st = station(&format!("cs{}", i + 1), node, node, p, c.station_cap);
        st.capacity_slope = c.slope;
        stations.push(st);
    }
    let base = TrafficNetwork {
        nodes: (1..=dest).collect(),
        arcs,
        time_value: p.time_value,
        route_reg: p.route_reg,
    };
    let pair = OdPairSpec {
        id: "w1".into(),
        origin: 1,
        destination: dest,
        demand: p.demand,
        charging: ChargingMode::Once,
        routes,
    };
    build_extended_network(&base, &stations, &[pair], true)
}

/// Two corridors with the given slopes; unequal slopes make congestion
/// asymmetric.
pub fn two_corridor_toy(p: &ToyParams, slopes: [f64; 2]) -> Result<ExtendedTrafficNetwork> {
    let c = |slope| Corridor {
        slope,
        station_cap: p.station_cap,
    };
    corridor_toy(p, &[c(slopes[0]), c(slopes[1])])
}

/// Radial feeder for [`corridor_toy`]: root bus 1 with the fixed load and a
/// main generator, one branch per station bus, and an optional peaking
/// generator on the last station bus.
#[derive(Debug, Clone, PartialEq)]
pub struct FeederSpec {
    pub root_load: f64,
    /// `(cost, capacity)` of the generator at the root.
    pub main: (f64, f64),
    pub peaker: Option<(f64, f64)>,
    /// Flow limit of every branch.
    pub line_limit: f64,
}

pub fn feeder_grid(stations: usize, spec: &FeederSpec) -> Result<DistributionCase> {
    let mut buses = vec![Bus {
        id: 1,
        load: spec.root_load,
        v_min: 0.9,
        v_max: 1.1,
    }];
    let mut lines = Vec::new();
    for k in 0..stations {
        buses.push(Bus {
            id: k as u32 + 2,
            load: 0.0,
            v_min: 0.9,
            v_max: 1.1,
        });
        lines.push(Line {
            from: 0,
            to: k + 1,
            resistance: 0.1,
            reactance: 0.2,
            flow_limit: spec.line_limit,
        });
    }
    let mut generators = vec![Generator {
        id: "G1".into(),
        bus: 0,
        capacity: spec.main.1,
        cost: spec.main.0,
    }];
    if let Some((cost, capacity)) = spec.peaker {
        generators.push(Generator {
            id: "G2".into(),
            bus: stations,
            capacity,
            cost,
        });
    }
    DistributionCase::new(buses, lines, generators)
}

/// Single-bus grid with one generator.
pub fn single_bus_grid(load: f64, cost: f64, capacity: f64) -> Result<DistributionCase> {
    DistributionCase::new(
        vec![Bus {
            id: 1,
            load,
            v_min: 0.9,
            v_max: 1.1,
        }],
        vec![],
        vec![Generator {
            id: "G1".into(),
            bus: 0,
            capacity,
            cost,
        }],
    )
}

/// Size ranges of random coupled instances.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomSpec {
    pub nodes: (usize, usize),
    pub stations: (usize, usize),
    pub pairs: (usize, usize),
    pub routes: (usize, usize),
    pub buses: (usize, usize),
    pub generators: (usize, usize),
    /// Fixed load per bus, kW. The default keeps fixed loads large against
    /// the swing of charging demand, as in a feeder with a sizable base load.
    pub load: (f64, f64),
    pub od_demand: (f64, f64),
}

impl Default for RandomSpec {
    fn default() -> Self {
        RandomSpec {
            nodes: (4, 8),
            stations: (1, 3),
            pairs: (1, 3),
            routes: (2, 4),
            buses: (4, 8),
            generators: (2, 3),
            load: (2000.0, 6000.0),
            od_demand: (50.0, 300.0),
        }
    }
}

/// A coupled traffic and grid instance.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledInstance {
    pub traffic: ExtendedTrafficNetwork,
    pub grid: DistributionCase,
}

/// Draws a random coupled instance. Candidates whose traffic problem is
/// infeasible are discarded and redrawn from the same stream, so the result
/// depends only on `seed` and `spec`.
pub fn random_instance(seed: u64, spec: &RandomSpec) -> Result<CoupledInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        if let Some(inst) = draw_instance(&mut rng, spec)? {
            return Ok(inst);
        }
    }
}

fn draw_instance(rng: &mut ChaCha8Rng, spec: &RandomSpec) -> Result<Option<CoupledInstance>> {
    let gamma = 1e3;
    let n = rng.gen_range(spec.nodes.0..=spec.nodes.1);
    let nodes: Vec<u32> = (1..=n as u32).collect();

    // Forward arcs only, so every node sequence is a simple path.
    let mut arcs = Vec::new();
    let edge = |i: usize, j: usize, rng: &mut ChaCha8Rng, arcs: &mut Vec<Arc>| {
        let cap = if rng.gen_bool(0.3) {
            rng.gen_range(150.0..400.0)
        } else {
            f64::INFINITY
        };
        arcs.push(Arc {
            id: format!("e{}_{}", i + 1, j + 1),
            tail: (i + 1) as u32,
            head: (j + 1) as u32,
            free_flow_time: rng.gen_range(0.0..0.05),
            capacity_slope: rng.gen_range(5e3..2e4),
            flow_cap: cap,
            time_value: gamma,
            kind: ArcKind::Physical,
            station: None,
        });
    };
    for i in 0..n - 1 {
        edge(i, i + 1, rng, &mut arcs);
    }
    for i in 0..n {
        for j in i + 2..n {
            if rng.gen_bool(0.35) {
                edge(i, j, rng, &mut arcs);
            }
        }
    }
    let base = TrafficNetwork {
        nodes: nodes.clone(),
        arcs: arcs.clone(),
        time_value: gamma,
        route_reg: 1e-8,
    };

    let n_buses = rng.gen_range(spec.buses.0..=spec.buses.1);
    let ns = rng.gen_range(spec.stations.0..=spec.stations.1).min(n - 2);
    let mut interior: Vec<u32> = (2..n as u32).collect();
    interior.shuffle(rng);
    let mut station_nodes: Vec<u32> = interior[..ns].to_vec();
    station_nodes.sort_unstable();
    let stations: Vec<ChargingStation> = station_nodes
        .iter()
        .enumerate()
        .map(|(s, &node)| ChargingStation {
            id: format!("cs{}", s + 1),
            node,
            grid_bus: rng.gen_range(1..=n_buses as u32),
            avg_demand: rng.gen_range(8.0..16.0),
            charge_rate: rng.gen_range(100.0..300.0),
            flow_cap: rng.gen_range(40.0..200.0),
            free_flow_time: 0.0,
            capacity_slope: rng.gen_range(5e3..2e4),
            bypass_cap: f64::INFINITY,
            time_value: None,
        })
        .collect();

    let paths_between = |o: usize, d: usize| -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut stack = vec![(o, Vec::<usize>::new())];
        while let Some((node, path)) = stack.pop() {
            if node == d {
                out.push(path);
                continue;
            }
            for (k, a) in arcs.iter().enumerate() {
                if a.tail as usize == node + 1 {
                    let mut p = path.clone();
                    p.push(k);
                    stack.push((a.head as usize - 1, p));
                }
            }
        }
        out.sort();
        out
    };
    let n_pairs = rng.gen_range(spec.pairs.0..=spec.pairs.1);
    let mut pairs = Vec::new();
    for w in 0..n_pairs {
        let o = rng.gen_range(0..n / 2);
        let d = rng.gen_range((n / 2).max(o + 2).min(n - 1)..n);
        let ev = rng.gen_bool(0.8);
        let mut candidates: Vec<Vec<String>> = Vec::new();
        for path in paths_between(o, d) {
            let passes: Vec<usize> = path
                .iter()
                .filter_map(|&k| station_nodes.iter().position(|&s| s == arcs[k].tail))
                .collect();
            let choices: Vec<Option<usize>> = if ev {
                passes.iter().map(|&s| Some(s)).collect()
            } else {
                vec![None]
            };
            for charge_at in choices {
                let mut route = Vec::new();
                for &k in &path {
                    if let Some(t) = station_nodes.iter().position(|&x| x == arcs[k].tail) {
                        let kind = if charge_at == Some(t) {
                            "charge"
                        } else {
                            "bypass"
                        };
                        route.push(format!("{kind}:cs{}", t + 1));
                    }
                    route.push(arcs[k].id.clone());
                }
                candidates.push(route);
            }
        }
        if candidates.len() < spec.routes.0 {
            return Ok(None);
        }
        // Spread the kept routes over as many charging stations as possible.
        candidates.shuffle(rng);
        let station_of = |r: &Vec<String>| r.iter().find(|a| a.starts_with("charge:")).cloned();
        let mut seen: Vec<Option<String>> = Vec::new();
        let mut rank = Vec::with_capacity(candidates.len());
        for r in &candidates {
            let s = station_of(r);
            rank.push(seen.iter().filter(|x| **x == s).count());
            seen.push(s);
        }
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by_key(|&i| rank[i]);
        let k = rng
            .gen_range(spec.routes.0..=spec.routes.1)
            .min(candidates.len());
        candidates = order[..k].iter().map(|&i| candidates[i].clone()).collect();
        pairs.push(OdPairSpec {
            id: format!("w{}", w + 1),
            origin: (o + 1) as u32,
            destination: (d + 1) as u32,
            demand: rng.gen_range(spec.od_demand.0..spec.od_demand.1).round(),
            charging: if ev {
                ChargingMode::Once
            } else {
                ChargingMode::Never
            },
            routes: candidates,
        });
    }
    let traffic = match build_extended_network(&base, &stations, &pairs, false) {
        Ok(t) => t,
        Err(_) => return Ok(None),
    };
    let qp = assemble_traffic_qp(&traffic)?;
    if solve_itso(
        &qp,
        &DVector::zeros(qp.num_stations),
        &SolverOptions::default(),
    )
    .is_err()
    {
        return Ok(None);
    }
    let max_station_demand: Vec<f64> = traffic.stations.iter().map(|s| s.demand_cap()).collect();

    let grid = random_grid(rng, spec, n_buses, &traffic, &max_station_demand)?;
    Ok(Some(CoupledInstance { traffic, grid }))
}

fn random_grid(
    rng: &mut ChaCha8Rng,
    spec: &RandomSpec,
    n: usize,
    traffic: &ExtendedTrafficNetwork,
    max_station_demand: &[f64],
) -> Result<DistributionCase> {
    let buses: Vec<Bus> = (0..n)
        .map(|i| Bus {
            id: (i + 1) as u32,
            load: rng.gen_range(spec.load.0..spec.load.1).round(),
            v_min: 0.9,
            v_max: 1.1,
        })
        .collect();
    let parent: Vec<usize> = (1..n).map(|i| rng.gen_range(0..i)).collect();
    let n_gen = rng.gen_range(spec.generators.0..=spec.generators.1).min(n);
    let mut gen_buses = vec![0usize];
    let mut others: Vec<usize> = (1..n).collect();
    others.shuffle(rng);
    gen_buses.extend(others.into_iter().take(n_gen - 1));
    gen_buses.sort_unstable();
    let mut costs: Vec<f64> = (0..n_gen).map(|_| rng.gen_range(0.3..0.9)).collect();
    costs
        .iter_mut()
        .for_each(|c| *c = (*c * 1000.0).round() / 1000.0);

    let mut ev = vec![0.0; n];
    for (s, st) in traffic.stations.iter().enumerate() {
        ev[st.grid_bus as usize - 1] += max_station_demand[s];
    }
    let total: f64 = buses.iter().map(|b| b.load).sum::<f64>() + ev.iter().sum::<f64>();
    let cheap_cap = total * rng.gen_range(0.3..0.7);
    let generators: Vec<Generator> = gen_buses
        .iter()
        .enumerate()
        .map(|(g, &bus)| Generator {
            id: format!("G{}", g + 1),
            bus,
            capacity: if bus == 0 {
                total * 1.5
            } else {
                cheap_cap.round()
            },
            cost: costs[g],
        })
        .collect();

    // Line limits leave room for the worst-case import of every subtree.
    let mut lines = Vec::with_capacity(n - 1);
    for i in 1..n {
        let mut subtree = vec![false; n];
        subtree[i] = true;
        for j in i + 1..n {
            if subtree[parent[j - 1]] {
                subtree[j] = true;
            }
        }
        let need: f64 = (0..n)
            .filter(|&j| subtree[j])
            .map(|j| buses[j].load + ev[j])
            .sum();
        let slack = if rng.gen_bool(0.5) {
            rng.gen_range(1.05..1.6)
        } else {
            f64::INFINITY
        };
        lines.push(Line {
            from: parent[i - 1],
            to: i,
            resistance: rng.gen_range(0.05..0.5),
            reactance: rng.gen_range(0.05..0.5),
            flow_limit: (need * slack).round(),
        });
    }
    let case = DistributionCase::new(buses, lines, generators)?;
    case.couple(traffic)
}

/// Three corridors whose outer stations are small and fill up, so demand
/// changes land on the middle station; a peaking generator sets the price
/// once the main generator is exhausted.
pub fn saturated_corridor_instance(demand: f64) -> Result<CoupledInstance> {
    let p = ToyParams {
        demand,
        route_reg: 1e-8,
        ..ToyParams::default()
    };
    let outer = Corridor {
        slope: 2e4,
        station_cap: 20.0,
    };
    let middle = Corridor {
        slope: 5e3,
        station_cap: 1000.0,
    };
    let traffic = corridor_toy(&p, &[outer, middle, outer])?;
    let grid = feeder_grid(
        3,
        &FeederSpec {
            root_load: 5000.0,
            main: (0.4, 8500.0),
            peaker: Some((0.9, 1e5)),
            line_limit: f64::INFINITY,
        },
    )?;
    Ok(CoupledInstance {
        grid: grid.couple(&traffic)?,
        traffic,
    })
}
