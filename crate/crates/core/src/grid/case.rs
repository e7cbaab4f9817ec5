use std::collections::{BTreeMap, BTreeSet, VecDeque};

use nalgebra::DVector;

use crate::error::{invalid, Result};
use crate::traffic::ExtendedTrafficNetwork;

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: u32,
    /// Fixed load, kW.
    pub load: f64,
    pub v_min: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    /// Bus indices (not ids).
    pub from: usize,
    pub to: usize,
    pub resistance: f64,
    pub reactance: f64,
    /// Flow limit in kW; `+inf` when unconstrained.
    pub flow_limit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub id: String,
    /// Bus index.
    pub bus: usize,
    pub capacity: f64,
    /// Marginal cost, $/kWh.
    pub cost: f64,
}

/// Linearized branch-flow coefficients: `F_ij = K1 (v_i - v_j) + K2 (θ_i - θ_j)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowCoefficients {
    pub k1: f64,
    pub k2: f64,
}

impl FlowCoefficients {
    pub fn new(resistance: f64, reactance: f64) -> Result<Self> {
        let z2 = resistance * resistance + reactance * reactance;
        if !z2.is_finite() || z2 <= 0.0 {
            return Err(invalid("line impedance must be nonzero and finite"));
        }
        if reactance == 0.0 {
            return Err(invalid("line reactance must be nonzero"));
        }
        Ok(FlowCoefficients {
            k1: reactance * resistance / z2,
            k2: reactance * reactance / z2,
        })
    }
}

/// Radial or meshed distribution network with linear generation costs.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionCase {
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    /// Bus index of every charging station, in station order.
    pub station_buses: Vec<usize>,
    /// Station-to-bus-id mapping declared in the grid file, if any.
    pub declared_stations: BTreeMap<String, u32>,
}

impl DistributionCase {
    pub fn new(buses: Vec<Bus>, lines: Vec<Line>, generators: Vec<Generator>) -> Result<Self> {
        let case = DistributionCase {
            buses,
            lines,
            generators,
            station_buses: Vec::new(),
            declared_stations: BTreeMap::new(),
        };
        case.validate()?;
        Ok(case)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.buses.len();
        if n == 0 {
            return Err(invalid("grid has no buses"));
        }
        let mut ids = BTreeSet::new();
        for b in &self.buses {
            if !ids.insert(b.id) {
                return Err(invalid(format!("duplicate bus id {}", b.id)));
            }
            if !b.load.is_finite() {
                return Err(invalid(format!("bus {}: load must be finite", b.id)));
            }
            if !(b.v_min.is_finite() && b.v_max.is_finite() && b.v_min <= b.v_max) {
                return Err(invalid(format!("bus {}: voltage bounds are invalid", b.id)));
            }
        }
        for (l, line) in self.lines.iter().enumerate() {
            if line.from >= n || line.to >= n || line.from == line.to {
                return Err(invalid(format!("line {l} has invalid end buses")));
            }
            FlowCoefficients::new(line.resistance, line.reactance)
                .map_err(|e| invalid(format!("line {l}: {e}")))?;
            if !(line.flow_limit > 0.0) {
                return Err(invalid(format!("line {l}: flow limit must be positive")));
            }
        }
        if self.generators.is_empty() {
            return Err(invalid("grid has no generators"));
        }
        let mut gen_buses = BTreeSet::new();
        let mut gen_ids = BTreeSet::new();
        for g in &self.generators {
            if g.bus >= n {
                return Err(invalid(format!(
                    "generator {} sits on an unknown bus",
                    g.id
                )));
            }
            if !gen_buses.insert(g.bus) {
                return Err(invalid(format!(
                    "bus {} hosts more than one generator",
                    self.buses[g.bus].id
                )));
            }
            if !gen_ids.insert(g.id.clone()) {
                return Err(invalid(format!("duplicate generator id {}", g.id)));
            }
            if !(g.capacity.is_finite() && g.capacity >= 0.0) || !g.cost.is_finite() {
                return Err(invalid(format!(
                    "generator {}: capacity must be nonnegative and cost finite",
                    g.id
                )));
            }
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let adj = self.adjacency();
        while let Some(i) = queue.pop_front() {
            for &(j, _) in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(invalid("grid is not connected"));
        }
        for &s in &self.station_buses {
            if s >= n {
                return Err(invalid("station bus index out of range"));
            }
        }
        Ok(())
    }

    /// Neighbors of every bus as `(bus, line)` pairs.
    pub fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.buses.len()];
        for (l, line) in self.lines.iter().enumerate() {
            adj[line.from].push((line.to, l));
            adj[line.to].push((line.from, l));
        }
        adj
    }

    pub fn num_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn num_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn num_stations(&self) -> usize {
        self.station_buses.len()
    }

    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn generator_index(&self, id: &str) -> Option<usize> {
        self.generators.iter().position(|g| g.id == id)
    }

    pub fn flow_coefficients(&self) -> Vec<FlowCoefficients> {
        self.lines
            .iter()
            .map(|l| FlowCoefficients::new(l.resistance, l.reactance).expect("validated line"))
            .collect()
    }

    /// Generation capacity per bus (zero where no generator is connected).
    pub fn capacity_per_bus(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.num_buses());
        for g in &self.generators {
            v[g.bus] = g.capacity;
        }
        v
    }

    /// Marginal cost per bus (zero where no generator is connected).
    pub fn cost_per_bus(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.num_buses());
        for g in &self.generators {
            v[g.bus] = g.cost;
        }
        v
    }

    pub fn loads(&self) -> DVector<f64> {
        DVector::from_iterator(self.num_buses(), self.buses.iter().map(|b| b.load))
    }

    pub fn max_cost(&self) -> f64 {
        self.generators.iter().map(|g| g.cost).fold(0.0, f64::max)
    }

    /// Lowest-index bus hosting a generator; its voltage angle is fixed to zero.
    pub fn reference_bus(&self) -> usize {
        self.generators
            .iter()
            .map(|g| g.bus)
            .min()
            .expect("validated case has a generator")
    }

    /// Station demands accumulated onto their buses.
    pub fn bus_demand(&self, station_demand: &DVector<f64>) -> Result<DVector<f64>> {
        if station_demand.len() != self.num_stations() {
            return Err(invalid(format!(
                "expected {} station demands, got {}",
                self.num_stations(),
                station_demand.len()
            )));
        }
        if station_demand.iter().any(|v| !v.is_finite()) {
            return Err(invalid("station demands must be finite"));
        }
        let mut d = DVector::zeros(self.num_buses());
        for (s, &b) in self.station_buses.iter().enumerate() {
            d[b] += station_demand[s];
        }
        Ok(d)
    }

    /// Station prices read from a vector of bus prices.
    pub fn station_prices(&self, bus_prices: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.num_stations(),
            self.station_buses.iter().map(|&b| bus_prices[b]),
        )
    }

    /// Attaches the charging stations of a traffic network by their bus ids.
    pub fn couple(mut self, net: &ExtendedTrafficNetwork) -> Result<Self> {
        let mut buses = Vec::with_capacity(net.num_stations());
        for st in &net.stations {
            if let Some(&declared) = self.declared_stations.get(&st.id) {
                if declared != st.grid_bus {
                    return Err(invalid(format!(
                        "station {} is on bus {} in the traffic file but bus {declared} in the grid file",
                        st.id, st.grid_bus
                    )));
                }
            }
            let idx = self.bus_index(st.grid_bus).ok_or_else(|| {
                invalid(format!(
                    "station {} references unknown bus {}",
                    st.id, st.grid_bus
                ))
            })?;
            buses.push(idx);
        }
        for id in self.declared_stations.keys() {
            if !net.stations.iter().any(|s| &s.id == id) {
                return Err(invalid(format!("grid file maps unknown station {id}")));
            }
        }
        self.station_buses = buses;
        Ok(self)
    }
}
