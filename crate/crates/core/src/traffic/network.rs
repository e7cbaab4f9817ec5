use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub type NodeId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArcKind {
    Physical,
    /// Bypass arc of a station: zero travel time.
    NoCharge,
    Charge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Arc {
    pub id: String,
    pub tail: NodeId,
    pub head: NodeId,
    /// Free-flow time ξ⁰ in hours.
    pub free_flow_time: f64,
    /// Capacity parameter R: time grows by `flow / R`.
    pub capacity_slope: f64,
    /// Upper flow bound; `+inf` when uncapped.
    pub flow_cap: f64,
    /// Value of time γ in $/h.
    pub time_value: f64,
    pub kind: ArcKind,
    /// Station owning a virtual arc.
    pub station: Option<usize>,
}

impl Arc {
    /// Travel time of one vehicle at the given arc flow. Charge arcs add the
    /// charging time `e/ρ` of their station.
    pub fn travel_time(&self, flow: f64, station: Option<&ChargingStation>) -> Result<f64> {
        if !flow.is_finite() || flow < 0.0 {
            return Err(invalid(format!(
                "arc {}: flow {flow} must be finite and nonnegative",
                self.id
            )));
        }
        match self.kind {
            ArcKind::NoCharge => Ok(0.0),
            ArcKind::Physical => Ok(self.free_flow_time + flow / self.capacity_slope),
            ArcKind::Charge => {
                let st = station.ok_or_else(|| {
                    invalid(format!(
                        "charge arc {} needs its station parameters",
                        self.id
                    ))
                })?;
                Ok(st.charging_time() + self.free_flow_time + flow / self.capacity_slope)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChargingStation {
    pub id: String,
    pub node: NodeId,
    /// Identifier of the distribution bus the station draws from.
    pub grid_bus: u32,
    /// Average energy per charging EV, kWh.
    pub avg_demand: f64,
    /// Charging power, kW.
    pub charge_rate: f64,
    /// Maximum number of charging EVs.
    pub flow_cap: f64,
    pub free_flow_time: f64,
    pub capacity_slope: f64,
    /// Upper bound on vehicles passing without charging.
    pub bypass_cap: f64,
    /// Value of time on the station arcs; the network value when `None`.
    pub time_value: Option<f64>,
}

impl ChargingStation {
    pub fn charging_time(&self) -> f64 {
        self.avg_demand / self.charge_rate
    }

    /// Largest energy the station can deliver, kWh.
    pub fn demand_cap(&self) -> f64 {
        self.avg_demand * self.flow_cap
    }
}

/// Which station arcs a route expansion may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChargingMode {
    /// Every combination of charging and bypassing.
    #[default]
    Optional,
    /// Exactly one charge per route.
    Once,
    /// Bypass every station.
    Never,
}

/// Origin-destination pair as written in an input file.
#[derive(Debug, Clone, PartialEq)]
pub struct OdPairSpec {
    pub id: String,
    pub origin: NodeId,
    pub destination: NodeId,
    pub demand: f64,
    pub charging: ChargingMode,
    /// Arc id sequences. Virtual arcs are named `charge:<station>` and
    /// `bypass:<station>`.
    pub routes: Vec<Vec<String>>,
}

/// Origin-destination pair with routes resolved to extended-network arcs.
#[derive(Debug, Clone, PartialEq)]
pub struct OdPair {
    pub id: String,
    pub origin: NodeId,
    pub destination: NodeId,
    pub demand: f64,
    pub charging: ChargingMode,
    pub routes: Vec<Vec<usize>>,
}

/// Physical road network before stations are attached.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficNetwork {
    pub nodes: Vec<NodeId>,
    pub arcs: Vec<Arc>,
    pub time_value: f64,
    /// Weight of the `½ε‖f‖²` route-flow regularizer.
    pub route_reg: f64,
}

/// Road network with a charge arc and a bypass arc per station.
///
/// Every station node `n` gets an auxiliary node `n'`; both station arcs run
/// `n → n'` and physical arcs that left `n` now leave `n'`. Arcs are ordered
/// physical, then bypass arcs, then charge arcs, stations in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedTrafficNetwork {
    pub nodes: Vec<NodeId>,
    pub arcs: Vec<Arc>,
    pub stations: Vec<ChargingStation>,
    pub od_pairs: Vec<OdPair>,
    pub time_value: f64,
    pub route_reg: f64,
    pub num_physical: usize,
    /// Auxiliary node of each station.
    pub aux_nodes: Vec<NodeId>,
}

impl ExtendedTrafficNetwork {
    pub fn num_arcs(&self) -> usize {
        self.arcs.len()
    }

    pub fn num_stations(&self) -> usize {
        self.stations.len()
    }

    pub fn num_routes(&self) -> usize {
        self.od_pairs.iter().map(|p| p.routes.len()).sum()
    }

    pub fn bypass_arc(&self, station: usize) -> usize {
        self.num_physical + station
    }

    pub fn charge_arc(&self, station: usize) -> usize {
        self.num_physical + self.stations.len() + station
    }

    pub fn arc_travel_time(&self, arc: usize, flow: f64) -> Result<f64> {
        let a = &self.arcs[arc];
        a.travel_time(flow, a.station.map(|s| &self.stations[s]))
    }
}

/// Attaches stations to the physical network and resolves routes.
///
/// With `expand_routes` set, a route that passes a station node without
/// naming a station arc is split into charge and bypass variants according
/// to the pair's [`ChargingMode`]; otherwise such a route is rejected.
pub fn build_extended_network(
    base: &TrafficNetwork,
    stations: &[ChargingStation],
    od_pairs: &[OdPairSpec],
    expand_routes: bool,
) -> Result<ExtendedTrafficNetwork> {
    validate_base(base)?;
    let node_set: BTreeSet<NodeId> = base.nodes.iter().copied().collect();
    let mut station_ids = BTreeSet::new();
    let mut station_at: HashMap<NodeId, usize> = HashMap::new();
    for (s, st) in stations.iter().enumerate() {
        if !station_ids.insert(st.id.clone()) {
            return Err(invalid(format!("duplicate station id {}", st.id)));
        }
        if !node_set.contains(&st.node) {
            return Err(invalid(format!(
                "station {} sits on unknown node {}",
                st.id, st.node
            )));
        }
        if station_at.insert(st.node, s).is_some() {
            return Err(invalid(format!(
                "node {} hosts more than one station",
                st.node
            )));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(st.avg_demand) || !positive(st.charge_rate) || !positive(st.capacity_slope) {
            return Err(invalid(format!(
                "station {}: demand, charge rate and capacity slope must be positive",
                st.id
            )));
        }
        if !(st.flow_cap > 0.0) || !(st.bypass_cap > 0.0) {
            return Err(invalid(format!(
                "station {}: flow caps must be positive",
                st.id
            )));
        }
        if !(st.free_flow_time >= 0.0) || !st.free_flow_time.is_finite() {
            return Err(invalid(format!(
                "station {}: free-flow time must be nonnegative",
                st.id
            )));
        }
        if let Some(g) = st.time_value {
            if !(g > 0.0) || !g.is_finite() {
                return Err(invalid(format!(
                    "station {}: time value must be positive",
                    st.id
                )));
            }
        }
    }

    let next_id = base.nodes.iter().copied().max().unwrap_or(0);
    let aux_nodes: Vec<NodeId> = (0..stations.len())
        .map(|s| next_id + 1 + s as NodeId)
        .collect();
    let mut nodes = base.nodes.clone();
    nodes.extend(aux_nodes.iter().copied());

    let mut arcs: Vec<Arc> = base
        .arcs
        .iter()
        .map(|a| {
            let mut a = a.clone();
            if let Some(&s) = station_at.get(&a.tail) {
                a.tail = aux_nodes[s];
            }
            a
        })
        .collect();
    let num_physical = arcs.len();
    for (s, st) in stations.iter().enumerate() {
        arcs.push(Arc {
            id: format!("bypass:{}", st.id),
            tail: st.node,
            head: aux_nodes[s],
            free_flow_time: 0.0,
            capacity_slope: f64::INFINITY,
            flow_cap: st.bypass_cap,
            time_value: st.time_value.unwrap_or(base.time_value),
            kind: ArcKind::NoCharge,
            station: Some(s),
        });
    }
    for (s, st) in stations.iter().enumerate() {
        arcs.push(Arc {
            id: format!("charge:{}", st.id),
            tail: st.node,
            head: aux_nodes[s],
            free_flow_time: st.free_flow_time,
            capacity_slope: st.capacity_slope,
            flow_cap: st.flow_cap,
            time_value: st.time_value.unwrap_or(base.time_value),
            kind: ArcKind::Charge,
            station: Some(s),
        });
    }
    let arc_index: HashMap<&str, usize> = arcs
        .iter()
        .enumerate()
        .map(|(i, a)| (a.id.as_str(), i))
        .collect();

    let mut pair_ids = BTreeSet::new();
    let mut pairs = Vec::with_capacity(od_pairs.len());
    for spec in od_pairs {
        if !pair_ids.insert(spec.id.clone()) {
            return Err(invalid(format!("duplicate O-D pair id {}", spec.id)));
        }
        for n in [spec.origin, spec.destination] {
            if !node_set.contains(&n) {
                return Err(invalid(format!(
                    "O-D pair {} references unknown node {n}",
                    spec.id
                )));
            }
        }
        if !spec.demand.is_finite() || spec.demand < 0.0 {
            return Err(invalid(format!(
                "O-D pair {}: demand must be finite and nonnegative",
                spec.id
            )));
        }
        if spec.routes.is_empty() {
            return Err(invalid(format!("O-D pair {} has no routes", spec.id)));
        }
        let ctx = RouteContext {
            arcs: &arcs,
            arc_index: &arc_index,
            station_at: &station_at,
            aux_nodes: &aux_nodes,
            charge_offset: num_physical + stations.len(),
            bypass_offset: num_physical,
        };
        let mut routes: Vec<Vec<usize>> = Vec::new();
        for (r, route) in spec.routes.iter().enumerate() {
            for variant in ctx.resolve(spec, r, route, expand_routes)? {
                if !routes.contains(&variant) {
                    routes.push(variant);
                }
            }
        }
        pairs.push(OdPair {
            id: spec.id.clone(),
            origin: spec.origin,
            destination: spec.destination,
            demand: spec.demand,
            charging: spec.charging,
            routes,
        });
    }

    Ok(ExtendedTrafficNetwork {
        nodes,
        arcs,
        stations: stations.to_vec(),
        od_pairs: pairs,
        time_value: base.time_value,
        route_reg: base.route_reg,
        num_physical,
        aux_nodes,
    })
}

fn validate_base(base: &TrafficNetwork) -> Result<()> {
    if !(base.time_value > 0.0) || !base.time_value.is_finite() {
        return Err(invalid("value of time must be positive"));
    }
    if !(base.route_reg >= 0.0) || !base.route_reg.is_finite() {
        return Err(invalid("route regularization must be nonnegative"));
    }
    let nodes: BTreeSet<NodeId> = base.nodes.iter().copied().collect();
    if nodes.len() != base.nodes.len() {
        return Err(invalid("duplicate node id"));
    }
    let mut ids = BTreeSet::new();
    for a in &base.arcs {
        if a.kind != ArcKind::Physical {
            return Err(invalid(format!(
                "arc {} of the base network must be physical",
                a.id
            )));
        }
        if a.id.starts_with("charge:") || a.id.starts_with("bypass:") {
            return Err(invalid(format!("arc id {} uses a reserved prefix", a.id)));
        }
        if !ids.insert(a.id.as_str()) {
            return Err(invalid(format!("duplicate arc id {}", a.id)));
        }
        if !nodes.contains(&a.tail) || !nodes.contains(&a.head) {
            return Err(invalid(format!("arc {} references an unknown node", a.id)));
        }
        if !(a.capacity_slope > 0.0) || !a.capacity_slope.is_finite() {
            return Err(invalid(format!(
                "arc {}: capacity slope must be positive",
                a.id
            )));
        }
        if !(a.free_flow_time >= 0.0) || !a.free_flow_time.is_finite() {
            return Err(invalid(format!(
                "arc {}: free-flow time must be nonnegative",
                a.id
            )));
        }
        if !(a.flow_cap > 0.0) {
            return Err(invalid(format!("arc {}: flow cap must be positive", a.id)));
        }
        if !(a.time_value > 0.0) || !a.time_value.is_finite() {
            return Err(invalid(format!(
                "arc {}: value of time must be positive",
                a.id
            )));
        }
    }
    Ok(())
}

struct RouteContext<'a> {
    arcs: &'a [Arc],
    arc_index: &'a HashMap<&'a str, usize>,
    station_at: &'a HashMap<NodeId, usize>,
    aux_nodes: &'a [NodeId],
    charge_offset: usize,
    bypass_offset: usize,
}

impl RouteContext<'_> {
    fn resolve(
        &self,
        pair: &OdPairSpec,
        r: usize,
        route: &[String],
        expand: bool,
    ) -> Result<Vec<Vec<usize>>> {
        if route.is_empty() {
            return Err(invalid(format!("route {r} of pair {} is empty", pair.id)));
        }
        let mut variants: Vec<(Vec<usize>, usize)> = vec![(Vec::new(), 0)];
        let mut node = pair.origin;
        for id in route {
            let idx = *self.arc_index.get(id.as_str()).ok_or_else(|| {
                invalid(format!(
                    "route {r} of pair {} uses unknown arc {id}",
                    pair.id
                ))
            })?;
            let arc = &self.arcs[idx];
            if arc.tail != node {
                let insertion =
                    self.station_at.get(&node).copied().filter(|&s| {
                        arc.kind == ArcKind::Physical && arc.tail == self.aux_nodes[s]
                    });
                let Some(s) = insertion else {
                    return Err(invalid(format!(
                        "route {r} of pair {} is not connected at arc {id}",
                        pair.id
                    )));
                };
                if !expand {
                    return Err(invalid(format!(
                        "route {r} of pair {} passes station node {node} without a station arc",
                        pair.id
                    )));
                }
                let mut next = Vec::with_capacity(variants.len() * 2);
                for (arcs, charges) in variants {
                    let mut bypass = arcs.clone();
                    bypass.push(self.bypass_offset + s);
                    next.push((bypass, charges));
                    if pair.charging != ChargingMode::Never {
                        let mut charge = arcs;
                        charge.push(self.charge_offset + s);
                        next.push((charge, charges + 1));
                    }
                }
                variants = next;
            }
            for v in variants.iter_mut() {
                v.0.push(idx);
                if arc.kind == ArcKind::Charge {
                    v.1 += 1;
                }
            }
            node = arc.head;
        }
        if node != pair.destination {
            return Err(invalid(format!(
                "route {r} of pair {} ends at node {node}, not at destination {}",
                pair.id, pair.destination
            )));
        }
        let kept: Vec<Vec<usize>> = variants
            .into_iter()
            .filter(|(_, c)| match pair.charging {
                ChargingMode::Optional => true,
                ChargingMode::Once => *c == 1,
                ChargingMode::Never => *c == 0,
            })
            .map(|(a, _)| a)
            .collect();
        if kept.is_empty() {
            return Err(invalid(format!(
                "route {r} of pair {} cannot satisfy its charging mode",
                pair.id
            )));
        }
        Ok(kept)
    }
}
