use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{
    build_extended_network, Arc, ArcKind, ChargingMode, ChargingStation, ExtendedTrafficNetwork,
    NodeId, OdPairSpec, TrafficNetwork,
};
use crate::error::{invalid, Error, Result};

pub const TRAFFIC_SCHEMA_VERSION: u32 = 1;

/// On-disk traffic network description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficFile {
    #[serde(default = "schema_one")]
    pub schema_version: u32,
    /// Value of time γ, $/h.
    pub time_value: f64,
    #[serde(default = "default_route_reg")]
    pub route_regularization: f64,
    #[serde(default = "yes")]
    pub expand_routes: bool,
    #[serde(default)]
    pub defaults: ArcDefaults,
    pub nodes: Vec<NodeId>,
    pub arcs: Vec<ArcRecord>,
    #[serde(default)]
    pub stations: Vec<StationRecord>,
    pub od_pairs: Vec<OdPairRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArcDefaults {
    #[serde(default)]
    pub free_flow_time: f64,
    #[serde(default)]
    pub capacity_slope: Option<f64>,
    /// Missing or null means uncapped.
    #[serde(default)]
    pub flow_cap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArcRecord {
    pub id: String,
    pub tail: NodeId,
    pub head: NodeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub free_flow_time: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity_slope: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_cap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationRecord {
    pub id: String,
    pub node: NodeId,
    pub grid_bus: u32,
    pub avg_demand: f64,
    pub charge_rate: f64,
    pub flow_cap: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub free_flow_time: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity_slope: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bypass_cap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdPairRecord {
    pub id: String,
    pub origin: NodeId,
    pub destination: NodeId,
    pub demand: f64,
    #[serde(default)]
    pub charging: ChargingMode,
    pub routes: Vec<Vec<String>>,
}

fn schema_one() -> u32 {
    TRAFFIC_SCHEMA_VERSION
}

fn default_route_reg() -> f64 {
    1e-8
}

fn yes() -> bool {
    true
}

impl TrafficFile {
    pub fn into_network(self) -> Result<ExtendedTrafficNetwork> {
        if self.schema_version != TRAFFIC_SCHEMA_VERSION {
            return Err(invalid(format!(
                "unsupported traffic schema version {}",
                self.schema_version
            )));
        }
        let d = &self.defaults;
        let mut arcs = Vec::with_capacity(self.arcs.len());
        for a in &self.arcs {
            let slope = a.capacity_slope.or(d.capacity_slope).ok_or_else(|| {
                invalid(format!(
                    "arc {} has no capacity slope and no default is set",
                    a.id
                ))
            })?;
            arcs.push(Arc {
                id: a.id.clone(),
                tail: a.tail,
                head: a.head,
                free_flow_time: a.free_flow_time.unwrap_or(d.free_flow_time),
                capacity_slope: slope,
                flow_cap: a.flow_cap.or(d.flow_cap).unwrap_or(f64::INFINITY),
                time_value: a.time_value.unwrap_or(self.time_value),
                kind: ArcKind::Physical,
                station: None,
            });
        }
        let base = TrafficNetwork {
            nodes: self.nodes.clone(),
            arcs,
            time_value: self.time_value,
            route_reg: self.route_regularization,
        };
        let mut stations = Vec::with_capacity(self.stations.len());
        for s in &self.stations {
            let slope = s.capacity_slope.or(d.capacity_slope).ok_or_else(|| {
                invalid(format!(
                    "station {} has no capacity slope and no default is set",
                    s.id
                ))
            })?;
            stations.push(ChargingStation {
                id: s.id.clone(),
                node: s.node,
                grid_bus: s.grid_bus,
                avg_demand: s.avg_demand,
                charge_rate: s.charge_rate,
                flow_cap: s.flow_cap,
                free_flow_time: s.free_flow_time.unwrap_or(d.free_flow_time),
                capacity_slope: slope,
                bypass_cap: s.bypass_cap.unwrap_or(f64::INFINITY),
                time_value: s.time_value,
            });
        }
        let pairs: Vec<OdPairSpec> = self
            .od_pairs
            .iter()
            .map(|p| OdPairSpec {
                id: p.id.clone(),
                origin: p.origin,
                destination: p.destination,
                demand: p.demand,
                charging: p.charging,
                routes: p.routes.clone(),
            })
            .collect();
        build_extended_network(&base, &stations, &pairs, self.expand_routes)
    }

    /// File form of an extended network. Routes are written with explicit
    /// station arcs, so reading the file back reproduces the same network.
    pub fn from_network(net: &ExtendedTrafficNetwork) -> TrafficFile {
        let original_tail = |tail: NodeId| {
            net.aux_nodes
                .iter()
                .position(|&n| n == tail)
                .map(|s| net.stations[s].node)
                .unwrap_or(tail)
        };
        let finite = |v: f64| if v.is_finite() { Some(v) } else { None };
        let arcs = net.arcs[..net.num_physical]
            .iter()
            .map(|a| ArcRecord {
                id: a.id.clone(),
                tail: original_tail(a.tail),
                head: a.head,
                free_flow_time: Some(a.free_flow_time),
                capacity_slope: Some(a.capacity_slope),
                flow_cap: finite(a.flow_cap),
                time_value: (a.time_value != net.time_value).then_some(a.time_value),
            })
            .collect();
        let stations = net
            .stations
            .iter()
            .map(|s| StationRecord {
                id: s.id.clone(),
                node: s.node,
                grid_bus: s.grid_bus,
                avg_demand: s.avg_demand,
                charge_rate: s.charge_rate,
                flow_cap: s.flow_cap,
                free_flow_time: Some(s.free_flow_time),
                capacity_slope: Some(s.capacity_slope),
                bypass_cap: finite(s.bypass_cap),
                time_value: s.time_value,
            })
            .collect();
        let od_pairs = net
            .od_pairs
            .iter()
            .map(|p| OdPairRecord {
                id: p.id.clone(),
                origin: p.origin,
                destination: p.destination,
                demand: p.demand,
                charging: p.charging,
                routes: p
                    .routes
                    .iter()
                    .map(|r| r.iter().map(|&a| net.arcs[a].id.clone()).collect())
                    .collect(),
            })
            .collect();
        TrafficFile {
            schema_version: TRAFFIC_SCHEMA_VERSION,
            time_value: net.time_value,
            route_regularization: net.route_reg,
            expand_routes: false,
            defaults: ArcDefaults::default(),
            nodes: net.nodes[..net.nodes.len() - net.aux_nodes.len()].to_vec(),
            arcs,
            stations,
            od_pairs,
        }
    }
}

pub fn parse_traffic(json: &str) -> Result<ExtendedTrafficNetwork> {
    let file: TrafficFile = serde_json::from_str(json).map_err(|source| Error::Json {
        context: "traffic network".into(),
        source,
    })?;
    file.into_network()
}

pub fn load_traffic(path: &Path) -> Result<ExtendedTrafficNetwork> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_traffic(&text)
}
