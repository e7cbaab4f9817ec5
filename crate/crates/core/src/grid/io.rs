use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::case::{Bus, DistributionCase, Generator, Line};
use crate::error::{invalid, Error, Result};

pub const GRID_SCHEMA_VERSION: u32 = 1;

/// On-disk distribution network description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    #[serde(default = "schema_one")]
    pub schema_version: u32,
    #[serde(default = "v_min_default")]
    pub v_min: f64,
    #[serde(default = "v_max_default")]
    pub v_max: f64,
    pub buses: Vec<BusRecord>,
    pub lines: Vec<LineRecord>,
    pub generators: Vec<GeneratorRecord>,
    /// Optional station id to bus id map, checked against the traffic file.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub station_buses: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusRecord {
    pub id: u32,
    #[serde(default)]
    pub load: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineRecord {
    pub from: u32,
    pub to: u32,
    pub r: f64,
    pub x: f64,
    /// Missing or null means unconstrained.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorRecord {
    pub id: String,
    pub bus: u32,
    pub capacity: f64,
    pub cost: f64,
}

fn schema_one() -> u32 {
    GRID_SCHEMA_VERSION
}

fn v_min_default() -> f64 {
    0.9
}

fn v_max_default() -> f64 {
    1.1
}

impl GridFile {
    pub fn into_case(self) -> Result<DistributionCase> {
        if self.schema_version != GRID_SCHEMA_VERSION {
            return Err(invalid(format!(
                "unsupported grid schema version {}",
                self.schema_version
            )));
        }
        let buses: Vec<Bus> = self
            .buses
            .iter()
            .map(|b| Bus {
                id: b.id,
                load: b.load,
                v_min: b.v_min.unwrap_or(self.v_min),
                v_max: b.v_max.unwrap_or(self.v_max),
            })
            .collect();
        let index = |id: u32| {
            buses
                .iter()
                .position(|b| b.id == id)
                .ok_or_else(|| invalid(format!("unknown bus id {id}")))
        };
        let mut lines = Vec::with_capacity(self.lines.len());
        for l in &self.lines {
            lines.push(Line {
                from: index(l.from)?,
                to: index(l.to)?,
                resistance: l.r,
                reactance: l.x,
                flow_limit: l.limit.unwrap_or(f64::INFINITY),
            });
        }
        let mut generators = Vec::with_capacity(self.generators.len());
        for g in &self.generators {
            generators.push(Generator {
                id: g.id.clone(),
                bus: index(g.bus)?,
                capacity: g.capacity,
                cost: g.cost,
            });
        }
        for &bus in self.station_buses.values() {
            index(bus)?;
        }
        let mut case = DistributionCase::new(buses, lines, generators)?;
        case.declared_stations = self.station_buses;
        Ok(case)
    }

    pub fn from_case(case: &DistributionCase) -> GridFile {
        let id = |i: usize| case.buses[i].id;
        GridFile {
            schema_version: GRID_SCHEMA_VERSION,
            v_min: v_min_default(),
            v_max: v_max_default(),
            buses: case
                .buses
                .iter()
                .map(|b| BusRecord {
                    id: b.id,
                    load: b.load,
                    v_min: (b.v_min != v_min_default()).then_some(b.v_min),
                    v_max: (b.v_max != v_max_default()).then_some(b.v_max),
                })
                .collect(),
            lines: case
                .lines
                .iter()
                .map(|l| LineRecord {
                    from: id(l.from),
                    to: id(l.to),
                    r: l.resistance,
                    x: l.reactance,
                    limit: l.flow_limit.is_finite().then_some(l.flow_limit),
                })
                .collect(),
            generators: case
                .generators
                .iter()
                .map(|g| GeneratorRecord {
                    id: g.id.clone(),
                    bus: id(g.bus),
                    capacity: g.capacity,
                    cost: g.cost,
                })
                .collect(),
            station_buses: case.declared_stations.clone(),
        }
    }
}

pub fn parse_grid(json: &str) -> Result<DistributionCase> {
    let file: GridFile = serde_json::from_str(json).map_err(|source| Error::Json {
        context: "distribution network".into(),
        source,
    })?;
    file.into_case()
}

pub fn load_grid(path: &Path) -> Result<DistributionCase> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_grid(&text)
}
