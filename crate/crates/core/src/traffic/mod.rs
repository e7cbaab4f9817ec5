//! Road network with charging stations and the traffic operator's
//! assignment problem.

mod compact;
mod io;
mod network;

pub use compact::{assemble_traffic_qp, demand_from_flows, solve_itso, CompactQp, TrafficSolution};
pub use io::{
    load_traffic, parse_traffic, ArcDefaults, ArcRecord, OdPairRecord, StationRecord, TrafficFile,
    TRAFFIC_SCHEMA_VERSION,
};
pub use network::{
    build_extended_network, Arc, ArcKind, ChargingMode, ChargingStation, ExtendedTrafficNetwork,
    NodeId, OdPair, OdPairSpec, TrafficNetwork,
};
