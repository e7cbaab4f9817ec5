use nalgebra::DVector;

use crate::error::{invalid, Result};
use crate::grid::{assemble_dual, DistributionCase, DualProblem};
use crate::mpqp::PriceBox;
use crate::traffic::{assemble_traffic_qp, CompactQp, ExtendedTrafficNetwork};

/// Traffic network and distribution grid coupled through station buses.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledProblem {
    pub traffic: ExtendedTrafficNetwork,
    pub grid: DistributionCase,
    pub traffic_qp: CompactQp,
    pub dual: DualProblem,
}

impl CoupledProblem {
    pub fn new(traffic: ExtendedTrafficNetwork, grid: DistributionCase) -> Result<Self> {
        let grid = grid.couple(&traffic)?;
        let traffic_qp = assemble_traffic_qp(&traffic)?;
        let dual = assemble_dual(&grid)?;
        Ok(CoupledProblem {
            traffic,
            grid,
            traffic_qp,
            dual,
        })
    }

    pub fn num_stations(&self) -> usize {
        self.traffic.num_stations()
    }

    /// `[0, 2 max c]` for every station.
    pub fn default_price_box(&self) -> Result<PriceBox> {
        let hi = 2.0 * self.grid.max_cost();
        if !(hi > 0.0) {
            return Err(invalid(
                "default price box needs a positive generator cost; pass bounds explicitly",
            ));
        }
        PriceBox::uniform(self.num_stations(), 0.0, hi)
    }

    /// Same instance with every O-D demand replaced.
    pub fn with_demand(&self, demand: &DVector<f64>) -> Result<Self> {
        let mut traffic = self.traffic.clone();
        if demand.len() != traffic.od_pairs.len() {
            return Err(invalid("demand vector length does not match O-D pairs"));
        }
        for (p, &m) in traffic.od_pairs.iter_mut().zip(demand.iter()) {
            p.demand = m;
        }
        let traffic_qp = self.traffic_qp.with_demand(demand)?;
        Ok(CoupledProblem {
            traffic,
            traffic_qp,
            ..self.clone()
        })
    }

    /// O-D demands of the instance.
    pub fn demand(&self) -> DVector<f64> {
        self.traffic_qp.demand.clone()
    }

    /// Same instance with one generator's marginal cost replaced.
    pub fn with_generator_cost(&self, generator: &str, cost: f64) -> Result<Self> {
        let mut grid = self.grid.clone();
        let g = grid
            .generator_index(generator)
            .ok_or_else(|| invalid(format!("unknown generator {generator}")))?;
        if !cost.is_finite() {
            return Err(invalid("generator cost must be finite"));
        }
        grid.generators[g].cost = cost;
        let dual = assemble_dual(&grid)?;
        Ok(CoupledProblem {
            grid,
            dual,
            ..self.clone()
        })
    }
}
