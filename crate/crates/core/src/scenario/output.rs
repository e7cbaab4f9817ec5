use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::experiments::{BaselineComparison, CostSweepRow, DemandSweepRow};
use super::forecast::ForecastReport;
use super::report::OUTPUT_SCHEMA_VERSION;
use crate::error::{Error, Result};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })?;
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

/// Shortest round-trip text of a finite number, empty otherwise.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// A CSV table whose first line is `# schema: chargeprice/<name> v1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub name: &'static str,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    fn new(name: &'static str, header: &[&str]) -> Self {
        CsvTable {
            name,
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(io_err(path))?;
        let mut out = BufWriter::new(file);
        writeln!(
            out,
            "# schema: chargeprice/{} v{OUTPUT_SCHEMA_VERSION}",
            self.name
        )
        .map_err(io_err(path))?;
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Io {
            path: path.to_path_buf(),
            source: e.into(),
        };
        w.write_record(&self.header).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        w.flush().map_err(io_err(path))
    }
}

/// Per-level summary table plus per-station demands.
pub fn demand_sweep_tables(rows: &[DemandSweepRow]) -> (CsvTable, CsvTable) {
    let mut summary = CsvTable::new(
        "sweep_demand",
        &[
            "m_w",
            "status",
            "idso_cost",
            "joint_idso_cost",
            "relative_gap",
            "combined_cost",
            "regions",
            "wall_time_ms",
            "error",
        ],
    );
    let mut stations = CsvTable::new(
        "sweep_demand_stations",
        &["m_w", "station", "bus", "price", "demand"],
    );
    for r in rows {
        summary.rows.push(vec![
            num(r.m_w),
            r.status.clone(),
            opt(r.idso_cost),
            opt(r.joint_idso_cost),
            opt(r.relative_gap),
            opt(r.combined_cost),
            r.regions.map(|v| v.to_string()).unwrap_or_default(),
            format!("{:.3}", r.wall_time_ms),
            r.error.clone().unwrap_or_default(),
        ]);
        for s in &r.stations {
            stations.rows.push(vec![
                num(r.m_w),
                s.id.clone(),
                s.bus.to_string(),
                num(s.price),
                num(s.demand),
            ]);
        }
    }
    (summary, stations)
}

/// Price table (one column per station) and the matching demand
/// table.
pub fn cost_sweep_tables(rows: &[CostSweepRow], station_ids: &[String]) -> (CsvTable, CsvTable) {
    let mut head = vec!["cost".to_string(), "status".to_string()];
    let mut prices = CsvTable::new("sweep_cost_prices", &[]);
    let mut demands = CsvTable::new("sweep_cost_demands", &[]);
    prices.header = head
        .iter()
        .cloned()
        .chain(station_ids.iter().map(|s| format!("price_{s}")))
        .collect();
    head.extend(station_ids.iter().map(|s| format!("demand_{s}")));
    demands.header = head;
    prices.header.extend([
        "idso_cost".to_string(),
        "combined_cost".to_string(),
        "error".to_string(),
    ]);
    for r in rows {
        let mut p = vec![num(r.cost), r.status.clone()];
        let mut d = p.clone();
        for id in station_ids {
            let st = r.stations.iter().find(|s| &s.id == id);
            p.push(st.map(|s| num(s.price)).unwrap_or_default());
            d.push(st.map(|s| num(s.demand)).unwrap_or_default());
        }
        p.extend([
            opt(r.idso_cost),
            opt(r.combined_cost),
            r.error.clone().unwrap_or_default(),
        ]);
        prices.rows.push(p);
        demands.rows.push(d);
    }
    (prices, demands)
}

/// Histogram-ready deviation samples.
pub fn forecast_table(report: &ForecastReport) -> CsvTable {
    let mut t = CsvTable::new(
        "forecast_mc",
        &[
            "sample",
            "forecast",
            "status",
            "realized_cost",
            "deviation_pct",
            "bound_pct",
            "error",
        ],
    );
    for s in &report.samples {
        t.rows.push(vec![
            s.index.to_string(),
            num(s.forecast),
            s.status.clone(),
            opt(s.realized_cost),
            opt(s.deviation_pct),
            opt(s.bound_pct),
            s.error.clone().unwrap_or_default(),
        ]);
    }
    t
}

/// Table V shape.
pub fn comparison_table(cmp: &BaselineComparison) -> CsvTable {
    let mut t = CsvTable::new(
        "baseline",
        &[
            "method",
            "idso_cost",
            "itso_cost",
            "latency_cost",
            "charging_expense",
            "combined_cost",
        ],
    );
    for r in &cmp.rows {
        t.rows.push(vec![
            r.method.clone(),
            num(r.idso_cost),
            num(r.itso_cost),
            num(r.latency_cost),
            num(r.charging_expense),
            num(r.combined_cost),
        ]);
    }
    t
}
