use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EngineError;

/// Battery-side energy balance of the whole fleet over the whole run,
/// warm-up included.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub initial_kwh: f64,
    pub final_kwh: f64,
    /// Grid-side energy drawn by all piles.
    pub charged_grid_kwh: f64,
    /// What reached the batteries of it.
    pub charged_battery_kwh: f64,
    /// Grid-side energy injected by V2G.
    pub v2g_grid_kwh: f64,
    /// What left the batteries for it.
    pub v2g_battery_kwh: f64,
    pub driving_kwh: f64,
}

impl EnergyLedger {
    /// Inflows minus outflows minus the change in stored energy; zero up to
    /// rounding.
    pub fn residual(&self) -> f64 {
        self.charged_battery_kwh - self.v2g_battery_kwh - self.driving_kwh - (self.final_kwh - self.initial_kwh)
    }
}

/// Neumaier compensated sum; a run adds tens of millions of tiny energies.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Sum {
    sum: f64,
    carry: f64,
}

impl Sum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Running form of [`EnergyLedger`].
#[derive(Debug, Clone, Default)]
pub(crate) struct LedgerSums {
    pub charged_grid: Sum,
    pub charged_battery: Sum,
    pub v2g_grid: Sum,
    pub v2g_battery: Sum,
    pub driving: Sum,
}

impl LedgerSums {
    pub fn ledger(&self, initial_kwh: f64, final_kwh: f64) -> EnergyLedger {
        EnergyLedger {
            initial_kwh,
            final_kwh,
            charged_grid_kwh: self.charged_grid.value(),
            charged_battery_kwh: self.charged_battery.value(),
            v2g_grid_kwh: self.v2g_grid.value(),
            v2g_battery_kwh: self.v2g_battery.value(),
            driving_kwh: self.driving.value(),
        }
    }
}

pub(crate) fn stored_total<'a>(evs: impl Iterator<Item = &'a crate::ev::ElectricVehicle>) -> f64 {
    let mut s = Sum::default();
    evs.for_each(|e| s.add(e.stored_kwh()));
    s.value()
}

/// Event counters over the recorded period.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub steps: u64,
    pub pdn_solves: u64,
    pub linear_fallbacks: u64,
    pub infeasible_intervals: u64,
    pub departures: u64,
    pub arrivals: u64,
    pub fcs_visits: u64,
    pub low_battery: u64,
    pub skipped_trips: u64,
    pub unroutable: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    /// SHA-256 of every scenario input plus the run options.
    pub config_hash: String,
    pub version: String,
    pub days: usize,
    pub dt: f64,
    pub dt_pdn: f64,
    pub warmup: bool,
    pub plugins: Vec<String>,
    pub ledger: EnergyLedger,
    pub stats: RunStats,
}

pub const STREAMS: [&str; 5] = ["fcs_load", "scs_load", "ev_state", "pdn", "v2g"];

/// Everything one case produces. Two runs of the same case compare equal.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub manifest: Manifest,
    pub fcs_load: String,
    pub scs_load: String,
    pub ev_state: String,
    pub pdn: String,
    pub v2g: String,
}

impl RunRecord {
    pub fn stream(&self, name: &str) -> Option<&str> {
        Some(match name {
            "fcs_load" => &self.fcs_load,
            "scs_load" => &self.scs_load,
            "ev_state" => &self.ev_state,
            "pdn" => &self.pdn,
            "v2g" => &self.v2g,
            _ => return None,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<(), EngineError> {
        let io = |e: std::io::Error| EngineError::Io(dir.display().to_string(), e.to_string());
        std::fs::create_dir_all(dir).map_err(io)?;
        for name in STREAMS {
            std::fs::write(dir.join(format!("{name}.csv")), self.stream(name).unwrap()).map_err(io)?;
        }
        let manifest = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        std::fs::write(dir.join("manifest.json"), manifest).map_err(io)
    }
}

/// One headered CSV stream kept in memory.
pub(crate) struct CsvStream {
    w: csv::Writer<Vec<u8>>,
    row: Vec<String>,
}

impl CsvStream {
    pub fn new<I: IntoIterator<Item = S>, S: AsRef<str>>(header: I) -> Self {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<String> = header.into_iter().map(|s| s.as_ref().to_string()).collect();
        w.write_record(&header).expect("in-memory write");
        Self { w, row: Vec::new() }
    }

    pub fn push(&mut self, field: impl ToString) -> &mut Self {
        self.row.push(field.to_string());
        self
    }

    pub fn end_row(&mut self) {
        self.w.write_record(&self.row).expect("in-memory write");
        self.row.clear();
    }

    pub fn finish(self) -> String {
        String::from_utf8(self.w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }
}
