//! Per-vehicle choices: when to detour to a fast station, which one to pick,
//! whether to plug in on arrival, and what happens to stranded vehicles.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ev::ElectricVehicle;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecisionError {
    #[error("no nearby, online and reachable fast station for {0}")]
    NoFeasibleFcs(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepartureStrategy {
    /// Detour when SoC is below the driver's fast-charge threshold.
    #[default]
    Threshold,
    /// Detour when the destination is out of range.
    Distance,
}

impl std::str::FromStr for DepartureStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "threshold" => Ok(Self::Threshold),
            "distance" => Ok(Self::Distance),
            other => Err(format!("unknown strategy {other:?} (expected threshold or distance)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionParams {
    /// Straight-line radius for candidate stations, meters.
    pub nearby_m: f64,
    /// Mean time to fully charge one vehicle, seconds.
    pub full_charge_s: f64,
    /// Count vehicles on piles as waiting, not just the queue.
    pub count_charging: bool,
}

impl Default for SelectionParams {
    fn default() -> Self {
        Self {
            nearby_m: 10_000.0,
            full_charge_s: 1800.0,
            count_charging: false,
        }
    }
}

/// What the driver knows about one fast station when choosing.
#[derive(Debug, Clone, PartialEq)]
pub struct FcsCandidate {
    pub station: usize,
    pub id: String,
    /// Fastest-path travel time from the current edge, seconds.
    pub travel_time_s: f64,
    /// Length of that path including the current edge, meters.
    pub path_length_m: f64,
    pub euclid_m: f64,
    pub queue_len: usize,
    pub charging: usize,
    pub upp: f64,
    pub online: bool,
}

/// The route to the destination is within range: `k_r * L <= range`.
pub fn reachable(ev: &ElectricVehicle, path_length_m: f64) -> bool {
    ev.coef.k_r * path_length_m <= ev.range_m()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeparturePlan {
    Direct,
    DetourViaFcs,
}

/// Whether a departing vehicle first visits a fast station. `dest_length_m`
/// is the fastest-path length to the destination, `None` if unreachable.
pub fn plan_departure(ev: &ElectricVehicle, strategy: DepartureStrategy, dest_length_m: Option<f64>) -> DeparturePlan {
    let detour = match strategy {
        DepartureStrategy::Threshold => ev.soc() < ev.coef.k_f,
        DepartureStrategy::Distance => !dest_length_m.map_or(false, |l| reachable(ev, l)),
    };
    if detour {
        DeparturePlan::DetourViaFcs
    } else {
        DeparturePlan::Direct
    }
}

/// Energy the driver buys to fill up, kWh (grid side).
pub fn purchase_kwh(ev: &ElectricVehicle) -> f64 {
    (1.0 - ev.soc()) * ev.capacity_kwh() / ev.proto.charge_eff
}

/// Generalized cost in dollars: time value of driving plus expected waiting,
/// plus the price of the energy bought.
pub fn fcs_score(ev: &ElectricVehicle, c: &FcsCandidate, params: &SelectionParams) -> f64 {
    let waiting = c.queue_len + if params.count_charging { c.charging } else { 0 };
    let hours = (c.travel_time_s + waiting as f64 * params.full_charge_s) / 3600.0;
    ev.coef.omega * hours + c.upp * purchase_kwh(ev)
}

pub fn is_feasible(ev: &ElectricVehicle, c: &FcsCandidate, params: &SelectionParams) -> bool {
    c.online && c.euclid_m < params.nearby_m && c.travel_time_s.is_finite() && reachable(ev, c.path_length_m)
}

/// Index into `candidates` of the cheapest feasible station; ties go to the
/// smallest station id.
pub fn select_fcs(
    ev: &ElectricVehicle,
    candidates: &[FcsCandidate],
    params: &SelectionParams,
) -> Result<usize, DecisionError> {
    let scores: Vec<Option<f64>> = candidates
        .iter()
        .map(|c| is_feasible(ev, c, params).then(|| fcs_score(ev, c, params)))
        .collect();
    argmin_by_id(candidates, &scores).ok_or_else(|| DecisionError::NoFeasibleFcs(ev.id.clone()))
}

fn argmin_by_id(candidates: &[FcsCandidate], scores: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        let Some(s) = *s else { continue };
        best = match best {
            None => Some((i, s)),
            Some((b, bs)) if s < bs || (s == bs && candidates[i].id < candidates[b].id) => Some((i, s)),
            keep => keep,
        };
    }
    best.map(|b| b.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrivalAction {
    ChargeSlow,
    ParkOnly,
}

pub fn on_arrival(ev: &ElectricVehicle, free_pile: bool) -> ArrivalAction {
    if ev.soc() < ev.coef.k_s && free_pile {
        ArrivalAction::ChargeSlow
    } else {
        ArrivalAction::ParkOnly
    }
}

/// A vehicle taken off the road with an empty battery.
#[derive(Debug, Clone, PartialEq)]
pub struct LowBatteryEntry {
    pub ev: u32,
    pub t_removed: f64,
    pub target: usize,
    pub t_teleport: f64,
}

impl LowBatteryEntry {
    /// Teleport after twice the normal drive time to the target.
    pub fn new(ev: u32, t_removed: f64, target: usize, drive_time_s: f64) -> Self {
        Self {
            ev,
            t_removed,
            target,
            t_teleport: t_removed + 2.0 * drive_time_s,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LowBatterySet {
    entries: Vec<LowBatteryEntry>,
}

impl LowBatterySet {
    pub fn insert(&mut self, entry: LowBatteryEntry) {
        self.entries.push(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[LowBatteryEntry] {
        &self.entries
    }

    pub fn contains(&self, ev: u32) -> bool {
        self.entries.iter().any(|e| e.ev == ev)
    }

    /// Release every due entry whose target is online as (ev, station).
    /// Due entries with an offline target ask `reselect` for a new
    /// (station, drive time) and restart their timer from `now`; with no
    /// answer they keep waiting on a fresh timer of the old length.
    pub fn step(
        &mut self,
        now: f64,
        is_online: impl Fn(usize) -> bool,
        mut reselect: impl FnMut(&LowBatteryEntry) -> Option<(usize, f64)>,
    ) -> Vec<(u32, usize)> {
        let mut out = Vec::new();
        let mut kept = Vec::with_capacity(self.entries.len());
        for entry in self.entries.drain(..) {
            if now < entry.t_teleport {
                kept.push(entry);
            } else if is_online(entry.target) {
                out.push((entry.ev, entry.target));
            } else {
                let wait = entry.t_teleport - entry.t_removed;
                let next = match reselect(&entry) {
                    Some((target, drive)) => LowBatteryEntry::new(entry.ev, now, target, drive),
                    None => LowBatteryEntry {
                        t_removed: now,
                        t_teleport: now + wait,
                        ..entry
                    },
                };
                kept.push(next);
            }
        }
        self.entries = kept;
        out
    }
}
