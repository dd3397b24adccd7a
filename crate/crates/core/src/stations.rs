//! Fast and slow charging stations.
//!
//! A fast station (FCS) serves arrivals first come, first served and releases
//! a pile as soon as the vehicle is full. A slow station (SCS) never queues:
//! a vehicle that gets a pile keeps it until it drives away, and a vehicle
//! that finds every pile taken parks without charging.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decisions::DepartureStrategy;
use crate::ev::{ChargeMode, ElectricVehicle};
use crate::network::{EdgeId, RoadNetwork};

pub const DEFAULT_FCS_PRICE: f64 = 1.5;
pub const DEFAULT_SCS_PRICE: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StationError {
    #[error("station {0} is offline")]
    StationOffline(String),
    #[error("unknown station {0}")]
    UnknownStation(String),
    #[error("station {0} references unknown edge {1}")]
    UnknownEdge(String, String),
    #[error("edge {0} carries more than one slow station")]
    DuplicateScs(String),
    #[error("edge {0} carries both a fast and a slow station")]
    MixedEdge(String),
    #[error("duplicate station id {0}")]
    DuplicateStation(String),
    #[error("schedule event at t={0} needs a station id")]
    MissingStation(f64),
    #[error("cannot read {0}: {1}")]
    Io(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum StationKind {
    Fcs,
    Scs,
}

/// One entry of `stations.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationRecord {
    pub id: String,
    pub kind: StationKind,
    pub edge: String,
    pub piles: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upp: Option<f64>,
    pub pdn_bus: usize,
    #[serde(default)]
    pub v2g: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcsAdmission {
    PileAssigned,
    /// 1-based position in the waiting line.
    Queued(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScsAdmission {
    PileAssigned,
    Rejected,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChargeReport {
    /// (vehicle, grid-side kWh) for every vehicle that drew power this step.
    pub delivered: Vec<(u32, f64)>,
    /// Vehicles that finished and released their pile.
    pub departures: Vec<u32>,
    /// Queue heads that took a freed pile, in order.
    pub promoted: Vec<u32>,
}

impl ChargeReport {
    pub fn energy_kwh(&self) -> f64 {
        self.delivered.iter().map(|d| d.1).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChargingStation {
    pub id: String,
    pub kind: StationKind,
    pub edge: EdgeId,
    piles: u32,
    pub upp: f64,
    pub online: bool,
    pub pdn_bus: usize,
    pub v2g: bool,
    /// Vehicles on piles, in arrival order.
    occupants: Vec<u32>,
    queue: VecDeque<u32>,
    /// Cumulative grid-side energy delivered, kWh.
    pub energy_kwh: f64,
}

impl ChargingStation {
    pub fn new(id: impl Into<String>, kind: StationKind, edge: EdgeId, piles: u32, upp: f64, pdn_bus: usize) -> Self {
        Self {
            id: id.into(),
            kind,
            edge,
            piles,
            upp,
            online: true,
            pdn_bus,
            v2g: false,
            occupants: Vec::new(),
            queue: VecDeque::new(),
            energy_kwh: 0.0,
        }
    }

    pub fn piles(&self) -> u32 {
        self.piles
    }

    pub fn occupants(&self) -> &[u32] {
        &self.occupants
    }

    pub fn queue(&self) -> impl ExactSizeIterator<Item = u32> + '_ {
        self.queue.iter().copied()
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn has_free_pile(&self) -> bool {
        (self.occupants.len() as u32) < self.piles
    }

    pub fn is_occupant(&self, ev: u32) -> bool {
        self.occupants.contains(&ev)
    }

    pub fn fcs_arrive(&mut self, ev: u32) -> Result<FcsAdmission, StationError> {
        debug_assert_eq!(self.kind, StationKind::Fcs);
        if !self.online {
            return Err(StationError::StationOffline(self.id.clone()));
        }
        if self.has_free_pile() {
            self.occupants.push(ev);
            Ok(FcsAdmission::PileAssigned)
        } else {
            self.queue.push_back(ev);
            Ok(FcsAdmission::Queued(self.queue.len()))
        }
    }

    /// Charge every piled vehicle for `dt` seconds; full vehicles leave and
    /// the queue head takes each freed pile.
    pub fn fcs_step(&mut self, evs: &mut [ElectricVehicle], dt: f64) -> ChargeReport {
        let mut report = ChargeReport::default();
        if !self.online {
            return report;
        }
        let mut still = Vec::with_capacity(self.occupants.len());
        for &id in &self.occupants {
            let ev = &mut evs[id as usize];
            if ev.soc() < 1.0 {
                let kwh = ev.charge(ChargeMode::Fast, dt);
                report.delivered.push((id, kwh));
            }
            if ev.soc() >= 1.0 {
                report.departures.push(id);
            } else {
                still.push(id);
            }
        }
        self.occupants = still;
        self.promote(&mut report.promoted);
        self.energy_kwh += report.energy_kwh();
        report
    }

    fn promote(&mut self, promoted: &mut Vec<u32>) {
        while self.has_free_pile() {
            match self.queue.pop_front() {
                Some(ev) => {
                    self.occupants.push(ev);
                    promoted.push(ev);
                }
                None => break,
            }
        }
    }

    pub fn scs_arrive(&mut self, ev: u32) -> ScsAdmission {
        debug_assert_eq!(self.kind, StationKind::Scs);
        if self.online && self.has_free_pile() {
            self.occupants.push(ev);
            ScsAdmission::PileAssigned
        } else {
            ScsAdmission::Rejected
        }
    }

    /// Slow-charge piled vehicles that are not full. With `v2g_active`, a
    /// vehicle charges only below its V2G floor; vehicles in `discharging`
    /// never charge in the same interval.
    pub fn scs_step(
        &mut self,
        evs: &mut [ElectricVehicle],
        dt: f64,
        v2g_active: bool,
        discharging: &[u32],
    ) -> ChargeReport {
        let mut report = ChargeReport::default();
        if !self.online {
            return report;
        }
        for &id in &self.occupants {
            let ev = &mut evs[id as usize];
            if ev.soc() >= 1.0 || discharging.contains(&id) {
                continue;
            }
            if v2g_active && self.v2g && ev.soc() >= ev.coef.k_v {
                continue;
            }
            report.delivered.push((id, ev.charge(ChargeMode::Slow, dt)));
        }
        self.energy_kwh += report.energy_kwh();
        report
    }

    /// Release a vehicle's pile or queue slot (departure, depletion, eviction).
    pub fn leave(&mut self, ev: u32) -> bool {
        if let Some(i) = self.occupants.iter().position(|&o| o == ev) {
            self.occupants.remove(i);
            return true;
        }
        if let Some(i) = self.queue.iter().position(|&q| q == ev) {
            self.queue.remove(i);
            return true;
        }
        false
    }

    /// Take the station offline; returns every vehicle that must re-select.
    pub fn set_offline(&mut self) -> Vec<u32> {
        self.online = false;
        let mut out: Vec<u32> = std::mem::take(&mut self.occupants);
        out.extend(self.queue.drain(..));
        out
    }

    pub fn set_online(&mut self) -> Vec<u32> {
        self.online = true;
        Vec::new()
    }

    /// Change the pile count. Surplus occupants (latest arrivals first) are
    /// returned; extra piles are filled from the queue.
    pub fn set_piles(&mut self, piles: u32) -> (Vec<u32>, Vec<u32>) {
        self.piles = piles;
        let mut evicted = Vec::new();
        while self.occupants.len() as u32 > self.piles {
            evicted.push(self.occupants.pop().expect("non-empty"));
        }
        evicted.reverse();
        let mut promoted = Vec::new();
        if self.online {
            self.promote(&mut promoted);
        }
        (evicted, promoted)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ScheduleAction {
    SetOnline,
    SetOffline,
    SetPrice { upp: f64 },
    SetPiles { piles: u32 },
    SetDepartureStrategy { strategy: DepartureStrategy },
}

/// One timed entry of `schedule.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEvent {
    /// Seconds since simulation start.
    pub t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub station: Option<String>,
    #[serde(flatten)]
    pub action: ScheduleAction,
}

/// Effects of applying due schedule events.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScheduleOutcome {
    pub applied: Vec<ScheduleEvent>,
    /// Vehicles pushed off a fast station that must pick another one.
    pub reselect: Vec<u32>,
    /// Vehicles pushed off a slow station pile; they stay parked uncharged.
    pub unplugged: Vec<u32>,
    /// Queue heads that got a pile because piles were added.
    pub promoted: Vec<u32>,
    pub strategy: Option<DepartureStrategy>,
}

/// Time-ordered schedule with a cursor. Events at equal times keep file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Schedule {
    events: Vec<ScheduleEvent>,
    cursor: usize,
}

impl Schedule {
    pub fn new(mut events: Vec<ScheduleEvent>) -> Self {
        events.sort_by(|a, b| a.t.total_cmp(&b.t));
        Self { events, cursor: 0 }
    }

    pub fn events(&self) -> &[ScheduleEvent] {
        &self.events
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Check every referenced station exists.
    pub fn validate(&self, stations: &Stations) -> Result<(), StationError> {
        for ev in &self.events {
            match (&ev.action, &ev.station) {
                (ScheduleAction::SetDepartureStrategy { .. }, _) => {}
                (_, None) => return Err(StationError::MissingStation(ev.t)),
                (_, Some(id)) => {
                    stations.index_of(id)?;
                }
            }
        }
        Ok(())
    }

    /// Apply every event with `t <= now` not yet applied.
    pub fn apply(&mut self, stations: &mut Stations, now: f64) -> Result<ScheduleOutcome, StationError> {
        let mut out = ScheduleOutcome::default();
        while let Some(ev) = self.events.get(self.cursor) {
            if ev.t > now {
                break;
            }
            let ev = ev.clone();
            self.cursor += 1;
            if let ScheduleAction::SetDepartureStrategy { strategy } = ev.action {
                out.strategy = Some(strategy);
                out.applied.push(ev);
                continue;
            }
            let id = ev.station.as_deref().ok_or(StationError::MissingStation(ev.t))?;
            let idx = stations.index_of(id)?;
            let st = &mut stations.list[idx];
            let displaced = match &ev.action {
                ScheduleAction::SetOnline => st.set_online(),
                ScheduleAction::SetOffline => st.set_offline(),
                ScheduleAction::SetPrice { upp } => {
                    st.upp = *upp;
                    Vec::new()
                }
                ScheduleAction::SetPiles { piles } => {
                    let (evicted, promoted) = st.set_piles(*piles);
                    out.promoted.extend(promoted);
                    evicted
                }
                ScheduleAction::SetDepartureStrategy { .. } => unreachable!(),
            };
            match st.kind {
                StationKind::Fcs => out.reselect.extend(displaced),
                StationKind::Scs => out.unplugged.extend(displaced),
            }
            out.applied.push(ev);
        }
        Ok(out)
    }
}

/// All stations of a scenario plus the per-edge lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct Stations {
    pub list: Vec<ChargingStation>,
    scs_by_edge: Vec<Option<usize>>,
}

impl Stations {
    pub fn new(net: &RoadNetwork, list: Vec<ChargingStation>) -> Result<Self, StationError> {
        let mut scs_by_edge = vec![None; net.edge_count()];
        let mut fcs_edge = vec![false; net.edge_count()];
        let mut seen = std::collections::HashSet::new();
        for (i, s) in list.iter().enumerate() {
            if !seen.insert(s.id.as_str()) {
                return Err(StationError::DuplicateStation(s.id.clone()));
            }
            let e = s.edge.index();
            if e >= net.edge_count() {
                return Err(StationError::UnknownEdge(s.id.clone(), s.edge.to_string()));
            }
            match s.kind {
                StationKind::Fcs => fcs_edge[e] = true,
                StationKind::Scs => {
                    if scs_by_edge[e].replace(i).is_some() {
                        return Err(StationError::DuplicateScs(net.edge(s.edge).id.clone()));
                    }
                }
            }
        }
        for e in 0..net.edge_count() {
            if fcs_edge[e] && scs_by_edge[e].is_some() {
                return Err(StationError::MixedEdge(net.edges()[e].id.clone()));
            }
        }
        Ok(Self { list, scs_by_edge })
    }

    pub fn from_records(net: &RoadNetwork, records: &[StationRecord]) -> Result<Self, StationError> {
        let mut list = Vec::with_capacity(records.len());
        for r in records {
            let edge = net
                .edge_id(&r.edge)
                .ok_or_else(|| StationError::UnknownEdge(r.id.clone(), r.edge.clone()))?;
            let default_price = match r.kind {
                StationKind::Fcs => DEFAULT_FCS_PRICE,
                StationKind::Scs => DEFAULT_SCS_PRICE,
            };
            let mut s = ChargingStation::new(&r.id, r.kind, edge, r.piles, r.upp.unwrap_or(default_price), r.pdn_bus);
            s.v2g = r.v2g && r.kind == StationKind::Scs;
            list.push(s);
        }
        Self::new(net, list)
    }

    pub fn to_records(&self, net: &RoadNetwork) -> Vec<StationRecord> {
        self.list
            .iter()
            .map(|s| StationRecord {
                id: s.id.clone(),
                kind: s.kind,
                edge: net.edge(s.edge).id.clone(),
                piles: s.piles,
                upp: Some(s.upp),
                pdn_bus: s.pdn_bus,
                v2g: s.v2g,
            })
            .collect()
    }

    pub fn load(net: &RoadNetwork, path: &Path) -> Result<Self, StationError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| StationError::Io(path.display().to_string(), e.to_string()))?;
        let records: Vec<StationRecord> = serde_json::from_str(&text)
            .map_err(|e| StationError::Io(path.display().to_string(), e.to_string()))?;
        Self::from_records(net, &records)
    }

    /// One slow station on every edge without a fast one, with the same
    /// pile count and bus assignment rule.
    pub fn fill_scs(
        net: &RoadNetwork,
        mut fcs: Vec<ChargingStation>,
        piles: u32,
        bus_of: impl Fn(EdgeId) -> usize,
    ) -> Result<Self, StationError> {
        let fcs_edges: std::collections::HashSet<EdgeId> = fcs.iter().map(|s| s.edge).collect();
        for e in net.edge_ids() {
            if !fcs_edges.contains(&e) {
                let id = format!("SCS_{}", net.edge(e).id);
                fcs.push(ChargingStation::new(id, StationKind::Scs, e, piles, DEFAULT_SCS_PRICE, bus_of(e)));
            }
        }
        Self::new(net, fcs)
    }

    /// Fast stations on every edge whose id starts with "CS".
    pub fn infer_fcs(net: &RoadNetwork, piles: u32, bus_of: impl Fn(EdgeId) -> usize) -> Vec<ChargingStation> {
        net.edge_ids()
            .filter(|&e| net.edge(e).id.starts_with("CS"))
            .map(|e| ChargingStation::new(net.edge(e).id.clone(), StationKind::Fcs, e, piles, DEFAULT_FCS_PRICE, bus_of(e)))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.list.len()
    }

    pub fn is_empty(&self) -> bool {
        self.list.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Result<usize, StationError> {
        self.list
            .iter()
            .position(|s| s.id == id)
            .ok_or_else(|| StationError::UnknownStation(id.to_string()))
    }

    pub fn scs_on(&self, edge: EdgeId) -> Option<usize> {
        self.scs_by_edge.get(edge.index()).copied().flatten()
    }

    pub fn fcs_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.list
            .iter()
            .enumerate()
            .filter(|(_, s)| s.kind == StationKind::Fcs)
            .map(|(i, _)| i)
    }

    pub fn scs_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.list
            .iter()
            .enumerate()
            .filter(|(_, s)| s.kind == StationKind::Scs)
            .map(|(i, _)| i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ev::{CoefficientRanges, EvPrototype};
    use proptest::prelude::*;
    use rand::rngs::mock::StepRng;
    use std::sync::Arc;

    fn fleet(socs: &[f64]) -> Vec<ElectricVehicle> {
        let proto = Arc::new(EvPrototype::new("T", 50.0, 0.2, 100.0, 7.0));
        socs.iter()
            .enumerate()
            .map(|(i, &s)| {
                let mut coef = CoefficientRanges::default().sample(&mut StepRng::new(0, 0));
                coef.k_v = 0.7;
                ElectricVehicle::new(format!("ev{i}"), proto.clone(), s, coef, EdgeId(0))
            })
            .collect()
    }

    fn fcs(piles: u32) -> ChargingStation {
        ChargingStation::new("CS1", StationKind::Fcs, EdgeId(0), piles, 1.5, 1)
    }

    fn scs(piles: u32) -> ChargingStation {
        ChargingStation::new("S1", StationKind::Scs, EdgeId(1), piles, 0.5, 2)
    }

    #[test]
    fn fcs_admission() {
        let mut s = fcs(10);
        for ev in 0..3 {
            assert_eq!(s.fcs_arrive(ev), Ok(FcsAdmission::PileAssigned));
        }
        let mut full = fcs(10);
        for ev in 0..10 {
            full.fcs_arrive(ev).unwrap();
        }
        full.fcs_arrive(100).unwrap();
        full.fcs_arrive(101).unwrap();
        assert_eq!(full.fcs_arrive(102), Ok(FcsAdmission::Queued(3)));
        let mut off = fcs(10);
        off.set_offline();
        assert!(matches!(off.fcs_arrive(0), Err(StationError::StationOffline(_))));
    }

    #[test]
    fn full_vehicle_leaves_and_queue_head_takes_pile() {
        let mut evs = fleet(&[0.999, 0.3, 0.2]);
        let mut s = fcs(1);
        s.fcs_arrive(0).unwrap();
        s.fcs_arrive(1).unwrap();
        s.fcs_arrive(2).unwrap();
        let r = s.fcs_step(&mut evs, 60.0);
        assert_eq!(r.departures, vec![0]);
        assert_eq!(r.promoted, vec![1]);
        assert_eq!(s.occupants(), &[1]);
        assert_eq!(s.queue().collect::<Vec<_>>(), vec![2]);
        assert_eq!(evs[0].soc(), 1.0);
    }

    #[test]
    fn empty_station_reports_nothing() {
        let mut s = fcs(4);
        assert_eq!(s.fcs_step(&mut [], 1.0), ChargeReport::default());
    }

    #[test]
    fn fcs_load_equals_sum_of_pile_power() {
        let mut evs = fleet(&[0.1, 0.5, 0.9]);
        let expected: f64 = evs.iter().map(|e| e.charging_power(ChargeMode::Fast)).sum();
        let mut s = fcs(3);
        for i in 0..3 {
            s.fcs_arrive(i).unwrap();
        }
        let r = s.fcs_step(&mut evs, 1.0);
        assert!((r.energy_kwh() * 3600.0 - expected).abs() < 1e-9);
    }

    #[test]
    fn scs_keeps_pile_until_departure() {
        let mut evs = fleet(&[0.3; 11]);
        let mut s = scs(10);
        for i in 0..9 {
            assert_eq!(s.scs_arrive(i), ScsAdmission::PileAssigned);
        }
        assert_eq!(s.scs_arrive(9), ScsAdmission::PileAssigned);
        assert_eq!(s.scs_arrive(10), ScsAdmission::Rejected);
        evs[0].set_soc(1.0);
        let r = s.scs_step(&mut evs, 60.0, false, &[]);
        assert_eq!(r.delivered.len(), 9, "full vehicle draws nothing");
        assert!(!r.delivered.iter().any(|d| d.0 == 10), "rejected vehicle draws nothing");
        assert_eq!(s.occupants().len(), 10, "full vehicle keeps its pile");
        assert!(s.leave(0));
        assert_eq!(s.scs_arrive(10), ScsAdmission::PileAssigned);
    }

    #[test]
    fn v2g_window_restricts_charging() {
        let mut evs = fleet(&[0.75, 0.5, 0.72]);
        let mut s = scs(3);
        s.v2g = true;
        for i in 0..3 {
            s.scs_arrive(i);
        }
        let r = s.scs_step(&mut evs, 60.0, true, &[]);
        assert_eq!(r.delivered.iter().map(|d| d.0).collect::<Vec<_>>(), vec![1]);
        let r = s.scs_step(&mut evs, 60.0, false, &[0]);
        assert_eq!(r.delivered.iter().map(|d| d.0).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn schedule_offline_flushes_and_set_piles_evicts() {
        let net = crate::network::RoadNetwork::from_file(crate::network::NetworkFile {
            junctions: ["a", "b"]
                .iter()
                .map(|j| crate::network::Junction {
                    id: j.to_string(),
                    x: None,
                    y: None,
                })
                .collect(),
            edges: vec![
                crate::network::EdgeRecord {
                    id: "CS5".into(),
                    from: "a".into(),
                    to: "b".into(),
                    length_m: 100.0,
                    speed_mps: 10.0,
                    lanes: 1,
                    dead_end: true,
                },
                crate::network::EdgeRecord {
                    id: "back".into(),
                    from: "b".into(),
                    to: "a".into(),
                    length_m: 100.0,
                    speed_mps: 10.0,
                    lanes: 1,
                    dead_end: true,
                },
            ],
        })
        .unwrap();
        let fcs = Stations::infer_fcs(&net, 2, |_| 3);
        let mut st = Stations::fill_scs(&net, fcs, 2, |_| 4).unwrap();
        assert_eq!(st.len(), 2);
        assert_eq!(st.scs_on(EdgeId(1)), Some(1));
        for ev in 0..4 {
            st.list[0].fcs_arrive(ev).unwrap();
        }
        st.list[1].scs_arrive(7);
        st.list[1].scs_arrive(8);
        let mut sched = Schedule::new(vec![
            ScheduleEvent {
                t: 39_600.0,
                station: Some("CS5".into()),
                action: ScheduleAction::SetOffline,
            },
            ScheduleEvent {
                t: 100.0,
                station: Some("SCS_back".into()),
                action: ScheduleAction::SetPiles { piles: 0 },
            },
        ]);
        sched.validate(&st).unwrap();
        let out = sched.apply(&mut st, 39_599.0).unwrap();
        assert_eq!(out.unplugged, vec![7, 8]);
        assert!(st.list[0].online);
        let out = sched.apply(&mut st, 39_600.0).unwrap();
        assert_eq!(out.reselect, vec![0, 1, 2, 3]);
        assert!(!st.list[0].online && st.list[0].queue_len() == 0);
        assert!(sched.apply(&mut st, 1e9).unwrap().applied.is_empty());

        let bad = Schedule::new(vec![ScheduleEvent {
            t: 0.0,
            station: Some("nope".into()),
            action: ScheduleAction::SetOnline,
        }]);
        assert!(matches!(bad.validate(&st), Err(StationError::UnknownStation(_))));
    }

    #[test]
    fn schedule_json_shape() {
        let text = r#"[{"t": 39600, "station": "CS5", "action": "set_offline"},
                       {"t": 0, "station": "CS1", "action": "set_price", "upp": 1.0},
                       {"t": 10, "action": "set_departure_strategy", "strategy": "distance"}]"#;
        let evs: Vec<ScheduleEvent> = serde_json::from_str(text).unwrap();
        assert_eq!(evs[1].action, ScheduleAction::SetPrice { upp: 1.0 });
        assert_eq!(
            evs[2].action,
            ScheduleAction::SetDepartureStrategy {
                strategy: DepartureStrategy::Distance
            }
        );
    }

    proptest! {
        #[test]
        fn fifo_order_is_preserved(piles in 1u32..5, socs in prop::collection::vec(0.0f64..0.95, 1..30)) {
            let mut evs = fleet(&socs);
            let mut s = fcs(piles);
            let mut started = Vec::new();
            for (i, _) in socs.iter().enumerate() {
                if s.fcs_arrive(i as u32).unwrap() == FcsAdmission::PileAssigned {
                    started.push(i as u32);
                }
            }
            for _ in 0..100_000 {
                let r = s.fcs_step(&mut evs, 60.0);
                started.extend(r.promoted);
                prop_assert!(s.occupants().len() as u32 <= piles);
                if s.occupants().is_empty() {
                    break;
                }
            }
            let expected: Vec<u32> = (0..socs.len() as u32).collect();
            prop_assert_eq!(started, expected);
        }

        #[test]
        fn pile_invariant_after_set_piles(start in 0u32..8, arrivals in 0u32..12, new in 0u32..8) {
            let mut s = fcs(start);
            for ev in 0..arrivals {
                s.fcs_arrive(ev).unwrap();
            }
            let (evicted, _) = s.set_piles(new);
            prop_assert!(s.occupants().len() as u32 <= s.piles());
            prop_assert!(s.queue_len() == 0 || s.occupants().len() as u32 == s.piles());
            prop_assert_eq!(evicted.len() + s.occupants().len() + s.queue_len(), arrivals as usize);
        }
    }
}
