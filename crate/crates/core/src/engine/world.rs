use std::collections::{BTreeSet, HashMap};

use log::{debug, warn};

use super::record::{stored_total, CsvStream, EnergyLedger, LedgerSums, Manifest, RunRecord, RunStats};
use super::EngineError;
use crate::decisions::{
    on_arrival, plan_departure, select_fcs, ArrivalAction, DeparturePlan, DepartureStrategy, FcsCandidate,
    LowBatteryEntry, LowBatterySet, SelectionParams,
};
use crate::ev::{ElectricVehicle, EvStatus};
use crate::network::{shortest_tree, EdgeId, EdgeWeights, RoadNetwork, Router, WeightMode};
use crate::pdn::{attach_loads, Method, PdnCase, PdnSolver, StationLoad};
use crate::rng;
use crate::scenario::Scenario;
use crate::stations::{FcsAdmission, ScheduleOutcome, ScsAdmission, Schedule, StationKind, Stations};
use crate::traffic::{Traffic, VehicleParams};
use crate::tripgen::{Trip, DAY_S};
use crate::v2g::{allocate, apply_discharge, clip_to_energy, station_capacity, V2gOffer, V2gStrategy, V2gWindow};

#[derive(Debug, Clone, Default)]
struct Agent {
    trips: Vec<Trip>,
    next: usize,
    /// Destination of the trip in progress, kept across fast-charging stops.
    dest: Option<EdgeId>,
    /// Fast station the vehicle is driving to.
    target_fcs: Option<usize>,
    /// Fast station the vehicle is at (pile or queue).
    at_fcs: Option<usize>,
    at_scs: Option<usize>,
    route_end: Option<EdgeId>,
}

struct PdnState {
    interval_s: f64,
    /// Dispatched V2G power per station, kW.
    dispatch: Vec<f64>,
    station_by_id: HashMap<String, usize>,
    v2g_cols: Vec<usize>,
    last_error: Option<String>,
    csv: CsvStream,
}

struct V2gState {
    window: V2gWindow,
    offers: Vec<Option<V2gOffer>>,
    alloc: Vec<Vec<(u32, f64)>>,
    alloc_ids: Vec<Vec<u32>>,
}

/// Clock cadences in traffic steps.
pub(crate) struct Cadence {
    pub record: u64,
    pub sample: u64,
    pub sample_count: usize,
}

/// The full state of one running case. Plugins see it between steps.
pub struct World {
    net: RoadNetwork,
    evs: Vec<ElectricVehicle>,
    stations: Stations,
    schedule: Schedule,
    traffic: Traffic,
    apt: EdgeWeights,
    lengths: Option<EdgeWeights>,
    router: Router,
    strategy: DepartureStrategy,
    selection: SelectionParams,
    agents: Vec<Agent>,
    departures: Vec<(f64, u32)>,
    dep_cursor: usize,
    due: BTreeSet<u32>,
    low: LowBatterySet,
    arrivals: Vec<u32>,

    t0: f64,
    dt: f64,
    step: u64,
    now: f64,
    cadence: Cadence,

    initial_kwh: f64,
    sums: LedgerSums,
    stats: RunStats,
    rec_kwh: Vec<f64>,
    rec_v2g_kwh: f64,
    pdn_kwh: Vec<f64>,
    fcs_cols: Vec<usize>,
    scs_cols: Vec<usize>,
    fcs_csv: CsvStream,
    scs_csv: CsvStream,
    ev_csv: CsvStream,
    v2g_csv: CsvStream,

    pdn: Option<PdnState>,
    v2g: Option<V2gState>,
}

fn status_name(s: EvStatus) -> &'static str {
    match s {
        EvStatus::Driving => "driving",
        EvStatus::Parking => "parking",
        EvStatus::ChargingFast => "charging_fast",
        EvStatus::ChargingSlow => "charging_slow",
        EvStatus::Queued => "queued",
        EvStatus::LowBattery => "low_battery",
    }
}

impl World {
    pub(crate) fn new(scn: &Scenario, seed: u64, cadence: Cadence) -> Result<Self, EngineError> {
        let cfg = &scn.config;
        let net = scn.network.clone();
        let evs = scn.build_fleet()?;
        let stations = scn.build_stations()?;
        let schedule = Schedule::new(scn.schedule.clone());
        schedule
            .validate(&stations)
            .map_err(|e| EngineError::config("schedule", e))?;
        let t0 = if cfg.warmup { -DAY_S } else { 0.0 };
        let first_day = if cfg.warmup { -1 } else { 0 };
        let chains = match &scn.trips {
            Some(recs) => recs.clone(),
            None => scn.generate_trips(seed, first_day, cfg.days + cfg.warmup as usize)?,
        };
        let index: HashMap<&str, usize> = scn.evs.iter().enumerate().map(|(i, e)| (e.id.as_str(), i)).collect();
        let mut agents = vec![Agent::default(); evs.len()];
        let mut departures = Vec::new();
        for rec in &chains {
            let i = *index
                .get(rec.ev.as_str())
                .ok_or_else(|| EngineError::config("trips", format!("unknown vehicle {}", rec.ev)))?;
            let chain = rec.to_chain(i as u32, &net).map_err(|e| EngineError::config("trips", e))?;
            for t in &chain.trips {
                departures.push((t.t, i as u32));
            }
            agents[i].trips = chain.trips;
        }
        departures.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let dep_cursor = departures.partition_point(|d| d.0 < t0);

        let apt = EdgeWeights::fastest(&net);
        let lengths = (cfg.weights == WeightMode::Shortest).then(|| EdgeWeights::shortest(&net));
        let traffic = Traffic::new(&net, cfg.traffic, rng::stream(seed, "traffic"));
        let n = stations.len();
        let fcs_cols: Vec<usize> = stations.fcs_indices().collect();
        let scs_cols: Vec<usize> = stations.scs_indices().collect();
        let name = |i: &usize| stations.list[*i].id.clone();
        let fcs_csv = CsvStream::new(
            std::iter::once("t".to_string())
                .chain(fcs_cols.iter().map(name))
                .chain(std::iter::once("total".to_string())),
        );
        let scs_csv = CsvStream::new(
            std::iter::once("t".to_string())
                .chain(scs_cols.iter().map(name))
                .chain(["total".to_string(), "v2g_kw".to_string()]),
        );
        let mut world = Self {
            router: crate::network::Router::new(cfg.routing, cfg.ch_rebuild_s),
            strategy: cfg.strategy,
            selection: cfg.selection,
            net,
            evs,
            stations,
            schedule,
            traffic,
            apt,
            lengths,
            agents,
            departures,
            dep_cursor,
            due: BTreeSet::new(),
            low: LowBatterySet::default(),
            arrivals: Vec::new(),
            t0,
            dt: cfg.traffic.dt,
            step: 0,
            now: t0,
            cadence,
            initial_kwh: 0.0,
            sums: LedgerSums::default(),
            stats: RunStats::default(),
            rec_kwh: vec![0.0; n],
            rec_v2g_kwh: 0.0,
            pdn_kwh: vec![0.0; n],
            fcs_cols,
            scs_cols,
            fcs_csv,
            scs_csv,
            ev_csv: CsvStream::new(["t", "ev", "status", "soc", "edge"]),
            v2g_csv: CsvStream::new(["t", "station", "p_vc", "p_vcr", "participants", "allocated_kw"]),
            pdn: None,
            v2g: None,
        };
        world.initial_kwh = stored_total(world.evs.iter());
        for vid in 0..world.evs.len() as u32 {
            world.park(vid);
        }
        Ok(world)
    }

    /// Start of the current step, seconds since t = 0.
    pub fn now(&self) -> f64 {
        self.now
    }

    /// End of the current step.
    pub fn step_end(&self) -> f64 {
        self.t0 + (self.step + 1) as f64 * self.dt
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Outputs are written only once the clock reaches t = 0.
    pub fn is_recording(&self) -> bool {
        self.now >= 0.0
    }

    pub fn network(&self) -> &RoadNetwork {
        &self.net
    }

    pub fn evs(&self) -> &[ElectricVehicle] {
        &self.evs
    }

    pub fn stations(&self) -> &Stations {
        &self.stations
    }

    pub fn stations_mut(&mut self) -> &mut Stations {
        &mut self.stations
    }

    pub fn traffic(&self) -> &Traffic {
        &self.traffic
    }

    pub fn strategy(&self) -> DepartureStrategy {
        self.strategy
    }

    pub fn set_strategy(&mut self, s: DepartureStrategy) {
        self.strategy = s;
    }

    pub fn stats(&self) -> &RunStats {
        &self.stats
    }

    /// Energy balance so far.
    pub fn ledger(&self) -> EnergyLedger {
        self.sums.ledger(self.initial_kwh, stored_total(self.evs.iter()))
    }

    pub(crate) fn step_index(&self) -> u64 {
        self.step
    }

    // ---- step phases ----

    pub(crate) fn begin_step(&mut self) -> Result<(), EngineError> {
        self.now = self.t0 + self.step as f64 * self.dt;
        if self.is_recording() {
            let since = self.step - self.warm_steps();
            if since % self.cadence.sample == 0 {
                let n = self.cadence.sample_count.min(self.evs.len());
                for ev in &self.evs[..n] {
                    self.ev_csv
                        .push(self.now)
                        .push(&ev.id)
                        .push(status_name(ev.status))
                        .push(ev.soc())
                        .push(&self.net.edge(ev.edge).id)
                        .end_row();
                }
            }
        }
        let outcome = self
            .schedule
            .apply(&mut self.stations, self.now)
            .map_err(|e| EngineError::Runtime(e.to_string()))?;
        self.handle_schedule(outcome);
        Ok(())
    }

    fn warm_steps(&self) -> u64 {
        (-self.t0 / self.dt).round() as u64
    }

    fn handle_schedule(&mut self, out: ScheduleOutcome) {
        for ev in &out.applied {
            debug!("t={}: applied {:?} to {:?}", self.now, ev.action, ev.station);
        }
        for vid in out.reselect {
            self.agents[vid as usize].at_fcs = None;
            self.evs[vid as usize].status = EvStatus::Parking;
            self.seek_fcs(vid);
        }
        for vid in out.unplugged {
            self.agents[vid as usize].at_scs = None;
            self.evs[vid as usize].status = EvStatus::Parking;
        }
        for vid in out.promoted {
            self.evs[vid as usize].status = EvStatus::ChargingFast;
        }
        if let Some(s) = out.strategy {
            self.strategy = s;
        }
    }

    pub(crate) fn step_traffic(&mut self) {
        let report = self.traffic.advance_all(&self.net, self.now);
        let mut stranded = Vec::new();
        for &(vid, dist) in &report.moved {
            let ev = &mut self.evs[vid as usize];
            let c = ev.consume(dist);
            self.sums.driving.add(c.energy_kwh);
            if let Some(s) = self.traffic.state(vid) {
                ev.edge = s.edge;
                if c.depleted {
                    stranded.push(vid);
                }
            }
        }
        for &(e, secs) in &report.edge_exits {
            self.apt.observe(e, secs);
        }
        for vid in stranded {
            self.strand(vid);
        }
        self.arrivals = report.arrivals;
    }

    pub(crate) fn step_stations(&mut self) {
        let dt = self.dt;
        let v2g_active = self.v2g.as_ref().map_or(false, |v| v.window.contains(self.now));
        let mut finished = Vec::new();
        for i in 0..self.stations.list.len() {
            let st = &mut self.stations.list[i];
            if st.occupants().is_empty() {
                continue;
            }
            let report = match st.kind {
                StationKind::Fcs => {
                    let r = st.fcs_step(&mut self.evs, dt);
                    finished.extend_from_slice(&r.departures);
                    for &p in &r.promoted {
                        self.evs[p as usize].status = EvStatus::ChargingFast;
                    }
                    r
                }
                StationKind::Scs => {
                    let empty = Vec::new();
                    let ids = match &self.v2g {
                        Some(v) if v2g_active => &v.alloc_ids[i],
                        _ => &empty,
                    };
                    st.scs_step(&mut self.evs, dt, v2g_active, ids)
                }
            };
            for &(vid, kwh) in &report.delivered {
                self.sums.charged_grid.add(kwh);
                self.sums.charged_battery.add(kwh * self.evs[vid as usize].proto.charge_eff);
                self.rec_kwh[i] += kwh;
                self.pdn_kwh[i] += kwh;
            }
            if v2g_active {
                let v = self.v2g.as_ref().unwrap();
                if v.alloc[i].is_empty() {
                    continue;
                }
                let st = &self.stations.list[i];
                let live: Vec<(u32, f64)> = v.alloc[i].iter().copied().filter(|&(id, _)| st.is_occupant(id)).collect();
                for (vid, kwh) in apply_discharge(&mut self.evs, &live, dt) {
                    self.sums.v2g_grid.add(kwh);
                    self.sums.v2g_battery.add(kwh / self.evs[vid as usize].proto.discharge_eff);
                    self.rec_kwh[i] -= kwh;
                    self.rec_v2g_kwh += kwh;
                }
            }
        }
        for vid in finished {
            self.agents[vid as usize].at_fcs = None;
            self.evs[vid as usize].status = EvStatus::Parking;
            match self.agents[vid as usize].dest {
                Some(dest) => self.drive_to(vid, dest),
                None => self.park(vid),
            }
        }
    }

    pub(crate) fn step_decisions(&mut self) {
        for vid in std::mem::take(&mut self.arrivals) {
            self.arrive(vid);
        }
        while let Some(&(t, vid)) = self.departures.get(self.dep_cursor) {
            if t > self.now {
                break;
            }
            self.due.insert(vid);
            self.dep_cursor += 1;
        }
        let ready: Vec<u32> = self
            .due
            .iter()
            .copied()
            .filter(|&v| matches!(self.evs[v as usize].status, EvStatus::Parking | EvStatus::ChargingSlow))
            .collect();
        for vid in ready {
            self.due.remove(&vid);
            self.depart(vid);
        }
        if !self.low.is_empty() {
            let mut low = std::mem::take(&mut self.low);
            let released = low.step(
                self.now,
                |s| self.stations.list[s].online,
                |e| self.nearest_online_fcs(self.evs[e.ev as usize].edge),
            );
            self.low = low;
            for (vid, st) in released {
                self.evs[vid as usize].edge = self.stations.list[st].edge;
                self.enter_fcs(vid, st);
            }
        }
    }

    pub(crate) fn end_step(&mut self) {
        if self.is_recording() {
            self.stats.steps += 1;
        }
        if (self.step + 1) % self.cadence.record == 0 {
            let span = self.cadence.record as f64 * self.dt;
            let t = self.step_end() - span;
            if t >= 0.0 {
                let kw = |kwh: f64| kwh * 3600.0 / span;
                let mut total = 0.0;
                self.fcs_csv.push(t);
                for &i in &self.fcs_cols {
                    total += kw(self.rec_kwh[i]);
                    self.fcs_csv.push(kw(self.rec_kwh[i]));
                }
                self.fcs_csv.push(total).end_row();
                let mut total = 0.0;
                self.scs_csv.push(t);
                for &i in &self.scs_cols {
                    total += kw(self.rec_kwh[i]);
                    self.scs_csv.push(kw(self.rec_kwh[i]));
                }
                self.scs_csv.push(total).push(kw(self.rec_v2g_kwh)).end_row();
            }
            self.rec_kwh.iter_mut().for_each(|x| *x = 0.0);
            self.rec_v2g_kwh = 0.0;
        }
        self.step += 1;
    }

    pub(crate) fn finish(self, manifest: impl FnOnce(EnergyLedger, RunStats) -> Manifest) -> RunRecord {
        let ledger = self.ledger();
        let pdn = match self.pdn {
            Some(p) => p.csv.finish(),
            None => CsvStream::new(["t", "objective", "method", "cone_gap"]).finish(),
        };
        RunRecord {
            manifest: manifest(ledger, self.stats),
            fcs_load: self.fcs_csv.finish(),
            scs_load: self.scs_csv.finish(),
            ev_state: self.ev_csv.finish(),
            pdn,
            v2g: self.v2g_csv.finish(),
        }
    }

    // ---- vehicle decisions ----

    fn launch(&mut self, vid: u32, path: Vec<EdgeId>, target_fcs: Option<usize>) {
        let a = &mut self.agents[vid as usize];
        a.route_end = path.last().copied();
        a.target_fcs = target_fcs;
        let ev = &mut self.evs[vid as usize];
        ev.status = EvStatus::Driving;
        let params = VehicleParams::from(&*ev.proto);
        self.traffic.depart(vid, params, path, self.now);
    }

    fn drive_to(&mut self, vid: u32, dest: EdgeId) {
        let origin = self.evs[vid as usize].edge;
        let weights = self.lengths.as_ref().unwrap_or(&self.apt);
        match self.router.route(&self.net, weights, origin, dest, self.now) {
            Ok(r) => {
                self.agents[vid as usize].dest = Some(dest);
                self.launch(vid, r.edges, None);
            }
            Err(e) => {
                warn!("{}: {e}", self.evs[vid as usize].id);
                self.stats_add(|s| s.unroutable += 1);
                self.agents[vid as usize].dest = None;
                self.park(vid);
            }
        }
    }

    fn stats_add(&mut self, f: impl FnOnce(&mut RunStats)) {
        if self.is_recording() {
            f(&mut self.stats);
        }
    }

    fn depart(&mut self, vid: u32) {
        let a = &mut self.agents[vid as usize];
        let mut k = a.next;
        while k + 1 < a.trips.len() && a.trips[k + 1].t <= self.now {
            k += 1;
        }
        let skipped = (k - a.next) as u64;
        a.next = k + 1;
        let dest = a.trips[k].dest;
        if let Some(s) = a.at_scs.take() {
            self.stations.list[s].leave(vid);
        }
        self.evs[vid as usize].status = EvStatus::Parking;
        self.stats_add(|s| {
            s.departures += 1;
            s.skipped_trips += skipped;
        });

        let origin = self.evs[vid as usize].edge;
        let route = self
            .router
            .route(&self.net, self.lengths.as_ref().unwrap_or(&self.apt), origin, dest, self.now)
            .ok();
        let length = route.as_ref().map(|r| self.net.path_length(&r.edges));
        match plan_departure(&self.evs[vid as usize], self.strategy, length) {
            DeparturePlan::Direct => match route {
                Some(r) => {
                    self.agents[vid as usize].dest = Some(dest);
                    self.launch(vid, r.edges, None);
                }
                None => {
                    self.stats_add(|s| s.unroutable += 1);
                    self.park(vid);
                }
            },
            DeparturePlan::DetourViaFcs => {
                self.agents[vid as usize].dest = Some(dest);
                self.seek_fcs(vid);
            }
        }
    }

    /// Candidates as seen from the vehicle's current edge, with the path to each.
    fn fcs_candidates(&self, vid: u32) -> (Vec<FcsCandidate>, Vec<Vec<EdgeId>>) {
        let origin = self.evs[vid as usize].edge;
        let tree = shortest_tree(&self.net, &self.apt, origin).expect("vehicle edge exists");
        let here = self.net.edge_midpoint(origin);
        let mut cands = Vec::new();
        let mut paths = Vec::new();
        for i in self.stations.fcs_indices() {
            let st = &self.stations.list[i];
            let (time, length, path) = match tree.route_to(st.edge) {
                Some(r) => (r.cost, self.net.path_length(&r.edges), r.edges),
                None => (f64::INFINITY, f64::INFINITY, Vec::new()),
            };
            let euclid = match (here, self.net.edge_midpoint(st.edge)) {
                (Some(a), Some(b)) => ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt(),
                _ => 0.0,
            };
            cands.push(FcsCandidate {
                station: i,
                id: st.id.clone(),
                travel_time_s: time,
                path_length_m: length,
                euclid_m: euclid,
                queue_len: st.queue_len(),
                charging: st.occupants().len(),
                upp: st.upp,
                online: st.online,
            });
            paths.push(path);
        }
        (cands, paths)
    }

    /// Pick a fast station and drive there; strand the vehicle if none fits.
    fn seek_fcs(&mut self, vid: u32) {
        let (cands, mut paths) = self.fcs_candidates(vid);
        match select_fcs(&self.evs[vid as usize], &cands, &self.selection) {
            Ok(k) => {
                let path = std::mem::take(&mut paths[k]);
                self.launch(vid, path, Some(cands[k].station));
            }
            Err(e) => {
                debug!("t={}: {e}", self.now);
                self.strand(vid);
            }
        }
    }

    fn nearest_online_fcs(&self, from: EdgeId) -> Option<(usize, f64)> {
        let tree = shortest_tree(&self.net, &self.apt, from).ok()?;
        let mut best: Option<(usize, f64)> = None;
        for i in self.stations.fcs_indices() {
            let st = &self.stations.list[i];
            if !st.online {
                continue;
            }
            if let Some(r) = tree.route_to(st.edge) {
                if best.map_or(true, |(_, t)| r.cost < t) {
                    best = Some((i, r.cost));
                }
            }
        }
        best
    }

    /// Take the vehicle off the road and queue it for a tow to a fast station.
    fn strand(&mut self, vid: u32) {
        self.traffic.remove(vid);
        self.agents[vid as usize].target_fcs = None;
        self.evs[vid as usize].status = EvStatus::LowBattery;
        self.stats_add(|s| s.low_battery += 1);
        let target = self
            .nearest_online_fcs(self.evs[vid as usize].edge)
            .or_else(|| self.stations.fcs_indices().next().map(|i| (i, 0.0)));
        match target {
            Some((st, drive)) => self.low.insert(LowBatteryEntry::new(vid, self.now, st, drive)),
            None => warn!("{} is stranded with no fast station in the scenario", self.evs[vid as usize].id),
        }
    }

    fn arrive(&mut self, vid: u32) {
        self.stats_add(|s| s.arrivals += 1);
        let a = &mut self.agents[vid as usize];
        if let Some(e) = a.route_end.take() {
            self.evs[vid as usize].edge = e;
        }
        match a.target_fcs.take() {
            Some(st) => self.enter_fcs(vid, st),
            None => {
                a.dest = None;
                self.park(vid);
            }
        }
    }

    fn enter_fcs(&mut self, vid: u32, st: usize) {
        match self.stations.list[st].fcs_arrive(vid) {
            Ok(adm) => {
                self.stats_add(|s| s.fcs_visits += 1);
                self.agents[vid as usize].at_fcs = Some(st);
                self.evs[vid as usize].status = match adm {
                    FcsAdmission::PileAssigned => EvStatus::ChargingFast,
                    FcsAdmission::Queued(_) => EvStatus::Queued,
                };
            }
            Err(_) => {
                self.evs[vid as usize].status = EvStatus::Parking;
                self.seek_fcs(vid);
            }
        }
    }

    fn park(&mut self, vid: u32) {
        let ev = &self.evs[vid as usize];
        let mut status = EvStatus::Parking;
        if let Some(s) = self.stations.scs_on(ev.edge) {
            let st = &mut self.stations.list[s];
            let free = st.online && st.has_free_pile();
            if on_arrival(ev, free) == ArrivalAction::ChargeSlow && st.scs_arrive(vid) == ScsAdmission::PileAssigned {
                self.agents[vid as usize].at_scs = Some(s);
                status = EvStatus::ChargingSlow;
            }
        }
        self.evs[vid as usize].status = status;
    }

    // ---- grid coupling, driven by the built-in plugins ----

    pub(crate) fn enable_pdn(&mut self, base: &PdnCase, interval_s: f64) -> Result<(), EngineError> {
        let station_by_id: HashMap<String, usize> = self
            .stations
            .list
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.clone(), i))
            .collect();
        for s in &self.stations.list {
            let bus = base.station_bus.get(&s.id).copied().unwrap_or(s.pdn_bus);
            if base.bus_index(bus).is_none() {
                return Err(EngineError::config("stations", format!("{} sits on unknown bus {bus}", s.id)));
            }
        }
        let v2g_cols: Vec<usize> = self.scs_cols.iter().copied().filter(|&i| self.stations.list[i].v2g).collect();
        let header = ["t", "objective", "method", "cone_gap"]
            .iter()
            .map(|s| s.to_string())
            .chain(base.generators.iter().enumerate().map(|(k, g)| format!("g{}_bus{}_p_kw", k + 1, g.bus)))
            .chain(base.buses.iter().map(|b| format!("v{}", b.id)))
            .chain(v2g_cols.iter().map(|&i| format!("p_vcr_{}", self.stations.list[i].id)))
            .collect::<Vec<_>>();
        self.pdn = Some(PdnState {
            interval_s,
            dispatch: vec![0.0; self.stations.len()],
            station_by_id,
            v2g_cols,
            last_error: None,
            csv: CsvStream::new(header),
        });
        Ok(())
    }

    pub(crate) fn last_pdn_error(&self) -> Option<String> {
        self.pdn.as_ref().and_then(|p| p.last_error.clone())
    }

    /// Offers, then the grid solve. Returns false for an infeasible interval.
    pub(crate) fn solve_pdn(&mut self, base: &PdnCase, solver: &mut PdnSolver) -> Result<bool, EngineError> {
        let t = self.step_end();
        let recording = t > 0.0;
        let interval = self.pdn.as_ref().expect("pdn enabled").interval_s;
        if let Some(v) = &mut self.v2g {
            for i in 0..self.stations.len() {
                let st = &self.stations.list[i];
                v.offers[i] = (st.kind == StationKind::Scs && st.v2g)
                    .then(|| station_capacity(st, &self.evs, &v.window, t))
                    .filter(|o| o.capacity_kw > 0.0);
            }
        }
        let mut loads = Vec::new();
        for (i, st) in self.stations.list.iter().enumerate() {
            let load_kw = self.pdn_kwh[i] * 3600.0 / interval;
            let cap = self
                .v2g
                .as_ref()
                .and_then(|v| v.offers[i].as_ref())
                .map(|o| o.capacity_kw);
            if load_kw > 0.0 || cap.is_some() {
                loads.push(StationLoad {
                    station: st.id.clone(),
                    bus: st.pdn_bus,
                    load_kw,
                    v2g_cap_kw: cap,
                });
            }
        }
        self.pdn_kwh.iter_mut().for_each(|x| *x = 0.0);
        let case = attach_loads(base, &loads).map_err(|e| EngineError::config("stations", e))?;
        let result = solver.solve(&case).or_else(|e| {
            warn!("t={t}: {e}; retrying with the linearized model");
            solver.lin_solve(&case)
        });
        let pdn = self.pdn.as_mut().unwrap();
        pdn.dispatch.iter_mut().for_each(|x| *x = 0.0);
        let ok = match result {
            Ok(sol) => {
                for (k, inj) in case.v2g_stations.iter().enumerate() {
                    if let Some(&i) = pdn.station_by_id.get(&inj.station) {
                        pdn.dispatch[i] = sol.v2g_kw[k];
                    }
                }
                if recording {
                    self.stats.pdn_solves += 1;
                    if sol.method == Method::Linear {
                        self.stats.linear_fallbacks += 1;
                    }
                    let csv = &mut pdn.csv;
                    csv.push(t)
                        .push(sol.objective * interval / 3600.0)
                        .push(match sol.method {
                            Method::Conic => "conic",
                            Method::Linear => "linear",
                        })
                        .push(sol.cone_gap);
                    for p in &sol.gen_p_kw {
                        csv.push(p);
                    }
                    for v in sol.voltage_pu() {
                        csv.push(v);
                    }
                    for &i in &pdn.v2g_cols {
                        csv.push(pdn.dispatch[i]);
                    }
                    csv.end_row();
                }
                pdn.last_error = None;
                true
            }
            Err(e) => {
                warn!("t={t}: grid infeasible: {e}");
                if recording {
                    self.stats.pdn_solves += 1;
                    self.stats.infeasible_intervals += 1;
                    let width = 4 + base.generators.len() + base.buses.len() + pdn.v2g_cols.len();
                    pdn.csv.push(t).push("").push("infeasible");
                    for _ in 3..width {
                        pdn.csv.push("");
                    }
                    pdn.csv.end_row();
                }
                pdn.last_error = Some(e.to_string());
                false
            }
        };
        Ok(ok)
    }

    pub(crate) fn enable_v2g(&mut self, window: V2gWindow) {
        let n = self.stations.len();
        self.v2g = Some(V2gState {
            window,
            offers: vec![None; n],
            alloc: vec![Vec::new(); n],
            alloc_ids: vec![Vec::new(); n],
        });
    }

    /// Split each station's dispatched power among its participants for the
    /// coming interval.
    pub(crate) fn dispatch_v2g(&mut self, strategy: &dyn V2gStrategy, interval_s: f64) -> Result<(), EngineError> {
        let t = self.step_end();
        let Some(v) = self.v2g.as_mut() else {
            return Ok(());
        };
        let dispatch = self.pdn.as_ref().map(|p| p.dispatch.clone()).unwrap_or_default();
        for i in 0..self.stations.len() {
            v.alloc[i].clear();
            v.alloc_ids[i].clear();
            let Some(offer) = &v.offers[i] else { continue };
            let p_vcr = dispatch.get(i).copied().unwrap_or(0.0).clamp(0.0, offer.capacity_kw);
            let mut alloc = allocate(offer, p_vcr, strategy).map_err(|e| EngineError::Runtime(e.to_string()))?;
            let shortfall = clip_to_energy(&self.evs, &mut alloc, interval_s);
            if shortfall > 0.0 {
                debug!("t={t}: {} short by {shortfall} kW", offer.station);
            }
            let allocated: f64 = alloc.iter().map(|a| a.1).sum();
            if t > 0.0 {
                self.v2g_csv
                    .push(t)
                    .push(&offer.station)
                    .push(offer.capacity_kw)
                    .push(p_vcr)
                    .push(offer.participants.len())
                    .push(allocated)
                    .end_row();
            }
            alloc.retain(|a| a.1 > 0.0);
            v.alloc_ids[i] = alloc.iter().map(|a| a.0).collect();
            v.alloc[i] = alloc;
        }
        Ok(())
    }
}
