//! Scenario directories: loading, validation, generators and a bundled
//! synthetic city.
//!
//! A scenario directory holds `scenario.json`, `network.json`,
//! `prototypes.json`, `evs.json` and `stations.json`, plus the optional
//! `schedule.json`, `placemodel.json`, `pdn.json` and `trips.json`.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::decisions::{DepartureStrategy, SelectionParams};
use crate::ev::{CoefficientRanges, Coefficients, ElectricVehicle, EvPrototype};
use crate::network::{Algorithm, EdgeId, EdgeRecord, Junction, NetworkFile, RoadNetwork, WeightMode};
use crate::pdn::PdnCase;
use crate::rng;
use crate::stations::{ScheduleEvent, StationKind, StationRecord, Stations};
use crate::traffic::StepConfig;
use crate::tripgen::{generate_chain, ChainRecord, PlaceModel, HOME};
use crate::v2g::{strategy_by_name, V2gWindow};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("cannot read {0}: {1}")]
    Io(String, String),
    #[error("{file}: {msg}")]
    Parse { file: String, msg: String },
    #[error("invalid {field}: {msg}")]
    Invalid { field: String, msg: String },
}

impl ScenarioError {
    pub fn invalid(field: impl Into<String>, msg: impl ToString) -> Self {
        Self::Invalid {
            field: field.into(),
            msg: msg.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct V2gConfig {
    pub enabled: bool,
    pub window: V2gWindow,
    /// Name of the allocation strategy.
    pub strategy: String,
}

impl Default for V2gConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            window: V2gWindow::default(),
            strategy: "proportional".into(),
        }
    }
}

/// Contents of `scenario.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub strategy: DepartureStrategy,
    pub selection: SelectionParams,
    pub routing: Algorithm,
    pub weights: WeightMode,
    /// Minimum seconds between contraction hierarchy rebuilds.
    pub ch_rebuild_s: f64,
    pub traffic: StepConfig,
    pub pdn_enabled: bool,
    pub v2g: V2gConfig,
    /// Simulate one extra day before t = 0 and drop it from the outputs.
    pub warmup: bool,
    /// Averaging period of the load CSVs, seconds.
    pub record_dt: f64,
    /// Vehicle state sampling period, seconds.
    pub ev_sample_dt: f64,
    /// Vehicles with an index below this are sampled.
    pub ev_sample_count: usize,
    pub days: usize,
    pub dt_pdn: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            strategy: DepartureStrategy::Threshold,
            selection: SelectionParams::default(),
            routing: Algorithm::Ch,
            weights: WeightMode::Fastest,
            ch_rebuild_s: 900.0,
            traffic: StepConfig::default(),
            pdn_enabled: true,
            v2g: V2gConfig::default(),
            warmup: true,
            record_dt: 60.0,
            ev_sample_dt: 900.0,
            ev_sample_count: 100,
            days: 1,
            dt_pdn: 900.0,
        }
    }
}

/// One line of `evs.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvRecord {
    pub id: String,
    pub prototype: String,
    pub soc: f64,
    /// Home edge id.
    pub home: String,
    #[serde(flatten)]
    pub coef: Coefficients,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub network: RoadNetwork,
    pub prototypes: Vec<EvPrototype>,
    pub evs: Vec<EvRecord>,
    pub stations: Vec<StationRecord>,
    pub schedule: Vec<ScheduleEvent>,
    pub places: PlaceModel,
    pub pdn: PdnCase,
    pub trips: Option<Vec<ChainRecord>>,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io(path.display().to_string(), e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| ScenarioError::Parse {
        file: path.display().to_string(),
        msg: e.to_string(),
    })
}

pub fn read_optional<T: DeserializeOwned>(path: &Path) -> Result<Option<T>, ScenarioError> {
    if path.exists() {
        read_json(path).map(Some)
    } else {
        Ok(None)
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), ScenarioError> {
    let text = serde_json::to_string_pretty(value).expect("scenario types serialize");
    std::fs::write(path, text).map_err(|e| ScenarioError::Io(path.display().to_string(), e.to_string()))
}

impl Scenario {
    pub fn load(dir: &Path) -> Result<Self, ScenarioError> {
        if !dir.is_dir() {
            return Err(ScenarioError::Io(dir.display().to_string(), "not a directory".into()));
        }
        let config: ScenarioConfig = read_optional(&dir.join("scenario.json"))?.unwrap_or_default();
        let file: NetworkFile = read_json(&dir.join("network.json"))?;
        let network = RoadNetwork::from_file(file).map_err(|e| ScenarioError::invalid("network", e))?;
        let scn = Self {
            config,
            network,
            prototypes: read_optional(&dir.join("prototypes.json"))?.unwrap_or_else(EvPrototype::standard_set),
            evs: read_json(&dir.join("evs.json"))?,
            stations: read_json(&dir.join("stations.json"))?,
            schedule: read_optional(&dir.join("schedule.json"))?.unwrap_or_default(),
            places: read_optional(&dir.join("placemodel.json"))?.unwrap_or_default(),
            pdn: read_optional(&dir.join("pdn.json"))?.unwrap_or_else(PdnCase::ieee33),
            trips: read_optional(&dir.join("trips.json"))?,
        };
        scn.validate()?;
        Ok(scn)
    }

    pub fn save(&self, dir: &Path) -> Result<(), ScenarioError> {
        std::fs::create_dir_all(dir).map_err(|e| ScenarioError::Io(dir.display().to_string(), e.to_string()))?;
        write_json(&dir.join("scenario.json"), &self.config)?;
        write_json(&dir.join("network.json"), &self.network.to_file())?;
        write_json(&dir.join("prototypes.json"), &self.prototypes)?;
        write_json(&dir.join("evs.json"), &self.evs)?;
        write_json(&dir.join("stations.json"), &self.stations)?;
        write_json(&dir.join("placemodel.json"), &self.places)?;
        write_json(&dir.join("pdn.json"), &self.pdn)?;
        if !self.schedule.is_empty() {
            write_json(&dir.join("schedule.json"), &self.schedule)?;
        }
        if let Some(trips) = &self.trips {
            write_json(&dir.join("trips.json"), trips)?;
        }
        Ok(())
    }

    /// Cross-file checks: every id resolves, every number is in range.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let c = &self.config;
        let positive = [
            (c.traffic.dt, "traffic.dt"),
            (c.record_dt, "record_dt"),
            (c.ev_sample_dt, "ev_sample_dt"),
            (c.dt_pdn, "dt_pdn"),
            (c.selection.full_charge_s, "selection.full_charge_s"),
        ];
        for (v, name) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ScenarioError::invalid(name, format!("must be positive, got {v}")));
            }
        }
        if c.traffic.eta_max < 0.0 || c.traffic.reaction_time < 0.0 {
            return Err(ScenarioError::invalid("traffic", "negative reaction time or noise"));
        }
        c.v2g.window.validate().map_err(|e| ScenarioError::invalid("v2g.window", e))?;
        strategy_by_name(&c.v2g.strategy).map_err(|e| ScenarioError::invalid("v2g.strategy", e))?;
        if c.v2g.enabled && !c.pdn_enabled {
            return Err(ScenarioError::invalid("v2g.enabled", "V2G needs the PDN simulation"));
        }

        let mut protos = BTreeMap::new();
        for p in &self.prototypes {
            p.validate().map_err(|e| ScenarioError::invalid("prototypes", e))?;
            if protos.insert(p.id.as_str(), p).is_some() {
                return Err(ScenarioError::invalid("prototypes", format!("duplicate id {}", p.id)));
            }
        }
        let mut ids = std::collections::HashSet::new();
        for ev in &self.evs {
            if !ids.insert(ev.id.as_str()) {
                return Err(ScenarioError::invalid("evs", format!("duplicate id {}", ev.id)));
            }
            if !protos.contains_key(ev.prototype.as_str()) {
                return Err(ScenarioError::invalid("evs", format!("{} uses unknown prototype {}", ev.id, ev.prototype)));
            }
            if !(0.0..=1.0).contains(&ev.soc) {
                return Err(ScenarioError::invalid("evs", format!("{} has soc {}", ev.id, ev.soc)));
            }
            if self.network.edge_id(&ev.home).is_none() {
                return Err(ScenarioError::invalid("evs", format!("{} lives on unknown edge {}", ev.id, ev.home)));
            }
        }

        let stations = self.build_stations()?;
        crate::stations::Schedule::new(self.schedule.clone())
            .validate(&stations)
            .map_err(|e| ScenarioError::invalid("schedule", e))?;
        self.places
            .resolve(&self.network)
            .map_err(|e| ScenarioError::invalid("placemodel", e))?;
        if c.pdn_enabled {
            self.pdn.validate().map_err(|e| ScenarioError::invalid("pdn", e))?;
            for s in &stations.list {
                let bus = self.pdn.station_bus.get(&s.id).copied().unwrap_or(s.pdn_bus);
                if self.pdn.bus_index(bus).is_none() {
                    return Err(ScenarioError::invalid("stations", format!("{} sits on unknown bus {bus}", s.id)));
                }
            }
        }
        if let Some(trips) = &self.trips {
            let by_id: BTreeMap<&str, usize> = self.evs.iter().enumerate().map(|(i, e)| (e.id.as_str(), i)).collect();
            for rec in trips {
                let i = *by_id
                    .get(rec.ev.as_str())
                    .ok_or_else(|| ScenarioError::invalid("trips", format!("unknown vehicle {}", rec.ev)))?;
                let chain = rec
                    .to_chain(i as u32, &self.network)
                    .map_err(|e| ScenarioError::invalid("trips", e))?;
                chain
                    .check()
                    .map_err(|e| ScenarioError::invalid("trips", format!("{}: {e}", rec.ev)))?;
            }
        }
        Ok(())
    }

    pub fn build_stations(&self) -> Result<Stations, ScenarioError> {
        Stations::from_records(&self.network, &self.stations).map_err(|e| ScenarioError::invalid("stations", e))
    }

    /// Vehicles in file order; vehicle `i` gets index `i` everywhere else.
    pub fn build_fleet(&self) -> Result<Vec<ElectricVehicle>, ScenarioError> {
        let protos: BTreeMap<&str, Arc<EvPrototype>> = self
            .prototypes
            .iter()
            .map(|p| (p.id.as_str(), Arc::new(p.clone())))
            .collect();
        self.evs
            .iter()
            .map(|r| {
                let proto = protos
                    .get(r.prototype.as_str())
                    .ok_or_else(|| ScenarioError::invalid("evs", format!("unknown prototype {}", r.prototype)))?;
                let home = self
                    .network
                    .edge_id(&r.home)
                    .ok_or_else(|| ScenarioError::invalid("evs", format!("unknown edge {}", r.home)))?;
                Ok(ElectricVehicle::new(r.id.clone(), proto.clone(), r.soc, r.coef, home))
            })
            .collect()
    }

    /// SHA-256 over the canonical JSON of every input.
    pub fn hash_inputs(&self, hasher: &mut Sha256) {
        let parts: [(&str, String); 9] = [
            ("scenario", to_json(&self.config)),
            ("network", to_json(&self.network.to_file())),
            ("prototypes", to_json(&self.prototypes)),
            ("evs", to_json(&self.evs)),
            ("stations", to_json(&self.stations)),
            ("schedule", to_json(&self.schedule)),
            ("placemodel", to_json(&self.places)),
            ("pdn", to_json(&self.pdn)),
            ("trips", to_json(&self.trips)),
        ];
        for (name, text) in parts {
            hasher.update(name.as_bytes());
            hasher.update((text.len() as u64).to_le_bytes());
            hasher.update(text.as_bytes());
        }
    }

    /// Trip chains for `days` days starting at `first_day`, one labelled
    /// stream per vehicle.
    pub fn generate_trips(&self, seed: u64, first_day: i64, days: usize) -> Result<Vec<ChainRecord>, ScenarioError> {
        let places = self
            .places
            .resolve(&self.network)
            .map_err(|e| ScenarioError::invalid("placemodel", e))?;
        self.evs
            .iter()
            .enumerate()
            .map(|(i, ev)| {
                let home = self
                    .network
                    .edge_id(&ev.home)
                    .ok_or_else(|| ScenarioError::invalid("evs", format!("unknown edge {}", ev.home)))?;
                let mut r = rng::substream(seed, "trips", i as u64);
                let chain = generate_chain(i as u32, home, first_day, days, &self.places, &places, &mut r);
                Ok(ChainRecord::from_chain(&chain, &ev.id, &self.network))
            })
            .collect()
    }
}

fn to_json<T: Serialize + ?Sized>(v: &T) -> String {
    serde_json::to_string(v).expect("scenario types serialize")
}

/// Random fleet: uniform prototype, home edge and initial SoC, coefficients
/// from `ranges`.
pub fn generate_fleet(
    protos: &[EvPrototype],
    homes: &[String],
    count: usize,
    soc_range: (f64, f64),
    ranges: &CoefficientRanges,
    seed: u64,
) -> Vec<EvRecord> {
    assert!(!protos.is_empty() && !homes.is_empty());
    let mut r = rng::stream(seed, "fleet");
    (0..count)
        .map(|i| {
            let proto = &protos[r.gen_range(0..protos.len())];
            let home = &homes[r.gen_range(0..homes.len())];
            let soc = if soc_range.1 > soc_range.0 {
                r.gen_range(soc_range.0..soc_range.1)
            } else {
                soc_range.0
            };
            EvRecord {
                id: format!("EV{i}"),
                prototype: proto.id.clone(),
                soc,
                home: home.clone(),
                coef: ranges.sample(&mut r),
            }
        })
        .collect()
}

/// Home candidates: the place model's "home" list, else every edge without a
/// fast station.
pub fn home_edges(net: &RoadNetwork, places: &PlaceModel) -> Vec<String> {
    match places.places.get(HOME) {
        Some(list) if !list.is_empty() => list.clone(),
        _ => net
            .edges()
            .iter()
            .filter(|e| !e.id.starts_with("CS"))
            .map(|e| e.id.clone())
            .collect(),
    }
}

/// Buses near the substation, used for fast stations in order.
pub const FCS_BUSES: [usize; 10] = [2, 3, 4, 19, 20, 23, 24, 5, 6, 26];

/// Fast stations on every "CS*" edge and slow stations everywhere else.
pub fn generate_stations(net: &RoadNetwork, fcs_piles: u32, scs_piles: u32, bus_count: usize) -> Vec<StationRecord> {
    let fcs_bus = |e: EdgeId| {
        let k: usize = net.edge(e).id[2..].parse().unwrap_or(1);
        FCS_BUSES[(k.max(1) - 1) % FCS_BUSES.len()]
    };
    let span = bus_count.saturating_sub(1).max(1);
    let scs_bus = |e: EdgeId| 2 + e.index() % span;
    let fcs = Stations::infer_fcs(net, fcs_piles, fcs_bus);
    let mut all = Stations::fill_scs(net, fcs, scs_piles, scs_bus).expect("generated stations are consistent");
    for s in &mut all.list {
        s.v2g = s.kind == StationKind::Scs;
    }
    let mut recs = all.to_records(net);
    for r in &mut recs {
        r.upp = None;
    }
    recs
}

/// Parameters of the bundled synthetic city.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticParams {
    /// Junctions per side of the square grid.
    pub grid: usize,
    pub spacing_m: f64,
    pub evs: usize,
    pub seed: u64,
    pub soc_range: (f64, f64),
    pub fcs_piles: u32,
    pub scs_piles: u32,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            grid: 5,
            spacing_m: 2500.0,
            evs: 500,
            seed: 1,
            soc_range: (0.2, 1.0),
            fcs_piles: 10,
            scs_piles: 4,
        }
    }
}

const CITY_SPEED: f64 = 13.89;
const ARTERIAL_SPEED: f64 = 19.44;
const SPUR_SPEED: f64 = 8.33;
const SPUR_M: f64 = 300.0;
const FCS_COUNT: usize = 10;
const SPUR_COUNT: usize = 12;

/// A square street grid with fast diagonals near the corners and twelve
/// dead-end spurs around the border, ten of which are fast-station edges
/// "CS1".."CS10". Slow stations cover every other edge.
pub fn synthetic(p: &SyntheticParams) -> Scenario {
    let n = p.grid.max(3);
    let s = p.spacing_m;
    let name = |r: usize, c: usize| format!("J{r}_{c}");
    let mut junctions = Vec::new();
    for r in 0..n {
        for c in 0..n {
            junctions.push(Junction {
                id: name(r, c),
                x: Some(c as f64 * s),
                y: Some(r as f64 * s),
            });
        }
    }
    let mut edges = Vec::new();
    let road = |edges: &mut Vec<EdgeRecord>, a: String, b: String, len: f64, speed: f64| {
        for (from, to) in [(&a, &b), (&b, &a)] {
            edges.push(EdgeRecord {
                id: format!("{from}-{to}"),
                from: from.clone(),
                to: to.clone(),
                length_m: len,
                speed_mps: speed,
                lanes: 2,
                dead_end: false,
            });
        }
    };
    for r in 0..n {
        for c in 0..n {
            if c + 1 < n {
                road(&mut edges, name(r, c), name(r, c + 1), s, CITY_SPEED);
            }
            if r + 1 < n {
                road(&mut edges, name(r, c), name(r + 1, c), s, CITY_SPEED);
            }
        }
    }
    let diag = s * std::f64::consts::SQRT_2;
    for (r, c, dr, dc) in [(0, 0, 1i64, 1i64), (0, n - 1, 1, -1), (n - 1, 0, -1, 1), (n - 1, n - 1, -1, -1)] {
        let r2 = (r as i64 + dr) as usize;
        let c2 = (c as i64 + dc) as usize;
        road(&mut edges, name(r, c), name(r2, c2), diag, ARTERIAL_SPEED);
    }
    let grid_edges: Vec<String> = edges.iter().map(|e| e.id.clone()).collect();

    // border junctions clockwise from the top-left corner, with the outward direction
    let mut border: Vec<(usize, usize, f64, f64)> = Vec::new();
    for c in 0..n - 1 {
        border.push((0, c, 0.0, -1.0));
    }
    for r in 0..n - 1 {
        border.push((r, n - 1, 1.0, 0.0));
    }
    for c in (1..n).rev() {
        border.push((n - 1, c, 0.0, 1.0));
    }
    for r in (1..n).rev() {
        border.push((r, 0, -1.0, 0.0));
    }
    let mut park_edges = Vec::new();
    for k in 0..SPUR_COUNT {
        let (r, c, dx, dy) = border[k * border.len() / SPUR_COUNT];
        let spur = format!("S{}", k + 1);
        junctions.push(Junction {
            id: spur.clone(),
            x: Some(c as f64 * s + dx * SPUR_M),
            y: Some(r as f64 * s + dy * SPUR_M),
        });
        let (inbound, outbound) = if k < FCS_COUNT {
            (format!("CS{}", k + 1), format!("X{}", k + 1))
        } else {
            let i = k + 1 - FCS_COUNT;
            (format!("P{i}"), format!("Q{i}"))
        };
        if k >= FCS_COUNT {
            park_edges.push(inbound.clone());
        }
        edges.push(EdgeRecord {
            id: inbound,
            from: name(r, c),
            to: spur.clone(),
            length_m: SPUR_M,
            speed_mps: SPUR_SPEED,
            lanes: 1,
            dead_end: true,
        });
        edges.push(EdgeRecord {
            id: outbound,
            from: spur,
            to: name(r, c),
            length_m: SPUR_M,
            speed_mps: SPUR_SPEED,
            lanes: 1,
            dead_end: false,
        });
    }
    let network = RoadNetwork::from_file(NetworkFile { junctions, edges }).expect("synthetic network is valid");

    let inner = |j: usize| {
        let (r, c) = (j / n, j % n);
        (1..n - 1).contains(&r) && (1..n - 1).contains(&c)
    };
    let mut work = Vec::new();
    let mut other = park_edges;
    for id in &grid_edges {
        let e = &network.edges()[network.edge_id(id).unwrap().index()];
        if inner(e.from) && inner(e.to) {
            work.push(id.clone());
        } else {
            other.push(id.clone());
        }
    }
    let mut places = PlaceModel::default();
    places.places.insert(HOME.into(), grid_edges.clone());
    places.places.insert("work".into(), work);
    places.places.insert("other".into(), other);

    let prototypes = EvPrototype::standard_set();
    let pdn = PdnCase::ieee33();
    let stations = generate_stations(&network, p.fcs_piles, p.scs_piles, pdn.buses.len());
    let evs = generate_fleet(
        &prototypes,
        &grid_edges,
        p.evs,
        p.soc_range,
        &CoefficientRanges::default(),
        p.seed,
    );
    Scenario {
        config: ScenarioConfig::default(),
        network,
        prototypes,
        evs,
        stations,
        schedule: Vec::new(),
        places,
        pdn,
        trips: None,
    }
}
