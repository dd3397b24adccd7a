//! Daily trip chains: a shifted-Gamma first departure, dwell-time intervals
//! per place category, Markov destination choice, and a final trip home.

use std::collections::BTreeMap;
use std::path::Path;

use log::debug;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{EdgeId, RoadNetwork};

pub const DAY_S: f64 = 86_400.0;
pub const HOME: &str = "home";
const MAX_RESAMPLES: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TripError {
    #[error("transition row {0} sums to {1}, expected 1")]
    BadRow(String, f64),
    #[error("category {0} is used but has no places")]
    EmptyCategory(String),
    #[error("category {0} has no interval distribution")]
    MissingInterval(String),
    #[error("category {0} has no transition row")]
    MissingRow(String),
    #[error("unknown edge {0} in place model")]
    UnknownEdge(String),
    #[error("invalid distribution parameters for {0}")]
    BadDistribution(String),
    #[error("trips_per_day must be at least 1")]
    NoTrips,
    #[error("cannot read {0}: {1}")]
    Io(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DayType {
    Weekday,
    Weekend,
}

impl DayType {
    /// Day 0 is a Monday; days 5 and 6 of every week are weekend days.
    pub fn of_day(day: i64) -> Self {
        if day.rem_euclid(7) >= 5 {
            DayType::Weekend
        } else {
            DayType::Weekday
        }
    }
}

/// `shift + Gamma(shape, scale)` in minutes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftedGamma {
    pub shift_min: f64,
    pub shape: f64,
    pub scale_min: f64,
}

impl ShiftedGamma {
    pub fn mean_min(&self) -> f64 {
        self.shift_min + self.shape * self.scale_min
    }
}

/// Normal dwell time in seconds, resampled until positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean_s: f64,
    pub std_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayModel {
    pub first_departure: ShiftedGamma,
    /// Row per current category: next category -> probability.
    pub transitions: BTreeMap<String, BTreeMap<String, f64>>,
}

/// Contents of `placemodel.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceModel {
    /// Non-home category -> edge ids. Home is each vehicle's own edge.
    #[serde(default)]
    pub places: BTreeMap<String, Vec<String>>,
    pub intervals: BTreeMap<String, Interval>,
    pub weekday: DayModel,
    pub weekend: DayModel,
    #[serde(default = "default_trips")]
    pub trips_per_day: usize,
}

fn default_trips() -> usize {
    3
}

fn row(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

impl Default for PlaceModel {
    fn default() -> Self {
        let h = 3600.0;
        let intervals = [
            (HOME, 4.0 * h, 1.0 * h),
            ("work", 8.0 * h, 1.0 * h),
            ("other", 1.5 * h, 0.5 * h),
        ]
        .iter()
        .map(|(k, m, s)| (k.to_string(), Interval { mean_s: *m, std_s: *s }))
        .collect();
        let weekday = DayModel {
            first_departure: ShiftedGamma {
                shift_min: 114.54,
                shape: 6.63,
                scale_min: 65.76,
            },
            transitions: [
                (HOME, row(&[("work", 0.7), ("other", 0.3)])),
                ("work", row(&[("other", 1.0)])),
                ("other", row(&[("work", 0.5), ("other", 0.5)])),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        };
        let weekend = DayModel {
            first_departure: ShiftedGamma {
                shift_min: 197.53,
                shape: 3.45,
                scale_min: 84.37,
            },
            transitions: [
                (HOME, row(&[("work", 0.2), ("other", 0.8)])),
                ("work", row(&[("other", 1.0)])),
                ("other", row(&[("work", 0.3), ("other", 0.7)])),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        };
        Self {
            places: BTreeMap::new(),
            intervals,
            weekday,
            weekend,
            trips_per_day: 3,
        }
    }
}

impl PlaceModel {
    pub fn load(path: &Path) -> Result<Self, TripError> {
        let text = std::fs::read_to_string(path).map_err(|e| TripError::Io(path.display().to_string(), e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| TripError::Io(path.display().to_string(), e.to_string()))
    }

    pub fn day(&self, t: DayType) -> &DayModel {
        match t {
            DayType::Weekday => &self.weekday,
            DayType::Weekend => &self.weekend,
        }
    }

    /// Validate against `net` and resolve place edges.
    pub fn resolve(&self, net: &RoadNetwork) -> Result<ResolvedPlaces, TripError> {
        if self.trips_per_day == 0 {
            return Err(TripError::NoTrips);
        }
        let mut places = BTreeMap::new();
        for (cat, ids) in &self.places {
            let edges = ids
                .iter()
                .map(|id| net.edge_id(id).ok_or_else(|| TripError::UnknownEdge(id.clone())))
                .collect::<Result<Vec<_>, _>>()?;
            places.insert(cat.clone(), edges);
        }
        for day in [&self.weekday, &self.weekend] {
            let g = day.first_departure;
            if !(g.shape > 0.0 && g.scale_min > 0.0 && g.shift_min >= 0.0 && g.shift_min < DAY_S / 60.0) {
                return Err(TripError::BadDistribution("first departure".into()));
            }
            for (from, r) in &day.transitions {
                let sum: f64 = r.values().sum();
                if (sum - 1.0).abs() > 1e-9 || r.values().any(|p| *p < 0.0) {
                    return Err(TripError::BadRow(from.clone(), sum));
                }
                for (to, p) in r {
                    if *p > 0.0 && to != HOME && places.get(to).map_or(true, |v: &Vec<EdgeId>| v.is_empty()) {
                        return Err(TripError::EmptyCategory(to.clone()));
                    }
                    if *p > 0.0 && !day.transitions.contains_key(to) && self.trips_per_day > 2 {
                        return Err(TripError::MissingRow(to.clone()));
                    }
                }
            }
            if !day.transitions.contains_key(HOME) {
                return Err(TripError::MissingRow(HOME.into()));
            }
        }
        for (cat, iv) in &self.intervals {
            if !(iv.mean_s > 0.0 && iv.std_s >= 0.0) {
                return Err(TripError::BadDistribution(cat.clone()));
            }
        }
        for day in [&self.weekday, &self.weekend] {
            for r in day.transitions.values() {
                for (to, p) in r {
                    if *p > 0.0 && !self.intervals.contains_key(to) {
                        return Err(TripError::MissingInterval(to.clone()));
                    }
                }
            }
        }
        Ok(ResolvedPlaces { places })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedPlaces {
    places: BTreeMap<String, Vec<EdgeId>>,
}

impl ResolvedPlaces {
    pub fn edges(&self, category: &str) -> &[EdgeId] {
        self.places.get(category).map_or(&[], |v| v.as_slice())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trip {
    /// Departure, seconds since midnight of day 0.
    pub t: f64,
    pub origin: EdgeId,
    pub dest: EdgeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripChain {
    pub ev: u32,
    pub trips: Vec<Trip>,
    /// Days whose chain was cut short because departures ran past midnight.
    pub truncated_days: Vec<i64>,
}

impl TripChain {
    /// Departures strictly increase, consecutive trips connect, and the
    /// chain ends where it started.
    pub fn check(&self) -> Result<(), String> {
        for w in self.trips.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(format!("departures not increasing: {} then {}", w[0].t, w[1].t));
            }
            if w[0].dest != w[1].origin {
                return Err(format!("trip ending at {} followed by one starting at {}", w[0].dest, w[1].origin));
            }
        }
        if let (Some(first), Some(last)) = (self.trips.first(), self.trips.last()) {
            if first.origin != last.dest {
                return Err("chain does not return to its origin".into());
            }
        }
        Ok(())
    }
}

/// First departure of a day, seconds after that day's midnight.
pub fn sample_first_departure<R: Rng + ?Sized>(day: &DayModel, rng: &mut R) -> f64 {
    let g = day.first_departure;
    let gamma = Gamma::new(g.shape, g.scale_min).expect("validated parameters");
    loop {
        let t = (g.shift_min + gamma.sample(rng)) * 60.0;
        if (0.0..DAY_S).contains(&t) {
            return t;
        }
    }
}

fn sample_interval<R: Rng + ?Sized>(iv: &Interval, rng: &mut R) -> f64 {
    if iv.std_s == 0.0 {
        return iv.mean_s;
    }
    let n = Normal::new(iv.mean_s, iv.std_s).expect("validated parameters");
    loop {
        let x = n.sample(rng);
        if x > 0.0 {
            return x;
        }
    }
}

fn sample_category<'a, R: Rng + ?Sized>(row: &'a BTreeMap<String, f64>, rng: &mut R) -> &'a str {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = HOME;
    for (cat, p) in row {
        if *p <= 0.0 {
            continue;
        }
        acc += p;
        last = cat;
        if u < acc {
            return cat;
        }
    }
    last
}

/// Generate `days` days of trips starting at `first_day`.
pub fn generate_chain<R: Rng + ?Sized>(
    ev: u32,
    home: EdgeId,
    first_day: i64,
    days: usize,
    model: &PlaceModel,
    places: &ResolvedPlaces,
    rng: &mut R,
) -> TripChain {
    let mut trips = Vec::with_capacity(days * model.trips_per_day);
    let mut truncated_days = Vec::new();
    // a vehicle keeps one workplace for the whole chain
    let work = places.edges("work");
    let work_edge = (!work.is_empty()).then(|| work[rng.gen_range(0..work.len())]);

    for d in first_day..first_day + days as i64 {
        let day = model.day(DayType::of_day(d));
        let start = d as f64 * DAY_S;
        let end = start + DAY_S;
        let mut t = start + sample_first_departure(day, rng);
        let mut here = home;
        let mut cat = HOME.to_string();
        for k in 0..model.trips_per_day {
            let last = k + 1 == model.trips_per_day;
            let (dest, dest_cat) = if last {
                (home, HOME.to_string())
            } else {
                let row = day.transitions.get(&cat).expect("validated rows");
                let next = sample_category(row, rng).to_string();
                let edge = match next.as_str() {
                    HOME => home,
                    "work" if work_edge.is_some() => work_edge.unwrap(),
                    other => pick_place(places.edges(other), here, rng),
                };
                (edge, next)
            };
            trips.push(Trip { t, origin: here, dest });
            here = dest;
            cat = dest_cat;
            if last {
                break;
            }
            let iv = &model.intervals[&cat];
            let mut next_t = None;
            for _ in 0..MAX_RESAMPLES {
                let cand = t + sample_interval(iv, rng);
                if cand < end {
                    next_t = Some(cand);
                    break;
                }
            }
            match next_t {
                Some(nt) => t = nt,
                None => {
                    debug!("vehicle {ev}: departures overflow day {d}; returning home early");
                    truncated_days.push(d);
                    if here != home {
                        let mid = t + (end - t) / 2.0;
                        trips.push(Trip { t: mid, origin: here, dest: home });
                    }
                    break;
                }
            }
        }
    }
    TripChain { ev, trips, truncated_days }
}

fn pick_place<R: Rng + ?Sized>(edges: &[EdgeId], avoid: EdgeId, rng: &mut R) -> EdgeId {
    if edges.len() > 1 {
        loop {
            let e = edges[rng.gen_range(0..edges.len())];
            if e != avoid {
                return e;
            }
        }
    }
    edges[0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub t: f64,
    pub origin: String,
    pub dest: String,
}

/// One vehicle's chain in `trips.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub ev: String,
    pub trips: Vec<TripRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub truncated_days: Vec<i64>,
}

impl ChainRecord {
    pub fn from_chain(chain: &TripChain, ev_id: &str, net: &RoadNetwork) -> Self {
        Self {
            ev: ev_id.to_string(),
            trips: chain
                .trips
                .iter()
                .map(|t| TripRecord {
                    t: t.t,
                    origin: net.edge(t.origin).id.clone(),
                    dest: net.edge(t.dest).id.clone(),
                })
                .collect(),
            truncated_days: chain.truncated_days.clone(),
        }
    }

    pub fn to_chain(&self, ev: u32, net: &RoadNetwork) -> Result<TripChain, TripError> {
        let lookup = |id: &str| net.edge_id(id).ok_or_else(|| TripError::UnknownEdge(id.to_string()));
        let trips = self
            .trips
            .iter()
            .map(|t| {
                Ok(Trip {
                    t: t.t,
                    origin: lookup(&t.origin)?,
                    dest: lookup(&t.dest)?,
                })
            })
            .collect::<Result<Vec<_>, TripError>>()?;
        Ok(TripChain {
            ev,
            trips,
            truncated_days: self.truncated_days.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::tests::grid;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model_on(net: &RoadNetwork) -> (PlaceModel, ResolvedPlaces) {
        let mut m = PlaceModel::default();
        let ids: Vec<String> = net.edges().iter().map(|e| e.id.clone()).collect();
        m.places.insert("work".into(), ids[..5].to_vec());
        m.places.insert("other".into(), ids[5..20].to_vec());
        let r = m.resolve(net).unwrap();
        (m, r)
    }

    /// Gamma mean = shape x scale, plus the shift.
    #[test]
    fn first_departure_means() {
        let m = PlaceModel::default();
        assert!((m.weekday.first_departure.mean_min() - 550.5288).abs() < 1e-9);
        assert!((m.weekend.first_departure.mean_min() - 488.6065).abs() < 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (day, target) in [(&m.weekday, 550.5288), (&m.weekend, 488.6065)] {
            let n = 200_000;
            let mut sum = 0.0;
            for _ in 0..n {
                let t = sample_first_departure(day, &mut rng);
                assert!(t >= day.first_departure.shift_min * 60.0);
                sum += t / 60.0;
            }
            let mean = sum / n as f64;
            assert!((mean - target).abs() / target < 0.005, "mean {mean} vs {target}");
        }
    }

    #[test]
    fn one_day_closes_at_home() {
        let net = grid(4, &mut ChaCha8Rng::seed_from_u64(1));
        let (m, r) = model_on(&net);
        let home = EdgeId(30);
        let c = generate_chain(0, home, 0, 1, &m, &r, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(c.trips.len(), 3);
        assert_eq!(c.trips[0].origin, home);
        assert_eq!(c.trips[2].dest, home);
        c.check().unwrap();
    }

    #[test]
    fn eight_days_give_24_trips() {
        let net = grid(4, &mut ChaCha8Rng::seed_from_u64(1));
        let (m, r) = model_on(&net);
        let mut full_chains = 0;
        for seed in 0..20 {
            let c = generate_chain(3, EdgeId(7), 0, 8, &m, &r, &mut ChaCha8Rng::seed_from_u64(seed));
            c.check().unwrap();
            for d in 0..8i64 {
                let n = c.trips.iter().filter(|t| (t.t / DAY_S).floor() as i64 == d).count();
                if c.truncated_days.contains(&d) {
                    assert!((1..=3).contains(&n));
                } else {
                    assert_eq!(n, 3);
                }
            }
            if c.truncated_days.is_empty() {
                assert_eq!(c.trips.len(), 24);
                full_chains += 1;
            }
        }
        assert!(full_chains > 10);
    }

    #[test]
    fn identity_on_home_stays_home() {
        let net = grid(3, &mut ChaCha8Rng::seed_from_u64(1));
        let mut m = PlaceModel::default();
        for day in [&mut m.weekday, &mut m.weekend] {
            day.transitions = [(HOME.to_string(), row(&[(HOME, 1.0)]))].into_iter().collect();
        }
        let r = m.resolve(&net).unwrap();
        let home = EdgeId(4);
        let c = generate_chain(0, home, 0, 2, &m, &r, &mut ChaCha8Rng::seed_from_u64(3));
        assert!(c.trips.iter().all(|t| t.origin == home && t.dest == home));
    }

    #[test]
    fn rows_must_sum_to_one() {
        let net = grid(3, &mut ChaCha8Rng::seed_from_u64(1));
        let mut m = PlaceModel::default();
        m.places.insert("work".into(), vec![net.edges()[0].id.clone()]);
        m.places.insert("other".into(), vec![net.edges()[1].id.clone()]);
        m.resolve(&net).unwrap();
        m.weekday.transitions.get_mut(HOME).unwrap().insert("work".into(), 0.8);
        assert!(matches!(m.resolve(&net), Err(TripError::BadRow(..))));
    }

    #[test]
    fn overflow_truncates_and_still_closes() {
        let net = grid(3, &mut ChaCha8Rng::seed_from_u64(1));
        let mut m = PlaceModel::default();
        m.places.insert("work".into(), vec![net.edges()[0].id.clone()]);
        m.places.insert("other".into(), vec![net.edges()[1].id.clone()]);
        m.intervals.insert(
            "work".into(),
            Interval {
                mean_s: 30.0 * 3600.0,
                std_s: 0.0,
            },
        );
        let r = m.resolve(&net).unwrap();
        let c = generate_chain(0, EdgeId(5), 0, 3, &m, &r, &mut ChaCha8Rng::seed_from_u64(4));
        c.check().unwrap();
        assert!(!c.truncated_days.is_empty());
        for t in &c.trips {
            let d = (t.t / DAY_S).floor();
            assert!(t.t < (d + 1.0) * DAY_S);
        }
    }

    #[test]
    fn weekend_days() {
        let kinds: Vec<DayType> = (0..8).map(DayType::of_day).collect();
        assert_eq!(kinds[4], DayType::Weekday);
        assert_eq!(kinds[5], DayType::Weekend);
        assert_eq!(kinds[6], DayType::Weekend);
        assert_eq!(kinds[7], DayType::Weekday);
        assert_eq!(DayType::of_day(-1), DayType::Weekend);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn chains_are_closed_monotone_and_reproducible(seed in 0u64..10_000, days in 1usize..9, home in 0u32..24) {
            let net = grid(3, &mut ChaCha8Rng::seed_from_u64(1));
            let (m, r) = {
                let mut m = PlaceModel::default();
                let ids: Vec<String> = net.edges().iter().map(|e| e.id.clone()).collect();
                m.places.insert("work".into(), ids[..3].to_vec());
                m.places.insert("other".into(), ids[3..12].to_vec());
                let r = m.resolve(&net).unwrap();
                (m, r)
            };
            let a = generate_chain(1, EdgeId(home), 0, days, &m, &r, &mut ChaCha8Rng::seed_from_u64(seed));
            let b = generate_chain(1, EdgeId(home), 0, days, &m, &r, &mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert!(a.check().is_ok());
            prop_assert_eq!(&a, &b);
            prop_assert!(a.trips.iter().all(|t| t.origin.index() < net.edge_count() && t.dest.index() < net.edge_count()));
        }
    }
}
