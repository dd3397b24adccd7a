//! Vehicle-to-grid offers, allocation and discharge.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ev::ElectricVehicle;
use crate::stations::{ChargingStation, StationKind};
use crate::tripgen::DAY_S;

#[derive(Debug, Error, PartialEq)]
pub enum V2gError {
    #[error("dispatch {requested} kW exceeds offered capacity {capacity} kW at {station}")]
    CapacityExceeded {
        station: String,
        requested: f64,
        capacity: f64,
    },
    #[error("strategy {0} returned an invalid allocation: {1}")]
    BadAllocation(String, String),
    #[error("invalid window: {0}")]
    BadWindow(String),
    #[error("unknown V2G strategy {0}")]
    UnknownStrategy(String),
}

const TOL: f64 = 1e-9;

/// Daily intervals `[start, end)` in seconds after midnight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct V2gWindow {
    pub intervals: Vec<(f64, f64)>,
}

impl Default for V2gWindow {
    fn default() -> Self {
        Self {
            intervals: vec![(8.0 * 3600.0, 10.0 * 3600.0), (13.0 * 3600.0, 16.0 * 3600.0)],
        }
    }
}

impl V2gWindow {
    pub fn never() -> Self {
        Self { intervals: vec![] }
    }

    pub fn validate(&self) -> Result<(), V2gError> {
        let mut sorted = self.intervals.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        for &(s, e) in &sorted {
            if !(0.0..DAY_S).contains(&s) || !(s < e && e <= DAY_S) {
                return Err(V2gError::BadWindow(format!("[{s}, {e}) is not inside one day")));
            }
        }
        for w in sorted.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(V2gError::BadWindow(format!("[{}, {}) overlaps [{}, {})", w[0].0, w[0].1, w[1].0, w[1].1)));
            }
        }
        Ok(())
    }

    pub fn contains(&self, t: f64) -> bool {
        let tod = t.rem_euclid(DAY_S);
        self.intervals.iter().any(|&(s, e)| tod >= s && tod < e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct V2gOffer {
    pub station: String,
    pub capacity_kw: f64,
    /// (vehicle, V2G power kW)
    pub participants: Vec<(u32, f64)>,
}

/// Capacity of a V2G-enabled slow station at time `t`: the V2G power of every
/// piled vehicle at or above its floor, or nothing outside the window.
pub fn station_capacity(st: &ChargingStation, evs: &[ElectricVehicle], window: &V2gWindow, t: f64) -> V2gOffer {
    let mut offer = V2gOffer {
        station: st.id.clone(),
        capacity_kw: 0.0,
        participants: vec![],
    };
    if st.kind != StationKind::Scs || !st.v2g || !st.online || !window.contains(t) {
        return offer;
    }
    for &id in st.occupants() {
        let ev = &evs[id as usize];
        if ev.v2g_eligible() {
            offer.participants.push((id, ev.proto.v2g_kw));
        }
    }
    offer.capacity_kw = offer.participants.iter().map(|p| p.1).sum();
    offer
}

/// Splits a dispatched station power across the offer's participants.
pub trait V2gStrategy: Send + Sync {
    fn name(&self) -> &str;
    fn allocate(&self, offer: &V2gOffer, p_vcr: f64) -> Vec<(u32, f64)>;
}

/// Each vehicle outputs its V2G power scaled by `p_vcr / P_vc`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Proportional;

impl V2gStrategy for Proportional {
    fn name(&self) -> &str {
        "proportional"
    }

    fn allocate(&self, offer: &V2gOffer, p_vcr: f64) -> Vec<(u32, f64)> {
        if offer.capacity_kw <= 0.0 {
            return offer.participants.iter().map(|&(id, _)| (id, 0.0)).collect();
        }
        let ratio = (p_vcr / offer.capacity_kw).clamp(0.0, 1.0);
        offer.participants.iter().map(|&(id, pv)| (id, pv * ratio)).collect()
    }
}

/// Fills vehicles one at a time in offer order.
#[derive(Debug, Clone, Copy, Default)]
pub struct FillInOrder;

impl V2gStrategy for FillInOrder {
    fn name(&self) -> &str {
        "fill"
    }

    fn allocate(&self, offer: &V2gOffer, p_vcr: f64) -> Vec<(u32, f64)> {
        let mut left = p_vcr.max(0.0);
        offer
            .participants
            .iter()
            .map(|&(id, pv)| {
                let take = pv.min(left);
                left -= take;
                (id, take)
            })
            .collect()
    }
}

pub fn strategy_by_name(name: &str) -> Result<Box<dyn V2gStrategy>, V2gError> {
    match name {
        "proportional" | "equal" => Ok(Box::new(Proportional)),
        "fill" => Ok(Box::new(FillInOrder)),
        other => Err(V2gError::UnknownStrategy(other.into())),
    }
}

/// Run `strategy` and check its output against the offer.
pub fn allocate(offer: &V2gOffer, p_vcr: f64, strategy: &dyn V2gStrategy) -> Result<Vec<(u32, f64)>, V2gError> {
    if p_vcr > offer.capacity_kw + TOL || p_vcr < -TOL {
        return Err(V2gError::CapacityExceeded {
            station: offer.station.clone(),
            requested: p_vcr,
            capacity: offer.capacity_kw,
        });
    }
    let p_vcr = p_vcr.clamp(0.0, offer.capacity_kw);
    let alloc = strategy.allocate(offer, p_vcr);
    let bad = |m: String| Err(V2gError::BadAllocation(strategy.name().into(), m));
    if alloc.len() != offer.participants.len() {
        return bad(format!("{} entries for {} participants", alloc.len(), offer.participants.len()));
    }
    for (&(id, p), &(pid, pv)) in alloc.iter().zip(&offer.participants) {
        if id != pid {
            return bad(format!("vehicle {id} out of order"));
        }
        if p < -TOL || p > pv + TOL {
            return bad(format!("vehicle {id} given {p} kW of {pv} kW"));
        }
    }
    let sum: f64 = alloc.iter().map(|a| a.1).sum();
    if (sum - p_vcr).abs() > TOL {
        return bad(format!("allocations sum to {sum} kW, expected {p_vcr} kW"));
    }
    Ok(alloc)
}

/// Largest average grid-side power a vehicle can sustain for `dt` seconds.
pub fn sustainable_kw(ev: &ElectricVehicle, dt: f64) -> f64 {
    (ev.stored_kwh() * ev.proto.discharge_eff * 3600.0 / dt).min(ev.proto.v2g_kw)
}

/// Clip allocations to what each battery can sustain over the interval and
/// spread the clipped remainder once over vehicles with headroom. Returns the
/// power that could not be placed.
pub fn clip_to_energy(evs: &[ElectricVehicle], alloc: &mut [(u32, f64)], dt: f64) -> f64 {
    let limit: Vec<f64> = alloc.iter().map(|&(id, _)| sustainable_kw(&evs[id as usize], dt)).collect();
    let mut residual = 0.0;
    for (a, &lim) in alloc.iter_mut().zip(&limit) {
        if a.1 > lim {
            residual += a.1 - lim;
            a.1 = lim;
        }
    }
    if residual <= 0.0 {
        return 0.0;
    }
    let headroom: f64 = alloc.iter().zip(&limit).map(|(a, &l)| l - a.1).sum();
    if headroom <= 0.0 {
        return residual;
    }
    let share = (residual / headroom).min(1.0);
    for (a, &lim) in alloc.iter_mut().zip(&limit) {
        a.1 += (lim - a.1) * share;
    }
    residual - share * headroom
}

/// Discharge each allocated vehicle for `dt` seconds. Returns grid-side kWh
/// per vehicle.
pub fn apply_discharge(evs: &mut [ElectricVehicle], alloc: &[(u32, f64)], dt: f64) -> Vec<(u32, f64)> {
    alloc
        .iter()
        .filter(|a| a.1 > 0.0)
        .map(|&(id, kw)| (id, evs[id as usize].discharge(kw, dt)))
        .collect()
}
