//! Electric vehicle model: battery, constant per-meter consumption, segmented
//! charging power, V2G parameters and behavioral coefficients.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::EdgeId;

/// SoC above which the default charging curve tapers linearly.
pub const TAPER_SOC: f64 = 0.8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvError {
    #[error("prototype {0}: {1} must be strictly positive")]
    NonPositive(String, &'static str),
    #[error("prototype {0}: efficiency must lie in (0, 1]")]
    BadEfficiency(String),
    #[error("prototype {0}: charging curve needs at least two points sorted by soc in [0, 1]")]
    BadCurve(String),
    #[error("unknown prototype {0}")]
    UnknownPrototype(String),
}

fn default_eff() -> f64 {
    0.95
}
fn default_v2g_kw() -> f64 {
    20.0
}
fn default_accel() -> f64 {
    2.6
}
fn default_decel() -> f64 {
    4.5
}
fn default_length() -> f64 {
    5.0
}
fn default_vmax() -> f64 {
    33.33
}

/// Static vehicle parameters shared by every EV built from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvPrototype {
    pub id: String,
    pub battery_kwh: f64,
    /// Consumption in Wh per meter, as listed in prototype tables.
    pub discharge_wh_per_m: f64,
    pub fast_charge_kw: f64,
    pub slow_charge_kw: f64,
    #[serde(default = "default_v2g_kw")]
    pub v2g_kw: f64,
    #[serde(default = "default_eff")]
    pub charge_eff: f64,
    #[serde(default = "default_eff")]
    pub discharge_eff: f64,
    #[serde(default = "default_accel")]
    pub accel: f64,
    #[serde(default = "default_decel")]
    pub decel: f64,
    #[serde(default = "default_length")]
    pub length: f64,
    #[serde(default = "default_vmax")]
    pub v_max: f64,
    /// Optional (soc, power multiplier) table replacing the default curve.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub charge_curve: Option<Vec<(f64, f64)>>,
}

impl EvPrototype {
    pub fn new(id: &str, battery_kwh: f64, wh_per_m: f64, fast_kw: f64, slow_kw: f64) -> Self {
        Self {
            id: id.to_string(),
            battery_kwh,
            discharge_wh_per_m: wh_per_m,
            fast_charge_kw: fast_kw,
            slow_charge_kw: slow_kw,
            v2g_kw: default_v2g_kw(),
            charge_eff: default_eff(),
            discharge_eff: default_eff(),
            accel: default_accel(),
            decel: default_decel(),
            length: default_length(),
            v_max: default_vmax(),
            charge_curve: None,
        }
    }

    /// The six standard prototypes (capacity kWh, Wh/m, fast kW, slow kW).
    pub fn standard_set() -> Vec<EvPrototype> {
        vec![
            Self::new("P1", 100.0, 0.159, 200.0, 5.98),
            Self::new("P2", 55.9, 0.151, 60.0, 7.0),
            Self::new("P3", 84.0, 0.210, 7.0, 7.0),
            Self::new("P4", 76.8, 0.171, 100.0, 7.0),
            Self::new("P5", 90.3, 0.181, 60.0, 7.0),
            Self::new("P6", 100.0, 0.196, 100.0, 7.0),
        ]
    }

    /// kWh consumed per meter driven.
    pub fn kwh_per_m(&self) -> f64 {
        self.discharge_wh_per_m / 1000.0
    }

    pub fn validate(&self) -> Result<(), EvError> {
        let positive = [
            (self.battery_kwh, "battery capacity"),
            (self.discharge_wh_per_m, "discharge rate"),
            (self.fast_charge_kw, "fast charging power"),
            (self.slow_charge_kw, "slow charging power"),
            (self.v2g_kw, "V2G power"),
            (self.accel, "acceleration"),
            (self.decel, "deceleration"),
            (self.length, "length"),
            (self.v_max, "maximum speed"),
        ];
        for (value, name) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(EvError::NonPositive(self.id.clone(), name));
            }
        }
        for eff in [self.charge_eff, self.discharge_eff] {
            if !(eff > 0.0 && eff <= 1.0) {
                return Err(EvError::BadEfficiency(self.id.clone()));
            }
        }
        if let Some(curve) = &self.charge_curve {
            let sorted = curve.windows(2).all(|w| w[0].0 < w[1].0);
            let in_range = curve
                .iter()
                .all(|(s, m)| (0.0..=1.0).contains(s) && *m >= 0.0 && m.is_finite());
            if curve.len() < 2 || !sorted || !in_range {
                return Err(EvError::BadCurve(self.id.clone()));
            }
        }
        Ok(())
    }

    /// Power multiplier applied to the nominal charging power at `soc`.
    pub fn curve_factor(&self, soc: f64) -> f64 {
        match &self.charge_curve {
            None => {
                if soc < TAPER_SOC {
                    1.0
                } else {
                    3.4 - 3.0 * soc
                }
            }
            Some(points) => interpolate(points, soc),
        }
    }
}

fn interpolate(points: &[(f64, f64)], x: f64) -> f64 {
    let first = points[0];
    let last = points[points.len() - 1];
    if x <= first.0 {
        return first.1;
    }
    if x >= last.0 {
        return last.1;
    }
    let i = points.partition_point(|p| p.0 <= x);
    let (x0, y0) = points[i - 1];
    let (x1, y1) = points[i];
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChargeMode {
    Fast,
    Slow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
pub enum EvStatus {
    Driving,
    Parking,
    ChargingFast,
    ChargingSlow,
    Queued,
    LowBattery,
}

/// Per-vehicle behavioral coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    /// Value of time, $/hour.
    pub omega: f64,
    /// Reachability safety factor.
    pub k_r: f64,
    /// SoC below which the driver slow-charges on arrival.
    pub k_s: f64,
    /// SoC below which the driver detours to a fast station (threshold strategy).
    pub k_f: f64,
    /// SoC floor for V2G participation.
    pub k_v: f64,
}

/// Uniform sampling ranges for [`Coefficients`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRanges {
    pub omega: (f64, f64),
    pub k_r: (f64, f64),
    pub k_s: (f64, f64),
    pub k_f: (f64, f64),
    pub k_v: (f64, f64),
}

impl Default for CoefficientRanges {
    fn default() -> Self {
        Self {
            omega: (5.0, 10.0),
            k_r: (1.0, 1.2),
            k_s: (0.4, 0.6),
            k_f: (0.2, 0.25),
            k_v: (0.65, 0.75),
        }
    }
}

impl CoefficientRanges {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Coefficients {
        let mut u = |(lo, hi): (f64, f64)| if hi > lo { rng.gen_range(lo..hi) } else { lo };
        Coefficients {
            omega: u(self.omega),
            k_r: u(self.k_r),
            k_s: u(self.k_s),
            k_f: u(self.k_f),
            k_v: u(self.k_v),
        }
    }
}

/// Result of driving a distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Consumption {
    /// Energy actually drawn from the battery, kWh.
    pub energy_kwh: f64,
    /// The battery hit zero before the distance was covered.
    pub depleted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElectricVehicle {
    pub id: String,
    pub proto: Arc<EvPrototype>,
    soc: f64,
    pub coef: Coefficients,
    pub status: EvStatus,
    /// Edge the vehicle is on or parked at.
    pub edge: EdgeId,
}

impl ElectricVehicle {
    pub fn new(id: impl Into<String>, proto: Arc<EvPrototype>, soc: f64, coef: Coefficients, edge: EdgeId) -> Self {
        Self {
            id: id.into(),
            proto,
            soc: soc.clamp(0.0, 1.0),
            coef,
            status: EvStatus::Parking,
            edge,
        }
    }

    #[inline]
    pub fn soc(&self) -> f64 {
        self.soc
    }

    pub fn set_soc(&mut self, soc: f64) {
        self.soc = soc.clamp(0.0, 1.0);
    }

    pub fn capacity_kwh(&self) -> f64 {
        self.proto.battery_kwh
    }

    pub fn stored_kwh(&self) -> f64 {
        self.soc * self.proto.battery_kwh
    }

    /// Remaining driving range in meters.
    pub fn range_m(&self) -> f64 {
        self.stored_kwh() / self.proto.kwh_per_m()
    }

    /// Grid-side charging power at the current SoC.
    pub fn charging_power(&self, mode: ChargeMode) -> f64 {
        let p0 = match mode {
            ChargeMode::Fast => self.proto.fast_charge_kw,
            ChargeMode::Slow => self.proto.slow_charge_kw,
        };
        p0 * self.proto.curve_factor(self.soc)
    }

    /// Charge for `dt` seconds. Returns the grid-side energy drawn (kWh);
    /// the battery gains that times the charging efficiency, stopping at full.
    pub fn charge(&mut self, mode: ChargeMode, dt: f64) -> f64 {
        let cap = self.proto.battery_kwh;
        let eff = self.proto.charge_eff;
        let mut grid = self.charging_power(mode) * dt / 3600.0;
        let headroom = (1.0 - self.soc) * cap;
        if grid * eff >= headroom {
            grid = headroom / eff;
            self.soc = 1.0;
        } else {
            self.soc = (self.soc + grid * eff / cap).min(1.0);
        }
        grid
    }

    /// Drive `distance` meters.
    pub fn consume(&mut self, distance: f64) -> Consumption {
        let need = distance.max(0.0) * self.proto.kwh_per_m();
        let stored = self.stored_kwh();
        if need >= stored && need > 0.0 {
            self.soc = 0.0;
            Consumption {
                energy_kwh: stored,
                depleted: true,
            }
        } else {
            self.soc = ((stored - need) / self.proto.battery_kwh).max(0.0);
            Consumption {
                energy_kwh: need,
                depleted: false,
            }
        }
    }

    /// Discharge into the grid at `kw` for `dt` seconds. Returns the grid-side
    /// energy delivered (kWh); the battery loses that divided by the
    /// discharge efficiency, never going below empty.
    pub fn discharge(&mut self, kw: f64, dt: f64) -> f64 {
        let eff = self.proto.discharge_eff;
        let stored = self.stored_kwh();
        let loss = (kw.max(0.0) * dt / 3600.0 / eff).min(stored);
        self.soc = ((stored - loss) / self.proto.battery_kwh).max(0.0);
        loss * eff
    }

    /// SoC is at or above the V2G floor. Eligibility never triggers discharge on its own.
    pub fn v2g_eligible(&self) -> bool {
        self.soc >= self.coef.k_v
    }
}
