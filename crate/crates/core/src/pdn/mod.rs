//! Radial distribution network and DistFlow dispatch.
//!
//! Powers are kW/kvar in files and per unit inside the optimizer. Voltages
//! are carried squared (`v = |V|^2`) and line currents as `l = |I|^2`.

pub mod admm;
pub mod ieee33;

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use admm::{AdmmSettings, AdmmStatus, ConeProgram, Csr, WarmStart};

pub const DEFAULT_V2G_PRICE: f64 = 1.0;

#[derive(Debug, Error)]
pub enum PdnError {
    #[error("network is not radial: {0}")]
    NotRadial(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("unknown bus {bus} for station {station}")]
    UnknownBus { station: String, bus: usize },
    #[error("invalid case: {0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    /// Squared voltage limits, pu^2.
    pub v2_min: f64,
    pub v2_max: f64,
    #[serde(default)]
    pub p_kw: f64,
    #[serde(default)]
    pub q_kvar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    /// Series impedance, pu.
    pub r: f64,
    pub x: f64,
    /// Squared current limit, pu^2.
    #[serde(default)]
    pub l_max: Option<f64>,
}

/// Cost rate `alpha P^2 + beta P + gamma` in $/h with `P` in kW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub p_min_kw: f64,
    pub p_max_kw: f64,
    pub q_min_kvar: f64,
    pub q_max_kvar: f64,
}

impl Generator {
    pub fn cost_rate(&self, p_kw: f64) -> f64 {
        self.alpha * p_kw * p_kw + self.beta * p_kw + self.gamma
    }

    pub fn marginal(&self, p_kw: f64) -> f64 {
        2.0 * self.alpha * p_kw + self.beta
    }
}

/// Dispatchable V2G injection offered by one station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct V2gInjection {
    pub station: String,
    pub bus: usize,
    pub cap_kw: f64,
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdnCase {
    pub base_kv: f64,
    pub base_mva: f64,
    pub slack_bus: usize,
    #[serde(default = "one")]
    pub v_slack: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    #[serde(default)]
    pub v2g_stations: Vec<V2gInjection>,
    /// Station id to bus id; entries here override the station file.
    #[serde(default)]
    pub station_bus: BTreeMap<String, usize>,
    #[serde(default = "one")]
    pub station_power_factor: f64,
    #[serde(default = "default_price")]
    pub v2g_price: f64,
}

fn one() -> f64 {
    1.0
}

fn default_price() -> f64 {
    DEFAULT_V2G_PRICE
}

/// Load and V2G capacity of one station for one interval.
#[derive(Debug, Clone, PartialEq)]
pub struct StationLoad {
    pub station: String,
    pub bus: usize,
    pub load_kw: f64,
    /// `None` when the station does not take part in V2G.
    pub v2g_cap_kw: Option<f64>,
}

impl PdnCase {
    pub fn ieee33() -> Self {
        ieee33::case()
    }

    pub fn load(path: &Path) -> Result<Self, PdnError> {
        let case: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        case.validate()?;
        Ok(case)
    }

    pub fn save(&self, path: &Path) -> Result<(), PdnError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn s_base_kw(&self) -> f64 {
        self.base_mva * 1000.0
    }

    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn validate(&self) -> Result<(), PdnError> {
        let bad = |m: String| Err(PdnError::Invalid(m));
        if !(self.base_mva > 0.0 && self.base_kv > 0.0) {
            return bad("base values must be positive".into());
        }
        for b in &self.buses {
            if !(b.v2_min >= 0.0 && b.v2_min <= b.v2_max) {
                return bad(format!("bus {}: need 0 <= v2_min <= v2_max", b.id));
            }
        }
        for l in &self.lines {
            if !(l.r >= 0.0 && l.x >= 0.0) {
                return bad(format!("line {}-{}: negative impedance", l.from, l.to));
            }
            if l.l_max.is_some_and(|m| m < 0.0) {
                return bad(format!("line {}-{}: negative current limit", l.from, l.to));
            }
        }
        for (k, g) in self.generators.iter().enumerate() {
            if self.bus_index(g.bus).is_none() {
                return bad(format!("generator {k} on unknown bus {}", g.bus));
            }
            if g.p_min_kw > g.p_max_kw || g.q_min_kvar > g.q_max_kvar || g.alpha < 0.0 {
                return bad(format!("generator {k}: inconsistent limits or concave cost"));
            }
        }
        for v in &self.v2g_stations {
            if self.bus_index(v.bus).is_none() {
                return Err(PdnError::UnknownBus {
                    station: v.station.clone(),
                    bus: v.bus,
                });
            }
        }
        if !(self.station_power_factor > 0.0 && self.station_power_factor <= 1.0) {
            return bad("station_power_factor must be in (0, 1]".into());
        }
        self.tree().map(|_| ())
    }

    /// Orient the lines away from the slack bus.
    pub fn tree(&self) -> Result<Tree, PdnError> {
        let nb = self.buses.len();
        if self.lines.len() + 1 != nb {
            return Err(PdnError::NotRadial(format!(
                "{} lines for {} buses",
                self.lines.len(),
                nb
            )));
        }
        let root = self
            .bus_index(self.slack_bus)
            .ok_or_else(|| PdnError::Invalid(format!("slack bus {} not found", self.slack_bus)))?;
        let mut adj = vec![Vec::new(); nb];
        for (k, l) in self.lines.iter().enumerate() {
            let (a, b) = match (self.bus_index(l.from), self.bus_index(l.to)) {
                (Some(a), Some(b)) if a != b => (a, b),
                _ => return Err(PdnError::Invalid(format!("line {}-{} has a bad endpoint", l.from, l.to))),
            };
            adj[a].push((b, k));
            adj[b].push((a, k));
        }
        let mut parent_line = vec![None; nb];
        let mut seen = vec![false; nb];
        let mut ends = vec![(0, 0); self.lines.len()];
        let mut order = vec![root];
        let mut queue = VecDeque::from([root]);
        seen[root] = true;
        while let Some(u) = queue.pop_front() {
            for &(w, k) in &adj[u] {
                if !seen[w] {
                    seen[w] = true;
                    parent_line[w] = Some(k);
                    ends[k] = (u, w);
                    order.push(w);
                    queue.push_back(w);
                }
            }
        }
        if let Some(b) = seen.iter().position(|s| !s) {
            return Err(PdnError::NotRadial(format!("bus {} is not connected", self.buses[b].id)));
        }
        let mut children = vec![Vec::new(); nb];
        for (k, &(p, _)) in ends.iter().enumerate() {
            children[p].push(k);
        }
        Ok(Tree {
            root,
            order,
            ends,
            parent_line,
            children,
        })
    }
}

/// Lines oriented parent to child, buses in breadth-first order.
#[derive(Debug, Clone)]
pub struct Tree {
    pub root: usize,
    pub order: Vec<usize>,
    /// (parent bus, child bus) per line.
    pub ends: Vec<(usize, usize)>,
    pub parent_line: Vec<Option<usize>>,
    pub children: Vec<Vec<usize>>,
}

/// Add station loads and V2G offers to the base case.
pub fn attach_loads(case: &PdnCase, stations: &[StationLoad]) -> Result<PdnCase, PdnError> {
    let mut out = case.clone();
    out.v2g_stations.clear();
    let pf = case.station_power_factor;
    let q_ratio = (1.0 - pf * pf).max(0.0).sqrt() / pf;
    for s in stations {
        let bus = case.station_bus.get(&s.station).copied().unwrap_or(s.bus);
        let idx = case.bus_index(bus).ok_or_else(|| PdnError::UnknownBus {
            station: s.station.clone(),
            bus,
        })?;
        out.buses[idx].p_kw += s.load_kw;
        out.buses[idx].q_kvar += s.load_kw * q_ratio;
        if let Some(cap) = s.v2g_cap_kw {
            out.v2g_stations.push(V2gInjection {
                station: s.station.clone(),
                bus,
                cap_kw: cap.max(0.0),
                price: case.v2g_price,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Conic,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PdnSolution {
    pub method: Method,
    /// Line flows in the direction away from the slack bus, pu, in case order.
    pub p_line: Vec<f64>,
    pub q_line: Vec<f64>,
    pub l_line: Vec<f64>,
    /// Squared bus voltages, pu^2, in case order.
    pub v: Vec<f64>,
    pub gen_p_kw: Vec<f64>,
    pub gen_q_kvar: Vec<f64>,
    /// Dispatched V2G power per entry of `case.v2g_stations`.
    pub v2g_kw: Vec<f64>,
    /// Generation plus V2G purchase cost, $/h.
    pub objective: f64,
    /// max |P^2 + Q^2 - l v| of the relaxation before polishing.
    pub cone_gap: f64,
    pub iterations: usize,
    pub polished: bool,
}

impl PdnSolution {
    pub fn voltage_pu(&self) -> Vec<f64> {
        self.v.iter().map(|v| v.sqrt()).collect()
    }
}

/// Largest violations of the DistFlow constraints for a solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    pub balance: f64,
    pub voltage_drop: f64,
    /// max(P^2 + Q^2 - l v_parent, 0)
    pub cone: f64,
    pub bounds: f64,
}

/// Evaluate every constraint family; `linear` drops the loss terms.
pub fn residuals(case: &PdnCase, sol: &PdnSolution, linear: bool) -> Result<Residuals, PdnError> {
    let tree = case.tree()?;
    let s = case.s_base_kw();
    let nb = case.buses.len();
    let keep = if linear { 0.0 } else { 1.0 };
    let mut inj_p: Vec<f64> = case.buses.iter().map(|b| -b.p_kw / s).collect();
    let mut inj_q: Vec<f64> = case.buses.iter().map(|b| -b.q_kvar / s).collect();
    let mut bounds: f64 = 0.0;
    for (k, g) in case.generators.iter().enumerate() {
        let b = case.bus_index(g.bus).unwrap();
        inj_p[b] += sol.gen_p_kw[k] / s;
        inj_q[b] += sol.gen_q_kvar[k] / s;
        bounds = bounds
            .max((g.p_min_kw - sol.gen_p_kw[k]) / s)
            .max((sol.gen_p_kw[k] - g.p_max_kw) / s)
            .max((g.q_min_kvar - sol.gen_q_kvar[k]) / s)
            .max((sol.gen_q_kvar[k] - g.q_max_kvar) / s);
    }
    for (k, v) in case.v2g_stations.iter().enumerate() {
        let b = case.bus_index(v.bus).unwrap();
        inj_p[b] += sol.v2g_kw[k] / s;
        bounds = bounds.max(-sol.v2g_kw[k] / s).max((sol.v2g_kw[k] - v.cap_kw) / s);
    }
    let mut balance: f64 = 0.0;
    let mut drop: f64 = 0.0;
    let mut cone: f64 = 0.0;
    for b in 0..nb {
        let (mut fp, mut fq) = (inj_p[b], inj_q[b]);
        if let Some(k) = tree.parent_line[b] {
            let l = &case.lines[k];
            fp += sol.p_line[k] - keep * l.r * sol.l_line[k];
            fq += sol.q_line[k] - keep * l.x * sol.l_line[k];
        }
        for &k in &tree.children[b] {
            fp -= sol.p_line[k];
            fq -= sol.q_line[k];
        }
        balance = balance.max(fp.abs()).max(fq.abs());
        let bus = &case.buses[b];
        bounds = bounds.max(bus.v2_min - sol.v[b]).max(sol.v[b] - bus.v2_max);
    }
    for (k, &(i, j)) in tree.ends.iter().enumerate() {
        let l = &case.lines[k];
        let (p, q, ll) = (sol.p_line[k], sol.q_line[k], sol.l_line[k]);
        let d = sol.v[j] - sol.v[i] + 2.0 * (l.r * p + l.x * q) - keep * (l.r * l.r + l.x * l.x) * ll;
        drop = drop.max(d.abs());
        if !linear {
            cone = cone.max(p * p + q * q - ll * sol.v[i]);
        }
        bounds = bounds.max(-ll);
        if let Some(m) = l.l_max {
            bounds = bounds.max(ll - m);
        }
    }
    Ok(Residuals {
        balance,
        voltage_drop: drop,
        cone,
        bounds,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    pub admm: AdmmSettings,
    /// Re-run an exact power flow on the dispatch found by the relaxation.
    pub polish: bool,
    /// Tolerance used when accepting a polished point or naming violations.
    pub feas_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            admm: AdmmSettings::default(),
            polish: true,
            feas_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum RowKind {
    BalanceP(usize),
    BalanceQ(usize),
    Drop(usize),
    Voltage(usize),
    Current(usize),
    GenP(usize),
    GenQ(usize),
    V2g(usize),
    Cone(usize),
}

/// The optimization problem for one case, in per unit.
struct Model {
    tree: Tree,
    prog: ConeProgram,
    kinds: Vec<RowKind>,
    /// V2G groups: (bus index, total cap pu, member entries)
    groups: Vec<(usize, f64, Vec<usize>)>,
    nl: usize,
    nb: usize,
    ng: usize,
}

impl Model {
    fn p(&self, k: usize) -> usize {
        k
    }
    fn q(&self, k: usize) -> usize {
        self.nl + k
    }
    fn l(&self, k: usize) -> usize {
        2 * self.nl + k
    }
    fn v(&self, b: usize) -> usize {
        3 * self.nl + b
    }
    fn pg(&self, g: usize) -> usize {
        3 * self.nl + self.nb + g
    }
    fn qg(&self, g: usize) -> usize {
        3 * self.nl + self.nb + self.ng + g
    }
    fn pv(&self, k: usize) -> usize {
        3 * self.nl + self.nb + 2 * self.ng + k
    }

    fn build(case: &PdnCase, linear: bool) -> Result<Self, PdnError> {
        case.validate()?;
        let tree = case.tree()?;
        let s = case.s_base_kw();
        let (nl, nb, ng) = (case.lines.len(), case.buses.len(), case.generators.len());

        let mut groups: Vec<(usize, f64, Vec<usize>)> = Vec::new();
        for (k, inj) in case.v2g_stations.iter().enumerate() {
            let b = case.bus_index(inj.bus).unwrap();
            match groups.iter_mut().find(|g| g.0 == b && case.v2g_stations[g.2[0]].price == inj.price) {
                Some(g) => {
                    g.1 += inj.cap_kw / s;
                    g.2.push(k);
                }
                None => groups.push((b, inj.cap_kw / s, vec![k])),
            }
        }
        let mut m = Model {
            tree,
            prog: ConeProgram {
                p_diag: vec![],
                q: vec![],
                a: Csr::default(),
                lo: vec![],
                hi: vec![],
                cones: vec![],
            },
            kinds: vec![],
            groups,
            nl,
            nb,
            ng,
        };
        let n = 3 * nl + nb + 2 * ng + m.groups.len();

        let scale = case
            .generators
            .iter()
            .flat_map(|g| [2.0 * g.alpha * s * s, g.beta * s])
            .chain(case.v2g_stations.iter().map(|v| v.price * s))
            .fold(1e-12, f64::max);
        let mut p_diag = vec![0.0; n];
        let mut q = vec![0.0; n];
        for (k, g) in case.generators.iter().enumerate() {
            p_diag[m.pg(k)] = 2.0 * g.alpha * s * s / scale;
            q[m.pg(k)] = g.beta * s / scale;
        }
        for (k, grp) in m.groups.iter().enumerate() {
            q[m.pv(k)] = case.v2g_stations[grp.2[0]].price * s / scale;
        }

        let mut t = Vec::new();
        let (mut lo, mut hi, mut kinds) = (Vec::new(), Vec::new(), Vec::new());
        let mut row = |entries: &[(usize, f64)], l: f64, h: f64, kind: RowKind, t: &mut Vec<_>| {
            let r = lo.len();
            for &(c, v) in entries {
                t.push((r, c, v));
            }
            lo.push(l);
            hi.push(h);
            kinds.push(kind);
            r
        };
        let keep = if linear { 0.0 } else { 1.0 };
        for b in 0..nb {
            let mut ep = Vec::new();
            let mut eq = Vec::new();
            if let Some(k) = m.tree.parent_line[b] {
                let line = &case.lines[k];
                ep.push((m.p(k), 1.0));
                eq.push((m.q(k), 1.0));
                if !linear {
                    ep.push((m.l(k), -line.r));
                    eq.push((m.l(k), -line.x));
                }
            }
            for &k in &m.tree.children[b] {
                ep.push((m.p(k), -1.0));
                eq.push((m.q(k), -1.0));
            }
            for (g, gen) in case.generators.iter().enumerate() {
                if case.bus_index(gen.bus) == Some(b) {
                    ep.push((m.pg(g), 1.0));
                    eq.push((m.qg(g), 1.0));
                }
            }
            for (k, grp) in m.groups.iter().enumerate() {
                if grp.0 == b {
                    ep.push((m.pv(k), 1.0));
                }
            }
            let (pd, qd) = (case.buses[b].p_kw / s, case.buses[b].q_kvar / s);
            row(&ep, pd, pd, RowKind::BalanceP(b), &mut t);
            row(&eq, qd, qd, RowKind::BalanceQ(b), &mut t);
        }
        for (k, &(i, j)) in m.tree.ends.iter().enumerate() {
            let line = &case.lines[k];
            let mut e = vec![(m.v(j), 1.0), (m.v(i), -1.0), (m.p(k), 2.0 * line.r), (m.q(k), 2.0 * line.x)];
            if !linear {
                e.push((m.l(k), -keep * (line.r * line.r + line.x * line.x)));
            }
            row(&e, 0.0, 0.0, RowKind::Drop(k), &mut t);
        }
        for b in 0..nb {
            let (l, h) = if b == m.tree.root {
                let v0 = case.v_slack * case.v_slack;
                (v0, v0)
            } else {
                (case.buses[b].v2_min, case.buses[b].v2_max)
            };
            row(&[(m.v(b), 1.0)], l, h, RowKind::Voltage(b), &mut t);
        }
        for (k, line) in case.lines.iter().enumerate() {
            let h = if linear { 0.0 } else { line.l_max.unwrap_or(f64::INFINITY) };
            row(&[(m.l(k), 1.0)], 0.0, h, RowKind::Current(k), &mut t);
        }
        for (g, gen) in case.generators.iter().enumerate() {
            row(&[(m.pg(g), 1.0)], gen.p_min_kw / s, gen.p_max_kw / s, RowKind::GenP(g), &mut t);
            row(&[(m.qg(g), 1.0)], gen.q_min_kvar / s, gen.q_max_kvar / s, RowKind::GenQ(g), &mut t);
        }
        for k in 0..m.groups.len() {
            row(&[(m.pv(k), 1.0)], 0.0, m.groups[k].1, RowKind::V2g(k), &mut t);
        }
        let mut cones = Vec::new();
        if !linear {
            for (k, &(i, _)) in m.tree.ends.iter().enumerate() {
                let (pk, qk, lk, vi) = (m.p(k), m.q(k), m.l(k), m.v(i));
                let inf = f64::INFINITY;
                let start = row(&[(lk, 1.0), (vi, 1.0)], -inf, inf, RowKind::Cone(k), &mut t);
                row(&[(pk, 2.0)], -inf, inf, RowKind::Cone(k), &mut t);
                row(&[(qk, 2.0)], -inf, inf, RowKind::Cone(k), &mut t);
                row(&[(lk, 1.0), (vi, -1.0)], -inf, inf, RowKind::Cone(k), &mut t);
                cones.push((start, 4));
            }
        }
        m.prog = ConeProgram {
            p_diag,
            q,
            a: Csr::from_triplets(lo.len(), n, t),
            lo,
            hi,
            cones,
        };
        m.kinds = kinds;
        Ok(m)
    }

    fn describe(&self, case: &PdnCase, kind: RowKind) -> String {
        let bus = |b: usize| case.buses[b].id;
        let line = |k: usize| format!("{}-{}", case.lines[k].from, case.lines[k].to);
        match kind {
            RowKind::BalanceP(b) => format!("active power balance at bus {}", bus(b)),
            RowKind::BalanceQ(b) => format!("reactive power balance at bus {}", bus(b)),
            RowKind::Drop(k) => format!("voltage drop on line {}", line(k)),
            RowKind::Voltage(b) => format!("voltage limit at bus {}", bus(b)),
            RowKind::Current(k) => format!("current limit on line {}", line(k)),
            RowKind::GenP(g) => format!("active limit of generator {g} (bus {})", case.generators[g].bus),
            RowKind::GenQ(g) => format!("reactive limit of generator {g} (bus {})", case.generators[g].bus),
            RowKind::V2g(k) => format!("V2G capacity at bus {}", bus(self.groups[k].0)),
            RowKind::Cone(k) => format!("cone constraint on line {}", line(k)),
        }
    }

    /// Name the row whose bound the final iterate misses the most.
    fn worst_row(&self, case: &PdnCase, x: &[f64]) -> String {
        let mut ax = vec![0.0; self.prog.m()];
        self.prog.a.mul(x, &mut ax);
        let mut worst = (0.0, None);
        for (i, &v) in ax.iter().enumerate() {
            if matches!(self.kinds[i], RowKind::Cone(_)) {
                continue;
            }
            let viol = (self.prog.lo[i] - v).max(v - self.prog.hi[i]);
            if viol > worst.0 {
                worst = (viol, Some(i));
            }
        }
        match worst.1 {
            Some(i) => format!("{} (off by {:.3e} pu)", self.describe(case, self.kinds[i]), worst.0),
            None => "no convergence".into(),
        }
    }

    fn extract(&self, case: &PdnCase, x: &[f64], method: Method, iterations: usize) -> PdnSolution {
        let s = case.s_base_kw();
        let mut v2g_kw = vec![0.0; case.v2g_stations.len()];
        for (k, (_, cap, members)) in self.groups.iter().enumerate() {
            let total = x[self.pv(k)].clamp(0.0, *cap);
            for &e in members {
                let share = if *cap > 0.0 { case.v2g_stations[e].cap_kw / s / cap } else { 0.0 };
                v2g_kw[e] = total * share * s;
            }
        }
        let l_line: Vec<f64> = (0..self.nl).map(|k| if method == Method::Linear { 0.0 } else { x[self.l(k)] }).collect();
        let mut sol = PdnSolution {
            method,
            p_line: (0..self.nl).map(|k| x[self.p(k)]).collect(),
            q_line: (0..self.nl).map(|k| x[self.q(k)]).collect(),
            l_line,
            v: (0..self.nb).map(|b| x[self.v(b)]).collect(),
            gen_p_kw: (0..self.ng).map(|g| x[self.pg(g)] * s).collect(),
            gen_q_kvar: (0..self.ng).map(|g| x[self.qg(g)] * s).collect(),
            v2g_kw,
            objective: 0.0,
            cone_gap: 0.0,
            iterations,
            polished: false,
        };
        sol.cone_gap = cone_gap(&self.tree, &sol);
        sol.objective = objective(case, &sol);
        sol
    }
}

fn cone_gap(tree: &Tree, sol: &PdnSolution) -> f64 {
    tree.ends
        .iter()
        .enumerate()
        .map(|(k, &(i, _))| {
            let (p, q) = (sol.p_line[k], sol.q_line[k]);
            (p * p + q * q - sol.l_line[k] * sol.v[i]).abs()
        })
        .fold(0.0, f64::max)
}

pub fn objective(case: &PdnCase, sol: &PdnSolution) -> f64 {
    let gen: f64 = case
        .generators
        .iter()
        .zip(&sol.gen_p_kw)
        .map(|(g, &p)| g.cost_rate(p))
        .sum();
    let v2g: f64 = case.v2g_stations.iter().zip(&sol.v2g_kw).map(|(v, &p)| v.price * p).sum();
    gen + v2g
}

/// Exact power flow for fixed injections; the first generator on the slack
/// bus absorbs the mismatch. Injections are pu, net of load, excluding the
/// slack unit. Returns (P, Q, l, v, slack P, slack Q) in pu.
pub fn sweep(
    case: &PdnCase,
    tree: &Tree,
    inj_p: &[f64],
    inj_q: &[f64],
) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, f64, f64)> {
    let (nl, nb) = (case.lines.len(), case.buses.len());
    let v0 = case.v_slack * case.v_slack;
    let mut v = vec![v0; nb];
    let mut l = vec![0.0; nl];
    let mut p = vec![0.0; nl];
    let mut q = vec![0.0; nl];
    for _ in 0..500 {
        for &b in tree.order.iter().rev() {
            if let Some(k) = tree.parent_line[b] {
                let line = &case.lines[k];
                let mut fp = -inj_p[b] + line.r * l[k];
                let mut fq = -inj_q[b] + line.x * l[k];
                for &c in &tree.children[b] {
                    fp += p[c];
                    fq += q[c];
                }
                p[k] = fp;
                q[k] = fq;
            }
        }
        let mut change: f64 = 0.0;
        for &b in &tree.order {
            if let Some(k) = tree.parent_line[b] {
                let line = &case.lines[k];
                let i = tree.ends[k].0;
                v[b] = v[i] - 2.0 * (line.r * p[k] + line.x * q[k]) + (line.r * line.r + line.x * line.x) * l[k];
                if !(v[b] > 0.0) {
                    return None;
                }
                let nl_k = (p[k] * p[k] + q[k] * q[k]) / v[i];
                change = change.max((nl_k - l[k]).abs());
                l[k] = nl_k;
            }
        }
        if change < 1e-15 {
            let root = tree.root;
            let sp = tree.children[root].iter().map(|&k| p[k]).sum::<f64>() - inj_p[root];
            let sq = tree.children[root].iter().map(|&k| q[k]).sum::<f64>() - inj_q[root];
            return Some((p, q, l, v, sp, sq));
        }
    }
    None
}

/// Keeps warm starts between solves of the same network.
#[derive(Debug, Clone, Default)]
pub struct PdnSolver {
    pub settings: SolverSettings,
    warm_conic: Option<WarmStart>,
    warm_linear: Option<WarmStart>,
}

impl PdnSolver {
    pub fn new(settings: SolverSettings) -> Self {
        Self {
            settings,
            warm_conic: None,
            warm_linear: None,
        }
    }

    fn precheck(case: &PdnCase) -> Result<(), PdnError> {
        let load: f64 = case.buses.iter().map(|b| b.p_kw).sum();
        let cap: f64 = case.generators.iter().map(|g| g.p_max_kw).sum::<f64>()
            + case.v2g_stations.iter().map(|v| v.cap_kw).sum::<f64>();
        if load > cap {
            return Err(PdnError::Infeasible(format!(
                "active load {load:.1} kW exceeds the generator limit total of {cap:.1} kW"
            )));
        }
        Ok(())
    }

    /// Conic relaxation, falling back to the linear model when the iteration
    /// cap is hit.
    pub fn solve(&mut self, case: &PdnCase) -> Result<PdnSolution, PdnError> {
        Self::precheck(case)?;
        let model = Model::build(case, false)?;
        let res = admm::solve(&model.prog, &self.settings.admm, self.warm_conic.as_ref());
        if res.status != AdmmStatus::Solved {
            log::warn!(
                "conic solve hit {} iterations (primal {:.2e}, dual {:.2e}); using the linear model",
                res.iterations,
                res.prim_res,
                res.dual_res
            );
            self.warm_conic = None;
            return self.lin_solve(case).map_err(|e| match e {
                PdnError::Infeasible(m) => PdnError::Infeasible(format!("{m}; conic: {}", model.worst_row(case, &res.x))),
                other => other,
            });
        }
        self.warm_conic = Some(res.warm_start());
        let mut sol = model.extract(case, &res.x, Method::Conic, res.iterations);
        if self.settings.polish {
            if let Some(p) = polish(case, &model.tree, &sol, self.settings.feas_tol) {
                sol = p;
            }
        }
        Ok(sol)
    }

    pub fn lin_solve(&mut self, case: &PdnCase) -> Result<PdnSolution, PdnError> {
        Self::precheck(case)?;
        let model = Model::build(case, true)?;
        let res = admm::solve(&model.prog, &self.settings.admm, self.warm_linear.as_ref());
        if res.status != AdmmStatus::Solved {
            self.warm_linear = None;
            return Err(PdnError::Infeasible(model.worst_row(case, &res.x)));
        }
        self.warm_linear = Some(res.warm_start());
        let sol = model.extract(case, &res.x, Method::Linear, res.iterations);
        let r = residuals(case, &sol, true)?;
        if r.bounds > 1e-4 {
            return Err(PdnError::Infeasible(model.worst_row(case, &res.x)));
        }
        Ok(sol)
    }
}

/// Re-solve the flows exactly for the dispatch in `sol`; keep the result only
/// if every bound still holds.
fn polish(case: &PdnCase, tree: &Tree, sol: &PdnSolution, tol: f64) -> Option<PdnSolution> {
    let s = case.s_base_kw();
    let slack = case.generators.iter().position(|g| g.bus == case.slack_bus)?;
    let mut inj_p: Vec<f64> = case.buses.iter().map(|b| -b.p_kw / s).collect();
    let mut inj_q: Vec<f64> = case.buses.iter().map(|b| -b.q_kvar / s).collect();
    for (k, g) in case.generators.iter().enumerate() {
        if k != slack {
            let b = case.bus_index(g.bus).unwrap();
            inj_p[b] += sol.gen_p_kw[k] / s;
            inj_q[b] += sol.gen_q_kvar[k] / s;
        }
    }
    for (k, v) in case.v2g_stations.iter().enumerate() {
        inj_p[case.bus_index(v.bus).unwrap()] += sol.v2g_kw[k] / s;
    }
    let (p, q, l, v, sp, sq) = sweep(case, tree, &inj_p, &inj_q)?;
    let mut out = sol.clone();
    out.p_line = p;
    out.q_line = q;
    out.l_line = l;
    out.v = v;
    out.gen_p_kw[slack] = sp * s;
    out.gen_q_kvar[slack] = sq * s;
    out.objective = objective(case, &out);
    out.polished = true;
    let r = residuals(case, &out, false).ok()?;
    (r.bounds <= tol).then_some(out)
}

pub fn solve(case: &PdnCase) -> Result<PdnSolution, PdnError> {
    PdnSolver::default().solve(case)
}

pub fn lin_solve(case: &PdnCase) -> Result<PdnSolution, PdnError> {
    PdnSolver::default().lin_solve(case)
}
