//! Discrete-time microscopic traffic kernel.
//!
//! Speeds follow a Krauss-type update against the lane leader. Each lane keeps
//! its vehicles ordered front to back; a vehicle's `pos` is its front bumper
//! and its body occupies `[pos - length, pos]`. Vehicles only see their
//! leader on the current edge, or the tail of the best lane on the next
//! route edge when they lead their lane.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ev::EvPrototype;
use crate::network::{EdgeId, RoadNetwork};

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    /// Traffic step, seconds.
    pub dt: f64,
    /// Driver reaction time, seconds.
    pub reaction_time: f64,
    /// Upper bound of the random speed decrement, m/s.
    pub eta_max: f64,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            dt: 1.0,
            reaction_time: 1.0,
            eta_max: 0.5,
        }
    }
}

/// Safe following speed given the leader speed `v_l`, the gap `gap`, the
/// reaction time `t_r`, the follower speed `v_f` and the deceleration `b`.
pub fn safe_speed(v_l: f64, gap: f64, t_r: f64, v_f: f64, b: f64) -> f64 {
    let denom = (v_l + v_f) / (2.0 * b) + t_r;
    if denom <= 0.0 {
        return v_l;
    }
    (v_l + (gap - v_l * t_r) / denom).max(0.0)
}

/// One speed update: accelerate, respect the limit and the safe speed, then
/// subtract the random decrement.
pub fn step_speed(v: f64, v_max: f64, a: f64, dt: f64, v_safe: f64, eta: f64) -> f64 {
    (v_max.min(v + a * dt).min(v_safe) - eta).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleParams {
    pub accel: f64,
    pub decel: f64,
    pub length: f64,
    pub v_max: f64,
}

impl From<&EvPrototype> for VehicleParams {
    fn from(p: &EvPrototype) -> Self {
        Self {
            accel: p.accel,
            decel: p.decel,
            length: p.length,
            v_max: p.v_max,
        }
    }
}

#[derive(Debug, Clone)]
struct Mover {
    params: VehicleParams,
    route: Vec<EdgeId>,
    leg: usize,
    lane: u32,
    pos: f64,
    speed: f64,
    entered: f64,
    /// Entered the current edge at its start (so its exit time is a full traversal).
    full_edge: bool,
    stamp: u64,
}

impl Mover {
    fn edge(&self) -> EdgeId {
        self.route[self.leg]
    }

    fn rear(&self) -> f64 {
        self.pos - self.params.length
    }
}

/// Snapshot of one vehicle on the road.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub edge: EdgeId,
    pub lane: u32,
    pub pos: f64,
    pub speed: f64,
    pub length: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    /// (vehicle, meters driven this step) for every vehicle that was on the road.
    pub moved: Vec<(u32, f64)>,
    /// Vehicles that reached the end of their route.
    pub arrivals: Vec<u32>,
    /// Completed full edge traversals: (edge, seconds).
    pub edge_exits: Vec<(EdgeId, f64)>,
    pub lane_changes: usize,
}

impl StepReport {
    pub fn is_empty(&self) -> bool {
        self.moved.is_empty() && self.arrivals.is_empty()
    }
}

/// Best insertion lane on `edge`: (lane, rear of its tail vehicle or the
/// edge length if empty, tail speed if any). Ties go to the lower lane.
#[derive(Debug, Clone, Copy)]
struct LaneSlot {
    lane: u32,
    rear: f64,
    tail_speed: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Traffic {
    cfg: StepConfig,
    lanes: Vec<Vec<Vec<u32>>>,
    movers: Vec<Option<Mover>>,
    pending: VecDeque<u32>,
    /// Speed noise is a hash of (key, vehicle, time), so one vehicle's draws
    /// do not depend on who else is on the road.
    noise_key: u64,
    step: u64,
    on_road: usize,
}

impl Traffic {
    pub fn new(net: &RoadNetwork, cfg: StepConfig, mut rng: ChaCha8Rng) -> Self {
        Self {
            cfg,
            lanes: net
                .edges()
                .iter()
                .map(|e| vec![Vec::new(); e.lanes as usize])
                .collect(),
            movers: Vec::new(),
            pending: VecDeque::new(),
            noise_key: rng.gen(),
            step: 0,
            on_road: 0,
        }
    }

    pub fn config(&self) -> &StepConfig {
        &self.cfg
    }

    /// Vehicles on the road plus those waiting to enter it.
    pub fn active_count(&self) -> usize {
        self.on_road + self.pending.len()
    }

    pub fn is_active(&self, vid: u32) -> bool {
        self.movers
            .get(vid as usize)
            .map_or(false, |m| m.is_some())
    }

    /// Queue a vehicle to start driving `route`. It enters the origin edge as
    /// soon as there is room for its body.
    pub fn depart(&mut self, vid: u32, params: VehicleParams, route: Vec<EdgeId>, now: f64) {
        assert!(!route.is_empty(), "route must contain the origin edge");
        let idx = vid as usize;
        if self.movers.len() <= idx {
            self.movers.resize(idx + 1, None);
        }
        assert!(self.movers[idx].is_none(), "vehicle {vid} is already driving");
        self.movers[idx] = Some(Mover {
            params,
            route,
            leg: 0,
            lane: 0,
            pos: f64::NAN,
            speed: 0.0,
            entered: now,
            full_edge: false,
            stamp: 0,
        });
        self.pending.push_back(vid);
    }

    /// Take a vehicle off the road (or out of the departure queue).
    pub fn remove(&mut self, vid: u32) {
        let Some(m) = self.movers.get_mut(vid as usize).and_then(Option::take) else {
            return;
        };
        if m.pos.is_nan() {
            self.pending.retain(|&v| v != vid);
        } else {
            let lane = &mut self.lanes[m.edge().index()][m.lane as usize];
            lane.retain(|&v| v != vid);
            self.on_road -= 1;
        }
    }

    pub fn state(&self, vid: u32) -> Option<VehicleState> {
        let m = self.movers.get(vid as usize)?.as_ref()?;
        if m.pos.is_nan() {
            return None;
        }
        Some(VehicleState {
            edge: m.edge(),
            lane: m.lane,
            pos: m.pos,
            speed: m.speed,
            length: m.params.length,
        })
    }

    /// Remaining route of a driving vehicle, starting at its current edge.
    pub fn remaining_route(&self, vid: u32) -> Option<&[EdgeId]> {
        let m = self.movers.get(vid as usize)?.as_ref()?;
        Some(&m.route[m.leg..])
    }

    /// Vehicle ids on a lane, front to back.
    pub fn lane(&self, edge: EdgeId, lane: u32) -> &[u32] {
        &self.lanes[edge.index()][lane as usize]
    }

    fn mover(&self, vid: u32) -> &Mover {
        self.movers[vid as usize].as_ref().expect("lane entries are live")
    }

    fn mover_mut(&mut self, vid: u32) -> &mut Mover {
        self.movers[vid as usize].as_mut().expect("lane entries are live")
    }

    fn best_slot(&self, net: &RoadNetwork, edge: EdgeId) -> LaneSlot {
        let len = net.edge(edge).length;
        let mut best: Option<LaneSlot> = None;
        for (l, lane) in self.lanes[edge.index()].iter().enumerate() {
            let slot = match lane.last() {
                None => LaneSlot {
                    lane: l as u32,
                    rear: len,
                    tail_speed: None,
                },
                Some(&t) => {
                    let m = self.mover(t);
                    LaneSlot {
                        lane: l as u32,
                        rear: m.rear(),
                        tail_speed: Some(m.speed),
                    }
                }
            };
            if best.map_or(true, |b| slot.rear > b.rear) {
                best = Some(slot);
            }
        }
        best.expect("every edge has at least one lane")
    }

    fn insert_pending(&mut self, net: &RoadNetwork) {
        let mut still_waiting = VecDeque::new();
        while let Some(vid) = self.pending.pop_front() {
            let (edge, length) = {
                let m = self.mover(vid);
                (m.edge(), m.params.length)
            };
            let slot = self.best_slot(net, edge);
            let start = length.min(net.edge(edge).length);
            if slot.rear >= start {
                let m = self.mover_mut(vid);
                m.pos = start;
                m.lane = slot.lane;
                m.speed = 0.0;
                self.lanes[edge.index()][slot.lane as usize].push(vid);
                self.on_road += 1;
            } else {
                still_waiting.push_back(vid);
            }
        }
        self.pending = still_waiting;
    }

    /// Gap-acceptance lane changes toward a lane with more room ahead.
    fn change_lanes(&mut self, net: &RoadNetwork) -> usize {
        let t_r = self.cfg.reaction_time;
        let dt = self.cfg.dt;
        let mut changes = 0;
        for e in 0..self.lanes.len() {
            let n_lanes = self.lanes[e].len();
            if n_lanes < 2 {
                continue;
            }
            let limit = net.edges()[e].speed_limit;
            for l in 0..n_lanes {
                let mut i = 1;
                while i < self.lanes[e][l].len() {
                    let vid = self.lanes[e][l][i];
                    let m = self.mover(vid);
                    if m.stamp == self.step {
                        i += 1;
                        continue;
                    }
                    let (pos, len, v) = (m.pos, m.params.length, m.speed);
                    let desired = m.params.v_max.min(limit).min(v + m.params.accel * dt);
                    let cur_gap = self.mover(self.lanes[e][l][i - 1]).rear() - pos;
                    if cur_gap >= desired * (dt + t_r) {
                        i += 1;
                        continue;
                    }
                    let mut best: Option<(usize, usize, f64)> = None;
                    for target in [l.wrapping_sub(1), l + 1] {
                        if target >= n_lanes {
                            continue;
                        }
                        let lane = &self.lanes[e][target];
                        let idx = lane.partition_point(|&o| self.mover(o).pos > pos);
                        let ahead = if idx > 0 {
                            self.mover(lane[idx - 1]).rear()
                        } else {
                            f64::INFINITY
                        };
                        let behind = if idx < lane.len() {
                            self.mover(lane[idx]).pos
                        } else {
                            f64::NEG_INFINITY
                        };
                        let fits = behind <= pos - len - EPS && ahead >= pos + EPS;
                        let room = ahead - behind >= len + v * t_r;
                        let gap = ahead - pos;
                        if fits && room && gap > cur_gap + len && best.map_or(true, |b| gap > b.2) {
                            best = Some((target, idx, gap));
                        }
                    }
                    if let Some((target, idx, _)) = best {
                        self.lanes[e][l].remove(i);
                        self.lanes[e][target].insert(idx, vid);
                        let step = self.step;
                        let m = self.mover_mut(vid);
                        m.lane = target as u32;
                        m.stamp = step;
                        changes += 1;
                    } else {
                        i += 1;
                    }
                }
            }
        }
        changes
    }

    /// Advance every vehicle by one step starting at time `now`.
    pub fn advance_all(&mut self, net: &RoadNetwork, now: f64) -> StepReport {
        let mut report = StepReport::default();
        if self.active_count() == 0 {
            return report;
        }
        self.step += 1;
        self.insert_pending(net);
        report.lane_changes = self.change_lanes(net);
        // Lane-change stamps only block a second change; movement uses a fresh stamp.
        self.step += 1;

        let dt = self.cfg.dt;
        let t_r = self.cfg.reaction_time;
        let t_end = now + dt;
        for e in 0..self.lanes.len() {
            let edge = &net.edges()[e];
            for l in 0..self.lanes[e].len() {
                if self.lanes[e][l].is_empty() {
                    continue;
                }
                let ids = std::mem::take(&mut self.lanes[e][l]);
                let mut kept = Vec::with_capacity(ids.len());
                // (rear, speed) of the nearest vehicle ahead still on this lane
                let mut ahead: Option<(f64, f64)> = None;
                for vid in ids {
                    let m = self.mover(vid).clone();
                    if m.stamp == self.step {
                        ahead = Some((m.rear(), m.speed));
                        kept.push(vid);
                        continue;
                    }
                    let p = m.params;
                    let v_max = p.v_max.min(edge.speed_limit);
                    let next = m.route.get(m.leg + 1).copied();
                    let (v_safe, reach) = match (ahead, next) {
                        (Some((rear, v_l)), _) => {
                            let gap = (rear - m.pos).max(0.0);
                            (safe_speed(v_l, gap, t_r, m.speed, p.decel), gap)
                        }
                        (None, None) => (f64::INFINITY, edge.length - m.pos),
                        (None, Some(f)) => {
                            let slot = self.best_slot(net, f);
                            let to_end = (edge.length - m.pos).max(0.0);
                            match slot.tail_speed {
                                None => (f64::INFINITY, to_end + slot.rear),
                                Some(v_l) if slot.rear >= 0.0 => {
                                    let gap = to_end + slot.rear;
                                    (safe_speed(v_l, gap, t_r, m.speed, p.decel), gap)
                                }
                                Some(_) => (safe_speed(0.0, to_end, t_r, m.speed, p.decel), to_end),
                            }
                        }
                    };
                    let eta = if self.cfg.eta_max > 0.0 {
                        crate::rng::uniform_at(self.noise_key, vid as u64, now.to_bits()) * self.cfg.eta_max
                    } else {
                        0.0
                    };
                    let mut speed = step_speed(m.speed, v_max, p.accel, dt, v_safe, eta);
                    speed = speed.min(reach.max(0.0) / dt);
                    let mut pos = m.pos + speed * dt;

                    if ahead.is_none() && pos >= edge.length - EPS {
                        match next {
                            None => {
                                report.moved.push((vid, (edge.length - m.pos).max(0.0)));
                                if m.full_edge {
                                    report.edge_exits.push((m.edge(), t_end - m.entered));
                                }
                                report.arrivals.push(vid);
                                self.movers[vid as usize] = None;
                                self.on_road -= 1;
                                continue;
                            }
                            Some(f) => {
                                let overflow = (pos - edge.length).max(0.0);
                                let slot = self.best_slot(net, f);
                                if slot.rear >= 0.0 {
                                    let f_pos = overflow.min(slot.rear).min(net.edge(f).length);
                                    report.moved.push((vid, edge.length - m.pos + f_pos));
                                    if m.full_edge {
                                        report.edge_exits.push((m.edge(), t_end - m.entered));
                                    }
                                    let step = self.step;
                                    let mv = self.mover_mut(vid);
                                    mv.leg += 1;
                                    mv.lane = slot.lane;
                                    mv.pos = f_pos;
                                    mv.speed = speed;
                                    mv.entered = t_end;
                                    mv.full_edge = true;
                                    mv.stamp = step;
                                    self.lanes[f.index()][slot.lane as usize].push(vid);
                                    continue;
                                }
                                // next edge blocked: wait at the end of this one
                                pos = edge.length;
                                speed = (edge.length - m.pos).max(0.0) / dt;
                            }
                        }
                    }
                    report.moved.push((vid, pos - m.pos));
                    let mv = self.mover_mut(vid);
                    mv.pos = pos;
                    mv.speed = speed;
                    ahead = Some((mv.rear(), speed));
                    kept.push(vid);
                }
                self.lanes[e][l] = kept;
            }
        }
        report
    }

    /// Check ordering, spacing and speed sign on every lane.
    pub fn check_invariants(&self) -> Result<(), String> {
        for (e, lanes) in self.lanes.iter().enumerate() {
            for (l, lane) in lanes.iter().enumerate() {
                for pair in lane.windows(2) {
                    let (lead, follow) = (self.mover(pair[0]), self.mover(pair[1]));
                    if follow.pos > lead.rear() + EPS {
                        return Err(format!(
                            "overlap on edge #{e} lane {l}: vehicle {} at {:.6} behind {} with rear {:.6}",
                            pair[1],
                            follow.pos,
                            pair[0],
                            lead.rear()
                        ));
                    }
                }
                for &v in lane {
                    let m = self.mover(v);
                    if m.speed < 0.0 || !m.speed.is_finite() {
                        return Err(format!("vehicle {v} has speed {}", m.speed));
                    }
                    if m.edge().index() != e || m.lane as usize != l {
                        return Err(format!("vehicle {v} is filed under the wrong lane"));
                    }
                }
            }
        }
        Ok(())
    }
}
