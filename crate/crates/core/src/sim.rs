//! Fixed-step simulation core: kinematic bicycle vehicles, point-mass
//! pedestrians, weather, edge-triggered collision bookkeeping.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Pose2, Vec2};
use crate::world::{overlap, AgentId, Footprint};

pub const DEFAULT_DT: f64 = 0.02;
pub const EGO_ID: AgentId = 0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("integrity fault at tick {tick}: {detail}")]
    Integrity { tick: u64, detail: String },
    #[error("step size {got} does not match configured dt {expected}")]
    StepMismatch { expected: f64, got: f64 },
}

/// Seeded generator with an explicit stream id so independent consumers
/// (traffic, each sensor) draw from non-overlapping sequences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimRng {
    inner: ChaCha8Rng,
}

impl SimRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        lo + (hi - lo) * self.uniform()
    }

    pub fn gaussian(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Position in the stream, for trace fingerprints.
    pub fn word_pos(&self) -> u128 {
        self.inner.get_word_pos()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub wheelbase: f64,
    pub length: f64,
    pub width: f64,
    /// Distance from the rear axle (the pose reference) forward to the
    /// footprint center.
    pub center_offset: f64,
    pub a_max_brake: f64,
    pub a_max_drive: f64,
    pub steering_limit: f64,
    pub steering_rate_limit: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            wheelbase: 3.0,
            length: 5.0,
            width: 2.0,
            center_offset: 1.5,
            a_max_brake: 6.0,
            a_max_drive: 2.0,
            steering_limit: 0.55,
            steering_rate_limit: 0.7,
        }
    }
}

impl VehicleParams {
    /// Rear axle to front bumper.
    pub fn front_distance(&self) -> f64 {
        self.center_offset + self.length / 2.0
    }

    pub fn half_width(&self) -> f64 {
        self.width / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// Rear-axle pose.
    pub pose: Pose2,
    pub speed: f64,
    /// Front-wheel angle.
    pub steering: f64,
    pub params: VehicleParams,
}

impl VehicleState {
    pub fn new(pose: Pose2, speed: f64, params: VehicleParams) -> Self {
        Self { pose, speed, steering: 0.0, params }
    }

    pub fn footprint(&self) -> Footprint {
        let c = self.pose.position() + self.pose.heading() * self.params.center_offset;
        Footprint::new(c, self.pose.yaw, self.params.length / 2.0, self.params.width / 2.0)
    }

    pub fn front(&self) -> Vec2 {
        self.pose.position() + self.pose.heading() * self.params.front_distance()
    }

    fn is_finite(&self) -> bool {
        self.pose.is_finite() && self.speed.is_finite() && self.steering.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlCommand {
    pub steering_target: f64,
    /// Negative values brake.
    pub accel: f64,
    pub emergency_brake: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeatherCondition {
    Clear,
    Rain,
    Fog,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherState {
    pub condition: WeatherCondition,
    pub friction_factor: f64,
    pub sensor_noise_scale: f64,
    pub sensor_dropout_prob: f64,
}

impl Default for WeatherState {
    fn default() -> Self {
        Self::clear()
    }
}

impl WeatherState {
    pub fn clear() -> Self {
        Self { condition: WeatherCondition::Clear, friction_factor: 1.0, sensor_noise_scale: 1.0, sensor_dropout_prob: 0.0 }
    }

    pub fn rain(friction_factor: f64) -> Self {
        Self { condition: WeatherCondition::Rain, friction_factor, sensor_noise_scale: 2.0, sensor_dropout_prob: 0.05 }
    }

    pub fn fog() -> Self {
        Self { condition: WeatherCondition::Fog, friction_factor: 0.9, sensor_noise_scale: 3.0, sensor_dropout_prob: 0.2 }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.friction_factor > 0.0 && self.friction_factor <= 1.0) {
            return Err(format!("friction_factor {} outside (0, 1]", self.friction_factor));
        }
        if !(self.sensor_noise_scale >= 1.0) {
            return Err(format!("sensor_noise_scale {} below 1", self.sensor_noise_scale));
        }
        if !(0.0..=1.0).contains(&self.sensor_dropout_prob) {
            return Err(format!("sensor_dropout_prob {} outside [0, 1]", self.sensor_dropout_prob));
        }
        if self.condition == WeatherCondition::Clear
            && (self.friction_factor != 1.0 || self.sensor_noise_scale != 1.0 || self.sensor_dropout_prob != 0.0)
        {
            return Err("clear weather must have nominal friction and sensing".into());
        }
        Ok(())
    }
}

/// One explicit-Euler step of the kinematic bicycle model.
pub fn bicycle_step(v: &VehicleState, cmd: &ControlCommand, weather: &WeatherState, dt: f64) -> VehicleState {
    let p = &v.params;
    let target = cmd.steering_target.clamp(-p.steering_limit, p.steering_limit);
    let max_delta = p.steering_rate_limit * dt;
    let steering = (v.steering + (target - v.steering).clamp(-max_delta, max_delta)).clamp(-p.steering_limit, p.steering_limit);

    let brake_authority = p.a_max_brake * weather.friction_factor;
    let accel = if cmd.emergency_brake { -brake_authority } else { cmd.accel.clamp(-brake_authority, p.a_max_drive) };

    let yaw_rate = v.speed / p.wheelbase * v.steering.tan();
    let pose = Pose2::new(
        v.pose.x + v.speed * v.pose.yaw.cos() * dt,
        v.pose.y + v.speed * v.pose.yaw.sin() * dt,
        crate::geom::wrap_angle(v.pose.yaw + yaw_rate * dt),
    );
    VehicleState { pose, speed: (v.speed + accel * dt).max(0.0), steering, params: *p }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Npc {
    pub id: AgentId,
    pub vehicle: VehicleState,
    pub erratic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pedestrian {
    pub id: AgentId,
    pub position: Vec2,
    pub velocity: Vec2,
    pub half_size: f64,
}

impl Pedestrian {
    pub fn footprint(&self) -> Footprint {
        let yaw = if self.velocity.norm_sq() > 0.0 { self.velocity.angle() } else { 0.0 };
        Footprint::new(self.position, yaw, self.half_size, self.half_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Collision { a: AgentId, b: AgentId },
    Spawn { agent: AgentId },
    Despawn { agent: AgentId },
    ObstacleAppear { agent: AgentId },
    /// First time the ego's fused object set holds the agent.
    Detected { agent: AgentId },
    EmergencyBrake,
    Pause { reason: String },
    LocalizationLost,
    OffRoute { distance: f64 },
    StopLineHalt { line: usize },
    StopLineCross { line: usize, stopped: bool },
    Arrival { zone: i64, agent: AgentId },
    Grant { zone: i64, agent: AgentId },
    ZoneEnter { zone: i64, agent: AgentId },
    ZoneExit { zone: i64, agent: AgentId },
    PriorityViolation { zone: i64, agent: AgentId, over: AgentId },
    ZoneCoOccupancy { zone: i64, other: AgentId },
    Detour { cells: usize },
    ClampWarning { field: String },
    RouteComplete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub tick: u64,
    pub time: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone)]
pub struct SimState {
    pub tick: u64,
    pub time: f64,
    pub dt: f64,
    pub ego: VehicleState,
    pub npcs: Vec<Npc>,
    pub pedestrians: Vec<Pedestrian>,
    pub weather: WeatherState,
    pub rng: SimRng,
    pub events: Vec<Event>,
    contacts: BTreeSet<(AgentId, AgentId)>,
}

impl SimState {
    pub fn new(ego: VehicleState, weather: WeatherState, seed: u64, dt: f64) -> Self {
        Self {
            tick: 0,
            time: 0.0,
            dt,
            ego,
            npcs: Vec::new(),
            pedestrians: Vec::new(),
            weather,
            rng: SimRng::new(seed, 0),
            events: Vec::new(),
            contacts: BTreeSet::new(),
        }
    }

    pub fn push_event(&mut self, kind: EventKind) {
        self.events.push(Event { tick: self.tick, time: self.time, kind });
    }

    pub fn npc(&self, id: AgentId) -> Option<&Npc> {
        self.npcs.iter().find(|n| n.id == id)
    }

    /// Every agent body, ego first, then NPCs and pedestrians by id.
    pub fn footprints(&self) -> Vec<(AgentId, Footprint)> {
        let mut out = vec![(EGO_ID, self.ego.footprint())];
        out.extend(self.npcs.iter().map(|n| (n.id, n.vehicle.footprint())));
        out.extend(self.pedestrians.iter().map(|p| (p.id, p.footprint())));
        out
    }

    pub fn is_pedestrian(&self, id: AgentId) -> bool {
        self.pedestrians.iter().any(|p| p.id == id)
    }

    pub fn contacts(&self) -> &BTreeSet<(AgentId, AgentId)> {
        &self.contacts
    }
}

/// Control source for non-ego agents; called once per agent per tick in
/// ascending id order against the pre-step state.
pub trait AgentPolicies {
    fn vehicle_command(&mut self, npc: &Npc, snapshot: &SimState, rng: &mut SimRng) -> ControlCommand;
    fn pedestrian_velocity(&mut self, ped: &Pedestrian, snapshot: &SimState, rng: &mut SimRng) -> Vec2;
}

/// Every NPC holds zero command; pedestrians keep their velocity.
pub struct InertPolicies;

impl AgentPolicies for InertPolicies {
    fn vehicle_command(&mut self, _: &Npc, _: &SimState, _: &mut SimRng) -> ControlCommand {
        ControlCommand::default()
    }

    fn pedestrian_velocity(&mut self, ped: &Pedestrian, _: &SimState, _: &mut SimRng) -> Vec2 {
        ped.velocity
    }
}

enum Control {
    Vehicle(ControlCommand),
    Walk(Vec2),
}

/// Advances the world one tick: policies, integration, collision onsets,
/// then the clock.
pub fn step(state: &SimState, ego_cmd: &ControlCommand, dt: f64, policies: &mut dyn AgentPolicies) -> Result<SimState, SimError> {
    if dt != state.dt {
        return Err(SimError::StepMismatch { expected: state.dt, got: dt });
    }
    let mut rng = state.rng.clone();

    let mut order: Vec<(AgentId, usize, bool)> = state
        .npcs
        .iter()
        .enumerate()
        .map(|(i, n)| (n.id, i, true))
        .chain(state.pedestrians.iter().enumerate().map(|(i, p)| (p.id, i, false)))
        .collect();
    order.sort_by_key(|e| e.0);
    let mut controls = Vec::with_capacity(order.len());
    for &(_, idx, is_vehicle) in &order {
        let c = if is_vehicle {
            Control::Vehicle(policies.vehicle_command(&state.npcs[idx], state, &mut rng))
        } else {
            Control::Walk(policies.pedestrian_velocity(&state.pedestrians[idx], state, &mut rng))
        };
        controls.push((idx, c));
    }

    let mut next = state.clone();
    next.rng = rng;
    next.ego = bicycle_step(&state.ego, ego_cmd, &state.weather, dt);
    for (idx, c) in controls {
        match c {
            Control::Vehicle(cmd) => {
                next.npcs[idx].vehicle = bicycle_step(&state.npcs[idx].vehicle, &cmd, &state.weather, dt);
            }
            Control::Walk(v) => {
                let p = &mut next.pedestrians[idx];
                p.velocity = v;
                p.position = state.pedestrians[idx].position + v * dt;
            }
        }
    }

    if !next.ego.is_finite() {
        return Err(SimError::Integrity { tick: state.tick, detail: format!("ego state not finite: {:?}", next.ego) });
    }
    for n in &next.npcs {
        if !n.vehicle.is_finite() {
            return Err(SimError::Integrity { tick: state.tick, detail: format!("npc {} state not finite", n.id) });
        }
    }
    for p in &next.pedestrians {
        if !(p.position.is_finite() && p.velocity.is_finite()) {
            return Err(SimError::Integrity { tick: state.tick, detail: format!("pedestrian {} state not finite", p.id) });
        }
    }

    next.tick = state.tick + 1;
    next.time = next.tick as f64 * dt;

    let bodies = next.footprints();
    let mut contacts = BTreeSet::new();
    for i in 0..bodies.len() {
        for j in i + 1..bodies.len() {
            let (a, b) = (bodies[i].0.min(bodies[j].0), bodies[i].0.max(bodies[j].0));
            if next.is_pedestrian(a) && next.is_pedestrian(b) {
                continue;
            }
            if overlap(&bodies[i].1, &bodies[j].1) {
                contacts.insert((a, b));
            }
        }
    }
    for &(a, b) in contacts.difference(&state.contacts) {
        next.events.push(Event { tick: next.tick, time: next.time, kind: EventKind::Collision { a, b } });
    }
    next.contacts = contacts;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn ego_at(x: f64, y: f64, yaw: f64, speed: f64) -> VehicleState {
        VehicleState::new(Pose2::new(x, y, yaw), speed, VehicleParams::default())
    }

    #[test]
    fn straight_motion() {
        let v = ego_at(0.0, 0.0, 0.3, 5.0);
        let n = bicycle_step(&v, &ControlCommand::default(), &WeatherState::clear(), 0.02);
        assert_eq!(n.pose.yaw, 0.3);
        assert!((n.pose.position().dist(v.pose.position()) - 0.1).abs() < 1e-12);
        assert!((n.pose.position() - v.pose.position()).cross(v.pose.heading()).abs() < 1e-12);
    }

    #[test]
    fn circle_closes() {
        let params = VehicleParams::default();
        let delta = (params.wheelbase / 10.0).atan();
        let mut v = ego_at(0.0, 0.0, 0.0, 3.0);
        v.steering = delta;
        let cmd = ControlCommand { steering_target: delta, accel: 0.0, emergency_brake: false };
        let mut yaw_total = 0.0;
        while yaw_total < 2.0 * PI {
            let n = bicycle_step(&v, &cmd, &WeatherState::clear(), 0.02);
            yaw_total += crate::geom::wrap_angle(n.pose.yaw - v.pose.yaw);
            v = n;
        }
        assert!(v.pose.position().norm() < 0.1, "closure error {}", v.pose.position().norm());
    }

    #[test]
    fn braking_authority_scales_with_friction() {
        let v = ego_at(0.0, 0.0, 0.0, 5.0);
        let cmd = ControlCommand { steering_target: 0.0, accel: 0.0, emergency_brake: true };
        let n = bicycle_step(&v, &cmd, &WeatherState::rain(0.5), 0.02);
        assert!(((v.speed - n.speed) / 0.02 - 3.0).abs() < 1e-9);
    }

    #[test]
    fn steering_slews_and_clamps() {
        let v = ego_at(0.0, 0.0, 0.0, 1.0);
        let cmd = ControlCommand { steering_target: 2.0, accel: -100.0, emergency_brake: false };
        let n = bicycle_step(&v, &cmd, &WeatherState::clear(), 0.02);
        assert!((n.steering - 0.014).abs() < 1e-12);
        assert!(n.speed >= 0.0);
        let mut s = n;
        for _ in 0..200 {
            s = bicycle_step(&s, &cmd, &WeatherState::clear(), 0.02);
            assert!(s.steering <= s.params.steering_limit && s.speed >= 0.0);
        }
    }

    #[test]
    fn inert_step_only_advances_time() {
        let s = SimState::new(ego_at(0.0, 0.0, 0.0, 0.0), WeatherState::clear(), 1, 0.02);
        let n = step(&s, &ControlCommand::default(), 0.02, &mut InertPolicies).unwrap();
        assert_eq!(n.tick, 1);
        assert_eq!(n.time, 0.02);
        assert_eq!(n.ego, s.ego);
        assert!(n.events.is_empty());
    }

    #[test]
    fn collision_recorded_once_per_onset() {
        let mut s = SimState::new(ego_at(-100.0, 0.0, 0.0, 0.0), WeatherState::clear(), 1, 0.02);
        let p = VehicleParams::default();
        s.npcs.push(Npc { id: 1, vehicle: VehicleState::new(Pose2::new(0.0, 0.0, 0.0), 0.0, p), erratic: false });
        s.npcs.push(Npc { id: 2, vehicle: VehicleState::new(Pose2::new(1.0, 0.5, 0.0), 0.0, p), erratic: false });
        for _ in 0..10 {
            s = step(&s, &ControlCommand::default(), 0.02, &mut InertPolicies).unwrap();
        }
        let hits: Vec<_> = s.events.iter().filter(|e| matches!(e.kind, EventKind::Collision { .. })).collect();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].kind, EventKind::Collision { a: 1, b: 2 });
    }

    #[test]
    fn nan_command_is_an_integrity_fault() {
        let s = SimState::new(ego_at(0.0, 0.0, 0.0, 1.0), WeatherState::clear(), 1, 0.02);
        let cmd = ControlCommand { steering_target: f64::NAN, accel: 0.0, emergency_brake: false };
        assert!(matches!(step(&s, &cmd, 0.02, &mut InertPolicies), Err(SimError::Integrity { .. })));
    }

    #[test]
    fn wrong_dt_rejected() {
        let s = SimState::new(ego_at(0.0, 0.0, 0.0, 1.0), WeatherState::clear(), 1, 0.02);
        assert!(matches!(step(&s, &ControlCommand::default(), 0.01, &mut InertPolicies), Err(SimError::StepMismatch { .. })));
    }

    #[test]
    fn weather_presets_valid() {
        assert!(WeatherState::clear().validate().is_ok());
        assert!(WeatherState::rain(0.5).validate().is_ok());
        assert!(WeatherState::fog().validate().is_ok());
        let mut bad = WeatherState::clear();
        bad.friction_factor = 0.5;
        assert!(bad.validate().is_err());
    }
}
