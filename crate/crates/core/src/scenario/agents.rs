//! Background traffic: lane-following NPC vehicles with gap keeping and
//! stop-line etiquette, and crosswalk pedestrians.

use std::collections::BTreeMap;

use crate::geom::Vec2;
use crate::guidance::{
    longitudinal_accel, lookahead_distance, pure_pursuit_steer, twist_filter, velocity_set, LongitudinalConfig, RouteTracker, TwistLimits, VelocityConfig,
    VelocityInputs,
};
use crate::sim::{AgentPolicies, ControlCommand, Npc, Pedestrian, SimRng, SimState};
use crate::world::{AgentId, Footprint, StaticWorld, WorldCrosswalk};

use super::arbiter::Arbiter;
use super::routes::AgentRoute;

/// Lateral distance within which another body counts as in-lane.
const LANE_GATE: f64 = 1.6;
/// Route segments scanned ahead for leaders.
const LEADER_SEGMENTS: usize = 25;
/// Bodies this far beyond the crosswalk edge mark it busy.
const CROSSWALK_MARGIN: f64 = 0.5;
/// Waiting pedestrians stand this far from the road edge.
pub const CURB_OFFSET: f64 = 1.0;
/// Deceleration pedestrians assume approaching vehicles will accept.
const PED_ASSUMED_DECEL: f64 = 2.0;
/// Extra margin (s, m) pedestrians want before stepping out.
const PED_REACTION: f64 = 1.0;
const PED_BUFFER: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErraticDecision {
    Undecided,
    /// Claim requested; the arbiter answers after the step.
    Pending,
    Go,
    Stop,
}

#[derive(Debug, Clone)]
pub struct NpcBrain {
    pub route: AgentRoute,
    pub cruise: f64,
    pub erratic: bool,
    /// Never moves (the stopped-obstacle vehicle).
    pub parked: bool,
    tracker: RouteTracker,
    next_stop: usize,
    released: bool,
    pub decision: ErraticDecision,
    prev: ControlCommand,
    /// Rear-axle arclength at the last command.
    pub s: f64,
    pub finished: bool,
}

impl NpcBrain {
    pub fn new(route: AgentRoute, cruise: f64, erratic: bool) -> Self {
        NpcBrain {
            route,
            cruise,
            erratic,
            parked: false,
            tracker: RouteTracker::new(),
            next_stop: 0,
            released: false,
            decision: ErraticDecision::Undecided,
            prev: ControlCommand::default(),
            s: 0.0,
            finished: false,
        }
    }

    pub fn parked(route: AgentRoute) -> Self {
        NpcBrain { parked: true, ..Self::new(route, 0.0, false) }
    }

    /// Next stop line not yet passed, as (intersection, line arclength).
    pub fn next_stop(&self) -> Option<(Option<i64>, f64)> {
        self.route.stops.get(self.next_stop).map(|s| (s.intersection, s.s))
    }

    pub fn claim_request(&self) -> bool {
        self.decision == ErraticDecision::Pending
    }

    fn command(&mut self, npc: &Npc, snap: &SimState, arbiter: &Arbiter, world: &StaticWorld) -> ControlCommand {
        let v = &npc.vehicle;
        let p = v.params;
        let hold = ControlCommand { steering_target: v.steering, accel: -p.a_max_brake, emergency_brake: false };
        if self.parked {
            return ControlCommand { steering_target: v.steering, accel: 0.0, emergency_brake: false };
        }
        let route = &self.route.route;
        let Ok((goal, track)) = self.tracker.goal(route, &v.pose, lookahead_distance(v.speed)) else {
            return hold;
        };
        self.s = track.s;
        if track.s >= route.length() - 1.0 {
            self.finished = true;
        }
        let front_s = track.s + p.front_distance();

        while let Some(stop) = self.route.stops.get(self.next_stop) {
            if front_s > stop.s + 0.5 {
                self.next_stop += 1;
                self.released = false;
                self.decision = ErraticDecision::Undecided;
            } else {
                break;
            }
        }

        let mut inputs = VelocityInputs { waypoint_speed: self.cruise.min(route.speed_at(track.s)), ..Default::default() };
        if let Some(stop) = self.route.stops.get(self.next_stop).copied() {
            let d = stop.s - front_s;
            match stop.intersection {
                Some(z) => {
                    if arbiter.is_claimed_by(z, npc.id) {
                        self.decision = ErraticDecision::Go;
                    }
                    if arbiter.is_granted(z, npc.id) || self.decision == ErraticDecision::Go {
                        self.released = true;
                    }
                }
                None => {
                    if v.speed == 0.0 && d <= 2.0 {
                        self.released = true;
                    }
                }
            }
            if self.erratic && !self.released && stop.intersection.is_some() {
                let decel = p.a_max_brake * snap.weather.friction_factor;
                match self.decision {
                    ErraticDecision::Undecided if d <= v.speed * v.speed / (2.0 * decel) + 3.0 => self.decision = ErraticDecision::Pending,
                    ErraticDecision::Pending => self.decision = ErraticDecision::Stop,
                    _ => {}
                }
                if self.decision == ErraticDecision::Pending {
                    // rolls on while the claim is answered
                } else {
                    inputs.stop_lines.push(d);
                }
            } else if !self.released {
                inputs.stop_lines.push(d);
            }
        }

        for c in &self.route.crossings {
            let d = c.near - front_s;
            if d < 0.6 {
                continue;
            }
            if crosswalk_busy(&world.crosswalks[c.crosswalk], snap) {
                inputs.occupied_crosswalks.push(d);
            }
        }

        let lo = track.segment;
        let hi = lo + LEADER_SEGMENTS;
        let mut leader: Option<f64> = None;
        for (id, fp) in snap.footprints() {
            if id == npc.id {
                continue;
            }
            let pr = route.path().project_window(fp.center, lo, hi);
            if pr.lateral.abs() > LANE_GATE || pr.s <= track.s {
                continue;
            }
            let gap = pr.s - front_s - fp.half_length;
            if leader.map_or(true, |g| gap < g) {
                leader = Some(gap);
            }
        }
        inputs.obstacle = leader.map(|g| g.max(0.0));

        let decision = velocity_set(&inputs, &VelocityConfig::default());
        let lon = LongitudinalConfig { a_max_brake: p.a_max_brake, a_max_drive: p.a_max_drive, ..LongitudinalConfig::default() };
        let accel = longitudinal_accel(v.speed, &decision, &lon);
        let raw = ControlCommand { steering_target: pure_pursuit_steer(&goal, p.wheelbase, p.steering_limit), accel, emergency_brake: false };
        let lim = TwistLimits { steering_rate_limit: p.steering_rate_limit, a_max_brake: p.a_max_brake, dt: snap.dt, ..TwistLimits::default() };
        let cmd = twist_filter(&raw, &self.prev, &lim);
        self.prev = cmd;
        cmd
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PedPhase {
    Waiting,
    Crossing,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PedBrain {
    pub crosswalk: usize,
    /// +1 walks toward the left of the road direction, -1 toward the right.
    pub direction: f64,
    pub speed: f64,
    pub phase: PedPhase,
}

impl PedBrain {
    /// Curb point where the walk starts.
    pub fn start(&self, cw: &WorldCrosswalk) -> Vec2 {
        let across = Vec2::from_angle(cw.road_heading).perp();
        cw.center - across * (self.direction * (cw.road_half_width + CURB_OFFSET))
    }

    fn velocity(&mut self, ped: &Pedestrian, snap: &SimState, cw: &WorldCrosswalk) -> Vec2 {
        let across = Vec2::from_angle(cw.road_heading).perp() * self.direction;
        if self.phase == PedPhase::Waiting && crossing_clear(cw, snap) {
            self.phase = PedPhase::Crossing;
        }
        if self.phase == PedPhase::Crossing && cw.local(ped.position).y * self.direction >= cw.road_half_width + CURB_OFFSET {
            self.phase = PedPhase::Done;
        }
        match self.phase {
            PedPhase::Crossing => across * self.speed,
            _ => Vec2::ZERO,
        }
    }
}

/// Local (along, across) extent of a footprint relative to a crosswalk.
fn local_extent(cw: &WorldCrosswalk, fp: &Footprint) -> (f64, f64, f64, f64) {
    let mut e = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for c in fp.corners() {
        let l = cw.local(c);
        e = (e.0.min(l.x), e.1.max(l.x), e.2.min(l.y), e.3.max(l.y));
    }
    e
}

/// No vehicle sits on the crosswalk and none is too close to stop for it.
pub fn crossing_clear(cw: &WorldCrosswalk, snap: &SimState) -> bool {
    let half = cw.width / 2.0;
    let vehicles = std::iter::once(&snap.ego).chain(snap.npcs.iter().map(|n| &n.vehicle));
    for v in vehicles {
        let fp = v.footprint();
        let (u0, u1, w0, w1) = local_extent(cw, &fp);
        let on_band = u1 >= -half - CROSSWALK_MARGIN && u0 <= half + CROSSWALK_MARGIN && w1 >= -cw.road_half_width && w0 <= cw.road_half_width;
        if on_band {
            return false;
        }
        let c = (v.pose.yaw - cw.road_heading).cos();
        let on_road = cw.local(fp.center).y.abs() <= cw.road_half_width + CROSSWALK_MARGIN;
        if !on_road || c.abs() < 0.5 || v.speed <= 0.2 {
            continue;
        }
        let d = if c > 0.0 && u1 < -half {
            -half - u1
        } else if c < 0.0 && u0 > half {
            u0 - half
        } else {
            continue;
        };
        let needed = v.speed * v.speed / (2.0 * PED_ASSUMED_DECEL) + v.speed * PED_REACTION + PED_BUFFER;
        if d < needed {
            return false;
        }
    }
    true
}

/// A pedestrian is on the crosswalk or waiting at its curb.
pub fn crosswalk_busy(cw: &WorldCrosswalk, snap: &SimState) -> bool {
    snap.pedestrians.iter().any(|p| {
        let l = cw.local(p.position);
        l.x.abs() <= cw.width / 2.0 + CROSSWALK_MARGIN && l.y.abs() <= cw.road_half_width + CURB_OFFSET + CROSSWALK_MARGIN
    })
}

/// Per-agent behavior state owned by the scenario runner.
#[derive(Debug, Clone, Default)]
pub struct Brains {
    pub npcs: BTreeMap<AgentId, NpcBrain>,
    pub pedestrians: BTreeMap<AgentId, PedBrain>,
}

/// Binds the brains to this tick's arbiter view for one simulation step.
pub struct HarnessPolicies<'a> {
    pub brains: &'a mut Brains,
    pub arbiter: &'a Arbiter,
    pub world: &'a StaticWorld,
}

impl AgentPolicies for HarnessPolicies<'_> {
    fn vehicle_command(&mut self, npc: &Npc, snap: &SimState, _rng: &mut SimRng) -> ControlCommand {
        match self.brains.npcs.get_mut(&npc.id) {
            Some(b) => b.command(npc, snap, self.arbiter, self.world),
            None => ControlCommand { accel: -npc.vehicle.params.a_max_brake, ..ControlCommand::default() },
        }
    }

    fn pedestrian_velocity(&mut self, ped: &Pedestrian, snap: &SimState, _rng: &mut SimRng) -> Vec2 {
        match self.brains.pedestrians.get_mut(&ped.id) {
            Some(b) => {
                let cw = &self.world.crosswalks[b.crosswalk];
                b.velocity(ped, snap, cw)
            }
            None => Vec2::ZERO,
        }
    }
}
