use std::collections::BTreeSet;

use crate::fixtures::linden_network;
use crate::geom::Pose2;
use crate::guidance::{record_route, Route, RouteTracker};
use crate::interface::trace::{AgentSample, EndReason, ScenarioOutcome, StateSample, TraceHeader, TracePayload, TraceRecord, TraceSink, TraceWriter, TRACE_FORMAT_VERSION};
use crate::map_ingest::{build_network, centered_projection, parse_osm, IntersectionControl, RoadNetwork};
use crate::ndt::NdtMap;
use crate::sensors::{read_gps, read_odometry, scan_state, GPS_STREAM, LIDAR_STREAM, ODOM_STREAM};
use crate::sim::{step, ControlCommand, EventKind, Npc, Pedestrian, SimRng, SimState, VehicleState, EGO_ID};
use crate::world::{compile_world, footprint_distance, AgentId, StaticWorld};

use super::agents::{Brains, HarnessPolicies, NpcBrain, PedBrain, PedPhase};
use super::arbiter::{Arbiter, VehicleStatus};
use super::controller::{Controller, Frame, GuidanceController};
use super::localization::{build_route_map, Localizer};
use super::routes::AgentRoute;
use super::smart_circle::broadcast;
use super::spec::{CrossingSide, Dist, LocalizationMode, MapRef, RouteRef, ScenarioSpec};
use super::ScenarioError;

/// RNG stream for spawn parameters.
pub const SPAWN_STREAM: u64 = 4;

const PEDESTRIAN_HALF_SIZE: f64 = 0.3;
/// Route spacing of the scans used for an on-the-fly NDT map.
const MAP_SCAN_SPACING: f64 = 1.0;

impl Dist {
    pub fn sample(&self, rng: &mut SimRng) -> f64 {
        match *self {
            Dist::Fixed(v) => v,
            Dist::Uniform { lo, hi } => rng.uniform_range(lo, hi),
        }
    }
}

pub fn load_network(map: &MapRef) -> Result<RoadNetwork, ScenarioError> {
    match map {
        MapRef::Fixture(name) if name == "linden_min" => Ok(linden_network()),
        MapRef::Fixture(name) => Err(ScenarioError::MissingElement(format!("fixture map {name}"))),
        MapRef::Path(path) => {
            let text = std::fs::read_to_string(path)?;
            if path.ends_with(".json") {
                Ok(serde_json::from_str(&text)?)
            } else {
                let doc = parse_osm(&text)?;
                Ok(build_network(&doc, &centered_projection(&doc))?)
            }
        }
    }
}

/// A scenario with its map and routes resolved.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub net: RoadNetwork,
    pub world: StaticWorld,
    pub ego_route: AgentRoute,
    pub npc_routes: Vec<AgentRoute>,
    pub ndt_map: Option<NdtMap>,
}

struct PlannedNpc {
    id: AgentId,
    time: f64,
    speed: f64,
    route: usize,
    erratic: bool,
}

struct PlannedPedestrian {
    id: AgentId,
    time: f64,
    brain: PedBrain,
}

struct PlannedObstacle {
    id: AgentId,
    trigger_s: f64,
    distance: f64,
}

impl Scenario {
    pub fn load(spec: &ScenarioSpec) -> Result<Scenario, ScenarioError> {
        spec.validate().map_err(ScenarioError::Invalid)?;
        let net = load_network(&spec.map)?;
        let world = compile_world(&net, spec.lane_width);
        let route = match &spec.route {
            RouteRef::Lanes { path, speed } => super::routes::lane_route(&net, &world, path, *speed)?,
            RouteRef::Csv { file } => Route::from_csv(&std::fs::read_to_string(file)?)?,
        };
        let ego_route = AgentRoute::annotate(&world, route);
        let npc_routes = spec
            .npc_spawns
            .iter()
            .map(|s| {
                let top = match s.speed {
                    Dist::Fixed(v) => v,
                    Dist::Uniform { hi, .. } => hi,
                };
                AgentRoute::from_lanes(&net, &world, &s.path, top)
            })
            .collect::<Result<Vec<_>, _>>()?;
        for p in &spec.pedestrian_spawns {
            if p.crosswalk >= world.crosswalks.len() {
                return Err(ScenarioError::MissingElement(format!("crosswalk {}", p.crosswalk)));
            }
        }
        if spec.smart_circle.enabled && spec.smart_circle.center.is_none() && !world.intersections.iter().any(|x| x.control == IntersectionControl::Circle) {
            return Err(ScenarioError::MissingElement("traffic circle for the overhead sensor".into()));
        }
        let ndt_map = match &spec.localization {
            LocalizationMode::GroundTruth => None,
            LocalizationMode::Ndt { map_file: Some(f), .. } => Some(serde_json::from_str(&std::fs::read_to_string(f)?)?),
            LocalizationMode::Ndt { map_file: None, cell_size, .. } => Some(build_route_map(&world, &ego_route.route, &spec.lidar, *cell_size, MAP_SCAN_SPACING)?),
        };
        Ok(Scenario { spec: spec.clone(), net, world, ego_route, npc_routes, ndt_map })
    }

    /// The in-process ego guidance chain for this scenario.
    pub fn guidance_controller(&self) -> GuidanceController {
        let s = &self.spec;
        GuidanceController::new(self.ego_route.clone(), self.world.crosswalks.clone(), s.ego_params, s.guidance, s.lidar, s.smart_circle.fusion_gate, s.dt)
    }

    fn circle_center(&self) -> crate::geom::Vec2 {
        self.spec.smart_circle.center.unwrap_or_else(|| {
            self.world.intersections.iter().find(|x| x.control == IntersectionControl::Circle).map(|x| x.position).unwrap_or_default()
        })
    }

    /// Runs the closed loop until route completion or the time limit and
    /// returns the outcome derived from the written trace.
    pub fn run(&self, controller: &mut dyn Controller, sink: &mut dyn TraceSink) -> Result<ScenarioOutcome, ScenarioError> {
        Run::new(self).execute(controller, sink)
    }
}

impl Scenario {
    /// Drives the ego route alone under ground truth and records the
    /// travelled poses as a waypoint route.
    pub fn record_route(&self, min_spacing: f64) -> Result<Route, ScenarioError> {
        let mut solo = self.clone();
        solo.spec.npc_spawns.clear();
        solo.spec.pedestrian_spawns.clear();
        solo.spec.stopped_vehicles.clear();
        solo.spec.localization = LocalizationMode::GroundTruth;
        solo.npc_routes.clear();
        let mut lines = Vec::<String>::new();
        let mut ctrl = solo.guidance_controller();
        solo.run(&mut ctrl, &mut lines)?;
        let mut poses = Vec::new();
        for line in &lines {
            let rec: TraceRecord = serde_json::from_str(line)?;
            if let TracePayload::State(st) = rec.body {
                poses.push(st.ego);
            }
        }
        let path = self.ego_route.route.path();
        let planned = &self.ego_route.route;
        Ok(record_route(&poses, min_spacing, &|p: &Pose2| planned.speed_at(path.project(p.position()).s))?)
    }
}

pub fn run_scenario(spec: &ScenarioSpec, sink: &mut dyn TraceSink) -> Result<ScenarioOutcome, ScenarioError> {
    let scn = Scenario::load(spec)?;
    let mut ctrl = scn.guidance_controller();
    scn.run(&mut ctrl, sink)
}

struct Run<'a> {
    scn: &'a Scenario,
    state: SimState,
    brains: Brains,
    arbiter: Arbiter,
    npcs_due: Vec<PlannedNpc>,
    peds_due: Vec<PlannedPedestrian>,
    obstacles_due: Vec<PlannedObstacle>,
    lidar_rng: SimRng,
    gps_rng: SimRng,
    odom_rng: SimRng,
    localizer: Option<Localizer>,
    truth_tracker: RouteTracker,
    prev_ego: VehicleState,
    prev_cmd: ControlCommand,
    prev_detour: Option<usize>,
    detected: BTreeSet<AgentId>,
    halted: BTreeSet<usize>,
    crossed: BTreeSet<usize>,
    off_route: bool,
    queued_since: Option<f64>,
    wait_paused: bool,
    ego_s: f64,
    ego_cte: f64,
}

impl<'a> Run<'a> {
    fn new(scn: &'a Scenario) -> Self {
        let spec = &scn.spec;
        let start = scn.ego_route.pose_at(0.0);
        let ego = VehicleState::new(start, spec.ego_start_speed, spec.ego_params);
        let state = SimState::new(ego, spec.weather, spec.seed, spec.dt);

        let mut rng = SimRng::new(spec.seed, SPAWN_STREAM);
        let mut next_id: AgentId = EGO_ID + 1;
        let mut npcs_due = Vec::new();
        for (i, s) in spec.npc_spawns.iter().enumerate() {
            let time = s.entry_time.sample(&mut rng);
            let speed = s.speed.sample(&mut rng);
            npcs_due.push(PlannedNpc { id: next_id, time, speed, route: i, erratic: s.erratic });
            next_id += 1;
        }
        let mut peds_due = Vec::new();
        for p in &spec.pedestrian_spawns {
            let time = p.start_time.sample(&mut rng);
            let speed = p.speed.sample(&mut rng);
            let direction = match p.side {
                CrossingSide::Left => -1.0,
                CrossingSide::Right => 1.0,
                CrossingSide::Random => {
                    if rng.uniform() < 0.5 {
                        -1.0
                    } else {
                        1.0
                    }
                }
            };
            peds_due.push(PlannedPedestrian { id: next_id, time, brain: PedBrain { crosswalk: p.crosswalk, direction, speed, phase: PedPhase::Waiting } });
            next_id += 1;
        }
        let mut obstacles_due = Vec::new();
        for o in &spec.stopped_vehicles {
            obstacles_due.push(PlannedObstacle { id: next_id, trigger_s: o.trigger_s, distance: o.appear_distance.sample(&mut rng) });
            next_id += 1;
        }
        npcs_due.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.id.cmp(&b.id)));
        peds_due.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.id.cmp(&b.id)));

        let localizer = match (&spec.localization, &scn.ndt_map) {
            (LocalizationMode::Ndt { match_period, downsample_radius, .. }, Some(map)) => Some(Localizer::new(map.clone(), &spec.lidar, *match_period, *downsample_radius)),
            _ => None,
        };
        let mut truth_tracker = RouteTracker::new();
        truth_tracker.max_offtrack = spec.guidance.max_offtrack;
        Run {
            scn,
            prev_ego: state.ego,
            state,
            brains: Brains::default(),
            arbiter: Arbiter::new(&scn.world, &spec.arbiter),
            npcs_due,
            peds_due,
            obstacles_due,
            lidar_rng: SimRng::new(spec.seed, LIDAR_STREAM),
            gps_rng: SimRng::new(spec.seed, GPS_STREAM),
            odom_rng: SimRng::new(spec.seed, ODOM_STREAM),
            localizer,
            truth_tracker,
            prev_cmd: ControlCommand::default(),
            prev_detour: None,
            detected: BTreeSet::new(),
            halted: BTreeSet::new(),
            crossed: BTreeSet::new(),
            off_route: false,
            queued_since: None,
            wait_paused: false,
            ego_s: 0.0,
            ego_cte: 0.0,
        }
    }

    fn spawn_due(&mut self, events: &mut Vec<EventKind>) {
        let now = self.state.time;
        let mut waiting = Vec::new();
        for plan in std::mem::take(&mut self.npcs_due) {
            if plan.time > now {
                waiting.push(plan);
                continue;
            }
            let route = &self.scn.npc_routes[plan.route];
            let cruise = plan.speed;
            let start_speed = cruise.min(route.route.speed_at(0.0));
            let vehicle = VehicleState::new(route.pose_at(0.0), start_speed, self.scn.spec.ego_params);
            let fp = vehicle.footprint();
            let needed = start_speed * start_speed / 4.0 + 6.0;
            let blocked = self.state.footprints().iter().any(|(_, other)| footprint_distance(&fp, other) < needed);
            if blocked {
                waiting.push(plan);
                continue;
            }
            self.state.npcs.push(Npc { id: plan.id, vehicle, erratic: plan.erratic });
            self.brains.npcs.insert(plan.id, NpcBrain::new(route.clone(), cruise, plan.erratic));
            events.push(EventKind::Spawn { agent: plan.id });
        }
        self.npcs_due = waiting;

        while self.peds_due.first().is_some_and(|p| p.time <= now) {
            let plan = self.peds_due.remove(0);
            let cw = &self.scn.world.crosswalks[plan.brain.crosswalk];
            self.state.pedestrians.push(Pedestrian { id: plan.id, position: plan.brain.start(cw), velocity: crate::geom::Vec2::ZERO, half_size: PEDESTRIAN_HALF_SIZE });
            self.brains.pedestrians.insert(plan.id, plan.brain);
            events.push(EventKind::Spawn { agent: plan.id });
        }

        let route = &self.scn.ego_route;
        let p = self.scn.spec.ego_params;
        let ego_s = self.ego_s;
        let mut left = Vec::new();
        for plan in std::mem::take(&mut self.obstacles_due) {
            if ego_s < plan.trigger_s {
                left.push(plan);
                continue;
            }
            // rear bumper `distance` ahead of the ego's front bumper
            let center_s = ego_s + p.front_distance() + plan.distance + p.length / 2.0;
            let c = route.pose_at(center_s);
            let pose = Pose2::new(c.x - p.center_offset * c.yaw.cos(), c.y - p.center_offset * c.yaw.sin(), c.yaw);
            self.state.npcs.push(Npc { id: plan.id, vehicle: VehicleState::new(pose, 0.0, p), erratic: false });
            self.brains.npcs.insert(plan.id, NpcBrain::parked(route.clone()));
            events.push(EventKind::Spawn { agent: plan.id });
            events.push(EventKind::ObstacleAppear { agent: plan.id });
        }
        self.obstacles_due = left;
        self.state.npcs.sort_by_key(|n| n.id);
        self.state.pedestrians.sort_by_key(|p| p.id);
    }

    fn frame(&mut self) -> (Frame, bool) {
        let spec = &self.scn.spec;
        let st = &self.state;
        let scan = scan_state(&self.scn.world, st, &spec.lidar, &mut self.lidar_rng);
        let gps = read_gps(st.ego.pose.position(), &spec.gps.denial_zones, spec.gps.noise_sigma, &mut self.gps_rng);
        let odom = read_odometry(&self.prev_ego, &st.ego, spec.dt, &spec.odometry_noise, &mut self.odom_rng);
        let (pose_estimate, lost) = match self.localizer.as_mut() {
            Some(loc) => loc.update(st.tick, &scan, &odom, &gps, &self.scn.ego_route.route),
            None => (st.ego.pose, false),
        };
        let every = ((spec.smart_circle.interval / spec.dt).round() as u64).max(1);
        let object_list = (spec.smart_circle.enabled && st.tick % every == 0).then(|| broadcast(st, self.scn.circle_center(), spec.smart_circle.radius));
        let frame = Frame { tick: st.tick, time: st.time, pose_estimate, speed: st.ego.speed, scan, odom, gps, object_list, granted_zones: self.arbiter.grants_of(EGO_ID) };
        (frame, lost)
    }

    fn statuses(&self) -> Vec<VehicleStatus> {
        let st = &self.state;
        let mut out = Vec::with_capacity(st.npcs.len() + 1);
        let front = st.ego.params.front_distance();
        let ego_next = self
            .scn
            .ego_route
            .stops
            .iter()
            .find(|s| s.s >= self.ego_s + front - 0.5)
            .and_then(|s| s.intersection.map(|z| (z, s.s - self.ego_s - front)));
        out.push(VehicleStatus { id: EGO_ID, footprint: st.ego.footprint(), speed: st.ego.speed, next_stop: ego_next, claim_request: false });
        for n in &st.npcs {
            let (next_stop, claim_request) = match self.brains.npcs.get(&n.id) {
                Some(b) => {
                    let next = b.next_stop().and_then(|(z, s)| z.map(|z| (z, s - b.s - n.vehicle.params.front_distance())));
                    (next, b.claim_request())
                }
                None => (None, false),
            };
            out.push(VehicleStatus { id: n.id, footprint: n.vehicle.footprint(), speed: n.vehicle.speed, next_stop, claim_request });
        }
        out
    }

    fn ego_bookkeeping(&mut self, events: &mut Vec<EventKind>) {
        let spec = &self.scn.spec;
        let ego = self.state.ego;
        match self.truth_tracker.locate(&self.scn.ego_route.route, ego.pose.position()) {
            Ok(t) => {
                self.ego_s = t.s;
                self.ego_cte = t.cross_track;
                self.off_route = false;
            }
            Err(crate::guidance::RouteError::OffRoute { distance }) => {
                self.ego_cte = distance;
                if !self.off_route {
                    events.push(EventKind::OffRoute { distance });
                    events.push(EventKind::Pause { reason: "off_route".into() });
                }
                self.off_route = true;
            }
            Err(_) => {}
        }
        let front_s = self.ego_s + ego.params.front_distance();
        for stop in &self.scn.ego_route.stops {
            let d = stop.s - front_s;
            if ego.speed == 0.0 && (-0.5..=spec.arbiter.arrival_window).contains(&d) && self.halted.insert(stop.line) {
                events.push(EventKind::StopLineHalt { line: stop.line });
            }
            if d < 0.0 && self.crossed.insert(stop.line) {
                events.push(EventKind::StopLineCross { line: stop.line, stopped: self.halted.contains(&stop.line) });
            }
        }
        let queued = self.arbiter.zones.keys().any(|&z| self.arbiter.is_queued(z, EGO_ID));
        match (queued, self.queued_since) {
            (true, None) => {
                self.queued_since = Some(self.state.time);
                self.wait_paused = false;
            }
            (true, Some(t0)) if !self.wait_paused && self.state.time - t0 > spec.arbiter.pause_threshold => {
                events.push(EventKind::Pause { reason: "right_of_way_wait".into() });
                self.wait_paused = true;
            }
            (false, _) => self.queued_since = None,
            _ => {}
        }
    }

    fn sample(&self, cmd: ControlCommand, estimate: Pose2) -> StateSample {
        let st = &self.state;
        let ego_fp = st.ego.footprint();
        let mut agents = Vec::with_capacity(st.npcs.len() + st.pedestrians.len());
        for n in &st.npcs {
            let v = n.vehicle;
            agents.push(AgentSample { id: n.id, pedestrian: false, x: v.pose.x, y: v.pose.y, yaw: v.pose.yaw, speed: v.speed, gap: footprint_distance(&ego_fp, &v.footprint()) });
        }
        for p in &st.pedestrians {
            let fp = p.footprint();
            agents.push(AgentSample { id: p.id, pedestrian: true, x: p.position.x, y: p.position.y, yaw: fp.yaw, speed: p.velocity.norm(), gap: footprint_distance(&ego_fp, &fp) });
        }
        agents.sort_by_key(|a| a.id);
        StateSample { ego: st.ego.pose, speed: st.ego.speed, steering: st.ego.steering, cmd, estimate, s: self.ego_s, cross_track: self.ego_cte, agents }
    }

    fn execute(mut self, controller: &mut dyn Controller, sink: &mut dyn TraceSink) -> Result<ScenarioOutcome, ScenarioError> {
        let spec = &self.scn.spec;
        let mut w = TraceWriter::new(sink);
        w.record(0, 0.0, TracePayload::Header(TraceHeader { format_version: TRACE_FORMAT_VERSION, scenario: spec.clone() }))?;
        let mut events = Vec::new();
        self.ego_bookkeeping(&mut events);
        let first = self.sample(ControlCommand::default(), self.state.ego.pose);
        w.record(0, 0.0, TracePayload::State(first))?;

        let end = loop {
            let (tick, time) = (self.state.tick, self.state.time);
            let mut events = Vec::new();
            self.spawn_due(&mut events);

            let (frame, lost) = self.frame();
            if lost {
                events.push(EventKind::LocalizationLost);
            }
            let out = match controller.control(&frame) {
                Ok(out) => out,
                Err(e @ (ScenarioError::Disconnected(_) | ScenarioError::Protocol(_))) => {
                    for e in events {
                        w.record(tick, time, TracePayload::Event(e))?;
                    }
                    break match e {
                        ScenarioError::Disconnected(_) => EndReason::ClientDisconnected,
                        _ => EndReason::ProtocolError,
                    };
                }
                Err(e) => return Err(e),
            };
            let cmd = out.cmd;
            events.extend(out.events);
            if cmd.emergency_brake && !self.prev_cmd.emergency_brake {
                events.push(EventKind::EmergencyBrake);
            }
            if let (Some(cells), None) = (out.detour, self.prev_detour) {
                events.push(EventKind::Detour { cells });
            }
            self.prev_detour = out.detour;
            if let Some(fused) = &out.fused {
                let gate = spec.smart_circle.fusion_gate;
                for (id, fp) in self.state.footprints() {
                    if id != EGO_ID && !self.detected.contains(&id) && fused.iter().any(|f| f.position.dist(fp.center) <= gate) {
                        self.detected.insert(id);
                        events.push(EventKind::Detected { agent: id });
                    }
                }
            }
            for e in events {
                w.record(tick, time, TracePayload::Event(e))?;
            }

            let next = {
                let mut pol = HarnessPolicies { brains: &mut self.brains, arbiter: &self.arbiter, world: &self.scn.world };
                step(&self.state, &cmd, spec.dt, &mut pol)?
            };
            self.prev_ego = self.state.ego;
            self.prev_cmd = cmd;
            self.state = next;
            let (tick, time) = (self.state.tick, self.state.time);
            let mut events: Vec<EventKind> = self.state.events.drain(..).map(|e| e.kind).collect();

            self.ego_bookkeeping(&mut events);
            let statuses = self.statuses();
            events.extend(self.arbiter.update(tick, &statuses, &spec.arbiter));
            // the ego's wait clock starts on the tick it joins a queue
            let queued = self.arbiter.zones.keys().any(|&z| self.arbiter.is_queued(z, EGO_ID));
            if queued && self.queued_since.is_none() {
                self.queued_since = Some(time);
            }

            let done_npcs: Vec<AgentId> = self.brains.npcs.iter().filter(|(_, b)| b.finished).map(|(&id, _)| id).collect();
            let done_peds: Vec<AgentId> = self.brains.pedestrians.iter().filter(|(_, b)| b.phase == PedPhase::Done).map(|(&id, _)| id).collect();
            for id in done_npcs.iter().chain(&done_peds) {
                events.push(EventKind::Despawn { agent: *id });
                self.brains.npcs.remove(id);
                self.brains.pedestrians.remove(id);
            }
            self.state.npcs.retain(|n| !done_npcs.contains(&n.id));
            self.state.pedestrians.retain(|p| !done_peds.contains(&p.id));

            let complete = self.ego_s >= self.scn.ego_route.route.length() - 0.5;
            if complete {
                events.push(EventKind::RouteComplete);
            }
            for e in events {
                w.record(tick, time, TracePayload::Event(e))?;
            }
            let sample = self.sample(cmd, frame.pose_estimate);
            w.record(tick, time, TracePayload::State(sample))?;
            if complete {
                break EndReason::RouteComplete;
            }
            if time >= spec.duration_limit - 1e-9 {
                break EndReason::TimeLimit;
            }
        };
        let (tick, time) = (self.state.tick, self.state.time);
        w.record(tick, time, TracePayload::End { reason: end })?;
        Ok(w.finish(tick, time)?)
    }
}
