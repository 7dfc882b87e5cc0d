//! The ego's guidance chain behind a controller interface so it can run
//! in-process or on the far side of the bridge.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::geom::{Polyline, Pose2, Vec2};
use crate::guidance::{longitudinal_accel, lookahead_distance, pure_pursuit_steer, twist_filter, velocity_set, LongitudinalConfig, RouteTracker, TwistLimits, VelocityInputs};
use crate::perception::{astar_check, brake_check, build_grid, cluster_points, AvoidResult, Cluster};
use crate::sensors::{GpsFix, LidarConfig, OdometryDelta, PointCloud};
use crate::sim::{ControlCommand, EventKind, VehicleParams};
use crate::world::WorldCrosswalk;

use super::routes::AgentRoute;
use super::smart_circle::{fuse, FusedObject, ObjectListMessage};
use super::spec::GuidanceConfig;
use super::ScenarioError;

/// Largest cluster radius still taken for a pedestrian at a crosswalk.
const PEDESTRIAN_CLUSTER_RADIUS: f64 = 0.8;

/// Everything the ego learns in one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub tick: u64,
    pub time: f64,
    pub pose_estimate: Pose2,
    pub speed: f64,
    /// Sensor-frame lidar returns.
    pub scan: PointCloud,
    pub odom: OdometryDelta,
    pub gps: GpsFix,
    pub object_list: Option<ObjectListMessage>,
    /// Conflict zones the ego currently holds the right of way for.
    pub granted_zones: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ControlOutput {
    pub cmd: ControlCommand,
    /// Fused object positions (map frame), when the controller reports them.
    pub fused: Option<Vec<FusedObject>>,
    /// Cell count of an advisory detour, when one was planned.
    pub detour: Option<usize>,
    /// Events raised while producing the command.
    pub events: Vec<EventKind>,
}

pub trait Controller {
    fn control(&mut self, frame: &Frame) -> Result<ControlOutput, ScenarioError>;
}

/// Tracking, velocity planning, perception checks and twist filtering.
#[derive(Debug, Clone)]
pub struct GuidanceController {
    route: AgentRoute,
    crosswalks: Vec<WorldCrosswalk>,
    params: VehicleParams,
    cfg: GuidanceConfig,
    lidar: LidarConfig,
    fusion_gate: f64,
    dt: f64,
    tracker: RouteTracker,
    prev: ControlCommand,
    released: BTreeSet<usize>,
    ebrake: bool,
    last_objects: Option<ObjectListMessage>,
}

impl GuidanceController {
    pub fn new(route: AgentRoute, crosswalks: Vec<WorldCrosswalk>, params: VehicleParams, cfg: GuidanceConfig, lidar: LidarConfig, fusion_gate: f64, dt: f64) -> Self {
        let mut tracker = RouteTracker::new();
        tracker.max_offtrack = cfg.max_offtrack;
        GuidanceController {
            route,
            crosswalks,
            params,
            cfg,
            lidar,
            fusion_gate,
            dt,
            tracker,
            prev: ControlCommand::default(),
            released: BTreeSet::new(),
            ebrake: false,
            last_objects: None,
        }
    }

    /// Route points from `s` to `s + window_length`, in the ego frame.
    fn window(&self, pose: &Pose2, s: f64) -> Polyline {
        let path = self.route.route.path();
        let end = (s + self.cfg.window_length).min(path.length());
        let mut pts = vec![path.point_at(s)];
        for (p, &c) in path.points().iter().zip(path.cumulative()) {
            if c > s && c < end {
                pts.push(*p);
            }
        }
        pts.push(path.point_at(end));
        pts.dedup_by(|a, b| a.dist(*b) < 1e-9);
        if pts.len() < 2 {
            pts.push(path.point_at(end) + Vec2::from_angle(path.heading_at(end)) * 0.1);
        }
        Polyline::new(pts.into_iter().map(|p| pose.inverse_transform_point(p)).collect())
    }

    fn crosswalk_busy(&self, cw: &WorldCrosswalk, pose: &Pose2, components: &[Cluster]) -> bool {
        components.iter().any(|c| {
            if c.radius > PEDESTRIAN_CLUSTER_RADIUS {
                return false;
            }
            let l = cw.local(pose.transform_point(c.centroid));
            l.x.abs() <= cw.width / 2.0 + 0.5 && l.y.abs() <= cw.road_half_width + self.cfg.crosswalk_approach
        })
    }

    fn halt(&mut self) -> ControlOutput {
        let raw = ControlCommand { steering_target: self.prev.steering_target, accel: -self.params.a_max_brake, emergency_brake: false };
        let cmd = twist_filter(&raw, &self.prev, &self.limits());
        self.prev = cmd;
        ControlOutput { cmd, ..Default::default() }
    }

    fn limits(&self) -> TwistLimits {
        TwistLimits { steering_rate_limit: self.params.steering_rate_limit, a_max_brake: self.params.a_max_brake, dt: self.dt, ..self.cfg.twist }
    }
}

impl Controller for GuidanceController {
    fn control(&mut self, f: &Frame) -> Result<ControlOutput, ScenarioError> {
        let p = self.params;
        let pose = f.pose_estimate;
        let route = &self.route.route;
        let Ok((goal, track)) = self.tracker.goal(route, &pose, lookahead_distance(f.speed)) else {
            return Ok(self.halt());
        };
        let front_s = track.s + p.front_distance();
        if f.object_list.is_some() {
            self.last_objects = f.object_list.clone();
        }

        let ego_pts: Vec<Vec2> = f.scan.points.iter().map(|&q| self.lidar.mount.transform_point(q)).collect();
        let components = cluster_points(&ego_pts, self.cfg.cluster_tolerance, 1);
        let clusters: Vec<Cluster> = components.iter().filter(|c| c.points.len() >= self.cfg.cluster_min_size).cloned().collect();
        let window = self.window(&pose, track.s);
        let brake = brake_check(&clusters, f.speed, &window, p.front_distance(), p.half_width(), p.a_max_brake, &self.cfg.brake);
        let avoid = if brake.distance.is_some() {
            let grid = build_grid(&ego_pts, &clusters, &self.cfg.grid, &self.lidar);
            astar_check(&grid, window.points(), p.half_width())
        } else {
            AvoidResult::Clear
        };

        let mut inputs = VelocityInputs { waypoint_speed: route.speed_at(track.s), ..Default::default() };
        for (k, stop) in self.route.stops.iter().enumerate() {
            if stop.s < front_s - 0.5 || self.released.contains(&k) {
                continue;
            }
            if stop.intersection.map_or(f.speed == 0.0 && stop.s - front_s <= 2.0, |z| f.granted_zones.contains(&z)) {
                self.released.insert(k);
                continue;
            }
            inputs.stop_lines.push(stop.s - front_s);
            break;
        }
        for c in &self.route.crossings {
            let d = c.near - front_s;
            if d < self.cfg.crosswalk_commit || d > self.cfg.velocity.crosswalk_horizon {
                continue;
            }
            if self.crosswalk_busy(&self.crosswalks[c.crosswalk], &pose, &components) {
                inputs.occupied_crosswalks.push(d);
            }
        }
        if avoid != AvoidResult::Clear {
            inputs.obstacle = brake.distance;
        }
        let decision = velocity_set(&inputs, &self.cfg.velocity);
        let lon = LongitudinalConfig { a_max_brake: p.a_max_brake, a_max_drive: p.a_max_drive, ..self.cfg.longitudinal };
        let accel = longitudinal_accel(f.speed, &decision, &lon);

        self.ebrake = brake.engage || (self.ebrake && f.speed > 0.0);
        let raw = ControlCommand { steering_target: pure_pursuit_steer(&goal, p.wheelbase, p.steering_limit), accel, emergency_brake: self.ebrake };
        let cmd = twist_filter(&raw, &self.prev, &self.limits());
        self.prev = cmd;

        let centroids: Vec<Vec2> = clusters.iter().map(|c| pose.transform_point(c.centroid)).collect();
        let fused = fuse(&centroids, self.last_objects.as_ref(), self.fusion_gate);
        let detour = match avoid {
            AvoidResult::Detour(path) => Some(path.len()),
            _ => None,
        };
        Ok(ControlOutput { cmd, fused: Some(fused), detour, events: Vec::new() })
    }
}

/// Always sends the zero command.
pub struct ZeroController;

impl Controller for ZeroController {
    fn control(&mut self, _: &Frame) -> Result<ControlOutput, ScenarioError> {
        Ok(ControlOutput::default())
    }
}
