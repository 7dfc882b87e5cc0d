//! Waypoint routes and the path-following control chain: goal selection,
//! pure pursuit, velocity set, longitudinal control and twist filtering.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{wrap_angle, Polyline, Pose2, Vec2};
use crate::sim::ControlCommand;

pub const ROUTE_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_MAX_SPACING: f64 = 5.0;
pub const DEFAULT_MAX_OFFTRACK: f64 = 5.0;
const SEARCH_SEGMENTS_BACK: usize = 2;
const SEARCH_SEGMENTS_AHEAD: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RouteError {
    #[error("route needs at least 2 waypoints, got {0}")]
    TooShort(usize),
    #[error("waypoints {index} and {next} are {gap:.3} m apart (limit {limit} m)")]
    Spacing { index: usize, next: usize, gap: f64, limit: f64 },
    #[error("negative target speed at waypoint {0}")]
    NegativeSpeed(usize),
    #[error("ego is {distance:.2} m from the route")]
    OffRoute { distance: f64 },
    #[error("route csv line {line}: {message}")]
    Csv { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub pose: Pose2,
    pub target_speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    waypoints: Vec<Waypoint>,
    cyclic: bool,
    path: Polyline,
}

impl Route {
    pub fn new(waypoints: Vec<Waypoint>, cyclic: bool) -> Result<Route, RouteError> {
        Self::with_spacing(waypoints, cyclic, DEFAULT_MAX_SPACING)
    }

    pub fn with_spacing(waypoints: Vec<Waypoint>, cyclic: bool, max_spacing: f64) -> Result<Route, RouteError> {
        let n = waypoints.len();
        if n < 2 {
            return Err(RouteError::TooShort(n));
        }
        for (i, w) in waypoints.iter().enumerate() {
            if !(w.target_speed >= 0.0) {
                return Err(RouteError::NegativeSpeed(i));
            }
        }
        let pairs = if cyclic { n } else { n - 1 };
        for i in 0..pairs {
            let j = (i + 1) % n;
            let gap = waypoints[i].pose.position().dist(waypoints[j].pose.position());
            if gap > max_spacing {
                return Err(RouteError::Spacing { index: i, next: j, gap, limit: max_spacing });
            }
        }
        let mut pts: Vec<Vec2> = waypoints.iter().map(|w| w.pose.position()).collect();
        if cyclic {
            pts.push(pts[0]);
        }
        Ok(Route { waypoints, cyclic, path: Polyline::new(pts) })
    }

    /// Resamples a polyline at no more than `spacing` meters.
    pub fn from_polyline(line: &Polyline, spacing: f64, speed: f64) -> Result<Route, RouteError> {
        let len = line.length();
        let n = (len / spacing).ceil().max(1.0) as usize;
        let waypoints = (0..=n)
            .map(|i| {
                let s = len * i as f64 / n as f64;
                let p = line.point_at(s);
                Waypoint { pose: Pose2::new(p.x, p.y, line.heading_at(s)), target_speed: speed }
            })
            .collect();
        Route::with_spacing(waypoints, false, spacing.max(DEFAULT_MAX_SPACING))
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.waypoints
    }

    pub fn is_cyclic(&self) -> bool {
        self.cyclic
    }

    pub fn path(&self) -> &Polyline {
        &self.path
    }

    pub fn length(&self) -> f64 {
        self.path.length()
    }

    pub fn segment_count(&self) -> usize {
        self.path.len() - 1
    }

    /// Target speed on the segment containing arclength `s` (the lower of
    /// its two endpoint speeds).
    pub fn speed_at(&self, s: f64) -> f64 {
        let i = self.path.segment_of(s);
        let n = self.waypoints.len();
        self.waypoints[i % n].target_speed.min(self.waypoints[(i + 1) % n].target_speed)
    }

    pub fn end(&self) -> Vec2 {
        *self.path.points().last().unwrap()
    }

    fn seg(&self, i: usize) -> (Vec2, Vec2) {
        let p = self.path.points();
        (p[i], p[i + 1])
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# format_version: {ROUTE_FORMAT_VERSION}, cyclic: {}\nx,y,yaw,speed\n", self.cyclic);
        for w in &self.waypoints {
            out.push_str(&format!("{},{},{},{}\n", w.pose.x, w.pose.y, w.pose.yaw, w.target_speed));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Route, RouteError> {
        let mut cyclic = false;
        let mut header_seen = false;
        let mut waypoints = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let lineno = i + 1;
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                for item in meta.split(',') {
                    let mut kv = item.splitn(2, ':').map(str::trim);
                    match (kv.next(), kv.next()) {
                        (Some("format_version"), Some(v)) if v != ROUTE_FORMAT_VERSION.to_string() => {
                            return Err(RouteError::Csv { line: lineno, message: format!("unsupported format_version {v}") });
                        }
                        (Some("cyclic"), Some(v)) => cyclic = v == "true",
                        _ => {}
                    }
                }
                continue;
            }
            if !header_seen {
                if line != "x,y,yaw,speed" {
                    return Err(RouteError::Csv { line: lineno, message: format!("expected header x,y,yaw,speed, found {line:?}") });
                }
                header_seen = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(RouteError::Csv { line: lineno, message: format!("expected 4 fields, found {}", fields.len()) });
            }
            let mut v = [0.0; 4];
            for (k, f) in fields.iter().enumerate() {
                v[k] = f.trim().parse().map_err(|_| RouteError::Csv { line: lineno, message: format!("not a number: {f:?}") })?;
            }
            waypoints.push(Waypoint { pose: Pose2::new(v[0], v[1], v[2]), target_speed: v[3] });
        }
        Route::new(waypoints, cyclic)
    }
}

/// Builds a route from a driven pose stream, emitting a waypoint each time
/// the pose has moved `min_spacing` from the last emitted one.
pub fn record_route(poses: &[Pose2], min_spacing: f64, speed: &dyn Fn(&Pose2) -> f64) -> Result<Route, RouteError> {
    let mut waypoints: Vec<Waypoint> = Vec::new();
    for p in poses {
        let emit = match waypoints.last() {
            None => true,
            Some(last) => last.pose.position().dist(p.position()) >= min_spacing - 1e-9,
        };
        if emit {
            waypoints.push(Waypoint { pose: *p, target_speed: speed(p) });
        }
    }
    if waypoints.len() < 2 {
        return Err(RouteError::TooShort(waypoints.len()));
    }
    let first = poses[0].position();
    let last = poses[poses.len() - 1].position();
    let travelled: f64 = poses.windows(2).map(|w| w[0].position().dist(w[1].position())).sum();
    let cyclic = last.dist(first) < min_spacing && travelled >= 3.0 * min_spacing;
    if cyclic && waypoints.last().unwrap().pose.position().dist(first) < min_spacing * 0.5 {
        waypoints.pop();
    }
    Route::with_spacing(waypoints, cyclic, DEFAULT_MAX_SPACING.max(2.0 * min_spacing))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalPoint {
    pub gx: f64,
    pub gy: f64,
    pub lookahead: f64,
    pub segment: usize,
    /// Goal arclength along the route (may exceed the length when
    /// extrapolating past the end of an open route).
    pub s: f64,
}

pub fn lookahead_distance(speed: f64) -> f64 {
    (1.5 * speed).clamp(3.0, 12.0)
}

/// Route progress state; keeps the search window local so the tracker
/// never jumps backward or onto a nearby unrelated stretch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RouteTracker {
    segment: Option<usize>,
    pub max_offtrack: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackState {
    pub s: f64,
    pub segment: usize,
    /// Signed lateral offset, positive left of the route.
    pub cross_track: f64,
    pub point: Vec2,
}

impl RouteTracker {
    pub fn new() -> Self {
        Self { segment: None, max_offtrack: DEFAULT_MAX_OFFTRACK }
    }

    pub fn locate(&mut self, route: &Route, pos: Vec2) -> Result<TrackState, RouteError> {
        let n = route.segment_count();
        let candidates: Vec<usize> = match self.segment {
            None => (0..n).collect(),
            Some(cur) => {
                let mut v = Vec::new();
                for k in 0..=(SEARCH_SEGMENTS_BACK + SEARCH_SEGMENTS_AHEAD) {
                    let off = k as isize - SEARCH_SEGMENTS_BACK as isize;
                    let idx = cur as isize + off;
                    if route.cyclic {
                        v.push(idx.rem_euclid(n as isize) as usize);
                    } else if idx >= 0 && (idx as usize) < n {
                        v.push(idx as usize);
                    }
                }
                v
            }
        };
        let mut best: Option<(f64, TrackState)> = None;
        for i in candidates {
            let (a, b) = route.seg(i);
            let (q, t) = crate::geom::closest_on_segment(pos, a, b);
            let d = q.dist(pos);
            if best.as_ref().map_or(true, |(bd, _)| d < *bd) {
                let cum = route.path.cumulative();
                let dir = (b - a).normalized();
                let state = TrackState { s: cum[i] + t * (cum[i + 1] - cum[i]), segment: i, cross_track: dir.cross(pos - q).signum() * d, point: q };
                best = Some((d, state));
            }
        }
        let (d, state) = best.expect("route has segments");
        let limit = if self.max_offtrack > 0.0 { self.max_offtrack } else { DEFAULT_MAX_OFFTRACK };
        if d > limit {
            return Err(RouteError::OffRoute { distance: d });
        }
        self.segment = Some(state.segment);
        Ok(state)
    }

    pub fn goal(&mut self, route: &Route, pose: &Pose2, lookahead: f64) -> Result<(GoalPoint, TrackState), RouteError> {
        let track = self.locate(route, pose.position())?;
        Ok((goal_from(route, pose, lookahead, &track), track))
    }
}

/// Stateless goal selection from the globally nearest route point.
pub fn select_goal(route: &Route, pose: &Pose2, lookahead: f64) -> Result<GoalPoint, RouteError> {
    RouteTracker::new().goal(route, pose, lookahead).map(|(g, _)| g)
}

fn goal_from(route: &Route, pose: &Pose2, ld: f64, track: &TrackState) -> GoalPoint {
    let e = pose.position();
    let n = route.segment_count();
    let cum = route.path.cumulative();
    let to_goal = |p: Vec2, seg: usize, s: f64| {
        let local = pose.inverse_transform_point(p);
        GoalPoint { gx: local.x, gy: local.y, lookahead: ld, segment: seg, s }
    };
    if track.point.dist(e) >= ld {
        return to_goal(track.point, track.segment, track.s);
    }
    let mut seg = track.segment;
    let mut t0 = {
        let (a, b) = route.seg(seg);
        let l = a.dist(b);
        if l > 0.0 { (track.point.dist(a) / l).min(1.0) } else { 0.0 }
    };
    let mut lap = 0.0;
    for _ in 0..=2 * n {
        let (a, b) = route.seg(seg);
        let d = b - a;
        let last_open = !route.cyclic && seg + 1 == n;
        if let Some(t) = exit_root(a - e, d, ld) {
            if t >= t0 && (t <= 1.0 || last_open) {
                let s = lap + cum[seg] + t * (cum[seg + 1] - cum[seg]);
                return to_goal(a + d * t, seg, s);
            }
        }
        t0 = 0.0;
        if seg + 1 < n {
            seg += 1;
        } else if route.cyclic {
            seg = 0;
            lap += route.length();
        } else {
            break;
        }
    }
    let end = route.end();
    to_goal(end, n - 1, route.length())
}

/// Larger root of |w + t d| = r, i.e. where the segment leaves the circle.
fn exit_root(w: Vec2, d: Vec2, r: f64) -> Option<f64> {
    let a = d.norm_sq();
    if a == 0.0 {
        return None;
    }
    let b = w.dot(d);
    let c = w.norm_sq() - r * r;
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    Some((-b + disc.sqrt()) / a)
}

/// Curvature of the arc through the origin, tangent to the heading, that
/// passes through the goal.
pub fn pure_pursuit_curvature(goal: &GoalPoint) -> f64 {
    let d2 = goal.gx * goal.gx + goal.gy * goal.gy;
    if d2 == 0.0 {
        return 0.0;
    }
    2.0 * goal.gy / d2
}

pub fn pure_pursuit_steer(goal: &GoalPoint, wheelbase: f64, steering_limit: f64) -> f64 {
    (pure_pursuit_curvature(goal) * wheelbase).atan().clamp(-steering_limit, steering_limit)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityConfig {
    pub comfort_decel: f64,
    /// Gap kept to obstacles on the path.
    pub standoff: f64,
    /// Gap kept to an occupied crosswalk edge.
    pub crosswalk_standoff: f64,
    /// Crosswalks farther than this along the path are ignored.
    pub crosswalk_horizon: f64,
}

impl Default for VelocityConfig {
    fn default() -> Self {
        Self { comfort_decel: 2.0, standoff: 4.0, crosswalk_standoff: 1.5, crosswalk_horizon: 30.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedReason {
    Waypoint,
    StopLine,
    Crosswalk,
    Obstacle,
}

/// Distances are measured along the route from the ego's front bumper.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VelocityInputs {
    pub waypoint_speed: f64,
    pub stop_lines: Vec<f64>,
    /// Distance to the near edge of each occupied crosswalk ahead.
    pub occupied_crosswalks: Vec<f64>,
    /// Distance to the nearest blocking obstacle, if any.
    pub obstacle: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedDecision {
    pub speed: f64,
    /// Where the ego must be stopped, measured from the front bumper.
    pub stop_distance: Option<f64>,
    pub reason: SpeedReason,
}

pub fn velocity_set(inp: &VelocityInputs, cfg: &VelocityConfig) -> SpeedDecision {
    let mut out = SpeedDecision { speed: inp.waypoint_speed.max(0.0), stop_distance: None, reason: SpeedReason::Waypoint };
    let consider = |cap: f64, stop: f64, reason: SpeedReason, out: &mut SpeedDecision| {
        if out.stop_distance.map_or(true, |d| stop < d) {
            out.stop_distance = Some(stop);
        }
        if cap < out.speed {
            out.speed = cap;
            out.reason = reason;
        }
    };
    for &d in &inp.stop_lines {
        if d >= 0.0 {
            consider((2.0 * cfg.comfort_decel * d).sqrt(), d, SpeedReason::StopLine, &mut out);
        }
    }
    for &d in &inp.occupied_crosswalks {
        if d <= cfg.crosswalk_horizon {
            consider(0.0, (d - cfg.crosswalk_standoff).max(0.0), SpeedReason::Crosswalk, &mut out);
        }
    }
    if let Some(d) = inp.obstacle {
        let gap = (d - cfg.standoff).max(0.0);
        consider((2.0 * cfg.comfort_decel * gap).sqrt(), gap, SpeedReason::Obstacle, &mut out);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalConfig {
    pub kp: f64,
    pub comfort_decel: f64,
    /// Aim point short of every required stop.
    pub stop_margin: f64,
    pub a_max_drive: f64,
    pub a_max_brake: f64,
}

impl Default for LongitudinalConfig {
    fn default() -> Self {
        Self { kp: 1.0, comfort_decel: 2.0, stop_margin: 0.5, a_max_drive: 2.0, a_max_brake: 6.0 }
    }
}

/// Speed tracking with a kinematic stopping feed-forward: once the
/// deceleration needed to halt before the stop point nears the comfort
/// value, it is commanded directly.
pub fn longitudinal_accel(speed: f64, decision: &SpeedDecision, cfg: &LongitudinalConfig) -> f64 {
    let mut a = cfg.kp * (decision.speed - speed);
    if let Some(d) = decision.stop_distance {
        let d_eff = d - cfg.stop_margin;
        if d_eff <= 0.0 {
            return -cfg.a_max_brake;
        }
        let needed = speed * speed / (2.0 * d_eff);
        if needed >= 0.8 * cfg.comfort_decel {
            a = a.min(-needed);
        }
    }
    a.clamp(-cfg.a_max_brake, cfg.a_max_drive)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwistLimits {
    pub steering_rate_limit: f64,
    pub jerk_limit: f64,
    pub a_max_brake: f64,
    pub dt: f64,
}

impl Default for TwistLimits {
    fn default() -> Self {
        Self { steering_rate_limit: 0.7, jerk_limit: 10.0, a_max_brake: 6.0, dt: 0.02 }
    }
}

pub fn twist_filter(raw: &ControlCommand, prev: &ControlCommand, lim: &TwistLimits) -> ControlCommand {
    let ds = lim.steering_rate_limit * lim.dt;
    let steering_target = prev.steering_target + (raw.steering_target - prev.steering_target).clamp(-ds, ds);
    if raw.emergency_brake {
        return ControlCommand { steering_target, accel: -lim.a_max_brake, emergency_brake: true };
    }
    let da = lim.jerk_limit * lim.dt;
    ControlCommand { steering_target, accel: prev.accel + (raw.accel - prev.accel).clamp(-da, da), emergency_brake: false }
}

/// Sign changes of `signal`, counting a side only once the excursion
/// exceeds `band` so sub-band ripple does not register.
pub fn zero_crossings(signal: &[f64], band: f64) -> usize {
    let mut side = 0i8;
    let mut count = 0;
    for &x in signal {
        let s = if x > band { 1 } else if x < -band { -1 } else { 0 };
        if s != 0 && side != 0 && s != side {
            count += 1;
        }
        if s != 0 {
            side = s;
        }
    }
    count
}

/// Heading error of the pose against the route tangent at `s`.
pub fn heading_error(route: &Route, pose: &Pose2, s: f64) -> f64 {
    wrap_angle(pose.yaw - route.path.heading_at(s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{bicycle_step, VehicleParams, VehicleState, WeatherState};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn straight(len: f64, speed: f64) -> Route {
        Route::from_polyline(&Polyline::new(vec![Vec2::ZERO, Vec2::new(len, 0.0)]), 1.0, speed).unwrap()
    }

    fn circle_route(r: f64, n: usize) -> Route {
        let wps = (0..n)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / n as f64;
                Waypoint { pose: Pose2::new(r * a.cos(), r * a.sin(), wrap_angle(a + PI / 2.0)), target_speed: 3.0 }
            })
            .collect();
        Route::new(wps, true).unwrap()
    }

    #[test]
    fn straight_goal_ahead() {
        let g = select_goal(&straight(50.0, 3.0), &Pose2::new(10.0, 0.0, 0.0), 5.0).unwrap();
        assert!((g.gx - 5.0).abs() < 1e-12 && g.gy.abs() < 1e-12);
    }

    #[test]
    fn offset_left_goal_to_right() {
        let g = select_goal(&straight(50.0, 3.0), &Pose2::new(10.0, 1.0, 0.0), 5.0).unwrap();
        assert!(g.gy < 0.0);
        assert!(((g.gx * g.gx + g.gy * g.gy).sqrt() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn cyclic_goal_wraps() {
        let route = circle_route(20.0, 40);
        // just behind the start, heading counter-clockwise
        let a = -0.05f64;
        let pose = Pose2::new(20.0 * a.cos(), 20.0 * a.sin(), a + PI / 2.0);
        let mut tracker = RouteTracker::new();
        let (g, track) = tracker.goal(&route, &pose, 6.0).unwrap();
        assert!(track.segment == route.segment_count() - 1);
        // wrapped onto the first lap segment
        assert!(g.s > route.length());
        let world = pose.transform_point(Vec2::new(g.gx, g.gy));
        let expected_angle = a + 2.0 * (6.0f64 / 40.0).asin();
        assert!((world.angle() - expected_angle).abs() < 0.02);
    }

    #[test]
    fn open_route_extrapolates_past_end() {
        let route = straight(10.0, 3.0);
        let g = select_goal(&route, &Pose2::new(9.0, 0.0, 0.0), 5.0).unwrap();
        assert!((g.gx - 5.0).abs() < 1e-9);
    }

    #[test]
    fn off_route_error() {
        assert!(matches!(select_goal(&straight(50.0, 3.0), &Pose2::new(10.0, 6.0, 0.0), 5.0), Err(RouteError::OffRoute { .. })));
    }

    #[test]
    fn steering_examples() {
        let g = |gx, gy| GoalPoint { gx, gy, lookahead: 5.0, segment: 0, s: 0.0 };
        assert_eq!(pure_pursuit_steer(&g(5.0, 0.0), 3.0, 10.0), 0.0);
        // chord construction: center at (0, R) with R^2 = 4^2 + (R-3)^2
        let r: f64 = (16.0 + 9.0) / 6.0;
        let expected = (3.0 / r).atan();
        let d = pure_pursuit_steer(&g(4.0, 3.0), 3.0, 10.0);
        assert!((d - expected).abs() < 1e-12);
        assert!((d - 0.6240).abs() < 1e-4);
        assert_eq!(pure_pursuit_steer(&g(4.0, -3.0), 3.0, 10.0), -d);
        assert_eq!(pure_pursuit_steer(&g(4.0, 3.0), 3.0, 0.55), 0.55);
    }

    #[test]
    fn velocity_examples() {
        let cfg = VelocityConfig::default();
        let clear = velocity_set(&VelocityInputs { waypoint_speed: 5.0, ..Default::default() }, &cfg);
        assert_eq!(clear.speed, 5.0);
        assert_eq!(clear.reason, SpeedReason::Waypoint);
        let stop = velocity_set(&VelocityInputs { waypoint_speed: 8.0, stop_lines: vec![10.0], ..Default::default() }, &cfg);
        assert!((stop.speed - 40f64.sqrt()).abs() < 1e-12);
        assert_eq!(stop.stop_distance, Some(10.0));
        let at_line = velocity_set(&VelocityInputs { waypoint_speed: 8.0, stop_lines: vec![0.0], ..Default::default() }, &cfg);
        assert_eq!(at_line.speed, 0.0);
        let ped = velocity_set(&VelocityInputs { waypoint_speed: 5.0, occupied_crosswalks: vec![12.0], ..Default::default() }, &cfg);
        assert_eq!(ped.speed, 0.0);
        assert_eq!(ped.reason, SpeedReason::Crosswalk);
        let blocked = velocity_set(&VelocityInputs { waypoint_speed: 5.0, obstacle: Some(3.0), ..Default::default() }, &cfg);
        assert_eq!(blocked.speed, 0.0);
    }

    #[test]
    fn twist_examples() {
        let lim = TwistLimits::default();
        let prev = ControlCommand { steering_target: 0.1, accel: 0.5, emergency_brake: false };
        let small = ControlCommand { steering_target: 0.105, accel: 0.6, emergency_brake: false };
        assert_eq!(twist_filter(&small, &prev, &lim), small);
        let step = ControlCommand { steering_target: 0.6, accel: 0.5, emergency_brake: false };
        assert!((twist_filter(&step, &prev, &lim).steering_target - 0.114).abs() < 1e-12);
        let eb = ControlCommand { steering_target: 0.1, accel: 2.0, emergency_brake: true };
        let out = twist_filter(&eb, &prev, &lim);
        assert!(out.emergency_brake && out.accel == -6.0);
    }

    #[test]
    fn record_route_examples() {
        let poses: Vec<Pose2> = (0..=100).map(|i| Pose2::new(i as f64 * 0.1, 0.0, 0.0)).collect();
        let r = record_route(&poses, 1.0, &|_| 3.0).unwrap();
        assert_eq!(r.waypoints().len(), 11);
        assert!(!r.is_cyclic());

        let still = vec![Pose2::IDENTITY; 50];
        assert!(matches!(record_route(&still, 1.0, &|_| 3.0), Err(RouteError::TooShort(1))));

        let loop_poses: Vec<Pose2> = (0..=400)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / 400.0 - PI / 2.0;
                Pose2::new(10.0 * a.cos(), 10.0 + 10.0 * a.sin(), a + PI / 2.0)
            })
            .collect();
        assert!(record_route(&loop_poses, 1.0, &|_| 3.0).unwrap().is_cyclic());
    }

    #[test]
    fn csv_round_trip() {
        let r = circle_route(7.3, 13);
        let text = r.to_csv();
        assert!(text.lines().nth(1) == Some("x,y,yaw,speed"));
        let back = Route::from_csv(&text).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.to_csv(), text);
    }

    #[test]
    fn csv_errors_carry_line() {
        let bad = "x,y,yaw,speed\n0,0,0,1\n1,zero,0,1\n";
        assert!(matches!(Route::from_csv(bad), Err(RouteError::Csv { line: 3, .. })));
    }

    fn track_straight(y0: f64, speed: f64, seconds: f64) -> Vec<f64> {
        let route = straight(200.0, speed);
        let params = VehicleParams::default();
        let mut v = VehicleState::new(Pose2::new(0.0, y0, 0.0), speed, params);
        let mut tracker = RouteTracker::new();
        let mut prev = ControlCommand::default();
        let mut errors = Vec::new();
        for _ in 0..(seconds / 0.02) as usize {
            let (g, tr) = tracker.goal(&route, &v.pose, lookahead_distance(v.speed)).unwrap();
            errors.push(tr.cross_track);
            let raw = ControlCommand { steering_target: pure_pursuit_steer(&g, params.wheelbase, params.steering_limit), accel: 0.0, emergency_brake: false };
            let cmd = twist_filter(&raw, &prev, &TwistLimits::default());
            prev = cmd;
            v = bicycle_step(&v, &cmd, &WeatherState::clear(), 0.02);
        }
        errors
    }

    #[test]
    fn converges_from_offset() {
        let errs = track_straight(1.0, 3.0, 10.0);
        assert!(errs.last().unwrap().abs() < 0.05);
        assert!(zero_crossings(&errs, 0.01) <= 1);
    }

    proptest! {
        #[test]
        fn steering_is_odd(gx in 0.1..12.0f64, gy in -12.0..12.0f64) {
            let g = GoalPoint { gx, gy, lookahead: 5.0, segment: 0, s: 0.0 };
            let m = GoalPoint { gy: -gy, ..g };
            prop_assert_eq!(pure_pursuit_steer(&g, 3.0, 0.55), -pure_pursuit_steer(&m, 3.0, 0.55));
        }

        #[test]
        fn twist_respects_limits(a0 in -6.0..2.0f64, a1 in -20.0..20.0f64, d0 in -0.5..0.5f64, d1 in -2.0..2.0f64) {
            let lim = TwistLimits::default();
            let prev = ControlCommand { steering_target: d0, accel: a0, emergency_brake: false };
            let raw = ControlCommand { steering_target: d1, accel: a1, emergency_brake: false };
            let out = twist_filter(&raw, &prev, &lim);
            prop_assert!((out.steering_target - d0).abs() <= lim.steering_rate_limit * lim.dt + 1e-15);
            prop_assert!((out.accel - a0).abs() <= lim.jerk_limit * lim.dt + 1e-12);
        }

        #[test]
        fn goal_distance_equals_lookahead(x in 1.0..150.0f64, y in -2.0..2.0f64, yaw in -0.5..0.5f64, ld in 3.0..12.0f64) {
            let route = straight(200.0, 3.0);
            let g = select_goal(&route, &Pose2::new(x, y, yaw), ld).unwrap();
            let d = (g.gx * g.gx + g.gy * g.gy).sqrt();
            prop_assert!(d >= 0.8 * ld && d <= 1.2 * ld);
            prop_assert!(g.s >= x - 1e-9);
        }
    }
}
