//! Agent routes assembled from lane paths, annotated with the stop lines
//! and crosswalks they pass.

use std::f64::consts::FRAC_PI_4;

use serde::{Deserialize, Serialize};

use crate::geom::{wrap_angle, Polyline, Pose2, Vec2};
use crate::guidance::{Route, Waypoint};
use crate::map_ingest::RoadNetwork;
use crate::world::StaticWorld;

use super::spec::{LegRef, PathSpec};
use super::ScenarioError;

/// Waypoint spacing of routes built from lane paths.
pub const LANE_ROUTE_SPACING: f64 = 2.0;
/// Legs meeting at a sharper angle than this are joined by a chord
/// between points `JUNCTION_TRIM` back from the shared node, which keeps
/// the lane centres of the two roads from meeting in a kink.
const JUNCTION_TURN: f64 = 0.5;
const JUNCTION_TRIM: f64 = 3.5;
/// Lateral acceleration allowed on curved lane routes.
pub const CURVE_LATERAL_ACCEL: f64 = 1.0;
const CURVE_DECEL: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteStop {
    pub line: usize,
    pub intersection: Option<i64>,
    /// Arclength of the line along the route.
    pub s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteCrossing {
    pub crosswalk: usize,
    /// Arclengths of the near and far crosswalk edges.
    pub near: f64,
    pub far: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentRoute {
    pub route: Route,
    pub stops: Vec<RouteStop>,
    pub crossings: Vec<RouteCrossing>,
}

impl AgentRoute {
    /// Finds the stop lines and crosswalks the route runs over.
    pub fn annotate(world: &StaticWorld, route: Route) -> AgentRoute {
        let path = route.path();
        let mut stops = Vec::new();
        for sl in &world.stop_lines {
            let mid = sl.a.lerp(sl.b, 0.5);
            let pr = path.project(mid);
            let aligned = wrap_angle(path.heading_at(pr.s) - sl.heading).abs() < FRAC_PI_4;
            if aligned && pr.lateral.abs() <= sl.a.dist(sl.b) / 2.0 + 0.5 && pr.s > 0.0 && pr.s < path.length() {
                stops.push(RouteStop { line: sl.index, intersection: sl.intersection, s: pr.s });
            }
        }
        stops.sort_by(|a, b| a.s.total_cmp(&b.s));
        let mut crossings = Vec::new();
        for cw in &world.crosswalks {
            let pr = path.project(cw.center);
            let along = wrap_angle(path.heading_at(pr.s) - cw.road_heading).sin().abs() < FRAC_PI_4.sin();
            if along && pr.lateral.abs() <= cw.road_half_width && pr.s > 0.0 && pr.s < path.length() {
                crossings.push(RouteCrossing { crosswalk: cw.index, near: pr.s - cw.width / 2.0, far: pr.s + cw.width / 2.0 });
            }
        }
        crossings.sort_by(|a, b| a.near.total_cmp(&b.near));
        AgentRoute { route, stops, crossings }
    }

    pub fn from_lanes(net: &RoadNetwork, world: &StaticWorld, spec: &PathSpec, cruise: f64) -> Result<AgentRoute, ScenarioError> {
        Ok(Self::annotate(world, lane_route(net, world, spec, cruise)?))
    }

    /// Pose at arclength `s` on the route.
    pub fn pose_at(&self, s: f64) -> Pose2 {
        let p = self.route.path().point_at(s);
        Pose2::new(p.x, p.y, self.route.path().heading_at(s))
    }
}

fn leg_points(world: &StaticWorld, leg: &LegRef) -> Result<Vec<Vec2>, ScenarioError> {
    let lane = world
        .lane_path(leg.segment, leg.forward, leg.lane)
        .ok_or_else(|| ScenarioError::MissingElement(format!("lane {} of way {} (forward: {})", leg.lane, leg.segment, leg.forward)))?;
    let ids = &lane.node_ids;
    let pts = lane.path.points();
    let missing = |n: i64| ScenarioError::MissingElement(format!("node {n} on way {}", leg.segment));
    let from = match leg.from_node {
        Some(n) => ids.iter().position(|&m| m == n).ok_or_else(|| missing(n))?,
        None => 0,
    };
    let Some(to_node) = leg.to_node else {
        return Ok(pts[from..].to_vec());
    };
    if let Some(j) = (from + 1..ids.len()).find(|&j| ids[j] == to_node) {
        return Ok(pts[from..=j].to_vec());
    }
    // closed ways wrap through their first node
    let k = ids.iter().position(|&m| m == to_node).ok_or_else(|| missing(to_node))?;
    if ids.first() != ids.last() || k == 0 {
        return Err(ScenarioError::MissingElement(format!("node {to_node} after node {} on way {}", ids[from], leg.segment)));
    }
    let mut out = pts[from..].to_vec();
    out.extend_from_slice(&pts[1..=k]);
    Ok(out)
}

/// The part of `line` between arclengths `s0` and `s1`.
fn clip(line: &Polyline, s0: f64, s1: f64) -> Vec<Vec2> {
    let mut out = vec![line.point_at(s0)];
    out.extend(line.points().iter().zip(line.cumulative()).filter(|(_, &c)| c > s0 && c < s1).map(|(p, _)| *p));
    out.push(line.point_at(s1));
    out
}

/// Caps waypoint speeds at `sqrt(a_lat / kappa)` and makes the caps
/// reachable at `CURVE_DECEL`.
fn curve_limited(mut wps: Vec<Waypoint>) -> Vec<Waypoint> {
    let n = wps.len();
    for i in 1..n.saturating_sub(1) {
        let (a, b) = (wps[i - 1].pose, wps[i + 1].pose);
        let ds = a.position().dist(b.position());
        let kappa = wrap_angle(b.yaw - a.yaw).abs() / ds.max(1e-9);
        if kappa > 1e-6 {
            let cap = (CURVE_LATERAL_ACCEL / kappa).sqrt();
            wps[i].target_speed = wps[i].target_speed.min(cap);
        }
    }
    for i in (0..n.saturating_sub(1)).rev() {
        let ds = wps[i].pose.position().dist(wps[i + 1].pose.position());
        let reach = (wps[i + 1].target_speed.powi(2) + 2.0 * CURVE_DECEL * ds).sqrt();
        wps[i].target_speed = wps[i].target_speed.min(reach);
    }
    wps
}

/// Concatenates the legs, rounds sharp joins, trims and resamples at `LANE_ROUTE_SPACING`.
/// Each waypoint's speed is the cruise speed capped by its way's limit.
pub fn lane_route(net: &RoadNetwork, world: &StaticWorld, spec: &PathSpec, cruise: f64) -> Result<Route, ScenarioError> {
    let mut points: Vec<Vec2> = Vec::new();
    let mut leg_of: Vec<usize> = Vec::new();
    let mut speeds = Vec::new();
    let mut legs = spec.legs.iter().map(|leg| leg_points(world, leg)).collect::<Result<Vec<_>, _>>()?;
    for i in 1..legs.len() {
        let (a, b) = (Polyline::new(legs[i - 1].clone()), Polyline::new(legs[i].clone()));
        let turn = wrap_angle(b.heading_at(0.0) - a.heading_at(a.length())).abs();
        if turn > JUNCTION_TURN && a.length() > 2.0 * JUNCTION_TRIM && b.length() > 2.0 * JUNCTION_TRIM {
            legs[i - 1] = clip(&a, 0.0, a.length() - JUNCTION_TRIM);
            legs[i] = clip(&b, JUNCTION_TRIM, b.length());
        }
    }
    for (i, (leg, pts)) in spec.legs.iter().zip(legs).enumerate() {
        let limit = net.segment(leg.segment).map_or(cruise, |s| s.speed_limit);
        speeds.push(cruise.min(limit));
        for p in pts {
            if points.last().map_or(true, |q| q.dist(p) > 1e-6) {
                points.push(p);
                leg_of.push(i);
            }
        }
    }
    if points.len() < 2 {
        return Err(ScenarioError::Invalid("route legs give fewer than two points".into()));
    }
    let line = Polyline::new(points);
    let (s0, s1) = (spec.trim_start, line.length() - spec.trim_end);
    if !(s1 - s0 >= LANE_ROUTE_SPACING) {
        return Err(ScenarioError::Invalid(format!("trimmed route is too short ({:.1} m)", s1 - s0)));
    }
    let n = ((s1 - s0) / LANE_ROUTE_SPACING).ceil() as usize;
    let waypoints = (0..=n)
        .map(|k| {
            let s = s0 + (s1 - s0) * k as f64 / n as f64;
            let p = line.point_at(s);
            // the vertex ending a segment belongs to the leg that segment leads into
            let leg = leg_of[(line.segment_of(s) + 1).min(leg_of.len() - 1)];
            Waypoint { pose: Pose2::new(p.x, p.y, line.heading_at(s)), target_speed: speeds[leg] }
        })
        .collect::<Vec<_>>();
    Ok(Route::new(curve_limited(waypoints), false)?)
}
