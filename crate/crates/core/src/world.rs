//! Static geometric world compiled from the road network, plus exact ray
//! casting and oriented-rectangle collision tests.

use serde::{Deserialize, Serialize};

use crate::geom::{point_in_polygon, segment_distance, Polyline, Vec2};
use crate::map_ingest::{Bounds, IntersectionControl, Projection, RoadNetwork};

pub const DEFAULT_LANE_WIDTH: f64 = 3.5;

pub type AgentId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    pub a: Vec2,
    pub b: Vec2,
    /// Building that contributed the wall.
    pub source: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanePath {
    pub segment: i64,
    /// Travels in the direction of the OSM node order.
    pub forward: bool,
    /// 0 is the lane nearest the centerline.
    pub lane: u32,
    /// Signed lateral offset from the centerline (left positive, relative to
    /// the segment's node order).
    pub offset: f64,
    /// Node ids in travel order; vertex `i` of `path` sits beside node `i`.
    pub node_ids: Vec<i64>,
    pub path: Polyline,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldStopLine {
    pub index: usize,
    pub segment: i64,
    /// Direction of travel the line applies to.
    pub forward: bool,
    pub intersection: Option<i64>,
    /// End points of the line across the lanes it governs.
    pub a: Vec2,
    pub b: Vec2,
    /// Heading of the governed traffic.
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldCrosswalk {
    pub index: usize,
    pub segment: i64,
    pub center: Vec2,
    /// Heading of the road through the crosswalk.
    pub road_heading: f64,
    /// Extent along the road.
    pub width: f64,
    pub road_half_width: f64,
}

impl WorldCrosswalk {
    /// (along-road, across-road) coordinates of `p` relative to the center.
    pub fn local(&self, p: Vec2) -> Vec2 {
        (p - self.center).rotate(-self.road_heading)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldIntersection {
    pub id: i64,
    pub position: Vec2,
    pub control: IntersectionControl,
    /// Largest distance from `position` to a member node.
    pub radius: f64,
}

#[derive(Debug, Clone)]
pub struct StaticWorld {
    pub projection: Projection,
    pub bounds: Bounds,
    pub lane_width: f64,
    pub obstacle_segments: Vec<Wall>,
    pub lane_paths: Vec<LanePath>,
    pub stop_lines: Vec<WorldStopLine>,
    pub crosswalks: Vec<WorldCrosswalk>,
    pub intersections: Vec<WorldIntersection>,
    wall_boxes: Vec<(Vec2, Vec2)>,
}

impl StaticWorld {
    /// A world with walls only; used by tests and synthetic scenes.
    pub fn from_walls(walls: Vec<Wall>) -> Self {
        let mut min = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for w in &walls {
            for p in [w.a, w.b] {
                min = Vec2::new(min.x.min(p.x), min.y.min(p.y));
                max = Vec2::new(max.x.max(p.x), max.y.max(p.y));
            }
        }
        if walls.is_empty() {
            min = Vec2::ZERO;
            max = Vec2::ZERO;
        }
        let mut w = StaticWorld {
            projection: Projection::new(0.0, 0.0),
            bounds: Bounds { min, max },
            lane_width: DEFAULT_LANE_WIDTH,
            obstacle_segments: walls,
            lane_paths: Vec::new(),
            stop_lines: Vec::new(),
            crosswalks: Vec::new(),
            intersections: Vec::new(),
            wall_boxes: Vec::new(),
        };
        w.index_walls();
        w
    }

    fn index_walls(&mut self) {
        self.wall_boxes = self
            .obstacle_segments
            .iter()
            .map(|w| (Vec2::new(w.a.x.min(w.b.x), w.a.y.min(w.b.y)), Vec2::new(w.a.x.max(w.b.x), w.a.y.max(w.b.y))))
            .collect();
    }

    pub fn lane_path(&self, segment: i64, forward: bool, lane: u32) -> Option<&LanePath> {
        self.lane_paths.iter().find(|l| l.segment == segment && l.forward == forward && l.lane == lane)
    }

    pub fn intersection(&self, id: i64) -> Option<&WorldIntersection> {
        self.intersections.iter().find(|x| x.id == id)
    }

    /// GeoJSON overlay (WGS84) of walls and lane paths.
    pub fn to_geojson(&self) -> serde_json::Value {
        let ll = |p: &Vec2| {
            let (lat, lon) = self.projection.unproject(*p);
            serde_json::json!([lon, lat])
        };
        let mut features = Vec::new();
        for w in &self.obstacle_segments {
            features.push(serde_json::json!({
                "type": "Feature",
                "properties": {"kind": "wall", "building": w.source},
                "geometry": {"type": "LineString", "coordinates": [ll(&w.a), ll(&w.b)]},
            }));
        }
        for l in &self.lane_paths {
            features.push(serde_json::json!({
                "type": "Feature",
                "properties": {"kind": "lane", "segment": l.segment, "forward": l.forward, "lane": l.lane},
                "geometry": {"type": "LineString", "coordinates": l.path.points().iter().map(ll).collect::<Vec<_>>()},
            }));
        }
        serde_json::json!({"type": "FeatureCollection", "features": features})
    }
}

/// Compiles buildings into wall segments and road segments into lane paths,
/// stop lines and crosswalks in the metric frame.
pub fn compile_world(net: &RoadNetwork, lane_width: f64) -> StaticWorld {
    let mut walls = Vec::new();
    for b in &net.buildings {
        let ring = &b.polygon;
        for i in 0..ring.len().saturating_sub(1) {
            if ring[i] != ring[i + 1] {
                walls.push(Wall { a: ring[i], b: ring[i + 1], source: b.id });
            }
        }
        // unclosed rings still get their closing edge
        if ring.len() >= 3 && ring.first() != ring.last() {
            walls.push(Wall { a: ring[ring.len() - 1], b: ring[0], source: b.id });
        }
    }

    let mut lane_paths = Vec::new();
    for seg in &net.segments {
        let center = seg.polyline();
        let n = seg.lanes_per_direction();
        if seg.oneway {
            for i in 0..n {
                let offset = ((n as f64 - 1.0) / 2.0 - i as f64) * lane_width;
                lane_paths.push(LanePath {
                    segment: seg.id,
                    forward: true,
                    lane: i,
                    offset,
                    node_ids: seg.node_ids.clone(),
                    path: center.offset(offset),
                });
            }
        } else {
            let reversed = center.reversed();
            let mut rev_nodes = seg.node_ids.clone();
            rev_nodes.reverse();
            for i in 0..n {
                let d = (i as f64 + 0.5) * lane_width;
                lane_paths.push(LanePath {
                    segment: seg.id,
                    forward: true,
                    lane: i,
                    offset: -d,
                    node_ids: seg.node_ids.clone(),
                    path: center.offset(-d),
                });
                lane_paths.push(LanePath {
                    segment: seg.id,
                    forward: false,
                    lane: i,
                    offset: d,
                    node_ids: rev_nodes.clone(),
                    path: reversed.offset(-d),
                });
            }
        }
    }

    let junction_nodes = |seg_id: i64| -> Vec<(i64, i64)> {
        net.intersections
            .iter()
            .filter(|x| x.segments.contains(&seg_id))
            .flat_map(|x| x.node_ids.iter().map(move |&n| (x.id, n)))
            .collect()
    };

    let mut stop_lines = Vec::new();
    for sl in &net.stop_lines {
        let Some(seg) = net.segment(sl.segment) else { continue };
        let pl = seg.polyline();
        let mut nearest: Option<(f64, i64, f64)> = None;
        for (xid, node) in junction_nodes(seg.id) {
            if let Some(s) = seg.arclength_of_node(node) {
                let d = (s - sl.arclength).abs();
                if nearest.map_or(true, |(bd, _, _)| d < bd) {
                    nearest = Some((d, xid, s));
                }
            }
        }
        let forward = match nearest {
            Some((_, _, s)) => s > sl.arclength,
            None => sl.arclength > pl.length() / 2.0,
        };
        let forward = forward || seg.oneway;
        let p = pl.point_at(sl.arclength);
        let heading = if forward { pl.heading_at(sl.arclength) } else { crate::geom::wrap_angle(pl.heading_at(sl.arclength) + std::f64::consts::PI) };
        let right = Vec2::from_angle(heading).perp() * -1.0;
        let lanes = seg.lanes_per_direction() as f64 * lane_width;
        let (a, b) = if seg.oneway {
            (p - right * (lanes / 2.0), p + right * (lanes / 2.0))
        } else {
            (p, p + right * lanes)
        };
        stop_lines.push(WorldStopLine {
            index: stop_lines.len(),
            segment: seg.id,
            forward,
            intersection: nearest.map(|(_, x, _)| x),
            a,
            b,
            heading,
        });
    }

    let crosswalks = net
        .crosswalks
        .iter()
        .filter_map(|cw| {
            let seg = net.segment(cw.segment)?;
            let pl = seg.polyline();
            Some((cw, seg, pl))
        })
        .enumerate()
        .map(|(index, (cw, seg, pl))| WorldCrosswalk {
            index,
            segment: cw.segment,
            center: pl.point_at(cw.arclength),
            road_heading: pl.heading_at(cw.arclength),
            width: cw.width,
            road_half_width: seg.lane_count as f64 * lane_width / 2.0,
        })
        .collect();

    let intersections = net
        .intersections
        .iter()
        .map(|x| {
            let radius = x
                .node_ids
                .iter()
                .filter_map(|n| {
                    net.segments.iter().find_map(|s| s.node_ids.iter().position(|m| m == n).map(|i| s.centerline[i]))
                })
                .map(|p| p.dist(x.position))
                .fold(0.0, f64::max);
            WorldIntersection { id: x.id, position: x.position, control: x.control, radius }
        })
        .collect();

    let mut world = StaticWorld {
        projection: net.projection,
        bounds: net.bounds,
        lane_width,
        obstacle_segments: walls,
        lane_paths,
        stop_lines,
        crosswalks,
        intersections,
        wall_boxes: Vec::new(),
    };
    world.index_walls();
    world
}

/// Oriented rectangle occupied by an agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub center: Vec2,
    pub yaw: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl Footprint {
    pub fn new(center: Vec2, yaw: f64, half_length: f64, half_width: f64) -> Self {
        debug_assert!(half_length > 0.0 && half_width > 0.0);
        Self { center, yaw, half_length, half_width }
    }

    pub fn axes(&self) -> (Vec2, Vec2) {
        let u = Vec2::from_angle(self.yaw);
        (u, u.perp())
    }

    /// Counter-clockwise from the front-right corner.
    pub fn corners(&self) -> [Vec2; 4] {
        let (u, v) = self.axes();
        let (l, w) = (u * self.half_length, v * self.half_width);
        [self.center + l - w, self.center + l + w, self.center - l + w, self.center - l - w]
    }

    pub fn edges(&self) -> [(Vec2, Vec2); 4] {
        let c = self.corners();
        [(c[0], c[1]), (c[1], c[2]), (c[2], c[3]), (c[3], c[0])]
    }

    pub fn diagonal(&self) -> f64 {
        self.half_length.hypot(self.half_width)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let (u, v) = self.axes();
        let d = p - self.center;
        d.dot(u).abs() <= self.half_length && d.dot(v).abs() <= self.half_width
    }

    /// Does the rectangle touch the closed disk?
    pub fn overlaps_disk(&self, center: Vec2, radius: f64) -> bool {
        let (u, v) = self.axes();
        let d = center - self.center;
        let lx = d.dot(u).clamp(-self.half_length, self.half_length);
        let ly = d.dot(v).clamp(-self.half_width, self.half_width);
        (self.center + u * lx + v * ly).dist(center) <= radius
    }

    pub fn distance_to_point(&self, p: Vec2) -> f64 {
        let (u, v) = self.axes();
        let d = p - self.center;
        let dx = (d.dot(u).abs() - self.half_length).max(0.0);
        let dy = (d.dot(v).abs() - self.half_width).max(0.0);
        dx.hypot(dy)
    }
}

/// Separating-axis overlap test for two oriented rectangles (touching counts).
pub fn overlap(a: &Footprint, b: &Footprint) -> bool {
    let (au, av) = a.axes();
    let (bu, bv) = b.axes();
    let d = b.center - a.center;
    for axis in [au, av, bu, bv] {
        let ra = a.half_length * au.dot(axis).abs() + a.half_width * av.dot(axis).abs();
        let rb = b.half_length * bu.dot(axis).abs() + b.half_width * bv.dot(axis).abs();
        if d.dot(axis).abs() > ra + rb {
            return false;
        }
    }
    true
}

/// Euclidean distance between two rectangles, zero when they overlap.
pub fn footprint_distance(a: &Footprint, b: &Footprint) -> f64 {
    if overlap(a, b) {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for (p0, p1) in a.edges() {
        for (q0, q1) in b.edges() {
            best = best.min(segment_distance(p0, p1, q0, q1));
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "id")]
pub enum HitTarget {
    Static,
    Agent(AgentId),
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayHit {
    pub distance: f64,
    pub hit_point: Vec2,
    pub target: HitTarget,
}

/// Ray parameter `t` at which `origin + t * dir` meets segment `a-b`, if
/// the crossing lies in `(0, max_t]`. Parallel segments never hit.
pub fn ray_segment_intersection(origin: Vec2, dir: Vec2, a: Vec2, b: Vec2, max_t: f64) -> Option<f64> {
    let e = b - a;
    let denom = dir.cross(e);
    if denom == 0.0 {
        return None;
    }
    let w = a - origin;
    let t = w.cross(e) / denom;
    let u = w.cross(dir) / denom;
    (t > 0.0 && t <= max_t && (0.0..=1.0).contains(&u)).then_some(t)
}

/// Nearest hit among static walls and agent rectangle edges. Walls are
/// tested first, then agents in slice order; only strictly nearer hits
/// replace an earlier one.
pub fn raycast(world: &StaticWorld, agents: &[(AgentId, Footprint)], origin: Vec2, angle: f64, max_range: f64) -> RayHit {
    debug_assert!(max_range > 0.0);
    let dir = Vec2::from_angle(angle);
    let end = origin + dir * max_range;
    let slack = 1e-9 * (1.0 + max_range);
    let (rmin, rmax) = (
        Vec2::new(origin.x.min(end.x) - slack, origin.y.min(end.y) - slack),
        Vec2::new(origin.x.max(end.x) + slack, origin.y.max(end.y) + slack),
    );
    let mut best_t = f64::INFINITY;
    let mut target = HitTarget::None;
    for (w, (lo, hi)) in world.obstacle_segments.iter().zip(&world.wall_boxes) {
        // boxes that miss the ray's extent cannot contain a hit
        if hi.x < rmin.x || lo.x > rmax.x || hi.y < rmin.y || lo.y > rmax.y {
            continue;
        }
        if let Some(t) = ray_segment_intersection(origin, dir, w.a, w.b, max_range) {
            if t < best_t {
                best_t = t;
                target = HitTarget::Static;
            }
        }
    }
    for (id, fp) in agents {
        if fp.center.dist(origin) > max_range + fp.diagonal() {
            continue;
        }
        for (a, b) in fp.edges() {
            if let Some(t) = ray_segment_intersection(origin, dir, a, b, max_range) {
                if t < best_t {
                    best_t = t;
                    target = HitTarget::Agent(*id);
                }
            }
        }
    }
    if target == HitTarget::None {
        RayHit { distance: max_range, hit_point: end, target }
    } else {
        RayHit { distance: best_t, hit_point: origin + dir * best_t, target }
    }
}

/// True when `p` lies inside any building footprint.
pub fn inside_building(net: &RoadNetwork, p: Vec2) -> bool {
    net.buildings.iter().any(|b| point_in_polygon(p, &b.polygon))
}
