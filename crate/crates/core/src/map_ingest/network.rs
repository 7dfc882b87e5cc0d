use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::osm::{OsmDocument, OsmNode, OsmWay, Tags};
use super::projection::Projection;
use super::MapError;
use crate::geom::{Polyline, Vec2};

pub const NETWORK_FORMAT_VERSION: u32 = 1;

/// 25 mph, applied when `maxspeed` is absent or unparseable.
pub const DEFAULT_SPEED_LIMIT: f64 = 11.18;
pub const DEFAULT_CROSSWALK_WIDTH: f64 = 3.0;
/// A stop node further than this (along its way) from a junction node does
/// not make that junction stop-controlled.
pub const STOP_ASSOCIATION_RADIUS: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Vec2,
    pub max: Vec2,
}

impl Bounds {
    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn expanded(&self, margin: f64) -> Bounds {
        Bounds { min: self.min - Vec2::new(margin, margin), max: self.max + Vec2::new(margin, margin) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    /// OSM way id.
    pub id: i64,
    pub node_ids: Vec<i64>,
    pub centerline: Vec<Vec2>,
    /// Total lanes across both directions.
    pub lane_count: u32,
    /// m/s
    pub speed_limit: f64,
    pub oneway: bool,
    pub roundabout: bool,
    pub lanes_defaulted: bool,
    pub speed_defaulted: bool,
    /// Ids of the intersections this segment is connected to.
    pub junctions: Vec<i64>,
}

impl Segment {
    pub fn polyline(&self) -> Polyline {
        Polyline::new(self.centerline.clone())
    }

    pub fn length(&self) -> f64 {
        self.polyline().length()
    }

    pub fn lanes_per_direction(&self) -> u32 {
        if self.oneway {
            self.lane_count.max(1)
        } else {
            (self.lane_count / 2).max(1)
        }
    }

    /// Arclength of the vertex carrying `node_id`, if present.
    pub fn arclength_of_node(&self, node_id: i64) -> Option<f64> {
        let i = self.node_ids.iter().position(|&n| n == node_id)?;
        Some(self.polyline().cumulative()[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntersectionControl {
    None,
    StopSign,
    Circle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intersection {
    pub id: i64,
    pub position: Vec2,
    pub node_ids: Vec<i64>,
    pub segments: Vec<i64>,
    pub control: IntersectionControl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopLine {
    pub segment: i64,
    pub node: i64,
    pub arclength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crosswalk {
    pub segment: i64,
    pub node: i64,
    pub arclength: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub id: i64,
    /// Closed rings repeat the first vertex at the end.
    pub polygon: Vec<Vec2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadNetwork {
    pub format_version: u32,
    pub projection: Projection,
    pub bounds: Bounds,
    pub segments: Vec<Segment>,
    pub intersections: Vec<Intersection>,
    pub stop_lines: Vec<StopLine>,
    pub crosswalks: Vec<Crosswalk>,
    pub buildings: Vec<Building>,
    /// Highway ways skipped for having fewer than two distinct nodes.
    pub degenerate_ways: Vec<i64>,
}

impl RoadNetwork {
    pub fn segment(&self, id: i64) -> Option<&Segment> {
        self.segments.binary_search_by_key(&id, |s| s.id).ok().map(|i| &self.segments[i])
    }

    pub fn intersection(&self, id: i64) -> Option<&Intersection> {
        self.intersections.iter().find(|i| i.id == id)
    }
}

fn truthy(v: Option<&str>) -> bool {
    matches!(v, Some("yes" | "true" | "1"))
}

/// Parses an OSM `maxspeed` value into m/s. Bare numbers are km/h.
pub fn parse_maxspeed(raw: &str) -> Option<f64> {
    let raw = raw.trim();
    let (num, factor) = if let Some(n) = raw.strip_suffix("mph") {
        (n, 0.44704)
    } else if let Some(n) = raw.strip_suffix("km/h") {
        (n, 1.0 / 3.6)
    } else if let Some(n) = raw.strip_suffix("kmh") {
        (n, 1.0 / 3.6)
    } else {
        (raw, 1.0 / 3.6)
    };
    let v: f64 = num.trim().parse().ok()?;
    (v.is_finite() && v > 0.0).then_some(v * factor)
}

fn dedup_refs(refs: &[i64]) -> Vec<i64> {
    let mut out: Vec<i64> = Vec::with_capacity(refs.len());
    for &r in refs {
        if out.last() != Some(&r) {
            out.push(r);
        }
    }
    out
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, i: usize) -> usize {
        let mut r = i;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut c = i;
        while self.0[c] != r {
            let n = self.0[c];
            self.0[c] = r;
            c = n;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Compiles the highway and building ways of an OSM document into a planar
/// road network. Output order is by ascending OSM id.
pub fn build_network(doc: &OsmDocument, proj: &Projection) -> Result<RoadNetwork, MapError> {
    let nodes: BTreeMap<i64, &OsmNode> = doc.nodes.iter().map(|n| (n.id, n)).collect();
    let mut ways: Vec<&OsmWay> = doc.ways.iter().collect();
    ways.sort_by_key(|w| w.id);

    let project_ref = |r: i64| -> Result<Vec2, MapError> {
        let n = nodes.get(&r).ok_or(MapError::DanglingRefs { missing: vec![r] })?;
        proj.project(n.lat, n.lon)
    };

    let mut segments = Vec::new();
    let mut degenerate_ways = Vec::new();
    let mut buildings = Vec::new();
    for way in &ways {
        if way.tags.contains_key("highway") {
            let mut refs = dedup_refs(&way.node_refs);
            let distinct: BTreeSet<i64> = refs.iter().copied().collect();
            if distinct.len() < 2 {
                degenerate_ways.push(way.id);
                continue;
            }
            let roundabout = way.tag("junction") == Some("roundabout");
            let oneway_tag = way.tag("oneway");
            if oneway_tag == Some("-1") {
                refs.reverse();
            }
            let oneway = roundabout || truthy(oneway_tag) || oneway_tag == Some("-1");
            let lanes = way.tag("lanes").and_then(|v| v.trim().parse::<u32>().ok()).filter(|&n| n >= 1);
            let speed = way.tag("maxspeed").and_then(parse_maxspeed);
            let centerline = refs.iter().map(|&r| project_ref(r)).collect::<Result<Vec<_>, _>>()?;
            segments.push(Segment {
                id: way.id,
                node_ids: refs,
                centerline,
                lane_count: lanes.unwrap_or(if oneway { 1 } else { 2 }),
                speed_limit: speed.unwrap_or(DEFAULT_SPEED_LIMIT),
                oneway,
                roundabout,
                lanes_defaulted: lanes.is_none(),
                speed_defaulted: speed.is_none(),
                junctions: Vec::new(),
            });
        } else if way.tags.contains_key("building") {
            let polygon = way.node_refs.iter().map(|&r| project_ref(r)).collect::<Result<Vec<_>, _>>()?;
            buildings.push(Building { id: way.id, polygon });
        }
    }
    if segments.is_empty() {
        return Err(MapError::EmptyNetwork);
    }

    // node id -> indices of highway segments touching it
    let mut node_segments: BTreeMap<i64, BTreeSet<usize>> = BTreeMap::new();
    for (i, seg) in segments.iter().enumerate() {
        for &n in &seg.node_ids {
            node_segments.entry(n).or_default().insert(i);
        }
    }

    // Roundabout groups: roundabout segments sharing any node.
    let mut uf = UnionFind((0..segments.len()).collect());
    for idxs in node_segments.values() {
        let rb: Vec<usize> = idxs.iter().copied().filter(|&i| segments[i].roundabout).collect();
        for w in rb.windows(2) {
            uf.union(w[0], w[1]);
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..segments.len() {
        if segments[i].roundabout {
            groups.entry(uf.find(i)).or_default().push(i);
        }
    }
    let roundabout_nodes: BTreeSet<i64> = segments
        .iter()
        .filter(|s| s.roundabout)
        .flat_map(|s| s.node_ids.iter().copied())
        .collect();

    let is_stop = |id: i64| nodes.get(&id).map(|n| n.tags.get("highway").map(String::as_str) == Some("stop")).unwrap_or(false);

    let mut intersections = Vec::new();
    for members in groups.values() {
        let member_nodes: BTreeSet<i64> = members.iter().flat_map(|&i| segments[i].node_ids.iter().copied()).collect();
        let mut connected: BTreeSet<i64> = BTreeSet::new();
        for n in &member_nodes {
            for &i in &node_segments[n] {
                connected.insert(segments[i].id);
            }
        }
        let pts: Vec<Vec2> = member_nodes.iter().map(|&n| project_ref(n)).collect::<Result<_, _>>()?;
        let c = pts.iter().fold(Vec2::ZERO, |a, &p| a + p) * (1.0 / pts.len() as f64);
        intersections.push(Intersection {
            id: *member_nodes.iter().next().unwrap(),
            position: c,
            node_ids: member_nodes.into_iter().collect(),
            segments: connected.into_iter().collect(),
            control: IntersectionControl::Circle,
        });
    }
    for (&node, idxs) in &node_segments {
        if idxs.len() < 2 || roundabout_nodes.contains(&node) {
            continue;
        }
        let position = project_ref(node)?;
        let stop_controlled = is_stop(node)
            || idxs.iter().any(|&i| {
                let seg = &segments[i];
                let pl = seg.polyline();
                let here = seg.node_ids.iter().position(|&n| n == node).map(|k| pl.cumulative()[k]);
                seg.node_ids.iter().enumerate().any(|(k, &n)| {
                    is_stop(n) && here.is_some_and(|h| (pl.cumulative()[k] - h).abs() <= STOP_ASSOCIATION_RADIUS)
                })
            });
        intersections.push(Intersection {
            id: node,
            position,
            node_ids: vec![node],
            segments: idxs.iter().map(|&i| segments[i].id).collect(),
            control: if stop_controlled { IntersectionControl::StopSign } else { IntersectionControl::None },
        });
    }
    intersections.sort_by_key(|i| i.id);

    for seg in segments.iter_mut() {
        seg.junctions = intersections.iter().filter(|x| x.segments.contains(&seg.id)).map(|x| x.id).collect();
    }

    let mut stop_lines = Vec::new();
    let mut crosswalks = Vec::new();
    for seg in &segments {
        let pl = seg.polyline();
        for (k, &n) in seg.node_ids.iter().enumerate() {
            let Some(node) = nodes.get(&n) else { continue };
            match node.tags.get("highway").map(String::as_str) {
                Some("stop") => stop_lines.push(StopLine { segment: seg.id, node: n, arclength: pl.cumulative()[k] }),
                Some("crossing") => crosswalks.push(Crosswalk {
                    segment: seg.id,
                    node: n,
                    arclength: pl.cumulative()[k],
                    width: crossing_width(&node.tags),
                }),
                _ => {}
            }
        }
    }

    let bounds = match doc.extent() {
        Some(b) => {
            let lo = proj.project(b.min_lat, b.min_lon)?;
            let hi = proj.project(b.max_lat, b.max_lon)?;
            Bounds { min: lo, max: hi }
        }
        None => Bounds { min: Vec2::ZERO, max: Vec2::ZERO },
    };

    Ok(RoadNetwork {
        format_version: NETWORK_FORMAT_VERSION,
        projection: *proj,
        bounds,
        segments,
        intersections,
        stop_lines,
        crosswalks,
        buildings,
        degenerate_ways,
    })
}

fn crossing_width(tags: &Tags) -> f64 {
    tags.get("width")
        .and_then(|w| w.trim().trim_end_matches('m').trim().parse::<f64>().ok())
        .filter(|w| *w > 0.0)
        .unwrap_or(DEFAULT_CROSSWALK_WIDTH)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map_ingest::parse_osm;

    fn proj() -> Projection {
        Projection::new(40.0, -83.0)
    }

    #[test]
    fn collinear_way_length() {
        let xml = r#"<osm>
          <node id="1" lat="40.0" lon="-83.0"/>
          <node id="2" lat="40.0001" lon="-83.0"/>
          <node id="3" lat="40.0002" lon="-83.0"/>
          <way id="7"><nd ref="1"/><nd ref="2"/><nd ref="3"/><tag k="highway" v="residential"/></way>
        </osm>"#;
        let net = build_network(&parse_osm(xml).unwrap(), &proj()).unwrap();
        assert_eq!(net.segments.len(), 1);
        let expected = 2.0 * 6_371_000.0 * 0.0001_f64.to_radians();
        assert!((net.segments[0].length() - expected).abs() < 1e-9);
        assert!((net.segments[0].length() - 22.239).abs() < 1e-3);
    }

    #[test]
    fn shared_node_makes_intersection() {
        let xml = r#"<osm>
          <node id="1" lat="40.0" lon="-83.001"/>
          <node id="2" lat="40.0" lon="-83.0"/>
          <node id="3" lat="40.001" lon="-83.0"/>
          <way id="10"><nd ref="1"/><nd ref="2"/><tag k="highway" v="residential"/></way>
          <way id="11"><nd ref="2"/><nd ref="3"/><tag k="highway" v="residential"/></way>
        </osm>"#;
        let net = build_network(&parse_osm(xml).unwrap(), &proj()).unwrap();
        assert_eq!(net.intersections.len(), 1);
        assert_eq!(net.intersections[0].segments, vec![10, 11]);
        assert_eq!(net.intersections[0].control, IntersectionControl::None);
        assert_eq!(net.segments[0].junctions, vec![2]);
    }

    #[test]
    fn building_is_not_a_segment() {
        let xml = r#"<osm>
          <node id="1" lat="40.0" lon="-83.0"/>
          <node id="2" lat="40.0" lon="-83.0001"/>
          <node id="3" lat="40.0001" lon="-83.0001"/>
          <node id="4" lat="40.0001" lon="-83.0"/>
          <node id="5" lat="40.001" lon="-83.0"/>
          <way id="1"><nd ref="1"/><nd ref="2"/><nd ref="3"/><nd ref="4"/><nd ref="1"/><tag k="building" v="yes"/></way>
          <way id="2"><nd ref="4"/><nd ref="5"/><tag k="highway" v="service"/></way>
        </osm>"#;
        let net = build_network(&parse_osm(xml).unwrap(), &proj()).unwrap();
        assert_eq!(net.buildings.len(), 1);
        assert_eq!(net.buildings[0].polygon.len(), 5);
        assert_eq!(net.segments.len(), 1);
    }

    #[test]
    fn no_highways_is_an_error() {
        let xml = r#"<osm><node id="1" lat="40" lon="-83"/></osm>"#;
        assert!(matches!(build_network(&parse_osm(xml).unwrap(), &proj()), Err(MapError::EmptyNetwork)));
    }

    #[test]
    fn defaults_and_flags() {
        let xml = r#"<osm>
          <node id="1" lat="40.0" lon="-83.0"/>
          <node id="2" lat="40.001" lon="-83.0"/>
          <way id="3"><nd ref="1"/><nd ref="2"/><tag k="highway" v="residential"/></way>
          <way id="4"><nd ref="1"/><nd ref="2"/><tag k="highway" v="residential"/><tag k="lanes" v="4"/><tag k="maxspeed" v="25 mph"/><tag k="oneway" v="yes"/></way>
        </osm>"#;
        let net = build_network(&parse_osm(xml).unwrap(), &proj()).unwrap();
        let a = net.segment(3).unwrap();
        assert!(a.lanes_defaulted && a.speed_defaulted);
        assert_eq!(a.lane_count, 2);
        assert_eq!(a.lanes_per_direction(), 1);
        assert_eq!(a.speed_limit, DEFAULT_SPEED_LIMIT);
        let b = net.segment(4).unwrap();
        assert!(!b.lanes_defaulted && !b.speed_defaulted && b.oneway);
        assert!((b.speed_limit - 11.176).abs() < 1e-9);
        assert_eq!(b.lanes_per_direction(), 4);
    }

    #[test]
    fn maxspeed_units() {
        assert_eq!(parse_maxspeed("36"), Some(10.0));
        assert!((parse_maxspeed("20 mph").unwrap() - 8.9408).abs() < 1e-12);
        assert_eq!(parse_maxspeed("none"), None);
    }

    #[test]
    fn roundabout_becomes_circle() {
        let xml = r#"<osm>
          <node id="1" lat="40.0" lon="-83.0"/>
          <node id="2" lat="40.0001" lon="-83.0001"/>
          <node id="3" lat="40.0002" lon="-83.0"/>
          <node id="4" lat="40.0001" lon="-82.9999"/>
          <node id="5" lat="39.999" lon="-83.0"/>
          <way id="20"><nd ref="1"/><nd ref="4"/><nd ref="3"/><nd ref="2"/><nd ref="1"/><tag k="highway" v="residential"/><tag k="junction" v="roundabout"/></way>
          <way id="21"><nd ref="5"/><nd ref="1"/><tag k="highway" v="residential"/></way>
        </osm>"#;
        let net = build_network(&parse_osm(xml).unwrap(), &proj()).unwrap();
        assert_eq!(net.intersections.len(), 1);
        let c = &net.intersections[0];
        assert_eq!(c.control, IntersectionControl::Circle);
        assert_eq!(c.segments, vec![20, 21]);
        assert!(net.segment(20).unwrap().oneway);
    }

    #[test]
    fn deterministic() {
        let doc = parse_osm(crate::fixtures::LINDEN_MIN_OSM).unwrap();
        let a = build_network(&doc, &proj()).unwrap();
        let b = build_network(&doc, &proj()).unwrap();
        assert_eq!(a, b);
    }
}
