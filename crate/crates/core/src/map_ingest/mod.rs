//! OSM ingestion: parse, project, compile and validate the road network.

mod network;
mod osm;
mod projection;
mod validate;

use thiserror::Error;

pub use network::{
    build_network, parse_maxspeed, Bounds, Building, Crosswalk, Intersection, IntersectionControl, RoadNetwork,
    Segment, StopLine, DEFAULT_CROSSWALK_WIDTH, DEFAULT_SPEED_LIMIT, NETWORK_FORMAT_VERSION,
};
pub use osm::{parse_osm, GeoBounds, OsmDocument, OsmNode, OsmWay, Tags};
pub use projection::{Projection, EARTH_RADIUS_M};
pub use validate::{validate_network, IssueKind, ValidationIssue};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("XML parse error at line {line}: {message}")]
    Xml { line: u32, message: String },
    #[error("invalid OSM element at line {line}: {message}")]
    Element { line: u32, message: String },
    #[error("ways reference unknown node ids {missing:?}")]
    DanglingRefs { missing: Vec<i64> },
    #[error("duplicate node id {0}")]
    DuplicateNode(i64),
    #[error("coordinate out of range (lat {lat}, lon {lon})")]
    Domain { lat: f64, lon: f64 },
    #[error("document contains no highway ways")]
    EmptyNetwork,
}

/// Projection centered on the document's extent.
pub fn centered_projection(doc: &OsmDocument) -> Projection {
    match doc.extent() {
        Some(b) => Projection::new((b.min_lat + b.max_lat) / 2.0, (b.min_lon + b.max_lon) / 2.0),
        None => Projection::new(0.0, 0.0),
    }
}

/// GeoJSON FeatureCollection (WGS84) of segment centerlines and buildings.
pub fn network_geojson(net: &RoadNetwork) -> serde_json::Value {
    let ll = |p: &crate::geom::Vec2| {
        let (lat, lon) = net.projection.unproject(*p);
        serde_json::json!([lon, lat])
    };
    let mut features = Vec::new();
    for s in &net.segments {
        features.push(serde_json::json!({
            "type": "Feature",
            "properties": {"kind": "segment", "id": s.id, "lanes": s.lane_count, "speed_limit": s.speed_limit, "oneway": s.oneway},
            "geometry": {"type": "LineString", "coordinates": s.centerline.iter().map(ll).collect::<Vec<_>>()},
        }));
    }
    for b in &net.buildings {
        features.push(serde_json::json!({
            "type": "Feature",
            "properties": {"kind": "building", "id": b.id},
            "geometry": {"type": "Polygon", "coordinates": [b.polygon.iter().map(ll).collect::<Vec<_>>()]},
        }));
    }
    serde_json::json!({"type": "FeatureCollection", "features": features})
}
