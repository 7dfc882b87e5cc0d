//! Bundled fixture data: a small Linden-style neighborhood extract.
//!
//! Layout in the local metric frame (reference 40.0 N, 83.0 W):
//! an east-west avenue along y = 0 with a marked crossing at x = -60, an
//! all-way stop junction with a cross street at the origin, and a
//! stop-controlled single-lane traffic circle of radius 15 m centered at
//! (120, 0) with north and south arms. Seven rectangular buildings line the
//! streets; the one at x in [80, 100], y in [8, 40] hides the north arm from
//! traffic approaching the circle from the west.

use crate::map_ingest::{build_network, parse_osm, Projection, RoadNetwork};

pub const LINDEN_MIN_OSM: &str = include_str!("../../../fixtures/linden_min.osm");

pub const REF_LAT: f64 = 40.0;
pub const REF_LON: f64 = -83.0;

/// Way ids in the bundled extract.
pub mod ways {
    pub const MAIN_WEST: i64 = 100;
    pub const MAIN_MIDDLE: i64 = 101;
    pub const MAIN_EAST: i64 = 102;
    pub const CROSS_STREET: i64 = 110;
    pub const CIRCLE: i64 = 300;
    pub const NORTH_ARM: i64 = 310;
    pub const SOUTH_ARM: i64 = 320;
}

/// Node ids in the bundled extract.
pub mod nodes {
    pub const JUNCTION: i64 = 1005;
    pub const MAIN_WEST_START: i64 = 1001;
    pub const CROSSING: i64 = 1003;
    /// On the avenue halfway between the junction and the circle (x = 50).
    pub const MAIN_MIDDLE_MID: i64 = 1006;
    pub const MAIN_EAST_END: i64 = 1011;
    pub const CIRCLE_EAST: i64 = 2000;
    pub const CIRCLE_NORTH: i64 = 2006;
    pub const CIRCLE_WEST: i64 = 2012;
    pub const CIRCLE_SOUTH: i64 = 2018;
}

pub fn linden_projection() -> Projection {
    Projection::new(REF_LAT, REF_LON)
}

pub fn linden_network() -> RoadNetwork {
    let doc = parse_osm(LINDEN_MIN_OSM).expect("bundled fixture parses");
    build_network(&doc, &linden_projection()).expect("bundled fixture builds")
}
