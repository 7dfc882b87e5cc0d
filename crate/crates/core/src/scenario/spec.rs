//! Scenario documents and the standard scenario matrix built on the
//! bundled Linden fixture.

use serde::{Deserialize, Serialize};

use crate::fixtures::{nodes, ways};
use crate::geom::Vec2;
use crate::guidance::{LongitudinalConfig, TwistLimits, VelocityConfig};
use crate::perception::{BrakeConfig, GridConfig};
use crate::sensors::{LidarConfig, OdometryNoise};
use crate::sim::{VehicleParams, WeatherState, DEFAULT_DT};
use crate::world::DEFAULT_LANE_WIDTH;

pub const SCENARIO_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Intersection,
    TrafficCircle,
    PedestrianCrossing,
    StoppedObstacle,
    SlowFleet,
    Weather,
    FreeRun,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 7] = [
        ScenarioKind::Intersection,
        ScenarioKind::TrafficCircle,
        ScenarioKind::PedestrianCrossing,
        ScenarioKind::StoppedObstacle,
        ScenarioKind::SlowFleet,
        ScenarioKind::Weather,
        ScenarioKind::FreeRun,
    ];
}

/// A scalar drawn once per spawn from the scenario's spawn stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dist {
    Fixed(f64),
    Uniform { lo: f64, hi: f64 },
}

impl Dist {
    pub fn validate(&self) -> Result<(), String> {
        match *self {
            Dist::Fixed(v) if v.is_finite() => Ok(()),
            Dist::Uniform { lo, hi } if lo.is_finite() && hi.is_finite() && lo <= hi => Ok(()),
            _ => Err(format!("bad distribution {self:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapRef {
    /// A map compiled into the crate; only "linden_min" exists.
    Fixture(String),
    /// Path to an OSM file or a network JSON document.
    Path(String),
}

fn yes() -> bool {
    true
}

/// One lane path, optionally cut to the stretch between two of its nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegRef {
    pub segment: i64,
    #[serde(default = "yes")]
    pub forward: bool,
    #[serde(default)]
    pub lane: u32,
    #[serde(default)]
    pub from_node: Option<i64>,
    #[serde(default)]
    pub to_node: Option<i64>,
}

impl LegRef {
    pub fn new(segment: i64, forward: bool) -> Self {
        LegRef { segment, forward, lane: 0, from_node: None, to_node: None }
    }

    pub fn between(mut self, from: Option<i64>, to: Option<i64>) -> Self {
        self.from_node = from;
        self.to_node = to;
        self
    }
}

/// Consecutive legs with metres cut from either end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    pub legs: Vec<LegRef>,
    #[serde(default)]
    pub trim_start: f64,
    #[serde(default)]
    pub trim_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteRef {
    Lanes { path: PathSpec, speed: f64 },
    Csv { file: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpcSpawn {
    pub path: PathSpec,
    pub entry_time: Dist,
    pub speed: Dist,
    #[serde(default)]
    pub erratic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossingSide {
    /// Starts on the left of the road direction.
    Left,
    Right,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PedestrianSpawn {
    pub crosswalk: usize,
    pub start_time: Dist,
    pub speed: Dist,
    pub side: CrossingSide,
}

/// A parked vehicle that appears in the ego lane once the ego reaches
/// `trigger_s` along its route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppedVehicleSpawn {
    pub trigger_s: f64,
    /// Gap from the ego front bumper to the vehicle's rear at appearance.
    pub appear_distance: Dist,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmartCircleConfig {
    pub enabled: bool,
    /// Coverage center; defaults to the first circle intersection.
    #[serde(default)]
    pub center: Option<Vec2>,
    pub radius: f64,
    pub interval: f64,
    /// Nearest-association gate when fusing with lidar clusters.
    pub fusion_gate: f64,
}

impl Default for SmartCircleConfig {
    fn default() -> Self {
        Self { enabled: false, center: None, radius: 45.0, interval: 0.1, fusion_gate: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LocalizationMode {
    GroundTruth,
    /// Scan matching against an NDT map; without a file the map is built
    /// by driving the route in the static world.
    Ndt {
        #[serde(default)]
        map_file: Option<String>,
        cell_size: f64,
        /// Ticks between scan matches; odometry fills the gaps.
        match_period: u32,
        downsample_radius: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpsConfig {
    pub noise_sigma: f64,
    #[serde(default)]
    pub denial_zones: Vec<Vec<Vec2>>,
}

impl Default for GpsConfig {
    fn default() -> Self {
        Self { noise_sigma: 0.5, denial_zones: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArbiterConfig {
    /// Conflict-zone radius at stop-sign junctions.
    pub junction_radius: f64,
    /// Added to the ring radius at traffic circles.
    pub circle_margin: f64,
    /// A stop counts as an arrival when the front is this close to the line.
    pub arrival_window: f64,
    /// Waits longer than this are logged as pauses.
    pub pause_threshold: f64,
}

impl Default for ArbiterConfig {
    fn default() -> Self {
        Self { junction_radius: 6.0, circle_margin: 3.5, arrival_window: 2.0, pause_threshold: 30.0 }
    }
}

/// Tunables of the ego guidance chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub velocity: VelocityConfig,
    pub longitudinal: LongitudinalConfig,
    pub twist: TwistLimits,
    pub brake: BrakeConfig,
    pub grid: GridConfig,
    pub cluster_tolerance: f64,
    pub cluster_min_size: usize,
    /// Length of the route window checked for obstacles.
    pub window_length: f64,
    /// Returns this far beyond the road edge still mark a crosswalk busy.
    pub crosswalk_approach: f64,
    /// A busy crosswalk closer than this is already committed to.
    pub crosswalk_commit: f64,
    pub max_offtrack: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            velocity: VelocityConfig::default(),
            longitudinal: LongitudinalConfig { kp: 2.0, ..LongitudinalConfig::default() },
            twist: TwistLimits::default(),
            brake: BrakeConfig::default(),
            grid: GridConfig::default(),
            cluster_tolerance: 0.6,
            cluster_min_size: 2,
            window_length: 25.0,
            crosswalk_approach: 1.5,
            crosswalk_commit: 0.6,
            max_offtrack: crate::guidance::DEFAULT_MAX_OFFTRACK,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub format_version: u32,
    pub name: String,
    pub kind: ScenarioKind,
    pub seed: u64,
    pub duration_limit: f64,
    pub dt: f64,
    pub map: MapRef,
    pub lane_width: f64,
    pub route: RouteRef,
    pub ego_params: VehicleParams,
    pub ego_start_speed: f64,
    #[serde(default)]
    pub npc_spawns: Vec<NpcSpawn>,
    #[serde(default)]
    pub pedestrian_spawns: Vec<PedestrianSpawn>,
    #[serde(default)]
    pub stopped_vehicles: Vec<StoppedVehicleSpawn>,
    pub weather: WeatherState,
    pub smart_circle: SmartCircleConfig,
    pub localization: LocalizationMode,
    pub lidar: LidarConfig,
    pub gps: GpsConfig,
    pub odometry_noise: OdometryNoise,
    pub guidance: GuidanceConfig,
    pub arbiter: ArbiterConfig,
}

impl ScenarioSpec {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn from_json(text: &str) -> Result<ScenarioSpec, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Checks that do not need the map; map references are resolved when
    /// the scenario is loaded.
    pub fn validate(&self) -> Result<(), String> {
        if self.format_version != SCENARIO_FORMAT_VERSION {
            return Err(format!("unsupported scenario format_version {}", self.format_version));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.duration_limit > 0.0) {
            return Err("duration_limit must be positive".into());
        }
        self.weather.validate()?;
        self.lidar.validate()?;
        for s in &self.npc_spawns {
            s.entry_time.validate()?;
            s.speed.validate()?;
            if s.path.legs.is_empty() {
                return Err("npc spawn without legs".into());
            }
        }
        for p in &self.pedestrian_spawns {
            p.start_time.validate()?;
            p.speed.validate()?;
        }
        for v in &self.stopped_vehicles {
            v.appear_distance.validate()?;
        }
        if self.smart_circle.enabled && !(self.smart_circle.radius > 0.0 && self.smart_circle.interval > 0.0) {
            return Err("smart circle needs positive radius and interval".into());
        }
        Ok(())
    }

    /// Baseline every standard scenario starts from: the western free run
    /// on the Linden fixture.
    fn base(kind: ScenarioKind, seed: u64) -> ScenarioSpec {
        ScenarioSpec {
            format_version: SCENARIO_FORMAT_VERSION,
            name: serde_json::to_value(kind).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default(),
            kind,
            seed,
            duration_limit: 60.0,
            dt: DEFAULT_DT,
            map: MapRef::Fixture("linden_min".into()),
            lane_width: DEFAULT_LANE_WIDTH,
            route: RouteRef::Lanes { path: west_run(), speed: CRUISE },
            ego_params: VehicleParams::default(),
            ego_start_speed: 0.0,
            npc_spawns: Vec::new(),
            pedestrian_spawns: Vec::new(),
            stopped_vehicles: Vec::new(),
            weather: WeatherState::clear(),
            smart_circle: SmartCircleConfig::default(),
            localization: LocalizationMode::GroundTruth,
            lidar: LidarConfig::default(),
            gps: GpsConfig::default(),
            odometry_noise: OdometryNoise::default(),
            guidance: GuidanceConfig::default(),
            arbiter: ArbiterConfig::default(),
        }
    }

    pub fn standard(kind: ScenarioKind, seed: u64) -> ScenarioSpec {
        match kind {
            ScenarioKind::FreeRun => Self::base(kind, seed),
            ScenarioKind::Intersection => Self::intersection(seed, 5),
            ScenarioKind::TrafficCircle => Self::traffic_circle(seed, false),
            ScenarioKind::PedestrianCrossing => {
                let mut s = Self::base(kind, seed);
                s.pedestrian_spawns = (0..3)
                    .map(|_| PedestrianSpawn {
                        crosswalk: 0,
                        start_time: Dist::Uniform { lo: 0.0, hi: 15.0 },
                        speed: Dist::Uniform { lo: 1.0, hi: 1.6 },
                        side: CrossingSide::Random,
                    })
                    .collect();
                s
            }
            ScenarioKind::StoppedObstacle => {
                let mut s = Self::base(kind, seed);
                s.duration_limit = 30.0;
                s.stopped_vehicles.push(StoppedVehicleSpawn { trigger_s: 70.0, appear_distance: Dist::Uniform { lo: 6.0, hi: 7.0 } });
                s
            }
            ScenarioKind::SlowFleet => {
                let mut s = Self::base(kind, seed);
                let lead = PathSpec { legs: vec![LegRef::new(ways::MAIN_WEST, true)], trim_start: 100.0, trim_end: 20.0 };
                s.npc_spawns = [0.0, 5.0]
                    .iter()
                    .map(|&t| NpcSpawn { path: lead.clone(), entry_time: Dist::Fixed(t), speed: Dist::Uniform { lo: 2.5, hi: 3.5 }, erratic: false })
                    .collect();
                s
            }
            ScenarioKind::Weather => {
                let mut s = Self::base(kind, seed);
                s.weather = WeatherState::rain(0.5);
                s
            }
        }
    }

    /// Ego through the stop-controlled junction with `density` cross-street
    /// vehicles alternating direction.
    pub fn intersection(seed: u64, density: usize) -> ScenarioSpec {
        let mut s = Self::base(ScenarioKind::Intersection, seed);
        s.name = format!("intersection_{density}");
        s.duration_limit = 150.0;
        s.route = RouteRef::Lanes {
            path: PathSpec {
                legs: vec![LegRef::new(ways::MAIN_WEST, true), LegRef::new(ways::MAIN_MIDDLE, true).between(None, Some(nodes::MAIN_MIDDLE_MID))],
                trim_start: 150.0,
                trim_end: 0.0,
            },
            speed: CRUISE,
        };
        s.npc_spawns = (0..density)
            .map(|i| NpcSpawn {
                path: PathSpec { legs: vec![LegRef::new(ways::CROSS_STREET, i % 2 == 0)], trim_start: 80.0, trim_end: 80.0 },
                entry_time: Dist::Uniform { lo: 0.0, hi: 30.0 },
                speed: Dist::Uniform { lo: 5.0, hi: 8.0 },
                erratic: false,
            })
            .collect();
        s
    }

    /// Ego enters the circle from the west and leaves east; traffic joins
    /// from both arms and leaves west.
    pub fn traffic_circle(seed: u64, erratic: bool) -> ScenarioSpec {
        let mut s = Self::base(ScenarioKind::TrafficCircle, seed);
        s.name = if erratic { "traffic_circle_erratic".into() } else { "traffic_circle".into() };
        s.duration_limit = 90.0;
        s.route = RouteRef::Lanes { path: circle_run(), speed: CRUISE };
        let arm = |way: i64, entry: i64| PathSpec {
            legs: vec![
                LegRef::new(way, false),
                LegRef::new(ways::CIRCLE, true).between(Some(entry), Some(nodes::CIRCLE_WEST)),
                LegRef::new(ways::MAIN_MIDDLE, false).between(Some(nodes::CIRCLE_WEST), Some(nodes::MAIN_MIDDLE_MID)),
            ],
            trim_start: 90.0,
            trim_end: 0.0,
        };
        let mut spawns = Vec::new();
        for (i, (way, entry)) in [(ways::NORTH_ARM, nodes::CIRCLE_NORTH), (ways::SOUTH_ARM, nodes::CIRCLE_SOUTH), (ways::NORTH_ARM, nodes::CIRCLE_NORTH), (ways::SOUTH_ARM, nodes::CIRCLE_SOUTH)]
            .into_iter()
            .enumerate()
        {
            spawns.push(NpcSpawn {
                path: arm(way, entry),
                // the first north-arm vehicle leads its arm so it meets the ego
                entry_time: match i {
                    0 => Dist::Uniform { lo: 0.0, hi: 5.0 },
                    2 => Dist::Uniform { lo: 7.0, hi: 15.0 },
                    _ => Dist::Uniform { lo: 0.0, hi: 15.0 },
                },
                speed: Dist::Uniform { lo: 5.0, hi: 7.0 },
                erratic: erratic && i == 0,
            });
        }
        s.npc_spawns = spawns;
        s
    }

    /// A vehicle coming down the north arm, hidden from the approaching
    /// ego by the building beside the circle.
    pub fn occlusion(seed: u64, smart_circle: bool) -> ScenarioSpec {
        let mut s = Self::base(ScenarioKind::TrafficCircle, seed);
        s.name = if smart_circle { "occlusion_smart_circle".into() } else { "occlusion".into() };
        s.duration_limit = 20.0;
        s.route = RouteRef::Lanes { path: circle_run(), speed: CRUISE };
        s.npc_spawns = vec![NpcSpawn {
            path: PathSpec {
                legs: vec![
                    LegRef::new(ways::NORTH_ARM, false),
                    LegRef::new(ways::CIRCLE, true).between(Some(nodes::CIRCLE_NORTH), Some(nodes::CIRCLE_WEST)),
                    LegRef::new(ways::MAIN_MIDDLE, false).between(Some(nodes::CIRCLE_WEST), Some(nodes::MAIN_MIDDLE_MID)),
                ],
                trim_start: 45.0,
                trim_end: 0.0,
            },
            entry_time: Dist::Fixed(0.0),
            speed: Dist::Fixed(6.0),
            erratic: false,
        }];
        s.smart_circle.enabled = smart_circle;
        s
    }
}

/// Ego cruise speed on the standard routes.
pub const CRUISE: f64 = 8.0;

/// Main road from x = -190 to x = -40, across the crosswalk.
pub fn west_run() -> PathSpec {
    PathSpec { legs: vec![LegRef::new(ways::MAIN_WEST, true)], trim_start: 60.0, trim_end: 40.0 }
}

/// From x = 50 through the circle (west entry, south, east exit) to x = 190.
pub fn circle_run() -> PathSpec {
    PathSpec {
        legs: vec![
            LegRef::new(ways::MAIN_MIDDLE, true).between(Some(nodes::MAIN_MIDDLE_MID), None),
            LegRef::new(ways::CIRCLE, true).between(Some(nodes::CIRCLE_WEST), Some(nodes::CIRCLE_EAST)),
            LegRef::new(ways::MAIN_EAST, true),
        ],
        trim_start: 0.0,
        trim_end: 60.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_is_byte_identical() {
        for kind in ScenarioKind::ALL {
            let s = ScenarioSpec::standard(kind, 7);
            let text = s.to_json();
            let back = ScenarioSpec::from_json(&text).unwrap();
            assert_eq!(back, s);
            assert_eq!(back.to_json(), text);
            s.validate().unwrap();
        }
    }

    #[test]
    fn bad_distribution_rejected() {
        let mut s = ScenarioSpec::standard(ScenarioKind::PedestrianCrossing, 1);
        s.pedestrian_spawns[0].speed = Dist::Uniform { lo: 2.0, hi: 1.0 };
        assert!(s.validate().is_err());
    }
}
