//! Virtual sensor suite: planar lidar by ray casting, GPS with denial
//! zones, odometry deltas.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::geom::{point_in_polygon, wrap_angle, Pose2, Vec2};
use crate::sim::{SimRng, SimState, VehicleState, WeatherState, EGO_ID};
use crate::world::{raycast, AgentId, Footprint, HitTarget, StaticWorld};

pub const LIDAR_STREAM: u64 = 1;
pub const GPS_STREAM: u64 = 2;
pub const ODOM_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarConfig {
    pub beam_count: usize,
    pub fov: f64,
    pub max_range: f64,
    pub range_noise_sigma: f64,
    /// Sensor pose in the ego (rear-axle) frame.
    pub mount: Pose2,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self { beam_count: 360, fov: 2.0 * PI, max_range: 50.0, range_noise_sigma: 0.02, mount: Pose2::new(1.5, 0.0, 0.0) }
    }
}

impl LidarConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.beam_count == 0 {
            return Err("beam_count must be at least 1".into());
        }
        if !(self.max_range > 0.0) {
            return Err(format!("max_range {} must be positive", self.max_range));
        }
        if !(self.fov > 0.0 && self.fov <= 2.0 * PI) {
            return Err(format!("fov {} outside (0, 2pi]", self.fov));
        }
        if !(self.range_noise_sigma >= 0.0) {
            return Err("range_noise_sigma must be non-negative".into());
        }
        Ok(())
    }

    /// Beam bearing in the sensor frame. A full circle is split into equal
    /// sectors starting at -pi; a partial fov spans its ends inclusively.
    pub fn beam_angle(&self, i: usize) -> f64 {
        let n = self.beam_count;
        if (self.fov - 2.0 * PI).abs() < 1e-12 {
            -PI + i as f64 * (2.0 * PI / n as f64)
        } else if n == 1 {
            0.0
        } else {
            -self.fov / 2.0 + i as f64 * self.fov / (n - 1) as f64
        }
    }

    /// Index of the beam whose bearing is closest to `angle`.
    pub fn nearest_beam(&self, angle: f64) -> Option<usize> {
        let n = self.beam_count;
        let full = (self.fov - 2.0 * PI).abs() < 1e-12;
        if full {
            let step = 2.0 * PI / n as f64;
            let k = ((wrap_angle(angle) + PI) / step).round() as usize % n;
            return Some(k);
        }
        let a = wrap_angle(angle);
        let half = self.fov / 2.0;
        if n == 1 {
            return (a.abs() <= half).then_some(0);
        }
        let step = self.fov / (n - 1) as f64;
        if a < -half - step / 2.0 || a > half + step / 2.0 {
            return None;
        }
        Some((((a + half) / step).round() as usize).min(n - 1))
    }
}

/// Points in the sensor frame.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub stamp: f64,
    pub points: Vec<Vec2>,
}

impl PointCloud {
    pub fn new(stamp: f64, points: Vec<Vec2>) -> Self {
        Self { stamp, points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, pose: &Pose2) -> PointCloud {
        PointCloud { stamp: self.stamp, points: self.points.iter().map(|&p| pose.transform_point(p)).collect() }
    }
}

pub fn sensor_pose(ego: &Pose2, cfg: &LidarConfig) -> Pose2 {
    ego.compose(&cfg.mount)
}

/// One planar sweep. `agents` are the bodies visible to the sensor; the ego
/// body is skipped by id.
pub fn scan_lidar(
    world: &StaticWorld,
    agents: &[(AgentId, Footprint)],
    ego: &Pose2,
    cfg: &LidarConfig,
    weather: &WeatherState,
    stamp: f64,
    rng: &mut SimRng,
) -> PointCloud {
    let others: Vec<(AgentId, Footprint)> = agents.iter().filter(|(id, _)| *id != EGO_ID).copied().collect();
    let sensor = sensor_pose(ego, cfg);
    let sigma = cfg.range_noise_sigma * weather.sensor_noise_scale;
    let clip = 3.0 * sigma;
    let mut points = Vec::new();
    for i in 0..cfg.beam_count {
        let bearing = cfg.beam_angle(i);
        let hit = raycast(world, &others, sensor.position(), sensor.yaw + bearing, cfg.max_range);
        if hit.target == HitTarget::None {
            continue;
        }
        let noise = if sigma > 0.0 { (sigma * rng.gaussian()).clamp(-clip, clip) } else { 0.0 };
        let dropped = weather.sensor_dropout_prob > 0.0 && rng.uniform() < weather.sensor_dropout_prob;
        if dropped {
            continue;
        }
        let r = (hit.distance + noise).max(0.0);
        points.push(Vec2::from_angle(bearing) * r);
    }
    PointCloud { stamp, points }
}

/// Convenience over a full simulator snapshot.
pub fn scan_state(world: &StaticWorld, state: &SimState, cfg: &LidarConfig, rng: &mut SimRng) -> PointCloud {
    scan_lidar(world, &state.footprints(), &state.ego.pose, cfg, &state.weather, state.time, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsFix {
    pub position: Vec2,
    pub valid: bool,
    pub noise_sigma: f64,
}

pub fn read_gps(truth: Vec2, denial_zones: &[Vec<Vec2>], noise_sigma: f64, rng: &mut SimRng) -> GpsFix {
    if denial_zones.iter().any(|z| point_in_polygon(truth, z)) {
        return GpsFix { position: Vec2::ZERO, valid: false, noise_sigma };
    }
    let position = if noise_sigma > 0.0 {
        Vec2::new(truth.x + noise_sigma * rng.gaussian(), truth.y + noise_sigma * rng.gaussian())
    } else {
        truth
    };
    GpsFix { position, valid: true, noise_sigma }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OdometryNoise {
    /// Standard deviation of the multiplicative translation error.
    pub translation_frac: f64,
    pub yaw_sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdometryDelta {
    pub d_translation: f64,
    pub d_yaw: f64,
    pub interval: f64,
}

pub fn read_odometry(prev: &VehicleState, curr: &VehicleState, dt: f64, noise: &OdometryNoise, rng: &mut SimRng) -> OdometryDelta {
    debug_assert!(dt > 0.0);
    let mut d = prev.speed * dt;
    let mut d_yaw = wrap_angle(curr.pose.yaw - prev.pose.yaw);
    if noise.translation_frac > 0.0 {
        d *= 1.0 + noise.translation_frac * rng.gaussian();
    }
    if noise.yaw_sigma > 0.0 {
        d_yaw += noise.yaw_sigma * rng.gaussian();
    }
    OdometryDelta { d_translation: d, d_yaw, interval: dt }
}
