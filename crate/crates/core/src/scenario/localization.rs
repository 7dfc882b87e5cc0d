//! Map-based ego localization for scenario runs: odometry prediction
//! between periodic NDT matches, GPS reseeding after a loss.

use crate::geom::{Pose2, Vec2};
use crate::guidance::Route;
use crate::ndt::{build_ndt_map, downsample, ndt_match, predict_initial, sensor_to_ego, Extrinsic, NdtError, NdtMap, PoseEstimate};
use crate::sensors::{scan_lidar, GpsFix, LidarConfig, OdometryDelta, PointCloud};
use crate::sim::{SimRng, WeatherState};
use crate::world::StaticWorld;

/// Matches that move the prediction farther than this are rejected.
const MAX_CORRECTION: f64 = 2.0;
/// Consecutive failed matches before the estimate is declared lost.
const MAX_MISSES: u32 = 3;

/// Drives the route in the empty static world, scanning every `spacing`
/// metres with a noiseless sensor, and builds the cell map.
pub fn build_route_map(world: &StaticWorld, route: &Route, lidar: &LidarConfig, cell_size: f64, spacing: f64) -> Result<NdtMap, NdtError> {
    let clean = LidarConfig { range_noise_sigma: 0.0, ..*lidar };
    let weather = WeatherState { sensor_noise_scale: 0.0, sensor_dropout_prob: 0.0, ..WeatherState::clear() };
    let mut rng = SimRng::new(0, 0);
    let path = route.path();
    let n = (path.length() / spacing).ceil() as usize;
    let mut scans = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let s = path.length() * k as f64 / n.max(1) as f64;
        let p = path.point_at(s);
        let ego = Pose2::new(p.x, p.y, path.heading_at(s));
        let cloud = scan_lidar(world, &[], &ego, &clean, &weather, 0.0, &mut rng);
        scans.push((cloud, ego.compose(&clean.mount)));
    }
    build_ndt_map(&scans, cell_size)
}

#[derive(Debug, Clone)]
pub struct Localizer {
    map: NdtMap,
    extrinsic: Extrinsic,
    period: u32,
    radius: f64,
    estimate: Option<PoseEstimate>,
    misses: u32,
}

impl Localizer {
    pub fn new(map: NdtMap, lidar: &LidarConfig, period: u32, downsample_radius: f64) -> Self {
        Localizer { map, extrinsic: Extrinsic { t_lidar: lidar.mount }, period: period.max(1), radius: downsample_radius, estimate: None, misses: 0 }
    }

    fn matched(&self, scan: &PointCloud, initial: &Pose2) -> Option<PoseEstimate> {
        let cloud = if self.radius > 0.0 { downsample(scan, self.radius) } else { scan.clone() };
        let sensor = initial.compose(&self.extrinsic.t_lidar);
        let est = ndt_match(&self.map, &cloud, &sensor).ok()?;
        if !est.converged {
            return None;
        }
        let pose = sensor_to_ego(&est.pose, &self.extrinsic);
        (pose.position().dist(initial.position()) <= MAX_CORRECTION).then_some(PoseEstimate { pose, ..est })
    }

    /// Returns the ego pose estimate and whether localization was lost
    /// this tick.
    pub fn update(&mut self, tick: u64, scan: &PointCloud, odo: &OdometryDelta, gps: &GpsFix, route: &Route) -> (Pose2, bool) {
        let predicted = match &self.estimate {
            Some(prev) => predict_initial(prev, odo),
            None => {
                let at: Vec2 = if gps.valid { gps.position } else { route.path().point_at(0.0) };
                let s = route.path().project(at).s;
                Pose2::new(at.x, at.y, route.path().heading_at(s))
            }
        };
        let due = self.estimate.is_none() || tick % self.period as u64 == 0;
        if !due {
            let est = PoseEstimate { pose: predicted, ..self.estimate.expect("estimate present when not due") };
            self.estimate = Some(est);
            return (predicted, false);
        }
        match self.matched(scan, &predicted) {
            Some(est) => {
                self.misses = 0;
                self.estimate = Some(est);
                (est.pose, false)
            }
            None => {
                let Some(prev) = self.estimate else {
                    return (predicted, false);
                };
                self.misses += 1;
                if self.misses >= MAX_MISSES {
                    // reseed from GPS on the next tick
                    self.misses = 0;
                    self.estimate = None;
                    return (predicted, true);
                }
                self.estimate = Some(PoseEstimate { pose: predicted, ..prev });
                (predicted, false)
            }
        }
    }
}
