//! Normal distributions transform: cell map building and Newton scan
//! matching against it.

mod downsample;
mod map;

pub use downsample::downsample;
pub use map::{build_ndt_map, build_ndt_map_with, ndt_score, NdtCell, NdtMap, ScoreTerms, Sym2, DEFAULT_CELL_SIZE, MIN_POINTS_PER_CELL, NDT_FORMAT_VERSION};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{wrap_angle, Pose2};
use crate::sensors::{OdometryDelta, PointCloud};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NdtError {
    #[error("no points to build a map from")]
    EmptyMap,
    #[error("cell size {0} must be positive")]
    InvalidCellSize(f64),
    #[error("no scan point lands in a populated cell at the initial pose")]
    NoOverlap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub max_iterations: u32,
    pub translation_tolerance: f64,
    pub rotation_tolerance: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self { max_iterations: 30, translation_tolerance: 1e-4, rotation_tolerance: 1e-5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub pose: Pose2,
    pub score: f64,
    pub iterations: u32,
    pub converged: bool,
}

/// Sensor-to-ego rigid transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extrinsic {
    pub t_lidar: Pose2,
}

pub fn sensor_to_ego(sensor_in_map: &Pose2, ext: &Extrinsic) -> Pose2 {
    sensor_in_map.compose(&ext.t_lidar.inverse())
}

pub fn predict_initial(prev: &PoseEstimate, odo: &OdometryDelta) -> Pose2 {
    let p = prev.pose;
    Pose2::new(p.x + odo.d_translation * p.yaw.cos(), p.y + odo.d_translation * p.yaw.sin(), wrap_angle(p.yaw + odo.d_yaw))
}

fn apply(pose: &Pose2, step: &Vector3<f64>) -> Pose2 {
    Pose2::new(pose.x + step[0], pose.y + step[1], wrap_angle(pose.yaw + step[2]))
}

/// Newton step direction with the Hessian shifted by a growing multiple of
/// the identity until it factors.
fn newton_direction(terms: &ScoreTerms) -> Vector3<f64> {
    let h = Matrix3::from_fn(|i, j| terms.hessian[i][j]);
    let g = Vector3::from_column_slice(&terms.gradient);
    let mut lambda = 0.0;
    loop {
        let shifted = h + Matrix3::identity() * lambda;
        if let Some(ch) = shifted.cholesky() {
            return -ch.solve(&g);
        }
        lambda = if lambda == 0.0 { 1e-6 } else { lambda * 2.0 };
    }
}

pub fn ndt_match(map: &NdtMap, cloud: &PointCloud, initial: &Pose2) -> Result<PoseEstimate, NdtError> {
    ndt_match_with(map, cloud, initial, &MatchConfig::default())
}

pub fn ndt_match_with(map: &NdtMap, cloud: &PointCloud, initial: &Pose2, cfg: &MatchConfig) -> Result<PoseEstimate, NdtError> {
    if map.is_empty() {
        return Err(NdtError::EmptyMap);
    }
    let mut pose = *initial;
    let mut terms = ndt_score(map, cloud, &pose);
    if terms.matched == 0 {
        return Err(NdtError::NoOverlap);
    }
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let g = Vector3::from_column_slice(&terms.gradient);
        let newton = newton_direction(&terms);
        // steepest descent, scaled to at most a quarter cell or 0.1 rad, when Newton stalls
        let scale = (0.25 * map.cell_size / g[0].hypot(g[1]).max(1e-12)).min(0.1 / g[2].abs().max(1e-12));
        let mut accepted = None;
        for dir in [newton, -g * scale] {
            let slope = g.dot(&dir);
            let mut alpha = 1.0;
            while alpha >= 1.0 / 64.0 {
                let candidate = apply(&pose, &(dir * alpha));
                let cand_terms = ndt_score(map, cloud, &candidate);
                if cand_terms.score <= terms.score + 1e-4 * alpha * slope.min(0.0) {
                    accepted = Some((dir * alpha, candidate, cand_terms));
                    break;
                }
                alpha *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }
        let Some((step, candidate, cand_terms)) = accepted else {
            // no direction improves the score: a (numerically) stationary point
            converged = true;
            break;
        };
        pose = candidate;
        terms = cand_terms;
        if step[0].hypot(step[1]) < cfg.translation_tolerance && step[2].abs() < cfg.rotation_tolerance {
            converged = true;
            break;
        }
    }
    Ok(PoseEstimate { pose, score: terms.score, iterations, converged })
}
