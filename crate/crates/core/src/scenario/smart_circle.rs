//! Overhead sensor at the traffic circle: exact agent states inside a
//! coverage disk, broadcast at a fixed interval and fused with lidar
//! clusters by nearest association.

use serde::{Deserialize, Serialize};

use crate::geom::Vec2;
use crate::sim::{SimState, EGO_ID};
use crate::world::AgentId;

pub const OBJECT_LIST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    Vehicle,
    Pedestrian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectInfo {
    pub id: AgentId,
    pub class: ObjectClass,
    /// Footprint center.
    pub position: Vec2,
    pub velocity: Vec2,
    pub yaw: f64,
    pub length: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectListMessage {
    pub stamp: f64,
    pub objects: Vec<ObjectInfo>,
}

/// Every non-ego agent whose footprint center lies in the closed disk.
/// Visibility plays no part.
pub fn broadcast(state: &SimState, center: Vec2, radius: f64) -> ObjectListMessage {
    let mut objects = Vec::new();
    for n in &state.npcs {
        let fp = n.vehicle.footprint();
        if n.id != EGO_ID && fp.center.dist(center) <= radius {
            let v = n.vehicle;
            objects.push(ObjectInfo {
                id: n.id,
                class: ObjectClass::Vehicle,
                position: fp.center,
                velocity: Vec2::from_angle(v.pose.yaw) * v.speed,
                yaw: v.pose.yaw,
                length: v.params.length,
                width: v.params.width,
            });
        }
    }
    for p in &state.pedestrians {
        if p.position.dist(center) <= radius {
            let fp = p.footprint();
            objects.push(ObjectInfo {
                id: p.id,
                class: ObjectClass::Pedestrian,
                position: p.position,
                velocity: p.velocity,
                yaw: fp.yaw,
                length: 2.0 * p.half_size,
                width: 2.0 * p.half_size,
            });
        }
    }
    objects.sort_by_key(|o| o.id);
    ObjectListMessage { stamp: state.time, objects }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusedSource {
    Lidar,
    Broadcast,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusedObject {
    pub position: Vec2,
    pub source: FusedSource,
}

/// Broadcast objects absorb the nearest unclaimed cluster centroid within
/// `gate`; leftovers on either side pass through unchanged.
pub fn fuse(clusters: &[Vec2], msg: Option<&ObjectListMessage>, gate: f64) -> Vec<FusedObject> {
    let mut used = vec![false; clusters.len()];
    let mut out = Vec::new();
    if let Some(msg) = msg {
        for o in &msg.objects {
            let mut best: Option<(f64, usize)> = None;
            for (k, c) in clusters.iter().enumerate() {
                let d = c.dist(o.position);
                if !used[k] && d <= gate && best.map_or(true, |(bd, _)| d < bd) {
                    best = Some((d, k));
                }
            }
            let source = match best {
                Some((_, k)) => {
                    used[k] = true;
                    FusedSource::Both
                }
                None => FusedSource::Broadcast,
            };
            out.push(FusedObject { position: o.position, source });
        }
    }
    for (k, c) in clusters.iter().enumerate() {
        if !used[k] {
            out.push(FusedObject { position: *c, source: FusedSource::Lidar });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Pose2;
    use crate::sim::{Npc, VehicleParams, VehicleState, WeatherState};

    fn state_with(positions: &[(f64, f64)]) -> SimState {
        let p = VehicleParams::default();
        let mut s = SimState::new(VehicleState::new(Pose2::new(0.0, 0.0, 0.0), 0.0, p), WeatherState::clear(), 1, 0.02);
        for (i, &(x, y)) in positions.iter().enumerate() {
            // rear-axle pose placing the footprint center at (x, y)
            s.npcs.push(Npc { id: i as AgentId + 1, vehicle: VehicleState::new(Pose2::new(x - p.center_offset, y, 0.0), 2.0, p), erratic: false });
        }
        s
    }

    #[test]
    fn empty_disk_gives_empty_list() {
        let s = state_with(&[(200.0, 0.0)]);
        assert!(broadcast(&s, Vec2::new(120.0, 0.0), 45.0).objects.is_empty());
    }

    #[test]
    fn membership_is_geometric() {
        let s = state_with(&[(120.0, 45.0), (120.0, 45.01)]);
        let msg = broadcast(&s, Vec2::new(120.0, 0.0), 45.0);
        assert_eq!(msg.objects.iter().map(|o| o.id).collect::<Vec<_>>(), vec![1]);
        assert_eq!(msg.objects[0].velocity, Vec2::new(2.0, 0.0));
    }

    #[test]
    fn ego_never_listed() {
        let s = state_with(&[]);
        assert!(broadcast(&s, Vec2::ZERO, 100.0).objects.is_empty());
    }

    #[test]
    fn fusion_associates_nearest_within_gate() {
        let s = state_with(&[(10.0, 0.0), (30.0, 0.0)]);
        let msg = broadcast(&s, Vec2::ZERO, 100.0);
        let clusters = [Vec2::new(9.0, 0.5), Vec2::new(50.0, 0.0)];
        let fused = fuse(&clusters, Some(&msg), 3.0);
        let sources: Vec<_> = fused.iter().map(|f| f.source).collect();
        assert_eq!(sources, vec![FusedSource::Both, FusedSource::Broadcast, FusedSource::Lidar]);
        assert_eq!(fused[0].position, msg.objects[0].position);
    }
}
