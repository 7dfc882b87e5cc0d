use std::collections::HashMap;

use crate::geom::Vec2;
use crate::sensors::PointCloud;

/// Greedy disk sampling in input order: a point is kept unless an already
/// kept point lies strictly closer than `radius`.
pub fn downsample(cloud: &PointCloud, radius: f64) -> PointCloud {
    assert!(radius > 0.0, "downsample radius must be positive");
    let key = |p: Vec2| ((p.x / radius).floor() as i64, (p.y / radius).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<Vec2>> = HashMap::new();
    let mut kept = Vec::new();
    let r2 = radius * radius;
    for &p in &cloud.points {
        let (kx, ky) = key(p);
        let mut close = false;
        'search: for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(bucket) = grid.get(&(kx + dx, ky + dy)) {
                    if bucket.iter().any(|q| (p - *q).norm_sq() < r2) {
                        close = true;
                        break 'search;
                    }
                }
            }
        }
        if !close {
            grid.entry((kx, ky)).or_default().push(p);
            kept.push(p);
        }
    }
    PointCloud { stamp: cloud.stamp, points: kept }
}
