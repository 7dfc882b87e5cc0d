use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::NdtError;
use crate::geom::{Pose2, Vec2};
use crate::sensors::PointCloud;

pub const NDT_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_CELL_SIZE: f64 = 2.0;
pub const MIN_POINTS_PER_CELL: usize = 3;

/// Symmetric 2x2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Sym2 {
    pub const IDENTITY: Sym2 = Sym2 { xx: 1.0, xy: 0.0, yy: 1.0 };

    pub fn mul_vec(&self, v: Vec2) -> Vec2 {
        Vec2::new(self.xx * v.x + self.xy * v.y, self.xy * v.x + self.yy * v.y)
    }

    pub fn quad(&self, v: Vec2) -> f64 {
        v.dot(self.mul_vec(v))
    }

    /// Eigenvalues (descending) and the unit eigenvector of the larger one.
    pub fn eigen(&self) -> ([f64; 2], Vec2) {
        let (a, b, c) = (self.xx, self.xy, self.yy);
        if b == 0.0 {
            return if a >= c { ([a, c], Vec2::new(1.0, 0.0)) } else { ([c, a], Vec2::new(0.0, 1.0)) };
        }
        let t = 0.5 * (a + c);
        let d = (0.25 * (a - c) * (a - c) + b * b).sqrt();
        let l1 = t + d;
        let l2 = t - d;
        let v = if a >= c { Vec2::new(l1 - c, b) } else { Vec2::new(b, l1 - a) };
        ([l1, l2], v.normalized())
    }

    fn from_eigen(l: [f64; 2], v: Vec2) -> Sym2 {
        let w = v.perp();
        Sym2 {
            xx: l[0] * v.x * v.x + l[1] * w.x * w.x,
            xy: l[0] * v.x * v.y + l[1] * w.x * w.y,
            yy: l[0] * v.y * v.y + l[1] * w.y * w.y,
        }
    }

    pub fn mul(&self, o: &Sym2) -> [[f64; 2]; 2] {
        [
            [self.xx * o.xx + self.xy * o.xy, self.xx * o.xy + self.xy * o.yy],
            [self.xy * o.xx + self.yy * o.xy, self.xy * o.xy + self.yy * o.yy],
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NdtCell {
    pub count: usize,
    pub mean: Vec2,
    pub covariance: Sym2,
    pub inv_covariance: Sym2,
}

impl NdtCell {
    /// Sample mean and (n-1)-normalized covariance, with eigenvalues raised
    /// to `floor`.
    pub fn from_points(points: &[Vec2], floor: f64) -> NdtCell {
        let n = points.len() as f64;
        // shifted by the first point so coincident inputs reproduce exactly
        let base = points[0];
        let mut sum = Vec2::ZERO;
        for &p in points {
            sum = sum + (p - base);
        }
        let mean = base + sum * (1.0 / n);
        let (mut xx, mut xy, mut yy) = (0.0, 0.0, 0.0);
        for &p in points {
            let d = p - mean;
            xx += d.x * d.x;
            xy += d.x * d.y;
            yy += d.y * d.y;
        }
        let denom = if points.len() > 1 { n - 1.0 } else { 1.0 };
        let raw = Sym2 { xx: xx / denom, xy: xy / denom, yy: yy / denom };
        let (l, v) = raw.eigen();
        let l = [l[0].max(floor), l[1].max(floor)];
        NdtCell {
            count: points.len(),
            mean,
            covariance: Sym2::from_eigen(l, v),
            inv_covariance: Sym2::from_eigen([1.0 / l[0], 1.0 / l[1]], v),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NdtMap {
    pub cell_size: f64,
    pub origin: Vec2,
    pub min_points: usize,
    pub eigen_floor: f64,
    pub cells: BTreeMap<(i64, i64), NdtCell>,
}

impl NdtMap {
    pub fn cell_index(&self, p: Vec2) -> (i64, i64) {
        (((p.x - self.origin.x) / self.cell_size).floor() as i64, ((p.y - self.origin.y) / self.cell_size).floor() as i64)
    }

    pub fn cell_at(&self, p: Vec2) -> Option<&NdtCell> {
        self.cells.get(&self.cell_index(p))
    }

    /// Populated cells in the 3x3 block around the cell holding `p`.
    pub fn neighborhood(&self, p: Vec2) -> impl Iterator<Item = &NdtCell> {
        let (ix, iy) = self.cell_index(p);
        (-1..=1).flat_map(move |dy| (-1..=1).filter_map(move |dx| self.cells.get(&(ix + dx, iy + dy))))
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
struct CellRecord {
    ix: i64,
    iy: i64,
    #[serde(flatten)]
    cell: NdtCell,
}

#[derive(Serialize, Deserialize)]
struct NdtMapFile {
    format_version: u32,
    cell_size: f64,
    origin: Vec2,
    min_points: usize,
    eigen_floor: f64,
    cells: Vec<CellRecord>,
}

impl Serialize for NdtMap {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        NdtMapFile {
            format_version: NDT_FORMAT_VERSION,
            cell_size: self.cell_size,
            origin: self.origin,
            min_points: self.min_points,
            eigen_floor: self.eigen_floor,
            cells: self.cells.iter().map(|(&(ix, iy), &cell)| CellRecord { ix, iy, cell }).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for NdtMap {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let f = NdtMapFile::deserialize(d)?;
        if f.format_version != NDT_FORMAT_VERSION {
            return Err(serde::de::Error::custom(format!("unsupported ndt map format_version {}", f.format_version)));
        }
        if !(f.cell_size > 0.0) {
            return Err(serde::de::Error::custom("cell_size must be positive"));
        }
        Ok(NdtMap {
            cell_size: f.cell_size,
            origin: f.origin,
            min_points: f.min_points,
            eigen_floor: f.eigen_floor,
            cells: f.cells.into_iter().map(|r| ((r.ix, r.iy), r.cell)).collect(),
        })
    }
}

/// Pools posed scans into one cell map.
pub fn build_ndt_map(scans: &[(PointCloud, Pose2)], cell_size: f64) -> Result<NdtMap, NdtError> {
    build_ndt_map_with(scans, cell_size, Vec2::ZERO, MIN_POINTS_PER_CELL)
}

pub fn build_ndt_map_with(scans: &[(PointCloud, Pose2)], cell_size: f64, origin: Vec2, min_points: usize) -> Result<NdtMap, NdtError> {
    if !(cell_size > 0.0) {
        return Err(NdtError::InvalidCellSize(cell_size));
    }
    let mut map = NdtMap { cell_size, origin, min_points, eigen_floor: 0.01 * cell_size * cell_size, cells: BTreeMap::new() };
    let mut bins: BTreeMap<(i64, i64), Vec<Vec2>> = BTreeMap::new();
    let mut total = 0usize;
    for (cloud, pose) in scans {
        for &p in &cloud.points {
            let q = pose.transform_point(p);
            bins.entry(map.cell_index(q)).or_default().push(q);
            total += 1;
        }
    }
    if total == 0 {
        return Err(NdtError::EmptyMap);
    }
    for (idx, pts) in bins {
        if pts.len() >= min_points {
            map.cells.insert(idx, NdtCell::from_points(&pts, map.eigen_floor));
        }
    }
    Ok(map)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreTerms {
    pub score: f64,
    pub gradient: [f64; 3],
    pub hessian: [[f64; 3]; 3],
    /// Points that landed in a populated cell.
    pub matched: usize,
}

/// Summed negative unnormalized Gaussian likelihood of the sensor-frame
/// `cloud` placed at `pose`, with analytic derivatives in (x, y, yaw).
/// Each point is scored against every cell of its 3x3 neighbourhood, which
/// widens the basin and keeps the score nearly smooth across cell borders.
pub fn ndt_score(map: &NdtMap, cloud: &PointCloud, pose: &Pose2) -> ScoreTerms {
    let (s, c) = pose.yaw.sin_cos();
    let mut out = ScoreTerms { score: 0.0, gradient: [0.0; 3], hessian: [[0.0; 3]; 3], matched: 0 };
    for &p in &cloud.points {
        let q = pose.transform_point(p);
        let jac = [Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0), Vec2::new(-s * p.x - c * p.y, c * p.x - s * p.y)];
        let d2 = Vec2::new(-c * p.x + s * p.y, -s * p.x - c * p.y);
        let mut any = false;
        for cell in map.neighborhood(q) {
            any = true;
            let a = &cell.inv_covariance;
            let d = q - cell.mean;
            let ad = a.mul_vec(d);
            let e = (-0.5 * d.dot(ad)).exp();
            out.score -= e;
            let g = [ad.dot(jac[0]), ad.dot(jac[1]), ad.dot(jac[2])];
            for i in 0..3 {
                out.gradient[i] += e * g[i];
                for j in 0..3 {
                    let mut h = -g[i] * g[j] + jac[j].dot(a.mul_vec(jac[i]));
                    if i == 2 && j == 2 {
                        h += ad.dot(d2);
                    }
                    out.hessian[i][j] += e * h;
                }
            }
        }
        if any {
            out.matched += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::SimRng;
    use proptest::prelude::*;

    fn cloud(points: Vec<Vec2>) -> PointCloud {
        PointCloud::new(0.0, points)
    }

    #[test]
    fn coincident_points_give_floor_covariance() {
        let m = build_ndt_map(&[(cloud(vec![Vec2::new(0.7, 0.3); 5]), Pose2::IDENTITY)], 2.0).unwrap();
        assert_eq!(m.len(), 1);
        let c = m.cells.values().next().unwrap();
        assert_eq!(c.mean, Vec2::new(0.7, 0.3));
        assert_eq!(c.covariance, Sym2 { xx: 0.04, xy: 0.0, yy: 0.04 });
    }

    #[test]
    fn segment_statistics() {
        // uniform on a 1 m segment from (0.2, 0.4) at 30 degrees
        let dir = Vec2::from_angle(0.5236);
        let a = Vec2::new(0.2, 0.4);
        let pts: Vec<Vec2> = (0..101).map(|i| a + dir * (i as f64 / 100.0)).collect();
        let m = build_ndt_map(&[(cloud(pts.clone()), Pose2::IDENTITY)], 2.0).unwrap();
        let c = m.cells.values().next().unwrap();
        let mid = a + dir * 0.5;
        assert!(c.mean.dist(mid) < 1e-12);
        let (l, v) = c.covariance.eigen();
        assert!(l[0] > l[1]);
        assert!(v.cross(dir).abs() < 1e-9);
        // sample variance of i/100 for i in 0..=100
        let var: f64 = (0..101).map(|i| (i as f64 / 100.0 - 0.5).powi(2)).sum::<f64>() / 100.0;
        assert!((l[0] - var).abs() < 1e-12);
        assert!((l[1] - m.eigen_floor).abs() < 1e-12);
    }

    #[test]
    fn sparse_cells_dropped_and_empty_rejected() {
        let m = build_ndt_map(&[(cloud(vec![Vec2::new(0.5, 0.5), Vec2::new(0.6, 0.5), Vec2::new(5.0, 5.0)]), Pose2::IDENTITY)], 2.0).unwrap();
        assert!(m.is_empty());
        assert!(matches!(build_ndt_map(&[(cloud(vec![]), Pose2::IDENTITY)], 2.0), Err(NdtError::EmptyMap)));
    }

    #[test]
    fn empty_cloud_scores_zero() {
        let m = build_ndt_map(&[(cloud(vec![Vec2::new(0.5, 0.5); 4]), Pose2::IDENTITY)], 2.0).unwrap();
        let t = ndt_score(&m, &cloud(vec![]), &Pose2::IDENTITY);
        assert_eq!(t.score, 0.0);
        assert_eq!(t.gradient, [0.0; 3]);
    }

    #[test]
    fn points_on_means_score_minus_count() {
        let pts = vec![Vec2::new(0.5, 0.5), Vec2::new(0.9, 0.1), Vec2::new(0.2, 1.7), Vec2::new(4.1, 4.2), Vec2::new(4.5, 4.9), Vec2::new(5.3, 4.4)];
        let m = build_ndt_map(&[(cloud(pts), Pose2::IDENTITY)], 2.0).unwrap();
        let means: Vec<Vec2> = m.cells.values().map(|c| c.mean).collect();
        assert_eq!(means.len(), 2);
        let t = ndt_score(&m, &cloud(means), &Pose2::IDENTITY);
        assert!((t.score + 2.0).abs() < 1e-15);
        assert!(t.gradient[0].abs() < 1e-15 && t.gradient[1].abs() < 1e-15);
    }

    #[test]
    fn inverse_times_covariance_is_identity() {
        let mut rng = SimRng::new(9, 0);
        for _ in 0..200 {
            let spread = 0.3 * rng.uniform();
            let pts: Vec<Vec2> = (0..6).map(|_| Vec2::new(rng.uniform_range(0.0, 2.0), rng.uniform_range(0.0, spread))).collect();
            let cell = NdtCell::from_points(&pts, 0.04);
            let p = cell.inv_covariance.mul(&cell.covariance);
            assert!((p[0][0] - 1.0).abs() < 1e-9 && (p[1][1] - 1.0).abs() < 1e-9);
            assert!(p[0][1].abs() < 1e-9 && p[1][0].abs() < 1e-9);
            let (l, _) = cell.covariance.eigen();
            assert!(l[1] >= 0.04 - 1e-12);
        }
    }

    #[test]
    fn json_round_trip() {
        let pts: Vec<Vec2> = (0..30).map(|i| Vec2::new(0.1 * i as f64, (i as f64).sin())).collect();
        let m = build_ndt_map(&[(cloud(pts), Pose2::IDENTITY)], 2.0).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        let back: NdtMap = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }

    proptest! {
        #[test]
        fn pooling_equals_concatenation(seed in 0u64..500) {
            let mut rng = SimRng::new(seed, 0);
            let mut scans = Vec::new();
            let mut merged = Vec::new();
            for _ in 0..3 {
                let pose = Pose2::new(rng.uniform_range(-3.0, 3.0), rng.uniform_range(-3.0, 3.0), rng.uniform_range(-1.0, 1.0));
                let pts: Vec<Vec2> = (0..60).map(|_| Vec2::new(rng.uniform_range(-6.0, 6.0), rng.uniform_range(-6.0, 6.0))).collect();
                merged.extend(pts.iter().map(|&p| pose.transform_point(p)));
                scans.push((cloud(pts), pose));
            }
            let a = build_ndt_map(&scans, 2.0).unwrap();
            let b = build_ndt_map(&[(cloud(merged), Pose2::IDENTITY)], 2.0).unwrap();
            prop_assert_eq!(a.cells.len(), b.cells.len());
            for (k, ca) in &a.cells {
                let cb = &b.cells[k];
                prop_assert_eq!(ca.count, cb.count);
                prop_assert!(ca.mean.dist(cb.mean) < 1e-9);
                prop_assert!((ca.covariance.xx - cb.covariance.xx).abs() < 1e-9);
                prop_assert!((ca.covariance.xy - cb.covariance.xy).abs() < 1e-9);
                prop_assert!((ca.covariance.yy - cb.covariance.yy).abs() < 1e-9);
            }
        }

        #[test]
        fn score_is_frame_equivariant(seed in 0u64..500, rx in -2.0..2.0f64, ry in -2.0..2.0f64, rt in -3.0..3.0f64) {
            let mut rng = SimRng::new(seed, 0);
            let pts: Vec<Vec2> = (0..200).map(|_| Vec2::new(rng.uniform_range(-8.0, 8.0), rng.uniform_range(-8.0, 8.0))).collect();
            let map = build_ndt_map(&[(cloud(pts), Pose2::IDENTITY)], 2.0).unwrap();
            let scan: Vec<Vec2> = (0..50).map(|_| Vec2::new(rng.uniform_range(-6.0, 6.0), rng.uniform_range(-6.0, 6.0))).collect();
            let pose = Pose2::new(0.3, -0.2, 0.1);
            let r = Pose2::new(rx, ry, rt);
            let moved = cloud(scan.iter().map(|&p| r.transform_point(p)).collect());
            let a = ndt_score(&map, &cloud(scan), &pose);
            let b = ndt_score(&map, &moved, &pose.compose(&r.inverse()));
            prop_assert!((a.score - b.score).abs() < 1e-6);
        }
    }
}
