//! Lidar situational awareness in the ego frame: Euclidean clustering,
//! occupancy grid, A* avoidance check and emergency-brake decision.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::geom::{Polyline, Vec2};
use crate::sensors::LidarConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub points: Vec<Vec2>,
    pub centroid: Vec2,
    pub radius: f64,
}

impl Cluster {
    fn from_points(points: Vec<Vec2>) -> Cluster {
        let n = points.len() as f64;
        let mut c = Vec2::ZERO;
        for &p in &points {
            c = c + p;
        }
        let centroid = c * (1.0 / n);
        let radius = points.iter().map(|p| p.dist(centroid)).fold(0.0, f64::max);
        Cluster { points, centroid, radius }
    }
}

/// Single-linkage components of the `<= tolerance` neighbor graph, kept
/// when they have at least `min_size` points, ordered by centroid bearing.
pub fn cluster_points(points: &[Vec2], tolerance: f64, min_size: usize) -> Vec<Cluster> {
    assert!(tolerance > 0.0, "cluster tolerance must be positive");
    let key = |p: Vec2| ((p.x / tolerance).floor() as i64, (p.y / tolerance).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, &p) in points.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i);
    }
    let t2 = tolerance * tolerance;
    let mut seen = vec![false; points.len()];
    let mut out = Vec::new();
    for start in 0..points.len() {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut members = vec![start];
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            let (kx, ky) = key(points[i]);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    let Some(bucket) = grid.get(&(kx + dx, ky + dy)) else { continue };
                    for &j in bucket {
                        if !seen[j] && (points[i] - points[j]).norm_sq() <= t2 {
                            seen[j] = true;
                            members.push(j);
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
        if members.len() >= min_size {
            members.sort_unstable();
            out.push(Cluster::from_points(members.into_iter().map(|i| points[i]).collect()));
        }
    }
    out.sort_by(|a, b| {
        a.centroid
            .angle()
            .total_cmp(&b.centroid.angle())
            .then(a.centroid.norm().total_cmp(&b.centroid.norm()))
    });
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellState {
    Unknown,
    Free,
    Occupied,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    /// Ego-frame position of the grid's lower-left corner.
    pub origin: Vec2,
}

impl Default for GridConfig {
    fn default() -> Self {
        // 30 m square centered 10 m ahead of the ego
        Self { resolution: 0.5, width: 60, height: 60, origin: Vec2::new(-5.0, -15.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    pub config: GridConfig,
    pub cells: Vec<CellState>,
}

pub type Cell = (usize, usize);

impl OccupancyGrid {
    pub fn new(config: GridConfig, fill: CellState) -> Self {
        Self { config, cells: vec![fill; config.width * config.height] }
    }

    pub fn cell_of(&self, p: Vec2) -> Option<Cell> {
        let c = &self.config;
        let fx = ((p.x - c.origin.x) / c.resolution).floor();
        let fy = ((p.y - c.origin.y) / c.resolution).floor();
        (fx >= 0.0 && fy >= 0.0 && (fx as usize) < c.width && (fy as usize) < c.height).then(|| (fx as usize, fy as usize))
    }

    pub fn center(&self, (i, j): Cell) -> Vec2 {
        let c = &self.config;
        Vec2::new(c.origin.x + (i as f64 + 0.5) * c.resolution, c.origin.y + (j as f64 + 0.5) * c.resolution)
    }

    pub fn get(&self, (i, j): Cell) -> CellState {
        self.cells[j * self.config.width + i]
    }

    pub fn set(&mut self, (i, j): Cell, s: CellState) {
        let w = self.config.width;
        self.cells[j * w + i] = s;
    }

    pub fn count(&self, s: CellState) -> usize {
        self.cells.iter().filter(|&&c| c == s).count()
    }

    /// Text dump, top row first: `.` free, `#` occupied, `?` unknown.
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut out = String::with_capacity((c.width + 1) * c.height);
        for j in (0..c.height).rev() {
            for i in 0..c.width {
                out.push(match self.get((i, j)) {
                    CellState::Free => '.',
                    CellState::Occupied => '#',
                    CellState::Unknown => '?',
                });
            }
            out.push('\n');
        }
        out
    }

    /// Cells crossed by segment `a-b` in traversal order (grid-clipped).
    pub fn traverse(&self, a: Vec2, b: Vec2) -> Vec<Cell> {
        let c = &self.config;
        let res = c.resolution;
        let (w, h) = (c.width as f64 * res, c.height as f64 * res);
        let d = b - a;
        // clip the segment to the grid rectangle
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        for (p, dp, lo, hi) in [(a.x - c.origin.x, d.x, 0.0, w), (a.y - c.origin.y, d.y, 0.0, h)] {
            if dp == 0.0 {
                if p < lo || p >= hi {
                    return Vec::new();
                }
            } else {
                let (ta, tb) = ((lo - p) / dp, (hi - p) / dp);
                t0 = t0.max(ta.min(tb));
                t1 = t1.min(ta.max(tb));
            }
        }
        if t0 > t1 {
            return Vec::new();
        }
        let start = a + d * t0;
        let Some(mut cell) = self.cell_of(start).or_else(|| self.cell_of(start + d * 1e-12)) else { return Vec::new() };
        let end_t = t1;
        let step_x: i64 = if d.x > 0.0 { 1 } else if d.x < 0.0 { -1 } else { 0 };
        let step_y: i64 = if d.y > 0.0 { 1 } else if d.y < 0.0 { -1 } else { 0 };
        let boundary = |idx: usize, step: i64, origin: f64| origin + (idx as f64 + if step > 0 { 1.0 } else { 0.0 }) * res;
        let mut t_max_x = if step_x != 0 { (boundary(cell.0, step_x, c.origin.x) - a.x) / d.x } else { f64::INFINITY };
        let mut t_max_y = if step_y != 0 { (boundary(cell.1, step_y, c.origin.y) - a.y) / d.y } else { f64::INFINITY };
        let t_dx = if step_x != 0 { res / d.x.abs() } else { f64::INFINITY };
        let t_dy = if step_y != 0 { res / d.y.abs() } else { f64::INFINITY };
        let mut out = vec![cell];
        loop {
            let (next_t, axis) = if t_max_x < t_max_y { (t_max_x, 0) } else { (t_max_y, 1) };
            if next_t >= end_t {
                break;
            }
            let (ni, nj) = if axis == 0 {
                t_max_x += t_dx;
                (cell.0 as i64 + step_x, cell.1 as i64)
            } else {
                t_max_y += t_dy;
                (cell.0 as i64, cell.1 as i64 + step_y)
            };
            if ni < 0 || nj < 0 || ni as usize >= c.width || nj as usize >= c.height {
                break;
            }
            cell = (ni as usize, nj as usize);
            out.push(cell);
        }
        out
    }
}

/// Ray-traces one sweep into an ego-frame grid. `points` are the returns in
/// the ego frame; a beam's free cells stop short of its return cell, the
/// return cell is occupied only when that point belongs to a cluster, and
/// beams without a return clear cells out to `max_range`.
pub fn build_grid(points: &[Vec2], clusters: &[Cluster], cfg: &GridConfig, lidar: &LidarConfig) -> OccupancyGrid {
    let mut grid = OccupancyGrid::new(*cfg, CellState::Unknown);
    let origin = lidar.mount.position();
    let mut nearest: Vec<Option<Vec2>> = vec![None; lidar.beam_count];
    for &p in points {
        let bearing = (p - origin).angle() - lidar.mount.yaw;
        if let Some(b) = lidar.nearest_beam(bearing) {
            if nearest[b].map_or(true, |q| (q - origin).norm_sq() > (p - origin).norm_sq()) {
                nearest[b] = Some(p);
            }
        }
    }
    for (b, ret) in nearest.iter().enumerate() {
        match ret {
            Some(p) => {
                let end = grid.cell_of(*p);
                for cell in grid.traverse(origin, *p) {
                    if Some(cell) == end {
                        break;
                    }
                    grid.set(cell, CellState::Free);
                }
            }
            None => {
                let dir = Vec2::from_angle(lidar.mount.yaw + lidar.beam_angle(b));
                for cell in grid.traverse(origin, origin + dir * lidar.max_range) {
                    grid.set(cell, CellState::Free);
                }
            }
        }
    }
    // a cell holding any return is never free
    for &p in points {
        if let Some(cell) = grid.cell_of(p) {
            if grid.get(cell) == CellState::Free {
                grid.set(cell, CellState::Unknown);
            }
        }
    }
    for cl in clusters {
        for &p in &cl.points {
            if let Some(cell) = grid.cell_of(p) {
                grid.set(cell, CellState::Occupied);
            }
        }
    }
    grid
}

/// Occupied cells dilated by `radius` (cell-center distance).
pub fn inflate(grid: &OccupancyGrid, radius: f64) -> Vec<bool> {
    let c = &grid.config;
    let r = (radius / c.resolution).ceil() as i64;
    let r2 = (radius / c.resolution).powi(2);
    let mut out = vec![false; c.width * c.height];
    for j in 0..c.height {
        for i in 0..c.width {
            if grid.get((i, j)) != CellState::Occupied {
                continue;
            }
            for dj in -r..=r {
                for di in -r..=r {
                    if (di * di + dj * dj) as f64 > r2 {
                        continue;
                    }
                    let (x, y) = (i as i64 + di, j as i64 + dj);
                    if x >= 0 && y >= 0 && (x as usize) < c.width && (y as usize) < c.height {
                        out[y as usize * c.width + x as usize] = true;
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", content = "path", rename_all = "snake_case")]
pub enum AvoidResult {
    Clear,
    Blocked,
    Detour(Vec<Cell>),
}

#[derive(Clone, Copy, PartialEq)]
struct Open {
    f: f64,
    g: f64,
    idx: usize,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, o: &Self) -> Ordering {
        o.f.total_cmp(&self.f).then(self.g.total_cmp(&o.g)).then(o.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

pub const NEIGHBORS: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];

/// Diagonal moves need both adjacent orthogonal cells passable.
pub fn step_allowed(passable: &dyn Fn(i64, i64) -> bool, x: i64, y: i64, dx: i64, dy: i64) -> bool {
    passable(x + dx, y + dy) && (dx == 0 || dy == 0 || (passable(x + dx, y) && passable(x, y + dy)))
}

/// 8-connected A* with Euclidean heuristic in cell units.
pub fn astar(width: usize, height: usize, passable: &[bool], start: Cell, goal: Cell) -> Option<(Vec<Cell>, f64)> {
    let idx = |(i, j): Cell| j * width + i;
    if !passable[idx(start)] || !passable[idx(goal)] {
        return None;
    }
    let ok = |x: i64, y: i64| x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height && passable[y as usize * width + x as usize];
    let h = |(i, j): Cell| ((i as f64 - goal.0 as f64).powi(2) + (j as f64 - goal.1 as f64).powi(2)).sqrt();
    let mut g = vec![f64::INFINITY; width * height];
    let mut parent = vec![usize::MAX; width * height];
    let mut closed = vec![false; width * height];
    let mut heap = BinaryHeap::new();
    g[idx(start)] = 0.0;
    heap.push(Open { f: h(start), g: 0.0, idx: idx(start) });
    while let Some(Open { idx: cur, g: gc, .. }) = heap.pop() {
        if closed[cur] {
            continue;
        }
        closed[cur] = true;
        let (x, y) = ((cur % width) as i64, (cur / width) as i64);
        if cur == idx(goal) {
            let mut path = vec![goal];
            let mut k = cur;
            while parent[k] != usize::MAX {
                k = parent[k];
                path.push((k % width, k / width));
            }
            path.reverse();
            return Some((path, gc));
        }
        for (dx, dy) in NEIGHBORS {
            if !step_allowed(&ok, x, y, dx, dy) {
                continue;
            }
            let n = (y + dy) as usize * width + (x + dx) as usize;
            let cost = if dx != 0 && dy != 0 { std::f64::consts::SQRT_2 } else { 1.0 };
            let ng = gc + cost;
            if ng < g[n] {
                g[n] = ng;
                parent[n] = cur;
                heap.push(Open { f: ng + h(((x + dx) as usize, (y + dy) as usize)), g: ng, idx: n });
            }
        }
    }
    None
}

/// Checks the ego-frame path window against the grid; runs A* from the
/// ego cell to the window end when the window is obstructed.
pub fn astar_check(grid: &OccupancyGrid, window: &[Vec2], ego_half_width: f64) -> AvoidResult {
    if window.len() < 2 {
        return AvoidResult::Clear;
    }
    let inflated = inflate(grid, ego_half_width);
    let c = grid.config;
    let line = Polyline::new(window.to_vec());
    let step = c.resolution / 4.0;
    let n = (line.length() / step).ceil() as usize;
    let mut obstructed = false;
    let mut goal = None;
    for k in 0..=n {
        let p = line.point_at(line.length() * k as f64 / n.max(1) as f64);
        if let Some(cell) = grid.cell_of(p) {
            if inflated[cell.1 * c.width + cell.0] {
                obstructed = true;
            }
            goal = Some(cell);
        }
    }
    if !obstructed {
        return AvoidResult::Clear;
    }
    let (Some(start), Some(goal)) = (grid.cell_of(Vec2::ZERO).or_else(|| grid.cell_of(window[0])), goal) else {
        return AvoidResult::Blocked;
    };
    let passable: Vec<bool> = (0..c.width * c.height).map(|k| !inflated[k] && grid.cells[k] != CellState::Unknown || k == start.1 * c.width + start.0).collect();
    match astar(c.width, c.height, &passable, start, goal) {
        Some((path, _)) => AvoidResult::Detour(path),
        None => AvoidResult::Blocked,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrakeConfig {
    pub margin: f64,
    pub ttc_threshold: f64,
    /// Extra lateral clearance beyond the ego half-width.
    pub lateral_margin: f64,
}

impl Default for BrakeConfig {
    fn default() -> Self {
        Self { margin: 1.0, ttc_threshold: 3.0, lateral_margin: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrakeDecision {
    pub engage: bool,
    pub time_to_collision: Option<f64>,
    pub trigger: Option<usize>,
    /// Path distance from the front bumper to the nearest in-corridor point.
    pub distance: Option<f64>,
}

/// `path` is the ego-frame route window starting at the ego; distances are
/// measured along it from `front_offset` (the front bumper).
pub fn brake_check(clusters: &[Cluster], speed: f64, path: &Polyline, front_offset: f64, half_width: f64, decel: f64, cfg: &BrakeConfig) -> BrakeDecision {
    assert!(decel > 0.0);
    let corridor = half_width + cfg.lateral_margin;
    let mut best: Option<(f64, usize)> = None;
    let start = path.project(Vec2::ZERO).s;
    for (k, cl) in clusters.iter().enumerate() {
        for &p in &cl.points {
            let pr = path.project(p);
            let beyond = pr.s >= path.length() - 1e-9 && (p - pr.point).dot(Vec2::from_angle(path.heading_at(path.length()))) > 1e-9;
            if pr.lateral.abs() > corridor || beyond {
                continue;
            }
            let d = pr.s - start - front_offset;
            if d < -front_offset {
                continue;
            }
            let d = d.max(0.0);
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, k));
            }
        }
    }
    let Some((d, k)) = best else {
        return BrakeDecision { engage: false, time_to_collision: None, trigger: None, distance: None };
    };
    let ttc = d / speed.max(1e-6);
    let stopping = speed * speed / (2.0 * decel) + cfg.margin;
    BrakeDecision { engage: stopping >= d && ttc < cfg.ttc_threshold, time_to_collision: Some(ttc), trigger: Some(k), distance: Some(d) }
}
