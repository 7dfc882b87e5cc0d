use serde::{Deserialize, Serialize};

use super::network::RoadNetwork;
use crate::geom::{segments_intersect, Polyline};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    MissingLaneCount,
    MissingSpeedLimit,
    DanglingWayRef,
    DegenerateWay,
    UnclosedBuilding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub kind: IssueKind,
    pub subject_id: i64,
    pub message: String,
}

impl ValidationIssue {
    fn new(kind: IssueKind, subject_id: i64, message: impl Into<String>) -> Self {
        Self { kind, subject_id, message: message.into() }
    }
}

/// True when the closed ring has two non-adjacent edges that touch.
fn self_intersecting(ring: &[crate::geom::Vec2]) -> bool {
    let n = ring.len() - 1; // edge count; ring repeats its first vertex
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if !adjacent && segments_intersect(ring[i], ring[i + 1], ring[j], ring[j + 1]) {
                return true;
            }
        }
    }
    false
}

/// Reports every rule violation in the network; an empty list means the
/// network is clean and no tag defaults were applied.
pub fn validate_network(net: &RoadNetwork) -> Vec<ValidationIssue> {
    use IssueKind::*;
    let mut issues = Vec::new();
    let bounds = net.bounds.expanded(1e-6);

    for &w in &net.degenerate_ways {
        issues.push(ValidationIssue::new(DegenerateWay, w, format!("way {w} has fewer than two distinct nodes")));
    }
    for seg in &net.segments {
        if seg.lanes_defaulted {
            issues.push(ValidationIssue::new(
                MissingLaneCount,
                seg.id,
                format!("way {} has no usable lanes tag; assumed {}", seg.id, seg.lane_count),
            ));
        }
        if seg.speed_defaulted {
            issues.push(ValidationIssue::new(
                MissingSpeedLimit,
                seg.id,
                format!("way {} has no usable maxspeed tag; assumed {:.2} m/s", seg.id, seg.speed_limit),
            ));
        }
        if seg.centerline.len() < 2 || seg.length() <= 0.0 {
            issues.push(ValidationIssue::new(DegenerateWay, seg.id, format!("way {} has zero length", seg.id)));
        }
        let ends = [seg.centerline.first(), seg.centerline.last()];
        if ends.iter().flatten().any(|p| !bounds.contains(**p)) {
            issues.push(ValidationIssue::new(
                DegenerateWay,
                seg.id,
                format!("way {} has an endpoint outside the declared bounds", seg.id),
            ));
        }
        for j in &seg.junctions {
            match net.intersection(*j) {
                Some(x) if x.segments.contains(&seg.id) => {}
                _ => issues.push(ValidationIssue::new(
                    DanglingWayRef,
                    *j,
                    format!("way {} lists junction {} which does not list it back", seg.id, j),
                )),
            }
        }
    }
    for x in &net.intersections {
        for s in &x.segments {
            match net.segment(*s) {
                Some(seg) if seg.junctions.contains(&x.id) => {}
                Some(_) => issues.push(ValidationIssue::new(
                    DanglingWayRef,
                    *s,
                    format!("junction {} lists way {} which does not list it back", x.id, s),
                )),
                None => issues.push(ValidationIssue::new(
                    DanglingWayRef,
                    *s,
                    format!("junction {} references missing way {}", x.id, s),
                )),
            }
        }
    }
    let along = |segment: i64, s: f64, what: &str, issues: &mut Vec<ValidationIssue>| match net.segment(segment) {
        None => issues.push(ValidationIssue::new(
            DanglingWayRef,
            segment,
            format!("{what} references missing way {segment}"),
        )),
        Some(seg) => {
            let len = Polyline::new(seg.centerline.clone()).length();
            if !(0.0..=len).contains(&s) {
                issues.push(ValidationIssue::new(
                    DegenerateWay,
                    segment,
                    format!("{what} at arclength {s:.3} lies outside way {segment} (length {len:.3})"),
                ));
            }
        }
    };
    for sl in &net.stop_lines {
        along(sl.segment, sl.arclength, "stop line", &mut issues);
    }
    for cw in &net.crosswalks {
        along(cw.segment, cw.arclength, "crosswalk", &mut issues);
    }
    for b in &net.buildings {
        let closed = b.polygon.len() >= 2 && b.polygon.first() == b.polygon.last();
        if !closed {
            issues.push(ValidationIssue::new(
                UnclosedBuilding,
                b.id,
                format!("building {} ring does not return to its first vertex", b.id),
            ));
        } else if b.polygon.len() < 4 {
            issues.push(ValidationIssue::new(DegenerateWay, b.id, format!("building {} has fewer than 3 corners", b.id)));
        } else if self_intersecting(&b.polygon) {
            issues.push(ValidationIssue::new(DegenerateWay, b.id, format!("building {} outline self-intersects", b.id)));
        }
        if b.polygon.iter().any(|p| !bounds.contains(*p)) {
            issues.push(ValidationIssue::new(
                DegenerateWay,
                b.id,
                format!("building {} extends outside the declared bounds", b.id),
            ));
        }
    }
    issues
}
