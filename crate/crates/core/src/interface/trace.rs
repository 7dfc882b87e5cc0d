//! JSON-lines run traces: one record per line, a SHA-256 over every line
//! before the closing summary, and metrics derived only from the records.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::geom::Pose2;
use crate::scenario::spec::{ScenarioKind, ScenarioSpec};
use crate::sim::{ControlCommand, EventKind, EGO_ID};
use crate::world::AgentId;

pub const TRACE_FORMAT_VERSION: u32 = 1;
pub const OUTCOME_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format_version: u32,
    pub scenario: ScenarioSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentSample {
    pub id: AgentId,
    pub pedestrian: bool,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub speed: f64,
    /// Footprint distance to the ego.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSample {
    pub ego: Pose2,
    pub speed: f64,
    pub steering: f64,
    /// Command that produced this state.
    pub cmd: ControlCommand,
    pub estimate: Pose2,
    /// Ground-truth route progress and signed cross-track error.
    pub s: f64,
    pub cross_track: f64,
    pub agents: Vec<AgentSample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    RouteComplete,
    TimeLimit,
    ClientDisconnected,
    /// The bridge client broke the protocol and the session was aborted.
    ProtocolError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    /// Hex SHA-256 over every preceding line, newlines included.
    pub hash: String,
    pub outcome: ScenarioOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "topic", content = "payload", rename_all = "snake_case")]
pub enum TracePayload {
    Header(TraceHeader),
    State(StateSample),
    Event(EventKind),
    End { reason: EndReason },
    Summary(TraceSummary),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub tick: u64,
    pub time: f64,
    #[serde(flatten)]
    pub body: TracePayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub format_version: u32,
    pub name: String,
    pub kind: ScenarioKind,
    pub seed: u64,
    pub ticks: u64,
    /// Present iff the ego completed the route within the time limit.
    pub finish_time: Option<f64>,
    /// The run ended early (bridge client gone).
    pub partial: bool,
    pub max_cross_track_error: f64,
    /// Smallest ego footprint distance to any other agent.
    pub min_clearance: Option<f64>,
    pub min_pedestrian_distance: Option<f64>,
    /// Overlap onsets involving the ego.
    pub collision_count: u32,
    pub emergency_brake_count: u32,
    pub pause_event_count: u32,
    pub localization_loss_count: u32,
    pub priority_violation_count: u32,
    pub co_occupancy_count: u32,
    pub stop_line_crossings: u32,
    pub stop_line_full_stops: u32,
    pub final_speed: f64,
    /// Final footprint distance to each vehicle that appeared as an obstacle.
    #[serde(with = "agent_map")]
    pub obstacle_gaps: BTreeMap<AgentId, f64>,
    /// First time each agent entered the ego's fused object set.
    #[serde(with = "agent_map")]
    pub detections: BTreeMap<AgentId, f64>,
    pub trace_hash: String,
}

impl ScenarioOutcome {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("outcome serializes")
    }
}

/// Agent-keyed maps with explicit string keys, so they survive the
/// buffered decoding of the tagged trace records.
mod agent_map {
    use std::collections::BTreeMap;

    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::world::AgentId;

    pub fn serialize<S: Serializer>(map: &BTreeMap<AgentId, f64>, ser: S) -> Result<S::Ok, S::Error> {
        ser.collect_map(map.iter().map(|(k, v)| (k.to_string(), v)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<BTreeMap<AgentId, f64>, D::Error> {
        BTreeMap::<String, f64>::deserialize(de)?
            .into_iter()
            .map(|(k, v)| k.parse().map(|k| (k, v)).map_err(|_| D::Error::custom(format!("bad agent id {k:?}"))))
            .collect()
    }
}

/// Folds trace records into an outcome; used live and on replay.
#[derive(Debug, Clone, Default)]
pub struct MetricsAccumulator {
    header: Option<TraceHeader>,
    ticks: u64,
    finish_time: Option<f64>,
    partial: bool,
    max_cte: f64,
    min_clearance: Option<f64>,
    min_ped: Option<f64>,
    collisions: u32,
    ebrakes: u32,
    pauses: u32,
    loc_losses: u32,
    violations: u32,
    co_occupancy: u32,
    crossings: u32,
    full_stops: u32,
    final_speed: f64,
    obstacles: Vec<AgentId>,
    last_gaps: BTreeMap<AgentId, f64>,
    detections: BTreeMap<AgentId, f64>,
}

fn min_opt(a: Option<f64>, b: f64) -> Option<f64> {
    Some(a.map_or(b, |a| a.min(b)))
}

impl MetricsAccumulator {
    pub fn observe(&mut self, rec: &TraceRecord) {
        match &rec.body {
            TracePayload::Header(h) => self.header = Some(h.clone()),
            TracePayload::State(s) => {
                self.ticks = rec.tick;
                self.max_cte = self.max_cte.max(s.cross_track.abs());
                self.final_speed = s.speed;
                self.last_gaps.clear();
                for a in &s.agents {
                    self.min_clearance = min_opt(self.min_clearance, a.gap);
                    if a.pedestrian {
                        self.min_ped = min_opt(self.min_ped, a.gap);
                    }
                    self.last_gaps.insert(a.id, a.gap);
                }
            }
            TracePayload::Event(e) => match e {
                EventKind::Collision { a, b } if *a == EGO_ID || *b == EGO_ID => self.collisions += 1,
                EventKind::EmergencyBrake => self.ebrakes += 1,
                EventKind::Pause { .. } => self.pauses += 1,
                EventKind::LocalizationLost => self.loc_losses += 1,
                EventKind::PriorityViolation { .. } => self.violations += 1,
                EventKind::ZoneCoOccupancy { .. } => self.co_occupancy += 1,
                EventKind::StopLineCross { stopped, .. } => {
                    self.crossings += 1;
                    if *stopped {
                        self.full_stops += 1;
                    }
                }
                EventKind::RouteComplete => self.finish_time = Some(rec.time),
                EventKind::ObstacleAppear { agent } => self.obstacles.push(*agent),
                EventKind::Detected { agent } => {
                    self.detections.entry(*agent).or_insert(rec.time);
                }
                _ => {}
            },
            TracePayload::End { reason } => self.partial = matches!(reason, EndReason::ClientDisconnected | EndReason::ProtocolError),
            TracePayload::Summary(_) => {}
        }
    }

    pub fn outcome(&self, trace_hash: String) -> ScenarioOutcome {
        let (name, kind, seed) = match &self.header {
            Some(h) => (h.scenario.name.clone(), h.scenario.kind, h.scenario.seed),
            None => (String::new(), ScenarioKind::FreeRun, 0),
        };
        ScenarioOutcome {
            format_version: OUTCOME_FORMAT_VERSION,
            name,
            kind,
            seed,
            ticks: self.ticks,
            finish_time: self.finish_time,
            partial: self.partial,
            max_cross_track_error: self.max_cte,
            min_clearance: self.min_clearance,
            min_pedestrian_distance: self.min_ped,
            collision_count: self.collisions,
            emergency_brake_count: self.ebrakes,
            pause_event_count: self.pauses,
            localization_loss_count: self.loc_losses,
            priority_violation_count: self.violations,
            co_occupancy_count: self.co_occupancy,
            stop_line_crossings: self.crossings,
            stop_line_full_stops: self.full_stops,
            final_speed: self.final_speed,
            obstacle_gaps: self.obstacles.iter().filter_map(|id| self.last_gaps.get(id).map(|&g| (*id, g))).collect(),
            detections: self.detections.clone(),
            trace_hash,
        }
    }
}

/// Destination for trace lines (without trailing newline).
pub trait TraceSink {
    fn write_line(&mut self, line: &str) -> std::io::Result<()>;
}

/// Keeps nothing; only the hash and metrics survive.
pub struct NullSink;

impl TraceSink for NullSink {
    fn write_line(&mut self, _: &str) -> std::io::Result<()> {
        Ok(())
    }
}

impl TraceSink for Vec<String> {
    fn write_line(&mut self, line: &str) -> std::io::Result<()> {
        self.push(line.to_string());
        Ok(())
    }
}

pub struct WriterSink<W: Write>(pub W);

impl<W: Write> TraceSink for WriterSink<W> {
    fn write_line(&mut self, line: &str) -> std::io::Result<()> {
        self.0.write_all(line.as_bytes())?;
        self.0.write_all(b"\n")
    }
}

pub struct TraceWriter<'a> {
    sink: &'a mut dyn TraceSink,
    hasher: Sha256,
    metrics: MetricsAccumulator,
}

impl<'a> TraceWriter<'a> {
    pub fn new(sink: &'a mut dyn TraceSink) -> Self {
        TraceWriter { sink, hasher: Sha256::new(), metrics: MetricsAccumulator::default() }
    }

    pub fn record(&mut self, tick: u64, time: f64, body: TracePayload) -> std::io::Result<()> {
        let rec = TraceRecord { tick, time, body };
        let line = serde_json::to_string(&rec).expect("trace record serializes");
        self.hasher.update(line.as_bytes());
        self.hasher.update(b"\n");
        self.sink.write_line(&line)?;
        self.metrics.observe(&rec);
        Ok(())
    }

    pub fn metrics(&self) -> &MetricsAccumulator {
        &self.metrics
    }

    /// Writes the summary line and returns the outcome it carries.
    pub fn finish(self, tick: u64, time: f64) -> std::io::Result<ScenarioOutcome> {
        let hash = format!("{:x}", self.hasher.finalize());
        let outcome = self.metrics.outcome(hash.clone());
        let rec = TraceRecord { tick, time, body: TracePayload::Summary(TraceSummary { hash, outcome: outcome.clone() }) };
        self.sink.write_line(&serde_json::to_string(&rec).expect("trace record serializes"))?;
        Ok(outcome)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    /// Outcome re-derived from the records.
    pub outcome: ScenarioOutcome,
    /// Outcome stored in the summary line.
    pub recorded: ScenarioOutcome,
    pub hash_matches: bool,
}

impl ReplayReport {
    pub fn consistent(&self) -> bool {
        self.hash_matches && self.outcome == self.recorded
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trace has no summary line")]
    MissingSummary,
    #[error("ticks go backwards at line {0}")]
    TickOrder(usize),
}

pub fn replay(text: &str) -> Result<ReplayReport, ReplayError> {
    let lines: Vec<&str> = text.lines().collect();
    let Some((last, body)) = lines.split_last() else {
        return Err(ReplayError::MissingSummary);
    };
    let summary: TraceRecord = serde_json::from_str(last).map_err(|e| ReplayError::Parse { line: lines.len(), message: e.to_string() })?;
    let TracePayload::Summary(summary) = summary.body else {
        return Err(ReplayError::MissingSummary);
    };
    let mut hasher = Sha256::new();
    let mut acc = MetricsAccumulator::default();
    let mut last_tick = 0;
    for (i, line) in body.iter().enumerate() {
        hasher.update(line.as_bytes());
        hasher.update(b"\n");
        let rec: TraceRecord = serde_json::from_str(line).map_err(|e| ReplayError::Parse { line: i + 1, message: e.to_string() })?;
        if rec.tick < last_tick {
            return Err(ReplayError::TickOrder(i + 1));
        }
        last_tick = rec.tick;
        acc.observe(&rec);
    }
    let hash = format!("{:x}", hasher.finalize());
    Ok(ReplayReport { hash_matches: hash == summary.hash, outcome: acc.outcome(summary.hash.clone()), recorded: summary.outcome })
}
