//! Lockstep controller bridge: newline-delimited JSON over one TCP
//! connection. The server publishes one tick of sensor topics, then blocks
//! for exactly one `ctrl_cmd` before the simulation advances.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::geom::Pose2;
use crate::scenario::smart_circle::ObjectListMessage;
use crate::scenario::{ControlOutput, Controller, Frame, Scenario, ScenarioError};
use crate::sensors::{GpsFix, OdometryDelta, PointCloud};
use crate::sim::{ControlCommand, EventKind, VehicleParams};

use super::trace::{ScenarioOutcome, TraceSink};

pub const BRIDGE_FORMAT_VERSION: u32 = 1;

/// Published topics in per-tick order; `right_of_way` always closes a tick.
pub const PUBLISHED_TOPICS: [&str; 6] = ["scan", "odom", "gps", "pose_estimate", "object_list", "right_of_way"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeMessage {
    pub topic: String,
    pub seq: u64,
    pub stamp: f64,
    pub data: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub version: u32,
    pub dt: f64,
    pub topics: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimateMsg {
    pub pose: Pose2,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RightOfWayMsg {
    pub granted_zones: Vec<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtrlCmd {
    pub steering_target: f64,
    pub accel: f64,
    #[serde(default)]
    pub emergency_brake: bool,
}

impl From<ControlCommand> for CtrlCmd {
    fn from(c: ControlCommand) -> Self {
        CtrlCmd { steering_target: c.steering_target, accel: c.accel, emergency_brake: c.emergency_brake }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMsg {
    pub message: String,
    /// The server closes the session after a fatal error.
    pub fatal: bool,
}

/// Newline-delimited message stream with per-topic sequence numbers.
struct Wire {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    seqs: BTreeMap<String, u64>,
}

impl Wire {
    fn new(stream: TcpStream) -> std::io::Result<Wire> {
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        Ok(Wire { reader: Box::new(reader), writer: Box::new(stream), seqs: BTreeMap::new() })
    }

    fn send<T: Serialize>(&mut self, topic: &str, stamp: f64, data: &T) -> Result<(), ScenarioError> {
        let seq = self.seqs.entry(topic.to_string()).or_insert(0);
        let msg = BridgeMessage { topic: topic.to_string(), seq: *seq, stamp, data: serde_json::to_value(data)? };
        *seq += 1;
        let mut line = serde_json::to_string(&msg)?;
        line.push('\n');
        self.writer.write_all(line.as_bytes()).and_then(|_| self.writer.flush()).map_err(|e| ScenarioError::Disconnected(e.to_string()))
    }

    /// Next raw line, or `None` at end of stream.
    fn recv_line(&mut self) -> Result<Option<String>, ScenarioError> {
        let mut line = String::new();
        match self.reader.read_line(&mut line) {
            Ok(0) => Ok(None),
            Ok(_) => Ok(Some(line)),
            Err(e) => Err(ScenarioError::Disconnected(e.to_string())),
        }
    }
}

fn decode<T: DeserializeOwned>(msg: &BridgeMessage) -> Result<T, ScenarioError> {
    serde_json::from_value(msg.data.clone()).map_err(|e| ScenarioError::Protocol(format!("bad {} payload: {e}", msg.topic)))
}

/// Simulator side of a bridge session; stands in for the in-process
/// controller.
pub struct BridgeServer {
    wire: Wire,
    params: VehicleParams,
    /// Tick the next command must answer.
    expected: u64,
    stamp: f64,
}

impl BridgeServer {
    /// Accepts one client and sends the handshake.
    pub fn accept(listener: &TcpListener, dt: f64, params: VehicleParams) -> Result<BridgeServer, ScenarioError> {
        let (stream, _) = listener.accept()?;
        let mut server = BridgeServer { wire: Wire::new(stream)?, params, expected: 0, stamp: 0.0 };
        let hello = Hello { version: BRIDGE_FORMAT_VERSION, dt, topics: PUBLISHED_TOPICS.iter().chain(&["ctrl_cmd"]).map(|t| t.to_string()).collect() };
        server.wire.send("hello", 0.0, &hello)?;
        Ok(server)
    }

    /// Commands received so far; equals the number of simulated ticks.
    pub fn commands_received(&self) -> u64 {
        self.expected
    }

    fn reject(&mut self, message: String, fatal: bool) -> Result<(), ScenarioError> {
        let stamp = self.stamp;
        self.wire.send("error", stamp, &ErrorMsg { message: message.clone(), fatal })?;
        if fatal {
            return Err(ScenarioError::Protocol(message));
        }
        Ok(())
    }

    /// Clamps out-of-range command fields, reporting each one.
    fn clamp(&self, c: CtrlCmd, events: &mut Vec<EventKind>) -> ControlCommand {
        let p = &self.params;
        let mut fix = |v: f64, lo: f64, hi: f64, field: &str| {
            let out = if v.is_finite() { v.clamp(lo, hi) } else { 0.0 };
            if out != v {
                events.push(EventKind::ClampWarning { field: field.to_string() });
            }
            out
        };
        ControlCommand {
            steering_target: fix(c.steering_target, -p.steering_limit, p.steering_limit, "steering_target"),
            accel: fix(c.accel, -p.a_max_brake, p.a_max_drive, "accel"),
            emergency_brake: c.emergency_brake,
        }
    }

    /// Tells the client the run is over.
    pub fn finish(&mut self, outcome: &ScenarioOutcome) {
        let stamp = self.stamp;
        // the client may already be gone
        let _ = self.wire.send("end", stamp, outcome);
    }
}

impl Controller for BridgeServer {
    fn control(&mut self, f: &Frame) -> Result<ControlOutput, ScenarioError> {
        self.stamp = f.time;
        let t = f.time;
        self.wire.send("scan", t, &f.scan)?;
        self.wire.send("odom", t, &f.odom)?;
        self.wire.send("gps", t, &f.gps)?;
        self.wire.send("pose_estimate", t, &PoseEstimateMsg { pose: f.pose_estimate, speed: f.speed })?;
        if let Some(objects) = &f.object_list {
            self.wire.send("object_list", t, objects)?;
        }
        self.wire.send("right_of_way", t, &RightOfWayMsg { granted_zones: f.granted_zones.clone() })?;

        loop {
            let Some(line) = self.wire.recv_line()? else {
                return Err(ScenarioError::Disconnected(format!("client left at tick {}", f.tick)));
            };
            let msg: BridgeMessage = match serde_json::from_str(&line) {
                Ok(m) => m,
                Err(e) => {
                    self.reject(format!("malformed message: {e}"), true)?;
                    unreachable!("fatal rejection returns an error");
                }
            };
            if msg.topic != "ctrl_cmd" {
                self.reject(format!("unexpected topic {:?}", msg.topic), true)?;
            }
            if msg.seq < self.expected {
                self.reject(format!("duplicate ctrl_cmd for tick {}", msg.seq), false)?;
                continue;
            }
            if msg.seq > self.expected {
                self.reject(format!("ctrl_cmd for tick {} while waiting on {}", msg.seq, self.expected), true)?;
            }
            let cmd: CtrlCmd = match decode(&msg) {
                Ok(c) => c,
                Err(e) => {
                    self.reject(e.to_string(), true)?;
                    unreachable!("fatal rejection returns an error");
                }
            };
            self.expected += 1;
            let mut events = Vec::new();
            let cmd = self.clamp(cmd, &mut events);
            return Ok(ControlOutput { cmd, events, ..Default::default() });
        }
    }
}

/// Runs `scn` with its ego driven by one bridge client.
pub fn serve(scn: &Scenario, listener: &TcpListener, sink: &mut dyn TraceSink) -> Result<ScenarioOutcome, ScenarioError> {
    let mut server = BridgeServer::accept(listener, scn.spec.dt, scn.spec.ego_params)?;
    let outcome = scn.run(&mut server, sink)?;
    server.finish(&outcome);
    Ok(outcome)
}

/// Controller side of a bridge session.
pub struct BridgeClient {
    wire: Wire,
    pub hello: Hello,
    /// Set once the server has sent `end`.
    pub outcome: Option<ScenarioOutcome>,
}

#[derive(Default)]
struct Partial {
    tick: Option<u64>,
    scan: Option<PointCloud>,
    odom: Option<OdometryDelta>,
    gps: Option<GpsFix>,
    pose: Option<PoseEstimateMsg>,
    objects: Option<ObjectListMessage>,
}

impl BridgeClient {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<BridgeClient, ScenarioError> {
        let mut wire = Wire::new(TcpStream::connect(addr)?)?;
        let line = wire.recv_line()?.ok_or_else(|| ScenarioError::Disconnected("no handshake".into()))?;
        let msg: BridgeMessage = serde_json::from_str(&line)?;
        if msg.topic != "hello" {
            return Err(ScenarioError::Protocol(format!("expected hello, got {:?}", msg.topic)));
        }
        let hello: Hello = decode(&msg)?;
        if hello.version != BRIDGE_FORMAT_VERSION {
            return Err(ScenarioError::Protocol(format!("unsupported bridge version {}", hello.version)));
        }
        Ok(BridgeClient { wire, hello, outcome: None })
    }

    /// Collects one tick of topics; `None` once the server ends the run.
    pub fn next_frame(&mut self) -> Result<Option<Frame>, ScenarioError> {
        let mut part = Partial::default();
        loop {
            let Some(line) = self.wire.recv_line()? else {
                return Ok(None);
            };
            let msg: BridgeMessage = serde_json::from_str(&line)?;
            match msg.topic.as_str() {
                "scan" => {
                    part.tick = Some(msg.seq);
                    part.scan = Some(decode(&msg)?);
                }
                "odom" => part.odom = Some(decode(&msg)?),
                "gps" => part.gps = Some(decode(&msg)?),
                "pose_estimate" => part.pose = Some(decode(&msg)?),
                "object_list" => part.objects = Some(decode(&msg)?),
                "right_of_way" => {
                    let row: RightOfWayMsg = decode(&msg)?;
                    let missing = |t: &str| ScenarioError::Protocol(format!("tick closed without {t}"));
                    let pose = part.pose.ok_or_else(|| missing("pose_estimate"))?;
                    return Ok(Some(Frame {
                        tick: part.tick.ok_or_else(|| missing("scan"))?,
                        time: msg.stamp,
                        pose_estimate: pose.pose,
                        speed: pose.speed,
                        scan: part.scan.take().ok_or_else(|| missing("scan"))?,
                        odom: part.odom.ok_or_else(|| missing("odom"))?,
                        gps: part.gps.ok_or_else(|| missing("gps"))?,
                        object_list: part.objects.take(),
                        granted_zones: row.granted_zones,
                    }));
                }
                "end" => {
                    self.outcome = Some(decode(&msg)?);
                    return Ok(None);
                }
                "error" => {
                    let err: ErrorMsg = decode(&msg)?;
                    if err.fatal {
                        return Err(ScenarioError::Protocol(err.message));
                    }
                }
                other => return Err(ScenarioError::Protocol(format!("unknown topic {other:?}"))),
            }
        }
    }

    /// Sends the command answering `tick`.
    pub fn send_command(&mut self, tick: u64, stamp: f64, cmd: CtrlCmd) -> Result<(), ScenarioError> {
        let msg = BridgeMessage { topic: "ctrl_cmd".into(), seq: tick, stamp, data: serde_json::to_value(cmd)? };
        let mut line = serde_json::to_string(&msg)?;
        line.push('\n');
        self.wire.writer.write_all(line.as_bytes()).and_then(|_| self.wire.writer.flush()).map_err(|e| ScenarioError::Disconnected(e.to_string()))
    }

    /// Sends a raw line, for exercising the server's error handling.
    pub fn send_raw(&mut self, line: &str) -> Result<(), ScenarioError> {
        self.wire.writer.write_all(line.as_bytes()).and_then(|_| self.wire.writer.flush()).map_err(|e| ScenarioError::Disconnected(e.to_string()))
    }

    /// Reads the next message whatever its topic.
    pub fn recv(&mut self) -> Result<Option<BridgeMessage>, ScenarioError> {
        match self.wire.recv_line()? {
            Some(line) => Ok(Some(serde_json::from_str(&line)?)),
            None => Ok(None),
        }
    }

    /// Drives the session with `ctrl` until the server ends it; returns the
    /// number of commands sent.
    pub fn run(&mut self, ctrl: &mut dyn Controller) -> Result<u64, ScenarioError> {
        let mut sent = 0;
        while let Some(frame) = self.next_frame()? {
            let out = ctrl.control(&frame)?;
            self.send_command(frame.tick, frame.time, out.cmd.into())?;
            sent += 1;
        }
        Ok(sent)
    }
}
