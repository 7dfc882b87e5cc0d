//! Command-line entry points.

use std::fs;
use std::io::{BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::{info, warn};

use crate::guidance::Route;
use crate::map_ingest::{build_network, centered_projection, parse_osm, validate_network, RoadNetwork};
use crate::scenario::localization::build_route_map;
use crate::scenario::spec::MapRef;
use crate::scenario::{Scenario, ScenarioError, ScenarioKind, ScenarioSpec};
use crate::sensors::LidarConfig;
use crate::world::{compile_world, DEFAULT_LANE_WIDTH};

use super::bridge::serve;
use super::trace::{replay, WriterSink};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ISSUES: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "shuttle", version, about = "Shuttle route simulation and autonomy testbed")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse an OSM extract, build the road network and report issues.
    Ingest {
        osm: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Also write centerlines and buildings as GeoJSON.
        #[arg(long)]
        geojson: Option<PathBuf>,
    },
    /// Drive a recorded route, accumulate scans and build the NDT map.
    BuildMap {
        network: PathBuf,
        route: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        cell_size: f64,
        /// Distance between accumulated scans.
        #[arg(long, default_value_t = 1.0)]
        spacing: f64,
        #[arg(long, default_value_t = DEFAULT_LANE_WIDTH)]
        lane_width: f64,
    },
    /// Drive a scenario's lane route and save the waypoints.
    RecordRoute {
        network: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Scenario whose route is driven; the standard free run by default.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        min_spacing: f64,
    },
    /// Run a scenario, writing outcome.json and trace.jsonl.
    Run {
        scenario: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Re-derive metrics from a trace and verify its hash.
    Replay { trace: PathBuf },
    /// Run a scenario with the ego driven over the lockstep bridge.
    Serve {
        scenario: PathBuf,
        #[arg(long)]
        port: u16,
        /// Where to write outcome.json and trace.jsonl.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn read(path: &Path) -> Result<String, ScenarioError> {
    fs::read_to_string(path).map_err(|e| ScenarioError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn write(path: &Path, text: &str) -> Result<(), ScenarioError> {
    fs::write(path, text)?;
    info!("wrote {}", path.display());
    Ok(())
}

fn ingest(osm: &Path, output: &Path, geojson: Option<&Path>) -> Result<i32, ScenarioError> {
    let doc = parse_osm(&read(osm)?)?;
    let net = build_network(&doc, &centered_projection(&doc))?;
    let issues = validate_network(&net);
    write(output, &serde_json::to_string_pretty(&net)?)?;
    if let Some(g) = geojson {
        write(g, &serde_json::to_string_pretty(&crate::map_ingest::network_geojson(&net))?)?;
    }
    println!("{}", serde_json::to_string_pretty(&issues)?);
    for issue in &issues {
        warn!("{:?} on {}: {}", issue.kind, issue.subject_id, issue.message);
    }
    Ok(if issues.is_empty() { EXIT_OK } else { EXIT_ISSUES })
}

fn load_spec(path: &Path) -> Result<ScenarioSpec, ScenarioError> {
    Ok(ScenarioSpec::from_json(&read(path)?)?)
}

fn open_trace(dir: &Path) -> Result<WriterSink<BufWriter<fs::File>>, ScenarioError> {
    fs::create_dir_all(dir)?;
    Ok(WriterSink(BufWriter::new(fs::File::create(dir.join("trace.jsonl"))?)))
}

fn run(scenario: &Path, output: &Path) -> Result<i32, ScenarioError> {
    let scn = Scenario::load(&load_spec(scenario)?)?;
    let mut sink = open_trace(output)?;
    let mut ctrl = scn.guidance_controller();
    let outcome = scn.run(&mut ctrl, &mut sink)?;
    sink.0.flush()?;
    write(&output.join("outcome.json"), &outcome.to_json())?;
    println!("{}", outcome.to_json());
    Ok(EXIT_OK)
}

fn execute(cli: Cli) -> Result<i32, ScenarioError> {
    match cli.command {
        Command::Ingest { osm, output, geojson } => ingest(&osm, &output, geojson.as_deref()),
        Command::BuildMap { network, route, output, cell_size, spacing, lane_width } => {
            let net: RoadNetwork = serde_json::from_str(&read(&network)?)?;
            let route = Route::from_csv(&read(&route)?)?;
            let world = compile_world(&net, lane_width);
            let map = build_route_map(&world, &route, &LidarConfig::default(), cell_size, spacing)?;
            write(&output, &serde_json::to_string_pretty(&map)?)?;
            Ok(EXIT_OK)
        }
        Command::RecordRoute { network, output, scenario, min_spacing } => {
            let mut spec = match scenario {
                Some(p) => load_spec(&p)?,
                None => ScenarioSpec::standard(ScenarioKind::FreeRun, 0),
            };
            spec.map = MapRef::Path(network.display().to_string());
            let route = Scenario::load(&spec)?.record_route(min_spacing)?;
            write(&output, &route.to_csv())?;
            Ok(EXIT_OK)
        }
        Command::Run { scenario, output } => run(&scenario, &output),
        Command::Replay { trace } => {
            let report = replay(&read(&trace)?).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
            println!("{}", report.outcome.to_json());
            if report.consistent() {
                Ok(EXIT_OK)
            } else {
                eprintln!("replay does not match the recorded summary (hash matches: {})", report.hash_matches);
                Ok(EXIT_RUNTIME)
            }
        }
        Command::Serve { scenario, port, output } => {
            let scn = Scenario::load(&load_spec(&scenario)?)?;
            let listener = TcpListener::bind(("127.0.0.1", port))?;
            info!("waiting for a controller on {}", listener.local_addr()?);
            let outcome = match &output {
                Some(dir) => {
                    let mut sink = open_trace(dir)?;
                    let outcome = serve(&scn, &listener, &mut sink)?;
                    sink.0.flush()?;
                    write(&dir.join("outcome.json"), &outcome.to_json())?;
                    outcome
                }
                None => serve(&scn, &listener, &mut super::trace::NullSink)?,
            };
            println!("{}", outcome.to_json());
            Ok(EXIT_OK)
        }
    }
}

/// Parses `args` (program name first) and runs the subcommand; returns
/// the process exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}
