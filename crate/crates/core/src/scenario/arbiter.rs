//! First-come-first-served right of way at stop-controlled junctions and
//! traffic circles, with disk-shaped conflict zones.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::geom::Vec2;
use crate::map_ingest::IntersectionControl;
use crate::sim::{EventKind, EGO_ID};
use crate::world::{AgentId, Footprint, StaticWorld};

use super::spec::ArbiterConfig;

/// What the arbiter needs to know about one vehicle this tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleStatus {
    pub id: AgentId,
    pub footprint: Footprint,
    pub speed: f64,
    /// Next stop line ahead: (intersection, distance from the front bumper).
    pub next_stop: Option<(i64, f64)>,
    /// Erratic vehicle asking to run its next stop line.
    pub claim_request: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictZone {
    pub intersection: i64,
    pub center: Vec2,
    pub radius: f64,
    /// Waiting vehicles as (arrival tick, id); served in that order.
    pub queue: Vec<(u64, AgentId)>,
    pub grantee: Option<AgentId>,
    /// Erratic vehicle that took the zone without queueing.
    pub claim: Option<AgentId>,
    pub occupants: BTreeSet<AgentId>,
    entered: BTreeSet<AgentId>,
    approaching: BTreeSet<AgentId>,
}

impl ConflictZone {
    fn holder(&self) -> Option<AgentId> {
        self.grantee.or(self.claim)
    }

    fn free(&self) -> bool {
        self.holder().is_none() && self.occupants.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Arbiter {
    pub zones: BTreeMap<i64, ConflictZone>,
    co_occupied: BTreeSet<(i64, AgentId)>,
}

impl Arbiter {
    /// One zone per controlled intersection of the world.
    pub fn new(world: &StaticWorld, cfg: &ArbiterConfig) -> Arbiter {
        let mut zones = BTreeMap::new();
        for x in &world.intersections {
            let radius = match x.control {
                IntersectionControl::None => continue,
                IntersectionControl::StopSign => cfg.junction_radius,
                IntersectionControl::Circle => x.radius + cfg.circle_margin,
            };
            zones.insert(x.id, ConflictZone::empty(x.id, x.position, radius));
        }
        Arbiter { zones, co_occupied: BTreeSet::new() }
    }

    pub fn zone(&self, id: i64) -> Option<&ConflictZone> {
        self.zones.get(&id)
    }

    pub fn is_granted(&self, zone: i64, agent: AgentId) -> bool {
        self.zones.get(&zone).is_some_and(|z| z.grantee == Some(agent))
    }

    pub fn is_claimed_by(&self, zone: i64, agent: AgentId) -> bool {
        self.zones.get(&zone).is_some_and(|z| z.claim == Some(agent))
    }

    pub fn is_queued(&self, zone: i64, agent: AgentId) -> bool {
        self.zones.get(&zone).is_some_and(|z| z.queue.iter().any(|&(_, a)| a == agent))
    }

    /// Zones currently granted to `agent`.
    pub fn grants_of(&self, agent: AgentId) -> Vec<i64> {
        self.zones.values().filter(|z| z.grantee == Some(agent)).map(|z| z.intersection).collect()
    }

    /// Advances the arbiter after a simulation step. `vehicles` must be in
    /// ascending id order; returned events are in a deterministic order.
    pub fn update(&mut self, tick: u64, vehicles: &[VehicleStatus], cfg: &ArbiterConfig) -> Vec<EventKind> {
        let mut events = Vec::new();
        let present: BTreeSet<AgentId> = vehicles.iter().map(|v| v.id).collect();
        for zone in self.zones.values_mut() {
            let zid = zone.intersection;
            zone.queue.retain(|(_, a)| present.contains(a));
            zone.approaching.retain(|a| present.contains(a));

            let now: BTreeSet<AgentId> = vehicles.iter().filter(|v| v.footprint.overlaps_disk(zone.center, zone.radius)).map(|v| v.id).collect();
            for &a in zone.occupants.difference(&now) {
                events.push(EventKind::ZoneExit { zone: zid, agent: a });
            }
            for &a in now.difference(&zone.occupants) {
                events.push(EventKind::ZoneEnter { zone: zid, agent: a });
                // a controlled approach entering without holding the zone
                if zone.approaching.remove(&a) && zone.holder() != Some(a) {
                    let over = zone.holder().or_else(|| zone.queue.iter().map(|&(_, b)| b).find(|&b| b != a));
                    if let Some(over) = over {
                        events.push(EventKind::PriorityViolation { zone: zid, agent: a, over });
                    }
                }
            }
            zone.occupants = now;

            for holder in [&mut zone.grantee, &mut zone.claim] {
                if let Some(h) = *holder {
                    if zone.occupants.contains(&h) {
                        zone.entered.insert(h);
                    } else if zone.entered.contains(&h) || !present.contains(&h) {
                        zone.entered.remove(&h);
                        *holder = None;
                    }
                }
            }

            for v in vehicles {
                let Some((x, d)) = v.next_stop else { continue };
                if x != zid {
                    continue;
                }
                zone.approaching.insert(v.id);
                let queued = zone.queue.iter().any(|&(_, a)| a == v.id);
                if v.claim_request && !queued && zone.holder() != Some(v.id) {
                    if zone.free() {
                        if let Some(&(_, first)) = zone.queue.first() {
                            events.push(EventKind::PriorityViolation { zone: zid, agent: v.id, over: first });
                        }
                        zone.claim = Some(v.id);
                    }
                    continue;
                }
                if v.speed == 0.0 && d <= cfg.arrival_window && d >= -0.5 && !queued && zone.holder() != Some(v.id) {
                    zone.queue.push((tick, v.id));
                    events.push(EventKind::Arrival { zone: zid, agent: v.id });
                }
            }
            zone.queue.sort();

            if zone.free() && !zone.queue.is_empty() {
                let (_, a) = zone.queue.remove(0);
                zone.grantee = Some(a);
                events.push(EventKind::Grant { zone: zid, agent: a });
            }

            let ego_in = zone.occupants.contains(&EGO_ID);
            for &a in &zone.occupants {
                if a == EGO_ID {
                    continue;
                }
                let key = (zid, a);
                if ego_in {
                    if self.co_occupied.insert(key) {
                        events.push(EventKind::ZoneCoOccupancy { zone: zid, other: a });
                    }
                } else {
                    self.co_occupied.remove(&key);
                }
            }
            self.co_occupied.retain(|&(z, a)| z != zid || (ego_in && zone.occupants.contains(&a)));
        }
        events
    }
}

impl ConflictZone {
    fn empty(intersection: i64, center: Vec2, radius: f64) -> Self {
        ConflictZone {
            intersection,
            center,
            radius,
            queue: Vec::new(),
            grantee: None,
            claim: None,
            occupants: BTreeSet::new(),
            entered: BTreeSet::new(),
            approaching: BTreeSet::new(),
        }
    }
}
