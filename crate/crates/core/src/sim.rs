//! Deterministic discrete-event simulation of online operation: setting-
//! group dispatch on topology changes, fault replay with staged breaker
//! openings and network re-solves, and coordination auditing.
//!
//! The event loop is single-threaded and fully ordered: simultaneous events
//! resolve by relay id, so identical inputs always produce identical logs.
//! Pending trip timers restart from each re-solve instant with the newly
//! computed operating time.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::curve::reduced_rate;
use crate::error::{Error, Result};
use crate::gda::ReducedFeatureSet;
use crate::network::{apply_topology_with_open_ends, BranchEnd, NetworkModel, TopologyState};
use crate::shortcircuit::{
    fault_feed_buses, relay_measurements, solve_fault, FaultLocation, SampledParams,
};

/// The setting bundle a relay runs one mode with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentGroup {
    pub zeta: f64,
    pub eta_i: f64,
    pub eta_v: f64,
    pub i_s_amps: f64,
    pub v_s_pu: f64,
}

/// One relay IED: its communicated feature subset and stored groups.
#[derive(Debug, Clone)]
pub struct RelayAgent {
    pub relay: usize,
    pub id: String,
    pub reduced: ReducedFeatureSet,
    pub groups: BTreeMap<usize, AgentGroup>,
    pub active_mode: usize,
}

impl RelayAgent {
    pub fn active_group(&self) -> Option<&AgentGroup> {
        self.groups.get(&self.active_mode)
    }
}

/// Reliable in-process transport with a configurable delivery delay and
/// scriptable initial drops per relay (for retry experiments).
#[derive(Debug, Clone, Default)]
pub struct Transport {
    pub delivery_delay_s: f64,
    pub drop_next: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MpmcMessage {
    pub seq: usize,
    pub relay: String,
    pub mode_bits: usize,
    pub attempts: usize,
    /// Wall time until the acknowledged delivery, attempts x transport delay.
    pub delivered_after_s: f64,
    pub acknowledged: bool,
}

/// Central view: the current topology, every relay's subscription, and the
/// outbound log.
#[derive(Debug, Clone)]
pub struct MpmcState {
    pub topology: TopologyState,
    pub messages: Vec<MpmcMessage>,
    pub alarms: Vec<String>,
    pub transport: Transport,
}

impl MpmcState {
    pub fn new(topology: TopologyState, transport: Transport) -> Self {
        MpmcState {
            topology,
            messages: Vec::new(),
            alarms: Vec::new(),
            transport,
        }
    }

    pub fn messages_to(&self, relay: &str) -> usize {
        self.messages.iter().filter(|m| m.relay == relay).count()
    }
}

/// Notify exactly the relays whose subscribed features changed; each gets
/// its new mode bits and switches its active group on acknowledgment.
/// Relays lacking a group for the new mode raise an alarm and keep the old
/// group.
pub fn dispatch_topology_change(
    mpmc: &mut MpmcState,
    agents: &mut [RelayAgent],
    new: &TopologyState,
) -> Result<Vec<usize>> {
    let old_vec = mpmc.topology.to_feature_vec();
    let new_vec = new.to_feature_vec();
    if old_vec.len() != new_vec.len() {
        return Err(Error::TopologyMismatch(
            "dispatch saw states of different widths".into(),
        ));
    }
    let changed: Vec<usize> = (0..old_vec.len())
        .filter(|&i| old_vec[i] != new_vec[i])
        .collect();
    let mut sent = Vec::new();
    for agent in agents.iter_mut() {
        let affected = agent.reduced.discrete.iter().any(|j| changed.contains(j));
        if !affected {
            continue;
        }
        let mode = agent.reduced.mode_of(&new_vec);
        let drops = mpmc.transport.drop_next.get(&agent.id).copied().unwrap_or(0);
        mpmc.transport.drop_next.remove(&agent.id);
        let seq = mpmc.messages.len();
        let attempts = drops + 1;
        mpmc.messages.push(MpmcMessage {
            seq,
            relay: agent.id.clone(),
            mode_bits: mode,
            attempts,
            delivered_after_s: attempts as f64 * mpmc.transport.delivery_delay_s,
            acknowledged: true,
        });
        if agent.groups.contains_key(&mode) {
            agent.active_mode = mode;
        } else {
            mpmc.alarms.push(format!(
                "relay {} has no setting group for mode {mode} ({}); keeping mode {}",
                agent.id,
                agent.reduced.describe_mode(mode),
                agent.active_mode
            ));
        }
        sent.push(seq);
    }
    mpmc.topology = new.clone();
    Ok(sent)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TripEventKind {
    Pickup,
    Trip,
    BlockedReverse,
    NoPickup,
}

impl std::fmt::Display for TripEventKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TripEventKind::Pickup => write!(f, "pickup"),
            TripEventKind::Trip => write!(f, "trip"),
            TripEventKind::BlockedReverse => write!(f, "blocked-reverse"),
            TripEventKind::NoPickup => write!(f, "no-pickup"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TripEvent {
    pub time_s: f64,
    pub relay: String,
    pub kind: TripEventKind,
}

/// Ordered event record of one simulated fault.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TripLog {
    pub fault: String,
    pub suppressed: Vec<String>,
    pub events: Vec<TripEvent>,
    /// Relays in trip order.
    pub tripped: Vec<String>,
    /// Operating time each relay computed at its first pickup, including
    /// suppressed relays (their would-be trip instant).
    pub first_schedule: BTreeMap<String, f64>,
    pub isolated: bool,
    pub final_time_s: f64,
}

/// A fault to replay against agents standing in their dispatched modes.
#[derive(Debug, Clone)]
pub struct FaultScenario {
    pub topology: TopologyState,
    pub location: FaultLocation,
    pub zf: Complex64,
    pub params: SampledParams,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum AgentState {
    Quiet,
    PickedUp { scheduled: f64 },
    PickedUpSuppressed,
    Blocked,
    Tripped,
}

/// Replay one fault. Each solve updates every relay's pickup state; the
/// earliest unsuppressed trip opens that relay's breaker end and the network
/// re-solves, until the fault loses every feed that a line relay could
/// interrupt (sources at the faulted bus itself cannot be) or no trips are
/// pending.
pub fn inject_fault(
    model: &NetworkModel,
    agents: &[RelayAgent],
    scenario: &FaultScenario,
    suppressed: &BTreeSet<String>,
) -> Result<TripLog> {
    let mut log = TripLog {
        fault: scenario.location.describe(model),
        suppressed: suppressed.iter().cloned().collect(),
        events: Vec::new(),
        tripped: Vec::new(),
        first_schedule: BTreeMap::new(),
        isolated: false,
        final_time_s: 0.0,
    };

    // Agents in deterministic id order for all tie-breaking.
    let mut order: Vec<usize> = (0..agents.len()).collect();
    order.sort_by(|&a, &b| agents[a].id.cmp(&agents[b].id));

    let local_bus = match scenario.location {
        FaultLocation::Bus { bus } => Some(bus),
        FaultLocation::OnBranch { .. } => None,
    };

    let mut open_ends: Vec<(usize, BranchEnd)> = Vec::new();
    let mut states: Vec<AgentState> = vec![AgentState::Quiet; agents.len()];
    let mut t = 0.0_f64;

    loop {
        let net = apply_topology_with_open_ends(model, &scenario.topology, &open_ends)?;
        let feeds = fault_feed_buses(&net, &scenario.location);
        let interruptible = feeds.iter().any(|&bus| Some(bus) != local_bus);
        if !interruptible {
            // everything a relay could disconnect is disconnected
            for (slot, agent) in agents.iter().enumerate() {
                if matches!(states[slot], AgentState::PickedUp { .. } | AgentState::PickedUpSuppressed) {
                    log.events.push(TripEvent {
                        time_s: t,
                        relay: agent.id.clone(),
                        kind: TripEventKind::NoPickup,
                    });
                    states[slot] = AgentState::Quiet;
                }
            }
            log.isolated = true;
            break;
        }

        let sol = solve_fault(&net, &scenario.location, scenario.zf, &scenario.params, 1.0)?;

        for &slot in &order {
            let agent = &agents[slot];
            if states[slot] == AgentState::Tripped {
                continue;
            }
            let m = relay_measurements(&sol, model, agent.relay);
            let group = agent.active_group();
            let t_op = group.and_then(|g| {
                if m.i_f_a > g.i_s_amps && m.v_f_pu < g.v_s_pu {
                    reduced_rate(m.i_f_a, m.v_f_pu, g.eta_i, g.eta_v, g.i_s_amps, g.v_s_pu)
                        .map(|rate| g.zeta * rate)
                } else {
                    None
                }
            });
            let reverse = !m.forward && m.raw_i_a > 1.0;
            states[slot] = match (states[slot], t_op) {
                (AgentState::Quiet, Some(dt)) => {
                    log.events.push(TripEvent {
                        time_s: t,
                        relay: agent.id.clone(),
                        kind: TripEventKind::Pickup,
                    });
                    log.first_schedule.entry(agent.id.clone()).or_insert(t + dt);
                    if suppressed.contains(&agent.id) {
                        AgentState::PickedUpSuppressed
                    } else {
                        AgentState::PickedUp { scheduled: t + dt }
                    }
                }
                (AgentState::PickedUp { .. }, Some(dt)) => {
                    // timer restarts on the new measurement
                    AgentState::PickedUp { scheduled: t + dt }
                }
                (AgentState::PickedUpSuppressed, Some(_)) => AgentState::PickedUpSuppressed,
                (AgentState::PickedUp { .. } | AgentState::PickedUpSuppressed, None) => {
                    log.events.push(TripEvent {
                        time_s: t,
                        relay: agent.id.clone(),
                        kind: TripEventKind::NoPickup,
                    });
                    AgentState::Quiet
                }
                (AgentState::Quiet, None) if reverse => {
                    log.events.push(TripEvent {
                        time_s: t,
                        relay: agent.id.clone(),
                        kind: TripEventKind::BlockedReverse,
                    });
                    AgentState::Blocked
                }
                (AgentState::Blocked, None) => AgentState::Blocked,
                (AgentState::Blocked, Some(dt)) => {
                    // current turned forward after a topology change
                    log.events.push(TripEvent {
                        time_s: t,
                        relay: agent.id.clone(),
                        kind: TripEventKind::Pickup,
                    });
                    log.first_schedule.entry(agent.id.clone()).or_insert(t + dt);
                    if suppressed.contains(&agent.id) {
                        AgentState::PickedUpSuppressed
                    } else {
                        AgentState::PickedUp { scheduled: t + dt }
                    }
                }
                (s, _) => s,
            };
        }

        // earliest pending trip, ties by relay id
        let mut next: Option<(f64, usize)> = None;
        for &slot in &order {
            if let AgentState::PickedUp { scheduled } = states[slot] {
                let better = match next {
                    None => true,
                    Some((ts, _)) => scheduled < ts,
                };
                if better {
                    next = Some((scheduled, slot));
                }
            }
        }
        let Some((trip_time, slot)) = next else {
            log.isolated = false;
            break;
        };

        t = trip_time;
        let agent = &agents[slot];
        states[slot] = AgentState::Tripped;
        log.events.push(TripEvent {
            time_s: t,
            relay: agent.id.clone(),
            kind: TripEventKind::Trip,
        });
        log.tripped.push(agent.id.clone());
        let (branch, at_bus, _) = model.relay_attachment(agent.relay);
        let (from, _) = model.branch_ends(branch);
        let end = if at_bus == from {
            BranchEnd::From
        } else {
            BranchEnd::To
        };
        if !open_ends.contains(&(branch, end)) {
            open_ends.push((branch, end));
        }
    }

    log.final_time_s = t;
    Ok(log)
}

/// Drive relays with prescribed measurements instead of a solved network:
/// the audit stimulus for coordination sweeps. The fault clears when every
/// unsuppressed driven primary has tripped, or at the first backup trip when
/// all primaries are suppressed.
pub fn drive_measurements(
    agents: &[RelayAgent],
    drive: &BTreeMap<String, (f64, f64)>,
    primaries: &BTreeSet<String>,
    suppressed: &BTreeSet<String>,
) -> TripLog {
    let mut log = TripLog {
        fault: "measurement-drive".to_string(),
        suppressed: suppressed.iter().cloned().collect(),
        events: Vec::new(),
        tripped: Vec::new(),
        first_schedule: BTreeMap::new(),
        isolated: false,
        final_time_s: 0.0,
    };
    let mut order: Vec<usize> = (0..agents.len()).collect();
    order.sort_by(|&a, &b| agents[a].id.cmp(&agents[b].id));

    struct Pending {
        slot: usize,
        time: f64,
    }
    let mut pending: Vec<Pending> = Vec::new();
    for &slot in &order {
        let agent = &agents[slot];
        let Some(&(i, v)) = drive.get(&agent.id) else {
            continue;
        };
        let Some(g) = agent.active_group() else {
            continue;
        };
        if !(i > g.i_s_amps && v < g.v_s_pu) {
            continue;
        }
        let Some(rate) = reduced_rate(i, v, g.eta_i, g.eta_v, g.i_s_amps, g.v_s_pu) else {
            continue;
        };
        let t_op = g.zeta * rate;
        log.events.push(TripEvent {
            time_s: 0.0,
            relay: agent.id.clone(),
            kind: TripEventKind::Pickup,
        });
        log.first_schedule.insert(agent.id.clone(), t_op);
        pending.push(Pending { slot, time: t_op });
    }

    let mut t = 0.0;
    let mut remaining_primaries: BTreeSet<String> = primaries
        .iter()
        .filter(|p| !suppressed.contains(*p) && log.first_schedule.contains_key(*p))
        .cloned()
        .collect();
    loop {
        let next = pending
            .iter()
            .enumerate()
            .filter(|(_, p)| !suppressed.contains(&agents[p.slot].id))
            .min_by(|(_, a), (_, b)| {
                a.time
                    .partial_cmp(&b.time)
                    .unwrap()
                    .then(agents[a.slot].id.cmp(&agents[b.slot].id))
            })
            .map(|(i, _)| i);
        let Some(idx) = next else {
            log.isolated = false;
            break;
        };
        let p = pending.remove(idx);
        t = p.time;
        let id = agents[p.slot].id.clone();
        log.events.push(TripEvent {
            time_s: t,
            relay: id.clone(),
            kind: TripEventKind::Trip,
        });
        log.tripped.push(id.clone());
        remaining_primaries.remove(&id);
        let cleared = remaining_primaries.is_empty();
        if cleared {
            for p in pending.drain(..) {
                log.events.push(TripEvent {
                    time_s: t,
                    relay: agents[p.slot].id.clone(),
                    kind: TripEventKind::NoPickup,
                });
            }
            log.isolated = true;
            break;
        }
    }
    log.final_time_s = t;
    log
}

/// One audit case: a log plus what should have happened.
#[derive(Debug, Clone)]
pub struct AuditCase {
    pub log: TripLog,
    pub expected_primaries: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseVerdict {
    pub fault: String,
    pub isolated: bool,
    /// With no suppression: did only expected primaries trip?
    pub primary_only: Option<bool>,
    /// With a suppressed primary: worst backup margin against its would-be
    /// trip time, seconds.
    pub backup_margin_s: Option<f64>,
    /// Earliest operating time any expected primary computed.
    pub primary_schedule_s: Option<f64>,
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoordinationReport {
    pub cases: Vec<CaseVerdict>,
    pub miscoordinated: usize,
    pub miscoordination_rate: f64,
    pub mct_s: f64,
}

/// Audit a batch of logs against expectations and the coordination time.
pub fn audit_coordination(cases: &[AuditCase], mct_s: f64) -> CoordinationReport {
    let mut verdicts = Vec::new();
    let mut bad = 0usize;
    for case in cases {
        let log = &case.log;
        let mut violations = Vec::new();
        let mut primary_only = None;
        let mut backup_margin = None;

        if log.suppressed.is_empty() {
            let ok = log
                .tripped
                .iter()
                .all(|r| case.expected_primaries.contains(r));
            if !ok {
                for r in &log.tripped {
                    if !case.expected_primaries.contains(r) {
                        violations.push(format!("non-primary relay {r} tripped"));
                    }
                }
            }
            primary_only = Some(ok);
        } else {
            // margin of the first non-suppressed tripper against each
            // suppressed relay's would-be time; only suppressed primaries
            // carry an MCT guarantee (deeper suppressed backups have no
            // certified pair at this fault)
            let mut worst = f64::INFINITY;
            if let Some(first) = log.tripped.first() {
                let trip_t = log
                    .events
                    .iter()
                    .find(|e| &e.relay == first && e.kind == TripEventKind::Trip)
                    .map(|e| e.time_s)
                    .unwrap_or(f64::NAN);
                for sup in &log.suppressed {
                    if let Some(&would_be) = log.first_schedule.get(sup) {
                        let margin = trip_t - would_be;
                        if case.expected_primaries.contains(sup) {
                            if margin < worst {
                                worst = margin;
                            }
                            if margin < mct_s - 1e-6 {
                                violations.push(format!(
                                    "backup {first} tripped {margin:.4} s after suppressed primary {sup}, below MCT {mct_s}"
                                ));
                            }
                        }
                    }
                }
            } else {
                violations.push("no backup tripped with primaries suppressed".to_string());
            }
            if worst.is_finite() {
                backup_margin = Some(worst);
            }
        }
        if !log.isolated {
            violations.push("fault not isolated".to_string());
        }
        if !violations.is_empty() {
            bad += 1;
        }
        let primary_schedule_s = case
            .expected_primaries
            .iter()
            .filter_map(|p| log.first_schedule.get(p).copied())
            .min_by(|a, b| a.partial_cmp(b).unwrap());
        verdicts.push(CaseVerdict {
            fault: log.fault.clone(),
            isolated: log.isolated,
            primary_only,
            backup_margin_s: backup_margin,
            primary_schedule_s,
            violations,
        });
    }
    let total = verdicts.len().max(1);
    CoordinationReport {
        miscoordinated: bad,
        miscoordination_rate: bad as f64 / total as f64,
        cases: verdicts,
        mct_s,
    }
}

/// Write a trip log in the line format `time_s,relay,event`.
pub fn write_trip_log(log: &TripLog, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut emit = |s: String| -> Result<()> {
        w.write_all(s.as_bytes())
            .map_err(|e| Error::io(path.display().to_string(), e))
    };
    emit("time_s,relay,event\n".to_string())?;
    for e in &log.events {
        emit(format!("{},{},{}\n", e.time_s, e.relay, e.kind))?;
    }
    if !log.isolated {
        emit(format!("{},-,unisolated\n", log.final_time_s))?;
    }
    w.flush()
        .map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agent(id: &str, relay: usize, features: Vec<usize>, names: Vec<&str>) -> RelayAgent {
        let reduced = ReducedFeatureSet {
            discrete: features,
            discrete_names: names.iter().map(|s| s.to_string()).collect(),
            local_names: vec!["I_F".into(), "V_F".into()],
        };
        let group = AgentGroup {
            zeta: 0.5,
            eta_i: 1.0,
            eta_v: 1.0,
            i_s_amps: 100.0,
            v_s_pu: 0.9,
        };
        let groups = (0..reduced.mode_count()).map(|m| (m, group)).collect();
        RelayAgent {
            relay,
            id: id.to_string(),
            reduced,
            groups,
            active_mode: 0,
        }
    }

    fn state(bits: &[bool]) -> TopologyState {
        TopologyState {
            switch_closed: bits.to_vec(),
            pcc_closed: vec![],
            dg_in_service: vec![],
        }
    }

    #[test]
    fn dispatch_notifies_only_affected_relays() {
        let mut agents = vec![
            agent("RA", 0, vec![0], vec!["S1"]),
            agent("RB", 1, vec![1], vec!["S2"]),
        ];
        let mut mpmc = MpmcState::new(state(&[true, true]), Transport::default());
        // toggle S1 only
        let sent = dispatch_topology_change(&mut mpmc, &mut agents, &state(&[false, true])).unwrap();
        assert_eq!(sent.len(), 1);
        assert_eq!(mpmc.messages_to("RA"), 1);
        assert_eq!(mpmc.messages_to("RB"), 0);
        assert_eq!(agents[0].active_mode, 0); // S1 open -> bit 0
        // no change: zero messages
        let sent = dispatch_topology_change(&mut mpmc, &mut agents, &state(&[false, true])).unwrap();
        assert!(sent.is_empty());
    }

    #[test]
    fn dispatch_missing_group_raises_alarm() {
        let mut agents = vec![agent("RA", 0, vec![0], vec!["S1"])];
        agents[0].groups.remove(&0);
        agents[0].active_mode = 1;
        let mut mpmc = MpmcState::new(state(&[true]), Transport::default());
        dispatch_topology_change(&mut mpmc, &mut agents, &state(&[false])).unwrap();
        assert_eq!(mpmc.alarms.len(), 1);
        assert_eq!(agents[0].active_mode, 1); // kept
    }

    #[test]
    fn transport_drops_are_retried_and_logged() {
        let mut agents = vec![agent("RA", 0, vec![0], vec!["S1"])];
        let mut transport = Transport {
            delivery_delay_s: 0.02,
            ..Transport::default()
        };
        transport.drop_next.insert("RA".to_string(), 2);
        let mut mpmc = MpmcState::new(state(&[true]), transport);
        dispatch_topology_change(&mut mpmc, &mut agents, &state(&[false])).unwrap();
        assert_eq!(mpmc.messages[0].attempts, 3);
        assert!(mpmc.messages[0].acknowledged);
        assert!((mpmc.messages[0].delivered_after_s - 0.06).abs() < 1e-12);
    }

    #[test]
    fn measurement_drive_orders_and_clears() {
        // primary trips first, backup cancels
        let agents = vec![
            agent("RP", 0, vec![], vec![]),
            agent("RB", 1, vec![], vec![]),
        ];
        let mut drive = BTreeMap::new();
        drive.insert("RP".to_string(), (500.0, 0.4));
        drive.insert("RB".to_string(), (300.0, 0.6));
        let primaries: BTreeSet<String> = ["RP".to_string()].into();
        let log = drive_measurements(&agents, &drive, &primaries, &BTreeSet::new());
        assert_eq!(log.tripped, vec!["RP".to_string()]);
        assert!(log.isolated);
        // suppressing the primary lets the backup clear
        let sup: BTreeSet<String> = ["RP".to_string()].into();
        let log = drive_measurements(&agents, &drive, &primaries, &sup);
        assert_eq!(log.tripped, vec!["RB".to_string()]);
        assert!(log.isolated);
        // margin is visible to the audit
        let case = AuditCase {
            log,
            expected_primaries: vec!["RP".to_string()],
        };
        let report = audit_coordination(&[case], 0.15);
        assert!(report.cases[0].backup_margin_s.is_some());
    }

    #[test]
    fn audit_flags_short_backup_margin() {
        let log = TripLog {
            fault: "constructed".into(),
            suppressed: vec!["RP".into()],
            events: vec![
                TripEvent {
                    time_s: 0.0,
                    relay: "RP".into(),
                    kind: TripEventKind::Pickup,
                },
                TripEvent {
                    time_s: 0.25,
                    relay: "RB".into(),
                    kind: TripEventKind::Trip,
                },
            ],
            tripped: vec!["RB".into()],
            first_schedule: [("RP".to_string(), 0.2)].into(),
            isolated: true,
            final_time_s: 0.25,
        };
        let report = audit_coordination(
            &[AuditCase {
                log,
                expected_primaries: vec!["RP".into()],
            }],
            0.15,
        );
        assert_eq!(report.miscoordinated, 1);
        assert!(report.cases[0].violations[0].contains("below MCT"));
    }

    fn chain_network() -> crate::network::NetworkModel {
        let doc = r#"{
            "base_kv": 12.47,
            "freq_hz": 60.0,
            "buses": [{"id": "1", "nominal_kv": 12.47}, {"id": "2", "nominal_kv": 12.47},
                      {"id": "3", "nominal_kv": 12.47}],
            "branches": [
                {"id": "L1-2", "from_bus": "1", "to_bus": "2", "r_ohm": 0.5, "x_ohm": 1.0,
                 "rated_a": 200.0, "kind": "line"},
                {"id": "L2-3", "from_bus": "2", "to_bus": "3", "r_ohm": 0.5, "x_ohm": 1.0,
                 "rated_a": 150.0, "kind": "line"}
            ],
            "switches": [],
            "pccs": [],
            "sources": [{"id": "GRID", "bus": "1", "scc_mva_min": 21.0, "scc_mva_max": 21.0,
                        "x_r_ratio": 10.0}],
            "dgs": [],
            "relays": [
                {"id": "R1-2", "at_bus": "1", "toward_bus": "2", "branch": "L1-2"},
                {"id": "R2-3", "at_bus": "2", "toward_bus": "3", "branch": "L2-3"}
            ]
        }"#;
        crate::network::parse_network(doc).unwrap()
    }

    fn chain_agents(model: &crate::network::NetworkModel) -> Vec<RelayAgent> {
        // coordinated by construction: the upstream relay is slower
        let mk = |relay: usize, id: &str, zeta: f64, i_s: f64| RelayAgent {
            relay,
            id: id.to_string(),
            reduced: ReducedFeatureSet {
                discrete: vec![],
                discrete_names: vec![],
                local_names: vec!["I_F".into(), "V_F".into()],
            },
            groups: [(
                0,
                AgentGroup {
                    zeta,
                    eta_i: 1.0,
                    eta_v: 1.0,
                    i_s_amps: i_s,
                    v_s_pu: 0.9,
                },
            )]
            .into(),
            active_mode: 0,
        };
        let _ = model;
        vec![mk(0, "R1-2", 0.9, 250.0), mk(1, "R2-3", 0.15, 187.5)]
    }

    #[test]
    fn healthy_radial_fault_trips_only_the_primary() {
        let model = chain_network();
        let agents = chain_agents(&model);
        let scenario = FaultScenario {
            topology: crate::network::TopologyState::all_closed(&model),
            location: crate::shortcircuit::FaultLocation::Bus { bus: 2 },
            zf: num_complex::Complex64::new(0.2, 0.2),
            params: crate::shortcircuit::SampledParams::nominal(&model),
        };
        let log = inject_fault(&model, &agents, &scenario, &BTreeSet::new()).unwrap();
        assert!(log.isolated);
        assert_eq!(log.tripped, vec!["R2-3".to_string()]);
        // the backup picked up and then cancelled
        assert!(log.events.iter().any(|e| e.relay == "R1-2" && e.kind == TripEventKind::Pickup));
        assert!(log
            .events
            .iter()
            .any(|e| e.relay == "R1-2" && e.kind == TripEventKind::NoPickup));
    }

    #[test]
    fn suppressing_everyone_leaves_the_fault_unisolated() {
        let model = chain_network();
        let agents = chain_agents(&model);
        let scenario = FaultScenario {
            topology: crate::network::TopologyState::all_closed(&model),
            location: crate::shortcircuit::FaultLocation::Bus { bus: 2 },
            zf: num_complex::Complex64::new(0.2, 0.2),
            params: crate::shortcircuit::SampledParams::nominal(&model),
        };
        let all: BTreeSet<String> = ["R1-2".to_string(), "R2-3".to_string()].into();
        let log = inject_fault(&model, &agents, &scenario, &all).unwrap();
        assert!(!log.isolated);
        assert!(log.tripped.is_empty());
    }

    #[test]
    fn suppressed_primary_hands_over_to_the_backup() {
        let model = chain_network();
        let agents = chain_agents(&model);
        let scenario = FaultScenario {
            topology: crate::network::TopologyState::all_closed(&model),
            location: crate::shortcircuit::FaultLocation::Bus { bus: 2 },
            zf: num_complex::Complex64::new(0.2, 0.2),
            params: crate::shortcircuit::SampledParams::nominal(&model),
        };
        let sup: BTreeSet<String> = ["R2-3".to_string()].into();
        let log = inject_fault(&model, &agents, &scenario, &sup).unwrap();
        assert!(log.isolated);
        assert_eq!(log.tripped, vec!["R1-2".to_string()]);
        // the suppressed primary's would-be time is on record for audits
        assert!(log.first_schedule.contains_key("R2-3"));
    }

    #[test]
    fn trip_log_file_format() {
        let log = TripLog {
            fault: "bus 8".into(),
            suppressed: vec![],
            events: vec![TripEvent {
                time_s: 0.125,
                relay: "R3-8".into(),
                kind: TripEventKind::Trip,
            }],
            tripped: vec!["R3-8".into()],
            first_schedule: BTreeMap::new(),
            isolated: true,
            final_time_s: 0.125,
        };
        let dir = std::env::temp_dir().join("mgprot-sim-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("log.csv");
        write_trip_log(&log, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "time_s,relay,event\n0.125,R3-8,trip\n");
    }
}
