//! Monte Carlo fault campaigns: scenario sampling, per-relay fault-class
//! labeling, dataset assembly, and the dataset file format.
//!
//! Every scenario draws from its own deterministic substream derived from
//! `(seed, scenario index)`, so results are independent of worker count and
//! scheduling. Labels derive from the bolted-fault flow pattern at nominal
//! source parameters, so the class of a (topology, location) pair does not
//! wobble with the sampled fault impedance.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{apply_topology, BranchKind, EnergizedNetwork, NetworkModel, TopologyState};
use crate::shortcircuit::{
    directed_power, relay_measurements, solve_fault, FaultLocation, FaultSolution,
    RelayMeasurement, SampledParams,
};

const MAX_DRAWS: usize = 1000;
const DATASET_VERSION: &str = "mgprot dataset v1";

fn header_columns(feature_names: &[String]) -> Vec<String> {
    ["scenario", "relay"]
        .into_iter()
        .map(str::to_string)
        .chain(feature_names.iter().cloned())
        .chain(
            ["psi", "i_f_amps", "v_f_pu", "zf_r_ohm", "zf_x_ohm"]
                .into_iter()
                .map(str::to_string),
        )
        .collect()
}

/// Sampling distributions for one campaign. Grid strength and inverter
/// ratios default to the ranges carried by the network description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistributionSpec {
    pub fault_r_ohm: (f64, f64),
    pub fault_x_ohm: (f64, f64),
    /// Override of the model's source short-circuit capacity range, MVA.
    #[serde(default)]
    pub grid_scc_mva: Option<(f64, f64)>,
    /// Override of the model's inverter short-circuit ratio range.
    #[serde(default)]
    pub inverter_ratio: Option<(f64, f64)>,
    pub p_switch_closed: f64,
    pub p_pcc_closed: f64,
    pub p_dg_in_service: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for DistributionSpec {
    fn default() -> Self {
        DistributionSpec {
            fault_r_ohm: (0.0, 3.0),
            fault_x_ohm: (0.0, 3.0),
            grid_scc_mva: None,
            inverter_ratio: None,
            p_switch_closed: 0.5,
            p_pcc_closed: 0.5,
            p_dg_in_service: 0.5,
            samples: 10_000,
            seed: 1,
        }
    }
}

impl DistributionSpec {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("fault_r_ohm", self.fault_r_ohm),
            ("fault_x_ohm", self.fault_x_ohm),
        ];
        for (name, (lo, hi)) in ranges {
            if !lo.is_finite() || !hi.is_finite() || lo > hi || lo < 0.0 {
                return Err(Error::InvalidSpec(format!("{name} range [{lo}, {hi}]")));
            }
        }
        for (name, range) in [
            ("grid_scc_mva", self.grid_scc_mva),
            ("inverter_ratio", self.inverter_ratio),
        ] {
            if let Some((lo, hi)) = range {
                if !lo.is_finite() || !hi.is_finite() || lo > hi || lo <= 0.0 {
                    return Err(Error::InvalidSpec(format!("{name} range [{lo}, {hi}]")));
                }
            }
        }
        for (name, p) in [
            ("p_switch_closed", self.p_switch_closed),
            ("p_pcc_closed", self.p_pcc_closed),
            ("p_dg_in_service", self.p_dg_in_service),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidSpec(format!("{name} = {p} outside [0,1]")));
            }
        }
        Ok(())
    }
}

/// How a fault relates to a relay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaultClass {
    Primary,
    Backup,
    Other,
}

impl fmt::Display for FaultClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FaultClass::Primary => write!(f, "primary"),
            FaultClass::Backup => write!(f, "backup"),
            FaultClass::Other => write!(f, "other"),
        }
    }
}

impl std::str::FromStr for FaultClass {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "primary" => Ok(FaultClass::Primary),
            "backup" => Ok(FaultClass::Backup),
            "other" => Ok(FaultClass::Other),
            other => Err(format!("unknown fault class `{other}`")),
        }
    }
}

pub const FAULT_CLASSES: [FaultClass; 3] =
    [FaultClass::Primary, FaultClass::Backup, FaultClass::Other];

/// One fully specified Monte Carlo draw.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub index: usize,
    pub topology: TopologyState,
    pub location: FaultLocation,
    pub zf: Complex64,
    pub params: SampledParams,
    /// Rejected draws consumed before this scenario materialized.
    pub rejected_draws: usize,
}

/// One relay's datum from one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultRecord {
    pub scenario: usize,
    pub relay: usize,
    pub features: Vec<bool>,
    pub class: FaultClass,
    pub i_f_a: f64,
    pub v_f_pu: f64,
    pub zf_r_ohm: f64,
    pub zf_x_ohm: f64,
}

/// Full campaign output: records for every (scenario, relay) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub relay_ids: Vec<String>,
    pub records: Vec<FaultRecord>,
}

impl Dataset {
    pub fn for_relay(&self, relay: usize) -> impl Iterator<Item = &FaultRecord> {
        self.records.iter().filter(move |r| r.relay == relay)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GenSummary {
    pub requested: usize,
    pub completed: usize,
    pub skipped: usize,
    pub skip_reasons: BTreeMap<String, usize>,
    /// relay id -> class -> count
    pub class_counts: BTreeMap<String, BTreeMap<String, usize>>,
    pub total_rejected_draws: usize,
}

/// Draw one scenario from the `(seed, index)` substream. Draws that land on
/// a de-energized fault location are rejected and redrawn (topology
/// included), bounded by an attempt cap.
pub fn sample_scenario(
    model: &NetworkModel,
    spec: &DistributionSpec,
    index: usize,
) -> Result<Scenario> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);

    // Location universe: every bus, every line-kind branch. Transformer
    // internals are not faultable; their terminal buses are.
    let mut universe: Vec<FaultLocation> = (0..model.buses.len())
        .map(|bus| FaultLocation::Bus { bus })
        .collect();
    for b in 0..model.branches.len() {
        if model.branches[b].kind == BranchKind::Line {
            universe.push(FaultLocation::OnBranch {
                branch: b,
                distance: 0.5,
            });
        }
    }
    if universe.is_empty() {
        return Err(Error::InvalidSpec("model has no faultable element".into()));
    }

    let mut no_energized = 0usize;
    for attempt in 0..MAX_DRAWS {
        let topology = TopologyState {
            switch_closed: (0..model.switches.len())
                .map(|_| rng.random_bool(spec.p_switch_closed))
                .collect(),
            pcc_closed: (0..model.pccs.len())
                .map(|_| rng.random_bool(spec.p_pcc_closed))
                .collect(),
            dg_in_service: (0..model.dgs.len())
                .map(|_| rng.random_bool(spec.p_dg_in_service))
                .collect(),
        };
        let net = apply_topology(model, &topology)?;
        if !net.bus_energized.iter().any(|&e| e) {
            no_energized += 1;
            if no_energized >= MAX_DRAWS {
                return Err(Error::NoEnergizedNetwork(no_energized));
            }
            continue;
        }

        let pick = rng.random_range(0..universe.len());
        let location = match universe[pick] {
            FaultLocation::Bus { bus } => FaultLocation::Bus { bus },
            FaultLocation::OnBranch { branch, .. } => FaultLocation::OnBranch {
                branch,
                distance: rng.random_range(0.0..1.0),
            },
        };
        let energized = match location {
            FaultLocation::Bus { bus } => net.bus_energized[bus],
            FaultLocation::OnBranch { branch, .. } => net.branch_energized[branch],
        };
        let zf = Complex64::new(
            rng.random_range(spec.fault_r_ohm.0..=spec.fault_r_ohm.1),
            rng.random_range(spec.fault_x_ohm.0..=spec.fault_x_ohm.1),
        );
        let params = SampledParams {
            grid_scc_mva: model
                .sources
                .iter()
                .map(|s| {
                    let (lo, hi) = spec.grid_scc_mva.unwrap_or((s.scc_mva_min, s.scc_mva_max));
                    rng.random_range(lo..=hi)
                })
                .collect(),
            inverter_ratio: model
                .dgs
                .iter()
                .map(|d| {
                    let (lo, hi) = spec.inverter_ratio.unwrap_or((
                        d.sc_ratio_min.unwrap_or(1.0),
                        d.sc_ratio_max.unwrap_or(1.0),
                    ));
                    rng.random_range(lo..=hi)
                })
                .collect(),
        };
        if !energized {
            continue;
        }
        return Ok(Scenario {
            index,
            topology,
            location,
            zf,
            params,
            rejected_draws: attempt,
        });
    }
    Err(Error::DeEnergizedFault(format!(
        "scenario {index}: no energized fault location in {MAX_DRAWS} draws"
    )))
}

struct FlowElement {
    branch: usize,
    node_a: usize,
    node_b: usize,
    /// Model bus behind each node; the mid-branch fault point has none.
    bus_a: Option<usize>,
    bus_b: Option<usize>,
    current: Complex64,
    power_a_to_b: f64,
}

fn solution_elements(net: &EnergizedNetwork, sol: &FaultSolution) -> Vec<FlowElement> {
    let model = net.model;
    let mut out = Vec::new();
    let fault_point = sol
        .nodes
        .iter()
        .position(|n| matches!(n, crate::shortcircuit::NodeRef::FaultPoint));
    for b in 0..model.branches.len() {
        let (from, to) = model.branch_ends(b);
        let (nf, nt) = (sol.node_of_bus[from], sol.node_of_bus[to]);
        let i_from = sol.branch_current_from[b];
        let i_to = sol.branch_current_to[b];
        let split = (i_from - i_to).norm() > 1e-9 * i_from.norm().max(i_to.norm()).max(1.0);
        if !split {
            let (Some(na), Some(nb)) = (nf, nt) else {
                continue;
            };
            if i_from.norm() == 0.0 {
                continue;
            }
            // judge direction at the healthier end; a bolted fault zeroes
            // the voltage at the receiving bus
            let p = if sol.v_node[na].norm() >= sol.v_node[nb].norm() {
                directed_power(sol.v_node[na], i_from)
            } else {
                directed_power(sol.v_node[nb], i_from)
            };
            out.push(FlowElement {
                branch: b,
                node_a: na,
                node_b: nb,
                bus_a: Some(from),
                bus_b: Some(to),
                current: i_from,
                power_a_to_b: p,
            });
        } else {
            let Some(fp) = fault_point else { continue };
            if let Some(na) = nf {
                let p = if sol.v_node[na].norm() >= sol.v_node[fp].norm() {
                    directed_power(sol.v_node[na], i_from)
                } else {
                    directed_power(sol.v_node[fp], i_from)
                };
                out.push(FlowElement {
                    branch: b,
                    node_a: na,
                    node_b: fp,
                    bus_a: Some(from),
                    bus_b: None,
                    current: i_from,
                    power_a_to_b: p,
                });
            }
            if let Some(nb) = nt {
                let p = if sol.v_node[fp].norm() >= sol.v_node[nb].norm() {
                    directed_power(sol.v_node[fp], i_to)
                } else {
                    directed_power(sol.v_node[nb], i_to)
                };
                out.push(FlowElement {
                    branch: b,
                    node_a: fp,
                    node_b: nb,
                    bus_a: None,
                    bus_b: Some(to),
                    current: i_to,
                    power_a_to_b: p,
                });
            }
        }
    }
    out
}

/// Per-relay labeling of one solved fault, with the primary relays each
/// backup covers.
#[derive(Debug, Clone)]
pub struct FlowLabeling {
    pub classes: Vec<FaultClass>,
    /// For each relay labeled backup: the primary relays whose failure it
    /// covers at this fault (relays crossed on its minimal path).
    pub covers: Vec<Vec<usize>>,
}

/// Per-relay fault classes for one solved scenario.
///
/// Labeling walks the fault-current flow graph upstream from the fault,
/// counting forward-observing relays crossed on the way: a relay whose
/// element discharges into the fault with zero crossings in between is
/// primary, with exactly one crossing backup, everything else (including
/// relays seeing reverse or negligible current) other. Parallel feeds
/// produce multiple primaries.
pub fn classify_all(net: &EnergizedNetwork, sol: &FaultSolution) -> Vec<FaultClass> {
    label_fault(net, sol).classes
}

/// Full labeling including backup-to-primary coverage.
pub fn label_fault(net: &EnergizedNetwork, sol: &FaultSolution) -> FlowLabeling {
    let model = net.model;
    let n_nodes = sol.v_node.len();

    let max_i = sol
        .branch_current_from
        .iter()
        .chain(sol.branch_current_to.iter())
        .map(|i| i.norm())
        .fold(0.0_f64, f64::max);
    let eps_i = (1e-6 * max_i).max(1e-6);

    let measurements: Vec<RelayMeasurement> = (0..model.relays.len())
        .map(|r| relay_measurements(sol, model, r))
        .collect();

    // Relay guarding each (branch, sender bus) end, when forward-observing.
    let guard_of: std::collections::HashMap<(usize, usize), usize> = (0..model.relays.len())
        .filter(|&ri| measurements[ri].forward)
        .map(|ri| {
            let (branch, at_bus, _) = model.relay_attachment(ri);
            ((branch, at_bus), ri)
        })
        .collect();

    // Upstream adjacency: each flowing element sender -> receiver adds a
    // reverse step receiver -> sender, costing 1 when the sender end is
    // guarded by a forward relay.
    struct Up {
        to_sender: usize,
        guard: Option<usize>,
    }
    let mut upstream: Vec<Vec<Up>> = (0..n_nodes).map(|_| Vec::new()).collect();
    let elements = solution_elements(net, sol);
    for el in &elements {
        if el.current.norm() < eps_i {
            continue;
        }
        let (sender, receiver, sender_bus) = if el.power_a_to_b >= 0.0 {
            (el.node_a, el.node_b, el.bus_a)
        } else {
            (el.node_b, el.node_a, el.bus_b)
        };
        let guard = sender_bus.and_then(|bus| guard_of.get(&(el.branch, bus)).copied());
        upstream[receiver].push(Up { to_sender: sender, guard });
    }

    // 0-1 BFS of relay-crossing counts, fault node outward.
    let mut dist = vec![usize::MAX; n_nodes];
    let mut deque = VecDeque::new();
    dist[sol.fault_node] = 0;
    deque.push_back(sol.fault_node);
    while let Some(v) = deque.pop_front() {
        for up in &upstream[v] {
            let cost = usize::from(up.guard.is_some());
            let nd = dist[v].saturating_add(cost);
            if nd < dist[up.to_sender] {
                dist[up.to_sender] = nd;
                if cost == 0 {
                    deque.push_front(up.to_sender);
                } else {
                    deque.push_back(up.to_sender);
                }
            }
        }
    }

    // Guard sets on distance-1 nodes: which single relay was crossed on some
    // minimal path from the fault. Propagated to a fixpoint over the small
    // graph.
    let mut crossed: Vec<HashSet<usize>> = vec![HashSet::new(); n_nodes];
    let mut changed = true;
    while changed {
        changed = false;
        for v in 0..n_nodes {
            if dist[v] == usize::MAX {
                continue;
            }
            for up in &upstream[v] {
                let s = up.to_sender;
                match up.guard {
                    Some(g) if dist[v] == 0 && dist[s] == 1 => {
                        if crossed[s].insert(g) {
                            changed = true;
                        }
                    }
                    None if dist[v] == 1 && dist[s] == 1 => {
                        let add: Vec<usize> =
                            crossed[v].iter().copied().collect();
                        for g in add {
                            if crossed[s].insert(g) {
                                changed = true;
                            }
                        }
                    }
                    _ => {}
                }
            }
        }
    }

    let mut classes = Vec::with_capacity(model.relays.len());
    let mut covers = Vec::with_capacity(model.relays.len());
    for ri in 0..model.relays.len() {
        if !measurements[ri].forward {
            classes.push(FaultClass::Other);
            covers.push(Vec::new());
            continue;
        }
        let (branch, at_bus, _toward) = model.relay_attachment(ri);
        let Some(el) = elements
            .iter()
            .find(|el| el.branch == branch && (el.bus_a == Some(at_bus) || el.bus_b == Some(at_bus)))
        else {
            classes.push(FaultClass::Other);
            covers.push(Vec::new());
            continue;
        };
        if el.current.norm() < eps_i {
            classes.push(FaultClass::Other);
            covers.push(Vec::new());
            continue;
        }
        let receiver = if el.power_a_to_b >= 0.0 {
            el.node_b
        } else {
            el.node_a
        };
        match dist[receiver] {
            0 => {
                classes.push(FaultClass::Primary);
                covers.push(Vec::new());
            }
            1 => {
                classes.push(FaultClass::Backup);
                let mut list: Vec<usize> = crossed[receiver].iter().copied().collect();
                list.sort_unstable();
                covers.push(list);
            }
            _ => {
                classes.push(FaultClass::Other);
                covers.push(Vec::new());
            }
        }
    }
    FlowLabeling { classes, covers }
}

/// Class of one fault for one relay, from the bolted-fault flow pattern at
/// nominal source parameters.
pub fn classify_fault(
    net: &EnergizedNetwork,
    fault: &FaultLocation,
    relay: usize,
) -> Result<FaultClass> {
    let params = SampledParams::nominal(net.model);
    let sol = solve_fault(net, fault, Complex64::new(0.0, 0.0), &params, 1.0)?;
    Ok(classify_all(net, &sol)[relay])
}

/// Run the whole campaign. Deterministic for a fixed spec; scenarios whose
/// sampling or solve fails are skipped and counted.
pub fn generate_dataset(
    model: &NetworkModel,
    spec: &DistributionSpec,
) -> Result<(Dataset, GenSummary)> {
    spec.validate()?;
    let feature_names = model.feature_names();
    let relay_ids: Vec<String> = model.relays.iter().map(|r| r.id.clone()).collect();

    let results: Vec<std::result::Result<(Vec<FaultRecord>, usize), String>> = (0..spec.samples)
        .into_par_iter()
        .map(|index| scenario_records(model, spec, index).map_err(|e| e.to_string()))
        .collect();

    let mut records = Vec::with_capacity(spec.samples * model.relays.len());
    let mut summary = GenSummary {
        requested: spec.samples,
        ..GenSummary::default()
    };
    for res in results {
        match res {
            Ok((mut recs, rejected)) => {
                summary.completed += 1;
                summary.total_rejected_draws += rejected;
                records.append(&mut recs);
            }
            Err(reason) => {
                summary.skipped += 1;
                *summary.skip_reasons.entry(reason).or_insert(0) += 1;
            }
        }
    }
    for rec in &records {
        *summary
            .class_counts
            .entry(relay_ids[rec.relay].clone())
            .or_default()
            .entry(rec.class.to_string())
            .or_insert(0) += 1;
    }

    Ok((
        Dataset {
            feature_names,
            relay_ids,
            records,
        },
        summary,
    ))
}

fn scenario_records(
    model: &NetworkModel,
    spec: &DistributionSpec,
    index: usize,
) -> Result<(Vec<FaultRecord>, usize)> {
    let scenario = sample_scenario(model, spec, index)?;
    let net = apply_topology(model, &scenario.topology)?;
    let sol = solve_fault(&net, &scenario.location, scenario.zf, &scenario.params, 1.0)?;
    let label_sol = solve_fault(
        &net,
        &scenario.location,
        Complex64::new(0.0, 0.0),
        &SampledParams::nominal(model),
        1.0,
    )?;
    let classes = classify_all(&net, &label_sol);
    let features = scenario.topology.to_feature_vec();
    let records = (0..model.relays.len())
        .map(|relay| {
            let m = relay_measurements(&sol, model, relay);
            FaultRecord {
                scenario: index,
                relay,
                features: features.clone(),
                class: classes[relay],
                i_f_a: m.i_f_a,
                v_f_pu: m.v_f_pu,
                zf_r_ohm: scenario.zf.re,
                zf_x_ohm: scenario.zf.im,
            }
        })
        .collect();
    Ok((records, scenario.rejected_draws))
}

/// Write the dataset in the tabular text format: a version line, a header
/// row, then one row per (scenario, relay) with full float precision.
pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut emit = |s: String| -> Result<()> {
        w.write_all(s.as_bytes())
            .map_err(|e| Error::io(path.display().to_string(), e))
    };
    emit(format!("# {DATASET_VERSION}\n"))?;
    emit(format!("{}\n", header_columns(&dataset.feature_names).join(",")))?;
    for r in &dataset.records {
        let mut cols: Vec<String> = Vec::with_capacity(r.features.len() + 6);
        cols.push(r.scenario.to_string());
        cols.push(dataset.relay_ids[r.relay].clone());
        cols.extend(r.features.iter().map(|&b| if b { "1" } else { "0" }.to_string()));
        cols.push(r.class.to_string());
        cols.push(r.i_f_a.to_string());
        cols.push(r.v_f_pu.to_string());
        cols.push(r.zf_r_ohm.to_string());
        cols.push(r.zf_x_ohm.to_string());
        emit(format!("{}\n", cols.join(",")))?;
    }
    w.flush()
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read a dataset back, validating the version line, the header schema, and
/// every relay id against the model.
pub fn read_dataset(path: &Path, model: &NetworkModel) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let (_, version) = lines
        .next()
        .ok_or_else(|| Error::DatasetIo("empty file".into()))?;
    let version = version.map_err(|e| Error::io(path.display().to_string(), e))?;
    let found = version.trim_start_matches("# ").to_string();
    if found != DATASET_VERSION {
        return Err(Error::SchemaVersion {
            found,
            expected: DATASET_VERSION.to_string(),
        });
    }

    let feature_names = model.feature_names();
    let expected_header = header_columns(&feature_names).join(",");
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::DatasetIo("missing header row".into()))?;
    let header = header.map_err(|e| Error::io(path.display().to_string(), e))?;
    if header != expected_header {
        return Err(Error::DatasetIo(format!(
            "header mismatch: found `{header}`, expected `{expected_header}`"
        )));
    }

    let nf = feature_names.len();
    let mut records = Vec::new();
    for (lineno, line) in lines {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.is_empty() {
            continue;
        }
        let row = lineno + 1;
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != nf + 7 {
            return Err(Error::MalformedRow {
                line: row,
                message: format!("expected {} columns, found {}", nf + 7, cols.len()),
            });
        }
        let parse_f = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| Error::MalformedRow {
                line: row,
                message: format!("bad {what} `{s}`"),
            })
        };
        let scenario: usize = cols[0].parse().map_err(|_| Error::MalformedRow {
            line: row,
            message: format!("bad scenario `{}`", cols[0]),
        })?;
        let relay = model.relay_idx(cols[1])?;
        let mut features = Vec::with_capacity(nf);
        for (i, col) in cols[2..2 + nf].iter().enumerate() {
            match *col {
                "0" => features.push(false),
                "1" => features.push(true),
                other => {
                    return Err(Error::MalformedRow {
                        line: row,
                        message: format!("bad feature {} value `{other}`", feature_names[i]),
                    })
                }
            }
        }
        let class: FaultClass = cols[2 + nf].parse().map_err(|e| Error::MalformedRow {
            line: row,
            message: e,
        })?;
        records.push(FaultRecord {
            scenario,
            relay,
            features,
            class,
            i_f_a: parse_f(cols[3 + nf], "i_f_amps")?,
            v_f_pu: parse_f(cols[4 + nf], "v_f_pu")?,
            zf_r_ohm: parse_f(cols[5 + nf], "zf_r_ohm")?,
            zf_x_ohm: parse_f(cols[6 + nf], "zf_x_ohm")?,
        });
    }
    Ok(Dataset {
        feature_names,
        relay_ids: model.relays.iter().map(|r| r.id.clone()).collect(),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::ks_statistic_uniform;

    /// Radial chain 1 -(R1-2)- 2 -(R2-3)- 3 with a grid source at bus 1.
    fn chain_doc() -> &'static str {
        r#"{
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
            "sources": [{"id": "GRID", "bus": "1", "scc_mva_min": 20.0, "scc_mva_max": 22.0,
                        "x_r_ratio": 10.0}],
            "dgs": [],
            "relays": [
                {"id": "R1-2", "at_bus": "1", "toward_bus": "2", "branch": "L1-2"},
                {"id": "R2-3", "at_bus": "2", "toward_bus": "3", "branch": "L2-3"}
            ]
        }"#
    }

    #[test]
    fn radial_chain_labels_primary_and_backup() {
        let model = crate::network::parse_network(chain_doc()).unwrap();
        let state = TopologyState::all_closed(&model);
        let net = apply_topology(&model, &state).unwrap();
        let fault = FaultLocation::Bus { bus: 2 };
        let r12 = model.relay_idx("R1-2").unwrap();
        let r23 = model.relay_idx("R2-3").unwrap();
        assert_eq!(
            classify_fault(&net, &fault, r23).unwrap(),
            FaultClass::Primary
        );
        assert_eq!(
            classify_fault(&net, &fault, r12).unwrap(),
            FaultClass::Backup
        );
    }

    #[test]
    fn upstream_fault_is_other_for_both() {
        let model = crate::network::parse_network(chain_doc()).unwrap();
        let state = TopologyState::all_closed(&model);
        let net = apply_topology(&model, &state).unwrap();
        let fault = FaultLocation::Bus { bus: 0 };
        for r in 0..2 {
            assert_eq!(classify_fault(&net, &fault, r).unwrap(), FaultClass::Other);
        }
    }

    #[test]
    fn mid_branch_fault_splits_primary_backup() {
        let model = crate::network::parse_network(chain_doc()).unwrap();
        let state = TopologyState::all_closed(&model);
        let net = apply_topology(&model, &state).unwrap();
        let fault = FaultLocation::OnBranch {
            branch: 1,
            distance: 0.5,
        };
        let r12 = model.relay_idx("R1-2").unwrap();
        let r23 = model.relay_idx("R2-3").unwrap();
        assert_eq!(
            classify_fault(&net, &fault, r23).unwrap(),
            FaultClass::Primary
        );
        assert_eq!(
            classify_fault(&net, &fault, r12).unwrap(),
            FaultClass::Backup
        );
    }

    #[test]
    fn scenario_sampling_is_deterministic() {
        let model = crate::network::parse_network(chain_doc()).unwrap();
        let spec = DistributionSpec {
            samples: 10,
            seed: 42,
            ..DistributionSpec::default()
        };
        for i in 0..10 {
            let a = sample_scenario(&model, &spec, i).unwrap();
            let b = sample_scenario(&model, &spec, i).unwrap();
            assert_eq!(a.topology, b.topology);
            assert_eq!(a.location, b.location);
            assert_eq!(a.zf, b.zf);
            assert_eq!(a.params, b.params);
        }
    }

    #[test]
    fn all_probabilities_one_always_draws_everything_closed() {
        let model = crate::network::parse_network(chain_doc()).unwrap();
        let spec = DistributionSpec {
            p_switch_closed: 1.0,
            p_pcc_closed: 1.0,
            p_dg_in_service: 1.0,
            samples: 20,
            seed: 2,
            ..DistributionSpec::default()
        };
        for i in 0..20 {
            let s = sample_scenario(&model, &spec, i).unwrap();
            assert_eq!(s.topology, TopologyState::all_closed(&model));
        }
    }

    #[test]
    fn fault_resistance_mean_near_center() {
        let model = crate::network::parse_network(chain_doc()).unwrap();
        let spec = DistributionSpec {
            samples: 10_000,
            seed: 7,
            ..DistributionSpec::default()
        };
        let n = 10_000;
        let mut sum = 0.0;
        for i in 0..n {
            sum += sample_scenario(&model, &spec, i).unwrap().zf.re;
        }
        let mean = sum / n as f64;
        // Uniform(0,3): mean 1.5, sd of the sample mean = 3/sqrt(12 n)
        let se = 3.0 / (12.0_f64 * n as f64).sqrt();
        assert!(
            (mean - 1.5).abs() < 3.0 * se,
            "mean {mean}, tolerance {}",
            3.0 * se
        );
    }

    #[test]
    fn uniform_variates_pass_ks() {
        let model = crate::network::parse_network(chain_doc()).unwrap();
        let spec = DistributionSpec {
            samples: 10_000,
            seed: 11,
            ..DistributionSpec::default()
        };
        let n = 10_000;
        let mut rs = Vec::with_capacity(n);
        let mut xs = Vec::with_capacity(n);
        let mut sccs = Vec::with_capacity(n);
        for i in 0..n {
            let s = sample_scenario(&model, &spec, i).unwrap();
            rs.push(s.zf.re);
            xs.push(s.zf.im);
            sccs.push(s.params.grid_scc_mva[0]);
        }
        // KS critical value at alpha = 0.01 for large n
        let crit = 1.62762 / (n as f64).sqrt();
        assert!(ks_statistic_uniform(&rs, 0.0, 3.0) < crit);
        assert!(ks_statistic_uniform(&xs, 0.0, 3.0) < crit);
        assert!(ks_statistic_uniform(&sccs, 20.0, 22.0) < crit);
    }

    #[test]
    fn empty_campaign_yields_empty_dataset() {
        let model = crate::network::parse_network(chain_doc()).unwrap();
        let spec = DistributionSpec {
            samples: 0,
            ..DistributionSpec::default()
        };
        let (ds, summary) = generate_dataset(&model, &spec).unwrap();
        assert!(ds.records.is_empty());
        assert_eq!(summary.completed, 0);
        assert_eq!(summary.skipped, 0);
    }

    #[test]
    fn dataset_round_trip_and_errors() {
        let model = crate::network::parse_network(chain_doc()).unwrap();
        let spec = DistributionSpec {
            samples: 50,
            seed: 3,
            ..DistributionSpec::default()
        };
        let (ds, _) = generate_dataset(&model, &spec).unwrap();
        let dir = std::env::temp_dir().join("mgprot-scenario-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.csv");
        write_dataset(&ds, &path).unwrap();
        let back = read_dataset(&path, &model).unwrap();
        assert_eq!(ds, back);

        // truncated row reports its line number
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        let n_lines = lines.len();
        let truncated = {
            let last = lines.last_mut().unwrap();
            let cut = last.len() / 2;
            &last[..cut]
        };
        let bad = format!(
            "{}\n{}\n",
            lines[..n_lines - 1].join("\n"),
            truncated
        );
        let bad_path = dir.join("truncated.csv");
        std::fs::write(&bad_path, bad).unwrap();
        match read_dataset(&bad_path, &model).unwrap_err() {
            Error::MalformedRow { line, .. } => assert_eq!(line, n_lines),
            other => panic!("expected malformed row, got {other}"),
        }

        // unknown relay id is named
        let renamed = text.replacen("R1-2", "R9-9", 1);
        let bad_path2 = dir.join("unknown-relay.csv");
        std::fs::write(&bad_path2, renamed).unwrap();
        match read_dataset(&bad_path2, &model).unwrap_err() {
            Error::UnknownRelay(id) => assert_eq!(id, "R9-9"),
            other => panic!("expected unknown relay, got {other}"),
        }
    }

    #[test]
    fn every_scenario_relay_pair_appears_exactly_once() {
        let model = crate::network::parse_network(chain_doc()).unwrap();
        let spec = DistributionSpec {
            samples: 60,
            seed: 5,
            ..DistributionSpec::default()
        };
        let (ds, summary) = generate_dataset(&model, &spec).unwrap();
        assert_eq!(ds.records.len(), summary.completed * model.relays.len());
        let mut seen = HashSet::new();
        for rec in &ds.records {
            assert!(seen.insert((rec.scenario, rec.relay)), "duplicate pair");
        }
    }

    #[test]
    fn two_runs_same_seed_identical_files() {
        let model = crate::network::parse_network(chain_doc()).unwrap();
        let spec = DistributionSpec {
            samples: 40,
            seed: 9,
            ..DistributionSpec::default()
        };
        let dir = std::env::temp_dir().join("mgprot-scenario-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let (a, _) = generate_dataset(&model, &spec).unwrap();
        let (b, _) = generate_dataset(&model, &spec).unwrap();
        let pa = dir.join("det-a.csv");
        let pb = dir.join("det-b.csv");
        write_dataset(&a, &pa).unwrap();
        write_dataset(&b, &pb).unwrap();
        assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
    }
}
