//! Static description of the reconfigurable distribution network and the
//! resolution of a topology state into the energized subgraph.
//!
//! The model is parsed once from a JSON document and is immutable afterwards,
//! so it can be shared freely across parallel workers. All element references
//! are resolved to dense indices during parsing; downstream code works with
//! indices and uses ids only for reporting.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchKind {
    Line,
    Transformer,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: String,
    pub nominal_kv: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub id: String,
    pub from_bus: String,
    pub to_bus: String,
    pub r_ohm: f64,
    pub x_ohm: f64,
    pub rated_a: f64,
    pub kind: BranchKind,
    /// Off-nominal turns ratio, meaningful for transformer branches.
    #[serde(default = "default_ratio")]
    pub ratio: f64,
}

fn default_ratio() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Switch {
    pub id: String,
    pub branch: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pcc {
    pub id: String,
    pub branch: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Source {
    pub id: String,
    pub bus: String,
    pub scc_mva_min: f64,
    pub scc_mva_max: f64,
    pub x_r_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DgKind {
    Inverter,
    Synchronous,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dg {
    pub id: String,
    pub bus: String,
    pub kind: DgKind,
    pub rating_mva: f64,
    /// Short-circuit to nominal current ratio bounds (inverter kind).
    #[serde(default)]
    pub sc_ratio_min: Option<f64>,
    #[serde(default)]
    pub sc_ratio_max: Option<f64>,
    /// Subtransient reactance in pu on the machine base (synchronous kind).
    #[serde(default)]
    pub subtransient_x_pu: Option<f64>,
    /// Interconnection transformer, folded into the DG series impedance.
    pub tx_mva: f64,
    pub tx_x_pu: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Relay {
    pub id: String,
    pub at_bus: String,
    pub toward_bus: String,
    pub branch: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDocument {
    base_kv: f64,
    freq_hz: f64,
    #[serde(default)]
    notes: Vec<String>,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    switches: Vec<Switch>,
    pccs: Vec<Pcc>,
    sources: Vec<Source>,
    dgs: Vec<Dg>,
    relays: Vec<Relay>,
}

/// Validated, index-resolved network description.
#[derive(Debug)]
pub struct NetworkModel {
    pub base_kv: f64,
    pub freq_hz: f64,
    pub notes: Vec<String>,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub switches: Vec<Switch>,
    pub pccs: Vec<Pcc>,
    pub sources: Vec<Source>,
    pub dgs: Vec<Dg>,
    pub relays: Vec<Relay>,

    bus_index: HashMap<String, usize>,
    branch_index: HashMap<String, usize>,
    relay_index: HashMap<String, usize>,
    /// (from_bus_idx, to_bus_idx) per branch.
    branch_ends: Vec<(usize, usize)>,
    /// Switch/pcc controlling each branch, if any.
    branch_switch: Vec<Option<usize>>,
    branch_pcc: Vec<Option<usize>>,
    /// (branch_idx, at_bus_idx, toward_bus_idx) per relay.
    relay_attach: Vec<(usize, usize, usize)>,
    source_bus: Vec<usize>,
    dg_bus: Vec<usize>,
}

/// One assignment of every switch, PCC, and DG status. Also serves as the
/// discrete feature vector of a scenario: the fixed ordering is all switches,
/// then all PCCs, then all DGs, each in model declaration order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyState {
    pub switch_closed: Vec<bool>,
    pub pcc_closed: Vec<bool>,
    pub dg_in_service: Vec<bool>,
}

/// Which end of a branch a breaker sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchEnd {
    From,
    To,
}

impl fmt::Display for BranchEnd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BranchEnd::From => write!(f, "from"),
            BranchEnd::To => write!(f, "to"),
        }
    }
}

/// The energized subgraph induced by a topology state (and optionally a set
/// of opened breaker ends). Branches conduct only when their controlling
/// switch/PCC is closed and neither end's breaker is open; a conducting
/// branch is energized when its connected component contains a source or an
/// in-service DG.
#[derive(Debug, Clone)]
pub struct EnergizedNetwork<'a> {
    pub model: &'a NetworkModel,
    pub state: TopologyState,
    pub branch_energized: Vec<bool>,
    pub bus_energized: Vec<bool>,
    /// Breaker ends opened on top of the topology state (runtime trips).
    pub open_ends: Vec<(usize, BranchEnd)>,
}

impl NetworkModel {
    pub fn bus_idx(&self, id: &str) -> Result<usize> {
        self.bus_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownBus(id.to_string()))
    }

    pub fn branch_idx(&self, id: &str) -> Result<usize> {
        self.branch_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownBranch(id.to_string()))
    }

    pub fn relay_idx(&self, id: &str) -> Result<usize> {
        self.relay_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownRelay(id.to_string()))
    }

    pub fn branch_ends(&self, branch: usize) -> (usize, usize) {
        self.branch_ends[branch]
    }

    /// (branch index, at-bus index, toward-bus index) for a relay.
    pub fn relay_attachment(&self, relay: usize) -> (usize, usize, usize) {
        self.relay_attach[relay]
    }

    pub fn source_bus_idx(&self, source: usize) -> usize {
        self.source_bus[source]
    }

    pub fn dg_bus_idx(&self, dg: usize) -> usize {
        self.dg_bus[dg]
    }

    pub fn branch_switch(&self, branch: usize) -> Option<usize> {
        self.branch_switch[branch]
    }

    pub fn branch_pcc(&self, branch: usize) -> Option<usize> {
        self.branch_pcc[branch]
    }

    /// Names of the discrete topology features in canonical order.
    pub fn feature_names(&self) -> Vec<String> {
        self.switches
            .iter()
            .map(|s| s.id.clone())
            .chain(self.pccs.iter().map(|p| p.id.clone()))
            .chain(self.dgs.iter().map(|d| d.id.clone()))
            .collect()
    }

    pub fn feature_count(&self) -> usize {
        self.switches.len() + self.pccs.len() + self.dgs.len()
    }

    /// Rated current of a branch in amperes; stands in for the maximum
    /// full-load current the optimizer applies a margin to.
    pub fn max_load_current(&self, branch_id: &str) -> Result<f64> {
        let idx = self.branch_idx(branch_id)?;
        Ok(self.branches[idx].rated_a)
    }

    /// Nominal phase-to-ground voltage in volts.
    pub fn phase_voltage_v(&self) -> f64 {
        self.base_kv * 1e3 / 3f64.sqrt()
    }
}

/// Parse and validate a network description document.
pub fn parse_network(text: &str) -> Result<NetworkModel> {
    let doc: NetworkDocument =
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;

    if doc.base_kv <= 0.0 {
        return Err(Error::Schema("base_kv must be positive".into()));
    }
    if doc.freq_hz <= 0.0 {
        return Err(Error::Schema("freq_hz must be positive".into()));
    }

    let mut bus_index = HashMap::new();
    for (i, bus) in doc.buses.iter().enumerate() {
        if bus.nominal_kv <= 0.0 {
            return Err(Error::NonPositiveRating(format!("bus {}", bus.id)));
        }
        if bus_index.insert(bus.id.clone(), i).is_some() {
            return Err(Error::Schema(format!("duplicate bus id `{}`", bus.id)));
        }
    }

    let mut branch_index = HashMap::new();
    let mut branch_ends = Vec::with_capacity(doc.branches.len());
    for (i, br) in doc.branches.iter().enumerate() {
        if branch_index.insert(br.id.clone(), i).is_some() {
            return Err(Error::Schema(format!("duplicate branch id `{}`", br.id)));
        }
        let from = *bus_index.get(&br.from_bus).ok_or_else(|| Error::DanglingRef {
            kind: "branch",
            id: br.id.clone(),
            target: format!("bus `{}`", br.from_bus),
        })?;
        let to = *bus_index.get(&br.to_bus).ok_or_else(|| Error::DanglingRef {
            kind: "branch",
            id: br.id.clone(),
            target: format!("bus `{}`", br.to_bus),
        })?;
        if from == to {
            return Err(Error::Schema(format!("branch `{}` is a self-loop", br.id)));
        }
        if br.r_ohm < 0.0 {
            return Err(Error::Schema(format!(
                "branch `{}` has negative resistance",
                br.id
            )));
        }
        if br.rated_a <= 0.0 {
            return Err(Error::NonPositiveRating(format!("branch {}", br.id)));
        }
        if br.ratio <= 0.0 {
            return Err(Error::Schema(format!(
                "branch `{}` has non-positive ratio",
                br.id
            )));
        }
        branch_ends.push((from, to));
    }

    let mut branch_switch = vec![None; doc.branches.len()];
    for (i, sw) in doc.switches.iter().enumerate() {
        let b = *branch_index.get(&sw.branch).ok_or_else(|| Error::DanglingRef {
            kind: "switch",
            id: sw.id.clone(),
            target: format!("branch `{}`", sw.branch),
        })?;
        if branch_switch[b].is_some() {
            return Err(Error::Schema(format!(
                "branch `{}` controlled by more than one switch",
                sw.branch
            )));
        }
        branch_switch[b] = Some(i);
    }

    let mut source_bus = Vec::with_capacity(doc.sources.len());
    for src in &doc.sources {
        let b = *bus_index.get(&src.bus).ok_or_else(|| Error::DanglingRef {
            kind: "source",
            id: src.id.clone(),
            target: format!("bus `{}`", src.bus),
        })?;
        if src.scc_mva_min <= 0.0 || src.scc_mva_max < src.scc_mva_min {
            return Err(Error::Schema(format!(
                "source `{}` has invalid short-circuit capacity range",
                src.id
            )));
        }
        if src.x_r_ratio <= 0.0 {
            return Err(Error::Schema(format!(
                "source `{}` has non-positive X/R",
                src.id
            )));
        }
        source_bus.push(b);
    }

    let mut branch_pcc = vec![None; doc.branches.len()];
    for (i, pcc) in doc.pccs.iter().enumerate() {
        let b = *branch_index.get(&pcc.branch).ok_or_else(|| Error::DanglingRef {
            kind: "pcc",
            id: pcc.id.clone(),
            target: format!("branch `{}`", pcc.branch),
        })?;
        let (from, to) = branch_ends[b];
        if !source_bus.contains(&from) && !source_bus.contains(&to) {
            return Err(Error::Schema(format!(
                "pcc `{}` branch does not touch an external-grid bus",
                pcc.id
            )));
        }
        if branch_pcc[b].is_some() || branch_switch[b].is_some() {
            return Err(Error::Schema(format!(
                "branch `{}` has more than one controlling element",
                pcc.branch
            )));
        }
        branch_pcc[b] = Some(i);
    }

    let mut dg_bus = Vec::with_capacity(doc.dgs.len());
    for dg in &doc.dgs {
        let b = *bus_index.get(&dg.bus).ok_or_else(|| Error::DanglingRef {
            kind: "dg",
            id: dg.id.clone(),
            target: format!("bus `{}`", dg.bus),
        })?;
        if dg.rating_mva <= 0.0 || dg.tx_mva <= 0.0 {
            return Err(Error::NonPositiveRating(format!("dg {}", dg.id)));
        }
        match dg.kind {
            DgKind::Inverter => {
                let (lo, hi) = match (dg.sc_ratio_min, dg.sc_ratio_max) {
                    (Some(lo), Some(hi)) => (lo, hi),
                    _ => {
                        return Err(Error::Schema(format!(
                            "inverter dg `{}` missing sc_ratio_min/sc_ratio_max",
                            dg.id
                        )))
                    }
                };
                if lo <= 0.0 || hi < lo {
                    return Err(Error::Schema(format!(
                        "inverter dg `{}` has invalid current ratio range",
                        dg.id
                    )));
                }
            }
            DgKind::Synchronous => {
                let x = dg.subtransient_x_pu.ok_or_else(|| {
                    Error::Schema(format!(
                        "synchronous dg `{}` missing subtransient_x_pu",
                        dg.id
                    ))
                })?;
                if x <= 0.0 {
                    return Err(Error::Schema(format!(
                        "synchronous dg `{}` has non-positive subtransient reactance",
                        dg.id
                    )));
                }
            }
        }
        dg_bus.push(b);
    }

    let mut relay_index = HashMap::new();
    let mut relay_attach = Vec::with_capacity(doc.relays.len());
    for (i, relay) in doc.relays.iter().enumerate() {
        if relay_index.insert(relay.id.clone(), i).is_some() {
            return Err(Error::Schema(format!("duplicate relay id `{}`", relay.id)));
        }
        let branch = *branch_index
            .get(&relay.branch)
            .ok_or_else(|| Error::DanglingRef {
                kind: "relay",
                id: relay.id.clone(),
                target: format!("branch `{}`", relay.branch),
            })?;
        let at = *bus_index.get(&relay.at_bus).ok_or_else(|| Error::DanglingRef {
            kind: "relay",
            id: relay.id.clone(),
            target: format!("bus `{}`", relay.at_bus),
        })?;
        let toward = *bus_index
            .get(&relay.toward_bus)
            .ok_or_else(|| Error::DanglingRef {
                kind: "relay",
                id: relay.id.clone(),
                target: format!("bus `{}`", relay.toward_bus),
            })?;
        let (from, to) = branch_ends[branch];
        let spans = (at == from && toward == to) || (at == to && toward == from);
        if !spans {
            return Err(Error::RelayOrientation(relay.id.clone()));
        }
        relay_attach.push((branch, at, toward));
    }

    Ok(NetworkModel {
        base_kv: doc.base_kv,
        freq_hz: doc.freq_hz,
        notes: doc.notes,
        buses: doc.buses,
        branches: doc.branches,
        switches: doc.switches,
        pccs: doc.pccs,
        sources: doc.sources,
        dgs: doc.dgs,
        relays: doc.relays,
        bus_index,
        branch_index,
        relay_index,
        branch_ends,
        branch_switch,
        branch_pcc,
        relay_attach,
        source_bus,
        dg_bus,
    })
}

impl TopologyState {
    /// State with everything closed and every DG in service.
    pub fn all_closed(model: &NetworkModel) -> Self {
        TopologyState {
            switch_closed: vec![true; model.switches.len()],
            pcc_closed: vec![true; model.pccs.len()],
            dg_in_service: vec![true; model.dgs.len()],
        }
    }

    pub fn covers(&self, model: &NetworkModel) -> bool {
        self.switch_closed.len() == model.switches.len()
            && self.pcc_closed.len() == model.pccs.len()
            && self.dg_in_service.len() == model.dgs.len()
    }

    /// Fixed-order binary feature vector: switches, then PCCs, then DGs.
    pub fn to_feature_vec(&self) -> Vec<bool> {
        self.switch_closed
            .iter()
            .chain(self.pcc_closed.iter())
            .chain(self.dg_in_service.iter())
            .copied()
            .collect()
    }

    pub fn from_feature_vec(model: &NetworkModel, features: &[bool]) -> Result<Self> {
        let ns = model.switches.len();
        let np = model.pccs.len();
        let nd = model.dgs.len();
        if features.len() != ns + np + nd {
            return Err(Error::TopologyMismatch(format!(
                "feature vector length {} does not match model feature count {}",
                features.len(),
                ns + np + nd
            )));
        }
        Ok(TopologyState {
            switch_closed: features[..ns].to_vec(),
            pcc_closed: features[ns..ns + np].to_vec(),
            dg_in_service: features[ns + np..].to_vec(),
        })
    }

    /// Value of one named feature (canonical order lookup by index).
    pub fn feature(&self, idx: usize) -> bool {
        self.to_feature_vec()[idx]
    }
}

/// Resolve a topology state into the energized subgraph.
pub fn apply_topology<'a>(
    model: &'a NetworkModel,
    state: &TopologyState,
) -> Result<EnergizedNetwork<'a>> {
    apply_topology_with_open_ends(model, state, &[])
}

/// Same as [`apply_topology`] with additional opened breaker ends, used by
/// the runtime simulator after trips.
pub fn apply_topology_with_open_ends<'a>(
    model: &'a NetworkModel,
    state: &TopologyState,
    open_ends: &[(usize, BranchEnd)],
) -> Result<EnergizedNetwork<'a>> {
    if !state.covers(model) {
        return Err(Error::TopologyMismatch(format!(
            "state has {} switches / {} pccs / {} dgs, model has {} / {} / {}",
            state.switch_closed.len(),
            state.pcc_closed.len(),
            state.dg_in_service.len(),
            model.switches.len(),
            model.pccs.len(),
            model.dgs.len()
        )));
    }

    let nb = model.buses.len();
    let conducting: Vec<bool> = (0..model.branches.len())
        .map(|b| branch_conducting(model, state, open_ends, b))
        .collect();

    // Union connected components over conducting branches.
    let mut comp: Vec<usize> = (0..nb).collect();
    fn find(comp: &mut Vec<usize>, mut x: usize) -> usize {
        while comp[x] != x {
            comp[x] = comp[comp[x]];
            x = comp[x];
        }
        x
    }
    for (b, &cond) in conducting.iter().enumerate() {
        if cond {
            let (from, to) = model.branch_ends(b);
            let rf = find(&mut comp, from);
            let rt = find(&mut comp, to);
            if rf != rt {
                comp[rf] = rt;
            }
        }
    }

    let mut component_live = vec![false; nb];
    for s in 0..model.sources.len() {
        let root = find(&mut comp, model.source_bus_idx(s));
        component_live[root] = true;
    }
    for d in 0..model.dgs.len() {
        if state.dg_in_service[d] {
            let root = find(&mut comp, model.dg_bus_idx(d));
            component_live[root] = true;
        }
    }

    let bus_energized: Vec<bool> = (0..nb)
        .map(|bus| component_live[find(&mut comp, bus)])
        .collect();
    let branch_energized: Vec<bool> = (0..model.branches.len())
        .map(|b| {
            let (from, _) = model.branch_ends(b);
            conducting[b] && bus_energized[from]
        })
        .collect();

    Ok(EnergizedNetwork {
        model,
        state: state.clone(),
        branch_energized,
        bus_energized,
        open_ends: open_ends.to_vec(),
    })
}

fn branch_conducting(
    model: &NetworkModel,
    state: &TopologyState,
    open_ends: &[(usize, BranchEnd)],
    branch: usize,
) -> bool {
    if let Some(sw) = model.branch_switch(branch) {
        if !state.switch_closed[sw] {
            return false;
        }
    }
    if let Some(pcc) = model.branch_pcc(branch) {
        if !state.pcc_closed[pcc] {
            return false;
        }
    }
    !open_ends.iter().any(|&(b, _)| b == branch)
}

impl EnergizedNetwork<'_> {
    pub fn energized_bus_ids(&self) -> Vec<&str> {
        self.bus_energized
            .iter()
            .enumerate()
            .filter(|(_, &e)| e)
            .map(|(i, _)| self.model.buses[i].id.as_str())
            .collect()
    }

    pub fn energized_branch_count(&self) -> usize {
        self.branch_energized.iter().filter(|&&e| e).count()
    }
}
