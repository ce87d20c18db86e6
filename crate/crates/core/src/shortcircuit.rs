//! Three-phase fault solutions in the positive-sequence phasor domain.
//!
//! The solver follows the bus-impedance (Thevenin) method: the nodal
//! admittance matrix of the fault's energized component is assembled with
//! external grid and synchronous DG units stamped as source admittances,
//! inverted, and the fault current obtained from the driving-point impedance
//! at the fault node. Inverter-interfaced DG is modeled as a current source
//! whose magnitude is clipped to its short-circuit ratio; its phase tracks
//! the terminal voltage through a small fixed-point loop.
//!
//! Islands fed only by inverters have no voltage source to anchor the
//! admittance matrix; for those the fault element itself is brought into the
//! matrix (shunt stamp, or node grounding for a bolted fault) and the system
//! solved directly. Loads are not modeled; the prefault profile is flat at
//! `c` pu.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::ComplexLu;
use crate::network::{BranchEnd, DgKind, EnergizedNetwork, NetworkModel};

const MAX_INVERTER_ITERS: usize = 50;
const INVERTER_TOL: f64 = 1e-8;
/// Distances closer than this to a branch end collapse onto the end bus.
const MIN_SPLIT: f64 = 1e-9;

/// Where the fault sits: on a bus, or on a branch at a fractional distance
/// from the from-bus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaultLocation {
    Bus { bus: usize },
    OnBranch { branch: usize, distance: f64 },
}

impl FaultLocation {
    pub fn describe(&self, model: &NetworkModel) -> String {
        match *self {
            FaultLocation::Bus { bus } => format!("bus {}", model.buses[bus].id),
            FaultLocation::OnBranch { branch, distance } => {
                format!("branch {} at d={distance:.3}", model.branches[branch].id)
            }
        }
    }

    /// Faults at (numerically) the very end of a branch become bus faults.
    fn normalized(self, model: &NetworkModel) -> Result<FaultLocation> {
        match self {
            FaultLocation::Bus { .. } => Ok(self),
            FaultLocation::OnBranch { branch, distance } => {
                if !(0.0..=1.0).contains(&distance) {
                    return Err(Error::InvalidSpec(format!(
                        "fault distance {distance} outside [0,1]"
                    )));
                }
                let (from, to) = model.branch_ends(branch);
                if distance <= MIN_SPLIT {
                    Ok(FaultLocation::Bus { bus: from })
                } else if distance >= 1.0 - MIN_SPLIT {
                    Ok(FaultLocation::Bus { bus: to })
                } else {
                    Ok(self)
                }
            }
        }
    }
}

/// Scenario-sampled source strengths.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledParams {
    /// Short-circuit capacity per source, MVA.
    pub grid_scc_mva: Vec<f64>,
    /// Short-circuit to nominal current ratio per DG (used for inverters).
    pub inverter_ratio: Vec<f64>,
}

impl SampledParams {
    /// Midpoint of every sampled range.
    pub fn nominal(model: &NetworkModel) -> Self {
        SampledParams {
            grid_scc_mva: model
                .sources
                .iter()
                .map(|s| 0.5 * (s.scc_mva_min + s.scc_mva_max))
                .collect(),
            inverter_ratio: model
                .dgs
                .iter()
                .map(|d| match d.kind {
                    DgKind::Inverter => {
                        0.5 * (d.sc_ratio_min.unwrap_or(1.0) + d.sc_ratio_max.unwrap_or(1.0))
                    }
                    DgKind::Synchronous => 1.0,
                })
                .collect(),
        }
    }
}

/// A node of the faulted-network admittance matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRef {
    Bus(usize),
    FaultPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    Whole,
    FromSide,
    ToSide,
}

/// One series element of the faulted network, kept for branch-current
/// recovery. `segment` distinguishes the two halves of a split branch.
#[derive(Debug, Clone, Copy)]
pub struct SeriesElement {
    pub branch: usize,
    pub segment: Segment,
    pub node_a: usize,
    pub node_b: usize,
    pub admittance: Complex64,
    /// Off-nominal tap on the node_a side.
    pub tap: f64,
}

/// Assembled admittance matrix plus everything needed to drive and read it.
/// Restricted to the connected component containing the fault.
pub struct YbusAssembly {
    pub nodes: Vec<NodeRef>,
    /// Node index per model bus, when the bus is part of the faulted network.
    pub node_of_bus: Vec<Option<usize>>,
    pub fault_node: usize,
    /// Dense row-major n x n admittance matrix in siemens.
    pub ybus: Vec<Complex64>,
    pub series: Vec<SeriesElement>,
    /// (node, source admittance, Norton injection) per stamped voltage source.
    pub sources: Vec<(usize, Complex64, Complex64)>,
    /// (node, dg index, clipped current magnitude in amperes) per inverter.
    pub inverters: Vec<(usize, usize, f64)>,
}

impl YbusAssembly {
    pub fn dim(&self) -> usize {
        self.nodes.len()
    }
}

/// Full fault solution.
#[derive(Debug, Clone)]
pub struct FaultSolution {
    pub nodes: Vec<NodeRef>,
    pub node_of_bus: Vec<Option<usize>>,
    /// Index of the fault node within `nodes`.
    pub fault_node: usize,
    /// Complex node voltages, volts (phase).
    pub v_node: Vec<Complex64>,
    /// Per model branch, complex current in amperes, positive from-bus to
    /// to-bus, measured at the from end and the to end.
    pub branch_current_from: Vec<Complex64>,
    pub branch_current_to: Vec<Complex64>,
    pub fault_current_a: f64,
    pub fault_node_v: Complex64,
    /// Max KCL residual relative to the driving currents.
    pub kcl_residual_rel: f64,
    pub params: SampledParams,
    pub inverter_iterations: usize,
    /// Prefault phase voltage in volts (c * nominal).
    pub v_pre_v: f64,
}

/// One relay's view of a fault.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelayMeasurement {
    /// Fault current magnitude through the relay branch in the relay
    /// direction; 0 when the flow is reverse or the branch is dead.
    pub i_f_a: f64,
    /// Voltage magnitude at the relay bus, pu.
    pub v_f_pu: f64,
    pub forward: bool,
    /// Magnitude of whatever current flows in the branch, either direction.
    pub raw_i_a: f64,
}

fn branch_admittance(model: &NetworkModel, branch: usize) -> Complex64 {
    let br = &model.branches[branch];
    Complex64::new(1.0, 0.0) / Complex64::new(br.r_ohm, br.x_ohm)
}

fn source_impedance(model: &NetworkModel, source: usize, scc_mva: f64, c_factor: f64) -> Complex64 {
    let src = &model.sources[source];
    let v_ll = model.base_kv * 1e3;
    let z_mag = c_factor * v_ll * v_ll / (scc_mva * 1e6);
    let theta = src.x_r_ratio.atan();
    Complex64::new(z_mag * theta.cos(), z_mag * theta.sin())
}

fn sync_dg_impedance(model: &NetworkModel, dg: usize) -> Complex64 {
    let d = &model.dgs[dg];
    let v_ll = model.base_kv * 1e3;
    let z_base_machine = v_ll * v_ll / (d.rating_mva * 1e6);
    let z_base_tx = v_ll * v_ll / (d.tx_mva * 1e6);
    let x = d.subtransient_x_pu.unwrap_or(0.0) * z_base_machine + d.tx_x_pu * z_base_tx;
    Complex64::new(0.0, x)
}

fn inverter_nominal_current_a(model: &NetworkModel, dg: usize) -> f64 {
    let d = &model.dgs[dg];
    d.rating_mva * 1e6 / (3f64.sqrt() * model.base_kv * 1e3)
}

fn end_open(open_ends: &[(usize, BranchEnd)], branch: usize, end: BranchEnd) -> bool {
    open_ends.iter().any(|&(b, e)| b == branch && e == end)
}

/// Signed flow metric at a sending end: real power when decisive, reactive
/// power otherwise (fault paths through purely reactive impedance carry no
/// real power).
pub fn directed_power(v: Complex64, i: Complex64) -> f64 {
    let s = v * i.conj();
    let scale = (v.norm() * i.norm()).max(1e-12);
    if s.re.abs() > 1e-6 * scale {
        s.re
    } else {
        s.im
    }
}

/// Assemble the admittance matrix of the energized component around a fault.
///
/// Mid-branch faults insert a temporary node splitting the branch impedance
/// into fractions `d` and `1 - d`. The fault's component must contain a live
/// source or in-service DG, otherwise [`Error::DeEnergizedFault`] is
/// returned.
pub fn build_ybus(
    net: &EnergizedNetwork,
    fault: &FaultLocation,
    params: &SampledParams,
    c_factor: f64,
) -> Result<YbusAssembly> {
    let model = net.model;
    let nb = model.buses.len();
    let fault = fault.normalized(model)?;

    let fault_branch = match fault {
        FaultLocation::OnBranch { branch, .. } => Some(branch),
        FaultLocation::Bus { .. } => None,
    };
    let has_fault_vertex = fault_branch.is_some();
    let nv = nb + usize::from(has_fault_vertex);
    let fault_vertex = match fault {
        FaultLocation::Bus { bus } => bus,
        FaultLocation::OnBranch { .. } => nb,
    };

    struct Element {
        branch: usize,
        segment: Segment,
        a: usize,
        b: usize,
        y: Complex64,
        tap: f64,
    }
    let mut elements: Vec<Element> = Vec::new();

    for b in 0..model.branches.len() {
        let switched_off = match model.branch_switch(b) {
            Some(sw) => !net.state.switch_closed[sw],
            None => false,
        } || match model.branch_pcc(b) {
            Some(p) => !net.state.pcc_closed[p],
            None => false,
        };
        if switched_off {
            continue;
        }
        let (from, to) = model.branch_ends(b);
        let from_open = end_open(&net.open_ends, b, BranchEnd::From);
        let to_open = end_open(&net.open_ends, b, BranchEnd::To);
        if Some(b) == fault_branch {
            let FaultLocation::OnBranch { distance: d, .. } = fault else {
                unreachable!()
            };
            let y = branch_admittance(model, b);
            let tap = model.branches[b].ratio;
            if !from_open {
                elements.push(Element {
                    branch: b,
                    segment: Segment::FromSide,
                    a: from,
                    b: nb,
                    y: y / d,
                    tap,
                });
            }
            if !to_open {
                elements.push(Element {
                    branch: b,
                    segment: Segment::ToSide,
                    a: nb,
                    b: to,
                    y: y / (1.0 - d),
                    tap: 1.0,
                });
            }
        } else {
            if from_open || to_open {
                continue;
            }
            elements.push(Element {
                branch: b,
                segment: Segment::Whole,
                a: from,
                b: to,
                y: branch_admittance(model, b),
                tap: model.branches[b].ratio,
            });
        }
    }

    // Connected component of the fault vertex.
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nv];
    for (i, el) in elements.iter().enumerate() {
        adj[el.a].push(i);
        adj[el.b].push(i);
    }
    let mut in_comp = vec![false; nv];
    in_comp[fault_vertex] = true;
    let mut queue = vec![fault_vertex];
    while let Some(v) = queue.pop() {
        for &ei in &adj[v] {
            let el = &elements[ei];
            let other = if el.a == v { el.b } else { el.a };
            if !in_comp[other] {
                in_comp[other] = true;
                queue.push(other);
            }
        }
    }

    // The component must be energized: a source, or an in-service DG.
    let mut has_drive = model
        .sources
        .iter()
        .enumerate()
        .any(|(s, _)| in_comp[model.source_bus_idx(s)]);
    has_drive = has_drive
        || model.dgs.iter().enumerate().any(|(d, _)| {
            net.state.dg_in_service[d] && in_comp[model.dg_bus_idx(d)]
        });
    if !has_drive {
        return Err(Error::DeEnergizedFault(fault.describe(model)));
    }

    let mut node_of_vertex = vec![None; nv];
    let mut nodes: Vec<NodeRef> = Vec::new();
    for v in 0..nv {
        if in_comp[v] {
            node_of_vertex[v] = Some(nodes.len());
            nodes.push(if v < nb {
                NodeRef::Bus(v)
            } else {
                NodeRef::FaultPoint
            });
        }
    }
    let n = nodes.len();
    let fault_node = node_of_vertex[fault_vertex].expect("fault vertex is in its own component");

    let mut ybus = vec![Complex64::new(0.0, 0.0); n * n];
    let mut series = Vec::new();
    for el in &elements {
        let (Some(na), Some(nb_)) = (node_of_vertex[el.a], node_of_vertex[el.b]) else {
            continue;
        };
        let t = el.tap;
        ybus[na * n + na] += el.y / (t * t);
        ybus[nb_ * n + nb_] += el.y;
        ybus[na * n + nb_] -= el.y / t;
        ybus[nb_ * n + na] -= el.y / t;
        series.push(SeriesElement {
            branch: el.branch,
            segment: el.segment,
            node_a: na,
            node_b: nb_,
            admittance: el.y,
            tap: t,
        });
    }

    let v_pre = Complex64::new(c_factor * model.phase_voltage_v(), 0.0);
    let mut sources = Vec::new();
    for s in 0..model.sources.len() {
        let bus = model.source_bus_idx(s);
        if let Some(node) = node_of_vertex[bus] {
            let z = source_impedance(model, s, params.grid_scc_mva[s], c_factor);
            let y = Complex64::new(1.0, 0.0) / z;
            ybus[node * n + node] += y;
            sources.push((node, y, v_pre * y));
        }
    }
    let mut inverters = Vec::new();
    for d in 0..model.dgs.len() {
        if !net.state.dg_in_service[d] {
            continue;
        }
        let Some(node) = node_of_vertex[model.dg_bus_idx(d)] else {
            continue;
        };
        match model.dgs[d].kind {
            DgKind::Synchronous => {
                let z = sync_dg_impedance(model, d);
                let y = Complex64::new(1.0, 0.0) / z;
                ybus[node * n + node] += y;
                sources.push((node, y, v_pre * y));
            }
            DgKind::Inverter => {
                let i_mag = params.inverter_ratio[d] * inverter_nominal_current_a(model, d);
                inverters.push((node, d, i_mag));
            }
        }
    }

    let mut node_of_bus = vec![None; nb];
    for (v, node) in node_of_vertex.iter().enumerate().take(nb) {
        node_of_bus[v] = *node;
    }

    Ok(YbusAssembly {
        nodes,
        node_of_bus,
        fault_node,
        ybus,
        series,
        sources,
        inverters,
    })
}

/// Linear core: given total injections, produce node voltages and the fault
/// current. Three variants depending on matrix conditioning and fault
/// impedance.
enum SolveCore {
    /// Regular case: Zbus of the unfaulted matrix, Thevenin superposition.
    Thevenin { zbus: Vec<Complex64>, zf: Complex64 },
    /// Inverter-only island, resistive fault: fault shunt stamped into Y.
    FaultShunt { lu: ComplexLu, zf: Complex64 },
    /// Inverter-only island, bolted fault: fault node grounded.
    Grounded { lu: ComplexLu, keep: Vec<usize> },
}

impl SolveCore {
    fn new(assembly: &YbusAssembly, zf: Complex64) -> Result<Self> {
        let n = assembly.dim();
        let k = assembly.fault_node;
        if let Some(lu) = ComplexLu::factor(&assembly.ybus, n, 1e-12) {
            return Ok(SolveCore::Thevenin {
                zbus: lu.inverse(),
                zf,
            });
        }
        // No voltage source anchors the matrix; bring the fault element in.
        // Essentially-bolted faults go through node grounding to keep the
        // factorization well scaled.
        if zf.norm() > 1e-9 {
            let mut y = assembly.ybus.clone();
            y[k * n + k] += Complex64::new(1.0, 0.0) / zf;
            let lu = ComplexLu::factor(&y, n, 1e-12)
                .ok_or_else(|| Error::SingularMatrix(format!("node {k}")))?;
            Ok(SolveCore::FaultShunt { lu, zf })
        } else {
            let keep: Vec<usize> = (0..n).filter(|&i| i != k).collect();
            let m = keep.len();
            if m == 0 {
                return Err(Error::SingularMatrix(format!("node {k}")));
            }
            let mut reduced = vec![Complex64::new(0.0, 0.0); m * m];
            for (ri, &i) in keep.iter().enumerate() {
                for (rj, &j) in keep.iter().enumerate() {
                    reduced[ri * m + rj] = assembly.ybus[i * n + j];
                }
            }
            let lu = ComplexLu::factor(&reduced, m, 1e-12)
                .ok_or_else(|| Error::SingularMatrix(format!("node {k}")))?;
            Ok(SolveCore::Grounded { lu, keep })
        }
    }

    /// Sensitivity of the node's own voltage to current injected there,
    /// with the fault in place. Used to strip an inverter's own
    /// contribution out of its terminal voltage before phase tracking.
    fn effective_self_impedance(&self, assembly: &YbusAssembly, node: usize) -> Complex64 {
        let n = assembly.dim();
        let k = assembly.fault_node;
        match self {
            SolveCore::Thevenin { zbus, zf } => {
                let z_kk = zbus[k * n + k];
                zbus[node * n + node]
                    - zbus[node * n + k] * zbus[k * n + node] / (z_kk + zf)
            }
            SolveCore::FaultShunt { lu, .. } => {
                let mut e = vec![Complex64::new(0.0, 0.0); n];
                e[node] = Complex64::new(1.0, 0.0);
                lu.solve(&e)[node]
            }
            SolveCore::Grounded { lu, keep } => {
                let Some(pos) = keep.iter().position(|&i| i == node) else {
                    return Complex64::new(0.0, 0.0);
                };
                let m = keep.len();
                let mut e = vec![Complex64::new(0.0, 0.0); m];
                e[pos] = Complex64::new(1.0, 0.0);
                lu.solve(&e)[pos]
            }
        }
    }

    fn solve(
        &self,
        assembly: &YbusAssembly,
        inj: &[Complex64],
    ) -> (Vec<Complex64>, Complex64) {
        let n = assembly.dim();
        let k = assembly.fault_node;
        match self {
            SolveCore::Thevenin { zbus, zf } => {
                let mut v_oc = vec![Complex64::new(0.0, 0.0); n];
                for row in 0..n {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for col in 0..n {
                        acc += zbus[row * n + col] * inj[col];
                    }
                    v_oc[row] = acc;
                }
                let z_kk = zbus[k * n + k];
                let i_fault = v_oc[k] / (z_kk + zf);
                let v: Vec<Complex64> = (0..n)
                    .map(|row| v_oc[row] - zbus[row * n + k] * i_fault)
                    .collect();
                (v, i_fault)
            }
            SolveCore::FaultShunt { lu, zf } => {
                let v = lu.solve(inj);
                let i_fault = v[k] / zf;
                (v, i_fault)
            }
            SolveCore::Grounded { lu, keep } => {
                let reduced_inj: Vec<Complex64> = keep.iter().map(|&i| inj[i]).collect();
                let vr = lu.solve(&reduced_inj);
                let mut v = vec![Complex64::new(0.0, 0.0); n];
                for (ri, &i) in keep.iter().enumerate() {
                    v[i] = vr[ri];
                }
                // Row k of Y V = inj - i_fault e_k gives the fault current.
                let mut acc = Complex64::new(0.0, 0.0);
                for col in 0..n {
                    acc += assembly.ybus[k * n + col] * v[col];
                }
                (v, inj[k] - acc)
            }
        }
    }
}

/// Solve a fault through the bus-impedance matrix with superposition and the
/// inverter fixed-point loop.
pub fn solve_fault(
    net: &EnergizedNetwork,
    fault: &FaultLocation,
    zf: Complex64,
    params: &SampledParams,
    c_factor: f64,
) -> Result<FaultSolution> {
    if zf.re < 0.0 {
        return Err(Error::InvalidSpec(format!(
            "fault impedance has negative real part: {zf}"
        )));
    }
    let assembly = build_ybus(net, fault, params, c_factor)?;
    let model = net.model;
    let n = assembly.dim();
    let k = assembly.fault_node;
    let core = SolveCore::new(&assembly, zf)?;

    let v_pre_v = c_factor * model.phase_voltage_v();

    let mut i_src = vec![Complex64::new(0.0, 0.0); n];
    for &(node, _, inj) in &assembly.sources {
        i_src[node] += inj;
    }

    // Inverter currents start at the prefault (zero) angle. Phase tracking
    // locks onto the background voltage (terminal voltage minus the
    // inverter's own contribution), the way a PLL cannot chase its own
    // injection.
    let mut i_inv: Vec<Complex64> = assembly
        .inverters
        .iter()
        .map(|&(_, _, mag)| Complex64::new(mag, 0.0))
        .collect();
    let z_self: Vec<Complex64> = assembly
        .inverters
        .iter()
        .map(|&(node, _, _)| core.effective_self_impedance(&assembly, node))
        .collect();

    let mut v;
    let mut i_fault;
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut inj = i_src.clone();
        for (slot, &(node, _, _)) in assembly.inverters.iter().enumerate() {
            inj[node] += i_inv[slot];
        }
        let (v_new, i_new) = core.solve(&assembly, &inj);
        v = v_new;
        i_fault = i_new;

        // Without a voltage source there is no phase anchor: the injections
        // keep their prefault angle and a single pass is exact.
        if assembly.inverters.is_empty() || assembly.sources.is_empty() {
            break;
        }
        let mut max_delta = 0.0_f64;
        let mut next = Vec::with_capacity(i_inv.len());
        for (slot, &(node, _, mag)) in assembly.inverters.iter().enumerate() {
            let v_bg = v[node] - z_self[slot] * i_inv[slot];
            let angle = if v_bg.norm() > 1e-9 * v_pre_v {
                v_bg.arg()
            } else {
                i_inv[slot].arg()
            };
            let updated = Complex64::from_polar(mag, angle);
            let delta = (updated - i_inv[slot]).norm() / mag.max(1e-12);
            max_delta = max_delta.max(delta);
            next.push(updated);
        }
        i_inv = next;
        if max_delta <= INVERTER_TOL {
            break;
        }
        if iterations >= MAX_INVERTER_ITERS {
            return Err(Error::InverterNonConvergence {
                iterations,
                residual: max_delta,
            });
        }
    }

    // Branch current recovery: with the tap on the node_a side the sending
    // current is (v_a / t - v_b) * y / t.
    let nbranch = model.branches.len();
    let mut branch_from = vec![Complex64::new(0.0, 0.0); nbranch];
    let mut branch_to = vec![Complex64::new(0.0, 0.0); nbranch];
    for el in &assembly.series {
        let va = v[el.node_a];
        let vb = v[el.node_b];
        let i_ab = (va / el.tap - vb) * el.admittance / el.tap;
        match el.segment {
            Segment::Whole => {
                branch_from[el.branch] = i_ab;
                branch_to[el.branch] = i_ab;
            }
            Segment::FromSide => branch_from[el.branch] = i_ab,
            Segment::ToSide => branch_to[el.branch] = i_ab,
        }
    }

    // KCL residual relative to the driving currents.
    let mut inj = i_src;
    for (slot, &(node, _, _)) in assembly.inverters.iter().enumerate() {
        inj[node] += i_inv[slot];
    }
    inj[k] -= i_fault;
    let scale = inj
        .iter()
        .map(|z| z.norm())
        .fold(i_fault.norm(), f64::max)
        .max(1.0);
    let mut worst = 0.0_f64;
    for row in 0..n {
        let mut acc = Complex64::new(0.0, 0.0);
        for col in 0..n {
            acc += assembly.ybus[row * n + col] * v[col];
        }
        worst = worst.max((acc - inj[row]).norm());
    }

    let fault_node_v = v[k];
    Ok(FaultSolution {
        nodes: assembly.nodes,
        node_of_bus: assembly.node_of_bus,
        fault_node: k,
        v_node: v,
        branch_current_from: branch_from,
        branch_current_to: branch_to,
        fault_current_a: i_fault.norm(),
        fault_node_v,
        kcl_residual_rel: worst / scale,
        params: params.clone(),
        inverter_iterations: iterations,
        v_pre_v,
    })
}

impl FaultSolution {
    /// Voltage magnitude at a bus in pu of the prefault level; buses outside
    /// the faulted component report the prefault 1.0 (no sag observed).
    pub fn bus_voltage_pu(&self, bus: usize) -> f64 {
        match self.node_of_bus[bus] {
            Some(node) => self.v_node[node].norm() / self.v_pre_v,
            None => 1.0,
        }
    }

    pub fn bus_voltage(&self, bus: usize) -> Option<Complex64> {
        self.node_of_bus[bus].map(|n| self.v_node[n])
    }
}

/// Bus indices of live sources and in-service DGs in the fault's connected
/// component. Empty means the fault is fully de-energized; entries equal to
/// the fault's own bus cannot be cleared by line relays (a unit feeding its
/// own bus has no relay between itself and the fault).
pub fn fault_feed_buses(net: &EnergizedNetwork, fault: &FaultLocation) -> Vec<usize> {
    let model = net.model;
    let params = SampledParams::nominal(model);
    match build_ybus(net, fault, &params, 1.0) {
        Err(_) => Vec::new(),
        Ok(asm) => {
            let mut feeds = Vec::new();
            for s in 0..model.sources.len() {
                let bus = model.source_bus_idx(s);
                if asm.node_of_bus[bus].is_some() {
                    feeds.push(bus);
                }
            }
            for d in 0..model.dgs.len() {
                if net.state.dg_in_service[d] {
                    let bus = model.dg_bus_idx(d);
                    if asm.node_of_bus[bus].is_some() && !feeds.contains(&bus) {
                        feeds.push(bus);
                    }
                }
            }
            feeds
        }
    }
}

/// Extract one relay's measurement from a solved fault.
pub fn relay_measurements(
    sol: &FaultSolution,
    model: &NetworkModel,
    relay: usize,
) -> RelayMeasurement {
    let (branch, at_bus, _toward) = model.relay_attachment(relay);
    let (from, _to) = model.branch_ends(branch);

    let Some(at_node) = sol.node_of_bus[at_bus] else {
        return RelayMeasurement {
            i_f_a: 0.0,
            v_f_pu: 1.0,
            forward: false,
            raw_i_a: 0.0,
        };
    };
    let v_f_pu = sol.bus_voltage_pu(at_bus);

    let i_dir = if at_bus == from {
        sol.branch_current_from[branch]
    } else {
        -sol.branch_current_to[branch]
    };
    if i_dir.norm() < 1e-9 {
        return RelayMeasurement {
            i_f_a: 0.0,
            v_f_pu,
            forward: false,
            raw_i_a: 0.0,
        };
    }
    let power = directed_power(sol.v_node[at_node], i_dir);
    let forward = power > 1.0; // watts or vars; fault-path flows are orders larger
    RelayMeasurement {
        i_f_a: if forward { i_dir.norm() } else { 0.0 },
        v_f_pu,
        forward,
        raw_i_a: i_dir.norm(),
    }
}
