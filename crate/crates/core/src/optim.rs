//! Relay-setting optimization: Gaussian CVaR parametrization of per-mode
//! fault statistics, coordination-graph construction, the inner linear
//! program over the merged curve coefficients, and the outer gradient search
//! over the curve exponents.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::curve::reduced_rate;
use crate::error::{Error, Result};
use crate::gda::{ClassGaussian, ModeStatistics};
use crate::network::{EnergizedNetwork, NetworkModel};
use crate::scenario::{label_fault, FaultClass};
use crate::shortcircuit::{solve_fault, FaultLocation, SampledParams};
use crate::simplex::{self, Constraint, LinearProgram, LpOutcome};
use crate::stats::{norm_inv_cdf, norm_pdf};

/// Closed-form CVaR of a Gaussian: the mean of its lower `alpha` tail.
/// `alpha = 1` is exactly the mean.
pub fn cvar_gaussian(mu: f64, sigma: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    if sigma < 0.0 {
        return Err(Error::InvalidSpec(format!("negative sigma {sigma}")));
    }
    if alpha == 1.0 || sigma == 0.0 {
        return Ok(mu);
    }
    Ok(mu - sigma * norm_pdf(norm_inv_cdf(alpha)) / alpha)
}

/// Who protects what, derived from bolted bus faults on one energized
/// topology.
#[derive(Debug, Clone, Default)]
pub struct CoordinationGraph {
    /// Energized bus -> primary relays for a fault there.
    pub primaries_per_bus: BTreeMap<usize, Vec<usize>>,
    /// Primary relay -> backup relays covering its failure (union over
    /// buses).
    pub backups_per_primary: BTreeMap<usize, Vec<usize>>,
    /// Energized buses with no primary relay at all.
    pub unprotected_buses: Vec<usize>,
}

impl CoordinationGraph {
    /// Restrict every set to the given relay subset.
    pub fn restricted_to(&self, relays: &[usize]) -> CoordinationGraph {
        let keep = |r: &usize| relays.contains(r);
        CoordinationGraph {
            primaries_per_bus: self
                .primaries_per_bus
                .iter()
                .map(|(&b, ps)| (b, ps.iter().copied().filter(keep).collect()))
                .collect(),
            backups_per_primary: self
                .backups_per_primary
                .iter()
                .filter(|(p, _)| keep(p))
                .map(|(&p, bs)| (p, bs.iter().copied().filter(keep).collect()))
                .collect(),
            unprotected_buses: self.unprotected_buses.clone(),
        }
    }

    pub fn relays(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .primaries_per_bus
            .values()
            .flatten()
            .chain(self.backups_per_primary.keys())
            .chain(self.backups_per_primary.values().flatten())
            .copied()
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Build the coordination graph by labeling a bolted fault at every
/// energized bus at nominal source parameters.
pub fn build_coordination_graph(net: &EnergizedNetwork) -> Result<CoordinationGraph> {
    let model = net.model;
    let mut graph = CoordinationGraph::default();
    for bus in 0..model.buses.len() {
        if !net.bus_energized[bus] {
            continue;
        }
        let sol = match solve_fault(
            net,
            &FaultLocation::Bus { bus },
            Complex64::new(0.0, 0.0),
            &SampledParams::nominal(model),
            1.0,
        ) {
            Ok(sol) => sol,
            Err(Error::DeEnergizedFault(_)) => continue,
            Err(e) => return Err(e),
        };
        let labeling = label_fault(net, &sol);
        let primaries: Vec<usize> = (0..model.relays.len())
            .filter(|&r| labeling.classes[r] == FaultClass::Primary)
            .collect();
        if primaries.is_empty() {
            graph.unprotected_buses.push(bus);
            continue;
        }
        for (b, covers) in labeling.covers.iter().enumerate() {
            if labeling.classes[b] != FaultClass::Backup {
                continue;
            }
            for &p in covers {
                let entry = graph.backups_per_primary.entry(p).or_default();
                if !entry.contains(&b) {
                    entry.push(b);
                }
            }
        }
        graph.primaries_per_bus.insert(bus, primaries);
    }
    for backups in graph.backups_per_primary.values_mut() {
        backups.sort_unstable();
    }
    Ok(graph)
}

/// Optimization knobs. CVaR levels apply to (current, voltage) jointly; the
/// constraint levels default to the objective levels when unset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Minimum primary operating delay, seconds.
    pub d_min_s: f64,
    /// Minimum coordination time between a primary and its backup, seconds.
    pub mct_s: f64,
    pub alpha_i: f64,
    pub alpha_v: f64,
    /// CVaR levels (current, voltage) for the primary-side constraint points.
    #[serde(default)]
    pub alpha_1: Option<(f64, f64)>,
    /// CVaR levels (current, voltage) for the backup-side constraint points.
    #[serde(default)]
    pub alpha_2: Option<(f64, f64)>,
    pub eta_min: f64,
    pub eta_max: f64,
    pub zeta_min: f64,
    pub zeta_max: f64,
    /// Finite-difference step of the outer search, in eta units.
    pub eta_step: f64,
    pub grad_tol: f64,
    pub max_outer_iters: usize,
    pub pickup_margin: f64,
    pub v_s_pu: f64,
    /// Escalate pickup-margin warnings to errors.
    #[serde(default)]
    pub strict: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            d_min_s: 3.0 / 60.0,
            mct_s: 0.15,
            alpha_i: 1.0,
            alpha_v: 1.0,
            alpha_1: None,
            alpha_2: None,
            eta_min: 0.01,
            eta_max: 5.0,
            zeta_min: 0.0,
            zeta_max: 50.0,
            eta_step: 1e-3,
            grad_tol: 1e-4,
            max_outer_iters: 200,
            pickup_margin: 1.25,
            v_s_pu: 0.9,
            strict: false,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, a) in [("alpha_i", self.alpha_i), ("alpha_v", self.alpha_v)]
            .into_iter()
            .chain(self.alpha_1.iter().flat_map(|&(i, v)| [("alpha_1.i", i), ("alpha_1.v", v)]))
            .chain(self.alpha_2.iter().flat_map(|&(i, v)| [("alpha_2.i", i), ("alpha_2.v", v)]))
        {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::InvalidSpec(format!("{name} = {a} outside (0, 1]")));
            }
        }
        if self.d_min_s <= 0.0 || self.mct_s <= 0.0 {
            return Err(Error::InvalidSpec(
                "d_min_s and mct_s must be positive".into(),
            ));
        }
        if self.eta_min > self.eta_max || self.eta_min <= 0.0 {
            return Err(Error::InvalidSpec("eta bounds disordered".into()));
        }
        if self.zeta_min > self.zeta_max || self.zeta_min < 0.0 {
            return Err(Error::InvalidSpec("zeta bounds disordered".into()));
        }
        if !(0.0..1.0).contains(&self.v_s_pu) || self.v_s_pu <= 0.0 {
            return Err(Error::InvalidSpec(format!(
                "v_s_pu = {} outside (0, 1)",
                self.v_s_pu
            )));
        }
        Ok(())
    }

    pub fn alpha_primary(&self) -> (f64, f64) {
        self.alpha_1.unwrap_or((self.alpha_i, self.alpha_v))
    }

    pub fn alpha_backup(&self) -> (f64, f64) {
        self.alpha_2.unwrap_or((self.alpha_i, self.alpha_v))
    }
}

/// Pickup settings: per-relay current threshold, shared voltage threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Pickups {
    /// Relay index -> pickup current, amperes.
    pub i_s_amps: BTreeMap<usize, f64>,
    pub v_s_pu: f64,
    pub warnings: Vec<String>,
}

/// `I_S = margin x rated current` of the relay branch; `V_S` preset from the
/// config (0.9 pu default).
pub fn compute_pickups(
    model: &NetworkModel,
    relays: &[usize],
    config: &OptimizerConfig,
) -> Result<Pickups> {
    let mut warnings = Vec::new();
    if config.pickup_margin <= 1.0 {
        let msg = format!(
            "pickup margin {} does not exceed full-load current",
            config.pickup_margin
        );
        if config.strict {
            return Err(Error::InvalidPickupMargin(config.pickup_margin));
        }
        warnings.push(msg);
    }
    let mut i_s_amps = BTreeMap::new();
    for &r in relays {
        let (branch, _, _) = model.relay_attachment(r);
        let rated = model.branches[branch].rated_a;
        if rated <= 0.0 {
            return Err(Error::MissingRating(model.branches[branch].id.clone()));
        }
        i_s_amps.insert(r, config.pickup_margin * rated);
    }
    Ok(Pickups {
        i_s_amps,
        v_s_pu: config.v_s_pu,
        warnings,
    })
}

/// CVaR point of one class Gaussian at the given (current, voltage) levels.
pub fn cvar_point(g: &ClassGaussian, alpha: (f64, f64)) -> Result<(f64, f64)> {
    Ok((
        cvar_gaussian(g.mean_i, g.var_i.sqrt(), alpha.0)?,
        cvar_gaussian(g.mean_v, g.var_v.sqrt(), alpha.1)?,
    ))
}

/// One relay's setting inside a group.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelaySetting {
    pub relay: String,
    pub zeta: f64,
    pub i_s_amps: f64,
}

/// A certified constraint at the solution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub label: String,
    pub slack_s: f64,
}

/// Per-mode optimized settings with the certificate and audit trail.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SettingGroup {
    pub mode_bits: usize,
    pub mode_desc: String,
    pub eta_i: f64,
    pub eta_v: f64,
    pub v_s_pu: f64,
    pub relays: Vec<RelaySetting>,
    pub objective_s: f64,
    pub certificate: Vec<ConstraintCheck>,
    /// Constraint pairs dropped because a CVaR point fell outside the curve
    /// domain (below current pickup or above voltage pickup).
    pub dropped: Vec<String>,
    pub outer_iterations: usize,
    /// Objective value after each accepted outer step, best-so-far order.
    pub objective_history: Vec<f64>,
    pub dataset_hash: String,
    pub config_hash: String,
}

/// Inputs shared by the inner LP and the outer search.
pub struct ModeProblem<'a> {
    pub model: &'a NetworkModel,
    pub graph: &'a CoordinationGraph,
    /// Per-relay fault statistics valid for this mode.
    pub stats: &'a BTreeMap<usize, &'a ModeStatistics>,
    pub pickups: &'a Pickups,
    pub config: &'a OptimizerConfig,
}

struct LpBuild {
    lp: LinearProgram,
    participants: Vec<usize>,
    dropped: Vec<String>,
}

impl ModeProblem<'_> {
    fn class_gaussian(&self, relay: usize, class: FaultClass) -> Option<&ClassGaussian> {
        self.stats
            .get(&relay)
            .and_then(|s| s.per_class.get(&class.to_string()))
    }

    /// Rate (seconds per unit zeta) of a relay's curve at a class CVaR
    /// point, or None when out of domain / missing.
    fn rate_at(
        &self,
        relay: usize,
        class: FaultClass,
        alpha: (f64, f64),
        eta_i: f64,
        eta_v: f64,
    ) -> Result<Option<f64>> {
        let Some(g) = self.class_gaussian(relay, class) else {
            return Ok(None);
        };
        let (i, v) = cvar_point(g, alpha)?;
        let i_s = self.pickups.i_s_amps[&relay];
        Ok(reduced_rate(i, v, eta_i, eta_v, i_s, self.pickups.v_s_pu))
    }

    /// Assemble the LP for fixed exponents.
    fn build_lp(&self, eta_i: f64, eta_v: f64) -> Result<LpBuild> {
        let model = self.model;
        let mut dropped = Vec::new();

        // Primary roles: relay -> (objective rate, constraint rate)
        let mut primary_ok: BTreeMap<usize, (Option<f64>, f64)> = BTreeMap::new();
        let mut primaries: Vec<usize> = self
            .graph
            .primaries_per_bus
            .values()
            .flatten()
            .copied()
            .collect();
        primaries.sort_unstable();
        primaries.dedup();
        for p in primaries {
            let obj = self.rate_at(p, FaultClass::Primary, (self.config.alpha_i, self.config.alpha_v), eta_i, eta_v)?;
            let con = self.rate_at(p, FaultClass::Primary, self.config.alpha_primary(), eta_i, eta_v)?;
            match con {
                Some(rate) => {
                    primary_ok.insert(p, (obj, rate));
                }
                None => dropped.push(format!(
                    "primary {}: CVaR point outside curve domain or statistics missing",
                    model.relays[p].id
                )),
            }
        }

        // Backup pairs (p, b) with both sides in-domain.
        let mut pairs: Vec<(usize, usize, f64)> = Vec::new(); // (p, b, backup rate)
        for (&p, backups) in &self.graph.backups_per_primary {
            if !primary_ok.contains_key(&p) {
                if !backups.is_empty() {
                    dropped.push(format!(
                        "pairs of primary {} skipped with it",
                        model.relays[p].id
                    ));
                }
                continue;
            }
            for &b in backups {
                let rate =
                    self.rate_at(b, FaultClass::Backup, self.config.alpha_backup(), eta_i, eta_v)?;
                match rate {
                    Some(r) => pairs.push((p, b, r)),
                    None => dropped.push(format!(
                        "backup pair {} -> {}: CVaR point outside curve domain or statistics missing",
                        model.relays[p].id, model.relays[b].id
                    )),
                }
            }
        }

        // Participants: all relays with a surviving role.
        let mut participants: Vec<usize> = primary_ok.keys().copied().collect();
        participants.extend(pairs.iter().map(|&(_, b, _)| b));
        participants.sort_unstable();
        participants.dedup();
        let slot_of: BTreeMap<usize, usize> = participants
            .iter()
            .enumerate()
            .map(|(i, &r)| (r, i))
            .collect();

        // Objective: sum over buses of primary terms plus their backups'
        // terms, with multiplicity.
        let mut objective = vec![0.0; participants.len()];
        let mut backup_obj_rate: BTreeMap<usize, f64> = BTreeMap::new();
        for (&_bus, ps) in &self.graph.primaries_per_bus {
            for p in ps {
                let Some(&(obj, _)) = primary_ok.get(p) else {
                    continue;
                };
                if let Some(rate) = obj {
                    objective[slot_of[p]] += rate;
                }
                if let Some(backups) = self.graph.backups_per_primary.get(p) {
                    for b in backups {
                        if !pairs.iter().any(|&(pp, bb, _)| pp == *p && bb == *b) {
                            continue;
                        }
                        let rate = match backup_obj_rate.get(b) {
                            Some(&r) => Some(r),
                            None => {
                                let r = self.rate_at(
                                    *b,
                                    FaultClass::Backup,
                                    (self.config.alpha_i, self.config.alpha_v),
                                    eta_i,
                                    eta_v,
                                )?;
                                if let Some(r) = r {
                                    backup_obj_rate.insert(*b, r);
                                }
                                r
                            }
                        };
                        if let Some(rate) = rate {
                            objective[slot_of[b]] += rate;
                        }
                    }
                }
            }
        }

        let mut constraints = Vec::new();
        for (&p, &(_, rate)) in &primary_ok {
            constraints.push(Constraint {
                coeffs: vec![(slot_of[&p], rate)],
                rhs: self.config.d_min_s,
                label: format!("dmin:{}", model.relays[p].id),
            });
        }
        let mut seen_pairs: Vec<(usize, usize)> = Vec::new();
        for &(p, b, rate_b) in &pairs {
            if seen_pairs.contains(&(p, b)) {
                continue;
            }
            seen_pairs.push((p, b));
            let rate_p = primary_ok[&p].1;
            constraints.push(Constraint {
                coeffs: vec![(slot_of[&b], rate_b), (slot_of[&p], -rate_p)],
                rhs: self.config.mct_s,
                label: format!("mct:{}>{}", model.relays[p].id, model.relays[b].id),
            });
        }

        Ok(LpBuild {
            lp: LinearProgram {
                objective,
                lower: vec![self.config.zeta_min; participants.len()],
                upper: vec![self.config.zeta_max; participants.len()],
                constraints,
            },
            participants,
            dropped,
        })
    }
}

/// Result of the inner LP at fixed exponents.
#[derive(Debug, Clone)]
pub struct LpSolution {
    /// Relay index -> zeta.
    pub zeta: BTreeMap<usize, f64>,
    pub objective: f64,
    pub certificate: Vec<ConstraintCheck>,
    pub dropped: Vec<String>,
}

/// Solve the inner linear program for fixed exponents. Every returned
/// solution is re-checked against all constraints at 1e-9.
pub fn solve_lp_fixed_eta(problem: &ModeProblem, eta_i: f64, eta_v: f64) -> Result<LpSolution> {
    let build = problem.build_lp(eta_i, eta_v)?;
    match simplex::solve(&build.lp)? {
        LpOutcome::Optimal { x, objective } => {
            let violations = simplex::violations(&build.lp, &x, 1e-9);
            if !violations.is_empty() {
                return Err(Error::InvalidSpec(format!(
                    "lp feasibility certificate failed: {violations:?}"
                )));
            }
            let certificate = build
                .lp
                .constraints
                .iter()
                .map(|c| ConstraintCheck {
                    label: c.label.clone(),
                    slack_s: c.evaluate(&x),
                })
                .collect();
            Ok(LpSolution {
                zeta: build
                    .participants
                    .iter()
                    .zip(&x)
                    .map(|(&r, &z)| (r, z))
                    .collect(),
                objective,
                certificate,
                dropped: build.dropped,
            })
        }
        LpOutcome::Infeasible { irreducible } => Err(Error::Infeasible(irreducible)),
    }
}

/// Optimize one mode: outer projected gradient descent on the exponents
/// (finite differences of the LP value, halving step on non-improvement),
/// inner exact LP. Returns the best certified setting group.
pub fn optimize_settings(
    problem: &ModeProblem,
    mode_bits: usize,
    mode_desc: String,
    dataset_hash: String,
    config_hash: String,
) -> Result<SettingGroup> {
    let cfg = problem.config;
    cfg.validate()?;

    let clamp = |e: f64| e.clamp(cfg.eta_min, cfg.eta_max);
    let start = (clamp(0.01), clamp(0.01));

    let eval = |eta: (f64, f64)| -> Result<Option<LpSolution>> {
        match solve_lp_fixed_eta(problem, eta.0, eta.1) {
            Ok(sol) => Ok(Some(sol)),
            Err(Error::Infeasible(_)) => Ok(None),
            Err(e) => Err(e),
        }
    };

    let Some(mut best_sol) = eval(start)? else {
        // map the infeasibility for diagnostics
        let err = solve_lp_fixed_eta(problem, start.0, start.1).unwrap_err();
        return Err(Error::Unprotectable {
            mode: mode_desc,
            reason: err.to_string(),
        });
    };
    let mut eta = start;
    let mut lr = 0.05;
    let mut iterations = 0;
    let mut history = vec![best_sol.objective];

    while iterations < cfg.max_outer_iters {
        iterations += 1;
        // central differences, one-sided at the bounds
        let mut grad = [0.0_f64; 2];
        let mut any = false;
        for axis in 0..2 {
            let h = cfg.eta_step;
            let mut up = eta;
            let mut dn = eta;
            if axis == 0 {
                up.0 = clamp(eta.0 + h);
                dn.0 = clamp(eta.0 - h);
            } else {
                up.1 = clamp(eta.1 + h);
                dn.1 = clamp(eta.1 - h);
            }
            let fu = eval(up)?.map(|s| s.objective);
            let fd = eval(dn)?.map(|s| s.objective);
            let span = if axis == 0 { up.0 - dn.0 } else { up.1 - dn.1 };
            grad[axis] = match (fu, fd) {
                (Some(a), Some(b)) if span > 0.0 => {
                    any = true;
                    (a - b) / span
                }
                _ => 0.0,
            };
        }
        if !any || grad[0].abs().max(grad[1].abs()) < cfg.grad_tol {
            break;
        }
        let candidate = (clamp(eta.0 - lr * grad[0]), clamp(eta.1 - lr * grad[1]));
        if candidate == eta {
            break;
        }
        match eval(candidate)? {
            Some(sol) if sol.objective < best_sol.objective - 1e-12 => {
                eta = candidate;
                best_sol = sol;
                history.push(best_sol.objective);
                lr = (lr * 2.0).min(1.0);
            }
            _ => {
                lr *= 0.5;
                if lr < 1e-7 {
                    break;
                }
            }
        }
    }

    // 1e-6 s certificate on the stored group
    for check in &best_sol.certificate {
        if check.slack_s < -1e-6 {
            return Err(Error::InvalidSpec(format!(
                "setting group violates `{}` by {:.3e} s",
                check.label, -check.slack_s
            )));
        }
    }

    let relays = best_sol
        .zeta
        .iter()
        .map(|(&r, &zeta)| RelaySetting {
            relay: problem.model.relays[r].id.clone(),
            zeta,
            i_s_amps: problem.pickups.i_s_amps[&r],
        })
        .collect();
    Ok(SettingGroup {
        mode_bits,
        mode_desc,
        eta_i: eta.0,
        eta_v: eta.1,
        v_s_pu: problem.pickups.v_s_pu,
        relays,
        objective_s: best_sol.objective,
        certificate: best_sol.certificate,
        dropped: best_sol.dropped,
        outer_iterations: iterations,
        objective_history: history,
        dataset_hash,
        config_hash,
    })
}

/// FNV-1a 64-bit hash, hex encoded. Provenance fingerprinting only.
pub fn provenance_hash(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

/// Settings artifact written per mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SettingsFile {
    pub version: String,
    pub groups: Vec<SettingGroup>,
    /// Modes that could not be optimized, with reasons.
    pub unavailable_modes: Vec<(String, String)>,
}

pub const SETTINGS_FILE_VERSION: &str = "mgprot settings v1";

pub fn write_settings_file(file: &SettingsFile, path: &std::path::Path) -> Result<()> {
    let text = serde_json::to_string_pretty(file).map_err(|e| Error::Serde(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_settings_file(path: &std::path::Path) -> Result<SettingsFile> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let file: SettingsFile =
        serde_json::from_str(&text).map_err(|e| Error::Serde(e.to_string()))?;
    if file.version != SETTINGS_FILE_VERSION {
        return Err(Error::SchemaVersion {
            found: file.version,
            expected: SETTINGS_FILE_VERSION.to_string(),
        });
    }
    Ok(file)
}
