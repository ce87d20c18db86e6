//! Offline pipeline orchestration: per-relay discriminant fits and feature
//! selection, the system-level mode space, per-mode setting optimization,
//! and construction of runtime agents from the artifacts.
//!
//! The system mode space is the union of the relays' selected feature sets
//! (or an explicit override). Features outside the mode space take their
//! values from a configured baseline state when a mode is materialized into
//! a concrete topology; each relay's runtime group for one of its own modes
//! comes from the system mode that agrees with it on the relay's features
//! and sits at the baseline elsewhere.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gda::{
    accuracy, enumerate_modes, feature_importance, fit_lda, fit_mode_statistics, relay_rows,
    row_feature_names, select_features, ModeStatistics, RelayModelFile, SelectionRule,
    MODEL_FILE_VERSION,
};
use crate::network::{apply_topology, NetworkModel, TopologyState};
use crate::optim::{
    build_coordination_graph, compute_pickups, cvar_point, optimize_settings, provenance_hash,
    ModeProblem, OptimizerConfig, Pickups, SettingGroup, SettingsFile, SETTINGS_FILE_VERSION,
};
use crate::scenario::{Dataset, FaultClass};
use crate::sim::{
    audit_coordination, drive_measurements, AgentGroup, AuditCase, CoordinationReport, RelayAgent,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub selection: SelectionRule,
    pub mode_cap: usize,
    /// Explicit system-mode features (canonical topology feature names).
    /// Unset: the union of every fitted relay's selected features.
    #[serde(default)]
    pub mode_features: Option<Vec<String>>,
    /// Baseline status per feature for everything a mode leaves open.
    pub baseline: Vec<bool>,
    /// Relays to fit and optimize. Unset: all relays in the model.
    #[serde(default)]
    pub study_relays: Option<Vec<String>>,
    pub optimizer: OptimizerConfig,
}

impl PipelineOptions {
    pub fn for_model(model: &NetworkModel) -> Self {
        // baseline: switches open (normal radial state), PCCs closed, DGs in
        let baseline = model
            .switches
            .iter()
            .map(|_| false)
            .chain(model.pccs.iter().map(|_| true))
            .chain(model.dgs.iter().map(|_| true))
            .collect();
        PipelineOptions {
            selection: SelectionRule::default(),
            mode_cap: 6,
            mode_features: None,
            baseline,
            study_relays: None,
            optimizer: OptimizerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlateauRow {
    pub k: usize,
    pub feature: String,
    pub accuracy: f64,
}

/// Fit diagnostics surfaced in reports, alongside the model artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub relay: String,
    pub full_accuracy: f64,
    /// Accuracy of a refit on the selected discrete features plus locals.
    pub selected_accuracy: f64,
    pub plateau: Vec<PlateauRow>,
}

/// Fit stage 1 and stage 2 for one relay.
pub fn fit_relay(
    model: &NetworkModel,
    dataset: &Dataset,
    relay: usize,
    options: &PipelineOptions,
) -> Result<(RelayModelFile, FitReport)> {
    let (rows, classes) = relay_rows(dataset, relay);
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let names = row_feature_names(dataset);
    let n_discrete = dataset.feature_names.len();

    let lda = fit_lda(&rows, &classes, &names)?;
    let (full_accuracy, _) = accuracy(&lda, &rows, &classes)?;
    let importance = feature_importance(&lda);
    let selected = select_features(&importance, options.selection, n_discrete);

    // accuracy plateau: refit on the top-k ranked features, k = 1..d
    let mut plateau = Vec::new();
    for k in 1..=names.len() {
        let cols: Vec<usize> = importance.ranking[..k].to_vec();
        let sub_rows: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| cols.iter().map(|&c| r[c]).collect())
            .collect();
        let sub_names: Vec<String> = cols.iter().map(|&c| names[c].clone()).collect();
        let acc = match fit_lda(&sub_rows, &classes, &sub_names) {
            Ok(m) => accuracy(&m, &sub_rows, &classes)?.0,
            Err(_) => f64::NAN,
        };
        plateau.push(PlateauRow {
            k,
            feature: names[importance.ranking[k - 1]].clone(),
            accuracy: acc,
        });
    }

    // refit on the communicated set plus locals
    let mut sel_cols: Vec<usize> = selected.discrete.clone();
    sel_cols.extend(n_discrete..names.len());
    let sel_rows: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| sel_cols.iter().map(|&c| r[c]).collect())
        .collect();
    let sel_names: Vec<String> = sel_cols.iter().map(|&c| names[c].clone()).collect();
    let selected_accuracy = match fit_lda(&sel_rows, &classes, &sel_names) {
        Ok(m) => accuracy(&m, &sel_rows, &classes)?.0,
        Err(_) => f64::NAN,
    };

    // stage 2: per-own-mode class statistics
    let records: Vec<&crate::scenario::FaultRecord> = dataset.for_relay(relay).collect();
    let partition = enumerate_modes(&selected, &records, options.mode_cap)?;
    let mode_statistics = fit_mode_statistics(&records, &partition);

    Ok((
        RelayModelFile {
            version: MODEL_FILE_VERSION.to_string(),
            relay: model.relays[relay].id.clone(),
            lda,
            importance,
            selected,
            mode_statistics,
        },
        FitReport {
            relay: model.relays[relay].id.clone(),
            full_accuracy,
            selected_accuracy,
            plateau,
        },
    ))
}

/// The system-level mode features, canonical order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemModeSpace {
    /// Indices into the model's canonical topology-feature order.
    pub features: Vec<usize>,
    pub names: Vec<String>,
}

impl SystemModeSpace {
    pub fn mode_count(&self) -> usize {
        1 << self.features.len()
    }

    pub fn describe(&self, bits: usize) -> String {
        if self.features.is_empty() {
            return "single-mode".to_string();
        }
        self.names
            .iter()
            .enumerate()
            .map(|(i, n)| {
                format!(
                    "{n}={}",
                    if (bits >> i) & 1 == 1 { "closed" } else { "open" }
                )
            })
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Concrete topology: mode bits on the mode features, baseline elsewhere.
    pub fn state(
        &self,
        model: &NetworkModel,
        baseline: &[bool],
        bits: usize,
    ) -> Result<TopologyState> {
        let mut features = baseline.to_vec();
        if features.len() != model.feature_count() {
            return Err(Error::TopologyMismatch(format!(
                "baseline has {} features, model {}",
                features.len(),
                model.feature_count()
            )));
        }
        for (i, &j) in self.features.iter().enumerate() {
            features[j] = (bits >> i) & 1 == 1;
        }
        TopologyState::from_feature_vec(model, &features)
    }

    /// Mode bits of an arbitrary topology state.
    pub fn bits_of(&self, state: &TopologyState) -> usize {
        let vec = state.to_feature_vec();
        self.features
            .iter()
            .enumerate()
            .map(|(i, &j)| usize::from(vec[j]) << i)
            .sum()
    }
}

/// Union of the fitted relays' selections, or the explicit override.
pub fn system_mode_space(
    model: &NetworkModel,
    models: &BTreeMap<usize, RelayModelFile>,
    options: &PipelineOptions,
) -> Result<SystemModeSpace> {
    let topo_names = model.feature_names();
    let features: Vec<usize> = match &options.mode_features {
        Some(names) => {
            let mut idx = Vec::new();
            for n in names {
                let j = topo_names
                    .iter()
                    .position(|t| t == n)
                    .ok_or_else(|| Error::InvalidSpec(format!("unknown mode feature `{n}`")))?;
                idx.push(j);
            }
            idx.sort_unstable();
            idx.dedup();
            idx
        }
        None => {
            let mut idx: Vec<usize> = models
                .values()
                .flat_map(|f| f.selected.discrete.iter().copied())
                .collect();
            idx.sort_unstable();
            idx.dedup();
            idx
        }
    };
    if features.len() > options.mode_cap {
        return Err(Error::ModeCapExceeded(features.len(), options.mode_cap));
    }
    let names = features.iter().map(|&j| topo_names[j].clone()).collect();
    Ok(SystemModeSpace { features, names })
}

/// One (bus, primary, backup) coordination triple retained by the domain
/// checks, with both CVaR points, for audits and sweeps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepTriple {
    pub bus: String,
    pub primary: String,
    pub backup: String,
    /// (I amps, V pu) at the primary-side constraint levels.
    pub primary_point: (f64, f64),
    /// (I amps, V pu) at the backup-side constraint levels.
    pub backup_point: (f64, f64),
}

/// Everything the offline stages produce.
pub struct OfflineArtifacts {
    pub models: BTreeMap<usize, RelayModelFile>,
    pub fit_reports: BTreeMap<usize, FitReport>,
    pub fit_failures: Vec<(String, String)>,
    pub mode_space: SystemModeSpace,
    pub pickups: Pickups,
    pub settings: SettingsFile,
    /// Per optimized mode: the retained coordination triples.
    pub sweep_triples: BTreeMap<usize, Vec<SweepTriple>>,
    /// Per optimized mode: buses left without any primary relay.
    pub unprotected: BTreeMap<usize, Vec<String>>,
}

impl OfflineArtifacts {
    pub fn group(&self, mode_bits: usize) -> Option<&SettingGroup> {
        self.settings
            .groups
            .iter()
            .find(|g| g.mode_bits == mode_bits)
    }
}

fn study_relay_indices(model: &NetworkModel, options: &PipelineOptions) -> Result<Vec<usize>> {
    match &options.study_relays {
        None => Ok((0..model.relays.len()).collect()),
        Some(ids) => ids.iter().map(|id| model.relay_idx(id)).collect(),
    }
}

/// Fit every study relay in parallel. Relays that cannot be fitted (for
/// example a single-class dataset) are reported, not fatal.
pub fn fit_all(
    model: &NetworkModel,
    dataset: &Dataset,
    options: &PipelineOptions,
) -> Result<(
    BTreeMap<usize, RelayModelFile>,
    BTreeMap<usize, FitReport>,
    Vec<(String, String)>,
)> {
    let study = study_relay_indices(model, options)?;
    let fit_results: Vec<(usize, std::result::Result<(RelayModelFile, FitReport), String>)> =
        study
            .par_iter()
            .map(|&r| {
                (
                    r,
                    fit_relay(model, dataset, r, options).map_err(|e| e.to_string()),
                )
            })
            .collect();
    let mut models = BTreeMap::new();
    let mut reports = BTreeMap::new();
    let mut failures = Vec::new();
    for (r, res) in fit_results {
        match res {
            Ok((file, report)) => {
                models.insert(r, file);
                reports.insert(r, report);
            }
            Err(reason) => failures.push((model.relays[r].id.clone(), reason)),
        }
    }
    Ok((models, reports, failures))
}

/// Optimize every system mode from fitted models.
pub fn optimize_modes(
    model: &NetworkModel,
    models: &BTreeMap<usize, RelayModelFile>,
    options: &PipelineOptions,
    dataset_hash: &str,
) -> Result<(
    SystemModeSpace,
    Pickups,
    SettingsFile,
    BTreeMap<usize, Vec<SweepTriple>>,
    BTreeMap<usize, Vec<String>>,
)> {
    options.optimizer.validate()?;
    if models.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mode_space = system_mode_space(model, models, options)?;
    let fitted: Vec<usize> = models.keys().copied().collect();
    let pickups = compute_pickups(model, &fitted, &options.optimizer)?;

    let config_hash = provenance_hash(
        serde_json::to_string(&(
            &options.optimizer,
            &options.selection,
            &options.mode_features,
            &options.baseline,
        ))
        .map_err(|e| Error::Serde(e.to_string()))?
        .as_bytes(),
    );

    let mut groups = Vec::new();
    let mut unavailable = Vec::new();
    let mut sweep_triples = BTreeMap::new();
    let mut unprotected = BTreeMap::new();

    for bits in 0..mode_space.mode_count() {
        let desc = mode_space.describe(bits);
        let state = mode_space.state(model, &options.baseline, bits)?;
        let net = apply_topology(model, &state)?;
        let graph = build_coordination_graph(&net)?.restricted_to(&fitted);
        unprotected.insert(
            bits,
            graph
                .unprotected_buses
                .iter()
                .map(|&b| model.buses[b].id.clone())
                .collect(),
        );

        // per-relay statistics for this system mode: each relay's own-mode
        // slice at the projection of the representative state
        let feature_vec = state.to_feature_vec();
        let mut stats: BTreeMap<usize, &ModeStatistics> = BTreeMap::new();
        for (&r, file) in models {
            let own_mode = file.selected.mode_of(&feature_vec);
            let s = &file.mode_statistics[own_mode];
            if s.supported {
                stats.insert(r, s);
            }
        }

        let problem = ModeProblem {
            model,
            graph: &graph,
            stats: &stats,
            pickups: &pickups,
            config: &options.optimizer,
        };
        match optimize_settings(
            &problem,
            bits,
            desc.clone(),
            dataset_hash.to_string(),
            config_hash.clone(),
        ) {
            Ok(group) => {
                sweep_triples.insert(bits, retained_triples(model, &problem)?);
                groups.push(group);
            }
            Err(Error::Unprotectable { reason, .. }) => {
                unavailable.push((desc, reason));
            }
            Err(e) => return Err(e),
        }
    }

    Ok((
        mode_space,
        pickups,
        SettingsFile {
            version: SETTINGS_FILE_VERSION.to_string(),
            groups,
            unavailable_modes: unavailable,
        },
        sweep_triples,
        unprotected,
    ))
}

/// Run fit, selection, mode enumeration, and per-mode optimization.
pub fn run_offline(
    model: &NetworkModel,
    dataset: &Dataset,
    options: &PipelineOptions,
    dataset_hash: &str,
) -> Result<OfflineArtifacts> {
    let (models, fit_reports, fit_failures) = fit_all(model, dataset, options)?;
    if models.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (mode_space, pickups, settings, sweep_triples, unprotected) =
        optimize_modes(model, &models, options, dataset_hash)?;
    Ok(OfflineArtifacts {
        models,
        fit_reports,
        fit_failures,
        mode_space,
        pickups,
        settings,
        sweep_triples,
        unprotected,
    })
}

/// Coordination triples whose CVaR points lie inside both curve domains.
fn retained_triples(model: &NetworkModel, problem: &ModeProblem) -> Result<Vec<SweepTriple>> {
    let mut out = Vec::new();
    let cfg = problem.config;
    for (&bus, primaries) in &problem.graph.primaries_per_bus {
        for &p in primaries {
            let Some(p_gauss) = problem
                .stats
                .get(&p)
                .and_then(|s| s.per_class.get(&FaultClass::Primary.to_string()))
            else {
                continue;
            };
            let p_point = cvar_point(p_gauss, cfg.alpha_primary())?;
            if !in_domain(problem, p, p_point) {
                continue;
            }
            let Some(backups) = problem.graph.backups_per_primary.get(&p) else {
                continue;
            };
            for &b in backups {
                let Some(b_gauss) = problem
                    .stats
                    .get(&b)
                    .and_then(|s| s.per_class.get(&FaultClass::Backup.to_string()))
                else {
                    continue;
                };
                let b_point = cvar_point(b_gauss, cfg.alpha_backup())?;
                if !in_domain(problem, b, b_point) {
                    continue;
                }
                out.push(SweepTriple {
                    bus: model.buses[bus].id.clone(),
                    primary: model.relays[p].id.clone(),
                    backup: model.relays[b].id.clone(),
                    primary_point: p_point,
                    backup_point: b_point,
                });
            }
        }
    }
    Ok(out)
}

fn in_domain(problem: &ModeProblem, relay: usize, point: (f64, f64)) -> bool {
    let i_s = problem.pickups.i_s_amps[&relay];
    point.0 > i_s && point.1 < problem.pickups.v_s_pu && point.1 > 0.0
}

/// Build runtime agents: each fitted relay, with one group per own mode
/// taken from the canonically completed system mode.
pub fn build_agents(
    model: &NetworkModel,
    models: &BTreeMap<usize, RelayModelFile>,
    mode_space: &SystemModeSpace,
    settings: &SettingsFile,
    baseline: &[bool],
    initial: &TopologyState,
) -> Result<Vec<RelayAgent>> {
    let mut agents = Vec::new();
    for (&r, file) in models {
        let reduced = file.selected.clone();
        let mut groups = BTreeMap::new();
        for own_mode in 0..reduced.mode_count() {
            // canonical completion: baseline everywhere, the relay's own
            // features per its mode bits
            let mut features = baseline.to_vec();
            for (i, &j) in reduced.discrete.iter().enumerate() {
                features[j] = (own_mode >> i) & 1 == 1;
            }
            let sys_bits =
                mode_space.bits_of(&TopologyState::from_feature_vec(model, &features)?);
            let Some(group) = settings.groups.iter().find(|g| g.mode_bits == sys_bits) else {
                continue;
            };
            let Some(rs) = group.relays.iter().find(|s| s.relay == model.relays[r].id) else {
                continue;
            };
            groups.insert(
                own_mode,
                AgentGroup {
                    zeta: rs.zeta,
                    eta_i: group.eta_i,
                    eta_v: group.eta_v,
                    i_s_amps: rs.i_s_amps,
                    v_s_pu: group.v_s_pu,
                },
            );
        }
        let active_mode = reduced.mode_of(&initial.to_feature_vec());
        agents.push(RelayAgent {
            relay: r,
            id: model.relays[r].id.clone(),
            reduced,
            groups,
            active_mode,
        });
    }
    Ok(agents)
}

/// Drive every retained (bus, primary, backup) triple of every optimized
/// mode at its CVaR points: once unsuppressed (only the primary may trip)
/// and once with the primary suppressed (the backup clears with its
/// coordination margin). Relays run the mode's own certified settings.
pub fn coordination_sweep(
    model: &NetworkModel,
    settings: &SettingsFile,
    triples: &BTreeMap<usize, Vec<SweepTriple>>,
    mct_s: f64,
) -> Result<CoordinationReport> {
    let mut cases = Vec::new();
    for group in &settings.groups {
        let Some(mode_triples) = triples.get(&group.mode_bits) else {
            continue;
        };
        let agents: Vec<RelayAgent> = group
            .relays
            .iter()
            .map(|s| {
                Ok(RelayAgent {
                    relay: model.relay_idx(&s.relay)?,
                    id: s.relay.clone(),
                    reduced: crate::gda::ReducedFeatureSet {
                        discrete: vec![],
                        discrete_names: vec![],
                        local_names: vec!["I_F".into(), "V_F".into()],
                    },
                    groups: [(
                        0,
                        AgentGroup {
                            zeta: s.zeta,
                            eta_i: group.eta_i,
                            eta_v: group.eta_v,
                            i_s_amps: s.i_s_amps,
                            v_s_pu: group.v_s_pu,
                        },
                    )]
                    .into(),
                    active_mode: 0,
                })
            })
            .collect::<Result<_>>()?;
        for triple in mode_triples {
            let mut drive = std::collections::BTreeMap::new();
            drive.insert(triple.primary.clone(), triple.primary_point);
            drive.insert(triple.backup.clone(), triple.backup_point);
            let primaries: std::collections::BTreeSet<String> = [triple.primary.clone()].into();

            let clean = drive_measurements(&agents, &drive, &primaries, &Default::default());
            cases.push(AuditCase {
                log: clean,
                expected_primaries: vec![triple.primary.clone()],
            });
            let sup: std::collections::BTreeSet<String> = [triple.primary.clone()].into();
            let suppressed = drive_measurements(&agents, &drive, &primaries, &sup);
            cases.push(AuditCase {
                log: suppressed,
                expected_primaries: vec![triple.primary.clone()],
            });
        }
    }
    Ok(audit_coordination(&cases, mct_s))
}

impl OfflineArtifacts {
    pub fn agents(
        &self,
        model: &NetworkModel,
        baseline: &[bool],
        initial: &TopologyState,
    ) -> Result<Vec<RelayAgent>> {
        build_agents(
            model,
            &self.models,
            &self.mode_space,
            &self.settings,
            baseline,
            initial,
        )
    }
}
