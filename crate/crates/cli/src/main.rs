//! Batch pipeline driver: generate fault data, fit per-relay models, compute
//! relay setting groups, replay faults, and export curve samples.
//!
//! Exit codes: 0 full success, 1 runtime failure, 2 bad input or
//! configuration, 3 partial success (some modes unavailable, or a simulation
//! audit found violations).

mod config;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;

use config::PipelineConfig;
use mgprot_core::gda::{read_model_file, write_model_file, RelayModelFile};
use mgprot_core::network::{parse_network, NetworkModel, TopologyState};
use mgprot_core::optim::{cvar_gaussian, read_settings_file, write_settings_file, SettingsFile};
use mgprot_core::pipeline::{
    build_agents, fit_all, fit_relay, optimize_modes, system_mode_space, PipelineOptions,
    SweepTriple, SystemModeSpace,
};
use mgprot_core::scenario::{
    classify_all, generate_dataset, read_dataset, write_dataset, Dataset, FaultClass,
};
use mgprot_core::shortcircuit::{solve_fault, FaultLocation, SampledParams};
use mgprot_core::sim::{
    audit_coordination, inject_fault, write_trip_log, AuditCase, CoordinationReport, FaultScenario,
};

#[derive(Parser)]
#[command(
    name = "mgprot",
    about = "Adaptive inverse-time relay settings for reconfigurable distribution networks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Pipeline configuration file
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte Carlo fault campaign and write the dataset
    Gen {
        #[command(flatten)]
        config: ConfigArg,
        /// Override the sample count
        #[arg(long)]
        n: Option<usize>,
        /// Override the random seed
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit per-relay models: stage-1 discriminant, importance, selection,
    /// stage-2 mode statistics
    Fit {
        #[command(flatten)]
        config: ConfigArg,
        /// Fit a single relay instead of the whole study set
        #[arg(long)]
        relay: Option<String>,
    },
    /// Optimize relay setting groups per system mode
    Optimize {
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Replay a fault or run the coordination suppression sweep
    Simulate {
        #[command(flatten)]
        config: ConfigArg,
        /// Run the full suppression sweep over every retained
        /// (bus, primary, backup) triple in every mode
        #[arg(long)]
        sweep: bool,
        /// Fault at a bus
        #[arg(long)]
        fault_bus: Option<String>,
        /// Fault on a branch (with --fault-at)
        #[arg(long)]
        fault_branch: Option<String>,
        /// Fractional distance along the faulted branch
        #[arg(long, default_value_t = 0.5)]
        fault_at: f64,
        /// Fault impedance as r,x in ohms
        #[arg(long, value_name = "R,X", default_value = "0,0")]
        zf: String,
        /// Start from this system mode's representative topology
        #[arg(long)]
        mode: Option<usize>,
        /// Open these switches/PCCs on top of the baseline
        #[arg(long, value_delimiter = ',')]
        open: Vec<String>,
        /// Close these switches/PCCs on top of the baseline
        #[arg(long, value_delimiter = ',')]
        close: Vec<String>,
        /// Take these DGs out of service
        #[arg(long, value_delimiter = ',')]
        dg_out: Vec<String>,
        /// Put these DGs in service
        #[arg(long, value_delimiter = ',')]
        dg_in: Vec<String>,
        /// Suppress these relays (they pick up but never trip)
        #[arg(long, value_delimiter = ',')]
        suppress: Vec<String>,
        /// Name for the emitted trip log
        #[arg(long, default_value = "scenario")]
        name: String,
    },
    /// Export operating-curve samples and mode KDE data
    Curves {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        relay: String,
        /// System mode bits
        #[arg(long)]
        mode: usize,
        /// Fixed voltage (pu) for the 2-D slice
        #[arg(long, default_value_t = 0.5)]
        voltage: f64,
        /// Emit the full (current, voltage) surface instead of a slice
        #[arg(long)]
        surface: bool,
        /// Downstream relay whose primary CVaR current becomes the
        /// coordination marker
        #[arg(long)]
        downstream: Option<String>,
    },
    /// Summarize artifacts on disk into one report
    Report {
        #[command(flatten)]
        config: ConfigArg,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let text = format!("{e:#}");
            // input-shaped problems exit 2, runtime problems exit 1
            if text.contains("cannot read")
                || text.contains("cannot parse")
                || text.contains("unknown")
                || text.contains("not found")
                || text.contains("No such file")
            {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Gen {
            config,
            n,
            seed,
            out,
        } => cmd_gen(&config.config, n, seed, out),
        Command::Fit { config, relay } => cmd_fit(&config.config, relay),
        Command::Optimize { config } => cmd_optimize(&config.config),
        Command::Simulate {
            config,
            sweep,
            fault_bus,
            fault_branch,
            fault_at,
            zf,
            mode,
            open,
            close,
            dg_out,
            dg_in,
            suppress,
            name,
        } => {
            if sweep {
                cmd_simulate_sweep(&config.config)
            } else {
                cmd_simulate_one(
                    &config.config,
                    fault_bus,
                    fault_branch,
                    fault_at,
                    &zf,
                    mode,
                    &open,
                    &close,
                    &dg_out,
                    &dg_in,
                    &suppress,
                    &name,
                )
            }
        }
        Command::Curves {
            config,
            relay,
            mode,
            voltage,
            surface,
            downstream,
        } => cmd_curves(&config.config, &relay, mode, voltage, surface, downstream),
        Command::Report { config } => cmd_report(&config.config),
    }
}

fn load_model(config: &PipelineConfig) -> Result<NetworkModel> {
    let text = std::fs::read_to_string(&config.network)
        .with_context(|| format!("cannot read network file `{}`", config.network.display()))?;
    parse_network(&text).map_err(|e| anyhow!("{e}"))
}

fn load_dataset(config: &PipelineConfig, model: &NetworkModel) -> Result<Dataset> {
    let path = config.dataset_path();
    read_dataset(&path, model)
        .with_context(|| format!("cannot read dataset `{}` (run `gen` first?)", path.display()))
}

fn dataset_hash(config: &PipelineConfig) -> Result<String> {
    let bytes = std::fs::read(config.dataset_path())?;
    Ok(mgprot_core::optim::provenance_hash(&bytes))
}

fn cmd_gen(
    config_path: &std::path::Path,
    n: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<ExitCode> {
    let mut config = PipelineConfig::load(config_path)?;
    if let Some(dir) = out {
        config.out_dir = dir;
        config.dataset_dir = None;
    }
    let model = load_model(&config)?;
    let mut spec = config.distribution.clone();
    if let Some(n) = n {
        spec.samples = n;
    }
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let (dataset, summary) = generate_dataset(&model, &spec).map_err(|e| anyhow!("{e}"))?;
    let dir = config.dataset_dir();
    std::fs::create_dir_all(&dir)?;
    write_dataset(&dataset, &config.dataset_path()).map_err(|e| anyhow!("{e}"))?;
    std::fs::write(
        dir.join("gen_summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;

    println!(
        "generated {} scenarios ({} skipped) -> {}",
        summary.completed,
        summary.skipped,
        config.dataset_path().display()
    );
    if spec.samples == 0 {
        println!("warning: sample count is 0, dataset is empty");
    }
    for (reason, count) in &summary.skip_reasons {
        println!("  skipped {count}: {reason}");
    }
    for (relay, counts) in &summary.class_counts {
        let line: Vec<String> = counts.iter().map(|(c, n)| format!("{c} {n}")).collect();
        println!("  {relay}: {}", line.join(", "));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_fit(config_path: &std::path::Path, relay: Option<String>) -> Result<ExitCode> {
    let config = PipelineConfig::load(config_path)?;
    let model = load_model(&config)?;
    let dataset = load_dataset(&config, &model)?;
    let mut options = config.pipeline_options(&model)?;
    if let Some(id) = &relay {
        model.relay_idx(id).map_err(|e| anyhow!("{e}"))?;
        options.study_relays = Some(vec![id.clone()]);
    }

    let (models, reports, failures) =
        fit_all(&model, &dataset, &options).map_err(|e| anyhow!("{e}"))?;
    if relay.is_some() && models.is_empty() {
        let (_, reason) = &failures[0];
        bail!("fit failed: {reason}");
    }

    let model_dir = config.model_dir();
    let report_dir = config.report_dir();
    std::fs::create_dir_all(&model_dir)?;
    std::fs::create_dir_all(&report_dir)?;
    for (r, file) in &models {
        let id = &model.relays[*r].id;
        write_model_file(file, &model_dir.join(format!("{id}.json")))
            .map_err(|e| anyhow!("{e}"))?;
        let report = &reports[r];
        let mut plateau = String::from("k,feature,accuracy\n");
        for row in &report.plateau {
            plateau.push_str(&format!("{},{},{}\n", row.k, row.feature, row.accuracy));
        }
        std::fs::write(report_dir.join(format!("{id}_plateau.csv")), plateau)?;
        let mut importance = String::from("feature,score\n");
        for &j in &file.importance.ranking {
            importance.push_str(&format!(
                "{},{}\n",
                file.importance.feature_names[j], file.importance.scores[j]
            ));
        }
        std::fs::write(report_dir.join(format!("{id}_importance.csv")), importance)?;
        println!(
            "{id}: accuracy {:.4} (selected {:.4}), communicate {:?}",
            report.full_accuracy, report.selected_accuracy, file.selected.discrete_names
        );
    }
    for (id, reason) in &failures {
        println!("{id}: not fitted ({reason})");
    }
    Ok(if failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    })
}

/// Load fitted models from disk, fitting any that are missing.
fn load_or_fit_models(
    config: &PipelineConfig,
    model: &NetworkModel,
    dataset: &Dataset,
    options: &PipelineOptions,
) -> Result<BTreeMap<usize, RelayModelFile>> {
    let model_dir = config.model_dir();
    std::fs::create_dir_all(&model_dir)?;
    let study: Vec<usize> = match &options.study_relays {
        None => (0..model.relays.len()).collect(),
        Some(ids) => ids
            .iter()
            .map(|id| model.relay_idx(id).map_err(|e| anyhow!("{e}")))
            .collect::<Result<_>>()?,
    };
    let mut models = BTreeMap::new();
    for r in study {
        let id = &model.relays[r].id;
        let path = model_dir.join(format!("{id}.json"));
        if path.exists() {
            models.insert(r, read_model_file(&path).map_err(|e| anyhow!("{e}"))?);
        } else {
            match fit_relay(model, dataset, r, options) {
                Ok((file, _)) => {
                    write_model_file(&file, &path).map_err(|e| anyhow!("{e}"))?;
                    models.insert(r, file);
                }
                Err(e) => println!("{id}: not fitted ({e})"),
            }
        }
    }
    Ok(models)
}

fn cmd_optimize(config_path: &std::path::Path) -> Result<ExitCode> {
    let config = PipelineConfig::load(config_path)?;
    let model = load_model(&config)?;
    let dataset = load_dataset(&config, &model)?;
    let options = config.pipeline_options(&model)?;
    let models = load_or_fit_models(&config, &model, &dataset, &options)?;
    let hash = dataset_hash(&config)?;

    let (mode_space, _pickups, settings, triples, unprotected) =
        optimize_modes(&model, &models, &options, &hash).map_err(|e| anyhow!("{e}"))?;

    let dir = config.settings_dir();
    std::fs::create_dir_all(&dir)?;
    let path = config.settings_path();
    write_settings_file(&settings, &path).map_err(|e| anyhow!("{e}"))?;
    std::fs::write(
        dir.join("sweep_triples.json"),
        serde_json::to_string_pretty(&triples)?,
    )?;

    // re-check certificates on the written artifact
    let reread = read_settings_file(&path).map_err(|e| anyhow!("{e}"))?;
    for group in &reread.groups {
        for check in &group.certificate {
            if check.slack_s < -1e-6 {
                bail!(
                    "written settings violate `{}` in mode {}",
                    check.label,
                    group.mode_desc
                );
            }
        }
    }

    println!(
        "mode space over {:?}: {} modes optimized, {} unavailable -> {}",
        mode_space.names,
        settings.groups.len(),
        settings.unavailable_modes.len(),
        path.display()
    );
    for g in &settings.groups {
        println!(
            "  mode {} [{}]: eta_i {:.4} eta_v {:.4}, {} relays, {} pairs dropped",
            g.mode_bits,
            g.mode_desc,
            g.eta_i,
            g.eta_v,
            g.relays.len(),
            g.dropped.len()
        );
    }
    for (desc, reason) in &settings.unavailable_modes {
        println!("  unavailable [{desc}]: {reason}");
    }
    let buses: BTreeSet<&String> = unprotected.values().flatten().collect();
    if !buses.is_empty() {
        println!("  unprotected buses in some modes: {buses:?}");
    }
    Ok(if settings.unavailable_modes.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    })
}

struct SimContext {
    config: PipelineConfig,
    model: NetworkModel,
    options: PipelineOptions,
    models: BTreeMap<usize, RelayModelFile>,
    mode_space: SystemModeSpace,
    settings: SettingsFile,
    triples: BTreeMap<usize, Vec<SweepTriple>>,
}

fn sim_context(config_path: &std::path::Path) -> Result<SimContext> {
    let config = PipelineConfig::load(config_path)?;
    let model = load_model(&config)?;
    let dataset = load_dataset(&config, &model)?;
    let options = config.pipeline_options(&model)?;
    let models = load_or_fit_models(&config, &model, &dataset, &options)?;
    let mode_space = system_mode_space(&model, &models, &options).map_err(|e| anyhow!("{e}"))?;
    let settings_path = config.settings_path();
    if !settings_path.exists() {
        bail!(
            "settings file `{}` not found (run `optimize` first)",
            settings_path.display()
        );
    }
    let settings = read_settings_file(&settings_path).map_err(|e| anyhow!("{e}"))?;
    let triples_path = config.settings_dir().join("sweep_triples.json");
    let triples = if triples_path.exists() {
        serde_json::from_str(&std::fs::read_to_string(&triples_path)?)?
    } else {
        BTreeMap::new()
    };
    Ok(SimContext {
        config,
        model,
        options,
        models,
        mode_space,
        settings,
        triples,
    })
}

fn parse_zf(zf: &str) -> Result<Complex64> {
    let parts: Vec<&str> = zf.split(',').collect();
    if parts.len() != 2 {
        bail!("--zf wants `r,x`, got `{zf}`");
    }
    Ok(Complex64::new(
        parts[0].trim().parse()?,
        parts[1].trim().parse()?,
    ))
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate_one(
    config_path: &std::path::Path,
    fault_bus: Option<String>,
    fault_branch: Option<String>,
    fault_at: f64,
    zf: &str,
    mode: Option<usize>,
    open: &[String],
    close: &[String],
    dg_out: &[String],
    dg_in: &[String],
    suppress: &[String],
    name: &str,
) -> Result<ExitCode> {
    let ctx = sim_context(config_path)?;
    let model = &ctx.model;

    // topology: baseline, then mode bits, then explicit overrides
    let mut features = ctx.options.baseline.clone();
    if let Some(bits) = mode {
        if bits >= ctx.mode_space.mode_count() {
            bail!(
                "unknown mode {bits}: space has {} modes",
                ctx.mode_space.mode_count()
            );
        }
        for (i, &j) in ctx.mode_space.features.iter().enumerate() {
            features[j] = (bits >> i) & 1 == 1;
        }
    }
    let names = model.feature_names();
    {
        let mut set_feature = |id: &String, value: bool| -> Result<()> {
            let Some(j) = names.iter().position(|n| n == id) else {
                bail!("unknown switch/pcc/dg `{id}`");
            };
            features[j] = value;
            Ok(())
        };
        for id in open {
            set_feature(id, false)?;
        }
        for id in close {
            set_feature(id, true)?;
        }
        for id in dg_out {
            set_feature(id, false)?;
        }
        for id in dg_in {
            set_feature(id, true)?;
        }
    }
    let topology = TopologyState::from_feature_vec(model, &features).map_err(|e| anyhow!("{e}"))?;

    let location = match (&fault_bus, &fault_branch) {
        (Some(bus), None) => FaultLocation::Bus {
            bus: model.bus_idx(bus).map_err(|e| anyhow!("{e}"))?,
        },
        (None, Some(branch)) => FaultLocation::OnBranch {
            branch: model.branch_idx(branch).map_err(|e| anyhow!("{e}"))?,
            distance: fault_at,
        },
        _ => bail!("give exactly one of --fault-bus or --fault-branch"),
    };

    let scenario = FaultScenario {
        topology: topology.clone(),
        location,
        zf: parse_zf(zf)?,
        params: SampledParams::nominal(model),
    };
    let agents = build_agents(
        model,
        &ctx.models,
        &ctx.mode_space,
        &ctx.settings,
        &ctx.options.baseline,
        &topology,
    )
    .map_err(|e| anyhow!("{e}"))?;
    let suppressed: BTreeSet<String> = suppress.iter().cloned().collect();
    let log = inject_fault(model, &agents, &scenario, &suppressed).map_err(|e| anyhow!("{e}"))?;

    // expected primaries from the flow labeling of this very fault
    let net =
        mgprot_core::network::apply_topology(model, &topology).map_err(|e| anyhow!("{e}"))?;
    let label_sol = solve_fault(
        &net,
        &scenario.location,
        Complex64::new(0.0, 0.0),
        &scenario.params,
        1.0,
    )
    .map_err(|e| anyhow!("{e}"))?;
    let classes = classify_all(&net, &label_sol);
    let expected: Vec<String> = (0..model.relays.len())
        .filter(|&r| classes[r] == FaultClass::Primary)
        .map(|r| model.relays[r].id.clone())
        .collect();

    let report_dir = ctx.config.report_dir();
    std::fs::create_dir_all(&report_dir)?;
    let log_path = report_dir.join(format!("triplog_{name}.csv"));
    write_trip_log(&log, &log_path).map_err(|e| anyhow!("{e}"))?;

    for e in &log.events {
        println!("{:>10.6}  {:<14} {}", e.time_s, e.relay, e.kind);
    }
    println!(
        "fault {}: {} (tripped: {:?}) -> {}",
        log.fault,
        if log.isolated {
            "isolated"
        } else {
            "NOT isolated"
        },
        log.tripped,
        log_path.display()
    );

    let report = audit_coordination(
        &[AuditCase {
            log: log.clone(),
            expected_primaries: expected,
        }],
        ctx.options.optimizer.mct_s,
    );
    std::fs::write(
        report_dir.join(format!("audit_{name}.json")),
        serde_json::to_string_pretty(&report)?,
    )?;
    for v in &report.cases[0].violations {
        println!("violation: {v}");
    }
    Ok(if log.isolated && report.miscoordinated == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    })
}

fn cmd_simulate_sweep(config_path: &std::path::Path) -> Result<ExitCode> {
    let ctx = sim_context(config_path)?;
    let report = mgprot_core::pipeline::coordination_sweep(
        &ctx.model,
        &ctx.settings,
        &ctx.triples,
        ctx.options.optimizer.mct_s,
    )
    .map_err(|e| anyhow!("{e}"))?;
    let driven: usize = ctx.triples.values().map(|t| t.len()).sum();
    let report_dir = ctx.config.report_dir();
    std::fs::create_dir_all(&report_dir)?;
    std::fs::write(
        report_dir.join("sweep_audit.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    println!(
        "sweep: {} triples, {} cases, {} miscoordinated (rate {:.4})",
        driven,
        report.cases.len(),
        report.miscoordinated,
        report.miscoordination_rate
    );
    for case in report.cases.iter().filter(|c| !c.violations.is_empty()) {
        for v in &case.violations {
            println!("  violation [{}]: {v}", case.fault);
        }
    }
    Ok(if report.miscoordinated == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    })
}

fn cmd_curves(
    config_path: &std::path::Path,
    relay: &str,
    mode: usize,
    voltage: f64,
    surface: bool,
    downstream: Option<String>,
) -> Result<ExitCode> {
    let ctx = sim_context(config_path)?;
    let model = &ctx.model;
    let r = model.relay_idx(relay).map_err(|e| anyhow!("{e}"))?;
    let Some(group) = ctx.settings.groups.iter().find(|g| g.mode_bits == mode) else {
        bail!("unknown mode `{mode}` (no optimized setting group)");
    };
    let Some(setting) = group.relays.iter().find(|s| s.relay == relay) else {
        bail!("relay `{relay}` has no setting in mode {mode}");
    };

    let report_dir = ctx.config.report_dir();
    std::fs::create_dir_all(&report_dir)?;

    // log-spaced current multiples 1.01 .. 30
    let grid: Vec<f64> = (0..=120)
        .map(|i| 1.01 * (30.0_f64 / 1.01).powf(i as f64 / 120.0))
        .collect();
    let t_at = |mult: f64, v: f64| {
        mgprot_core::curve::t_op_reduced(
            mult * setting.i_s_amps,
            v,
            setting.zeta,
            group.eta_i,
            group.eta_v,
            setting.i_s_amps,
            group.v_s_pu,
        )
    };

    if surface {
        // inverse voltage multiples w = V_S / V from 1.02 to 10
        let mut out = String::from("i_multiple,v_inverse_multiple,t_op_s\n");
        for &m in &grid {
            for j in 0..=60 {
                let w = 1.02 * (10.0_f64 / 1.02).powf(j as f64 / 60.0);
                let v = group.v_s_pu / w;
                match t_at(m, v) {
                    Some(t) => out.push_str(&format!("{m},{w},{t}\n")),
                    None => out.push_str(&format!("{m},{w},no-op\n")),
                }
            }
        }
        let path = report_dir.join(format!("{relay}_mode{mode}_surface.csv"));
        std::fs::write(&path, out)?;
        println!("surface -> {}", path.display());
    } else {
        let mut out = String::from("i_multiple,t_op_s\n");
        for &m in &grid {
            match t_at(m, voltage) {
                Some(t) => out.push_str(&format!("{m},{t}\n")),
                None => out.push_str(&format!("{m},no-op\n")),
            }
        }
        let path = report_dir.join(format!("{relay}_mode{mode}_curve.csv"));
        std::fs::write(&path, out)?;
        println!("curve at V = {voltage} pu -> {}", path.display());
    }

    // coordination markers: this relay's own backup-class CVaR current (the
    // shifted marker) and the downstream relay's primary CVaR current on its
    // own axis
    let mut markers = String::from("name,i_multiple\n");
    let sys_state = ctx
        .mode_space
        .state(model, &ctx.options.baseline, mode)
        .map_err(|e| anyhow!("{e}"))?;
    let fv = sys_state.to_feature_vec();
    let own_file = &ctx.models[&r];
    let own_mode = own_file.selected.mode_of(&fv);
    if let Some(g) = own_file.mode_statistics[own_mode]
        .per_class
        .get(&FaultClass::Backup.to_string())
    {
        let alpha = ctx.options.optimizer.alpha_i;
        let i = cvar_gaussian(g.mean_i, g.var_i.sqrt(), alpha).map_err(|e| anyhow!("{e}"))?;
        markers.push_str(&format!("own_backup_cvar,{}\n", i / setting.i_s_amps));
    }
    if let Some(d) = &downstream {
        let dr = model.relay_idx(d).map_err(|e| anyhow!("{e}"))?;
        let d_file = ctx
            .models
            .get(&dr)
            .ok_or_else(|| anyhow!("downstream relay `{d}` has no fitted model"))?;
        let d_mode = d_file.selected.mode_of(&fv);
        if let Some(g) = d_file.mode_statistics[d_mode]
            .per_class
            .get(&FaultClass::Primary.to_string())
        {
            let alpha = ctx.options.optimizer.alpha_i;
            let i = cvar_gaussian(g.mean_i, g.var_i.sqrt(), alpha).map_err(|e| anyhow!("{e}"))?;
            let d_setting = group
                .relays
                .iter()
                .find(|s| s.relay == *d)
                .ok_or_else(|| anyhow!("downstream relay `{d}` has no setting in mode {mode}"))?;
            markers.push_str(&format!(
                "downstream_primary_cvar,{}\n",
                i / d_setting.i_s_amps
            ));
        }
    }
    let marker_path = report_dir.join(format!("{relay}_mode{mode}_markers.csv"));
    std::fs::write(&marker_path, markers)?;

    // KDE-ready raw samples of this relay in this mode
    let dataset = load_dataset(&ctx.config, model)?;
    let mut kde = String::from("i_multiple,v_inverse_multiple,psi\n");
    for rec in dataset.for_relay(r) {
        if own_file.selected.mode_of(&rec.features) != own_mode {
            continue;
        }
        if rec.i_f_a <= 0.0 || rec.v_f_pu <= 0.0 {
            continue;
        }
        kde.push_str(&format!(
            "{},{},{}\n",
            rec.i_f_a / setting.i_s_amps,
            group.v_s_pu / rec.v_f_pu,
            rec.class
        ));
    }
    let kde_path = report_dir.join(format!("{relay}_mode{mode}_kde.csv"));
    std::fs::write(&kde_path, kde)?;
    println!("markers -> {}", marker_path.display());
    println!("kde samples -> {}", kde_path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(config_path: &std::path::Path) -> Result<ExitCode> {
    let config = PipelineConfig::load(config_path)?;
    let mut report = serde_json::Map::new();

    let summary_path = config.dataset_dir().join("gen_summary.json");
    if summary_path.exists() {
        report.insert(
            "generation".into(),
            serde_json::from_str(&std::fs::read_to_string(&summary_path)?)?,
        );
    }
    let settings_path = config.settings_path();
    if settings_path.exists() {
        let settings = read_settings_file(&settings_path).map_err(|e| anyhow!("{e}"))?;
        let modes: Vec<serde_json::Value> = settings
            .groups
            .iter()
            .map(|g| {
                serde_json::json!({
                    "mode_bits": g.mode_bits,
                    "mode": g.mode_desc,
                    "eta_i": g.eta_i,
                    "eta_v": g.eta_v,
                    "relays": g.relays.len(),
                    "objective_s": g.objective_s,
                    "dropped_pairs": g.dropped.len(),
                })
            })
            .collect();
        report.insert("modes".into(), serde_json::Value::Array(modes));
        report.insert(
            "unavailable_modes".into(),
            serde_json::to_value(&settings.unavailable_modes)?,
        );
    }
    let sweep_path = config.report_dir().join("sweep_audit.json");
    if sweep_path.exists() {
        let audit: CoordinationReport =
            serde_json::from_str(&std::fs::read_to_string(&sweep_path)?)?;
        report.insert(
            "sweep".into(),
            serde_json::json!({
                "cases": audit.cases.len(),
                "miscoordinated": audit.miscoordinated,
                "rate": audit.miscoordination_rate,
            }),
        );
    }

    let dir = config.report_dir();
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("report.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
    println!("report -> {}", path.display());
    for (k, v) in &report {
        println!("  {k}: {v}");
    }
    Ok(ExitCode::SUCCESS)
}
