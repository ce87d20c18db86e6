//! Pipeline configuration file: paths, sampling distributions, optimizer
//! knobs, selection rule, and the baseline topology.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use mgprot_core::gda::SelectionRule;
use mgprot_core::network::NetworkModel;
use mgprot_core::optim::OptimizerConfig;
use mgprot_core::pipeline::PipelineOptions;
use mgprot_core::scenario::DistributionSpec;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Network description file.
    pub network: PathBuf,
    /// Output root; stage directories default beneath it.
    pub out_dir: PathBuf,
    #[serde(default)]
    pub dataset_dir: Option<PathBuf>,
    #[serde(default)]
    pub model_dir: Option<PathBuf>,
    #[serde(default)]
    pub settings_dir: Option<PathBuf>,
    #[serde(default)]
    pub report_dir: Option<PathBuf>,
    pub distribution: DistributionSpec,
    pub optimizer: OptimizerConfig,
    pub selection: SelectionRule,
    #[serde(default = "default_mode_cap")]
    pub mode_cap: usize,
    #[serde(default)]
    pub mode_features: Option<Vec<String>>,
    /// Baseline status per feature: switches/PCCs `open`/`closed`, DGs
    /// `in-service`/`out-of-service`. Features not listed default to
    /// switches open, PCCs closed, DGs in service.
    #[serde(default)]
    pub baseline: BTreeMap<String, String>,
    #[serde(default)]
    pub study_relays: Option<Vec<String>>,
}

fn default_mode_cap() -> usize {
    6
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config `{}`", path.display()))?;
        let mut config: PipelineConfig = serde_json::from_str(&text)
            .with_context(|| format!("cannot parse config `{}`", path.display()))?;
        // paths in the config are relative to the config file
        if let Some(base) = path.parent() {
            let anchor = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&p);
                }
            };
            anchor(&mut config.network);
            anchor(&mut config.out_dir);
            for opt in [
                &mut config.dataset_dir,
                &mut config.model_dir,
                &mut config.settings_dir,
                &mut config.report_dir,
            ] {
                if let Some(p) = opt {
                    anchor(p);
                }
            }
        }
        Ok(config)
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.dataset_dir
            .clone()
            .unwrap_or_else(|| self.out_dir.join("datasets"))
    }

    pub fn model_dir(&self) -> PathBuf {
        self.model_dir
            .clone()
            .unwrap_or_else(|| self.out_dir.join("models"))
    }

    pub fn settings_dir(&self) -> PathBuf {
        self.settings_dir
            .clone()
            .unwrap_or_else(|| self.out_dir.join("settings"))
    }

    pub fn report_dir(&self) -> PathBuf {
        self.report_dir
            .clone()
            .unwrap_or_else(|| self.out_dir.join("reports"))
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.dataset_dir().join("dataset.csv")
    }

    pub fn settings_path(&self) -> PathBuf {
        self.settings_dir().join("settings.json")
    }

    /// Resolve the baseline map against the model's feature list.
    pub fn baseline_vec(&self, model: &NetworkModel) -> Result<Vec<bool>> {
        let mut baseline: Vec<bool> = model
            .switches
            .iter()
            .map(|_| false)
            .chain(model.pccs.iter().map(|_| true))
            .chain(model.dgs.iter().map(|_| true))
            .collect();
        let names = model.feature_names();
        for (feature, status) in &self.baseline {
            let Some(idx) = names.iter().position(|n| n == feature) else {
                bail!("baseline names unknown feature `{feature}`");
            };
            baseline[idx] = match status.as_str() {
                "closed" | "in-service" => true,
                "open" | "out-of-service" => false,
                other => bail!("baseline status `{other}` for `{feature}` (use open/closed or in-service/out-of-service)"),
            };
        }
        Ok(baseline)
    }

    pub fn pipeline_options(&self, model: &NetworkModel) -> Result<PipelineOptions> {
        Ok(PipelineOptions {
            selection: self.selection,
            mode_cap: self.mode_cap,
            mode_features: self.mode_features.clone(),
            baseline: self.baseline_vec(model)?,
            study_relays: self.study_relays.clone(),
            optimizer: self.optimizer.clone(),
        })
    }
}
