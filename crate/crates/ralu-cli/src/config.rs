//! Configuration resolution: presets, TOML config files, CLI overrides.
//!
//! Precedence, lowest to highest: built-in defaults, `--preset`, config
//! file, command-line flags. The `RALU_SEED` environment variable supplies
//! the seed when nothing else does.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ralu_core::caching::CachePolicy;
use ralu_core::cost::CostModel;
use ralu_core::pipeline::RunConfig;
use ralu_core::region_select::CannyParams;
use ralu_core::schedule::StageConfig;

use crate::CliError;

/// Original-model shift for FLUX-style resolution-dependent scheduling at
/// 4096 image tokens: `exp(1.15)`.
pub const FLUX_H_ORI: f64 = 3.158192909689768;
/// Original-model shift for SD3-style scheduling.
pub const SD3_H_ORI: f64 = 3.0;

pub const PRESET_NAMES: [&str; 4] = ["flux4x", "flux7x", "sd3-2x", "sd3-3x"];

/// On-disk configuration. Unknown keys are rejected.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub preset: Option<String>,
    pub base_height: Option<usize>,
    pub base_width: Option<usize>,
    pub channels: Option<usize>,
    pub stages_n: Option<Vec<u32>>,
    pub stages_e: Option<Vec<f64>>,
    pub ratio: Option<f64>,
    pub h_ori: Option<f64>,
    pub c: Option<f64>,
    pub seed: Option<u64>,
    pub sigma: Option<f64>,
    pub footprint: Option<usize>,
    pub baseline_steps: Option<u32>,
    pub decoder: Option<String>,
    pub affine_map: Option<PathBuf>,
    pub mu_file: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub canny: Option<CannyParams>,
    pub caching: Option<CachePolicy>,
    pub cost_model: Option<CostModel>,
}

/// Values every command receives after resolution.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub run: RunConfig,
    pub sigma: f64,
    pub decoder: DecoderChoice,
    pub mu_file: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub cost_model: CostModel,
    pub verbose: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DecoderChoice {
    Norm,
    Affine(PathBuf),
}

/// Overrides shared by all subcommands.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub ratio: Option<f64>,
    pub c: Option<f64>,
    pub h_ori: Option<f64>,
    pub out: Option<PathBuf>,
    pub caching: Option<f64>,
    pub decoder: Option<String>,
    pub verbose: u8,
}

fn preset_config(name: &str) -> Result<FileConfig, CliError> {
    let (stages_n, stages_e, h_ori, baseline) = match name {
        "flux4x" => (vec![5, 6, 7], vec![0.3, 0.45, 1.0], FLUX_H_ORI, 50),
        "flux7x" => (vec![2, 3, 5], vec![0.2, 0.3, 1.0], FLUX_H_ORI, 50),
        "sd3-2x" | "sd3_2x" => (vec![5, 6, 9], vec![0.2, 0.3, 1.0], SD3_H_ORI, 28),
        "sd3-3x" | "sd3_3x" => (vec![3, 3, 6], vec![0.25, 0.3, 1.0], SD3_H_ORI, 28),
        other => {
            return Err(CliError::config(format!(
                "unknown preset {other:?}; available: {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(FileConfig {
        stages_n: Some(stages_n),
        stages_e: Some(stages_e),
        h_ori: Some(h_ori),
        baseline_steps: Some(baseline),
        ..FileConfig::default()
    })
}

fn merge(base: FileConfig, over: FileConfig) -> FileConfig {
    FileConfig {
        preset: over.preset.or(base.preset),
        base_height: over.base_height.or(base.base_height),
        base_width: over.base_width.or(base.base_width),
        channels: over.channels.or(base.channels),
        stages_n: over.stages_n.or(base.stages_n),
        stages_e: over.stages_e.or(base.stages_e),
        ratio: over.ratio.or(base.ratio),
        h_ori: over.h_ori.or(base.h_ori),
        c: over.c.or(base.c),
        seed: over.seed.or(base.seed),
        sigma: over.sigma.or(base.sigma),
        footprint: over.footprint.or(base.footprint),
        baseline_steps: over.baseline_steps.or(base.baseline_steps),
        decoder: over.decoder.or(base.decoder),
        affine_map: over.affine_map.or(base.affine_map),
        mu_file: over.mu_file.or(base.mu_file),
        out: over.out.or(base.out),
        canny: over.canny.or(base.canny),
        caching: over.caching.or(base.caching),
        cost_model: over.cost_model.or(base.cost_model),
    }
}

pub fn load_file(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| CliError::config(format!("bad config {}: {e}", path.display())))
}

/// Builds the effective configuration for one invocation.
pub fn resolve(over: &Overrides) -> Result<Resolved, CliError> {
    let mut cfg = FileConfig::default();
    let file_cfg = over.config.as_deref().map(load_file).transpose()?;
    // a preset may come from the flag or from the config file
    let preset_name = over
        .preset
        .clone()
        .or_else(|| file_cfg.as_ref().and_then(|f| f.preset.clone()));
    if let Some(name) = &preset_name {
        cfg = merge(cfg, preset_config(name)?);
    }
    if let Some(file_cfg) = file_cfg {
        cfg = merge(cfg, file_cfg);
    }

    let env_seed = std::env::var("RALU_SEED")
        .ok()
        .map(|s| {
            s.parse::<u64>()
                .map_err(|e| CliError::config(format!("RALU_SEED must be an integer: {e}")))
        })
        .transpose()?;
    let seed = over.seed.or(cfg.seed).or(env_seed).unwrap_or(0);

    let stages_n = cfg.stages_n.unwrap_or_else(|| vec![5, 6, 7]);
    let stages_e = cfg.stages_e.unwrap_or_else(|| vec![0.3, 0.45, 1.0]);
    if stages_n.len() != stages_e.len() {
        return Err(CliError::config(format!(
            "stages_n has {} entries but stages_e has {}",
            stages_n.len(),
            stages_e.len()
        )));
    }
    let stages: Vec<StageConfig> = stages_n
        .iter()
        .zip(stages_e.iter())
        .map(|(&steps, &end)| StageConfig { steps, end })
        .collect();

    let caching = match over.caching {
        Some(ratio) => Some(CachePolicy::with_ratio(ratio)),
        None => cfg.caching,
    };

    let run = RunConfig {
        base_height: cfg.base_height.unwrap_or(32),
        base_width: cfg.base_width.unwrap_or(32),
        channels: cfg.channels.unwrap_or(1),
        stages,
        ratio: over.ratio.or(cfg.ratio).unwrap_or(0.3),
        h_ori: over.h_ori.or(cfg.h_ori).unwrap_or(SD3_H_ORI),
        c_override: over.c.or(cfg.c),
        seed,
        footprint: cfg.footprint.unwrap_or(8),
        canny: cfg.canny.unwrap_or_default(),
        caching,
        baseline_steps: cfg.baseline_steps.unwrap_or(50),
    };
    validate(&run)?;

    let sigma = cfg.sigma.unwrap_or(0.5);
    if !(sigma > 0.0) {
        return Err(CliError::config(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let decoder = match over.decoder.clone().or(cfg.decoder).as_deref() {
        None | Some("norm") => DecoderChoice::Norm,
        Some("affine") => {
            let path = cfg.affine_map.clone().ok_or_else(|| {
                CliError::config("decoder \"affine\" needs affine_map = \"<csv>\"".into())
            })?;
            DecoderChoice::Affine(path)
        }
        Some(other) => {
            return Err(CliError::config(format!(
                "unknown decoder {other:?}; available: norm, affine"
            )))
        }
    };
    let cost_model = cfg.cost_model.unwrap_or(CostModel {
        alpha: 1.0,
        beta: 0.0,
        t_aux: 0.0,
        decoder_cost: 0.0,
    });

    Ok(Resolved {
        run,
        sigma,
        decoder,
        mu_file: cfg.mu_file,
        out_dir: over
            .out
            .clone()
            .or(cfg.out)
            .unwrap_or_else(|| PathBuf::from("ralu-out")),
        cost_model,
        verbose: over.verbose,
    })
}

/// Range checks beyond what `RunConfig::validate` covers at run time.
fn validate(run: &RunConfig) -> Result<(), CliError> {
    if run.stages.is_empty() {
        return Err(CliError::config("at least one stage required".into()));
    }
    let mut prev = 0.0;
    for (i, s) in run.stages.iter().enumerate() {
        if s.steps == 0 {
            return Err(CliError::config(format!("stage {} has zero steps", i + 1)));
        }
        if !(s.end > prev && s.end <= 1.0) {
            return Err(CliError::config(format!(
                "stage ends must increase strictly within (0, 1]; stage {} has end {}",
                i + 1,
                s.end
            )));
        }
        prev = s.end;
    }
    if !(0.0..=1.0).contains(&run.ratio) {
        return Err(CliError::config(format!(
            "ratio must lie in [0, 1], got {}",
            run.ratio
        )));
    }
    if !(run.h_ori > 0.0) {
        return Err(CliError::config(format!(
            "h_ori must be positive, got {}",
            run.h_ori
        )));
    }
    if let Some(c) = run.c_override {
        if !(c > 0.0 && c <= 0.25) {
            return Err(CliError::config(format!(
                "c must lie in (0, 0.25], got {c}"
            )));
        }
    }
    if let Some(policy) = &run.caching {
        if !(0.0..1.0).contains(&policy.ratio) {
            return Err(CliError::config(format!(
                "caching ratio must lie in [0, 1), got {}",
                policy.ratio
            )));
        }
    }
    Ok(())
}
