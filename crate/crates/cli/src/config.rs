//! `config.json`: per-project hyperparameters.

use std::fs;
use std::path::Path;

use hail_core::augment::AugmentConfig;
use hail_core::pipeline::{HotspotParams, PredictConfig, PredictionMode, TissueParams, LOWRES_FACTOR};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Centroid,
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectConfig {
    pub tile_size: u32,
    pub overlap: f64,
    /// Passes over the training data per iteration.
    pub epochs: u32,
    pub augment_base: u32,
    /// Copy cap; `null` means four times the base.
    pub augment_cap: Option<u32>,
    pub augment_flip_probability: f64,
    pub augment_hue_degrees: f64,
    pub augment_lightness: f64,
    pub augment_warp_probability: f64,
    pub augment_warp_grid: u32,
    pub augment_warp_displacement: f64,
    pub f1_threshold: f64,
    /// Two-resolution prediction. `--one_network true` overrides it.
    pub deepzoom: bool,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub luminance_threshold: u8,
    pub min_tissue_fraction: f64,
    pub lowres_factor: u32,
    pub hotspot_dilation: u32,
    pub hotspot_margin: u32,
    pub backend: BackendKind,
    pub centroid_radius: u32,
    /// Program and leading arguments of an external backend.
    pub external_command: Vec<String>,
}

impl Default for ProjectConfig {
    fn default() -> Self {
        let aug = AugmentConfig::default();
        let tissue = TissueParams::default();
        let hot = HotspotParams::default();
        Self {
            tile_size: 500,
            overlap: 0.5,
            epochs: 2,
            augment_base: 10,
            augment_cap: None,
            augment_flip_probability: aug.flip_probability,
            augment_hue_degrees: aug.hue_degrees,
            augment_lightness: aug.lightness,
            augment_warp_probability: aug.warp_probability,
            augment_warp_grid: aug.warp_grid,
            augment_warp_displacement: aug.warp_displacement,
            f1_threshold: 0.88,
            deepzoom: true,
            seed: 0,
            workers: 0,
            luminance_threshold: tissue.luminance_threshold,
            min_tissue_fraction: tissue.min_fraction,
            lowres_factor: LOWRES_FACTOR,
            hotspot_dilation: hot.dilation,
            hotspot_margin: hot.margin,
            backend: BackendKind::Centroid,
            centroid_radius: 1,
            external_command: Vec::new(),
        }
    }
}

impl ProjectConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("{}: {e}; is this a project created with --option new?", path.display())))?;
        let config: Self =
            serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        config.check().map_err(|e| e.context(path.display()))?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        fs::write(path, text + "\n").map_err(|e| CliError::data(format!("{}: {e}", path.display())))
    }

    /// Applies `key=value` overrides. Values parse as JSON, falling back to
    /// a plain string.
    pub fn with_overrides(&self, overrides: &[String]) -> CliResult<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut value = serde_json::to_value(self).expect("config serializes");
        let obj = value.as_object_mut().expect("config is an object");
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("--set expects key=value, got {item:?}")))?;
            let key = key.trim();
            if !obj.contains_key(key) {
                let known: Vec<&str> = obj.keys().map(String::as_str).collect();
                return Err(CliError::usage(format!("unknown setting {key:?}; known: {}", known.join(", "))));
            }
            let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            obj.insert(key.to_string(), parsed);
        }
        let config: Self =
            serde_json::from_value(value).map_err(|e| CliError::usage(format!("invalid --set value: {e}")))?;
        config.check().map_err(|e| CliError::usage(e.message))?;
        Ok(config)
    }

    fn check(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::data(m));
        if self.tile_size == 0 {
            return bad("tile_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return bad(format!("overlap {} outside [0, 1)", self.overlap));
        }
        if self.augment_base == 0 {
            return bad("augment_base must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.f1_threshold) {
            return bad(format!("f1_threshold {} outside [0, 1)", self.f1_threshold));
        }
        if self.lowres_factor < 2 {
            return bad("lowres_factor must be at least 2".into());
        }
        if self.backend == BackendKind::External && self.external_command.is_empty() {
            return bad("backend \"external\" needs external_command".into());
        }
        Ok(())
    }

    pub fn augment(&self) -> AugmentConfig {
        AugmentConfig {
            flip_probability: self.augment_flip_probability,
            hue_degrees: self.augment_hue_degrees,
            lightness: self.augment_lightness,
            warp_probability: self.augment_warp_probability,
            warp_grid: self.augment_warp_grid,
            warp_displacement: self.augment_warp_displacement,
        }
    }

    pub fn tissue(&self) -> TissueParams {
        TissueParams {
            luminance_threshold: self.luminance_threshold,
            min_fraction: self.min_tissue_fraction,
        }
    }

    pub fn predict(&self, mode: PredictionMode) -> PredictConfig {
        PredictConfig {
            mode,
            tile_size: self.tile_size,
            overlap: self.overlap,
            tissue: self.tissue(),
            hotspot: HotspotParams {
                factor: self.lowres_factor,
                dilation: self.hotspot_dilation,
                margin: self.hotspot_margin,
            },
            workers: self.workers,
        }
    }

    /// Single-network operation: an explicit flag wins over `deepzoom`.
    pub fn one_network(&self, flag: Option<bool>) -> bool {
        flag.unwrap_or(!self.deepzoom)
    }
}
