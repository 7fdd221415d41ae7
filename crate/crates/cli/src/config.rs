//! Pipeline configuration.
//!
//! Values are resolved in this order, later winning: built-in defaults, the
//! TOML file given by `--config`, the `ARIDPROB_SEED` / `ARIDPROB_OUT`
//! environment variables, then command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use aridprob_core::basis::BandwidthRule;
use aridprob_core::fluctuation::{AreaWeighting, RegionMask, SdKind};
use aridprob_core::grid::{GridFormat, GridSpec, SynthConfig};
use aridprob_core::nn::{AdamHyper, NetworkConfig, TrainConfig, NUM_CLASSES};
use serde::{Deserialize, Serialize};

use crate::UsageError;

pub const ENV_SEED: &str = "ARIDPROB_SEED";
pub const ENV_OUT: &str = "ARIDPROB_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed; component seeds are fixed offsets from it.
    pub seed: u64,
    /// Directory receiving every artifact.
    pub out: PathBuf,
    pub grid: GridSection,
    pub synth: SynthSection,
    pub basis: BasisSection,
    pub network: NetworkSection,
    pub training: TrainingSection,
    pub years: YearsSection,
    pub fluct: FluctSection,
    pub render: RenderSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub resolution: f64,
    pub year_start: i32,
    pub year_end: i32,
    /// `binary` or `csv` for files written by the pipeline.
    pub format: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub precip_gradient: f64,
    pub precip_base: f64,
    pub noise_sd: f64,
    pub temp_base: f64,
    pub temp_lapse: f64,
    pub seasonal_amp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisSection {
    pub spatial_side: usize,
    pub temporal_knots: usize,
    pub bandwidth_rule: BandwidthRule,
    pub pr_clamp: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    /// Hidden layer widths; empty means two layers as wide as the input.
    pub hidden: Vec<usize>,
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub validation_fraction: f64,
    pub standardize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct YearsSection {
    pub train: [i32; 2],
    pub test: [i32; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomRegion {
    pub name: String,
    pub lat: [f64; 2],
    pub lon: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FluctSection {
    /// Year range for the statistics; defaults to the test years.
    pub years: Option<[i32; 2]>,
    pub sd: SdKind,
    pub weighting: AreaWeighting,
    /// Preset region names.
    pub regions: Vec<String>,
    pub custom_regions: Vec<CustomRegion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSection {
    /// Integer upscaling factor per grid cell.
    pub scale: u32,
    /// `png` or `ppm`.
    pub format: String,
    /// Variables drawn by `run`, each for the first test year.
    pub variables: Vec<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            out: PathBuf::from("out"),
            grid: GridSection::default(),
            synth: SynthSection::default(),
            basis: BasisSection::default(),
            network: NetworkSection::default(),
            training: TrainingSection::default(),
            years: YearsSection::default(),
            fluct: FluctSection::default(),
            render: RenderSection::default(),
        }
    }
}

impl Default for GridSection {
    fn default() -> Self {
        let s = GridSpec::sahara_default();
        GridSection {
            lat_min: s.lat_min,
            lat_max: s.lat_max,
            lon_min: s.lon_min,
            lon_max: s.lon_max,
            resolution: s.resolution,
            year_start: s.year_start,
            year_end: s.year_end,
            format: "binary".into(),
        }
    }
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            precip_gradient: 0.3,
            precip_base: 12.0,
            noise_sd: 1.0,
            temp_base: 32.0,
            temp_lapse: 0.3,
            seasonal_amp: 0.2,
        }
    }
}

impl Default for BasisSection {
    fn default() -> Self {
        BasisSection { spatial_side: 5, temporal_knots: 5, bandwidth_rule: BandwidthRule::MaxDistance, pr_clamp: None }
    }
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection { hidden: Vec::new(), dropout: 0.5 }
    }
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainingSection {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: AdamHyper::default().learning_rate,
            patience: t.early_stop_patience.unwrap_or(0),
            validation_fraction: t.validation_fraction,
            standardize: t.standardize,
        }
    }
}

impl Default for YearsSection {
    fn default() -> Self {
        YearsSection { train: [1960, 1970], test: [1971, 1989] }
    }
}

impl Default for FluctSection {
    fn default() -> Self {
        FluctSection {
            years: None,
            sd: SdKind::Population,
            weighting: AreaWeighting::Equal,
            regions: RegionMask::PRESETS.iter().map(|s| s.to_string()).collect(),
            custom_regions: Vec::new(),
        }
    }
}

impl Default for RenderSection {
    fn default() -> Self {
        RenderSection {
            scale: 2,
            format: "png".into(),
            variables: ["class", "prob_arid", "prob_semiarid", "prob_nonarid", "pr_winsorized", "cv", "level"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

impl PipelineConfig {
    /// Defaults overlaid with the file at `path`, if any.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(PipelineConfig::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| UsageError(format!("invalid config {}: {e}", path.display())))?;
        Ok(cfg)
    }

    /// Applies `ARIDPROB_SEED` and `ARIDPROB_OUT` from `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(v) = lookup(ENV_SEED) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| UsageError(format!("{ENV_SEED} must be an unsigned integer, got '{v}'")))?;
        }
        if let Some(v) = lookup(ENV_OUT) {
            self.out = PathBuf::from(v);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let spec = self.grid_spec()?;
        self.grid_format()?;
        let [a0, a1] = self.years.train;
        let [b0, b1] = self.years.test;
        if a1 < a0 || b1 < b0 {
            bail!(UsageError("year ranges must be written as [start, end] with start <= end".into()));
        }
        if a0 <= b1 && b0 <= a1 {
            bail!(UsageError(format!("train years {a0}..={a1} overlap test years {b0}..={b1}")));
        }
        for (name, [y0, y1]) in [("train", self.years.train), ("test", self.years.test)] {
            if !spec.contains_year(y0) || !spec.contains_year(y1) {
                bail!(UsageError(format!(
                    "{name} years {y0}..={y1} fall outside the grid years {}..={}",
                    spec.year_start, spec.year_end
                )));
            }
        }
        if let Some([y0, y1]) = self.fluct.years {
            if y1 < y0 {
                bail!(UsageError("fluct years must satisfy start <= end".into()));
            }
        }
        if self.basis.spatial_side == 0 || self.basis.temporal_knots == 0 {
            bail!(UsageError("basis sizes must be >= 1".into()));
        }
        if self.render.scale == 0 {
            bail!(UsageError("render scale must be >= 1".into()));
        }
        crate::render::ImageFormat::parse(&self.render.format)?;
        for v in &self.render.variables {
            crate::render::RenderVariable::parse(v)?;
        }
        self.regions()?;
        self.network_config(1 + self.basis.spatial_side.pow(2) + self.basis.temporal_knots)
            .validate()
            .map_err(|e| UsageError(e.to_string()))?;
        self.train_config().validate().map_err(|e| UsageError(e.to_string()))?;
        if !(self.training.learning_rate > 0.0) {
            bail!(UsageError("learning_rate must be > 0".into()));
        }
        Ok(())
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        let g = &self.grid;
        GridSpec::new((g.lat_min, g.lat_max), (g.lon_min, g.lon_max), g.resolution, (g.year_start, g.year_end))
            .map_err(|e| UsageError(format!("grid: {e}")).into())
    }

    pub fn grid_format(&self) -> Result<GridFormat> {
        self.grid.format.parse().map_err(|e: aridprob_core::Error| UsageError(e.to_string()).into())
    }

    pub fn synth_config(&self) -> Result<SynthConfig> {
        let s = &self.synth;
        Ok(SynthConfig {
            spec: self.grid_spec()?,
            seed: self.seed,
            precip_gradient: s.precip_gradient,
            precip_base: s.precip_base,
            noise_sd: s.noise_sd,
            temp_base: s.temp_base,
            temp_lapse: s.temp_lapse,
            seasonal_amp: s.seasonal_amp,
        })
    }

    pub fn network_config(&self, n_inputs: usize) -> NetworkConfig {
        let hidden =
            if self.network.hidden.is_empty() { vec![n_inputs, n_inputs] } else { self.network.hidden.clone() };
        let mut widths = vec![n_inputs];
        widths.extend(hidden);
        widths.push(NUM_CLASSES);
        NetworkConfig { layer_widths: widths, dropout_rate: self.network.dropout, seed: self.seed.wrapping_add(1) }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            shuffle_seed: self.seed.wrapping_add(2),
            early_stop_patience: (t.patience > 0).then_some(t.patience),
            validation_fraction: t.validation_fraction,
            standardize: t.standardize,
            n_covariates: aridprob_core::BasisConfig::N_COVARIATES,
        }
    }

    pub fn adam_hyper(&self) -> AdamHyper {
        AdamHyper { learning_rate: self.training.learning_rate, ..AdamHyper::default() }
    }

    pub fn pr_clamp(&self) -> Option<(f64, f64)> {
        self.basis.pr_clamp.map(|[lo, hi]| (lo, hi))
    }

    /// Years analysed by `fluct`.
    pub fn fluct_years(&self) -> [i32; 2] {
        self.fluct.years.unwrap_or(self.years.test)
    }

    pub fn regions(&self) -> Result<Vec<RegionMask>> {
        let mut out = Vec::new();
        for name in &self.fluct.regions {
            out.push(RegionMask::preset(name).ok_or_else(|| UsageError(format!("unknown region preset '{name}'")))?);
        }
        for r in &self.fluct.custom_regions {
            if !(r.lat[0] < r.lat[1] && r.lon[0] < r.lon[1]) {
                bail!(UsageError(format!("region '{}' needs min < max bounds", r.name)));
            }
            out.push(RegionMask::new(&r.name, (r.lat[0], r.lat[1]), (r.lon[0], r.lon[1])));
        }
        Ok(out)
    }

    pub fn ext(&self) -> &'static str {
        match self.grid_format() {
            Ok(GridFormat::Csv) => "csv",
            _ => "bin",
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn grid_path(&self) -> PathBuf {
        self.path(&format!("grid.{}", self.ext()))
    }

    pub fn labels_path(&self) -> PathBuf {
        self.path(&format!("labels.{}", self.ext()))
    }

    pub fn model_path(&self) -> PathBuf {
        self.path("model.ckpt")
    }

    pub fn predictions_path(&self) -> PathBuf {
        self.path(&format!("predictions.{}", self.ext()))
    }

    pub fn cv_path(&self) -> PathBuf {
        self.path(&format!("cv.{}", self.ext()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).context("serializing config")
    }
}
