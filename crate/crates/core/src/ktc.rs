//! Köppen–Trewartha dry-climate labeling.
//!
//! Each pixel-year is summarized by mean temperature `T` (°C), annual
//! precipitation total `P` (cm) and the winter share `P_W` (percent of
//! `P` falling in Oct–Mar of the same calendar year). Patton's threshold
//! `R = 2.3 T − 0.64 P_W + 41` then splits the dry climates.

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Layer, LayerStack, StGrid, MONTH_ANNUAL};

pub const WINTER_MONTHS: [u8; 6] = [1, 2, 3, 10, 11, 12];

/// `|R|` at or below this (cm) is treated as degenerate in `P/R`.
pub const PR_EPSILON: f64 = 1e-9;
/// Magnitude reported for `P/R` when `0 < |R| <= PR_EPSILON`.
pub const PR_SENTINEL: f64 = 1e12;

pub const VAR_LABEL: &str = "label";
pub const VAR_PR: &str = "pr";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum AridityClass {
    Arid = 1,
    SemiArid = 2,
    NonArid = 3,
}

impl AridityClass {
    pub const ALL: [AridityClass; 3] = [AridityClass::Arid, AridityClass::SemiArid, AridityClass::NonArid];

    /// External code 1/2/3.
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(AridityClass::Arid),
            2 => Ok(AridityClass::SemiArid),
            3 => Ok(AridityClass::NonArid),
            other => Err(Error::Schema(format!("invalid class code {other}"))),
        }
    }

    /// Internal 0-based index used at the loss head.
    pub fn index(self) -> usize {
        self as usize - 1
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }

    pub fn name(self) -> &'static str {
        match self {
            AridityClass::Arid => "arid",
            AridityClass::SemiArid => "semiarid",
            AridityClass::NonArid => "nonarid",
        }
    }
}

impl std::fmt::Display for AridityClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnualSummary {
    pub year: i32,
    pub t_mean: f64,
    pub p_total: f64,
    pub pw_pct: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PattonThreshold {
    pub r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AridityLabel {
    pub class: AridityClass,
    /// Raw `P/R`; `None` when `R` is exactly zero or for predicted labels.
    pub pr: Option<f64>,
}

/// Per-pixel labels for one year. `None` marks a missing pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRaster {
    pub spec: GridSpec,
    pub year: i32,
    pub cells: Vec<Option<AridityLabel>>,
}

impl LabelRaster {
    pub fn class_at(&self, idx: usize) -> Option<AridityClass> {
        self.cells[idx].map(|l| l.class)
    }

    pub fn n_present(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }
}

/// Annual summaries for every pixel; a pixel with any missing month is `None`.
pub fn aggregate_annual(grid: &StGrid, year: i32) -> Result<Vec<Option<AnnualSummary>>> {
    let spec = grid.spec();
    if !spec.contains_year(year) {
        return Err(Error::Coverage(format!("year {year} not in grid range {}..={}", spec.year_start, spec.year_end)));
    }
    let precip: Vec<_> = (1..=12u8).map(|m| grid.precip_at(year, m).expect("year checked")).collect();
    let temp: Vec<_> = (1..=12u8).map(|m| grid.temp_at(year, m).expect("year checked")).collect();
    let out = (0..spec.n_cells())
        .map(|idx| {
            let mut p_total = 0.0;
            let mut p_winter = 0.0;
            let mut t_sum = 0.0;
            for m in 0..12 {
                let p = precip[m].get(idx)?;
                let t = temp[m].get(idx)?;
                p_total += p;
                if WINTER_MONTHS.contains(&(m as u8 + 1)) {
                    p_winter += p;
                }
                t_sum += t;
            }
            let pw_pct = if p_total > 0.0 { 100.0 * p_winter / p_total } else { 0.0 };
            Some(AnnualSummary { year, t_mean: t_sum / 12.0, p_total, pw_pct })
        })
        .collect();
    Ok(out)
}

pub fn patton_threshold(summary: &AnnualSummary) -> PattonThreshold {
    PattonThreshold { r: 2.3 * summary.t_mean - 0.64 * summary.pw_pct + 41.0 }
}

/// Three-way dry-climate rule. Total for any `r`; `r <= 0` always gives `NonArid`.
pub fn classify(p: f64, r: f64) -> AridityClass {
    if p < r / 2.0 {
        AridityClass::Arid
    } else if p < r {
        AridityClass::SemiArid
    } else {
        AridityClass::NonArid
    }
}

pub fn pr_metric(p: f64, r: f64) -> Option<f64> {
    if r == 0.0 {
        None
    } else if r.abs() <= PR_EPSILON {
        Some(r.signum() * PR_SENTINEL)
    } else {
        Some(p / r)
    }
}

pub fn label_summary(summary: &AnnualSummary) -> AridityLabel {
    let r = patton_threshold(summary).r;
    AridityLabel { class: classify(summary.p_total, r), pr: pr_metric(summary.p_total, r) }
}

pub fn label_grid(grid: &StGrid, years: RangeInclusive<i32>) -> Result<Vec<LabelRaster>> {
    years
        .map(|year| {
            let cells = aggregate_annual(grid, year)?.into_iter().map(|s| s.map(|s| label_summary(&s))).collect();
            Ok(LabelRaster { spec: grid.spec().clone(), year, cells })
        })
        .collect()
}

/// Years in which at least one pixel is missing, paired with the missing count.
pub fn years_with_missing(rasters: &[LabelRaster]) -> Vec<(i32, usize)> {
    rasters
        .iter()
        .filter_map(|r| {
            let missing = r.cells.len() - r.n_present();
            (missing > 0).then_some((r.year, missing))
        })
        .collect()
}

/// Exports labels as annual `label` (1/2/3) and `pr` layers.
pub fn labels_to_layers(rasters: &[LabelRaster]) -> Result<LayerStack> {
    let first = rasters.first().ok_or_else(|| Error::Usage("no label rasters".into()))?;
    let y0 = rasters.iter().map(|r| r.year).min().unwrap();
    let y1 = rasters.iter().map(|r| r.year).max().unwrap();
    let spec = first.spec.with_years(y0, y1)?;
    let mut layers = Vec::with_capacity(rasters.len() * 2);
    for r in rasters {
        if !r.spec.same_space(&spec) {
            return Err(Error::Schema("label rasters do not share one grid".into()));
        }
        layers.push(Layer {
            variable: VAR_LABEL.into(),
            year: r.year,
            month: MONTH_ANNUAL,
            values: r.cells.iter().map(|c| c.map_or(f64::NAN, |l| l.class.code() as f64)).collect(),
        });
        layers.push(Layer {
            variable: VAR_PR.into(),
            year: r.year,
            month: MONTH_ANNUAL,
            values: r.cells.iter().map(|c| c.and_then(|l| l.pr).unwrap_or(f64::NAN)).collect(),
        });
    }
    LayerStack::new(spec, layers)
}

/// Reads class rasters from annual layers named `class_var` (e.g. `label`
/// or `class`), attaching `pr` values when that variable is present.
pub fn labels_from_layers(stack: &LayerStack, class_var: &str) -> Result<Vec<LabelRaster>> {
    let mut out = Vec::new();
    for layer in stack.layers.iter().filter(|l| l.variable == class_var) {
        if layer.month != MONTH_ANNUAL {
            return Err(Error::Schema(format!(
                "{class_var} layer for {} has month {}, expected annual",
                layer.year, layer.month
            )));
        }
        let pr = stack.find(VAR_PR, layer.year, MONTH_ANNUAL);
        let cells = layer
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                if v.is_nan() {
                    return Ok(None);
                }
                if v.fract() != 0.0 || !(1.0..=3.0).contains(v) {
                    return Err(Error::Schema(format!("invalid class value {v} in {}", layer.year)));
                }
                let class = AridityClass::from_code(*v as u8)?;
                let pr = pr.and_then(|p| {
                    let x = p.values[i];
                    (!x.is_nan()).then_some(x)
                });
                Ok(Some(AridityLabel { class, pr }))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(LabelRaster { spec: stack.spec.clone(), year: layer.year, cells });
    }
    if out.is_empty() {
        return Err(Error::Schema(format!("no '{class_var}' layers found")));
    }
    Ok(out)
}
