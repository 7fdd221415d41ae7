//! Temporal fluctuation of predicted class probabilities: dominant class,
//! coefficient of variation, five-level binning, area shares and regional
//! averages.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::argmax_classify;
use crate::grid::{GridSpec, Layer, LayerStack, MONTH_ANNUAL};
use crate::ktc::AridityClass;
use crate::nn::ProbTriple;

pub const VAR_PROB: [&str; 3] = ["prob_arid", "prob_semiarid", "prob_nonarid"];
pub const VAR_CLASS: &str = "class";
pub const VAR_CV: &str = "cv";
pub const VAR_DOMINANT: &str = "dominant";
pub const VAR_LEVEL: &str = "level";

pub const PROB_SUM_TOLERANCE: f64 = 1e-12;

/// Per-year, per-pixel probability triples. `None` marks a missing pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbCube {
    spec: GridSpec,
    probs: Vec<Vec<Option<ProbTriple>>>,
}

impl ProbCube {
    /// `probs[y][cell]` for each year of `spec`, in order.
    pub fn new(spec: GridSpec, probs: Vec<Vec<Option<ProbTriple>>>) -> Result<Self> {
        spec.validate()?;
        if probs.len() != spec.n_years() {
            return Err(Error::Schema(format!("{} yearly planes for {} years", probs.len(), spec.n_years())));
        }
        for (y, plane) in probs.iter().enumerate() {
            if plane.len() != spec.n_cells() {
                return Err(Error::Schema(format!("year plane {y} has {} cells", plane.len())));
            }
            for p in plane.iter().flatten() {
                if p.0.iter().any(|v| !(0.0..=1.0).contains(v)) || (p.sum() - 1.0).abs() > PROB_SUM_TOLERANCE {
                    return Err(Error::Domain(format!("invalid probability triple {:?}", p.0)));
                }
            }
        }
        Ok(ProbCube { spec, probs })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn year_plane(&self, year: i32) -> Option<&[Option<ProbTriple>]> {
        self.spec.contains_year(year).then(|| self.probs[(year - self.spec.year_start) as usize].as_slice())
    }

    /// Restricts to a sub-range of years.
    pub fn slice_years(&self, year_start: i32, year_end: i32) -> Result<ProbCube> {
        if !self.spec.contains_year(year_start) || !self.spec.contains_year(year_end) || year_end < year_start {
            return Err(Error::Coverage(format!(
                "years {year_start}..={year_end} not within {}..={}",
                self.spec.year_start, self.spec.year_end
            )));
        }
        let a = (year_start - self.spec.year_start) as usize;
        let b = (year_end - self.spec.year_start) as usize;
        ProbCube::new(self.spec.with_years(year_start, year_end)?, self.probs[a..=b].to_vec())
    }

    pub fn to_layers(&self) -> Result<LayerStack> {
        let mut layers = Vec::with_capacity(self.probs.len() * 4);
        for (year, plane) in self.spec.years().zip(&self.probs) {
            for (k, name) in VAR_PROB.iter().enumerate() {
                layers.push(Layer {
                    variable: name.to_string(),
                    year,
                    month: MONTH_ANNUAL,
                    values: plane.iter().map(|p| p.map_or(f64::NAN, |t| t.0[k])).collect(),
                });
            }
            layers.push(Layer {
                variable: VAR_CLASS.into(),
                year,
                month: MONTH_ANNUAL,
                values: plane.iter().map(|p| p.map_or(f64::NAN, |t| argmax_classify(&t).code() as f64)).collect(),
            });
        }
        LayerStack::new(self.spec.clone(), layers)
    }

    /// Reads `prob_*` layers; triples perturbed by text rounding are renormalized.
    pub fn from_layers(stack: &LayerStack) -> Result<Self> {
        let years = stack.years_of(VAR_PROB[0]);
        let (Some(&y0), Some(&y1)) = (years.first(), years.last()) else {
            return Err(Error::Schema("no probability layers found".into()));
        };
        let spec = stack.spec.with_years(y0, y1)?;
        let mut probs = Vec::with_capacity(spec.n_years());
        for year in spec.years() {
            let planes: Vec<&Layer> = VAR_PROB
                .iter()
                .map(|v| {
                    stack
                        .find(v, year, MONTH_ANNUAL)
                        .ok_or_else(|| Error::Schema(format!("missing {v} layer for {year}")))
                })
                .collect::<Result<_>>()?;
            let plane = (0..spec.n_cells())
                .map(|i| {
                    let raw = [planes[0].values[i], planes[1].values[i], planes[2].values[i]];
                    if raw.iter().any(|v| v.is_nan()) {
                        return None;
                    }
                    let sum: f64 = raw.iter().sum();
                    if (sum - 1.0).abs() > PROB_SUM_TOLERANCE && sum > 0.0 {
                        Some(ProbTriple(raw.map(|v| v / sum)))
                    } else {
                        Some(ProbTriple(raw))
                    }
                })
                .collect();
            probs.push(plane);
        }
        ProbCube::new(spec, probs)
    }
}

/// Per-pixel mean triple over the years where the pixel is present.
pub fn mean_probs(cube: &ProbCube) -> Vec<Option<ProbTriple>> {
    (0..cube.spec.n_cells())
        .map(|i| {
            let mut sum = [0.0; 3];
            let mut n = 0usize;
            for p in cube.probs.iter().filter_map(|plane| plane[i]) {
                sum.iter_mut().zip(p.0).for_each(|(s, v)| *s += v);
                n += 1;
            }
            (n > 0).then(|| ProbTriple(sum.map(|s| s / n as f64)))
        })
        .collect()
}

pub fn dominant_class(mean: &ProbTriple) -> AridityClass {
    argmax_classify(mean)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SdKind {
    /// Divide by `n`.
    #[default]
    Population,
    /// Divide by `n − 1`.
    Sample,
}

/// Standard deviation over mean; `None` for an empty series, a non-positive
/// mean, or a single point under [`SdKind::Sample`].
pub fn cv(series: &[f64], kind: SdKind) -> Option<f64> {
    let n = series.len();
    if n == 0 {
        return None;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    if !(mean > 0.0) {
        return None;
    }
    if series.iter().all(|&v| v == series[0]) && !(kind == SdKind::Sample && n < 2) {
        return Some(0.0);
    }
    let ss: f64 = series.iter().map(|v| (v - mean) * (v - mean)).sum();
    let denom = match kind {
        SdKind::Population => n as f64,
        SdKind::Sample if n >= 2 => (n - 1) as f64,
        SdKind::Sample => return None,
    };
    Some((ss / denom).sqrt() / mean)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum FluctuationLevel {
    VeryLow = 1,
    Low = 2,
    Moderate = 3,
    High = 4,
    VeryHigh = 5,
}

impl FluctuationLevel {
    pub const ALL: [FluctuationLevel; 5] = [
        FluctuationLevel::VeryLow,
        FluctuationLevel::Low,
        FluctuationLevel::Moderate,
        FluctuationLevel::High,
        FluctuationLevel::VeryHigh,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            FluctuationLevel::VeryLow => "very_low",
            FluctuationLevel::Low => "low",
            FluctuationLevel::Moderate => "moderate",
            FluctuationLevel::High => "high",
            FluctuationLevel::VeryHigh => "very_high",
        }
    }

    pub fn range_label(self) -> &'static str {
        match self {
            FluctuationLevel::VeryLow => "CV <= 0.1",
            FluctuationLevel::Low => "0.1 < CV <= 0.2",
            FluctuationLevel::Moderate => "0.2 < CV <= 0.3",
            FluctuationLevel::High => "0.3 < CV <= 0.4",
            FluctuationLevel::VeryHigh => "CV > 0.4",
        }
    }
}

/// Bins with closed upper edges at 0.1, 0.2, 0.3 and 0.4.
pub fn bin_cv(value: f64) -> FluctuationLevel {
    if value <= 0.1 {
        FluctuationLevel::VeryLow
    } else if value <= 0.2 {
        FluctuationLevel::Low
    } else if value <= 0.3 {
        FluctuationLevel::Moderate
    } else if value <= 0.4 {
        FluctuationLevel::High
    } else {
        FluctuationLevel::VeryHigh
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvCell {
    pub dominant: AridityClass,
    pub cv: Option<f64>,
    pub level: Option<FluctuationLevel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvMap {
    /// Year range the statistics were computed over.
    pub spec: GridSpec,
    pub cells: Vec<Option<CvCell>>,
}

impl CvMap {
    pub fn n_defined(&self) -> usize {
        self.cells.iter().flatten().filter(|c| c.cv.is_some()).count()
    }

    /// Annual `cv`, `dominant` and `level` layers stamped with the first year.
    pub fn to_layers(&self) -> Result<LayerStack> {
        let year = self.spec.year_start;
        let plane = |f: &dyn Fn(&CvCell) -> Option<f64>| -> Vec<f64> {
            self.cells.iter().map(|c| c.as_ref().and_then(f).unwrap_or(f64::NAN)).collect()
        };
        let layers = vec![
            Layer { variable: VAR_CV.into(), year, month: MONTH_ANNUAL, values: plane(&|c| c.cv) },
            Layer {
                variable: VAR_DOMINANT.into(),
                year,
                month: MONTH_ANNUAL,
                values: plane(&|c| Some(c.dominant.code() as f64)),
            },
            Layer {
                variable: VAR_LEVEL.into(),
                year,
                month: MONTH_ANNUAL,
                values: plane(&|c| c.level.map(|l| l.code() as f64)),
            },
        ];
        LayerStack::new(self.spec.clone(), layers)
    }
}

/// Dominant class from the time-mean, then CV of that class's probability series.
pub fn cv_map(cube: &ProbCube, kind: SdKind) -> CvMap {
    let means = mean_probs(cube);
    let cells = means
        .iter()
        .enumerate()
        .map(|(i, mean)| {
            let mean = (*mean)?;
            let dominant = dominant_class(&mean);
            let series: Vec<f64> = cube.probs.iter().filter_map(|plane| plane[i]).map(|p| p.get(dominant)).collect();
            let cv = cv(&series, kind);
            Some(CvCell { dominant, cv, level: cv.map(bin_cv) })
        })
        .collect();
    CvMap { spec: cube.spec.clone(), cells }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AreaWeighting {
    /// Every cell counts once.
    #[default]
    Equal,
    /// Cells weighted by the cosine of their center latitude.
    CosLat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaProportions {
    pub counts: [usize; 5],
    /// Percent of total weight per level, in level order.
    pub percent: [f64; 5],
}

pub fn area_proportions(map: &CvMap, weighting: AreaWeighting) -> Result<AreaProportions> {
    let mut counts = [0usize; 5];
    let mut weights = [0.0f64; 5];
    for (i, cell) in map.cells.iter().enumerate() {
        let Some(level) = cell.and_then(|c| c.level) else { continue };
        let k = level.code() as usize - 1;
        counts[k] += 1;
        weights[k] += match weighting {
            AreaWeighting::Equal => 1.0,
            AreaWeighting::CosLat => {
                let (_, lat) = map.spec.cell_center(i / map.spec.n_lon, i % map.spec.n_lon);
                lat.to_radians().cos()
            }
        };
    }
    let total: f64 = weights.iter().sum();
    if counts.iter().sum::<usize>() == 0 || !(total > 0.0) {
        return Err(Error::Usage("no pixels with a defined CV".into()));
    }
    Ok(AreaProportions { counts, percent: weights.map(|w| 100.0 * w / total) })
}

/// Axis-aligned rectangle standing in for a region outline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMask {
    pub name: String,
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl RegionMask {
    pub fn new(name: &str, lat: (f64, f64), lon: (f64, f64)) -> Self {
        RegionMask { name: name.into(), lat_min: lat.0, lat_max: lat.1, lon_min: lon.0, lon_max: lon.1 }
    }

    /// Approximate bounding boxes: ethiopia, morocco, south_sudan, iran.
    pub fn preset(name: &str) -> Option<Self> {
        let (lat, lon) = match name {
            "ethiopia" => ((3.4, 14.9), (33.0, 48.0)),
            "morocco" => ((27.6, 35.9), (-13.2, -1.0)),
            "south_sudan" => ((3.5, 12.2), (24.1, 35.9)),
            "iran" => ((25.1, 39.8), (44.0, 63.3)),
            _ => return None,
        };
        Some(RegionMask::new(name, lat, lon))
    }

    pub const PRESETS: [&'static str; 4] = ["ethiopia", "morocco", "south_sudan", "iran"];

    /// Cells whose centers fall inside the rectangle (edges inclusive).
    pub fn cells(&self, spec: &GridSpec) -> Vec<usize> {
        let mut out = Vec::new();
        for row in 0..spec.n_lat {
            for col in 0..spec.n_lon {
                let (lon, lat) = spec.cell_center(row, col);
                if (self.lat_min..=self.lat_max).contains(&lat) && (self.lon_min..=self.lon_max).contains(&lon) {
                    out.push(spec.index(row, col));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassRatios {
    pub nonarid_to_semiarid: Option<f64>,
    pub nonarid_to_arid: Option<f64>,
    pub semiarid_to_arid: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSummary {
    pub name: String,
    pub n_cells: usize,
    /// Spatial mean per year; `None` when every masked cell is missing.
    pub yearly: Vec<(i32, Option<ProbTriple>)>,
    /// Mean over every present pixel-year.
    pub overall: ProbTriple,
    pub ratios: ClassRatios,
}

pub fn region_summary(cube: &ProbCube, mask: &RegionMask) -> Result<RegionSummary> {
    let cells = mask.cells(&cube.spec);
    if cells.is_empty() {
        return Err(Error::Usage(format!("region '{}' does not intersect the grid", mask.name)));
    }
    let mut total = [0.0; 3];
    let mut n_total = 0usize;
    let yearly = cube
        .spec
        .years()
        .zip(&cube.probs)
        .map(|(year, plane)| {
            let mut sum = [0.0; 3];
            let mut n = 0usize;
            for p in cells.iter().filter_map(|&i| plane[i]) {
                sum.iter_mut().zip(p.0).for_each(|(s, v)| *s += v);
                total.iter_mut().zip(p.0).for_each(|(s, v)| *s += v);
                n += 1;
            }
            n_total += n;
            (year, (n > 0).then(|| ProbTriple(sum.map(|s| s / n as f64))))
        })
        .collect();
    if n_total == 0 {
        return Err(Error::Usage(format!("region '{}' has no present pixels", mask.name)));
    }
    let overall = ProbTriple(total.map(|s| s / n_total as f64));
    let div = |a: f64, b: f64| (b > 0.0).then(|| a / b);
    let ratios = ClassRatios {
        nonarid_to_semiarid: div(overall.p_nonarid(), overall.p_semiarid()),
        nonarid_to_arid: div(overall.p_nonarid(), overall.p_arid()),
        semiarid_to_arid: div(overall.p_semiarid(), overall.p_arid()),
    };
    Ok(RegionSummary { name: mask.name.clone(), n_cells: cells.len(), yearly, overall, ratios })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

/// `region,year,p_arid,p_semiarid,p_nonarid`; years without data are skipped.
pub fn write_region_csv(summaries: &[RegionSummary], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let io = |e| Error::io(path, e);
    writeln!(w, "region,year,p_arid,p_semiarid,p_nonarid").map_err(io)?;
    for s in summaries {
        for (year, p) in &s.yearly {
            if let Some(p) = p {
                writeln!(w, "{},{year},{},{},{}", s.name, p.0[0], p.0[1], p.0[2]).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

/// Overall means and class ratios, one row per region.
pub fn write_region_overall_csv(summaries: &[RegionSummary], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let io = |e| Error::io(path, e);
    writeln!(w, "region,n_cells,p_arid,p_semiarid,p_nonarid,nonarid_to_semiarid,nonarid_to_arid,semiarid_to_arid")
        .map_err(io)?;
    for s in summaries {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            s.name,
            s.n_cells,
            s.overall.0[0],
            s.overall.0[1],
            s.overall.0[2],
            opt(s.ratios.nonarid_to_semiarid),
            opt(s.ratios.nonarid_to_arid),
            opt(s.ratios.semiarid_to_arid)
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// `level,cv_range,count,percent`.
pub fn write_proportions_csv(props: &AreaProportions, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let io = |e| Error::io(path, e);
    writeln!(w, "level,cv_range,count,percent").map_err(io)?;
    for (k, level) in FluctuationLevel::ALL.iter().enumerate() {
        writeln!(w, "{},{},{},{:.2}", level.name(), level.range_label(), props.counts[k], props.percent[k])
            .map_err(io)?;
    }
    w.flush().map_err(io)
}
