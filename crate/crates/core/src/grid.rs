//! Spatio-temporal grid model, unit conversions, the grid exchange formats
//! and the synthetic data generator.
//!
//! Orientation: row 0 is the southernmost latitude band and column 0 the
//! westernmost longitude band. Values are stored row-major, so cell
//! `(row, col)` lives at `row * n_lon + col`. Missing cells are `NaN`.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: f64 = 86_400.0;
/// 1 kg of water over 1 m² is 1 mm deep.
pub const CM_PER_KG_M2: f64 = 0.1;
pub const KELVIN_OFFSET: f64 = 273.15;

/// Month code used for layers that summarize a whole year.
pub const MONTH_ANNUAL: u8 = 0;

pub const BINARY_MAGIC: &[u8; 8] = b"ARIDGRID";
pub const BINARY_VERSION: u8 = 1;
const BINARY_HEADER_LEN: usize = 16;

pub const CSV_HEADER: &str = "variable,year,month,lat_index,lon_index,value";

pub const VAR_PRECIP: &str = "precip";
pub const VAR_TEMP: &str = "temp";

/// Peak-to-mean temperature swing (°C) at `seasonal_amp = 1` in synthetic data.
const SYNTH_TEMP_SWING: f64 = 10.0;

/// Regular lat/lon grid plus the calendar years it covers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub resolution: f64,
    pub n_lat: usize,
    pub n_lon: usize,
    pub year_start: i32,
    pub year_end: i32,
}

impl GridSpec {
    pub fn new(lat: (f64, f64), lon: (f64, f64), resolution: f64, years: (i32, i32)) -> Result<Self> {
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(Error::Domain(format!("resolution must be > 0, got {resolution}")));
        }
        let n_lat = ((lat.1 - lat.0) / resolution).round();
        let n_lon = ((lon.1 - lon.0) / resolution).round();
        let spec = GridSpec {
            lat_min: lat.0,
            lat_max: lat.1,
            lon_min: lon.0,
            lon_max: lon.1,
            resolution,
            n_lat: if n_lat.is_finite() && n_lat > 0.0 { n_lat as usize } else { 0 },
            n_lon: if n_lon.is_finite() && n_lon > 0.0 { n_lon as usize } else { 0 },
            year_start: years.0,
            year_end: years.1,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// 0°N–40°N, 20°W–60°E at 0.25°, 1960–1989.
    pub fn sahara_default() -> Self {
        GridSpec::new((0.0, 40.0), (-20.0, 60.0), 0.25, (1960, 1989)).expect("default grid is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let finite =
            [self.lat_min, self.lat_max, self.lon_min, self.lon_max, self.resolution].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Domain("grid bounds must be finite".into()));
        }
        if self.lat_max <= self.lat_min || self.lon_max <= self.lon_min {
            return Err(Error::Domain(format!(
                "degenerate domain lat [{}, {}] lon [{}, {}]",
                self.lat_min, self.lat_max, self.lon_min, self.lon_max
            )));
        }
        if self.resolution <= 0.0 {
            return Err(Error::Domain("resolution must be > 0".into()));
        }
        let want_lat = ((self.lat_max - self.lat_min) / self.resolution).round() as usize;
        let want_lon = ((self.lon_max - self.lon_min) / self.resolution).round() as usize;
        if self.n_lat != want_lat || self.n_lon != want_lon || self.n_lat == 0 || self.n_lon == 0 {
            return Err(Error::Domain(format!(
                "cell counts {}x{} inconsistent with bounds/resolution (expected {}x{}, both >= 1)",
                self.n_lat, self.n_lon, want_lat, want_lon
            )));
        }
        if self.year_end < self.year_start {
            return Err(Error::Domain(format!("year_end {} < year_start {}", self.year_end, self.year_start)));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.n_lat * self.n_lon
    }

    pub fn n_years(&self) -> usize {
        (self.year_end - self.year_start + 1) as usize
    }

    pub fn years(&self) -> std::ops::RangeInclusive<i32> {
        self.year_start..=self.year_end
    }

    pub fn contains_year(&self, year: i32) -> bool {
        self.years().contains(&year)
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.n_lon + col
    }

    /// `(lon, lat)` of the center of cell `(row, col)`.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (self.lon_min + (col as f64 + 0.5) * self.resolution, self.lat_min + (row as f64 + 0.5) * self.resolution)
    }

    /// Same spatial layout, different year range.
    pub fn with_years(&self, year_start: i32, year_end: i32) -> Result<GridSpec> {
        let spec = GridSpec { year_start, year_end, ..self.clone() };
        spec.validate()?;
        Ok(spec)
    }

    /// True when both grids share bounds, resolution and cell counts.
    pub fn same_space(&self, other: &GridSpec) -> bool {
        self.lat_min == other.lat_min
            && self.lat_max == other.lat_max
            && self.lon_min == other.lon_min
            && self.lon_max == other.lon_max
            && self.resolution == other.resolution
            && self.n_lat == other.n_lat
            && self.n_lon == other.n_lon
    }
}

/// One month of one variable over the whole grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlyField {
    pub year: i32,
    pub month: u8,
    /// Row-major, `NaN` = missing.
    pub values: Vec<f64>,
}

impl MonthlyField {
    pub fn get(&self, idx: usize) -> Option<f64> {
        let v = self.values[idx];
        if v.is_nan() {
            None
        } else {
            Some(v)
        }
    }

    pub fn is_missing(&self, idx: usize) -> bool {
        self.values[idx].is_nan()
    }
}

/// Monthly precipitation (cm) and temperature (°C) over a grid and year range.
#[derive(Debug, Clone, PartialEq)]
pub struct StGrid {
    spec: GridSpec,
    precip: Vec<MonthlyField>,
    temp: Vec<MonthlyField>,
}

impl StGrid {
    /// Validates ordering, dimensions and precipitation sign.
    pub fn new(spec: GridSpec, precip: Vec<MonthlyField>, temp: Vec<MonthlyField>) -> Result<Self> {
        spec.validate()?;
        check_series(&spec, &precip, VAR_PRECIP)?;
        check_series(&spec, &temp, VAR_TEMP)?;
        for f in &precip {
            if let Some(v) = f.values.iter().find(|v| !v.is_nan() && (*v < &0.0 || v.is_infinite())) {
                return Err(Error::Schema(format!(
                    "precipitation {v} in {}-{:02} is negative or infinite",
                    f.year, f.month
                )));
            }
        }
        for f in &temp {
            if f.values.iter().any(|v| v.is_infinite()) {
                return Err(Error::Schema(format!("temperature in {}-{:02} is infinite", f.year, f.month)));
            }
        }
        Ok(StGrid { spec, precip, temp })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn precip(&self) -> &[MonthlyField] {
        &self.precip
    }

    pub fn temp(&self) -> &[MonthlyField] {
        &self.temp
    }

    fn slot(&self, year: i32, month: u8) -> Option<usize> {
        if !self.spec.contains_year(year) || !(1..=12).contains(&month) {
            return None;
        }
        Some((year - self.spec.year_start) as usize * 12 + (month as usize - 1))
    }

    pub fn precip_at(&self, year: i32, month: u8) -> Option<&MonthlyField> {
        self.slot(year, month).map(|i| &self.precip[i])
    }

    pub fn temp_at(&self, year: i32, month: u8) -> Option<&MonthlyField> {
        self.slot(year, month).map(|i| &self.temp[i])
    }

    pub fn to_layers(&self) -> LayerStack {
        let mut layers = Vec::with_capacity(self.precip.len() * 2);
        for (name, series) in [(VAR_PRECIP, &self.precip), (VAR_TEMP, &self.temp)] {
            for f in series {
                layers.push(Layer {
                    variable: name.to_string(),
                    year: f.year,
                    month: f.month,
                    values: f.values.clone(),
                });
            }
        }
        LayerStack::new(self.spec.clone(), layers).expect("valid grid yields valid layers")
    }

    /// Builds a grid from `precip`/`temp` layers; absent months become all-missing fields.
    pub fn from_layers(stack: LayerStack) -> Result<Self> {
        if stack.layers.is_empty() {
            return Err(Error::Schema("no records".into()));
        }
        let spec = stack.spec;
        let n = spec.n_cells();
        let mut slots: BTreeMap<(String, i32, u8), Vec<f64>> = BTreeMap::new();
        for layer in stack.layers {
            if layer.variable != VAR_PRECIP && layer.variable != VAR_TEMP {
                return Err(Error::Schema(format!("unexpected variable '{}' in climate grid", layer.variable)));
            }
            if !(1..=12).contains(&layer.month) {
                return Err(Error::Schema(format!(
                    "climate grid layer {} {} has month {}",
                    layer.variable, layer.year, layer.month
                )));
            }
            slots.insert((layer.variable, layer.year, layer.month), layer.values);
        }
        let mut build = |name: &str| -> Vec<MonthlyField> {
            let mut out = Vec::with_capacity(spec.n_years() * 12);
            for year in spec.years() {
                for month in 1..=12u8 {
                    let values = slots.remove(&(name.to_string(), year, month)).unwrap_or_else(|| vec![f64::NAN; n]);
                    out.push(MonthlyField { year, month, values });
                }
            }
            out
        };
        let precip = build(VAR_PRECIP);
        let temp = build(VAR_TEMP);
        StGrid::new(spec, precip, temp)
    }
}

fn check_series(spec: &GridSpec, fields: &[MonthlyField], name: &str) -> Result<()> {
    let expected = spec.n_years() * 12;
    if fields.len() != expected {
        return Err(Error::Schema(format!("{name}: expected {expected} monthly fields, found {}", fields.len())));
    }
    let mut i = 0;
    for year in spec.years() {
        for month in 1..=12u8 {
            let f = &fields[i];
            if f.year != year || f.month != month {
                return Err(Error::Schema(format!(
                    "{name}: field {i} is {}-{:02}, expected {year}-{month:02}",
                    f.year, f.month
                )));
            }
            if f.values.len() != spec.n_cells() {
                return Err(Error::Schema(format!(
                    "{name}: {year}-{month:02} has {} cells, grid has {}",
                    f.values.len(),
                    spec.n_cells()
                )));
            }
            i += 1;
        }
    }
    Ok(())
}

pub fn is_leap_year(year: i32) -> bool {
    (year % 4 == 0 && year % 100 != 0) || year % 400 == 0
}

pub fn days_in_month(year: i32, month: u8) -> Result<u32> {
    Ok(match month {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        2 if is_leap_year(year) => 29,
        2 => 28,
        _ => return Err(Error::Domain(format!("month {month} outside 1..=12"))),
    })
}

/// Monthly-mean precipitation rate (kg m⁻² s⁻¹) to monthly depth (cm).
pub fn convert_precip_rate_to_cm(rate: f64, days_in_month: u32) -> Result<f64> {
    if !(rate >= 0.0) || !rate.is_finite() {
        return Err(Error::Domain(format!("precipitation rate must be finite and >= 0, got {rate}")));
    }
    if !(28..=31).contains(&days_in_month) {
        return Err(Error::Domain(format!("days_in_month must be 28..=31, got {days_in_month}")));
    }
    Ok(rate * SECONDS_PER_DAY * days_in_month as f64 * CM_PER_KG_M2)
}

pub fn convert_kelvin_to_celsius(t: f64) -> Result<f64> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("temperature must be finite and >= 0 K, got {t}")));
    }
    Ok(t - KELVIN_OFFSET)
}

/// Clamps every value into `[lo, hi]`; `NaN` (missing) passes through.
pub fn winsorize(values: &[f64], lo: f64, hi: f64) -> Result<Vec<f64>> {
    if !(lo < hi) {
        return Err(Error::Domain(format!("winsorize bounds need lo < hi, got [{lo}, {hi}]")));
    }
    Ok(values.iter().map(|v| if v.is_nan() { *v } else { v.clamp(lo, hi) }).collect())
}

/// Parameters of the synthetic latitude-gradient climate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub spec: GridSpec,
    pub seed: u64,
    /// Monthly precipitation lost per degree of latitude (cm/°).
    pub precip_gradient: f64,
    /// Monthly precipitation at the equator (cm).
    pub precip_base: f64,
    /// Standard deviation of monthly precipitation noise (cm).
    pub noise_sd: f64,
    pub temp_base: f64,
    pub temp_lapse: f64,
    /// Relative seasonal amplitude, peaking in January.
    pub seasonal_amp: f64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let params =
            [self.precip_gradient, self.precip_base, self.noise_sd, self.temp_base, self.temp_lapse, self.seasonal_amp];
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("synthetic parameters must be finite".into()));
        }
        if self.noise_sd < 0.0 {
            return Err(Error::Domain(format!("noise_sd must be >= 0, got {}", self.noise_sd)));
        }
        if self.precip_base < 0.0 {
            return Err(Error::Domain(format!("precip_base must be >= 0, got {}", self.precip_base)));
        }
        Ok(())
    }
}

/// Deterministic synthetic grid. Cells whose latitude trend reaches zero
/// stay exactly dry; elsewhere noise is added and the result clipped at 0.
pub fn synth_generate(cfg: &SynthConfig) -> Result<StGrid> {
    cfg.validate()?;
    let spec = &cfg.spec;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| Error::Domain(format!("noise distribution: {e}")))?;
    let mut precip = Vec::with_capacity(spec.n_years() * 12);
    let mut temp = Vec::with_capacity(spec.n_years() * 12);
    for year in spec.years() {
        for month in 1..=12u8 {
            let phase = (2.0 * std::f64::consts::PI * (month as f64 - 1.0) / 12.0).cos();
            let mut p = Vec::with_capacity(spec.n_cells());
            let mut t = Vec::with_capacity(spec.n_cells());
            for row in 0..spec.n_lat {
                for col in 0..spec.n_lon {
                    let (_, lat) = spec.cell_center(row, col);
                    let trend = (cfg.precip_base - cfg.precip_gradient * lat).max(0.0);
                    // Always draw so the noise stream does not depend on the trend.
                    let eps = noise.sample(&mut rng);
                    let value =
                        if trend == 0.0 { 0.0 } else { (trend * (1.0 + cfg.seasonal_amp * phase) + eps).max(0.0) };
                    p.push(value);
                    t.push(cfg.temp_base - cfg.temp_lapse * lat - cfg.seasonal_amp * SYNTH_TEMP_SWING * phase);
                }
            }
            precip.push(MonthlyField { year, month, values: p });
            temp.push(MonthlyField { year, month, values: t });
        }
    }
    StGrid::new(spec.clone(), precip, temp)
}

/// One named plane of cell values.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub variable: String,
    pub year: i32,
    /// 1–12, or [`MONTH_ANNUAL`] for yearly quantities.
    pub month: u8,
    pub values: Vec<f64>,
}

/// A set of layers sharing one grid, kept in `(variable, year, month)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    pub spec: GridSpec,
    pub layers: Vec<Layer>,
}

impl LayerStack {
    pub fn new(spec: GridSpec, mut layers: Vec<Layer>) -> Result<Self> {
        spec.validate()?;
        for l in &layers {
            validate_variable_name(&l.variable)?;
            if l.month > 12 {
                return Err(Error::Schema(format!("layer {} has month {}", l.variable, l.month)));
            }
            if l.values.len() != spec.n_cells() {
                return Err(Error::Schema(format!(
                    "layer {} {}-{} has {} cells, grid has {}",
                    l.variable,
                    l.year,
                    l.month,
                    l.values.len(),
                    spec.n_cells()
                )));
            }
        }
        layers.sort_by(|a, b| (&a.variable, a.year, a.month).cmp(&(&b.variable, b.year, b.month)));
        for w in layers.windows(2) {
            if (&w[0].variable, w[0].year, w[0].month) == (&w[1].variable, w[1].year, w[1].month) {
                return Err(Error::Schema(format!("duplicate layer {} {}-{}", w[0].variable, w[0].year, w[0].month)));
            }
        }
        Ok(LayerStack { spec, layers })
    }

    pub fn find(&self, variable: &str, year: i32, month: u8) -> Option<&Layer> {
        self.layers.iter().find(|l| l.variable == variable && l.year == year && l.month == month)
    }

    pub fn has_variable(&self, variable: &str) -> bool {
        self.layers.iter().any(|l| l.variable == variable)
    }

    pub fn years_of(&self, variable: &str) -> Vec<i32> {
        let mut ys: Vec<i32> = self.layers.iter().filter(|l| l.variable == variable).map(|l| l.year).collect();
        ys.dedup();
        ys
    }
}

fn validate_variable_name(name: &str) -> Result<()> {
    if name.is_empty() || name.len() > u16::MAX as usize || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
    {
        return Err(Error::Schema(format!("invalid variable name '{name}'")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridFormat {
    Csv,
    Binary,
}

impl std::str::FromStr for GridFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(GridFormat::Csv),
            "binary" | "bin" => Ok(GridFormat::Binary),
            other => Err(Error::Usage(format!("unknown grid format '{other}'"))),
        }
    }
}

pub fn save_grid(grid: &StGrid, path: &Path, format: GridFormat) -> Result<()> {
    write_layers(&grid.to_layers(), path, format)
}

pub fn load_grid_csv(path: &Path, spec: &GridSpec) -> Result<StGrid> {
    StGrid::from_layers(read_layers_csv(path, spec)?)
}

pub fn load_grid_binary(path: &Path) -> Result<StGrid> {
    StGrid::from_layers(read_layers_binary(path)?)
}

/// Loads a climate grid, detecting the format from the file header.
/// CSV files carry no grid description, so `spec` is required for them.
pub fn load_grid(path: &Path, spec: Option<&GridSpec>) -> Result<StGrid> {
    StGrid::from_layers(read_layers(path, spec)?)
}

pub fn write_layers(stack: &LayerStack, path: &Path, format: GridFormat) -> Result<()> {
    match format {
        GridFormat::Csv => write_layers_csv(stack, path),
        GridFormat::Binary => fs::write(path, encode_binary(stack)).map_err(|e| Error::io(path, e)),
    }
}

pub fn read_layers(path: &Path, spec: Option<&GridSpec>) -> Result<LayerStack> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(BINARY_MAGIC) {
        decode_binary(&bytes)
    } else {
        let spec =
            spec.ok_or_else(|| Error::Usage(format!("{} is CSV; a grid spec is required to read it", path.display())))?;
        let text =
            String::from_utf8(bytes).map_err(|_| Error::Parse { line: 0, msg: "file is not UTF-8 text".into() })?;
        parse_csv(&text, spec)
    }
}

pub fn read_layers_binary(path: &Path) -> Result<LayerStack> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_binary(&bytes)
}

pub fn read_layers_csv(path: &Path, spec: &GridSpec) -> Result<LayerStack> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, spec)
}

fn write_layers_csv(stack: &LayerStack, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{CSV_HEADER}").map_err(io)?;
    let n_lon = stack.spec.n_lon;
    for l in &stack.layers {
        for (idx, v) in l.values.iter().enumerate() {
            let (row, col) = (idx / n_lon, idx % n_lon);
            if v.is_nan() {
                writeln!(w, "{},{},{},{row},{col},", l.variable, l.year, l.month).map_err(io)?;
            } else {
                writeln!(w, "{},{},{},{row},{col},{v:.6e}", l.variable, l.year, l.month).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

fn parse_csv(text: &str, spec: &GridSpec) -> Result<LayerStack> {
    spec.validate()?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        Some((_, h)) if h.trim().is_empty() => return Err(Error::Schema("no records".into())),
        Some((_, h)) => {
            return Err(Error::Parse { line: 1, msg: format!("expected header '{CSV_HEADER}', found '{h}'") })
        }
        None => return Err(Error::Schema("no records".into())),
    }
    let n = spec.n_cells();
    let mut planes: BTreeMap<(String, i32, u8), Vec<f64>> = BTreeMap::new();
    let mut seen = HashSet::new();
    let mut records = 0usize;
    for (i, raw) in lines {
        let line = i + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { line, msg };
        let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
        if fields.len() != 6 {
            return Err(err(format!("expected 6 fields, found {}", fields.len())));
        }
        let variable = fields[0];
        validate_variable_name(variable).map_err(|_| err(format!("invalid variable '{variable}'")))?;
        let year: i32 = fields[1].parse().map_err(|_| err(format!("bad year '{}'", fields[1])))?;
        let month: u8 = fields[2].parse().map_err(|_| err(format!("bad month '{}'", fields[2])))?;
        let row: usize = fields[3].parse().map_err(|_| err(format!("bad lat_index '{}'", fields[3])))?;
        let col: usize = fields[4].parse().map_err(|_| err(format!("bad lon_index '{}'", fields[4])))?;
        // An empty value marks a missing cell.
        let value: f64 = if fields[5].is_empty() {
            f64::NAN
        } else {
            fields[5].parse().map_err(|_| err(format!("bad value '{}'", fields[5])))?
        };
        if month > 12 {
            return Err(err(format!("month {month} outside 0..=12")));
        }
        if !spec.contains_year(year) {
            return Err(err(format!("year {year} outside grid range {}..={}", spec.year_start, spec.year_end)));
        }
        if row >= spec.n_lat || col >= spec.n_lon {
            return Err(err(format!("cell ({row}, {col}) outside {}x{} grid", spec.n_lat, spec.n_lon)));
        }
        if value.is_infinite() || (value.is_nan() && !fields[5].is_empty()) {
            return Err(err(format!("non-finite value '{}'", fields[5])));
        }
        let idx = spec.index(row, col);
        if !seen.insert((variable.to_string(), year, month, idx)) {
            return Err(err(format!("duplicate cell {variable} {year}-{month} ({row}, {col})")));
        }
        let plane = planes.entry((variable.to_string(), year, month)).or_insert_with(|| vec![f64::NAN; n]);
        plane[idx] = value;
        records += 1;
    }
    if records == 0 {
        return Err(Error::Schema("no records".into()));
    }
    let layers =
        planes.into_iter().map(|((variable, year, month), values)| Layer { variable, year, month, values }).collect();
    LayerStack::new(spec.clone(), layers)
}

fn encode_binary(stack: &LayerStack) -> Vec<u8> {
    let s = &stack.spec;
    let cells = s.n_cells();
    let mut out = Vec::with_capacity(BINARY_HEADER_LEN + 64 + stack.layers.len() * (cells * 8 + 32));
    out.extend_from_slice(BINARY_MAGIC);
    out.push(BINARY_VERSION);
    out.resize(BINARY_HEADER_LEN, 0);
    for v in [s.lat_min, s.lat_max, s.lon_min, s.lon_max, s.resolution] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(s.n_lat as u32).to_le_bytes());
    out.extend_from_slice(&(s.n_lon as u32).to_le_bytes());
    out.extend_from_slice(&s.year_start.to_le_bytes());
    out.extend_from_slice(&s.year_end.to_le_bytes());
    out.extend_from_slice(&(stack.layers.len() as u32).to_le_bytes());
    for l in &stack.layers {
        out.extend_from_slice(&(l.variable.len() as u16).to_le_bytes());
        out.extend_from_slice(l.variable.as_bytes());
        out.extend_from_slice(&l.year.to_le_bytes());
        out.push(l.month);
        for v in &l.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Little-endian cursor that reports truncation as an integrity error.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Integrity(format!(
                "truncated: needed {n} bytes at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

fn decode_binary(bytes: &[u8]) -> Result<LayerStack> {
    let mut r = Reader::new(bytes);
    let header = r.take(BINARY_HEADER_LEN)?;
    if &header[..8] != BINARY_MAGIC {
        return Err(Error::Integrity("missing ARIDGRID magic".into()));
    }
    if header[8] != BINARY_VERSION {
        return Err(Error::Version { found: header[8], expected: BINARY_VERSION });
    }
    let spec = GridSpec {
        lat_min: r.f64()?,
        lat_max: r.f64()?,
        lon_min: r.f64()?,
        lon_max: r.f64()?,
        resolution: r.f64()?,
        n_lat: r.u32()? as usize,
        n_lon: r.u32()? as usize,
        year_start: r.i32()?,
        year_end: r.i32()?,
    };
    spec.validate().map_err(|e| Error::Integrity(format!("bad grid header: {e}")))?;
    let cells = spec.n_cells();
    let n_layers = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n_layers.min(1 << 16));
    for _ in 0..n_layers {
        let len = r.u16()? as usize;
        let variable = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Integrity("variable name is not UTF-8".into()))?
            .to_string();
        let year = r.i32()?;
        let month = r.u8()?;
        let raw = r.take(cells * 8)?;
        let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        layers.push(Layer { variable, year, month, values });
    }
    if r.remaining() != 0 {
        return Err(Error::Integrity(format!("{} trailing bytes", r.remaining())));
    }
    LayerStack::new(spec, layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> GridSpec {
        GridSpec::new((0.0, 2.0), (0.0, 2.0), 1.0, (2000, 2000)).unwrap()
    }

    #[test]
    fn precip_conversion_examples() {
        assert!((convert_precip_rate_to_cm(1e-5, 30).unwrap() - 2.592).abs() < 1e-12);
        assert_eq!(convert_precip_rate_to_cm(0.0, 31).unwrap(), 0.0);
        assert!((convert_precip_rate_to_cm(1.0 / 86_400.0, 28).unwrap() - 2.8).abs() < 1e-12);
        assert!(matches!(convert_precip_rate_to_cm(-1e-6, 30), Err(Error::Domain(_))));
        assert!(convert_precip_rate_to_cm(1e-5, 27).is_err());
    }

    #[test]
    fn kelvin_conversion_examples() {
        assert_eq!(convert_kelvin_to_celsius(273.15).unwrap(), 0.0);
        assert!((convert_kelvin_to_celsius(300.0).unwrap() - 26.85).abs() < 1e-12);
        assert_eq!(convert_kelvin_to_celsius(0.0).unwrap(), -273.15);
        assert!(matches!(convert_kelvin_to_celsius(-0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn leap_years_follow_gregorian_rule() {
        assert_eq!(days_in_month(1960, 2).unwrap(), 29);
        assert_eq!(days_in_month(1961, 2).unwrap(), 28);
        assert_eq!(days_in_month(1900, 2).unwrap(), 28);
        assert_eq!(days_in_month(2000, 2).unwrap(), 29);
        assert!(days_in_month(1960, 13).is_err());
    }

    #[test]
    fn winsorize_examples() {
        assert_eq!(winsorize(&[-5.0, 0.5, 10.0], 0.001, 2.0).unwrap(), vec![0.001, 0.5, 2.0]);
        assert_eq!(winsorize(&[0.001, 2.0], 0.001, 2.0).unwrap(), vec![0.001, 2.0]);
        assert_eq!(winsorize(&[0.3, 1.2], 0.001, 2.0).unwrap(), vec![0.3, 1.2]);
        assert!(winsorize(&[1.0], 2.0, 2.0).is_err());
        assert!(winsorize(&[f64::NAN], 0.0, 1.0).unwrap()[0].is_nan());
    }

    #[test]
    fn default_spec_dimensions() {
        let s = GridSpec::sahara_default();
        assert_eq!((s.n_lat, s.n_lon), (160, 320));
        assert_eq!(s.n_years(), 30);
    }

    #[test]
    fn spec_rejects_degenerate_domains() {
        assert!(GridSpec::new((10.0, 10.0), (0.0, 1.0), 1.0, (2000, 2000)).is_err());
        assert!(GridSpec::new((0.0, 1.0), (0.0, 1.0), 0.0, (2000, 2000)).is_err());
        assert!(GridSpec::new((0.0, 1.0), (0.0, 1.0), 1.0, (2001, 2000)).is_err());
        // half a cell rounds to zero cells
        assert!(GridSpec::new((0.0, 0.4), (0.0, 1.0), 1.0, (2000, 2000)).is_err());
    }

    #[test]
    fn synth_without_noise_or_season_is_flat_over_months() {
        let cfg = SynthConfig {
            spec: small_spec(),
            seed: 1,
            precip_gradient: 1.0,
            precip_base: 5.0,
            noise_sd: 0.0,
            temp_base: 25.0,
            temp_lapse: 0.5,
            seasonal_amp: 0.0,
        };
        let g = synth_generate(&cfg).unwrap();
        let jan = g.precip_at(2000, 1).unwrap();
        for m in 2..=12 {
            assert_eq!(&g.precip_at(2000, m).unwrap().values, &jan.values);
        }
        // row 0 center latitude 0.5
        assert_eq!(jan.values[0], 4.5);
        assert_eq!(g.temp_at(2000, 7).unwrap().values[0], 24.75);
    }

    #[test]
    fn synth_clamps_dry_latitudes_to_exact_zero() {
        let cfg = SynthConfig {
            spec: GridSpec::new((0.0, 10.0), (0.0, 2.0), 1.0, (2000, 2001)).unwrap(),
            seed: 9,
            precip_gradient: 2.0,
            precip_base: 8.0,
            noise_sd: 3.0,
            temp_base: 25.0,
            temp_lapse: 0.5,
            seasonal_amp: 0.4,
        };
        let g = synth_generate(&cfg).unwrap();
        for f in g.precip() {
            assert!(f.values.iter().all(|v| *v >= 0.0));
            // rows with center latitude >= 4 have a zero trend
            for row in 4..10 {
                for col in 0..2 {
                    assert_eq!(f.values[g.spec().index(row, col)], 0.0);
                }
            }
        }
    }

    #[test]
    fn synth_is_deterministic_per_seed() {
        let mut cfg = SynthConfig {
            spec: small_spec(),
            seed: 42,
            precip_gradient: 0.5,
            precip_base: 5.0,
            noise_sd: 1.0,
            temp_base: 25.0,
            temp_lapse: 0.5,
            seasonal_amp: 0.3,
        };
        let a = synth_generate(&cfg).unwrap();
        assert_eq!(a, synth_generate(&cfg).unwrap());
        cfg.seed = 43;
        assert_ne!(a, synth_generate(&cfg).unwrap());
    }

    #[test]
    fn synth_rejects_negative_noise() {
        let cfg = SynthConfig {
            spec: small_spec(),
            seed: 0,
            precip_gradient: 0.0,
            precip_base: 1.0,
            noise_sd: -1.0,
            temp_base: 0.0,
            temp_lapse: 0.0,
            seasonal_amp: 0.0,
        };
        assert!(matches!(synth_generate(&cfg), Err(Error::Domain(_))));
    }

    #[test]
    fn csv_month_13_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, format!("{CSV_HEADER}\nprecip,2000,1,0,0,1.0\nprecip,2000,13,0,0,1.0\n")).unwrap();
        match load_grid_csv(&path, &small_spec()) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("month 13"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn csv_empty_file_has_no_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        fs::write(&path, "").unwrap();
        match load_grid_csv(&path, &small_spec()) {
            Err(Error::Schema(msg)) => assert_eq!(msg, "no records"),
            other => panic!("expected schema error, got {other:?}"),
        }
        fs::write(&path, format!("{CSV_HEADER}\n")).unwrap();
        assert!(matches!(load_grid_csv(&path, &small_spec()), Err(Error::Schema(_))));
    }

    #[test]
    fn csv_absent_cells_load_as_missing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("partial.csv");
        fs::write(&path, format!("{CSV_HEADER}\nprecip,2000,1,1,1,3.5\ntemp,2000,1,0,0,20\n")).unwrap();
        let g = load_grid_csv(&path, &small_spec()).unwrap();
        assert_eq!(g.precip().len(), 12);
        assert_eq!(g.temp().len(), 12);
        let jan = g.precip_at(2000, 1).unwrap();
        assert_eq!(jan.get(3), Some(3.5));
        assert!(jan.is_missing(0));
        assert!(g.precip_at(2000, 2).unwrap().values.iter().all(|v| v.is_nan()));
    }

    #[test]
    fn csv_rejects_out_of_grid_cells() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("oob.csv");
        fs::write(&path, format!("{CSV_HEADER}\nprecip,2000,1,5,0,1\n")).unwrap();
        assert!(matches!(load_grid_csv(&path, &small_spec()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn save_to_unwritable_path_is_io_error() {
        let g = synth_generate(&SynthConfig {
            spec: small_spec(),
            seed: 0,
            precip_gradient: 0.0,
            precip_base: 1.0,
            noise_sd: 0.0,
            temp_base: 0.0,
            temp_lapse: 0.0,
            seasonal_amp: 0.0,
        })
        .unwrap();
        let path = Path::new("/nonexistent-dir/for/sure/grid.bin");
        assert!(matches!(save_grid(&g, path, GridFormat::Binary), Err(Error::Io { .. })));
        assert!(matches!(save_grid(&g, path, GridFormat::Csv), Err(Error::Io { .. })));
    }

    #[test]
    fn binary_truncation_and_version_are_detected() {
        let g = synth_generate(&SynthConfig {
            spec: small_spec(),
            seed: 3,
            precip_gradient: 0.0,
            precip_base: 1.0,
            noise_sd: 0.2,
            temp_base: 10.0,
            temp_lapse: 0.0,
            seasonal_amp: 0.0,
        })
        .unwrap();
        let bytes = encode_binary(&g.to_layers());
        assert_eq!(&bytes[..8], BINARY_MAGIC);
        assert!(matches!(decode_binary(&bytes[..bytes.len() - 3]), Err(Error::Integrity(_))));
        let mut wrong = bytes.clone();
        wrong[8] = 9;
        assert!(matches!(decode_binary(&wrong), Err(Error::Version { found: 9, .. })));
        let back = StGrid::from_layers(decode_binary(&bytes).unwrap()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn grid_rejects_negative_precipitation() {
        let spec = small_spec();
        let mk =
            |v: f64| (1..=12u8).map(|m| MonthlyField { year: 2000, month: m, values: vec![v; 4] }).collect::<Vec<_>>();
        assert!(StGrid::new(spec.clone(), mk(-1.0), mk(0.0)).is_err());
        assert!(StGrid::new(spec, mk(1.0), mk(-40.0)).is_ok());
    }
}
