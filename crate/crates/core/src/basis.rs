//! Spatial (Wendland) and temporal (Gaussian) radial basis features.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{winsorize, GridSpec};
use crate::ktc::{AridityClass, LabelRaster};
use crate::nn::Dataset;

/// Bandwidth multiplier applied to the reference knot distance.
pub const BANDWIDTH_FACTOR: f64 = 2.5;

/// Compactly supported Wendland function, zero for `d >= 1`.
pub fn wendland_b1(d: f64) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(Error::Domain(format!("Wendland distance must be >= 0, got {d}")));
    }
    Ok(wendland_unchecked(d))
}

#[inline]
fn wendland_unchecked(d: f64) -> f64 {
    if d >= 1.0 {
        return 0.0;
    }
    let one_minus = 1.0 - d;
    let sq = one_minus * one_minus;
    let sixth = sq * sq * sq;
    sixth / 3.0 * (35.0 * d * d + 18.0 * d + 3.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    /// θ = 2.5 × the largest distance between any two knots.
    MaxDistance,
    /// θ = 2.5 × the nearest-neighbour spacing of the knot lattice.
    KnotSpacing,
}

impl std::str::FromStr for BandwidthRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max_distance" => Ok(BandwidthRule::MaxDistance),
            "knot_spacing" => Ok(BandwidthRule::KnotSpacing),
            other => Err(Error::Usage(format!("unknown bandwidth rule '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialKnots {
    /// `(lon, lat)` in degrees.
    pub knots: Vec<(f64, f64)>,
    pub theta: f64,
    /// Rule actually used to derive `theta`.
    pub rule: BandwidthRule,
}

impl SpatialKnots {
    pub fn new(knots: Vec<(f64, f64)>, theta: f64, rule: BandwidthRule) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::Domain("at least one spatial knot is required".into()));
        }
        if !(theta > 0.0) || !theta.is_finite() {
            return Err(Error::Domain(format!("bandwidth must be finite and > 0, got {theta}")));
        }
        Ok(SpatialKnots { knots, theta, rule })
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }
}

fn max_pairwise_distance(knots: &[(f64, f64)]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in knots.iter().enumerate() {
        for b in &knots[i + 1..] {
            best = best.max((a.0 - b.0).hypot(a.1 - b.1));
        }
    }
    best
}

/// `grid_side²` knots on an equally spaced lattice whose outer knots sit
/// on the domain boundary. A single knot sits at the domain center.
pub fn make_spatial_knots(spec: &GridSpec, grid_side: usize, rule: BandwidthRule) -> Result<SpatialKnots> {
    if grid_side == 0 {
        return Err(Error::Domain("spatial grid side must be >= 1".into()));
    }
    let lon_span = spec.lon_max - spec.lon_min;
    let lat_span = spec.lat_max - spec.lat_min;
    if !(lon_span > 0.0 && lat_span > 0.0) {
        return Err(Error::Domain("degenerate spatial domain".into()));
    }
    if grid_side == 1 {
        let center = ((spec.lon_min + spec.lon_max) / 2.0, (spec.lat_min + spec.lat_max) / 2.0);
        if rule == BandwidthRule::MaxDistance {
            log::warn!("one spatial knot has no pairwise distance; using the knot_spacing bandwidth rule");
        }
        let theta = BANDWIDTH_FACTOR * lon_span.max(lat_span);
        return SpatialKnots::new(vec![center], theta, BandwidthRule::KnotSpacing);
    }
    let steps = (grid_side - 1) as f64;
    let dx = lon_span / steps;
    let dy = lat_span / steps;
    let mut knots = Vec::with_capacity(grid_side * grid_side);
    // lat-major so knot order matches the grid's row-major cell order
    for i in 0..grid_side {
        let lat = if i == grid_side - 1 { spec.lat_max } else { spec.lat_min + i as f64 * dy };
        for j in 0..grid_side {
            let lon = if j == grid_side - 1 { spec.lon_max } else { spec.lon_min + j as f64 * dx };
            knots.push((lon, lat));
        }
    }
    let theta = match rule {
        BandwidthRule::MaxDistance => BANDWIDTH_FACTOR * max_pairwise_distance(&knots),
        BandwidthRule::KnotSpacing => BANDWIDTH_FACTOR * dx.min(dy),
    };
    SpatialKnots::new(knots, theta, rule)
}

/// `φ_i(s) = B1(‖s − u_i‖ / θ)` with planar distance in degrees.
pub fn spatial_basis(s: (f64, f64), knots: &SpatialKnots) -> Vec<f64> {
    knots.knots.iter().map(|u| wendland_unchecked((s.0 - u.0).hypot(s.1 - u.1) / knots.theta)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalKnots {
    /// Strictly increasing, equidistant, in years.
    pub knots: Vec<f64>,
    pub kappa: f64,
}

impl TemporalKnots {
    pub fn new(knots: Vec<f64>, kappa: f64) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::Domain("at least one temporal knot is required".into()));
        }
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::Domain(format!("kappa must be finite and > 0, got {kappa}")));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("temporal knots must be strictly increasing".into()));
        }
        if knots.len() >= 2 {
            let step = knots[1] - knots[0];
            if knots.windows(2).any(|w| ((w[1] - w[0]) - step).abs() > 1e-9 * step.abs().max(1.0)) {
                return Err(Error::Domain("temporal knots must be equidistant".into()));
            }
            if (kappa - step).abs() > 1e-9 * step.max(1.0) {
                return Err(Error::Domain(format!("kappa {kappa} must equal knot spacing {step}")));
            }
        }
        Ok(TemporalKnots { knots, kappa })
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }
}

/// `count` equidistant knots spanning `[year_start, year_end]` inclusively.
/// A single knot sits mid-range with `κ` equal to the span (at least one year).
pub fn make_temporal_knots(year_start: i32, year_end: i32, count: usize) -> Result<TemporalKnots> {
    if count == 0 {
        return Err(Error::Domain("temporal knot count must be >= 1".into()));
    }
    if year_end < year_start {
        return Err(Error::Domain(format!("year range {year_start}..={year_end} is empty")));
    }
    let (a, b) = (year_start as f64, year_end as f64);
    if count == 1 {
        return TemporalKnots::new(vec![(a + b) / 2.0], (b - a).max(1.0));
    }
    if year_end == year_start {
        return Err(Error::Domain(format!("{count} temporal knots need a year range longer than one year")));
    }
    let step = (b - a) / (count - 1) as f64;
    let knots = (0..count).map(|j| if j == count - 1 { b } else { a + j as f64 * step }).collect();
    TemporalKnots::new(knots, step)
}

/// `ψ_j(t) = exp(−(t − v_j)² / (2κ))`.
pub fn temporal_basis(t: f64, knots: &TemporalKnots) -> Vec<f64> {
    knots.knots.iter().map(|v| (-(t - v).powi(2) / (2.0 * knots.kappa)).exp()).collect()
}

/// Network input: covariates, then spatial basis, then temporal basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub n_covariates: usize,
    pub n_spatial: usize,
    pub n_temporal: usize,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn covariates(&self) -> &[f64] {
        &self.values[..self.n_covariates]
    }

    pub fn spatial(&self) -> &[f64] {
        &self.values[self.n_covariates..self.n_covariates + self.n_spatial]
    }

    pub fn temporal(&self) -> &[f64] {
        &self.values[self.n_covariates + self.n_spatial..]
    }
}

pub fn encode(
    s: (f64, f64),
    t: f64,
    covariates: &[f64],
    sk: &SpatialKnots,
    tk: &TemporalKnots,
) -> Result<FeatureVector> {
    if let Some(bad) = covariates.iter().find(|c| !c.is_finite()) {
        return Err(Error::Domain(format!("non-finite covariate {bad}")));
    }
    let mut values = Vec::with_capacity(covariates.len() + sk.len() + tk.len());
    values.extend_from_slice(covariates);
    values.extend(spatial_basis(s, sk));
    values.extend(temporal_basis(t, tk));
    Ok(FeatureVector { values, n_covariates: covariates.len(), n_spatial: sk.len(), n_temporal: tk.len() })
}

/// Knot sets plus the covariate layout they are paired with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisConfig {
    pub spatial: SpatialKnots,
    pub temporal: TemporalKnots,
    /// Optional clamp of the `P/R` covariate before encoding (ablation only).
    pub pr_clamp: Option<(f64, f64)>,
}

impl BasisConfig {
    /// Covariate count is fixed at one: the `P/R` metric.
    pub const N_COVARIATES: usize = 1;

    pub fn build(
        spec: &GridSpec,
        spatial_side: usize,
        rule: BandwidthRule,
        temporal_count: usize,
        pr_clamp: Option<(f64, f64)>,
    ) -> Result<Self> {
        if let Some((lo, hi)) = pr_clamp {
            if !(lo < hi) {
                return Err(Error::Domain(format!("P/R clamp needs lo < hi, got [{lo}, {hi}]")));
            }
        }
        Ok(BasisConfig {
            spatial: make_spatial_knots(spec, spatial_side, rule)?,
            temporal: make_temporal_knots(spec.year_start, spec.year_end, temporal_count)?,
            pr_clamp,
        })
    }

    pub fn n_features(&self) -> usize {
        Self::N_COVARIATES + self.spatial.len() + self.temporal.len()
    }

    /// SHA-256 over the canonical little-endian encoding of every knot and scale.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.spatial.knots.len() as u64).to_le_bytes());
        for (lon, lat) in &self.spatial.knots {
            h.update(lon.to_le_bytes());
            h.update(lat.to_le_bytes());
        }
        h.update(self.spatial.theta.to_le_bytes());
        h.update([self.spatial.rule as u8]);
        h.update((self.temporal.knots.len() as u64).to_le_bytes());
        for v in &self.temporal.knots {
            h.update(v.to_le_bytes());
        }
        h.update(self.temporal.kappa.to_le_bytes());
        match self.pr_clamp {
            Some((lo, hi)) => {
                h.update([1u8]);
                h.update(lo.to_le_bytes());
                h.update(hi.to_le_bytes());
            }
            None => h.update([0u8]),
        }
        h.finalize().into()
    }
}

/// Where each encoded row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowKey {
    pub year: i32,
    pub cell: usize,
}

/// Encodes every pixel-year that has a label and a finite `P/R`.
/// Spatial basis values are computed once per cell and reused across years.
pub fn encode_rasters(rasters: &[LabelRaster], basis: &BasisConfig) -> Result<(Dataset, Vec<RowKey>)> {
    let first = rasters.first().ok_or_else(|| Error::Usage("no rasters to encode".into()))?;
    let spec = &first.spec;
    let n_features = basis.n_features();
    let spatial: Vec<Vec<f64>> = (0..spec.n_lat)
        .flat_map(|row| (0..spec.n_lon).map(move |col| (row, col)))
        .map(|(row, col)| spatial_basis(spec.cell_center(row, col), &basis.spatial))
        .collect();
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut keys = Vec::new();
    for r in rasters {
        if !r.spec.same_space(spec) || r.cells.len() != spec.n_cells() {
            return Err(Error::Schema(format!("raster for {} does not match the grid", r.year)));
        }
        let temporal = temporal_basis(r.year as f64, &basis.temporal);
        for (cell, label) in r.cells.iter().enumerate() {
            let Some(label) = label else { continue };
            let Some(mut pr) = label.pr.filter(|v| v.is_finite()) else { continue };
            if let Some((lo, hi)) = basis.pr_clamp {
                pr = winsorize(&[pr], lo, hi)?[0];
            }
            x.push(pr);
            x.extend_from_slice(&spatial[cell]);
            x.extend_from_slice(&temporal);
            y.push(label.class);
            keys.push(RowKey { year: r.year, cell });
        }
    }
    Ok((Dataset::new(n_features, x, y)?, keys))
}

/// Writes `lon,lat,year` followed by every feature column.
pub fn write_feature_csv(
    path: &Path,
    spec: &GridSpec,
    basis: &BasisConfig,
    data: &Dataset,
    keys: &[RowKey],
) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let mut header = vec!["lon".to_string(), "lat".into(), "year".into(), "pr".into()];
    header.extend((1..=basis.spatial.len()).map(|i| format!("phi{i}")));
    header.extend((1..=basis.temporal.len()).map(|j| format!("psi{j}")));
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for (i, key) in keys.iter().enumerate() {
        let (lon, lat) = spec.cell_center(key.cell / spec.n_lon, key.cell % spec.n_lon);
        write!(w, "{lon},{lat},{}", key.year).map_err(io)?;
        for v in data.row(i) {
            write!(w, ",{v:.6e}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Fraction of encoded rows per class, in class order.
pub fn class_balance(labels: &[AridityClass]) -> [usize; 3] {
    let mut counts = [0usize; 3];
    for c in labels {
        counts[c.index()] += 1;
    }
    counts
}
