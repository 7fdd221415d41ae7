//! Glue between labeled rasters, a trained network and probability cubes.

use crate::basis::{encode_rasters, BasisConfig};
use crate::error::{Error, Result};
use crate::evaluation::argmax_classify;
use crate::fluctuation::ProbCube;
use crate::ktc::{AridityLabel, LabelRaster};
use crate::nn::{predict_probs, Network};

/// Probabilities for every pixel-year with a finite `P/R`; other pixels stay missing.
/// `rasters` must cover consecutive years.
pub fn predict_cube(net: &Network, basis: &BasisConfig, rasters: &[LabelRaster]) -> Result<ProbCube> {
    let first = rasters.first().ok_or_else(|| Error::Usage("no rasters to predict".into()))?;
    for (k, r) in rasters.iter().enumerate() {
        if r.year != first.year + k as i32 {
            return Err(Error::Schema(format!("prediction years are not consecutive at {}", r.year)));
        }
    }
    net.check_input_width(basis.n_features())?;
    let year_end = first.year + rasters.len() as i32 - 1;
    let spec = first.spec.with_years(first.year, year_end)?;
    let (data, keys) = encode_rasters(rasters, basis)?;
    let probs = if data.is_empty() { Vec::new() } else { predict_probs(net, data.features(), data.n_features())? };
    let mut planes = vec![vec![None; spec.n_cells()]; rasters.len()];
    for (key, p) in keys.iter().zip(probs) {
        planes[(key.year - first.year) as usize][key.cell] = Some(p);
    }
    ProbCube::new(spec, planes)
}

/// Argmax class rasters from a cube; `P/R` is not carried.
pub fn class_rasters(cube: &ProbCube) -> Vec<LabelRaster> {
    let spec = cube.spec();
    spec.years()
        .map(|year| {
            let plane = cube.year_plane(year).expect("year in range");
            LabelRaster {
                spec: spec.clone(),
                year,
                cells: plane.iter().map(|p| p.map(|p| AridityLabel { class: argmax_classify(&p), pr: None })).collect(),
            }
        })
        .collect()
}
