//! Raster rendering to PNG or binary PPM, with a JSON legend alongside.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use aridprob_core::fluctuation::{FluctuationLevel, VAR_CLASS, VAR_CV, VAR_LEVEL, VAR_PROB};
use aridprob_core::grid::{winsorize, GridSpec, LayerStack, MONTH_ANNUAL};
use aridprob_core::ktc::{AridityClass, VAR_LABEL, VAR_PR};
use serde::Serialize;

use crate::{DataError, UsageError};

pub type Rgb = [u8; 3];

pub const MISSING: Rgb = [160, 160, 160];
pub const CLASS_COLORS: [Rgb; 3] = [[215, 48, 39], [254, 204, 92], [49, 130, 189]];
pub const LEVEL_COLORS: [Rgb; 5] = [[26, 152, 80], [166, 217, 106], [255, 255, 191], [253, 174, 97], [215, 25, 28]];
/// Stops of the continuous ramp, low to high.
pub const RAMP: [Rgb; 3] = [[68, 1, 84], [33, 145, 140], [253, 231, 37]];

pub const PR_BOUNDS: (f64, f64) = (0.001, 2.0);
/// CV values above this are drawn at the top of the ramp.
pub const CV_RAMP_MAX: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderVariable {
    Class,
    Label,
    ProbArid,
    ProbSemiArid,
    ProbNonArid,
    PrWinsorized,
    Cv,
    Level,
}

impl RenderVariable {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "class" => RenderVariable::Class,
            "label" => RenderVariable::Label,
            "prob_arid" => RenderVariable::ProbArid,
            "prob_semiarid" => RenderVariable::ProbSemiArid,
            "prob_nonarid" => RenderVariable::ProbNonArid,
            "pr_winsorized" => RenderVariable::PrWinsorized,
            "cv" => RenderVariable::Cv,
            "level" => RenderVariable::Level,
            other => bail!(UsageError(format!("unknown render variable '{other}'"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            RenderVariable::Class => "class",
            RenderVariable::Label => "label",
            RenderVariable::ProbArid => "prob_arid",
            RenderVariable::ProbSemiArid => "prob_semiarid",
            RenderVariable::ProbNonArid => "prob_nonarid",
            RenderVariable::PrWinsorized => "pr_winsorized",
            RenderVariable::Cv => "cv",
            RenderVariable::Level => "level",
        }
    }

    /// Layer the values are read from.
    fn layer(self) -> &'static str {
        match self {
            RenderVariable::Class => VAR_CLASS,
            RenderVariable::Label => VAR_LABEL,
            RenderVariable::ProbArid => VAR_PROB[0],
            RenderVariable::ProbSemiArid => VAR_PROB[1],
            RenderVariable::ProbNonArid => VAR_PROB[2],
            RenderVariable::PrWinsorized => VAR_PR,
            RenderVariable::Cv => VAR_CV,
            RenderVariable::Level => VAR_LEVEL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Png,
    Ppm,
}

impl ImageFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "png" => Ok(ImageFormat::Png),
            "ppm" => Ok(ImageFormat::Ppm),
            other => bail!(UsageError(format!("unknown image format '{other}' (png or ppm)"))),
        }
    }

    pub fn ext(self) -> &'static str {
        match self {
            ImageFormat::Png => "png",
            ImageFormat::Ppm => "ppm",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderSpec {
    pub variable: RenderVariable,
    /// Defaults to the first year holding the variable.
    pub year: Option<i32>,
    pub scale: u32,
    pub format: ImageFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LegendEntry {
    pub label: String,
    pub rgb: Rgb,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Legend {
    pub variable: String,
    pub year: i32,
    pub width: u32,
    pub height: u32,
    pub scale: u32,
    pub kind: &'static str,
    /// Value range mapped onto the ramp (continuous palettes only).
    pub range: Option<[f64; 2]>,
    pub entries: Vec<LegendEntry>,
    pub missing: Rgb,
}

pub struct Image {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

pub fn ramp(t: f64) -> Rgb {
    let t = t.clamp(0.0, 1.0) * (RAMP.len() - 1) as f64;
    let k = (t.floor() as usize).min(RAMP.len() - 2);
    let f = t - k as f64;
    let (a, b) = (RAMP[k], RAMP[k + 1]);
    [0, 1, 2].map(|i| (a[i] as f64 + f * (b[i] as f64 - a[i] as f64)).round() as u8)
}

fn discrete(value: f64, colors: &[Rgb]) -> Rgb {
    let code = value.round();
    if value.is_nan() || code < 1.0 || code > colors.len() as f64 {
        MISSING
    } else {
        colors[code as usize - 1]
    }
}

/// Cell colors in grid order plus the legend body.
pub struct Coloring {
    pub colors: Vec<Rgb>,
    pub kind: &'static str,
    pub range: Option<[f64; 2]>,
    pub entries: Vec<LegendEntry>,
}

pub fn colorize(variable: RenderVariable, values: &[f64]) -> Result<Coloring> {
    let continuous = |lo: f64, hi: f64, vals: &[f64]| -> Vec<Rgb> {
        vals.iter().map(|v| if v.is_nan() { MISSING } else { ramp((v - lo) / (hi - lo)) }).collect()
    };
    let ramp_entries = |lo: f64, hi: f64| {
        [0.0, 0.5, 1.0]
            .iter()
            .map(|t| LegendEntry { label: format!("{}", lo + t * (hi - lo)), rgb: ramp(*t) })
            .collect::<Vec<_>>()
    };
    let (colors, kind, range, entries) = match variable {
        RenderVariable::Class | RenderVariable::Label => (
            values.iter().map(|v| discrete(*v, &CLASS_COLORS)).collect(),
            "discrete",
            None,
            AridityClass::ALL
                .iter()
                .map(|c| LegendEntry { label: c.name().into(), rgb: CLASS_COLORS[c.index()] })
                .collect(),
        ),
        RenderVariable::Level => (
            values.iter().map(|v| discrete(*v, &LEVEL_COLORS)).collect(),
            "discrete",
            None,
            FluctuationLevel::ALL
                .iter()
                .map(|l| LegendEntry { label: l.range_label().into(), rgb: LEVEL_COLORS[l.code() as usize - 1] })
                .collect(),
        ),
        RenderVariable::ProbArid | RenderVariable::ProbSemiArid | RenderVariable::ProbNonArid => {
            (continuous(0.0, 1.0, values), "continuous", Some([0.0, 1.0]), ramp_entries(0.0, 1.0))
        }
        RenderVariable::PrWinsorized => {
            let (lo, hi) = PR_BOUNDS;
            let clipped = winsorize(values, lo, hi)?;
            (continuous(lo, hi, &clipped), "continuous", Some([lo, hi]), ramp_entries(lo, hi))
        }
        RenderVariable::Cv => (
            continuous(0.0, CV_RAMP_MAX, values),
            "continuous",
            Some([0.0, CV_RAMP_MAX]),
            ramp_entries(0.0, CV_RAMP_MAX),
        ),
    };
    Ok(Coloring { colors, kind, range, entries })
}

/// North-up image with each cell drawn as a `scale`×`scale` block.
pub fn rasterize(spec: &GridSpec, colors: &[Rgb], scale: u32) -> Image {
    let s = scale as usize;
    let width = spec.n_lon * s;
    let height = spec.n_lat * s;
    let mut pixels = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        // Grid row 0 is the southern edge.
        let row = spec.n_lat - 1 - y / s;
        for x in 0..width {
            pixels.extend_from_slice(&colors[spec.index(row, x / s)]);
        }
    }
    Image { width: width as u32, height: height as u32, pixels }
}

pub fn write_image(img: &Image, path: &Path, format: ImageFormat) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    match format {
        ImageFormat::Ppm => {
            write!(w, "P6\n{} {}\n255\n", img.width, img.height)?;
            w.write_all(&img.pixels)?;
        }
        ImageFormat::Png => {
            let mut enc = png::Encoder::new(&mut w, img.width, img.height);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header()?;
            writer.write_image_data(&img.pixels)?;
            writer.finish()?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Renders one layer; returns the image path and the legend path.
pub fn render(stack: &LayerStack, spec: &RenderSpec, image_out: &Path) -> Result<(PathBuf, PathBuf)> {
    let layer_name = spec.variable.layer();
    let year = match spec.year {
        Some(y) => y,
        None => *stack
            .years_of(layer_name)
            .first()
            .ok_or_else(|| DataError(format!("input has no '{layer_name}' layer")))?,
    };
    let layer = stack
        .find(layer_name, year, MONTH_ANNUAL)
        .ok_or_else(|| DataError(format!("input has no '{layer_name}' layer for {year}")))?;
    let Coloring { colors, kind, range, entries } = colorize(spec.variable, &layer.values)?;
    let img = rasterize(&stack.spec, &colors, spec.scale);
    write_image(&img, image_out, spec.format)?;
    let legend = Legend {
        variable: spec.variable.name().into(),
        year,
        width: img.width,
        height: img.height,
        scale: spec.scale,
        kind,
        range,
        entries,
        missing: MISSING,
    };
    let legend_path = image_out.with_extension("json");
    fs::write(&legend_path, serde_json::to_string_pretty(&legend)? + "\n")
        .with_context(|| format!("writing {}", legend_path.display()))?;
    Ok((image_out.to_path_buf(), legend_path))
}
