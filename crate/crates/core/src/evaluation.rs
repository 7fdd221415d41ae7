//! One-vs-rest confusion counts and per-class, per-year metrics with the
//! KT labels as ground truth.

use std::fs;
use std::io::{BufWriter, Write};
use std::ops::RangeInclusive;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ktc::{AridityClass, LabelRaster};
use crate::nn::ProbTriple;

pub const METRICS_CSV_HEADER: &str = "class,year,precision,recall,f1,tp,fp,fn,tn";

/// Class of maximal probability; ties go to the lowest class code.
pub fn argmax_classify(probs: &ProbTriple) -> AridityClass {
    let mut best = 0;
    for i in 1..3 {
        if probs.0[i] > probs.0[best] {
            best = i;
        }
    }
    AridityClass::from_index(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub class: AridityClass,
    pub year: i32,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// `None` marks a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(c: &ConfusionCounts) -> ClassMetrics {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    ClassMetrics { precision, recall, f1 }
}

fn check_aligned(truth: &[LabelRaster], pred: &[LabelRaster]) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(Error::Usage(format!("{} truth rasters vs {} predicted rasters", truth.len(), pred.len())));
    }
    for (t, p) in truth.iter().zip(pred) {
        if t.year != p.year {
            return Err(Error::Usage(format!("truth year {} paired with predicted year {}", t.year, p.year)));
        }
        if !t.spec.same_space(&p.spec) || t.cells.len() != p.cells.len() {
            return Err(Error::Usage(format!("rasters for {} are on different grids", t.year)));
        }
    }
    Ok(())
}

/// Counts per (year, class) in raster order, classes in code order.
/// Pixels missing in either raster are skipped.
pub fn confusion(truth: &[LabelRaster], pred: &[LabelRaster]) -> Result<Vec<ConfusionCounts>> {
    check_aligned(truth, pred)?;
    let mut out = Vec::with_capacity(truth.len() * 3);
    for (t, p) in truth.iter().zip(pred) {
        // pair_counts[truth][pred]
        let mut pair_counts = [[0u64; 3]; 3];
        for (a, b) in t.cells.iter().zip(&p.cells) {
            if let (Some(a), Some(b)) = (a, b) {
                pair_counts[a.class.index()][b.class.index()] += 1;
            }
        }
        let total: u64 = pair_counts.iter().flatten().sum();
        for class in AridityClass::ALL {
            let c = class.index();
            let tp = pair_counts[c][c];
            let fp: u64 = (0..3).filter(|&k| k != c).map(|k| pair_counts[k][c]).sum();
            let fn_: u64 = (0..3).filter(|&k| k != c).map(|k| pair_counts[c][k]).sum();
            out.push(ConfusionCounts { class, year: t.year, tp, fp, fn_, tn: total - tp - fp - fn_ });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub counts: ConfusionCounts,
    pub metrics: ClassMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearAccuracy {
    pub year: i32,
    pub n_pixels: u64,
    pub n_correct: u64,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
    pub yearly_accuracy: Vec<YearAccuracy>,
    /// Mean of defined yearly values, per class in code order.
    pub class_means: Vec<(AridityClass, ClassMetrics)>,
    /// Correct over evaluated pixels, pooled across all years.
    pub overall_accuracy: Option<f64>,
}

impl MetricsReport {
    pub fn get(&self, class: AridityClass, year: i32) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.counts.class == class && r.counts.year == year)
    }

    pub fn class_mean(&self, class: AridityClass) -> ClassMetrics {
        self.class_means.iter().find(|(c, _)| *c == class).map(|(_, m)| *m).expect("all classes present")
    }

    /// Pooled counts over all years for one class.
    pub fn pooled(&self, class: AridityClass) -> ClassMetrics {
        let mut sum = ConfusionCounts { class, year: 0, tp: 0, fp: 0, fn_: 0, tn: 0 };
        for r in self.rows.iter().filter(|r| r.counts.class == class) {
            sum.tp += r.counts.tp;
            sum.fp += r.counts.fp;
            sum.fn_ += r.counts.fn_;
            sum.tn += r.counts.tn;
        }
        metrics(&sum)
    }
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Metrics for the given years (all aligned years when `years` is `None`).
pub fn evaluate(
    truth: &[LabelRaster],
    pred: &[LabelRaster],
    years: Option<RangeInclusive<i32>>,
) -> Result<MetricsReport> {
    check_aligned(truth, pred)?;
    let keep = |y: i32| years.as_ref().is_none_or(|r| r.contains(&y));
    let (truth, pred): (Vec<_>, Vec<_>) =
        truth.iter().zip(pred).filter(|(t, _)| keep(t.year)).map(|(t, p)| (t.clone(), p.clone())).unzip();
    if truth.is_empty() {
        return Err(Error::Coverage("no rasters in the requested years".into()));
    }
    let counts = confusion(&truth, &pred)?;
    let rows: Vec<MetricsRow> = counts.iter().map(|c| MetricsRow { counts: *c, metrics: metrics(c) }).collect();
    let yearly_accuracy: Vec<YearAccuracy> = rows
        .chunks(3)
        .map(|chunk| {
            let n_pixels = chunk[0].counts.total();
            let n_correct: u64 = chunk.iter().map(|r| r.counts.tp).sum();
            YearAccuracy { year: chunk[0].counts.year, n_pixels, n_correct, accuracy: ratio(n_correct, n_pixels) }
        })
        .collect();
    let class_means = AridityClass::ALL
        .iter()
        .map(|&class| {
            let of = |f: fn(&ClassMetrics) -> Option<f64>| {
                mean_defined(rows.iter().filter(|r| r.counts.class == class).map(|r| f(&r.metrics)))
            };
            (class, ClassMetrics { precision: of(|m| m.precision), recall: of(|m| m.recall), f1: of(|m| m.f1) })
        })
        .collect();
    let correct: u64 = yearly_accuracy.iter().map(|y| y.n_correct).sum();
    let total: u64 = yearly_accuracy.iter().map(|y| y.n_pixels).sum();
    Ok(MetricsReport { rows, yearly_accuracy, class_means, overall_accuracy: ratio(correct, total) })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

pub fn write_metrics_csv(report: &MetricsReport, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let io = |e| Error::io(path, e);
    writeln!(w, "{METRICS_CSV_HEADER}").map_err(io)?;
    for r in &report.rows {
        let c = &r.counts;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            c.class.name(),
            c.year,
            opt(r.metrics.precision),
            opt(r.metrics.recall),
            opt(r.metrics.f1),
            c.tp,
            c.fp,
            c.fn_,
            c.tn
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// One row per year: every class's precision/recall/F1 and the accuracy.
pub fn write_timeseries_csv(report: &MetricsReport, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let io = |e| Error::io(path, e);
    let mut header = vec!["year".to_string()];
    for c in AridityClass::ALL {
        for m in ["precision", "recall", "f1"] {
            header.push(format!("{}_{m}", c.name()));
        }
    }
    header.push("accuracy".into());
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for (chunk, acc) in report.rows.chunks(3).zip(&report.yearly_accuracy) {
        let mut fields = vec![acc.year.to_string()];
        for r in chunk {
            fields.push(opt(r.metrics.precision));
            fields.push(opt(r.metrics.recall));
            fields.push(opt(r.metrics.f1));
        }
        fields.push(opt(acc.accuracy));
        writeln!(w, "{}", fields.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Table-style text with whole-percent rounding.
pub fn format_percent_table(report: &MetricsReport) -> String {
    let pct = |v: Option<f64>| v.map_or_else(|| "  n/a".to_string(), |x| format!("{:>4.0}%", x * 100.0));
    let mut s = String::from("year  metric     arid  semiarid  nonarid\n");
    for chunk in report.rows.chunks(3) {
        let year = chunk[0].counts.year;
        let row = |name: &str, f: fn(&ClassMetrics) -> Option<f64>| {
            format!(
                "{year}  {name:<9} {}     {}    {}\n",
                pct(f(&chunk[0].metrics)),
                pct(f(&chunk[1].metrics)),
                pct(f(&chunk[2].metrics))
            )
        };
        s += &row("precision", |m| m.precision);
        s += &row("recall", |m| m.recall);
        s += &row("f1", |m| m.f1);
    }
    s
}
