//! Confusion matrices and the accuracy metric suite.
//!
//! Rows are true classes and columns predicted classes, so recall normalises
//! by row sums and precision by column sums. Per-class values that are
//! undefined (an empty row or column) are NaN and are left out of means.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::CLASS_NAMES;
use crate::raster::{LabelRaster, IGNORE};
use crate::spatialcv::FoldAssignment;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    /// Build from row-major counts.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Shape("confusion matrix rows must be square".into()));
        }
        Ok(Self {
            k,
            counts: rows.concat(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn add(&mut self, truth: usize, pred: usize, n: u64) {
        self.counts[truth * self.k + pred] += n;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c * self.k..(c + 1) * self.k].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        (0..self.k).map(|r| self.get(r, c)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|c| self.get(c, c)).sum()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.k);
        for r in 0..self.k {
            for c in 0..self.k {
                t.add(c, r, self.get(r, c));
            }
        }
        t
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.k.max(1)).map(<[u64]>::to_vec).collect()
    }

    /// Accumulate `(truth, pred)` pairs, skipping ignored truth.
    pub fn accumulate(&mut self, pred: &[i16], truth: &[i16]) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(Error::Shape(format!("{} predictions for {} labels", pred.len(), truth.len())));
        }
        let k = self.k as i16;
        for (i, (&p, &t)) in pred.iter().zip(truth).enumerate() {
            if t == IGNORE {
                continue;
            }
            if !(0..k).contains(&t) || !(0..k).contains(&p) {
                return Err(Error::Data(format!("pixel {i}: (truth {t}, pred {p}) outside 0..{k}")));
            }
            self.counts[t as usize * self.k + p as usize] += 1;
        }
        Ok(())
    }
}

/// Confusion matrix of `pred` against `truth` with `truth.num_classes()`
/// classes. Accumulated in parallel row bands, then merged.
pub fn confusion(pred: &LabelRaster, truth: &LabelRaster) -> Result<ConfusionMatrix> {
    if pred.width() != truth.width() || pred.height() != truth.height() {
        return Err(Error::Shape(format!(
            "prediction {}x{} vs truth {}x{}",
            pred.width(),
            pred.height(),
            truth.width(),
            truth.height()
        )));
    }
    let k = usize::from(truth.num_classes());
    let chunk = (truth.width() as usize).max(1) * 64;
    pred.values()
        .par_chunks(chunk)
        .zip(truth.values().par_chunks(chunk))
        .map(|(p, t)| {
            let mut cm = ConfusionMatrix::zeros(k);
            cm.accumulate(p, t)?;
            Ok(cm)
        })
        .try_reduce(|| ConfusionMatrix::zeros(k), |a, b| merge(&a, &b))
}

pub fn merge(a: &ConfusionMatrix, b: &ConfusionMatrix) -> Result<ConfusionMatrix> {
    if a.k != b.k {
        return Err(Error::Shape(format!("cannot merge {}-class and {}-class matrices", a.k, b.k)));
    }
    Ok(ConfusionMatrix {
        k: a.k,
        counts: a.counts.iter().zip(&b.counts).map(|(x, y)| x + y).collect(),
    })
}

fn nonempty(cm: &ConfusionMatrix) -> Result<u64> {
    match cm.total() {
        0 => Err(Error::Empty("confusion matrix has no scored pixels".into())),
        n => Ok(n),
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        f64::NAN
    } else {
        num as f64 / den as f64
    }
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    Ok(cm.trace() as f64 / nonempty(cm)? as f64)
}

pub fn recall(cm: &ConfusionMatrix) -> Vec<f64> {
    (0..cm.k).map(|c| ratio(cm.get(c, c), cm.row_sum(c))).collect()
}

pub fn precision(cm: &ConfusionMatrix) -> Vec<f64> {
    (0..cm.k).map(|c| ratio(cm.get(c, c), cm.col_sum(c))).collect()
}

/// Mean over the defined (non-NaN) entries; NaN if none are.
pub fn nan_mean(v: &[f64]) -> f64 {
    let defined: Vec<f64> = v.iter().copied().filter(|x| !x.is_nan()).collect();
    if defined.is_empty() {
        f64::NAN
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IouF1 {
    pub iou: Vec<f64>,
    pub f1: Vec<f64>,
    pub mean_iou: f64,
    pub mean_f1: f64,
}

/// `IoU = TP / (TP + FP + FN)` and `F1 = 2 TP / (2 TP + FP + FN)`, the
/// latter being the harmonic mean of precision and recall.
pub fn iou_f1(cm: &ConfusionMatrix) -> IouF1 {
    let (mut iou, mut f1) = (Vec::with_capacity(cm.k), Vec::with_capacity(cm.k));
    for c in 0..cm.k {
        let tp = cm.get(c, c);
        let fn_ = cm.row_sum(c) - tp;
        let fp = cm.col_sum(c) - tp;
        iou.push(ratio(tp, tp + fp + fn_));
        f1.push(ratio(2 * tp, 2 * tp + fp + fn_));
    }
    IouF1 {
        mean_iou: nan_mean(&iou),
        mean_f1: nan_mean(&f1),
        iou,
        f1,
    }
}

/// F1 implied by an IoU value.
pub fn f1_from_iou(iou: f64) -> f64 {
    2.0 * iou / (1.0 + iou)
}

/// Cohen's kappa; defined as 0 when chance agreement is 1.
pub fn cohen_kappa(cm: &ConfusionMatrix) -> Result<f64> {
    let n = nonempty(cm)? as f64;
    let po = cm.trace() as f64 / n;
    let pe: f64 = (0..cm.k)
        .map(|c| cm.row_sum(c) as f64 * cm.col_sum(c) as f64)
        .sum::<f64>()
        / (n * n);
    if pe >= 1.0 {
        return Ok(0.0);
    }
    Ok((po - pe) / (1.0 - pe))
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|x| if x.is_nan() { None } else { Some(*x) })
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let v: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(v.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
    }
}

mod nan_scalar {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// `"continent"` or a country code.
    pub scope: String,
    pub pixels: u64,
    pub accuracy: f64,
    #[serde(with = "nan_as_null")]
    pub recall: Vec<f64>,
    #[serde(with = "nan_as_null")]
    pub precision: Vec<f64>,
    #[serde(with = "nan_as_null")]
    pub iou: Vec<f64>,
    #[serde(with = "nan_as_null")]
    pub f1: Vec<f64>,
    #[serde(with = "nan_scalar")]
    pub mean_iou: f64,
    #[serde(with = "nan_scalar")]
    pub mean_f1: f64,
    pub kappa: f64,
    pub confusion: Vec<Vec<u64>>,
}

impl MetricReport {
    pub fn from_matrix(scope: impl Into<String>, cm: &ConfusionMatrix) -> Result<Self> {
        let scores = iou_f1(cm);
        Ok(Self {
            scope: scope.into(),
            pixels: cm.total(),
            accuracy: accuracy(cm)?,
            recall: recall(cm),
            precision: precision(cm),
            iou: scores.iou,
            f1: scores.f1,
            mean_iou: scores.mean_iou,
            mean_f1: scores.mean_f1,
            kappa: cohen_kappa(cm)?,
            confusion: cm.rows(),
        })
    }
}

/// One country's matrix together with the test fold of the model that
/// produced its predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct CountryScore {
    pub country: String,
    pub model_test_fold: usize,
    pub cm: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryReports {
    pub countries: Vec<MetricReport>,
    pub continental: MetricReport,
}

/// Per-country reports plus the continental report of the merged matrices.
///
/// A country must be scored by the model that held its fold out as the test
/// fold; anything else is leakage and fails hard.
pub fn per_country_report(scores: &[CountryScore], folds: &FoldAssignment) -> Result<CountryReports> {
    let first = scores.first().ok_or_else(|| Error::Empty("no country scores".into()))?;
    let mut total = ConfusionMatrix::zeros(first.cm.k);
    let mut by_country: BTreeMap<&str, ConfusionMatrix> = BTreeMap::new();
    for s in scores {
        let fold = folds
            .fold_of(&s.country)
            .ok_or_else(|| Error::Coverage(format!("country {} has no fold", s.country)))?;
        if fold != s.model_test_fold {
            return Err(Error::Leakage {
                country: s.country.clone(),
                fold,
                test_fold: s.model_test_fold,
            });
        }
        total = merge(&total, &s.cm)?;
        let entry = by_country
            .entry(s.country.as_str())
            .or_insert_with(|| ConfusionMatrix::zeros(s.cm.k));
        *entry = merge(entry, &s.cm)?;
    }
    let countries = by_country
        .iter()
        .filter(|(_, cm)| cm.total() > 0)
        .map(|(c, cm)| MetricReport::from_matrix(*c, cm))
        .collect::<Result<_>>()?;
    Ok(CountryReports {
        countries,
        continental: MetricReport::from_matrix("continent", &total)?,
    })
}

fn class_label(c: usize, k: usize) -> String {
    if k == CLASS_NAMES.len() {
        CLASS_NAMES[c].to_string()
    } else {
        c.to_string()
    }
}

/// Long-format `country,class,metric,value` rows for every per-country
/// per-class value. Undefined values are written as empty cells.
pub fn write_country_csv<W: Write>(reports: &[MetricReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["country", "class", "metric", "value"])?;
    for r in reports {
        let k = r.recall.len();
        for (metric, values) in [
            ("recall", &r.recall),
            ("precision", &r.precision),
            ("iou", &r.iou),
            ("f1", &r.f1),
        ] {
            for (c, v) in values.iter().enumerate() {
                let cell = if v.is_nan() { String::new() } else { v.to_string() };
                w.write_record([r.scope.as_str(), &class_label(c, k), metric, &cell])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
