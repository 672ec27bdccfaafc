//! Label-adjacency accuracy and the report tables built from it.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{label_to_cp_center, DatasetBank, Split, Station};
use crate::error::{Error, Result};
use crate::models::{ArchKind, ClassifierBank};

/// Error class in percent: `2k + 1` for a label distance `k`.
pub fn adjacency_error(pred: usize, truth: usize) -> usize {
    2 * pred.abs_diff(truth) + 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationAccuracy {
    pub station: Station,
    pub samples: usize,
    pub within_1pct: f64,
    pub within_3pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjacencyResult {
    pub split: Split,
    pub stations: Vec<StationAccuracy>,
    /// Sample-weighted over stations.
    pub within_1pct: f64,
    pub within_3pct: f64,
    /// Unweighted mean of station fractions.
    pub uniform_within_1pct: f64,
    pub uniform_within_3pct: f64,
}

/// Scores `(pred, truth)` pairs of one station.
pub fn station_accuracy(station: Station, pairs: &[(usize, usize)]) -> StationAccuracy {
    let n = pairs.len();
    let exact = pairs.iter().filter(|(p, t)| p == t).count();
    let near = pairs.iter().filter(|(p, t)| p.abs_diff(*t) <= 1).count();
    let frac = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    StationAccuracy {
        station,
        samples: n,
        within_1pct: frac(exact),
        within_3pct: frac(near),
    }
}

pub fn aggregate(split: Split, stations: Vec<StationAccuracy>) -> Result<AdjacencyResult> {
    let total: usize = stations.iter().map(|s| s.samples).sum();
    if total == 0 {
        return Err(Error::invalid(format!("{split} split is empty")));
    }
    let weighted = |f: fn(&StationAccuracy) -> f64| {
        stations
            .iter()
            .map(|s| f(s) * s.samples as f64)
            .sum::<f64>()
            / total as f64
    };
    let uniform = |f: fn(&StationAccuracy) -> f64| {
        stations.iter().map(f).sum::<f64>() / stations.len() as f64
    };
    Ok(AdjacencyResult {
        split,
        within_1pct: weighted(|s| s.within_1pct),
        within_3pct: weighted(|s| s.within_3pct),
        uniform_within_1pct: uniform(|s| s.within_1pct),
        uniform_within_3pct: uniform(|s| s.within_3pct),
        stations,
    })
}

/// Predictions of every station model on one split, in `bank.indices(split)` order.
pub fn predict_split(
    models: &ClassifierBank,
    data: &DatasetBank,
    split: Split,
) -> Result<Vec<Vec<usize>>> {
    let idx = data.indices(split);
    let inputs: Vec<_> = idx.iter().map(|&i| &data.records[i].matrix).collect();
    data.stations
        .par_iter()
        .map(|sd| {
            let model = models
                .model(sd.station)
                .ok_or_else(|| Error::invalid(format!("bank has no model for {}", sd.station)))?;
            if model.meta.label_spec != sd.label_spec {
                return Err(Error::invalid(format!(
                    "{}: model was trained on different labels",
                    sd.station
                )));
            }
            model.predict_many(&inputs)
        })
        .collect()
}

pub fn evaluate_bank(
    models: &ClassifierBank,
    data: &DatasetBank,
    split: Split,
) -> Result<AdjacencyResult> {
    if data.indices(split).is_empty() {
        return Err(Error::invalid(format!("{split} split is empty")));
    }
    let preds = predict_split(models, data, split)?;
    evaluate_predictions(data, split, &preds)
}

/// Scores per-station predictions given in `data.indices(split)` order.
pub fn evaluate_predictions(
    data: &DatasetBank,
    split: Split,
    preds: &[Vec<usize>],
) -> Result<AdjacencyResult> {
    let idx = data.indices(split);
    if preds.len() != data.stations.len() {
        return Err(Error::shape(format!(
            "{} prediction sets for {} stations",
            preds.len(),
            data.stations.len()
        )));
    }
    let stations = data
        .stations
        .iter()
        .zip(preds)
        .map(|(sd, p)| {
            if p.len() != idx.len() {
                return Err(Error::shape(format!(
                    "{}: {} predictions for {} samples",
                    sd.station,
                    p.len(),
                    idx.len()
                )));
            }
            let pairs: Vec<_> = p
                .iter()
                .zip(&idx)
                .map(|(&p, &i)| (p, sd.labels[i]))
                .collect();
            Ok(station_accuracy(sd.station, &pairs))
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate(split, stations)
}

/// Share of the most frequent true label at each station on `split`.
pub fn majority_baseline(data: &DatasetBank, split: Split) -> Vec<f64> {
    let idx = data.indices(split);
    data.stations
        .iter()
        .map(|sd| {
            let mut counts = vec![0usize; sd.label_spec.n_labels];
            idx.iter().for_each(|&i| counts[sd.labels[i]] += 1);
            let top = counts.iter().copied().max().unwrap_or(0);
            if idx.is_empty() {
                0.0
            } else {
                top as f64 / idx.len() as f64
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Figure9Row {
    pub side: String,
    pub cx: f64,
    pub within_1pct: f64,
    pub within_3pct: f64,
}

pub fn figure9(result: &AdjacencyResult) -> Vec<Figure9Row> {
    result
        .stations
        .iter()
        .map(|s| Figure9Row {
            side: s.station.side.name().to_string(),
            cx: s.station.cx,
            within_1pct: s.within_1pct,
            within_3pct: s.within_3pct,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRow {
    pub station: Station,
    pub truth: usize,
    pub predicted: usize,
    pub truth_cp: f64,
    pub predicted_cp: f64,
    /// Station Cp from the flow solution before binning.
    pub solved_cp: f64,
    pub error_class: usize,
}

impl ExampleRow {
    pub fn tag(&self) -> String {
        format!("{}%", self.error_class)
    }
}

/// Per-station comparison for one test-split blade.
pub fn example_report(
    models: &ClassifierBank,
    data: &DatasetBank,
    blade_id: u32,
) -> Result<Vec<ExampleRow>> {
    let pos = data
        .position_of(blade_id)
        .ok_or_else(|| Error::invalid(format!("blade {blade_id} is not in the dataset")))?;
    if data.split[pos] != Split::Test {
        return Err(Error::invalid(format!(
            "blade {blade_id} is in the {} split, not test",
            data.split[pos]
        )));
    }
    let record = &data.records[pos];
    data.stations
        .iter()
        .map(|sd| {
            let model = models
                .model(sd.station)
                .ok_or_else(|| Error::invalid(format!("bank has no model for {}", sd.station)))?;
            let predicted = model.predict(&record.matrix)?;
            let truth = sd.labels[pos];
            Ok(ExampleRow {
                station: sd.station,
                truth,
                predicted,
                truth_cp: label_to_cp_center(truth, &sd.label_spec)?,
                predicted_cp: label_to_cp_center(predicted, &sd.label_spec)?,
                solved_cp: crate::flow::sample_cp_at(&record.cp, sd.station.side, sd.station.cx)?,
                error_class: adjacency_error(predicted, truth),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2Row {
    pub arch: ArchKind,
    pub depth: Option<usize>,
    pub within_1pct: f64,
    pub within_3pct: f64,
    pub uniform_within_1pct: f64,
    pub uniform_within_3pct: f64,
}

impl Table2Row {
    pub fn new(models: &ClassifierBank, result: &AdjacencyResult) -> Self {
        let m = &models.manifest;
        Table2Row {
            arch: m.arch,
            depth: m.arch.has_conv().then_some(m.conv_depth),
            within_1pct: result.within_1pct,
            within_3pct: result.within_3pct,
            uniform_within_1pct: result.uniform_within_1pct,
            uniform_within_3pct: result.uniform_within_3pct,
        }
    }
}

fn fmt_frac(v: f64) -> String {
    format!("{v:.6}")
}

pub fn write_table2<W: Write>(w: W, rows: &[Table2Row]) -> Result<()> {
    let mut c = csv::Writer::from_writer(w);
    c.write_record([
        "arch",
        "depth",
        "within_1pct",
        "within_3pct",
        "uniform_within_1pct",
        "uniform_within_3pct",
    ])?;
    for r in rows {
        c.write_record([
            r.arch.name().to_string(),
            r.depth.map_or_else(String::new, |d| d.to_string()),
            fmt_frac(r.within_1pct),
            fmt_frac(r.within_3pct),
            fmt_frac(r.uniform_within_1pct),
            fmt_frac(r.uniform_within_3pct),
        ])?;
    }
    c.flush()?;
    Ok(())
}

pub fn write_figure9<W: Write>(w: W, rows: &[Figure9Row]) -> Result<()> {
    let mut c = csv::Writer::from_writer(w);
    c.write_record(["side", "cx", "within_1pct", "within_3pct"])?;
    for r in rows {
        c.write_record([
            r.side.clone(),
            format!("{:.2}", r.cx),
            fmt_frac(r.within_1pct),
            fmt_frac(r.within_3pct),
        ])?;
    }
    c.flush()?;
    Ok(())
}

pub fn write_example<W: Write>(w: W, rows: &[ExampleRow]) -> Result<()> {
    let mut c = csv::Writer::from_writer(w);
    c.write_record([
        "side",
        "cx",
        "cfd_label",
        "predicted_label",
        "cfd_cp",
        "predicted_cp",
        "solved_cp",
        "error",
    ])?;
    for r in rows {
        c.write_record([
            r.station.side.name().to_string(),
            format!("{:.2}", r.station.cx),
            r.truth.to_string(),
            r.predicted.to_string(),
            format!("{:.6}", r.truth_cp),
            format!("{:.6}", r.predicted_cp),
            format!("{:.6}", r.solved_cp),
            r.tag(),
        ])?;
    }
    c.flush()?;
    Ok(())
}
