//! Station labels, the train/validation/test split and the `BLDN` dataset file.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::binio;
use crate::encoding::{InputMatrix, NormRange};
use crate::error::{Error, Result};
use crate::flow::{sample_cp_at, CpDistribution};
use crate::geometry::{BladeProfile, Side};

pub const MAGIC: &[u8; 4] = b"BLDN";
pub const VERSION: u16 = 1;
pub const DEFAULT_INTERVAL: f64 = 0.1;
/// Slack absorbing round-off when a Cp range or value sits on a bin edge.
const EDGE_TOL: f64 = 1e-9;
const MANIFEST_LIMIT: usize = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub side: Side,
    pub cx: f64,
}

impl Station {
    pub fn new(side: Side, cx: f64) -> Self {
        Station { side, cx }
    }

    /// Nine stations per side at `x/c = 0.1 … 0.9`, pressure side first.
    pub fn standard() -> Vec<Station> {
        Side::BOTH
            .iter()
            .flat_map(|&side| (1..=9).map(move |k| Station::new(side, k as f64 / 10.0)))
            .collect()
    }

    /// File-name form, e.g. `suction_0.40`.
    pub fn name(&self) -> String {
        format!("{}_{:.2}", self.side, self.cx)
    }
}

impl fmt::Display for Station {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSpec {
    pub station: Station,
    pub cp_min: f64,
    pub interval: f64,
    pub n_labels: usize,
}

impl LabelSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.interval > 0.0 && self.interval.is_finite()) || !self.cp_min.is_finite() {
            return Err(Error::invalid(
                "label interval must be positive and cp_min finite",
            ));
        }
        if self.n_labels == 0 {
            return Err(Error::invalid("label spec needs at least one label"));
        }
        Ok(())
    }
}

/// Bins covering every value at one station, starting at the smallest.
pub fn compute_label_spec(station: Station, cp_values: &[f64], interval: f64) -> Result<LabelSpec> {
    if cp_values.is_empty() {
        return Err(Error::invalid(format!("no Cp values at {station}")));
    }
    if cp_values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("Cp values at {station}")));
    }
    if !(interval > 0.0 && interval.is_finite()) {
        return Err(Error::invalid("label interval must be positive"));
    }
    let lo = cp_values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = cp_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let n_labels = (((hi - lo) / interval - EDGE_TOL).ceil() as usize).max(1);
    Ok(LabelSpec {
        station,
        cp_min: lo,
        interval,
        n_labels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Label {
    pub index: usize,
    /// The value fell outside the spec's range and was clamped.
    pub clamped: bool,
}

/// `⌊(cp − cp_min) / interval⌋`, clamped into the label range.
pub fn cp_to_label(cp: f64, spec: &LabelSpec) -> Label {
    let raw = ((cp - spec.cp_min) / spec.interval + EDGE_TOL).floor();
    let top = spec.n_labels - 1;
    if raw < 0.0 || raw.is_nan() {
        return Label {
            index: 0,
            clamped: true,
        };
    }
    let raw = raw as usize;
    if raw > top {
        // the closed upper edge belongs to the last bin
        let upper = spec.cp_min + spec.n_labels as f64 * spec.interval;
        return Label {
            index: top,
            clamped: cp > upper + EDGE_TOL * spec.interval,
        };
    }
    Label {
        index: raw,
        clamped: false,
    }
}

pub fn label_to_cp_center(label: usize, spec: &LabelSpec) -> Result<f64> {
    if label >= spec.n_labels {
        return Err(Error::Range(format!(
            "label {label} outside 0..{} at {}",
            spec.n_labels, spec.station
        )));
    }
    Ok(spec.cp_min + (label as f64 + 0.5) * spec.interval)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            _ => Err(Error::invalid(format!("unknown split {s:?}"))),
        }
    }
}

/// Seeded shuffle: `⌊n/6⌋` validation, `⌊n/6⌋` test, the rest train.
pub fn split(n: usize, seed: u64) -> Result<Vec<Split>> {
    if n < 6 {
        return Err(Error::invalid(format!("cannot split {n} samples (need 6)")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let sixth = n / 6;
    let mut out = vec![Split::Train; n];
    for (rank, &i) in order.iter().enumerate() {
        if rank < sixth {
            out[i] = Split::Validation;
        } else if rank < 2 * sixth {
            out[i] = Split::Test;
        }
    }
    Ok(out)
}

/// One blade with its flow solution and image.
#[derive(Debug, Clone, PartialEq)]
pub struct BladeRecord {
    pub profile: BladeProfile,
    pub cp: CpDistribution,
    pub matrix: InputMatrix,
}

impl BladeRecord {
    fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        self.profile.write_to(w)?;
        self.cp.write_to(w)?;
        self.matrix.write_to(w)
    }

    fn read_from<R: Read>(r: &mut R, points_per_side: usize) -> Result<Self> {
        let profile = BladeProfile::read_from(r, points_per_side)?;
        let cp = CpDistribution::read_from(r, &profile)?;
        let matrix = InputMatrix::read_from(r)?;
        Ok(BladeRecord {
            profile,
            cp,
            matrix,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub blade_count: usize,
    pub requested: usize,
    pub points_per_side: usize,
    /// Blade ids dropped during generation, geometry or flow failures alike.
    pub skipped: Vec<u32>,
    pub split_seed: u64,
    pub split_counts: SplitCounts,
    pub norm: NormRange,
    pub label_specs: Vec<LabelSpec>,
    /// Station Cp values that were clamped into their label range.
    pub clamped_labels: usize,
    /// Largest wall-normal velocity over all solves, relative to the inlet speed.
    #[serde(default)]
    pub max_tangency_residual: f64,
    /// Free-form provenance of the generating run (config, seeds).
    #[serde(default)]
    pub source: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn of(assignment: &[Split]) -> Self {
        let count = |s| assignment.iter().filter(|&&a| a == s).count();
        SplitCounts {
            train: count(Split::Train),
            validation: count(Split::Validation),
            test: count(Split::Test),
        }
    }
}

/// Labels of one station, aligned with the bank's records.
#[derive(Debug, Clone)]
pub struct StationDataset {
    pub station: Station,
    pub label_spec: LabelSpec,
    pub labels: Vec<usize>,
}

/// All records plus the 18 station label sets and the split.
#[derive(Debug, Clone)]
pub struct DatasetBank {
    pub manifest: Manifest,
    pub records: Vec<BladeRecord>,
    pub split: Vec<Split>,
    pub stations: Vec<StationDataset>,
}

/// Station Cp for every record.
pub fn station_cp(records: &[BladeRecord], station: Station) -> Result<Vec<f64>> {
    records
        .iter()
        .map(|r| sample_cp_at(&r.cp, station.side, station.cx))
        .collect()
}

fn label_station(records: &[BladeRecord], spec: &LabelSpec) -> Result<(StationDataset, usize)> {
    let mut clamped = 0;
    let labels = station_cp(records, spec.station)?
        .into_iter()
        .map(|cp| {
            let l = cp_to_label(cp, spec);
            clamped += l.clamped as usize;
            l.index
        })
        .collect();
    Ok((
        StationDataset {
            station: spec.station,
            label_spec: spec.clone(),
            labels,
        },
        clamped,
    ))
}

/// Inputs to [`DatasetBank::build`] beyond the records themselves.
#[derive(Debug, Clone)]
pub struct BankOptions {
    pub stations: Vec<Station>,
    pub interval: f64,
    pub split_seed: u64,
    pub requested: usize,
    pub skipped: Vec<u32>,
    pub max_tangency_residual: f64,
    pub source: serde_json::Value,
}

impl DatasetBank {
    /// Label specs come from the whole library, never from one split.
    pub fn build(mut records: Vec<BladeRecord>, opts: BankOptions) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::invalid("dataset has no blades"));
        }
        records.sort_by_key(|r| r.profile.id);
        let points_per_side = records[0].profile.points_per_side();
        if records
            .iter()
            .any(|r| r.profile.points_per_side() != points_per_side)
        {
            return Err(Error::shape("records differ in points per side"));
        }
        for r in &mut records {
            // store exactly what the f32 file format will hold
            for v in r.matrix.cells.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
        let norm = NormRange::of_library(records.iter().map(|r| &r.profile))?;
        let split = split(records.len(), opts.split_seed)?;
        let mut label_specs = Vec::with_capacity(opts.stations.len());
        for &st in &opts.stations {
            let cps = station_cp(&records, st)?;
            label_specs.push(compute_label_spec(st, &cps, opts.interval)?);
        }
        let mut stations = Vec::with_capacity(label_specs.len());
        let mut clamped_labels = 0;
        for spec in &label_specs {
            let (ds, c) = label_station(&records, spec)?;
            clamped_labels += c;
            stations.push(ds);
        }
        let manifest = Manifest {
            blade_count: records.len(),
            requested: opts.requested,
            points_per_side,
            skipped: opts.skipped,
            split_seed: opts.split_seed,
            split_counts: SplitCounts::of(&split),
            norm,
            label_specs,
            clamped_labels,
            max_tangency_residual: opts.max_tangency_residual,
            source: opts.source,
        };
        Ok(DatasetBank {
            manifest,
            records,
            split,
            stations,
        })
    }

    pub fn station(&self, station: Station) -> Option<&StationDataset> {
        self.stations.iter().find(|s| s.station == station)
    }

    /// Record indices in `which`, in id order.
    pub fn indices(&self, which: Split) -> Vec<usize> {
        (0..self.records.len())
            .filter(|&i| self.split[i] == which)
            .collect()
    }

    pub fn position_of(&self, blade_id: u32) -> Option<usize> {
        self.records
            .binary_search_by_key(&blade_id, |r| r.profile.id)
            .ok()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        binio::write_u16(w, VERSION)?;
        binio::write_prefixed_str(w, &serde_json::to_string(&self.manifest)?)?;
        for r in &self.records {
            r.write_to(w)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    /// Everything is read and checked before a bank is returned.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        binio::expect_magic(r, MAGIC)?;
        let version = binio::read_u16(r)?;
        if version != VERSION {
            return Err(Error::format(format!(
                "dataset version {version}, this build reads {VERSION}"
            )));
        }
        let manifest: Manifest =
            serde_json::from_str(&binio::read_prefixed_str(r, MANIFEST_LIMIT)?)
                .map_err(|e| Error::format(format!("manifest: {e}")))?;
        let mut records = Vec::with_capacity(manifest.blade_count);
        for _ in 0..manifest.blade_count {
            records.push(BladeRecord::read_from(r, manifest.points_per_side)?);
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::format("trailing bytes after the last record"));
        }
        let split = split(records.len(), manifest.split_seed)?;
        if SplitCounts::of(&split) != manifest.split_counts {
            return Err(Error::format("split counts disagree with the manifest"));
        }
        let mut stations = Vec::with_capacity(manifest.label_specs.len());
        for spec in &manifest.label_specs {
            spec.validate()?;
            stations.push(label_station(&records, spec)?.0);
        }
        Ok(DatasetBank {
            manifest,
            records,
            split,
            stations,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    /// Hex SHA-256 of the serialized bank.
    pub fn digest(&self) -> Result<String> {
        let bytes = self.to_bytes()?;
        Ok(Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect())
    }
}
