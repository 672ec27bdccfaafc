//! End-to-end stages behind the command-line tool. Each stage reads and writes
//! plain files under an output directory and copies the config next to them.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::dataset::{BankOptions, BladeRecord, DatasetBank, Split};
use crate::encoding::{encode, NormRange};
use crate::error::{Error, Result};
use crate::eval::{self, AdjacencyResult, Figure9Row, Table2Row};
use crate::flow::{solve_detailed, TANGENCY_TOL};
use crate::geometry::{build_datum, generate_library, SkippedBlade};
use crate::models::{self, count_activated, inspect_activations, BankArch, ClassifierBank};
use crate::pgm;

pub const DATASET_FILE: &str = "dataset.bin";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SKIP_LOG: &str = "skipped.csv";

/// Library generation, flow solves, encoding and labeling.
pub fn generate(cfg: &ExperimentConfig) -> Result<(DatasetBank, Vec<SkippedBlade>)> {
    cfg.validate()?;
    let datum = build_datum(&cfg.datum)?;
    let library = generate_library(&datum, &cfg.sweep, cfg.library_seed)?;
    log::info!(
        "library: {} blades, {} rejected geometries",
        library.profiles.len(),
        library.skipped.len()
    );
    let solved: Vec<_> = library
        .profiles
        .into_par_iter()
        .map(|p| {
            let r = solve_detailed(&p, &cfg.flow, &cfg.solver).and_then(|s| {
                if s.tangency_residual < TANGENCY_TOL {
                    Ok((s.distribution, s.tangency_residual))
                } else {
                    Err(Error::Residual {
                        residual: s.tangency_residual,
                    })
                }
            });
            (p, r)
        })
        .collect();
    let mut skipped = library.skipped;
    let mut solved_ok = Vec::with_capacity(solved.len());
    let mut max_residual: f64 = 0.0;
    for (p, r) in solved {
        match r {
            Ok((cp, res)) => {
                max_residual = max_residual.max(res);
                solved_ok.push((p, cp));
            }
            Err(e) => {
                log::warn!("blade {}: flow solve failed: {e}", p.id);
                skipped.push(SkippedBlade {
                    id: p.id,
                    reason: e.to_string(),
                });
            }
        }
    }
    skipped.sort_by_key(|s| s.id);
    let requested = library.requested;
    if skipped.len() as f64 > cfg.max_failure_fraction * requested as f64 {
        return Err(Error::invalid(format!(
            "{} of {requested} blades failed, above the {:.1}% limit",
            skipped.len(),
            100.0 * cfg.max_failure_fraction
        )));
    }
    let norm = NormRange::of_library(solved_ok.iter().map(|(p, _)| p))?;
    let records = solved_ok
        .into_iter()
        .map(|(profile, cp)| {
            let matrix = encode(&profile, &norm)?.matrix;
            Ok(BladeRecord {
                profile,
                cp,
                matrix,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let bank = DatasetBank::build(
        records,
        BankOptions {
            stations: cfg.stations.clone(),
            interval: cfg.label_interval,
            split_seed: cfg.split_seed,
            requested,
            skipped: skipped.iter().map(|s| s.id).collect(),
            max_tangency_residual: max_residual,
            source: serde_json::json!({
                "datum": cfg.datum,
                "sweep": cfg.sweep,
                "library_seed": cfg.library_seed,
                "flow": cfg.flow,
                "solver": cfg.solver,
            }),
        },
    )?;
    Ok((bank, skipped))
}

/// `gen`: writes the dataset, its manifest, the skip log and the config.
pub fn run_gen(cfg: &ExperimentConfig, out: &Path) -> Result<DatasetBank> {
    let (bank, skipped) = generate(cfg)?;
    fs::create_dir_all(out)?;
    bank.save(&out.join(DATASET_FILE))?;
    fs::write(
        out.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&bank.manifest)? + "\n",
    )?;
    let mut w = csv::Writer::from_path(out.join(SKIP_LOG))?;
    w.write_record(["blade_id", "reason"])?;
    for s in &skipped {
        w.write_record([s.id.to_string(), s.reason.clone()])?;
    }
    w.flush()?;
    cfg.save_into(out)?;
    Ok(bank)
}

/// Directory name of a bank, e.g. `cnn4_nn2_d16` or `nn2`.
pub fn bank_name(arch: &BankArch) -> String {
    if arch.kind.has_conv() {
        format!("{}_d{}", arch.kind, arch.conv_depth)
    } else {
        arch.kind.to_string()
    }
}

/// `train`: one bank directory per architecture under `out`.
pub fn run_train(
    cfg: &ExperimentConfig,
    data: &DatasetBank,
    archs: &[BankArch],
    out: &Path,
) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let mut dirs = Vec::with_capacity(archs.len());
    for arch in archs {
        let dir = out.join(bank_name(arch));
        let bank = models::train_bank(arch, data, &cfg.train, cfg.train_seed, None)?;
        bank.save(&dir)?;
        cfg.save_into(&dir)?;
        log::info!("wrote {}", dir.display());
        dirs.push(dir);
    }
    Ok(dirs)
}

/// `eval`: `table2.csv` with one row per bank and `figure9.csv` with the
/// per-station rows of every bank.
pub fn run_eval(
    cfg: &ExperimentConfig,
    data: &DatasetBank,
    banks: &[PathBuf],
    split: Split,
    out: &Path,
) -> Result<Vec<(ClassifierBank, AdjacencyResult)>> {
    fs::create_dir_all(out)?;
    let mut results = Vec::with_capacity(banks.len());
    for dir in banks {
        let bank = ClassifierBank::load(dir)?;
        let digest = data.digest()?;
        if bank.manifest.dataset_digest != digest {
            log::warn!("{} was trained on a different dataset", dir.display());
        }
        let r = eval::evaluate_bank(&bank, data, split)?;
        results.push((bank, r));
    }
    let rows: Vec<Table2Row> = results.iter().map(|(b, r)| Table2Row::new(b, r)).collect();
    eval::write_table2(File::create(out.join("table2.csv"))?, &rows)?;

    let mut w = csv::Writer::from_path(out.join("figure9.csv"))?;
    w.write_record(["arch", "depth", "side", "cx", "within_1pct", "within_3pct"])?;
    for ((_, r), row) in results.iter().zip(&rows) {
        for Figure9Row {
            side,
            cx,
            within_1pct,
            within_3pct,
        } in eval::figure9(r)
        {
            w.write_record([
                row.arch.to_string(),
                row.depth.map_or_else(String::new, |d| d.to_string()),
                side,
                format!("{cx:.2}"),
                format!("{within_1pct:.6}"),
                format!("{within_3pct:.6}"),
            ])?;
        }
    }
    w.flush()?;

    let base = eval::majority_baseline(data, split);
    let mut w = csv::Writer::from_path(out.join("baseline.csv"))?;
    w.write_record(["side", "cx", "n_labels", "majority_fraction"])?;
    for (sd, b) in data.stations.iter().zip(base) {
        w.write_record([
            sd.station.side.name().to_string(),
            format!("{:.2}", sd.station.cx),
            sd.label_spec.n_labels.to_string(),
            format!("{b:.6}"),
        ])?;
    }
    w.flush()?;
    cfg.save_into(out)?;
    Ok(results)
}

/// `report`: `example_<id>.csv` for one test blade.
pub fn run_report(
    cfg: &ExperimentConfig,
    data: &DatasetBank,
    bank_dir: &Path,
    blade_id: u32,
    out: &Path,
) -> Result<PathBuf> {
    let bank = ClassifierBank::load(bank_dir)?;
    let rows = eval::example_report(&bank, data, blade_id)?;
    fs::create_dir_all(out)?;
    let path = out.join(format!("example_{blade_id}.csv"));
    eval::write_example(File::create(&path)?, &rows)?;
    cfg.save_into(out)?;
    Ok(path)
}

/// Convolution layer selector of `inspect`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerChoice {
    Index(usize),
    Last,
}

impl std::str::FromStr for LayerChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last" => Ok(LayerChoice::Last),
            "first" => Ok(LayerChoice::Index(0)),
            _ => s.parse().map(LayerChoice::Index).map_err(|_| {
                Error::invalid(format!("layer must be an index, first or last, got {s:?}"))
            }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct InspectSummary {
    pub station: crate::dataset::Station,
    pub conv_index: usize,
    pub maps: usize,
    pub activated: usize,
    pub dir: PathBuf,
}

/// `inspect`: one PGM per feature map and per kernel of the chosen layer,
/// for every station model (or only `station`).
pub fn run_inspect(
    cfg: &ExperimentConfig,
    data: &DatasetBank,
    bank_dir: &Path,
    blade_id: u32,
    layer: LayerChoice,
    station: Option<crate::dataset::Station>,
    out: &Path,
) -> Result<Vec<InspectSummary>> {
    let bank = ClassifierBank::load(bank_dir)?;
    let pos = data
        .position_of(blade_id)
        .ok_or_else(|| Error::invalid(format!("blade {blade_id} is not in the dataset")))?;
    let input = &data.records[pos].matrix;
    let mut summaries = Vec::new();
    for model in &bank.models {
        if station.is_some_and(|s| s != model.meta.station) {
            continue;
        }
        let convs = models::conv_layers(&model.network);
        if convs.is_empty() {
            return Err(Error::invalid(format!(
                "{} has no convolution layers",
                bank.manifest.arch
            )));
        }
        let conv_index = match layer {
            LayerChoice::Last => convs.len() - 1,
            LayerChoice::Index(i) => i,
        };
        let act = inspect_activations(&model.network, input, conv_index)?;
        let dir = out.join(format!(
            "blade{blade_id}_{}_conv{conv_index}",
            model.meta.station.name()
        ));
        fs::create_dir_all(&dir)?;
        let (d, h, w) = (act.maps.shape[0], act.maps.shape[1], act.maps.shape[2]);
        let hi = act.maps.values.iter().cloned().fold(0.0, f64::max);
        for (k, map) in act.maps.values.chunks_exact(h * w).enumerate() {
            let mut f = BufWriter::new(File::create(dir.join(format!("map_{k:02}.pgm")))?);
            pgm::write(&mut f, w, h, map, 0.0, hi)?;
            f.flush()?;
        }
        let ks = act.kernels.shape[2];
        let (klo, khi) = act
            .kernels
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            });
        for (k, kernel) in act.kernels.values.chunks_exact(ks * ks).enumerate() {
            let mut f = BufWriter::new(File::create(dir.join(format!("kernel_{k:03}.pgm")))?);
            pgm::write(&mut f, ks, ks, kernel, klo, khi)?;
            f.flush()?;
        }
        let activated = count_activated(&act.maps, cfg.activation_fraction);
        let mut f = File::create(dir.join("activated.txt"))?;
        writeln!(f, "{activated}")?;
        summaries.push(InspectSummary {
            station: model.meta.station,
            conv_index,
            maps: d,
            activated,
            dir,
        });
    }
    if summaries.is_empty() {
        return Err(Error::invalid("no station matched"));
    }
    cfg.save_into(out)?;
    Ok(summaries)
}
