//! The three station classifiers, their training loop and feature-map inspection.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{DatasetBank, LabelSpec, Split, Station, StationDataset};
use crate::encoding::{InputMatrix, CELLS, GRID};
use crate::error::{Error, Result};
use crate::nn::io::{read_model, round_to_f32, write_model};
use crate::nn::{
    argmax, optimizer_step, softmax, Activation, ConvLayer, DenseLayer, Layer, Mode, Network,
    OptimizerConfig, OptimizerKind, OptimizerState, Padding, Shape, Tensor,
};

pub const KERNEL: usize = 5;
pub const CONV_DEPTHS: [usize; 4] = [8, 16, 32, 64];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    Nn2,
    Cnn2Nn2,
    Cnn4Nn2,
}

impl ArchKind {
    pub const ALL: [ArchKind; 3] = [ArchKind::Nn2, ArchKind::Cnn2Nn2, ArchKind::Cnn4Nn2];

    pub fn name(self) -> &'static str {
        match self {
            ArchKind::Nn2 => "nn2",
            ArchKind::Cnn2Nn2 => "cnn2_nn2",
            ArchKind::Cnn4Nn2 => "cnn4_nn2",
        }
    }

    pub fn has_conv(self) -> bool {
        self != ArchKind::Nn2
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ArchKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown architecture {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub kind: ArchKind,
    /// Kernels per convolution layer; ignored by `nn2`.
    pub conv_depth: usize,
    pub fc_hidden: usize,
    pub n_classes: usize,
    pub keep_prob: f64,
}

impl ArchSpec {
    pub fn new(kind: ArchKind, conv_depth: usize, n_classes: usize) -> Self {
        ArchSpec {
            kind,
            conv_depth,
            fc_hidden: 256,
            n_classes,
            keep_prob: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.has_conv() && !CONV_DEPTHS.contains(&self.conv_depth) {
            return Err(Error::invalid(format!(
                "conv depth {} is not one of {CONV_DEPTHS:?}",
                self.conv_depth
            )));
        }
        if self.n_classes == 0 || self.fc_hidden == 0 {
            return Err(Error::invalid("n_classes and fc_hidden must be positive"));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::invalid("keep_prob outside (0, 1]"));
        }
        Ok(())
    }
}

/// Untrained network: identity input standardization, zero parameters.
pub fn build(arch: &ArchSpec) -> Result<Network> {
    arch.validate()?;
    let d = arch.conv_depth;
    let conv = |in_depth| Layer::Conv(ConvLayer::zeros(in_depth, d, KERNEL, Padding::Same));
    let mut layers = vec![Layer::Standardize {
        mean: vec![0.0; CELLS],
        scale: vec![1.0; CELLS],
    }];
    let flat = match arch.kind {
        ArchKind::Nn2 => CELLS,
        ArchKind::Cnn2Nn2 => {
            layers.extend([conv(1), Layer::Relu, Layer::MaxPool]);
            layers.extend([conv(d), Layer::Relu, Layer::MaxPool]);
            d * 25
        }
        ArchKind::Cnn4Nn2 => {
            layers.extend([conv(1), Layer::Relu, conv(d), Layer::Relu, Layer::MaxPool]);
            layers.extend([conv(d), Layer::Relu, conv(d), Layer::Relu, Layer::MaxPool]);
            d * 25
        }
    };
    layers.extend([
        Layer::Dense(DenseLayer::zeros(
            flat,
            arch.fc_hidden,
            Activation::Identity,
        )),
        Layer::Relu,
        Layer::Dropout {
            keep_prob: arch.keep_prob,
        },
        Layer::Dense(DenseLayer::zeros(
            arch.fc_hidden,
            arch.n_classes,
            Activation::Softmax,
        )),
    ]);
    Network::new(Shape::new(1, GRID, GRID), layers)
}

/// Indices of the convolution layers within `net.layers`.
pub fn conv_layers(net: &Network) -> Vec<usize> {
    net.layers
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, Layer::Conv(_)))
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping; `None` runs
    /// every epoch.
    pub patience: Option<usize>,
    /// Standardize each input cell with training-split statistics.
    pub standardize_inputs: bool,
    /// Lower bound on the per-cell standard deviation used for scaling.
    pub std_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerConfig {
                kind: OptimizerKind::Adam,
                learning_rate: 1e-3,
                ..OptimizerConfig::default()
            },
            batch_size: 64,
            max_epochs: 20,
            patience: Some(8),
            standardize_inputs: true,
            std_floor: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::invalid("batch_size and max_epochs must be positive"));
        }
        if !(self.std_floor > 0.0) {
            return Err(Error::invalid("std_floor must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// Running accuracy over the epoch's mini-batches (dropout active).
    pub train_accuracy: f64,
    pub validation_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationMeta {
    pub station: Station,
    pub arch: ArchSpec,
    pub label_spec: LabelSpec,
    pub seed: u64,
    pub best_epoch: usize,
    pub curve: Vec<EpochStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationModel {
    pub meta: StationMeta,
    pub network: Network,
}

impl StationModel {
    pub fn station(&self) -> Station {
        self.meta.station
    }

    pub fn best_validation_accuracy(&self) -> f64 {
        self.meta
            .curve
            .iter()
            .find(|e| e.epoch == self.meta.best_epoch)
            .map_or(0.0, |e| e.validation_accuracy)
    }

    pub fn probabilities(&self, m: &InputMatrix) -> Result<Vec<f64>> {
        Ok(softmax(&self.network.logits(&m.cells, 1)?))
    }

    pub fn predict(&self, m: &InputMatrix) -> Result<usize> {
        predict(self, m)
    }

    pub fn predict_many(&self, ms: &[&InputMatrix]) -> Result<Vec<usize>> {
        let k = self.network.output_len();
        let mut out = Vec::with_capacity(ms.len());
        for chunk in ms.chunks(256) {
            let x: Vec<f64> = chunk.iter().flat_map(|m| m.cells.iter().copied()).collect();
            let logits = self.network.logits(&x, chunk.len())?;
            out.extend(logits.chunks_exact(k).map(argmax));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write_model(&mut w, &self.network, &serde_json::to_value(&self.meta)?)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (network, meta) = read_model(&mut BufReader::new(File::open(path)?))?;
        let meta: StationMeta = serde_json::from_value(meta)
            .map_err(|e| Error::format(format!("model metadata: {e}")))?;
        Ok(StationModel { meta, network })
    }
}

/// Largest softmax output; the lowest index wins ties.
pub fn predict(model: &StationModel, m: &InputMatrix) -> Result<usize> {
    Ok(argmax(&model.network.logits(&m.cells, 1)?))
}

fn gather(bank: &DatasetBank, idx: &[usize]) -> Vec<f64> {
    idx.iter()
        .flat_map(|&i| bank.records[i].matrix.cells.iter().copied())
        .collect()
}

fn accuracy(net: &Network, x: &[f64], labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Ok(0.0);
    }
    let k = net.output_len();
    let mut correct = 0;
    for (xs, ls) in x.chunks(256 * CELLS).zip(labels.chunks(256)) {
        let logits = net.logits(xs, ls.len())?;
        correct += logits
            .chunks_exact(k)
            .zip(ls)
            .filter(|(row, &l)| argmax(row) == l)
            .count();
    }
    Ok(correct as f64 / labels.len() as f64)
}

/// Per-cell mean and inverse standard deviation of the training inputs.
fn input_statistics(x: &[f64], n: usize, floor: f64) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; CELLS];
    for row in x.chunks_exact(CELLS) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; CELLS];
    for row in x.chunks_exact(CELLS) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let scale = var
        .iter()
        .map(|s| 1.0 / (s / n as f64).sqrt().max(floor))
        .collect();
    (mean, scale)
}

fn divergence(station: Station, epoch: usize) -> Error {
    Error::Divergence {
        station: station.name(),
        epoch,
    }
}

/// Trains on the training split, keeping the parameters of the epoch with the
/// best validation accuracy (earliest on ties). Returned parameters are
/// rounded to `f32` so the model equals its saved form.
pub fn train_station(
    arch: &ArchSpec,
    bank: &DatasetBank,
    data: &StationDataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<StationModel> {
    cfg.validate()?;
    let station = data.station;
    if arch.n_classes != data.label_spec.n_labels {
        return Err(Error::invalid(format!(
            "{station}: architecture has {} classes, labels have {}",
            arch.n_classes, data.label_spec.n_labels
        )));
    }
    let train_idx = bank.indices(Split::Train);
    let val_idx = bank.indices(Split::Validation);
    if train_idx.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let train_x = gather(bank, &train_idx);
    let train_y: Vec<usize> = train_idx.iter().map(|&i| data.labels[i]).collect();
    let val_x = gather(bank, &val_idx);
    let val_y: Vec<usize> = val_idx.iter().map(|&i| data.labels[i]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = build(arch)?;
    net.init(&mut rng);
    if cfg.standardize_inputs {
        let (m, s) = input_statistics(&train_x, train_idx.len(), cfg.std_floor);
        net.layers[0] = Layer::Standardize { mean: m, scale: s };
    }

    let mut state = OptimizerState::new();
    let mut order: Vec<usize> = (0..train_idx.len()).collect();
    let mut curve = Vec::with_capacity(cfg.max_epochs);
    let mut best: Option<(f64, usize, Network)> = None;
    let mut bx = Vec::with_capacity(cfg.batch_size * CELLS);
    let mut by = Vec::with_capacity(cfg.batch_size);
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            bx.clear();
            by.clear();
            for &i in batch {
                bx.extend_from_slice(&train_x[i * CELLS..(i + 1) * CELLS]);
                by.push(train_y[i]);
            }
            let g = net
                .loss_gradients(&bx, &by, Mode::Train, &mut rng, false)
                .map_err(|_| divergence(station, epoch))?;
            if !g.loss.is_finite() {
                return Err(divergence(station, epoch));
            }
            loss_sum += g.loss * batch.len() as f64;
            correct += g.correct;
            optimizer_step(&mut net.params_mut(), &g.params, &mut state, &cfg.optimizer)
                .map_err(|_| divergence(station, epoch))?;
        }
        let val_acc = if val_y.is_empty() {
            0.0
        } else {
            accuracy(&net, &val_x, &val_y).map_err(|_| divergence(station, epoch))?
        };
        curve.push(EpochStats {
            epoch,
            train_loss: loss_sum / train_idx.len() as f64,
            train_accuracy: correct as f64 / train_idx.len() as f64,
            validation_accuracy: val_acc,
        });
        log::debug!(
            "{station} epoch {epoch}: loss {:.4} val {val_acc:.4}",
            loss_sum / train_idx.len() as f64
        );
        if best.as_ref().is_none_or(|b| val_acc > b.0) {
            best = Some((val_acc, epoch, net.clone()));
        }
        if let (Some(p), Some(b)) = (cfg.patience, best.as_ref()) {
            if epoch - b.1 >= p {
                break;
            }
        }
    }
    let (_, best_epoch, mut network) = best.expect("at least one epoch");
    round_to_f32(&mut network);
    Ok(StationModel {
        meta: StationMeta {
            station,
            arch: *arch,
            label_spec: data.label_spec.clone(),
            seed,
            best_epoch,
            curve,
        },
        network,
    })
}

/// Seed of one station, a pure function of the master seed and the station name.
pub fn station_seed(master: u64, station: Station) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(station.name().as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankManifest {
    pub arch: ArchKind,
    pub conv_depth: usize,
    pub fc_hidden: usize,
    pub keep_prob: f64,
    pub master_seed: u64,
    pub train: TrainConfig,
    pub dataset_digest: String,
    pub stations: Vec<BankEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankEntry {
    pub station: Station,
    pub file: String,
    pub seed: u64,
    pub n_classes: usize,
    pub best_epoch: usize,
}

#[derive(Debug, Clone)]
pub struct ClassifierBank {
    pub manifest: BankManifest,
    pub models: Vec<StationModel>,
}

/// Architecture and training settings shared by every station of a bank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BankArch {
    pub kind: ArchKind,
    pub conv_depth: usize,
    pub fc_hidden: usize,
    pub keep_prob: f64,
}

impl BankArch {
    pub fn for_labels(&self, n_classes: usize) -> ArchSpec {
        ArchSpec {
            kind: self.kind,
            conv_depth: self.conv_depth,
            fc_hidden: self.fc_hidden,
            n_classes,
            keep_prob: self.keep_prob,
        }
    }
}

/// Trains every station in `order` (default: the dataset's order). The result
/// does not depend on the order or on the number of workers.
pub fn train_bank(
    arch: &BankArch,
    bank: &DatasetBank,
    cfg: &TrainConfig,
    master_seed: u64,
    order: Option<&[usize]>,
) -> Result<ClassifierBank> {
    let default: Vec<usize> = (0..bank.stations.len()).collect();
    let order = order.unwrap_or(&default);
    let trained: Vec<(usize, Result<StationModel>)> = order
        .par_iter()
        .map(|&k| {
            let data = &bank.stations[k];
            let spec = arch.for_labels(data.label_spec.n_labels);
            let seed = station_seed(master_seed, data.station);
            log::info!(
                "training {} {} ({} classes)",
                arch.kind,
                data.station,
                spec.n_classes
            );
            (k, train_station(&spec, bank, data, cfg, seed))
        })
        .collect();
    let mut slots: Vec<Option<StationModel>> = vec![None; bank.stations.len()];
    for (k, r) in trained {
        slots[k] = Some(r?);
    }
    let models: Vec<StationModel> = slots
        .into_iter()
        .enumerate()
        .map(|(k, m)| m.ok_or_else(|| Error::invalid(format!("station {k} was not trained"))))
        .collect::<Result<_>>()?;
    let manifest = BankManifest {
        arch: arch.kind,
        conv_depth: arch.conv_depth,
        fc_hidden: arch.fc_hidden,
        keep_prob: arch.keep_prob,
        master_seed,
        train: cfg.clone(),
        dataset_digest: bank.digest()?,
        stations: models
            .iter()
            .map(|m| BankEntry {
                station: m.meta.station,
                file: format!("{}.bnnm", m.meta.station.name()),
                seed: m.meta.seed,
                n_classes: m.meta.arch.n_classes,
                best_epoch: m.meta.best_epoch,
            })
            .collect(),
    };
    Ok(ClassifierBank { manifest, models })
}

impl ClassifierBank {
    pub fn model(&self, station: Station) -> Option<&StationModel> {
        self.models.iter().find(|m| m.meta.station == station)
    }

    /// One `.bnnm` file per station, `bank.json` and `curves.csv`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (m, e) in self.models.iter().zip(&self.manifest.stations) {
            m.save(&dir.join(&e.file))?;
        }
        fs::write(
            dir.join("bank.json"),
            serde_json::to_string_pretty(&self.manifest)?,
        )?;
        let mut w = csv::Writer::from_path(dir.join("curves.csv"))?;
        w.write_record([
            "station",
            "epoch",
            "train_loss",
            "train_accuracy",
            "validation_accuracy",
        ])?;
        for m in &self.models {
            for e in &m.meta.curve {
                w.write_record([
                    m.meta.station.name(),
                    e.epoch.to_string(),
                    format!("{:.6}", e.train_loss),
                    format!("{:.6}", e.train_accuracy),
                    format!("{:.6}", e.validation_accuracy),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: BankManifest =
            serde_json::from_str(&fs::read_to_string(dir.join("bank.json"))?)?;
        let mut models = Vec::with_capacity(manifest.stations.len());
        for e in &manifest.stations {
            let m = StationModel::load(&dir.join(&e.file))?;
            if m.meta.station != e.station {
                return Err(Error::format(format!(
                    "{} holds {}",
                    e.file, m.meta.station
                )));
            }
            models.push(m);
        }
        Ok(ClassifierBank { manifest, models })
    }
}

/// Post-ReLU feature maps of one convolution layer and its kernels.
#[derive(Debug, Clone)]
pub struct Activations {
    /// `depth × h × w`.
    pub maps: Tensor,
    /// `depth × in_depth × 5 × 5`.
    pub kernels: Tensor,
}

/// `conv_index` counts convolution layers from zero.
pub fn inspect_activations(
    net: &Network,
    m: &InputMatrix,
    conv_index: usize,
) -> Result<Activations> {
    let convs = conv_layers(net);
    let &layer = convs.get(conv_index).ok_or_else(|| {
        Error::invalid(format!(
            "conv layer {conv_index} requested, network has {}",
            convs.len()
        ))
    })?;
    let Layer::Conv(c) = &net.layers[layer] else {
        unreachable!("conv_layers returns convolution indices")
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let trace = net.forward(&m.cells, 1, Mode::Eval, &mut rng)?;
    let shapes = net.shapes()?;
    // the ReLU right after the convolution
    let out = layer + 1;
    let s = shapes[out + 1];
    let maps = match net.layers.get(out) {
        Some(Layer::Relu) => trace.acts[out + 1].clone(),
        _ => trace.acts[layer + 1].iter().map(|v| v.max(0.0)).collect(),
    };
    Ok(Activations {
        maps: Tensor::new(vec![s.depth, s.height, s.width], maps)?,
        kernels: Tensor::new(
            vec![c.depth, c.in_depth, c.kernel, c.kernel],
            c.weights.clone(),
        )?,
    })
}

/// Cells above `fraction × (largest activation)`; zero when nothing fires.
pub fn count_activated(maps: &Tensor, fraction: f64) -> usize {
    let max = maps.values.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return 0;
    }
    let tau = fraction * max;
    maps.values.iter().filter(|&&v| v > tau).count()
}
