//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits nonzero if any fails.
//!
//! The oracles here are written independently of the library: finite
//! differences, the analytic cylinder solution, scalar-loop convolution and
//! plain label counting.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use bladecp::dataset::{cp_to_label, label_to_cp_center, split};
use bladecp::encoding::{decode, encode, CELLS, GRID};
use bladecp::eval::{adjacency_error, evaluate_bank, evaluate_predictions};
use bladecp::flow::{
    dynamic_head_ratio, solve_cascade, solve_detailed, SolverOptions, TANGENCY_TOL,
};
use bladecp::geometry::{build_datum, perturb, Point};
use bladecp::models::{
    build, count_activated, inspect_activations, train_station, BankEntry, BankManifest,
    ClassifierBank, StationMeta, StationModel,
};
use bladecp::nn::{Activation, ConvLayer, DenseLayer, Layer, Mode, Network, Padding, Shape};
use bladecp::{
    ArchKind, ArchSpec, BladeProfile, DatasetBank, DatumSpec, ExperimentConfig, FlowConditions,
    NormRange, PerturbSpec, Side, Split,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn ok<T, E: std::fmt::Display>(r: std::result::Result<T, E>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

/// Shared, lazily built artifacts of the desk-scale run.
struct Ctx {
    root: tempfile::TempDir,
    desk: Option<DatasetBank>,
    banks: BTreeMap<String, PathBuf>,
    desk_seconds: f64,
}

impl Ctx {
    fn dir(&self) -> &Path {
        self.root.path()
    }

    fn desk_dataset_path(&self) -> PathBuf {
        self.dir().join("desk").join("dataset.bin")
    }

    fn desk(&mut self) -> std::result::Result<&DatasetBank, String> {
        if self.desk.is_none() {
            let t = Instant::now();
            run_cli(self.dir(), &["--out", "desk", "gen"])?;
            self.desk_seconds += t.elapsed().as_secs_f64();
            self.desk = Some(ok(DatasetBank::load(&self.desk_dataset_path()))?);
        }
        Ok(self.desk.as_ref().expect("loaded"))
    }

    fn trained(&mut self) -> std::result::Result<(), String> {
        if !self.banks.is_empty() {
            return Ok(());
        }
        self.desk()?;
        let t = Instant::now();
        let dataset = self.desk_dataset_path();
        let out = run_cli(
            self.dir(),
            &[
                "--out",
                "banks",
                "train",
                "--dataset",
                dataset.to_str().unwrap(),
            ],
        )?;
        self.desk_seconds += t.elapsed().as_secs_f64();
        for line in out.lines() {
            let p = PathBuf::from(line.trim());
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            self.banks.insert(name, self.dir().join(&p));
        }
        ensure(self.banks.len() == 3, format!("train printed {out:?}"))
    }
}

fn run_cli(cwd: &Path, args: &[&str]) -> std::result::Result<String, String> {
    let out = ok(Command::new(env!("CARGO_BIN_EXE_bladecp"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output())?;
    if !out.status.success() {
        return Err(format!(
            "bladecp {args:?} exited with {}: {}",
            out.status,
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * (2.0 * rng.random::<f64>() - 1.0))
        .collect()
}

fn numeric_vs_analytic(
    net: &Network,
    x: &[f64],
    labels: &[usize],
) -> std::result::Result<f64, String> {
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let g = ok(net.loss_gradients(x, labels, Mode::Eval, &mut rng, true))?;
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    for (k, grad) in g.params.iter().enumerate() {
        for i in 0..grad.len() {
            let orig = probe.params()[k][i];
            probe.params_mut()[k][i] = orig + h;
            let up = ok(probe.loss(x, labels))?;
            probe.params_mut()[k][i] = orig - h;
            let down = ok(probe.loss(x, labels))?;
            probe.params_mut()[k][i] = orig;
            worst = worst.max(rel(grad[i], (up - down) / (2.0 * h)));
        }
    }
    let mut xs = x.to_vec();
    for i in 0..xs.len() {
        let orig = xs[i];
        xs[i] = orig + h;
        let up = ok(net.loss(&xs, labels))?;
        xs[i] = orig - h;
        let down = ok(net.loss(&xs, labels))?;
        xs[i] = orig;
        worst = worst.max(rel(g.input[i], (up - down) / (2.0 * h)));
    }
    Ok(worst)
}

fn gradient_fidelity(_: &mut Ctx) -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut worst: f64 = 0.0;
    let mut nets = 0;
    for _ in 0..6 {
        let depth_in = rng.random_range(1..=2);
        let side = 2 * rng.random_range(3..=5);
        let d = rng.random_range(2..=4);
        let classes = rng.random_range(2..=5);
        let batch = rng.random_range(1..=3);
        let input = Shape::new(depth_in, side, side);
        let pooled = d * (side / 2) * (side / 2);
        let mut conv = ConvLayer::zeros(depth_in, d, 5, Padding::Same);
        conv.weights = random_vec(&mut rng, conv.weights.len(), 0.5);
        conv.bias = random_vec(&mut rng, d, 0.1);
        let mut hidden = DenseLayer::zeros(pooled, 6, Activation::Identity);
        hidden.weights = random_vec(&mut rng, hidden.weights.len(), 0.4);
        hidden.bias = random_vec(&mut rng, 6, 0.1);
        let mut head = DenseLayer::zeros(6, classes, Activation::Softmax);
        head.weights = random_vec(&mut rng, head.weights.len(), 0.8);
        head.bias = random_vec(&mut rng, classes, 0.1);
        let layers = vec![
            Layer::Conv(conv),
            Layer::Relu,
            Layer::MaxPool,
            Layer::Dense(hidden),
            Layer::Relu,
            Layer::Dropout { keep_prob: 0.5 },
            Layer::Dense(head),
        ];
        let net = ok(Network::new(input, layers))?;
        let x = random_vec(&mut rng, batch * input.len(), 1.0);
        let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();
        worst = worst.max(numeric_vs_analytic(&net, &x, &labels)?);
        nets += 1;

        // a valid-padding convolution feeding the head directly
        let mut valid = ConvLayer::zeros(depth_in, 2, 5, Padding::Valid);
        valid.weights = random_vec(&mut rng, valid.weights.len(), 0.5);
        valid.bias = random_vec(&mut rng, 2, 0.1);
        let out = 2 * (side - 4) * (side - 4);
        let mut head = DenseLayer::zeros(out, classes, Activation::Softmax);
        head.weights = random_vec(&mut rng, head.weights.len(), 0.5);
        let net = ok(Network::new(
            input,
            vec![Layer::Conv(valid), Layer::Dense(head)],
        ))?;
        worst = worst.max(numeric_vs_analytic(&net, &x, &labels)?);
        nets += 1;
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(worst < 1e-4, format!("max relative error {worst:.2e}"))?;
    ensure(secs < 60.0, format!("gradient checks took {secs:.1} s"))?;
    Ok(format!(
        "{nets} networks, max relative error {worst:.2e}, {secs:.1} s"
    ))
}

fn circle(n: usize) -> BladeProfile {
    let side = |sign: f64| -> Vec<Point> {
        (0..n)
            .map(|i| {
                let phi = PI * (1.0 - i as f64 / (n - 1) as f64);
                let y = if i == n - 1 {
                    0.0
                } else {
                    sign * 0.5 * phi.sin()
                };
                Point::new(0.5 + 0.5 * phi.cos(), y)
            })
            .collect()
    };
    BladeProfile {
        id: 0,
        pressure_side: side(-1.0),
        suction_side: side(1.0),
    }
}

fn naca0012(n: usize) -> BladeProfile {
    let side = |sign: f64| -> Vec<Point> {
        (0..n)
            .map(|i| {
                let x = 0.5 * (1.0 - (PI * i as f64 / (n - 1) as f64).cos());
                let t = 0.6
                    * (0.2969 * x.sqrt() - 0.1260 * x - 0.3516 * x * x + 0.2843 * x.powi(3)
                        - 0.1036 * x.powi(4));
                Point::new(x, if i == n - 1 { 0.0 } else { sign * t })
            })
            .collect()
    };
    BladeProfile {
        id: 0,
        pressure_side: side(-1.0),
        suction_side: side(1.0),
    }
}

fn flow_oracles(ctx: &mut Ctx) -> Check {
    // 101 points per side close into 200 panels
    let c = circle(101);
    let opts = SolverOptions {
        kutta: false,
        ..SolverOptions::default()
    };
    let sol = ok(solve_detailed(&c, &FlowConditions::isolated(0.0), &opts))?;
    let mut cyl: f64 = 0.0;
    let points = c.pressure_side.iter().chain(&c.suction_side);
    for (s, q) in sol.distribution.samples.iter().zip(points) {
        let theta = (q.y - 0.0).atan2(q.x - 0.5);
        cyl = cyl.max((s.cp - (1.0 - 4.0 * theta.sin().powi(2))).abs());
    }
    ensure(cyl < 0.02, format!("cylinder max error {cyl:.4}"))?;

    let p = naca0012(200);
    let iso = ok(solve_cascade(&p, &FlowConditions::isolated(0.5)))?;
    let row = ok(solve_cascade(
        &p,
        &FlowConditions {
            inlet_angle: 0.5,
            pitch_to_chord: 50.0,
            ..FlowConditions::default()
        },
    ))?;
    let gap = iso
        .samples
        .iter()
        .zip(&row.samples)
        .map(|(a, b)| (a.cp - b.cp).abs())
        .fold(0.0, f64::max);
    ensure(
        gap < 1e-2,
        format!("pitch 50 vs isolated differ by {gap:.4}"),
    )?;

    let bank = ctx.desk()?;
    let recorded = bank.manifest.max_tangency_residual;
    ensure(
        recorded < TANGENCY_TOL,
        format!("library max tangency residual {recorded:.2e}"),
    )?;
    ensure(
        bank.manifest.skipped.len() * 100 <= bank.manifest.requested,
        "more than 1% of blades skipped",
    )?;
    // re-solve a sample of library blades and measure the residual afresh
    let cfg = ExperimentConfig::default();
    let mut resolved: f64 = 0.0;
    for r in bank.records.iter().step_by(41) {
        let s = ok(solve_detailed(&r.profile, &cfg.flow, &cfg.solver))?;
        resolved = resolved.max(s.tangency_residual);
    }
    ensure(
        resolved < TANGENCY_TOL,
        format!("re-solved residual {resolved:.2e}"),
    )?;
    Ok(format!(
        "cylinder {cyl:.4}, large pitch {gap:.4}, residual {recorded:.1e} over {} blades",
        bank.records.len()
    ))
}

fn cascade_consistency(_: &mut Ctx) -> Check {
    let datum = ok(build_datum(&DatumSpec::default()))?;
    let flow = FlowConditions::default();
    let d = ok(solve_cascade(&datum, &flow))?;
    let target = (41.08f64.to_radians().cos() / 69.25f64.to_radians().cos()).powi(2);
    let ratio = dynamic_head_ratio(&d, &flow);
    // the same ratio from velocity triangles with the solved exit angle
    let triangle = (41.08f64.to_radians().cos() / d.exit_angle.to_radians().cos()).powi(2);
    ensure(
        (ratio - triangle).abs() < 1e-6 * triangle,
        format!("{ratio} vs {triangle}"),
    )?;
    ensure(
        (ratio / target - 1.0).abs() < 0.05,
        format!("dynamic-head ratio {ratio:.3}, target {target:.3}"),
    )?;
    let exit = d.exit_angle.abs();
    ensure(
        (exit - 69.25).abs() <= 2.0,
        format!("exit angle {exit:.2}°"),
    )?;
    Ok(format!(
        "ratio {ratio:.3} (target {target:.3}), exit angle {exit:.2}°"
    ))
}

fn round_trips(ctx: &mut Ctx) -> Check {
    let datum = ok(build_datum(&DatumSpec::default()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut profiles = Vec::new();
    while profiles.len() < 100 {
        let side = if rng.random() {
            Side::Suction
        } else {
            Side::Pressure
        };
        let spec = PerturbSpec::single(
            side,
            rng.random_range(0.15..0.85),
            rng.random_range(-0.03..0.03),
            rng.random_range(0.2..0.5),
        );
        if let Ok(p) = perturb(&datum, &spec) {
            profiles.push(p);
        }
    }
    let norm = ok(NormRange::of_library(&profiles))?;
    let span = norm.y_max - norm.y_min;
    let mut coord: f64 = 0.0;
    for p in &profiles {
        let back = decode(&ok(encode(p, &norm))?.matrix, &norm);
        let orig = p.pressure_side.iter().chain(&p.suction_side).map(|q| q.y);
        for (a, b) in back.iter().zip(orig) {
            coord = coord.max((a - b).abs() / span);
        }
    }
    ensure(
        coord < 1e-12,
        format!("decode(encode) relative error {coord:.2e}"),
    )?;

    let bank = ctx.desk()?;
    let mut labels = 0;
    for spec in &bank.manifest.label_specs {
        for k in 0..spec.n_labels {
            let c = ok(label_to_cp_center(k, spec))?;
            ensure(
                cp_to_label(c, spec).index == k,
                format!("{} label {k}", spec.station),
            )?;
            labels += 1;
        }
    }

    let mut sizes = vec![6, 7, 11, 12, 13, 100, 997];
    sizes.push(bank.records.len());
    for n in sizes {
        let s = ok(split(n, 5))?;
        let count = |w| s.iter().filter(|&&x| x == w).count();
        let sixth = n / 6;
        let expected_train = 2 * n / 3 + (n - 2 * n / 3 - 2 * sixth);
        ensure(
            count(Split::Validation) == sixth
                && count(Split::Test) == sixth
                && count(Split::Train) == expected_train,
            format!("split of {n}"),
        )?;
    }
    let m = &bank.manifest.split_counts;
    let n = bank.records.len();
    ensure(
        m.validation == n / 6 && m.test == n / 6 && m.train == n - 2 * (n / 6),
        "dataset split counts",
    )?;
    Ok(format!(
        "coordinates {coord:.1e}, {labels} label centers, splits exact ({} / {} / {})",
        m.train, m.validation, m.test
    ))
}

fn shape_laws(ctx: &mut Ctx) -> Check {
    let zeros = vec![0.0; CELLS];
    let trace = |kind, d, classes| -> std::result::Result<Vec<(usize, usize)>, String> {
        let net = ok(build(&ArchSpec::new(kind, d, classes)))?;
        let shapes = ok(net.shapes())?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = ok(net.forward(&zeros, 1, Mode::Eval, &mut rng))?;
        let mut spatial = Vec::new();
        for (i, l) in net.layers.iter().enumerate() {
            let s = shapes[i + 1];
            ensure(t.acts[i + 1].len() == s.len(), "activation length")?;
            if matches!(l, Layer::Conv(_) | Layer::MaxPool) {
                spatial.push((s.depth, s.height));
            }
        }
        ensure(t.acts.last().unwrap().len() == classes, "output width")?;
        Ok(spatial)
    };
    let c2 = trace(ArchKind::Cnn2Nn2, 16, 7)?;
    ensure(
        c2[0] == (16, GRID),
        format!("cnn2_nn2 first layer {:?}", c2[0]),
    )?;
    let c2h: Vec<usize> = c2.iter().map(|s| s.1).collect();
    ensure(c2h == [20, 10, 10, 5], format!("cnn2_nn2 trace {c2h:?}"))?;
    let c4h: Vec<usize> = trace(ArchKind::Cnn4Nn2, 16, 7)?
        .iter()
        .map(|s| s.1)
        .collect();
    ensure(
        c4h == [20, 20, 10, 10, 10, 5],
        format!("cnn4_nn2 trace {c4h:?}"),
    )?;
    for kind in ArchKind::ALL {
        trace(kind, 16, 32)?;
    }
    let bank = ctx.desk()?;
    for sd in &bank.stations {
        let net = ok(build(&ArchSpec::new(
            ArchKind::Cnn4Nn2,
            8,
            sd.label_spec.n_labels,
        )))?;
        ensure(
            net.output_len() == sd.label_spec.n_labels,
            format!("{}", sd.station),
        )?;
    }
    let widest = bank
        .stations
        .iter()
        .filter(|s| s.station.side == Side::Suction)
        .map(|s| s.label_spec.n_labels)
        .max()
        .unwrap_or(0);
    Ok(format!(
        "cnn2 20→10→5, cnn4 20→20→10→10→5, 32-class head ok, widest suction station {widest} labels"
    ))
}

fn desk_experiment(ctx: &mut Ctx) -> Check {
    ctx.trained()?;
    let dataset = ctx.desk_dataset_path();
    let mut args = vec![
        "--out",
        "eval",
        "eval",
        "--dataset",
        dataset.to_str().unwrap(),
    ];
    let banks: Vec<String> = ctx
        .banks
        .values()
        .map(|p| p.display().to_string())
        .collect();
    for b in &banks {
        args.push("--bank");
        args.push(b);
    }
    let t = Instant::now();
    run_cli(ctx.dir(), &args)?;
    ctx.desk_seconds += t.elapsed().as_secs_f64();
    let mut table = BTreeMap::new();
    let mut rd = ok(csv::Reader::from_path(ctx.dir().join("eval/table2.csv")))?;
    for rec in rd.records() {
        let rec = ok(rec)?;
        let w1: f64 = ok(rec[2].parse())?;
        let w3: f64 = ok(rec[3].parse())?;
        table.insert(rec[0].to_string(), (w1, w3));
    }
    let get = |k: &str| {
        table
            .get(k)
            .copied()
            .ok_or(format!("{k} missing from table2.csv"))
    };
    let (nn2, cnn2, cnn4) = (get("nn2")?, get("cnn2_nn2")?, get("cnn4_nn2")?);
    let summary = format!(
        "nn2 {:.3}/{:.3}, cnn2_nn2 {:.3}/{:.3}, cnn4_nn2 {:.3}/{:.3}, {:.0} s",
        nn2.0, nn2.1, cnn2.0, cnn2.1, cnn4.0, cnn4.1, ctx.desk_seconds
    );
    ensure(
        nn2.0 <= cnn2.0 && cnn2.0 <= cnn4.0,
        format!("ordering fails: {summary}"),
    )?;
    ensure(
        cnn4.1 >= 0.95 && cnn4.0 >= 0.80,
        format!("cnn4_nn2 accuracy: {summary}"),
    )?;

    // majority baseline by direct counting on the test split
    let data = ctx.desk.as_ref().expect("dataset");
    let test: Vec<usize> = (0..data.records.len())
        .filter(|&i| data.split[i] == Split::Test)
        .collect();
    let bank = ok(ClassifierBank::load(&ctx.banks["cnn4_nn2_d16"]))?;
    let result = ok(evaluate_bank(&bank, data, Split::Test))?;
    let mut weakest = f64::INFINITY;
    for (sd, acc) in data.stations.iter().zip(&result.stations) {
        let mut counts = BTreeMap::new();
        for &i in &test {
            *counts.entry(sd.labels[i]).or_insert(0usize) += 1;
        }
        let majority = *counts.values().max().unwrap() as f64 / test.len() as f64;
        weakest = weakest.min(acc.within_1pct - majority);
        ensure(
            acc.within_1pct > majority,
            format!(
                "{}: accuracy {:.3} vs majority {majority:.3}; {summary}",
                sd.station, acc.within_1pct
            ),
        )?;
    }
    Ok(format!(
        "{summary}; smallest margin over majority {weakest:.3}"
    ))
}

fn constant_model(
    station_labels: &bladecp::LabelSpec,
) -> std::result::Result<StationModel, String> {
    let n = station_labels.n_labels;
    let mut net = ok(build(&ArchSpec::new(ArchKind::Nn2, 16, n)))?;
    if let Some(Layer::Dense(d)) = net.layers.last_mut() {
        d.bias[0] = 1.0;
    }
    Ok(StationModel {
        meta: StationMeta {
            station: station_labels.station,
            arch: ArchSpec::new(ArchKind::Nn2, 16, n),
            label_spec: station_labels.clone(),
            seed: 0,
            best_epoch: 0,
            curve: Vec::new(),
        },
        network: net,
    })
}

fn metric_correctness(ctx: &mut Ctx) -> Check {
    ensure(adjacency_error(3, 3) == 1, "exact match")?;
    ensure(
        adjacency_error(3, 4) == 3 && adjacency_error(4, 3) == 3,
        "neighbour",
    )?;
    for k in 0..12 {
        ensure(adjacency_error(20, 20 + k) == 2 * k + 1, format!("k = {k}"))?;
    }
    let data = ctx.desk()?;
    let test: Vec<usize> = (0..data.records.len())
        .filter(|&i| data.split[i] == Split::Test)
        .collect();
    let truth: Vec<Vec<usize>> = data
        .stations
        .iter()
        .map(|sd| test.iter().map(|&i| sd.labels[i]).collect())
        .collect();
    let perfect = ok(evaluate_predictions(data, Split::Test, &truth))?;
    ensure(
        perfect.within_1pct == 1.0 && perfect.stations.iter().all(|s| s.within_1pct == 1.0),
        "perfect predictor below 1.0",
    )?;

    let models = data
        .stations
        .iter()
        .map(|sd| constant_model(&sd.label_spec))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let bank = ClassifierBank {
        manifest: BankManifest {
            arch: ArchKind::Nn2,
            conv_depth: 16,
            fc_hidden: 256,
            keep_prob: 0.5,
            master_seed: 0,
            train: Default::default(),
            dataset_digest: String::new(),
            stations: data
                .stations
                .iter()
                .map(|sd| BankEntry {
                    station: sd.station,
                    file: String::new(),
                    seed: 0,
                    n_classes: sd.label_spec.n_labels,
                    best_epoch: 0,
                })
                .collect(),
        },
        models,
    };
    let constant = ok(evaluate_bank(&bank, data, Split::Test))?;
    let mut worst: f64 = 0.0;
    for (sd, acc) in data.stations.iter().zip(&constant.stations) {
        let zeros = test.iter().filter(|&&i| sd.labels[i] == 0).count();
        let ones = test.iter().filter(|&&i| sd.labels[i] <= 1).count();
        worst = worst.max((acc.within_1pct - zeros as f64 / test.len() as f64).abs());
        worst = worst.max((acc.within_3pct - ones as f64 / test.len() as f64).abs());
    }
    ensure(
        worst < 1e-12,
        format!("constant predictor off by {worst:.2e}"),
    )?;
    let weighted: f64 = constant
        .stations
        .iter()
        .map(|s| s.within_1pct * s.samples as f64)
        .sum::<f64>()
        / constant
            .stations
            .iter()
            .map(|s| s.samples as f64)
            .sum::<f64>();
    ensure(
        (weighted - constant.within_1pct).abs() < 1e-12,
        "aggregate weighting",
    )?;
    Ok(format!(
        "error classes 1/3/…/23%, perfect 1.0, constant-0 matches counts (aggregate {:.3})",
        constant.within_1pct
    ))
}

fn files_under(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn determinism(ctx: &mut Ctx) -> Check {
    let mut trees = Vec::new();
    for run in ["a", "b"] {
        let cwd = ctx.dir().join(format!("det_{run}"));
        ok(fs::create_dir_all(&cwd))?;
        run_cli(&cwd, &["--out", "out/data", "gen", "--count", "60"])?;
        run_cli(
            &cwd,
            &[
                "--out",
                "out/banks",
                "train",
                "--dataset",
                "out/data/dataset.bin",
                "--arch",
                "nn2",
                "--arch",
                "cnn2_nn2",
                "--depth",
                "8",
                "--epochs",
                "2",
            ],
        )?;
        run_cli(
            &cwd,
            &[
                "--out",
                "out/eval",
                "eval",
                "--dataset",
                "out/data/dataset.bin",
                "--bank",
                "out/banks/nn2",
                "--bank",
                "out/banks/cnn2_nn2_d8",
            ],
        )?;
        trees.push(files_under(&cwd.join("out")));
    }
    let (a, b) = (&trees[0], &trees[1]);
    ensure(a.keys().eq(b.keys()), "runs produced different file sets")?;
    for (k, v) in a {
        ensure(&b[k] == v, format!("{} differs between runs", k.display()))?;
    }
    let models = a
        .keys()
        .filter(|k| k.extension().is_some_and(|e| e == "bnnm"))
        .count();
    let csvs = a
        .keys()
        .filter(|k| k.extension().is_some_and(|e| e == "csv"))
        .count();
    ensure(models == 36, format!("{models} model files"))?;
    Ok(format!(
        "{} files byte-identical ({models} models, {csvs} CSVs)",
        a.len()
    ))
}

/// Scalar-loop forward pass of the `[standardize, conv, relu, (pool, conv, relu)…]`
/// prefix of a network up to and including convolution `stop`.
fn direct_maps(net: &Network, x: &[f64], stop: usize) -> Vec<f64> {
    let (mut cur, mut depth, mut h, mut w) = (x.to_vec(), 1usize, GRID, GRID);
    let mut convs = 0;
    for l in &net.layers {
        match l {
            Layer::Standardize { mean, scale } => {
                for ((v, m), s) in cur.iter_mut().zip(mean).zip(scale) {
                    *v = (*v - m) * s;
                }
            }
            Layer::Conv(c) => {
                let mut out = vec![0.0; c.depth * h * w];
                for o in 0..c.depth {
                    for y in 0..h {
                        for xx in 0..w {
                            let mut acc = c.bias[o];
                            for i in 0..depth {
                                for ky in 0..5 {
                                    for kx in 0..5 {
                                        let (iy, ix) = (y + ky, xx + kx);
                                        if iy < 2 || ix < 2 || iy - 2 >= h || ix - 2 >= w {
                                            continue;
                                        }
                                        let wgt = c.weights[((o * depth + i) * 5 + ky) * 5 + kx];
                                        acc += wgt * cur[(i * h + iy - 2) * w + ix - 2];
                                    }
                                }
                            }
                            out[(o * h + y) * w + xx] = acc;
                        }
                    }
                }
                cur = out;
                depth = c.depth;
                convs += 1;
            }
            Layer::Relu => {
                cur.iter_mut().for_each(|v| *v = v.max(0.0));
                if convs == stop + 1 {
                    return cur;
                }
            }
            Layer::MaxPool => {
                let mut out = Vec::with_capacity(depth * h * w / 4);
                for d in 0..depth {
                    for y in 0..h / 2 {
                        for xx in 0..w / 2 {
                            let at = |dy, dx| cur[(d * h + 2 * y + dy) * w + 2 * xx + dx];
                            out.push(at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1)));
                        }
                    }
                }
                cur = out;
                h /= 2;
                w /= 2;
            }
            _ => break,
        }
    }
    cur
}

fn inspection(ctx: &mut Ctx) -> Check {
    ctx.trained()?;
    let bank_dir = ctx.banks["cnn2_nn2_d16"].clone();
    let dataset = ctx.desk_dataset_path();
    let data = ctx.desk.as_ref().expect("dataset");
    let blade = data.records[0].profile.id.to_string();
    let out = run_cli(
        ctx.dir(),
        &[
            "--out",
            "inspect",
            "inspect",
            "--dataset",
            dataset.to_str().unwrap(),
            "--bank",
            bank_dir.to_str().unwrap(),
            "--blade",
            &blade,
            "--layer",
            "last",
            "--station",
            "suction_0.40",
        ],
    )?;
    let dir = ctx
        .dir()
        .join("inspect")
        .join(format!("blade{blade}_suction_0.40_conv1"));
    let maps = ok(fs::read_dir(&dir))?
        .filter(|e| {
            let n = e.as_ref().unwrap().file_name();
            let n = n.to_string_lossy();
            n.starts_with("map_") && n.ends_with(".pgm")
        })
        .count();
    ensure(maps == 16, format!("{maps} feature-map images"))?;
    ensure(
        out.contains("activated cells"),
        format!("inspect printed {out:?}"),
    )?;

    let bank = ok(ClassifierBank::load(&bank_dir))?;
    let mut worst: f64 = 0.0;
    for model in bank.models.iter().step_by(4) {
        for conv in 0..2 {
            let m = &data.records[0].matrix;
            let got = ok(inspect_activations(&model.network, m, conv))?;
            let want = direct_maps(&model.network, &m.cells, conv);
            ensure(got.maps.values.len() == want.len(), "map size")?;
            for (a, b) in got.maps.values.iter().zip(&want) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    ensure(
        worst < 1e-12,
        format!("maps differ from direct convolution by {worst:.2e}"),
    )?;

    // diagnostic counts on the datum blade, d = 8 and d = 16
    let cfg = ExperimentConfig::default();
    let datum = ok(build_datum(&cfg.datum))?;
    let m = ok(encode(&datum, &data.manifest.norm))?.matrix;
    let station = data
        .stations
        .iter()
        .position(|s| s.station.side == Side::Suction && (s.station.cx - 0.4).abs() < 1e-9)
        .unwrap();
    let sd = &data.stations[station];
    let d8 = ok(train_station(
        &ArchSpec::new(ArchKind::Cnn2Nn2, 8, sd.label_spec.n_labels),
        data,
        sd,
        &cfg.train,
        1,
    ))?;
    let d16 = bank.model(sd.station).unwrap();
    let mut counts = Vec::new();
    for (d, model) in [(8, &d8), (16, d16)] {
        let a = ok(inspect_activations(&model.network, &m, 1))?;
        counts.push(format!(
            "d{d}: {}",
            count_activated(&a.maps, cfg.activation_fraction)
        ));
    }
    Ok(format!(
        "16 PGM maps, direct convolution within {worst:.1e}; datum activated cells {} (reference band 10-20)",
        counts.join(", ")
    ))
}

fn main() {
    let mut ctx = Ctx {
        root: tempfile::tempdir().expect("temp dir"),
        desk: None,
        banks: BTreeMap::new(),
        desk_seconds: 0.0,
    };
    let criteria: [(&str, fn(&mut Ctx) -> Check); 9] = [
        ("gradient fidelity", gradient_fidelity),
        ("flow oracle validation", flow_oracles),
        ("cascade consistency", cascade_consistency),
        ("encoding and labeling round trips", round_trips),
        ("architecture shape laws", shape_laws),
        ("desk-scale experiment", desk_experiment),
        ("metric correctness", metric_correctness),
        ("determinism", determinism),
        ("inspection outputs", inspection),
    ];
    let mut failed = 0;
    let stdout = std::io::stdout();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let r = panic::catch_unwind(AssertUnwindSafe(|| f(&mut ctx)))
            .unwrap_or_else(|_| Err("panicked".to_string()));
        let secs = t.elapsed().as_secs_f64();
        let line = match &r {
            Ok(detail) => format!("criterion {} {name}: PASS ({detail}) [{secs:.1} s]", i + 1),
            Err(detail) => {
                failed += 1;
                format!("criterion {} {name}: FAIL ({detail}) [{secs:.1} s]", i + 1)
            }
        };
        let mut lock = stdout.lock();
        writeln!(lock, "{line}").unwrap();
        lock.flush().unwrap();
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
