use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use hsfs_core::classifier::{self, PixelModel};
use hsfs_core::dataio::{self, RawGrid};
use hsfs_core::masker::{self, CnnConfig};
use hsfs_core::nn::OptimizerKind;
use hsfs_core::pipeline::{self, ChipSet};
use hsfs_core::pruner::{self, HiddenPolicy, PruneError};
use hsfs_core::rng::derive_seed;
use hsfs_core::{synth, Checkpoint, NormStats, PixelDataset};
use serde_json::{json, Value};

use crate::config::{stream, RunConfig};
use crate::{Cli, Command, InvalidInput, OutDir};

pub const RESOLVED_CONFIG: &str = "resolved.toml";
pub const SUMMARY: &str = "summary.json";

pub fn run(cli: &Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    let seed = cfg.resolve_seed(cli.seed)?;
    match &cli.command {
        Command::Gen(a) => gen(a, cfg, seed),
        Command::Pixelize(a) => pixelize(a, cfg),
        Command::Balance(a) => balance(a, cfg, seed),
        Command::Split(a) => split(a, cfg),
        Command::TrainPixel(a) => train_pixel(a, cfg),
        Command::EvalPixel(a) => eval_pixel(a, cfg),
        Command::ClassifyCube(a) => classify_cube(a, cfg),
        Command::Prune(a) => prune(a, cfg),
        Command::Chips(a) => chips(a, cfg, seed),
        Command::TrainMask(a) => train_mask(a, cfg),
        Command::EvalMask(a) => eval_mask(a, cfg),
    }
}

/// Reads an input file, naming it in any error.
fn load<'a, T, E>(path: &'a Path, read: impl FnOnce(&'a Path) -> Result<T, E>) -> Result<T>
where
    E: std::error::Error + Send + Sync + 'static,
{
    read(path).with_context(|| format!("reading {}", path.display()))
}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    InvalidInput(msg.into()).into()
}

/// Output bookkeeping for one invocation.
struct Outputs {
    dir: PathBuf,
    inputs: Vec<(String, PathBuf)>,
    written: Vec<String>,
}

impl Outputs {
    fn new(out: &OutDir, inputs: &[(&str, &Path)]) -> Result<Self> {
        fs::create_dir_all(&out.out_dir)
            .with_context(|| format!("creating {}", out.out_dir.display()))?;
        Ok(Outputs {
            dir: out.out_dir.clone(),
            inputs: inputs
                .iter()
                .map(|(k, p)| (k.to_string(), p.to_path_buf()))
                .collect(),
            written: Vec::new(),
        })
    }

    /// Path for a new output file; refuses to overwrite any input.
    fn file(&mut self, name: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        if let Ok(target) = path.canonicalize() {
            for (_, input) in &self.inputs {
                if input
                    .canonicalize()
                    .is_ok_and(|i| i == target || target.starts_with(&i) && i.is_dir())
                {
                    return Err(invalid(format!(
                        "output {} would overwrite input {}",
                        path.display(),
                        input.display()
                    )));
                }
            }
        }
        self.written.push(name.to_string());
        Ok(path)
    }

    fn finish(mut self, command: &str, cfg: &RunConfig, results: Value) -> Result<()> {
        let resolved = self.file(RESOLVED_CONFIG)?;
        fs::write(&resolved, cfg.to_toml()?)?;
        let summary_path = self.dir.join(SUMMARY);
        let inputs: serde_json::Map<String, Value> = self
            .inputs
            .iter()
            .map(|(k, p)| (k.clone(), Value::String(p.display().to_string())))
            .collect();
        self.written.push(SUMMARY.into());
        let summary = json!({
            "command": command,
            "seed": cfg.seed,
            "inputs": inputs,
            "outputs": self.written,
            "results": results,
        });
        fs::write(summary_path, serde_json::to_string_pretty(&summary)? + "\n")?;
        Ok(())
    }
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[command(flatten)]
    out: OutDir,
    #[arg(long)]
    bands: Option<usize>,
    #[arg(long)]
    informative: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    cells: Option<usize>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    edge_intensity: Option<f64>,
}

fn set<T: Copy>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn gen(a: &GenArgs, mut cfg: RunConfig, seed: u64) -> Result<()> {
    let s = &mut cfg.scene;
    set(&mut s.bands, a.bands);
    set(&mut s.informative, a.informative);
    set(&mut s.height, a.height);
    set(&mut s.width, a.width);
    set(&mut s.cells, a.cells);
    set(&mut s.noise_std, a.noise_std);
    set(&mut s.edge_intensity, a.edge_intensity);
    let spec = cfg.scene.spec(derive_seed(seed, stream::SCENE))?;
    let scene = synth::render_scene(&spec)?;
    let mut out = Outputs::new(&a.out, &[])?;
    dataio::write_cube(out.file("scene.hsc")?, &scene.cube)?;
    dataio::write_mask(out.file("scene.msk")?, &scene.mask)?;
    synth::write_sidecar(out.file("scene.toml")?, &spec, &scene.informative_channels)?;
    let results = json!({
        "height": spec.height,
        "width": spec.width,
        "bands": spec.bands,
        "cells": scene.cells.len(),
        "mask_histogram": scene.mask.histogram(),
        "informative_channels": scene.informative_channels,
    });
    out.finish("gen", &cfg, results)
}

#[derive(Args, Debug)]
pub struct PixelizeArgs {
    #[command(flatten)]
    out: OutDir,
    #[arg(long)]
    cube: PathBuf,
    #[arg(long)]
    mask: PathBuf,
}

fn dataset_summary(ds: &PixelDataset) -> Value {
    json!({ "records": ds.len(), "dim": ds.dim(), "class_counts": ds.class_counts() })
}

fn pixelize(a: &PixelizeArgs, cfg: RunConfig) -> Result<()> {
    let cube = load(&a.cube, dataio::read_cube)?;
    let mask = load(&a.mask, dataio::read_mask)?;
    let ds = pipeline::pixelize(&cube, &mask)?;
    let mut out = Outputs::new(&a.out, &[("cube", &a.cube), ("mask", &a.mask)])?;
    dataio::write_pixels(out.file("pixels.pxd")?, &ds)?;
    out.finish("pixelize", &cfg, dataset_summary(&ds))
}

#[derive(Args, Debug)]
pub struct BalanceArgs {
    #[command(flatten)]
    out: OutDir,
    #[arg(long)]
    input: PathBuf,
}

fn balance(a: &BalanceArgs, cfg: RunConfig, seed: u64) -> Result<()> {
    let ds = load(&a.input, dataio::read_pixels)?;
    let balanced = pipeline::undersample_uniform(&ds, derive_seed(seed, stream::BALANCE))?;
    let mut out = Outputs::new(&a.out, &[("input", &a.input)])?;
    dataio::write_pixels(out.file("balanced.pxd")?, &balanced)?;
    out.finish("balance", &cfg, dataset_summary(&balanced))
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[command(flatten)]
    out: OutDir,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    train_frac: Option<f64>,
    #[arg(long)]
    val_frac: Option<f64>,
    #[arg(long)]
    test_frac: Option<f64>,
}

fn split(a: &SplitArgs, mut cfg: RunConfig) -> Result<()> {
    set(&mut cfg.split.train, a.train_frac);
    set(&mut cfg.split.val, a.val_frac);
    set(&mut cfg.split.test, a.test_frac);
    let ds = load(&a.input, dataio::read_pixels)?;
    let (train, val, test) = pipeline::split(&ds, &cfg.split_spec())?;
    let mut out = Outputs::new(&a.out, &[("input", &a.input)])?;
    dataio::write_pixels(out.file("train.pxd")?, &train)?;
    dataio::write_pixels(out.file("val.pxd")?, &val)?;
    dataio::write_pixels(out.file("test.pxd")?, &test)?;
    let results = json!({
        "train": dataset_summary(&train),
        "val": dataset_summary(&val),
        "test": dataset_summary(&test),
    });
    out.finish("split", &cfg, results)
}

#[derive(Args, Debug)]
pub struct TrainPixelArgs {
    #[command(flatten)]
    out: OutDir,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dropout: Option<f32>,
    /// Two hidden widths, e.g. `128,256`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    hidden: Option<Vec<usize>>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
}

fn normalized(stats: &NormStats, ds: &PixelDataset) -> Result<PixelDataset> {
    Ok(pipeline::normalize_apply(stats, ds)?)
}

fn history_csv(history: &[classifier::EpochStats]) -> String {
    let mut s = String::from("epoch,train_loss,val_accuracy\n");
    for h in history {
        s.push_str(&format!(
            "{},{},{}\n",
            h.epoch, h.train_loss, h.val_accuracy
        ));
    }
    s
}

fn train_pixel(a: &TrainPixelArgs, mut cfg: RunConfig) -> Result<()> {
    set(&mut cfg.mlp.epochs, a.epochs);
    set(&mut cfg.mlp.batch_size, a.batch_size);
    set(&mut cfg.mlp.dropout, a.dropout);
    if let Some(h) = &a.hidden {
        cfg.mlp.hidden = [h[0], h[1]];
    }
    if let Some(lr) = a.lr {
        match &mut cfg.mlp.optimizer {
            OptimizerKind::Adam { lr: slot, .. } | OptimizerKind::Adadelta { lr: slot, .. } => {
                *slot = lr
            }
        }
    }
    let train_raw = load(&a.train, dataio::read_pixels)?;
    let val_raw = load(&a.val, dataio::read_pixels)?;
    if train_raw.dim() != val_raw.dim() {
        return Err(invalid("train and validation sets differ in dimension"));
    }
    cfg.mlp.input_dim = train_raw.dim();
    let stats = pipeline::normalize_fit(&train_raw)?;
    let train = normalized(&stats, &train_raw)?;
    let val = normalized(&stats, &val_raw)?;
    let outcome = classifier::train(classifier::build_mlp(&cfg.mlp)?, &train, &val, &cfg.mlp)?;
    let model = PixelModel::full(outcome.net, stats);
    let mut out = Outputs::new(&a.out, &[("train", &a.train), ("val", &a.val)])?;
    dataio::write_checkpoint(out.file("model.nnw")?, &model.to_checkpoint()?)?;
    fs::write(out.file("history.csv")?, history_csv(&outcome.history))?;
    let results = json!({
        "parameters": model.net.param_count(),
        "best_epoch": outcome.best_epoch,
        "best_val_accuracy": outcome.best_val_accuracy,
    });
    out.finish("train-pixel", &cfg, results)
}

#[derive(Args, Debug)]
pub struct EvalPixelArgs {
    #[command(flatten)]
    out: OutDir,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Training set whose majority class forms the baseline.
    #[arg(long)]
    baseline_train: Option<PathBuf>,
}

fn eval_pixel(a: &EvalPixelArgs, cfg: RunConfig) -> Result<()> {
    let model = PixelModel::from_checkpoint(&load(&a.model, dataio::read_checkpoint)?)?;
    let data = load(&a.data, dataio::read_pixels)?;
    let report = model.evaluate_raw(&data)?;
    let mut inputs: Vec<(&str, &Path)> = vec![("model", &a.model), ("data", &a.data)];
    let baseline = match &a.baseline_train {
        Some(p) => {
            inputs.push(("baseline_train", p));
            Some(classifier::majority_baseline(
                &load(p, dataio::read_pixels)?,
                &data,
            )?)
        }
        None => None,
    };
    let mut out = Outputs::new(&a.out, &inputs)?;
    fs::write(out.file("metrics.csv")?, report.metrics_csv())?;
    fs::write(out.file("confusion.csv")?, report.confusion_csv())?;
    let results = json!({ "report": report, "majority_baseline": baseline });
    out.finish("eval-pixel", &cfg, results)
}

#[derive(Args, Debug)]
pub struct ClassifyCubeArgs {
    #[command(flatten)]
    out: OutDir,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    cube: PathBuf,
    /// Ground-truth mask for an agreement score.
    #[arg(long)]
    mask: Option<PathBuf>,
}

fn classify_cube(a: &ClassifyCubeArgs, cfg: RunConfig) -> Result<()> {
    let model = PixelModel::from_checkpoint(&load(&a.model, dataio::read_checkpoint)?)?;
    let cube = load(&a.cube, dataio::read_cube)?;
    let result = classifier::classify_cube(&model, &cube)?;
    let mut inputs: Vec<(&str, &Path)> = vec![("model", &a.model), ("cube", &a.cube)];
    let agreement = match &a.mask {
        Some(p) => {
            inputs.push(("mask", p));
            let truth = load(p, dataio::read_mask)?;
            if truth.height() != cube.height() || truth.width() != cube.width() {
                return Err(invalid("ground-truth mask does not match the cube"));
            }
            let same = truth
                .labels()
                .iter()
                .zip(result.mask.labels())
                .filter(|(a, b)| a == b)
                .count();
            Some(same as f64 / truth.labels().len() as f64)
        }
        None => None,
    };
    let mut out = Outputs::new(&a.out, &inputs)?;
    dataio::write_mask(out.file("predicted.msk")?, &result.mask)?;
    fs::write(out.file("overlay.ppm")?, &result.overlay_ppm)?;
    let results = json!({ "predicted_histogram": result.mask.histogram(), "agreement": agreement });
    out.finish("classify-cube", &cfg, results)
}

#[derive(Args, Debug)]
pub struct PruneArgs {
    #[command(flatten)]
    out: OutDir,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    /// Full-band starting model; trained from `[mlp]` settings when absent.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    max_retrains: Option<usize>,
    #[arg(long)]
    min_features: Option<usize>,
    /// Keep retrained hidden widths fixed instead of rescaling them.
    #[arg(long)]
    fixed_hidden: bool,
    /// Epochs per retraining.
    #[arg(long)]
    retrain_epochs: Option<usize>,
}

fn prune(a: &PruneArgs, mut cfg: RunConfig) -> Result<()> {
    set(&mut cfg.prune.tau, a.tau);
    set(&mut cfg.prune.max_retrains, a.max_retrains);
    set(&mut cfg.prune.min_features, a.min_features);
    set(&mut cfg.prune.retrain.epochs, a.retrain_epochs);
    if a.fixed_hidden {
        cfg.prune.hidden_policy = HiddenPolicy::Fixed;
    }
    let train_raw = load(&a.train, dataio::read_pixels)?;
    let val_raw = load(&a.val, dataio::read_pixels)?;
    if train_raw.dim() != val_raw.dim() {
        return Err(invalid("train and validation sets differ in dimension"));
    }
    let bands = train_raw.dim();
    let mut inputs: Vec<(&str, &Path)> = vec![("train", &a.train), ("val", &a.val)];
    let (initial, stats, trained_here) = match &a.model {
        Some(p) => {
            inputs.push(("model", p));
            let ck = load(p, dataio::read_checkpoint)?;
            if ck.original_bands != bands || ck.retained.len() != bands {
                return Err(invalid(
                    "pruning needs a model trained on every band of the dataset",
                ));
            }
            (ck.network()?, ck.norm.clone(), false)
        }
        None => {
            cfg.mlp.input_dim = bands;
            let stats = pipeline::normalize_fit(&train_raw)?;
            let train = normalized(&stats, &train_raw)?;
            let val = normalized(&stats, &val_raw)?;
            let o = classifier::train(classifier::build_mlp(&cfg.mlp)?, &train, &val, &cfg.mlp)?;
            (o.net, stats, true)
        }
    };
    let train = normalized(&stats, &train_raw)?;
    let val = normalized(&stats, &val_raw)?;
    let mut out = Outputs::new(&a.out, &inputs)?;
    if trained_here {
        let ck = Checkpoint::new(&initial, stats.clone(), (0..bands).collect(), bands)?;
        dataio::write_checkpoint(out.file("initial.nnw")?, &ck)?;
    }
    let outcome = match pruner::run_prune(&train, &val, initial, &cfg.prune) {
        Ok(o) => o,
        Err(PruneError::Retrain { source, history }) => {
            // keep what was done before the failure
            out.file(dataio::PRUNE_CURVE_FILE)?;
            out.file(dataio::REMOVAL_ORDER_FILE)?;
            dataio::write_prune_report(&out.dir, &history, bands)?;
            return Err(anyhow::Error::new(source).context(format!(
                "retraining failed after {} removals (partial report written)",
                history.len()
            )));
        }
        Err(e) => return Err(e.into()),
    };
    let state = &outcome.state;
    out.file(dataio::PRUNE_CURVE_FILE)?;
    out.file(dataio::REMOVAL_ORDER_FILE)?;
    dataio::write_prune_report(&out.dir, &state.history, bands)?;
    let ck = Checkpoint::new(
        &outcome.net,
        stats.select(&state.omega),
        state.omega.clone(),
        bands,
    )?;
    dataio::write_checkpoint(out.file("pruned.nnw")?, &ck)?;
    let results = json!({
        "bands": bands,
        "removed": state.history.len(),
        "retained": state.omega,
        "retrains": state.retrain_count,
        "initial_val_accuracy": outcome.initial_accuracy,
        "final_val_accuracy": outcome.final_accuracy,
    });
    out.finish("prune", &cfg, results)
}

#[derive(Args, Debug)]
pub struct ChipsArgs {
    #[command(flatten)]
    out: OutDir,
    /// Scene cube; repeat together with --mask for several scenes.
    #[arg(long, required = true)]
    cube: Vec<PathBuf>,
    #[arg(long, required = true)]
    mask: Vec<PathBuf>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    min_nontrivial: Option<f64>,
}

/// Splits `count` chips over scenes and samples each share with its own seed.
pub fn sample_chips(
    scenes: &[(hsfs_core::HyperCube, hsfs_core::LabelMask)],
    size: usize,
    count: usize,
    min_nontrivial: f64,
    seed: u64,
) -> Result<ChipSet> {
    let n = scenes.len();
    let mut set: Option<ChipSet> = None;
    for (i, (cube, mask)) in scenes.iter().enumerate() {
        let share = count / n + usize::from(i < count % n);
        let part = pipeline::make_chips(
            cube,
            mask,
            size,
            share,
            min_nontrivial,
            derive_seed(seed, i as u64),
        )?;
        match &mut set {
            None => {
                let mut first = ChipSet {
                    chips: Vec::new(),
                    ..part.clone()
                };
                first.append(part, i)?;
                set = Some(first);
            }
            Some(s) => s.append(part, i)?,
        }
    }
    set.ok_or_else(|| invalid("no scenes given"))
}

fn chips(a: &ChipsArgs, mut cfg: RunConfig, seed: u64) -> Result<()> {
    set(&mut cfg.chips.size, a.size);
    set(&mut cfg.chips.count, a.count);
    set(&mut cfg.chips.min_nontrivial, a.min_nontrivial);
    if a.cube.len() != a.mask.len() {
        return Err(invalid(
            "--cube and --mask must be given the same number of times",
        ));
    }
    let mut scenes = Vec::with_capacity(a.cube.len());
    let mut inputs: Vec<(&str, &Path)> = Vec::new();
    for (c, m) in a.cube.iter().zip(&a.mask) {
        scenes.push((load(c, dataio::read_cube)?, load(m, dataio::read_mask)?));
        inputs.push(("cube", c));
        inputs.push(("mask", m));
    }
    let c = &cfg.chips;
    let set = sample_chips(
        &scenes,
        c.size,
        c.count,
        c.min_nontrivial,
        derive_seed(seed, stream::CHIPS),
    )?;
    let mut out = Outputs::new(&a.out, &inputs)?;
    // summary inputs are keyed by name, so number repeated scenes
    out.inputs = a
        .cube
        .iter()
        .zip(&a.mask)
        .enumerate()
        .flat_map(|(i, (c, m))| {
            [
                (format!("cube{i}"), c.clone()),
                (format!("mask{i}"), m.clone()),
            ]
        })
        .collect();
    let dir = out.file("chips")?;
    pipeline::write_chipset(&dir, &set)?;
    let results = json!({
        "chips": set.len(),
        "size": set.size,
        "bands": set.bands,
        "nontrivial_fraction": set.nontrivial_fraction(),
    });
    out.finish("chips", &cfg, results)
}

#[derive(Args, Debug)]
pub struct TrainMaskArgs {
    #[command(flatten)]
    out: OutDir,
    /// Chip directory written by `chips`.
    #[arg(long)]
    chips: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dropout: Option<f32>,
    /// Five convolution widths, e.g. `16,16,8,8,1`.
    #[arg(long, value_delimiter = ',', num_args = 5)]
    widths: Option<Vec<usize>>,
    #[arg(long)]
    val_fraction: Option<f64>,
}

fn mask_history_csv(history: &[masker::MaskEpoch]) -> String {
    let mut s = String::from("epoch,train_mse,val_mse,val_l1\n");
    for h in history {
        s.push_str(&format!(
            "{},{},{},{}\n",
            h.epoch, h.train_mse, h.val_mse, h.val_l1
        ));
    }
    s
}

/// Band statistics over the training portion of the hold-out split.
pub fn fit_chip_norm(set: &ChipSet, cfg: &CnnConfig) -> Result<NormStats> {
    let (train_idx, _) = masker::holdout_split(set.len(), cfg.val_fraction, cfg.seed);
    let subset = ChipSet {
        size: set.size,
        bands: set.bands,
        chips: train_idx.iter().map(|&i| set.chips[i].clone()).collect(),
    };
    Ok(subset.fit_norm()?)
}

fn train_mask(a: &TrainMaskArgs, mut cfg: RunConfig) -> Result<()> {
    set(&mut cfg.cnn.epochs, a.epochs);
    set(&mut cfg.cnn.batch_size, a.batch_size);
    set(&mut cfg.cnn.dropout, a.dropout);
    set(&mut cfg.cnn.val_fraction, a.val_fraction);
    if let Some(w) = &a.widths {
        cfg.cnn.widths = [w[0], w[1], w[2], w[3], w[4]];
    }
    let set = load(&a.chips, pipeline::read_chipset)?;
    if set.is_empty() {
        bail!(invalid("chip set is empty"));
    }
    cfg.cnn.chip_size = set.size;
    cfg.cnn.bands = set.bands;
    let norm = fit_chip_norm(&set, &cfg.cnn)?;
    let outcome = masker::train_masker(masker::build_cnn(&cfg.cnn)?, &set, &norm, &cfg.cnn)?;
    let mut out = Outputs::new(&a.out, &[("chips", &a.chips)])?;
    dataio::write_checkpoint(
        out.file("masker.nnw")?,
        &masker::masker_checkpoint(&outcome.net, &norm)?,
    )?;
    fs::write(out.file("history.csv")?, mask_history_csv(&outcome.history))?;
    let best = &outcome.history.get(outcome.best_epoch);
    let results = json!({
        "parameters": outcome.net.param_count(),
        "best_epoch": outcome.best_epoch,
        "best_val_mse": best.map(|h| h.val_mse),
        "best_val_l1": best.map(|h| h.val_l1),
        "train_chips": outcome.train_indices.len(),
        "val_chips": outcome.val_indices.len(),
    });
    out.finish("train-mask", &cfg, results)
}

#[derive(Args, Debug)]
pub struct EvalMaskArgs {
    #[command(flatten)]
    out: OutDir,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    chips: PathBuf,
    /// Also write per-chip predictions (rounded MSK1 and continuous HSC1).
    #[arg(long)]
    write_predictions: bool,
}

fn eval_mask(a: &EvalMaskArgs, cfg: RunConfig) -> Result<()> {
    let ck = load(&a.model, dataio::read_checkpoint)?;
    let net = ck.network()?;
    let set = load(&a.chips, pipeline::read_chipset)?;
    let errors = masker::eval_l1(&net, &ck.norm, &set)?;
    let mut out = Outputs::new(&a.out, &[("model", &a.model), ("chips", &a.chips)])?;
    if a.write_predictions {
        let dir = out.file("predictions")?;
        fs::create_dir_all(&dir)?;
        for (i, chip) in set.chips.iter().enumerate() {
            let p = masker::predict_mask(&net, &ck.norm, &chip.cube)?;
            let mask = hsfs_core::LabelMask::new(p.size, p.size, p.labels.clone())?;
            dataio::write_mask(dir.join(format!("chip_{i:05}.msk")), &mask)?;
            let grid = RawGrid {
                height: p.size,
                width: p.size,
                bands: 1,
                data: p.values,
            };
            dataio::write_raw_grid(dir.join(format!("chip_{i:05}.hsc")), &grid)?;
        }
    }
    let results = json!({ "chips": set.len(), "mean_l1": errors.l1, "mean_mse": errors.mse, "pixels": errors.pixels });
    out.finish("eval-mask", &cfg, results)
}
