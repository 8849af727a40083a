//! Model assembly, loss, optimizer, and the training loop.
//!
//! The full classifier runs the transformer branch and the CNN branch on the
//! same image (the transformer on a resized copy), concatenates the two
//! 64-wide features transformer-first, and classifies through a small MLP
//! head. Either branch can be ablated away through [`BranchMode`]; the head
//! then consumes whatever feature width remains.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::checkpoint::{self, CheckpointMeta};
use crate::cnn::{CnnBranch, CnnConfig};
use crate::data::{batches, load_batch, load_image};
use crate::error::{CheckpointError, Error, Result};
use crate::metrics::{EvalReport, PredictionSet};
use crate::nn::{Bound, Init, LinearLayer, Param, ParamStore};
use crate::resize::bilinear;
use crate::rng::Rng;
use crate::saliency::{compute_saliency, map_cache_key, SaliencyMap, ScorerModel};
use crate::swin::{SwinBranch, SwinConfig};
use crate::tensor::{Tape, TensorId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchMode {
    Both,
    SwinOnly,
    CnnOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Softmax cross-entropy over mutually exclusive classes (the default).
    SoftmaxCrossEntropy,
    /// Sigmoid BCE against one-hot targets, for a literal multi-label
    /// reading of the task.
    SigmoidBce,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub swin: SwinConfig,
    pub cnn: CnnConfig,
    pub num_classes: usize,
    pub head_hidden: usize,
    pub branches: BranchMode,
    pub loss: LossKind,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            swin: SwinConfig::default(),
            cnn: CnnConfig::default(),
            num_classes: 8,
            head_hidden: 64,
            branches: BranchMode::Both,
            loss: LossKind::SoftmaxCrossEntropy,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Side of the images the model ingests; the transformer branch resizes
    /// its copy from this.
    pub fn input_side(&self) -> usize {
        self.cnn.input_side
    }

    pub fn swin_active(&self) -> bool {
        matches!(self.branches, BranchMode::Both | BranchMode::SwinOnly)
    }

    pub fn cnn_active(&self) -> bool {
        matches!(self.branches, BranchMode::Both | BranchMode::CnnOnly)
    }

    /// Concatenated feature width entering the head.
    pub fn feature_width(&self) -> usize {
        let mut w = 0;
        if self.swin_active() {
            w += self.swin.out_dim;
        }
        if self.cnn_active() {
            w += self.cnn.head_dims[2];
        }
        w
    }

    pub fn needs_maps(&self) -> bool {
        self.cnn_active() && self.cnn.fusing()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be >= 2".into()));
        }
        if self.head_hidden == 0 {
            return Err(Error::Config("head_hidden must be >= 1".into()));
        }
        if self.swin_active() {
            self.swin.validate()?;
        }
        // The CNN config fixes the model input side, so it must hold even
        // when that branch is ablated.
        self.cnn.validate()?;
        Ok(())
    }
}

/// The assembled classifier.
#[derive(Debug, Clone)]
pub struct SvsecModel {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub swin: Option<SwinBranch>,
    pub cnn: Option<CnnBranch>,
    pub head_fc1: LinearLayer,
    pub head_fc2: LinearLayer,
}

impl SvsecModel {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::for_stream(cfg.seed, 0x0de1);
        let mut store = ParamStore::new();
        let swin = if cfg.swin_active() {
            Some(SwinBranch::new(&mut store, "swin", &cfg.swin, &mut rng)?)
        } else {
            None
        };
        let cnn = if cfg.cnn_active() {
            Some(CnnBranch::new(&mut store, "cnn", &cfg.cnn, &mut rng)?)
        } else {
            None
        };
        let head_fc1 = LinearLayer::new(
            &mut store,
            "head.fc1",
            cfg.feature_width(),
            cfg.head_hidden,
            Init::HeNormal,
            &mut rng,
        );
        // Small-variance output layer keeps the initial logits near zero and
        // the first loss near ln K.
        let head_fc2 = LinearLayer::new(
            &mut store,
            "head.fc2",
            cfg.head_hidden,
            cfg.num_classes,
            Init::Zeros,
            &mut rng,
        );
        {
            let w = store.get_mut(head_fc2.weight);
            for v in &mut w.data {
                *v = rng.normal(0.0, 0.01);
            }
        }
        Ok(SvsecModel { cfg: cfg.clone(), store, swin, cnn, head_fc1, head_fc2 })
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<Bound> {
        self.store.bind(tape, trainable)
    }

    /// Forward a `[B,3,S,S]` image buffer (S = `cfg.input_side()`) to raw
    /// `[B,K]` logits, with parameters already bound into the tape.
    pub fn forward_bound(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        images: &[f32],
        batch: usize,
        maps: &[SaliencyMap],
    ) -> Result<TensorId> {
        let side = self.cfg.input_side();
        if images.len() != batch * 3 * side * side {
            return Err(Error::ShapeMismatch(format!(
                "image buffer holds {} values, batch {batch} of [3,{side},{side}] wants {}",
                images.len(),
                batch * 3 * side * side
            )));
        }
        let mut features = Vec::new();
        if let Some(swin) = &self.swin {
            let sside = self.cfg.swin.input_side;
            let leaf = if sside == side {
                tape.leaf(&[batch, 3, side, side], images.to_vec(), false)?
            } else {
                let mut resized = Vec::with_capacity(batch * 3 * sside * sside);
                for b in 0..batch {
                    let one = &images[b * 3 * side * side..(b + 1) * 3 * side * side];
                    resized.extend_from_slice(&bilinear(one, 3, side, side, sside, sside));
                }
                tape.leaf(&[batch, 3, sside, sside], resized, false)?
            };
            features.push(swin.forward(tape, bound, leaf)?);
        }
        if let Some(cnn) = &self.cnn {
            let leaf = tape.leaf(&[batch, 3, side, side], images.to_vec(), false)?;
            features.push(cnn.forward(tape, bound, leaf, maps)?);
        }
        let feat = match features.len() {
            1 => features[0],
            _ => tape.concat(&features, 1)?,
        };
        let h = self.head_fc1.forward(tape, bound, feat)?;
        let h = tape.relu(h)?;
        self.head_fc2.forward(tape, bound, h)
    }

    /// Bind and forward on a fresh region of the tape.
    pub fn forward(
        &self,
        tape: &mut Tape,
        images: &[f32],
        batch: usize,
        maps: &[SaliencyMap],
        trainable: bool,
    ) -> Result<(TensorId, Bound)> {
        let bound = self.bind(tape, trainable)?;
        let logits = self.forward_bound(tape, &bound, images, batch, maps)?;
        Ok((logits, bound))
    }

    /// Loss over raw logits per the configured kind.
    pub fn loss(&self, tape: &mut Tape, logits: TensorId, labels: &[usize]) -> Result<TensorId> {
        match self.cfg.loss {
            LossKind::SoftmaxCrossEntropy => tape.cross_entropy(logits, labels),
            LossKind::SigmoidBce => {
                let k = self.cfg.num_classes;
                let mut targets = vec![0.0f32; labels.len() * k];
                for (i, &l) in labels.iter().enumerate() {
                    if l >= k {
                        return Err(Error::Data(format!("label {l} out of range")));
                    }
                    targets[i * k + l] = 1.0;
                }
                tape.bce_with_logits(logits, &targets)
            }
        }
    }

    /// Softmax class probabilities for a batch, on a private tape.
    pub fn predict_probs(&self, images: &[f32], batch: usize, maps: &[SaliencyMap]) -> Result<Vec<f32>> {
        let mut tape = Tape::new();
        let (logits, _) = self.forward(&mut tape, images, batch, maps, false)?;
        let probs = tape.softmax(logits)?;
        Ok(tape.data(probs).to_vec())
    }
}

// ── Optimizer ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub kind: OptimKind,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig { kind: OptimKind::Adam, lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam (bias-corrected) or plain SGD over a parameter store.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub cfg: OptimConfig,
    pub step_count: u64,
    /// First/second moment buffers aligned with store order; empty for SGD.
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl Optimizer {
    pub fn new(cfg: OptimConfig, store: &ParamStore) -> Self {
        let (m, v) = match cfg.kind {
            OptimKind::Adam => (
                store.iter().map(|(_, p)| vec![0.0f32; p.numel()]).collect(),
                store.iter().map(|(_, p)| vec![0.0f32; p.numel()]).collect(),
            ),
            OptimKind::Sgd => (Vec::new(), Vec::new()),
        };
        Optimizer { cfg, step_count: 0, m, v }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[&[f32]]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::Contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        match self.cfg.kind {
            OptimKind::Sgd => {
                let lr = self.cfg.lr;
                for ((_, p), g) in store.iter_mut().zip(grads) {
                    for (w, &gv) in p.data.iter_mut().zip(*g) {
                        *w -= lr * gv;
                    }
                }
            }
            OptimKind::Adam => {
                self.step_count += 1;
                let t = self.step_count as f64;
                let (b1, b2) = (self.cfg.beta1 as f64, self.cfg.beta2 as f64);
                let lr = self.cfg.lr as f64;
                let eps = self.cfg.eps as f64;
                let bc1 = 1.0 - b1.powf(t);
                let bc2 = 1.0 - b2.powf(t);
                for (i, ((_, p), g)) in store.iter_mut().zip(grads).enumerate() {
                    let (ms, vs) = (&mut self.m[i], &mut self.v[i]);
                    for j in 0..p.data.len() {
                        let gv = g[j] as f64;
                        let m = b1 * ms[j] as f64 + (1.0 - b1) * gv;
                        let v = b2 * vs[j] as f64 + (1.0 - b2) * gv * gv;
                        ms[j] = m as f32;
                        vs[j] = v as f32;
                        let update = lr * (m / bc1) / ((v / bc2).sqrt() + eps);
                        p.data[j] = (p.data[j] as f64 - update) as f32;
                    }
                }
            }
        }
        Ok(())
    }
}

// ── Saliency map preparation ─────────────────────────────────────────────

/// Compute (or load from the cache directory) the saliency map of every
/// entry. Keys are relative paths; the cache key mixes the path with the
/// scorer checksum so a different scorer never reuses stale maps.
pub fn precompute_maps(
    root: &Path,
    entries: &[(PathBuf, usize)],
    input_side: usize,
    scorer: &ScorerModel,
    cache_dir: Option<&Path>,
) -> Result<BTreeMap<PathBuf, SaliencyMap>> {
    let checksum = scorer.checksum();
    if let Some(dir) = cache_dir {
        fs::create_dir_all(dir)?;
    }
    let mut maps = BTreeMap::new();
    for (rel, _) in entries {
        if maps.contains_key(rel) {
            continue;
        }
        let rel_str = rel.to_string_lossy();
        let key = map_cache_key(&rel_str, checksum);
        let cache_file = cache_dir.map(|d| d.join(format!("{key:016x}.map")));
        if let Some(cf) = &cache_file {
            if let Some(map) = read_cached_map(cf)? {
                maps.insert(rel.clone(), map);
                continue;
            }
        }
        let image = load_image(&root.join(rel), input_side)?;
        let map = compute_saliency(&image, input_side, scorer)?;
        if let Some(cf) = &cache_file {
            write_cached_map(cf, &map)?;
        }
        maps.insert(rel.clone(), map);
    }
    Ok(maps)
}

fn write_cached_map(path: &Path, map: &SaliencyMap) -> Result<()> {
    let mut bytes = Vec::with_capacity(4 + map.values().len() * 4);
    bytes.extend_from_slice(&(map.side() as u32).to_le_bytes());
    for v in map.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn read_cached_map(path: &Path) -> Result<Option<SaliencyMap>> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    if bytes.len() < 4 {
        return Ok(None); // damaged cache entry: recompute
    }
    let side = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
    if bytes.len() != 4 + side * side * 4 {
        return Ok(None);
    }
    let values: Vec<f32> = bytes[4..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(SaliencyMap::new(side, values).ok())
}

/// Look up the maps of one batch in order; empty when the model fuses no maps.
pub fn maps_for_batch(
    needs: bool,
    all: &BTreeMap<PathBuf, SaliencyMap>,
    paths: &[PathBuf],
) -> Result<Vec<SaliencyMap>> {
    if !needs {
        return Ok(Vec::new());
    }
    paths
        .iter()
        .map(|p| {
            all.get(p)
                .cloned()
                .ok_or_else(|| Error::Contract(format!("no saliency map for {}", p.display())))
        })
        .collect()
}

// ── Training ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct Hyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: OptimConfig,
    pub seed: u64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper { epochs: 10, batch_size: 16, optim: OptimConfig::default(), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_f1: f64,
    pub val_accuracy: f64,
    pub val_auc: f64,
    pub val_recall: f64,
    pub val_precision: f64,
}

impl EpochStats {
    pub fn csv_header() -> &'static str {
        "epoch,train_loss,val_f1,val_accuracy,val_auc,val_recall,val_precision"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.2},{:.2},{:.3},{:.2},{:.2}",
            self.epoch,
            self.train_loss,
            self.val_f1,
            self.val_accuracy,
            self.val_auc,
            self.val_recall,
            self.val_precision
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

pub struct TrainSetup<'a> {
    pub root: &'a Path,
    pub train: &'a [(PathBuf, usize)],
    pub val: &'a [(PathBuf, usize)],
    pub maps: &'a BTreeMap<PathBuf, SaliencyMap>,
    pub hyper: Hyper,
    /// Per-epoch CSV destination.
    pub log_path: Option<&'a Path>,
    /// Best-validation-accuracy checkpoint destination.
    pub ckpt_path: Option<&'a Path>,
}

/// Run the training loop. The model ends up holding the parameters of the
/// best validation epoch (earliest on ties), which are also what the
/// checkpoint stores. Fully reproducible for a fixed (seed, data, config).
pub fn train(model: &mut SvsecModel, setup: &TrainSetup) -> Result<TrainReport> {
    if setup.train.is_empty() || setup.val.is_empty() {
        return Err(Error::Config("train and val splits must be nonempty".into()));
    }
    if setup.hyper.epochs == 0 || setup.hyper.batch_size == 0 {
        return Err(Error::Config("epochs and batch_size must be >= 1".into()));
    }
    let side = model.cfg.input_side();
    let needs_maps = model.cfg.needs_maps();
    let mut optimizer = Optimizer::new(setup.hyper.optim, &model.store);
    let mut rng = Rng::for_stream(setup.hyper.seed, 0x7e41);

    let mut stats = Vec::with_capacity(setup.hyper.epochs);
    let mut best: Option<(f64, usize, Vec<Param>)> = None;

    for epoch in 0..setup.hyper.epochs {
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for batch_idx in batches(setup.train.len(), setup.hyper.batch_size, setup.hyper.seed, epoch as u64) {
            let (images, labels, paths) = load_batch(setup.root, setup.train, &batch_idx, side)?;
            let maps = maps_for_batch(needs_maps, setup.maps, &paths)?;
            let mut tape = Tape::new();
            let (logits, bound) = model.forward(&mut tape, &images, batch_idx.len(), &maps, true)?;
            let loss = model.loss(&mut tape, logits, &labels)?;
            let loss_val = tape.data(loss)[0] as f64;
            if !loss_val.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}")));
            }
            loss_sum += loss_val * batch_idx.len() as f64;
            let k = model.cfg.num_classes;
            for (row, &label) in tape.data(logits).chunks_exact(k).zip(&labels) {
                let mut arg = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[arg] {
                        arg = j;
                    }
                }
                if arg == label {
                    correct += 1;
                }
            }
            tape.backward(loss)?;
            let grads = model.store.grads(&tape, &bound);
            optimizer.step(&mut model.store, &grads)?;
        }

        let val_report = evaluate(model, setup.root, setup.val, setup.maps, setup.hyper.batch_size)?;
        let entry = EpochStats {
            epoch,
            train_loss: loss_sum / setup.train.len() as f64,
            train_accuracy: correct as f64 / setup.train.len() as f64,
            val_f1: val_report.f1,
            val_accuracy: val_report.accuracy,
            val_auc: val_report.auc,
            val_recall: val_report.recall,
            val_precision: val_report.precision,
        };
        let improved = best.as_ref().map(|(acc, _, _)| entry.val_accuracy > *acc).unwrap_or(true);
        if improved {
            let snapshot = model.store.iter().map(|(_, p)| p.clone()).collect();
            best = Some((entry.val_accuracy, epoch, snapshot));
        }
        stats.push(entry);
    }

    let (best_val_accuracy, best_epoch, snapshot) = best.expect("at least one epoch ran");
    for ((_, p), saved) in model.store.iter_mut().zip(&snapshot) {
        *p = saved.clone();
    }

    if let Some(path) = setup.log_path {
        let mut text = String::from(EpochStats::csv_header());
        text.push('\n');
        for s in &stats {
            text.push_str(&s.csv_row());
            text.push('\n');
        }
        fs::write(path, text)?;
    }
    if let Some(path) = setup.ckpt_path {
        save_checkpoint(model, Some(&optimizer), best_epoch as u64, rng.next_u64(), path)?;
    }

    Ok(TrainReport { epochs: stats, best_epoch, best_val_accuracy })
}

/// Evaluate on a split, batched in natural order.
pub fn evaluate(
    model: &SvsecModel,
    root: &Path,
    entries: &[(PathBuf, usize)],
    maps: &BTreeMap<PathBuf, SaliencyMap>,
    batch_size: usize,
) -> Result<EvalReport> {
    if entries.is_empty() {
        return Err(Error::Config("cannot evaluate an empty split".into()));
    }
    let side = model.cfg.input_side();
    let needs_maps = model.cfg.needs_maps();
    let k = model.cfg.num_classes;
    let mut labels = Vec::with_capacity(entries.len());
    let mut probs = Vec::with_capacity(entries.len() * k);
    let indices: Vec<usize> = (0..entries.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (images, batch_labels, paths) = load_batch(root, entries, chunk, side)?;
        let batch_maps = maps_for_batch(needs_maps, maps, &paths)?;
        probs.extend(model.predict_probs(&images, chunk.len(), &batch_maps)?);
        labels.extend(batch_labels);
    }
    let preds = PredictionSet::new(k, labels, probs)?;
    EvalReport::from_predictions(&preds)
}

// ── Checkpointing ────────────────────────────────────────────────────────

/// Serialize model parameters (plus optimizer moments when given) into the
/// checkpoint container.
pub fn save_checkpoint(
    model: &SvsecModel,
    optimizer: Option<&Optimizer>,
    epoch: u64,
    rng_state: u64,
    path: &Path,
) -> Result<()> {
    let meta = CheckpointMeta {
        kind: "svsec".into(),
        model: Some(model.cfg.clone()),
        scorer: None,
        epoch,
        rng_state,
        optim: optimizer.map(|o| o.cfg),
        adam_step: optimizer.map(|o| o.step_count).unwrap_or(0),
    };
    let mut tensors: Vec<(String, Param)> =
        model.store.iter().map(|(n, p)| (n.to_string(), p.clone())).collect();
    if let Some(o) = optimizer {
        if o.cfg.kind == OptimKind::Adam {
            for (i, (name, p)) in model.store.iter().enumerate() {
                tensors.push((format!("adam.m.{name}"), Param { shape: p.shape.clone(), data: o.m[i].clone() }));
                tensors.push((format!("adam.v.{name}"), Param { shape: p.shape.clone(), data: o.v[i].clone() }));
            }
        }
    }
    checkpoint::save_container(path, &meta, &tensors)
}

pub struct LoadedModel {
    pub model: SvsecModel,
    pub optimizer: Option<Optimizer>,
    pub meta: CheckpointMeta,
}

/// Rebuild a model (and optimizer state, when present) from a checkpoint.
/// Forward outputs of the loaded model are bit-identical to the saved one.
pub fn load_checkpoint(path: &Path) -> Result<LoadedModel> {
    let (meta, mut tensors) = checkpoint::load_container(path)?;
    if meta.kind != "svsec" {
        return Err(CheckpointError::Corrupt(format!(
            "checkpoint holds a '{}' model, expected 'svsec'",
            meta.kind
        ))
        .into());
    }
    let cfg = meta
        .model
        .clone()
        .ok_or_else(|| CheckpointError::Corrupt("missing model config".into()))?;
    let mut model = SvsecModel::new(&cfg)?;
    fill_store(&mut model.store, &mut tensors)?;

    let optimizer = match meta.optim {
        Some(ocfg) => {
            let mut o = Optimizer::new(ocfg, &model.store);
            o.step_count = meta.adam_step;
            if ocfg.kind == OptimKind::Adam {
                for (i, (name, p)) in model.store.iter().enumerate() {
                    if let Some(m) = take_tensor(&mut tensors, &format!("adam.m.{name}")) {
                        check_shape_match(&m, &p.shape, name)?;
                        o.m[i] = m.data;
                    }
                    if let Some(v) = take_tensor(&mut tensors, &format!("adam.v.{name}")) {
                        check_shape_match(&v, &p.shape, name)?;
                        o.v[i] = v.data;
                    }
                }
            }
            Some(o)
        }
        None => None,
    };
    Ok(LoadedModel { model, optimizer, meta })
}

fn take_tensor(tensors: &mut Vec<(String, Param)>, name: &str) -> Option<Param> {
    tensors.iter().position(|(n, _)| n == name).map(|i| tensors.remove(i).1)
}

fn check_shape_match(p: &Param, shape: &[usize], name: &str) -> Result<()> {
    if p.shape != shape {
        return Err(CheckpointError::Corrupt(format!(
            "tensor {name} has shape {:?}, model wants {shape:?}",
            p.shape
        ))
        .into());
    }
    Ok(())
}

/// Move checkpoint tensors into a freshly built store, by name.
pub(crate) fn fill_store(store: &mut ParamStore, tensors: &mut Vec<(String, Param)>) -> Result<()> {
    let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
    for name in names {
        let p = take_tensor(tensors, &name)
            .ok_or_else(|| CheckpointError::Corrupt(format!("missing tensor {name}")))?;
        let pref = store.find(&name).expect("name came from the store");
        check_shape_match(&p, &store.get(pref).shape, &name)?;
        *store.get_mut(pref) = p;
    }
    Ok(())
}

/// Save the standalone scorer model.
pub fn save_scorer(scorer: &ScorerModel, path: &Path) -> Result<()> {
    let meta = CheckpointMeta {
        kind: "scorer".into(),
        model: None,
        scorer: Some(scorer.cfg.clone()),
        epoch: 0,
        rng_state: 0,
        optim: None,
        adam_step: 0,
    };
    let tensors: Vec<(String, Param)> =
        scorer.store.iter().map(|(n, p)| (n.to_string(), p.clone())).collect();
    checkpoint::save_container(path, &meta, &tensors)
}

pub fn load_scorer(path: &Path) -> Result<ScorerModel> {
    let (meta, mut tensors) = checkpoint::load_container(path)?;
    if meta.kind != "scorer" {
        return Err(CheckpointError::Corrupt(format!(
            "checkpoint holds a '{}' model, expected 'scorer'",
            meta.kind
        ))
        .into());
    }
    let cfg = meta
        .scorer
        .ok_or_else(|| CheckpointError::Corrupt("missing scorer config".into()))?;
    let mut scorer = ScorerModel::new(&cfg)?;
    fill_store(&mut scorer.store, &mut tensors)?;
    Ok(scorer)
}

/// The default scorer used when no checkpoint is supplied: this engine's own
/// CNN at half the model input side, randomly initialized from the seed.
pub fn default_scorer(cfg: &ModelConfig) -> Result<ScorerModel> {
    ScorerModel::new(&crate::saliency::ScorerConfig {
        input_side: cfg.input_side() / 2,
        stage_filters: cfg.cnn.stage_filters.clone(),
        head_dims: cfg.cnn.head_dims,
        num_classes: cfg.num_classes,
        seed: cfg.seed ^ 0x05a1_1ee7,
    })
}
