//! Gradient-based saliency extraction.
//!
//! An image is downsampled to half resolution, pushed through a scoring
//! classifier, and the score of the winning class is backpropagated to the
//! input pixels. The absolute channel maximum of that input gradient,
//! min-max normalized to `[0,1]`, is the saliency map. The scorer is pluggable:
//! the default is this engine's own CNN branch (fusion off) under a random or
//! checkpointed set of weights.

use std::path::Path;

use crate::cnn::{CnnBranch, CnnConfig};
use crate::error::{Error, Result};
use crate::nn::{Init, LinearLayer, ParamStore};
use crate::resize::{halve_area, up2_nearest};
use crate::rng::Rng;
use crate::tensor::{Tape, TensorId};

/// Single-channel importance image with values in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    side: usize,
    values: Vec<f32>,
    /// Path or label of the image this map explains, when known.
    pub source: Option<String>,
}

impl SaliencyMap {
    pub fn new(side: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != side * side {
            return Err(Error::ShapeMismatch(format!(
                "saliency map side {side} wants {} values, got {}",
                side * side,
                values.len()
            )));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Contract("saliency values must lie in [0,1]".into()));
        }
        Ok(SaliencyMap { side, values, source: None })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Resample to `side`: one nearest-neighbor doubling for the input-fusion
    /// case, or repeated 2x area averaging down the stage pyramid. Any other
    /// ratio is a config error.
    pub fn resized(&self, side: usize) -> Result<Vec<f32>> {
        if side == self.side {
            return Ok(self.values.clone());
        }
        if side == self.side * 2 {
            return Ok(up2_nearest(&self.values, 1, self.side, self.side));
        }
        if side > 0 && self.side % side == 0 {
            let mut factor = self.side / side;
            if factor.is_power_of_two() {
                let mut cur = self.values.clone();
                let mut cur_side = self.side;
                while factor > 1 {
                    cur = halve_area(&cur, 1, cur_side, cur_side);
                    cur_side /= 2;
                    factor /= 2;
                }
                return Ok(cur);
            }
        }
        Err(Error::Config(format!(
            "unsupported saliency resize {} -> {side}",
            self.side
        )))
    }

    /// 8-bit grayscale PNG, value = round(255·v).
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let pixels: Vec<u8> = self.values.iter().map(|&v| (255.0 * v).round() as u8).collect();
        let img = image::GrayImage::from_raw(self.side as u32, self.side as u32, pixels)
            .expect("buffer length matches dimensions");
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Data(format!("writing {}: {e}", path.display())))
    }
}

/// A classifier that can score an image and expose input gradients.
pub trait Scorer {
    fn input_side(&self) -> usize;
    fn num_classes(&self) -> usize;
    /// Forward a `[1,3,side,side]` image leaf to `[1,K]` logits on the tape.
    fn forward(&self, tape: &mut Tape, image: TensorId) -> Result<TensorId>;
}

/// Extract the saliency map of a `[1,3,S,S]` image. `S` must be twice the
/// scorer's input side; the result is at the scorer's resolution (S/2).
pub fn compute_saliency(image: &[f32], side: usize, scorer: &dyn Scorer) -> Result<SaliencyMap> {
    if image.len() != 3 * side * side {
        return Err(Error::ShapeMismatch(format!(
            "saliency input should be [1,3,{side},{side}]"
        )));
    }
    if side != scorer.input_side() * 2 {
        return Err(Error::ShapeMismatch(format!(
            "image side {side} is not twice the scorer input {}",
            scorer.input_side()
        )));
    }
    if side % 2 != 0 {
        return Err(Error::ShapeMismatch(format!("image side {side} must be even")));
    }
    let small_side = side / 2;
    let small = halve_area(image, 3, side, side);

    let mut tape = Tape::new();
    let input = tape.leaf(&[1, 3, small_side, small_side], small, true)?;
    let logits = scorer.forward(&mut tape, input)?;
    let ls = tape.shape(logits);
    if ls.len() != 2 || ls[0] != 1 {
        return Err(Error::Contract(format!("scorer produced shape {ls:?}, want [1,K]")));
    }

    // Winning class, ties to the lowest index.
    let scores = tape.data(logits);
    let mut best = 0usize;
    for (k, &v) in scores.iter().enumerate() {
        if v > scores[best] {
            best = k;
        }
    }
    let picked = tape.gather(logits, vec![best as u32], &[1])?;
    tape.backward(picked)?;
    let grad = tape.grad(input).expect("input requires grad");

    // Channel reduction by max absolute value, then min-max normalization.
    let hw = small_side * small_side;
    let mut raw = vec![0.0f32; hw];
    for (i, r) in raw.iter_mut().enumerate() {
        *r = grad[i].abs().max(grad[hw + i].abs()).max(grad[2 * hw + i].abs());
    }
    let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
    for &v in &raw {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let values = if hi > lo {
        raw.iter().map(|&v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; hw]
    };
    SaliencyMap::new(small_side, values)
}

// ── Default scorer ───────────────────────────────────────────────────────

/// Configuration of the standalone scoring classifier: a fusion-free CNN
/// branch plus a class projection.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ScorerConfig {
    pub input_side: usize,
    pub stage_filters: Vec<usize>,
    pub head_dims: [usize; 3],
    pub num_classes: usize,
    pub seed: u64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            input_side: 224,
            stage_filters: vec![32, 64, 128, 256],
            head_dims: [256, 128, 64],
            num_classes: 8,
            seed: 0x5a11,
        }
    }
}

impl ScorerConfig {
    pub fn cnn_config(&self) -> CnnConfig {
        CnnConfig {
            input_side: self.input_side,
            stage_filters: self.stage_filters.clone(),
            fuse_input_channel: false,
            fuse_per_stage: false,
            head_dims: self.head_dims,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("scorer needs at least 2 classes".into()));
        }
        self.cnn_config().validate()
    }
}

/// The pluggable default scorer.
#[derive(Debug, Clone)]
pub struct ScorerModel {
    pub cfg: ScorerConfig,
    pub store: ParamStore,
    pub branch: CnnBranch,
    pub head: LinearLayer,
}

impl ScorerModel {
    pub fn new(cfg: &ScorerConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::for_stream(cfg.seed, 0x5c0e);
        let mut store = ParamStore::new();
        let branch = CnnBranch::new(&mut store, "scorer.cnn", &cfg.cnn_config(), &mut rng)?;
        let head = LinearLayer::new(
            &mut store,
            "scorer.head",
            cfg.head_dims[2],
            cfg.num_classes,
            Init::HeNormal,
            &mut rng,
        );
        Ok(ScorerModel { cfg: cfg.clone(), store, branch, head })
    }

    /// FNV-1a over the parameter bytes in store order; keys the disk cache so
    /// maps recompute whenever the scorer changes.
    pub fn checksum(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for (_, p) in self.store.iter() {
            for v in &p.data {
                for b in v.to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }
}

impl Scorer for ScorerModel {
    fn input_side(&self) -> usize {
        self.cfg.input_side
    }

    fn num_classes(&self) -> usize {
        self.cfg.num_classes
    }

    fn forward(&self, tape: &mut Tape, image: TensorId) -> Result<TensorId> {
        let bound = self.store.bind(tape, false)?;
        let feat = self.branch.forward(tape, &bound, image, &[])?;
        self.head.forward(tape, &bound, feat)
    }
}

/// Cache key for a (image, scorer) pair.
pub fn map_cache_key(image_path: &str, scorer_checksum: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in image_path.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ scorer_checksum
}
