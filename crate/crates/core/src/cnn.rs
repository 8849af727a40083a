//! Local-view branch: a slimmed VGG-style CNN with saliency fusion.
//!
//! Each stage is conv3x3 -> ReLU -> conv3x3 -> ReLU -> maxpool(2,2), halving
//! the spatial side. The saliency map is appended as an extra channel to the
//! network input and again after every stage but the last, so the filters of
//! the next stage see the importance signal at their own resolution. Global
//! average pooling of the last stage feeds two dense layers.

use crate::error::{Error, Result};
use crate::nn::{Bound, Conv2dLayer, Init, LinearLayer, ParamStore};
use crate::rng::Rng;
use crate::saliency::SaliencyMap;
use crate::tensor::{Tape, TensorId};

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct CnnConfig {
    pub input_side: usize,
    pub stage_filters: Vec<usize>,
    /// Append the map to the RGB input as a fourth channel.
    pub fuse_input_channel: bool,
    /// Append the map after every stage but the last.
    pub fuse_per_stage: bool,
    /// `[pooled feature width, first dense, branch output]`.
    pub head_dims: [usize; 3],
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            input_side: 448,
            stage_filters: vec![32, 64, 128, 256],
            fuse_input_channel: true,
            fuse_per_stage: true,
            head_dims: [256, 128, 64],
        }
    }
}

impl CnnConfig {
    pub fn num_stages(&self) -> usize {
        self.stage_filters.len()
    }

    /// Native saliency-map side this branch expects: half the input side.
    pub fn map_side(&self) -> usize {
        self.input_side / 2
    }

    pub fn fusing(&self) -> bool {
        self.fuse_input_channel || self.fuse_per_stage
    }

    /// Input channel count of each stage, fusion included.
    pub fn stage_in_channels(&self) -> Vec<usize> {
        let mut chans = Vec::with_capacity(self.num_stages());
        for (i, _) in self.stage_filters.iter().enumerate() {
            if i == 0 {
                chans.push(if self.fuse_input_channel { 4 } else { 3 });
            } else {
                let prev = self.stage_filters[i - 1];
                chans.push(if self.fuse_per_stage { prev + 1 } else { prev });
            }
        }
        chans
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_filters.is_empty() {
            return Err(Error::Config("cnn needs at least one stage".into()));
        }
        if self.stage_filters.contains(&0) {
            return Err(Error::Config("cnn stage filter counts must be >= 1".into()));
        }
        if self.head_dims.contains(&0) {
            return Err(Error::Config("cnn head dims must be >= 1".into()));
        }
        let last = *self.stage_filters.last().expect("nonempty");
        if self.head_dims[0] != last {
            return Err(Error::Config(format!(
                "cnn head input {} must equal the last stage filter count {last}",
                self.head_dims[0]
            )));
        }
        // The side must halve cleanly through every stage so pooling never
        // pads and fusion resolutions line up with the map's 2x pyramid.
        if self.input_side % (1 << self.num_stages()) != 0 {
            return Err(Error::Config(format!(
                "cnn input_side {} must be divisible by 2^{}",
                self.input_side,
                self.num_stages()
            )));
        }
        Ok(())
    }
}

/// One VGG stage: two 3x3 convolutions with the same filter count and
/// independent weights, then a stride-2 max pool.
#[derive(Debug, Clone)]
pub struct VggStage {
    pub conv0: Conv2dLayer,
    pub conv1: Conv2dLayer,
}

impl VggStage {
    pub fn new(store: &mut ParamStore, prefix: &str, in_c: usize, filters: usize, rng: &mut Rng) -> Self {
        VggStage {
            conv0: Conv2dLayer::new3x3(store, &format!("{prefix}.conv0"), in_c, filters, Init::HeNormal, rng),
            conv1: Conv2dLayer::new3x3(store, &format!("{prefix}.conv1"), filters, filters, Init::HeNormal, rng),
        }
    }
}

/// conv -> ReLU -> conv -> ReLU -> maxpool(2,2); spatial side halves.
pub fn vgg_stage_forward(tape: &mut Tape, bound: &Bound, stage: &VggStage, x: TensorId) -> Result<TensorId> {
    let y = stage.conv0.forward(tape, bound, x)?;
    let y = tape.relu(y)?;
    let y = stage.conv1.forward(tape, bound, y)?;
    let y = tape.relu(y)?;
    tape.maxpool2d(y)
}

/// Append a single-channel map to the feature tensor: `[B,C,H,W]` + `[B,1,H,W]`
/// -> `[B,C+1,H,W]`, features first.
pub fn fuse_saliency(tape: &mut Tape, x: TensorId, map_channel: TensorId) -> Result<TensorId> {
    let (sx, sm) = (tape.shape(x), tape.shape(map_channel));
    if sx.len() != 4 || sm.len() != 4 || sm[1] != 1 || sx[0] != sm[0] || sx[2] != sm[2] || sx[3] != sm[3] {
        return Err(Error::ShapeMismatch(format!(
            "fuse_saliency features {sx:?} vs map {sm:?}"
        )));
    }
    tape.concat(&[x, map_channel], 1)
}

#[derive(Debug, Clone)]
pub struct CnnBranch {
    pub cfg: CnnConfig,
    pub stages: Vec<VggStage>,
    pub fc1: LinearLayer,
    pub fc2: LinearLayer,
}

impl CnnBranch {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: &CnnConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let in_chans = cfg.stage_in_channels();
        let stages = cfg
            .stage_filters
            .iter()
            .zip(&in_chans)
            .enumerate()
            .map(|(i, (&filters, &in_c))| {
                VggStage::new(store, &format!("{prefix}.stage{i}"), in_c, filters, rng)
            })
            .collect();
        let [pooled, mid, out] = cfg.head_dims;
        let fc1 = LinearLayer::new(store, &format!("{prefix}.fc1"), pooled, mid, Init::HeNormal, rng);
        let fc2 = LinearLayer::new(store, &format!("{prefix}.fc2"), mid, out, Init::HeNormal, rng);
        Ok(CnnBranch { cfg: cfg.clone(), stages, fc1, fc2 })
    }

    /// Build the detached `[B,1,side,side]` map leaf for one fusion level.
    fn map_leaf(&self, tape: &mut Tape, maps: &[SaliencyMap], side: usize) -> Result<TensorId> {
        let mut data = Vec::with_capacity(maps.len() * side * side);
        for m in maps {
            data.extend_from_slice(&m.resized(side)?);
        }
        tape.leaf(&[maps.len(), 1, side, side], data, false)
    }

    /// `[B,3,S,S]` image -> `[B,out]` feature. `maps` must hold one map per
    /// batch image whenever a fuse flag is set; maps are treated as constant
    /// inputs (no gradient flows into the saliency extractor).
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        image: TensorId,
        maps: &[SaliencyMap],
    ) -> Result<TensorId> {
        let (_, out) = self.forward_pooled(tape, bound, image, maps)?;
        Ok(out)
    }

    /// Like [`forward`](Self::forward) but also returns the pooled pre-head
    /// feature (`[B, head_dims[0]]`).
    pub fn forward_pooled(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        image: TensorId,
        maps: &[SaliencyMap],
    ) -> Result<(TensorId, TensorId)> {
        let s = tape.shape(image).to_vec();
        if s.len() != 4 || s[1] != 3 || s[2] != self.cfg.input_side || s[3] != self.cfg.input_side {
            return Err(Error::Config(format!(
                "cnn branch expects [B,3,{0},{0}], got {s:?}",
                self.cfg.input_side
            )));
        }
        let batch = s[0];
        if self.cfg.fusing() && maps.len() != batch {
            return Err(Error::Contract(format!(
                "{} saliency maps for batch of {batch}",
                maps.len()
            )));
        }

        let mut x = image;
        let mut side = self.cfg.input_side;
        if self.cfg.fuse_input_channel {
            let m = self.map_leaf(tape, maps, side)?;
            x = fuse_saliency(tape, x, m)?;
        }
        let last = self.stages.len() - 1;
        for (i, stage) in self.stages.iter().enumerate() {
            x = vgg_stage_forward(tape, bound, stage, x)?;
            side /= 2;
            if self.cfg.fuse_per_stage && i < last {
                let m = self.map_leaf(tape, maps, side)?;
                x = fuse_saliency(tape, x, m)?;
            }
        }
        let pooled = tape.global_avg_pool(x)?;
        let h = self.fc1.forward(tape, bound, pooled)?;
        let h = tape.relu(h)?;
        let out = self.fc2.forward(tape, bound, h)?;
        let out = tape.relu(out)?;
        Ok((pooled, out))
    }
}
