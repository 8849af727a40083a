//! Global-view branch: large-patch embedding and shifted-window attention.
//!
//! The image is cut into non-overlapping 48x48 patches, each flattened and
//! projected to an embedding; encoder blocks then alternate window attention
//! (W-MSA) with its cyclically shifted variant (SW-MSA) so information crosses
//! window borders. A final layer norm, token average and dense layer produce
//! the branch feature.

use crate::error::{Error, Result};
use crate::nn::{Bound, Init, LayerNormLayer, LinearLayer, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Tape, TensorId};

/// Additive mask value standing in for minus infinity; large enough to zero
/// the softmax weight without producing NaN.
pub const MASK_NEG: f32 = -1e9;

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SwinConfig {
    pub patch_size: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub window_size: usize,
    /// Cyclic shift of the SW-MSA blocks; the usual choice is window_size / 2.
    pub shift: usize,
    /// Number of (W-MSA, SW-MSA) block pairs.
    pub depth_pairs: usize,
    pub mlp_ratio: usize,
    pub input_side: usize,
    pub out_dim: usize,
}

impl Default for SwinConfig {
    fn default() -> Self {
        SwinConfig {
            patch_size: 48,
            embed_dim: 96,
            num_heads: 4,
            window_size: 5,
            shift: 2,
            depth_pairs: 1,
            mlp_ratio: 4,
            input_side: 480,
            out_dim: 64,
        }
    }
}

impl SwinConfig {
    /// Token grid side: input_side / patch_size.
    pub fn grid_side(&self) -> usize {
        self.input_side / self.patch_size
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("patch_size", self.patch_size),
            ("embed_dim", self.embed_dim),
            ("num_heads", self.num_heads),
            ("window_size", self.window_size),
            ("depth_pairs", self.depth_pairs),
            ("mlp_ratio", self.mlp_ratio),
            ("input_side", self.input_side),
            ("out_dim", self.out_dim),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::Config(format!("swin.{name} must be >= 1")));
            }
        }
        if self.input_side % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "swin input_side {} is not divisible by patch_size {}",
                self.input_side, self.patch_size
            )));
        }
        let grid = self.grid_side();
        if grid % self.window_size != 0 {
            return Err(Error::Config(format!(
                "token grid side {grid} is not divisible by window_size {}",
                self.window_size
            )));
        }
        if self.embed_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if self.shift >= self.window_size {
            return Err(Error::Config(format!(
                "shift {} must be < window_size {}",
                self.shift, self.window_size
            )));
        }
        Ok(())
    }
}

// ── Token grid plumbing ──────────────────────────────────────────────────

/// Split `[B,3,S,S]` into flattened patches and project each to the embedding
/// dimension. Returns the `[B,Hg,Wg,C]` token grid.
pub fn patch_embed(
    tape: &mut Tape,
    bound: &Bound,
    image: TensorId,
    proj: &LinearLayer,
    cfg: &SwinConfig,
) -> Result<TensorId> {
    let s = tape.shape(image).to_vec();
    if s.len() != 4 || s[1] != 3 || s[2] != cfg.input_side || s[3] != cfg.input_side {
        return Err(Error::Config(format!(
            "patch_embed expects [B,3,{0},{0}], got {s:?}",
            cfg.input_side
        )));
    }
    let (b, side, p) = (s[0], cfg.input_side, cfg.patch_size);
    let grid = side / p;
    let feat = 3 * p * p;
    // out (b, token, c*p*p + pi*p + pj) <- in (b, c, gr*p+pi, gc*p+pj)
    let mut map = Vec::with_capacity(b * grid * grid * feat);
    for bi in 0..b {
        for gr in 0..grid {
            for gc in 0..grid {
                for c in 0..3 {
                    for pi in 0..p {
                        let row = ((bi * 3 + c) * side + gr * p + pi) * side + gc * p;
                        for pj in 0..p {
                            map.push((row + pj) as u32);
                        }
                    }
                }
            }
        }
    }
    let patches = tape.gather(image, map, &[b * grid * grid, feat])?;
    let tokens = proj.forward(tape, bound, patches)?;
    tape.reshape(tokens, &[b, grid, grid, cfg.embed_dim])
}

/// `[B,Hg,Wg,C]` -> `[B·nW, w·w, C]` with row-major window and in-window
/// token order.
pub fn window_partition(tape: &mut Tape, grid: TensorId, w: usize) -> Result<TensorId> {
    let s = tape.shape(grid).to_vec();
    if s.len() != 4 {
        return Err(Error::ShapeMismatch(format!("window_partition wants [B,Hg,Wg,C], got {s:?}")));
    }
    let (b, hg, wg, c) = (s[0], s[1], s[2], s[3]);
    if hg % w != 0 || wg % w != 0 {
        return Err(Error::Config(format!(
            "grid {hg}x{wg} is not divisible by window_size {w}"
        )));
    }
    let (nh, nw) = (hg / w, wg / w);
    let mut map = Vec::with_capacity(b * hg * wg * c);
    for bi in 0..b {
        for wr in 0..nh {
            for wc in 0..nw {
                for ir in 0..w {
                    for ic in 0..w {
                        let base = ((bi * hg + wr * w + ir) * wg + wc * w + ic) * c;
                        for ch in 0..c {
                            map.push((base + ch) as u32);
                        }
                    }
                }
            }
        }
    }
    tape.gather(grid, map, &[b * nh * nw, w * w, c])
}

/// Inverse of [`window_partition`].
pub fn window_reverse(tape: &mut Tape, windows: TensorId, b: usize, hg: usize, wg: usize, w: usize) -> Result<TensorId> {
    let s = tape.shape(windows).to_vec();
    let (nh, nw) = (hg / w, wg / w);
    if s.len() != 3 || s[0] != b * nh * nw || s[1] != w * w {
        return Err(Error::ShapeMismatch(format!(
            "window_reverse got {s:?} for grid {hg}x{wg}, window {w}"
        )));
    }
    let c = s[2];
    let mut map = Vec::with_capacity(b * hg * wg * c);
    for bi in 0..b {
        for r in 0..hg {
            for col in 0..wg {
                let win = (bi * nh + r / w) * nw + col / w;
                let slot = (r % w) * w + col % w;
                let base = (win * w * w + slot) * c;
                for ch in 0..c {
                    map.push((base + ch) as u32);
                }
            }
        }
    }
    tape.gather(windows, map, &[b, hg, wg, c])
}

/// Roll the token grid down-right by `s`: the token at (i, j) moves to
/// ((i+s) mod Hg, (j+s) mod Wg). Shifting by (Hg−s) undoes it.
pub fn cyclic_shift(tape: &mut Tape, grid: TensorId, s: usize) -> Result<TensorId> {
    let sh = tape.shape(grid).to_vec();
    if sh.len() != 4 {
        return Err(Error::ShapeMismatch(format!("cyclic_shift wants [B,Hg,Wg,C], got {sh:?}")));
    }
    let (b, hg, wg, c) = (sh[0], sh[1], sh[2], sh[3]);
    if s == 0 {
        return tape.reshape(grid, &sh);
    }
    let mut map = Vec::with_capacity(b * hg * wg * c);
    for bi in 0..b {
        for i in 0..hg {
            let si = (i + hg - s % hg) % hg;
            for j in 0..wg {
                let sj = (j + wg - s % wg) % wg;
                let base = ((bi * hg + si) * wg + sj) * c;
                for ch in 0..c {
                    map.push((base + ch) as u32);
                }
            }
        }
    }
    tape.gather(grid, map, &sh)
}

/// Per-axis region label for the 3-region partition a down-right shift
/// induces: [0, w−s), [w−s, side−s), [side−s, side).
fn shift_region(coord: usize, side: usize, w: usize, s: usize) -> usize {
    if coord < w - s {
        0
    } else if coord < side - s {
        1
    } else {
        2
    }
}

/// Additive attention mask for SW-MSA, `[nW, w·w, w·w]` flattened. Entry 0
/// where both tokens of a window come from the same contiguous pre-shift
/// region, [`MASK_NEG`] otherwise. All zeros when `s == 0`.
pub fn shifted_window_mask(hg: usize, wg: usize, w: usize, s: usize) -> Result<Vec<f32>> {
    if hg % w != 0 || wg % w != 0 {
        return Err(Error::Config(format!("grid {hg}x{wg} not divisible by window {w}")));
    }
    if s >= w {
        return Err(Error::Config(format!("shift {s} must be < window {w}")));
    }
    let (nh, nw) = (hg / w, wg / w);
    let t = w * w;
    let mut mask = vec![0.0f32; nh * nw * t * t];
    if s == 0 {
        return Ok(mask);
    }
    // Region id of each shifted-grid cell, keyed by its pre-shift position.
    let mut ids = vec![0u8; hg * wg];
    for i in 0..hg {
        for j in 0..wg {
            // cell (i, j) after the shift held the token from (i-s, j-s)
            let pi = (i + hg - s) % hg;
            let pj = (j + wg - s) % wg;
            ids[i * wg + j] = (shift_region(pi, hg, w, s) * 3 + shift_region(pj, wg, w, s)) as u8;
        }
    }
    for wr in 0..nh {
        for wc in 0..nw {
            let win = wr * nw + wc;
            for p in 0..t {
                let ip = ids[(wr * w + p / w) * wg + wc * w + p % w];
                for q in 0..t {
                    let iq = ids[(wr * w + q / w) * wg + wc * w + q % w];
                    if ip != iq {
                        mask[(win * t + p) * t + q] = MASK_NEG;
                    }
                }
            }
        }
    }
    Ok(mask)
}

// ── Encoder block ────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct SwinBlock {
    pub shifted: bool,
    pub norm1: LayerNormLayer,
    pub q: LinearLayer,
    pub k: LinearLayer,
    pub v: LinearLayer,
    pub proj: LinearLayer,
    pub norm2: LayerNormLayer,
    pub fc1: LinearLayer,
    pub fc2: LinearLayer,
}

impl SwinBlock {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: &SwinConfig, shifted: bool, rng: &mut Rng) -> Self {
        let c = cfg.embed_dim;
        let hidden = cfg.mlp_ratio * c;
        SwinBlock {
            shifted,
            norm1: LayerNormLayer::new(store, &format!("{prefix}.norm1"), c),
            q: LinearLayer::new(store, &format!("{prefix}.attn.q"), c, c, Init::XavierUniform, rng),
            k: LinearLayer::new(store, &format!("{prefix}.attn.k"), c, c, Init::XavierUniform, rng),
            v: LinearLayer::new(store, &format!("{prefix}.attn.v"), c, c, Init::XavierUniform, rng),
            proj: LinearLayer::new(store, &format!("{prefix}.attn.proj"), c, c, Init::XavierUniform, rng),
            norm2: LayerNormLayer::new(store, &format!("{prefix}.norm2"), c),
            fc1: LinearLayer::new(store, &format!("{prefix}.mlp.fc1"), c, hidden, Init::XavierUniform, rng),
            fc2: LinearLayer::new(store, &format!("{prefix}.mlp.fc2"), hidden, c, Init::XavierUniform, rng),
        }
    }
}

/// Permute `[N, T, H, hd]` <-> `[N·H, T, hd]`.
fn split_heads(tape: &mut Tape, x: TensorId, n: usize, t: usize, heads: usize, hd: usize) -> Result<TensorId> {
    let mut map = Vec::with_capacity(n * heads * t * hd);
    for ni in 0..n {
        for h in 0..heads {
            for ti in 0..t {
                let base = ((ni * t + ti) * heads + h) * hd;
                for d in 0..hd {
                    map.push((base + d) as u32);
                }
            }
        }
    }
    tape.gather(x, map, &[n * heads, t, hd])
}

fn merge_heads(tape: &mut Tape, x: TensorId, n: usize, t: usize, heads: usize, hd: usize) -> Result<TensorId> {
    let mut map = Vec::with_capacity(n * t * heads * hd);
    for ni in 0..n {
        for ti in 0..t {
            for h in 0..heads {
                let base = ((ni * heads + h) * t + ti) * hd;
                for d in 0..hd {
                    map.push((base + d) as u32);
                }
            }
        }
    }
    tape.gather(x, map, &[n, t, heads * hd])
}

/// Transpose the last two axes of a 3-D tensor.
fn transpose_last2(tape: &mut Tape, x: TensorId) -> Result<TensorId> {
    let s = tape.shape(x).to_vec();
    let (n, a, b) = (s[0], s[1], s[2]);
    let mut map = Vec::with_capacity(n * a * b);
    for ni in 0..n {
        for bi in 0..b {
            for ai in 0..a {
                map.push(((ni * a + ai) * b + bi) as u32);
            }
        }
    }
    tape.gather(x, map, &[n, b, a])
}

/// Multi-head window attention over `[NW, T, C]` windows with an optional
/// additive `[nW, T, T]` mask (tiled over batch and heads).
fn window_attention(
    tape: &mut Tape,
    bound: &Bound,
    block: &SwinBlock,
    windows: TensorId,
    heads: usize,
    mask: Option<&[f32]>,
    windows_per_image: usize,
) -> Result<TensorId> {
    let s = tape.shape(windows).to_vec();
    let (nw, t, c) = (s[0], s[1], s[2]);
    let hd = c / heads;
    let flat = tape.reshape(windows, &[nw * t, c])?;
    let q = block.q.forward(tape, bound, flat)?;
    let k = block.k.forward(tape, bound, flat)?;
    let v = block.v.forward(tape, bound, flat)?;

    let q = tape.reshape(q, &[nw, t, heads, hd])?;
    let k = tape.reshape(k, &[nw, t, heads, hd])?;
    let v = tape.reshape(v, &[nw, t, heads, hd])?;
    let q = split_heads(tape, q, nw, t, heads, hd)?;
    let k = split_heads(tape, k, nw, t, heads, hd)?;
    let v = split_heads(tape, v, nw, t, heads, hd)?;

    let scale = 1.0 / (hd as f64).sqrt() as f32;
    let q = tape.scalar_mul(q, scale)?;
    let kt = transpose_last2(tape, k)?;
    let mut scores = tape.bmm(q, kt)?; // [nw*heads, T, T]

    if let Some(m) = mask {
        // Tile the per-window mask over batch images and heads.
        let mut full = Vec::with_capacity(nw * heads * t * t);
        for wi in 0..nw {
            let base = (wi % windows_per_image) * t * t;
            for _ in 0..heads {
                full.extend_from_slice(&m[base..base + t * t]);
            }
        }
        let mask_id = tape.leaf(&[nw * heads, t, t], full, false)?;
        scores = tape.add(scores, mask_id)?;
    }

    let attn = tape.softmax(scores)?;
    let ctx = tape.bmm(attn, v)?; // [nw*heads, T, hd]
    let merged = merge_heads(tape, ctx, nw, t, heads, hd)?;
    let flat = tape.reshape(merged, &[nw * t, c])?;
    let out = block.proj.forward(tape, bound, flat)?;
    tape.reshape(out, &[nw, t, c])
}

/// One encoder block: x + (S)W-MSA(LN(x)), then x + MLP(LN(x)).
pub fn swin_block_forward(
    tape: &mut Tape,
    bound: &Bound,
    block: &SwinBlock,
    grid: TensorId,
    cfg: &SwinConfig,
) -> Result<TensorId> {
    let s = tape.shape(grid).to_vec();
    let (b, hg, wg, c) = (s[0], s[1], s[2], s[3]);
    let w = cfg.window_size;
    let shift = if block.shifted { cfg.shift } else { 0 };
    if shift > 0 && hg != wg {
        // the reverse shift below assumes one shift amount for both axes
        return Err(Error::Config(format!(
            "shifted blocks need a square token grid, got {hg}x{wg}"
        )));
    }

    let normed = block.norm1.forward(tape, bound, grid)?;
    let shifted_grid = if shift > 0 { cyclic_shift(tape, normed, shift)? } else { normed };
    let windows = window_partition(tape, shifted_grid, w)?;

    let mask_data;
    let mask = if shift > 0 {
        mask_data = shifted_window_mask(hg, wg, w, shift)?;
        Some(mask_data.as_slice())
    } else {
        None
    };
    let windows_per_image = (hg / w) * (wg / w);
    let attended = window_attention(tape, bound, block, windows, cfg.num_heads, mask, windows_per_image)?;

    let restored = window_reverse(tape, attended, b, hg, wg, w)?;
    let unshifted = if shift > 0 { cyclic_shift(tape, restored, hg - shift)? } else { restored };
    let x = tape.add(grid, unshifted)?;

    let normed2 = block.norm2.forward(tape, bound, x)?;
    let flat = tape.reshape(normed2, &[b * hg * wg, c])?;
    let hidden = block.fc1.forward(tape, bound, flat)?;
    let act = tape.gelu(hidden)?;
    let mlp_out = block.fc2.forward(tape, bound, act)?;
    let mlp_grid = tape.reshape(mlp_out, &[b, hg, wg, c])?;
    tape.add(x, mlp_grid)
}

// ── Branch ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct SwinBranch {
    pub cfg: SwinConfig,
    pub patch_proj: LinearLayer,
    pub blocks: Vec<SwinBlock>,
    pub final_norm: LayerNormLayer,
    pub head: LinearLayer,
}

impl SwinBranch {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: &SwinConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.embed_dim;
        let patch_feat = 3 * cfg.patch_size * cfg.patch_size;
        let patch_proj = LinearLayer::new(
            store,
            &format!("{prefix}.patch_proj"),
            patch_feat,
            c,
            Init::XavierUniform,
            rng,
        );
        let mut blocks = Vec::with_capacity(cfg.depth_pairs * 2);
        for pair in 0..cfg.depth_pairs {
            blocks.push(SwinBlock::new(store, &format!("{prefix}.block{}", pair * 2), cfg, false, rng));
            blocks.push(SwinBlock::new(store, &format!("{prefix}.block{}", pair * 2 + 1), cfg, true, rng));
        }
        let final_norm = LayerNormLayer::new(store, &format!("{prefix}.norm"), c);
        let head = LinearLayer::new(store, &format!("{prefix}.head"), c, cfg.out_dim, Init::XavierUniform, rng);
        Ok(SwinBranch { cfg: cfg.clone(), patch_proj, blocks, final_norm, head })
    }

    /// `[B,3,S,S]` image -> `[B,out_dim]` feature.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, image: TensorId) -> Result<TensorId> {
        let mut grid = patch_embed(tape, bound, image, &self.patch_proj, &self.cfg)?;
        for block in &self.blocks {
            grid = swin_block_forward(tape, bound, block, grid, &self.cfg)?;
        }
        let normed = self.final_norm.forward(tape, bound, grid)?;
        let g = self.cfg.grid_side();
        let b = tape.shape(normed)[0];
        let tokens = tape.reshape(normed, &[b, g * g, self.cfg.embed_dim])?;
        let pooled = tape.token_mean(tokens)?;
        self.head.forward(tape, bound, pooled)
    }
}
