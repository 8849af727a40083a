//! Deterministic image resampling on flat `[C,H,W]` float buffers.

/// Bilinear resize with center-aligned sampling and edge clamping. Resizing
/// to the source size copies exactly.
pub fn bilinear(src: &[f32], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    debug_assert_eq!(src.len(), c * h * w);
    if oh == h && ow == w {
        return src.to_vec();
    }
    let mut out = vec![0.0f32; c * oh * ow];
    let sy = h as f64 / oh as f64;
    let sx = w as f64 / ow as f64;
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for oy in 0..oh {
            let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let wy = fy - y0 as f64;
            for ox in 0..ow {
                let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let wx = fx - x0 as f64;
                let a = plane[y0 * w + x0] as f64;
                let b = plane[y0 * w + x1] as f64;
                let d = plane[y1 * w + x0] as f64;
                let e = plane[y1 * w + x1] as f64;
                let top = a + (b - a) * wx;
                let bot = d + (e - d) * wx;
                dst[oy * ow + ox] = (top + (bot - top) * wy) as f32;
            }
        }
    }
    out
}

/// One 2x area-average reduction; extents must be even.
pub fn halve_area(src: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    debug_assert_eq!(src.len(), c * h * w);
    debug_assert!(h % 2 == 0 && w % 2 == 0, "halve_area needs even extents");
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0f32; c * oh * ow];
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * oh * ow..(ch + 1) * ow * oh];
        for oy in 0..oh {
            for ox in 0..ow {
                let (y, x) = (oy * 2, ox * 2);
                let sum = plane[y * w + x] as f64
                    + plane[y * w + x + 1] as f64
                    + plane[(y + 1) * w + x] as f64
                    + plane[(y + 1) * w + x + 1] as f64;
                dst[oy * ow + ox] = (sum * 0.25) as f32;
            }
        }
    }
    out
}

/// Nearest-neighbor 2x upsample (pixel duplication).
pub fn up2_nearest(src: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    debug_assert_eq!(src.len(), c * h * w);
    let (oh, ow) = (h * 2, w * 2);
    let mut out = vec![0.0f32; c * oh * ow];
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                dst[oy * ow + ox] = plane[(oy / 2) * w + ox / 2];
            }
        }
    }
    out
}
