use rayon::prelude::*;

use super::{ch, depth_order, RenderOutputs, Splat, MAX_ALPHA, MIN_TRANSMITTANCE, SUPPORT_Q, TILE};
use crate::geometry::{CameraFrame, Vec2};

/// One splat's contribution to one pixel, kept for the backward sweep.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Contribution {
    pub slot: usize,
    pub alpha: f64,
    pub clamped: bool,
    pub falloff: f64,
    /// `conic · (p − μ)`.
    pub c: Vec2,
    pub t_before: f64,
}

/// Front-to-back compositing of `list` (already depth sorted) at one pixel.
/// `tiled` enables the support cutoff and early termination.
pub(crate) fn composite(
    px: f64,
    py: f64,
    list: &[usize],
    splats: &[Splat],
    tiled: bool,
    out: &mut [f64; ch::N],
    mut record: Option<&mut Vec<Contribution>>,
) -> f64 {
    let mut t = 1.0;
    for (slot, &i) in list.iter().enumerate() {
        let s = &splats[i];
        let (q, c) = s.mahalanobis(px, py);
        if tiled && q > SUPPORT_Q {
            continue;
        }
        let falloff = (-0.5 * q).exp();
        let raw = s.opacity * falloff;
        let (alpha, clamped) = if raw > MAX_ALPHA { (MAX_ALPHA, true) } else { (raw, false) };
        if alpha <= 0.0 {
            continue;
        }
        let w = alpha * t;
        for (o, f) in out.iter_mut().zip(&s.features) {
            *o += w * f;
        }
        if let Some(r) = record.as_deref_mut() {
            r.push(Contribution { slot, alpha, clamped, falloff, c, t_before: t });
        }
        t *= 1.0 - alpha;
        if tiled && t < MIN_TRANSMITTANCE {
            break;
        }
    }
    t
}

/// Screen tiles with the depth-sorted splats overlapping each.
pub(crate) struct TileBins {
    pub tiles_x: usize,
    pub lists: Vec<Vec<usize>>,
}

impl TileBins {
    pub fn new(splats: &[Splat], width: usize, height: usize) -> Self {
        let tiles_x = width.div_ceil(TILE);
        let tiles_y = height.div_ceil(TILE);
        let mut lists = vec![Vec::new(); tiles_x * tiles_y];
        for i in depth_order(splats) {
            let s = &splats[i];
            let (rx, ry) = s.extent(SUPPORT_Q);
            let x0 = (s.mean2d.x - rx).ceil().max(0.0);
            let x1 = (s.mean2d.x + rx).floor().min(width as f64 - 1.0);
            let y0 = (s.mean2d.y - ry).ceil().max(0.0);
            let y1 = (s.mean2d.y + ry).floor().min(height as f64 - 1.0);
            if !(x0 <= x1 && y0 <= y1) {
                continue;
            }
            let (tx0, tx1) = (x0 as usize / TILE, x1 as usize / TILE);
            let (ty0, ty1) = (y0 as usize / TILE, y1 as usize / TILE);
            for ty in ty0..=ty1 {
                for tx in tx0..=tx1 {
                    lists[ty * tiles_x + tx].push(i);
                }
            }
        }
        Self { tiles_x, lists }
    }

    pub fn pixels(&self, tile: usize, width: usize, height: usize) -> impl Iterator<Item = (usize, usize)> {
        let (tx, ty) = (tile % self.tiles_x, tile / self.tiles_x);
        let xs = tx * TILE..((tx + 1) * TILE).min(width);
        let ys = ty * TILE..((ty + 1) * TILE).min(height);
        ys.flat_map(move |y| xs.clone().map(move |x| (x, y)))
    }
}

/// Tile-based forward compositing of every channel.
pub fn rasterize_forward(splats: &[Splat], cam: &CameraFrame) -> RenderOutputs {
    let (w, h) = (cam.width(), cam.height());
    let bins = TileBins::new(splats, w, h);
    let per_tile: Vec<Vec<(usize, usize, [f64; ch::N], f64)>> = (0..bins.lists.len())
        .into_par_iter()
        .map(|tile| {
            let list = &bins.lists[tile];
            bins.pixels(tile, w, h)
                .map(|(x, y)| {
                    let mut acc = [0.0; ch::N];
                    let t = composite(x as f64, y as f64, list, splats, true, &mut acc, None);
                    (x, y, acc, t)
                })
                .collect()
        })
        .collect();
    let mut out = RenderOutputs::empty(w, h);
    for tile in per_tile {
        for (x, y, acc, t) in tile {
            out.channels.pixel_mut(x, y).copy_from_slice(&acc);
            out.transmittance.set(x, y, 0, t);
        }
    }
    out
}
