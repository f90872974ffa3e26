//! Object-wise dynamic masks: forward/backward flow consistency, epipolar
//! (Sampson) residuals against a robustly estimated fundamental matrix, and
//! per-object motion scores thresholded into per-frame masks.

use nalgebra::{DMatrix, SMatrix};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{warp, Mat3, Vec2, Vec3};
use crate::grid::{Grid, Mask};

pub const DEFAULT_EPS_TEMP: f64 = 1e-4;
pub const DEFAULT_TRIALS: usize = 256;
pub const MAX_MATCHES: usize = 10_000;
const OCC_RATIO: f64 = 0.01;
const OCC_BIAS: f64 = 0.5;

/// Optical flow of one frame plus optional per-pixel uncertainty.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    /// Pixel displacement to t+1 (2 channels).
    pub fwd: Grid,
    /// Pixel displacement to t−1 (2 channels).
    pub bwd: Grid,
    pub uncertainty: Option<Grid>,
}

impl FlowField {
    pub fn uncertainty_at(&self, x: usize, y: usize) -> f64 {
        self.uncertainty.as_ref().map_or(0.0, |u| u.get(x, y, 0))
    }
}

/// Per-pixel object labels; 0 is background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObjectMaskFrame {
    pub width: usize,
    pub height: usize,
    pub ids: Vec<u16>,
}

impl ObjectMaskFrame {
    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.ids[y * self.width + x]
    }

    pub fn object(&self, id: u16) -> Mask {
        Mask { width: self.width, height: self.height, data: self.ids.iter().map(|&v| v == id).collect() }
    }
}

/// Pixels whose forward flow is not undone by the next frame's backward
/// flow, or whose forward target leaves the image.
pub fn occlusion_mask(fwd: &Grid, bwd_next: &Grid) -> Mask {
    assert!(fwd.same_shape(bwd_next) && fwd.channels == 2, "occlusion_mask: shape mismatch");
    let (back, inside) = warp(bwd_next, fwd);
    Mask::from_fn(fwd.width, fwd.height, |x, y| {
        if !inside.get(x, y) {
            return true;
        }
        let f = fwd.pixel(x, y);
        let b = back.pixel(x, y);
        let sum = (f[0] + b[0]).powi(2) + (f[1] + b[1]).powi(2);
        let mag = f[0] * f[0] + f[1] * f[1] + b[0] * b[0] + b[1] * b[1];
        sum > OCC_RATIO * mag + OCC_BIAS
    })
}

/// `(1 − occ)/(1 + u)²`.
pub fn flow_weight(u: f64, occluded: bool) -> f64 {
    if occluded {
        0.0
    } else {
        1.0 / (1.0 + u.max(0.0)).powi(2)
    }
}

/// `|x_lᵀ F x_r| / sqrt(‖F x_l‖² + ‖F x_r‖²)` with full 3-vector norms.
pub fn sampson_error(xl: &Vec3, xr: &Vec3, f: &Mat3) -> Result<f64> {
    let fl = f * xl;
    let fr = f * xr;
    let (nl, nr) = (fl.norm_squared(), fr.norm_squared());
    if nl.sqrt() < 1e-12 && nr.sqrt() < 1e-12 {
        return Err(Error::ZeroDenominator);
    }
    Ok(xl.dot(&fr).abs() / (nl + nr).sqrt())
}

fn homogeneous(p: &Vec2) -> Vec3 {
    Vec3::new(p.x, p.y, 1.0)
}

/// Similarity taking the points to zero mean and mean distance √2.
fn hartley(points: &[Vec2]) -> Mat3 {
    let n = points.len() as f64;
    let c = points.iter().fold(Vec2::zeros(), |a, p| a + p) / n;
    let mean_dist = points.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    let s = if mean_dist > 1e-12 { std::f64::consts::SQRT_2 / mean_dist } else { 1.0 };
    Mat3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}

/// Normalized 8-point solve for `x_lᵀ F x_r = 0`, rank 2, unit Frobenius
/// norm. `None` when the sample is degenerate.
fn eight_point(matches: &[(Vec2, Vec2)]) -> Option<Mat3> {
    let left: Vec<Vec2> = matches.iter().map(|m| m.0).collect();
    let right: Vec<Vec2> = matches.iter().map(|m| m.1).collect();
    let (tl, tr) = (hartley(&left), hartley(&right));
    let rows = matches.len().max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (r, (pl, pr)) in matches.iter().enumerate() {
        let xl = tl * homogeneous(pl);
        let xr = tr * homogeneous(pr);
        for i in 0..3 {
            for j in 0..3 {
                a[(r, i * 3 + j)] = xl[i] * xr[j];
            }
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[i].total_cmp(&sv[j]));
    let (smallest, next) = (order[0], order[1]);
    let largest = sv[order[sv.len() - 1]];
    if largest <= 0.0 || sv[next] <= 1e-10 * largest {
        return None;
    }
    let f_row = v_t.row(smallest);
    let fhat = Mat3::from_fn(|i, j| f_row[i * 3 + j]);
    // rank 2
    let s3 = fhat.svd(true, true);
    let (u, vt) = (s3.u?, s3.v_t?);
    let mut d = s3.singular_values;
    let (mut imin, mut vmin) = (0, d[0]);
    for i in 1..3 {
        if d[i] < vmin {
            imin = i;
            vmin = d[i];
        }
    }
    d[imin] = 0.0;
    let fhat = u * Mat3::from_diagonal(&d) * vt;
    let f = tl.transpose() * fhat * tr;
    let norm = f.norm();
    if !(norm > 1e-300) || !norm.is_finite() {
        return None;
    }
    Some(f / norm)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median Sampson error of `matches` under `f` (degenerate pairs count as
/// infinitely far).
pub fn median_sampson(matches: &[(Vec2, Vec2)], f: &Mat3) -> f64 {
    median(
        matches
            .iter()
            .map(|(l, r)| sampson_error(&homogeneous(l), &homogeneous(r), f).unwrap_or(f64::INFINITY))
            .collect(),
    )
}

/// Least-median-of-squares fundamental matrix from `(x_l, x_r)` pixel pairs.
pub fn estimate_fundamental(matches: &[(Vec2, Vec2)], trials: usize, seed: u64) -> Result<Mat3> {
    if matches.len() < 8 {
        return Err(Error::InsufficientMatches(matches.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool: Vec<(Vec2, Vec2)> = if matches.len() > MAX_MATCHES {
        let mut idx = sample(&mut rng, matches.len(), MAX_MATCHES).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| matches[i]).collect()
    } else {
        matches.to_vec()
    };
    let mut best: Option<(f64, Mat3)> = None;
    let mut minimal = [(Vec2::zeros(), Vec2::zeros()); 8];
    for _ in 0..trials.max(1) {
        for (slot, i) in minimal.iter_mut().zip(sample(&mut rng, pool.len(), 8)) {
            *slot = pool[i];
        }
        let Some(f) = eight_point(&minimal) else { continue };
        let score = median_sampson(&pool, &f);
        if best.as_ref().map_or(true, |(b, _)| score < *b) {
            best = Some((score, f));
        }
    }
    best.map(|(_, f)| f).ok_or(Error::DegenerateConfiguration)
}

/// Weighted mean of per-pixel errors; 0 when the weights vanish.
pub fn frame_motion_score(weights: &[f64], errors: &[f64]) -> f64 {
    let sw: f64 = weights.iter().sum();
    if sw < 1e-12 {
        return 0.0;
    }
    weights.iter().zip(errors).map(|(w, e)| w * e).sum::<f64>() / sw
}

/// Mean score over the frames above `eps_temp`, and those frames.
pub fn object_motion_score(scores: &[f64], eps_temp: f64) -> (f64, Vec<usize>) {
    let frames: Vec<usize> = (0..scores.len()).filter(|&t| scores[t] > eps_temp).collect();
    if frames.is_empty() {
        return (0.0, frames);
    }
    let s = frames.iter().map(|&t| scores[t]).sum::<f64>() / frames.len() as f64;
    (s, frames)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionScoreTable {
    /// Object ids, ascending; id 0 (background) is scored but never masked.
    pub ids: Vec<u16>,
    /// `s[i][t]`.
    pub s: Vec<Vec<f64>>,
    pub motion_frames: Vec<Vec<usize>>,
    pub s_obj: Vec<f64>,
    pub eps_temp: f64,
    pub eps_dyn: f64,
}

impl MotionScoreTable {
    /// Builds the table from per-frame scores; `eps_dyn = None` picks a
    /// quarter of the largest foreground object score.
    pub fn from_scores(ids: Vec<u16>, s: Vec<Vec<f64>>, eps_temp: f64, eps_dyn: Option<f64>) -> Self {
        let (s_obj, motion_frames): (Vec<f64>, Vec<Vec<usize>>) =
            s.iter().map(|row| object_motion_score(row, eps_temp)).unzip();
        let max_fg = ids.iter().zip(&s_obj).filter(|(id, _)| **id != 0).map(|(_, v)| *v).fold(0.0, f64::max);
        let eps_dyn = eps_dyn.unwrap_or(max_fg / 4.0);
        Self { ids, s, motion_frames, s_obj, eps_temp, eps_dyn }
    }

    pub fn with_eps_dyn(mut self, eps_dyn: f64) -> Self {
        self.eps_dyn = eps_dyn;
        self
    }

    pub fn score_of(&self, id: u16) -> Option<f64> {
        self.ids.iter().position(|&i| i == id).map(|k| self.s_obj[k])
    }

    pub fn dynamic_ids(&self) -> Vec<u16> {
        self.ids.iter().zip(&self.s_obj).filter(|(id, s)| **id != 0 && **s > self.eps_dyn).map(|(id, _)| *id).collect()
    }
}

/// Per-frame union of the masks of objects scoring above `eps_dyn`.
pub fn compose_dynamic_masks(table: &MotionScoreTable, masks: &[ObjectMaskFrame]) -> Vec<Mask> {
    let dynamic = table.dynamic_ids();
    masks
        .iter()
        .map(|m| Mask { width: m.width, height: m.height, data: m.ids.iter().map(|id| dynamic.contains(id)).collect() })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynMaskConfig {
    pub eps_temp: f64,
    /// `None` = adaptive (max/4).
    pub eps_dyn: Option<f64>,
    pub trials: usize,
    pub seed: u64,
}

impl Default for DynMaskConfig {
    fn default() -> Self {
        Self { eps_temp: DEFAULT_EPS_TEMP, eps_dyn: None, trials: DEFAULT_TRIALS, seed: 0 }
    }
}

/// Diagnostics of one frame pair.
#[derive(Clone, Debug)]
pub struct FrameResidual {
    pub fundamental: Option<Mat3>,
    pub occluded: Mask,
    pub weights: Grid,
    pub errors: Grid,
}

/// Occlusion, weights, fundamental matrix and Sampson residuals for the
/// frame pair `(t, t+1)`.
pub fn frame_residuals(flow_t: &FlowField, flow_next: &FlowField, seed: u64, trials: usize) -> FrameResidual {
    let (w, h) = (flow_t.fwd.width, flow_t.fwd.height);
    let occluded = occlusion_mask(&flow_t.fwd, &flow_next.bwd);
    let weights = Grid::from_fn(w, h, 1, |x, y, _| flow_weight(flow_t.uncertainty_at(x, y), occluded.get(x, y)));
    let mut matches = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !occluded.get(x, y) {
                let f = flow_t.fwd.pixel(x, y);
                let p = Vec2::new(x as f64, y as f64);
                matches.push((p, p + Vec2::new(f[0], f[1])));
            }
        }
    }
    let fundamental = estimate_fundamental(&matches, trials, seed).ok();
    let mut errors = Grid::zeros(w, h, 1);
    let mut weights = weights;
    for y in 0..h {
        for x in 0..w {
            let Some(fm) = fundamental.as_ref() else {
                weights.set(x, y, 0, 0.0);
                continue;
            };
            let f = flow_t.fwd.pixel(x, y);
            let xl = Vec3::new(x as f64, y as f64, 1.0);
            let xr = Vec3::new(x as f64 + f[0], y as f64 + f[1], 1.0);
            match sampson_error(&xl, &xr, fm) {
                Ok(e) => errors.set(x, y, 0, e),
                Err(_) => weights.set(x, y, 0, 0.0),
            }
        }
    }
    FrameResidual { fundamental, occluded, weights, errors }
}

/// Full pipeline over a sequence: per-frame per-object scores, aggregation
/// and thresholds. The last frame has no forward pair and scores 0.
pub fn compute_motion_scores(flows: &[FlowField], masks: &[ObjectMaskFrame], cfg: &DynMaskConfig) -> Result<MotionScoreTable> {
    if flows.len() != masks.len() {
        return Err(Error::Invalid(format!("{} flow frames but {} mask frames", flows.len(), masks.len())));
    }
    let mut ids: Vec<u16> = masks.iter().flat_map(|m| m.ids.iter().copied()).collect();
    ids.sort_unstable();
    ids.dedup();
    let frames = flows.len();
    let per_frame: Vec<Vec<f64>> = {
        use rayon::prelude::*;
        (0..frames)
            .into_par_iter()
            .map(|t| {
                let mut row = vec![0.0; ids.len()];
                if t + 1 >= frames {
                    return row;
                }
                let res = frame_residuals(&flows[t], &flows[t + 1], cfg.seed.wrapping_add(t as u64), cfg.trials);
                let mut sw = vec![0.0; ids.len()];
                let mut swe = vec![0.0; ids.len()];
                for (i, &id) in masks[t].ids.iter().enumerate() {
                    let k = ids.binary_search(&id).expect("id collected");
                    sw[k] += res.weights.data[i];
                    swe[k] += res.weights.data[i] * res.errors.data[i];
                }
                for k in 0..ids.len() {
                    row[k] = if sw[k] < 1e-12 { 0.0 } else { swe[k] / sw[k] };
                }
                row
            })
            .collect()
    };
    let s: Vec<Vec<f64>> = (0..ids.len()).map(|k| per_frame.iter().map(|row| row[k]).collect()).collect();
    Ok(MotionScoreTable::from_scores(ids, s, cfg.eps_temp, cfg.eps_dyn))
}

/// Skew matrix `[v]ₓ`.
pub fn skew(v: &Vec3) -> Mat3 {
    SMatrix::<f64, 3, 3>::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}
