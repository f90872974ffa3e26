//! Training losses and image metrics. Every loss returns its value together
//! with the adjoint of its prediction input(s).

use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::grid::{Grid, Mask};
use crate::params::{core_off, GradientBuffers, Layout};
use crate::primitives::GaussianSet;

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const BCE_EPS: f64 = 1e-6;
/// Reported in place of +∞ for identical images.
pub const PSNR_CAP: f64 = 99.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_ssim: f64,
    pub lambda_alpha: f64,
    pub lambda_depth: f64,
    pub lambda_normal: f64,
    pub lambda_track: f64,
    pub lambda_flow: f64,
    pub lambda_beta: f64,
    pub lambda_s: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_ssim: 0.1,
            lambda_alpha: 0.5,
            lambda_depth: 0.05,
            lambda_normal: 0.05,
            lambda_track: 2.0,
            lambda_flow: 0.01,
            lambda_beta: 0.5,
            lambda_s: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> crate::Result<()> {
        let all = [
            self.lambda_ssim,
            self.lambda_alpha,
            self.lambda_depth,
            self.lambda_normal,
            self.lambda_track,
            self.lambda_flow,
            self.lambda_beta,
            self.lambda_s,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || self.lambda_ssim > 1.0 {
            return Err(crate::Error::Invalid("loss weights must be finite and nonnegative, lambda_ssim ≤ 1".into()));
        }
        Ok(())
    }
}

/// Unweighted loss terms and their weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// Mean L1 color error.
    pub photo: f64,
    /// 1 − SSIM.
    pub ssim: f64,
    pub mask: f64,
    pub depth: f64,
    pub normal: f64,
    pub track: f64,
    pub flow: f64,
    pub reg: f64,
    pub total: f64,
}

impl LossReport {
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        (1.0 - w.lambda_ssim) * self.photo
            + w.lambda_ssim * self.ssim
            + w.lambda_alpha * self.mask
            + w.lambda_depth * self.depth
            + w.lambda_normal * self.normal
            + w.lambda_track * self.track
            + w.lambda_flow * self.flow
            + self.reg
    }

    /// Sets `total` from the terms. `reg` already carries its own weights.
    pub fn finish(mut self, w: &LossWeights) -> Self {
        self.total = self.weighted_total(w);
        self
    }

    pub fn add(&mut self, o: &LossReport) {
        self.photo += o.photo;
        self.ssim += o.ssim;
        self.mask += o.mask;
        self.depth += o.depth;
        self.normal += o.normal;
        self.track += o.track;
        self.flow += o.flow;
        self.reg += o.reg;
        self.total += o.total;
    }
}

/// Mean absolute error over every pixel and channel.
pub fn l1_loss(pred: &Grid, gt: &Grid) -> (f64, Grid) {
    assert!(pred.same_shape(gt), "l1_loss shape mismatch");
    let n = pred.data.len().max(1) as f64;
    let mut grad = Grid::zeros(pred.width, pred.height, pred.channels);
    let mut sum = 0.0;
    for ((g, p), t) in grad.data.iter_mut().zip(&pred.data).zip(&gt.data) {
        let d = p - t;
        sum += d.abs();
        *g = sign(d) / n;
    }
    (sum / n, grad)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean binary cross-entropy with the prediction clamped to `[ε, 1−ε]`.
pub fn bce_loss(pred: &Grid, gt: &Grid) -> (f64, Grid) {
    assert!(pred.same_shape(gt), "bce_loss shape mismatch");
    let n = pred.data.len().max(1) as f64;
    let mut grad = Grid::zeros(pred.width, pred.height, pred.channels);
    let mut sum = 0.0;
    for ((g, &p), &y) in grad.data.iter_mut().zip(&pred.data).zip(&gt.data) {
        let pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        sum -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
        if p > BCE_EPS && p < 1.0 - BCE_EPS {
            *g = (-y / pc + (1.0 - y) / (1.0 - pc)) / n;
        }
    }
    (sum / n, grad)
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut taps = [0.0; SSIM_WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - r;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    taps
}

/// Separable Gaussian blur whose window is truncated at the borders and
/// renormalized. `transpose` applies the adjoint operator.
fn blur(src: &[f64], w: usize, h: usize, transpose: bool) -> Vec<f64> {
    let taps = gaussian_taps();
    let r = (SSIM_WINDOW / 2) as isize;
    // normalizers per output coordinate along one axis
    let norms = |len: usize| -> Vec<f64> {
        (0..len as isize)
            .map(|i| (-r..=r).filter(|k| (0..len as isize).contains(&(i + k))).map(|k| taps[(k + r) as usize]).sum())
            .collect()
    };
    let (nx, ny) = (norms(w), norms(h));
    let pass = |input: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; w * h];
        let (len, norm) = if horizontal { (w, &nx) } else { (h, &ny) };
        for y in 0..h {
            for x in 0..w {
                let i = if horizontal { x } else { y } as isize;
                let v = input[y * w + x];
                for k in -r..=r {
                    let j = i + k;
                    if !(0..len as isize).contains(&j) {
                        continue;
                    }
                    let (tx, ty) = if horizontal { (j as usize, y) } else { (x, j as usize) };
                    let tap = taps[(k + r) as usize];
                    if transpose {
                        // input lives at output coordinate i, scattered to j
                        out[ty * w + tx] += v * tap / norm[i as usize];
                    } else {
                        // gather: out(i) = Σ_k tap·in(i+k)/norm(i)
                        out[y * w + x] += input[ty * w + tx] * tap / norm[i as usize];
                    }
                }
            }
        }
        out
    };
    if transpose {
        pass(&pass(src, false), true)
    } else {
        pass(&pass(src, true), false)
    }
}

fn channel(g: &Grid, c: usize) -> Vec<f64> {
    (0..g.width * g.height).map(|i| g.data[i * g.channels + c]).collect()
}

/// Mean SSIM and, optionally, its gradient with respect to `a`.
fn ssim_impl(a: &Grid, b: &Grid, want_grad: bool) -> (f64, Option<Grid>) {
    assert!(a.same_shape(b), "ssim shape mismatch");
    let (w, h) = (a.width, a.height);
    let n = (w * h * a.channels).max(1) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Grid::zeros(w, h, a.channels));
    for c in 0..a.channels {
        let (ca, cb) = (channel(a, c), channel(b, c));
        let sq = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
        let mu_a = blur(&ca, w, h, false);
        let mu_b = blur(&cb, w, h, false);
        let e_aa = blur(&sq(&ca, &ca), w, h, false);
        let e_bb = blur(&sq(&cb, &cb), w, h, false);
        let e_ab = blur(&sq(&ca, &cb), w, h, false);
        let mut m1 = vec![0.0; w * h];
        let mut m2 = vec![0.0; w * h];
        let mut m3 = vec![0.0; w * h];
        for p in 0..w * h {
            let (ma, mb) = (mu_a[p], mu_b[p]);
            let va = e_aa[p] - ma * ma;
            let vb = e_bb[p] - mb * mb;
            let cov = e_ab[p] - ma * mb;
            let a1 = 2.0 * ma * mb + SSIM_C1;
            let a2 = 2.0 * cov + SSIM_C2;
            let b1 = ma * ma + mb * mb + SSIM_C1;
            let b2 = va + vb + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            // equal window moments mean E[(a−b)²] = 0: the window sits at
            // its maximum, where the exact adjoint vanishes but round-off
            // would not
            let matched = ma == mb && e_aa[p] == e_ab[p] && e_bb[p] == e_ab[p];
            if want_grad && !matched {
                let d_mu = 2.0 * mb * a2 / (b1 * b2) - s * 2.0 * ma / b1;
                let d_var = -s / b2;
                let d_cov = 2.0 * a1 / (b1 * b2);
                m1[p] = (d_mu - 2.0 * ma * d_var - mb * d_cov) / n;
                m2[p] = d_var / n;
                m3[p] = d_cov / n;
            }
        }
        if let Some(g) = grad.as_mut() {
            let (t1, t2, t3) = (blur(&m1, w, h, true), blur(&m2, w, h, true), blur(&m3, w, h, true));
            for p in 0..w * h {
                g.data[p * a.channels + c] = t1[p] + 2.0 * ca[p] * t2[p] + cb[p] * t3[p];
            }
        }
    }
    (total / n, grad)
}

/// Mean local SSIM (11×11 Gaussian window, σ = 1.5), averaged over channels.
pub fn ssim(a: &Grid, b: &Grid) -> f64 {
    ssim_impl(a, b, false).0
}

/// SSIM and its gradient with respect to `a`.
pub fn ssim_with_grad(a: &Grid, b: &Grid) -> (f64, Grid) {
    let (v, g) = ssim_impl(a, b, true);
    (v, g.expect("gradient requested"))
}

/// Photometric terms plus adjoints of the predicted image and mask.
#[derive(Clone, Debug)]
pub struct PhotometricLoss {
    pub report: LossReport,
    pub d_image: Grid,
    pub d_mask: Grid,
}

/// `(1−λ_ssim)·L1 + λ_ssim·(1 − SSIM) + λ_alpha·BCE(mask)`.
pub fn photometric_loss(pred: &Grid, gt: &Grid, pred_mask: &Grid, gt_mask: &Grid, w: &LossWeights) -> PhotometricLoss {
    let (l1, g_l1) = l1_loss(pred, gt);
    let (s, g_s) = ssim_with_grad(pred, gt);
    let (bce, g_bce) = bce_loss(pred_mask, gt_mask);
    let mut d_image = g_l1;
    for (d, gs) in d_image.data.iter_mut().zip(&g_s.data) {
        *d = (1.0 - w.lambda_ssim) * *d - w.lambda_ssim * gs;
    }
    let mut d_mask = g_bce;
    d_mask.scale_in_place(w.lambda_alpha);
    let report = LossReport { photo: l1, ssim: 1.0 - s, mask: bce, ..Default::default() }.finish(w);
    PhotometricLoss { report, d_image, d_mask }
}

/// Median of a nonempty slice and the index (or two indices) selecting it.
fn median_with_index(v: &[f64]) -> (f64, usize, usize) {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    let n = v.len();
    if n % 2 == 1 {
        (v[idx[n / 2]], idx[n / 2], idx[n / 2])
    } else {
        let (i, j) = (idx[n / 2 - 1], idx[n / 2]);
        (0.5 * (v[i] + v[j]), i, j)
    }
}

struct Robust {
    med: f64,
    mad: f64,
    lo: usize,
    hi: usize,
}

fn robust_stats(v: &[f64]) -> Robust {
    let (med, lo, hi) = median_with_index(v);
    let mad = v.iter().map(|x| (x - med).abs()).sum::<f64>() / v.len() as f64;
    Robust { med, mad, lo, hi }
}

/// Scale- and shift-invariant depth error: both maps are normalized by
/// their median and mean absolute deviation over `valid`.
pub fn depth_loss(pred: &Grid, gt: &Grid, valid: &Mask) -> (f64, Grid) {
    let mut grad = Grid::zeros(pred.width, pred.height, 1);
    let pix: Vec<usize> = (0..pred.width * pred.height).filter(|&i| valid.data[i]).collect();
    if pix.len() < 2 {
        return (0.0, grad);
    }
    let p: Vec<f64> = pix.iter().map(|&i| pred.data[i]).collect();
    let g: Vec<f64> = pix.iter().map(|&i| gt.data[i]).collect();
    let (sp, sg) = (robust_stats(&p), robust_stats(&g));
    if sp.mad < 1e-12 || sg.mad < 1e-12 {
        return (0.0, grad);
    }
    let n = p.len() as f64;
    let pn: Vec<f64> = p.iter().map(|x| (x - sp.med) / sp.mad).collect();
    let mut loss = 0.0;
    let mut r = vec![0.0; p.len()];
    for k in 0..p.len() {
        let d = pn[k] - (g[k] - sg.med) / sg.mad;
        loss += d.abs();
        r[k] = sign(d) / n;
    }
    // pred*_k = (D_k − med)/mad, mad = mean |D − med|
    let g_mad: f64 = -r.iter().zip(&pn).map(|(a, b)| a * b).sum::<f64>() / sp.mad;
    let dmad_dmed = -p.iter().map(|x| sign(x - sp.med)).sum::<f64>() / n;
    let g_med = -r.iter().sum::<f64>() / sp.mad + g_mad * dmad_dmed;
    let mut dp: Vec<f64> = (0..p.len()).map(|k| r[k] / sp.mad + g_mad * sign(p[k] - sp.med) / n).collect();
    if sp.lo == sp.hi {
        dp[sp.lo] += g_med;
    } else {
        dp[sp.lo] += 0.5 * g_med;
        dp[sp.hi] += 0.5 * g_med;
    }
    for (k, &i) in pix.iter().enumerate() {
        grad.data[i] = dp[k];
    }
    (loss / n, grad)
}

fn vec3_at(g: &Grid, i: usize) -> Vec3 {
    Vec3::new(g.data[i * 3], g.data[i * 3 + 1], g.data[i * 3 + 2])
}

/// Mean of `(1 − n̂·n)²` over `valid`, both normals renormalized.
pub fn normal_loss(pred: &Grid, gt: &Grid, valid: &Mask) -> (f64, Grid) {
    let mut grad = Grid::zeros(pred.width, pred.height, 3);
    let count = valid.count();
    if count == 0 {
        return (0.0, grad);
    }
    let n = count as f64;
    let mut loss = 0.0;
    for i in 0..pred.width * pred.height {
        if !valid.data[i] {
            continue;
        }
        let p = vec3_at(pred, i);
        let t = vec3_at(gt, i);
        let (pl, tl) = (p.norm(), t.norm());
        if pl < 1e-12 || tl < 1e-12 {
            loss += 1.0;
            continue;
        }
        let (ph, th) = (p / pl, t / tl);
        let cos = ph.dot(&th);
        // 1 − cos of unit vectors, without cancellation near 1
        let gap = 0.5 * (ph - th).norm_squared();
        loss += gap * gap;
        let dcos = (th - ph * cos) / pl;
        let d = dcos * (-2.0 * gap / n);
        grad.data[i * 3..i * 3 + 3].copy_from_slice(d.as_slice());
    }
    (loss / n, grad)
}

/// A tracked pixel and the world point it should correspond to.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackTarget {
    pub x: usize,
    pub y: usize,
    pub point: Vec3,
}

/// Mean L1 between rendered correspondences and lifted track points, over
/// samples whose rendered alpha exceeds 0.5.
pub fn track_loss(pred_corr: &Grid, targets: &[TrackTarget], alpha: &Grid) -> (f64, Grid) {
    let mut grad = Grid::zeros(pred_corr.width, pred_corr.height, 3);
    let used: Vec<&TrackTarget> = targets.iter().filter(|t| alpha.get(t.x, t.y, 0) > 0.5).collect();
    if used.is_empty() {
        return (0.0, grad);
    }
    let n = used.len() as f64;
    let mut loss = 0.0;
    for t in used {
        for c in 0..3 {
            let d = pred_corr.get(t.x, t.y, c) - t.point[c];
            loss += d.abs();
            let i = grad.idx(t.x, t.y, c);
            grad.data[i] += sign(d) / n;
        }
    }
    (loss / n, grad)
}

/// Masked mean L1 of forward plus backward velocities. Returns the adjoints
/// of the forward and backward predictions.
pub fn flow_loss(pred_vf: &Grid, pred_vb: &Grid, gt_vf: &Grid, gt_vb: &Grid, mask: &Mask) -> (f64, Grid, Grid) {
    let mut gf = Grid::zeros(pred_vf.width, pred_vf.height, 3);
    let mut gb = Grid::zeros(pred_vb.width, pred_vb.height, 3);
    let count = mask.count();
    if count == 0 {
        return (0.0, gf, gb);
    }
    let n = count as f64;
    let mut loss = 0.0;
    for i in 0..pred_vf.width * pred_vf.height {
        if !mask.data[i] {
            continue;
        }
        for c in 0..3 {
            let k = i * 3 + c;
            let df = pred_vf.data[k] - gt_vf.data[k];
            let db = pred_vb.data[k] - gt_vb.data[k];
            loss += df.abs() + db.abs();
            gf.data[k] = sign(df) / n;
            gb.data[k] = sign(db) / n;
        }
    }
    (loss / n, gf, gb)
}

/// Weighted duration and isotropy regularizer averaged over dynamic
/// Gaussians: `λ_β/β` for rigids plus `λ_s·var(scale)` for all of them.
pub fn reg_loss(set: &GaussianSet, w: &LossWeights) -> (f64, GradientBuffers) {
    let layout = Layout::of(set);
    let mut grads = GradientBuffers::zeros(layout);
    let count = set.rigids.len() + set.transients.len();
    if count == 0 {
        return (0.0, grads);
    }
    let n = count as f64;
    let mut loss = 0.0;
    let scale_term = |log_scale: &Vec3, at: usize, data: &mut [f64]| {
        let s = log_scale.map(f64::exp);
        let mean = s.mean();
        let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
        for k in 0..3 {
            data[at + k] += w.lambda_s / n * (2.0 / 3.0) * (s[k] - mean) * s[k];
        }
        w.lambda_s * var
    };
    for (i, g) in set.rigids.iter().enumerate() {
        let o = layout.rigid_at(i);
        loss += scale_term(&g.core.log_scale, o + core_off::SCALE, &mut grads.data);
        loss += w.lambda_beta / g.beta;
        grads.data[o + core_off::LEN + layout.k] += -w.lambda_beta / (g.beta * g.beta) / n;
    }
    for (i, g) in set.transients.iter().enumerate() {
        let o = layout.transient_at(i);
        loss += scale_term(&g.core.log_scale, o + core_off::SCALE, &mut grads.data);
    }
    (loss / n, grads)
}

/// Peak signal-to-noise ratio for images in [0,1].
pub fn psnr(pred: &Grid, gt: &Grid) -> f64 {
    assert!(pred.same_shape(gt), "psnr shape mismatch");
    let n = pred.data.len().max(1) as f64;
    let mse = pred.data.iter().zip(&gt.data).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
    if mse < 1e-12 {
        PSNR_CAP
    } else {
        -10.0 * mse.log10()
    }
}
