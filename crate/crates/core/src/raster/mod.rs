//! Multi-channel Gaussian splatting: per-Gaussian projection to screen-space
//! splats, tile-based alpha compositing, a brute-force reference compositor,
//! and the analytic backward pass to every optimizable parameter.

mod backward;
mod reference;
mod tiles;

use nalgebra::Matrix2x3;

use crate::error::Result;
use crate::geometry::{ewa_project_covariance, pinhole_jacobian, CameraFrame, Mat2, Mat3, Se3, Vec2, Vec3, MIN_DEPTH};
use crate::grid::Grid;
use crate::primitives::{sigmoid, velocity_stencil, BlendCache, GaussianCore, GaussianSet};

pub use backward::rasterize_backward;
pub use reference::rasterize_reference;
pub use tiles::rasterize_forward;

/// Per-splat payload layout.
pub mod ch {
    pub const COLOR: usize = 0;
    pub const DYN: usize = 3;
    pub const DEPTH: usize = 4;
    pub const NORMAL: usize = 5;
    pub const VFWD: usize = 8;
    pub const VBWD: usize = 11;
    pub const CORR: usize = 14;
    /// Constant one; composites to the alpha map.
    pub const ONE: usize = 17;
    pub const N: usize = 18;
}

pub const TILE: usize = 16;
pub const MAX_ALPHA: f64 = 0.999;
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
pub const MIN_OPACITY: f64 = 1.0 / 255.0;
/// Mahalanobis² of the 99%-mass ellipse of a 2D Gaussian (−2 ln 0.01).
pub const MASS99_Q: f64 = 9.210_340_371_976_184;
/// Mahalanobis² beyond which a splat is treated as zero (exp(−q/2) < 1e-10).
pub const SUPPORT_Q: f64 = 46.051_701_859_880_914;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Static,
    Rigid,
    Transient,
}

/// Which Gaussian a splat came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplatSource {
    pub kind: Kind,
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splat {
    pub mean2d: Vec2,
    pub cov2d: Mat2,
    pub conic: Mat2,
    pub depth: f64,
    pub opacity: f64,
    pub features: [f64; ch::N],
    pub source: SplatSource,
}

impl Splat {
    /// Builds a splat directly from screen-space quantities.
    pub fn new(mean2d: Vec2, cov2d: Mat2, depth: f64, opacity: f64, features: [f64; ch::N]) -> Self {
        let conic = cov2d.try_inverse().unwrap_or_else(Mat2::zeros);
        Self {
            mean2d,
            cov2d,
            conic,
            depth,
            opacity,
            features,
            source: SplatSource { kind: Kind::Static, index: 0 },
        }
    }

    /// Payload with a color and the alpha channel set; other channels zero.
    pub fn color_features(color: [f64; 3]) -> [f64; ch::N] {
        let mut f = [0.0; ch::N];
        f[..3].copy_from_slice(&color);
        f[ch::ONE] = 1.0;
        f
    }

    #[inline]
    pub(crate) fn mahalanobis(&self, px: f64, py: f64) -> (f64, Vec2) {
        let d = Vec2::new(px - self.mean2d.x, py - self.mean2d.y);
        let c = self.conic * d;
        (d.dot(&c), c)
    }

    /// Half extents of the ellipse `q ≤ q_max`.
    pub(crate) fn extent(&self, q_max: f64) -> (f64, f64) {
        ((q_max * self.cov2d[(0, 0)]).sqrt(), (q_max * self.cov2d[(1, 1)]).sqrt())
    }
}

/// Composited channels plus the final transmittance per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutputs {
    pub width: usize,
    pub height: usize,
    /// `ch::N` channels per pixel.
    pub channels: Grid,
    pub transmittance: Grid,
}

impl RenderOutputs {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            channels: Grid::zeros(width, height, ch::N),
            transmittance: Grid::filled(width, height, 1, 1.0),
        }
    }

    pub fn slice(&self, first: usize, count: usize) -> Grid {
        Grid::from_fn(self.width, self.height, count, |x, y, c| self.channels.get(x, y, first + c))
    }

    pub fn color(&self) -> Grid {
        self.slice(ch::COLOR, 3)
    }
    pub fn alpha(&self) -> Grid {
        self.slice(ch::ONE, 1)
    }
    pub fn depth(&self) -> Grid {
        self.slice(ch::DEPTH, 1)
    }
    pub fn normal(&self) -> Grid {
        self.slice(ch::NORMAL, 3)
    }
    pub fn dyn_mask(&self) -> Grid {
        self.slice(ch::DYN, 1)
    }
    pub fn v_fwd(&self) -> Grid {
        self.slice(ch::VFWD, 3)
    }
    pub fn v_bwd(&self) -> Grid {
        self.slice(ch::VBWD, 3)
    }
    pub fn corr(&self) -> Grid {
        self.slice(ch::CORR, 3)
    }
}

/// Per-pixel adjoints of every output channel (`ch::N` channels).
pub type GradOutputs = Grid;

/// Rigid-blend intermediates for every frame a rigid splat depends on.
#[derive(Clone, Debug)]
pub(crate) struct RigidFrames {
    pub frames: Vec<(usize, Se3, BlendCache)>,
}

impl RigidFrames {
    fn get(&self, f: usize) -> &(usize, Se3, BlendCache) {
        self.frames.iter().find(|e| e.0 == f).expect("frame cached")
    }
}

/// Forward intermediates of one Gaussian at one query time.
#[derive(Clone, Debug)]
pub(crate) struct GaussEval {
    pub source: SplatSource,
    pub rot_canon: Mat3,
    pub rot_w: Mat3,
    pub p_cam: Vec3,
    pub scale: Vec3,
    pub cov3: Mat3,
    pub proj: Matrix2x3<f64>,
    pub op_base: f64,
    pub gate: f64,
    pub normal_axis: usize,
    pub normal_sign: f64,
    pub t: f64,
    pub t_corr: f64,
    pub stencil: Option<((usize, usize), (usize, usize))>,
    pub rigid: Option<RigidFrames>,
    pub splat: Splat,
}

fn gaussian_core(set: &GaussianSet, src: SplatSource) -> &GaussianCore {
    match src.kind {
        Kind::Static => &set.statics[src.index],
        Kind::Rigid => &set.rigids[src.index].core,
        Kind::Transient => &set.transients[src.index].core,
    }
}

/// Evaluates one Gaussian into a splat plus the intermediates the backward
/// pass needs. `None` when it projects behind the camera or its rigid blend
/// degenerates.
pub(crate) fn evaluate(
    set: &GaussianSet,
    src: SplatSource,
    cam: &CameraFrame,
    frame: usize,
    t_corr: usize,
) -> Option<GaussEval> {
    let core = gaussian_core(set, src);
    let rot_canon = core.rotation();
    let t = frame as f64;
    let tc = t_corr as f64;
    let num_frames = set.num_frames();
    let (mean_w, rot_w, gate, vfwd, vbwd, corr, stencil, rigid, dyn_flag) = match src.kind {
        Kind::Static => (core.mean, rot_canon, 1.0, Vec3::zeros(), Vec3::zeros(), core.mean, None, None, 0.0),
        Kind::Transient => {
            let g = &set.transients[src.index];
            let gate = sigmoid(set.alpha_gate * (g.beta - (t - g.gamma).abs()));
            let m = core.mean + g.velocity * (t - g.gamma);
            let c = core.mean + g.velocity * (tc - g.gamma);
            (m, rot_canon, gate, g.velocity, g.velocity, c, None, None, 1.0)
        }
        Kind::Rigid => {
            let g = &set.rigids[src.index];
            let gate = sigmoid(set.alpha_gate * (g.beta - (t - g.gamma).abs()));
            let stencil = velocity_stencil(frame, num_frames);
            let mut needed = vec![frame, t_corr];
            if let Some((a, b)) = stencil {
                needed.extend([a.0, a.1, b.0, b.1]);
            }
            needed.sort_unstable();
            needed.dedup();
            let mut frames = Vec::with_capacity(needed.len());
            for f in needed {
                let (tf, cache) = set.bases.blend_cached(&g.weights, f).ok()?;
                frames.push((f, tf, cache));
            }
            let rf = RigidFrames { frames };
            let m = |f: usize| rf.get(f).1.apply(&core.mean);
            let (vf, vb) = match stencil {
                Some((a, b)) => (m(a.1) - m(a.0), m(b.1) - m(b.0)),
                None => (Vec3::zeros(), Vec3::zeros()),
            };
            let mean_w = m(frame);
            let rot_w = rf.get(frame).1.rotation * rot_canon;
            let corr = m(t_corr);
            (mean_w, rot_w, gate, vf, vb, corr, stencil, Some(rf), 1.0)
        }
    };
    let p_cam = cam.to_camera(&mean_w);
    if p_cam.z <= MIN_DEPTH {
        return None;
    }
    let scale = core.scale();
    let m = rot_w * Mat3::from_diagonal(&scale);
    let cov3 = m * m.transpose();
    let cov2d = ewa_project_covariance(&cov3, cam, &p_cam).ok()?;
    let proj = pinhole_jacobian(&cam.intrinsics, &p_cam) * cam.w2c.rotation;
    let (mean2d, depth) = cam.project_camera(&p_cam).ok()?;
    let op_base = core.opacity();

    // normal: rotated axis of smallest scale, facing the camera
    let mut normal_axis = 0;
    for a in 1..3 {
        if scale[a] < scale[normal_axis] {
            normal_axis = a;
        }
    }
    let axis: Vec3 = rot_w.column(normal_axis).into_owned();
    let normal_sign = if axis.dot(&(cam.center() - mean_w)) < 0.0 { -1.0 } else { 1.0 };
    let normal = axis * normal_sign;

    let mut features = [0.0; ch::N];
    features[ch::COLOR..ch::COLOR + 3].copy_from_slice(core.color.as_slice());
    features[ch::DYN] = dyn_flag;
    features[ch::DEPTH] = depth;
    features[ch::NORMAL..ch::NORMAL + 3].copy_from_slice(normal.as_slice());
    features[ch::VFWD..ch::VFWD + 3].copy_from_slice(vfwd.as_slice());
    features[ch::VBWD..ch::VBWD + 3].copy_from_slice(vbwd.as_slice());
    features[ch::CORR..ch::CORR + 3].copy_from_slice(corr.as_slice());
    features[ch::ONE] = 1.0;

    let conic = cov2d.try_inverse()?;
    let splat = Splat { mean2d, cov2d, conic, depth, opacity: op_base * gate, features, source: src };
    Some(GaussEval {
        source: src,
        rot_canon,
        rot_w,
        p_cam,
        scale,
        cov3,
        proj,
        op_base,
        gate,
        normal_axis,
        normal_sign,
        t,
        t_corr: tc,
        stencil,
        rigid,
        splat,
    })
}

fn keep(splat: &Splat, cam: &CameraFrame) -> bool {
    if splat.opacity < MIN_OPACITY {
        return false;
    }
    let (rx, ry) = splat.extent(MASS99_Q);
    let (w, h) = (cam.width() as f64, cam.height() as f64);
    !(splat.mean2d.x + rx < -0.5
        || splat.mean2d.x - rx > w - 0.5
        || splat.mean2d.y + ry < -0.5
        || splat.mean2d.y - ry > h - 0.5)
}

pub(crate) fn sources(set: &GaussianSet) -> impl Iterator<Item = SplatSource> + '_ {
    let s = (0..set.statics.len()).map(|index| SplatSource { kind: Kind::Static, index });
    let r = (0..set.rigids.len()).map(|index| SplatSource { kind: Kind::Rigid, index });
    let t = (0..set.transients.len()).map(|index| SplatSource { kind: Kind::Transient, index });
    s.chain(r).chain(t)
}

pub(crate) fn prepare_evals(set: &GaussianSet, cam: &CameraFrame, frame: usize, t_corr: Option<usize>) -> Vec<GaussEval> {
    let t_corr = t_corr.unwrap_or(frame);
    sources(set)
        .filter_map(|src| evaluate(set, src, cam, frame, t_corr))
        .filter(|e| keep(&e.splat, cam))
        .collect()
}

/// Projects every Gaussian of `set` at `frame` into screen-space splats.
/// `t_corr` selects the frame whose world positions fill the correspondence
/// channel (defaults to `frame`).
pub fn prepare_splats(set: &GaussianSet, cam: &CameraFrame, frame: usize, t_corr: Option<usize>) -> Vec<Splat> {
    prepare_evals(set, cam, frame, t_corr).into_iter().map(|e| e.splat).collect()
}

/// Convenience: prepare and composite in one call.
pub fn render(set: &GaussianSet, cam: &CameraFrame, frame: usize, t_corr: Option<usize>) -> Result<RenderOutputs> {
    let splats = prepare_splats(set, cam, frame, t_corr);
    Ok(rasterize_forward(&splats, cam))
}

/// Global compositing order: depth ascending, ties by index.
pub(crate) fn depth_order(splats: &[Splat]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..splats.len()).collect();
    order.sort_by(|&a, &b| splats[a].depth.total_cmp(&splats[b].depth).then(a.cmp(&b)));
    order
}
