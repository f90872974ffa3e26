//! Analytic synthetic scenes: fronto-parallel textured patches covered by
//! Gaussians, a moving camera and actors that translate or roll about the
//! optical axis. Depth, ids, flow, scene flow and tracks come from exact
//! ray casts against the patches; images are rendered from the generating
//! Gaussians.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FrameData, GroundTruth, SceneDataset, Tracks};
use crate::dynmask::ObjectMaskFrame;
use crate::error::{Error, Result};
use crate::geometry::{matrix_to_quat, CameraFrame, CameraIntrinsics, Se3, Vec2, Vec3};
use crate::grid::{Grid, Mask};
use crate::primitives::{logit, GaussianCore, GaussianSet, MotionBases, RigidGaussian};
use crate::raster::render;

const PATCH_OPACITY: f64 = 0.95;
const MIN_CAMERA_DEPTH: f64 = 0.05;

fn default_spacing() -> f64 {
    1.5
}

fn default_margin() -> f64 {
    4.0
}

fn default_segment() -> usize {
    5
}

fn default_parts() -> [usize; 2] {
    [1, 1]
}

fn default_period() -> f64 {
    16.0
}

/// Camera center path `center + velocity·t + wobble·sin(2πt/period)` with
/// a roll of `roll_per_frame·t` about the optical axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraPathSpec {
    pub center: [f64; 3],
    pub velocity: [f64; 3],
    pub roll_per_frame: f64,
    pub wobble: [f64; 3],
    pub wobble_period: f64,
}

impl Default for CameraPathSpec {
    fn default() -> Self {
        Self { center: [0.0; 3], velocity: [0.0; 3], roll_per_frame: 0.0, wobble: [0.0; 3], wobble_period: default_period() }
    }
}

/// Textured plane at world `z = depth` large enough to fill every view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundSpec {
    pub depth: f64,
    /// Gaussian spacing in pixels at the first frame.
    #[serde(default = "default_spacing")]
    pub spacing_px: f64,
    #[serde(default = "default_margin")]
    pub margin_px: f64,
}

/// Rectangle of Gaussians in the plane `z = center.z`, optionally split
/// into a grid of independently moving parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeSpec {
    pub center: [f64; 3],
    pub size: [f64; 2],
    #[serde(default = "default_spacing")]
    pub spacing_px: f64,
    #[serde(default = "default_parts")]
    pub parts: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MotionSpec {
    Static,
    /// Constant velocity and roll rate.
    Linear {
        velocity: [f64; 3],
        #[serde(default)]
        roll_per_frame: f64,
    },
    /// One row-major world transform per frame, applied to the shape placed
    /// at its center. Rotations must be about z.
    RigidPath { poses: Vec<[f64; 16]> },
    /// Every part drifts on its own piecewise-linear path whose direction is
    /// resampled every `segment` frames; speed in world units per frame.
    Erratic {
        #[serde(default = "default_segment")]
        segment: usize,
        speed: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorSpec {
    pub shape: ShapeSpec,
    pub motion: MotionSpec,
}

/// Standard deviations of additive image and flow noise and relative
/// depth noise.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub image: f64,
    pub depth: f64,
    pub flow: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackSpec {
    pub per_actor: usize,
    pub background: usize,
    /// Emulates a tracker that loses a point when its motion turns by more
    /// than this angle between consecutive frames; the point is picked up
    /// again as a new track on the next frame. `None` keeps full tracks.
    pub break_angle_deg: Option<f64>,
}

impl Default for TrackSpec {
    fn default() -> Self {
        Self { per_actor: 32, background: 16, break_angle_deg: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSceneSpec {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Focal length in pixels; defaults to the image width.
    #[serde(default)]
    pub focal: Option<f64>,
    #[serde(default)]
    pub camera: CameraPathSpec,
    #[serde(default)]
    pub background: Option<BackgroundSpec>,
    #[serde(default)]
    pub actors: Vec<ActorSpec>,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub tracks: TrackSpec,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSceneSpec {
    pub fn focal(&self) -> f64 {
        self.focal.unwrap_or(self.width as f64)
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics {
            fx: self.focal(),
            fy: self.focal(),
            cx: (self.width as f64 - 1.0) / 2.0,
            cy: (self.height as f64 - 1.0) / 2.0,
            width: self.width,
            height: self.height,
        }
    }

    pub fn camera(&self, t: usize) -> CameraFrame {
        let c = &self.camera;
        let tf = t as f64;
        let s = (2.0 * std::f64::consts::PI * tf / c.wobble_period).sin();
        let center = Vec3::from(c.center) + Vec3::from(c.velocity) * tf + Vec3::from(c.wobble) * s;
        let rot = Se3::rot_z(c.roll_per_frame * tf);
        CameraFrame::new(self.intrinsics(), Se3::new(rot, -(rot * center)))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.frames < 3 {
            return bad(format!("need at least 3 frames, got {}", self.frames));
        }
        if self.width < 2 || self.height < 2 {
            return bad("image must be at least 2x2".into());
        }
        if self.background.is_none() && self.actors.is_empty() {
            return bad("scene needs a background or an actor".into());
        }
        if self.actors.len() >= u16::MAX as usize {
            return bad("too many actors".into());
        }
        if !(self.focal() > 0.0) || !(self.camera.wobble_period > 0.0) {
            return bad("focal length and wobble period must be positive".into());
        }
        if self.tracks.break_angle_deg.is_some_and(|a| !(a > 0.0 && a < 180.0)) {
            return bad("track break angle must lie in (0, 180) degrees".into());
        }
        let n = &self.noise;
        if [n.image, n.depth, n.flow].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("noise levels must be finite and nonnegative".into());
        }
        if let Some(bg) = &self.background {
            if !(bg.spacing_px > 0.0) || !(bg.margin_px >= 0.0) {
                return bad("background spacing must be positive".into());
            }
        }
        for (i, a) in self.actors.iter().enumerate() {
            let s = &a.shape;
            if !(s.size[0] > 0.0 && s.size[1] > 0.0 && s.spacing_px > 0.0) || s.parts[0] == 0 || s.parts[1] == 0 {
                return bad(format!("actor {i}: sizes, spacing and part counts must be positive"));
            }
            match &a.motion {
                MotionSpec::RigidPath { poses } => {
                    if poses.len() != self.frames {
                        return bad(format!("actor {i}: {} poses for {} frames", poses.len(), self.frames));
                    }
                    for p in poses {
                        let tf = Se3::from_row_major(p);
                        if !tf.is_valid(1e-9) || (tf.rotation[(2, 2)] - 1.0).abs() > 1e-9 {
                            return bad(format!("actor {i}: poses must be rigid rotations about z"));
                        }
                    }
                }
                MotionSpec::Erratic { segment, speed } => {
                    if *segment == 0 || !(speed.is_finite() && *speed >= 0.0) {
                        return bad(format!("actor {i}: erratic segment must be ≥ 1 and speed ≥ 0"));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Two sinusoids per channel over a base color.
#[derive(Clone, Debug)]
struct Texture {
    base: [f64; 3],
    waves: [[[f64; 3]; 2]; 3],
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng, footprint: f64) -> Self {
        let mut base = [0.0; 3];
        let mut waves = [[[0.0; 3]; 2]; 3];
        for c in 0..3 {
            base[c] = rng.gen_range(0.25..0.75);
            for w in &mut waves[c] {
                let wavelength = rng.gen_range(5.0..12.0) * footprint;
                let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let k = std::f64::consts::TAU / wavelength;
                *w = [k * angle.cos(), k * angle.sin(), rng.gen_range(0.0..std::f64::consts::TAU)];
            }
        }
        Self { base, waves }
    }

    fn color(&self, u: f64, v: f64) -> Vec3 {
        Vec3::from_fn(|c, _| {
            let s: f64 = self.waves[c].iter().map(|w| (w[0] * u + w[1] * v + w[2]).sin()).sum();
            (self.base[c] + 0.18 * s).clamp(0.0, 1.0)
        })
    }
}

/// One planar rectangle with its own trajectory.
#[derive(Clone, Debug)]
struct Patch {
    id: u16,
    half: [f64; 2],
    /// Local-to-world transform per frame.
    poses: Vec<Se3>,
    /// Texture coordinates of the local origin.
    tex_offset: [f64; 2],
    texture: usize,
    spacing_px: f64,
}

impl Patch {
    fn moves(&self) -> bool {
        self.poses.iter().any(|p| {
            (p.rotation - self.poses[0].rotation).abs().max() > 1e-12
                || (p.translation - self.poses[0].translation).abs().max() > 1e-12
        })
    }

    /// Local Gaussian centers on a grid at `spacing_px` pixels at frame 0.
    fn grid(&self, cam0: &CameraFrame) -> (Vec<[f64; 2]>, [f64; 2]) {
        let depth = cam0.to_camera(&self.poses[0].translation).z.max(MIN_CAMERA_DEPTH);
        let step = self.spacing_px * depth / cam0.intrinsics.fx;
        let nx = ((2.0 * self.half[0] / step).round() as usize).max(1);
        let ny = ((2.0 * self.half[1] / step).round() as usize).max(1);
        let (sx, sy) = (2.0 * self.half[0] / nx as f64, 2.0 * self.half[1] / ny as f64);
        let mut pts = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                pts.push([-self.half[0] + (i as f64 + 0.5) * sx, -self.half[1] + (j as f64 + 0.5) * sy]);
            }
        }
        (pts, [sx, sy])
    }
}

fn erratic_path(rng: &mut ChaCha8Rng, frames: usize, segment: usize, speed: f64) -> Vec<Vec3> {
    let mut path = vec![Vec3::zeros(); frames];
    let mut v = Vec3::zeros();
    for t in 1..frames {
        if (t - 1) % segment == 0 {
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let s = speed * rng.gen_range(0.5..=1.0);
            v = Vec3::new(s * angle.cos(), s * angle.sin(), 0.0);
        }
        path[t] = path[t - 1] + v;
    }
    path
}

struct Scene {
    cams: Vec<CameraFrame>,
    patches: Vec<Patch>,
    textures: Vec<Texture>,
    /// Actor object ids that move.
    dynamic_ids: Vec<u16>,
}

fn build_scene(spec: &SyntheticSceneSpec) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let frames = spec.frames;
    let cams: Vec<CameraFrame> = (0..frames).map(|t| spec.camera(t)).collect();
    let focal = spec.focal();
    let mut patches = Vec::new();
    let mut textures = Vec::new();
    if let Some(bg) = &spec.background {
        // bound the plane footprint of every view
        let (mut lo, mut hi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
        for cam in &cams {
            let d = cam.to_camera(&Vec3::new(cam.center().x, cam.center().y, bg.depth)).z.max(MIN_CAMERA_DEPTH);
            for (u, v) in [(-0.5, -0.5), (spec.width as f64 - 0.5, -0.5), (-0.5, spec.height as f64 - 0.5)]
                .into_iter()
                .chain([(spec.width as f64 - 0.5, spec.height as f64 - 0.5)])
            {
                if let Ok(p) = cam.unproject(&Vec2::new(u, v), d) {
                    lo = lo.inf(&p);
                    hi = hi.sup(&p);
                }
            }
        }
        let d0 = cams[0].to_camera(&Vec3::new(0.0, 0.0, bg.depth)).z.max(MIN_CAMERA_DEPTH);
        let margin = bg.margin_px * d0 / focal;
        let center = Vec3::new((lo.x + hi.x) / 2.0, (lo.y + hi.y) / 2.0, bg.depth);
        textures.push(Texture::random(&mut rng, d0 / focal));
        patches.push(Patch {
            id: 0,
            half: [(hi.x - lo.x) / 2.0 + margin, (hi.y - lo.y) / 2.0 + margin],
            poses: vec![Se3::from_translation(center); frames],
            tex_offset: [center.x, center.y],
            texture: 0,
            spacing_px: bg.spacing_px,
        });
    }
    let mut dynamic_ids = Vec::new();
    for (a, actor) in spec.actors.iter().enumerate() {
        let id = (a + 1) as u16;
        let s = &actor.shape;
        let center = Vec3::from(s.center);
        let d0 = cams[0].to_camera(&center).z.max(MIN_CAMERA_DEPTH);
        let texture = textures.len();
        textures.push(Texture::random(&mut rng, d0 / focal));
        let actor_pose = |t: usize| -> Se3 {
            let tf = t as f64;
            match &actor.motion {
                MotionSpec::Linear { velocity, roll_per_frame } => {
                    Se3::new(Se3::rot_z(roll_per_frame * tf), center + Vec3::from(*velocity) * tf)
                }
                MotionSpec::RigidPath { poses } => Se3::from_row_major(&poses[t]).compose(&Se3::from_translation(center)),
                _ => Se3::from_translation(center),
            }
        };
        let [px, py] = s.parts;
        let half = [s.size[0] / (2.0 * px as f64), s.size[1] / (2.0 * py as f64)];
        let first = patches.len();
        for j in 0..py {
            for i in 0..px {
                let offset = Vec3::new(
                    -s.size[0] / 2.0 + (2 * i + 1) as f64 * half[0],
                    -s.size[1] / 2.0 + (2 * j + 1) as f64 * half[1],
                    0.0,
                );
                let poses = match &actor.motion {
                    MotionSpec::Erratic { segment, speed } => erratic_path(&mut rng, frames, *segment, *speed)
                        .into_iter()
                        .map(|d| Se3::from_translation(center + offset + d))
                        .collect(),
                    _ => (0..frames).map(|t| actor_pose(t).compose(&Se3::from_translation(offset))).collect(),
                };
                patches.push(Patch { id, half, poses, tex_offset: [offset.x, offset.y], texture, spacing_px: s.spacing_px });
            }
        }
        if patches[first..].iter().any(Patch::moves) {
            dynamic_ids.push(id);
        }
    }
    Scene { cams, patches, textures, dynamic_ids }
}

#[derive(Clone, Copy, Debug)]
struct Hit {
    patch: usize,
    depth: f64,
    point: Vec3,
}

impl Scene {
    /// Patch indices ordered front to back at frame `t`.
    fn order(&self, t: usize) -> Vec<(usize, f64)> {
        let mut o: Vec<(usize, f64)> = self
            .patches
            .iter()
            .enumerate()
            .map(|(k, p)| (k, self.cams[t].to_camera(&p.poses[t].translation).z))
            .filter(|(_, d)| *d > MIN_CAMERA_DEPTH)
            .collect();
        o.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        o
    }

    fn cast(&self, t: usize, order: &[(usize, f64)], p: &Vec2) -> Option<Hit> {
        for &(k, depth) in order {
            let patch = &self.patches[k];
            let Ok(point) = self.cams[t].unproject(p, depth) else { continue };
            let local = patch.poses[t].inverse().apply(&point);
            if local.x.abs() <= patch.half[0] && local.y.abs() <= patch.half[1] {
                return Some(Hit { patch: k, depth, point });
            }
        }
        None
    }

    /// Moves a surface point of patch `k` from frame `a` to frame `b`.
    fn carry(&self, k: usize, a: usize, b: usize, x: &Vec3) -> Vec3 {
        let poses = &self.patches[k].poses;
        poses[b].compose(&poses[a].inverse()).apply(x)
    }

    fn gaussian_set(&self) -> GaussianSet {
        let frames = self.cams.len();
        let moving: Vec<usize> = (0..self.patches.len()).filter(|&k| self.patches[k].moves()).collect();
        let k_bases = moving.len().max(1);
        let mut set = GaussianSet::empty(k_bases, frames);
        set.bases = MotionBases::identity(k_bases, frames);
        for (k, patch) in self.patches.iter().enumerate() {
            let (pts, cell) = patch.grid(&self.cams[0]);
            let pose0 = patch.poses[0];
            let log_scale = Vec3::new((0.6 * cell[0]).ln(), (0.6 * cell[1]).ln(), (0.05 * cell[0].min(cell[1])).ln());
            let quat = matrix_to_quat(&pose0.rotation);
            let basis = moving.iter().position(|&m| m == k);
            for q in pts {
                let tex = &self.textures[patch.texture];
                let core = GaussianCore {
                    mean: pose0.apply(&Vec3::new(q[0], q[1], 0.0)),
                    log_scale,
                    quat,
                    opacity_logit: logit(PATCH_OPACITY),
                    color: tex.color(patch.tex_offset[0] + q[0], patch.tex_offset[1] + q[1]),
                };
                match basis {
                    None => set.statics.push(core),
                    Some(j) => {
                        let mut weights = vec![0.0; k_bases];
                        weights[j] = 1.0;
                        set.rigids.push(RigidGaussian {
                            core,
                            weights,
                            beta: 2.0 * frames as f64,
                            gamma: (frames as f64 - 1.0) / 2.0,
                            source: patch.id as u32,
                        });
                    }
                }
            }
            if let Some(j) = basis {
                for t in 0..frames {
                    set.bases.set(j, t, &patch.poses[t].compose(&pose0.inverse()));
                }
            }
        }
        set
    }
}

/// Per-frame ray-cast products.
struct Cast {
    depth: Grid,
    ids: Vec<u16>,
    hits: Vec<Option<Hit>>,
}

fn cast_frame(scene: &Scene, t: usize, w: usize, h: usize) -> Cast {
    let order = scene.order(t);
    let mut depth = Grid::zeros(w, h, 1);
    let mut ids = vec![0u16; w * h];
    let mut hits = vec![None; w * h];
    for y in 0..h {
        for x in 0..w {
            if let Some(hit) = scene.cast(t, &order, &Vec2::new(x as f64, y as f64)) {
                let i = y * w + x;
                depth.data[i] = hit.depth;
                ids[i] = scene.patches[hit.patch].id;
                hits[i] = Some(hit);
            }
        }
    }
    Cast { depth, ids, hits }
}

/// Flow, scene flow and exact validity from frame `t` to `other`.
fn flow_to(scene: &Scene, casts: &[Cast], t: usize, other: usize, w: usize, h: usize) -> (Grid, Grid, Mask) {
    let mut flow = Grid::zeros(w, h, 2);
    let mut scene_flow = Grid::zeros(w, h, 3);
    let mut valid = Mask::new(w, h, false);
    let probe = Grid::zeros(w, h, 1);
    for y in 0..h {
        for x in 0..w {
            let Some(hit) = casts[t].hits[y * w + x] else { continue };
            let moved = scene.carry(hit.patch, t, other, &hit.point);
            let Ok((q, _)) = scene.cams[other].project(&moved) else { continue };
            flow.pixel_mut(x, y).copy_from_slice(&[q.x - x as f64, q.y - y as f64]);
            // forward flow is X_{t+1} − X_t, backward flow X_t − X_{t−1}
            let d = if other > t { moved - hit.point } else { hit.point - moved };
            scene_flow.pixel_mut(x, y).copy_from_slice(d.as_slice());
            let same = probe.bilinear_taps(q.x, q.y).is_some_and(|(taps, _)| {
                taps.iter().filter(|(_, wt)| *wt > 0.0).all(|(i, _)| casts[other].hits[*i].is_some_and(|o| o.patch == hit.patch))
            });
            valid.set(x, y, same);
        }
    }
    (flow, scene_flow, valid)
}

fn build_tracks(spec: &SyntheticSceneSpec, scene: &Scene) -> (Tracks, Vec<u16>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x7472_6163_6b73);
    let frames = scene.cams.len();
    let mut chosen: Vec<(usize, Vec3)> = Vec::new();
    let mut ids = Vec::new();
    let mut pick = |patch_ids: &[usize], count: usize, rng: &mut ChaCha8Rng| {
        let mut pool: Vec<(usize, Vec3)> = Vec::new();
        for &k in patch_ids {
            let (pts, _) = scene.patches[k].grid(&scene.cams[0]);
            pool.extend(pts.into_iter().map(|q| (k, Vec3::new(q[0], q[1], 0.0))));
        }
        pool.shuffle(rng);
        pool.truncate(count);
        for (k, local) in pool {
            ids.push(scene.patches[k].id);
            chosen.push((k, local));
        }
    };
    for a in 0..spec.actors.len() {
        let id = (a + 1) as u16;
        let members: Vec<usize> = (0..scene.patches.len()).filter(|&k| scene.patches[k].id == id).collect();
        pick(&members, spec.tracks.per_actor, &mut rng);
    }
    if spec.background.is_some() {
        pick(&[0], spec.tracks.background, &mut rng);
    }
    let orders: Vec<_> = (0..frames).map(|t| scene.order(t)).collect();
    let (w, h) = (spec.width as f64, spec.height as f64);
    let cos_break = spec.tracks.break_angle_deg.map(|a| a.to_radians().cos());
    let mut data = Vec::with_capacity(chosen.len() * frames * 3);
    let mut track_ids = Vec::with_capacity(ids.len());
    for ((k, local), id) in chosen.iter().zip(&ids) {
        let world: Vec<Vec3> = (0..frames).map(|t| scene.patches[*k].poses[t].apply(local)).collect();
        let mut row = Vec::with_capacity(frames * 3);
        for (t, x) in world.iter().enumerate() {
            match scene.cams[t].project(x) {
                Ok((q, _)) => {
                    let inside = q.x >= 0.0 && q.y >= 0.0 && q.x <= w - 1.0 && q.y <= h - 1.0;
                    let seen = inside && scene.cast(t, &orders[t], &q).is_some_and(|hit| hit.patch == *k);
                    row.extend([q.x, q.y, seen as u8 as f64]);
                }
                Err(_) => row.extend([0.0, 0.0, 0.0]),
            }
        }
        // a turn at frame t ends the piece at t; the next one starts at t+1
        let mut starts = vec![0];
        if let Some(c) = cos_break {
            for t in 1..frames.saturating_sub(1) {
                let (a, b) = (world[t] - world[t - 1], world[t + 1] - world[t]);
                if a.norm() > 1e-12 && b.norm() > 1e-12 && a.dot(&b) < c * a.norm() * b.norm() {
                    starts.push(t + 1);
                }
            }
        }
        starts.push(frames);
        for piece in starts.windows(2) {
            let mut r = row.clone();
            for t in (0..piece[0]).chain(piece[1]..frames) {
                r[t * 3 + 2] = 0.0;
            }
            data.extend(r);
            track_ids.push(*id);
        }
    }
    (Tracks { n: track_ids.len(), t: frames, data }, track_ids)
}

/// Builds the scene described by `spec` and renders every channel.
pub fn generate_synthetic(spec: &SyntheticSceneSpec) -> Result<SceneDataset> {
    spec.validate()?;
    let (w, h, frames) = (spec.width, spec.height, spec.frames);
    let scene = build_scene(spec);
    let set = scene.gaussian_set();
    set.validate()?;
    let casts: Vec<Cast> = (0..frames).into_par_iter().map(|t| cast_frame(&scene, t, w, h)).collect();
    let images: Vec<Grid> = (0..frames)
        .into_par_iter()
        .map(|t| render(&set, &scene.cams[t], t, None).map(|r| r.color()))
        .collect::<Result<_>>()?;
    let flows: Vec<_> = (0..frames)
        .into_par_iter()
        .map(|t| {
            let fwd = (t + 1 < frames).then(|| flow_to(&scene, &casts, t, t + 1, w, h));
            let bwd = (t > 0).then(|| flow_to(&scene, &casts, t, t - 1, w, h));
            (fwd, bwd)
        })
        .collect();
    let (tracks, track_ids) = build_tracks(spec, &scene);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x6e6f_6973_65);
    let gauss = |sigma: f64| Normal::new(0.0, sigma).expect("sigma is finite and nonnegative");
    let mut noisy = |g: &mut Grid, sigma: f64, relative: bool| {
        if sigma > 0.0 {
            let n = gauss(sigma);
            for v in &mut g.data {
                let e = n.sample(&mut rng);
                *v += if relative { *v * e } else { e };
            }
        }
    };
    let empty = || (Grid::zeros(w, h, 2), Grid::zeros(w, h, 3), Mask::new(w, h, false));
    let mut out = Vec::with_capacity(frames);
    let mut truth = GroundTruth {
        dynamic_ids: scene.dynamic_ids.clone(),
        track_ids,
        scene_flow_fwd: Vec::new(),
        scene_flow_bwd: Vec::new(),
        flow_valid_fwd: Vec::new(),
        flow_valid_bwd: Vec::new(),
        set: Some(set),
    };
    for (t, ((cast, image), (fwd, bwd))) in casts.into_iter().zip(images).zip(flows).enumerate() {
        let (mut flow_fwd, sff, vf) = fwd.unwrap_or_else(empty);
        let (mut flow_bwd, sfb, vb) = bwd.unwrap_or_else(empty);
        let mut image = image;
        let mut depth = cast.depth;
        noisy(&mut image, spec.noise.image, false);
        noisy(&mut depth, spec.noise.depth, true);
        noisy(&mut flow_fwd, spec.noise.flow, false);
        noisy(&mut flow_bwd, spec.noise.flow, false);
        for v in &mut image.data {
            *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
        out.push(FrameData {
            image,
            camera: scene.cams[t],
            depth,
            flow_fwd,
            flow_bwd,
            uncertainty: None,
            objects: ObjectMaskFrame { width: w, height: h, ids: cast.ids },
            dyn_mask: None,
        });
        truth.scene_flow_fwd.push(sff);
        truth.scene_flow_bwd.push(sfb);
        truth.flow_valid_fwd.push(vf);
        truth.flow_valid_bwd.push(vb);
    }
    Ok(SceneDataset { width: w, height: h, frames: out, tracks, truth: Some(truth) })
}

/// A few ready-made scenes.
impl SyntheticSceneSpec {
    /// Textured background under a panning, rolling camera with one rigid
    /// and one erratic mover.
    pub fn movers(width: usize, height: usize, frames: usize, seed: u64) -> Self {
        Self {
            width,
            height,
            frames,
            focal: None,
            camera: CameraPathSpec {
                velocity: [0.004, -0.002, 0.0],
                roll_per_frame: 0.002,
                wobble: [0.0, 0.02, 0.03],
                ..Default::default()
            },
            background: Some(BackgroundSpec { depth: 4.0, spacing_px: 1.5, margin_px: 4.0 }),
            actors: vec![
                ActorSpec {
                    shape: ShapeSpec { center: [-0.45, 0.1, 2.2], size: [0.55, 0.5], spacing_px: 1.5, parts: [1, 1] },
                    motion: MotionSpec::Linear { velocity: [0.012, 0.004, 0.0], roll_per_frame: 0.01 },
                },
                ActorSpec {
                    shape: ShapeSpec { center: [0.55, -0.2, 2.8], size: [0.8, 0.8], spacing_px: 1.5, parts: [4, 4] },
                    motion: MotionSpec::Erratic { segment: 5, speed: 0.012 },
                },
            ],
            noise: NoiseSpec::default(),
            tracks: TrackSpec::default(),
            seed,
        }
    }

    /// Background plus one rigid mover.
    pub fn rigid_mover(width: usize, height: usize, frames: usize, seed: u64) -> Self {
        let mut spec = Self::movers(width, height, frames, seed);
        spec.actors.truncate(1);
        spec
    }

    /// Static world under a moving camera.
    pub fn static_world(width: usize, height: usize, frames: usize, seed: u64) -> Self {
        let mut spec = Self::movers(width, height, frames, seed);
        spec.actors = vec![ActorSpec {
            shape: ShapeSpec { center: [0.2, 0.0, 2.5], size: [0.6, 0.5], spacing_px: 1.5, parts: [1, 1] },
            motion: MotionSpec::Static,
        }];
        spec
    }
}
