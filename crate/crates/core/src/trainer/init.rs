//! Initial static Gaussians from masked depth and rigid Gaussians plus motion
//! bases from lifted 2D tracks.

use nalgebra::SVD;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{matrix_to_quat, CameraFrame, Mat3, Se3, Vec2, Vec3};
use crate::grid::{Grid, Mask};
use crate::harness::{SceneDataset, Tracks};
use crate::primitives::{logit, GaussianCore, MotionBases, RigidGaussian, StaticGaussian};
use crate::sceneflow::depth_is_valid;

pub const KMEANS_ITERS: usize = 50;
pub const INIT_OPACITY: f64 = 0.5;

/// `n` frames spread evenly over `candidates`.
fn spread(candidates: &[usize], n: usize) -> Vec<usize> {
    if candidates.is_empty() || n == 0 {
        return Vec::new();
    }
    if n == 1 || candidates.len() == 1 {
        return vec![candidates[0]];
    }
    let last = candidates.len() - 1;
    let mut out: Vec<usize> =
        (0..n).map(|k| candidates[(k as f64 * last as f64 / (n - 1) as f64).round() as usize]).collect();
    out.dedup();
    out
}

/// Unprojects one random static pixel per `stride × stride` cell of each
/// sampled frame. Color comes from the image, scale from the pixel
/// footprint `depth/fx`.
pub fn init_static(
    ds: &SceneDataset,
    dyn_masks: &[Mask],
    frames: &[usize],
    n_frames_sampled: usize,
    stride: usize,
    seed: u64,
) -> Result<Vec<StaticGaussian>> {
    if dyn_masks.len() != ds.num_frames() {
        return Err(Error::Invalid(format!("{} masks for {} frames", dyn_masks.len(), ds.num_frames())));
    }
    let stride = stride.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for t in spread(frames, n_frames_sampled) {
        let f = &ds.frames[t];
        let (w, h) = (ds.width, ds.height);
        for cy in (0..h).step_by(stride) {
            for cx in (0..w).step_by(stride) {
                let mut cell = Vec::new();
                for y in cy..(cy + stride).min(h) {
                    for x in cx..(cx + stride).min(w) {
                        if !dyn_masks[t].get(x, y) && depth_is_valid(f.depth.get(x, y, 0)) {
                            cell.push((x, y));
                        }
                    }
                }
                if cell.is_empty() {
                    continue;
                }
                let (x, y) = cell[rng.gen_range(0..cell.len())];
                let d = f.depth.get(x, y, 0);
                let Ok(p) = f.camera.unproject(&Vec2::new(x as f64, y as f64), d) else { continue };
                let c = f.image.pixel(x, y);
                let scale = d / f.camera.intrinsics.fx;
                out.push(GaussianCore::isotropic(p, scale, INIT_OPACITY, Vec3::new(c[0], c[1], c[2])));
            }
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyStaticRegion);
    }
    Ok(out)
}

/// Depth at a subpixel location when its four bilinear taps are valid.
pub(crate) fn depth_at(depth: &Grid, u: f64, v: f64) -> Option<f64> {
    let (taps, _) = depth.bilinear_taps(u, v)?;
    let mut d = 0.0;
    for (i, wt) in taps {
        if wt > 0.0 && !depth_is_valid(depth.data[i]) {
            return None;
        }
        d += wt * depth.data[i];
    }
    Some(d)
}

/// A track lifted to 3D at the frames where it is visible with valid depth.
#[derive(Clone, Debug)]
struct Lifted {
    track: usize,
    points: Vec<Option<Vec3>>,
    first: usize,
    last: usize,
}

impl Lifted {
    /// Positions at every frame, linearly interpolated across gaps and held
    /// constant beyond the ends.
    fn filled(&self) -> Vec<Vec3> {
        let known: Vec<(usize, Vec3)> = self.points.iter().enumerate().filter_map(|(t, p)| p.map(|p| (t, p))).collect();
        (0..self.points.len())
            .map(|t| {
                let after = known.iter().position(|(k, _)| *k >= t);
                match after {
                    Some(0) => known[0].1,
                    None => known[known.len() - 1].1,
                    Some(i) if known[i].0 == t => known[i].1,
                    Some(i) => {
                        let (a, pa) = known[i - 1];
                        let (b, pb) = known[i];
                        let s = (t - a) as f64 / (b - a) as f64;
                        pa + (pb - pa) * s
                    }
                }
            })
            .collect()
    }
}

fn lift_tracks(tracks: &Tracks, depths: &[Grid], cams: &[CameraFrame], dyn_masks: &[Mask]) -> Vec<Lifted> {
    let mut out = Vec::new();
    for i in 0..tracks.n {
        let mut points = vec![None; tracks.t];
        let mut dynamic = 0usize;
        for t in 0..tracks.t {
            let (u, v, vis) = tracks.get(i, t);
            if !vis {
                continue;
            }
            let Some(d) = depth_at(&depths[t], u, v) else { continue };
            let Ok(p) = cams[t].unproject(&Vec2::new(u, v), d) else { continue };
            points[t] = Some(p);
            let (x, y) = (u.round() as usize, v.round() as usize);
            dynamic += dyn_masks[t].get(x.min(dyn_masks[t].width - 1), y.min(dyn_masks[t].height - 1)) as usize;
        }
        let seen: Vec<usize> = (0..tracks.t).filter(|&t| points[t].is_some()).collect();
        if seen.is_empty() || 2 * dynamic <= seen.len() {
            continue;
        }
        out.push(Lifted { track: i, points, first: seen[0], last: seen[seen.len() - 1] });
    }
    out
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Seeded k-means++ followed by a fixed number of Lloyd iterations.
/// Returns the cluster of every feature row.
pub fn kmeans(features: &[Vec<f64>], k: usize, iters: usize, seed: u64) -> Vec<usize> {
    let n = features.len();
    if n == 0 || k == 0 {
        return vec![0; n];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec<f64>> = vec![features[rng.gen_range(0..n)].clone()];
    while centers.len() < k.min(n) {
        let d: Vec<f64> =
            features.iter().map(|f| centers.iter().map(|c| sq_dist(f, c)).fold(f64::INFINITY, f64::min)).collect();
        let total: f64 = d.iter().sum();
        let pick = if total <= 0.0 {
            rng.gen_range(0..n)
        } else {
            let mut r = rng.gen::<f64>() * total;
            let mut idx = n - 1;
            for (i, di) in d.iter().enumerate() {
                if r < *di {
                    idx = i;
                    break;
                }
                r -= di;
            }
            idx
        };
        centers.push(features[pick].clone());
    }
    let nearest = |f: &[f64], centers: &[Vec<f64>]| {
        let mut best = (0, f64::INFINITY);
        for (j, c) in centers.iter().enumerate() {
            let d = sq_dist(f, c);
            if d < best.1 {
                best = (j, d);
            }
        }
        best.0
    };
    let mut assign: Vec<usize> = features.iter().map(|f| nearest(f, &centers)).collect();
    for _ in 0..iters {
        let dim = features[0].len();
        let mut sums = vec![vec![0.0; dim]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (f, &a) in features.iter().zip(&assign) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(f) {
                *s += v;
            }
        }
        for j in 0..centers.len() {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        let next: Vec<usize> = features.iter().map(|f| nearest(f, &centers)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    assign
}

/// Least-squares rigid transform taking `from` onto `to`. Falls back to a
/// pure translation for fewer than three points or a degenerate spread.
pub fn procrustes(from: &[Vec3], to: &[Vec3]) -> Se3 {
    let n = from.len().min(to.len());
    if n == 0 {
        return Se3::identity();
    }
    let cf = from[..n].iter().sum::<Vec3>() / n as f64;
    let ct = to[..n].iter().sum::<Vec3>() / n as f64;
    if n < 3 {
        return Se3::from_translation(ct - cf);
    }
    let mut hm = Mat3::zeros();
    for (a, b) in from.iter().zip(to) {
        hm += (a - cf) * (b - ct).transpose();
    }
    let svd = SVD::new(hm, true, true);
    let (Some(u), Some(vt)) = (svd.u, svd.v_t) else { return Se3::from_translation(ct - cf) };
    let mut sorted: Vec<f64> = svd.singular_values.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    if sorted[1] <= 1e-12 * sorted[0].max(1e-300) {
        return Se3::from_translation(ct - cf);
    }
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose();
    Se3::new(r, ct - r * cf)
}

/// Rigid Gaussians (one per dynamic track) and `k` motion bases fitted to
/// clustered track trajectories.
pub fn init_rigid_from_tracks(
    tracks: &Tracks,
    depths: &[Grid],
    images: &[Grid],
    cams: &[CameraFrame],
    dyn_masks: &[Mask],
    k: usize,
    seed: u64,
) -> Result<(Vec<RigidGaussian>, MotionBases)> {
    let t_len = tracks.t;
    if depths.len() != t_len || images.len() != t_len || cams.len() != t_len || dyn_masks.len() != t_len {
        return Err(Error::Invalid("tracks, depths, images, cameras and masks disagree on frame count".into()));
    }
    let k = k.max(1);
    let lifted = lift_tracks(tracks, depths, cams, dyn_masks);
    if lifted.len() < k {
        return Err(Error::InsufficientTracks { got: lifted.len(), need: k });
    }
    let filled: Vec<Vec<Vec3>> = lifted.iter().map(Lifted::filled).collect();
    let features: Vec<Vec<f64>> = filled
        .iter()
        .zip(&lifted)
        .map(|(traj, l)| traj.iter().flat_map(|p| (p - traj[l.first]).iter().copied().collect::<Vec<_>>()).collect())
        .collect();
    let assign = kmeans(&features, k, KMEANS_ITERS, seed);

    let mut bases = MotionBases::identity(k, t_len);
    let mut fitted: Vec<Vec<Se3>> = vec![vec![Se3::identity(); t_len]; k];
    for (j, fit) in fitted.iter_mut().enumerate() {
        let members: Vec<usize> = (0..lifted.len()).filter(|&i| assign[i] == j).collect();
        if members.is_empty() {
            continue;
        }
        let visible = |t: usize| members.iter().filter(|&&i| lifted[i].points[t].is_some()).count();
        let reference = (0..t_len).max_by(|&a, &b| visible(a).cmp(&visible(b)).then(b.cmp(&a))).unwrap_or(0);
        let mut known: Vec<Option<Se3>> = vec![None; t_len];
        for (t, slot) in known.iter_mut().enumerate() {
            let (mut from, mut to) = (Vec::new(), Vec::new());
            for &i in &members {
                if let (Some(a), Some(b)) = (lifted[i].points[reference], lifted[i].points[t]) {
                    from.push(a);
                    to.push(b);
                }
            }
            if !from.is_empty() {
                *slot = Some(procrustes(&from, &to));
            }
        }
        // frames with no common support copy the nearest fitted frame
        for t in 0..t_len {
            fit[t] = (0..t_len)
                .filter_map(|s| known[s].map(|tf| (s.abs_diff(t), s, tf)))
                .min_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)))
                .map_or(Se3::identity(), |x| x.2);
            bases.set(j, t, &fit[t]);
        }
    }

    let mut rigids = Vec::with_capacity(lifted.len());
    for (l, &j) in lifted.iter().zip(&assign) {
        let f = l.first;
        let p = l.points[f].expect("first frame is lifted");
        let to_canon = fitted[j][f].inverse();
        let (u, v, _) = tracks.get(l.track, f);
        let color = images[f].sample_bilinear(u, v).unwrap_or_else(|| vec![0.5; 3]);
        let depth = cams[f].to_camera(&p).z;
        let mut weights = vec![0.0; k];
        weights[j] = 1.0;
        rigids.push(RigidGaussian {
            core: GaussianCore {
                mean: to_canon.apply(&p),
                log_scale: Vec3::repeat((depth / cams[f].intrinsics.fx).ln()),
                quat: matrix_to_quat(&to_canon.rotation),
                opacity_logit: logit(INIT_OPACITY),
                color: Vec3::new(color[0], color[1], color[2]),
            },
            weights,
            beta: ((l.last - l.first) as f64 / 2.0).max(super::optim::MIN_BETA),
            gamma: (l.first + l.last) as f64 / 2.0,
            source: l.track as u32,
        });
    }
    Ok((rigids, bases))
}
