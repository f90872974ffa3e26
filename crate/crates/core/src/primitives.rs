//! Static, rigid and transient Gaussians, the shared motion bases, temporal
//! gating and the rigid→transient transition.

use crate::error::{Error, Result};
use crate::geometry::{matrix_to_quat, quat_to_matrix, Mat3, Rot6dCache, Rotation6D, Se3, Vec3};

/// Default number of motion bases.
pub const DEFAULT_NUM_BASES: usize = 10;
/// Default gating sharpness.
pub const DEFAULT_ALPHA_GATE: f64 = 3.0;

/// Fields shared by every primitive type.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianCore {
    pub mean: Vec3,
    pub log_scale: Vec3,
    /// `[w, x, y, z]`, unit after every optimizer step.
    pub quat: [f64; 4],
    pub opacity_logit: f64,
    pub color: Vec3,
}

pub type StaticGaussian = GaussianCore;

impl GaussianCore {
    pub fn isotropic(mean: Vec3, scale: f64, opacity: f64, color: Vec3) -> Self {
        Self {
            mean,
            log_scale: Vec3::repeat(scale.ln()),
            quat: [1.0, 0.0, 0.0, 0.0],
            opacity_logit: logit(opacity),
            color,
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn scale(&self) -> Vec3 {
        self.log_scale.map(f64::exp)
    }

    pub fn rotation(&self) -> Mat3 {
        quat_to_matrix(&self.quat)
    }

    pub fn covariance(&self) -> Mat3 {
        covariance_from(&self.log_scale, &self.quat)
    }
}

/// Long-lived dynamic Gaussian driven by the motion bases.
#[derive(Clone, Debug, PartialEq)]
pub struct RigidGaussian {
    /// Canonical pose and appearance.
    pub core: GaussianCore,
    /// Basis weights, `‖w‖₂ = 1`.
    pub weights: Vec<f64>,
    /// Temporal duration in frames.
    pub beta: f64,
    /// Temporal center in frames.
    pub gamma: f64,
    /// Opaque provenance tag (e.g. the source track); not optimized.
    pub source: u32,
}

/// Short-lived dynamic Gaussian with a free linear velocity.
#[derive(Clone, Debug, PartialEq)]
pub struct TransientGaussian {
    pub core: GaussianCore,
    /// Scene units per frame.
    pub velocity: Vec3,
    pub beta: f64,
    pub gamma: f64,
    pub source: u32,
}

/// `K × T` table of per-frame rigid transforms, stored as 6D rotation plus
/// translation so that they can be optimized directly.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionBases {
    k: usize,
    t: usize,
    /// `[a1, a2, translation]` per (basis, frame), basis-major.
    pub params: Vec<[f64; 9]>,
}

impl MotionBases {
    pub fn identity(k: usize, t: usize) -> Self {
        Self { k, t, params: vec![[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]; k * t] }
    }

    pub fn num_bases(&self) -> usize {
        self.k
    }

    pub fn num_frames(&self) -> usize {
        self.t
    }

    #[inline]
    pub fn index(&self, basis: usize, frame: usize) -> usize {
        basis * self.t + frame
    }

    pub fn set(&mut self, basis: usize, frame: usize, tf: &Se3) {
        let r6 = Rotation6D::from_matrix(&tf.rotation).to_array();
        let i = self.index(basis, frame);
        self.params[i][..6].copy_from_slice(&r6);
        self.params[i][6..].copy_from_slice(tf.translation.as_slice());
    }

    pub fn rotation6d(&self, basis: usize, frame: usize) -> Rotation6D {
        Rotation6D::from_slice(&self.params[self.index(basis, frame)][..6])
    }

    pub fn translation(&self, basis: usize, frame: usize) -> Vec3 {
        let p = &self.params[self.index(basis, frame)];
        Vec3::new(p[6], p[7], p[8])
    }

    pub fn transform(&self, basis: usize, frame: usize) -> Result<Se3> {
        Ok(Se3::new(self.rotation6d(basis, frame).to_matrix()?, self.translation(basis, frame)))
    }

    /// Re-orthonormalizes every stored rotation. Entries that degenerate are
    /// left untouched and reported.
    pub fn project(&mut self) -> usize {
        let mut bad = 0;
        for p in &mut self.params {
            match Rotation6D::from_slice(&p[..6]).to_matrix() {
                Ok(r) => p[..6].copy_from_slice(&Rotation6D::from_matrix(&r).to_array()),
                Err(_) => bad += 1,
            }
        }
        bad
    }

    /// Basis blend at a frame (`Σ_j w_j T_{j,t}` in 6D + translation form).
    pub fn blend(&self, weights: &[f64], frame: usize) -> Result<Se3> {
        self.blend_cached(weights, frame).map(|(tf, _)| tf)
    }

    pub fn blend_cached(&self, weights: &[f64], frame: usize) -> Result<(Se3, BlendCache)> {
        debug_assert_eq!(weights.len(), self.k);
        let mut a1 = Vec3::zeros();
        let mut a2 = Vec3::zeros();
        let mut tr = Vec3::zeros();
        let mut basis = Vec::with_capacity(self.k);
        for (j, &w) in weights.iter().enumerate() {
            let (rj, cache) = self.rotation6d(j, frame).to_matrix_cached()?;
            let c0: Vec3 = rj.column(0).into_owned();
            let c1: Vec3 = rj.column(1).into_owned();
            a1 += c0 * w;
            a2 += c1 * w;
            tr += self.translation(j, frame) * w;
            basis.push((c0, c1, cache));
        }
        let (rot, blend) = Rotation6D::new(a1, a2).to_matrix_cached()?;
        Ok((Se3::new(rot, tr), BlendCache { frame, basis, blend }))
    }
}

/// Intermediates of a basis blend for the backward pass.
#[derive(Clone, Debug)]
pub struct BlendCache {
    pub frame: usize,
    basis: Vec<(Vec3, Vec3, Rot6dCache)>,
    blend: Rot6dCache,
}

impl BlendCache {
    /// Pulls gradients on the blended rotation and translation back to the
    /// weights and the per-basis parameters at this frame. `basis_grad(j)`
    /// receives the 9-vector gradient of basis `j`.
    pub fn backward(
        &self,
        bases: &MotionBases,
        weights: &[f64],
        g_rot: &Mat3,
        g_trans: &Vec3,
        g_weights: &mut [f64],
        mut basis_grad: impl FnMut(usize, [f64; 9]),
    ) {
        let (ga1, ga2) = Rotation6D::vjp(&self.blend, g_rot);
        for (j, (c0, c1, cache)) in self.basis.iter().enumerate() {
            let tj = bases.translation(j, self.frame);
            g_weights[j] += ga1.dot(c0) + ga2.dot(c1) + g_trans.dot(&tj);
            let w = weights[j];
            let mut gr = Mat3::zeros();
            gr.set_column(0, &(ga1 * w));
            gr.set_column(1, &(ga2 * w));
            let (gb1, gb2) = Rotation6D::vjp(cache, &gr);
            let gt = g_trans * w;
            basis_grad(j, [gb1.x, gb1.y, gb1.z, gb2.x, gb2.y, gb2.z, gt.x, gt.y, gt.z]);
        }
    }
}

/// All three populations plus the shared bases.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSet {
    pub statics: Vec<StaticGaussian>,
    pub rigids: Vec<RigidGaussian>,
    pub transients: Vec<TransientGaussian>,
    pub bases: MotionBases,
    pub alpha_gate: f64,
}

impl GaussianSet {
    pub fn empty(k: usize, t: usize) -> Self {
        Self {
            statics: Vec::new(),
            rigids: Vec::new(),
            transients: Vec::new(),
            bases: MotionBases::identity(k, t),
            alpha_gate: DEFAULT_ALPHA_GATE,
        }
    }

    pub fn num_frames(&self) -> usize {
        self.bases.num_frames()
    }

    pub fn num_bases(&self) -> usize {
        self.bases.num_bases()
    }

    pub fn len(&self) -> usize {
        self.statics.len() + self.rigids.len() + self.transients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_gate > 0.0) {
            return Err(Error::Invalid("alpha_gate must be positive".into()));
        }
        let k = self.num_bases();
        for r in &self.rigids {
            if r.weights.len() != k {
                return Err(Error::Invalid(format!("rigid has {} weights, expected {k}", r.weights.len())));
            }
            if !(r.beta > 0.0) {
                return Err(Error::Invalid("rigid beta must be positive".into()));
            }
        }
        if self.transients.iter().any(|g| !(g.beta > 0.0)) {
            return Err(Error::Invalid("transient beta must be positive".into()));
        }
        Ok(())
    }

    /// Rotated-canonical pose of rigid `i` at `frame`.
    pub fn rigid_pose(&self, i: usize, frame: usize) -> Result<(Vec3, Mat3)> {
        rigid_pose_at(&self.rigids[i], &self.bases, frame)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `R diag(exp(2 s)) Rᵀ`.
pub fn covariance_from(log_scale: &Vec3, quat: &[f64; 4]) -> Mat3 {
    let r = quat_to_matrix(quat);
    let s2 = Mat3::from_diagonal(&log_scale.map(|v| (2.0 * v).exp()));
    r * s2 * r.transpose()
}

/// World mean and rotation of a rigid Gaussian at an integer frame.
pub fn rigid_pose_at(g: &RigidGaussian, bases: &MotionBases, frame: usize) -> Result<(Vec3, Mat3)> {
    if frame >= bases.num_frames() {
        return Err(Error::Invalid(format!("frame {frame} outside 0..{}", bases.num_frames())));
    }
    let tf = bases.blend(&g.weights, frame)?;
    Ok((tf.apply(&g.core.mean), tf.rotation * g.core.rotation()))
}

/// `μ + v (t − γ)`.
pub fn transient_position_at(g: &TransientGaussian, t: f64) -> Vec3 {
    g.core.mean + g.velocity * (t - g.gamma)
}

/// `o · σ(α (β − |t − γ|))`.
#[inline]
pub fn gated_opacity(opacity: f64, alpha: f64, beta: f64, gamma: f64, t: f64) -> f64 {
    opacity * sigmoid(alpha * (beta - (t - gamma).abs()))
}

/// A dynamic Gaussian of either kind.
#[derive(Clone, Copy, Debug)]
pub enum Dynamic<'a> {
    Rigid(&'a RigidGaussian),
    Transient(&'a TransientGaussian),
}

/// Neighbouring frames used for forward/backward unit-frame differences,
/// one-sided at the sequence ends. Returns `(f0, f1)` pairs for the forward
/// and backward velocity, each meaning `mean(f1) − mean(f0)`.
pub fn velocity_stencil(frame: usize, num_frames: usize) -> Option<((usize, usize), (usize, usize))> {
    if num_frames < 2 {
        return None;
    }
    let last = num_frames - 1;
    let fwd = if frame < last { (frame, frame + 1) } else { (last - 1, last) };
    let bwd = if frame > 0 { (frame - 1, frame) } else { (0, 1) };
    Some((fwd, bwd))
}

/// Forward and backward world-space velocity at an integer frame.
pub fn gaussian_velocity_at(g: Dynamic<'_>, bases: &MotionBases, frame: usize) -> Result<(Vec3, Vec3)> {
    match g {
        Dynamic::Transient(tg) => Ok((tg.velocity, tg.velocity)),
        Dynamic::Rigid(rg) => {
            let Some((fwd, bwd)) = velocity_stencil(frame, bases.num_frames()) else {
                return Ok((Vec3::zeros(), Vec3::zeros()));
            };
            let m = |f: usize| rigid_pose_at(rg, bases, f).map(|(m, _)| m);
            Ok((m(fwd.1)? - m(fwd.0)?, m(bwd.1)? - m(bwd.0)?))
        }
    }
}

/// Outcome of one transition event.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TransitionReport {
    pub count: usize,
    /// Indices into the pre-transition rigid list that were converted, ascending.
    pub converted: Vec<usize>,
}

/// Converts every rigid Gaussian with `beta < threshold` into a transient
/// Gaussian that passes through the rigid trajectory at `round(γ)`.
/// Rigids whose pose cannot be evaluated (degenerate blend) stay rigid.
pub fn transition_rigid_to_transient(set: &mut GaussianSet, threshold: f64) -> TransitionReport {
    let num_frames = set.num_frames();
    let mut report = TransitionReport::default();
    if num_frames == 0 {
        return report;
    }
    let mut kept = Vec::with_capacity(set.rigids.len());
    let rigids = std::mem::take(&mut set.rigids);
    for (i, g) in rigids.into_iter().enumerate() {
        if g.beta >= threshold {
            kept.push(g);
            continue;
        }
        match convert_rigid(&g, &set.bases) {
            Ok(t) => {
                set.transients.push(t);
                report.converted.push(i);
            }
            Err(_) => kept.push(g),
        }
    }
    set.rigids = kept;
    report.count = report.converted.len();
    report
}

fn convert_rigid(g: &RigidGaussian, bases: &MotionBases) -> Result<TransientGaussian> {
    let last = bases.num_frames() - 1;
    let f = (g.gamma.round().max(0.0) as usize).min(last);
    let (mean_f, rot_f) = rigid_pose_at(g, bases, f)?;
    let m = |k: usize| rigid_pose_at(g, bases, k).map(|(m, _)| m);
    let velocity = if last == 0 {
        Vec3::zeros()
    } else if f == 0 {
        m(1)? - mean_f
    } else if f == last {
        mean_f - m(last - 1)?
    } else {
        (m(f + 1)? - m(f - 1)?) * 0.5
    };
    let mut core = g.core.clone();
    // anchor so the linear path passes through the rigid pose at frame f
    core.mean = mean_f - velocity * (f as f64 - g.gamma);
    core.quat = matrix_to_quat(&rot_f);
    Ok(TransientGaussian { core, velocity, beta: g.beta, gamma: g.gamma, source: g.source })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rigid(k: usize, beta: f64, gamma: f64) -> RigidGaussian {
        let mut w = vec![0.0; k];
        w[0] = 1.0;
        RigidGaussian {
            core: GaussianCore {
                mean: Vec3::new(0.5, -0.25, 3.0),
                log_scale: Vec3::new(-2.0, -2.5, -1.5),
                quat: [0.9, 0.1, -0.3, 0.2],
                opacity_logit: 0.3,
                color: Vec3::new(0.2, 0.5, 0.9),
            },
            weights: w,
            beta,
            gamma,
            source: 7,
        }
    }

    #[test]
    fn covariance_examples() {
        let c = covariance_from(&Vec3::zeros(), &[1.0, 0.0, 0.0, 0.0]);
        assert!((c - Mat3::identity()).abs().max() < 1e-15);
        let c = covariance_from(&Vec3::new(2f64.ln(), 0.0, 0.0), &[1.0, 0.0, 0.0, 0.0]);
        assert!((c - Mat3::from_diagonal(&Vec3::new(4.0, 1.0, 1.0))).abs().max() < 1e-12);
        let s: f64 = 0.37;
        let c = covariance_from(&Vec3::repeat(s.ln()), &[0.3, -0.5, 0.7, 0.1]);
        assert!((c - Mat3::identity() * s * s).abs().max() < 1e-12);
    }

    #[test]
    fn rigid_pose_examples() {
        let mut g = rigid(1, 5.0, 2.0);
        let bases = MotionBases::identity(1, 4);
        let (m, r) = rigid_pose_at(&g, &bases, 3).unwrap();
        assert!((m - g.core.mean).norm() < 1e-15);
        assert!((r - g.core.rotation()).abs().max() < 1e-12);

        // Σw < 0 flips both 6D columns, which orthonormalizes to a half turn about z
        let mut neg = g.clone();
        neg.weights = vec![-1.0];
        let (m, r) = rigid_pose_at(&neg, &bases, 3).unwrap();
        let half = Se3::rot_z(std::f64::consts::PI);
        assert!((r - half * g.core.rotation()).abs().max() < 1e-12);
        assert!((m - half * g.core.mean).norm() < 1e-12);

        g.weights = vec![1.0, 0.0];
        let mut bases = MotionBases::identity(2, 4);
        bases.set(0, 2, &Se3::from_translation(Vec3::new(1.0, 0.0, 0.0)));
        let (m, r) = rigid_pose_at(&g, &bases, 2).unwrap();
        assert!((m - (g.core.mean + Vec3::new(1.0, 0.0, 0.0))).norm() < 1e-15);
        assert!((r - g.core.rotation()).abs().max() < 1e-12);

        let tf = Se3::new(Se3::rot_z(0.7), Vec3::new(0.2, -1.0, 0.4));
        let mut one = MotionBases::identity(1, 3);
        one.set(0, 1, &tf);
        let mut two = MotionBases::identity(2, 3);
        two.set(0, 1, &tf);
        two.set(1, 1, &tf);
        let mut g1 = g.clone();
        g1.weights = vec![1.0];
        let h = std::f64::consts::FRAC_1_SQRT_2;
        g.weights = vec![h, h];
        let (m1, r1) = rigid_pose_at(&g1, &one, 1).unwrap();
        let (m2, r2) = rigid_pose_at(&g, &two, 1).unwrap();
        assert!((r1 - r2).abs().max() < 1e-12);
        // translation scales with Σw (= √2 here) under the additive blend
        let t_blend = tf.translation * (2.0 * h);
        assert!((m2 - (r1 * g.core.rotation().transpose() * g.core.mean + t_blend)).norm() < 1e-12);
        assert!((m1 - tf.apply(&g.core.mean)).norm() < 1e-12);
    }

    #[test]
    fn transient_examples() {
        let g = TransientGaussian {
            core: GaussianCore::isotropic(Vec3::zeros(), 0.1, 0.5, Vec3::zeros()),
            velocity: Vec3::new(1.0, 2.0, 3.0),
            beta: 1.0,
            gamma: 5.0,
            source: 0,
        };
        assert_eq!(transient_position_at(&g, 7.0), Vec3::new(2.0, 4.0, 6.0));
        assert_eq!(transient_position_at(&g, 5.0), Vec3::zeros());
        let still = TransientGaussian { velocity: Vec3::zeros(), ..g };
        assert_eq!(transient_position_at(&still, 123.0), Vec3::zeros());
    }

    #[test]
    fn gating_examples() {
        assert_eq!(gated_opacity(1.0, 3.0, 2.0, 10.0, 12.0), 0.5);
        assert!((gated_opacity(1.0, 3.0, 2.0, 10.0, 10.0) - 0.997_527_376_0).abs() < 1e-9);
        let tail = gated_opacity(1.0, 3.0, 2.0, 10.0, 30.0);
        assert!(tail > 0.0 && tail < 1e-23);
    }

    #[test]
    fn velocity_examples() {
        let bases = MotionBases::identity(1, 5);
        let tg = TransientGaussian {
            core: GaussianCore::isotropic(Vec3::zeros(), 0.1, 0.5, Vec3::zeros()),
            velocity: Vec3::x(),
            beta: 1.0,
            gamma: 0.0,
            source: 0,
        };
        assert_eq!(gaussian_velocity_at(Dynamic::Transient(&tg), &bases, 3).unwrap(), (Vec3::x(), Vec3::x()));
        let g = rigid(1, 3.0, 2.0);
        let (vf, vb) = gaussian_velocity_at(Dynamic::Rigid(&g), &bases, 2).unwrap();
        assert!(vf.norm() < 1e-15 && vb.norm() < 1e-15);

        let mut moving = MotionBases::identity(1, 5);
        for f in 0..5 {
            moving.set(0, f, &Se3::from_translation(Vec3::y() * f as f64));
        }
        for f in [0, 2, 4] {
            let (vf, vb) = gaussian_velocity_at(Dynamic::Rigid(&g), &moving, f).unwrap();
            assert!((vf - Vec3::y()).norm() < 1e-12 && (vb - Vec3::y()).norm() < 1e-12);
        }
    }

    #[test]
    fn transition_examples() {
        let mut set = GaussianSet::empty(1, 8);
        set.rigids.push(rigid(1, 3.0, 4.0));
        let before = set.clone();
        assert_eq!(transition_rigid_to_transient(&mut set, 2.0).count, 0);
        assert_eq!(set, before);

        set.rigids.push(rigid(1, 1.0, 4.0));
        let r = transition_rigid_to_transient(&mut set, 2.0);
        assert_eq!(r.count, 1);
        assert_eq!(r.converted, vec![1]);
        assert_eq!(set.rigids.len(), 1);
        let t = &set.transients[0];
        assert!(t.velocity.norm() < 1e-15);
        assert!((t.core.mean - before.rigids[0].core.mean).norm() < 1e-15);
        assert!((t.core.rotation() - before.rigids[0].core.rotation()).abs().max() < 1e-12);
        assert_eq!((t.beta, t.gamma, t.source), (1.0, 4.0, 7));

        assert_eq!(transition_rigid_to_transient(&mut set, 2.0).count, 0);
    }

    #[test]
    fn transition_follows_moving_trajectory() {
        let mut bases = MotionBases::identity(1, 9);
        for f in 0..9 {
            bases.set(0, f, &Se3::new(Se3::rot_z(0.05 * f as f64), Vec3::new(0.1 * f as f64, 0.0, 0.0)));
        }
        let mut set = GaussianSet { bases, ..GaussianSet::empty(1, 9) };
        let g = rigid(1, 1.0, 4.3);
        set.rigids.push(g.clone());
        transition_rigid_to_transient(&mut set, 2.0);
        let t = &set.transients[0];
        let (m4, r4) = rigid_pose_at(&g, &set.bases, 4).unwrap();
        assert!((transient_position_at(t, 4.0) - m4).norm() < 1e-12);
        assert!((t.core.rotation() - r4).abs().max() < 1e-12);
        let (m3, _) = rigid_pose_at(&g, &set.bases, 3).unwrap();
        let (m5, _) = rigid_pose_at(&g, &set.bases, 5).unwrap();
        assert!((t.velocity - (m5 - m3) / 2.0).norm() < 1e-12);
    }

    #[test]
    fn blend_backward_matches_finite_differences() {
        let mut bases = MotionBases::identity(2, 3);
        bases.set(0, 1, &Se3::new(Se3::rot_z(0.4), Vec3::new(0.3, -0.2, 0.1)));
        let at = bases.index(1, 1);
        bases.params[at] = [0.9, 0.2, -0.1, 0.1, 1.1, 0.3, -0.4, 0.2, 0.5];
        let w = vec![0.8, 0.6];
        let g_rot = Mat3::new(0.3, -0.2, 0.5, 0.1, 0.7, -0.6, 0.2, 0.4, -0.1);
        let g_tr = Vec3::new(0.5, -1.0, 0.25);
        let f = |b: &MotionBases, w: &[f64]| {
            let tf = b.blend(w, 1).unwrap();
            tf.rotation.component_mul(&g_rot).sum() + tf.translation.dot(&g_tr)
        };
        let (_, cache) = bases.blend_cached(&w, 1).unwrap();
        let mut gw = vec![0.0; 2];
        let mut gb = vec![[0.0; 9]; 2];
        cache.backward(&bases, &w, &g_rot, &g_tr, &mut gw, |j, g| gb[j] = g);
        let h = 1e-6;
        for j in 0..2 {
            let mut wp = w.clone();
            wp[j] += h;
            let mut wm = w.clone();
            wm[j] -= h;
            let fd = (f(&bases, &wp) - f(&bases, &wm)) / (2.0 * h);
            assert!((fd - gw[j]).abs() < 1e-7, "w{j}: {fd} vs {}", gw[j]);
            for p in 0..9 {
                let idx = bases.index(j, 1);
                let mut bp = bases.clone();
                bp.params[idx][p] += h;
                let mut bm = bases.clone();
                bm.params[idx][p] -= h;
                let fd = (f(&bp, &w) - f(&bm, &w)) / (2.0 * h);
                assert!((fd - gb[j][p]).abs() < 1e-7, "basis {j} p{p}: {fd} vs {}", gb[j][p]);
            }
        }
    }
}
