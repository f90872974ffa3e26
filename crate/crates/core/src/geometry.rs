//! Pinhole cameras, rigid transforms, the 6D rotation parameterization and
//! the EWA screen-space covariance.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Mask};

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;
pub type Mat2 = Matrix2<f64>;
pub type Mat3 = Matrix3<f64>;

/// Points closer than this to the camera plane are rejected.
pub const MIN_DEPTH: f64 = 1e-8;
/// Low-pass dilation added to every projected covariance, in px².
pub const COV2D_DILATION: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cy >= 0.0
            && self.cx < self.width as f64
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("bad intrinsics {self:?}")))
        }
    }
}

/// A rigid transform `x ↦ R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Se3 {
    pub rotation: Mat3,
    pub translation: Vec3,
}

/// World-to-camera transform of a frame.
pub type CameraExtrinsics = Se3;

impl Default for Se3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Se3 {
    pub fn identity() -> Self {
        Self { rotation: Mat3::identity(), translation: Vec3::zeros() }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self { rotation: Mat3::identity(), translation: t }
    }

    pub fn rot_z(angle: f64) -> Mat3 {
        let (s, c) = angle.sin_cos();
        Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    }

    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`
    pub fn compose(&self, other: &Se3) -> Se3 {
        Se3 {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Se3 {
        let rt = self.rotation.transpose();
        Se3 { rotation: rt, translation: -(rt * self.translation) }
    }

    /// Orthonormality and determinant check.
    pub fn is_valid(&self, tol: f64) -> bool {
        let r = &self.rotation;
        (r.transpose() * r - Mat3::identity()).abs().max() <= tol && (r.determinant() - 1.0).abs() <= tol
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
            0.0, 0.0, 0.0, 1.0,
        ]
    }

    pub fn from_row_major(m: &[f64; 16]) -> Self {
        Se3 {
            rotation: Mat3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]),
            translation: Vec3::new(m[3], m[7], m[11]),
        }
    }
}

/// Intrinsics plus world-to-camera extrinsics for one frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraFrame {
    pub intrinsics: CameraIntrinsics,
    pub w2c: CameraExtrinsics,
}

impl CameraFrame {
    pub fn new(intrinsics: CameraIntrinsics, w2c: Se3) -> Self {
        Self { intrinsics, w2c }
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.w2c.rotation.transpose() * self.w2c.translation)
    }

    #[inline]
    pub fn to_camera(&self, p_world: &Vec3) -> Vec3 {
        self.w2c.apply(p_world)
    }

    /// Pinhole projection of a camera-frame point.
    #[inline]
    pub fn project_camera(&self, pc: &Vec3) -> Result<(Vec2, f64)> {
        if pc.z <= MIN_DEPTH {
            return Err(Error::NonPositiveDepth(pc.z));
        }
        let k = &self.intrinsics;
        Ok((Vec2::new(k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy), pc.z))
    }

    /// World point to (pixel, depth).
    pub fn project(&self, p_world: &Vec3) -> Result<(Vec2, f64)> {
        self.project_camera(&self.to_camera(p_world))
    }

    /// (pixel, depth) to world point.
    pub fn unproject(&self, pixel: &Vec2, depth: f64) -> Result<Vec3> {
        if depth <= 0.0 || depth.is_nan() {
            return Err(Error::NonPositiveDepth(depth));
        }
        let k = &self.intrinsics;
        let pc = Vec3::new((pixel.x - k.cx) / k.fx * depth, (pixel.y - k.cy) / k.fy * depth, depth);
        Ok(self.w2c.rotation.transpose() * (pc - self.w2c.translation))
    }

    /// Unprojects every pixel of a depth map into a 3-channel world-point map.
    /// Pixels whose depth fails `valid` are written as zeros and flagged false.
    pub fn unproject_map(&self, depth: &Grid, valid: impl Fn(f64) -> bool) -> (Grid, Mask) {
        let mut out = Grid::zeros(depth.width, depth.height, 3);
        let mut mask = Mask::new(depth.width, depth.height, false);
        for y in 0..depth.height {
            for x in 0..depth.width {
                let d = depth.get(x, y, 0);
                if !valid(d) {
                    continue;
                }
                if let Ok(p) = self.unproject(&Vec2::new(x as f64, y as f64), d) {
                    out.pixel_mut(x, y).copy_from_slice(p.as_slice());
                    mask.set(x, y, true);
                }
            }
        }
        (out, mask)
    }
}

/// Samples `field` at `p + flow(p)` bilinearly. Out-of-image samples are
/// zero and flagged invalid in the returned mask.
pub fn warp(field: &Grid, flow: &Grid) -> (Grid, Mask) {
    assert!(field.same_extent(flow) && flow.channels == 2, "warp: shape mismatch");
    let mut out = Grid::zeros(field.width, field.height, field.channels);
    let mut valid = Mask::new(field.width, field.height, false);
    for y in 0..field.height {
        for x in 0..field.width {
            let f = flow.pixel(x, y);
            if let Some(v) = field.sample_bilinear(x as f64 + f[0], y as f64 + f[1]) {
                out.pixel_mut(x, y).copy_from_slice(&v);
                valid.set(x, y, true);
            }
        }
    }
    (out, valid)
}

/// Two unnormalized columns of a rotation matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation6D {
    pub a1: Vec3,
    pub a2: Vec3,
}

/// Intermediates of the Gram–Schmidt map kept for the backward pass.
#[derive(Clone, Copy, Debug)]
pub struct Rot6dCache {
    b1: Vec3,
    b2: Vec3,
    a2: Vec3,
    n1: f64,
    n2: f64,
}

impl Rotation6D {
    pub fn new(a1: Vec3, a2: Vec3) -> Self {
        Self { a1, a2 }
    }

    pub fn from_matrix(r: &Mat3) -> Self {
        Self { a1: r.column(0).into_owned(), a2: r.column(1).into_owned() }
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self { a1: Vec3::new(s[0], s[1], s[2]), a2: Vec3::new(s[3], s[4], s[5]) }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.a1.x, self.a1.y, self.a1.z, self.a2.x, self.a2.y, self.a2.z]
    }

    pub fn to_matrix(&self) -> Result<Mat3> {
        self.to_matrix_cached().map(|(m, _)| m)
    }

    pub fn to_matrix_cached(&self) -> Result<(Mat3, Rot6dCache)> {
        let n1 = self.a1.norm();
        if !(n1 > 1e-12) {
            return Err(Error::DegenerateRotation6D);
        }
        let b1 = self.a1 / n1;
        let u2 = self.a2 - b1 * b1.dot(&self.a2);
        let n2 = u2.norm();
        if !(n2 > 1e-12) {
            return Err(Error::DegenerateRotation6D);
        }
        let b2 = u2 / n2;
        let b3 = b1.cross(&b2);
        Ok((Mat3::from_columns(&[b1, b2, b3]), Rot6dCache { b1, b2, a2: self.a2, n1, n2 }))
    }

    /// Vector-Jacobian product: gradient w.r.t. the output matrix to
    /// gradients w.r.t. `(a1, a2)`.
    pub fn vjp(cache: &Rot6dCache, g: &Mat3) -> (Vec3, Vec3) {
        let Rot6dCache { b1, b2, a2, n1, n2 } = *cache;
        let gb3: Vec3 = g.column(2).into_owned();
        let mut gb1: Vec3 = g.column(0).into_owned() + b2.cross(&gb3);
        let gb2: Vec3 = g.column(1).into_owned() + gb3.cross(&b1);
        let gu2 = (gb2 - b2 * b2.dot(&gb2)) / n2;
        let b1gu2 = b1.dot(&gu2);
        let ga2 = gu2 - b1 * b1gu2;
        gb1 -= a2 * b1gu2 + gu2 * b1.dot(&a2);
        let ga1 = (gb1 - b1 * b1.dot(&gb1)) / n1;
        (ga1, ga2)
    }
}

/// Interpolates two rigid transforms by blending the 6D rotation
/// representation and the translation linearly, then re-orthonormalizing.
pub fn interpolate_se3(a: &Se3, b: &Se3, s: f64) -> Result<Se3> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Invalid(format!("interpolation parameter {s} outside [0,1]")));
    }
    if s == 0.0 {
        return Ok(*a);
    }
    if s == 1.0 {
        return Ok(*b);
    }
    let ra = Rotation6D::from_matrix(&a.rotation);
    let rb = Rotation6D::from_matrix(&b.rotation);
    let blend = Rotation6D::new(ra.a1 * (1.0 - s) + rb.a1 * s, ra.a2 * (1.0 - s) + rb.a2 * s);
    Ok(Se3 {
        rotation: blend.to_matrix()?,
        translation: a.translation * (1.0 - s) + b.translation * s,
    })
}

/// Pinhole Jacobian ∂pixel/∂(camera point).
#[inline]
pub fn pinhole_jacobian(k: &CameraIntrinsics, pc: &Vec3) -> Matrix2x3<f64> {
    let iz = 1.0 / pc.z;
    Matrix2x3::new(
        k.fx * iz, 0.0, -k.fx * pc.x * iz * iz,
        0.0, k.fy * iz, -k.fy * pc.y * iz * iz,
    )
}

/// Screen-space covariance `J W Σ Wᵀ Jᵀ + 0.3·I` of a world covariance at
/// camera-frame mean `mean_cam`.
pub fn ewa_project_covariance(cov: &Mat3, cam: &CameraFrame, mean_cam: &Vec3) -> Result<Mat2> {
    if mean_cam.z <= MIN_DEPTH {
        return Err(Error::NonPositiveDepth(mean_cam.z));
    }
    let j = pinhole_jacobian(&cam.intrinsics, mean_cam);
    let p = j * cam.w2c.rotation;
    let mut out = p * cov * p.transpose();
    out[(0, 0)] += COV2D_DILATION;
    out[(1, 1)] += COV2D_DILATION;
    // keep exact symmetry
    let off = 0.5 * (out[(0, 1)] + out[(1, 0)]);
    out[(0, 1)] = off;
    out[(1, 0)] = off;
    Ok(out)
}

/// Rotation matrix of a (not necessarily unit) quaternion `[w, x, y, z]`,
/// normalized first.
pub fn quat_to_matrix(q: &[f64; 4]) -> Mat3 {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
        2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
        2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y),
    )
}

/// Gradient of `⟨g, quat_to_matrix(q)⟩` with respect to the raw quaternion.
pub fn quat_to_matrix_vjp(q: &[f64; 4], g: &Mat3) -> [f64; 4] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    let g = |r: usize, c: usize| g[(r, c)];
    let dw = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let dx = 2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0)
        + w * g(2, 1)
        - 2.0 * x * g(2, 2));
    let dy = 2.0 * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0)
        + z * g(2, 1)
        - 2.0 * y * g(2, 2));
    let dz = 2.0 * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1)
        + y * g(1, 2)
        + x * g(2, 0)
        + y * g(2, 1));
    let gh = [dw, dx, dy, dz];
    let qh = [w, x, y, z];
    let dot: f64 = gh.iter().zip(&qh).map(|(a, b)| a * b).sum();
    [
        (gh[0] - qh[0] * dot) / n,
        (gh[1] - qh[1] * dot) / n,
        (gh[2] - qh[2] * dot) / n,
        (gh[3] - qh[3] * dot) / n,
    ]
}

/// Unit quaternion `[w, x, y, z]` of a rotation matrix.
pub fn matrix_to_quat(r: &Mat3) -> [f64; 4] {
    let rot = nalgebra::Rotation3::from_matrix_unchecked(*r);
    let q = nalgebra::UnitQuaternion::from_rotation_matrix(&rot);
    let mut out = [q.w, q.i, q.j, q.k];
    if out[0] < 0.0 {
        out.iter_mut().for_each(|v| *v = -*v);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn cam100() -> CameraFrame {
        CameraFrame::new(
            CameraIntrinsics { fx: 100.0, fy: 100.0, cx: 50.0, cy: 50.0, width: 100, height: 100 },
            Se3::identity(),
        )
    }

    #[test]
    fn project_examples() {
        let cam = cam100();
        let (px, d) = cam.project(&Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!((px.x, px.y, d), (50.0, 50.0, 1.0));
        let (px, d) = cam.project(&Vec3::new(1.0, 0.0, 2.0)).unwrap();
        assert_eq!((px.x, px.y, d), (100.0, 50.0, 2.0));
        assert!(matches!(cam.project(&Vec3::new(0.0, 0.0, -1.0)), Err(Error::NonPositiveDepth(_))));
    }

    #[test]
    fn unproject_examples() {
        let cam = cam100();
        let p = cam.unproject(&Vec2::new(50.0, 50.0), 1.0).unwrap();
        assert!((p - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-15);
        let p = cam.unproject(&Vec2::new(100.0, 50.0), 2.0).unwrap();
        assert!((p - Vec3::new(1.0, 0.0, 2.0)).norm() < 1e-15);
        assert!(cam.unproject(&Vec2::new(1.0, 1.0), 0.0).is_err());
    }

    #[test]
    fn unproject_round_trip_random() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let w2c = Se3::new(
            nalgebra::Rotation3::from_euler_angles(0.2, -0.4, 1.1).into_inner(),
            Vec3::new(0.3, -1.0, 2.0),
        );
        let cam = CameraFrame::new(cam100().intrinsics, w2c);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let px = Vec2::new(rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0));
            let d = rng.gen_range(1e-3..50.0);
            let (p2, d2) = cam.project(&cam.unproject(&px, d).unwrap()).unwrap();
            worst = worst.max((p2 - px).norm()).max((d2 - d).abs());
        }
        assert!(worst <= 1e-9, "{worst}");
    }

    #[test]
    fn warp_examples() {
        let field = Grid::from_fn(8, 6, 1, |x, _, _| x as f64);
        let zero = Grid::zeros(8, 6, 2);
        let (out, valid) = warp(&field, &zero);
        assert_eq!(out, field);
        assert_eq!(valid.count(), 48);

        let shift = Grid::from_fn(8, 6, 2, |_, _, c| if c == 0 { 1.0 } else { 0.0 });
        let (out, valid) = warp(&field, &shift);
        for y in 0..6 {
            for x in 0..7 {
                assert!(valid.get(x, y));
                assert!((out.get(x, y, 0) - (x as f64 + 1.0)).abs() < 1e-12);
            }
            assert!(!valid.get(7, y));
        }

        let away = Grid::filled(8, 6, 2, 100.0);
        let (_, valid) = warp(&field, &away);
        assert_eq!(valid.count(), 0);
    }

    #[test]
    fn rot6d_examples() {
        let r = Rotation6D::new(Vec3::x(), Vec3::y()).to_matrix().unwrap();
        assert!((r - Mat3::identity()).abs().max() < 1e-15);
        let r = Rotation6D::new(Vec3::x(), Vec3::new(1.0, 1.0, 0.0)).to_matrix().unwrap();
        assert!((r - Mat3::identity()).abs().max() < 1e-15);
        assert!(matches!(
            Rotation6D::new(Vec3::zeros(), Vec3::y()).to_matrix(),
            Err(Error::DegenerateRotation6D)
        ));
        assert!(Rotation6D::new(Vec3::x(), Vec3::x() * 3.0).to_matrix().is_err());
    }

    #[test]
    fn rot6d_vjp_matches_finite_differences() {
        let r = Rotation6D::new(Vec3::new(0.3, -1.2, 0.5), Vec3::new(0.9, 0.4, -0.7));
        let g = Mat3::new(0.1, -0.4, 0.7, 0.2, 0.5, -0.3, -0.8, 0.6, 0.25);
        let f = |r: &Rotation6D| r.to_matrix().unwrap().component_mul(&g).sum();
        let (_, cache) = r.to_matrix_cached().unwrap();
        let (ga1, ga2) = Rotation6D::vjp(&cache, &g);
        let analytic = [ga1.x, ga1.y, ga1.z, ga2.x, ga2.y, ga2.z];
        let base = r.to_array();
        for i in 0..6 {
            let h = 1e-6;
            let mut p = base;
            p[i] += h;
            let mut m = base;
            m[i] -= h;
            let fd = (f(&Rotation6D::from_slice(&p)) - f(&Rotation6D::from_slice(&m))) / (2.0 * h);
            assert!(close(fd, analytic[i], 1e-7), "{i}: {fd} vs {}", analytic[i]);
        }
    }

    #[test]
    fn quat_vjp_matches_finite_differences() {
        let q = [0.8, -0.3, 0.5, 0.2];
        let g = Mat3::new(0.1, -0.4, 0.7, 0.2, 0.5, -0.3, -0.8, 0.6, 0.25);
        let an = quat_to_matrix_vjp(&q, &g);
        for i in 0..4 {
            let h = 1e-6;
            let mut p = q;
            p[i] += h;
            let mut m = q;
            m[i] -= h;
            let fd = (quat_to_matrix(&p).component_mul(&g).sum() - quat_to_matrix(&m).component_mul(&g).sum())
                / (2.0 * h);
            assert!(close(fd, an[i], 1e-7), "{i}: {fd} vs {}", an[i]);
        }
    }

    #[test]
    fn quat_matrix_round_trip() {
        let r = nalgebra::Rotation3::from_euler_angles(0.3, 1.0, -2.0).into_inner();
        let q = matrix_to_quat(&r);
        assert!((quat_to_matrix(&q) - r).abs().max() < 1e-12);
    }

    #[test]
    fn interpolate_examples() {
        let a = Se3::new(Se3::rot_z(0.3), Vec3::new(1.0, 2.0, 3.0));
        let b = Se3::new(Se3::rot_z(1.3), Vec3::new(-1.0, 0.0, 5.0));
        let s0 = interpolate_se3(&a, &b, 0.0).unwrap();
        assert!((s0.rotation - a.rotation).abs().max() <= 1e-12);
        assert_eq!(s0.translation, a.translation);

        let a = Se3::identity();
        let b = Se3::from_translation(Vec3::new(2.0, 0.0, 0.0));
        let mid = interpolate_se3(&a, &b, 0.5).unwrap();
        assert_eq!(mid.translation, Vec3::new(1.0, 0.0, 0.0));

        // Planar 6D blend bisects the angle; oracle is the axis-angle rotation.
        let a = Se3::new(Se3::rot_z(0.0), Vec3::zeros());
        let b = Se3::new(Se3::rot_z(std::f64::consts::FRAC_PI_2), Vec3::zeros());
        let mid = interpolate_se3(&a, &b, 0.5).unwrap();
        let oracle =
            nalgebra::Rotation3::from_axis_angle(&Vec3::z_axis(), std::f64::consts::FRAC_PI_4).into_inner();
        assert!((mid.rotation - oracle).abs().max() <= 1e-9);

        assert!(interpolate_se3(&a, &b, 1.5).is_err());
    }

    #[test]
    fn ewa_examples() {
        let f = 80.0;
        let cam = CameraFrame::new(
            CameraIntrinsics { fx: f, fy: f, cx: 10.0, cy: 10.0, width: 20, height: 20 },
            Se3::identity(),
        );
        let sigma = 0.05;
        let z = 4.0;
        let out = ewa_project_covariance(&(Mat3::identity() * sigma * sigma), &cam, &Vec3::new(0.0, 0.0, z))
            .unwrap();
        let expect = f * f * sigma * sigma / (z * z) + 0.3;
        assert!(close(out[(0, 0)], expect, 1e-12) && close(out[(1, 1)], expect, 1e-12));
        assert!(out[(0, 1)].abs() < 1e-15);

        let out = ewa_project_covariance(&Mat3::zeros(), &cam, &Vec3::new(0.3, 0.1, 2.0)).unwrap();
        assert!((out - Mat2::identity() * 0.3).abs().max() < 1e-15);

        let cov = Mat3::new(0.2, 0.05, 0.01, 0.05, 0.1, 0.02, 0.01, 0.02, 0.3);
        let a = ewa_project_covariance(&cov, &cam, &Vec3::new(0.0, 0.0, 2.0)).unwrap() - Mat2::identity() * 0.3;
        let b = ewa_project_covariance(&cov, &cam, &Vec3::new(0.0, 0.0, 4.0)).unwrap() - Mat2::identity() * 0.3;
        assert!((a / 4.0 - b).abs().max() < 1e-12);

        assert!(ewa_project_covariance(&cov, &cam, &Vec3::new(0.0, 0.0, 0.0)).is_err());
    }
}
