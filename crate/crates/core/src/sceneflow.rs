//! Lifting optical flow and depth to world-space scene flow.

use crate::geometry::{CameraFrame, Vec2};
use crate::grid::{Grid, Mask};

pub const MIN_VALID_DEPTH: f64 = 1e-4;
pub const MAX_VALID_DEPTH: f64 = 1e4;
/// Relative depth spread tolerated among the four bilinear taps of a warp.
pub const WARP_DEPTH_TOLERANCE: f64 = 0.05;

pub fn depth_is_valid(d: f64) -> bool {
    d.is_finite() && d > MIN_VALID_DEPTH && d < MAX_VALID_DEPTH
}

pub fn depth_mask(depth: &Grid) -> Mask {
    Mask::from_fn(depth.width, depth.height, |x, y| depth_is_valid(depth.get(x, y, 0)))
}

/// One direction of scene flow with the masks it depends on.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneFlow {
    /// World-space displacement (3 channels).
    pub v: Grid,
    /// Source depth is valid.
    pub depth_valid: Mask,
    /// Warped sample lands inside the image on four valid, mutually
    /// consistent depth taps.
    pub warped_valid: Mask,
}

impl SceneFlow {
    pub fn valid(&self) -> Mask {
        self.depth_valid.and(&self.warped_valid)
    }
}

/// Samples the unprojected world points of `other` at `p + flow(p)`.
fn warp_points(other_depth: &Grid, other_cam: &CameraFrame, flow: &Grid) -> (Grid, Mask) {
    let (points, valid) = other_cam.unproject_map(other_depth, depth_is_valid);
    let (w, h) = (flow.width, flow.height);
    let mut out = Grid::zeros(w, h, 3);
    let mut ok = Mask::new(w, h, false);
    for y in 0..h {
        for x in 0..w {
            let f = flow.pixel(x, y);
            let Some((taps, _)) = points.bilinear_taps(x as f64 + f[0], y as f64 + f[1]) else { continue };
            let used = taps.iter().filter(|(_, wt)| *wt > 0.0);
            if used.clone().any(|(i, _)| !valid.data[*i]) {
                continue;
            }
            let depths: Vec<f64> = used.map(|(i, _)| other_depth.data[*i]).collect();
            let lo = depths.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = depths.iter().cloned().fold(0.0, f64::max);
            if hi - lo > WARP_DEPTH_TOLERANCE * lo {
                continue;
            }
            let mut acc = [0.0; 3];
            for (i, wt) in taps {
                for c in 0..3 {
                    acc[c] += wt * points.data[i * 3 + c];
                }
            }
            out.pixel_mut(x, y).copy_from_slice(&acc);
            ok.set(x, y, true);
        }
    }
    (out, ok)
}

fn lifted(depth: &Grid, cam: &CameraFrame, x: usize, y: usize) -> Option<crate::geometry::Vec3> {
    let d = depth.get(x, y, 0);
    if !depth_is_valid(d) {
        return None;
    }
    cam.unproject(&Vec2::new(x as f64, y as f64), d).ok()
}

/// `v_fwd(p) = W(π⁻¹_{t+1}(D_{t+1}), F_fwd)(p) − π⁻¹_t(p, D_t(p))`.
pub fn forward_scene_flow(d_t: &Grid, d_next: &Grid, f_fwd: &Grid, cam_t: &CameraFrame, cam_next: &CameraFrame) -> SceneFlow {
    let (warped, warped_valid) = warp_points(d_next, cam_next, f_fwd);
    let depth_valid = depth_mask(d_t);
    let mut v = Grid::zeros(d_t.width, d_t.height, 3);
    for y in 0..d_t.height {
        for x in 0..d_t.width {
            if !warped_valid.get(x, y) {
                continue;
            }
            if let Some(p) = lifted(d_t, cam_t, x, y) {
                let q = warped.pixel(x, y);
                v.pixel_mut(x, y).copy_from_slice(&[q[0] - p.x, q[1] - p.y, q[2] - p.z]);
            }
        }
    }
    SceneFlow { v, depth_valid, warped_valid }
}

/// `v_bwd(p) = π⁻¹_t(p, D_t(p)) − W(π⁻¹_{t−1}(D_{t−1}), F_bwd)(p)`.
pub fn backward_scene_flow(d_t: &Grid, d_prev: &Grid, f_bwd: &Grid, cam_t: &CameraFrame, cam_prev: &CameraFrame) -> SceneFlow {
    let mut sf = forward_scene_flow(d_t, d_prev, f_bwd, cam_t, cam_prev);
    sf.v.scale_in_place(-1.0);
    sf
}

/// Pixelwise intersection of the four supervision masks.
pub fn scene_flow_mask(dyn_mask: &Mask, depth_valid: &Mask, warped_depth_valid: &Mask, flow_nonoccluded: &Mask) -> Mask {
    dyn_mask.and(depth_valid).and(warped_depth_valid).and(flow_nonoccluded)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraIntrinsics, Se3, Vec3};
    use proptest::prelude::*;

    fn cam(w2c: Se3) -> CameraFrame {
        CameraFrame::new(CameraIntrinsics { fx: 40.0, fy: 40.0, cx: 15.5, cy: 11.5, width: 32, height: 24 }, w2c)
    }

    /// Depth of the fronto-parallel plane z = `plane` (world) seen by `c`,
    /// whose rotation is the identity.
    fn plane_depth(c: &CameraFrame, plane: f64) -> Grid {
        Grid::filled(32, 24, 1, plane + c.w2c.translation.z)
    }

    /// Exact flow induced by a world-space translation `u` of plane points
    /// between cameras `a` and `b` (both unrotated).
    fn induced_flow(a: &CameraFrame, b: &CameraFrame, depth: &Grid, u: Vec3) -> Grid {
        let mut f = Grid::zeros(32, 24, 2);
        for y in 0..24 {
            for x in 0..32 {
                let p = a.unproject(&Vec2::new(x as f64, y as f64), depth.get(x, y, 0)).unwrap();
                let (q, _) = b.project(&(p + u)).unwrap();
                f.pixel_mut(x, y).copy_from_slice(&[q.x - x as f64, q.y - y as f64]);
            }
        }
        f
    }

    #[test]
    fn static_scene_static_camera() {
        let c = cam(Se3::identity());
        let d = plane_depth(&c, 5.0);
        let sf = forward_scene_flow(&d, &d, &Grid::zeros(32, 24, 2), &c, &c);
        assert_eq!(sf.valid().count(), 32 * 24);
        assert!(sf.v.data.iter().all(|v| v.abs() < 1e-12));
        let sb = backward_scene_flow(&d, &d, &Grid::zeros(32, 24, 2), &c, &c);
        assert!(sb.v.data.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn moving_camera_static_world() {
        let a = cam(Se3::identity());
        let b = cam(Se3::from_translation(Vec3::new(-0.05, 0.02, -0.1)));
        let (da, db) = (plane_depth(&a, 5.0), plane_depth(&b, 5.0));
        let f = induced_flow(&a, &b, &da, Vec3::zeros());
        let sf = forward_scene_flow(&da, &db, &f, &a, &b);
        assert!(sf.valid().count() > 400);
        let valid = sf.valid();
        for i in 0..32 * 24 {
            if valid.data[i] {
                for c in 0..3 {
                    assert!(sf.v.data[i * 3 + c].abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn translating_plane() {
        let c = cam(Se3::identity());
        let u = Vec3::new(0.1, 0.0, 0.0);
        let d = plane_depth(&c, 5.0);
        let f = induced_flow(&c, &c, &d, u);
        let sf = forward_scene_flow(&d, &d, &f, &c, &c);
        let valid = sf.valid();
        assert!(valid.count() > 300);
        let fb = induced_flow(&c, &c, &d, -u);
        let sb = backward_scene_flow(&d, &d, &fb, &c, &c);
        for i in 0..32 * 24 {
            if valid.data[i] {
                assert!((sf.v.data[i * 3] - 0.1).abs() < 1e-9);
                assert!(sf.v.data[i * 3 + 1].abs() < 1e-9);
            }
            if sb.valid().data[i] {
                assert!((sb.v.data[i * 3] - 0.1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn invalid_depth_is_masked() {
        let c = cam(Se3::identity());
        let mut d = plane_depth(&c, 5.0);
        d.set(3, 3, 0, 0.0);
        d.set(4, 3, 0, f64::NAN);
        let sf = forward_scene_flow(&d, &d, &Grid::zeros(32, 24, 2), &c, &c);
        assert!(!sf.depth_valid.get(3, 3) && !sf.depth_valid.get(4, 3));
        assert!(!sf.warped_valid.get(3, 3));
        assert!(sf.valid().get(10, 10));
    }

    #[test]
    fn mask_examples() {
        let ones = Mask::new(4, 3, true);
        let zeros = Mask::new(4, 3, false);
        assert_eq!(scene_flow_mask(&ones, &ones, &ones, &ones), ones);
        assert_eq!(scene_flow_mask(&ones, &zeros, &ones, &ones), zeros);
    }

    proptest! {
        #[test]
        fn mask_is_subset(bits in proptest::collection::vec(any::<bool>(), 48)) {
            let m = |k: usize| Mask { width: 4, height: 3, data: bits[k * 12..k * 12 + 12].to_vec() };
            let out = scene_flow_mask(&m(0), &m(1), &m(2), &m(3));
            for k in 0..4 {
                let mk = m(k);
                for (o, i) in out.data.iter().zip(&mk.data) {
                    prop_assert!(!*o || *i);
                }
            }
            prop_assert_eq!(scene_flow_mask(&m(3), &m(2), &m(1), &m(0)), out);
        }
    }
}
