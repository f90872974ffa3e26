//! Per-frame supervision derived once before training.

use rayon::prelude::*;

use crate::dynmask::{compose_dynamic_masks, compute_motion_scores, occlusion_mask, DynMaskConfig};
use crate::error::Result;
use crate::geometry::{CameraFrame, Vec2, Vec3};
use crate::grid::{Grid, Mask};
use crate::harness::SceneDataset;
use crate::sceneflow::{backward_scene_flow, depth_is_valid, depth_mask, forward_scene_flow, scene_flow_mask, WARP_DEPTH_TOLERANCE};

/// Surface normals from central differences of the unprojected depth map,
/// facing the camera. Pixels at depth discontinuities or borders are invalid.
pub fn normals_from_depth(depth: &Grid, cam: &CameraFrame) -> (Grid, Mask) {
    let (w, h) = (depth.width, depth.height);
    let mut normals = Grid::zeros(w, h, 3);
    let mut valid = Mask::new(w, h, false);
    let point = |x: usize, y: usize| -> Option<Vec3> {
        let d = depth.get(x, y, 0);
        depth_is_valid(d).then(|| cam.unproject(&Vec2::new(x as f64, y as f64), d).ok()).flatten()
    };
    let center = cam.center();
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let d0 = depth.get(x, y, 0);
            let nb = [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)];
            if !depth_is_valid(d0) || nb.iter().any(|&(a, b)| (depth.get(a, b, 0) - d0).abs() > WARP_DEPTH_TOLERANCE * d0) {
                continue;
            }
            let (Some(l), Some(r), Some(u), Some(d), Some(p)) =
                (point(x - 1, y), point(x + 1, y), point(x, y - 1), point(x, y + 1), point(x, y))
            else {
                continue;
            };
            let n = (r - l).cross(&(d - u));
            let len = n.norm();
            if len < 1e-15 {
                continue;
            }
            let mut n = n / len;
            if n.dot(&(center - p)) < 0.0 {
                n = -n;
            }
            normals.pixel_mut(x, y).copy_from_slice(n.as_slice());
            valid.set(x, y, true);
        }
    }
    (normals, valid)
}

/// Scene-flow supervision of an interior frame.
#[derive(Clone, Debug)]
pub struct FlowTarget {
    pub v_fwd: Grid,
    pub v_bwd: Grid,
    pub mask: Mask,
}

#[derive(Clone, Debug)]
pub struct FrameTargets {
    pub dyn_mask: Mask,
    /// `dyn_mask` as a 0/1 map.
    pub dyn_map: Grid,
    /// Pixels at least one pixel away from any dynamic pixel.
    pub static_region: Mask,
    pub depth_valid: Mask,
    pub normals: Grid,
    pub normal_valid: Mask,
    pub flow: Option<FlowTarget>,
}

/// Dynamic masks from the dataset when every frame carries one, otherwise
/// from the object-wise motion pipeline.
pub fn dynamic_masks(ds: &SceneDataset, cfg: &DynMaskConfig) -> Result<Vec<Mask>> {
    if ds.frames.iter().all(|f| f.dyn_mask.is_some()) {
        return Ok(ds.frames.iter().map(|f| f.dyn_mask.clone().expect("checked")).collect());
    }
    let table = compute_motion_scores(&ds.flow_fields(), &ds.object_masks(), cfg)?;
    Ok(compose_dynamic_masks(&table, &ds.object_masks()))
}

pub fn frame_targets(ds: &SceneDataset, dyn_masks: &[Mask]) -> Vec<FrameTargets> {
    let n = ds.num_frames();
    (0..n)
        .into_par_iter()
        .map(|t| {
            let f = &ds.frames[t];
            let dyn_mask = dyn_masks[t].clone();
            let dyn_map = Grid::from_fn(ds.width, ds.height, 1, |x, y, _| dyn_mask.get(x, y) as u8 as f64);
            let static_region = dyn_mask.dilate(1).not();
            let depth_valid = depth_mask(&f.depth);
            let (normals, normal_valid) = normals_from_depth(&f.depth, &f.camera);
            let flow = (t > 0 && t + 1 < n).then(|| {
                let (prev, next) = (&ds.frames[t - 1], &ds.frames[t + 1]);
                let sf = forward_scene_flow(&f.depth, &next.depth, &f.flow_fwd, &f.camera, &next.camera);
                let sb = backward_scene_flow(&f.depth, &prev.depth, &f.flow_bwd, &f.camera, &prev.camera);
                let nonocc = occlusion_mask(&f.flow_fwd, &next.flow_bwd)
                    .not()
                    .and(&occlusion_mask(&f.flow_bwd, &prev.flow_fwd).not());
                let warped = sf.warped_valid.and(&sb.warped_valid);
                let mask = scene_flow_mask(&dyn_mask, &depth_valid, &warped, &nonocc);
                FlowTarget { v_fwd: sf.v, v_bwd: sb.v, mask }
            });
            FrameTargets { dyn_mask, dyn_map, static_region, depth_valid, normals, normal_valid, flow }
        })
        .collect()
}
