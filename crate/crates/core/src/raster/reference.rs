use super::tiles::composite;
use super::{ch, depth_order, RenderOutputs, Splat};
use crate::geometry::CameraFrame;

/// Brute-force compositor: every pixel visits every splat in depth order,
/// with no tiling, support cutoff or early termination.
pub fn rasterize_reference(splats: &[Splat], cam: &CameraFrame) -> RenderOutputs {
    let (w, h) = (cam.width(), cam.height());
    let order = depth_order(splats);
    let mut out = RenderOutputs::empty(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; ch::N];
            let t = composite(x as f64, y as f64, &order, splats, false, &mut acc, None);
            out.channels.pixel_mut(x, y).copy_from_slice(&acc);
            out.transmittance.set(x, y, 0, t);
        }
    }
    out
}
