use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SceneDataset;
use crate::error::{Error, Result};
use crate::grid::Mask;
use crate::losses::{psnr, ssim};
use crate::primitives::GaussianSet;
use crate::raster::render;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame: usize,
    pub psnr: f64,
    pub ssim: f64,
    /// IoU of the rendered dynamic mask (> 0.5) against the true labels.
    pub mask_iou: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: Vec<FrameMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_mask_iou: Option<f64>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Renders each listed frame from its own camera and timestamp.
pub fn evaluate(set: &GaussianSet, ds: &SceneDataset, frames: &[usize]) -> Result<EvalReport> {
    if let Some(&bad) = frames.iter().find(|&&t| t >= ds.num_frames() || t >= set.num_frames()) {
        return Err(Error::Invalid(format!("frame {bad} out of range")));
    }
    let per: Vec<FrameMetrics> = frames
        .par_iter()
        .map(|&t| {
            let out = render(set, &ds.frames[t].camera, t, None)?;
            let color = out.color();
            let gt = &ds.frames[t].image;
            let mask_iou = ds.gt_dynamic_mask(t).map(|truth| {
                let d = out.dyn_mask();
                let pred = Mask::from_fn(d.width, d.height, |x, y| d.get(x, y, 0) > 0.5);
                pred.iou(&truth)
            });
            Ok(FrameMetrics { frame: t, psnr: psnr(&color, gt), ssim: ssim(&color, gt), mask_iou })
        })
        .collect::<Result<_>>()?;
    let mean_mask_iou = match per.iter().all(|f| f.mask_iou.is_some()) && !per.is_empty() {
        true => Some(mean(per.iter().filter_map(|f| f.mask_iou))),
        false => None,
    };
    Ok(EvalReport {
        mean_psnr: mean(per.iter().map(|f| f.psnr)),
        mean_ssim: mean(per.iter().map(|f| f.ssim)),
        mean_mask_iou,
        frames: per,
    })
}
