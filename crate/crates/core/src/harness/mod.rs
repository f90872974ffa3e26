//! Datasets, the analytic synthetic-scene generator and evaluation.

mod eval;
mod io;
mod synth;

pub use eval::{evaluate, EvalReport, FrameMetrics};
pub use io::{load_dataset, read_camera, read_ppm, save_dataset, save_masks, write_ppm};
pub use synth::{
    generate_synthetic, ActorSpec, BackgroundSpec, CameraPathSpec, MotionSpec, NoiseSpec, ShapeSpec,
    SyntheticSceneSpec, TrackSpec,
};

use crate::dynmask::{FlowField, ObjectMaskFrame};
use crate::error::{Error, Result};
use crate::geometry::CameraFrame;
use crate::grid::{Grid, Mask};
use crate::primitives::GaussianSet;

/// Everything observed at one timestamp.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameData {
    /// RGB in [0,1].
    pub image: Grid,
    pub camera: CameraFrame,
    pub depth: Grid,
    pub flow_fwd: Grid,
    pub flow_bwd: Grid,
    pub uncertainty: Option<Grid>,
    pub objects: ObjectMaskFrame,
    /// Precomputed dynamic mask, if any.
    pub dyn_mask: Option<Mask>,
}

/// 2D point tracks: `n` tracks over `t` frames of `(u, v, visible)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tracks {
    pub n: usize,
    pub t: usize,
    pub data: Vec<f64>,
}

impl Tracks {
    pub fn empty(t: usize) -> Self {
        Self { n: 0, t, data: Vec::new() }
    }

    pub fn get(&self, track: usize, frame: usize) -> (f64, f64, bool) {
        let i = (track * self.t + frame) * 3;
        (self.data[i], self.data[i + 1], self.data[i + 2] > 0.5)
    }

    /// Frames in which `track` is visible.
    pub fn visible_frames(&self, track: usize) -> Vec<usize> {
        (0..self.t).filter(|&f| self.get(track, f).2).collect()
    }
}

/// Generator-side truth that real captures do not have.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    /// Object ids whose actors move.
    pub dynamic_ids: Vec<u16>,
    /// Object id owning each track.
    pub track_ids: Vec<u16>,
    /// World-space displacement to t+1 and from t−1 (3 channels).
    pub scene_flow_fwd: Vec<Grid>,
    pub scene_flow_bwd: Vec<Grid>,
    /// Pixels whose flow target lands on the same surface, with all four
    /// bilinear taps on it.
    pub flow_valid_fwd: Vec<Mask>,
    pub flow_valid_bwd: Vec<Mask>,
    pub set: Option<GaussianSet>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneDataset {
    pub width: usize,
    pub height: usize,
    pub frames: Vec<FrameData>,
    pub tracks: Tracks,
    pub truth: Option<GroundTruth>,
}

impl SceneDataset {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn cameras(&self) -> Vec<CameraFrame> {
        self.frames.iter().map(|f| f.camera).collect()
    }

    pub fn flow_fields(&self) -> Vec<FlowField> {
        self.frames
            .iter()
            .map(|f| FlowField { fwd: f.flow_fwd.clone(), bwd: f.flow_bwd.clone(), uncertainty: f.uncertainty.clone() })
            .collect()
    }

    pub fn object_masks(&self) -> Vec<ObjectMaskFrame> {
        self.frames.iter().map(|f| f.objects.clone()).collect()
    }

    /// Union of the truly dynamic objects at `frame`, when truth is known.
    pub fn gt_dynamic_mask(&self, frame: usize) -> Option<Mask> {
        let truth = self.truth.as_ref()?;
        let objects = &self.frames[frame].objects;
        let data = objects.ids.iter().map(|id| truth.dynamic_ids.contains(id)).collect();
        Some(Mask { width: objects.width, height: objects.height, data })
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.width, self.height);
        if self.frames.len() < 2 {
            return Err(Error::Invalid(format!("need at least 2 frames, got {}", self.frames.len())));
        }
        let shape = |g: &Grid, c: usize, what: &str, t: usize| -> Result<()> {
            if g.width != w || g.height != h || g.channels != c || g.data.len() != w * h * c {
                return Err(Error::ShapeMismatch {
                    path: format!("frame {t}").into(),
                    detail: format!("{what} is {}x{}x{}, expected {w}x{h}x{c}", g.width, g.height, g.channels),
                });
            }
            Ok(())
        };
        for (t, f) in self.frames.iter().enumerate() {
            shape(&f.image, 3, "image", t)?;
            shape(&f.depth, 1, "depth", t)?;
            shape(&f.flow_fwd, 2, "flow_fwd", t)?;
            shape(&f.flow_bwd, 2, "flow_bwd", t)?;
            if let Some(u) = &f.uncertainty {
                shape(u, 1, "uncertainty", t)?;
            }
            if f.objects.width != w || f.objects.height != h || f.objects.ids.len() != w * h {
                return Err(Error::ShapeMismatch { path: format!("frame {t}").into(), detail: "object ids".into() });
            }
            if f.camera.width() != w || f.camera.height() != h {
                return Err(Error::ShapeMismatch { path: format!("frame {t}").into(), detail: "camera size".into() });
            }
            f.camera.intrinsics.validate()?;
        }
        if self.tracks.t != self.frames.len() || self.tracks.data.len() != self.tracks.n * self.tracks.t * 3 {
            return Err(Error::ShapeMismatch { path: "tracks".into(), detail: "track array does not match n·t·3".into() });
        }
        if self.tracks.data.chunks(3).any(|c| c[2] != 0.0 && c[2] != 1.0) {
            return Err(Error::Invalid("track visibility must be 0 or 1".into()));
        }
        Ok(())
    }
}
