//! Staged optimization of a [`GaussianSet`] against a [`SceneDataset`].
//!
//! Stage 1 fits statics outside the dilated dynamic mask, stage 2 adds rigid
//! Gaussians and motion bases with the full objective while statics stay
//! fixed, stage 3 optimizes everything. Short-lived rigids turn transient at
//! the end of stage 2 and every `transition_check_every` iterations after.

mod hist;
mod init;
mod optim;
mod targets;

pub use hist::{duration_histogram, DurationHistogram};
pub use init::{init_rigid_from_tracks, init_static, kmeans, procrustes, INIT_OPACITY, KMEANS_ITERS};
pub use optim::{
    adam_step, project_constraints, LearningRates, OptimState, RecordMap, StepReport, Trainable, ADAM_BETA1,
    ADAM_BETA2, ADAM_EPS, MIN_BETA,
};
pub use targets::{dynamic_masks, frame_targets, normals_from_depth, FlowTarget, FrameTargets};

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::save_checkpoint;
use crate::dynmask::DynMaskConfig;
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::grid::{Grid, Mask};
use crate::harness::SceneDataset;
use crate::losses::{
    depth_loss, flow_loss, normal_loss, photometric_loss, reg_loss, track_loss, LossReport, LossWeights, TrackTarget,
};
use crate::params::{flatten, unflatten, GradientBuffers, Group, Layout};
use crate::primitives::{transition_rigid_to_transient, GaussianSet, DEFAULT_ALPHA_GATE, DEFAULT_NUM_BASES};
use crate::raster::{ch, prepare_splats, rasterize_backward, rasterize_forward};

/// Consecutive non-finite losses tolerated before training aborts.
pub const MAX_NONFINITE_RUN: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iters_total: usize,
    pub iters_static_warmup: usize,
    pub iters_rigid_warmup: usize,
    pub transition_threshold: f64,
    pub transition_check_every: usize,
    pub lr: LearningRates,
    #[serde(rename = "K")]
    pub k: usize,
    pub alpha_gate: f64,
    pub loss_weights: LossWeights,
    pub seed: u64,
    /// Frames never sampled for training.
    pub held_out_frames: Vec<usize>,
    /// Half-width of the window the track partner frame is drawn from.
    pub track_window: usize,
    pub static_init_frames: usize,
    pub static_init_stride: usize,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    pub dynmask: DynMaskConfig,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iters_total: 30_000,
            iters_static_warmup: 3_000,
            iters_rigid_warmup: 12_000,
            transition_threshold: 2.0,
            transition_check_every: 500,
            lr: LearningRates::default(),
            k: DEFAULT_NUM_BASES,
            alpha_gate: DEFAULT_ALPHA_GATE,
            loss_weights: LossWeights::default(),
            seed: 0,
            held_out_frames: Vec::new(),
            track_window: 8,
            static_init_frames: 8,
            static_init_stride: 2,
            checkpoint_every: 1000,
            dynmask: DynMaskConfig::default(),
            threads: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, num_frames: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(m.into()));
        if self.iters_static_warmup + self.iters_rigid_warmup > self.iters_total {
            return bad("warm-up iterations exceed iters_total");
        }
        if self.k == 0 || !(self.alpha_gate > 0.0) || !(self.transition_threshold > 0.0) {
            return bad("K, alpha_gate and transition_threshold must be positive");
        }
        if self.transition_check_every == 0 || self.static_init_stride == 0 || self.static_init_frames == 0 {
            return bad("transition_check_every, static_init_stride and static_init_frames must be positive");
        }
        if self.held_out_frames.iter().any(|&t| t >= num_frames) {
            return bad("held-out frame out of range");
        }
        if (0..num_frames).all(|t| self.held_out_frames.contains(&t)) {
            return bad("every frame is held out");
        }
        if self.threads == Some(0) {
            return bad("threads must be positive");
        }
        self.lr.validate()?;
        self.loss_weights.validate()
    }

    /// Stage (1, 2 or 3) of iteration `it`.
    pub fn stage(&self, it: usize) -> u8 {
        if it < self.iters_static_warmup {
            1
        } else if it < self.iters_static_warmup + self.iters_rigid_warmup {
            2
        } else {
            3
        }
    }

    fn trainable(&self, stage: u8) -> Trainable {
        match stage {
            1 => Trainable { statics: true, rigids: false, transients: false, bases: false },
            2 => Trainable { statics: false, rigids: true, transients: true, bases: true },
            _ => Trainable::ALL,
        }
    }

    /// Whether a transition event fires before iteration `it`.
    fn transition_due(&self, it: usize) -> bool {
        let start = self.iters_static_warmup + self.iters_rigid_warmup;
        it >= start && (it - start) % self.transition_check_every == 0
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    Init {
        stage: u8,
        statics: usize,
        rigids: usize,
        transients: usize,
        bases: usize,
    },
    Iter {
        iter: usize,
        stage: u8,
        frame: usize,
        t_corr: usize,
        loss: LossReport,
        statics: usize,
        rigids: usize,
        transients: usize,
        /// Groups skipped for non-finite gradients.
        skipped: Vec<String>,
        /// Weight and basis updates undone because a blend degenerated.
        rejected: bool,
    },
    Transition {
        iter: usize,
        converted: usize,
        rigids: usize,
        transients: usize,
    },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    /// `(iteration, loss)` of every optimizer iteration.
    pub fn losses(&self) -> Vec<(usize, LossReport)> {
        self.records
            .iter()
            .filter_map(|r| match r {
                LogRecord::Iter { iter, loss, .. } => Some((*iter, *loss)),
                _ => None,
            })
            .collect()
    }

    /// `(iteration, converted)` of every transition event.
    pub fn transitions(&self) -> Vec<(usize, usize)> {
        self.records
            .iter()
            .filter_map(|r| match r {
                LogRecord::Transition { iter, converted, .. } => Some((*iter, *converted)),
                _ => None,
            })
            .collect()
    }
}

/// Mirrors records to `log.jsonl` and writes checkpoints under `dir`.
struct Output {
    dir: PathBuf,
    log: BufWriter<fs::File>,
}

impl Output {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("log.jsonl");
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self { dir: dir.to_path_buf(), log: BufWriter::new(file) })
    }

    fn record(&mut self, r: &LogRecord) -> Result<()> {
        let path = self.dir.join("log.jsonl");
        let line = serde_json::to_string(r).map_err(|e| Error::json(&path, e))?;
        writeln!(self.log, "{line}").map_err(|e| Error::io(&path, e))
    }

    fn flush(&mut self) -> Result<()> {
        self.log.flush().map_err(|e| Error::io(self.dir.join("log.jsonl"), e))
    }
}

/// Runs the full schedule from data-driven initialization.
pub fn train(ds: &SceneDataset, cfg: &TrainConfig) -> Result<(GaussianSet, TrainLog)> {
    train_with(ds, cfg, None, None)
}

/// Like [`train`], optionally starting from `init` instead of initializing
/// from data, and writing the log and checkpoints to `out_dir`.
pub fn train_with(
    ds: &SceneDataset,
    cfg: &TrainConfig,
    init: Option<GaussianSet>,
    out_dir: Option<&Path>,
) -> Result<(GaussianSet, TrainLog)> {
    ds.validate()?;
    cfg.validate(ds.num_frames())?;
    match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?
            .install(|| run(ds, cfg, init, out_dir)),
        None => run(ds, cfg, init, out_dir),
    }
}

struct Run<'a> {
    ds: &'a SceneDataset,
    cfg: &'a TrainConfig,
    targets: Vec<FrameTargets>,
    dyn_masks: Vec<Mask>,
    set: GaussianSet,
    state: OptimState,
    log: TrainLog,
    out: Option<Output>,
}

impl Run<'_> {
    fn emit(&mut self, r: LogRecord) -> Result<()> {
        if let Some(o) = &mut self.out {
            o.record(&r)?;
        }
        self.log.records.push(r);
        Ok(())
    }

    fn counts(&self) -> (usize, usize, usize) {
        (self.set.statics.len(), self.set.rigids.len(), self.set.transients.len())
    }

    /// Seeds rigids and bases from dynamic tracks. Fewer tracks than bases
    /// shrink the basis count; no dynamic tracks leave the set static.
    fn init_rigids(&mut self) -> Result<()> {
        let ds = self.ds;
        let depths: Vec<Grid> = ds.frames.iter().map(|f| f.depth.clone()).collect();
        let images: Vec<Grid> = ds.frames.iter().map(|f| f.image.clone()).collect();
        let cams = ds.cameras();
        let attempt = |k| init_rigid_from_tracks(&ds.tracks, &depths, &images, &cams, &self.dyn_masks, k, self.cfg.seed);
        let (rigids, bases) = match attempt(self.cfg.k) {
            Ok(r) => r,
            Err(Error::InsufficientTracks { got: 0, .. }) => return Ok(()),
            Err(Error::InsufficientTracks { got, .. }) => attempt(got)?,
            Err(e) => return Err(e),
        };
        let old = Layout::of(&self.set);
        self.set.rigids = rigids;
        self.set.bases = bases;
        let new = Layout::of(&self.set);
        let mut map = RecordMap::identity(&old, &new);
        map.rigids = vec![None; new.n_rigid];
        map.keep_bases = false;
        self.state = self.state.remap(new, &map);
        Ok(())
    }

    fn transition(&mut self, it: usize) -> Result<()> {
        let old = Layout::of(&self.set);
        let report = transition_rigid_to_transient(&mut self.set, self.cfg.transition_threshold);
        let new = Layout::of(&self.set);
        let mut map = RecordMap::identity(&old, &new);
        map.rigids = (0..old.n_rigid).filter(|i| !report.converted.contains(i)).map(Some).collect();
        map.transients = (0..new.n_transient).map(|i| (i < old.n_transient).then_some(i)).collect();
        self.state = self.state.remap(new, &map);
        let (_, rigids, transients) = self.counts();
        self.emit(LogRecord::Transition { iter: it, converted: report.count, rigids, transients })
    }

    fn checkpoint(&self, name: &str) -> Result<()> {
        match &self.out {
            Some(o) => save_checkpoint(&self.set, &o.dir.join(name)),
            None => Ok(()),
        }
    }
}

fn run(ds: &SceneDataset, cfg: &TrainConfig, init: Option<GaussianSet>, out_dir: Option<&Path>) -> Result<(GaussianSet, TrainLog)> {
    let n = ds.num_frames();
    let dyn_masks = dynamic_masks(ds, &cfg.dynmask)?;
    let targets = frame_targets(ds, &dyn_masks);
    let train_frames: Vec<usize> = (0..n).filter(|t| !cfg.held_out_frames.contains(t)).collect();
    let set = match init {
        Some(set) => {
            set.validate()?;
            if set.num_frames() != n {
                return Err(Error::Invalid(format!("initial set has {} frames, dataset {n}", set.num_frames())));
            }
            set
        }
        None => {
            let mut set = GaussianSet::empty(cfg.k, n);
            set.alpha_gate = cfg.alpha_gate;
            set.statics =
                init_static(ds, &dyn_masks, &train_frames, cfg.static_init_frames, cfg.static_init_stride, cfg.seed)?;
            set
        }
    };
    let state = OptimState::new(Layout::of(&set));
    let out = out_dir.map(Output::create).transpose()?;
    let mut r = Run { ds, cfg, targets, dyn_masks, set, state, log: TrainLog::default(), out };
    let fresh = r.set.rigids.is_empty() && r.set.transients.is_empty();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut nonfinite_run = 0;
    let (s, ri, tr) = r.counts();
    r.emit(LogRecord::Init { stage: cfg.stage(0), statics: s, rigids: ri, transients: tr, bases: r.set.num_bases() })?;

    for it in 0..cfg.iters_total {
        let stage = cfg.stage(it);
        if fresh && stage >= 2 && it == cfg.iters_static_warmup {
            r.init_rigids()?;
            let (s, ri, tr) = r.counts();
            r.emit(LogRecord::Init { stage, statics: s, rigids: ri, transients: tr, bases: r.set.num_bases() })?;
        }
        if cfg.transition_due(it) {
            r.transition(it)?;
        }
        let t = train_frames[rng.gen_range(0..train_frames.len())];
        let lo = t.saturating_sub(cfg.track_window);
        let hi = (t + cfg.track_window).min(n - 1);
        let tc = rng.gen_range(lo..=hi);

        let (loss, grads) = match iteration(&r.set, ds, &r.targets, t, tc, stage, &cfg.loss_weights) {
            Ok((loss, grads)) => (loss, Some(grads)),
            Err(Error::NonFiniteGradient(_)) => (LossReport { total: f64::NAN, ..Default::default() }, None),
            Err(e) => return Err(e),
        };
        let (s, ri, tr) = r.counts();
        let mut record = LogRecord::Iter {
            iter: it,
            stage,
            frame: t,
            t_corr: tc,
            loss,
            statics: s,
            rigids: ri,
            transients: tr,
            skipped: Vec::new(),
            rejected: false,
        };
        match grads {
            Some(grads) if loss.total.is_finite() => {
                nonfinite_run = 0;
                let before = (!r.set.rigids.is_empty()).then(|| flatten(&r.set));
                let report = adam_step(&mut r.set, &grads, &mut r.state, &cfg.lr, cfg.trainable(stage))?;
                let rejected = match before {
                    Some(before) => reject_degenerate(&mut r.set, &before, &[t, tc]),
                    None => false,
                };
                if let LogRecord::Iter { skipped, rejected: rj, .. } = &mut record {
                    *skipped = report.skipped.iter().map(|g| g.name().to_string()).collect();
                    *rj = rejected;
                }
            }
            _ => {
                nonfinite_run += 1;
                if let LogRecord::Iter { skipped, .. } = &mut record {
                    *skipped = Group::ALL.iter().map(|g| g.name().to_string()).collect();
                }
            }
        }
        r.emit(record)?;
        if nonfinite_run >= MAX_NONFINITE_RUN {
            if let Some(o) = &mut r.out {
                o.flush()?;
            }
            return Err(Error::NonFiniteLoss(nonfinite_run));
        }
        if cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 {
            r.checkpoint(&format!("ckpt_{:06}.rigs", it + 1))?;
        }
    }
    r.checkpoint("final.rigs")?;
    if let Some(o) = &mut r.out {
        o.flush()?;
    }
    Ok((r.set, r.log))
}

/// Restores weights and bases from `before` when any rigid blend at the
/// given frames no longer yields a rotation.
fn reject_degenerate(set: &mut GaussianSet, before: &[f64], frames: &[usize]) -> bool {
    let broken = set.rigids.iter().any(|g| frames.iter().any(|&f| set.bases.blend(&g.weights, f).is_err()));
    if !broken {
        return false;
    }
    let layout = Layout::of(set);
    let mut now = flatten(set);
    for (i, g) in layout.groups().into_iter().enumerate() {
        if matches!(g, Group::Weights | Group::Bases) {
            now[i] = before[i];
        }
    }
    unflatten(set, &now);
    true
}

/// Keeps `pred` where `keep` holds and substitutes `gt` elsewhere, so the
/// excluded pixels contribute neither loss nor gradient.
fn substitute(keep: &Mask, pred: &Grid, gt: &Grid) -> Grid {
    let mut out = pred.clone();
    for i in 0..keep.data.len() {
        if !keep.data[i] {
            let c = pred.channels;
            out.data[i * c..i * c + c].copy_from_slice(&gt.data[i * c..i * c + c]);
        }
    }
    out
}

fn scatter(dst: &mut Grid, first: usize, src: &Grid, scale: f64, keep: Option<&Mask>) {
    for i in 0..dst.width * dst.height {
        if keep.is_some_and(|m| !m.data[i]) {
            continue;
        }
        for c in 0..src.channels {
            dst.data[i * dst.channels + first + c] += scale * src.data[i * src.channels + c];
        }
    }
}

/// Lifted partner-frame positions of the dynamic tracks visible at both `t`
/// and `tc`.
fn track_targets(ds: &SceneDataset, tg: &FrameTargets, t: usize, tc: usize) -> Vec<TrackTarget> {
    let tracks = &ds.tracks;
    let (w, h) = (ds.width, ds.height);
    let partner = &ds.frames[tc];
    let mut out = Vec::new();
    for i in 0..tracks.n {
        let (u, v, vis) = tracks.get(i, t);
        let (u2, v2, vis2) = tracks.get(i, tc);
        if !vis || !vis2 {
            continue;
        }
        let (x, y) = (u.round(), v.round());
        if x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 || !tg.dyn_mask.get(x as usize, y as usize) {
            continue;
        }
        let Some(d) = init::depth_at(&partner.depth, u2, v2) else { continue };
        let Ok(point) = partner.camera.unproject(&Vec2::new(u2, v2), d) else { continue };
        out.push(TrackTarget { x: x as usize, y: y as usize, point });
    }
    out
}

/// Loss terms and parameter gradients of one training sample.
fn iteration(
    set: &GaussianSet,
    ds: &SceneDataset,
    targets: &[FrameTargets],
    t: usize,
    tc: usize,
    stage: u8,
    w: &LossWeights,
) -> Result<(LossReport, GradientBuffers)> {
    let f = &ds.frames[t];
    let tg = &targets[t];
    let cam = &f.camera;
    let splats = prepare_splats(set, cam, t, Some(tc));
    let out = rasterize_forward(&splats, cam);
    let mut gout = Grid::zeros(ds.width, ds.height, ch::N);
    let keep = (stage == 1).then_some(&tg.static_region);

    let (color, dyn_pred) = match keep {
        Some(m) => (substitute(m, &out.color(), &f.image), substitute(m, &out.dyn_mask(), &tg.dyn_map)),
        None => (out.color(), out.dyn_mask()),
    };
    let ph = photometric_loss(&color, &f.image, &dyn_pred, &tg.dyn_map, w);
    scatter(&mut gout, ch::COLOR, &ph.d_image, 1.0, keep);
    scatter(&mut gout, ch::DYN, &ph.d_mask, 1.0, keep);
    let mut rep = ph.report;

    let restrict = |m: &Mask| match keep {
        Some(k) => m.and(k),
        None => m.clone(),
    };
    let (ld, gd) = depth_loss(&out.depth(), &f.depth, &restrict(&tg.depth_valid));
    rep.depth = ld;
    scatter(&mut gout, ch::DEPTH, &gd, w.lambda_depth, None);
    let (ln, gn) = normal_loss(&out.normal(), &tg.normals, &restrict(&tg.normal_valid));
    rep.normal = ln;
    scatter(&mut gout, ch::NORMAL, &gn, w.lambda_normal, None);

    if stage >= 2 {
        let (lt, gt) = track_loss(&out.corr(), &track_targets(ds, tg, t, tc), &out.alpha());
        rep.track = lt;
        scatter(&mut gout, ch::CORR, &gt, w.lambda_track, None);
        if let Some(ft) = &tg.flow {
            let (lf, gf, gb) = flow_loss(&out.v_fwd(), &out.v_bwd(), &ft.v_fwd, &ft.v_bwd, &ft.mask);
            rep.flow = lf;
            scatter(&mut gout, ch::VFWD, &gf, w.lambda_flow, None);
            scatter(&mut gout, ch::VBWD, &gb, w.lambda_flow, None);
        }
    }
    let mut grads = rasterize_backward(&splats, cam, &out, &gout, set, t, Some(tc))?;
    if stage >= 2 {
        let (lr, gr) = reg_loss(set, w);
        rep.reg = lr;
        grads.add_assign(&gr);
    }
    Ok((rep.finish(w), grads))
}

#[cfg(test)]
mod tests;
