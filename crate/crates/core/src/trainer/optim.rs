//! Adam over the flat parameter layout, per-population freezing, constraint
//! projection and moment remapping when populations change.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{flatten, unflatten, GradientBuffers, Group, Layout};
use crate::primitives::GaussianSet;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-15;
/// Lower bound on every temporal duration.
pub const MIN_BETA: f64 = 0.01;

/// Step sizes per parameter group. Transient velocities use `mean`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub mean: f64,
    pub scale: f64,
    pub quat: f64,
    pub opacity: f64,
    pub color: f64,
    pub beta: f64,
    pub gamma: f64,
    pub weights: f64,
    pub bases: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            mean: 0.00016,
            scale: 0.005,
            quat: 0.001,
            opacity: 0.05,
            color: 0.01,
            beta: 0.001,
            gamma: 0.001,
            weights: 0.01,
            bases: 0.0001,
        }
    }
}

impl LearningRates {
    pub fn of(&self, g: Group) -> f64 {
        match g {
            Group::Mean | Group::Velocity => self.mean,
            Group::Scale => self.scale,
            Group::Quat => self.quat,
            Group::Opacity => self.opacity,
            Group::Color => self.color,
            Group::Beta => self.beta,
            Group::Gamma => self.gamma,
            Group::Weights => self.weights,
            Group::Bases => self.bases,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.mean,
            self.scale,
            self.quat,
            self.opacity,
            self.color,
            self.beta,
            self.gamma,
            self.weights,
            self.bases,
        ];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::Invalid("learning rates must be positive and finite".into()))
        }
    }
}

/// Which populations an optimizer step may touch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Trainable {
    pub statics: bool,
    pub rigids: bool,
    pub transients: bool,
    pub bases: bool,
}

impl Trainable {
    pub const ALL: Trainable = Trainable { statics: true, rigids: true, transients: true, bases: true };

    fn mask(&self, l: &Layout) -> Vec<bool> {
        let mut m = Vec::with_capacity(l.total());
        m.resize(l.static_at(l.n_static), self.statics);
        m.resize(l.rigid_at(l.n_rigid), self.rigids);
        m.resize(l.bases_at(), self.transients);
        m.resize(l.total(), self.bases);
        m
    }
}

/// Adam moments and per-entry step counts aligned with a [`Layout`].
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub layout: Layout,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub steps: Vec<u32>,
    /// Steps skipped per group because of non-finite gradients.
    pub skipped: [u64; Group::ALL.len()],
}

/// Source of every record of a new layout in an old one.
#[derive(Clone, Debug, Default)]
pub struct RecordMap {
    pub statics: Vec<Option<usize>>,
    pub rigids: Vec<Option<usize>>,
    pub transients: Vec<Option<usize>>,
    pub keep_bases: bool,
}

impl RecordMap {
    /// Identity over the populations shared by `old` and `new`.
    pub fn identity(old: &Layout, new: &Layout) -> Self {
        let map = |n_new: usize, n_old: usize| (0..n_new).map(|i| (i < n_old).then_some(i)).collect();
        Self {
            statics: map(new.n_static, old.n_static),
            rigids: map(new.n_rigid, old.n_rigid),
            transients: map(new.n_transient, old.n_transient),
            keep_bases: old.k == new.k && old.t == new.t,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepReport {
    /// Groups whose update was skipped for non-finite gradients.
    pub skipped: Vec<Group>,
}

impl OptimState {
    pub fn new(layout: Layout) -> Self {
        let n = layout.total();
        Self { layout, m: vec![0.0; n], v: vec![0.0; n], steps: vec![0; n], skipped: [0; Group::ALL.len()] }
    }

    pub fn skipped_total(&self) -> u64 {
        self.skipped.iter().sum()
    }

    /// Moves moments to `new`; entries without a source start from zero.
    pub fn remap(&self, new: Layout, map: &RecordMap) -> OptimState {
        let old = &self.layout;
        let mut out = OptimState::new(new);
        out.skipped = self.skipped;
        let mut copy = |from: usize, to: usize, len: usize| {
            out.m[to..to + len].copy_from_slice(&self.m[from..from + len]);
            out.v[to..to + len].copy_from_slice(&self.v[from..from + len]);
            out.steps[to..to + len].copy_from_slice(&self.steps[from..from + len]);
        };
        for (i, src) in map.statics.iter().enumerate() {
            if let Some(j) = src {
                copy(old.static_at(*j), new.static_at(i), Layout::STATIC_LEN);
            }
        }
        if old.k == new.k {
            for (i, src) in map.rigids.iter().enumerate() {
                if let Some(j) = src {
                    copy(old.rigid_at(*j), new.rigid_at(i), new.rigid_len());
                }
            }
        }
        for (i, src) in map.transients.iter().enumerate() {
            if let Some(j) = src {
                copy(old.transient_at(*j), new.transient_at(i), Layout::TRANSIENT_LEN);
            }
        }
        if map.keep_bases && old.k == new.k && old.t == new.t {
            copy(old.bases_at(), new.bases_at(), new.k * new.t * 9);
        }
        out
    }
}

/// Unit quaternions, unit weight vectors, `β ≥ MIN_BETA`, orthonormal bases.
/// Returns the number of basis entries that could not be re-orthonormalized.
pub fn project_constraints(set: &mut GaussianSet) -> usize {
    fn unit_quat(q: &mut [f64; 4]) {
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-12 && n.is_finite() {
            q.iter_mut().for_each(|v| *v /= n);
        } else {
            *q = [1.0, 0.0, 0.0, 0.0];
        }
    }
    for g in &mut set.statics {
        unit_quat(&mut g.quat);
    }
    for g in &mut set.rigids {
        unit_quat(&mut g.core.quat);
        let n = g.weights.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-12 && n.is_finite() {
            g.weights.iter_mut().for_each(|v| *v /= n);
        }
        g.beta = g.beta.max(MIN_BETA);
    }
    for g in &mut set.transients {
        unit_quat(&mut g.core.quat);
        g.beta = g.beta.max(MIN_BETA);
    }
    set.bases.project()
}

/// One bias-corrected Adam update of the trainable entries followed by
/// constraint projection. Groups with a non-finite gradient are skipped and
/// counted.
pub fn adam_step(
    set: &mut GaussianSet,
    grads: &GradientBuffers,
    state: &mut OptimState,
    lr: &LearningRates,
    trainable: Trainable,
) -> Result<StepReport> {
    let layout = Layout::of(set);
    if grads.layout != layout || state.layout != layout {
        return Err(Error::Invalid("gradient or optimizer layout does not match the set".into()));
    }
    let groups = layout.groups();
    let active = trainable.mask(&layout);
    let mut bad = [false; Group::ALL.len()];
    for i in 0..groups.len() {
        if active[i] && !grads.data[i].is_finite() {
            bad[groups[i] as usize] = true;
        }
    }
    let mut report = StepReport::default();
    for g in Group::ALL {
        if bad[g as usize] {
            state.skipped[g as usize] += 1;
            report.skipped.push(g);
        }
    }
    let mut params = flatten(set);
    for i in 0..params.len() {
        let g = groups[i];
        if !active[i] || bad[g as usize] {
            continue;
        }
        let grad = grads.data[i];
        state.steps[i] += 1;
        let s = state.steps[i] as i32;
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * grad;
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * grad * grad;
        let m_hat = state.m[i] / (1.0 - ADAM_BETA1.powi(s));
        let v_hat = state.v[i] / (1.0 - ADAM_BETA2.powi(s));
        params[i] -= lr.of(g) * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    unflatten(set, &params);
    project_constraints(set);
    Ok(report)
}
