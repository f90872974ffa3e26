//! Flat parameter layout of a [`GaussianSet`], shared by gradient buffers,
//! optimizer moments and checkpoints.

use crate::geometry::Vec3;
use crate::primitives::{GaussianCore, GaussianSet};

/// Optimizer parameter groups (one learning rate each).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    Mean,
    Scale,
    Quat,
    Opacity,
    Color,
    Beta,
    Gamma,
    Weights,
    Velocity,
    Bases,
}

impl Group {
    pub const ALL: [Group; 10] = [
        Group::Mean,
        Group::Scale,
        Group::Quat,
        Group::Opacity,
        Group::Color,
        Group::Beta,
        Group::Gamma,
        Group::Weights,
        Group::Velocity,
        Group::Bases,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Group::Mean => "mean",
            Group::Scale => "scale",
            Group::Quat => "quat",
            Group::Opacity => "opacity",
            Group::Color => "color",
            Group::Beta => "beta",
            Group::Gamma => "gamma",
            Group::Weights => "weights",
            Group::Velocity => "velocity",
            Group::Bases => "bases",
        }
    }
}

/// Offsets of the shared fields inside one Gaussian record.
pub mod core_off {
    pub const MEAN: usize = 0;
    pub const SCALE: usize = 3;
    pub const QUAT: usize = 6;
    pub const OPACITY: usize = 10;
    pub const COLOR: usize = 11;
    pub const LEN: usize = 14;
}

/// Per-record sizes and section offsets of a flattened set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub n_static: usize,
    pub n_rigid: usize,
    pub n_transient: usize,
    pub k: usize,
    pub t: usize,
}

impl Layout {
    pub fn of(set: &GaussianSet) -> Self {
        Self {
            n_static: set.statics.len(),
            n_rigid: set.rigids.len(),
            n_transient: set.transients.len(),
            k: set.num_bases(),
            t: set.num_frames(),
        }
    }

    pub const STATIC_LEN: usize = core_off::LEN;
    pub const TRANSIENT_LEN: usize = core_off::LEN + 5;

    pub fn rigid_len(&self) -> usize {
        core_off::LEN + self.k + 2
    }

    pub fn static_at(&self, i: usize) -> usize {
        i * Self::STATIC_LEN
    }

    pub fn rigid_at(&self, i: usize) -> usize {
        self.n_static * Self::STATIC_LEN + i * self.rigid_len()
    }

    pub fn transient_at(&self, i: usize) -> usize {
        self.rigid_at(self.n_rigid) + i * Self::TRANSIENT_LEN
    }

    pub fn bases_at(&self) -> usize {
        self.transient_at(self.n_transient)
    }

    pub fn basis_at(&self, basis: usize, frame: usize) -> usize {
        self.bases_at() + (basis * self.t + frame) * 9
    }

    pub fn total(&self) -> usize {
        self.bases_at() + self.k * self.t * 9
    }

    /// Group of every flat index, in layout order.
    pub fn groups(&self) -> Vec<Group> {
        let mut out = Vec::with_capacity(self.total());
        let core = |out: &mut Vec<Group>| {
            out.extend([Group::Mean; 3]);
            out.extend([Group::Scale; 3]);
            out.extend([Group::Quat; 4]);
            out.push(Group::Opacity);
            out.extend([Group::Color; 3]);
        };
        for _ in 0..self.n_static {
            core(&mut out);
        }
        for _ in 0..self.n_rigid {
            core(&mut out);
            out.extend(std::iter::repeat(Group::Weights).take(self.k));
            out.push(Group::Beta);
            out.push(Group::Gamma);
        }
        for _ in 0..self.n_transient {
            core(&mut out);
            out.extend([Group::Velocity; 3]);
            out.push(Group::Beta);
            out.push(Group::Gamma);
        }
        out.extend(std::iter::repeat(Group::Bases).take(self.k * self.t * 9));
        out
    }
}

fn push_core(out: &mut Vec<f64>, g: &GaussianCore) {
    out.extend_from_slice(g.mean.as_slice());
    out.extend_from_slice(g.log_scale.as_slice());
    out.extend_from_slice(&g.quat);
    out.push(g.opacity_logit);
    out.extend_from_slice(g.color.as_slice());
}

fn read_core(src: &[f64], g: &mut GaussianCore) {
    g.mean = Vec3::from_column_slice(&src[0..3]);
    g.log_scale = Vec3::from_column_slice(&src[3..6]);
    g.quat.copy_from_slice(&src[6..10]);
    g.opacity_logit = src[10];
    g.color = Vec3::from_column_slice(&src[11..14]);
}

/// Flattens every optimizable parameter in [`Layout`] order.
pub fn flatten(set: &GaussianSet) -> Vec<f64> {
    let layout = Layout::of(set);
    let mut out = Vec::with_capacity(layout.total());
    for g in &set.statics {
        push_core(&mut out, g);
    }
    for g in &set.rigids {
        push_core(&mut out, &g.core);
        out.extend_from_slice(&g.weights);
        out.push(g.beta);
        out.push(g.gamma);
    }
    for g in &set.transients {
        push_core(&mut out, &g.core);
        out.extend_from_slice(g.velocity.as_slice());
        out.push(g.beta);
        out.push(g.gamma);
    }
    for p in &set.bases.params {
        out.extend_from_slice(p);
    }
    debug_assert_eq!(out.len(), layout.total());
    out
}

/// Writes a flat vector produced by [`flatten`] back into `set`.
pub fn unflatten(set: &mut GaussianSet, flat: &[f64]) {
    let layout = Layout::of(set);
    assert_eq!(flat.len(), layout.total(), "flat parameter length mismatch");
    let k = layout.k;
    for (i, g) in set.statics.iter_mut().enumerate() {
        read_core(&flat[layout.static_at(i)..], g);
    }
    for (i, g) in set.rigids.iter_mut().enumerate() {
        let o = layout.rigid_at(i);
        read_core(&flat[o..], &mut g.core);
        let w = o + core_off::LEN;
        g.weights.copy_from_slice(&flat[w..w + k]);
        g.beta = flat[w + k];
        g.gamma = flat[w + k + 1];
    }
    for (i, g) in set.transients.iter_mut().enumerate() {
        let o = layout.transient_at(i) + core_off::LEN;
        read_core(&flat[layout.transient_at(i)..], &mut g.core);
        g.velocity = Vec3::from_column_slice(&flat[o..o + 3]);
        g.beta = flat[o + 3];
        g.gamma = flat[o + 4];
    }
    let b = layout.bases_at();
    for (i, p) in set.bases.params.iter_mut().enumerate() {
        p.copy_from_slice(&flat[b + i * 9..b + i * 9 + 9]);
    }
}

/// Per-parameter gradient accumulators in [`Layout`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBuffers {
    pub layout: Layout,
    pub data: Vec<f64>,
}

impl GradientBuffers {
    pub fn zeros(layout: Layout) -> Self {
        Self { layout, data: vec![0.0; layout.total()] }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &GradientBuffers) {
        assert_eq!(self.layout, other.layout);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitives::{RigidGaussian, TransientGaussian};

    #[test]
    fn flatten_round_trip_and_groups() {
        let mut set = GaussianSet::empty(2, 3);
        let core = GaussianCore::isotropic(Vec3::new(1.0, 2.0, 3.0), 0.2, 0.7, Vec3::new(0.1, 0.2, 0.3));
        set.statics.push(core.clone());
        set.rigids.push(RigidGaussian { core: core.clone(), weights: vec![0.6, 0.8], beta: 4.0, gamma: 1.0, source: 0 });
        set.transients.push(TransientGaussian {
            core,
            velocity: Vec3::new(0.5, 0.0, -0.5),
            beta: 1.5,
            gamma: 2.0,
            source: 0,
        });
        let layout = Layout::of(&set);
        let flat = flatten(&set);
        assert_eq!(flat.len(), layout.total());
        let groups = layout.groups();
        assert_eq!(groups.len(), flat.len());
        assert_eq!(groups[layout.rigid_at(0) + core_off::LEN], Group::Weights);
        assert_eq!(flat[layout.rigid_at(0) + core_off::LEN + 2], 4.0);
        assert_eq!(groups[layout.transient_at(0) + core_off::LEN], Group::Velocity);
        let mut other = set.clone();
        let doubled: Vec<f64> = flat.iter().map(|v| v * 2.0).collect();
        unflatten(&mut other, &doubled);
        assert_eq!(other.transients[0].gamma, 4.0);
        unflatten(&mut other, &flat);
        assert_eq!(other, set);
    }
}
