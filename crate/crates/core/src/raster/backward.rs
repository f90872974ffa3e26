use rayon::prelude::*;

use super::tiles::{composite, Contribution, TileBins};
use super::{ch, prepare_evals, GaussEval, GradOutputs, Kind, RenderOutputs, Splat};
use crate::error::{Error, Result};
use crate::geometry::{quat_to_matrix_vjp, CameraFrame, Mat2, Mat3, Vec3};
use crate::params::{core_off, GradientBuffers, Layout};
use crate::primitives::GaussianSet;

/// Screen-space adjoints of one splat:
/// `[μx, μy, Σxx, Σxy, Σyy, opacity, features..]`.
const SPLAT_GRAD: usize = 6 + ch::N;
type SplatGrad = [f64; SPLAT_GRAD];

/// Reverse sweep over one pixel's contributions.
fn pixel_backward(contribs: &[Contribution], list: &[usize], splats: &[Splat], g: &[f64], acc: &mut [SplatGrad]) {
    // suffix[c] = Σ_{k after i} f_kc α_k T_k
    let mut suffix = [0.0; ch::N];
    for cb in contribs.iter().rev() {
        let s = &splats[list[cb.slot]];
        let a = &mut acc[cb.slot];
        let w = cb.alpha * cb.t_before;
        let mut g_alpha = 0.0;
        for c in 0..ch::N {
            a[6 + c] += w * g[c];
            g_alpha += g[c] * (s.features[c] * cb.t_before - suffix[c] / (1.0 - cb.alpha));
            suffix[c] += s.features[c] * w;
        }
        if cb.clamped {
            continue;
        }
        a[5] += g_alpha * cb.falloff;
        // α = o·exp(−q/2)
        let gq = -0.5 * cb.alpha * g_alpha;
        a[0] += -2.0 * gq * cb.c.x;
        a[1] += -2.0 * gq * cb.c.y;
        a[2] += -gq * cb.c.x * cb.c.x;
        a[3] += -gq * cb.c.x * cb.c.y;
        a[4] += -gq * cb.c.y * cb.c.y;
    }
}

/// Screen-space adjoints of every splat, accumulated per tile and reduced in
/// tile order.
fn splat_gradients(splats: &[Splat], cam: &CameraFrame, grad: &GradOutputs) -> Vec<SplatGrad> {
    let (w, h) = (cam.width(), cam.height());
    let bins = TileBins::new(splats, w, h);
    let per_tile: Vec<Vec<SplatGrad>> = (0..bins.lists.len())
        .into_par_iter()
        .map(|tile| {
            let list = &bins.lists[tile];
            let mut acc = vec![[0.0; SPLAT_GRAD]; list.len()];
            if list.is_empty() {
                return acc;
            }
            let mut contribs = Vec::new();
            let mut scratch = [0.0; ch::N];
            for (x, y) in bins.pixels(tile, w, h) {
                let g = grad.pixel(x, y);
                if g.iter().all(|v| *v == 0.0) {
                    continue;
                }
                contribs.clear();
                composite(x as f64, y as f64, list, splats, true, &mut scratch, Some(&mut contribs));
                pixel_backward(&contribs, list, splats, g, &mut acc);
            }
            acc
        })
        .collect();
    let mut out = vec![[0.0; SPLAT_GRAD]; splats.len()];
    for (tile, acc) in per_tile.iter().enumerate() {
        for (slot, &i) in bins.lists[tile].iter().enumerate() {
            for (o, v) in out[i].iter_mut().zip(&acc[slot]) {
                *o += v;
            }
        }
    }
    out
}

fn add(buf: &mut [f64], at: usize, v: &Vec3) {
    buf[at] += v.x;
    buf[at + 1] += v.y;
    buf[at + 2] += v.z;
}

/// Chains one splat's screen-space adjoints back to its Gaussian parameters.
fn gaussian_backward(e: &GaussEval, a: &SplatGrad, set: &GaussianSet, cam: &CameraFrame, layout: &Layout, buf: &mut [f64]) {
    let k = &cam.intrinsics;
    let p = &e.p_cam;
    let (iz, iz2) = (1.0 / p.z, 1.0 / (p.z * p.z));
    let gf = &a[6..];
    let feat3 = |o: usize| Vec3::new(gf[o], gf[o + 1], gf[o + 2]);

    // camera-space position: mean2d, depth, and the Jacobian inside Σ'
    let mut g_pc = Vec3::new(a[0] * k.fx * iz, a[1] * k.fy * iz, 0.0);
    g_pc.z += -a[0] * k.fx * p.x * iz2 - a[1] * k.fy * p.y * iz2 + gf[ch::DEPTH];
    let g2 = Mat2::new(a[2], a[3], a[3], a[4]);
    let w = &cam.w2c.rotation;
    let g_cov3 = e.proj.transpose() * g2 * e.proj;
    let g_proj = 2.0 * g2 * e.proj * e.cov3;
    let g_j = g_proj * w.transpose();
    let iz3 = iz2 * iz;
    g_pc.x += g_j[(0, 2)] * (-k.fx * iz2);
    g_pc.y += g_j[(1, 2)] * (-k.fy * iz2);
    g_pc.z += g_j[(0, 0)] * (-k.fx * iz2)
        + g_j[(0, 2)] * (2.0 * k.fx * p.x * iz3)
        + g_j[(1, 1)] * (-k.fy * iz2)
        + g_j[(1, 2)] * (2.0 * k.fy * p.y * iz3);
    let g_mean_w = w.transpose() * g_pc;

    // Σ = M Mᵀ with M = R diag(s)
    let m = e.rot_w * Mat3::from_diagonal(&e.scale);
    let g_m = (g_cov3 + g_cov3.transpose()) * m;
    let mut g_rot_w = g_m * Mat3::from_diagonal(&e.scale);
    let mut g_logs = Vec3::zeros();
    for c in 0..3 {
        g_logs[c] = g_m.column(c).dot(&e.rot_w.column(c)) * e.scale[c];
    }
    let g_normal = feat3(ch::NORMAL) * e.normal_sign;
    let mut col = g_rot_w.column_mut(e.normal_axis);
    col += g_normal;

    let g_color = feat3(ch::COLOR);
    let g_vf = feat3(ch::VFWD);
    let g_vb = feat3(ch::VBWD);
    let g_corr = feat3(ch::CORR);
    let g_op = a[5];

    let idx = e.source.index;
    let base = match e.source.kind {
        Kind::Static => layout.static_at(idx),
        Kind::Rigid => layout.rigid_at(idx),
        Kind::Transient => layout.transient_at(idx),
    };
    let core_quat = |s: &GaussianSet| match e.source.kind {
        Kind::Static => s.statics[idx].quat,
        Kind::Rigid => s.rigids[idx].core.quat,
        Kind::Transient => s.transients[idx].core.quat,
    };
    let quat = core_quat(set);
    add(buf, base + core_off::SCALE, &g_logs);
    add(buf, base + core_off::COLOR, &g_color);
    let sig_deriv = e.op_base * (1.0 - e.op_base);
    buf[base + core_off::OPACITY] += g_op * e.gate * sig_deriv;

    // gating: op_eff = o·σ(α(β − |t−γ|))
    let gate_terms = |beta_at: usize, gamma: f64, buf: &mut [f64]| {
        let ga = g_op * e.op_base * e.gate * (1.0 - e.gate) * set.alpha_gate;
        let sign = if e.t > gamma {
            1.0
        } else if e.t < gamma {
            -1.0
        } else {
            0.0
        };
        buf[beta_at] += ga;
        buf[beta_at + 1] += ga * sign;
    };

    match e.source.kind {
        Kind::Static => {
            add(buf, base + core_off::MEAN, &(g_mean_w + g_corr));
            let gq = quat_to_matrix_vjp(&quat, &g_rot_w);
            for i in 0..4 {
                buf[base + core_off::QUAT + i] += gq[i];
            }
        }
        Kind::Transient => {
            let g = &set.transients[idx];
            add(buf, base + core_off::MEAN, &(g_mean_w + g_corr));
            let gq = quat_to_matrix_vjp(&quat, &g_rot_w);
            for i in 0..4 {
                buf[base + core_off::QUAT + i] += gq[i];
            }
            let o = base + core_off::LEN;
            let gv = g_mean_w * (e.t - g.gamma) + g_corr * (e.t_corr - g.gamma) + g_vf + g_vb;
            add(buf, o, &gv);
            gate_terms(o + 3, g.gamma, buf);
            buf[o + 4] -= (g_mean_w + g_corr).dot(&g.velocity);
        }
        Kind::Rigid => {
            let g = &set.rigids[idx];
            let rf = e.rigid.as_ref().expect("rigid intermediates");
            let mut per_frame: Vec<(Mat3, Vec3)> = vec![(Mat3::zeros(), Vec3::zeros()); rf.frames.len()];
            let mut g_mu = Vec3::zeros();
            let mut add_m = |f: usize, gm: Vec3, g_mu: &mut Vec3| {
                let slot = rf.frames.iter().position(|x| x.0 == f).expect("frame cached");
                let tf = &rf.frames[slot].1;
                *g_mu += tf.rotation.transpose() * gm;
                per_frame[slot].0 += gm * g.core.mean.transpose();
                per_frame[slot].1 += gm;
            };
            let frame = e.t as usize;
            add_m(frame, g_mean_w, &mut g_mu);
            add_m(e.t_corr as usize, g_corr, &mut g_mu);
            if let Some((fw, bw)) = e.stencil {
                add_m(fw.1, g_vf, &mut g_mu);
                add_m(fw.0, -g_vf, &mut g_mu);
                add_m(bw.1, g_vb, &mut g_mu);
                add_m(bw.0, -g_vb, &mut g_mu);
            }
            let slot_t = rf.frames.iter().position(|x| x.0 == frame).expect("frame cached");
            let r_t = rf.frames[slot_t].1.rotation;
            per_frame[slot_t].0 += g_rot_w * e.rot_canon.transpose();
            let gq = quat_to_matrix_vjp(&quat, &(r_t.transpose() * g_rot_w));
            for i in 0..4 {
                buf[base + core_off::QUAT + i] += gq[i];
            }
            add(buf, base + core_off::MEAN, &g_mu);
            let wo = base + core_off::LEN;
            let nb = layout.k;
            let mut gw = vec![0.0; nb];
            for ((f, _, cache), (g_r, g_t)) in rf.frames.iter().zip(&per_frame) {
                cache.backward(&set.bases, &g.weights, g_r, g_t, &mut gw, |j, g9| {
                    let at = layout.basis_at(j, *f);
                    for (d, v) in buf[at..at + 9].iter_mut().zip(g9) {
                        *d += v;
                    }
                });
            }
            for (d, v) in buf[wo..wo + nb].iter_mut().zip(&gw) {
                *d += v;
            }
            gate_terms(wo + nb, g.gamma, buf);
        }
    }
}

/// Analytic adjoints of every optimizable parameter of `set` given per-pixel
/// adjoints of the outputs produced by `rasterize_forward(splats, cam)`.
pub fn rasterize_backward(
    splats: &[Splat],
    cam: &CameraFrame,
    outputs: &RenderOutputs,
    grad_outputs: &GradOutputs,
    set: &GaussianSet,
    t: usize,
    t_corr: Option<usize>,
) -> Result<GradientBuffers> {
    let (w, h) = (cam.width(), cam.height());
    if outputs.width != w || outputs.height != h {
        return Err(Error::MismatchedForward(format!(
            "outputs are {}x{}, camera is {w}x{h}",
            outputs.width, outputs.height
        )));
    }
    if grad_outputs.width != w || grad_outputs.height != h || grad_outputs.channels != ch::N {
        return Err(Error::MismatchedForward(format!(
            "adjoints are {}x{}x{}, expected {w}x{h}x{}",
            grad_outputs.width,
            grad_outputs.height,
            grad_outputs.channels,
            ch::N
        )));
    }
    let evals = prepare_evals(set, cam, t, t_corr);
    if evals.len() != splats.len() || evals.iter().zip(splats).any(|(e, s)| e.splat != *s) {
        return Err(Error::MismatchedForward("splats do not match the set at this frame".into()));
    }
    let layout = Layout::of(set);
    let mut grads = GradientBuffers::zeros(layout);
    let per_splat = splat_gradients(splats, cam, grad_outputs);
    for (e, a) in evals.iter().zip(&per_splat) {
        if a.iter().all(|v| *v == 0.0) {
            continue;
        }
        gaussian_backward(e, a, set, cam, &layout, &mut grads.data);
    }
    if !grads.is_finite() {
        return Err(Error::NonFiniteGradient("rasterizer"));
    }
    Ok(grads)
}
