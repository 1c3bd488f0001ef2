//! Conditioned affine coupling.
//!
//! Channels are split into a pass-through half `a` and a transformed half `b`.
//! A small gated convolutional network reads `a` plus conditioning and emits a
//! shift and a pre-scale `r` for `b`:
//!
//! ```text
//! y_a = x_a
//! y_b = exp(tanh(r)) ⊙ x_b + shift
//! logdet = Σ tanh(r)
//! ```
//!
//! The scale is confined to `[e⁻¹, e]`. Each gated layer computes
//! `tanh(u) ⊙ σ(v)` with `[u; v] = conv(h) + V·frames + U·speaker + bias`.

use super::cond::FlowCond;
use super::layers::add_into;
use super::params::{ParamRange, ParamSet};
use crate::error::{Error, Result};
use crate::numerics::{conv1d_backward, conv1d_forward, matmul_frames, matmul_frames_transposed, outer_frames, FrameMatrix};

#[derive(Debug, Clone)]
struct GatedLayer {
    in_ch: usize,
    conv: ParamRange,
    frame_proj: ParamRange,
    speaker_proj: ParamRange,
    bias: ParamRange,
}

#[derive(Debug, Clone)]
pub struct Coupling {
    pub channels: usize,
    /// When set, the first half is transformed and the second passes through.
    pub flip: bool,
    hidden: usize,
    kernel: usize,
    frame_dim: usize,
    speaker_dim: usize,
    layers: Vec<GatedLayer>,
    out_w: ParamRange,
    out_b: ParamRange,
}

/// Intermediate values of the coupling network for one utterance.
#[derive(Debug, Clone)]
pub struct CouplingTrace {
    /// Inputs to each gated layer; entry 0 is `x_a`.
    inputs: Vec<Vec<f64>>,
    tanh_part: Vec<Vec<f64>>,
    gate_part: Vec<Vec<f64>>,
    last_hidden: Vec<f64>,
    /// `tanh(r)` for the transformed half.
    log_scale: Vec<f64>,
}

impl CouplingTrace {
    pub fn log_scales(&self) -> &[f64] {
        &self.log_scale
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Coupling {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        channels: usize,
        flip: bool,
        hidden: usize,
        kernel: usize,
        gated_layers: usize,
        frame_dim: usize,
        speaker_dim: usize,
    ) -> Self {
        assert!(channels >= 2, "coupling needs at least two channels");
        let n_pass = channels / 2;
        let n_trans = channels - n_pass;
        let mut layers = Vec::with_capacity(gated_layers);
        for l in 0..gated_layers {
            let in_ch = if l == 0 { n_pass } else { hidden };
            layers.push(GatedLayer {
                in_ch,
                conv: params.add(format!("{name}.gated{l}.conv"), &[2 * hidden, in_ch, kernel]),
                frame_proj: params.add(format!("{name}.gated{l}.frame_proj"), &[2 * hidden, frame_dim]),
                speaker_proj: params.add(format!("{name}.gated{l}.speaker_proj"), &[2 * hidden, speaker_dim]),
                bias: params.add(format!("{name}.gated{l}.bias"), &[2 * hidden]),
            });
        }
        let out_w = params.add(format!("{name}.out.weight"), &[2 * n_trans, hidden]);
        let out_b = params.add(format!("{name}.out.bias"), &[2 * n_trans]);
        Self {
            channels,
            flip,
            hidden,
            kernel,
            frame_dim,
            speaker_dim,
            layers,
            out_w,
            out_b,
        }
    }

    pub fn n_pass(&self) -> usize {
        self.channels / 2
    }

    pub fn n_trans(&self) -> usize {
        self.channels - self.n_pass()
    }

    /// Channel ranges `(pass, transformed)`.
    fn ranges(&self) -> ((usize, usize), (usize, usize)) {
        let c = self.channels;
        if self.flip {
            let nt = self.n_trans();
            ((nt, c), (0, nt))
        } else {
            let np = self.n_pass();
            ((0, np), (np, c))
        }
    }

    /// Random weights for the hidden layers; the output head stays zero so a
    /// fresh coupling is the identity.
    pub fn init_hidden(&self, p: &mut [f64], rng: &mut crate::numerics::SeededRng) {
        for l in &self.layers {
            let std = 1.0 / ((l.in_ch * self.kernel) as f64).sqrt();
            for v in l.conv.of_mut(p) {
                *v = std * rng.standard_normal();
            }
            let fstd = 1.0 / (self.frame_dim as f64).sqrt();
            for v in l.frame_proj.of_mut(p) {
                *v = fstd * rng.standard_normal();
            }
            let sstd = 1.0 / (self.speaker_dim as f64).sqrt();
            for v in l.speaker_proj.of_mut(p) {
                *v = sstd * rng.standard_normal();
            }
        }
    }

    fn check_cond(&self, cond: &FlowCond, frames: usize) -> Result<()> {
        if cond.frames.frames() != frames || cond.frames.channels() != self.frame_dim {
            return Err(Error::Shape(format!(
                "coupling conditioning is {}x{}, expected {}x{frames}",
                cond.frames.channels(),
                cond.frames.frames(),
                self.frame_dim
            )));
        }
        if cond.speaker.len() != self.speaker_dim {
            return Err(Error::Shape(format!(
                "speaker vector has {} dims, coupling expects {}",
                cond.speaker.len(),
                self.speaker_dim
            )));
        }
        Ok(())
    }

    /// Network output `[shift; r]`, shape `2·n_trans × frames`, with its trace.
    fn network(&self, p: &[f64], x_pass: &[f64], cond: &FlowCond, frames: usize) -> (Vec<f64>, CouplingTrace) {
        let h2 = 2 * self.hidden;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut tanh_part = Vec::with_capacity(self.layers.len());
        let mut gate_part = Vec::with_capacity(self.layers.len());
        let mut h = x_pass.to_vec();
        for l in &self.layers {
            let mut a = vec![0.0; h2 * frames];
            conv1d_forward(l.conv.of(p), h2, l.in_ch, self.kernel, &h, frames, &mut a);
            matmul_frames(l.frame_proj.of(p), h2, self.frame_dim, cond.frames.as_slice(), frames, &mut a);
            let sp = l.speaker_proj.of(p);
            let b = l.bias.of(p);
            for o in 0..h2 {
                let mut off = b[o];
                for (k, s) in cond.speaker.iter().enumerate() {
                    off += sp[o * self.speaker_dim + k] * s;
                }
                a[o * frames..(o + 1) * frames].iter_mut().for_each(|v| *v += off);
            }
            let hf = self.hidden * frames;
            let th: Vec<f64> = a[..hf].iter().map(|v| v.tanh()).collect();
            let sg: Vec<f64> = a[hf..].iter().map(|&v| sigmoid(v)).collect();
            let next: Vec<f64> = th.iter().zip(&sg).map(|(t, s)| t * s).collect();
            inputs.push(std::mem::replace(&mut h, next));
            tanh_part.push(th);
            gate_part.push(sg);
        }
        let nt = self.n_trans();
        let mut out = vec![0.0; 2 * nt * frames];
        matmul_frames(self.out_w.of(p), 2 * nt, self.hidden, &h, frames, &mut out);
        let ob = self.out_b.of(p);
        for o in 0..2 * nt {
            out[o * frames..(o + 1) * frames].iter_mut().for_each(|v| *v += ob[o]);
        }
        let log_scale: Vec<f64> = out[nt * frames..].iter().map(|v| v.tanh()).collect();
        (
            out,
            CouplingTrace {
                inputs,
                tanh_part,
                gate_part,
                last_hidden: h,
                log_scale,
            },
        )
    }

    pub fn forward_traced(
        &self,
        p: &[f64],
        x: &FrameMatrix,
        cond: &FlowCond,
    ) -> Result<(FrameMatrix, f64, CouplingTrace)> {
        let frames = x.frames();
        self.check_cond(cond, frames)?;
        let ((pa, pb), (ta, tb)) = self.ranges();
        let (out, trace) = self.network(p, x.rows(pa, pb), cond, frames);
        let nt = self.n_trans();
        let shift = &out[..nt * frames];
        let mut y = x.clone();
        let yb = y.rows_mut(ta, tb);
        for i in 0..nt * frames {
            yb[i] = trace.log_scale[i].exp() * yb[i] + shift[i];
        }
        let logdet = trace.log_scale.iter().sum();
        Ok((y, logdet, trace))
    }

    pub fn forward(&self, p: &[f64], x: &FrameMatrix, cond: &FlowCond) -> Result<(FrameMatrix, f64)> {
        let (y, ld, _) = self.forward_traced(p, x, cond)?;
        Ok((y, ld))
    }

    pub fn inverse(&self, p: &[f64], y: &FrameMatrix, cond: &FlowCond) -> Result<FrameMatrix> {
        let frames = y.frames();
        self.check_cond(cond, frames)?;
        let ((pa, pb), (ta, tb)) = self.ranges();
        let (out, trace) = self.network(p, y.rows(pa, pb), cond, frames);
        let nt = self.n_trans();
        let shift = &out[..nt * frames];
        let mut x = y.clone();
        let xb = x.rows_mut(ta, tb);
        for i in 0..nt * frames {
            xb[i] = (xb[i] - shift[i]) * (-trace.log_scale[i]).exp();
        }
        Ok(x)
    }

    /// Back-propagate `dy` (and `g_logdet = dL/d logdet`) through the layer.
    /// Returns `dL/dx`; accumulates parameter gradients into `grads` and, when
    /// given, conditioning-feature gradients into `d_cond`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        p: &[f64],
        x: &FrameMatrix,
        cond: &FlowCond,
        trace: &CouplingTrace,
        dy: &FrameMatrix,
        g_logdet: f64,
        grads: &mut [f64],
        d_cond: Option<&mut FrameMatrix>,
    ) -> FrameMatrix {
        let frames = x.frames();
        let nt = self.n_trans();
        let ((pa, pb), (ta, tb)) = self.ranges();
        let xb = x.rows(ta, tb);
        let dyb = dy.rows(ta, tb);

        let mut dx = dy.clone();
        let mut d_out = vec![0.0; 2 * nt * frames];
        {
            let dxb = dx.rows_mut(ta, tb);
            for i in 0..nt * frames {
                let ls = trace.log_scale[i];
                let s = ls.exp();
                dxb[i] = s * dyb[i];
                d_out[i] = dyb[i];
                // d/dr of (s·x_b) and of tanh(r) both carry (1 - tanh²).
                d_out[nt * frames + i] = (dyb[i] * xb[i] * s + g_logdet) * (1.0 - ls * ls);
            }
        }

        let ob = self.out_b.of_mut(grads);
        for o in 0..2 * nt {
            ob[o] += d_out[o * frames..(o + 1) * frames].iter().sum::<f64>();
        }
        outer_frames(self.out_w.of_mut(grads), 2 * nt, self.hidden, &d_out, &trace.last_hidden, frames);
        let mut dh = vec![0.0; self.hidden * frames];
        matmul_frames_transposed(self.out_w.of(p), 2 * nt, self.hidden, &d_out, frames, &mut dh);

        let h2 = 2 * self.hidden;
        let hf = self.hidden * frames;
        let mut d_cond = d_cond;
        for (li, l) in self.layers.iter().enumerate().rev() {
            let th = &trace.tanh_part[li];
            let sg = &trace.gate_part[li];
            let mut da = vec![0.0; h2 * frames];
            for i in 0..hf {
                da[i] = dh[i] * sg[i] * (1.0 - th[i] * th[i]);
                da[hf + i] = dh[i] * th[i] * sg[i] * (1.0 - sg[i]);
            }
            let mut row_sums = vec![0.0; h2];
            for (o, rs) in row_sums.iter_mut().enumerate() {
                *rs = da[o * frames..(o + 1) * frames].iter().sum();
            }
            add_into(l.bias.of_mut(grads), &row_sums);
            let dsp = l.speaker_proj.of_mut(grads);
            for o in 0..h2 {
                for (k, s) in cond.speaker.iter().enumerate() {
                    dsp[o * self.speaker_dim + k] += row_sums[o] * s;
                }
            }
            outer_frames(l.frame_proj.of_mut(grads), h2, self.frame_dim, &da, cond.frames.as_slice(), frames);
            if let Some(dc) = d_cond.as_deref_mut() {
                matmul_frames_transposed(l.frame_proj.of(p), h2, self.frame_dim, &da, frames, dc.as_mut_slice());
            }
            let input = &trace.inputs[li];
            let mut d_in = vec![0.0; l.in_ch * frames];
            conv1d_backward(l.conv.of(p), h2, l.in_ch, self.kernel, input, frames, &da, l.conv.of_mut(grads), Some(&mut d_in));
            dh = d_in;
        }
        add_into(dx.rows_mut(pa, pb), &dh);
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, logabsdet, relative_error, SeededRng, SquareMatrix};

    fn setup(channels: usize, frames: usize, flip: bool, seed: u64) -> (ParamSet, Coupling, FlowCond, FrameMatrix) {
        let mut rng = SeededRng::new(seed);
        let mut ps = ParamSet::new();
        let layer = Coupling::new(&mut ps, "cp", channels, flip, 5, 3, 2, 4, 3);
        for v in ps.values_mut() {
            *v = 0.5 * rng.standard_normal();
        }
        let cond = FlowCond {
            speaker: rng.standard_normal_vec(3),
            frames: FrameMatrix::from_vec(4, frames, rng.standard_normal_vec(4 * frames)).unwrap(),
        };
        let x = FrameMatrix::from_vec(channels, frames, rng.standard_normal_vec(channels * frames)).unwrap();
        (ps, layer, cond, x)
    }

    #[test]
    fn zeroed_network_is_identity() {
        let (mut ps, layer, cond, x) = setup(4, 3, false, 1);
        ps.values_mut().iter_mut().for_each(|v| *v = 0.0);
        let (y, ld) = layer.forward(ps.values(), &x, &cond).unwrap();
        assert_eq!(y, x);
        assert_eq!(ld, 0.0);
    }

    #[test]
    fn inverse_recovers_input() {
        for seed in 0..20 {
            for flip in [false, true] {
                let (ps, layer, cond, x) = setup(5, 4, flip, seed);
                let (y, _) = layer.forward(ps.values(), &x, &cond).unwrap();
                let back = layer.inverse(ps.values(), &y, &cond).unwrap();
                assert!(back.max_abs_diff(&x) <= 1e-9);
            }
        }
    }

    #[test]
    fn pass_through_half_is_untouched_and_scales_bounded() {
        let (mut ps, layer, cond, x) = setup(4, 3, false, 2);
        ps.values_mut().iter_mut().for_each(|v| *v *= 20.0);
        let (y, _, tr) = layer.forward_traced(ps.values(), &x, &cond).unwrap();
        assert_eq!(y.rows(0, 2), x.rows(0, 2));
        for ls in tr.log_scales() {
            let s = ls.exp();
            assert!((-1f64).exp() <= s && s <= 1f64.exp());
        }
    }

    #[test]
    fn logdet_matches_numerical_jacobian() {
        for flip in [false, true] {
            let (ps, layer, cond, x) = setup(4, 2, flip, 3);
            let n = x.len();
            let f = |v: &[f64]| {
                let xm = FrameMatrix::from_vec(4, 2, v.to_vec()).unwrap();
                layer.forward(ps.values(), &xm, &cond).unwrap().0.into_vec()
            };
            let h = 1e-6;
            let mut jac = vec![0.0; n * n];
            let mut v = x.as_slice().to_vec();
            for j in 0..n {
                let o = v[j];
                v[j] = o + h;
                let plus = f(&v);
                v[j] = o - h;
                let minus = f(&v);
                v[j] = o;
                for i in 0..n {
                    jac[i * n + j] = (plus[i] - minus[i]) / (2.0 * h);
                }
            }
            let oracle = logabsdet(&SquareMatrix::from_vec(n, jac).unwrap()).unwrap();
            let (_, ld) = layer.forward(ps.values(), &x, &cond).unwrap();
            assert!((ld - oracle).abs() <= 1e-6 * oracle.abs().max(1.0), "{ld} vs {oracle}");
        }
    }

    #[test]
    fn conditioning_length_mismatch_errors() {
        let (ps, layer, mut cond, x) = setup(4, 3, false, 4);
        cond.frames = FrameMatrix::zeros(4, 2);
        assert!(matches!(layer.forward(ps.values(), &x, &cond), Err(Error::Shape(_))));
    }

    #[test]
    fn gradients_match_finite_differences() {
        for flip in [false, true] {
            let (ps, layer, cond, x) = setup(5, 4, flip, 9);
            let mut rng = SeededRng::new(77);
            let target = rng.standard_normal_vec(x.len());
            let loss = |p: &[f64], x: &FrameMatrix, c: &FlowCond| {
                let (y, ld) = layer.forward(p, x, c).unwrap();
                y.as_slice().iter().zip(&target).map(|(a, b)| a * b).sum::<f64>() - 0.3 * ld
            };
            let p0 = ps.values().to_vec();
            let (_, _, tr) = layer.forward_traced(&p0, &x, &cond).unwrap();
            let dy = FrameMatrix::from_vec(5, 4, target.clone()).unwrap();
            let mut grads = ps.zeros_like();
            let mut dc = FrameMatrix::zeros(4, 4);
            let dx = layer.backward(&p0, &x, &cond, &tr, &dy, -0.3, &mut grads, Some(&mut dc));

            let fd = finite_diff_grad(|p| loss(p, &x, &cond), &p0, 1e-6).unwrap();
            assert!(relative_error(&grads, &fd) < 1e-7);
            let fdx = finite_diff_grad(
                |v| loss(&p0, &FrameMatrix::from_vec(5, 4, v.to_vec()).unwrap(), &cond),
                x.as_slice(),
                1e-6,
            )
            .unwrap();
            assert!(relative_error(dx.as_slice(), &fdx) < 1e-7);
            let fdc = finite_diff_grad(
                |v| {
                    let c = FlowCond {
                        speaker: cond.speaker.clone(),
                        frames: FrameMatrix::from_vec(4, 4, v.to_vec()).unwrap(),
                    };
                    loss(&p0, &x, &c)
                },
                cond.frames.as_slice(),
                1e-6,
            )
            .unwrap();
            assert!(relative_error(dc.as_slice(), &fdc) < 1e-7);
        }
    }
}
