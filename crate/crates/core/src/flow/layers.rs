//! Activation normalization and invertible channel mixing.

use super::params::{ParamRange, ParamSet};
use crate::error::{Error, Result};
use crate::numerics::{FrameMatrix, LuDecomposition, SeededRng, SquareMatrix};

/// Per-channel affine map `y = exp(log_scale) · x + bias`.
///
/// The scale is stored in log form so it stays positive under any update.
#[derive(Debug, Clone)]
pub struct ActNorm {
    pub channels: usize,
    pub log_scale: ParamRange,
    pub bias: ParamRange,
}

impl ActNorm {
    pub fn new(params: &mut ParamSet, name: &str, channels: usize) -> Self {
        Self {
            channels,
            log_scale: params.add(format!("{name}.log_scale"), &[channels]),
            bias: params.add(format!("{name}.bias"), &[channels]),
        }
    }

    pub fn forward(&self, p: &[f64], x: &FrameMatrix) -> (FrameMatrix, f64) {
        let ls = self.log_scale.of(p);
        let b = self.bias.of(p);
        let mut y = x.clone();
        for c in 0..self.channels {
            let s = ls[c].exp();
            y.row_mut(c).iter_mut().for_each(|v| *v = s * *v + b[c]);
        }
        let logdet = x.frames() as f64 * ls.iter().sum::<f64>();
        (y, logdet)
    }

    pub fn inverse(&self, p: &[f64], y: &FrameMatrix) -> FrameMatrix {
        let ls = self.log_scale.of(p);
        let b = self.bias.of(p);
        let mut x = y.clone();
        for c in 0..self.channels {
            let inv = (-ls[c]).exp();
            x.row_mut(c).iter_mut().for_each(|v| *v = (*v - b[c]) * inv);
        }
        x
    }

    /// Returns `dL/dx`; accumulates parameter gradients. `g_logdet` is `dL/d logdet`.
    pub fn backward(
        &self,
        p: &[f64],
        x: &FrameMatrix,
        dy: &FrameMatrix,
        g_logdet: f64,
        grads: &mut [f64],
    ) -> FrameMatrix {
        let ls = self.log_scale.of(p);
        let frames = x.frames() as f64;
        let mut dx = dy.clone();
        let mut d_ls = vec![0.0; self.channels];
        let mut d_b = vec![0.0; self.channels];
        for c in 0..self.channels {
            let s = ls[c].exp();
            let (xr, dyr) = (x.row(c), dy.row(c));
            let mut dot = 0.0;
            let mut sum = 0.0;
            for t in 0..xr.len() {
                dot += dyr[t] * xr[t];
                sum += dyr[t];
            }
            d_ls[c] = s * dot + g_logdet * frames;
            d_b[c] = sum;
            dx.row_mut(c).iter_mut().for_each(|v| *v *= s);
        }
        add_into(self.log_scale.of_mut(grads), &d_ls);
        add_into(self.bias.of_mut(grads), &d_b);
        dx
    }

    /// Set scale and bias so `data` has zero mean and unit variance per channel.
    pub fn initialize_from(&self, p: &mut [f64], data: &[&FrameMatrix]) {
        let mut sum = vec![0.0; self.channels];
        let mut count = 0usize;
        for x in data {
            for (c, s) in sum.iter_mut().enumerate() {
                *s += x.row(c).iter().sum::<f64>();
            }
            count += x.frames();
        }
        let n = count.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let mut var = vec![0.0; self.channels];
        for x in data {
            for (c, v) in var.iter_mut().enumerate() {
                *v += x.row(c).iter().map(|a| (a - mean[c]).powi(2)).sum::<f64>();
            }
        }
        for c in 0..self.channels {
            let std = (var[c] / n).sqrt().max(1e-6);
            self.log_scale.of_mut(p)[c] = -std.ln();
            self.bias.of_mut(p)[c] = -mean[c] / std;
        }
    }
}

/// Dense invertible channel mixing `y[:, t] = W x[:, t]`.
#[derive(Debug, Clone)]
pub struct InvLinear {
    pub channels: usize,
    pub weight: ParamRange,
}

/// Smallest pivot tolerated after an optimizer step before re-jittering.
pub const MIXING_PIVOT_FLOOR: f64 = 1e-6;
pub const MIXING_JITTER: f64 = 1e-4;

impl InvLinear {
    pub fn new(params: &mut ParamSet, name: &str, channels: usize) -> Self {
        Self {
            channels,
            weight: params.add(format!("{name}.weight"), &[channels, channels]),
        }
    }

    /// Random orthogonal initialization via Gram–Schmidt on a Gaussian matrix.
    pub fn init_orthogonal(&self, p: &mut [f64], rng: &mut SeededRng) {
        let n = self.channels;
        let w = self.weight.of_mut(p);
        loop {
            let mut m = rng.standard_normal_vec(n * n);
            let mut ok = true;
            for i in 0..n {
                for j in 0..i {
                    let dot: f64 = (0..n).map(|k| m[i * n + k] * m[j * n + k]).sum();
                    for k in 0..n {
                        m[i * n + k] -= dot * m[j * n + k];
                    }
                }
                let norm = (0..n).map(|k| m[i * n + k].powi(2)).sum::<f64>().sqrt();
                if norm < 1e-8 {
                    ok = false;
                    break;
                }
                for k in 0..n {
                    m[i * n + k] /= norm;
                }
            }
            if ok {
                w.copy_from_slice(&m);
                return;
            }
        }
    }

    pub fn set_identity(&self, p: &mut [f64]) {
        let n = self.channels;
        let w = self.weight.of_mut(p);
        w.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
    }

    pub fn matrix(&self, p: &[f64]) -> SquareMatrix {
        SquareMatrix::from_vec(self.channels, self.weight.of(p).to_vec())
            .expect("mixing weight is square and finite")
    }

    fn lu(&self, p: &[f64]) -> Result<LuDecomposition> {
        LuDecomposition::new(self.channels, self.weight.of(p))
    }

    pub fn forward(&self, p: &[f64], x: &FrameMatrix) -> Result<(FrameMatrix, f64)> {
        let lad = self.lu(p)?.logabsdet();
        let mut y = FrameMatrix::zeros(self.channels, x.frames());
        crate::numerics::matmul_frames(
            self.weight.of(p),
            self.channels,
            self.channels,
            x.as_slice(),
            x.frames(),
            y.as_mut_slice(),
        );
        Ok((y, x.frames() as f64 * lad))
    }

    /// Solves `W x = y` per frame through one LU factorization.
    pub fn inverse(&self, p: &[f64], y: &FrameMatrix) -> Result<FrameMatrix> {
        let lu = self.lu(p)?;
        let mut x = FrameMatrix::zeros(self.channels, y.frames());
        let mut col = vec![0.0; self.channels];
        for t in 0..y.frames() {
            for (c, v) in col.iter_mut().enumerate() {
                *v = y.get(c, t);
            }
            lu.solve_in_place(&mut col);
            for (c, v) in col.iter().enumerate() {
                x.set(c, t, *v);
            }
        }
        Ok(x)
    }

    pub fn backward(
        &self,
        p: &[f64],
        x: &FrameMatrix,
        dy: &FrameMatrix,
        g_logdet: f64,
        grads: &mut [f64],
    ) -> Result<FrameMatrix> {
        let n = self.channels;
        let w = self.weight.of(p);
        let frames = x.frames();
        let mut dx = FrameMatrix::zeros(n, frames);
        crate::numerics::matmul_frames_transposed(w, n, n, dy.as_slice(), frames, dx.as_mut_slice());
        let dw = self.weight.of_mut(grads);
        crate::numerics::outer_frames(dw, n, n, dy.as_slice(), x.as_slice(), frames);
        if g_logdet != 0.0 {
            // d ln|det W| / dW = W^{-T}
            let inv = self.lu(p)?.inverse();
            let coef = g_logdet * frames as f64;
            for i in 0..n {
                for j in 0..n {
                    dw[i * n + j] += coef * inv.get(j, i);
                }
            }
        }
        Ok(dx)
    }

    /// Add `MIXING_JITTER · I` until the smallest pivot clears the floor.
    /// Returns the number of jitters applied.
    pub fn ensure_nonsingular(&self, p: &mut [f64]) -> usize {
        let n = self.channels;
        let mut applied = 0;
        loop {
            let healthy = match LuDecomposition::new(n, self.weight.of(p)) {
                Ok(lu) => lu.min_pivot() >= MIXING_PIVOT_FLOOR,
                Err(Error::Singular { .. }) => false,
                Err(_) => false,
            };
            if healthy || applied >= 10_000 {
                return applied;
            }
            let w = self.weight.of_mut(p);
            for i in 0..n {
                w[i * n + i] += MIXING_JITTER;
            }
            applied += 1;
        }
    }
}

pub(crate) fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, logabsdet, relative_error};

    fn random_frames(rng: &mut SeededRng, c: usize, t: usize) -> FrameMatrix {
        FrameMatrix::from_vec(c, t, rng.standard_normal_vec(c * t)).unwrap()
    }

    #[test]
    fn actnorm_identity_and_closed_form_logdet() {
        let mut ps = ParamSet::new();
        let l = ActNorm::new(&mut ps, "an", 2);
        let x = FrameMatrix::from_fn(2, 5, |c, t| (c + 2 * t) as f64);
        let (y, ld) = l.forward(ps.values(), &x);
        assert_eq!(y, x);
        assert_eq!(ld, 0.0);

        let p = ps.values_mut();
        l.log_scale.of_mut(p).copy_from_slice(&[2f64.ln(), 3f64.ln()]);
        let (_, ld) = l.forward(ps.values(), &x);
        assert!((ld - 5.0 * 6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn actnorm_data_init_standardizes_batch() {
        let mut rng = SeededRng::new(1);
        let mut ps = ParamSet::new();
        let l = ActNorm::new(&mut ps, "an", 3);
        let batch: Vec<FrameMatrix> = (0..4)
            .map(|i| {
                let mut m = random_frames(&mut rng, 3, 5 + i);
                for c in 0..3 {
                    m.row_mut(c).iter_mut().for_each(|v| *v = 4.0 * *v + c as f64 * 7.0 - 2.0);
                }
                m
            })
            .collect();
        let refs: Vec<&FrameMatrix> = batch.iter().collect();
        l.initialize_from(ps.values_mut(), &refs);
        // Batch statistics recomputed on the outputs, independently of the init path.
        let outs: Vec<FrameMatrix> = batch.iter().map(|x| l.forward(ps.values(), x).0).collect();
        for c in 0..3 {
            let vals: Vec<f64> = outs.iter().flat_map(|o| o.row(c).to_vec()).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            assert!(mean.abs() <= 1e-8, "mean {mean}");
            assert!((std - 1.0).abs() <= 1e-6, "std {std}");
        }
    }

    #[test]
    fn invlinear_identity_and_rotation() {
        let mut ps = ParamSet::new();
        let l = InvLinear::new(&mut ps, "mix", 2);
        l.set_identity(ps.values_mut());
        let x = FrameMatrix::from_fn(2, 3, |c, t| (c * 3 + t) as f64);
        let (y, ld) = l.forward(ps.values(), &x).unwrap();
        assert_eq!(y, x);
        assert_eq!(ld, 0.0);
        let th: f64 = 0.7;
        l.weight
            .of_mut(ps.values_mut())
            .copy_from_slice(&[th.cos(), -th.sin(), th.sin(), th.cos()]);
        let (_, ld) = l.forward(ps.values(), &x).unwrap();
        assert!(ld.abs() < 1e-14);
    }

    #[test]
    fn invlinear_random_logdet_and_round_trip() {
        let mut rng = SeededRng::new(4);
        let mut ps = ParamSet::new();
        let l = InvLinear::new(&mut ps, "mix", 4);
        l.weight.of_mut(ps.values_mut()).copy_from_slice(&rng.standard_normal_vec(16));
        let x = random_frames(&mut rng, 4, 3);
        let (y, ld) = l.forward(ps.values(), &x).unwrap();
        let oracle = 3.0 * logabsdet(&l.matrix(ps.values())).unwrap();
        assert!((ld - oracle).abs() <= 1e-12 * oracle.abs().max(1.0));
        let back = l.inverse(ps.values(), &y).unwrap();
        assert!(back.max_abs_diff(&x) <= 1e-10);
    }

    #[test]
    fn invlinear_singular_weight_errors() {
        let mut ps = ParamSet::new();
        let l = InvLinear::new(&mut ps, "mix", 2);
        let x = FrameMatrix::zeros(2, 1);
        assert!(matches!(l.forward(ps.values(), &x), Err(Error::Singular { .. })));
        assert!(l.ensure_nonsingular(ps.values_mut()) > 0);
        assert!(l.forward(ps.values(), &x).is_ok());
    }

    #[test]
    fn logdet_gradient_is_frames_times_inverse_transpose() {
        let mut rng = SeededRng::new(12);
        let mut ps = ParamSet::new();
        let l = InvLinear::new(&mut ps, "mix", 3);
        l.weight.of_mut(ps.values_mut()).copy_from_slice(&rng.standard_normal_vec(9));
        let frames = 5;
        let x = random_frames(&mut rng, 3, frames);
        let mut grads = ps.zeros_like();
        l.backward(ps.values(), &x, &FrameMatrix::zeros(3, frames), 1.0, &mut grads)
            .unwrap();
        let inv = l.matrix(ps.values()).lu().unwrap().inverse();
        for i in 0..3 {
            for j in 0..3 {
                assert!((grads[i * 3 + j] - frames as f64 * inv.get(j, i)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_gradients_match_finite_differences() {
        let mut rng = SeededRng::new(6);
        let mut ps = ParamSet::new();
        let an = ActNorm::new(&mut ps, "an", 3);
        let mix = InvLinear::new(&mut ps, "mix", 3);
        for v in ps.values_mut().iter_mut() {
            *v = 0.3 * rng.standard_normal();
        }
        let wr = mix.weight;
        for i in 0..3 {
            wr.of_mut(ps.values_mut())[i * 3 + i] += 1.0;
        }
        let x = random_frames(&mut rng, 3, 4);
        let target = random_frames(&mut rng, 3, 4);
        let loss = |p: &[f64], x: &FrameMatrix| {
            let (h, l1) = an.forward(p, x);
            let (y, l2) = mix.forward(p, &h).unwrap();
            let fit: f64 = y.as_slice().iter().zip(target.as_slice()).map(|(a, b)| a * b).sum();
            fit - 0.7 * (l1 + l2)
        };
        let p0 = ps.values().to_vec();
        let (h, _) = an.forward(&p0, &x);
        let mut grads = ps.zeros_like();
        let dh = mix.backward(&p0, &h, &target, -0.7, &mut grads).unwrap();
        let dx = an.backward(&p0, &x, &dh, -0.7, &mut grads);
        let fd = finite_diff_grad(|p| loss(p, &x), &p0, 1e-6).unwrap();
        assert!(relative_error(&grads, &fd) < 1e-8);
        let fdx = finite_diff_grad(
            |xv| loss(&p0, &FrameMatrix::from_vec(3, 4, xv.to_vec()).unwrap()),
            x.as_slice(),
            1e-6,
        )
        .unwrap();
        assert!(relative_error(dx.as_slice(), &fdx) < 1e-8);
    }
}
