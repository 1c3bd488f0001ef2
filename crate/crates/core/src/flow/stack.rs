//! The full multi-scale stack: squeeze, flow steps and splits.

use super::config::FlowConfig;
use super::cond::FlowCond;
use super::coupling::{Coupling, CouplingTrace};
use super::layers::{ActNorm, InvLinear};
use super::params::ParamSet;
use super::squeeze::{merge, split, squeeze, trim_for_squeeze, unsqueeze};
use crate::error::{Error, Result};
use crate::numerics::{FrameMatrix, SeededRng};

/// Latent produced by [`FlowStack::encode`]; lossless by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBundle {
    pub final_latent: FrameMatrix,
    /// One entry per split point, in the order they were factored out.
    pub splits: Vec<FrameMatrix>,
    /// Trailing input frames dropped so the squeeze divides evenly.
    pub trimmed_frames: usize,
}

impl LatentBundle {
    pub fn element_count(&self) -> usize {
        self.final_latent.len() + self.splits.iter().map(FrameMatrix::len).sum::<usize>()
    }

    /// Split parts in order, then the final latent.
    pub fn parts(&self) -> impl Iterator<Item = &FrameMatrix> {
        self.splits.iter().chain(std::iter::once(&self.final_latent))
    }

    pub fn parts_mut(&mut self) -> impl Iterator<Item = &mut FrameMatrix> {
        self.splits.iter_mut().chain(std::iter::once(&mut self.final_latent))
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.parts().flat_map(|m| m.as_slice().iter().copied()).collect()
    }

    /// Same layout, every element zero.
    pub fn zeros_like(&self) -> LatentBundle {
        LatentBundle {
            final_latent: FrameMatrix::zeros(self.final_latent.channels(), self.final_latent.frames()),
            splits: self
                .splits
                .iter()
                .map(|s| FrameMatrix::zeros(s.channels(), s.frames()))
                .collect(),
            trimmed_frames: self.trimmed_frames,
        }
    }

    pub fn same_layout(&self, other: &LatentBundle) -> bool {
        self.splits.len() == other.splits.len()
            && self.parts().zip(other.parts()).all(|(a, b)| a.channels() == b.channels() && a.frames() == b.frames())
    }

    /// Route an already-squeezed matrix through the split schedule without any
    /// flow step in between. Used to lay per-frame quantities out exactly like
    /// the latent.
    pub fn from_squeezed(config: &FlowConfig, squeezed: &FrameMatrix, trimmed_frames: usize) -> Result<LatentBundle> {
        if squeezed.channels() != config.squeezed_channels() {
            return Err(Error::Shape(format!(
                "squeezed input has {} channels, schedule expects {}",
                squeezed.channels(),
                config.squeezed_channels()
            )));
        }
        let mut h = squeezed.clone();
        let mut splits = Vec::with_capacity(config.n_splits());
        for i in 0..config.n_steps {
            if config.splits_after(i) {
                let (kept, fac) = split(&h, config.split_channels)?;
                splits.push(fac);
                h = kept;
            }
        }
        Ok(LatentBundle {
            final_latent: h,
            splits,
            trimmed_frames,
        })
    }

    /// Inverse of [`from_squeezed`](Self::from_squeezed).
    pub fn to_squeezed(&self) -> Result<FrameMatrix> {
        let mut h = self.final_latent.clone();
        for s in self.splits.iter().rev() {
            h = merge(&h, s)?;
        }
        Ok(h)
    }
}

#[derive(Debug, Clone)]
struct FlowStep {
    actnorm: ActNorm,
    mixing: InvLinear,
    coupling: Coupling,
}

/// Everything the backward pass needs from one encode.
#[derive(Debug, Clone)]
pub struct EncodeTrace {
    actnorm_in: Vec<FrameMatrix>,
    mixing_in: Vec<FrameMatrix>,
    coupling_in: Vec<FrameMatrix>,
    coupling: Vec<CouplingTrace>,
}

impl EncodeTrace {
    /// Every coupling `tanh(r)` value, for scale-bound checks.
    pub fn coupling_log_scales(&self) -> impl Iterator<Item = f64> + '_ {
        self.coupling.iter().flat_map(|t| t.log_scales().iter().copied())
    }
}

/// Ordered invertible layers with exact log-determinant accounting.
#[derive(Debug, Clone)]
pub struct FlowStack {
    config: FlowConfig,
    params: ParamSet,
    steps: Vec<FlowStep>,
    actnorm_initialized: bool,
}

impl FlowStack {
    /// Allocate every layer with all parameters zero.
    fn allocate(config: &FlowConfig) -> Result<FlowStack> {
        config.validate()?;
        let mut params = ParamSet::new();
        let chans = config.step_channels();
        let mut steps = Vec::with_capacity(config.n_steps);
        for (i, &c) in chans.iter().enumerate() {
            let name = format!("step{i}");
            steps.push(FlowStep {
                actnorm: ActNorm::new(&mut params, &format!("{name}.actnorm"), c),
                mixing: InvLinear::new(&mut params, &format!("{name}.mixing"), c),
                coupling: Coupling::new(
                    &mut params,
                    &format!("{name}.coupling"),
                    c,
                    i % 2 == 1,
                    config.hidden_channels,
                    config.kernel_width,
                    config.gated_layers,
                    config.frame_cond_dim(),
                    config.speaker_dim,
                ),
            });
        }
        Ok(FlowStack {
            config: config.clone(),
            params,
            steps,
            actnorm_initialized: false,
        })
    }

    /// Fresh stack ready for training: orthogonal mixing, random coupling
    /// hidden layers, zero coupling heads. Actnorm awaits data initialization.
    pub fn new(config: &FlowConfig, rng: &mut SeededRng) -> Result<FlowStack> {
        let mut s = Self::allocate(config)?;
        let p = s.params.values_mut();
        for st in &s.steps {
            st.mixing.init_orthogonal(p, rng);
            st.coupling.init_hidden(p, rng);
        }
        Ok(s)
    }

    /// The identity map: unit actnorm, identity mixing, zeroed couplings.
    pub fn identity(config: &FlowConfig) -> Result<FlowStack> {
        let mut s = Self::allocate(config)?;
        let p = s.params.values_mut();
        for st in &s.steps {
            st.mixing.set_identity(p);
        }
        s.actnorm_initialized = true;
        Ok(s)
    }

    /// Every parameter randomized (coupling heads included), so no layer is
    /// the identity. Intended for property tests.
    pub fn random(config: &FlowConfig, rng: &mut SeededRng, scale: f64) -> Result<FlowStack> {
        let mut s = Self::allocate(config)?;
        let p = s.params.values_mut();
        for v in p.iter_mut() {
            *v = scale * rng.standard_normal();
        }
        for st in &s.steps {
            st.mixing.init_orthogonal(p, rng);
            // Perturbation norm stays O(0.4) whatever the width.
            let jitter = 0.2 / (st.mixing.channels as f64).sqrt();
            let w = st.mixing.weight.of_mut(p);
            for v in w.iter_mut() {
                *v += jitter * rng.standard_normal();
            }
            st.mixing.ensure_nonsingular(p);
        }
        s.actnorm_initialized = true;
        Ok(s)
    }

    pub fn from_params(config: &FlowConfig, params: ParamSet, actnorm_initialized: bool) -> Result<FlowStack> {
        let mut s = Self::allocate(config)?;
        if s.params.entries() != params.entries() {
            return Err(Error::Shape("parameter manifest does not match flow configuration".into()));
        }
        s.params = params;
        s.actnorm_initialized = actnorm_initialized;
        Ok(s)
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn actnorm_initialized(&self) -> bool {
        self.actnorm_initialized
    }

    /// Re-jitter any mixing matrix that drifted near singularity. Returns the
    /// total number of jitters applied.
    pub fn ensure_nonsingular(&mut self) -> usize {
        let p = self.params.values_mut();
        self.steps.iter().map(|st| st.mixing.ensure_nonsingular(p)).sum()
    }

    fn check_cond(&self, cond: &FlowCond, squeezed_frames: usize) -> Result<()> {
        if cond.frames.frames() != squeezed_frames {
            return Err(Error::Shape(format!(
                "conditioning covers {} squeezed frames, input has {squeezed_frames}",
                cond.frames.frames()
            )));
        }
        Ok(())
    }

    /// Trim, squeeze and check a raw input.
    fn prepare(&self, x: &FrameMatrix, cond: &FlowCond) -> Result<(FrameMatrix, usize)> {
        if x.channels() != self.config.mel_dim {
            return Err(Error::Shape(format!(
                "input has {} channels, flow expects {}",
                x.channels(),
                self.config.mel_dim
            )));
        }
        let (xt, trimmed) = trim_for_squeeze(x, self.config.squeeze_factor);
        if xt.frames() == 0 {
            return Err(Error::Shape(format!(
                "{} frames leave nothing after squeeze by {}",
                x.frames(),
                self.config.squeeze_factor
            )));
        }
        let h = squeeze(&xt, self.config.squeeze_factor)?;
        self.check_cond(cond, h.frames())?;
        Ok((h, trimmed))
    }

    fn run_forward(
        &self,
        x: &FrameMatrix,
        cond: &FlowCond,
        mut trace: Option<&mut EncodeTrace>,
    ) -> Result<(LatentBundle, f64)> {
        let p = self.params.values();
        let (mut h, trimmed) = self.prepare(x, cond)?;
        let mut logdet = 0.0;
        let mut splits = Vec::with_capacity(self.config.n_splits());
        for (i, st) in self.steps.iter().enumerate() {
            let (a, ld_a) = st.actnorm.forward(p, &h);
            let (m, ld_m) = st.mixing.forward(p, &a)?;
            let (c, ld_c, ct) = st.coupling.forward_traced(p, &m, cond)?;
            logdet += ld_a + ld_m + ld_c;
            if let Some(tr) = trace.as_deref_mut() {
                tr.actnorm_in.push(std::mem::replace(&mut h, c));
                tr.mixing_in.push(a);
                tr.coupling_in.push(m);
                tr.coupling.push(ct);
            } else {
                h = c;
            }
            if self.config.splits_after(i) {
                let (kept, fac) = split(&h, self.config.split_channels)?;
                splits.push(fac);
                h = kept;
            }
        }
        Ok((
            LatentBundle {
                final_latent: h,
                splits,
                trimmed_frames: trimmed,
            },
            logdet,
        ))
    }

    /// Encode `x` (trailing frames trimmed to the squeeze factor) under `cond`,
    /// returning the latent and the total log-determinant.
    pub fn encode(&self, x: &FrameMatrix, cond: &FlowCond) -> Result<(LatentBundle, f64)> {
        self.run_forward(x, cond, None)
    }

    pub fn encode_traced(&self, x: &FrameMatrix, cond: &FlowCond) -> Result<(LatentBundle, f64, EncodeTrace)> {
        let n = self.steps.len();
        let mut tr = EncodeTrace {
            actnorm_in: Vec::with_capacity(n),
            mixing_in: Vec::with_capacity(n),
            coupling_in: Vec::with_capacity(n),
            coupling: Vec::with_capacity(n),
        };
        let (z, ld) = self.run_forward(x, cond, Some(&mut tr))?;
        Ok((z, ld, tr))
    }

    /// Exact inverse of [`encode`](Self::encode). Returns the trimmed input.
    pub fn decode(&self, z: &LatentBundle, cond: &FlowCond) -> Result<FrameMatrix> {
        if !self.actnorm_initialized {
            return Err(Error::State("decode through uninitialized actnorm layers".into()));
        }
        let n_splits = self.config.n_splits();
        if z.splits.len() != n_splits {
            return Err(Error::Shape(format!(
                "latent has {} split parts, schedule has {n_splits}",
                z.splits.len()
            )));
        }
        let frames = z.final_latent.frames();
        if z.final_latent.channels() != self.config.final_channels()
            || z.splits
                .iter()
                .any(|s| s.channels() != self.config.split_channels || s.frames() != frames)
        {
            return Err(Error::Shape("latent parts do not match the split schedule".into()));
        }
        self.check_cond(cond, frames)?;
        let p = self.params.values();
        let mut h = z.final_latent.clone();
        let mut next_split = n_splits;
        for (i, st) in self.steps.iter().enumerate().rev() {
            if self.config.splits_after(i) {
                next_split -= 1;
                h = merge(&h, &z.splits[next_split])?;
            }
            let m = st.coupling.inverse(p, &h, cond)?;
            let a = st.mixing.inverse(p, &m)?;
            h = st.actnorm.inverse(p, &a);
        }
        unsqueeze(&h, self.config.squeeze_factor)
    }

    /// Back-propagate latent gradients `dz` and `g_logdet = dL/d logdet`
    /// through one traced encode. Parameter gradients accumulate into `grads`;
    /// the gradient on the squeezed conditioning features is returned.
    pub fn backward(
        &self,
        cond: &FlowCond,
        trace: &EncodeTrace,
        dz: &LatentBundle,
        g_logdet: f64,
        grads: &mut [f64],
    ) -> Result<FrameMatrix> {
        let p = self.params.values();
        let mut d_cond = FrameMatrix::zeros(cond.frames.channels(), cond.frames.frames());
        let mut dh = dz.final_latent.clone();
        let mut next_split = dz.splits.len();
        for (i, st) in self.steps.iter().enumerate().rev() {
            if self.config.splits_after(i) {
                next_split -= 1;
                dh = merge(&dh, &dz.splits[next_split])?;
            }
            let dm = st.coupling.backward(
                p,
                &trace.coupling_in[i],
                cond,
                &trace.coupling[i],
                &dh,
                g_logdet,
                grads,
                Some(&mut d_cond),
            );
            let da = st.mixing.backward(p, &trace.mixing_in[i], &dm, g_logdet, grads)?;
            dh = st.actnorm.backward(p, &trace.actnorm_in[i], &da, g_logdet, grads);
        }
        Ok(d_cond)
    }

    /// Data-dependent actnorm initialization: walk the batch through the
    /// stack, setting each actnorm so its output has zero mean and unit
    /// variance per channel over the batch.
    pub fn initialize_actnorm(&mut self, batch: &[(&FrameMatrix, &FlowCond)]) -> Result<()> {
        let mut hs = Vec::with_capacity(batch.len());
        for (x, cond) in batch {
            hs.push(self.prepare(x, cond)?.0);
        }
        for i in 0..self.steps.len() {
            let refs: Vec<&FrameMatrix> = hs.iter().collect();
            let st = self.steps[i].clone();
            st.actnorm.initialize_from(self.params.values_mut(), &refs);
            let p = self.params.values();
            for (h, (_, cond)) in hs.iter_mut().zip(batch) {
                let (a, _) = st.actnorm.forward(p, h);
                let (m, _) = st.mixing.forward(p, &a)?;
                let (c, _) = st.coupling.forward(p, &m, cond)?;
                *h = if self.config.splits_after(i) {
                    split(&c, self.config.split_channels)?.0
                } else {
                    c
                };
            }
        }
        self.actnorm_initialized = true;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{logabsdet, SquareMatrix};

    fn small_config() -> FlowConfig {
        FlowConfig {
            mel_dim: 4,
            n_steps: 12,
            split_channels: 2,
            hidden_channels: 6,
            speaker_dim: 3,
            ..FlowConfig::default()
        }
    }

    fn random_cond(config: &FlowConfig, squeezed_frames: usize, rng: &mut SeededRng) -> FlowCond {
        let d = config.frame_cond_dim();
        FlowCond {
            speaker: rng.standard_normal_vec(config.speaker_dim),
            frames: FrameMatrix::from_vec(d, squeezed_frames, rng.standard_normal_vec(d * squeezed_frames)).unwrap(),
        }
    }

    #[test]
    fn round_trip_and_losslessness() {
        let cfg = small_config();
        let mut rng = SeededRng::new(5);
        let stack = FlowStack::random(&cfg, &mut rng, 0.3).unwrap();
        let x = FrameMatrix::from_vec(4, 7, rng.standard_normal_vec(28)).unwrap();
        let cond = random_cond(&cfg, 3, &mut rng);
        let (z, _) = stack.encode(&x, &cond).unwrap();
        assert_eq!(z.trimmed_frames, 1);
        assert_eq!(z.element_count(), 4 * 6);
        assert_eq!(z.splits.len(), 2);
        let back = stack.decode(&z, &cond).unwrap();
        assert!(back.max_abs_diff(&x.truncate_frames(6)) <= 1e-8);
    }

    #[test]
    fn identity_stack_is_identity_with_zero_logdet() {
        let cfg = small_config();
        let stack = FlowStack::identity(&cfg).unwrap();
        let mut rng = SeededRng::new(1);
        let x = FrameMatrix::from_vec(4, 4, rng.standard_normal_vec(16)).unwrap();
        let cond = random_cond(&cfg, 2, &mut rng);
        let (z, ld) = stack.encode(&x, &cond).unwrap();
        assert_eq!(ld, 0.0);
        let expect = LatentBundle::from_squeezed(&cfg, &squeeze(&x, 2).unwrap(), 0).unwrap();
        assert_eq!(z, expect);
    }

    #[test]
    fn logdet_matches_full_jacobian() {
        let cfg = small_config();
        let mut rng = SeededRng::new(11);
        let stack = FlowStack::random(&cfg, &mut rng, 0.3).unwrap();
        let x = FrameMatrix::from_vec(4, 4, rng.standard_normal_vec(16)).unwrap();
        let cond = random_cond(&cfg, 2, &mut rng);
        let f = |v: &[f64]| {
            let xm = FrameMatrix::from_vec(4, 4, v.to_vec()).unwrap();
            stack.encode(&xm, &cond).unwrap().0.flatten()
        };
        let n = 16;
        let h = 1e-5;
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
        let (_, ld) = stack.encode(&x, &cond).unwrap();
        assert!((ld - oracle).abs() <= 1e-5 * oracle.abs(), "{ld} vs {oracle}");
    }

    #[test]
    fn decode_requires_initialized_actnorm() {
        let cfg = small_config();
        let mut rng = SeededRng::new(2);
        let mut stack = FlowStack::new(&cfg, &mut rng).unwrap();
        let x = FrameMatrix::from_vec(4, 4, rng.standard_normal_vec(16)).unwrap();
        let cond = random_cond(&cfg, 2, &mut rng);
        let (z, _) = stack.encode(&x, &cond).unwrap();
        assert!(matches!(stack.decode(&z, &cond), Err(Error::State(_))));
        stack.initialize_actnorm(&[(&x, &cond)]).unwrap();
        assert!(stack.decode(&z, &cond).is_ok());
    }

    #[test]
    fn actnorm_data_init_whitens_first_step() {
        let cfg = small_config();
        let mut rng = SeededRng::new(3);
        let mut stack = FlowStack::new(&cfg, &mut rng).unwrap();
        let xs: Vec<FrameMatrix> = (0..3)
            .map(|_| {
                let v = rng.standard_normal_vec(4 * 6).iter().map(|a| 3.0 * a + 1.5).collect();
                FrameMatrix::from_vec(4, 6, v).unwrap()
            })
            .collect();
        let conds: Vec<FlowCond> = (0..3).map(|_| random_cond(&cfg, 3, &mut rng)).collect();
        let batch: Vec<_> = xs.iter().zip(&conds).collect();
        let batch: Vec<(&FrameMatrix, &FlowCond)> = batch.into_iter().collect();
        stack.initialize_actnorm(&batch).unwrap();
        let p = stack.params.values();
        let outs: Vec<FrameMatrix> = xs
            .iter()
            .map(|x| stack.steps[0].actnorm.forward(p, &squeeze(x, 2).unwrap()).0)
            .collect();
        for c in 0..8 {
            let vals: Vec<f64> = outs.iter().flat_map(|o| o.row(c).to_vec()).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() <= 1e-8);
            assert!((var.sqrt() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn decode_rejects_wrong_schedule() {
        let cfg = small_config();
        let stack = FlowStack::identity(&cfg).unwrap();
        let mut rng = SeededRng::new(4);
        let x = FrameMatrix::from_vec(4, 4, rng.standard_normal_vec(16)).unwrap();
        let cond = random_cond(&cfg, 2, &mut rng);
        let (mut z, _) = stack.encode(&x, &cond).unwrap();
        z.splits.pop();
        assert!(matches!(stack.decode(&z, &cond), Err(Error::Shape(_))));
    }
}
