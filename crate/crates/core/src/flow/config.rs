use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture of a [`FlowStack`](super::FlowStack).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConfig {
    pub mel_dim: usize,
    pub n_steps: usize,
    pub squeeze_factor: usize,
    /// A split follows every `split_every`-th step, except the last step.
    pub split_every: usize,
    pub split_channels: usize,
    pub hidden_channels: usize,
    /// Odd kernel width of the gated convolutions in each coupling network.
    pub kernel_width: usize,
    pub gated_layers: usize,
    pub speaker_dim: usize,
    /// Per-frame phoneme feature width fed to the couplings; zero in text-free mode.
    pub phone_cond_dim: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            mel_dim: 80,
            n_steps: 12,
            squeeze_factor: 2,
            split_every: 4,
            split_channels: 16,
            hidden_channels: 64,
            kernel_width: 3,
            gated_layers: 2,
            speaker_dim: 32,
            phone_cond_dim: 0,
        }
    }
}

impl FlowConfig {
    /// Channel count entering the first step.
    pub fn squeezed_channels(&self) -> usize {
        self.mel_dim * self.squeeze_factor
    }

    /// Per-original-frame conditioning streams: f0, vuv, then phoneme features.
    pub fn frame_stream_dim(&self) -> usize {
        2 + self.phone_cond_dim
    }

    /// Conditioning rows per squeezed frame.
    pub fn frame_cond_dim(&self) -> usize {
        self.squeeze_factor * self.frame_stream_dim()
    }

    /// Whether a split follows step `i` (0-based).
    pub fn splits_after(&self, step: usize) -> bool {
        self.split_every > 0 && (step + 1) % self.split_every == 0 && step + 1 < self.n_steps
    }

    pub fn n_splits(&self) -> usize {
        (0..self.n_steps).filter(|&i| self.splits_after(i)).count()
    }

    /// Channels entering each step.
    pub fn step_channels(&self) -> Vec<usize> {
        let mut c = self.squeezed_channels();
        let mut out = Vec::with_capacity(self.n_steps);
        for i in 0..self.n_steps {
            out.push(c);
            if self.splits_after(i) {
                c = c.saturating_sub(self.split_channels);
            }
        }
        out
    }

    pub fn final_channels(&self) -> usize {
        self.squeezed_channels() - self.n_splits() * self.split_channels
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("flow config: {m}")));
        if self.mel_dim == 0 || self.n_steps == 0 || self.squeeze_factor == 0 {
            return bad("mel_dim, n_steps and squeeze_factor must be positive".into());
        }
        if self.hidden_channels == 0 || self.gated_layers == 0 || self.speaker_dim == 0 {
            return bad("hidden_channels, gated_layers and speaker_dim must be positive".into());
        }
        if self.kernel_width % 2 == 0 {
            return bad(format!("kernel_width must be odd, got {}", self.kernel_width));
        }
        let n_splits = self.n_splits();
        if n_splits > 0 && self.split_channels == 0 {
            return bad("split_channels must be positive when splits are scheduled".into());
        }
        let total = self.squeezed_channels();
        if n_splits * self.split_channels >= total {
            return bad(format!(
                "{n_splits} splits of {} channels consume all {total} channels",
                self.split_channels
            ));
        }
        if self.final_channels() < 2 {
            return bad("coupling layers need at least two channels after the last split".into());
        }
        Ok(())
    }
}
