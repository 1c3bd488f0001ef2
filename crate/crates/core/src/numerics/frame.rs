use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `channels × frames` matrix stored row-major (channel-major): the value of
/// channel `c` at frame `t` lives at `c * frames + t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMatrix {
    channels: usize,
    frames: usize,
    values: Vec<f64>,
}

impl FrameMatrix {
    pub fn zeros(channels: usize, frames: usize) -> Self {
        Self {
            channels,
            frames,
            values: vec![0.0; channels * frames],
        }
    }

    pub fn from_vec(channels: usize, frames: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != channels * frames {
            return Err(Error::Shape(format!(
                "{} values do not fill a {channels}x{frames} frame matrix",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "frame matrix entry ({}, {})",
                i / frames.max(1),
                i % frames.max(1)
            )));
        }
        Ok(Self {
            channels,
            frames,
            values,
        })
    }

    pub fn from_fn(channels: usize, frames: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(channels * frames);
        for c in 0..channels {
            for t in 0..frames {
                values.push(f(c, t));
            }
        }
        Self {
            channels,
            frames,
            values,
        }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn frames(&self) -> usize {
        self.frames
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, channel: usize, frame: usize) -> f64 {
        self.values[channel * self.frames + frame]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, frame: usize, value: f64) {
        self.values[channel * self.frames + frame] = value;
    }

    #[inline]
    pub fn row(&self, channel: usize) -> &[f64] {
        &self.values[channel * self.frames..(channel + 1) * self.frames]
    }

    #[inline]
    pub fn row_mut(&mut self, channel: usize) -> &mut [f64] {
        &mut self.values[channel * self.frames..(channel + 1) * self.frames]
    }

    /// Channel `range` as a contiguous block of rows.
    pub fn rows(&self, start: usize, end: usize) -> &[f64] {
        &self.values[start * self.frames..end * self.frames]
    }

    pub fn rows_mut(&mut self, start: usize, end: usize) -> &mut [f64] {
        &mut self.values[start * self.frames..end * self.frames]
    }

    /// The per-channel vector at one frame.
    pub fn column(&self, frame: usize) -> Vec<f64> {
        (0..self.channels).map(|c| self.get(c, frame)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// Keep only the first `frames` frames.
    pub fn truncate_frames(&self, frames: usize) -> FrameMatrix {
        assert!(frames <= self.frames);
        FrameMatrix::from_fn(self.channels, frames, |c, t| self.get(c, t))
    }

    /// Copy of channels `[start, end)`.
    pub fn channel_slice(&self, start: usize, end: usize) -> FrameMatrix {
        FrameMatrix {
            channels: end - start,
            frames: self.frames,
            values: self.rows(start, end).to_vec(),
        }
    }

    /// Stack `self` on top of `other` along the channel axis.
    pub fn concat_channels(&self, other: &FrameMatrix) -> Result<FrameMatrix> {
        if self.frames != other.frames {
            return Err(Error::Shape(format!(
                "cannot stack {} frames with {} frames",
                self.frames, other.frames
            )));
        }
        let mut values = Vec::with_capacity(self.len() + other.len());
        values.extend_from_slice(&self.values);
        values.extend_from_slice(&other.values);
        Ok(FrameMatrix {
            channels: self.channels + other.channels,
            frames: self.frames,
            values,
        })
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &FrameMatrix) -> f64 {
        assert_eq!(self.channels, other.channels);
        assert_eq!(self.frames, other.frames);
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
