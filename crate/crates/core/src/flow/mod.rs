//! Invertible multi-scale flow: squeeze, flow steps (actnorm, invertible
//! channel mixing, conditioned affine coupling) and splits, with exact
//! encode, decode and log-determinant.

mod checkpoint;
mod cond;
mod config;
mod coupling;
mod layers;
mod params;
mod squeeze;
mod stack;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, find_section, header_of, read_checkpoint, write_checkpoint, Section,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION, FLOW_TAG,
};
pub use cond::FlowCond;
pub use config::FlowConfig;
pub use coupling::{Coupling, CouplingTrace};
pub use layers::{ActNorm, InvLinear, MIXING_JITTER, MIXING_PIVOT_FLOOR};
pub use params::{hash_values, ParamEntry, ParamRange, ParamSet};
pub use squeeze::{merge, split, squeeze, trim_for_squeeze, unsqueeze, usable_frames};
pub use stack::{EncodeTrace, FlowStack, LatentBundle};

