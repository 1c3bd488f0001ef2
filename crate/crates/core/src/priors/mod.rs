//! Priors over the latent: a fixed standard normal, or a phoneme-dependent
//! mean from a phoneme encoder that is either pre-trained and frozen or
//! trained jointly with the flow. The standard deviation is always 1.

mod encoder;
mod field;
mod pretrain;

pub use encoder::{EncoderConfig, EncoderOutput, EncoderTrace, PhonemeEncoder, ENCODER_TAG};
pub use field::{
    field_from_frames, field_to_frames, fixed_prior, phoneme_prior_field, prior_log_density, prior_residual,
    PriorField, PriorMode,
};
pub use pretrain::{
    gaussian_kld, phoneme_separation, pretrain_phoneme_prior, PhonemeSeparation, PretrainConfig, PretrainRecord,
    write_pretrain_history_csv,
};
