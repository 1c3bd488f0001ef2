//! Conditioning features, the corpus container, and the synthetic corpus
//! generator.

mod conditioning;
mod corpus_io;
mod f0;
mod synth;

pub use conditioning::{build_conditioning, ConditioningSet, SpeakerTable, Utterance};
pub use corpus_io::{
    decode_utterance, encode_utterance, read_corpus, read_index, utterance_file_name,
    write_corpus, CorpusIndex, IndexEntry, INDEX_FILE, UTTERANCE_MAGIC,
};
pub use f0::{interpolate_f0, normalize_f0, normalized_log_f0};
pub use synth::{generate_corpus, speaker_name, GeneratedCorpus, GroundTruth, SynthSpec};
