//! Audio ingestion, corpus manifests and feature files.

mod features_io;
mod manifest;
mod wav;

pub use features_io::{decode_features, encode_features, read_features, write_features, FEATURE_MAGIC, FEATURE_VERSION};
pub use manifest::{scan_corpus, CorpusManifest, ManifestEntry};
pub use wav::{read_wav, wav_duration_s, write_wav};
