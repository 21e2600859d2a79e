//! Shared inputs for the benchmarks.

use modspec::synth::{SpeechLike, SynthConfig};
use modspec::AudioBuffer;

pub fn speech(seconds: f64) -> AudioBuffer {
    SpeechLike::new(SynthConfig::default()).utterance(seconds, 11)
}
