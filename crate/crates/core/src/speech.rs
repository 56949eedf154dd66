//! Speech-to-text and text-to-speech adapters.
//!
//! Audio never exists here: a "recording" is the intended utterance text
//! and synthesized "audio" is an opaque handle naming the voice and the
//! text it encodes. The handle is what lets tests check that every device
//! a session visits speaks with the same voice.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::VoiceConfig;

/// Nominal speaking speed of the mock synthesizer.
pub const NOMINAL_WPM: f64 = 170.0;

/// Words the mock recognizer substitutes for misheard words.
pub const CONFUSION_WORDS: &[&str] = &[
    "wash", "what", "wear", "calf", "coffee", "text", "read", "lift", "glue", "squire", "desk",
    "rock", "right", "weight", "bread",
];

#[derive(Debug, Error, PartialEq)]
pub enum SpeechError {
    #[error("cannot synthesize empty text")]
    EmptyText,
    #[error("invalid error model: {0}")]
    InvalidModel(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcription {
    pub text: String,
    pub confidence: f64,
}

/// Seeded word-level recognition errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorModel {
    pub substitution_rate: f64,
    pub drop_rate: f64,
    pub seed: u64,
}

impl ErrorModel {
    pub const PASSTHROUGH: Self = Self {
        substitution_rate: 0.0,
        drop_rate: 0.0,
        seed: 0,
    };

    pub fn validate(&self) -> Result<(), SpeechError> {
        for (name, r) in [("substitution_rate", self.substitution_rate), ("drop_rate", self.drop_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(SpeechError::InvalidModel(format!("{name} {r} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn is_passthrough(&self) -> bool {
        self.substitution_rate == 0.0 && self.drop_rate == 0.0
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

impl Default for ErrorModel {
    fn default() -> Self {
        Self::PASSTHROUGH
    }
}

/// Applies the error model to the intended utterance.
///
/// Per word, in order: one uniform draw decides a drop; if kept, a second
/// draw decides a substitution, and a third picks the replacement from
/// [`CONFUSION_WORDS`] (skipping forward past the original word).
pub fn mock_transcribe(payload: &str, model: &ErrorModel) -> Transcription {
    if model.is_passthrough() {
        return Transcription {
            text: payload.to_owned(),
            confidence: 1.0,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    let words: Vec<&str> = payload.split_whitespace().collect();
    let mut out = Vec::with_capacity(words.len());
    let mut intact = 0usize;
    for w in &words {
        if rng.gen::<f64>() < model.drop_rate {
            continue;
        }
        if rng.gen::<f64>() < model.substitution_rate {
            let mut i = rng.gen_range(0..CONFUSION_WORDS.len());
            if CONFUSION_WORDS[i].eq_ignore_ascii_case(w) {
                i = (i + 1) % CONFUSION_WORDS.len();
            }
            out.push(CONFUSION_WORDS[i]);
        } else {
            intact += 1;
            out.push(w);
        }
    }
    let confidence = if words.is_empty() {
        1.0
    } else {
        intact as f64 / words.len() as f64
    };
    Transcription {
        text: out.join(" "),
        confidence,
    }
}

/// Opaque stand-in for synthesized audio.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AudioHandle {
    pub voice_id: String,
    pub text_hash: String,
}

impl fmt::Display for AudioHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.voice_id, self.text_hash)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Synthesis {
    pub audio: AudioHandle,
    pub duration_ms: f64,
}

pub fn speech_duration_ms(text: &str, speaking_rate: f64) -> f64 {
    let words = text.split_whitespace().count() as f64;
    words * 60_000.0 / (NOMINAL_WPM * speaking_rate)
}

pub fn mock_synthesize(text: &str, voice: &VoiceConfig) -> Result<Synthesis, SpeechError> {
    if text.trim().is_empty() {
        return Err(SpeechError::EmptyText);
    }
    let digest = Sha256::digest(text.as_bytes());
    let text_hash = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
    Ok(Synthesis {
        audio: AudioHandle {
            voice_id: voice.voice_id.clone(),
            text_hash,
        },
        duration_ms: speech_duration_ms(text, voice.speaking_rate),
    })
}

/// Speech recognizer. Implementations may be remote services.
pub trait SttAdapter: Send + Sync {
    /// `nonce` varies per call so seeded implementations do not repeat the
    /// same errors on every utterance.
    fn transcribe(&self, payload: &str, language: &str, nonce: u64) -> Transcription;
}

/// Speech synthesizer. Implementations may be remote services.
pub trait TtsAdapter: Send + Sync {
    fn synthesize(&self, text: &str, voice: &VoiceConfig) -> Result<Synthesis, SpeechError>;
}

#[derive(Debug, Clone, Default)]
pub struct MockStt {
    pub model: ErrorModel,
}

impl MockStt {
    pub fn new(model: ErrorModel) -> Result<Self, SpeechError> {
        model.validate()?;
        Ok(Self { model })
    }
}

impl SttAdapter for MockStt {
    fn transcribe(&self, payload: &str, _language: &str, nonce: u64) -> Transcription {
        let model = self.model.with_seed(self.model.seed.wrapping_add(nonce));
        mock_transcribe(payload, &model)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MockTts;

impl TtsAdapter for MockTts {
    fn synthesize(&self, text: &str, voice: &VoiceConfig) -> Result<Synthesis, SpeechError> {
        mock_synthesize(text, voice)
    }
}
