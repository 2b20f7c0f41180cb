//! Digit → English word → Bangla text → audio.
//!
//! External translation and speech services sit behind the [`Translator`]
//! and [`Synthesizer`] traits. The builtin lexicon and the offline tone
//! synthesizer never fail on digit input, and [`translate`] / [`synthesize`]
//! fall back to them when an external backend errors.

use thiserror::Error;

pub const SAMPLE_RATE: u32 = 16_000;
/// Offline tone length: 0.5 s at 16 kHz.
pub const TONE_SAMPLES: usize = 8_000;
pub const TONE_AMPLITUDE: f64 = 16_384.0;
pub const TONE_BASE_HZ: f64 = 440.0;
pub const WAV_HEADER_LEN: usize = 44;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpeechError {
    #[error("digit {0} is out of range 0-9")]
    OutOfRange(i64),
    #[error("no lexicon entry for {0:?}")]
    UnknownWord(String),
    #[error("speech backend unreachable: {0}")]
    BackendUnreachable(String),
    #[error("undecodable audio: {0}")]
    UndecodableAudio(String),
    #[error("the offline synthesizer needs a digit hint")]
    MissingDigitHint,
    #[error("invalid audio clip: {0}")]
    InvalidClip(String),
}

const ENGLISH: [&str; 10] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
];

// Escaped so editors cannot silently renormalize the nukta forms in 6 and 9.
const BANGLA: [&str; 10] = [
    "\u{09b6}\u{09c2}\u{09a8}\u{09cd}\u{09af}", // শূন্য
    "\u{098f}\u{0995}",                         // এক
    "\u{09a6}\u{09c1}\u{0987}",                 // দুই
    "\u{09a4}\u{09bf}\u{09a8}",                 // তিন
    "\u{099a}\u{09be}\u{09b0}",                 // চার
    "\u{09aa}\u{09be}\u{0981}\u{099a}",         // পাঁচ
    "\u{099b}\u{09af}\u{09bc}",                 // ছয়
    "\u{09b8}\u{09be}\u{09a4}",                 // সাত
    "\u{0986}\u{099f}",                         // আট
    "\u{09a8}\u{09af}\u{09bc}",                 // নয়
];

/// Fixed digit word table.
#[derive(Debug, Clone, Copy, Default)]
pub struct BanglaLexicon;

impl BanglaLexicon {
    pub fn english(&self, digit: u8) -> Result<&'static str, SpeechError> {
        ENGLISH
            .get(usize::from(digit))
            .copied()
            .ok_or(SpeechError::OutOfRange(i64::from(digit)))
    }

    pub fn bangla(&self, digit: u8) -> Result<&'static str, SpeechError> {
        BANGLA
            .get(usize::from(digit))
            .copied()
            .ok_or(SpeechError::OutOfRange(i64::from(digit)))
    }

    /// Digit for an English digit word, ignoring case and surrounding space.
    pub fn digit_of(&self, word: &str) -> Option<u8> {
        let w = word.trim().to_ascii_lowercase();
        ENGLISH.iter().position(|e| *e == w).map(|d| d as u8)
    }

    pub fn entries(&self) -> impl Iterator<Item = (u8, &'static str, &'static str)> {
        (0..10u8).map(|d| (d, ENGLISH[d as usize], BANGLA[d as usize]))
    }
}

pub fn digit_to_english(digit: i64) -> Result<&'static str, SpeechError> {
    u8::try_from(digit)
        .ok()
        .filter(|d| *d < 10)
        .map(|d| ENGLISH[d as usize])
        .ok_or(SpeechError::OutOfRange(digit))
}

pub trait Translator: Send + Sync {
    /// English text in, Bangla text out.
    fn translate(&self, text: &str) -> Result<String, SpeechError>;
}

pub trait Synthesizer: Send + Sync {
    fn synthesize(&self, text: &str, digit_hint: Option<u8>) -> Result<AudioClip, SpeechError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BuiltinTranslator;

impl Translator for BuiltinTranslator {
    fn translate(&self, text: &str) -> Result<String, SpeechError> {
        let lex = BanglaLexicon;
        let digit = lex
            .digit_of(text)
            .ok_or_else(|| SpeechError::UnknownWord(text.to_string()))?;
        Ok(lex.bangla(digit)?.to_string())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OfflineTone;

pub fn tone_frequency(digit: u8) -> f64 {
    TONE_BASE_HZ * 2f64.powf(f64::from(digit) / 12.0)
}

impl OfflineTone {
    pub fn tone(&self, digit: u8) -> Result<AudioClip, SpeechError> {
        if digit > 9 {
            return Err(SpeechError::OutOfRange(i64::from(digit)));
        }
        let f = tone_frequency(digit);
        let rate = f64::from(SAMPLE_RATE);
        let samples = (0..TONE_SAMPLES)
            .map(|n| {
                let v = TONE_AMPLITUDE * (2.0 * std::f64::consts::PI * f * n as f64 / rate).sin();
                v.round().clamp(f64::from(i16::MIN), f64::from(i16::MAX)) as i16
            })
            .collect();
        AudioClip::new(SAMPLE_RATE, samples)
    }
}

impl Synthesizer for OfflineTone {
    fn synthesize(&self, _text: &str, digit_hint: Option<u8>) -> Result<AudioClip, SpeechError> {
        self.tone(digit_hint.ok_or(SpeechError::MissingDigitHint)?)
    }
}

/// Runs `backend`, falling back to the lexicon when the text is a digit word.
pub fn translate(text: &str, backend: &dyn Translator) -> Result<String, SpeechError> {
    match backend.translate(text) {
        Ok(t) => Ok(t),
        Err(e) => match BanglaLexicon.digit_of(text) {
            Some(_) => BuiltinTranslator.translate(text),
            None => Err(e),
        },
    }
}

/// Runs `backend`, falling back to the offline tone when a digit hint is given.
pub fn synthesize(
    text: &str,
    digit_hint: Option<u8>,
    backend: &dyn Synthesizer,
) -> Result<AudioClip, SpeechError> {
    match backend.synthesize(text, digit_hint) {
        Ok(c) => Ok(c),
        Err(e) => match digit_hint {
            Some(d) if d <= 9 => OfflineTone.tone(d),
            _ => Err(e),
        },
    }
}

pub fn speak_digit(
    digit: i64,
    translator: &dyn Translator,
    tts: &dyn Synthesizer,
) -> Result<(String, AudioClip), SpeechError> {
    let english = digit_to_english(digit)?;
    let hint = Some(digit as u8);
    let bangla = translate(english, translator)?;
    let clip = synthesize(&bangla, hint, tts)?;
    Ok((bangla, clip))
}

/// Mono 16-bit PCM.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AudioClip {
    sample_rate: u32,
    samples: Vec<i16>,
}

impl AudioClip {
    pub fn new(sample_rate: u32, samples: Vec<i16>) -> Result<Self, SpeechError> {
        if sample_rate == 0 {
            return Err(SpeechError::InvalidClip("sample rate is zero".into()));
        }
        if samples.is_empty() {
            return Err(SpeechError::InvalidClip("no samples".into()));
        }
        Ok(Self {
            sample_rate,
            samples,
        })
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn samples(&self) -> &[i16] {
        &self.samples
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

/// Canonical 44-byte-header RIFF/WAVE, PCM mono 16-bit.
pub fn wav_encode(clip: &AudioClip) -> Vec<u8> {
    let data_len = (clip.samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(WAV_HEADER_LEN + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for s in &clip.samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

/// Reads PCM16 mono WAV, skipping unknown chunks.
pub fn wav_decode(bytes: &[u8]) -> Result<AudioClip, SpeechError> {
    let bad = |m: &str| SpeechError::UndecodableAudio(m.to_string());
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("missing RIFF/WAVE signature"));
    }
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let mut pos = 12;
    let mut rate = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = u32_at(pos + 4) as usize;
        let body = pos + 8;
        let end = body.checked_add(len).filter(|e| *e <= bytes.len());
        match id {
            b"fmt " => {
                let end = end.ok_or_else(|| bad("truncated fmt chunk"))?;
                if len < 16 {
                    return Err(bad("short fmt chunk"));
                }
                let (format, channels, bits) = (u16_at(body), u16_at(body + 2), u16_at(body + 14));
                if format != 1 || channels != 1 || bits != 16 {
                    return Err(bad(&format!(
                        "need PCM mono 16-bit, got format {format}, {channels} channels, {bits} bits"
                    )));
                }
                rate = Some(u32_at(body + 4));
                pos = end;
            }
            b"data" => {
                let rate = rate.ok_or_else(|| bad("data chunk before fmt chunk"))?;
                let end = end.ok_or_else(|| bad("truncated data chunk"))?;
                if !len.is_multiple_of(2) {
                    return Err(bad("odd data length"));
                }
                let samples = bytes[body..end]
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]))
                    .collect();
                return AudioClip::new(rate, samples)
                    .map_err(|e| SpeechError::UndecodableAudio(e.to_string()));
            }
            _ => pos = end.ok_or_else(|| bad("truncated chunk"))? + (len & 1),
        }
    }
    Err(bad("no data chunk"))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Down;
    impl Translator for Down {
        fn translate(&self, _: &str) -> Result<String, SpeechError> {
            Err(SpeechError::BackendUnreachable("connection refused".into()))
        }
    }
    impl Synthesizer for Down {
        fn synthesize(&self, _: &str, _: Option<u8>) -> Result<AudioClip, SpeechError> {
            Err(SpeechError::BackendUnreachable("connection refused".into()))
        }
    }

    #[test]
    fn english_words() {
        assert_eq!(digit_to_english(0).unwrap(), "zero");
        assert_eq!(digit_to_english(9).unwrap(), "nine");
        assert_eq!(digit_to_english(10), Err(SpeechError::OutOfRange(10)));
        assert_eq!(digit_to_english(-1), Err(SpeechError::OutOfRange(-1)));
    }

    #[test]
    fn lexicon_bytes() {
        let hex = [
            "e0a6b6e0a782e0a6a8e0a78de0a6af",
            "e0a68fe0a695",
            "e0a6a6e0a781e0a687",
            "e0a6a4e0a6bfe0a6a8",
            "e0a69ae0a6bee0a6b0",
            "e0a6aae0a6bee0a681e0a69a",
            "e0a69be0a6afe0a6bc",
            "e0a6b8e0a6bee0a6a4",
            "e0a686e0a69f",
            "e0a6a8e0a6afe0a6bc",
        ];
        for (d, h) in hex.iter().enumerate() {
            let got: String = BANGLA[d].bytes().map(|b| format!("{b:02x}")).collect();
            assert_eq!(&got, h, "digit {d}");
        }
        assert_eq!(BanglaLexicon.entries().count(), 10);
    }

    #[test]
    fn builtin_translation() {
        assert_eq!(BuiltinTranslator.translate("five").unwrap(), "পাঁচ");
        assert_eq!(BuiltinTranslator.translate("zero").unwrap(), "শূন্য");
        assert_eq!(
            BuiltinTranslator.translate("hello"),
            Err(SpeechError::UnknownWord("hello".into()))
        );
    }

    #[test]
    fn translate_falls_back_only_for_digit_words() {
        assert_eq!(translate("seven", &Down).unwrap(), BANGLA[7]);
        assert!(matches!(
            translate("hello", &Down),
            Err(SpeechError::BackendUnreachable(_))
        ));
    }

    #[test]
    fn offline_tone_definition() {
        let clip = OfflineTone.synthesize("", Some(0)).unwrap();
        assert_eq!(clip.sample_rate(), 16_000);
        assert_eq!(clip.samples().len(), 8_000);
        let peak = clip
            .samples()
            .iter()
            .map(|s| s.unsigned_abs())
            .max()
            .unwrap();
        assert!((16_300..=16_384).contains(&peak), "peak {peak}");
        // 440 Hz over 0.5 s: 220 cycles, so 440 sign changes give or take one
        let crossings = clip
            .samples()
            .windows(2)
            .filter(|w| (w[0] < 0) != (w[1] < 0))
            .count();
        assert!((438..=441).contains(&crossings), "{crossings}");
        assert!((tone_frequency(9) - 739.988_845).abs() < 1e-5);
        assert!((tone_frequency(5) - 587.329_536).abs() < 1e-5);
        assert_eq!(
            OfflineTone.synthesize("", None),
            Err(SpeechError::MissingDigitHint)
        );
    }

    #[test]
    fn offline_tone_is_deterministic() {
        for d in 0..10 {
            assert_eq!(OfflineTone.tone(d).unwrap(), OfflineTone.tone(d).unwrap());
        }
    }

    #[test]
    fn synthesize_fallback() {
        assert_eq!(
            synthesize("x", Some(3), &Down).unwrap(),
            OfflineTone.tone(3).unwrap()
        );
        assert!(matches!(
            synthesize("x", None, &Down),
            Err(SpeechError::BackendUnreachable(_))
        ));
    }

    #[test]
    fn wav_layout() {
        let clip = OfflineTone.tone(0).unwrap();
        let wav = wav_encode(&clip);
        assert_eq!(&wav[0..4], b"RIFF");
        assert_eq!(&wav[8..12], b"WAVE");
        assert_eq!(wav.len(), 44 + 16_000);
        assert_eq!(
            u32::from_le_bytes(wav[4..8].try_into().unwrap()) as usize,
            wav.len() - 8
        );
        assert_eq!(&wav[36..40], b"data");
        assert_eq!(u32::from_le_bytes(wav[40..44].try_into().unwrap()), 16_000);
        assert_eq!(wav_decode(&wav).unwrap(), clip);
    }

    #[test]
    fn wav_decode_skips_extra_chunks_and_rejects_junk() {
        let clip = AudioClip::new(8000, vec![1, -2, 3]).unwrap();
        let wav = wav_encode(&clip);
        let mut with_list = wav[..36].to_vec();
        with_list.extend_from_slice(b"LIST");
        with_list.extend_from_slice(&3u32.to_le_bytes());
        with_list.extend_from_slice(b"abc\0");
        with_list.extend_from_slice(&wav[36..]);
        assert_eq!(wav_decode(&with_list).unwrap(), clip);
        assert!(matches!(
            wav_decode(b"hello"),
            Err(SpeechError::UndecodableAudio(_))
        ));
        assert!(matches!(
            wav_decode(&wav[..44]),
            Err(SpeechError::UndecodableAudio(_))
        ));
        assert!(matches!(
            wav_decode(&wav[..48]),
            Err(SpeechError::UndecodableAudio(_))
        ));
    }

    #[test]
    fn speak_digit_pipeline() {
        let (text, clip) = speak_digit(5, &BuiltinTranslator, &OfflineTone).unwrap();
        assert_eq!(text, "পাঁচ");
        assert_eq!(clip, OfflineTone.tone(5).unwrap());
        assert_eq!(
            speak_digit(0, &BuiltinTranslator, &OfflineTone).unwrap().0,
            "শূন্য"
        );
        assert_eq!(
            speak_digit(10, &Down, &Down),
            Err(SpeechError::OutOfRange(10))
        );
        // both backends down still yields the offline pair
        assert_eq!(
            speak_digit(4, &Down, &Down).unwrap(),
            speak_digit(4, &BuiltinTranslator, &OfflineTone).unwrap()
        );
    }
}
