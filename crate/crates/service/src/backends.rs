//! HTTP adapters for external translation and speech services.
//!
//! Wire format: a JSON request body, plain UTF-8 text back from the
//! translator and WAV bytes back from the speech service. Only plain HTTP
//! is supported.

use std::sync::Arc;
use std::time::Duration;

use serde_json::json;
use signdigit_core::speech::{
    wav_decode, AudioClip, BuiltinTranslator, OfflineTone, SpeechError, Synthesizer, Translator,
};

use crate::config::{ServiceConfig, TranslatorConfig, TtsConfig};

const MAX_RESPONSE_BYTES: u64 = 16 * 1024 * 1024;

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .build()
        .into()
}

fn post(agent: &ureq::Agent, endpoint: &str, body: String) -> Result<Vec<u8>, SpeechError> {
    let unreachable = |e: ureq::Error| SpeechError::BackendUnreachable(format!("{endpoint}: {e}"));
    let mut resp = agent
        .post(endpoint)
        .header("content-type", "application/json")
        .send(body)
        .map_err(unreachable)?;
    resp.body_mut()
        .with_config()
        .limit(MAX_RESPONSE_BYTES)
        .read_to_vec()
        .map_err(unreachable)
}

pub struct HttpTranslator {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpTranslator {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        Self {
            endpoint: endpoint.into(),
            agent: agent(timeout),
        }
    }
}

impl Translator for HttpTranslator {
    fn translate(&self, text: &str) -> Result<String, SpeechError> {
        let body = json!({ "text": text, "source": "en", "target": "bn" }).to_string();
        let bytes = post(&self.agent, &self.endpoint, body)?;
        let out = String::from_utf8(bytes).map_err(|_| {
            SpeechError::BackendUnreachable(format!("{}: response is not UTF-8", self.endpoint))
        })?;
        let out = out.trim();
        if out.is_empty() {
            return Err(SpeechError::BackendUnreachable(format!(
                "{}: empty translation",
                self.endpoint
            )));
        }
        Ok(out.to_string())
    }
}

pub struct HttpTts {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpTts {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        Self {
            endpoint: endpoint.into(),
            agent: agent(timeout),
        }
    }
}

impl Synthesizer for HttpTts {
    fn synthesize(&self, text: &str, _digit_hint: Option<u8>) -> Result<AudioClip, SpeechError> {
        let body = json!({ "text": text, "lang": "bn" }).to_string();
        wav_decode(&post(&self.agent, &self.endpoint, body)?)
    }
}

pub fn translator(cfg: &ServiceConfig) -> Arc<dyn Translator> {
    match &cfg.translator {
        TranslatorConfig::BuiltinLexicon => Arc::new(BuiltinTranslator),
        TranslatorConfig::ExternalHttp {
            endpoint,
            timeout_ms,
        } => Arc::new(HttpTranslator::new(
            endpoint.clone(),
            Duration::from_millis(*timeout_ms),
        )),
    }
}

pub fn synthesizer(cfg: &ServiceConfig) -> Arc<dyn Synthesizer> {
    match &cfg.tts {
        TtsConfig::OfflineTone => Arc::new(OfflineTone),
        TtsConfig::ExternalHttp {
            endpoint,
            timeout_ms,
        } => Arc::new(HttpTts::new(
            endpoint.clone(),
            Duration::from_millis(*timeout_ms),
        )),
    }
}
