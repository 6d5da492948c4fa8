use base64::Engine as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::GatewayError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Part {
    Text { text: String },
    /// PNG bytes, base64 in JSON.
    ImagePng {
        #[serde(with = "b64")]
        png: Vec<u8>,
    },
}

mod b64 {
    use base64::Engine as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        base64::engine::general_purpose::STANDARD
            .decode(s)
            .map_err(serde::de::Error::custom)
    }
}

impl Part {
    pub fn text(t: impl Into<String>) -> Self {
        Part::Text { text: t.into() }
    }

    pub fn png(bytes: Vec<u8>) -> Self {
        Part::ImagePng { png: bytes }
    }

    pub fn data_url(png: &[u8]) -> String {
        format!(
            "data:image/png;base64,{}",
            base64::engine::general_purpose::STANDARD.encode(png)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub parts: Vec<Part>,
}

impl Turn {
    pub fn user(parts: Vec<Part>) -> Self {
        Self { role: Role::User, parts }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            parts: vec![Part::text(text)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub turns: Vec<Turn>,
    #[serde(default)]
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub const DEFAULT_MAX_TOKENS: u32 = 1024;

    pub fn new(model: impl Into<String>, turns: Vec<Turn>) -> Self {
        Self {
            model: model.into(),
            turns,
            temperature: 0.0,
            max_tokens: Self::DEFAULT_MAX_TOKENS,
        }
    }

    /// One user turn holding the images followed by the text.
    pub fn single(model: impl Into<String>, images: Vec<Vec<u8>>, text: impl Into<String>) -> Self {
        let mut parts: Vec<Part> = images.into_iter().map(Part::png).collect();
        parts.push(Part::text(text));
        Self::new(model, vec![Turn::user(parts)])
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.model.is_empty() {
            return Err(GatewayError::InvalidRequest("model is empty".into()));
        }
        if !self.turns.iter().any(|t| t.role == Role::User) {
            return Err(GatewayError::InvalidRequest("no user turn".into()));
        }
        for t in &self.turns {
            if t.parts.is_empty() {
                return Err(GatewayError::InvalidRequest("turn without parts".into()));
            }
            if t.role != Role::User && t.parts.iter().any(|p| matches!(p, Part::ImagePng { .. })) {
                return Err(GatewayError::InvalidRequest(format!(
                    "image in a {} turn",
                    t.role.as_str()
                )));
            }
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest("temperature must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Digest over model, temperature, roles, texts and image bytes.
    /// Every field is length-prefixed so concatenations cannot collide.
    pub fn cache_key(&self) -> CacheKey {
        let mut h = Sha256::new();
        let mut field = |tag: u8, bytes: &[u8]| {
            h.update([tag]);
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(bytes);
        };
        field(b'v', b"chat-cache-1");
        field(b'm', self.model.as_bytes());
        // -0.0 and 0.0 are the same request
        let temp = if self.temperature == 0.0 { 0.0f64 } else { self.temperature };
        field(b't', &temp.to_bits().to_le_bytes());
        for turn in &self.turns {
            field(b'r', turn.role.as_str().as_bytes());
            for part in &turn.parts {
                match part {
                    Part::Text { text } => field(b's', text.as_bytes()),
                    Part::ImagePng { png } => field(b'i', png),
                }
            }
        }
        let digest = h.finalize();
        CacheKey(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Hex SHA-256 of a request.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CacheKey(pub String);

impl CacheKey {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_well_formed(&self) -> bool {
        self.0.len() == 64 && self.0.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
    }
}

impl std::fmt::Display for CacheKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub model_echo: String,
    pub latency_ms: u64,
    pub from_cache: bool,
    pub key: CacheKey,
}
