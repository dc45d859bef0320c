//! Per-view prompts assembled from structured appearance answers.

use std::path::Path;

use thiserror::Error;

use crate::views::{ViewRole, Viewpoint};

/// Canonical question ids, in composition order, with the question text.
pub const QUESTIONS: [(&str, &str); 6] = [
    ("clothing_style", "What style of clothing is the person wearing (e.g. t-shirt and jeans, business suit, dress)?"),
    ("clothing_colors", "What are the main colors of each garment?"),
    ("facial_features", "Describe the person's visible facial features."),
    ("hairstyle", "Describe the person's hairstyle and hair color."),
    ("accessories", "What accessories is the person wearing, if any (glasses, hat, bag, jewelry)?"),
    ("gender_age", "Give a short gender and age descriptor (e.g. young man, middle-aged woman)."),
];

pub const PROMPT_SUFFIX: &str = "full body, plain background";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("answers file is empty")]
    Empty,
    #[error("answers file is not a JSON object: {0}")]
    Json(String),
    #[error("missing answer for \"{0}\"")]
    MissingKey(String),
    #[error("answer for \"{0}\" is not a string")]
    NotAString(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    /// Canonical answers first, then extra keys in file order.
    answers: Vec<(String, String)>,
}

impl PromptBundle {
    pub fn from_json(text: &str) -> Result<Self, PromptError> {
        if text.trim().is_empty() {
            return Err(PromptError::Empty);
        }
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| PromptError::Json(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| PromptError::Json("top level must be an object".into()))?;
        let text_of = |k: &str, v: &serde_json::Value| {
            v.as_str()
                .map(|s| s.trim().to_string())
                .ok_or_else(|| PromptError::NotAString(k.to_string()))
        };
        let mut answers = Vec::with_capacity(obj.len());
        for (id, _) in QUESTIONS {
            let v = obj.get(id).ok_or_else(|| PromptError::MissingKey(id.to_string()))?;
            answers.push((id.to_string(), text_of(id, v)?));
        }
        for (k, v) in obj {
            if !QUESTIONS.iter().any(|(id, _)| id == k) {
                answers.push((k.clone(), text_of(k, v)?));
            }
        }
        Ok(Self { answers })
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&str> {
        self.answers.iter().find(|(k, _)| k == id).map(|(_, v)| v.as_str())
    }

    pub fn answers(&self) -> &[(String, String)] {
        &self.answers
    }
}

pub fn load_answers(path: &Path) -> Result<PromptBundle, PromptError> {
    PromptBundle::load(path)
}

pub fn location_phrase(azimuth_deg: f64, elevation_deg: f64) -> &'static str {
    match ViewRole::classify(azimuth_deg, elevation_deg) {
        ViewRole::Front => "front view",
        ViewRole::FrontSide => "front side view",
        ViewRole::Side => "side view",
        ViewRole::BackSide => "back side view",
        ViewRole::Back => "back view",
        ViewRole::Top => "viewed from directly above",
        ViewRole::Bottom => "viewed from directly below",
    }
}

/// `"<answers>, <location>, full body, plain background"`; blank answers are
/// skipped.
pub fn compose(bundle: &PromptBundle, view: &Viewpoint) -> String {
    let mut parts: Vec<&str> = bundle
        .answers
        .iter()
        .map(|(_, v)| v.as_str())
        .filter(|v| !v.is_empty())
        .collect();
    parts.push(location_phrase(view.azimuth_deg, view.elevation_deg));
    parts.push(PROMPT_SUFFIX);
    parts.join(", ")
}

/// The question list as printed by `ultraman prompts questions`.
pub fn questions_json() -> serde_json::Value {
    serde_json::Value::Array(
        QUESTIONS
            .iter()
            .map(|(id, q)| serde_json::json!({ "id": id, "question": q }))
            .collect(),
    )
}
