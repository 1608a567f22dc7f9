//! Remote foundation-model evaluator.
//!
//! Request body:
//! `{"model", "modality", "prompt", "images": [{"trajectory", "step", "data"}]}`
//! with images base64-encoded. Response body: `{"output": "<model text>"}`.
//! The text must contain `preference: A|B|equal` and `confidence: <number>`.

use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Evaluator, Judgment, Modality, Query};
use crate::error::{Error, Result};
use crate::http::JsonClient;
use crate::keyframes::{extract_keyframes, KeyframeConfig};
use crate::trajectory::{PreferenceLabel, Trajectory};

pub const TOKEN_ENV: &str = "PREFFUSE_FM_TOKEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    /// Directory holding `llm_preference.txt` and `vlm_preference.txt`.
    #[serde(default = "default_prompt_dir")]
    pub prompt_dir: PathBuf,
    #[serde(default)]
    pub task_description: String,
}

fn default_retries() -> u32 {
    2
}
fn default_timeout() -> f64 {
    60.0
}
fn default_in_flight() -> usize {
    4
}
fn default_prompt_dir() -> PathBuf {
    PathBuf::from("assets/prompts")
}

impl RemoteConfig {
    pub fn template_path(&self, modality: Modality) -> PathBuf {
        let name = match modality {
            Modality::Vlm => "vlm_preference.txt",
            Modality::Llm => "llm_preference.txt",
        };
        self.prompt_dir.join(name)
    }
}

/// Counting semaphore bounding concurrent in-flight requests.
struct InFlight {
    limit: usize,
    count: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut count = self.count.lock().unwrap_or_else(|e| e.into_inner());
        while *count >= self.limit {
            count = self.freed.wait(count).unwrap_or_else(|e| e.into_inner());
        }
        *count += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut count = self.0.count.lock().unwrap_or_else(|e| e.into_inner());
        *count -= 1;
        self.0.freed.notify_one();
    }
}

pub struct RemoteEvaluator {
    client: JsonClient,
    modality: Modality,
    model: String,
    template: String,
    task_description: String,
    keyframes: KeyframeConfig,
    in_flight: InFlight,
}

impl RemoteEvaluator {
    /// Loads the prompt template and reads the auth token from
    /// `PREFFUSE_FM_TOKEN` (optional).
    pub fn new(cfg: &RemoteConfig, modality: Modality) -> Result<Self> {
        let template_path = cfg.template_path(modality);
        let template =
            std::fs::read_to_string(&template_path).map_err(|e| Error::io(&template_path, e))?;
        let token = std::env::var(TOKEN_ENV).ok();
        Ok(Self {
            client: JsonClient::new(
                cfg.endpoint.clone(),
                Duration::from_secs_f64(cfg.timeout_secs),
                cfg.max_retries,
                token,
            ),
            modality,
            model: cfg.model.clone(),
            template,
            task_description: cfg.task_description.clone(),
            keyframes: KeyframeConfig::default(),
            in_flight: InFlight {
                limit: cfg.max_in_flight.max(1),
                count: Mutex::new(0),
                freed: Condvar::new(),
            },
        })
    }

    pub fn with_keyframe_config(mut self, cfg: KeyframeConfig) -> Self {
        self.keyframes = cfg;
        self
    }

    fn dim_names(traj: &Trajectory) -> Vec<String> {
        (0..traj.state_dim())
            .map(|i| format!("state_{i}"))
            .chain((0..traj.action_dim()).map(|i| format!("action_{i}")))
            .collect()
    }

    /// Builds the JSON request body for a query.
    pub fn request_body(&self, query: &Query<'_>) -> Result<Value> {
        let (text_a, text_b, images) = match self.modality {
            Modality::Llm => (
                query.first.textual_projection(&Self::dim_names(query.first))?,
                query.second.textual_projection(&Self::dim_names(query.second))?,
                Vec::new(),
            ),
            Modality::Vlm => {
                let mut images = Vec::new();
                let mut describe = |name: &str, traj: &Trajectory| -> Result<String> {
                    let frames = traj.frames().ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "trajectory {} has no frames for the vision evaluator",
                            traj.id()
                        ))
                    })?;
                    let kf = extract_keyframes(traj, &self.keyframes)?;
                    for &t in kf.indices() {
                        let path = Path::new(&frames[t - 1]);
                        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
                        images.push(json!({
                            "trajectory": name,
                            "step": t,
                            "data": base64::engine::general_purpose::STANDARD.encode(bytes),
                        }));
                    }
                    Ok(format!("keyframes at steps {:?}", kf.indices()))
                };
                let a = describe("A", query.first)?;
                let b = describe("B", query.second)?;
                (a, b, images)
            }
        };
        let prompt = self
            .template
            .replace("{task_description}", &self.task_description)
            .replace("{trajectory_a}", &text_a)
            .replace("{trajectory_b}", &text_b);
        Ok(json!({
            "model": self.model,
            "modality": self.modality.to_string(),
            "prompt": prompt,
            "images": images,
        }))
    }
}

impl Evaluator for RemoteEvaluator {
    fn modality(&self) -> Modality {
        self.modality
    }

    fn judge(&self, query: &Query<'_>) -> Result<Judgment> {
        let body = self.request_body(query)?;
        let _slot = self.in_flight.acquire();
        let resp = self.client.post(&body)?;
        let text = resp
            .get("output")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::ResponseParse {
                reason: "missing string field `output`".into(),
                raw: resp.to_string(),
            })?;
        parse_response(text)
    }
}

fn value_after<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    // the last occurrence is the final answer after any reasoning
    let pos = text.rfind(key)? + key.len();
    let rest = text[pos..].trim_start();
    let end = rest
        .find(|c: char| c.is_whitespace() || c == ',' || c == ';')
        .unwrap_or(rest.len());
    let token = rest[..end].trim_matches(|c: char| !c.is_alphanumeric() && c != '.' && c != '-');
    Some(token.trim_end_matches('.'))
}

/// Extracts a [`Judgment`] from free-form model output.
///
/// Labels are relative to the shown order: `A` → 1, `B` → 0, `equal` → -1.
/// Confidence outside `[0, 1]` is clamped with a warning.
pub fn parse_response(text: &str) -> Result<Judgment> {
    let lower = text.to_lowercase();
    let fail = |reason: &str| Error::ResponseParse {
        reason: reason.to_string(),
        raw: text.to_string(),
    };
    let label = match value_after(&lower, "preference:") {
        Some("a") => PreferenceLabel::APreferred,
        Some("b") => PreferenceLabel::BPreferred,
        Some("equal") => PreferenceLabel::Indecision,
        Some(other) => return Err(fail(&format!("unrecognized preference token {other:?}"))),
        None => return Err(fail("missing `preference:` field")),
    };
    let raw_conf = value_after(&lower, "confidence:").ok_or_else(|| fail("missing `confidence:` field"))?;
    let confidence: f64 = raw_conf
        .parse()
        .map_err(|_| fail(&format!("confidence {raw_conf:?} is not a number")))?;
    if !confidence.is_finite() {
        return Err(fail("confidence is not finite"));
    }
    let clamped = confidence.clamp(0.0, 1.0);
    if clamped != confidence {
        log::warn!("evaluator confidence {confidence} outside [0, 1]; clamped to {clamped}");
    }
    Ok(Judgment {
        label,
        confidence: clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_final_answer() {
        let j = parse_response("preference: A, confidence: 0.8").unwrap();
        assert_eq!(j, Judgment { label: PreferenceLabel::APreferred, confidence: 0.8 });
        let j = parse_response("Step 1 ... Preference: B\nConfidence: 0.35.").unwrap();
        assert_eq!(j, Judgment { label: PreferenceLabel::BPreferred, confidence: 0.35 });
        let j = parse_response("preference: equal; confidence: 0.5").unwrap();
        assert_eq!(j.label, PreferenceLabel::Indecision);
    }

    #[test]
    fn missing_confidence_keeps_raw_text() {
        match parse_response("preference: A") {
            Err(Error::ResponseParse { raw, .. }) => assert_eq!(raw, "preference: A"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_response("I like the first one").is_err());
        assert!(parse_response("preference: maybe, confidence: 0.5").is_err());
    }

    #[test]
    fn out_of_range_confidence_is_clamped() {
        assert_eq!(parse_response("preference: B, confidence: 1.7").unwrap().confidence, 1.0);
        assert_eq!(parse_response("preference: B, confidence: -2").unwrap().confidence, 0.0);
    }
}
