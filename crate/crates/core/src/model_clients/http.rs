//! OpenAI-compatible chat-completion and embedding clients.

use std::thread;
use std::time::Duration;

use base64::Engine as _;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};
use tracing::{debug, warn};
use ureq::Agent;

use super::{ClientError, Critic, DraftGenerator, ModelEndpoint, PatchDescriber, PatchDescription, PatchInput, TextEmbedder};
use crate::qc_engine::{Checklist, StructuredReport};

const MAX_BACKOFF_MS: u64 = 10_000;

const DRAFT_SYSTEM: &str = "You are a pathology foundation model. Write a concise slide-level pathology report.";
const DRAFT_USER: &str = "Generate the pathology report for whole-slide image {slide_id}.";
const DESCRIBE_SYSTEM: &str = "You are a pathology vision-language model. Describe the histological findings visible in each image patch. Report only what is visible.";
const DESCRIBE_USER: &str = "Describe each of the {count} attached patches. Answer with a JSON array of {count} strings, one per patch, in order.";
const CRITIC_SYSTEM: &str = "You are a pathology report quality-control auditor. Rules: (1) Never fabricate clinical data; anything that cannot be verified from the evidence is omitted and listed in need_more_info. (2) Supplemental patch evidence outranks dataset context, which outranks the slide-level draft. (3) Missing fields are either image_related (request retrieval with a morphology-oriented query) or admin_required (never query, list in need_more_info). Answer with one JSON object: {\"missing\": [field], \"queries\": [{\"field\": field, \"text\": query}], \"revised\": {field: value}, \"need_more_info\": [{\"field\": field, \"reason\": text}]}.";
const CRITIC_USER: &str = "Round {round}.\nChecklist:\n{checklist}\nCurrent report:\n{report}\nEvidence:\n{evidence}";

/// Shared HTTP plumbing: auth, timeouts and bounded exponential backoff.
#[derive(Debug, Clone)]
pub struct HttpClient {
    agent: Agent,
    base_url: String,
    model: String,
    api_key: Option<String>,
    max_retries: u32,
    backoff_ms: u64,
}

fn retryable(status: u16) -> bool {
    status == 429 || status >= 500
}

impl HttpClient {
    pub fn new(endpoint: &ModelEndpoint) -> Result<Self, ClientError> {
        endpoint.validate()?;
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(endpoint.timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        let api_key = match &endpoint.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                ClientError::Config(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        Ok(Self {
            agent,
            base_url: endpoint.base_url.trim_end_matches('/').to_string(),
            model: endpoint.model_name.clone(),
            api_key,
            max_retries: endpoint.max_retries,
            backoff_ms: endpoint.backoff_ms,
        })
    }

    fn post_once<T: DeserializeOwned>(&self, url: &str, body: &Value) -> Result<T, ClientError> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| ClientError::Transport {
            status: None,
            detail: e.to_string(),
        })?;
        let status = resp.status().as_u16();
        if status >= 400 {
            let detail = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(ClientError::Transport {
                status: Some(status),
                detail,
            });
        }
        resp.body_mut()
            .read_json::<T>()
            .map_err(|e| ClientError::Malformed(e.to_string()))
    }

    /// POSTs `body` to `<base_url>/<path>`, retrying transport failures,
    /// 429 and 5xx up to `max_retries` times.
    pub fn post<T: DeserializeOwned>(&self, path: &str, body: &Value) -> Result<T, ClientError> {
        let url = format!("{}/{}", self.base_url, path.trim_start_matches('/'));
        let mut attempt = 0;
        loop {
            match self.post_once(&url, body) {
                Ok(v) => return Ok(v),
                Err(err) => {
                    let again = match &err {
                        ClientError::Transport { status: None, .. } => true,
                        ClientError::Transport { status: Some(s), .. } => retryable(*s),
                        _ => false,
                    };
                    if !again || attempt >= self.max_retries {
                        return Err(err);
                    }
                    let delay = self
                        .backoff_ms
                        .saturating_mul(1 << attempt.min(16))
                        .min(MAX_BACKOFF_MS);
                    warn!(%url, attempt, delay_ms = delay, error = %err, "retrying model request");
                    thread::sleep(Duration::from_millis(delay));
                    attempt += 1;
                }
            }
        }
    }

    pub fn chat(&self, messages: Vec<Value>) -> Result<String, ClientError> {
        let body = json!({
            "model": self.model,
            "messages": messages,
            "temperature": 0,
        });
        let resp: ChatResponse = self.post("chat/completions", &body)?;
        let content = resp
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        debug!(chars = content.len(), "chat completion");
        if content.trim().is_empty() {
            return Err(ClientError::EmptyResponse);
        }
        Ok(content)
    }

    pub fn embeddings(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ClientError> {
        let body = json!({ "model": self.model, "input": texts });
        let resp: EmbeddingResponse = self.post("embeddings", &body)?;
        let mut data = resp.data;
        data.sort_by_key(|d| d.index);
        Ok(data.into_iter().map(|d| d.embedding).collect())
    }
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    #[serde(default)]
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Debug, Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Debug, Deserialize)]
struct EmbeddingDatum {
    #[serde(default)]
    index: usize,
    embedding: Vec<f64>,
}

fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    vars.iter()
        .fold(template.to_string(), |acc, (k, v)| acc.replace(&format!("{{{k}}}"), v))
}

fn media_type(bytes: &[u8]) -> &'static str {
    if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        "image/png"
    } else if bytes.starts_with(&[0xFF, 0xD8]) {
        "image/jpeg"
    } else if bytes.starts_with(b"II*\0") || bytes.starts_with(b"MM\0*") {
        "image/tiff"
    } else {
        "application/octet-stream"
    }
}

/// `data:` URL carrying the image base64-encoded.
pub fn image_data_url(bytes: &[u8]) -> String {
    format!(
        "data:{};base64,{}",
        media_type(bytes),
        base64::engine::general_purpose::STANDARD.encode(bytes)
    )
}

fn pretty<T: serde::Serialize + ?Sized>(v: &T) -> String {
    serde_json::to_string_pretty(v).unwrap_or_default()
}

fn system(text: &str) -> Value {
    json!({ "role": "system", "content": text })
}

pub struct HttpDraftGenerator {
    client: HttpClient,
    system: String,
    user: String,
}

impl HttpDraftGenerator {
    pub fn new(endpoint: &ModelEndpoint) -> Result<Self, ClientError> {
        Ok(Self {
            client: HttpClient::new(endpoint)?,
            system: endpoint.system_prompt.clone().unwrap_or_else(|| DRAFT_SYSTEM.into()),
            user: endpoint.user_template.clone().unwrap_or_else(|| DRAFT_USER.into()),
        })
    }
}

impl DraftGenerator for HttpDraftGenerator {
    fn draft(&self, slide_id: &str) -> Result<String, ClientError> {
        self.client.chat(vec![
            system(&self.system),
            json!({ "role": "user", "content": fill(&self.user, &[("slide_id", slide_id)]) }),
        ])
    }
}

pub struct HttpDescriber {
    client: HttpClient,
    system: String,
    user: String,
}

impl HttpDescriber {
    pub fn new(endpoint: &ModelEndpoint) -> Result<Self, ClientError> {
        Ok(Self {
            client: HttpClient::new(endpoint)?,
            system: endpoint.system_prompt.clone().unwrap_or_else(|| DESCRIBE_SYSTEM.into()),
            user: endpoint.user_template.clone().unwrap_or_else(|| DESCRIBE_USER.into()),
        })
    }
}

/// Parses the describer's reply into one optional string per patch.
fn parse_descriptions(content: &str, expected: usize) -> Vec<Option<String>> {
    let start = content.find('[');
    let end = content.rfind(']');
    let parsed: Option<Vec<Value>> = match (start, end) {
        (Some(s), Some(e)) if e > s => serde_json::from_str(&content[s..=e]).ok(),
        _ => None,
    };
    match parsed {
        Some(items) => (0..expected)
            .map(|i| {
                items
                    .get(i)
                    .and_then(Value::as_str)
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
            })
            .collect(),
        // A single patch may be answered in plain prose.
        None if expected == 1 && !content.trim().is_empty() => vec![Some(content.trim().to_string())],
        None => vec![None; expected],
    }
}

impl PatchDescriber for HttpDescriber {
    fn describe_batch(&self, batch: &[PatchInput]) -> Result<Vec<Option<String>>, ClientError> {
        let count = batch.len().to_string();
        let mut content = vec![json!({ "type": "text", "text": fill(&self.user, &[("count", &count)]) })];
        for p in batch {
            content.push(json!({
                "type": "image_url",
                "image_url": { "url": image_data_url(&p.image) },
            }));
        }
        let reply = self.client.chat(vec![
            system(&self.system),
            json!({ "role": "user", "content": content }),
        ])?;
        Ok(parse_descriptions(&reply, batch.len()))
    }
}

pub struct HttpEmbedder {
    client: HttpClient,
    dim: usize,
}

impl HttpEmbedder {
    pub fn new(endpoint: &ModelEndpoint) -> Result<Self, ClientError> {
        Ok(Self {
            client: HttpClient::new(endpoint)?,
            dim: endpoint.dim,
        })
    }
}

impl TextEmbedder for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ClientError> {
        self.client.embeddings(texts)
    }
}

pub struct HttpCritic {
    client: HttpClient,
    system: String,
    user: String,
}

impl HttpCritic {
    pub fn new(endpoint: &ModelEndpoint) -> Result<Self, ClientError> {
        Ok(Self {
            client: HttpClient::new(endpoint)?,
            system: endpoint.system_prompt.clone().unwrap_or_else(|| CRITIC_SYSTEM.into()),
            user: endpoint.user_template.clone().unwrap_or_else(|| CRITIC_USER.into()),
        })
    }
}

impl Critic for HttpCritic {
    fn critique(
        &self,
        report: &StructuredReport,
        evidence: &[PatchDescription],
        checklist: &Checklist,
        round: u32,
    ) -> Result<String, ClientError> {
        let user = fill(
            &self.user,
            &[
                ("round", &round.to_string()),
                ("checklist", &pretty(checklist)),
                ("report", &pretty(report)),
                ("evidence", &pretty(evidence)),
            ],
        );
        self.client.chat(vec![
            system(&self.system),
            json!({ "role": "user", "content": user }),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn description_array_parsed_positionally() {
        let out = parse_descriptions("```json\n[\"a\", \"\", \"c\"]\n```", 4);
        assert_eq!(out, vec![Some("a".into()), None, Some("c".into()), None]);
    }

    #[test]
    fn single_patch_prose_accepted() {
        assert_eq!(parse_descriptions("Necrosis.", 1), vec![Some("Necrosis.".into())]);
        assert_eq!(parse_descriptions("Necrosis.", 2), vec![None, None]);
    }

    #[test]
    fn data_url_sniffs_png() {
        assert!(image_data_url(&[0x89, b'P', b'N', b'G', 0]).starts_with("data:image/png;base64,"));
    }

    #[test]
    fn template_fill() {
        assert_eq!(fill("a {x} b {x} {y}", &[("x", "1"), ("y", "2")]), "a 1 b 1 2");
    }
}
