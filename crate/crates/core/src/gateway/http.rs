//! Chat-completions backend. Request and response shapes are documented in
//! `docs/http-backend.md`.

use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    DefectKind, EvalVerdict, Evaluator, GatewayError, GenerationContext, Generator, Telemetry,
    TranslationResult, Translator,
};
use crate::kernel::parse_program;
use crate::template::{render_response, serialize_step, ReasoningStep};

pub const MAX_RETRIES: u32 = 5;

/// Reply a translation prompt uses to decline a step.
pub const UNTRANSLATABLE: &str = "UNTRANSLATABLE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpSettings {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    /// Literal key or `${VAR}`; when absent the key is read from `api_key_env`.
    pub api_key: Option<String>,
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub timeout_secs: u64,
}

impl Default for HttpSettings {
    fn default() -> Self {
        HttpSettings {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "default".into(),
            api_key_env: "ORACLE_FORGE_API_KEY".into(),
            api_key: None,
            max_in_flight: 8,
            max_retries: MAX_RETRIES,
            backoff_base_ms: 500,
            timeout_secs: 120,
        }
    }
}

/// The five prompt assets, read verbatim from a prompts directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptAssets {
    pub stage1: String,
    pub generate: String,
    pub translate: String,
    pub precision: String,
    pub feasibility: String,
}

impl PromptAssets {
    pub const FILES: [&'static str; 5] = [
        "stage1.txt",
        "generate.txt",
        "translate.txt",
        "precision.txt",
        "feasibility.txt",
    ];

    pub fn load(dir: &Path) -> std::io::Result<Self> {
        let read = |name: &str| {
            std::fs::read_to_string(dir.join(name)).map_err(|e| {
                std::io::Error::new(
                    e.kind(),
                    format!("prompt asset {}: {e}", dir.join(name).display()),
                )
            })
        };
        Ok(PromptAssets {
            stage1: read("stage1.txt")?,
            generate: read("generate.txt")?,
            translate: read("translate.txt")?,
            precision: read("precision.txt")?,
            feasibility: read("feasibility.txt")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportResponse {
    pub status: u16,
    pub body: String,
}

/// One POST of a JSON body. Errors are connection-level failures.
pub trait ChatTransport: Send + Sync {
    fn post(&self, body: &serde_json::Value) -> Result<TransportResponse, String>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: Option<String>,
}

impl ReqwestTransport {
    pub fn new(
        endpoint: &str,
        api_key: Option<String>,
        timeout: Duration,
    ) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Protocol(format!("http client: {e}")))?;
        Ok(ReqwestTransport {
            client,
            endpoint: endpoint.to_string(),
            api_key,
        })
    }
}

impl ChatTransport for ReqwestTransport {
    fn post(&self, body: &serde_json::Value) -> Result<TransportResponse, String> {
        let mut req = self
            .client
            .post(&self.endpoint)
            .header("content-type", "application/json")
            .body(body.to_string());
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| e.to_string())?;
        Ok(TransportResponse { status, body })
    }
}

/// Counting semaphore bounding concurrent requests.
struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(n: usize) -> Self {
        Limiter {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("limiter lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("limiter lock");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("limiter lock") += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Deserialize)]
struct ChatReply {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: String,
}

pub struct HttpBackend {
    transport: Arc<dyn ChatTransport>,
    settings: HttpSettings,
    prompts: Arc<PromptAssets>,
    limiter: Limiter,
    telemetry: Arc<Telemetry>,
    sleep: fn(Duration),
}

impl HttpBackend {
    pub fn new(
        transport: Arc<dyn ChatTransport>,
        settings: HttpSettings,
        prompts: Arc<PromptAssets>,
        telemetry: Arc<Telemetry>,
    ) -> Self {
        let limiter = Limiter::new(settings.max_in_flight);
        HttpBackend {
            transport,
            settings,
            prompts,
            limiter,
            telemetry,
            sleep: std::thread::sleep,
        }
    }

    /// Replaces the backoff sleep (tests use a no-op).
    pub fn with_sleep(mut self, sleep: fn(Duration)) -> Self {
        self.sleep = sleep;
        self
    }

    pub fn request_body(
        &self,
        system: &str,
        user: &str,
        temperature: f64,
        n: usize,
        seed: u64,
    ) -> serde_json::Value {
        json!({
            "model": self.settings.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": temperature,
            "n": n,
            "seed": seed,
        })
    }

    /// Sends with exponential backoff on connection errors, 429 and 5xx.
    fn chat(&self, body: &serde_json::Value) -> Result<Vec<String>, GatewayError> {
        let _permit = self.limiter.acquire();
        let mut last = String::new();
        for attempt in 0..=self.settings.max_retries {
            if attempt > 0 {
                Telemetry::bump(&self.telemetry.retries, 1);
                (self.sleep)(Duration::from_millis(
                    self.settings
                        .backoff_base_ms
                        .saturating_mul(1 << (attempt - 1)),
                ));
            }
            match self.transport.post(body) {
                Ok(r) if r.status == 200 => {
                    let reply: ChatReply = serde_json::from_str(&r.body).map_err(|e| {
                        GatewayError::Protocol(format!("{e} in `{}`", truncate(&r.body)))
                    })?;
                    return Ok(reply
                        .choices
                        .into_iter()
                        .map(|c| c.message.content)
                        .collect());
                }
                Ok(r) if r.status == 429 || r.status >= 500 => {
                    last = format!("status {}", r.status)
                }
                Ok(r) => {
                    return Err(GatewayError::Rejected {
                        status: r.status,
                        detail: truncate(&r.body),
                    })
                }
                Err(e) => last = e,
            }
            tracing::debug!(attempt, error = %last, "chat request failed");
        }
        Err(GatewayError::BackendUnavailable {
            attempts: self.settings.max_retries + 1,
            detail: last,
        })
    }

    fn chat_one(
        &self,
        system: &str,
        user: &str,
        temperature: f64,
        seed: u64,
    ) -> Result<String, GatewayError> {
        self.chat(&self.request_body(system, user, temperature, 1, seed))?
            .into_iter()
            .next()
            .ok_or_else(|| GatewayError::Protocol("reply has no choices".into()))
    }

    fn judge(
        &self,
        asset: &str,
        step: &ReasoningStep,
        ctx: &GenerationContext,
    ) -> Result<bool, GatewayError> {
        let user = format!(
            "{}\n\nCandidate step:\n{}",
            conversation(ctx),
            serialize_step(step).unwrap_or_default()
        );
        parse_judgment(&self.chat_one(asset, &user, ctx.temperature, ctx.seed)?)
    }
}

fn truncate(s: &str) -> String {
    s.chars().take(200).collect()
}

/// Question plus the steps so far, as shown to the model.
fn conversation(ctx: &GenerationContext) -> String {
    let prior = render_response(&ctx.prior_steps, None).unwrap_or_default();
    if prior.is_empty() {
        ctx.question.clone()
    } else {
        format!("{}\n\n{prior}", ctx.question)
    }
}

/// A single YES or NO, any case, optional trailing period.
pub fn parse_judgment(reply: &str) -> Result<bool, GatewayError> {
    let word = reply.trim().trim_end_matches('.').trim();
    if word.eq_ignore_ascii_case("yes") {
        Ok(true)
    } else if word.eq_ignore_ascii_case("no") {
        Ok(false)
    } else {
        Err(GatewayError::UnparseableJudgment(truncate(reply)))
    }
}

/// Reads a translation reply: a rule-language program with the cited
/// facts and exactly one rule.
pub fn parse_translation(reply: &str) -> TranslationResult {
    let body = strip_fence(reply.trim());
    if body.trim() == UNTRANSLATABLE {
        return TranslationResult::malformed(DefectKind::TooComplex, "model declined to translate");
    }
    match parse_program(body) {
        Err(e) => TranslationResult::Malformed(e.into()),
        Ok(kb) => match kb.rules() {
            [rule] => TranslationResult::Ok {
                facts: kb.facts().iter().cloned().collect(),
                rule: rule.clone(),
            },
            rules => TranslationResult::malformed(
                DefectKind::Shape,
                format!("expected one rule, found {}", rules.len()),
            ),
        },
    }
}

fn strip_fence(s: &str) -> &str {
    let Some(rest) = s.strip_prefix("```") else {
        return s;
    };
    let rest = rest.split_once('\n').map_or("", |(_, r)| r);
    rest.strip_suffix("```").unwrap_or(rest)
}

impl Generator for HttpBackend {
    fn id(&self) -> &str {
        "http"
    }

    fn generate(&self, ctx: &GenerationContext, n: usize) -> Result<Vec<String>, GatewayError> {
        let system = format!("{}\n\n{}", self.prompts.generate, ctx.few_shot_asset);
        self.chat(&self.request_body(
            system.trim(),
            &conversation(ctx),
            ctx.temperature,
            n,
            ctx.seed,
        ))
    }

    fn respond(&self, ctx: &GenerationContext) -> Result<String, GatewayError> {
        // The stage-1 asset already holds instructions and worked examples.
        let system = match ctx.few_shot_asset.trim() {
            "" => self.prompts.stage1.trim(),
            s => s,
        };
        self.chat_one(system, &ctx.question, ctx.temperature, ctx.seed)
    }
}

impl Translator for HttpBackend {
    fn translate(
        &self,
        step: &ReasoningStep,
        ctx: &GenerationContext,
    ) -> Result<TranslationResult, GatewayError> {
        let user = serialize_step(step).map_err(|e| GatewayError::Protocol(e.to_string()))?;
        let reply = self.chat_one(&self.prompts.translate, &user, ctx.temperature, ctx.seed)?;
        Ok(parse_translation(&reply))
    }
}

impl Evaluator for HttpBackend {
    fn evaluate(
        &self,
        step: &ReasoningStep,
        ctx: &GenerationContext,
    ) -> Result<EvalVerdict, GatewayError> {
        Ok(EvalVerdict {
            precision_pass: self.judge(&self.prompts.precision, step, ctx)?,
            feasibility_pass: self.judge(&self.prompts.feasibility, step, ctx)?,
        })
    }
}

/// Resolves the API key: a literal, a `${VAR}` reference, or the variable
/// named by `api_key_env`.
pub fn resolve_api_key(
    settings: &HttpSettings,
    env: impl Fn(&str) -> Option<String>,
) -> Result<Option<String>, String> {
    match settings.api_key.as_deref() {
        Some(v) => match v.strip_prefix("${").and_then(|r| r.strip_suffix('}')) {
            Some(var) => env(var)
                .map(Some)
                .ok_or_else(|| format!("environment variable {var} is not set")),
            None => Ok(Some(v.to_string())),
        },
        None => Ok(env(&settings.api_key_env)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn judgments() {
        assert!(parse_judgment(" yes\n").unwrap());
        assert!(parse_judgment("YES.").unwrap());
        assert!(!parse_judgment("No").unwrap());
        assert!(parse_judgment("probably").is_err());
        assert!(parse_judgment("yes, because").is_err());
    }

    #[test]
    fn translations() {
        let ok = parse_translation("fact wumpus(max).\nrule yumpus(X) :- wumpus(X).");
        assert!(matches!(ok, TranslationResult::Ok { ref facts, .. } if facts.len() == 1));
        let fenced = parse_translation("```kbl\nfact p(a).\nrule q(X) :- p(X).\n```");
        assert!(matches!(fenced, TranslationResult::Ok { .. }));
        let kind = |r: TranslationResult| r.defect().map(|d| d.kind);
        assert_eq!(
            kind(parse_translation("rule m(X) :- not p(X).")),
            Some(DefectKind::UnsafeRule)
        );
        assert_eq!(
            kind(parse_translation("fact p(a).\nrule q(X) :- p(X, Y).")),
            Some(DefectKind::ArityMismatch)
        );
        assert_eq!(
            kind(parse_translation("fact p(a")),
            Some(DefectKind::Syntax)
        );
        assert_eq!(
            kind(parse_translation("fact p(a).")),
            Some(DefectKind::Shape)
        );
        assert_eq!(
            kind(parse_translation("UNTRANSLATABLE")),
            Some(DefectKind::TooComplex)
        );
    }

    #[test]
    fn api_key_resolution() {
        let env = |k: &str| (k == "KEY").then(|| "secret".to_string());
        let mut s = HttpSettings {
            api_key_env: "KEY".into(),
            ..Default::default()
        };
        assert_eq!(resolve_api_key(&s, env).unwrap().as_deref(), Some("secret"));
        s.api_key = Some("${MISSING}".into());
        assert!(resolve_api_key(&s, env).is_err());
        s.api_key = Some("${KEY}".into());
        assert_eq!(resolve_api_key(&s, env).unwrap().as_deref(), Some("secret"));
    }

    #[test]
    fn limiter_bounds_concurrency() {
        let limiter = Arc::new(Limiter::new(2));
        let live = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let (limiter, live, peak) = (limiter.clone(), live.clone(), peak.clone());
                std::thread::spawn(move || {
                    let _p = limiter.acquire();
                    let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    live.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
