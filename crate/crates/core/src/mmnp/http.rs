//! Remote narrator: each agent call is one JSON POST
//! `{role, template_id, images, context}` answered by `{text}`.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::backend::{NarrationContext, NarratorBackend};
use super::clause::{Narrative, VariableDescription};
use super::evaluator::Feedback;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HttpConfig {
    pub url: String,
    pub retries: u32,
    pub backoff_ms: u64,
    pub timeout_ms: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8080/generate".into(),
            retries: 3,
            backoff_ms: 250,
            timeout_ms: 60_000,
        }
    }
}

#[derive(Serialize)]
struct Request<'a> {
    role: &'a str,
    template_id: &'a str,
    images: Vec<String>,
    context: String,
}

#[derive(Deserialize)]
struct Response {
    text: String,
}

pub struct HttpBackend {
    cfg: HttpConfig,
    client: reqwest::blocking::Client,
    calls: AtomicUsize,
}

impl HttpBackend {
    pub fn new(cfg: HttpConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(Self {
            cfg,
            client,
            calls: AtomicUsize::new(0),
        })
    }

    fn attempt(&self, body: &Request<'_>) -> std::result::Result<String, String> {
        let resp = self.client.post(&self.cfg.url).json(body).send().map_err(|e| e.to_string())?;
        let status = resp.status();
        if status.as_u16() != 200 {
            return Err(format!("status {status}"));
        }
        let parsed: Response = resp.json().map_err(|e| format!("bad response body: {e}"))?;
        Ok(parsed.text)
    }

    fn post(&self, role: &str, images: Vec<String>, context: serde_json::Value) -> Result<String> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let template_id = format!("{role}.v1");
        let body = Request {
            role,
            template_id: &template_id,
            images,
            context: context.to_string(),
        };
        let mut last = String::new();
        for attempt in 0..=self.cfg.retries {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(self.cfg.backoff_ms << (attempt - 1)));
            }
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(e) => last = e,
            }
        }
        Err(Error::Backend {
            message: format!("{role} request to {} failed: {last}", self.cfg.url),
            retries: self.cfg.retries,
        })
    }

    fn all_images(ctx: &NarrationContext) -> Vec<String> {
        ctx.images.iter().map(|im| STANDARD.encode(im.to_ppm())).collect()
    }
}

impl NarratorBackend for HttpBackend {
    fn describe(&self, ctx: &NarrationContext, i: usize) -> Result<String> {
        let images = ctx.images.get(i).map(|im| vec![STANDARD.encode(im.to_ppm())]).unwrap_or_default();
        let digest = ctx.digests.get(i).map(|d| d.summary());
        self.post(
            "describe",
            images,
            json!({"variable": ctx.variables.get(i), "digest": digest}),
        )
    }

    fn integrate(&self, ctx: &NarrationContext, prev: &Narrative, d: &VariableDescription) -> Result<String> {
        self.post(
            "integrate",
            Self::all_images(ctx),
            json!({
                "narrative": prev.text(),
                "description": d.text(),
                "fields": ctx.summary(),
                "hint": ctx.hint,
            }),
        )
    }

    fn refine(&self, _ctx: &NarrationContext, s: &Narrative, feedback: &Feedback) -> Result<String> {
        self.post(
            "refine",
            Vec::new(),
            json!({
                "narrative": s.text(),
                "feedback": {
                    "type": feedback.kind.label(),
                    "variable": feedback.index,
                    "description": feedback.description.text(),
                },
            }),
        )
    }

    fn edit(&self, ctx: &NarrationContext, prev: &Narrative) -> Result<String> {
        self.post(
            "edit",
            Self::all_images(ctx),
            json!({"narrative": prev.text(), "fields": ctx.summary()}),
        )
    }

    fn narrate_single(&self, ctx: &NarrationContext) -> Result<String> {
        self.post("single", Self::all_images(ctx), json!({"fields": ctx.summary()}))
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}
