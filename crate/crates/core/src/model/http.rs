use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, Distribution, ScoreRequest, ScoreResult};
use crate::error::{Error, Result};
use crate::TokenId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub prompt_tokens: Vec<TokenId>,
    pub top_k: usize,
    pub want_hidden: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub topk: Vec<(TokenId, f64)>,
    #[serde(default)]
    pub hidden_last: Option<Vec<f64>>,
    #[serde(default)]
    pub model_dim: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct WireError {
    error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpOptions {
    pub max_in_flight: usize,
    pub retries: u32,
    pub timeout_secs: f64,
}

impl Default for HttpOptions {
    fn default() -> Self {
        Self {
            max_in_flight: 4,
            retries: 2,
            timeout_secs: 60.0,
        }
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Client for `POST {base}/v1/score`.
pub struct HttpBackend {
    endpoint: String,
    agent: ureq::Agent,
    opts: HttpOptions,
    permits: Semaphore,
    vocab_size: Option<usize>,
}

enum Attempt {
    Retry(Error),
    Fail(Error),
}

impl HttpBackend {
    pub fn new(base: &str, opts: HttpOptions, vocab_size: Option<usize>) -> Result<Self> {
        if !(base.starts_with("http://") || base.starts_with("https://")) {
            return Err(Error::InvalidConfig(format!("not an http(s) url: {base:?}")));
        }
        if opts.timeout_secs.is_nan() || opts.timeout_secs <= 0.0 {
            return Err(Error::InvalidConfig("timeout must be positive".into()));
        }
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs_f64(opts.timeout_secs)))
            .build();
        Ok(Self {
            endpoint: format!("{}/v1/score", base.trim_end_matches('/')),
            agent: ureq::Agent::new_with_config(config),
            permits: Semaphore::new(opts.max_in_flight),
            opts,
            vocab_size,
        })
    }

    fn attempt(&self, body: &WireRequest) -> std::result::Result<WireResponse, Attempt> {
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(body)
            .map_err(|e| Attempt::Retry(Error::BackendUnreachable(format!("{}: {e}", self.endpoint))))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retry(Error::BackendUnreachable(format!("reading body: {e}"))))?;
        match status {
            200 => serde_json::from_str(&text)
                .map_err(|e| Attempt::Fail(Error::ProtocolViolation(format!("bad response body: {e}")))),
            400..=499 => {
                let msg = serde_json::from_str::<WireError>(&text).map_or(text, |e| e.error);
                Err(Attempt::Fail(Error::Backend(format!("status {status}: {msg}"))))
            }
            _ => Err(Attempt::Retry(Error::Backend(format!("status {status}: {text}")))),
        }
    }

    fn to_result(&self, req: &ScoreRequest, wire: WireResponse) -> Result<ScoreResult> {
        if wire.topk.len() > req.top_k {
            return Err(Error::ProtocolViolation(format!(
                "asked for {} tokens, got {}",
                req.top_k,
                wire.topk.len()
            )));
        }
        if let (Some(v), Some(&(t, _))) = (self.vocab_size, wire.topk.iter().max_by_key(|x| x.0)) {
            if t as usize >= v {
                return Err(Error::VocabMismatch {
                    expected: v,
                    actual: t as usize + 1,
                });
            }
        }
        let hidden_last = match (req.want_hidden, wire.hidden_last) {
            (true, Some(h)) => {
                if let Some(d) = wire.model_dim {
                    if h.len() != d {
                        return Err(Error::ProtocolViolation(format!(
                            "hidden_last has {} entries, model_dim is {d}",
                            h.len()
                        )));
                    }
                }
                Some(h)
            }
            _ => None,
        };
        let result = ScoreResult {
            topk: wire.topk,
            distribution: Distribution::Truncated,
            hidden_last,
        };
        result.check_topk()?;
        Ok(result)
    }
}

impl Backend for HttpBackend {
    fn name(&self) -> String {
        self.endpoint.clone()
    }

    fn vocab_size(&self) -> Option<usize> {
        self.vocab_size
    }

    fn score(&self, req: &ScoreRequest) -> Result<ScoreResult> {
        req.validate(self.vocab_size)?;
        let body = WireRequest {
            prompt_tokens: req.prompt.clone(),
            top_k: req.top_k,
            want_hidden: req.want_hidden,
        };
        let _permit = self.permits.acquire();
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Ok(wire) => return self.to_result(req, wire),
                Err(Attempt::Fail(e)) => return Err(e),
                Err(Attempt::Retry(e)) if attempt >= self.opts.retries => return Err(e),
                Err(Attempt::Retry(e)) => {
                    attempt += 1;
                    log::warn!("retry {attempt}/{} after: {e}", self.opts.retries);
                    std::thread::sleep(Duration::from_millis(50 * attempt as u64));
                }
            }
        }
    }
}
