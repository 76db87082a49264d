//! Chat-completion gateway with main/reflection routing and cost accounting.
//!
//! A [`Gateway`] owns one backend per role, a retry policy and the shared
//! [`CostLedger`]. Every call to [`Gateway::complete`] appends exactly one
//! [`UsageRecord`], including calls that fail.

mod http;
mod ledger;
mod mock;

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, SystemClock};

pub use http::{HttpBackend, HttpConfig, API_KEY_ENV};
pub use ledger::{render_usd, CostLedger, LedgerReport, Price, RoleTotals, UsageRecord};
pub use mock::{request_digest, MockBackend, MockRule};
pub(crate) use mock::extract_block;

/// Which model a request is routed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoleTag {
    Main,
    Reflection,
}

impl fmt::Display for RoleTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RoleTag::Main => "main",
            RoleTag::Reflection => "reflection",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub temperature: f64,
    pub top_p: f64,
    pub seed: u64,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self { temperature: 0.0, top_p: 1.0, seed: 42 }
    }
}

impl DecodeParams {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.temperature >= 0.0) {
            return Err(GatewayError::InvalidRequest(format!("temperature {} < 0", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GatewayError::InvalidRequest(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub role_tag: RoleTag,
    pub system_text: String,
    pub user_text: String,
    pub decode: DecodeParams,
    /// Grouping key copied into the usage record (e.g. trial id).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

impl CompletionRequest {
    pub fn new(role_tag: RoleTag, system_text: impl Into<String>, user_text: impl Into<String>) -> Self {
        Self {
            role_tag,
            system_text: system_text.into(),
            user_text: user_text.into(),
            decode: DecodeParams::default(),
            group: None,
        }
    }

    pub fn with_decode(mut self, decode: DecodeParams) -> Self {
        self.decode = decode;
        self
    }

    pub fn with_group(mut self, group: impl Into<String>) -> Self {
        self.group = Some(group.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResult {
    pub text: String,
    pub usage: UsageRecord,
}

/// What a backend returns. Token counts are filled in by the gateway when absent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawCompletion {
    pub text: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

impl RawCompletion {
    pub fn text(text: impl Into<String>) -> Self {
        Self { text: text.into(), prompt_tokens: None, completion_tokens: None }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider error {status}: {body}")]
    Provider { status: u16, body: String },
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum GatewayError {
    #[error("transport error after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider error {status}: {body}")]
    Provider { status: u16, body: String },
    #[error("cost cap of {cap_microusd} micro-USD would be exceeded")]
    BudgetExceeded { cap_microusd: u64 },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

pub trait ChatBackend: Send + Sync {
    fn model(&self) -> &str;
    fn chat(&self, request: &CompletionRequest) -> Result<RawCompletion, BackendError>;
}

/// Backend driven by a closure; handy for scripted tasks and fault injection.
pub struct FnBackend<F> {
    model: String,
    f: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&CompletionRequest) -> Result<RawCompletion, BackendError> + Send + Sync,
{
    pub fn new(model: impl Into<String>, f: F) -> Self {
        Self { model: model.into(), f }
    }
}

impl<F> ChatBackend for FnBackend<F>
where
    F: Fn(&CompletionRequest) -> Result<RawCompletion, BackendError> + Send + Sync,
{
    fn model(&self) -> &str {
        &self.model
    }

    fn chat(&self, request: &CompletionRequest) -> Result<RawCompletion, BackendError> {
        (self.f)(request)
    }
}

/// Whitespace-delimited token count used when a provider reports none.
pub fn count_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, base_delay: Duration::from_millis(500) }
    }
}

impl RetryPolicy {
    pub fn no_delay() -> Self {
        Self { base_delay: Duration::ZERO, ..Self::default() }
    }

    fn delay(&self, attempt: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(attempt.saturating_sub(1))
    }
}

struct Route {
    backend: Arc<dyn ChatBackend>,
    price: Price,
}

pub struct Gateway {
    main: Option<Route>,
    reflection: Option<Route>,
    ledger: Mutex<CostLedger>,
    retry: RetryPolicy,
    cost_cap_microusd: Option<u64>,
    clock: Arc<dyn Clock>,
    parallelism: usize,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("main", &self.main.as_ref().map(|r| r.backend.model().to_string()))
            .field("reflection", &self.reflection.as_ref().map(|r| r.backend.model().to_string()))
            .field("retry", &self.retry)
            .field("cost_cap_microusd", &self.cost_cap_microusd)
            .field("parallelism", &self.parallelism)
            .finish()
    }
}

#[derive(Default)]
pub struct GatewayBuilder {
    main: Option<Route>,
    reflection: Option<Route>,
    retry: RetryPolicy,
    cost_cap_microusd: Option<u64>,
    clock: Option<Arc<dyn Clock>>,
    parallelism: usize,
}

impl GatewayBuilder {
    pub fn main(mut self, backend: Arc<dyn ChatBackend>, price: Price) -> Self {
        self.main = Some(Route { backend, price });
        self
    }

    pub fn reflection(mut self, backend: Arc<dyn ChatBackend>, price: Price) -> Self {
        self.reflection = Some(Route { backend, price });
        self
    }

    pub fn retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn cost_cap_microusd(mut self, cap: u64) -> Self {
        self.cost_cap_microusd = Some(cap);
        self
    }

    pub fn clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = Some(clock);
        self
    }

    pub fn parallelism(mut self, n: usize) -> Self {
        self.parallelism = n;
        self
    }

    pub fn build(self) -> Gateway {
        Gateway {
            main: self.main,
            reflection: self.reflection,
            ledger: Mutex::new(CostLedger::new()),
            retry: self.retry,
            cost_cap_microusd: self.cost_cap_microusd,
            clock: self.clock.unwrap_or_else(|| Arc::new(SystemClock::new())),
            parallelism: self.parallelism.max(1),
        }
    }
}

impl Gateway {
    pub fn builder() -> GatewayBuilder {
        GatewayBuilder { parallelism: 1, ..GatewayBuilder::default() }
    }

    pub fn parallelism(&self) -> usize {
        self.parallelism
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn model_name(&self, role: RoleTag) -> Option<&str> {
        self.route(role).map(|r| r.backend.model())
    }

    fn route(&self, role: RoleTag) -> Option<&Route> {
        match role {
            RoleTag::Main => self.main.as_ref(),
            RoleTag::Reflection => self.reflection.as_ref(),
        }
    }

    /// Snapshot of the ledger.
    pub fn ledger(&self) -> CostLedger {
        self.ledger.lock().expect("ledger lock").clone()
    }

    fn record(&self, request: &CompletionRequest, model: &str, started_ms: u64, usage: Option<(u64, u64, u64)>) -> UsageRecord {
        let (prompt_tokens, completion_tokens, cost_microusd) = usage.unwrap_or((0, 0, 0));
        let latency_ms = self.clock.now_ms().saturating_sub(started_ms);
        let record = UsageRecord {
            role_tag: request.role_tag,
            model: model.to_string(),
            group: request.group.clone(),
            prompt_tokens,
            completion_tokens,
            cost_microusd,
            started_ms,
            latency_ms,
            ok: usage.is_some(),
        };
        self.ledger.lock().expect("ledger lock").append(record.clone());
        record
    }

    /// Sends one request, retrying transport failures with exponential backoff.
    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        let started_ms = self.clock.now_ms();
        let Some(route) = self.route(request.role_tag) else {
            self.record(request, "", started_ms, None);
            return Err(GatewayError::Provider {
                status: 0,
                body: format!("no {} model configured", request.role_tag),
            });
        };
        let model = route.backend.model();
        if let Err(e) = request.decode.validate() {
            self.record(request, model, started_ms, None);
            return Err(e);
        }
        if let Some(cap) = self.cost_cap_microusd {
            let estimate = route
                .price
                .cost(count_tokens(&request.system_text) + count_tokens(&request.user_text), 0);
            let spent = self.ledger.lock().expect("ledger lock").total_microusd();
            if spent + estimate > cap {
                self.record(request, model, started_ms, None);
                return Err(GatewayError::BudgetExceeded { cap_microusd: cap });
            }
        }

        let mut attempt = 0;
        loop {
            attempt += 1;
            match route.backend.chat(request) {
                Ok(raw) => {
                    let prompt_tokens = raw
                        .prompt_tokens
                        .unwrap_or_else(|| count_tokens(&request.system_text) + count_tokens(&request.user_text));
                    let completion_tokens = raw.completion_tokens.unwrap_or_else(|| count_tokens(&raw.text));
                    let cost = route.price.cost(prompt_tokens, completion_tokens);
                    let usage = self.record(request, model, started_ms, Some((prompt_tokens, completion_tokens, cost)));
                    return Ok(CompletionResult { text: raw.text, usage });
                }
                Err(BackendError::Transport(message)) => {
                    if attempt >= self.retry.max_attempts {
                        self.record(request, model, started_ms, None);
                        return Err(GatewayError::Transport { attempts: attempt, message });
                    }
                    log::warn!("transport failure on attempt {attempt}: {message}; retrying");
                    let delay = self.retry.delay(attempt);
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                }
                Err(BackendError::Provider { status, body }) => {
                    self.record(request, model, started_ms, None);
                    return Err(GatewayError::Provider { status, body });
                }
            }
        }
    }
}

/// Applies `f` to every item with at most `parallelism` worker threads.
/// Output order matches input order.
pub fn bounded_map<T, R, F>(items: &[T], parallelism: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let workers = parallelism.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let out = f(i, &items[i]);
                *slots[i].lock().expect("slot lock") = Some(out);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot lock").expect("every slot filled"))
        .collect()
}
