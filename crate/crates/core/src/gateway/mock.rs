//! Scripted offline backend.
//!
//! Rules are tried in two passes: first rules whose `match` is the hex
//! digest of the request, then substring rules in file order. A `match`
//! of `*` matches anything. Responses may contain `{{block:NAME}}`, which
//! expands to the trimmed text between `<NAME>` and `</NAME>` in the user
//! message.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendError, ChatBackend, CompletionRequest, RawCompletion, RoleTag};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(rename = "match")]
    pub pattern: String,
    pub response: String,
    /// Restricts the rule to one role.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<RoleTag>,
}

impl MockRule {
    pub fn new(pattern: impl Into<String>, response: impl Into<String>) -> Self {
        Self { pattern: pattern.into(), response: response.into(), role: None }
    }

    pub fn for_role(mut self, role: RoleTag) -> Self {
        self.role = Some(role);
        self
    }
}

/// Stable digest of (role, system, user), lowercase hex SHA-256.
pub fn request_digest(role: RoleTag, system_text: &str, user_text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(role.to_string().as_bytes());
    hasher.update([0x1f]);
    hasher.update(system_text.as_bytes());
    hasher.update([0x1f]);
    hasher.update(user_text.as_bytes());
    hex::encode(hasher.finalize())
}

fn is_digest(pattern: &str) -> bool {
    pattern.len() == 64 && pattern.bytes().all(|b| b.is_ascii_hexdigit())
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    model: String,
    rules: Vec<MockRule>,
}

impl MockBackend {
    pub fn new(model: impl Into<String>, rules: Vec<MockRule>) -> Self {
        Self { model: model.into(), rules }
    }

    pub fn from_jsonl(model: impl Into<String>, text: &str) -> Result<Self, String> {
        let rules = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str::<MockRule>(l).map_err(|e| format!("mock script line {}: {e}", i + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(model, rules))
    }

    pub fn from_file(model: impl Into<String>, path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_jsonl(model, &text)
    }

    fn find(&self, request: &CompletionRequest) -> Option<&MockRule> {
        let applies = |r: &&MockRule| r.role.is_none_or(|role| role == request.role_tag);
        let digest = request_digest(request.role_tag, &request.system_text, &request.user_text);
        if let Some(rule) = self.rules.iter().filter(applies).find(|r| is_digest(&r.pattern) && r.pattern.eq_ignore_ascii_case(&digest)) {
            return Some(rule);
        }
        self.rules.iter().filter(applies).filter(|r| !is_digest(&r.pattern)).find(|r| {
            r.pattern == "*" || request.system_text.contains(&r.pattern) || request.user_text.contains(&r.pattern)
        })
    }
}

fn expand(template: &str, user_text: &str) -> String {
    const OPEN: &str = "{{block:";
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find(OPEN) {
        out.push_str(&rest[..start]);
        let after = &rest[start + OPEN.len()..];
        let Some(end) = after.find("}}") else {
            out.push_str(&rest[start..]);
            return out;
        };
        let name = &after[..end];
        out.push_str(extract_block(user_text, name).unwrap_or(""));
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    out
}

/// Trimmed contents of the first `<name>...</name>` block.
pub(crate) fn extract_block<'a>(text: &'a str, name: &str) -> Option<&'a str> {
    let open = format!("<{name}>");
    let close = format!("</{name}>");
    let start = text.find(&open)? + open.len();
    let end = text[start..].find(&close)? + start;
    Some(text[start..end].trim())
}

impl ChatBackend for MockBackend {
    fn model(&self) -> &str {
        &self.model
    }

    fn chat(&self, request: &CompletionRequest) -> Result<RawCompletion, BackendError> {
        match self.find(request) {
            Some(rule) => Ok(RawCompletion::text(expand(&rule.response, &request.user_text))),
            None => Err(BackendError::Provider { status: 404, body: "no scripted response matches the request".into() }),
        }
    }
}
