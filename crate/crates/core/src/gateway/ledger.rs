//! Integer micro-dollar cost accounting split by model role.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::RoleTag;

/// Per-token prices in integer micro-dollars.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Price {
    pub input_microusd_per_token: u64,
    pub output_microusd_per_token: u64,
}

impl Price {
    pub fn new(input: u64, output: u64) -> Self {
        Self { input_microusd_per_token: input, output_microusd_per_token: output }
    }

    pub fn cost(&self, prompt_tokens: u64, completion_tokens: u64) -> u64 {
        prompt_tokens * self.input_microusd_per_token + completion_tokens * self.output_microusd_per_token
    }
}

/// One `complete` call, successful or not.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub role_tag: RoleTag,
    pub model: String,
    /// Caller-supplied grouping key, typically the trial id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cost_microusd: u64,
    pub started_ms: u64,
    pub latency_ms: u64,
    pub ok: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleTotals {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cost_microusd: u64,
}

impl RoleTotals {
    fn add(&mut self, r: &UsageRecord) {
        self.calls += 1;
        self.prompt_tokens += r.prompt_tokens;
        self.completion_tokens += r.completion_tokens;
        self.cost_microusd += r.cost_microusd;
    }
}

/// Append-only usage log with running per-role totals.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    entries: Vec<UsageRecord>,
    main: RoleTotals,
    reflection: RoleTotals,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, record: UsageRecord) {
        match record.role_tag {
            RoleTag::Main => self.main.add(&record),
            RoleTag::Reflection => self.reflection.add(&record),
        }
        self.entries.push(record);
    }

    pub fn entries(&self) -> &[UsageRecord] {
        &self.entries
    }

    pub fn totals(&self, role: RoleTag) -> RoleTotals {
        match role {
            RoleTag::Main => self.main,
            RoleTag::Reflection => self.reflection,
        }
    }

    pub fn total_microusd(&self) -> u64 {
        self.main.cost_microusd + self.reflection.cost_microusd
    }

    /// Cost per group key as (main, reflection) micro-dollars.
    pub fn group_totals(&self) -> BTreeMap<String, (u64, u64)> {
        let mut out: BTreeMap<String, (u64, u64)> = BTreeMap::new();
        for e in &self.entries {
            let Some(group) = &e.group else { continue };
            let slot = out.entry(group.clone()).or_default();
            match e.role_tag {
                RoleTag::Main => slot.0 += e.cost_microusd,
                RoleTag::Reflection => slot.1 += e.cost_microusd,
            }
        }
        out
    }

    /// Span between the first call start and the last call end.
    pub fn wall_ms(&self) -> u64 {
        let start = self.entries.iter().map(|e| e.started_ms).min();
        let end = self.entries.iter().map(|e| e.started_ms + e.latency_ms).max();
        match (start, end) {
            (Some(s), Some(e)) => e - s,
            _ => 0,
        }
    }

    pub fn report(&self) -> LedgerReport {
        LedgerReport {
            main_microusd: self.main.cost_microusd,
            reflection_microusd: self.reflection.cost_microusd,
            wall_minutes: self.wall_ms() as f64 / 60_000.0,
        }
    }
}

/// Main/reflection cost and elapsed time for a session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerReport {
    pub main_microusd: u64,
    pub reflection_microusd: u64,
    pub wall_minutes: f64,
}

impl LedgerReport {
    pub fn main_usd(&self) -> String {
        render_usd(self.main_microusd)
    }

    pub fn reflection_usd(&self) -> String {
        render_usd(self.reflection_microusd)
    }

    pub fn wall_minutes_display(&self) -> String {
        format!("{:.1}", self.wall_minutes)
    }
}

/// Renders micro-dollars as dollars with three decimals, rounding half up.
pub fn render_usd(microusd: u64) -> String {
    let mills = (microusd + 500) / 1000;
    format!("{}.{:03}", mills / 1000, mills % 1000)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(role: RoleTag, cost: u64) -> UsageRecord {
        UsageRecord {
            role_tag: role,
            model: "m".into(),
            group: None,
            prompt_tokens: 0,
            completion_tokens: 0,
            cost_microusd: cost,
            started_ms: 0,
            latency_ms: 0,
            ok: true,
        }
    }

    #[test]
    fn price_arithmetic() {
        assert_eq!(Price::new(2, 4).cost(1000, 500), 4000);
    }

    #[test]
    fn report_rendering() {
        let empty = CostLedger::new().report();
        assert_eq!((empty.main_usd().as_str(), empty.reflection_usd().as_str()), ("0.000", "0.000"));
        assert_eq!(empty.wall_minutes_display(), "0.0");

        let mut ledger = CostLedger::new();
        ledger.append(rec(RoleTag::Main, 20_000));
        ledger.append(rec(RoleTag::Main, 20_000));
        ledger.append(rec(RoleTag::Reflection, 13_000));
        let report = ledger.report();
        assert_eq!(report.main_usd(), "0.040");
        assert_eq!(report.reflection_usd(), "0.013");
        assert_eq!(ledger.totals(RoleTag::Main).calls, 2);
    }

    #[test]
    fn usd_rounding() {
        assert_eq!(render_usd(499), "0.000");
        assert_eq!(render_usd(500), "0.001");
        assert_eq!(render_usd(1_234_567), "1.235");
        assert_eq!(render_usd(39_000), "0.039");
    }

    #[test]
    fn wall_time_spans_calls() {
        let mut ledger = CostLedger::new();
        let mut a = rec(RoleTag::Main, 1);
        a.started_ms = 1_000;
        a.latency_ms = 500;
        let mut b = rec(RoleTag::Main, 1);
        b.started_ms = 60_000;
        b.latency_ms = 61_000;
        ledger.append(a);
        ledger.append(b);
        assert_eq!(ledger.wall_ms(), 120_000);
        assert_eq!(ledger.report().wall_minutes_display(), "2.0");
    }
}
