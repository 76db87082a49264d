//! Optimizer, assessment and gateway behaviour through the public API.

use std::sync::Arc;

use robforge_core::assessment::{assess_corpus, assess_trial, AssessOptions, DomainPrompt};
use robforge_core::clock::LogicalClock;
use robforge_core::corpus::{build_split, TrainingExample, TrialDocument};
use robforge_core::gateway::{
    BackendError, CompletionRequest, FnBackend, Gateway, MockBackend, MockRule, Price, RawCompletion, RetryPolicy, RoleTag,
};
use robforge_core::optimizer::{optimize, stability_protocol, EventKind, OptimizationBudget, OptimizerConfig, PromptArtifact};
use robforge_core::{RiskLabel, RobDomain};

fn answer(label: &str) -> String {
    format!("reasoning: r\nrisk_level: {label}\njustification: j\nconfidence: 0.6")
}

fn pool(domain: RobDomain) -> Vec<TrainingExample> {
    (0..30)
        .map(|i| {
            let label = RiskLabel::ALL[i % 3];
            TrainingExample {
                id: format!("x{i}"),
                domain,
                excerpt: format!("Passage {i}. [[gold:{label}]]"),
                evidence_question: "Quote it.".into(),
                evidence_span: format!("Passage {i}."),
                evaluative_question: "Judge it.".into(),
                label,
                justification: "Because.".into(),
            }
        })
        .collect()
}

/// Main model is right on a pseudo-random subset that depends on the
/// instruction, so different candidates score differently.
fn noisy_gateway() -> Gateway {
    let main = FnBackend::new("main", |r: &CompletionRequest| {
        let gold = r.user_text.split("[[gold:").nth(1).and_then(|s| s.split("]]").next()).unwrap_or("unclear");
        let h = r.system_text.len() + r.user_text.len();
        let label = if h % 3 != 0 { gold } else { "unclear" };
        Ok(RawCompletion::text(answer(label)))
    });
    let reflection = FnBackend::new("refl", |r: &CompletionRequest| {
        let n = r.user_text.matches("Case ").count();
        Ok(RawCompletion::text(format!("Judge carefully, revision with {n} cases{}", ".".repeat(n))))
    });
    Gateway::builder()
        .main(Arc::new(main), Price::new(2, 5))
        .reflection(Arc::new(reflection), Price::new(1, 1))
        .clock(Arc::new(LogicalClock::new()))
        .parallelism(3)
        .build()
}

#[test]
fn optimizer_contracts_hold_for_several_caps() {
    let split = build_split(RobDomain::D4, &pool(RobDomain::D4), 42).unwrap();
    for cap in [12, 13, 40, 100, 428] {
        let config = OptimizerConfig { budget: OptimizationBudget::cap(cap), ..Default::default() };
        let r = optimize(&DomainPrompt::seed(RobDomain::D4), &split, &config, &noisy_gateway(), 5).unwrap();
        assert!(r.metric_calls_used <= cap);
        assert_eq!(r.trace.count(EventKind::BudgetTick), r.metric_calls_used);
        assert_eq!(r.trace.events().last().unwrap().kind, EventKind::Finished);
        let best_mean = r.best.mean_score().unwrap();
        for c in &r.candidates {
            if let Some(m) = c.mean_score() {
                assert!(best_mean >= m);
                assert_eq!(c.scores.as_ref().unwrap().len(), 12);
            }
            let lineage = r.lineage(&c.candidate_id);
            assert_eq!(lineage.len() as u32, c.generation + 1, "lineage of {}", c.candidate_id);
            assert_eq!(lineage[0].generation, 0);
            for w in lineage.windows(2) {
                assert_eq!(w[1].generation, w[0].generation + 1);
                assert_eq!(w[1].parent_id.as_deref(), Some(w[0].candidate_id.as_str()));
            }
        }
        let seqs: Vec<u64> = r.trace.events().iter().map(|e| e.seq).collect();
        assert!(seqs.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn stability_runs_use_consecutive_seeds_and_artifacts_carry_lineage() {
    let split = build_split(RobDomain::D4, &pool(RobDomain::D4), 42).unwrap();
    let config = OptimizerConfig { budget: OptimizationBudget::cap(60), ..Default::default() };
    let out = stability_protocol(&DomainPrompt::seed(RobDomain::D4), &split, &config, &noisy_gateway(), 42, 3);
    assert!(out.failures.is_empty());
    let ids: Vec<&str> = out.results.iter().map(|r| r.run_id.as_str()).collect();
    assert_eq!(ids, ["D4-s42", "D4-s43", "D4-s44"]);
    for r in &out.results {
        let art = PromptArtifact::from_result(r);
        assert_eq!(art.lineage.last().unwrap(), &art.version_id);
        assert!(art.lineage[0].ends_with("/c0000"));
        let json = serde_json::to_string(&art).unwrap();
        assert_eq!(serde_json::from_str::<PromptArtifact>(&json).unwrap(), art);
    }
}

#[test]
fn optimizer_is_deterministic() {
    let split = build_split(RobDomain::D4, &pool(RobDomain::D4), 42).unwrap();
    let config = OptimizerConfig { budget: OptimizationBudget::cap(120), ..Default::default() };
    let a = optimize(&DomainPrompt::seed(RobDomain::D4), &split, &config, &noisy_gateway(), 9).unwrap();
    let b = optimize(&DomainPrompt::seed(RobDomain::D4), &split, &config, &noisy_gateway(), 9).unwrap();
    assert_eq!(a.trace.to_jsonl(), b.trace.to_jsonl());
}

fn trials() -> Vec<TrialDocument> {
    vec![
        TrialDocument::new("A1", "Computer-generated sequence. Sealed envelopes."),
        TrialDocument::new("A2", "Alternation by weekday. Open allocation."),
    ]
}

#[test]
fn assessment_is_deterministic_and_stays_within_requested_domains() {
    let script = vec![
        MockRule::new("Alternation", answer("High")),
        MockRule::new("*", answer("Low")),
    ];
    let make = || Gateway::builder().main(Arc::new(MockBackend::new("m", script.clone())), Price::new(1, 1)).parallelism(4).build();
    let prompts: Vec<DomainPrompt> = [RobDomain::D1, RobDomain::D5].into_iter().map(DomainPrompt::seed).collect();
    let a = assess_corpus(&trials(), &prompts, &make(), &AssessOptions::default(), "r").unwrap();
    let b = assess_corpus(&trials(), &prompts, &make(), &AssessOptions::default(), "r").unwrap();
    assert_eq!(a, b);
    for t in a {
        let t = t.unwrap();
        assert_eq!(t.judgments.keys().copied().collect::<Vec<_>>(), [RobDomain::D1, RobDomain::D5]);
    }
}

#[test]
fn every_call_is_ledgered_even_failures() {
    let attempts = std::sync::atomic::AtomicUsize::new(0);
    // A1 recovers on the retry; A2 never gets through.
    let flaky = FnBackend::new("m", move |r: &CompletionRequest| {
        let first = attempts.fetch_add(1, std::sync::atomic::Ordering::SeqCst) == 0;
        if first || r.user_text.contains("Alternation") {
            Err(BackendError::Transport("reset".into()))
        } else {
            Ok(RawCompletion { text: answer("Unclear"), prompt_tokens: Some(100), completion_tokens: Some(10) })
        }
    });
    let gw = Gateway::builder()
        .main(Arc::new(flaky), Price::new(3, 7))
        .retry(RetryPolicy::no_delay())
        .clock(Arc::new(LogicalClock::new()))
        .build();
    let prompts = [DomainPrompt::seed(RobDomain::D2)];
    let out = assess_trial(&trials()[0], &prompts, &gw, &AssessOptions::default(), "r").unwrap();
    assert_eq!(out.judgments[&RobDomain::D2].risk_level, RiskLabel::Unclear);
    assert!(assess_trial(&trials()[1], &prompts, &gw, &AssessOptions::default(), "r").is_err());
    let ledger = gw.ledger();
    assert_eq!(ledger.entries().len(), 2);
    assert_eq!(ledger.entries().iter().filter(|e| !e.ok).count(), 1);
    assert_eq!(ledger.totals(RoleTag::Main).cost_microusd, 100 * 3 + 10 * 7);
    assert_eq!(ledger.group_totals()["A1"], (370, 0));
}

#[test]
fn contract_violation_triggers_one_repair() {
    let gw = Gateway::builder()
        .main(
            Arc::new(MockBackend::new(
                "m",
                vec![MockRule::new("previous_answer", answer("High")), MockRule::new("*", "risk_level: maybe")],
            )),
            Price::default(),
        )
        .build();
    let out = assess_trial(&trials()[1], &[DomainPrompt::seed(RobDomain::D7)], &gw, &AssessOptions::default(), "r").unwrap();
    let j = &out.judgments[&RobDomain::D7];
    assert_eq!(j.risk_level, RiskLabel::High);
    assert!(j.warnings.iter().any(|w| w.contains("repair")));
    assert_eq!(gw.ledger().entries().len(), 2);
}
