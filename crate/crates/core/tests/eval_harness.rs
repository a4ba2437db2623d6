mod common;

use std::sync::Arc;

use synthtask::client::mock::{FailureRule, LogprobRule, MockEngine, MockTape};
use synthtask::client::CompletionClient;
use synthtask::eval::{evaluate, EvalError, EvalTask, Gold, NamedTemplate, TaskKind};
use synthtask::template::parse_template;

#[test]
fn ranked_classification_criterion() {
    common::check_ranked_classification(100).unwrap();
}

fn mock(tape: MockTape) -> CompletionClient {
    CompletionClient::new(Arc::new(MockEngine::new(tape)), 4)
}

fn records(texts: &[&str]) -> Vec<serde_json::Map<String, serde_json::Value>> {
    texts
        .iter()
        .map(|t| {
            let mut m = serde_json::Map::new();
            m.insert("text".into(), serde_json::Value::String(t.to_string()));
            m
        })
        .collect()
}

fn templates(body: &str) -> Vec<NamedTemplate> {
    (1..=5)
        .map(|i| NamedTemplate {
            id: format!("t{i}"),
            template: parse_template(&format!("[{i}] {body}")).unwrap(),
        })
        .collect()
}

fn prefer(marker: &str, choice: &str) -> LogprobRule {
    LogprobRule {
        when_contains: marker.into(),
        suffix: format!(" {choice}"),
        token_logprobs: None,
        each: Some(-0.01),
    }
}

#[test]
fn fixture_task_scores_match_frozen_values() {
    let task = EvalTask::load(common::fixtures().join("e2e/task/task.toml")).unwrap();
    let tape = MockTape::load(common::fixtures().join("e2e/tape.json")).unwrap();
    let report = evaluate(&task, &mock(tape));
    let expected = common::read_json(&common::fixtures().join("e2e/expected.json"));
    assert!(report.valid);
    assert_eq!(report.metric, "macro_f1");
    for (got, want) in report.per_template.iter().zip(expected["per_template"].as_array().unwrap()) {
        assert!((got.score.unwrap() - want["score"].as_f64().unwrap()).abs() < 1e-9, "{got:?}");
    }
    assert!((report.mean.unwrap() - expected["mean"].as_f64().unwrap()).abs() < 1e-9);
    assert!((report.stderr.unwrap() - expected["stderr"].as_f64().unwrap()).abs() < 1e-9);
}

#[test]
fn perfect_classifier_scores_100_with_zero_stderr() {
    let body = "{{text}}\nanswer_choices:\npos ||| neg";
    let task = EvalTask::new(
        "toy",
        TaskKind::RankedClassification,
        templates(body),
        records(&["good A", "bad B", "good C"]),
        vec![Gold::Label(0), Gold::Label(1), Gold::Label(0)],
    )
    .unwrap();
    let client = mock(MockTape {
        logprobs: vec![prefer("good", "pos"), prefer("bad", "neg")],
        ..MockTape::default()
    });
    let report = evaluate(&task, &client);
    assert_eq!(report.mean, Some(100.0));
    assert_eq!(report.stderr, Some(0.0));
    assert!(report.summary().contains("100.0 ± 0.0"));
}

#[test]
fn extractive_generation_uses_squad_f1() {
    let task = EvalTask::new(
        "qa",
        TaskKind::ExtractiveGeneration,
        templates("{{text}}\nAnswer:"),
        records(&["where is it?", "who is it?"]),
        vec![Gold::Answers(vec!["on the bar under the shelf".into()]), Gold::Answers(vec!["Ann".into(), "Bob".into()])],
    )
    .unwrap();
    let client = mock(MockTape {
        default_completion: " Bob\nmore text".into(),
        completions: vec![synthtask::client::mock::CompletionRule {
            when_contains: "where".into(),
            text: " on the bar\n".into(),
        }],
        ..MockTape::default()
    });
    let report = evaluate(&task, &client);
    assert_eq!(report.metric, "squad_f1");
    let want = (2.0 / 3.0 + 1.0) / 2.0 * 100.0;
    for t in &report.per_template {
        assert!((t.score.unwrap() - want).abs() < 1e-9);
    }
}

#[test]
fn failing_records_count_as_wrong() {
    let body = "{{text}}\nanswer_choices:\npos ||| neg";
    let task = EvalTask::new(
        "toy",
        TaskKind::RankedClassification,
        templates(body),
        records(&["good A", "good B"]),
        vec![Gold::Label(0), Gold::Label(0)],
    )
    .unwrap();
    let client = mock(MockTape {
        logprobs: vec![prefer("good", "pos")],
        failures: vec![FailureRule {
            when_contains: "[1] good B".into(),
            status: 400,
            times: 100,
            body: String::new(),
        }],
        ..MockTape::default()
    });
    let report = evaluate(&task, &client);
    assert_eq!(report.per_template[0].errors, 1);
    assert!(report.per_template[0].score.unwrap() < 100.0);
    // Label 1 never occurs but still counts in the macro average.
    assert_eq!(report.per_template[1].score, Some(50.0));
    assert_eq!(report.per_template[0].score, Some((2.0 / 3.0 + 0.0) / 2.0 * 100.0));
    assert!(report.valid);

    let all_fail = mock(MockTape {
        failures: vec![FailureRule {
            when_contains: "[2]".into(),
            status: 400,
            times: 100,
            body: String::new(),
        }],
        ..MockTape::default()
    });
    let report = evaluate(&task, &all_fail);
    assert_eq!(report.per_template[1].score, None);
    assert!(!report.valid && report.mean.is_none());
}

#[test]
fn task_construction_errors() {
    let recs = records(&["x"]);
    assert!(matches!(
        EvalTask::new("t", TaskKind::RankedClassification, templates("{{text}}").into_iter().take(4).collect(), recs.clone(), vec![Gold::Label(0)]),
        Err(EvalError::TemplateCount(4))
    ));
    assert!(matches!(
        EvalTask::new("t", TaskKind::RankedClassification, templates("{{text}}"), recs.clone(), vec![Gold::Label(0)]),
        Err(EvalError::MissingChoices(_))
    ));
    assert!(matches!(
        EvalTask::new("t", TaskKind::ExtractiveGeneration, templates("{{text}}"), Vec::new(), Vec::new()),
        Err(EvalError::EmptyTestSet)
    ));
}

#[test]
fn bundled_eval_templates_load_as_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let all = common::read_json(&common::fixtures().join("conformance/records.json"));
    for (dataset, kind, gold) in [
        ("pubmedqa", "ranked_classification", "final_decision"),
        ("squadshifts_amazon", "extractive_generation", "answers.text"),
    ] {
        let test = dir.path().join(format!("{dataset}.jsonl"));
        let lines: Vec<String> = all[dataset].as_array().unwrap().iter().map(|r| r.to_string()).collect();
        std::fs::write(&test, lines.join("\n")).unwrap();
        let tdir = common::eval_assets().join(dataset);
        let paths: Vec<String> = (1..=5).map(|i| format!("{:?}", tdir.join(format!("t{i}.tmpl")).to_str().unwrap())).collect();
        let cfg = dir.path().join(format!("{dataset}.toml"));
        std::fs::write(
            &cfg,
            format!(
                "name = \"{dataset}\"\nkind = \"{kind}\"\ntemplates = [{}]\ntest_file = \"{dataset}.jsonl\"\ngold_column = \"{gold}\"\n[label_map]\nyes = 0\nno = 1\nmaybe = 2\n",
                paths.join(", ")
            ),
        )
        .unwrap();
        let task = EvalTask::load(&cfg).unwrap_or_else(|e| panic!("{dataset}: {e}"));
        let report = evaluate(&task, &mock(MockTape::default()));
        assert!(report.valid, "{dataset}: {report:?}");
    }
}
