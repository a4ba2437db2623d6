#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value as Json;

use synthtask::client::mock::{LogprobRule, MockEngine, MockTape};
use synthtask::client::CompletionClient;
use synthtask::ctga::{build_corpus, serialize_generator_pair, BuildConfig, CONTEXT_PLACEHOLDER};
use synthtask::dataset_io::{Document, PairReader, SourceRecord};
use synthtask::eval::{argmax_lowest, ranked_classify};
use synthtask::generator::{generate_conditional, parse_generation, ParseError};
use synthtask::metrics::{mean_stderr, squad_f1};
use synthtask::registry::{load_registry, summarize, MetaTemplate, TaskType};
use synthtask::template::{load_template_file, parse_template, render, render_choices, RenderContext, Template, Value};

pub type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err(format!($($arg)+));
        }
    };
}

pub fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn fixtures() -> PathBuf {
    crate_dir().join("tests/fixtures")
}

pub fn eval_assets() -> PathBuf {
    crate_dir().join("assets/eval")
}

pub fn shipped_registry() -> PathBuf {
    crate_dir().join("assets/registry/registry.jsonl")
}

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_synthtask"))
}

pub fn read_json(path: &Path) -> Json {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display())))
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn within(started: Instant, limit: Duration, what: &str) -> Result<Duration, String> {
    let took = started.elapsed();
    ensure!(took <= limit, "{what} took {took:?}, limit {limit:?}");
    Ok(took)
}

// Template conformance.

pub struct EvalTemplate {
    pub dataset: String,
    pub id: String,
    pub input: Template,
    pub target: Template,
}

pub fn load_eval_templates() -> Result<Vec<EvalTemplate>, String> {
    let mut out = Vec::new();
    let mut dirs: Vec<_> = std::fs::read_dir(eval_assets())
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for dir in dirs {
        let dataset = dir.file_name().unwrap().to_string_lossy().into_owned();
        for i in 1..=5 {
            let id = format!("t{i}");
            let input = load_template_file(dir.join(format!("{id}.tmpl"))).map_err(|e| format!("{dataset}/{id}: {e}"))?;
            let target = load_template_file(dir.join(format!("{id}.target.tmpl"))).map_err(|e| format!("{dataset}/{id} target: {e}"))?;
            out.push(EvalTemplate {
                dataset: dataset.clone(),
                id,
                input,
                target,
            });
        }
    }
    Ok(out)
}

fn render_pair(t: &EvalTemplate, record: &serde_json::Map<String, Json>, seed: u64) -> Result<(String, String, Option<Vec<String>>), String> {
    let mut ctx = RenderContext::from_json_object(record, seed);
    let input = render(&t.input, &ctx).map_err(|e| format!("{}/{} input: {e}", t.dataset, t.id))?;
    let choices = if t.input.has_choices() {
        let c = render_choices(&t.input, &ctx).map_err(|e| e.to_string())?;
        ctx.bind("answer_choices", c.clone());
        Some(c)
    } else {
        None
    };
    let target = render(&t.target, &ctx).map_err(|e| format!("{}/{} target: {e}", t.dataset, t.id))?;
    Ok((input, target, choices))
}

/// Renders every evaluation template over the fixture records and compares
/// with the frozen reference renderings. Templates with random filters are
/// compared as sets of possible outputs.
pub fn check_conformance() -> Outcome {
    let started = Instant::now();
    let templates = load_eval_templates()?;
    ensure!(templates.len() == 35, "expected 35 templates, found {}", templates.len());
    let records = read_json(&fixtures().join("conformance/records.json"));
    let expected = read_json(&fixtures().join("conformance/expected.json"));
    let expected = expected.as_array().ok_or("expected.json is not a list")?;
    let mut by_key = BTreeMap::new();
    for e in expected {
        let key = (e["dataset"].as_str().unwrap().to_owned(), e["template"].as_str().unwrap().to_owned(), e["record"].as_u64().unwrap() as usize);
        by_key.insert(key, e);
    }
    let mut checked = 0;
    let mut exact = 0;
    for t in &templates {
        let recs = records[&t.dataset].as_array().ok_or_else(|| format!("no records for {}", t.dataset))?;
        for (ri, rec) in recs.iter().enumerate() {
            let e = by_key
                .get(&(t.dataset.clone(), t.id.clone(), ri))
                .ok_or_else(|| format!("no reference rendering for {}/{} record {ri}", t.dataset, t.id))?;
            let want_inputs: BTreeSet<String> = serde_json::from_value(e["input"].clone()).unwrap();
            let want_targets: BTreeSet<String> = serde_json::from_value(e["target"].clone()).unwrap();
            let want_choices: Option<Vec<String>> = serde_json::from_value(e["answer_choices"].clone()).unwrap();
            let fields = rec.as_object().unwrap();
            let seeds = if want_inputs.len() == 1 && want_targets.len() == 1 { 8 } else { 400 };
            let mut got_inputs = BTreeSet::new();
            let mut got_targets = BTreeSet::new();
            for seed in 0..seeds {
                let (input, target, choices) = render_pair(t, fields, seed)?;
                ensure!(
                    choices == want_choices,
                    "{}/{} record {ri}: choices {choices:?} != {want_choices:?}",
                    t.dataset,
                    t.id
                );
                ensure!(
                    want_inputs.contains(&input),
                    "{}/{} record {ri}: input {input:?} is not a reference rendering",
                    t.dataset,
                    t.id
                );
                ensure!(
                    want_targets.contains(&target),
                    "{}/{} record {ri}: target {target:?} is not a reference rendering",
                    t.dataset,
                    t.id
                );
                got_inputs.insert(input);
                got_targets.insert(target);
            }
            ensure!(
                got_inputs == want_inputs && got_targets == want_targets,
                "{}/{} record {ri}: rendered {} inputs / {} targets, reference has {} / {}",
                t.dataset,
                t.id,
                got_inputs.len(),
                got_targets.len(),
                want_inputs.len(),
                want_targets.len()
            );
            if want_inputs.len() == 1 && want_targets.len() == 1 {
                exact += 1;
            }
            checked += 1;
        }
    }
    let took = within(started, Duration::from_secs(1), "conformance")?;
    Ok(format!("35 templates parse; {checked} renderings match ({exact} byte-exact, rest as full variant sets) in {took:.0?}"))
}

// Parser protocol.

pub const TEXT_ALPHABET: &[&str] = &[
    "a", "b", "Z", " ", " ", "\n", "\t", "?", "|", "<", ">", "{", "}", "pipe", "<|", "|>", "é", "漢", "\u{2028}", "\"", "{{", "}}", "context",
];

pub fn random_text(rng: &mut ChaCha8Rng, max_parts: usize) -> String {
    let n = rng.random_range(1..=max_parts);
    (0..n).map(|_| TEXT_ALPHABET[rng.random_range(0..TEXT_ALPHABET.len())]).collect()
}

/// Random non-empty trimmed text without a `<|pipe|>` line.
pub fn random_side(rng: &mut ChaCha8Rng) -> String {
    loop {
        let s = random_text(rng, 24).trim().to_owned();
        if !s.is_empty() && !s.lines().any(|l| l.trim() == "<|pipe|>") {
            return s;
        }
    }
}

pub fn check_parser_protocol(cases: usize) -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for i in 0..cases {
        let response = random_side(&mut rng);
        let mut instruction = random_side(&mut rng);
        if !instruction.contains(CONTEXT_PLACEHOLDER) {
            instruction = format!("{instruction} {CONTEXT_PLACEHOLDER}");
        }
        let context = random_side(&mut rng);
        let tt = TaskType::ALL[i % TaskType::ALL.len()];
        let pair = serialize_generator_pair(tt, &context, &instruction, &response).map_err(|e| format!("case {i}: {e}"))?;
        let back = parse_generation(&pair.output, CONTEXT_PLACEHOLDER).map_err(|e| format!("case {i}: {e}"))?;
        ensure!(back == (instruction.clone(), response.clone()), "case {i}: round trip changed {instruction:?}/{response:?} into {back:?}");
        let substituted = parse_generation(&pair.output, &context).map_err(|e| format!("case {i}: {e}"))?;
        ensure!(substituted.0 == instruction.replace(CONTEXT_PLACEHOLDER, &context), "case {i}: substitution mismatch");
    }

    let mut rejected = 0;
    for i in 0..cases {
        let mut text = random_text(&mut rng, 30);
        if i % 3 == 0 {
            text = format!("{text} <|pipe|> {}", random_text(&mut rng, 5));
        }
        if text.lines().any(|l| l.trim() == "<|pipe|>") {
            continue;
        }
        ensure!(parse_generation(&text, "C") == Err(ParseError::Unparsable), "accepted {text:?}");
        rejected += 1;
    }

    // Delimiter-free outputs are dropped and counted by the generation loop.
    let docs: Vec<Document> = (0..100)
        .map(|i| Document {
            id: format!("d{i}"),
            text: if i % 4 == 0 { format!("plain {i}") } else { format!("framed {i}") },
            dataset: "x".into(),
        })
        .collect();
    let tape = MockTape {
        default_completion: "Q {{context}}?\n<|pipe|>\nA".into(),
        completions: vec![synthtask::client::mock::CompletionRule {
            when_contains: "plain".into(),
            text: "Q without a delimiter <|pipe|> A".into(),
        }],
        ..MockTape::default()
    };
    let client = CompletionClient::new(Arc::new(MockEngine::new(tape)), 8);
    let out = generate_conditional(&docs, TaskType::YesNoQa, &client, &synthtask::client::SamplingParams::generation(), 1);
    ensure!(out.stats.filtered_unparsable == 25 && out.stats.parsed == 75, "stats {:?}", out.stats);
    ensure!(out.stats.identity_holds(), "identity broken: {:?}", out.stats);

    let took = within(started, Duration::from_secs(5), "parser protocol")?;
    Ok(format!("{cases} round trips exact; {rejected} delimiter-free texts rejected; 25/100 filtered and counted in {took:.0?}"))
}

// Corpus builder.

pub fn two_template_registry(dataset: &str) -> Vec<MetaTemplate> {
    let input = Arc::new(parse_template("{{text}}").unwrap());
    let make = |id: &str, out: &str| MetaTemplate {
        id: id.into(),
        dataset: dataset.into(),
        task_type: TaskType::ExtractiveQa,
        context_field: "text".into(),
        input_template: Arc::clone(&input),
        output_template: Arc::new(parse_template(out).unwrap()),
        context_free: false,
    };
    vec![
        make("first", "{{text}}\nQuestion: {{question}}\n|||\n{{answer}}"),
        make("second", "Read this: {{text}}\n{{question}}\n|||\n{{answer}}"),
    ]
}

pub fn synthetic_records(dataset: &str, n: usize) -> impl Iterator<Item = SourceRecord> + '_ {
    (0..n).map(move |i| {
        let mut fields = serde_json::Map::new();
        fields.insert("text".into(), Json::String(format!("Passage number {i} about topic {}.", i % 97)));
        fields.insert("question".into(), Json::String(format!("What number is passage {i}?")));
        fields.insert("answer".into(), Json::String(i.to_string()));
        SourceRecord {
            dataset: dataset.into(),
            fields,
        }
    })
}

/// Three-sigma binomial bound for 10,000 fair draws, computed independently
/// (mean 5000, sd 50) and frozen.
pub const UNIFORM_LOW: usize = 4850;
pub const UNIFORM_HIGH: usize = 5150;

pub fn corpus_bytes(n: usize, cap: usize, seed: u64) -> Result<(Vec<u8>, usize, usize), String> {
    let registry = two_template_registry("synthetic");
    let cfg = BuildConfig {
        per_dataset_cap: cap,
        seed,
        datasets: Vec::new(),
    };
    let builder = build_corpus(synthetic_records("synthetic", n), &registry, cfg).map_err(|e| e.to_string())?;
    let mut bytes = Vec::new();
    let mut pairs = 0;
    let mut first = 0;
    for pair in builder {
        let pair = pair.map_err(|e| e.to_string())?;
        if pair.meta["meta_template"] == "first" {
            first += 1;
        }
        serde_json::to_writer(&mut bytes, &pair).map_err(|e| e.to_string())?;
        bytes.push(b'\n');
        pairs += 1;
    }
    Ok((bytes, pairs, first))
}

pub fn check_ctga_builder() -> Outcome {
    let started = Instant::now();
    let (a, pairs, _) = corpus_bytes(150_000, 100_000, 2024)?;
    ensure!(pairs == 100_000, "150,000 records with cap 100,000 gave {pairs} pairs");
    let (b, _, _) = corpus_bytes(150_000, 100_000, 2024)?;
    ensure!(a == b, "two runs with the same seed differ");
    let (_, n, first) = corpus_bytes(10_000, 100_000, 2024)?;
    ensure!(n == 10_000, "10,000 records gave {n} pairs");
    ensure!(
        (UNIFORM_LOW..=UNIFORM_HIGH).contains(&first),
        "template split {first}/10000 outside [{UNIFORM_LOW}, {UNIFORM_HIGH}]"
    );
    let took = within(started, Duration::from_secs(30), "corpus builder")?;
    Ok(format!(
        "cap yields exactly 100000 pairs; runs byte-identical ({} bytes); split {first}/10000 within [{UNIFORM_LOW}, {UNIFORM_HIGH}] in {took:.1?}",
        a.len()
    ))
}

// Registry.

pub fn check_registry() -> Outcome {
    let names: BTreeSet<&str> = TaskType::ALL.iter().map(|t| t.name()).collect();
    ensure!(TaskType::ALL.len() == 16 && names.len() == 16, "vocabulary has {} distinct names", names.len());
    let shipped = load_registry(shipped_registry()).map_err(|e| e.to_string())?;
    let shipped_summary = summarize(&shipped);
    ensure!(shipped_summary.task_types.len() == 16, "shipped registry covers {} task types", shipped_summary.task_types.len());
    let catalog = load_registry(fixtures().join("catalog/registry.jsonl")).map_err(|e| e.to_string())?;
    let s = summarize(&catalog);
    ensure!(s.meta_templates == 323 && s.datasets == 38, "catalog fixture: {} entries over {} datasets", s.meta_templates, s.datasets);
    ensure!(s.task_types.len() == 16, "catalog fixture spans {} task types", s.task_types.len());
    Ok(format!(
        "16 task types; catalog fixture {} entries / {} datasets; shipped registry {} entries / {} datasets",
        s.meta_templates, s.datasets, shipped_summary.meta_templates, shipped_summary.datasets
    ))
}

// SQuAD F1.

pub fn check_squad_parity() -> Outcome {
    let cases = read_json(&fixtures().join("squad_f1_parity.json"));
    let cases = cases.as_array().ok_or("fixture is not a list")?;
    ensure!(cases.len() >= 20, "only {} cases", cases.len());
    let mut worked = false;
    for (i, c) in cases.iter().enumerate() {
        let pred = c["prediction"].as_str().unwrap();
        let golds: Vec<String> = serde_json::from_value(c["golds"].clone()).unwrap();
        let bits = u64::from_str_radix(c["expected_bits"].as_str().unwrap(), 16).unwrap();
        let got = squad_f1(pred, &golds).map_err(|e| format!("case {i}: {e}"))?;
        ensure!(got.to_bits() == bits, "case {i} ({pred:?} vs {golds:?}): {got:e} != {:e}", f64::from_bits(bits));
        if pred == "on the bar" && golds == ["on the bar under the shelf"] {
            ensure!(got == 2.0 / 3.0, "worked case gave {got}");
            worked = true;
        }
    }
    ensure!(worked, "worked case missing from fixture");
    Ok(format!("{} cases bit-identical to the reference evaluator, incl. 2/3 worked case", cases.len()))
}

// Ranked classification.

pub const CHOICE_WORDS: &[&str] = &["yes", "no", "maybe", "True", "False", "Neither", "A", "B", "C", "correct", "wrong", "unsure"];

pub struct Table {
    pub choices: Vec<String>,
    pub token_logprobs: Vec<Vec<f64>>,
}

impl Table {
    pub fn totals(&self) -> Vec<f64> {
        self.token_logprobs.iter().map(|v| v.iter().sum()).collect()
    }
}

pub fn random_table(rng: &mut ChaCha8Rng, equal_length: bool) -> Table {
    let k = rng.random_range(2..=4);
    let mut words: Vec<&str> = CHOICE_WORDS.to_vec();
    let mut choices = Vec::new();
    while choices.len() < k {
        let w = words.remove(rng.random_range(0..words.len()));
        choices.push(w.to_owned());
    }
    if equal_length {
        let len = rng.random_range(2..5);
        choices = (0..k).map(|i| format!("{}{}", (b'a' + i as u8) as char, "x".repeat(len))).collect();
    }
    let tie = rng.random_bool(0.2);
    let shared: Vec<f64> = (0..8).map(|_| -(rng.random_range(0..40) as f64) / 8.0).collect();
    let token_logprobs = choices
        .iter()
        .map(|c| {
            let n = c.chars().count() + 1;
            (0..n)
                .map(|j| if tie { shared[j % shared.len()] } else { -(rng.random_range(0..40) as f64) / 8.0 })
                .collect()
        })
        .collect();
    Table { choices, token_logprobs }
}

pub fn table_client(table: &Table, shift: f64) -> (CompletionClient, Template) {
    let tape = MockTape {
        default_completion: "x".into(),
        logprobs: table
            .choices
            .iter()
            .zip(&table.token_logprobs)
            .map(|(c, lps)| LogprobRule {
                when_contains: String::new(),
                suffix: format!(" {c}"),
                token_logprobs: Some(lps.iter().map(|l| l - shift).collect()),
                each: None,
            })
            .collect(),
        ..MockTape::default()
    };
    let source = format!("Question: {{{{q}}}}\nanswer_choices:\n{}", table.choices.join(" ||| "));
    (CompletionClient::new(Arc::new(MockEngine::new(tape)), 1), parse_template(&source).unwrap())
}

pub fn check_ranked_classification(tables: usize) -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let ctx = RenderContext::new(0).with("q", "Is the sky green?");
    let mut ties = 0;
    for i in 0..tables {
        let table = random_table(&mut rng, false);
        let totals = table.totals();
        let brute = {
            let mut best = 0;
            for (j, t) in totals.iter().enumerate() {
                if *t > totals[best] {
                    best = j;
                }
            }
            best
        };
        if totals.iter().filter(|t| **t == totals[brute]).count() > 1 {
            ties += 1;
        }
        let (client, template) = table_client(&table, 0.0);
        let got = ranked_classify(&template, &ctx, &client, false).map_err(|e| format!("table {i}: {e}"))?;
        ensure!(got == brute, "table {i}: predicted {got}, brute force {brute} over {totals:?}");

        let transforms: [&dyn Fn(f64) -> f64; 4] = [&|x| x.exp(), &|x| 3.0 * x + 7.0, &|x| x.atan(), &|x| (x - 100.0).powi(3)];
        for (k, f) in transforms.iter().enumerate() {
            let mapped: Vec<f64> = totals.iter().map(|&t| f(t)).collect();
            ensure!(argmax_lowest(&mapped) == Some(brute), "table {i}: transform {k} moved the argmax");
        }

        let eq = random_table(&mut rng, true);
        let (c0, t0) = table_client(&eq, 0.0);
        let (c1, t1) = table_client(&eq, rng.random_range(1..20) as f64 / 4.0);
        let a = ranked_classify(&t0, &ctx, &c0, false).map_err(|e| e.to_string())?;
        let b = ranked_classify(&t1, &ctx, &c1, false).map_err(|e| e.to_string())?;
        ensure!(a == b, "table {i}: constant per-token shift changed {a} to {b}");
    }
    ensure!(ties > 0, "no table exercised the tie rule");
    let took = within(started, Duration::from_secs(5), "ranked classification")?;
    Ok(format!("{tables} tables match brute force ({ties} with ties); monotone transforms and per-token shifts preserve argmax in {took:.0?}"))
}

// Statistics.

pub fn check_statistics() -> Outcome {
    let (m, s) = mean_stderr(&[1.0, 2.0, 3.0, 4.0, 5.0]).map_err(|e| e.to_string())?;
    ensure!(m == 3.0 && (s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6 && format!("{s:.4}") == "0.7071", "[1..5] gave ({m}, {s})");
    let (m, s) = mean_stderr(&[1.0, 2.0, 3.0]).map_err(|e| e.to_string())?;
    ensure!(m == 2.0 && (s - 1.0 / 3f64.sqrt()).abs() < 1e-12, "[1,2,3] gave ({m}, {s})");
    for x in [0.0, 1.0, 42.5, -3.25, 1e-9, 99.9] {
        for n in [2, 5, 17] {
            let (m, s) = mean_stderr(&vec![x; n]).map_err(|e| e.to_string())?;
            ensure!(m == x && s == 0.0, "constant {x} x{n} gave ({m}, {s})");
        }
    }
    ensure!(mean_stderr(&[1.0]).is_err(), "a single value was accepted");
    Ok("[1,2,3,4,5] -> (3.0, 0.707107); constant vectors -> stderr 0".into())
}

// Subprocess helpers for the command line.

pub struct ServedMock {
    child: Child,
    pub url: String,
}

impl Drop for ServedMock {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub fn serve_mock(tape: &Path, request_log: Option<&Path>) -> Result<ServedMock, String> {
    let mut cmd = Command::new(bin());
    cmd.args(["mock-serve", "--port", "0", "--tape"]).arg(tape);
    if let Some(log) = request_log {
        cmd.arg("--request-log").arg(log);
    }
    let mut child = cmd.stdout(Stdio::piped()).stderr(Stdio::null()).spawn().map_err(|e| e.to_string())?;
    let stdout = child.stdout.take().ok_or("no stdout")?;
    let mut line = String::new();
    BufReader::new(stdout).read_line(&mut line).map_err(|e| e.to_string())?;
    let url = line.trim().strip_prefix("listening on ").ok_or_else(|| format!("unexpected banner {line:?}"))?.to_owned();
    Ok(ServedMock { child, url })
}

pub fn run_cli(args: &[&str]) -> Result<std::process::Output, String> {
    Command::new(bin()).args(args).env_remove("RUST_LOG").output().map_err(|e| e.to_string())
}

pub fn run_ok(args: &[&str]) -> Result<String, String> {
    let out = run_cli(args)?;
    ensure!(
        out.status.success(),
        "`synthtask {}` exited {:?}: {}",
        args.join(" "),
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

pub fn check_end_to_end() -> Outcome {
    let started = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let e2e = fixtures().join("e2e");
    let expected = read_json(&e2e.join("expected.json"));
    let mock = serve_mock(&e2e.join("tape.json"), None)?;

    let pairs = dir.path().join("pairs.jsonl");
    let mut outputs = Vec::new();
    for _ in 0..2 {
        run_ok(&[
            "generate",
            "--mode",
            "conditional",
            "--docs",
            s(&e2e.join("docs.jsonl")),
            "--task-type",
            "yes-no question answering",
            "--endpoint",
            &mock.url,
            "--out",
            s(&pairs),
        ])?;
        outputs.push(std::fs::read(&pairs).map_err(|e| e.to_string())?);
    }
    ensure!(outputs[0] == outputs[1], "two generation runs differ");
    let stats = read_json(&dir.path().join("pairs.jsonl.stats.json"));
    let n = |k: &str| stats[k].as_u64().unwrap_or(u64::MAX);
    ensure!(
        n("requested") == n("parsed") + n("filtered_unparsable") + n("filtered_empty") && n("endpoint_failures") == 0,
        "stats identity broken: {stats}"
    );
    for k in ["requested", "parsed", "filtered_unparsable", "filtered_empty"] {
        ensure!(stats[k] == expected["generation"][k], "{k}: {} != {}", stats[k], expected["generation"][k]);
    }
    let written = PairReader::new(std::io::Cursor::new(outputs[0].clone())).count();
    ensure!(written as u64 == n("parsed"), "{written} pairs written, {} parsed", n("parsed"));

    let report_path = dir.path().join("report.json");
    run_ok(&[
        "evaluate",
        "--task-config",
        s(&e2e.join("task/task.toml")),
        "--endpoint",
        &mock.url,
        "--report",
        s(&report_path),
    ])?;
    let report = read_json(&report_path);
    ensure!(report["valid"] == Json::Bool(true), "report invalid: {report}");
    ensure!(report["n_examples"] == expected["n_examples"], "n_examples {}", report["n_examples"]);
    let close = |a: &Json, b: &Json| (a.as_f64().unwrap_or(f64::NAN) - b.as_f64().unwrap_or(f64::NAN)).abs() < 1e-9;
    let got = report["per_template"].as_array().ok_or("no per_template")?;
    let want = expected["per_template"].as_array().unwrap();
    ensure!(got.len() == 5, "{} template scores", got.len());
    for (g, w) in got.iter().zip(want) {
        ensure!(g["id"] == w["id"] && close(&g["score"], &w["score"]), "template score {g} != {w}");
    }
    ensure!(close(&report["mean"], &expected["mean"]) && close(&report["stderr"], &expected["stderr"]), "mean/stderr {} {}", report["mean"], report["stderr"]);
    let took = within(started, Duration::from_secs(60), "end-to-end")?;
    let scores: Vec<String> = got.iter().map(|g| format!("{:.1}", g["score"].as_f64().unwrap())).collect();
    Ok(format!(
        "50 docs -> {} pairs ({} filtered), deterministic; report [{}] mean {:.1} matches the tape in {took:.1?}",
        n("parsed"),
        n("filtered_unparsable"),
        scores.join(", "),
        report["mean"].as_f64().unwrap()
    ))
}

pub fn check_generation_defaults() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let e2e = fixtures().join("e2e");
    let log_path = dir.path().join("requests.jsonl");

    // Extractive task over the bundled news templates and fixture records.
    let records = read_json(&fixtures().join("conformance/records.json"));
    let test = dir.path().join("test.jsonl");
    let lines: Vec<String> = records["squadshifts_nyt"].as_array().unwrap().iter().map(|r| r.to_string()).collect();
    std::fs::write(&test, lines.join("\n") + "\n").map_err(|e| e.to_string())?;
    let tdir = eval_assets().join("squadshifts_nyt");
    let templates: Vec<String> = (1..=5).map(|i| format!("{:?}", tdir.join(format!("t{i}.tmpl")).to_str().unwrap())).collect();
    let config = dir.path().join("extractive.toml");
    std::fs::write(
        &config,
        format!(
            "name = \"nyt\"\nkind = \"extractive_generation\"\ntemplates = [{}]\ntest_file = \"test.jsonl\"\ngold_column = \"answers.text\"\n",
            templates.join(", ")
        ),
    )
    .map_err(|e| e.to_string())?;

    let mock = serve_mock(&e2e.join("tape.json"), Some(&log_path))?;
    let docs = dir.path().join("docs.jsonl");
    let all = std::fs::read_to_string(e2e.join("docs.jsonl")).map_err(|e| e.to_string())?;
    std::fs::write(&docs, all.lines().take(6).collect::<Vec<_>>().join("\n") + "\n").map_err(|e| e.to_string())?;
    run_ok(&[
        "generate",
        "--docs",
        s(&docs),
        "--task-type",
        "extractive question answering",
        "--endpoint",
        &mock.url,
        "--out",
        s(&dir.path().join("pairs.jsonl")),
    ])?;
    let generation_requests = std::fs::read_to_string(&log_path).map_err(|e| e.to_string())?.lines().count();
    run_ok(&["evaluate", "--task-config", s(&config), "--endpoint", &mock.url, "--report", s(&dir.path().join("r.json"))])?;
    drop(mock);

    let log: Vec<Json> = std::fs::read_to_string(&log_path)
        .map_err(|e| e.to_string())?
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    ensure!(generation_requests == 6, "{generation_requests} generation requests logged");
    ensure!(log.len() == 6 + 10, "{} requests logged in total", log.len());
    for r in &log[..6] {
        ensure!(
            r["top_p"] == 0.95 && r["temperature"] == 0.5 && r["max_tokens"] == 256,
            "generation request carried {r}"
        );
    }
    for r in &log[6..] {
        ensure!(
            r["temperature"] == 0.0 && r["top_p"] == 1.0 && r["max_tokens"] == 64 && r["stop"] == serde_json::json!(["\n"]),
            "extractive request carried {r}"
        );
    }
    Ok("6 generation requests carry (0.95, 0.5, 256); 10 extractive requests carry temperature 0, top_p 1, stop \\n".into())
}

pub fn bind_value(ctx: &mut RenderContext, name: &str, v: impl Into<Value>) {
    ctx.bind(name, v);
}
