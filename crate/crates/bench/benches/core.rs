use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use trajsynth_core::metrics::{keynode_metrics, step_metrics, KeyNodeResult, StepEvalRecord};
use trajsynth_core::page::{build_a11y, render_markdown, select_candidates, serialize_a11y, HeuristicRanker};
use trajsynth_core::{parse_action, render_action, Viewport};

const HOME: &str = include_str!("../../core/fixtures/shop/pages/home.html");
const CHECKOUT: &str = include_str!("../../core/fixtures/shop/pages/checkout.html");

fn action_grammar(c: &mut Criterion) {
    let lines = [
        "click [127]",
        "type [3] [three-seat sofa]",
        "select [7] [Hakebo beige]",
        "goto [https://shop.example/p/uppland]",
        "search_google [fabric sofa under 900]",
        "scroll [down]",
        "stop",
    ];
    c.bench_function("parse_action", |b| {
        b.iter(|| {
            for l in &lines {
                black_box(parse_action(black_box(l)).unwrap());
            }
        })
    });
    let actions: Vec<_> = lines.iter().map(|l| parse_action(l).unwrap()).collect();
    c.bench_function("render_action", |b| {
        b.iter(|| {
            for a in &actions {
                black_box(render_action(black_box(a)));
            }
        })
    });
}

fn page_model(c: &mut Criterion) {
    let vp = Viewport::default();
    c.bench_function("build_a11y/home", |b| b.iter(|| build_a11y(black_box(HOME), vp).unwrap()));
    let snap = build_a11y(HOME, vp).unwrap();
    c.bench_function("serialize_a11y/home", |b| b.iter(|| serialize_a11y(black_box(&snap), 400)));
    c.bench_function("select_candidates/home", |b| {
        b.iter(|| select_candidates(black_box(&snap), &HeuristicRanker, 5, None).unwrap())
    });
    c.bench_function("render_markdown/checkout", |b| b.iter(|| render_markdown(black_box(CHECKOUT)).unwrap()));
}

fn metrics(c: &mut Criterion) {
    let results: Vec<KeyNodeResult> = (0..1000u32)
        .map(|i| KeyNodeResult {
            task_id: i.to_string(),
            key_nodes_total: 1 + i % 7,
            key_nodes_completed: (i * 31) % (2 + i % 7),
        })
        .map(|mut r| {
            r.key_nodes_completed = r.key_nodes_completed.min(r.key_nodes_total);
            r
        })
        .collect();
    c.bench_function("keynode_metrics/1000", |b| b.iter(|| keynode_metrics(black_box(&results), 1).unwrap()));
    let steps: Vec<StepEvalRecord> = (0..1000)
        .map(|i| StepEvalRecord {
            step_id: i.to_string(),
            predicted_element: format!("e{}", i % 5),
            gold_elements: [format!("e{}", i % 3)].into(),
            predicted_op: if i % 2 == 0 { "type laptop bag".into() } else { "click".into() },
            gold_op: "type laptop".into(),
        })
        .collect();
    c.bench_function("step_metrics/1000", |b| b.iter(|| step_metrics(black_box(&steps)).unwrap()));
}

criterion_group!(benches, action_grammar, page_model, metrics);
criterion_main!(benches);
