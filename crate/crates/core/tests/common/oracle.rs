//! Independent recounts and brute-force scorers.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde_json::Value;
use trajsynth_core::datastore::DatasetStats;
use trajsynth_core::metrics::{KeyNodeResult, StepEvalRecord};

pub const EPS: f64 = 1e-12;

#[derive(Debug)]
pub struct Recount {
    pub n_total: u64,
    pub n_success: u64,
    pub n_counted: u64,
    pub steps: u64,
    pub elements: u64,
    pub urls: BTreeSet<String>,
    pub token_counts: Vec<u64>,
    pub scroll_counts: Vec<(String, bool, usize)>,
}

fn token_count(re: &Regex, s: &str) -> u64 {
    re.find_iter(s).count() as u64
}

fn defragment(v: &Value) -> String {
    let s = v.as_str().expect("url string");
    match s.find('#') {
        Some(i) => s[..i].to_string(),
        None => s.to_string(),
    }
}

pub fn recount(root: &Path, success_only: bool) -> Recount {
    let re = Regex::new(r"[\p{Alphabetic}\p{N}_]+|\S").unwrap();
    let mut dirs: Vec<_> = fs::read_dir(root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir() && !p.file_name().unwrap().to_string_lossy().starts_with('.'))
        .collect();
    dirs.sort();
    let mut r = Recount {
        n_total: 0,
        n_success: 0,
        n_counted: 0,
        steps: 0,
        elements: 0,
        urls: BTreeSet::new(),
        token_counts: Vec::new(),
        scroll_counts: Vec::new(),
    };
    for dir in dirs {
        let m: Value = serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap();
        let success = m["status"] == "success" && m["verdict"]["status"] == "success";
        r.n_total += 1;
        r.n_success += u64::from(success);
        let steps = m["steps"].as_array().unwrap();
        let scrolls = steps.iter().filter(|s| s["grounded"].as_str().unwrap().starts_with("scroll")).count();
        r.scroll_counts.push((m["id"].as_str().unwrap().to_string(), success, scrolls));
        if success_only && !success {
            continue;
        }
        r.n_counted += 1;
        r.steps += steps.len() as u64;
        r.urls.insert(defragment(&m["seed"]["url"]));
        if !m["final_page"].is_null() {
            r.urls.insert(defragment(&m["final_page"]["url"]));
        }
        let mut tokens = 0;
        for (i, s) in steps.iter().enumerate() {
            r.elements += s["element_count"].as_u64().unwrap();
            r.urls.insert(defragment(&s["url"]));
            let tree = fs::read_to_string(dir.join(format!("steps/{i:03}.a11y.txt"))).unwrap();
            tokens += token_count(&re, &tree) + token_count(&re, s["grounded"].as_str().unwrap());
        }
        r.token_counts.push(tokens);
    }
    r
}

pub fn p90(values: &[u64]) -> Option<u64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort();
    let rank = (0.9 * v.len() as f64).ceil() as usize;
    Some(v[rank.max(1) - 1])
}

/// Asserts that computed statistics agree with a recount.
pub fn check_stats(stats: &DatasetStats, r: &Recount) {
    assert_eq!(stats.n_total, r.n_total);
    assert_eq!(stats.n_success, r.n_success);
    assert_eq!(stats.n_counted, r.n_counted);
    assert_eq!(stats.n_corrupt, 0);
    assert_eq!(stats.images, r.steps);
    assert_eq!(stats.elements, r.elements);
    assert_eq!(stats.unique_urls, r.urls.len() as u64);
    assert_eq!(stats.tokens, r.token_counts.iter().sum::<u64>());
    let avg = r.steps as f64 / r.n_counted as f64;
    assert_eq!(format!("{:.3}", stats.avg_steps), format!("{avg:.3}"));
    let per_image = r.elements as f64 / r.steps as f64;
    assert!((stats.avg_elements_per_image - per_image).abs() < 1e-12);
    assert_eq!(stats.token_histogram.p90, p90(&r.token_counts));
    assert_eq!(stats.token_histogram.bins.iter().sum::<u64>(), r.n_counted);
}

/// Scores each task by walking its key nodes one at a time.
pub fn keynode_oracle(tasks: &[KeyNodeResult], tolerance: u32) -> (f64, f64, f64) {
    let mut ratios = Vec::new();
    let mut done_nodes = 0u32;
    let mut all_nodes = 0u32;
    let mut passed = 0u32;
    for t in tasks {
        let nodes: Vec<bool> = (0..t.key_nodes_total).map(|i| i < t.key_nodes_completed).collect();
        let done = nodes.iter().filter(|&&b| b).count() as u32;
        let missed = nodes.iter().filter(|&&b| !b).count() as u32;
        ratios.push(f64::from(done) / nodes.len() as f64);
        done_nodes += done;
        all_nodes += nodes.len() as u32;
        if missed <= tolerance {
            passed += 1;
        }
    }
    let n = tasks.len() as f64;
    (ratios.iter().sum::<f64>() / n, f64::from(done_nodes) / f64::from(all_nodes), f64::from(passed) / n)
}

/// Harmonic-mean F1 from distinct lowercased tokens, counted pairwise.
pub fn f1_oracle(predicted: &str, gold: &str) -> f64 {
    let distinct = |s: &str| -> Vec<String> {
        let mut v: Vec<String> = s.split_whitespace().map(|t| t.to_lowercase()).collect();
        v.sort();
        v.dedup();
        v
    };
    let (p, g) = (distinct(predicted), distinct(gold));
    let common = p.iter().filter(|t| g.iter().any(|u| u == *t)).count();
    if common == 0 {
        0.0
    } else {
        2.0 * common as f64 / (p.len() + g.len()) as f64
    }
}

pub fn step_oracle(records: &[StepEvalRecord]) -> (f64, f64, f64) {
    let n = records.len() as f64;
    let mut el = 0.0;
    let mut f1 = 0.0;
    let mut sr = 0.0;
    for r in records {
        let hit = r.gold_elements.iter().any(|g| *g == r.predicted_element);
        let f = f1_oracle(&r.predicted_op, &r.gold_op);
        el += f64::from(u8::from(hit));
        f1 += f;
        if hit && (f - 1.0).abs() < EPS {
            sr += 1.0;
        }
    }
    (el / n, f1 / n, sr / n)
}

pub fn random_op(rng: &mut ChaCha8Rng) -> String {
    const WORDS: [&str; 8] = ["click", "type", "select", "Laptop", "laptops", "blue", "SOFA", "beige"];
    let n = rng.random_range(1..5);
    let mut out = String::new();
    for i in 0..n {
        if i > 0 {
            out.push_str(if rng.random_bool(0.2) { "  " } else { " " });
        }
        let w = WORDS[rng.random_range(0..WORDS.len())];
        if rng.random_bool(0.3) {
            out.push_str(&w.to_uppercase());
        } else {
            out.push_str(w);
        }
    }
    out
}
