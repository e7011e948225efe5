//! Prompt templates, stored as text resources next to the crate.

use std::collections::BTreeMap;

use crate::util::sha256_hex;

pub const PROPOSER_SYSTEM: &str = include_str!("../../prompts/proposer.txt");
pub const REFINER_SYSTEM: &str = include_str!("../../prompts/refiner.txt");
/// User role shared by proposer and refiner; the SoM screenshot follows.
pub const AGENT_USER: &str = include_str!("../../prompts/agent_user.txt");
pub const SUMMARIZER_SYSTEM: &str = include_str!("../../prompts/summarizer.txt");
pub const VERIFIER_SYSTEM: &str = include_str!("../../prompts/verifier.txt");
pub const VERIFIER_USER: &str = include_str!("../../prompts/verifier_user.txt");
pub const REASONING_SYSTEM: &str = include_str!("../../prompts/reasoning.txt");
pub const REASONING_USER: &str = include_str!("../../prompts/reasoning_user.txt");
pub const TRAINING_SYSTEM: &str = include_str!("../../prompts/training.txt");
pub const TRAINING_USER: &str = include_str!("../../prompts/training_user.txt");

const ALL: &[(&str, &str)] = &[
    ("agent_user", AGENT_USER),
    ("proposer", PROPOSER_SYSTEM),
    ("reasoning", REASONING_SYSTEM),
    ("reasoning_user", REASONING_USER),
    ("refiner", REFINER_SYSTEM),
    ("summarizer", SUMMARIZER_SYSTEM),
    ("training", TRAINING_SYSTEM),
    ("training_user", TRAINING_USER),
    ("verifier", VERIFIER_SYSTEM),
    ("verifier_user", VERIFIER_USER),
];

/// Template name to sha256 of its text. Stored next to transcripts so that
/// editing a template invalidates recordings made against the old text.
pub fn template_digests() -> BTreeMap<String, String> {
    ALL.iter()
        .map(|(name, text)| (name.to_string(), sha256_hex(text.trim_end())))
        .collect()
}

/// Substitutes `{NAME}` placeholders; the trailing newline of the resource
/// is dropped.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.trim_end().to_string();
    for (name, value) in vars {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}
