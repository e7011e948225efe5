//! Training-instance export with the two step-sampling strategies.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::{Datastore, DatastoreError, TrajectoryRecord};
use crate::action::render_training_action;
use crate::agents::prompts::{fill, TRAINING_SYSTEM, TRAINING_USER};
use crate::page::{select_candidates, serialize_a11y, A11ySnapshot, HeuristicRanker};

/// Elements shown per training instance; the gold element is always kept.
pub const CANDIDATES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingStrategy {
    /// Uniform over trajectories, then uniform over that trajectory's steps.
    TrajectoryThenStep,
    /// Uniform over all steps of all trajectories.
    UniformStep,
}

impl std::str::FromStr for SamplingStrategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "trajectory-then-step" => Ok(Self::TrajectoryThenStep),
            "uniform-step" => Ok(Self::UniformStep),
            _ => Err(format!("unknown sampling strategy `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExportError {
    #[error("nothing to sample from")]
    EmptySelection,
    #[error(transparent)]
    Store(#[from] DatastoreError),
    #[error("record {id} step {step}: {reason}")]
    BadStep { id: String, step: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingInstance {
    pub record_id: String,
    pub step: usize,
    pub system: String,
    pub user: String,
    pub target: Value,
    /// SoM screenshot, relative to the dataset root.
    pub image: String,
}

/// `n` draws of (trajectory, step) positions; deterministic in `seed`.
/// Trajectories without steps are never drawn.
pub fn sample_steps(
    step_counts: &[usize],
    strategy: SamplingStrategy,
    seed: u64,
    n: usize,
) -> Result<Vec<(usize, usize)>, ExportError> {
    let total: usize = step_counts.iter().sum();
    if total == 0 {
        return Err(ExportError::EmptySelection);
    }
    let nonempty: Vec<usize> = (0..step_counts.len()).filter(|&i| step_counts[i] > 0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let pick = match strategy {
            SamplingStrategy::TrajectoryThenStep => {
                let t = nonempty[rng.random_range(0..nonempty.len())];
                (t, rng.random_range(0..step_counts[t]))
            }
            SamplingStrategy::UniformStep => {
                let mut k = rng.random_range(0..total);
                let mut t = 0;
                while k >= step_counts[t] {
                    k -= step_counts[t];
                    t += 1;
                }
                (t, k)
            }
        };
        out.push(pick);
    }
    Ok(out)
}

fn instance(store: &Datastore, rec: &TrajectoryRecord, step: usize) -> Result<TrainingInstance, ExportError> {
    let bad = |reason: String| ExportError::BadStep { id: rec.id.clone(), step, reason };
    let s = &rec.steps[step];
    let a11y_ref = s.artifacts.get("a11y_json").ok_or_else(|| bad("no accessibility snapshot".into()))?;
    let snap: A11ySnapshot = serde_json::from_slice(&store.read_artifact(&rec.id, a11y_ref)?)
        .map_err(|e| bad(e.to_string()))?;
    let shown = select_candidates(&snap, &HeuristicRanker, CANDIDATES, s.grounded.element())
        .map_err(|e| bad(e.to_string()))?;
    let task = if rec.summary_task.is_empty() { &s.refined_task } else { &rec.summary_task };
    let task = task.trim().trim_end_matches('.');
    let history: Vec<String> = rec.steps[..step]
        .iter()
        .enumerate()
        .map(|(i, p)| format!("{}. {}", i + 1, p.action_nl))
        .collect();
    let history = if history.is_empty() { "None".to_string() } else { format!("\n{}\n", history.join("\n")) };
    let tree = format!("\n{}\n", serialize_a11y(&shown, usize::MAX));
    let user = fill(
        TRAINING_USER,
        &[("TASK DESCRIPTION", task), ("PREVIOUS ACTIONS", &history), ("ACCESSIBILITY TREE", &tree)],
    );
    let som = s.artifacts.get("som_screenshot").ok_or_else(|| bad("no SoM screenshot".into()))?;
    Ok(TrainingInstance {
        record_id: rec.id.clone(),
        step,
        system: fill(TRAINING_SYSTEM, &[]),
        user,
        target: render_training_action(&s.grounded, &s.action_nl),
        image: format!("{}/{}", rec.id, som.path),
    })
}

/// Draws `n` training instances from the given records.
pub fn export_training(
    store: &Datastore,
    ids: &[String],
    strategy: SamplingStrategy,
    seed: u64,
    n: usize,
) -> Result<Vec<TrainingInstance>, ExportError> {
    let records = ids.iter().map(|id| store.load_record(id)).collect::<Result<Vec<_>, _>>()?;
    let counts: Vec<usize> = records.iter().map(|r| r.steps.len()).collect();
    sample_steps(&counts, strategy, seed, n)?
        .into_iter()
        .map(|(t, s)| instance(store, &records[t], s))
        .collect()
}
