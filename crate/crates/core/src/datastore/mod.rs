//! On-disk trajectory records plus the dataset-level computations over
//! them: statistics, the training filter, cost accounting and export.
//!
//! Layout: one directory per record holding `manifest.json` and
//! `steps/NNN.{png,som.png,html,a11y.txt,a11y.json,reasoning.txt}`, plus
//! `final.{png,som.png,html,a11y.json}` for the page after the last step.
//! Records are assembled in a scratch directory and renamed into place.

mod cost;
mod export;
mod record;
mod stats;

pub use cost::{cost_report, format_dollars, CostLedger, CostRates, StageCost};
pub use export::{export_training, sample_steps, ExportError, SamplingStrategy, TrainingInstance};
pub use record::{
    now_us, ArtifactRef, FinalPage, StepOrigin, StepRecord, Timings, Trajectory, TrajectoryRecord,
    TrajectoryStatus, SCHEMA_VERSION,
};
pub use stats::{compute_stats, filter_training, DatasetStats, StatsScope, TokenHistogram, HISTOGRAM_BINS};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::page::{serialize_a11y, A11ySnapshot, PageObservation, Screenshot};
use crate::util::sha256_hex;

const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DatastoreError {
    #[error("datastore unavailable: {0}")]
    Unavailable(String),
    #[error("record {id}: corrupt manifest: {reason}")]
    CorruptManifest { id: String, reason: String },
    #[error("record {id}: missing artifact {path}")]
    MissingArtifact { id: String, path: String },
    #[error("record {0} not found")]
    NotFound(String),
    #[error("record {id} is inconsistent: {reason}")]
    InvalidRecord { id: String, reason: String },
    #[error("i/o: {0}")]
    Io(String),
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> DatastoreError + '_ {
    move |e| DatastoreError::Io(format!("{}: {e}", path.display()))
}

/// Digest of a manifest with wall-clock timings removed; equal for
/// reproducible runs.
pub fn manifest_digest(record: &TrajectoryRecord) -> String {
    let mut v = serde_json::to_value(record).expect("record serializes");
    if let Some(m) = v.as_object_mut() {
        m.remove("timings");
    }
    sha256_hex(v.to_string())
}

#[derive(Debug, Clone)]
pub struct Datastore {
    root: PathBuf,
}

static SCRATCH: AtomicU64 = AtomicU64::new(0);

struct Writer<'a> {
    dir: &'a Path,
    refs: BTreeMap<String, ArtifactRef>,
}

impl Writer<'_> {
    fn put(&mut self, kind: &str, rel: String, bytes: &[u8]) -> Result<(), DatastoreError> {
        let path = self.dir.join(&rel);
        fs::write(&path, bytes).map_err(io(&path))?;
        self.refs.insert(kind.to_string(), ArtifactRef { path: rel, sha256: sha256_hex(bytes) });
        Ok(())
    }

    fn observation(&mut self, stem: &str, obs: &PageObservation, with_text: bool) -> Result<(), DatastoreError> {
        self.put("screenshot", format!("{stem}.png"), &obs.screenshot.to_png())?;
        self.put("som_screenshot", format!("{stem}.som.png"), &obs.som_screenshot.to_png())?;
        self.put("html", format!("{stem}.html"), obs.html.as_bytes())?;
        if with_text {
            self.put("a11y_text", format!("{stem}.a11y.txt"), serialize_a11y(&obs.a11y, usize::MAX).as_bytes())?;
        }
        let json = serde_json::to_vec_pretty(&obs.a11y).expect("snapshot serializes");
        self.put("a11y_json", format!("{stem}.a11y.json"), &json)
    }

    fn take(&mut self) -> BTreeMap<String, ArtifactRef> {
        std::mem::take(&mut self.refs)
    }
}

impl Datastore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn record_dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    /// Creates the root and proves it is writable.
    pub fn probe(&self) -> Result<(), DatastoreError> {
        let unavailable = |e: std::io::Error| DatastoreError::Unavailable(format!("{}: {e}", self.root.display()));
        fs::create_dir_all(&self.root).map_err(unavailable)?;
        let probe = self.root.join(format!(".probe-{}", std::process::id()));
        fs::write(&probe, b"ok").map_err(unavailable)?;
        fs::remove_file(&probe).map_err(unavailable)?;
        Ok(())
    }

    /// Writes all artifacts, then the manifest, then moves the record into
    /// place. Returns the record with artifact references filled in.
    pub fn persist(&self, t: &Trajectory) -> Result<TrajectoryRecord, DatastoreError> {
        let mut rec = t.record.clone();
        let invalid = |reason: String| DatastoreError::InvalidRecord { id: rec.id.clone(), reason };
        if t.observations.len() != rec.steps.len() {
            return Err(invalid(format!(
                "{} steps but {} observations",
                rec.steps.len(),
                t.observations.len()
            )));
        }
        if rec.final_page.is_some() != t.final_observation.is_some() {
            return Err(invalid("final page and final observation disagree".into()));
        }
        rec.check().map_err(invalid)?;
        if rec.id.is_empty() || rec.id.starts_with('.') || rec.id.contains(['/', '\\']) {
            return Err(invalid("unusable record id".into()));
        }

        fs::create_dir_all(&self.root).map_err(|e| DatastoreError::Unavailable(e.to_string()))?;
        let n = SCRATCH.fetch_add(1, Ordering::Relaxed);
        let scratch = self.root.join(format!(".tmp-{}-{}-{n}", rec.id, std::process::id()));
        let result = self.write_into(&scratch, &mut rec, t);
        if let Err(e) = result {
            let _ = fs::remove_dir_all(&scratch);
            return Err(e);
        }
        let dest = self.record_dir(&rec.id);
        if dest.exists() {
            fs::remove_dir_all(&dest).map_err(io(&dest))?;
        }
        fs::rename(&scratch, &dest).map_err(io(&dest))?;
        Ok(rec)
    }

    fn write_into(&self, dir: &Path, rec: &mut TrajectoryRecord, t: &Trajectory) -> Result<(), DatastoreError> {
        let steps_dir = dir.join("steps");
        fs::create_dir_all(&steps_dir).map_err(io(&steps_dir))?;
        let mut w = Writer { dir, refs: BTreeMap::new() };
        for (step, obs) in rec.steps.iter_mut().zip(&t.observations) {
            let stem = format!("steps/{:03}", step.ordinal);
            w.observation(&stem, obs, true)?;
            if let Some(r) = &step.reasoning {
                w.put("reasoning", format!("{stem}.reasoning.txt"), r.as_bytes())?;
            }
            step.artifacts = w.take();
        }
        if let (Some(fp), Some(obs)) = (rec.final_page.as_mut(), &t.final_observation) {
            w.observation("final", obs, false)?;
            fp.artifacts = w.take();
        }
        let manifest = serde_json::to_vec_pretty(&*rec).expect("record serializes");
        let path = dir.join(MANIFEST);
        fs::write(&path, manifest).map_err(io(&path))
    }

    /// Record ids in lexical order; scratch directories are skipped.
    pub fn list_ids(&self) -> Result<Vec<String>, DatastoreError> {
        if !self.root.exists() {
            return Ok(Vec::new());
        }
        let mut ids: Vec<String> = fs::read_dir(&self.root)
            .map_err(io(&self.root))?
            .filter_map(Result::ok)
            .filter(|e| e.path().is_dir())
            .filter_map(|e| e.file_name().to_str().map(str::to_string))
            .filter(|n| !n.starts_with('.'))
            .collect();
        ids.sort();
        Ok(ids)
    }

    /// Manifest only, after checking that every referenced artifact exists.
    pub fn load_record(&self, id: &str) -> Result<TrajectoryRecord, DatastoreError> {
        let dir = self.record_dir(id);
        let path = dir.join(MANIFEST);
        if !dir.is_dir() {
            return Err(DatastoreError::NotFound(id.to_string()));
        }
        let corrupt = |reason: String| DatastoreError::CorruptManifest { id: id.to_string(), reason };
        let bytes = fs::read(&path).map_err(|e| corrupt(e.to_string()))?;
        let rec: TrajectoryRecord = serde_json::from_slice(&bytes).map_err(|e| corrupt(e.to_string()))?;
        if rec.schema_version != SCHEMA_VERSION {
            return Err(corrupt(format!("unsupported schema version {}", rec.schema_version)));
        }
        if rec.id != id {
            return Err(corrupt(format!("manifest id {} does not match directory", rec.id)));
        }
        rec.check().map_err(corrupt)?;
        let refs = rec
            .steps
            .iter()
            .flat_map(|s| s.artifacts.values())
            .chain(rec.final_page.iter().flat_map(|f| f.artifacts.values()));
        for r in refs {
            if r.path.contains("..") || !dir.join(&r.path).is_file() {
                return Err(DatastoreError::MissingArtifact { id: id.to_string(), path: r.path.clone() });
            }
        }
        Ok(rec)
    }

    /// Reads one artifact and checks its digest.
    pub fn read_artifact(&self, id: &str, r: &ArtifactRef) -> Result<Vec<u8>, DatastoreError> {
        let path = self.record_dir(id).join(&r.path);
        let bytes = fs::read(&path).map_err(|_| DatastoreError::MissingArtifact { id: id.to_string(), path: r.path.clone() })?;
        if sha256_hex(&bytes) != r.sha256 {
            return Err(DatastoreError::CorruptManifest {
                id: id.to_string(),
                reason: format!("digest mismatch for {}", r.path),
            });
        }
        Ok(bytes)
    }

    fn read_observation(
        &self,
        id: &str,
        refs: &BTreeMap<String, ArtifactRef>,
        url: &str,
        digest: &str,
    ) -> Result<PageObservation, DatastoreError> {
        let get = |kind: &str| -> Result<Vec<u8>, DatastoreError> {
            let r = refs.get(kind).ok_or_else(|| DatastoreError::MissingArtifact {
                id: id.to_string(),
                path: format!("<{kind}>"),
            })?;
            self.read_artifact(id, r)
        };
        let corrupt = |reason: String| DatastoreError::CorruptManifest { id: id.to_string(), reason };
        let png = |kind: &str| -> Result<Screenshot, DatastoreError> {
            Screenshot::from_png(&get(kind)?).map_err(|e| corrupt(e.to_string()))
        };
        let a11y: A11ySnapshot = serde_json::from_slice(&get("a11y_json")?).map_err(|e| corrupt(e.to_string()))?;
        let html = String::from_utf8(get("html")?).map_err(|e| corrupt(e.to_string()))?;
        Ok(PageObservation {
            screenshot: png("screenshot")?,
            som_screenshot: png("som_screenshot")?,
            a11y,
            html,
            url: url.to_string(),
            digest: digest.to_string(),
        })
    }

    /// Full inverse of [`Datastore::persist`].
    pub fn load(&self, id: &str) -> Result<Trajectory, DatastoreError> {
        let record = self.load_record(id)?;
        let observations = record
            .steps
            .iter()
            .map(|s| self.read_observation(id, &s.artifacts, &s.url, &s.pre_digest))
            .collect::<Result<Vec<_>, _>>()?;
        let final_observation = match &record.final_page {
            Some(f) => Some(self.read_observation(id, &f.artifacts, &f.url, &f.digest)?),
            None => None,
        };
        Ok(Trajectory { record, observations, final_observation })
    }

    /// Text of a step's serialized accessibility tree.
    pub fn step_a11y_text(&self, rec: &TrajectoryRecord, ordinal: usize) -> Result<String, DatastoreError> {
        let step = rec.steps.get(ordinal).ok_or_else(|| DatastoreError::InvalidRecord {
            id: rec.id.clone(),
            reason: format!("no step {ordinal}"),
        })?;
        let r = step.artifacts.get("a11y_text").ok_or_else(|| DatastoreError::MissingArtifact {
            id: rec.id.clone(),
            path: format!("steps/{ordinal:03}.a11y.txt"),
        })?;
        let bytes = self.read_artifact(&rec.id, r)?;
        String::from_utf8(bytes).map_err(|e| DatastoreError::CorruptManifest { id: rec.id.clone(), reason: e.to_string() })
    }
}
