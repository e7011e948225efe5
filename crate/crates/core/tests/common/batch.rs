//! Environments and backends for batch tests.

use std::sync::{Arc, Mutex};

use trajsynth_core::env::{EnvError, Environment, FixtureEnv, Session};
use trajsynth_core::llm::{ChatBackend, ChatRequest, ChatResponse, LlmError, Stage};
use trajsynth_core::orchestrator::domain_key;
use trajsynth_core::Viewport;

use super::{payload, summary, verdict};

pub type SessionLog = Arc<Mutex<Vec<(String, bool)>>>;

/// Fixture environment that logs session opens and closes per domain.
pub struct Logged {
    inner: FixtureEnv,
    pub log: SessionLog,
}

impl Logged {
    pub fn new(inner: FixtureEnv) -> Self {
        Self { inner, log: Arc::default() }
    }
}

struct LoggedSession {
    inner: Box<dyn Session>,
    domain: String,
    log: SessionLog,
    closed: bool,
}

impl Session for LoggedSession {
    fn id(&self) -> &str {
        self.inner.id()
    }
    fn viewport(&self) -> Viewport {
        self.inner.viewport()
    }
    fn observe(&mut self) -> Result<trajsynth_core::PageObservation, EnvError> {
        std::thread::sleep(std::time::Duration::from_millis(2));
        self.inner.observe()
    }
    fn execute(&mut self, a: &trajsynth_core::Action) -> Result<trajsynth_core::env::ActionResult, EnvError> {
        self.inner.execute(a)
    }
    fn close(&mut self) {
        if !self.closed {
            self.closed = true;
            self.log.lock().unwrap().push((self.domain.clone(), false));
        }
        self.inner.close();
    }
}

impl Environment for Logged {
    fn open(&self, url: &str, vp: Viewport) -> Result<Box<dyn Session>, EnvError> {
        let inner = self.inner.open(url, vp)?;
        let domain = domain_key(url);
        self.log.lock().unwrap().push((domain.clone(), true));
        Ok(Box::new(LoggedSession { inner, domain, log: Arc::clone(&self.log), closed: false }))
    }
}

/// One two-page fixture site per name, under a fresh temporary root.
pub fn sites(names: &[&str]) -> FixtureEnv {
    let tmp = tempfile::tempdir().unwrap().keep();
    for site in names {
        let dir = tmp.join(site);
        std::fs::create_dir_all(dir.join("pages")).unwrap();
        std::fs::write(
            dir.join("pages/home.html"),
            r#"<a href="/next" data-bbox="0,0,200,30">Next</a><button data-bbox="0,40,200,30">Noop</button>"#,
        )
        .unwrap();
        std::fs::write(dir.join("pages/next.html"), r#"<a href="/" data-bbox="0,0,200,30">Home</a>"#).unwrap();
        let manifest = serde_json::json!({
            "site": site, "entry": "home",
            "pages": [
                {"id": "home", "html": "pages/home.html", "transitions": {"click [0]": "next"}},
                {"id": "next", "html": "pages/next.html", "transitions": {"click [0]": "home"}}
            ]
        });
        std::fs::write(dir.join("manifest.json"), manifest.to_string()).unwrap();
    }
    FixtureEnv::load(&tmp).unwrap()
}

/// Answers every stage from the request text alone, so any number of
/// trajectories can run concurrently.
pub struct Echo;

impl ChatBackend for Echo {
    fn complete(&self, _: &ChatRequest, stage: Stage) -> Result<ChatResponse, LlmError> {
        std::thread::sleep(std::time::Duration::from_millis(3));
        let text = match stage {
            Stage::Proposal => payload("Go next", "Click Next", "click [0]"),
            Stage::Refinement => payload("Go next", "Stop", "stop"),
            Stage::Summarization => summary("Open the next page on the site"),
            Stage::Verification => verdict(true),
            Stage::Reasoning => "ok".into(),
        };
        Ok(ChatResponse { text, usage: Default::default() })
    }
}
