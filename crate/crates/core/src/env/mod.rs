//! Browser sessions: a deterministic fixture-site driver and a live driver
//! over the remote-debugging protocol, behind one session interface.

mod cdp;
mod fixture;
mod wireframe;

pub use cdp::{reconcile_reports, CdpConfig, CdpEnv, PageElementReport, ReportBox};
pub use fixture::{FixtureEnv, FixturePage, FixtureSite, SiteManifest, RENDER_WIDTH};
pub use wireframe::render_wireframe;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::action::{Action, ActionError, ElementIndex};
use crate::page::{annotate_som, A11ySnapshot, PageError, PageObservation, Screenshot, Viewport};
use crate::util::collapse_ws;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvError {
    #[error("url is blocked: {0}")]
    BlockedUrl(String),
    #[error("navigation timed out: {0}")]
    NavigationTimeout(String),
    #[error("no fixture page for {0}")]
    NoSuchFixturePage(String),
    #[error("session is closed")]
    SessionLost,
    #[error("session already stopped")]
    SessionFinished,
    #[error("element {0} is not in the current snapshot")]
    StaleElement(ElementIndex),
    #[error("no option matches `{0}`")]
    NoSuchOption(String),
    #[error(transparent)]
    InvalidAction(#[from] ActionError),
    #[error(transparent)]
    Page(#[from] PageError),
    #[error("fixture site: {0}")]
    Fixture(String),
    #[error("browser protocol: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionResult {
    pub ok: bool,
    pub page_changed: bool,
    pub error: Option<EnvError>,
    pub latency: Duration,
}

impl ActionResult {
    pub fn success(page_changed: bool, latency: Duration) -> Self {
        Self { ok: true, page_changed, error: None, latency }
    }

    pub fn failure(error: EnvError, latency: Duration) -> Self {
        Self { ok: false, page_changed: false, error: Some(error), latency }
    }
}

/// One browsing session, owned by a single worker.
///
/// `execute` returns `Err` only for session-level failures; an action that
/// could not be carried out yields `Ok` with `ok == false`.
pub trait Session: Send {
    fn id(&self) -> &str;
    fn viewport(&self) -> Viewport;
    fn observe(&mut self) -> Result<PageObservation, EnvError>;
    fn execute(&mut self, action: &Action) -> Result<ActionResult, EnvError>;
    /// Idempotent.
    fn close(&mut self);
}

pub trait Environment: Send + Sync {
    fn open(&self, url: &str, viewport: Viewport) -> Result<Box<dyn Session>, EnvError>;
}

impl<E: Environment + ?Sized> Environment for &E {
    fn open(&self, url: &str, viewport: Viewport) -> Result<Box<dyn Session>, EnvError> {
        (**self).open(url, viewport)
    }
}

impl<E: Environment + ?Sized> Environment for Arc<E> {
    fn open(&self, url: &str, viewport: Viewport) -> Result<Box<dyn Session>, EnvError> {
        (**self).open(url, viewport)
    }
}

/// Digest of DOM state: whitespace-normalized markup, scroll offset, and
/// any form values entered since the page loaded.
pub fn page_digest(html: &str, scroll_y: u32, form: &BTreeMap<ElementIndex, String>) -> String {
    let mut h = Sha256::new();
    h.update(b"html\0");
    h.update(collapse_ws(html).as_bytes());
    h.update(b"\0scroll\0");
    h.update(scroll_y.to_le_bytes());
    for (idx, value) in form {
        h.update(b"\0form\0");
        h.update(idx.0.to_le_bytes());
        h.update(value.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Option text chosen for `wanted`: case-insensitive exact match first, then
/// a unique case-insensitive substring match.
pub fn match_option<'a>(options: &'a [String], wanted: &str) -> Result<&'a str, EnvError> {
    let w = wanted.trim().to_lowercase();
    if let Some(o) = options.iter().find(|o| o.trim().to_lowercase() == w) {
        return Ok(o);
    }
    let mut hits = options.iter().filter(|o| o.to_lowercase().contains(&w));
    match (hits.next(), hits.next()) {
        (Some(o), None) if !w.is_empty() => Ok(o),
        _ => Err(EnvError::NoSuchOption(wanted.to_string())),
    }
}

/// SoM overlay over the elements visible in the viewport, boxes clipped.
pub fn som_for(screenshot: &Screenshot, a11y: &A11ySnapshot) -> Result<Screenshot, PageError> {
    let vp = Viewport::new(screenshot.width(), screenshot.height());
    let marked: Vec<_> = a11y
        .visible_elements()
        .filter_map(|e| {
            let clipped = e.bbox.clip(vp)?;
            let mut e = e.clone();
            e.bbox = clipped;
            Some(e)
        })
        .collect();
    annotate_som(screenshot, &marked)
}

/// Registrable-domain blocklist; a listed domain also blocks its subdomains.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Blocklist {
    domains: BTreeSet<String>,
}

impl Blocklist {
    pub fn new<I, S>(domains: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            domains: domains
                .into_iter()
                .map(|d| d.as_ref().trim().trim_start_matches("*.").to_ascii_lowercase())
                .filter(|d| !d.is_empty())
                .collect(),
        }
    }

    /// One domain per line; blank lines and `#` comments ignored.
    pub fn parse(text: &str) -> Self {
        Self::new(
            text.lines()
                .map(|l| l.split('#').next().unwrap_or("").trim())
                .filter(|l| !l.is_empty()),
        )
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }

    pub fn blocks_host(&self, host: &str) -> bool {
        let host = host.trim_end_matches('.').to_ascii_lowercase();
        self.domains
            .iter()
            .any(|d| host == *d || host.strip_suffix(d.as_str()).is_some_and(|p| p.ends_with('.')))
    }

    /// Unparseable URLs and URLs without a host are blocked.
    pub fn blocks(&self, url: &str) -> bool {
        match url::Url::parse(url.trim()) {
            Ok(u) => match u.host_str() {
                Some(h) => self.blocks_host(h),
                None => true,
            },
            Err(_) => true,
        }
    }
}

/// Applies the blocklist before any navigation, including `goto` actions.
pub struct Guarded<E> {
    inner: E,
    blocklist: Arc<Blocklist>,
}

impl<E: Environment> Guarded<E> {
    pub fn new(inner: E, blocklist: Blocklist) -> Self {
        Self { inner, blocklist: Arc::new(blocklist) }
    }
}

impl<E: Environment> Environment for Guarded<E> {
    fn open(&self, url: &str, viewport: Viewport) -> Result<Box<dyn Session>, EnvError> {
        if self.blocklist.blocks(url) {
            return Err(EnvError::BlockedUrl(url.to_string()));
        }
        let inner = self.inner.open(url, viewport)?;
        Ok(Box::new(GuardedSession { inner, blocklist: Arc::clone(&self.blocklist) }))
    }
}

struct GuardedSession {
    inner: Box<dyn Session>,
    blocklist: Arc<Blocklist>,
}

impl Session for GuardedSession {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn viewport(&self) -> Viewport {
        self.inner.viewport()
    }

    fn observe(&mut self) -> Result<PageObservation, EnvError> {
        self.inner.observe()
    }

    fn execute(&mut self, action: &Action) -> Result<ActionResult, EnvError> {
        if let Action::Goto { url } = action {
            if self.blocklist.blocks(url) {
                return Ok(ActionResult::failure(EnvError::BlockedUrl(url.clone()), Duration::ZERO));
            }
        }
        self.inner.execute(action)
    }

    fn close(&mut self) {
        self.inner.close()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn option_matching() {
        let opts: Vec<String> = ["Blue", "Dark blue", "Red"].iter().map(|s| s.to_string()).collect();
        assert_eq!(match_option(&opts, "blue").unwrap(), "Blue");
        assert_eq!(match_option(&opts, "RE").unwrap(), "Red");
        assert_eq!(match_option(&opts, "dark").unwrap(), "Dark blue");
        assert!(matches!(match_option(&opts, "lu"), Err(EnvError::NoSuchOption(_))));
        assert!(matches!(match_option(&opts, "Green"), Err(EnvError::NoSuchOption(_))));
        assert!(matches!(match_option(&opts, ""), Err(EnvError::NoSuchOption(_))));
    }

    #[test]
    fn blocklist_covers_subdomains_only() {
        let b = Blocklist::parse("# adult\nexample.com\n*.bad.org\n");
        assert!(b.blocks("https://example.com/x"));
        assert!(b.blocks("https://shop.example.com/"));
        assert!(!b.blocks("https://notexample.com/"));
        assert!(b.blocks("http://a.bad.org"));
        assert!(b.blocks("not a url"));
        assert!(!b.blocks("fixture://shop/home"));
    }

    #[test]
    fn digest_tracks_scroll_and_form_state() {
        let mut form = BTreeMap::new();
        let a = page_digest("<p>x</p>", 0, &form);
        assert_eq!(a, page_digest("<p>x</p>\n", 0, &form));
        assert_ne!(a, page_digest("<p>x</p>", 720, &form));
        form.insert(ElementIndex(1), "sofa".into());
        assert_ne!(a, page_digest("<p>x</p>", 0, &form));
    }
}
