//! Fixture sites: static page graphs whose edges are canonical action
//! strings. Typed text matches case- and whitespace-insensitively; a
//! `type` edge may use `*` as its text to accept any input.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{match_option, page_digest, som_for, ActionResult, EnvError, Environment, Session};
use crate::action::{parse_action, render_action, Action, ElementIndex, ScrollDirection};
use crate::page::{build_a11y, build_a11y_scrolled, PageObservation, Screenshot, Viewport};
use crate::util::collapse_ws;

const MANIFEST: &str = "manifest.json";
/// Width used when a page ships no screenshot and one is drawn on load.
pub const RENDER_WIDTH: u32 = 1280;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixturePage {
    pub id: String,
    /// Defaults to `fixture://<site>/<id>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    /// Markup file, relative to the manifest.
    pub html: String,
    /// Full-page PNG, relative to the manifest. Drawn with
    /// [`super::render_wireframe`] when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screenshot: Option<String>,
    #[serde(default)]
    pub transitions: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteManifest {
    pub site: String,
    pub entry: String,
    pub pages: Vec<FixturePage>,
    #[serde(default)]
    pub search_results: BTreeMap<String, String>,
}

#[derive(Debug)]
struct LoadedPage {
    url: String,
    html: String,
    full: Screenshot,
    transitions: BTreeMap<String, String>,
}

#[derive(Debug)]
pub struct FixtureSite {
    pub manifest: SiteManifest,
    pub dir: PathBuf,
    pages: BTreeMap<String, LoadedPage>,
    search: BTreeMap<String, String>,
}

fn err(msg: impl Into<String>) -> EnvError {
    EnvError::Fixture(msg.into())
}

fn normalize_query(q: &str) -> String {
    collapse_ws(q).to_lowercase()
}

/// Canonical action string; typed text is matched like a search query.
fn edge_key(action: &Action) -> String {
    match action {
        Action::Type { elem, text } => render_action(&Action::Type { elem: *elem, text: normalize_query(text) }),
        other => render_action(other),
    }
}

impl FixtureSite {
    /// Loads and validates `dir/manifest.json`: every edge target exists,
    /// every edge key is an action on an element of its page, and every
    /// page's markup parses.
    pub fn load(dir: &Path) -> Result<Self, EnvError> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| err(format!("{}: {e}", path.display())))?;
        let manifest: SiteManifest =
            serde_json::from_str(&text).map_err(|e| err(format!("{}: {e}", path.display())))?;
        let ids: std::collections::BTreeSet<&str> = manifest.pages.iter().map(|p| p.id.as_str()).collect();
        if ids.len() != manifest.pages.len() {
            return Err(err("duplicate page id"));
        }
        if !ids.contains(manifest.entry.as_str()) {
            return Err(err(format!("entry page `{}` does not exist", manifest.entry)));
        }
        let mut pages = BTreeMap::new();
        for p in &manifest.pages {
            let html_path = dir.join(&p.html);
            let html = fs::read_to_string(&html_path).map_err(|e| err(format!("{}: {e}", html_path.display())))?;
            let snapshot = build_a11y(&html, Viewport::default())
                .map_err(|e| err(format!("page `{}`: {e}", p.id)))?;
            let full = match &p.screenshot {
                Some(rel) => {
                    let bytes = fs::read(dir.join(rel)).map_err(|e| err(format!("{rel}: {e}")))?;
                    Screenshot::from_png(&bytes)?
                }
                None => super::render_wireframe(&html, RENDER_WIDTH)?,
            };
            let mut transitions = BTreeMap::new();
            for (key, target) in &p.transitions {
                if !ids.contains(target.as_str()) {
                    return Err(err(format!("page `{}`: edge `{key}` targets unknown page `{target}`", p.id)));
                }
                let action = parse_action(key).map_err(|e| err(format!("page `{}`: edge `{key}`: {e}", p.id)))?;
                if let Some(idx) = action.element() {
                    if !snapshot.contains(idx) {
                        return Err(err(format!("page `{}`: edge `{key}` names missing element {idx}", p.id)));
                    }
                }
                transitions.insert(edge_key(&action), target.clone());
            }
            let url = p.url.clone().unwrap_or_else(|| format!("fixture://{}/{}", manifest.site, p.id));
            pages.insert(p.id.clone(), LoadedPage { url, html, full, transitions });
        }
        let mut search = BTreeMap::new();
        for (q, target) in &manifest.search_results {
            if !ids.contains(target.as_str()) {
                return Err(err(format!("search `{q}` targets unknown page `{target}`")));
            }
            search.insert(normalize_query(q), target.clone());
        }
        Ok(Self { manifest, dir: dir.to_path_buf(), pages, search })
    }

    pub fn name(&self) -> &str {
        &self.manifest.site
    }

    pub fn page_ids(&self) -> impl Iterator<Item = &str> {
        self.pages.keys().map(String::as_str)
    }

    pub fn page_url(&self, id: &str) -> Option<&str> {
        self.pages.get(id).map(|p| p.url.as_str())
    }

    pub fn page_html(&self, id: &str) -> Option<&str> {
        self.pages.get(id).map(|p| p.html.as_str())
    }

    /// Full-page render of a page.
    pub fn page_screenshot(&self, id: &str) -> Option<&Screenshot> {
        self.pages.get(id).map(|p| &p.full)
    }

    fn resolve(&self, url: &str) -> Option<String> {
        let trimmed = url.trim().trim_end_matches('/');
        if let Some((id, _)) = self.pages.iter().find(|(_, p)| p.url.trim_end_matches('/') == trimmed) {
            return Some(id.clone());
        }
        let rest = trimmed.strip_prefix("fixture://")?;
        let (site, path) = rest.split_once('/').unwrap_or((rest, ""));
        if site != self.manifest.site {
            return None;
        }
        let path = path.split(['?', '#']).next().unwrap_or("");
        if path.is_empty() {
            return Some(self.manifest.entry.clone());
        }
        self.pages.contains_key(path).then(|| path.to_string())
    }
}

/// Fixture driver over one or more sites.
pub struct FixtureEnv {
    sites: Arc<Vec<Arc<FixtureSite>>>,
    counter: AtomicU64,
}

impl FixtureEnv {
    pub fn new(sites: Vec<FixtureSite>) -> Self {
        Self {
            sites: Arc::new(sites.into_iter().map(Arc::new).collect()),
            counter: AtomicU64::new(0),
        }
    }

    /// `dir` holds either a single site (`manifest.json`) or one
    /// subdirectory per site.
    pub fn load(dir: &Path) -> Result<Self, EnvError> {
        if dir.join(MANIFEST).is_file() {
            return Ok(Self::new(vec![FixtureSite::load(dir)?]));
        }
        let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| err(format!("{}: {e}", dir.display())))?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.join(MANIFEST).is_file())
            .collect();
        subdirs.sort();
        if subdirs.is_empty() {
            return Err(err(format!("no {MANIFEST} under {}", dir.display())));
        }
        let sites = subdirs.iter().map(|d| FixtureSite::load(d)).collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(sites))
    }

    pub fn sites(&self) -> &[Arc<FixtureSite>] {
        &self.sites
    }

    pub fn site(&self, name: &str) -> Option<&Arc<FixtureSite>> {
        self.sites.iter().find(|s| s.name() == name)
    }
}

fn resolve_any(sites: &[Arc<FixtureSite>], url: &str) -> Option<(usize, String)> {
    sites.iter().enumerate().find_map(|(i, s)| s.resolve(url).map(|id| (i, id)))
}

impl Environment for FixtureEnv {
    fn open(&self, url: &str, viewport: Viewport) -> Result<Box<dyn Session>, EnvError> {
        let (site, page) = resolve_any(&self.sites, url).ok_or_else(|| EnvError::NoSuchFixturePage(url.to_string()))?;
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        Ok(Box::new(FixtureSession {
            id: format!("fixture-{n}"),
            sites: Arc::clone(&self.sites),
            site,
            page,
            scroll_y: 0,
            form: BTreeMap::new(),
            viewport,
            finished: false,
            closed: false,
            cache: None,
        }))
    }
}

struct FixtureSession {
    id: String,
    sites: Arc<Vec<Arc<FixtureSite>>>,
    site: usize,
    page: String,
    scroll_y: u32,
    form: BTreeMap<ElementIndex, String>,
    viewport: Viewport,
    finished: bool,
    closed: bool,
    cache: Option<PageObservation>,
}

impl FixtureSession {
    fn current(&self) -> &LoadedPage {
        &self.sites[self.site].pages[&self.page]
    }

    fn digest(&self) -> String {
        page_digest(&self.current().html, self.scroll_y, &self.form)
    }

    fn navigate(&mut self, site: usize, page: String) {
        self.site = site;
        self.page = page;
        self.scroll_y = 0;
        self.form.clear();
    }

    fn follow(&mut self, key: &str) {
        if let Some(target) = self.current().transitions.get(key).cloned() {
            self.navigate(self.site, target);
        }
    }

    fn max_scroll(&self) -> u32 {
        self.current().full.height().saturating_sub(self.viewport.height)
    }

    /// Applies the action; `Err` is an action-level failure.
    fn apply(&mut self, action: &Action) -> Result<(), EnvError> {
        action.validate()?;
        if let Some(idx) = action.element() {
            let snap = build_a11y_scrolled(&self.current().html, self.viewport, self.scroll_y)?;
            let node = snap.get(idx).ok_or(EnvError::StaleElement(idx))?;
            match action {
                Action::Click { .. } => self.follow(&render_action(action)),
                Action::Type { elem, text } => {
                    self.form.insert(*elem, text.clone());
                    let exact = edge_key(action);
                    if self.current().transitions.contains_key(&exact) {
                        self.follow(&exact);
                    } else {
                        self.follow(&edge_key(&Action::Type { elem: *elem, text: "*".into() }));
                    }
                }
                Action::Select { elem, option } => {
                    let chosen = match_option(&node.options, option)?.to_string();
                    self.form.insert(*elem, chosen.clone());
                    self.follow(&render_action(&Action::Select { elem: *elem, option: chosen }));
                }
                _ => unreachable!("only click, type and select carry an element"),
            }
            return Ok(());
        }
        match action {
            Action::Goto { url } => {
                let (site, page) = resolve_any(&self.sites, url).ok_or_else(|| EnvError::NoSuchFixturePage(url.clone()))?;
                self.navigate(site, page);
            }
            Action::SearchGoogle { query } => {
                let target = self.sites[self.site]
                    .search
                    .get(&normalize_query(query))
                    .cloned()
                    .ok_or_else(|| EnvError::NoSuchFixturePage(format!("search results for `{query}`")))?;
                self.navigate(self.site, target);
            }
            Action::Scroll { direction } => {
                self.scroll_y = match direction {
                    ScrollDirection::Down => (self.scroll_y + self.viewport.height).min(self.max_scroll()),
                    ScrollDirection::Up => self.scroll_y.saturating_sub(self.viewport.height),
                };
            }
            Action::Stop => self.finished = true,
            _ => unreachable!("element actions handled above"),
        }
        Ok(())
    }
}

impl Session for FixtureSession {
    fn id(&self) -> &str {
        &self.id
    }

    fn viewport(&self) -> Viewport {
        self.viewport
    }

    fn observe(&mut self) -> Result<PageObservation, EnvError> {
        if self.closed {
            return Err(EnvError::SessionLost);
        }
        let digest = self.digest();
        if let Some(obs) = self.cache.as_ref().filter(|o| o.digest == digest) {
            return Ok(obs.clone());
        }
        let page = self.current();
        let mut a11y = build_a11y_scrolled(&page.html, self.viewport, self.scroll_y)?;
        a11y.url = page.url.clone();
        let screenshot = page.full.viewport_crop(self.scroll_y, self.viewport);
        let som_screenshot = som_for(&screenshot, &a11y)?;
        let obs = PageObservation {
            screenshot,
            som_screenshot,
            a11y,
            html: page.html.clone(),
            url: page.url.clone(),
            digest,
        };
        self.cache = Some(obs.clone());
        Ok(obs)
    }

    fn execute(&mut self, action: &Action) -> Result<ActionResult, EnvError> {
        if self.closed {
            return Err(EnvError::SessionLost);
        }
        if self.finished {
            return Err(EnvError::SessionFinished);
        }
        let start = Instant::now();
        let before = self.digest();
        Ok(match self.apply(action) {
            Ok(()) => ActionResult::success(self.digest() != before, start.elapsed()),
            Err(e) => ActionResult::failure(e, start.elapsed()),
        })
    }

    fn close(&mut self) {
        self.closed = true;
        self.cache = None;
    }
}
