//! Live driver over the browser remote-debugging protocol.
//!
//! Each session owns one page target and one websocket. Element geometry
//! comes from the injected page script; ordering, roles and names come from
//! the host-side accessibility builder so both drivers index identically.

use std::collections::{HashSet, VecDeque};
use std::io::ErrorKind;
use std::net::TcpStream;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tungstenite::{Message, WebSocket};

use super::{match_option, page_digest, som_for, ActionResult, EnvError, Environment, Session};
use crate::action::{Action, ScrollDirection};
use crate::page::{build_a11y_scrolled, A11ySnapshot, BBox, PageObservation, Screenshot, Viewport};

#[derive(Debug, Clone)]
pub struct CdpConfig {
    /// HTTP endpoint of the debugging port, e.g. `http://127.0.0.1:9222`.
    pub endpoint: String,
    /// Source of the page script. Evaluating it must yield the element
    /// report list, either as a JSON string or as an array value.
    pub page_script: String,
    /// Network silence that counts as settled.
    pub quiet: Duration,
    /// Upper bound on waiting for a page load.
    pub load_cap: Duration,
    /// Query is appended URL-encoded.
    pub search_url: String,
}

impl CdpConfig {
    pub fn new(endpoint: impl Into<String>, page_script: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            page_script: page_script.into(),
            quiet: Duration::from_millis(500),
            load_cap: Duration::from_secs(30),
            search_url: "https://www.google.com/search?q=".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

/// One element as enumerated by the page script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageElementReport {
    pub index: u32,
    pub role: String,
    pub name: String,
    /// Viewport pixels.
    pub bbox: ReportBox,
    pub interactable: bool,
    #[serde(default)]
    pub options: Vec<String>,
    /// Structural path of child-element positions, as in `source_ref`.
    pub locator: String,
}

fn to_bbox(b: &ReportBox) -> BBox {
    let int = |v: f64| if v.is_finite() { v.round().clamp(i32::MIN as f64, i32::MAX as f64) as i32 } else { 0 };
    let dim = |v: f64| if v.is_finite() { v.round().clamp(0.0, u32::MAX as f64) as u32 } else { 0 };
    BBox::new(int(b.x), int(b.y), dim(b.width), dim(b.height))
}

/// Keeps the host snapshot's order, roles and names and takes geometry
/// and interactability from the page reports, matched by locator first and
/// by (role, name) second. Host elements without a report are marked not
/// visible.
pub fn reconcile_reports(mut host: A11ySnapshot, reports: &[PageElementReport]) -> A11ySnapshot {
    let mut used = vec![false; reports.len()];
    let vp = host.viewport;
    let mut pending = Vec::new();
    for (i, e) in host.elements.iter_mut().enumerate() {
        match reports.iter().position(|r| r.locator == e.source_ref) {
            Some(j) if !used[j] => {
                used[j] = true;
                apply_report(e, &reports[j], vp);
            }
            _ => pending.push(i),
        }
    }
    for i in pending {
        let e = &mut host.elements[i];
        match (0..reports.len()).find(|&j| !used[j] && reports[j].role == e.role && reports[j].name == e.name) {
            Some(j) => {
                used[j] = true;
                apply_report(e, &reports[j], vp);
            }
            None => e.visible = false,
        }
    }
    let stray = used.iter().filter(|u| !**u).count();
    if stray > 0 {
        tracing::debug!(stray, "page reports without a host element");
    }
    host
}

fn apply_report(e: &mut crate::page::ElementNode, r: &PageElementReport, vp: Viewport) {
    e.bbox = to_bbox(&r.bbox);
    e.visible = e.bbox.clip(vp).is_some();
    e.interactable = r.interactable;
    if e.options.is_empty() && !r.options.is_empty() {
        e.options = r.options.clone();
    }
}

pub struct CdpEnv {
    cfg: Arc<CdpConfig>,
    http: reqwest::blocking::Client,
    counter: AtomicU64,
}

#[derive(Deserialize)]
struct TargetInfo {
    id: String,
    #[serde(rename = "type", default)]
    kind: String,
    #[serde(rename = "webSocketDebuggerUrl", default)]
    ws_url: Option<String>,
}

fn proto(e: impl std::fmt::Display) -> EnvError {
    EnvError::Protocol(e.to_string())
}

impl CdpEnv {
    pub fn new(cfg: CdpConfig) -> Result<Self, EnvError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(10))
            .build()
            .map_err(proto)?;
        Ok(Self { cfg: Arc::new(cfg), http, counter: AtomicU64::new(0) })
    }

    fn endpoint(&self) -> &str {
        self.cfg.endpoint.trim_end_matches('/')
    }

    /// Open page targets, for leak audits.
    pub fn open_targets(&self) -> Result<usize, EnvError> {
        let list: Vec<TargetInfo> = self
            .http
            .get(format!("{}/json/list", self.endpoint()))
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json())
            .map_err(proto)?;
        Ok(list.iter().filter(|t| t.kind == "page").count())
    }
}

impl Environment for CdpEnv {
    fn open(&self, url: &str, viewport: Viewport) -> Result<Box<dyn Session>, EnvError> {
        let target: TargetInfo = self
            .http
            .put(format!("{}/json/new?about:blank", self.endpoint()))
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json())
            .map_err(proto)?;
        let ws_url = target.ws_url.clone().ok_or_else(|| proto("target has no websocket url"))?;
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        let mut s = CdpSession {
            label: format!("cdp-{n}-{}", target.id),
            target: target.id,
            cfg: Arc::clone(&self.cfg),
            http: self.http.clone(),
            ws: None,
            next_id: 0,
            events: VecDeque::new(),
            viewport,
            finished: false,
            closed: false,
            snapshot: None,
        };
        if let Err(e) = s.connect(&ws_url).and_then(|()| s.setup(url)) {
            s.close();
            return Err(e);
        }
        Ok(Box::new(s))
    }
}

struct CdpSession {
    label: String,
    target: String,
    cfg: Arc<CdpConfig>,
    http: reqwest::blocking::Client,
    ws: Option<WebSocket<TcpStream>>,
    next_id: u64,
    events: VecDeque<Value>,
    viewport: Viewport,
    finished: bool,
    closed: bool,
    snapshot: Option<A11ySnapshot>,
}

const RESOLVE_JS: &str = "function __resolve(p){let n=document;for(const s of p.split('/').filter(Boolean)){n=n&&n.children[+s];}return n||null;}";

impl CdpSession {
    fn connect(&mut self, ws_url: &str) -> Result<(), EnvError> {
        let parsed = url::Url::parse(ws_url).map_err(proto)?;
        let addr = format!(
            "{}:{}",
            parsed.host_str().ok_or_else(|| proto("websocket url has no host"))?,
            parsed.port_or_known_default().unwrap_or(80)
        );
        let stream = TcpStream::connect(addr).map_err(proto)?;
        let (ws, _) = tungstenite::client(ws_url, stream).map_err(proto)?;
        self.ws = Some(ws);
        Ok(())
    }

    fn setup(&mut self, url: &str) -> Result<(), EnvError> {
        self.call("Page.enable", json!({}))?;
        self.call("Network.enable", json!({}))?;
        self.call(
            "Emulation.setDeviceMetricsOverride",
            json!({"width": self.viewport.width, "height": self.viewport.height, "deviceScaleFactor": 1, "mobile": false}),
        )?;
        self.navigate(url)
    }

    fn ws(&mut self) -> Result<&mut WebSocket<TcpStream>, EnvError> {
        self.ws.as_mut().ok_or(EnvError::SessionLost)
    }

    /// Next message, or `None` after `wait` without one.
    fn read(&mut self, wait: Duration) -> Result<Option<Value>, EnvError> {
        let ws = self.ws()?;
        ws.get_mut().set_read_timeout(Some(wait.max(Duration::from_millis(1)))).map_err(proto)?;
        match ws.read() {
            Ok(Message::Text(t)) => serde_json::from_str(t.as_str()).map(Some).map_err(proto),
            Ok(Message::Close(_)) => Err(EnvError::SessionLost),
            Ok(_) => Ok(None),
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => Ok(None),
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => Err(EnvError::SessionLost),
            Err(e) => Err(proto(e)),
        }
    }

    fn call(&mut self, method: &str, params: Value) -> Result<Value, EnvError> {
        self.next_id += 1;
        let id = self.next_id;
        let msg = json!({"id": id, "method": method, "params": params}).to_string();
        self.ws()?.send(Message::text(msg)).map_err(proto)?;
        let deadline = Instant::now() + self.cfg.load_cap;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(proto(format!("{method}: no reply")));
            }
            let Some(v) = self.read(left)? else { continue };
            if v.get("id").and_then(Value::as_u64) == Some(id) {
                if let Some(err) = v.get("error") {
                    return Err(proto(format!("{method}: {err}")));
                }
                return Ok(v.get("result").cloned().unwrap_or(Value::Null));
            }
            if v.get("method").is_some() {
                self.events.push_back(v);
            }
        }
    }

    fn eval(&mut self, expression: &str) -> Result<Value, EnvError> {
        let r = self.call(
            "Runtime.evaluate",
            json!({"expression": expression, "returnByValue": true, "awaitPromise": true}),
        )?;
        if let Some(ex) = r.get("exceptionDetails") {
            return Err(proto(format!("script exception: {ex}")));
        }
        Ok(r["result"].get("value").cloned().unwrap_or(Value::Null))
    }

    /// Waits until the network has been quiet for the configured interval.
    /// With `need_load`, a load event must also have fired before the cap.
    fn settle(&mut self, need_load: bool, what: &str) -> Result<(), EnvError> {
        let start = Instant::now();
        let deadline = start + self.cfg.load_cap;
        let mut loaded = !need_load;
        let mut inflight: HashSet<String> = HashSet::new();
        let mut last_activity = start;
        loop {
            while let Some(ev) = self.events.pop_front() {
                let rid = || ev["params"]["requestId"].as_str().unwrap_or("").to_string();
                match ev["method"].as_str().unwrap_or("") {
                    "Page.loadEventFired" => loaded = true,
                    "Network.requestWillBeSent" => {
                        inflight.insert(rid());
                        last_activity = Instant::now();
                    }
                    "Network.loadingFinished" | "Network.loadingFailed" => {
                        inflight.remove(&rid());
                        last_activity = Instant::now();
                    }
                    _ => {}
                }
            }
            let now = Instant::now();
            if loaded && inflight.is_empty() && now.duration_since(last_activity) >= self.cfg.quiet {
                return Ok(());
            }
            if now >= deadline {
                return if loaded { Ok(()) } else { Err(EnvError::NavigationTimeout(what.to_string())) };
            }
            let wait = self.cfg.quiet.min(deadline - now).min(Duration::from_millis(50));
            if let Some(v) = self.read(wait)? {
                if v.get("method").is_some() {
                    self.events.push_back(v);
                }
            }
        }
    }

    fn navigate(&mut self, url: &str) -> Result<(), EnvError> {
        self.events.clear();
        let r = self.call("Page.navigate", json!({"url": url}))?;
        if let Some(e) = r.get("errorText").and_then(Value::as_str) {
            return Err(proto(format!("navigation to {url} failed: {e}")));
        }
        self.snapshot = None;
        self.settle(true, url)
    }

    fn dom_state(&mut self) -> Result<(String, u32), EnvError> {
        let v = self.eval("[document.documentElement.outerHTML, Math.max(0, Math.round(window.scrollY))]")?;
        let html = v[0].as_str().unwrap_or_default().to_string();
        let scroll = v[1].as_u64().unwrap_or(0).min(u64::from(u32::MAX)) as u32;
        Ok((html, scroll))
    }

    fn reports(&mut self) -> Result<Vec<PageElementReport>, EnvError> {
        let script = self.cfg.page_script.clone();
        let mut v = self.eval(&script)?;
        if let Value::String(s) = &v {
            v = serde_json::from_str(s).map_err(proto)?;
        }
        if let Some(e) = v.get("error") {
            return Err(proto(format!("page script: {e}")));
        }
        serde_json::from_value(v).map_err(proto)
    }

    fn screenshot(&mut self) -> Result<Screenshot, EnvError> {
        let r = self.call("Page.captureScreenshot", json!({"format": "png"}))?;
        let b64 = r["data"].as_str().ok_or_else(|| proto("screenshot has no data"))?;
        let png = base64::engine::general_purpose::STANDARD.decode(b64).map_err(proto)?;
        let shot = Screenshot::from_png(&png)?;
        if shot.width() == self.viewport.width && shot.height() == self.viewport.height {
            Ok(shot)
        } else {
            Ok(shot.viewport_crop(0, self.viewport))
        }
    }

    fn digest(&mut self) -> Result<String, EnvError> {
        let (html, scroll) = self.dom_state()?;
        Ok(page_digest(&html, scroll, &Default::default()))
    }

    fn run_on(&mut self, locator: &str, body: &str) -> Result<Value, EnvError> {
        let loc = serde_json::to_string(locator).expect("string serializes");
        self.eval(&format!("(() => {{ {RESOLVE_JS} const el = __resolve({loc}); if (!el) return null; {body} }})()"))
    }

    fn apply(&mut self, action: &Action) -> Result<Result<(), EnvError>, EnvError> {
        if let Err(e) = action.validate() {
            return Ok(Err(e.into()));
        }
        if let Some(idx) = action.element() {
            if self.snapshot.is_none() {
                self.observe()?;
            }
            let Some(node) = self.snapshot.as_ref().and_then(|s| s.get(idx)).cloned() else {
                return Ok(Err(EnvError::StaleElement(idx)));
            };
            let loc = node.source_ref.clone();
            match action {
                Action::Click { .. } => {
                    let c = self.run_on(
                        &loc,
                        "el.scrollIntoView({block: 'center'}); const r = el.getBoundingClientRect(); return [r.x + r.width / 2, r.y + r.height / 2];",
                    )?;
                    let (Some(x), Some(y)) = (c[0].as_f64(), c[1].as_f64()) else {
                        return Ok(Err(EnvError::StaleElement(idx)));
                    };
                    for kind in ["mousePressed", "mouseReleased"] {
                        self.call(
                            "Input.dispatchMouseEvent",
                            json!({"type": kind, "x": x, "y": y, "button": "left", "clickCount": 1}),
                        )?;
                    }
                }
                Action::Type { text, .. } => {
                    let ok = self.run_on(&loc, "el.focus(); if ('value' in el) el.value = ''; return true;")?;
                    if ok != Value::Bool(true) {
                        return Ok(Err(EnvError::StaleElement(idx)));
                    }
                    self.call("Input.insertText", json!({"text": text}))?;
                    for kind in ["keyDown", "keyUp"] {
                        self.call(
                            "Input.dispatchKeyEvent",
                            json!({"type": kind, "key": "Enter", "code": "Enter", "windowsVirtualKeyCode": 13, "text": "\r"}),
                        )?;
                    }
                }
                Action::Select { option, .. } => {
                    let chosen = match match_option(&node.options, option) {
                        Ok(c) => c.to_string(),
                        Err(e) => return Ok(Err(e)),
                    };
                    let lit = serde_json::to_string(&chosen).expect("string serializes");
                    let ok = self.run_on(
                        &loc,
                        &format!(
                            "const o = [...(el.options || [])].find(o => o.text.trim() === {lit}.trim()); if (!o) return false; \
                             el.value = o.value; el.dispatchEvent(new Event('input', {{bubbles: true}})); \
                             el.dispatchEvent(new Event('change', {{bubbles: true}})); return true;"
                        ),
                    )?;
                    if ok != Value::Bool(true) {
                        return Ok(Err(EnvError::NoSuchOption(option.clone())));
                    }
                }
                _ => unreachable!("only click, type and select carry an element"),
            }
            return Ok(self.settle(false, "after action"));
        }
        match action {
            Action::Goto { url } => Ok(self.navigate_soft(url)),
            Action::SearchGoogle { query } => {
                let q: String = url::form_urlencoded::byte_serialize(query.as_bytes()).collect();
                let target = format!("{}{q}", self.cfg.search_url);
                Ok(self.navigate_soft(&target))
            }
            Action::Scroll { direction } => {
                let sign = if *direction == ScrollDirection::Down { "" } else { "-" };
                self.eval(&format!("window.scrollBy(0, {sign}window.innerHeight); true"))?;
                Ok(Ok(()))
            }
            Action::Stop => {
                self.finished = true;
                Ok(Ok(()))
            }
            _ => unreachable!("element actions handled above"),
        }
    }

    /// Navigation where a timeout is an action failure, not a session one.
    fn navigate_soft(&mut self, url: &str) -> Result<(), EnvError> {
        match self.navigate(url) {
            Err(EnvError::Protocol(m)) if m.contains("navigation to") => Err(EnvError::NavigationTimeout(m)),
            other => other,
        }
    }
}

impl Session for CdpSession {
    fn id(&self) -> &str {
        &self.label
    }

    fn viewport(&self) -> Viewport {
        self.viewport
    }

    fn observe(&mut self) -> Result<PageObservation, EnvError> {
        if self.ws.is_none() {
            return Err(EnvError::SessionLost);
        }
        let url = self.eval("location.href")?.as_str().unwrap_or_default().to_string();
        let (html, scroll_y) = self.dom_state()?;
        let reports = self.reports()?;
        let screenshot = self.screenshot()?;
        let host = build_a11y_scrolled(&html, self.viewport, scroll_y)?;
        let mut a11y = reconcile_reports(host, &reports);
        a11y.url = url.clone();
        let som_screenshot = som_for(&screenshot, &a11y)?;
        let digest = page_digest(&html, scroll_y, &Default::default());
        self.snapshot = Some(a11y.clone());
        Ok(PageObservation { screenshot, som_screenshot, a11y, html, url, digest })
    }

    fn execute(&mut self, action: &Action) -> Result<ActionResult, EnvError> {
        if self.ws.is_none() {
            return Err(EnvError::SessionLost);
        }
        if self.finished {
            return Err(EnvError::SessionFinished);
        }
        let start = Instant::now();
        let before = self.digest()?;
        let outcome = self.apply(action)?;
        let result = match outcome {
            Ok(()) => {
                let after = self.digest()?;
                if after != before {
                    self.snapshot = None;
                }
                ActionResult::success(after != before, start.elapsed())
            }
            Err(e) => ActionResult::failure(e, start.elapsed()),
        };
        Ok(result)
    }

    fn close(&mut self) {
        if self.closed {
            return;
        }
        self.closed = true;
        if let Some(mut ws) = self.ws.take() {
            let _ = ws.close(None);
        }
        let _ = self
            .http
            .get(format!("{}/json/close/{}", self.cfg.endpoint.trim_end_matches('/'), self.target))
            .send();
    }
}

impl Drop for CdpSession {
    fn drop(&mut self) {
        self.close();
    }
}
