//! The browser driver against an in-process stand-in for the debugging
//! endpoint: a plain HTTP listener for target management and a websocket
//! listener that answers protocol calls from a tiny page model.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};
use trajsynth_core::env::{CdpConfig, CdpEnv, EnvError, Environment, PageElementReport, ReportBox};
use trajsynth_core::page::{build_a11y_scrolled, Screenshot};
use trajsynth_core::{parse_action, Viewport};
use tungstenite::Message;

const VP: Viewport = Viewport { width: 640, height: 360 };
const SCRIPT: &str = "__PAGE_SCRIPT__";

fn page(url: &str) -> Option<String> {
    let body = match url {
        "http://site.test/a" => {
            r#"<a href="http://site.test/b">Next page</a>
               <select aria-label="Size"><option>Small</option><option>Large</option></select>
               <button>Buy</button>"#
        }
        "http://site.test/b" => r#"<a href="http://site.test/a">Back</a><p>Second</p>"#,
        "http://site.test/tall" => {
            r#"<button data-bbox="0,0,100,20">Top</button><button data-bbox="0,500,100,20">Bottom</button>"#
        }
        _ => return None,
    };
    Some(format!("<html><head><title>t</title></head><body>{body}</body></html>"))
}

#[derive(Default)]
struct Targets {
    open: HashSet<String>,
    next: u32,
    closed: Vec<String>,
}

struct Fake {
    http: String,
    targets: Arc<Mutex<Targets>>,
}

fn respond(stream: &mut TcpStream, status: &str, body: &str) {
    let _ = write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
}

fn serve_http(listener: TcpListener, ws_port: u16, targets: Arc<Mutex<Targets>>) {
    for stream in listener.incoming() {
        let Ok(mut stream) = stream else { continue };
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut line = String::new();
        if reader.read_line(&mut line).is_err() {
            continue;
        }
        loop {
            let mut h = String::new();
            if reader.read_line(&mut h).is_err() || h == "\r\n" || h.is_empty() {
                break;
            }
        }
        let path = line.split_whitespace().nth(1).unwrap_or("/").to_string();
        let mut t = targets.lock().unwrap();
        if path.starts_with("/json/new") {
            t.next += 1;
            let id = format!("T{}", t.next);
            t.open.insert(id.clone());
            let body = json!({"id": id, "type": "page", "webSocketDebuggerUrl": format!("ws://127.0.0.1:{ws_port}/devtools/page/{id}")});
            respond(&mut stream, "200 OK", &body.to_string());
        } else if path == "/json/list" {
            let list: Vec<Value> = t.open.iter().map(|id| json!({"id": id, "type": "page"})).collect();
            respond(&mut stream, "200 OK", &Value::Array(list).to_string());
        } else if let Some(id) = path.strip_prefix("/json/close/") {
            t.open.remove(id);
            t.closed.push(id.to_string());
            respond(&mut stream, "200 OK", "\"Target is closing\"");
        } else {
            respond(&mut stream, "404 Not Found", "{}");
        }
    }
}

struct Tab {
    url: String,
    scroll: u32,
    pointed: Option<String>,
}

impl Tab {
    fn html(&self) -> String {
        page(&self.url).unwrap_or_default()
    }

    fn reports(&self) -> Vec<PageElementReport> {
        let snap = build_a11y_scrolled(&self.html(), VP, self.scroll).unwrap();
        snap.elements
            .iter()
            .map(|e| PageElementReport {
                index: e.index.0,
                role: e.role.clone(),
                name: e.name.clone(),
                bbox: ReportBox {
                    x: f64::from(e.bbox.x),
                    y: f64::from(e.bbox.y),
                    width: f64::from(e.bbox.w),
                    height: f64::from(e.bbox.h),
                },
                interactable: true,
                options: e.options.clone(),
                locator: e.source_ref.clone(),
            })
            .collect()
    }

    fn href_at(&self, locator: &str) -> Option<String> {
        let snap = build_a11y_scrolled(&self.html(), VP, self.scroll).unwrap();
        let e = snap.elements.iter().find(|e| e.source_ref == locator)?;
        let html = self.html();
        let at = html.find(&format!(">{}</a>", e.name))?;
        let start = html[..at].rfind("href=\"")? + 6;
        Some(html[start..].split('"').next()?.to_string())
    }
}

fn load_events(url: &str) -> Vec<Value> {
    if url.contains("hang") {
        return vec![json!({"method": "Network.requestWillBeSent", "params": {"requestId": "r1"}})];
    }
    vec![
        json!({"method": "Network.requestWillBeSent", "params": {"requestId": "r1"}}),
        json!({"method": "Network.loadingFinished", "params": {"requestId": "r1"}}),
        json!({"method": "Page.loadEventFired", "params": {}}),
    ]
}

fn evaluate(tab: &mut Tab, expr: &str) -> Value {
    if expr == "location.href" {
        return json!(tab.url);
    }
    if expr.starts_with("[document.documentElement.outerHTML") {
        return json!([tab.html(), tab.scroll]);
    }
    if expr == SCRIPT {
        return json!(serde_json::to_string(&tab.reports()).unwrap());
    }
    if expr.starts_with("window.scrollBy(0, -") {
        tab.scroll = tab.scroll.saturating_sub(VP.height);
        return json!(true);
    }
    if expr.starts_with("window.scrollBy") {
        tab.scroll = (tab.scroll + VP.height).min(600);
        return json!(true);
    }
    if let Some(rest) = expr.split("__resolve(").nth(2) {
        let locator: String = serde_json::from_str(&rest[..rest.find(')').unwrap()]).unwrap();
        if expr.contains("getBoundingClientRect") {
            tab.pointed = Some(locator);
            return json!([10.0, 10.0]);
        }
        return json!(true);
    }
    Value::Null
}

fn serve_tab(stream: TcpStream) {
    let mut ws = tungstenite::accept(stream).unwrap();
    let mut tab = Tab { url: "about:blank".into(), scroll: 0, pointed: None };
    let png = Screenshot::blank(VP.width, VP.height, [240, 240, 240, 255]).to_png();
    let data = base64::engine::general_purpose::STANDARD.encode(png);
    loop {
        let msg = match ws.read() {
            Ok(Message::Text(t)) => t,
            Ok(Message::Close(_)) | Err(_) => return,
            Ok(_) => continue,
        };
        let req: Value = serde_json::from_str(msg.as_str()).unwrap();
        let id = req["id"].clone();
        let params = &req["params"];
        let mut events = Vec::new();
        let result = match req["method"].as_str().unwrap() {
            "Page.navigate" => {
                let url = params["url"].as_str().unwrap().to_string();
                if url.contains("broken") {
                    json!({"frameId": "f", "errorText": "net::ERR_NAME_NOT_RESOLVED"})
                } else {
                    events = load_events(&url);
                    tab.url = url;
                    tab.scroll = 0;
                    json!({"frameId": "f"})
                }
            }
            "Runtime.evaluate" => json!({"result": {"type": "object", "value": evaluate(&mut tab, params["expression"].as_str().unwrap())}}),
            "Page.captureScreenshot" => json!({"data": data}),
            "Input.dispatchMouseEvent" if params["type"] == "mouseReleased" => {
                if let Some(href) = tab.pointed.take().and_then(|l| tab.href_at(&l)) {
                    events = load_events(&href);
                    tab.url = href;
                    tab.scroll = 0;
                }
                json!({})
            }
            "Crash.now" => return,
            _ => json!({}),
        };
        if ws.send(Message::text(json!({"id": id, "result": result}).to_string())).is_err() {
            return;
        }
        for ev in events {
            let _ = ws.send(Message::text(ev.to_string()));
        }
    }
}

fn start() -> Fake {
    let http = TcpListener::bind("127.0.0.1:0").unwrap();
    let ws = TcpListener::bind("127.0.0.1:0").unwrap();
    let ws_port = ws.local_addr().unwrap().port();
    let targets = Arc::new(Mutex::new(Targets::default()));
    let addr = http.local_addr().unwrap();
    let t = Arc::clone(&targets);
    thread::spawn(move || serve_http(http, ws_port, t));
    thread::spawn(move || {
        for s in ws.incoming().flatten() {
            thread::spawn(move || serve_tab(s));
        }
    });
    Fake { http: format!("http://{addr}"), targets }
}

fn env(fake: &Fake) -> CdpEnv {
    let mut cfg = CdpConfig::new(fake.http.clone(), SCRIPT);
    cfg.quiet = Duration::from_millis(20);
    cfg.load_cap = Duration::from_millis(800);
    cfg.search_url = "http://site.test/search?q=".into();
    CdpEnv::new(cfg).unwrap()
}

#[test]
fn observe_click_select_scroll_stop() {
    let fake = start();
    let env = env(&fake);
    let mut s = env.open("http://site.test/a", VP).unwrap();
    assert_eq!(env.open_targets().unwrap(), 1);
    let obs = s.observe().unwrap();
    assert_eq!(obs.url, "http://site.test/a");
    let names: Vec<&str> = obs.a11y.elements.iter().map(|e| e.name.as_str()).collect();
    assert_eq!(names, ["Next page", "Size", "Buy"]);
    assert_eq!(obs.a11y.elements[1].options, ["Small", "Large"]);
    assert_eq!((obs.screenshot.width(), obs.screenshot.height()), (VP.width, VP.height));
    assert_eq!(obs.som_screenshot.width(), VP.width);

    let r = s.execute(&parse_action("select [1] [large]").unwrap()).unwrap();
    assert!(r.ok, "{:?}", r.error);
    let r = s.execute(&parse_action("select [1] [medium]").unwrap()).unwrap();
    assert!(!r.ok);
    assert_eq!(r.error, Some(EnvError::NoSuchOption("medium".into())));

    let r = s.execute(&parse_action("click [0]").unwrap()).unwrap();
    assert!(r.ok && r.page_changed, "{r:?}");
    let obs = s.observe().unwrap();
    assert_eq!(obs.url, "http://site.test/b");
    assert_eq!(obs.a11y.elements.len(), 1);
    let r = s.execute(&parse_action("click [5]").unwrap()).unwrap();
    assert!(matches!(r.error, Some(EnvError::StaleElement(_))));

    let r = s.execute(&parse_action("goto [http://site.test/tall]").unwrap()).unwrap();
    assert!(r.ok && r.page_changed);
    let before = s.observe().unwrap();
    assert!(!before.a11y.elements[1].visible);
    let r = s.execute(&parse_action("scroll [down]").unwrap()).unwrap();
    assert!(r.page_changed);
    let after = s.observe().unwrap();
    assert_eq!(after.a11y.scroll_y, VP.height);
    assert_ne!(after.digest, before.digest);
    assert!(after.a11y.elements[1].visible);
    assert!(!after.a11y.elements[0].visible);

    assert!(s.execute(&parse_action("stop").unwrap()).unwrap().ok);
    assert_eq!(s.execute(&parse_action("scroll [up]").unwrap()), Err(EnvError::SessionFinished));
    s.close();
    assert_eq!(env.open_targets().unwrap(), 0);
    assert_eq!(fake.targets.lock().unwrap().closed.len(), 1);
}

#[test]
fn load_that_never_finishes_times_out_and_closes_target() {
    let fake = start();
    let env = env(&fake);
    match env.open("http://site.test/hang", VP) {
        Err(EnvError::NavigationTimeout(_)) => {}
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("hanging page opened"),
    }
    assert_eq!(env.open_targets().unwrap(), 0);
}

#[test]
fn failed_navigation_inside_a_session_is_an_action_failure() {
    let fake = start();
    let env = env(&fake);
    let mut s = env.open("http://site.test/a", VP).unwrap();
    let r = s.execute(&parse_action("goto [http://broken.test/]").unwrap()).unwrap();
    assert!(!r.ok);
    assert!(matches!(r.error, Some(EnvError::NavigationTimeout(_))), "{r:?}");
    assert!(s.observe().is_ok());
    drop(s);
    assert_eq!(env.open_targets().unwrap(), 0);
}

#[test]
fn unreachable_endpoint_is_a_protocol_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let env = CdpEnv::new(CdpConfig::new(format!("http://127.0.0.1:{port}"), SCRIPT)).unwrap();
    assert!(matches!(env.open("http://site.test/a", VP), Err(EnvError::Protocol(_))));
}
