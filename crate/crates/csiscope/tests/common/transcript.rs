//! Scripted control session whose envelope transcript is frozen in
//! `tests/golden/control_transcript.jsonl`.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use csiscope::session::{ClientId, Outbox, Session, SessionConfig, Step};
use serde_json::{json, Value};

pub const GOLDEN: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/control_transcript.jsonl");

const VOLATILE: [&str; 3] = ["timestamp_us", "t", "started_us"];

/// Replaces wall-clock values and strips directories from paths.
pub fn normalize(v: &mut Value) {
    match v {
        Value::Object(map) => {
            for (k, x) in map.iter_mut() {
                if VOLATILE.contains(&k.as_str()) && x.is_number() {
                    *x = json!("<ts>");
                } else if k == "path" {
                    if let Some(s) = x.as_str() {
                        let name = Path::new(s).file_name().map(|n| n.to_string_lossy().into_owned());
                        *x = json!(name);
                    }
                } else if k == "source" {
                    if let Some(s) = x.as_str() {
                        *x = json!(s.split('?').next().unwrap_or(s));
                    }
                } else {
                    normalize(x);
                }
            }
        }
        Value::Array(xs) => xs.iter_mut().for_each(normalize),
        _ => {}
    }
}

struct Script {
    session: Session,
    clients: Vec<(&'static str, ClientId, Arc<Outbox>)>,
    lines: Vec<Value>,
}

impl Script {
    fn connect(&mut self, name: &'static str, every: u64) {
        let (id, outbox) = self.session.connect(every);
        self.lines.push(json!({"connect": name, "every": every}));
        self.clients.push((name, id, outbox));
        self.flush();
    }

    fn send(&mut self, name: &str, msg: Value) {
        self.send_text(name, &msg.to_string());
    }

    fn send_text(&mut self, name: &str, text: &str) {
        let id = self.clients.iter().find(|c| c.0 == name).expect("client").1;
        let line = match serde_json::from_str::<Value>(text) {
            Ok(mut msg) => {
                normalize(&mut msg);
                json!({"from": name, "msg": msg})
            }
            Err(_) => json!({"from": name, "text": text}),
        };
        self.lines.push(line);
        let _ = self.session.handle_control(id, text);
        self.flush();
    }

    fn step(&mut self, frames: usize) {
        for _ in 0..frames {
            assert_eq!(self.session.step(Duration::from_secs(1)), Step::Frame);
        }
        self.flush();
    }

    fn flush(&mut self) {
        for (name, _, outbox) in &self.clients {
            for m in outbox.drain() {
                let env = m.envelope();
                let mut line = json!({"to": name, "seq": env.seq, "kind": env.kind, "payload": env.payload});
                normalize(&mut line);
                self.lines.push(line);
            }
        }
    }
}

/// Runs the script; recordings go under `dir`.
pub fn run_script(dir: &Path) -> Vec<Value> {
    let mut s = Script {
        session: Session::new(SessionConfig::default()),
        clients: Vec::new(),
        lines: Vec::new(),
    };
    let rec: PathBuf = dir.join("walk.csv");
    s.connect("a", 1);
    s.send(
        "a",
        json!({"cmd": "set_source", "uri": "synth://pattern-a?mode=offline&seed=11"}),
    );
    s.step(2);
    s.connect("b", 2);
    s.step(2);
    s.send("a", json!({"cmd": "set_plugin", "id": "agc", "enabled": false}));
    s.step(1);
    s.send(
        "b",
        json!({"cmd": "set_plugin", "id": "rssi-smooth", "enabled": true, "params": {"alpha": 0.5}}),
    );
    s.send(
        "b",
        json!({"cmd": "set_plugin", "id": "agc", "enabled": true, "priority": 45}),
    );
    s.step(2);
    s.send("a", json!({"cmd": "set_plugin", "id": "nope", "enabled": true}));
    s.send(
        "a",
        json!({"cmd": "set_plugin", "id": "narrow", "enabled": true, "params": {"target_n": 128}}),
    );
    s.send("a", json!({"cmd": "set_plugin", "id": "null", "params": {"bogus": 1}}));
    s.send("a", json!({"cmd": "set_plugin", "id": "agc"}));
    s.send("a", json!({"cmd": "set_mac_filter", "macs": ["aa:bb:cc:dd:ee:ff"]}));
    s.step(2);
    s.send("a", json!({"cmd": "set_mac_filter", "macs": ["not-a-mac"]}));
    s.send("a", json!({"cmd": "set_mac_filter", "macs": []}));
    s.send("b", json!({"cmd": "set_view_range", "lo": 0.1, "hi": 0.9}));
    s.send("b", json!({"cmd": "set_view_range", "lo": 1.0, "hi": 0.0}));
    s.send("a", json!({"cmd": "reboot"}));
    s.send_text("a", "{\"cmd\": ");
    s.send("a", json!({"cmd": "set_view_range", "lo": "low"}));
    s.send("a", json!({"cmd": "stop_record"}));
    s.send("a", json!({"cmd": "start_record", "path": rec, "format": "csv-fancy"}));
    s.send(
        "a",
        json!({"cmd": "start_record", "path": rec, "format": "csv-compact", "label": "walk"}),
    );
    s.step(2);
    s.send("b", json!({"cmd": "start_record", "path": rec, "format": "binary"}));
    s.send("a", json!({"cmd": "stop_record"}));
    s.send("a", json!({"cmd": "kill_classifier"}));
    s.send("a", json!({"cmd": "set_source", "uri": "synth://nope?mode=offline"}));
    s.send(
        "a",
        json!({"cmd": "set_source", "uri": "synth://pattern-b?mode=offline&seed=12"}),
    );
    s.step(3);
    s.session.shutdown();
    s.flush();
    s.lines
}

pub fn to_text(lines: &[Value]) -> String {
    let mut out = String::new();
    for l in lines {
        out.push_str(&serde_json::to_string(l).unwrap());
        out.push('\n');
    }
    out
}

/// Compares against the checked-in golden. `UPDATE_GOLDENS=1` rewrites it.
pub fn check_golden(lines: &[Value]) -> Result<(), String> {
    if std::env::var_os("UPDATE_GOLDENS").is_some() {
        std::fs::write(GOLDEN, to_text(lines)).map_err(|e| e.to_string())?;
        return Ok(());
    }
    let golden = std::fs::read_to_string(GOLDEN).map_err(|e| format!("{GOLDEN}: {e}"))?;
    let want: Vec<Value> = golden
        .lines()
        .map(|l| serde_json::from_str(l).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    for (i, (got, want)) in lines.iter().zip(&want).enumerate() {
        if got != want {
            return Err(format!("line {}: got {got}\nwant {want}", i + 1));
        }
    }
    if lines.len() != want.len() {
        return Err(format!("{} lines, golden has {}", lines.len(), want.len()));
    }
    Ok(())
}
