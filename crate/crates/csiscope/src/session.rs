//! One capture session: source, chain, recorder, classifier and the clients
//! watching it. Transport-agnostic; the WebSocket server drives it from a
//! single thread.
//!
//! Every message to a client is an envelope `{"seq":…,"kind":…,"payload":…}`
//! where `kind` is one of `frame`, `classification`, `config`, `stats`, `ack`
//! or `error`. Sequence numbers count per client; a gap always matches an
//! increment of that client's drop counter.

use std::collections::{BTreeMap, VecDeque};
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use csiscope_core::pipeline::{
    update_chain, ChainConfig, ChainError, ChainOutput, ConfigCommand, ParamValue, Pipeline, PipelineState, StreamShape,
};
use csiscope_core::{ClassificationResult, CsiFrame, MacAddr, ProcessedFrame};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bridge::{spawn_classifier, Bridge, BridgeError, BridgeOptions};
use crate::recording::{Format, RecordError, Recorder, RecordingMeta};
use crate::source::{now_us, open_source, Next, SourceError, SourceHandle, SourceUri};

pub type ClientId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Frame,
    Classification,
    Config,
    Stats,
    Ack,
    Error,
}

/// A decoded envelope, as a client sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub seq: u64,
    pub kind: Kind,
    pub payload: Value,
}

/// A queued envelope. The payload is serialized once and shared between
/// clients; only the sequence number differs.
#[derive(Debug, Clone)]
pub struct Message {
    pub seq: u64,
    pub kind: Kind,
    payload: Arc<str>,
}

impl Message {
    pub fn to_json(&self) -> String {
        let kind = match self.kind {
            Kind::Frame => "frame",
            Kind::Classification => "classification",
            Kind::Config => "config",
            Kind::Stats => "stats",
            Kind::Ack => "ack",
            Kind::Error => "error",
        };
        format!(r#"{{"seq":{},"kind":"{}","payload":{}}}"#, self.seq, kind, self.payload)
    }

    pub fn envelope(&self) -> Envelope {
        Envelope {
            seq: self.seq,
            kind: self.kind,
            payload: serde_json::from_str(&self.payload).expect("payload is JSON"),
        }
    }
}

struct OutboxState {
    queue: VecDeque<Message>,
    next_seq: u64,
    dropped: u64,
    closed: bool,
    frames_seen: u64,
}

/// Per-client send buffer. Pushing never blocks: when full, the oldest frame
/// envelope is discarded and counted, failing that the oldest stats envelope,
/// failing that the oldest envelope.
pub struct Outbox {
    state: Mutex<OutboxState>,
    ready: Condvar,
    capacity: usize,
    every: u64,
}

impl Outbox {
    pub fn new(capacity: usize, every: u64) -> Self {
        Self {
            state: Mutex::new(OutboxState {
                queue: VecDeque::new(),
                next_seq: 0,
                dropped: 0,
                closed: false,
                frames_seen: 0,
            }),
            ready: Condvar::new(),
            capacity: capacity.max(1),
            every: every.max(1),
        }
    }

    fn push(&self, kind: Kind, payload: &Arc<str>) {
        let mut s = self.state.lock().unwrap();
        if s.closed {
            return;
        }
        if kind == Kind::Frame {
            s.frames_seen += 1;
            if !(s.frames_seen - 1).is_multiple_of(self.every) {
                return;
            }
        }
        if s.queue.len() >= self.capacity {
            let oldest = |k: Kind| s.queue.iter().position(|m| m.kind == k);
            let victim = oldest(Kind::Frame).or_else(|| oldest(Kind::Stats)).unwrap_or(0);
            s.queue.remove(victim);
            s.dropped += 1;
        }
        let seq = s.next_seq;
        s.next_seq += 1;
        s.queue.push_back(Message {
            seq,
            kind,
            payload: payload.clone(),
        });
        self.ready.notify_one();
    }

    pub fn dropped(&self) -> u64 {
        self.state.lock().unwrap().dropped
    }

    pub fn len(&self) -> usize {
        self.state.lock().unwrap().queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_closed(&self) -> bool {
        self.state.lock().unwrap().closed
    }

    pub fn close(&self) {
        self.state.lock().unwrap().closed = true;
        self.ready.notify_all();
    }

    pub fn drain(&self) -> Vec<Message> {
        self.state.lock().unwrap().queue.drain(..).collect()
    }

    /// Waits up to `timeout` for at least one message, then takes everything.
    pub fn wait_drain(&self, timeout: Duration) -> Vec<Message> {
        let s = self.state.lock().unwrap();
        let (mut s, _) = self
            .ready
            .wait_timeout_while(s, timeout, |s| s.queue.is_empty() && !s.closed)
            .unwrap();
        s.queue.drain(..).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewRange {
    pub lo: f64,
    pub hi: f64,
}

/// Control messages, tagged by `cmd`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum Control {
    SetPlugin {
        id: String,
        #[serde(default)]
        enabled: Option<bool>,
        #[serde(default)]
        priority: Option<i64>,
        #[serde(default)]
        params: BTreeMap<String, ParamValue>,
    },
    SetMacFilter {
        macs: Vec<String>,
    },
    SetSource {
        uri: String,
    },
    StartRecord {
        path: PathBuf,
        format: String,
        #[serde(default)]
        label: Option<String>,
    },
    StopRecord {},
    SpawnClassifier {
        program: String,
        #[serde(default)]
        args: Vec<String>,
        #[serde(default)]
        phases: bool,
    },
    KillClassifier {},
    SetViewRange {
        lo: f64,
        hi: f64,
    },
}

pub const COMMANDS: [&str; 8] = [
    "set_plugin",
    "set_mac_filter",
    "set_source",
    "start_record",
    "stop_record",
    "spawn_classifier",
    "kill_classifier",
    "set_view_range",
];

#[derive(Debug, thiserror::Error)]
pub enum ControlError {
    #[error("unknown command {0:?}")]
    UnknownCommand(String),
    #[error("bad message: {0}")]
    BadMessage(String),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error("bad MAC address {0:?}")]
    BadMac(String),
    #[error("already recording")]
    AlreadyRecording,
    #[error("not recording")]
    NotRecording,
    #[error("a classifier is already running")]
    ClassifierRunning,
    #[error("no classifier running")]
    NoClassifier,
    #[error("view range needs finite lo < hi")]
    BadViewRange,
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
}

impl ControlError {
    pub fn code(&self) -> &'static str {
        match self {
            ControlError::UnknownCommand(_) => "unknown-command",
            ControlError::BadMessage(_) => "bad-message",
            ControlError::Chain(e) => match e {
                ChainError::UnknownPlugin(_) => "unknown-plugin",
                ChainError::UnknownKind(_) => "unknown-kind",
                ChainError::DuplicateId(_) => "duplicate-id",
                ChainError::UnknownParam { .. } => "unknown-param",
                ChainError::BadParamType { .. } => "bad-param-type",
                ChainError::ChainInvalid { .. } => "chain-invalid",
            },
            ControlError::BadMac(_) => "bad-mac",
            ControlError::AlreadyRecording => "already-recording",
            ControlError::NotRecording => "not-recording",
            ControlError::ClassifierRunning => "classifier-running",
            ControlError::NoClassifier => "no-classifier",
            ControlError::BadViewRange => "bad-view-range",
            ControlError::Source(e) => match e {
                SourceError::BindFailed { .. } => "bind-failed",
                SourceError::FileNotFound(_) => "file-not-found",
                SourceError::UnknownProfile(_) => "unknown-profile",
                SourceError::BadUri(_) => "bad-uri",
                _ => "source-error",
            },
            ControlError::Record(e) => match e {
                RecordError::UnsupportedFormat(_) => "unsupported-format",
                _ => "record-error",
            },
            ControlError::Bridge(e) => match e {
                BridgeError::SpawnFailed { .. } => "spawn-failed",
                BridgeError::BrokenPipe => "broken-pipe",
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub chain: ChainConfig,
    pub client_queue: usize,
    /// A stats envelope follows every this many input frames.
    pub stats_every: u64,
    pub bridge: BridgeOptions,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            chain: ChainConfig::default_chain(),
            client_queue: 256,
            stats_every: 9,
            bridge: BridgeOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Frame,
    Idle,
    EndOfStream,
    NoSource,
}

#[derive(Debug, Default, Clone)]
struct Counters {
    frames_in: u64,
    frames_out: u64,
    chain_dropped: u64,
    chain_errors: u64,
    recorded: u64,
    record_errors: u64,
    classifications: u64,
    macs: BTreeMap<MacAddr, u64>,
}

struct PendingRecording {
    path: PathBuf,
    format: Format,
    label: Option<String>,
}

struct ClassifierProc {
    program: String,
    args: Vec<String>,
    bridge: Bridge,
}

pub struct Session {
    cfg: SessionConfig,
    pipeline: Pipeline,
    state: PipelineState,
    chain: ChainConfig,
    source: Option<(SourceUri, SourceHandle)>,
    recorder: Option<Recorder>,
    pending_recording: Option<PendingRecording>,
    classifier: Option<ClassifierProc>,
    clients: BTreeMap<ClientId, Arc<Outbox>>,
    next_client: ClientId,
    view_range: Option<ViewRange>,
    input_shape: Option<StreamShape>,
    output_n: Option<usize>,
    counters: Counters,
    reported_chain_version: Option<u64>,
}

impl Session {
    pub fn new(cfg: SessionConfig) -> Self {
        Self {
            chain: cfg.chain.clone(),
            cfg,
            pipeline: Pipeline::default(),
            state: PipelineState::default(),
            source: None,
            recorder: None,
            pending_recording: None,
            classifier: None,
            clients: BTreeMap::new(),
            next_client: 1,
            view_range: None,
            input_shape: None,
            output_n: None,
            counters: Counters::default(),
            reported_chain_version: None,
        }
    }

    pub fn chain(&self) -> &ChainConfig {
        &self.chain
    }

    pub fn source_uri(&self) -> Option<&SourceUri> {
        self.source.as_ref().map(|(u, _)| u)
    }

    /// Registers a client and queues the current configuration for it.
    /// `every` > 1 sends only every k-th frame envelope to this client.
    pub fn connect(&mut self, every: u64) -> (ClientId, Arc<Outbox>) {
        let id = self.next_client;
        self.next_client += 1;
        let outbox = Arc::new(Outbox::new(self.cfg.client_queue, every));
        outbox.push(Kind::Config, &self.config_payload());
        self.clients.insert(id, outbox.clone());
        (id, outbox)
    }

    pub fn disconnect(&mut self, id: ClientId) {
        if let Some(o) = self.clients.remove(&id) {
            o.close();
        }
    }

    pub fn client_count(&self) -> usize {
        self.clients.len()
    }

    fn send_to(&self, id: ClientId, kind: Kind, payload: Value) {
        if let Some(o) = self.clients.get(&id) {
            o.push(kind, &Arc::from(payload.to_string()));
        }
    }

    fn broadcast(&self, kind: Kind, payload: &Arc<str>) {
        for o in self.clients.values() {
            o.push(kind, payload);
        }
    }

    fn config_payload(&self) -> Arc<str> {
        let recording = match (&self.recorder, &self.pending_recording) {
            (Some(r), _) => json!({
                "path": r.meta().path,
                "format": r.meta().format,
                "label": r.meta().label,
            }),
            (None, Some(p)) => json!({"path": p.path, "format": p.format, "label": p.label}),
            (None, None) => Value::Null,
        };
        let classifier = match &self.classifier {
            Some(c) => json!({"program": c.program, "args": c.args, "pid": c.bridge.pid()}),
            None => Value::Null,
        };
        let payload = json!({
            "version": self.chain.version,
            "chain": self.chain,
            "source": self.source_uri().map(|u| u.to_string()),
            "recording": recording,
            "classifier": classifier,
            "view_range": self.view_range,
        });
        Arc::from(payload.to_string())
    }

    fn broadcast_config(&self) {
        self.broadcast(Kind::Config, &self.config_payload());
    }

    /// Parses and applies one control message from `from`. The sender gets an
    /// ack or an error; on success every client gets the new configuration.
    pub fn handle_control(&mut self, from: ClientId, text: &str) -> Result<u64, ControlError> {
        let cmd_name = serde_json::from_str::<Value>(text)
            .ok()
            .and_then(|v| v.get("cmd").and_then(Value::as_str).map(str::to_owned));
        let result = self.apply_control(text, cmd_name.as_deref());
        match &result {
            Ok(extra) => {
                let mut ack = json!({"cmd": cmd_name, "version": self.chain.version});
                if let (Value::Object(a), Value::Object(e)) = (&mut ack, extra) {
                    a.extend(e.clone());
                }
                self.send_to(from, Kind::Ack, ack);
                self.broadcast_config();
            }
            Err(e) => self.send_to(
                from,
                Kind::Error,
                json!({"cmd": cmd_name, "code": e.code(), "message": e.to_string()}),
            ),
        }
        result.map(|_| self.chain.version)
    }

    fn apply_control(&mut self, text: &str, cmd: Option<&str>) -> Result<Value, ControlError> {
        match cmd {
            Some(c) if COMMANDS.contains(&c) => {}
            Some(c) => return Err(ControlError::UnknownCommand(c.into())),
            None => {
                return Err(ControlError::BadMessage(
                    "expected a JSON object with a \"cmd\" field".into(),
                ))
            }
        }
        let control: Control = serde_json::from_str(text).map_err(|e| ControlError::BadMessage(e.to_string()))?;
        self.apply(control)
    }

    /// Applies an already-decoded control message.
    pub fn apply(&mut self, control: Control) -> Result<Value, ControlError> {
        match control {
            Control::SetPlugin {
                id,
                enabled,
                priority,
                params,
            } => {
                let mut cmds = Vec::new();
                match enabled {
                    Some(true) => cmds.push(ConfigCommand::Enable { id: id.clone() }),
                    Some(false) => cmds.push(ConfigCommand::Disable { id: id.clone() }),
                    None => {}
                }
                if let Some(priority) = priority {
                    cmds.push(ConfigCommand::SetPriority {
                        id: id.clone(),
                        priority,
                    });
                }
                for (key, value) in params {
                    cmds.push(ConfigCommand::SetParam {
                        id: id.clone(),
                        key,
                        value,
                    });
                }
                if cmds.is_empty() {
                    return Err(ControlError::BadMessage("set_plugin changes nothing".into()));
                }
                self.commit_chain(&cmds)?;
                Ok(json!({}))
            }
            Control::SetMacFilter { macs } => {
                let parsed = macs
                    .iter()
                    .map(|m| m.parse::<MacAddr>().map_err(|_| ControlError::BadMac(m.clone())))
                    .collect::<Result<Vec<_>, _>>()?;
                let allow = parsed.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(",");
                let id = String::from("mac-filter");
                let toggle = if parsed.is_empty() {
                    ConfigCommand::Disable { id: id.clone() }
                } else {
                    ConfigCommand::Enable { id: id.clone() }
                };
                self.commit_chain(&[
                    ConfigCommand::SetParam {
                        id,
                        key: "allow".into(),
                        value: ParamValue::Text(allow),
                    },
                    toggle,
                ])?;
                Ok(json!({}))
            }
            Control::SetSource { uri } => {
                let uri: SourceUri = uri.parse().map_err(SourceError::from)?;
                self.set_source(uri)?;
                Ok(json!({}))
            }
            Control::StartRecord { path, format, label } => {
                if self.recorder.is_some() || self.pending_recording.is_some() {
                    return Err(ControlError::AlreadyRecording);
                }
                let format: Format = format.parse()?;
                let pending = PendingRecording { path, format, label };
                match self.output_n {
                    Some(n) => self.recorder = Some(self.start_recorder(pending, n)?),
                    None => self.pending_recording = Some(pending),
                }
                Ok(json!({}))
            }
            Control::StopRecord {} => {
                if self.pending_recording.take().is_some() {
                    return Ok(json!({"records": 0}));
                }
                let rec = self.recorder.take().ok_or(ControlError::NotRecording)?;
                let summary = rec.stop()?;
                Ok(json!({"records": summary.records, "path": summary.path}))
            }
            Control::SpawnClassifier { program, args, phases } => {
                if let Some(c) = &mut self.classifier {
                    if c.bridge.is_alive() {
                        return Err(ControlError::ClassifierRunning);
                    }
                }
                let opts = BridgeOptions {
                    include_phases: phases,
                    ..self.cfg.bridge
                };
                let bridge = spawn_classifier(&program, &args, opts)?;
                let pid = bridge.pid();
                self.classifier = Some(ClassifierProc { program, args, bridge });
                Ok(json!({"pid": pid}))
            }
            Control::KillClassifier {} => {
                let mut c = self.classifier.take().ok_or(ControlError::NoClassifier)?;
                c.bridge.kill();
                Ok(json!({}))
            }
            Control::SetViewRange { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(ControlError::BadViewRange);
                }
                self.view_range = Some(ViewRange { lo, hi });
                Ok(json!({}))
            }
        }
    }

    /// Applies `cmds` as one change with a single version bump, validating
    /// the result against the live stream before committing.
    fn commit_chain(&mut self, cmds: &[ConfigCommand]) -> Result<(), ControlError> {
        let mut next = self.chain.clone();
        for c in cmds {
            next = update_chain(&next, c, self.pipeline.registry())?;
        }
        next.version = self.chain.version + 1;
        next.check(self.pipeline.registry())?;
        if let Some(shape) = self.input_shape {
            self.pipeline.validate(&next, shape)?;
        }
        self.chain = next;
        Ok(())
    }

    /// Replaces the whole chain, e.g. from a `--chain` file.
    pub fn set_chain(&mut self, mut chain: ChainConfig) -> Result<u64, ControlError> {
        chain.check(self.pipeline.registry())?;
        if let Some(shape) = self.input_shape {
            self.pipeline.validate(&chain, shape)?;
        }
        chain.version = chain.version.max(self.chain.version + 1);
        self.chain = chain;
        self.broadcast_config();
        Ok(self.chain.version)
    }

    pub fn set_source(&mut self, uri: SourceUri) -> Result<(), SourceError> {
        let handle = match open_source(&uri) {
            Ok(h) => h,
            Err(SourceError::BindFailed { .. }) if self.source.as_ref().is_some_and(|(old, _)| *old == uri) => {
                // Rebinding our own socket: release it first.
                self.source = None;
                open_source(&uri)?
            }
            Err(e) => return Err(e),
        };
        self.source = Some((uri, handle));
        Ok(())
    }

    fn start_recorder(&self, p: PendingRecording, n: usize) -> Result<Recorder, RecordError> {
        Recorder::start(RecordingMeta {
            format: p.format,
            path: p.path,
            started_us: now_us(),
            chain_version: self.chain.version,
            label: p.label,
            n_subcarriers: n,
            subcarrier_order: csiscope_core::SubcarrierOrder::LinearOrder,
            chain: Some(self.chain.clone()),
        })
    }

    /// Pulls at most one frame from the source and forwards whatever the
    /// classifier has produced meanwhile.
    pub fn step(&mut self, timeout: Duration) -> Step {
        let outcome = match &mut self.source {
            None => Step::NoSource,
            Some((_, handle)) => match handle.next_frame(timeout) {
                Ok(Next::Frame(f)) => {
                    self.process_frame(f);
                    Step::Frame
                }
                Ok(Next::Timeout) => Step::Idle,
                Ok(Next::EndOfStream) => {
                    self.source = None;
                    self.broadcast_stats();
                    self.broadcast_config();
                    Step::EndOfStream
                }
                Err(e) => {
                    self.source = None;
                    let payload = json!({"cmd": null, "code": "source-error", "message": e.to_string()});
                    self.broadcast(Kind::Error, &Arc::from(payload.to_string()));
                    self.broadcast_config();
                    Step::EndOfStream
                }
            },
        };
        self.poll_classifier();
        outcome
    }

    /// Runs one frame through the chain and fans the result out.
    pub fn process_frame(&mut self, frame: CsiFrame) {
        self.counters.frames_in += 1;
        *self.counters.macs.entry(frame.header.source_mac).or_default() += 1;
        self.input_shape = Some(StreamShape::of(&frame));
        match self.pipeline.run_chain(frame, &self.chain, &mut self.state) {
            Ok(ChainOutput::Processed(p)) => {
                self.counters.frames_out += 1;
                self.output_n = Some(p.n());
                self.record(&p);
                if let Some(c) = &mut self.classifier {
                    let _ = c.bridge.send_frame(&p);
                }
                self.broadcast_frame(&p);
            }
            Ok(ChainOutput::Dropped { .. }) => self.counters.chain_dropped += 1,
            Err(e) => {
                self.counters.chain_errors += 1;
                if self.reported_chain_version != Some(self.chain.version) {
                    self.reported_chain_version = Some(self.chain.version);
                    let payload = json!({"cmd": null, "code": "chain-invalid", "message": e.to_string()});
                    self.broadcast(Kind::Error, &Arc::from(payload.to_string()));
                }
            }
        }
        if self.cfg.stats_every > 0 && self.counters.frames_in.is_multiple_of(self.cfg.stats_every) {
            self.broadcast_stats();
        }
    }

    fn record(&mut self, p: &ProcessedFrame) {
        if let Some(pending) = self.pending_recording.take() {
            match self.start_recorder(pending, p.n()) {
                Ok(r) => self.recorder = Some(r),
                Err(e) => {
                    let payload = json!({"cmd": "start_record", "code": "record-error", "message": e.to_string()});
                    self.broadcast(Kind::Error, &Arc::from(payload.to_string()));
                    self.broadcast_config();
                }
            }
        }
        if let Some(r) = &self.recorder {
            match r.append(p.clone()) {
                Ok(()) => self.counters.recorded += 1,
                Err(_) => self.counters.record_errors += 1,
            }
        }
    }

    pub fn broadcast_frame(&self, p: &ProcessedFrame) {
        if self.clients.is_empty() {
            return;
        }
        let h = p.header();
        let payload = json!({
            "timestamp_us": h.timestamp_us,
            "mac": h.source_mac,
            "seq": h.seq,
            "rssi_dbm": h.rssi_dbm,
            "rssi_smoothed_dbm": p.polar.rssi_smoothed_dbm,
            "bandwidth_mhz": h.bandwidth.mhz(),
            "order": h.subcarrier_order,
            "amplitudes": p.polar.amplitudes,
            "phases": p.polar.phases,
            "applied_plugins": p.polar.applied_plugins,
            "zero_power": p.polar.zero_power,
        });
        self.broadcast(Kind::Frame, &Arc::from(payload.to_string()));
    }

    pub fn broadcast_classification(&mut self, r: &ClassificationResult) {
        self.counters.classifications += 1;
        let payload = json!({"class": r.class_id, "confidence": r.confidence, "t": r.window_end_us});
        self.broadcast(Kind::Classification, &Arc::from(payload.to_string()));
    }

    fn poll_classifier(&mut self) {
        let results = match &mut self.classifier {
            Some(c) => c.bridge.poll_results(),
            None => return,
        };
        for r in &results {
            self.broadcast_classification(r);
        }
    }

    fn stats_payload(&self, client_dropped: u64) -> Value {
        let source = self.source.as_ref().map(|(_, h)| h.stats()).unwrap_or_default();
        let bridge = self.classifier.as_ref().map(|c| c.bridge.stats());
        json!({
            "frames_in": self.counters.frames_in,
            "frames_out": self.counters.frames_out,
            "chain_dropped": self.counters.chain_dropped,
            "chain_errors": self.counters.chain_errors,
            "source_parse_errors": source.parse_errors,
            "source_dropped": source.dropped,
            "recorded": self.counters.recorded,
            "record_errors": self.counters.record_errors,
            "classifications": self.counters.classifications,
            "bridge_alive": bridge.is_some_and(|b| b.alive),
            "bridge": bridge.map(|b| json!({
                "frames_sent": b.frames_sent,
                "frames_dropped": b.frames_dropped,
                "results_received": b.results_received,
                "malformed": b.malformed,
            })),
            "client_dropped": client_dropped,
            "macs": self.counters.macs.iter().map(|(m, c)| (m.to_string(), *c)).collect::<BTreeMap<_, _>>(),
        })
    }

    /// Stats differ per client only in `client_dropped`.
    pub fn broadcast_stats(&mut self) {
        if let Some(c) = &mut self.classifier {
            c.bridge.is_alive();
        }
        for o in self.clients.values() {
            let payload = self.stats_payload(o.dropped());
            o.push(Kind::Stats, &Arc::from(payload.to_string()));
        }
    }

    /// Flushes the recorder, reaps the classifier and closes every client.
    pub fn shutdown(&mut self) {
        self.pending_recording = None;
        if let Some(r) = self.recorder.take() {
            let _ = r.stop();
        }
        if let Some(mut c) = self.classifier.take() {
            c.bridge.kill();
        }
        self.source = None;
        for o in self.clients.values() {
            o.close();
        }
        self.clients.clear();
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.shutdown();
    }
}
