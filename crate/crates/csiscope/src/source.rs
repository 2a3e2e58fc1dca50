//! Frame sources: live UDP, pcap replay and the synthetic channel.

use std::collections::VecDeque;
use std::fmt;
use std::fs::File;
use std::io::{self, BufReader};
use std::net::{SocketAddr, UdpSocket};
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use csiscope_core::codec::{IngestLayout, DEFAULT_CSI_PORT, WEF1_MAGIC};
use csiscope_core::synth::{SynthError, SynthProfile, SynthStream};
use csiscope_core::CsiFrame;

use crate::pcap::{parse_csi_payload, PcapError, PcapReader};

pub const PORT_ENV: &str = "CSISCOPE_UDP_PORT";
pub const UDP_QUEUE_DEPTH: usize = 1024;

/// The CSI port: `CSISCOPE_UDP_PORT` when set and valid, otherwise 5500.
pub fn default_port() -> u16 {
    std::env::var(PORT_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(DEFAULT_CSI_PORT)
}

pub fn now_us() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_micros() as u64)
        .unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthMode {
    /// Frames are paced at the profile rate against the wall clock.
    Realtime,
    /// Frames are produced immediately with synthetic timestamps.
    Offline,
}

/// `udp://host[:port]`, `pcap://path[?rate=<hz>&port=<p>]`, or
/// `synth://<profile>[?seed=&mode=offline|realtime&start=<us>&noise=&rate=]`.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceUri {
    Udp {
        addr: SocketAddr,
    },
    Pcap {
        path: PathBuf,
        rate_hz: Option<f64>,
        port: u16,
    },
    Synth {
        profile: String,
        seed: Option<u64>,
        mode: SynthMode,
        start_us: Option<u64>,
        noise_sigma: Option<f64>,
        rate_hz: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("bad source uri {uri:?}: {reason}")]
pub struct BadUri {
    pub uri: String,
    pub reason: String,
}

impl FromStr for SourceUri {
    type Err = BadUri;

    fn from_str(s: &str) -> Result<Self, BadUri> {
        let bad = |reason: &str| BadUri {
            uri: s.into(),
            reason: reason.into(),
        };
        let (scheme, rest) = s.split_once("://").ok_or_else(|| bad("missing scheme"))?;
        let (target, query) = rest.split_once('?').unwrap_or((rest, ""));
        let mut params = Vec::new();
        for kv in query.split('&').filter(|kv| !kv.is_empty()) {
            let (k, v) = kv.split_once('=').ok_or_else(|| bad("query entries need key=value"))?;
            params.push((k, v));
        }
        let get = |key: &str| params.iter().find(|(k, _)| *k == key).map(|(_, v)| *v);
        let num = |key: &str| -> Result<Option<f64>, BadUri> {
            get(key)
                .map(|v| v.parse::<f64>().ok().filter(|x| x.is_finite() && *x > 0.0))
                .map(|v| v.ok_or_else(|| bad(&format!("{key} must be a positive number"))))
                .transpose()
        };
        let known = |allowed: &[&str]| -> Result<(), BadUri> {
            match params.iter().find(|(k, _)| !allowed.contains(k)) {
                Some((k, _)) => Err(bad(&format!("unknown parameter {k}"))),
                None => Ok(()),
            }
        };
        match scheme {
            "udp" => {
                known(&[])?;
                let addr = if target.contains(':') {
                    target.parse().map_err(|_| bad("expected host:port"))?
                } else {
                    let ip = target.parse().map_err(|_| bad("expected an IP address"))?;
                    SocketAddr::new(ip, default_port())
                };
                Ok(SourceUri::Udp { addr })
            }
            "pcap" => {
                known(&["rate", "port"])?;
                if target.is_empty() {
                    return Err(bad("missing file path"));
                }
                let port = match get("port") {
                    Some(p) => p.parse().map_err(|_| bad("bad port"))?,
                    None => default_port(),
                };
                Ok(SourceUri::Pcap {
                    path: target.into(),
                    rate_hz: num("rate")?,
                    port,
                })
            }
            "synth" => {
                known(&["seed", "mode", "start", "noise", "rate"])?;
                if target.is_empty() {
                    return Err(bad("missing profile name"));
                }
                let mode = match get("mode") {
                    None | Some("realtime") => SynthMode::Realtime,
                    Some("offline") => SynthMode::Offline,
                    Some(_) => return Err(bad("mode must be offline or realtime")),
                };
                let int = |key: &str| -> Result<Option<u64>, BadUri> {
                    get(key)
                        .map(|v| v.parse().map_err(|_| bad(&format!("{key} must be an integer"))))
                        .transpose()
                };
                let noise_sigma = match get("noise") {
                    Some(v) => Some(
                        v.parse::<f64>()
                            .ok()
                            .filter(|x| x.is_finite() && *x >= 0.0)
                            .ok_or_else(|| bad("noise must be >= 0"))?,
                    ),
                    None => None,
                };
                Ok(SourceUri::Synth {
                    profile: target.into(),
                    seed: int("seed")?,
                    mode,
                    start_us: int("start")?,
                    noise_sigma,
                    rate_hz: num("rate")?,
                })
            }
            _ => Err(bad("scheme must be udp, pcap or synth")),
        }
    }
}

impl fmt::Display for SourceUri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourceUri::Udp { addr } => write!(f, "udp://{addr}"),
            SourceUri::Pcap { path, rate_hz, port } => {
                write!(f, "pcap://{}?port={port}", path.display())?;
                if let Some(r) = rate_hz {
                    write!(f, "&rate={r}")?;
                }
                Ok(())
            }
            SourceUri::Synth {
                profile,
                seed,
                mode,
                start_us,
                noise_sigma,
                rate_hz,
            } => {
                let mode = match mode {
                    SynthMode::Realtime => "realtime",
                    SynthMode::Offline => "offline",
                };
                write!(f, "synth://{profile}?mode={mode}")?;
                if let Some(s) = seed {
                    write!(f, "&seed={s}")?;
                }
                if let Some(s) = start_us {
                    write!(f, "&start={s}")?;
                }
                if let Some(n) = noise_sigma {
                    write!(f, "&noise={n}")?;
                }
                if let Some(r) = rate_hz {
                    write!(f, "&rate={r}")?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SourceError {
    #[error("cannot bind {addr}: {source}")]
    BindFailed { addr: SocketAddr, source: io::Error },
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error(transparent)]
    UnknownProfile(#[from] SynthError),
    #[error(transparent)]
    BadUri(#[from] BadUri),
    #[error(transparent)]
    Pcap(#[from] PcapError),
    #[error("source closed")]
    SourceClosed,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Next {
    Frame(CsiFrame),
    EndOfStream,
    Timeout,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SourceStats {
    pub frames: u64,
    pub parse_errors: u64,
    /// Frames discarded because the receive queue was full.
    pub dropped: u64,
}

/// Sleeps until `due` or for at most `timeout`; `true` when `due` was reached.
fn wait_until(due: Instant, timeout: Duration) -> bool {
    let now = Instant::now();
    if due <= now {
        return true;
    }
    if due - now > timeout {
        thread::sleep(timeout);
        return false;
    }
    thread::sleep(due - now);
    true
}

pub struct SynthSource {
    stream: SynthStream,
    mode: SynthMode,
    origin: Instant,
    origin_us: u64,
    frames: u64,
}

impl SynthSource {
    pub fn new(profile: SynthProfile, mode: SynthMode, start_us: Option<u64>) -> Result<Self, SynthError> {
        let start = start_us.unwrap_or(match mode {
            SynthMode::Realtime => now_us(),
            SynthMode::Offline => 0,
        });
        Ok(Self {
            stream: SynthStream::new(profile, start)?,
            mode,
            origin: Instant::now(),
            origin_us: start,
            frames: 0,
        })
    }

    pub fn profile(&self) -> &SynthProfile {
        self.stream.profile()
    }

    fn next_frame(&mut self, timeout: Duration) -> Next {
        if self.mode == SynthMode::Realtime {
            let offset = self.stream.next_time_us().saturating_sub(self.origin_us);
            if !wait_until(self.origin + Duration::from_micros(offset), timeout) {
                return Next::Timeout;
            }
        }
        self.frames += 1;
        match self.stream.next() {
            Some(f) => Next::Frame(f),
            None => Next::EndOfStream,
        }
    }
}

pub struct PcapSource {
    reader: PcapReader<BufReader<File>>,
    period: Option<Duration>,
    next_due: Instant,
    pending: Option<CsiFrame>,
}

impl PcapSource {
    pub fn open(path: &std::path::Path, rate_hz: Option<f64>, port: u16) -> Result<Self, SourceError> {
        let file = File::open(path).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => SourceError::FileNotFound(path.into()),
            _ => SourceError::Io(e),
        })?;
        let reader = PcapReader::with_options(BufReader::new(file), port, IngestLayout::default())?;
        Ok(Self {
            reader,
            period: rate_hz.map(|r| Duration::from_secs_f64(1.0 / r)),
            next_due: Instant::now(),
            pending: None,
        })
    }

    fn next_frame(&mut self, timeout: Duration) -> Result<Next, SourceError> {
        let frame = match self.pending.take() {
            Some(f) => f,
            None => match self.reader.next_frame()? {
                Some(f) => f,
                None => return Ok(Next::EndOfStream),
            },
        };
        if let Some(period) = self.period {
            if !wait_until(self.next_due, timeout) {
                self.pending = Some(frame);
                return Ok(Next::Timeout);
            }
            self.next_due = self.next_due.max(Instant::now() - period) + period;
        }
        Ok(Next::Frame(frame))
    }
}

struct UdpShared {
    queue: Mutex<(VecDeque<CsiFrame>, SourceStats)>,
    ready: Condvar,
    stop: AtomicBool,
}

/// Live UDP listener. A receive thread parses datagrams into a bounded queue;
/// when the queue is full the oldest frame is discarded.
pub struct UdpSource {
    shared: Arc<UdpShared>,
    local: SocketAddr,
    worker: Option<JoinHandle<()>>,
}

impl UdpSource {
    pub fn bind(addr: SocketAddr) -> Result<Self, SourceError> {
        Self::bind_with(addr, UDP_QUEUE_DEPTH, IngestLayout::default())
    }

    pub fn bind_with(addr: SocketAddr, depth: usize, layout: IngestLayout) -> Result<Self, SourceError> {
        let socket = UdpSocket::bind(addr).map_err(|source| SourceError::BindFailed { addr, source })?;
        socket.set_read_timeout(Some(Duration::from_millis(50)))?;
        let local = socket.local_addr()?;
        let shared = Arc::new(UdpShared {
            queue: Mutex::new((VecDeque::with_capacity(depth), SourceStats::default())),
            ready: Condvar::new(),
            stop: AtomicBool::new(false),
        });
        let worker = {
            let shared = shared.clone();
            thread::Builder::new()
                .name("csi-udp".into())
                .spawn(move || udp_loop(socket, shared, depth.max(1), layout))?
        };
        Ok(Self {
            shared,
            local,
            worker: Some(worker),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local
    }

    pub fn stats(&self) -> SourceStats {
        self.shared.queue.lock().unwrap().1
    }

    fn next_frame(&mut self, timeout: Duration) -> Result<Next, SourceError> {
        let guard = self.shared.queue.lock().unwrap();
        let (mut guard, _) = self
            .shared
            .ready
            .wait_timeout_while(guard, timeout, |(q, _)| {
                q.is_empty() && !self.shared.stop.load(Ordering::Relaxed)
            })
            .unwrap();
        match guard.0.pop_front() {
            Some(f) => Ok(Next::Frame(f)),
            None if self.shared.stop.load(Ordering::Relaxed) => Err(SourceError::SourceClosed),
            None => Ok(Next::Timeout),
        }
    }
}

fn udp_loop(socket: UdpSocket, shared: Arc<UdpShared>, depth: usize, layout: IngestLayout) {
    let mut buf = vec![0u8; 65536];
    while !shared.stop.load(Ordering::Relaxed) {
        let n = match socket.recv_from(&mut buf) {
            Ok((n, _)) => n,
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => continue,
            Err(_) => break,
        };
        let payload = &buf[..n];
        let parsed = parse_csi_payload(payload, &layout).map(|mut f| {
            // Firmware payloads carry no time; WEF1 senders have stamped theirs.
            if !payload.starts_with(&WEF1_MAGIC) || f.header.timestamp_us == 0 {
                f.header.timestamp_us = now_us();
            }
            f
        });
        let mut guard = shared.queue.lock().unwrap();
        let (queue, stats) = &mut *guard;
        match parsed {
            Ok(f) => {
                if queue.len() >= depth {
                    queue.pop_front();
                    stats.dropped += 1;
                }
                queue.push_back(f);
                stats.frames += 1;
                shared.ready.notify_one();
            }
            Err(_) => stats.parse_errors += 1,
        }
    }
    shared.stop.store(true, Ordering::Relaxed);
    shared.ready.notify_all();
}

impl Drop for UdpSource {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::Relaxed);
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

pub enum SourceHandle {
    Synth(SynthSource),
    Pcap(PcapSource),
    Udp(UdpSource),
}

impl fmt::Debug for SourceHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourceHandle::Synth(s) => write!(f, "SourceHandle::Synth({})", s.profile().name),
            SourceHandle::Pcap(_) => f.write_str("SourceHandle::Pcap"),
            SourceHandle::Udp(u) => write!(f, "SourceHandle::Udp({})", u.local),
        }
    }
}

pub fn open_source(uri: &SourceUri) -> Result<SourceHandle, SourceError> {
    match uri {
        SourceUri::Udp { addr } => Ok(SourceHandle::Udp(UdpSource::bind(*addr)?)),
        SourceUri::Pcap { path, rate_hz, port } => Ok(SourceHandle::Pcap(PcapSource::open(path, *rate_hz, *port)?)),
        SourceUri::Synth {
            profile,
            seed,
            mode,
            start_us,
            noise_sigma,
            rate_hz,
        } => {
            let mut p = SynthProfile::builtin(profile)?;
            if let Some(s) = seed {
                p.rng_seed = *s;
            }
            if let Some(n) = noise_sigma {
                p.noise_sigma = *n;
            }
            if let Some(r) = rate_hz {
                p.frame_rate_hz = *r;
            }
            Ok(SourceHandle::Synth(SynthSource::new(p, *mode, *start_us)?))
        }
    }
}

impl SourceHandle {
    /// Blocks for at most `timeout`. Unparseable input is counted and
    /// skipped, never returned.
    pub fn next_frame(&mut self, timeout: Duration) -> Result<Next, SourceError> {
        match self {
            SourceHandle::Synth(s) => Ok(s.next_frame(timeout)),
            SourceHandle::Pcap(p) => p.next_frame(timeout),
            SourceHandle::Udp(u) => u.next_frame(timeout),
        }
    }

    pub fn stats(&self) -> SourceStats {
        match self {
            SourceHandle::Synth(s) => SourceStats {
                frames: s.frames,
                ..SourceStats::default()
            },
            SourceHandle::Pcap(p) => {
                let s = p.reader.stats();
                SourceStats {
                    frames: s.frames,
                    parse_errors: s.skipped,
                    dropped: 0,
                }
            }
            SourceHandle::Udp(u) => u.stats(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uri_forms() {
        assert_eq!(
            "udp://127.0.0.1:6000".parse::<SourceUri>().unwrap(),
            SourceUri::Udp {
                addr: "127.0.0.1:6000".parse().unwrap()
            }
        );
        let s: SourceUri = "synth://idle?seed=42&mode=offline".parse().unwrap();
        assert!(matches!(
            s,
            SourceUri::Synth {
                seed: Some(42),
                mode: SynthMode::Offline,
                ..
            }
        ));
        assert_eq!(s.to_string().parse::<SourceUri>().unwrap(), s);
        let p: SourceUri = "pcap://dir/cap.pcap?rate=9".parse().unwrap();
        assert!(matches!(p, SourceUri::Pcap { rate_hz: Some(r), .. } if r == 9.0));
        for bad in [
            "ftp://x",
            "idle",
            "synth://",
            "synth://idle?mode=fast",
            "synth://idle?seed=x",
            "pcap://a?rate=-1",
            "udp://nope",
            "synth://idle?colour=red",
        ] {
            assert!(bad.parse::<SourceUri>().is_err(), "{bad}");
        }
    }
}
