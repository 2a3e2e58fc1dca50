//! Runs an external classifier as a child process: processed frames go to its
//! stdin as `F` lines, results come back on its stdout as `R` lines.

use std::io::{self, BufWriter, Read, Write};
use std::process::{Child, ChildStdin, Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, SyncSender, TryRecvError, TrySendError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use csiscope_core::lineproto::{format_frame_line, LineAssembler};
use csiscope_core::{ClassificationResult, ProcessedFrame};

#[derive(Debug, thiserror::Error)]
pub enum BridgeError {
    #[error("cannot spawn {cmd:?}: {source}")]
    SpawnFailed { cmd: String, source: io::Error },
    #[error("classifier stdin is closed")]
    BrokenPipe,
}

#[derive(Debug, Clone, Copy)]
pub struct BridgeOptions {
    /// Append phases after the amplitudes on every `F` line.
    pub include_phases: bool,
    /// Lines waiting for the writer thread.
    pub queue_depth: usize,
    /// Wait for room instead of dropping when the child falls behind.
    pub block_when_full: bool,
}

impl Default for BridgeOptions {
    fn default() -> Self {
        Self {
            include_phases: false,
            queue_depth: 256,
            block_when_full: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BridgeStats {
    pub frames_sent: u64,
    pub frames_dropped: u64,
    pub results_received: u64,
    pub malformed: u64,
    pub alive: bool,
}

enum Chunk {
    Data(Vec<u8>),
    Eof,
}

pub struct Bridge {
    child: Child,
    tx: Option<SyncSender<String>>,
    writer: Option<JoinHandle<()>>,
    writer_dead: Arc<AtomicBool>,
    rx: Receiver<Chunk>,
    reader: Option<JoinHandle<()>>,
    assembler: LineAssembler,
    opts: BridgeOptions,
    frames_sent: u64,
    frames_dropped: u64,
    results_received: u64,
    alive: bool,
    eof: bool,
    status: Option<ExitStatus>,
}

pub fn spawn_classifier(cmd: &str, args: &[String], opts: BridgeOptions) -> Result<Bridge, BridgeError> {
    let mut child = Command::new(cmd)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|source| BridgeError::SpawnFailed {
            cmd: cmd.into(),
            source,
        })?;
    let stdin = child.stdin.take().expect("stdin piped");
    let mut stdout = child.stdout.take().expect("stdout piped");

    let writer_dead = Arc::new(AtomicBool::new(false));
    let (tx, lines) = mpsc::sync_channel::<String>(opts.queue_depth.max(1));
    let writer = {
        let dead = writer_dead.clone();
        thread::Builder::new()
            .name("bridge-writer".into())
            .spawn(move || write_loop(stdin, lines, &dead))
            .map_err(|source| BridgeError::SpawnFailed {
                cmd: cmd.into(),
                source,
            })?
    };
    let (chunks_tx, rx) = mpsc::channel();
    let reader = thread::Builder::new()
        .name("bridge-reader".into())
        .spawn(move || {
            let mut buf = [0u8; 8192];
            loop {
                match stdout.read(&mut buf) {
                    Ok(0) => break,
                    Ok(n) => {
                        if chunks_tx.send(Chunk::Data(buf[..n].to_vec())).is_err() {
                            return;
                        }
                    }
                    Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                    Err(_) => break,
                }
            }
            let _ = chunks_tx.send(Chunk::Eof);
        })
        .map_err(|source| BridgeError::SpawnFailed {
            cmd: cmd.into(),
            source,
        })?;

    Ok(Bridge {
        child,
        tx: Some(tx),
        writer: Some(writer),
        writer_dead,
        rx,
        reader: Some(reader),
        assembler: LineAssembler::new(),
        opts,
        frames_sent: 0,
        frames_dropped: 0,
        results_received: 0,
        alive: true,
        eof: false,
        status: None,
    })
}

fn write_loop(stdin: ChildStdin, lines: Receiver<String>, dead: &AtomicBool) {
    let mut w = BufWriter::new(stdin);
    while let Ok(line) = lines.recv() {
        if w.write_all(line.as_bytes()).is_err() {
            dead.store(true, Ordering::Relaxed);
            return;
        }
        // Flush once the backlog is empty so lines are not held back.
        loop {
            match lines.try_recv() {
                Ok(more) => {
                    if w.write_all(more.as_bytes()).is_err() {
                        dead.store(true, Ordering::Relaxed);
                        return;
                    }
                }
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => {
                    let _ = w.flush();
                    return;
                }
            }
        }
        if w.flush().is_err() {
            dead.store(true, Ordering::Relaxed);
            return;
        }
    }
    let _ = w.flush();
}

impl Bridge {
    pub fn pid(&self) -> u32 {
        self.child.id()
    }

    pub fn is_alive(&mut self) -> bool {
        self.refresh();
        self.alive
    }

    pub fn exit_status(&self) -> Option<ExitStatus> {
        self.status
    }

    pub fn malformed(&self) -> u64 {
        self.assembler.malformed()
    }

    pub fn stats(&self) -> BridgeStats {
        BridgeStats {
            frames_sent: self.frames_sent,
            frames_dropped: self.frames_dropped,
            results_received: self.results_received,
            malformed: self.assembler.malformed(),
            alive: self.alive,
        }
    }

    fn refresh(&mut self) {
        if !self.alive {
            return;
        }
        if self.writer_dead.load(Ordering::Relaxed) {
            self.alive = false;
        }
        if let Ok(Some(status)) = self.child.try_wait() {
            self.status = Some(status);
            self.alive = false;
        }
    }

    /// Queues one `F` line. When the child falls behind the line is dropped
    /// and counted, unless the bridge was built to block.
    pub fn send_frame(&mut self, p: &ProcessedFrame) -> Result<(), BridgeError> {
        self.refresh();
        if !self.alive {
            return Err(BridgeError::BrokenPipe);
        }
        let tx = self.tx.clone().ok_or(BridgeError::BrokenPipe)?;
        let mut line = format_frame_line(p, self.opts.include_phases);
        loop {
            match tx.try_send(line) {
                Ok(()) => {
                    self.frames_sent += 1;
                    return Ok(());
                }
                Err(TrySendError::Full(l)) if self.opts.block_when_full => {
                    line = l;
                    thread::sleep(Duration::from_micros(200));
                    self.refresh();
                    if !self.alive {
                        return Err(BridgeError::BrokenPipe);
                    }
                }
                Err(TrySendError::Full(_)) => {
                    self.frames_dropped += 1;
                    return Ok(());
                }
                Err(TrySendError::Disconnected(_)) => {
                    self.alive = false;
                    return Err(BridgeError::BrokenPipe);
                }
            }
        }
    }

    /// Never blocks. Returns every result completed since the last call.
    pub fn poll_results(&mut self) -> Vec<ClassificationResult> {
        let mut out = Vec::new();
        loop {
            match self.rx.try_recv() {
                Ok(Chunk::Data(bytes)) => out.extend(self.assembler.push(&bytes)),
                Ok(Chunk::Eof) | Err(TryRecvError::Disconnected) => {
                    if !self.eof {
                        self.eof = true;
                        self.assembler.finish();
                    }
                    break;
                }
                Err(TryRecvError::Empty) => break,
            }
        }
        self.refresh();
        self.results_received += out.len() as u64;
        out
    }

    /// Closes the child's stdin and collects results until it exits or the
    /// timeout passes; a child still running then is killed.
    pub fn finish(&mut self, timeout: Duration) -> Vec<ClassificationResult> {
        // The writer drains its backlog, then closing stdin signals EOF.
        self.tx.take();
        let deadline = Instant::now() + timeout;
        let mut out = Vec::new();
        while !self.eof && Instant::now() < deadline {
            out.extend(self.poll_results());
            if !self.eof {
                thread::sleep(Duration::from_millis(1));
            }
        }
        self.kill();
        out.extend(self.poll_results());
        out
    }

    /// Kills and reaps the child. Safe to call more than once.
    pub fn kill(&mut self) {
        self.tx.take();
        if self.status.is_none() {
            let _ = self.child.kill();
            if let Ok(status) = self.child.wait() {
                self.status = Some(status);
            }
        }
        self.alive = false;
        // Not joined: a grandchild holding the pipes open must not wedge us.
        // Both threads end once the pipes close.
        self.writer.take();
        self.reader.take();
    }
}

impl Drop for Bridge {
    fn drop(&mut self) {
        self.kill();
    }
}
